#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include "seater/corpus.hpp"

using namespace seater;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name, const std::string& content) {
    path = (std::filesystem::temp_directory_path() / name).string();
    std::ofstream out(path);
    out << content;
  }
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_SUITE_BEGIN("corpus");

TEST_CASE("load parses tab-separated rows and derives the catalog size") {
  TempFile f("seater_load1.tsv", "0\t3\t10\n0\t1\t11\n");
  const LoadedInteractions got = load_interactions(f.path);
  REQUIRE(got.interactions.size() == 2);
  CHECK(got.n_items == 4);
  CHECK(got.interactions[0].item_id == 3);
  CHECK(got.interactions[1].timestamp == 11);
}

TEST_CASE("empty file loads as an empty corpus") {
  TempFile f("seater_load2.tsv", "");
  const LoadedInteractions got = load_interactions(f.path);
  CHECK(got.interactions.empty());
  CHECK(got.n_items == 0);
}

TEST_CASE("malformed field names the line") {
  TempFile f("seater_load3.tsv", "0\tx\t5\n");
  CHECK_THROWS_WITH_AS(load_interactions(f.path), doctest::Contains("line 1"), IoError);
}

TEST_CASE("comment lines are skipped") {
  TempFile f("seater_load4.tsv", "# header\n0\t1\t2\n");
  CHECK(load_interactions(f.path).interactions.size() == 1);
}

TEST_CASE("catalog hint rejects out-of-range items") {
  TempFile f("seater_load5.tsv", "0\t9\t1\n");
  CHECK_THROWS_AS(load_interactions(f.path, 5), ValidationError);
  CHECK(load_interactions(f.path, 10).n_items == 10);
}

TEST_CASE("missing file is an io error") {
  CHECK_THROWS_AS(load_interactions("/nonexistent/path.tsv"), IoError);
}

TEST_CASE("histories sort by timestamp then file order") {
  std::vector<Interaction> rows = {{0, 5, 11}, {0, 7, 10}, {0, 2, 10}};
  const HistoriesResult got = build_histories(rows, 1);
  REQUIRE(got.histories.size() == 1);
  // timestamp 10 rows keep file order (7 before 2), then timestamp 11
  CHECK(got.histories[0].items == std::vector<int>{7, 2, 5});
}

TEST_CASE("users below the history threshold are dropped and counted") {
  std::vector<Interaction> rows;
  for (int i = 0; i < 3; ++i) rows.push_back({1, i, i});
  for (int i = 0; i < 6; ++i) rows.push_back({2, i, i});
  const HistoriesResult got = build_histories(rows, 5);
  CHECK(got.histories.size() == 1);
  CHECK(got.histories[0].user_id == 2);
  CHECK(got.dropped_users == 1);
}

TEST_CASE("split produces the 8:1:1 partition") {
  std::vector<UserHistory> hs;
  for (int u = 0; u < 100; ++u) {
    UserHistory h;
    h.user_id = u;
    for (int i = 0; i < 10; ++i) h.items.push_back(i % 7);
    hs.push_back(h);
  }
  const DatasetSplit split = split_users(hs, 42);
  CHECK(split.train.size() == 80);
  CHECK(split.valid.size() == 10);
  CHECK(split.test.size() == 10);
}

TEST_CASE("eval users get the ceil(0.8 t) context cut") {
  std::vector<UserHistory> hs;
  for (int u = 0; u < 20; ++u) {
    UserHistory h;
    h.user_id = u;
    for (int i = 0; i < 10; ++i) h.items.push_back(i);
    hs.push_back(h);
  }
  const DatasetSplit split = split_users(hs, 7);
  REQUIRE(!split.test.empty());
  for (const auto& u : split.test) {
    CHECK(u.context.size() == 8);
    CHECK(u.targets.size() == 2);
    CHECK(u.context[0] == 0);
    CHECK(u.targets[1] == 9);
  }
}

TEST_CASE("short histories still get non-empty targets") {
  CHECK(context_length(2) == 1);
  CHECK(context_length(3) == 2);
  CHECK(context_length(4) == 3);
  CHECK(context_length(5) == 4);   // ceil(4.0)
  CHECK(context_length(6) == 5);   // ceil(4.8)
  CHECK(context_length(10) == 8);  // ceil(8.0)
  std::vector<UserHistory> hs;
  for (int u = 0; u < 12; ++u) {
    UserHistory h;
    h.user_id = u;
    for (int i = 0; i < 2 + u % 3; ++i) h.items.push_back(i);
    hs.push_back(h);
  }
  const DatasetSplit split = split_users(hs, 3);
  for (const auto& u : split.valid) CHECK(!u.targets.empty());
  for (const auto& u : split.test) CHECK(!u.targets.empty());
}

TEST_CASE("split is deterministic and a true partition") {
  std::vector<UserHistory> hs;
  for (int u = 0; u < 57; ++u) {
    UserHistory h;
    h.user_id = u * 3;
    for (int i = 0; i < 5 + u % 4; ++i) h.items.push_back(i);
    hs.push_back(h);
  }
  const DatasetSplit a = split_users(hs, 9);
  const DatasetSplit b = split_users(hs, 9);
  REQUIRE(a.train.size() == b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i)
    CHECK(a.train[i].user_id == b.train[i].user_id);

  std::set<std::int64_t> seen;
  for (const auto& h : a.train) seen.insert(h.user_id);
  for (const auto& u : a.valid) seen.insert(u.user_id);
  for (const auto& u : a.test) seen.insert(u.user_id);
  CHECK(seen.size() == hs.size());
  CHECK(a.train.size() + a.valid.size() + a.test.size() == hs.size());
  const long long expected_train = (8 * 57 + 5) / 10;
  CHECK(static_cast<long long>(a.train.size()) == expected_train);
}

TEST_CASE("split requires at least 10 users") {
  std::vector<UserHistory> hs(9);
  for (int u = 0; u < 9; ++u) {
    hs[static_cast<std::size_t>(u)].user_id = u;
    hs[static_cast<std::size_t>(u)].items = {1, 2, 3};
  }
  CHECK_THROWS_AS(split_users(hs, 1), ValidationError);
}

TEST_CASE("synthetic corpus follows its successor rule about 80% of the time") {
  const int n_items = 2;
  const auto rows = synthesize_corpus(600, n_items, 123);
  const auto succ = markov_successors(n_items, 123);
  CHECK(succ[0] == 1);
  CHECK(succ[1] == 0);
  long long follows = 0, steps = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].user_id != rows[i - 1].user_id) continue;
    ++steps;
    if (rows[i].item_id == succ[static_cast<std::size_t>(rows[i - 1].item_id)]) ++follows;
  }
  REQUIRE(steps >= 10000);
  const double freq = static_cast<double>(follows) / static_cast<double>(steps);
  CHECK(freq == doctest::Approx(0.8).epsilon(0.02));
}

TEST_CASE("synthetic corpus edge cases") {
  CHECK(synthesize_corpus(0, 5, 1).empty());
  CHECK_THROWS_AS(synthesize_corpus(1, 1, 1), ValidationError);
  const auto a = synthesize_corpus(10, 6, 5);
  const auto b = synthesize_corpus(10, 6, 5);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].user_id == b[i].user_id);
    CHECK(a[i].item_id == b[i].item_id);
    CHECK(a[i].timestamp == b[i].timestamp);
  }
}

TEST_CASE("write + reload round-trips the corpus exactly") {
  const auto rows = synthesize_corpus(5, 4, 9);
  const std::string path =
      (std::filesystem::temp_directory_path() / "seater_roundtrip.tsv").string();
  write_interactions(path, rows);
  const LoadedInteractions got = load_interactions(path);
  REQUIRE(got.interactions.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(got.interactions[i].user_id == rows[i].user_id);
    CHECK(got.interactions[i].item_id == rows[i].item_id);
    CHECK(got.interactions[i].timestamp == rows[i].timestamp);
  }
  std::remove(path.c_str());
}

TEST_SUITE_END();
