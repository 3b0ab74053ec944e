#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>
#include <vector>

#include "seater/inference.hpp"
#include "seater/oracles.hpp"

using namespace seater;

namespace {

IdentifierTree toy_tree(int n, int k, std::uint64_t seed) {
  return build_identifier_tree(random_embeddings(n, 4, seed), k, seed);
}

Model toy_model(const IdentifierTree& tree, int d, std::uint64_t seed) {
  Model m(ModelConfig::for_tree(tree, d, 1, 4, 0, 8, 0.0));
  m.init_params(seed);
  return m;
}

}  // namespace

TEST_SUITE_BEGIN("inference");

TEST_CASE("wide beams reproduce the exhaustive ranking exactly") {
  for (const int n : {8, 64}) {
    const IdentifierTree tree = toy_tree(n, 2, 17);
    Model m = toy_model(tree, 16, 91 + static_cast<std::uint64_t>(n));
    const std::vector<int> history = {1, 4, 2};
    const RetrievalResult beam = constrained_beam_search(m, tree, history, n, n);
    const auto oracle_rank = oracle::exhaustive_rank(m, tree, history);
    REQUIRE(beam.items.size() == static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      CHECK(beam.items[static_cast<std::size_t>(i)] == oracle_rank[static_cast<std::size_t>(i)].item);
      CHECK(beam.scores[static_cast<std::size_t>(i)] ==
            oracle_rank[static_cast<std::size_t>(i)].log_prob);
    }
    CHECK(oracle::probability_mass(oracle_rank) == doctest::Approx(1.0).epsilon(1e-5));
  }
}

TEST_CASE("probability mass is exactly preserved on padded trees too") {
  const IdentifierTree tree = toy_tree(11, 3, 23);  // remainders force padding
  Model m = toy_model(tree, 16, 7);
  const std::vector<int> history = {0, 5};
  const auto ranked = oracle::exhaustive_rank(m, tree, history);
  CHECK(oracle::probability_mass(ranked) == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("beam of one is the greedy argmax path") {
  const IdentifierTree tree = toy_tree(8, 2, 17);
  Model m = toy_model(tree, 16, 3);
  const std::vector<int> history = {2, 6};
  const RetrievalResult greedy = constrained_beam_search(m, tree, history, 1, 1);
  REQUIRE(greedy.items.size() == 1);

  // walk the tree greedily by hand
  ad::Tape tape(false);
  EncoderOutput enc = m.encode(tape, history);
  std::vector<int> prefix;
  while (static_cast<int>(prefix.size()) < tree.depth) {
    const std::vector<int> cands = tree.children_of_prefix(prefix);
    if (cands.size() == 1) {
      prefix.push_back(cands[0]);
      continue;
    }
    ad::Var dec = m.decode(tape, enc, prefix);
    const std::vector<double> p =
        m.step_distribution(tape, tape.row(dec, static_cast<int>(prefix.size())), cands);
    int best = 0;
    for (std::size_t i = 1; i < p.size(); ++i)
      if (p[i] > p[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
    prefix.push_back(cands[static_cast<std::size_t>(best)]);
  }
  CHECK(greedy.items[0] == tree.item_of(prefix));
}

TEST_CASE("expansion counter respects the b*k*l budget") {
  const IdentifierTree tree = toy_tree(64, 4, 9);
  REQUIRE(tree.depth == 3);
  Model m = toy_model(tree, 16, 5);
  const std::vector<int> history = {10, 20, 30};
  const RetrievalResult r = constrained_beam_search(m, tree, history, 8, 8);
  CHECK(r.expansions <= 8 * 4 * 3);
  CHECK(r.expansions > 0);
}

TEST_CASE("pass-through steps are not counted as scored expansions") {
  const IdentifierTree tree = toy_tree(5, 2, 6);  // padded tree
  REQUIRE(tree.depth == 3);
  Model m = toy_model(tree, 16, 5);
  const std::vector<int> history = {0, 1};
  const RetrievalResult r = constrained_beam_search(m, tree, history, 5, 5);
  // brute count of scored candidates: singleton sets are free
  long long expected = 0;
  std::vector<std::vector<int>> frontier = {{}};
  for (int step = 0; step < tree.depth; ++step) {
    std::vector<std::vector<int>> next;
    for (auto& p : frontier) {
      const auto cands = tree.children_of_prefix(p);
      if (cands.size() > 1) expected += static_cast<long long>(cands.size());
      for (int c : cands) {
        auto q = p;
        q.push_back(c);
        next.push_back(std::move(q));
      }
    }
    frontier = std::move(next);
  }
  CHECK(r.expansions == expected);
}

TEST_CASE("a full-width beam dominates every narrower beam") {
  // Beam search with intermediate pruning is not monotone in b step by step,
  // but the full-width beam finds the global optimum, so its top-1 bounds
  // every narrower run from above.
  const IdentifierTree tree = toy_tree(32, 2, 13);
  Model m = toy_model(tree, 16, 1);
  const std::vector<int> history = {3, 9, 27};
  const RetrievalResult full = constrained_beam_search(m, tree, history, 32, 1);
  for (const int b : {1, 2, 4, 8, 16}) {
    const RetrievalResult r = constrained_beam_search(m, tree, history, b, 1);
    CHECK(full.scores[0] >= r.scores[0]);
  }
  const auto oracle_rank = oracle::exhaustive_rank(m, tree, history);
  CHECK(full.scores[0] == oracle_rank[0].log_prob);
}

TEST_CASE("retrieval inputs are validated") {
  const IdentifierTree tree = toy_tree(8, 2, 17);
  Model m = toy_model(tree, 16, 3);
  const std::vector<int> history = {1};
  CHECK_THROWS_AS(constrained_beam_search(m, tree, history, 16, 9), ValidationError);  // n > N
  CHECK_THROWS_AS(constrained_beam_search(m, tree, std::vector<int>{}, 4, 2),
                  ValidationError);  // empty history
  CHECK_THROWS_AS(constrained_beam_search(m, tree, history, 2, 4), ValidationError);  // b < n
  const IdentifierTree other = toy_tree(16, 2, 2);
  CHECK_THROWS_AS(constrained_beam_search(m, other, history, 4, 2), ValidationError);
}

TEST_CASE("batch retrieval is deterministic per user") {
  const IdentifierTree tree = toy_tree(16, 4, 21);
  Model m = toy_model(tree, 16, 2);
  const std::vector<std::vector<int>> histories = {{1, 2, 3}, {1, 2, 3}, {9, 8}};
  const auto rs = retrieve_topn(m, tree, histories, 8, 4);
  REQUIRE(rs.size() == 3);
  CHECK(rs[0].items == rs[1].items);
  CHECK(rs[0].scores == rs[1].scores);
  for (const auto& r : rs) {
    CHECK(r.items.size() == 4);
    for (std::size_t i = 1; i < r.scores.size(); ++i) CHECK(r.scores[i] <= r.scores[i - 1]);
    std::set<int> distinct(r.items.begin(), r.items.end());
    CHECK(distinct.size() == r.items.size());
  }
}

TEST_CASE("results files round-trip") {
  const auto path = (std::filesystem::temp_directory_path() / "results_rt.jsonl").string();
  std::vector<RetrievalResult> rs(2);
  rs[0].items = {3, 1};
  rs[0].scores = {-0.1, -0.7};
  rs[1].items = {2};
  rs[1].scores = {-0.2};
  write_results_jsonl(path, {10, 11}, rs);
  const auto rows = read_results_jsonl(path);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].user_id == 10);
  CHECK(rows[0].items == std::vector<int>{3, 1});
  CHECK(rows[1].scores == std::vector<double>{-0.2});
  std::remove(path.c_str());
}

TEST_SUITE_END();
