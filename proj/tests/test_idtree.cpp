#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "seater/idtree.hpp"
#include "seater/oracles.hpp"

using namespace seater;

TEST_SUITE_BEGIN("idtree");

TEST_CASE("constrained kmeans recovers two well-separated pairs") {
  // two tight pairs far apart
  const std::vector<double> pts = {0.0, 0.0, 0.1, 0.0, 10.0, 10.0, 10.1, 10.0};
  const std::vector<int> labels = constrained_kmeans(pts, 4, 2, 2, 2, 2, /*seed=*/3);
  CHECK(labels[0] == labels[1]);
  CHECK(labels[2] == labels[3]);
  CHECK(labels[0] != labels[2]);
  // matches the exhaustive balanced-partition oracle
  const auto best = oracle::brute_balanced_partition(pts, 4, 2);
  const double got_sse = oracle::partition_sse(pts, 4, 2, labels, 2);
  CHECK(got_sse == doctest::Approx(best.sse).epsilon(1e-12));
}

TEST_CASE("n == k forces singletons") {
  const std::vector<double> pts = {0, 0, 1, 1, 2, 2};
  const std::vector<int> labels = constrained_kmeans(pts, 3, 2, 3, 1, 1, 5);
  std::set<int> distinct(labels.begin(), labels.end());
  CHECK(distinct.size() == 3);
}

TEST_CASE("n=10 k=3 gives sizes {4,3,3}") {
  std::vector<double> pts;
  Rng rng(8);
  for (int i = 0; i < 20; ++i) pts.push_back(rng.gaussian());
  const std::vector<int> labels = constrained_kmeans(pts, 10, 2, 3, 3, 4, 4);
  std::vector<int> counts(3, 0);
  for (int l : labels) ++counts[static_cast<std::size_t>(l)];
  std::sort(counts.begin(), counts.end());
  CHECK(counts == std::vector<int>{3, 3, 4});
}

TEST_CASE("constrained kmeans rejects infeasible bounds") {
  const std::vector<double> pts = {0, 0, 1, 1};
  CHECK_THROWS_AS(constrained_kmeans(pts, 2, 2, 3, 1, 1, 1), ValidationError);
  CHECK_THROWS_AS(constrained_kmeans(pts, 2, 2, 2, 2, 2, 1), ValidationError);  // k > n
}

TEST_CASE("constrained kmeans is deterministic per seed") {
  std::vector<double> pts;
  Rng rng(14);
  for (int i = 0; i < 60; ++i) pts.push_back(rng.gaussian());
  const auto a = constrained_kmeans(pts, 20, 3, 4, 5, 5, 77);
  const auto b = constrained_kmeans(pts, 20, 3, 4, 5, 5, 77);
  CHECK(a == b);
}

TEST_CASE("toy catalog of 8 items with k=2 matches the reference layout") {
  const ItemEmbeddingMatrix emb = random_embeddings(8, 4, 1);
  const IdentifierTree tree = build_identifier_tree(emb, 2, 1);
  CHECK(tree.depth == 3);
  CHECK(tree.n_tokens == 15);                       // 8 leaves + start + 6 internal
  CHECK(tree.n_tokens - tree.n_items == 7);         // non-leaf rows incl. the start/root
  CHECK(tree.start_token() == 8);
  for (int item = 0; item < 8; ++item) {
    const auto& path = tree.identifier_of(item);
    REQUIRE(path.size() == 3);
    CHECK(path[0] > 8);   // level-1 internal token
    CHECK(path[1] > 8);   // level-2 internal token
    CHECK(path[2] == item);
  }
  tree.check_balance();
}

TEST_CASE("single-item catalog degenerates to [leaf] with two tokens") {
  const ItemEmbeddingMatrix emb = random_embeddings(1, 3, 2);
  const IdentifierTree tree = build_identifier_tree(emb, 4, 9);
  CHECK(tree.depth == 1);
  CHECK(tree.n_tokens == 2);  // leaf + start
  CHECK(tree.identifier_of(0) == std::vector<int>{0});
}

TEST_CASE("perfect binary tree of 16 items has 15 non-leaf tokens") {
  const ItemEmbeddingMatrix emb = random_embeddings(16, 4, 3);
  const IdentifierTree tree = build_identifier_tree(emb, 2, 3);
  CHECK(tree.depth == 4);
  // non-leaf count including the root/start is (N-1)/(k-1)
  CHECK(tree.n_tokens - tree.n_items == (16 - 1) / (2 - 1));
}

TEST_CASE("identifier lookups round-trip for every item") {
  const ItemEmbeddingMatrix emb = random_embeddings(23, 5, 4);
  const IdentifierTree tree = build_identifier_tree(emb, 3, 4);
  for (int item = 0; item < 23; ++item) {
    const auto& id = tree.identifier_of(item);
    CHECK(tree.item_of(id) == item);
    CHECK(id.back() == item);
  }
  CHECK_THROWS_AS(tree.identifier_of(23), ValidationError);
}

TEST_CASE("tampered identifiers are rejected") {
  const ItemEmbeddingMatrix emb = random_embeddings(8, 4, 1);
  const IdentifierTree tree = build_identifier_tree(emb, 2, 1);
  std::vector<int> id = tree.identifier_of(5);
  id[1] = id[1] == 9 ? 10 : 9;  // swap to a non-edge internal token
  CHECK_THROWS_AS(tree.item_of(id), ValidationError);
}

TEST_CASE("padded paths resolve to the same item as their leaf") {
  // 5 items, k=2: the {3,2} split leaves the 2-item subtree one level
  // shallower, so its identifiers get pass-through padding
  const ItemEmbeddingMatrix emb = random_embeddings(5, 4, 6);
  const IdentifierTree tree = build_identifier_tree(emb, 2, 6);
  CHECK(tree.depth == 3);
  bool saw_padding = false;
  for (int item = 0; item < 5; ++item) {
    const auto& id = tree.identifier_of(item);
    if (id.size() >= 2 && id[id.size() - 2] == id.back()) saw_padding = true;
    CHECK(tree.item_of(id) == item);
  }
  CHECK(saw_padding);
}

TEST_CASE("children_of_prefix walks the tree") {
  const ItemEmbeddingMatrix emb = random_embeddings(8, 4, 1);
  const IdentifierTree tree = build_identifier_tree(emb, 2, 1);
  const std::vector<int> root_kids = tree.children_of_prefix({});
  CHECK(root_kids.size() == 2);
  CHECK(std::is_sorted(root_kids.begin(), root_kids.end()));

  const auto& id = tree.identifier_of(3);
  CHECK(tree.children_of_prefix(id).empty());  // complete identifier

  std::vector<int> bad = {root_kids[0], root_kids[0]};
  CHECK_THROWS_AS(tree.children_of_prefix(bad), ValidationError);
}

TEST_CASE("pass-through positions return the leaf as sole child") {
  const ItemEmbeddingMatrix emb = random_embeddings(5, 4, 6);
  const IdentifierTree tree = build_identifier_tree(emb, 2, 6);
  for (int item = 0; item < 5; ++item) {
    const auto& id = tree.identifier_of(item);
    for (std::size_t i = 1; i < id.size(); ++i) {
      if (id[i] != id[i - 1]) continue;
      const std::span<const int> prefix(id.data(), i);
      CHECK(tree.children_of_prefix(prefix) == std::vector<int>{id.back()});
    }
  }
}

TEST_CASE("serialize round-trips field by field") {
  const ItemEmbeddingMatrix emb = random_embeddings(8, 4, 1);
  const IdentifierTree tree = build_identifier_tree(emb, 2, 1);
  const auto path = (std::filesystem::temp_directory_path() / "tree_rt.json").string();
  tree.save(path);
  const IdentifierTree got = IdentifierTree::load(path);
  CHECK(got.k == tree.k);
  CHECK(got.depth == tree.depth);
  CHECK(got.n_items == tree.n_items);
  CHECK(got.n_tokens == tree.n_tokens);
  CHECK(got.parent == tree.parent);
  CHECK(got.item_paths == tree.item_paths);
  CHECK(got.children == tree.children);
  std::remove(path.c_str());
}

TEST_CASE("loading rejects truncated and mislabeled files") {
  const auto tmp = std::filesystem::temp_directory_path();
  {
    std::ofstream out(tmp / "tree_trunc.json");
    out << "{\"format\": \"seater-tree/1\", \"k\": 2,";
  }
  CHECK_THROWS_AS(IdentifierTree::load((tmp / "tree_trunc.json").string()), IoError);
  {
    std::ofstream out(tmp / "tree_magic.json");
    out << "{\"format\": \"other/9\"}";
  }
  CHECK_THROWS_WITH_AS(IdentifierTree::load((tmp / "tree_magic.json").string()),
                       doctest::Contains("format"), IoError);
  std::remove((tmp / "tree_trunc.json").string().c_str());
  std::remove((tmp / "tree_magic.json").string().c_str());
}

TEST_CASE("random builds satisfy every structural invariant") {
  Rng seeds(99);
  for (int round = 0; round < 10; ++round) {
    const int n = 2 + static_cast<int>(seeds.below(120));
    const int k = 2 + static_cast<int>(seeds.below(5));
    const ItemEmbeddingMatrix emb = random_embeddings(n, 4, seeds.next_u64());
    const IdentifierTree tree = build_identifier_tree(emb, k, seeds.next_u64());
    tree.validate();
    tree.check_balance();
    // depth bound from the balanced recursion
    const int bound =
        static_cast<int>(std::ceil(std::log(static_cast<double>(n)) /
                                   std::log(static_cast<double>(k)))) + 1;
    CHECK(tree.depth <= std::max(1, bound));
    // bijection leaf -> item
    for (int item = 0; item < n; ++item) CHECK(tree.item_of(tree.identifier_of(item)) == item);
  }
}

TEST_CASE("unbalanced mode still builds a sound, equal-length tree") {
  // strongly skewed embeddings: one dense blob plus a few outliers
  ItemEmbeddingMatrix emb = random_embeddings(40, 3, 5);
  for (int i = 0; i < 34; ++i)
    for (int j = 0; j < 3; ++j) emb.at(i, j) = 0.01 * emb.at(i, j);
  for (int i = 34; i < 40; ++i)
    for (int j = 0; j < 3; ++j) emb.at(i, j) = 50.0 + emb.at(i, j) * (i - 30);
  const IdentifierTree tree = build_identifier_tree(emb, 4, 5, TreeMode::kUnbalanced);
  tree.validate();
  for (int item = 0; item < 40; ++item)
    CHECK(tree.identifier_of(item).size() == static_cast<std::size_t>(tree.depth));
}

TEST_CASE("builder rejects bad arguments") {
  const ItemEmbeddingMatrix emb = random_embeddings(4, 2, 1);
  CHECK_THROWS_AS(build_identifier_tree(emb, 1, 1), ValidationError);
  ItemEmbeddingMatrix empty;
  CHECK_THROWS_AS(build_identifier_tree(empty, 2, 1), ValidationError);
}

TEST_SUITE_END();
