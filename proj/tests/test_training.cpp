#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>
#include <vector>

#include "seater/training.hpp"

using namespace seater;

namespace {

IdentifierTree toy_tree(int n, int k, std::uint64_t seed) {
  return build_identifier_tree(random_embeddings(n, 4, seed), k, seed);
}

Model toy_model(const IdentifierTree& tree, int d, std::uint64_t seed, int max_hist = 8) {
  Model m(ModelConfig::for_tree(tree, d, 1, d >= 4 ? 4 : 1, 0, max_hist, 0.0));
  m.init_params(seed);
  return m;
}

std::vector<TrainingExample> toy_batch(const IdentifierTree& tree, int count,
                                       std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TrainingExample> out;
  for (int i = 0; i < count; ++i) {
    TrainingExample ex;
    const int len = 2 + static_cast<int>(rng.below(4));
    for (int j = 0; j < len; ++j)
      ex.context.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(tree.n_items))));
    ex.target = static_cast<int>(rng.below(static_cast<std::uint64_t>(tree.n_items)));
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace

TEST_SUITE_BEGIN("training");

TEST_CASE("sliding examples from one history") {
  UserHistory h;
  h.user_id = 0;
  h.items = {10, 11, 12, 13, 14, 15};
  const auto examples = make_examples({h}, 5, 50);
  REQUIRE(examples.size() == 2);
  CHECK(examples[0].context == std::vector<int>{10, 11, 12, 13});
  CHECK(examples[0].target == 14);
  CHECK(examples[1].context == std::vector<int>{10, 11, 12, 13, 14});
  CHECK(examples[1].target == 15);
  // deterministic order
  const auto again = make_examples({h}, 5, 50);
  CHECK(again[0].context == examples[0].context);
  // context truncation by max_history_len
  const auto truncated = make_examples({h}, 5, 3);
  CHECK(truncated[0].context == std::vector<int>{11, 12, 13});
  // per-user cap keeps the latest examples
  const auto capped = make_examples({h}, 5, 50, 1);
  REQUIRE(capped.size() == 1);
  CHECK(capped[0].target == 15);
}

TEST_CASE("generation loss is zero when every step is forced") {
  const IdentifierTree tree = toy_tree(1, 2, 1);
  Model m = toy_model(tree, 8, 1);
  std::vector<TrainingExample> batch = {{{0, 0}, 0}};
  CHECK(generation_loss(m, tree, batch) == 0.0);
}

TEST_CASE("uniform predictor hits the analytic entropy of the tree") {
  SUBCASE("k=2, depth 3") {
    const IdentifierTree tree = toy_tree(8, 2, 1);
    REQUIRE(tree.depth == 3);
    Model m = toy_model(tree, 8, 1);
    for (auto& v : m.params().value("embed").data) v = 0.0;
    std::vector<TrainingExample> batch = {{{1, 2}, 5}, {{3}, 0}};
    CHECK(generation_loss(m, tree, batch) ==
          doctest::Approx(3.0 * std::log(2.0)).epsilon(1e-9));
    CHECK(3.0 * std::log(2.0) == doctest::Approx(2.0794).epsilon(1e-4));
  }
  SUBCASE("k=4, depth 2") {
    const IdentifierTree tree = toy_tree(16, 4, 2);
    REQUIRE(tree.depth == 2);
    Model m = toy_model(tree, 8, 1);
    for (auto& v : m.params().value("embed").data) v = 0.0;
    std::vector<TrainingExample> batch = {{{1, 2, 3}, 9}};
    CHECK(generation_loss(m, tree, batch) ==
          doctest::Approx(2.0 * std::log(4.0)).epsilon(1e-9));
  }
}

TEST_CASE("alignment loss degenerate pool is exactly zero") {
  // two-item catalog: identifiers are bare leaves, the pool is {leaf, start}
  const IdentifierTree tree = toy_tree(2, 2, 3);
  Model m = toy_model(tree, 8, 1);
  std::vector<TrainingExample> batch = {{{0}, 0}};
  CHECK(alignment_loss(m, tree, batch, 1.0) == 0.0);
}

TEST_CASE("alignment loss matches hand-computed infoNCE values") {
  // N=4, k=2: item 0's identifier is [5, 0]; batch pool = {0, 4, 5} with
  // anchors 0 (positive 5, negative 4) and 5 (positive 4, no negatives).
  const IdentifierTree tree = toy_tree(4, 2, 2);
  REQUIRE(tree.identifier_of(0) == std::vector<int>{5, 0});
  Model m = toy_model(tree, 4, 1);
  Tensor& e = m.params().value("embed");
  for (auto& v : e.data) v = 0.0;

  SUBCASE("cos(pos)=1, cos(neg)=0 at tau=1 gives -log(e/(e+1))/2") {
    e.at(0, 0) = 1.0;             // anchor
    e.at(5, 0) = 2.0;             // parent, cos = 1
    e.at(4, 1) = 1.0;             // start as negative, cos = 0
    std::vector<TrainingExample> batch = {{{1}, 0}};
    const double per_anchor = std::log(1.0 + std::exp(-1.0));  // 0.313262
    CHECK(per_anchor == doctest::Approx(0.3133).epsilon(1e-3));
    // anchor 5 contributes exactly zero (its negative set is empty)
    CHECK(alignment_loss(m, tree, batch, 1.0) ==
          doctest::Approx(per_anchor / 2.0).epsilon(1e-9));
  }
  SUBCASE("small temperature with a clear parent gap drives the loss to zero") {
    e.at(0, 0) = 1.0;
    e.at(5, 0) = 2.0;                         // cos(anchor, parent) = 1
    e.at(4, 0) = 1.0;
    e.at(4, 1) = std::sqrt(3.0);              // cos(anchor, neg) = 0.5
    std::vector<TrainingExample> batch = {{{1}, 0}};
    CHECK(alignment_loss(m, tree, batch, 0.01) < 1e-6);
  }
}

TEST_CASE("alignment loss with no eligible anchor is an error") {
  const IdentifierTree tree = toy_tree(4, 2, 2);
  Model m = toy_model(tree, 4, 1);
  TrainConfig cfg;
  cfg.lambda_align = 1.0;
  ad::Tape tape(false);
  CHECK_THROWS_AS(batch_loss(tape, m, tree, std::vector<TrainingExample>{}, cfg),
                  ValidationError);
}

TEST_CASE("ranking negatives cover distinct shared-prefix lengths") {
  const IdentifierTree tree = toy_tree(8, 2, 1);
  REQUIRE(tree.depth == 3);
  const auto& target = tree.identifier_of(5);

  SUBCASE("q=2 gives one negative sharing one token and one sharing none") {
    Rng rng(4);
    const auto negs = sample_ranking_negatives(tree, target, 2, rng);
    REQUIRE(negs.size() == 2);
    std::set<int> lengths;
    for (const auto& n : negs) lengths.insert(n.shared_prefix);
    CHECK(lengths == std::set<int>{0, 1});
  }
  SUBCASE("q=4 shrinks to the two feasible lengths") {
    Rng rng(4);
    const auto negs = sample_ranking_negatives(tree, target, 4, rng);
    CHECK(negs.size() == 2);
  }
  SUBCASE("a thousand seeded draws always yield real items distinct from the target") {
    for (int round = 0; round < 1000; ++round) {
      Rng rng(static_cast<std::uint64_t>(round));
      const auto negs = sample_ranking_negatives(tree, target, 2, rng);
      for (const auto& n : negs) {
        const int item = tree.item_of(n.identifier);
        CHECK(item != 5);
        CHECK(item >= 0);
        CHECK(item < 8);
        // shared prefix length is exactly as labeled
        int shared = 0;
        while (shared < tree.depth &&
               n.identifier[static_cast<std::size_t>(shared)] ==
                   target[static_cast<std::size_t>(shared)])
          ++shared;
        CHECK(shared == n.shared_prefix);
      }
    }
  }
  SUBCASE("single-item catalogs cannot provide negatives") {
    const IdentifierTree lone = toy_tree(1, 2, 9);
    Rng rng(1);
    CHECK_THROWS_AS(sample_ranking_negatives(lone, lone.identifier_of(0), 1, rng),
                    ValidationError);
  }
}

TEST_CASE("ranking hinge arithmetic") {
  SUBCASE("q=4 builds exactly C(5,2)=10 pairs") {
    const std::vector<double> sims = {0.9, 0.5, 0.4, 0.3, 0.2};
    const std::vector<int> nums = {3, 2, 1, 0, -1};
    CHECK(ranking_hinge(sims, nums, 0.001).n_pairs == 10);
  }
  SUBCASE("well-separated similarities give zero loss") {
    const std::vector<double> sims = {0.9, 0.5, 0.1};
    const std::vector<int> nums = {3, 1, 0};
    CHECK(ranking_hinge(sims, nums, 0.001).loss == 0.0);
  }
  SUBCASE("the q=1 worked example") {
    const std::vector<double> sims = {0.6, 0.7};
    const std::vector<int> nums = {3, 0};
    const RankingHinge h = ranking_hinge(sims, nums, 0.001);
    CHECK(h.n_pairs == 1);
    CHECK(h.loss == doctest::Approx(0.103).epsilon(1e-9));
  }
  SUBCASE("presentation order does not change the loss") {
    const std::vector<double> sims = {0.31, 0.62, 0.45, 0.27};
    const std::vector<int> nums = {1, 3, 0, 2};
    const double base = ranking_hinge(sims, nums, 0.01).loss;
    const std::vector<double> sims2 = {0.27, 0.45, 0.62, 0.31};
    const std::vector<int> nums2 = {2, 0, 3, 1};
    CHECK(ranking_hinge(sims2, nums2, 0.01).loss == base);
  }
  SUBCASE("each pair demands the longer shared prefix to score higher") {
    // higher-num item scoring lower by less than the margin leaves residue
    const std::vector<double> sims = {0.5, 0.5};
    const std::vector<int> nums = {2, 0};
    CHECK(ranking_hinge(sims, nums, 0.001).loss == doctest::Approx(0.002));
  }
}

TEST_CASE("total loss reduces to the generation loss when both weights vanish") {
  const IdentifierTree tree = toy_tree(8, 2, 1);
  Model m = toy_model(tree, 8, 2);
  const auto batch = toy_batch(tree, 4, 7);
  TrainConfig cfg;
  cfg.lambda_align = 0.0;
  cfg.lambda_rank = 0.0;
  ad::Tape tape(false);
  LossBreakdown bd;
  batch_loss(tape, m, tree, batch, cfg, false, nullptr, nullptr, &bd);
  CHECK(bd.total == bd.gen);
  CHECK(bd.align == 0.0);
  CHECK(bd.rank == 0.0);
}

TEST_CASE("composite loss is finite on random init and logs its components") {
  const IdentifierTree tree = toy_tree(8, 2, 1);
  Model m = toy_model(tree, 8, 2);
  const auto batch = toy_batch(tree, 4, 7);
  TrainConfig cfg;
  cfg.rank_negatives = 2;
  Rng neg_rng(3);
  ad::Tape tape(false);
  LossBreakdown bd;
  batch_loss(tape, m, tree, batch, cfg, false, nullptr, &neg_rng, &bd);
  CHECK(std::isfinite(bd.total));
  CHECK(bd.gen > 0.0);
  CHECK(bd.align > 0.0);
  CHECK(bd.rank >= 0.0);
  CHECK(bd.total == doctest::Approx(bd.gen + cfg.lambda_align * bd.align +
                                    cfg.lambda_rank * bd.rank));
}

TEST_CASE("composite gradient matches finite differences") {
  const IdentifierTree tree = toy_tree(4, 2, 2);
  Model m(ModelConfig::for_tree(tree, 8, 1, 2, 0, 8, 0.0));
  m.init_params(5);
  TrainConfig cfg;
  cfg.rank_negatives = 1;  // q=1
  std::vector<TrainingExample> batch = {{{1, 2, 3}, 0}, {{0, 3}, 2}};
  const double err = ad::grad_check(
      [&](ad::Tape& tape) {
        Rng neg_rng(11);  // same negatives on every evaluation
        return batch_loss(tape, m, tree, batch, cfg, false, nullptr, &neg_rng);
      },
      m.params(), 1e-5, 40);
  CHECK(err < 1e-4);
}

TEST_CASE("one Adam step on a single example reduces its loss in 95+ of 100 trials") {
  const IdentifierTree tree = toy_tree(8, 2, 1);
  int improved = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Model m = toy_model(tree, 8, 1000 + static_cast<std::uint64_t>(trial));
    Rng ctx_rng(trial);
    std::vector<TrainingExample> one = {{{static_cast<int>(ctx_rng.below(8)),
                                          static_cast<int>(ctx_rng.below(8))},
                                         static_cast<int>(ctx_rng.below(8))}};
    TrainConfig cfg;
    cfg.rank_negatives = 1;
    auto eval = [&] {
      Rng neg_rng(55);
      ad::Tape tape(false);
      LossBreakdown bd;
      batch_loss(tape, m, tree, one, cfg, false, nullptr, &neg_rng, &bd);
      return bd.total;
    };
    const double before = eval();
    {
      Rng neg_rng(55);
      ad::Tape tape(true);
      ad::Var loss = batch_loss(tape, m, tree, one, cfg, false, nullptr, &neg_rng);
      m.params().zero_grad();
      tape.backward(loss);
    }
    m.params().adam_step(1e-3, 0.9, 0.999, 1e-8, 0.0);
    if (eval() < before) ++improved;
  }
  CHECK(improved >= 95);
}

TEST_CASE("a handful of examples can be memorized") {
  const IdentifierTree tree = toy_tree(8, 2, 1);
  Model m = toy_model(tree, 16, 4);
  // 32 fixed examples with pairwise-distinct contexts
  std::vector<TrainingExample> batch;
  for (int i = 0; i < 32; ++i) {
    TrainingExample ex;
    ex.context = {i % 8, (i / 8) % 8, (i * 3 + 1) % 8};
    ex.target = (i * 5 + 2) % 8;
    batch.push_back(std::move(ex));
  }
  TrainConfig cfg;
  cfg.lambda_align = 0.0;
  cfg.lambda_rank = 0.0;
  double last = 0.0;
  for (int step = 0; step < 300; ++step) {
    ad::Tape tape(true);
    LossBreakdown bd;
    ad::Var loss = batch_loss(tape, m, tree, batch, cfg, false, nullptr, nullptr, &bd);
    m.params().zero_grad();
    tape.backward(loss);
    m.params().adam_step(0.01, 0.9, 0.999, 1e-8, 0.0);
    last = bd.gen;
    if (last < 0.01) break;
  }
  CHECK(last < 0.01);
}

TEST_CASE("early stopping counts evaluations past the best") {
  EarlyStopper stop(2);
  CHECK_FALSE(stop.observe(0.5));   // best
  CHECK_FALSE(stop.observe(0.4));   // 1 past best
  CHECK_FALSE(stop.observe(0.3));   // 2 past best
  CHECK(stop.observe(0.2));         // 3 past best -> stop
  CHECK(stop.best() == doctest::Approx(0.5));
}

TEST_CASE("improvement resets the patience counter") {
  EarlyStopper stop(1);
  CHECK_FALSE(stop.observe(0.5));
  CHECK_FALSE(stop.observe(0.4));
  CHECK_FALSE(stop.observe(0.6));  // new best
  CHECK_FALSE(stop.observe(0.5));
  CHECK(stop.observe(0.4));
}

TEST_CASE("resuming from saved state reproduces an uninterrupted run") {
  const auto rows = synthesize_corpus(40, 12, 3);
  const HistoriesResult hist = build_histories(rows, 5);
  const DatasetSplit split = split_users(hist.histories, 5);
  const IdentifierTree tree = toy_tree(12, 2, 5);
  const auto state_path =
      (std::filesystem::temp_directory_path() / "seater_resume_state.bin").string();

  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.max_epochs = 4;
  cfg.patience = 10;
  cfg.seed = 7;
  cfg.rank_negatives = 2;
  cfg.valid_beam = 8;

  // uninterrupted 4-epoch run
  Model full(ModelConfig::for_tree(tree, 8, 1, 2, 0, 10, 0.1));
  full.init_params(7);
  const TrainResult ref = train(full, tree, split, cfg, 5, TrainPaths{});

  // two epochs, save state, then resume for the remaining two
  Model part(ModelConfig::for_tree(tree, 8, 1, 2, 0, 10, 0.1));
  part.init_params(7);
  TrainConfig half = cfg;
  half.max_epochs = 2;
  TrainPaths save_paths;
  save_paths.state = state_path;
  train(part, tree, split, half, 5, save_paths);

  Model resumed(ModelConfig::for_tree(tree, 8, 1, 2, 0, 10, 0.1));
  resumed.init_params(7);
  TrainPaths resume_paths;
  resume_paths.resume_from = state_path;
  const TrainResult cont = train(resumed, tree, split, cfg, 5, resume_paths);

  REQUIRE(ref.log.size() == 4);
  REQUIRE(cont.log.size() == 2);  // epochs 2 and 3 only
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(cont.log[i].epoch == ref.log[i + 2].epoch);
    CHECK(cont.log[i].loss_total == ref.log[i + 2].loss_total);
    CHECK(cont.log[i].valid_recall_at_50 == ref.log[i + 2].valid_recall_at_50);
  }
  CHECK(cont.best_epoch == ref.best_epoch);
  // final (best) parameters agree bitwise
  for (const auto& name : full.params().names())
    CHECK(full.params().value(name).data == resumed.params().value(name).data);
  std::remove(state_path.c_str());
}

TEST_CASE("tiny training runs are deterministic and early-stop") {
  const auto rows = synthesize_corpus(40, 12, 3);
  const HistoriesResult hist = build_histories(rows, 5);
  const DatasetSplit split = split_users(hist.histories, 5);
  const IdentifierTree tree = toy_tree(12, 2, 5);

  auto run = [&] {
    Model m(ModelConfig::for_tree(tree, 8, 1, 2, 0, 10, 0.1));
    m.init_params(7);
    TrainConfig cfg;
    cfg.batch_size = 8;
    cfg.max_epochs = 4;
    cfg.patience = 1;
    cfg.seed = 7;
    cfg.rank_negatives = 2;
    cfg.valid_beam = 8;
    return train(m, tree, split, cfg, 5, TrainPaths{});
  };
  const TrainResult a = run();
  const TrainResult b = run();
  CHECK(a.best_epoch == b.best_epoch);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].loss_total == b.log[i].loss_total);
    CHECK(a.log[i].valid_recall_at_50 == b.log[i].valid_recall_at_50);
  }
}

TEST_SUITE_END();
