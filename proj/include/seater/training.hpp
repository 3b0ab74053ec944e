#pragma once

// Multi-task training: teacher-forced generation loss over constrained
// softmax steps, parent-alignment infoNCE over the batch token pool, and a
// triplet ranking loss over negatives sampled at distinct shared-prefix
// lengths. AdamW-style optimizer (decoupled weight decay), early stopping on
// validation Recall@50.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "seater/autodiff.hpp"
#include "seater/corpus.hpp"
#include "seater/errors.hpp"
#include "seater/idtree.hpp"
#include "seater/inference.hpp"
#include "seater/metrics.hpp"
#include "seater/model.hpp"
#include "seater/rng.hpp"

namespace seater {

struct TrainConfig {
  double lambda_align = 0.05;
  double lambda_rank = 0.05;
  double tau = 0.07;        // infoNCE temperature
  int rank_negatives = 4;   // q
  double margin_beta = 0.001;
  double l2_weight = 1e-6;  // decoupled weight decay
  double lr = 0.001;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int batch_size = 32;
  int max_epochs = 50;
  int patience = 5;
  std::uint64_t seed = 1;
  int valid_beam = 50;            // validation metric is Recall@valid_beam
  int max_examples_per_user = 0;  // 0 = keep all sliding examples

  void validate() const {
    if (lambda_align < 0.0 || lambda_rank < 0.0)
      throw ValidationError("train config: loss weights must be >= 0");
    if (tau <= 0.0) throw ValidationError("train config: tau must be > 0");
    if (rank_negatives < 1) throw ValidationError("train config: q must be >= 1");
    if (margin_beta <= 0.0) throw ValidationError("train config: margin beta must be > 0");
    if (lr <= 0.0 || batch_size < 1 || max_epochs < 1 || patience < 0 || valid_beam < 1)
      throw ValidationError("train config: bad optimizer settings");
  }
};

struct TrainingExample {
  std::vector<int> context;
  int target = 0;
};

// Sliding next-item examples: context = items[0..j), target = items[j], for
// j from min_history_len-1 to t-1. Contexts keep at most max_history_len
// most recent items. max_per_user > 0 keeps only that many latest examples.
inline std::vector<TrainingExample> make_examples(const std::vector<UserHistory>& histories,
                                                  int min_history_len, int max_history_len,
                                                  int max_per_user = 0) {
  std::vector<TrainingExample> out;
  for (const auto& h : histories) {
    const int t = static_cast<int>(h.items.size());
    const int first_j = std::max(1, min_history_len - 1);
    std::vector<TrainingExample> per_user;
    for (int j = first_j; j < t; ++j) {
      TrainingExample ex;
      const int ctx_begin = std::max(0, j - max_history_len);
      ex.context.assign(h.items.begin() + ctx_begin, h.items.begin() + j);
      ex.target = h.items[static_cast<std::size_t>(j)];
      per_user.push_back(std::move(ex));
    }
    if (max_per_user > 0 && static_cast<int>(per_user.size()) > max_per_user)
      per_user.erase(per_user.begin(), per_user.end() - max_per_user);
    for (auto& ex : per_user) out.push_back(std::move(ex));
  }
  return out;
}

struct NegativeSample {
  std::vector<int> identifier;
  int shared_prefix = 0;  // leading tokens in common with the target identifier
};

// Samples negatives at distinct shared-prefix lengths: pick p without
// replacement from the feasible lengths in {0..l-2} (a length is feasible
// when the prefix node has at least two children), branch to a different
// child at position p, then descend uniformly to a leaf. Shrinks the set
// when fewer feasible lengths exist than q.
inline std::vector<NegativeSample> sample_ranking_negatives(const IdentifierTree& tree,
                                                            const std::vector<int>& target_path,
                                                            int q, Rng& rng) {
  if (q < 1) throw ValidationError("sample_ranking_negatives: q must be >= 1");
  const int depth = tree.depth;
  std::vector<int> feasible;
  for (int p = 0; p + 2 <= depth; ++p) {
    const std::span<const int> prefix(target_path.data(), static_cast<std::size_t>(p));
    if (tree.children_of_prefix(prefix).size() >= 2) feasible.push_back(p);
  }
  if (feasible.empty())
    throw ValidationError("sample_ranking_negatives: no identifier shares a divergent prefix "
                          "(single-item catalog)");
  const int take = std::min<int>(q, static_cast<int>(feasible.size()));
  for (int i = 0; i < take; ++i) {  // partial Fisher-Yates
    const int j = i + static_cast<int>(rng.below(static_cast<std::uint64_t>(feasible.size() - i)));
    std::swap(feasible[static_cast<std::size_t>(i)], feasible[static_cast<std::size_t>(j)]);
  }

  std::vector<NegativeSample> out;
  for (int i = 0; i < take; ++i) {
    const int p = feasible[static_cast<std::size_t>(i)];
    NegativeSample neg;
    neg.shared_prefix = p;
    neg.identifier.assign(target_path.begin(), target_path.begin() + p);
    const std::vector<int> cands = tree.children_of_prefix(neg.identifier);
    std::vector<int> others;
    for (int c : cands)
      if (c != target_path[static_cast<std::size_t>(p)]) others.push_back(c);
    neg.identifier.push_back(others[rng.below(others.size())]);
    while (static_cast<int>(neg.identifier.size()) < depth) {
      const std::vector<int> next = tree.children_of_prefix(neg.identifier);
      neg.identifier.push_back(next.size() == 1 ? next[0]
                                                : next[rng.below(next.size())]);
    }
    out.push_back(std::move(neg));
  }
  return out;
}

struct RankingHinge {
  double loss = 0.0;
  int n_pairs = 0;
};

// Pure pair logic behind the ranking loss: for every unordered pair, the
// identifier with more shared leading tokens must score higher by an
// adaptive margin beta * (num_hi - num_lo). Identifiers are canonicalized by
// descending num so the result is invariant to presentation order.
inline RankingHinge ranking_hinge(std::span<const double> sims, std::span<const int> nums,
                                  double beta) {
  if (sims.size() != nums.size()) throw ValidationError("ranking_hinge: size mismatch");
  const int n = static_cast<int>(sims.size());
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (nums[static_cast<std::size_t>(a)] != nums[static_cast<std::size_t>(b)])
      return nums[static_cast<std::size_t>(a)] > nums[static_cast<std::size_t>(b)];
    return a < b;
  });
  RankingHinge out;
  for (int hi = 0; hi < n; ++hi) {
    for (int lo = hi + 1; lo < n; ++lo) {
      const int i_hi = order[static_cast<std::size_t>(hi)];
      const int i_lo = order[static_cast<std::size_t>(lo)];
      const double margin = beta * (nums[static_cast<std::size_t>(i_hi)] -
                                    nums[static_cast<std::size_t>(i_lo)]);
      out.loss += std::max(0.0, sims[static_cast<std::size_t>(i_lo)] -
                                    sims[static_cast<std::size_t>(i_hi)] + margin);
      ++out.n_pairs;
    }
  }
  return out;
}

struct LossBreakdown {
  double gen = 0.0;
  double align = 0.0;
  double rank = 0.0;
  double total = 0.0;
};

// Builds the multi-task batch loss on the tape. Generation loss is the mean
// over examples of the summed negative step log-probabilities; singleton
// candidate steps (pass-through padding) contribute exactly zero and are
// skipped. With both weights at zero the result is bitwise the generation
// loss alone.
inline ad::Var batch_loss(ad::Tape& tape, Model& model, const IdentifierTree& tree,
                          std::span<const TrainingExample> batch, const TrainConfig& cfg,
                          bool training = false, Rng* drop_rng = nullptr, Rng* neg_rng = nullptr,
                          LossBreakdown* breakdown = nullptr) {
  if (batch.empty()) throw ValidationError("batch_loss: empty batch");
  check_model_tree(model, tree);
  const bool want_rank = cfg.lambda_rank > 0.0;
  const bool want_align = cfg.lambda_align > 0.0;

  std::vector<ad::Var> per_example_logprob;
  std::vector<ad::Var> per_example_rank;
  Rng fallback_rng(derive_seed(cfg.seed, 0xDEADULL));
  Rng& nrng = neg_rng ? *neg_rng : fallback_rng;

  for (const TrainingExample& ex : batch) {
    EncoderOutput enc = model.encode(tape, ex.context, training, drop_rng);
    const std::vector<int>& path = tree.identifier_of(ex.target);
    const std::vector<int> teacher_prefix(path.begin(), path.end() - 1);
    ad::Var dec = model.decode(tape, enc, teacher_prefix, training, drop_rng);

    std::vector<ad::Var> step_logps;
    std::vector<int> prefix;
    for (int i = 0; i < tree.depth; ++i) {
      const std::vector<int> cands = tree.children_of_prefix(prefix);
      if (cands.size() > 1) {
        ad::Var logp = tape.log_softmax(
            model.step_logits(tape, tape.row(dec, i), cands));
        const auto it = std::find(cands.begin(), cands.end(), path[static_cast<std::size_t>(i)]);
        step_logps.push_back(tape.pick(logp, static_cast<int>(it - cands.begin())));
      }
      prefix.push_back(path[static_cast<std::size_t>(i)]);
    }
    per_example_logprob.push_back(step_logps.empty() ? tape.input(Tensor::scalar(0.0))
                                                     : tape.add_many(step_logps));

    if (want_rank) {
      const std::vector<NegativeSample> negs =
          sample_ranking_negatives(tree, path, cfg.rank_negatives, nrng);
      ad::Var z_x = model.pooled_encoder(tape, enc);
      std::vector<ad::Var> sims;
      std::vector<int> nums;
      sims.push_back(model.pair_similarity(tape, z_x, model.pooled_decoder(tape, dec)));
      nums.push_back(tree.depth);
      for (const NegativeSample& neg : negs) {
        const std::vector<int> neg_prefix(neg.identifier.begin(), neg.identifier.end() - 1);
        ad::Var neg_dec = model.decode(tape, enc, neg_prefix, training, drop_rng);
        sims.push_back(model.pair_similarity(tape, z_x, model.pooled_decoder(tape, neg_dec)));
        nums.push_back(neg.shared_prefix);
      }
      // canonical pair order: descending num
      std::vector<int> order(sims.size());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
      std::sort(order.begin(), order.end(), [&](int a, int b) {
        return nums[static_cast<std::size_t>(a)] != nums[static_cast<std::size_t>(b)]
                   ? nums[static_cast<std::size_t>(a)] > nums[static_cast<std::size_t>(b)]
                   : a < b;
      });
      std::vector<ad::Var> terms;
      for (std::size_t hi = 0; hi < order.size(); ++hi) {
        for (std::size_t lo = hi + 1; lo < order.size(); ++lo) {
          const int i_hi = order[hi], i_lo = order[lo];
          const double margin = cfg.margin_beta * (nums[static_cast<std::size_t>(i_hi)] -
                                                   nums[static_cast<std::size_t>(i_lo)]);
          ad::Var diff = tape.add(sims[static_cast<std::size_t>(i_lo)],
                                  tape.scale(sims[static_cast<std::size_t>(i_hi)], -1.0));
          terms.push_back(tape.relu(tape.add(diff, tape.input(Tensor::scalar(margin)))));
        }
      }
      per_example_rank.push_back(tape.add_many(terms));
    }
  }

  const double inv_b = 1.0 / static_cast<double>(batch.size());
  ad::Var loss = tape.scale(tape.add_many(per_example_logprob), -inv_b);
  const double gen_value = tape.value(loss).scalar_value();
  double align_value = 0.0, rank_value = 0.0;

  if (want_align) {
    std::set<int> pool;
    for (const TrainingExample& ex : batch)
      for (int tok : tree.identifier_of(ex.target)) {
        pool.insert(tok);
        pool.insert(tree.parent[static_cast<std::size_t>(tok)]);
      }
    ad::Var embed = tape.param(model.params(), "embed");
    std::vector<ad::Var> anchor_losses;
    for (int anchor : pool) {
      if (anchor == tree.start_token()) continue;
      const int parent = tree.parent[static_cast<std::size_t>(anchor)];
      if (!pool.count(parent)) continue;
      std::set<int> excluded = {anchor, parent};
      if (!tree.is_leaf(anchor))
        for (int c : tree.children[static_cast<std::size_t>(anchor)]) excluded.insert(c);
      ad::Var e_anchor = tape.row(tape.embedding_rows(embed, {anchor}), 0);
      std::vector<ad::Var> logits;
      logits.push_back(tape.scale(
          tape.cosine(e_anchor, tape.row(tape.embedding_rows(embed, {parent}), 0)), 1.0 / cfg.tau));
      for (int other : pool) {
        if (excluded.count(other)) continue;
        logits.push_back(tape.scale(
            tape.cosine(e_anchor, tape.row(tape.embedding_rows(embed, {other}), 0)),
            1.0 / cfg.tau));
      }
      // -log softmax[positive]; a lone positive gives exactly zero
      anchor_losses.push_back(
          tape.scale(tape.pick(tape.log_softmax(tape.stack(logits)), 0), -1.0));
    }
    if (anchor_losses.empty()) throw ValidationError("alignment loss: batch has no eligible anchor");
    ad::Var align = tape.scale(tape.add_many(anchor_losses),
                               1.0 / static_cast<double>(anchor_losses.size()));
    align_value = tape.value(align).scalar_value();
    loss = tape.add(loss, tape.scale(align, cfg.lambda_align));
  }

  if (want_rank) {
    ad::Var rank = tape.scale(tape.add_many(per_example_rank), inv_b);
    rank_value = tape.value(rank).scalar_value();
    loss = tape.add(loss, tape.scale(rank, cfg.lambda_rank));
  }

  if (breakdown) {
    breakdown->gen = gen_value;
    breakdown->align = align_value;
    breakdown->rank = rank_value;
    breakdown->total = tape.value(loss).scalar_value();
  }
  return loss;
}

// Standalone loss entry points (mainly exercised by tests).

inline double generation_loss(Model& model, const IdentifierTree& tree,
                              std::span<const TrainingExample> batch) {
  TrainConfig cfg;
  cfg.lambda_align = 0.0;
  cfg.lambda_rank = 0.0;
  ad::Tape tape(false);
  LossBreakdown b;
  batch_loss(tape, model, tree, batch, cfg, false, nullptr, nullptr, &b);
  return b.gen;
}

inline double alignment_loss(Model& model, const IdentifierTree& tree,
                             std::span<const TrainingExample> batch, double tau) {
  TrainConfig cfg;
  cfg.lambda_align = 1.0;
  cfg.lambda_rank = 0.0;
  cfg.tau = tau;
  ad::Tape tape(false);
  LossBreakdown b;
  batch_loss(tape, model, tree, batch, cfg, false, nullptr, nullptr, &b);
  return b.align;
}

// Early stopping: stop once the epochs since the best observation exceed
// `patience`.
class EarlyStopper {
 public:
  explicit EarlyStopper(int patience) : patience_(patience) {}

  bool observe(double metric) {
    if (!has_best_ || metric > best_) {
      best_ = metric;
      has_best_ = true;
      since_best_ = 0;
      return false;
    }
    ++since_best_;
    return since_best_ > patience_;
  }

  bool just_improved() const { return has_best_ && since_best_ == 0; }
  double best() const { return best_; }
  int since_best() const { return since_best_; }

 private:
  int patience_;
  int since_best_ = 0;
  double best_ = 0.0;
  bool has_best_ = false;
};

struct EpochLog {
  int epoch = 0;
  double loss_gen = 0.0;
  double loss_ali = 0.0;
  double loss_rank = 0.0;
  double loss_total = 0.0;
  double valid_recall_at_50 = 0.0;
  double seconds = 0.0;
};

struct TrainResult {
  int best_epoch = -1;
  double best_valid = 0.0;
  std::vector<EpochLog> log;
};

inline void write_train_log(const std::string& path, const std::vector<EpochLog>& log) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write training log: " + path);
  for (const auto& e : log) {
    nlohmann::json j;
    j["epoch"] = e.epoch;
    j["loss_gen"] = e.loss_gen;
    j["loss_ali"] = e.loss_ali;
    j["loss_rank"] = e.loss_rank;
    j["loss_total"] = e.loss_total;
    j["valid_recall_at_50"] = e.valid_recall_at_50;
    j["seconds"] = e.seconds;
    out << j.dump() << '\n';
  }
}

// ---- resumable optimizer state ----

struct TrainState {
  int next_epoch = 0;
  int best_epoch = -1;
  int since_best = 0;
  bool has_best = false;
  double best_valid = 0.0;
  long long adam_steps = 0;
  std::map<std::string, Tensor> best_params;
};

namespace detail {

inline void write_tensor_f64(std::ofstream& out, const Tensor& t) {
  write_pod(out, static_cast<std::uint32_t>(t.shape.size()));
  for (int d : t.shape) write_pod(out, static_cast<std::uint64_t>(d));
  for (double v : t.data) write_pod(out, v);
}

inline Tensor read_tensor_f64(std::ifstream& in, const std::string& path) {
  const std::uint32_t rank = read_pod<std::uint32_t>(in, path);
  if (rank > 8) throw IoError("train state " + path + ": corrupt tensor rank");
  std::vector<int> shape(rank);
  for (auto& d : shape) d = static_cast<int>(read_pod<std::uint64_t>(in, path));
  Tensor t(shape);
  for (auto& v : t.data) v = read_pod<double>(in, path);
  return t;
}

}  // namespace detail

inline void save_train_state(const std::string& path, const Model& model, const TrainState& st) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write train state: " + path);
  out.write("SEATERTS", 8);
  detail::write_pod(out, static_cast<std::int64_t>(st.next_epoch));
  detail::write_pod(out, static_cast<std::int64_t>(st.best_epoch));
  detail::write_pod(out, static_cast<std::int64_t>(st.since_best));
  detail::write_pod(out, static_cast<std::int64_t>(st.has_best ? 1 : 0));
  detail::write_pod(out, st.best_valid);
  detail::write_pod(out, static_cast<std::int64_t>(st.adam_steps));
  const auto names = model.params().names();
  detail::write_pod(out, static_cast<std::uint64_t>(names.size()));
  for (const auto& name : names) {
    const auto& e = model.params().entry(name);
    detail::write_pod(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_tensor_f64(out, e.value);
    detail::write_tensor_f64(out, e.m);
    detail::write_tensor_f64(out, e.v);
    const auto it = st.best_params.find(name);
    detail::write_tensor_f64(out, it != st.best_params.end() ? it->second : e.value);
  }
  if (!out) throw IoError("failed writing train state: " + path);
}

inline TrainState load_train_state(const std::string& path, Model& model) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open train state: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "SEATERTS", 8) != 0)
    throw IoError("train state " + path + ": bad magic");
  TrainState st;
  st.next_epoch = static_cast<int>(detail::read_pod<std::int64_t>(in, path));
  st.best_epoch = static_cast<int>(detail::read_pod<std::int64_t>(in, path));
  st.since_best = static_cast<int>(detail::read_pod<std::int64_t>(in, path));
  st.has_best = detail::read_pod<std::int64_t>(in, path) != 0;
  st.best_valid = detail::read_pod<double>(in, path);
  st.adam_steps = detail::read_pod<std::int64_t>(in, path);
  const std::uint64_t n = detail::read_pod<std::uint64_t>(in, path);
  if (n != model.params().size())
    throw ValidationError("train state " + path + ": parameter count mismatch");
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::uint32_t len = detail::read_pod<std::uint32_t>(in, path);
    if (len > 4096) throw IoError("train state " + path + ": corrupt name length");
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (!in) throw IoError("train state " + path + ": truncated");
    auto& e = model.params().entry(name);
    Tensor value = detail::read_tensor_f64(in, path);
    Tensor m = detail::read_tensor_f64(in, path);
    Tensor v = detail::read_tensor_f64(in, path);
    Tensor best = detail::read_tensor_f64(in, path);
    if (value.shape != e.value.shape)
      throw ValidationError("train state " + path + ": shape mismatch for " + name);
    e.value = std::move(value);
    e.m = std::move(m);
    e.v = std::move(v);
    st.best_params[name] = std::move(best);
  }
  model.params().set_adam_steps(st.adam_steps);
  return st;
}

struct TrainPaths {
  std::string checkpoint;   // best-model checkpoint (f32)
  std::string log;          // JSONL epoch log
  std::string state;        // optional resumable optimizer state
  std::string resume_from;  // optional state file to restore before training
};

// Epoch loop with seeded shuffling, per-epoch validation Recall@valid_beam,
// best-checkpoint keeping and early stopping. Single-threaded and fully
// deterministic given the config seed.
inline TrainResult train(Model& model, const IdentifierTree& tree, const DatasetSplit& split,
                         const TrainConfig& cfg, int min_history_len, const TrainPaths& paths) {
  cfg.validate();
  check_model_tree(model, tree);
  if (split.valid.empty()) throw ValidationError("train: empty validation split");

  std::vector<TrainingExample> examples = make_examples(
      split.train, min_history_len, model.config().max_history_len, cfg.max_examples_per_user);
  if (examples.empty()) throw ValidationError("train: no training examples");

  TrainState st;
  if (!paths.resume_from.empty()) st = load_train_state(paths.resume_from, model);

  EarlyStopper stopper(cfg.patience);
  if (st.has_best) {
    stopper.observe(st.best_valid);
    for (int i = 0; i < st.since_best; ++i) stopper.observe(st.best_valid - 1.0);
  }

  TrainResult result;
  result.best_epoch = st.best_epoch;
  result.best_valid = st.best_valid;

  long long global_step = 0;
  for (int epoch = st.next_epoch; epoch < cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(examples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(derive_seed(cfg.seed, 0x40000000ULL + static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);
    Rng drop_rng(derive_seed(cfg.seed, 0x50000000ULL + static_cast<std::uint64_t>(epoch)));
    Rng neg_rng(derive_seed(cfg.seed, 0x60000000ULL + static_cast<std::uint64_t>(epoch)));

    double sum_gen = 0.0, sum_ali = 0.0, sum_rank = 0.0, sum_total = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      std::vector<TrainingExample> batch;
      batch.reserve(end - begin);
      for (std::size_t i = begin; i < end; ++i) batch.push_back(examples[order[i]]);

      LossBreakdown bd;
      try {
        ad::Tape tape(true);
        ad::Var loss = batch_loss(tape, model, tree, batch, cfg, true, &drop_rng, &neg_rng, &bd);
        model.params().zero_grad();
        tape.backward(loss);
      } catch (const NumericError& e) {
        throw NumericError("training diverged at step " + std::to_string(global_step) + ": " +
                           e.what());
      }
      model.params().adam_step(cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps,
                               cfg.l2_weight);
      ++global_step;
      sum_gen += bd.gen;
      sum_ali += bd.align;
      sum_rank += bd.rank;
      sum_total += bd.total;
      ++n_batches;
    }

    // validation Recall@valid_beam
    double recall_sum = 0.0;
    for (const EvalUser& u : split.valid) {
      RetrievalResult r =
          constrained_beam_search(model, tree, u.context, cfg.valid_beam,
                                  std::min(cfg.valid_beam, tree.n_items));
      EvalRecord rec;
      rec.user_id = u.user_id;
      rec.retrieved = r.items;
      rec.positives = u.targets;
      recall_sum += recall_at_k(rec, static_cast<int>(rec.retrieved.size()));
    }
    const double valid_recall = recall_sum / static_cast<double>(split.valid.size());

    EpochLog el;
    el.epoch = epoch;
    el.loss_gen = sum_gen / static_cast<double>(n_batches);
    el.loss_ali = sum_ali / static_cast<double>(n_batches);
    el.loss_rank = sum_rank / static_cast<double>(n_batches);
    el.loss_total = sum_total / static_cast<double>(n_batches);
    el.valid_recall_at_50 = valid_recall;
    el.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(el);

    const bool stop = stopper.observe(valid_recall);
    if (stopper.just_improved()) {
      result.best_epoch = epoch;
      result.best_valid = valid_recall;
      st.best_params.clear();
      for (const auto& name : model.params().names())
        st.best_params[name] = model.params().value(name);
    }
    st.next_epoch = epoch + 1;
    st.best_epoch = result.best_epoch;
    st.best_valid = result.best_valid;
    st.since_best = stopper.since_best();
    st.has_best = true;
    st.adam_steps = model.params().adam_steps();
    if (stop) break;
  }

  if (!paths.state.empty()) save_train_state(paths.state, model, st);

  // restore the best parameters before writing the checkpoint
  if (!st.best_params.empty())
    for (const auto& [name, value] : st.best_params) model.params().value(name) = value;
  if (!paths.checkpoint.empty()) model.save_checkpoint(paths.checkpoint);
  if (!paths.log.empty()) write_train_log(paths.log, result.log);
  return result;
}

}  // namespace seater
