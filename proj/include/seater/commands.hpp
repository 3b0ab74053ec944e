#pragma once

// Command drivers behind the CLI subcommands. Each returns a process exit
// code: 0 success, 1 validation/assertion failure, 2 I/O or usage failure.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "seater/config.hpp"
#include "seater/corpus.hpp"
#include "seater/embeddings.hpp"
#include "seater/errors.hpp"
#include "seater/idtree.hpp"
#include "seater/inference.hpp"
#include "seater/metrics.hpp"
#include "seater/model.hpp"
#include "seater/oracles.hpp"
#include "seater/training.hpp"

namespace seater {

namespace detail {

inline int run_guarded(const std::function<void()>& fn) {
  try {
    fn();
    return 0;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}

inline void ensure_out_dir(const RunConfig& cfg) {
  std::error_code ec;
  std::filesystem::create_directories(cfg.out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + cfg.out_dir + ": " + ec.message());
}

inline HistoriesResult load_histories(const RunConfig& cfg, int* n_items_out) {
  if (cfg.interactions_path.empty())
    throw ValidationError("data.interactions is required for this command");
  std::optional<std::int64_t> hint;
  if (cfg.n_items_hint >= 0) hint = cfg.n_items_hint;
  LoadedInteractions loaded = load_interactions(cfg.interactions_path, hint);
  if (loaded.interactions.empty()) throw ValidationError("interactions file is empty");
  if (n_items_out) *n_items_out = loaded.n_items;
  return build_histories(loaded.interactions, cfg.min_history_len);
}

inline ItemEmbeddingMatrix make_provider_embeddings(const RunConfig& cfg,
                                                    const std::vector<UserHistory>& histories,
                                                    int n_items) {
  if (cfg.emb_provider == "svd") return svd_embeddings(histories, n_items, cfg.emb_dim, cfg.seed);
  if (cfg.emb_provider == "random") return random_embeddings(n_items, cfg.emb_dim, cfg.seed);
  return load_embeddings(cfg.emb_path);
}

// Clustered synthetic embeddings with power-law cluster sizes; skewed enough
// that unconstrained k-means produces uneven trees.
inline ItemEmbeddingMatrix skewed_embeddings(int n_items, int dim, std::uint64_t seed) {
  ItemEmbeddingMatrix m;
  m.n_items = n_items;
  m.dim = dim;
  m.values.resize(static_cast<std::size_t>(n_items) * dim);
  Rng rng(derive_seed(seed, 0xB53DULL));
  const int n_clusters = std::max(4, n_items / 64);
  std::vector<double> centers(static_cast<std::size_t>(n_clusters) * dim);
  for (auto& v : centers) v = 10.0 * rng.gaussian();
  std::vector<double> weights(static_cast<std::size_t>(n_clusters));
  double total = 0.0;
  for (int c = 0; c < n_clusters; ++c) {
    weights[static_cast<std::size_t>(c)] = 1.0 / (1.0 + c);
    total += weights[static_cast<std::size_t>(c)];
  }
  for (int i = 0; i < n_items; ++i) {
    const double target = rng.next_double() * total;
    double acc = 0.0;
    int c = n_clusters - 1;
    for (int j = 0; j < n_clusters; ++j) {
      acc += weights[static_cast<std::size_t>(j)];
      if (acc >= target) {
        c = j;
        break;
      }
    }
    for (int j = 0; j < dim; ++j)
      m.at(i, j) = centers[static_cast<std::size_t>(c) * dim + j] + 0.5 * rng.gaussian();
  }
  return m;
}

inline std::vector<std::vector<int>> contexts_of(const std::vector<EvalUser>& users) {
  std::vector<std::vector<int>> out;
  out.reserve(users.size());
  for (const auto& u : users) out.push_back(u.context);
  return out;
}

}  // namespace detail

inline int cmd_build_index(const RunConfig& cfg) {
  return detail::run_guarded([&] {
    detail::ensure_out_dir(cfg);
    const auto t0 = std::chrono::steady_clock::now();
    ItemEmbeddingMatrix emb;
    if (cfg.emb_provider == "file") {
      emb = load_embeddings(cfg.emb_path);
    } else {
      int n_items = 0;
      HistoriesResult hist = detail::load_histories(cfg, &n_items);
      emb = detail::make_provider_embeddings(cfg, hist.histories, n_items);
    }
    IdentifierTree tree = build_identifier_tree(emb, cfg.tree_k, cfg.seed,
                                                tree_mode_of(cfg.tree_mode));
    tree.save(cfg.tree_path);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    nlohmann::json stats;
    stats["N"] = tree.n_items;
    stats["M"] = tree.n_tokens;
    stats["k"] = tree.k;
    stats["depth"] = tree.depth;
    stats["extra_token_rows"] = tree.n_tokens - tree.n_items;
    stats["mode"] = cfg.tree_mode;
    stats["tree_path"] = cfg.tree_path;
    stats["build_seconds"] = secs;
    std::cout << stats.dump() << '\n';
  });
}

inline int cmd_train(const RunConfig& cfg) {
  return detail::run_guarded([&] {
    detail::ensure_out_dir(cfg);
    int n_items = 0;
    HistoriesResult hist = detail::load_histories(cfg, &n_items);
    DatasetSplit split = split_users(hist.histories, cfg.seed);
    IdentifierTree tree = IdentifierTree::load(cfg.tree_path);
    if (tree.k != cfg.tree_k)
      throw ValidationError("config tree.k=" + std::to_string(cfg.tree_k) +
                            " does not match tree file k=" + std::to_string(tree.k));
    if (tree.n_items != n_items)
      throw ValidationError("tree indexes " + std::to_string(tree.n_items) +
                            " items but the corpus has " + std::to_string(n_items));

    ModelConfig mc = ModelConfig::for_tree(tree, cfg.model_d, cfg.model_layers, cfg.model_heads,
                                           cfg.model_ffn, cfg.max_history_len, cfg.dropout);
    Model model(mc);
    model.init_params(cfg.seed);

    TrainConfig tc;
    tc.lambda_align = cfg.lambda_align;
    tc.lambda_rank = cfg.lambda_rank;
    tc.tau = cfg.tau;
    tc.rank_negatives = cfg.rank_negatives;
    tc.margin_beta = cfg.margin_beta;
    tc.l2_weight = cfg.l2_weight;
    tc.lr = cfg.lr;
    tc.batch_size = cfg.batch_size;
    tc.max_epochs = cfg.max_epochs;
    tc.patience = cfg.patience;
    tc.seed = cfg.seed;
    tc.valid_beam = cfg.valid_beam;
    tc.max_examples_per_user = cfg.max_examples_per_user;

    TrainPaths paths;
    paths.checkpoint = cfg.checkpoint_path;
    paths.log = cfg.train_log_path;
    paths.state = cfg.train_state_path;
    paths.resume_from = cfg.resume_from;

    TrainResult res = train(model, tree, split, tc, cfg.min_history_len, paths);
    nlohmann::json summary;
    summary["best_epoch"] = res.best_epoch;
    summary["best_valid_recall_at_50"] = res.best_valid;
    summary["epochs_run"] = res.log.size();
    summary["checkpoint"] = cfg.checkpoint_path;
    summary["log"] = cfg.train_log_path;
    std::cout << summary.dump() << '\n';
  });
}

inline int cmd_retrieve(const RunConfig& cfg) {
  return detail::run_guarded([&] {
    detail::ensure_out_dir(cfg);
    int n_items = 0;
    HistoriesResult hist = detail::load_histories(cfg, &n_items);
    DatasetSplit split = split_users(hist.histories, cfg.seed);
    IdentifierTree tree = IdentifierTree::load(cfg.tree_path);
    Model model = Model::load_checkpoint(cfg.checkpoint_path, tree);

    const std::vector<EvalUser>& users =
        cfg.retrieve_split == "valid" ? split.valid : split.test;
    if (users.empty()) throw ValidationError("retrieve: empty " + cfg.retrieve_split + " split");

    std::vector<RetrievalResult> results =
        retrieve_topn(model, tree, detail::contexts_of(users), cfg.beam, cfg.top_n);
    std::vector<std::int64_t> ids;
    ids.reserve(users.size());
    for (const auto& u : users) ids.push_back(u.user_id);
    write_results_jsonl(cfg.results_path, ids, results);

    nlohmann::json summary;
    summary["users"] = users.size();
    summary["beam"] = cfg.beam;
    summary["top_n"] = cfg.top_n;
    summary["split"] = cfg.retrieve_split;
    summary["output"] = cfg.results_path;
    std::cout << summary.dump() << '\n';
  });
}

inline int cmd_evaluate(const RunConfig& cfg) {
  return detail::run_guarded([&] {
    detail::ensure_out_dir(cfg);
    std::vector<ResultRow> rows = read_results_jsonl(cfg.results_path);
    if (rows.empty()) throw ValidationError("evaluate: results file has no rows");
    int n_items = 0;
    HistoriesResult hist = detail::load_histories(cfg, &n_items);
    DatasetSplit split = split_users(hist.histories, cfg.seed);

    std::map<std::int64_t, const EvalUser*> by_id;
    for (const auto& u : split.valid) by_id[u.user_id] = &u;
    for (const auto& u : split.test) by_id[u.user_id] = &u;

    std::vector<EvalRecord> records;
    records.reserve(rows.size());
    for (const auto& r : rows) {
      auto it = by_id.find(r.user_id);
      if (it == by_id.end())
        throw ValidationError("evaluate: user " + std::to_string(r.user_id) +
                              " is not an eval user under this split seed");
      EvalRecord rec;
      rec.user_id = r.user_id;
      rec.retrieved = r.items;
      rec.positives = it->second->targets;
      records.push_back(std::move(rec));
    }
    MetricTable table = evaluate_split(records, cfg.k_list);
    write_metrics_csv(cfg.metrics_csv_path, table);
    write_metrics_json(cfg.metrics_json_path, table);
    for (const auto& row : table.rows)
      std::cout << row.metric << "@" << row.k << " = " << row.value << '\n';
  });
}

// Complexity benchmark: builds trees over skewed synthetic embeddings for a
// grid of (k, mode), runs seeded beam searches with an untrained model, and
// checks the balanced-depth and expansion-count bounds.
inline int cmd_bench(const RunConfig& cfg) {
  return detail::run_guarded([&] {
    detail::ensure_out_dir(cfg);
    std::ofstream csv(cfg.bench_csv_path);
    if (!csv) throw IoError("cannot write bench csv: " + cfg.bench_csv_path);
    csv << "n_items,k,mode,max_identifier_length,mean_expansions,extra_token_rows,wall_micros\n";
    std::cout << "n_items,k,mode,max_identifier_length,mean_expansions,extra_token_rows,wall_micros\n";

    const int n = static_cast<int>(cfg.bench_n_items);
    ItemEmbeddingMatrix emb = detail::skewed_embeddings(n, cfg.bench_emb_dim, cfg.seed);
    bool ok = true;
    for (int k : cfg.bench_k_list) {
      for (const std::string& mode_name : cfg.bench_modes) {
        const TreeMode mode = tree_mode_of(mode_name);
        IdentifierTree tree = build_identifier_tree(emb, k, cfg.seed, mode);
        ModelConfig mc = ModelConfig::for_tree(tree, cfg.bench_model_d, 1,
                                               std::min(4, cfg.bench_model_d), 0, 50, 0.0);
        Model model(mc);
        model.init_params(derive_seed(cfg.seed, 0xBE9C4ULL));

        Rng qrng(derive_seed(cfg.seed, 0x9E41ULL));
        const int beam = std::min(cfg.bench_beam, tree.n_items);
        long long total_exp = 0;
        double total_micros = 0.0;
        for (int q = 0; q < cfg.bench_queries; ++q) {
          std::vector<int> history(20);
          for (auto& it : history)
            it = static_cast<int>(qrng.below(static_cast<std::uint64_t>(n)));
          const auto t0 = std::chrono::steady_clock::now();
          RetrievalResult r = constrained_beam_search(model, tree, history, beam, beam);
          total_micros += std::chrono::duration<double, std::micro>(
                              std::chrono::steady_clock::now() - t0)
                              .count();
          total_exp += r.expansions;
        }
        const double mean_exp = static_cast<double>(total_exp) / cfg.bench_queries;
        const double mean_micros = total_micros / cfg.bench_queries;
        const int extra_rows = tree.n_tokens - tree.n_items;

        csv << n << ',' << k << ',' << mode_name << ',' << tree.depth << ',' << mean_exp << ','
            << extra_rows << ',' << mean_micros << '\n';
        std::cout << n << ',' << k << ',' << mode_name << ',' << tree.depth << ',' << mean_exp
                  << ',' << extra_rows << ',' << mean_micros << '\n';

        const long long bound =
            static_cast<long long>(beam) * k * tree.depth;
        if (mean_exp > static_cast<double>(bound)) {
          std::cerr << "bench: expansion bound violated: " << mean_exp << " > " << bound << '\n';
          ok = false;
        }
        if (mode == TreeMode::kBalanced) {
          const int depth_bound =
              static_cast<int>(std::ceil(std::log(static_cast<double>(n)) /
                                         std::log(static_cast<double>(k)))) + 1;
          if (tree.depth > depth_bound) {
            std::cerr << "bench: balanced depth " << tree.depth << " exceeds bound "
                      << depth_bound << '\n';
            ok = false;
          }
        }
      }
    }
    if (!ok) throw ValidationError("bench: bound assertions failed");
  });
}

}  // namespace seater
