#pragma once

// Flat key-value run configuration: one `key = value` pair per line, `#`
// comments. Command-line flags override file values (flags win). Unknown
// keys are rejected.

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "seater/errors.hpp"
#include "seater/idtree.hpp"

namespace seater {

using ConfigMap = std::map<std::string, std::string>;

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

inline ConfigMap parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  ConfigMap out;
  std::string line;
  long long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw IoError("config " + path + " line " + std::to_string(line_no) +
                    ": expected `key = value`");
    const std::string key = detail::trim(t.substr(0, eq));
    const std::string value = detail::trim(t.substr(eq + 1));
    if (key.empty())
      throw IoError("config " + path + " line " + std::to_string(line_no) + ": empty key");
    out[key] = value;
  }
  return out;
}

struct RunConfig {
  // data
  std::string interactions_path;
  int min_history_len = 5;
  std::int64_t n_items_hint = -1;  // <0 means derive from data
  // embeddings
  std::string emb_provider = "svd";  // svd | random | file
  int emb_dim = 64;
  std::string emb_path;
  // tree
  int tree_k = 8;
  std::string tree_mode = "balanced";  // balanced | unbalanced
  std::string tree_path;
  // model
  int model_d = 64;
  int model_layers = 1;
  int model_heads = 4;
  int model_ffn = 0;
  int max_history_len = 50;
  double dropout = 0.1;
  // train
  double lambda_align = 0.05;
  double lambda_rank = 0.05;
  double tau = 0.07;
  int rank_negatives = 4;
  double margin_beta = 0.001;
  double l2_weight = 1e-6;
  double lr = 0.001;
  int batch_size = 32;
  int max_epochs = 50;
  int patience = 5;
  int valid_beam = 50;
  int max_examples_per_user = 0;
  std::string checkpoint_path;
  std::string train_log_path;
  std::string train_state_path;
  std::string resume_from;
  // retrieve
  int beam = 50;
  int top_n = 50;
  std::string retrieve_split = "test";  // test | valid
  std::string results_path;
  // evaluate
  std::vector<int> k_list = {20, 50};
  std::string metrics_csv_path;
  std::string metrics_json_path;
  // bench
  std::int64_t bench_n_items = 4096;
  std::vector<int> bench_k_list = {2, 4, 8, 16, 32};
  std::vector<std::string> bench_modes = {"balanced", "unbalanced"};
  int bench_beam = 50;
  int bench_queries = 16;
  int bench_emb_dim = 16;
  int bench_model_d = 16;
  std::string bench_csv_path;
  // common
  std::uint64_t seed = 1;
  std::string out_dir = "out";
};

namespace detail {

inline std::int64_t to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const std::int64_t r = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return r;
  } catch (...) {
    throw ValidationError("config key " + key + ": not an integer: `" + v + "`");
  }
}

inline double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double r = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return r;
  } catch (...) {
    throw ValidationError("config key " + key + ": not a number: `" + v + "`");
  }
}

inline std::vector<int> to_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = trim(part);
    if (part.empty()) continue;
    out.push_back(static_cast<int>(to_int(key, part)));
  }
  if (out.empty()) throw ValidationError("config key " + key + ": empty list");
  return out;
}

inline std::vector<std::string> to_str_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string part;
  while (std::getline(ss, part, ',')) {
    part = trim(part);
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

}  // namespace detail

// Builds and validates a RunConfig from raw key-value pairs. Derived default
// paths live under the output directory.
inline RunConfig make_run_config(const ConfigMap& map) {
  RunConfig c;
  for (const auto& [key, value] : map) {
    using detail::to_double;
    using detail::to_int;
    if (key == "data.interactions") c.interactions_path = value;
    else if (key == "data.min_history_len") c.min_history_len = static_cast<int>(to_int(key, value));
    else if (key == "data.n_items") c.n_items_hint = to_int(key, value);
    else if (key == "embeddings.provider") c.emb_provider = value;
    else if (key == "embeddings.dim") c.emb_dim = static_cast<int>(to_int(key, value));
    else if (key == "embeddings.path") c.emb_path = value;
    else if (key == "tree.k") c.tree_k = static_cast<int>(to_int(key, value));
    else if (key == "tree.mode") c.tree_mode = value;
    else if (key == "tree.path") c.tree_path = value;
    else if (key == "model.d") c.model_d = static_cast<int>(to_int(key, value));
    else if (key == "model.n_layers") c.model_layers = static_cast<int>(to_int(key, value));
    else if (key == "model.n_heads") c.model_heads = static_cast<int>(to_int(key, value));
    else if (key == "model.ffn_dim") c.model_ffn = static_cast<int>(to_int(key, value));
    else if (key == "model.max_history_len") c.max_history_len = static_cast<int>(to_int(key, value));
    else if (key == "model.dropout") c.dropout = to_double(key, value);
    else if (key == "train.lambda_align") c.lambda_align = to_double(key, value);
    else if (key == "train.lambda_rank") c.lambda_rank = to_double(key, value);
    else if (key == "train.tau") c.tau = to_double(key, value);
    else if (key == "train.rank_negatives") c.rank_negatives = static_cast<int>(to_int(key, value));
    else if (key == "train.margin_beta") c.margin_beta = to_double(key, value);
    else if (key == "train.l2_weight") c.l2_weight = to_double(key, value);
    else if (key == "train.lr") c.lr = to_double(key, value);
    else if (key == "train.batch_size") c.batch_size = static_cast<int>(to_int(key, value));
    else if (key == "train.max_epochs") c.max_epochs = static_cast<int>(to_int(key, value));
    else if (key == "train.patience") c.patience = static_cast<int>(to_int(key, value));
    else if (key == "train.valid_beam") c.valid_beam = static_cast<int>(to_int(key, value));
    else if (key == "train.max_examples_per_user")
      c.max_examples_per_user = static_cast<int>(to_int(key, value));
    else if (key == "train.checkpoint") c.checkpoint_path = value;
    else if (key == "train.log") c.train_log_path = value;
    else if (key == "train.state") c.train_state_path = value;
    else if (key == "train.resume_from") c.resume_from = value;
    else if (key == "retrieve.beam") c.beam = static_cast<int>(to_int(key, value));
    else if (key == "retrieve.top_n") c.top_n = static_cast<int>(to_int(key, value));
    else if (key == "retrieve.split") c.retrieve_split = value;
    else if (key == "retrieve.checkpoint") c.checkpoint_path = value;
    else if (key == "retrieve.output") c.results_path = value;
    else if (key == "eval.k_list") c.k_list = detail::to_int_list(key, value);
    else if (key == "eval.results") c.results_path = value;
    else if (key == "eval.csv") c.metrics_csv_path = value;
    else if (key == "eval.json") c.metrics_json_path = value;
    else if (key == "bench.n_items") c.bench_n_items = to_int(key, value);
    else if (key == "bench.k_list") c.bench_k_list = detail::to_int_list(key, value);
    else if (key == "bench.modes") c.bench_modes = detail::to_str_list(value);
    else if (key == "bench.beam") c.bench_beam = static_cast<int>(to_int(key, value));
    else if (key == "bench.queries") c.bench_queries = static_cast<int>(to_int(key, value));
    else if (key == "bench.dim") c.bench_emb_dim = static_cast<int>(to_int(key, value));
    else if (key == "bench.model_d") c.bench_model_d = static_cast<int>(to_int(key, value));
    else if (key == "bench.output") c.bench_csv_path = value;
    else if (key == "seed") c.seed = static_cast<std::uint64_t>(to_int(key, value));
    else if (key == "out") c.out_dir = value;
    else throw ValidationError("unknown config key: " + key);
  }

  if (c.tree_path.empty()) c.tree_path = c.out_dir + "/tree.json";
  if (c.checkpoint_path.empty()) c.checkpoint_path = c.out_dir + "/model.ckpt";
  if (c.train_log_path.empty()) c.train_log_path = c.out_dir + "/train_log.jsonl";
  if (c.train_state_path.empty()) c.train_state_path = c.out_dir + "/train_state.bin";
  if (c.results_path.empty()) c.results_path = c.out_dir + "/results.jsonl";
  if (c.metrics_csv_path.empty()) c.metrics_csv_path = c.out_dir + "/metrics.csv";
  if (c.metrics_json_path.empty()) c.metrics_json_path = c.out_dir + "/metrics.json";
  if (c.bench_csv_path.empty()) c.bench_csv_path = c.out_dir + "/bench.csv";

  // cross-field validation before any work
  if (c.emb_provider != "svd" && c.emb_provider != "random" && c.emb_provider != "file")
    throw ValidationError("embeddings.provider must be svd, random or file");
  if (c.emb_provider == "file" && c.emb_path.empty())
    throw ValidationError("embeddings.provider=file requires embeddings.path");
  if (c.tree_mode != "balanced" && c.tree_mode != "unbalanced")
    throw ValidationError("tree.mode must be balanced or unbalanced");
  if (c.tree_k < 2) throw ValidationError("tree.k must be >= 2");
  if (c.model_d < 1 || c.model_d % c.model_heads != 0)
    throw ValidationError("model.d must be a positive multiple of model.n_heads");
  if (c.min_history_len < 1) throw ValidationError("data.min_history_len must be >= 1");
  if (c.retrieve_split != "test" && c.retrieve_split != "valid")
    throw ValidationError("retrieve.split must be test or valid");
  if (c.top_n < 1 || c.beam < c.top_n)
    throw ValidationError("retrieve.beam must be >= retrieve.top_n >= 1");
  for (int k : c.k_list)
    if (k < 1) throw ValidationError("eval.k_list entries must be >= 1");
  for (const auto& m : c.bench_modes)
    if (m != "balanced" && m != "unbalanced")
      throw ValidationError("bench.modes entries must be balanced or unbalanced");
  return c;
}

inline TreeMode tree_mode_of(const std::string& name) {
  return name == "unbalanced" ? TreeMode::kUnbalanced : TreeMode::kBalanced;
}

}  // namespace seater
