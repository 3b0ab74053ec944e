#pragma once

// HR@K, Recall@K and NDCG@K over binary relevance. The ideal DCG uses all
// positive items, not just the recalled ones.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "seater/errors.hpp"

namespace seater {

struct EvalRecord {
  std::int64_t user_id = 0;
  std::vector<int> retrieved;  // ranked, distinct
  std::vector<int> positives;  // held-out ground truth, non-empty
};

namespace detail {

inline void check_record(const EvalRecord& r, int k) {
  if (r.positives.empty()) throw ValidationError("metrics: empty positive set");
  if (k < 1 || k > static_cast<int>(r.retrieved.size()))
    throw ValidationError("metrics: K must be in [1, retrieved length]");
}

inline int hits_at_k(const EvalRecord& r, int k) {
  std::unordered_set<int> pos(r.positives.begin(), r.positives.end());
  int hits = 0;
  for (int i = 0; i < k; ++i)
    if (pos.count(r.retrieved[static_cast<std::size_t>(i)])) ++hits;
  return hits;
}

}  // namespace detail

inline double recall_at_k(const EvalRecord& r, int k) {
  detail::check_record(r, k);
  std::unordered_set<int> pos(r.positives.begin(), r.positives.end());
  return static_cast<double>(detail::hits_at_k(r, k)) / static_cast<double>(pos.size());
}

inline double hr_at_k(const EvalRecord& r, int k) {
  detail::check_record(r, k);
  return detail::hits_at_k(r, k) > 0 ? 1.0 : 0.0;
}

inline double ndcg_at_k(const EvalRecord& r, int k) {
  detail::check_record(r, k);
  std::unordered_set<int> pos(r.positives.begin(), r.positives.end());
  double dcg = 0.0;
  for (int rank = 1; rank <= k; ++rank)
    if (pos.count(r.retrieved[static_cast<std::size_t>(rank - 1)]))
      dcg += 1.0 / std::log2(static_cast<double>(rank) + 1.0);
  double idcg = 0.0;
  const int ideal = std::min<int>(k, static_cast<int>(pos.size()));
  for (int rank = 1; rank <= ideal; ++rank)
    idcg += 1.0 / std::log2(static_cast<double>(rank) + 1.0);
  return dcg / idcg;
}

struct MetricTable {
  std::vector<int> k_list;
  // rows follow k_list order per metric, metrics ordered hr, recall, ndcg
  struct Row {
    std::string metric;
    int k = 0;
    double value = 0.0;
  };
  std::vector<Row> rows;

  double value_of(const std::string& metric, int k) const {
    for (const auto& r : rows)
      if (r.metric == metric && r.k == k) return r.value;
    throw ValidationError("metric table: missing " + metric + "@" + std::to_string(k));
  }
};

inline MetricTable evaluate_split(const std::vector<EvalRecord>& records,
                                  const std::vector<int>& k_list = {20, 50}) {
  if (records.empty()) throw ValidationError("evaluate_split: no eval records");
  if (k_list.empty()) throw ValidationError("evaluate_split: empty K list");
  MetricTable table;
  table.k_list = k_list;
  for (const char* metric : {"hr", "recall", "ndcg"}) {
    for (int k : k_list) {
      double sum = 0.0;
      for (const auto& r : records) {
        if (std::string(metric) == "hr")
          sum += hr_at_k(r, k);
        else if (std::string(metric) == "recall")
          sum += recall_at_k(r, k);
        else
          sum += ndcg_at_k(r, k);
      }
      table.rows.push_back({metric, k, sum / static_cast<double>(records.size())});
    }
  }
  return table;
}

inline void write_metrics_csv(const std::string& path, const MetricTable& table) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write metrics csv: " + path);
  out << "metric,K,value\n";
  out.precision(17);
  for (const auto& r : table.rows) out << r.metric << ',' << r.k << ',' << r.value << '\n';
}

inline void write_metrics_json(const std::string& path, const MetricTable& table) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : table.rows)
    j.push_back({{"metric", r.metric}, {"K", r.k}, {"value", r.value}});
  std::ofstream out(path);
  if (!out) throw IoError("cannot write metrics json: " + path);
  out << j.dump(2) << '\n';
}

}  // namespace seater
