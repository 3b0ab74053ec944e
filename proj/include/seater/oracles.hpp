#pragma once

// Deliberately naive reference implementations used by tests, the acceptance
// suite, and the bench command. These share the tensor/model forward path
// with the code they check but none of its ranking, clustering, or metric
// logic.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "seater/errors.hpp"
#include "seater/idtree.hpp"
#include "seater/model.hpp"

namespace seater::oracle {

struct RankedItem {
  int item = 0;
  double log_prob = 0.0;
};

// Scores every item by teacher-forced decoding of its full identifier and
// sorts with the beam tie rule. Desk-scale guard: N <= 4096.
inline std::vector<RankedItem> exhaustive_rank(Model& model, const IdentifierTree& tree,
                                               std::span<const int> history) {
  if (tree.n_items > 4096) throw ValidationError("exhaustive_rank: catalog larger than 4096");
  std::vector<RankedItem> ranked;
  ranked.reserve(static_cast<std::size_t>(tree.n_items));
  for (int item = 0; item < tree.n_items; ++item) {
    const std::vector<int>& path = tree.identifier_of(item);
    ad::Tape local(false);
    EncoderOutput enc = model.encode(local, history);
    const std::vector<int> full_prefix(path.begin(), path.end() - 1);
    ad::Var dec = model.decode(local, enc, full_prefix);
    double lp = 0.0;
    std::vector<int> prefix;
    for (int i = 0; i < tree.depth; ++i) {
      const std::vector<int> cands = tree.children_of_prefix(prefix);
      if (cands.size() > 1) {
        ad::Var row = local.row(dec, i);
        ad::Var logp = local.log_softmax(model.step_logits(local, row, cands));
        const auto it = std::find(cands.begin(), cands.end(), path[static_cast<std::size_t>(i)]);
        lp += local.value(logp).data[static_cast<std::size_t>(it - cands.begin())];
      }
      prefix.push_back(path[static_cast<std::size_t>(i)]);
    }
    ranked.push_back({item, lp});
  }
  std::sort(ranked.begin(), ranked.end(), [](const RankedItem& a, const RankedItem& b) {
    if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
    return a.item < b.item;
  });
  return ranked;
}

// Sum of exp(log_prob) over a full ranking; 1.0 on any well-formed tree.
inline double probability_mass(const std::vector<RankedItem>& ranked) {
  double s = 0.0;
  for (const auto& r : ranked) s += std::exp(r.log_prob);
  return s;
}

struct BalancedPartition {
  std::vector<int> labels;  // 0/1 per point
  double sse = 0.0;
};

// Exhaustive optimal balanced 2-partition (sizes differ by at most one) of
// n <= 12 points by within-cluster sum of squared distances to centroids.
inline BalancedPartition brute_balanced_partition(const std::vector<double>& points, int n, int d) {
  if (n < 2 || n > 12) throw ValidationError("brute_balanced_partition: need 2 <= n <= 12 points");
  auto sse_of = [&](unsigned mask) {
    double centroid[2][64] = {};
    int count[2] = {0, 0};
    for (int p = 0; p < n; ++p) {
      const int side = (mask >> p) & 1u;
      ++count[side];
      for (int j = 0; j < d; ++j)
        centroid[side][j] += points[static_cast<std::size_t>(p) * d + j];
    }
    for (int s = 0; s < 2; ++s)
      for (int j = 0; j < d; ++j)
        if (count[s] > 0) centroid[s][j] /= count[s];
    double sse = 0.0;
    for (int p = 0; p < n; ++p) {
      const int side = (mask >> p) & 1u;
      for (int j = 0; j < d; ++j) {
        const double diff = points[static_cast<std::size_t>(p) * d + j] - centroid[side][j];
        sse += diff * diff;
      }
    }
    return sse;
  };

  BalancedPartition best;
  bool found = false;
  for (unsigned mask = 0; mask < (1u << n); ++mask) {
    const int ones = __builtin_popcount(mask);
    if (ones != n / 2 && ones != (n + 1) / 2) continue;
    if (mask & 1u) continue;  // fix point 0 on side 0 to skip mirrored splits
    const double sse = sse_of(mask);
    if (!found || sse < best.sse) {
      found = true;
      best.sse = sse;
      best.labels.assign(static_cast<std::size_t>(n), 0);
      for (int p = 0; p < n; ++p) best.labels[static_cast<std::size_t>(p)] = (mask >> p) & 1u;
    }
  }
  return best;
}

inline double partition_sse(const std::vector<double>& points, int n, int d,
                            const std::vector<int>& labels, int k) {
  std::vector<double> centroid(static_cast<std::size_t>(k) * d, 0.0);
  std::vector<int> count(static_cast<std::size_t>(k), 0);
  for (int p = 0; p < n; ++p) {
    const int c = labels[static_cast<std::size_t>(p)];
    ++count[static_cast<std::size_t>(c)];
    for (int j = 0; j < d; ++j)
      centroid[static_cast<std::size_t>(c) * d + j] += points[static_cast<std::size_t>(p) * d + j];
  }
  for (int c = 0; c < k; ++c)
    if (count[static_cast<std::size_t>(c)] > 0)
      for (int j = 0; j < d; ++j)
        centroid[static_cast<std::size_t>(c) * d + j] /= count[static_cast<std::size_t>(c)];
  double sse = 0.0;
  for (int p = 0; p < n; ++p) {
    const int c = labels[static_cast<std::size_t>(p)];
    for (int j = 0; j < d; ++j) {
      const double diff =
          points[static_cast<std::size_t>(p) * d + j] - centroid[static_cast<std::size_t>(c) * d + j];
      sse += diff * diff;
    }
  }
  return sse;
}

struct NaiveMetrics {
  double hr = 0.0;
  double recall = 0.0;
  double ndcg = 0.0;
};

// Straight-loop reimplementation of HR/Recall/NDCG@K with the all-positives
// ideal gain.
inline NaiveMetrics naive_metrics(const std::vector<int>& retrieved,
                                  const std::vector<int>& positives, int k) {
  NaiveMetrics out;
  int hits = 0;
  double dcg = 0.0;
  for (int rank = 1; rank <= k && rank <= static_cast<int>(retrieved.size()); ++rank) {
    const int item = retrieved[static_cast<std::size_t>(rank - 1)];
    bool positive = false;
    for (int p : positives)
      if (p == item) positive = true;
    if (positive) {
      ++hits;
      dcg += 1.0 / std::log2(static_cast<double>(rank) + 1.0);
    }
  }
  double idcg = 0.0;
  for (int rank = 1; rank <= k && rank <= static_cast<int>(positives.size()); ++rank)
    idcg += 1.0 / std::log2(static_cast<double>(rank) + 1.0);
  out.hr = hits > 0 ? 1.0 : 0.0;
  out.recall = positives.empty() ? 0.0 : static_cast<double>(hits) / positives.size();
  out.ndcg = idcg > 0.0 ? dcg / idcg : 0.0;
  return out;
}

}  // namespace seater::oracle
