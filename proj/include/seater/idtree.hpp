#pragma once

// Balanced k-ary identifier tree. Items are recursively partitioned with
// capacity-constrained k-means (cluster sizes floor(m/k) / floor(m/k)+1)
// until a group has at most k items; groups then attach their items as
// leaves. Token layout: ids 0..N-1 are the leaves and equal the item ids,
// id N is the start token (the root), ids N+1.. are internal nodes in
// first-visit order scanning items by ascending id. Shorter paths are
// right-padded by repeating the leaf token; those pass-through levels treat
// the leaf as its own only child.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "seater/embeddings.hpp"
#include "seater/errors.hpp"
#include "seater/rng.hpp"

namespace seater {

namespace detail {

inline double assignment_sse(const std::vector<double>& points, int n, int d,
                             const std::vector<int>& assign, int k) {
  std::vector<double> centroid(static_cast<std::size_t>(k) * d, 0.0);
  std::vector<int> count(static_cast<std::size_t>(k), 0);
  for (int p = 0; p < n; ++p) {
    const int c = assign[static_cast<std::size_t>(p)];
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
    const int c = assign[static_cast<std::size_t>(p)];
    for (int j = 0; j < d; ++j) {
      const double diff = points[static_cast<std::size_t>(p) * d + j] -
                          centroid[static_cast<std::size_t>(c) * d + j];
      sse += diff * diff;
    }
  }
  return sse;
}

std::vector<int> constrained_kmeans_once(const std::vector<double>& points, int n, int d, int k,
                                         int min_size, int max_size, std::uint64_t seed,
                                         int max_iters);

// Size-preserving local search: greedily applies the best improving swap of
// two points in different clusters until none remains. Intended for small n.
inline void swap_refine(const std::vector<double>& points, int n, int d, int k,
                        std::vector<int>& assign, int max_swaps = 200) {
  for (int round = 0; round < max_swaps; ++round) {
    std::vector<double> centroid(static_cast<std::size_t>(k) * d, 0.0);
    std::vector<int> count(static_cast<std::size_t>(k), 0);
    for (int p = 0; p < n; ++p) {
      const int c = assign[static_cast<std::size_t>(p)];
      ++count[static_cast<std::size_t>(c)];
      for (int j = 0; j < d; ++j)
        centroid[static_cast<std::size_t>(c) * d + j] +=
            points[static_cast<std::size_t>(p) * d + j];
    }
    for (int c = 0; c < k; ++c)
      if (count[static_cast<std::size_t>(c)] > 0)
        for (int j = 0; j < d; ++j)
          centroid[static_cast<std::size_t>(c) * d + j] /= count[static_cast<std::size_t>(c)];
    auto dist2c = [&](int p, int c) {
      double s = 0.0;
      for (int j = 0; j < d; ++j) {
        const double diff = points[static_cast<std::size_t>(p) * d + j] -
                            centroid[static_cast<std::size_t>(c) * d + j];
        s += diff * diff;
      }
      return s;
    };
    double best_delta = -1e-12;
    int best_a = -1, best_b = -1;
    for (int a = 0; a < n; ++a) {
      for (int b = a + 1; b < n; ++b) {
        const int ca = assign[static_cast<std::size_t>(a)];
        const int cb = assign[static_cast<std::size_t>(b)];
        if (ca == cb) continue;
        const double delta =
            dist2c(a, cb) + dist2c(b, ca) - dist2c(a, ca) - dist2c(b, cb);
        if (delta < best_delta) {
          best_delta = delta;
          best_a = a;
          best_b = b;
        }
      }
    }
    if (best_a < 0) return;
    std::swap(assign[static_cast<std::size_t>(best_a)], assign[static_cast<std::size_t>(best_b)]);
  }
}

}  // namespace detail

// Capacity-constrained k-means. Each restart seeds k-means++ centroids, then
// iterates: fill cluster capacities greedily by ascending distance gap
// (distance to a centroid minus distance to the point's closest centroid),
// repair min-size deficits by cheapest moves, recompute centroids; repeat
// until assignments stabilize. Small instances also get a size-preserving
// swap refinement. The best restart by SSE wins; ties break toward the
// earlier restart, and point ties toward the lower id.
inline std::vector<int> constrained_kmeans(const std::vector<double>& points, int n, int d, int k,
                                           int min_size, int max_size, std::uint64_t seed,
                                           int max_iters = 100) {
  if (k > n) throw ValidationError("constrained_kmeans: k > n");
  if (k < 1 || min_size < 0 || max_size < min_size)
    throw ValidationError("constrained_kmeans: bad cluster size bounds");
  if (static_cast<long long>(min_size) * k > n || static_cast<long long>(max_size) * k < n)
    throw ValidationError("constrained_kmeans: infeasible size bounds for n=" + std::to_string(n));

  const int restarts = n <= 64 ? 8 : 3;
  std::vector<int> best;
  double best_sse = 0.0;
  for (int r = 0; r < restarts; ++r) {
    std::vector<int> assign = detail::constrained_kmeans_once(
        points, n, d, k, min_size, max_size, derive_seed(seed, static_cast<std::uint64_t>(r)),
        max_iters);
    if (n <= 64) detail::swap_refine(points, n, d, k, assign);
    const double sse = detail::assignment_sse(points, n, d, assign, k);
    if (best.empty() || sse < best_sse) {
      best = std::move(assign);
      best_sse = sse;
    }
  }
  return best;
}

inline std::vector<int> detail::constrained_kmeans_once(const std::vector<double>& points, int n,
                                                        int d, int k, int min_size, int max_size,
                                                        std::uint64_t seed, int max_iters) {
  auto point = [&](int p) { return points.data() + static_cast<std::size_t>(p) * d; };
  auto dist2 = [&](const double* a, const double* b) {
    double s = 0.0;
    for (int j = 0; j < d; ++j) {
      const double diff = a[j] - b[j];
      s += diff * diff;
    }
    return s;
  };

  // k-means++ seeding
  std::vector<double> centroids(static_cast<std::size_t>(k) * d);
  Rng rng(derive_seed(seed, 0xC13A5ULL));
  {
    const int first = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
    std::copy_n(point(first), d, centroids.data());
    std::vector<double> best(static_cast<std::size_t>(n));
    for (int c = 1; c < k; ++c) {
      double total = 0.0;
      for (int p = 0; p < n; ++p) {
        double bd = dist2(point(p), centroids.data());
        for (int cc = 1; cc < c; ++cc)
          bd = std::min(bd, dist2(point(p), centroids.data() + static_cast<std::size_t>(cc) * d));
        best[static_cast<std::size_t>(p)] = bd;
        total += bd;
      }
      int chosen = -1;
      if (total <= 0.0) {
        chosen = c % n;  // all points coincide with chosen centroids
      } else {
        const double target = rng.next_double() * total;
        double acc = 0.0;
        for (int p = 0; p < n; ++p) {
          acc += best[static_cast<std::size_t>(p)];
          if (acc >= target) {
            chosen = p;
            break;
          }
        }
        if (chosen < 0) chosen = n - 1;
      }
      std::copy_n(point(chosen), d, centroids.data() + static_cast<std::size_t>(c) * d);
    }
  }

  std::vector<int> assign(static_cast<std::size_t>(n), -1);
  std::vector<int> prev;
  std::vector<double> dmat(static_cast<std::size_t>(n) * k);

  struct Pair {
    double gap;
    double dist;
    int p;
    int c;
  };
  std::vector<Pair> pairs;
  pairs.reserve(static_cast<std::size_t>(n) * k);

  for (int iter = 0; iter < max_iters; ++iter) {
    for (int p = 0; p < n; ++p)
      for (int c = 0; c < k; ++c)
        dmat[static_cast<std::size_t>(p) * k + c] =
            dist2(point(p), centroids.data() + static_cast<std::size_t>(c) * d);

    pairs.clear();
    for (int p = 0; p < n; ++p) {
      double bd = dmat[static_cast<std::size_t>(p) * k];
      for (int c = 1; c < k; ++c) bd = std::min(bd, dmat[static_cast<std::size_t>(p) * k + c]);
      for (int c = 0; c < k; ++c) {
        const double dd = dmat[static_cast<std::size_t>(p) * k + c];
        pairs.push_back({dd - bd, dd, p, c});
      }
    }
    std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
      if (a.gap != b.gap) return a.gap < b.gap;
      if (a.dist != b.dist) return a.dist < b.dist;
      if (a.p != b.p) return a.p < b.p;
      return a.c < b.c;
    });

    std::fill(assign.begin(), assign.end(), -1);
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    int placed = 0;
    for (const Pair& pr : pairs) {
      if (placed == n) break;
      if (assign[static_cast<std::size_t>(pr.p)] != -1) continue;
      if (counts[static_cast<std::size_t>(pr.c)] >= max_size) continue;
      assign[static_cast<std::size_t>(pr.p)] = pr.c;
      ++counts[static_cast<std::size_t>(pr.c)];
      ++placed;
    }

    // repair min-size deficits with the cheapest donor moves
    for (;;) {
      int under = -1;
      for (int c = 0; c < k; ++c)
        if (counts[static_cast<std::size_t>(c)] < min_size) {
          under = c;
          break;
        }
      if (under < 0) break;
      int best_p = -1;
      double best_cost = 0.0;
      for (int p = 0; p < n; ++p) {
        const int from = assign[static_cast<std::size_t>(p)];
        if (from == under || counts[static_cast<std::size_t>(from)] <= min_size) continue;
        const double cost = dmat[static_cast<std::size_t>(p) * k + under] -
                            dmat[static_cast<std::size_t>(p) * k + from];
        if (best_p < 0 || cost < best_cost) {
          best_p = p;
          best_cost = cost;
        }
      }
      if (best_p < 0) throw ValidationError("constrained_kmeans: cannot satisfy min_size");
      --counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(best_p)])];
      assign[static_cast<std::size_t>(best_p)] = under;
      ++counts[static_cast<std::size_t>(under)];
    }

    if (assign == prev) break;
    prev = assign;

    std::fill(centroids.begin(), centroids.end(), 0.0);
    std::vector<int> sizes(static_cast<std::size_t>(k), 0);
    for (int p = 0; p < n; ++p) {
      const int c = assign[static_cast<std::size_t>(p)];
      ++sizes[static_cast<std::size_t>(c)];
      const double* src = point(p);
      double* dst = centroids.data() + static_cast<std::size_t>(c) * d;
      for (int j = 0; j < d; ++j) dst[j] += src[j];
    }
    for (int c = 0; c < k; ++c) {
      if (sizes[static_cast<std::size_t>(c)] == 0) continue;
      double* dst = centroids.data() + static_cast<std::size_t>(c) * d;
      for (int j = 0; j < d; ++j) dst[j] /= sizes[static_cast<std::size_t>(c)];
    }
  }
  return assign;
}

// Plain Lloyd k-means (no capacity constraints) with empty-cluster repair,
// used for the imbalanced-tree variant.
inline std::vector<int> plain_kmeans(const std::vector<double>& points, int n, int d, int k,
                                     std::uint64_t seed, int max_iters = 100) {
  if (k > n) throw ValidationError("plain_kmeans: k > n");
  auto point = [&](int p) { return points.data() + static_cast<std::size_t>(p) * d; };
  auto dist2 = [&](const double* a, const double* b) {
    double s = 0.0;
    for (int j = 0; j < d; ++j) {
      const double diff = a[j] - b[j];
      s += diff * diff;
    }
    return s;
  };

  std::vector<double> centroids(static_cast<std::size_t>(k) * d);
  Rng rng(derive_seed(seed, 0x9B41DULL));
  {
    const int first = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
    std::copy_n(point(first), d, centroids.data());
    std::vector<double> best(static_cast<std::size_t>(n));
    for (int c = 1; c < k; ++c) {
      double total = 0.0;
      for (int p = 0; p < n; ++p) {
        double bd = dist2(point(p), centroids.data());
        for (int cc = 1; cc < c; ++cc)
          bd = std::min(bd, dist2(point(p), centroids.data() + static_cast<std::size_t>(cc) * d));
        best[static_cast<std::size_t>(p)] = bd;
        total += bd;
      }
      int chosen = c % n;
      if (total > 0.0) {
        const double target = rng.next_double() * total;
        double acc = 0.0;
        for (int p = 0; p < n; ++p) {
          acc += best[static_cast<std::size_t>(p)];
          if (acc >= target) {
            chosen = p;
            break;
          }
        }
      }
      std::copy_n(point(chosen), d, centroids.data() + static_cast<std::size_t>(c) * d);
    }
  }

  std::vector<int> assign(static_cast<std::size_t>(n), -1);
  std::vector<int> prev;
  for (int iter = 0; iter < max_iters; ++iter) {
    for (int p = 0; p < n; ++p) {
      int best_c = 0;
      double bd = dist2(point(p), centroids.data());
      for (int c = 1; c < k; ++c) {
        const double dd = dist2(point(p), centroids.data() + static_cast<std::size_t>(c) * d);
        if (dd < bd) {
          bd = dd;
          best_c = c;
        }
      }
      assign[static_cast<std::size_t>(p)] = best_c;
    }
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (int p = 0; p < n; ++p) ++counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(p)])];
    // empty-cluster repair: steal the point farthest from its centroid
    for (int c = 0; c < k; ++c) {
      while (counts[static_cast<std::size_t>(c)] == 0) {
        int worst_p = -1;
        double worst_d = -1.0;
        for (int p = 0; p < n; ++p) {
          const int from = assign[static_cast<std::size_t>(p)];
          if (counts[static_cast<std::size_t>(from)] <= 1) continue;
          const double dd =
              dist2(point(p), centroids.data() + static_cast<std::size_t>(from) * d);
          if (dd > worst_d) {
            worst_d = dd;
            worst_p = p;
          }
        }
        if (worst_p < 0) throw ValidationError("plain_kmeans: cannot repair empty cluster");
        --counts[static_cast<std::size_t>(assign[static_cast<std::size_t>(worst_p)])];
        assign[static_cast<std::size_t>(worst_p)] = c;
        ++counts[static_cast<std::size_t>(c)];
      }
    }
    if (assign == prev) break;
    prev = assign;
    std::fill(centroids.begin(), centroids.end(), 0.0);
    for (int p = 0; p < n; ++p) {
      const double* src = point(p);
      double* dst =
          centroids.data() + static_cast<std::size_t>(assign[static_cast<std::size_t>(p)]) * d;
      for (int j = 0; j < d; ++j) dst[j] += src[j];
    }
    for (int c = 0; c < k; ++c) {
      double* dst = centroids.data() + static_cast<std::size_t>(c) * d;
      for (int j = 0; j < d; ++j) dst[j] /= counts[static_cast<std::size_t>(c)];
    }
  }
  return assign;
}

enum class TreeMode { kBalanced, kUnbalanced };

inline const char* tree_mode_name(TreeMode m) {
  return m == TreeMode::kBalanced ? "balanced" : "unbalanced";
}

struct IdentifierTree {
  int k = 0;
  int depth = 0;
  int n_items = 0;
  int n_tokens = 0;
  std::vector<int> parent;                   // size n_tokens; parent[start] == start
  std::vector<std::vector<int>> children;    // ascending token ids; leaves have none
  std::vector<std::vector<int>> item_paths;  // n_items rows of `depth` tokens

  int start_token() const { return n_items; }
  bool is_leaf(int token) const { return token >= 0 && token < n_items; }

  const std::vector<int>& identifier_of(int item_id) const {
    if (item_id < 0 || item_id >= n_items)
      throw ValidationError("identifier_of: item " + std::to_string(item_id) + " out of range");
    return item_paths[static_cast<std::size_t>(item_id)];
  }

  // Follows a full root-to-leaf path and returns the item id.
  int item_of(std::span<const int> identifier) const {
    if (static_cast<int>(identifier.size()) != depth)
      throw ValidationError("item_of: identifier length != tree depth");
    int cur = start_token();
    for (int i = 0; i < depth; ++i) {
      const int tok = identifier[static_cast<std::size_t>(i)];
      if (!valid_step(cur, tok))
        throw ValidationError("item_of: invalid step at position " + std::to_string(i));
      cur = tok;
    }
    if (!is_leaf(cur)) throw ValidationError("item_of: path does not end at a leaf");
    return cur;
  }

  // Legal next tokens after `prefix` (empty prefix = at the start token),
  // ascending. Pass-through positions return just the leaf; complete
  // identifiers return an empty list.
  std::vector<int> children_of_prefix(std::span<const int> prefix) const {
    if (static_cast<int>(prefix.size()) > depth)
      throw ValidationError("children_of_prefix: prefix longer than depth");
    int cur = start_token();
    for (std::size_t i = 0; i < prefix.size(); ++i) {
      const int tok = prefix[i];
      if (!valid_step(cur, tok))
        throw ValidationError("children_of_prefix: invalid prefix at position " +
                              std::to_string(i));
      cur = tok;
    }
    if (static_cast<int>(prefix.size()) == depth) return {};
    if (is_leaf(cur)) return {cur};
    return children[static_cast<std::size_t>(cur)];
  }

  bool valid_step(int from, int to) const {
    if (to < 0 || to >= n_tokens) return false;
    if (is_leaf(from)) return to == from;  // pass-through self step
    return parent[static_cast<std::size_t>(to)] == from && to != from;
  }

  // Structural invariants shared by the builder and the loader.
  void validate() const {
    if (k < 2) throw ValidationError("tree: k must be >= 2");
    if (n_items < 1 || depth < 1) throw ValidationError("tree: empty");
    if (n_tokens <= n_items) throw ValidationError("tree: token count must exceed item count");
    if (static_cast<int>(parent.size()) != n_tokens)
      throw ValidationError("tree: parent table size mismatch");
    if (static_cast<int>(item_paths.size()) != n_items)
      throw ValidationError("tree: item path count mismatch");
    const int start = start_token();
    if (parent[static_cast<std::size_t>(start)] != start)
      throw ValidationError("tree: start token must be its own parent");
    for (int t = 0; t < n_tokens; ++t) {
      if (t == start) continue;
      const int p = parent[static_cast<std::size_t>(t)];
      if (p < n_items || p >= n_tokens || p == t)
        throw ValidationError("tree: token " + std::to_string(t) + " has invalid parent");
    }
    if (static_cast<int>(children.size()) != n_tokens)
      throw ValidationError("tree: children table size mismatch");
    for (int t = 0; t < n_tokens; ++t) {
      const auto& ch = children[static_cast<std::size_t>(t)];
      if (is_leaf(t)) {
        if (!ch.empty()) throw ValidationError("tree: leaf token with stored children");
        continue;
      }
      const int limit = t == start ? std::min(k, n_items) : k;
      if (ch.empty() || static_cast<int>(ch.size()) > limit)
        throw ValidationError("tree: node " + std::to_string(t) + " has " +
                              std::to_string(ch.size()) + " children (limit " +
                              std::to_string(limit) + ")");
      if (t == start && static_cast<int>(ch.size()) != std::min(k, n_items))
        throw ValidationError("tree: root must have min(k, N) children");
      for (std::size_t i = 0; i < ch.size(); ++i) {
        if (i > 0 && ch[i - 1] >= ch[i]) throw ValidationError("tree: children not ascending");
        if (parent[static_cast<std::size_t>(ch[i])] != t)
          throw ValidationError("tree: children/parent tables disagree");
      }
    }
    std::vector<bool> seen(static_cast<std::size_t>(n_tokens), false);
    seen[static_cast<std::size_t>(start)] = true;
    for (int item = 0; item < n_items; ++item) {
      const auto& path = item_paths[static_cast<std::size_t>(item)];
      if (static_cast<int>(path.size()) != depth)
        throw ValidationError("tree: identifier length mismatch for item " + std::to_string(item));
      int cur = start;
      bool padded = false;
      for (int i = 0; i < depth; ++i) {
        const int tok = path[static_cast<std::size_t>(i)];
        if (!valid_step(cur, tok))
          throw ValidationError("tree: item " + std::to_string(item) +
                                " path breaks at position " + std::to_string(i));
        if (tok == cur) padded = true;
        else if (padded)
          throw ValidationError("tree: item " + std::to_string(item) +
                                " resumes after pass-through padding");
        seen[static_cast<std::size_t>(tok)] = true;
        cur = tok;
      }
      if (cur != item)
        throw ValidationError("tree: identifier of item " + std::to_string(item) +
                              " ends at token " + std::to_string(cur));
    }
    for (int t = 0; t < n_tokens; ++t)
      if (!seen[static_cast<std::size_t>(t)])
        throw ValidationError("tree: unreachable token " + std::to_string(t));
  }

  // Items reachable below each token (unpadded paths).
  std::vector<int> subtree_item_counts() const {
    std::vector<int> counts(static_cast<std::size_t>(n_tokens), 0);
    for (int item = 0; item < n_items; ++item) {
      int prev = -1;
      for (int tok : item_paths[static_cast<std::size_t>(item)]) {
        if (tok == prev) break;  // padding begins
        ++counts[static_cast<std::size_t>(tok)];
        prev = tok;
      }
    }
    counts[static_cast<std::size_t>(start_token())] = n_items;
    return counts;
  }

  // Balanced-mode property: sibling subtree sizes differ by at most one and
  // match the floor(m/k)/floor(m/k)+1 capacity bounds.
  void check_balance() const {
    const std::vector<int> counts = subtree_item_counts();
    for (int t = 0; t < n_tokens; ++t) {
      if (is_leaf(t)) continue;
      const auto& ch = children[static_cast<std::size_t>(t)];
      if (ch.empty()) continue;
      int mn = counts[static_cast<std::size_t>(ch[0])];
      int mx = mn;
      for (int c : ch) {
        mn = std::min(mn, counts[static_cast<std::size_t>(c)]);
        mx = std::max(mx, counts[static_cast<std::size_t>(c)]);
      }
      if (mx - mn > 1)
        throw ValidationError("tree: unbalanced split under token " + std::to_string(t));
      const int m = counts[static_cast<std::size_t>(t)];
      if (m >= k && static_cast<int>(ch.size()) == k) {
        const int lo = m / k;
        if (mn < lo || mx > lo + 1)
          throw ValidationError("tree: split sizes outside capacity bounds under token " +
                                std::to_string(t));
      }
    }
  }

  void save(const std::string& path) const {
    nlohmann::json j;
    j["format"] = "seater-tree/1";
    j["k"] = k;
    j["depth"] = depth;
    j["n_items"] = n_items;
    j["n_tokens"] = n_tokens;
    j["parent"] = parent;
    j["item_paths"] = item_paths;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write tree file: " + path);
    out << j.dump() << '\n';
  }

  static IdentifierTree load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open tree file: " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw IoError("tree file " + path + ": " + e.what());
    }
    if (!j.contains("format") || j["format"] != "seater-tree/1")
      throw IoError("tree file " + path + ": unknown format tag");
    IdentifierTree t;
    try {
      t.k = j.at("k").get<int>();
      t.depth = j.at("depth").get<int>();
      t.n_items = j.at("n_items").get<int>();
      t.n_tokens = j.at("n_tokens").get<int>();
      t.parent = j.at("parent").get<std::vector<int>>();
      t.item_paths = j.at("item_paths").get<std::vector<std::vector<int>>>();
    } catch (const nlohmann::json::exception& e) {
      throw IoError("tree file " + path + ": " + e.what());
    }
    t.rebuild_children();
    t.validate();
    return t;
  }

  void rebuild_children() {
    children.assign(static_cast<std::size_t>(n_tokens), {});
    for (int t = 0; t < n_tokens; ++t) {
      if (t == start_token()) continue;
      const int p = parent[static_cast<std::size_t>(t)];
      if (p >= 0 && p < n_tokens) children[static_cast<std::size_t>(p)].push_back(t);
    }
    for (auto& ch : children) std::sort(ch.begin(), ch.end());
  }
};

namespace detail {

struct BuildNode {
  int item = -1;                // >= 0 for leaves
  std::vector<int> child_idx;   // arena indices
};

// Recursive clustering. `items` arrives in ascending item-id order.
inline void build_rec(std::vector<BuildNode>& arena, int node, std::vector<int> items,
                      const ItemEmbeddingMatrix& emb, int k, TreeMode mode, std::uint64_t seed,
                      int level) {
  const int m = static_cast<int>(items.size());
  if (m <= k) {
    for (int item : items) {
      arena.push_back({item, {}});
      arena[static_cast<std::size_t>(node)].child_idx.push_back(static_cast<int>(arena.size()) - 1);
    }
    return;
  }
  std::vector<double> pts(static_cast<std::size_t>(m) * emb.dim);
  for (int i = 0; i < m; ++i)
    std::copy_n(emb.row(items[static_cast<std::size_t>(i)]), emb.dim,
                pts.data() + static_cast<std::size_t>(i) * emb.dim);
  const std::uint64_t sub_seed = derive_seed(seed, (static_cast<std::uint64_t>(level) << 32) ^
                                                       static_cast<std::uint64_t>(items[0]));
  std::vector<int> labels;
  if (mode == TreeMode::kBalanced) {
    const int lo = m / k;
    labels = constrained_kmeans(pts, m, emb.dim, k, lo, lo + 1, sub_seed);
  } else {
    labels = plain_kmeans(pts, m, emb.dim, k, sub_seed);
  }
  std::vector<std::vector<int>> groups(static_cast<std::size_t>(k));
  for (int i = 0; i < m; ++i)
    groups[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])].push_back(
        items[static_cast<std::size_t>(i)]);
  int nonempty = 0;
  for (const auto& g : groups)
    if (!g.empty()) ++nonempty;
  if (nonempty <= 1) {
    // degenerate clustering (coincident points): force an even split
    for (auto& g : groups) g.clear();
    for (int i = 0; i < m; ++i)
      groups[static_cast<std::size_t>(i % k)].push_back(items[static_cast<std::size_t>(i)]);
  }
  for (int c = 0; c < k; ++c) {
    auto& g = groups[static_cast<std::size_t>(c)];
    if (g.empty()) continue;
    arena.push_back({-1, {}});
    const int child = static_cast<int>(arena.size()) - 1;
    arena[static_cast<std::size_t>(node)].child_idx.push_back(child);
    build_rec(arena, child, std::move(g), emb, k, mode, seed, level + 1);
  }
}

}  // namespace detail

inline IdentifierTree build_identifier_tree(const ItemEmbeddingMatrix& emb, int k,
                                            std::uint64_t seed,
                                            TreeMode mode = TreeMode::kBalanced) {
  if (k < 2) throw ValidationError("build_identifier_tree: k must be >= 2");
  emb.validate();
  const int n = emb.n_items;

  std::vector<detail::BuildNode> arena;
  arena.push_back({-1, {}});  // root = start token
  {
    std::vector<int> all(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
    detail::build_rec(arena, 0, std::move(all), emb, k, mode, seed, 0);
  }

  // per-item arena path (internal nodes after the root, then the leaf)
  std::vector<std::vector<int>> arena_path(static_cast<std::size_t>(n));
  {
    std::vector<int> cur;
    auto dfs = [&](auto&& self, int node) -> void {
      const auto& bn = arena[static_cast<std::size_t>(node)];
      if (bn.item >= 0) {
        auto& path = arena_path[static_cast<std::size_t>(bn.item)];
        path = cur;
        path.push_back(node);
        return;
      }
      for (int child : bn.child_idx) {
        const bool internal = arena[static_cast<std::size_t>(child)].item < 0;
        if (internal) cur.push_back(child);
        self(self, child);
        if (internal) cur.pop_back();
      }
    };
    dfs(dfs, 0);
  }

  int depth = 0;
  for (int i = 0; i < n; ++i)
    depth = std::max(depth, static_cast<int>(arena_path[static_cast<std::size_t>(i)].size()));

  // token ids: leaves = item ids; start = N; internal nodes numbered from
  // N+1 in first-visit order scanning items by ascending id.
  std::vector<int> token_of(arena.size(), -1);
  token_of[0] = n;  // start
  int next_token = n + 1;
  for (int item = 0; item < n; ++item) {
    const auto& path = arena_path[static_cast<std::size_t>(item)];
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
      const int node = path[i];
      if (token_of[static_cast<std::size_t>(node)] < 0)
        token_of[static_cast<std::size_t>(node)] = next_token++;
    }
    token_of[static_cast<std::size_t>(path.back())] = item;
  }

  IdentifierTree tree;
  tree.k = k;
  tree.depth = depth;
  tree.n_items = n;
  tree.n_tokens = next_token;
  tree.parent.assign(static_cast<std::size_t>(next_token), -1);
  tree.parent[static_cast<std::size_t>(n)] = n;
  for (std::size_t node = 0; node < arena.size(); ++node) {
    const int tok = token_of[node];
    for (int child : arena[node].child_idx)
      tree.parent[static_cast<std::size_t>(token_of[static_cast<std::size_t>(child)])] = tok;
  }
  tree.item_paths.assign(static_cast<std::size_t>(n), {});
  for (int item = 0; item < n; ++item) {
    auto& out = tree.item_paths[static_cast<std::size_t>(item)];
    for (int node : arena_path[static_cast<std::size_t>(item)])
      out.push_back(token_of[static_cast<std::size_t>(node)]);
    while (static_cast<int>(out.size()) < depth) out.push_back(item);  // pass-through padding
  }
  tree.rebuild_children();
  tree.validate();
  if (mode == TreeMode::kBalanced) tree.check_balance();
  return tree;
}

}  // namespace seater
