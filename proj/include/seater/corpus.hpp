#pragma once

// Interaction logs, per-user histories, 8:1:1 user splits with the 80/20
// context/target cut, and a synthetic Markov corpus for experiments.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "seater/errors.hpp"
#include "seater/rng.hpp"

namespace seater {

struct Interaction {
  std::int64_t user_id = 0;
  std::int64_t item_id = 0;
  std::int64_t timestamp = 0;
};

struct UserHistory {
  std::int64_t user_id = 0;
  std::vector<int> items;  // interaction order preserved
};

struct EvalUser {
  std::int64_t user_id = 0;
  std::vector<int> context;  // first ceil(0.8 * t) items
  std::vector<int> targets;  // remaining items, non-empty
};

struct DatasetSplit {
  std::vector<UserHistory> train;
  std::vector<EvalUser> valid;
  std::vector<EvalUser> test;
};

struct LoadedInteractions {
  std::vector<Interaction> interactions;
  int n_items = 0;
};

struct HistoriesResult {
  std::vector<UserHistory> histories;  // ascending user id
  int dropped_users = 0;
};

namespace detail {

inline bool parse_i64(const std::string& s, std::int64_t& out) {
  if (s.empty()) return false;
  std::int64_t v = 0;
  for (char c : s) {
    if (c < '0' || c > '9') return false;
    v = v * 10 + (c - '0');
  }
  out = v;
  return true;
}

}  // namespace detail

// Reads `user<TAB>item<TAB>timestamp` lines (all base-10, non-negative).
// Lines starting with '#' are comments; blank lines are ignored. The catalog
// size is max item id + 1 unless a hint is given, in which case any item id
// at or above the hint is an error.
inline LoadedInteractions load_interactions(const std::string& path,
                                            std::optional<std::int64_t> n_items_hint = {}) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open interactions file: " + path);
  LoadedInteractions out;
  std::int64_t max_item = -1;
  std::string line;
  long long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::int64_t fields[3];
    std::size_t start = 0;
    bool ok = true;
    for (int f = 0; f < 3 && ok; ++f) {
      std::size_t end = f < 2 ? line.find('\t', start) : line.size();
      if (f < 2 && end == std::string::npos) {
        ok = false;
        break;
      }
      ok = detail::parse_i64(line.substr(start, end - start), fields[f]);
      start = end + 1;
    }
    if (!ok)
      throw IoError("parse error in " + path + " at line " + std::to_string(line_no));
    if (n_items_hint && fields[1] >= *n_items_hint)
      throw ValidationError("item id " + std::to_string(fields[1]) + " at line " +
                            std::to_string(line_no) + " exceeds declared catalog size " +
                            std::to_string(*n_items_hint));
    out.interactions.push_back({fields[0], fields[1], fields[2]});
    max_item = std::max(max_item, fields[1]);
  }
  out.n_items = n_items_hint ? static_cast<int>(*n_items_hint) : static_cast<int>(max_item + 1);
  return out;
}

inline void write_interactions(const std::string& path, const std::vector<Interaction>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write interactions file: " + path);
  for (const auto& r : rows)
    out << r.user_id << '\t' << r.item_id << '\t' << r.timestamp << '\n';
}

// Groups interactions per user, sorts by (timestamp, file order), and drops
// users with fewer than min_history_len events.
inline HistoriesResult build_histories(const std::vector<Interaction>& interactions,
                                       int min_history_len = 5) {
  if (min_history_len < 1) throw ValidationError("min_history_len must be >= 1");
  struct Row {
    std::int64_t ts;
    std::size_t order;
    int item;
  };
  std::map<std::int64_t, std::vector<Row>> per_user;
  for (std::size_t i = 0; i < interactions.size(); ++i) {
    const auto& r = interactions[i];
    per_user[r.user_id].push_back({r.timestamp, i, static_cast<int>(r.item_id)});
  }
  HistoriesResult out;
  for (auto& [user, rows] : per_user) {
    if (static_cast<int>(rows.size()) < min_history_len) {
      ++out.dropped_users;
      continue;
    }
    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
      return a.ts != b.ts ? a.ts < b.ts : a.order < b.order;
    });
    UserHistory h;
    h.user_id = user;
    h.items.reserve(rows.size());
    for (const auto& r : rows) h.items.push_back(r.item);
    out.histories.push_back(std::move(h));
  }
  return out;
}

// ceil(0.8 * t), capped at t - 1 so eval targets are never empty (the cap
// only matters for t in {2, 3, 4} where the ceiling reaches t itself).
inline int context_length(int t) { return std::min((4 * t + 4) / 5, t - 1); }

inline EvalUser make_eval_user(const UserHistory& h) {
  const int t = static_cast<int>(h.items.size());
  const int c = context_length(t);
  EvalUser u;
  u.user_id = h.user_id;
  u.context.assign(h.items.begin(), h.items.begin() + c);
  u.targets.assign(h.items.begin() + c, h.items.end());
  return u;
}

// Deterministic 8:1:1 user split. Eval users (valid/test) get the context /
// target cut; users with fewer than 2 items cannot be evaluated and are not
// split.
inline DatasetSplit split_users(const std::vector<UserHistory>& histories, std::uint64_t seed) {
  std::vector<const UserHistory*> retained;
  for (const auto& h : histories)
    if (h.items.size() >= 2) retained.push_back(&h);
  const std::size_t n = retained.size();
  if (n < 10) throw ValidationError("split_users: need at least 10 users, have " + std::to_string(n));

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, 0xA110CULL));
  rng.shuffle(order);

  const std::size_t n_train = (8 * n + 5) / 10;
  const std::size_t n_valid = (n - n_train + 1) / 2;

  DatasetSplit split;
  for (std::size_t i = 0; i < n; ++i) {
    const UserHistory& h = *retained[order[i]];
    if (i < n_train)
      split.train.push_back(h);
    else if (i < n_train + n_valid)
      split.valid.push_back(make_eval_user(h));
    else
      split.test.push_back(make_eval_user(h));
  }
  return split;
}

// The per-item high-probability successor used by the synthetic corpus:
// items linked into one seeded cycle, so successor(i) != i always.
inline std::vector<int> markov_successors(int n_items, std::uint64_t rule_seed) {
  if (n_items < 2) throw ValidationError("markov_successors: need at least 2 items");
  std::vector<int> cycle(static_cast<std::size_t>(n_items));
  for (int i = 0; i < n_items; ++i) cycle[static_cast<std::size_t>(i)] = i;
  Rng rule_rng(derive_seed(rule_seed, 0x5EED5ULL));
  rule_rng.shuffle(cycle);
  std::vector<int> successor(static_cast<std::size_t>(n_items));
  for (int j = 0; j < n_items; ++j)
    successor[static_cast<std::size_t>(cycle[static_cast<std::size_t>(j)])] =
        cycle[static_cast<std::size_t>((j + 1) % n_items)];
  return successor;
}

// Synthetic next-item corpus. Each step follows the Markov successor with
// probability 0.8 and jumps to a uniform non-successor item otherwise.
// Sequence lengths are uniform in [10, 30]; timestamps count up per user.
inline std::vector<Interaction> synthesize_corpus(int n_users, int n_items,
                                                  std::uint64_t rule_seed) {
  const std::vector<int> successor = markov_successors(n_items, rule_seed);
  std::vector<Interaction> out;
  for (int u = 0; u < n_users; ++u) {
    Rng rng(derive_seed(rule_seed, 0x100000ULL + static_cast<std::uint64_t>(u)));
    const int len = 10 + static_cast<int>(rng.below(21));
    int cur = static_cast<int>(rng.below(static_cast<std::uint64_t>(n_items)));
    out.push_back({u, cur, 0});
    for (int s = 1; s < len; ++s) {
      int next;
      const int succ = successor[static_cast<std::size_t>(cur)];
      if (rng.next_double() < 0.8) {
        next = succ;
      } else {
        next = static_cast<int>(rng.below(static_cast<std::uint64_t>(n_items - 1)));
        if (next >= succ) ++next;  // uniform over items other than the successor
      }
      out.push_back({u, next, s});
      cur = next;
    }
  }
  return out;
}

}  // namespace seater
