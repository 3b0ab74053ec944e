#pragma once

// Prefix-constrained beam search over the identifier tree. Candidate sets
// come from the tree, so every decoded sequence is a real identifier. Log
// probabilities accumulate per step; pass-through and other singleton steps
// contribute exactly log 1 = 0 and are not counted as scored expansions.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "seater/errors.hpp"
#include "seater/idtree.hpp"
#include "seater/model.hpp"

namespace seater {

struct BeamHypothesis {
  std::vector<int> prefix;
  double log_prob = 0.0;
};

struct RetrievalResult {
  std::vector<int> items;
  std::vector<double> scores;   // cumulative log probabilities, non-increasing
  long long expansions = 0;     // candidates scored through the softmax head
};

inline void check_model_tree(const Model& model, const IdentifierTree& tree) {
  const ModelConfig& c = model.config();
  if (c.k != tree.k || c.depth != tree.depth || c.n_items != tree.n_items ||
      c.n_tokens != tree.n_tokens)
    throw ValidationError("model and tree disagree on identifier geometry");
}

// Beam ordering: higher score first; ties by smaller last token id, then
// lexicographically smaller prefix.
inline bool beam_before(const BeamHypothesis& a, const BeamHypothesis& b) {
  if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
  const int la = a.prefix.empty() ? -1 : a.prefix.back();
  const int lb = b.prefix.empty() ? -1 : b.prefix.back();
  if (la != lb) return la < lb;
  return a.prefix < b.prefix;
}

inline RetrievalResult constrained_beam_search(Model& model, const IdentifierTree& tree,
                                               std::span<const int> history, int beam_size,
                                               int top_n) {
  check_model_tree(model, tree);
  if (history.empty()) throw ValidationError("beam search: empty history");
  if (top_n < 1 || beam_size < top_n)
    throw ValidationError("beam search: need beam_size >= top_n >= 1");
  if (top_n > tree.n_items)
    throw ValidationError("beam search: top_n exceeds catalog size");

  ad::Tape tape(false);
  EncoderOutput enc = model.encode(tape, history);

  RetrievalResult out;
  std::vector<BeamHypothesis> live;
  live.push_back({});
  std::vector<BeamHypothesis> next;
  for (int step = 0; step < tree.depth; ++step) {
    next.clear();
    for (BeamHypothesis& hyp : live) {
      const std::vector<int> cands = tree.children_of_prefix(hyp.prefix);
      if (cands.size() == 1) {
        BeamHypothesis ext;
        ext.prefix = hyp.prefix;
        ext.prefix.push_back(cands[0]);
        ext.log_prob = hyp.log_prob;  // probability exactly 1
        next.push_back(std::move(ext));
        continue;
      }
      ad::Var dec = model.decode(tape, enc, hyp.prefix);
      ad::Var last = tape.row(dec, static_cast<int>(hyp.prefix.size()));
      ad::Var logp = tape.log_softmax(model.step_logits(tape, last, cands));
      const Tensor& lp = tape.value(logp);
      out.expansions += static_cast<long long>(cands.size());
      for (std::size_t c = 0; c < cands.size(); ++c) {
        BeamHypothesis ext;
        ext.prefix = hyp.prefix;
        ext.prefix.push_back(cands[c]);
        ext.log_prob = hyp.log_prob + lp.data[c];
        next.push_back(std::move(ext));
      }
    }
    std::sort(next.begin(), next.end(), beam_before);
    if (static_cast<int>(next.size()) > beam_size) next.resize(static_cast<std::size_t>(beam_size));
    live.swap(next);
  }

  for (int i = 0; i < top_n && i < static_cast<int>(live.size()); ++i) {
    out.items.push_back(tree.item_of(live[static_cast<std::size_t>(i)].prefix));
    out.scores.push_back(live[static_cast<std::size_t>(i)].log_prob);
  }
  return out;
}

// Batch driver over eval users; one query per context, beam defaults to 50.
inline std::vector<RetrievalResult> retrieve_topn(Model& model, const IdentifierTree& tree,
                                                  const std::vector<std::vector<int>>& histories,
                                                  int beam_size = 50, int top_n = 50) {
  std::vector<RetrievalResult> out;
  out.reserve(histories.size());
  for (const auto& h : histories)
    out.push_back(constrained_beam_search(model, tree, h, beam_size, top_n));
  return out;
}

inline void write_results_jsonl(const std::string& path, const std::vector<std::int64_t>& user_ids,
                                const std::vector<RetrievalResult>& results) {
  if (user_ids.size() != results.size())
    throw ValidationError("write_results_jsonl: user/result count mismatch");
  std::ofstream out(path);
  if (!out) throw IoError("cannot write results file: " + path);
  for (std::size_t i = 0; i < results.size(); ++i) {
    nlohmann::json j;
    j["user_id"] = user_ids[i];
    j["items"] = results[i].items;
    j["scores"] = results[i].scores;
    out << j.dump() << '\n';
  }
}

struct ResultRow {
  std::int64_t user_id = 0;
  std::vector<int> items;
  std::vector<double> scores;
};

inline std::vector<ResultRow> read_results_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open results file: " + path);
  std::vector<ResultRow> rows;
  std::string line;
  long long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      nlohmann::json j = nlohmann::json::parse(line);
      ResultRow r;
      r.user_id = j.at("user_id").get<std::int64_t>();
      r.items = j.at("items").get<std::vector<int>>();
      r.scores = j.at("scores").get<std::vector<double>>();
      rows.push_back(std::move(r));
    } catch (const nlohmann::json::exception& e) {
      throw IoError("results file " + path + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return rows;
}

}  // namespace seater
