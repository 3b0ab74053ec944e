#pragma once

// One-layer-by-default pre-LN transformer encoder-decoder over the shared
// token/item embedding table. The decoder scores the legal children of a
// tree prefix by inner product with their token embeddings (constrained
// softmax); pooled encoder/decoder states feed the bilinear similarity used
// by the ranking task.

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "seater/autodiff.hpp"
#include "seater/errors.hpp"
#include "seater/idtree.hpp"
#include "seater/rng.hpp"

namespace seater {

struct ModelConfig {
  int d = 64;
  int n_layers = 1;
  int n_heads = 4;
  int ffn_dim = 0;  // 0 means 4*d
  int max_history_len = 50;
  double dropout = 0.1;
  // tree geometry
  int k = 0;
  int depth = 0;
  int n_items = 0;
  int n_tokens = 0;

  int ffn() const { return ffn_dim > 0 ? ffn_dim : 4 * d; }

  void validate() const {
    if (d < 1 || n_layers < 1 || n_heads < 1) throw ValidationError("model config: bad sizes");
    if (d % n_heads != 0) throw ValidationError("model config: d must be divisible by n_heads");
    if (max_history_len < 1) throw ValidationError("model config: max_history_len must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw ValidationError("model config: dropout out of range");
    if (k < 2 || depth < 1 || n_items < 1 || n_tokens <= n_items)
      throw ValidationError("model config: missing tree geometry");
  }

  static ModelConfig for_tree(const IdentifierTree& tree, int d = 64, int n_layers = 1,
                              int n_heads = 4, int ffn_dim = 0, int max_history_len = 50,
                              double dropout = 0.1) {
    ModelConfig c;
    c.d = d;
    c.n_layers = n_layers;
    c.n_heads = n_heads;
    c.ffn_dim = ffn_dim;
    c.max_history_len = max_history_len;
    c.dropout = dropout;
    c.k = tree.k;
    c.depth = tree.depth;
    c.n_items = tree.n_items;
    c.n_tokens = tree.n_tokens;
    c.validate();
    return c;
  }
};

struct EncoderOutput {
  ad::Var x;                       // t x d hidden states
  int t = 0;
  std::vector<std::uint8_t> mask;  // 1 = attendable; all ones from encode()
};

class Model {
 public:
  explicit Model(ModelConfig cfg) : cfg_(cfg) { cfg_.validate(); }

  ModelConfig& config() { return cfg_; }
  const ModelConfig& config() const { return cfg_; }
  ad::ParamStore& params() { return params_; }
  const ad::ParamStore& params() const { return params_; }

  // (name, shape) of every parameter for this configuration.
  std::vector<std::pair<std::string, std::vector<int>>> param_spec() const {
    std::vector<std::pair<std::string, std::vector<int>>> out;
    const int d = cfg_.d, f = cfg_.ffn();
    out.push_back({"embed", {cfg_.n_tokens, d}});
    out.push_back({"enc.pos", {cfg_.max_history_len, d}});
    out.push_back({"dec.pos", {cfg_.depth + 1, d}});
    auto attn = [&](const std::string& p) {
      out.push_back({p + ".wq", {d, d}});
      out.push_back({p + ".wk", {d, d}});
      out.push_back({p + ".wv", {d, d}});
      out.push_back({p + ".wo", {d, d}});
      out.push_back({p + ".bo", {d}});
    };
    auto ln = [&](const std::string& p) {
      out.push_back({p + ".g", {d}});
      out.push_back({p + ".b", {d}});
    };
    auto ffn = [&](const std::string& p) {
      out.push_back({p + ".w1", {d, f}});
      out.push_back({p + ".b1", {f}});
      out.push_back({p + ".w2", {f, d}});
      out.push_back({p + ".b2", {d}});
    };
    for (int l = 0; l < cfg_.n_layers; ++l) {
      const std::string e = "enc.L" + std::to_string(l);
      ln(e + ".ln1");
      attn(e + ".attn");
      ln(e + ".ln2");
      ffn(e + ".ffn");
      const std::string dp = "dec.L" + std::to_string(l);
      ln(dp + ".ln1");
      attn(dp + ".self");
      ln(dp + ".ln2");
      attn(dp + ".cross");
      ln(dp + ".ln3");
      ffn(dp + ".ffn");
    }
    ln("enc.lnf");
    ln("dec.lnf");
    out.push_back({"w_sim", {d, d}});
    return out;
  }

  void init_params(std::uint64_t seed) {
    Rng rng(derive_seed(seed, 0x1A17ULL));
    for (const auto& [name, shape] : param_spec()) {
      Tensor t(shape);
      if (name.ends_with(".g")) {
        for (auto& v : t.data) v = 1.0;
      } else if (name.ends_with(".b") || name.ends_with(".bo") || name.ends_with(".b1") ||
                 name.ends_with(".b2")) {
        // zero biases
      } else if (name == "embed") {
        const double s = 1.0 / std::sqrt(static_cast<double>(cfg_.d));
        for (auto& v : t.data) v = s * rng.gaussian();
      } else if (name == "enc.pos" || name == "dec.pos") {
        for (auto& v : t.data) v = 0.02 * rng.gaussian();
      } else {
        const double s = 1.0 / std::sqrt(static_cast<double>(shape[0]));
        for (auto& v : t.data) v = s * rng.gaussian();
      }
      params_.create(name, std::move(t));
    }
  }

  // Encodes the most recent max_history_len items of a user history.
  EncoderOutput encode(ad::Tape& tape, std::span<const int> history, bool training = false,
                       Rng* drop_rng = nullptr) {
    if (history.empty()) throw ValidationError("encode: empty history");
    const int keep = std::min<int>(static_cast<int>(history.size()), cfg_.max_history_len);
    std::vector<int> items(history.end() - keep, history.end());
    for (int it : items)
      if (it < 0 || it >= cfg_.n_items)
        throw ValidationError("encode: item id " + std::to_string(it) + " out of range");

    ad::Var e = tape.param(params_, "embed");
    ad::Var x = tape.embedding_rows(e, items);
    x = tape.add(x, position_rows(tape, "enc.pos", keep));
    x = maybe_dropout(tape, x, training, drop_rng);
    for (int l = 0; l < cfg_.n_layers; ++l) {
      const std::string p = "enc.L" + std::to_string(l);
      ad::Var h = layer_norm_p(tape, x, p + ".ln1");
      ad::Var a = attention(tape, h, h, p + ".attn", /*causal=*/false, nullptr);
      x = tape.add(x, maybe_dropout(tape, a, training, drop_rng));
      h = layer_norm_p(tape, x, p + ".ln2");
      ad::Var fo = ffn_block(tape, h, p + ".ffn");
      x = tape.add(x, maybe_dropout(tape, fo, training, drop_rng));
    }
    x = layer_norm_p(tape, x, "enc.lnf");
    EncoderOutput out;
    out.x = x;
    out.t = keep;
    out.mask.assign(static_cast<std::size_t>(keep), 1);
    return out;
  }

  // Decoder states for input [start, prefix...]; row i predicts token i of
  // the identifier. Output has prefix.size() + 1 rows.
  ad::Var decode(ad::Tape& tape, const EncoderOutput& enc, std::span<const int> prefix,
                 bool training = false, Rng* drop_rng = nullptr) {
    if (static_cast<int>(prefix.size()) > cfg_.depth)
      throw ValidationError("decode: prefix longer than identifier length");
    bool any_attendable = false;
    for (std::uint8_t m : enc.mask) any_attendable |= m != 0;
    if (!any_attendable) throw ValidationError("decode: encoder mask has no attendable position");

    std::vector<int> tokens;
    tokens.reserve(prefix.size() + 1);
    tokens.push_back(cfg_.n_items);  // start token
    for (int tk : prefix) {
      if (tk < 0 || tk >= cfg_.n_tokens)
        throw ValidationError("decode: token id " + std::to_string(tk) + " out of range [0," +
                              std::to_string(cfg_.n_tokens) + ")");
      tokens.push_back(tk);
    }
    const int rows = static_cast<int>(tokens.size());

    ad::Var e = tape.param(params_, "embed");
    ad::Var y = tape.embedding_rows(e, tokens);
    y = tape.add(y, position_rows(tape, "dec.pos", rows));
    y = maybe_dropout(tape, y, training, drop_rng);
    for (int l = 0; l < cfg_.n_layers; ++l) {
      const std::string p = "dec.L" + std::to_string(l);
      ad::Var h = layer_norm_p(tape, y, p + ".ln1");
      ad::Var a = attention(tape, h, h, p + ".self", /*causal=*/true, nullptr);
      y = tape.add(y, maybe_dropout(tape, a, training, drop_rng));
      h = layer_norm_p(tape, y, p + ".ln2");
      ad::Var c = attention(tape, h, enc.x, p + ".cross", /*causal=*/false, &enc.mask);
      y = tape.add(y, maybe_dropout(tape, c, training, drop_rng));
      h = layer_norm_p(tape, y, p + ".ln3");
      ad::Var fo = ffn_block(tape, h, p + ".ffn");
      y = tape.add(y, maybe_dropout(tape, fo, training, drop_rng));
    }
    return layer_norm_p(tape, y, "dec.lnf");
  }

  // Logits of the candidate tokens against one decoder state.
  ad::Var step_logits(ad::Tape& tape, ad::Var dec_row, const std::vector<int>& candidates) {
    if (candidates.empty()) throw ValidationError("step_logits: empty candidate set");
    ad::Var e = tape.param(params_, "embed");
    ad::Var cand = tape.embedding_rows(e, candidates);
    return tape.matvec(cand, dec_row);
  }

  // Constrained next-token distribution (softmax over the candidate set).
  std::vector<double> step_distribution(ad::Tape& tape, ad::Var dec_row,
                                        const std::vector<int>& candidates) {
    ad::Var probs = tape.softmax_rows(step_logits(tape, dec_row, candidates));
    return tape.value(probs).data;
  }

  // Mean pooling over attendable encoder rows.
  ad::Var pooled_encoder(ad::Tape& tape, const EncoderOutput& enc) {
    int valid = 0;
    for (std::uint8_t m : enc.mask) valid += m != 0;
    if (valid == 0) throw ValidationError("pooled_encoder: all positions masked");
    Tensor w({enc.t});
    for (int i = 0; i < enc.t; ++i)
      w.data[static_cast<std::size_t>(i)] = enc.mask[static_cast<std::size_t>(i)] ? 1.0 / valid : 0.0;
    return tape.matvec(tape.transpose(enc.x), tape.input(std::move(w)));
  }

  ad::Var pooled_decoder(ad::Tape& tape, ad::Var dec) { return tape.mean_rows(dec); }

  // s(p, q) = sigmoid(p^T W q)
  ad::Var pair_similarity(ad::Tape& tape, ad::Var z_x, ad::Var z_y) {
    ad::Var w = tape.param(params_, "w_sim");
    return tape.sigmoid(tape.dot(z_x, tape.matvec(w, z_y)));
  }

  void save_checkpoint(const std::string& path) const;
  static Model load_checkpoint(const std::string& path, const IdentifierTree& tree);

 private:
  ad::Var position_rows(ad::Tape& tape, const std::string& name, int rows) {
    ad::Var p = tape.param(params_, name);
    std::vector<int> ids(static_cast<std::size_t>(rows));
    for (int i = 0; i < rows; ++i) ids[static_cast<std::size_t>(i)] = i;
    return tape.embedding_rows(p, ids);
  }

  ad::Var layer_norm_p(ad::Tape& tape, ad::Var x, const std::string& prefix) {
    return tape.layer_norm(x, tape.param(params_, prefix + ".g"),
                           tape.param(params_, prefix + ".b"));
  }

  ad::Var ffn_block(ad::Tape& tape, ad::Var x, const std::string& p) {
    ad::Var h = tape.relu(tape.add(tape.matmul(x, tape.param(params_, p + ".w1")),
                                   tape.param(params_, p + ".b1")));
    return tape.add(tape.matmul(h, tape.param(params_, p + ".w2")),
                    tape.param(params_, p + ".b2"));
  }

  ad::Var attention(ad::Tape& tape, ad::Var q_in, ad::Var kv_in, const std::string& p, bool causal,
                    const std::vector<std::uint8_t>* kv_mask) {
    const int d = cfg_.d;
    const int heads = cfg_.n_heads;
    const int dh = d / heads;
    ad::Var q = tape.matmul(q_in, tape.param(params_, p + ".wq"));
    ad::Var k = tape.matmul(kv_in, tape.param(params_, p + ".wk"));
    ad::Var v = tape.matmul(kv_in, tape.param(params_, p + ".wv"));
    const int tq = tape.value(q).shape[0];
    const int tk = tape.value(k).shape[0];

    ad::Var mask{-1};
    if (causal || kv_mask) {
      Tensor m({tq, tk});
      for (int i = 0; i < tq; ++i)
        for (int j = 0; j < tk; ++j) {
          double v_ = 0.0;
          if (causal && j > i) v_ = -1e9;
          if (kv_mask && !(*kv_mask)[static_cast<std::size_t>(j)]) v_ = -1e9;
          m.at(i, j) = v_;
        }
      mask = tape.input(std::move(m));
    }

    std::vector<ad::Var> head_outs;
    head_outs.reserve(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      ad::Var qh = tape.slice_cols(q, h * dh, (h + 1) * dh);
      ad::Var kh = tape.slice_cols(k, h * dh, (h + 1) * dh);
      ad::Var vh = tape.slice_cols(v, h * dh, (h + 1) * dh);
      ad::Var scores = tape.scale(tape.matmul(qh, tape.transpose(kh)),
                                  1.0 / std::sqrt(static_cast<double>(dh)));
      if (mask.valid()) scores = tape.add(scores, mask);
      head_outs.push_back(tape.matmul(tape.softmax_rows(scores), vh));
    }
    ad::Var cat = heads == 1 ? head_outs[0] : tape.concat_cols(head_outs);
    return tape.add(tape.matmul(cat, tape.param(params_, p + ".wo")),
                    tape.param(params_, p + ".bo"));
  }

  ad::Var maybe_dropout(ad::Tape& tape, ad::Var x, bool training, Rng* rng) {
    if (!training || cfg_.dropout <= 0.0 || rng == nullptr) return x;
    const Tensor& v = tape.value(x);
    Tensor m(v.shape);
    const double keep = 1.0 - cfg_.dropout;
    for (auto& mv : m.data) mv = rng->next_double() < keep ? 1.0 / keep : 0.0;
    return tape.mul(x, tape.input(std::move(m)));
  }

  ModelConfig cfg_;
  ad::ParamStore params_;
};

// ---- checkpoint format ----
// magic "SEATER01", manifest of 10 int64 fields (d, n_layers, n_heads,
// ffn_dim, max_history_len, dropout*1e6, k, depth, n_items, n_tokens), u64
// parameter count, then per parameter: u32 name length, name bytes, u32
// rank, u64 dims, little-endian float32 data.

namespace detail {

template <typename T>
void write_pod(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream& in, const std::string& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("checkpoint " + path + ": truncated file");
  return v;
}

}  // namespace detail

inline void Model::save_checkpoint(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write("SEATER01", 8);
  const std::int64_t manifest[10] = {
      cfg_.d,
      cfg_.n_layers,
      cfg_.n_heads,
      cfg_.ffn(),
      cfg_.max_history_len,
      static_cast<std::int64_t>(cfg_.dropout * 1e6 + 0.5),
      cfg_.k,
      cfg_.depth,
      cfg_.n_items,
      cfg_.n_tokens,
  };
  for (std::int64_t f : manifest) detail::write_pod(out, f);
  const auto names = params_.names();
  detail::write_pod(out, static_cast<std::uint64_t>(names.size()));
  for (const auto& name : names) {
    const Tensor& t = params_.value(name);
    detail::write_pod(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_pod(out, static_cast<std::uint32_t>(t.shape.size()));
    for (int dim : t.shape) detail::write_pod(out, static_cast<std::uint64_t>(dim));
    for (double v : t.data) detail::write_pod(out, static_cast<float>(v));
  }
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

inline Model Model::load_checkpoint(const std::string& path, const IdentifierTree& tree) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "SEATER01", 8) != 0)
    throw IoError("checkpoint " + path + ": bad magic");
  std::int64_t m[10];
  for (auto& f : m) f = detail::read_pod<std::int64_t>(in, path);
  ModelConfig cfg;
  cfg.d = static_cast<int>(m[0]);
  cfg.n_layers = static_cast<int>(m[1]);
  cfg.n_heads = static_cast<int>(m[2]);
  cfg.ffn_dim = static_cast<int>(m[3]);
  cfg.max_history_len = static_cast<int>(m[4]);
  cfg.dropout = static_cast<double>(m[5]) / 1e6;
  cfg.k = static_cast<int>(m[6]);
  cfg.depth = static_cast<int>(m[7]);
  cfg.n_items = static_cast<int>(m[8]);
  cfg.n_tokens = static_cast<int>(m[9]);
  cfg.validate();
  if (cfg.k != tree.k || cfg.depth != tree.depth || cfg.n_items != tree.n_items ||
      cfg.n_tokens != tree.n_tokens)
    throw ValidationError("checkpoint " + path + ": tree geometry mismatch (checkpoint k=" +
                          std::to_string(cfg.k) + ", depth=" + std::to_string(cfg.depth) +
                          ", N=" + std::to_string(cfg.n_items) + ", M=" +
                          std::to_string(cfg.n_tokens) + ")");

  Model model(cfg);
  const std::uint64_t n_params = detail::read_pod<std::uint64_t>(in, path);
  auto spec = model.param_spec();
  std::map<std::string, std::vector<int>> expected(spec.begin(), spec.end());
  if (n_params != expected.size())
    throw ValidationError("checkpoint " + path + ": unexpected parameter count");
  for (std::uint64_t i = 0; i < n_params; ++i) {
    const std::uint32_t name_len = detail::read_pod<std::uint32_t>(in, path);
    if (name_len > 4096) throw IoError("checkpoint " + path + ": corrupt name length");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw IoError("checkpoint " + path + ": truncated file");
    const std::uint32_t rank = detail::read_pod<std::uint32_t>(in, path);
    std::vector<int> shape(rank);
    for (auto& dim : shape) dim = static_cast<int>(detail::read_pod<std::uint64_t>(in, path));
    auto it = expected.find(name);
    if (it == expected.end())
      throw ValidationError("checkpoint " + path + ": unknown parameter " + name);
    if (it->second != shape)
      throw ValidationError("checkpoint " + path + ": shape mismatch for " + name);
    Tensor t(shape);
    for (auto& v : t.data) v = static_cast<double>(detail::read_pod<float>(in, path));
    model.params_.create(name, std::move(t));
    expected.erase(it);
  }
  if (!expected.empty())
    throw ValidationError("checkpoint " + path + ": missing parameter " + expected.begin()->first);
  return model;
}

}  // namespace seater
