#pragma once

// Reverse-mode autodiff on a per-step tape. The op set is closed and small:
// exactly what a one-layer encoder-decoder with constrained softmax heads
// needs. Every op validates shapes and rejects non-finite outputs.
//
// One tape per training step; parameters live in a ParamStore and receive
// accumulated gradients on backward(). Forward-only evaluation uses a tape
// constructed with grad_enabled=false, which records no closures.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "seater/errors.hpp"
#include "seater/rng.hpp"
#include "seater/tensor.hpp"

namespace seater::ad {

struct ParamEntry {
  Tensor value;
  Tensor grad;
  Tensor m;  // Adam first moment
  Tensor v;  // Adam second moment
};

class ParamStore {
 public:
  Tensor& create(const std::string& name, Tensor init) {
    if (entries_.count(name)) throw ValidationError("param already exists: " + name);
    ParamEntry e;
    e.grad = Tensor::zeros(init.shape);
    e.m = Tensor::zeros(init.shape);
    e.v = Tensor::zeros(init.shape);
    e.value = std::move(init);
    auto [it, ok] = entries_.emplace(name, std::move(e));
    (void)ok;
    return it->second.value;
  }

  bool has(const std::string& name) const { return entries_.count(name) != 0; }

  ParamEntry& entry(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ValidationError("unknown param: " + name);
    return it->second;
  }
  const ParamEntry& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ValidationError("unknown param: " + name);
    return it->second;
  }

  Tensor& value(const std::string& name) { return entry(name).value; }
  const Tensor& value(const std::string& name) const { return entry(name).value; }
  Tensor& grad(const std::string& name) { return entry(name).grad; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;  // std::map keeps them sorted
  }

  std::size_t size() const { return entries_.size(); }

  void zero_grad() {
    for (auto& [k, e] : entries_) std::fill(e.grad.data.begin(), e.grad.data.end(), 0.0);
  }

  // AdamW-style update: weight decay is decoupled from the moment estimates.
  void adam_step(double lr, double beta1, double beta2, double eps, double weight_decay) {
    ++adam_steps_;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(adam_steps_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(adam_steps_));
    for (auto& [k, e] : entries_) {
      double* x = e.value.data.data();
      double* g = e.grad.data.data();
      double* m = e.m.data.data();
      double* v = e.v.data.data();
      const std::size_t n = e.value.data.size();
      for (std::size_t i = 0; i < n; ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        x[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * x[i]);
      }
    }
  }

  long long adam_steps() const { return adam_steps_; }
  void set_adam_steps(long long s) { adam_steps_ = s; }

 private:
  std::map<std::string, ParamEntry> entries_;
  long long adam_steps_ = 0;
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// out(m×n) += A(m×k) · B(n×k)^T
inline void matmul_nt_accum(const double* a, const double* b, double* out, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<std::size_t>(i) * k;
    double* crow = out + static_cast<std::size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
      const double* brow = b + static_cast<std::size_t>(j) * k;
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += arow[p] * brow[p];
      crow[j] += s;
    }
  }
}

// out(m×n) += A(k×m)^T · B(k×n)
inline void matmul_tn_accum(const double* a, const double* b, double* out, int m, int k, int n) {
  for (int p = 0; p < k; ++p) {
    const double* arow = a + static_cast<std::size_t>(p) * m;
    const double* brow = b + static_cast<std::size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = out + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Var input(Tensor value) {
    return push(std::move(value), /*needs_grad=*/false, nullptr, {});
  }

  Var param(ParamStore& store, const std::string& name) {
    ParamEntry* e = &store.entry(name);
    Var v = push_view(&e->value, grad_enabled_, e);
    return v;
  }

  const Tensor& value(Var v) const {
    check(v);
    const Node& n = nodes_[static_cast<std::size_t>(v.id)];
    return n.view ? *n.view : n.owned;
  }

  std::size_t size() const { return nodes_.size(); }

  // ---- ops ----

  Var matmul(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.rank() != 2 || B.rank() != 2 || A.shape[1] != B.shape[0])
      throw ValidationError("matmul: shape mismatch " + A.shape_str() + " x " + B.shape_str());
    const int m = A.shape[0], k = A.shape[1], n = B.shape[1];
    Tensor out({m, n});
    matmul_accum(A.data.data(), B.data.data(), out.data.data(), m, k, n);
    return make("matmul", std::move(out), {a, b}, [a, b, m, k, n](Tape& t, const Tensor& g) {
      const Tensor& A = t.value(a);
      const Tensor& B = t.value(b);
      if (t.wants(a)) matmul_nt_accum(g.data.data(), B.data.data(), t.grad_of(a).data.data(), m, n, k);
      if (t.wants(b)) matmul_tn_accum(A.data.data(), g.data.data(), t.grad_of(b).data.data(), k, m, n);
    });
  }

  Var transpose(Var a) {
    const Tensor& A = value(a);
    if (A.rank() != 2) throw ValidationError("transpose: rank-2 required");
    const int m = A.shape[0], n = A.shape[1];
    Tensor out({n, m});
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) out.at(j, i) = A.at(i, j);
    return make("transpose", std::move(out), {a}, [a, m, n](Tape& t, const Tensor& g) {
      if (!t.wants(a)) return;
      Tensor& da = t.grad_of(a);
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) da.at(i, j) += g.at(j, i);
    });
  }

  // Same-shape add, or (t×d) + (d) broadcasting the second operand over rows.
  Var add(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    const bool rowcast = A.rank() == 2 && B.rank() == 1 && A.shape[1] == B.shape[0];
    if (!rowcast && !same_shape(A, B))
      throw ValidationError("add: shape mismatch " + A.shape_str() + " + " + B.shape_str());
    Tensor out = A;
    if (rowcast) {
      const int r = A.shape[0], c = A.shape[1];
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out.at(i, j) += B.data[static_cast<std::size_t>(j)];
    } else {
      for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += B.data[i];
    }
    return make("add", std::move(out), {a, b}, [a, b, rowcast](Tape& t, const Tensor& g) {
      if (t.wants(a)) {
        Tensor& da = t.grad_of(a);
        for (std::size_t i = 0; i < g.data.size(); ++i) da.data[i] += g.data[i];
      }
      if (t.wants(b)) {
        Tensor& db = t.grad_of(b);
        if (rowcast) {
          const int r = g.shape[0], c = g.shape[1];
          for (int i = 0; i < r; ++i)
            for (int j = 0; j < c; ++j) db.data[static_cast<std::size_t>(j)] += g.at(i, j);
        } else {
          for (std::size_t i = 0; i < g.data.size(); ++i) db.data[i] += g.data[i];
        }
      }
    });
  }

  Var mul(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (!same_shape(A, B))
      throw ValidationError("mul: shape mismatch " + A.shape_str() + " * " + B.shape_str());
    Tensor out = A;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= B.data[i];
    return make("mul", std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
      const Tensor& A = t.value(a);
      const Tensor& B = t.value(b);
      if (t.wants(a)) {
        Tensor& da = t.grad_of(a);
        for (std::size_t i = 0; i < g.data.size(); ++i) da.data[i] += g.data[i] * B.data[i];
      }
      if (t.wants(b)) {
        Tensor& db = t.grad_of(b);
        for (std::size_t i = 0; i < g.data.size(); ++i) db.data[i] += g.data[i] * A.data[i];
      }
    });
  }

  Var scale(Var a, double c) {
    Tensor out = value(a);
    for (auto& x : out.data) x *= c;
    return make("scale", std::move(out), {a}, [a, c](Tape& t, const Tensor& g) {
      if (!t.wants(a)) return;
      Tensor& da = t.grad_of(a);
      for (std::size_t i = 0; i < g.data.size(); ++i) da.data[i] += c * g.data[i];
    });
  }

  Var relu(Var a) {
    Tensor out = value(a);
    for (auto& x : out.data) x = x > 0.0 ? x : 0.0;
    return make("relu", std::move(out), {a}, [a](Tape& t, const Tensor& g) {
      if (!t.wants(a)) return;
      const Tensor& A = t.value(a);
      Tensor& da = t.grad_of(a);
      for (std::size_t i = 0; i < g.data.size(); ++i)
        if (A.data[i] > 0.0) da.data[i] += g.data[i];
    });
  }

  Var sigmoid(Var a) {
    Tensor out = value(a);
    for (auto& x : out.data) {
      if (x >= 0.0) {
        x = 1.0 / (1.0 + std::exp(-x));
      } else {
        const double e = std::exp(x);
        x = e / (1.0 + e);
      }
    }
    Var r = make("sigmoid", std::move(out), {a}, {});
    attach(r, [a, r](Tape& t, const Tensor& g) {
      if (!t.wants(a)) return;
      const Tensor& Y = t.value(r);
      Tensor& da = t.grad_of(a);
      for (std::size_t i = 0; i < g.data.size(); ++i)
        da.data[i] += g.data[i] * Y.data[i] * (1.0 - Y.data[i]);
    });
    return r;
  }

  Var log(Var a) {
    Tensor out = value(a);
    for (auto& x : out.data) x = std::log(x);
    return make("log", std::move(out), {a}, [a](Tape& t, const Tensor& g) {
      if (!t.wants(a)) return;
      const Tensor& A = t.value(a);
      Tensor& da = t.grad_of(a);
      for (std::size_t i = 0; i < g.data.size(); ++i) da.data[i] += g.data[i] / A.data[i];
    });
  }

  Var exp(Var a) {
    Tensor out = value(a);
    for (auto& x : out.data) x = std::exp(x);
    Var r = make("exp", std::move(out), {a}, {});
    attach(r, [a, r](Tape& t, const Tensor& g) {
      if (!t.wants(a)) return;
      const Tensor& Y = t.value(r);
      Tensor& da = t.grad_of(a);
      for (std::size_t i = 0; i < g.data.size(); ++i) da.data[i] += g.data[i] * Y.data[i];
    });
    return r;
  }

  // Row-wise softmax with max subtraction. 1-D input is treated as one row.
  Var softmax_rows(Var a) {
    const Tensor& A = value(a);
    if (A.rank() != 1 && A.rank() != 2) throw ValidationError("softmax: rank-1 or rank-2 required");
    const int r = A.rank() == 2 ? A.shape[0] : 1;
    const int c = A.rank() == 2 ? A.shape[1] : A.shape[0];
    if (c == 0) throw ValidationError("softmax: empty axis");
    Tensor out = A;
    for (int i = 0; i < r; ++i) {
      double* row = out.data.data() + static_cast<std::size_t>(i) * c;
      double mx = row[0];
      for (int j = 1; j < c; ++j) mx = std::max(mx, row[j]);
      double z = 0.0;
      for (int j = 0; j < c; ++j) {
        row[j] = std::exp(row[j] - mx);
        z += row[j];
      }
      for (int j = 0; j < c; ++j) row[j] /= z;
    }
    Var res = make("softmax", std::move(out), {a}, {});
    attach(res, [a, res, r, c](Tape& t, const Tensor& g) {
      if (!t.wants(a)) return;
      const Tensor& Y = t.value(res);
      Tensor& da = t.grad_of(a);
      for (int i = 0; i < r; ++i) {
        const double* y = Y.data.data() + static_cast<std::size_t>(i) * c;
        const double* gy = g.data.data() + static_cast<std::size_t>(i) * c;
        double dotv = 0.0;
        for (int j = 0; j < c; ++j) dotv += gy[j] * y[j];
        double* d = da.data.data() + static_cast<std::size_t>(i) * c;
        for (int j = 0; j < c; ++j) d[j] += y[j] * (gy[j] - dotv);
      }
    });
    return res;
  }

  // Numerically stable log-softmax over a vector.
  Var log_softmax(Var a) {
    const Tensor& A = value(a);
    if (A.rank() != 1 || A.shape[0] == 0) throw ValidationError("log_softmax: non-empty vector required");
    const int c = A.shape[0];
    double mx = A.data[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, A.data[j]);
    double z = 0.0;
    for (int j = 0; j < c; ++j) z += std::exp(A.data[j] - mx);
    const double lse = mx + std::log(z);
    Tensor out = A;
    for (auto& x : out.data) x -= lse;
    Var r = make("log_softmax", std::move(out), {a}, {});
    attach(r, [a, r, c](Tape& t, const Tensor& g) {
      if (!t.wants(a)) return;
      const Tensor& Y = t.value(r);
      Tensor& da = t.grad_of(a);
      double gsum = 0.0;
      for (int j = 0; j < c; ++j) gsum += g.data[j];
      for (int j = 0; j < c; ++j) da.data[j] += g.data[j] - std::exp(Y.data[j]) * gsum;
    });
    return r;
  }

  Var mean_rows(Var a) {
    const Tensor& A = value(a);
    if (A.rank() != 2 || A.shape[0] == 0) throw ValidationError("mean_rows: non-empty matrix required");
    const int r = A.shape[0], c = A.shape[1];
    Tensor out({c});
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) out.data[static_cast<std::size_t>(j)] += A.at(i, j);
    for (auto& x : out.data) x /= r;
    return make("mean_rows", std::move(out), {a}, [a, r, c](Tape& t, const Tensor& g) {
      if (!t.wants(a)) return;
      Tensor& da = t.grad_of(a);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) da.at(i, j) += g.data[static_cast<std::size_t>(j)] / r;
    });
  }

  Var sum_all(Var a) {
    const Tensor& A = value(a);
    double s = 0.0;
    for (double x : A.data) s += x;
    return make("sum_all", Tensor::scalar(s), {a}, [a](Tape& t, const Tensor& g) {
      if (!t.wants(a)) return;
      Tensor& da = t.grad_of(a);
      for (auto& x : da.data) x += g.data[0];
    });
  }

  Var mean_all(Var a) {
    const Tensor& A = value(a);
    if (A.numel() == 0) throw ValidationError("mean_all: empty tensor");
    const double inv = 1.0 / static_cast<double>(A.numel());
    double s = 0.0;
    for (double x : A.data) s += x;
    return make("mean_all", Tensor::scalar(s * inv), {a}, [a, inv](Tape& t, const Tensor& g) {
      if (!t.wants(a)) return;
      Tensor& da = t.grad_of(a);
      for (auto& x : da.data) x += g.data[0] * inv;
    });
  }

  // Per-row layer normalization with learned gain/bias.
  Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5) {
    const Tensor& X = value(x);
    const Tensor& G = value(gamma);
    const Tensor& B = value(beta);
    if (X.rank() != 2) throw ValidationError("layer_norm: rank-2 input required");
    const int r = X.shape[0], c = X.shape[1];
    if (G.rank() != 1 || G.shape[0] != c || B.rank() != 1 || B.shape[0] != c)
      throw ValidationError("layer_norm: gain/bias must be vectors of width " + std::to_string(c));
    Tensor out({r, c});
    Tensor xhat({r, c});
    Tensor inv_std({r});
    for (int i = 0; i < r; ++i) {
      double mu = 0.0;
      for (int j = 0; j < c; ++j) mu += X.at(i, j);
      mu /= c;
      double var = 0.0;
      for (int j = 0; j < c; ++j) {
        const double d = X.at(i, j) - mu;
        var += d * d;
      }
      var /= c;
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std.data[static_cast<std::size_t>(i)] = is;
      for (int j = 0; j < c; ++j) {
        const double xh = (X.at(i, j) - mu) * is;
        xhat.at(i, j) = xh;
        out.at(i, j) = G.data[static_cast<std::size_t>(j)] * xh + B.data[static_cast<std::size_t>(j)];
      }
    }
    Var xh_node = input(std::move(xhat));
    Var is_node = input(std::move(inv_std));
    return make("layer_norm", std::move(out), {x, gamma, beta},
                [x, gamma, beta, xh_node, is_node, r, c](Tape& t, const Tensor& g) {
                  const Tensor& XH = t.value(xh_node);
                  const Tensor& IS = t.value(is_node);
                  const Tensor& G = t.value(gamma);
                  if (t.wants(gamma)) {
                    Tensor& dg = t.grad_of(gamma);
                    for (int i = 0; i < r; ++i)
                      for (int j = 0; j < c; ++j)
                        dg.data[static_cast<std::size_t>(j)] += g.at(i, j) * XH.at(i, j);
                  }
                  if (t.wants(beta)) {
                    Tensor& db = t.grad_of(beta);
                    for (int i = 0; i < r; ++i)
                      for (int j = 0; j < c; ++j) db.data[static_cast<std::size_t>(j)] += g.at(i, j);
                  }
                  if (t.wants(x)) {
                    Tensor& dx = t.grad_of(x);
                    for (int i = 0; i < r; ++i) {
                      double mean_g = 0.0, mean_gx = 0.0;
                      for (int j = 0; j < c; ++j) {
                        const double gg = g.at(i, j) * G.data[static_cast<std::size_t>(j)];
                        mean_g += gg;
                        mean_gx += gg * XH.at(i, j);
                      }
                      mean_g /= c;
                      mean_gx /= c;
                      const double is = IS.data[static_cast<std::size_t>(i)];
                      for (int j = 0; j < c; ++j) {
                        const double gg = g.at(i, j) * G.data[static_cast<std::size_t>(j)];
                        dx.at(i, j) += is * (gg - mean_g - XH.at(i, j) * mean_gx);
                      }
                    }
                  }
                });
  }

  // Gather rows of a (M×d) table; gradient scatter-adds into the table.
  Var embedding_rows(Var table, const std::vector<int>& ids) {
    const Tensor& T = value(table);
    if (T.rank() != 2) throw ValidationError("embedding_rows: rank-2 table required");
    const int m = T.shape[0], d = T.shape[1];
    for (int id : ids)
      if (id < 0 || id >= m)
        throw ValidationError("embedding_rows: id " + std::to_string(id) + " out of range [0," +
                              std::to_string(m) + ")");
    Tensor out({static_cast<int>(ids.size()), d});
    for (std::size_t i = 0; i < ids.size(); ++i)
      std::copy_n(T.data.data() + static_cast<std::size_t>(ids[i]) * d, d,
                  out.data.data() + i * d);
    return make("embedding_rows", std::move(out), {table}, [table, ids, d](Tape& t, const Tensor& g) {
      if (!t.wants(table)) return;
      Tensor& dt = t.grad_of(table);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        double* dst = dt.data.data() + static_cast<std::size_t>(ids[i]) * d;
        const double* src = g.data.data() + i * d;
        for (int j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
  }

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw ValidationError("concat_cols: empty input");
    const int r = value(parts[0]).shape[0];
    int total = 0;
    for (Var p : parts) {
      const Tensor& P = value(p);
      if (P.rank() != 2 || P.shape[0] != r) throw ValidationError("concat_cols: row mismatch");
      total += P.shape[1];
    }
    Tensor out({r, total});
    int off = 0;
    for (Var p : parts) {
      const Tensor& P = value(p);
      for (int i = 0; i < r; ++i)
        std::copy_n(P.data.data() + static_cast<std::size_t>(i) * P.shape[1], P.shape[1],
                    out.data.data() + static_cast<std::size_t>(i) * total + off);
      off += P.shape[1];
    }
    return make("concat_cols", std::move(out), parts, [parts, r, total](Tape& t, const Tensor& g) {
      int off = 0;
      for (Var p : parts) {
        const int w = t.value(p).shape[1];
        if (t.wants(p)) {
          Tensor& dp = t.grad_of(p);
          for (int i = 0; i < r; ++i) {
            const double* src = g.data.data() + static_cast<std::size_t>(i) * total + off;
            double* dst = dp.data.data() + static_cast<std::size_t>(i) * w;
            for (int j = 0; j < w; ++j) dst[j] += src[j];
          }
        }
        off += w;
      }
    });
  }

  Var slice_cols(Var a, int c0, int c1) {
    const Tensor& A = value(a);
    if (A.rank() != 2 || c0 < 0 || c1 > A.shape[1] || c0 >= c1)
      throw ValidationError("slice_cols: bad range");
    const int r = A.shape[0], w = c1 - c0, full = A.shape[1];
    Tensor out({r, w});
    for (int i = 0; i < r; ++i)
      std::copy_n(A.data.data() + static_cast<std::size_t>(i) * full + c0, w,
                  out.data.data() + static_cast<std::size_t>(i) * w);
    return make("slice_cols", std::move(out), {a}, [a, c0, r, w, full](Tape& t, const Tensor& g) {
      if (!t.wants(a)) return;
      Tensor& da = t.grad_of(a);
      for (int i = 0; i < r; ++i) {
        const double* src = g.data.data() + static_cast<std::size_t>(i) * w;
        double* dst = da.data.data() + static_cast<std::size_t>(i) * full + c0;
        for (int j = 0; j < w; ++j) dst[j] += src[j];
      }
    });
  }

  Var row(Var a, int r) {
    const Tensor& A = value(a);
    if (A.rank() != 2 || r < 0 || r >= A.shape[0]) throw ValidationError("row: index out of range");
    const int c = A.shape[1];
    Tensor out({c});
    std::copy_n(A.data.data() + static_cast<std::size_t>(r) * c, c, out.data.data());
    return make("row", std::move(out), {a}, [a, r, c](Tape& t, const Tensor& g) {
      if (!t.wants(a)) return;
      Tensor& da = t.grad_of(a);
      double* dst = da.data.data() + static_cast<std::size_t>(r) * c;
      for (int j = 0; j < c; ++j) dst[j] += g.data[static_cast<std::size_t>(j)];
    });
  }

  Var matvec(Var a, Var x) {
    const Tensor& A = value(a);
    const Tensor& X = value(x);
    if (A.rank() != 2 || X.rank() != 1 || A.shape[1] != X.shape[0])
      throw ValidationError("matvec: shape mismatch " + A.shape_str() + " . " + X.shape_str());
    const int m = A.shape[0], n = A.shape[1];
    Tensor out({m});
    for (int i = 0; i < m; ++i) {
      double s = 0.0;
      const double* arow = A.data.data() + static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) s += arow[j] * X.data[static_cast<std::size_t>(j)];
      out.data[static_cast<std::size_t>(i)] = s;
    }
    return make("matvec", std::move(out), {a, x}, [a, x, m, n](Tape& t, const Tensor& g) {
      const Tensor& A = t.value(a);
      const Tensor& X = t.value(x);
      if (t.wants(a)) {
        Tensor& da = t.grad_of(a);
        for (int i = 0; i < m; ++i) {
          const double gi = g.data[static_cast<std::size_t>(i)];
          double* drow = da.data.data() + static_cast<std::size_t>(i) * n;
          for (int j = 0; j < n; ++j) drow[j] += gi * X.data[static_cast<std::size_t>(j)];
        }
      }
      if (t.wants(x)) {
        Tensor& dx = t.grad_of(x);
        for (int i = 0; i < m; ++i) {
          const double gi = g.data[static_cast<std::size_t>(i)];
          const double* arow = A.data.data() + static_cast<std::size_t>(i) * n;
          for (int j = 0; j < n; ++j) dx.data[static_cast<std::size_t>(j)] += gi * arow[j];
        }
      }
    });
  }

  Var dot(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.rank() != 1 || B.rank() != 1 || A.shape[0] != B.shape[0])
      throw ValidationError("dot: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < A.data.size(); ++i) s += A.data[i] * B.data[i];
    return make("dot", Tensor::scalar(s), {a, b}, [a, b](Tape& t, const Tensor& g) {
      const Tensor& A = t.value(a);
      const Tensor& B = t.value(b);
      const double gs = g.data[0];
      if (t.wants(a)) {
        Tensor& da = t.grad_of(a);
        for (std::size_t i = 0; i < B.data.size(); ++i) da.data[i] += gs * B.data[i];
      }
      if (t.wants(b)) {
        Tensor& db = t.grad_of(b);
        for (std::size_t i = 0; i < A.data.size(); ++i) db.data[i] += gs * A.data[i];
      }
    });
  }

  Var pick(Var a, int i) {
    const Tensor& A = value(a);
    if (A.rank() != 1 || i < 0 || i >= A.shape[0]) throw ValidationError("pick: index out of range");
    return make("pick", Tensor::scalar(A.data[static_cast<std::size_t>(i)]), {a},
                [a, i](Tape& t, const Tensor& g) {
                  if (!t.wants(a)) return;
                  t.grad_of(a).data[static_cast<std::size_t>(i)] += g.data[0];
                });
  }

  Var cosine(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.rank() != 1 || B.rank() != 1 || A.shape[0] != B.shape[0])
      throw ValidationError("cosine: shape mismatch");
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < A.data.size(); ++i) {
      ab += A.data[i] * B.data[i];
      aa += A.data[i] * A.data[i];
      bb += B.data[i] * B.data[i];
    }
    const double na = std::sqrt(aa), nb = std::sqrt(bb);
    if (na < 1e-300 || nb < 1e-300) throw NumericError("cosine: zero-norm vector");
    const double c = ab / (na * nb);
    return make("cosine", Tensor::scalar(c), {a, b}, [a, b, na, nb, c](Tape& t, const Tensor& g) {
      const Tensor& A = t.value(a);
      const Tensor& B = t.value(b);
      const double gs = g.data[0];
      if (t.wants(a)) {
        Tensor& da = t.grad_of(a);
        for (std::size_t i = 0; i < A.data.size(); ++i)
          da.data[i] += gs * (B.data[i] / (na * nb) - c * A.data[i] / (na * na));
      }
      if (t.wants(b)) {
        Tensor& db = t.grad_of(b);
        for (std::size_t i = 0; i < B.data.size(); ++i)
          db.data[i] += gs * (A.data[i] / (na * nb) - c * B.data[i] / (nb * nb));
      }
    });
  }

  // Gathers scalar vars into one vector.
  Var stack(const std::vector<Var>& scalars) {
    if (scalars.empty()) throw ValidationError("stack: empty input");
    Tensor out({static_cast<int>(scalars.size())});
    for (std::size_t i = 0; i < scalars.size(); ++i) {
      const Tensor& s = value(scalars[i]);
      if (s.numel() != 1) throw ValidationError("stack: inputs must be scalars");
      out.data[i] = s.data[0];
    }
    return make("stack", std::move(out), scalars, [scalars](Tape& t, const Tensor& g) {
      for (std::size_t i = 0; i < scalars.size(); ++i) {
        if (!t.wants(scalars[i])) continue;
        t.grad_of(scalars[i]).data[0] += g.data[i];
      }
    });
  }

  Var add_many(const std::vector<Var>& vs) {
    if (vs.empty()) throw ValidationError("add_many: empty input");
    Tensor out = value(vs[0]);
    for (std::size_t i = 1; i < vs.size(); ++i) {
      const Tensor& V = value(vs[i]);
      if (!same_shape(out, V)) throw ValidationError("add_many: shape mismatch");
      for (std::size_t j = 0; j < out.data.size(); ++j) out.data[j] += V.data[j];
    }
    return make("add_many", std::move(out), vs, [vs](Tape& t, const Tensor& g) {
      for (Var v : vs) {
        if (!t.wants(v)) continue;
        Tensor& dv = t.grad_of(v);
        for (std::size_t j = 0; j < g.data.size(); ++j) dv.data[j] += g.data[j];
      }
    });
  }

  // ---- backward ----

  void backward(Var loss) {
    if (consumed_) throw ValidationError("backward: tape already consumed; rebuild the forward pass");
    check(loss);
    if (value(loss).numel() != 1) throw ValidationError("backward: loss must be a scalar");
    if (!grad_enabled_) throw ValidationError("backward: tape was built with gradients disabled");
    grad_of(loss).data[0] = 1.0;
    for (int id = static_cast<int>(nodes_.size()) - 1; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.needs_grad || n.grad.data.empty()) continue;
      if (n.back) n.back(*this, n.grad);
      if (n.sink) {
        for (std::size_t i = 0; i < n.grad.data.size(); ++i) n.sink->grad.data[i] += n.grad.data[i];
      }
    }
    consumed_ = true;
    nodes_.clear();
  }

  bool wants(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }

  Tensor& grad_of(Var v) {
    Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (n.grad.data.empty()) n.grad = Tensor::zeros(n.view ? n.view->shape : n.owned.shape);
    return n.grad;
  }

 private:
  struct Node {
    Tensor owned;
    const Tensor* view = nullptr;
    Tensor grad;
    bool needs_grad = false;
    ParamEntry* sink = nullptr;
    std::function<void(Tape&, const Tensor&)> back;
  };

  void check(Var v) const {
    if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size())
      throw ValidationError("invalid tape variable");
  }

  Var push(Tensor value, bool needs_grad, ParamEntry* sink,
           std::function<void(Tape&, const Tensor&)> back) {
    Node n;
    n.owned = std::move(value);
    n.needs_grad = needs_grad;
    n.sink = sink;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Var push_view(const Tensor* view, bool needs_grad, ParamEntry* sink) {
    Node n;
    n.view = view;
    n.needs_grad = needs_grad;
    n.sink = sink;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Var make(const char* op, Tensor out, const std::vector<Var>& deps,
           std::function<void(Tape&, const Tensor&)> back) {
    if (!out.all_finite()) throw NumericError(std::string(op) + ": non-finite result");
    bool needs = false;
    if (grad_enabled_) {
      for (Var d : deps) {
        check(d);
        if (nodes_[static_cast<std::size_t>(d.id)].needs_grad) {
          needs = true;
          break;
        }
      }
    }
    return push(std::move(out), needs, nullptr, needs ? std::move(back) : nullptr);
  }

  void attach(Var v, std::function<void(Tape&, const Tensor&)> back) {
    Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (n.needs_grad) n.back = std::move(back);
  }

  std::vector<Node> nodes_;
  bool grad_enabled_ = true;
  bool consumed_ = false;
};

// Central-difference gradient checker. `build` constructs the scalar loss on a
// fresh tape; analytic gradients are taken from one backward pass, numeric
// ones from two forward evaluations per sampled coordinate (at most
// `max_coords` per parameter). Returns the max relative error
// |g_a - g_n| / max(1e-8, |g_a| + |g_n|).
template <typename BuildFn>
double grad_check(BuildFn&& build, ParamStore& params, double eps = 1e-5, int max_coords = 200) {
  params.zero_grad();
  {
    Tape tape(true);
    Var loss = build(tape);
    tape.backward(loss);
  }
  std::map<std::string, Tensor> analytic;
  for (const auto& name : params.names()) analytic.emplace(name, params.entry(name).grad);

  auto eval = [&]() {
    Tape tape(false);
    Var loss = build(tape);
    return tape.value(loss).scalar_value();
  };

  double max_rel = 0.0;
  for (const auto& name : params.names()) {
    Tensor& val = params.value(name);
    const Tensor& ga = analytic.at(name);
    const std::int64_t n = val.numel();
    const std::int64_t stride = std::max<std::int64_t>(1, n / max_coords);
    for (std::int64_t i = 0; i < n; i += stride) {
      const double keep = val.data[static_cast<std::size_t>(i)];
      val.data[static_cast<std::size_t>(i)] = keep + eps;
      const double lp = eval();
      val.data[static_cast<std::size_t>(i)] = keep - eps;
      const double lm = eval();
      val.data[static_cast<std::size_t>(i)] = keep;
      const double gn = (lp - lm) / (2.0 * eps);
      const double g = ga.data[static_cast<std::size_t>(i)];
      const double rel = std::fabs(g - gn) / std::max(1e-8, std::fabs(g) + std::fabs(gn));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace seater::ad
