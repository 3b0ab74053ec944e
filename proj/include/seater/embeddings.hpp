#pragma once

// Item-embedding providers that seed identifier-tree construction. The SVD
// provider factors the binary user-item matrix with a seeded randomized
// range finder plus power iterations; item factors come back scaled by the
// singular values.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "seater/corpus.hpp"
#include "seater/errors.hpp"
#include "seater/rng.hpp"
#include "seater/tensor.hpp"

namespace seater {

struct ItemEmbeddingMatrix {
  int n_items = 0;
  int dim = 0;
  std::vector<double> values;  // row-major, row i = item i

  double& at(int i, int j) { return values[static_cast<std::size_t>(i) * dim + j]; }
  double at(int i, int j) const { return values[static_cast<std::size_t>(i) * dim + j]; }
  const double* row(int i) const { return values.data() + static_cast<std::size_t>(i) * dim; }

  void validate() const {
    if (n_items < 1 || dim < 1) throw ValidationError("embedding matrix: empty shape");
    if (values.size() != static_cast<std::size_t>(n_items) * static_cast<std::size_t>(dim))
      throw ValidationError("embedding matrix: value count mismatch");
    for (std::size_t i = 0; i < values.size(); ++i)
      if (!std::isfinite(values[i]))
        throw ValidationError("embedding matrix: non-finite entry at flat index " +
                              std::to_string(i));
  }
};

inline ItemEmbeddingMatrix random_embeddings(int n_items, int dim, std::uint64_t seed) {
  if (n_items < 1 || dim < 1) throw ValidationError("random_embeddings: N and d must be >= 1");
  ItemEmbeddingMatrix m;
  m.n_items = n_items;
  m.dim = dim;
  m.values.resize(static_cast<std::size_t>(n_items) * dim);
  Rng rng(derive_seed(seed, 0xE3BD5ULL));
  for (auto& v : m.values) v = rng.uniform(-1.0, 1.0);
  return m;
}

namespace linalg {

// Modified Gram-Schmidt with a second pass. Columns that vanish (rank
// deficiency) are zeroed, which propagates exact zero singular values.
inline void orthonormalize_cols(std::vector<double>& q, int m, int r) {
  for (int pass = 0; pass < 2; ++pass) {
    for (int j = 0; j < r; ++j) {
      for (int i = 0; i < j; ++i) {
        double d = 0.0;
        for (int p = 0; p < m; ++p)
          d += q[static_cast<std::size_t>(p) * r + i] * q[static_cast<std::size_t>(p) * r + j];
        for (int p = 0; p < m; ++p)
          q[static_cast<std::size_t>(p) * r + j] -= d * q[static_cast<std::size_t>(p) * r + i];
      }
      double norm = 0.0;
      for (int p = 0; p < m; ++p) {
        const double v = q[static_cast<std::size_t>(p) * r + j];
        norm += v * v;
      }
      norm = std::sqrt(norm);
      if (norm < 1e-12) {
        for (int p = 0; p < m; ++p) q[static_cast<std::size_t>(p) * r + j] = 0.0;
      } else {
        for (int p = 0; p < m; ++p) q[static_cast<std::size_t>(p) * r + j] /= norm;
      }
    }
  }
}

// Cyclic Jacobi eigen-decomposition of a symmetric r x r matrix.
// Returns eigenvalues (descending) and the matching eigenvectors as columns.
inline void jacobi_eigh(std::vector<double> a, int r, std::vector<double>& eigvals,
                        std::vector<double>& eigvecs) {
  eigvecs.assign(static_cast<std::size_t>(r) * r, 0.0);
  for (int i = 0; i < r; ++i) eigvecs[static_cast<std::size_t>(i) * r + i] = 1.0;
  auto A = [&](int i, int j) -> double& { return a[static_cast<std::size_t>(i) * r + j]; };
  auto V = [&](int i, int j) -> double& { return eigvecs[static_cast<std::size_t>(i) * r + j]; };
  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < r; ++i)
      for (int j = i + 1; j < r; ++j) off += A(i, j) * A(i, j);
    if (off < 1e-30) break;
    for (int p = 0; p < r - 1; ++p) {
      for (int q = p + 1; q < r; ++q) {
        const double apq = A(p, q);
        if (std::fabs(apq) < 1e-300) continue;
        const double theta = (A(q, q) - A(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int i = 0; i < r; ++i) {
          const double aip = A(i, p), aiq = A(i, q);
          A(i, p) = c * aip - s * aiq;
          A(i, q) = s * aip + c * aiq;
        }
        for (int j = 0; j < r; ++j) {
          const double apj = A(p, j), aqj = A(q, j);
          A(p, j) = c * apj - s * aqj;
          A(q, j) = s * apj + c * aqj;
        }
        for (int i = 0; i < r; ++i) {
          const double vip = V(i, p), viq = V(i, q);
          V(i, p) = c * vip - s * viq;
          V(i, q) = s * vip + c * viq;
        }
      }
    }
  }
  eigvals.assign(static_cast<std::size_t>(r), 0.0);
  for (int i = 0; i < r; ++i) eigvals[static_cast<std::size_t>(i)] = A(i, i);
  // sort descending, permuting eigenvector columns alongside
  std::vector<int> idx(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) idx[static_cast<std::size_t>(i)] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](int x, int y) {
    return eigvals[static_cast<std::size_t>(x)] > eigvals[static_cast<std::size_t>(y)];
  });
  std::vector<double> ev(static_cast<std::size_t>(r));
  std::vector<double> vecs(static_cast<std::size_t>(r) * r);
  for (int j = 0; j < r; ++j) {
    ev[static_cast<std::size_t>(j)] = eigvals[static_cast<std::size_t>(idx[static_cast<std::size_t>(j)])];
    for (int i = 0; i < r; ++i)
      vecs[static_cast<std::size_t>(i) * r + j] =
          eigvecs[static_cast<std::size_t>(i) * r + idx[static_cast<std::size_t>(j)]];
  }
  eigvals = std::move(ev);
  eigvecs = std::move(vecs);
}

}  // namespace linalg

struct TruncatedSvd {
  int m = 0, n = 0, rank = 0;
  std::vector<double> u;      // m x rank
  std::vector<double> sigma;  // rank, descending, >= 0
  std::vector<double> v;      // n x rank
};

// Randomized truncated SVD of a dense row-major m x n matrix
// (Halko-style range finder with power iterations, default 4).
inline TruncatedSvd randomized_svd(const std::vector<double>& a, int m, int n, int rank,
                                   std::uint64_t seed, int power_iters = 4, int oversample = 8) {
  if (rank < 1 || rank > std::min(m, n))
    throw ValidationError("randomized_svd: rank must be in [1, min(m, n)]");
  const int r = std::min(rank + oversample, std::min(m, n));

  auto mat_times = [&](const std::vector<double>& x, int cols, std::vector<double>& y) {
    // y (m x cols) = A (m x n) * x (n x cols)
    y.assign(static_cast<std::size_t>(m) * cols, 0.0);
    matmul_accum(a.data(), x.data(), y.data(), m, n, cols);
  };
  auto mat_t_times = [&](const std::vector<double>& x, int cols, std::vector<double>& y) {
    // y (n x cols) = A^T * x (m x cols)
    y.assign(static_cast<std::size_t>(n) * cols, 0.0);
    for (int i = 0; i < m; ++i) {
      const double* arow = a.data() + static_cast<std::size_t>(i) * n;
      const double* xrow = x.data() + static_cast<std::size_t>(i) * cols;
      for (int p = 0; p < n; ++p) {
        const double av = arow[p];
        if (av == 0.0) continue;
        double* yrow = y.data() + static_cast<std::size_t>(p) * cols;
        for (int j = 0; j < cols; ++j) yrow[j] += av * xrow[j];
      }
    }
  };

  Rng rng(derive_seed(seed, 0x5FDULL));
  std::vector<double> omega(static_cast<std::size_t>(n) * r);
  for (auto& v : omega) v = rng.gaussian();

  std::vector<double> q, z;
  mat_times(omega, r, q);
  linalg::orthonormalize_cols(q, m, r);
  for (int it = 0; it < power_iters; ++it) {
    mat_t_times(q, r, z);
    linalg::orthonormalize_cols(z, n, r);
    mat_times(z, r, q);
    linalg::orthonormalize_cols(q, m, r);
  }

  // B = Q^T A  (r x n)
  std::vector<double> b(static_cast<std::size_t>(r) * n, 0.0);
  for (int i = 0; i < m; ++i) {
    const double* arow = a.data() + static_cast<std::size_t>(i) * n;
    const double* qrow = q.data() + static_cast<std::size_t>(i) * r;
    for (int p = 0; p < r; ++p) {
      const double qv = qrow[p];
      if (qv == 0.0) continue;
      double* brow = b.data() + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) brow[j] += qv * arow[j];
    }
  }

  // Eigen-decompose B B^T (r x r); sigma_i = sqrt(lambda_i).
  std::vector<double> bbt(static_cast<std::size_t>(r) * r, 0.0);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < r; ++j) {
      double s = 0.0;
      const double* bi = b.data() + static_cast<std::size_t>(i) * n;
      const double* bj = b.data() + static_cast<std::size_t>(j) * n;
      for (int p = 0; p < n; ++p) s += bi[p] * bj[p];
      bbt[static_cast<std::size_t>(i) * r + j] = s;
    }
  std::vector<double> lambda, ub;
  linalg::jacobi_eigh(std::move(bbt), r, lambda, ub);

  TruncatedSvd out;
  out.m = m;
  out.n = n;
  out.rank = rank;
  out.sigma.resize(static_cast<std::size_t>(rank));
  for (int i = 0; i < rank; ++i)
    out.sigma[static_cast<std::size_t>(i)] = std::sqrt(std::max(0.0, lambda[static_cast<std::size_t>(i)]));
  // U = Q * U_B[:, :rank]
  out.u.assign(static_cast<std::size_t>(m) * rank, 0.0);
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < r; ++p) {
      const double qv = q[static_cast<std::size_t>(i) * r + p];
      if (qv == 0.0) continue;
      for (int j = 0; j < rank; ++j)
        out.u[static_cast<std::size_t>(i) * rank + j] += qv * ub[static_cast<std::size_t>(p) * r + j];
    }
  // V * Sigma = B^T U_B[:, :rank]; divide by sigma to recover V.
  std::vector<double> vsig(static_cast<std::size_t>(n) * rank, 0.0);
  for (int p = 0; p < r; ++p) {
    const double* brow = b.data() + static_cast<std::size_t>(p) * n;
    for (int j = 0; j < rank; ++j) {
      const double uv = ub[static_cast<std::size_t>(p) * r + j];
      if (uv == 0.0) continue;
      for (int i = 0; i < n; ++i)
        vsig[static_cast<std::size_t>(i) * rank + j] += brow[i] * uv;
    }
  }
  out.v.assign(static_cast<std::size_t>(n) * rank, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < rank; ++j) {
      const double s = out.sigma[static_cast<std::size_t>(j)];
      out.v[static_cast<std::size_t>(i) * rank + j] =
          s > 1e-300 ? vsig[static_cast<std::size_t>(i) * rank + j] / s : 0.0;
    }
  return out;
}

// Collaborative-filtering embeddings: rank-d truncated SVD of the binary
// user-item matrix, item factors scaled by singular values (V * Sigma).
inline ItemEmbeddingMatrix svd_embeddings(const std::vector<UserHistory>& histories, int n_items,
                                          int dim, std::uint64_t seed) {
  const int n_users = static_cast<int>(histories.size());
  if (n_users == 0 || n_items == 0) throw ValidationError("svd_embeddings: empty corpus");
  if (dim > std::min(n_items, n_users))
    throw ValidationError("svd_embeddings: d must be <= min(N, n_users)");

  std::vector<double> a(static_cast<std::size_t>(n_users) * n_items, 0.0);
  for (int u = 0; u < n_users; ++u)
    for (int item : histories[static_cast<std::size_t>(u)].items) {
      if (item < 0 || item >= n_items)
        throw ValidationError("svd_embeddings: item id out of range: " + std::to_string(item));
      a[static_cast<std::size_t>(u) * n_items + item] = 1.0;
    }

  const TruncatedSvd svd = randomized_svd(a, n_users, n_items, dim, seed);
  ItemEmbeddingMatrix m;
  m.n_items = n_items;
  m.dim = dim;
  m.values.resize(static_cast<std::size_t>(n_items) * dim);
  for (int i = 0; i < n_items; ++i)
    for (int j = 0; j < dim; ++j)
      m.at(i, j) = svd.v[static_cast<std::size_t>(i) * dim + j] * svd.sigma[static_cast<std::size_t>(j)];
  m.validate();
  return m;
}

// Text format: first line "N d", then N lines of d space-separated floats.
inline ItemEmbeddingMatrix load_embeddings(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open embeddings file: " + path);
  int n = 0, d = 0;
  if (!(in >> n >> d) || n < 1 || d < 1)
    throw IoError("embeddings file " + path + ": bad header, expected `N d`");
  ItemEmbeddingMatrix m;
  m.n_items = n;
  m.dim = d;
  m.values.resize(static_cast<std::size_t>(n) * d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) {
      double v;
      if (!(in >> v))
        throw IoError("embeddings file " + path + ": expected " + std::to_string(n) +
                      " rows of " + std::to_string(d) + " values, failed at row " +
                      std::to_string(i));
      if (!std::isfinite(v))
        throw IoError("embeddings file " + path + ": non-finite value at row " + std::to_string(i));
      m.at(i, j) = v;
    }
  return m;
}

inline void save_embeddings(const std::string& path, const ItemEmbeddingMatrix& m) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write embeddings file: " + path);
  out.precision(17);
  out << m.n_items << ' ' << m.dim << '\n';
  for (int i = 0; i < m.n_items; ++i) {
    for (int j = 0; j < m.dim; ++j) out << (j ? " " : "") << m.at(i, j);
    out << '\n';
  }
}

}  // namespace seater
