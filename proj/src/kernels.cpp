#include "blockagg/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace blockagg::kernels {

BlockIndex BlockIndex::from_assignment(const std::vector<int>& block_of_cell, int n_blocks) {
  BlockIndex bi;
  bi.start.assign(n_blocks + 1, 0);
  for (int b : block_of_cell) {
    if (b < 0 || b >= n_blocks) throw std::invalid_argument("block index out of range");
    ++bi.start[b + 1];
  }
  for (int b = 0; b < n_blocks; ++b) bi.start[b + 1] += bi.start[b];
  bi.index.resize(block_of_cell.size());
  std::vector<int> fill(bi.start.begin(), bi.start.end() - 1);
  for (std::size_t c = 0; c < block_of_cell.size(); ++c)
    bi.index[fill[block_of_cell[c]]++] = static_cast<int>(c);
  return bi;
}

namespace {

inline double row_dot(const SparseRowMatrix& m, int r, const Eigen::VectorXd& u) {
  double s = 0.0;
  for (SparseRowMatrix::InnerIterator it(m, r); it; ++it) s += it.value() * u[it.col()];
  return s;
}

inline double weighted_sum_one(const BlockIndex& bi, int b, const Eigen::VectorXd& w,
                               const Eigen::VectorXd& eta) {
  double s = 0.0;
  for (int k = bi.start[b]; k < bi.start[b + 1]; ++k) s += w[bi.index[k]] * eta[bi.index[k]];
  return s;
}

inline double logsumexp_one(const BlockIndex& bi, int b, const Eigen::VectorXd& w,
                            const Eigen::VectorXd& eta) {
  double mx = -std::numeric_limits<double>::infinity();
  for (int k = bi.start[b]; k < bi.start[b + 1]; ++k) {
    int c = bi.index[k];
    if (w[c] > 0) mx = std::max(mx, eta[c]);
  }
  if (!std::isfinite(mx)) return std::numeric_limits<double>::quiet_NaN();
  double s = 0.0;
  for (int k = bi.start[b]; k < bi.start[b + 1]; ++k) {
    int c = bi.index[k];
    if (w[c] > 0) s += w[c] * std::exp(eta[c] - mx);
  }
  return mx + std::log(s);
}

void check_lse(const Eigen::VectorXd& out) {
  for (int b = 0; b < out.size(); ++b)
    if (std::isnan(out[b]))
      throw std::domain_error("block " + std::to_string(b) + " has no positive weight");
}

}  // namespace

void cell_predictor(const SparseRowMatrix& design, const Eigen::VectorXd& offset,
                    const Eigen::VectorXd& u, Eigen::VectorXd& eta, Exec exec) {
  if (design.cols() != u.size() || offset.size() != design.rows())
    throw std::invalid_argument("cell_predictor: dimension mismatch");
  const int n = static_cast<int>(design.rows());
  eta.resize(n);
  if (exec == Exec::serial) {
    for (int r = 0; r < n; ++r) eta[r] = offset[r] + row_dot(design, r, u);
  } else {
#pragma omp parallel for schedule(static)
    for (int r = 0; r < n; ++r) eta[r] = offset[r] + row_dot(design, r, u);
  }
}

void block_weighted_sum(const BlockIndex& blocks, const Eigen::VectorXd& weights,
                        const Eigen::VectorXd& eta, Eigen::VectorXd& out, Exec exec) {
  const int nb = blocks.n_blocks();
  out.resize(nb);
  if (exec == Exec::serial) {
    for (int b = 0; b < nb; ++b) out[b] = weighted_sum_one(blocks, b, weights, eta);
  } else {
#pragma omp parallel for schedule(static)
    for (int b = 0; b < nb; ++b) out[b] = weighted_sum_one(blocks, b, weights, eta);
  }
}

void block_logsumexp(const BlockIndex& blocks, const Eigen::VectorXd& weights,
                     const Eigen::VectorXd& eta, Eigen::VectorXd& out, Exec exec) {
  const int nb = blocks.n_blocks();
  out.resize(nb);
  if (exec == Exec::serial) {
    for (int b = 0; b < nb; ++b) out[b] = logsumexp_one(blocks, b, weights, eta);
  } else {
#pragma omp parallel for schedule(static)
    for (int b = 0; b < nb; ++b) out[b] = logsumexp_one(blocks, b, weights, eta);
  }
  check_lse(out);
}

void block_softmax(const BlockIndex& blocks, const Eigen::VectorXd& weights,
                   const Eigen::VectorXd& eta, Eigen::VectorXd& p, Exec exec) {
  Eigen::VectorXd lse;
  block_logsumexp(blocks, weights, eta, lse, exec);
  const int nb = blocks.n_blocks();
  p.resize(eta.size());
  auto one = [&](int b) {
    for (int k = blocks.start[b]; k < blocks.start[b + 1]; ++k) {
      int c = blocks.index[k];
      p[c] = weights[c] > 0 ? weights[c] * std::exp(eta[c] - lse[b]) : 0.0;
    }
  };
  if (exec == Exec::serial) {
    for (int b = 0; b < nb; ++b) one(b);
  } else {
#pragma omp parallel for schedule(static)
    for (int b = 0; b < nb; ++b) one(b);
  }
}

SparseRowMatrix combine_rows(const BlockIndex& blocks, const SparseRowMatrix& design,
                             const Eigen::VectorXd& coefficients, Exec exec) {
  const int nb = blocks.n_blocks();
  const int ncol = static_cast<int>(design.cols());
  std::vector<std::vector<std::pair<int, double>>> rows(nb);
  struct Scratch {
    std::vector<double> acc;
    std::vector<char> seen;
    std::vector<int> touched;
  };
  auto one = [&](int b, Scratch& s) {
    s.touched.clear();
    for (int k = blocks.start[b]; k < blocks.start[b + 1]; ++k) {
      int c = blocks.index[k];
      double coef = coefficients[c];
      if (coef == 0.0) continue;
      for (SparseRowMatrix::InnerIterator it(design, c); it; ++it) {
        int col = static_cast<int>(it.col());
        if (!s.seen[col]) {
          s.seen[col] = 1;
          s.touched.push_back(col);
        }
        s.acc[col] += coef * it.value();
      }
    }
    std::sort(s.touched.begin(), s.touched.end());
    auto& row = rows[b];
    row.clear();
    for (int col : s.touched) {
      row.emplace_back(col, s.acc[col]);
      s.acc[col] = 0.0;
      s.seen[col] = 0;
    }
  };
  auto scratch = [ncol] { return Scratch{std::vector<double>(ncol, 0.0), std::vector<char>(ncol, 0), {}}; };
  if (exec == Exec::serial) {
    Scratch s = scratch();
    for (int b = 0; b < nb; ++b) one(b, s);
  } else {
#pragma omp parallel
    {
      Scratch s = scratch();
#pragma omp for schedule(static)
      for (int b = 0; b < nb; ++b) one(b, s);
    }
  }
  SparseRowMatrix out(nb, ncol);
  std::vector<int> nnz(nb);
  for (int b = 0; b < nb; ++b) nnz[b] = static_cast<int>(rows[b].size());
  out.reserve(nnz);
  for (int b = 0; b < nb; ++b)
    for (auto [col, v] : rows[b]) out.insert(b, col) = v;
  out.makeCompressed();
  return out;
}

}  // namespace blockagg::kernels
