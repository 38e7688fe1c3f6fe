#pragma once

// Hot loops of the block predictor, each with a serial reference and an
// OpenMP version. Both variants walk every block in the same order, so
// their results are bitwise identical; tests and the benchmark rely on that.

#include <vector>

#include <Eigen/Core>

#include "blockagg/geometry.hpp"

namespace blockagg::kernels {

enum class Exec { serial, parallel };

/// Cells grouped by block: cells of block b are index[start[b] .. start[b+1]).
struct BlockIndex {
  std::vector<int> start;
  std::vector<int> index;

  int n_blocks() const { return static_cast<int>(start.size()) - 1; }
  static BlockIndex from_assignment(const std::vector<int>& block_of_cell, int n_blocks);
};

/// eta = design * u + offset
void cell_predictor(const SparseRowMatrix& design, const Eigen::VectorXd& offset,
                    const Eigen::VectorXd& u, Eigen::VectorXd& eta, Exec exec);

/// out_b = sum_j w_j eta_j
void block_weighted_sum(const BlockIndex& blocks, const Eigen::VectorXd& weights,
                        const Eigen::VectorXd& eta, Eigen::VectorXd& out, Exec exec);

/// out_b = log sum_j w_j exp(eta_j), shifted by the block maximum.
/// Throws std::domain_error if a block has no positive weight.
void block_logsumexp(const BlockIndex& blocks, const Eigen::VectorXd& weights,
                     const Eigen::VectorXd& eta, Eigen::VectorXd& out, Exec exec);

/// Per-block softmax p_j = w_j exp(eta_j) / sum_k w_k exp(eta_k).
void block_softmax(const BlockIndex& blocks, const Eigen::VectorXd& weights,
                   const Eigen::VectorXd& eta, Eigen::VectorXd& p, Exec exec);

/// Row b = sum_j c_j * design.row(j) over cells of block b.
SparseRowMatrix combine_rows(const BlockIndex& blocks, const SparseRowMatrix& design,
                             const Eigen::VectorXd& coefficients, Exec exec);

}  // namespace blockagg::kernels
