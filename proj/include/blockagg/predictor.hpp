#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "blockagg/geometry.hpp"
#include "blockagg/kernels.hpp"

namespace blockagg {

enum class Likelihood { gaussian, poisson };

const char* to_string(Likelihood lik);
Likelihood likelihood_from_string(const std::string& name);

/// Fixed effects plus field weights (mesh nodes or block effects).
struct LatentState {
  Eigen::VectorXd beta;
  Eigen::VectorXd field;

  Eigen::VectorXd stacked() const;
  static LatentState split(const Eigen::VectorXd& u, int n_fixed);
};

/// First-order expansion of the block predictor: g(u) ≈ delta + gradient * u.
struct Linearisation {
  Eigen::VectorXd delta;
  SparseRowMatrix gradient;
  Eigen::VectorXd point;

  Eigen::VectorXd evaluate(const Eigen::VectorXd& u) const { return delta + gradient * u; }
};

/// Cell design [Z | A]: covariate columns followed by projector columns.
SparseRowMatrix cell_design(const Eigen::MatrixXd& covariates, const SparseRowMatrix& projector);

/// Cell-level linear predictor and its aggregation to blocks.
///
/// Gaussian-identity blocks are mu_i = sum_j w_ij eta_ij. Poisson-log blocks
/// are reported on the log scale, log mu_i = log sum_j w_ij exp(eta_ij).
class BlockPredictor {
 public:
  BlockPredictor() = default;
  BlockPredictor(SparseRowMatrix design, Eigen::VectorXd offset, std::vector<int> block_of_cell,
                 int n_blocks, Eigen::VectorXd weights, Likelihood likelihood,
                 kernels::Exec exec = kernels::Exec::parallel);

  int n_cells() const { return static_cast<int>(design_.rows()); }
  int n_blocks() const { return index_.n_blocks(); }
  int dim() const { return static_cast<int>(design_.cols()); }
  Likelihood likelihood() const { return likelihood_; }
  const SparseRowMatrix& design() const { return design_; }
  const Eigen::VectorXd& offset() const { return offset_; }
  const Eigen::VectorXd& weights() const { return weights_; }
  const std::vector<int>& block_of_cell() const { return block_of_cell_; }
  const kernels::BlockIndex& index() const { return index_; }

  // Linear in u: Gaussian, or Poisson with at most one weighted cell per block.
  bool is_linear() const { return linear_; }

  Eigen::VectorXd cells(const Eigen::VectorXd& u) const;
  Eigen::VectorXd blocks(const Eigen::VectorXd& u) const;
  Eigen::VectorXd blocks_from_cells(const Eigen::VectorXd& eta) const;
  Linearisation linearise(const Eigen::VectorXd& u0) const;

  // Predictor on the cells of the given blocks only, blocks renumbered
  // in the order given.
  BlockPredictor restrict_to(const std::vector<int>& blocks) const;

 private:
  SparseRowMatrix design_;
  Eigen::VectorXd offset_;
  std::vector<int> block_of_cell_;
  Eigen::VectorXd weights_;
  Likelihood likelihood_ = Likelihood::gaussian;
  kernels::Exec exec_ = kernels::Exec::parallel;
  kernels::BlockIndex index_;
  bool linear_ = true;
};

/// eta_ij = z_ij' beta + (A field)_ij, plus the grid's log-offset for
/// Poisson-log. Offsets with the Gaussian family are rejected.
Eigen::VectorXd eval_cell_predictor(const LatentState& u, const CellGrid& grid,
                                    const Projector& projector, Likelihood likelihood);

/// mu_i = sum_j w_ij eta_ij.
Eigen::VectorXd aggregate_gaussian(const Eigen::VectorXd& eta, const Eigen::VectorXd& weights,
                                   const CellGrid& grid);

/// log mu_i = log sum_j w_ij exp(eta_ij), shifted by the block maximum.
Eigen::VectorXd aggregate_poisson(const Eigen::VectorXd& eta, const Eigen::VectorXd& weights,
                                  const CellGrid& grid);

Linearisation linearise(const LatentState& u0, Likelihood likelihood, const CellGrid& grid,
                        const Projector& projector, const Eigen::VectorXd& weights);

/// Builds the full block-aggregation predictor for a grid and projector.
BlockPredictor make_block_predictor(const CellGrid& grid, const Projector& projector,
                                    const Eigen::VectorXd& weights, Likelihood likelihood);

}  // namespace blockagg
