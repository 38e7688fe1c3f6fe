#include "blockagg/predictor.hpp"

#include <stdexcept>

namespace blockagg {

const char* to_string(Likelihood lik) { return lik == Likelihood::gaussian ? "gaussian" : "poisson"; }

Likelihood likelihood_from_string(const std::string& name) {
  if (name == "gaussian") return Likelihood::gaussian;
  if (name == "poisson") return Likelihood::poisson;
  throw std::invalid_argument("unknown family '" + name + "' (expected gaussian or poisson)");
}

Eigen::VectorXd LatentState::stacked() const {
  Eigen::VectorXd u(beta.size() + field.size());
  u << beta, field;
  return u;
}

LatentState LatentState::split(const Eigen::VectorXd& u, int n_fixed) {
  return {u.head(n_fixed), u.tail(u.size() - n_fixed)};
}

SparseRowMatrix cell_design(const Eigen::MatrixXd& covariates, const SparseRowMatrix& projector) {
  if (covariates.rows() != projector.rows())
    throw std::invalid_argument("cell_design: covariate rows and projector rows differ");
  const int p = static_cast<int>(covariates.cols());
  SparseRowMatrix d(covariates.rows(), p + projector.cols());
  std::vector<int> nnz(covariates.rows());
  for (int r = 0; r < covariates.rows(); ++r)
    nnz[r] = p + static_cast<int>(projector.outerIndexPtr()[r + 1] - projector.outerIndexPtr()[r]);
  d.reserve(nnz);
  for (int r = 0; r < covariates.rows(); ++r) {
    for (int k = 0; k < p; ++k)
      if (covariates(r, k) != 0.0) d.insert(r, k) = covariates(r, k);
    for (SparseRowMatrix::InnerIterator it(projector, r); it; ++it)
      d.insert(r, p + it.col()) = it.value();
  }
  d.makeCompressed();
  return d;
}

BlockPredictor::BlockPredictor(SparseRowMatrix design, Eigen::VectorXd offset,
                               std::vector<int> block_of_cell, int n_blocks,
                               Eigen::VectorXd weights, Likelihood likelihood, kernels::Exec exec)
    : design_(std::move(design)),
      offset_(std::move(offset)),
      block_of_cell_(std::move(block_of_cell)),
      weights_(std::move(weights)),
      likelihood_(likelihood),
      exec_(exec) {
  const auto n = static_cast<std::size_t>(design_.rows());
  if (offset_.size() != design_.rows() || block_of_cell_.size() != n ||
      weights_.size() != design_.rows())
    throw std::invalid_argument("BlockPredictor: cell-aligned inputs differ in length");
  if (likelihood_ == Likelihood::gaussian && offset_.size() > 0 && offset_.cwiseAbs().maxCoeff() > 0)
    throw std::invalid_argument("BlockPredictor: log-offsets require the Poisson-log family");
  for (int c = 0; c < weights_.size(); ++c)
    if (!(weights_[c] >= 0) || !std::isfinite(weights_[c]))
      throw std::invalid_argument("BlockPredictor: weights must be finite and non-negative");
  index_ = kernels::BlockIndex::from_assignment(block_of_cell_, n_blocks);
  linear_ = true;
  if (likelihood_ == Likelihood::poisson) {
    for (int b = 0; b < n_blocks && linear_; ++b) {
      int positive = 0;
      for (int k = index_.start[b]; k < index_.start[b + 1]; ++k) positive += weights_[index_.index[k]] > 0;
      if (positive > 1) linear_ = false;
    }
  }
}

Eigen::VectorXd BlockPredictor::cells(const Eigen::VectorXd& u) const {
  Eigen::VectorXd eta;
  kernels::cell_predictor(design_, offset_, u, eta, exec_);
  return eta;
}

Eigen::VectorXd BlockPredictor::blocks_from_cells(const Eigen::VectorXd& eta) const {
  Eigen::VectorXd out;
  if (likelihood_ == Likelihood::gaussian)
    kernels::block_weighted_sum(index_, weights_, eta, out, exec_);
  else
    kernels::block_logsumexp(index_, weights_, eta, out, exec_);
  return out;
}

Eigen::VectorXd BlockPredictor::blocks(const Eigen::VectorXd& u) const {
  return blocks_from_cells(cells(u));
}

Linearisation BlockPredictor::linearise(const Eigen::VectorXd& u0) const {
  if (!u0.allFinite()) throw std::invalid_argument("linearise: non-finite linearisation point");
  Linearisation lin;
  lin.point = u0;
  if (likelihood_ == Likelihood::gaussian) {
    lin.gradient = kernels::combine_rows(index_, design_, weights_, exec_);
    kernels::block_weighted_sum(index_, weights_, offset_, lin.delta, exec_);
    return lin;
  }
  Eigen::VectorXd eta = cells(u0);
  Eigen::VectorXd p;
  kernels::block_softmax(index_, weights_, eta, p, exec_);
  lin.gradient = kernels::combine_rows(index_, design_, p, exec_);
  Eigen::VectorXd lse;
  kernels::block_logsumexp(index_, weights_, eta, lse, exec_);
  lin.delta = lse - lin.gradient * u0;
  return lin;
}

BlockPredictor BlockPredictor::restrict_to(const std::vector<int>& blocks) const {
  std::vector<int> new_id(n_blocks(), -1);
  for (std::size_t k = 0; k < blocks.size(); ++k) new_id[blocks[k]] = static_cast<int>(k);
  std::vector<int> keep;
  for (int c = 0; c < n_cells(); ++c)
    if (new_id[block_of_cell_[c]] >= 0) keep.push_back(c);
  const int n = static_cast<int>(keep.size());
  SparseRowMatrix d(n, design_.cols());
  std::vector<int> nnz(n);
  for (int r = 0; r < n; ++r)
    nnz[r] = static_cast<int>(design_.outerIndexPtr()[keep[r] + 1] - design_.outerIndexPtr()[keep[r]]);
  d.reserve(nnz);
  Eigen::VectorXd off(n), w(n);
  std::vector<int> boc(n);
  for (int r = 0; r < n; ++r) {
    for (SparseRowMatrix::InnerIterator it(design_, keep[r]); it; ++it) d.insert(r, it.col()) = it.value();
    off[r] = offset_[keep[r]];
    w[r] = weights_[keep[r]];
    boc[r] = new_id[block_of_cell_[keep[r]]];
  }
  d.makeCompressed();
  return BlockPredictor(std::move(d), std::move(off), std::move(boc), static_cast<int>(blocks.size()),
                        std::move(w), likelihood_, exec_);
}

namespace {

Eigen::VectorXd grid_offset(const CellGrid& grid, Likelihood likelihood) {
  if (!grid.log_offset) return Eigen::VectorXd::Zero(grid.n_cells());
  if (likelihood != Likelihood::poisson)
    throw std::invalid_argument("log-offsets are only supported with the Poisson-log family");
  return *grid.log_offset;
}

}  // namespace

BlockPredictor make_block_predictor(const CellGrid& grid, const Projector& projector,
                                    const Eigen::VectorXd& weights, Likelihood likelihood) {
  if (projector.n_points() != grid.n_cells())
    throw std::invalid_argument("projector rows do not match the cell count");
  return BlockPredictor(cell_design(grid.covariates, projector.matrix), grid_offset(grid, likelihood),
                        grid.block_of_cell, grid.n_blocks(), weights, likelihood);
}

Eigen::VectorXd eval_cell_predictor(const LatentState& u, const CellGrid& grid,
                                    const Projector& projector, Likelihood likelihood) {
  if (u.beta.size() != grid.n_covariates() || u.field.size() != projector.matrix.cols() ||
      projector.n_points() != grid.n_cells())
    throw std::invalid_argument("eval_cell_predictor: dimension mismatch");
  Eigen::VectorXd eta = grid.covariates * u.beta + projector.matrix * u.field;
  return eta + grid_offset(grid, likelihood);
}

Eigen::VectorXd aggregate_gaussian(const Eigen::VectorXd& eta, const Eigen::VectorXd& weights,
                                   const CellGrid& grid) {
  auto index = kernels::BlockIndex::from_assignment(grid.block_of_cell, grid.n_blocks());
  Eigen::VectorXd out;
  kernels::block_weighted_sum(index, weights, eta, out, kernels::Exec::serial);
  return out;
}

Eigen::VectorXd aggregate_poisson(const Eigen::VectorXd& eta, const Eigen::VectorXd& weights,
                                  const CellGrid& grid) {
  auto index = kernels::BlockIndex::from_assignment(grid.block_of_cell, grid.n_blocks());
  Eigen::VectorXd out;
  kernels::block_logsumexp(index, weights, eta, out, kernels::Exec::serial);
  return out;
}

Linearisation linearise(const LatentState& u0, Likelihood likelihood, const CellGrid& grid,
                        const Projector& projector, const Eigen::VectorXd& weights) {
  return make_block_predictor(grid, projector, weights, likelihood).linearise(u0.stacked());
}

}  // namespace blockagg
