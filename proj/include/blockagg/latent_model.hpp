#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "blockagg/geometry.hpp"
#include "blockagg/matern_spde.hpp"
#include "blockagg/mrf_effects.hpp"
#include "blockagg/predictor.hpp"
#include "blockagg/priors.hpp"

namespace blockagg {

enum class Method { block_aggregation, centroids, mrf };

const char* to_string(Method m);
Method method_from_string(const std::string& name);

/// Gaussian prior of the latent vector at given hyperparameters.
///
/// `log_norm` is the log density at the mean, taken over the proper
/// directions (flat fixed effects excluded) and, when constraints exist, on
/// the constrained subspace.
struct PriorTerms {
  SparseMatrix precision;
  Eigen::VectorXd mean;
  double log_norm = 0.0;
};

/// One posterior-predictive realisation on every block and grid cell.
struct PredictiveDraw {
  Eigen::VectorXd block;    // mu_i (Gaussian) or log mu_i (Poisson), all blocks
  Eigen::VectorXd cell_mu;  // f(S(b_ij)) on every grid cell, offsets included
};

/// Latent Gaussian model on a dataset: prior of u given theta, the
/// block predictor restricted to observed blocks, and predictive mapping.
///
/// Designs never depend on theta; hyperparameters enter only through the
/// prior precision (and the noise variance of the Gaussian likelihood).
class LatentModel {
 public:
  virtual ~LatentModel() = default;

  Method method() const { return method_; }
  Likelihood likelihood() const { return likelihood_; }
  int dim() const { return observed_.dim(); }
  int n_fixed() const { return n_fixed_; }
  int n_blocks() const { return n_blocks_; }
  const std::vector<std::string>& fixed_names() const { return fixed_names_; }
  const HyperLayout& hyper() const { return layout_; }
  const PriorBundle& priors() const { return priors_; }
  const BlockPredictor& observed() const { return observed_; }
  const std::vector<int>& observed_blocks() const { return observed_blocks_; }
  const Eigen::MatrixXd& constraints() const { return constraints_; }
  bool is_linear() const { return observed_.is_linear(); }

  double noise_variance(const Eigen::VectorXd& theta) const;
  double log_hyper_prior(const Eigen::VectorXd& theta) const;

  virtual PriorTerms prior(const Eigen::VectorXd& theta) const = 0;
  virtual void predictive_draw(const Eigen::VectorXd& u, const Eigen::VectorXd& theta,
                               std::mt19937_64& rng, PredictiveDraw& out) const = 0;

  /// Zero state, with fixed effects from a weighted least-squares fit of
  /// log(y + 0.5) for Poisson models.
  Eigen::VectorXd initial_state(const Eigen::VectorXd& y_observed) const;

 protected:
  Method method_ = Method::block_aggregation;
  Likelihood likelihood_ = Likelihood::gaussian;
  int n_fixed_ = 0;
  int n_blocks_ = 0;
  std::vector<std::string> fixed_names_;
  HyperLayout layout_;
  PriorBundle priors_;
  BlockPredictor observed_;
  std::vector<int> observed_blocks_;
  Eigen::MatrixXd constraints_;

  void set_fixed_prior(PriorTerms& terms, int dim) const;
};

/// Inputs shared by every method on one dataset.
struct ModelInputs {
  const CellGrid* grid = nullptr;
  const Partition* partition = nullptr;
  const Mesh* mesh = nullptr;
  std::shared_ptr<const SpdeOperators> spde;  // Matérn methods
  Eigen::VectorXd weights;                    // w_ij aligned with grid cells
  Likelihood likelihood = Likelihood::gaussian;
  PriorBundle priors;
  std::vector<int> observed_blocks;            // indices into the partition
  const AdjacencyGraph* adjacency = nullptr;   // full-partition graph (mrf)
};

/// Matérn field with the full cell-level aggregation of the predictor.
std::unique_ptr<LatentModel> make_block_aggregation_model(const ModelInputs& in);
/// Matérn field evaluated at block centroids with block-averaged covariates.
std::unique_ptr<LatentModel> make_centroid_model(const ModelInputs& in);
/// Block-averaged covariates plus a BYM2 effect on the observed-block graph.
std::unique_ptr<LatentModel> make_mrf_model(const ModelInputs& in);

std::unique_ptr<LatentModel> make_model(Method method, const ModelInputs& in);

/// Block-level covariates for the comparators: plain block means, or
/// exp(offset)-weighted means when offsets are present.
Eigen::MatrixXd block_mean_covariates(const CellGrid& grid, const Eigen::VectorXd& weights);
/// log sum_j w_ij exp(offset_ij) when offsets exist, else zeros.
Eigen::VectorXd block_log_exposure(const CellGrid& grid, const Eigen::VectorXd& weights);

}  // namespace blockagg
