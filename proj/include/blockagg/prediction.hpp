#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "blockagg/fit.hpp"
#include "blockagg/geometry.hpp"
#include "blockagg/latent_model.hpp"
#include "blockagg/scoring.hpp"

namespace blockagg {

struct PredictionControls {
  int n_samples = 1000;
  std::uint64_t seed = 1;
  bool force = false;      // predict from a non-converged fit
  bool keep_samples = true;
};

/// Posterior-predictive draws of the latent quantities.
struct PosteriorDraws {
  Eigen::MatrixXd block_mu;  // blocks x draws, data scale
  Eigen::MatrixXd cell_mu;   // cells x draws
  std::vector<double> noise_variance;  // per draw; zero for Poisson
};

/// Draws u from the exploration-weighted mixture of Gaussian
/// approximations and maps each draw through the model. Draw s uses its own
/// RNG stream derived from the seed, so results do not depend on threads.
PosteriorDraws draw_posterior(const LatentModel& model, const FitResult& fit, const PredictionControls& controls);

/// Summary of a sample: mean, variance, equal-tailed 2.5/97.5 percentiles.
PredictiveSummary summarise_sample(const Eigen::VectorXd& values);

struct BlockPredictions {
  std::vector<PredictiveSummary> mu;  // block means
  std::vector<PredictiveSummary> y;   // new observation on the block
};

/// Y-predictive adds the Gaussian noise of each draw, or Poisson mixing.
BlockPredictions summarise_blocks(const Eigen::MatrixXd& block_mu, const std::vector<double>& noise_variance,
                                  Likelihood likelihood, std::uint64_t seed, bool keep_samples);

BlockPredictions predict_blocks(const LatentModel& model, const FitResult& fit, const PredictionControls& controls);
std::vector<PredictiveSummary> predict_cells(const LatentModel& model, const FitResult& fit,
                                             const PredictionControls& controls);

/// Block summaries on another partition of the same cells: cell draws are
/// re-aggregated with the given weights before summarising.
BlockPredictions predict_partition(const LatentModel& model, const FitResult& fit, const Partition& target,
                                   const Eigen::VectorXd& cell_weights, AggregationMode mode,
                                   const PredictionControls& controls);

using ModelFactory = std::function<std::unique_ptr<LatentModel>(const std::vector<int>& observed)>;

struct FoldResult {
  int block = -1;
  bool ok = false;
  std::string error;
  PredictiveSummary y;
  double ds = 0.0;
  double nls = 0.0;
};

struct CrossValidation {
  std::vector<FoldResult> folds;
  double mds = 0.0;   // mean DS score
  double tnls = 0.0;  // mean negative log score
  double rmse = 0.0;  // of predictive means
  int failures = 0;
};

/// Leave-one-block-out: refit without each observed block and score its
/// held-out Y. `y` aligns with `observed`. Fold failures are recorded.
CrossValidation cross_validate(const ModelFactory& factory, const std::vector<int>& observed,
                               const Eigen::VectorXd& y, const FitControls& fit_controls,
                               const PredictionControls& prediction_controls);

}  // namespace blockagg
