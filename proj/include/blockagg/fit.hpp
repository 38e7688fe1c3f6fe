#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "blockagg/hyper.hpp"
#include "blockagg/laplace.hpp"
#include "blockagg/latent_model.hpp"

namespace blockagg {

struct FitControls {
  ExploreControls explore;
  InnerControls inner;
  int max_outer = 20;
  double change_tolerance = 0.10;  // max |delta u0| / posterior sd
  double alpha_tolerance = 0.05;   // |alpha - 1|
  double alpha_max = 2.0;
  double line_search_tolerance = 1e-3;
  // Exploration points below this weight are dropped from the mixture.
  double min_weight = 1e-8;
};

struct TraceEntry {
  int iteration = 0;
  double alpha = 1.0;
  double max_relative_change = 0.0;
  Eigen::VectorXd theta;
  double log_posterior = 0.0;
};

struct ParameterSummary {
  std::string name;
  double mean = 0.0;
  double sd = 0.0;
  double q025 = 0.0;
  double q975 = 0.0;
};

struct FitResult {
  Method method = Method::block_aggregation;
  Likelihood likelihood = Likelihood::gaussian;
  Eigen::VectorXd linearisation_point;
  Eigen::VectorXd y_observed;
  Exploration exploration;
  std::vector<GaussianApprox> components;  // one per retained exploration point
  std::vector<double> weights;             // sums to 1
  std::vector<ParameterSummary> fixed;
  std::vector<ParameterSummary> hyper;     // natural scale
  std::vector<TraceEntry> trace;
  bool converged = false;
  std::string message;

  int outer_iterations() const { return static_cast<int>(trace.size()); }
  // Mixture moments of the latent vector.
  Eigen::VectorXd posterior_mean() const;
  Eigen::VectorXd posterior_sd() const;
};

/// Damping factor for the outer update u0 + alpha (u_hat - u0): golden
/// section on (0, alpha_max] of || g(u(alpha)) - lin(u_hat) ||, i.e. the
/// nonlinear predictor along the step against the value the linearised
/// model reached. Returns 1 for linear predictors and when u_hat == u0.
double line_search_alpha(const BlockPredictor& predictor, const Linearisation& lin,
                         const Eigen::VectorXd& u0, const Eigen::VectorXd& u_hat, double alpha_max = 2.0,
                         double tolerance = 1e-3);

/// Iterated linearisation: hyperparameter mode, inner mode and damped update
/// of the linearisation point until both convergence criteria hold, then
/// exploration of theta at the final point and mixture summaries.
/// `y_observed` aligns with model.observed_blocks(). Numerical failures
/// inside the loop end the fit with converged = false.
FitResult fit(const LatentModel& model, const Eigen::VectorXd& y_observed, const FitControls& controls = {});

/// Quantile of a finite mixture of normals by bisection on its CDF.
double normal_mixture_quantile(const std::vector<double>& weights, const std::vector<double>& means,
                               const std::vector<double>& sds, double p);

nlohmann::json fit_to_json(const FitResult& fit, const LatentModel& model, const FitControls& controls);

}  // namespace blockagg
