#pragma once

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace blockagg {

using Objective = std::function<double(const Eigen::VectorXd&)>;

enum class ExploreStrategy { empirical_bayes, grid };

const char* to_string(ExploreStrategy s);
ExploreStrategy explore_strategy_from_string(const std::string& name);

struct ExploreControls {
  ExploreStrategy strategy = ExploreStrategy::grid;
  int max_evaluations = 600;    // per simplex run
  int restarts = 1;             // extra simplex runs from the best point
  double initial_step = 0.5;    // simplex edge on the internal scale
  double f_tolerance = 1e-7;
  double x_tolerance = 1e-4;
  double hessian_step = 0.02;
  double min_curvature = 0.1;   // eigenvalue floor of the negative Hessian
  int z_max = 2;                // grid spans z in {-z_max, ..., z_max}
};

struct NelderMeadResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int evaluations = 0;
  bool converged = false;
};

/// Derivative-free maximisation. Non-finite objective values count as -inf.
NelderMeadResult nelder_mead_maximize(const Objective& f, const Eigen::VectorXd& x0, double step,
                                      double f_tolerance, double x_tolerance, int max_evaluations);

/// Central-difference Hessian with step h in every coordinate.
Eigen::MatrixXd numerical_hessian(const Objective& f, const Eigen::VectorXd& x, double h,
                                  double f_at_x);

struct HyperPoint {
  Eigen::VectorXd theta;
  Eigen::VectorXd z;
  double log_posterior = 0.0;
  double weight = 0.0;
};

struct Exploration {
  Eigen::VectorXd mode;
  double mode_log_posterior = 0.0;
  Eigen::MatrixXd covariance;  // inverse of the (floored) negative Hessian
  Eigen::VectorXd sd;
  std::vector<HyperPoint> points;
  bool converged = false;
  int evaluations = 0;
};

/// Simplex search for the mode, then the curvature at the mode. The
/// empirical-Bayes strategy keeps the mode only; the grid strategy places
/// z-scores {-z_max..z_max} along each axis scaled by the marginal sds and
/// weights the points by exp(log posterior). Grid points are evaluated in
/// parallel, so `f` must be safe to call concurrently.
Exploration explore_hyper(const Objective& f, const Eigen::VectorXd& theta_init,
                          const ExploreControls& controls = {});

/// Mode search plus curvature only (no grid).
Exploration locate_mode(const Objective& f, const Eigen::VectorXd& theta_init, const ExploreControls& controls);

/// Full tensor grid around an existing mode, points ordered with the first
/// coordinate varying fastest. Log posteriors are left unset.
std::vector<HyperPoint> hyper_grid(const Exploration& e, int z_max);

/// Turns log posteriors into weights summing to one; -inf gets weight 0.
void normalise_weights(std::vector<HyperPoint>& points);

}  // namespace blockagg
