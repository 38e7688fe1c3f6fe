#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "blockagg/predictor.hpp"

namespace blockagg {

/// Exponential prior on a standard deviation with P(sigma > u) = a.
double pc_sd_log_density(double sigma, double u_thresh, double a_prob);

/// PC prior for a 2D Matérn range with P(rho < u) = a:
/// density lambda rho^-2 exp(-lambda / rho), lambda = -ln(a) u.
double pc_range_log_density(double rho, double u_thresh, double a_prob);

double gamma_log_density(double x, double shape, double rate);
double beta_log_density(double x, double a, double b);

/// Hyperparameters the models use, each stored on an unconstrained scale:
/// log sd, log range, log precision, logit mixing.
enum class HyperKind { noise_sd, range, field_sd, mrf_precision, mixing };

const char* to_string(HyperKind kind);
double to_natural(HyperKind kind, double internal);
double to_internal(HyperKind kind, double natural);

/// Prior on one hyperparameter. `pc_sd` acts on the standard deviation
/// (for mrf_precision that is 1/sqrt(tau)); `gamma_precision` acts on the
/// precision (1/sigma^2 for noise_sd); `flat` is constant on the natural
/// parameter, leaving only the Jacobian.
struct HyperPrior {
  enum class Kind { flat, pc_sd, pc_range, gamma_precision, uniform, beta };
  Kind kind = Kind::flat;
  double p1 = 0.0;
  double p2 = 0.0;

  static HyperPrior flat() { return {Kind::flat, 0, 0}; }
  static HyperPrior pc_sd(double u, double a) { return {Kind::pc_sd, u, a}; }
  static HyperPrior pc_range(double u, double a) { return {Kind::pc_range, u, a}; }
  static HyperPrior gamma_precision(double shape, double rate) { return {Kind::gamma_precision, shape, rate}; }
  static HyperPrior uniform() { return {Kind::uniform, 0, 0}; }
  static HyperPrior beta(double a, double b) { return {Kind::beta, a, b}; }

  void validate(HyperKind slot) const;
  // Median of the prior on the natural parameter; used as a starting point.
  double median(HyperKind slot) const;
};

const char* to_string(HyperPrior::Kind kind);
HyperPrior::Kind hyper_prior_kind_from_string(const std::string& name);

struct PriorBundle {
  // Gaussian priors on fixed effects; infinite variance means flat.
  std::vector<double> fixed_mean{0.0, 0.0};
  std::vector<double> fixed_variance{std::numeric_limits<double>::infinity(), 1000.0};
  HyperPrior noise = HyperPrior::pc_sd(std::sqrt(0.1), 0.5);
  HyperPrior range = HyperPrior::pc_range(0.1, 0.5);
  HyperPrior field_sd = HyperPrior::pc_sd(1.73, 0.5);
  HyperPrior mrf_precision = HyperPrior::pc_sd(1.0, 0.01);
  HyperPrior mixing = HyperPrior::uniform();

  const HyperPrior& for_slot(HyperKind kind) const;
  double fixed_precision(int k) const;  // 0 for flat
  void validate() const;
};

/// Calibrations used in the simulation study: the field sd threshold differs
/// between the data-scale Gaussian and the log-scale Poisson models.
PriorBundle default_priors(Likelihood likelihood);

/// Ordered set of hyperparameters of a model.
struct HyperLayout {
  std::vector<HyperKind> kinds;

  int size() const { return static_cast<int>(kinds.size()); }
  int find(HyperKind kind) const;  // -1 when absent
  double natural(const Eigen::VectorXd& theta, HyperKind kind) const;
  std::vector<std::string> names() const;
};

/// Sum of hyperprior log densities on the internal scale (including
/// log-Jacobians of the transforms).
double log_prior(const Eigen::VectorXd& theta, const HyperLayout& layout, const PriorBundle& bundle);

/// Internal-scale starting point at the prior medians.
Eigen::VectorXd prior_median_theta(const HyperLayout& layout, const PriorBundle& bundle);

}  // namespace blockagg
