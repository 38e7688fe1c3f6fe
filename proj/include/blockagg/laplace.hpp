#pragma once

#include <random>

#include <Eigen/Core>

#include "blockagg/latent_model.hpp"
#include "blockagg/matern_spde.hpp"
#include "blockagg/predictor.hpp"

namespace blockagg {

struct InnerControls {
  int max_iter = 50;
  // Newton stops once half the squared Newton decrement falls below this.
  double tolerance = 1e-10;
};

/// Gaussian approximation of u | theta, y for the linearised model.
struct GaussianApprox {
  Eigen::VectorXd theta;
  Eigen::VectorXd mode;
  SparsePrecision precision;
  ConstraintCorrector corrector;
  double log_likelihood = 0.0;
  double log_posterior = 0.0;  // unnormalised log pi(theta | y)
  int iterations = 0;

  // Marginal sds of u with the constraints applied.
  Eigen::VectorXd marginal_sd() const;
  // mode + L^-T z, then conditioned on the constraints.
  Eigen::VectorXd sample(std::mt19937_64& rng) const;
};

/// Block log-likelihood of observed y at block predictor eta
/// (mean for Gaussian, log mean for Poisson); includes normalising terms.
double block_log_likelihood(Likelihood likelihood, const Eigen::VectorXd& y,
                            const Eigen::VectorXd& eta, double noise_variance);

/// Newton iterations on log pi(u | theta, y) of the model linearised by
/// `lin` (one exact step for the Gaussian likelihood). The returned
/// precision is prior precision + J' W J at the mode, W being the negative
/// second derivative of each block log-likelihood in its predictor.
/// Also evaluates the Laplace log posterior of theta:
///   log pi(theta) + log pi(y | u*) + log pi(u* | theta) - log pi_G(u* | y, theta),
/// with constrained densities on the constraint subspace.
/// Throws NumericalError when Newton fails to converge within max_iter.
GaussianApprox inner_gaussian_approx(const LatentModel& model, const Eigen::VectorXd& theta,
                                     const Linearisation& lin, const Eigen::VectorXd& y,
                                     const InnerControls& controls = {});

double hyper_log_posterior(const LatentModel& model, const Eigen::VectorXd& theta,
                           const Linearisation& lin, const Eigen::VectorXd& y,
                           const InnerControls& controls = {});

}  // namespace blockagg
