#include "blockagg/laplace.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include <Eigen/Dense>

namespace blockagg {

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

// Euclidean projection onto {A u = 0}.
Eigen::VectorXd project_feasible(const Eigen::MatrixXd& a, const Eigen::VectorXd& u) {
  if (a.rows() == 0) return u;
  Eigen::MatrixXd aat = a * a.transpose();
  return u - a.transpose() * aat.ldlt().solve(a * u);
}

double quad(const SparseMatrix& q, const Eigen::VectorXd& x) { return x.dot(q * x); }

SparseMatrix jtwj(const SparseMatrix& j, const Eigen::VectorXd& w) {
  SparseMatrix wj = w.asDiagonal() * j;
  SparseMatrix out = SparseMatrix(j.transpose()) * wj;
  return out;
}

}  // namespace

Eigen::VectorXd GaussianApprox::marginal_sd() const {
  Eigen::VectorXd var = marginal_variances(precision.factor());
  if (!corrector.empty()) var -= corrector.variance_reduction();
  return var.cwiseMax(0.0).cwiseSqrt();
}

Eigen::VectorXd GaussianApprox::sample(std::mt19937_64& rng) const {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd z(mode.size());
  for (int i = 0; i < z.size(); ++i) z[i] = normal(rng);
  Eigen::VectorXd x = mode + apply_inverse_factor_transpose(precision.factor(), z);
  return corrector.apply(x);
}

double block_log_likelihood(Likelihood likelihood, const Eigen::VectorXd& y, const Eigen::VectorXd& eta,
                            double noise_variance) {
  double ll = 0.0;
  if (likelihood == Likelihood::gaussian) {
    for (int i = 0; i < y.size(); ++i) {
      double r = y[i] - eta[i];
      ll += -0.5 * (kLog2Pi + std::log(noise_variance)) - 0.5 * r * r / noise_variance;
    }
  } else {
    for (int i = 0; i < y.size(); ++i) ll += y[i] * eta[i] - std::exp(eta[i]) - std::lgamma(y[i] + 1.0);
  }
  return ll;
}

GaussianApprox inner_gaussian_approx(const LatentModel& model, const Eigen::VectorXd& theta,
                                     const Linearisation& lin, const Eigen::VectorXd& y,
                                     const InnerControls& controls) {
  const int d = model.dim();
  if (lin.gradient.cols() != d || lin.gradient.rows() != y.size())
    throw std::invalid_argument("inner_gaussian_approx: linearisation does not match data");
  const Eigen::MatrixXd& a = model.constraints();
  PriorTerms prior = model.prior(theta);
  const SparseMatrix& q = prior.precision;
  SparseMatrix j(lin.gradient);
  SparseMatrix jt = j.transpose();

  GaussianApprox out;
  out.theta = theta;
  Eigen::VectorXd u;

  if (model.likelihood() == Likelihood::gaussian) {
    const double s2 = model.noise_variance(theta);
    SparseMatrix h = q + jtwj(j, Eigen::VectorXd::Constant(y.size(), 1.0 / s2));
    out.precision = SparsePrecision(h);
    Eigen::VectorXd b = q * prior.mean + jt * ((y - lin.delta) / s2);
    out.corrector = ConstraintCorrector(out.precision.factor(), a);
    u = out.corrector.apply(out.precision.solve(b));
    out.iterations = 1;
    out.log_likelihood = block_log_likelihood(Likelihood::gaussian, y, lin.evaluate(u), s2);
  } else {
    auto objective = [&](const Eigen::VectorXd& x) {
      Eigen::VectorXd eta = lin.evaluate(x);
      double ll = 0.0;
      for (int i = 0; i < y.size(); ++i) ll += y[i] * eta[i] - std::exp(eta[i]);
      Eigen::VectorXd dx = x - prior.mean;
      double f = ll - 0.5 * quad(q, dx);
      return std::isfinite(f) ? f : -std::numeric_limits<double>::infinity();
    };
    u = project_feasible(a, lin.point);
    double f = objective(u);
    bool converged = false;
    double decrement = 0.0;
    for (int it = 0; it < controls.max_iter; ++it) {
      Eigen::VectorXd eta = lin.evaluate(u);
      Eigen::VectorXd w = eta.array().exp().matrix();
      Eigen::VectorXd g = jt * (y - w) - q * (u - prior.mean);
      SparsePrecision h(SparseMatrix(q + jtwj(j, w)));
      ConstraintCorrector corr(h.factor(), a);
      Eigen::VectorXd target = corr.apply(u + h.solve(g));
      Eigen::VectorXd step = target - u;
      decrement = step.dot(h.matrix() * step);
      out.iterations = it + 1;
      double t = 1.0, f_new = objective(target);
      while (!(f_new >= f - 1e-12 * std::abs(f)) && t > 1e-10) {
        t *= 0.5;
        f_new = objective(u + t * step);
      }
      u += t * step;
      f = f_new;
      if (0.5 * decrement < controls.tolerance) {
        converged = true;
        break;
      }
    }
    if (!converged) {
      Eigen::VectorXd eta = lin.evaluate(u);
      Eigen::VectorXd g = jt * (y - eta.array().exp().matrix()) - q * (u - prior.mean);
      std::ostringstream msg;
      msg << "inner Newton iterations did not converge after " << controls.max_iter
          << " steps (gradient norm " << g.norm() << ", decrement " << decrement << ")";
      throw NumericalError(msg.str());
    }
    Eigen::VectorXd eta = lin.evaluate(u);
    out.precision = SparsePrecision(SparseMatrix(q + jtwj(j, eta.array().exp().matrix())));
    out.corrector = ConstraintCorrector(out.precision.factor(), a);
    out.log_likelihood = block_log_likelihood(Likelihood::poisson, y, eta, 0.0);
  }
  out.mode = u;

  const int k = static_cast<int>(a.rows());
  Eigen::VectorXd dx = u - prior.mean;
  const double log_prior_u = prior.log_norm - 0.5 * quad(q, dx);
  const double log_gauss = -0.5 * (d - k) * kLog2Pi + 0.5 * out.precision.log_determinant() +
                           0.5 * out.corrector.log_det_constraint_cov();
  out.log_posterior = model.log_hyper_prior(theta) + out.log_likelihood + log_prior_u - log_gauss;
  return out;
}

double hyper_log_posterior(const LatentModel& model, const Eigen::VectorXd& theta, const Linearisation& lin,
                           const Eigen::VectorXd& y, const InnerControls& controls) {
  return inner_gaussian_approx(model, theta, lin, y, controls).log_posterior;
}

}  // namespace blockagg
