#include "blockagg/hyper.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <Eigen/Dense>

namespace blockagg {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double safe_eval(const Objective& f, const Eigen::VectorXd& x) {
  double v;
  try {
    v = f(x);
  } catch (const std::exception&) {
    return kNegInf;
  }
  return std::isfinite(v) ? v : kNegInf;
}

}  // namespace

const char* to_string(ExploreStrategy s) {
  return s == ExploreStrategy::grid ? "grid" : "empirical_bayes";
}

ExploreStrategy explore_strategy_from_string(const std::string& name) {
  if (name == "grid") return ExploreStrategy::grid;
  if (name == "empirical_bayes") return ExploreStrategy::empirical_bayes;
  throw std::invalid_argument("unknown exploration strategy '" + name + "' (expected grid or empirical_bayes)");
}

NelderMeadResult nelder_mead_maximize(const Objective& f, const Eigen::VectorXd& x0, double step,
                                      double f_tolerance, double x_tolerance, int max_evaluations) {
  const int n = static_cast<int>(x0.size());
  NelderMeadResult res;
  if (n == 0) {
    res.x = x0;
    res.value = safe_eval(f, x0);
    res.evaluations = 1;
    res.converged = true;
    return res;
  }
  // Adaptive coefficients (better behaved as the dimension grows).
  const double alpha = 1.0, beta = 1.0 + 2.0 / n, gamma = 0.75 - 0.5 / n, delta = 1.0 - 1.0 / n;
  std::vector<Eigen::VectorXd> xs(n + 1, x0);
  std::vector<double> fs(n + 1);
  for (int i = 0; i < n; ++i) xs[i + 1][i] += step;
  int evals = 0;
  auto eval = [&](const Eigen::VectorXd& x) {
    ++evals;
    return safe_eval(f, x);
  };
  for (int i = 0; i <= n; ++i) fs[i] = eval(xs[i]);
  if (!std::isfinite(fs[0])) throw std::runtime_error("nelder_mead_maximize: objective not finite at the start");

  std::vector<int> order(n + 1);
  while (true) {
    std::iota(order.begin(), order.end(), 0);
    // best first; ties by index keep runs deterministic
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return fs[a] > fs[b]; });
    std::vector<Eigen::VectorXd> xs2;
    std::vector<double> fs2;
    for (int i : order) {
      xs2.push_back(xs[i]);
      fs2.push_back(fs[i]);
    }
    xs.swap(xs2);
    fs.swap(fs2);

    double spread = 0.0;
    for (int i = 1; i <= n; ++i) spread = std::max(spread, (xs[i] - xs[0]).lpNorm<Eigen::Infinity>());
    if (std::isfinite(fs[n]) && fs[0] - fs[n] <= f_tolerance * (1.0 + std::abs(fs[0])) && spread <= x_tolerance) {
      res.converged = true;
      break;
    }
    if (evals >= max_evaluations) break;

    Eigen::VectorXd centroid = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < n; ++i) centroid += xs[i];
    centroid /= n;
    Eigen::VectorXd xr = centroid + alpha * (centroid - xs[n]);
    double fr = eval(xr);
    if (fr > fs[0]) {
      Eigen::VectorXd xe = centroid + beta * (xr - centroid);
      double fe = eval(xe);
      if (fe > fr) {
        xs[n] = xe;
        fs[n] = fe;
      } else {
        xs[n] = xr;
        fs[n] = fr;
      }
      continue;
    }
    if (fr > fs[n - 1]) {
      xs[n] = xr;
      fs[n] = fr;
      continue;
    }
    bool outside = fr > fs[n];
    Eigen::VectorXd xc = outside ? Eigen::VectorXd(centroid + gamma * (xr - centroid))
                                 : Eigen::VectorXd(centroid - gamma * (centroid - xs[n]));
    double fc = eval(xc);
    if ((outside && fc >= fr) || (!outside && fc > fs[n])) {
      xs[n] = xc;
      fs[n] = fc;
      continue;
    }
    for (int i = 1; i <= n; ++i) {
      xs[i] = xs[0] + delta * (xs[i] - xs[0]);
      fs[i] = eval(xs[i]);
    }
  }
  res.x = xs[0];
  res.value = fs[0];
  res.evaluations = evals;
  return res;
}

Eigen::MatrixXd numerical_hessian(const Objective& f, const Eigen::VectorXd& x, double h, double f0) {
  const int n = static_cast<int>(x.size());
  Eigen::MatrixXd hess(n, n);
  auto at = [&](int i, double si, int j, double sj) {
    Eigen::VectorXd p = x;
    p[i] += si * h;
    if (j >= 0) p[j] += sj * h;
    return safe_eval(f, p);
  };
  for (int i = 0; i < n; ++i) {
    hess(i, i) = (at(i, 1, -1, 0) - 2 * f0 + at(i, -1, -1, 0)) / (h * h);
    for (int j = 0; j < i; ++j) {
      double v = (at(i, 1, j, 1) - at(i, 1, j, -1) - at(i, -1, j, 1) + at(i, -1, j, -1)) / (4 * h * h);
      hess(i, j) = hess(j, i) = v;
    }
  }
  return hess;
}

Exploration locate_mode(const Objective& f, const Eigen::VectorXd& theta_init, const ExploreControls& c) {
  Exploration e;
  NelderMeadResult best = nelder_mead_maximize(f, theta_init, c.initial_step, c.f_tolerance, c.x_tolerance,
                                               c.max_evaluations);
  int evals = best.evaluations;
  bool converged = best.converged;
  for (int r = 0; r < c.restarts; ++r) {
    NelderMeadResult again = nelder_mead_maximize(f, best.x, 0.25 * c.initial_step, c.f_tolerance,
                                                  c.x_tolerance, c.max_evaluations);
    evals += again.evaluations;
    converged = again.converged;
    const double tie = c.f_tolerance * (1.0 + std::abs(best.value));
    bool better = again.value > best.value + tie;
    bool tied = std::abs(again.value - best.value) <= tie && again.x.norm() < best.x.norm();
    if (better || tied) best = again;
  }
  e.mode = best.x;
  e.mode_log_posterior = best.value;
  e.converged = converged;

  const int d = static_cast<int>(e.mode.size());
  if (d > 0) {
    Eigen::MatrixXd neg = -numerical_hessian(f, e.mode, c.hessian_step, best.value);
    evals += 2 * d * d + 1;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(neg);
    Eigen::VectorXd lam = es.eigenvalues();
    for (int i = 0; i < d; ++i)
      if (!(lam[i] >= c.min_curvature)) lam[i] = c.min_curvature;
    e.covariance = es.eigenvectors() * lam.cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
    e.sd = e.covariance.diagonal().cwiseSqrt();
  } else {
    e.covariance.resize(0, 0);
    e.sd.resize(0);
  }
  e.evaluations = evals;
  return e;
}

std::vector<HyperPoint> hyper_grid(const Exploration& e, int z_max) {
  const int d = static_cast<int>(e.mode.size());
  const int per_axis = 2 * z_max + 1;
  int total = 1;
  for (int i = 0; i < d; ++i) total *= per_axis;
  std::vector<HyperPoint> pts(total);
  for (int k = 0; k < total; ++k) {
    Eigen::VectorXd z(d);
    int rem = k;
    for (int i = 0; i < d; ++i) {
      z[i] = rem % per_axis - z_max;
      rem /= per_axis;
    }
    pts[k].z = z;
    pts[k].theta = e.mode + z.cwiseProduct(e.sd);
  }
  return pts;
}

void normalise_weights(std::vector<HyperPoint>& points) {
  double top = kNegInf;
  for (const auto& p : points) top = std::max(top, p.log_posterior);
  if (!std::isfinite(top)) throw std::runtime_error("no hyperparameter point has a finite log posterior");
  double tot = 0.0;
  for (auto& p : points) {
    p.weight = std::isfinite(p.log_posterior) ? std::exp(p.log_posterior - top) : 0.0;
    tot += p.weight;
  }
  for (auto& p : points) p.weight /= tot;
}

Exploration explore_hyper(const Objective& f, const Eigen::VectorXd& theta_init, const ExploreControls& c) {
  Exploration e = locate_mode(f, theta_init, c);
  if (c.strategy == ExploreStrategy::empirical_bayes || e.mode.size() == 0) {
    e.points = {HyperPoint{e.mode, Eigen::VectorXd::Zero(e.mode.size()), e.mode_log_posterior, 1.0}};
    return e;
  }
  e.points = hyper_grid(e, c.z_max);
  const int n = static_cast<int>(e.points.size());
#pragma omp parallel for schedule(dynamic)
  for (int k = 0; k < n; ++k) {
    auto& p = e.points[k];
    p.log_posterior = p.z.isZero() ? e.mode_log_posterior : safe_eval(f, p.theta);
  }
  e.evaluations += n - 1;
  normalise_weights(e.points);
  return e;
}

}  // namespace blockagg
