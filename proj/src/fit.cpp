#include "blockagg/fit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace blockagg {

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

void check_observations(const LatentModel& model, const Eigen::VectorXd& y) {
  if (y.size() != static_cast<int>(model.observed_blocks().size()))
    throw std::invalid_argument("fit: y must have one value per observed block");
  for (int i = 0; i < y.size(); ++i) {
    if (!std::isfinite(y[i])) throw std::invalid_argument("fit: observations must be finite");
    if (model.likelihood() == Likelihood::poisson && (y[i] < 0 || y[i] != std::floor(y[i])))
      throw std::invalid_argument("fit: Poisson observations must be non-negative integers");
  }
}

ParameterSummary mixture_summary(const std::string& name, const std::vector<double>& w,
                                 const std::vector<double>& m, const std::vector<double>& s) {
  ParameterSummary out;
  out.name = name;
  double mean = 0.0, second = 0.0;
  for (size_t k = 0; k < w.size(); ++k) {
    mean += w[k] * m[k];
    second += w[k] * (s[k] * s[k] + m[k] * m[k]);
  }
  out.mean = mean;
  out.sd = std::sqrt(std::max(0.0, second - mean * mean));
  out.q025 = normal_mixture_quantile(w, m, s, 0.025);
  out.q975 = normal_mixture_quantile(w, m, s, 0.975);
  return out;
}

// Natural-scale moments of a transformed N(mode, sd^2) by quadrature.
ParameterSummary hyper_summary(HyperKind kind, double mode, double sd) {
  ParameterSummary out;
  out.name = to_string(kind);
  const int n = 481;
  const double zmax = 8.0, h = 2 * zmax / (n - 1);
  double tot = 0.0, m1 = 0.0, m2 = 0.0;
  for (int i = 0; i < n; ++i) {
    double z = -zmax + i * h;
    double wt = std::exp(-0.5 * z * z) * ((i == 0 || i == n - 1) ? 0.5 : 1.0);
    double v = to_natural(kind, mode + sd * z);
    tot += wt;
    m1 += wt * v;
    m2 += wt * v * v;
  }
  out.mean = m1 / tot;
  out.sd = std::sqrt(std::max(0.0, m2 / tot - out.mean * out.mean));
  out.q025 = to_natural(kind, mode - 1.959963984540054 * sd);
  out.q975 = to_natural(kind, mode + 1.959963984540054 * sd);
  return out;
}

}  // namespace

double normal_mixture_quantile(const std::vector<double>& w, const std::vector<double>& m,
                               const std::vector<double>& s, double p) {
  if (!(p > 0 && p < 1)) throw std::invalid_argument("quantile level must be in (0, 1)");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (size_t k = 0; k < w.size(); ++k) {
    lo = std::min(lo, m[k] - 10 * s[k]);
    hi = std::max(hi, m[k] + 10 * s[k]);
  }
  auto cdf = [&](double x) {
    double c = 0.0;
    for (size_t k = 0; k < w.size(); ++k)
      c += w[k] * (s[k] > 0 ? normal_cdf((x - m[k]) / s[k]) : (x >= m[k] ? 1.0 : 0.0));
    return c;
  };
  for (int it = 0; it < 200 && hi - lo > 1e-12 * (1 + std::abs(lo) + std::abs(hi)); ++it) {
    double mid = 0.5 * (lo + hi);
    (cdf(mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

Eigen::VectorXd FitResult::posterior_mean() const {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(components.front().mode.size());
  for (size_t k = 0; k < components.size(); ++k) m += weights[k] * components[k].mode;
  return m;
}

Eigen::VectorXd FitResult::posterior_sd() const {
  Eigen::VectorXd mean = posterior_mean();
  Eigen::VectorXd second = Eigen::VectorXd::Zero(mean.size());
  for (size_t k = 0; k < components.size(); ++k) {
    Eigen::VectorXd sd = components[k].marginal_sd();
    second += weights[k] * (sd.array().square() + components[k].mode.array().square()).matrix();
  }
  return (second.array() - mean.array().square()).max(0.0).sqrt().matrix();
}

double line_search_alpha(const BlockPredictor& predictor, const Linearisation& lin, const Eigen::VectorXd& u0,
                         const Eigen::VectorXd& u_hat, double alpha_max, double tolerance) {
  if (predictor.is_linear()) return 1.0;
  Eigen::VectorXd step = u_hat - u0;
  if (step.lpNorm<Eigen::Infinity>() == 0.0) return 1.0;
  const Eigen::VectorXd target = lin.evaluate(u_hat);
  auto obj = [&](double a) {
    double v = (predictor.blocks(u0 + a * step) - target).norm();
    return std::isfinite(v) ? v : std::numeric_limits<double>::infinity();
  };
  const double r = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = 0.0, b = alpha_max;
  double c = b - r * (b - a), d = a + r * (b - a);
  double fc = obj(c), fd = obj(d);
  while (b - a > tolerance) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - r * (b - a);
      fc = obj(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + r * (b - a);
      fd = obj(d);
    }
  }
  double alpha = 0.5 * (a + b);
  // Clamp into (0, alpha_max].
  return std::clamp(alpha, tolerance, alpha_max);
}

FitResult fit(const LatentModel& model, const Eigen::VectorXd& y, const FitControls& c) {
  check_observations(model, y);
  FitResult res;
  res.method = model.method();
  res.likelihood = model.likelihood();
  res.y_observed = y;

  Eigen::VectorXd u0 = model.initial_state(y);
  Eigen::VectorXd theta = prior_median_theta(model.hyper(), model.priors());
  const bool linear = model.is_linear();

  Linearisation lin;
  for (int it = 1; it <= c.max_outer && !linear; ++it) {
    lin = model.observed().linearise(u0);
    Objective obj = [&](const Eigen::VectorXd& t) { return hyper_log_posterior(model, t, lin, y, c.inner); };
    NelderMeadResult nm = nelder_mead_maximize(obj, theta, c.explore.initial_step, c.explore.f_tolerance,
                                               c.explore.x_tolerance, c.explore.max_evaluations);
    theta = nm.x;
    GaussianApprox approx = inner_gaussian_approx(model, theta, lin, y, c.inner);
    const double alpha = line_search_alpha(model.observed(), lin, u0, approx.mode, c.alpha_max,
                                           c.line_search_tolerance);
    Eigen::VectorXd u_new = u0 + alpha * (approx.mode - u0);
    Eigen::VectorXd sd = approx.marginal_sd();
    double change = 0.0;
    for (int i = 0; i < sd.size(); ++i)
      if (sd[i] > 1e-12) change = std::max(change, std::abs(u_new[i] - u0[i]) / sd[i]);
    res.trace.push_back({it, alpha, change, theta, nm.value});
    u0 = u_new;
    if (change < c.change_tolerance && std::abs(alpha - 1.0) < c.alpha_tolerance) {
      res.converged = true;
      break;
    }
  }
  if (!linear && !res.converged) {
    std::ostringstream msg;
    msg << "outer loop did not converge in " << c.max_outer << " iterations";
    res.message = msg.str();
  }

  lin = model.observed().linearise(u0);
  Objective obj = [&](const Eigen::VectorXd& t) { return hyper_log_posterior(model, t, lin, y, c.inner); };
  res.exploration = explore_hyper(obj, theta, c.explore);

  std::vector<const HyperPoint*> kept;
  for (const auto& p : res.exploration.points)
    if (p.weight >= c.min_weight) kept.push_back(&p);
  res.components.resize(kept.size());
  std::vector<std::string> errors(kept.size());
  const int nk = static_cast<int>(kept.size());
#pragma omp parallel for schedule(dynamic)
  for (int k = 0; k < nk; ++k) {
    try {
      res.components[k] = inner_gaussian_approx(model, kept[k]->theta, lin, y, c.inner);
    } catch (const std::exception& e) {
      errors[k] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw NumericalError(e);
  double tot = 0.0;
  for (auto* p : kept) tot += p->weight;
  for (auto* p : kept) res.weights.push_back(p->weight / tot);

  if (linear) {
    // Already exact: one outer step from the initial state.
    Eigen::VectorXd u_hat = u0;
    for (size_t k = 0; k < kept.size(); ++k)
      if (kept[k]->z.isZero()) u_hat = res.components[k].mode;
    Eigen::VectorXd sd = res.components.front().marginal_sd();
    double change = 0.0;
    for (int i = 0; i < sd.size(); ++i)
      if (sd[i] > 1e-12) change = std::max(change, std::abs(u_hat[i] - u0[i]) / sd[i]);
    res.trace.push_back({1, 1.0, change, res.exploration.mode, res.exploration.mode_log_posterior});
    u0 = u_hat;
    res.converged = true;
  }
  if (!res.exploration.converged && res.message.empty())
    res.message = "hyperparameter search stopped before meeting its tolerance";
  res.linearisation_point = u0;

  std::vector<double> m(res.components.size()), s(res.components.size());
  std::vector<Eigen::VectorXd> sds;
  for (const auto& comp : res.components) sds.push_back(comp.marginal_sd());
  for (int j = 0; j < model.n_fixed(); ++j) {
    for (size_t k = 0; k < res.components.size(); ++k) {
      m[k] = res.components[k].mode[j];
      s[k] = sds[k][j];
    }
    res.fixed.push_back(mixture_summary(model.fixed_names()[j], res.weights, m, s));
  }
  for (int i = 0; i < model.hyper().size(); ++i)
    res.hyper.push_back(hyper_summary(model.hyper().kinds[i], res.exploration.mode[i],
                                      res.exploration.sd.size() ? res.exploration.sd[i] : 0.0));
  return res;
}

nlohmann::json fit_to_json(const FitResult& f, const LatentModel& model, const FitControls& c) {
  using nlohmann::json;
  auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  auto summaries = [](const std::vector<ParameterSummary>& v) {
    json a = json::array();
    for (const auto& s : v)
      a.push_back({{"name", s.name}, {"mean", s.mean}, {"sd", s.sd}, {"q025", s.q025}, {"q975", s.q975}});
    return a;
  };
  json j;
  j["method"] = to_string(f.method);
  j["likelihood"] = to_string(f.likelihood);
  j["converged"] = f.converged;
  j["message"] = f.message;
  j["outer_iterations"] = f.outer_iterations();
  j["fixed_effects"] = summaries(f.fixed);
  j["hyperparameters"] = summaries(f.hyper);
  j["hyper_names"] = model.hyper().names();
  j["theta_mode"] = vec(f.exploration.mode);
  j["theta_mode_log_posterior"] = f.exploration.mode_log_posterior;
  json pts = json::array();
  for (const auto& p : f.exploration.points)
    pts.push_back({{"theta", vec(p.theta)}, {"log_posterior", p.log_posterior}, {"weight", p.weight}});
  j["exploration"] = pts;
  json tr = json::array();
  for (const auto& t : f.trace)
    tr.push_back({{"iteration", t.iteration},
                  {"alpha", t.alpha},
                  {"max_relative_change", t.max_relative_change},
                  {"theta", vec(t.theta)},
                  {"log_posterior", t.log_posterior}});
  j["trace"] = tr;
  j["settings"] = {{"strategy", to_string(c.explore.strategy)},
                   {"max_outer", c.max_outer},
                   {"change_tolerance", c.change_tolerance},
                   {"alpha_tolerance", c.alpha_tolerance},
                   {"alpha_max", c.alpha_max},
                   {"mixing_prior", to_string(model.priors().mixing.kind)}};
  j["observed_blocks"] = model.observed_blocks();
  j["linearisation_point"] = vec(f.linearisation_point);
  return j;
}

}  // namespace blockagg
