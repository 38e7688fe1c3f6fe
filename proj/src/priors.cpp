#include "blockagg/priors.hpp"

#include <cmath>
#include <stdexcept>

namespace blockagg {

namespace {

void check_calibration(double u, double a, const char* what) {
  if (!(u > 0) || !std::isfinite(u) || !(a > 0 && a < 1))
    throw std::invalid_argument(std::string(what) + ": need threshold > 0 and 0 < probability < 1");
}

double log_logistic(double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); }

}  // namespace

double pc_sd_log_density(double sigma, double u_thresh, double a_prob) {
  check_calibration(u_thresh, a_prob, "pc_sd_log_density");
  if (sigma < 0) throw std::invalid_argument("pc_sd_log_density: sigma must be >= 0");
  const double lambda = -std::log(a_prob) / u_thresh;
  return std::log(lambda) - lambda * sigma;
}

double pc_range_log_density(double rho, double u_thresh, double a_prob) {
  check_calibration(u_thresh, a_prob, "pc_range_log_density");
  if (!(rho > 0)) throw std::invalid_argument("pc_range_log_density: range must be > 0");
  const double lambda = -std::log(a_prob) * u_thresh;
  return std::log(lambda) - 2.0 * std::log(rho) - lambda / rho;
}

double gamma_log_density(double x, double shape, double rate) {
  if (!(shape > 0) || !(rate > 0)) throw std::invalid_argument("gamma prior: shape and rate must be > 0");
  if (!(x > 0)) throw std::invalid_argument("gamma prior: argument must be > 0");
  return shape * std::log(rate) - std::lgamma(shape) + (shape - 1.0) * std::log(x) - rate * x;
}

double beta_log_density(double x, double a, double b) {
  if (!(a > 0) || !(b > 0)) throw std::invalid_argument("beta prior: shapes must be > 0");
  return std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + (a - 1) * std::log(x) +
         (b - 1) * std::log1p(-x);
}

const char* to_string(HyperKind kind) {
  switch (kind) {
    case HyperKind::noise_sd: return "noise_sd";
    case HyperKind::range: return "range";
    case HyperKind::field_sd: return "field_sd";
    case HyperKind::mrf_precision: return "mrf_precision";
    case HyperKind::mixing: return "mixing";
  }
  return "?";
}

double to_natural(HyperKind kind, double internal) {
  if (kind == HyperKind::mixing) return 1.0 / (1.0 + std::exp(-internal));
  return std::exp(internal);
}

double to_internal(HyperKind kind, double natural) {
  if (kind == HyperKind::mixing) return std::log(natural / (1.0 - natural));
  return std::log(natural);
}

const char* to_string(HyperPrior::Kind kind) {
  switch (kind) {
    case HyperPrior::Kind::flat: return "flat";
    case HyperPrior::Kind::pc_sd: return "pc_sd";
    case HyperPrior::Kind::pc_range: return "pc_range";
    case HyperPrior::Kind::gamma_precision: return "gamma_precision";
    case HyperPrior::Kind::uniform: return "uniform";
    case HyperPrior::Kind::beta: return "beta";
  }
  return "?";
}

HyperPrior::Kind hyper_prior_kind_from_string(const std::string& name) {
  for (auto k : {HyperPrior::Kind::flat, HyperPrior::Kind::pc_sd, HyperPrior::Kind::pc_range,
                 HyperPrior::Kind::gamma_precision, HyperPrior::Kind::uniform, HyperPrior::Kind::beta})
    if (name == to_string(k)) return k;
  throw std::invalid_argument("unknown prior kind '" + name + "'");
}

void HyperPrior::validate(HyperKind slot) const {
  const bool is_mixing = slot == HyperKind::mixing;
  switch (kind) {
    case Kind::flat: return;
    case Kind::pc_sd:
      if (is_mixing) break;
      check_calibration(p1, p2, "pc_sd prior");
      return;
    case Kind::pc_range:
      if (slot != HyperKind::range) break;
      check_calibration(p1, p2, "pc_range prior");
      return;
    case Kind::gamma_precision:
      if (slot != HyperKind::noise_sd && slot != HyperKind::mrf_precision) break;
      if (!(p1 > 0) || !(p2 > 0)) throw std::invalid_argument("gamma prior: shape and rate must be > 0");
      return;
    case Kind::uniform:
      if (!is_mixing) break;
      return;
    case Kind::beta:
      if (!is_mixing) break;
      if (!(p1 > 0) || !(p2 > 0)) throw std::invalid_argument("beta prior: shapes must be > 0");
      return;
  }
  throw std::invalid_argument(std::string("prior '") + to_string(kind) + "' cannot be used for " +
                              to_string(slot));
}

double HyperPrior::median(HyperKind slot) const {
  switch (kind) {
    case Kind::pc_sd: {
      const double lambda = -std::log(p2) / p1;
      const double sd = std::log(2.0) / lambda;
      return slot == HyperKind::mrf_precision ? 1.0 / (sd * sd) : sd;
    }
    case Kind::pc_range: {
      const double lambda = -std::log(p2) * p1;
      return lambda / std::log(2.0);  // P(rho < r) = exp(-lambda / r)
    }
    case Kind::gamma_precision: {
      // Median of a Gamma is not closed form; the mean is a fine start.
      const double precision = p1 / p2;
      return slot == HyperKind::noise_sd ? 1.0 / std::sqrt(precision) : precision;
    }
    case Kind::beta: return p1 / (p1 + p2);
    case Kind::uniform: return 0.5;
    case Kind::flat: break;
  }
  return slot == HyperKind::mixing ? 0.5 : 1.0;
}

const HyperPrior& PriorBundle::for_slot(HyperKind kind) const {
  switch (kind) {
    case HyperKind::noise_sd: return noise;
    case HyperKind::range: return range;
    case HyperKind::field_sd: return field_sd;
    case HyperKind::mrf_precision: return mrf_precision;
    case HyperKind::mixing: return mixing;
  }
  throw std::logic_error("unknown hyperparameter");
}

double PriorBundle::fixed_precision(int k) const {
  if (k >= static_cast<int>(fixed_variance.size()))
    throw std::invalid_argument("no prior variance for fixed effect " + std::to_string(k));
  const double v = fixed_variance[k];
  return std::isinf(v) ? 0.0 : 1.0 / v;
}

void PriorBundle::validate() const {
  if (fixed_mean.size() != fixed_variance.size())
    throw std::invalid_argument("fixed-effect prior means and variances differ in length");
  for (double v : fixed_variance)
    if (!(v > 0)) throw std::invalid_argument("fixed-effect prior variances must be > 0");
  for (auto k : {HyperKind::noise_sd, HyperKind::range, HyperKind::field_sd, HyperKind::mrf_precision,
                 HyperKind::mixing})
    for_slot(k).validate(k);
}

PriorBundle default_priors(Likelihood likelihood) {
  PriorBundle b;
  if (likelihood == Likelihood::poisson) b.field_sd = HyperPrior::pc_sd(0.1, 0.5);
  return b;
}

int HyperLayout::find(HyperKind kind) const {
  for (int i = 0; i < size(); ++i)
    if (kinds[i] == kind) return i;
  return -1;
}

double HyperLayout::natural(const Eigen::VectorXd& theta, HyperKind kind) const {
  int i = find(kind);
  if (i < 0) throw std::logic_error(std::string("model has no hyperparameter ") + to_string(kind));
  return to_natural(kind, theta[i]);
}

std::vector<std::string> HyperLayout::names() const {
  std::vector<std::string> out;
  for (auto k : kinds) out.emplace_back(to_string(k));
  return out;
}

namespace {

double slot_log_density(HyperKind slot, const HyperPrior& prior, double t) {
  if (slot == HyperKind::mixing) {
    // phi = logistic(t); d phi / dt = phi (1 - phi)
    const double log_phi = log_logistic(t), log_1m = log_logistic(-t);
    const double jac = log_phi + log_1m;
    if (prior.kind == HyperPrior::Kind::beta)
      return (prior.p1 - 1) * log_phi + (prior.p2 - 1) * log_1m + std::lgamma(prior.p1 + prior.p2) -
             std::lgamma(prior.p1) - std::lgamma(prior.p2) + jac;
    return jac;  // uniform or flat
  }
  const double x = std::exp(t);
  switch (prior.kind) {
    case HyperPrior::Kind::flat: return t;  // log |dx/dt| = log x
    case HyperPrior::Kind::pc_range: return pc_range_log_density(x, prior.p1, prior.p2) + t;
    case HyperPrior::Kind::pc_sd: {
      if (slot == HyperKind::mrf_precision) {
        // sd = tau^(-1/2) = exp(-t/2); |d sd / dt| = sd / 2
        const double sd = std::exp(-0.5 * t);
        return pc_sd_log_density(sd, prior.p1, prior.p2) + std::log(0.5 * sd);
      }
      return pc_sd_log_density(x, prior.p1, prior.p2) + t;
    }
    case HyperPrior::Kind::gamma_precision: {
      if (slot == HyperKind::noise_sd) {
        // precision = exp(-2t); |d precision / dt| = 2 precision
        const double prec = std::exp(-2.0 * t);
        return gamma_log_density(prec, prior.p1, prior.p2) + std::log(2.0 * prec);
      }
      return gamma_log_density(x, prior.p1, prior.p2) + t;
    }
    default: break;
  }
  throw std::invalid_argument("prior kind not valid for this hyperparameter");
}

}  // namespace

double log_prior(const Eigen::VectorXd& theta, const HyperLayout& layout, const PriorBundle& bundle) {
  if (theta.size() != layout.size()) throw std::invalid_argument("log_prior: theta has wrong length");
  double lp = 0.0;
  for (int i = 0; i < layout.size(); ++i)
    lp += slot_log_density(layout.kinds[i], bundle.for_slot(layout.kinds[i]), theta[i]);
  return lp;
}

Eigen::VectorXd prior_median_theta(const HyperLayout& layout, const PriorBundle& bundle) {
  Eigen::VectorXd t(layout.size());
  for (int i = 0; i < layout.size(); ++i) {
    HyperKind k = layout.kinds[i];
    t[i] = to_internal(k, bundle.for_slot(k).median(k));
  }
  return t;
}

}  // namespace blockagg
