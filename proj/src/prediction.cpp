#include "blockagg/prediction.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "blockagg/rng.hpp"

namespace blockagg {

namespace {

double quantile_sorted(const std::vector<double>& v, double p) {
  const double h = (v.size() - 1) * p;
  const size_t lo = static_cast<size_t>(std::floor(h));
  const size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - lo) * (v[hi] - v[lo]);
}

void check_fit(const FitResult& fit, const PredictionControls& c) {
  if (fit.components.empty()) throw std::invalid_argument("fit has no posterior components");
  if (!fit.converged && !c.force)
    throw std::runtime_error("fit did not converge (" + fit.message + "); use force to predict anyway");
  if (c.n_samples < 2) throw std::invalid_argument("at least two predictive samples are required");
}

}  // namespace

PosteriorDraws draw_posterior(const LatentModel& model, const FitResult& fit, const PredictionControls& c) {
  check_fit(fit, c);
  const int n = c.n_samples;
  std::vector<double> cum(fit.weights.size());
  double acc = 0.0;
  for (size_t k = 0; k < cum.size(); ++k) cum[k] = acc += fit.weights[k];

  PosteriorDraws out;
  out.noise_variance.assign(n, 0.0);
  std::vector<PredictiveDraw> draws(n);
#pragma omp parallel for schedule(dynamic, 16)
  for (int s = 0; s < n; ++s) {
    std::mt19937_64 rng(derive_seed(c.seed, {static_cast<std::uint64_t>(s)}));
    const double pick = std::uniform_real_distribution<double>(0.0, acc)(rng);
    size_t k = std::upper_bound(cum.begin(), cum.end(), pick) - cum.begin();
    k = std::min(k, cum.size() - 1);
    const GaussianApprox& comp = fit.components[k];
    Eigen::VectorXd x = comp.sample(rng);
    model.predictive_draw(x, comp.theta, rng, draws[s]);
    if (model.likelihood() == Likelihood::gaussian) out.noise_variance[s] = model.noise_variance(comp.theta);
  }
  out.block_mu.resize(model.n_blocks(), n);
  out.cell_mu.resize(draws.front().cell_mu.size(), n);
  for (int s = 0; s < n; ++s) {
    out.block_mu.col(s) = model.likelihood() == Likelihood::poisson ? draws[s].block.array().exp().matrix()
                                                                    : draws[s].block;
    out.cell_mu.col(s) = draws[s].cell_mu;
  }
  return out;
}

PredictiveSummary summarise_sample(const Eigen::VectorXd& values) {
  PredictiveSummary p;
  const int n = static_cast<int>(values.size());
  if (n < 2) throw std::invalid_argument("summarise_sample: need at least two values");
  p.mean = values.mean();
  p.variance = (values.array() - p.mean).square().sum() / (n - 1);
  std::vector<double> v(values.data(), values.data() + n);
  std::sort(v.begin(), v.end());
  p.q025 = quantile_sorted(v, 0.025);
  p.q975 = quantile_sorted(v, 0.975);
  return p;
}

BlockPredictions summarise_blocks(const Eigen::MatrixXd& block_mu, const std::vector<double>& noise_variance,
                                  Likelihood lik, std::uint64_t seed, bool keep_samples) {
  const int nb = static_cast<int>(block_mu.rows()), ns = static_cast<int>(block_mu.cols());
  BlockPredictions out;
  out.mu.resize(nb);
  out.y.resize(nb);
  double mean_noise = 0.0;
  for (double v : noise_variance) mean_noise += v / ns;
#pragma omp parallel for schedule(static)
  for (int i = 0; i < nb; ++i) {
    Eigen::VectorXd mu = block_mu.row(i).transpose();
    out.mu[i] = summarise_sample(mu);
    std::mt19937_64 rng(derive_seed(seed, {0x59ULL, static_cast<std::uint64_t>(i)}));
    Eigen::VectorXd ys(ns);
    if (lik == Likelihood::gaussian) {
      std::normal_distribution<double> n01(0.0, 1.0);
      for (int s = 0; s < ns; ++s) ys[s] = mu[s] + std::sqrt(noise_variance[s]) * n01(rng);
    } else {
      for (int s = 0; s < ns; ++s) ys[s] = std::poisson_distribution<long long>(std::max(mu[s], 0.0))(rng);
    }
    PredictiveSummary y = summarise_sample(ys);
    y.mean = out.mu[i].mean;
    if (lik == Likelihood::gaussian) {
      y.variance = out.mu[i].variance + mean_noise;
      y.density = PredictiveSummary::Density::normal;
      if (keep_samples) {
        y.samples.assign(mu.data(), mu.data() + ns);
        y.sample_variances = noise_variance;
      }
    } else {
      y.variance = out.mu[i].variance + out.mu[i].mean;
      y.density = PredictiveSummary::Density::poisson_mixture;
      y.samples.assign(mu.data(), mu.data() + ns);
    }
    if (keep_samples) out.mu[i].samples.assign(mu.data(), mu.data() + ns);
    out.y[i] = std::move(y);
  }
  return out;
}

BlockPredictions predict_blocks(const LatentModel& model, const FitResult& fit, const PredictionControls& c) {
  PosteriorDraws d = draw_posterior(model, fit, c);
  return summarise_blocks(d.block_mu, d.noise_variance, model.likelihood(), c.seed, c.keep_samples);
}

std::vector<PredictiveSummary> predict_cells(const LatentModel& model, const FitResult& fit,
                                             const PredictionControls& c) {
  PosteriorDraws d = draw_posterior(model, fit, c);
  std::vector<PredictiveSummary> out(d.cell_mu.rows());
  const int n = static_cast<int>(out.size());
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) out[i] = summarise_sample(d.cell_mu.row(i).transpose());
  return out;
}

BlockPredictions predict_partition(const LatentModel& model, const FitResult& fit, const Partition& target,
                                   const Eigen::VectorXd& cell_weights, AggregationMode mode,
                                   const PredictionControls& c) {
  PosteriorDraws d = draw_posterior(model, fit, c);
  Eigen::MatrixXd agg(target.n_blocks(), d.cell_mu.cols());
  for (int s = 0; s < agg.cols(); ++s) agg.col(s) = reaggregate(d.cell_mu.col(s), cell_weights, target, mode);
  return summarise_blocks(agg, d.noise_variance, model.likelihood(), c.seed, c.keep_samples);
}

CrossValidation cross_validate(const ModelFactory& factory, const std::vector<int>& observed,
                               const Eigen::VectorXd& y, const FitControls& fc, const PredictionControls& pc) {
  if (observed.size() < 2) throw std::invalid_argument("cross_validate: at least two observed blocks are required");
  if (y.size() != static_cast<int>(observed.size()))
    throw std::invalid_argument("cross_validate: y must align with the observed blocks");
  const int n = static_cast<int>(observed.size());
  CrossValidation cv;
  cv.folds.resize(n);
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i) {
    FoldResult& f = cv.folds[i];
    f.block = observed[i];
    try {
      std::vector<int> keep;
      Eigen::VectorXd y_keep(n - 1);
      for (int k = 0; k < n; ++k)
        if (k != i) {
          y_keep[static_cast<int>(keep.size())] = y[k];
          keep.push_back(observed[k]);
        }
      auto model = factory(keep);
      FitResult fr = fit(*model, y_keep, fc);
      PredictionControls c = pc;
      c.seed = derive_seed(pc.seed, {static_cast<std::uint64_t>(i)});
      PosteriorDraws d = draw_posterior(*model, fr, c);
      Eigen::MatrixXd row = d.block_mu.row(observed[i]);
      BlockPredictions bp = summarise_blocks(row, d.noise_variance, model->likelihood(), c.seed, true);
      f.y = bp.y[0];
      f.ds = ds_score(y[i], f.y);
      f.nls = neg_log_score(y[i], f.y);
      f.ok = true;
    } catch (const std::exception& e) {
      f.error = e.what();
    }
  }
  double sq = 0.0;
  int ok = 0;
  for (const auto& f : cv.folds) {
    if (!f.ok) {
      ++cv.failures;
      continue;
    }
    cv.mds += f.ds;
    cv.tnls += f.nls;
    const int k = static_cast<int>(&f - cv.folds.data());
    sq += (y[k] - f.y.mean) * (y[k] - f.y.mean);
    ++ok;
  }
  if (ok > 0) {
    cv.mds /= ok;
    cv.tnls /= ok;
    cv.rmse = std::sqrt(sq / ok);
  }
  return cv;
}

}  // namespace blockagg
