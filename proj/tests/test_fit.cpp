#include <cmath>
#include <random>

#include <Eigen/Dense>
#include <doctest.h>

#include "blockagg/fit.hpp"
#include "blockagg/harness.hpp"
#include "toy.hpp"

using namespace blockagg;

namespace {

Eigen::VectorXd block_means_of_covariates(const toy::Toy& t, const Eigen::Vector2d& beta) {
  Eigen::VectorXd y = Eigen::VectorXd::Zero(t.grid.n_blocks());
  Eigen::VectorXd eta = t.grid.covariates * beta;
  for (int c = 0; c < t.grid.n_cells(); ++c) y[t.grid.block_of_cell[c]] += t.weights[c] * eta[c];
  return y;
}

BlockPredictor two_cell_poisson() {
  SparseRowMatrix d(2, 2);
  d.insert(0, 0) = 1.0;
  d.insert(1, 1) = 1.0;
  return BlockPredictor(d, Eigen::VectorXd::Zero(2), {0, 0}, 1, Eigen::VectorXd::Ones(2), Likelihood::poisson);
}

}  // namespace

TEST_CASE("gaussian fit is done after one outer iteration") {
  toy::Toy t(3, 3);
  auto model = make_block_aggregation_model(t.inputs(Likelihood::gaussian));
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n01(0.0, 1.0);
  Eigen::VectorXd y = block_means_of_covariates(t, {10, 1.5});
  for (int i = 0; i < y.size(); ++i) y[i] += 0.5 * n01(rng);
  FitResult f = fit(*model, y);
  CHECK(f.converged);
  CHECK(f.outer_iterations() == 1);
  CHECK(f.trace[0].alpha == 1.0);
  double tot = 0;
  for (double w : f.weights) tot += w;
  CHECK(tot == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(f.components.size() == f.weights.size());
  for (const auto& s : f.fixed) {
    CHECK(s.q025 < s.mean);
    CHECK(s.mean < s.q975);
  }
  nlohmann::json j = fit_to_json(f, *model, {});
  CHECK(j["converged"].get<bool>());
  CHECK(j["trace"].size() == 1);
}

TEST_CASE("identity case: noiseless data without a field give the regression coefficients") {
  toy::Toy t(3, 3);
  auto model = make_block_aggregation_model(t.inputs(Likelihood::gaussian));
  Eigen::VectorXd y = block_means_of_covariates(t, {10, 1.5});
  // ordinary least squares on the block-mean covariates
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(9, 2);
  for (int c = 0; c < t.grid.n_cells(); ++c) x.row(t.grid.block_of_cell[c]) += t.weights[c] * t.grid.covariates.row(c);
  Eigen::Vector2d ols = x.colPivHouseholderQr().solve(y);
  FitResult f = fit(*model, y);
  REQUIRE(f.fixed.size() == 2);
  CHECK(std::abs(f.fixed[0].mean - ols[0]) < 1e-6);
  CHECK(std::abs(f.fixed[1].mean - ols[1]) < 1e-6);
}

TEST_CASE("line search: linear predictor and fixed point return 1") {
  toy::Toy t(2, 2);
  auto model = make_block_aggregation_model(t.inputs(Likelihood::gaussian));
  Eigen::VectorXd u0 = Eigen::VectorXd::Zero(model->dim()), u1 = Eigen::VectorXd::Ones(model->dim());
  auto lin = model->observed().linearise(u0);
  CHECK(line_search_alpha(model->observed(), lin, u0, u1) == 1.0);

  BlockPredictor p = two_cell_poisson();
  Eigen::Vector2d v(0.3, -0.2);
  CHECK(line_search_alpha(p, p.linearise(v), v, v) == 1.0);
}

TEST_CASE("line search: poisson two-cell block agrees with a dense grid") {
  BlockPredictor p = two_cell_poisson();
  for (const auto& [a, b] : std::vector<std::pair<Eigen::Vector2d, Eigen::Vector2d>>{
           {{0.0, 0.0}, {1.0, -0.5}}, {{0.2, 1.0}, {2.0, -1.0}}, {{0.0, 0.0}, {-0.4, 0.3}}}) {
    auto lin = p.linearise(a);
    const double target = lin.evaluate(b)[0];
    auto obj = [&](double al) { return std::abs(p.blocks(a + al * (b - a))[0] - target); };
    double best = 0, best_v = 1e300;
    for (int k = 1; k <= 200000; ++k) {
      const double al = 2.0 * k / 200000;
      if (obj(al) < best_v) best_v = obj(al), best = al;
    }
    CHECK(std::abs(line_search_alpha(p, lin, a, b) - best) < 1e-3);
  }
}

TEST_CASE("normal mixture quantiles") {
  CHECK(normal_mixture_quantile({1.0}, {2.0}, {3.0}, 0.975) == doctest::Approx(2 + 3 * 1.959964).epsilon(1e-6));
  const double m = normal_mixture_quantile({0.5, 0.5}, {-1, 1}, {0.5, 0.5}, 0.5);
  CHECK(std::abs(m) < 1e-8);
}

TEST_CASE("poisson toy: outer loop converges, trace ends at the criteria, refit is identical") {
  toy::Toy t(3, 3);
  auto model = make_block_aggregation_model(t.inputs(Likelihood::poisson));
  Eigen::VectorXd y(9);
  y << 4, 7, 2, 9, 5, 3, 12, 6, 8;
  FitControls fc;
  FitResult f = fit(*model, y, fc);
  CHECK(f.converged);
  CHECK(f.outer_iterations() <= 10);
  const TraceEntry& last = f.trace.back();
  CHECK(last.max_relative_change < fc.change_tolerance);
  CHECK(std::abs(last.alpha - 1) < fc.alpha_tolerance);
  FitResult g = fit(*model, y, fc);
  CHECK((g.posterior_mean() - f.posterior_mean()).norm() == 0.0);
}

TEST_CASE("non-convergence is flagged, not thrown") {
  toy::Toy t(3, 3);
  auto model = make_block_aggregation_model(t.inputs(Likelihood::poisson));
  Eigen::VectorXd y(9);
  y << 40, 0, 2, 90, 5, 0, 120, 6, 8;
  FitControls fc;
  fc.max_outer = 1;
  FitResult f = fit(*model, y, fc);
  if (!f.converged) {
    CHECK(f.outer_iterations() == 1);
    CHECK_FALSE(f.message.empty());
  }
  CHECK_FALSE(f.components.empty());
}

TEST_CASE("study scale: gaussian posterior covers the truth, poisson converges fast") {
  auto geo = Geometry::build({});
  Dataset g = generate_dataset(ScenarioConfig::gaussian_default(), *geo, 101);
  MethodFit mg = fit_method(Method::block_aggregation, g, *geo, default_priors(Likelihood::gaussian), {});
  CHECK(mg.fit.converged);
  CHECK(std::abs(mg.fit.fixed[0].mean - 10.0) < 3 * mg.fit.fixed[0].sd);
  CHECK(std::abs(mg.fit.fixed[1].mean - 1.5) < 3 * mg.fit.fixed[1].sd);

  Dataset p = generate_dataset(ScenarioConfig::poisson_default(), *geo, 102);
  MethodFit mp = fit_method(Method::block_aggregation, p, *geo, default_priors(Likelihood::poisson), {});
  CHECK(mp.fit.converged);
  CHECK(mp.fit.outer_iterations() <= 10);
  CHECK(std::abs(mp.fit.fixed[1].mean - 0.15) < 3 * mp.fit.fixed[1].sd);
}
