#include <cmath>

#include <doctest.h>
#include <omp.h>

#include "blockagg/prediction.hpp"
#include "blockagg/rng.hpp"
#include "toy.hpp"

using namespace blockagg;

namespace {

Eigen::VectorXd toy_y(const toy::Toy& t, Likelihood lik) {
  Eigen::VectorXd y(t.grid.n_blocks());
  for (int i = 0; i < y.size(); ++i)
    y[i] = lik == Likelihood::gaussian ? 10 + 1.3 * std::sin(1.7 * i) + 0.2 * i : std::round(5 + 4 * std::sin(1.3 * i));
  return y;
}

// Intercept-only model spread over every cell, no random effect.
class FlatModel : public LatentModel {
 public:
  explicit FlatModel(const toy::Toy& t) {
    likelihood_ = Likelihood::poisson;
    n_fixed_ = 1;
    n_blocks_ = t.grid.n_blocks();
    fixed_names_ = {"intercept"};
    priors_ = default_priors(likelihood_);
    const int n = t.grid.n_cells();
    SparseRowMatrix d(n, 1);
    for (int c = 0; c < n; ++c) d.insert(c, 0) = 1.0;
    observed_ = BlockPredictor(d, Eigen::VectorXd::Zero(n), t.grid.block_of_cell, n_blocks_, t.weights, likelihood_);
    for (int b = 0; b < n_blocks_; ++b) observed_blocks_.push_back(b);
    constraints_.resize(0, 1);
  }
  PriorTerms prior(const Eigen::VectorXd&) const override {
    PriorTerms p;
    p.precision.resize(1, 1);
    p.precision.insert(0, 0) = 1e-6;
    p.mean = Eigen::VectorXd::Zero(1);
    return p;
  }
  void predictive_draw(const Eigen::VectorXd& u, const Eigen::VectorXd&, std::mt19937_64&,
                       PredictiveDraw& out) const override {
    out.block = observed_.blocks(u);
    out.cell_mu = observed_.cells(u).array().exp();
  }
};

}  // namespace

TEST_CASE("a point-mass posterior predicts the plug-in block means") {
  toy::Toy t(3, 2);
  auto model = make_block_aggregation_model(t.inputs(Likelihood::gaussian));
  FitResult f = fit(*model, toy_y(t, Likelihood::gaussian));
  f.components.resize(1);
  f.weights = {1.0};
  GaussianApprox& g = f.components[0];
  g.precision = SparsePrecision(SparseMatrix(g.precision.matrix() * 1e20));
  PredictionControls pc;
  pc.n_samples = 50;
  PosteriorDraws d = draw_posterior(*model, f, pc);
  std::mt19937_64 rng(1);
  PredictiveDraw plug;
  model->predictive_draw(g.mode, g.theta, rng, plug);
  for (int i = 0; i < d.block_mu.rows(); ++i)
    CHECK(std::abs(d.block_mu.row(i).mean() - plug.block[i]) < 1e-6);
}

TEST_CASE("gaussian: monte carlo block means agree with the closed-form posterior mean") {
  toy::Toy t(3, 2);
  auto model = make_block_aggregation_model(t.inputs(Likelihood::gaussian));
  FitResult f = fit(*model, toy_y(t, Likelihood::gaussian));
  // linear model: E[mu | y] is the mixture of predictor values at the modes
  Eigen::VectorXd closed = Eigen::VectorXd::Zero(model->n_blocks());
  for (size_t k = 0; k < f.components.size(); ++k) {
    std::mt19937_64 rng(1);
    PredictiveDraw at_mode;
    model->predictive_draw(f.components[k].mode, f.components[k].theta, rng, at_mode);
    closed += f.weights[k] * at_mode.block;
  }
  PredictionControls pc;
  pc.n_samples = 4000;
  BlockPredictions bp = predict_blocks(*model, f, pc);
  for (int i = 0; i < closed.size(); ++i) {
    const double se = std::sqrt(bp.mu[i].variance / pc.n_samples);
    CHECK(std::abs(bp.mu[i].mean - closed[i]) < 3 * se);
  }
}

TEST_CASE("block draws are the weighted aggregate of the same cell draws") {
  toy::Toy t(2, 3);
  for (Likelihood lik : {Likelihood::gaussian, Likelihood::poisson}) {
    auto model = make_block_aggregation_model(t.inputs(lik));
    FitResult f = fit(*model, toy_y(t, lik));
    PredictionControls pc;
    pc.n_samples = 20;
    PosteriorDraws d = draw_posterior(*model, f, pc);
    for (int s = 0; s < pc.n_samples; ++s) {
      Eigen::VectorXd agg = Eigen::VectorXd::Zero(t.grid.n_blocks());
      for (int c = 0; c < t.grid.n_cells(); ++c) agg[t.grid.block_of_cell[c]] += t.weights[c] * d.cell_mu(c, s);
      CHECK((agg - d.block_mu.col(s)).cwiseAbs().maxCoeff() < 1e-10 * (1 + agg.cwiseAbs().maxCoeff()));
    }
  }
}

TEST_CASE("poisson comparators spread block means uniformly over cells") {
  toy::Toy t(2, 5);
  ModelInputs in = t.inputs(Likelihood::poisson);
  in.weights = Eigen::VectorXd::Ones(t.grid.n_cells());
  for (auto make : {make_centroid_model, make_mrf_model}) {
    auto model = make(in);
    FitResult f = fit(*model, toy_y(t, Likelihood::poisson));
    PredictionControls pc;
    pc.n_samples = 10;
    PosteriorDraws d = draw_posterior(*model, f, pc);
    for (int c = 0; c < t.grid.n_cells(); ++c)
      for (int s = 0; s < pc.n_samples; ++s)
        CHECK(d.cell_mu(c, s) == doctest::Approx(d.block_mu(t.grid.block_of_cell[c], s) / 25).epsilon(1e-12));
  }
}

TEST_CASE("intercept-only model: every cell has the same summary") {
  toy::Toy t(2, 2);
  FlatModel model(t);
  FitResult f = fit(model, toy_y(t, Likelihood::poisson));
  PredictionControls pc;
  pc.n_samples = 200;
  auto cells = predict_cells(model, f, pc);
  for (const auto& c : cells) {
    CHECK(c.mean == cells[0].mean);
    CHECK(c.q975 == cells[0].q975);
  }
}

TEST_CASE("predictions are deterministic and independent of the thread count") {
  toy::Toy t(2, 3);
  auto model = make_block_aggregation_model(t.inputs(Likelihood::poisson));
  FitResult f = fit(*model, toy_y(t, Likelihood::poisson));
  PredictionControls pc;
  pc.n_samples = 300;
  pc.seed = 99;
  const int saved = omp_get_max_threads();
  omp_set_num_threads(1);
  BlockPredictions a = predict_blocks(*model, f, pc);
  omp_set_num_threads(3);
  BlockPredictions b = predict_blocks(*model, f, pc);
  omp_set_num_threads(saved);
  for (size_t i = 0; i < a.mu.size(); ++i) {
    CHECK(a.mu[i].mean == b.mu[i].mean);
    CHECK(a.y[i].q025 == b.y[i].q025);
    CHECK(a.y[i].q975 == b.y[i].q975);
  }
  pc.seed = 100;
  BlockPredictions c = predict_blocks(*model, f, pc);
  CHECK(c.mu[0].mean != a.mu[0].mean);
}

TEST_CASE("non-converged fits are refused unless forced") {
  toy::Toy t(2, 2);
  auto model = make_block_aggregation_model(t.inputs(Likelihood::gaussian));
  FitResult f = fit(*model, toy_y(t, Likelihood::gaussian));
  f.converged = false;
  PredictionControls pc;
  pc.n_samples = 10;
  CHECK_THROWS(predict_blocks(*model, f, pc));
  pc.force = true;
  CHECK_NOTHROW(predict_blocks(*model, f, pc));
}

TEST_CASE("summaries: y-predictive widens mu and uses the family density") {
  toy::Toy t(2, 3);
  for (Likelihood lik : {Likelihood::gaussian, Likelihood::poisson}) {
    auto model = make_block_aggregation_model(t.inputs(lik));
    FitResult f = fit(*model, toy_y(t, lik));
    BlockPredictions bp = predict_blocks(*model, f, {});
    for (size_t i = 0; i < bp.mu.size(); ++i) {
      bp.mu[i].validate();
      bp.y[i].validate();
      CHECK(bp.y[i].variance > bp.mu[i].variance);
      CHECK(bp.y[i].mean == bp.mu[i].mean);
      CHECK(bp.y[i].density == (lik == Likelihood::gaussian ? PredictiveSummary::Density::normal
                                                            : PredictiveSummary::Density::poisson_mixture));
    }
  }
}

TEST_CASE("re-aggregating onto the original partition reproduces the block predictions") {
  toy::Toy t(2, 3);
  auto model = make_block_aggregation_model(t.inputs(Likelihood::gaussian));
  FitResult f = fit(*model, toy_y(t, Likelihood::gaussian));
  PredictionControls pc;
  pc.n_samples = 100;
  BlockPredictions a = predict_blocks(*model, f, pc);
  BlockPredictions b = predict_partition(*model, f, t.part, t.weights, AggregationMode::weighted_sum, pc);
  for (size_t i = 0; i < a.mu.size(); ++i) CHECK(std::abs(a.mu[i].mean - b.mu[i].mean) < 1e-10);
}

TEST_CASE("cross-validation folds equal a manual refit without the block") {
  toy::Toy t(2, 3);
  const std::vector<int> observed{0, 3};
  Eigen::Vector2d y(9.5, 12.0);
  ModelFactory factory = [&](const std::vector<int>& keep) {
    return make_block_aggregation_model(t.inputs(Likelihood::gaussian, keep));
  };
  PredictionControls pc;
  pc.n_samples = 200;
  pc.seed = 5;
  CrossValidation cv = cross_validate(factory, observed, y, {}, pc);
  REQUIRE(cv.failures == 0);
  for (int i = 0; i < 2; ++i) {
    auto m = factory({observed[1 - i]});
    Eigen::VectorXd yk(1);
    yk[0] = y[1 - i];
    FitResult f = fit(*m, yk);
    PredictionControls c = pc;
    c.seed = derive_seed(pc.seed, {static_cast<std::uint64_t>(i)});
    PosteriorDraws d = draw_posterior(*m, f, c);
    Eigen::MatrixXd row = d.block_mu.row(observed[i]);
    BlockPredictions bp = summarise_blocks(row, d.noise_variance, Likelihood::gaussian, c.seed, true);
    CHECK(cv.folds[i].y.mean == bp.y[0].mean);
    CHECK(cv.folds[i].y.variance == bp.y[0].variance);
    CHECK(cv.folds[i].ds == ds_score(y[i], bp.y[0]));
  }
  CrossValidation again = cross_validate(factory, observed, y, {}, pc);
  CHECK(again.mds == cv.mds);
  CHECK(again.tnls == cv.tnls);
  CHECK_THROWS(cross_validate(factory, {0}, Eigen::VectorXd::Ones(1), {}, pc));
}
