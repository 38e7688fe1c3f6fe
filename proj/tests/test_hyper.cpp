#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include <doctest.h>

#include "blockagg/hyper.hpp"
#include "blockagg/laplace.hpp"
#include "toy.hpp"

using namespace blockagg;

TEST_CASE("1d quadratic: mode 3, unit sd, weights normalised") {
  Objective f = [](const Eigen::VectorXd& x) { return -0.5 * (x[0] - 3) * (x[0] - 3); };
  Exploration e = explore_hyper(f, Eigen::VectorXd::Zero(1));
  CHECK(e.converged);
  CHECK(std::abs(e.mode[0] - 3.0) < 1e-4);
  CHECK(e.sd[0] == doctest::Approx(1.0).epsilon(1e-3));
  REQUIRE(e.points.size() == 5);
  double tot = 0;
  for (const auto& p : e.points) tot += p.weight;
  CHECK(tot == doctest::Approx(1.0).epsilon(1e-14));
  // weights follow exp(-z^2/2)
  CHECK(e.points[0].weight / e.points[2].weight == doctest::Approx(std::exp(-2.0)).epsilon(1e-6));
}

TEST_CASE("empirical bayes keeps the mode only") {
  Objective f = [](const Eigen::VectorXd& x) { return -x.squaredNorm(); };
  ExploreControls c;
  c.strategy = ExploreStrategy::empirical_bayes;
  Exploration e = explore_hyper(f, Eigen::Vector2d(1, -1), c);
  REQUIRE(e.points.size() == 1);
  CHECK(e.points[0].weight == 1.0);
  CHECK(e.mode.norm() < 1e-3);
}

TEST_CASE("grid layout: tensor product, first coordinate fastest, correlated sds") {
  // log posterior of N(m, S) with correlation
  Eigen::Matrix2d s;
  s << 1.0, 0.6, 0.6, 2.0;
  Eigen::Matrix2d p = s.inverse();
  Eigen::Vector2d m(0.5, -1.0);
  Objective f = [&](const Eigen::VectorXd& x) { return -0.5 * (x - m).dot(p * (x - m)); };
  Exploration e = explore_hyper(f, Eigen::Vector2d::Zero());
  CHECK((e.mode - m).norm() < 1e-3);
  CHECK((e.covariance - s).norm() < 1e-3);
  REQUIRE(e.points.size() == 25);
  CHECK(e.points[1].z[0] == -1);
  CHECK(e.points[1].z[1] == -2);
  CHECK(e.points[5].z[1] == -1);
  for (const auto& pt : e.points)
    for (int k = 0; k < 2; ++k) CHECK(pt.theta[k] == doctest::Approx(e.mode[k] + pt.z[k] * e.sd[k]).epsilon(1e-14));
}

TEST_CASE("curvature floor and non-finite objectives") {
  // flat in the second coordinate
  Objective f = [](const Eigen::VectorXd& x) {
    if (x[0] > 10) return std::numeric_limits<double>::quiet_NaN();
    return -0.5 * x[0] * x[0];
  };
  Exploration e = locate_mode(f, Eigen::Vector2d(1, 0), {});
  CHECK(e.sd[1] == doctest::Approx(1 / std::sqrt(0.1)).epsilon(1e-6));
  std::vector<HyperPoint> pts(3);
  pts[0].log_posterior = 0;
  pts[1].log_posterior = -std::numeric_limits<double>::infinity();
  pts[2].log_posterior = std::log(3.0);
  normalise_weights(pts);
  CHECK(pts[0].weight == doctest::Approx(0.25));
  CHECK(pts[1].weight == 0.0);
  CHECK(pts[2].weight == doctest::Approx(0.75));
}

TEST_CASE("nelder-mead stall flags non-convergence and keeps the best point") {
  Objective f = [](const Eigen::VectorXd& x) { return -(x.array() - 5).square().sum(); };
  NelderMeadResult r = nelder_mead_maximize(f, Eigen::Vector3d::Zero(), 0.5, 1e-12, 1e-12, 20);
  CHECK_FALSE(r.converged);
  CHECK(r.value >= f(Eigen::Vector3d::Zero()));
  CHECK(r.evaluations <= 21);
}

TEST_CASE("gaussian toy: simplex mode matches a brute-force grid argmax") {
  toy::Toy t(2, 3);
  auto model = make_block_aggregation_model(t.inputs(Likelihood::gaussian));
  Eigen::VectorXd y(4);
  y << 10.3, 11.9, 9.1, 12.4;
  auto lin = model->observed().linearise(Eigen::VectorXd::Zero(model->dim()));
  Objective f = [&](const Eigen::VectorXd& th) { return hyper_log_posterior(*model, th, lin, y); };
  Exploration e = locate_mode(f, prior_median_theta(model->hyper(), model->priors()), {});
  const double h = 0.05;
  Eigen::VectorXd best = e.mode;
  double best_v = f(e.mode);
  // brute force on a box around the simplex answer
  const int k = 6;
  Eigen::VectorXd th = e.mode;
  for (int a = -k; a <= k; ++a)
    for (int b = -k; b <= k; ++b)
      for (int c = -k; c <= k; ++c) {
        th = e.mode + h * Eigen::Vector3d(a, b, c);
        double v = f(th);
        if (v > best_v) best_v = v, best = th;
      }
  CHECK((best - e.mode).cwiseAbs().maxCoeff() <= h + 1e-12);
  CHECK(f(e.mode) >= best_v - 1e-3);
}
