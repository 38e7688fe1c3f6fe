#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include <doctest.h>

#include "blockagg/scoring.hpp"

using namespace blockagg;

namespace {

PredictiveSummary normal(double mean, double var) {
  PredictiveSummary p;
  p.mean = mean;
  p.variance = var;
  return p;
}

}  // namespace

TEST_CASE("dawid-sebastiani worked values") {
  CHECK(ds_score(0.0, normal(0, 1)) == 0.0);
  CHECK(ds_score(2.0, normal(0, 1)) == 4.0);
  CHECK(ds_score(3.0, normal(1, 4)) == doctest::Approx(1 + std::log(4.0)).epsilon(1e-15));
  CHECK(ds_score(3.0, normal(1, 4)) == doctest::Approx(2.3863).epsilon(1e-4));
  CHECK_THROWS(ds_score(1.0, normal(0, 0)));
}

TEST_CASE("log score worked values") {
  CHECK(neg_log_score(0.0, normal(0, 1)) == doctest::Approx(0.5 * std::log(2 * std::numbers::pi)).epsilon(1e-15));
  PredictiveSummary p;
  p.density = PredictiveSummary::Density::poisson_mixture;
  p.samples.assign(50, 2.0);
  CHECK(neg_log_score(2.0, p) == doctest::Approx(-std::log(4 * std::exp(-2.0) / 2)).epsilon(1e-13));
  CHECK(neg_log_score(2.0, p) == doctest::Approx(1.3069).epsilon(1e-4));
}

TEST_CASE("log score: zero mixture mass is +inf with a flag") {
  PredictiveSummary p;
  p.density = PredictiveSummary::Density::poisson_mixture;
  p.samples.assign(10, 0.0);
  bool zero = false;
  CHECK(std::isinf(neg_log_score(3.0, p, &zero)));
  CHECK(zero);
  CHECK(neg_log_score(0.0, p, &zero) == 0.0);
  CHECK_FALSE(zero);
  CHECK_THROWS(neg_log_score(1.5, p));
}

TEST_CASE("normal mixture log score agrees with the analytic mixture") {
  // 0.3 N(-1, 0.5) + 0.7 N(2, 1.5), represented by weighted-frequency samples
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int n = 20000;
  PredictiveSummary p;
  p.density = PredictiveSummary::Density::normal_mixture;
  for (int s = 0; s < n; ++s) {
    bool first = u(rng) < 0.3;
    p.samples.push_back(first ? -1.0 : 2.0);
    p.sample_variances.push_back(first ? 0.5 : 1.5);
  }
  p.validate();
  auto dens = [](double y, double m, double v) {
    return std::exp(-0.5 * (y - m) * (y - m) / v) / std::sqrt(2 * std::numbers::pi * v);
  };
  for (double y : {-2.0, 0.0, 0.5, 3.0}) {
    const double d1 = dens(y, -1, 0.5), d2 = dens(y, 2, 1.5);
    const double f = 0.3 * d1 + 0.7 * d2;
    // MC density is the mixture with a binomial weight; se of the density estimate
    const double se = std::abs(d1 - d2) * std::sqrt(0.3 * 0.7 / n);
    CHECK(std::abs(std::exp(-neg_log_score(y, p)) - f) < 3 * se);
  }
}

TEST_CASE("poisson mixture converges to the single-mean pmf as the spread shrinks") {
  const double exact = -(4 * std::log(3.0) - 3.0 - std::lgamma(5.0));
  double prev = 1e9;
  for (double spread : {0.5, 0.1, 0.01, 0.0}) {
    PredictiveSummary p;
    p.density = PredictiveSummary::Density::poisson_mixture;
    for (int s = -50; s <= 50; ++s) p.samples.push_back(3.0 + spread * s / 50.0);
    const double err = std::abs(neg_log_score(4.0, p) - exact);
    CHECK(err <= prev + 1e-15);
    prev = err;
  }
  CHECK(prev < 1e-14);
}

TEST_CASE("rmse and cell rmse") {
  Eigen::Vector2d a(0, 0), b(3, 4);
  CHECK(rmse(a, a) == 0.0);
  CHECK(rmse(a, b) == doctest::Approx(std::sqrt(12.5)).epsilon(1e-15));
  CHECK_THROWS(rmse(a, Eigen::Vector3d::Zero()));

  std::mt19937_64 rng(3);
  std::normal_distribution<double> n01(0.0, 1.0);
  Eigen::VectorXd x(37), y(37);
  for (int i = 0; i < 37; ++i) x[i] = n01(rng), y[i] = n01(rng);
  double loop = 0;
  for (int i = 0; i < 37; ++i) loop += (x[i] - y[i]) * (x[i] - y[i]);
  CHECK(std::abs(rmse(x, y) - std::sqrt(loop / 37)) < 1e-12);

  // two blocks: per-block RMSEs 1 and 3 -> mean 2
  Eigen::VectorXd e(4), t = Eigen::VectorXd::Zero(4);
  e << 1, -1, 3, 3;
  CHECK(cell_rmse(e, t, {0, 0, 1, 1}, 2) == doctest::Approx(2.0));
}

TEST_CASE("relative bias handles signs and zero truth") {
  CHECK(relative_bias(1.5, 1.5) == 0.0);
  CHECK(relative_bias(0.12, 0.15) == doctest::Approx(20.0).epsilon(1e-12));
  CHECK(relative_bias(-2.1, -2.0) == doctest::Approx(5.0).epsilon(1e-12));
  CHECK_THROWS(relative_bias(1.0, 0.0));
}

TEST_CASE("coverage: always inside, always outside, inverted") {
  std::vector<std::vector<Interval>> iv(3, std::vector<Interval>{{0, 1}, {0, 1}});
  std::vector<std::vector<double>> tr(3, std::vector<double>{0.5, 2.0});
  auto c = coverage(iv, tr);
  CHECK(c[0] == 1.0);
  CHECK(c[1] == 0.0);
  iv[1][0] = {1, 0};
  CHECK_THROWS(coverage(iv, tr));
  CHECK_THROWS(coverage({}, {}));
}

TEST_CASE("central intervals of the true gaussian cover at the nominal rate") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n01(0.0, 1.0);
  const int reps = 2000;
  std::vector<std::vector<Interval>> iv;
  std::vector<std::vector<double>> tr;
  for (int r = 0; r < reps; ++r) {
    const double m = 3 * n01(rng), s = 0.5 + std::abs(n01(rng));
    iv.push_back({{m - 1.959964 * s, m + 1.959964 * s}});
    tr.push_back({m + s * n01(rng)});
  }
  double c = coverage(iv, tr)[0];
  CHECK(c >= 0.93);
  CHECK(c <= 0.97);
}

TEST_CASE("ds score is proper: truth beats an inflated variance on average") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> n01(0.0, 1.0);
  double truth = 0, inflated = 0, shifted = 0;
  for (int r = 0; r < 2000; ++r) {
    const double m = n01(rng), v = 0.5 + std::abs(n01(rng));
    const double y = m + std::sqrt(v) * n01(rng);
    truth += ds_score(y, normal(m, v));
    inflated += ds_score(y, normal(m, 1.5 * v));
    shifted += ds_score(y, normal(m + 0.5, v));
  }
  CHECK(truth < inflated);
  CHECK(truth < shifted);
}

TEST_CASE("scores are invariant to unit reordering") {
  Eigen::VectorXd e(5), t(5);
  e << 1, 2, 3, 4, 5;
  t << 2, 2, 1, 7, 5;
  Eigen::VectorXd pe(5), pt(5);
  const int perm[5] = {3, 0, 4, 1, 2};
  for (int i = 0; i < 5; ++i) pe[i] = e[perm[i]], pt[i] = t[perm[i]];
  CHECK(rmse(e, t) == doctest::Approx(rmse(pe, pt)).epsilon(1e-15));
}

TEST_CASE("score report: aggregates recompute from units and csv is stable") {
  ScoreReport r;
  r.add("s", 0, "m", "0", "ds", 1.0);
  r.add("s", 0, "m", "1", "ds", 2.0);
  r.add("s", 0, "m", "all", "ds", 1.5);
  CHECK(r.mean_of("s", 0, "m", "ds") == 1.5);
  CHECK_THROWS(r.mean_of("s", 0, "m", "nls"));
  std::ostringstream os;
  r.write_csv(os);
  CHECK(os.str() == "scenario,replicate,method,unit,score,value\ns,0,m,0,ds,1\ns,0,m,1,ds,2\ns,0,m,all,ds,1.5\n");
  ScoreRow tenth{"s", 1, "m", "all", "x", 0.1};
  CHECK(format_score_row(tenth) == "s,1,m,all,x,0.10000000000000001");
}
