#include "doctest.h"

#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "blockagg/geometry.hpp"
#include "blockagg/matern_spde.hpp"

using namespace blockagg;

namespace {

const Mesh& paper_mesh() {
  static const Mesh mesh = build_mesh(unit_square_polygon(), 0.05, 0.4, 0.4);
  return mesh;
}

const SpdeOperators& paper_ops() {
  static const SpdeOperators ops = assemble_fem(paper_mesh());
  return ops;
}

Eigen::MatrixXd dense_inverse(const SparseMatrix& q) {
  Eigen::MatrixXd d(q);
  return d.llt().solve(Eigen::MatrixXd::Identity(d.rows(), d.cols()));
}

}  // namespace

TEST_CASE("FEM on a single right triangle") {
  Mesh m;
  m.nodes = {{0, 0}, {1, 0}, {0, 1}};
  m.triangles = {{0, 1, 2}};
  m.interior = {true, true, true};
  SpdeOperators ops = assemble_fem(m);
  CHECK(ops.mass.sum() == doctest::Approx(0.5));
  // Hand-computed P1 stiffness for the unit right triangle.
  Eigen::MatrixXd g(ops.stiffness);
  Eigen::MatrixXd expect(3, 3);
  expect << 1.0, -0.5, -0.5, -0.5, 0.5, 0.0, -0.5, 0.0, 0.5;
  CHECK((g - expect).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("FEM operators: null space and area") {
  const SpdeOperators& ops = paper_ops();
  Eigen::VectorXd ones = Eigen::VectorXd::Ones(ops.n_nodes());
  CHECK((ops.stiffness * ones).cwiseAbs().maxCoeff() < 1e-10);
  CHECK(ops.mass.minCoeff() > 0);
  CHECK(ops.mass.sum() == doctest::Approx(1.8 * 1.8));
  SparseMatrix gt = ops.stiffness.transpose();
  CHECK((ops.stiffness - gt).norm() < 1e-10);

  SpdeOperators coarse = assemble_fem(build_mesh(unit_square_polygon(), 0.2, 0.4, 0.4));
  CHECK(coarse.mass.sum() == doctest::Approx(ops.mass.sum()));
}

TEST_CASE("degenerate triangle rejected with index") {
  Mesh m;
  m.nodes = {{0, 0}, {1, 0}, {0, 1}, {2, 0}};
  m.triangles = {{0, 1, 2}, {0, 1, 3}};
  m.interior = {true, true, true, true};
  try {
    assemble_fem(m);
    FAIL("expected error");
  } catch (const GeometryError& e) {
    CHECK(std::string(e.what()).find("1") != std::string::npos);
  }
}

TEST_CASE("parameter validation") {
  CHECK_THROWS(MaternParams{0.0, 1.0}.validate());
  CHECK_THROWS(MaternParams{0.1, -1.0}.validate());
  CHECK_THROWS(MaternParams{std::nan(""), 1.0}.validate());
}

TEST_CASE("precision scales with sd exactly") {
  const SpdeOperators& ops = paper_ops();
  SparseMatrix q1 = matern_precision_matrix(ops, {0.4, 1.0});
  SparseMatrix q2 = matern_precision_matrix(ops, {0.4, 2.0});
  SparseMatrix diff = q2 - 0.25 * q1;
  CHECK(diff.norm() < 1e-12 * q1.norm());
  SparseMatrix qt = q1.transpose();
  CHECK((q1 - qt).norm() < 1e-10 * q1.norm());
}

TEST_CASE("interior marginal variances and practical-range correlation") {
  const Mesh& mesh = paper_mesh();
  const SpdeOperators& ops = paper_ops();
  MaternParams params{0.4, std::sqrt(2.0)};
  SparsePrecision q = matern_precision(ops, params);
  Eigen::MatrixXd cov = dense_inverse(q.matrix());

  // Sparse-factor marginal variances match the dense inverse.
  Eigen::VectorXd mv = marginal_variances(q.factor());
  CHECK((mv - cov.diagonal()).cwiseAbs().maxCoeff() < 1e-8 * cov.diagonal().maxCoeff());

  for (int i = 0; i < mesh.n_nodes(); ++i) {
    if (!mesh.interior[i]) continue;
    CHECK(std::abs(cov(i, i) / 2.0 - 1.0) < 0.15);
  }

  // Correlation of interior pairs at distance = range.
  Point s{0.3, 0.5}, t{0.7, 0.5};
  Projector p = project(mesh, {s, t});
  Eigen::MatrixXd a(p.matrix);
  Eigen::MatrixXd c = a * cov * a.transpose();
  double corr = c(0, 1) / std::sqrt(c(0, 0) * c(1, 1));
  MESSAGE("correlation at the practical range: " << corr);
  CHECK(corr == doctest::Approx(0.13).epsilon(0.05 / 0.13));
  // Dense family value at the practical range.
  CHECK(matern_covariance(0.4, {0.4, 1.0}) == doctest::Approx(0.1397).epsilon(1e-3));
}

TEST_CASE("log determinant matches dense") {
  SpdeOperators ops = assemble_fem(build_mesh(unit_square_polygon(), 0.2, 0.4, 0.4));
  SparsePrecision q = matern_precision(ops, {0.3, 1.5});
  Eigen::MatrixXd d(q.matrix());
  double dense = 2.0 * Eigen::MatrixXd(d.llt().matrixL()).diagonal().array().log().sum();
  CHECK(q.log_determinant() == doctest::Approx(dense).epsilon(1e-10));
}

TEST_CASE("quadratic form is invariant to the fill-reducing ordering") {
  SpdeOperators ops = assemble_fem(build_mesh(unit_square_polygon(), 0.1, 0.4, 0.4));
  SparsePrecision q = matern_precision(ops, {0.3, 1.0});
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n01;
  Eigen::VectorXd x(q.size());
  for (int i = 0; i < x.size(); ++i) x[i] = n01(rng);
  // Rebuild x'Qx from the permuted factor: ||L^T P x||^2.
  const auto& llt = q.factor();
  Eigen::VectorXd px = llt.permutationP() * x;
  Eigen::VectorXd ltpx = llt.matrixU() * px;
  double via_factor = ltpx.squaredNorm();
  double direct = x.dot(q.matrix() * x);
  CHECK(via_factor == doctest::Approx(direct).epsilon(1e-8));
  // Solve round trip.
  Eigen::VectorXd b = q.matrix() * x;
  CHECK((q.solve(b) - x).norm() < 1e-8 * x.norm());
}

TEST_CASE("GMRF sampling") {
  SpdeOperators ops = assemble_fem(build_mesh(unit_square_polygon(), 0.2, 0.4, 0.4));
  SparsePrecision q = matern_precision(ops, {0.4, 1.0});
  const int n = q.size();
  CHECK(sample_gmrf(q, 42) == sample_gmrf(q, 42));
  CHECK(sample_gmrf(q, 42) != sample_gmrf(q, 43));

  Eigen::MatrixXd cov = dense_inverse(q.matrix());
  const int draws = 10000;
  std::mt19937_64 rng(2024);
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(n), sumsq = Eigen::VectorXd::Zero(n);
  double quad = 0.0;
  for (int s = 0; s < draws; ++s) {
    Eigen::VectorXd x = sample_gmrf(q, rng);
    sum += x;
    sumsq += x.cwiseProduct(x);
    if (s < 1000) quad += x.dot(q.matrix() * x);
  }
  Eigen::VectorXd mean = sum / draws;
  Eigen::VectorXd var = sumsq / draws - mean.cwiseProduct(mean);
  for (int i = 0; i < n; ++i) {
    CHECK(std::abs(mean[i]) < 4.0 * std::sqrt(cov(i, i)) / 100.0);
  }
  // One fixed node (the first one at the domain center).
  const Mesh mesh = build_mesh(unit_square_polygon(), 0.2, 0.4, 0.4);
  int node = 0;
  double best = 1e9;
  for (int i = 0; i < n; ++i) {
    double d = std::hypot(mesh.nodes[i].x - 0.5, mesh.nodes[i].y - 0.5);
    if (d < best) best = d, node = i;
  }
  CHECK(std::abs(var[node] / cov(node, node) - 1.0) < 0.05);
  CHECK(quad / 1000.0 == doctest::Approx(n).epsilon(0.05));
}

TEST_CASE("dense Matern covariance") {
  MaternParams p{0.2, 1.5};
  CHECK(matern_covariance(0.0, p) == 2.25);
  CHECK(matern_covariance(1e-14, p) == 2.25);
  // The nu=1 tail at 5 ranges is still about 3.5e-6 of the variance; it drops
  // below 1e-8 only past about 7.3 ranges.
  CHECK(matern_covariance(5.0 * 0.2, p) / 2.25 == doctest::Approx(3.488e-6).epsilon(1e-3));
  CHECK(matern_covariance(7.5 * 0.2, p) < 1e-8 * 2.25);
  CHECK(matern_covariance(50.0, p) == 0.0);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<Point> pts(60);
  for (auto& q : pts) q = {u(rng), u(rng)};
  Eigen::MatrixXd c = dense_matern_cov(pts, p);
  CHECK((c - c.transpose()).cwiseAbs().maxCoeff() == 0.0);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(c);
  CHECK(eig.eigenvalues().minCoeff() > -1e-9);
}
