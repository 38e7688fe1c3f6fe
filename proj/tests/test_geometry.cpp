#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "blockagg/geometry.hpp"

using namespace blockagg;

TEST_CASE("unit square partition counts and indexing") {
  auto [part, grid] = build_unit_square_partition(10, 5);
  CHECK(part.n_blocks() == 100);
  CHECK(grid.n_cells() == 2500);
  for (int b = 0; b < 100; ++b) CHECK(part.members[b].size() == 25);
  for (int m : grid.cells_per_block) CHECK(m == 25);
  grid.validate();
  part.validate(grid.n_cells());

  // cell (r, c) -> block (r/5)*10 + c/5
  CHECK(grid.block_of_cell[0] == 0);
  CHECK(grid.block_of_cell[49] == 9);
  CHECK(grid.block_of_cell[5 * 50] == 10);
  CHECK(grid.cells[51].x == doctest::Approx(1.5 / 50));
  CHECK(grid.cells[51].y == doctest::Approx(1.5 / 50));
}

TEST_CASE("degenerate 1x1 partition") {
  auto [part, grid] = build_unit_square_partition(1, 1);
  REQUIRE(grid.n_cells() == 1);
  CHECK(grid.cells[0].x == 0.5);
  CHECK(grid.cells[0].y == 0.5);
  CHECK(part.n_blocks() == 1);
}

TEST_CASE("2x2 partition cell centers enumerate the quarter grid") {
  auto [part, grid] = build_unit_square_partition(2, 2);
  std::set<std::pair<double, double>> seen;
  for (const auto& p : grid.cells) seen.insert({p.x, p.y});
  const double v[] = {0.125, 0.375, 0.625, 0.875};
  for (double x : v)
    for (double y : v) CHECK(seen.count({x, y}) == 1);
  CHECK(seen.size() == 16);
  // Block 3 is the top-right quarter.
  for (int c : part.members[3]) {
    CHECK(grid.cells[c].x > 0.5);
    CHECK(grid.cells[c].y > 0.5);
  }
  CHECK(part.centroids[3].x == doctest::Approx(0.75));
}

TEST_CASE("invalid partition sizes rejected") {
  CHECK_THROWS(build_unit_square_partition(0, 5));
  CHECK_THROWS(build_unit_square_partition(3, 0));
}

TEST_CASE("weight schemes") {
  auto [part, grid] = build_unit_square_partition(2, 5);
  Eigen::VectorXd eq = make_weights(grid, WeightScheme::equal());
  for (int i = 0; i < eq.size(); ++i) CHECK(eq[i] == doctest::Approx(0.04));
  Eigen::VectorXd unit = make_weights(grid, WeightScheme::unit());
  CHECK(unit.minCoeff() == 1.0);
  CHECK(unit.maxCoeff() == 1.0);

  auto [p2, g2] = build_unit_square_partition(1, 1);
  // Two-cell block built by hand.
  CellGrid two;
  two.cells = {{0.25, 0.5}, {0.75, 0.5}};
  two.block_of_cell = {0, 0};
  two.cells_per_block = {2};
  two.covariates = Eigen::MatrixXd::Ones(2, 1);
  two.covariate_names = {"intercept"};
  Eigen::VectorXd w = make_weights(two, WeightScheme::from_values({0.3, 0.7}));
  CHECK(w[0] == 0.3);
  CHECK(w[1] == 0.7);
  CHECK_THROWS(make_weights(two, WeightScheme::from_values({0.3})));
  CHECK_THROWS(make_weights(two, WeightScheme::from_values({-0.3, 0.7})));
  CHECK_THROWS(make_weights(two, WeightScheme::from_values({0.0, 0.0})));
}

TEST_CASE("paper mesh: inner edges bounded, cells located") {
  Mesh mesh = build_mesh(unit_square_polygon(), 0.05, 0.4, 0.4);
  MESSAGE("mesh nodes: " << mesh.n_nodes() << ", triangles: " << mesh.n_triangles());
  double max_inner = 0.0;
  for (auto [a, b] : mesh.edges()) {
    if (!mesh.interior[a] || !mesh.interior[b]) continue;
    max_inner = std::max(max_inner, std::hypot(mesh.nodes[a].x - mesh.nodes[b].x,
                                               mesh.nodes[a].y - mesh.nodes[b].y));
  }
  CHECK(max_inner <= 0.0525);
  for (int t = 0; t < mesh.n_triangles(); ++t) CHECK(mesh.triangle_area(t) > 0);

  double xmin = 1e9, xmax = -1e9;
  for (const auto& p : mesh.nodes) {
    xmin = std::min(xmin, p.x);
    xmax = std::max(xmax, p.x);
  }
  CHECK(xmin == doctest::Approx(-0.4));
  CHECK(xmax == doctest::Approx(1.4));

  auto [part, grid] = build_unit_square_partition(10, 5);
  for (const auto& c : grid.cells) CHECK(locate(mesh, c) >= 0);

  // Triangles tile the hull: total area equals the extended square.
  double area = 0.0;
  for (int t = 0; t < mesh.n_triangles(); ++t) area += mesh.triangle_area(t);
  CHECK(area == doctest::Approx(1.8 * 1.8).epsilon(1e-10));
}

TEST_CASE("coarse mesh has at least two triangles") {
  Mesh mesh = build_mesh(unit_square_polygon(), 0.5, 0.5, 0.5);
  CHECK(mesh.n_triangles() >= 2);
  for (int t = 0; t < mesh.n_triangles(); ++t) CHECK(mesh.triangle_area(t) > 0);
}

TEST_CASE("mesh rejects bad inputs") {
  CHECK_THROWS_AS(build_mesh({{0, 0}, {1, 0}}, 0.1, 0.1, 0.1), GeometryError);
  CHECK_THROWS_AS(build_mesh({{0, 0}, {1, 1}, {2, 2}}, 0.1, 0.1, 0.1), GeometryError);
  CHECK_THROWS(build_mesh(unit_square_polygon(), 0.0, 0.1, 0.1));
  CHECK_THROWS(build_mesh(unit_square_polygon(), 0.2, 0.1, 0.1));
}

TEST_CASE("projector rows") {
  Mesh mesh = build_mesh(unit_square_polygon(), 0.1, 0.3, 0.3);
  SUBCASE("node coincident point") {
    const int node = mesh.n_nodes() / 2;
    Projector p = project(mesh, {mesh.nodes[node]});
    CHECK(p.matrix.nonZeros() == 1);
    CHECK(p.matrix.coeff(0, node) == doctest::Approx(1.0));
  }
  SUBCASE("edge midpoint") {
    auto [a, b] = mesh.triangles[10][0] < mesh.triangles[10][1]
                      ? std::pair{mesh.triangles[10][0], mesh.triangles[10][1]}
                      : std::pair{mesh.triangles[10][1], mesh.triangles[10][0]};
    Point mid{0.5 * (mesh.nodes[a].x + mesh.nodes[b].x), 0.5 * (mesh.nodes[a].y + mesh.nodes[b].y)};
    Projector p = project(mesh, {mid});
    CHECK(p.matrix.nonZeros() == 2);
    CHECK(p.matrix.coeff(0, a) == doctest::Approx(0.5));
    CHECK(p.matrix.coeff(0, b) == doctest::Approx(0.5));
  }
  SUBCASE("random interior points are convex combinations") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Point> pts(1000);
    for (auto& p : pts) p = {u(rng), u(rng)};
    Projector p = project(mesh, pts);
    for (int r = 0; r < p.n_points(); ++r) {
      double sum = 0.0;
      int nnz = 0;
      for (SparseRowMatrix::InnerIterator it(p.matrix, r); it; ++it) {
        CHECK(it.value() >= 0.0);
        CHECK(it.value() <= 1.0);
        sum += it.value();
        ++nnz;
      }
      CHECK(nnz <= 3);
      CHECK(std::abs(sum - 1.0) < 1e-12);
      // Interpolating coordinates reproduces the point (linear precision).
      double x = 0, y = 0;
      for (SparseRowMatrix::InnerIterator it(p.matrix, r); it; ++it) {
        x += it.value() * mesh.nodes[it.col()].x;
        y += it.value() * mesh.nodes[it.col()].y;
      }
      CHECK(x == doctest::Approx(pts[r].x).epsilon(1e-12));
      CHECK(y == doctest::Approx(pts[r].y).epsilon(1e-12));
    }
  }
  SUBCASE("outside hull names the point") {
    try {
      project(mesh, {{0.5, 0.5}, {5.0, 5.0}});
      FAIL("expected an error");
    } catch (const GeometryError& e) {
      CHECK(std::string(e.what()).find("1") != std::string::npos);
    }
  }
}

TEST_CASE("reaggregate") {
  Partition two;
  two.ids = {0, 1};
  two.members = {{0, 1}, {2}};
  two.centroids = {{0, 0}, {0, 0}};
  Eigen::VectorXd v(3), w = Eigen::VectorXd::Ones(3);
  v << 1, 3, 5;
  Eigen::VectorXd out = reaggregate(v, w, two, AggregationMode::weighted_mean);
  CHECK(out[0] == 2.0);
  CHECK(out[1] == 5.0);

  Partition all;
  all.ids = {0};
  all.members = {{0, 1, 2}};
  all.centroids = {{0, 0}};
  CHECK(reaggregate(v, w, all, AggregationMode::weighted_sum)[0] == 9.0);

  Eigen::VectorXd c = Eigen::VectorXd::Constant(3, 4.2);
  Eigen::VectorXd wr(3);
  wr << 0.1, 2.0, 0.5;
  Eigen::VectorXd m = reaggregate(c, wr, two, AggregationMode::weighted_mean);
  CHECK(m[0] == doctest::Approx(4.2));
  CHECK(m[1] == doctest::Approx(4.2));

  // Idempotent on block-constant input.
  auto [part, grid] = build_unit_square_partition(3, 2);
  Eigen::VectorXd cell(grid.n_cells());
  for (int i = 0; i < grid.n_cells(); ++i) cell[i] = grid.block_of_cell[i] * 1.5;
  Eigen::VectorXd wg = make_weights(grid, WeightScheme::unit());
  Eigen::VectorXd blocks = reaggregate(cell, wg, part, AggregationMode::weighted_mean);
  Eigen::VectorXd back(grid.n_cells());
  for (int i = 0; i < grid.n_cells(); ++i) back[i] = blocks[grid.block_of_cell[i]];
  CHECK((back - cell).cwiseAbs().maxCoeff() < 1e-14);

  Partition bad = two;
  bad.members = {{0, 1, 2}, {}};
  CHECK_THROWS(reaggregate(v, w, bad, AggregationMode::weighted_mean));
}
