// Serial reference vs OpenMP kernels of the block predictor.
// Arg: blocks per side of the nested grid (5 x 5 cells per block).

#include <map>
#include <memory>
#include <random>

#include <benchmark/benchmark.h>

#include "blockagg/geometry.hpp"
#include "blockagg/kernels.hpp"
#include "blockagg/matern_spde.hpp"
#include "blockagg/predictor.hpp"

using namespace blockagg;

namespace {

struct Setup {
  CellGrid grid;
  SparseRowMatrix design;
  kernels::BlockIndex index;
  Eigen::VectorXd weights, offset, u, eta;

  explicit Setup(int side) {
    grid = build_unit_square_partition(side, 5).second;
    Mesh mesh = build_mesh(unit_square_polygon(), 0.5 / side, 0.4, 0.4);
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n01(0.0, 1.0);
    Eigen::MatrixXd z(grid.n_cells(), 2);
    for (int c = 0; c < z.rows(); ++c) z(c, 0) = 1.0, z(c, 1) = n01(rng);
    design = cell_design(z, project(mesh, grid.cells).matrix);
    index = kernels::BlockIndex::from_assignment(grid.block_of_cell, grid.n_blocks());
    weights = Eigen::VectorXd::Ones(grid.n_cells());
    offset = Eigen::VectorXd::Zero(grid.n_cells());
    u.resize(design.cols());
    for (int i = 0; i < u.size(); ++i) u[i] = 0.3 * n01(rng);
    eta = design * u;
  }
};

const Setup& setup(int side) {
  static std::map<int, std::unique_ptr<Setup>> cache;
  auto& s = cache[side];
  if (!s) s = std::make_unique<Setup>(side);
  return *s;
}

kernels::Exec exec_of(const benchmark::State& st) {
  return st.range(1) ? kernels::Exec::parallel : kernels::Exec::serial;
}

void BM_cell_predictor(benchmark::State& st) {
  const Setup& s = setup(static_cast<int>(st.range(0)));
  Eigen::VectorXd eta;
  for (auto _ : st) {
    kernels::cell_predictor(s.design, s.offset, s.u, eta, exec_of(st));
    benchmark::DoNotOptimize(eta.data());
  }
}

void BM_block_logsumexp(benchmark::State& st) {
  const Setup& s = setup(static_cast<int>(st.range(0)));
  Eigen::VectorXd out;
  for (auto _ : st) {
    kernels::block_logsumexp(s.index, s.weights, s.eta, out, exec_of(st));
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_block_softmax(benchmark::State& st) {
  const Setup& s = setup(static_cast<int>(st.range(0)));
  Eigen::VectorXd p;
  for (auto _ : st) {
    kernels::block_softmax(s.index, s.weights, s.eta, p, exec_of(st));
    benchmark::DoNotOptimize(p.data());
  }
}

void BM_combine_rows(benchmark::State& st) {
  const Setup& s = setup(static_cast<int>(st.range(0)));
  for (auto _ : st) {
    SparseRowMatrix g = kernels::combine_rows(s.index, s.design, s.weights, exec_of(st));
    benchmark::DoNotOptimize(g.valuePtr());
  }
}

void sizes(benchmark::internal::Benchmark* b) {
  for (int side : {10, 40})
    for (int par : {0, 1}) b->Args({side, par});
  b->ArgNames({"side", "parallel"});
}

}  // namespace

BENCHMARK(BM_cell_predictor)->Apply(sizes);
BENCHMARK(BM_block_logsumexp)->Apply(sizes);
BENCHMARK(BM_block_softmax)->Apply(sizes);
BENCHMARK(BM_combine_rows)->Apply(sizes);

BENCHMARK_MAIN();
