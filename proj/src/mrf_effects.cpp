#include "blockagg/mrf_effects.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <json.hpp>

namespace blockagg {

namespace {

void label_components(AdjacencyGraph& g) {
  const int n = g.n_nodes();
  g.component.assign(n, -1);
  g.n_components = 0;
  std::vector<int> stack;
  for (int s = 0; s < n; ++s) {
    if (g.component[s] >= 0) continue;
    int label = g.n_components++;
    g.component[s] = label;
    stack.push_back(s);
    while (!stack.empty()) {
      int v = stack.back();
      stack.pop_back();
      for (int w : g.neighbors[v])
        if (g.component[w] < 0) {
          g.component[w] = label;
          stack.push_back(w);
        }
    }
  }
}

}  // namespace

std::vector<std::vector<int>> AdjacencyGraph::component_members() const {
  std::vector<std::vector<int>> out(n_components);
  for (int v = 0; v < n_nodes(); ++v) out[component[v]].push_back(v);
  return out;
}

AdjacencyGraph graph_from_edges(int n_nodes, const std::vector<std::pair<int, int>>& edges,
                                bool symmetric_input) {
  std::set<std::pair<int, int>> directed;
  for (auto [a, b] : edges) {
    if (a < 0 || b < 0 || a >= n_nodes || b >= n_nodes)
      throw std::invalid_argument("graph: edge (" + std::to_string(a) + ", " + std::to_string(b) +
                                  ") references an unknown node");
    if (a == b) throw std::invalid_argument("graph: self-loop at node " + std::to_string(a));
    directed.insert({a, b});
  }
  if (symmetric_input) {
    for (auto [a, b] : directed)
      if (!directed.count({b, a}))
        throw std::invalid_argument("graph: asymmetric neighbour pair (" + std::to_string(a) +
                                    ", " + std::to_string(b) + ")");
  }
  AdjacencyGraph g;
  g.neighbors.assign(n_nodes, {});
  std::set<std::pair<int, int>> undirected;
  for (auto [a, b] : directed) undirected.insert({std::min(a, b), std::max(a, b)});
  for (auto [a, b] : undirected) {
    g.neighbors[a].push_back(b);
    g.neighbors[b].push_back(a);
  }
  for (auto& nb : g.neighbors) std::sort(nb.begin(), nb.end());
  label_components(g);
  return g;
}

AdjacencyGraph adjacency_from_partition(const Partition& partition, const CellGrid& grid) {
  if (grid.lattice.empty())
    throw std::invalid_argument(
        "adjacency_from_partition: grid has no raster lattice; supply an edge list instead");
  partition.validate(grid.n_cells());
  std::vector<int> block_of(grid.n_cells(), -1);
  for (int b = 0; b < partition.n_blocks(); ++b)
    for (int c : partition.members[b]) block_of[c] = b;
  std::map<std::pair<int, int>, int> at;
  for (int c = 0; c < grid.n_cells(); ++c) at[{grid.lattice[c][0], grid.lattice[c][1]}] = c;
  std::vector<std::pair<int, int>> edges;
  for (int c = 0; c < grid.n_cells(); ++c) {
    auto [x, y] = grid.lattice[c];
    for (auto [dx, dy] : {std::pair{1, 0}, std::pair{0, 1}}) {
      auto it = at.find({x + dx, y + dy});
      if (it == at.end()) continue;
      int a = block_of[c], b = block_of[it->second];
      if (a >= 0 && b >= 0 && a != b) edges.emplace_back(a, b);
    }
  }
  return graph_from_edges(partition.n_blocks(), edges);
}

AdjacencyGraph induced_subgraph(const AdjacencyGraph& graph, const std::vector<int>& keep) {
  std::vector<int> index(graph.n_nodes(), -1);
  for (std::size_t k = 0; k < keep.size(); ++k) index[keep[k]] = static_cast<int>(k);
  std::vector<std::pair<int, int>> edges;
  for (std::size_t k = 0; k < keep.size(); ++k)
    for (int w : graph.neighbors[keep[k]])
      if (index[w] >= 0) edges.emplace_back(static_cast<int>(k), index[w]);
  return graph_from_edges(static_cast<int>(keep.size()), edges);
}

AdjacencyGraph read_edge_csv(const std::string& path, int n_nodes) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open edge list " + path);
  std::vector<std::pair<int, int>> edges;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    int a, b;
    if (!(ss >> a >> b)) {
      if (line_no == 1) continue;  // header
      throw std::invalid_argument(path + ":" + std::to_string(line_no) + ": expected two integers");
    }
    edges.emplace_back(a, b);
  }
  return graph_from_edges(n_nodes, edges, true);
}

std::string component_report_json(const AdjacencyGraph& graph) {
  nlohmann::json j;
  j["nodes"] = graph.n_nodes();
  j["components"] = graph.n_components;
  std::vector<int> sizes, singletons;
  for (const auto& mem : graph.component_members()) {
    sizes.push_back(static_cast<int>(mem.size()));
    if (mem.size() == 1) singletons.push_back(mem[0]);
  }
  j["component_sizes"] = sizes;
  j["singletons"] = singletons;
  return j.dump(2);
}

SparseMatrix besag_laplacian(const AdjacencyGraph& graph) {
  const int n = graph.n_nodes();
  std::vector<Eigen::Triplet<double>> trip;
  for (int v = 0; v < n; ++v) {
    trip.emplace_back(v, v, static_cast<double>(graph.neighbors[v].size()));
    for (int w : graph.neighbors[v]) trip.emplace_back(v, w, -1.0);
  }
  SparseMatrix r(n, n);
  r.setFromTriplets(trip.begin(), trip.end());
  return r;
}

Eigen::MatrixXd constrained_covariance(const Eigen::MatrixXd& component_structure) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(component_structure);
  const Eigen::VectorXd& lambda = eig.eigenvalues();
  const double tol = 1e-9 * std::max(1.0, lambda.cwiseAbs().maxCoeff());
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(component_structure.rows(), component_structure.cols());
  for (int k = 0; k < lambda.size(); ++k) {
    if (lambda[k] <= tol) continue;
    const auto v = eig.eigenvectors().col(k);
    cov.noalias() += (v * v.transpose()) / lambda[k];
  }
  return cov;
}

BesagStructure scaled_besag(const AdjacencyGraph& graph) {
  BesagStructure out;
  out.graph = graph;
  const int n = graph.n_nodes();
  SparseMatrix lap = besag_laplacian(graph);
  Eigen::MatrixXd dense_lap(lap);
  auto members = graph.component_members();
  out.scale.assign(members.size(), 0.0);
  std::vector<double> node_scale(n, 0.0);
  for (std::size_t c = 0; c < members.size(); ++c) {
    const auto& mem = members[c];
    if (mem.size() == 1) {
      out.singletons.push_back(mem[0]);
      continue;
    }
    const int k = static_cast<int>(mem.size());
    Eigen::MatrixXd block(k, k);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j) block(i, j) = dense_lap(mem[i], mem[j]);
    Eigen::MatrixXd cov = constrained_covariance(block);
    double mean_log = cov.diagonal().array().log().mean();
    out.scale[c] = std::exp(mean_log);
    for (int v : mem) node_scale[v] = out.scale[c];
    out.constraints.push_back(mem);
  }
  std::vector<Eigen::Triplet<double>> trip;
  for (int k = 0; k < lap.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(lap, k); it; ++it)
      if (node_scale[it.row()] > 0) trip.emplace_back(it.row(), it.col(), it.value() * node_scale[it.row()]);
  out.structure.resize(n, n);
  out.structure.setFromTriplets(trip.begin(), trip.end());
  return out;
}

void Bym2Params::validate() const {
  if (!(precision > 0) || !std::isfinite(precision))
    throw std::invalid_argument("Bym2Params: precision must be positive");
  if (!(mixing >= 0.0 && mixing <= 1.0))
    throw std::invalid_argument("Bym2Params: mixing must lie in [0, 1]");
}

SparseMatrix bym2_latent_precision(const BesagStructure& s) {
  const int n = s.n_nodes();
  std::vector<Eigen::Triplet<double>> trip;
  for (int i = 0; i < n; ++i) trip.emplace_back(i, i, 1.0);
  for (int k = 0; k < s.structure.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(s.structure, k); it; ++it)
      trip.emplace_back(n + it.row(), n + it.col(), it.value());
  for (int v : s.singletons) trip.emplace_back(n + v, n + v, 1.0);
  for (const auto& mem : s.constraints)
    for (int a : mem)
      for (int b : mem) trip.emplace_back(n + a, n + b, 1.0 / mem.size());
  SparseMatrix q(2 * n, 2 * n);
  q.setFromTriplets(trip.begin(), trip.end());
  q.makeCompressed();
  return q;
}

Eigen::MatrixXd bym2_constraints(const BesagStructure& s) {
  const int n = s.n_nodes();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<int>(s.constraints.size()), 2 * n);
  for (std::size_t r = 0; r < s.constraints.size(); ++r)
    for (int v : s.constraints[r]) a(static_cast<int>(r), n + v) = 1.0;
  return a;
}

Eigen::VectorXd Bym2Effect::apply(const Eigen::VectorXd& v, const Eigen::VectorXd& u) const {
  return v_coefficient * v + u_coefficient * u;
}

Bym2Effect bym2_effect_model(const BesagStructure& structure, const Bym2Params& params) {
  params.validate();
  Bym2Effect e;
  e.n_nodes = structure.n_nodes();
  e.prior_precision = bym2_latent_precision(structure);
  e.constraints = bym2_constraints(structure);
  e.v_coefficient = std::sqrt((1.0 - params.mixing) / params.precision);
  e.u_coefficient = std::sqrt(params.mixing / params.precision);
  return e;
}

}  // namespace blockagg
