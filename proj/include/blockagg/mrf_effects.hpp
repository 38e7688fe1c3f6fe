#pragma once

#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "blockagg/geometry.hpp"

namespace blockagg {

struct AdjacencyGraph {
  std::vector<std::vector<int>> neighbors;
  std::vector<int> component;  // component label per node, 0-based
  int n_components = 0;

  int n_nodes() const { return static_cast<int>(neighbors.size()); }
  bool is_singleton(int node) const { return neighbors[node].empty(); }
  std::vector<std::vector<int>> component_members() const;
};

/// Builds a graph from undirected edge lists; labels components.
/// Throws std::invalid_argument naming the pair when `symmetric_input` is true
/// and an edge (a,b) has no matching (b,a).
AdjacencyGraph graph_from_edges(int n_nodes, const std::vector<std::pair<int, int>>& edges,
                                bool symmetric_input = false);

/// Rook adjacency: blocks sharing an edge segment. Requires raster lattice
/// indices on the grid.
AdjacencyGraph adjacency_from_partition(const Partition& partition, const CellGrid& grid);

/// Induced subgraph on `keep` (indices into the graph), relabelled 0..k-1.
AdjacencyGraph induced_subgraph(const AdjacencyGraph& graph, const std::vector<int>& keep);

/// Two-column edge CSV (header optional). Every edge must appear in both
/// directions.
AdjacencyGraph read_edge_csv(const std::string& path, int n_nodes);

/// Scaled Besag (intrinsic CAR) structure.
///
/// Each multi-node component's Laplacian block is multiplied by the
/// geometric mean of the marginal variances of its sum-to-zero constrained
/// generalized inverse, so the scaled field has unit typical variance.
/// Singletons carry no structure (zero rows) and no constraint.
struct BesagStructure {
  SparseMatrix structure;
  std::vector<double> scale;                  // per component; 0 for singletons
  std::vector<std::vector<int>> constraints;  // member sets of multi-node components
  std::vector<int> singletons;
  AdjacencyGraph graph;

  int n_nodes() const { return static_cast<int>(structure.rows()); }
};

/// JSON summary: node/component counts, component sizes, singleton ids.
std::string component_report_json(const AdjacencyGraph& graph);

SparseMatrix besag_laplacian(const AdjacencyGraph& graph);
BesagStructure scaled_besag(const AdjacencyGraph& graph);

/// Constrained generalized inverse (pseudo-inverse) of a component block.
Eigen::MatrixXd constrained_covariance(const Eigen::MatrixXd& component_structure);

struct Bym2Params {
  double precision = 1.0;
  double mixing = 0.5;
  void validate() const;
};

/// Latent specification for b = (1/sqrt(tau)) (sqrt(1-phi) V + sqrt(phi) U).
///
/// Latent layout is (V, U) with V iid N(0,1). U follows the scaled Besag
/// structure on multi-node components (sum-to-zero per component) and is iid
/// N(0,1) on singletons, so a singleton's b is N(0, 1/tau).
/// `prior_precision` augments each constrained component with 1 1ᵀ so it is
/// full rank; on the constraint subspace the quadratic form is unchanged.
struct Bym2Effect {
  SparseMatrix prior_precision;  // 2n x 2n, over (V, U)
  Eigen::MatrixXd constraints;   // k x 2n
  double v_coefficient = 0.0;    // sqrt((1 - phi) / tau)
  double u_coefficient = 0.0;    // sqrt(phi / tau)
  int n_nodes = 0;

  Eigen::VectorXd apply(const Eigen::VectorXd& v, const Eigen::VectorXd& u) const;
};

Bym2Effect bym2_effect_model(const BesagStructure& structure, const Bym2Params& params);

/// (V,U) prior precision with constraint augmentation; independent of (tau, phi).
SparseMatrix bym2_latent_precision(const BesagStructure& structure);
Eigen::MatrixXd bym2_constraints(const BesagStructure& structure);

}  // namespace blockagg
