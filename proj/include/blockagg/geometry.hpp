#pragma once

#include <array>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

namespace blockagg {

using SparseRowMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using SparseMatrix = Eigen::SparseMatrix<double>;

struct Point {
  double x = 0.0;
  double y = 0.0;
};

class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Fine-resolution cells (treated as points) nested in observation blocks.
///
/// Covariates carry one row per cell; column 0 is the intercept by
/// convention. `lattice` holds (column, row) raster indices when the cells
/// come from a regular raster and is empty otherwise.
struct CellGrid {
  std::vector<Point> cells;
  std::vector<int> block_of_cell;
  std::vector<int> cells_per_block;
  Eigen::MatrixXd covariates;
  std::vector<std::string> covariate_names;
  std::optional<Eigen::VectorXd> log_offset;
  std::vector<std::array<int, 2>> lattice;

  int n_cells() const { return static_cast<int>(cells.size()); }
  int n_blocks() const { return static_cast<int>(cells_per_block.size()); }
  int n_covariates() const { return static_cast<int>(covariates.cols()); }

  // Throws GeometryError when an invariant is broken.
  void validate() const;
};

/// Blocks as explicit member-cell lists. Member sets are disjoint.
struct Partition {
  std::vector<int> ids;
  std::vector<std::vector<int>> members;
  std::vector<Point> centroids;

  int n_blocks() const { return static_cast<int>(members.size()); }
  void validate(int n_cells) const;
};

/// Partition induced by a grid's own block_of_cell map; centroids are the
/// mean of member cell locations.
Partition partition_from_grid(const CellGrid& grid);

/// Regular nested grid on the unit square.
///
/// Cells are indexed row-major over the full raster, bottom row first:
/// cell (r, c) has index r * (n*m) + c and center ((c+0.5)/(n*m), (r+0.5)/(n*m)).
/// Blocks are indexed row-major too: block (R, C) has index R * n + C.
/// Covariates start as a single intercept column.
std::pair<Partition, CellGrid> build_unit_square_partition(int blocks_per_side,
                                                           int cells_per_block_side);

struct WeightScheme {
  enum class Kind { equal, unit, custom };
  Kind kind = Kind::equal;
  std::vector<double> custom;

  static WeightScheme equal() { return {Kind::equal, {}}; }
  static WeightScheme unit() { return {Kind::unit, {}}; }
  static WeightScheme from_values(std::vector<double> w) { return {Kind::custom, std::move(w)}; }
};

const char* to_string(WeightScheme::Kind kind);
WeightScheme::Kind weight_kind_from_string(const std::string& name);

/// Per-cell aggregation weights w_ij aligned with grid.cells.
Eigen::VectorXd make_weights(const CellGrid& grid, const WeightScheme& scheme);

struct Mesh {
  std::vector<Point> nodes;
  std::vector<std::array<int, 3>> triangles;
  std::vector<bool> interior;

  int n_nodes() const { return static_cast<int>(nodes.size()); }
  int n_triangles() const { return static_cast<int>(triangles.size()); }
  double triangle_area(int t) const;
  // Unique undirected edges as (lo, hi) node pairs.
  std::vector<std::array<int, 2>> edges() const;
};

/// Structured triangulation of the domain's bounding box plus a graded
/// extension band.
///
/// The inner region uses offset rows (near-equilateral triangles) with all
/// edges no longer than inner_max_edge. The band is a sequence of nested
/// rectangular rings whose spacing grows geometrically up to outer_max_edge;
/// consecutive rings are stitched with a shortest-diagonal zipper. Nodes
/// inside or on the domain polygon are flagged interior.
Mesh build_mesh(const std::vector<Point>& domain_polygon, double inner_max_edge,
                double outer_extension_width, double outer_max_edge);

std::vector<Point> unit_square_polygon();

/// Barycentric evaluation matrix: one row per point, columns are mesh nodes.
struct Projector {
  SparseRowMatrix matrix;
  int n_points() const { return static_cast<int>(matrix.rows()); }
};

Projector project(const Mesh& mesh, const std::vector<Point>& points);

/// Returns the index of a triangle containing p, or -1.
int locate(const Mesh& mesh, Point p);

enum class AggregationMode { weighted_mean, weighted_sum };

/// Weighted re-aggregation of cell values onto an arbitrary partition of the
/// same cells. Mean mode divides by the block's weight total.
Eigen::VectorXd reaggregate(const Eigen::VectorXd& cell_values,
                            const Eigen::VectorXd& cell_weights, const Partition& target,
                            AggregationMode mode);

bool point_in_polygon(const std::vector<Point>& polygon, Point p);

}  // namespace blockagg
