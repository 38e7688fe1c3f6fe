#include "blockagg/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

namespace blockagg {

namespace {

double cross(Point o, Point a, Point b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

struct Box {
  double x0, y0, x1, y1;
};

Box bounding_box(const std::vector<Point>& pts) {
  Box b{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
        -std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
  for (const auto& p : pts) {
    b.x0 = std::min(b.x0, p.x);
    b.y0 = std::min(b.y0, p.y);
    b.x1 = std::max(b.x1, p.x);
    b.y1 = std::max(b.y1, p.y);
  }
  return b;
}

// Triangulates the strip between two parallel, identically directed node
// chains. Both chains run corner to corner; the first and last pairs are
// already joined by edges.
void zipper(const std::vector<Point>& nodes, const std::vector<int>& lower,
            const std::vector<int>& upper, std::vector<std::array<int, 3>>& out) {
  std::size_t i = 0, j = 0;
  auto emit = [&](int a, int b, int c) {
    if (cross(nodes[a], nodes[b], nodes[c]) < 0) std::swap(b, c);
    out.push_back({a, b, c});
  };
  while (i + 1 < lower.size() || j + 1 < upper.size()) {
    bool advance_lower;
    if (i + 1 == lower.size()) {
      advance_lower = false;
    } else if (j + 1 == upper.size()) {
      advance_lower = true;
    } else {
      advance_lower = distance(nodes[lower[i + 1]], nodes[upper[j]]) <=
                      distance(nodes[lower[i]], nodes[upper[j + 1]]);
    }
    if (advance_lower) {
      emit(lower[i], lower[i + 1], upper[j]);
      ++i;
    } else {
      emit(lower[i], upper[j + 1], upper[j]);
      ++j;
    }
  }
}

std::vector<Point> chain(Point a, Point b, int segments) {
  std::vector<Point> pts;
  pts.reserve(segments + 1);
  for (int k = 0; k <= segments; ++k) {
    double t = static_cast<double>(k) / segments;
    pts.push_back({a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)});
  }
  pts.front() = a;
  pts.back() = b;
  return pts;
}

// Uniform bins over the mesh bounding box, each listing overlapping triangles.
class TriangleBins {
 public:
  explicit TriangleBins(const Mesh& mesh) : mesh_(mesh) {
    box_ = bounding_box(mesh.nodes);
    int side = std::max(1, static_cast<int>(std::sqrt(static_cast<double>(mesh.n_triangles()) / 2.0)));
    nx_ = ny_ = side;
    bins_.assign(static_cast<std::size_t>(nx_) * ny_, {});
    for (int t = 0; t < mesh.n_triangles(); ++t) {
      const auto& tri = mesh.triangles[t];
      std::vector<Point> corners{mesh.nodes[tri[0]], mesh.nodes[tri[1]], mesh.nodes[tri[2]]};
      Box b = bounding_box(corners);
      int cx0 = bin_x(b.x0), cx1 = bin_x(b.x1), cy0 = bin_y(b.y0), cy1 = bin_y(b.y1);
      for (int cy = cy0; cy <= cy1; ++cy)
        for (int cx = cx0; cx <= cx1; ++cx) bins_[cy * nx_ + cx].push_back(t);
    }
  }

  const std::vector<int>* candidates(Point p) const {
    const double tol = 1e-9 * std::max(box_.x1 - box_.x0, box_.y1 - box_.y0);
    if (p.x < box_.x0 - tol || p.x > box_.x1 + tol || p.y < box_.y0 - tol || p.y > box_.y1 + tol)
      return nullptr;
    return &bins_[bin_y(p.y) * nx_ + bin_x(p.x)];
  }

 private:
  int bin_x(double x) const {
    int k = static_cast<int>((x - box_.x0) / (box_.x1 - box_.x0) * nx_);
    return std::clamp(k, 0, nx_ - 1);
  }
  int bin_y(double y) const {
    int k = static_cast<int>((y - box_.y0) / (box_.y1 - box_.y0) * ny_);
    return std::clamp(k, 0, ny_ - 1);
  }

  const Mesh& mesh_;
  Box box_{};
  int nx_ = 1, ny_ = 1;
  std::vector<std::vector<int>> bins_;
};

std::array<double, 3> barycentric(const Mesh& mesh, int t, Point p) {
  const auto& tri = mesh.triangles[t];
  Point a = mesh.nodes[tri[0]], b = mesh.nodes[tri[1]], c = mesh.nodes[tri[2]];
  double area2 = cross(a, b, c);
  double l0 = cross(p, b, c) / area2;
  double l1 = cross(a, p, c) / area2;
  double l2 = 1.0 - l0 - l1;
  return {l0, l1, l2};
}

int locate_with(const Mesh& mesh, const TriangleBins& bins, Point p) {
  const auto* cand = bins.candidates(p);
  if (!cand) return -1;
  int best = -1;
  double best_min = -1e-10;
  for (int t : *cand) {
    auto l = barycentric(mesh, t, p);
    double m = std::min({l[0], l[1], l[2]});
    if (m > best_min) {
      best_min = m;
      best = t;
    }
  }
  return best;
}

}  // namespace

void CellGrid::validate() const {
  const int n = n_cells();
  if (static_cast<int>(block_of_cell.size()) != n)
    throw GeometryError("CellGrid: block_of_cell has " + std::to_string(block_of_cell.size()) +
                        " entries for " + std::to_string(n) + " cells");
  if (covariates.rows() != n)
    throw GeometryError("CellGrid: covariate matrix has " + std::to_string(covariates.rows()) +
                        " rows for " + std::to_string(n) + " cells");
  if (!covariate_names.empty() && static_cast<int>(covariate_names.size()) != covariates.cols())
    throw GeometryError("CellGrid: covariate name count does not match columns");
  if (log_offset && log_offset->size() != n)
    throw GeometryError("CellGrid: log offset length does not match cell count");
  if (!lattice.empty() && static_cast<int>(lattice.size()) != n)
    throw GeometryError("CellGrid: lattice index length does not match cell count");
  std::vector<int> counts(cells_per_block.size(), 0);
  for (int c = 0; c < n; ++c) {
    int b = block_of_cell[c];
    if (b < 0 || b >= n_blocks())
      throw GeometryError("CellGrid: cell " + std::to_string(c) + " has invalid block " +
                          std::to_string(b));
    ++counts[b];
  }
  for (int b = 0; b < n_blocks(); ++b) {
    if (counts[b] != cells_per_block[b])
      throw GeometryError("CellGrid: block " + std::to_string(b) + " count mismatch");
    if (counts[b] < 1) throw GeometryError("CellGrid: block " + std::to_string(b) + " is empty");
  }
}

void Partition::validate(int n_cells) const {
  if (ids.size() != members.size())
    throw GeometryError("Partition: id count does not match member lists");
  if (!centroids.empty() && centroids.size() != members.size())
    throw GeometryError("Partition: centroid count does not match blocks");
  std::vector<char> seen(n_cells, 0);
  for (std::size_t b = 0; b < members.size(); ++b) {
    for (int c : members[b]) {
      if (c < 0 || c >= n_cells)
        throw GeometryError("Partition: block " + std::to_string(ids[b]) +
                            " references invalid cell " + std::to_string(c));
      if (seen[c])
        throw GeometryError("Partition: cell " + std::to_string(c) + " is in more than one block");
      seen[c] = 1;
    }
  }
}

Partition partition_from_grid(const CellGrid& grid) {
  Partition part;
  const int nb = grid.n_blocks();
  part.ids.resize(nb);
  part.members.assign(nb, {});
  part.centroids.assign(nb, Point{});
  for (int b = 0; b < nb; ++b) part.ids[b] = b;
  for (int c = 0; c < grid.n_cells(); ++c) {
    int b = grid.block_of_cell[c];
    part.members[b].push_back(c);
    part.centroids[b].x += grid.cells[c].x;
    part.centroids[b].y += grid.cells[c].y;
  }
  for (int b = 0; b < nb; ++b) {
    double m = static_cast<double>(part.members[b].size());
    if (m > 0) {
      part.centroids[b].x /= m;
      part.centroids[b].y /= m;
    }
  }
  return part;
}

std::pair<Partition, CellGrid> build_unit_square_partition(int blocks_per_side,
                                                           int cells_per_block_side) {
  if (blocks_per_side < 1 || cells_per_block_side < 1)
    throw std::invalid_argument("build_unit_square_partition: sizes must be >= 1");
  const int n = blocks_per_side, m = cells_per_block_side;
  const int side = n * m;
  const double step = 1.0 / side;

  CellGrid grid;
  grid.cells.reserve(static_cast<std::size_t>(side) * side);
  grid.block_of_cell.reserve(grid.cells.capacity());
  grid.lattice.reserve(grid.cells.capacity());
  grid.cells_per_block.assign(static_cast<std::size_t>(n) * n, m * m);
  for (int r = 0; r < side; ++r) {
    for (int c = 0; c < side; ++c) {
      grid.cells.push_back({(c + 0.5) * step, (r + 0.5) * step});
      grid.block_of_cell.push_back((r / m) * n + c / m);
      grid.lattice.push_back({c, r});
    }
  }
  grid.covariates = Eigen::MatrixXd::Ones(grid.n_cells(), 1);
  grid.covariate_names = {"intercept"};

  Partition part = partition_from_grid(grid);
  for (int R = 0; R < n; ++R)
    for (int C = 0; C < n; ++C)
      part.centroids[R * n + C] = {(C + 0.5) / n, (R + 0.5) / n};
  return {std::move(part), std::move(grid)};
}

const char* to_string(WeightScheme::Kind kind) {
  switch (kind) {
    case WeightScheme::Kind::equal: return "equal";
    case WeightScheme::Kind::unit: return "unit";
    case WeightScheme::Kind::custom: return "custom";
  }
  return "?";
}

WeightScheme::Kind weight_kind_from_string(const std::string& name) {
  if (name == "equal") return WeightScheme::Kind::equal;
  if (name == "unit") return WeightScheme::Kind::unit;
  if (name == "custom") return WeightScheme::Kind::custom;
  throw std::invalid_argument("unknown weight scheme '" + name + "'");
}

Eigen::VectorXd make_weights(const CellGrid& grid, const WeightScheme& scheme) {
  const int n = grid.n_cells();
  Eigen::VectorXd w(n);
  switch (scheme.kind) {
    case WeightScheme::Kind::equal:
      for (int c = 0; c < n; ++c) w[c] = 1.0 / grid.cells_per_block[grid.block_of_cell[c]];
      break;
    case WeightScheme::Kind::unit:
      w.setOnes();
      break;
    case WeightScheme::Kind::custom: {
      if (static_cast<int>(scheme.custom.size()) != n)
        throw std::invalid_argument("make_weights: custom weights have length " +
                                    std::to_string(scheme.custom.size()) + ", expected " +
                                    std::to_string(n));
      std::vector<char> positive(grid.n_blocks(), 0);
      for (int c = 0; c < n; ++c) {
        double v = scheme.custom[c];
        if (!std::isfinite(v) || v < 0)
          throw std::invalid_argument("make_weights: weight of cell " + std::to_string(c) +
                                      " is negative or non-finite");
        if (v > 0) positive[grid.block_of_cell[c]] = 1;
        w[c] = v;
      }
      for (int b = 0; b < grid.n_blocks(); ++b)
        if (!positive[b])
          throw std::invalid_argument("make_weights: block " + std::to_string(b) +
                                      " has no positive weight");
      break;
    }
  }
  return w;
}

double Mesh::triangle_area(int t) const {
  const auto& tri = triangles[t];
  return 0.5 * cross(nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]);
}

std::vector<std::array<int, 2>> Mesh::edges() const {
  std::vector<std::array<int, 2>> out;
  out.reserve(triangles.size() * 3);
  for (const auto& t : triangles)
    for (int k = 0; k < 3; ++k) {
      int a = t[k], b = t[(k + 1) % 3];
      out.push_back({std::min(a, b), std::max(a, b)});
    }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<Point> unit_square_polygon() { return {{0, 0}, {1, 0}, {1, 1}, {0, 1}}; }

bool point_in_polygon(const std::vector<Point>& polygon, Point p) {
  const std::size_t n = polygon.size();
  Box box = bounding_box(polygon);
  const double tol = 1e-12 * std::max({1.0, box.x1 - box.x0, box.y1 - box.y0});
  bool inside = false;
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    Point a = polygon[j], b = polygon[i];
    double len = distance(a, b);
    if (std::abs(cross(a, b, p)) <= tol * std::max(len, 1.0) &&
        p.x >= std::min(a.x, b.x) - tol && p.x <= std::max(a.x, b.x) + tol &&
        p.y >= std::min(a.y, b.y) - tol && p.y <= std::max(a.y, b.y) + tol)
      return true;
    if ((a.y > p.y) != (b.y > p.y)) {
      double xi = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
      if (p.x < xi) inside = !inside;
    }
  }
  return inside;
}

Mesh build_mesh(const std::vector<Point>& domain_polygon, double inner_max_edge,
                double outer_extension_width, double outer_max_edge) {
  if (!(inner_max_edge > 0)) throw std::invalid_argument("build_mesh: inner_max_edge must be > 0");
  if (!(outer_max_edge >= inner_max_edge))
    throw std::invalid_argument("build_mesh: outer_max_edge must be >= inner_max_edge");
  if (!(outer_extension_width >= 0))
    throw std::invalid_argument("build_mesh: outer_extension_width must be >= 0");
  if (domain_polygon.size() < 3) throw GeometryError("build_mesh: degenerate polygon (< 3 vertices)");
  double area2 = 0;
  for (std::size_t i = 0, j = domain_polygon.size() - 1; i < domain_polygon.size(); j = i++)
    area2 += domain_polygon[j].x * domain_polygon[i].y - domain_polygon[i].x * domain_polygon[j].y;
  Box box = bounding_box(domain_polygon);
  const double lx = box.x1 - box.x0, ly = box.y1 - box.y0;
  if (!(std::abs(area2) > 1e-14 * std::max(1.0, lx * ly)) || !(lx > 0) || !(ly > 0))
    throw GeometryError("build_mesh: degenerate polygon (zero area)");

  Mesh mesh;
  auto& nodes = mesh.nodes;

  // Offset-row lattice over the bounding box.
  const int nx = std::max(1, static_cast<int>(std::ceil(lx / inner_max_edge - 1e-9)));
  const int ny = std::max(1, static_cast<int>(std::ceil(ly / (inner_max_edge * std::sqrt(3.0) / 2.0) - 1e-9)));
  const double dx = lx / nx, dy = ly / ny;
  std::vector<std::vector<int>> rows(ny + 1);
  for (int r = 0; r <= ny; ++r) {
    double y = (r == ny) ? box.y1 : box.y0 + r * dy;
    auto add = [&](double x) {
      rows[r].push_back(static_cast<int>(nodes.size()));
      nodes.push_back({x, y});
    };
    if (r % 2 == 0) {
      for (int k = 0; k <= nx; ++k) add(k == nx ? box.x1 : box.x0 + k * dx);
    } else {
      add(box.x0);
      for (int k = 0; k < nx; ++k) add(box.x0 + (k + 0.5) * dx);
      add(box.x1);
    }
  }
  for (int r = 0; r < ny; ++r) zipper(nodes, rows[r], rows[r + 1], mesh.triangles);

  // Inner boundary loop, one chain per side, each running corner to corner
  // counter-clockwise: bottom (left->right), right (bottom->top),
  // top (right->left), left (top->bottom).
  std::array<std::vector<int>, 4> sides;
  sides[0] = rows.front();
  for (int r = 0; r <= ny; ++r) sides[1].push_back(rows[r].back());
  sides[2] = std::vector<int>(rows.back().rbegin(), rows.back().rend());
  for (int r = ny; r >= 0; --r) sides[3].push_back(rows[r].front());

  // Graded rings out to the extension width.
  const double growth = 1.6;
  double offset = 0.0, spacing = inner_max_edge;
  const double width = outer_extension_width;
  while (width > 0 && offset < width - 1e-12) {
    spacing = std::min(spacing * growth, outer_max_edge);
    double next = offset + spacing;
    if (next > width || width - next < 0.5 * spacing) next = width;
    offset = next;

    Point c0{box.x0 - offset, box.y0 - offset}, c1{box.x1 + offset, box.y0 - offset},
        c2{box.x1 + offset, box.y1 + offset}, c3{box.x0 - offset, box.y1 + offset};
    std::array<std::pair<Point, Point>, 4> ends{{{c0, c1}, {c1, c2}, {c2, c3}, {c3, c0}}};
    std::array<std::vector<int>, 4> outer;
    std::array<int, 4> corner_ids{};
    for (int s = 0; s < 4; ++s) {
      auto [a, b] = ends[s];
      int segs = std::max(1, static_cast<int>(std::ceil(distance(a, b) / spacing - 1e-9)));
      auto pts = chain(a, b, segs);
      for (std::size_t k = 0; k < pts.size(); ++k) {
        if (k == 0 && s > 0) {
          outer[s].push_back(corner_ids[s]);
          continue;
        }
        if (k + 1 == pts.size() && s == 3) {
          outer[s].push_back(corner_ids[0]);
          continue;
        }
        int id = static_cast<int>(nodes.size());
        nodes.push_back(pts[k]);
        outer[s].push_back(id);
        if (k == 0) corner_ids[0] = id;
        if (k + 1 == pts.size() && s < 3) corner_ids[s + 1] = id;
      }
    }
    for (int s = 0; s < 4; ++s) zipper(nodes, sides[s], outer[s], mesh.triangles);
    sides = outer;
  }

  mesh.interior.resize(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i)
    mesh.interior[i] = point_in_polygon(domain_polygon, nodes[i]);

  for (int t = 0; t < mesh.n_triangles(); ++t)
    if (!(mesh.triangle_area(t) > 0))
      throw GeometryError("build_mesh: produced degenerate triangle " + std::to_string(t));
  return mesh;
}

int locate(const Mesh& mesh, Point p) {
  TriangleBins bins(mesh);
  return locate_with(mesh, bins, p);
}

Projector project(const Mesh& mesh, const std::vector<Point>& points) {
  TriangleBins bins(mesh);
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(points.size() * 3);
  for (std::size_t i = 0; i < points.size(); ++i) {
    Point p = points[i];
    int t = locate_with(mesh, bins, p);
    if (t < 0) {
      std::ostringstream msg;
      msg << "project: point " << i << " (" << p.x << ", " << p.y << ") lies outside the mesh";
      throw GeometryError(msg.str());
    }
    auto l = barycentric(mesh, t, p);
    double sum = 0;
    for (auto& v : l) {
      if (std::abs(v) < 1e-13 || v < 0) v = 0;
      sum += v;
    }
    for (int k = 0; k < 3; ++k)
      if (l[k] > 0) trip.emplace_back(static_cast<int>(i), mesh.triangles[t][k], l[k] / sum);
  }
  Projector proj;
  proj.matrix.resize(static_cast<int>(points.size()), mesh.n_nodes());
  proj.matrix.setFromTriplets(trip.begin(), trip.end());
  proj.matrix.makeCompressed();
  return proj;
}

Eigen::VectorXd reaggregate(const Eigen::VectorXd& cell_values,
                            const Eigen::VectorXd& cell_weights, const Partition& target,
                            AggregationMode mode) {
  if (cell_values.size() != cell_weights.size())
    throw std::invalid_argument("reaggregate: values and weights differ in length");
  target.validate(static_cast<int>(cell_values.size()));
  Eigen::VectorXd out(target.n_blocks());
  for (int b = 0; b < target.n_blocks(); ++b) {
    const auto& mem = target.members[b];
    if (mem.empty())
      throw GeometryError("reaggregate: target block " + std::to_string(target.ids[b]) +
                          " has no cells");
    double num = 0, den = 0;
    for (int c : mem) {
      if (cell_weights[c] < 0)
        throw std::invalid_argument("reaggregate: negative weight at cell " + std::to_string(c));
      num += cell_weights[c] * cell_values[c];
      den += cell_weights[c];
    }
    if (mode == AggregationMode::weighted_mean) {
      if (!(den > 0))
        throw GeometryError("reaggregate: target block " + std::to_string(target.ids[b]) +
                            " has zero total weight");
      out[b] = num / den;
    } else {
      out[b] = num;
    }
  }
  return out;
}

}  // namespace blockagg
