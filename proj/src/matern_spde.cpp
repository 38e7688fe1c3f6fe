#include "blockagg/matern_spde.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>

namespace blockagg {

double MaternParams::kappa() const { return std::sqrt(8.0) / range; }

double MaternParams::tau() const {
  return 1.0 / (std::sqrt(4.0 * std::numbers::pi) * kappa() * sd);
}

void MaternParams::validate() const {
  if (!(range > 0) || !std::isfinite(range))
    throw std::invalid_argument("MaternParams: range must be positive and finite");
  if (!(sd > 0) || !std::isfinite(sd))
    throw std::invalid_argument("MaternParams: sd must be positive and finite");
}

SpdeOperators assemble_fem(const Mesh& mesh) {
  const int n = mesh.n_nodes();
  SpdeOperators ops;
  ops.mass = Eigen::VectorXd::Zero(n);
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(mesh.triangles.size() * 9);
  for (int t = 0; t < mesh.n_triangles(); ++t) {
    const auto& tri = mesh.triangles[t];
    const double area = mesh.triangle_area(t);
    if (!(area > 0) || !std::isfinite(area))
      throw GeometryError("assemble_fem: degenerate triangle " + std::to_string(t));
    Point p[3] = {mesh.nodes[tri[0]], mesh.nodes[tri[1]], mesh.nodes[tri[2]]};
    // Edge opposite vertex k.
    double ex[3], ey[3];
    for (int k = 0; k < 3; ++k) {
      const Point& a = p[(k + 1) % 3];
      const Point& b = p[(k + 2) % 3];
      ex[k] = b.x - a.x;
      ey[k] = b.y - a.y;
    }
    for (int i = 0; i < 3; ++i) {
      ops.mass[tri[i]] += area / 3.0;
      for (int j = 0; j < 3; ++j)
        trip.emplace_back(tri[i], tri[j], (ex[i] * ex[j] + ey[i] * ey[j]) / (4.0 * area));
    }
  }
  ops.stiffness.resize(n, n);
  ops.stiffness.setFromTriplets(trip.begin(), trip.end());
  ops.stiffness.makeCompressed();
  Eigen::VectorXd inv_mass = ops.mass.cwiseInverse();
  SparseMatrix scaled = inv_mass.asDiagonal() * ops.stiffness;
  ops.stiffness2 = (ops.stiffness * scaled).pruned(0.0, 0.0);
  ops.stiffness2 = SparseMatrix(ops.stiffness2.selfadjointView<Eigen::Lower>());
  ops.stiffness2.makeCompressed();
  return ops;
}

SparseMatrix matern_precision_matrix(const SpdeOperators& ops, const MaternParams& params) {
  params.validate();
  const double k2 = params.kappa() * params.kappa();
  const double t2 = params.tau() * params.tau();
  SparseMatrix c(ops.n_nodes(), ops.n_nodes());
  c.reserve(Eigen::VectorXi::Constant(ops.n_nodes(), 1));
  for (int i = 0; i < ops.n_nodes(); ++i) c.insert(i, i) = ops.mass[i];
  SparseMatrix q = (t2 * k2 * k2) * c + (2.0 * t2 * k2) * ops.stiffness + t2 * ops.stiffness2;
  q.makeCompressed();
  return q;
}

SparsePrecision matern_precision(const SpdeOperators& ops, const MaternParams& params) {
  SparsePrecision q(matern_precision_matrix(ops, params));
  q.factor();
  return q;
}

SparsePrecision::SparsePrecision(SparseMatrix q) : q_(std::move(q)) {}

const SparseCholesky& SparsePrecision::factor() const {
  std::call_once(cache_->once, [this] {
    cache_->llt.compute(q_);
    cache_->ok = cache_->llt.info() == Eigen::Success;
  });
  if (!cache_->ok) throw NumericalError("SparsePrecision: Cholesky failed (matrix not SPD)");
  return cache_->llt;
}

double SparsePrecision::log_determinant() const { return blockagg::log_determinant(factor()); }

Eigen::VectorXd SparsePrecision::solve(const Eigen::VectorXd& b) const { return factor().solve(b); }

double log_determinant(const SparseCholesky& llt) {
  return 2.0 * llt.matrixL().nestedExpression().diagonal().array().log().sum();
}

Eigen::VectorXd apply_inverse_factor_transpose(const SparseCholesky& llt, const Eigen::VectorXd& z) {
  Eigen::VectorXd y = llt.matrixU().solve(z);
  return llt.permutationPinv() * y;
}

Eigen::VectorXd sample_gmrf(const SparsePrecision& q, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd z(q.size());
  for (int i = 0; i < z.size(); ++i) z[i] = normal(rng);
  return apply_inverse_factor_transpose(q.factor(), z);
}

Eigen::VectorXd sample_gmrf(const SparsePrecision& q, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_gmrf(q, rng);
}

ConstraintCorrector::ConstraintCorrector(const SparseCholesky& llt, const Eigen::MatrixXd& constraints)
    : a_(constraints) {
  if (a_.rows() == 0) return;
  w_ = llt.solve(Eigen::MatrixXd(a_.transpose()));
  Eigen::MatrixXd aw = a_ * w_;
  aw_.compute(0.5 * (aw + aw.transpose()));
  if (aw_.info() != Eigen::Success)
    throw NumericalError("constraints are linearly dependent");
  log_det_ = 2.0 * Eigen::MatrixXd(aw_.matrixL()).diagonal().array().log().sum();
}

Eigen::VectorXd ConstraintCorrector::apply(const Eigen::VectorXd& x) const {
  if (empty()) return x;
  return x - w_ * aw_.solve(a_ * x);
}

Eigen::VectorXd ConstraintCorrector::variance_reduction() const {
  if (empty()) return Eigen::VectorXd::Zero(0);
  // rows of W L⁻ᵀ give the diagonal of W (AW)⁻¹ Wᵀ
  Eigen::MatrixXd half = aw_.matrixL().solve(Eigen::MatrixXd(w_.transpose()));
  return half.colwise().squaredNorm().transpose();
}

Eigen::VectorXd marginal_variances(const SparseCholesky& llt) {
  const int n = static_cast<int>(llt.rows());
  // Columns of L⁻¹ in blocks keep memory bounded for larger meshes.
  const int chunk = 256;
  Eigen::VectorXd permuted = Eigen::VectorXd::Zero(n);
  for (int start = 0; start < n; start += chunk) {
    int width = std::min(chunk, n - start);
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n, width);
    for (int k = 0; k < width; ++k) rhs(start + k, k) = 1.0;
    llt.matrixL().solveInPlace(rhs);
    // (LLᵀ)⁻¹ = L⁻ᵀL⁻¹, so its diagonal holds squared column norms of L⁻¹.
    permuted.segment(start, width) = rhs.colwise().squaredNorm().transpose();
  }
  return llt.permutationPinv() * permuted;
}

double matern_covariance(double distance, const MaternParams& params) {
  const double var = params.sd * params.sd;
  const double x = params.kappa() * distance;
  if (x < 1e-12) return var;
  if (x > 700) return 0.0;
  return var * x * std::cyl_bessel_k(1.0, x);
}

Eigen::MatrixXd dense_matern_cov(const std::vector<Point>& points, const MaternParams& params) {
  params.validate();
  const int n = static_cast<int>(points.size());
  Eigen::MatrixXd cov(n, n);
  for (int i = 0; i < n; ++i) {
    cov(i, i) = params.sd * params.sd;
    for (int j = 0; j < i; ++j) {
      double d = std::hypot(points[i].x - points[j].x, points[i].y - points[j].y);
      cov(i, j) = cov(j, i) = matern_covariance(d, params);
    }
  }
  return cov;
}

void write_matrix_market(const SparseMatrix& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << "%%MatrixMarket matrix coordinate real general\n";
  out << m.rows() << ' ' << m.cols() << ' ' << m.nonZeros() << '\n';
  out << std::setprecision(17);
  for (int k = 0; k < m.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(m, k); it; ++it)
      out << it.row() + 1 << ' ' << it.col() + 1 << ' ' << it.value() << '\n';
}

}  // namespace blockagg
