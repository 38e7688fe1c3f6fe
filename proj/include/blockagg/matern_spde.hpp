#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include "blockagg/geometry.hpp"

namespace blockagg {

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Matérn field parameters with smoothness fixed at 1: practical range and
/// marginal standard deviation, both in geometry units.
struct MaternParams {
  double range = 1.0;
  double sd = 1.0;

  double kappa() const;
  double tau() const;
  void validate() const;
};

/// Piecewise-linear FEM matrices on a mesh.
///
/// `mass` is the row-sum lumped mass C̃ (one entry per node); `stiffness` is
/// G with G_ij = sum over triangles of area * grad(phi_i) . grad(phi_j).
/// `stiffness2` caches G C̃⁻¹ G.
struct SpdeOperators {
  Eigen::VectorXd mass;
  SparseMatrix stiffness;
  SparseMatrix stiffness2;
  int n_nodes() const { return static_cast<int>(mass.size()); }
};

SpdeOperators assemble_fem(const Mesh& mesh);

using SparseCholesky = Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower, Eigen::AMDOrdering<int>>;

/// Sparse SPD precision with a lazily computed Cholesky factor.
///
/// The factor cache is initialised under a once-flag so a precision can be
/// shared read-only between threads.
class SparsePrecision {
 public:
  SparsePrecision() = default;
  explicit SparsePrecision(SparseMatrix q);

  const SparseMatrix& matrix() const { return q_; }
  int size() const { return static_cast<int>(q_.rows()); }

  // Throws NumericalError when the matrix is not SPD.
  const SparseCholesky& factor() const;
  double log_determinant() const;
  Eigen::VectorXd solve(const Eigen::VectorXd& b) const;

 private:
  struct Cache {
    std::once_flag once;
    SparseCholesky llt;
    bool ok = false;
  };
  SparseMatrix q_;
  std::shared_ptr<Cache> cache_ = std::make_shared<Cache>();
};

/// Q = tau^2 (kappa^4 C̃ + 2 kappa^2 G + G C̃⁻¹ G), kappa = sqrt(8)/range,
/// tau = 1 / (sqrt(4 pi) kappa sd), so `sd` is the stationary marginal sd.
SparseMatrix matern_precision_matrix(const SpdeOperators& ops, const MaternParams& params);
SparsePrecision matern_precision(const SpdeOperators& ops, const MaternParams& params);

/// Log-determinant from a computed factor: 2 * sum(log diag L).
double log_determinant(const SparseCholesky& llt);

/// Draws x ~ N(0, Q⁻¹) as x = P⁻¹ L⁻ᵀ z with z standard normal.
Eigen::VectorXd sample_gmrf(const SparsePrecision& q, std::mt19937_64& rng);
Eigen::VectorXd sample_gmrf(const SparsePrecision& q, std::uint64_t seed);

/// Applies L⁻ᵀ (with the fill-reducing permutation undone) to z.
Eigen::VectorXd apply_inverse_factor_transpose(const SparseCholesky& llt, const Eigen::VectorXd& z);

/// Conditioning by kriging on linear constraints A x = e for x ~ N(m, Q⁻¹).
///
/// Precomputes W = Q⁻¹Aᵀ and the Cholesky of A W, so the correction
/// x - W (A W)⁻¹ (A x - e) is cheap per draw. Also supplies the covariance
/// downdate needed for constrained marginal variances.
class ConstraintCorrector {
 public:
  ConstraintCorrector() = default;
  ConstraintCorrector(const SparseCholesky& llt, const Eigen::MatrixXd& constraints);

  bool empty() const { return a_.rows() == 0; }
  int n_constraints() const { return static_cast<int>(a_.rows()); }
  Eigen::VectorXd apply(const Eigen::VectorXd& x) const;
  // log |A Q⁻¹ Aᵀ|
  double log_det_constraint_cov() const { return log_det_; }
  // Diagonal of W (A W)⁻¹ Wᵀ, subtracted from unconstrained variances.
  Eigen::VectorXd variance_reduction() const;
  const Eigen::MatrixXd& constraints() const { return a_; }

 private:
  Eigen::MatrixXd a_;
  Eigen::MatrixXd w_;
  Eigen::LLT<Eigen::MatrixXd> aw_;
  double log_det_ = 0.0;
};

/// Diagonal of Q⁻¹ from a computed factor.
Eigen::VectorXd marginal_variances(const SparseCholesky& llt);

/// sigma^2 (kappa d) K_1(kappa d); equals sigma^2 at d = 0.
double matern_covariance(double distance, const MaternParams& params);
Eigen::MatrixXd dense_matern_cov(const std::vector<Point>& points, const MaternParams& params);

void write_matrix_market(const SparseMatrix& m, const std::string& path);

}  // namespace blockagg
