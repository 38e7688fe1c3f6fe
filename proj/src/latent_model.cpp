#include "blockagg/latent_model.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include <Eigen/Dense>

namespace blockagg {

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

void require(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

void check_inputs(const ModelInputs& in) {
  require(in.grid && in.partition, "model inputs need a grid and a partition");
  require(in.weights.size() == in.grid->n_cells(), "weights must align with grid cells");
  require(!in.observed_blocks.empty(), "at least one observed block is required");
  for (int b : in.observed_blocks)
    require(b >= 0 && b < in.partition->n_blocks(), "observed block index out of range");
  require(static_cast<int>(in.priors.fixed_variance.size()) == in.grid->n_covariates(),
          "one fixed-effect prior per covariate column is required");
  in.priors.validate();
}

// Adds the fixed-effect block (diagonal) into triplets.
void fixed_triplets(const PriorBundle& priors, int p, std::vector<Eigen::Triplet<double>>& trip,
                    double& log_det, int& proper) {
  for (int k = 0; k < p; ++k) {
    double prec = priors.fixed_precision(k);
    trip.emplace_back(k, k, prec);
    if (prec > 0) {
      log_det += std::log(prec);
      ++proper;
    }
  }
}

}  // namespace

const char* to_string(Method m) {
  switch (m) {
    case Method::block_aggregation: return "block_aggregation";
    case Method::centroids: return "centroids";
    case Method::mrf: return "mrf";
  }
  return "?";
}

Method method_from_string(const std::string& name) {
  for (auto m : {Method::block_aggregation, Method::centroids, Method::mrf})
    if (name == to_string(m)) return m;
  throw std::invalid_argument("unknown method '" + name + "' (expected block_aggregation, centroids or mrf)");
}

double LatentModel::noise_variance(const Eigen::VectorXd& theta) const {
  double sd = layout_.natural(theta, HyperKind::noise_sd);
  return sd * sd;
}

double LatentModel::log_hyper_prior(const Eigen::VectorXd& theta) const {
  return log_prior(theta, layout_, priors_);
}

void LatentModel::set_fixed_prior(PriorTerms& terms, int dim) const {
  terms.mean = Eigen::VectorXd::Zero(dim);
  for (int k = 0; k < n_fixed_; ++k) terms.mean[k] = priors_.fixed_mean[k];
}

Eigen::VectorXd LatentModel::initial_state(const Eigen::VectorXd& y) const {
  Eigen::VectorXd u = Eigen::VectorXd::Zero(dim());
  if (likelihood_ != Likelihood::poisson) return u;
  if (y.size() != observed_.n_blocks()) throw std::invalid_argument("initial_state: y has wrong length");
  // At u = 0 the linearisation rows hold exposure-weighted covariate means
  // and delta holds the log exposure.
  Linearisation lin = observed_.linearise(u);
  Eigen::MatrixXd x = Eigen::MatrixXd(lin.gradient).leftCols(n_fixed_);
  Eigen::VectorXd t = (y.array() + 0.5).log().matrix() - lin.delta;
  Eigen::VectorXd w = (y.array() + 0.5).matrix();
  Eigen::MatrixXd xtwx = x.transpose() * w.asDiagonal() * x;
  Eigen::VectorXd xtwt = x.transpose() * w.asDiagonal() * t;
  // Light ridge keeps the solve defined with collinear block means.
  xtwx.diagonal().array() += 1e-8 * (1.0 + xtwx.diagonal().array().abs());
  u.head(n_fixed_) = xtwx.ldlt().solve(xtwt);
  if (!u.allFinite()) u.setZero();
  return u;
}

Eigen::MatrixXd block_mean_covariates(const CellGrid& grid, const Eigen::VectorXd& weights) {
  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(grid.n_blocks(), grid.n_covariates());
  Eigen::VectorXd tot = Eigen::VectorXd::Zero(grid.n_blocks());
  for (int c = 0; c < grid.n_cells(); ++c) {
    double w = grid.log_offset ? weights[c] * std::exp((*grid.log_offset)[c]) : 1.0;
    if (grid.log_offset && w <= 0) continue;
    z.row(grid.block_of_cell[c]) += w * grid.covariates.row(c);
    tot[grid.block_of_cell[c]] += w;
  }
  for (int b = 0; b < grid.n_blocks(); ++b) {
    if (!(tot[b] > 0)) throw std::invalid_argument("block " + std::to_string(b) + " has no weighted cells");
    z.row(b) /= tot[b];
  }
  return z;
}

Eigen::VectorXd block_log_exposure(const CellGrid& grid, const Eigen::VectorXd& weights) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(grid.n_blocks());
  if (!grid.log_offset) return out;
  Eigen::VectorXd tot = Eigen::VectorXd::Zero(grid.n_blocks());
  for (int c = 0; c < grid.n_cells(); ++c)
    tot[grid.block_of_cell[c]] += weights[c] * std::exp((*grid.log_offset)[c]);
  return tot.array().log().matrix();
}

namespace {

Eigen::VectorXd block_weight_totals(const CellGrid& grid, const Eigen::VectorXd& weights) {
  Eigen::VectorXd tot = Eigen::VectorXd::Zero(grid.n_blocks());
  for (int c = 0; c < grid.n_cells(); ++c) tot[grid.block_of_cell[c]] += weights[c];
  return tot;
}

Eigen::VectorXd cell_offsets(const CellGrid& grid) {
  return grid.log_offset ? *grid.log_offset : Eigen::VectorXd::Zero(grid.n_cells());
}

// ---------------------------------------------------------------------------

class MaternModel final : public LatentModel {
 public:
  MaternModel(Method method, const ModelInputs& in) {
    check_inputs(in);
    require(in.mesh && in.spde, "Matérn models need a mesh and SPDE operators");
    const CellGrid& grid = *in.grid;
    method_ = method;
    likelihood_ = in.likelihood;
    n_fixed_ = grid.n_covariates();
    n_blocks_ = grid.n_blocks();
    fixed_names_ = grid.covariate_names;
    priors_ = in.priors;
    layout_.kinds = {HyperKind::range, HyperKind::field_sd};
    if (likelihood_ == Likelihood::gaussian) layout_.kinds.insert(layout_.kinds.begin(), HyperKind::noise_sd);
    observed_blocks_ = in.observed_blocks;
    spde_ = in.spde;
    block_of_cell_ = grid.block_of_cell;
    weight_total_ = block_weight_totals(grid, in.weights);

    Projector cell_proj = project(*in.mesh, grid.cells);
    cell_design_ = cell_design(grid.covariates, cell_proj.matrix);
    cell_offset_ = cell_offsets(grid);
    if (likelihood_ == Likelihood::gaussian && grid.log_offset)
      throw std::invalid_argument("log-offsets require the Poisson family");

    if (method == Method::block_aggregation) {
      all_blocks_ = BlockPredictor(cell_design_, cell_offset_, grid.block_of_cell, n_blocks_, in.weights,
                                   likelihood_);
      spread_uniform_ = false;
    } else {
      // One pseudo-cell per block at its centroid.
      Projector cen = project(*in.mesh, in.partition->centroids);
      Eigen::MatrixXd zbar = block_mean_covariates(grid, in.weights);
      SparseRowMatrix design = cell_design(zbar, cen.matrix);
      Eigen::VectorXd w = likelihood_ == Likelihood::gaussian ? weight_total_
                                                              : Eigen::VectorXd::Ones(n_blocks_);
      std::vector<int> ids(n_blocks_);
      for (int b = 0; b < n_blocks_; ++b) ids[b] = b;
      all_blocks_ = BlockPredictor(design, block_log_exposure(grid, in.weights), ids, n_blocks_, w,
                                   likelihood_);
      spread_uniform_ = likelihood_ == Likelihood::poisson;
    }
    observed_ = all_blocks_.restrict_to(observed_blocks_);
    constraints_.resize(0, dim());
  }

  PriorTerms prior(const Eigen::VectorXd& theta) const override {
    MaternParams mp{layout_.natural(theta, HyperKind::range), layout_.natural(theta, HyperKind::field_sd)};
    SparseMatrix qw = matern_precision_matrix(*spde_, mp);
    SparsePrecision field(qw);
    std::vector<Eigen::Triplet<double>> trip;
    double log_det = 0.0;
    int proper = 0;
    fixed_triplets(priors_, n_fixed_, trip, log_det, proper);
    for (int k = 0; k < qw.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(qw, k); it; ++it)
        trip.emplace_back(n_fixed_ + it.row(), n_fixed_ + it.col(), it.value());
    PriorTerms t;
    t.precision.resize(dim(), dim());
    t.precision.setFromTriplets(trip.begin(), trip.end());
    t.precision.makeCompressed();
    set_fixed_prior(t, dim());
    log_det += field.log_determinant();
    proper += field.size();
    t.log_norm = -0.5 * proper * kLog2Pi + 0.5 * log_det;
    return t;
  }

  void predictive_draw(const Eigen::VectorXd& u, const Eigen::VectorXd&, std::mt19937_64&,
                       PredictiveDraw& out) const override {
    out.block = all_blocks_.blocks(u);
    if (spread_uniform_) {
      out.cell_mu.resize(static_cast<int>(block_of_cell_.size()));
      for (int c = 0; c < out.cell_mu.size(); ++c) {
        int b = block_of_cell_[c];
        out.cell_mu[c] = std::exp(out.block[b]) / weight_total_[b];
      }
      return;
    }
    Eigen::VectorXd eta;
    kernels::cell_predictor(cell_design_, cell_offset_, u, eta, kernels::Exec::parallel);
    out.cell_mu = likelihood_ == Likelihood::poisson ? eta.array().exp().matrix() : eta;
  }

 private:
  std::shared_ptr<const SpdeOperators> spde_;
  BlockPredictor all_blocks_;
  SparseRowMatrix cell_design_;
  Eigen::VectorXd cell_offset_;
  std::vector<int> block_of_cell_;
  Eigen::VectorXd weight_total_;
  bool spread_uniform_ = false;
};

// ---------------------------------------------------------------------------

// Latent layout (beta, V', U') with V' = sqrt((1-phi)/tau) V and
// U' = sqrt(phi/tau) U, so the design is fixed and (tau, phi) only scale the
// prior precisions of the two effect blocks.
class MrfModel final : public LatentModel {
 public:
  explicit MrfModel(const ModelInputs& in) {
    check_inputs(in);
    const CellGrid& grid = *in.grid;
    method_ = Method::mrf;
    likelihood_ = in.likelihood;
    n_fixed_ = grid.n_covariates();
    n_blocks_ = grid.n_blocks();
    fixed_names_ = grid.covariate_names;
    priors_ = in.priors;
    layout_.kinds = {HyperKind::mrf_precision, HyperKind::mixing};
    if (likelihood_ == Likelihood::gaussian) layout_.kinds.insert(layout_.kinds.begin(), HyperKind::noise_sd);
    observed_blocks_ = in.observed_blocks;
    block_of_cell_ = grid.block_of_cell;
    covariates_ = grid.covariates;
    weight_total_ = block_weight_totals(grid, in.weights);
    zbar_ = block_mean_covariates(grid, in.weights);
    exposure_ = block_log_exposure(grid, in.weights);
    if (likelihood_ == Likelihood::gaussian && grid.log_offset)
      throw std::invalid_argument("log-offsets require the Poisson family");

    AdjacencyGraph full = in.adjacency ? *in.adjacency : adjacency_from_partition(*in.partition, grid);
    require(full.n_nodes() == n_blocks_, "adjacency graph size must equal the block count");
    graph_ = induced_subgraph(full, observed_blocks_);
    structure_ = scaled_besag(graph_);
    n_obs_ = graph_.n_nodes();

    obs_index_.assign(n_blocks_, -1);
    for (int k = 0; k < n_obs_; ++k) obs_index_[observed_blocks_[k]] = k;

    // Observed pseudo-cells: [zbar_i, e_k, e_k].
    const int d = n_fixed_ + 2 * n_obs_;
    SparseRowMatrix design(n_obs_, d);
    design.reserve(Eigen::VectorXi::Constant(n_obs_, n_fixed_ + 2));
    Eigen::VectorXd off(n_obs_), w(n_obs_);
    std::vector<int> ids(n_obs_);
    for (int k = 0; k < n_obs_; ++k) {
      int b = observed_blocks_[k];
      for (int j = 0; j < n_fixed_; ++j)
        if (zbar_(b, j) != 0.0) design.insert(k, j) = zbar_(b, j);
      design.insert(k, n_fixed_ + k) = 1.0;
      design.insert(k, n_fixed_ + n_obs_ + k) = 1.0;
      off[k] = exposure_[b];
      w[k] = likelihood_ == Likelihood::gaussian ? weight_total_[b] : 1.0;
      ids[k] = k;
    }
    design.makeCompressed();
    observed_ = BlockPredictor(design, off, ids, n_obs_, w, likelihood_);

    // U block of the augmented (theta-free) structure and its constants.
    SparseMatrix full_q = bym2_latent_precision(structure_);
    u_structure_ = full_q.bottomRightCorner(n_obs_, n_obs_);
    SparsePrecision uq(u_structure_);
    log_det_u_ = uq.log_determinant();
    Eigen::MatrixXd a_full = bym2_constraints(structure_);
    n_constraints_ = static_cast<int>(a_full.rows());
    constraints_ = Eigen::MatrixXd::Zero(n_constraints_, d);
    if (n_constraints_ > 0) {
      Eigen::MatrixXd au = a_full.rightCols(n_obs_);
      constraints_.rightCols(n_obs_) = au;
      ConstraintCorrector c(uq.factor(), au);
      log_det_constraint_ = c.log_det_constraint_cov();
    }
  }

  PriorTerms prior(const Eigen::VectorXd& theta) const override {
    const double tau = layout_.natural(theta, HyperKind::mrf_precision);
    const double phi = layout_.natural(theta, HyperKind::mixing);
    const double pv = tau / (1.0 - phi), pu = tau / phi;
    std::vector<Eigen::Triplet<double>> trip;
    double log_det = 0.0;
    int proper = 0;
    fixed_triplets(priors_, n_fixed_, trip, log_det, proper);
    for (int k = 0; k < n_obs_; ++k) trip.emplace_back(n_fixed_ + k, n_fixed_ + k, pv);
    for (int k = 0; k < u_structure_.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(u_structure_, k); it; ++it)
        trip.emplace_back(n_fixed_ + n_obs_ + it.row(), n_fixed_ + n_obs_ + it.col(), pu * it.value());
    PriorTerms t;
    t.precision.resize(dim(), dim());
    t.precision.setFromTriplets(trip.begin(), trip.end());
    t.precision.makeCompressed();
    set_fixed_prior(t, dim());
    log_det += n_obs_ * std::log(pv) + n_obs_ * std::log(pu) + log_det_u_;
    proper += 2 * n_obs_;
    // Constrained density: add (k/2) log 2 pi + 1/2 log |A Q^-1 A'|, where
    // the U block scales the constraint covariance by 1/pu.
    const double log_det_a = log_det_constraint_ - n_constraints_ * std::log(pu);
    t.log_norm = -0.5 * (proper - n_constraints_) * kLog2Pi + 0.5 * log_det + 0.5 * log_det_a;
    return t;
  }

  void predictive_draw(const Eigen::VectorXd& u, const Eigen::VectorXd& theta, std::mt19937_64& rng,
                       PredictiveDraw& out) const override {
    const double tau = layout_.natural(theta, HyperKind::mrf_precision);
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(tau));
    Eigen::VectorXd beta = u.head(n_fixed_);
    Eigen::VectorXd effect(n_blocks_);
    for (int b = 0; b < n_blocks_; ++b) {
      int k = obs_index_[b];
      effect[b] = k >= 0 ? u[n_fixed_ + k] + u[n_fixed_ + n_obs_ + k] : normal(rng);
    }
    Eigen::VectorXd lin = zbar_ * beta + effect + exposure_;
    out.block = likelihood_ == Likelihood::gaussian ? Eigen::VectorXd(weight_total_.cwiseProduct(lin)) : lin;
    const int nc = static_cast<int>(block_of_cell_.size());
    out.cell_mu.resize(nc);
    if (likelihood_ == Likelihood::gaussian) {
      Eigen::VectorXd zb = covariates_ * beta;
      for (int c = 0; c < nc; ++c) out.cell_mu[c] = zb[c] + effect[block_of_cell_[c]];
    } else {
      for (int c = 0; c < nc; ++c) {
        int b = block_of_cell_[c];
        out.cell_mu[c] = std::exp(lin[b]) / weight_total_[b];
      }
    }
  }

  const AdjacencyGraph& graph() const { return graph_; }

 private:
  AdjacencyGraph graph_;
  BesagStructure structure_;
  int n_obs_ = 0;
  int n_constraints_ = 0;
  std::vector<int> obs_index_;
  std::vector<int> block_of_cell_;
  Eigen::MatrixXd covariates_;
  Eigen::MatrixXd zbar_;
  Eigen::VectorXd exposure_;
  Eigen::VectorXd weight_total_;
  SparseMatrix u_structure_;
  double log_det_u_ = 0.0;
  double log_det_constraint_ = 0.0;
};

}  // namespace

std::unique_ptr<LatentModel> make_block_aggregation_model(const ModelInputs& in) {
  return std::make_unique<MaternModel>(Method::block_aggregation, in);
}

std::unique_ptr<LatentModel> make_centroid_model(const ModelInputs& in) {
  return std::make_unique<MaternModel>(Method::centroids, in);
}

std::unique_ptr<LatentModel> make_mrf_model(const ModelInputs& in) { return std::make_unique<MrfModel>(in); }

std::unique_ptr<LatentModel> make_model(Method method, const ModelInputs& in) {
  switch (method) {
    case Method::block_aggregation: return make_block_aggregation_model(in);
    case Method::centroids: return make_centroid_model(in);
    case Method::mrf: return make_mrf_model(in);
  }
  throw std::invalid_argument("unknown method");
}

}  // namespace blockagg
