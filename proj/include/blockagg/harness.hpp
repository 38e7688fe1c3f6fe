#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

#include "blockagg/fit.hpp"
#include "blockagg/geometry.hpp"
#include "blockagg/latent_model.hpp"
#include "blockagg/mrf_effects.hpp"
#include "blockagg/prediction.hpp"
#include "blockagg/scoring.hpp"

namespace blockagg {

struct ScenarioConfig {
  std::string name;  // derived from the factors when empty
  Likelihood family = Likelihood::gaussian;
  double sampling = 1.0;
  double range = 0.4;
  double field_variance = 2.0;
  std::vector<double> beta{10.0, 1.5};
  double noise_variance = 1.0;  // Gaussian only
  double covariate_lo = 0.0;
  double covariate_hi = 20.0;
  WeightScheme::Kind weights = WeightScheme::Kind::equal;
  bool random_mask = false;

  static ScenarioConfig gaussian_default();
  static ScenarioConfig poisson_default();
  std::string label() const;
  void validate() const;
};

/// All factor combinations of the simulation study for one family.
std::vector<ScenarioConfig> table1_scenarios(Likelihood family);

struct StudyGeometry {
  int blocks_per_side = 10;
  int cells_per_block_side = 5;
  double mesh_inner_edge = 0.05;
  double mesh_extension = 0.4;
  double mesh_outer_edge = 0.4;
};

/// Immutable geometry shared by every job of a run.
struct Geometry {
  StudyGeometry spec;
  Partition partition;
  CellGrid base_grid;  // intercept column only
  Mesh mesh;
  std::shared_ptr<const SpdeOperators> spde;
  Projector cell_projector;
  AdjacencyGraph adjacency;

  static std::shared_ptr<const Geometry> build(const StudyGeometry& spec);
};

struct Truth {
  std::vector<double> beta;
  Eigen::VectorXd field_nodes;
  Eigen::VectorXd cell_eta;
  Eigen::VectorXd cell_mu;
  Eigen::VectorXd block_mu;
};

struct Dataset {
  Likelihood family = Likelihood::gaussian;
  CellGrid grid;
  Eigen::VectorXd weights;
  Eigen::VectorXd y;            // every block; scored even where unobserved
  std::vector<bool> observed;
  std::optional<Truth> truth;

  std::vector<int> observed_blocks() const;
  Eigen::VectorXd y_observed() const;
};

/// Observed-block mask with exactly ceil(prop * n) blocks. The fixed
/// layout keeps the blocks with the smallest ((row + 2 col) mod 10) / 10,
/// ties by block index; the random layout samples without replacement.
std::vector<bool> sampling_mask(int blocks_per_side, double prop, bool random, std::uint64_t seed);

Dataset generate_dataset(const ScenarioConfig& cfg, const Geometry& geo, std::uint64_t seed);

struct MethodFit {
  std::unique_ptr<LatentModel> model;
  FitResult fit;
};

ModelInputs model_inputs(const Dataset& data, const Geometry& geo, const PriorBundle& priors,
                         std::vector<int> observed);

MethodFit fit_method(Method method, const Dataset& data, const Geometry& geo, const PriorBundle& priors,
                     const FitControls& controls);

/// Scores of one fitted method on a synthetic dataset, appended to `out`.
void score_fit(const std::string& scenario, int replicate, const MethodFit& mf, const Dataset& data,
               const PredictionControls& pc, ScoreReport& out);

struct RunConfig {
  std::uint64_t seed = 1;
  int replicates = 1;
  int threads = 1;
  std::vector<Method> methods{Method::block_aggregation, Method::centroids, Method::mrf};
  std::vector<ScenarioConfig> scenarios;
  StudyGeometry geometry;
  FitControls fit;
  int n_samples = 1000;
  PriorBundle gaussian_priors = default_priors(Likelihood::gaussian);
  PriorBundle poisson_priors = default_priors(Likelihood::poisson);

  const PriorBundle& priors_for(Likelihood family) const;
};

/// Parses the JSON run configuration; unknown keys are errors. Commands
/// working on a single dataset pass require_scenarios = false.
RunConfig parse_run_config(const nlohmann::json& j, bool require_scenarios = true);
RunConfig load_run_config(const std::string& path, bool require_scenarios = true);

struct JobFailure {
  std::string scenario;
  int replicate = 0;
  std::string method;
  std::string error;
};

struct RunMatrixResult {
  ScoreReport scores;
  std::vector<JobFailure> failures;
  int jobs = 0;
};

/// Rows of one finished job, delivered in job order.
using RowSink = std::function<void(const std::vector<ScoreRow>&)>;

/// Every (scenario, replicate) job simulates one dataset and fits each
/// method to it. Jobs run in parallel; results reach `sink` in job order.
/// Seeds derive from (root seed, scenario index, replicate, stream).
RunMatrixResult run_matrix(const RunConfig& cfg, const RowSink& sink = {});

/// run_matrix writing dir/scores.csv as jobs finish (flushed per job) and
/// dir/failures.csv at the end.
RunMatrixResult run_matrix_to_files(const RunConfig& cfg, const std::string& dir);

// Dataset files: grid.json, cells.csv, observations.csv, mesh.json and,
// for synthetic data, truth.csv and truth_blocks.csv.
void write_dataset(const Dataset& data, const Geometry& geo, const std::string& dir);
Dataset read_dataset(const std::string& dir, StudyGeometry* geometry_out = nullptr);

/// Target partition from a CSV of (cell, target) pairs covering every cell;
/// target ids may be any integers.
Partition read_membership(const std::string& path, const CellGrid& grid);

// Rows are labelled 0..n-1 unless `ids` is given.
void write_block_predictions(const BlockPredictions& p, const std::string& path,
                             const std::vector<int>& ids = {});
void write_cell_predictions(const std::vector<PredictiveSummary>& p, const CellGrid& grid, const std::string& path);

}  // namespace blockagg
