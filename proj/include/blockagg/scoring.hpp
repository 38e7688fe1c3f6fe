#pragma once

#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace blockagg {

/// Predictive distribution of one unit.
///
/// `density` picks the log-score route: a moment-matched normal, a normal
/// mixture over (samples[s], sample_variances[s]), or a Poisson mixture over
/// the retained means in `samples`.
struct PredictiveSummary {
  enum class Density { normal, normal_mixture, poisson_mixture };
  double mean = 0.0;
  double variance = 0.0;
  double q025 = 0.0;
  double q975 = 0.0;
  Density density = Density::normal;
  std::vector<double> samples;
  std::vector<double> sample_variances;

  void validate() const;
};

/// (y - E[Y])^2 / Var[Y] + log Var[Y].
double ds_score(double y, const PredictiveSummary& pred);

/// -log p(y) under the summary's density. A mixture with no mass at y
/// returns +inf and sets *zero_mass when given.
double neg_log_score(double y, const PredictiveSummary& pred, bool* zero_mass = nullptr);

double rmse(const Eigen::VectorXd& estimates, const Eigen::VectorXd& truths);

/// Mean over blocks of the within-block RMSE of cell values.
double cell_rmse(const Eigen::VectorXd& estimates, const Eigen::VectorXd& truths,
                 const std::vector<int>& block_of_cell, int n_blocks);

/// |(estimate - truth) / truth| * 100.
double relative_bias(double estimate, double truth);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// intervals[r][i] is replicate r's interval for unit i; truths[r][i] the
/// matching truth. Returns the per-unit fraction of replicates covering.
std::vector<double> coverage(const std::vector<std::vector<Interval>>& intervals,
                             const std::vector<std::vector<double>>& truths);

struct ScoreRow {
  std::string scenario;
  int replicate = 0;
  std::string method;
  std::string unit;  // block index, parameter name, or "all"
  std::string score;
  double value = 0.0;
};

/// Flat score table; aggregate rows use unit "all".
struct ScoreReport {
  std::vector<ScoreRow> rows;

  void add(const std::string& scenario, int replicate, const std::string& method, const std::string& unit,
           const std::string& score, double value);
  // Mean of the per-unit rows of one score (unit != "all").
  double mean_of(const std::string& scenario, int replicate, const std::string& method,
                 const std::string& score) const;
  void write_csv(std::ostream& os, bool header = true) const;
};

std::string score_csv_header();
std::string format_score_row(const ScoreRow& row);

}  // namespace blockagg
