#include "blockagg/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace blockagg {

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

double log_sum_exp(const std::vector<double>& v) {
  double top = -std::numeric_limits<double>::infinity();
  for (double x : v) top = std::max(top, x);
  if (!std::isfinite(top)) return top;
  double s = 0.0;
  for (double x : v) s += std::exp(x - top);
  return top + std::log(s);
}

}  // namespace

void PredictiveSummary::validate() const {
  if (!(variance >= 0)) throw std::invalid_argument("predictive variance must be >= 0");
  if (q025 > q975) throw std::invalid_argument("predictive percentiles out of order");
  if (density == Density::normal_mixture && sample_variances.size() != samples.size())
    throw std::invalid_argument("normal mixture needs one variance per sample");
}

double ds_score(double y, const PredictiveSummary& p) {
  if (!(p.variance > 0)) throw std::invalid_argument("ds_score: predictive variance must be > 0");
  const double r = y - p.mean;
  return r * r / p.variance + std::log(p.variance);
}

double neg_log_score(double y, const PredictiveSummary& p, bool* zero_mass) {
  if (zero_mass) *zero_mass = false;
  std::vector<double> terms;
  switch (p.density) {
    case PredictiveSummary::Density::normal: {
      if (!(p.variance > 0)) throw std::invalid_argument("neg_log_score: predictive variance must be > 0");
      const double r = y - p.mean;
      return 0.5 * (kLog2Pi + std::log(p.variance)) + 0.5 * r * r / p.variance;
    }
    case PredictiveSummary::Density::normal_mixture:
      if (p.samples.empty()) throw std::invalid_argument("neg_log_score: mixture without samples");
      for (size_t s = 0; s < p.samples.size(); ++s) {
        const double v = p.sample_variances[s], r = y - p.samples[s];
        terms.push_back(-0.5 * (kLog2Pi + std::log(v)) - 0.5 * r * r / v);
      }
      break;
    case PredictiveSummary::Density::poisson_mixture:
      if (p.samples.empty()) throw std::invalid_argument("neg_log_score: mixture without samples");
      if (y < 0 || y != std::floor(y)) throw std::invalid_argument("neg_log_score: Poisson count expected");
      for (double mu : p.samples) {
        if (mu > 0)
          terms.push_back(y * std::log(mu) - mu - std::lgamma(y + 1.0));
        else
          terms.push_back(y == 0 ? 0.0 : -std::numeric_limits<double>::infinity());
      }
      break;
  }
  const double lse = log_sum_exp(terms) - std::log(static_cast<double>(terms.size()));
  if (!std::isfinite(lse)) {
    if (zero_mass) *zero_mass = true;
    return std::numeric_limits<double>::infinity();
  }
  return -lse;
}

double rmse(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw std::invalid_argument("rmse: length mismatch");
  if (a.size() == 0) throw std::invalid_argument("rmse: empty input");
  return std::sqrt((a - b).squaredNorm() / static_cast<double>(a.size()));
}

double cell_rmse(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const std::vector<int>& block_of_cell,
                 int n_blocks) {
  if (a.size() != b.size() || a.size() != static_cast<int>(block_of_cell.size()))
    throw std::invalid_argument("cell_rmse: length mismatch");
  std::vector<double> sq(n_blocks, 0.0);
  std::vector<int> count(n_blocks, 0);
  for (int c = 0; c < a.size(); ++c) {
    const double d = a[c] - b[c];
    sq[block_of_cell[c]] += d * d;
    ++count[block_of_cell[c]];
  }
  double tot = 0.0;
  int used = 0;
  for (int i = 0; i < n_blocks; ++i) {
    if (count[i] == 0) continue;
    tot += std::sqrt(sq[i] / count[i]);
    ++used;
  }
  if (used == 0) throw std::invalid_argument("cell_rmse: no cells");
  return tot / used;
}

double relative_bias(double estimate, double truth) {
  if (truth == 0.0) throw std::invalid_argument("relative_bias: truth must be nonzero");
  return std::abs((estimate - truth) / truth) * 100.0;
}

std::vector<double> coverage(const std::vector<std::vector<Interval>>& intervals,
                             const std::vector<std::vector<double>>& truths) {
  if (intervals.empty()) throw std::invalid_argument("coverage: at least one replicate is required");
  if (intervals.size() != truths.size()) throw std::invalid_argument("coverage: replicate count mismatch");
  const size_t n = intervals.front().size();
  std::vector<double> hits(n, 0.0);
  for (size_t r = 0; r < intervals.size(); ++r) {
    if (intervals[r].size() != n || truths[r].size() != n)
      throw std::invalid_argument("coverage: unit count differs between replicates");
    for (size_t i = 0; i < n; ++i) {
      const Interval& iv = intervals[r][i];
      if (iv.lo > iv.hi) throw std::invalid_argument("coverage: inverted interval");
      if (iv.lo <= truths[r][i] && truths[r][i] <= iv.hi) hits[i] += 1.0;
    }
  }
  for (double& h : hits) h /= static_cast<double>(intervals.size());
  return hits;
}

void ScoreReport::add(const std::string& scenario, int replicate, const std::string& method,
                      const std::string& unit, const std::string& score, double value) {
  rows.push_back({scenario, replicate, method, unit, score, value});
}

double ScoreReport::mean_of(const std::string& scenario, int replicate, const std::string& method,
                            const std::string& score) const {
  double tot = 0.0;
  int n = 0;
  for (const auto& r : rows)
    if (r.scenario == scenario && r.replicate == replicate && r.method == method && r.score == score &&
        r.unit != "all") {
      tot += r.value;
      ++n;
    }
  if (n == 0) throw std::invalid_argument("no per-unit rows for score " + score);
  return tot / n;
}

std::string score_csv_header() { return "scenario,replicate,method,unit,score,value"; }

std::string format_score_row(const ScoreRow& r) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", r.value);
  return r.scenario + "," + std::to_string(r.replicate) + "," + r.method + "," + r.unit + "," + r.score + "," + buf;
}

void ScoreReport::write_csv(std::ostream& os, bool header) const {
  if (header) os << score_csv_header() << '\n';
  for (const auto& r : rows) os << format_score_row(r) << '\n';
}

}  // namespace blockagg
