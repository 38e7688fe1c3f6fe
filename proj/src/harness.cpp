#include "blockagg/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include <omp.h>

#include "blockagg/rng.hpp"

namespace blockagg {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// scenarios

ScenarioConfig ScenarioConfig::gaussian_default() { return {}; }

ScenarioConfig ScenarioConfig::poisson_default() {
  ScenarioConfig c;
  c.family = Likelihood::poisson;
  c.field_variance = 0.15;
  c.beta = {-2.0, 0.15};
  c.covariate_hi = 40.0;
  c.weights = WeightScheme::Kind::unit;
  return c;
}

std::string ScenarioConfig::label() const {
  if (!name.empty()) return name;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%s_p%g_r%g_v%g", to_string(family), sampling, range, field_variance);
  return buf;
}

void ScenarioConfig::validate() const {
  if (!(sampling > 0 && sampling <= 1)) throw std::invalid_argument("scenario: sampling must be in (0, 1]");
  if (!(range > 0)) throw std::invalid_argument("scenario: range must be > 0");
  if (!(field_variance >= 0)) throw std::invalid_argument("scenario: field variance must be >= 0");
  if (beta.size() != 2) throw std::invalid_argument("scenario: beta needs an intercept and one slope");
  if (!(noise_variance >= 0)) throw std::invalid_argument("scenario: noise variance must be >= 0");
  if (!(covariate_hi > covariate_lo)) throw std::invalid_argument("scenario: empty covariate range");
  if (weights == WeightScheme::Kind::custom)
    throw std::invalid_argument("scenario: custom weights are only available for files");
}

std::vector<ScenarioConfig> table1_scenarios(Likelihood family) {
  std::vector<ScenarioConfig> out;
  const std::vector<double> variances =
      family == Likelihood::gaussian ? std::vector<double>{2.0, 4.0} : std::vector<double>{0.05, 0.15};
  for (double p : {0.3, 0.6, 1.0})
    for (double r : {0.05, 0.1, 0.4})
      for (double v : variances) {
        ScenarioConfig c = family == Likelihood::gaussian ? ScenarioConfig::gaussian_default()
                                                          : ScenarioConfig::poisson_default();
        c.sampling = p;
        c.range = r;
        c.field_variance = v;
        out.push_back(c);
      }
  return out;
}

// ---------------------------------------------------------------------------
// geometry and data

std::shared_ptr<const Geometry> Geometry::build(const StudyGeometry& spec) {
  auto g = std::make_shared<Geometry>();
  g->spec = spec;
  auto pg = build_unit_square_partition(spec.blocks_per_side, spec.cells_per_block_side);
  g->partition = std::move(pg.first);
  g->base_grid = std::move(pg.second);
  g->mesh = build_mesh(unit_square_polygon(), spec.mesh_inner_edge, spec.mesh_extension, spec.mesh_outer_edge);
  g->spde = std::make_shared<SpdeOperators>(assemble_fem(g->mesh));
  g->cell_projector = project(g->mesh, g->base_grid.cells);
  g->adjacency = adjacency_from_partition(g->partition, g->base_grid);
  return g;
}

std::vector<int> Dataset::observed_blocks() const {
  std::vector<int> out;
  for (int b = 0; b < static_cast<int>(observed.size()); ++b)
    if (observed[b]) out.push_back(b);
  return out;
}

Eigen::VectorXd Dataset::y_observed() const {
  std::vector<int> ob = observed_blocks();
  Eigen::VectorXd out(static_cast<int>(ob.size()));
  for (int k = 0; k < out.size(); ++k) out[k] = y[ob[k]];
  return out;
}

std::vector<bool> sampling_mask(int side, double prop, bool random, std::uint64_t seed) {
  if (!(prop > 0 && prop <= 1)) throw std::invalid_argument("sampling proportion must be in (0, 1]");
  const int n = side * side;
  const int keep = std::min(n, static_cast<int>(std::ceil(prop * n - 1e-9)));
  std::vector<int> order(n);
  for (int b = 0; b < n; ++b) order[b] = b;
  if (random) {
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
  } else {
    auto key = [side](int b) { return ((b / side) + 2 * (b % side)) % 10; };
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return key(a) < key(b); });
  }
  std::vector<bool> mask(n, false);
  for (int k = 0; k < keep; ++k) mask[order[k]] = true;
  return mask;
}

Dataset generate_dataset(const ScenarioConfig& cfg, const Geometry& geo, std::uint64_t seed) {
  cfg.validate();
  Dataset d;
  d.family = cfg.family;
  d.grid = geo.base_grid;
  const int nc = d.grid.n_cells();

  std::mt19937_64 cov_rng(derive_seed(seed, {1}));
  std::uniform_real_distribution<double> unif(cfg.covariate_lo, cfg.covariate_hi);
  d.grid.covariates.conservativeResize(Eigen::NoChange, 2);
  for (int c = 0; c < nc; ++c) d.grid.covariates(c, 1) = unif(cov_rng);
  d.grid.covariate_names = {"intercept", "z"};
  d.weights = make_weights(d.grid, WeightScheme{cfg.weights, {}});

  Truth t;
  t.beta = cfg.beta;
  if (cfg.field_variance > 0) {
    std::mt19937_64 field_rng(derive_seed(seed, {2}));
    t.field_nodes = sample_gmrf(matern_precision(*geo.spde, {cfg.range, std::sqrt(cfg.field_variance)}), field_rng);
  } else {
    t.field_nodes = Eigen::VectorXd::Zero(geo.mesh.n_nodes());
  }
  t.cell_eta = d.grid.covariates * Eigen::Vector2d(cfg.beta[0], cfg.beta[1]) + geo.cell_projector.matrix * t.field_nodes;
  t.cell_mu = cfg.family == Likelihood::gaussian ? t.cell_eta : Eigen::VectorXd(t.cell_eta.array().exp());
  t.block_mu = Eigen::VectorXd::Zero(d.grid.n_blocks());
  for (int c = 0; c < nc; ++c) t.block_mu[d.grid.block_of_cell[c]] += d.weights[c] * t.cell_mu[c];

  std::mt19937_64 y_rng(derive_seed(seed, {3}));
  d.y.resize(d.grid.n_blocks());
  for (int b = 0; b < d.y.size(); ++b) {
    if (cfg.family == Likelihood::gaussian)
      d.y[b] = t.block_mu[b] + std::sqrt(cfg.noise_variance) * std::normal_distribution<double>(0.0, 1.0)(y_rng);
    else
      d.y[b] = static_cast<double>(std::poisson_distribution<long long>(t.block_mu[b])(y_rng));
  }
  d.observed = sampling_mask(geo.spec.blocks_per_side, cfg.sampling, cfg.random_mask, derive_seed(seed, {4}));
  d.truth = std::move(t);
  return d;
}

ModelInputs model_inputs(const Dataset& data, const Geometry& geo, const PriorBundle& priors,
                         std::vector<int> observed) {
  ModelInputs in;
  in.grid = &data.grid;
  in.partition = &geo.partition;
  in.mesh = &geo.mesh;
  in.spde = geo.spde;
  in.weights = data.weights;
  in.likelihood = data.family;
  in.priors = priors;
  in.observed_blocks = std::move(observed);
  in.adjacency = &geo.adjacency;
  return in;
}

MethodFit fit_method(Method method, const Dataset& data, const Geometry& geo, const PriorBundle& priors,
                     const FitControls& controls) {
  MethodFit mf;
  mf.model = make_model(method, model_inputs(data, geo, priors, data.observed_blocks()));
  mf.fit = fit(*mf.model, data.y_observed(), controls);
  return mf;
}

void score_fit(const std::string& scenario, int rep, const MethodFit& mf, const Dataset& data,
               const PredictionControls& pc, ScoreReport& out) {
  if (!data.truth) throw std::invalid_argument("score_fit: dataset has no ground truth");
  const Truth& t = *data.truth;
  const std::string method = to_string(mf.fit.method);
  PredictionControls c = pc;
  c.force = true;
  PosteriorDraws d = draw_posterior(*mf.model, mf.fit, c);
  BlockPredictions bp = summarise_blocks(d.block_mu, d.noise_variance, data.family, c.seed, true);
  Eigen::VectorXd cell_mean = d.cell_mu.rowwise().mean();
  const int nb = data.grid.n_blocks();
  Eigen::VectorXd block_mean(nb);
  double ds_tot = 0.0, nls_tot = 0.0, cov_tot = 0.0;
  for (int b = 0; b < nb; ++b) {
    const std::string unit = std::to_string(b);
    block_mean[b] = bp.mu[b].mean;
    double ds = ds_score(data.y[b], bp.y[b]);
    double nls = neg_log_score(data.y[b], bp.y[b]);
    double covered = (bp.mu[b].q025 <= t.block_mu[b] && t.block_mu[b] <= bp.mu[b].q975) ? 1.0 : 0.0;
    out.add(scenario, rep, method, unit, "ds", ds);
    out.add(scenario, rep, method, unit, "nls", nls);
    out.add(scenario, rep, method, unit, "covered", covered);
    ds_tot += ds;
    nls_tot += nls;
    cov_tot += covered;
  }
  out.add(scenario, rep, method, "all", "ds", ds_tot / nb);
  out.add(scenario, rep, method, "all", "nls", nls_tot / nb);
  out.add(scenario, rep, method, "all", "coverage", cov_tot / nb);
  out.add(scenario, rep, method, "all", "rmse_block", rmse(block_mean, t.block_mu));
  out.add(scenario, rep, method, "all", "rmse_cell",
          cell_rmse(cell_mean, t.cell_mu, data.grid.block_of_cell, nb));
  for (size_t k = 0; k < mf.fit.fixed.size() && k < t.beta.size(); ++k) {
    const auto& s = mf.fit.fixed[k];
    out.add(scenario, rep, method, s.name, "estimate", s.mean);
    out.add(scenario, rep, method, s.name, "relative_bias", relative_bias(s.mean, t.beta[k]));
  }
  out.add(scenario, rep, method, "all", "converged", mf.fit.converged ? 1.0 : 0.0);
  out.add(scenario, rep, method, "all", "outer_iterations", mf.fit.outer_iterations());
}

// ---------------------------------------------------------------------------
// configuration

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw std::invalid_argument("unknown key '" + it.key() + "' in " + where);
}

HyperPrior parse_hyper_prior(const json& j, const std::string& where) {
  reject_unknown(j, {"kind", "p1", "p2"}, where);
  HyperPrior p;
  p.kind = hyper_prior_kind_from_string(j.at("kind").get<std::string>());
  p.p1 = j.value("p1", 0.0);
  p.p2 = j.value("p2", 0.0);
  return p;
}

void parse_priors(const json& j, PriorBundle& b, const std::string& where) {
  reject_unknown(j, {"fixed_mean", "fixed_variance", "noise", "range", "field_sd", "mrf_precision", "mixing"}, where);
  if (j.contains("fixed_mean")) b.fixed_mean = j["fixed_mean"].get<std::vector<double>>();
  if (j.contains("fixed_variance")) {
    b.fixed_variance.clear();
    for (const auto& v : j["fixed_variance"])
      b.fixed_variance.push_back(v.is_string() && v.get<std::string>() == "inf" ? std::numeric_limits<double>::infinity()
                                                                                : v.get<double>());
  }
  if (j.contains("noise")) b.noise = parse_hyper_prior(j["noise"], where + ".noise");
  if (j.contains("range")) b.range = parse_hyper_prior(j["range"], where + ".range");
  if (j.contains("field_sd")) b.field_sd = parse_hyper_prior(j["field_sd"], where + ".field_sd");
  if (j.contains("mrf_precision")) b.mrf_precision = parse_hyper_prior(j["mrf_precision"], where + ".mrf_precision");
  if (j.contains("mixing")) b.mixing = parse_hyper_prior(j["mixing"], where + ".mixing");
  b.validate();
}

ScenarioConfig parse_scenario(const json& j, const std::string& where) {
  reject_unknown(j, {"name", "family", "sampling", "range", "variance", "beta", "noise_variance",
                     "covariate_range", "weights", "random_mask"},
                 where);
  const Likelihood fam = likelihood_from_string(j.value("family", std::string("gaussian")));
  ScenarioConfig c = fam == Likelihood::gaussian ? ScenarioConfig::gaussian_default() : ScenarioConfig::poisson_default();
  c.name = j.value("name", std::string());
  c.sampling = j.value("sampling", c.sampling);
  c.range = j.value("range", c.range);
  c.field_variance = j.value("variance", c.field_variance);
  if (j.contains("beta")) c.beta = j["beta"].get<std::vector<double>>();
  c.noise_variance = j.value("noise_variance", c.noise_variance);
  if (j.contains("covariate_range")) {
    auto r = j["covariate_range"].get<std::vector<double>>();
    if (r.size() != 2) throw std::invalid_argument(where + ".covariate_range needs two values");
    c.covariate_lo = r[0];
    c.covariate_hi = r[1];
  }
  if (j.contains("weights")) c.weights = weight_kind_from_string(j["weights"].get<std::string>());
  c.random_mask = j.value("random_mask", c.random_mask);
  c.validate();
  return c;
}

}  // namespace

const PriorBundle& RunConfig::priors_for(Likelihood family) const {
  return family == Likelihood::gaussian ? gaussian_priors : poisson_priors;
}

RunConfig parse_run_config(const json& j, bool require_scenarios) {
  reject_unknown(j, {"seed", "replicates", "threads", "methods", "scenarios", "table1", "random_mask", "geometry",
                     "fit", "n_samples", "priors"},
                 "config");
  RunConfig c;
  c.seed = j.value("seed", c.seed);
  c.replicates = j.value("replicates", c.replicates);
  c.threads = j.value("threads", c.threads);
  c.n_samples = j.value("n_samples", c.n_samples);
  if (c.replicates < 1) throw std::invalid_argument("config: replicates must be >= 1");
  if (c.threads < 1) throw std::invalid_argument("config: threads must be >= 1");
  if (c.n_samples < 2) throw std::invalid_argument("config: n_samples must be >= 2");
  if (j.contains("methods")) {
    c.methods.clear();
    for (const auto& m : j["methods"]) c.methods.push_back(method_from_string(m.get<std::string>()));
    if (c.methods.empty()) throw std::invalid_argument("config: methods must not be empty");
  }
  if (j.contains("geometry")) {
    const json& g = j["geometry"];
    reject_unknown(g, {"blocks_per_side", "cells_per_block_side", "mesh_inner_edge", "mesh_extension",
                       "mesh_outer_edge"},
                   "config.geometry");
    c.geometry.blocks_per_side = g.value("blocks_per_side", c.geometry.blocks_per_side);
    c.geometry.cells_per_block_side = g.value("cells_per_block_side", c.geometry.cells_per_block_side);
    c.geometry.mesh_inner_edge = g.value("mesh_inner_edge", c.geometry.mesh_inner_edge);
    c.geometry.mesh_extension = g.value("mesh_extension", c.geometry.mesh_extension);
    c.geometry.mesh_outer_edge = g.value("mesh_outer_edge", c.geometry.mesh_outer_edge);
  }
  if (j.contains("fit")) {
    const json& f = j["fit"];
    reject_unknown(f, {"strategy", "max_outer", "change_tolerance", "alpha_tolerance", "alpha_max",
                       "max_inner", "min_weight"},
                   "config.fit");
    if (f.contains("strategy")) c.fit.explore.strategy = explore_strategy_from_string(f["strategy"].get<std::string>());
    c.fit.max_outer = f.value("max_outer", c.fit.max_outer);
    c.fit.change_tolerance = f.value("change_tolerance", c.fit.change_tolerance);
    c.fit.alpha_tolerance = f.value("alpha_tolerance", c.fit.alpha_tolerance);
    c.fit.alpha_max = f.value("alpha_max", c.fit.alpha_max);
    c.fit.inner.max_iter = f.value("max_inner", c.fit.inner.max_iter);
    c.fit.min_weight = f.value("min_weight", c.fit.min_weight);
  }
  if (j.contains("priors")) {
    reject_unknown(j["priors"], {"gaussian", "poisson"}, "config.priors");
    if (j["priors"].contains("gaussian")) parse_priors(j["priors"]["gaussian"], c.gaussian_priors, "config.priors.gaussian");
    if (j["priors"].contains("poisson")) parse_priors(j["priors"]["poisson"], c.poisson_priors, "config.priors.poisson");
  }
  if (j.contains("table1"))
    for (const auto& fam : j["table1"]) {
      auto s = table1_scenarios(likelihood_from_string(fam.get<std::string>()));
      c.scenarios.insert(c.scenarios.end(), s.begin(), s.end());
    }
  if (j.contains("scenarios")) {
    int k = 0;
    for (const auto& s : j["scenarios"]) c.scenarios.push_back(parse_scenario(s, "config.scenarios[" + std::to_string(k++) + "]"));
  }
  if (j.value("random_mask", false))
    for (auto& s : c.scenarios) s.random_mask = true;
  if (require_scenarios && c.scenarios.empty()) throw std::invalid_argument("config: no scenarios (give 'scenarios' or 'table1')");
  std::set<std::string> labels;
  for (const auto& s : c.scenarios)
    if (!labels.insert(s.label()).second) throw std::invalid_argument("config: duplicate scenario '" + s.label() + "'");
  return c;
}

RunConfig load_run_config(const std::string& path, bool require_scenarios) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config " + path + ": " + e.what());
  }
  return parse_run_config(j, require_scenarios);
}

// ---------------------------------------------------------------------------
// run matrix

RunMatrixResult run_matrix(const RunConfig& cfg, const RowSink& sink) {
  auto geo = Geometry::build(cfg.geometry);
  const int ns = static_cast<int>(cfg.scenarios.size());
  const int n_jobs = ns * cfg.replicates;
  std::vector<ScoreReport> job_rows(n_jobs);
  std::vector<std::vector<JobFailure>> job_failures(n_jobs);
  std::vector<char> done(n_jobs, 0);
  int next_flush = 0;
  std::mutex mu;

  auto run_job = [&](int j) {
    const int s = j / cfg.replicates, r = j % cfg.replicates;
    const ScenarioConfig& sc = cfg.scenarios[s];
    const std::string label = sc.label();
    ScoreReport rows;
    std::vector<JobFailure> failures;
    Dataset data;
    try {
      data = generate_dataset(sc, *geo, derive_seed(cfg.seed, {static_cast<std::uint64_t>(s), static_cast<std::uint64_t>(r), 0}));
    } catch (const std::exception& e) {
      for (Method m : cfg.methods) {
        failures.push_back({label, r, to_string(m), e.what()});
        rows.add(label, r, to_string(m), "all", "failed", 1.0);
      }
    }
    if (data.truth)
      for (Method m : cfg.methods) {
        try {
          MethodFit mf = fit_method(m, data, *geo, cfg.priors_for(sc.family), cfg.fit);
          PredictionControls pc;
          pc.n_samples = cfg.n_samples;
          pc.seed = derive_seed(cfg.seed, {static_cast<std::uint64_t>(s), static_cast<std::uint64_t>(r),
                                           1 + static_cast<std::uint64_t>(m)});
          ScoreReport one;
          score_fit(label, r, mf, data, pc, one);
          rows.rows.insert(rows.rows.end(), one.rows.begin(), one.rows.end());
        } catch (const std::exception& e) {
          failures.push_back({label, r, to_string(m), e.what()});
          rows.add(label, r, to_string(m), "all", "failed", 1.0);
        }
      }
    std::lock_guard<std::mutex> lock(mu);
    job_rows[j] = std::move(rows);
    job_failures[j] = std::move(failures);
    done[j] = 1;
    while (next_flush < n_jobs && done[next_flush]) {
      if (sink) sink(job_rows[next_flush].rows);
      ++next_flush;
    }
  };

  if (cfg.threads > 1) {
#pragma omp parallel for schedule(dynamic) num_threads(cfg.threads)
    for (int j = 0; j < n_jobs; ++j) run_job(j);
  } else {
    for (int j = 0; j < n_jobs; ++j) run_job(j);
  }

  RunMatrixResult res;
  res.jobs = n_jobs * static_cast<int>(cfg.methods.size());
  for (int j = 0; j < n_jobs; ++j) {
    res.scores.rows.insert(res.scores.rows.end(), job_rows[j].rows.begin(), job_rows[j].rows.end());
    res.failures.insert(res.failures.end(), job_failures[j].begin(), job_failures[j].end());
  }
  return res;
}

RunMatrixResult run_matrix_to_files(const RunConfig& cfg, const std::string& dir) {
  fs::create_directories(dir);
  std::ofstream scores(dir + "/scores.csv");
  if (!scores) throw std::runtime_error("cannot write " + dir + "/scores.csv");
  scores << score_csv_header() << '\n' << std::flush;
  RunMatrixResult res = run_matrix(cfg, [&](const std::vector<ScoreRow>& rows) {
    for (const auto& r : rows) scores << format_score_row(r) << '\n';
    scores.flush();
  });
  std::ofstream fail(dir + "/failures.csv");
  fail << "scenario,replicate,method,error\n";
  for (const auto& f : res.failures) {
    std::string msg = f.error;
    std::replace(msg.begin(), msg.end(), ',', ';');
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    fail << f.scenario << ',' << f.replicate << ',' << f.method << ',' << msg << '\n';
  }
  return res;
}

// ---------------------------------------------------------------------------
// files

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os.precision(17);
  return os;
}

std::vector<std::vector<std::string>> read_csv(const std::string& path, const std::vector<std::string>& header_prefix) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::invalid_argument(path + " is empty");
  auto head = split_csv(line);
  for (size_t k = 0; k < header_prefix.size(); ++k)
    if (k >= head.size() || head[k] != header_prefix[k])
      throw std::invalid_argument(path + ": expected column '" + header_prefix[k] + "' at position " + std::to_string(k));
  std::vector<std::vector<std::string>> rows;
  rows.push_back(head);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    rows.push_back(split_csv(line));
    if (rows.back().size() != head.size())
      throw std::invalid_argument(path + ": row " + std::to_string(rows.size() - 1) + " has the wrong field count");
  }
  return rows;
}

double to_double(const std::string& s, const std::string& where) {
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument(where + ": '" + s + "' is not a number");
  }
}

}  // namespace

void write_dataset(const Dataset& data, const Geometry& geo, const std::string& dir) {
  fs::create_directories(dir);
  json meta;
  meta["family"] = to_string(data.family);
  meta["blocks_per_side"] = geo.spec.blocks_per_side;
  meta["cells_per_block_side"] = geo.spec.cells_per_block_side;
  meta["mesh"] = {{"inner_edge", geo.spec.mesh_inner_edge},
                  {"extension", geo.spec.mesh_extension},
                  {"outer_edge", geo.spec.mesh_outer_edge}};
  meta["covariates"] = data.grid.covariate_names;
  meta["has_offset"] = data.grid.log_offset.has_value();
  if (data.truth) meta["truth_beta"] = data.truth->beta;
  open_out(dir + "/grid.json") << meta.dump(2) << '\n';

  {
    auto os = open_out(dir + "/cells.csv");
    os << "cell,x,y,block,weight";
    for (size_t k = 1; k < data.grid.covariate_names.size(); ++k) os << ',' << data.grid.covariate_names[k];
    if (data.grid.log_offset) os << ",log_offset";
    os << '\n';
    for (int c = 0; c < data.grid.n_cells(); ++c) {
      os << c << ',' << data.grid.cells[c].x << ',' << data.grid.cells[c].y << ',' << data.grid.block_of_cell[c] << ','
         << data.weights[c];
      for (int k = 1; k < data.grid.n_covariates(); ++k) os << ',' << data.grid.covariates(c, k);
      if (data.grid.log_offset) os << ',' << (*data.grid.log_offset)[c];
      os << '\n';
    }
  }
  {
    auto os = open_out(dir + "/observations.csv");
    os << "block,y,observed\n";
    for (int b = 0; b < data.y.size(); ++b) os << b << ',' << data.y[b] << ',' << (data.observed[b] ? 1 : 0) << '\n';
  }
  {
    json m;
    json nodes = json::array(), tris = json::array();
    for (const auto& p : geo.mesh.nodes) nodes.push_back({p.x, p.y});
    for (const auto& t : geo.mesh.triangles) tris.push_back({t[0], t[1], t[2]});
    m["nodes"] = nodes;
    m["triangles"] = tris;
    open_out(dir + "/mesh.json") << m.dump() << '\n';
  }
  if (data.truth) {
    auto os = open_out(dir + "/truth.csv");
    os << "cell,eta,mu\n";
    for (int c = 0; c < data.truth->cell_eta.size(); ++c)
      os << c << ',' << data.truth->cell_eta[c] << ',' << data.truth->cell_mu[c] << '\n';
    auto ob = open_out(dir + "/truth_blocks.csv");
    ob << "block,mu\n";
    for (int b = 0; b < data.truth->block_mu.size(); ++b) ob << b << ',' << data.truth->block_mu[b] << '\n';
  }
}

Dataset read_dataset(const std::string& dir, StudyGeometry* geometry_out) {
  std::ifstream mf(dir + "/grid.json");
  if (!mf) throw std::invalid_argument("cannot open " + dir + "/grid.json");
  json meta = json::parse(mf);
  Dataset d;
  d.family = likelihood_from_string(meta.at("family").get<std::string>());
  StudyGeometry g;
  g.blocks_per_side = meta.at("blocks_per_side").get<int>();
  g.cells_per_block_side = meta.at("cells_per_block_side").get<int>();
  if (meta.contains("mesh")) {
    g.mesh_inner_edge = meta["mesh"].value("inner_edge", g.mesh_inner_edge);
    g.mesh_extension = meta["mesh"].value("extension", g.mesh_extension);
    g.mesh_outer_edge = meta["mesh"].value("outer_edge", g.mesh_outer_edge);
  }
  if (geometry_out) *geometry_out = g;
  d.grid = build_unit_square_partition(g.blocks_per_side, g.cells_per_block_side).second;
  const int nc = d.grid.n_cells();
  const bool has_offset = meta.value("has_offset", false);
  auto names = meta.at("covariates").get<std::vector<std::string>>();

  auto rows = read_csv(dir + "/cells.csv", {"cell", "x", "y", "block", "weight"});
  if (static_cast<int>(rows.size()) - 1 != nc)
    throw std::invalid_argument("cells.csv has " + std::to_string(rows.size() - 1) + " cells, expected " + std::to_string(nc));
  const int extra = static_cast<int>(names.size()) - 1;
  if (static_cast<int>(rows[0].size()) != 5 + extra + (has_offset ? 1 : 0))
    throw std::invalid_argument("cells.csv columns do not match grid.json");
  d.grid.covariates = Eigen::MatrixXd::Ones(nc, extra + 1);
  d.grid.covariate_names = names;
  d.weights.resize(nc);
  if (has_offset) d.grid.log_offset = Eigen::VectorXd(nc);
  for (int c = 0; c < nc; ++c) {
    const auto& r = rows[c + 1];
    const std::string where = "cells.csv row " + std::to_string(c + 1);
    if (static_cast<int>(to_double(r[0], where)) != c || static_cast<int>(to_double(r[3], where)) != d.grid.block_of_cell[c])
      throw std::invalid_argument(where + ": cell or block index does not match the grid layout");
    d.weights[c] = to_double(r[4], where);
    for (int k = 0; k < extra; ++k) d.grid.covariates(c, k + 1) = to_double(r[5 + k], where);
    if (has_offset) (*d.grid.log_offset)[c] = to_double(r[5 + extra], where);
  }
  d.grid.validate();

  auto obs = read_csv(dir + "/observations.csv", {"block", "y", "observed"});
  const int nb = d.grid.n_blocks();
  if (static_cast<int>(obs.size()) - 1 != nb) throw std::invalid_argument("observations.csv needs one row per block");
  d.y.resize(nb);
  d.observed.assign(nb, false);
  for (int b = 0; b < nb; ++b) {
    const std::string where = "observations.csv row " + std::to_string(b + 1);
    if (static_cast<int>(to_double(obs[b + 1][0], where)) != b) throw std::invalid_argument(where + ": blocks must be in order");
    d.y[b] = to_double(obs[b + 1][1], where);
    d.observed[b] = obs[b + 1][2] == "1";
  }

  if (fs::exists(dir + "/truth.csv") && fs::exists(dir + "/truth_blocks.csv")) {
    Truth t;
    if (meta.contains("truth_beta")) t.beta = meta["truth_beta"].get<std::vector<double>>();
    auto tr = read_csv(dir + "/truth.csv", {"cell", "eta", "mu"});
    auto tb = read_csv(dir + "/truth_blocks.csv", {"block", "mu"});
    if (static_cast<int>(tr.size()) - 1 != nc || static_cast<int>(tb.size()) - 1 != nb)
      throw std::invalid_argument("truth files do not match the grid");
    t.cell_eta.resize(nc);
    t.cell_mu.resize(nc);
    t.block_mu.resize(nb);
    for (int c = 0; c < nc; ++c) {
      t.cell_eta[c] = to_double(tr[c + 1][1], "truth.csv");
      t.cell_mu[c] = to_double(tr[c + 1][2], "truth.csv");
    }
    for (int b = 0; b < nb; ++b) t.block_mu[b] = to_double(tb[b + 1][1], "truth_blocks.csv");
    d.truth = std::move(t);
  }
  return d;
}

Partition read_membership(const std::string& path, const CellGrid& grid) {
  auto rows = read_csv(path, {"cell", "target"});
  const int nc = grid.n_cells();
  std::vector<int> target(nc, 0);
  std::vector<bool> seen(nc, false);
  std::map<int, int> index;
  for (size_t k = 1; k < rows.size(); ++k) {
    const std::string where = path + " row " + std::to_string(k);
    const int c = static_cast<int>(to_double(rows[k][0], where));
    if (c < 0 || c >= nc) throw std::invalid_argument(where + ": cell out of range");
    if (seen[c]) throw std::invalid_argument(where + ": cell listed twice");
    seen[c] = true;
    target[c] = static_cast<int>(to_double(rows[k][1], where));
    index.emplace(target[c], 0);
  }
  for (int c = 0; c < nc; ++c)
    if (!seen[c]) throw std::invalid_argument(path + ": cell " + std::to_string(c) + " has no target");
  Partition p;
  for (auto& [id, slot] : index) {
    slot = static_cast<int>(p.ids.size());
    p.ids.push_back(id);
  }
  p.members.resize(p.ids.size());
  p.centroids.assign(p.ids.size(), Point{0.0, 0.0});
  for (int c = 0; c < nc; ++c) p.members[index[target[c]]].push_back(c);
  for (size_t b = 0; b < p.members.size(); ++b) {
    for (int c : p.members[b]) {
      p.centroids[b].x += grid.cells[c].x / p.members[b].size();
      p.centroids[b].y += grid.cells[c].y / p.members[b].size();
    }
  }
  p.validate(nc);
  return p;
}

void write_block_predictions(const BlockPredictions& p, const std::string& path, const std::vector<int>& ids) {
  auto os = open_out(path);
  os << "block,mu_mean,mu_sd,mu_q025,mu_q975,y_mean,y_sd,y_q025,y_q975\n";
  for (size_t b = 0; b < p.mu.size(); ++b) {
    const auto& m = p.mu[b];
    const auto& y = p.y[b];
    os << (ids.empty() ? static_cast<int>(b) : ids[b]) << ',' << m.mean << ',' << std::sqrt(m.variance) << ',' << m.q025 << ',' << m.q975 << ',' << y.mean << ','
       << std::sqrt(y.variance) << ',' << y.q025 << ',' << y.q975 << '\n';
  }
}

void write_cell_predictions(const std::vector<PredictiveSummary>& p, const CellGrid& grid, const std::string& path) {
  auto os = open_out(path);
  os << "cell,x,y,block,mu_mean,mu_sd,mu_q025,mu_q975\n";
  for (size_t c = 0; c < p.size(); ++c)
    os << c << ',' << grid.cells[c].x << ',' << grid.cells[c].y << ',' << grid.block_of_cell[c] << ',' << p[c].mean
       << ',' << std::sqrt(p[c].variance) << ',' << p[c].q025 << ',' << p[c].q975 << '\n';
}

}  // namespace blockagg
