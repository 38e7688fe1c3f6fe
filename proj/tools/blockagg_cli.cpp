#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <omp.h>

#include "blockagg/harness.hpp"
#include "blockagg/matern_spde.hpp"
#include "blockagg/rng.hpp"

using namespace blockagg;
namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::uint64_t seed = 1;
  int threads = 1;
  std::string out_dir = ".";
  std::string config;
};

RunConfig base_config(const Globals& g) {
  RunConfig c = g.config.empty() ? RunConfig{} : load_run_config(g.config, false);
  return c;
}

struct Loaded {
  Dataset data;
  std::shared_ptr<const Geometry> geo;
};

Loaded load(const std::string& dir) {
  Loaded l;
  StudyGeometry sg;
  l.data = read_dataset(dir, &sg);
  l.geo = Geometry::build(sg);
  return l;
}

std::string out_path(const Globals& g, const std::string& name) {
  fs::create_directories(g.out_dir);
  return (fs::path(g.out_dir) / name).string();
}

int finish_fit_warning(const FitResult& f) {
  if (f.converged) return 0;
  std::cerr << "warning: fit did not converge: " << f.message << '\n';
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatial disaggregation of block-level data with block aggregation models"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Root seed");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--out-dir", g.out_dir, "Output directory");
  app.add_option("--config", g.config, "JSON configuration file")->check(CLI::ExistingFile);

  // simulate
  auto* sim = app.add_subcommand("simulate", "Simulate one dataset");
  std::string family = "gaussian";
  double range = -1, var = -1, prop = -1;
  bool random_mask = false;
  sim->add_option("--family", family)->check(CLI::IsMember({"gaussian", "poisson"}));
  sim->add_option("--range", range, "Field range");
  sim->add_option("--var", var, "Field marginal variance");
  sim->add_option("--prop", prop, "Proportion of observed blocks");
  sim->add_flag("--random-mask", random_mask, "Random instead of fixed observed-block layout");

  // shared by single-dataset commands
  std::string method = "block_aggregation", data_dir, strategy;
  int n_samples = -1;
  bool force = false;
  auto add_data_opts = [&](CLI::App* sc) {
    sc->add_option("--method", method)->check(CLI::IsMember({"block_aggregation", "centroids", "mrf"}));
    sc->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    sc->add_option("--strategy", strategy, "Hyperparameter exploration")
        ->check(CLI::IsMember({"grid", "empirical_bayes"}));
    sc->add_option("--samples", n_samples, "Posterior predictive samples")->check(CLI::Range(2, 10000000));
  };
  auto* fit_cmd = app.add_subcommand("fit", "Fit one model to one dataset");
  add_data_opts(fit_cmd);
  fit_cmd->add_option("--out", g.out_dir, "Output directory (alias of --out-dir)");

  auto* pred = app.add_subcommand("predict", "Predict blocks, cells or another partition");
  add_data_opts(pred);
  std::string level = "blocks", membership, mode = "mean";
  pred->add_option("--level", level)->check(CLI::IsMember({"blocks", "cells", "partition"}));
  pred->add_option("--membership", membership, "CSV of cell,target for --level partition")->check(CLI::ExistingFile);
  pred->add_option("--mode", mode, "Partition aggregation")->check(CLI::IsMember({"mean", "sum"}));
  pred->add_flag("--force", force, "Predict from a non-converged fit");

  auto* cv = app.add_subcommand("cv", "Leave-one-block-out cross-validation");
  add_data_opts(cv);

  auto* score = app.add_subcommand("score", "Fit methods to a simulated dataset and score against the truth");
  add_data_opts(score);
  std::vector<std::string> methods;
  score->add_option("--methods", methods, "Methods to score (default: all three)");

  auto* rm = app.add_subcommand("run-matrix", "Run the scenario x replicate x method study");
  int replicates = -1;
  rm->add_option("--replicates", replicates)->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    omp_set_num_threads(g.threads);
    RunConfig cfg = base_config(g);
    if (strategy.size()) cfg.fit.explore.strategy = explore_strategy_from_string(strategy);
    if (n_samples > 0) cfg.n_samples = n_samples;
    PredictionControls pc;
    pc.n_samples = cfg.n_samples;
    pc.seed = g.seed;
    pc.force = force;
    const Method m = method_from_string(method);

    if (*sim) {
      ScenarioConfig sc = family == "poisson" ? ScenarioConfig::poisson_default() : ScenarioConfig::gaussian_default();
      if (range > 0) sc.range = range;
      if (var >= 0) sc.field_variance = var;
      if (prop > 0) sc.sampling = prop;
      sc.random_mask = random_mask;
      sc.validate();
      auto geo = Geometry::build(cfg.geometry);
      Dataset d = generate_dataset(sc, *geo, g.seed);
      fs::create_directories(g.out_dir);
      write_dataset(d, *geo, g.out_dir);
      std::cout << "wrote " << sc.label() << " dataset to " << g.out_dir << '\n';
      return 0;
    }
    if (*fit_cmd) {
      Loaded l = load(data_dir);
      MethodFit mf = fit_method(m, l.data, *l.geo, cfg.priors_for(l.data.family), cfg.fit);
      std::ofstream(out_path(g, "fit.json")) << fit_to_json(mf.fit, *mf.model, cfg.fit).dump(2) << '\n';
      std::cout << to_string(m) << ": " << mf.fit.outer_iterations() << " outer iterations, "
                << (mf.fit.converged ? "converged" : "not converged") << '\n';
      return finish_fit_warning(mf.fit);
    }
    if (*pred) {
      Loaded l = load(data_dir);
      MethodFit mf = fit_method(m, l.data, *l.geo, cfg.priors_for(l.data.family), cfg.fit);
      if (level == "blocks") {
        write_block_predictions(predict_blocks(*mf.model, mf.fit, pc), out_path(g, "block_predictions.csv"));
      } else if (level == "cells") {
        write_cell_predictions(predict_cells(*mf.model, mf.fit, pc), l.data.grid, out_path(g, "cell_predictions.csv"));
      } else {
        if (membership.empty()) throw UsageError("--level partition needs --membership");
        Partition target = read_membership(membership, l.data.grid);
        auto agg = mode == "sum" ? AggregationMode::weighted_sum : AggregationMode::weighted_mean;
        write_block_predictions(predict_partition(*mf.model, mf.fit, target, l.data.weights, agg, pc),
                                out_path(g, "partition_predictions.csv"), target.ids);
      }
      return 0;
    }
    if (*cv) {
      Loaded l = load(data_dir);
      const PriorBundle priors = cfg.priors_for(l.data.family);
      ModelFactory factory = [&](const std::vector<int>& keep) {
        return make_model(m, model_inputs(l.data, *l.geo, priors, keep));
      };
      CrossValidation res = cross_validate(factory, l.data.observed_blocks(), l.data.y_observed(), cfg.fit, pc);
      std::ofstream os(out_path(g, "cv.csv"));
      os.precision(17);
      os << "block,ok,y,pred_mean,pred_sd,ds,nls,error\n";
      for (const auto& f : res.folds)
        os << f.block << ',' << f.ok << ',' << l.data.y[f.block] << ',' << f.y.mean << ',' << std::sqrt(f.y.variance)
           << ',' << f.ds << ',' << f.nls << ',' << f.error << '\n';
      std::cout << "MDS " << res.mds << "  TNLS " << res.tnls << "  RMSE " << res.rmse << "  failed folds "
                << res.failures << '\n';
      return res.failures ? 2 : 0;
    }
    if (*score) {
      Loaded l = load(data_dir);
      if (!l.data.truth) throw UsageError("score needs a simulated dataset with truth files");
      std::vector<Method> ms = cfg.methods;
      if (!methods.empty()) {
        ms.clear();
        for (const auto& s : methods) ms.push_back(method_from_string(s));
      }
      ScoreReport rep;
      int status = 0;
      for (Method mm : ms) {
        MethodFit mf = fit_method(mm, l.data, *l.geo, cfg.priors_for(l.data.family), cfg.fit);
        PredictionControls c = pc;
        c.seed = derive_seed(g.seed, {1 + static_cast<std::uint64_t>(mm)});
        score_fit(fs::path(data_dir).filename().string(), 0, mf, l.data, c, rep);
        if (!mf.fit.converged) status = 2;
      }
      std::ofstream os(out_path(g, "scores.csv"));
      rep.write_csv(os);
      return status;
    }
    if (*rm) {
      if (g.config.empty()) throw UsageError("run-matrix needs --config");
      cfg = load_run_config(g.config);
      if (replicates > 0) cfg.replicates = replicates;
      if (app.count("--seed")) cfg.seed = g.seed;
      if (app.count("--threads")) cfg.threads = g.threads;
      RunMatrixResult res = run_matrix_to_files(cfg, g.out_dir);
      std::cout << res.jobs << " fits, " << res.failures.size() << " failed; scores in "
                << (fs::path(g.out_dir) / "scores.csv").string() << '\n';
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
