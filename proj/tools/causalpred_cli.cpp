#include "causalpred/causalpred.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#ifndef CAUSALPRED_VERSION
#define CAUSALPRED_VERSION "unknown"
#endif
#ifndef CAUSALPRED_BUILD_TYPE
#define CAUSALPRED_BUILD_TYPE "unknown"
#endif

namespace cp = causalpred;
namespace fs = std::filesystem;

namespace {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kUsage = 2,
  kDimension = 3,
  kNotConverged = 4,
  kSingular = 5,
};

const std::set<std::string> kPathKeys = {"conditions", "responses", "targets", "renames",
                                         "mask",       "params",    "network", "epsilon"};

struct DataOptions {
  std::string conditions;
  std::string responses;
  std::string targets;
  std::string renames;
  bool sim = false;
  double noise = 0.2;
  bool misspecified_b = false;
};

struct FitOptions {
  std::string model = "causal-linear";
  double lambda = 0.0;
  int max_iter = 10000;
  double tol = 1e-8;
  std::string mask;
  std::string envelope = "identity";
  double clip_bound = 10.0;
};

struct Settings {
  std::uint64_t seed = 0;
  int jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  std::string out_dir;
  DataOptions data;
  FitOptions fit;
  std::string scheme = "rf";
  int reps = 1000;
  double train_fraction = 0.7;
  std::string params;
  std::string epsilon;
  std::string network;
  std::string form = "W";
  double threshold = 0.2;
};

void add_data_options(CLI::App* cmd, DataOptions& o) {
  cmd->add_option("--conditions", o.conditions, "condition CSV (conditions x drugs)")->check(CLI::ExistingFile);
  cmd->add_option("--responses", o.responses, "response CSV (conditions x responses)")->check(CLI::ExistingFile);
  cmd->add_option("--targets", o.targets, "target map CSV (responses x drugs)")->check(CLI::ExistingFile);
  cmd->add_option("--renames", o.renames, "two-column CSV mapping old labels to new")->check(CLI::ExistingFile);
  cmd->add_flag("--sim", o.sim, "use the built-in simulation fixtures instead of files");
  cmd->add_option("--noise", o.noise, "simulation noise standard deviation")->check(CLI::NonNegativeNumber);
  cmd->add_flag("--misspecified-b", o.misspecified_b, "simulation: double the combination targets");
}

void add_fit_options(CLI::App* cmd, FitOptions& o) {
  cmd->add_option("--model", o.model, "regression | causal-linear | causal-ode")
      ->check(CLI::IsMember({"regression", "causal-linear", "causal-ode"}));
  cmd->add_option("--lambda", o.lambda, "L1 penalty")->check(CLI::NonNegativeNumber);
  cmd->add_option("--max-iter", o.max_iter, "iteration cap")->check(CLI::PositiveNumber);
  cmd->add_option("--tol", o.tol, "relative objective change for convergence")->check(CLI::PositiveNumber);
  cmd->add_option("--mask", o.mask, "square 0/1 CSV of allowed interactions")->check(CLI::ExistingFile);
  cmd->add_option("--envelope", o.envelope, "ODE envelope: identity | clipped-linear | sigmoid")
      ->check(CLI::IsMember({"identity", "clipped-linear", "sigmoid"}));
  cmd->add_option("--clip-bound", o.clip_bound, "clipped-linear bound")->check(CLI::PositiveNumber);
}

fs::path default_out_dir() {
  if (const char* env = std::getenv("CAUSALPRED_OUTPUT_DIR"); env && *env) return env;
  return fs::current_path();
}

fs::path out_path(const Settings& s, const std::string& name) {
  const fs::path dir = s.out_dir.empty() ? default_out_dir() : fs::path(s.out_dir);
  fs::create_directories(dir);
  return dir / name;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw cp::Error("cannot write '" + path.string() + "'");
  out << std::setw(2) << j << '\n';
  std::cerr << "wrote " << path.string() << '\n';
}

void write_csv(const fs::path& path, const cp::io::LabeledMatrix& m) {
  cp::io::write_matrix_csv(path, m);
  std::cerr << "wrote " << path.string() << '\n';
}

std::vector<std::string> labels(const char* prefix, cp::Index count) { return cp::detail::numbered(prefix, count); }

cp::io::LoadedDataset load_data(const DataOptions& o, std::uint64_t seed) {
  if (o.sim) {
    cp::Dataset data{cp::sim::build_design(), cp::sim::simulate_responses({o.noise, seed}),
                     cp::sim::build_targets(o.misspecified_b)};
    return {std::move(data), labels("C", cp::sim::kConditions)};
  }
  if (o.conditions.empty() || o.responses.empty())
    throw cp::ParseError("either --sim or both --conditions and --responses are required");
  cp::io::DatasetFiles files{o.conditions, o.responses, std::nullopt, std::nullopt};
  if (!o.targets.empty()) files.targets = o.targets;
  if (!o.renames.empty()) files.renames = o.renames;
  return cp::io::load_dataset(files);
}

cp::FitConfig make_fit_config(const FitOptions& o, const std::vector<std::string>& responses) {
  cp::FitConfig cfg;
  cfg.lambda = o.lambda;
  cfg.max_iter = o.max_iter;
  cfg.tol = o.tol;
  if (!o.mask.empty()) cfg.mask = cp::io::to_mask(cp::io::load_matrix_csv(o.mask), responses);
  return cfg;
}

cp::Envelope make_envelope(const FitOptions& o) { return {cp::parse_envelope(o.envelope), o.clip_bound}; }

cp::FamilyOptions make_family(const FitOptions& o, const cp::Dataset& data) {
  cp::FamilyOptions fam;
  fam.fit = make_fit_config(o, data.x.response_names());
  if (cp::parse_model_family(o.model) == cp::ModelFamily::causal_ode) {
    if (!data.b) throw cp::InvalidArgument("causal-ode needs a target map");
    const cp::Index p = data.x.responses();
    fam.ode_template = cp::OdeModel(cp::InteractionMatrix(-cp::Matrix::Identity(p, p), cp::InteractionForm::W),
                                    cp::Vector::Ones(p), make_envelope(o), *data.b);
  }
  return fam;
}

cp::io::LabeledMatrix square_labeled(const cp::Matrix& m, const std::vector<std::string>& names, const char* corner) {
  return {m, names, names, corner};
}

// ---------------------------------------------------------------------------

int run_simulate(const Settings& s) {
  const auto x = cp::sim::simulate_responses({s.data.noise, s.seed});
  const auto conditions = labels("C", cp::sim::kConditions);
  const auto drugs = cp::sim::drug_names();
  const auto responses = cp::sim::response_names();
  write_csv(out_path(s, "conditions.csv"), {cp::sim::build_design().values(), conditions, drugs, "condition"});
  write_csv(out_path(s, "responses.csv"), {x.values(), conditions, responses, "condition"});
  write_csv(out_path(s, "targets.csv"),
            {cp::sim::build_targets(s.data.misspecified_b).values(), responses, drugs, "response"});
  write_csv(out_path(s, "dag.csv"), square_labeled(cp::sim::build_dag().values(), responses, "A"));
  return kOk;
}

int run_fit(const Settings& s) {
  const auto loaded = load_data(s.data, s.seed);
  const cp::Dataset& data = loaded.data;
  const auto& responses = data.x.response_names();
  const auto family = cp::parse_model_family(s.fit.model);
  const cp::FitConfig cfg = make_fit_config(s.fit, responses);

  cp::FitReport report;
  nlohmann::json extra{{"model", s.fit.model}, {"lambda", s.fit.lambda}};
  switch (family) {
    case cp::ModelFamily::regression: {
      const auto fit = cp::fit_regression(data.d, data.x, cfg);
      write_csv(out_path(s, "coefficients.csv"),
                {fit.coefficients.values(), data.d.drug_names(), responses, "drug"});
      report = fit.report;
      break;
    }
    case cp::ModelFamily::causal_linear: {
      if (!data.b) throw cp::InvalidArgument("causal-linear needs --targets");
      const auto fit = cp::fit_causal_linear(data.d, data.x, *data.b, cfg);
      write_csv(out_path(s, "w.csv"), square_labeled(fit.w.values(), responses, "W"));
      report = fit.report;
      break;
    }
    case cp::ModelFamily::causal_ode: {
      const auto fam = make_family(s.fit, data);
      const auto fit = cp::fit_causal_ode(data.d, data.x, *data.b, *fam.ode_template, cfg, fam.ode);
      write_csv(out_path(s, "w.csv"), square_labeled(fit.model.w.values(), responses, "W"));
      write_csv(out_path(s, "epsilon.csv"), {fit.model.epsilon.transpose(), {"epsilon"}, responses, "parameter"});
      extra["envelope"] = s.fit.envelope;
      extra["clip_bound"] = s.fit.clip_bound;
      report = fit.report;
      break;
    }
  }
  nlohmann::json j = cp::io::to_json(report);
  j.update(extra);
  write_json(out_path(s, "fit_report.json"), j);
  std::cout << "objective " << std::setprecision(10) << report.final_objective << " after " << report.iterations
            << " iterations" << (report.converged ? "" : " (not converged)") << '\n';
  if (!report.converged) {
    std::cerr << "error: fit did not converge: " << report.diagnostic << '\n';
    return kNotConverged;
  }
  return kOk;
}

int run_predict(const Settings& s) {
  if (s.params.empty() || s.data.conditions.empty()) throw cp::ParseError("predict needs --params and --conditions");
  auto cond = cp::io::load_matrix_csv(s.data.conditions);
  auto params = cp::io::load_matrix_csv(s.params);
  std::optional<cp::io::LabeledMatrix> targ;
  if (!s.data.targets.empty()) targ = cp::io::load_matrix_csv(s.data.targets);
  if (!s.data.renames.empty()) {
    const auto renames = cp::io::load_rename_map(s.data.renames);
    cp::io::apply_renames(cond.col_labels, renames);
    cp::io::apply_renames(params.row_labels, renames);
    cp::io::apply_renames(params.col_labels, renames);
    if (targ) {
      cp::io::apply_renames(targ->row_labels, renames);
      cp::io::apply_renames(targ->col_labels, renames);
    }
  }
  const cp::ConditionMatrix d = cp::io::to_conditions(cond);
  const auto family = cp::parse_model_family(s.fit.model);

  std::vector<std::string> responses;
  cp::PredictionResult result;
  if (family == cp::ModelFamily::regression) {
    responses = params.col_labels;
    const cp::RegressionCoefficients r(cp::io::align_rows(params, d.drug_names(), "coefficient file"));
    result = cp::predict_regression(r, d);
  } else {
    if (!targ) throw cp::InvalidArgument(s.fit.model + " prediction needs --targets");
    responses = params.col_labels;
    const cp::InteractionMatrix w(cp::io::to_square(params, responses, "interaction file"), cp::InteractionForm::W);
    const cp::TargetMap b = cp::io::to_targets(*targ, responses, d.drug_names());
    if (family == cp::ModelFamily::causal_linear) {
      result = cp::predict_causal_linear(w, b, d);
    } else {
      cp::Vector eps = cp::Vector::Ones(w.size());
      if (!s.epsilon.empty()) eps = cp::io::align_columns(cp::io::load_matrix_csv(s.epsilon), responses, "epsilon file").row(0);
      result = cp::predict_causal_ode(cp::OdeModel(w, eps, make_envelope(s.fit), b), d);
    }
  }
  write_csv(out_path(s, "predictions.csv"), {result.predicted, cond.row_labels, responses, cond.corner});
  return kOk;
}

int run_cv(const Settings& s) {
  const auto loaded = load_data(s.data, s.seed);
  const cp::Dataset& data = loaded.data;
  const auto model = cp::make_fit_predict(cp::parse_model_family(s.fit.model), make_family(s.fit, data));
  const auto& responses = data.x.response_names();

  nlohmann::json report;
  std::vector<cp::ScatterPoint> points;
  if (s.scheme == "rf") {
    const auto plan = cp::make_random_folds(data.d.conditions(), s.train_fraction, s.reps, s.seed);
    auto rep = cp::averaged_random_fold_eval(model, data, plan, s.jobs);
    report = cp::io::to_json(rep);
    points = std::move(rep.points);
    std::cout << "pearson_r " << (rep.pearson_r ? std::to_string(*rep.pearson_r) : "undefined") << " mae " << rep.mae
              << " over " << rep.n_points << " points\n";
  } else {
    const auto rep = cp::lodo_eval(model, data, cp::make_lodo_splits(data.d), s.jobs);
    report = cp::io::to_json(rep);
    for (const auto& m : rep.per_drug) points.insert(points.end(), m.points.begin(), m.points.end());
    for (const auto& m : rep.per_drug)
      std::cout << m.folds.front().label << " pearson_r "
                << (m.pearson_r ? std::to_string(*m.pearson_r) : "undefined") << '\n';
    std::cout << "mean pearson_r " << (rep.mean_r ? std::to_string(*rep.mean_r) : "undefined") << '\n';
  }
  report["model"] = s.fit.model;
  report["scheme"] = s.scheme;
  report["seed"] = s.seed;
  write_json(out_path(s, "metrics.json"), report);
  const fs::path scatter = out_path(s, "scatter.csv");
  std::ofstream out(scatter);
  cp::io::write_scatter_csv(out, points, loaded.condition_labels, responses);
  std::cerr << "wrote " << scatter.string() << '\n';
  return kOk;
}

int run_export(const Settings& s) {
  if (s.network.empty()) throw cp::ParseError("export-network needs --network");
  const auto m = cp::io::load_matrix_csv(s.network);
  const auto names = m.col_labels;
  const cp::InteractionMatrix net(cp::io::to_square(m, names, "network file"),
                                  s.form == "A" ? cp::InteractionForm::A : cp::InteractionForm::W);
  const auto exported = cp::io::export_network(net, names, s.threshold);
  const fs::path csv = out_path(s, "network.csv");
  const fs::path dot = out_path(s, "network.dot");
  {
    std::ofstream out(csv);
    cp::io::write_network_csv(out, exported);
    std::ofstream g(dot);
    cp::io::write_network_dot(g, exported, fs::path(s.network).stem().string());
  }
  std::cerr << "wrote " << csv.string() << "\nwrote " << dot.string() << '\n';
  std::cout << exported.edges.size() << " edges with |weight| >= " << s.threshold << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------

std::string long_name(const CLI::Option* opt) {
  const auto& names = opt->get_lnames();
  return names.empty() ? std::string() : names.front();
}

/// Config values fill in options that were not given on the command line.
std::vector<std::string> merge_config(const CLI::App& app, const CLI::App& cmd, const std::string& config,
                                      std::vector<std::string> args, std::set<std::string>& applied) {
  std::set<std::string> allowed;
  for (const CLI::App* scope : {&app, &cmd})
    for (const CLI::Option* opt : scope->get_options()) {
      const std::string name = long_name(opt);
      if (!name.empty() && name != "help" && name != "config" && name != "version") allowed.insert(name);
    }
  std::set<std::string> paths;
  for (const auto& k : kPathKeys)
    if (allowed.count(k)) paths.insert(k);
  const auto cfg = cp::io::RunConfig::load(config, allowed, paths);
  for (const auto& [key, value] : cfg.values()) {
    const CLI::Option* opt = cmd.get_option_no_throw("--" + key);
    if (!opt) opt = app.get_option_no_throw("--" + key);
    if (opt && opt->count() == 0) {
      args.push_back("--" + key + "=" + value);
      applied.insert(key);
    }
  }
  return args;
}

void parse_args(CLI::App& app, const std::vector<std::string>& args) {
  std::vector<char*> argv;
  for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
  app.parse(static_cast<int>(argv.size()), argv.data());
}

void log_settings(const CLI::App& app, const CLI::App& cmd, const std::set<std::string>& from_config) {
  std::cerr << "# causalpred " << CAUSALPRED_VERSION << ' ' << cmd.get_name() << '\n';
  for (const CLI::App* scope : {&app, &cmd})
    for (const CLI::Option* opt : scope->get_options()) {
      const std::string name = long_name(opt);
      if (name.empty() || name == "help" || name == "version") continue;
      const bool given = opt->count() > 0;
      const char* source = !given ? "default" : from_config.count(name) ? "config" : "cli";
      std::string value = given ? opt->as<std::string>() : opt->get_default_str();
      if (opt->get_items_expected_max() == 0 && value.empty()) value = given ? "true" : "false";
      std::cerr << "#   " << name << " = " << value << "  [" << source << "]\n";
    }
}

}  // namespace

int main(int argc, char** argv) {
  Settings s;
  std::string config;

  CLI::App app{"Causal and regression models for drug-perturbation response prediction", "causalpred"};
  app.option_defaults()->always_capture_default();
  app.fallthrough();
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("causalpred ") + CAUSALPRED_VERSION + " (" + CAUSALPRED_BUILD_TYPE +
                                        ", Eigen " + std::to_string(EIGEN_WORLD_VERSION) + "." +
                                        std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                        std::to_string(EIGEN_MINOR_VERSION) + ", C++ " +
                                        std::to_string(__cplusplus) + ")");
  app.add_option("--config", config, "flat key = value file; command-line flags take precedence")
      ->check(CLI::ExistingFile);
  app.add_option("--jobs", s.jobs, "worker threads for CV repetitions and LODO folds")->check(CLI::PositiveNumber);
  app.add_option("--out", s.out_dir, "output directory (default: $CAUSALPRED_OUTPUT_DIR or the working directory)");

  auto* simulate = app.add_subcommand("simulate", "write the simulation fixtures and noisy responses as CSV");
  simulate->add_option("--seed", s.seed, "noise seed");
  simulate->add_option("--noise", s.data.noise, "noise standard deviation")->check(CLI::NonNegativeNumber);
  simulate->add_flag("--misspecified-b", s.data.misspecified_b, "double the combination targets");

  auto* fit = app.add_subcommand("fit", "fit a model and write its parameters and a fit report");
  add_data_options(fit, s.data);
  add_fit_options(fit, s.fit);
  fit->add_option("--seed", s.seed, "simulation noise seed (with --sim)");

  auto* predict = app.add_subcommand("predict", "predict responses for new conditions from fitted parameters");
  predict->add_option("--model", s.fit.model, "regression | causal-linear | causal-ode")
      ->check(CLI::IsMember({"regression", "causal-linear", "causal-ode"}));
  predict->add_option("--params", s.params, "coefficients.csv (regression) or w.csv (causal)")
      ->check(CLI::ExistingFile);
  predict->add_option("--conditions", s.data.conditions, "condition CSV")->check(CLI::ExistingFile);
  predict->add_option("--targets", s.data.targets, "target map CSV")->check(CLI::ExistingFile);
  predict->add_option("--renames", s.data.renames, "label rename CSV")->check(CLI::ExistingFile);
  predict->add_option("--epsilon", s.epsilon, "epsilon.csv from a causal-ode fit")->check(CLI::ExistingFile);
  predict->add_option("--envelope", s.fit.envelope, "ODE envelope")
      ->check(CLI::IsMember({"identity", "clipped-linear", "sigmoid"}));
  predict->add_option("--clip-bound", s.fit.clip_bound, "clipped-linear bound")->check(CLI::PositiveNumber);

  auto* cv = app.add_subcommand("cv", "cross-validate a model family");
  add_data_options(cv, s.data);
  add_fit_options(cv, s.fit);
  cv->add_option("--scheme", s.scheme, "rf (repeated random folds) | lodo (leave one drug out)")
      ->check(CLI::IsMember({"rf", "lodo"}));
  cv->add_option("--reps", s.reps, "random-fold repetitions")->check(CLI::PositiveNumber);
  cv->add_option("--train-fraction", s.train_fraction, "random-fold training fraction")->check(CLI::Range(0.0, 1.0));
  cv->add_option("--seed", s.seed, "split and simulation seed");

  auto* exporter = app.add_subcommand("export-network", "write a fitted network as an edge list and Graphviz text");
  exporter->add_option("--network", s.network, "square interaction CSV")->check(CLI::ExistingFile);
  exporter->add_option("--form", s.form, "W (ODE form, diagonal ignored) or A (structural form)")
      ->check(CLI::IsMember({"W", "A"}));
  exporter->add_option("--threshold", s.threshold, "minimum |weight| to export")->check(CLI::NonNegativeNumber);

  try {
    std::vector<std::string> args(argv, argv + argc);
    parse_args(app, args);
    const CLI::App* chosen = app.get_subcommands().front();
    std::set<std::string> from_config;
    if (!config.empty()) {
      args = merge_config(app, *chosen, config, args, from_config);
      app.clear();
      parse_args(app, args);
    }
    log_settings(app, *chosen, from_config);

    if (simulate->parsed()) return run_simulate(s);
    if (fit->parsed()) return run_fit(s);
    if (predict->parsed()) return run_predict(s);
    if (cv->parsed()) return run_cv(s);
    if (exporter->parsed()) return run_export(s);
    return kUsage;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  } catch (const cp::ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return kUsage;
  } catch (const cp::DimensionError& e) {
    std::cerr << "dimension error: " << e.what() << '\n';
    return kDimension;
  } catch (const cp::ConvergenceError& e) {
    std::cerr << "convergence error: " << e.what() << '\n';
    return kNotConverged;
  } catch (const cp::SingularMatrixError& e) {
    std::cerr << "singular matrix: " << e.what() << '\n';
    return kSingular;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
}
