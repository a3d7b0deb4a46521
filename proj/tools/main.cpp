#include <CLI11.hpp>
#include <chrono>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "ivselect/lars.hpp"
#include "ivselect/median_tree.hpp"
#include "ivselect/report.hpp"
#include "ivselect/selection.hpp"
#include "ivselect/simulate.hpp"

namespace {

using ivsel::ValidationError;

std::string join_args(int argc, char** argv) {
  std::ostringstream os;
  for (int i = 0; i < argc; ++i) os << (i ? " " : "") << argv[i];
  return os.str();
}

std::uint64_t entropy_seed() {
  std::random_device rd;
  return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write output file: " + path);
  out << content;
}

struct SelectArgs {
  std::string data_path;
  std::string outcome;
  std::vector<std::string> exposures;
  std::vector<std::string> instruments;
  std::vector<std::string> covariates;
  std::string blocks_path;
  std::string method = "sargan-dt";
  std::string p_threshold = "auto";
  double nu = 1.0;
  int folds = 10;
  std::size_t cap = 2'000'000;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out_prefix = "select_report";
};

int run_select(const SelectArgs& args, const std::string& command) {
  auto t0 = std::chrono::steady_clock::now();
  std::uint64_t seed = args.seed_given ? args.seed : entropy_seed();

  ivsel::ColumnRoles roles{args.outcome, args.exposures, args.instruments, args.covariates};
  ivsel::Dataset raw = ivsel::load_csv(args.data_path, roles);
  ivsel::Dataset data = ivsel::partial_out_covariates(raw);

  bool have_blocks = !args.blocks_path.empty();
  ivsel::BlockStructure blocks;
  if (have_blocks)
    blocks = ivsel::BlockStructure::from_json_file(args.blocks_path, data.instrument_labels,
                                                   data.exposure_labels);

  ivsel::JustIdentifiedTable table =
      ivsel::enumerate_just_identified(data, have_blocks ? &blocks : nullptr, args.cap);
  ivsel::MedianTreeEstimate initial = have_blocks ? ivsel::block_median_of_medians(table, blocks)
                                                  : ivsel::median_of_medians(table);
  Eigen::VectorXd alpha_init = ivsel::alpha_from_beta(data, initial.beta_mm);
  ivsel::AdaptiveWeights weights = ivsel::AdaptiveWeights::from_initial_alpha(alpha_init, args.nu);

  double p_threshold = 0.0;
  if (args.method == "sargan-dt" || args.method == "exhaustive") {
    if (args.p_threshold == "auto") {
      p_threshold = ivsel::default_p_threshold(data.n());
    } else {
      try {
        p_threshold = std::stod(args.p_threshold);
      } catch (const std::exception&) {
        throw ValidationError("--p-threshold must be 'auto' or a number in (0, 1)");
      }
    }
  }

  ivsel::SelectionResult result;
  if (args.method == "sargan-dt") {
    ivsel::LarsPath path =
        ivsel::lars_weighted_path(ivsel::build_ztilde(data), data.y, weights,
                                  data.kz() - data.kx());
    result = ivsel::downward_testing(data, path, p_threshold);
  } else if (args.method == "exhaustive") {
    result = ivsel::exhaustive_downward_testing(data, args.cap, p_threshold);
  } else if (args.method == "cv-min") {
    result = ivsel::cv_select(data, weights, args.folds, ivsel::CvRule::Min, seed);
  } else if (args.method == "cv-1se") {
    result = ivsel::cv_select(data, weights, args.folds, ivsel::CvRule::OneSe, seed);
  } else {
    throw ValidationError("unknown method: " + args.method);
  }

  nlohmann::json payload = ivsel::selection_to_json(result, data);
  nlohmann::json initial_json;
  for (int q = 0; q < data.kx(); ++q)
    initial_json[data.exposure_labels.at(q)] = initial.beta_mm(q);
  payload["initial_estimate"] = initial_json;

  nlohmann::json config_echo;
  config_echo["data"] = args.data_path;
  config_echo["outcome"] = args.outcome;
  config_echo["exposures"] = args.exposures;
  config_echo["instruments"] = args.instruments;
  config_echo["covariates"] = args.covariates;
  config_echo["blocks"] = args.blocks_path;
  config_echo["method"] = args.method;
  config_echo["nu"] = args.nu;
  config_echo["folds"] = args.folds;
  config_echo["seed"] = seed;
  config_echo["n"] = data.n();

  double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  nlohmann::json report = ivsel::run_report(command, config_echo, payload, wall);
  write_file(args.out_prefix + ".json", report.dump(2) + "\n");

  std::cout << ivsel::selection_to_text(result, data);
  std::cout << "report written to " << args.out_prefix << ".json\n";
  return 0;
}

struct SimulateArgs {
  std::string preset;
  std::string config_path;
  int n = 0;
  int reps = 0;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::vector<std::string> estimators;
  int workers = 1;
  int folds = 10;
  bool fix_pi = false;
  std::string out_prefix = "simulate_report";
};

ivsel::SimConfig config_from_json(const nlohmann::json& j) {
  ivsel::SimConfig c;
  auto need = [&](const char* key) {
    if (!j.contains(key)) throw ValidationError(std::string("config: missing key '") + key + "'");
    return j.at(key);
  };
  c.n = need("n").get<int>();
  c.kz = need("kz").get<int>();
  c.kx = need("kx").get<int>();
  std::vector<double> beta = need("beta").get<std::vector<double>>();
  std::vector<double> alpha = need("alpha").get<std::vector<double>>();
  std::vector<double> rho = need("rho").get<std::vector<double>>();
  c.beta = Eigen::Map<Eigen::VectorXd>(beta.data(), static_cast<Eigen::Index>(beta.size()));
  c.alpha = Eigen::Map<Eigen::VectorXd>(alpha.data(), static_cast<Eigen::Index>(alpha.size()));
  c.rho = Eigen::Map<Eigen::VectorXd>(rho.data(), static_cast<Eigen::Index>(rho.size()));
  for (const auto& seg : need("pi")) {
    ivsel::PiSegment s;
    s.offset = seg.value("offset", 0);
    s.len = seg.value("len", 0);
    s.lo = seg.value("lo", 1.5);
    s.hi = seg.value("hi", 2.5);
    c.pi.push_back(s);
  }
  c.sigma_z_decay = j.value("sigma_z_decay", 0.5);
  c.error_scale = j.value("error_scale", 1.0);
  c.seed = j.value("seed", static_cast<std::uint64_t>(1));
  c.fix_pi = j.value("fix_pi", false);
  return c;
}

nlohmann::json config_to_json(const ivsel::SimConfig& c) {
  nlohmann::json j;
  j["n"] = c.n;
  j["kz"] = c.kz;
  j["kx"] = c.kx;
  j["beta"] = std::vector<double>(c.beta.data(), c.beta.data() + c.beta.size());
  j["alpha"] = std::vector<double>(c.alpha.data(), c.alpha.data() + c.alpha.size());
  j["rho"] = std::vector<double>(c.rho.data(), c.rho.data() + c.rho.size());
  j["sigma_z_decay"] = c.sigma_z_decay;
  nlohmann::json pi = nlohmann::json::array();
  for (const auto& seg : c.pi)
    pi.push_back({{"offset", seg.offset}, {"len", seg.len}, {"lo", seg.lo}, {"hi", seg.hi}});
  j["pi"] = pi;
  j["error_scale"] = c.error_scale;
  j["seed"] = c.seed;
  j["fix_pi"] = c.fix_pi;
  return j;
}

int run_simulate(const SimulateArgs& args, const std::string& command) {
  auto t0 = std::chrono::steady_clock::now();
  if (args.preset.empty() == args.config_path.empty())
    throw ValidationError("specify exactly one of --preset or --config");

  ivsel::SimConfig config;
  int reps = 1000;
  std::vector<ivsel::Estimator> estimators;
  if (!args.preset.empty()) {
    int n = args.n > 0 ? args.n : 2000;
    if (args.preset == "table3") {
      config = ivsel::SimConfig::dense_design(n, 1);
      estimators = ivsel::dense_design_estimators();
    } else if (args.preset == "table4") {
      config = ivsel::SimConfig::block_design(n, 1);
      estimators = ivsel::block_design_estimators();
    } else {
      throw ValidationError("unknown preset: " + args.preset + " (expected table3 or table4)");
    }
  } else {
    std::ifstream in(args.config_path);
    if (!in) throw ValidationError("cannot open config file: " + args.config_path);
    nlohmann::json doc;
    try {
      in >> doc;
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError(std::string("config file is not valid JSON: ") + e.what());
    }
    config = config_from_json(doc);
    if (args.n > 0) config.n = args.n;
    if (doc.contains("reps")) reps = doc.at("reps").get<int>();
    if (doc.contains("estimators"))
      for (const auto& name : doc.at("estimators")) {
        auto e = ivsel::estimator_from_name(name.get<std::string>());
        if (!e) throw ValidationError("unknown estimator: " + name.get<std::string>());
        estimators.push_back(*e);
      }
    if (estimators.empty()) estimators = ivsel::dense_design_estimators();
  }

  if (args.reps > 0) reps = args.reps;
  if (args.seed_given)
    config.seed = args.seed;
  else if (!args.preset.empty())
    config.seed = entropy_seed();
  if (args.fix_pi) config.fix_pi = true;
  if (!args.estimators.empty()) {
    estimators.clear();
    for (const auto& name : args.estimators) {
      auto e = ivsel::estimator_from_name(name);
      if (!e) throw ValidationError("unknown estimator: " + name);
      estimators.push_back(*e);
    }
  }

  ivsel::StudyOptions options;
  options.workers = args.workers;
  options.cv_folds = args.folds;
  ivsel::StudyResult study = ivsel::run_study(config, reps, estimators, options);

  nlohmann::json config_echo = config_to_json(config);
  config_echo["reps"] = reps;
  config_echo["workers"] = args.workers;
  config_echo["folds"] = args.folds;
  if (!args.preset.empty()) config_echo["preset"] = args.preset;

  double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  nlohmann::json report = ivsel::run_report(command, config_echo, ivsel::study_to_json(study), wall);
  write_file(args.out_prefix + ".json", report.dump(2) + "\n");
  write_file(args.out_prefix + ".csv", ivsel::study_to_csv(study));

  std::cout << ivsel::study_to_text(study);
  std::cout << "reports written to " << args.out_prefix << ".json and " << args.out_prefix
            << ".csv\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Valid-instrument selection for linear models with multiple exposures"};
  app.require_subcommand(1);

  SelectArgs sel;
  CLI::App* select_cmd = app.add_subcommand("select", "Select valid instruments from a CSV dataset");
  select_cmd->add_option("--data", sel.data_path, "CSV file with a header row")->required();
  select_cmd->add_option("--outcome", sel.outcome, "outcome column")->required();
  select_cmd->add_option("--exposures", sel.exposures, "exposure columns")
      ->required()
      ->delimiter(',');
  select_cmd->add_option("--instruments", sel.instruments, "instrument columns")
      ->required()
      ->delimiter(',');
  select_cmd->add_option("--covariates", sel.covariates, "exogenous covariate columns")
      ->delimiter(',');
  select_cmd->add_option("--blocks", sel.blocks_path,
                         "JSON file mapping instruments to the exposures they move");
  select_cmd->add_option("--method", sel.method, "sargan-dt | cv-min | cv-1se | exhaustive");
  select_cmd->add_option("--p-threshold", sel.p_threshold,
                         "Sargan acceptance threshold, or 'auto' for 0.1/log(n)");
  select_cmd->add_option("--nu", sel.nu, "adaptive weight exponent");
  select_cmd->add_option("--folds", sel.folds, "cross-validation folds");
  select_cmd->add_option("--cap", sel.cap, "subset enumeration cap");
  auto* sel_seed = select_cmd->add_option("--seed", sel.seed, "random seed (cv fold shuffle)");
  select_cmd->add_option("--out", sel.out_prefix, "output prefix for the JSON report");

  SimulateArgs sim;
  CLI::App* simulate_cmd = app.add_subcommand("simulate", "Run a Monte Carlo study");
  simulate_cmd->add_option("--preset", sim.preset, "table3 | table4");
  simulate_cmd->add_option("--config", sim.config_path, "JSON study configuration");
  simulate_cmd->add_option("--n", sim.n, "sample size per replication");
  simulate_cmd->add_option("--reps", sim.reps, "number of replications");
  auto* sim_seed = simulate_cmd->add_option("--seed", sim.seed, "master seed");
  simulate_cmd->add_option("--estimators", sim.estimators, "estimators to run")->delimiter(',');
  simulate_cmd->add_option("--workers", sim.workers, "worker threads");
  simulate_cmd->add_option("--folds", sim.folds, "cross-validation folds");
  simulate_cmd->add_flag("--fix-pi", sim.fix_pi, "hold first-stage coefficients fixed across reps");
  simulate_cmd->add_option("--out", sim.out_prefix, "output prefix for reports");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  sel.seed_given = sel_seed->count() > 0;
  sim.seed_given = sim_seed->count() > 0;
  const std::string command = join_args(argc, argv);

  try {
    if (select_cmd->parsed()) return run_select(sel, command);
    return run_simulate(sim, command);
  } catch (const ivsel::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ivsel::NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
