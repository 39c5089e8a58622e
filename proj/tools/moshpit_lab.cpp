// moshpit-lab: experiment runner around the moshpit headers.
//
// Subcommands:
//   average  - group-averaging protocol sweeps, CSV + JSON sidecar output
//   sgd      - decentralized SGD run, JSON trajectory output
//   theory   - oracle self-check suite, JSON verdicts
//   balance  - minimax partition weights for a bandwidth list
//
// Exit codes: 0 success, 1 suite failure, 2 configuration error.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "moshpit/moshpit.hpp"

namespace {

using json = nlohmann::json;

json load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw moshpit::harness::ConfigError("cannot read config: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw moshpit::harness::ConfigError(std::string("config parse: ") +
                                        e.what());
  }
  return j;
}

std::optional<std::uint64_t> env_seed() {
  const char* raw = std::getenv("MOSHPIT_SEED");
  if (raw == nullptr || *raw == '\0') return std::nullopt;
  try {
    return std::stoull(raw);
  } catch (const std::exception&) {
    throw moshpit::harness::ConfigError("MOSHPIT_SEED is not an integer");
  }
}

struct CommonArgs {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::uint32_t jobs = 0;
};

void attach_common(CLI::App* cmd, CommonArgs& args, bool config_required) {
  auto* opt = cmd->add_option("--config", args.config_path, "config file (JSON)");
  if (config_required) opt->required();
  cmd->add_option("--seed", args.seed, "seed base (overrides config)");
  cmd->add_option("--out", args.out, "output path (overrides config)");
  cmd->add_option("--jobs", args.jobs, "worker threads (overrides config)");
}

// Precedence: MOSHPIT_SEED env > --seed flag > config file value.
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag,
                           std::uint64_t from_config) {
  if (auto env = env_seed()) return *env;
  if (flag) return *flag;
  return from_config;
}

int cmd_average(const CommonArgs& args) {
  auto cfg = moshpit::harness::ExperimentConfig::from_json(
      load_config(args.config_path));
  cfg.seed_base = resolve_seed(args.seed, cfg.seed_base);
  if (!args.out.empty()) cfg.out_path = args.out;
  if (args.jobs > 0) cfg.jobs = args.jobs;
  cfg.validate();
  const auto result = moshpit::harness::run_experiment(cfg);
  moshpit::harness::write_results(cfg, result);
  std::cout << "wrote " << result.rows.size() << " rows to " << cfg.out_path
            << "\n";
  return 0;
}

std::unique_ptr<moshpit::optimizer::Objective> make_objective(
    const json& spec, moshpit::RngStream& stream) {
  const std::string type = spec.value("type", "quadratic");
  const std::size_t dim = spec.value("dim", 8);
  if (type == "quadratic") {
    moshpit::ParamVector target(dim);
    for (auto& t : target) t = stream.normal();
    return std::make_unique<moshpit::optimizer::Quadratic>(
        dim, spec.value("L", 1.0), spec.value("mu", 0.1), std::move(target));
  }
  if (type == "logistic") {
    return std::make_unique<moshpit::optimizer::LogisticRegression>(
        moshpit::optimizer::LogisticRegression::synthetic(
            dim, spec.value("samples", 200), spec.value("l2", 0.01), stream));
  }
  if (type == "rosenbrock") {
    return std::make_unique<moshpit::optimizer::RosenbrockLike>(dim);
  }
  throw moshpit::harness::ConfigError("unknown objective: " + type);
}

int cmd_sgd(const CommonArgs& args) {
  const json j = load_config(args.config_path);
  moshpit::optimizer::OptimizerConfig cfg;
  try {
    cfg.gamma = j.value("gamma", cfg.gamma);
    cfg.tau = j.value("tau", cfg.tau);
    cfg.steps = j.value("steps", cfg.steps);
    cfg.sigma = j.value("sigma", cfg.sigma);
    cfg.n_peers = j.value("N", cfg.n_peers);
    if (j.contains("grid")) {
      cfg.grid.peers_per_axis = j.at("grid").value("M", cfg.grid.peers_per_axis);
      cfg.grid.dims = j.at("grid").value("d", cfg.grid.dims);
    }
    cfg.inner_rounds = j.value("inner_rounds", cfg.inner_rounds);
  } catch (const json::exception& e) {
    throw moshpit::harness::ConfigError(std::string("config: ") + e.what());
  }
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw moshpit::harness::ConfigError(e.what());
  }

  const std::uint64_t seed = resolve_seed(args.seed, j.value("seed_base", 0ULL));
  const moshpit::Rng rng(seed);
  auto obj_stream = rng.stream("objective");
  const auto objective = make_objective(j.value("objective", json::object()),
                                        obj_stream);

  std::vector<moshpit::optimizer::MembershipEvent> schedule;
  for (const auto& ev : j.value("schedule", json::array())) {
    schedule.push_back({ev.value("step", 0u), ev.value("delta", 0)});
  }

  moshpit::ParamVector theta0(objective->dim(), 0.0);
  if (j.contains("theta0"))
    theta0 = j.at("theta0").get<moshpit::ParamVector>();

  const auto result =
      moshpit::optimizer::run_moshpit_sgd(cfg, *objective, theta0, schedule, rng);

  json out;
  out["seed_base"] = seed;
  out["build_id"] = MOSHPIT_BUILD_ID;
  out["f_gap"] = result.f_gap;
  out["f_gap_weighted"] = result.f_gap_weighted;
  out["grad_norm_sq"] = result.grad_norm_sq;
  out["dispersion"] = result.diagnostics.dispersion;
  out["delta_aq_hat"] = result.diagnostics.delta_aq_hat;
  out["delta_pv1_hat"] = result.diagnostics.delta_pv1_hat;
  out["delta_pv2_hat"] = result.diagnostics.delta_pv2_hat;
  out["sigma_hat"] = result.diagnostics.sigma_hat;
  // Order-units iteration predictions; annotation only, nothing gates on it.
  if (objective->strong_convexity() > 0.0) {
    out["iteration_bound_strongly_convex"] =
        moshpit::optimizer::theoretical_iteration_bound(
            *objective, cfg, result.diagnostics, 1e-3, true);
  }
  out["iteration_bound_convex"] =
      moshpit::optimizer::theoretical_iteration_bound(
          *objective, cfg, result.diagnostics, 1e-3, false);

  const std::string out_path = args.out.empty()
                                   ? j.value("out", std::string("sgd.json"))
                                   : args.out;
  moshpit::harness::write_file(out_path, out.dump(2) + "\n");
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

int cmd_theory(const CommonArgs& args) {
  json j = json::object();
  if (!args.config_path.empty()) j = load_config(args.config_path);
  const std::uint64_t seed = resolve_seed(args.seed, j.value("seed_base", 0ULL));
  const bool heavy = j.value("heavy", false);
  const json report = moshpit::harness::run_theory_suite(seed, heavy);
  const std::string out_path =
      args.out.empty() ? j.value("out", std::string()) : args.out;
  if (out_path.empty()) {
    std::cout << report.dump(2) << "\n";
  } else {
    moshpit::harness::write_file(out_path, report.dump(2) + "\n");
    std::cout << "wrote " << out_path << "\n";
  }
  return report.at("pass").get<bool>() ? 0 : 1;
}

int cmd_balance(const CommonArgs& args, const std::vector<double>& flag_bw) {
  std::vector<double> bandwidths = flag_bw;
  if (bandwidths.empty()) {
    if (args.config_path.empty())
      throw moshpit::harness::ConfigError(
          "balance: pass --bandwidth values or a config with \"bandwidths\"");
    const json j = load_config(args.config_path);
    try {
      bandwidths = j.at("bandwidths").get<std::vector<double>>();
    } catch (const json::exception& e) {
      throw moshpit::harness::ConfigError(std::string("config: ") + e.what());
    }
  }
  moshpit::allreduce::BandwidthProfile profile{bandwidths};
  try {
    profile.validate();
  } catch (const std::invalid_argument& e) {
    throw moshpit::harness::ConfigError(e.what());
  }
  const auto result = moshpit::allreduce::balance_partition(profile);
  json out;
  out["bandwidths"] = bandwidths;
  out["weights"] = result.weights.w;
  out["objective"] = result.objective;
  if (args.out.empty()) {
    std::cout << out.dump(2) << "\n";
  } else {
    moshpit::harness::write_file(args.out, out.dump(2) + "\n");
    std::cout << "wrote " << args.out << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"moshpit-lab: decentralized averaging experiments"};
  app.require_subcommand(1);

  CommonArgs average_args, sgd_args, theory_args, balance_args;
  std::vector<double> balance_bw;

  auto* average = app.add_subcommand("average", "protocol averaging sweeps");
  attach_common(average, average_args, true);
  auto* sgd = app.add_subcommand("sgd", "decentralized SGD run");
  attach_common(sgd, sgd_args, true);
  auto* theory = app.add_subcommand("theory", "oracle self-check suite");
  attach_common(theory, theory_args, false);
  auto* balance = app.add_subcommand("balance", "partition weight solver");
  attach_common(balance, balance_args, false);
  balance->add_option("--bandwidth", balance_bw, "bandwidth list (Mb/s)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (average->parsed()) return cmd_average(average_args);
    if (sgd->parsed()) return cmd_sgd(sgd_args);
    if (theory->parsed()) return cmd_theory(theory_args);
    if (balance->parsed()) return cmd_balance(balance_args, balance_bw);
  } catch (const moshpit::harness::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
