#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "moshpit/core.hpp"
#include "moshpit/protocols.hpp"
#include "moshpit/rng.hpp"
#include "moshpit/theory.hpp"

#ifndef MOSHPIT_BUILD_ID
#define MOSHPIT_BUILD_ID "untracked"
#endif

namespace moshpit::harness {

using json = nlohmann::json;

// Raised on malformed configuration; the CLI maps it to exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  std::vector<protocols::ProtocolKind> protocol_list;
  std::vector<std::uint32_t> n_list;
  GridConfig grid{32, 2, 1};
  std::vector<double> p_list;
  std::uint32_t seeds = 100;
  std::uint32_t round_cap = 50;
  std::vector<double> thresholds{1e-9, 1e-4};
  std::uint32_t dim = 1;         // parameter vector length per peer
  std::string init = "uniform";  // "uniform" [0,1) or "normal" N(0,1)
  std::uint64_t seed_base = 0;
  std::uint32_t jobs = 1;
  std::string out_path = "results.csv";

  void validate() const {
    if (protocol_list.empty()) throw ConfigError("config: no protocols");
    if (n_list.empty()) throw ConfigError("config: no N values");
    if (p_list.empty()) throw ConfigError("config: no p values");
    if (thresholds.empty()) throw ConfigError("config: no thresholds");
    if (seeds < 1) throw ConfigError("config: seeds >= 1");
    if (round_cap < 1) throw ConfigError("config: round cap >= 1");
    if (dim < 1) throw ConfigError("config: dim >= 1");
    if (init != "uniform" && init != "normal")
      throw ConfigError("config: init must be \"uniform\" or \"normal\"");
    if (jobs < 1) throw ConfigError("config: jobs >= 1");
    try {
      grid.validate();
    } catch (const std::exception& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
    for (double p : p_list)
      if (p < 0.0 || p >= 1.0) throw ConfigError("config: p in [0,1)");
    for (double t : thresholds)
      if (t <= 0.0) throw ConfigError("config: thresholds > 0");
    for (std::uint32_t n : n_list) {
      if (n < 3) throw ConfigError("config: N >= 3");
      for (auto kind : protocol_list) {
        if (kind == protocols::ProtocolKind::Moshpit && n > grid.capacity())
          throw ConfigError("config: N exceeds grid capacity M^d");
      }
    }
  }

  static ExperimentConfig from_json(const json& j) {
    ExperimentConfig cfg;
    try {
      if (j.contains("protocols"))
        for (const auto& s : j.at("protocols"))
          cfg.protocol_list.push_back(
              protocols::protocol_from_string(s.get<std::string>()));
      if (j.contains("N")) cfg.n_list = j.at("N").get<std::vector<std::uint32_t>>();
      if (j.contains("grid")) {
        const auto& g = j.at("grid");
        cfg.grid.peers_per_axis = g.value("M", cfg.grid.peers_per_axis);
        cfg.grid.dims = g.value("d", cfg.grid.dims);
      }
      if (j.contains("p")) cfg.p_list = j.at("p").get<std::vector<double>>();
      cfg.seeds = j.value("seeds", cfg.seeds);
      cfg.round_cap = j.value("round_cap", cfg.round_cap);
      if (j.contains("thresholds"))
        cfg.thresholds = j.at("thresholds").get<std::vector<double>>();
      cfg.dim = j.value("dim", cfg.dim);
      cfg.init = j.value("init", cfg.init);
      cfg.seed_base = j.value("seed_base", cfg.seed_base);
      cfg.jobs = j.value("jobs", cfg.jobs);
      cfg.out_path = j.value("out", cfg.out_path);
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
    cfg.grid.rounds = cfg.round_cap;
    cfg.validate();
    return cfg;
  }

  json to_json() const {
    json j;
    for (auto kind : protocol_list)
      j["protocols"].push_back(protocols::to_string(kind));
    j["N"] = n_list;
    j["grid"] = {{"M", grid.peers_per_axis}, {"d", grid.dims}};
    j["p"] = p_list;
    j["seeds"] = seeds;
    j["round_cap"] = round_cap;
    j["thresholds"] = thresholds;
    j["dim"] = dim;
    j["init"] = init;
    j["seed_base"] = seed_base;
    j["jobs"] = jobs;
    j["out"] = out_path;
    return j;
  }
};

struct ResultRow {
  std::string protocol;
  std::uint32_t n = 0;
  std::uint32_t m = 0;
  std::uint32_t d = 0;
  double p = 0.0;
  double threshold = 0.0;
  double mean_rounds = 0.0;
  double std_rounds = 0.0;
  std::uint32_t trials = 0;
};

// Per-trial stream isolation: the trial seed mixes seed_base with a hash of
// (protocol, N, p, seed index), so no two cells share a stream.
inline Rng trial_rng(std::uint64_t seed_base, protocols::ProtocolKind kind,
                     std::uint32_t n, double p, std::uint32_t seed_index) {
  std::uint64_t p_bits;
  static_assert(sizeof(p_bits) == sizeof(p));
  std::memcpy(&p_bits, &p, sizeof(p));
  std::uint64_t mix = seed_base ^ detail::fnv1a(protocols::to_string(kind));
  mix = detail::splitmix64(mix) ^ n;
  mix = detail::splitmix64(mix) ^ p_bits;
  mix = detail::splitmix64(mix) ^ seed_index;
  return Rng(detail::splitmix64(mix));
}

inline protocols::TrialReport run_trial(const ExperimentConfig& cfg,
                                        protocols::ProtocolKind kind,
                                        std::uint32_t n, double p,
                                        std::uint32_t seed_index) {
  const Rng rng = trial_rng(cfg.seed_base, kind, n, p, seed_index);
  auto init_stream = rng.stream("init");
  std::vector<ParamVector> initial(n);
  for (auto& theta : initial) {
    if (cfg.init == "normal") {
      theta = init_stream.normals(cfg.dim);
    } else {
      theta.resize(cfg.dim);
      for (auto& x : theta) x = init_stream.uniform();
    }
  }
  const FailureModel failure{p, {}};
  switch (kind) {
    case protocols::ProtocolKind::Moshpit:
      return protocols::run_moshpit(cfg.grid, initial, failure, rng,
                                    cfg.round_cap);
    case protocols::ProtocolKind::RandomGroups:
      return protocols::run_random_groups(cfg.grid.peers_per_axis, initial,
                                          failure, rng, cfg.round_cap);
    case protocols::ProtocolKind::Gossip:
      return protocols::run_gossip(initial, failure, rng, cfg.round_cap);
    case protocols::ProtocolKind::PushSum:
      return protocols::run_pushsum(initial, failure, rng, cfg.round_cap);
    case protocols::ProtocolKind::AllReduceRestart:
      return protocols::run_allreduce_restart(initial, failure, rng,
                                              cfg.round_cap);
  }
  throw std::logic_error("run_trial: unreachable");
}

struct ExperimentResult {
  std::vector<ResultRow> rows;
};

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();

  struct Cell {
    protocols::ProtocolKind kind;
    std::uint32_t n;
    double p;
  };
  std::vector<Cell> cells;
  for (auto kind : cfg.protocol_list)
    for (auto n : cfg.n_list)
      for (double p : cfg.p_list) cells.push_back({kind, n, p});

  // rounds[cell][threshold][seed]
  std::vector<std::vector<std::vector<std::uint32_t>>> rounds(
      cells.size(), std::vector<std::vector<std::uint32_t>>(
                        cfg.thresholds.size(),
                        std::vector<std::uint32_t>(cfg.seeds, 0)));

  std::atomic<std::size_t> next{0};
  const std::size_t total = cells.size() * cfg.seeds;
  std::exception_ptr first_error;
  std::mutex error_mutex;
  const auto worker = [&] {
    for (;;) {
      const std::size_t idx = next.fetch_add(1);
      if (idx >= total) return;
      const std::size_t cell_idx = idx / cfg.seeds;
      const std::uint32_t seed = static_cast<std::uint32_t>(idx % cfg.seeds);
      const Cell& cell = cells[cell_idx];
      try {
        const auto report = run_trial(cfg, cell.kind, cell.n, cell.p, seed);
        for (std::size_t t = 0; t < cfg.thresholds.size(); ++t) {
          rounds[cell_idx][t][seed] =
              report.rounds_to(cfg.thresholds[t], cfg.round_cap);
        }
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        next.store(total);
        return;
      }
    }
  };

  const std::uint32_t workers = std::min<std::uint32_t>(
      cfg.jobs, static_cast<std::uint32_t>(std::max<std::size_t>(total, 1)));
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::uint32_t w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (first_error) std::rethrow_exception(first_error);

  ExperimentResult result;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    for (std::size_t t = 0; t < cfg.thresholds.size(); ++t) {
      const auto& samples = rounds[c][t];
      double sum = 0.0;
      for (auto r : samples) sum += r;
      const double mean = sum / samples.size();
      double var = 0.0;
      for (auto r : samples) var += (r - mean) * (r - mean);
      var = samples.size() > 1 ? var / (samples.size() - 1) : 0.0;
      ResultRow row;
      row.protocol = protocols::to_string(cells[c].kind);
      row.n = cells[c].n;
      row.m = cfg.grid.peers_per_axis;
      row.d = cfg.grid.dims;
      row.p = cells[c].p;
      row.threshold = cfg.thresholds[t];
      row.mean_rounds = mean;
      row.std_rounds = std::sqrt(var);
      row.trials = cfg.seeds;
      result.rows.push_back(row);
    }
  }
  std::sort(result.rows.begin(), result.rows.end(),
            [](const ResultRow& a, const ResultRow& b) {
              return std::tie(a.protocol, a.n, a.p, a.threshold) <
                     std::tie(b.protocol, b.n, b.p, b.threshold);
            });
  return result;
}

inline std::string format_g6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

inline std::string to_csv(const std::vector<ResultRow>& rows) {
  std::ostringstream out;
  out << "protocol,N,M,d,p,threshold,mean_rounds,std_rounds,trials\n";
  for (const auto& row : rows) {
    out << row.protocol << ',' << row.n << ',' << row.m << ',' << row.d << ','
        << format_g6(row.p) << ',' << format_g6(row.threshold) << ','
        << format_g6(row.mean_rounds) << ',' << format_g6(row.std_rounds)
        << ',' << row.trials << '\n';
  }
  return out.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open output path: " + path);
  out << content;
  if (!out) throw ConfigError("write failed: " + path);
}

// CSV plus a JSON sidecar (<out>.json) recording the config and build id.
inline void write_results(const ExperimentConfig& cfg,
                          const ExperimentResult& result) {
  write_file(cfg.out_path, to_csv(result.rows));
  json sidecar;
  sidecar["config"] = cfg.to_json();
  sidecar["build_id"] = MOSHPIT_BUILD_ID;
  write_file(cfg.out_path + ".json", sidecar.dump(2) + "\n");
}

// Oracle self-checks; `heavy` selects the acceptance-grade sample counts.
inline json run_theory_suite(std::uint64_t seed_base, bool heavy = false) {
  const Rng rng(seed_base ^ 0xD1CEBA5Eu);
  json checks = json::array();
  bool all_pass = true;
  const auto add = [&](const std::string& name, bool pass, json detail) {
    detail["name"] = name;
    detail["pass"] = pass;
    checks.push_back(detail);
    all_pass = all_pass && pass;
  };

  {  // Hand-enumerated moment values.
    const theory::MomentInputs inp{2, 0.5};
    const double v1 = theory::m1(inp), v2 = theory::m2(inp);
    add("moments_hand_values",
        std::abs(v1 - 0.875) < 1e-12 && std::abs(v2 - 0.8125) < 1e-12,
        {{"m1", v1}, {"m2", v2}});
    bool unit = true;
    for (double p : {0.0, 0.3, 1.0})
      unit = unit && std::abs(theory::m1({1, p}) - 1.0) < 1e-15;
    add("m1_single_trial_unit", unit, {});
  }

  {  // Monte-Carlo agreement with the closed forms.
    const std::uint64_t samples = heavy ? 1000000 : 100000;
    auto stream = rng.stream("moments");
    bool pass = true;
    double worst = 0.0;
    for (std::uint32_t m = 1; m <= 20; m += (heavy ? 1 : 4)) {
      for (double p : {0.0, 0.1, 0.25, 0.5, 2.0 / 3.0, 0.8, 0.9, 0.95, 1.0}) {
        const theory::MomentInputs inp{m, p};
        const auto mc = theory::mc_moments(inp, samples, stream);
        // Degenerate p gives zero-variance estimates; only accumulation
        // rounding separates them from the closed form.
        const double z1 = std::abs(mc.first.mean - theory::m1(inp)) /
                          std::max(mc.first.std_error, 2.5e-10);
        const double z2 = std::abs(mc.second.mean - theory::m2(inp)) /
                          std::max(mc.second.std_error, 2.5e-10);
        worst = std::max({worst, z1, z2});
        pass = pass && z1 <= 4.0 && z2 <= 4.0;
      }
    }
    add("moments_monte_carlo", pass,
        {{"samples", samples}, {"worst_z", worst}});
  }

  {  // Contraction: enumeration vs Monte Carlo, plus informational deltas
     // against the (r-1)/N + r/N^2 factor.
    const std::uint64_t samples = heavy ? 100000 : 20000;
    auto stream = rng.stream("contraction");
    bool pass = true;
    json deltas = json::array();
    for (std::uint32_t n = 2; n <= 6; ++n) {
      std::vector<double> values(n);
      for (auto& v : values) v = stream.normal();
      for (const auto& sizes : theory::partitions_of(n)) {
        const theory::SplitSpec spec{n, sizes};
        const double exact = theory::exhaustive_contraction_oracle(spec, values);
        const auto mc = theory::mc_contraction_ratio(spec, values, samples,
                                                     stream);
        // Degenerate splits are deterministic on both sides; allow rounding.
        pass = pass && std::abs(mc.mean - exact) <= 3.0 * mc.std_error + 1e-12;
        deltas.push_back({{"N", n},
                          {"groups", sizes},
                          {"oracle", exact},
                          {"reported_factor",
                           theory::paper_contraction_factor(spec)},
                          {"mc", mc.mean}});
      }
    }
    add("contraction_oracle_vs_mc", pass,
        {{"samples", samples}, {"informational_deltas", deltas}});
  }

  {  // Simplified variance bound dominates the exact expression.
    bool pass = true;
    for (std::uint32_t m = 11; m <= 40; ++m) {
      for (double p = 2.0 / 3.0; p <= 1.0 + 1e-12; p += 1.0 / 24.0) {
        const double pc = std::min(p, 1.0);
        for (std::uint32_t t = 1; t <= 6; ++t) {
          pass = pass && theory::variance_bound(m, pc, t, 1.0) <=
                             theory::variance_bound_simplified(m, t, 1.0) *
                                 (1.0 + 1e-12);
        }
      }
    }
    add("simplified_bound_dominates", pass, {});
  }

  {  // AR-restart closed form vs direct geometric simulation.
    auto stream = rng.stream("ar_restart");
    const std::uint64_t samples = heavy ? 200000 : 50000;
    bool pass = true;
    for (std::uint32_t n : {64u, 512u}) {
      for (double p : {0.001, 0.005, 0.01}) {
        const std::uint32_t cap = 50;
        const double q = std::pow(1.0 - p, static_cast<double>(n));
        double sum = 0.0, sum_sq = 0.0;
        for (std::uint64_t s = 0; s < samples; ++s) {
          std::uint32_t g = cap;
          for (std::uint32_t k = 1; k <= cap; ++k) {
            if (stream.bernoulli(q)) {
              g = k;
              break;
            }
          }
          sum += g;
          sum_sq += static_cast<double>(g) * g;
        }
        const double mean = sum / samples;
        const double var =
            std::max(0.0, sum_sq / samples - mean * mean);
        const double se = std::sqrt(var / samples);
        pass = pass &&
               std::abs(mean - theory::ar_restart_expected_rounds(n, p, cap)) <=
                   3.0 * std::max(se, 1e-12);
      }
    }
    add("ar_restart_closed_form", pass, {{"samples", samples}});
  }

  json out;
  out["checks"] = checks;
  out["pass"] = all_pass;
  out["build_id"] = MOSHPIT_BUILD_ID;
  return out;
}

}  // namespace moshpit::harness
