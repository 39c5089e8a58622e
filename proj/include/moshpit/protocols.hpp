#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "moshpit/allreduce.hpp"
#include "moshpit/core.hpp"
#include "moshpit/matchmaking.hpp"
#include "moshpit/rng.hpp"
#include "moshpit/theory.hpp"

namespace moshpit::protocols {

enum class ProtocolKind {
  Moshpit,
  RandomGroups,
  Gossip,
  PushSum,
  AllReduceRestart,
};

inline const char* to_string(ProtocolKind kind) {
  switch (kind) {
    case ProtocolKind::Moshpit: return "moshpit";
    case ProtocolKind::RandomGroups: return "random_groups";
    case ProtocolKind::Gossip: return "gossip";
    case ProtocolKind::PushSum: return "pushsum";
    case ProtocolKind::AllReduceRestart: return "allreduce_restart";
  }
  return "?";
}

inline ProtocolKind protocol_from_string(const std::string& s) {
  if (s == "moshpit") return ProtocolKind::Moshpit;
  if (s == "random_groups") return ProtocolKind::RandomGroups;
  if (s == "gossip") return ProtocolKind::Gossip;
  if (s == "pushsum") return ProtocolKind::PushSum;
  if (s == "allreduce_restart") return ProtocolKind::AllReduceRestart;
  throw std::invalid_argument("unknown protocol: " + s);
}

// Per-trial record: distortion after each executed round, plus bookkeeping.
struct TrialReport {
  double initial_distortion = 0.0;
  std::vector<double> distortion;           // index t-1 = after round t
  std::vector<double> mean_drift;           // relative drift of the global mean
  std::vector<std::uint32_t> active_counts; // peers that did not fail in round t
  double cost_units = 0.0;                  // abstract, never gates a test

  // Rounds needed to reach the threshold, capped; 0 if already there.
  std::uint32_t rounds_to(double threshold, std::uint32_t cap) const {
    if (initial_distortion <= threshold) return 0;
    for (std::size_t t = 0; t < distortion.size() && t < cap; ++t) {
      if (distortion[t] <= threshold) return static_cast<std::uint32_t>(t + 1);
    }
    return cap;
  }
};

namespace detail {

inline double record_round(TrialReport& report,
                           const std::vector<ParamVector>& vectors,
                           const ParamVector& reference,
                           std::uint32_t active) {
  const double d = distortion(vectors, reference);
  report.distortion.push_back(d);
  const ParamVector mean = mean_of(vectors);
  double drift_sq = 0.0, ref_sq = 0.0;
  for (std::size_t j = 0; j < reference.size(); ++j) {
    drift_sq += (mean[j] - reference[j]) * (mean[j] - reference[j]);
    ref_sq += reference[j] * reference[j];
  }
  report.mean_drift.push_back(std::sqrt(drift_sq) /
                              std::max(std::sqrt(ref_sq), 1e-300));
  report.active_counts.push_back(active);
  return d;
}

inline std::vector<bool> draw_failures(RngStream& stream, std::size_t n,
                                       double p) {
  std::vector<bool> failed(n, false);
  if (p <= 0.0) return failed;
  std::uint32_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    failed[i] = stream.bernoulli(p);
    count += failed[i];
  }
  (void)count;
  return failed;
}

}  // namespace detail

// Moshpit All-Reduce over `rounds` rounds.  Peers occupy distinct random
// grid cells (the full grid is a random relabeling, which keeps the d-round
// exactness); per-round priorities are randomly skewed local clocks, so the
// rank a peer draws inside its group — and therefore its next key — is
// random, matching the random peer order the correctness theorem assumes.
// A peer failing mid-all-reduce voids the round for its whole group; every
// key still advances.
inline TrialReport run_moshpit(const GridConfig& grid,
                               const std::vector<ParamVector>& initial,
                               const FailureModel& failure, const Rng& rng,
                               std::uint32_t rounds) {
  grid.validate();
  failure.validate();
  const std::size_t n = initial.size();
  if (n == 0) throw std::invalid_argument("run_moshpit: no peers");
  if (static_cast<std::uint64_t>(n) > grid.capacity())
    throw std::invalid_argument("run_moshpit: N exceeds grid capacity M^d");

  const ParamVector reference = mean_of(initial);
  TrialReport report;
  report.initial_distortion = distortion(initial, reference);

  // Distinct random cells via a partial Fisher-Yates over [0, capacity).
  auto cell_stream = rng.stream("cells");
  std::vector<std::uint64_t> cells(grid.capacity());
  std::iota(cells.begin(), cells.end(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + cell_stream.below(cells.size() - i);
    std::swap(cells[i], cells[j]);
  }

  std::vector<ParamVector> vectors = initial;
  std::vector<GroupKey> keys(n);
  for (std::size_t i = 0; i < n; ++i) {
    keys[i] = matchmaking::initial_index(cells[i], grid);
  }

  auto fail_stream = rng.stream("failures");
  auto clock_stream = rng.stream("priorities");
  const std::uint32_t m = grid.peers_per_axis;

  for (std::uint32_t round = 1; round <= rounds; ++round) {
    const std::vector<bool> failed =
        detail::draw_failures(fail_stream, n, failure.p_round);

    std::vector<matchmaking::MatchPeer> declared(n);
    for (std::size_t i = 0; i < n; ++i) {
      declared[i] = matchmaking::MatchPeer{
          static_cast<PeerId>(i), keys[i], clock_stream() >> 16, 0};
    }
    const auto groups = matchmaking::form_groups_uncontested(declared, m);

    std::uint32_t active = 0;
    for (const auto& group : groups) {
      std::vector<ParamVector> inputs;
      std::vector<bool> group_failed;
      inputs.reserve(group.members.size());
      for (PeerId id : group.members) {
        inputs.push_back(vectors[id]);
        group_failed.push_back(failed[id]);
      }
      const auto outcome = allreduce::butterfly_allreduce(
          inputs, allreduce::PartitionWeights::uniform(inputs.size()),
          group_failed);
      for (std::size_t k = 0; k < group.members.size(); ++k) {
        const PeerId id = group.members[k];
        if (outcome.completed) vectors[id] = outcome.vectors[k];
        keys[id] = matchmaking::next_group_key(keys[id], outcome.chunks[k], grid);
        active += !failed[id];
      }
    }
    detail::record_round(report, vectors, reference, active);
  }

  report.cost_units = theory::complexity_estimate(
      rounds, static_cast<std::uint32_t>(n), m,
      static_cast<std::uint32_t>(initial.front().size()));
  return report;
}

// Random-group averaging: each round, peers that did not fail are shuffled
// and cut into ceil(N/M) near-equal contiguous groups, each averaged exactly.
inline TrialReport run_random_groups(std::uint32_t group_size,
                                     const std::vector<ParamVector>& initial,
                                     const FailureModel& failure, const Rng& rng,
                                     std::uint32_t rounds) {
  failure.validate();
  const std::size_t n = initial.size();
  if (n == 0) throw std::invalid_argument("run_random_groups: no peers");
  if (group_size < 1)
    throw std::invalid_argument("run_random_groups: group size >= 1");

  const ParamVector reference = mean_of(initial);
  TrialReport report;
  report.initial_distortion = distortion(initial, reference);

  std::vector<ParamVector> vectors = initial;
  auto fail_stream = rng.stream("failures");
  auto split_stream = rng.stream("splits");
  const std::size_t r_groups = (n + group_size - 1) / group_size;

  for (std::uint32_t round = 1; round <= rounds; ++round) {
    const std::vector<bool> failed =
        detail::draw_failures(fail_stream, n, failure.p_round);
    std::vector<PeerId> alive;
    for (std::size_t i = 0; i < n; ++i)
      if (!failed[i]) alive.push_back(static_cast<PeerId>(i));
    split_stream.shuffle(alive);

    const std::size_t n_alive = alive.size();
    if (n_alive > 0) {
      const std::size_t r = std::min(r_groups, n_alive);
      const std::size_t base = n_alive / r, extra = n_alive % r;
      std::size_t offset = 0;
      for (std::size_t g = 0; g < r; ++g) {
        const std::size_t size = base + (g < extra ? 1 : 0);
        std::vector<const ParamVector*> members;
        for (std::size_t k = offset; k < offset + size; ++k)
          members.push_back(&vectors[alive[k]]);
        const ParamVector avg = group_mean(members);
        for (std::size_t k = offset; k < offset + size; ++k)
          vectors[alive[k]] = avg;
        offset += size;
      }
    }
    detail::record_round(report, vectors, reference,
                         static_cast<std::uint32_t>(n_alive));
  }

  report.cost_units = theory::complexity_estimate(
      rounds, static_cast<std::uint32_t>(n), group_size,
      static_cast<std::uint32_t>(initial.front().size()));
  return report;
}

// Synchronous ring gossip with uniform 1/3 weights.  A failed peer holds its
// value; its neighbors fold the missing 1/3 share back into themselves,
// which keeps the mixing matrix doubly stochastic under any failure pattern.
inline TrialReport run_gossip(const std::vector<ParamVector>& initial,
                              const FailureModel& failure, const Rng& rng,
                              std::uint32_t rounds) {
  failure.validate();
  const std::size_t n = initial.size();
  if (n < 3) throw std::invalid_argument("run_gossip: N >= 3");

  const ParamVector reference = mean_of(initial);
  const std::size_t dim = reference.size();
  TrialReport report;
  report.initial_distortion = distortion(initial, reference);

  std::vector<ParamVector> vectors = initial;
  std::vector<ParamVector> next(n, ParamVector(dim));
  auto fail_stream = rng.stream("failures");

  for (std::uint32_t round = 1; round <= rounds; ++round) {
    const std::vector<bool> failed =
        detail::draw_failures(fail_stream, n, failure.p_round);
    std::uint32_t active = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (failed[i]) {
        next[i] = vectors[i];
        continue;
      }
      ++active;
      const std::size_t left = (i + n - 1) % n, right = (i + 1) % n;
      double self_weight = 1.0 / 3.0;
      for (std::size_t j = 0; j < dim; ++j) next[i][j] = 0.0;
      for (std::size_t nb : {left, right}) {
        if (failed[nb]) {
          self_weight += 1.0 / 3.0;
        } else {
          for (std::size_t j = 0; j < dim; ++j)
            next[i][j] += vectors[nb][j] / 3.0;
        }
      }
      for (std::size_t j = 0; j < dim; ++j)
        next[i][j] += self_weight * vectors[i][j];
    }
    std::swap(vectors, next);
    detail::record_round(report, vectors, reference, active);
  }

  report.cost_units = theory::complexity_estimate(
      rounds, static_cast<std::uint32_t>(n), 3, static_cast<std::uint32_t>(dim));
  return report;
}

// Classic push-sum over a deterministic exponential graph: at round t each
// peer pushes half of its (value, weight) mass to the neighbor offset by
// 2^(t mod ceil(log2 N)).  Failed peers hold mass; pushes to a failed peer
// bounce back to the sender, so total mass is conserved either way.
inline TrialReport run_pushsum(const std::vector<ParamVector>& initial,
                               const FailureModel& failure, const Rng& rng,
                               std::uint32_t rounds) {
  failure.validate();
  const std::size_t n = initial.size();
  if (n < 2) throw std::invalid_argument("run_pushsum: N >= 2");

  const ParamVector reference = mean_of(initial);
  const std::size_t dim = reference.size();
  TrialReport report;
  report.initial_distortion = distortion(initial, reference);

  std::vector<ParamVector> values = initial;
  std::vector<double> weights(n, 1.0);
  std::uint32_t log_n = 0;
  while ((std::size_t{1} << log_n) < n) ++log_n;
  if (log_n == 0) log_n = 1;

  auto fail_stream = rng.stream("failures");
  std::vector<ParamVector> inbox_v(n, ParamVector(dim, 0.0));
  std::vector<double> inbox_w(n, 0.0);
  std::vector<ParamVector> estimates(n, ParamVector(dim));

  for (std::uint32_t round = 1; round <= rounds; ++round) {
    const std::vector<bool> failed =
        detail::draw_failures(fail_stream, n, failure.p_round);
    const std::size_t offset =
        std::size_t{1} << ((round - 1) % log_n);

    for (std::size_t i = 0; i < n; ++i) {
      std::fill(inbox_v[i].begin(), inbox_v[i].end(), 0.0);
      inbox_w[i] = 0.0;
    }
    std::uint32_t active = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (failed[i]) continue;
      ++active;
      const std::size_t target = (i + offset) % n;
      if (failed[target]) continue;  // push bounces, sender keeps its mass
      for (std::size_t j = 0; j < dim; ++j) {
        inbox_v[target][j] += 0.5 * values[i][j];
        values[i][j] *= 0.5;
      }
      inbox_w[target] += 0.5 * weights[i];
      weights[i] *= 0.5;
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < dim; ++j) values[i][j] += inbox_v[i][j];
      weights[i] += inbox_w[i];
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < dim; ++j)
        estimates[i][j] = values[i][j] / weights[i];
    }
    detail::record_round(report, estimates, reference, active);
    // The conserved quantity here is mass, not the estimate mean: overwrite
    // the drift entry with the residual of (total value)/(total weight)
    // against the true mean, plus the weight-sum deviation from N.
    double w_total = 0.0;
    for (double w : weights) w_total += w;
    ParamVector v_total(dim, 0.0);
    for (const auto& v : values) {
      for (std::size_t j = 0; j < dim; ++j) v_total[j] += v[j];
    }
    double drift_sq = 0.0, ref_sq = 0.0;
    for (std::size_t j = 0; j < dim; ++j) {
      const double diff = v_total[j] / w_total - reference[j];
      drift_sq += diff * diff;
      ref_sq += reference[j] * reference[j];
    }
    report.mean_drift.back() =
        std::max(std::sqrt(drift_sq) / std::max(std::sqrt(ref_sq), 1e-300),
                 std::abs(w_total - static_cast<double>(n)) / n);
  }

  report.cost_units = theory::complexity_estimate(
      rounds, static_cast<std::uint32_t>(n), 2, static_cast<std::uint32_t>(dim));
  return report;
}

// All-reduce with restarts: a round computes the exact average iff no peer
// fails during it; otherwise everyone retries next round.
inline TrialReport run_allreduce_restart(const std::vector<ParamVector>& initial,
                                         const FailureModel& failure,
                                         const Rng& rng, std::uint32_t rounds) {
  failure.validate();
  const std::size_t n = initial.size();
  if (n == 0) throw std::invalid_argument("run_allreduce_restart: no peers");

  const ParamVector reference = mean_of(initial);
  TrialReport report;
  report.initial_distortion = distortion(initial, reference);

  std::vector<ParamVector> vectors = initial;
  auto fail_stream = rng.stream("failures");
  bool done = false;

  for (std::uint32_t round = 1; round <= rounds; ++round) {
    const std::vector<bool> failed =
        detail::draw_failures(fail_stream, n, failure.p_round);
    const std::uint32_t active = static_cast<std::uint32_t>(
        std::count(failed.begin(), failed.end(), false));
    if (!done && active == n) {
      for (auto& v : vectors) v = reference;
      done = true;
    }
    detail::record_round(report, vectors, reference, active);
  }

  report.cost_units = theory::complexity_estimate(
      rounds, static_cast<std::uint32_t>(n), static_cast<std::uint32_t>(n),
      static_cast<std::uint32_t>(initial.front().size()));
  return report;
}

}  // namespace moshpit::protocols
