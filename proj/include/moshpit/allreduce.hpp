#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "moshpit/core.hpp"

namespace moshpit::allreduce {

// Fraction of the vector each group member aggregates.
struct PartitionWeights {
  std::vector<double> w;

  void validate() const {
    double total = 0.0;
    for (double wi : w) {
      if (wi < 0.0) throw std::invalid_argument("PartitionWeights: w >= 0");
      total += wi;
    }
    if (std::abs(total - 1.0) > 1e-9)
      throw std::invalid_argument("PartitionWeights: weights must sum to 1");
  }

  static PartitionWeights uniform(std::size_t n) {
    return PartitionWeights{std::vector<double>(n, 1.0 / n)};
  }
};

struct BandwidthProfile {
  std::vector<double> b;  // Mb/s, min of up/down per member

  void validate() const {
    if (b.empty()) throw std::invalid_argument("BandwidthProfile: empty");
    for (double bi : b)
      if (bi <= 0.0)
        throw std::invalid_argument("BandwidthProfile: bandwidths > 0");
  }
};

// Contiguous chunk sizes proportional to weights, rounded by largest
// remainder.  Chunk size 0 is allowed (weight-0 peers aggregate nothing).
inline std::vector<std::size_t> chunk_sizes(std::size_t dim,
                                            const PartitionWeights& weights) {
  weights.validate();
  const std::size_t n = weights.w.size();
  std::vector<std::size_t> sizes(n);
  std::vector<std::pair<double, std::size_t>> remainders(n);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double exact = weights.w[i] * static_cast<double>(dim);
    sizes[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += sizes[i];
    remainders[i] = {exact - std::floor(exact), i};
  }
  std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
    return std::tie(b.first, b.second) < std::tie(a.first, a.second);
  });
  for (std::size_t k = 0; assigned < dim; ++k, ++assigned) {
    sizes[remainders[k % n].second] += 1;
  }
  return sizes;
}

struct AllReduceOutcome {
  bool completed = false;                // false => the group skipped
  std::vector<ParamVector> vectors;      // per-member results
  std::vector<std::uint32_t> chunks;     // per-member chunk index (= rank)
};

// Butterfly all-reduce within one sealed group.  Member k aggregates the
// k-th contiguous chunk and redistributes it, so absent failures every
// member ends with the group mean.  A failure at any phase voids the round
// for the whole group: everyone keeps its input and the round is skipped,
// but chunk indices (ranks) are still assigned so group keys advance.
inline AllReduceOutcome butterfly_allreduce(
    const std::vector<ParamVector>& inputs, const PartitionWeights& weights,
    const std::vector<bool>& failed = {}) {
  const std::size_t n = inputs.size();
  if (n == 0) throw std::invalid_argument("butterfly_allreduce: empty group");
  if (weights.w.size() != n)
    throw std::invalid_argument("butterfly_allreduce: one weight per member");
  const std::size_t dim = inputs.front().size();
  for (const ParamVector& v : inputs)
    if (v.size() != dim)
      throw std::invalid_argument("butterfly_allreduce: dimension mismatch");

  AllReduceOutcome out;
  out.chunks.resize(n);
  std::iota(out.chunks.begin(), out.chunks.end(), 0);

  const bool any_failed =
      !failed.empty() &&
      std::any_of(failed.begin(), failed.end(), [](bool f) { return f; });
  if (any_failed) {
    out.completed = false;
    out.vectors = inputs;
    return out;
  }

  // Aggregate chunk by chunk, one owner each; the partition is only a
  // bandwidth concern, so the mean is identical whichever member owns it.
  const std::vector<std::size_t> sizes = chunk_sizes(dim, weights);
  ParamVector mean(dim);
  std::vector<double> column(n);
  std::size_t offset = 0;
  for (std::size_t owner = 0; owner < n; ++owner) {
    for (std::size_t j = offset; j < offset + sizes[owner]; ++j) {
      for (std::size_t i = 0; i < n; ++i) column[i] = inputs[i][j];
      mean[j] = pairwise_sum(column) / static_cast<double>(n);
    }
    offset += sizes[owner];
  }

  out.completed = true;
  out.vectors.assign(n, mean);
  return out;
}

struct BalanceResult {
  PartitionWeights weights;
  double objective = 0.0;  // minimized max_i (1 + (M-2) w_i) / b_i
};

// Minimax load balancing: pick weights minimizing the slowest member's
// communication time t_i = (1 - w_i + (M-1) w_i) / b_i.  Solved by bisection
// on the objective: at level xi the constraints are w_i <= (xi b_i - 1)/(M-2)
// with w >= 0 and sum w = 1, a closed-form feasibility check.
inline BalanceResult balance_partition(const BandwidthProfile& profile) {
  profile.validate();
  const std::size_t m = profile.b.size();

  if (m == 1) {
    // Single peer sends nothing: objective (1 - w)/b = 0.
    return BalanceResult{PartitionWeights{{1.0}}, 0.0};
  }

  double floor_obj = 0.0;  // xi >= 1/b_i even at w_i = 0
  for (double bi : profile.b) floor_obj = std::max(floor_obj, 1.0 / bi);

  if (m == 2) {
    // Coefficient M-2 vanishes: every feasible w has the same objective.
    return BalanceResult{PartitionWeights::uniform(2), floor_obj};
  }

  const double coeff = static_cast<double>(m) - 2.0;
  auto cap_sum = [&](double xi) {
    double total = 0.0;
    for (double bi : profile.b) total += std::max(0.0, (xi * bi - 1.0) / coeff);
    return total;
  };

  double lo = floor_obj;
  double hi = floor_obj;
  while (cap_sum(hi) < 1.0) hi *= 2.0;
  if (cap_sum(lo) >= 1.0) {
    hi = lo;
  } else {
    for (int iter = 0; iter < 200; ++iter) {
      const double mid = 0.5 * (lo + hi);
      (cap_sum(mid) >= 1.0 ? hi : lo) = mid;
    }
  }

  const double xi = hi;
  std::vector<double> caps(m);
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    caps[i] = std::max(0.0, (xi * profile.b[i] - 1.0) / coeff);
    total += caps[i];
  }
  // Scale the per-peer caps down onto the simplex; peers whose cap is zero
  // at the optimum keep weight exactly 0.
  PartitionWeights weights;
  weights.w.resize(m);
  for (std::size_t i = 0; i < m; ++i) weights.w[i] = caps[i] / total;
  // Clean up bisection residue so the weights sum to 1 exactly.
  const double s = std::accumulate(weights.w.begin(), weights.w.end(), 0.0);
  for (double& wi : weights.w) wi /= s;

  double objective = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    objective =
        std::max(objective, (1.0 + coeff * weights.w[i]) / profile.b[i]);
  }
  return BalanceResult{std::move(weights), objective};
}

}  // namespace moshpit::allreduce
