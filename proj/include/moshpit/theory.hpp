#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "moshpit/core.hpp"

namespace moshpit::theory {

// One random split of N peers into r disjoint groups of fixed sizes.
struct SplitSpec {
  std::uint32_t n_peers = 0;
  std::vector<std::uint32_t> group_sizes;

  std::uint32_t group_count() const {
    return static_cast<std::uint32_t>(group_sizes.size());
  }

  void validate() const {
    if (group_sizes.empty()) throw std::invalid_argument("SplitSpec: r >= 1");
    std::uint32_t total = 0;
    for (std::uint32_t m : group_sizes) {
      if (m < 1) throw std::invalid_argument("SplitSpec: group sizes >= 1");
      total += m;
    }
    if (total != n_peers)
      throw std::invalid_argument("SplitSpec: group sizes must sum to N");
  }
};

// Per-round distortion factor ((r-1)/N + r/N^2) from the paper's analysis of
// random-group averaging.  Reported alongside the enumeration oracle, which
// is the test gate (the two disagree; see exhaustive_contraction_oracle).
inline double paper_contraction_factor(const SplitSpec& spec) {
  spec.validate();
  const double n = spec.n_peers;
  const double r = spec.group_count();
  return (r - 1.0) / n + r / (n * n);
}

// Exact expected one-round distortion ratio under the contiguous-block split
// of a uniform random permutation, by enumeration over all N! permutations.
// Ground truth by construction; refuses N > 8.
inline double exhaustive_contraction_oracle(const SplitSpec& spec,
                                            const std::vector<double>& values) {
  spec.validate();
  const std::uint32_t n = spec.n_peers;
  if (n > 8)
    throw std::invalid_argument("exhaustive oracle: N > 8 is intractable");
  if (values.size() != n)
    throw std::invalid_argument("exhaustive oracle: need one value per peer");

  const double mean =
      std::accumulate(values.begin(), values.end(), 0.0) / n;
  double before = 0.0;
  for (double v : values) before += (v - mean) * (v - mean);
  before /= n;
  if (before == 0.0)
    throw std::invalid_argument("exhaustive oracle: degenerate input");

  std::vector<std::uint32_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double total_after = 0.0;
  std::uint64_t count = 0;
  do {
    std::vector<double> out(n);
    std::size_t offset = 0;
    for (std::uint32_t m : spec.group_sizes) {
      double sum = 0.0;
      for (std::uint32_t k = 0; k < m; ++k) sum += values[perm[offset + k]];
      const double avg = sum / m;
      for (std::uint32_t k = 0; k < m; ++k) out[perm[offset + k]] = avg;
      offset += m;
    }
    double after = 0.0;
    for (double v : out) after += (v - mean) * (v - mean);
    total_after += after / n;
    ++count;
  } while (std::next_permutation(perm.begin(), perm.end()));

  return (total_after / count) / before;
}

// Inverse binomial moments of Lemma "m1/m2": with xi ~ Binom(M, p),
//   m1 = E[min{1/xi, 1}],  m2 = E[min{1/xi^2, 1}].
struct MomentInputs {
  std::uint32_t trials = 0;  // M
  double p = 0.0;

  void validate() const {
    if (p < 0.0 || p > 1.0)
      throw std::invalid_argument("MomentInputs: p in [0,1]");
  }
};

inline double m1(const MomentInputs& inp) {
  inp.validate();
  const std::uint32_t m = inp.trials;
  const double q = 1.0 - inp.p;
  const double qm = std::pow(q, static_cast<double>(m));
  double sum = qm;
  for (std::uint32_t i = 1; i <= m; ++i) {
    sum += (std::pow(q, static_cast<double>(m - i)) - qm) / i;
  }
  return sum;
}

inline double m2(const MomentInputs& inp) {
  inp.validate();
  const std::uint32_t m = inp.trials;
  const double q = 1.0 - inp.p;
  const double qm = std::pow(q, static_cast<double>(m));
  // Suffix harmonic sums H(i) = sum_{j=i}^{M} 1/j.
  std::vector<double> suffix(m + 2, 0.0);
  for (std::uint32_t j = m; j >= 1; --j) suffix[j] = suffix[j + 1] + 1.0 / j;
  double sum = qm;
  for (std::uint32_t i = 1; i <= m; ++i) {
    sum += (std::pow(q, static_cast<double>(m - i)) - qm) / i * suffix[i];
  }
  return sum;
}

// Variance bound after T Moshpit rounds with per-peer dropout:
//   M^{T-1} sigma^2 m1(M-1, p) m2(M-1, p)^{T-1}.
// Here p is the per-peer participation probability.
inline double variance_bound(std::uint32_t m, double p, std::uint32_t t_rounds,
                             double sigma2) {
  if (m < 2) throw std::invalid_argument("variance_bound: M >= 2");
  if (t_rounds < 1) throw std::invalid_argument("variance_bound: T >= 1");
  if (sigma2 < 0.0) throw std::invalid_argument("variance_bound: sigma2 >= 0");
  const MomentInputs inp{m - 1, p};
  return std::pow(static_cast<double>(m), t_rounds - 1.0) * sigma2 * m1(inp) *
         std::pow(m2(inp), t_rounds - 1.0);
}

// Simplified bound 2 sigma^2 / (M (M/3)^{T-1}), valid for p >= 2/3, M >= 11.
inline double variance_bound_simplified(std::uint32_t m, std::uint32_t t_rounds,
                                        double sigma2) {
  return 2.0 * sigma2 /
         (m * std::pow(m / 3.0, static_cast<double>(t_rounds) - 1.0));
}

// Abstract protocol cost: T * [log2 N + M + max(s, M) * (M-1)/M].
// Annotates TrialReports; never gates a test.
inline double complexity_estimate(std::uint32_t t_rounds, std::uint32_t n_peers,
                                  std::uint32_t m, std::uint32_t dim) {
  if (t_rounds == 0) return 0.0;
  const double md = m;
  return t_rounds * (std::log2(static_cast<double>(n_peers)) + md +
                     std::max<double>(dim, md) * (md - 1.0) / md);
}

// Monte-Carlo estimate of the one-round distortion ratio under a uniform
// random assignment of peers to the spec's groups.  Returns (mean, standard
// error of the mean).
struct McEstimate {
  double mean = 0.0;
  double std_error = 0.0;
};

inline McEstimate mc_contraction_ratio(const SplitSpec& spec,
                                       const std::vector<double>& values,
                                       std::uint64_t samples,
                                       RngStream& stream) {
  spec.validate();
  const std::uint32_t n = spec.n_peers;
  if (values.size() != n)
    throw std::invalid_argument("mc_contraction_ratio: one value per peer");
  if (samples < 2)
    throw std::invalid_argument("mc_contraction_ratio: samples >= 2");

  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double before = 0.0;
  for (double v : values) before += (v - mean) * (v - mean);
  before /= n;
  if (before == 0.0)
    throw std::invalid_argument("mc_contraction_ratio: degenerate input");

  std::vector<std::uint32_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double sum = 0.0, sum_sq = 0.0;
  for (std::uint64_t s = 0; s < samples; ++s) {
    stream.shuffle(perm);
    double after = 0.0;
    std::size_t offset = 0;
    for (std::uint32_t m : spec.group_sizes) {
      double group_sum = 0.0;
      for (std::uint32_t k = 0; k < m; ++k)
        group_sum += values[perm[offset + k]];
      const double avg = group_sum / m;
      after += m * (avg - mean) * (avg - mean);
      offset += m;
    }
    const double ratio = (after / n) / before;
    sum += ratio;
    sum_sq += ratio * ratio;
  }
  const double avg = sum / samples;
  const double var = std::max(0.0, (sum_sq / samples - avg * avg)) *
                     (static_cast<double>(samples) / (samples - 1));
  return {avg, std::sqrt(var / samples)};
}

// Monte-Carlo estimates of the inverse-binomial moments m1 and m2 with
// xi ~ Binom(M, p): draws min{1/xi, 1} and min{1/xi^2, 1}.
struct MomentMc {
  McEstimate first;
  McEstimate second;
};

inline MomentMc mc_moments(const MomentInputs& inp, std::uint64_t samples,
                           RngStream& stream) {
  inp.validate();
  if (samples < 2) throw std::invalid_argument("mc_moments: samples >= 2");
  double s1 = 0.0, s1_sq = 0.0, s2 = 0.0, s2_sq = 0.0;
  for (std::uint64_t s = 0; s < samples; ++s) {
    std::uint32_t xi = 0;
    for (std::uint32_t t = 0; t < inp.trials; ++t)
      if (stream.bernoulli(inp.p)) ++xi;
    const double a = xi == 0 ? 1.0 : 1.0 / xi;
    const double b = xi == 0 ? 1.0 : 1.0 / (static_cast<double>(xi) * xi);
    s1 += a;
    s1_sq += a * a;
    s2 += b;
    s2_sq += b * b;
  }
  MomentMc out;
  const auto finish = [samples](double sum, double sum_sq) -> McEstimate {
    const double avg = sum / samples;
    const double var = std::max(0.0, sum_sq / samples - avg * avg) *
                       (static_cast<double>(samples) / (samples - 1));
    return {avg, std::sqrt(var / samples)};
  };
  out.first = finish(s1, s1_sq);
  out.second = finish(s2, s2_sq);
  return out;
}

// All distinct multisets of positive group sizes summing to n, descending
// within each partition.  Used by the contraction-oracle sweep.
inline std::vector<std::vector<std::uint32_t>> partitions_of(std::uint32_t n) {
  std::vector<std::vector<std::uint32_t>> out;
  std::vector<std::uint32_t> current;
  const auto recurse = [&](auto&& self, std::uint32_t remaining,
                           std::uint32_t max_part) -> void {
    if (remaining == 0) {
      out.push_back(current);
      return;
    }
    for (std::uint32_t part = std::min(remaining, max_part); part >= 1;
         --part) {
      current.push_back(part);
      self(self, remaining - part, part);
      current.pop_back();
    }
  };
  recurse(recurse, n, n);
  return out;
}

// Expected rounds (capped) for all-reduce with restarts: a round succeeds
// iff none of the N peers fails, so the attempt count is geometric with
// success probability q = (1-p)^N and E[min(G, cap)] = sum_k (1-q)^k.
inline double ar_restart_expected_rounds(std::uint32_t n_peers, double p,
                                         std::uint32_t cap) {
  if (n_peers < 1 || cap < 1)
    throw std::invalid_argument("ar_restart_expected_rounds: N, cap >= 1");
  const double q = std::pow(1.0 - p, static_cast<double>(n_peers));
  double expected = 0.0;
  double fail_pow = 1.0;  // (1-q)^k
  for (std::uint32_t k = 0; k < cap; ++k) {
    expected += fail_pow;
    fail_pow *= (1.0 - q);
  }
  return expected;
}

}  // namespace moshpit::theory
