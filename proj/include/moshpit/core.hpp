#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "moshpit/rng.hpp"

namespace moshpit {

// A peer's local parameter state: a dense real vector of fixed dimension.
using ParamVector = std::vector<double>;

using PeerId = std::uint32_t;

// Virtual M^d grid over which groups are keyed, plus the round budget T.
struct GridConfig {
  std::uint32_t peers_per_axis = 1;  // M
  std::uint32_t dims = 1;            // d
  std::uint32_t rounds = 1;          // T

  void validate() const {
    if (peers_per_axis < 1 || dims < 1 || rounds < 1)
      throw std::invalid_argument("GridConfig: M, d, T must all be >= 1");
  }

  std::uint64_t capacity() const {
    std::uint64_t cap = 1;
    for (std::uint32_t j = 0; j < dims; ++j) cap *= peers_per_axis;
    return cap;
  }
};

// Chained chunk-index key: the peer's chunk indices from the previous d-1
// rounds.  For d=1 the key is empty and all peers share one group.
struct GroupKey {
  std::vector<std::uint32_t> indices;

  friend bool operator==(const GroupKey&, const GroupKey&) = default;
  friend auto operator<=>(const GroupKey&, const GroupKey&) = default;
};

struct GroupKeyHash {
  std::size_t operator()(const GroupKey& k) const {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (std::uint32_t v : k.indices) {
      h ^= v;
      h *= 0x100000001B3ULL;
    }
    return static_cast<std::size_t>(h);
  }
};

// Per-peer, per-round fail-stop probability and an optional churn schedule
// of (round, peer-count-delta) entries.
struct FailureModel {
  double p_round = 0.0;
  std::vector<std::pair<std::uint32_t, std::int32_t>> churn;

  void validate() const {
    if (p_round < 0.0 || p_round > 1.0)
      throw std::invalid_argument("FailureModel: p_round must be in [0,1]");
  }
};

namespace detail {

// Pairwise (tree) summation over a span; bounds the accumulation error to
// O(log n) ulps instead of O(n).
inline double pairwise_sum(std::span<const double> xs) {
  const std::size_t n = xs.size();
  if (n <= 8) {
    double s = 0.0;
    for (double x : xs) s += x;
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

}  // namespace detail

inline double pairwise_sum(const std::vector<double>& xs) {
  return detail::pairwise_sum(std::span<const double>(xs));
}

// Element-wise mean of a set of peer vectors, accumulated coordinate-wise
// with pairwise summation.
inline ParamVector group_mean(const std::vector<const ParamVector*>& members) {
  if (members.empty()) throw std::invalid_argument("group_mean: empty group");
  const std::size_t dim = members.front()->size();
  std::vector<double> column(members.size());
  ParamVector mean(dim);
  for (std::size_t j = 0; j < dim; ++j) {
    for (std::size_t i = 0; i < members.size(); ++i) {
      const ParamVector& v = *members[i];
      if (v.size() != dim)
        throw std::invalid_argument("group_mean: dimension mismatch");
      column[i] = v[j];
    }
    mean[j] = pairwise_sum(column) / static_cast<double>(members.size());
  }
  return mean;
}

// Average squared deviation of the given vectors from the reference mean:
// (1/N) sum_i ||theta_i - ref||^2.  The reference is the mean of the
// *initial* vectors, frozen at round 0.
inline double distortion(const std::vector<ParamVector>& peers,
                         const ParamVector& reference_mean) {
  if (peers.empty()) return 0.0;
  std::vector<double> sq(peers.size());
  for (std::size_t i = 0; i < peers.size(); ++i) {
    if (peers[i].size() != reference_mean.size())
      throw std::invalid_argument("distortion: dimension mismatch");
    double acc = 0.0;
    for (std::size_t j = 0; j < reference_mean.size(); ++j) {
      const double diff = peers[i][j] - reference_mean[j];
      acc += diff * diff;
    }
    sq[i] = acc;
  }
  return pairwise_sum(sq) / static_cast<double>(peers.size());
}

inline ParamVector mean_of(const std::vector<ParamVector>& peers) {
  std::vector<const ParamVector*> ptrs;
  ptrs.reserve(peers.size());
  for (const auto& p : peers) ptrs.push_back(&p);
  return group_mean(ptrs);
}

inline bool all_finite(const ParamVector& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

inline std::vector<double> seeded_standard_normal(RngStream& stream,
                                                  std::size_t n) {
  return stream.normals(n);
}

}  // namespace moshpit
