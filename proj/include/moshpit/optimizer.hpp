#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "moshpit/allreduce.hpp"
#include "moshpit/core.hpp"
#include "moshpit/matchmaking.hpp"
#include "moshpit/rng.hpp"

namespace moshpit::optimizer {

// Differentiable objective with known smoothness/convexity constants.
class Objective {
 public:
  virtual ~Objective() = default;
  virtual double value(const ParamVector& theta) const = 0;
  virtual ParamVector gradient(const ParamVector& theta) const = 0;
  virtual std::size_t dim() const = 0;
  virtual double smoothness() const = 0;        // L
  virtual double strong_convexity() const = 0;  // mu (0 if merely convex)
  virtual double optimum_value() const { return 0.0; }
};

// Axis-aligned quadratic with eigenvalues interpolated between mu and L.
class Quadratic final : public Objective {
 public:
  Quadratic(std::size_t dim, double l, double mu, ParamVector target)
      : target_(std::move(target)), l_(l), mu_(mu) {
    if (l < mu || mu < 0.0)
      throw std::invalid_argument("Quadratic: need L >= mu >= 0");
    if (target_.size() != dim)
      throw std::invalid_argument("Quadratic: target dimension mismatch");
    curvature_.resize(dim);
    for (std::size_t j = 0; j < dim; ++j) {
      const double t = dim > 1 ? static_cast<double>(j) / (dim - 1) : 0.0;
      curvature_[j] = mu + (l - mu) * t;
    }
    if (dim == 1) curvature_[0] = l;
  }

  double value(const ParamVector& theta) const override {
    double f = 0.0;
    for (std::size_t j = 0; j < theta.size(); ++j) {
      const double d = theta[j] - target_[j];
      f += 0.5 * curvature_[j] * d * d;
    }
    return f;
  }

  ParamVector gradient(const ParamVector& theta) const override {
    ParamVector g(theta.size());
    for (std::size_t j = 0; j < theta.size(); ++j)
      g[j] = curvature_[j] * (theta[j] - target_[j]);
    return g;
  }

  std::size_t dim() const override { return target_.size(); }
  double smoothness() const override { return l_; }
  double strong_convexity() const override { return mu_; }
  const ParamVector& optimum() const { return target_; }

 private:
  ParamVector target_;
  std::vector<double> curvature_;
  double l_, mu_;
};

// L2-regularized logistic regression on a fixed synthetic design.
class LogisticRegression final : public Objective {
 public:
  LogisticRegression(std::vector<ParamVector> xs, std::vector<double> ys,
                     double l2)
      : xs_(std::move(xs)), ys_(std::move(ys)), l2_(l2) {
    if (xs_.empty() || xs_.size() != ys_.size())
      throw std::invalid_argument("LogisticRegression: bad dataset");
    // L <= (1/4m) sum ||x_i||^2 + l2 for the logistic loss.
    double trace = 0.0;
    for (const auto& x : xs_)
      for (double v : x) trace += v * v;
    l_ = trace / (4.0 * xs_.size()) + l2_;
  }

  static LogisticRegression synthetic(std::size_t dim, std::size_t samples,
                                      double l2, RngStream& stream) {
    std::vector<ParamVector> xs(samples, ParamVector(dim));
    std::vector<double> ys(samples);
    ParamVector truth(dim);
    for (auto& t : truth) t = stream.normal();
    for (std::size_t i = 0; i < samples; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        xs[i][j] = stream.normal();
        dot += xs[i][j] * truth[j];
      }
      ys[i] = dot + 0.1 * stream.normal() > 0.0 ? 1.0 : -1.0;
    }
    return LogisticRegression(std::move(xs), std::move(ys), l2);
  }

  double value(const ParamVector& theta) const override {
    double f = 0.0;
    for (std::size_t i = 0; i < xs_.size(); ++i) {
      double margin = 0.0;
      for (std::size_t j = 0; j < theta.size(); ++j)
        margin += xs_[i][j] * theta[j];
      margin *= ys_[i];
      // log(1 + exp(-m)) computed stably on both tails
      f += margin > 0.0 ? std::log1p(std::exp(-margin))
                        : -margin + std::log1p(std::exp(margin));
    }
    f /= xs_.size();
    for (double t : theta) f += 0.5 * l2_ * t * t;
    return f;
  }

  ParamVector gradient(const ParamVector& theta) const override {
    ParamVector g(theta.size(), 0.0);
    for (std::size_t i = 0; i < xs_.size(); ++i) {
      double margin = 0.0;
      for (std::size_t j = 0; j < theta.size(); ++j)
        margin += xs_[i][j] * theta[j];
      const double coeff = -ys_[i] / (1.0 + std::exp(ys_[i] * margin));
      for (std::size_t j = 0; j < theta.size(); ++j)
        g[j] += coeff * xs_[i][j];
    }
    for (std::size_t j = 0; j < theta.size(); ++j) {
      g[j] = g[j] / xs_.size() + l2_ * theta[j];
    }
    return g;
  }

  std::size_t dim() const override { return xs_.front().size(); }
  double smoothness() const override { return l_; }
  double strong_convexity() const override { return l2_; }

 private:
  std::vector<ParamVector> xs_;
  std::vector<double> ys_;
  double l2_, l_ = 0.0;
};

// Rosenbrock-style nonconvex valley over consecutive coordinate pairs.
class RosenbrockLike final : public Objective {
 public:
  explicit RosenbrockLike(std::size_t dim) : dim_(dim) {
    if (dim < 2 || dim % 2 != 0)
      throw std::invalid_argument("RosenbrockLike: even dim >= 2");
  }

  double value(const ParamVector& theta) const override {
    double f = 0.0;
    for (std::size_t j = 0; j + 1 < theta.size(); j += 2) {
      const double a = theta[j + 1] - theta[j] * theta[j];
      const double b = 1.0 - theta[j];
      f += 10.0 * a * a + b * b;
    }
    return f;
  }

  ParamVector gradient(const ParamVector& theta) const override {
    ParamVector g(theta.size(), 0.0);
    for (std::size_t j = 0; j + 1 < theta.size(); j += 2) {
      const double a = theta[j + 1] - theta[j] * theta[j];
      g[j] = -40.0 * a * theta[j] - 2.0 * (1.0 - theta[j]);
      g[j + 1] = 20.0 * a;
    }
    return g;
  }

  std::size_t dim() const override { return dim_; }
  // Local smoothness estimate near the unit box; not a global constant.
  double smoothness() const override { return 140.0; }
  double strong_convexity() const override { return 0.0; }
  double optimum_value() const override { return 0.0; }

 private:
  std::size_t dim_;
};

struct OptimizerConfig {
  double gamma = 0.1;          // learning rate
  std::uint32_t tau = 1;       // communication period
  std::uint32_t steps = 100;   // K
  GridConfig grid;
  double sigma = 0.0;          // gradient noise scale (total std dev)
  std::uint32_t n_peers = 1;
  std::uint32_t inner_rounds = 0;  // 0 => grid.dims (full-grid exactness)

  void validate() const {
    if (gamma <= 0.0) throw std::invalid_argument("OptimizerConfig: gamma > 0");
    if (tau < 1) throw std::invalid_argument("OptimizerConfig: tau >= 1");
    if (sigma < 0.0) throw std::invalid_argument("OptimizerConfig: sigma >= 0");
    grid.validate();
    if (n_peers < 1 || n_peers > grid.capacity())
      throw std::invalid_argument("OptimizerConfig: 1 <= N <= M^d");
  }
};

// Membership change applied before step `step`: peers only leave within a
// run segment; joiners arrive with fresh ids and copy a donor's state.
struct MembershipEvent {
  std::uint32_t step = 0;
  std::int32_t delta = 0;  // negative: leavers, positive: joiners
};

struct AssumptionDiagnostics {
  std::vector<double> dispersion;  // V_k per step
  double delta_aq_hat = 0.0;       // sqrt(max_a V_{a tau} / gamma^2)
  double sigma_hat = 0.0;          // empirical per-peer gradient noise std
  double delta_pv1_hat = 0.0;      // conservative split: all slack in pv2
  double delta_pv2_hat = 0.0;
  std::uint32_t n_min = 0;
};

struct SgdResult {
  std::vector<double> f_gap;          // f(mean theta) - f* per step
  std::vector<double> grad_norm_sq;   // ||grad f(mean theta)||^2 per step
  std::vector<double> f_gap_weighted; // weighted-average iterate, per step
  ParamVector final_mean;
  AssumptionDiagnostics diagnostics;
};

// One local SGD step: theta <- theta - gamma (grad f(theta) + noise), noise
// isotropic Gaussian with total variance sigma^2 (sigma^2/dim per coord).
inline void local_step(ParamVector& theta, const Objective& objective,
                       double gamma, double sigma, RngStream& noise) {
  ParamVector g = objective.gradient(theta);
  const double coord_std =
      sigma > 0.0 ? sigma / std::sqrt(static_cast<double>(g.size())) : 0.0;
  for (std::size_t j = 0; j < g.size(); ++j) {
    if (coord_std > 0.0) g[j] += coord_std * noise.normal();
    if (!std::isfinite(g[j]))
      throw std::runtime_error("local_step: non-finite gradient");
    theta[j] -= gamma * g[j];
  }
}

namespace detail {

// Grouped averaging pass over the active peers, as used at each
// synchronization point: random cells, random ranks, `rounds` key-chained
// rounds.  No failures are injected inside the averaging itself.
inline void moshpit_average(std::vector<ParamVector>& thetas,
                            const GridConfig& grid, std::uint32_t rounds,
                            RngStream& stream) {
  const std::size_t n = thetas.size();
  if (n <= 1) return;
  std::vector<std::uint64_t> cells(grid.capacity());
  std::iota(cells.begin(), cells.end(), 0);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + stream.below(cells.size() - i);
    std::swap(cells[i], cells[j]);
  }
  std::vector<GroupKey> keys(n);
  for (std::size_t i = 0; i < n; ++i)
    keys[i] = matchmaking::initial_index(cells[i], grid);

  for (std::uint32_t r = 0; r < rounds; ++r) {
    std::vector<matchmaking::MatchPeer> declared(n);
    for (std::size_t i = 0; i < n; ++i) {
      declared[i] = matchmaking::MatchPeer{static_cast<PeerId>(i), keys[i],
                                           stream() >> 16, 0};
    }
    const auto groups =
        matchmaking::form_groups_uncontested(declared, grid.peers_per_axis);
    for (const auto& group : groups) {
      std::vector<const ParamVector*> members;
      for (PeerId id : group.members) members.push_back(&thetas[id]);
      const ParamVector avg = group_mean(members);
      for (std::size_t k = 0; k < group.members.size(); ++k) {
        const PeerId id = group.members[k];
        thetas[id] = avg;
        keys[id] = matchmaking::next_group_key(
            keys[id], static_cast<std::uint32_t>(k), grid);
      }
    }
  }
}

inline ParamVector mean_active(const std::vector<ParamVector>& thetas) {
  std::vector<const ParamVector*> ptrs;
  for (const auto& t : thetas) ptrs.push_back(&t);
  return group_mean(ptrs);
}

}  // namespace detail

// Moshpit SGD: tau local steps between Moshpit averaging passes, under a
// leave/join schedule.  Joiners copy parameters and step counter from a
// random active donor before participating.
inline SgdResult run_moshpit_sgd(const OptimizerConfig& config,
                                 const Objective& objective,
                                 const ParamVector& theta0,
                                 const std::vector<MembershipEvent>& schedule,
                                 const Rng& rng) {
  config.validate();
  if (theta0.size() != objective.dim())
    throw std::invalid_argument("run_moshpit_sgd: theta0 dimension mismatch");
  for (const auto& ev : schedule) {
    if (ev.delta < 0 &&
        static_cast<std::uint32_t>(-ev.delta) >= config.n_peers)
      throw std::invalid_argument("run_moshpit_sgd: schedule kills everyone");
  }

  const std::uint32_t inner =
      config.inner_rounds == 0 ? config.grid.dims : config.inner_rounds;
  std::vector<ParamVector> thetas(config.n_peers, theta0);

  auto noise_stream = rng.stream("noise");
  auto avg_stream = rng.stream("averaging");
  auto join_stream = rng.stream("join");

  SgdResult result;
  AssumptionDiagnostics& diag = result.diagnostics;
  diag.n_min = config.n_peers;

  const double f_star = objective.optimum_value();
  const double mu = objective.strong_convexity();
  double pv_max = 0.0;
  double noise_sq_sum = 0.0;
  std::uint64_t noise_count = 0;

  // Weighted-average iterate of the convex analysis: w_k = (1-gamma mu)^-(k+1).
  ParamVector weighted_sum(theta0.size(), 0.0);
  double weight_total = 0.0;
  double w_k = 1.0;
  const double w_growth = mu > 0.0 ? 1.0 / (1.0 - config.gamma * mu) : 1.0;

  for (std::uint32_t k = 0; k < config.steps; ++k) {
    // Membership changes land at step boundaries.
    for (const auto& ev : schedule) {
      if (ev.step != k) continue;
      if (ev.delta < 0) {
        const std::size_t leave = static_cast<std::size_t>(-ev.delta);
        if (leave >= thetas.size())
          throw std::runtime_error("run_moshpit_sgd: all peers vanished");
        thetas.resize(thetas.size() - leave);
      } else {
        for (std::int32_t j = 0; j < ev.delta; ++j) {
          const std::size_t donor = join_stream.below(thetas.size());
          thetas.push_back(thetas[donor]);  // params + implicit step counter
        }
      }
    }
    diag.n_min = std::min<std::uint32_t>(
        diag.n_min, static_cast<std::uint32_t>(thetas.size()));

    // hat theta^{k+1}: mean over P_k of the post-step values, before any
    // vanishing at the next boundary.
    std::vector<ParamVector> post(thetas.size());
    for (std::size_t i = 0; i < thetas.size(); ++i) {
      post[i] = thetas[i];
      ParamVector g = objective.gradient(post[i]);
      const double coord_std =
          config.sigma > 0.0
              ? config.sigma / std::sqrt(static_cast<double>(g.size()))
              : 0.0;
      for (std::size_t j = 0; j < g.size(); ++j) {
        if (coord_std > 0.0) {
          const double nj = coord_std * noise_stream.normal();
          noise_sq_sum += nj * nj;
          g[j] += nj;
        }
        if (!std::isfinite(g[j]))
          throw std::runtime_error("run_moshpit_sgd: non-finite gradient");
        post[i][j] -= config.gamma * g[j];
      }
      ++noise_count;
    }
    const ParamVector hat_mean = detail::mean_active(post);

    thetas = std::move(post);
    if ((k + 1) % config.tau == 0) {
      detail::moshpit_average(thetas, config.grid, inner, avg_stream);
    }

    const ParamVector mean = detail::mean_active(thetas);
    // Peers' vanishing term of the averaging-quality assumption, with
    // theta-tilde at the optimum (known on these synthetic objectives).
    if (mean.size() == hat_mean.size()) {
      double inner_prod = 0.0;
      for (std::size_t j = 0; j < mean.size(); ++j) {
        inner_prod += (mean[j] - hat_mean[j]) * (mean[j] + hat_mean[j]);
      }
      pv_max = std::max(pv_max, inner_prod);
    }

    double v_k = 0.0;
    for (const auto& t : thetas) {
      for (std::size_t j = 0; j < mean.size(); ++j) {
        const double d = t[j] - mean[j];
        v_k += d * d;
      }
    }
    v_k /= static_cast<double>(thetas.size());
    diag.dispersion.push_back(v_k);

    const double gap = objective.value(mean) - f_star;
    result.f_gap.push_back(gap);
    const ParamVector g_mean = objective.gradient(mean);
    double gn = 0.0;
    for (double gj : g_mean) gn += gj * gj;
    result.grad_norm_sq.push_back(gn);

    w_k *= w_growth;
    for (std::size_t j = 0; j < mean.size(); ++j)
      weighted_sum[j] += w_k * mean[j];
    weight_total += w_k;
    ParamVector weighted(mean.size());
    for (std::size_t j = 0; j < mean.size(); ++j)
      weighted[j] = weighted_sum[j] / weight_total;
    result.f_gap_weighted.push_back(objective.value(weighted) - f_star);

    result.final_mean = mean;
  }

  // delta_aq from the averaging-quality inequality at sync steps.
  double v_sync_max = 0.0;
  for (std::uint32_t k = config.tau - 1; k < diag.dispersion.size();
       k += config.tau) {
    v_sync_max = std::max(v_sync_max, diag.dispersion[k]);
  }
  diag.delta_aq_hat = std::sqrt(v_sync_max) / config.gamma;
  // noise_sq_sum already sums all coordinates of each peer-step draw, so
  // the per-step total variance estimate is just the per-draw mean.
  diag.sigma_hat =
      noise_count > 0 && config.sigma > 0.0
          ? std::sqrt(noise_sq_sum / static_cast<double>(noise_count))
          : 0.0;
  diag.delta_pv1_hat = 0.0;  // conservative attribution
  diag.delta_pv2_hat = std::sqrt(std::max(0.0, pv_max)) / config.gamma;
  return result;
}

// Iteration-count prediction from the convex-rate expression, in order
// units (the hidden constant is not reproducible).  Report-only.
inline double theoretical_iteration_bound(const Objective& objective,
                                          const OptimizerConfig& config,
                                          const AssumptionDiagnostics& diag,
                                          double epsilon, bool strongly_convex) {
  const double l = objective.smoothness();
  const double mu = objective.strong_convexity();
  const double d1 = diag.delta_pv1_hat;
  const double d2 = diag.delta_pv2_hat;
  const double aq = diag.delta_aq_hat;
  const double sigma2 = diag.sigma_hat * diag.sigma_hat;
  const double n_min = std::max<std::uint32_t>(diag.n_min, 1);
  const double tau = config.tau;
  if (strongly_convex) {
    if (mu <= 0.0)
      throw std::invalid_argument(
          "theoretical_iteration_bound: mu > 0 required for this branch");
    if (d1 >= 1.0) return std::numeric_limits<double>::infinity();
    return l / ((1.0 - d1) * mu) +
           (d2 * d2 + sigma2 / n_min) / ((1.0 - d1) * mu * epsilon) +
           std::sqrt(l * ((tau - 1.0) * sigma2 + aq * aq) /
                     ((1.0 - d1) * (1.0 - d1) * mu * mu * epsilon));
  }
  if (2.0 * d1 >= 1.0) return std::numeric_limits<double>::infinity();
  const double eps2 = epsilon * epsilon;
  const double delta0 = 1.0;  // f(theta0)-f* normalized out of order units
  return l * delta0 / ((1.0 - 2.0 * d1) * (1.0 - 2.0 * d1) * eps2) *
         (1.0 + tau * std::sqrt(1.0 - 2.0 * d1) +
          (d2 * d2 + sigma2 / n_min) / eps2 +
          std::sqrt((1.0 - 2.0 * d1) * (aq * aq + (tau - 1.0) * sigma2)) /
              epsilon);
}

}  // namespace moshpit::optimizer
