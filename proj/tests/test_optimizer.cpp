#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "moshpit/optimizer.hpp"
#include "moshpit/rng.hpp"

using namespace moshpit;
using namespace moshpit::optimizer;

namespace {

// Central finite differences against the analytic gradient.
void check_gradient(const Objective& objective, const ParamVector& theta,
                    double rel_tol) {
  const ParamVector g = objective.gradient(theta);
  for (std::size_t j = 0; j < theta.size(); ++j) {
    const double h = 1e-6 * std::max(1.0, std::abs(theta[j]));
    ParamVector lo = theta, hi = theta;
    lo[j] -= h;
    hi[j] += h;
    const double fd = (objective.value(hi) - objective.value(lo)) / (2.0 * h);
    const double scale = std::max({std::abs(g[j]), std::abs(fd), 1e-8});
    REQUIRE(std::abs(g[j] - fd) / scale <= rel_tol);
  }
}

}  // namespace

TEST_CASE("analytic gradients match finite differences") {
  Rng rng(21);
  auto stream = rng.stream("theta");

  const Quadratic quad(6, 10.0, 1.0, stream.normals(6));
  const auto logit =
      LogisticRegression::synthetic(5, 80, 0.05, stream);
  const RosenbrockLike rosen(6);

  for (int trial = 0; trial < 10; ++trial) {
    check_gradient(quad, stream.normals(6), 1e-6);
    check_gradient(logit, stream.normals(5), 1e-6);
    check_gradient(rosen, stream.normals(6), 1e-5);
  }
}

TEST_CASE("objective constants are consistent") {
  Rng rng(22);
  auto stream = rng.stream("t");
  const Quadratic quad(4, 8.0, 2.0, ParamVector(4, 0.0));
  REQUIRE(quad.smoothness() == 8.0);
  REQUIRE(quad.strong_convexity() == 2.0);
  REQUIRE(quad.value(ParamVector(4, 0.0)) == 0.0);
  REQUIRE_THROWS_AS(Quadratic(3, 1.0, 2.0, ParamVector(3, 0.0)),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(RosenbrockLike(3), std::invalid_argument);
  const auto logit = LogisticRegression::synthetic(4, 50, 0.1, stream);
  REQUIRE(logit.smoothness() >= logit.strong_convexity());
}

TEST_CASE("local_step is one SGD update") {
  const Quadratic quad(2, 2.0, 2.0, ParamVector{1.0, 1.0});
  ParamVector theta{0.0, 0.0};
  Rng rng(23);
  auto noise = rng.stream("n");
  local_step(theta, quad, 0.25, 0.0, noise);
  // grad at 0 is curvature * (0 - 1) = -2 per coordinate
  REQUIRE(theta[0] == Catch::Approx(0.5));
  REQUIRE(theta[1] == Catch::Approx(0.5));
}

TEST_CASE("tau=1 sigma=0 equals centralized gradient descent") {
  Rng rng(24);
  auto stream = rng.stream("target");
  const Quadratic quad(4, 5.0, 0.5, stream.normals(4));
  OptimizerConfig cfg;
  cfg.gamma = 0.05;
  cfg.tau = 1;
  cfg.steps = 60;
  cfg.sigma = 0.0;
  cfg.grid = GridConfig{4, 2, 1};
  cfg.n_peers = 9;

  const ParamVector theta0(4, 2.0);
  const auto result = run_moshpit_sgd(cfg, quad, theta0, {}, Rng(500));

  ParamVector theta = theta0;
  for (std::uint32_t k = 0; k < cfg.steps; ++k) {
    const auto g = quad.gradient(theta);
    for (std::size_t j = 0; j < theta.size(); ++j)
      theta[j] -= cfg.gamma * g[j];
    REQUIRE(result.f_gap[k] ==
            Catch::Approx(quad.value(theta)).margin(1e-12));
    REQUIRE(result.diagnostics.dispersion[k] <= 1e-24);
  }
  for (std::size_t j = 0; j < theta.size(); ++j) {
    REQUIRE(result.final_mean[j] == Catch::Approx(theta[j]).margin(1e-12));
  }
}

TEST_CASE("V_k stays within the dispersion bound with 1.5x slack") {
  // Bound: E[V_k] <= 2 gamma^2 (4 delta_aq^2 + (tau-1) sigma^2), with
  // delta_aq measured from the sync-step dispersions themselves.
  Rng seeds(25);
  OptimizerConfig cfg;
  cfg.gamma = 0.02;
  cfg.tau = 4;
  cfg.steps = 80;
  cfg.sigma = 1.0;
  cfg.grid = GridConfig{4, 2, 1};
  cfg.n_peers = 12;
  const Quadratic quad(3, 10.0, 1.0, ParamVector(3, 1.0));
  const ParamVector theta0(3, 0.0);

  const std::size_t n_seeds = 100;
  std::vector<double> mean_vk(cfg.steps, 0.0);
  double worst_aq = 0.0, sigma_hat = 0.0;
  for (std::size_t s = 0; s < n_seeds; ++s) {
    const auto r = run_moshpit_sgd(cfg, quad, theta0, {}, Rng(8000 + s));
    for (std::uint32_t k = 0; k < cfg.steps; ++k)
      mean_vk[k] += r.diagnostics.dispersion[k] / n_seeds;
    worst_aq = std::max(worst_aq, r.diagnostics.delta_aq_hat);
    sigma_hat += r.diagnostics.sigma_hat / n_seeds;
  }
  const double bound = 2.0 * cfg.gamma * cfg.gamma *
                       (4.0 * worst_aq * worst_aq +
                        (cfg.tau - 1.0) * sigma_hat * sigma_hat);
  for (std::uint32_t k = 0; k < cfg.steps; ++k) {
    REQUIRE(mean_vk[k] <= 1.5 * bound);
  }
}

TEST_CASE("doubling peers reduces the noisy steady state") {
  Rng seeds(26);
  const Quadratic quad(2, 4.0, 1.0, ParamVector(2, 0.5));
  const ParamVector theta0(2, 0.0);
  const std::size_t n_seeds = 50;

  const auto steady = [&](std::uint32_t n_peers) {
    OptimizerConfig cfg;
    cfg.gamma = 0.05;
    cfg.tau = 1;
    cfg.steps = 200;
    cfg.sigma = 1.0;
    cfg.grid = GridConfig{8, 2, 1};
    cfg.n_peers = n_peers;
    double acc = 0.0;
    for (std::size_t s = 0; s < n_seeds; ++s) {
      const auto r = run_moshpit_sgd(cfg, quad, theta0, {}, Rng(9000 + s));
      for (std::uint32_t k = 3 * cfg.steps / 4; k < cfg.steps; ++k)
        acc += r.f_gap[k];
    }
    return acc / (n_seeds * (cfg.steps / 4));
  };

  const double small = steady(8);
  const double large = steady(16);
  REQUIRE(large < small);
}

TEST_CASE("membership schedule shrinks and grows the active set") {
  Rng rng(27);
  const Quadratic quad(2, 2.0, 1.0, ParamVector(2, 1.0));
  OptimizerConfig cfg;
  cfg.gamma = 0.1;
  cfg.tau = 2;
  cfg.steps = 20;
  cfg.sigma = 0.5;
  cfg.grid = GridConfig{4, 2, 1};
  cfg.n_peers = 8;

  std::vector<MembershipEvent> schedule{{5, -3}, {12, +2}};
  const auto r = run_moshpit_sgd(cfg, quad, ParamVector(2, 0.0), schedule,
                                 Rng(777));
  REQUIRE(r.diagnostics.n_min == 5);
  REQUIRE(r.f_gap.size() == cfg.steps);

  std::vector<MembershipEvent> fatal{{3, -8}};
  REQUIRE_THROWS_AS(
      run_moshpit_sgd(cfg, quad, ParamVector(2, 0.0), fatal, Rng(1)),
      std::invalid_argument);
}

TEST_CASE("config validation") {
  OptimizerConfig cfg;
  cfg.grid = GridConfig{2, 2, 1};
  cfg.n_peers = 4;
  REQUIRE_NOTHROW(cfg.validate());
  cfg.gamma = 0.0;
  REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.gamma = 0.1;
  cfg.n_peers = 5;  // exceeds capacity 4
  REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("iteration bound is finite and monotone in epsilon") {
  const Quadratic quad(2, 4.0, 1.0, ParamVector(2, 0.0));
  OptimizerConfig cfg;
  cfg.grid = GridConfig{2, 2, 1};
  cfg.n_peers = 4;
  cfg.tau = 2;
  AssumptionDiagnostics diag;
  diag.delta_aq_hat = 0.5;
  diag.sigma_hat = 1.0;
  diag.n_min = 4;
  const double loose = theoretical_iteration_bound(quad, cfg, diag, 1e-2, true);
  const double tight = theoretical_iteration_bound(quad, cfg, diag, 1e-4, true);
  REQUIRE(std::isfinite(loose));
  REQUIRE(tight > loose);
  const double cvx = theoretical_iteration_bound(quad, cfg, diag, 1e-2, false);
  REQUIRE(std::isfinite(cvx));
}
