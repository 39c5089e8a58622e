#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "moshpit/protocols.hpp"
#include "moshpit/rng.hpp"

using namespace moshpit;
using namespace moshpit::protocols;

namespace {

std::vector<ParamVector> random_peers(std::size_t n, std::size_t dim,
                                      RngStream& stream) {
  std::vector<ParamVector> peers(n);
  for (auto& v : peers) {
    v.resize(dim);
    for (auto& x : v) x = stream.uniform();
  }
  return peers;
}

}  // namespace

TEST_CASE("protocol kind round-trips through strings") {
  for (auto kind : {ProtocolKind::Moshpit, ProtocolKind::RandomGroups,
                    ProtocolKind::Gossip, ProtocolKind::PushSum,
                    ProtocolKind::AllReduceRestart}) {
    REQUIRE(protocol_from_string(to_string(kind)) == kind);
  }
  REQUIRE_THROWS_AS(protocol_from_string("nope"), std::invalid_argument);
}

TEST_CASE("rounds_to semantics") {
  TrialReport r;
  r.initial_distortion = 1.0;
  r.distortion = {0.5, 1e-5, 1e-10};
  REQUIRE(r.rounds_to(2.0, 50) == 0);
  REQUIRE(r.rounds_to(1e-4, 50) == 2);
  REQUIRE(r.rounds_to(1e-9, 50) == 3);
  REQUIRE(r.rounds_to(1e-12, 50) == 50);
  REQUIRE(r.rounds_to(1e-4, 1) == 1);  // capped before reaching it
}

TEST_CASE("full grid reaches the exact average in exactly d rounds") {
  Rng seed_rng(10);
  auto stream = seed_rng.stream("init");
  const GridConfig grid{3, 2, 1};
  const auto initial = random_peers(9, 2, stream);
  const auto report =
      run_moshpit(grid, initial, FailureModel{}, Rng(99), 4);
  REQUIRE(report.distortion[0] > 1e-24);
  REQUIRE(report.distortion[1] <= 1e-24);
  REQUIRE(report.distortion[3] <= 1e-24);
}

TEST_CASE("single peer is already converged") {
  const std::vector<ParamVector> one{{3.0, 4.0}};
  const auto report =
      run_moshpit(GridConfig{4, 2, 1}, one, FailureModel{}, Rng(1), 3);
  REQUIRE(report.initial_distortion == 0.0);
  REQUIRE(report.rounds_to(1e-9, 50) == 0);
}

TEST_CASE("moshpit rejects more peers than cells") {
  const auto initial = std::vector<ParamVector>(5, ParamVector{1.0});
  REQUIRE_THROWS_AS(
      run_moshpit(GridConfig{2, 2, 1}, initial, FailureModel{}, Rng(1), 1),
      std::invalid_argument);
}

TEST_CASE("mean is conserved by every protocol under failures") {
  Rng seed_rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    auto stream = seed_rng.stream("init", trial);
    const auto initial = random_peers(24, 3, stream);
    const FailureModel failure{trial * 0.05, {}};
    const Rng rng(1000 + trial);
    for (const auto& report :
         {run_moshpit(GridConfig{5, 2, 1}, initial, failure, rng, 10),
          run_random_groups(4, initial, failure, rng, 10),
          run_gossip(initial, failure, rng, 10),
          run_pushsum(initial, failure, rng, 10),
          run_allreduce_restart(initial, failure, rng, 10)}) {
      for (double drift : report.mean_drift) REQUIRE(drift <= 1e-12);
    }
  }
}

TEST_CASE("expected distortion is non-increasing for group protocols") {
  Rng seed_rng(12);
  const std::size_t seeds = 100;
  std::vector<double> moshpit_mean(10, 0.0), random_mean(10, 0.0);
  for (std::size_t s = 0; s < seeds; ++s) {
    auto stream = seed_rng.stream("init", s);
    const auto initial = random_peers(20, 1, stream);
    const auto mr =
        run_moshpit(GridConfig{5, 2, 1}, initial, FailureModel{0.05, {}},
                    Rng(2000 + s), 10);
    const auto rr =
        run_random_groups(5, initial, FailureModel{0.05, {}}, Rng(3000 + s), 10);
    for (std::size_t t = 0; t < 10; ++t) {
      moshpit_mean[t] += mr.distortion[t] / seeds;
      random_mean[t] += rr.distortion[t] / seeds;
    }
  }
  for (std::size_t t = 1; t < 10; ++t) {
    REQUIRE(moshpit_mean[t] <= moshpit_mean[t - 1] * (1.0 + 1e-9));
    REQUIRE(random_mean[t] <= random_mean[t - 1] * (1.0 + 1e-9));
  }
}

TEST_CASE("moshpit converges for p < 1 on every seed") {
  Rng seed_rng(13);
  for (int s = 0; s < 20; ++s) {
    auto stream = seed_rng.stream("init", s);
    const auto initial = random_peers(12, 1, stream);
    const auto report = run_moshpit(GridConfig{4, 2, 1}, initial,
                                    FailureModel{0.2, {}}, Rng(4000 + s), 50);
    REQUIRE(report.distortion.back() < report.initial_distortion);
  }
}

TEST_CASE("random groups: single group averages exactly in one round") {
  Rng seed_rng(14);
  auto stream = seed_rng.stream("init");
  const auto initial = random_peers(7, 2, stream);
  const auto report =
      run_random_groups(32, initial, FailureModel{}, Rng(5), 3);
  REQUIRE(report.distortion[0] <= 1e-28);
}

TEST_CASE("gossip on three peers is exact after one round") {
  // On a 3-ring the two neighbors plus self cover everyone, so uniform 1/3
  // mixing is a complete averaging step.
  const std::vector<ParamVector> initial{{0.0}, {3.0}, {6.0}};
  const auto report = run_gossip(initial, FailureModel{}, Rng(6), 2);
  REQUIRE(report.distortion[0] <= 1e-28);
}

TEST_CASE("gossip needs at least three peers") {
  REQUIRE_THROWS_AS(
      run_gossip({{1.0}, {2.0}}, FailureModel{}, Rng(1), 1),
      std::invalid_argument);
}

TEST_CASE("gossip barely moves on a long ring") {
  Rng seed_rng(15);
  auto stream = seed_rng.stream("init");
  const auto initial = random_peers(512, 1, stream);
  const auto report = run_gossip(initial, FailureModel{}, Rng(7), 50);
  REQUIRE(report.rounds_to(1e-4, 50) == 50);
}

TEST_CASE("pushsum with two peers is exact after one round") {
  const std::vector<ParamVector> initial{{1.0}, {5.0}};
  const auto report = run_pushsum(initial, FailureModel{}, Rng(8), 2);
  REQUIRE(report.distortion[0] <= 1e-28);
}

TEST_CASE("pushsum conserves mass under failures") {
  Rng seed_rng(16);
  auto stream = seed_rng.stream("init");
  const auto initial = random_peers(33, 2, stream);
  const auto report = run_pushsum(initial, FailureModel{0.1, {}}, Rng(9), 30);
  for (double drift : report.mean_drift) REQUIRE(drift <= 1e-12);
  REQUIRE(report.distortion.back() < report.initial_distortion);
}

TEST_CASE("all-reduce with p=0 finishes in one round") {
  Rng seed_rng(17);
  auto stream = seed_rng.stream("init");
  const auto initial = random_peers(16, 2, stream);
  const auto report =
      run_allreduce_restart(initial, FailureModel{}, Rng(10), 5);
  REQUIRE(report.rounds_to(1e-9, 50) == 1);
  REQUIRE(report.distortion[0] == 0.0);
}

TEST_CASE("all-reduce restart retries until a clean round") {
  // p close to 1 forces the cap.
  Rng seed_rng(18);
  auto stream = seed_rng.stream("init");
  const auto initial = random_peers(16, 1, stream);
  const auto report =
      run_allreduce_restart(initial, FailureModel{0.95, {}}, Rng(11), 10);
  REQUIRE(report.rounds_to(1e-9, 10) == 10);
}

TEST_CASE("identical rng seed reproduces the whole report") {
  Rng seed_rng(19);
  auto stream = seed_rng.stream("init");
  const auto initial = random_peers(30, 2, stream);
  const auto a = run_moshpit(GridConfig{6, 2, 1}, initial,
                             FailureModel{0.05, {}}, Rng(12), 20);
  const auto b = run_moshpit(GridConfig{6, 2, 1}, initial,
                             FailureModel{0.05, {}}, Rng(12), 20);
  REQUIRE(a.distortion == b.distortion);
  REQUIRE(a.active_counts == b.active_counts);
}
