#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>

#include "moshpit/core.hpp"
#include "moshpit/rng.hpp"

using namespace moshpit;

TEST_CASE("pairwise_sum matches naive summation") {
  Rng rng(42);
  auto stream = rng.stream("sum");
  for (std::size_t n : {0u, 1u, 2u, 3u, 7u, 100u, 1000u}) {
    std::vector<double> xs(n);
    for (auto& x : xs) x = stream.normal();
    long double naive = 0.0L;
    for (double x : xs) naive += x;
    REQUIRE(pairwise_sum(xs) ==
            Catch::Approx(static_cast<double>(naive)).margin(1e-12));
  }
}

TEST_CASE("pairwise_sum is more accurate than sequential on adversarial input") {
  // 1 followed by many tiny values that sequential addition absorbs.
  std::vector<double> xs{1e16};
  xs.insert(xs.end(), 1 << 16, 1.0);
  const double exact = 1e16 + 65536.0;
  REQUIRE(pairwise_sum(xs) == Catch::Approx(exact).epsilon(1e-15));
}

TEST_CASE("group_mean averages coordinate-wise") {
  ParamVector a{1.0, 2.0}, b{3.0, 6.0};
  const auto mean = group_mean({&a, &b});
  REQUIRE(mean == ParamVector{2.0, 4.0});
}

TEST_CASE("distortion basics") {
  std::vector<ParamVector> peers{{1.0}, {3.0}};
  const ParamVector ref{2.0};
  REQUIRE(distortion(peers, ref) == Catch::Approx(1.0));

  std::vector<ParamVector> same{{5.0, 5.0}, {5.0, 5.0}};
  REQUIRE(distortion(same, ParamVector{5.0, 5.0}) == 0.0);

  std::vector<ParamVector> bad{{1.0}, {1.0, 2.0}};
  REQUIRE_THROWS_AS(distortion(bad, ref), std::invalid_argument);
}

TEST_CASE("GridConfig validates and reports capacity") {
  GridConfig grid{3, 2, 1};
  REQUIRE_NOTHROW(grid.validate());
  REQUIRE(grid.capacity() == 9);
  REQUIRE(GridConfig{2, 10, 1}.capacity() == 1024);
  REQUIRE_THROWS_AS((GridConfig{0, 2, 1}.validate()), std::invalid_argument);
  REQUIRE_THROWS_AS((GridConfig{3, 0, 1}.validate()), std::invalid_argument);
  REQUIRE_THROWS_AS((GridConfig{3, 2, 0}.validate()), std::invalid_argument);
}

TEST_CASE("FailureModel validates p") {
  REQUIRE_THROWS_AS((FailureModel{-0.1, {}}.validate()), std::invalid_argument);
  REQUIRE_THROWS_AS((FailureModel{1.5, {}}.validate()), std::invalid_argument);
  REQUIRE_NOTHROW(FailureModel{0.5, {}}.validate());
}

TEST_CASE("named streams are deterministic and independent") {
  Rng a(7), b(7), c(8);
  auto s1 = a.stream("x");
  auto s2 = b.stream("x");
  auto s3 = a.stream("y");
  auto s4 = c.stream("x");
  bool same_name_equal = true, diff_name_equal = true, diff_seed_equal = true;
  for (int i = 0; i < 64; ++i) {
    const auto v1 = s1();
    same_name_equal = same_name_equal && v1 == s2();
    diff_name_equal = diff_name_equal && v1 == s3();
    diff_seed_equal = diff_seed_equal && v1 == s4();
  }
  REQUIRE(same_name_equal);
  REQUIRE_FALSE(diff_name_equal);
  REQUIRE_FALSE(diff_seed_equal);

  auto i0 = a.stream("z", 0);
  auto i1 = a.stream("z", 1);
  REQUIRE(i0() != i1());
}

TEST_CASE("uniform and below stay in range") {
  Rng rng(3);
  auto stream = rng.stream("range");
  for (int i = 0; i < 10000; ++i) {
    const double u = stream.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    REQUIRE(stream.below(7) < 7);
  }
}

TEST_CASE("normal draws have sane moments") {
  Rng rng(11);
  auto stream = rng.stream("gauss");
  const int n = 200000;
  double sum = 0.0, sum_sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = stream.normal();
    sum += x;
    sum_sq += x * x;
  }
  REQUIRE(sum / n == Catch::Approx(0.0).margin(0.01));
  REQUIRE(sum_sq / n == Catch::Approx(1.0).margin(0.02));
}

TEST_CASE("shuffle produces a permutation") {
  Rng rng(5);
  auto stream = rng.stream("perm");
  std::vector<std::uint32_t> xs(50);
  std::iota(xs.begin(), xs.end(), 0);
  auto shuffled = xs;
  stream.shuffle(shuffled);
  auto sorted = shuffled;
  std::sort(sorted.begin(), sorted.end());
  REQUIRE(sorted == xs);
}

TEST_CASE("bernoulli respects edge probabilities") {
  Rng rng(9);
  auto stream = rng.stream("coin");
  for (int i = 0; i < 1000; ++i) {
    REQUIRE_FALSE(stream.bernoulli(0.0));
    REQUIRE(stream.bernoulli(1.0));
  }
}
