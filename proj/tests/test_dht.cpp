#include <catch2/catch_amalgamated.hpp>

#include "moshpit/dht.hpp"

using namespace moshpit;

namespace {
DhtKey key(std::uint32_t a, std::uint32_t round) {
  return DhtKey{GroupKey{{a}}, round};
}
}  // namespace

TEST_CASE("declare then get returns the peer") {
  Dht dht;
  dht.declare(key(1, 0), 42, 10);
  REQUIRE(dht.get(key(1, 0), 10) == std::vector<PeerId>{42});
  REQUIRE(dht.get(key(2, 0), 10).empty());
  REQUIRE(dht.get(key(1, 1), 10).empty());
}

TEST_CASE("entries expire after the TTL") {
  Dht dht(2);
  dht.declare(key(1, 0), 7, 10);
  REQUIRE_FALSE(dht.get(key(1, 0), 11).empty());
  REQUIRE(dht.get(key(1, 0), 12).empty());
  REQUIRE(dht.get(key(1, 0), 99).empty());
}

TEST_CASE("a peer that dies mid-declare leaves no entry") {
  Dht dht;
  dht.declare(key(1, 0), 7, 10, /*peer_alive=*/false);
  REQUIRE(dht.get(key(1, 0), 10).empty());
}

TEST_CASE("listing order is (declared_at, peer)") {
  Dht dht(100);
  dht.declare(key(1, 0), 30, 5);
  dht.declare(key(1, 0), 10, 7);
  dht.declare(key(1, 0), 20, 5);
  REQUIRE(dht.get(key(1, 0), 8) == std::vector<PeerId>{20, 30, 10});
}

TEST_CASE("same group key at different rounds is distinct") {
  Dht dht(100);
  dht.declare(key(3, 1), 1, 0);
  dht.declare(key(3, 2), 2, 0);
  REQUIRE(dht.get(key(3, 1), 1) == std::vector<PeerId>{1});
  REQUIRE(dht.get(key(3, 2), 1) == std::vector<PeerId>{2});
}

TEST_CASE("clear drops everything") {
  Dht dht(100);
  dht.declare(key(1, 0), 1, 0);
  dht.clear();
  REQUIRE(dht.get(key(1, 0), 1).empty());
}

TEST_CASE("lookup cost is ceil(log2 n) + k") {
  REQUIRE(Dht::lookup_cost(1) == 1);
  REQUIRE(Dht::lookup_cost(2) == 2);
  REQUIRE(Dht::lookup_cost(1024) == 11);
  REQUIRE(Dht::lookup_cost(1025) == 12);
  REQUIRE(Dht::lookup_cost(512, 3) == 12);
  REQUIRE_THROWS_AS(Dht::lookup_cost(0), std::invalid_argument);
}
