#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <tuple>
#include <vector>

#include "moshpit/core.hpp"

namespace moshpit {

// Key of a matchmaking rendezvous entry: (group key, round).
struct DhtKey {
  GroupKey group_key;
  std::uint32_t round = 0;

  friend bool operator==(const DhtKey&, const DhtKey&) = default;
  friend auto operator<=>(const DhtKey&, const DhtKey&) = default;
};

using LogicalTime = std::uint64_t;

struct DhtEntry {
  PeerId peer = 0;
  LogicalTime declared_at = 0;
  LogicalTime expiration = 0;
};

// In-process simulated DHT.  A centralized map with deterministic iteration
// order stands in for Kademlia routing; only the lookup cost model survives
// from the real thing.  Accessed single-threaded through the trial's event
// queue; each trial owns a private instance.
class Dht {
 public:
  // Entries embed the round number in the key, so anything older than two
  // rounds of logical time is unreachable regardless of TTL.
  explicit Dht(LogicalTime entry_ttl = 2) : ttl_(entry_ttl) {}

  // Fail-stop semantics: a peer that died mid-call leaves no entry.
  void declare(const DhtKey& key, PeerId peer, LogicalTime now,
               bool peer_alive = true) {
    if (!peer_alive) return;  // atomic no-op
    store_[key].push_back(DhtEntry{peer, now, now + ttl_});
  }

  // All non-expired declarations for the key, ordered by (declared_at, peer).
  std::vector<PeerId> get(const DhtKey& key, LogicalTime now) const {
    auto it = store_.find(key);
    if (it == store_.end()) return {};
    std::vector<DhtEntry> live;
    for (const DhtEntry& e : it->second) {
      if (now < e.expiration) live.push_back(e);
    }
    std::sort(live.begin(), live.end(), [](const DhtEntry& a, const DhtEntry& b) {
      return std::tie(a.declared_at, a.peer) < std::tie(b.declared_at, b.peer);
    });
    std::vector<PeerId> peers;
    peers.reserve(live.size());
    for (const DhtEntry& e : live) peers.push_back(e.peer);
    return peers;
  }

  // Estimated request count of one lookup: ceil(log2 n) + k, where k is the
  // replication constant.  Charged to the round's cost metric.
  static std::uint64_t lookup_cost(std::uint64_t n_peers, std::uint64_t k = 1) {
    if (n_peers < 1)
      throw std::invalid_argument("lookup_cost: n_peers >= 1");
    std::uint64_t bits = 0;
    while ((std::uint64_t{1} << bits) < n_peers) ++bits;
    return bits + k;
  }

  void clear() { store_.clear(); }

 private:
  LogicalTime ttl_;
  std::map<DhtKey, std::vector<DhtEntry>> store_;
};

}  // namespace moshpit
