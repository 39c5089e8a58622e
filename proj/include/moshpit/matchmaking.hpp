#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "moshpit/core.hpp"
#include "moshpit/dht.hpp"
#include "moshpit/event_queue.hpp"

namespace moshpit::matchmaking {

// Matchmaking priority: local timestamp, peer id as tie-break.  Lower wins.
struct Priority {
  LogicalTime timestamp = 0;
  PeerId peer = 0;

  friend auto operator<=>(const Priority&, const Priority&) = default;
};

enum class MatchPhase {
  Declared,
  LeaderCollecting,
  FollowerCommitted,
  GroupSealed,
  RunningAllReduce,
  Failed,
};

struct MatchState {
  MatchPhase phase = MatchPhase::Declared;
  std::optional<PeerId> leader;
  // Snapshot taken at seal time; Guarantee 1 compares these across members.
  std::vector<PeerId> members;
};

// Initial group key: the d-1 base-M digits of the peer index above the
// lowest.  Every key's preimage over [0, M^d) has size exactly M, so initial
// groups never exceed M.
inline GroupKey initial_index(std::uint64_t peer_cell, const GridConfig& grid) {
  grid.validate();
  if (peer_cell >= grid.capacity())
    throw std::out_of_range("initial_index: cell index outside the grid");
  GroupKey key;
  key.indices.reserve(grid.dims - 1);
  std::uint64_t rest = peer_cell / grid.peers_per_axis;
  for (std::uint32_t j = 1; j < grid.dims; ++j) {
    key.indices.push_back(
        static_cast<std::uint32_t>(rest % grid.peers_per_axis));
    rest /= grid.peers_per_axis;
  }
  return key;
}

// Shift-append: drop the oldest chunk index, append the new one.
inline GroupKey next_group_key(const GroupKey& prev, std::uint32_t new_chunk,
                               const GridConfig& grid) {
  if (new_chunk >= grid.peers_per_axis)
    throw std::out_of_range("next_group_key: chunk index outside [0, M)");
  GroupKey key;
  if (prev.indices.empty()) return key;  // d == 1
  key.indices.assign(prev.indices.begin() + 1, prev.indices.end());
  key.indices.push_back(new_chunk);
  return key;
}

struct MatchPeer {
  PeerId id = 0;
  GroupKey key;
  LogicalTime timestamp = 0;  // local clock reading, possibly skewed
  LogicalTime arrival = 0;    // when the declare actually lands
};

// Fail-stop injection: `peer` dies at logical time `at` and stays dead for
// the rest of the round.
struct FailStop {
  LogicalTime at = 0;
  PeerId peer = 0;
};

struct SealedGroup {
  PeerId leader = 0;
  std::vector<PeerId> members;  // ordered by priority; rank = chunk index
};

struct MatchResult {
  std::vector<SealedGroup> groups;
  std::unordered_map<PeerId, MatchState> states;
  LogicalTime finished_at = 0;
};

// Leader-based group formation over one round.  Every alive peer declares
// (key, round) in the DHT, then requests to join the listed neighbor with the
// lowest priority.  A peer asked to lead starts collecting followers and
// seals after `timeout` ticks; rejected or orphaned peers retry around the
// next-lowest priority.  Stale entries of failed peers stay visible, so the
// retry path is exercised whenever a listed peer is unreachable.
class GroupFormation {
 public:
  GroupFormation(std::uint32_t round, std::vector<MatchPeer> peers, Dht& dht,
                 std::vector<FailStop> failures, LogicalTime timeout = 3,
                 std::uint32_t max_group_size = std::numeric_limits<std::uint32_t>::max())
      : round_(round),
        dht_(dht),
        timeout_(timeout),
        max_group_(max_group_size) {
    if (max_group_ < 1)
      throw std::invalid_argument("GroupFormation: max group size >= 1");
    for (const MatchPeer& p : peers) peers_[p.id] = Entry{p, {}};
    failures_ = std::move(failures);
  }

  MatchResult run() {
    for (const FailStop& f : failures_) {
      queue_.schedule(f.at, [this, peer = f.peer](LogicalTime t) {
        on_fail(peer, t);
      });
    }
    // Declares fire in priority order within a tick, so the zero-skew path
    // is deterministic: the lowest-priority peer leads.
    std::vector<const Entry*> ordered;
    ordered.reserve(peers_.size());
    for (const auto& [id, e] : peers_) ordered.push_back(&e);
    std::sort(ordered.begin(), ordered.end(), [](const Entry* a, const Entry* b) {
      return priority_of(a->peer) < priority_of(b->peer);
    });
    for (const Entry* e : ordered) {
      queue_.schedule(e->peer.arrival, [this, id = e->peer.id](LogicalTime t) {
        on_declare(id, t);
      });
    }

    MatchResult result;
    result.finished_at = queue_.run();
    result.groups = std::move(sealed_);
    for (const auto& [id, e] : peers_) result.states[id] = e.state;
    return result;
  }

 private:
  struct Entry {
    MatchPeer peer;
    MatchState state;
    std::set<PeerId> unavailable;   // peers this one has given up on
    std::vector<PeerId> followers;  // valid while LeaderCollecting
    LogicalTime lead_started = 0;
  };

  static Priority priority_of(const MatchPeer& p) {
    return Priority{p.timestamp, p.id};
  }

  bool dead(PeerId id) const {
    auto it = peers_.find(id);
    return it == peers_.end() || it->second.state.phase == MatchPhase::Failed;
  }

  void on_declare(PeerId id, LogicalTime t) {
    if (dead(id)) return;
    dht_.declare(DhtKey{peers_[id].peer.key, round_}, id, t);
    queue_.schedule(t, [this, id](LogicalTime t2) { on_start(id, t2); });
  }

  void on_start(PeerId id, LogicalTime t) {
    Entry& me = peers_[id];
    if (me.state.phase != MatchPhase::Declared) return;
    // Pick the lowest-priority listed peer not yet written off.
    std::optional<PeerId> best;
    for (PeerId cand : dht_.get(DhtKey{me.peer.key, round_}, t)) {
      if (me.unavailable.count(cand)) continue;
      auto it = peers_.find(cand);
      if (it == peers_.end()) continue;
      if (!best ||
          priority_of(it->second.peer) < priority_of(peers_[*best].peer)) {
        best = cand;
      }
    }
    if (!best || *best == id) {
      become_leader(id, t);
      return;
    }
    queue_.schedule(t + 1, [this, id, target = *best](LogicalTime t2) {
      on_join(id, target, t2);
    });
  }

  void become_leader(PeerId id, LogicalTime t) {
    Entry& me = peers_[id];
    me.state.phase = MatchPhase::LeaderCollecting;
    me.state.leader = id;
    me.followers.clear();
    me.lead_started = t;
    queue_.schedule(t + timeout_, [this, id, started = t](LogicalTime t2) {
      on_seal(id, started, t2);
    });
  }

  void on_join(PeerId id, PeerId target, LogicalTime t) {
    if (dead(id)) return;
    Entry& me = peers_[id];
    if (me.state.phase != MatchPhase::Declared) return;
    auto it = peers_.find(target);
    const bool reachable =
        it != peers_.end() && it->second.state.phase != MatchPhase::Failed &&
        it->second.state.phase != MatchPhase::GroupSealed &&
        it->second.state.phase != MatchPhase::RunningAllReduce &&
        it->second.state.phase != MatchPhase::FollowerCommitted;
    if (!reachable) {
      me.unavailable.insert(target);
      queue_.schedule(t + 1, [this, id](LogicalTime t2) { on_start(id, t2); });
      return;
    }
    Entry& them = it->second;
    if (them.state.phase == MatchPhase::Declared) become_leader(target, t);
    if (them.followers.size() + 1 >= max_group_) {
      // Group is full; the joiner regroups with whoever is left.
      me.unavailable.insert(target);
      queue_.schedule(t + 1, [this, id](LogicalTime t2) { on_start(id, t2); });
      return;
    }
    them.followers.push_back(id);
    me.state.phase = MatchPhase::FollowerCommitted;
    me.state.leader = target;
  }

  void on_seal(PeerId id, LogicalTime started, LogicalTime t) {
    Entry& me = peers_[id];
    if (me.state.phase != MatchPhase::LeaderCollecting) return;
    if (me.lead_started != started) return;  // stale timer from an older term
    SealedGroup group;
    group.leader = id;
    group.members = me.followers;
    group.members.push_back(id);
    std::sort(group.members.begin(), group.members.end(),
              [this](PeerId a, PeerId b) {
                return priority_of(peers_[a].peer) < priority_of(peers_[b].peer);
              });
    for (PeerId m : group.members) {
      peers_[m].state.phase = MatchPhase::GroupSealed;
      peers_[m].state.leader = id;
      peers_[m].state.members = group.members;
    }
    sealed_.push_back(std::move(group));
    (void)t;
  }

  void on_fail(PeerId id, LogicalTime t) {
    auto it = peers_.find(id);
    if (it == peers_.end()) return;
    Entry& me = it->second;
    if (me.state.phase == MatchPhase::Failed) return;
    const MatchPhase was = me.state.phase;
    // A peer that failed after sealing stays in its group; the failure is
    // the all-reduce phase's problem, not matchmaking's.
    if (was == MatchPhase::GroupSealed) {
      me.state.phase = MatchPhase::Failed;
      return;
    }
    const std::optional<PeerId> old_leader = me.state.leader;
    me.state.phase = MatchPhase::Failed;
    me.state.leader.reset();
    if (was == MatchPhase::LeaderCollecting) {
      // Followers detect the dead leader and restart around the survivors.
      for (PeerId f : me.followers) {
        Entry& fe = peers_[f];
        if (fe.state.phase != MatchPhase::FollowerCommitted) continue;
        fe.state.phase = MatchPhase::Declared;
        fe.state.leader.reset();
        fe.unavailable.insert(id);
        queue_.schedule(t + 1, [this, f](LogicalTime t2) { on_start(f, t2); });
      }
      me.followers.clear();
    } else if (was == MatchPhase::FollowerCommitted && old_leader) {
      Entry& le = peers_[*old_leader];
      auto pos = std::find(le.followers.begin(), le.followers.end(), id);
      if (pos != le.followers.end()) le.followers.erase(pos);
    }
  }

  std::uint32_t round_;
  Dht& dht_;
  LogicalTime timeout_;
  std::uint32_t max_group_;
  std::unordered_map<PeerId, Entry> peers_;
  std::vector<FailStop> failures_;
  std::vector<SealedGroup> sealed_;
  EventQueue queue_;
};

// Closed form of the state machine for the uncontested case: synchronized
// arrivals, no mid-matchmaking failures.  Every same-key cohort collapses
// into one group (split only when it exceeds the cap), ordered by priority.
// A property test pins this against the event-driven GroupFormation.
inline std::vector<SealedGroup> form_groups_uncontested(
    const std::vector<MatchPeer>& peers,
    std::uint32_t max_group_size = std::numeric_limits<std::uint32_t>::max()) {
  std::map<GroupKey, std::vector<const MatchPeer*>> cohorts;
  for (const MatchPeer& p : peers) cohorts[p.key].push_back(&p);
  std::vector<SealedGroup> groups;
  for (auto& [key, cohort] : cohorts) {
    std::sort(cohort.begin(), cohort.end(),
              [](const MatchPeer* a, const MatchPeer* b) {
                return Priority{a->timestamp, a->id} <
                       Priority{b->timestamp, b->id};
              });
    for (std::size_t base = 0; base < cohort.size(); base += max_group_size) {
      SealedGroup g;
      const std::size_t end =
          std::min(cohort.size(), base + max_group_size);
      for (std::size_t k = base; k < end; ++k)
        g.members.push_back(cohort[k]->id);
      g.leader = g.members.front();
      groups.push_back(std::move(g));
    }
  }
  return groups;
}

inline MatchResult form_groups(std::uint32_t round, std::vector<MatchPeer> peers,
                               Dht& dht, std::vector<FailStop> failures = {},
                               LogicalTime timeout = 3,
                               std::uint32_t max_group_size =
                                   std::numeric_limits<std::uint32_t>::max()) {
  GroupFormation formation(round, std::move(peers), dht, std::move(failures),
                           timeout, max_group_size);
  return formation.run();
}

}  // namespace moshpit::matchmaking
