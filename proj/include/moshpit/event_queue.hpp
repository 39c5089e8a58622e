#pragma once

#include <cstdint>
#include <functional>
#include <queue>
#include <vector>

#include "moshpit/dht.hpp"

namespace moshpit {

// Deterministic discrete-event queue: events fire in (time, insertion seq)
// order, so identical schedules replay identically.
class EventQueue {
 public:
  using Handler = std::function<void(LogicalTime)>;

  void schedule(LogicalTime at, Handler handler) {
    queue_.push(Item{at, next_seq_++, std::move(handler)});
  }

  bool empty() const { return queue_.empty(); }

  LogicalTime now() const { return now_; }

  // Runs events until the queue drains; returns the time of the last event.
  LogicalTime run() {
    while (!queue_.empty()) {
      Item item = queue_.top();
      queue_.pop();
      now_ = item.at;
      item.handler(now_);
    }
    return now_;
  }

 private:
  struct Item {
    LogicalTime at;
    std::uint64_t seq;
    Handler handler;

    bool operator>(const Item& other) const {
      return std::tie(at, seq) > std::tie(other.at, other.seq);
    }
  };

  std::priority_queue<Item, std::vector<Item>, std::greater<>> queue_;
  std::uint64_t next_seq_ = 0;
  LogicalTime now_ = 0;
};

}  // namespace moshpit
