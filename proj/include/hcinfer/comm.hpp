/* Copyright 2026 The hcinfer Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "hcinfer/errors.hpp"
#include "hcinfer/tensor.hpp"

namespace hcinfer {

/// Data-plane message body. `meta` carries small integer side data (packed
/// offsets, flags) and `virtual_time` the sender's cost-model clock.
struct Payload {
  Tensor tensor;
  std::vector<std::uint64_t> meta;
  double virtual_time = 0.0;
  // Set when an upstream stage gave up on this tag; tensor is meaningless.
  bool failed = false;
  std::string error;
};

enum class HandleState { pending, done, failed };

/// Completion of one asynchronous operation. Moves from pending to done or
/// failed exactly once; copies share the same state.
class CompletionHandle {
 public:
  CompletionHandle() : state_(std::make_shared<State>()) {}
  explicit CompletionHandle(std::uint64_t op_id) : CompletionHandle() {
    state_->op_id = op_id;
  }

  std::uint64_t op_id() const { return state_->op_id; }

  HandleState state() const {
    std::lock_guard lk(state_->mu);
    return state_->state;
  }

  /// Blocks until the operation settles. Returns the payload for receives
  /// (an empty payload for sends); throws if the operation failed.
  Payload wait() const {
    std::unique_lock lk(state_->mu);
    state_->cv.wait(lk, [&] { return state_->state != HandleState::pending; });
    return settled_locked();
  }

  std::optional<Payload> wait_for(std::chrono::milliseconds timeout) const {
    std::unique_lock lk(state_->mu);
    if (!state_->cv.wait_for(lk, timeout, [&] {
          return state_->state != HandleState::pending;
        })) {
      return std::nullopt;
    }
    return settled_locked();
  }

  bool complete(Payload payload) const {
    std::lock_guard lk(state_->mu);
    if (state_->state != HandleState::pending) return false;
    state_->payload = std::move(payload);
    state_->state = HandleState::done;
    state_->cv.notify_all();
    return true;
  }

  bool fail(std::string why) const {
    std::lock_guard lk(state_->mu);
    if (state_->state != HandleState::pending) return false;
    state_->error = std::move(why);
    state_->state = HandleState::failed;
    state_->cv.notify_all();
    return true;
  }

 private:
  struct State {
    std::mutex mu;
    std::condition_variable cv;
    HandleState state = HandleState::pending;
    std::uint64_t op_id = 0;
    std::optional<Payload> payload;
    std::string error;
  };

  Payload settled_locked() const {
    if (state_->state == HandleState::failed) {
      throw ProtocolError("operation " + std::to_string(state_->op_id) +
                          " failed: " + state_->error);
    }
    return state_->payload ? *state_->payload : Payload{};
  }

  std::shared_ptr<State> state_;
};

struct CounterSnapshot {
  std::uint64_t all_reduce = 0;
  std::uint64_t send = 0;
  std::uint64_t recv = 0;

  CounterSnapshot& operator+=(const CounterSnapshot& o) {
    all_reduce += o.all_reduce;
    send += o.send;
    recv += o.recv;
    return *this;
  }
  friend CounterSnapshot operator-(CounterSnapshot a, const CounterSnapshot& b) {
    a.all_reduce -= b.all_reduce;
    a.send -= b.send;
    a.recv -= b.recv;
    return a;
  }
  friend bool operator==(const CounterSnapshot&, const CounterSnapshot&) = default;
};

struct CommCounters {
  std::atomic<std::uint64_t> all_reduce{0};
  std::atomic<std::uint64_t> send{0};
  std::atomic<std::uint64_t> recv{0};

  CounterSnapshot snapshot() const {
    return {all_reduce.load(), send.load(), recv.load()};
  }
};

/// Rank arithmetic: tensor-parallel ranks are contiguous within a stage, so
/// rank r has tp_rank = r % tp and stage = r / tp.
struct RankLayout {
  std::size_t world_size = 1;
  std::size_t tp_size = 1;
  std::size_t pp_size = 1;

  static RankLayout make(std::size_t world, std::size_t tp, std::size_t pp) {
    if (world == 0 || tp == 0 || pp == 0) {
      throw ConfigError("world, tp and pp sizes must be >= 1");
    }
    if (world != tp * pp) {
      throw ConfigError("world size " + std::to_string(world) +
                        " != tp " + std::to_string(tp) + " x pp " +
                        std::to_string(pp));
    }
    return {world, tp, pp};
  }

  std::size_t tp_rank(std::size_t rank) const { return rank % tp_size; }
  std::size_t stage(std::size_t rank) const { return rank / tp_size; }
  std::size_t rank_of(std::size_t stage, std::size_t tp_rank) const {
    return stage * tp_size + tp_rank;
  }

  std::vector<std::size_t> tp_group(std::size_t rank) const {
    std::vector<std::size_t> g;
    for (std::size_t t = 0; t < tp_size; ++t) g.push_back(rank_of(stage(rank), t));
    return g;
  }

  std::vector<std::size_t> pp_group(std::size_t rank) const {
    std::vector<std::size_t> g;
    for (std::size_t s = 0; s < pp_size; ++s) g.push_back(rank_of(s, tp_rank(rank)));
    return g;
  }
};

namespace detail {

// Rendezvous for one tensor-parallel group. Contributions are gathered,
// summed in ascending rank order by whichever member arrives last, and the
// single result is handed to every member.
class GroupReduce {
 public:
  explicit GroupReduce(std::size_t size) : inputs_(size) {}

  Tensor run(std::size_t member, Tensor x) {
    std::unique_lock lk(mu_);
    cv_.wait(lk, [&] { return !draining_ || closed_; });
    if (closed_) throw ProtocolError("all_reduce after shutdown");
    const std::uint64_t gen = generation_;
    inputs_[member] = std::move(x);
    if (++arrived_ == inputs_.size()) {
      reduce_locked();
      draining_ = true;
      cv_.notify_all();
    } else {
      cv_.wait(lk, [&] { return (draining_ && generation_ == gen) || closed_; });
      if (!draining_) throw ProtocolError("all_reduce interrupted by shutdown");
    }
    std::optional<Tensor> out = result_;
    std::string err = error_;
    if (++departed_ == inputs_.size()) {
      for (auto& in : inputs_) in.reset();
      result_.reset();
      error_.clear();
      arrived_ = departed_ = 0;
      draining_ = false;
      ++generation_;
      cv_.notify_all();
    }
    if (!err.empty()) throw ProtocolError(err);
    return std::move(*out);
  }

  void close() {
    std::lock_guard lk(mu_);
    closed_ = true;
    cv_.notify_all();
  }

 private:
  void reduce_locked() {
    const Shape& shape = inputs_[0]->shape();
    for (std::size_t i = 1; i < inputs_.size(); ++i) {
      if (inputs_[i]->shape() != shape) {
        error_ = "all_reduce shape divergence: member 0 has " +
                 shape_string(shape) + ", member " + std::to_string(i) +
                 " has " + shape_string(inputs_[i]->shape());
        return;
      }
    }
    std::vector<double> sum(inputs_[0]->data().begin(), inputs_[0]->data().end());
    for (std::size_t i = 1; i < inputs_.size(); ++i) {
      auto d = inputs_[i]->data();
      for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += d[j];
    }
    result_ = Tensor(shape, std::move(sum));
  }

  std::mutex mu_;
  std::condition_variable cv_;
  std::vector<std::optional<Tensor>> inputs_;
  std::optional<Tensor> result_;
  std::string error_;
  std::uint64_t generation_ = 0;
  std::size_t arrived_ = 0;
  std::size_t departed_ = 0;
  bool draining_ = false;
  bool closed_ = false;
};

}  // namespace detail

/// Shared data plane for every rank of one runtime: tagged point-to-point
/// mailboxes and one reduction rendezvous per tensor-parallel group.
class Fabric {
 public:
  explicit Fabric(RankLayout layout) : layout_(layout), counters_(layout.world_size) {
    for (std::size_t s = 0; s < layout.pp_size; ++s) {
      groups_.push_back(std::make_unique<detail::GroupReduce>(layout.tp_size));
    }
  }

  const RankLayout& layout() const { return layout_; }

  CompletionHandle send(std::size_t src, std::size_t dst, std::uint64_t tag,
                        Payload payload) {
    check_rank(src);
    check_rank(dst);
    CompletionHandle done(next_op_++);
    std::lock_guard lk(mail_mu_);
    if (closed_) {
      done.fail("fabric shut down");
      return done;
    }
    auto& slot = mail_[{src, dst, tag}];
    if (slot.payload) {
      throw ProtocolError("duplicate tag " + std::to_string(tag) + " from " +
                          std::to_string(src) + " to " + std::to_string(dst) +
                          " while first is undelivered");
    }
    counters_[src].send++;
    if (slot.waiter) {
      counters_[dst].recv++;
      slot.waiter->complete(std::move(payload));
      mail_.erase({src, dst, tag});
    } else {
      slot.payload = std::move(payload);
    }
    done.complete({});
    return done;
  }

  CompletionHandle recv(std::size_t src, std::size_t dst, std::uint64_t tag) {
    check_rank(src);
    check_rank(dst);
    CompletionHandle handle(next_op_++);
    std::lock_guard lk(mail_mu_);
    auto it = mail_.find({src, dst, tag});
    if (it != mail_.end() && it->second.payload) {
      counters_[dst].recv++;
      handle.complete(std::move(*it->second.payload));
      mail_.erase(it);
      return handle;
    }
    if (it != mail_.end() && it->second.waiter) {
      throw ProtocolError("duplicate receive for tag " + std::to_string(tag));
    }
    if (closed_) {
      handle.fail("fabric shut down");
      return handle;
    }
    mail_[{src, dst, tag}].waiter = handle;
    return handle;
  }

  Tensor all_reduce(std::size_t rank, Tensor x) {
    check_rank(rank);
    counters_[rank].all_reduce++;
    if (layout_.tp_size == 1) return x;
    return groups_[layout_.stage(rank)]->run(layout_.tp_rank(rank), std::move(x));
  }

  /// Fails every pending receive and wakes collective waiters.
  void shutdown() {
    std::lock_guard lk(mail_mu_);
    closed_ = true;
    for (auto& [key, slot] : mail_) {
      if (slot.waiter) slot.waiter->fail("peer shut down");
    }
    mail_.clear();
    for (auto& g : groups_) g->close();
  }

  CounterSnapshot counters(std::size_t rank) const {
    return counters_.at(rank).snapshot();
  }

  CounterSnapshot total_counters() const {
    CounterSnapshot total;
    for (const auto& c : counters_) total += c.snapshot();
    return total;
  }

 private:
  using MailKey = std::tuple<std::size_t, std::size_t, std::uint64_t>;
  struct Mail {
    std::optional<Payload> payload;
    std::optional<CompletionHandle> waiter;
  };

  void check_rank(std::size_t r) const {
    if (r >= layout_.world_size) {
      throw ProtocolError("rank " + std::to_string(r) + " outside world of " +
                          std::to_string(layout_.world_size));
    }
  }

  RankLayout layout_;
  std::vector<CommCounters> counters_;
  std::vector<std::unique_ptr<detail::GroupReduce>> groups_;
  std::atomic<std::uint64_t> next_op_{1};
  std::mutex mail_mu_;
  std::map<MailKey, Mail> mail_;
  bool closed_ = false;
};

/// One rank's view of the data plane.
class GlobalContext {
 public:
  GlobalContext(std::shared_ptr<Fabric> fabric, std::size_t rank)
      : fabric_(std::move(fabric)), rank_(rank) {}

  std::size_t rank() const { return rank_; }
  std::size_t world_size() const { return fabric_->layout().world_size; }
  std::size_t tp_size() const { return fabric_->layout().tp_size; }
  std::size_t pp_size() const { return fabric_->layout().pp_size; }
  std::size_t tp_rank() const { return fabric_->layout().tp_rank(rank_); }
  std::size_t stage() const { return fabric_->layout().stage(rank_); }
  std::vector<std::size_t> tp_group() const { return fabric_->layout().tp_group(rank_); }
  std::vector<std::size_t> pp_group() const { return fabric_->layout().pp_group(rank_); }

  /// Collective over this rank's tensor-parallel group. Every member must
  /// call it; all receive the same sum, accumulated in ascending rank order.
  Tensor all_reduce_sum(Tensor x) { return fabric_->all_reduce(rank_, std::move(x)); }

  CompletionHandle send_async(std::size_t dest, std::uint64_t tag, Payload payload) {
    return fabric_->send(rank_, dest, tag, std::move(payload));
  }

  CompletionHandle recv_async(std::size_t src, std::uint64_t tag) {
    return fabric_->recv(src, rank_, tag);
  }

  CounterSnapshot counters() const { return fabric_->counters(rank_); }
  Fabric& fabric() { return *fabric_; }

 private:
  std::shared_ptr<Fabric> fabric_;
  std::size_t rank_;
};

/// Engine-to-worker control channel: reliable, FIFO per sender. Copies share
/// the same inbox.
template <class Msg>
class ControlEndpoint {
 public:
  explicit ControlEndpoint(std::size_t worker_id)
      : worker_id_(worker_id), state_(std::make_shared<State>()) {}

  std::size_t worker_id() const { return worker_id_; }

  void send(Msg msg) const {
    std::lock_guard lk(state_->mu);
    if (state_->down) throw DeliveryError(worker_id_, "worker is down");
    if (state_->closed) throw DeliveryError(worker_id_, "endpoint closed");
    state_->inbox.push_back(std::move(msg));
    state_->cv.notify_one();
  }

  /// Next message, blocking. Empty once the endpoint is closed and drained,
  /// or immediately if the worker went down.
  std::optional<Msg> serve() const {
    std::unique_lock lk(state_->mu);
    state_->cv.wait(lk, [&] {
      return !state_->inbox.empty() || state_->closed || state_->down;
    });
    if (state_->down || state_->inbox.empty()) return std::nullopt;
    Msg m = std::move(state_->inbox.front());
    state_->inbox.pop_front();
    return m;
  }

  void close() const {
    std::lock_guard lk(state_->mu);
    state_->closed = true;
    state_->cv.notify_all();
  }

  /// Simulates a crashed worker: later sends fail with DeliveryError.
  void mark_down() const {
    std::lock_guard lk(state_->mu);
    state_->down = true;
    state_->cv.notify_all();
  }

  std::size_t pending() const {
    std::lock_guard lk(state_->mu);
    return state_->inbox.size();
  }

 private:
  struct State {
    std::mutex mu;
    std::condition_variable cv;
    std::deque<Msg> inbox;
    bool closed = false;
    bool down = false;
  };

  std::size_t worker_id_;
  std::shared_ptr<State> state_;
};

template <class Msg>
void control_send(const ControlEndpoint<Msg>& endpoint, Msg msg) {
  endpoint.send(std::move(msg));
}

template <class Msg>
std::optional<Msg> control_serve(const ControlEndpoint<Msg>& endpoint) {
  return endpoint.serve();
}

template <class Msg>
struct CommWorld {
  std::shared_ptr<Fabric> fabric;
  std::vector<GlobalContext> ranks;
  std::vector<ControlEndpoint<Msg>> endpoints;
};

template <class Msg>
CommWorld<Msg> init_contexts(std::size_t world_size, std::size_t tp_size,
                             std::size_t pp_size) {
  auto layout = RankLayout::make(world_size, tp_size, pp_size);
  CommWorld<Msg> w;
  w.fabric = std::make_shared<Fabric>(layout);
  for (std::size_t r = 0; r < world_size; ++r) {
    w.ranks.emplace_back(w.fabric, r);
    w.endpoints.emplace_back(r);
  }
  return w;
}

}  // namespace hcinfer
