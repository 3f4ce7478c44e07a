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
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "hcinfer/errors.hpp"
#include "hcinfer/tensor.hpp"

namespace hcinfer {

/// Monotone key source. Each acquisition returns the previous value + 1,
/// starting at 0; keys never wrap within a run.
class LoopCounter {
 public:
  std::uint64_t next() { return next_.fetch_add(1, std::memory_order_relaxed); }
  std::uint64_t peek() const { return next_.load(std::memory_order_relaxed); }

 private:
  std::atomic<std::uint64_t> next_{0};
};

/// Per-worker queue that hands out work strictly in key order 0, 1, 2, ...
/// no matter in which order entries were inserted. A consumer always gets the
/// entry for the local counter's current value, blocking until it arrives.
template <class T>
class ConsistencyQueue {
 public:
  void insert(std::uint64_t key, T item) {
    std::lock_guard lk(mu_);
    if (key < next_ || entries_.contains(key)) {
      throw ProtocolError("duplicate insert of key " + std::to_string(key));
    }
    entries_.emplace(key, std::move(item));
    cv_.notify_all();
  }

  /// Blocks for the next key in order. Empty once the queue is closed and
  /// that key is not present.
  std::optional<std::pair<std::uint64_t, T>> pop_next() {
    std::unique_lock lk(mu_);
    cv_.wait(lk, [&] { return entries_.contains(next_) || closed_; });
    return take_locked();
  }

  std::optional<std::pair<std::uint64_t, T>> pop_next_for(std::chrono::milliseconds timeout) {
    std::unique_lock lk(mu_);
    cv_.wait_for(lk, timeout, [&] { return entries_.contains(next_) || closed_; });
    return take_locked();
  }

  void close() {
    std::lock_guard lk(mu_);
    closed_ = true;
    cv_.notify_all();
  }

  std::size_t size() const {
    std::lock_guard lk(mu_);
    return entries_.size();
  }

  std::uint64_t next_key() const {
    std::lock_guard lk(mu_);
    return next_;
  }

 private:
  std::optional<std::pair<std::uint64_t, T>> take_locked() {
    auto it = entries_.find(next_);
    if (it == entries_.end()) return std::nullopt;
    auto node = entries_.extract(it);
    ++next_;
    return std::make_optional(std::make_pair(node.key(), std::move(node.mapped())));
  }

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::uint64_t, T> entries_;
  std::uint64_t next_ = 0;
  bool closed_ = false;
};

struct LayerRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  friend bool operator==(const LayerRange&, const LayerRange&) = default;
};

/// Contiguous layer ranges per pipeline stage. Stage 0 also owns the
/// embedding and the last stage the final norm.
struct StagePlan {
  std::vector<LayerRange> stages;

  std::size_t pp_size() const { return stages.size(); }
  bool is_first(std::size_t stage) const { return stage == 0; }
  bool is_last(std::size_t stage) const { return stage + 1 == stages.size(); }
};

/// Sizes differ by at most one; earlier stages take the remainder.
inline StagePlan partition_layers(std::size_t num_layers, std::size_t pp_size) {
  if (pp_size == 0 || pp_size > num_layers) {
    throw ConfigError("cannot split " + std::to_string(num_layers) +
                      " layers into " + std::to_string(pp_size) + " stages");
  }
  StagePlan plan;
  const std::size_t base = num_layers / pp_size, extra = num_layers % pp_size;
  std::size_t begin = 0;
  for (std::size_t s = 0; s < pp_size; ++s) {
    const std::size_t n = base + (s < extra ? 1 : 0);
    plan.stages.push_back({begin, begin + n});
    begin += n;
  }
  return plan;
}

/// Engine-to-worker launch message for one batch. Every worker gets the
/// sequence lengths; only stage 0 gets the token ids.
struct Command {
  std::uint64_t key = 0;
  std::uint64_t batch_id = 0;
  std::size_t batch_size = 1;
  std::size_t pad_len = 1;
  std::vector<std::size_t> seq_lens;
  std::optional<std::vector<std::int64_t>> tokens;
  bool drce = false;
  double virtual_submit = 0.0;
};

/// Caller-side future for one submitted batch.
class ResultHandle {
 public:
  using Clock = std::chrono::steady_clock;

  ResultHandle() : state_(std::make_shared<State>()) {}
  ResultHandle(std::uint64_t key, double virtual_submit) : ResultHandle() {
    state_->key = key;
    state_->virtual_submit = virtual_submit;
    state_->submitted = Clock::now();
  }

  std::uint64_t key() const { return state_->key; }

  bool ready() const {
    std::lock_guard lk(state_->mu);
    return state_->settled;
  }

  /// Blocks until the last stage delivers. Repeated calls return the same
  /// value; a failed batch throws StageFailure every time.
  Tensor wait() const {
    std::unique_lock lk(state_->mu);
    state_->cv.wait(lk, [&] { return state_->settled; });
    if (state_->failure) {
      throw StageFailure(state_->key, state_->failed_stage, *state_->failure);
    }
    return *state_->value;
  }

  bool wait_for(std::chrono::milliseconds timeout) const {
    std::unique_lock lk(state_->mu);
    return state_->cv.wait_for(lk, timeout, [&] { return state_->settled; });
  }

  double virtual_submit() const { return state_->virtual_submit; }
  double virtual_finish() const {
    std::lock_guard lk(state_->mu);
    return state_->virtual_finish;
  }
  Clock::duration wall_latency() const {
    std::lock_guard lk(state_->mu);
    return state_->finished - state_->submitted;
  }

  bool fulfill(Tensor value, double virtual_finish) const {
    std::lock_guard lk(state_->mu);
    if (state_->settled) return false;
    state_->value = std::move(value);
    state_->virtual_finish = virtual_finish;
    state_->finished = Clock::now();
    state_->settled = true;
    state_->cv.notify_all();
    return true;
  }

  bool fail(std::size_t stage, std::string why) const {
    std::lock_guard lk(state_->mu);
    if (state_->settled) return false;
    state_->failure = std::move(why);
    state_->failed_stage = stage;
    state_->finished = Clock::now();
    state_->settled = true;
    state_->cv.notify_all();
    return true;
  }

 private:
  struct State {
    std::mutex mu;
    std::condition_variable cv;
    std::uint64_t key = 0;
    bool settled = false;
    std::optional<Tensor> value;
    std::optional<std::string> failure;
    std::size_t failed_stage = 0;
    double virtual_submit = 0.0;
    double virtual_finish = 0.0;
    Clock::time_point submitted{};
    Clock::time_point finished{};
  };

  std::shared_ptr<State> state_;
};

/// Fixed set of engine dispatch lanes pulling tasks from one FIFO.
class DispatchPool {
 public:
  explicit DispatchPool(std::size_t lanes) {
    if (lanes == 0) throw ConfigError("dispatch pool needs >= 1 lane");
    for (std::size_t i = 0; i < lanes; ++i) threads_.emplace_back([this] { run(); });
  }
  DispatchPool(const DispatchPool&) = delete;
  DispatchPool& operator=(const DispatchPool&) = delete;
  ~DispatchPool() { stop(); }

  void post(std::function<void()> task) {
    {
      std::lock_guard lk(mu_);
      if (stopping_) throw Error("dispatch pool stopped");
      tasks_.push_back(std::move(task));
    }
    cv_.notify_one();
  }

  /// Runs everything already posted, then joins the lanes.
  void stop() {
    {
      std::lock_guard lk(mu_);
      if (stopping_ && threads_.empty()) return;
      stopping_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) {
      if (t.joinable()) t.join();
    }
    threads_.clear();
  }

  std::size_t lanes() const { return threads_.size(); }

 private:
  void run() {
    for (;;) {
      std::function<void()> task;
      {
        std::unique_lock lk(mu_);
        cv_.wait(lk, [&] { return stopping_ || !tasks_.empty(); });
        if (tasks_.empty()) return;
        task = std::move(tasks_.front());
        tasks_.pop_front();
      }
      task();
    }
  }

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::function<void()>> tasks_;
  std::vector<std::thread> threads_;
  bool stopping_ = false;
};

enum class TraceKind { insert, pop, recv, compute, send, deliver, fail };

inline const char* to_string(TraceKind k) {
  switch (k) {
    case TraceKind::insert: return "insert";
    case TraceKind::pop: return "pop";
    case TraceKind::recv: return "recv";
    case TraceKind::compute: return "compute";
    case TraceKind::send: return "send";
    case TraceKind::deliver: return "deliver";
    case TraceKind::fail: return "fail";
  }
  return "?";
}

struct TraceEvent {
  std::int64_t timestamp_ns = 0;
  std::size_t rank = 0;
  TraceKind kind = TraceKind::pop;
  std::uint64_t key = 0;
};

/// Run-level event log, one line per event: timestamp, rank, kind, key.
class Trace {
 public:
  void record(std::size_t rank, TraceKind kind, std::uint64_t key) {
    const auto now = std::chrono::duration_cast<std::chrono::nanoseconds>(
                         std::chrono::steady_clock::now().time_since_epoch())
                         .count();
    std::lock_guard lk(mu_);
    events_.push_back({now, rank, kind, key});
  }

  std::vector<TraceEvent> events() const {
    std::lock_guard lk(mu_);
    return events_;
  }

  /// Keys of `kind` events on `rank`, in the order they were recorded.
  std::vector<std::uint64_t> keys(std::size_t rank, TraceKind kind) const {
    std::lock_guard lk(mu_);
    std::vector<std::uint64_t> out;
    for (const auto& e : events_) {
      if (e.rank == rank && e.kind == kind) out.push_back(e.key);
    }
    return out;
  }

  void write(std::ostream& os) const {
    std::lock_guard lk(mu_);
    for (const auto& e : events_) {
      os << e.timestamp_ns << ' ' << e.rank << ' ' << to_string(e.kind) << ' ' << e.key << '\n';
    }
  }

 private:
  mutable std::mutex mu_;
  std::vector<TraceEvent> events_;
};

}  // namespace hcinfer
