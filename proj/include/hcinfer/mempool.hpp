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

#include <algorithm>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "hcinfer/cost.hpp"
#include "hcinfer/errors.hpp"
#include "hcinfer/model.hpp"
#include "hcinfer/tensor.hpp"

namespace hcinfer {

enum class MemoryKind { local_accelerator, peer_accelerator, host };

/// Byte budget of one device. Every load and evict is checked.
class MemoryBudget {
 public:
  MemoryBudget(std::size_t device_id, std::uint64_t capacity_bytes,
               MemoryKind kind = MemoryKind::local_accelerator)
      : device_id_(device_id), capacity_(capacity_bytes), kind_(kind) {}

  std::size_t device_id() const { return device_id_; }
  std::uint64_t capacity_bytes() const { return capacity_; }
  std::uint64_t resident_bytes() const { return resident_; }
  std::uint64_t peak_bytes() const { return peak_; }
  std::uint64_t free_bytes() const { return capacity_ - resident_; }
  MemoryKind kind() const { return kind_; }

  void load(std::size_t layer, std::uint64_t bytes) {
    if (loaded_.contains(layer)) {
      throw ProtocolError("layer " + std::to_string(layer) + " loaded twice");
    }
    if (resident_ + bytes > capacity_) {
      throw CapacityError(layer, "loading " + std::to_string(bytes) +
                                     " bytes exceeds capacity " +
                                     std::to_string(capacity_) + " (resident " +
                                     std::to_string(resident_) + ")");
    }
    loaded_.emplace(layer, bytes);
    resident_ += bytes;
    peak_ = std::max(peak_, resident_);
  }

  void evict(std::size_t layer) {
    auto it = loaded_.find(layer);
    if (it == loaded_.end()) {
      throw ProtocolError("evict of layer " + std::to_string(layer) +
                          " that is not resident");
    }
    resident_ -= it->second;
    loaded_.erase(it);
  }

 private:
  std::size_t device_id_;
  std::uint64_t capacity_;
  std::uint64_t resident_ = 0;
  std::uint64_t peak_ = 0;
  MemoryKind kind_;
  std::map<std::size_t, std::uint64_t> loaded_;
};

enum class HomeKind { local, peer, host };

struct LayerHome {
  HomeKind kind = HomeKind::local;
  std::size_t device = 0;
  friend bool operator==(const LayerHome&, const LayerHome&) = default;
};

struct PlacementPlan {
  std::vector<LayerHome> homes;
  std::size_t prefetch_depth = 1;

  std::size_t num_layers() const { return homes.size(); }

  std::vector<std::size_t> offloaded() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < homes.size(); ++i) {
      if (homes[i].kind != HomeKind::local) out.push_back(i);
    }
    return out;
  }

  std::size_t local_count() const { return homes.size() - offloaded().size(); }
};

struct PeerDevice {
  std::size_t device_id = 1;
  std::uint64_t free_bytes = UINT64_MAX;
};

/// Link speeds used to price a fetch. `param_bytes`, when non-zero,
/// overrides the real per-layer size (for modelling full-size layers with
/// a small numeric model).
struct BandwidthModel {
  double peer_link_GBps = 600.0;
  double host_link_GBps = 32.0;
  // Fraction of peer bandwidth lost to work already running on the peer.
  double peer_interference = 0.0;
  std::uint64_t param_bytes = 0;

  double link_for(HomeKind home) const {
    switch (home) {
      case HomeKind::peer: return peer_link_GBps * (1.0 - peer_interference);
      case HomeKind::host: return host_link_GBps;
      case HomeKind::local: break;
    }
    return 0.0;
  }

  void validate() const {
    if (!(peer_link_GBps > 0.0) || !(host_link_GBps > 0.0) ||
        peer_interference < 0.0 || peer_interference >= 1.0) {
      throw ConfigError("bandwidths must be positive and interference in [0, 1)");
    }
  }
};

/// Keeps n layers on the local device and spreads the other L - n evenly:
/// [0, L) is cut into L - n contiguous groups (earlier groups one larger when
/// uneven) and the last layer of each group is offloaded. Offloaded layers
/// go round-robin to peers that still have room, then to host memory.
inline PlacementPlan plan_placement(std::size_t num_layers, std::size_t local_layers,
                                    std::size_t prefetch_depth,
                                    std::span<const PeerDevice> peers,
                                    std::uint64_t layer_bytes) {
  if (local_layers == 0) throw ConfigError("local capacity must hold >= 1 layer");
  PlacementPlan plan;
  plan.prefetch_depth = prefetch_depth;
  plan.homes.assign(num_layers, LayerHome{});
  if (num_layers <= local_layers) return plan;

  const std::size_t groups = num_layers - local_layers;
  const std::size_t base = num_layers / groups, extra = num_layers % groups;
  std::vector<std::uint64_t> free;
  for (const auto& p : peers) free.push_back(p.free_bytes);
  std::size_t cursor = 0, end = 0;
  for (std::size_t g = 0; g < groups; ++g) {
    end += base + (g < extra ? 1 : 0);
    const std::size_t layer = end - 1;
    LayerHome home{HomeKind::host, 0};
    for (std::size_t tries = 0; tries < peers.size(); ++tries) {
      const std::size_t p = (cursor + tries) % peers.size();
      if (free[p] >= layer_bytes) {
        free[p] -= layer_bytes;
        home = {HomeKind::peer, peers[p].device_id};
        cursor = p + 1;
        break;
      }
    }
    plan.homes[layer] = home;
  }
  return plan;
}

/// Single unbounded peer (device 1).
inline PlacementPlan plan_placement(std::size_t num_layers, std::size_t local_layers,
                                    std::size_t prefetch_depth = 1) {
  const PeerDevice peer{};
  return plan_placement(num_layers, local_layers, prefetch_depth,
                        std::span<const PeerDevice>(&peer, 1), 0);
}

enum class Lane { compute, transfer };
enum class IntervalKind { fetch, compute, stall };

inline const char* to_string(Lane l) { return l == Lane::compute ? "compute" : "transfer"; }
inline const char* to_string(IntervalKind k) {
  switch (k) {
    case IntervalKind::fetch: return "fetch";
    case IntervalKind::compute: return "compute";
    case IntervalKind::stall: return "stall";
  }
  return "?";
}

struct TimelineRecord {
  Lane lane = Lane::compute;
  std::size_t layer = 0;
  double start = 0.0;
  double end = 0.0;
  IntervalKind kind = IntervalKind::compute;
};

enum class MemoryEventKind { load, evict };

struct MemoryEvent {
  double time = 0.0;
  MemoryEventKind kind = MemoryEventKind::load;
  std::size_t layer = 0;
  std::uint64_t bytes = 0;
};

/// Virtual-clock record of one pooled forward.
struct Timeline {
  double start = 0.0;
  double end = 0.0;
  std::vector<TimelineRecord> records;
  std::vector<MemoryEvent> memory;

  double duration() const { return end - start; }

  double total(IntervalKind kind) const {
    double t = 0.0;
    for (const auto& r : records) {
      if (r.kind == kind) t += r.end - r.start;
    }
    return t;
  }

  std::size_t count(IntervalKind kind) const {
    return static_cast<std::size_t>(std::count_if(
        records.begin(), records.end(), [&](const auto& r) { return r.kind == kind; }));
  }

  void write_csv(std::ostream& os, bool header = true) const {
    if (header) os << "lane,layer,start,end,kind\n";
    auto old = os.precision(17);
    for (const auto& r : records) {
      os << to_string(r.lane) << ',' << r.layer << ',' << r.start << ',' << r.end
         << ',' << to_string(r.kind) << '\n';
    }
    os.precision(old);
  }
};

/// Replays memory events in time order (evicts before loads at equal
/// times) against a fresh budget. Throws CapacityError naming the layer that
/// first overflows, or ProtocolError on an evict without a load.
inline MemoryBudget budget_track(std::vector<MemoryEvent> events,
                                 std::uint64_t capacity_bytes,
                                 std::size_t device_id = 0) {
  std::stable_sort(events.begin(), events.end(), [](const auto& a, const auto& b) {
    if (a.time != b.time) return a.time < b.time;
    return a.kind == MemoryEventKind::evict && b.kind == MemoryEventKind::load;
  });
  MemoryBudget budget(device_id, capacity_bytes);
  for (const auto& e : events) {
    if (e.kind == MemoryEventKind::load) {
      budget.load(e.layer, e.bytes);
    } else {
      budget.evict(e.layer);
    }
  }
  return budget;
}

/// Where one layer's parameters live. Local layers are resident; others
/// sit in pool storage on a peer or the host and are fetched per use.
template <class LayerT>
struct LayerSlot {
  std::shared_ptr<const LayerT> params;
  LayerHome home;
};

/// Runs a fixed list of layers with two lanes: the caller's thread computes
/// in order, a transfer thread copies off-home layers into staging slots.
/// The fetch of layer j is enqueued when layer j - k starts (all j <= k are
/// enqueued up front); layer j waits only on its own fetch, and its staging
/// copy is released as soon as it has run. Virtual times come from the cost
/// callbacks, so the timeline is deterministic.
template <class LayerT>
class PrefetchExecutor {
 public:
  PrefetchExecutor(std::vector<LayerSlot<LayerT>> layers, std::size_t prefetch_depth,
                   std::uint64_t capacity_bytes, BandwidthModel bandwidth,
                   std::uint64_t layer_bytes)
      : layers_(std::move(layers)),
        depth_(prefetch_depth),
        capacity_(capacity_bytes),
        bandwidth_(bandwidth),
        layer_bytes_(layer_bytes) {
    bandwidth_.validate();
    std::size_t local = 0, remote = 0;
    for (const auto& l : layers_) {
      if (!l.params) throw ConfigError("layer slot without parameters");
      (l.home.kind == HomeKind::local ? local : remote)++;
    }
    if (remote > 0) {
      if (depth_ == 0) throw ConfigError("prefetch depth must be >= 1");
      const std::uint64_t local_bytes = local * layer_bytes_;
      const std::uint64_t staging =
          capacity_ > local_bytes ? (capacity_ - local_bytes) / layer_bytes_ : 0;
      const std::size_t needed = std::min(depth_, remote);
      if (staging < needed) {
        throw ConfigError("staging area holds " + std::to_string(staging) +
                          " layers, prefetch depth needs " + std::to_string(needed));
      }
      for (std::size_t i = 0; i < needed; ++i) free_slots_.push_back(0.0);
      lane_ = std::thread([this] { transfer_loop(); });
    }
  }

  PrefetchExecutor(const PrefetchExecutor&) = delete;
  PrefetchExecutor& operator=(const PrefetchExecutor&) = delete;

  ~PrefetchExecutor() {
    {
      std::lock_guard lk(mu_);
      stopping_ = true;
    }
    cv_.notify_all();
    if (lane_.joinable()) lane_.join();
  }

  std::size_t num_layers() const { return layers_.size(); }
  const LayerSlot<LayerT>& slot(std::size_t i) const { return layers_.at(i); }

  double fetch_seconds(std::size_t i) const {
    const auto& l = layers_[i];
    return l.home.kind == HomeKind::local
               ? 0.0
               : transfer_time(static_cast<double>(layer_bytes_), bandwidth_.link_for(l.home.kind));
  }

  /// `compute(i, params, act)` returns the next activation; `cost(i, params)`
  /// gives layer i's virtual compute seconds.
  template <class Act, class ComputeFn, class CostFn>
  std::pair<Act, Timeline> run(Act act, double v_start, ComputeFn&& compute, CostFn&& cost) {
    Timeline tl;
    tl.start = v_start;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (layers_[i].home.kind == HomeKind::local) {
        tl.memory.push_back({v_start, MemoryEventKind::load, i, layer_bytes_});
      }
    }
    std::map<std::size_t, std::future<Fetched>> pending;
    double now = v_start;
    bool holding_slot = false;
    auto enqueue = [&](std::size_t j) {
      if (j >= layers_.size() || layers_[j].home.kind == HomeKind::local) return;
      std::promise<Fetched> promise;
      pending.emplace(j, promise.get_future());
      {
        std::lock_guard lk(mu_);
        jobs_.push_back({j, now, std::move(promise)});
      }
      cv_.notify_all();
    };

    try {
      for (std::size_t j = 0; j <= depth_ && j < layers_.size(); ++j) enqueue(j);
      for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (i > 0) enqueue(i + depth_);
        std::shared_ptr<const LayerT> params = layers_[i].params;
        const bool remote = layers_[i].home.kind != HomeKind::local;
        if (remote) {
          Fetched f = pending.at(i).get();
          pending.erase(i);
          holding_slot = true;
          tl.records.push_back(f.record);
          tl.memory.push_back(f.load);
          if (f.ready > now) {
            tl.records.push_back({Lane::compute, i, now, f.ready, IntervalKind::stall});
            now = f.ready;
          }
          params = std::move(f.staged);
        }
        act = compute(i, *params, std::move(act));
        const double c = cost(i, *params);
        tl.records.push_back({Lane::compute, i, now, now + c, IntervalKind::compute});
        now += c;
        if (remote) {
          params.reset();
          tl.memory.push_back({now, MemoryEventKind::evict, i, layer_bytes_});
          release_slot(now);
          holding_slot = false;
        }
      }
    } catch (...) {
      if (holding_slot) release_slot(now);
      for (auto& [j, fut] : pending) {
        try {
          fut.get();
        } catch (...) {
        }
        release_slot(now);
      }
      throw;
    }
    tl.end = now;
    std::sort(tl.records.begin(), tl.records.end(),
              [](const auto& a, const auto& b) { return a.start < b.start; });
    return {std::move(act), std::move(tl)};
  }

 private:
  struct Fetched {
    std::shared_ptr<const LayerT> staged;
    double ready = 0.0;
    TimelineRecord record;
    MemoryEvent load;
  };

  struct Job {
    std::size_t layer;
    double enqueued;
    std::promise<Fetched> promise;
  };

  void release_slot(double v_free) {
    {
      std::lock_guard lk(mu_);
      free_slots_.push_back(v_free);
    }
    cv_.notify_all();
  }

  void transfer_loop() {
    for (;;) {
      Job job;
      double slot_free = 0.0;
      {
        std::unique_lock lk(mu_);
        cv_.wait(lk, [&] { return stopping_ || (!jobs_.empty() && !free_slots_.empty()); });
        if (stopping_) return;
        job = std::move(jobs_.front());
        jobs_.pop_front();
        slot_free = free_slots_.front();
        free_slots_.pop_front();
      }
      const double begin = std::max({lane_clock_, job.enqueued, slot_free});
      const double end = begin + fetch_seconds(job.layer);
      lane_clock_ = end;
      Fetched f;
      f.staged = std::make_shared<const LayerT>(*layers_[job.layer].params);
      f.ready = end;
      f.record = {Lane::transfer, job.layer, begin, end, IntervalKind::fetch};
      f.load = {begin, MemoryEventKind::load, job.layer, layer_bytes_};
      job.promise.set_value(std::move(f));
    }
  }

  std::vector<LayerSlot<LayerT>> layers_;
  std::size_t depth_;
  std::uint64_t capacity_;
  BandwidthModel bandwidth_;
  std::uint64_t layer_bytes_;

  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Job> jobs_;
  std::deque<double> free_slots_;
  double lane_clock_ = 0.0;  // touched only by the transfer thread
  bool stopping_ = false;
  std::thread lane_;
};

struct PooledOptions {
  CostModel cost;
  BandwidthModel bandwidth;
  // 0 means exactly local layers + prefetch_depth staging slots.
  std::uint64_t capacity_bytes = 0;
};

struct PooledResult {
  Tensor output;
  Timeline timeline;
};

inline std::uint64_t pooled_layer_bytes(const ModelParams& params, const BandwidthModel& bw) {
  if (bw.param_bytes) return bw.param_bytes;
  return params.layers.empty() ? 0 : params.layers.front().bytes();
}

/// Full forward with parameters spread over the pool per `plan`. Numerically
/// identical to serial_forward; the timeline uses compute cost
/// seconds_per_token_param * B * S_pad * layer params.
inline PooledResult pooled_forward(const ModelParams& params, const PlacementPlan& plan,
                                   const Batch& batch, const PooledOptions& options) {
  if (plan.num_layers() != params.layers.size()) {
    throw ConfigError("placement covers " + std::to_string(plan.num_layers()) +
                      " layers, model has " + std::to_string(params.layers.size()));
  }
  batch.validate(params.config);
  const std::uint64_t bytes = pooled_layer_bytes(params, options.bandwidth);
  std::vector<LayerSlot<LayerParams>> slots;
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    slots.push_back({std::make_shared<const LayerParams>(params.layers[i]), plan.homes[i]});
  }
  const std::uint64_t capacity =
      options.capacity_bytes ? options.capacity_bytes
                             : (plan.local_count() + plan.prefetch_depth) * bytes;
  PrefetchExecutor<LayerParams> exec(std::move(slots), plan.prefetch_depth, capacity,
                                     options.bandwidth, bytes);
  const auto& c = params.config;
  const auto mask = batch_mask(c, batch);
  const std::size_t tokens = batch.batch_size * batch.pad_len;
  auto [x, timeline] = exec.run(
      embed(params.embedding, params.position, batch), 0.0,
      [&](std::size_t, const LayerParams& layer, Tensor act) {
        return transformer_layer_forward(act, layer, c.num_heads, mask, c.layer_norm_eps,
                                         c.pre_layer_norm);
      },
      [&](std::size_t, const LayerParams& layer) {
        return options.cost.layer_seconds(tokens, layer.param_count());
      });
  budget_track(timeline.memory, capacity);
  return {final_norm(params, x), std::move(timeline)};
}

}  // namespace hcinfer
