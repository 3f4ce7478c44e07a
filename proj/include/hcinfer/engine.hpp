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
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hcinfer/checkpoint.hpp"
#include "hcinfer/comm.hpp"
#include "hcinfer/cost.hpp"
#include "hcinfer/errors.hpp"
#include "hcinfer/mempool.hpp"
#include "hcinfer/model.hpp"
#include "hcinfer/pipeline.hpp"
#include "hcinfer/worker.hpp"

namespace hcinfer {

/// Peer memory pooling settings, applied per worker to the layers it owns.
struct PoolConfig {
  // Layers kept resident per worker; 0 means half the owned layers, rounded up.
  std::size_t local_layers = 0;
  std::size_t prefetch_depth = 1;
  BandwidthModel bandwidth;
  // Empty means one unbounded peer.
  std::vector<PeerDevice> peers;
  // Per-worker device capacity; 0 means exactly (local + prefetch) layers.
  std::uint64_t capacity_bytes = 0;

  void validate() const {
    if (prefetch_depth == 0) throw ConfigError("prefetch depth must be >= 1");
    bandwidth.validate();
  }
};

struct RuntimeConfig {
  ModelConfig model;
  std::size_t tp_size = 1;
  std::size_t pp_size = 1;
  bool drce = false;
  std::optional<PoolConfig> pool;
  // 0 means 2 * pp_size.
  std::size_t dispatch_lanes = 0;
  std::size_t queue_capacity = 64;
  std::string checkpoint_path;
  bool load_checkpoint = false;
  CostModel cost;
  bool trace = false;

  // Test hooks. `control_delay` runs on a dispatch lane before each command
  // is sent to `worker`; `fault` makes a stage fail a key.
  std::function<void(std::size_t worker, std::uint64_t key)> control_delay;
  std::function<bool(std::size_t stage, std::uint64_t key)> fault;

  std::size_t world_size() const { return tp_size * pp_size; }
  std::size_t lanes() const { return dispatch_lanes ? dispatch_lanes : 2 * pp_size; }

  void validate() const {
    model.validate();
    if (tp_size == 0 || pp_size == 0) throw ConfigError("tp_size and pp_size must be >= 1");
    if (model.num_heads % tp_size != 0) {
      throw ConfigError("tp_size " + std::to_string(tp_size) + " does not divide " +
                        std::to_string(model.num_heads) + " heads");
    }
    if (pp_size > model.num_layers) {
      throw ConfigError("pp_size " + std::to_string(pp_size) + " exceeds " +
                        std::to_string(model.num_layers) + " layers");
    }
    if (queue_capacity == 0) throw ConfigError("queue capacity must be >= 1");
    if (pool) pool->validate();
  }
};

/// The engine: owns the workers, issues keys, tracks live results.
class Runtime {
 public:
  explicit Runtime(RuntimeConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::optional<ModelParams> full;
    if (cfg_.load_checkpoint) {
      if (cfg_.checkpoint_path.empty() || !std::filesystem::exists(cfg_.checkpoint_path)) {
        throw ConfigError("checkpoint not found: '" + cfg_.checkpoint_path + "'");
      }
      full = load_checkpoint(cfg_.checkpoint_path);
      if (!(full->config == cfg_.model)) {
        throw ConfigError("checkpoint model config differs from runtime config");
      }
    }
    plan_ = partition_layers(cfg_.model.num_layers, cfg_.pp_size);
    if (cfg_.trace) trace_ = std::make_unique<Trace>();

    world_ = init_contexts<ControlMessage>(cfg_.world_size(), cfg_.tp_size, cfg_.pp_size);
    WorkerHooks hooks;
    hooks.deliver = [this](std::uint64_t key, Tensor out, double vt) {
      complete(key, std::move(out), vt);
    };
    hooks.fail = [this](std::uint64_t key, std::size_t stage, std::string why) {
      fail(key, stage, std::move(why));
    };
    hooks.fault = cfg_.fault;
    hooks.trace = trace_.get();
    for (std::size_t r = 0; r < cfg_.world_size(); ++r) {
      workers_.push_back(
          std::make_unique<Worker>(world_.ranks[r], world_.endpoints[r], cfg_.cost, hooks));
      workers_.back()->start();
    }

    std::vector<PeerDevice> peers = cfg_.pool && !cfg_.pool->peers.empty()
                                        ? cfg_.pool->peers
                                        : std::vector<PeerDevice>{PeerDevice{}};
    std::vector<std::future<void>> acks;
    for (std::size_t r = 0; r < cfg_.world_size(); ++r) {
      const std::size_t stage = r / cfg_.tp_size, tp_rank = r % cfg_.tp_size;
      LoadShard load;
      load.config = cfg_.model;
      load.range = plan_.stages[stage];
      load.first = plan_.is_first(stage);
      load.last = plan_.is_last(stage);
      if (full) {
        load.shipped = slice_worker_params(*full, load.range, load.first, load.last, tp_rank,
                                           cfg_.tp_size);
      }
      if (cfg_.pool) load.pool = plan_pool(load.range, peers);
      load.ready = std::make_shared<std::promise<void>>();
      acks.push_back(load.ready->get_future());
      control_send(world_.endpoints[r], ControlMessage{std::move(load)});
    }
    for (std::size_t r = 0; r < acks.size(); ++r) {
      try {
        acks[r].get();
      } catch (const std::exception& e) {
        teardown();
        throw Error("worker " + std::to_string(r) + " failed to initialize: " + e.what());
      }
    }
    lanes_ = std::make_unique<DispatchPool>(cfg_.lanes());
  }

  Runtime(const Runtime&) = delete;
  Runtime& operator=(const Runtime&) = delete;

  ~Runtime() { shutdown(); }

  const RuntimeConfig& config() const { return cfg_; }
  const StagePlan& stage_plan() const { return plan_; }

  /// Issues the next key and dispatches the batch. Blocks while
  /// `queue_capacity` batches are in flight.
  ResultHandle submit(const Batch& batch, double virtual_submit = 0.0) {
    batch.validate(cfg_.model);
    std::uint64_t key;
    ResultHandle handle;
    {
      std::unique_lock lk(mu_);
      space_.wait(lk, [&] { return closing_ || registry_.size() < cfg_.queue_capacity; });
      if (closing_) throw Error("submit after shutdown");
      key = counter_.next();
      handle = ResultHandle(key, virtual_submit);
      registry_.emplace(key, handle);
    }
    Command base;
    base.key = key;
    base.batch_id = batch.batch_id;
    base.batch_size = batch.batch_size;
    base.pad_len = batch.pad_len;
    base.seq_lens = batch.seq_lens;
    base.drce = cfg_.drce;
    base.virtual_submit = virtual_submit;
    auto tokens = std::make_shared<const std::vector<std::int64_t>>(batch.token_ids);
    lanes_->post([this, base = std::move(base), tokens] {
      for (std::size_t w = 0; w < workers_.size(); ++w) {
        if (cfg_.control_delay) cfg_.control_delay(w, base.key);
        Command cmd = base;
        if (w / cfg_.tp_size == 0) cmd.tokens = *tokens;
        try {
          control_send(world_.endpoints[w], ControlMessage{std::move(cmd)});
        } catch (const DeliveryError& e) {
          fail(base.key, w / cfg_.tp_size, e.what());
        }
      }
    });
    return handle;
  }

  /// Stops intake, drains every in-flight key, then releases workers and
  /// channels. Idempotent.
  void shutdown() {
    {
      std::unique_lock lk(mu_);
      if (closed_) return;
      closing_ = true;
      space_.notify_all();
      space_.wait(lk, [&] { return registry_.empty(); });
      closed_ = true;
    }
    teardown();
  }

  std::size_t registry_size() const {
    std::lock_guard lk(mu_);
    return registry_.size();
  }

  /// Latest virtual finish time delivered so far.
  double virtual_now() const {
    std::lock_guard lk(mu_);
    return virtual_now_;
  }

  CounterSnapshot counters() const { return world_.fabric->total_counters(); }
  CounterSnapshot counters(std::size_t rank) const { return world_.fabric->counters(rank); }

  std::size_t world_size() const { return workers_.size(); }
  const Worker& worker(std::size_t rank) const { return *workers_.at(rank); }

  std::uint64_t linear_macs() const {
    std::uint64_t n = 0;
    for (const auto& w : workers_) n += w->stats().linear_macs;
    return n;
  }

  double stall_seconds() const {
    double s = 0.0;
    for (const auto& w : workers_) s += w->stats().stall_seconds;
    return s;
  }

  const Trace* trace() const { return trace_.get(); }

  /// Marks a worker's control endpoint as down (failure injection).
  void mark_worker_down(std::size_t rank) { world_.endpoints.at(rank).mark_down(); }

 private:
  WorkerPoolSetup plan_pool(LayerRange range, std::vector<PeerDevice>& peers) const {
    const PoolConfig& pc = *cfg_.pool;
    const std::size_t owned = range.end - range.begin;
    const std::size_t n = pc.local_layers ? std::min(pc.local_layers, owned) : (owned + 1) / 2;
    const auto& c = cfg_.model;
    const std::uint64_t shard_bytes =
        layer_param_count(c.num_heads, c.head_dim) / cfg_.tp_size * sizeof(double);
    WorkerPoolSetup s;
    s.bandwidth = pc.bandwidth;
    s.layer_bytes = pc.bandwidth.param_bytes ? pc.bandwidth.param_bytes : shard_bytes;
    s.plan = plan_placement(owned, n, pc.prefetch_depth, peers, s.layer_bytes);
    for (const auto& home : s.plan.homes) {
      if (home.kind != HomeKind::peer) continue;
      for (auto& p : peers) {
        if (p.device_id == home.device && p.free_bytes != UINT64_MAX) {
          p.free_bytes -= s.layer_bytes;
        }
      }
    }
    const std::size_t staged = std::min(pc.prefetch_depth, s.plan.offloaded().size());
    s.capacity_bytes = pc.capacity_bytes ? pc.capacity_bytes
                                         : (s.plan.local_count() + staged) * s.layer_bytes;
    return s;
  }

  void complete(std::uint64_t key, Tensor out, double vt) {
    ResultHandle h;
    {
      std::lock_guard lk(mu_);
      auto it = registry_.find(key);
      if (it == registry_.end()) return;
      h = it->second;
      registry_.erase(it);
      virtual_now_ = std::max(virtual_now_, vt);
      space_.notify_all();
    }
    h.fulfill(std::move(out), vt);
  }

  void fail(std::uint64_t key, std::size_t stage, std::string why) {
    ResultHandle h;
    {
      std::lock_guard lk(mu_);
      auto it = registry_.find(key);
      if (it == registry_.end()) return;
      h = it->second;
      registry_.erase(it);
      space_.notify_all();
    }
    h.fail(stage, std::move(why));
  }

  void teardown() {
    if (lanes_) lanes_->stop();
    for (auto& ep : world_.endpoints) ep.close();
    if (world_.fabric) world_.fabric->shutdown();
    for (auto& w : workers_) w->join();
  }

  RuntimeConfig cfg_;
  StagePlan plan_;
  std::unique_ptr<Trace> trace_;
  CommWorld<ControlMessage> world_;
  std::vector<std::unique_ptr<Worker>> workers_;
  std::unique_ptr<DispatchPool> lanes_;

  mutable std::mutex mu_;
  std::condition_variable space_;
  LoopCounter counter_;
  std::map<std::uint64_t, ResultHandle> registry_;
  double virtual_now_ = 0.0;
  bool closing_ = false;
  bool closed_ = false;
};

inline std::unique_ptr<Runtime> initialize(RuntimeConfig cfg) {
  return std::make_unique<Runtime>(std::move(cfg));
}

inline ResultHandle submit(Runtime& rt, const Batch& batch, double virtual_submit = 0.0) {
  return rt.submit(batch, virtual_submit);
}

inline void shutdown(Runtime& rt) { rt.shutdown(); }

}  // namespace hcinfer
