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
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <future>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <variant>
#include <vector>

#include "hcinfer/comm.hpp"
#include "hcinfer/cost.hpp"
#include "hcinfer/drce.hpp"
#include "hcinfer/errors.hpp"
#include "hcinfer/mempool.hpp"
#include "hcinfer/model.hpp"
#include "hcinfer/pipeline.hpp"
#include "hcinfer/tensor_parallel.hpp"

namespace hcinfer {

/// The parameters one worker holds: its tensor-parallel shard of each layer
/// in its stage, plus the embedding (first stage) and final norm (last).
struct WorkerParams {
  std::optional<Tensor> embedding, position;
  std::vector<ShardedLayerParams> layers;
  std::optional<Tensor> final_gamma, final_beta;

  std::size_t boundary_bytes() const {
    std::size_t n = 0;
    for (const auto* t : {&embedding, &position, &final_gamma, &final_beta}) {
      if (*t) n += (*t)->bytes();
    }
    return n;
  }
};

/// Slices an in-memory model for one worker (used when the engine loaded a
/// checkpoint and ships shards).
inline WorkerParams slice_worker_params(const ModelParams& p, LayerRange range,
                                        bool first, bool last, std::size_t tp_rank,
                                        std::size_t tp_size) {
  WorkerParams w;
  if (first) {
    w.embedding = p.embedding;
    w.position = p.position;
  }
  for (std::size_t i = range.begin; i < range.end; ++i) {
    w.layers.push_back(shard_params(p.layers[i], p.config.num_heads, tp_size)[tp_rank]);
  }
  if (last) {
    w.final_gamma = p.final_gamma;
    w.final_beta = p.final_beta;
  }
  return w;
}

/// Builds only this worker's share from the model seed.
inline WorkerParams build_worker_params(const ModelConfig& c, LayerRange range, bool first,
                                        bool last, std::size_t tp_rank, std::size_t tp_size) {
  WorkerParams w;
  if (first) {
    w.embedding = build_embedding(c);
    w.position = build_position(c);
  }
  for (std::size_t i = range.begin; i < range.end; ++i) {
    w.layers.push_back(shard_params(build_layer(c, i), c.num_heads, tp_size)[tp_rank]);
  }
  if (last) {
    w.final_gamma = Tensor::filled({c.hidden()}, 1.0);
    w.final_beta = Tensor::zeros({c.hidden()});
  }
  return w;
}

struct WorkerPoolSetup {
  PlacementPlan plan;
  BandwidthModel bandwidth;
  std::uint64_t capacity_bytes = 0;
  std::uint64_t layer_bytes = 0;
};

/// Initialization message: the worker's stage assignment and either shipped
/// parameters or an instruction to build them from the seed.
struct LoadShard {
  ModelConfig config;
  LayerRange range;
  bool first = false;
  bool last = false;
  std::optional<WorkerParams> shipped;
  std::optional<WorkerPoolSetup> pool;
  std::shared_ptr<std::promise<void>> ready;
};

using ControlMessage = std::variant<LoadShard, Command>;

/// Callbacks from a worker into its engine.
struct WorkerHooks {
  std::function<void(std::uint64_t key, Tensor output, double virtual_finish)> deliver;
  std::function<void(std::uint64_t key, std::size_t stage, std::string why)> fail;
  // Test hook: return true to make `stage` fail `key`.
  std::function<bool(std::size_t stage, std::uint64_t key)> fault;
  Trace* trace = nullptr;
};

struct WorkerStats {
  std::uint64_t batches = 0;
  std::uint64_t linear_macs = 0;
  double stall_seconds = 0.0;
  std::uint64_t fetches = 0;
};

/// One rank: a dispatcher thread feeding the consistency queue from the
/// control channel and a compute thread draining it in key order.
class Worker {
 public:
  Worker(GlobalContext ctx, ControlEndpoint<ControlMessage> endpoint, CostModel cost,
         WorkerHooks hooks)
      : ctx_(std::move(ctx)),
        endpoint_(std::move(endpoint)),
        cost_(cost),
        hooks_(std::move(hooks)) {}

  Worker(const Worker&) = delete;
  Worker& operator=(const Worker&) = delete;
  ~Worker() { join(); }

  void start() {
    dispatcher_ = std::thread([this] { dispatch_loop(); });
    compute_ = std::thread([this] { stage_worker_loop(); });
  }

  void join() {
    if (dispatcher_.joinable()) dispatcher_.join();
    if (compute_.joinable()) compute_.join();
  }

  std::size_t rank() const { return ctx_.rank(); }
  std::size_t stage() const { return ctx_.stage(); }

  /// Bytes of parameters resident on this worker's device (offloaded
  /// layers excluded).
  std::size_t resident_bytes() const {
    std::lock_guard lk(stats_mu_);
    std::size_t n = params_.boundary_bytes();
    for (std::size_t i = 0; i < params_.layers.size(); ++i) {
      if (!pool_ || pool_->plan.homes[i].kind == HomeKind::local) n += params_.layers[i].bytes();
    }
    return n;
  }

  WorkerStats stats() const {
    std::lock_guard lk(stats_mu_);
    return stats_;
  }

  std::vector<Timeline> timelines() const {
    std::lock_guard lk(stats_mu_);
    return timelines_;
  }

  std::optional<WorkerPoolSetup> pool_setup() const {
    std::lock_guard lk(stats_mu_);
    return pool_;
  }

 private:
  using Activation = std::variant<Tensor, PackedActivations>;

  void trace(TraceKind kind, std::uint64_t key) {
    if (hooks_.trace) hooks_.trace->record(ctx_.rank(), kind, key);
  }

  void dispatch_loop() {
    while (auto msg = control_serve(endpoint_)) {
      if (auto* load = std::get_if<LoadShard>(&*msg)) {
        handle_load(std::move(*load));
      } else {
        auto& cmd = std::get<Command>(*msg);
        const auto key = cmd.key;
        queue_.insert(key, std::move(cmd));
        trace(TraceKind::insert, key);
      }
    }
    queue_.close();
  }

  void handle_load(LoadShard load) {
    try {
      WorkerParams params =
          load.shipped ? std::move(*load.shipped)
                       : build_worker_params(load.config, load.range, load.first, load.last,
                                             ctx_.tp_rank(), ctx_.tp_size());
      std::unique_ptr<PrefetchExecutor<ShardedLayerParams>> exec;
      if (load.pool) {
        std::vector<LayerSlot<ShardedLayerParams>> slots;
        for (std::size_t i = 0; i < params.layers.size(); ++i) {
          // Off-home layers move into pool storage; only local ones stay resident.
          slots.push_back({std::make_shared<const ShardedLayerParams>(params.layers[i]),
                           load.pool->plan.homes.at(i)});
        }
        exec = std::make_unique<PrefetchExecutor<ShardedLayerParams>>(
            std::move(slots), load.pool->plan.prefetch_depth, load.pool->capacity_bytes,
            load.pool->bandwidth, load.pool->layer_bytes);
      }
      {
        std::lock_guard lk(stats_mu_);
        config_ = load.config;
        first_ = load.first;
        last_ = load.last;
        params_ = std::move(params);
        pool_ = load.pool;
        executor_ = std::move(exec);
      }
      load.ready->set_value();
    } catch (...) {
      load.ready->set_exception(std::current_exception());
    }
  }

  /// Pops keys strictly in order and runs this stage for each batch.
  void stage_worker_loop() {
    while (auto entry = queue_.pop_next()) {
      trace(TraceKind::pop, entry->first);
      process(entry->second);
    }
  }

  void process(const Command& cmd) {
    const std::size_t stage = ctx_.stage();
    const std::size_t tp = ctx_.tp_size();
    try {
      Activation act;
      double ready = cmd.virtual_submit;
      if (first_) {
        Batch batch;
        batch.batch_id = cmd.batch_id;
        batch.batch_size = cmd.batch_size;
        batch.pad_len = cmd.pad_len;
        batch.seq_lens = cmd.seq_lens;
        batch.token_ids = cmd.tokens.value_or(std::vector<std::int64_t>{});
        batch.validate(config_);
        Tensor x = embed(*params_.embedding, *params_.position, batch);
        if (cmd.drce) {
          act = pack(x, cmd.seq_lens);
        } else {
          act = std::move(x);
        }
      } else {
        Payload in = ctx_.recv_async(ctx_.rank() - tp, cmd.key).wait();
        trace(TraceKind::recv, cmd.key);
        if (in.failed) {
          forward_failure(cmd.key, in.error);
          return;
        }
        act = decode_activation(cmd, std::move(in.tensor));
        ready = in.virtual_time;
      }
      if (hooks_.fault && hooks_.fault(stage, cmd.key)) {
        throw Error("injected fault");
      }

      const double start = std::max(clock_, ready);
      double finish = start;
      const auto mask = AttentionMask::length_based(cmd.seq_lens, config_.causal);
      const std::size_t tokens = cmd.drce ? std::accumulate(cmd.seq_lens.begin(),
                                                            cmd.seq_lens.end(), std::size_t{0})
                                          : cmd.batch_size * cmd.pad_len;
      const std::size_t act_bytes = tokens * config_.hidden() * sizeof(double);
      auto layer_cost = [&](std::size_t, const ShardedLayerParams& s) {
        double c = cost_.layer_seconds(tokens, s.param_count());
        if (tp > 1) c += 2 * cost_.collective_seconds(act_bytes);
        return c;
      };
      auto run_layer = [&](std::size_t, const ShardedLayerParams& s, Activation a) -> Activation {
        if (tp == 1) {
          LocalReducer local;
          return apply_layer(local, s, std::move(a), mask, cmd.drce);
        }
        return apply_layer(ctx_, s, std::move(a), mask, cmd.drce);
      };

      MacCounter macs;
      if (executor_) {
        auto [out, timeline] = executor_->run(std::move(act), start, run_layer, layer_cost);
        budget_track(timeline.memory, pool_->capacity_bytes, ctx_.rank());
        act = std::move(out);
        finish = timeline.end;
        std::lock_guard lk(stats_mu_);
        stats_.stall_seconds += timeline.total(IntervalKind::stall);
        stats_.fetches += timeline.count(IntervalKind::fetch);
        timelines_.push_back(std::move(timeline));
      } else {
        for (std::size_t i = 0; i < params_.layers.size(); ++i) {
          act = run_layer(i, params_.layers[i], std::move(act));
          finish += layer_cost(i, params_.layers[i]);
        }
      }
      clock_ = finish;
      trace(TraceKind::compute, cmd.key);
      {
        std::lock_guard lk(stats_mu_);
        stats_.batches++;
        stats_.linear_macs += macs.count();
      }

      if (last_) {
        Tensor out = finish_output(std::move(act));
        if (ctx_.tp_rank() == 0) {
          hooks_.deliver(cmd.key, std::move(out), finish);
          trace(TraceKind::deliver, cmd.key);
        }
      } else {
        Payload payload;
        if (auto* packed = std::get_if<PackedActivations>(&act)) {
          payload.tensor = std::move(packed->packed);
        } else {
          payload.tensor = std::get<Tensor>(std::move(act));
        }
        payload.virtual_time = finish + cost_.p2p_seconds(payload.tensor.bytes());
        ctx_.send_async(ctx_.rank() + tp, cmd.key, std::move(payload));
        trace(TraceKind::send, cmd.key);
      }
    } catch (const std::exception& e) {
      trace(TraceKind::fail, cmd.key);
      hooks_.fail(cmd.key, stage, e.what());
      if (!last_) {
        try {
          forward_failure(cmd.key, e.what());
        } catch (const std::exception&) {
        }
      }
    }
  }

  void forward_failure(std::uint64_t key, const std::string& why) {
    if (last_) return;
    Payload marker;
    marker.failed = true;
    marker.error = why;
    marker.virtual_time = clock_;
    ctx_.send_async(ctx_.rank() + ctx_.tp_size(), key, std::move(marker));
  }

  Activation decode_activation(const Command& cmd, Tensor t) const {
    const std::size_t h = config_.hidden();
    if (cmd.drce) {
      PackedActivations p{std::move(t), offsets_from_lens(cmd.seq_lens), cmd.pad_len};
      p.validate();
      return p;
    }
    if (t.shape() != Shape{cmd.batch_size, cmd.pad_len, h}) {
      throw ProtocolError("activation " + shape_string(t.shape()) +
                          " does not match command for key " + std::to_string(cmd.key));
    }
    return t;
  }

  template <Reducer R>
  Activation apply_layer(R& reducer, const ShardedLayerParams& s, Activation a,
                         const AttentionMask& mask, bool drce) const {
    if (drce) {
      return drce_layer_forward(reducer, std::get<PackedActivations>(a), s, config_.causal,
                                config_.layer_norm_eps, config_.pre_layer_norm);
    }
    return tp_layer_forward(reducer, std::get<Tensor>(a), s, mask, config_.layer_norm_eps,
                            config_.pre_layer_norm);
  }

  Tensor finish_output(Activation act) const {
    const double eps = config_.layer_norm_eps;
    if (auto* packed = std::get_if<PackedActivations>(&act)) {
      packed->packed = layer_norm(packed->packed, *params_.final_gamma, *params_.final_beta, eps);
      return unpack(*packed);
    }
    return layer_norm(std::get<Tensor>(act), *params_.final_gamma, *params_.final_beta, eps);
  }

  GlobalContext ctx_;
  ControlEndpoint<ControlMessage> endpoint_;
  CostModel cost_;
  WorkerHooks hooks_;
  ConsistencyQueue<Command> queue_;

  // Written once by the dispatcher before any command is queued.
  ModelConfig config_;
  bool first_ = false;
  bool last_ = false;
  WorkerParams params_;
  std::optional<WorkerPoolSetup> pool_;
  std::unique_ptr<PrefetchExecutor<ShardedLayerParams>> executor_;

  double clock_ = 0.0;  // compute thread only
  mutable std::mutex stats_mu_;
  WorkerStats stats_;
  std::vector<Timeline> timelines_;

  std::thread dispatcher_;
  std::thread compute_;
};

}  // namespace hcinfer
