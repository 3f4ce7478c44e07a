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

#include <fstream>
#include <string>

#include <json.hpp>

#include "hcinfer/cost.hpp"
#include "hcinfer/engine.hpp"
#include "hcinfer/errors.hpp"
#include "hcinfer/mempool.hpp"
#include "hcinfer/model_json.hpp"

namespace hcinfer {

inline void to_json(nlohmann::json& j, const CostModel& c) {
  j = nlohmann::json{{"seconds_per_token_param", c.seconds_per_token_param},
                     {"link_GBps", c.link_GBps},
                     {"link_latency_s", c.link_latency_s},
                     {"collective_GBps", c.collective_GBps}};
}

inline void from_json(const nlohmann::json& j, CostModel& c) {
  c.seconds_per_token_param = j.value("seconds_per_token_param", c.seconds_per_token_param);
  c.link_GBps = j.value("link_GBps", c.link_GBps);
  c.link_latency_s = j.value("link_latency_s", c.link_latency_s);
  c.collective_GBps = j.value("collective_GBps", c.collective_GBps);
}

inline void to_json(nlohmann::json& j, const BandwidthModel& b) {
  j = nlohmann::json{{"peer_link_GBps", b.peer_link_GBps},
                     {"host_link_GBps", b.host_link_GBps},
                     {"peer_interference", b.peer_interference},
                     {"param_bytes", b.param_bytes}};
}

inline void from_json(const nlohmann::json& j, BandwidthModel& b) {
  b.peer_link_GBps = j.value("peer_link_GBps", b.peer_link_GBps);
  b.host_link_GBps = j.value("host_link_GBps", b.host_link_GBps);
  b.peer_interference = j.value("peer_interference", b.peer_interference);
  b.param_bytes = j.value("param_bytes", b.param_bytes);
}

inline void to_json(nlohmann::json& j, const PeerDevice& p) {
  j = nlohmann::json{{"device_id", p.device_id}, {"free_bytes", p.free_bytes}};
}

inline void from_json(const nlohmann::json& j, PeerDevice& p) {
  p.device_id = j.value("device_id", p.device_id);
  p.free_bytes = j.value("free_bytes", p.free_bytes);
}

inline void to_json(nlohmann::json& j, const PoolConfig& p) {
  j = nlohmann::json{{"local_layers", p.local_layers},
                     {"prefetch_depth", p.prefetch_depth},
                     {"bandwidth", p.bandwidth},
                     {"peers", p.peers},
                     {"capacity_bytes", p.capacity_bytes}};
}

inline void from_json(const nlohmann::json& j, PoolConfig& p) {
  p.local_layers = j.value("local_layers", p.local_layers);
  p.prefetch_depth = j.value("prefetch_depth", p.prefetch_depth);
  if (j.contains("bandwidth")) p.bandwidth = j.at("bandwidth").get<BandwidthModel>();
  if (j.contains("peers")) p.peers = j.at("peers").get<std::vector<PeerDevice>>();
  p.capacity_bytes = j.value("capacity_bytes", p.capacity_bytes);
}

// Hooks are not serializable and are left empty.
inline void to_json(nlohmann::json& j, const RuntimeConfig& c) {
  j = nlohmann::json{{"model", c.model},
                     {"tp_size", c.tp_size},
                     {"pp_size", c.pp_size},
                     {"drce", c.drce},
                     {"dispatch_lanes", c.dispatch_lanes},
                     {"queue_capacity", c.queue_capacity},
                     {"checkpoint_path", c.checkpoint_path},
                     {"load_checkpoint", c.load_checkpoint},
                     {"cost", c.cost},
                     {"trace", c.trace}};
  if (c.pool) j["pool"] = *c.pool;
}

inline void from_json(const nlohmann::json& j, RuntimeConfig& c) {
  if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
  c.tp_size = j.value("tp_size", c.tp_size);
  c.pp_size = j.value("pp_size", c.pp_size);
  c.drce = j.value("drce", c.drce);
  if (j.contains("pool") && !j.at("pool").is_null()) c.pool = j.at("pool").get<PoolConfig>();
  c.dispatch_lanes = j.value("dispatch_lanes", c.dispatch_lanes);
  c.queue_capacity = j.value("queue_capacity", c.queue_capacity);
  c.checkpoint_path = j.value("checkpoint_path", c.checkpoint_path);
  c.load_checkpoint = j.value("load_checkpoint", c.load_checkpoint);
  if (j.contains("cost")) c.cost = j.at("cost").get<CostModel>();
  c.trace = j.value("trace", c.trace);
}

/// Parses a JSON file; parse and type errors become ConfigError.
inline nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  try {
    return nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

template <class T>
T read_config_file(const std::string& path) {
  try {
    return read_json_file(path).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace hcinfer
