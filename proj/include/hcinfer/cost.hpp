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

#include <cstddef>
#include <cstdint>

#include "hcinfer/errors.hpp"

namespace hcinfer {

/// Seconds to move `bytes` over a link of `link_GBps` (10^9 bytes/s).
inline double transfer_time(double bytes, double link_GBps) {
  if (bytes < 0.0 || !(link_GBps > 0.0)) {
    throw ConfigError("transfer_time needs bytes >= 0 and a positive bandwidth");
  }
  return bytes / (link_GBps * 1e9);
}

/// Virtual-clock costs. Compute for a layer is proportional to tokens times
/// parameters touched; transfers are latency plus bytes over bandwidth.
struct CostModel {
  double seconds_per_token_param = 1e-12;
  double link_GBps = 600.0;
  double link_latency_s = 0.0;
  // 0 disables collective cost.
  double collective_GBps = 0.0;

  double layer_seconds(std::size_t tokens, std::size_t params) const {
    return seconds_per_token_param * static_cast<double>(tokens) *
           static_cast<double>(params);
  }

  double p2p_seconds(std::size_t bytes) const {
    return link_latency_s + transfer_time(static_cast<double>(bytes), link_GBps);
  }

  double collective_seconds(std::size_t bytes) const {
    return collective_GBps > 0.0
               ? transfer_time(static_cast<double>(bytes), collective_GBps)
               : 0.0;
  }
};

}  // namespace hcinfer
