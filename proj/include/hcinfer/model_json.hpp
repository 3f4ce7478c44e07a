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

#include <json.hpp>

#include "hcinfer/errors.hpp"
#include "hcinfer/model.hpp"

namespace hcinfer {

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"num_layers", c.num_layers},
                     {"num_heads", c.num_heads},
                     {"head_dim", c.head_dim},
                     {"vocab_size", c.vocab_size},
                     {"max_seq", c.max_seq},
                     {"causal", c.causal},
                     {"seed", c.seed},
                     {"layer_norm_eps", c.layer_norm_eps},
                     {"pre_layer_norm", c.pre_layer_norm}};
}

// Missing keys keep their defaults so hand-written files can stay short.
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.num_layers = j.value("num_layers", c.num_layers);
  c.num_heads = j.value("num_heads", c.num_heads);
  c.head_dim = j.value("head_dim", c.head_dim);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.max_seq = j.value("max_seq", c.max_seq);
  c.causal = j.value("causal", c.causal);
  c.seed = j.value("seed", c.seed);
  c.layer_norm_eps = j.value("layer_norm_eps", c.layer_norm_eps);
  c.pre_layer_norm = j.value("pre_layer_norm", c.pre_layer_norm);
  if (j.contains("ffn_dim") &&
      j.at("ffn_dim").get<std::size_t>() != c.ffn_dim()) {
    throw ConfigError("ffn_dim must equal 4 * hidden");
  }
}

}  // namespace hcinfer
