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

#include <bit>
#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "hcinfer/errors.hpp"
#include "hcinfer/ops.hpp"
#include "hcinfer/tensor.hpp"

namespace hcinfer {

struct ModelConfig {
  std::size_t num_layers = 2;
  std::size_t num_heads = 2;
  std::size_t head_dim = 4;
  std::size_t vocab_size = 16;
  std::size_t max_seq = 16;
  bool causal = true;
  std::uint64_t seed = 0;
  double layer_norm_eps = 1e-5;
  // Norm before each module (pre-LN) or after each residual add (post-LN).
  bool pre_layer_norm = true;

  std::size_t hidden() const { return num_heads * head_dim; }
  std::size_t ffn_dim() const { return 4 * hidden(); }

  // num_layers may be 0: the model is then embedding + final norm.
  void validate() const {
    if (num_heads == 0 || head_dim == 0 || vocab_size == 0 || max_seq == 0) {
      throw ConfigError("model dimensions must be >= 1");
    }
    if (!(layer_norm_eps >= 0.0)) throw ConfigError("layer_norm_eps < 0");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerParams {
  Tensor ln1_gamma, ln1_beta;
  AttentionWeights attn;
  Tensor ln2_gamma, ln2_beta;
  MlpWeights mlp;

  std::size_t param_count() const {
    std::size_t n = ln1_gamma.size() + ln1_beta.size() + ln2_gamma.size() +
                    ln2_beta.size();
    for (const Tensor* t : {&attn.wq, &attn.bq, &attn.wk, &attn.bk, &attn.wv,
                            &attn.bv, &attn.wo, &attn.bo, &mlp.w1, &mlp.b1,
                            &mlp.w2, &mlp.b2}) {
      n += t->size();
    }
    return n;
  }
  std::size_t bytes() const { return param_count() * sizeof(double); }
};

struct ModelParams {
  ModelConfig config;
  Tensor embedding;  // [V, H]
  Tensor position;   // [S_max, H], learned absolute positions
  std::vector<LayerParams> layers;
  Tensor final_gamma, final_beta;
};

/// Parameters in one transformer layer: four H x H attention projections,
/// the H x 4H and 4H x H MLP matrices, their biases and two norms.
inline std::uint64_t layer_param_count(std::uint64_t heads,
                                       std::uint64_t head_dim) {
  const std::uint64_t h = heads * head_dim;
  return 12 * h * h + 13 * h;
}

inline std::uint64_t model_param_count(const ModelConfig& c) {
  const std::uint64_t h = c.hidden();
  return (c.vocab_size + c.max_seq) * h +
         c.num_layers * layer_param_count(c.num_heads, c.head_dim) + 2 * h;
}

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Every tensor draws from its own stream so any worker can rebuild a single
// layer without generating the rest of the model.
inline std::uint64_t tensor_seed(std::uint64_t model_seed, std::uint64_t layer,
                                 std::uint64_t slot) {
  return splitmix64(model_seed ^ splitmix64((layer << 8) | slot));
}

inline constexpr std::uint64_t kEmbeddingLayerId = 0xffffffULL;
inline constexpr double kInitRange = 0.02;

}  // namespace detail

inline LayerParams build_layer(const ModelConfig& c, std::size_t layer) {
  c.validate();
  const std::size_t h = c.hidden(), f = c.ffn_dim();
  std::uint64_t slot = 0;
  auto draw = [&](Shape shape) {
    return random_uniform(std::move(shape),
                          detail::tensor_seed(c.seed, layer, slot++),
                          -detail::kInitRange, detail::kInitRange);
  };
  LayerParams p;
  p.ln1_gamma = Tensor::filled({h}, 1.0);
  p.ln1_beta = Tensor::zeros({h});
  p.attn.wq = draw({h, h});
  p.attn.bq = draw({h});
  p.attn.wk = draw({h, h});
  p.attn.bk = draw({h});
  p.attn.wv = draw({h, h});
  p.attn.bv = draw({h});
  p.attn.wo = draw({h, h});
  p.attn.bo = draw({h});
  p.ln2_gamma = Tensor::filled({h}, 1.0);
  p.ln2_beta = Tensor::zeros({h});
  p.mlp.w1 = draw({h, f});
  p.mlp.b1 = draw({f});
  p.mlp.w2 = draw({f, h});
  p.mlp.b2 = draw({h});
  return p;
}

inline Tensor build_embedding(const ModelConfig& c) {
  return random_uniform({c.vocab_size, c.hidden()},
                        detail::tensor_seed(c.seed, detail::kEmbeddingLayerId, 0),
                        -detail::kInitRange, detail::kInitRange);
}

inline Tensor build_position(const ModelConfig& c) {
  return random_uniform({c.max_seq, c.hidden()},
                        detail::tensor_seed(c.seed, detail::kEmbeddingLayerId, 1),
                        -detail::kInitRange, detail::kInitRange);
}

inline ModelParams build_model(const ModelConfig& c) {
  c.validate();
  ModelParams p;
  p.config = c;
  p.embedding = build_embedding(c);
  p.position = build_position(c);
  p.layers.reserve(c.num_layers);
  for (std::size_t i = 0; i < c.num_layers; ++i) p.layers.push_back(build_layer(c, i));
  p.final_gamma = Tensor::filled({c.hidden()}, 1.0);
  p.final_beta = Tensor::zeros({c.hidden()});
  return p;
}

/// FNV-1a over the raw bytes of every tensor in declaration order.
inline std::uint64_t params_checksum(const ModelParams& p) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](const Tensor& t) {
    for (double v : t.data()) {
      auto bits = std::bit_cast<std::uint64_t>(v);
      for (int i = 0; i < 8; ++i) {
        h ^= (bits >> (8 * i)) & 0xff;
        h *= 0x100000001b3ULL;
      }
    }
  };
  mix(p.embedding);
  mix(p.position);
  for (const auto& l : p.layers) {
    for (const Tensor* t :
         {&l.ln1_gamma, &l.ln1_beta, &l.attn.wq, &l.attn.bq, &l.attn.wk,
          &l.attn.bk, &l.attn.wv, &l.attn.bv, &l.attn.wo, &l.attn.bo,
          &l.ln2_gamma, &l.ln2_beta, &l.mlp.w1, &l.mlp.b1, &l.mlp.w2,
          &l.mlp.b2}) {
      mix(*t);
    }
  }
  mix(p.final_gamma);
  mix(p.final_beta);
  return h;
}

/// A padded batch of token sequences. Positions at or beyond a sequence's
/// valid length hold the pad id 0.
struct Batch {
  std::uint64_t batch_id = 0;
  std::size_t batch_size = 1;
  std::size_t pad_len = 1;
  std::vector<std::int64_t> token_ids;  // [batch_size * pad_len], row-major
  std::vector<std::size_t> seq_lens;

  std::size_t valid_tokens() const {
    std::size_t n = 0;
    for (auto l : seq_lens) n += l;
    return n;
  }

  std::int64_t token(std::size_t b, std::size_t s) const {
    return token_ids[b * pad_len + s];
  }

  void validate(const ModelConfig& c) const {
    if (batch_size == 0 || pad_len == 0) {
      throw ValidationError("batch dimensions must be >= 1");
    }
    if (pad_len > c.max_seq) {
      throw ValidationError("padded length " + std::to_string(pad_len) +
                            " exceeds max_seq " + std::to_string(c.max_seq));
    }
    if (token_ids.size() != batch_size * pad_len) {
      throw ValidationError("token matrix has " +
                            std::to_string(token_ids.size()) +
                            " entries, expected " +
                            std::to_string(batch_size * pad_len));
    }
    if (seq_lens.size() != batch_size) {
      throw ValidationError("seq_lens has " + std::to_string(seq_lens.size()) +
                            " entries for batch of " +
                            std::to_string(batch_size));
    }
    for (std::size_t b = 0; b < batch_size; ++b) {
      if (seq_lens[b] < 1 || seq_lens[b] > pad_len) {
        throw ValidationError("seq_len " + std::to_string(seq_lens[b]) +
                              " outside [1, " + std::to_string(pad_len) + "]");
      }
      for (std::size_t s = 0; s < pad_len; ++s) {
        auto t = token(b, s);
        if (t < 0 || static_cast<std::size_t>(t) >= c.vocab_size) {
          throw ValidationError("token id " + std::to_string(t) +
                                " out of range [0, " +
                                std::to_string(c.vocab_size) + ")");
        }
        if (s >= seq_lens[b] && t != 0) {
          throw ValidationError("non-pad token in padding region");
        }
      }
    }
  }
};

/// Seeded batch with uniformly drawn valid tokens (never the pad id).
inline Batch random_batch(const ModelConfig& c, std::uint64_t batch_id,
                          std::vector<std::size_t> seq_lens,
                          std::size_t pad_len, std::uint64_t seed) {
  Batch b;
  b.batch_id = batch_id;
  b.batch_size = seq_lens.size();
  b.pad_len = pad_len;
  b.seq_lens = std::move(seq_lens);
  b.token_ids.assign(b.batch_size * pad_len, 0);
  std::mt19937_64 gen(seed);
  for (std::size_t i = 0; i < b.batch_size; ++i) {
    for (std::size_t s = 0; s < b.seq_lens[i] && s < pad_len; ++s) {
      b.token_ids[i * pad_len + s] =
          c.vocab_size > 1
              ? 1 + static_cast<std::int64_t>(gen() % (c.vocab_size - 1))
              : 0;
    }
  }
  return b;
}

inline AttentionMask batch_mask(const ModelConfig& c, const Batch& b) {
  return AttentionMask::length_based(b.seq_lens, c.causal);
}

/// Token plus position embedding, [B, S_pad, H].
inline Tensor embed(const Tensor& embedding, const Tensor& position,
                    const Batch& batch) {
  const std::size_t h = embedding.cols();
  std::vector<double> out(batch.batch_size * batch.pad_len * h);
  for (std::size_t b = 0; b < batch.batch_size; ++b) {
    for (std::size_t s = 0; s < batch.pad_len; ++s) {
      const auto tok = static_cast<std::size_t>(batch.token(b, s));
      if (tok >= embedding.dim(0)) {
        throw ValidationError("token id " + std::to_string(tok) +
                              " out of range");
      }
      double* dst = out.data() + (b * batch.pad_len + s) * h;
      for (std::size_t j = 0; j < h; ++j) {
        dst[j] = embedding.at(tok, j) + position.at(s, j);
      }
    }
  }
  return Tensor({batch.batch_size, batch.pad_len, h}, std::move(out));
}

/// Residual wiring shared by every layer variant (serial, sharded, packed).
/// `attn` and `mlp` map a normalized activation to the module output.
template <class AttnFn, class MlpFn>
Tensor residual_layer(const Tensor& x, const Tensor& ln1_gamma,
                      const Tensor& ln1_beta, const Tensor& ln2_gamma,
                      const Tensor& ln2_beta, double eps, bool pre_ln,
                      AttnFn&& attn, MlpFn&& mlp) {
  if (pre_ln) {
    Tensor h = add(x, attn(layer_norm(x, ln1_gamma, ln1_beta, eps)));
    return add(h, mlp(layer_norm(h, ln2_gamma, ln2_beta, eps)));
  }
  Tensor h = layer_norm(add(x, attn(x)), ln1_gamma, ln1_beta, eps);
  return layer_norm(add(h, mlp(h)), ln2_gamma, ln2_beta, eps);
}

inline Tensor transformer_layer_forward(const Tensor& x,
                                        const LayerParams& layer,
                                        std::size_t heads,
                                        const AttentionMask& mask,
                                        double eps = 1e-5,
                                        bool pre_ln = true) {
  if (x.rank() != 3 || x.dim(2) != layer.ln1_gamma.size()) {
    throw DimensionError("layer input " + shape_string(x.shape()) +
                         " does not match hidden " +
                         std::to_string(layer.ln1_gamma.size()));
  }
  return residual_layer(
      x, layer.ln1_gamma, layer.ln1_beta, layer.ln2_gamma, layer.ln2_beta, eps,
      pre_ln,
      [&](const Tensor& t) {
        return multi_head_attention(t, layer.attn, heads, mask);
      },
      [&](const Tensor& t) { return mlp_forward(t, layer.mlp); });
}

inline Tensor final_norm(const ModelParams& p, const Tensor& x) {
  return layer_norm(x, p.final_gamma, p.final_beta, p.config.layer_norm_eps);
}

/// Single-process reference forward pass: embedding, every layer in order,
/// final norm. All distributed paths are checked against this.
inline Tensor serial_forward(const ModelParams& p, const Batch& batch) {
  batch.validate(p.config);
  const auto mask = batch_mask(p.config, batch);
  Tensor x = embed(p.embedding, p.position, batch);
  for (const auto& layer : p.layers) {
    x = transformer_layer_forward(x, layer, p.config.num_heads, mask,
                                  p.config.layer_norm_eps,
                                  p.config.pre_layer_norm);
  }
  return final_norm(p, x);
}

/// Largest |a - b| over positions s < seq_lens[b] of two [B, S, H] tensors.
inline double max_abs_diff_valid(const Tensor& a, const Tensor& b,
                                 const std::vector<std::size_t>& seq_lens) {
  if (a.shape() != b.shape() || a.rank() != 3 ||
      seq_lens.size() != a.dim(0)) {
    throw DimensionError("cannot compare " + shape_string(a.shape()) +
                         " with " + shape_string(b.shape()));
  }
  const std::size_t seq = a.dim(1), h = a.dim(2);
  double m = 0.0;
  for (std::size_t i = 0; i < a.dim(0); ++i) {
    for (std::size_t s = 0; s < seq_lens[i]; ++s) {
      for (std::size_t j = 0; j < h; ++j) {
        const std::size_t idx = (i * seq + s) * h + j;
        m = std::max(m, std::abs(a[idx] - b[idx]));
      }
    }
  }
  return m;
}

}  // namespace hcinfer
