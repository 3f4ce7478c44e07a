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
#include <string>
#include <vector>

#include "hcinfer/errors.hpp"
#include "hcinfer/model.hpp"
#include "hcinfer/ops.hpp"
#include "hcinfer/tensor.hpp"
#include "hcinfer/tensor_parallel.hpp"

namespace hcinfer {

/// Valid tokens of a padded batch laid end to end: sequence b occupies rows
/// [offsets[b], offsets[b+1]) of `packed`.
struct PackedActivations {
  Tensor packed;                      // [T, H]
  std::vector<std::size_t> offsets;   // B + 1 entries, offsets[0] = 0
  std::size_t pad_len = 1;

  std::size_t batch_size() const { return offsets.size() - 1; }
  std::size_t tokens() const { return offsets.back(); }

  std::vector<std::size_t> seq_lens() const {
    std::vector<std::size_t> lens;
    for (std::size_t b = 0; b + 1 < offsets.size(); ++b) lens.push_back(offsets[b + 1] - offsets[b]);
    return lens;
  }

  void validate() const {
    if (offsets.size() < 2 || offsets.front() != 0) {
      throw ValidationError("packed offsets must start at 0 and cover >= 1 sequence");
    }
    for (std::size_t b = 0; b + 1 < offsets.size(); ++b) {
      const auto len = offsets[b + 1] - offsets[b];
      if (offsets[b + 1] <= offsets[b] || len > pad_len) {
        throw ValidationError("inconsistent packed offsets at sequence " + std::to_string(b));
      }
    }
    if (packed.rank() != 2 || packed.dim(0) != tokens()) {
      throw ValidationError("packed tensor " + shape_string(packed.shape()) +
                            " does not hold " + std::to_string(tokens()) + " tokens");
    }
  }
};

inline std::vector<std::size_t> offsets_from_lens(const std::vector<std::size_t>& lens) {
  std::vector<std::size_t> off{0};
  for (auto l : lens) off.push_back(off.back() + l);
  return off;
}

/// Drops padding rows of x[B, S_pad, H].
inline PackedActivations pack(const Tensor& x, const std::vector<std::size_t>& seq_lens) {
  if (x.rank() != 3 || seq_lens.size() != x.dim(0)) {
    throw DimensionError("pack expects [B,S,H] with B lengths, got " +
                         shape_string(x.shape()) + " and " +
                         std::to_string(seq_lens.size()) + " lengths");
  }
  const std::size_t seq = x.dim(1), h = x.dim(2);
  for (auto l : seq_lens) {
    if (l < 1 || l > seq) {
      throw ValidationError("sequence length " + std::to_string(l) +
                            " overflows padded length " + std::to_string(seq));
    }
  }
  PackedActivations p;
  p.pad_len = seq;
  p.offsets = offsets_from_lens(seq_lens);
  std::vector<double> out;
  out.reserve(p.tokens() * h);
  for (std::size_t b = 0; b < seq_lens.size(); ++b) {
    auto rows = x.data().subspan(b * seq * h, seq_lens[b] * h);
    out.insert(out.end(), rows.begin(), rows.end());
  }
  p.packed = Tensor({p.tokens(), h}, std::move(out));
  return p;
}

/// Restores [B, S_pad, H]; padding rows are exactly zero.
inline Tensor unpack(const PackedActivations& p) {
  p.validate();
  const std::size_t batch = p.batch_size(), seq = p.pad_len, h = p.packed.cols();
  std::vector<double> out(batch * seq * h, 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    auto rows = p.packed.data().subspan(p.offsets[b] * h, (p.offsets[b + 1] - p.offsets[b]) * h);
    std::copy(rows.begin(), rows.end(), out.begin() + static_cast<std::ptrdiff_t>(b * seq * h));
  }
  return Tensor({batch, seq, h}, std::move(out));
}

/// Fraction of padded rows that carry valid tokens, T / (B * S_pad). This is
/// exactly the ratio of linear-layer work with and without packing.
inline double drce_savings(std::size_t batch_size, std::size_t pad_len,
                           const std::vector<std::size_t>& seq_lens) {
  if (seq_lens.size() != batch_size) throw ValidationError("seq_lens size != batch size");
  std::size_t tokens = 0;
  for (auto l : seq_lens) {
    if (l < 1 || l > pad_len) throw ValidationError("sequence length out of range");
    tokens += l;
  }
  return static_cast<double>(tokens) / static_cast<double>(batch_size * pad_len);
}

namespace detail {

inline PackedActivations with_rows(const PackedActivations& like, Tensor rows) {
  return {std::move(rows), like.offsets, like.pad_len};
}

// Attention block on packed rows. Only the score/softmax/context step sees
// the padded layout; every projection runs on valid rows only.
template <Reducer R>
Tensor packed_attention(R& reducer, const PackedActivations& layout,
                        const Tensor& xn, const Tensor& wq, const Tensor& bq,
                        const Tensor& wk, const Tensor& bk, const Tensor& wv,
                        const Tensor& bv, const Tensor& wo, const Tensor& bo,
                        std::size_t heads, bool causal) {
  auto padded = [&](Tensor rows) { return unpack(with_rows(layout, std::move(rows))); };
  Tensor q = padded(linear(xn, wq, &bq));
  Tensor k = padded(linear(xn, wk, &bk));
  Tensor v = padded(linear(xn, wv, &bv));
  const auto lens = layout.seq_lens();
  Tensor ctx = attention_core(q, k, v, heads, AttentionMask::length_based(lens, causal));
  Tensor partial = linear(pack(ctx, lens).packed, wo);
  return add_bias(reducer.all_reduce_sum(std::move(partial)), bo);
}

template <Reducer R>
Tensor packed_mlp(R& reducer, const Tensor& xn, const Tensor& w1, const Tensor& b1,
                  const Tensor& w2, const Tensor& b2) {
  Tensor partial = linear(gelu(linear(xn, w1, &b1)), w2);
  return add_bias(reducer.all_reduce_sum(std::move(partial)), b2);
}

}  // namespace detail

/// Transformer layer on packed activations, sharded across a tensor-parallel
/// group. Norms, residuals and all linears touch valid rows only.
template <Reducer R>
PackedActivations drce_layer_forward(R& reducer, const PackedActivations& x,
                                     const ShardedLayerParams& s, bool causal,
                                     double eps = 1e-5, bool pre_ln = true) {
  x.validate();
  Tensor out = residual_layer(
      x.packed, s.ln1_gamma, s.ln1_beta, s.ln2_gamma, s.ln2_beta, eps, pre_ln,
      [&](const Tensor& t) {
        return detail::packed_attention(reducer, x, t, s.wq, s.bq, s.wk, s.bk, s.wv,
                                        s.bv, s.wo, s.bo, s.local_heads, causal);
      },
      [&](const Tensor& t) { return detail::packed_mlp(reducer, t, s.w1, s.b1, s.w2, s.b2); });
  return detail::with_rows(x, std::move(out));
}

/// Unsharded packed layer.
inline PackedActivations drce_layer_forward(const PackedActivations& x,
                                            const LayerParams& layer,
                                            std::size_t heads, bool causal,
                                            double eps = 1e-5, bool pre_ln = true) {
  x.validate();
  LocalReducer local;
  const auto& a = layer.attn;
  Tensor out = residual_layer(
      x.packed, layer.ln1_gamma, layer.ln1_beta, layer.ln2_gamma, layer.ln2_beta,
      eps, pre_ln,
      [&](const Tensor& t) {
        return detail::packed_attention(local, x, t, a.wq, a.bq, a.wk, a.bk, a.wv,
                                        a.bv, a.wo, a.bo, heads, causal);
      },
      [&](const Tensor& t) {
        return detail::packed_mlp(local, t, layer.mlp.w1, layer.mlp.b1, layer.mlp.w2,
                                  layer.mlp.b2);
      });
  return detail::with_rows(x, std::move(out));
}

}  // namespace hcinfer
