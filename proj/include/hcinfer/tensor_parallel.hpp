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

#include <concepts>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "hcinfer/errors.hpp"
#include "hcinfer/model.hpp"
#include "hcinfer/ops.hpp"
#include "hcinfer/tensor.hpp"

namespace hcinfer {

/// Anything that can sum a tensor across a tensor-parallel group.
template <class R>
concept Reducer = requires(R& r, Tensor t) {
  { r.all_reduce_sum(std::move(t)) } -> std::same_as<Tensor>;
};

/// Reducer for a group of one: identity, no communication, no counting.
struct LocalReducer {
  Tensor all_reduce_sum(Tensor t) { return t; }
};

/// Columns [begin, end) of a 2-D tensor, or elements [begin, end) of a 1-D one.
inline Tensor slice_columns(const Tensor& t, std::size_t begin, std::size_t end) {
  if (begin >= end || end > t.cols()) {
    throw DimensionError("column slice [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") of " + shape_string(t.shape()));
  }
  const std::size_t width = end - begin;
  std::vector<double> out;
  out.reserve(t.rows() * width);
  for (std::size_t r = 0; r < t.rows(); ++r) {
    auto row = t.data().subspan(r * t.cols() + begin, width);
    out.insert(out.end(), row.begin(), row.end());
  }
  Shape shape = t.shape();
  shape.back() = width;
  return Tensor(std::move(shape), std::move(out));
}

inline Tensor slice_rows(const Tensor& t, std::size_t begin, std::size_t end) {
  if (t.rank() != 2 || begin >= end || end > t.dim(0)) {
    throw DimensionError("row slice [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") of " + shape_string(t.shape()));
  }
  auto rows = t.data().subspan(begin * t.cols(), (end - begin) * t.cols());
  return Tensor({end - begin, t.cols()}, std::vector<double>(rows.begin(), rows.end()));
}

inline Tensor concat_columns(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("nothing to concatenate");
  const std::size_t rows = parts.front().rows();
  std::size_t width = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows || p.rank() != parts.front().rank()) {
      throw DimensionError("column concat of mismatched parts");
    }
    width += p.cols();
  }
  std::vector<double> out;
  out.reserve(rows * width);
  for (std::size_t r = 0; r < rows; ++r) {
    for (const auto& p : parts) {
      auto row = p.data().subspan(r * p.cols(), p.cols());
      out.insert(out.end(), row.begin(), row.end());
    }
  }
  Shape shape = parts.front().shape();
  shape.back() = width;
  return Tensor(std::move(shape), std::move(out));
}

inline Tensor stack_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("nothing to stack");
  const std::size_t cols = parts.front().cols();
  std::vector<double> out;
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.cols() != cols) throw DimensionError("row stack of mismatched parts");
    out.insert(out.end(), p.data().begin(), p.data().end());
    rows += p.dim(0);
  }
  return Tensor({rows, cols}, std::move(out));
}

/// One tensor-parallel rank's slice of a transformer layer. The first
/// linear of each module is split by output columns (whole heads for
/// q/k/v), the second by input rows. Second-linear biases and norms are
/// replicated and applied after the reduction.
struct ShardedLayerParams {
  std::size_t tp_rank = 0;
  std::size_t tp_size = 1;
  std::size_t local_heads = 1;
  Tensor ln1_gamma, ln1_beta;
  Tensor wq, bq, wk, bk, wv, bv;  // column shards
  Tensor wo;                      // row shard
  Tensor bo;                      // full
  Tensor ln2_gamma, ln2_beta;
  Tensor w1, b1;  // column shard
  Tensor w2;      // row shard
  Tensor b2;      // full

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const Tensor* t : {&ln1_gamma, &ln1_beta, &wq, &bq, &wk, &bk, &wv, &bv,
                            &wo, &bo, &ln2_gamma, &ln2_beta, &w1, &b1, &w2, &b2}) {
      n += t->size();
    }
    return n;
  }
  std::size_t bytes() const { return param_count() * sizeof(double); }
};

inline std::vector<ShardedLayerParams> shard_params(const LayerParams& layer,
                                                    std::size_t heads,
                                                    std::size_t tp_size) {
  const std::size_t h = layer.attn.wq.dim(0);
  const std::size_t f = layer.mlp.w1.dim(1);
  if (tp_size == 0 || heads % tp_size != 0 || f % tp_size != 0 || h % heads != 0) {
    throw ConfigError("cannot split " + std::to_string(heads) + " heads / ffn " +
                      std::to_string(f) + " across tp " + std::to_string(tp_size));
  }
  const std::size_t hw = h / tp_size;  // whole heads per rank
  const std::size_t fw = f / tp_size;
  std::vector<ShardedLayerParams> shards;
  for (std::size_t r = 0; r < tp_size; ++r) {
    ShardedLayerParams s;
    s.tp_rank = r;
    s.tp_size = tp_size;
    s.local_heads = heads / tp_size;
    s.ln1_gamma = layer.ln1_gamma;
    s.ln1_beta = layer.ln1_beta;
    s.wq = slice_columns(layer.attn.wq, r * hw, (r + 1) * hw);
    s.bq = slice_columns(layer.attn.bq, r * hw, (r + 1) * hw);
    s.wk = slice_columns(layer.attn.wk, r * hw, (r + 1) * hw);
    s.bk = slice_columns(layer.attn.bk, r * hw, (r + 1) * hw);
    s.wv = slice_columns(layer.attn.wv, r * hw, (r + 1) * hw);
    s.bv = slice_columns(layer.attn.bv, r * hw, (r + 1) * hw);
    s.wo = slice_rows(layer.attn.wo, r * hw, (r + 1) * hw);
    s.bo = layer.attn.bo;
    s.ln2_gamma = layer.ln2_gamma;
    s.ln2_beta = layer.ln2_beta;
    s.w1 = slice_columns(layer.mlp.w1, r * fw, (r + 1) * fw);
    s.b1 = slice_columns(layer.mlp.b1, r * fw, (r + 1) * fw);
    s.w2 = slice_rows(layer.mlp.w2, r * fw, (r + 1) * fw);
    s.b2 = layer.mlp.b2;
    shards.push_back(std::move(s));
  }
  return shards;
}

/// Column-linear, GELU, row-linear, one all-reduce, then the full b2.
template <Reducer R>
Tensor tp_mlp_forward(R& reducer, const Tensor& x, const ShardedLayerParams& s) {
  Tensor partial = linear(gelu(linear(x, s.w1, &s.b1)), s.w2);
  return add_bias(reducer.all_reduce_sum(std::move(partial)), s.b2);
}

/// Attention over this rank's heads, row-split output projection, one
/// all-reduce, then the full output bias.
template <Reducer R>
Tensor tp_attention_forward(R& reducer, const Tensor& x,
                            const ShardedLayerParams& s,
                            const AttentionMask& mask) {
  Tensor q = linear(x, s.wq, &s.bq);
  Tensor k = linear(x, s.wk, &s.bk);
  Tensor v = linear(x, s.wv, &s.bv);
  Tensor ctx = attention_core(q, k, v, s.local_heads, mask);
  Tensor partial = linear(ctx, s.wo);
  return add_bias(reducer.all_reduce_sum(std::move(partial)), s.bo);
}

/// Sharded transformer layer: exactly two reductions.
template <Reducer R>
Tensor tp_layer_forward(R& reducer, const Tensor& x, const ShardedLayerParams& s,
                        const AttentionMask& mask, double eps = 1e-5,
                        bool pre_ln = true) {
  return residual_layer(
      x, s.ln1_gamma, s.ln1_beta, s.ln2_gamma, s.ln2_beta, eps, pre_ln,
      [&](const Tensor& t) { return tp_attention_forward(reducer, t, s, mask); },
      [&](const Tensor& t) { return tp_mlp_forward(reducer, t, s); });
}

}  // namespace hcinfer
