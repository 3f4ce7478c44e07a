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
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "hcinfer/errors.hpp"
#include "hcinfer/tensor.hpp"

namespace hcinfer {

enum class MaskKind : unsigned { none = 0, causal = 1, length_based = 2 };

/// Which key positions a query may attend to. Causal and length-based
/// masking compose: a position is visible only if both allow it.
struct AttentionMask {
  bool causal = false;
  // One entry per sequence when length-based masking is on, else empty.
  std::vector<std::size_t> valid_lengths;

  static AttentionMask none() { return {}; }
  static AttentionMask causal_only() { return {true, {}}; }
  static AttentionMask length_based(std::vector<std::size_t> lens,
                                    bool causal = false) {
    return {causal, std::move(lens)};
  }

  bool has(MaskKind kind) const {
    switch (kind) {
      case MaskKind::none:
        return !causal && valid_lengths.empty();
      case MaskKind::causal:
        return causal;
      case MaskKind::length_based:
        return !valid_lengths.empty();
    }
    return false;
  }

  bool visible(std::size_t b, std::size_t query, std::size_t key) const {
    if (causal && key > query) return false;
    if (!valid_lengths.empty() && key >= valid_lengths[b]) return false;
    return true;
  }

  void validate(std::size_t batch, std::size_t seq) const {
    if (valid_lengths.empty()) return;
    if (valid_lengths.size() != batch) {
      throw ValidationError("mask has " + std::to_string(valid_lengths.size()) +
                            " lengths for batch of " + std::to_string(batch));
    }
    for (auto len : valid_lengths) {
      if (len < 1 || len > seq) {
        throw ValidationError("valid length " + std::to_string(len) +
                              " outside [1, " + std::to_string(seq) + "]");
      }
    }
  }
};

/// Plain 2-D product. Each output element accumulates over the inner
/// dimension strictly left to right starting from 0.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul shape mismatch: " + shape_string(a.shape()) +
                         " x " + shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ad[i * k + p];
      const double* brow = bd.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
    }
  }
  return Tensor({m, n}, std::move(out));
}

/// Adds a [N] bias to every row of x[..., N].
inline Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (bias.size() != x.cols()) {
    throw DimensionError("bias " + shape_string(bias.shape()) +
                         " does not match " + shape_string(x.shape()));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  const std::size_t n = x.cols();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias[i % n];
  return Tensor(x.shape(), std::move(out));
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add shape mismatch: " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return Tensor(a.shape(), std::move(out));
}

/// x[..., K] · w[K, N] (+ bias[N]) applied row-wise, leading dims preserved.
/// The bias is added after the full dot product, so linear(x, w) + b and
/// linear(x, w, &b) are bit-identical. Counted by MacCounter.
inline Tensor linear(const Tensor& x, const Tensor& w,
                     const Tensor* bias = nullptr) {
  if (w.rank() != 2 || x.cols() != w.dim(0)) {
    throw DimensionError("linear shape mismatch: " + shape_string(x.shape()) +
                         " x " + shape_string(w.shape()));
  }
  MacCounter::add(static_cast<std::uint64_t>(x.rows()) * w.dim(0) * w.dim(1));
  Tensor y = matmul(x.reshaped({x.rows(), x.cols()}), w);
  Shape out_shape = x.shape();
  out_shape.back() = w.dim(1);
  y = y.reshaped(std::move(out_shape));
  return bias ? add_bias(y, *bias) : y;
}

inline Tensor layer_norm(const Tensor& x, const Tensor& gamma,
                         const Tensor& beta, double eps) {
  const std::size_t h = x.cols();
  if (gamma.size() != h || beta.size() != h) {
    throw DimensionError("layer_norm: hidden size " + std::to_string(h) +
                         " vs gamma " + shape_string(gamma.shape()) +
                         " beta " + shape_string(beta.shape()));
  }
  std::vector<double> out(x.size());
  auto xd = x.data();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double* row = xd.data() + r * h;
    double mean = 0.0;
    for (std::size_t j = 0; j < h; ++j) mean += row[j];
    mean /= static_cast<double>(h);
    double var = 0.0;
    for (std::size_t j = 0; j < h; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(h);
    const double denom = std::sqrt(var + eps);
    for (std::size_t j = 0; j < h; ++j) {
      // A constant row has a zero numerator; keep it at zero even if eps = 0.
      const double centered = row[j] - mean;
      const double normed = centered == 0.0 ? 0.0 : centered / denom;
      out[r * h + j] = normed * gamma[j] + beta[j];
    }
  }
  return Tensor(x.shape(), std::move(out));
}

inline constexpr double kGeluSqrt2OverPi = 0.7978845608;
inline constexpr double kGeluCubic = 0.044715;

inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluSqrt2OverPi * (x + kGeluCubic * x * x * x)));
}

inline Tensor gelu(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = gelu(x[i]);
  return Tensor(x.shape(), std::move(out));
}

/// Row-wise softmax over the last axis of scores[B, heads, S, S]. Masked
/// entries come out exactly 0.
inline Tensor masked_softmax(const Tensor& scores, const AttentionMask& mask) {
  if (scores.rank() != 4 || scores.dim(2) != scores.dim(3)) {
    throw DimensionError("masked_softmax expects [B,h,S,S], got " +
                         shape_string(scores.shape()));
  }
  const std::size_t batch = scores.dim(0), heads = scores.dim(1),
                    seq = scores.dim(2);
  mask.validate(batch, seq);
  std::vector<double> out(scores.size(), 0.0);
  auto sd = scores.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < seq; ++i) {
        const std::size_t base = ((b * heads + h) * seq + i) * seq;
        double row_max = -INFINITY;
        for (std::size_t j = 0; j < seq; ++j) {
          if (mask.visible(b, i, j)) row_max = std::max(row_max, sd[base + j]);
        }
        double total = 0.0;
        for (std::size_t j = 0; j < seq; ++j) {
          if (!mask.visible(b, i, j)) continue;
          out[base + j] = std::exp(sd[base + j] - row_max);
          total += out[base + j];
        }
        for (std::size_t j = 0; j < seq; ++j) out[base + j] /= total;
      }
    }
  }
  return Tensor(scores.shape(), std::move(out));
}

/// Scaled dot-product attention over already-projected q, k, v of shape
/// [B, S, heads * d]. Head n uses columns [n*d, (n+1)*d). Returns the
/// concatenated per-head context, same shape as q.
inline Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v,
                             std::size_t heads, const AttentionMask& mask) {
  if (q.rank() != 3 || q.shape() != k.shape() || q.shape() != v.shape()) {
    throw DimensionError("attention q/k/v shapes disagree: " +
                         shape_string(q.shape()) + " " +
                         shape_string(k.shape()) + " " +
                         shape_string(v.shape()));
  }
  const std::size_t batch = q.dim(0), seq = q.dim(1), width = q.dim(2);
  if (heads == 0 || width % heads != 0) {
    throw DimensionError("hidden " + std::to_string(width) +
                         " not divisible by " + std::to_string(heads) +
                         " heads");
  }
  const std::size_t d = width / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  auto qd = q.data(), kd = k.data(), vd = v.data();

  std::vector<double> scores(batch * heads * seq * seq);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < seq; ++i) {
        const double* qi = qd.data() + (b * seq + i) * width + h * d;
        for (std::size_t j = 0; j < seq; ++j) {
          const double* kj = kd.data() + (b * seq + j) * width + h * d;
          double dot = 0.0;
          for (std::size_t t = 0; t < d; ++t) dot += qi[t] * kj[t];
          scores[((b * heads + h) * seq + i) * seq + j] = dot * scale;
        }
      }
    }
  }
  Tensor probs = masked_softmax(
      Tensor({batch, heads, seq, seq}, std::move(scores)), mask);
  auto pd = probs.data();

  std::vector<double> ctx(q.size(), 0.0);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < seq; ++i) {
        double* out = ctx.data() + (b * seq + i) * width + h * d;
        const double* p = pd.data() + ((b * heads + h) * seq + i) * seq;
        for (std::size_t j = 0; j < seq; ++j) {
          const double* vj = vd.data() + (b * seq + j) * width + h * d;
          for (std::size_t t = 0; t < d; ++t) out[t] += p[j] * vj[t];
        }
      }
    }
  }
  return Tensor(q.shape(), std::move(ctx));
}

struct AttentionWeights {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct MlpWeights {
  Tensor w1, b1, w2, b2;
};

inline Tensor multi_head_attention(const Tensor& x, const AttentionWeights& w,
                                   std::size_t heads,
                                   const AttentionMask& mask) {
  if (x.rank() != 3) {
    throw DimensionError("attention input must be [B,S,H], got " +
                         shape_string(x.shape()));
  }
  if (heads == 0 || x.dim(2) % heads != 0) {
    throw DimensionError("hidden " + std::to_string(x.dim(2)) +
                         " not divisible by " + std::to_string(heads) +
                         " heads");
  }
  Tensor q = linear(x, w.wq, &w.bq);
  Tensor k = linear(x, w.wk, &w.bk);
  Tensor v = linear(x, w.wv, &w.bv);
  Tensor ctx = attention_core(q, k, v, heads, mask);
  return linear(ctx, w.wo, &w.bo);
}

inline Tensor mlp_forward(const Tensor& x, const MlpWeights& w) {
  if (w.w1.rank() != 2 || w.w2.rank() != 2 || w.w1.dim(1) != w.w2.dim(0) ||
      w.w2.dim(1) != x.cols() || w.w1.dim(0) != x.cols()) {
    throw DimensionError("mlp shape mismatch: x " + shape_string(x.shape()) +
                         " w1 " + shape_string(w.w1.shape()) + " w2 " +
                         shape_string(w.w2.shape()));
  }
  return linear(gelu(linear(x, w.w1, &w.b1)), w.w2, &w.b2);
}

}  // namespace hcinfer
