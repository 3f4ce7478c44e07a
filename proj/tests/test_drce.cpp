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

#include <gtest/gtest.h>

#include <random>
#include <thread>

#include "hcinfer/comm.hpp"
#include "hcinfer/drce.hpp"
#include "hcinfer/errors.hpp"
#include "hcinfer/model.hpp"

using namespace hcinfer;

namespace {

ModelConfig tiny(std::uint64_t seed) {
  ModelConfig c;
  c.num_layers = 1;
  c.num_heads = 4;
  c.head_dim = 2;
  c.vocab_size = 32;
  c.max_seq = 16;
  c.seed = seed;
  return c;
}

}  // namespace

TEST(Pack, FullLengthIsReshape) {
  Tensor x = random_uniform({2, 3, 4}, 1);
  auto p = pack(x, {3, 3});
  EXPECT_EQ(p.packed, x.reshaped({6, 4}));
  EXPECT_EQ(p.tokens(), 6u);
  EXPECT_EQ(unpack(p), x);
}

TEST(Pack, OffsetsArithmetic) {
  auto p = pack(random_uniform({2, 4, 3}, 2), {2, 3});
  EXPECT_EQ(p.tokens(), 5u);
  EXPECT_EQ(p.offsets, (std::vector<std::size_t>{0, 2, 5}));
  EXPECT_EQ(p.seq_lens(), (std::vector<std::size_t>{2, 3}));
  EXPECT_EQ(p.pad_len, 4u);
}

TEST(Pack, UnpackZeroesPadding) {
  Tensor x = random_uniform({1, 3, 2}, 3);
  Tensor y = unpack(pack(x, {1}));
  EXPECT_EQ(y[0], x[0]);
  EXPECT_EQ(y[1], x[1]);
  for (std::size_t i = 2; i < 6; ++i) EXPECT_EQ(y[i], 0.0);
}

TEST(Pack, RoundTripOnRandomTensors) {
  std::mt19937_64 gen(4);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t b = 1 + gen() % 5, s = 1 + gen() % 7, h = 1 + gen() % 4;
    std::vector<std::size_t> lens(b);
    for (auto& l : lens) l = 1 + gen() % s;
    Tensor x = random_uniform({b, s, h}, gen());
    Tensor y = unpack(pack(x, lens));
    for (std::size_t i = 0; i < b; ++i) {
      for (std::size_t t = 0; t < s; ++t) {
        for (std::size_t j = 0; j < h; ++j) {
          const std::size_t idx = (i * s + t) * h + j;
          EXPECT_EQ(y[idx], t < lens[i] ? x[idx] : 0.0);
        }
      }
    }
  }
}

TEST(Pack, Errors) {
  EXPECT_THROW(pack(Tensor::zeros({1, 2, 2}), {3}), ValidationError);
  EXPECT_THROW(pack(Tensor::zeros({1, 2, 2}), {0}), ValidationError);
  EXPECT_THROW(pack(Tensor::zeros({2, 2, 2}), {1}), DimensionError);
  PackedActivations bad{Tensor::zeros({3, 2}), {0, 2, 2}, 2};
  EXPECT_THROW(unpack(bad), ValidationError);
  PackedActivations wrong_rows{Tensor::zeros({4, 2}), {0, 1, 3}, 2};
  EXPECT_THROW(unpack(wrong_rows), ValidationError);
}

TEST(DrceSavings, Examples) {
  EXPECT_EQ(drce_savings(3, 8, {8, 8, 8}), 1.0);
  EXPECT_EQ(drce_savings(4, 64, {32, 32, 32, 32}), 0.5);
  EXPECT_EQ(drce_savings(2, 4, {1, 4}), 0.625);
  EXPECT_THROW(drce_savings(2, 4, {1}), ValidationError);
  EXPECT_THROW(drce_savings(1, 4, {5}), ValidationError);
}

TEST(DrceLayer, FullLengthsAreBitIdentical) {
  auto c = tiny(1);
  auto layer = build_layer(c, 0);
  Tensor x = random_uniform({2, 4, 8}, 5);
  Tensor ref = transformer_layer_forward(x, layer, 4, AttentionMask::causal_only());
  auto out = drce_layer_forward(pack(x, {4, 4}), layer, 4, true);
  EXPECT_EQ(unpack(out), ref);
}

TEST(DrceLayer, RandomLengthsMatchPaddedLayer) {
  std::mt19937_64 gen(6);
  for (bool pre : {true, false}) {
    for (int trial = 0; trial < 10; ++trial) {
      auto c = tiny(gen());
      auto layer = build_layer(c, 0);
      const std::size_t b = 1 + gen() % 4, s = 2 + gen() % 6;
      std::vector<std::size_t> lens(b);
      for (auto& l : lens) l = 1 + gen() % s;
      Tensor x = random_uniform({b, s, 8}, gen());
      Tensor ref = transformer_layer_forward(x, layer, 4, AttentionMask::length_based(lens, true),
                                             1e-5, pre);
      Tensor got = unpack(drce_layer_forward(pack(x, lens), layer, 4, true, 1e-5, pre));
      EXPECT_LT(max_abs_diff_valid(got, ref, lens), 1e-9);
    }
  }
}

TEST(DrceLayer, LinearMacsScaleByValidFraction) {
  auto c = tiny(2);
  auto layer = build_layer(c, 0);
  const std::vector<std::size_t> lens{1, 4, 2};
  Tensor x = random_uniform({3, 4, 8}, 7);
  std::uint64_t padded = 0, packed = 0;
  {
    MacCounter m;
    transformer_layer_forward(x, layer, 4, AttentionMask::length_based(lens, true));
    padded = m.count();
  }
  {
    MacCounter m;
    drce_layer_forward(pack(x, lens), layer, 4, true);
    packed = m.count();
  }
  // 7 valid of 12 padded rows.
  EXPECT_EQ(packed * 12, padded * 7);
  EXPECT_EQ(static_cast<double>(packed) / padded, drce_savings(3, 4, lens));
}

TEST(DrceLayer, ShardedMatchesUnsharded) {
  auto c = tiny(8);
  auto layer = build_layer(c, 0);
  const std::vector<std::size_t> lens{3, 1};
  Tensor x = random_uniform({2, 3, 8}, 8);
  auto packed = pack(x, lens);
  Tensor ref = unpack(drce_layer_forward(packed, layer, 4, true));
  for (std::size_t tp : {2, 4}) {
    auto shards = shard_params(layer, 4, tp);
    auto world = init_contexts<int>(tp, tp, 1);
    std::vector<Tensor> out(tp);
    std::vector<std::thread> ts;
    for (std::size_t r = 0; r < tp; ++r) {
      ts.emplace_back([&, r] {
        out[r] = unpack(drce_layer_forward(world.ranks[r], packed, shards[r], true));
      });
    }
    for (auto& t : ts) t.join();
    EXPECT_LT(max_abs_diff_valid(out[0], ref, lens), 1e-9);
    for (std::size_t r = 1; r < tp; ++r) EXPECT_EQ(out[r], out[0]);
    EXPECT_EQ(world.fabric->counters(0).all_reduce, 2u);
  }
}
