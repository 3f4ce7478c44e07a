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

// Checkpoint layout: one line of JSON holding the ModelConfig, a '\n', then
// every parameter as a 64-bit little-endian IEEE double in declaration order
// (embedding, position, per layer: ln1 gamma/beta, wq bq wk bk wv bv wo bo,
// ln2 gamma/beta, w1 b1 w2 b2; then final gamma/beta).

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "hcinfer/errors.hpp"
#include "hcinfer/model.hpp"
#include "hcinfer/model_json.hpp"

namespace hcinfer {

namespace detail {

template <class Fn>
void for_each_param(ModelParams& p, Fn&& fn) {
  fn(p.embedding);
  fn(p.position);
  for (auto& l : p.layers) {
    for (Tensor* t : {&l.ln1_gamma, &l.ln1_beta, &l.attn.wq, &l.attn.bq,
                      &l.attn.wk, &l.attn.bk, &l.attn.wv, &l.attn.bv,
                      &l.attn.wo, &l.attn.bo, &l.ln2_gamma, &l.ln2_beta,
                      &l.mlp.w1, &l.mlp.b1, &l.mlp.w2, &l.mlp.b2}) {
      fn(*t);
    }
  }
  fn(p.final_gamma);
  fn(p.final_beta);
}

inline ModelParams zero_model(const ModelConfig& c) {
  const std::size_t h = c.hidden(), f = c.ffn_dim();
  ModelParams p;
  p.config = c;
  p.embedding = Tensor::zeros({c.vocab_size, h});
  p.position = Tensor::zeros({c.max_seq, h});
  LayerParams l;
  l.ln1_gamma = l.ln1_beta = l.ln2_gamma = l.ln2_beta = Tensor::zeros({h});
  l.attn.wq = l.attn.wk = l.attn.wv = l.attn.wo = Tensor::zeros({h, h});
  l.attn.bq = l.attn.bk = l.attn.bv = l.attn.bo = Tensor::zeros({h});
  l.mlp.w1 = Tensor::zeros({h, f});
  l.mlp.b1 = Tensor::zeros({f});
  l.mlp.w2 = Tensor::zeros({f, h});
  l.mlp.b2 = Tensor::zeros({h});
  p.layers.assign(c.num_layers, l);
  p.final_gamma = p.final_beta = Tensor::zeros({h});
  return p;
}

inline void put_le64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_le64(const unsigned char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path,
                            const ModelParams& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open checkpoint for writing: " + path.string());
  nlohmann::json header = params.config;
  out << header.dump() << '\n';
  std::string buf;
  auto copy = params;
  detail::for_each_param(copy, [&](Tensor& t) {
    for (double v : t.data()) detail::put_le64(buf, std::bit_cast<std::uint64_t>(v));
  });
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw Error("failed writing checkpoint: " + path.string());
}

inline ModelConfig read_checkpoint_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint: " + path.string());
  std::string line;
  std::getline(in, line);
  try {
    return nlohmann::json::parse(line).get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad checkpoint header in " + path.string() + ": " +
                      e.what());
  }
}

inline ModelParams load_checkpoint(const std::filesystem::path& path) {
  const ModelConfig config = read_checkpoint_config(path);
  std::ifstream in(path, std::ios::binary);
  std::string line;
  std::getline(in, line);
  std::vector<unsigned char> body((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  ModelParams params = detail::zero_model(config);
  const std::size_t expected = model_param_count(config) * sizeof(double);
  if (body.size() != expected) {
    throw ConfigError("checkpoint body is " + std::to_string(body.size()) +
                      " bytes, expected " + std::to_string(expected));
  }
  std::size_t offset = 0;
  detail::for_each_param(params, [&](Tensor& t) {
    std::vector<double> data(t.size());
    for (auto& v : data) {
      v = std::bit_cast<double>(detail::get_le64(body.data() + offset));
      offset += 8;
    }
    t = Tensor(t.shape(), std::move(data));
  });
  return params;
}

}  // namespace hcinfer
