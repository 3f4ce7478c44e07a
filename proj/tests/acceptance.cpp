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

// Runs every acceptance criterion and prints one PASS/FAIL line for each.
// Exit status is non-zero when any criterion fails.

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <future>
#include <iostream>
#include <mutex>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "hcinfer.hpp"
#include "oracles.hpp"

using namespace hcinfer;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Accumulates failures; the first few messages are kept for the report.
class Check {
 public:
  void expect(bool ok, const std::string& what) {
    ++checks_;
    if (ok) return;
    ++failures_;
    if (failures_ <= 3) notes_ += (notes_.empty() ? "" : "; ") + what;
  }
  Outcome done(const std::string& summary) const {
    std::ostringstream os;
    os << summary << ", " << checks_ << " checks";
    if (failures_) os << ", " << failures_ << " failed: " << notes_;
    return {failures_ == 0, os.str()};
  }

 private:
  std::size_t checks_ = 0, failures_ = 0;
  std::string notes_;
};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

ModelConfig lattice_model() { return ModelConfig{4, 4, 8, 64, 32, true, 2026}; }

std::vector<Batch> lattice_batches(const ModelConfig& c) {
  return {random_batch(c, 0, {5, 1, 7}, 8, 11), random_batch(c, 1, {32, 17}, 32, 12),
          random_batch(c, 2, {1}, 1, 13), random_batch(c, 3, {3, 4, 4, 2}, 4, 14)};
}

RuntimeConfig lattice_runtime(std::size_t tp, std::size_t pp, bool drce, bool pool) {
  RuntimeConfig rc;
  rc.model = lattice_model();
  rc.tp_size = tp;
  rc.pp_size = pp;
  rc.drce = drce;
  if (pool) {
    PoolConfig pc;
    pc.local_layers = 1;
    rc.pool = pc;
  }
  return rc;
}

// ---------------------------------------------------------------------------

Outcome serial_equivalence() {
  const auto t0 = Clock::now();
  Check ck;
  const auto c = lattice_model();
  const auto params = build_model(c);
  const auto batches = lattice_batches(c);
  std::vector<Tensor> refs;
  for (const auto& b : batches) refs.push_back(serial_forward(params, b));
  double worst = 0.0;
  std::size_t configs = 0;
  for (std::size_t tp : {1, 2, 4}) {
    for (std::size_t pp : {1, 2, 4}) {
      for (bool drce : {false, true}) {
        for (bool pool : {false, true}) {
          Runtime rt(lattice_runtime(tp, pp, drce, pool));
          std::vector<ResultHandle> hs;
          for (const auto& b : batches) hs.push_back(rt.submit(b));
          for (std::size_t i = 0; i < batches.size(); ++i) {
            const double d = max_abs_diff_valid(hs[i].wait(), refs[i], batches[i].seq_lens);
            worst = std::max(worst, d);
            ck.expect(d <= 1e-9, "tp=" + std::to_string(tp) + " pp=" + std::to_string(pp) +
                                     " drce=" + std::to_string(drce) +
                                     " pool=" + std::to_string(pool) + " diff " + fmt(d));
          }
          ++configs;
        }
      }
    }
  }
  const double secs = seconds_since(t0);
  ck.expect(secs < 60.0, "lattice took " + fmt(secs) + " s");
  return ck.done(std::to_string(configs) + " configurations, max diff " + fmt(worst) + ", " +
                 fmt(secs) + " s");
}

Outcome sync_counting() {
  Check ck;
  for (std::size_t layers : {1, 4, 6}) {
    auto c = lattice_model();
    c.num_layers = layers;
    for (std::size_t tp : {2, 4}) {
      RuntimeConfig rc;
      rc.model = c;
      rc.tp_size = tp;
      Runtime rt(rc);
      rt.submit(random_batch(c, 0, {3, 2}, 4, 1)).wait();
      rt.shutdown();
      for (std::size_t r = 0; r < tp; ++r) {
        ck.expect(rt.counters(r).all_reduce == 2 * layers,
                  "L=" + std::to_string(layers) + " tp=" + std::to_string(tp) + " rank " +
                      std::to_string(r) + " all_reduce " +
                      std::to_string(rt.counters(r).all_reduce));
      }
    }
  }
  for (std::size_t pp : {1, 2, 3, 4}) {
    RuntimeConfig rc;
    rc.model = lattice_model();
    rc.pp_size = pp;
    Runtime rt(rc);
    for (std::uint64_t i = 0; i < 5; ++i) {
      const auto before = rt.counters();
      rt.submit(random_batch(rc.model, i, {2}, 3, i)).wait();
      const auto delta = rt.counters() - before;
      ck.expect(delta.send == pp - 1 && delta.recv == pp - 1,
                "pp=" + std::to_string(pp) + " sends " + std::to_string(delta.send));
    }
  }
  return ck.done("all_reduce 2L per rank, P-1 transfers per batch");
}

Outcome ordering_and_liveness() {
  Check ck;
  const auto base = lattice_model();
  const std::size_t seeds = 20, batches = 64, callers = 16;
  const auto t0 = Clock::now();
  for (std::uint64_t seed = 0; seed < seeds; ++seed) {
    auto run = std::async(std::launch::async, [&, seed]() -> std::string {
      auto c = base;
      c.seed = 100 + seed;
      const auto params = build_model(c);
      RuntimeConfig rc;
      rc.model = c;
      rc.pp_size = 4;
      rc.trace = true;
      std::mutex mu;
      std::mt19937_64 jitter(seed);
      rc.control_delay = [&](std::size_t, std::uint64_t) {
        std::size_t us;
        {
          std::lock_guard lk(mu);
          us = jitter() % 200;
        }
        std::this_thread::sleep_for(std::chrono::microseconds(us));
      };
      Runtime rt(rc);
      std::vector<Batch> bs(batches);
      std::vector<ResultHandle> hs(batches);
      std::vector<std::thread> ts;
      for (std::size_t t = 0; t < callers; ++t) {
        ts.emplace_back([&, t] {
          std::mt19937_64 gen(seed * 1000 + t);
          static constexpr std::size_t pads[] = {4, 8, 16};
          for (std::size_t i = t; i < batches; i += callers) {
            const std::size_t b = 1 + gen() % 8, pad = pads[gen() % 3];
            std::vector<std::size_t> lens(b);
            for (auto& l : lens) l = 1 + gen() % pad;
            bs[i] = random_batch(c, i, lens, pad, gen());
            hs[i] = rt.submit(bs[i]);
          }
        });
      }
      for (auto& t : ts) t.join();
      for (std::size_t i = 0; i < batches; ++i) {
        const double d =
            max_abs_diff_valid(hs[i].wait(), serial_forward(params, bs[i]), bs[i].seq_lens);
        if (!(d <= 1e-9)) return "batch " + std::to_string(i) + " diff " + fmt(d);
      }
      rt.shutdown();
      for (std::size_t r = 0; r < rt.world_size(); ++r) {
        const auto keys = rt.trace()->keys(r, TraceKind::pop);
        if (keys.size() != batches) return "stage " + std::to_string(r) + " saw " +
                                           std::to_string(keys.size()) + " keys";
        for (std::size_t i = 1; i < keys.size(); ++i) {
          if (keys[i] <= keys[i - 1]) return "stage " + std::to_string(r) + " out of order";
        }
      }
      return "";
    });
    if (run.wait_for(std::chrono::seconds(30)) != std::future_status::ready) {
      // A stuck pipeline cannot be joined; report and leave.
      std::printf("FAIL criterion 3: ordering and liveness (seed %llu exceeded 30 s watchdog)\n",
                  static_cast<unsigned long long>(seed));
      std::fflush(stdout);
      _exit(1);
    }
    const auto err = run.get();
    ck.expect(err.empty(), "seed " + std::to_string(seed) + ": " + err);
  }
  return ck.done(std::to_string(seeds) + " seeds x " + std::to_string(batches) +
                 " batches from " + std::to_string(callers) + " callers, " +
                 fmt(seconds_since(t0)) + " s");
}

// Virtual makespan of m identical batches through pp stages of one layer each.
double pipelined_makespan(std::size_t pp, std::size_t m, double c) {
  RuntimeConfig rc;
  rc.model = lattice_model();
  rc.pp_size = pp;
  rc.queue_capacity = m;
  const std::size_t tokens = 4 * 8;
  const auto params = layer_param_count(rc.model.num_heads, rc.model.head_dim);
  rc.cost.seconds_per_token_param = c / static_cast<double>(tokens * params);
  // Transfers cost a fixed c/100 regardless of activation size.
  rc.cost.link_latency_s = c / 100.0;
  rc.cost.link_GBps = 1e18;
  Runtime rt(rc);
  std::vector<ResultHandle> hs;
  for (std::uint64_t i = 0; i < m; ++i) {
    hs.push_back(rt.submit(random_batch(rc.model, i, {8, 5, 3, 8}, 8, i), 0.0));
  }
  double end = 0.0;
  for (auto& h : hs) {
    h.wait();
    end = std::max(end, h.virtual_finish());
  }
  return end;
}

Outcome pipeline_speedup() {
  Check ck;
  const double c = 1e-3;
  const std::size_t layers = lattice_model().num_layers;
  auto speedup = [&](std::size_t pp, std::size_t m) {
    return pipelined_makespan(1, m, c) / pipelined_makespan(pp, m, c);
  };
  const double s2 = speedup(2, 32), s4 = speedup(4, 32), s4_one = speedup(4, 1);
  const double stage = c * static_cast<double>(layers);
  ck.expect(s2 >= 1.9, "pp=2 speedup " + fmt(s2));
  ck.expect(s4 >= 3.4, "pp=4 speedup " + fmt(s4));
  ck.expect(s4_one < s4, "one-batch speedup " + fmt(s4_one) + " not below " + fmt(s4));
  // Cross-check against the closed-form pipeline schedule.
  const double m2 = oracle::pipeline_makespan(1, 32, stage, 0) /
                    oracle::pipeline_makespan(2, 32, stage / 2, c / 100);
  const double m4 = oracle::pipeline_makespan(1, 32, stage, 0) /
                    oracle::pipeline_makespan(4, 32, stage / 4, c / 100);
  ck.expect(std::abs(s2 - m2) <= 1e-6 * m2, "pp=2 schedule " + fmt(s2) + " vs " + fmt(m2));
  ck.expect(std::abs(s4 - m4) <= 1e-6 * m4, "pp=4 schedule " + fmt(s4) + " vs " + fmt(m4));
  return ck.done("speedup " + fmt(s2) + "x at pp=2, " + fmt(s4) + "x at pp=4, " + fmt(s4_one) +
                 "x at pp=4 with one batch");
}

Outcome padding_removal() {
  Check ck;
  const auto c = lattice_model();
  const auto params = build_model(c);
  std::uint64_t padded = 0, packed = 0;
  for (std::size_t pad : {2, 8, 16, 32}) {
    const Batch b = random_batch(c, 0, std::vector<std::size_t>(3, pad / 2), pad, pad);
    const Tensor ref = serial_forward(params, b);
    for (std::size_t tp : {1, 2}) {
      std::uint64_t macs[2];
      for (bool drce : {false, true}) {
        RuntimeConfig rc;
        rc.model = c;
        rc.tp_size = tp;
        rc.pp_size = 2;
        rc.drce = drce;
        Runtime rt(rc);
        const Tensor out = rt.submit(b).wait();
        rt.shutdown();
        macs[drce] = rt.linear_macs();
        const double d = max_abs_diff_valid(out, ref, b.seq_lens);
        ck.expect(d <= 1e-9, "pad " + std::to_string(pad) + " diff " + fmt(d));
      }
      ck.expect(2 * macs[1] == macs[0], "pad " + std::to_string(pad) + " MACs " +
                                            std::to_string(macs[1]) + " vs " +
                                            std::to_string(macs[0]));
      padded += macs[0];
      packed += macs[1];
    }
  }
  ck.expect(drce_savings(3, 8, {8, 8, 8}) == 1.0, "full-length ratio");
  ck.expect(drce_savings(3, 8, {4, 4, 4}) == 0.5, "half-length ratio");
  ck.expect(drce_savings(2, 4, {1, 4}) == 0.625, "[1,4] ratio");
  return ck.done("linear MACs " + std::to_string(packed) + " packed vs " +
                 std::to_string(padded) + " padded");
}

Outcome placement_arithmetic() {
  Check ck;
  const auto off = plan_placement(24, 20).offloaded();
  ck.expect(off == std::vector<std::size_t>{5, 11, 17, 23}, "placement differs");
  const double t = transfer_time(3.375e9, 600.0);
  ck.expect(std::abs(t - 5.625e-3) <= 1e-6 * 5.625e-3, "transfer time " + fmt(t));
  const auto bytes = 2 * layer_param_count(96, 128);
  ck.expect(std::abs(static_cast<double>(bytes) / (1ull << 30) - 3.375) < 1e-3,
            "GPT-3 layer is " + fmt(static_cast<double>(bytes) / (1ull << 30)) + " GiB");
  std::string list;
  for (auto i : off) list += (list.empty() ? "" : ",") + std::to_string(i);
  return ck.done("offloaded {" + list + "}, t = " + fmt(t) + " s");
}

constexpr std::uint64_t kFullLayerBytes = 3'375'000'000ULL;

struct PooledRun {
  double makespan = 0.0;
  double stall = 0.0;
  std::size_t fetches = 0;
  double max_diff = 0.0;
};

// One tp=1 pp=1 runtime over a 24-layer model whose pool prices every layer
// at full size.
PooledRun run_pooled(std::size_t local, double link_GBps, bool host, double compute) {
  RuntimeConfig rc;
  rc.model = ModelConfig{24, 4, 2, 32, 8, true, 77};
  const std::size_t tokens = 2 * 4;
  const auto params = layer_param_count(4, 2);
  rc.cost.seconds_per_token_param = compute / static_cast<double>(tokens * params);
  PoolConfig pc;
  pc.local_layers = local;
  pc.prefetch_depth = 1;
  pc.bandwidth.param_bytes = kFullLayerBytes;
  pc.bandwidth.peer_link_GBps = link_GBps;
  pc.bandwidth.host_link_GBps = link_GBps;
  if (host) pc.peers = {PeerDevice{1, 0}};
  rc.pool = pc;
  Runtime rt(rc);
  const auto model = build_model(rc.model);
  PooledRun out;
  std::vector<Batch> bs;
  std::vector<ResultHandle> hs;
  for (std::uint64_t i = 0; i < 4; ++i) {
    bs.push_back(random_batch(rc.model, i, {4, 2}, 4, i));
    hs.push_back(rt.submit(bs.back(), 0.0));
  }
  for (std::size_t i = 0; i < hs.size(); ++i) {
    const Tensor y = hs[i].wait();
    out.makespan = std::max(out.makespan, hs[i].virtual_finish());
    out.max_diff = std::max(out.max_diff,
                            max_abs_diff_valid(y, serial_forward(model, bs[i]), bs[i].seq_lens));
  }
  rt.shutdown();
  out.stall = rt.stall_seconds();
  out.fetches = rt.worker(0).stats().fetches;
  return out;
}

Outcome pool_overlap() {
  Check ck;
  const double t = transfer_time(static_cast<double>(kFullLayerBytes), 600.0);
  const double compute = 1.5 * t;
  const auto local = run_pooled(24, 600.0, false, compute);
  const auto pooled = run_pooled(20, 600.0, false, compute);
  ck.expect(local.fetches == 0, "all-local run fetched");
  ck.expect(pooled.fetches == 16, "pooled fetches " + std::to_string(pooled.fetches));
  ck.expect(pooled.makespan <= 1.05 * local.makespan,
            "pooled " + fmt(pooled.makespan) + " vs local " + fmt(local.makespan));
  ck.expect(pooled.max_diff <= 1e-9 && local.max_diff <= 1e-9, "pooled output diverged");

  const double th = transfer_time(static_cast<double>(kFullLayerBytes), 32.0);
  const auto hosted = run_pooled(20, 32.0, true, 0.1 * th);
  const auto hosted_local = run_pooled(24, 32.0, true, 0.1 * th);
  ck.expect(hosted.makespan >= 4 * th, "host run " + fmt(hosted.makespan) + " below (L-n)t " +
                                           fmt(4 * th));
  ck.expect(hosted.makespan > hosted_local.makespan, "host run not slower than all-local");
  return ck.done("peer link " + fmt(pooled.makespan / local.makespan) +
                 "x all-local, host link " + fmt(hosted.makespan / hosted_local.makespan) +
                 "x all-local, (L-n)t = " + fmt(4 * th) + " s");
}

Outcome budget_safety() {
  Check ck;
  std::size_t replays = 0;
  // Every pooled configuration of the lattice, through the runtime.
  const auto c = lattice_model();
  const auto batches = lattice_batches(c);
  for (std::size_t tp : {1, 2, 4}) {
    for (std::size_t pp : {1, 2, 4}) {
      for (bool drce : {false, true}) {
        auto rc = lattice_runtime(tp, pp, drce, true);
        std::optional<WorkerPoolSetup> setup;
        {
          Runtime rt(rc);
          for (const auto& b : batches) rt.submit(b).wait();
          rt.shutdown();
          for (std::size_t r = 0; r < rt.world_size(); ++r) {
            setup = rt.worker(r).pool_setup();
            const std::size_t n = setup->plan.local_count();
            const std::size_t remote = setup->plan.offloaded().size();
            const std::size_t k = std::min(setup->plan.prefetch_depth, remote);
            ck.expect(setup->capacity_bytes == (n + k) * setup->layer_bytes, "capacity");
            for (const auto& tl : rt.worker(r).timelines()) {
              ++replays;
              try {
                budget_track(tl.memory, setup->capacity_bytes);
              } catch (const std::exception& e) {
                ck.expect(false, e.what());
              }
              if (remote == 0) continue;
              bool flagged = false;
              try {
                budget_track(tl.memory, n * setup->layer_bytes);
              } catch (const CapacityError&) {
                flagged = true;
              }
              ck.expect(flagged, "n+0 replay not flagged");
            }
          }
        }
        if (setup && !setup->plan.offloaded().empty()) {
          rc.pool->capacity_bytes = setup->plan.local_count() * setup->layer_bytes;
          bool refused = false;
          try {
            Runtime rt(rc);
          } catch (const Error&) {
            refused = true;
          }
          ck.expect(refused, "n+0 capacity accepted at tp=" + std::to_string(tp) +
                                 " pp=" + std::to_string(pp));
        }
      }
    }
  }
  // Every (L, n, k) on the single-device executor.
  for (std::size_t layers = 2; layers <= 8; ++layers) {
    auto mc = lattice_model();
    mc.num_layers = layers;
    const auto params = build_model(mc);
    const Batch b = random_batch(mc, 0, {3, 2}, 4, layers);
    const std::uint64_t bytes = params.layers[0].bytes();
    for (std::size_t n = 1; n < layers; ++n) {
      for (std::size_t k = 1; k <= layers - n; ++k) {
        const auto plan = plan_placement(layers, n, k);
        PooledOptions opt;
        opt.capacity_bytes = (n + k) * bytes;
        const auto r = pooled_forward(params, plan, b, opt);
        ++replays;
        try {
          budget_track(r.timeline.memory, (n + k) * bytes);
        } catch (const std::exception& e) {
          ck.expect(false, e.what());
        }
        bool flagged = false;
        try {
          budget_track(r.timeline.memory, n * bytes);
        } catch (const CapacityError&) {
          flagged = true;
        }
        ck.expect(flagged, "executor n+0 replay not flagged");
        opt.capacity_bytes = n * bytes;
        bool refused = false;
        try {
          pooled_forward(params, plan, b, opt);
        } catch (const ConfigError&) {
          refused = true;
        }
        ck.expect(refused, "executor accepted n+0 capacity");
      }
    }
  }
  return ck.done(std::to_string(replays) + " timelines replayed");
}

Outcome numerics() {
  const auto t0 = Clock::now();
  Check ck;
  const std::size_t seeds = 120;
  double worst = 0.0;
  auto close = [&](const oracle::Vec& a, const oracle::Vec& b, double tol, const char* what) {
    const double d = oracle::max_abs(a, b);
    worst = std::max(worst, d);
    ck.expect(d <= tol, std::string(what) + " diff " + fmt(d));
  };
  for (std::uint64_t seed = 0; seed < seeds; ++seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> nd;
    auto dim = [&](std::size_t lo, std::size_t hi) { return lo + gen() % (hi - lo + 1); };
    auto randn = [&](Shape s) {
      std::size_t n = 1;
      for (auto d : s) n *= d;
      std::vector<double> v(n);
      for (auto& x : v) x = nd(gen);
      return Tensor(std::move(s), std::move(v));
    };

    // matmul: oracle, identity, zero.
    const std::size_t m = dim(1, 9), k = dim(1, 9), n = dim(1, 9);
    const Tensor a = randn({m, k}), b = randn({k, n});
    close(oracle::to_vec(matmul(a, b)), oracle::matmul(oracle::to_vec(a), oracle::to_vec(b), m, k, n),
          1e-12, "matmul");
    std::vector<double> eye(k * k, 0.0);
    for (std::size_t i = 0; i < k; ++i) eye[i * k + i] = 1.0;
    ck.expect(matmul(a, Tensor({k, k}, eye)) == a, "identity matmul");
    const Tensor z = matmul(a, Tensor::zeros({k, n}));
    bool all_zero = true;
    for (double v : z.data()) all_zero = all_zero && v == 0.0;
    ck.expect(all_zero, "zero matmul");

    // layer_norm: oracle, zero-mean unit-variance rows, constant rows.
    const std::size_t h = dim(2, 16), rows = dim(1, 6);
    const Tensor x = randn({rows, h});
    const Tensor ones = Tensor::filled({h}, 1.0), zeros = Tensor::zeros({h});
    const Tensor ln = layer_norm(x, ones, zeros, 1e-5);
    close(oracle::to_vec(ln), oracle::layer_norm(oracle::to_vec(x), rows, h, ones, zeros, 1e-5),
          1e-12, "layer_norm");
    for (std::size_t r = 0; r < rows; ++r) {
      double mean = 0.0;
      for (std::size_t j = 0; j < h; ++j) mean += ln.data()[r * h + j];
      ck.expect(std::abs(mean / static_cast<double>(h)) <= 1e-12, "layer_norm mean");
    }
    const Tensor flat = layer_norm(Tensor::filled({rows, h}, 3.0), ones, zeros, 1e-5);
    for (double v : flat.data()) ck.expect(v == 0.0, "constant row not zero");

    // masked_softmax: rows sum to one, masked entries are exactly zero.
    const std::size_t bsz = dim(1, 3), heads = dim(1, 3), seq = dim(1, 7);
    std::vector<std::size_t> lens(bsz);
    for (auto& l : lens) l = dim(1, seq);
    const bool causal = gen() % 2;
    const auto mask = AttentionMask::length_based(lens, causal);
    const Tensor p = masked_softmax(randn({bsz, heads, seq, seq}), mask);
    for (std::size_t bi = 0; bi < bsz; ++bi) {
      for (std::size_t hi = 0; hi < heads; ++hi) {
        for (std::size_t i = 0; i < seq; ++i) {
          double sum = 0.0;
          bool any = false;
          for (std::size_t j = 0; j < seq; ++j) {
            const double v = p.data()[((bi * heads + hi) * seq + i) * seq + j];
            if (mask.visible(bi, i, j)) {
              sum += v;
              any = true;
            } else {
              ck.expect(v == 0.0, "masked probability not zero");
            }
          }
          if (any) ck.expect(std::abs(sum - 1.0) <= 1e-12, "softmax row sums to " + fmt(sum));
        }
      }
    }

    // attention and MLP against the per-head and per-element oracles.
    ModelConfig mc{1, heads, dim(1, 4), 16, 8, true, seed};
    const auto layer = build_layer(mc, 0);
    const std::size_t hh = mc.hidden();
    const Tensor xa = randn({bsz, seq, hh});
    close(oracle::to_vec(multi_head_attention(xa, layer.attn, heads, mask)),
          oracle::attention(oracle::to_vec(xa), bsz, seq, hh, layer.attn, heads, causal, lens),
          1e-10, "attention");
    const Tensor xm = randn({rows, hh});
    close(oracle::to_vec(mlp_forward(xm, layer.mlp)), oracle::mlp(oracle::to_vec(xm), rows, layer.mlp),
          1e-10, "mlp");

    // The whole stack composed from the oracles.
    mc.num_layers = 2;
    const auto model = build_model(mc);
    const Batch batch = random_batch(mc, 0, lens, seq, seed);
    close(oracle::to_vec(serial_forward(model, batch)), oracle::forward(model, batch), 1e-9,
          "forward");
  }
  const double secs = seconds_since(t0);
  ck.expect(secs < 30.0, "numerics took " + fmt(secs) + " s");
  return ck.done(std::to_string(seeds) + " seeds, max diff " + fmt(worst) + ", " + fmt(secs) +
                 " s");
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
      {"serial equivalence lattice", serial_equivalence},
      {"synchronization and transfer counts", sync_counting},
      {"ordering and liveness under concurrent submission", ordering_and_liveness},
      {"pipeline speedup on the virtual clock", pipeline_speedup},
      {"padding removal savings", padding_removal},
      {"placement and transfer arithmetic", placement_arithmetic},
      {"prefetch overlap on the virtual clock", pool_overlap},
      {"memory budget safety", budget_safety},
      {"numerics properties", numerics},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s criterion %zu: %s (%s)\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first,
                o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
