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
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hcinfer/config.hpp"
#include "hcinfer/drce.hpp"
#include "hcinfer/engine.hpp"
#include "hcinfer/errors.hpp"
#include "hcinfer/model.hpp"

namespace hcinfer {

enum class ClockMode { virtual_clock, real };

/// A sweep over parallel layouts and batch shapes.
struct BenchGrid {
  ModelConfig model{4, 4, 8, 64, 128, true, 0};
  std::vector<std::size_t> tp{1};
  std::vector<std::size_t> pp{1};
  std::vector<bool> drce{false};
  std::vector<bool> pool{false};
  PoolConfig pool_config;
  std::vector<std::size_t> batch_sizes{1, 4, 16, 32};
  std::vector<std::size_t> pad_sizes{64, 128};
  // Every sequence gets max(1, round(fraction * pad)) valid tokens.
  double valid_fraction = 0.5;
  // Batches submitted together in one measured run.
  std::size_t batches_per_run = 8;
  std::size_t warmup = 3;
  std::size_t runs = 10;
  ClockMode clock = ClockMode::virtual_clock;
  CostModel cost;
  std::uint64_t seed = 0;
  double tolerance = 1e-9;
};

struct BenchRow {
  std::size_t tp = 1, pp = 1;
  bool drce = false, pool = false;
  std::size_t batch_size = 1, pad_size = 1;
  double p50_latency_s = 0.0, p95_latency_s = 0.0;
  double throughput_batches_s = 0.0, throughput_tokens_s = 0.0;
  // Per batch, summed over ranks.
  std::uint64_t all_reduce = 0, p2p = 0;
  double stall_s = 0.0;
  double drce_ratio = 1.0;
  std::uint64_t linear_macs = 0;

  bool operator==(const BenchRow&) const = default;
};

struct BenchReport {
  std::vector<BenchRow> rows;
  bool operator==(const BenchReport&) const = default;
};

inline constexpr int kReportSchemaVersion = 1;

inline const std::vector<std::string>& report_columns() {
  static const std::vector<std::string> cols{
      "tp",          "pp",          "drce",       "pool",
      "batch_size",  "pad_size",    "p50_latency_s", "p95_latency_s",
      "throughput_batches_s", "throughput_tokens_s", "all_reduce", "p2p",
      "stall_s",     "drce_ratio",  "linear_macs"};
  return cols;
}

inline void to_json(nlohmann::json& j, const BenchRow& r) {
  j = nlohmann::json{{"tp", r.tp},
                     {"pp", r.pp},
                     {"drce", r.drce},
                     {"pool", r.pool},
                     {"batch_size", r.batch_size},
                     {"pad_size", r.pad_size},
                     {"p50_latency_s", r.p50_latency_s},
                     {"p95_latency_s", r.p95_latency_s},
                     {"throughput_batches_s", r.throughput_batches_s},
                     {"throughput_tokens_s", r.throughput_tokens_s},
                     {"all_reduce", r.all_reduce},
                     {"p2p", r.p2p},
                     {"stall_s", r.stall_s},
                     {"drce_ratio", r.drce_ratio},
                     {"linear_macs", r.linear_macs}};
}

inline void from_json(const nlohmann::json& j, BenchRow& r) {
  j.at("tp").get_to(r.tp);
  j.at("pp").get_to(r.pp);
  j.at("drce").get_to(r.drce);
  j.at("pool").get_to(r.pool);
  j.at("batch_size").get_to(r.batch_size);
  j.at("pad_size").get_to(r.pad_size);
  j.at("p50_latency_s").get_to(r.p50_latency_s);
  j.at("p95_latency_s").get_to(r.p95_latency_s);
  j.at("throughput_batches_s").get_to(r.throughput_batches_s);
  j.at("throughput_tokens_s").get_to(r.throughput_tokens_s);
  j.at("all_reduce").get_to(r.all_reduce);
  j.at("p2p").get_to(r.p2p);
  j.at("stall_s").get_to(r.stall_s);
  j.at("drce_ratio").get_to(r.drce_ratio);
  j.at("linear_macs").get_to(r.linear_macs);
}

inline void from_json(const nlohmann::json& j, BenchGrid& g) {
  if (j.contains("model")) g.model = j.at("model").get<ModelConfig>();
  g.tp = j.value("tp", g.tp);
  g.pp = j.value("pp", g.pp);
  g.drce = j.value("drce", g.drce);
  g.pool = j.value("pool", g.pool);
  if (j.contains("pool_config")) g.pool_config = j.at("pool_config").get<PoolConfig>();
  g.batch_sizes = j.value("batch_sizes", g.batch_sizes);
  g.pad_sizes = j.value("pad_sizes", g.pad_sizes);
  g.valid_fraction = j.value("valid_fraction", g.valid_fraction);
  g.batches_per_run = j.value("batches_per_run", g.batches_per_run);
  g.warmup = j.value("warmup", g.warmup);
  g.runs = j.value("runs", g.runs);
  if (j.contains("clock")) {
    const auto c = j.at("clock").get<std::string>();
    if (c == "virtual") {
      g.clock = ClockMode::virtual_clock;
    } else if (c == "real") {
      g.clock = ClockMode::real;
    } else {
      throw ConfigError("clock must be 'virtual' or 'real', got '" + c + "'");
    }
  }
  if (j.contains("cost")) g.cost = j.at("cost").get<CostModel>();
  g.seed = j.value("seed", g.seed);
  g.tolerance = j.value("tolerance", g.tolerance);
}

/// Raised when a grid point's output disagrees with the serial reference.
class CorrectnessFailure : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline double percentile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = static_cast<std::size_t>(std::ceil(pos));
  return v[lo] + (v[hi] - v[lo]) * (pos - static_cast<double>(lo));
}

inline std::string point_name(const BenchRow& r) {
  std::ostringstream os;
  os << "tp=" << r.tp << " pp=" << r.pp << " drce=" << r.drce << " pool=" << r.pool
     << " B=" << r.batch_size << " S_pad=" << r.pad_size;
  return os.str();
}

}  // namespace detail

/// Runs one grid point: warm-up, then measured runs, checking every output
/// against the serial reference.
inline BenchRow run_point(const BenchGrid& g, const ModelParams& params, BenchRow row) {
  const ModelConfig& c = g.model;
  RuntimeConfig rc;
  rc.model = c;
  rc.tp_size = row.tp;
  rc.pp_size = row.pp;
  rc.drce = row.drce;
  if (row.pool) rc.pool = g.pool_config;
  rc.cost = g.cost;
  rc.queue_capacity = std::max<std::size_t>(64, g.batches_per_run);
  Runtime rt(rc);

  const std::size_t valid = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(g.valid_fraction * static_cast<double>(row.pad_size))),
      1, row.pad_size);
  const std::vector<std::size_t> lens(row.batch_size, valid);
  row.drce_ratio = drce_savings(row.batch_size, row.pad_size, lens);
  const std::size_t per_run = std::max<std::size_t>(1, g.batches_per_run);

  std::vector<double> latencies, run_times;
  std::uint64_t batch_id = 0, tokens_per_run = 0;
  CounterSnapshot before{};
  std::uint64_t macs_before = 0;
  double stall_before = 0.0;
  for (std::size_t run = 0; run < g.warmup + g.runs; ++run) {
    const bool measured = run >= g.warmup;
    if (run == g.warmup) {
      before = rt.counters();
      macs_before = rt.linear_macs();
      stall_before = rt.stall_seconds();
    }
    std::vector<Batch> batches;
    for (std::size_t i = 0; i < per_run; ++i, ++batch_id) {
      batches.push_back(random_batch(c, batch_id, lens, row.pad_size,
                                     g.seed * 1000003 + batch_id));
    }
    const double origin = rt.virtual_now();
    const auto wall0 = std::chrono::steady_clock::now();
    std::vector<ResultHandle> handles;
    for (const auto& b : batches) handles.push_back(rt.submit(b, origin));
    double run_end = origin;
    tokens_per_run = 0;
    for (std::size_t i = 0; i < handles.size(); ++i) {
      Tensor out;
      try {
        out = handles[i].wait();
      } catch (const std::exception& e) {
        throw CorrectnessFailure(detail::point_name(row) + ": batch failed: " + e.what());
      }
      const Tensor ref = serial_forward(params, batches[i]);
      const double diff = max_abs_diff_valid(out, ref, batches[i].seq_lens);
      if (!(diff <= g.tolerance)) {
        throw CorrectnessFailure(detail::point_name(row) + ": max-abs difference " +
                                 std::to_string(diff) + " from serial reference");
      }
      tokens_per_run += batches[i].valid_tokens();
      if (g.clock == ClockMode::virtual_clock) {
        latencies.push_back(handles[i].virtual_finish() - handles[i].virtual_submit());
        run_end = std::max(run_end, handles[i].virtual_finish());
      } else {
        latencies.push_back(std::chrono::duration<double>(handles[i].wall_latency()).count());
      }
    }
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
    if (!measured) {
      latencies.clear();
      continue;
    }
    run_times.push_back(g.clock == ClockMode::virtual_clock ? run_end - origin : wall);
  }

  const CounterSnapshot after = rt.counters();
  const double measured_batches = static_cast<double>(g.runs * per_run);
  rt.shutdown();
  if (g.runs > 0) {
    const auto n = static_cast<std::uint64_t>(g.runs * per_run);
    row.all_reduce = (after.all_reduce - before.all_reduce) / n;
    row.p2p = (after.send - before.send) / n;
    row.linear_macs = (rt.linear_macs() - macs_before) / n;
    row.stall_s = (rt.stall_seconds() - stall_before) / measured_batches;
    row.p50_latency_s = detail::percentile(latencies, 0.5);
    row.p95_latency_s = detail::percentile(latencies, 0.95);
    const double t = detail::percentile(run_times, 0.5);
    if (t > 0.0) {
      row.throughput_batches_s = static_cast<double>(per_run) / t;
      row.throughput_tokens_s = static_cast<double>(tokens_per_run) / t;
    }
  }
  return row;
}

/// Every combination of the grid's axes, in a fixed nesting order.
inline BenchReport run_sweep(const BenchGrid& g) {
  g.model.validate();
  BenchReport report;
  const ModelParams params = build_model(g.model);
  for (auto tp : g.tp) {
    for (auto pp : g.pp) {
      for (bool drce : g.drce) {
        for (bool pool : g.pool) {
          for (auto b : g.batch_sizes) {
            for (auto s : g.pad_sizes) {
              BenchRow row;
              row.tp = tp;
              row.pp = pp;
              row.drce = drce;
              row.pool = pool;
              row.batch_size = b;
              row.pad_size = s;
              report.rows.push_back(run_point(g, params, row));
            }
          }
        }
      }
    }
  }
  return report;
}

enum class ReportFormat { csv, json, table };

inline void emit(const BenchReport& report, ReportFormat format, std::ostream& os) {
  const auto& cols = report_columns();
  if (format == ReportFormat::json) {
    nlohmann::json j{{"schema_version", kReportSchemaVersion},
                     {"columns", cols},
                     {"rows", report.rows}};
    os << j.dump(2) << "\n";
    return;
  }
  std::vector<std::vector<std::string>> cells;
  for (const auto& r : report.rows) {
    const nlohmann::json j = r;
    std::vector<std::string> line;
    for (const auto& c : cols) {
      const auto& v = j.at(c);
      if (v.is_boolean()) {
        line.push_back(v.get<bool>() ? "1" : "0");
      } else if (v.is_number_float()) {
        // CSV keeps full precision for round trips; the table is for reading.
        std::ostringstream s;
        s << std::setprecision(format == ReportFormat::csv ? 17 : 6) << v.get<double>();
        line.push_back(s.str());
      } else {
        line.push_back(v.dump());
      }
    }
    cells.push_back(std::move(line));
  }
  if (format == ReportFormat::csv) {
    for (std::size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
    os << "\n";
    for (const auto& line : cells) {
      for (std::size_t i = 0; i < line.size(); ++i) os << (i ? "," : "") << line[i];
      os << "\n";
    }
    return;
  }
  std::vector<std::size_t> width;
  for (const auto& c : cols) width.push_back(c.size());
  for (const auto& line : cells) {
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
  }
  auto print = [&](const std::vector<std::string>& line) {
    for (std::size_t i = 0; i < line.size(); ++i) {
      os << (i ? "  " : "") << std::setw(static_cast<int>(width[i])) << line[i];
    }
    os << "\n";
  };
  print(cols);
  for (const auto& line : cells) print(line);
}

inline void emit(const BenchReport& report, ReportFormat format, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write report to " + path);
  emit(report, format, out);
  if (!out) throw Error("failed writing report to " + path);
}

inline BenchReport read_report_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  if (j.value("schema_version", 0) != kReportSchemaVersion) {
    throw ConfigError("unsupported report schema version");
  }
  BenchReport r;
  r.rows = j.at("rows").get<std::vector<BenchRow>>();
  return r;
}

}  // namespace hcinfer
