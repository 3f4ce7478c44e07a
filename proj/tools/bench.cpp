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

// Sweeps parallel layouts and batch shapes, checks every output against the
// serial reference, and writes a latency/throughput report.

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hcinfer/bench.hpp"
#include "hcinfer/config.hpp"

namespace {

hcinfer::ReportFormat format_for(const std::string& name, const std::string& out) {
  if (name == "csv") return hcinfer::ReportFormat::csv;
  if (name == "json") return hcinfer::ReportFormat::json;
  if (name == "table") return hcinfer::ReportFormat::table;
  if (out.size() > 5 && out.ends_with(".json")) return hcinfer::ReportFormat::json;
  return out.empty() ? hcinfer::ReportFormat::table : hcinfer::ReportFormat::csv;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hcinfer benchmark sweep"};
  std::string config_path, pool_path, clock, out, format = "auto";
  std::vector<std::size_t> tp, pp, batch_sizes, pad_sizes;
  bool drce = false;
  std::uint64_t seed = 0;
  std::size_t warmup = 0, runs = 0;

  app.add_option("--config", config_path, "grid file (JSON)")->required()->check(CLI::ExistingFile);
  app.add_option("--tp", tp, "tensor-parallel size")->delimiter(',');
  app.add_option("--pp", pp, "pipeline stages")->delimiter(',');
  app.add_flag("--drce", drce, "remove padding from linear layers");
  app.add_option("--pool", pool_path, "pool plan file (JSON); enables peer memory pooling")
      ->check(CLI::ExistingFile);
  app.add_option("--batch-sizes", batch_sizes, "e.g. 1,4,16,32")->delimiter(',');
  app.add_option("--pad-sizes", pad_sizes, "e.g. 64,128")->delimiter(',');
  app.add_option("--clock", clock, "virtual or real")->check(CLI::IsMember({"virtual", "real"}));
  app.add_option("--out", out, "report path; stdout when omitted");
  app.add_option("--format", format, "csv, json, table (default: from --out)")
      ->check(CLI::IsMember({"auto", "csv", "json", "table"}));
  app.add_option("--seed", seed, "input seed");
  app.add_option("--warmup", warmup, "warm-up runs per point");
  app.add_option("--runs", runs, "measured runs per point");
  CLI11_PARSE(app, argc, argv);

  try {
    auto grid = hcinfer::read_config_file<hcinfer::BenchGrid>(config_path);
    if (!tp.empty()) grid.tp = tp;
    if (!pp.empty()) grid.pp = pp;
    if (drce) grid.drce = {true};
    if (!pool_path.empty()) {
      grid.pool_config = hcinfer::read_config_file<hcinfer::PoolConfig>(pool_path);
      grid.pool = {true};
    }
    if (!batch_sizes.empty()) grid.batch_sizes = batch_sizes;
    if (!pad_sizes.empty()) grid.pad_sizes = pad_sizes;
    if (!clock.empty()) {
      grid.clock = clock == "real" ? hcinfer::ClockMode::real : hcinfer::ClockMode::virtual_clock;
    }
    if (app.count("--seed")) grid.seed = seed;
    if (app.count("--warmup")) grid.warmup = warmup;
    if (app.count("--runs")) grid.runs = runs;

    const auto report = hcinfer::run_sweep(grid);
    const auto fmt = format_for(format, out);
    if (out.empty()) {
      hcinfer::emit(report, fmt, std::cout);
    } else {
      hcinfer::emit(report, fmt, out);
      std::cerr << "wrote " << report.rows.size() << " rows to " << out << "\n";
    }
  } catch (const hcinfer::CorrectnessFailure& e) {
    std::cerr << "correctness failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
