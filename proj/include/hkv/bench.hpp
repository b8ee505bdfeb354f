#pragma once

// Experiment runner: a fresh store per run, an optional preload, one measured
// phase, and a flat result row.

#include <hkv/engine.hpp>
#include <hkv/workload.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace hkv {

struct BenchConfig {
  EngineConfig engine;
  WorkloadSpec workload;
  Phase phase = Phase::kLoadA;
  u32 regions = 1;
  u32 clients = 1;
  u64 device_bytes = 0;          // 0 sizes the device from the workload
  std::filesystem::path device;  // empty runs on an in-memory device
  bool compute_space_amp = true;

  void validate() const;
  // Canonical text of every field that affects the result.
  std::string canonical() const;
  // FNV-1a of canonical(), as 16 hex digits.
  std::string fingerprint() const;
};

struct BenchResult {
  BenchConfig config;
  bool failed = false;
  std::string error;
  u64 ops = 0;
  TrafficSnapshot preload;  // the load before a run phase
  TrafficSnapshot traffic;  // the measured phase
  double throughput = 0;    // ops per wall-clock second
  std::optional<double> amplification;
  std::optional<double> write_amplification;
  std::optional<double> read_amplification;
  std::optional<double> space_amplification;
  std::optional<double> cpu_per_op;
  u64 peak_medium_log_bytes = 0;
  u64 medium_log_bytes = 0;
  u64 large_log_bytes = 0;
  u32 levels = 0;  // deepest user region
  // The in-place model for the realized tree: app bytes in * (l - 1 + f*l).
  u64 model_in_place_bytes = 0;
  std::optional<double> model_factor;
};

// Region boundaries splitting the key space evenly on the first hex digit
// after "user".
std::vector<std::string> region_bounds(u32 regions);

// Creates the store, runs the preload the phase needs and the phase itself.
// Engine errors are caught and flagged in the row.
BenchResult run_bench(const BenchConfig& config);

std::string csv_header();
std::string csv_row(const BenchResult& r);

// Cross product of the listed axes; an empty axis keeps the base value.
struct SweepGrid {
  std::vector<PlacementPolicy> policies;
  std::vector<MergeLevel> merge_levels;
  std::vector<bool> sorted_l0;
  std::vector<u32> growth_factors;
  std::vector<SizeMix> mixes;
  std::vector<Phase> phases;

  std::vector<BenchConfig> expand(const BenchConfig& base) const;
};

// One CSV (header plus a row per cell). Failed cells are flagged and the
// sweep goes on. Returns the number of failed cells.
size_t run_sweep(const std::vector<BenchConfig>& cells, std::ostream& csv);

}  // namespace hkv
