// hkv: model evaluation, workload runs and store inspection.

#include <hkv/amp_model.hpp>
#include <hkv/bench.hpp>

#include <CLI11.hpp>

#include <cmath>
#include <fstream>
#include <iostream>

namespace {

using namespace hkv;

constexpr int kFlagged = 2;

struct Options {
  // engine
  u32 growth_factor = 8;
  u64 l0_size = 8 * kMiB;
  std::string policy = "hybrid";
  std::string merge_level = "n-1";
  bool sorted_l0 = true;
  double gc_threshold = 0.10;
  u64 segment_size = 256 * kKiB;
  bool deterministic = false;
  bool no_gc_after_compaction = false;
  // workload
  std::string mix = "SD";
  u64 keys = 100000;
  u64 ops = 0;
  std::string dist = "zipfian";
  u64 seed = 1;
  u32 regions = 1;
  u32 clients = 1;
  // io
  std::string device;
  u64 device_size = 0;
  std::string out;
  bool no_space_amp = false;
};

void add_engine_flags(CLI::App* cmd, Options& o)
{
  cmd->add_option("--growth-factor", o.growth_factor, "level size ratio f")->capture_default_str();
  cmd->add_option("--l0-size", o.l0_size, "L0 capacity (e.g. 8MiB)")
      ->transform(CLI::AsSizeValue(false))
      ->capture_default_str();
  cmd->add_option("--policy", o.policy, "hybrid | all-in-place | all-in-log | medium-as-small | medium-as-large")
      ->capture_default_str();
  cmd->add_option("--merge-level", o.merge_level, "n-1 | n-2")->capture_default_str();
  cmd->add_option("--sorted-l0", o.sorted_l0, "sort medium runs at L0 compaction")->capture_default_str();
  cmd->add_option("--gc-threshold", o.gc_threshold, "invalid fraction that triggers reclamation")
      ->capture_default_str();
  cmd->add_option("--segment-size", o.segment_size, "segment length (e.g. 256KiB)")
      ->transform(CLI::AsSizeValue(false))
      ->capture_default_str();
  cmd->add_flag("--deterministic", o.deterministic, "run compaction and GC inline");
  cmd->add_flag("--no-gc-after-compaction", o.no_gc_after_compaction, "only reclaim on explicit GC");
}

void add_workload_flags(CLI::App* cmd, Options& o)
{
  cmd->add_option("--mix", o.mix, "S | M | L | SD | MD | LD | s-m-l percentages")->capture_default_str();
  cmd->add_option("--keys", o.keys, "keys inserted by the load")->capture_default_str();
  cmd->add_option("--ops", o.ops, "run-phase ops (default: keys, keys/5 for run-e)");
  cmd->add_option("--dist", o.dist, "uniform | zipfian")->capture_default_str();
  cmd->add_option("--seed", o.seed, "workload seed")->capture_default_str();
  cmd->add_option("--regions", o.regions, "regions the key space is split into")->capture_default_str();
  cmd->add_option("--clients", o.clients, "client threads, each owning some regions")->capture_default_str();
  cmd->add_option("--device", o.device, "store file (default: in memory)");
  cmd->add_option("--device-size", o.device_size, "device size (default: sized from the workload)")
      ->transform(CLI::AsSizeValue(false));
  cmd->add_option("--out", o.out, "CSV output path (default: stdout)");
  cmd->add_flag("--no-space-amp", o.no_space_amp, "skip the full scan for space amplification");
}

EngineConfig engine_config(const Options& o)
{
  EngineConfig c;
  c.growth_factor = o.growth_factor;
  c.l0_capacity = o.l0_size;
  c.policy = parse_policy(o.policy);
  c.medium_merge_level = parse_merge_level(o.merge_level);
  c.sorted_l0_segments = o.sorted_l0;
  c.gc_threshold = o.gc_threshold;
  c.segment_length = o.segment_size;
  c.deterministic = o.deterministic;
  c.gc_after_compaction = !o.no_gc_after_compaction;
  return c;
}

BenchConfig bench_config(const Options& o, Phase phase)
{
  BenchConfig b;
  b.engine = engine_config(o);
  b.workload.mix = SizeMix::parse(o.mix);
  b.workload.keys = o.keys;
  b.workload.ops = o.ops;
  b.workload.dist = parse_key_dist(o.dist);
  b.workload.seed = o.seed;
  b.phase = phase;
  b.regions = o.regions;
  b.clients = o.clients;
  b.device = o.device;
  b.device_bytes = o.device_size;
  b.compute_space_amp = !o.no_space_amp;
  return b;
}

// Writes to --out when given, else stdout.
class Output
{
 public:
  explicit Output(const std::string& path)
  {
    if (!path.empty()) {
      file_.open(path);
      if (!file_) {
        throw Error(ErrorCode::kIo, "cannot open " + path);
      }
    }
  }
  std::ostream& stream()
  {
    return file_.is_open() ? file_ : std::cout;
  }

 private:
  std::ofstream file_;
};

int run_one(const Options& o, Phase phase)
{
  const BenchResult r = run_bench(bench_config(o, phase));
  Output out{o.out};
  out.stream() << csv_header() << "\n" << csv_row(r) << "\n";
  if (r.failed) {
    std::cerr << "hkv: run failed: " << r.error << "\n";
    return kFlagged;
  }
  return 0;
}

std::unique_ptr<Store> open_existing(const Options& o)
{
  if (o.device.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "--device is required");
  }
  EngineConfig c = engine_config(o);
  c.deterministic = true;
  return Store::open(FileDevice::open(o.device), c);
}

struct ModelOptions {
  u32 levels = 4;
  u32 growth_factor = 8;
  u64 l0 = 1;
  std::vector<double> p;
  u32 capacity_levels = 5;
  bool simulate = false;
  std::string out;
};

int run_model(const ModelOptions& m)
{
  std::vector<double> ps = m.p;
  if (ps.empty()) {
    for (double p = 0.01; p <= 1.0 + 1e-9; p += 0.01) {
      ps.push_back(std::round(p * 100) / 100);
    }
  }
  Output out{m.out};
  std::ostream& os = out.stream();
  os << "levels,growth_factor,l0_size,key_fraction,traffic_in_place,traffic_kv_separated,benefit";
  if (m.simulate) {
    os << ",simulated_in_place,simulated_kv_separated";
  }
  os << "\n";
  for (double p : ps) {
    AmplificationParams a;
    a.levels_l = m.levels;
    a.growth_factor_f = m.growth_factor;
    a.l0_size_s0 = m.l0;
    a.key_fraction_p = Rational::ratio(static_cast<u64>(std::llround(p * 1e6)), 1000000);
    a.validate();
    os << m.levels << "," << m.growth_factor << "," << m.l0 << "," << p << "," << traffic_in_place(a) << ","
       << traffic_kv_separated(a).to_double() << "," << separation_benefit(a);
    if (m.simulate) {
      os << "," << simulate_leveled_traffic(a, false).to_string() << ","
         << simulate_leveled_traffic(a, true).to_double();
    }
    os << "\n";
  }
  os << "\ntotal_levels,i,capacity_ratio\n";
  for (u32 i = 1; i < m.capacity_levels; ++i) {
    os << m.capacity_levels << "," << i << "," << capacity_ratio(m.growth_factor, m.capacity_levels, i) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv)
{
  CLI::App app{"hkv: hybrid KV placement store, model and workload harness"};
  app.require_subcommand(1);
  Options o;

  ModelOptions mo;
  auto* model = app.add_subcommand("model", "evaluate the amplification model");
  model->add_option("--levels", mo.levels, "on-device levels l")->capture_default_str();
  model->add_option("--growth-factor", mo.growth_factor, "growth factor f")->capture_default_str();
  model->add_option("--l0-size", mo.l0, "L0 size S0 in bytes")->capture_default_str();
  model->add_option("--p", mo.p, "key fractions (default 0.01..1)")->delimiter(',');
  model->add_option("--capacity-levels", mo.capacity_levels, "N for the capacity ratio table")
      ->capture_default_str();
  model->add_flag("--simulate", mo.simulate, "add the merge-by-merge simulator columns");
  model->add_option("--out", mo.out, "CSV output path");

  std::string load_phase = "load-a";
  auto* load = app.add_subcommand("load", "load a fresh store and report one CSV row");
  add_engine_flags(load, o);
  add_workload_flags(load, o);
  load->add_option("--phase", load_phase, "load-a | load-e")->capture_default_str();

  std::string run_phase = "run-a";
  auto* run = app.add_subcommand("run", "preload a fresh store, run one phase, report one CSV row");
  add_engine_flags(run, o);
  add_workload_flags(run, o);
  run->add_option("--phase", run_phase, "run-a | run-b | run-c | run-d | run-e")->capture_default_str();

  std::vector<std::string> policies, merge_levels, sorted, mixes, phases;
  std::vector<u32> growth_factors;
  auto* sweep = app.add_subcommand("sweep", "cross product of configs, one CSV row per cell");
  add_engine_flags(sweep, o);
  add_workload_flags(sweep, o);
  sweep->add_option("--phase", run_phase, "phase when --phases is not given")->capture_default_str();
  sweep->add_option("--policies", policies, "placement policies")->delimiter(',');
  sweep->add_option("--merge-levels", merge_levels, "n-1,n-2")->delimiter(',');
  sweep->add_option("--sorted", sorted, "on,off")->delimiter(',');
  sweep->add_option("--growth-factors", growth_factors, "e.g. 4,8")->delimiter(',');
  sweep->add_option("--mixes", mixes, "e.g. SD,MD")->delimiter(',');
  sweep->add_option("--phases", phases, "e.g. load-a,run-a")->delimiter(',');

  auto* fsck = app.add_subcommand("fsck", "check the structure of a store file");
  fsck->add_option("--device", o.device, "store file")->required();
  auto* stats = app.add_subcommand("stats", "print the stats snapshot of a store file");
  stats->add_option("--device", o.device, "store file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kFlagged;
  }

  try {
    if (model->parsed()) {
      return run_model(mo);
    }
    if (load->parsed()) {
      const Phase p = parse_phase(load_phase);
      if (!is_load(p)) {
        throw Error(ErrorCode::kInvalidArgument, "load takes load-a or load-e");
      }
      return run_one(o, p);
    }
    if (run->parsed()) {
      const Phase p = parse_phase(run_phase);
      if (is_load(p)) {
        throw Error(ErrorCode::kInvalidArgument, "use the load verb for load phases");
      }
      return run_one(o, p);
    }
    if (sweep->parsed()) {
      SweepGrid g;
      for (const auto& s : policies) {
        g.policies.push_back(parse_policy(s));
      }
      for (const auto& s : merge_levels) {
        g.merge_levels.push_back(parse_merge_level(s));
      }
      for (const auto& s : sorted) {
        if (s != "on" && s != "off") {
          throw Error(ErrorCode::kInvalidArgument, "--sorted takes on/off");
        }
        g.sorted_l0.push_back(s == "on");
      }
      g.growth_factors = growth_factors;
      for (const auto& s : mixes) {
        g.mixes.push_back(SizeMix::parse(s));
      }
      for (const auto& s : phases) {
        g.phases.push_back(parse_phase(s));
      }
      if (!o.device.empty()) {
        throw Error(ErrorCode::kInvalidArgument, "sweep runs every cell in memory");
      }
      Output out{o.out};
      const size_t failed = run_sweep(g.expand(bench_config(o, parse_phase(run_phase))), out.stream());
      if (failed) {
        std::cerr << "hkv: " << failed << " sweep cell(s) failed\n";
        return kFlagged;
      }
      return 0;
    }
    if (fsck->parsed()) {
      auto store = open_existing(o);
      const FsckReport rep = store->fsck();
      std::cout << "levels=" << rep.levels_checked << " leaves=" << rep.leaves_checked
                << " entries=" << rep.entries_checked << " problems=" << rep.problems.size() << "\n";
      for (const auto& p : rep.problems) {
        std::cout << "problem: " << p << "\n";
      }
      return rep.ok() ? 0 : kFlagged;
    }
    if (stats->parsed()) {
      auto store = open_existing(o);
      std::cout << store->stats().to_text();
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "hkv: " << e.what() << "\n";
    return kFlagged;
  }
  return 0;
}
