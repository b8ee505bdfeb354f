#include <hkv/bench.hpp>

#include <chrono>
#include <cstdio>
#include <ostream>
#include <sstream>
#include <thread>

namespace hkv {

namespace {

u64 pair_bytes(const WorkloadSpec& w, u32 small, u32 medium, u32 large)
{
  return (small * (w.key_size + w.small_value) + medium * (w.key_size + w.medium_value) +
          large * (w.key_size + w.large_value)) /
         100;
}

u64 device_size_for(const BenchConfig& c)
{
  if (c.device_bytes) {
    return c.device_bytes;
  }
  const WorkloadSpec& w = c.workload;
  // Room for the dataset a few times over: old and new levels coexist during
  // a merge, plus the logs and the GC slack.
  const u64 avg = std::max(pair_bytes(w, w.mix.small, w.mix.medium, w.mix.large),
                           pair_bytes(w, 100, 0, 0));
  const u64 keys = w.keys + (is_load(c.phase) ? 0 : w.run_ops(c.phase));
  const u64 seg = c.engine.segment_length;
  const u64 want = keys * avg * 5 + 16 * c.engine.l0_capacity * c.regions + 256 * seg + 32 * kMiB;
  return (want + seg - 1) / seg * seg;
}

std::string fmt(std::optional<double> v)
{
  if (!v) {
    return "";
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", *v);
  return buf;
}

std::string fmt(double v)
{
  return fmt(std::optional<double>(v));
}

std::string csv_field(std::string s)
{
  if (s.find_first_of(",\"\n") == std::string::npos) {
    return s;
  }
  std::string out = "\"";
  for (char c : s) {
    out += c == '"' ? std::string("\"\"") : std::string(1, c == '\n' ? ' ' : c);
  }
  return out + "\"";
}

// Runs `w` against the store with `clients` threads, each owning the regions
// whose position is congruent to its number.
u64 drive(Store& s, const WorkloadSpec& spec, Phase phase, const std::vector<u16>& regions, u32 clients)
{
  std::atomic<u64> ops{0};
  std::exception_ptr err;
  std::mutex err_mu;
  auto client = [&](u32 me) {
    try {
      Workload w{spec, phase};
      u64 mine = 0;
      while (auto op = w.next()) {
        const u16 region = s.region_for(op->key);
        size_t pos = 0;
        while (regions[pos] != region) {
          ++pos;
        }
        if (pos % clients != me) {
          continue;
        }
        switch (op->type) {
          case OpType::kInsert:
          case OpType::kUpdate:
            s.put(region, op->key, op->value);
            break;
          case OpType::kRead:
            s.get(region, op->key);
            break;
          case OpType::kScan:
            s.scan(region, op->key, op->scan_length);
            break;
        }
        ++mine;
      }
      ops += mine;
    } catch (...) {
      std::lock_guard lock{err_mu};
      if (!err) {
        err = std::current_exception();
      }
    }
  };
  if (clients == 1) {
    client(0);
  } else {
    std::vector<std::thread> threads;
    for (u32 c = 0; c < clients; ++c) {
      threads.emplace_back(client, c);
    }
    for (auto& t : threads) {
      t.join();
    }
  }
  if (err) {
    std::rethrow_exception(err);
  }
  return ops;
}

}  // namespace

void BenchConfig::validate() const
{
  engine.validate();
  workload.validate();
  check(regions >= 1 && regions <= 16, ErrorCode::kInvalidArgument, "regions must be in [1, 16]");
  check(clients >= 1 && clients <= regions, ErrorCode::kInvalidArgument, "clients must be in [1, regions]");
}

std::string BenchConfig::canonical() const
{
  const EngineConfig& e = engine;
  const WorkloadSpec& w = workload;
  const CategoryThresholds t = e.effective_thresholds();
  std::ostringstream o;
  o << "phase=" << to_string(phase) << ";mix=" << w.mix.to_string() << ";keys=" << w.keys
    << ";ops=" << w.run_ops(phase) << ";dist=" << to_string(w.dist) << ";theta=" << w.zipf_theta
    << ";key=" << w.key_size << ";values=" << w.small_value << "/" << w.medium_value << "/"
    << w.large_value << ";scan=" << w.max_scan_length << ";seed=" << w.seed << ";f=" << e.growth_factor
    << ";l0=" << e.l0_capacity << ";merge=" << to_string(e.medium_merge_level)
    << ";sorted=" << e.sorted_l0_segments << ";policy=" << to_string(e.policy) << ";t=" << t.t_sm << "/"
    << t.t_ml << "/" << t.size_small_max << "/" << t.size_medium_max
    << ";classify=" << static_cast<int>(e.classify_mode) << ";segment=" << e.segment_length
    << ";gc=" << e.gc_threshold << "/" << e.gc_after_compaction << ";det=" << e.deterministic
    << ";regions=" << regions << ";clients=" << clients;
  return o.str();
}

std::string BenchConfig::fingerprint() const
{
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canonical())));
  return buf;
}

std::vector<std::string> region_bounds(u32 regions)
{
  std::vector<std::string> b;
  for (u32 i = 1; i < regions; ++i) {
    b.push_back(std::string("user") + "0123456789abcdef"[i * 16 / regions]);
  }
  return b;
}

BenchResult run_bench(const BenchConfig& config)
{
  BenchResult r;
  r.config = config;
  try {
    config.validate();
    std::shared_ptr<Device> dev;
    const u64 size = device_size_for(config);
    if (config.device.empty()) {
      dev = std::make_shared<MemoryDevice>(size);
    } else {
      dev = FileDevice::create(config.device, size);
    }
    auto store = Store::create(dev, config.engine);
    const auto bounds = region_bounds(config.regions);
    std::vector<u16> regions;
    for (u32 i = 0; i < config.regions; ++i) {
      regions.push_back(store->create_region("r" + std::to_string(i), i == 0 ? "" : bounds[i - 1],
                                             i + 1 == config.regions ? "" : bounds[i]));
    }
    if (!is_load(config.phase)) {
      const Phase load = config.phase == Phase::kRunE ? Phase::kLoadE : Phase::kLoadA;
      const auto before = store->metrics().snapshot();
      drive(*store, config.workload, load, regions, config.clients);
      store->wait_idle();
      r.preload = store->metrics().snapshot() - before;
    }
    const auto before = store->metrics().snapshot();
    const auto t0 = std::chrono::steady_clock::now();
    r.ops = drive(*store, config.workload, config.phase, regions, config.clients);
    store->wait_idle();
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    r.traffic = store->metrics().snapshot() - before;
    r.throughput = wall > 0 ? static_cast<double>(r.ops) / wall : 0;
    r.amplification = amplification(r.traffic);
    r.write_amplification = write_amplification(r.traffic);
    if (r.traffic.app_bytes_out) {
      r.read_amplification =
          static_cast<double>(r.traffic.device_read()) / static_cast<double>(r.traffic.app_bytes_out);
    }
    r.cpu_per_op = cpu_per_op(r.traffic);
    const StoreStats st = store->stats();
    r.peak_medium_log_bytes = st.peak_medium_log_bytes;
    r.medium_log_bytes = st.medium_log_bytes;
    r.large_log_bytes = st.large_log_bytes;
    for (const RegionStats& rs : st.regions) {
      if (rs.id != kGcRegionId) {
        r.levels = std::max<u32>(r.levels, static_cast<u32>(rs.levels.size()));
      }
    }
    if (is_load(config.phase) && r.levels > 0) {
      const u64 l = r.levels;
      const u64 f = config.engine.growth_factor;
      r.model_in_place_bytes = r.traffic.app_bytes_in * (l - 1 + f * l);
      r.model_factor =
          static_cast<double>(r.traffic.device_total()) / static_cast<double>(r.model_in_place_bytes);
    }
    if (config.compute_space_amp) {
      r.space_amplification = store->space_amplification();
    }
    store->close();
  } catch (const std::exception& e) {
    r.failed = true;
    r.error = e.what();
  }
  return r;
}

std::string csv_header()
{
  std::string h =
      "fingerprint,phase,mix,policy,keys,ops,key_dist,growth_factor,l0_capacity,merge_level,sorted_l0,"
      "gc_threshold,segment_length,regions,clients,deterministic,seed,status,error,ops_done,wall_seconds,"
      "throughput_ops,amplification,write_amplification,read_amplification,space_amplification,cpu_per_op,"
      "app_bytes_in,app_bytes_out";
  for (size_t c = 0; c < kTrafficClassCount; ++c) {
    h += ",";
    h += to_string(static_cast<TrafficClass>(c));
  }
  h += ",device_read,device_write";
  for (size_t s = 0; s < kStatCount; ++s) {
    h += ",";
    h += to_string(static_cast<Stat>(s));
  }
  h += ",preload_device_total,peak_medium_log_bytes,medium_log_bytes,large_log_bytes,levels,"
       "model_in_place_bytes,model_factor";
  return h;
}

std::string csv_row(const BenchResult& r)
{
  const BenchConfig& c = r.config;
  const EngineConfig& e = c.engine;
  const TrafficSnapshot& t = r.traffic;
  std::ostringstream o;
  o << c.fingerprint() << "," << to_string(c.phase) << "," << c.workload.mix.to_string() << ","
    << to_string(e.policy) << "," << c.workload.keys << "," << c.workload.run_ops(c.phase) << ","
    << to_string(c.workload.dist) << "," << e.growth_factor << "," << e.l0_capacity << ","
    << to_string(e.medium_merge_level) << "," << e.sorted_l0_segments << "," << fmt(e.gc_threshold) << ","
    << e.segment_length << "," << c.regions << "," << c.clients << "," << e.deterministic << ","
    << c.workload.seed << "," << (r.failed ? "failed" : "ok") << "," << csv_field(r.error) << "," << r.ops
    << "," << fmt(t.wall_seconds) << "," << fmt(r.throughput) << "," << fmt(r.amplification) << ","
    << fmt(r.write_amplification) << "," << fmt(r.read_amplification) << "," << fmt(r.space_amplification)
    << "," << fmt(r.cpu_per_op) << "," << t.app_bytes_in << "," << t.app_bytes_out;
  for (size_t i = 0; i < kTrafficClassCount; ++i) {
    o << "," << t.device[i];
  }
  o << "," << t.device_read() << "," << t.device_write();
  for (size_t i = 0; i < kStatCount; ++i) {
    o << "," << t.stats[i];
  }
  o << "," << r.preload.device_total() << "," << r.peak_medium_log_bytes << "," << r.medium_log_bytes << ","
    << r.large_log_bytes << "," << r.levels << "," << r.model_in_place_bytes << "," << fmt(r.model_factor);
  return o.str();
}

std::vector<BenchConfig> SweepGrid::expand(const BenchConfig& base) const
{
  std::vector<BenchConfig> out;
  if (policies.empty() && merge_levels.empty() && sorted_l0.empty() && growth_factors.empty() &&
      mixes.empty() && phases.empty()) {
    return out;
  }
  auto or_base = [](const auto& axis, auto v) {
    using T = decltype(v);
    return axis.empty() ? std::vector<T>{v} : std::vector<T>(axis.begin(), axis.end());
  };
  for (PlacementPolicy p : or_base(policies, base.engine.policy)) {
    for (MergeLevel m : or_base(merge_levels, base.engine.medium_merge_level)) {
      for (bool s : or_base(sorted_l0, base.engine.sorted_l0_segments)) {
        for (u32 f : or_base(growth_factors, base.engine.growth_factor)) {
          for (const SizeMix& mix : or_base(mixes, base.workload.mix)) {
            for (Phase ph : or_base(phases, base.phase)) {
              BenchConfig c = base;
              c.engine.policy = p;
              c.engine.medium_merge_level = m;
              c.engine.sorted_l0_segments = s;
              c.engine.growth_factor = f;
              c.workload.mix = mix;
              c.phase = ph;
              out.push_back(c);
            }
          }
        }
      }
    }
  }
  return out;
}

size_t run_sweep(const std::vector<BenchConfig>& cells, std::ostream& csv)
{
  csv << csv_header() << "\n";
  size_t failed = 0;
  for (const BenchConfig& c : cells) {
    const BenchResult r = run_bench(c);
    failed += r.failed;
    csv << csv_row(r) << "\n" << std::flush;
  }
  return failed;
}

}  // namespace hkv
