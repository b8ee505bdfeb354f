#include <hkv/metrics.hpp>

#include <ctime>
#include <sstream>

namespace hkv {

std::string_view to_string(TrafficClass c) noexcept
{
  switch (c) {
    case TrafficClass::kCompactionRead:
      return "compaction_read";
    case TrafficClass::kCompactionWrite:
      return "compaction_write";
    case TrafficClass::kLogAppend:
      return "log_append";
    case TrafficClass::kGcRead:
      return "gc_read";
    case TrafficClass::kGcWrite:
      return "gc_write";
    case TrafficClass::kLookupRead:
      return "lookup_read";
    case TrafficClass::kRecoveryRead:
      return "recovery_read";
    case TrafficClass::kMetadataWrite:
      return "metadata_write";
  }
  return "?";
}

bool is_read(TrafficClass c) noexcept
{
  switch (c) {
    case TrafficClass::kCompactionRead:
    case TrafficClass::kGcRead:
    case TrafficClass::kLookupRead:
    case TrafficClass::kRecoveryRead:
      return true;
    default:
      return false;
  }
}

std::string_view to_string(Stat s) noexcept
{
  switch (s) {
    case Stat::kMediumMergeReadBytes:
      return "medium_merge_read_bytes";
    case Stat::kGetLogReads:
      return "get_log_reads";
    case Stat::kScanLogReads:
      return "scan_log_reads";
    case Stat::kCompactions:
      return "compactions";
    case Stat::kTrivialMoves:
      return "trivial_moves";
    case Stat::kGcRelocations:
      return "gc_relocations";
    case Stat::kGcReclaimedSegments:
      return "gc_reclaimed_segments";
    case Stat::kGcBytesInvalidated:
      return "gc_bytes_invalidated";
    case Stat::kCheckpoints:
      return "checkpoints";
  }
  return "?";
}

u64 TrafficSnapshot::device_read() const noexcept
{
  u64 total = 0;
  for (size_t i = 0; i < kTrafficClassCount; ++i) {
    if (is_read(static_cast<TrafficClass>(i))) {
      total += device[i];
    }
  }
  return total;
}

u64 TrafficSnapshot::device_write() const noexcept
{
  u64 total = 0;
  for (size_t i = 0; i < kTrafficClassCount; ++i) {
    if (!is_read(static_cast<TrafficClass>(i))) {
      total += device[i];
    }
  }
  return total;
}

u64 TrafficSnapshot::total_ops() const noexcept
{
  u64 total = 0;
  for (u64 n : ops) {
    total += n;
  }
  return total;
}

TrafficSnapshot operator-(const TrafficSnapshot& later, const TrafficSnapshot& earlier)
{
  TrafficSnapshot d = later;
  for (size_t i = 0; i < kTrafficClassCount; ++i) {
    d.device[i] -= earlier.device[i];
  }
  for (size_t i = 0; i < kOpVerbCount; ++i) {
    d.ops[i] -= earlier.ops[i];
  }
  for (size_t i = 0; i < kStatCount; ++i) {
    d.stats[i] -= earlier.stats[i];
  }
  d.app_bytes_in -= earlier.app_bytes_in;
  d.app_bytes_out -= earlier.app_bytes_out;
  d.wall_seconds -= earlier.wall_seconds;
  d.cpu_seconds -= earlier.cpu_seconds;
  return d;
}

std::optional<double> amplification(const TrafficSnapshot& s)
{
  if (s.app_bytes() == 0) {
    return std::nullopt;
  }
  return static_cast<double>(s.device_total()) / static_cast<double>(s.app_bytes());
}

std::optional<double> write_amplification(const TrafficSnapshot& s)
{
  if (s.app_bytes_in == 0) {
    return std::nullopt;
  }
  return static_cast<double>(s.device_write()) / static_cast<double>(s.app_bytes_in);
}

std::optional<double> cpu_per_op(const TrafficSnapshot& s, double nominal_hz)
{
  if (s.total_ops() == 0) {
    return std::nullopt;
  }
  return s.cpu_seconds * nominal_hz / static_cast<double>(s.total_ops());
}

std::string to_text(const TrafficSnapshot& s)
{
  std::ostringstream out;
  for (size_t i = 0; i < kTrafficClassCount; ++i) {
    out << "device." << to_string(static_cast<TrafficClass>(i)) << '=' << s.device[i] << '\n';
  }
  out << "device.read=" << s.device_read() << '\n';
  out << "device.write=" << s.device_write() << '\n';
  out << "app.bytes_in=" << s.app_bytes_in << '\n';
  out << "app.bytes_out=" << s.app_bytes_out << '\n';
  static constexpr const char* kVerbs[] = {"put", "delete", "get", "scan"};
  for (size_t i = 0; i < kOpVerbCount; ++i) {
    out << "ops." << kVerbs[i] << '=' << s.ops[i] << '\n';
  }
  for (size_t i = 0; i < kStatCount; ++i) {
    out << "stat." << to_string(static_cast<Stat>(i)) << '=' << s.stats[i] << '\n';
  }
  out << "time.wall_seconds=" << s.wall_seconds << '\n';
  out << "time.cpu_seconds=" << s.cpu_seconds << '\n';
  if (auto a = amplification(s)) {
    out << "amplification=" << *a << '\n';
  } else {
    out << "amplification=undefined\n";
  }
  return out.str();
}

double process_cpu_seconds()
{
  timespec ts{};
  ::clock_gettime(CLOCK_PROCESS_CPUTIME_ID, &ts);
  return static_cast<double>(ts.tv_sec) + static_cast<double>(ts.tv_nsec) * 1e-9;
}

Metrics::Metrics() : start_(std::chrono::steady_clock::now()), cpu_start_(process_cpu_seconds())
{
}

void Metrics::add(TrafficClass c, u64 bytes)
{
  std::lock_guard lock{mu_};
  s_.device[static_cast<size_t>(c)] += bytes;
}

void Metrics::add_app_in(u64 bytes)
{
  std::lock_guard lock{mu_};
  s_.app_bytes_in += bytes;
}

void Metrics::add_app_out(u64 bytes)
{
  std::lock_guard lock{mu_};
  s_.app_bytes_out += bytes;
}

void Metrics::count(OpVerb v, u64 n)
{
  std::lock_guard lock{mu_};
  s_.ops[static_cast<size_t>(v)] += n;
}

void Metrics::note(Stat st, u64 n)
{
  std::lock_guard lock{mu_};
  s_.stats[static_cast<size_t>(st)] += n;
}

TrafficSnapshot Metrics::snapshot() const
{
  std::lock_guard lock{mu_};
  TrafficSnapshot out = s_;
  out.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  out.cpu_seconds = process_cpu_seconds() - cpu_start_;
  return out;
}

}  // namespace hkv
