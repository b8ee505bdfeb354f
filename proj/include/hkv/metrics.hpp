#pragma once

#include <hkv/types.hpp>

#include <array>
#include <chrono>
#include <mutex>
#include <optional>
#include <string>

namespace hkv {

// Each device transfer is charged to exactly one class.
enum class TrafficClass : u8 {
  kCompactionRead,
  kCompactionWrite,
  kLogAppend,
  kGcRead,
  kGcWrite,
  kLookupRead,
  kRecoveryRead,
  kMetadataWrite,  // catalog copies and redo records
};
constexpr size_t kTrafficClassCount = 8;

std::string_view to_string(TrafficClass c) noexcept;
bool is_read(TrafficClass c) noexcept;

enum class OpVerb : u8 {
  kPut,
  kDelete,
  kGet,
  kScan,
};
constexpr size_t kOpVerbCount = 4;

// Informational counters; they do not add to device totals.
enum class Stat : u8 {
  kMediumMergeReadBytes,  // medium-log bytes fetched while merging in place
  kGetLogReads,           // log entries dereferenced by point lookups
  kScanLogReads,          // log entries dereferenced by scans
  kCompactions,
  kTrivialMoves,
  kGcRelocations,
  kGcReclaimedSegments,
  kGcBytesInvalidated,
  kCheckpoints,
};
constexpr size_t kStatCount = 9;

std::string_view to_string(Stat s) noexcept;

struct TrafficSnapshot {
  std::array<u64, kTrafficClassCount> device{};
  u64 app_bytes_in = 0;
  u64 app_bytes_out = 0;
  std::array<u64, kOpVerbCount> ops{};
  std::array<u64, kStatCount> stats{};
  double wall_seconds = 0;
  double cpu_seconds = 0;

  u64 bytes(TrafficClass c) const noexcept
  {
    return device[static_cast<size_t>(c)];
  }
  u64 stat(Stat s) const noexcept
  {
    return stats[static_cast<size_t>(s)];
  }
  u64 op_count(OpVerb v) const noexcept
  {
    return ops[static_cast<size_t>(v)];
  }
  u64 device_read() const noexcept;
  u64 device_write() const noexcept;
  u64 device_total() const noexcept
  {
    return device_read() + device_write();
  }
  u64 total_ops() const noexcept;
  u64 app_bytes() const noexcept
  {
    return app_bytes_in + app_bytes_out;
  }
};

// Counter-wise difference (later minus earlier); time fields are subtracted too.
TrafficSnapshot operator-(const TrafficSnapshot& later, const TrafficSnapshot& earlier);

// Device read+write bytes over application bytes; empty when nothing was asked
// of the store.
std::optional<double> amplification(const TrafficSnapshot& s);
std::optional<double> write_amplification(const TrafficSnapshot& s);
// Process CPU time scaled by a nominal clock, per operation.
std::optional<double> cpu_per_op(const TrafficSnapshot& s, double nominal_hz = 3.0e9);

// Flat key=value lines, one counter per line.
std::string to_text(const TrafficSnapshot& s);

double process_cpu_seconds();

class Metrics
{
 public:
  Metrics();

  void add(TrafficClass c, u64 bytes);
  void add_app_in(u64 bytes);
  void add_app_out(u64 bytes);
  void count(OpVerb v, u64 n = 1);
  void note(Stat s, u64 n = 1);

  TrafficSnapshot snapshot() const;

 private:
  mutable std::mutex mu_;
  TrafficSnapshot s_;
  std::chrono::steady_clock::time_point start_;
  double cpu_start_;
};

}  // namespace hkv
