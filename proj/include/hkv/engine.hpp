#pragma once

// The store: regions with an in-memory L0 and on-device levels L1..LN, three
// logs per region, leveled compaction, the GC region and its reclamation
// worker, and recovery at open.

#include <hkv/amp_model.hpp>
#include <hkv/catalog.hpp>
#include <hkv/device.hpp>
#include <hkv/level_index.hpp>
#include <hkv/metrics.hpp>
#include <hkv/storage_layout.hpp>
#include <hkv/value_log.hpp>

#include <atomic>
#include <condition_variable>
#include <deque>
#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

namespace hkv {

enum class MergeLevel : u8 {
  kNMinus1,  // mediums go in place when merged into the last level
  kNMinus2,  // ... into the level above the last one
};

std::string_view to_string(MergeLevel m) noexcept;
MergeLevel parse_merge_level(std::string_view s);

struct EngineConfig {
  u32 growth_factor = 8;
  u64 l0_capacity = 8 * kMiB;
  MergeLevel medium_merge_level = MergeLevel::kNMinus1;
  bool sorted_l0_segments = true;
  PlacementPolicy policy = PlacementPolicy::kHybrid;
  std::optional<CategoryThresholds> thresholds;  // overrides the policy
  ClassifyMode classify_mode = ClassifyMode::kTotalSize;
  u64 segment_length = kDefaultSegmentLength;  // used when creating a store
  double gc_threshold = 0.10;
  bool gc_after_compaction = true;
  // Run compactions and GC inline on the calling thread instead of on the
  // background worker. Makes traffic counters exactly reproducible.
  bool deterministic = false;

  void validate() const;
  CategoryThresholds effective_thresholds() const;
};

constexpr u16 kGcRegionId = 0;
constexpr u64 kGcRegionL0Cap = 256 * kKiB;

struct KeyValue {
  std::string key;
  std::string value;

  bool operator==(const KeyValue&) const = default;
};

struct LevelStats {
  u32 level = 0;
  u64 segments = 0;
  u64 medium_segments = 0;
  u64 medium_bytes = 0;
  LevelCounts counts;
};

struct RegionStats {
  u16 id = 0;
  std::string name;
  u64 l0_entries = 0;
  u64 l0_bytes = 0;
  bool l0_frozen = false;
  Lsn next_lsn = 0;
  Lsn watermark = 0;
  u64 small_log_segments = 0;
  u64 large_log_segments = 0;
  std::vector<LevelStats> levels;
};

struct GcSegmentStats {
  SegmentId segment = 0;
  u64 invalid_bytes = 0;
  double invalid_fraction = 0;
};

struct StoreStats {
  TrafficSnapshot traffic;
  u64 segment_length = 0;
  u32 owned_segments = 0;
  u32 free_segments = 0;
  u64 medium_log_bytes = 0;       // bytes in medium segments attached to levels
  u64 peak_medium_log_bytes = 0;  // high-water mark of the above
  u64 large_log_bytes = 0;        // segments owned by user-region large logs
  u64 checkpoints = 0;
  std::vector<RegionStats> regions;
  std::vector<GcSegmentStats> gc_segments;

  std::string to_text() const;
};

struct FsckReport {
  std::vector<std::string> problems;
  u64 levels_checked = 0;
  u64 leaves_checked = 0;
  u64 entries_checked = 0;

  bool ok() const noexcept
  {
    return problems.empty();
  }
};

struct Region;
struct MemTable;

class Store
{
 public:
  // Formats `device` and returns an open store with only the GC region.
  static std::unique_ptr<Store> create(std::shared_ptr<Device> device, EngineConfig config);
  // Recovers a store from `device`.
  static std::unique_ptr<Store> open(std::shared_ptr<Device> device, EngineConfig config);

  ~Store();
  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  // Waits for background work, flushes the logs and writes a checkpoint.
  void close();

  u16 create_region(const std::string& name, const std::string& lo = {}, const std::string& hi = {});
  std::optional<u16> find_region(std::string_view name) const;
  // The user region whose key range holds `key`.
  u16 region_for(std::string_view key) const;
  std::vector<u16> region_ids() const;

  void put(std::string_view key, std::string_view value);
  void del(std::string_view key);
  std::optional<std::string> get(std::string_view key);
  std::vector<KeyValue> scan(std::string_view start, size_t count);

  void put(u16 region, std::string_view key, std::string_view value);
  void del(u16 region, std::string_view key);
  std::optional<std::string> get(u16 region, std::string_view key);
  std::vector<KeyValue> scan(u16 region, std::string_view start, size_t count);

  // Makes every acknowledged op durable. Returns the highest durable LSN of
  // each user region summed (informational).
  void flush();
  // Test hook: pushes everything down to the last level of every region.
  void compact_all();
  // Blocks until no compaction or GC work is queued.
  void wait_idle();
  // Runs GC until no segment is above the threshold. Returns segments freed.
  u64 gc_tick(std::optional<double> threshold = std::nullopt);
  // Adds `bytes` to the invalid-byte counter of a large-log segment.
  void record_invalidation(SegRef segment, u64 bytes);
  void checkpoint();

  StoreStats stats();
  // Owned data-segment bytes over live key+value bytes (full scan).
  double space_amplification();
  FsckReport fsck();

  Metrics& metrics() noexcept
  {
    return metrics_;
  }
  Storage& storage() noexcept
  {
    return *storage_;
  }
  MetaStore& meta() noexcept
  {
    return *meta_;
  }
  const EngineConfig& config() const noexcept
  {
    return config_;
  }

 private:
  friend struct RefReader;

  Store(std::shared_ptr<Device> device, EngineConfig config, Geometry geo);

  // engine.cpp
  Region& region(u16 id) const;
  Region& user_region(u16 id) const;
  Region& add_region_runtime(const RegionState& s);
  std::shared_ptr<const Level> empty_level() const;
  u64 l0_capacity(const Region& r) const;
  u64 level_capacity(const Region& r, u32 level) const;
  KvCategory category_for(const Region& r, size_t key_len, size_t value_len) const;
  void put_internal(Region& r, std::string_view key, std::string_view value, bool tombstone);
  // Caller holds the region lock exclusively.
  void put_locked(Region& r, std::string_view key, std::string_view value, bool tombstone,
                  KvCategory category, TrafficClass cls);
  void freeze_locked(Region& r);
  void schedule(u16 region);
  void after_foreground_op();
  void run_pending();
  void worker_loop();
  void run_region(Region& r);
  bool compact_step(Region& r, std::vector<LogAddress>& invalidated);
  void merge_into(Region& r, u32 src, std::vector<LogAddress>& invalidated);
  void apply_invalidations(const std::vector<LogAddress>& invalid);
  void update_medium_footprint();
  void rethrow_background_error();
  void start_worker();
  void stop_worker();

  struct Lookup {
    bool found = false;
    bool tombstone = false;
    SlotCode code = SlotCode::kSmallInPlace;
    std::string value;  // in-place value, or the fetched log value
    LogAddress ref{};
  };
  // Caller holds the region lock (shared or exclusive).
  Lookup lookup_locked(Region& r, std::string_view key, TrafficClass cls, bool fetch_value);
  std::vector<KeyValue> scan_locked(Region& r, std::string_view start, size_t count,
                                    TrafficClass cls, bool foreground);

  // garbage_collector.cpp
  u64 gc_pass(double threshold);
  bool reclaim_segment(u16 region, SegRef seg);
  // (segment, invalid bytes) for every counter in the GC region.
  std::vector<std::pair<SegmentId, u64>> gc_counters();
  // Full key of a large-log entry whose segment was already reclaimed.
  std::string reclaimed_key(const LogAddress& addr, TrafficClass cls);
  // True when some L0 table or level of `r` still holds a reference to `addr`.
  // `newest` says whether it is the visible version of `key`.
  bool referenced_locked(Region& r, const std::string& key, const LogAddress& addr, bool* newest);

  // recovery.cpp
  void recover();
  void replay_region(Region& r);

  std::shared_ptr<Device> device_;
  EngineConfig config_;
  CategoryThresholds thresholds_;
  Metrics metrics_;
  std::unique_ptr<Storage> storage_;
  std::unique_ptr<MetaStore> meta_;

  mutable std::mutex regions_mu_;
  std::vector<std::unique_ptr<Region>> regions_;  // indexed by id

  // Maintenance: one runner for the whole store.
  std::mutex queue_mu_;
  std::condition_variable queue_cv_;
  std::deque<u16> queue_;
  std::set<u16> queued_;
  bool busy_ = false;
  bool stop_ = false;
  std::exception_ptr background_error_;
  std::atomic<bool> failed_{false};
  std::thread worker_;
  std::recursive_mutex maintenance_mu_;

  std::atomic<u64> medium_bytes_{0};
  std::atomic<u64> peak_medium_bytes_{0};
  bool closed_ = false;
};

}  // namespace hkv
