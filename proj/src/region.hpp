#pragma once

// Runtime state of one region. Internal to the library.

#include <hkv/engine.hpp>

#include <condition_variable>
#include <map>
#include <optional>
#include <shared_mutex>
#include <unordered_map>

namespace hkv {

struct L0Entry {
  Lsn lsn = 0;
  SlotCode code = SlotCode::kSmallInPlace;
  std::string value;  // in-place value
  LogAddress ref{};   // large-log location

  // Bytes the entry adds to L0, measured like IndexEntry::resolved_bytes().
  u64 charge(size_t key_len) const noexcept
  {
    if (code == SlotCode::kLargeLogRef) {
      return kLogRefRecordSize;
    }
    return key_len + value.size();
  }
};

struct MemTable {
  std::map<std::string, L0Entry, std::less<>> map;
  u64 bytes = 0;
  Lsn max_lsn = 0;
  // Set when the table is frozen: where replay has to start once this table
  // is compacted.
  LogCursor small_from;
  LogCursor large_from;
  // Large-log versions overwritten while they were still in this table.
  std::vector<LogAddress> invalidated;
};

struct Region {
  u16 id = 0;
  std::string name;
  std::string lo;
  std::string hi;

  mutable std::shared_mutex mu;
  std::condition_variable_any cv;  // writers stalled on a frozen L0
  std::shared_ptr<MemTable> active = std::make_shared<MemTable>();
  std::shared_ptr<MemTable> frozen;
  std::vector<std::shared_ptr<const Level>> levels;  // levels[0] is L1
  std::unique_ptr<ValueLog> small;
  std::unique_ptr<ValueLog> medium;
  std::unique_ptr<ValueLog> large;
  Lsn next_lsn = 1;
  Lsn watermark = 0;
  LogCursor small_from;
  LogCursor large_from;

  bool contains(std::string_view key) const noexcept
  {
    return key >= lo && (hi.empty() || key < hi);
  }
  ValueLog& log(LogId id) const
  {
    switch (id) {
      case LogId::kSmall:
        return *small;
      case LogId::kMedium:
        return *medium;
      case LogId::kLarge:
        return *large;
    }
    return *small;
  }
};

// Reads log entries behind index references for one operation. Entries are
// cached by address so resolving a key and later the value costs one read.
struct RefReader {
  Store& store;
  Region& region;
  TrafficClass cls;
  std::optional<Stat> stat;  // counted once per device read
  std::unordered_map<u64, LogEntry> cache;

  const LogEntry& entry(const LogAddress& addr);
  std::string key(const IndexEntry& e);
  KeyResolver resolver()
  {
    return [this](const IndexEntry& e) { return key(e); };
  }
};

void apply_to_l0(MemTable& t, const std::string& key, L0Entry e);

// GC-region keys. Counters: the 8-byte big-endian start offset of a large-log
// segment. Reclaimed-entry keys: 0xFF, the entry's 8-byte offset and its 4-byte
// generation; all of them sort after every counter.
std::string gc_key(u64 segment_offset);
std::string reclaimed_entry_key(const LogAddress& addr);
constexpr char kReclaimedKeyTag = '\xFF';

}  // namespace hkv
