#pragma once

// Append-only per-region logs. Entry wire format (little-endian):
//
//   [u32 total_len][u64 lsn][u8 op | category << 4][u16 key_len][key][value][u32 crc]
//
// The CRC covers everything before it and is salted with (region, log, segment
// generation), so bytes left behind by a previous owner of a segment never
// decode. A u32 0xFFFFFFFF in the length position marks the end of a segment's
// data; the reader continues at the next segment of the chain.

#include <hkv/metrics.hpp>
#include <hkv/storage_layout.hpp>
#include <hkv/types.hpp>

#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hkv {

enum class LogId : u8 {
  kSmall = 0,
  kMedium = 1,
  kLarge = 2,
};

std::string_view to_string(LogId id) noexcept;
OwnerKind owner_kind(LogId id) noexcept;

enum class OpKind : u8 {
  kInsert = 0,
  kUpdate = 1,
  kDelete = 2,
};

struct LogEntry {
  Lsn lsn = 0;
  OpKind op = OpKind::kInsert;
  KvCategory category = KvCategory::kSmall;
  std::string key;
  std::string value;

  bool operator==(const LogEntry&) const = default;
};

constexpr u32 kLogHeaderSize = 15;
constexpr u32 kLogTrailerSize = 4;
constexpr u32 kEndOfSegment = 0xFFFF'FFFFu;

inline u32 encoded_size(size_t key_len, size_t value_len) noexcept
{
  return static_cast<u32>(kLogHeaderSize + key_len + value_len + kLogTrailerSize);
}

struct LogAddress {
  LogId log = LogId::kSmall;
  u64 offset = 0;  // absolute device offset of the entry
  u32 length = 0;  // encoded entry length
  u32 generation = 0;

  bool operator==(const LogAddress&) const = default;
};

u32 entry_salt(u16 region, LogId log, u32 generation) noexcept;
void encode_entry(const LogEntry& e, u32 salt, std::vector<u8>& out);

enum class DecodeStatus {
  kOk,
  kEndOfSegment,  // EOS marker, zero length, or not enough room for a header
  kInvalid,       // torn or foreign bytes
};

// Decodes the entry starting at `bytes[0]`; `length` receives its size.
DecodeStatus decode_entry(std::span<const u8> bytes, u32 salt, LogEntry* out, u32* length);

// Position inside a log's segment chain. Segment 0 always belongs to the
// catalog, so it doubles as "nowhere".
struct LogCursor {
  SegmentId segment = 0;
  u32 offset = 0;

  bool valid() const noexcept
  {
    return segment != 0;
  }
  bool operator==(const LogCursor&) const = default;
};

struct IterateResult {
  LogCursor end;      // just past the last valid entry
  bool torn = false;  // stopped at an undecodable record
  u64 entries = 0;
};

class ValueLog
{
 public:
  // Invoked (and expected to be durable on return) before the first byte is
  // written into a newly allocated segment.
  using ExtendHook = std::function<void(SegRef)>;
  using Visitor = std::function<void(const LogAddress&, const LogEntry&)>;

  ValueLog(Storage& storage, Metrics& metrics, u16 region, LogId id, ExtendHook hook = {});

  u16 region() const noexcept
  {
    return region_;
  }
  LogId id() const noexcept
  {
    return id_;
  }

  // Adopt an existing chain; new appends start in a fresh segment.
  void restore(std::vector<SegRef> chain);

  LogAddress append(const LogEntry& e, TrafficClass cls = TrafficClass::kLogAppend);
  // Writes everything buffered and syncs. Returns the highest durable LSN.
  Lsn flush(TrafficClass cls = TrafficClass::kLogAppend);
  // Writes buffered bytes without syncing.
  void write_out(TrafficClass cls = TrafficClass::kLogAppend);

  Lsn last_lsn() const;
  Lsn durable_lsn() const;
  u64 buffered_bytes() const;

  LogEntry read_entry(const LogAddress& addr, TrafficClass cls) const;
  // Reads only enough of the entry to return its key; no checksum check.
  std::string read_key(const LogAddress& addr, TrafficClass cls) const;
  // True while the address still resolves (segment owned by this log under
  // the same generation, or inside the unflushed tail).
  bool resolvable(const LogAddress& addr) const;

  // Device-only walk of the chain starting at `from`.
  IterateResult iterate(LogCursor from, const Visitor& fn, TrafficClass cls) const;
  IterateResult iterate_segment(SegRef seg, const Visitor& fn, TrafficClass cls) const;

  // Where the next append lands. Invalid before the first append.
  LogCursor tail() const;
  // Like tail(), but opens a segment first if none accepts appends, so the
  // cursor is always valid.
  LogCursor open_tail(TrafficClass cls = TrafficClass::kLogAppend);
  // The next append opens a new segment.
  void start_new_segment();

  std::vector<SegRef> chain() const;
  // Bytes written into each chain segment by this process (0 for restored
  // segments).
  std::vector<u32> used_bytes() const;
  SegRef current_segment() const;
  void remove_segment(SegmentId id);     // caller frees it
  std::vector<SegRef> take_chain();      // hands the chain off, log restarts empty
  // Writes an end-of-segment marker at `at` and forgets every chain segment
  // after `at.segment`, which the caller frees.
  std::vector<SegRef> seal(LogCursor at);

 private:
  void switch_segment(TrafficClass cls);
  void write_chunks(bool all, TrafficClass cls);
  OwnerKind kind() const noexcept
  {
    return owner_kind(id_);
  }
  void read_range(u64 offset, std::span<u8> out, TrafficClass cls) const;

  Storage& storage_;
  Metrics& metrics_;
  u16 region_;
  LogId id_;
  ExtendHook hook_;
  u64 chunk_;

  mutable std::mutex mu_;
  std::vector<SegRef> chain_;
  std::vector<u32> used_;
  bool open_segment_ = false;  // chain_.back() accepts appends
  u32 cursor_ = 0;             // next append offset in chain_.back()
  u32 buf_base_ = 0;           // segment offset of buf_[0]
  u32 flushed_ = 0;            // bytes of the current segment already on device
  std::vector<u8> buf_;
  Lsn last_lsn_ = 0;
  Lsn written_lsn_ = 0;
  Lsn durable_lsn_ = 0;
};

}  // namespace hkv
