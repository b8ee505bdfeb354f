#pragma once

// Durable metadata: two alternating catalog copies plus a redo area, both in
// the reserved segments at the front of the device.
//
// Catalog copy:
//   [8 "PLAXDESK"][u32 version][u64 epoch][u64 segment_length][u32 segments]
//   [u32 catalog_segments][u32 redo_segments][u64 body_len][body][u64 crc64]
// The body holds the committed state, the generation of every segment and the
// allocation bitmap. Copy A is written for odd epochs, copy B for even ones.
//
// Redo record:
//   [u32 total_len][u64 epoch][u64 seq][u8 kind][payload][u64 crc64]
// Records of the current epoch are appended with consecutive seq numbers and
// synced one by one. Replay stops at the first record that fails any check.
// A checkpoint writes the next catalog copy and restarts the redo area.

#include <hkv/level_index.hpp>
#include <hkv/storage_layout.hpp>
#include <hkv/value_log.hpp>

#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace hkv {

struct RegionState {
  u16 id = 0;
  std::string name;
  std::string lo;  // inclusive
  std::string hi;  // exclusive, empty for unbounded
  Lsn watermark = 0;  // every op up to here lives in the levels
  LogCursor small_from;  // replay start; invalid means the start of the chain
  LogCursor large_from;
  std::vector<SegRef> small_chain;
  std::vector<SegRef> large_chain;
  std::vector<LevelDescriptor> levels;  // levels[0] is L1

  bool operator==(const RegionState&) const = default;
};

enum class RedoKind : u8 {
  kRegionCreate = 1,
  kLogExtend = 2,
  kLogTruncate = 3,
  kCompaction = 4,
  kGcReclaim = 5,
};

std::string_view to_string(RedoKind k) noexcept;

struct RedoRecord {
  RedoKind kind = RedoKind::kCompaction;
  u16 region = 0;

  // kRegionCreate
  std::string name, lo, hi;

  // kLogExtend / kLogTruncate; kGcReclaim uses seg only
  LogId log = LogId::kSmall;
  SegRef seg;  // extend: the new segment; truncate: last kept (id 0 keeps none)

  // kCompaction
  u32 level_count = 0;  // on-device levels after the change
  std::vector<std::pair<u32, LevelDescriptor>> levels;  // index into levels[]
  bool from_l0 = false;
  Lsn watermark = 0;
  LogCursor small_from, large_from;

  // Informational, for fsck and statistics.
  std::vector<SegRef> allocated;
  std::vector<SegRef> freed;

  void encode(ByteWriter& w) const;
  static RedoRecord decode(ByteReader& r, RedoKind kind);
  // Every segment reference the record mentions.
  std::vector<SegRef> segment_refs() const;
};

struct CommittedState {
  std::vector<RegionState> regions;

  RegionState* region(u16 id);
  const RegionState* region(u16 id) const;
  void apply(const RedoRecord& r);
  // Segments reachable from the state, with their owners.
  std::vector<std::pair<SegRef, Owner>> owned() const;

  void encode(ByteWriter& w) const;
  static CommittedState decode(ByteReader& r);
  bool operator==(const CommittedState&) const = default;
};

inline Owner level_owner(u16 region, u32 level_index)
{
  return Owner::level_of(region, static_cast<u8>(level_index + 1));
}

struct LoadedMeta {
  CommittedState state;
  std::vector<u32> generations;
  u64 epoch = 0;
  int copy = 0;
  u64 redo_records = 0;
};

class MetaStore
{
 public:
  MetaStore(Storage& storage, Metrics& metrics);

  // Reads the device header to find the geometry a store was created with.
  static std::optional<Geometry> probe(Device& device);

  // Fresh store: writes catalog epoch 1 with `state`.
  void format(CommittedState state);
  // Loads the newest valid catalog and replays redo on top of it.
  LoadedMeta load();
  // Adopts loaded state so later commits continue from it.
  void adopt(const LoadedMeta& m);

  // Applies the record to the committed state and makes it durable, then
  // lets freed segments be reused.
  void commit(const RedoRecord& r);
  void checkpoint();

  CommittedState state() const;
  u64 epoch() const;
  u64 redo_bytes() const;
  u64 checkpoints() const;

  // Test hook: called after a record is durable and before pending frees are
  // released.
  std::function<void()> after_commit_hook;

 private:
  void write_catalog_locked();
  void append_locked(const std::vector<u8>& rec);

  Storage& storage_;
  Metrics& metrics_;
  mutable std::mutex mu_;
  CommittedState state_;
  u64 epoch_ = 0;
  u64 seq_ = 0;
  u64 redo_pos_ = 0;
  u64 checkpoints_ = 0;
};

}  // namespace hkv
