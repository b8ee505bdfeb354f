#pragma once

// On-device levels. A level is written once, by a single bulk build, into
// segments it owns:
//
//   [leaf][leaf]...[leaf][index node]...[root]
//
// Leaves are 8 KiB and packed from the start of each segment. Index nodes are
// 12 KiB and follow the last leaf; a node that would straddle a segment end
// starts in a fresh segment instead. Index node layout:
//
//   [u8 magic][u8 height][u16 children][u32 used]
//   [u64 child0] { [u16 key_len][pivot key][u64 child] } * (children - 1)
//
// height 0 means the children are leaves. Pivots are full keys. At open the
// whole index is read once and kept in memory as a flat leaf directory, so a
// lookup costs one leaf read plus whatever log reads the leaf search needs.

#include <hkv/codec.hpp>
#include <hkv/leaf.hpp>
#include <hkv/metrics.hpp>
#include <hkv/storage_layout.hpp>

#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace hkv {

// A medium-log segment whose entries are referenced by a level.
struct AttachedSegment {
  SegRef seg;
  u32 used = 0;  // bytes of entries in the segment

  bool operator==(const AttachedSegment&) const = default;
};

struct LevelCounts {
  u64 entries = 0;
  u64 tombstones = 0;
  u64 small = 0;
  u64 medium_in_place = 0;
  u64 large_in_place = 0;
  u64 medium_refs = 0;
  u64 large_refs = 0;
  u64 stored_bytes = 0;
  u64 resolved_bytes = 0;

  void add(const IndexEntry& e);
  bool operator==(const LevelCounts&) const = default;
};

struct LevelDescriptor {
  std::vector<SegRef> segments;
  std::vector<AttachedSegment> medium;
  u64 root = 0;  // 0 for an empty level
  u8 height = 0;
  u32 leaves = 0;
  u32 nodes = 0;
  LevelCounts counts;

  bool empty() const noexcept
  {
    return counts.entries == 0;
  }
  void encode(ByteWriter& w) const;
  static LevelDescriptor decode(ByteReader& r);
  bool operator==(const LevelDescriptor&) const = default;
};

class Level
{
 public:
  // Reads the index of a persisted level.
  static std::shared_ptr<const Level> open(Storage& storage,
                                           LevelDescriptor desc,
                                           TrafficClass cls = TrafficClass::kRecoveryRead);

  Level(Storage& storage, LevelDescriptor desc, std::vector<std::string> pivots,
        std::vector<u64> leaves);

  const LevelDescriptor& descriptor() const noexcept
  {
    return desc_;
  }
  Storage& storage() const noexcept
  {
    return storage_;
  }
  u32 leaf_count() const noexcept
  {
    return static_cast<u32>(leaf_offsets_.size());
  }
  u64 leaf_offset(u32 i) const
  {
    return leaf_offsets_.at(i);
  }
  // Index of the leaf that would hold `key`.
  u32 leaf_for(std::string_view key) const;
  Leaf read_leaf(u32 i, TrafficClass cls) const;

  // Same leaves and index under a different descriptor (used when medium
  // segments are attached or a level is relabeled).
  std::shared_ptr<const Level> with_descriptor(LevelDescriptor desc) const
  {
    return std::make_shared<Level>(storage_, std::move(desc), pivots_, leaf_offsets_);
  }

  // Point lookup. A log reference comes back with its key filled in.
  std::optional<IndexEntry> find(std::string_view key, const KeyResolver& resolve,
                                 TrafficClass cls = TrafficClass::kLookupRead) const;

 private:
  Storage& storage_;
  LevelDescriptor desc_;
  std::vector<std::string> pivots_;  // pivots_[0] is empty
  std::vector<u64> leaf_offsets_;
};

// Ordered walk over one level. The reader either fetches leaf by leaf or,
// for compactions, all leaves of a segment in a single read.
class LevelCursor
{
 public:
  enum class Granularity {
    kLeaf,
    kSegment,
  };

  LevelCursor(std::shared_ptr<const Level> level, TrafficClass cls,
              Granularity g = Granularity::kLeaf);

  void seek_first();
  // First entry with key >= start.
  void seek(std::string_view start, const KeyResolver& resolve);

  bool valid() const noexcept
  {
    return valid_;
  }
  // Log references have key_known == false until the caller resolves them.
  IndexEntry& entry()
  {
    return current_;
  }
  void next();

 private:
  void load_leaf(u32 i);
  void settle();

  std::shared_ptr<const Level> level_;
  TrafficClass cls_;
  Granularity granularity_;
  u32 leaf_ = 0;
  u32 slot_ = 0;
  std::optional<Leaf> loaded_;
  // Segment-granular buffer: leaves [buffer_first_, buffer_first_ + n).
  std::vector<u8> buffer_;
  u32 buffer_first_ = 0;
  u32 buffer_count_ = 0;
  bool valid_ = false;
  IndexEntry current_;
};

// Bottom-up construction from strictly ascending input.
class LevelBuilder
{
 public:
  // `resolve` supplies full keys of log references whose key is not known;
  // it is used for ordering ties and for pivots.
  LevelBuilder(Storage& storage, Owner owner, KeyResolver resolve,
               TrafficClass cls = TrafficClass::kCompactionWrite);
  ~LevelBuilder();
  LevelBuilder(const LevelBuilder&) = delete;
  LevelBuilder& operator=(const LevelBuilder&) = delete;

  // Throws kInvariantViolation unless the key is greater than the last one.
  void add(IndexEntry e);
  u64 entries() const noexcept
  {
    return counts_.entries;
  }
  // Writes the rest of the level (not synced) and returns it. The caller
  // attaches medium segments to the descriptor as needed.
  std::shared_ptr<const Level> finish();
  // Frees every segment allocated so far. Also done by the destructor when
  // finish() was never reached.
  void abort();

 private:
  u64 place(u64 size);
  void flush_pending();
  void seal_leaf();

  Storage& storage_;
  Owner owner_;
  KeyResolver resolve_;
  TrafficClass cls_;

  std::vector<SegRef> segments_;
  u64 seg_cursor_ = 0;  // offset inside segments_.back()
  std::vector<u8> pending_;
  u64 pending_at_ = 0;

  Leaf leaf_;
  std::string leaf_first_;
  std::vector<std::string> pivots_;
  std::vector<u64> leaves_;

  bool have_last_ = false;
  IndexEntry last_;
  LevelCounts counts_;
  bool done_ = false;
};

// Full key of an entry: its own key, or the resolver's answer.
std::string full_key(const IndexEntry& e, const KeyResolver& resolve);

// Orders entries by key using prefixes first; calls `resolve` (and caches the
// key in the entry) only when the prefixes tie.
int compare_entries(IndexEntry& a, IndexEntry& b, const KeyResolver& resolve);

}  // namespace hkv
