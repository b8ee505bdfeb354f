#pragma once

// 8 KiB slotted leaf. Layout:
//
//   [16-byte header][slot array -->          <-- data area]
//
// Header: u8 magic, u8 flags, u16 slot_count, u16 data_head, u16 garbage,
// 8 reserved bytes. Each slot is a u32: the top three bits say how the record
// is stored, the low bits hold its offset inside the leaf. Records:
//
//   in place   [u16 key_len][u16 value_len][key][value]
//   tombstone  [u16 key_len][key]
//   log ref    [12-byte key prefix][u64 offset][u32 length][u32 generation]

#include <hkv/types.hpp>
#include <hkv/value_log.hpp>

#include <array>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>

namespace hkv {

enum class SlotCode : u8 {
  kSmallInPlace = 0,
  kMediumInPlace = 1,
  kLargeInPlace = 2,
  kMediumLogRef = 3,
  kLargeLogRef = 4,
  kTombstone = 5,
};

std::string_view to_string(SlotCode c) noexcept;

inline bool is_log_ref(SlotCode c) noexcept
{
  return c == SlotCode::kMediumLogRef || c == SlotCode::kLargeLogRef;
}
inline bool is_in_place(SlotCode c) noexcept
{
  return c == SlotCode::kSmallInPlace || c == SlotCode::kMediumInPlace ||
         c == SlotCode::kLargeInPlace;
}
inline LogId ref_log(SlotCode c) noexcept
{
  return c == SlotCode::kMediumLogRef ? LogId::kMedium : LogId::kLarge;
}
SlotCode in_place_code(KvCategory c) noexcept;
KvCategory category_of(SlotCode c) noexcept;

using Prefix = std::array<u8, kPrefixSize>;

// First kPrefixSize bytes of the key, zero padded.
Prefix make_prefix(std::string_view key) noexcept;

constexpr u32 kLeafHeaderSize = 16;
constexpr u32 kSlotSize = 4;
constexpr u32 kLogRefRecordSize = kPrefixSize + 16;
// Total key+value bytes above which a pair is never stored inside a leaf.
constexpr u32 kMaxInPlacePair = 4000;

// One key's representation inside an index level. For log references read
// back from a leaf only the prefix is known until the key is resolved.
struct IndexEntry {
  SlotCode code = SlotCode::kSmallInPlace;
  Prefix prefix{};
  std::string key;
  bool key_known = true;
  std::string value;
  LogAddress ref{};

  static IndexEntry in_place(KvCategory c, std::string key, std::string value);
  static IndexEntry log_ref(LogId log, std::string key, const LogAddress& ref);
  static IndexEntry tombstone(std::string key);

  u32 record_size() const noexcept;
  // Bytes the level holds for this entry.
  u64 stored_bytes() const noexcept;
  // Bytes it stands for once medium references are resolved.
  u64 resolved_bytes() const noexcept;
};

// Returns the full key of a log reference.
using KeyResolver = std::function<std::string(const IndexEntry&)>;

class Leaf
{
 public:
  Leaf();
  // Copies and checks a leaf image read from the device.
  explicit Leaf(std::span<const u8> image);

  std::span<const u8> bytes() const noexcept
  {
    return buf_;
  }

  u32 size() const noexcept;
  u32 free_space() const noexcept;
  u32 garbage() const noexcept;
  u32 compactions() const noexcept
  {
    return compactions_;
  }

  SlotCode code(u32 slot) const;
  Prefix prefix(u32 slot) const;
  IndexEntry entry(u32 slot) const;

  // Appends without ordering checks; false when the record does not fit.
  // Used by bulk construction, which already supplies sorted input.
  bool append(const IndexEntry& e);

  enum class InsertResult {
    kInserted,
    kUpdated,
    kNeedsSplit,
  };
  // Ordered insert. An existing key gets the new record appended and its slot
  // repointed. When space runs out the leaf compacts itself if that frees
  // enough room, otherwise it reports kNeedsSplit and is left unchanged.
  InsertResult insert(const IndexEntry& e, const KeyResolver& resolve);

  // First slot whose key is >= key.
  u32 lower_bound(std::string_view key, const KeyResolver& resolve) const;
  std::optional<u32> find(std::string_view key, const KeyResolver& resolve) const;

  void compact();
  // Structural checks: header bounds, non-overlapping records, codes that
  // match the record shapes. Throws kCorruption.
  void validate() const;

 private:
  u16 data_head() const noexcept;
  u32 slot_word(u32 slot) const noexcept;
  u32 record_offset(u32 slot) const noexcept;
  u32 record_length(u32 slot) const;
  // Full key for a slot, resolving log references.
  std::string slot_key(u32 slot, const KeyResolver& resolve) const;
  int compare(std::string_view key, const Prefix& key_prefix, u32 slot, const KeyResolver& resolve) const;
  u32 write_record(const IndexEntry& e);

  std::array<u8, kLeafSize> buf_{};
  u32 compactions_ = 0;
};

}  // namespace hkv
