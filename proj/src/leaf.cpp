#include <hkv/leaf.hpp>

#include <hkv/codec.hpp>

#include <algorithm>
#include <cstring>
#include <vector>

namespace hkv {

namespace {

constexpr u8 kLeafMagic = 0x4C;
constexpr u32 kOffsetMask = (1u << 29) - 1;

int sign(int v) noexcept
{
  return (v > 0) - (v < 0);
}

}  // namespace

std::string_view to_string(SlotCode c) noexcept
{
  switch (c) {
    case SlotCode::kSmallInPlace:
      return "small";
    case SlotCode::kMediumInPlace:
      return "medium";
    case SlotCode::kLargeInPlace:
      return "large";
    case SlotCode::kMediumLogRef:
      return "medium-ref";
    case SlotCode::kLargeLogRef:
      return "large-ref";
    case SlotCode::kTombstone:
      return "tombstone";
  }
  return "?";
}

SlotCode in_place_code(KvCategory c) noexcept
{
  switch (c) {
    case KvCategory::kSmall:
      return SlotCode::kSmallInPlace;
    case KvCategory::kMedium:
      return SlotCode::kMediumInPlace;
    case KvCategory::kLarge:
      return SlotCode::kLargeInPlace;
  }
  return SlotCode::kSmallInPlace;
}

KvCategory category_of(SlotCode c) noexcept
{
  switch (c) {
    case SlotCode::kMediumInPlace:
    case SlotCode::kMediumLogRef:
      return KvCategory::kMedium;
    case SlotCode::kLargeInPlace:
    case SlotCode::kLargeLogRef:
      return KvCategory::kLarge;
    default:
      return KvCategory::kSmall;
  }
}

Prefix make_prefix(std::string_view key) noexcept
{
  Prefix p{};
  std::memcpy(p.data(), key.data(), std::min(key.size(), kPrefixSize));
  return p;
}

IndexEntry IndexEntry::in_place(KvCategory c, std::string key, std::string value)
{
  IndexEntry e;
  e.code = in_place_code(c);
  e.prefix = make_prefix(key);
  e.key = std::move(key);
  e.value = std::move(value);
  return e;
}

IndexEntry IndexEntry::log_ref(LogId log, std::string key, const LogAddress& ref)
{
  IndexEntry e;
  e.code = log == LogId::kMedium ? SlotCode::kMediumLogRef : SlotCode::kLargeLogRef;
  e.prefix = make_prefix(key);
  e.key = std::move(key);
  e.ref = ref;
  e.ref.log = log;
  return e;
}

IndexEntry IndexEntry::tombstone(std::string key)
{
  IndexEntry e;
  e.code = SlotCode::kTombstone;
  e.prefix = make_prefix(key);
  e.key = std::move(key);
  return e;
}

u32 IndexEntry::record_size() const noexcept
{
  if (is_log_ref(code)) {
    return kLogRefRecordSize;
  }
  if (code == SlotCode::kTombstone) {
    return static_cast<u32>(2 + key.size());
  }
  return static_cast<u32>(4 + key.size() + value.size());
}

u64 IndexEntry::stored_bytes() const noexcept
{
  if (is_log_ref(code)) {
    return kLogRefRecordSize;
  }
  return key.size() + value.size();
}

u64 IndexEntry::resolved_bytes() const noexcept
{
  if (code == SlotCode::kMediumLogRef) {
    return ref.length - kLogHeaderSize - kLogTrailerSize;
  }
  return stored_bytes();
}

Leaf::Leaf()
{
  buf_[0] = kLeafMagic;
  store_u16(&buf_[4], static_cast<u16>(kLeafSize));
}

Leaf::Leaf(std::span<const u8> image)
{
  check(image.size() == kLeafSize, ErrorCode::kCorruption, "leaf image has the wrong size");
  std::memcpy(buf_.data(), image.data(), kLeafSize);
  check(buf_[0] == kLeafMagic, ErrorCode::kCorruption, "not a leaf");
}

u32 Leaf::size() const noexcept
{
  return load_u16(&buf_[2]);
}

u16 Leaf::data_head() const noexcept
{
  return load_u16(&buf_[4]);
}

u32 Leaf::garbage() const noexcept
{
  return load_u16(&buf_[6]);
}

u32 Leaf::free_space() const noexcept
{
  return data_head() - (kLeafHeaderSize + kSlotSize * size());
}

u32 Leaf::slot_word(u32 slot) const noexcept
{
  return load_u32(&buf_[kLeafHeaderSize + kSlotSize * slot]);
}

SlotCode Leaf::code(u32 slot) const
{
  check(slot < size(), ErrorCode::kRangeError, "slot out of range");
  return static_cast<SlotCode>(slot_word(slot) >> 29);
}

u32 Leaf::record_offset(u32 slot) const noexcept
{
  return slot_word(slot) & kOffsetMask;
}

u32 Leaf::record_length(u32 slot) const
{
  const u32 off = record_offset(slot);
  const SlotCode c = code(slot);
  if (is_log_ref(c)) {
    return kLogRefRecordSize;
  }
  if (c == SlotCode::kTombstone) {
    return 2 + load_u16(&buf_[off]);
  }
  return 4 + load_u16(&buf_[off]) + load_u16(&buf_[off + 2]);
}

Prefix Leaf::prefix(u32 slot) const
{
  const u32 off = record_offset(slot);
  const SlotCode c = code(slot);
  if (is_log_ref(c)) {
    Prefix p;
    std::memcpy(p.data(), &buf_[off], kPrefixSize);
    return p;
  }
  const u16 klen = load_u16(&buf_[off]);
  const u32 key_at = off + (c == SlotCode::kTombstone ? 2 : 4);
  return make_prefix(std::string_view(reinterpret_cast<const char*>(&buf_[key_at]), klen));
}

IndexEntry Leaf::entry(u32 slot) const
{
  const SlotCode c = code(slot);
  const u32 off = record_offset(slot);
  IndexEntry e;
  e.code = c;
  if (is_log_ref(c)) {
    std::memcpy(e.prefix.data(), &buf_[off], kPrefixSize);
    e.key_known = false;
    e.ref.log = ref_log(c);
    e.ref.offset = load_u64(&buf_[off + kPrefixSize]);
    e.ref.length = load_u32(&buf_[off + kPrefixSize + 8]);
    e.ref.generation = load_u32(&buf_[off + kPrefixSize + 12]);
    return e;
  }
  const u16 klen = load_u16(&buf_[off]);
  if (c == SlotCode::kTombstone) {
    e.key.assign(reinterpret_cast<const char*>(&buf_[off + 2]), klen);
  } else {
    const u16 vlen = load_u16(&buf_[off + 2]);
    e.key.assign(reinterpret_cast<const char*>(&buf_[off + 4]), klen);
    e.value.assign(reinterpret_cast<const char*>(&buf_[off + 4 + klen]), vlen);
  }
  e.prefix = make_prefix(e.key);
  return e;
}

u32 Leaf::write_record(const IndexEntry& e)
{
  const u32 size = e.record_size();
  const u32 off = data_head() - size;
  u8* p = &buf_[off];
  if (is_log_ref(e.code)) {
    std::memcpy(p, e.prefix.data(), kPrefixSize);
    store_u64(p + kPrefixSize, e.ref.offset);
    store_u32(p + kPrefixSize + 8, e.ref.length);
    store_u32(p + kPrefixSize + 12, e.ref.generation);
  } else if (e.code == SlotCode::kTombstone) {
    store_u16(p, static_cast<u16>(e.key.size()));
    std::memcpy(p + 2, e.key.data(), e.key.size());
  } else {
    store_u16(p, static_cast<u16>(e.key.size()));
    store_u16(p + 2, static_cast<u16>(e.value.size()));
    std::memcpy(p + 4, e.key.data(), e.key.size());
    std::memcpy(p + 4 + e.key.size(), e.value.data(), e.value.size());
  }
  store_u16(&buf_[4], static_cast<u16>(off));
  return off;
}

bool Leaf::append(const IndexEntry& e)
{
  if (e.record_size() + kSlotSize > free_space()) {
    return false;
  }
  const u32 n = size();
  const u32 off = write_record(e);
  store_u32(&buf_[kLeafHeaderSize + kSlotSize * n], (static_cast<u32>(e.code) << 29) | off);
  store_u16(&buf_[2], static_cast<u16>(n + 1));
  return true;
}

std::string Leaf::slot_key(u32 slot, const KeyResolver& resolve) const
{
  IndexEntry e = entry(slot);
  if (e.key_known) {
    return std::move(e.key);
  }
  check(static_cast<bool>(resolve), ErrorCode::kInvalidArgument, "log reference needs a resolver");
  return resolve(e);
}

int Leaf::compare(std::string_view key,
                  const Prefix& key_prefix,
                  u32 slot,
                  const KeyResolver& resolve) const
{
  const Prefix p = prefix(slot);
  const int c = std::memcmp(key_prefix.data(), p.data(), kPrefixSize);
  if (c != 0) {
    return sign(c);
  }
  return sign(key.compare(slot_key(slot, resolve)));
}

u32 Leaf::lower_bound(std::string_view key, const KeyResolver& resolve) const
{
  const Prefix kp = make_prefix(key);
  u32 lo = 0;
  u32 hi = size();
  while (lo < hi) {
    const u32 mid = lo + (hi - lo) / 2;
    if (compare(key, kp, mid, resolve) > 0) {
      lo = mid + 1;
    } else {
      hi = mid;
    }
  }
  return lo;
}

std::optional<u32> Leaf::find(std::string_view key, const KeyResolver& resolve) const
{
  const u32 pos = lower_bound(key, resolve);
  if (pos < size() && compare(key, make_prefix(key), pos, resolve) == 0) {
    return pos;
  }
  return std::nullopt;
}

Leaf::InsertResult Leaf::insert(const IndexEntry& e, const KeyResolver& resolve)
{
  check(!e.key.empty() && e.key_known, ErrorCode::kInvalidArgument, "insert needs a full key");
  const u32 pos = lower_bound(e.key, resolve);
  const bool exists = pos < size() && compare(e.key, e.prefix, pos, resolve) == 0;
  const u32 old_len = exists ? record_length(pos) : 0;
  const u32 rec = e.record_size();
  u8* slots = &buf_[kLeafHeaderSize];

  if (exists && rec <= free_space()) {
    store_u16(&buf_[6], static_cast<u16>(garbage() + old_len));
    const u32 off = write_record(e);
    store_u32(slots + kSlotSize * pos, (static_cast<u32>(e.code) << 29) | off);
    return InsertResult::kUpdated;
  }
  // After dropping the old version (if any) the entry needs a record and a slot.
  if (rec + kSlotSize > free_space() + garbage() + (exists ? old_len + kSlotSize : 0)) {
    return InsertResult::kNeedsSplit;
  }
  const u32 n = size();
  if (exists) {
    std::memmove(slots + kSlotSize * pos, slots + kSlotSize * (pos + 1), kSlotSize * (n - pos - 1));
    store_u16(&buf_[2], static_cast<u16>(n - 1));
    store_u16(&buf_[6], static_cast<u16>(garbage() + old_len));
  }
  if (rec + kSlotSize > free_space()) {
    compact();
  }
  const u32 m = size();
  const u32 off = write_record(e);
  std::memmove(slots + kSlotSize * (pos + 1), slots + kSlotSize * pos, kSlotSize * (m - pos));
  store_u32(slots + kSlotSize * pos, (static_cast<u32>(e.code) << 29) | off);
  store_u16(&buf_[2], static_cast<u16>(m + 1));
  return exists ? InsertResult::kUpdated : InsertResult::kInserted;
}

void Leaf::compact()
{
  const u32 n = size();
  std::vector<std::pair<u32, std::vector<u8>>> records;
  records.reserve(n);
  for (u32 i = 0; i < n; ++i) {
    const u32 off = record_offset(i);
    const u32 len = record_length(i);
    records.emplace_back(slot_word(i) >> 29,
                         std::vector<u8>(buf_.begin() + off, buf_.begin() + off + len));
  }
  u16 head = static_cast<u16>(kLeafSize);
  for (u32 i = 0; i < n; ++i) {
    auto& [c, bytes] = records[i];
    head = static_cast<u16>(head - bytes.size());
    std::memcpy(&buf_[head], bytes.data(), bytes.size());
    store_u32(&buf_[kLeafHeaderSize + kSlotSize * i], (c << 29) | head);
  }
  std::memset(&buf_[kLeafHeaderSize + kSlotSize * n], 0, head - (kLeafHeaderSize + kSlotSize * n));
  store_u16(&buf_[4], head);
  store_u16(&buf_[6], 0);
  ++compactions_;
}

void Leaf::validate() const
{
  check(buf_[0] == kLeafMagic, ErrorCode::kCorruption, "bad leaf magic");
  const u32 n = size();
  const u32 head = data_head();
  check(head <= kLeafSize && kLeafHeaderSize + kSlotSize * n <= head,
        ErrorCode::kCorruption,
        "leaf slot array overlaps the data area");
  std::vector<std::pair<u32, u32>> spans;
  spans.reserve(n);
  u32 live = 0;
  for (u32 i = 0; i < n; ++i) {
    const u32 c = slot_word(i) >> 29;
    check(c <= static_cast<u32>(SlotCode::kTombstone), ErrorCode::kCorruption, "bad slot code");
    const u32 off = record_offset(i);
    check(off >= head && off < kLeafSize, ErrorCode::kCorruption, "slot offset outside data area");
    const auto code = static_cast<SlotCode>(c);
    u32 len = kLogRefRecordSize;
    if (!is_log_ref(code)) {
      check(off + 2 <= kLeafSize, ErrorCode::kCorruption, "record header past leaf end");
      const u32 klen = load_u16(&buf_[off]);
      check(klen > 0, ErrorCode::kCorruption, "empty key in leaf");
      if (code == SlotCode::kTombstone) {
        len = 2 + klen;
      } else {
        check(off + 4 <= kLeafSize, ErrorCode::kCorruption, "record header past leaf end");
        len = 4 + klen + load_u16(&buf_[off + 2]);
      }
    }
    check(off + len <= kLeafSize, ErrorCode::kCorruption, "record past leaf end");
    spans.emplace_back(off, len);
    live += len;
  }
  std::sort(spans.begin(), spans.end());
  for (size_t i = 1; i < spans.size(); ++i) {
    check(spans[i - 1].first + spans[i - 1].second <= spans[i].first,
          ErrorCode::kCorruption,
          "overlapping leaf records");
  }
  check(live + garbage() == kLeafSize - head, ErrorCode::kCorruption, "leaf garbage accounting is off");
}

}  // namespace hkv
