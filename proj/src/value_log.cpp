#include <hkv/value_log.hpp>

#include <hkv/codec.hpp>

#include <algorithm>
#include <cstring>

namespace hkv {

std::string_view to_string(LogId id) noexcept
{
  switch (id) {
    case LogId::kSmall:
      return "small";
    case LogId::kMedium:
      return "medium";
    case LogId::kLarge:
      return "large";
  }
  return "?";
}

OwnerKind owner_kind(LogId id) noexcept
{
  switch (id) {
    case LogId::kSmall:
      return OwnerKind::kSmallLog;
    case LogId::kMedium:
      return OwnerKind::kMediumLog;
    case LogId::kLarge:
      return OwnerKind::kLargeLog;
  }
  return OwnerKind::kFree;
}

u32 entry_salt(u16 region, LogId log, u32 generation) noexcept
{
  return generation * 0x9E3779B1u ^ (static_cast<u32>(region) << 8) ^ static_cast<u32>(log);
}

void encode_entry(const LogEntry& e, u32 salt, std::vector<u8>& out)
{
  const u32 total = encoded_size(e.key.size(), e.value.size());
  const size_t at = out.size();
  out.resize(at + total);
  u8* p = out.data() + at;
  store_u32(p, total);
  store_u64(p + 4, e.lsn);
  p[12] = static_cast<u8>(static_cast<u8>(e.op) | (static_cast<u8>(e.category) << 4));
  store_u16(p + 13, static_cast<u16>(e.key.size()));
  std::memcpy(p + kLogHeaderSize, e.key.data(), e.key.size());
  std::memcpy(p + kLogHeaderSize + e.key.size(), e.value.data(), e.value.size());
  const u32 crc = crc32({p, total - kLogTrailerSize}, salt);
  store_u32(p + total - kLogTrailerSize, crc);
}

DecodeStatus decode_entry(std::span<const u8> bytes, u32 salt, LogEntry* out, u32* length)
{
  if (bytes.size() < kLogHeaderSize + kLogTrailerSize) {
    if (bytes.size() >= 4 && load_u32(bytes.data()) != 0 &&
        load_u32(bytes.data()) != kEndOfSegment) {
      return DecodeStatus::kInvalid;
    }
    return DecodeStatus::kEndOfSegment;
  }
  const u8* p = bytes.data();
  const u32 total = load_u32(p);
  if (total == 0 || total == kEndOfSegment) {
    return DecodeStatus::kEndOfSegment;
  }
  if (total < kLogHeaderSize + kLogTrailerSize || total > bytes.size()) {
    return DecodeStatus::kInvalid;
  }
  const u16 key_len = load_u16(p + 13);
  if (kLogHeaderSize + key_len + kLogTrailerSize > total) {
    return DecodeStatus::kInvalid;
  }
  if (crc32({p, total - kLogTrailerSize}, salt) != load_u32(p + total - kLogTrailerSize)) {
    return DecodeStatus::kInvalid;
  }
  const u8 kinds = p[12];
  if ((kinds & 0x0F) > 2 || (kinds >> 4) > 2) {
    return DecodeStatus::kInvalid;
  }
  if (out != nullptr) {
    out->lsn = load_u64(p + 4);
    out->op = static_cast<OpKind>(kinds & 0x0F);
    out->category = static_cast<KvCategory>(kinds >> 4);
    out->key.assign(reinterpret_cast<const char*>(p + kLogHeaderSize), key_len);
    out->value.assign(reinterpret_cast<const char*>(p + kLogHeaderSize + key_len),
                      total - kLogHeaderSize - kLogTrailerSize - key_len);
  }
  *length = total;
  return DecodeStatus::kOk;
}

ValueLog::ValueLog(Storage& storage, Metrics& metrics, u16 region, LogId id, ExtendHook hook)
    : storage_(storage),
      metrics_(metrics),
      region_(region),
      id_(id),
      hook_(std::move(hook)),
      chunk_(std::min<u64>(kLogChunkSize, storage.segment_length()))
{
}

void ValueLog::restore(std::vector<SegRef> chain)
{
  std::lock_guard lock{mu_};
  chain_ = std::move(chain);
  used_.assign(chain_.size(), 0);
  open_segment_ = false;
  cursor_ = buf_base_ = flushed_ = 0;
  buf_.clear();
}

void ValueLog::write_chunks(bool all, TrafficClass cls)
{
  // Caller holds mu_. Full chunks go out at chunk-aligned offsets; with `all`
  // the partial remainder is written at its actual length.
  if (!open_segment_) {
    return;
  }
  const u64 base = storage_.segment_offset(chain_.back().id);
  while (buf_base_ + chunk_ <= cursor_) {
    const u32 end = static_cast<u32>(buf_base_ + chunk_);
    storage_.write_at(base + flushed_,
                      std::span<const u8>(buf_.data() + (flushed_ - buf_base_), end - flushed_),
                      cls);
    buf_.erase(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(chunk_));
    buf_base_ = flushed_ = end;
  }
  if (all && flushed_ < cursor_) {
    storage_.write_at(base + flushed_,
                      std::span<const u8>(buf_.data() + (flushed_ - buf_base_), cursor_ - flushed_),
                      cls);
    flushed_ = cursor_;
  }
}

void ValueLog::switch_segment(TrafficClass cls)
{
  if (open_segment_) {
    const u64 seg_len = storage_.segment_length();
    if (cursor_ + 4 <= seg_len) {
      const size_t at = buf_.size();
      buf_.resize(at + 4);
      store_u32(buf_.data() + at, kEndOfSegment);
      cursor_ += 4;
    }
    write_chunks(true, cls);
    used_.back() = cursor_;
  }
  const SegRef seg = storage_.allocate(Owner::log_of(region_, kind()));
  try {
    if (hook_) {
      hook_(seg);
    }
  } catch (...) {
    storage_.free_segment(seg.id);
    storage_.release_pending_frees();
    throw;
  }
  chain_.push_back(seg);
  used_.push_back(0);
  open_segment_ = true;
  cursor_ = buf_base_ = flushed_ = 0;
  buf_.clear();
}

LogAddress ValueLog::append(const LogEntry& e, TrafficClass cls)
{
  check(!e.key.empty(), ErrorCode::kInvalidArgument, "empty key");
  check(e.key.size() <= kMaxKeySize, ErrorCode::kInvalidArgument, "key too long");
  const u64 size = encoded_size(e.key.size(), e.value.size());
  check(size <= storage_.segment_length(), ErrorCode::kInvalidArgument, "entry larger than a segment");

  std::lock_guard lock{mu_};
  if (!open_segment_ || cursor_ + size > storage_.segment_length()) {
    switch_segment(cls);
  }
  const SegRef seg = chain_.back();
  LogAddress addr{id_, storage_.segment_offset(seg.id) + cursor_, static_cast<u32>(size), seg.gen};
  encode_entry(e, entry_salt(region_, id_, seg.gen), buf_);
  cursor_ += static_cast<u32>(size);
  used_.back() = cursor_;
  last_lsn_ = std::max(last_lsn_, e.lsn);
  write_chunks(false, cls);
  return addr;
}

void ValueLog::write_out(TrafficClass cls)
{
  std::lock_guard lock{mu_};
  write_chunks(true, cls);
}

Lsn ValueLog::flush(TrafficClass cls)
{
  std::lock_guard lock{mu_};
  write_chunks(true, cls);
  storage_.sync();
  durable_lsn_ = last_lsn_;
  return durable_lsn_;
}

Lsn ValueLog::last_lsn() const
{
  std::lock_guard lock{mu_};
  return last_lsn_;
}

Lsn ValueLog::durable_lsn() const
{
  std::lock_guard lock{mu_};
  return durable_lsn_;
}

u64 ValueLog::buffered_bytes() const
{
  std::lock_guard lock{mu_};
  return cursor_ - flushed_;
}

void ValueLog::read_range(u64 offset, std::span<u8> out, TrafficClass cls) const
{
  // Caller holds mu_. Bytes at or past buf_base_ of the open segment come from
  // memory; anything before is on the device.
  u64 device_end = offset + out.size();
  if (open_segment_) {
    const u64 base = storage_.segment_offset(chain_.back().id);
    const u64 mem_start = base + buf_base_;
    if (offset + out.size() > mem_start && offset < base + cursor_) {
      const u64 from = std::max(offset, mem_start);
      std::memcpy(out.data() + (from - offset),
                  buf_.data() + (from - mem_start),
                  offset + out.size() - from);
      device_end = from;
    }
  }
  if (device_end > offset) {
    storage_.read_at(offset, out.first(device_end - offset), cls);
  }
}

bool ValueLog::resolvable(const LogAddress& addr) const
{
  std::lock_guard lock{mu_};
  return storage_.is_live(SegRef{storage_.segment_of(addr.offset), addr.generation}, kind());
}

LogEntry ValueLog::read_entry(const LogAddress& addr, TrafficClass cls) const
{
  check(addr.log == id_, ErrorCode::kInvalidArgument, "address belongs to another log");
  std::lock_guard lock{mu_};
  const SegmentId seg = storage_.segment_of(addr.offset);
  if (!storage_.is_live(SegRef{seg, addr.generation}, kind())) {
    fail(ErrorCode::kStaleAddress,
         std::string{to_string(id_)} + "-log address in reclaimed segment " + std::to_string(seg));
  }
  std::vector<u8> bytes(addr.length);
  read_range(addr.offset, bytes, cls);
  LogEntry e;
  u32 len = 0;
  if (decode_entry(bytes, entry_salt(region_, id_, addr.generation), &e, &len) != DecodeStatus::kOk ||
      len != addr.length) {
    fail(ErrorCode::kCorruption, "log entry checksum mismatch");
  }
  return e;
}

std::string ValueLog::read_key(const LogAddress& addr, TrafficClass cls) const
{
  std::lock_guard lock{mu_};
  const SegmentId seg = storage_.segment_of(addr.offset);
  if (!storage_.is_live(SegRef{seg, addr.generation}, kind())) {
    fail(ErrorCode::kStaleAddress, "key read from reclaimed segment");
  }
  constexpr u32 kProbe = 64;
  std::vector<u8> bytes(std::min(addr.length, kProbe));
  read_range(addr.offset, bytes, cls);
  const u16 key_len = load_u16(bytes.data() + 13);
  check(kLogHeaderSize + key_len + kLogTrailerSize <= addr.length,
        ErrorCode::kCorruption,
        "log entry key length out of range");
  std::string key(key_len, '\0');
  const size_t have = std::min<size_t>(key_len, bytes.size() - kLogHeaderSize);
  std::memcpy(key.data(), bytes.data() + kLogHeaderSize, have);
  if (have < key_len) {
    read_range(addr.offset + kLogHeaderSize + have,
               std::span<u8>(reinterpret_cast<u8*>(key.data()) + have, key_len - have),
               cls);
  }
  return key;
}

IterateResult ValueLog::iterate_segment(SegRef seg, const Visitor& fn, TrafficClass cls) const
{
  IterateResult result;
  std::vector<u8> bytes(storage_.segment_length());
  storage_.read_at(storage_.segment_offset(seg.id), bytes, cls);
  const u32 salt = entry_salt(region_, id_, seg.gen);
  u32 pos = 0;
  while (true) {
    LogEntry e;
    u32 len = 0;
    const DecodeStatus st =
        decode_entry(std::span<const u8>(bytes).subspan(pos), salt, &e, &len);
    if (st != DecodeStatus::kOk) {
      result.torn = st == DecodeStatus::kInvalid;
      break;
    }
    fn(LogAddress{id_, storage_.segment_offset(seg.id) + pos, len, seg.gen}, e);
    ++result.entries;
    pos += len;
  }
  result.end = LogCursor{seg.id, pos};
  return result;
}

IterateResult ValueLog::iterate(LogCursor from, const Visitor& fn, TrafficClass cls) const
{
  std::vector<SegRef> chain;
  {
    std::lock_guard lock{mu_};
    chain = chain_;
  }
  IterateResult result;
  auto it = std::find_if(chain.begin(), chain.end(), [&](const SegRef& s) {
    return s.id == from.segment;
  });
  if (it == chain.end()) {
    result.end = from;
    return result;
  }
  std::vector<u8> bytes(storage_.segment_length());
  u32 pos = from.offset;
  for (; it != chain.end(); ++it) {
    const SegRef seg = *it;
    storage_.read_at(storage_.segment_offset(seg.id), bytes, cls);
    const u32 salt = entry_salt(region_, id_, seg.gen);
    while (true) {
      LogEntry e;
      u32 len = 0;
      const DecodeStatus st =
          decode_entry(std::span<const u8>(bytes).subspan(pos), salt, &e, &len);
      if (st == DecodeStatus::kEndOfSegment) {
        break;
      }
      if (st == DecodeStatus::kInvalid) {
        result.torn = true;
        result.end = LogCursor{seg.id, pos};
        return result;
      }
      fn(LogAddress{id_, storage_.segment_offset(seg.id) + pos, len, seg.gen}, e);
      ++result.entries;
      pos += len;
    }
    result.end = LogCursor{seg.id, pos};
    pos = 0;
  }
  return result;
}

LogCursor ValueLog::tail() const
{
  std::lock_guard lock{mu_};
  if (!open_segment_) {
    return {};
  }
  return LogCursor{chain_.back().id, cursor_};
}

LogCursor ValueLog::open_tail(TrafficClass cls)
{
  std::lock_guard lock{mu_};
  if (!open_segment_) {
    switch_segment(cls);
  }
  return LogCursor{chain_.back().id, cursor_};
}

void ValueLog::start_new_segment()
{
  std::lock_guard lock{mu_};
  if (open_segment_) {
    const u64 seg_len = storage_.segment_length();
    if (cursor_ + 4 <= seg_len) {
      const size_t at = buf_.size();
      buf_.resize(at + 4);
      store_u32(buf_.data() + at, kEndOfSegment);
      cursor_ += 4;
    }
    write_chunks(true, TrafficClass::kLogAppend);
    used_.back() = cursor_;
  }
  open_segment_ = false;
  cursor_ = buf_base_ = flushed_ = 0;
  buf_.clear();
}

std::vector<SegRef> ValueLog::chain() const
{
  std::lock_guard lock{mu_};
  return chain_;
}

std::vector<u32> ValueLog::used_bytes() const
{
  std::lock_guard lock{mu_};
  return used_;
}

SegRef ValueLog::current_segment() const
{
  std::lock_guard lock{mu_};
  return open_segment_ ? chain_.back() : SegRef{};
}

void ValueLog::remove_segment(SegmentId id)
{
  std::lock_guard lock{mu_};
  for (size_t i = 0; i < chain_.size(); ++i) {
    if (chain_[i].id == id) {
      check(!(open_segment_ && i + 1 == chain_.size()),
            ErrorCode::kInvariantViolation,
            "cannot drop the segment under append");
      chain_.erase(chain_.begin() + static_cast<std::ptrdiff_t>(i));
      used_.erase(used_.begin() + static_cast<std::ptrdiff_t>(i));
      return;
    }
  }
  fail(ErrorCode::kInvariantViolation, "segment not in log chain");
}

std::vector<SegRef> ValueLog::take_chain()
{
  std::lock_guard lock{mu_};
  std::vector<SegRef> out = std::move(chain_);
  chain_.clear();
  used_.clear();
  open_segment_ = false;
  cursor_ = buf_base_ = flushed_ = 0;
  buf_.clear();
  return out;
}

std::vector<SegRef> ValueLog::seal(LogCursor at)
{
  std::lock_guard lock{mu_};
  check(!open_segment_, ErrorCode::kInvariantViolation, "seal on a log with pending appends");
  std::vector<SegRef> dropped;
  auto it = std::find_if(chain_.begin(), chain_.end(), [&](const SegRef& s) {
    return s.id == at.segment;
  });
  if (it == chain_.end()) {
    return dropped;
  }
  if (at.offset + 4 <= storage_.segment_length()) {
    u8 eos[4];
    store_u32(eos, kEndOfSegment);
    storage_.write_at(storage_.segment_offset(at.segment) + at.offset, eos, TrafficClass::kMetadataWrite);
  }
  const auto keep = static_cast<size_t>(it - chain_.begin()) + 1;
  dropped.assign(chain_.begin() + static_cast<std::ptrdiff_t>(keep), chain_.end());
  chain_.resize(keep);
  used_.resize(keep);
  return dropped;
}

}  // namespace hkv
