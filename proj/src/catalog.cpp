#include <hkv/catalog.hpp>

#include <algorithm>
#include <cstring>

namespace hkv {

namespace {

constexpr char kMagic[8] = {'P', 'L', 'A', 'X', 'D', 'E', 'S', 'K'};
constexpr u32 kFormatVersion = 1;
constexpr size_t kCatalogHeaderSize = 8 + 4 + 8 + 8 + 4 + 4 + 4 + 8;
constexpr size_t kRedoHeaderSize = 4 + 8 + 8 + 1;
constexpr size_t kRedoTrailerSize = 8;

void put_ref(ByteWriter& w, SegRef s)
{
  w.u32_(s.id);
  w.u32_(s.gen);
}

SegRef get_ref(ByteReader& r)
{
  SegRef s;
  s.id = r.u32_();
  s.gen = r.u32_();
  return s;
}

void put_refs(ByteWriter& w, const std::vector<SegRef>& v)
{
  w.u32_(static_cast<u32>(v.size()));
  for (SegRef s : v) {
    put_ref(w, s);
  }
}

std::vector<SegRef> get_refs(ByteReader& r)
{
  const u32 n = r.u32_();
  check(n <= r.remaining() / 8, ErrorCode::kCorruption, "segment list out of range");
  std::vector<SegRef> v;
  v.reserve(n);
  for (u32 i = 0; i < n; ++i) {
    v.push_back(get_ref(r));
  }
  return v;
}

void put_cursor(ByteWriter& w, LogCursor c)
{
  w.u32_(c.segment);
  w.u32_(c.offset);
}

LogCursor get_cursor(ByteReader& r)
{
  LogCursor c;
  c.segment = r.u32_();
  c.offset = r.u32_();
  return c;
}

struct Header {
  u64 epoch = 0;
  Geometry geo;
  u64 body_len = 0;
};

std::optional<Header> parse_header(std::span<const u8> b)
{
  if (b.size() < kCatalogHeaderSize || std::memcmp(b.data(), kMagic, 8) != 0) {
    return std::nullopt;
  }
  ByteReader r{b.subspan(8)};
  if (r.u32_() != kFormatVersion) {
    return std::nullopt;
  }
  Header h;
  h.epoch = r.u64_();
  h.geo.segment_length = r.u64_();
  h.geo.segment_count = r.u32_();
  h.geo.catalog_segments = r.u32_();
  h.geo.redo_segments = r.u32_();
  h.body_len = r.u64_();
  return h;
}

// Reads and verifies the catalog copy at `offset`. Returns the header and body.
std::optional<std::pair<Header, std::vector<u8>>> read_copy(Device& dev, u64 offset, Metrics* metrics)
{
  if (offset + kCatalogHeaderSize > dev.size()) {
    return std::nullopt;
  }
  std::vector<u8> head(kCatalogHeaderSize);
  dev.read(offset, head);
  if (metrics) {
    metrics->add(TrafficClass::kRecoveryRead, head.size());
  }
  const auto h = parse_header(head);
  if (!h || h->geo.segment_count == 0 ||
      h->body_len > h->geo.catalog_segments * h->geo.segment_length ||
      offset + kCatalogHeaderSize + h->body_len + 8 > dev.size()) {
    return std::nullopt;
  }
  std::vector<u8> all(kCatalogHeaderSize + h->body_len + 8);
  dev.read(offset, all);
  if (metrics) {
    metrics->add(TrafficClass::kRecoveryRead, all.size());
  }
  const u64 want = load_u64(all.data() + all.size() - 8);
  if (crc64(std::span<const u8>(all).first(all.size() - 8)) != want) {
    return std::nullopt;
  }
  std::vector<u8> body(all.begin() + kCatalogHeaderSize, all.end() - 8);
  return std::make_pair(*h, std::move(body));
}

}  // namespace

std::string_view to_string(RedoKind k) noexcept
{
  switch (k) {
    case RedoKind::kRegionCreate:
      return "region-create";
    case RedoKind::kLogExtend:
      return "log-extend";
    case RedoKind::kLogTruncate:
      return "log-truncate";
    case RedoKind::kCompaction:
      return "compaction";
    case RedoKind::kGcReclaim:
      return "gc-reclaim";
  }
  return "?";
}

// ---- RedoRecord ----

void RedoRecord::encode(ByteWriter& w) const
{
  w.u16_(region);
  switch (kind) {
    case RedoKind::kRegionCreate:
      w.str(name);
      w.str(lo);
      w.str(hi);
      break;
    case RedoKind::kLogExtend:
    case RedoKind::kLogTruncate:
      w.u8_(static_cast<u8>(log));
      put_ref(w, seg);
      break;
    case RedoKind::kGcReclaim:
      put_ref(w, seg);
      break;
    case RedoKind::kCompaction:
      w.u32_(level_count);
      w.u32_(static_cast<u32>(levels.size()));
      for (const auto& [idx, d] : levels) {
        w.u32_(idx);
        d.encode(w);
      }
      w.u8_(from_l0 ? 1 : 0);
      w.u64_(watermark);
      put_cursor(w, small_from);
      put_cursor(w, large_from);
      break;
  }
  put_refs(w, allocated);
  put_refs(w, freed);
}

RedoRecord RedoRecord::decode(ByteReader& r, RedoKind kind)
{
  RedoRecord rec;
  rec.kind = kind;
  rec.region = r.u16_();
  switch (kind) {
    case RedoKind::kRegionCreate:
      rec.name = r.str();
      rec.lo = r.str();
      rec.hi = r.str();
      break;
    case RedoKind::kLogExtend:
    case RedoKind::kLogTruncate: {
      const u8 log = r.u8_();
      check(log <= 2, ErrorCode::kCorruption, "bad log id in redo record");
      rec.log = static_cast<LogId>(log);
      rec.seg = get_ref(r);
      break;
    }
    case RedoKind::kGcReclaim:
      rec.seg = get_ref(r);
      break;
    case RedoKind::kCompaction: {
      rec.level_count = r.u32_();
      check(rec.level_count <= 250, ErrorCode::kCorruption, "level count out of range");
      const u32 n = r.u32_();
      check(n <= rec.level_count, ErrorCode::kCorruption, "too many level updates");
      for (u32 i = 0; i < n; ++i) {
        const u32 idx = r.u32_();
        check(idx < rec.level_count, ErrorCode::kCorruption, "level index out of range");
        rec.levels.emplace_back(idx, LevelDescriptor::decode(r));
      }
      rec.from_l0 = r.u8_() != 0;
      rec.watermark = r.u64_();
      rec.small_from = get_cursor(r);
      rec.large_from = get_cursor(r);
      break;
    }
    default:
      fail(ErrorCode::kCorruption, "unknown redo record kind");
  }
  rec.allocated = get_refs(r);
  rec.freed = get_refs(r);
  return rec;
}

std::vector<SegRef> RedoRecord::segment_refs() const
{
  std::vector<SegRef> out = allocated;
  out.insert(out.end(), freed.begin(), freed.end());
  if (seg.id != 0) {
    out.push_back(seg);
  }
  for (const auto& [_, d] : levels) {
    out.insert(out.end(), d.segments.begin(), d.segments.end());
    for (const auto& m : d.medium) {
      out.push_back(m.seg);
    }
  }
  return out;
}

// ---- CommittedState ----

RegionState* CommittedState::region(u16 id)
{
  for (auto& r : regions) {
    if (r.id == id) {
      return &r;
    }
  }
  return nullptr;
}

const RegionState* CommittedState::region(u16 id) const
{
  return const_cast<CommittedState*>(this)->region(id);
}

void CommittedState::apply(const RedoRecord& r)
{
  if (r.kind == RedoKind::kRegionCreate) {
    if (region(r.region) == nullptr) {
      RegionState s;
      s.id = r.region;
      s.name = r.name;
      s.lo = r.lo;
      s.hi = r.hi;
      regions.push_back(std::move(s));
      std::sort(regions.begin(), regions.end(),
                [](const RegionState& a, const RegionState& b) { return a.id < b.id; });
    }
    return;
  }
  RegionState* reg = region(r.region);
  check(reg != nullptr, ErrorCode::kCorruption, "redo record for an unknown region");
  switch (r.kind) {
    case RedoKind::kLogExtend: {
      auto& chain = r.log == LogId::kLarge ? reg->large_chain : reg->small_chain;
      if (std::find(chain.begin(), chain.end(), r.seg) == chain.end()) {
        chain.push_back(r.seg);
      }
      break;
    }
    case RedoKind::kLogTruncate: {
      auto& chain = r.log == LogId::kLarge ? reg->large_chain : reg->small_chain;
      if (r.seg.id == 0) {
        chain.clear();
      } else {
        auto it = std::find(chain.begin(), chain.end(), r.seg);
        if (it != chain.end()) {
          chain.erase(it + 1, chain.end());
        }
      }
      break;
    }
    case RedoKind::kGcReclaim: {
      auto& chain = reg->large_chain;
      chain.erase(std::remove(chain.begin(), chain.end(), r.seg), chain.end());
      break;
    }
    case RedoKind::kCompaction: {
      reg->levels.resize(r.level_count);
      for (const auto& [idx, d] : r.levels) {
        reg->levels[idx] = d;
      }
      if (r.from_l0) {
        reg->watermark = std::max(reg->watermark, r.watermark);
        // Small-log segments before the replay start only hold compacted ops.
        // An invalid cursor means the chain was empty at freeze time, so
        // every segment in it now is newer.
        auto drop_before = [](std::vector<SegRef>& chain, LogCursor from) {
          if (!from.valid()) {
            return;
          }
          auto it = std::find_if(chain.begin(), chain.end(),
                                 [&](SegRef s) { return s.id == from.segment; });
          if (it != chain.end()) {
            chain.erase(chain.begin(), it);
          }
        };
        drop_before(reg->small_chain, r.small_from);
        reg->small_from = r.small_from;
        reg->large_from = r.large_from;
      }
      break;
    }
    default:
      break;
  }
}

std::vector<std::pair<SegRef, Owner>> CommittedState::owned() const
{
  std::vector<std::pair<SegRef, Owner>> out;
  for (const auto& reg : regions) {
    for (SegRef s : reg.small_chain) {
      out.emplace_back(s, Owner::log_of(reg.id, OwnerKind::kSmallLog));
    }
    for (SegRef s : reg.large_chain) {
      out.emplace_back(s, Owner::log_of(reg.id, OwnerKind::kLargeLog));
    }
    for (u32 i = 0; i < reg.levels.size(); ++i) {
      const Owner lvl = level_owner(reg.id, i);
      for (SegRef s : reg.levels[i].segments) {
        out.emplace_back(s, lvl);
      }
      for (const auto& m : reg.levels[i].medium) {
        out.emplace_back(m.seg, Owner{OwnerKind::kMediumLog, lvl.level, reg.id});
      }
    }
  }
  return out;
}

void CommittedState::encode(ByteWriter& w) const
{
  w.u32_(static_cast<u32>(regions.size()));
  for (const auto& reg : regions) {
    w.u16_(reg.id);
    w.str(reg.name);
    w.str(reg.lo);
    w.str(reg.hi);
    w.u64_(reg.watermark);
    put_cursor(w, reg.small_from);
    put_cursor(w, reg.large_from);
    put_refs(w, reg.small_chain);
    put_refs(w, reg.large_chain);
    w.u32_(static_cast<u32>(reg.levels.size()));
    for (const auto& d : reg.levels) {
      d.encode(w);
    }
  }
}

CommittedState CommittedState::decode(ByteReader& r)
{
  CommittedState s;
  const u32 n = r.u32_();
  check(n <= 0xFFFF, ErrorCode::kCorruption, "region count out of range");
  for (u32 i = 0; i < n; ++i) {
    RegionState reg;
    reg.id = r.u16_();
    reg.name = r.str();
    reg.lo = r.str();
    reg.hi = r.str();
    reg.watermark = r.u64_();
    reg.small_from = get_cursor(r);
    reg.large_from = get_cursor(r);
    reg.small_chain = get_refs(r);
    reg.large_chain = get_refs(r);
    const u32 levels = r.u32_();
    check(levels <= 250, ErrorCode::kCorruption, "level count out of range");
    for (u32 j = 0; j < levels; ++j) {
      reg.levels.push_back(LevelDescriptor::decode(r));
    }
    s.regions.push_back(std::move(reg));
  }
  return s;
}

// ---- MetaStore ----

MetaStore::MetaStore(Storage& storage, Metrics& metrics) : storage_(storage), metrics_(metrics)
{
}

std::optional<Geometry> MetaStore::probe(Device& device)
{
  std::optional<std::pair<Header, std::vector<u8>>> best;
  auto consider = [&](u64 offset) {
    auto c = read_copy(device, offset, nullptr);
    if (c && (!best || c->first.epoch > best->first.epoch)) {
      best = std::move(c);
    }
  };
  consider(0);
  if (best) {
    consider(best->first.geo.catalog_offset(1));
    return best->first.geo;
  }
  // Copy A is unreadable: find copy B by trying every legal geometry.
  for (u64 seg = kMinSegmentLength; seg <= kMaxSegmentLength; seg += kMinSegmentLength) {
    Geometry g;
    try {
      g = Geometry::plan(device.size(), seg);
    } catch (const Error&) {
      continue;
    }
    auto c = read_copy(device, g.catalog_offset(1), nullptr);
    if (c && c->first.geo == g) {
      return g;
    }
  }
  return std::nullopt;
}

void MetaStore::format(CommittedState state)
{
  std::lock_guard lock{mu_};
  state_ = std::move(state);
  epoch_ = 0;
  write_catalog_locked();
}

void MetaStore::write_catalog_locked()
{
  ++epoch_;
  const Geometry& g = storage_.geometry();
  ByteWriter body;
  state_.encode(body);
  const auto gens = storage_.generations();
  body.u32_(static_cast<u32>(gens.size()));
  for (u32 v : gens) {
    body.u32_(v);
  }
  const auto bitmap = storage_.bitmap();
  body.u32_(static_cast<u32>(bitmap.size()));
  body.raw(bitmap);

  ByteWriter w;
  w.raw(std::span<const u8>(reinterpret_cast<const u8*>(kMagic), 8));
  w.u32_(kFormatVersion);
  w.u64_(epoch_);
  w.u64_(g.segment_length);
  w.u32_(g.segment_count);
  w.u32_(g.catalog_segments);
  w.u32_(g.redo_segments);
  w.u64_(body.size());
  w.raw(body.bytes());
  w.u64_(crc64(w.bytes()));
  check(w.size() <= g.catalog_capacity(), ErrorCode::kOutOfSpace, "catalog does not fit its area");

  const int copy = static_cast<int>((epoch_ - 1) % 2);
  storage_.write_reserved(g.catalog_offset(copy), w.bytes(), TrafficClass::kMetadataWrite);
  storage_.sync();
  seq_ = 0;
  redo_pos_ = 0;
  ++checkpoints_;
  metrics_.note(Stat::kCheckpoints);
}

LoadedMeta MetaStore::load()
{
  // Storage reads of the reserved area are attributed by hand since both
  // copies are probed with raw device reads.
  const Geometry& g = storage_.geometry();
  std::optional<std::pair<Header, std::vector<u8>>> best;
  int best_copy = 0;
  for (int copy = 0; copy < 2; ++copy) {
    std::vector<u8> head(kCatalogHeaderSize);
    storage_.read_reserved(g.catalog_offset(copy), head, TrafficClass::kRecoveryRead);
    const auto h = parse_header(head);
    if (!h || !(h->geo == g) || kCatalogHeaderSize + h->body_len + 8 > g.catalog_capacity()) {
      continue;
    }
    std::vector<u8> all(kCatalogHeaderSize + h->body_len + 8);
    storage_.read_reserved(g.catalog_offset(copy), all, TrafficClass::kRecoveryRead);
    if (crc64(std::span<const u8>(all).first(all.size() - 8)) != load_u64(all.data() + all.size() - 8)) {
      continue;
    }
    if (!best || h->epoch > best->first.epoch) {
      best.emplace(*h, std::vector<u8>(all.begin() + kCatalogHeaderSize, all.end() - 8));
      best_copy = copy;
    }
  }
  check(best.has_value(), ErrorCode::kUnrecoverable, "no valid catalog copy");

  LoadedMeta m;
  m.epoch = best->first.epoch;
  m.copy = best_copy;
  ByteReader body{best->second};
  m.state = CommittedState::decode(body);
  const u32 ngens = body.u32_();
  check(ngens == g.segment_count, ErrorCode::kCorruption, "generation table size mismatch");
  m.generations.resize(ngens);
  for (u32& v : m.generations) {
    v = body.u32_();
  }

  // Replay redo records of this epoch.
  std::vector<u8> area(g.redo_capacity());
  storage_.read_reserved(g.redo_offset(), area, TrafficClass::kRecoveryRead);
  u64 pos = 0;
  u64 seq = 0;
  while (pos + kRedoHeaderSize + kRedoTrailerSize <= area.size()) {
    const u32 len = load_u32(&area[pos]);
    if (len < kRedoHeaderSize + kRedoTrailerSize || pos + len > area.size()) {
      break;
    }
    const std::span<const u8> rec(&area[pos], len);
    if (crc64(rec.first(len - kRedoTrailerSize)) != load_u64(&rec[len - kRedoTrailerSize])) {
      break;
    }
    if (load_u64(&rec[4]) != m.epoch || load_u64(&rec[12]) != seq) {
      break;
    }
    ByteReader r{rec.subspan(kRedoHeaderSize, len - kRedoHeaderSize - kRedoTrailerSize)};
    const RedoRecord record = RedoRecord::decode(r, static_cast<RedoKind>(rec[20]));
    m.state.apply(record);
    for (SegRef s : record.segment_refs()) {
      if (s.id < m.generations.size()) {
        m.generations[s.id] = std::max(m.generations[s.id], s.gen);
      }
    }
    pos += len;
    ++seq;
  }
  m.redo_records = seq;
  for (const auto& [s, _] : m.state.owned()) {
    check(s.id < m.generations.size(), ErrorCode::kCorruption, "segment id out of range");
    m.generations[s.id] = std::max(m.generations[s.id], s.gen);
  }

  std::lock_guard lock{mu_};
  epoch_ = m.epoch;
  seq_ = seq;
  redo_pos_ = pos;
  state_ = m.state;
  return m;
}

void MetaStore::adopt(const LoadedMeta& m)
{
  std::lock_guard lock{mu_};
  state_ = m.state;
  epoch_ = m.epoch;
}

void MetaStore::append_locked(const std::vector<u8>& payload)
{
  // payload = [kind][body]
  const u64 len = 4 + 8 + 8 + payload.size() + kRedoTrailerSize;
  if (redo_pos_ + len > storage_.geometry().redo_capacity()) {
    // The state already includes this record; the catalog covers it.
    write_catalog_locked();
    return;
  }
  ByteWriter w;
  w.u32_(static_cast<u32>(len));
  w.u64_(epoch_);
  w.u64_(seq_);
  w.raw(payload);
  w.u64_(crc64(w.bytes()));
  storage_.write_reserved(storage_.geometry().redo_offset() + redo_pos_, w.bytes(),
                          TrafficClass::kMetadataWrite);
  storage_.sync();
  redo_pos_ += len;
  ++seq_;
}

void MetaStore::commit(const RedoRecord& r)
{
  std::lock_guard lock{mu_};
  ByteWriter w;
  w.u8_(static_cast<u8>(r.kind));
  r.encode(w);
  state_.apply(r);
  append_locked(w.bytes());
  if (after_commit_hook) {
    after_commit_hook();
  }
  storage_.release_pending_frees();
}

void MetaStore::checkpoint()
{
  std::lock_guard lock{mu_};
  write_catalog_locked();
  storage_.release_pending_frees();
}

CommittedState MetaStore::state() const
{
  std::lock_guard lock{mu_};
  return state_;
}

u64 MetaStore::epoch() const
{
  std::lock_guard lock{mu_};
  return epoch_;
}

u64 MetaStore::redo_bytes() const
{
  std::lock_guard lock{mu_};
  return redo_pos_;
}

u64 MetaStore::checkpoints() const
{
  std::lock_guard lock{mu_};
  return checkpoints_;
}

}  // namespace hkv
