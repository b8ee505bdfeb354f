#include "region.hpp"

#include <hkv/codec.hpp>

#include <map>

namespace hkv {

namespace {

u64 decode_be64(std::string_view k)
{
  u64 v = 0;
  for (size_t i = 0; i < 8; ++i) {
    v = (v << 8) | static_cast<u8>(k[i]);
  }
  return v;
}

std::string encode_counter(u64 v)
{
  std::string s(8, '\0');
  store_u64(reinterpret_cast<u8*>(s.data()), v);
  return s;
}

}  // namespace

void Store::record_invalidation(SegRef segment, u64 bytes)
{
  Region& g = region(kGcRegionId);
  const std::string key = gc_key(storage_->segment_offset(segment.id));
  {
    std::unique_lock lock{g.mu};
    const Lookup l = lookup_locked(g, key, TrafficClass::kGcRead, true);
    u64 counter = 0;
    if (l.found && !l.tombstone) {
      check(l.value.size() == 8, ErrorCode::kCorruption, "bad GC counter");
      counter = load_u64(reinterpret_cast<const u8*>(l.value.data()));
    }
    counter += bytes;
    check(counter <= storage_->segment_length(), ErrorCode::kInvariantViolation,
          "invalid bytes exceed the segment length");
    put_locked(g, key, encode_counter(counter), false, KvCategory::kSmall, TrafficClass::kGcWrite);
  }
  metrics_.note(Stat::kGcBytesInvalidated, bytes);
  after_foreground_op();
}

void Store::apply_invalidations(const std::vector<LogAddress>& invalid)
{
  if (invalid.empty()) {
    return;
  }
  std::map<std::pair<SegmentId, u32>, u64> per_segment;
  std::vector<LogAddress> reclaimed;
  for (const LogAddress& a : invalid) {
    const SegRef s{storage_->segment_of(a.offset), a.generation};
    if (storage_->is_live(s, OwnerKind::kLargeLog)) {
      per_segment[{s.id, s.gen}] += a.length;
    } else {
      reclaimed.push_back(a);
    }
  }
  for (const auto& [seg, bytes] : per_segment) {
    record_invalidation(SegRef{seg.first, seg.second}, bytes);
  }
  Region& g = region(kGcRegionId);
  {
    // A dropped reference into an already reclaimed segment was the last
    // one; its key no longer needs to be kept.
    std::unique_lock lock{g.mu};
    for (const LogAddress& a : reclaimed) {
      const std::string key = reclaimed_entry_key(a);
      const Lookup l = lookup_locked(g, key, TrafficClass::kGcRead, false);
      if (l.found && !l.tombstone) {
        put_locked(g, key, {}, true, KvCategory::kSmall, TrafficClass::kGcWrite);
      }
    }
  }
  g.small->flush(TrafficClass::kGcWrite);
}

std::vector<std::pair<SegmentId, u64>> Store::gc_counters()
{
  Region& g = region(kGcRegionId);
  std::shared_lock lock{g.mu};
  std::vector<std::pair<SegmentId, u64>> out;
  std::string start;
  constexpr size_t kBatch = 1024;
  for (;;) {
    const auto batch = scan_locked(g, start, kBatch, TrafficClass::kGcRead, false);
    for (const auto& kv : batch) {
      if (kv.key.size() != 8) {
        return out;  // reclaimed-entry keys sort after every counter
      }
      check(kv.value.size() == 8, ErrorCode::kCorruption, "bad GC counter");
      out.emplace_back(storage_->segment_of(decode_be64(kv.key)),
                       load_u64(reinterpret_cast<const u8*>(kv.value.data())));
    }
    if (batch.size() < kBatch) {
      return out;
    }
    start = batch.back().key + '\0';
  }
}

std::string Store::reclaimed_key(const LogAddress& addr, TrafficClass cls)
{
  Region& g = region(kGcRegionId);
  std::shared_lock lock{g.mu};
  const Lookup l = lookup_locked(g, reclaimed_entry_key(addr),
                                 cls == TrafficClass::kLookupRead ? TrafficClass::kGcRead : cls, true);
  if (!l.found || l.tombstone) {
    fail(ErrorCode::kStaleAddress, "reference into a reclaimed large-log segment");
  }
  return l.value;
}

bool Store::referenced_locked(Region& r, const std::string& key, const LogAddress& addr, bool* newest)
{
  bool first = true;
  auto visit = [&](SlotCode code, const LogAddress& ref) {
    const bool same = code == SlotCode::kLargeLogRef && ref == addr;
    if (first) {
      *newest = same;
      first = false;
    }
    return same;
  };
  for (const MemTable* t : {r.active.get(), r.frozen.get()}) {
    if (!t) {
      continue;
    }
    auto it = t->map.find(key);
    if (it != t->map.end() && visit(it->second.code, it->second.ref)) {
      return true;
    }
  }
  // Each address is held by at most one table or level, so the walk goes on
  // below the visible version until it finds it.
  RefReader reader{*this, r, TrafficClass::kGcRead, std::nullopt, {}};
  const KeyResolver resolve = reader.resolver();
  for (const auto& level : r.levels) {
    auto e = level->find(key, resolve, TrafficClass::kGcRead);
    if (e && visit(e->code, e->ref)) {
      return true;
    }
  }
  if (first) {
    *newest = false;
  }
  return false;
}

bool Store::reclaim_segment(u16 region_id, SegRef seg)
{
  Region& r = region(region_id);
  std::vector<std::pair<LogAddress, LogEntry>> entries;
  r.large->iterate_segment(
      seg, [&](const LogAddress& a, const LogEntry& e) { entries.emplace_back(a, e); },
      TrafficClass::kGcRead);

  std::vector<std::pair<LogAddress, std::string>> referenced;
  u64 relocated = 0;
  for (auto& [addr, e] : entries) {
    std::unique_lock lock{r.mu};
    bool newest = false;
    if (!referenced_locked(r, e.key, addr, &newest)) {
      continue;
    }
    referenced.emplace_back(addr, e.key);
    if (newest) {
      put_locked(r, e.key, e.value, false, KvCategory::kLarge, TrafficClass::kGcWrite);
      ++relocated;
    }
  }
  // Relocated copies have to survive a crash before the old ones go away.
  r.small->flush();
  r.large->flush(TrafficClass::kGcWrite);

  Region& g = region(kGcRegionId);
  {
    std::unique_lock lock{g.mu};
    for (const auto& [addr, key] : referenced) {
      put_locked(g, reclaimed_entry_key(addr), key, false, KvCategory::kSmall, TrafficClass::kGcWrite);
    }
    put_locked(g, gc_key(storage_->segment_offset(seg.id)), {}, true, KvCategory::kSmall,
               TrafficClass::kGcWrite);
  }
  g.small->flush(TrafficClass::kGcWrite);

  {
    std::unique_lock lock{r.mu};
    r.large->remove_segment(seg.id);
    storage_->free_segment(seg.id);
    RedoRecord rec;
    rec.kind = RedoKind::kGcReclaim;
    rec.region = region_id;
    rec.seg = seg;
    rec.freed = {seg};
    meta_->commit(rec);
  }
  metrics_.note(Stat::kGcRelocations, relocated);
  metrics_.note(Stat::kGcReclaimedSegments);
  return true;
}

u64 Store::gc_pass(double threshold)
{
  const u64 seg_len = storage_->segment_length();
  u64 freed = 0;
  std::vector<SegmentId> stale;
  for (const auto& [seg, invalid] : gc_counters()) {
    const Owner o = storage_->owner(seg);
    if (o.kind != OwnerKind::kLargeLog || o.region == kGcRegionId) {
      stale.push_back(seg);
      continue;
    }
    if (static_cast<double>(invalid) <= threshold * static_cast<double>(seg_len)) {
      continue;
    }
    Region& r = region(o.region);
    bool eligible = false;
    {
      // Only segments wholly before the replay start; later ones still
      // back L0 entries that recovery would replay.
      std::shared_lock lock{r.mu};
      if (r.large_from.valid()) {
        for (SegRef s : r.large->chain()) {
          if (s.id == r.large_from.segment) {
            break;
          }
          if (s.id == seg) {
            eligible = true;
            break;
          }
        }
      }
    }
    if (eligible && reclaim_segment(o.region, SegRef{seg, storage_->generation(seg)})) {
      ++freed;
    }
  }
  if (!stale.empty()) {
    Region& g = region(kGcRegionId);
    {
      std::unique_lock lock{g.mu};
      for (SegmentId seg : stale) {
        put_locked(g, gc_key(storage_->segment_offset(seg)), {}, true, KvCategory::kSmall,
                   TrafficClass::kGcWrite);
      }
    }
    g.small->flush(TrafficClass::kGcWrite);
  }
  return freed;
}

u64 Store::gc_tick(std::optional<double> threshold)
{
  rethrow_background_error();
  u64 n = 0;
  {
    std::lock_guard guard{maintenance_mu_};
    n = gc_pass(threshold.value_or(config_.gc_threshold));
  }
  after_foreground_op();
  return n;
}

}  // namespace hkv
