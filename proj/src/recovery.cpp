#include "region.hpp"
#include <array>

#include <algorithm>

namespace hkv {

void Store::recover()
{
  LoadedMeta m = meta_->load();
  storage_->load_ownership(m.state.owned(), m.generations);
  for (const RegionState& s : m.state.regions) {
    Region& r = add_region_runtime(s);
    for (const LevelDescriptor& d : s.levels) {
      r.levels.push_back(d.root == 0 ? std::make_shared<Level>(*storage_, d, std::vector<std::string>{},
                                                               std::vector<u64>{})
                                     : Level::open(*storage_, d, TrafficClass::kRecoveryRead));
    }
    r.small->restore(s.small_chain);
    r.large->restore(s.large_chain);
    r.watermark = s.watermark;
    r.small_from = s.small_from;
    r.large_from = s.large_from;
  }
  std::vector<Region*> all;
  {
    std::lock_guard lock{regions_mu_};
    for (auto& r : regions_) {
      all.push_back(r.get());
    }
  }
  for (Region* r : all) {
    replay_region(*r);
  }
  update_medium_footprint();
  meta_->checkpoint();
  for (Region* r : all) {
    std::unique_lock lock{r->mu};
    if (r->active->bytes >= l0_capacity(*r)) {
      freeze_locked(*r);
      schedule(r->id);
    }
  }
}

void Store::replay_region(Region& r)
{
  struct Item {
    bool large;
    LogAddress addr;
    LogEntry entry;
  };
  std::vector<Item> items;
  std::array<LogCursor, 2> end;  // small, large
  std::array<ValueLog*, 2> logs{r.small.get(), r.large.get()};
  std::array<LogCursor, 2> from{r.small_from, r.large_from};
  for (int i = 0; i < 2; ++i) {
    const auto chain = logs[i]->chain();
    if (!from[i].valid() && !chain.empty()) {
      from[i] = LogCursor{chain.front().id, 0};
    }
    end[i] = from[i];
    if (!from[i].valid()) {
      continue;
    }
    logs[i]->iterate(
        from[i],
        [&](const LogAddress& a, const LogEntry& e) {
          if (e.lsn > r.watermark) {
            items.push_back(Item{i == 1, a, e});
          }
        },
        TrafficClass::kRecoveryRead);
  }
  std::sort(items.begin(), items.end(),
            [](const Item& a, const Item& b) { return a.entry.lsn < b.entry.lsn; });

  // Apply the contiguous LSN run; anything after a gap never became durable
  // as a whole and is cut off.
  Lsn expect = r.watermark + 1;
  for (Item& it : items) {
    if (it.entry.lsn != expect) {
      break;
    }
    L0Entry e;
    e.lsn = it.entry.lsn;
    if (it.entry.op == OpKind::kDelete) {
      e.code = SlotCode::kTombstone;
    } else if (it.large) {
      e.code = SlotCode::kLargeLogRef;
      e.ref = it.addr;
    } else {
      e.code = in_place_code(it.entry.category);
      e.value = std::move(it.entry.value);
    }
    apply_to_l0(*r.active, it.entry.key, std::move(e));
    const SegmentId seg = storage_->segment_of(it.addr.offset);
    end[it.large ? 1 : 0] =
        LogCursor{seg, static_cast<u32>(it.addr.offset - storage_->segment_offset(seg) + it.addr.length)};
    ++expect;
  }
  r.next_lsn = expect;

  for (int i = 0; i < 2; ++i) {
    if (!end[i].valid()) {
      continue;
    }
    const auto chain = logs[i]->chain();
    auto at = std::find_if(chain.begin(), chain.end(), [&](SegRef s) { return s.id == end[i].segment; });
    if (at == chain.end()) {
      continue;
    }
    const SegRef kept = *at;
    const auto dropped = logs[i]->seal(end[i]);
    for (SegRef s : dropped) {
      storage_->free_segment(s.id);
    }
    RedoRecord rec;
    rec.kind = RedoKind::kLogTruncate;
    rec.region = r.id;
    rec.log = i == 0 ? LogId::kSmall : LogId::kLarge;
    rec.seg = kept;
    rec.freed = dropped;
    meta_->commit(rec);
  }
}

}  // namespace hkv
