#include "region.hpp"

#include <hkv/codec.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace hkv {

namespace {

// Set while the current thread runs compactions or GC, so puts issued from
// inside (relocations, GC-region updates) do not start another round.
thread_local bool t_in_maintenance = false;

struct MaintenanceScope {
  bool saved = t_in_maintenance;
  MaintenanceScope()
  {
    t_in_maintenance = true;
  }
  ~MaintenanceScope()
  {
    t_in_maintenance = saved;
  }
};

u64 align_down(u64 v, u64 unit)
{
  return v / unit * unit;
}

u64 align_up(u64 v, u64 unit)
{
  return (v + unit - 1) / unit * unit;
}

// Materializes medium references during merge-in-place. Each attached
// segment is read forward in fixed units; bytes already fetched are reused
// and the window only grows at its end unless the merge jumps backwards.
class MediumFetcher
{
 public:
  MediumFetcher(Storage& storage, Metrics& metrics, u16 region)
      : storage_(storage), metrics_(metrics), region_(region)
  {
  }

  IndexEntry materialize(const IndexEntry& e)
  {
    const SegmentId seg = storage_.segment_of(e.ref.offset);
    if (!storage_.is_live(SegRef{seg, e.ref.generation}, OwnerKind::kMediumLog)) {
      fail(ErrorCode::kStaleAddress, "medium reference into a reclaimed segment");
    }
    Window& w = windows_[seg];
    const u64 base = storage_.segment_offset(seg);
    const u64 end = base + storage_.segment_length();
    const u64 lo = e.ref.offset;
    const u64 hi = lo + e.ref.length;
    check(hi <= end, ErrorCode::kCorruption, "medium reference crosses a segment");
    const u64 have_end = w.base + w.bytes.size();
    if (w.bytes.empty() || lo < w.base || hi > have_end) {
      if (!w.bytes.empty() && lo >= w.base && lo <= have_end) {
        // Sequential consumption: drop what is behind, fetch what is ahead.
        const u64 keep = base + align_down(lo - base, kMediumReadUnit);
        w.bytes.erase(w.bytes.begin(), w.bytes.begin() + static_cast<std::ptrdiff_t>(keep - w.base));
        w.base = keep;
        const u64 to = std::min(end, base + align_up(hi - base, kMediumReadUnit));
        const size_t at = w.bytes.size();
        w.bytes.resize(to - w.base);
        read(have_end, std::span<u8>(w.bytes).subspan(at));
      } else {
        w.base = base + align_down(lo - base, kMediumReadUnit);
        const u64 to = std::min(end, base + align_up(hi - base, kMediumReadUnit));
        w.bytes.resize(to - w.base);
        read(w.base, w.bytes);
      }
    }
    LogEntry entry;
    u32 len = 0;
    const auto st = decode_entry(std::span<const u8>(w.bytes).subspan(lo - w.base),
                                 entry_salt(region_, LogId::kMedium, e.ref.generation), &entry, &len);
    if (st != DecodeStatus::kOk || len != e.ref.length) {
      fail(ErrorCode::kCorruption, "medium log entry checksum mismatch");
    }
    return IndexEntry::in_place(KvCategory::kMedium, std::move(entry.key), std::move(entry.value));
  }

 private:
  struct Window {
    u64 base = 0;
    std::vector<u8> bytes;
  };

  void read(u64 offset, std::span<u8> out)
  {
    if (out.empty()) {
      return;
    }
    storage_.read_at(offset, out, TrafficClass::kCompactionRead);
    metrics_.note(Stat::kMediumMergeReadBytes, out.size());
  }

  Storage& storage_;
  Metrics& metrics_;
  u16 region_;
  std::unordered_map<SegmentId, Window> windows_;
};

}  // namespace

// ---- small helpers ----

std::string_view to_string(MergeLevel m) noexcept
{
  return m == MergeLevel::kNMinus1 ? "n-1" : "n-2";
}

MergeLevel parse_merge_level(std::string_view s)
{
  if (s == "n-1" || s == "N-1" || s == "n1") {
    return MergeLevel::kNMinus1;
  }
  if (s == "n-2" || s == "N-2" || s == "n2") {
    return MergeLevel::kNMinus2;
  }
  fail(ErrorCode::kInvalidArgument, "unknown merge level: " + std::string{s});
}

void EngineConfig::validate() const
{
  check(growth_factor >= 2, ErrorCode::kInvalidArgument, "growth factor must be at least 2");
  check(l0_capacity >= 4 * kLeafSize, ErrorCode::kInvalidArgument, "L0 capacity too small");
  check(gc_threshold > 0 && gc_threshold < 1, ErrorCode::kInvalidArgument,
        "gc threshold must be in (0, 1)");
  check(segment_length >= kMinSegmentLength && segment_length <= kMaxSegmentLength &&
            segment_length % kMinSegmentLength == 0,
        ErrorCode::kInvalidArgument, "segment length out of range");
  effective_thresholds().validate();
}

CategoryThresholds EngineConfig::effective_thresholds() const
{
  return thresholds ? *thresholds : CategoryThresholds::for_policy(policy);
}

IndexEntry to_index_entry(const std::string& key, const L0Entry& e)
{
  switch (e.code) {
    case SlotCode::kTombstone:
      return IndexEntry::tombstone(key);
    case SlotCode::kLargeLogRef:
      return IndexEntry::log_ref(LogId::kLarge, key, e.ref);
    default:
      return IndexEntry::in_place(category_of(e.code), key, e.value);
  }
}

void apply_to_l0(MemTable& t, const std::string& key, L0Entry e)
{
  const u64 charge = e.charge(key.size());
  t.max_lsn = std::max(t.max_lsn, e.lsn);
  auto it = t.map.find(key);
  if (it != t.map.end()) {
    if (it->second.code == SlotCode::kLargeLogRef) {
      t.invalidated.push_back(it->second.ref);
    }
    t.bytes -= it->second.charge(key.size());
    it->second = std::move(e);
  } else {
    t.map.emplace(key, std::move(e));
  }
  t.bytes += charge;
}

std::string gc_key(u64 segment_offset)
{
  std::string k(8, '\0');
  for (int i = 0; i < 8; ++i) {
    k[i] = static_cast<char>(segment_offset >> (56 - 8 * i));
  }
  return k;
}

std::string reclaimed_entry_key(const LogAddress& addr)
{
  std::string k = std::string(1, kReclaimedKeyTag) + gc_key(addr.offset);
  for (int i = 0; i < 4; ++i) {
    k.push_back(static_cast<char>(addr.generation >> (24 - 8 * i)));
  }
  return k;
}

const LogEntry& RefReader::entry(const LogAddress& addr)
{
  auto it = cache.find(addr.offset);
  if (it == cache.end()) {
    it = cache.emplace(addr.offset, region.log(addr.log).read_entry(addr, cls)).first;
    if (stat) {
      store.metrics_.note(*stat);
    }
  }
  return it->second;
}

std::string RefReader::key(const IndexEntry& e)
{
  if (e.code == SlotCode::kLargeLogRef && !region.large->resolvable(e.ref)) {
    return store.reclaimed_key(e.ref, cls);
  }
  return entry(e.ref).key;
}

// ---- lifecycle ----

Store::Store(std::shared_ptr<Device> device, EngineConfig config, Geometry geo)
    : device_(std::move(device)), config_(std::move(config)),
      thresholds_(config_.effective_thresholds())
{
  storage_ = std::make_unique<Storage>(device_, geo, metrics_);
  meta_ = std::make_unique<MetaStore>(*storage_, metrics_);
}

std::unique_ptr<Store> Store::create(std::shared_ptr<Device> device, EngineConfig config)
{
  config.validate();
  const Geometry geo = Geometry::plan(device->size(), config.segment_length);
  std::unique_ptr<Store> s{new Store(std::move(device), config, geo)};
  CommittedState state;
  RegionState gc;
  gc.id = kGcRegionId;
  gc.name = "gc";
  state.regions.push_back(gc);
  s->meta_->format(state);
  s->add_region_runtime(gc);
  s->start_worker();
  return s;
}

std::unique_ptr<Store> Store::open(std::shared_ptr<Device> device, EngineConfig config)
{
  const auto geo = MetaStore::probe(*device);
  check(geo.has_value(), ErrorCode::kUnrecoverable, "no valid catalog on device");
  config.segment_length = geo->segment_length;
  config.validate();
  std::unique_ptr<Store> s{new Store(std::move(device), config, *geo)};
  s->recover();
  s->start_worker();
  if (s->config_.deterministic) {
    s->run_pending();
  }
  return s;
}

Store::~Store()
{
  try {
    close();
  } catch (...) {
  }
  stop_worker();
}

void Store::start_worker()
{
  if (!config_.deterministic) {
    worker_ = std::thread([this] { worker_loop(); });
  }
}

void Store::stop_worker()
{
  {
    std::lock_guard lock{queue_mu_};
    stop_ = true;
  }
  queue_cv_.notify_all();
  if (worker_.joinable()) {
    worker_.join();
  }
}

void Store::close()
{
  if (closed_) {
    return;
  }
  closed_ = true;
  std::exception_ptr err;
  try {
    wait_idle();
  } catch (...) {
    err = std::current_exception();
  }
  stop_worker();
  if (err) {
    std::rethrow_exception(err);
  }
  flush();
  meta_->checkpoint();
}

// ---- regions ----

Region& Store::region(u16 id) const
{
  std::lock_guard lock{regions_mu_};
  check(id < regions_.size() && regions_[id], ErrorCode::kInvalidArgument, "unknown region");
  return *regions_[id];
}

Region& Store::user_region(u16 id) const
{
  check(id != kGcRegionId, ErrorCode::kInvalidArgument, "the GC region is internal");
  return region(id);
}

Region& Store::add_region_runtime(const RegionState& s)
{
  auto r = std::make_unique<Region>();
  r->id = s.id;
  r->name = s.name;
  r->lo = s.lo;
  r->hi = s.hi;
  auto hook = [this, id = s.id](LogId log) {
    return [this, id, log](SegRef seg) {
      RedoRecord rec;
      rec.kind = RedoKind::kLogExtend;
      rec.region = id;
      rec.log = log;
      rec.seg = seg;
      rec.allocated = {seg};
      meta_->commit(rec);
    };
  };
  r->small = std::make_unique<ValueLog>(*storage_, metrics_, s.id, LogId::kSmall, hook(LogId::kSmall));
  r->medium = std::make_unique<ValueLog>(*storage_, metrics_, s.id, LogId::kMedium);
  r->large = std::make_unique<ValueLog>(*storage_, metrics_, s.id, LogId::kLarge, hook(LogId::kLarge));
  std::lock_guard lock{regions_mu_};
  if (regions_.size() <= s.id) {
    regions_.resize(s.id + 1);
  }
  check(!regions_[s.id], ErrorCode::kInvariantViolation, "region id in use");
  regions_[s.id] = std::move(r);
  return *regions_[s.id];
}

u16 Store::create_region(const std::string& name, const std::string& lo, const std::string& hi)
{
  check(!name.empty() && name != "gc", ErrorCode::kInvalidArgument, "bad region name");
  check(hi.empty() || lo < hi, ErrorCode::kInvalidArgument, "empty key range");
  RegionState s;
  {
    std::lock_guard lock{regions_mu_};
    for (size_t i = 1; i < regions_.size(); ++i) {
      const Region& r = *regions_[i];
      check(r.name != name, ErrorCode::kInvalidArgument, "region name in use");
      const bool disjoint = (!hi.empty() && hi <= r.lo) || (!r.hi.empty() && r.hi <= lo);
      check(disjoint, ErrorCode::kInvalidArgument, "region key ranges overlap");
    }
    check(regions_.size() < 0xFFFF, ErrorCode::kOutOfSpace, "too many regions");
    s.id = static_cast<u16>(regions_.size());
  }
  s.name = name;
  s.lo = lo;
  s.hi = hi;
  RedoRecord rec;
  rec.kind = RedoKind::kRegionCreate;
  rec.region = s.id;
  rec.name = name;
  rec.lo = lo;
  rec.hi = hi;
  meta_->commit(rec);
  add_region_runtime(s);
  return s.id;
}

std::optional<u16> Store::find_region(std::string_view name) const
{
  std::lock_guard lock{regions_mu_};
  for (size_t i = 1; i < regions_.size(); ++i) {
    if (regions_[i]->name == name) {
      return static_cast<u16>(i);
    }
  }
  return std::nullopt;
}

u16 Store::region_for(std::string_view key) const
{
  std::lock_guard lock{regions_mu_};
  for (size_t i = 1; i < regions_.size(); ++i) {
    if (regions_[i]->contains(key)) {
      return static_cast<u16>(i);
    }
  }
  fail(ErrorCode::kInvalidArgument, "no region holds the key");
}

std::vector<u16> Store::region_ids() const
{
  std::lock_guard lock{regions_mu_};
  std::vector<u16> out;
  for (size_t i = 1; i < regions_.size(); ++i) {
    out.push_back(static_cast<u16>(i));
  }
  return out;
}

std::shared_ptr<const Level> Store::empty_level() const
{
  return std::make_shared<Level>(*storage_, LevelDescriptor{}, std::vector<std::string>{},
                                 std::vector<u64>{});
}

u64 Store::l0_capacity(const Region& r) const
{
  return r.id == kGcRegionId ? std::min(config_.l0_capacity, kGcRegionL0Cap) : config_.l0_capacity;
}

u64 Store::level_capacity(const Region& r, u32 level) const
{
  u64 cap = l0_capacity(r);
  for (u32 i = 0; i < level; ++i) {
    if (cap > UINT64_MAX / config_.growth_factor) {
      return UINT64_MAX;
    }
    cap *= config_.growth_factor;
  }
  return cap;
}

KvCategory Store::category_for(const Region& r, size_t key_len, size_t value_len) const
{
  if (r.id == kGcRegionId) {
    return KvCategory::kSmall;
  }
  const KvCategory c = classify(key_len, value_len, thresholds_, config_.classify_mode);
  if (c != KvCategory::kLarge && key_len + value_len > kMaxInPlacePair) {
    return KvCategory::kLarge;
  }
  return c;
}

// ---- writes ----

void Store::put(std::string_view key, std::string_view value)
{
  put(region_for(key), key, value);
}

void Store::del(std::string_view key)
{
  del(region_for(key), key);
}

std::optional<std::string> Store::get(std::string_view key)
{
  return get(region_for(key), key);
}

std::vector<KeyValue> Store::scan(std::string_view start, size_t count)
{
  return scan(region_for(start), start, count);
}

void Store::put(u16 id, std::string_view key, std::string_view value)
{
  Region& r = user_region(id);
  check(r.contains(key), ErrorCode::kInvalidArgument, "key outside the region range");
  put_internal(r, key, value, false);
  metrics_.count(OpVerb::kPut);
  metrics_.add_app_in(key.size() + value.size());
  after_foreground_op();
}

void Store::del(u16 id, std::string_view key)
{
  Region& r = user_region(id);
  check(r.contains(key), ErrorCode::kInvalidArgument, "key outside the region range");
  put_internal(r, key, {}, true);
  metrics_.count(OpVerb::kDelete);
  metrics_.add_app_in(key.size());
  after_foreground_op();
}

void Store::put_internal(Region& r, std::string_view key, std::string_view value, bool tombstone)
{
  check(!key.empty() && key.size() <= kMaxKeySize, ErrorCode::kInvalidArgument,
        "key must be 1..4096 bytes");
  const KvCategory cat = tombstone ? KvCategory::kSmall : category_for(r, key.size(), value.size());
  check(encoded_size(key.size(), value.size()) <= storage_->segment_length(),
        ErrorCode::kInvalidArgument, "value does not fit a segment");
  rethrow_background_error();
  std::unique_lock lock{r.mu};
  if (!config_.deterministic) {
    // One frozen table at a time: writers wait for its compaction.
    r.cv.wait(lock, [&] {
      return r.active->bytes < l0_capacity(r) || !r.frozen || failed_.load();
    });
    rethrow_background_error();
  }
  put_locked(r, key, value, tombstone, cat, TrafficClass::kLogAppend);
}

void Store::put_locked(Region& r, std::string_view key, std::string_view value, bool tombstone,
                       KvCategory category, TrafficClass cls)
{
  std::string k{key};
  const Lsn lsn = r.next_lsn;
  OpKind op = OpKind::kDelete;
  if (!tombstone) {
    op = r.active->map.contains(k) ? OpKind::kUpdate : OpKind::kInsert;
  }
  LogEntry e{lsn, op, category, k, tombstone ? std::string{} : std::string{value}};
  const bool large = !tombstone && category == KvCategory::kLarge;
  const LogAddress addr = (large ? *r.large : *r.small).append(e, cls);
  ++r.next_lsn;

  L0Entry entry;
  entry.lsn = lsn;
  if (tombstone) {
    entry.code = SlotCode::kTombstone;
  } else if (large) {
    entry.code = SlotCode::kLargeLogRef;
    entry.ref = addr;
  } else {
    entry.code = in_place_code(category);
    entry.value = std::move(e.value);
  }
  apply_to_l0(*r.active, k, std::move(entry));
  if (r.active->bytes >= l0_capacity(r) && !r.frozen) {
    freeze_locked(r);
    schedule(r.id);
  }
}

void Store::freeze_locked(Region& r)
{
  auto t = std::move(r.active);
  // Replay has to start where this table's ops end.
  t->small_from = r.small->chain().empty() ? LogCursor{} : r.small->open_tail();
  t->large_from = r.large->chain().empty() ? LogCursor{} : r.large->open_tail();
  r.frozen = std::move(t);
  r.active = std::make_shared<MemTable>();
}

void Store::flush()
{
  rethrow_background_error();
  std::vector<Region*> all;
  {
    std::lock_guard lock{regions_mu_};
    for (auto& r : regions_) {
      all.push_back(r.get());
    }
  }
  for (Region* r : all) {
    r->small->flush();
    r->large->flush();
  }
}

void Store::checkpoint()
{
  std::lock_guard guard{maintenance_mu_};
  meta_->checkpoint();
}

// ---- maintenance ----

void Store::schedule(u16 id)
{
  {
    std::lock_guard lock{queue_mu_};
    if (queued_.insert(id).second) {
      queue_.push_back(id);
    }
  }
  queue_cv_.notify_all();
}

void Store::after_foreground_op()
{
  if (config_.deterministic && !t_in_maintenance) {
    run_pending();
  }
}

void Store::run_pending()
{
  MaintenanceScope scope;
  std::lock_guard guard{maintenance_mu_};
  for (;;) {
    u16 id = 0;
    {
      std::lock_guard lock{queue_mu_};
      if (queue_.empty()) {
        return;
      }
      id = queue_.front();
      queue_.pop_front();
      queued_.erase(id);
      busy_ = true;
    }
    try {
      run_region(region(id));
    } catch (...) {
      std::lock_guard lock{queue_mu_};
      busy_ = false;
      throw;
    }
    {
      std::lock_guard lock{queue_mu_};
      busy_ = false;
    }
    queue_cv_.notify_all();
  }
}

void Store::worker_loop()
{
  t_in_maintenance = true;
  for (;;) {
    u16 id = 0;
    {
      std::unique_lock lock{queue_mu_};
      queue_cv_.wait(lock, [&] { return stop_ || (!queue_.empty() && !failed_); });
      if (stop_) {
        return;
      }
      id = queue_.front();
      queue_.pop_front();
      queued_.erase(id);
      busy_ = true;
    }
    try {
      std::lock_guard guard{maintenance_mu_};
      run_region(region(id));
    } catch (...) {
      std::lock_guard lock{queue_mu_};
      background_error_ = std::current_exception();
      failed_ = true;
    }
    {
      std::lock_guard lock{queue_mu_};
      busy_ = false;
    }
    queue_cv_.notify_all();
    if (failed_) {
      // Wake writers stalled on a frozen table so they see the error.
      std::lock_guard lock{regions_mu_};
      for (auto& r : regions_) {
        r->cv.notify_all();
      }
    }
  }
}

void Store::rethrow_background_error()
{
  if (!failed_) {
    return;
  }
  std::lock_guard lock{queue_mu_};
  if (background_error_) {
    std::rethrow_exception(background_error_);
  }
}

void Store::wait_idle()
{
  if (config_.deterministic) {
    if (!t_in_maintenance) {
      run_pending();
    }
    return;
  }
  {
    std::unique_lock lock{queue_mu_};
    queue_cv_.wait(lock, [&] { return (queue_.empty() && !busy_) || failed_ || stop_; });
  }
  rethrow_background_error();
}

void Store::run_region(Region& r)
{
  bool compacted = false;
  for (;;) {
    std::vector<LogAddress> invalidated;
    const bool did = compact_step(r, invalidated);
    apply_invalidations(invalidated);
    if (!did) {
      break;
    }
    compacted = true;
  }
  if (compacted && r.id != kGcRegionId && config_.gc_after_compaction) {
    gc_pass(config_.gc_threshold);
  }
}

bool Store::compact_step(Region& r, std::vector<LogAddress>& invalidated)
{
  std::vector<std::shared_ptr<const Level>> levels;
  bool frozen = false;
  {
    std::unique_lock lock{r.mu};
    if (!r.frozen && r.active->bytes >= l0_capacity(r)) {
      freeze_locked(r);
    }
    frozen = r.frozen != nullptr;
    levels = r.levels;
  }
  if (frozen) {
    merge_into(r, 0, invalidated);
    return true;
  }
  // The last level never triggers by itself; it grows when something is
  // merged into it while full.
  for (u32 i = 1; i < levels.size(); ++i) {
    if (levels[i - 1]->descriptor().counts.resolved_bytes >= level_capacity(r, i)) {
      merge_into(r, i, invalidated);
      return true;
    }
  }
  return false;
}

void Store::merge_into(Region& r, u32 src, std::vector<LogAddress>& invalidated)
{
  std::shared_ptr<MemTable> frozen;
  std::vector<std::shared_ptr<const Level>> levels;
  {
    std::shared_lock lock{r.mu};
    frozen = r.frozen;
    levels = r.levels;
  }
  check(src > 0 || frozen != nullptr, ErrorCode::kInvariantViolation, "no frozen L0 to compact");
  check(src <= levels.size(), ErrorCode::kInvariantViolation, "source level out of range");

  u32 count = static_cast<u32>(levels.size());
  const u32 dst = src + 1;
  const std::shared_ptr<const Level> src_level = src > 0 ? levels[src - 1] : nullptr;
  std::shared_ptr<const Level> dst_level = dst <= count ? levels[dst - 1] : nullptr;
  bool moved = false;
  if (dst > count) {
    count = dst;
  } else if (dst == count && !dst_level->descriptor().empty() &&
             dst_level->descriptor().counts.stored_bytes >= level_capacity(r, dst)) {
    // The last level is full: it moves down unchanged and becomes the new
    // last level.
    moved = true;
    ++count;
  }
  const std::shared_ptr<const Level> merge_dst = moved ? nullptr : dst_level;
  const u32 merge_level =
      config_.medium_merge_level == MergeLevel::kNMinus1 ? count : std::max<u32>(1, count - 1);
  const bool materialize = dst >= merge_level;
  const bool last = dst == count;

  RefReader keys{*this, r, TrafficClass::kCompactionRead, std::nullopt, {}};
  const KeyResolver resolve = [&keys](const IndexEntry& e) {
    if (e.code == SlotCode::kMediumLogRef) {
      return keys.region.medium->read_key(e.ref, TrafficClass::kCompactionRead);
    }
    if (keys.region.large->resolvable(e.ref)) {
      return keys.region.large->read_key(e.ref, TrafficClass::kCompactionRead);
    }
    return keys.key(e);
  };

  // L0 source: mediums go to the transient log unless they merge in place.
  std::vector<IndexEntry> l0;
  if (src == 0) {
    std::unordered_map<const std::string*, LogAddress> medium_addr;
    if (!materialize) {
      std::vector<std::pair<const std::string*, const L0Entry*>> mediums;
      for (const auto& [k, e] : frozen->map) {
        if (e.code == SlotCode::kMediumInPlace) {
          mediums.emplace_back(&k, &e);
        }
      }
      if (!config_.sorted_l0_segments) {
        std::sort(mediums.begin(), mediums.end(),
                  [](const auto& a, const auto& b) { return a.second->lsn < b.second->lsn; });
      }
      try {
        for (const auto& [k, e] : mediums) {
          LogEntry le{e->lsn, OpKind::kInsert, KvCategory::kMedium, *k, e->value};
          medium_addr[k] = r.medium->append(le, TrafficClass::kCompactionWrite);
        }
      } catch (...) {
        for (SegRef s : r.medium->take_chain()) {
          storage_->free_segment(s.id);
        }
        throw;
      }
    }
    l0.reserve(frozen->map.size());
    for (const auto& [k, e] : frozen->map) {
      if (e.code == SlotCode::kMediumInPlace && !materialize) {
        l0.push_back(IndexEntry::log_ref(LogId::kMedium, k, medium_addr.at(&k)));
      } else {
        l0.push_back(to_index_entry(k, e));
      }
    }
  }

  LevelBuilder builder{*storage_, level_owner(r.id, dst - 1), resolve};
  std::vector<AttachedSegment> new_medium;
  std::shared_ptr<const Level> built;
  try {
    MediumFetcher fetcher{*storage_, metrics_, r.id};
    auto emit = [&](IndexEntry e) {
      if (last && e.code == SlotCode::kTombstone) {
        return;
      }
      if (materialize && e.code == SlotCode::kMediumLogRef) {
        e = fetcher.materialize(e);
      }
      builder.add(std::move(e));
    };

    std::optional<LevelCursor> sc;
    std::optional<LevelCursor> dc;
    size_t l0_pos = 0;
    if (src_level) {
      sc.emplace(src_level, TrafficClass::kCompactionRead, LevelCursor::Granularity::kSegment);
      sc->seek_first();
    }
    if (merge_dst) {
      dc.emplace(merge_dst, TrafficClass::kCompactionRead, LevelCursor::Granularity::kSegment);
      dc->seek_first();
    }
    auto src_valid = [&] { return src == 0 ? l0_pos < l0.size() : sc->valid(); };
    auto src_entry = [&]() -> IndexEntry& { return src == 0 ? l0[l0_pos] : sc->entry(); };
    auto src_next = [&] {
      if (src == 0) {
        ++l0_pos;
      } else {
        sc->next();
      }
    };
    auto dst_valid = [&] { return dc && dc->valid(); };

    while (src_valid() || dst_valid()) {
      if (!dst_valid()) {
        emit(std::move(src_entry()));
        src_next();
        continue;
      }
      if (!src_valid()) {
        emit(std::move(dc->entry()));
        dc->next();
        continue;
      }
      IndexEntry& s = src_entry();
      IndexEntry& d = dc->entry();
      const int c = compare_entries(s, d, resolve);
      if (c < 0) {
        emit(std::move(s));
        src_next();
      } else if (c > 0) {
        emit(std::move(d));
        dc->next();
      } else {
        if (d.code == SlotCode::kLargeLogRef) {
          invalidated.push_back(d.ref);
        }
        emit(std::move(s));
        src_next();
        dc->next();
      }
    }
    built = builder.finish();

    if (src == 0 && !materialize) {
      r.medium->flush(TrafficClass::kCompactionWrite);
      const auto used = r.medium->used_bytes();
      const auto chain = r.medium->take_chain();
      for (size_t i = 0; i < chain.size(); ++i) {
        new_medium.push_back(AttachedSegment{chain[i], used[i]});
      }
    }
    if (src == 0) {
      // L1 refers to large-log entries by address; they must be durable
      // before the level is.
      r.large->flush();
    }
    storage_->sync();
  } catch (...) {
    builder.abort();
    for (SegRef s : r.medium->take_chain()) {
      storage_->free_segment(s.id);
    }
    for (const auto& m : new_medium) {
      storage_->free_segment(m.seg.id);
    }
    throw;
  }

  LevelDescriptor desc = built->descriptor();
  std::vector<AttachedSegment> freed_medium;
  std::vector<AttachedSegment> carried;
  if (src_level) {
    const auto& m = src_level->descriptor().medium;
    carried.insert(carried.end(), m.begin(), m.end());
  }
  if (merge_dst) {
    const auto& m = merge_dst->descriptor().medium;
    carried.insert(carried.end(), m.begin(), m.end());
  }
  if (materialize) {
    freed_medium = std::move(carried);
  } else {
    desc.medium = std::move(carried);
    desc.medium.insert(desc.medium.end(), new_medium.begin(), new_medium.end());
  }

  RedoRecord rec;
  rec.kind = RedoKind::kCompaction;
  rec.region = r.id;
  rec.level_count = count;
  rec.allocated = desc.segments;
  for (const auto& m : new_medium) {
    rec.allocated.push_back(m.seg);
  }
  if (src_level) {
    rec.levels.emplace_back(src - 1, LevelDescriptor{});
    rec.freed = src_level->descriptor().segments;
  }
  rec.levels.emplace_back(dst - 1, desc);
  if (moved) {
    rec.levels.emplace_back(dst, dst_level->descriptor());
  }
  if (merge_dst) {
    const auto& segs = merge_dst->descriptor().segments;
    rec.freed.insert(rec.freed.end(), segs.begin(), segs.end());
  }
  for (const auto& m : freed_medium) {
    rec.freed.push_back(m.seg);
  }
  std::vector<SegRef> small_dropped;
  if (src == 0) {
    rec.from_l0 = true;
    rec.watermark = frozen->max_lsn;
    rec.small_from = frozen->small_from;
    rec.large_from = frozen->large_from;
    if (frozen->small_from.valid()) {
      for (SegRef s : r.small->chain()) {
        if (s.id == frozen->small_from.segment) {
          break;
        }
        small_dropped.push_back(s);
      }
    }
    rec.freed.insert(rec.freed.end(), small_dropped.begin(), small_dropped.end());
  }

  {
    std::unique_lock lock{r.mu};
    for (SegRef s : rec.freed) {
      if (std::find(small_dropped.begin(), small_dropped.end(), s) != small_dropped.end()) {
        r.small->remove_segment(s.id);
      }
      storage_->free_segment(s.id);
    }
    const Owner dst_medium{OwnerKind::kMediumLog, static_cast<u8>(dst), r.id};
    for (const auto& m : desc.medium) {
      storage_->retag(m.seg.id, dst_medium);
    }
    if (moved) {
      const Owner below = level_owner(r.id, dst);
      for (SegRef s : dst_level->descriptor().segments) {
        storage_->retag(s.id, below);
      }
      for (const auto& m : dst_level->descriptor().medium) {
        storage_->retag(m.seg.id, Owner{OwnerKind::kMediumLog, below.level, r.id});
      }
    }
    meta_->commit(rec);

    r.levels.resize(count, nullptr);
    for (auto& l : r.levels) {
      if (!l) {
        l = empty_level();
      }
    }
    if (src_level) {
      r.levels[src - 1] = empty_level();
    }
    r.levels[dst - 1] = built->with_descriptor(desc);
    if (moved) {
      r.levels[dst] = dst_level;
    }
    if (src == 0) {
      r.frozen.reset();
      r.watermark = std::max(r.watermark, rec.watermark);
      r.small_from = rec.small_from;
      r.large_from = rec.large_from;
    }
  }
  r.cv.notify_all();
  if (src == 0) {
    invalidated.insert(invalidated.end(), frozen->invalidated.begin(), frozen->invalidated.end());
  }
  metrics_.note(Stat::kCompactions);
  if (moved) {
    metrics_.note(Stat::kTrivialMoves);
  }
  update_medium_footprint();
}

void Store::update_medium_footprint()
{
  u64 total = 0;
  std::lock_guard lock{regions_mu_};
  for (auto& r : regions_) {
    std::shared_lock rl{r->mu};
    for (const auto& l : r->levels) {
      for (const auto& m : l->descriptor().medium) {
        total += m.used;
      }
    }
  }
  medium_bytes_ = total;
  u64 peak = peak_medium_bytes_.load();
  while (total > peak && !peak_medium_bytes_.compare_exchange_weak(peak, total)) {
  }
}

void Store::compact_all()
{
  wait_idle();
  {
    MaintenanceScope scope;
    std::lock_guard guard{maintenance_mu_};
    std::vector<Region*> order;
    {
      std::lock_guard lock{regions_mu_};
      for (size_t i = 1; i < regions_.size(); ++i) {
        order.push_back(regions_[i].get());
      }
      order.push_back(regions_[kGcRegionId].get());
    }
    for (Region* r : order) {
      std::vector<LogAddress> invalidated;
      {
        std::unique_lock lock{r->mu};
        if (!r->frozen && !r->active->map.empty()) {
          freeze_locked(*r);
        }
      }
      bool frozen = false;
      {
        std::shared_lock lock{r->mu};
        frozen = r->frozen != nullptr;
      }
      if (frozen) {
        merge_into(*r, 0, invalidated);
      }
      for (u32 i = 1;; ++i) {
        std::shared_ptr<const Level> level;
        {
          std::shared_lock lock{r->mu};
          if (i >= r->levels.size()) {
            break;
          }
          level = r->levels[i - 1];
        }
        if (!level->descriptor().empty()) {
          merge_into(*r, i, invalidated);
        }
      }
      apply_invalidations(invalidated);
    }
  }
  wait_idle();
}

// ---- reads ----

Store::Lookup Store::lookup_locked(Region& r, std::string_view key, TrafficClass cls, bool fetch_value)
{
  const bool foreground = cls == TrafficClass::kLookupRead;
  Lookup out;
  auto from_l0 = [&](const L0Entry& e) {
    out.found = true;
    out.code = e.code;
    out.tombstone = e.code == SlotCode::kTombstone;
    if (e.code == SlotCode::kLargeLogRef) {
      out.ref = e.ref;
      if (fetch_value) {
        out.value = r.large->read_entry(e.ref, cls).value;
        if (foreground) {
          metrics_.note(Stat::kGetLogReads);
        }
      }
    } else {
      out.value = e.value;
    }
    return out;
  };
  for (const MemTable* t : {r.active.get(), r.frozen.get()}) {
    if (t) {
      auto it = t->map.find(key);
      if (it != t->map.end()) {
        return from_l0(it->second);
      }
    }
  }
  RefReader reader{*this, r, cls,
                   foreground ? std::optional<Stat>{Stat::kGetLogReads} : std::nullopt, {}};
  const KeyResolver resolve = reader.resolver();
  for (const auto& level : r.levels) {
    auto e = level->find(key, resolve, cls);
    if (!e) {
      continue;
    }
    out.found = true;
    out.code = e->code;
    out.tombstone = e->code == SlotCode::kTombstone;
    if (is_log_ref(e->code)) {
      out.ref = e->ref;
      if (fetch_value) {
        out.value = reader.entry(e->ref).value;
      }
    } else {
      out.value = std::move(e->value);
    }
    return out;
  }
  return out;
}

std::optional<std::string> Store::get(u16 id, std::string_view key)
{
  Region& r = user_region(id);
  Lookup l;
  {
    std::shared_lock lock{r.mu};
    l = lookup_locked(r, key, TrafficClass::kLookupRead, true);
  }
  metrics_.count(OpVerb::kGet);
  if (!l.found || l.tombstone) {
    return std::nullopt;
  }
  metrics_.add_app_out(l.value.size());
  return std::move(l.value);
}

std::vector<KeyValue> Store::scan(u16 id, std::string_view start, size_t count)
{
  Region& r = user_region(id);
  std::vector<KeyValue> out;
  {
    std::shared_lock lock{r.mu};
    out = scan_locked(r, start, count, TrafficClass::kLookupRead, true);
  }
  metrics_.count(OpVerb::kScan);
  u64 bytes = 0;
  for (const auto& kv : out) {
    bytes += kv.key.size() + kv.value.size();
  }
  metrics_.add_app_out(bytes);
  return out;
}

std::vector<KeyValue> Store::scan_locked(Region& r, std::string_view start, size_t count,
                                         TrafficClass cls, bool foreground)
{
  std::vector<KeyValue> out;
  if (count == 0) {
    return out;
  }
  RefReader reader{*this, r, cls,
                   foreground ? std::optional<Stat>{Stat::kScanLogReads} : std::nullopt, {}};
  const KeyResolver resolve = reader.resolver();

  // Sources in precedence order: active, frozen, L1, L2, ...
  struct Source {
    using MapIt = std::map<std::string, L0Entry, std::less<>>::const_iterator;
    MapIt it;
    MapIt end;
    const L0Entry* l0 = nullptr;
    std::optional<LevelCursor> cursor;
    IndexEntry current;
    bool valid = false;
  };
  std::vector<Source> sources;
  auto settle_map = [](Source& s) {
    s.valid = s.it != s.end;
    if (s.valid) {
      s.l0 = &s.it->second;
      s.current.prefix = make_prefix(s.it->first);
      s.current.key = s.it->first;
      s.current.key_known = true;
    }
  };
  for (const MemTable* t : {r.active.get(), r.frozen.get()}) {
    if (t) {
      Source s;
      s.it = t->map.lower_bound(start);
      s.end = t->map.end();
      settle_map(s);
      sources.push_back(std::move(s));
    }
  }
  const size_t first_level = sources.size();
  for (const auto& level : r.levels) {
    if (level->leaf_count() == 0) {
      continue;
    }
    Source s;
    s.cursor.emplace(level, cls, LevelCursor::Granularity::kLeaf);
    s.cursor->seek(start, resolve);
    sources.push_back(std::move(s));
  }
  auto entry_of = [&](size_t i) -> IndexEntry& {
    return i < first_level ? sources[i].current : sources[i].cursor->entry();
  };
  auto valid = [&](size_t i) {
    return i < first_level ? sources[i].valid : sources[i].cursor->valid();
  };
  auto advance = [&](size_t i) {
    if (i < first_level) {
      ++sources[i].it;
      settle_map(sources[i]);
    } else {
      sources[i].cursor->next();
    }
  };

  while (out.size() < count) {
    std::optional<size_t> best;
    std::vector<size_t> ties;
    for (size_t i = 0; i < sources.size(); ++i) {
      if (!valid(i)) {
        continue;
      }
      if (!best) {
        best = i;
        continue;
      }
      const int c = compare_entries(entry_of(i), entry_of(*best), resolve);
      if (c < 0) {
        best = i;
        ties.clear();
      } else if (c == 0) {
        ties.push_back(i);
      }
    }
    if (!best) {
      break;
    }
    const size_t b = *best;
    IndexEntry& e = entry_of(b);
    std::string key = full_key(e, resolve);
    std::optional<std::string> value;
    if (b < first_level) {
      const L0Entry& le = *sources[b].l0;
      if (le.code == SlotCode::kLargeLogRef) {
        value = reader.entry(le.ref).value;
      } else if (le.code != SlotCode::kTombstone) {
        value = le.value;
      }
    } else if (is_log_ref(e.code)) {
      value = reader.entry(e.ref).value;
    } else if (e.code != SlotCode::kTombstone) {
      value = e.value;
    }
    if (value) {
      out.push_back(KeyValue{std::move(key), std::move(*value)});
    }
    advance(b);
    for (size_t i : ties) {
      advance(i);
    }
  }
  return out;
}

// ---- stats ----

StoreStats Store::stats()
{
  StoreStats s;
  s.traffic = metrics_.snapshot();
  s.segment_length = storage_->segment_length();
  s.owned_segments = storage_->owned_count();
  s.free_segments = storage_->free_count();
  s.medium_log_bytes = medium_bytes_;
  s.peak_medium_log_bytes = peak_medium_bytes_;
  s.checkpoints = meta_->checkpoints();
  for (const auto& [id, owner] : storage_->owned_segments()) {
    if (owner.kind == OwnerKind::kLargeLog && owner.region != kGcRegionId) {
      s.large_log_bytes += storage_->segment_length();
    }
  }
  std::vector<Region*> all;
  {
    std::lock_guard lock{regions_mu_};
    for (auto& r : regions_) {
      all.push_back(r.get());
    }
  }
  for (Region* r : all) {
    std::shared_lock lock{r->mu};
    RegionStats rs;
    rs.id = r->id;
    rs.name = r->name;
    rs.l0_entries = r->active->map.size() + (r->frozen ? r->frozen->map.size() : 0);
    rs.l0_bytes = r->active->bytes + (r->frozen ? r->frozen->bytes : 0);
    rs.l0_frozen = r->frozen != nullptr;
    rs.next_lsn = r->next_lsn;
    rs.watermark = r->watermark;
    rs.small_log_segments = r->small->chain().size();
    rs.large_log_segments = r->large->chain().size();
    for (u32 i = 0; i < r->levels.size(); ++i) {
      const auto& d = r->levels[i]->descriptor();
      LevelStats ls;
      ls.level = i + 1;
      ls.segments = d.segments.size();
      ls.medium_segments = d.medium.size();
      for (const auto& m : d.medium) {
        ls.medium_bytes += m.used;
      }
      ls.counts = d.counts;
      rs.levels.push_back(ls);
    }
    s.regions.push_back(std::move(rs));
  }
  {
    std::lock_guard guard{maintenance_mu_};
    for (const auto& [seg, invalid] : gc_counters()) {
      s.gc_segments.push_back(GcSegmentStats{
          seg, invalid, static_cast<double>(invalid) / static_cast<double>(storage_->segment_length())});
    }
  }
  return s;
}

std::string StoreStats::to_text() const
{
  std::ostringstream out;
  out << hkv::to_text(traffic);
  out << "segment_length=" << segment_length << "\n";
  out << "owned_segments=" << owned_segments << "\n";
  out << "free_segments=" << free_segments << "\n";
  out << "medium_log_bytes=" << medium_log_bytes << "\n";
  out << "peak_medium_log_bytes=" << peak_medium_log_bytes << "\n";
  out << "large_log_bytes=" << large_log_bytes << "\n";
  out << "checkpoints=" << checkpoints << "\n";
  for (const auto& r : regions) {
    const std::string p = "region." + std::to_string(r.id) + ".";
    out << p << "name=" << r.name << "\n";
    out << p << "l0_entries=" << r.l0_entries << "\n";
    out << p << "l0_bytes=" << r.l0_bytes << "\n";
    out << p << "next_lsn=" << r.next_lsn << "\n";
    out << p << "watermark=" << r.watermark << "\n";
    out << p << "small_log_segments=" << r.small_log_segments << "\n";
    out << p << "large_log_segments=" << r.large_log_segments << "\n";
    for (const auto& l : r.levels) {
      const std::string q = p + "L" + std::to_string(l.level) + ".";
      out << q << "segments=" << l.segments << "\n";
      out << q << "medium_segments=" << l.medium_segments << "\n";
      out << q << "medium_bytes=" << l.medium_bytes << "\n";
      out << q << "entries=" << l.counts.entries << "\n";
      out << q << "tombstones=" << l.counts.tombstones << "\n";
      out << q << "medium_refs=" << l.counts.medium_refs << "\n";
      out << q << "large_refs=" << l.counts.large_refs << "\n";
      out << q << "stored_bytes=" << l.counts.stored_bytes << "\n";
      out << q << "resolved_bytes=" << l.counts.resolved_bytes << "\n";
    }
  }
  for (const auto& g : gc_segments) {
    out << "gc.segment." << g.segment << ".invalid_bytes=" << g.invalid_bytes << "\n";
  }
  return out.str();
}

double Store::space_amplification()
{
  wait_idle();
  u64 live = 0;
  for (u16 id : region_ids()) {
    Region& r = region(id);
    std::shared_lock lock{r.mu};
    std::string start;
    for (;;) {
      auto batch = scan_locked(r, start, 4096, TrafficClass::kLookupRead, false);
      for (const auto& kv : batch) {
        live += kv.key.size() + kv.value.size();
      }
      if (batch.size() < 4096) {
        break;
      }
      start = batch.back().key + '\0';
    }
  }
  if (live == 0) {
    return 0;
  }
  return static_cast<double>(storage_->owned_count()) * static_cast<double>(storage_->segment_length()) /
         static_cast<double>(live);
}

}  // namespace hkv
