#include <hkv/level_index.hpp>

#include <algorithm>
#include <cstring>

namespace hkv {

namespace {

constexpr u8 kNodeMagic = 0x49;
constexpr u32 kNodeHeaderSize = 8;

struct Node {
  u8 height = 0;
  std::vector<u64> children;
  std::vector<std::string> pivots;  // children.size() - 1 entries
};

Node read_node(Storage& storage, u64 offset, TrafficClass cls)
{
  std::vector<u8> buf(kIndexNodeSize);
  storage.read_at(offset, buf, cls);
  check(buf[0] == kNodeMagic, ErrorCode::kCorruption, "bad index node magic");
  Node n;
  n.height = buf[1];
  const u16 count = load_u16(&buf[2]);
  const u32 used = load_u32(&buf[4]);
  check(count > 0 && used <= kIndexNodeSize, ErrorCode::kCorruption, "bad index node header");
  ByteReader r{std::span<const u8>(buf).subspan(kNodeHeaderSize, used - kNodeHeaderSize)};
  n.children.push_back(r.u64_());
  for (u16 i = 1; i < count; ++i) {
    const u16 klen = r.u16_();
    const auto key = r.raw(klen);
    n.pivots.emplace_back(reinterpret_cast<const char*>(key.data()), klen);
    n.children.push_back(r.u64_());
  }
  return n;
}

}  // namespace

void LevelCounts::add(const IndexEntry& e)
{
  ++entries;
  switch (e.code) {
    case SlotCode::kSmallInPlace:
      ++small;
      break;
    case SlotCode::kMediumInPlace:
      ++medium_in_place;
      break;
    case SlotCode::kLargeInPlace:
      ++large_in_place;
      break;
    case SlotCode::kMediumLogRef:
      ++medium_refs;
      break;
    case SlotCode::kLargeLogRef:
      ++large_refs;
      break;
    case SlotCode::kTombstone:
      ++tombstones;
      break;
  }
  stored_bytes += e.stored_bytes();
  resolved_bytes += e.resolved_bytes();
}

void LevelDescriptor::encode(ByteWriter& w) const
{
  w.u32_(static_cast<u32>(segments.size()));
  for (const SegRef& s : segments) {
    w.u32_(s.id);
    w.u32_(s.gen);
  }
  w.u32_(static_cast<u32>(medium.size()));
  for (const AttachedSegment& m : medium) {
    w.u32_(m.seg.id);
    w.u32_(m.seg.gen);
    w.u32_(m.used);
  }
  w.u64_(root);
  w.u8_(height);
  w.u32_(leaves);
  w.u32_(nodes);
  for (u64 v : {counts.entries, counts.tombstones, counts.small, counts.medium_in_place,
                counts.large_in_place, counts.medium_refs, counts.large_refs, counts.stored_bytes,
                counts.resolved_bytes}) {
    w.u64_(v);
  }
}

LevelDescriptor LevelDescriptor::decode(ByteReader& r)
{
  LevelDescriptor d;
  const u32 nsegs = r.u32_();
  check(nsegs <= r.remaining() / 8, ErrorCode::kCorruption, "level segment count out of range");
  for (u32 i = 0; i < nsegs; ++i) {
    const u32 id = r.u32_();
    d.segments.push_back(SegRef{id, r.u32_()});
  }
  const u32 nmed = r.u32_();
  check(nmed <= r.remaining() / 12, ErrorCode::kCorruption, "medium segment count out of range");
  for (u32 i = 0; i < nmed; ++i) {
    AttachedSegment m;
    m.seg.id = r.u32_();
    m.seg.gen = r.u32_();
    m.used = r.u32_();
    d.medium.push_back(m);
  }
  d.root = r.u64_();
  d.height = r.u8_();
  d.leaves = r.u32_();
  d.nodes = r.u32_();
  for (u64* v : {&d.counts.entries, &d.counts.tombstones, &d.counts.small,
                 &d.counts.medium_in_place, &d.counts.large_in_place, &d.counts.medium_refs,
                 &d.counts.large_refs, &d.counts.stored_bytes, &d.counts.resolved_bytes}) {
    *v = r.u64_();
  }
  return d;
}

std::string full_key(const IndexEntry& e, const KeyResolver& resolve)
{
  if (e.key_known) {
    return e.key;
  }
  check(static_cast<bool>(resolve), ErrorCode::kInvalidArgument, "log reference needs a resolver");
  return resolve(e);
}

int compare_entries(IndexEntry& a, IndexEntry& b, const KeyResolver& resolve)
{
  const int c = std::memcmp(a.prefix.data(), b.prefix.data(), kPrefixSize);
  if (c != 0) {
    return c < 0 ? -1 : 1;
  }
  for (IndexEntry* e : {&a, &b}) {
    if (!e->key_known) {
      e->key = full_key(*e, resolve);
      e->key_known = true;
    }
  }
  const int k = a.key.compare(b.key);
  return (k > 0) - (k < 0);
}

// ---- Level ----

Level::Level(Storage& storage, LevelDescriptor desc, std::vector<std::string> pivots,
             std::vector<u64> leaves)
    : storage_(storage), desc_(std::move(desc)), pivots_(std::move(pivots)),
      leaf_offsets_(std::move(leaves))
{
  check(pivots_.size() == leaf_offsets_.size(), ErrorCode::kInvariantViolation,
        "leaf directory size mismatch");
}

std::shared_ptr<const Level> Level::open(Storage& storage, LevelDescriptor desc, TrafficClass cls)
{
  std::vector<std::string> pivots;
  std::vector<u64> leaves;
  if (desc.root != 0) {
    auto walk = [&](auto& self, u64 offset, const std::string& lower, int expect) -> void {
      Node n = read_node(storage, offset, cls);
      check(expect < 0 || n.height == expect, ErrorCode::kCorruption, "index node height mismatch");
      for (size_t i = 0; i < n.children.size(); ++i) {
        const std::string& pivot = i == 0 ? lower : n.pivots[i - 1];
        if (n.height == 0) {
          pivots.push_back(pivot);
          leaves.push_back(n.children[i]);
        } else {
          self(self, n.children[i], pivot, n.height - 1);
        }
      }
    };
    walk(walk, desc.root, std::string{}, desc.height);
  }
  check(leaves.size() == desc.leaves, ErrorCode::kCorruption, "level leaf count mismatch");
  return std::make_shared<Level>(storage, std::move(desc), std::move(pivots), std::move(leaves));
}

u32 Level::leaf_for(std::string_view key) const
{
  auto it = std::upper_bound(pivots_.begin(), pivots_.end(), key,
                             [](std::string_view k, const std::string& p) { return k < p; });
  return static_cast<u32>(std::max<std::ptrdiff_t>(0, (it - pivots_.begin()) - 1));
}

Leaf Level::read_leaf(u32 i, TrafficClass cls) const
{
  std::vector<u8> buf(kLeafSize);
  storage_.read_at(leaf_offsets_.at(i), buf, cls);
  return Leaf{buf};
}

std::optional<IndexEntry> Level::find(std::string_view key, const KeyResolver& resolve,
                                      TrafficClass cls) const
{
  if (leaf_offsets_.empty()) {
    return std::nullopt;
  }
  const Leaf leaf = read_leaf(leaf_for(key), cls);
  const auto slot = leaf.find(key, resolve);
  if (!slot) {
    return std::nullopt;
  }
  IndexEntry e = leaf.entry(*slot);
  if (!e.key_known) {
    e.key.assign(key);
    e.key_known = true;
  }
  return e;
}

// ---- LevelCursor ----

LevelCursor::LevelCursor(std::shared_ptr<const Level> level, TrafficClass cls, Granularity g)
    : level_(std::move(level)), cls_(cls), granularity_(g)
{
}

void LevelCursor::load_leaf(u32 i)
{
  if (granularity_ == Granularity::kLeaf) {
    loaded_ = level_->read_leaf(i, cls_);
    return;
  }
  if (i < buffer_first_ || i >= buffer_first_ + buffer_count_) {
    Storage& storage = level_->storage();
    const SegmentId seg = storage.segment_of(level_->leaf_offset(i));
    u32 last = i;
    while (last + 1 < level_->leaf_count() &&
           storage.segment_of(level_->leaf_offset(last + 1)) == seg) {
      ++last;
    }
    buffer_first_ = i;
    buffer_count_ = last - i + 1;
    buffer_.resize(static_cast<size_t>(buffer_count_) * kLeafSize);
    storage.read_at(level_->leaf_offset(i), buffer_, cls_);
  }
  const size_t at = static_cast<size_t>(i - buffer_first_) * kLeafSize;
  loaded_.emplace(std::span<const u8>(buffer_).subspan(at, kLeafSize));
}

void LevelCursor::settle()
{
  while (leaf_ < level_->leaf_count()) {
    if (slot_ < loaded_->size()) {
      current_ = loaded_->entry(slot_);
      valid_ = true;
      return;
    }
    ++leaf_;
    slot_ = 0;
    if (leaf_ < level_->leaf_count()) {
      load_leaf(leaf_);
    }
  }
  valid_ = false;
}

void LevelCursor::seek_first()
{
  leaf_ = 0;
  slot_ = 0;
  valid_ = false;
  if (level_->leaf_count() == 0) {
    return;
  }
  load_leaf(0);
  settle();
}

void LevelCursor::seek(std::string_view start, const KeyResolver& resolve)
{
  valid_ = false;
  if (level_->leaf_count() == 0) {
    return;
  }
  leaf_ = level_->leaf_for(start);
  load_leaf(leaf_);
  slot_ = loaded_->lower_bound(start, resolve);
  settle();
}

void LevelCursor::next()
{
  ++slot_;
  settle();
}

// ---- LevelBuilder ----

LevelBuilder::LevelBuilder(Storage& storage, Owner owner, KeyResolver resolve, TrafficClass cls)
    : storage_(storage), owner_(owner), resolve_(std::move(resolve)), cls_(cls)
{
}

LevelBuilder::~LevelBuilder()
{
  try {
    abort();
  } catch (...) {
  }
}

u64 LevelBuilder::place(u64 size)
{
  if (segments_.empty() || storage_.segment_length() - seg_cursor_ < size) {
    flush_pending();
    segments_.push_back(storage_.allocate(owner_));
    seg_cursor_ = 0;
  }
  const u64 off = storage_.segment_offset(segments_.back().id) + seg_cursor_;
  seg_cursor_ += size;
  if (pending_.empty()) {
    pending_at_ = off;
  }
  return off;
}

void LevelBuilder::flush_pending()
{
  if (!pending_.empty()) {
    storage_.write_at(pending_at_, pending_, cls_);
    pending_.clear();
  }
}

void LevelBuilder::seal_leaf()
{
  const u64 off = place(kLeafSize);
  const auto bytes = leaf_.bytes();
  pending_.insert(pending_.end(), bytes.begin(), bytes.end());
  pivots_.push_back(std::move(leaf_first_));
  leaves_.push_back(off);
  if (pending_.size() >= kLogChunkSize) {
    flush_pending();
  }
  leaf_ = Leaf{};
}

void LevelBuilder::add(IndexEntry e)
{
  check(!done_, ErrorCode::kInvariantViolation, "level builder already finished");
  if (have_last_ && compare_entries(last_, e, resolve_) >= 0) {
    fail(ErrorCode::kInvariantViolation, "level input is not strictly ascending");
  }
  if (!leaf_.append(e)) {
    seal_leaf();
    check(leaf_.append(e), ErrorCode::kInvariantViolation, "entry does not fit an empty leaf");
  }
  if (leaf_.size() == 1) {
    leaf_first_ = leaves_.empty() ? std::string{} : full_key(e, resolve_);
  }
  counts_.add(e);
  e.value.clear();
  last_ = std::move(e);
  have_last_ = true;
}

std::shared_ptr<const Level> LevelBuilder::finish()
{
  check(!done_, ErrorCode::kInvariantViolation, "level builder already finished");
  if (leaf_.size() > 0) {
    seal_leaf();
  }
  LevelDescriptor desc;
  desc.counts = counts_;
  desc.leaves = static_cast<u32>(leaves_.size());
  if (!leaves_.empty()) {
    std::vector<std::pair<std::string, u64>> children;
    children.reserve(leaves_.size());
    for (size_t i = 0; i < leaves_.size(); ++i) {
      children.emplace_back(pivots_[i], leaves_[i]);
    }
    u8 height = 0;
    for (;;) {
      std::vector<std::pair<std::string, u64>> parents;
      size_t i = 0;
      while (i < children.size()) {
        ByteWriter w;
        w.u8_(kNodeMagic);
        w.u8_(height);
        w.u16_(0);
        w.u32_(0);
        w.u64_(children[i].second);
        const std::string& lower = children[i].first;
        u16 count = 1;
        ++i;
        while (i < children.size() &&
               w.size() + 2 + children[i].first.size() + 8 <= kIndexNodeSize && count < 0xFFFF) {
          w.u16_(static_cast<u16>(children[i].first.size()));
          w.raw(as_bytes(children[i].first));
          w.u64_(children[i].second);
          ++count;
          ++i;
        }
        std::vector<u8>& node = w.bytes();
        store_u16(&node[2], count);
        store_u32(&node[4], static_cast<u32>(node.size()));
        node.resize(kIndexNodeSize, 0);
        const u64 off = place(kIndexNodeSize);
        pending_.insert(pending_.end(), node.begin(), node.end());
        if (pending_.size() >= kLogChunkSize) {
          flush_pending();
        }
        parents.emplace_back(lower, off);
        ++desc.nodes;
      }
      if (parents.size() == 1) {
        desc.root = parents[0].second;
        desc.height = height;
        break;
      }
      children = std::move(parents);
      ++height;
    }
  }
  flush_pending();
  desc.segments = segments_;
  done_ = true;
  return std::make_shared<Level>(storage_, std::move(desc), std::move(pivots_), std::move(leaves_));
}

void LevelBuilder::abort()
{
  if (done_) {
    return;
  }
  done_ = true;
  for (const SegRef& s : segments_) {
    storage_.free_segment(s.id);
  }
  segments_.clear();
}

}  // namespace hkv
