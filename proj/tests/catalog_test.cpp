#include <hkv/catalog.hpp>
#include <hkv/device.hpp>

#include <gtest/gtest.h>

namespace {

using namespace hkv;

constexpr u64 kDevice = 32 * kMiB;
constexpr u64 kSeg = 256 * kKiB;

struct Store {
  explicit Store(std::shared_ptr<Device> dev)
      : device(std::move(dev)), storage(device, Geometry::plan(kDevice, kSeg), metrics), meta(storage, metrics)
  {
  }
  Metrics metrics;
  std::shared_ptr<Device> device;
  Storage storage;
  MetaStore meta;
};

RedoRecord create(u16 id)
{
  RedoRecord r;
  r.kind = RedoKind::kRegionCreate;
  r.region = id;
  r.name = "r" + std::to_string(id);
  r.lo = "a";
  r.hi = "m";
  return r;
}

RedoRecord extend(u16 region, LogId log, SegRef s)
{
  RedoRecord r;
  r.kind = RedoKind::kLogExtend;
  r.region = region;
  r.log = log;
  r.seg = s;
  r.allocated = {s};
  return r;
}

RedoRecord compaction(u16 region, SegRef level_seg, LogCursor small_from)
{
  RedoRecord r;
  r.kind = RedoKind::kCompaction;
  r.region = region;
  r.level_count = 1;
  LevelDescriptor d;
  d.segments = {level_seg};
  d.root = 12345;
  d.leaves = 3;
  d.nodes = 1;
  d.counts.entries = 77;
  d.medium.push_back(AttachedSegment{SegRef{20, 3}, 4000});
  r.levels.emplace_back(0, d);
  r.from_l0 = true;
  r.watermark = 500;
  r.small_from = small_from;
  r.large_from = LogCursor{};
  return r;
}

TEST(RedoRecordTest, RoundTripEveryKind)
{
  RedoRecord c = compaction(3, SegRef{9, 2}, LogCursor{11, 4096});
  c.freed = {SegRef{4, 1}};
  std::vector<RedoRecord> all = {create(3), extend(3, LogId::kLarge, SegRef{7, 5}), c};
  RedoRecord t;
  t.kind = RedoKind::kLogTruncate;
  t.region = 3;
  t.seg = SegRef{8, 1};
  all.push_back(t);
  RedoRecord g;
  g.kind = RedoKind::kGcReclaim;
  g.region = 3;
  g.seg = SegRef{7, 5};
  all.push_back(g);
  for (const auto& r : all) {
    ByteWriter w;
    r.encode(w);
    ByteReader rd{w.bytes()};
    const RedoRecord back = RedoRecord::decode(rd, r.kind);
    EXPECT_EQ(rd.remaining(), 0u);
    ByteWriter w2;
    back.encode(w2);
    EXPECT_EQ(w2.bytes(), w.bytes()) << to_string(r.kind);
  }
}

TEST(CommittedStateTest, ApplyIsIdempotent)
{
  const std::vector<RedoRecord> recs = {create(1), extend(1, LogId::kSmall, SegRef{10, 1}),
                                        extend(1, LogId::kSmall, SegRef{11, 1}),
                                        compaction(1, SegRef{12, 1}, LogCursor{11, 100})};
  CommittedState once;
  CommittedState twice;
  for (const auto& r : recs) {
    once.apply(r);
    twice.apply(r);
    twice.apply(r);
  }
  EXPECT_EQ(once, twice);
  const RegionState* reg = once.region(1);
  ASSERT_NE(reg, nullptr);
  // The small-log segment before the replay start was dropped.
  EXPECT_EQ(reg->small_chain, (std::vector<SegRef>{SegRef{11, 1}}));
  EXPECT_EQ(reg->watermark, 500u);
  EXPECT_EQ(once.owned().size(), 3u);  // small log, level, attached medium
}

TEST(MetaStoreTest, FormatCommitReload)
{
  auto dev = std::make_shared<MemoryDevice>(kDevice);
  {
    Store s{dev};
    s.meta.format({});
    s.meta.commit(create(1));
    const SegRef a = s.storage.allocate(Owner::log_of(1, OwnerKind::kSmallLog));
    s.meta.commit(extend(1, LogId::kSmall, a));
  }
  Store s{dev};
  const auto geo = MetaStore::probe(*dev);
  ASSERT_TRUE(geo.has_value());
  EXPECT_EQ(geo->segment_length, kSeg);
  const LoadedMeta m = s.meta.load();
  EXPECT_EQ(m.epoch, 1u);
  EXPECT_EQ(m.redo_records, 2u);
  ASSERT_NE(m.state.region(1), nullptr);
  ASSERT_EQ(m.state.region(1)->small_chain.size(), 1u);
  EXPECT_EQ(m.generations[m.state.region(1)->small_chain[0].id], 1u);
}

TEST(MetaStoreTest, CheckpointMovesToTheOtherCopyAndKillsOldRedo)
{
  auto dev = std::make_shared<MemoryDevice>(kDevice);
  {
    Store s{dev};
    s.meta.format({});
    s.meta.commit(create(1));
    s.meta.checkpoint();
    EXPECT_EQ(s.meta.epoch(), 2u);
    EXPECT_EQ(s.meta.redo_bytes(), 0u);
    s.meta.commit(create(2));
    s.meta.checkpoint();
    s.meta.commit(create(3));
  }
  Store s{dev};
  const LoadedMeta m = s.meta.load();
  EXPECT_EQ(m.epoch, 3u);
  EXPECT_EQ(m.copy, 0);
  EXPECT_EQ(m.redo_records, 1u);
  EXPECT_EQ(m.state.regions.size(), 3u);
}

TEST(MetaStoreTest, TornRedoTailIsIgnored)
{
  auto dev = std::make_shared<FaultInjectingDevice>(kDevice);
  Store s{dev};
  s.meta.format({});
  s.meta.commit(create(1));
  const u64 good = s.meta.redo_bytes();
  s.meta.commit(create(2));
  const u64 sz = s.meta.redo_bytes() - good;
  for (u64 cut = 0; cut < sz; cut += 3) {
    std::vector<u8> img = dev->crash_image(0);
    const u64 base = s.storage.geometry().redo_offset() + good;
    std::fill(img.begin() + static_cast<std::ptrdiff_t>(base + cut),
              img.begin() + static_cast<std::ptrdiff_t>(base + sz), 0);
    Store r{std::make_shared<MemoryDevice>(std::move(img))};
    const LoadedMeta m = r.meta.load();
    EXPECT_EQ(m.redo_records, 1u) << cut;
    EXPECT_EQ(m.state.regions.size(), 1u);
  }
}

TEST(MetaStoreTest, CorruptCopyAFallsBackToCopyB)
{
  auto dev = std::make_shared<MemoryDevice>(kDevice);
  {
    Store s{dev};
    s.meta.format({});
    s.meta.commit(create(1));
    s.meta.checkpoint();  // epoch 2 in copy B
    s.meta.commit(create(2));
    s.meta.checkpoint();  // epoch 3 in copy A
  }
  std::vector<u8> junk(64, 0xEE);
  dev->write(100, junk);  // damage copy A
  const auto geo = MetaStore::probe(*dev);
  ASSERT_TRUE(geo.has_value());
  EXPECT_EQ(geo->segment_length, kSeg);
  Store s{dev};
  const LoadedMeta m = s.meta.load();
  EXPECT_EQ(m.epoch, 2u);
  EXPECT_EQ(m.copy, 1);
  // Nothing of epoch 3 overwrote the epoch-2 redo yet, so replaying it on
  // copy B reaches the same state copy A had.
  EXPECT_EQ(m.state.regions.size(), 2u);
  EXPECT_EQ(m.redo_records, 1u);
}

TEST(MetaStoreTest, NoCatalogIsUnrecoverable)
{
  auto dev = std::make_shared<MemoryDevice>(kDevice);
  EXPECT_FALSE(MetaStore::probe(*dev).has_value());
  Store s{dev};
  try {
    (void)s.meta.load();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnrecoverable);
  }
}

TEST(MetaStoreTest, FreedSegmentsBecomeReusableOnlyAfterCommit)
{
  auto dev = std::make_shared<MemoryDevice>(kDevice);
  Store s{dev};
  s.meta.format({});
  s.meta.commit(create(1));
  const SegRef a = s.storage.allocate(Owner::level_of(1, 1));
  s.storage.free_segment(a.id);
  bool pending_at_hook = false;
  s.meta.after_commit_hook = [&] { pending_at_hook = s.storage.pending_free_count() == 1; };
  s.meta.commit(create(2));
  EXPECT_TRUE(pending_at_hook);
  EXPECT_EQ(s.storage.pending_free_count(), 0u);
}

TEST(MetaStoreTest, FullRedoAreaForcesCheckpoint)
{
  auto dev = std::make_shared<MemoryDevice>(kDevice);
  Store s{dev};
  s.meta.format({});
  s.meta.commit(create(1));
  const u64 before = s.meta.checkpoints();
  for (int i = 0; i < 60000 && s.meta.checkpoints() == before; ++i) {
    s.meta.commit(extend(1, LogId::kSmall, SegRef{static_cast<u32>(10 + i % 50), static_cast<u32>(i)}));
  }
  EXPECT_GT(s.meta.checkpoints(), before);
  Store r{dev};
  EXPECT_EQ(r.meta.load().state, s.meta.state());
}

}  // namespace
