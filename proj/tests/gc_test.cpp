#include "store_fixture.hpp"

#include <gtest/gtest.h>

namespace {

using namespace hkv;
using namespace hkv::testing;

EngineConfig gc_config()
{
  EngineConfig c = small_config();
  c.gc_after_compaction = false;
  return c;
}

u64 invalid_of(Store& s, SegmentId seg)
{
  for (const auto& g : s.stats().gc_segments) {
    if (g.segment == seg) {
      return g.invalid_bytes;
    }
  }
  return 0;
}

std::vector<SegRef> large_chain(Store& s, u16 region)
{
  return s.meta().state().region(region)->large_chain;
}

std::string large_value(std::mt19937_64& rng)
{
  return make_value(rng, 2);
}

TEST(GcTest, CountersAccumulate)
{
  Fixture f{gc_config()};
  Store& s = *f.store;
  std::mt19937_64 rng{1};
  s.put(make_key(1), large_value(rng));
  s.flush();
  const SegRef seg = large_chain(s, f.region).front();
  EXPECT_EQ(invalid_of(s, seg.id), 0u);
  s.record_invalidation(seg, 1024);
  EXPECT_EQ(invalid_of(s, seg.id), 1024u);
  s.record_invalidation(seg, 500);
  EXPECT_EQ(invalid_of(s, seg.id), 1524u);
  EXPECT_EQ(s.stats().gc_segments.size(), 1u);
  try {
    s.record_invalidation(seg, s.storage().segment_length());
    FAIL() << "counter past the segment length";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvariantViolation);
  }
}

TEST(GcTest, FullyShadowedSegmentsFreeWithoutRelocation)
{
  Fixture f{gc_config()};
  Store& s = *f.store;
  std::mt19937_64 rng{2};
  for (u64 i = 0; i < 80; ++i) {
    s.put(make_key(i), large_value(rng));
  }
  s.compact_all();
  const auto old_chain = large_chain(s, f.region);
  ASSERT_GE(old_chain.size(), 2u);
  // Small replacements leave the large log untouched from here on.
  for (u64 i = 0; i < 80; ++i) {
    s.put(make_key(i), "small");
  }
  s.compact_all();
  const auto before = s.metrics().snapshot();
  const u64 freed = s.gc_tick();
  const auto d = s.metrics().snapshot() - before;
  // The open tail segment stays.
  EXPECT_EQ(freed, old_chain.size() - 1);
  EXPECT_EQ(d.stat(Stat::kGcRelocations), 0u);
  EXPECT_EQ(d.stat(Stat::kGcReclaimedSegments), freed);
  EXPECT_EQ(large_chain(s, f.region).size(), 1u);
  for (u64 i = 0; i < 80; ++i) {
    ASSERT_EQ(s.get(make_key(i)), "small");
  }
  EXPECT_TRUE(s.fsck().ok());
}

TEST(GcTest, SegmentBelowThresholdIsUntouched)
{
  Fixture f{gc_config()};
  Store& s = *f.store;
  std::mt19937_64 rng{3};
  Oracle o;
  for (u64 i = 0; i < 80; ++i) {
    o[make_key(i)] = large_value(rng);
    s.put(make_key(i), o[make_key(i)]);
  }
  s.compact_all();
  const SegRef seg = large_chain(s, f.region).front();
  const u64 len = s.storage().segment_length();
  s.record_invalidation(seg, len / 20);
  EXPECT_EQ(s.gc_tick(0.10), 0u);
  EXPECT_EQ(large_chain(s, f.region).front(), seg);
  s.record_invalidation(seg, len / 10);
  const auto before = s.metrics().snapshot();
  EXPECT_EQ(s.gc_tick(0.10), 1u);
  // Nothing in it was really dead, so every entry moved.
  EXPECT_GT((s.metrics().snapshot() - before).stat(Stat::kGcRelocations), 0u);
  EXPECT_NE(large_chain(s, f.region).front(), seg);
  EXPECT_EQ(invalid_of(s, seg.id), 0u);
  for (const auto& [k, v] : o) {
    ASSERT_EQ(s.get(k), v);
  }
  EXPECT_TRUE(s.fsck().ok());
}

TEST(GcTest, InsertOnlyLoadHasNoGcCost)
{
  EngineConfig c = small_config();
  Fixture f{c};
  Store& s = *f.store;
  std::mt19937_64 rng{4};
  for (u64 i = 0; i < 6000; ++i) {
    s.put(make_key(i * 7919 % 100003), make_value(rng, static_cast<int>(i % 3)));
  }
  s.flush();
  const TrafficSnapshot t = s.metrics().snapshot();
  EXPECT_EQ(t.stat(Stat::kGcReclaimedSegments), 0u);
  const u64 gc = t.bytes(TrafficClass::kGcRead) + t.bytes(TrafficClass::kGcWrite);
  EXPECT_LT(static_cast<double>(gc), 0.01 * static_cast<double>(t.device_total()));
}

TEST(GcTest, ReclamationIsInvisibleToReaders)
{
  EngineConfig c = small_config();
  Fixture f{c};
  Store& s = *f.store;
  std::mt19937_64 rng{5};
  Oracle o;
  for (u64 i = 0; i < 12000; ++i) {
    const std::string k = make_key(rng() % 600);
    const unsigned dice = rng() % 10;
    if (dice == 0) {
      s.del(k);
      o.erase(k);
    } else {
      o[k] = make_value(rng, dice < 7 ? 2 : static_cast<int>(dice % 2));
      s.put(k, o[k]);
    }
  }
  const auto snapshot = s.scan("", 10000);
  ASSERT_EQ(snapshot, oracle_scan(o, "", 10000));
  EXPECT_GT(s.metrics().snapshot().stat(Stat::kGcReclaimedSegments), 0u);
  s.gc_tick(0.0);
  EXPECT_EQ(s.scan("", 10000), snapshot);
  s.compact_all();
  s.gc_tick(0.0);
  EXPECT_EQ(s.scan("", 10000), snapshot);
  for (const auto& [k, v] : o) {
    ASSERT_EQ(s.get(k), v);
  }
  const FsckReport rep = s.fsck();
  EXPECT_TRUE(rep.ok()) << rep.problems.front();
  f.reopen(c);
  EXPECT_EQ(f.store->scan("", 10000), snapshot);
}

TEST(GcTest, LargeLogStaysNearTheThresholdBound)
{
  EngineConfig c = small_config();
  Fixture f{c};
  Store& s = *f.store;
  std::mt19937_64 rng{6};
  Oracle o;
  for (u64 i = 0; i < 20000; ++i) {
    const std::string k = make_key(rng() % 400);
    o[k] = large_value(rng);
    s.put(k, o[k]);
  }
  s.compact_all();
  s.gc_tick();
  u64 live = 0;
  for (const auto& [k, v] : o) {
    live += k.size() + v.size();
  }
  const StoreStats st = s.stats();
  for (const auto& g : st.gc_segments) {
    EXPECT_LE(g.invalid_fraction, c.gc_threshold) << g.segment;
  }
  const double bound = 1.0 / (1.0 - c.gc_threshold) + static_cast<double>(st.segment_length) / live;
  EXPECT_LE(static_cast<double>(st.large_log_bytes) / live, bound);
}

}  // namespace
