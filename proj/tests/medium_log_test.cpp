#include "store_fixture.hpp"

#include <gtest/gtest.h>

#include <set>

namespace {

using namespace hkv;
using namespace hkv::testing;

const RegionState& state_of(Store& s, u16 region)
{
  static CommittedState keep;
  keep = s.meta().state();
  return *keep.region(region);
}

std::vector<SegRef> attached(Store& s, u16 region, u32 level)
{
  const RegionState& rs = state_of(s, region);
  std::vector<SegRef> out;
  if (level <= rs.levels.size()) {
    for (const auto& m : rs.levels[level - 1].medium) {
      out.push_back(m.seg);
    }
  }
  return out;
}

std::string medium_value(std::mt19937_64& rng)
{
  return make_value(rng, 1);
}

TEST(MediumLogTest, SegmentsTravelWithTheirLevel)
{
  EngineConfig c = small_config();
  Fixture f{c};
  Store& s = *f.store;
  std::mt19937_64 rng{1};
  // Small pairs first so the tree is three levels deep before any medium.
  u64 i = 0;
  while (state_of(s, f.region).levels.size() < 3) {
    s.put(make_key(i++), make_value(rng, 0));
  }
  u64 compactions_into_l1 = 0;
  std::vector<SegRef> last_l1;
  bool moved = false;
  for (u64 j = 0; j < 20000 && !moved; ++j) {
    const u64 before = s.metrics().snapshot().stat(Stat::kCompactions);
    s.put("m" + make_key(j), medium_value(rng));
    if (s.metrics().snapshot().stat(Stat::kCompactions) == before) {
      continue;
    }
    const auto l1 = attached(s, f.region, 1);
    if (l1.size() > last_l1.size()) {
      ++compactions_into_l1;
    } else if (l1.empty() && !last_l1.empty()) {
      // L1 was merged into L2; its transient segments now belong to L2.
      const auto l2 = attached(s, f.region, 2);
      const std::set<SegmentId> l2_ids = [&] {
        std::set<SegmentId> ids;
        for (SegRef r : l2) {
          ids.insert(r.id);
        }
        return ids;
      }();
      for (SegRef r : last_l1) {
        EXPECT_TRUE(l2_ids.contains(r.id)) << r.id;
        EXPECT_EQ(s.storage().owner(r.id), (Owner{OwnerKind::kMediumLog, 2, f.region}));
      }
      moved = true;
    }
    last_l1 = l1;
  }
  EXPECT_TRUE(moved);
  EXPECT_GE(compactions_into_l1, 2u);
  EXPECT_TRUE(s.fsck().ok());
}

TEST(MediumLogTest, MergeInPlaceEmptiesTheLog)
{
  Fixture f{small_config()};
  Store& s = *f.store;
  std::mt19937_64 rng{2};
  Oracle o;
  for (u64 i = 0; i < 3000; ++i) {
    const std::string k = make_key(rng() % 100000);
    o[k] = medium_value(rng);
    s.put(k, o[k]);
  }
  EXPECT_GT(s.stats().peak_medium_log_bytes, 0u);
  s.compact_all();
  const StoreStats st = s.stats();
  EXPECT_EQ(st.medium_log_bytes, 0u);
  for (const LevelStats& l : st.regions.at(1).levels) {
    EXPECT_EQ(l.medium_segments, 0u);
    EXPECT_EQ(l.counts.medium_refs, 0u);
  }
  for (SegmentId id = 0; id < s.storage().geometry().segment_count; ++id) {
    EXPECT_NE(s.storage().owner(id).kind, OwnerKind::kMediumLog);
  }
  const auto before = s.metrics().snapshot();
  for (const auto& [k, v] : o) {
    ASSERT_EQ(s.get(k), v);
  }
  EXPECT_EQ((s.metrics().snapshot() - before).stat(Stat::kGetLogReads), 0u);
}

// Bytes fetched while materializing everything still in the transient log,
// and what was in it.
struct MergeReads {
  u64 fetched = 0;
  u64 used = 0;
  u64 segments = 0;
};

MergeReads final_merge(bool sorted, u64 seed)
{
  EngineConfig c = small_config();
  c.sorted_l0_segments = sorted;
  c.medium_merge_level = MergeLevel::kNMinus2;
  Fixture f{c};
  Store& s = *f.store;
  std::mt19937_64 rng{seed};
  // A three-level tree keeps L0's mediums in the log until L2.
  u64 n = 0;
  while (s.meta().state().region(f.region)->levels.size() < 3) {
    s.put("s" + make_key(n++), make_value(rng, 0));
  }
  // Stop right after an L0 compaction so nothing medium is left in memory.
  for (u64 i = 0;; ++i) {
    s.put(make_key(rng() % 1000000), medium_value(rng));
    if (i >= 1500 && s.stats().regions.at(1).l0_entries == 0 && !attached(s, f.region, 1).empty()) {
      break;
    }
  }
  MergeReads m;
  const u64 before = s.metrics().snapshot().stat(Stat::kMediumMergeReadBytes);
  for (const RegionState& rs : s.meta().state().regions) {
    for (const auto& l : rs.levels) {
      for (const auto& a : l.medium) {
        m.used += a.used;
        ++m.segments;
      }
    }
  }
  s.compact_all();
  m.fetched = s.metrics().snapshot().stat(Stat::kMediumMergeReadBytes) - before;
  return m;
}

TEST(MediumLogTest, SortedSegmentsAreFetchedOnce)
{
  const MergeReads m = final_merge(true, 3);
  ASSERT_GT(m.segments, 0u);
  EXPECT_GE(m.fetched, m.used);
  EXPECT_LE(m.fetched, m.used + m.segments * 8 * kKiB);
}

TEST(MediumLogTest, UnsortedSegmentsCostScatteredReads)
{
  const MergeReads sorted = final_merge(true, 4);
  const MergeReads unsorted = final_merge(false, 4);
  EXPECT_EQ(sorted.used, unsorted.used);
  EXPECT_GT(unsorted.fetched, 2 * sorted.fetched);
}

TEST(MediumLogTest, SingleEntrySegmentIsTheSameEitherWay)
{
  u64 fetched[2];
  for (int sorted = 0; sorted < 2; ++sorted) {
    EngineConfig c = small_config();
    c.sorted_l0_segments = sorted == 1;
    c.medium_merge_level = MergeLevel::kNMinus2;
    Fixture f{c};
    Store& s = *f.store;
    std::mt19937_64 rng{5};
    // Build two levels of small pairs, then one lone medium above them.
    u64 i = 0;
    while (s.meta().state().region(f.region)->levels.size() < 3) {
      s.put(make_key(i++), make_value(rng, 0));
    }
    s.put("lone", medium_value(rng));
    const u64 before = s.metrics().snapshot().stat(Stat::kMediumMergeReadBytes);
    s.compact_all();
    fetched[sorted] = s.metrics().snapshot().stat(Stat::kMediumMergeReadBytes) - before;
  }
  EXPECT_GT(fetched[0], 0u);
  EXPECT_EQ(fetched[0], fetched[1]);
}

}  // namespace
