#include <hkv/bench.hpp>
#include <hkv/workload.hpp>

#include <gtest/gtest.h>

#include <map>
#include <set>
#include <sstream>

namespace {

using namespace hkv;

std::vector<WorkloadOp> drain(const WorkloadSpec& s, Phase p)
{
  Workload w{s, p};
  std::vector<WorkloadOp> out;
  while (auto op = w.next()) {
    out.push_back(std::move(*op));
  }
  return out;
}

TEST(WorkloadTest, MixNames)
{
  EXPECT_EQ(SizeMix::parse("SD"), (SizeMix{60, 20, 20}));
  EXPECT_EQ(SizeMix::parse("MD"), (SizeMix{20, 60, 20}));
  EXPECT_EQ(SizeMix::parse("LD"), (SizeMix{20, 20, 60}));
  EXPECT_EQ(SizeMix::parse("S"), (SizeMix{100, 0, 0}));
  EXPECT_EQ(SizeMix::parse("10-30-60"), (SizeMix{10, 30, 60}));
  EXPECT_THROW(SizeMix::parse("10-30-50"), Error);
  EXPECT_THROW(SizeMix::parse("zz"), Error);
}

TEST(WorkloadTest, LoadFollowsTheMix)
{
  WorkloadSpec s;
  s.mix = SizeMix::parse("SD");
  s.keys = 10000;
  std::map<KvCategory, u64> n;
  std::set<std::string> keys;
  for (const WorkloadOp& op : drain(s, Phase::kLoadA)) {
    EXPECT_EQ(op.type, OpType::kInsert);
    EXPECT_EQ(op.key.size(), 24u);
    EXPECT_EQ(op.key.substr(0, 4), "user");
    EXPECT_EQ(op.key.substr(20), "0000");
    const size_t want = op.category == KvCategory::kSmall ? 9 : op.category == KvCategory::kMedium ? 104 : 1004;
    EXPECT_EQ(op.value.size(), want);
    ++n[op.category];
    keys.insert(op.key);
  }
  EXPECT_EQ(keys.size(), 10000u);
  EXPECT_NEAR(static_cast<double>(n[KvCategory::kSmall]), 6000, 3);
  EXPECT_NEAR(static_cast<double>(n[KvCategory::kMedium]), 2000, 3);
  EXPECT_NEAR(static_cast<double>(n[KvCategory::kLarge]), 2000, 3);
}

TEST(WorkloadTest, AbsentCategoryNeverAppears)
{
  WorkloadSpec s;
  s.mix = SizeMix{50, 0, 50};
  s.keys = 3000;
  for (Phase p : {Phase::kLoadA, Phase::kRunA}) {
    for (const WorkloadOp& op : drain(s, p)) {
      if (op.type == OpType::kInsert || op.type == OpType::kUpdate) {
        EXPECT_NE(op.category, KvCategory::kMedium);
      }
    }
  }
}

TEST(WorkloadTest, SameSeedSameBytes)
{
  WorkloadSpec s;
  s.keys = 2000;
  for (Phase p : {Phase::kLoadA, Phase::kRunA, Phase::kRunD, Phase::kRunE}) {
    const auto a = drain(s, p);
    const auto b = drain(s, p);
    ASSERT_EQ(a.size(), b.size());
    for (size_t i = 0; i < a.size(); ++i) {
      ASSERT_EQ(a[i].key, b[i].key);
      ASSERT_EQ(a[i].value, b[i].value);
      ASSERT_EQ(a[i].type, b[i].type);
      ASSERT_EQ(a[i].scan_length, b[i].scan_length);
    }
  }
  WorkloadSpec other = s;
  other.seed = 2;
  EXPECT_NE(drain(s, Phase::kRunA)[0].value, drain(other, Phase::kRunA)[0].value);
}

TEST(WorkloadTest, OpMixes)
{
  WorkloadSpec s;
  s.keys = 20000;
  auto counts = [&](Phase p) {
    std::map<OpType, double> n;
    const auto ops = drain(s, p);
    for (const auto& op : ops) {
      n[op.type] += 1.0 / static_cast<double>(ops.size());
    }
    return n;
  };
  auto a = counts(Phase::kRunA);
  EXPECT_NEAR(a[OpType::kUpdate], 0.5, 0.02);
  EXPECT_NEAR(a[OpType::kRead], 0.5, 0.02);
  auto b = counts(Phase::kRunB);
  EXPECT_NEAR(b[OpType::kUpdate], 0.05, 0.01);
  EXPECT_NEAR(counts(Phase::kRunC)[OpType::kRead], 1.0, 1e-9);
  auto d = counts(Phase::kRunD);
  EXPECT_NEAR(d[OpType::kInsert], 0.05, 0.01);
  auto e = counts(Phase::kRunE);
  EXPECT_NEAR(e[OpType::kScan], 0.95, 0.02);
  EXPECT_EQ(s.run_ops(Phase::kRunE), 4000u);
}

TEST(WorkloadTest, UpdatesChangeCategories)
{
  WorkloadSpec s;
  s.mix = SizeMix::parse("MD");
  s.keys = 2000;
  Workload w{s, Phase::kRunA};
  u64 changed = 0;
  while (auto op = w.next()) {
    if (op->type == OpType::kUpdate && op->category != w.insert_category(op->key_index)) {
      ++changed;
    }
  }
  EXPECT_GT(changed, 100u);
}

TEST(WorkloadTest, ReadLatestStaysNearTheTail)
{
  WorkloadSpec s;
  s.keys = 10000;
  u64 inserted = s.keys;
  for (const auto& op : drain(s, Phase::kRunD)) {
    if (op.type == OpType::kInsert) {
      EXPECT_EQ(op.key_index, inserted++);
    } else {
      EXPECT_LT(op.key_index, inserted);
      EXPECT_GE(op.key_index + inserted / 100 + 1, inserted);
    }
  }
}

TEST(WorkloadTest, ZipfianIsSkewed)
{
  std::mt19937_64 rng{1};
  ZipfianGenerator z{1000, 0.99};
  std::vector<u64> hits(1000);
  for (int i = 0; i < 200000; ++i) {
    ++hits[z.next(rng)];
  }
  EXPECT_GT(hits[0], hits[10] * 5);
  EXPECT_GT(hits[0], 200000u / 20);
  EXPECT_GT(hits[999], 0u);
}

TEST(BenchTest, FingerprintCoversTheConfig)
{
  BenchConfig a;
  BenchConfig b = a;
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
  b.engine.policy = PlacementPolicy::kAllInLog;
  EXPECT_NE(a.fingerprint(), b.fingerprint());
  b = a;
  b.workload.seed = 9;
  EXPECT_NE(a.fingerprint(), b.fingerprint());
  EXPECT_EQ(a.fingerprint().size(), 16u);
}

TEST(BenchTest, EmptyGridGivesHeaderOnly)
{
  std::ostringstream out;
  EXPECT_EQ(run_sweep(SweepGrid{}.expand(BenchConfig{}), out), 0u);
  EXPECT_EQ(out.str(), csv_header() + "\n");
}

TEST(BenchTest, GridIsACrossProduct)
{
  SweepGrid g;
  g.merge_levels = {MergeLevel::kNMinus1, MergeLevel::kNMinus2};
  g.sorted_l0 = {true, false};
  EXPECT_EQ(g.expand(BenchConfig{}).size(), 4u);
}

BenchConfig tiny(PlacementPolicy p, Phase phase)
{
  BenchConfig c;
  c.engine.policy = p;
  c.engine.growth_factor = 4;
  c.engine.l0_capacity = 64 * kKiB;
  c.engine.segment_length = 64 * kKiB;
  c.engine.deterministic = true;
  c.workload.mix = SizeMix::parse("MD");
  c.workload.keys = 4000;
  c.phase = phase;
  return c;
}

TEST(BenchTest, RowsHaveOneFieldPerColumn)
{
  const BenchResult r = run_bench(tiny(PlacementPolicy::kHybrid, Phase::kRunA));
  ASSERT_FALSE(r.failed) << r.error;
  auto fields = [](const std::string& s) { return std::count(s.begin(), s.end(), ',') + 1; };
  EXPECT_EQ(fields(csv_row(r)), fields(csv_header()));
  EXPECT_EQ(r.ops, 4000u);
  EXPECT_GT(r.throughput, 0);
  EXPECT_GT(r.preload.device_total(), 0u);
  EXPECT_TRUE(r.space_amplification.has_value());
}

TEST(BenchTest, HybridKeepsMediumsOutOfTheLargeLog)
{
  const BenchResult h = run_bench(tiny(PlacementPolicy::kHybrid, Phase::kLoadA));
  const BenchResult l = run_bench(tiny(PlacementPolicy::kAllInLog, Phase::kLoadA));
  ASSERT_FALSE(h.failed || l.failed);
  // About 2400 mediums of 128 bytes are the difference.
  EXPECT_LT(h.large_log_bytes + 200 * kKiB, l.large_log_bytes);
  EXPECT_EQ(h.traffic.bytes(TrafficClass::kGcRead) + h.traffic.bytes(TrafficClass::kGcWrite), 0u);
  EXPECT_TRUE(h.model_factor.has_value());
}

TEST(BenchTest, FailuresAreFlagged)
{
  BenchConfig c = tiny(PlacementPolicy::kHybrid, Phase::kLoadA);
  c.device_bytes = 2 * kMiB;  // far too small
  const BenchResult r = run_bench(c);
  EXPECT_TRUE(r.failed);
  EXPECT_FALSE(r.error.empty());
  EXPECT_NE(csv_row(r).find(",failed,"), std::string::npos);
}

TEST(BenchTest, ShardedClients)
{
  BenchConfig c = tiny(PlacementPolicy::kHybrid, Phase::kRunA);
  c.regions = 4;
  c.clients = 2;
  c.engine.deterministic = false;
  const BenchResult r = run_bench(c);
  ASSERT_FALSE(r.failed) << r.error;
  EXPECT_EQ(r.ops, 4000u);
}

}  // namespace
