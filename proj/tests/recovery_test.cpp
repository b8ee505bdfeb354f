#include "crash_harness.hpp"

#include <gtest/gtest.h>

namespace {

using namespace hkv;
using namespace hkv::testing;

TEST(RecoveryTest, ReopenAfterCloseKeepsEverything)
{
  EngineConfig c = small_config();
  Fixture f{c, 64 * kMiB};
  std::mt19937_64 rng{1};
  Oracle o;
  for (u64 i = 0; i < 5000; ++i) {
    const std::string k = make_key(rng() % 1500);
    o[k] = make_value(rng, static_cast<int>(rng() % 3));
    f.store->put(k, o[k]);
  }
  f.reopen(c);
  EXPECT_EQ(f.store->scan("", 5000), oracle_scan(o, "", 5000));
  EXPECT_TRUE(f.store->fsck().ok());
}

TEST(RecoveryTest, CrashRightAfterFlushLosesNothing)
{
  EngineConfig c = crash_config();
  auto dev = std::make_shared<FaultInjectingDevice>(kCrashDevice);
  std::mt19937_64 rng{2};
  Oracle o;
  {
    auto s = Store::create(dev, c);
    s->create_region("data");
    for (u64 i = 0; i < 1500; ++i) {
      const std::string k = make_key(rng() % 300);
      o[k] = make_value(rng, static_cast<int>(rng() % 3));
      s->put(k, o[k]);
    }
    s->flush();
    dev->arm_crash_after_writes(1);
  }
  auto s = Store::open(std::make_shared<FaultInjectingDevice>(dev->crash_image()), c);
  EXPECT_EQ(s->scan("", 5000), oracle_scan(o, "", 5000));
  EXPECT_TRUE(s->fsck().ok());
}

TEST(RecoveryTest, UnflushedTailIsCutToAPrefix)
{
  EngineConfig c = crash_config();
  auto dev = std::make_shared<FaultInjectingDevice>(kCrashDevice);
  std::mt19937_64 rng{3};
  Oracle flushed;
  {
    auto s = Store::create(dev, c);
    s->create_region("data");
    for (u64 i = 0; i < 100; ++i) {
      flushed[make_key(i)] = "v" + std::to_string(i);
      s->put(make_key(i), flushed[make_key(i)]);
    }
    s->flush();
    for (u64 i = 100; i < 150; ++i) {
      s->put(make_key(i), "late");
    }
    dev->arm_crash_after_writes(1);
  }
  auto s = Store::open(std::make_shared<FaultInjectingDevice>(dev->crash_image()), c);
  EXPECT_EQ(s->scan("", 500), oracle_scan(flushed, "", 500));
  EXPECT_EQ(s->stats().regions.at(1).next_lsn, 101u);
}

TEST(RecoveryTest, CheckpointThenCrash)
{
  EngineConfig c = small_config();
  auto dev = std::make_shared<FaultInjectingDevice>(32 * kMiB);
  u64 checkpoints = 0;
  {
    auto s = Store::create(dev, c);
    s->create_region("data");
    s->put("a", "1");
    s->checkpoint();
    s->put("b", "2");
    s->flush();
    checkpoints = s->meta().epoch();
    dev->arm_crash_after_writes(1);
  }
  auto s = Store::open(std::make_shared<FaultInjectingDevice>(dev->crash_image()), c);
  EXPECT_EQ(s->get("a"), "1");
  EXPECT_EQ(s->get("b"), "2");
  EXPECT_GE(s->meta().epoch(), checkpoints);
}

TEST(RecoveryTest, BlankDeviceIsUnrecoverable)
{
  try {
    Store::open(std::make_shared<MemoryDevice>(16 * kMiB), small_config());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kUnrecoverable);
  }
}

TEST(RecoveryTest, StoreIsUsableAfterRecovery)
{
  EngineConfig c = crash_config();
  const auto script = crash_script(4, 800);
  auto dev = std::make_shared<FaultInjectingDevice>(kCrashDevice);
  {
    auto s = Store::create(dev, c);
    s->create_region("data");
    dev->arm_crash_after_writes(count_script_writes(script, c) / 2);
    try {
      for (const CrashOp& op : script) {
        op.value ? s->put(op.key, *op.value) : s->del(op.key);
      }
      FAIL() << "no crash";
    } catch (const SimulatedCrash&) {
    }
  }
  auto dev2 = std::make_shared<FaultInjectingDevice>(dev->crash_image());
  auto s = Store::open(dev2, c);
  Oracle o;
  for (const auto& kv : s->scan("", 5000)) {
    o.emplace(kv.key, kv.value);
  }
  std::mt19937_64 rng{4};
  for (u64 i = 0; i < 3000; ++i) {
    const std::string k = make_key(rng() % 500);
    if (rng() % 8 == 0) {
      s->del(k);
      o.erase(k);
    } else {
      o[k] = make_value(rng, static_cast<int>(rng() % 3));
      s->put(k, o[k]);
    }
  }
  s->close();
  s = Store::open(dev2, c);
  EXPECT_EQ(s->scan("", 5000), oracle_scan(o, "", 5000));
  EXPECT_TRUE(s->fsck().ok());
}

TEST(RecoveryTest, RandomCrashPointsArePrefixConsistent)
{
  EngineConfig c = crash_config();
  const auto calibrate = crash_script(99, 1200);
  const u64 writes = count_script_writes(calibrate, c);
  ASSERT_GT(writes, 0u);
  std::mt19937_64 rng{5};
  size_t crashed = 0;
  for (u64 n = 0; n < 60; ++n) {
    const auto script = crash_script(1000 + n, 1200);
    const CrashResult r = run_crash_case(script, c, 1 + rng() % writes, n);
    crashed += r.crashed;
    ASSERT_TRUE(r.ok()) << "case " << n << ": " << r.detail;
  }
  EXPECT_GT(crashed, 30u);
}

TEST(RecoveryTest, BackgroundModeCrashes)
{
  EngineConfig c = crash_config();
  c.deterministic = false;
  const auto script = crash_script(7, 1200);
  EngineConfig det = crash_config();
  const u64 writes = count_script_writes(script, det);
  std::mt19937_64 rng{7};
  for (u64 n = 0; n < 10; ++n) {
    const CrashResult r = run_crash_case(script, c, 1 + rng() % writes, n);
    ASSERT_TRUE(r.ok()) << "case " << n << ": " << r.detail;
  }
}

}  // namespace
