#include <hkv/device.hpp>
#include <hkv/value_log.hpp>

#include <gtest/gtest.h>

#include <random>

namespace {

using namespace hkv;

struct LogFixture {
  explicit LogFixture(u64 seg_len = 2 * kMiB, u64 size = 64 * kMiB)
      : device(std::make_shared<FaultInjectingDevice>(size)),
        storage(device, Geometry::plan(size, seg_len), metrics),
        log(storage, metrics, 1, LogId::kLarge)
  {
  }

  Metrics metrics;
  std::shared_ptr<FaultInjectingDevice> device;
  Storage storage;
  ValueLog log;
};

LogEntry entry(Lsn lsn, std::string key, size_t value_len, char fill = 'v')
{
  return LogEntry{lsn, OpKind::kInsert, KvCategory::kLarge, std::move(key), std::string(value_len, fill)};
}

TEST(LogWireTest, EncodeDecodeRoundTrip)
{
  const LogEntry e{42, OpKind::kDelete, KvCategory::kMedium, "key", "value"};
  std::vector<u8> bytes;
  encode_entry(e, 7, bytes);
  ASSERT_EQ(bytes.size(), encoded_size(3, 5));
  LogEntry out;
  u32 len = 0;
  ASSERT_EQ(decode_entry(bytes, 7, &out, &len), DecodeStatus::kOk);
  EXPECT_EQ(out, e);
  EXPECT_EQ(len, bytes.size());
  // A different salt (another generation of the segment) never decodes.
  EXPECT_EQ(decode_entry(bytes, 8, &out, &len), DecodeStatus::kInvalid);
}

TEST(LogWireTest, MarkersAndShortTails)
{
  std::vector<u8> zeros(64, 0);
  u32 len = 0;
  EXPECT_EQ(decode_entry(zeros, 0, nullptr, &len), DecodeStatus::kEndOfSegment);
  std::vector<u8> eos(64, 0xFF);
  EXPECT_EQ(decode_entry(eos, 0, nullptr, &len), DecodeStatus::kEndOfSegment);
  std::vector<u8> tiny(3, 0x11);
  EXPECT_EQ(decode_entry(tiny, 0, nullptr, &len), DecodeStatus::kEndOfSegment);
  std::vector<u8> junk(10, 0x11);
  EXPECT_EQ(decode_entry(junk, 0, nullptr, &len), DecodeStatus::kInvalid);
}

TEST(ValueLogTest, SmallAppendsStayBuffered)
{
  LogFixture f;
  const u64 writes = f.device->write_count();
  std::vector<LogAddress> addrs;
  for (Lsn i = 1; i <= 3; ++i) {
    addrs.push_back(f.log.append(entry(i, "k" + std::to_string(i), 100 - encoded_size(2, 0))));
  }
  EXPECT_EQ(addrs[0].length, 100u);
  EXPECT_EQ(addrs[1].offset, addrs[0].offset + 100);
  EXPECT_EQ(addrs[2].offset, addrs[1].offset + 100);
  EXPECT_EQ(f.device->write_count(), writes);
  EXPECT_EQ(f.metrics.snapshot().device_total(), 0u);
}

TEST(ValueLogTest, FullChunkIsOneDeviceWrite)
{
  LogFixture f;
  const size_t value = 1024 - encoded_size(8, 0);
  for (Lsn i = 1; i <= 256; ++i) {
    char key[9];
    std::snprintf(key, sizeof key, "%08u", static_cast<unsigned>(i));
    (void)f.log.append(entry(i, key, value));
  }
  EXPECT_EQ(f.device->write_count(), 1u);
  EXPECT_EQ(f.metrics.snapshot().bytes(TrafficClass::kLogAppend), 256 * kKiB);
}

TEST(ValueLogTest, RejectsEmptyAndOversizedEntries)
{
  LogFixture f{64 * kKiB, 8 * kMiB};
  EXPECT_THROW((void)f.log.append(entry(1, "", 1)), Error);
  EXPECT_THROW((void)f.log.append(entry(1, "k", 64 * kKiB)), Error);
  EXPECT_THROW((void)f.log.append(entry(1, std::string(kMaxKeySize + 1, 'k'), 1)), Error);
}

TEST(ValueLogTest, ReadBackFromTailAndDevice)
{
  LogFixture f;
  const LogEntry e = entry(1, "alpha", 500);
  const LogAddress a = f.log.append(e);
  EXPECT_EQ(f.log.read_entry(a, TrafficClass::kLookupRead), e);
  EXPECT_EQ(f.metrics.snapshot().bytes(TrafficClass::kLookupRead), 0u);

  (void)f.log.flush();
  // Still cached: the chunk is not full yet.
  EXPECT_EQ(f.log.read_entry(a, TrafficClass::kLookupRead), e);
  EXPECT_EQ(f.log.read_key(a, TrafficClass::kLookupRead), "alpha");
}

TEST(ValueLogTest, ReadsStraddlingTheChunkBoundary)
{
  LogFixture f;
  std::vector<std::pair<LogAddress, LogEntry>> all;
  for (Lsn i = 1; i <= 400; ++i) {
    LogEntry e = entry(i, "key" + std::to_string(i), 700 + i % 13, static_cast<char>('a' + i % 26));
    all.emplace_back(f.log.append(e), e);
  }
  for (const auto& [a, e] : all) {
    ASSERT_EQ(f.log.read_entry(a, TrafficClass::kLookupRead), e);
  }
  EXPECT_GT(f.metrics.snapshot().bytes(TrafficClass::kLookupRead), 0u);
}

TEST(ValueLogTest, ReadAfterReclaimIsStale)
{
  LogFixture f{64 * kKiB, 8 * kMiB};
  LogAddress first{};
  for (Lsn i = 1; i <= 200; ++i) {
    const LogAddress a = f.log.append(entry(i, "k" + std::to_string(i), 1000));
    if (i == 1) {
      first = a;
    }
  }
  (void)f.log.flush();
  const SegmentId seg = f.storage.segment_of(first.offset);
  f.log.remove_segment(seg);
  f.storage.free_segment(seg);
  f.storage.release_pending_frees();
  try {
    (void)f.log.read_entry(first, TrafficClass::kLookupRead);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kStaleAddress);
  }
  // Reallocated to someone else: still stale.
  (void)f.storage.allocate(Owner::log_of(1, OwnerKind::kLargeLog));
  EXPECT_FALSE(f.log.resolvable(first));
  EXPECT_THROW((void)f.log.read_entry(first, TrafficClass::kLookupRead), Error);
}

TEST(ValueLogTest, FlushWatermark)
{
  LogFixture f;
  for (Lsn i = 1; i <= 10; ++i) {
    (void)f.log.append(entry(i, "k", 10));
  }
  EXPECT_EQ(f.log.durable_lsn(), 0u);
  EXPECT_EQ(f.log.flush(), 10u);
  const u64 written = f.metrics.snapshot().bytes(TrafficClass::kLogAppend);
  EXPECT_EQ(f.log.flush(), 10u);
  EXPECT_EQ(f.metrics.snapshot().bytes(TrafficClass::kLogAppend), written);
  EXPECT_GE(written, 10u * encoded_size(1, 10));
}

TEST(ValueLogTest, CrashWithoutFlushLosesTheTail)
{
  LogFixture f;
  for (Lsn i = 1; i <= 5; ++i) {
    (void)f.log.append(entry(i, "k", 10));
  }
  (void)f.log.flush();
  for (Lsn i = 6; i <= 9; ++i) {
    (void)f.log.append(entry(i, "k", 10));
  }
  const auto chain = f.log.chain();
  auto image = std::make_shared<MemoryDevice>(f.device->crash_image());
  Metrics m;
  Storage storage{image, f.storage.geometry(), m};
  storage.load_ownership({{chain[0], Owner::log_of(1, OwnerKind::kLargeLog)}}, f.storage.generations());
  ValueLog recovered{storage, m, 1, LogId::kLarge};
  recovered.restore(chain);
  Lsn last = 0;
  (void)recovered.iterate(LogCursor{chain[0].id, 0},
                          [&](const LogAddress&, const LogEntry& e) { last = e.lsn; },
                          TrafficClass::kRecoveryRead);
  EXPECT_EQ(last, 5u);
  EXPECT_LT(last, f.log.last_lsn());
}

TEST(ValueLogTest, IterateFollowsTheChain)
{
  LogFixture f{64 * kKiB, 8 * kMiB};
  std::vector<LogEntry> written;
  for (Lsn i = 1; i <= 300; ++i) {
    written.push_back(entry(i, "key" + std::to_string(i), 300 + i % 50));
    (void)f.log.append(written.back());
  }
  (void)f.log.flush();
  ASSERT_GT(f.log.chain().size(), 1u);
  std::vector<LogEntry> seen;
  const IterateResult r = f.log.iterate(LogCursor{f.log.chain()[0].id, 0},
                                        [&](const LogAddress&, const LogEntry& e) { seen.push_back(e); },
                                        TrafficClass::kRecoveryRead);
  EXPECT_EQ(seen, written);
  EXPECT_EQ(r.entries, 300u);
  EXPECT_EQ(r.end, f.log.tail());
}

TEST(ValueLogTest, IterateEmpty)
{
  LogFixture f;
  const IterateResult r =
      f.log.iterate(LogCursor{}, [](const LogAddress&, const LogEntry&) { FAIL(); }, TrafficClass::kRecoveryRead);
  EXPECT_EQ(r.entries, 0u);
  EXPECT_FALSE(r.torn);
}

// Truncate (zero or garble) the device at every byte offset of the final entry:
// iteration must yield exactly the entries before it.
TEST(ValueLogTest, TornTailAtEveryByte)
{
  LogFixture f{64 * kKiB, 8 * kMiB};
  std::vector<LogAddress> addrs;
  for (Lsn i = 1; i <= 6; ++i) {
    addrs.push_back(f.log.append(entry(i, "key" + std::to_string(i), 40)));
  }
  (void)f.log.flush();
  const auto chain = f.log.chain();
  const LogAddress last = addrs.back();
  const std::vector<u8> image = f.device->crash_image();
  std::mt19937 rng{5};
  for (u32 cut = 0; cut < last.length; ++cut) {
    for (bool garble : {false, true}) {
      std::vector<u8> img = image;
      for (u64 p = last.offset + cut; p < last.offset + last.length; ++p) {
        img[p] = garble ? static_cast<u8>(rng()) : 0;
      }
      auto dev = std::make_shared<MemoryDevice>(std::move(img));
      Metrics m;
      Storage storage{dev, f.storage.geometry(), m};
      storage.load_ownership({{chain[0], Owner::log_of(1, OwnerKind::kLargeLog)}}, f.storage.generations());
      ValueLog log{storage, m, 1, LogId::kLarge};
      log.restore(chain);
      u64 n = 0;
      const IterateResult r = log.iterate(LogCursor{chain[0].id, 0},
                                          [&](const LogAddress&, const LogEntry& e) {
                                            ++n;
                                            ASSERT_LT(e.lsn, 6u);
                                          },
                                          TrafficClass::kRecoveryRead);
      ASSERT_EQ(n, 5u) << "cut=" << cut << " garble=" << garble;
      ASSERT_EQ(r.end.offset, last.offset - storage.segment_offset(chain[0].id));
    }
  }
}

TEST(ValueLogTest, SealDropsTrailingSegments)
{
  LogFixture f{64 * kKiB, 8 * kMiB};
  LogAddress mid{};
  for (Lsn i = 1; i <= 200; ++i) {
    const LogAddress a = f.log.append(entry(i, "k" + std::to_string(i), 1000));
    if (i == 20) {
      mid = a;
    }
  }
  (void)f.log.flush();
  const auto chain = f.log.chain();
  ValueLog reopened{f.storage, f.metrics, 1, LogId::kLarge};
  reopened.restore(chain);
  const SegmentId seg = f.storage.segment_of(mid.offset);
  const LogCursor at{seg, static_cast<u32>(mid.offset - f.storage.segment_offset(seg))};
  const auto dropped = reopened.seal(at);
  EXPECT_EQ(dropped.size() + reopened.chain().size(), chain.size());
  u64 n = 0;
  (void)reopened.iterate(LogCursor{chain[0].id, 0},
                         [&](const LogAddress&, const LogEntry&) { ++n; },
                         TrafficClass::kRecoveryRead);
  EXPECT_EQ(n, 19u);
  // Appends after sealing land after the marker and are found by iteration.
  (void)reopened.append(entry(500, "new", 10));
  (void)reopened.flush();
  std::vector<Lsn> lsns;
  (void)reopened.iterate(LogCursor{chain[0].id, 0},
                         [&](const LogAddress&, const LogEntry& e) { lsns.push_back(e.lsn); },
                         TrafficClass::kRecoveryRead);
  ASSERT_EQ(lsns.size(), 20u);
  EXPECT_EQ(lsns.back(), 500u);
}

}  // namespace
