#include <hkv/leaf.hpp>

#include <gtest/gtest.h>

#include <map>
#include <random>
#include <set>

namespace {

using namespace hkv;

// Pretends log addresses are indices into a key table, and counts how many
// distinct entries had to be fetched.
struct FakeLog {
  std::vector<std::string> keys;
  std::set<u64> fetched;

  LogAddress add(const std::string& key)
  {
    keys.push_back(key);
    return LogAddress{LogId::kMedium, keys.size() - 1, static_cast<u32>(key.size() + 19 + 100), 1};
  }

  KeyResolver resolver()
  {
    return [this](const IndexEntry& e) {
      fetched.insert(e.ref.offset);
      return keys.at(e.ref.offset);
    };
  }
};

std::string key_of(const Leaf& leaf, u32 slot, FakeLog* log = nullptr)
{
  IndexEntry e = leaf.entry(slot);
  return e.key_known ? e.key : log->keys.at(e.ref.offset);
}

TEST(LeafTest, SlotsSortedDataInArrivalOrder)
{
  Leaf leaf;
  ASSERT_EQ(leaf.insert(IndexEntry::in_place(KvCategory::kSmall, "b", "2"), {}),
            Leaf::InsertResult::kInserted);
  ASSERT_EQ(leaf.insert(IndexEntry::in_place(KvCategory::kSmall, "a", "1"), {}),
            Leaf::InsertResult::kInserted);
  ASSERT_EQ(leaf.insert(IndexEntry::in_place(KvCategory::kSmall, "c", "3"), {}),
            Leaf::InsertResult::kInserted);
  ASSERT_EQ(leaf.size(), 3u);
  EXPECT_EQ(key_of(leaf, 0), "a");
  EXPECT_EQ(key_of(leaf, 1), "b");
  EXPECT_EQ(key_of(leaf, 2), "c");
  // Records grow down from the end: b is nearest the end, then a, then c.
  const auto img = leaf.bytes();
  const auto record_at = [&](size_t off) { return static_cast<char>(img[off + 4]); };
  EXPECT_EQ(record_at(kLeafSize - 6), 'b');
  EXPECT_EQ(record_at(kLeafSize - 12), 'a');
  EXPECT_EQ(record_at(kLeafSize - 18), 'c');
  leaf.validate();
}

TEST(LeafTest, RepeatedUpdatesCompactBeforeSplitting)
{
  Leaf leaf;
  for (int i = 0; i < 20; ++i) {
    ASSERT_EQ(leaf.insert(IndexEntry::in_place(KvCategory::kMedium, "k" + std::to_string(i),
                                               std::string(300, 'x')),
                          {}),
              Leaf::InsertResult::kInserted);
  }
  for (int round = 0; round < 50; ++round) {
    const std::string v(300, static_cast<char>('a' + round % 26));
    ASSERT_EQ(leaf.insert(IndexEntry::in_place(KvCategory::kMedium, "k7", v), {}),
              Leaf::InsertResult::kUpdated)
        << "round " << round;
    leaf.validate();
  }
  EXPECT_GT(leaf.compactions(), 0u);
  EXPECT_EQ(leaf.size(), 20u);
  EXPECT_EQ(leaf.entry(*leaf.find("k7", {})).value, std::string(300, 'a' + 49 % 26));
}

TEST(LeafTest, FullLeafReportsSplitAndStaysUnchanged)
{
  Leaf leaf;
  int i = 0;
  while (leaf.insert(IndexEntry::in_place(KvCategory::kMedium, "k" + std::to_string(1000 + i),
                                          std::string(500, 'v')),
                     {}) == Leaf::InsertResult::kInserted) {
    ++i;
  }
  const std::vector<u8> before(leaf.bytes().begin(), leaf.bytes().end());
  EXPECT_EQ(leaf.insert(IndexEntry::in_place(KvCategory::kMedium, "zz", std::string(500, 'v')), {}),
            Leaf::InsertResult::kNeedsSplit);
  EXPECT_EQ(std::vector<u8>(leaf.bytes().begin(), leaf.bytes().end()), before);
  leaf.validate();
}

TEST(LeafTest, FindHitAndMiss)
{
  Leaf leaf;
  for (const char* k : {"apple", "banana", "cherry"}) {
    ASSERT_TRUE(leaf.append(IndexEntry::in_place(KvCategory::kSmall, k, "v")));
  }
  EXPECT_EQ(leaf.find("banana", {}), 1u);
  EXPECT_FALSE(leaf.find("blueberry", {}).has_value());
  EXPECT_FALSE(leaf.find("a", {}).has_value());
  EXPECT_EQ(leaf.lower_bound("blueberry", {}), 2u);
  EXPECT_EQ(leaf.lower_bound("zzz", {}), 3u);
}

TEST(LeafTest, TombstonesAndRefsRoundTrip)
{
  Leaf leaf;
  const LogAddress ref{LogId::kLarge, 1 << 20, 1 << 16, 7};
  ASSERT_TRUE(leaf.append(IndexEntry::log_ref(LogId::kLarge, "alpha", ref)));
  ASSERT_TRUE(leaf.append(IndexEntry::tombstone("beta")));
  const IndexEntry a = leaf.entry(0);
  EXPECT_EQ(a.code, SlotCode::kLargeLogRef);
  EXPECT_FALSE(a.key_known);
  EXPECT_EQ(a.prefix, make_prefix("alpha"));
  EXPECT_EQ(a.ref.offset, ref.offset);
  EXPECT_EQ(a.ref.length, ref.length);
  EXPECT_EQ(a.ref.generation, 7u);
  EXPECT_EQ(a.ref.log, LogId::kLarge);
  EXPECT_EQ(leaf.entry(1).code, SlotCode::kTombstone);
  EXPECT_EQ(leaf.entry(1).key, "beta");
  leaf.validate();
  Leaf copy{leaf.bytes()};
  copy.validate();
  EXPECT_EQ(copy.entry(1).key, "beta");
}

TEST(LeafTest, EntrySizes)
{
  const auto small = IndexEntry::in_place(KvCategory::kSmall, std::string(24, 'k'), "123456789");
  EXPECT_EQ(small.stored_bytes(), 33u);
  EXPECT_EQ(small.resolved_bytes(), 33u);
  EXPECT_EQ(small.record_size(), 37u);
  const auto med = IndexEntry::log_ref(LogId::kMedium, std::string(24, 'k'),
                                       LogAddress{LogId::kMedium, 0, 24 + 104 + 19, 1});
  EXPECT_EQ(med.stored_bytes(), 28u);
  EXPECT_EQ(med.resolved_bytes(), 128u);
  const auto large = IndexEntry::log_ref(LogId::kLarge, std::string(24, 'k'),
                                         LogAddress{LogId::kLarge, 0, 24 + 1004 + 19, 1});
  EXPECT_EQ(large.resolved_bytes(), 28u);
  EXPECT_EQ(IndexEntry::tombstone("abcd").stored_bytes(), 4u);
}

TEST(LeafTest, UniquePrefixCostsOneLogReadSharedPrefixOneMore)
{
  FakeLog log;
  Leaf leaf;
  // Sorted: "user0000000000000001" and "user0000000000000002" share 12 bytes.
  const std::vector<std::string> keys = {"aaaa-unique-1", "mmmm-unique-2", "user0000000000000001",
                                         "user0000000000000002", "zzzz-unique-3"};
  for (const auto& k : keys) {
    ASSERT_TRUE(leaf.append(IndexEntry::log_ref(LogId::kMedium, k, log.add(k))));
  }
  const auto resolve = log.resolver();
  ASSERT_EQ(leaf.find("mmmm-unique-2", resolve), 1u);
  EXPECT_EQ(log.fetched.size(), 1u);

  log.fetched.clear();
  ASSERT_EQ(leaf.find("user0000000000000002", resolve), 3u);
  EXPECT_EQ(log.fetched.size(), 2u);

  log.fetched.clear();
  EXPECT_FALSE(leaf.find("mmmm-missing", resolve).has_value());
  EXPECT_LE(log.fetched.size(), 1u);
  log.fetched.clear();
  EXPECT_FALSE(leaf.find("nope", resolve).has_value());
  EXPECT_EQ(log.fetched.size(), 0u);
}

// Prefix-first comparison must agree with plain string ordering, including
// keys that differ only after the prefix or in length.
TEST(LeafTest, PrefixSearchMatchesFullKeyOrder)
{
  std::mt19937_64 rng{42};
  for (int trial = 0; trial < 40; ++trial) {
    FakeLog log;
    std::map<std::string, std::string> oracle;
    Leaf leaf;
    const auto resolve = log.resolver();
    for (int i = 0; i < 120; ++i) {
      std::string k = "pfx";
      const size_t extra = rng() % 16;
      for (size_t j = 0; j < extra; ++j) {
        k.push_back(static_cast<char>("ab\0z"[rng() % 4]));
      }
      if (k.empty()) {
        continue;
      }
      IndexEntry e = (rng() % 2) ? IndexEntry::log_ref(LogId::kMedium, k, log.add(k))
                                 : IndexEntry::in_place(KvCategory::kSmall, k, "v" + std::to_string(i));
      const auto r = leaf.insert(e, resolve);
      ASSERT_NE(r, Leaf::InsertResult::kNeedsSplit);
      EXPECT_EQ(r == Leaf::InsertResult::kUpdated, oracle.count(k) == 1);
      oracle[k] = "";
    }
    leaf.validate();
    ASSERT_EQ(leaf.size(), oracle.size());
    u32 slot = 0;
    for (const auto& [k, _] : oracle) {
      ASSERT_EQ(key_of(leaf, slot, &log), k);
      ASSERT_EQ(leaf.find(k, resolve), slot);
      ++slot;
    }
  }
}

TEST(LeafTest, ValidateCatchesDamage)
{
  Leaf leaf;
  ASSERT_TRUE(leaf.append(IndexEntry::in_place(KvCategory::kSmall, "a", "1")));
  ASSERT_TRUE(leaf.append(IndexEntry::in_place(KvCategory::kSmall, "b", "2")));
  std::vector<u8> img(leaf.bytes().begin(), leaf.bytes().end());
  img[kLeafSize - 6 + 2] = 200;  // value length of "a" runs past the leaf end
  EXPECT_THROW(Leaf{img}.validate(), Error);
  img.assign(leaf.bytes().begin(), leaf.bytes().end());
  img[0] = 0;
  EXPECT_THROW(Leaf{img}, Error);
  img.assign(leaf.bytes().begin(), leaf.bytes().end());
  img[kLeafHeaderSize + 3] = 0xE0;  // slot code 7
  EXPECT_THROW(Leaf{img}.validate(), Error);
}

}  // namespace
