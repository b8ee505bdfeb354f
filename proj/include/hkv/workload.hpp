#pragma once

// YCSB-style op streams with per-category value sizes. Everything is a pure
// function of the spec, so two generators with the same spec produce the same
// bytes.

#include <hkv/types.hpp>

#include <optional>
#include <random>
#include <string>
#include <vector>

namespace hkv {

enum class Phase : u8 {
  kLoadA,  // 100% insert
  kLoadE,  // same as load-a; preload for run-e
  kRunA,   // 50% update, 50% read
  kRunB,   // 95% read, 5% update
  kRunC,   // 100% read
  kRunD,   // 95% read over the newest 1% of keys, 5% insert
  kRunE,   // 95% scan, 5% insert
};

std::string_view to_string(Phase p) noexcept;
Phase parse_phase(std::string_view s);
bool is_load(Phase p) noexcept;

enum class KeyDist : u8 {
  kUniform,
  kZipfian,
};

std::string_view to_string(KeyDist d) noexcept;
KeyDist parse_key_dist(std::string_view s);

struct SizeMix {
  u32 small = 60;
  u32 medium = 20;
  u32 large = 20;

  // "S", "M", "L", "SD", "MD", "LD" or "a-b-c".
  static SizeMix parse(std::string_view s);
  std::string to_string() const;
  bool operator==(const SizeMix&) const = default;
};

struct WorkloadSpec {
  SizeMix mix;
  u64 keys = 100000;  // keys inserted by the load phase
  u64 ops = 0;        // run-phase ops; 0 means keys (keys / 5 for run-e)
  KeyDist dist = KeyDist::kZipfian;
  double zipf_theta = 0.99;
  u32 key_size = 24;
  u32 small_value = 9;
  u32 medium_value = 104;
  u32 large_value = 1004;
  u32 max_scan_length = 100;
  u64 seed = 1;

  void validate() const;
  u64 run_ops(Phase p) const;
};

enum class OpType : u8 {
  kInsert,
  kUpdate,
  kRead,
  kScan,
};

struct WorkloadOp {
  OpType type = OpType::kInsert;
  u64 key_index = 0;
  std::string key;
  std::string value;  // writes only
  KvCategory category = KvCategory::kSmall;
  u32 scan_length = 0;
};

// YCSB's zipfian generator over [0, n).
class ZipfianGenerator
{
 public:
  ZipfianGenerator(u64 n, double theta);
  u64 next(std::mt19937_64& rng);
  u64 items() const noexcept
  {
    return n_;
  }

 private:
  u64 n_;
  double theta_;
  double alpha_;
  double zetan_;
  double eta_;
  double half_pow_theta_;
};

u64 fnv1a64(std::string_view bytes) noexcept;

class Workload
{
 public:
  Workload(WorkloadSpec spec, Phase phase);

  std::optional<WorkloadOp> next();

  // "user" + 16 hex digits of a hash of the index + padding to key_size.
  std::string key(u64 index) const;
  // Category a freshly inserted key gets; spreads the mix evenly over indices.
  KvCategory insert_category(u64 index) const;
  u64 total_ops() const noexcept
  {
    return total_;
  }

 private:
  std::string make_value(KvCategory c);
  KvCategory draw_category();
  u64 pick_existing();

  WorkloadSpec spec_;
  Phase phase_;
  u64 total_;
  u64 done_ = 0;
  u64 inserted_;  // keys [0, inserted_) exist
  std::mt19937_64 rng_;
  std::optional<ZipfianGenerator> zipf_;
};

}  // namespace hkv
