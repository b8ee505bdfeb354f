#pragma once

// Closed-form I/O amplification model for leveled LSM trees, with and without
// key-value separation, plus the size-based classifier that the engine uses to
// place each KV pair.

#include <hkv/types.hpp>

#include <compare>
#include <string>

namespace hkv {

/// Exact non-negative rational with 64-bit parts. Arithmetic that would not fit
/// raises ErrorCode::kRangeError instead of wrapping.
class Rational
{
 public:
  Rational() = default;
  Rational(i64 num, i64 den = 1);

  static Rational ratio(u64 part, u64 whole);

  i64 num() const noexcept
  {
    return num_;
  }
  i64 den() const noexcept
  {
    return den_;
  }
  double to_double() const noexcept
  {
    return static_cast<double>(num_) / static_cast<double>(den_);
  }
  bool is_integer() const noexcept
  {
    return den_ == 1;
  }

  friend Rational operator+(const Rational& a, const Rational& b);
  friend Rational operator*(const Rational& a, const Rational& b);
  friend bool operator==(const Rational& a, const Rational& b) noexcept = default;
  friend std::strong_ordering operator<=>(const Rational& a, const Rational& b);

  std::string to_string() const;

 private:
  struct Reduced {
  };
  Rational(Reduced, i64 num, i64 den) noexcept : num_(num), den_(den)
  {
  }

  static Rational reduce(__int128 num, __int128 den);

  i64 num_ = 0;
  i64 den_ = 1;
};

struct AmplificationParams {
  u32 levels_l = 1;
  u32 growth_factor_f = 2;
  u64 l0_size_s0 = 1;
  Rational key_fraction_p{1, 1};

  void validate() const;

  /// S_i = S_0 * f^i, checked.
  u64 level_size(u32 i) const;
};

struct CategoryThresholds {
  double t_sm = 0.2;
  double t_ml = 0.02;
  u64 size_small_max = 119;
  u64 size_medium_max = 1023;

  void validate() const;

  static CategoryThresholds for_policy(PlacementPolicy policy);
};

enum class ClassifyMode {
  kTotalSize,
  kKeyRatio,
};

/// D = S_l * (l - 1 + f*l).
u64 traffic_in_place(const AmplificationParams& params);

/// D' = K_l * (l - 1 + f*l) + S_l with K_l = p * S_l.
Rational traffic_kv_separated(const AmplificationParams& params);

/// D / D'.
double separation_benefit(const AmplificationParams& params);
double separation_benefit(u32 levels_l, u32 growth_factor_f, double key_fraction_p);

/// Fraction of total capacity held by the first N-i levels of an N-level tree.
double capacity_ratio(u32 growth_factor_f, u32 total_levels_n, u32 i);

KvCategory classify(u64 key_len,
                    u64 value_len,
                    const CategoryThresholds& thresholds,
                    ClassifyMode mode = ClassifyMode::kTotalSize);

/// Merge-by-merge evaluation of the insert path: every L0 batch is merged into
/// L1, a level is merged into the next one as soon as it is full, and each merge
/// is charged for reading and writing both participants (the in-memory L0 is
/// only written). With `separated` the batches
/// carry only keys (p * S_0) and one extra append of the whole dataset is added.
Rational simulate_leveled_traffic(const AmplificationParams& params, bool separated);

}  // namespace hkv
