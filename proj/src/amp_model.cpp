#include <hkv/amp_model.hpp>

#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace hkv {

namespace {

using i128 = __int128;

i64 narrow(i128 v)
{
  if (v > std::numeric_limits<i64>::max() || v < std::numeric_limits<i64>::min()) {
    fail(ErrorCode::kRangeError, "rational arithmetic overflow");
  }
  return static_cast<i64>(v);
}

i128 gcd128(i128 a, i128 b)
{
  if (a < 0) {
    a = -a;
  }
  if (b < 0) {
    b = -b;
  }
  while (b != 0) {
    const i128 t = a % b;
    a = b;
    b = t;
  }
  return a;
}

}  // namespace

Rational Rational::reduce(i128 num, i128 den)
{
  if (den == 0) {
    fail(ErrorCode::kInvalidArgument, "zero denominator");
  }
  if (den < 0) {
    num = -num;
    den = -den;
  }
  const i128 g = gcd128(num, den);
  if (g > 1) {
    num /= g;
    den /= g;
  }
  return Rational{Reduced{}, narrow(num), narrow(den)};
}

namespace {

u64 checked_mul(u64 a, u64 b)
{
  u64 out = 0;
  if (__builtin_mul_overflow(a, b, &out)) {
    fail(ErrorCode::kRangeError, "byte arithmetic overflow");
  }
  return out;
}

u64 checked_add(u64 a, u64 b)
{
  u64 out = 0;
  if (__builtin_add_overflow(a, b, &out)) {
    fail(ErrorCode::kRangeError, "byte arithmetic overflow");
  }
  return out;
}

u64 checked_pow(u64 base, u32 exp)
{
  u64 out = 1;
  for (u32 i = 0; i < exp; ++i) {
    out = checked_mul(out, base);
  }
  return out;
}

// (l - 1 + f*l), the per-byte traffic multiplier shared by both closed forms.
u64 level_multiplier(const AmplificationParams& params)
{
  return checked_add(params.levels_l - 1, checked_mul(params.growth_factor_f, params.levels_l));
}

}  // namespace

Rational::Rational(i64 num, i64 den)
{
  *this = reduce(num, den);
}

Rational Rational::ratio(u64 part, u64 whole)
{
  check(whole > 0, ErrorCode::kInvalidArgument, "ratio with zero whole");
  return Rational::reduce(static_cast<i128>(part), static_cast<i128>(whole));
}

Rational operator+(const Rational& a, const Rational& b)
{
  const i128 num = static_cast<i128>(a.num_) * b.den_ + static_cast<i128>(b.num_) * a.den_;
  const i128 den = static_cast<i128>(a.den_) * b.den_;
  return Rational::reduce(num, den);
}

Rational operator*(const Rational& a, const Rational& b)
{
  return Rational::reduce(static_cast<i128>(a.num_) * b.num_, static_cast<i128>(a.den_) * b.den_);
}

std::strong_ordering operator<=>(const Rational& a, const Rational& b)
{
  const i128 lhs = static_cast<i128>(a.num_) * b.den_;
  const i128 rhs = static_cast<i128>(b.num_) * a.den_;
  if (lhs < rhs) {
    return std::strong_ordering::less;
  }
  if (lhs > rhs) {
    return std::strong_ordering::greater;
  }
  return std::strong_ordering::equal;
}

std::string Rational::to_string() const
{
  if (den_ == 1) {
    return std::to_string(num_);
  }
  return std::to_string(num_) + "/" + std::to_string(den_);
}

void AmplificationParams::validate() const
{
  check(levels_l >= 1, ErrorCode::kInvalidArgument, "levels_l must be >= 1");
  check(growth_factor_f >= 2, ErrorCode::kInvalidArgument, "growth_factor_f must be >= 2");
  check(l0_size_s0 > 0, ErrorCode::kInvalidArgument, "l0_size_s0 must be > 0");
  check(key_fraction_p > Rational{0} && key_fraction_p <= Rational{1},
        ErrorCode::kInvalidArgument,
        "key_fraction_p must be in (0, 1]");
}

u64 AmplificationParams::level_size(u32 i) const
{
  return checked_mul(l0_size_s0, checked_pow(growth_factor_f, i));
}

void CategoryThresholds::validate() const
{
  // Equal boundaries are allowed: they empty the medium band, which is how the
  // two-category policy variants are expressed.
  check(t_ml >= 0.0 && t_ml <= t_sm && t_sm <= 1.0,
        ErrorCode::kInvalidArgument,
        "thresholds must satisfy 0 <= t_ml <= t_sm <= 1");
  check(size_small_max <= size_medium_max,
        ErrorCode::kInvalidArgument,
        "size_small_max must not exceed size_medium_max");
}

CategoryThresholds CategoryThresholds::for_policy(PlacementPolicy policy)
{
  CategoryThresholds t;
  switch (policy) {
    case PlacementPolicy::kHybrid:
      break;
    case PlacementPolicy::kAllInPlace:
      t.t_sm = t.t_ml = 0.0;
      t.size_small_max = t.size_medium_max = std::numeric_limits<u64>::max();
      break;
    case PlacementPolicy::kAllInLog:
      t.t_sm = t.t_ml = 1.0;
      t.size_small_max = t.size_medium_max = 0;
      break;
    case PlacementPolicy::kMediumAsSmall:
      t.t_sm = t.t_ml = 0.02;
      t.size_small_max = t.size_medium_max = 1023;
      break;
    case PlacementPolicy::kMediumAsLarge:
      t.t_sm = t.t_ml = 0.2;
      t.size_small_max = t.size_medium_max = 119;
      break;
  }
  return t;
}

u64 traffic_in_place(const AmplificationParams& params)
{
  params.validate();
  const u64 last = params.level_size(params.levels_l);
  return checked_mul(last, level_multiplier(params));
}

Rational traffic_kv_separated(const AmplificationParams& params)
{
  params.validate();
  const u64 last = params.level_size(params.levels_l);
  const u64 mult = level_multiplier(params);
  const Rational keys_last = params.key_fraction_p * Rational{narrow(last)};
  return keys_last * Rational{narrow(mult)} + Rational{narrow(last)};
}

double separation_benefit(const AmplificationParams& params)
{
  params.validate();
  const double mult = static_cast<double>(level_multiplier(params));
  return mult / (params.key_fraction_p.to_double() * mult + 1.0);
}

double separation_benefit(u32 levels_l, u32 growth_factor_f, double key_fraction_p)
{
  check(levels_l >= 1 && growth_factor_f >= 2, ErrorCode::kInvalidArgument, "invalid l or f");
  check(key_fraction_p > 0.0 && key_fraction_p <= 1.0,
        ErrorCode::kInvalidArgument,
        "key_fraction_p must be in (0, 1]");
  const double mult =
      static_cast<double>(levels_l) - 1.0 + static_cast<double>(growth_factor_f) * levels_l;
  return mult / (key_fraction_p * mult + 1.0);
}

double capacity_ratio(u32 growth_factor_f, u32 total_levels_n, u32 i)
{
  check(growth_factor_f >= 2, ErrorCode::kInvalidArgument, "growth_factor_f must be >= 2");
  check(i >= 1 && i < total_levels_n, ErrorCode::kInvalidArgument, "i must be in [1, N)");
  // (1 - f^(N-i)) / (1 - f^N) == (f^(N-i) - 1) / (f^N - 1); long double keeps
  // large N exact enough for the convergence checks.
  const long double f = growth_factor_f;
  const long double num = std::pow(f, static_cast<long double>(total_levels_n - i)) - 1.0L;
  const long double den = std::pow(f, static_cast<long double>(total_levels_n)) - 1.0L;
  return static_cast<double>(num / den);
}

KvCategory classify(u64 key_len,
                    u64 value_len,
                    const CategoryThresholds& thresholds,
                    ClassifyMode mode)
{
  const u64 total = key_len + value_len;
  if (mode == ClassifyMode::kTotalSize) {
    if (total <= thresholds.size_small_max) {
      return KvCategory::kSmall;
    }
    if (total <= thresholds.size_medium_max) {
      return KvCategory::kMedium;
    }
    return KvCategory::kLarge;
  }
  if (total == 0) {
    return KvCategory::kSmall;
  }
  const double p = static_cast<double>(key_len) / static_cast<double>(total);
  if (p > thresholds.t_sm) {
    return KvCategory::kSmall;
  }
  if (p <= thresholds.t_ml) {
    return KvCategory::kLarge;
  }
  return KvCategory::kMedium;
}

Rational simulate_leveled_traffic(const AmplificationParams& params, bool separated)
{
  params.validate();
  const u32 levels = params.levels_l;
  const u64 f = params.growth_factor_f;

  // Work in units of one L0 batch; the traffic is linear in the batch size so a
  // single scale at the end keeps the event loop in integers.
  constexpr u64 kMaxBatches = u64{1} << 27;
  u64 batches = 1;
  for (u32 i = 0; i < levels; ++i) {
    batches *= f;
    if (batches > kMaxBatches) {
      fail(ErrorCode::kIntractable, "simulation would need more than 2^27 L0 merges");
    }
  }

  std::vector<u64> capacity(levels + 1);
  capacity[0] = 1;
  for (u32 i = 1; i <= levels; ++i) {
    capacity[i] = capacity[i - 1] * f;
  }

  std::vector<u64> resident(levels + 1, 0);
  u64 traffic_units = 0;

  // Merge level `from` into `from + 1`; a level that becomes full is pushed down
  // right away, so every byte passes through every level once.
  auto merge = [&](auto& self, u32 from) -> void {
    const u32 to = from + 1;
    const u64 upper_cost = (from == 0) ? resident[from] : 2 * resident[from];
    traffic_units = checked_add(traffic_units, upper_cost + 2 * resident[to]);
    resident[to] += resident[from];
    resident[from] = 0;
    if (to < levels && resident[to] == capacity[to]) {
      self(self, to);
    }
  };

  for (u64 b = 0; b < batches; ++b) {
    resident[0] = 1;
    merge(merge, 0);
  }

  const Rational s0{narrow(static_cast<i128>(params.l0_size_s0))};
  if (!separated) {
    return Rational{narrow(traffic_units)} * s0;
  }
  const Rational batch_keys = params.key_fraction_p * s0;
  const Rational dataset = Rational{narrow(batches)} * s0;
  return Rational{narrow(traffic_units)} * batch_keys + dataset;
}

}  // namespace hkv
