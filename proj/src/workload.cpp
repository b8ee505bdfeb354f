#include <hkv/workload.hpp>

#include <charconv>
#include <cmath>
#include <cstdio>

namespace hkv {

namespace {

constexpr std::string_view kPhaseNames[] = {"load-a", "load-e", "run-a", "run-b", "run-c", "run-d", "run-e"};

// Low-discrepancy position of index i in [0, 1).
double weyl(u64 i, u64 seed)
{
  constexpr double kPhi = 0.6180339887498949;
  const double x = static_cast<double>(i) * kPhi + static_cast<double>(seed % 1000) / 1000.0;
  return x - std::floor(x);
}

}  // namespace

std::string_view to_string(Phase p) noexcept
{
  return kPhaseNames[static_cast<size_t>(p)];
}

Phase parse_phase(std::string_view s)
{
  for (size_t i = 0; i < std::size(kPhaseNames); ++i) {
    if (s == kPhaseNames[i]) {
      return static_cast<Phase>(i);
    }
  }
  fail(ErrorCode::kInvalidArgument, "unknown phase: " + std::string(s));
}

bool is_load(Phase p) noexcept
{
  return p == Phase::kLoadA || p == Phase::kLoadE;
}

std::string_view to_string(KeyDist d) noexcept
{
  return d == KeyDist::kUniform ? "uniform" : "zipfian";
}

KeyDist parse_key_dist(std::string_view s)
{
  if (s == "uniform") {
    return KeyDist::kUniform;
  }
  if (s == "zipfian") {
    return KeyDist::kZipfian;
  }
  fail(ErrorCode::kInvalidArgument, "unknown key distribution: " + std::string(s));
}

SizeMix SizeMix::parse(std::string_view s)
{
  if (s == "S") return {100, 0, 0};
  if (s == "M") return {0, 100, 0};
  if (s == "L") return {0, 0, 100};
  if (s == "SD") return {60, 20, 20};
  if (s == "MD") return {20, 60, 20};
  if (s == "LD") return {20, 20, 60};
  SizeMix m{};
  u32* parts[] = {&m.small, &m.medium, &m.large};
  const char* p = s.data();
  const char* end = s.data() + s.size();
  for (int i = 0; i < 3; ++i) {
    auto [next, ec] = std::from_chars(p, end, *parts[i]);
    check(ec == std::errc{}, ErrorCode::kInvalidArgument, "bad size mix");
    p = next;
    if (i < 2) {
      check(p != end && *p == '-', ErrorCode::kInvalidArgument, "bad size mix");
      ++p;
    }
  }
  check(p == end, ErrorCode::kInvalidArgument, "bad size mix");
  check(m.small + m.medium + m.large == 100, ErrorCode::kInvalidArgument, "size mix must sum to 100");
  return m;
}

std::string SizeMix::to_string() const
{
  return std::to_string(small) + "-" + std::to_string(medium) + "-" + std::to_string(large);
}

void WorkloadSpec::validate() const
{
  check(mix.small + mix.medium + mix.large == 100, ErrorCode::kInvalidArgument, "size mix must sum to 100");
  check(keys > 0, ErrorCode::kInvalidArgument, "key count must be positive");
  check(key_size >= 24 && key_size <= kMaxKeySize, ErrorCode::kInvalidArgument, "key size out of range");
  check(zipf_theta > 0 && zipf_theta < 1, ErrorCode::kInvalidArgument, "zipfian exponent must be in (0, 1)");
  check(max_scan_length > 0, ErrorCode::kInvalidArgument, "scan length must be positive");
}

u64 WorkloadSpec::run_ops(Phase p) const
{
  if (is_load(p)) {
    return keys;
  }
  if (ops) {
    return ops;
  }
  return p == Phase::kRunE ? std::max<u64>(1, keys / 5) : keys;
}

ZipfianGenerator::ZipfianGenerator(u64 n, double theta) : n_(n), theta_(theta)
{
  check(n > 0, ErrorCode::kInvalidArgument, "zipfian over an empty range");
  double zeta = 0;
  for (u64 i = 1; i <= n; ++i) {
    zeta += 1.0 / std::pow(static_cast<double>(i), theta);
  }
  zetan_ = zeta;
  const double zeta2 = 1.0 + 1.0 / std::pow(2.0, theta);
  alpha_ = 1.0 / (1.0 - theta);
  eta_ = (1.0 - std::pow(2.0 / static_cast<double>(n), 1.0 - theta)) / (1.0 - zeta2 / zetan_);
  half_pow_theta_ = 1.0 + std::pow(0.5, theta);
}

u64 ZipfianGenerator::next(std::mt19937_64& rng)
{
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  const double uz = u * zetan_;
  if (uz < 1.0) {
    return 0;
  }
  if (uz < half_pow_theta_) {
    return std::min<u64>(1, n_ - 1);
  }
  const u64 v = static_cast<u64>(static_cast<double>(n_) * std::pow(eta_ * u - eta_ + 1.0, alpha_));
  return std::min(v, n_ - 1);
}

u64 fnv1a64(std::string_view bytes) noexcept
{
  u64 h = 14695981039346656037ull;
  for (char c : bytes) {
    h ^= static_cast<u8>(c);
    h *= 1099511628211ull;
  }
  return h;
}

Workload::Workload(WorkloadSpec spec, Phase phase)
    : spec_(spec), phase_(phase), total_(spec.run_ops(phase)), inserted_(is_load(phase) ? 0 : spec.keys),
      rng_(spec.seed * 0x9E3779B97F4A7C15ull + static_cast<u64>(phase))
{
  spec_.validate();
  if (!is_load(phase) && spec.dist == KeyDist::kZipfian) {
    zipf_.emplace(spec.keys, spec.zipf_theta);
  }
}

std::string Workload::key(u64 index) const
{
  char buf[24];
  std::snprintf(buf, sizeof buf, "user%016llx",
                static_cast<unsigned long long>(fnv1a64(std::string_view(
                    reinterpret_cast<const char*>(&index), sizeof index))));
  std::string k = buf;
  k.resize(spec_.key_size, '0');
  return k;
}

KvCategory Workload::insert_category(u64 index) const
{
  const double x = weyl(index, spec_.seed) * 100.0;
  if (x < spec_.mix.small) {
    return KvCategory::kSmall;
  }
  if (x < spec_.mix.small + spec_.mix.medium) {
    return KvCategory::kMedium;
  }
  return KvCategory::kLarge;
}

KvCategory Workload::draw_category()
{
  const u64 x = rng_() % 100;
  if (x < spec_.mix.small) {
    return KvCategory::kSmall;
  }
  if (x < spec_.mix.small + spec_.mix.medium) {
    return KvCategory::kMedium;
  }
  return KvCategory::kLarge;
}

std::string Workload::make_value(KvCategory c)
{
  const u32 len = c == KvCategory::kSmall    ? spec_.small_value
                  : c == KvCategory::kMedium ? spec_.medium_value
                                             : spec_.large_value;
  std::string v(len, '\0');
  u64 bits = rng_();
  for (u32 i = 0; i < len; ++i) {
    if (i % 8 == 7) {
      bits = rng_();
    }
    v[i] = static_cast<char>('a' + (bits >> ((i % 8) * 8)) % 26);
  }
  return v;
}

u64 Workload::pick_existing()
{
  // Scrambled: popular items are spread over the key space.
  if (zipf_) {
    const u64 z = zipf_->next(rng_);
    return fnv1a64(std::string_view(reinterpret_cast<const char*>(&z), sizeof z)) % spec_.keys;
  }
  return rng_() % spec_.keys;
}

std::optional<WorkloadOp> Workload::next()
{
  if (done_ == total_) {
    return std::nullopt;
  }
  ++done_;
  WorkloadOp op;
  auto insert = [&] {
    op.type = OpType::kInsert;
    op.key_index = inserted_++;
    op.category = insert_category(op.key_index);
    op.value = make_value(op.category);
  };
  const u64 dice = rng_() % 100;
  switch (phase_) {
    case Phase::kLoadA:
    case Phase::kLoadE:
      insert();
      break;
    case Phase::kRunA:
    case Phase::kRunB: {
      const u64 updates = phase_ == Phase::kRunA ? 50 : 5;
      op.key_index = pick_existing();
      if (dice < updates) {
        // Updates may move a key to another size category.
        op.type = OpType::kUpdate;
        op.category = draw_category();
        op.value = make_value(op.category);
      } else {
        op.type = OpType::kRead;
      }
      break;
    }
    case Phase::kRunC:
      op.type = OpType::kRead;
      op.key_index = pick_existing();
      break;
    case Phase::kRunD:
      if (dice < 5) {
        insert();
      } else {
        const u64 recent = std::max<u64>(1, inserted_ / 100);
        op.type = OpType::kRead;
        op.key_index = inserted_ - 1 - rng_() % recent;
      }
      break;
    case Phase::kRunE:
      if (dice < 5) {
        insert();
      } else {
        op.type = OpType::kScan;
        op.key_index = pick_existing();
        op.scan_length = 1 + static_cast<u32>(rng_() % spec_.max_scan_length);
      }
      break;
  }
  op.key = key(op.key_index);
  return op;
}

}  // namespace hkv
