#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace hkv {

using u8 = std::uint8_t;
using u16 = std::uint16_t;
using u32 = std::uint32_t;
using u64 = std::uint64_t;
using i64 = std::int64_t;

constexpr u64 kKiB = 1024;
constexpr u64 kMiB = 1024 * kKiB;

constexpr u64 kLeafSize = 8 * kKiB;
constexpr u64 kIndexNodeSize = 12 * kKiB;
constexpr u64 kLogChunkSize = 256 * kKiB;
constexpr u64 kMediumReadUnit = 8 * kKiB;
constexpr std::size_t kPrefixSize = 12;
constexpr std::size_t kMaxKeySize = 4096;

constexpr u64 kDefaultSegmentLength = 2 * kMiB;
constexpr u64 kMinSegmentLength = 64 * kKiB;
constexpr u64 kMaxSegmentLength = 8 * kMiB;

using Lsn = u64;
using SegmentId = u32;

enum class KvCategory : u8 {
  kSmall = 0,
  kMedium = 1,
  kLarge = 2,
};

std::string_view to_string(KvCategory c) noexcept;

enum class PlacementPolicy : u8 {
  kHybrid,
  kAllInPlace,
  kAllInLog,
  kMediumAsSmall,
  kMediumAsLarge,
};

std::string_view to_string(PlacementPolicy p) noexcept;
PlacementPolicy parse_policy(std::string_view name);

enum class ErrorCode {
  kInvalidArgument,
  kRangeError,
  kIntractable,
  kOutOfSpace,
  kCorruption,
  kStaleAddress,
  kInvariantViolation,
  kIo,
  kUnrecoverable,
};

std::string_view to_string(ErrorCode c) noexcept;

// Every failure surfaced by the library is an Error carrying a code, so tests
// and the CLI can distinguish "device full" from "corruption" without parsing.
class Error : public std::runtime_error
{
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code)
  {
  }

  ErrorCode code() const noexcept
  {
    return code_;
  }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& what);

inline void check(bool condition, ErrorCode code, const char* what)
{
  if (!condition) {
    fail(code, what);
  }
}

}  // namespace hkv
