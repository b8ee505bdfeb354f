#include <hkv/types.hpp>

namespace hkv {

std::string_view to_string(KvCategory c) noexcept
{
  switch (c) {
    case KvCategory::kSmall:
      return "small";
    case KvCategory::kMedium:
      return "medium";
    case KvCategory::kLarge:
      return "large";
  }
  return "?";
}

std::string_view to_string(PlacementPolicy p) noexcept
{
  switch (p) {
    case PlacementPolicy::kHybrid:
      return "hybrid";
    case PlacementPolicy::kAllInPlace:
      return "all-in-place";
    case PlacementPolicy::kAllInLog:
      return "all-in-log";
    case PlacementPolicy::kMediumAsSmall:
      return "medium-as-small";
    case PlacementPolicy::kMediumAsLarge:
      return "medium-as-large";
  }
  return "?";
}

PlacementPolicy parse_policy(std::string_view name)
{
  for (PlacementPolicy p : {PlacementPolicy::kHybrid,
                            PlacementPolicy::kAllInPlace,
                            PlacementPolicy::kAllInLog,
                            PlacementPolicy::kMediumAsSmall,
                            PlacementPolicy::kMediumAsLarge}) {
    if (to_string(p) == name) {
      return p;
    }
  }
  fail(ErrorCode::kInvalidArgument, "unknown placement policy: " + std::string{name});
}

std::string_view to_string(ErrorCode c) noexcept
{
  switch (c) {
    case ErrorCode::kInvalidArgument:
      return "invalid-argument";
    case ErrorCode::kRangeError:
      return "range-error";
    case ErrorCode::kIntractable:
      return "intractable";
    case ErrorCode::kOutOfSpace:
      return "out-of-space";
    case ErrorCode::kCorruption:
      return "corruption";
    case ErrorCode::kStaleAddress:
      return "stale-address";
    case ErrorCode::kInvariantViolation:
      return "invariant-violation";
    case ErrorCode::kIo:
      return "io-error";
    case ErrorCode::kUnrecoverable:
      return "unrecoverable";
  }
  return "?";
}

void fail(ErrorCode code, const std::string& what)
{
  throw Error{code, std::string{to_string(code)} + ": " + what};
}

}  // namespace hkv
