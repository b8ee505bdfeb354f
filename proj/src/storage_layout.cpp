#include <hkv/storage_layout.hpp>

namespace hkv {

namespace {

constexpr u64 kCatalogFixedBytes = 64 * kKiB;
constexpr u64 kCatalogBytesPerSegment = 16;
constexpr u64 kRedoBytes = 1 * kMiB;
constexpr u32 kMinDataSegments = 4;

u64 div_ceil(u64 a, u64 b)
{
  return (a + b - 1) / b;
}

}  // namespace

Geometry Geometry::plan(u64 device_size, u64 segment_length)
{
  check(segment_length >= kMinSegmentLength && segment_length <= kMaxSegmentLength,
        ErrorCode::kInvalidArgument,
        "segment length must be between 64 KiB and 8 MiB");
  check(segment_length % kMinSegmentLength == 0,
        ErrorCode::kInvalidArgument,
        "segment length must be a multiple of 64 KiB");
  Geometry g;
  g.segment_length = segment_length;
  const u64 count = device_size / segment_length;
  check(count <= 0xFFFF'FFF0u, ErrorCode::kInvalidArgument, "too many segments");
  g.segment_count = static_cast<u32>(count);
  // The catalog stores a bitmap bit, a generation and at most one list entry
  // per segment, plus bounded per-region headers.
  g.catalog_segments = static_cast<u32>(
      div_ceil(kCatalogFixedBytes + kCatalogBytesPerSegment * count, segment_length));
  g.redo_segments = static_cast<u32>(std::max<u64>(1, div_ceil(kRedoBytes, segment_length)));
  check(g.segment_count >= g.first_data_segment() + kMinDataSegments,
        ErrorCode::kInvalidArgument,
        "device too small for the requested segment length");
  return g;
}

std::string_view to_string(OwnerKind k) noexcept
{
  switch (k) {
    case OwnerKind::kFree:
      return "free";
    case OwnerKind::kCatalog:
      return "catalog";
    case OwnerKind::kRedo:
      return "redo";
    case OwnerKind::kLevel:
      return "level";
    case OwnerKind::kSmallLog:
      return "small-log";
    case OwnerKind::kMediumLog:
      return "medium-log";
    case OwnerKind::kLargeLog:
      return "large-log";
  }
  return "?";
}

std::string Owner::to_string() const
{
  std::string out{hkv::to_string(kind)};
  if (kind == OwnerKind::kLevel) {
    out += "(" + std::to_string(region) + ",L" + std::to_string(level) + ")";
  } else if (kind != OwnerKind::kFree && kind != OwnerKind::kCatalog &&
             kind != OwnerKind::kRedo) {
    out += "(" + std::to_string(region) + ")";
  }
  return out;
}

Storage::Storage(std::shared_ptr<Device> device, Geometry geometry, Metrics& metrics)
    : device_(std::move(device)),
      geo_(geometry),
      metrics_(metrics),
      owners_(geometry.segment_count),
      gens_(geometry.segment_count, 0),
      pending_(geometry.segment_count, 0)
{
  check(device_->size() >= static_cast<u64>(geo_.segment_count) * geo_.segment_length,
        ErrorCode::kInvalidArgument,
        "device smaller than its geometry");
  for (u32 i = 0; i < 2 * geo_.catalog_segments; ++i) {
    owners_[i].kind = OwnerKind::kCatalog;
  }
  for (u32 i = 2 * geo_.catalog_segments; i < geo_.first_data_segment(); ++i) {
    owners_[i].kind = OwnerKind::kRedo;
  }
  free_count_ = geo_.data_segments();
}

void Storage::check_data_segment(SegmentId id) const
{
  if (id < geo_.first_data_segment()) {
    fail(ErrorCode::kInvariantViolation,
         "segment " + std::to_string(id) + " is reserved for catalog/redo");
  }
  if (id >= geo_.segment_count) {
    fail(ErrorCode::kRangeError, "segment id out of range");
  }
}

SegRef Storage::allocate(Owner owner)
{
  check(owner.kind != OwnerKind::kFree && owner.kind != OwnerKind::kCatalog &&
            owner.kind != OwnerKind::kRedo,
        ErrorCode::kInvalidArgument,
        "cannot allocate for a reserved owner");
  std::lock_guard lock{mu_};
  for (u32 id = geo_.first_data_segment(); id < geo_.segment_count; ++id) {
    if (owners_[id].kind == OwnerKind::kFree && !pending_[id]) {
      owners_[id] = owner;
      ++gens_[id];
      --free_count_;
      return SegRef{id, gens_[id]};
    }
  }
  fail(ErrorCode::kOutOfSpace, "device full");
}

void Storage::free_segment(SegmentId id)
{
  std::lock_guard lock{mu_};
  check_data_segment(id);
  if (owners_[id].kind == OwnerKind::kFree) {
    fail(ErrorCode::kInvariantViolation, "double free of segment " + std::to_string(id));
  }
  owners_[id] = Owner{};
  pending_[id] = 1;
}

void Storage::release_pending_frees()
{
  std::lock_guard lock{mu_};
  for (u32 id = 0; id < geo_.segment_count; ++id) {
    if (pending_[id]) {
      pending_[id] = 0;
      ++free_count_;
    }
  }
}

void Storage::retag(SegmentId id, Owner owner)
{
  std::lock_guard lock{mu_};
  check_data_segment(id);
  check(owners_[id].kind != OwnerKind::kFree, ErrorCode::kInvariantViolation, "retag of free segment");
  owners_[id] = owner;
}

Owner Storage::owner(SegmentId id) const
{
  std::lock_guard lock{mu_};
  check(id < geo_.segment_count, ErrorCode::kRangeError, "segment id out of range");
  return owners_[id];
}

u32 Storage::generation(SegmentId id) const
{
  std::lock_guard lock{mu_};
  check(id < geo_.segment_count, ErrorCode::kRangeError, "segment id out of range");
  return gens_[id];
}

bool Storage::is_live(SegRef ref, OwnerKind kind) const
{
  std::lock_guard lock{mu_};
  if (ref.id >= geo_.segment_count) {
    return false;
  }
  return owners_[ref.id].kind == kind && gens_[ref.id] == ref.gen;
}

u32 Storage::free_count() const
{
  std::lock_guard lock{mu_};
  return free_count_;
}

u32 Storage::pending_free_count() const
{
  std::lock_guard lock{mu_};
  u32 n = 0;
  for (u8 p : pending_) {
    n += p;
  }
  return n;
}

u32 Storage::owned_count() const
{
  std::lock_guard lock{mu_};
  u32 n = 0;
  for (u32 id = geo_.first_data_segment(); id < geo_.segment_count; ++id) {
    n += owners_[id].kind != OwnerKind::kFree;
  }
  return n;
}

void Storage::check_transfer(u64 offset, u64 length) const
{
  const u64 seg = offset / geo_.segment_length;
  if (seg >= geo_.segment_count || (offset + length - 1) / geo_.segment_length != seg) {
    fail(ErrorCode::kRangeError, "transfer crosses a segment boundary or leaves the device");
  }
  std::lock_guard lock{mu_};
  if (owners_[seg].kind == OwnerKind::kFree && !pending_[seg]) {
    fail(ErrorCode::kRangeError, "transfer into free segment " + std::to_string(seg));
  }
}

void Storage::read_at(u64 offset, std::span<u8> out, TrafficClass cls)
{
  if (out.empty()) {
    return;
  }
  check_transfer(offset, out.size());
  device_->read(offset, out);
  metrics_.add(cls, out.size());
}

void Storage::write_at(u64 offset, std::span<const u8> data, TrafficClass cls)
{
  if (data.empty()) {
    return;
  }
  check_transfer(offset, data.size());
  device_->write(offset, data);
  metrics_.add(cls, data.size());
}

void Storage::sync()
{
  device_->sync();
}

void Storage::read_reserved(u64 offset, std::span<u8> out, TrafficClass cls)
{
  if (out.empty()) {
    return;
  }
  check(offset + out.size() <= segment_offset(geo_.first_data_segment()),
        ErrorCode::kRangeError,
        "reserved read outside the catalog/redo area");
  device_->read(offset, out);
  metrics_.add(cls, out.size());
}

void Storage::write_reserved(u64 offset, std::span<const u8> data, TrafficClass cls)
{
  if (data.empty()) {
    return;
  }
  check(offset + data.size() <= segment_offset(geo_.first_data_segment()),
        ErrorCode::kRangeError,
        "reserved write outside the catalog/redo area");
  device_->write(offset, data);
  metrics_.add(cls, data.size());
}

void Storage::load_ownership(const std::vector<std::pair<SegRef, Owner>>& owned,
                             const std::vector<u32>& generations)
{
  std::lock_guard lock{mu_};
  check(generations.size() == geo_.segment_count,
        ErrorCode::kCorruption,
        "generation table size mismatch");
  gens_ = generations;
  for (u32 id = geo_.first_data_segment(); id < geo_.segment_count; ++id) {
    owners_[id] = Owner{};
    pending_[id] = 0;
  }
  free_count_ = geo_.data_segments();
  for (const auto& [ref, owner] : owned) {
    if (ref.id < geo_.first_data_segment() || ref.id >= geo_.segment_count) {
      fail(ErrorCode::kCorruption, "owned segment id out of range");
    }
    if (owners_[ref.id].kind != OwnerKind::kFree) {
      fail(ErrorCode::kCorruption,
           "segment " + std::to_string(ref.id) + " claimed by two owners");
    }
    owners_[ref.id] = owner;
    gens_[ref.id] = std::max(gens_[ref.id], ref.gen);
    --free_count_;
  }
}

std::vector<u32> Storage::generations() const
{
  std::lock_guard lock{mu_};
  return gens_;
}

std::vector<std::pair<SegmentId, Owner>> Storage::owned_segments() const
{
  std::lock_guard lock{mu_};
  std::vector<std::pair<SegmentId, Owner>> out;
  for (u32 id = geo_.first_data_segment(); id < geo_.segment_count; ++id) {
    if (owners_[id].kind != OwnerKind::kFree) {
      out.emplace_back(id, owners_[id]);
    }
  }
  return out;
}

std::vector<u8> Storage::bitmap() const
{
  std::lock_guard lock{mu_};
  std::vector<u8> bits((geo_.segment_count + 7) / 8, 0);
  for (u32 id = 0; id < geo_.segment_count; ++id) {
    if (owners_[id].kind != OwnerKind::kFree) {
      bits[id / 8] |= static_cast<u8>(1u << (id % 8));
    }
  }
  return bits;
}

}  // namespace hkv
