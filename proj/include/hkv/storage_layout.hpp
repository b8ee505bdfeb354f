#pragma once

// Segment-granular space manager over a flat device. Layout:
//
//   [catalog copy A][catalog copy B][redo area][data segments ...]
//
// Each catalog copy and the redo area occupy whole segments. All device I/O of
// the store goes through read_at / write_at so every byte is attributed to a
// traffic class.

#include <hkv/device.hpp>
#include <hkv/metrics.hpp>
#include <hkv/types.hpp>

#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

namespace hkv {

struct Geometry {
  u64 segment_length = kDefaultSegmentLength;
  u32 segment_count = 0;
  u32 catalog_segments = 1;  // per copy
  u32 redo_segments = 1;

  u32 first_data_segment() const noexcept
  {
    return 2 * catalog_segments + redo_segments;
  }
  u32 data_segments() const noexcept
  {
    return segment_count - first_data_segment();
  }
  u64 catalog_offset(int copy) const noexcept
  {
    return static_cast<u64>(copy) * catalog_segments * segment_length;
  }
  u64 catalog_capacity() const noexcept
  {
    return catalog_segments * segment_length;
  }
  u64 redo_offset() const noexcept
  {
    return 2ull * catalog_segments * segment_length;
  }
  u64 redo_capacity() const noexcept
  {
    return redo_segments * segment_length;
  }

  // Picks the reservation sizes for a device of `device_size` bytes.
  static Geometry plan(u64 device_size, u64 segment_length);

  bool operator==(const Geometry&) const = default;
};

enum class OwnerKind : u8 {
  kFree = 0,
  kCatalog,
  kRedo,
  kLevel,
  kSmallLog,
  kMediumLog,
  kLargeLog,
};

std::string_view to_string(OwnerKind k) noexcept;

struct Owner {
  OwnerKind kind = OwnerKind::kFree;
  u8 level = 0;
  u16 region = 0;

  static Owner level_of(u16 region, u8 level)
  {
    return Owner{OwnerKind::kLevel, level, region};
  }
  static Owner log_of(u16 region, OwnerKind kind)
  {
    return Owner{kind, 0, region};
  }

  bool operator==(const Owner&) const = default;
  std::string to_string() const;
};

// A segment plus the allocation generation it was handed out under. Anything
// that remembers a location also remembers the generation, so a reference into
// a segment that has since been freed and reused is detectably stale.
struct SegRef {
  SegmentId id = 0;
  u32 gen = 0;

  bool operator==(const SegRef&) const = default;
};

class Storage
{
 public:
  Storage(std::shared_ptr<Device> device, Geometry geometry, Metrics& metrics);

  const Geometry& geometry() const noexcept
  {
    return geo_;
  }
  u64 segment_length() const noexcept
  {
    return geo_.segment_length;
  }
  u64 segment_offset(SegmentId id) const noexcept
  {
    return static_cast<u64>(id) * geo_.segment_length;
  }
  SegmentId segment_of(u64 offset) const noexcept
  {
    return static_cast<SegmentId>(offset / geo_.segment_length);
  }

  // Lowest free data segment. Throws kOutOfSpace when none is left.
  SegRef allocate(Owner owner);
  // The segment stops being owned immediately, but it only becomes allocatable
  // after release_pending_frees(), which callers invoke once the redo record
  // describing the free is durable.
  void free_segment(SegmentId id);
  void release_pending_frees();
  void retag(SegmentId id, Owner owner);

  Owner owner(SegmentId id) const;
  u32 generation(SegmentId id) const;
  // Owned by `kind` under the same generation.
  bool is_live(SegRef ref, OwnerKind kind) const;

  u32 free_count() const;
  u32 owned_count() const;  // data segments only, pending frees excluded
  u32 pending_free_count() const;

  // Transfers confined to a single non-free segment.
  void read_at(u64 offset, std::span<u8> out, TrafficClass cls);
  void write_at(u64 offset, std::span<const u8> data, TrafficClass cls);
  void sync();

  // Transfers inside the reserved catalog/redo areas, which may span several
  // segments.
  void read_reserved(u64 offset, std::span<u8> out, TrafficClass cls);
  void write_reserved(u64 offset, std::span<const u8> data, TrafficClass cls);

  // Replace ownership wholesale (used at open). Data segments not listed are
  // free; generations are taken as given.
  void load_ownership(const std::vector<std::pair<SegRef, Owner>>& owned,
                      const std::vector<u32>& generations);
  std::vector<u32> generations() const;
  std::vector<std::pair<SegmentId, Owner>> owned_segments() const;
  std::vector<u8> bitmap() const;

 private:
  void check_data_segment(SegmentId id) const;
  void check_transfer(u64 offset, u64 length) const;

  std::shared_ptr<Device> device_;
  Geometry geo_;
  Metrics& metrics_;

  mutable std::mutex mu_;
  std::vector<Owner> owners_;
  std::vector<u32> gens_;
  std::vector<u8> pending_;  // freed but not yet reusable
  u32 free_count_ = 0;
};

}  // namespace hkv
