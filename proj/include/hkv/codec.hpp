#pragma once

// Little-endian field packing plus the two checksums used on disk: CRC-64 for
// catalog and redo records, CRC-32 for log entries.

#include <hkv/types.hpp>

#include <array>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace hkv {

u64 crc64(std::span<const u8> data) noexcept;
u32 crc32(std::span<const u8> data, u32 seed = 0) noexcept;

inline std::span<const u8> as_bytes(std::string_view s) noexcept
{
  return {reinterpret_cast<const u8*>(s.data()), s.size()};
}

inline void store_u16(u8* p, u16 v) noexcept
{
  p[0] = static_cast<u8>(v);
  p[1] = static_cast<u8>(v >> 8);
}
inline void store_u32(u8* p, u32 v) noexcept
{
  for (int i = 0; i < 4; ++i) {
    p[i] = static_cast<u8>(v >> (8 * i));
  }
}
inline void store_u64(u8* p, u64 v) noexcept
{
  for (int i = 0; i < 8; ++i) {
    p[i] = static_cast<u8>(v >> (8 * i));
  }
}
inline u16 load_u16(const u8* p) noexcept
{
  return static_cast<u16>(p[0] | (p[1] << 8));
}
inline u32 load_u32(const u8* p) noexcept
{
  u32 v = 0;
  for (int i = 3; i >= 0; --i) {
    v = (v << 8) | p[i];
  }
  return v;
}
inline u64 load_u64(const u8* p) noexcept
{
  u64 v = 0;
  for (int i = 7; i >= 0; --i) {
    v = (v << 8) | p[i];
  }
  return v;
}

class ByteWriter
{
 public:
  void u8_(u8 v)
  {
    buf_.push_back(v);
  }
  void u16_(u16 v)
  {
    const size_t at = grow(2);
    store_u16(&buf_[at], v);
  }
  void u32_(u32 v)
  {
    const size_t at = grow(4);
    store_u32(&buf_[at], v);
  }
  void u64_(u64 v)
  {
    const size_t at = grow(8);
    store_u64(&buf_[at], v);
  }
  void raw(std::span<const u8> bytes)
  {
    buf_.insert(buf_.end(), bytes.begin(), bytes.end());
  }
  // u32 length followed by the bytes.
  void str(std::string_view s)
  {
    u32_(static_cast<u32>(s.size()));
    raw(as_bytes(s));
  }
  void patch_u32(size_t at, u32 v)
  {
    store_u32(&buf_[at], v);
  }

  size_t size() const noexcept
  {
    return buf_.size();
  }
  std::vector<u8>& bytes() noexcept
  {
    return buf_;
  }

 private:
  size_t grow(size_t n)
  {
    const size_t at = buf_.size();
    buf_.resize(at + n);
    return at;
  }

  std::vector<u8> buf_;
};

// Bounds-checked reader; any overrun is reported as corruption because the
// inputs are always on-device records whose checksum already passed.
class ByteReader
{
 public:
  explicit ByteReader(std::span<const u8> data) noexcept : data_(data)
  {
  }

  u8 u8_()
  {
    return *take(1);
  }
  u16 u16_()
  {
    return load_u16(take(2));
  }
  u32 u32_()
  {
    return load_u32(take(4));
  }
  u64 u64_()
  {
    return load_u64(take(8));
  }
  std::string str()
  {
    const u32 n = u32_();
    const u8* p = take(n);
    return std::string(reinterpret_cast<const char*>(p), n);
  }
  std::span<const u8> raw(size_t n)
  {
    return {take(n), n};
  }

  size_t remaining() const noexcept
  {
    return data_.size() - pos_;
  }
  size_t position() const noexcept
  {
    return pos_;
  }

 private:
  const u8* take(size_t n)
  {
    if (data_.size() - pos_ < n) {
      fail(ErrorCode::kCorruption, "record truncated");
    }
    const u8* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }

  std::span<const u8> data_;
  size_t pos_ = 0;
};

}  // namespace hkv
