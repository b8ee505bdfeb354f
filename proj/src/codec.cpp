#include <hkv/codec.hpp>

#include <boost/crc.hpp>

namespace hkv {

// CRC-64/XZ parameters.
using Crc64 = boost::crc_optimal<64, 0x42F0E1EBA9EA3693ULL, ~0ULL, ~0ULL, true, true>;

u64 crc64(std::span<const u8> data) noexcept
{
  Crc64 crc;
  crc.process_bytes(data.data(), data.size());
  return crc.checksum();
}

u32 crc32(std::span<const u8> data, u32 seed) noexcept
{
  boost::crc_32_type crc;
  u8 salt[4];
  store_u32(salt, seed);
  crc.process_bytes(salt, sizeof salt);
  crc.process_bytes(data.data(), data.size());
  return crc.checksum();
}

}  // namespace hkv
