#pragma once

// Flat byte-addressed backing stores. Everything above storage_layout talks to
// a Device only through Storage::read_at / write_at.

#include <hkv/types.hpp>

#include <filesystem>
#include <memory>
#include <mutex>
#include <span>
#include <stdexcept>
#include <vector>

namespace hkv {

class Device
{
 public:
  virtual ~Device() = default;

  virtual u64 size() const = 0;
  virtual void read(u64 offset, std::span<u8> out) = 0;
  virtual void write(u64 offset, std::span<const u8> data) = 0;
  virtual void sync() = 0;
};

class FileDevice final : public Device
{
 public:
  // Creates (or truncates) `path` to exactly `size` bytes.
  static std::shared_ptr<FileDevice> create(const std::filesystem::path& path, u64 size);
  static std::shared_ptr<FileDevice> open(const std::filesystem::path& path);

  ~FileDevice() override;

  u64 size() const override
  {
    return size_;
  }
  void read(u64 offset, std::span<u8> out) override;
  void write(u64 offset, std::span<const u8> data) override;
  void sync() override;

 private:
  FileDevice(int fd, u64 size) : fd_(fd), size_(size)
  {
  }

  int fd_;
  u64 size_;
};

class MemoryDevice final : public Device
{
 public:
  explicit MemoryDevice(u64 size) : bytes_(size, 0)
  {
  }
  explicit MemoryDevice(std::vector<u8> image) : bytes_(std::move(image))
  {
  }

  u64 size() const override
  {
    return bytes_.size();
  }
  void read(u64 offset, std::span<u8> out) override;
  void write(u64 offset, std::span<const u8> data) override;
  void sync() override
  {
  }

 private:
  std::mutex mu_;
  std::vector<u8> bytes_;
};

// Thrown by FaultInjectingDevice when an armed crash point is reached. Not an
// hkv::Error on purpose: nothing in the library should try to handle it.
struct SimulatedCrash : std::runtime_error {
  SimulatedCrash() : std::runtime_error("simulated crash")
  {
  }
};

// In-memory device that remembers which writes have been synced. A crash image
// is the synced state plus, optionally, an ordered prefix of the unsynced
// writes and a torn fragment of the next one.
class FaultInjectingDevice final : public Device
{
 public:
  explicit FaultInjectingDevice(u64 size);
  explicit FaultInjectingDevice(std::vector<u8> image);

  u64 size() const override
  {
    return current_.size();
  }
  void read(u64 offset, std::span<u8> out) override;
  void write(u64 offset, std::span<const u8> data) override;
  void sync() override;

  // The n-th write from now (1-based) throws SimulatedCrash without being
  // applied; every later call throws too. 0 disarms.
  void arm_crash_after_writes(u64 n);
  bool crashed() const;

  u64 write_count() const;
  size_t pending_count() const;

  std::vector<u8> crash_image(size_t keep_pending = 0, size_t torn_bytes = 0) const;

 private:
  struct Pending {
    u64 offset;
    std::vector<u8> data;
  };

  void check_alive() const;

  mutable std::mutex mu_;
  std::vector<u8> durable_;
  std::vector<u8> current_;
  std::vector<Pending> pending_;
  u64 writes_ = 0;
  u64 crash_at_ = 0;
  bool crashed_ = false;
};

}  // namespace hkv
