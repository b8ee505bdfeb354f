#include <hkv/device.hpp>

#include <cerrno>
#include <cstring>

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

namespace hkv {

namespace {

void check_range(u64 offset, u64 length, u64 size)
{
  if (offset > size || length > size - offset) {
    fail(ErrorCode::kRangeError, "device access out of bounds");
  }
}

[[noreturn]] void io_fail(const char* what)
{
  fail(ErrorCode::kIo, std::string{what} + ": " + std::strerror(errno));
}

}  // namespace

std::shared_ptr<FileDevice> FileDevice::create(const std::filesystem::path& path, u64 size)
{
  const int fd = ::open(path.c_str(), O_RDWR | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) {
    io_fail("open");
  }
  if (::ftruncate(fd, static_cast<off_t>(size)) != 0) {
    ::close(fd);
    io_fail("ftruncate");
  }
  return std::shared_ptr<FileDevice>(new FileDevice(fd, size));
}

std::shared_ptr<FileDevice> FileDevice::open(const std::filesystem::path& path)
{
  const int fd = ::open(path.c_str(), O_RDWR);
  if (fd < 0) {
    io_fail("open");
  }
  struct stat st {};
  if (::fstat(fd, &st) != 0) {
    ::close(fd);
    io_fail("fstat");
  }
  return std::shared_ptr<FileDevice>(new FileDevice(fd, static_cast<u64>(st.st_size)));
}

FileDevice::~FileDevice()
{
  ::close(fd_);
}

void FileDevice::read(u64 offset, std::span<u8> out)
{
  check_range(offset, out.size(), size_);
  size_t done = 0;
  while (done < out.size()) {
    const ssize_t n =
        ::pread(fd_, out.data() + done, out.size() - done, static_cast<off_t>(offset + done));
    if (n < 0) {
      if (errno == EINTR) {
        continue;
      }
      io_fail("pread");
    }
    if (n == 0) {
      fail(ErrorCode::kIo, "short read");
    }
    done += static_cast<size_t>(n);
  }
}

void FileDevice::write(u64 offset, std::span<const u8> data)
{
  check_range(offset, data.size(), size_);
  size_t done = 0;
  while (done < data.size()) {
    const ssize_t n =
        ::pwrite(fd_, data.data() + done, data.size() - done, static_cast<off_t>(offset + done));
    if (n < 0) {
      if (errno == EINTR) {
        continue;
      }
      io_fail("pwrite");
    }
    done += static_cast<size_t>(n);
  }
}

void FileDevice::sync()
{
  if (::fdatasync(fd_) != 0) {
    io_fail("fdatasync");
  }
}

void MemoryDevice::read(u64 offset, std::span<u8> out)
{
  std::lock_guard lock{mu_};
  check_range(offset, out.size(), bytes_.size());
  std::memcpy(out.data(), bytes_.data() + offset, out.size());
}

void MemoryDevice::write(u64 offset, std::span<const u8> data)
{
  std::lock_guard lock{mu_};
  check_range(offset, data.size(), bytes_.size());
  std::memcpy(bytes_.data() + offset, data.data(), data.size());
}

FaultInjectingDevice::FaultInjectingDevice(u64 size) : durable_(size, 0), current_(size, 0)
{
}

FaultInjectingDevice::FaultInjectingDevice(std::vector<u8> image)
    : durable_(image), current_(std::move(image))
{
}

void FaultInjectingDevice::check_alive() const
{
  if (crashed_) {
    throw SimulatedCrash{};
  }
}

void FaultInjectingDevice::read(u64 offset, std::span<u8> out)
{
  std::lock_guard lock{mu_};
  check_alive();
  check_range(offset, out.size(), current_.size());
  std::memcpy(out.data(), current_.data() + offset, out.size());
}

void FaultInjectingDevice::write(u64 offset, std::span<const u8> data)
{
  std::lock_guard lock{mu_};
  check_alive();
  check_range(offset, data.size(), current_.size());
  ++writes_;
  if (crash_at_ != 0 && writes_ >= crash_at_) {
    crashed_ = true;
    throw SimulatedCrash{};
  }
  std::memcpy(current_.data() + offset, data.data(), data.size());
  pending_.push_back(Pending{offset, std::vector<u8>(data.begin(), data.end())});
}

void FaultInjectingDevice::sync()
{
  std::lock_guard lock{mu_};
  check_alive();
  for (const Pending& p : pending_) {
    std::memcpy(durable_.data() + p.offset, p.data.data(), p.data.size());
  }
  pending_.clear();
}

void FaultInjectingDevice::arm_crash_after_writes(u64 n)
{
  std::lock_guard lock{mu_};
  crash_at_ = n == 0 ? 0 : writes_ + n;
}

bool FaultInjectingDevice::crashed() const
{
  std::lock_guard lock{mu_};
  return crashed_;
}

u64 FaultInjectingDevice::write_count() const
{
  std::lock_guard lock{mu_};
  return writes_;
}

size_t FaultInjectingDevice::pending_count() const
{
  std::lock_guard lock{mu_};
  return pending_.size();
}

std::vector<u8> FaultInjectingDevice::crash_image(size_t keep_pending, size_t torn_bytes) const
{
  std::lock_guard lock{mu_};
  std::vector<u8> image = durable_;
  const size_t keep = std::min(keep_pending, pending_.size());
  for (size_t i = 0; i < keep; ++i) {
    const Pending& p = pending_[i];
    std::memcpy(image.data() + p.offset, p.data.data(), p.data.size());
  }
  if (keep < pending_.size() && torn_bytes > 0) {
    const Pending& p = pending_[keep];
    std::memcpy(image.data() + p.offset, p.data.data(), std::min(torn_bytes, p.data.size()));
  }
  return image;
}

}  // namespace hkv
