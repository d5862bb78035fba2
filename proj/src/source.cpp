#include "sqb/source.hpp"

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <string>

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

namespace sqb {

void byte_source::read_exact(std::uint64_t offset, std::span<std::uint8_t> out,
                             errc on_short) const {
  std::size_t n = read_at(offset, out);
  if (n != out.size()) {
    fail(on_short, "wanted " + std::to_string(out.size()) + " bytes at " +
                       std::to_string(offset) + ", got " + std::to_string(n) +
                       " (source size " + std::to_string(size()) + ")");
  }
}

file_source::file_source(const std::filesystem::path& path) : path_(path) {
  fd_ = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
  if (fd_ < 0) {
    fail(errc::io_error, path.string() + ": " + std::strerror(errno));
  }
  struct stat st{};
  if (::fstat(fd_, &st) != 0) {
    int e = errno;
    ::close(fd_);
    fail(errc::io_error, path.string() + ": " + std::strerror(e));
  }
  if (S_ISDIR(st.st_mode)) {
    ::close(fd_);
    fail(errc::io_error, path.string() + ": is a directory");
  }
  size_ = static_cast<std::uint64_t>(st.st_size);
}

file_source::~file_source() {
  if (fd_ >= 0) {
    ::close(fd_);
  }
}

std::size_t file_source::read_at(std::uint64_t offset,
                                 std::span<std::uint8_t> out) const {
  std::size_t done = 0;
  while (done < out.size()) {
    ssize_t n = ::pread(fd_, out.data() + done, out.size() - done,
                        static_cast<off_t>(offset + done));
    if (n < 0) {
      if (errno == EINTR) {
        continue;
      }
      fail(errc::io_error, path_.string() + ": " + std::strerror(errno));
    }
    if (n == 0) {
      break;
    }
    done += static_cast<std::size_t>(n);
  }
  return done;
}

void file_source::drop_os_cache() const noexcept {
  ::posix_fadvise(fd_, 0, 0, POSIX_FADV_DONTNEED);
}

std::size_t memory_source::read_at(std::uint64_t offset,
                                   std::span<std::uint8_t> out) const {
  if (offset >= data_.size()) {
    return 0;
  }
  std::size_t n = std::min<std::uint64_t>(out.size(), data_.size() - offset);
  std::memcpy(out.data(), data_.data() + offset, n);
  return n;
}

} // namespace sqb
