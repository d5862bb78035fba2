#pragma once

#include <cstdint>
#include <filesystem>
#include <span>

#include "sqb/bytes.hpp"

namespace sqb {

/// Random-access, read-only byte source. Implementations must allow
/// concurrent read_at calls.
class byte_source {
 public:
  virtual ~byte_source() = default;

  virtual std::uint64_t size() const = 0;

  /// Reads up to out.size() bytes at offset; returns the count actually read
  /// (short only at end of source).
  virtual std::size_t read_at(std::uint64_t offset,
                              std::span<std::uint8_t> out) const = 0;

  /// Reads exactly out.size() bytes or raises `on_short`.
  void read_exact(std::uint64_t offset, std::span<std::uint8_t> out,
                  errc on_short) const;
};

/// pread(2)-backed file source; every access is an lseek()+read() pair at
/// the kernel level.
class file_source final : public byte_source {
 public:
  explicit file_source(const std::filesystem::path& path);
  ~file_source() override;

  file_source(const file_source&) = delete;
  file_source& operator=(const file_source&) = delete;

  std::uint64_t size() const override { return size_; }
  std::size_t read_at(std::uint64_t offset,
                      std::span<std::uint8_t> out) const override;

  /// Advises the kernel to drop cached pages of this file (best effort,
  /// unprivileged).
  void drop_os_cache() const noexcept;

  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
  int fd_ = -1;
  std::uint64_t size_ = 0;
};

class memory_source final : public byte_source {
 public:
  explicit memory_source(byte_buffer data) : data_(std::move(data)) {}

  std::uint64_t size() const override { return data_.size(); }
  std::size_t read_at(std::uint64_t offset,
                      std::span<std::uint8_t> out) const override;

 private:
  byte_buffer data_;
};

} // namespace sqb
