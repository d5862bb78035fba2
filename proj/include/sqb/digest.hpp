#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "sqb/bytes.hpp"

namespace sqb {

/// Incremental SHA-256.
class sha256 {
 public:
  sha256();
  ~sha256();
  sha256(sha256&&) noexcept;
  sha256& operator=(sha256&&) noexcept;

  void update(byte_view data);
  void update(std::string_view data) { update(as_bytes(data)); }

  /// Lowercase hex digest; the object must not be updated afterwards.
  std::string hex_digest();

 private:
  struct impl;
  std::unique_ptr<impl> impl_;
};

std::string sha256_hex(byte_view data);
std::string sha256_file(const std::filesystem::path& path);

} // namespace sqb
