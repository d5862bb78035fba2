#pragma once

#include <cstdint>
#include <filesystem>
#include <string_view>

#include "sqb/vfs.hpp"

namespace sqb {

struct extract_options {
  /// Replace existing files, symlinks and kind-mismatched directories.
  bool force = false;
  /// Restore uid/gid (only effective with privilege).
  bool preserve_owner = true;
};

/// Writes the entry at `inner` to `out`/<name of the entry>. For the root
/// the contents go straight into `out`, which is created if missing.
/// Modes, mtimes and symlinks are restored. Returns the number of entries
/// written. NotFound for a missing inner path; AlreadyExists (before
/// anything is written) for a collision without `force`.
std::uint64_t extract(const filesystem& fs, std::string_view inner,
                      const std::filesystem::path& out,
                      const extract_options& opts = {});

} // namespace sqb
