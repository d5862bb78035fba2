#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sqb/vfs.hpp"

namespace sqb {

struct pack_options {
  std::uint32_t block_size = 131072;
  std::uint16_t codec_id = 1;
  /// Overrides every timestamp (and the superblock time) for reproducible
  /// output.
  std::optional<std::uint32_t> force_mtime;
  bool follow_symlinks = false;
  unsigned parallel_workers = 1;
};

/// Throws GeometryError / UnsupportedCompressor / InvalidArgument.
void validate(const pack_options& opts);

struct source_node {
  std::string path;   ///< "/" for the root, "/a/b" below it
  std::string name;   ///< empty for the root
  file_kind kind = file_kind::regular;
  std::uint64_t size = 0;
  std::uint16_t mode = 0;
  std::uint32_t uid = 0;
  std::uint32_t gid = 0;
  std::uint32_t mtime = 0;
  std::string target; ///< symlinks only
  std::uint32_t depth = 0;
  std::uint32_t parent = 0;              ///< index; root points at itself
  std::vector<std::uint32_t> children;   ///< indices, byte-sorted by name
  std::uint32_t inode_number = 0;        ///< post-order, children first
};

/// Snapshot of a directory tree. `nodes` is a depth-first pre-order
/// traversal with byte-sorted siblings; nodes[0] is the root.
struct source_tree {
  std::filesystem::path root;
  std::vector<source_node> nodes;
  std::uint64_t files = 0;
  std::uint64_t directories = 0;
  std::uint64_t symlinks = 0;
  std::uint32_t max_depth = 0;
  std::uint64_t total_bytes = 0;

  std::uint64_t entries() const noexcept { return nodes.size(); }
};

/// Scans `root`. When `members` is set, only those direct children of the
/// root are included (the root itself always is).
source_tree scan_source(const std::filesystem::path& root,
                        const pack_options& opts,
                        const std::optional<std::vector<std::string>>& members =
                            std::nullopt);

struct pack_summary {
  std::uint64_t bytes_written = 0;  ///< image size including padding
  std::uint32_t inode_count = 0;
  std::uint64_t source_bytes = 0;
  /// source_bytes / bytes_written; above 1 means the image is smaller.
  double compression_ratio = 0;
  /// Files whose size or mtime changed between scan and pack; they were
  /// re-read and stored with their current contents.
  std::vector<std::string> drifted;
};

/// Writes the image atomically (temporary file + rename).
pack_summary pack(source_tree& tree, const pack_options& opts,
                  const std::filesystem::path& out);

struct verify_mismatch {
  std::string path;
  std::string reason;
};

struct verify_report {
  std::uint64_t entries_checked = 0;
  std::vector<verify_mismatch> mismatches;

  bool ok() const noexcept { return mismatches.empty(); }
};

/// Compares names, kinds, sizes, modes, symlink targets and content digests
/// of every entry; at most one mismatch is reported per path.
verify_report verify(const std::filesystem::path& image,
                     const std::filesystem::path& source);

verify_report verify(const filesystem& image, const std::filesystem::path& source);

} // namespace sqb
