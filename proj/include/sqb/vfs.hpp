#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sqb/bytes.hpp"
#include "sqb/cache.hpp"

namespace sqb {

enum class file_kind : std::uint8_t { directory, regular, symlink };

std::string_view kind_name(file_kind k) noexcept;

/// stat()-style attributes of one namespace entry.
struct attr {
  file_kind kind = file_kind::directory;
  std::uint64_t size = 0;
  std::uint16_t mode = 0; ///< permission bits only
  std::uint32_t uid = 0;
  std::uint32_t gid = 0;
  std::uint32_t mtime = 0;
  std::uint32_t inode_number = 0;
  std::uint32_t nlink = 0;

  friend bool operator==(const attr&, const attr&) = default;
};

/// Opaque node handle: `layer` selects a bundle inside an overlay (always 0
/// for a single bundle), `ref` is that bundle's raw inode reference.
struct node_id {
  std::uint32_t layer = 0;
  std::uint64_t ref = 0;

  friend bool operator==(const node_id&, const node_id&) = default;
};

struct dir_item {
  std::string name;
  file_kind kind = file_kind::regular;
  node_id node;
};

struct walk_entry {
  std::string path; ///< "/" for the root, "/a/b" below it
  attr attributes;
  node_id node;
};

enum class cache_action : std::uint8_t { clear, stats, resize };

/// Read-only namespace operations shared by single bundles and overlays.
/// All operations are const and may be called concurrently.
class filesystem {
 public:
  virtual ~filesystem() = default;

  virtual node_id root() const = 0;
  virtual node_id lookup(node_id dir, std::string_view name) const = 0;
  virtual attr getattr(node_id node) const = 0;
  virtual std::vector<dir_item> readdir(node_id dir) const = 0;
  virtual byte_buffer read(node_id file, std::uint64_t offset,
                           std::uint32_t length) const = 0;
  virtual std::string readlink(node_id link) const = 0;

  /// Number of entries a full walk yields.
  virtual std::uint64_t entry_count() const = 0;

  /// `budget` is only consulted for cache_action::resize.
  virtual cache_stats cache_control(cache_action action,
                                    std::uint64_t budget = 0) const = 0;

  /// Human-readable name of the bundle behind a layer index.
  virtual std::string layer_name(std::uint32_t layer) const = 0;

  /// Resolves an absolute or root-relative path without following symlinks.
  /// "." is skipped and ".." is clamped at the root.
  node_id resolve(std::string_view path) const;

  /// Like resolve, but NotFound instead of an exception.
  std::optional<node_id> try_resolve(std::string_view path) const;

  /// Resolves following symlinks in every component (the last one only
  /// with `follow_last`), at most 40 of them. Absolute targets restart at
  /// the root. nullopt when missing or when the link limit is hit.
  std::optional<node_id> resolve_follow(std::string_view path, bool follow_last = true) const;

  /// Depth-first, root first, children in readdir order.
  void walk(const std::function<void(const walk_entry&)>& visit) const;
};

/// Explicit-stack iterator over a filesystem in walk order.
class walker {
 public:
  explicit walker(const filesystem& fs);

  std::optional<walk_entry> next();

 private:
  struct frame {
    std::string path;
    std::vector<dir_item> items;
    std::size_t next = 0;
    node_id node;
  };

  const filesystem& fs_;
  bool root_done_ = false;
  std::vector<frame> stack_;
};

/// Joins a parent walk path and a child name.
std::string join_path(std::string_view parent, std::string_view name);

} // namespace sqb
