#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "sqb/packer.hpp"
#include "sqb/reader.hpp"

namespace sqb {

struct shard_entry {
  std::string file;                 ///< bundle file name, relative to the manifest
  std::vector<std::string> members; ///< top-level names, byte-sorted
  std::uint64_t entries = 0;        ///< bundle inodes minus the bundle root
  std::uint64_t bytes = 0;
  std::string sha256;               ///< empty until built

  friend bool operator==(const shard_entry&, const shard_entry&) = default;
};

struct shard_manifest {
  static constexpr int kVersion = 1;

  std::string dataset;
  std::uint32_t group_size = 20;
  std::uint32_t created = 0; ///< source root mtime
  std::string assignment = "sorted-greedy";
  std::vector<shard_entry> shards;

  std::uint64_t member_count() const noexcept;
  std::uint64_t entry_count() const noexcept; ///< sum of shard entries + 1

  /// Pretty-printed, stable field order.
  std::string to_json() const;
  /// BadManifest on any schema violation.
  static shard_manifest from_json(std::string_view text);

  static shard_manifest load(const std::filesystem::path& file);
  /// Atomic (temporary file + rename).
  void save(const std::filesystem::path& file) const;

  friend bool operator==(const shard_manifest&, const shard_manifest&) = default;
};

inline constexpr const char* kManifestName = "manifest.json";

std::string shard_file_name(std::size_t index);

/// Groups the direct children of `root` into shards of at most
/// `group_size`, in byte-sorted order.
shard_manifest shard_plan(const std::filesystem::path& root,
                          std::uint32_t group_size, std::string dataset = {});

struct shard_pack_report {
  shard_manifest manifest;
  std::vector<std::size_t> built;
  std::vector<std::size_t> skipped;
};

/// Builds one bundle per shard into `out_dir` and writes
/// out_dir/manifest.json. Shards whose bundle already exists with the
/// digest recorded in an existing out_dir/manifest.json are skipped.
shard_pack_report pack_shards(shard_manifest manifest,
                              const std::filesystem::path& src,
                              const std::filesystem::path& out_dir,
                              const pack_options& opts,
                              const std::function<void(std::size_t, bool)>&
                                  on_shard = {});

struct overlay_conflict {
  std::string path;
  std::string winner;
  std::string loser;
};

struct overlay_options {
  bool verify_digests = false;
  /// Total budget, split evenly across the bundles.
  std::uint64_t cache_budget = block_cache::kDefaultBudget;
  /// Called once per conflict; defaults to a line on stderr.
  std::function<void(const overlay_conflict&)> on_conflict;
};

/// Union of bundles: roots are merged, and for a duplicate top-level name
/// the earliest bundle wins.
class overlay_reader final : public filesystem {
 public:
  static constexpr std::uint32_t kMergedLayer = 0xffffffffu;

  static std::shared_ptr<overlay_reader> open(
      std::vector<std::shared_ptr<bundle_reader>> bundles,
      const overlay_options& opts = {});
  static std::shared_ptr<overlay_reader> open_bundles(
      const std::vector<std::filesystem::path>& bundles,
      const overlay_options& opts = {});
  /// Bundle paths are resolved relative to the manifest's directory.
  static std::shared_ptr<overlay_reader> open_manifest(
      const std::filesystem::path& manifest_file,
      const overlay_options& opts = {});
  static std::shared_ptr<overlay_reader> open_manifest(
      const shard_manifest& manifest, const std::filesystem::path& dir,
      const overlay_options& opts = {});

  std::size_t layer_count() const noexcept { return layers_.size(); }
  const bundle_reader& layer(std::size_t i) const { return *layers_.at(i); }
  const std::vector<overlay_conflict>& conflicts() const noexcept {
    return conflicts_;
  }
  double open_seconds() const noexcept { return open_seconds_; }

  node_id root() const override;
  node_id lookup(node_id dir, std::string_view name) const override;
  attr getattr(node_id node) const override;
  std::vector<dir_item> readdir(node_id dir) const override;
  byte_buffer read(node_id file, std::uint64_t offset,
                   std::uint32_t length) const override;
  std::string readlink(node_id link) const override;
  std::uint64_t entry_count() const override { return entry_count_; }
  cache_stats cache_control(cache_action action,
                            std::uint64_t budget = 0) const override;
  std::string layer_name(std::uint32_t layer) const override;

 private:
  explicit overlay_reader(std::vector<std::shared_ptr<bundle_reader>> layers);
  void merge_roots(const overlay_options& opts);
  const bundle_reader& owner(node_id n) const;
  static node_id local(node_id n) { return {0, n.ref}; }

  std::vector<std::shared_ptr<bundle_reader>> layers_;
  std::vector<dir_item> root_items_;               ///< byte-sorted
  std::map<std::string, std::size_t, std::less<>> root_index_;
  std::vector<overlay_conflict> conflicts_;
  attr root_attr_;
  std::uint64_t entry_count_ = 0;
  double open_seconds_ = 0;
};

} // namespace sqb
