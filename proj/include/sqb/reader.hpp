#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "sqb/cache.hpp"
#include "sqb/format.hpp"
#include "sqb/source.hpp"
#include "sqb/vfs.hpp"

namespace sqb {

struct reader_options {
  std::uint64_t cache_budget = block_cache::kDefaultBudget;
};

/// One opened bundle image. Superblock, ID table and fragment table are
/// loaded eagerly at open; inode and directory blocks go through an LRU
/// cache on demand.
class bundle_reader final : public filesystem {
 public:
  static std::shared_ptr<bundle_reader> open(const std::filesystem::path& path,
                                             reader_options opts = {});
  static std::shared_ptr<bundle_reader> open(
      std::shared_ptr<const byte_source> source, std::string name,
      reader_options opts = {});

  const format::superblock& superblock() const noexcept { return sb_; }
  const std::vector<std::uint32_t>& id_table() const noexcept { return ids_; }
  const std::vector<format::fragment_entry>& fragment_table() const noexcept {
    return fragments_;
  }
  std::vector<format::inode_ref> export_table() const;

  /// Wall time spent in open(), in seconds.
  double open_seconds() const noexcept { return open_seconds_; }
  const std::string& name() const noexcept { return name_; }
  const byte_source& source() const noexcept { return *source_; }

  format::inode_record inode(format::inode_ref ref) const;
  std::vector<format::dir_entry> listing(const format::inode_record& dir) const;

  node_id root() const override;
  node_id lookup(node_id dir, std::string_view name) const override;
  attr getattr(node_id node) const override;
  std::vector<dir_item> readdir(node_id dir) const override;
  byte_buffer read(node_id file, std::uint64_t offset,
                   std::uint32_t length) const override;
  std::string readlink(node_id link) const override;
  std::uint64_t entry_count() const override { return sb_.inode_count; }
  cache_stats cache_control(cache_action action,
                            std::uint64_t budget = 0) const override;
  std::string layer_name(std::uint32_t) const override { return name_; }

  attr to_attr(const format::inode_record& rec) const;

 private:
  bundle_reader(std::shared_ptr<const byte_source> source, std::string name,
                reader_options opts);

  format::metadata_fetch fetcher(cache_region region) const;
  std::shared_ptr<const format::metadata_block>
  data_block(std::uint64_t offset, std::uint32_t word, std::size_t expected,
             cache_region region) const;

  std::shared_ptr<const byte_source> source_;
  std::string name_;
  format::superblock sb_;
  std::vector<std::uint32_t> ids_;
  std::vector<format::fragment_entry> fragments_;
  mutable block_cache cache_;
  double open_seconds_ = 0;
};

} // namespace sqb
