#include "sqb/reader.hpp"

#include <algorithm>
#include <chrono>

#include "sqb/codec.hpp"

namespace sqb {

using format::inode_kind;
using format::inode_record;
using format::inode_ref;

namespace {

file_kind entry_kind(std::uint16_t type, std::string_view name) {
  switch (type) {
    case 1: return file_kind::directory;
    case 2: return file_kind::regular;
    case 3: return file_kind::symlink;
    default:
      fail(errc::unsupported_inode_kind,
           std::string(format::inode_kind_name(type)) + " entry \"" +
               std::string(name) + "\"");
  }
}

} // namespace

std::shared_ptr<bundle_reader> bundle_reader::open(
    const std::filesystem::path& path, reader_options opts) {
  auto src = std::make_shared<file_source>(path);
  try {
    return open(std::move(src), path.filename().string(), opts);
  } catch (const error& e) {
    fail(e.code(), path.string() + ": " + e.what());
  }
}

std::shared_ptr<bundle_reader> bundle_reader::open(
    std::shared_ptr<const byte_source> source, std::string name,
    reader_options opts) {
  return std::shared_ptr<bundle_reader>(
      new bundle_reader(std::move(source), std::move(name), opts));
}

bundle_reader::bundle_reader(std::shared_ptr<const byte_source> source,
                             std::string name, reader_options opts)
    : source_(std::move(source)), name_(std::move(name)),
      cache_(opts.cache_budget) {
  auto started = std::chrono::steady_clock::now();

  byte_buffer head(static_cast<std::size_t>(
      std::min<std::uint64_t>(source_->size(), format::kSuperblockSize)));
  source_->read_exact(0, head, errc::truncated_block);
  sb_ = format::parse_superblock(head);
  if (sb_.bytes_used > source_->size()) {
    fail(errc::truncated_table, "image claims " +
                                    std::to_string(sb_.bytes_used) +
                                    " bytes but only " +
                                    std::to_string(source_->size()) +
                                    " are present");
  }
  if (sb_.inode_count == 0) {
    fail(errc::corrupt_image, "inode count is zero");
  }
  ids_ = format::read_id_table(*source_, sb_);
  fragments_ = format::read_fragment_table(*source_, sb_);

  inode_record r = inode(sb_.root_inode);
  if (!r.is_dir()) {
    fail(errc::corrupt_image, "root inode is not a directory");
  }

  open_seconds_ = std::chrono::duration<double>(
                      std::chrono::steady_clock::now() - started)
                      .count();
}

std::vector<inode_ref> bundle_reader::export_table() const {
  return format::read_export_table(*source_, sb_);
}

format::metadata_fetch bundle_reader::fetcher(cache_region region) const {
  return [this, region](std::uint64_t offset) {
    return cache_.get_or_load(region, offset, [&] {
      return format::read_metadata_block(*source_, offset, sb_.compressor_id);
    });
  };
}

inode_record bundle_reader::inode(inode_ref ref) const {
  format::metadata_cursor cur(fetcher(cache_region::inode),
                              sb_.inode_table_start, sb_.directory_table_start,
                              ref, errc::truncated_inode);
  inode_record rec = format::decode_inode(cur, sb_.block_size);
  if (rec.inode_number > sb_.inode_count) {
    fail(errc::corrupt_image, "inode number " +
                                  std::to_string(rec.inode_number) +
                                  " exceeds inode count " +
                                  std::to_string(sb_.inode_count));
  }
  return rec;
}

std::vector<format::dir_entry>
bundle_reader::listing(const inode_record& dir) const {
  const auto& d = dir.dir();
  if (d.listing_size <= 3) {
    return {};
  }
  format::metadata_cursor cur(fetcher(cache_region::directory),
                              sb_.directory_table_start, sb_.bytes_used,
                              {d.dir_block_start, d.dir_block_offset},
                              errc::corrupt_image);
  return format::decode_dir_listing(cur, d.listing_size);
}

node_id bundle_reader::root() const { return {0, sb_.root_inode.raw()}; }

node_id bundle_reader::lookup(node_id dir, std::string_view name) const {
  inode_record rec = inode(inode_ref::from_raw(dir.ref));
  if (!rec.is_dir()) {
    fail(errc::not_a_directory, "lookup of \"" + std::string(name) + "\"");
  }
  if (name.empty() || name.size() > format::kMaxNameLength) {
    fail(errc::not_found, "\"" + std::string(name) + "\"");
  }
  for (auto& e : listing(rec)) {
    if (e.name == name) {
      return {0, e.ref.raw()};
    }
  }
  fail(errc::not_found, "\"" + std::string(name) + "\"");
}

attr bundle_reader::to_attr(const inode_record& rec) const {
  if (rec.uid_index >= ids_.size() || rec.gid_index >= ids_.size()) {
    fail(errc::corrupt_image, "inode " + std::to_string(rec.inode_number) +
                                  " has an id index outside the id table");
  }
  attr a;
  a.mode = rec.mode & 07777;
  a.uid = ids_[rec.uid_index];
  a.gid = ids_[rec.gid_index];
  a.mtime = rec.mtime;
  a.inode_number = rec.inode_number;
  switch (rec.kind) {
    case inode_kind::basic_dir:
    case inode_kind::ext_dir:
      a.kind = file_kind::directory;
      a.size = rec.dir().listing_size;
      a.nlink = rec.dir().link_count;
      break;
    case inode_kind::basic_file:
      a.kind = file_kind::regular;
      a.size = rec.file().file_size;
      a.nlink = 1;
      break;
    case inode_kind::ext_file:
      a.kind = file_kind::regular;
      a.size = rec.file().file_size;
      a.nlink = rec.file().link_count;
      break;
    case inode_kind::symlink:
      a.kind = file_kind::symlink;
      a.size = rec.link().target.size();
      a.nlink = rec.link().link_count;
      break;
  }
  return a;
}

attr bundle_reader::getattr(node_id node) const {
  return to_attr(inode(inode_ref::from_raw(node.ref)));
}

std::vector<dir_item> bundle_reader::readdir(node_id dir) const {
  inode_record rec = inode(inode_ref::from_raw(dir.ref));
  if (!rec.is_dir()) {
    fail(errc::not_a_directory, "inode " + std::to_string(rec.inode_number));
  }
  std::vector<dir_item> out;
  auto entries = listing(rec);
  out.reserve(entries.size());
  for (auto& e : entries) {
    file_kind k = entry_kind(e.type, e.name);
    out.push_back(dir_item{std::move(e.name), k, node_id{0, e.ref.raw()}});
  }
  return out;
}

std::shared_ptr<const format::metadata_block>
bundle_reader::data_block(std::uint64_t offset, std::uint32_t word,
                          std::size_t expected, cache_region region) const {
  std::uint32_t stored = word & format::kDataSizeMask;
  bool raw = (word & format::kDataUncompressed) != 0;
  return cache_.get_or_load(region, offset, [&] {
    format::metadata_block b;
    byte_buffer data(stored);
    source_->read_exact(offset, data, errc::truncated_block);
    b.consumed = stored;
    if (raw) {
      b.payload = std::move(data);
    } else {
      b.payload = codec_decompress(sb_.compressor_id, data, sb_.block_size);
    }
    if (expected != 0 && b.payload.size() != expected) {
      fail(errc::decompress_error, "data block at " + std::to_string(offset) +
                                       " holds " +
                                       std::to_string(b.payload.size()) +
                                       " bytes, expected " +
                                       std::to_string(expected));
    }
    return b;
  });
}

byte_buffer bundle_reader::read(node_id file, std::uint64_t offset,
                                std::uint32_t length) const {
  inode_record rec = inode(inode_ref::from_raw(file.ref));
  if (!rec.is_file()) {
    fail(errc::not_a_file, "inode " + std::to_string(rec.inode_number));
  }
  const auto& f = rec.file();
  if (offset >= f.file_size || length == 0) {
    return {};
  }
  std::uint64_t end = std::min<std::uint64_t>(f.file_size, offset + length);
  byte_buffer out;
  out.reserve(static_cast<std::size_t>(end - offset));

  const std::uint64_t bs = sb_.block_size;
  std::uint64_t pos = f.data_start;
  for (std::size_t i = 0; i < f.block_sizes.size() && offset < end; ++i) {
    std::uint64_t block_begin = i * bs;
    std::uint64_t block_len = std::min<std::uint64_t>(bs, f.file_size - block_begin);
    std::uint32_t word = f.block_sizes[i];
    std::uint64_t stored = word & format::kDataSizeMask;
    if (offset < block_begin + block_len) {
      std::uint64_t lo = offset - block_begin;
      std::uint64_t hi = std::min(end - block_begin, block_len);
      if (stored == 0) {
        out.insert(out.end(), static_cast<std::size_t>(hi - lo), 0);
      } else {
        auto block = data_block(pos, word, static_cast<std::size_t>(block_len),
                                cache_region::data);
        out.insert(out.end(), block->payload.begin() + static_cast<long>(lo),
                   block->payload.begin() + static_cast<long>(hi));
      }
      offset = block_begin + hi;
    }
    pos += stored;
  }

  if (offset < end) {
    if (!f.has_fragment() || f.fragment_index >= fragments_.size()) {
      fail(errc::corrupt_image, "file tail has no valid fragment");
    }
    const auto& frag = fragments_[f.fragment_index];
    std::uint64_t tail_begin = f.block_sizes.size() * bs;
    auto block = data_block(frag.start, frag.size, 0, cache_region::fragment);
    std::uint64_t lo = f.fragment_offset + (offset - tail_begin);
    std::uint64_t hi = f.fragment_offset + (end - tail_begin);
    if (hi > block->payload.size()) {
      fail(errc::corrupt_image, "fragment tail outside its block");
    }
    out.insert(out.end(), block->payload.begin() + static_cast<long>(lo),
               block->payload.begin() + static_cast<long>(hi));
  }
  return out;
}

std::string bundle_reader::readlink(node_id link) const {
  inode_record rec = inode(inode_ref::from_raw(link.ref));
  if (rec.kind != inode_kind::symlink) {
    fail(errc::not_a_symlink, "inode " + std::to_string(rec.inode_number));
  }
  return rec.link().target;
}

cache_stats bundle_reader::cache_control(cache_action action,
                                         std::uint64_t budget) const {
  switch (action) {
    case cache_action::clear:
      cache_.clear();
      break;
    case cache_action::resize:
      cache_.resize(budget);
      break;
    case cache_action::stats:
      break;
  }
  return cache_.stats();
}

} // namespace sqb
