#include "sqb/format.hpp"

#include <algorithm>
#include <bit>
#include <limits>
#include <string>

#include "sqb/codec.hpp"

namespace sqb::format {

namespace {

std::string hex32(std::uint32_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s = "0x";
  for (int shift = 28; shift >= 0; shift -= 4) {
    s += digits[(v >> shift) & 0xf];
  }
  return s;
}

} // namespace

// ---------------------------------------------------------------------------
// Superblock

std::uint16_t block_log_for(std::uint32_t block_size) {
  if (block_size < 4096 || block_size > 1048576 ||
      !std::has_single_bit(block_size)) {
    fail(errc::geometry_error, "block size " + std::to_string(block_size) +
                                   " is not a power of two in [4096, 1048576]");
  }
  return static_cast<std::uint16_t>(std::countr_zero(block_size));
}

void validate(const superblock& sb) {
  if (sb.magic != kMagic) {
    fail(errc::bad_magic, "magic " + hex32(sb.magic) + ", expected " +
                              hex32(kMagic));
  }
  if (sb.version_major != 4 || sb.version_minor != 0) {
    fail(errc::unsupported_version,
         "version " + std::to_string(sb.version_major) + "." +
             std::to_string(sb.version_minor) + ", only 4.0 is supported");
  }
  if (block_log_for(sb.block_size) != sb.block_log) {
    fail(errc::geometry_error,
         "block_log " + std::to_string(sb.block_log) +
             " does not match block size " + std::to_string(sb.block_size));
  }
  require_supported_compressor(sb.compressor_id);
  if (sb.root_inode.offset >= kMetadataBlockSize) {
    fail(errc::geometry_error, "root inode offset out of range");
  }
  if (!(sb.inode_table_start < sb.directory_table_start &&
        sb.directory_table_start <= sb.bytes_used)) {
    fail(errc::geometry_error,
         "table order violated (inode " + std::to_string(sb.inode_table_start) +
             ", directory " + std::to_string(sb.directory_table_start) +
             ", bytes_used " + std::to_string(sb.bytes_used) + ")");
  }
}

superblock parse_superblock(byte_view bytes) {
  if (bytes.size() < 4) {
    fail(errc::bad_magic, "image shorter than the magic number");
  }
  le_reader in(bytes, errc::truncated_block);
  superblock sb;
  sb.magic = in.u32();
  if (sb.magic != kMagic) {
    fail(errc::bad_magic, "magic " + hex32(sb.magic) + ", expected " +
                              hex32(kMagic));
  }
  if (bytes.size() != kSuperblockSize) {
    fail(errc::truncated_block, "superblock must be 96 bytes, got " +
                                    std::to_string(bytes.size()));
  }
  sb.inode_count = in.u32();
  sb.mod_time = in.u32();
  sb.block_size = in.u32();
  sb.fragment_count = in.u32();
  sb.compressor_id = in.u16();
  sb.block_log = in.u16();
  sb.flags = in.u16();
  sb.id_count = in.u16();
  sb.version_major = in.u16();
  sb.version_minor = in.u16();
  sb.root_inode = inode_ref::from_raw(in.u64());
  sb.bytes_used = in.u64();
  sb.id_table_start = in.u64();
  sb.xattr_table_start = in.u64();
  sb.inode_table_start = in.u64();
  sb.directory_table_start = in.u64();
  sb.fragment_table_start = in.u64();
  sb.export_table_start = in.u64();
  validate(sb);
  return sb;
}

byte_buffer write_superblock(const superblock& sb) {
  validate(sb);
  byte_buffer out;
  out.reserve(kSuperblockSize);
  le_writer w(out);
  w.u32(sb.magic);
  w.u32(sb.inode_count);
  w.u32(sb.mod_time);
  w.u32(sb.block_size);
  w.u32(sb.fragment_count);
  w.u16(sb.compressor_id);
  w.u16(sb.block_log);
  w.u16(sb.flags);
  w.u16(sb.id_count);
  w.u16(sb.version_major);
  w.u16(sb.version_minor);
  w.u64(sb.root_inode.raw());
  w.u64(sb.bytes_used);
  w.u64(sb.id_table_start);
  w.u64(sb.xattr_table_start);
  w.u64(sb.inode_table_start);
  w.u64(sb.directory_table_start);
  w.u64(sb.fragment_table_start);
  w.u64(sb.export_table_start);
  return out;
}

// ---------------------------------------------------------------------------
// Metadata blocks

metadata_block read_metadata_block(const byte_source& source,
                                   std::uint64_t offset,
                                   std::uint16_t codec_id) {
  std::uint8_t hdr[2];
  source.read_exact(offset, hdr, errc::truncated_block);
  std::uint16_t header = static_cast<std::uint16_t>(hdr[0] | (hdr[1] << 8));
  bool raw = (header & kMetadataUncompressed) != 0;
  std::size_t stored = header & 0x7fff;
  if (raw && stored > kMetadataBlockSize) {
    fail(errc::oversize_block, "metadata block at " + std::to_string(offset) +
                                   " stores " + std::to_string(stored) +
                                   " bytes");
  }
  byte_buffer data(stored);
  source.read_exact(offset + 2, data, errc::truncated_block);

  metadata_block block;
  block.consumed = 2 + stored;
  if (raw) {
    block.payload = std::move(data);
  } else {
    block.payload = codec_decompress(codec_id, data, kMetadataBlockSize);
  }
  return block;
}

byte_buffer encode_metadata_block(byte_view payload, std::uint16_t codec_id) {
  byte_buffer out;
  byte_buffer packed = codec_compress(codec_id, payload);
  le_writer w(out);
  if (packed.size() < payload.size()) {
    w.u16(static_cast<std::uint16_t>(packed.size()));
    w.bytes(packed);
  } else {
    w.u16(static_cast<std::uint16_t>(kMetadataUncompressed | payload.size()));
    w.bytes(payload);
  }
  return out;
}

inode_ref metadata_writer::append(byte_view record) {
  inode_ref ref = next_ref();
  pending_.insert(pending_.end(), record.begin(), record.end());
  while (pending_.size() >= kMetadataBlockSize) {
    flush_block(kMetadataBlockSize);
  }
  return ref;
}

void metadata_writer::flush_block(std::size_t n) {
  byte_buffer block =
      encode_metadata_block(byte_view(pending_).first(n), codec_);
  blob_.insert(blob_.end(), block.begin(), block.end());
  pending_.erase(pending_.begin(), pending_.begin() + static_cast<long>(n));
  ++blocks_;
}

byte_buffer metadata_writer::finish() {
  if (!pending_.empty()) {
    flush_block(pending_.size());
  }
  return std::move(blob_);
}

metadata_stream write_metadata_stream(std::span<const byte_buffer> records,
                                      std::uint16_t codec_id) {
  metadata_writer writer(codec_id);
  metadata_stream out;
  out.refs.reserve(records.size());
  for (const auto& r : records) {
    out.refs.push_back(writer.append(r));
  }
  out.blob = writer.finish();
  return out;
}

metadata_cursor::metadata_cursor(metadata_fetch fetch,
                                 std::uint64_t table_start,
                                 std::uint64_t table_end, inode_ref at,
                                 errc on_short)
    : fetch_(std::move(fetch))
    , table_start_(table_start)
    , table_end_(table_end)
    , block_pos_(table_start + at.block_start)
    , offset_(at.offset)
    , on_short_(on_short) {
  if (at.block_start >= table_end_ - table_start_ || table_end_ <= table_start_) {
    fail(on_short_, "metadata reference " + std::to_string(at.block_start) +
                        " outside table of " +
                        std::to_string(table_end_ - table_start_) + " bytes");
  }
  block_ = fetch_(block_pos_);
  if (offset_ > block_->payload.size()) {
    fail(on_short_, "metadata offset " + std::to_string(offset_) +
                        " beyond block of " +
                        std::to_string(block_->payload.size()) + " bytes");
  }
}

void metadata_cursor::advance() {
  block_pos_ += block_->consumed;
  if (block_pos_ >= table_end_) {
    fail(on_short_, "record runs past the end of its metadata table");
  }
  block_ = fetch_(block_pos_);
  offset_ = 0;
  if (block_->payload.empty()) {
    fail(errc::corrupt_image, "empty metadata block at " +
                                  std::to_string(block_pos_));
  }
}

void metadata_cursor::read(std::span<std::uint8_t> out) {
  std::size_t done = 0;
  while (done < out.size()) {
    if (offset_ == block_->payload.size()) {
      advance();
    }
    std::size_t n =
        std::min(out.size() - done, block_->payload.size() - offset_);
    std::copy_n(block_->payload.begin() + static_cast<long>(offset_), n,
                out.begin() + static_cast<long>(done));
    offset_ += n;
    done += n;
  }
}

std::uint8_t metadata_cursor::u8() {
  std::uint8_t b;
  read({&b, 1});
  return b;
}

std::uint16_t metadata_cursor::u16() {
  std::uint8_t b[2];
  read(b);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t metadata_cursor::u32() {
  std::uint8_t b[4];
  read(b);
  return std::uint32_t{b[0]} | (std::uint32_t{b[1]} << 8) |
         (std::uint32_t{b[2]} << 16) | (std::uint32_t{b[3]} << 24);
}

std::uint64_t metadata_cursor::u64() {
  std::uint64_t lo = u32();
  std::uint64_t hi = u32();
  return lo | (hi << 32);
}

std::string metadata_cursor::str(std::size_t n) {
  std::string s(n, '\0');
  read({reinterpret_cast<std::uint8_t*>(s.data()), n});
  return s;
}

void metadata_cursor::skip(std::size_t n) {
  while (n > 0) {
    if (offset_ == block_->payload.size()) {
      advance();
    }
    std::size_t step = std::min(n, block_->payload.size() - offset_);
    offset_ += step;
    n -= step;
  }
}

// ---------------------------------------------------------------------------
// Inodes

std::string_view inode_kind_name(std::uint16_t tag) noexcept {
  switch (tag) {
    case 1: return "dir";
    case 2: return "file";
    case 3: return "symlink";
    case 4: return "blockdev";
    case 5: return "chardev";
    case 6: return "fifo";
    case 7: return "socket";
    case 8: return "ext_dir";
    case 9: return "ext_file";
    case 10: return "ext_symlink";
    case 11: return "ext_blockdev";
    case 12: return "ext_chardev";
    case 13: return "ext_fifo";
    case 14: return "ext_socket";
    default: return "unknown";
  }
}

std::uint64_t data_block_count(std::uint64_t file_size, std::uint32_t block_size,
                               bool has_fragment) noexcept {
  return has_fragment ? file_size / block_size
                      : (file_size + block_size - 1) / block_size;
}

byte_buffer encode_inode(const inode_record& rec) {
  byte_buffer out;
  le_writer w(out);
  w.u16(static_cast<std::uint16_t>(rec.kind));
  w.u16(rec.mode);
  w.u16(rec.uid_index);
  w.u16(rec.gid_index);
  w.u32(rec.mtime);
  w.u32(rec.inode_number);

  auto payload_mismatch = [&] {
    fail(errc::invalid_argument,
         std::string("payload does not match inode kind ") +
             std::string(inode_kind_name(static_cast<std::uint16_t>(rec.kind))));
  };

  switch (rec.kind) {
    case inode_kind::basic_dir: {
      if (!std::holds_alternative<dir_payload>(rec.payload)) payload_mismatch();
      const auto& d = rec.dir();
      if (d.listing_size > 0xffff) {
        fail(errc::invalid_argument, "basic directory listing too large");
      }
      w.u32(d.dir_block_start);
      w.u32(d.link_count);
      w.u16(static_cast<std::uint16_t>(d.listing_size));
      w.u16(d.dir_block_offset);
      w.u32(d.parent_inode);
      break;
    }
    case inode_kind::ext_dir: {
      if (!std::holds_alternative<dir_payload>(rec.payload)) payload_mismatch();
      const auto& d = rec.dir();
      w.u32(d.link_count);
      w.u32(d.listing_size);
      w.u32(d.dir_block_start);
      w.u32(d.parent_inode);
      w.u16(0); // index records are never written
      w.u16(d.dir_block_offset);
      w.u32(kNoXattr);
      break;
    }
    case inode_kind::basic_file: {
      if (!std::holds_alternative<file_payload>(rec.payload)) payload_mismatch();
      const auto& f = rec.file();
      if (f.data_start > 0xffffffffu || f.file_size > 0xffffffffu) {
        fail(errc::invalid_argument, "basic file exceeds 32-bit limits");
      }
      w.u32(static_cast<std::uint32_t>(f.data_start));
      w.u32(f.fragment_index);
      w.u32(f.fragment_offset);
      w.u32(static_cast<std::uint32_t>(f.file_size));
      for (auto s : f.block_sizes) w.u32(s);
      break;
    }
    case inode_kind::ext_file: {
      if (!std::holds_alternative<file_payload>(rec.payload)) payload_mismatch();
      const auto& f = rec.file();
      w.u64(f.data_start);
      w.u64(f.file_size);
      w.u64(f.sparse);
      w.u32(f.link_count);
      w.u32(f.fragment_index);
      w.u32(f.fragment_offset);
      w.u32(kNoXattr);
      for (auto s : f.block_sizes) w.u32(s);
      break;
    }
    case inode_kind::symlink: {
      if (!std::holds_alternative<symlink_payload>(rec.payload)) payload_mismatch();
      const auto& l = rec.link();
      w.u32(l.link_count);
      w.u32(static_cast<std::uint32_t>(l.target.size()));
      w.bytes(l.target);
      break;
    }
    default:
      fail(errc::unsupported_inode_kind,
           std::string(inode_kind_name(static_cast<std::uint16_t>(rec.kind))));
  }
  return out;
}

namespace {

void check_block_words(const file_payload& f, std::uint32_t block_size) {
  for (auto word : f.block_sizes) {
    if ((word & kDataSizeMask & ~kDataUncompressed) > block_size) {
      fail(errc::corrupt_image, "data block size word " + hex32(word) +
                                    " exceeds block size");
    }
  }
}

template <class Cursor>
void read_block_words(Cursor& in, file_payload& f, std::uint32_t block_size) {
  std::uint64_t n = data_block_count(f.file_size, block_size, f.has_fragment());
  f.block_sizes.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(n, 1u << 16)));
  for (std::uint64_t i = 0; i < n; ++i) {
    f.block_sizes.push_back(in.u32());
  }
  check_block_words(f, block_size);
}

} // namespace

template <record_cursor Cursor>
inode_record decode_inode(Cursor& in, std::uint32_t block_size) {
  inode_record rec;
  std::uint16_t tag = in.u16();
  switch (tag) {
    case 1: case 2: case 3: case 8: case 9:
      break;
    default:
      fail(errc::unsupported_inode_kind, std::string(inode_kind_name(tag)) +
                                             " (type " + std::to_string(tag) +
                                             ")");
  }
  rec.kind = static_cast<inode_kind>(tag);
  rec.mode = in.u16();
  rec.uid_index = in.u16();
  rec.gid_index = in.u16();
  rec.mtime = in.u32();
  rec.inode_number = in.u32();
  if (rec.inode_number == 0) {
    fail(errc::corrupt_image, "inode number 0");
  }

  switch (rec.kind) {
    case inode_kind::basic_dir: {
      dir_payload d;
      d.dir_block_start = in.u32();
      d.link_count = in.u32();
      d.listing_size = in.u16();
      d.dir_block_offset = in.u16();
      d.parent_inode = in.u32();
      rec.payload = d;
      break;
    }
    case inode_kind::ext_dir: {
      dir_payload d;
      d.link_count = in.u32();
      d.listing_size = in.u32();
      d.dir_block_start = in.u32();
      d.parent_inode = in.u32();
      std::uint16_t index_count = in.u16();
      d.dir_block_offset = in.u16();
      std::uint32_t xattr = in.u32();
      if (xattr != kNoXattr) {
        fail(errc::unsupported_xattr, "directory inode " +
                                          std::to_string(rec.inode_number) +
                                          " carries xattrs");
      }
      for (std::uint16_t i = 0; i < index_count; ++i) {
        in.u32(); // index
        in.u32(); // start
        std::uint32_t name_size = in.u32();
        in.skip(std::size_t{name_size} + 1);
      }
      rec.payload = d;
      break;
    }
    case inode_kind::basic_file: {
      file_payload f;
      f.data_start = in.u32();
      f.fragment_index = in.u32();
      f.fragment_offset = in.u32();
      f.file_size = in.u32();
      read_block_words(in, f, block_size);
      rec.payload = std::move(f);
      break;
    }
    case inode_kind::ext_file: {
      file_payload f;
      f.data_start = in.u64();
      f.file_size = in.u64();
      f.sparse = in.u64();
      f.link_count = in.u32();
      f.fragment_index = in.u32();
      f.fragment_offset = in.u32();
      std::uint32_t xattr = in.u32();
      if (xattr != kNoXattr) {
        fail(errc::unsupported_xattr, "file inode " +
                                          std::to_string(rec.inode_number) +
                                          " carries xattrs");
      }
      read_block_words(in, f, block_size);
      rec.payload = std::move(f);
      break;
    }
    case inode_kind::symlink: {
      symlink_payload l;
      l.link_count = in.u32();
      std::uint32_t size = in.u32();
      if (size > 65535) {
        fail(errc::corrupt_image, "symlink target of " +
                                      std::to_string(size) + " bytes");
      }
      l.target = in.str(size);
      rec.payload = std::move(l);
      break;
    }
  }
  if (rec.is_dir() && rec.dir().listing_size < 3) {
    fail(errc::corrupt_image, "directory listing size below 3");
  }
  return rec;
}

template inode_record decode_inode<le_reader>(le_reader&, std::uint32_t);
template inode_record decode_inode<metadata_cursor>(metadata_cursor&,
                                                    std::uint32_t);

inode_record decode_inode(byte_view bytes, std::uint32_t block_size) {
  le_reader in(bytes, errc::truncated_inode);
  return decode_inode(in, block_size);
}

// ---------------------------------------------------------------------------
// Directory listings

void validate_entry_name(std::string_view name) {
  if (name.empty()) {
    fail(errc::bad_name, "empty entry name");
  }
  if (name.size() > kMaxNameLength) {
    fail(errc::name_too_long, std::to_string(name.size()) + " bytes");
  }
  if (name == "." || name == ".." ||
      name.find_first_of(std::string_view("/\0", 2)) != std::string_view::npos) {
    fail(errc::bad_name, "invalid entry name");
  }
}

encoded_listing encode_dir_listing(std::span<const dir_entry> entries) {
  encoded_listing out;
  le_writer w(out.bytes);

  for (std::size_t i = 0; i < entries.size(); ++i) {
    validate_entry_name(entries[i].name);
    if (i > 0 && !(entries[i - 1].name < entries[i].name)) {
      fail(errc::unsorted_entries, "\"" + entries[i - 1].name +
                                       "\" is not before \"" + entries[i].name +
                                       "\"");
    }
  }

  std::size_t i = 0;
  while (i < entries.size()) {
    const dir_entry& first = entries[i];
    if (first.ref.block_start > 0xffffffffu) {
      fail(errc::invalid_argument, "inode block start beyond 32 bits");
    }
    std::int64_t base = first.inode_number;
    std::size_t end = i + 1;
    while (end < entries.size() && end - i < kMaxEntriesPerHeader) {
      const dir_entry& e = entries[end];
      std::int64_t delta = std::int64_t{e.inode_number} - base;
      if (e.ref.block_start != first.ref.block_start ||
          delta < std::numeric_limits<std::int16_t>::min() ||
          delta > std::numeric_limits<std::int16_t>::max()) {
        break;
      }
      ++end;
    }

    w.u32(static_cast<std::uint32_t>(end - i - 1));
    w.u32(static_cast<std::uint32_t>(first.ref.block_start));
    w.u32(first.inode_number);
    for (std::size_t k = i; k < end; ++k) {
      const dir_entry& e = entries[k];
      w.u16(e.ref.offset);
      w.i16(static_cast<std::int16_t>(std::int64_t{e.inode_number} - base));
      w.u16(e.type);
      w.u16(static_cast<std::uint16_t>(e.name.size() - 1));
      w.bytes(e.name);
    }
    i = end;
  }
  out.listing_size = static_cast<std::uint32_t>(out.bytes.size() + 3);
  return out;
}

template <record_cursor Cursor>
std::vector<dir_entry> decode_dir_listing(Cursor& in,
                                          std::uint32_t listing_size) {
  if (listing_size < 3) {
    fail(errc::corrupt_image, "directory listing size below 3");
  }
  std::vector<dir_entry> out;
  std::uint64_t remaining = listing_size - 3;
  auto take = [&](std::uint64_t n) {
    if (n > remaining) {
      fail(errc::corrupt_image, "directory listing overruns its size");
    }
    remaining -= n;
  };

  while (remaining > 0) {
    take(12);
    std::uint32_t count = in.u32() + 1;
    std::uint32_t start = in.u32();
    std::uint32_t base = in.u32();
    if (count > kMaxEntriesPerHeader) {
      fail(errc::corrupt_image, "directory header with " +
                                    std::to_string(count) + " entries");
    }
    for (std::uint32_t k = 0; k < count; ++k) {
      take(8);
      dir_entry e;
      e.ref.block_start = start;
      e.ref.offset = in.u16();
      std::int16_t delta = in.i16();
      e.type = in.u16();
      std::size_t name_len = std::size_t{in.u16()} + 1;
      if (name_len > kMaxNameLength) {
        fail(errc::name_too_long, std::to_string(name_len) + " bytes");
      }
      take(name_len);
      e.name = in.str(name_len);
      validate_entry_name(e.name);
      std::int64_t number = std::int64_t{base} + delta;
      if (number < 1 || number > 0xffffffffLL) {
        fail(errc::bad_delta, "entry \"" + e.name + "\" resolves to inode " +
                                  std::to_string(number));
      }
      e.inode_number = static_cast<std::uint32_t>(number);
      if (e.type < 1 || e.type > 7) {
        fail(errc::corrupt_image, "entry \"" + e.name + "\" has type " +
                                      std::to_string(e.type));
      }
      if (!out.empty() && !(out.back().name < e.name)) {
        fail(errc::unsorted_entries, "\"" + out.back().name +
                                         "\" is not before \"" + e.name + "\"");
      }
      out.push_back(std::move(e));
    }
  }
  return out;
}

template std::vector<dir_entry> decode_dir_listing<le_reader>(le_reader&,
                                                              std::uint32_t);
template std::vector<dir_entry>
decode_dir_listing<metadata_cursor>(metadata_cursor&, std::uint32_t);

std::vector<dir_entry> decode_dir_listing(byte_view payload,
                                          std::uint32_t listing_size) {
  le_reader in(payload, errc::corrupt_image);
  return decode_dir_listing(in, listing_size);
}

// ---------------------------------------------------------------------------
// Lookup tables

byte_buffer read_lookup_table(const byte_source& source, std::uint64_t start,
                              std::uint32_t entry_size, std::uint32_t count,
                              std::uint16_t codec_id) {
  if (count == 0) {
    return {};
  }
  if (start == kAbsent) {
    fail(errc::truncated_table, "table of " + std::to_string(count) +
                                    " entries has no location");
  }
  std::uint64_t total = std::uint64_t{entry_size} * count;
  std::uint64_t blocks = (total + kMetadataBlockSize - 1) / kMetadataBlockSize;

  byte_buffer index(static_cast<std::size_t>(blocks * 8));
  source.read_exact(start, index, errc::truncated_table);
  le_reader idx(index, errc::truncated_table);

  byte_buffer out;
  out.reserve(static_cast<std::size_t>(total));
  for (std::uint64_t b = 0; b < blocks; ++b) {
    std::uint64_t where = idx.u64();
    if (where >= start) {
      fail(errc::truncated_table, "table block pointer " +
                                      std::to_string(where) +
                                      " is not before its index");
    }
    metadata_block block;
    try {
      block = read_metadata_block(source, where, codec_id);
    } catch (const error& e) {
      if (e.code() == errc::truncated_block) {
        fail(errc::truncated_table, e.what());
      }
      throw;
    }
    std::uint64_t want =
        std::min<std::uint64_t>(kMetadataBlockSize, total - out.size());
    if (block.payload.size() != want) {
      fail(errc::truncated_table, "table block holds " +
                                      std::to_string(block.payload.size()) +
                                      " bytes, expected " +
                                      std::to_string(want));
    }
    out.insert(out.end(), block.payload.begin(), block.payload.end());
  }
  return out;
}

std::vector<std::uint32_t> read_id_table(const byte_source& source,
                                         const superblock& sb) {
  if (sb.id_count == 0) {
    fail(errc::corrupt_image, "id table is empty");
  }
  byte_buffer raw = read_lookup_table(source, sb.id_table_start, 4,
                                      sb.id_count, sb.compressor_id);
  le_reader in(raw, errc::truncated_table);
  std::vector<std::uint32_t> ids(sb.id_count);
  for (auto& id : ids) id = in.u32();
  return ids;
}

std::vector<fragment_entry> read_fragment_table(const byte_source& source,
                                                const superblock& sb) {
  if (sb.fragment_count == 0) {
    return {};
  }
  byte_buffer raw = read_lookup_table(source, sb.fragment_table_start, 16,
                                      sb.fragment_count, sb.compressor_id);
  le_reader in(raw, errc::truncated_table);
  std::vector<fragment_entry> out(sb.fragment_count);
  for (auto& f : out) {
    f.start = in.u64();
    f.size = in.u32();
    in.u32();
    if ((f.size & kDataSizeMask & ~kDataUncompressed) > sb.block_size) {
      fail(errc::corrupt_image, "fragment larger than the block size");
    }
  }
  return out;
}

std::vector<inode_ref> read_export_table(const byte_source& source,
                                         const superblock& sb) {
  if (sb.export_table_start == kAbsent) {
    return {};
  }
  byte_buffer raw = read_lookup_table(source, sb.export_table_start, 8,
                                      sb.inode_count, sb.compressor_id);
  le_reader in(raw, errc::truncated_table);
  std::vector<inode_ref> out(sb.inode_count);
  for (auto& r : out) r = inode_ref::from_raw(in.u64());
  return out;
}

lookup_table_blob write_lookup_table(byte_view entries, std::uint64_t position,
                                     std::uint16_t codec_id) {
  lookup_table_blob out;
  std::vector<std::uint64_t> pointers;
  for (std::size_t at = 0; at < entries.size(); at += kMetadataBlockSize) {
    std::size_t n = std::min(kMetadataBlockSize, entries.size() - at);
    pointers.push_back(position + out.bytes.size());
    byte_buffer block = encode_metadata_block(entries.subspan(at, n), codec_id);
    out.bytes.insert(out.bytes.end(), block.begin(), block.end());
  }
  out.start = position + out.bytes.size();
  le_writer w(out.bytes);
  for (auto p : pointers) w.u64(p);
  return out;
}

} // namespace sqb::format
