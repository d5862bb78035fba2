#pragma once

// SquashFS 4.0 on-disk structures. Everything here is a pure transformation
// over bytes and is safe to call from any thread.

#include <concepts>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "sqb/bytes.hpp"
#include "sqb/source.hpp"

namespace sqb::format {

inline constexpr std::uint32_t kMagic = 0x73717368;
inline constexpr std::size_t kSuperblockSize = 96;
inline constexpr std::size_t kMetadataBlockSize = 8192;
inline constexpr std::uint16_t kMetadataUncompressed = 0x8000;
inline constexpr std::uint32_t kDataUncompressed = 1u << 24;
inline constexpr std::uint32_t kDataSizeMask = 0x00ffffff;
inline constexpr std::uint64_t kAbsent = ~std::uint64_t{0};
inline constexpr std::uint32_t kNoFragment = 0xffffffffu;
inline constexpr std::uint32_t kNoXattr = 0xffffffffu;
inline constexpr std::size_t kMaxNameLength = 256;
inline constexpr std::size_t kMaxEntriesPerHeader = 256;
inline constexpr std::size_t kImagePadding = 4096;

namespace flags {
inline constexpr std::uint16_t uncompressed_inodes = 0x0001;
inline constexpr std::uint16_t uncompressed_data = 0x0002;
inline constexpr std::uint16_t uncompressed_fragments = 0x0008;
inline constexpr std::uint16_t no_fragments = 0x0010;
inline constexpr std::uint16_t always_fragments = 0x0020;
inline constexpr std::uint16_t duplicates = 0x0040;
inline constexpr std::uint16_t exportable = 0x0080;
inline constexpr std::uint16_t uncompressed_xattrs = 0x0100;
inline constexpr std::uint16_t no_xattrs = 0x0200;
inline constexpr std::uint16_t compressor_options = 0x0400;
inline constexpr std::uint16_t uncompressed_ids = 0x0800;
} // namespace flags

/// Address of a record inside a metadata table: the on-disk offset of the
/// containing block (relative to the table start) plus the offset within
/// its decompressed payload.
struct inode_ref {
  std::uint64_t block_start = 0;
  std::uint16_t offset = 0;

  constexpr std::uint64_t raw() const noexcept {
    return (block_start << 16) | offset;
  }
  static constexpr inode_ref from_raw(std::uint64_t v) noexcept {
    return {v >> 16, static_cast<std::uint16_t>(v & 0xffff)};
  }

  friend constexpr bool operator==(const inode_ref&, const inode_ref&) = default;
};

struct superblock {
  std::uint32_t magic = kMagic;
  std::uint32_t inode_count = 0;
  std::uint32_t mod_time = 0;
  std::uint32_t block_size = 131072;
  std::uint32_t fragment_count = 0;
  std::uint16_t compressor_id = 1;
  std::uint16_t block_log = 17;
  std::uint16_t flags = 0;
  std::uint16_t id_count = 0;
  std::uint16_t version_major = 4;
  std::uint16_t version_minor = 0;
  inode_ref root_inode{};
  std::uint64_t bytes_used = 0;
  std::uint64_t id_table_start = 0;
  std::uint64_t xattr_table_start = kAbsent;
  std::uint64_t inode_table_start = 0;
  std::uint64_t directory_table_start = 0;
  std::uint64_t fragment_table_start = kAbsent;
  std::uint64_t export_table_start = kAbsent;

  friend bool operator==(const superblock&, const superblock&) = default;
};

/// Throws BadMagic / UnsupportedVersion / GeometryError /
/// UnsupportedCompressor on the first violated invariant.
void validate(const superblock& sb);

superblock parse_superblock(byte_view bytes);
byte_buffer write_superblock(const superblock& sb);

/// log2 of a valid block size, or GeometryError.
std::uint16_t block_log_for(std::uint32_t block_size);

// ---------------------------------------------------------------------------
// Metadata blocks

struct metadata_block {
  byte_buffer payload;
  std::uint64_t consumed = 0; ///< header + stored bytes
};

metadata_block read_metadata_block(const byte_source& source,
                                   std::uint64_t offset,
                                   std::uint16_t codec_id);

/// Encodes one metadata block (compressed unless that would not shrink it).
byte_buffer encode_metadata_block(byte_view payload, std::uint16_t codec_id);

/// Incremental metadata stream writer. Records may straddle blocks; the
/// returned reference always points at the record's first byte.
class metadata_writer {
 public:
  explicit metadata_writer(std::uint16_t codec_id) : codec_(codec_id) {}

  inode_ref append(byte_view record);

  /// Reference the next appended record would receive.
  inode_ref next_ref() const noexcept {
    return {blob_.size(), static_cast<std::uint16_t>(pending_.size())};
  }

  /// Flushes the partial tail block and returns the finished stream.
  byte_buffer finish();

  std::size_t block_count() const noexcept { return blocks_; }

 private:
  void flush_block(std::size_t n);

  std::uint16_t codec_;
  byte_buffer blob_;
  byte_buffer pending_;
  std::size_t blocks_ = 0;
};

struct metadata_stream {
  byte_buffer blob;
  std::vector<inode_ref> refs;
};

metadata_stream write_metadata_stream(std::span<const byte_buffer> records,
                                      std::uint16_t codec_id);

/// Returns the decompressed block at an absolute image offset.
using metadata_fetch =
    std::function<std::shared_ptr<const metadata_block>(std::uint64_t)>;

/// Sequential reader over a metadata table that crosses block boundaries.
class metadata_cursor {
 public:
  metadata_cursor(metadata_fetch fetch, std::uint64_t table_start,
                  std::uint64_t table_end, inode_ref at, errc on_short);

  void read(std::span<std::uint8_t> out);
  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  std::uint64_t u64();
  std::int16_t i16() { return static_cast<std::int16_t>(u16()); }
  std::string str(std::size_t n);
  void skip(std::size_t n);

 private:
  void advance();

  metadata_fetch fetch_;
  std::uint64_t table_start_;
  std::uint64_t table_end_;
  std::uint64_t block_pos_;
  std::shared_ptr<const metadata_block> block_;
  std::size_t offset_;
  errc on_short_;
};

// ---------------------------------------------------------------------------
// Inodes

enum class inode_kind : std::uint16_t {
  basic_dir = 1,
  basic_file = 2,
  symlink = 3,
  ext_dir = 8,
  ext_file = 9,
};

std::string_view inode_kind_name(std::uint16_t tag) noexcept;

struct dir_payload {
  std::uint32_t dir_block_start = 0;
  std::uint32_t link_count = 2;
  std::uint32_t listing_size = 3; ///< bytes of listing + 3
  std::uint16_t dir_block_offset = 0;
  std::uint32_t parent_inode = 0;

  friend bool operator==(const dir_payload&, const dir_payload&) = default;
};

struct file_payload {
  std::uint64_t data_start = 0;
  std::uint64_t file_size = 0;
  std::uint64_t sparse = 0;          ///< extended only
  std::uint32_t link_count = 1;      ///< extended only
  std::uint32_t fragment_index = kNoFragment;
  std::uint32_t fragment_offset = 0;
  std::vector<std::uint32_t> block_sizes;

  bool has_fragment() const noexcept { return fragment_index != kNoFragment; }

  friend bool operator==(const file_payload&, const file_payload&) = default;
};

struct symlink_payload {
  std::uint32_t link_count = 1;
  std::string target;

  friend bool operator==(const symlink_payload&, const symlink_payload&) = default;
};

struct inode_record {
  inode_kind kind = inode_kind::basic_dir;
  std::uint16_t mode = 0755;
  std::uint16_t uid_index = 0;
  std::uint16_t gid_index = 0;
  std::uint32_t mtime = 0;
  std::uint32_t inode_number = 1;
  std::variant<dir_payload, file_payload, symlink_payload> payload;

  bool is_dir() const noexcept {
    return kind == inode_kind::basic_dir || kind == inode_kind::ext_dir;
  }
  bool is_file() const noexcept {
    return kind == inode_kind::basic_file || kind == inode_kind::ext_file;
  }
  const dir_payload& dir() const { return std::get<dir_payload>(payload); }
  const file_payload& file() const { return std::get<file_payload>(payload); }
  const symlink_payload& link() const {
    return std::get<symlink_payload>(payload);
  }

  friend bool operator==(const inode_record&, const inode_record&) = default;
};

/// Number of data-block size words a file carries.
std::uint64_t data_block_count(std::uint64_t file_size, std::uint32_t block_size,
                               bool has_fragment) noexcept;

byte_buffer encode_inode(const inode_record& rec);

template <class T>
concept record_cursor =
    std::same_as<T, le_reader> || std::same_as<T, metadata_cursor>;

template <record_cursor Cursor>
inode_record decode_inode(Cursor& in, std::uint32_t block_size);

inode_record decode_inode(byte_view bytes, std::uint32_t block_size);

// ---------------------------------------------------------------------------
// Directory listings

/// Basic inode type stored in directory entries (1 dir, 2 file, 3 symlink).
enum class entry_type : std::uint16_t { dir = 1, file = 2, symlink = 3 };

struct dir_entry {
  std::string name;
  inode_ref ref;               ///< relative to the inode table
  std::uint32_t inode_number = 0;
  std::uint16_t type = 0;

  friend bool operator==(const dir_entry&, const dir_entry&) = default;
};

struct encoded_listing {
  byte_buffer bytes;
  std::uint32_t listing_size = 3;
};

void validate_entry_name(std::string_view name);

encoded_listing encode_dir_listing(std::span<const dir_entry> entries);

template <record_cursor Cursor>
std::vector<dir_entry> decode_dir_listing(Cursor& in, std::uint32_t listing_size);

std::vector<dir_entry> decode_dir_listing(byte_view payload,
                                          std::uint32_t listing_size);

// ---------------------------------------------------------------------------
// Lookup tables (id, fragment, export): fixed-size entries packed into
// metadata blocks, addressed through a u64 index stored after them.

struct fragment_entry {
  std::uint64_t start = 0;
  std::uint32_t size = 0;

  friend bool operator==(const fragment_entry&, const fragment_entry&) = default;
};

/// Returns count*entry_size raw entry bytes.
byte_buffer read_lookup_table(const byte_source& source, std::uint64_t start,
                              std::uint32_t entry_size, std::uint32_t count,
                              std::uint16_t codec_id);

std::vector<std::uint32_t> read_id_table(const byte_source& source,
                                         const superblock& sb);
std::vector<fragment_entry> read_fragment_table(const byte_source& source,
                                                const superblock& sb);
std::vector<inode_ref> read_export_table(const byte_source& source,
                                         const superblock& sb);

struct lookup_table_blob {
  byte_buffer bytes;        ///< metadata blocks, then the u64 index
  std::uint64_t start = 0;  ///< absolute offset of the index
};

/// Lays out a lookup table beginning at absolute offset `position`.
lookup_table_blob write_lookup_table(byte_view entries, std::uint64_t position,
                                     std::uint16_t codec_id);

} // namespace sqb::format
