#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace sqb {

enum class errc : std::uint8_t {
  // image format
  bad_magic,
  unsupported_version,
  geometry_error,
  unsupported_compressor,
  truncated_block,
  decompress_error,
  oversize_block,
  unsupported_inode_kind,
  truncated_inode,
  unsupported_xattr,
  unsorted_entries,
  name_too_long,
  bad_name,
  bad_delta,
  truncated_table,
  corrupt_image,
  // namespace operations
  not_found,
  not_a_directory,
  not_a_file,
  not_a_symlink,
  // packing
  unreadable,
  unsupported_node,
  broken_symlink,
  source_changed,
  // sharding / overlay
  empty_dataset,
  empty_overlay,
  digest_mismatch,
  bad_manifest,
  // wire protocol
  truncated_frame,
  unknown_type,
  // mount
  facility_unavailable,
  mount_denied,
  // generic
  already_exists,
  disk_full,
  invalid_argument,
  io_error,
};

constexpr std::string_view errc_name(errc e) noexcept {
  switch (e) {
    case errc::bad_magic: return "BadMagic";
    case errc::unsupported_version: return "UnsupportedVersion";
    case errc::geometry_error: return "GeometryError";
    case errc::unsupported_compressor: return "UnsupportedCompressor";
    case errc::truncated_block: return "TruncatedBlock";
    case errc::decompress_error: return "DecompressError";
    case errc::oversize_block: return "OversizeBlock";
    case errc::unsupported_inode_kind: return "UnsupportedInodeKind";
    case errc::truncated_inode: return "TruncatedInode";
    case errc::unsupported_xattr: return "UnsupportedXattr";
    case errc::unsorted_entries: return "UnsortedEntries";
    case errc::name_too_long: return "NameTooLong";
    case errc::bad_name: return "BadName";
    case errc::bad_delta: return "BadDelta";
    case errc::truncated_table: return "TruncatedTable";
    case errc::corrupt_image: return "CorruptImage";
    case errc::not_found: return "NotFound";
    case errc::not_a_directory: return "NotADirectory";
    case errc::not_a_file: return "NotAFile";
    case errc::not_a_symlink: return "NotASymlink";
    case errc::unreadable: return "Unreadable";
    case errc::unsupported_node: return "UnsupportedNode";
    case errc::broken_symlink: return "BrokenSymlink";
    case errc::source_changed: return "SourceChanged";
    case errc::empty_dataset: return "EmptyDataset";
    case errc::empty_overlay: return "EmptyOverlay";
    case errc::digest_mismatch: return "DigestMismatch";
    case errc::bad_manifest: return "BadManifest";
    case errc::truncated_frame: return "TruncatedFrame";
    case errc::unknown_type: return "UnknownType";
    case errc::facility_unavailable: return "FacilityUnavailable";
    case errc::mount_denied: return "MountDenied";
    case errc::already_exists: return "AlreadyExists";
    case errc::disk_full: return "DiskFull";
    case errc::invalid_argument: return "InvalidArgument";
    case errc::io_error: return "IoError";
  }
  return "Unknown";
}

/// True for failures of the host environment (files, sockets, devices)
/// rather than of the data being decoded.
constexpr bool is_io_error(errc e) noexcept {
  switch (e) {
    case errc::io_error:
    case errc::unreadable:
    case errc::facility_unavailable:
    case errc::mount_denied:
    case errc::already_exists:
    case errc::disk_full:
      return true;
    default:
      return false;
  }
}

class error : public std::runtime_error {
 public:
  error(errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what)
      , code_(code) {}

  errc code() const noexcept { return code_; }

 private:
  errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string& what) {
  throw error(code, what);
}

} // namespace sqb
