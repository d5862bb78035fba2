#include "sqb/codec.hpp"

#include <string>

#include <zlib.h>
#include <zstd.h>
#include <zstd_errors.h>

namespace sqb {

namespace {

// Levels match the reference packer defaults.
constexpr int kZlibLevel = 9;
constexpr int kZstdLevel = 15;

byte_buffer zlib_compress(byte_view data) {
  uLongf bound = compressBound(static_cast<uLong>(data.size()));
  byte_buffer out(bound);
  int rc = compress2(out.data(), &bound, data.data(),
                     static_cast<uLong>(data.size()), kZlibLevel);
  if (rc != Z_OK) {
    fail(errc::io_error, "zlib compress failed: " + std::to_string(rc));
  }
  out.resize(bound);
  return out;
}

byte_buffer zlib_decompress(byte_view data, std::size_t max_out) {
  z_stream zs{};
  if (inflateInit(&zs) != Z_OK) {
    fail(errc::decompress_error, "zlib inflateInit failed");
  }
  // zlib rejects a null next_out even when no output is expected.
  byte_buffer out(max_out == 0 ? 1 : max_out);
  zs.next_in = const_cast<Bytef*>(data.data());
  zs.avail_in = static_cast<uInt>(data.size());
  zs.next_out = out.data();
  zs.avail_out = static_cast<uInt>(max_out);
  int rc = inflate(&zs, Z_FINISH);
  std::size_t produced = max_out - zs.avail_out;
  bool trailing = zs.avail_in != 0;
  inflateEnd(&zs);
  if (rc != Z_STREAM_END) {
    if (rc == Z_BUF_ERROR && zs.avail_out == 0) {
      fail(errc::oversize_block,
           "zlib output exceeds " + std::to_string(max_out) + " bytes");
    }
    fail(errc::decompress_error, "corrupt zlib stream (rc " +
                                     std::to_string(rc) + ")");
  }
  if (trailing) {
    fail(errc::decompress_error, "trailing bytes after zlib stream");
  }
  out.resize(produced);
  return out;
}

byte_buffer zstd_compress(byte_view data) {
  byte_buffer out(ZSTD_compressBound(data.size()));
  std::size_t n = ZSTD_compress(out.data(), out.size(), data.data(),
                                data.size(), kZstdLevel);
  if (ZSTD_isError(n)) {
    fail(errc::io_error, std::string("zstd compress failed: ") +
                             ZSTD_getErrorName(n));
  }
  out.resize(n);
  return out;
}

byte_buffer zstd_decompress(byte_view data, std::size_t max_out) {
  byte_buffer out(max_out);
  std::size_t n =
      ZSTD_decompress(out.data(), out.size(), data.data(), data.size());
  if (ZSTD_isError(n)) {
    if (ZSTD_getErrorCode(n) == ZSTD_error_dstSize_tooSmall) {
      fail(errc::oversize_block,
           "zstd output exceeds " + std::to_string(max_out) + " bytes");
    }
    fail(errc::decompress_error,
         std::string("corrupt zstd frame: ") + ZSTD_getErrorName(n));
  }
  out.resize(n);
  return out;
}

} // namespace

std::string_view compressor_name(std::uint16_t id) noexcept {
  switch (id) {
    case 1: return "zlib";
    case 2: return "lzma";
    case 3: return "lzo";
    case 4: return "xz";
    case 5: return "lz4";
    case 6: return "zstd";
    default: return "unknown";
  }
}

std::optional<std::uint16_t>
compressor_from_name(std::string_view name) noexcept {
  if (name == "zlib" || name == "gzip") {
    return 1;
  }
  if (name == "zstd") {
    return 6;
  }
  return std::nullopt;
}

bool is_supported_compressor(std::uint16_t id) noexcept {
  return id == static_cast<std::uint16_t>(compressor::zlib) ||
         id == static_cast<std::uint16_t>(compressor::zstd);
}

void require_supported_compressor(std::uint16_t id) {
  if (!is_supported_compressor(id)) {
    std::string name(compressor_name(id));
    if (name == "unknown") {
      name += " (id " + std::to_string(id) + ")";
    }
    fail(errc::unsupported_compressor, name);
  }
}

byte_buffer codec_compress(std::uint16_t codec_id, byte_view data) {
  require_supported_compressor(codec_id);
  return codec_id == 1 ? zlib_compress(data) : zstd_compress(data);
}

byte_buffer codec_decompress(std::uint16_t codec_id, byte_view data,
                             std::size_t max_out) {
  require_supported_compressor(codec_id);
  return codec_id == 1 ? zlib_decompress(data, max_out)
                       : zstd_decompress(data, max_out);
}

} // namespace sqb
