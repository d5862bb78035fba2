#pragma once

#include <cstdint>
#include <optional>
#include <string_view>

#include "sqb/bytes.hpp"

namespace sqb {

// Compressor ids assigned by the on-disk format. Only zlib and zstd are
// implemented; the rest are recognized so they can be rejected by name.
enum class compressor : std::uint16_t {
  zlib = 1,
  lzma = 2,
  lzo = 3,
  xz = 4,
  lz4 = 5,
  zstd = 6,
};

std::string_view compressor_name(std::uint16_t id) noexcept;

/// Parses "zlib"/"gzip"/"zstd" into an id; nullopt for anything else.
std::optional<std::uint16_t> compressor_from_name(std::string_view name) noexcept;

bool is_supported_compressor(std::uint16_t id) noexcept;

/// Throws UnsupportedCompressor (naming the codec) unless id is 1 or 6.
void require_supported_compressor(std::uint16_t id);

byte_buffer codec_compress(std::uint16_t codec_id, byte_view data);

/// Output larger than max_out raises OversizeBlock; corrupt input raises
/// DecompressError.
byte_buffer codec_decompress(std::uint16_t codec_id, byte_view data,
                             std::size_t max_out);

} // namespace sqb
