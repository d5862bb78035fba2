#include <random>

#include <gtest/gtest.h>

#include "sqb/codec.hpp"
#include "support.hpp"

namespace sqb {
namespace {

TEST(Codec, EmptyRoundTrip) {
  for (std::uint16_t id : {1, 6}) {
    auto packed = codec_compress(id, {});
    EXPECT_TRUE(codec_decompress(id, packed, 0).empty()) << id;
  }
}

TEST(Codec, ZerosCompressWell) {
  byte_buffer zeros(64 * 1024, 0);
  auto packed = codec_compress(1, zeros);
  // Python's zlib.compress(b"\0" * 65536, 9) yields 84 bytes.
  EXPECT_EQ(packed.size(), 84u);
  EXPECT_LT(packed.size(), 1024u);
  // RFC 1950 header: CM=8, and the check bits make it a multiple of 31.
  EXPECT_EQ(packed[0] & 0x0f, 8);
  EXPECT_EQ(((packed[0] << 8) | packed[1]) % 31, 0);
  EXPECT_EQ(codec_decompress(1, packed, zeros.size()), zeros);

  auto z = codec_compress(6, zeros);
  EXPECT_LT(z.size(), 1024u);
  EXPECT_EQ(codec_decompress(6, z, zeros.size()), zeros);
}

TEST(Codec, UnsupportedIdsNamed) {
  const std::pair<std::uint16_t, const char*> cases[] = {
      {2, "lzma"}, {3, "lzo"}, {4, "xz"}, {5, "lz4"}, {0, "unknown"}, {99, "unknown"}};
  for (auto [id, name] : cases) {
    try {
      codec_compress(id, as_bytes("abc"));
      FAIL() << "id " << id << " accepted";
    } catch (const error& e) {
      EXPECT_EQ(e.code(), errc::unsupported_compressor);
      EXPECT_NE(std::string(e.what()).find(name), std::string::npos) << e.what();
    }
  }
  EXPECT_THROW(codec_decompress(4, as_bytes("abc"), 10), error);
}

TEST(Codec, CorruptInput) {
  for (std::uint16_t id : {1, 6}) {
    auto packed = codec_compress(id, as_bytes("hello hello hello hello"));
    packed[packed.size() / 2] ^= 0x5a;
    packed.back() ^= 0xff;
    try {
      codec_decompress(id, packed, 100);
      FAIL() << "corruption not detected for codec " << id;
    } catch (const error& e) {
      EXPECT_EQ(e.code(), errc::decompress_error) << e.what();
    }
  }
}

TEST(Codec, OutputCap) {
  byte_buffer data(5000, 'a');
  for (std::uint16_t id : {1, 6}) {
    auto packed = codec_compress(id, data);
    try {
      codec_decompress(id, packed, 4999);
      FAIL();
    } catch (const error& e) {
      EXPECT_EQ(e.code(), errc::oversize_block);
    }
  }
}

TEST(Codec, NamesParse) {
  EXPECT_EQ(compressor_from_name("zlib"), 1);
  EXPECT_EQ(compressor_from_name("gzip"), 1);
  EXPECT_EQ(compressor_from_name("zstd"), 6);
  EXPECT_FALSE(compressor_from_name("xz"));
}

TEST(Codec, RoundTripProperty) {
  std::mt19937_64 rng(42);
  for (int i = 0; i < 200; ++i) {
    std::size_t n = rng() % (131072 + 1);
    byte_buffer data = rng() % 2 ? test::random_bytes(rng, n)
                                 : test::random_content(rng, n);
    for (std::uint16_t id : {1, 6}) {
      auto packed = codec_compress(id, data);
      ASSERT_EQ(codec_decompress(id, packed, data.size()), data);
    }
  }
}

} // namespace
} // namespace sqb
