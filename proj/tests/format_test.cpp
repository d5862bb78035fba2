#include <random>

#include <gtest/gtest.h>

#include "sqb/codec.hpp"
#include "sqb/format.hpp"
#include "support.hpp"

namespace sqb::format {
namespace {

template <class F>
errc error_of(F&& f) {
  try {
    f();
  } catch (const error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return errc::io_error;
}

template <class F>
std::string message_of(F&& f) {
  try {
    f();
  } catch (const error& e) {
    return e.what();
  }
  return {};
}

superblock valid_superblock() {
  superblock sb;
  sb.inode_count = 3;
  sb.mod_time = 1580000000;
  sb.block_size = 131072;
  sb.block_log = 17;
  sb.compressor_id = 1;
  sb.flags = flags::no_fragments | flags::no_xattrs;
  sb.id_count = 1;
  sb.root_inode = {0, 64};
  sb.inode_table_start = 96;
  sb.directory_table_start = 200;
  sb.fragment_table_start = 240;
  sb.id_table_start = 260;
  sb.bytes_used = 268;
  return sb;
}

metadata_fetch fetch_from(const byte_source& src, std::uint16_t codec) {
  return [&src, codec](std::uint64_t off) {
    return std::make_shared<const metadata_block>(read_metadata_block(src, off, codec));
  };
}

// ---------------------------------------------------------------------------
// Superblock

TEST(Superblock, ZeroedMagicIsBadMagic) {
  auto bytes = write_superblock(valid_superblock());
  bytes[0] = bytes[1] = bytes[2] = bytes[3] = 0;
  EXPECT_EQ(error_of([&] { parse_superblock(bytes); }), errc::bad_magic);
}

TEST(Superblock, MagicBytesAreHsqs) {
  auto bytes = write_superblock(valid_superblock());
  ASSERT_EQ(bytes.size(), 96u);
  EXPECT_EQ(bytes[0], 0x68);
  EXPECT_EQ(bytes[1], 0x73);
  EXPECT_EQ(bytes[2], 0x71);
  EXPECT_EQ(bytes[3], 0x73);
}

TEST(Superblock, BlockLogMismatchIsGeometryError) {
  auto sb = valid_superblock();
  sb.block_log = 16;
  EXPECT_EQ(error_of([&] { write_superblock(sb); }), errc::geometry_error);
  // Same through the parser: patch the block_log field of a valid header.
  auto bytes = write_superblock(valid_superblock());
  bytes[22] = 16;
  EXPECT_EQ(error_of([&] { parse_superblock(bytes); }), errc::geometry_error);
}

TEST(Superblock, NonPowerOfTwoBlockSize) {
  auto sb = valid_superblock();
  sb.block_size = 100000;
  EXPECT_EQ(error_of([&] { write_superblock(sb); }), errc::geometry_error);
  sb.block_size = 2048;
  sb.block_log = 11;
  EXPECT_EQ(error_of([&] { write_superblock(sb); }), errc::geometry_error);
}

TEST(Superblock, BlockSizeLayoutAtOffset12) {
  auto bytes = write_superblock(valid_superblock());
  EXPECT_EQ(bytes[12], 0x00);
  EXPECT_EQ(bytes[13], 0x00);
  EXPECT_EQ(bytes[14], 0x02);
  EXPECT_EQ(bytes[15], 0x00);
}

TEST(Superblock, CompressorZeroRejected) {
  auto sb = valid_superblock();
  sb.compressor_id = 0;
  EXPECT_EQ(error_of([&] { write_superblock(sb); }), errc::unsupported_compressor);
}

TEST(Superblock, VersionMustBeFourZero) {
  auto sb = valid_superblock();
  auto bytes = write_superblock(sb);
  bytes[28] = 3;
  EXPECT_EQ(error_of([&] { parse_superblock(bytes); }), errc::unsupported_version);
  bytes[28] = 4;
  bytes[30] = 1;
  EXPECT_EQ(error_of([&] { parse_superblock(bytes); }), errc::unsupported_version);
}

TEST(Superblock, XzImageRejectedByName) {
  auto bytes = write_superblock(valid_superblock());
  bytes[20] = 4;
  auto msg = message_of([&] { parse_superblock(bytes); });
  EXPECT_NE(msg.find("UnsupportedCompressor"), std::string::npos);
  EXPECT_NE(msg.find("xz"), std::string::npos);
}

TEST(Superblock, ShortInput) {
  EXPECT_EQ(error_of([&] { parse_superblock({}); }), errc::bad_magic);
  auto bytes = write_superblock(valid_superblock());
  bytes.resize(50);
  EXPECT_EQ(error_of([&] { parse_superblock(bytes); }), errc::truncated_block);
}

TEST(Superblock, RoundTripProperty) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 500; ++i) {
    superblock sb;
    sb.inode_count = static_cast<std::uint32_t>(rng());
    sb.mod_time = static_cast<std::uint32_t>(rng());
    sb.block_log = static_cast<std::uint16_t>(12 + rng() % 9);
    sb.block_size = 1u << sb.block_log;
    sb.fragment_count = static_cast<std::uint32_t>(rng());
    sb.compressor_id = rng() % 2 ? 1 : 6;
    sb.flags = static_cast<std::uint16_t>(rng());
    sb.id_count = static_cast<std::uint16_t>(rng());
    sb.root_inode = {rng() >> 20, static_cast<std::uint16_t>(rng() % 8192)};
    sb.inode_table_start = rng() >> 8;
    sb.directory_table_start = sb.inode_table_start + 1 + (rng() >> 40);
    sb.bytes_used = sb.directory_table_start + (rng() >> 40);
    sb.id_table_start = rng();
    sb.xattr_table_start = rng() % 2 ? kAbsent : rng();
    sb.fragment_table_start = rng();
    sb.export_table_start = rng() % 2 ? kAbsent : rng();
    EXPECT_EQ(parse_superblock(write_superblock(sb)), sb);
  }
}

// ---------------------------------------------------------------------------
// Metadata blocks

TEST(MetadataBlock, UncompressedHello) {
  memory_source src(byte_buffer{0x05, 0x80, 'h', 'e', 'l', 'l', 'o'});
  auto b = read_metadata_block(src, 0, 1);
  EXPECT_EQ(std::string(as_chars(b.payload)), "hello");
  EXPECT_EQ(b.consumed, 7u);
}

TEST(MetadataBlock, TruncatedBlock) {
  byte_buffer raw(102, 'x');
  raw[0] = 5000 & 0xff;
  raw[1] = 5000 >> 8;
  memory_source src(raw);
  EXPECT_EQ(error_of([&] { read_metadata_block(src, 0, 1); }), errc::truncated_block);
  memory_source one(byte_buffer{0x01});
  EXPECT_EQ(error_of([&] { read_metadata_block(one, 0, 1); }), errc::truncated_block);
}

TEST(MetadataBlock, OversizeBlocks) {
  byte_buffer raw(2 + 8193, 'x');
  raw[0] = static_cast<std::uint8_t>(8193 & 0xff);
  raw[1] = static_cast<std::uint8_t>(0x80 | (8193 >> 8));
  memory_source src(raw);
  EXPECT_EQ(error_of([&] { read_metadata_block(src, 0, 1); }), errc::oversize_block);

  // A compressed block that inflates past 8 KiB.
  byte_buffer big(9000, 'q');
  auto packed = codec_compress(1, big);
  byte_buffer blk;
  le_writer w(blk);
  w.u16(static_cast<std::uint16_t>(packed.size()));
  w.bytes(packed);
  memory_source src2(blk);
  EXPECT_EQ(error_of([&] { read_metadata_block(src2, 0, 1); }), errc::oversize_block);
}

TEST(MetadataBlock, CompressedRoundTrip) {
  for (std::uint16_t codec : {1, 6}) {
    byte_buffer payload(3000);
    for (std::size_t i = 0; i < payload.size(); ++i) payload[i] = static_cast<std::uint8_t>(i % 7);
    byte_buffer records[] = {payload};
    auto stream = write_metadata_stream(records, codec);
    ASSERT_EQ(stream.refs.size(), 1u);
    EXPECT_EQ(stream.blob[1] & 0x80, 0) << "compressible payload should be compressed";
    memory_source src(stream.blob);
    auto b = read_metadata_block(src, 0, codec);
    EXPECT_EQ(b.payload, payload);
    EXPECT_EQ(b.consumed, stream.blob.size());
  }
}

TEST(MetadataBlock, IncompressibleStoredRaw) {
  std::mt19937_64 rng(1);
  auto payload = test::random_bytes(rng, 500);
  auto block = encode_metadata_block(payload, 1);
  ASSERT_EQ(block.size(), 502u);
  EXPECT_EQ(block[0] | (block[1] << 8), 0x8000 | 500);
}

// Independent oracle: walk the block headers of a finished stream to find
// each block's on-disk offset, then map every record's logical start to
// (offset of block start/8192, start % 8192).
std::vector<inode_ref> oracle_refs(const byte_buffer& blob,
                                   const std::vector<std::size_t>& record_sizes) {
  std::vector<std::uint64_t> block_offsets;
  for (std::size_t pos = 0; pos < blob.size();) {
    block_offsets.push_back(pos);
    std::size_t hdr = blob[pos] | (blob[pos + 1] << 8);
    pos += 2 + (hdr & 0x7fff);
  }
  std::vector<inode_ref> refs;
  std::size_t logical = 0;
  for (auto n : record_sizes) {
    std::size_t blk = logical / 8192;
    std::uint64_t where = blk < block_offsets.size() ? block_offsets[blk]
                                                      : blob.size();
    refs.push_back({where, static_cast<std::uint16_t>(logical % 8192)});
    logical += n;
  }
  return refs;
}

TEST(MetadataStream, SingleSmallRecord) {
  byte_buffer records[] = {byte_buffer(10, 1)};
  auto s = write_metadata_stream(records, 1);
  ASSERT_EQ(s.refs.size(), 1u);
  EXPECT_EQ(s.refs[0], (inode_ref{0, 0}));
  memory_source src(s.blob);
  auto b = read_metadata_block(src, 0, 1);
  EXPECT_EQ(b.consumed, s.blob.size()) << "exactly one block";
}

TEST(MetadataStream, TwoRecordsOf8000) {
  std::mt19937_64 rng(3);
  std::vector<byte_buffer> records = {test::random_bytes(rng, 8000),
                                      test::random_bytes(rng, 8000)};
  auto s = write_metadata_stream(records, 1);
  auto expected = oracle_refs(s.blob, {8000, 8000});
  EXPECT_EQ(s.refs, expected);
  // The second record begins inside the first block, 8000 bytes in, and
  // spills into the second block.
  EXPECT_EQ(s.refs[1], (inode_ref{0, 8000}));
}

TEST(MetadataStream, Empty) {
  auto s = write_metadata_stream({}, 1);
  EXPECT_TRUE(s.blob.empty());
  EXPECT_TRUE(s.refs.empty());
}

TEST(MetadataStream, RoundTripProperty) {
  std::mt19937_64 rng(11);
  for (int iter = 0; iter < 60; ++iter) {
    std::uint16_t codec = iter % 2 ? 6 : 1;
    std::vector<byte_buffer> records;
    std::vector<std::size_t> sizes;
    int n = static_cast<int>(rng() % 40);
    for (int i = 0; i < n; ++i) {
      std::size_t len = rng() % 5 == 0 ? rng() % 20000 : rng() % 200;
      records.push_back(rng() % 2 ? test::random_bytes(rng, len) : byte_buffer(len, 'z'));
      sizes.push_back(len);
    }
    auto s = write_metadata_stream(records, codec);
    ASSERT_EQ(s.refs, oracle_refs(s.blob, sizes));
    memory_source src(s.blob);
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (records[i].empty()) continue;
      metadata_cursor cur(fetch_from(src, codec), 0, s.blob.size(), s.refs[i],
                          errc::truncated_inode);
      byte_buffer back(records[i].size());
      cur.read(back);
      ASSERT_EQ(back, records[i]) << "record " << i;
    }
  }
}

TEST(MetadataCursor, ReadingPastTableEnd) {
  byte_buffer records[] = {byte_buffer(100, 1)};
  auto s = write_metadata_stream(records, 1);
  memory_source src(s.blob);
  metadata_cursor cur(fetch_from(src, 1), 0, s.blob.size(), {0, 0},
                      errc::truncated_inode);
  byte_buffer out(101);
  EXPECT_EQ(error_of([&] { cur.read(out); }), errc::truncated_inode);
  EXPECT_EQ(error_of([&] {
              metadata_cursor bad(fetch_from(src, 1), 0, s.blob.size(), {9999, 0},
                                  errc::truncated_inode);
            }),
            errc::truncated_inode);
}

// ---------------------------------------------------------------------------
// Inodes

TEST(Inode, SymlinkLayout) {
  inode_record rec;
  rec.kind = inode_kind::symlink;
  rec.mode = 0777;
  rec.uid_index = 0;
  rec.gid_index = 0;
  rec.mtime = 0x01020304;
  rec.inode_number = 5;
  rec.payload = symlink_payload{1, "../data"};
  auto bytes = encode_inode(rec);
  // Hand-assembled: header (16) + link_count + target_size + target.
  const byte_buffer expected = {
      0x03, 0x00, 0xff, 0x01, 0x00, 0x00, 0x00, 0x00,  // type, mode, uid, gid
      0x04, 0x03, 0x02, 0x01, 0x05, 0x00, 0x00, 0x00,  // mtime, inode number
      0x01, 0x00, 0x00, 0x00, 0x07, 0x00, 0x00, 0x00,  // nlink, target size 7
      '.',  '.',  '/',  'd',  'a',  't',  'a'};
  EXPECT_EQ(bytes, expected);
  EXPECT_EQ(decode_inode(bytes, 131072), rec);
}

TEST(Inode, EmptyFileHasNoBlocks) {
  inode_record rec;
  rec.kind = inode_kind::basic_file;
  rec.mode = 0644;
  rec.inode_number = 1;
  rec.payload = file_payload{};
  auto bytes = encode_inode(rec);
  EXPECT_EQ(bytes.size(), 32u);
  auto back = decode_inode(bytes, 4096);
  EXPECT_TRUE(back.file().block_sizes.empty());
  EXPECT_FALSE(back.file().has_fragment());
  EXPECT_EQ(back, rec);
}

TEST(Inode, DeviceKindsRejectedByName) {
  byte_buffer bytes(40, 0);
  bytes[0] = 5;
  auto msg = message_of([&] { decode_inode(bytes, 4096); });
  EXPECT_NE(msg.find("UnsupportedInodeKind"), std::string::npos);
  EXPECT_NE(msg.find("chardev"), std::string::npos);
  for (std::uint8_t tag : {4, 6, 7, 10, 11, 12, 13, 14}) {
    bytes[0] = tag;
    EXPECT_EQ(error_of([&] { decode_inode(bytes, 4096); }),
              errc::unsupported_inode_kind) << int(tag);
  }
}

TEST(Inode, Truncated) {
  inode_record rec;
  rec.kind = inode_kind::basic_file;
  file_payload f;
  f.file_size = 10000;
  f.block_sizes = {100, 200, 300};
  rec.payload = f;
  auto bytes = encode_inode(rec);
  bytes.pop_back();
  EXPECT_EQ(error_of([&] { decode_inode(bytes, 4096); }), errc::truncated_inode);
}

TEST(Inode, BlockCountFollowsFragmentPresence) {
  EXPECT_EQ(data_block_count(0, 4096, false), 0u);
  EXPECT_EQ(data_block_count(4096, 4096, false), 1u);
  EXPECT_EQ(data_block_count(4097, 4096, false), 2u);
  EXPECT_EQ(data_block_count(4097, 4096, true), 1u);
  EXPECT_EQ(data_block_count(100, 4096, true), 0u);
}

TEST(Inode, ExtendedDirIndexSkippedAndXattrRejected) {
  byte_buffer b;
  le_writer w(b);
  w.u16(8); w.u16(0755); w.u16(0); w.u16(0); w.u32(0); w.u32(7);
  w.u32(2);      // link count
  w.u32(70000);  // listing size
  w.u32(123);    // dir block start
  w.u32(9);      // parent
  w.u16(1);      // one index record
  w.u16(17);     // block offset
  w.u32(kNoXattr);
  w.u32(0); w.u32(0); w.u32(2); w.bytes(std::string_view("abc"));
  auto rec = decode_inode(b, 4096);
  EXPECT_EQ(rec.kind, inode_kind::ext_dir);
  EXPECT_EQ(rec.dir().listing_size, 70000u);
  EXPECT_EQ(rec.dir().dir_block_start, 123u);
  EXPECT_EQ(rec.dir().dir_block_offset, 17u);

  b[36] = 0; // xattr index low byte: no longer all-ones
  EXPECT_EQ(error_of([&] { decode_inode(b, 4096); }), errc::unsupported_xattr);
}

inode_record random_inode(std::mt19937_64& rng, std::uint32_t block_size) {
  inode_record rec;
  rec.mode = static_cast<std::uint16_t>(rng() & 07777);
  rec.uid_index = static_cast<std::uint16_t>(rng());
  rec.gid_index = static_cast<std::uint16_t>(rng());
  rec.mtime = static_cast<std::uint32_t>(rng());
  rec.inode_number = 1 + static_cast<std::uint32_t>(rng() % 0xfffffffe);
  switch (rng() % 5) {
    case 0: {
      rec.kind = inode_kind::basic_dir;
      dir_payload d;
      d.dir_block_start = static_cast<std::uint32_t>(rng());
      d.link_count = static_cast<std::uint32_t>(rng());
      d.listing_size = 3 + static_cast<std::uint32_t>(rng() % 65533);
      d.dir_block_offset = static_cast<std::uint16_t>(rng() % 8192);
      d.parent_inode = static_cast<std::uint32_t>(rng());
      rec.payload = d;
      break;
    }
    case 1: {
      rec.kind = inode_kind::ext_dir;
      dir_payload d;
      d.dir_block_start = static_cast<std::uint32_t>(rng());
      d.link_count = static_cast<std::uint32_t>(rng());
      d.listing_size = 3 + static_cast<std::uint32_t>(rng() >> 33);
      d.dir_block_offset = static_cast<std::uint16_t>(rng() % 8192);
      d.parent_inode = static_cast<std::uint32_t>(rng());
      rec.payload = d;
      break;
    }
    case 2:
    case 3: {
      bool ext = rng() % 2;
      rec.kind = ext ? inode_kind::ext_file : inode_kind::basic_file;
      file_payload f;
      f.file_size = rng() % (block_size * 20ull);
      f.data_start = ext ? rng() >> 4 : static_cast<std::uint32_t>(rng());
      if (ext) {
        f.sparse = rng() % 1000;
        f.link_count = 1 + static_cast<std::uint32_t>(rng() % 5);
      }
      if (rng() % 3 == 0) {
        f.fragment_index = static_cast<std::uint32_t>(rng() % 1000);
        f.fragment_offset = static_cast<std::uint32_t>(rng() % block_size);
      }
      auto n = data_block_count(f.file_size, block_size, f.has_fragment());
      for (std::uint64_t i = 0; i < n; ++i) {
        std::uint32_t w = static_cast<std::uint32_t>(rng() % (block_size + 1));
        if (rng() % 4 == 0) w |= kDataUncompressed;
        f.block_sizes.push_back(w);
      }
      rec.payload = f;
      break;
    }
    default: {
      rec.kind = inode_kind::symlink;
      symlink_payload l;
      l.link_count = 1;
      l.target = test::random_name(rng) + "/" + test::random_name(rng);
      rec.payload = l;
      break;
    }
  }
  return rec;
}

TEST(Inode, RoundTripProperty) {
  std::mt19937_64 rng(99);
  for (int i = 0; i < 2000; ++i) {
    std::uint32_t bs = 1u << (12 + rng() % 9);
    auto rec = random_inode(rng, bs);
    auto bytes = encode_inode(rec);
    ASSERT_EQ(decode_inode(bytes, bs), rec) << "iteration " << i;
  }
}

TEST(Inode, StreamedRecordsDecodeAcrossBlocks) {
  std::mt19937_64 rng(5);
  std::vector<inode_record> recs;
  std::vector<byte_buffer> bytes;
  for (int i = 0; i < 800; ++i) {
    recs.push_back(random_inode(rng, 4096));
    bytes.push_back(encode_inode(recs.back()));
  }
  auto s = write_metadata_stream(bytes, 1);
  memory_source src(s.blob);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    metadata_cursor cur(fetch_from(src, 1), 0, s.blob.size(), s.refs[i],
                        errc::truncated_inode);
    ASSERT_EQ(decode_inode(cur, 4096), recs[i]);
  }
}

// ---------------------------------------------------------------------------
// Directory listings

TEST(DirListing, TwoEntriesOneHeader) {
  std::vector<dir_entry> entries = {{"a", {0, 0}, 1, 2}, {"b", {0, 32}, 2, 2}};
  auto enc = encode_dir_listing(entries);
  const byte_buffer expected = {
      0x01, 0x00, 0x00, 0x00,  // count - 1
      0x00, 0x00, 0x00, 0x00,  // inode block start
      0x01, 0x00, 0x00, 0x00,  // base inode number
      0x00, 0x00, 0x00, 0x00, 0x02, 0x00, 0x00, 0x00, 'a',
      0x20, 0x00, 0x01, 0x00, 0x02, 0x00, 0x00, 0x00, 'b'};
  EXPECT_EQ(enc.bytes, expected);
  EXPECT_EQ(enc.listing_size, expected.size() + 3);
  EXPECT_EQ(decode_dir_listing(enc.bytes, enc.listing_size), entries);
}

TEST(DirListing, EmptyDirectory) {
  auto enc = encode_dir_listing({});
  EXPECT_TRUE(enc.bytes.empty());
  EXPECT_EQ(enc.listing_size, 3u);
  EXPECT_TRUE(decode_dir_listing(byte_view{}, 3).empty());
}

TEST(DirListing, UnsortedRejected) {
  std::vector<dir_entry> entries = {{"b", {0, 0}, 1, 2}, {"a", {0, 32}, 2, 2}};
  EXPECT_EQ(error_of([&] { encode_dir_listing(entries); }), errc::unsorted_entries);
  std::vector<dir_entry> dup = {{"a", {0, 0}, 1, 2}, {"a", {0, 32}, 2, 2}};
  EXPECT_EQ(error_of([&] { encode_dir_listing(dup); }), errc::unsorted_entries);

  // Decoder enforces the same rule on foreign bytes.
  std::vector<dir_entry> ok = {{"a", {0, 0}, 1, 2}, {"b", {0, 32}, 2, 2}};
  auto enc = encode_dir_listing(ok);
  enc.bytes[20] = 'c';
  EXPECT_EQ(error_of([&] { decode_dir_listing(enc.bytes, enc.listing_size); }),
            errc::unsorted_entries);
}

TEST(DirListing, NameRules) {
  std::vector<dir_entry> long_name = {{std::string(257, 'x'), {0, 0}, 1, 2}};
  EXPECT_EQ(error_of([&] { encode_dir_listing(long_name); }), errc::name_too_long);
  std::vector<dir_entry> max_name = {{std::string(256, 'x'), {0, 0}, 1, 2}};
  auto enc = encode_dir_listing(max_name);
  EXPECT_EQ(decode_dir_listing(enc.bytes, enc.listing_size), max_name);
  for (std::string bad : {std::string("."), std::string(".."), std::string("a/b"),
                          std::string("a\0b", 3)}) {
    std::vector<dir_entry> e = {{bad, {0, 0}, 1, 2}};
    EXPECT_EQ(error_of([&] { encode_dir_listing(e); }), errc::bad_name);
  }
}

TEST(DirListing, HeaderSplits) {
  // 300 entries in one block with consecutive inodes: 256 + 44.
  std::vector<dir_entry> entries;
  for (int i = 0; i < 300; ++i) {
    char name[8];
    std::snprintf(name, sizeof name, "n%04d", i);
    entries.push_back({name, {0, static_cast<std::uint16_t>(i * 32)},
                       static_cast<std::uint32_t>(i + 1), 2});
  }
  auto enc = encode_dir_listing(entries);
  EXPECT_EQ(enc.bytes[0], 255);
  std::size_t second = 12 + 256 * (8 + 5);
  EXPECT_EQ(enc.bytes[second], 43);
  EXPECT_EQ(decode_dir_listing(enc.bytes, enc.listing_size), entries);

  // Block change and an out-of-range delta each force a new header.
  std::vector<dir_entry> mixed = {{"a", {0, 0}, 10, 2},
                                  {"b", {500, 0}, 11, 2},
                                  {"c", {500, 40}, 11 + 40000, 2}};
  auto m = encode_dir_listing(mixed);
  EXPECT_EQ(m.bytes.size(), 3 * (12 + 9));
  EXPECT_EQ(decode_dir_listing(m.bytes, m.listing_size), mixed);
}

TEST(DirListing, OverrunningSizeIsCorrupt) {
  std::vector<dir_entry> entries = {{"a", {0, 0}, 1, 2}};
  auto enc = encode_dir_listing(entries);
  EXPECT_EQ(error_of([&] { decode_dir_listing(enc.bytes, enc.listing_size + 5); }),
            errc::corrupt_image);
  EXPECT_EQ(error_of([&] { decode_dir_listing(enc.bytes, enc.listing_size - 1); }),
            errc::corrupt_image);
}

TEST(DirListing, RoundTripAndDeterminismProperty) {
  std::mt19937_64 rng(17);
  for (int iter = 0; iter < 300; ++iter) {
    std::vector<std::string> names;
    int n = static_cast<int>(rng() % 600);
    for (int i = 0; i < n; ++i) names.push_back(test::random_name(rng));
    std::sort(names.begin(), names.end());
    names.erase(std::unique(names.begin(), names.end()), names.end());
    std::vector<dir_entry> entries;
    std::uint64_t block = rng() % 4 * 8000;
    for (auto& nm : names) {
      if (rng() % 50 == 0) block += 7000;
      entries.push_back({nm, {block, static_cast<std::uint16_t>(rng() % 8192)},
                         1 + static_cast<std::uint32_t>(rng() % 100000),
                         static_cast<std::uint16_t>(1 + rng() % 3)});
    }
    auto a = encode_dir_listing(entries);
    auto b = encode_dir_listing(entries);
    ASSERT_EQ(a.bytes, b.bytes);
    ASSERT_EQ(decode_dir_listing(a.bytes, a.listing_size), entries);
  }
}

// ---------------------------------------------------------------------------
// Lookup tables

struct placed_table {
  byte_buffer image;
  std::uint64_t start;
};

placed_table place_table(const byte_buffer& entries, std::uint64_t position,
                         std::uint16_t codec) {
  auto t = write_lookup_table(entries, position, codec);
  byte_buffer image(position, 0xee);
  image.insert(image.end(), t.bytes.begin(), t.bytes.end());
  return {image, t.start};
}

TEST(LookupTable, SingleId) {
  byte_buffer entries;
  le_writer(entries).u32(1000);
  auto t = place_table(entries, 500, 1);
  memory_source src(t.image);
  superblock sb = valid_superblock();
  sb.id_table_start = t.start;
  sb.id_count = 1;
  EXPECT_EQ(read_id_table(src, sb), std::vector<std::uint32_t>{1000});
}

TEST(LookupTable, ManyIdsSpanBlocks) {
  byte_buffer entries;
  le_writer w(entries);
  for (std::uint32_t i = 0; i < 5000; ++i) w.u32(i * 7);
  auto t = place_table(entries, 96, 6);
  memory_source src(t.image);
  superblock sb = valid_superblock();
  sb.compressor_id = 6;
  sb.id_table_start = t.start;
  sb.id_count = 5000;
  auto ids = read_id_table(src, sb);
  ASSERT_EQ(ids.size(), 5000u);
  EXPECT_EQ(ids[4999], 4999u * 7);
}

TEST(LookupTable, AbsentFragmentTable) {
  memory_source src(byte_buffer(10, 0));
  superblock sb = valid_superblock();
  sb.fragment_table_start = kAbsent;
  sb.fragment_count = 0;
  EXPECT_TRUE(read_fragment_table(src, sb).empty());
}

TEST(LookupTable, ExportTableRoundTrip) {
  std::vector<inode_ref> refs;
  byte_buffer entries;
  le_writer w(entries);
  for (std::uint64_t i = 0; i < 1500; ++i) {
    refs.push_back({i * 300, static_cast<std::uint16_t>(i % 8192)});
    w.u64(refs.back().raw());
  }
  auto t = place_table(entries, 1000, 1);
  memory_source src(t.image);
  superblock sb = valid_superblock();
  sb.inode_count = 1500;
  sb.export_table_start = t.start;
  EXPECT_EQ(read_export_table(src, sb), refs);
}

TEST(LookupTable, TruncatedIndex) {
  byte_buffer entries;
  le_writer(entries).u32(1000);
  auto t = place_table(entries, 500, 1);
  t.image.resize(t.image.size() - 4);
  memory_source src(t.image);
  EXPECT_EQ(error_of([&] { read_lookup_table(src, t.start, 4, 1, 1); }),
            errc::truncated_table);
}

} // namespace
} // namespace sqb::format
