#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <random>
#include <thread>

#include <gtest/gtest.h>

#include "sftp_client.hpp"
#include "sqb/packer.hpp"
#include "sqb/reader.hpp"
#include "sqb/sftp.hpp"
#include "support.hpp"

namespace sqb {
namespace {

namespace fs = std::filesystem;
using namespace sftp;
using test::be32;
using test::be64;
using test::frame_of;
using test::sftp_test_client;
using test::wstr;

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

byte_buffer bytes_of(const std::string& s) { return byte_buffer(s.begin(), s.end()); }

TEST(SftpCodec, StatusOkLayout) {
  // length 17 | type 101 | id 7 | code 0 | "" | ""
  const std::uint8_t expected[] = {0, 0, 0, 17, 101, 0, 0, 0, 7, 0, 0, 0, 0,
                                   0, 0, 0, 0, 0, 0, 0, 0};
  auto f = encode_packet(make_status(7, status_code::ok));
  EXPECT_EQ(f, byte_buffer(std::begin(expected), std::end(expected)));
  EXPECT_EQ(decode_packet(f), make_status(7, status_code::ok));
}

TEST(SftpCodec, InitAndVersionLayout) {
  packet init;
  init.type = packet_type::init;
  init.version = 3;
  EXPECT_EQ(encode_packet(init), bytes_of(frame_of(1, be32(3))));
  auto v = decode_packet(bytes_of(frame_of(2, be32(3) + wstr("ext@x") + wstr("1"))));
  EXPECT_EQ(v.type, packet_type::version);
  EXPECT_EQ(v.version, 3u);
  ASSERT_EQ(v.extensions.size(), 1u);
  EXPECT_EQ(v.extensions[0].first, "ext@x");
}

TEST(SftpCodec, DecodesIndependentlyEncodedRequests) {
  auto p = decode_packet(bytes_of(frame_of(3, be32(9) + wstr("/README.txt") + be32(1) + be32(0))));
  EXPECT_EQ(p.type, packet_type::open);
  EXPECT_EQ(p.id, 9u);
  EXPECT_EQ(p.path, "/README.txt");
  EXPECT_EQ(p.pflags, 1u);
  auto r = decode_packet(bytes_of(frame_of(5, be32(10) + wstr("h") + be64(1ull << 40) + be32(65536))));
  EXPECT_EQ(r.handle, "h");
  EXPECT_EQ(r.offset, 1ull << 40);
  EXPECT_EQ(r.length, 65536u);
  // Attribute flags select which fields follow.
  auto s = decode_packet(bytes_of(frame_of(9, be32(11) + wstr("/x") + be32(4 | 8) + be32(0644) +
                                                  be32(5) + be32(6))));
  EXPECT_EQ(s.attrs.flags, 12u);
  EXPECT_EQ(s.attrs.permissions, 0644u);
  EXPECT_EQ(s.attrs.atime, 5u);
  EXPECT_EQ(s.attrs.mtime, 6u);
}

TEST(SftpCodec, TruncatedFrames) {
  EXPECT_EQ(error_of([] { decode_packet(byte_buffer{0, 0, 0, 2, 1, 0}); }), errc::truncated_frame);
  EXPECT_EQ(error_of([] { decode_packet(byte_buffer{0, 0}); }), errc::truncated_frame);
  // Declared length longer than the buffer.
  EXPECT_EQ(error_of([] { decode_packet(byte_buffer{0, 0, 0, 9, 17, 0, 0, 0, 1}); }),
            errc::truncated_frame);
  // String length runs past the frame.
  EXPECT_EQ(error_of([] { decode_packet(bytes_of(frame_of(17, be32(1) + be32(100) + "ab"))); }),
            errc::truncated_frame);
  EXPECT_EQ(error_of([] { decode_packet(bytes_of(frame_of(99, be32(1)))); }), errc::unknown_type);
  auto h = peek_header(bytes_of(frame_of(99, be32(42))));
  EXPECT_EQ(h.type, 99);
  EXPECT_EQ(h.id, 42u);
}

packet random_packet(std::mt19937_64& rng) {
  static const packet_type types[] = {
      packet_type::init,    packet_type::version,  packet_type::open,     packet_type::close,
      packet_type::read,    packet_type::write,    packet_type::lstat,    packet_type::fstat,
      packet_type::setstat, packet_type::fsetstat, packet_type::opendir,  packet_type::readdir,
      packet_type::remove,  packet_type::mkdir,    packet_type::rmdir,    packet_type::realpath,
      packet_type::stat,    packet_type::rename,   packet_type::readlink, packet_type::symlink,
      packet_type::status,  packet_type::handle,   packet_type::data,     packet_type::name,
      packet_type::attrs,   packet_type::extended, packet_type::extended_reply};
  auto str = [&] {
    std::string s(rng() % 12, '\0');
    for (auto& c : s) c = static_cast<char>(rng());
    return s;
  };
  auto attrs = [&] {
    file_attrs a;
    a.flags = static_cast<std::uint32_t>(rng() & 0xf);
    if (rng() % 4 == 0) a.flags |= attr_extended;
    if (a.flags & attr_size) a.size = rng();
    if (a.flags & attr_uidgid) {
      a.uid = static_cast<std::uint32_t>(rng());
      a.gid = static_cast<std::uint32_t>(rng());
    }
    if (a.flags & attr_permissions) a.permissions = static_cast<std::uint32_t>(rng());
    if (a.flags & attr_acmodtime) {
      a.atime = static_cast<std::uint32_t>(rng());
      a.mtime = static_cast<std::uint32_t>(rng());
    }
    if (a.flags & attr_extended) {
      for (auto i = rng() % 3; i > 0; --i) a.extended.emplace_back(str(), str());
    }
    return a;
  };
  packet p;
  p.type = types[rng() % std::size(types)];
  auto id = static_cast<std::uint32_t>(rng());
  switch (p.type) {
    case packet_type::init:
    case packet_type::version:
      p.version = static_cast<std::uint32_t>(rng());
      for (auto i = rng() % 3; i > 0; --i) p.extensions.emplace_back(str(), str());
      return p;
    default:
      p.id = id;
  }
  switch (p.type) {
    case packet_type::open:
      p.path = str();
      p.pflags = static_cast<std::uint32_t>(rng());
      p.attrs = attrs();
      break;
    case packet_type::close:
    case packet_type::readdir:
    case packet_type::fstat:
    case packet_type::handle:
      p.handle = str();
      break;
    case packet_type::read:
      p.handle = str();
      p.offset = rng();
      p.length = static_cast<std::uint32_t>(rng());
      break;
    case packet_type::write:
      p.handle = str();
      p.offset = rng();
      p.data = bytes_of(str());
      break;
    case packet_type::setstat:
    case packet_type::mkdir:
      p.path = str();
      p.attrs = attrs();
      break;
    case packet_type::fsetstat:
      p.handle = str();
      p.attrs = attrs();
      break;
    case packet_type::rename:
    case packet_type::symlink:
      p.path = str();
      p.path2 = str();
      break;
    case packet_type::status:
      p.code = static_cast<status_code>(rng() % 9);
      p.message = str();
      p.lang = str();
      break;
    case packet_type::data:
    case packet_type::extended_reply:
      p.data = bytes_of(str());
      break;
    case packet_type::name:
      for (auto i = rng() % 4; i > 0; --i) p.names.push_back({str(), str(), attrs()});
      break;
    case packet_type::attrs:
      p.attrs = attrs();
      break;
    case packet_type::extended:
      p.path = str();
      p.data = bytes_of(str());
      break;
    default:
      p.path = str();
  }
  return p;
}

TEST(SftpCodec, RoundTripProperty) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 3000; ++i) {
    packet p = random_packet(rng);
    auto f = encode_packet(p);
    ASSERT_EQ(decode_packet(f), p) << "type " << int(p.type);
    // Every strict prefix is rejected, never misread.
    if (f.size() > 4) {
      auto cut = byte_view(f).first(4 + rng() % (f.size() - 4));
      EXPECT_EQ(error_of([&] { decode_packet(cut); }), errc::truncated_frame);
    }
  }
}

TEST(SftpPaths, Normalize) {
  EXPECT_EQ(normalize_path(""), "/");
  EXPECT_EQ(normalize_path("."), "/");
  EXPECT_EQ(normalize_path("/.."), "/");
  EXPECT_EQ(normalize_path("../../etc/passwd"), "/etc/passwd");
  EXPECT_EQ(normalize_path("a//b/./c/.."), "/a/b");
  EXPECT_EQ(normalize_path("//a/"), "/a");
}

class SftpSession : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new test::scratch_dir("sftp");
    auto src = *dir_ / "src";
    test::write_file(src / "README.txt", "read me\n");
    std::mt19937_64 rng(5);
    big_ = test::random_bytes(rng, 3 * 131072 + 777);
    test::write_file(src / "data/big.bin", big_);
    for (int i = 0; i < 250; ++i) test::write_file(src / ("many/f" + std::to_string(1000 + i)), "x");
    fs::create_symlink("../README.txt", src / "data/link");
    fs::create_symlink("/data", src / "abs");
    fs::create_symlink("loop", src / "loop");
    auto tree = scan_source(src, {});
    pack(tree, {}, *dir_ / "b.sqfs");
    reader_ = bundle_reader::open(*dir_ / "b.sqfs");
  }
  static void TearDownTestSuite() {
    reader_.reset();
    delete dir_;
  }

  void SetUp() override { start({}); }
  void TearDown() override { stop(); }

  void start(limits lim) {
    int sv[2];
    ASSERT_EQ(::socketpair(AF_UNIX, SOCK_STREAM, 0, sv), 0);
    client_fd_ = sv[0];
    server_ = std::thread([this, fd = sv[1], lim] {
      fd_transport t(fd, fd);
      stats_ = serve(*reader_, t, lim);
      ::close(fd);
    });
    client_ = std::make_unique<sftp_test_client>(client_fd_);
  }

  void stop() {
    if (client_fd_ >= 0) {
      ::shutdown(client_fd_, SHUT_RDWR);
      ::close(client_fd_);
      client_fd_ = -1;
    }
    if (server_.joinable()) server_.join();
  }

  static inline test::scratch_dir* dir_ = nullptr;
  static inline std::shared_ptr<bundle_reader> reader_;
  static inline byte_buffer big_;
  int client_fd_ = -1;
  std::thread server_;
  std::unique_ptr<sftp_test_client> client_;
  session_stats stats_;
};

TEST_F(SftpSession, HandshakeAndRealpath) {
  EXPECT_EQ(client_->init(), 3u);
  EXPECT_EQ(client_->realpath("."), "/");
  EXPECT_EQ(client_->realpath("../../.."), "/");
  EXPECT_EQ(client_->realpath("data/../data//big.bin"), "/data/big.bin");
}

TEST_F(SftpSession, RequestsBeforeInitFail) {
  auto r = client_->stat("/");
  EXPECT_EQ(r.type, 101);
  EXPECT_EQ(r.status(), 4u);
}

TEST_F(SftpSession, ReaddirPagesMatchReader) {
  client_->init();
  auto h = sftp_test_client::handle_of(client_->opendir("/many"));
  auto pages = client_->readdir_pages(h);
  ASSERT_EQ(pages.size(), 3u);
  EXPECT_EQ(pages[0].size(), 100u);
  EXPECT_EQ(pages[1].size(), 100u);
  EXPECT_EQ(pages[2].size(), 50u);
  std::vector<std::string> got;
  for (auto& p : pages) {
    for (auto& n : p) got.push_back(n.filename);
  }
  std::vector<std::string> want;
  for (auto& it : reader_->readdir(reader_->resolve("/many"))) want.push_back(it.name);
  EXPECT_EQ(got, want);
  EXPECT_EQ(client_->close(h), 0u);
  EXPECT_EQ(client_->close(h), 4u);

  auto root = sftp_test_client::handle_of(client_->opendir("/"));
  auto rp = client_->readdir_pages(root);
  ASSERT_EQ(rp.size(), 1u);
  ASSERT_EQ(rp[0].size(), 5u);
  EXPECT_EQ(rp[0][0].filename, "README.txt");
  EXPECT_EQ(rp[0][0].attrs.size, 8u);
  EXPECT_EQ(rp[0][0].longname.substr(0, 1), "-");
  EXPECT_NE(rp[0][0].longname.find("README.txt"), std::string::npos);
}

TEST_F(SftpSession, ReadWholeFileAndSlices) {
  client_->init();
  auto h = sftp_test_client::handle_of(client_->open("/README.txt"));
  EXPECT_EQ(client_->read_all(h), "read me\n");
  auto big = sftp_test_client::handle_of(client_->open("/data/big.bin"));
  std::string all = client_->read_all(big, 65536);
  EXPECT_EQ(all, std::string(big_.begin(), big_.end()));
  auto node = reader_->resolve("/data/big.bin");
  std::mt19937_64 rng(8);
  for (int i = 0; i < 200; ++i) {
    std::uint64_t off = rng() % (big_.size() + 10);
    std::uint32_t len = static_cast<std::uint32_t>(rng() % 300000);
    auto r = client_->read(big, off, len);
    if (off >= big_.size()) {
      ASSERT_EQ(r.type, 101);
      EXPECT_EQ(r.status(), 1u);
      continue;
    }
    ASSERT_EQ(r.type, 103);
    auto want = reader_->read(node, off, std::min<std::uint32_t>(len, 262144));
    EXPECT_EQ(test::wire_cursor(r.body).str(), std::string(want.begin(), want.end()));
  }
  auto f = sftp_test_client::attrs_of(client_->fstat(big));
  EXPECT_EQ(f.size, big_.size());
}

TEST_F(SftpSession, StatLstatReadlink) {
  client_->init();
  auto want = reader_->getattr(reader_->resolve("/data/big.bin"));
  auto a = sftp_test_client::attrs_of(client_->stat("/data/big.bin"));
  EXPECT_EQ(a.flags, 15u);
  EXPECT_EQ(a.size, want.size);
  EXPECT_EQ(a.permissions, 0100000u | want.mode);
  EXPECT_EQ(a.mtime, want.mtime);
  EXPECT_EQ(a.uid, want.uid);

  auto l = sftp_test_client::attrs_of(client_->lstat("/data/link"));
  EXPECT_EQ(l.permissions & 0170000, 0120000u);
  auto s = sftp_test_client::attrs_of(client_->stat("/data/link"));
  EXPECT_EQ(s.permissions & 0170000, 0100000u);
  EXPECT_EQ(s.size, 8u);
  EXPECT_EQ(client_->readlink("/data/link"), "../README.txt");

  // Absolute targets resolve inside the virtual root.
  auto abs = sftp_test_client::attrs_of(client_->stat("/abs/big.bin"));
  EXPECT_EQ(abs.size, big_.size());
  EXPECT_EQ(client_->stat("/loop").status(), 2u);
  EXPECT_EQ(client_->call(19, wstr("/README.txt")).status(), 4u);
}

TEST_F(SftpSession, WriteClassDenied) {
  client_->init();
  auto h = sftp_test_client::handle_of(client_->open("/README.txt"));
  std::vector<test::reply> replies = {
      client_->call(6, wstr(h) + be64(0) + wstr("xx")),        // WRITE
      client_->call(9, wstr("/README.txt") + be32(0)),          // SETSTAT
      client_->call(10, wstr(h) + be32(0)),                     // FSETSTAT
      client_->call(13, wstr("/README.txt")),                   // REMOVE
      client_->call(14, wstr("/new") + be32(0)),                // MKDIR
      client_->call(15, wstr("/data")),                         // RMDIR
      client_->call(18, wstr("/README.txt") + wstr("/b")),      // RENAME
      client_->call(20, wstr("/l") + wstr("/README.txt")),      // SYMLINK
      client_->open("/README.txt", 0x02),                       // OPEN for write
      client_->open("/new.txt", 0x01 | 0x08),                   // OPEN create
  };
  for (auto& r : replies) {
    ASSERT_EQ(r.type, 101);
    EXPECT_EQ(r.status(), 3u);
  }
  // Nothing changed.
  EXPECT_EQ(client_->read_all(h), "read me\n");
}

TEST_F(SftpSession, ErrorStatuses) {
  client_->init();
  EXPECT_EQ(client_->stat("/nope").status(), 2u);
  EXPECT_EQ(client_->open("/nope").status(), 2u);
  EXPECT_EQ(client_->opendir("/README.txt/x").status(), 2u);
  EXPECT_EQ(client_->opendir("/README.txt").status(), 4u);
  EXPECT_EQ(client_->open("/data").status(), 4u);
  EXPECT_EQ(client_->stat(std::string("/READ\0ME.txt", 11)).status(), 5u);
  EXPECT_EQ(client_->read("bogus", 0, 10).status(), 4u);
  EXPECT_EQ(client_->call(200, wstr("statvfs@openssh.com") + wstr("/")).status(), 8u);
  EXPECT_TRUE(client_->unknown_ids().empty());
}

TEST_F(SftpSession, UnknownTypeKeepsSessionOpen) {
  client_->init();
  client_->send_raw(frame_of(99, be32(77) + "junk"));
  auto r = client_->expect(77);
  EXPECT_EQ(r.status(), 8u);
  EXPECT_EQ(client_->realpath("/"), "/");
}

TEST_F(SftpSession, MalformedFrameThenClose) {
  client_->init();
  // READ whose handle string claims 50 bytes but carries 2.
  client_->send_raw(frame_of(5, be32(31) + be32(50) + "ab"));
  auto r = client_->expect(31);
  EXPECT_EQ(r.status(), 8u);
  client_->send_raw(frame_of(5, be32(32) + be32(50) + "ab"));
  EXPECT_FALSE(client_->recv_frame().has_value());
  stop();
  EXPECT_TRUE(stats_.closed_on_violation);
  EXPECT_EQ(stats_.violations, 2u);
}

TEST_F(SftpSession, ShortLengthWordClosesWithoutReply) {
  client_->init();
  client_->send_raw(std::string("\0\0\0\2\1\0", 6));
  EXPECT_FALSE(client_->recv_frame().has_value());
}

TEST_F(SftpSession, HandlesNeverReused) {
  client_->init();
  std::set<std::string> seen;
  for (int i = 0; i < 300; ++i) {
    auto h = sftp_test_client::handle_of(client_->open("/README.txt"));
    EXPECT_TRUE(seen.insert(h).second);
    EXPECT_EQ(client_->close(h), 0u);
  }
}

TEST_F(SftpSession, HandleLimit) {
  stop();
  start({.max_read = 1024, .max_handles = 4});
  client_->init();
  std::vector<std::string> hs;
  for (int i = 0; i < 4; ++i) hs.push_back(sftp_test_client::handle_of(client_->opendir("/")));
  EXPECT_EQ(client_->open("/README.txt").status(), 4u);
  EXPECT_EQ(client_->close(hs[0]), 0u);
  auto h = sftp_test_client::handle_of(client_->open("/data/big.bin"));
  auto r = client_->read(h, 0, 100000);
  EXPECT_EQ(test::wire_cursor(r.body).str().size(), 1024u);
  stop();
  EXPECT_EQ(stats_.peak_handles, 4u);
}

TEST_F(SftpSession, SandboxFuzz) {
  client_->init();
  std::mt19937_64 rng(21);
  const char* parts[] = {"..", ".", "", "data", "many", "README.txt", "abs", "x", "/"};
  auto root_names = reader_->readdir(reader_->root());
  for (int i = 0; i < 400; ++i) {
    std::string p;
    for (auto n = rng() % 8; n > 0; --n) {
      p += parts[rng() % std::size(parts)];
      if (rng() % 2) p += '/';
    }
    std::string rp = client_->realpath(p);
    ASSERT_EQ(rp.front(), '/');
    EXPECT_EQ(rp.find("/../"), std::string::npos);
    EXPECT_FALSE(rp.size() >= 3 && rp.substr(rp.size() - 3) == "/..");
    EXPECT_EQ(rp, normalize_path(p));
    // Whatever opens must be the entry the normalised path names.
    auto r = client_->stat(p);
    if (r.type == 105) {
      auto n = reader_->try_resolve(rp);
      if (n && reader_->getattr(*n).kind != file_kind::symlink) {
        EXPECT_EQ(sftp_test_client::attrs_of(r).size, reader_->getattr(*n).size) << p;
      }
    }
  }
  auto h = sftp_test_client::handle_of(client_->opendir("../../../.."));
  auto pages = client_->readdir_pages(h);
  ASSERT_EQ(pages.size(), 1u);
  EXPECT_EQ(pages[0].size(), root_names.size());
  EXPECT_TRUE(client_->unknown_ids().empty());
}

TEST(SftpTcp, ServesOverLoopback) {
  test::scratch_dir d;
  test::write_file(d / "src/hello.txt", "hi\n");
  auto tree = scan_source(d / "src", {});
  pack(tree, {}, d / "b.sqfs");
  auto r = bundle_reader::open(d / "b.sqfs");
  tcp_listener l("127.0.0.1:0");
  ASSERT_NE(l.port(), 0);
  std::thread srv([&] { serve_listener(*r, l, {}, 2); });
  for (int round = 0; round < 2; ++round) {
    int c = ::socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in a{};
    a.sin_family = AF_INET;
    a.sin_port = htons(l.port());
    a.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    ASSERT_EQ(::connect(c, reinterpret_cast<sockaddr*>(&a), sizeof a), 0);
    sftp_test_client cl(c);
    EXPECT_EQ(cl.init(), 3u);
    auto h = sftp_test_client::handle_of(cl.open("/hello.txt"));
    EXPECT_EQ(cl.read_all(h), "hi\n");
    ::close(c);
  }
  srv.join();
}

TEST(SftpTcp, BadAddress) {
  EXPECT_EQ(error_of([] { tcp_listener l("no-port"); }), errc::invalid_argument);
}

} // namespace
} // namespace sqb
