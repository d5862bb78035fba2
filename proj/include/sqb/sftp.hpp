#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sqb/bytes.hpp"
#include "sqb/vfs.hpp"

namespace sqb::sftp {

inline constexpr std::uint32_t kProtocolVersion = 3;

enum class packet_type : std::uint8_t {
  init = 1,
  version = 2,
  open = 3,
  close = 4,
  read = 5,
  write = 6,
  lstat = 7,
  fstat = 8,
  setstat = 9,
  fsetstat = 10,
  opendir = 11,
  readdir = 12,
  remove = 13,
  mkdir = 14,
  rmdir = 15,
  realpath = 16,
  stat = 17,
  rename = 18,
  readlink = 19,
  symlink = 20,
  status = 101,
  handle = 102,
  data = 103,
  name = 104,
  attrs = 105,
  extended = 200,
  extended_reply = 201,
};

bool is_known_type(std::uint8_t t) noexcept;
/// Requests that would modify the namespace.
bool is_write_class(packet_type t) noexcept;

enum class status_code : std::uint32_t {
  ok = 0,
  eof = 1,
  no_such_file = 2,
  permission_denied = 3,
  failure = 4,
  bad_message = 5,
  no_connection = 6,
  connection_lost = 7,
  op_unsupported = 8,
};

enum open_flags : std::uint32_t {
  open_read = 0x01,
  open_write = 0x02,
  open_append = 0x04,
  open_creat = 0x08,
  open_trunc = 0x10,
  open_excl = 0x20,
};

enum attr_flags : std::uint32_t {
  attr_size = 0x01,
  attr_uidgid = 0x02,
  attr_permissions = 0x04,
  attr_acmodtime = 0x08,
  attr_extended = 0x80000000u,
};

struct file_attrs {
  std::uint32_t flags = 0;
  std::uint64_t size = 0;
  std::uint32_t uid = 0;
  std::uint32_t gid = 0;
  std::uint32_t permissions = 0; ///< includes the S_IFMT type bits
  std::uint32_t atime = 0;
  std::uint32_t mtime = 0;
  std::vector<std::pair<std::string, std::string>> extended;

  friend bool operator==(const file_attrs&, const file_attrs&) = default;
};

/// Full attribute set for a namespace entry.
file_attrs to_file_attrs(const attr& a);

struct name_entry {
  std::string filename;
  std::string longname;
  file_attrs attrs;

  friend bool operator==(const name_entry&, const name_entry&) = default;
};

/// One packet of any type. Only the fields used by `type` take part in the
/// wire encoding:
///   init/version      version, extensions
///   open              path, pflags, attrs
///   close/readdir/fstat  handle
///   read              handle, offset, length
///   write             handle, offset, data
///   lstat/stat/opendir/remove/rmdir/realpath/readlink  path
///   setstat/mkdir     path, attrs
///   fsetstat          handle, attrs
///   rename/symlink    path, path2
///   status            code, message, lang
///   handle            handle
///   data              data
///   name              names
///   attrs             attrs
///   extended          path (request name), data (rest)
///   extended_reply    data
struct packet {
  packet_type type = packet_type::status;
  std::uint32_t id = 0;
  std::uint32_t version = 0;
  std::vector<std::pair<std::string, std::string>> extensions;
  std::string path;
  std::string path2;
  std::string handle;
  std::uint32_t pflags = 0;
  std::uint64_t offset = 0;
  std::uint32_t length = 0;
  file_attrs attrs;
  status_code code = status_code::ok;
  std::string message;
  std::string lang;
  byte_buffer data;
  std::vector<name_entry> names;

  friend bool operator==(const packet&, const packet&) = default;
};

packet make_status(std::uint32_t id, status_code code, std::string message = {});

/// Frame: u32 big-endian length, u8 type, u32 request id (or version),
/// payload.
byte_buffer encode_packet(const packet& p);

/// Decodes exactly one frame. TruncatedFrame when the buffer or any field
/// is short; UnknownType for a type this codec does not know.
packet decode_packet(byte_view frame);

struct frame_header {
  std::uint32_t length = 0;
  std::uint8_t type = 0;
  std::optional<std::uint32_t> id; ///< absent when the frame is too short
};
frame_header peek_header(byte_view frame);

/// Byte stream the server talks over.
class transport {
 public:
  virtual ~transport() = default;
  /// Returns 0 at end of stream.
  virtual std::size_t read_some(std::uint8_t* out, std::size_t n) = 0;
  virtual void write_all(const std::uint8_t* data, std::size_t n) = 0;
};

/// Reads from one descriptor and writes to another (the same for a socket).
class fd_transport final : public transport {
 public:
  fd_transport(int in_fd, int out_fd) : in_(in_fd), out_(out_fd) {}
  std::size_t read_some(std::uint8_t* out, std::size_t n) override;
  void write_all(const std::uint8_t* data, std::size_t n) override;

 private:
  int in_;
  int out_;
};

struct limits {
  std::uint32_t max_read = 262144;
  std::uint32_t max_handles = 256;
};

/// Inbound frames larger than this end the session.
inline constexpr std::uint32_t kMaxFrame = 1u << 20;
inline constexpr std::size_t kReaddirPage = 100;

struct session_stats {
  std::uint64_t requests = 0;
  std::uint64_t bytes_in = 0;
  std::uint64_t bytes_out = 0;
  std::uint64_t data_bytes = 0;
  std::uint64_t handles_opened = 0;
  std::uint64_t peak_handles = 0;
  std::uint64_t denied = 0;
  std::uint64_t violations = 0;
  bool closed_on_violation = false;
};

/// Runs one session until the peer closes the stream or the session is
/// ended for protocol violations.
session_stats serve(const filesystem& fs, transport& t, const limits& lim = {});

/// Lexical normalisation against the virtual root: always absolute, no
/// empty, "." or ".." components, ".." clamped at "/".
std::string normalize_path(std::string_view path);

class tcp_listener {
 public:
  /// `address` is "host:port"; port 0 picks a free one.
  explicit tcp_listener(const std::string& address);
  ~tcp_listener();
  tcp_listener(const tcp_listener&) = delete;
  tcp_listener& operator=(const tcp_listener&) = delete;

  std::uint16_t port() const noexcept { return port_; }
  int native_handle() const noexcept { return fd_; }
  int accept_one();
  void shutdown();

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

/// Accepts connections and runs one session per connection on its own
/// thread. Returns after `max_sessions` sessions have finished (0 means
/// never) or when `stop` becomes true.
void serve_listener(const filesystem& fs, tcp_listener& listener,
                    const limits& lim = {}, std::size_t max_sessions = 0,
                    const std::atomic<bool>* stop = nullptr);

} // namespace sqb::sftp
