#include "sqb/sftp.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <condition_variable>
#include <cstring>
#include <ctime>
#include <deque>
#include <map>
#include <mutex>
#include <thread>

namespace sqb::sftp {

namespace {

// Big-endian wire writer.
class be_writer {
 public:
  explicit be_writer(byte_buffer& out) : out_(out) {}
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
  }
  void str(byte_view b) {
    u32(static_cast<std::uint32_t>(b.size()));
    out_.insert(out_.end(), b.begin(), b.end());
  }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = n - 1; i >= 0; --i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  byte_buffer& out_;
};

class be_reader {
 public:
  explicit be_reader(byte_view d) : d_(d) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  std::string str() {
    std::uint32_t n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(d_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  byte_buffer blob() {
    std::uint32_t n = u32();
    need(n);
    byte_buffer b(d_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  d_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return b;
  }
  byte_buffer rest() {
    byte_buffer b(d_.begin() + static_cast<std::ptrdiff_t>(pos_), d_.end());
    pos_ = d_.size();
    return b;
  }
  bool done() const noexcept { return pos_ == d_.size(); }

 private:
  void need(std::size_t n) const {
    if (d_.size() - pos_ < n) fail(errc::truncated_frame, "field runs past end of frame");
  }
  std::uint64_t get(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v = (v << 8) | d_[pos_++];
    return v;
  }
  byte_view d_;
  std::size_t pos_ = 0;
};

void put_attrs(be_writer& w, const file_attrs& a) {
  w.u32(a.flags);
  if (a.flags & attr_size) w.u64(a.size);
  if (a.flags & attr_uidgid) {
    w.u32(a.uid);
    w.u32(a.gid);
  }
  if (a.flags & attr_permissions) w.u32(a.permissions);
  if (a.flags & attr_acmodtime) {
    w.u32(a.atime);
    w.u32(a.mtime);
  }
  if (a.flags & attr_extended) {
    w.u32(static_cast<std::uint32_t>(a.extended.size()));
    for (auto& [k, v] : a.extended) {
      w.str(k);
      w.str(v);
    }
  }
}

file_attrs get_attrs(be_reader& r) {
  file_attrs a;
  a.flags = r.u32();
  if (a.flags & attr_size) a.size = r.u64();
  if (a.flags & attr_uidgid) {
    a.uid = r.u32();
    a.gid = r.u32();
  }
  if (a.flags & attr_permissions) a.permissions = r.u32();
  if (a.flags & attr_acmodtime) {
    a.atime = r.u32();
    a.mtime = r.u32();
  }
  if (a.flags & attr_extended) {
    std::uint32_t n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
      std::string k = r.str();
      a.extended.emplace_back(std::move(k), r.str());
    }
  }
  return a;
}

} // namespace

bool is_known_type(std::uint8_t t) noexcept {
  return (t >= 1 && t <= 20) || (t >= 101 && t <= 105) || t == 200 || t == 201;
}

bool is_write_class(packet_type t) noexcept {
  switch (t) {
    case packet_type::write:
    case packet_type::setstat:
    case packet_type::fsetstat:
    case packet_type::remove:
    case packet_type::mkdir:
    case packet_type::rmdir:
    case packet_type::rename:
    case packet_type::symlink:
      return true;
    default:
      return false;
  }
}

file_attrs to_file_attrs(const attr& a) {
  file_attrs f;
  f.flags = attr_size | attr_uidgid | attr_permissions | attr_acmodtime;
  f.size = a.size;
  f.uid = a.uid;
  f.gid = a.gid;
  std::uint32_t type = a.kind == file_kind::directory ? 0040000
                       : a.kind == file_kind::symlink ? 0120000
                                                      : 0100000;
  f.permissions = type | a.mode;
  f.atime = a.mtime;
  f.mtime = a.mtime;
  return f;
}

packet make_status(std::uint32_t id, status_code code, std::string message) {
  packet p;
  p.type = packet_type::status;
  p.id = id;
  p.code = code;
  p.message = std::move(message);
  return p;
}

byte_buffer encode_packet(const packet& p) {
  byte_buffer out(4, 0);
  be_writer w(out);
  w.u8(static_cast<std::uint8_t>(p.type));
  switch (p.type) {
    case packet_type::init:
    case packet_type::version:
      w.u32(p.version);
      for (auto& [k, v] : p.extensions) {
        w.str(k);
        w.str(v);
      }
      break;
    default:
      w.u32(p.id);
      break;
  }
  switch (p.type) {
    case packet_type::init:
    case packet_type::version:
      break;
    case packet_type::open:
      w.str(p.path);
      w.u32(p.pflags);
      put_attrs(w, p.attrs);
      break;
    case packet_type::close:
    case packet_type::readdir:
    case packet_type::fstat:
    case packet_type::handle:
      w.str(p.handle);
      break;
    case packet_type::read:
      w.str(p.handle);
      w.u64(p.offset);
      w.u32(p.length);
      break;
    case packet_type::write:
      w.str(p.handle);
      w.u64(p.offset);
      w.str(byte_view(p.data));
      break;
    case packet_type::lstat:
    case packet_type::stat:
    case packet_type::opendir:
    case packet_type::remove:
    case packet_type::rmdir:
    case packet_type::realpath:
    case packet_type::readlink:
      w.str(p.path);
      break;
    case packet_type::setstat:
    case packet_type::mkdir:
      w.str(p.path);
      put_attrs(w, p.attrs);
      break;
    case packet_type::fsetstat:
      w.str(p.handle);
      put_attrs(w, p.attrs);
      break;
    case packet_type::rename:
    case packet_type::symlink:
      w.str(p.path);
      w.str(p.path2);
      break;
    case packet_type::status:
      w.u32(static_cast<std::uint32_t>(p.code));
      w.str(p.message);
      w.str(p.lang);
      break;
    case packet_type::data:
      w.str(byte_view(p.data));
      break;
    case packet_type::name:
      w.u32(static_cast<std::uint32_t>(p.names.size()));
      for (auto& n : p.names) {
        w.str(n.filename);
        w.str(n.longname);
        put_attrs(w, n.attrs);
      }
      break;
    case packet_type::attrs:
      put_attrs(w, p.attrs);
      break;
    case packet_type::extended:
      w.str(p.path);
      out.insert(out.end(), p.data.begin(), p.data.end());
      break;
    case packet_type::extended_reply:
      out.insert(out.end(), p.data.begin(), p.data.end());
      break;
  }
  std::uint32_t len = static_cast<std::uint32_t>(out.size() - 4);
  for (int i = 0; i < 4; ++i) out[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(len >> (24 - 8 * i));
  return out;
}

frame_header peek_header(byte_view frame) {
  frame_header h;
  if (frame.size() < 4) fail(errc::truncated_frame, "frame shorter than its length word");
  h.length = (std::uint32_t{frame[0]} << 24) | (std::uint32_t{frame[1]} << 16) |
             (std::uint32_t{frame[2]} << 8) | frame[3];
  if (frame.size() >= 5 && h.length >= 1) h.type = frame[4];
  if (frame.size() >= 9 && h.length >= 5) {
    h.id = (std::uint32_t{frame[5]} << 24) | (std::uint32_t{frame[6]} << 16) |
           (std::uint32_t{frame[7]} << 8) | frame[8];
  }
  return h;
}

packet decode_packet(byte_view frame) {
  frame_header h = peek_header(frame);
  if (h.length < 5) {
    fail(errc::truncated_frame, "length word " + std::to_string(h.length) + " below minimum 5");
  }
  if (frame.size() - 4 < h.length) {
    fail(errc::truncated_frame, "frame declares " + std::to_string(h.length) + " bytes, has " +
                                    std::to_string(frame.size() - 4));
  }
  if (!is_known_type(h.type)) {
    fail(errc::unknown_type, "packet type " + std::to_string(h.type));
  }
  be_reader r(frame.subspan(5, h.length - 1));
  packet p;
  p.type = static_cast<packet_type>(h.type);
  switch (p.type) {
    case packet_type::init:
    case packet_type::version:
      p.version = r.u32();
      while (!r.done()) {
        std::string k = r.str();
        p.extensions.emplace_back(std::move(k), r.str());
      }
      return p;
    default:
      p.id = r.u32();
      break;
  }
  switch (p.type) {
    case packet_type::init:
    case packet_type::version:
      break;
    case packet_type::open:
      p.path = r.str();
      p.pflags = r.u32();
      p.attrs = get_attrs(r);
      break;
    case packet_type::close:
    case packet_type::readdir:
    case packet_type::fstat:
    case packet_type::handle:
      p.handle = r.str();
      break;
    case packet_type::read:
      p.handle = r.str();
      p.offset = r.u64();
      p.length = r.u32();
      break;
    case packet_type::write:
      p.handle = r.str();
      p.offset = r.u64();
      p.data = r.blob();
      break;
    case packet_type::lstat:
    case packet_type::stat:
    case packet_type::opendir:
    case packet_type::remove:
    case packet_type::rmdir:
    case packet_type::realpath:
    case packet_type::readlink:
      p.path = r.str();
      break;
    case packet_type::setstat:
    case packet_type::mkdir:
      p.path = r.str();
      p.attrs = get_attrs(r);
      break;
    case packet_type::fsetstat:
      p.handle = r.str();
      p.attrs = get_attrs(r);
      break;
    case packet_type::rename:
    case packet_type::symlink:
      p.path = r.str();
      p.path2 = r.str();
      break;
    case packet_type::status:
      p.code = static_cast<status_code>(r.u32());
      // Some v3 peers omit the trailing strings.
      if (!r.done()) p.message = r.str();
      if (!r.done()) p.lang = r.str();
      break;
    case packet_type::data:
      p.data = r.blob();
      break;
    case packet_type::name: {
      std::uint32_t n = r.u32();
      for (std::uint32_t i = 0; i < n; ++i) {
        name_entry e;
        e.filename = r.str();
        e.longname = r.str();
        e.attrs = get_attrs(r);
        p.names.push_back(std::move(e));
      }
      break;
    }
    case packet_type::attrs:
      p.attrs = get_attrs(r);
      break;
    case packet_type::extended:
      p.path = r.str();
      p.data = r.rest();
      break;
    case packet_type::extended_reply:
      p.data = r.rest();
      break;
  }
  return p;
}

std::size_t fd_transport::read_some(std::uint8_t* out, std::size_t n) {
  for (;;) {
    ssize_t got = ::read(in_, out, n);
    if (got >= 0) return static_cast<std::size_t>(got);
    if (errno == EINTR) continue;
    if (errno == ECONNRESET) return 0;
    fail(errc::io_error, std::string("read: ") + std::strerror(errno));
  }
}

void fd_transport::write_all(const std::uint8_t* data, std::size_t n) {
  while (n > 0) {
    ssize_t put = ::send(out_, data, n, MSG_NOSIGNAL);
    if (put < 0 && errno == ENOTSOCK) put = ::write(out_, data, n);
    if (put < 0) {
      if (errno == EINTR) continue;
      fail(errc::io_error, std::string("write: ") + std::strerror(errno));
    }
    data += put;
    n -= static_cast<std::size_t>(put);
  }
}

std::string normalize_path(std::string_view path) {
  std::vector<std::string_view> parts;
  std::size_t i = 0;
  while (i <= path.size()) {
    std::size_t j = path.find('/', i);
    if (j == std::string_view::npos) j = path.size();
    std::string_view c = path.substr(i, j - i);
    if (c == "..") {
      if (!parts.empty()) parts.pop_back();
    } else if (!c.empty() && c != ".") {
      parts.push_back(c);
    }
    i = j + 1;
  }
  std::string out;
  for (auto c : parts) {
    out += '/';
    out += c;
  }
  return out.empty() ? "/" : out;
}

namespace {

std::string longname(const std::string& name, const attr& a) {
  char perms[11] = "----------";
  perms[0] = a.kind == file_kind::directory ? 'd' : a.kind == file_kind::symlink ? 'l' : '-';
  const char* rwx = "rwxrwxrwx";
  for (int b = 0; b < 9; ++b) {
    if (a.mode & (0400 >> b)) perms[1 + b] = rwx[b];
  }
  if (a.mode & 04000) perms[3] = (a.mode & 0100) ? 's' : 'S';
  if (a.mode & 02000) perms[6] = (a.mode & 0010) ? 's' : 'S';
  if (a.mode & 01000) perms[9] = (a.mode & 0001) ? 't' : 'T';
  std::time_t t = a.mtime;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char date[32];
  std::strftime(date, sizeof date, "%b %e  %Y", &tm);
  char buf[128];
  std::snprintf(buf, sizeof buf, "%s %3u %-8u %-8u %8llu %s ", perms, a.nlink, a.uid, a.gid,
                static_cast<unsigned long long>(a.size), date);
  return buf + name;
}

class session {
 public:
  session(const filesystem& fs, transport& t, const limits& lim) : fs_(fs), t_(t), lim_(lim) {}

  session_stats run() {
    byte_buffer frame;
    while (read_frame(frame)) {
      ++stats_.requests;
      frame_header h = peek_header(frame);
      packet req;
      try {
        req = decode_packet(frame);
      } catch (const error& e) {
        if (e.code() == errc::unknown_type) {
          // Well-formed but unsupported: answer with the id it carried.
          if (h.id) send(make_status(*h.id, status_code::op_unsupported, "unsupported packet type"));
          continue;
        }
        ++stats_.violations;
        if (stats_.violations > 1) {
          stats_.closed_on_violation = true;
          break;
        }
        if (h.id && h.type != static_cast<std::uint8_t>(packet_type::init)) {
          send(make_status(*h.id, status_code::op_unsupported, "malformed packet"));
        }
        continue;
      }
      dispatch(req);
    }
    return stats_;
  }

 private:
  struct open_handle {
    node_id node;
    file_kind kind = file_kind::regular;
    std::uint64_t size = 0;
    std::vector<dir_item> items;
    std::size_t cursor = 0;
  };

  bool read_exact(std::uint8_t* out, std::size_t n, bool at_boundary) {
    std::size_t done = 0;
    while (done < n) {
      std::size_t got = t_.read_some(out + done, n - done);
      if (got == 0) {
        if (at_boundary && done == 0) return false;
        fail(errc::truncated_frame, "stream ended inside a frame");
      }
      done += got;
    }
    return true;
  }

  bool read_frame(byte_buffer& frame) {
    std::uint8_t len[4];
    try {
      if (!read_exact(len, 4, true)) return false;
      std::uint32_t n = (std::uint32_t{len[0]} << 24) | (std::uint32_t{len[1]} << 16) |
                        (std::uint32_t{len[2]} << 8) | len[3];
      if (n < 5 || n > kMaxFrame) {
        // The stream cannot be resynchronised.
        ++stats_.violations;
        stats_.closed_on_violation = true;
        return false;
      }
      frame.assign(4 + std::size_t{n}, 0);
      std::memcpy(frame.data(), len, 4);
      read_exact(frame.data() + 4, n, false);
      stats_.bytes_in += 4 + std::size_t{n};
      return true;
    } catch (const error&) {
      return false;
    }
  }

  void send(const packet& p) {
    byte_buffer out = encode_packet(p);
    t_.write_all(out.data(), out.size());
    stats_.bytes_out += out.size();
  }

  void status(std::uint32_t id, status_code c, std::string msg = {}) {
    send(make_status(id, c, std::move(msg)));
  }

  static bool has_nul(const std::string& s) { return s.find('\0') != std::string::npos; }

  std::optional<node_id> lookup_path(std::string_view path, bool follow_last) {
    return fs_.resolve_follow(path, follow_last);
  }

  open_handle* find_handle(const std::string& h) {
    auto it = handles_.find(h);
    return it == handles_.end() ? nullptr : &it->second;
  }

  std::optional<std::string> add_handle(open_handle h) {
    if (handles_.size() >= lim_.max_handles) return std::nullopt;
    std::string id(8, '\0');
    std::uint64_t n = ++next_handle_;
    for (int i = 0; i < 8; ++i) id[static_cast<std::size_t>(i)] = static_cast<char>(n >> (56 - 8 * i));
    handles_.emplace(id, std::move(h));
    ++stats_.handles_opened;
    stats_.peak_handles = std::max<std::uint64_t>(stats_.peak_handles, handles_.size());
    return id;
  }

  void dispatch(const packet& req) {
    const std::uint32_t id = req.id;
    if (req.type == packet_type::init) {
      packet v;
      v.type = packet_type::version;
      v.version = kProtocolVersion;
      send(v);
      initialised_ = true;
      return;
    }
    if (!initialised_) {
      status(id, status_code::failure, "session not initialised");
      return;
    }
    if (is_write_class(req.type)) {
      ++stats_.denied;
      status(id, status_code::permission_denied, "read-only filesystem");
      return;
    }
    if (has_nul(req.path) || has_nul(req.path2)) {
      status(id, status_code::bad_message, "embedded NUL in path");
      return;
    }
    try {
      handle_request(req);
    } catch (const error& e) {
      status(id, status_code::failure, e.what());
    }
  }

  void reply_attrs(std::uint32_t id, node_id n) {
    packet p;
    p.type = packet_type::attrs;
    p.id = id;
    p.attrs = to_file_attrs(fs_.getattr(n));
    send(p);
  }

  void reply_handle(std::uint32_t id, open_handle h) {
    auto hid = add_handle(std::move(h));
    if (!hid) {
      status(id, status_code::failure, "too many open handles");
      return;
    }
    packet p;
    p.type = packet_type::handle;
    p.id = id;
    p.handle = *hid;
    send(p);
  }

  void reply_single_name(std::uint32_t id, const std::string& name) {
    packet p;
    p.type = packet_type::name;
    p.id = id;
    p.names.push_back({name, name, {}});
    send(p);
  }

  void handle_request(const packet& req) {
    const std::uint32_t id = req.id;
    switch (req.type) {
      case packet_type::realpath:
        reply_single_name(id, normalize_path(req.path));
        return;
      case packet_type::stat:
      case packet_type::lstat: {
        auto n = lookup_path(req.path, req.type == packet_type::stat);
        if (!n) return status(id, status_code::no_such_file, "no such file");
        return reply_attrs(id, *n);
      }
      case packet_type::fstat: {
        auto* h = find_handle(req.handle);
        if (!h) return status(id, status_code::failure, "invalid handle");
        return reply_attrs(id, h->node);
      }
      case packet_type::readlink: {
        auto n = lookup_path(req.path, false);
        if (!n) return status(id, status_code::no_such_file, "no such file");
        if (fs_.getattr(*n).kind != file_kind::symlink) {
          return status(id, status_code::failure, "not a symbolic link");
        }
        return reply_single_name(id, fs_.readlink(*n));
      }
      case packet_type::open: {
        if (req.pflags & ~std::uint32_t{open_read}) {
          ++stats_.denied;
          return status(id, status_code::permission_denied, "read-only filesystem");
        }
        auto n = lookup_path(req.path, true);
        if (!n) return status(id, status_code::no_such_file, "no such file");
        attr a = fs_.getattr(*n);
        if (a.kind != file_kind::regular) return status(id, status_code::failure, "not a regular file");
        open_handle h;
        h.node = *n;
        h.kind = a.kind;
        h.size = a.size;
        return reply_handle(id, std::move(h));
      }
      case packet_type::opendir: {
        auto n = lookup_path(req.path, true);
        if (!n) return status(id, status_code::no_such_file, "no such file");
        if (fs_.getattr(*n).kind != file_kind::directory) {
          return status(id, status_code::failure, "not a directory");
        }
        open_handle h;
        h.node = *n;
        h.kind = file_kind::directory;
        return reply_handle(id, std::move(h));
      }
      case packet_type::readdir: {
        auto* h = find_handle(req.handle);
        if (!h || h->kind != file_kind::directory) return status(id, status_code::failure, "invalid handle");
        if (h->cursor == 0 && h->items.empty()) h->items = fs_.readdir(h->node);
        if (h->cursor >= h->items.size()) {
          h->items.clear();
          h->items.shrink_to_fit();
          h->cursor = SIZE_MAX;
          return status(id, status_code::eof, "end of directory");
        }
        packet p;
        p.type = packet_type::name;
        p.id = id;
        std::size_t end = std::min(h->items.size(), h->cursor + kReaddirPage);
        for (; h->cursor < end; ++h->cursor) {
          const dir_item& it = h->items[h->cursor];
          attr a = fs_.getattr(it.node);
          p.names.push_back({it.name, longname(it.name, a), to_file_attrs(a)});
        }
        return send(p);
      }
      case packet_type::read: {
        auto* h = find_handle(req.handle);
        if (!h || h->kind != file_kind::regular) return status(id, status_code::failure, "invalid handle");
        if (req.offset >= h->size) return status(id, status_code::eof, "end of file");
        std::uint32_t len = std::min(req.length, lim_.max_read);
        packet p;
        p.type = packet_type::data;
        p.id = id;
        p.data = fs_.read(h->node, req.offset, len);
        stats_.data_bytes += p.data.size();
        return send(p);
      }
      case packet_type::close: {
        if (handles_.erase(req.handle) == 0) return status(id, status_code::failure, "invalid handle");
        return status(id, status_code::ok);
      }
      default:
        return status(id, status_code::op_unsupported, "unsupported request");
    }
  }

  const filesystem& fs_;
  transport& t_;
  limits lim_;
  session_stats stats_;
  std::map<std::string, open_handle> handles_;
  std::uint64_t next_handle_ = 0;
  bool initialised_ = false;
};

} // namespace

session_stats serve(const filesystem& fs, transport& t, const limits& lim) {
  session s(fs, t, lim);
  try {
    return s.run();
  } catch (const error& e) {
    // Peer vanished mid-write; the session is over either way.
    if (e.code() != errc::io_error) throw;
    return {};
  }
}

tcp_listener::tcp_listener(const std::string& address) {
  auto colon = address.rfind(':');
  if (colon == std::string::npos) fail(errc::invalid_argument, "listen address must be host:port");
  std::string host = address.substr(0, colon);
  std::string port = address.substr(colon + 1);
  if (host.size() >= 2 && host.front() == '[' && host.back() == ']') host = host.substr(1, host.size() - 2);
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  int rc = ::getaddrinfo(host.empty() ? nullptr : host.c_str(), port.c_str(), &hints, &res);
  if (rc != 0) fail(errc::invalid_argument, "cannot resolve " + address + ": " + gai_strerror(rc));
  std::string last_error = "no usable address";
  for (addrinfo* ai = res; ai; ai = ai->ai_next) {
    int fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
    if (fd < 0) continue;
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(fd, ai->ai_addr, ai->ai_addrlen) == 0 && ::listen(fd, 16) == 0) {
      fd_ = fd;
      break;
    }
    last_error = std::strerror(errno);
    ::close(fd);
  }
  ::freeaddrinfo(res);
  if (fd_ < 0) fail(errc::io_error, "cannot listen on " + address + ": " + last_error);
  sockaddr_storage ss{};
  socklen_t len = sizeof ss;
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&ss), &len);
  port_ = ss.ss_family == AF_INET6 ? ntohs(reinterpret_cast<sockaddr_in6*>(&ss)->sin6_port)
                                   : ntohs(reinterpret_cast<sockaddr_in*>(&ss)->sin_port);
}

tcp_listener::~tcp_listener() { shutdown(); }

void tcp_listener::shutdown() {
  if (fd_ >= 0) {
    ::close(fd_);
    fd_ = -1;
  }
}

int tcp_listener::accept_one() {
  for (;;) {
    int c = ::accept4(fd_, nullptr, nullptr, SOCK_CLOEXEC);
    if (c >= 0) return c;
    if (errno == EINTR || errno == ECONNABORTED) continue;
    fail(errc::io_error, std::string("accept: ") + std::strerror(errno));
  }
}

void serve_listener(const filesystem& fs, tcp_listener& listener, const limits& lim,
                    std::size_t max_sessions, const std::atomic<bool>* stop) {
  std::mutex m;
  std::condition_variable cv;
  std::size_t active = 0;
  std::size_t started = 0;
  while (max_sessions == 0 || started < max_sessions) {
    if (stop && stop->load()) break;
    if (stop) {
      pollfd p{listener.native_handle(), POLLIN, 0};
      if (::poll(&p, 1, 200) <= 0) continue;
    }
    int c = listener.accept_one();
    ++started;
    {
      std::lock_guard lk(m);
      ++active;
    }
    std::thread([&, c] {
      fd_transport t(c, c);
      try {
        serve(fs, t, lim);
      } catch (const std::exception&) {
      }
      ::close(c);
      std::lock_guard lk(m);
      --active;
      cv.notify_all();
    }).detach();
  }
  std::unique_lock lk(m);
  cv.wait(lk, [&] { return active == 0; });
}

} // namespace sqb::sftp
