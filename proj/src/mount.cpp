#include "sqb/mount.hpp"

#include <dirent.h>
#include <fcntl.h>
#include <linux/fuse.h>
#include <poll.h>
#include <sys/mount.h>
#include <sys/stat.h>
#include <sys/uio.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>
#include <map>
#include <vector>

namespace sqb {

namespace {

constexpr std::uint64_t kTtl = 3600;
constexpr std::uint64_t kRefMask = (std::uint64_t{1} << 48) - 1;
constexpr std::size_t kBufferSize = (1u << 20) + 4096;

int errno_for(const error& e) {
  switch (e.code()) {
    case errc::not_found: return ENOENT;
    case errc::not_a_directory: return ENOTDIR;
    case errc::not_a_file: return EISDIR;
    case errc::not_a_symlink: return EINVAL;
    default: return EIO;
  }
}

std::uint32_t type_bits(file_kind k) {
  switch (k) {
    case file_kind::directory: return S_IFDIR;
    case file_kind::symlink: return S_IFLNK;
    case file_kind::regular: return S_IFREG;
  }
  return S_IFREG;
}

class fuse_session {
 public:
  fuse_session(const filesystem& fs, int fd) : fs_(fs), fd_(fd), root_(fs.root()) {}

  void run(std::atomic<bool>& stop) {
    std::vector<char> buf(kBufferSize);
    while (!stop.load()) {
      pollfd p{fd_, POLLIN, 0};
      int pr = ::poll(&p, 1, 100);
      if (pr < 0 && errno != EINTR) return;
      if (pr <= 0) continue;
      if (p.revents & (POLLERR | POLLHUP | POLLNVAL)) return;
      ssize_t n = ::read(fd_, buf.data(), buf.size());
      if (n < 0) {
        if (errno == EINTR || errno == EAGAIN || errno == ENOENT) continue;
        return; // ENODEV: unmounted
      }
      if (static_cast<std::size_t>(n) < sizeof(fuse_in_header)) continue;
      auto* in = reinterpret_cast<const fuse_in_header*>(buf.data());
      const char* arg = buf.data() + sizeof(fuse_in_header);
      if (!handle(*in, arg, static_cast<std::size_t>(n) - sizeof(fuse_in_header))) return;
    }
  }

 private:
  std::uint64_t encode(node_id n) const {
    if (n == root_) return FUSE_ROOT_ID;
    return ((std::uint64_t{n.layer} + 1) << 48) | (n.ref & kRefMask);
  }

  node_id decode(std::uint64_t id) const {
    if (id == FUSE_ROOT_ID) return root_;
    return {static_cast<std::uint32_t>((id >> 48) - 1), id & kRefMask};
  }

  void fill(fuse_attr& out, std::uint64_t id, const attr& a) const {
    std::memset(&out, 0, sizeof out);
    out.ino = id;
    out.size = a.size;
    out.blocks = (a.size + 511) / 512;
    out.atime = out.mtime = out.ctime = a.mtime;
    out.mode = type_bits(a.kind) | a.mode;
    out.nlink = a.nlink ? a.nlink : 1;
    out.uid = a.uid;
    out.gid = a.gid;
    out.blksize = 4096;
  }

  void reply(const fuse_in_header& in, int err, const void* data = nullptr, std::size_t len = 0) {
    fuse_out_header out{};
    out.unique = in.unique;
    out.error = -err;
    out.len = static_cast<std::uint32_t>(sizeof out + (err ? 0 : len));
    iovec iov[2] = {{&out, sizeof out}, {const_cast<void*>(data), err ? 0 : len}};
    if (::writev(fd_, iov, data && !err ? 2 : 1) < 0) {
      // ENOENT means the request was interrupted; nothing to do.
    }
  }

  template <class T>
  void reply_struct(const fuse_in_header& in, const T& v) {
    reply(in, 0, &v, sizeof v);
  }

  bool handle(const fuse_in_header& in, const char* arg, std::size_t arg_len) {
    try {
      return dispatch(in, arg, arg_len);
    } catch (const error& e) {
      reply(in, errno_for(e));
    } catch (const std::exception&) {
      reply(in, EIO);
    }
    return true;
  }

  bool dispatch(const fuse_in_header& in, const char* arg, std::size_t arg_len) {
    switch (in.opcode) {
      case FUSE_INIT: {
        auto* i = reinterpret_cast<const fuse_init_in*>(arg);
        fuse_init_out o{};
        o.major = FUSE_KERNEL_VERSION;
        o.minor = FUSE_KERNEL_MINOR_VERSION;
        if (i->major < 7) {
          reply(in, EPROTO);
          return false;
        }
        o.max_readahead = i->max_readahead;
        o.flags = i->flags & FUSE_ASYNC_READ;
        o.max_background = 16;
        o.congestion_threshold = 12;
        o.max_write = 4096;
        o.time_gran = 1000000000;
        reply_struct(in, o);
        return true;
      }
      case FUSE_DESTROY:
        reply(in, 0);
        return false;
      case FUSE_FORGET:
      case FUSE_BATCH_FORGET:
      case FUSE_INTERRUPT:
        return true;
      case FUSE_LOOKUP: {
        std::string_view name(arg, strnlen(arg, arg_len));
        node_id child = fs_.lookup(decode(in.nodeid), name);
        fuse_entry_out e{};
        e.nodeid = encode(child);
        e.entry_valid = e.attr_valid = kTtl;
        fill(e.attr, e.nodeid, fs_.getattr(child));
        reply_struct(in, e);
        return true;
      }
      case FUSE_GETATTR: {
        fuse_attr_out o{};
        o.attr_valid = kTtl;
        fill(o.attr, in.nodeid, fs_.getattr(decode(in.nodeid)));
        reply_struct(in, o);
        return true;
      }
      case FUSE_READLINK: {
        std::string t = fs_.readlink(decode(in.nodeid));
        reply(in, 0, t.data(), t.size());
        return true;
      }
      case FUSE_OPEN: {
        auto* o = reinterpret_cast<const fuse_open_in*>(arg);
        if ((o->flags & O_ACCMODE) != O_RDONLY || (o->flags & O_TRUNC)) {
          reply(in, EROFS);
          return true;
        }
        fuse_open_out out{};
        out.open_flags = FOPEN_KEEP_CACHE;
        reply_struct(in, out);
        return true;
      }
      case FUSE_READ: {
        auto* r = reinterpret_cast<const fuse_read_in*>(arg);
        node_id n = decode(in.nodeid);
        attr a = fs_.getattr(n);
        if (r->offset >= a.size) {
          reply(in, 0, "", 0);
          return true;
        }
        byte_buffer data = fs_.read(n, r->offset, r->size);
        reply(in, 0, data.data(), data.size());
        return true;
      }
      case FUSE_OPENDIR: {
        node_id n = decode(in.nodeid);
        fuse_open_out out{};
        out.fh = ++next_fh_;
        dirs_[out.fh] = fs_.readdir(n);
        reply_struct(in, out);
        return true;
      }
      case FUSE_READDIR: {
        auto* r = reinterpret_cast<const fuse_read_in*>(arg);
        auto it = dirs_.find(r->fh);
        if (it == dirs_.end()) {
          reply(in, EBADF);
          return true;
        }
        std::vector<char> out;
        const auto& items = it->second;
        for (std::uint64_t i = r->offset; i < items.size() + 2; ++i) {
          std::string_view name;
          std::uint64_t ino;
          std::uint32_t type;
          if (i == 0) {
            name = ".";
            ino = in.nodeid;
            type = DT_DIR;
          } else if (i == 1) {
            name = "..";
            ino = FUSE_ROOT_ID;
            type = DT_DIR;
          } else {
            const dir_item& d = items[i - 2];
            name = d.name;
            ino = encode(d.node);
            type = type_bits(d.kind) >> 12;
          }
          std::size_t rec = FUSE_DIRENT_ALIGN(FUSE_NAME_OFFSET + name.size());
          if (out.size() + rec > r->size) break;
          std::size_t at = out.size();
          out.resize(at + rec, 0);
          auto* de = reinterpret_cast<fuse_dirent*>(out.data() + at);
          de->ino = ino;
          de->off = i + 1;
          de->namelen = static_cast<std::uint32_t>(name.size());
          de->type = type;
          std::memcpy(out.data() + at + FUSE_NAME_OFFSET, name.data(), name.size());
        }
        reply(in, 0, out.data(), out.size());
        return true;
      }
      case FUSE_RELEASEDIR: {
        auto* r = reinterpret_cast<const fuse_release_in*>(arg);
        dirs_.erase(r->fh);
        reply(in, 0);
        return true;
      }
      case FUSE_RELEASE:
      case FUSE_FLUSH:
      case FUSE_FSYNC:
      case FUSE_FSYNCDIR:
        reply(in, 0);
        return true;
      case FUSE_STATFS: {
        fuse_statfs_out o{};
        o.st.bsize = o.st.frsize = 4096;
        o.st.namelen = 256;
        o.st.files = fs_.entry_count();
        reply_struct(in, o);
        return true;
      }
      case FUSE_ACCESS: {
        auto* a = reinterpret_cast<const fuse_access_in*>(arg);
        reply(in, (a->mask & W_OK) ? EROFS : 0);
        return true;
      }
      case FUSE_SETATTR:
      case FUSE_SYMLINK:
      case FUSE_MKNOD:
      case FUSE_MKDIR:
      case FUSE_UNLINK:
      case FUSE_RMDIR:
      case FUSE_RENAME:
      case FUSE_RENAME2:
      case FUSE_LINK:
      case FUSE_WRITE:
      case FUSE_SETXATTR:
      case FUSE_REMOVEXATTR:
      case FUSE_CREATE:
      case FUSE_FALLOCATE:
      case FUSE_COPY_FILE_RANGE:
        reply(in, EROFS);
        return true;
      default:
        reply(in, ENOSYS);
        return true;
    }
  }

  const filesystem& fs_;
  int fd_;
  node_id root_;
  std::uint64_t next_fh_ = 0;
  std::map<std::uint64_t, std::vector<dir_item>> dirs_;
};

void check_mountpoint(const std::filesystem::path& mp) {
  struct stat st{};
  if (::stat(mp.c_str(), &st) != 0) fail(errc::mount_denied, mp.string() + ": " + std::strerror(errno));
  if (!S_ISDIR(st.st_mode)) fail(errc::mount_denied, mp.string() + " is not a directory");
  DIR* d = ::opendir(mp.c_str());
  if (!d) fail(errc::mount_denied, mp.string() + ": " + std::strerror(errno));
  bool empty = true;
  while (dirent* e = ::readdir(d)) {
    if (std::strcmp(e->d_name, ".") != 0 && std::strcmp(e->d_name, "..") != 0) {
      empty = false;
      break;
    }
  }
  ::closedir(d);
  if (!empty) fail(errc::mount_denied, mp.string() + " is not empty");
}

int open_device() {
  int fd = ::open("/dev/fuse", O_RDWR | O_CLOEXEC);
  if (fd < 0) {
    fail(errc::facility_unavailable,
         std::string("/dev/fuse: ") + std::strerror(errno) + "; use `serve` instead");
  }
  return fd;
}

void do_mount(int fd, const std::filesystem::path& mp, const mount_options& opts) {
  std::string data = "fd=" + std::to_string(fd) + ",rootmode=40000,user_id=" +
                     std::to_string(::getuid()) + ",group_id=" + std::to_string(::getgid()) +
                     ",default_permissions";
  if (opts.allow_other) data += ",allow_other";
  if (::mount(opts.fsname.c_str(), mp.c_str(), "fuse.sqb", MS_RDONLY | MS_NOSUID | MS_NODEV,
              data.c_str()) != 0) {
    int e = errno;
    if (e == EPERM || e == ENODEV || e == EACCES) {
      fail(errc::facility_unavailable,
           std::string("mount: ") + std::strerror(e) + "; use `serve` instead");
    }
    fail(errc::mount_denied, mp.string() + ": " + std::strerror(e));
  }
}

} // namespace

mount_handle::~mount_handle() {
  unmount();
  if (loop_.joinable()) loop_.join();
  if (fd_ >= 0) ::close(fd_);
}

void mount_handle::unmount() {
  if (mounted_) {
    ::umount2(mountpoint_.c_str(), MNT_DETACH);
    mounted_ = false;
  }
  stop_->store(true);
}

void mount_handle::wait() {
  if (loop_.joinable()) loop_.join();
  mounted_ = false;
}

std::unique_ptr<mount_handle> mount(const filesystem& fs, const std::filesystem::path& mountpoint,
                                    bool foreground, const mount_options& opts) {
  check_mountpoint(mountpoint);
  int fd = open_device();
  try {
    do_mount(fd, mountpoint, opts);
  } catch (...) {
    ::close(fd);
    throw;
  }
  std::unique_ptr<mount_handle> h(new mount_handle);
  h->mountpoint_ = std::filesystem::absolute(mountpoint);
  h->fd_ = fd;
  h->mounted_ = true;
  if (foreground) {
    fuse_session(fs, fd).run(*h->stop_);
    h->unmount();
  } else {
    h->loop_ = std::thread([&fs, fd, stop = h->stop_] { fuse_session(fs, fd).run(*stop); });
  }
  return h;
}

bool mount_supported(std::string* why) {
  char tmpl[] = "/tmp/sqb-probe-XXXXXX";
  if (!::mkdtemp(tmpl)) {
    if (why) *why = std::strerror(errno);
    return false;
  }
  bool ok = true;
  try {
    int fd = open_device();
    try {
      do_mount(fd, tmpl, {});
      ::umount2(tmpl, MNT_DETACH);
    } catch (...) {
      ::close(fd);
      throw;
    }
    ::close(fd);
  } catch (const error& e) {
    ok = false;
    if (why) *why = e.what();
  }
  ::rmdir(tmpl);
  return ok;
}

} // namespace sqb
