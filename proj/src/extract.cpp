#include "sqb/extract.hpp"

#include <cerrno>
#include <cstring>
#include <string>
#include <vector>

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include "sqb/error.hpp"

namespace sqb {

namespace fs = std::filesystem;

namespace {

constexpr std::uint32_t kChunk = 1u << 20;

[[noreturn]] void sys_fail(const std::string& what) {
  int e = errno;
  fail(e == ENOSPC || e == EDQUOT ? errc::disk_full : errc::io_error,
       what + ": " + std::strerror(e));
}

std::vector<std::string> components(std::string_view path) {
  std::vector<std::string> parts;
  std::size_t pos = 0;
  while (pos <= path.size()) {
    std::size_t slash = path.find('/', pos);
    if (slash == std::string_view::npos) slash = path.size();
    std::string_view part = path.substr(pos, slash - pos);
    pos = slash + 1;
    if (part.empty() || part == ".") continue;
    if (part == "..") {
      if (!parts.empty()) parts.pop_back();
      continue;
    }
    parts.emplace_back(part);
  }
  return parts;
}

struct job {
  node_id node;
  attr a;
  fs::path dest;
};

// Collects every destination in pre-order so collisions are found before
// anything is written.
void plan(const filesystem& fs, node_id node, const fs::path& dest, std::vector<job>& out) {
  attr a = fs.getattr(node);
  out.push_back({node, a, dest});
  if (a.kind != file_kind::directory) return;
  for (auto& item : fs.readdir(node)) plan(fs, item.node, dest / item.name, out);
}

bool existing(const fs::path& p, struct stat& st) {
  if (::lstat(p.c_str(), &st) == 0) return true;
  if (errno != ENOENT) sys_fail(p.string());
  return false;
}

void set_times(const fs::path& p, std::uint32_t mtime) {
  struct timespec ts[2];
  ts[0].tv_sec = mtime;
  ts[0].tv_nsec = 0;
  ts[1] = ts[0];
  if (::utimensat(AT_FDCWD, p.c_str(), ts, AT_SYMLINK_NOFOLLOW) != 0) sys_fail(p.string());
}

void write_file(const filesystem& fs, const job& j) {
  int fd = ::open(j.dest.c_str(), O_WRONLY | O_CREAT | O_EXCL | O_CLOEXEC, 0600);
  if (fd < 0) sys_fail(j.dest.string());
  try {
    for (std::uint64_t off = 0; off < j.a.size;) {
      auto chunk = fs.read(j.node, off, kChunk);
      if (chunk.empty()) fail(errc::corrupt_image, j.dest.string() + ": short read");
      const std::uint8_t* p = chunk.data();
      std::size_t left = chunk.size();
      while (left > 0) {
        ssize_t n = ::write(fd, p, left);
        if (n < 0) {
          if (errno == EINTR) continue;
          sys_fail(j.dest.string());
        }
        p += n;
        left -= std::size_t(n);
      }
      off += chunk.size();
    }
    if (::fchmod(fd, j.a.mode & 07777) != 0) sys_fail(j.dest.string());
  } catch (...) {
    ::close(fd);
    throw;
  }
  if (::close(fd) != 0) sys_fail(j.dest.string());
}

} // namespace

std::uint64_t extract(const filesystem& fs, std::string_view inner, const fs::path& out,
                      const extract_options& opts) {
  auto parts = components(inner);
  node_id start = fs.resolve(inner);

  std::vector<job> jobs;
  plan(fs, start, parts.empty() ? out : out / parts.back(), jobs);

  if (!parts.empty()) {
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) fail(errc::io_error, out.string() + ": " + ec.message());
  }

  // Preflight: directories merge into directories, everything else collides.
  std::vector<bool> present(jobs.size(), false);
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    struct stat st{};
    if (!existing(jobs[i].dest, st)) continue;
    present[i] = true;
    bool mergeable = jobs[i].a.kind == file_kind::directory && S_ISDIR(st.st_mode);
    if (!mergeable && !opts.force) {
      fail(errc::already_exists, jobs[i].dest.string() + " exists (use --force to overwrite)");
    }
  }

  bool chown_ok = opts.preserve_owner && ::geteuid() == 0;
  std::vector<const job*> dirs;
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const job& j = jobs[i];
    if (present[i]) {
      struct stat st{};
      if (existing(j.dest, st) &&
          !(j.a.kind == file_kind::directory && S_ISDIR(st.st_mode))) {
        std::error_code ec;
        fs::remove_all(j.dest, ec);
        if (ec) fail(errc::io_error, j.dest.string() + ": " + ec.message());
      }
    }
    switch (j.a.kind) {
      case file_kind::directory: {
        if (::mkdir(j.dest.c_str(), 0700) != 0 && errno != EEXIST) sys_fail(j.dest.string());
        // Owner-writable until the contents are in; final mode comes last.
        if (::chmod(j.dest.c_str(), 0700) != 0) sys_fail(j.dest.string());
        dirs.push_back(&j);
        break;
      }
      case file_kind::regular:
        write_file(fs, j);
        set_times(j.dest, j.a.mtime);
        break;
      case file_kind::symlink:
        if (::symlink(fs.readlink(j.node).c_str(), j.dest.c_str()) != 0) sys_fail(j.dest.string());
        set_times(j.dest, j.a.mtime);
        break;
    }
    if (chown_ok && ::lchown(j.dest.c_str(), j.a.uid, j.a.gid) != 0) sys_fail(j.dest.string());
    if (chown_ok && j.a.kind == file_kind::regular &&
        ::chmod(j.dest.c_str(), j.a.mode & 07777) != 0) {
      sys_fail(j.dest.string());  // chown clears setuid bits
    }
  }

  // Deepest first so setting a parent's mtime is the last touch it gets.
  for (auto it = dirs.rbegin(); it != dirs.rend(); ++it) {
    const job& j = **it;
    if (::chmod(j.dest.c_str(), j.a.mode & 07777) != 0) sys_fail(j.dest.string());
    set_times(j.dest, j.a.mtime);
  }
  return jobs.size();
}

} // namespace sqb
