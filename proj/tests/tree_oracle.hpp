#pragma once

// Independent comparison of a reader namespace against a host directory.
// Uses lstat(2) and plain file reads on the host side, and only the public
// filesystem interface on the image side.

#include <sys/stat.h>

#include <map>
#include <string>
#include <vector>

#include "sqb/vfs.hpp"
#include "support.hpp"

namespace sqb::test {

struct host_entry {
  file_kind kind;
  std::uint64_t size;
  std::uint16_t mode;
  std::uint32_t uid, gid, mtime;
  std::string payload; // file bytes or symlink target
};

inline std::map<std::string, host_entry> snapshot_host(const fs::path& root) {
  std::map<std::string, host_entry> out;
  auto add = [&](const std::string& rel, const fs::path& p) {
    struct stat st {};
    if (::lstat(p.c_str(), &st) != 0) throw std::runtime_error("lstat " + p.string());
    host_entry e{};
    e.size = static_cast<std::uint64_t>(st.st_size);
    e.mode = static_cast<std::uint16_t>(st.st_mode & 07777);
    e.uid = st.st_uid;
    e.gid = st.st_gid;
    e.mtime = static_cast<std::uint32_t>(st.st_mtim.tv_sec);
    if (S_ISDIR(st.st_mode)) {
      e.kind = file_kind::directory;
    } else if (S_ISLNK(st.st_mode)) {
      e.kind = file_kind::symlink;
      e.payload = fs::read_symlink(p).string();
    } else {
      e.kind = file_kind::regular;
      e.payload = read_file(p);
    }
    out.emplace(rel, std::move(e));
  };
  add("/", root);
  for (auto it = fs::recursive_directory_iterator(root);
       it != fs::recursive_directory_iterator(); ++it) {
    add("/" + it->path().lexically_relative(root).string(), it->path());
  }
  return out;
}

struct compare_options {
  bool check_mtime = true;
  bool check_owner = true;
};

/// Empty result means the namespaces agree. Directory sizes are not
/// compared (the image reports its own listing size).
inline std::vector<std::string> compare_with_host(const filesystem& image,
                                                  const fs::path& root,
                                                  compare_options opts = {}) {
  auto host = snapshot_host(root);
  std::vector<std::string> problems;
  std::map<std::string, bool> seen;
  image.walk([&](const walk_entry& w) {
    if (seen.count(w.path)) {
      problems.push_back(w.path + ": visited twice");
      return;
    }
    seen[w.path] = true;
    auto it = host.find(w.path);
    if (it == host.end()) {
      problems.push_back(w.path + ": not on host");
      return;
    }
    const host_entry& h = it->second;
    const attr& a = w.attributes;
    if (a.kind != h.kind) {
      problems.push_back(w.path + ": kind");
      return;
    }
    if (a.mode != h.mode) problems.push_back(w.path + ": mode");
    if (opts.check_mtime && a.mtime != h.mtime) problems.push_back(w.path + ": mtime");
    if (opts.check_owner && (a.uid != h.uid || a.gid != h.gid)) {
      problems.push_back(w.path + ": owner");
    }
    if (h.kind == file_kind::regular) {
      if (a.size != h.size) {
        problems.push_back(w.path + ": size");
        return;
      }
      auto bytes = image.read(w.node, 0, static_cast<std::uint32_t>(a.size + 1));
      if (std::string(as_chars(bytes)) != h.payload) problems.push_back(w.path + ": content");
    } else if (h.kind == file_kind::symlink) {
      if (image.readlink(w.node) != h.payload) problems.push_back(w.path + ": target");
      if (a.size != h.payload.size()) problems.push_back(w.path + ": link size");
    }
  });
  for (auto& [path, _] : host) {
    if (!seen.count(path)) problems.push_back(path + ": missing from image");
  }
  return problems;
}

} // namespace sqb::test
