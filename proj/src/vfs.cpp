#include "sqb/vfs.hpp"

#include <algorithm>
#include <deque>

#include "sqb/error.hpp"

namespace sqb {

std::string_view kind_name(file_kind k) noexcept {
  switch (k) {
    case file_kind::directory: return "dir";
    case file_kind::regular: return "file";
    case file_kind::symlink: return "symlink";
  }
  return "unknown";
}

std::string join_path(std::string_view parent, std::string_view name) {
  std::string out(parent);
  if (out.empty() || out.back() != '/') {
    out += '/';
  }
  out += name;
  return out;
}

node_id filesystem::resolve(std::string_view path) const {
  std::vector<node_id> trail{root()};
  std::size_t pos = 0;
  while (pos <= path.size()) {
    std::size_t slash = path.find('/', pos);
    if (slash == std::string_view::npos) {
      slash = path.size();
    }
    std::string_view part = path.substr(pos, slash - pos);
    pos = slash + 1;
    if (part.empty() || part == ".") {
      continue;
    }
    if (part == "..") {
      if (trail.size() > 1) {
        trail.pop_back();
      }
      continue;
    }
    trail.push_back(lookup(trail.back(), part));
  }
  return trail.back();
}

std::optional<node_id> filesystem::try_resolve(std::string_view path) const {
  try {
    return resolve(path);
  } catch (const error& e) {
    if (e.code() == errc::not_found || e.code() == errc::not_a_directory) {
      return std::nullopt;
    }
    throw;
  }
}

void filesystem::walk(const std::function<void(const walk_entry&)>& visit) const {
  walker w(*this);
  while (auto e = w.next()) {
    visit(*e);
  }
}

walker::walker(const filesystem& fs) : fs_(fs) {}

std::optional<walk_entry> walker::next() {
  if (!root_done_) {
    root_done_ = true;
    node_id r = fs_.root();
    walk_entry e{"/", fs_.getattr(r), r};
    stack_.push_back(frame{"/", fs_.readdir(r), 0, r});
    return e;
  }
  while (!stack_.empty()) {
    frame& top = stack_.back();
    if (top.next == top.items.size()) {
      stack_.pop_back();
      continue;
    }
    const dir_item& item = top.items[top.next++];
    walk_entry e{join_path(top.path, item.name), fs_.getattr(item.node),
                 item.node};
    if (item.kind == file_kind::directory) {
      for (const frame& f : stack_) {
        if (f.node == item.node) {
          fail(errc::corrupt_image, "directory cycle at " + e.path);
        }
      }
      // `top` may dangle after push_back.
      auto children = fs_.readdir(item.node);
      stack_.push_back(frame{e.path, std::move(children), 0, item.node});
    }
    return e;
  }
  return std::nullopt;
}

std::optional<node_id> filesystem::resolve_follow(std::string_view path, bool follow_last) const {
  std::deque<std::string> pending;
  auto push_front_parts = [&](std::string_view p) {
    std::vector<std::string> parts;
    std::size_t i = 0;
    while (i <= p.size()) {
      std::size_t j = p.find('/', i);
      if (j == std::string_view::npos) j = p.size();
      parts.emplace_back(p.substr(i, j - i));
      i = j + 1;
    }
    pending.insert(pending.begin(), parts.begin(), parts.end());
  };
  push_front_parts(path);
  std::vector<node_id> stack;
  int links = 0;
  while (!pending.empty()) {
    std::string c = std::move(pending.front());
    pending.pop_front();
    if (c.empty() || c == ".") continue;
    if (c == "..") {
      if (!stack.empty()) stack.pop_back();
      continue;
    }
    node_id cur = stack.empty() ? root() : stack.back();
    node_id child;
    try {
      child = lookup(cur, c);
    } catch (const error& e) {
      if (e.code() == errc::not_found || e.code() == errc::not_a_directory) return std::nullopt;
      throw;
    }
    bool last = std::all_of(pending.begin(), pending.end(),
                            [](const std::string& s) { return s.empty() || s == "."; });
    if (getattr(child).kind == file_kind::symlink && (!last || follow_last)) {
      if (++links > 40) return std::nullopt;
      std::string target = readlink(child);
      if (!target.empty() && target[0] == '/') stack.clear();
      push_front_parts(target);
      continue;
    }
    stack.push_back(child);
  }
  return stack.empty() ? root() : stack.back();
}

} // namespace sqb
