#include "sqb/packer.hpp"

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cstring>
#include <ctime>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <cstdio>
#include <thread>
#include <unordered_map>

#include <dirent.h>
#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include "sqb/codec.hpp"
#include "sqb/digest.hpp"
#include "sqb/format.hpp"
#include "sqb/reader.hpp"

namespace sqb {

namespace fs = std::filesystem;
using format::inode_kind;
using format::inode_record;
using format::inode_ref;

void validate(const pack_options& opts) {
  format::block_log_for(opts.block_size);
  require_supported_compressor(opts.codec_id);
  if (opts.parallel_workers == 0) {
    fail(errc::invalid_argument, "parallel_workers must be at least 1");
  }
}

// ---------------------------------------------------------------------------
// Scanning

namespace {

std::uint32_t clamp_time(std::int64_t t) {
  if (t < 0) return 0;
  if (t > std::numeric_limits<std::uint32_t>::max()) {
    return std::numeric_limits<std::uint32_t>::max();
  }
  return static_cast<std::uint32_t>(t);
}

std::string read_link_target(const std::string& path, std::size_t hint) {
  std::string buf(std::max<std::size_t>(hint, 64) + 1, '\0');
  for (;;) {
    ssize_t n = ::readlink(path.c_str(), buf.data(), buf.size());
    if (n < 0) {
      fail(errc::unreadable, path + ": " + std::strerror(errno));
    }
    if (static_cast<std::size_t>(n) < buf.size()) {
      buf.resize(static_cast<std::size_t>(n));
      return buf;
    }
    buf.resize(buf.size() * 2);
  }
}

class scanner {
 public:
  scanner(const pack_options& opts, source_tree& tree) : opts_(opts), tree_(tree) {}

  void scan_dir(std::uint32_t index, const std::string& fs_path,
                const std::optional<std::vector<std::string>>* filter) {
    std::vector<std::string> names = list_names(fs_path);
    if (filter != nullptr && filter->has_value()) {
      std::vector<std::string> keep;
      for (const auto& want : **filter) {
        if (!std::binary_search(names.begin(), names.end(), want)) {
          fail(errc::not_found, fs_path + "/" + want);
        }
        keep.push_back(want);
      }
      std::sort(keep.begin(), keep.end());
      keep.erase(std::unique(keep.begin(), keep.end()), keep.end());
      names = std::move(keep);
    }

    for (const auto& name : names) {
      std::string child_fs = fs_path + "/" + name;
      if (name.size() > format::kMaxNameLength) {
        fail(errc::name_too_long, child_fs);
      }
      struct stat st{};
      stat_node(child_fs, st);

      source_node node;
      node.name = name;
      node.path = join_path(tree_.nodes[index].path, name);
      node.depth = tree_.nodes[index].depth + 1;
      node.parent = index;
      fill_meta(node, st);
      if (S_ISDIR(st.st_mode)) {
        node.kind = file_kind::directory;
      } else if (S_ISREG(st.st_mode)) {
        node.kind = file_kind::regular;
        node.size = static_cast<std::uint64_t>(st.st_size);
      } else if (S_ISLNK(st.st_mode)) {
        node.kind = file_kind::symlink;
        node.target = read_link_target(child_fs, static_cast<std::size_t>(st.st_size));
        node.size = node.target.size();
      } else {
        fail(errc::unsupported_node,
             child_fs + " (device, fifo or socket cannot be packed)");
      }

      auto child = static_cast<std::uint32_t>(tree_.nodes.size());
      tree_.nodes.push_back(std::move(node));
      tree_.nodes[index].children.push_back(child);
      account(tree_.nodes[child]);

      if (S_ISDIR(st.st_mode)) {
        auto id = std::make_pair(st.st_dev, st.st_ino);
        if (std::find(active_.begin(), active_.end(), id) != active_.end()) {
          fail(errc::unsupported_node, child_fs + " (directory cycle)");
        }
        active_.push_back(id);
        scan_dir(child, child_fs, nullptr);
        active_.pop_back();
      }
    }
  }

  void fill_meta(source_node& node, const struct stat& st) const {
    node.mode = static_cast<std::uint16_t>(st.st_mode & 07777);
    node.uid = st.st_uid;
    node.gid = st.st_gid;
    node.mtime = clamp_time(st.st_mtim.tv_sec);
  }

  void account(const source_node& n) {
    switch (n.kind) {
      case file_kind::directory: ++tree_.directories; break;
      case file_kind::regular:
        ++tree_.files;
        tree_.total_bytes += n.size;
        break;
      case file_kind::symlink: ++tree_.symlinks; break;
    }
    tree_.max_depth = std::max(tree_.max_depth, n.depth);
  }

  std::vector<std::pair<dev_t, ino_t>> active_;

 private:
  std::vector<std::string> list_names(const std::string& fs_path) {
    DIR* d = ::opendir(fs_path.c_str());
    if (d == nullptr) {
      int e = errno;
      fail(e == EACCES ? errc::unreadable : errc::io_error,
           fs_path + ": " + std::strerror(e));
    }
    std::vector<std::string> names;
    errno = 0;
    while (dirent* ent = ::readdir(d)) {
      std::string_view n = ent->d_name;
      if (n != "." && n != "..") {
        names.emplace_back(n);
      }
    }
    int e = errno;
    ::closedir(d);
    if (e != 0) {
      fail(errc::io_error, fs_path + ": " + std::strerror(e));
    }
    std::sort(names.begin(), names.end());
    return names;
  }

  void stat_node(const std::string& path, struct stat& st) const {
    if (opts_.follow_symlinks) {
      if (::stat(path.c_str(), &st) == 0) {
        return;
      }
      int e = errno;
      struct stat lst{};
      if (::lstat(path.c_str(), &lst) == 0 && S_ISLNK(lst.st_mode)) {
        fail(errc::broken_symlink, path + ": " + std::strerror(e));
      }
      fail(e == EACCES ? errc::unreadable : errc::io_error,
           path + ": " + std::strerror(e));
    }
    if (::lstat(path.c_str(), &st) != 0) {
      int e = errno;
      fail(e == EACCES ? errc::unreadable : errc::io_error,
           path + ": " + std::strerror(e));
    }
  }

  const pack_options& opts_;
  source_tree& tree_;
};

void number_post_order(source_tree& tree) {
  // Iterative post-order so deep trees cannot exhaust the stack.
  std::uint32_t next = 1;
  std::vector<std::pair<std::uint32_t, std::size_t>> stack{{0, 0}};
  while (!stack.empty()) {
    auto& [idx, child] = stack.back();
    auto& node = tree.nodes[idx];
    if (child < node.children.size()) {
      std::uint32_t c = node.children[child++];
      stack.emplace_back(c, 0);
    } else {
      node.inode_number = next++;
      stack.pop_back();
    }
  }
}

} // namespace

source_tree scan_source(const fs::path& root, const pack_options& opts,
                        const std::optional<std::vector<std::string>>& members) {
  source_tree tree;
  tree.root = root;
  struct stat st{};
  if (::stat(root.c_str(), &st) != 0) {
    int e = errno;
    fail(e == EACCES ? errc::unreadable : errc::io_error,
         root.string() + ": " + std::strerror(e));
  }
  if (!S_ISDIR(st.st_mode)) {
    fail(errc::not_a_directory, root.string());
  }
  scanner sc(opts, tree);
  source_node r;
  r.path = "/";
  r.kind = file_kind::directory;
  sc.fill_meta(r, st);
  tree.nodes.push_back(std::move(r));
  sc.account(tree.nodes[0]);
  sc.active_.emplace_back(st.st_dev, st.st_ino);
  sc.scan_dir(0, root.string(), &members);
  if (tree.nodes.size() > std::numeric_limits<std::uint32_t>::max() - 1) {
    fail(errc::invalid_argument, "too many entries for one image");
  }
  number_post_order(tree);
  return tree;
}

// ---------------------------------------------------------------------------
// Packing

namespace {

class image_file {
 public:
  explicit image_file(const fs::path& path) : path_(path) {
    out_.exceptions(std::ios::failbit | std::ios::badbit);
    try {
      out_.open(path, std::ios::binary | std::ios::trunc);
    } catch (const std::ios::failure&) {
      fail(errc::io_error, path.string() + ": cannot create");
    }
  }

  void write(byte_view b) {
    try {
      out_.write(reinterpret_cast<const char*>(b.data()),
                 static_cast<std::streamsize>(b.size()));
    } catch (const std::ios::failure&) {
      fail(errc::io_error, path_.string() + ": write failed");
    }
    pos_ += b.size();
  }

  void write_at_start(byte_view b) {
    try {
      out_.seekp(0);
      out_.write(reinterpret_cast<const char*>(b.data()),
                 static_cast<std::streamsize>(b.size()));
      out_.close();
    } catch (const std::ios::failure&) {
      fail(errc::io_error, path_.string() + ": write failed");
    }
  }

  std::uint64_t position() const noexcept { return pos_; }

 private:
  fs::path path_;
  std::ofstream out_;
  std::uint64_t pos_ = 0;
};

struct file_layout {
  std::uint64_t data_start = 0;
  std::vector<std::uint32_t> words;
  std::uint64_t sparse = 0;
};

struct block_job {
  std::uint32_t node = 0;
  bool begin = false; ///< marks where a file's data starts
  byte_buffer data;
  byte_buffer packed;
  std::uint32_t word = 0;
  bool sparse = false;
};

void compress_job(block_job& job, std::uint16_t codec) {
  if (job.begin) {
    return;
  }
  bool zeros = std::all_of(job.data.begin(), job.data.end(),
                           [](std::uint8_t b) { return b == 0; });
  if (zeros) {
    job.sparse = true;
    job.word = 0;
    return;
  }
  byte_buffer packed = codec_compress(codec, job.data);
  if (packed.size() < job.data.size()) {
    job.word = static_cast<std::uint32_t>(packed.size());
    job.packed = std::move(packed);
  } else {
    job.word = static_cast<std::uint32_t>(job.data.size()) |
               format::kDataUncompressed;
  }
}

class data_pipeline {
 public:
  data_pipeline(const pack_options& opts, image_file& out,
                std::vector<file_layout>& layouts)
      : opts_(opts), out_(out), layouts_(layouts),
        window_(std::max<std::size_t>(16, std::size_t{opts.parallel_workers} * 16)) {}

  void push(block_job job) {
    jobs_.push_back(std::move(job));
    if (jobs_.size() >= window_) {
      flush();
    }
  }

  void flush() {
    unsigned workers = std::min<unsigned>(
        opts_.parallel_workers, static_cast<unsigned>(jobs_.size()));
    if (workers <= 1) {
      for (auto& j : jobs_) compress_job(j, opts_.codec_id);
    } else {
      std::atomic<std::size_t> next{0};
      std::exception_ptr failure;
      std::mutex failure_mutex;
      {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < workers; ++w) {
          pool.emplace_back([&] {
            try {
              for (std::size_t i = next++; i < jobs_.size(); i = next++) {
                compress_job(jobs_[i], opts_.codec_id);
              }
            } catch (...) {
              std::lock_guard lock(failure_mutex);
              failure = std::current_exception();
            }
          });
        }
      }
      if (failure) std::rethrow_exception(failure);
    }
    // Emit strictly in submission order so output is independent of the
    // worker count.
    for (auto& j : jobs_) {
      file_layout& l = layouts_[j.node];
      if (j.begin) {
        l.data_start = out_.position();
      } else if (j.sparse) {
        l.words.push_back(0);
        l.sparse += j.data.size();
      } else {
        out_.write(j.packed.empty() ? byte_view(j.data) : byte_view(j.packed));
        l.words.push_back(j.word);
      }
    }
    jobs_.clear();
  }

 private:
  const pack_options& opts_;
  image_file& out_;
  std::vector<file_layout>& layouts_;
  std::size_t window_;
  std::vector<block_job> jobs_;
};

std::size_t read_full(int fd, std::uint8_t* buf, std::size_t n) {
  std::size_t done = 0;
  while (done < n) {
    ssize_t r = ::read(fd, buf + done, n - done);
    if (r < 0) {
      if (errno == EINTR) continue;
      fail(errc::io_error, std::strerror(errno));
    }
    if (r == 0) break;
    done += static_cast<std::size_t>(r);
  }
  return done;
}

void stream_file(source_node& node, const fs::path& fs_path,
                 std::uint32_t index, const pack_options& opts,
                 data_pipeline& pipe, std::vector<std::string>& drifted) {
  int fd = ::open(fs_path.c_str(), O_RDONLY | O_CLOEXEC);
  if (fd < 0) {
    int e = errno;
    fail(e == EACCES ? errc::unreadable : errc::io_error,
         fs_path.string() + ": " + std::strerror(e));
  }
  struct stat st{};
  ::fstat(fd, &st);
  bool drift = static_cast<std::uint64_t>(st.st_size) != node.size ||
               clamp_time(st.st_mtim.tv_sec) != node.mtime;

  pipe.push(block_job{index, true, {}, {}, 0, false});
  std::uint64_t total = 0;
  try {
    for (;;) {
      byte_buffer buf(opts.block_size);
      std::size_t n = read_full(fd, buf.data(), buf.size());
      if (n == 0) break;
      buf.resize(n);
      total += n;
      pipe.push(block_job{index, false, std::move(buf), {}, 0, false});
      if (n < opts.block_size) break;
    }
  } catch (const error& e) {
    ::close(fd);
    fail(e.code(), fs_path.string() + ": " + e.what());
  }
  ::close(fd);

  if (drift || total != node.size) {
    drifted.push_back(node.path);
    node.size = total;
    node.mtime = clamp_time(st.st_mtim.tv_sec);
  }
}

std::uint16_t entry_type_of(file_kind k) {
  switch (k) {
    case file_kind::directory: return 1;
    case file_kind::regular: return 2;
    case file_kind::symlink: return 3;
  }
  return 0;
}

fs::path node_fs_path(const source_tree& tree, const source_node& node) {
  if (node.path == "/") return tree.root;
  return tree.root / node.path.substr(1);
}

} // namespace

pack_summary pack(source_tree& tree, const pack_options& opts,
                  const fs::path& out) {
  validate(opts);
  if (tree.nodes.empty() || tree.nodes[0].kind != file_kind::directory) {
    fail(errc::not_a_directory, "source tree has no root directory");
  }
  const auto inode_count = static_cast<std::uint32_t>(tree.nodes.size());
  const std::uint16_t codec = opts.codec_id;

  fs::path tmp = out;
  tmp += ".partial";
  pack_summary summary;
  std::vector<file_layout> layouts(tree.nodes.size());

  {
    image_file img(tmp);
    img.write(byte_buffer(format::kSuperblockSize, 0));

    // Data blocks, in node order.
    data_pipeline pipe(opts, img, layouts);
    for (std::uint32_t i = 0; i < tree.nodes.size(); ++i) {
      auto& node = tree.nodes[i];
      if (node.kind == file_kind::regular) {
        stream_file(node, node_fs_path(tree, node), i, opts, pipe,
                    summary.drifted);
        summary.source_bytes += node.size;
      }
    }
    pipe.flush();

    // ID table, in order of first appearance.
    std::vector<std::uint32_t> ids;
    std::unordered_map<std::uint32_t, std::uint16_t> id_index;
    auto intern = [&](std::uint32_t id) {
      auto [it, fresh] = id_index.try_emplace(id, static_cast<std::uint16_t>(ids.size()));
      if (fresh) {
        if (ids.size() == 0xffff) {
          fail(errc::invalid_argument, "more than 65535 distinct uid/gid values");
        }
        ids.push_back(id);
      }
      return it->second;
    };
    for (const auto& n : tree.nodes) {
      intern(n.uid);
      intern(n.gid);
    }

    // Inodes and listings, children before parents.
    format::metadata_writer inodes(codec);
    format::metadata_writer dirs(codec);
    std::vector<inode_ref> refs(tree.nodes.size());

    std::vector<std::pair<std::uint32_t, std::size_t>> stack{{0, 0}};
    while (!stack.empty()) {
      auto& [idx, child] = stack.back();
      const source_node& node = tree.nodes[idx];
      if (child < node.children.size()) {
        std::uint32_t c = node.children[child++];
        stack.emplace_back(c, 0);
        continue;
      }
      std::uint32_t i = idx;
      stack.pop_back();

      inode_record rec;
      rec.mode = node.mode;
      rec.uid_index = id_index.at(node.uid);
      rec.gid_index = id_index.at(node.gid);
      rec.mtime = opts.force_mtime.value_or(node.mtime);
      rec.inode_number = node.inode_number;

      switch (node.kind) {
        case file_kind::directory: {
          std::vector<format::dir_entry> entries;
          entries.reserve(node.children.size());
          std::uint32_t subdirs = 0;
          for (auto c : node.children) {
            const auto& cn = tree.nodes[c];
            entries.push_back({cn.name, refs[c], cn.inode_number,
                               entry_type_of(cn.kind)});
            subdirs += cn.kind == file_kind::directory ? 1 : 0;
          }
          auto listing = format::encode_dir_listing(entries);
          inode_ref at = dirs.next_ref();
          if (!listing.bytes.empty()) {
            dirs.append(listing.bytes);
          }
          if (at.block_start > 0xffffffffu) {
            fail(errc::invalid_argument, "directory table exceeds 4 GiB");
          }
          format::dir_payload d;
          d.dir_block_start = static_cast<std::uint32_t>(at.block_start);
          d.dir_block_offset = at.offset;
          d.listing_size = listing.listing_size;
          d.link_count = 2 + subdirs;
          d.parent_inode = i == 0 ? inode_count + 1
                                  : tree.nodes[node.parent].inode_number;
          rec.kind = d.listing_size > 0xffff ? inode_kind::ext_dir
                                             : inode_kind::basic_dir;
          rec.payload = d;
          break;
        }
        case file_kind::regular: {
          auto& l = layouts[i];
          format::file_payload f;
          f.data_start = l.data_start;
          f.file_size = node.size;
          f.block_sizes = std::move(l.words);
          bool wide = f.file_size > 0xffffffffu || f.data_start > 0xffffffffu;
          rec.kind = wide ? inode_kind::ext_file : inode_kind::basic_file;
          if (wide) {
            f.sparse = l.sparse;
            f.link_count = 1;
          }
          rec.payload = std::move(f);
          break;
        }
        case file_kind::symlink:
          rec.kind = inode_kind::symlink;
          rec.payload = format::symlink_payload{1, node.target};
          break;
      }
      refs[i] = inodes.append(format::encode_inode(rec));
    }

    format::superblock sb;
    sb.inode_count = inode_count;
    sb.mod_time = opts.force_mtime.value_or(
        clamp_time(static_cast<std::int64_t>(std::time(nullptr))));
    sb.block_size = opts.block_size;
    sb.block_log = format::block_log_for(opts.block_size);
    sb.compressor_id = codec;
    sb.flags = format::flags::no_fragments | format::flags::no_xattrs;
    sb.id_count = static_cast<std::uint16_t>(ids.size());
    sb.root_inode = refs[0];

    sb.inode_table_start = img.position();
    img.write(inodes.finish());
    sb.directory_table_start = img.position();
    img.write(dirs.finish());
    sb.fragment_table_start = img.position();

    byte_buffer id_bytes;
    le_writer w(id_bytes);
    for (auto id : ids) w.u32(id);
    auto id_table = format::write_lookup_table(id_bytes, img.position(), codec);
    img.write(id_table.bytes);
    sb.id_table_start = id_table.start;
    sb.bytes_used = img.position();

    std::uint64_t padded =
        (sb.bytes_used + format::kImagePadding - 1) / format::kImagePadding *
        format::kImagePadding;
    img.write(byte_buffer(static_cast<std::size_t>(padded - sb.bytes_used), 0));
    summary.bytes_written = img.position();
    img.write_at_start(format::write_superblock(sb));
  }

  std::error_code ec;
  fs::rename(tmp, out, ec);
  if (ec) {
    fs::remove(tmp, ec);
    fail(errc::io_error, out.string() + ": " + ec.message());
  }

  summary.inode_count = inode_count;
  summary.compression_ratio =
      summary.bytes_written == 0
          ? 0.0
          : double(summary.source_bytes) / double(summary.bytes_written);
  return summary;
}

// ---------------------------------------------------------------------------
// Verification

namespace {

std::string image_digest(const filesystem& fs, node_id node, std::uint64_t size) {
  sha256 h;
  constexpr std::uint32_t chunk = 1u << 20;
  for (std::uint64_t off = 0; off < size; off += chunk) {
    h.update(fs.read(node, off, chunk));
  }
  return h.hex_digest();
}

std::string mode_string(std::uint16_t m) {
  char buf[8];
  std::snprintf(buf, sizeof buf, "%04o", m);
  return buf;
}

} // namespace

verify_report verify(const filesystem& image, const fs::path& source) {
  source_tree tree = scan_source(source, pack_options{});
  std::map<std::string, walk_entry> in_image;
  image.walk([&](const walk_entry& e) { in_image.emplace(e.path, e); });

  verify_report report;
  for (const auto& node : tree.nodes) {
    ++report.entries_checked;
    auto it = in_image.find(node.path);
    if (it == in_image.end()) {
      report.mismatches.push_back({node.path, "missing from image"});
      continue;
    }
    const attr& a = it->second.attributes;
    std::string why;
    if (a.kind != node.kind) {
      why = "kind " + std::string(kind_name(a.kind)) + " != " +
            std::string(kind_name(node.kind));
    } else if (a.mode != node.mode) {
      why = "mode " + mode_string(a.mode) + " != " + mode_string(node.mode);
    } else if (node.kind == file_kind::symlink) {
      std::string t = image.readlink(it->second.node);
      if (t != node.target) {
        why = "symlink target \"" + t + "\" != \"" + node.target + "\"";
      }
    } else if (node.kind == file_kind::regular) {
      if (a.size != node.size) {
        why = "size " + std::to_string(a.size) + " != " + std::to_string(node.size);
      } else if (image_digest(image, it->second.node, a.size) !=
                 sha256_file(node_fs_path(tree, node))) {
        why = "content digest differs";
      }
    }
    if (!why.empty()) {
      report.mismatches.push_back({node.path, why});
    }
    in_image.erase(it);
  }
  for (const auto& [path, e] : in_image) {
    ++report.entries_checked;
    report.mismatches.push_back({path, "not present in source"});
  }
  return report;
}

verify_report verify(const fs::path& image, const fs::path& source) {
  auto reader = bundle_reader::open(image);
  return verify(*reader, source);
}

} // namespace sqb
