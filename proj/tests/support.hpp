#pragma once

// Shared helpers for the test suites: scratch directories, file writers and
// a seeded random source-tree generator.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "sqb/bytes.hpp"

namespace sqb::test {

namespace fs = std::filesystem;

class scratch_dir {
 public:
  explicit scratch_dir(const std::string& tag = "t") {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("sqb-" + tag + "-" + std::to_string(::getpid()) + "-" +
             std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~scratch_dir() {
    std::error_code ec;
    // Restore permissions some tests remove before deleting.
    for (auto it = fs::recursive_directory_iterator(
             path_, fs::directory_options::skip_permission_denied, ec);
         it != fs::recursive_directory_iterator(); it.increment(ec)) {
      if (it->is_directory(ec) && !it->is_symlink(ec)) {
        fs::permissions(it->path(), fs::perms::owner_all, fs::perm_options::add, ec);
      }
    }
    fs::remove_all(path_, ec);
  }
  scratch_dir(const scratch_dir&) = delete;
  scratch_dir& operator=(const scratch_dir&) = delete;

  const fs::path& path() const noexcept { return path_; }
  fs::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  fs::path path_;
};

inline void write_file(const fs::path& p, std::string_view content) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

inline void write_file(const fs::path& p, const byte_buffer& content) {
  write_file(p, as_chars(content));
}

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline byte_buffer random_bytes(std::mt19937_64& rng, std::size_t n) {
  byte_buffer b(n);
  for (auto& x : b) x = static_cast<std::uint8_t>(rng());
  return b;
}

struct random_tree_params {
  std::size_t max_entries = 200;
  std::uint32_t max_depth = 6;
  std::uint64_t max_file_size = 64 * 1024;
  double dir_probability = 0.2;
  double symlink_probability = 0.1;
  /// Some third-party readers cannot represent non-UTF-8 names.
  bool utf8_names = false;
  /// Most files small, one in a hundred anywhere up to max_file_size.
  bool skewed_sizes = false;
};

struct random_tree_counts {
  std::uint64_t files = 0;
  std::uint64_t dirs = 1; // root
  std::uint64_t symlinks = 0;
  std::uint64_t entries() const noexcept { return files + dirs + symlinks; }
};

/// Names exercise byte-wise ordering: mixed case, digits, punctuation and
/// UTF-8 / high bytes.
inline std::string random_name(std::mt19937_64& rng, bool utf8_only = false) {
  static const std::vector<std::string> alphabet = {
      "a", "b", "Z", "0", "9", "_", "-", ".", " ", "\xc3\xa9", "\xe2\x82\xac",
      "\xff", "x", "Y", "~"};
  std::uniform_int_distribution<int> len(1, 12);
  std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
  for (;;) {
    std::string s;
    int n = len(rng);
    for (int i = 0; i < n; ++i) {
      const std::string& piece = alphabet[pick(rng)];
      if (utf8_only && piece == "\xff") continue;
      s += piece;
    }
    if (s.empty()) continue;
    if (s != "." && s != ".." && s.size() <= 255) return s;
  }
}

/// File contents mix random bytes, compressible text, whole zero blocks and
/// empty files.
inline byte_buffer random_content(std::mt19937_64& rng, std::uint64_t max_size,
                                  bool skewed = false) {
  std::uniform_int_distribution<int> style(0, 9);
  if (skewed) {
    std::uniform_int_distribution<int> band(0, 99);
    int b = band(rng);
    if (b < 90) max_size = std::min<std::uint64_t>(max_size, 4096);
    else if (b < 99) max_size = std::min<std::uint64_t>(max_size, 65536);
  }
  std::uniform_int_distribution<std::uint64_t> size(0, max_size);
  std::uint64_t n = size(rng);
  switch (style(rng)) {
    case 0: return {};
    case 1: return byte_buffer(n, 0);
    case 2: case 3: {
      byte_buffer b(n);
      for (std::uint64_t i = 0; i < n; ++i) b[i] = static_cast<std::uint8_t>("line of text\n"[i % 13]);
      return b;
    }
    case 4: {
      // zeros with a random head: exercises sparse middle blocks
      byte_buffer b(n, 0);
      for (std::uint64_t i = 0; i < std::min<std::uint64_t>(n, 100); ++i) b[i] = static_cast<std::uint8_t>(rng());
      return b;
    }
    default:
      return random_bytes(rng, static_cast<std::size_t>(n));
  }
}

inline random_tree_counts make_random_tree(const fs::path& root, std::uint64_t seed,
                                           const random_tree_params& p) {
  std::mt19937_64 rng(seed);
  random_tree_counts counts;
  fs::create_directories(root);
  std::vector<std::pair<fs::path, std::uint32_t>> dirs{{root, 0}};
  std::uniform_real_distribution<double> coin(0, 1);
  std::uniform_int_distribution<std::size_t> entries(1, p.max_entries);
  std::size_t target = entries(rng) - 1; // root counts as one
  std::vector<fs::path> files;

  for (std::size_t i = 0; i < target; ++i) {
    std::uniform_int_distribution<std::size_t> which(0, dirs.size() - 1);
    auto [parent, depth] = dirs[which(rng)];
    fs::path child = parent / random_name(rng, p.utf8_names);
    if (fs::exists(fs::symlink_status(child))) {
      continue;
    }
    double c = coin(rng);
    if (c < p.dir_probability && depth + 1 < p.max_depth) {
      fs::create_directory(child);
      dirs.emplace_back(child, depth + 1);
      ++counts.dirs;
    } else if (c < p.dir_probability + p.symlink_probability) {
      std::string target_name = coin(rng) < 0.5 && !files.empty()
                                    ? fs::relative(files[rng() % files.size()], parent).string()
                                    : "../dangling/" + random_name(rng, p.utf8_names);
      fs::create_symlink(target_name, child);
      ++counts.symlinks;
    } else {
      write_file(child, random_content(rng, p.max_file_size, p.skewed_sizes));
      static const fs::perms modes[] = {fs::perms(0644), fs::perms(0600),
                                        fs::perms(0755), fs::perms(0444)};
      fs::permissions(child, modes[rng() % 4]);
      files.push_back(child);
      ++counts.files;
    }
  }
  return counts;
}

/// Independent recursive count over a host directory (root included).
inline std::uint64_t count_host_entries(const fs::path& root) {
  std::uint64_t n = 1;
  for (auto it = fs::recursive_directory_iterator(root);
       it != fs::recursive_directory_iterator(); ++it) {
    ++n;
  }
  return n;
}

} // namespace sqb::test
