#include "sqb/bench.hpp"

#include <dirent.h>
#include <fcntl.h>
#include <sys/stat.h>
#include <sys/utsname.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <ctime>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "sqb/overlay.hpp"
#include "sqb/reader.hpp"

namespace sqb::bench {

namespace fs = std::filesystem;
using clock_type = std::chrono::steady_clock;

namespace {

[[noreturn]] void fail_errno(const fs::path& p, const char* what) {
  int e = errno;
  fail(e == ENOSPC || e == EDQUOT ? errc::disk_full : errc::io_error,
       p.string() + ": " + what + ": " + std::strerror(e));
}

void set_times(const fs::path& p, std::uint32_t mtime) {
  timespec ts[2] = {{mtime, 0}, {mtime, 0}};
  if (::utimensat(AT_FDCWD, p.c_str(), ts, AT_SYMLINK_NOFOLLOW) != 0) fail_errno(p, "utimensat");
}

void write_content(const fs::path& p, std::uint64_t size, std::mt19937_64& rng) {
  int fd = ::open(p.c_str(), O_WRONLY | O_CREAT | O_EXCL | O_CLOEXEC, 0644);
  if (fd < 0) fail_errno(p, "create");
  std::vector<std::uint8_t> buf(size);
  for (std::size_t i = 0; i < buf.size(); i += 8) {
    std::uint64_t w = rng();
    std::memcpy(buf.data() + i, &w, std::min<std::size_t>(8, buf.size() - i));
  }
  std::size_t done = 0;
  while (done < buf.size()) {
    ssize_t n = ::write(fd, buf.data() + done, buf.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      ::close(fd);
      fail_errno(p, "write");
    }
    done += static_cast<std::size_t>(n);
  }
  if (::fchmod(fd, 0644) != 0 || ::close(fd) != 0) fail_errno(p, "close");
}

std::string utc_now() {
  std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

double seconds_since(clock_type::time_point t0) {
  return std::chrono::duration<double>(clock_type::now() - t0).count();
}

double median(std::vector<double> v) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : (v[m - 1] + v[m]) / 2;
}

} // namespace

fs::path sidecar_path(const fs::path& tree) {
  fs::path t = tree.lexically_normal();
  if (t.filename().empty()) t = t.parent_path();
  return t.parent_path() / (t.filename().string() + ".json");
}

gen_counts gen_tree(const gen_spec& spec, const fs::path& out) {
  if (spec.entries < 1) fail(errc::invalid_argument, "entries must be at least 1");
  if (spec.dir_fraction < 0 || spec.dir_fraction > 1) {
    fail(errc::invalid_argument, "dir_fraction must be within [0, 1]");
  }
  if (spec.entries > 1 && spec.max_depth < 1) fail(errc::invalid_argument, "depth must be at least 1");
  if (spec.subjects > 0 && spec.entries < std::uint64_t{spec.subjects} + 1) {
    fail(errc::invalid_argument, "entries must cover the root and every subject");
  }
  if (spec.subjects > 0 && spec.entries > std::uint64_t{spec.subjects} + 1 && spec.max_depth < 2) {
    fail(errc::invalid_argument, "subjects need depth of at least 2 to hold anything");
  }
  if (fs::exists(fs::symlink_status(out))) fail(errc::already_exists, out.string() + " exists");

  std::uint64_t dirs = static_cast<std::uint64_t>(std::llround(double(spec.entries) * spec.dir_fraction));
  dirs = std::clamp<std::uint64_t>(dirs, 1, spec.entries);
  dirs = std::max<std::uint64_t>(dirs, std::uint64_t{spec.subjects} + 1);
  const std::uint64_t files = spec.entries - dirs;

  std::mt19937_64 rng(spec.seed);
  struct dir_rec {
    fs::path path;
    std::uint32_t depth;
  };
  std::vector<dir_rec> all{{out, 0}};
  // Directories that may still take children.
  std::vector<std::size_t> open_dirs;
  if (spec.max_depth >= 1 && spec.subjects == 0) open_dirs.push_back(0);

  if (::mkdir(out.c_str(), 0755) != 0) fail_errno(out, "mkdir");
  ::chmod(out.c_str(), 0755);
  gen_counts c;
  c.entries = 1;
  c.dirs = 1;

  auto add_dir = [&](std::size_t parent, const std::string& name) {
    dir_rec d{all[parent].path / name, all[parent].depth + 1};
    if (::mkdir(d.path.c_str(), 0755) != 0) fail_errno(d.path, "mkdir");
    ::chmod(d.path.c_str(), 0755);
    all.push_back(d);
    if (d.depth < spec.max_depth) open_dirs.push_back(all.size() - 1);
    ++c.dirs;
    ++c.entries;
    c.max_depth = std::max(c.max_depth, d.depth);
    return all.size() - 1;
  };

  if (spec.subjects > 0) {
    std::set<std::uint32_t> ids;
    while (ids.size() < spec.subjects) ids.insert(100000 + static_cast<std::uint32_t>(rng() % 900000));
    for (auto id : ids) add_dir(0, std::to_string(id));
    c.subjects = spec.subjects;
  }

  std::uint64_t remaining_dirs = dirs - c.dirs;
  std::uint64_t name_counter = 0;
  auto dir_name = [&] {
    char buf[32];
    std::snprintf(buf, sizeof buf, "d%06llu", static_cast<unsigned long long>(name_counter++));
    return std::string(buf);
  };

  // A chain first, so the requested depth is actually reached.
  std::size_t deepest = spec.subjects > 0 ? 1 : 0;
  while (remaining_dirs > 0 && all[deepest].depth + 1 < spec.max_depth) {
    deepest = add_dir(deepest, dir_name());
    --remaining_dirs;
  }
  while (remaining_dirs > 0) {
    if (open_dirs.empty()) fail(errc::invalid_argument, "no room for directories at this depth");
    std::size_t parent = open_dirs[rng() % open_dirs.size()];
    add_dir(parent, dir_name());
    --remaining_dirs;
  }

  static const char* const exts[] = {".nii.gz", ".txt", ".json", ".dat", ".csv", ".gii"};
  std::uniform_int_distribution<std::uint64_t> size_dist(0, spec.max_file_size);
  for (std::uint64_t i = 0; i < files; ++i) {
    std::size_t parent;
    if (i == 0 && all[deepest].depth < spec.max_depth && (spec.subjects == 0 || deepest != 0)) {
      parent = deepest;
    } else {
      if (open_dirs.empty()) fail(errc::invalid_argument, "no room for files at this depth");
      parent = open_dirs[rng() % open_dirs.size()];
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "f%07llu", static_cast<unsigned long long>(i));
    fs::path p = all[parent].path / (std::string(buf) + exts[rng() % std::size(exts)]);
    std::uint64_t size = size_dist(rng);
    write_content(p, size, rng);
    set_times(p, spec.mtime);
    ++c.files;
    ++c.entries;
    c.bytes += size;
    c.max_depth = std::max(c.max_depth, all[parent].depth + 1);
  }
  for (auto it = all.rbegin(); it != all.rend(); ++it) set_times(it->path, spec.mtime);

  nlohmann::ordered_json j;
  j["entries"] = c.entries;
  j["files"] = c.files;
  j["dirs"] = c.dirs;
  j["bytes"] = c.bytes;
  j["max_depth"] = c.max_depth;
  j["subjects"] = c.subjects;
  j["spec"] = {{"entries", spec.entries},     {"max_depth", spec.max_depth},
               {"dir_fraction", spec.dir_fraction}, {"max_file_size", spec.max_file_size},
               {"seed", spec.seed},            {"subjects", spec.subjects}};
  std::ofstream f(sidecar_path(out));
  f << j.dump(2) << "\n";
  if (!f) fail(errc::io_error, sidecar_path(out).string() + ": write failed");
  return c;
}

gen_counts read_sidecar(const fs::path& tree) {
  std::ifstream f(sidecar_path(tree));
  if (!f) fail(errc::not_found, sidecar_path(tree).string() + ": missing");
  try {
    auto j = nlohmann::json::parse(f);
    gen_counts c;
    c.entries = j.at("entries");
    c.files = j.at("files");
    c.dirs = j.at("dirs");
    c.bytes = j.at("bytes");
    c.max_depth = j.at("max_depth");
    c.subjects = j.at("subjects");
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(errc::invalid_argument, sidecar_path(tree).string() + ": " + e.what());
  }
}

scan_target make_target(const fs::path& path, std::string label) {
  scan_target t;
  t.kind = detect_target(path);
  t.path = path;
  t.label = label.empty() ? path.string() : std::move(label);
  return t;
}

std::string scan_report::pass_label() const {
  if (pass == 1) return kind == target_kind::host ? "ambient" : "cold";
  return "warm";
}

std::string host_descriptor() {
  utsname u{};
  ::uname(&u);
  std::ostringstream s;
  s << u.nodename << " " << u.sysname << " " << u.release << " " << u.machine << " "
    << std::thread::hardware_concurrency() << "cpu";
  return s.str();
}

scan_report scan_host(const fs::path& root, std::string label) {
  scan_report r;
  r.target = label.empty() ? root.string() : std::move(label);
  r.kind = target_kind::host;
  r.timestamp = utc_now();
  r.host = host_descriptor();
  auto t0 = clock_type::now();
  try {
    struct stat st{};
    if (::lstat(root.c_str(), &st) != 0) fail_errno(root, "lstat");
    ++r.entries;
    std::vector<std::string> stack;
    if (S_ISDIR(st.st_mode)) stack.push_back(root.string());
    while (!stack.empty()) {
      std::string dir = std::move(stack.back());
      stack.pop_back();
      DIR* d = ::opendir(dir.c_str());
      if (!d) fail_errno(dir, "opendir");
      int dfd = ::dirfd(d);
      while (dirent* e = ::readdir(d)) {
        if (e->d_name[0] == '.' && (e->d_name[1] == 0 || (e->d_name[1] == '.' && e->d_name[2] == 0))) {
          continue;
        }
        if (::fstatat(dfd, e->d_name, &st, AT_SYMLINK_NOFOLLOW) != 0) {
          ::closedir(d);
          fail_errno(dir + "/" + e->d_name, "lstat");
        }
        ++r.entries;
        if (S_ISDIR(st.st_mode)) stack.push_back(dir + "/" + e->d_name);
      }
      ::closedir(d);
    }
  } catch (const error& e) {
    r.ok = false;
    r.error = e.what();
  }
  r.wall_seconds = seconds_since(t0);
  r.entries_per_sec = r.wall_seconds > 0 ? double(r.entries) / r.wall_seconds : 0;
  return r;
}

scan_report scan_filesystem(const filesystem& fs, target_kind kind, std::string label) {
  scan_report r;
  r.target = std::move(label);
  r.kind = kind;
  r.timestamp = utc_now();
  r.host = host_descriptor();
  auto t0 = clock_type::now();
  try {
    walker w(fs);
    while (w.next()) ++r.entries;
  } catch (const error& e) {
    r.ok = false;
    r.error = e.what();
  }
  r.wall_seconds = seconds_since(t0);
  r.entries_per_sec = r.wall_seconds > 0 ? double(r.entries) / r.wall_seconds : 0;
  r.cache = fs.cache_control(cache_action::stats);
  return r;
}

void advise_drop(const fs::path& file) {
  int fd = ::open(file.c_str(), O_RDONLY | O_CLOEXEC);
  if (fd < 0) return;
  ::posix_fadvise(fd, 0, 0, POSIX_FADV_DONTNEED);
  ::close(fd);
}

double trimmed_mean(std::vector<double> values) {
  if (values.size() < 3) fail(errc::invalid_argument, "trimming needs at least three values");
  std::sort(values.begin(), values.end());
  double sum = std::accumulate(values.begin() + 1, values.end() - 1, 0.0);
  return sum / double(values.size() - 2);
}

std::string format_rate(double r) {
  char buf[32];
  if (r >= 999.5e3) {
    std::snprintf(buf, sizeof buf, "%.3gM", r / 1e6);
  } else if (r >= 999.5) {
    std::snprintf(buf, sizeof buf, "%.3gK", r / 1e3);
  } else {
    std::snprintf(buf, sizeof buf, "%.3g", r);
  }
  return buf;
}

std::string format_seconds(double s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g seconds", s);
  return buf;
}

std::string format_count(std::uint64_t n) {
  std::string digits = std::to_string(n);
  std::string out;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i > 0 && (digits.size() - i) % 3 == 0) out += ',';
    out += digits[i];
  }
  return out;
}

namespace {

std::vector<fs::path> bundle_files(const scan_target& t) {
  if (t.kind == target_kind::bundle) return {t.path};
  std::vector<fs::path> out;
  if (t.kind == target_kind::overlay) {
    fs::path m = manifest_path(t.path);
    for (auto& s : shard_manifest::load(m).shards) out.push_back(m.parent_path() / s.file);
  }
  return out;
}

} // namespace

suite_result run_suite(const bench_config& cfg,
                       const std::function<void(const scan_report&)>& on_row) {
  if (cfg.trim && cfg.repetitions < 3) {
    fail(errc::invalid_argument, "trimming needs at least 3 repetitions");
  }
  if (cfg.passes < 1) fail(errc::invalid_argument, "passes must be at least 1");
  suite_result res;
  // [target][pass] -> walls, rates
  std::vector<std::vector<std::vector<double>>> walls(cfg.targets.size()),
      rates(cfg.targets.size());
  std::vector<std::uint64_t> entries(cfg.targets.size(), 0);
  for (std::size_t t = 0; t < cfg.targets.size(); ++t) {
    walls[t].resize(cfg.passes);
    rates[t].resize(cfg.passes);
  }

  for (std::uint32_t rep = 0; rep < cfg.repetitions; ++rep) {
    for (std::size_t t = 0; t < cfg.targets.size(); ++t) {
      const scan_target& target = cfg.targets[t];
      std::vector<scan_report> rows;
      std::string failure;
      try {
        std::shared_ptr<filesystem> fsys;
        if (target.kind != target_kind::host) {
          if (cfg.drop_os_cache) {
            for (auto& f : bundle_files(target)) advise_drop(f);
          }
          fsys = open_target(target.path, {cfg.cache_budget, false});
          fsys->cache_control(cache_action::clear);
        }
        for (std::uint32_t pass = 1; pass <= cfg.passes; ++pass) {
          scan_report r = fsys ? scan_filesystem(*fsys, target.kind, target.label)
                               : scan_host(target.path, target.label);
          r.pass = pass;
          rows.push_back(r);
          if (!r.ok) {
            failure = r.error;
            break;
          }
        }
      } catch (const error& e) {
        failure = e.what();
      }
      for (auto& r : rows) {
        res.raw.push_back(r);
        if (on_row) on_row(r);
      }
      if (!failure.empty()) {
        res.notes.push_back("repetition " + std::to_string(rep + 1) + " of " + target.label +
                            " failed and is excluded: " + failure);
        continue;
      }
      for (auto& r : rows) {
        walls[t][r.pass - 1].push_back(r.wall_seconds);
        rates[t][r.pass - 1].push_back(r.entries_per_sec);
        entries[t] = r.entries;
      }
    }
  }

  for (std::size_t t = 0; t < cfg.targets.size(); ++t) {
    for (std::uint32_t p = 0; p < cfg.passes; ++p) {
      suite_cell c;
      c.target = cfg.targets[t].label;
      c.kind = cfg.targets[t].kind;
      c.pass = p + 1;
      c.pass_label = p == 0 ? (c.kind == target_kind::host ? "ambient" : "cold") : "warm";
      c.entries = entries[t];
      const auto& w = walls[t][p];
      const auto& r = rates[t][p];
      c.runs = w.size();
      if (w.empty()) {
        res.notes.push_back(c.target + " pass " + std::to_string(c.pass) + ": no successful runs");
      } else if (cfg.trim && w.size() >= 3) {
        c.averaged = w.size() - 2;
        c.mean_wall = trimmed_mean(w);
        c.mean_rate = trimmed_mean(r);
      } else {
        if (cfg.trim) {
          res.notes.push_back(c.target + " pass " + std::to_string(c.pass) +
                              ": fewer than 3 runs left, averaged without trimming");
        }
        c.averaged = w.size();
        c.mean_wall = std::accumulate(w.begin(), w.end(), 0.0) / double(w.size());
        c.mean_rate = std::accumulate(r.begin(), r.end(), 0.0) / double(r.size());
      }
      c.median_wall = median(w);
      c.entries_per_sec = c.mean_wall > 0 ? double(c.entries) / c.mean_wall : 0;
      res.summary.push_back(c);
    }
  }
  for (const auto& t : cfg.targets) {
    if (t.kind == target_kind::host) {
      res.notes.push_back(t.label + ": pass 1 is ambient; the OS page cache cannot be dropped "
                                    "without privilege");
    }
  }
  return res;
}

std::optional<double> cumulative_slope(const std::vector<double>& per_item) {
  if (per_item.size() < 2) return std::nullopt;
  double n = double(per_item.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0, cum = 0;
  for (std::size_t i = 0; i < per_item.size(); ++i) {
    cum += per_item[i];
    double x = double(i + 1);
    sx += x;
    sy += cum;
    sxx += x * x;
    sxy += x * cum;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

open_bench_result open_bench(const std::vector<fs::path>& bundles, bool drop_os_cache) {
  if (bundles.empty()) fail(errc::empty_overlay, "no bundles to open");
  open_bench_result res;
  for (auto& b : bundles) res.bundles.push_back(b.filename().string());
  overlay_options quiet;
  quiet.on_conflict = [](const overlay_conflict&) {};

  auto measure = [&](std::vector<double>& per, double& merge) {
    std::vector<std::shared_ptr<bundle_reader>> readers;
    for (auto& b : bundles) {
      auto t0 = clock_type::now();
      readers.push_back(bundle_reader::open(b));
      per.push_back(seconds_since(t0));
    }
    auto t0 = clock_type::now();
    auto o = overlay_reader::open(readers, quiet);
    merge = seconds_since(t0);
    return std::accumulate(per.begin(), per.end(), 0.0) + merge;
  };

  if (drop_os_cache) {
    for (auto& b : bundles) advise_drop(b);
  }
  res.cold_total = measure(res.cold_seconds, res.cold_merge_seconds);
  res.warm_total = measure(res.warm_seconds, res.warm_merge_seconds);
  res.cold_slope = cumulative_slope(res.cold_seconds);
  res.warm_slope = cumulative_slope(res.warm_seconds);
  return res;
}

report_row to_row(const scan_report& r) {
  return {r.target, r.pass, r.entries, r.wall_seconds, r.entries_per_sec, r.kind};
}

report_row to_row(const suite_cell& c) {
  return {c.target, c.pass, c.entries, c.mean_wall, c.entries_per_sec, c.kind};
}

report_format parse_report_format(std::string_view name) {
  if (name == "json") return report_format::json;
  if (name == "csv") return report_format::csv;
  if (name == "table") return report_format::table;
  fail(errc::invalid_argument, "unknown report format '" + std::string(name) + "'");
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string emit_table(const std::vector<report_row>& rows) {
  std::vector<std::string> targets;
  std::map<std::string, target_kind> kinds;
  std::set<std::uint32_t> passes;
  struct agg {
    double wall = 0;
    std::uint64_t entries = 0;
    int n = 0;
  };
  std::map<std::pair<std::string, std::uint32_t>, agg> cells;
  for (auto& r : rows) {
    if (!kinds.count(r.target)) targets.push_back(r.target);
    kinds[r.target] = r.kind;
    passes.insert(r.pass);
    auto& a = cells[{r.target, r.pass}];
    a.wall += r.wall_seconds;
    a.entries = r.entries;
    ++a.n;
  }
  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> header{""};
  for (auto& t : targets) header.push_back(t + " (" + std::string(target_kind_name(kinds[t])) + ")");
  grid.push_back(header);
  std::vector<std::string> counts{"Entries"};
  for (auto& t : targets) {
    std::uint64_t e = 0;
    for (auto p : passes) {
      if (auto it = cells.find({t, p}); it != cells.end()) e = it->second.entries;
    }
    counts.push_back(format_count(e));
  }
  grid.push_back(counts);
  bool ambient = false;
  for (auto p : passes) {
    std::vector<std::string> secs{"Scan " + std::to_string(p)};
    std::vector<std::string> rate{""};
    for (auto& t : targets) {
      auto it = cells.find({t, p});
      if (it == cells.end()) {
        secs.push_back("-");
        rate.push_back("");
        continue;
      }
      double wall = it->second.wall / it->second.n;
      std::string mark;
      if (p == 1 && kinds[t] == target_kind::host) {
        mark = " *";
        ambient = true;
      }
      secs.push_back(format_seconds(wall) + mark);
      rate.push_back(format_rate(wall > 0 ? double(it->second.entries) / wall : 0) + " entries/s");
    }
    grid.push_back(secs);
    grid.push_back(rate);
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (auto& row : grid) {
    for (std::size_t i = 0; i < row.size(); ++i) width[i] = std::max(width[i], row[i].size());
  }
  std::string out;
  for (auto& row : grid) {
    std::string line;
    for (std::size_t i = 0; i < row.size(); ++i) {
      line += row[i];
      if (i + 1 < row.size()) line += std::string(width[i] - row[i].size() + 3, ' ');
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out += line + "\n";
  }
  if (ambient) out += "* host first pass is ambient: the OS page cache was not dropped\n";
  return out;
}

} // namespace

std::string emit_report(const std::vector<report_row>& rows, report_format format) {
  if (rows.empty()) fail(errc::invalid_argument, "no rows to report");
  switch (format) {
    case report_format::json: {
      nlohmann::ordered_json arr = nlohmann::ordered_json::array();
      for (auto& r : rows) {
        nlohmann::ordered_json o;
        o["target"] = r.target;
        o["pass"] = r.pass;
        o["entries"] = r.entries;
        o["wall_seconds"] = r.wall_seconds;
        o["entries_per_sec"] = r.entries_per_sec;
        o["kind"] = std::string(target_kind_name(r.kind));
        arr.push_back(std::move(o));
      }
      return arr.dump(2) + "\n";
    }
    case report_format::csv: {
      std::string out = "target,pass,entries,wall_seconds,entries_per_sec,kind\r\n";
      for (auto& r : rows) {
        out += csv_field(r.target) + "," + std::to_string(r.pass) + "," + std::to_string(r.entries) +
               "," + num(r.wall_seconds) + "," + num(r.entries_per_sec) + "," +
               std::string(target_kind_name(r.kind)) + "\r\n";
      }
      return out;
    }
    case report_format::table:
      return emit_table(rows);
  }
  return {};
}

} // namespace sqb::bench
