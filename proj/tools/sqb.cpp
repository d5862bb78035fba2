// sqb: pack, shard, inspect, benchmark and serve read-only dataset bundles.

#include <atomic>
#include <cerrno>
#include <charconv>
#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <unistd.h>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "sqb/bench.hpp"
#include "sqb/codec.hpp"
#include "sqb/error.hpp"
#include "sqb/extract.hpp"
#include "sqb/mount.hpp"
#include "sqb/overlay.hpp"
#include "sqb/packer.hpp"
#include "sqb/reader.hpp"
#include "sqb/sftp.hpp"
#include "sqb/target.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr const char* kBudgetEnv = "SQB_CACHE_BUDGET";

enum exit_code : int { ok = 0, usage = 1, data_error = 2, io_error = 3 };

struct pipe_closed {};

struct usage_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct globals {
  int verbosity = 1;
  std::string cache_budget;
};

globals g;

void info(const std::string& msg, int level = 1) {
  if (g.verbosity >= level) std::cerr << msg << '\n';
}

void out(std::string_view s) {
  const char* p = s.data();
  std::size_t left = s.size();
  while (left > 0) {
    ssize_t n = ::write(STDOUT_FILENO, p, left);
    if (n < 0) {
      if (errno == EINTR) continue;
      if (errno == EPIPE) throw pipe_closed{};
      sqb::fail(sqb::errc::io_error, std::string("stdout: ") + std::strerror(errno));
    }
    p += n;
    left -= std::size_t(n);
  }
}

void out_line(const std::string& s) { out(s + "\n"); }

std::uint64_t parse_size(const std::string& text) {
  std::uint64_t value = 0;
  const char* end = text.data() + text.size();
  auto [p, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || p == text.data()) throw usage_error("bad size '" + text + "'");
  std::string suffix(p, end);
  for (auto& c : suffix) c = char(std::toupper(static_cast<unsigned char>(c)));
  int shift = 0;
  if (suffix.empty() || suffix == "B") shift = 0;
  else if (suffix == "K" || suffix == "KIB" || suffix == "KB") shift = 10;
  else if (suffix == "M" || suffix == "MIB" || suffix == "MB") shift = 20;
  else if (suffix == "G" || suffix == "GIB" || suffix == "GB") shift = 30;
  else throw usage_error("bad size suffix in '" + text + "'");
  if (shift && value > (~0ull >> shift)) throw usage_error("size '" + text + "' overflows");
  return value << shift;
}

std::uint64_t cache_budget() {
  if (!g.cache_budget.empty()) return parse_size(g.cache_budget);
  if (const char* env = std::getenv(kBudgetEnv); env && *env) return parse_size(env);
  return sqb::block_cache::kDefaultBudget;
}

std::shared_ptr<sqb::filesystem> open_any(const fs::path& target, bool verify = false) {
  return sqb::open_target(target, {cache_budget(), verify});
}

std::shared_ptr<sqb::filesystem> open_sources(const std::string& manifest,
                                              const std::vector<std::string>& bundles,
                                              bool verify) {
  if (!manifest.empty()) {
    sqb::overlay_options o;
    o.cache_budget = cache_budget();
    o.verify_digests = verify;
    return sqb::overlay_reader::open_manifest(sqb::manifest_path(manifest), o);
  }
  if (bundles.size() == 1) {
    return sqb::bundle_reader::open(bundles[0], sqb::reader_options{cache_budget()});
  }
  sqb::overlay_options o;
  o.cache_budget = cache_budget();
  std::vector<fs::path> paths(bundles.begin(), bundles.end());
  return sqb::overlay_reader::open_bundles(paths, o);
}

sqb::node_id locate(const sqb::filesystem& fs, const std::string& path, bool follow) {
  auto n = follow ? fs.resolve_follow(path, true) : fs.try_resolve(path);
  if (!n) sqb::fail(sqb::errc::not_found, path + ": no such entry");
  return *n;
}

std::string mode_string(const sqb::attr& a) {
  std::string s = a.kind == sqb::file_kind::directory ? "d"
                  : a.kind == sqb::file_kind::symlink ? "l"
                                                      : "-";
  const char* rwx = "rwxrwxrwx";
  for (int b = 0; b < 9; ++b) s += (a.mode & (0400 >> b)) ? rwx[b] : '-';
  if (a.mode & 04000) s[3] = (a.mode & 0100) ? 's' : 'S';
  if (a.mode & 02000) s[6] = (a.mode & 0010) ? 's' : 'S';
  if (a.mode & 01000) s[9] = (a.mode & 0001) ? 't' : 'T';
  return s;
}

std::string utc_time(std::uint32_t t) {
  std::time_t tt = t;
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%d %H:%M", &tm);
  return buf;
}

json attr_json(const sqb::attr& a) {
  json o;
  o["kind"] = std::string(sqb::kind_name(a.kind));
  o["size"] = a.size;
  o["mode"] = a.mode;
  o["uid"] = a.uid;
  o["gid"] = a.gid;
  o["mtime"] = a.mtime;
  o["inode"] = a.inode_number;
  o["nlink"] = a.nlink;
  return o;
}

sqb::pack_options pack_opts(std::uint32_t block_size, const std::string& codec,
                            std::optional<std::uint32_t> mtime, unsigned jobs, bool follow) {
  sqb::pack_options o;
  o.block_size = block_size;
  auto id = sqb::compressor_from_name(codec);
  if (!id) throw usage_error("unknown codec '" + codec + "' (zlib or zstd)");
  o.codec_id = *id;
  o.force_mtime = mtime;
  o.parallel_workers = jobs;
  o.follow_symlinks = follow;
  sqb::validate(o);
  return o;
}

void add_pack_flags(CLI::App* c, std::uint32_t& block_size, std::string& codec,
                    std::optional<std::uint32_t>& mtime, unsigned& jobs, bool& follow) {
  c->add_option("--block-size", block_size, "Data block size in bytes")->capture_default_str();
  c->add_option("--codec", codec, "zlib or zstd")->capture_default_str();
  c->add_option("--mtime", mtime, "Set every timestamp to EPOCH");
  c->add_option("--jobs", jobs, "Compression workers")->capture_default_str();
  c->add_flag("--follow-symlinks", follow, "Store link targets instead of links");
}

sqb::bench::report_format parse_format(const std::string& name) {
  try {
    return sqb::bench::parse_report_format(name);
  } catch (const sqb::error& e) {
    throw usage_error(e.what());
  }
}

// ---------------------------------------------------------------- commands

int cmd_pack(const std::string& src, const std::string& image, const sqb::pack_options& opts) {
  auto tree = sqb::scan_source(src, opts);
  info("packing " + std::to_string(tree.entries()) + " entries from " + src, 2);
  auto sum = sqb::pack(tree, opts, image);
  json o;
  o["image"] = image;
  o["entries"] = tree.entries();
  o["files"] = tree.files;
  o["directories"] = tree.directories;
  o["symlinks"] = tree.symlinks;
  o["bytes_written"] = sum.bytes_written;
  o["source_bytes"] = sum.source_bytes;
  o["compression_ratio"] = sum.compression_ratio;
  o["codec"] = std::string(sqb::compressor_name(opts.codec_id));
  o["drifted"] = sum.drifted;
  for (auto& d : sum.drifted) info("warning: " + d + " changed while packing");
  out_line(o.dump());
  return ok;
}

int cmd_verify(const std::string& image, const std::string& src) {
  auto rep = sqb::verify(fs::path(image), fs::path(src));
  json o;
  o["image"] = image;
  o["entries_checked"] = rep.entries_checked;
  o["ok"] = rep.ok();
  json mm = json::array();
  for (auto& m : rep.mismatches) mm.push_back({{"path", m.path}, {"reason", m.reason}});
  o["mismatches"] = mm;
  out_line(o.dump());
  if (!rep.ok()) {
    info(std::to_string(rep.mismatches.size()) + " mismatch(es)");
    return data_error;
  }
  return ok;
}

int cmd_ls(const std::string& target, const std::string& path, bool longfmt, bool as_json) {
  auto fs = open_any(target);
  auto node = locate(*fs, path, true);
  auto a = fs->getattr(node);
  struct row {
    std::string name;
    sqb::node_id node;
    sqb::attr a;
  };
  std::vector<row> rows;
  if (a.kind == sqb::file_kind::directory) {
    for (auto& it : fs->readdir(node)) rows.push_back({it.name, it.node, fs->getattr(it.node)});
  } else {
    rows.push_back({path, node, a});
  }
  if (as_json) {
    json arr = json::array();
    for (auto& r : rows) {
      json o;
      o["name"] = r.name;
      o.update(attr_json(r.a));
      if (r.a.kind == sqb::file_kind::symlink) o["target"] = fs->readlink(r.node);
      arr.push_back(std::move(o));
    }
    out(arr.dump(2) + "\n");
    return ok;
  }
  std::string buf;
  for (auto& r : rows) {
    if (longfmt) {
      char line[128];
      std::snprintf(line, sizeof line, "%s %3u %5u %5u %12llu %s ", mode_string(r.a).c_str(),
                    r.a.nlink, r.a.uid, r.a.gid, static_cast<unsigned long long>(r.a.size),
                    utc_time(r.a.mtime).c_str());
      buf += line;
      buf += r.name;
      if (r.a.kind == sqb::file_kind::symlink) buf += " -> " + fs->readlink(r.node);
    } else {
      buf += r.name;
    }
    buf += '\n';
    if (buf.size() > (1u << 16)) {
      out(buf);
      buf.clear();
    }
  }
  out(buf);
  return ok;
}

int cmd_stat(const std::string& target, const std::string& path, bool deref, bool as_json) {
  auto fs = open_any(target);
  auto node = locate(*fs, path, deref);
  auto a = fs->getattr(node);
  std::string link = a.kind == sqb::file_kind::symlink ? fs->readlink(node) : std::string();
  std::string layer = fs->layer_name(node.layer);
  if (as_json) {
    json o;
    o["path"] = path;
    o.update(attr_json(a));
    if (a.kind == sqb::file_kind::symlink) o["target"] = link;
    o["bundle"] = layer;
    out_line(o.dump());
    return ok;
  }
  char mode[8];
  std::snprintf(mode, sizeof mode, "%04o", a.mode);
  std::string s = "  path: " + path + "\n";
  s += "  kind: " + std::string(sqb::kind_name(a.kind)) + "\n";
  s += "  size: " + std::to_string(a.size) + "\n";
  s += "  mode: " + std::string(mode) + " (" + mode_string(a) + ")\n";
  s += " owner: " + std::to_string(a.uid) + ":" + std::to_string(a.gid) + "\n";
  s += " mtime: " + std::to_string(a.mtime) + " (" + utc_time(a.mtime) + " UTC)\n";
  s += " inode: " + std::to_string(a.inode_number) + "\n";
  s += " links: " + std::to_string(a.nlink) + "\n";
  if (a.kind == sqb::file_kind::symlink) s += "target: " + link + "\n";
  s += "bundle: " + layer + "\n";
  out(s);
  return ok;
}

int cmd_cat(const std::string& target, const std::vector<std::string>& paths) {
  auto fs = open_any(target);
  for (auto& p : paths) {
    auto node = locate(*fs, p, true);
    auto a = fs->getattr(node);
    if (a.kind != sqb::file_kind::regular) sqb::fail(sqb::errc::not_a_file, p + ": not a file");
    for (std::uint64_t off = 0; off < a.size;) {
      auto chunk = fs->read(node, off, 1u << 20);
      if (chunk.empty()) break;
      out(std::string_view(reinterpret_cast<const char*>(chunk.data()), chunk.size()));
      off += chunk.size();
    }
  }
  return ok;
}

int cmd_extract(const std::string& target, const std::string& inner, const std::string& dest,
                bool force) {
  auto fs = open_any(target);
  if (!fs->try_resolve(inner)) sqb::fail(sqb::errc::not_found, inner + ": no such entry");
  sqb::extract_options o;
  o.force = force;
  auto n = sqb::extract(*fs, inner, dest, o);
  info("extracted " + std::to_string(n) + " entries to " + dest);
  json j;
  j["target"] = target;
  j["path"] = inner;
  j["dest"] = dest;
  j["entries"] = n;
  out_line(j.dump());
  return ok;
}

sqb::bench::scan_report scan_once(const std::string& target) {
  auto kind = sqb::detect_target(target);
  if (kind == sqb::target_kind::host) return sqb::bench::scan_host(target, target);
  auto fs = open_any(target);
  return sqb::bench::scan_filesystem(*fs, kind, target);
}

int emit_scan(const sqb::bench::scan_report& r, const std::string& format) {
  out(sqb::bench::emit_report({sqb::bench::to_row(r)}, parse_format(format)));
  if (!r.ok) {
    info("error: " + r.error + " (partial count " + std::to_string(r.entries) + ")", 0);
    return io_error;
  }
  return ok;
}

int cmd_scan(const std::string& target, const std::string& format) {
  parse_format(format);
  return emit_scan(scan_once(target), format);
}

int cmd_shard_plan(const std::string& src, std::uint32_t group, const std::string& dataset,
                   const std::string& output) {
  auto m = sqb::shard_plan(src, group, dataset);
  info(std::to_string(m.member_count()) + " members in " + std::to_string(m.shards.size()) +
       " shards of at most " + std::to_string(group));
  if (output.empty()) {
    out(m.to_json() + "\n");
  } else {
    m.save(output);
  }
  return ok;
}

int cmd_shard_pack(const std::string& src, const std::string& out_dir, std::uint32_t group,
                   const std::string& dataset, const std::string& plan_file,
                   const sqb::pack_options& opts) {
  auto m = plan_file.empty() ? sqb::shard_plan(src, group, dataset)
                             : sqb::shard_manifest::load(plan_file);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) sqb::fail(sqb::errc::io_error, out_dir + ": " + ec.message());
  std::size_t total = m.shards.size();
  auto rep = sqb::pack_shards(std::move(m), src, out_dir, opts, [&](std::size_t i, bool built) {
    info(std::string(built ? "built " : "kept  ") + sqb::shard_file_name(i) + " (" +
         std::to_string(i + 1) + "/" + std::to_string(total) + ")");
  });
  json o;
  o["manifest"] = (fs::path(out_dir) / sqb::kManifestName).string();
  o["shards"] = rep.manifest.shards.size();
  o["members"] = rep.manifest.member_count();
  o["entries"] = rep.manifest.entry_count();
  o["built"] = rep.built;
  o["skipped"] = rep.skipped;
  out_line(o.dump());
  return ok;
}

int cmd_shard_ls(const std::string& manifest, bool as_json) {
  auto m = sqb::shard_manifest::load(sqb::manifest_path(manifest));
  if (as_json) {
    out(m.to_json() + "\n");
    return ok;
  }
  std::string s;
  char line[256];
  std::snprintf(line, sizeof line, "%-16s %7s %10s %14s  %s\n", "file", "members", "entries",
                "bytes", "sha256");
  s += line;
  std::uint64_t bytes = 0;
  for (auto& sh : m.shards) {
    std::snprintf(line, sizeof line, "%-16s %7zu %10llu %14llu  %.16s\n", sh.file.c_str(),
                  sh.members.size(), static_cast<unsigned long long>(sh.entries),
                  static_cast<unsigned long long>(sh.bytes),
                  sh.sha256.empty() ? "-" : sh.sha256.c_str());
    s += line;
    bytes += sh.bytes;
  }
  std::snprintf(line, sizeof line, "%-16s %7llu %10llu %14llu\n", "total",
                static_cast<unsigned long long>(m.member_count()),
                static_cast<unsigned long long>(m.entry_count()),
                static_cast<unsigned long long>(bytes));
  s += line;
  out(s);
  return ok;
}

int cmd_shard_scan(const std::string& manifest, bool verify, const std::string& format) {
  parse_format(format);
  auto fs = open_any(sqb::manifest_path(manifest), verify);
  return emit_scan(sqb::bench::scan_filesystem(*fs, sqb::target_kind::overlay, manifest), format);
}

int cmd_bench_gen(const sqb::bench::gen_spec& spec, const std::string& outdir) {
  auto c = sqb::bench::gen_tree(spec, outdir);
  json o;
  o["tree"] = outdir;
  o["entries"] = c.entries;
  o["files"] = c.files;
  o["dirs"] = c.dirs;
  o["bytes"] = c.bytes;
  o["max_depth"] = c.max_depth;
  o["subjects"] = c.subjects;
  out_line(o.dump());
  return ok;
}

int cmd_bench_scan(const std::vector<std::string>& targets, std::uint32_t passes,
                   std::uint32_t reps, bool no_trim, bool no_drop, const std::string& format,
                   const std::string& raw_file) {
  auto fmt = parse_format(format);
  sqb::bench::bench_config cfg;
  cfg.passes = passes;
  cfg.repetitions = reps;
  cfg.trim = !no_trim;
  cfg.drop_os_cache = !no_drop;
  cfg.cache_budget = cache_budget();
  for (auto& t : targets) cfg.targets.push_back(sqb::bench::make_target(t));
  std::size_t done = 0;
  std::size_t total = std::size_t(reps) * passes * targets.size();
  auto res = sqb::bench::run_suite(cfg, [&](const sqb::bench::scan_report& r) {
    ++done;
    info("[" + std::to_string(done) + "/" + std::to_string(total) + "] " + r.target + " " +
             r.pass_label() + " " + std::to_string(r.entries) + " entries " +
             sqb::bench::format_seconds(r.wall_seconds),
         2);
  });
  for (auto& n : res.notes) info("note: " + n);
  if (!raw_file.empty()) {
    std::vector<sqb::bench::report_row> raw;
    for (auto& r : res.raw) raw.push_back(sqb::bench::to_row(r));
    auto raw_fmt = fs::path(raw_file).extension() == ".csv" ? sqb::bench::report_format::csv
                                                            : sqb::bench::report_format::json;
    std::string text = sqb::bench::emit_report(raw, raw_fmt);
    std::FILE* f = std::fopen(raw_file.c_str(), "wb");
    if (!f) sqb::fail(sqb::errc::io_error, raw_file + ": " + std::strerror(errno));
    bool good = std::fwrite(text.data(), 1, text.size(), f) == text.size();
    good = std::fclose(f) == 0 && good;
    if (!good) sqb::fail(sqb::errc::io_error, raw_file + ": write failed");
  }
  std::vector<sqb::bench::report_row> rows;
  for (auto& c : res.summary) {
    if (c.runs > 0) rows.push_back(sqb::bench::to_row(c));
  }
  if (rows.empty()) {
    info("error: no repetition succeeded", 0);
    return io_error;
  }
  out(sqb::bench::emit_report(rows, fmt));
  return ok;
}

int cmd_bench_open(const std::string& manifest, const std::vector<std::string>& bundles,
                   bool no_drop, const std::string& format) {
  if (format != "json" && format != "table") throw usage_error("--format must be json or table");
  std::vector<fs::path> paths;
  if (!manifest.empty()) {
    auto mf = sqb::manifest_path(manifest);
    auto m = sqb::shard_manifest::load(mf);
    for (auto& s : m.shards) paths.push_back(mf.parent_path() / s.file);
  } else {
    paths.assign(bundles.begin(), bundles.end());
  }
  auto r = sqb::bench::open_bench(paths, !no_drop);
  auto slope = [](const std::optional<double>& s) -> json { return s ? json(*s) : json(nullptr); };
  if (format == "json") {
    json o;
    o["bundles"] = r.bundles.size();
    o["cold_total"] = r.cold_total;
    o["warm_total"] = r.warm_total;
    o["cold_merge_seconds"] = r.cold_merge_seconds;
    o["warm_merge_seconds"] = r.warm_merge_seconds;
    o["cold_slope"] = slope(r.cold_slope);
    o["warm_slope"] = slope(r.warm_slope);
    o["cold_seconds"] = r.cold_seconds;
    o["warm_seconds"] = r.warm_seconds;
    out(o.dump(2) + "\n");
    return ok;
  }
  auto sl = [](const std::optional<double>& s) {
    return s ? sqb::bench::format_seconds(*s) + " per bundle" : std::string("n/a");
  };
  std::string s;
  s += "bundles      " + std::to_string(r.bundles.size()) + "\n";
  s += "cold open    " + sqb::bench::format_seconds(r.cold_total) + " (slope " +
       sl(r.cold_slope) + ")\n";
  s += "warm reopen  " + sqb::bench::format_seconds(r.warm_total) + " (slope " +
       sl(r.warm_slope) + ")\n";
  out(s);
  return ok;
}

std::atomic<bool> g_stop{false};

extern "C" void on_signal(int) { g_stop.store(true); }

void install_stop_handlers() {
  struct sigaction sa{};
  sa.sa_handler = on_signal;
  sigemptyset(&sa.sa_mask);
  sigaction(SIGINT, &sa, nullptr);
  sigaction(SIGTERM, &sa, nullptr);
}

int cmd_serve(bool stdio, const std::string& listen, const std::string& manifest,
              const std::vector<std::string>& bundles, bool verify, const sqb::sftp::limits& lim,
              std::size_t max_sessions) {
  auto fs = open_sources(manifest, bundles, verify);
  if (stdio) {
    sqb::sftp::fd_transport t(STDIN_FILENO, STDOUT_FILENO);
    auto st = sqb::sftp::serve(*fs, t, lim);
    info("session: " + std::to_string(st.requests) + " requests, " +
             std::to_string(st.data_bytes) + " data bytes, " + std::to_string(st.denied) +
             " denied",
         2);
    return st.closed_on_violation ? data_error : ok;
  }
  sqb::sftp::tcp_listener l(listen);
  install_stop_handlers();
  auto host = listen.substr(0, listen.rfind(':'));
  info("listening on " + host + ":" + std::to_string(l.port()));
  sqb::sftp::serve_listener(*fs, l, lim, max_sessions, &g_stop);
  return ok;
}

int cmd_mount(const std::string& mountpoint, const std::string& manifest,
              const std::vector<std::string>& bundles, bool verify, bool allow_other) {
  auto fs = open_sources(manifest, bundles, verify);
  sqb::mount_options mo;
  mo.allow_other = allow_other;
  std::unique_ptr<sqb::mount_handle> h;
  try {
    h = sqb::mount(*fs, mountpoint, false, mo);
  } catch (const sqb::error& e) {
    if (e.code() == sqb::errc::facility_unavailable) {
      info(std::string("error: ") + e.what(), 0);
      std::string src = manifest.empty() ? "--bundle " + bundles.front() : "--manifest " + manifest;
      info("hint: without a mount, the same namespace is available with `sqb serve --stdio " +
               src + "`",
           0);
      return io_error;
    }
    throw;
  }
  install_stop_handlers();
  info("mounted on " + mountpoint + "; interrupt to unmount");
  std::atomic<bool> gone{false};
  std::thread waiter([&] {
    h->wait();
    gone.store(true);
  });
  while (!g_stop.load() && !gone.load()) ::usleep(100000);
  h->unmount();
  waiter.join();
  info("unmounted " + mountpoint);
  return ok;
}

std::string synopsis(CLI::App& app) {
  CLI::App* deepest = &app;
  for (;;) {
    auto subs = deepest->get_subcommands();
    if (subs.empty()) break;
    deepest = subs.front();
  }
  return deepest->help();
}

} // namespace

int main(int argc, char** argv) {
  std::signal(SIGPIPE, SIG_IGN);

  CLI::App app{"Pack directory trees into read-only bundles and read them back."};
  app.name("sqb");
  app.require_subcommand(1);
  app.fallthrough();
  int verbose = 0;
  bool quiet = false;
  app.add_flag("-v,--verbose", verbose, "More progress on stderr");
  app.add_flag("-q,--quiet", quiet, "Only errors on stderr");
  app.add_option("--cache-budget", g.cache_budget,
                 std::string("Block cache size, e.g. 64M (env ") + kBudgetEnv + ")");

  std::function<int()> run;

  // pack / verify
  std::string src, image, dest, target, path, format, output, dataset, manifest, listen;
  std::uint32_t block_size = 131072;
  std::string codec = "zlib";
  std::optional<std::uint32_t> mtime;
  unsigned jobs = 1;
  bool follow = false, force = false, longfmt = false, deref = false, verify = false;
  std::vector<std::string> paths, bundles, targets;

  auto* pack = app.add_subcommand("pack", "Pack a directory into a bundle image");
  pack->add_option("src", src, "Source directory")->required();
  pack->add_option("out", image, "Output .sqfs")->required();
  add_pack_flags(pack, block_size, codec, mtime, jobs, follow);
  pack->callback([&] {
    run = [&] { return cmd_pack(src, image, pack_opts(block_size, codec, mtime, jobs, follow)); };
  });

  auto* ver = app.add_subcommand("verify", "Compare a bundle against its source tree");
  ver->add_option("image", image, "Bundle")->required();
  ver->add_option("src", src, "Source directory")->required();
  ver->callback([&] { run = [&] { return cmd_verify(image, src); }; });

  // shard
  auto* shard = app.add_subcommand("shard", "Split a dataset into bundles of grouped members");
  shard->require_subcommand(1);
  std::uint32_t group = 20;

  auto* splan = shard->add_subcommand("plan", "Print the shard plan for a dataset");
  splan->add_option("src", src, "Dataset root")->required();
  splan->add_option("--group-size", group, "Members per shard")->capture_default_str();
  splan->add_option("--dataset", dataset, "Dataset name");
  splan->add_option("-o,--output", output, "Write the manifest here instead of stdout");
  splan->callback([&] { run = [&] { return cmd_shard_plan(src, group, dataset, output); }; });

  std::string plan_file;
  auto* spack = shard->add_subcommand("pack", "Build one bundle per shard plus manifest.json");
  spack->add_option("src", src, "Dataset root")->required();
  spack->add_option("out_dir", dest, "Output directory")->required();
  spack->add_option("--group-size", group, "Members per shard")->capture_default_str();
  spack->add_option("--dataset", dataset, "Dataset name");
  spack->add_option("--plan", plan_file, "Use this manifest's plan");
  add_pack_flags(spack, block_size, codec, mtime, jobs, follow);
  spack->callback([&] {
    run = [&] {
      return cmd_shard_pack(src, dest, group, dataset, plan_file,
                            pack_opts(block_size, codec, mtime, jobs, follow));
    };
  });

  auto* sls = shard->add_subcommand("ls", "List the shards of a manifest");
  sls->add_option("manifest", manifest, "manifest.json or its directory")->required();
  sls->add_option("--format", format, "table or json")
      ->check(CLI::IsMember({"table", "json"}))
      ->default_str("table");
  sls->callback([&] { run = [&] { return cmd_shard_ls(manifest, format == "json"); }; });

  auto* sscan = shard->add_subcommand("scan", "Count every entry of the overlaid shards");
  sscan->add_option("manifest", manifest, "manifest.json or its directory")->required();
  sscan->add_flag("--verify", verify, "Check bundle digests first");
  sscan->add_option("--format", format, "json, csv or table")->default_str("json");
  sscan->callback([&] {
    run = [&] { return cmd_shard_scan(manifest, verify, format.empty() ? "json" : format); };
  });

  // inspection
  auto* ls = app.add_subcommand("ls", "List a directory of a bundle or overlay");
  ls->add_option("target", target, "Bundle (.sqfs) or overlay directory")->required();
  ls->add_option("path", path, "Path inside the target")->default_str("/");
  ls->add_flag("-l,--long", longfmt, "Long listing");
  ls->add_option("--format", format, "plain or json")
      ->check(CLI::IsMember({"plain", "json"}))
      ->default_str("plain");
  ls->callback([&] {
    run = [&] { return cmd_ls(target, path.empty() ? "/" : path, longfmt, format == "json"); };
  });

  auto* st = app.add_subcommand("stat", "Show the attributes of one entry");
  st->add_option("target", target, "Bundle (.sqfs) or overlay directory")->required();
  st->add_option("path", path, "Path inside the target")->required();
  st->add_flag("-L,--dereference", deref, "Follow a final symlink");
  st->add_option("--format", format, "plain or json")
      ->check(CLI::IsMember({"plain", "json"}))
      ->default_str("plain");
  st->callback([&] { run = [&] { return cmd_stat(target, path, deref, format == "json"); }; });

  auto* cat = app.add_subcommand("cat", "Write file contents to stdout");
  cat->add_option("target", target, "Bundle (.sqfs) or overlay directory")->required();
  cat->add_option("paths", paths, "Files inside the target")->required();
  cat->callback([&] { run = [&] { return cmd_cat(target, paths); }; });

  auto* ex = app.add_subcommand("extract", "Copy a subtree out of a bundle or overlay");
  ex->add_option("target", target, "Bundle (.sqfs) or overlay directory")->required();
  ex->add_option("path", path, "Path inside the target")->required();
  ex->add_option("dest", dest, "Destination directory")->required();
  ex->add_flag("--force", force, "Overwrite existing files");
  ex->callback([&] { run = [&] { return cmd_extract(target, path, dest, force); }; });

  auto* scan = app.add_subcommand("scan", "Count every entry of a tree, bundle or overlay");
  scan->add_option("target", target, "Directory, bundle or overlay")->required();
  scan->add_option("--format", format, "json, csv or table")->default_str("json");
  scan->callback([&] { run = [&] { return cmd_scan(target, format.empty() ? "json" : format); }; });

  // bench
  auto* bench = app.add_subcommand("bench", "Metadata scan benchmarks");
  bench->require_subcommand(1);

  sqb::bench::gen_spec gspec;
  auto* bgen = bench->add_subcommand("gen", "Generate a synthetic tree");
  bgen->add_option("--entries", gspec.entries, "Exact entry count, root included")->required();
  bgen->add_option("--depth", gspec.max_depth, "Maximum depth")->capture_default_str();
  bgen->add_option("--seed", gspec.seed, "Random seed")->capture_default_str();
  bgen->add_option("--subjects", gspec.subjects, "Top-level subject directories");
  bgen->add_option("--dir-fraction", gspec.dir_fraction, "Share of directories")
      ->capture_default_str();
  bgen->add_option("--max-size", gspec.max_file_size, "Largest file in bytes")
      ->capture_default_str();
  bgen->add_option("out", dest, "Output directory (must not exist)")->required();
  bgen->callback([&] { run = [&] { return cmd_bench_gen(gspec, dest); }; });

  std::uint32_t passes = 2, reps = 42;
  bool no_trim = false, no_drop = false;
  std::string raw_file;
  auto* bscan = bench->add_subcommand("scan", "Repeated cold/warm scans");
  bscan->add_option("targets", targets, "Directories, bundles or overlays")->required();
  bscan->add_option("--passes", passes, "Scans per repetition")->capture_default_str();
  bscan->add_option("--reps", reps, "Repetitions")->capture_default_str();
  bscan->add_flag("--no-trim", no_trim, "Average without dropping min and max");
  bscan->add_flag("--no-drop-cache", no_drop, "Leave the OS page cache alone");
  bscan->add_option("--format", format, "json, csv or table")->default_str("table");
  bscan->add_option("--raw", raw_file, "Write every run here (csv by extension, else json)");
  bscan->callback([&] {
    run = [&] {
      return cmd_bench_scan(targets, passes, reps, no_trim, no_drop,
                            format.empty() ? "table" : format, raw_file);
    };
  });

  auto* bopen = bench->add_subcommand("open", "Cold and warm bundle open times");
  auto* bo_m = bopen->add_option("--manifest", manifest, "manifest.json or its directory");
  auto* bo_b = bopen->add_option("bundles", bundles, "Bundles");
  bo_m->excludes(bo_b);
  bopen->add_flag("--no-drop-cache", no_drop, "Leave the OS page cache alone");
  bopen->add_option("--format", format, "json or table")->default_str("table");
  bopen->callback([&] {
    if (manifest.empty() && bundles.empty()) throw CLI::RequiredError("--manifest or bundles");
    run = [&] { return cmd_bench_open(manifest, bundles, no_drop, format.empty() ? "table" : format); };
  });

  // serve / mount
  bool stdio = false;
  sqb::sftp::limits lim;
  std::size_t max_sessions = 0;
  auto* serve = app.add_subcommand("serve", "Serve a bundle or overlay over SFTP v3");
  auto* sv_stdio = serve->add_flag("--stdio", stdio, "One session on stdin/stdout");
  auto* sv_listen = serve->add_option("--listen", listen, "host:port for plain TCP");
  sv_stdio->excludes(sv_listen);
  auto* sv_m = serve->add_option("--manifest", manifest, "Overlay manifest");
  auto* sv_b = serve->add_option("--bundle", bundles, "Bundle (repeatable)");
  sv_m->excludes(sv_b);
  serve->add_flag("--verify", verify, "Check manifest digests on open");
  serve->add_option("--max-read", lim.max_read, "Largest READ reply")->capture_default_str();
  serve->add_option("--max-handles", lim.max_handles, "Open handles per session")
      ->capture_default_str();
  serve->add_option("--max-sessions", max_sessions, "Exit after this many sessions (0: never)");
  serve->callback([&] {
    if (!stdio && listen.empty()) throw CLI::RequiredError("--stdio or --listen");
    if (manifest.empty() && bundles.empty()) throw CLI::RequiredError("--manifest or --bundle");
    run = [&] { return cmd_serve(stdio, listen, manifest, bundles, verify, lim, max_sessions); };
  });

  std::string mountpoint;
  bool allow_other = false;
  auto* mnt = app.add_subcommand("mount", "Mount a bundle or overlay read-only");
  mnt->add_option("mountpoint", mountpoint, "Empty directory")->required();
  auto* mn_m = mnt->add_option("--manifest", manifest, "Overlay manifest");
  auto* mn_b = mnt->add_option("--bundle", bundles, "Bundle (repeatable)");
  mn_m->excludes(mn_b);
  mnt->add_flag("--verify", verify, "Check manifest digests on open");
  mnt->add_flag("--allow-other", allow_other, "Let other users see the mount");
  mnt->callback([&] {
    if (manifest.empty() && bundles.empty()) throw CLI::RequiredError("--manifest or --bundle");
    run = [&] { return cmd_mount(mountpoint, manifest, bundles, verify, allow_other); };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "sqb: " << e.what() << "\n\n" << synopsis(app);
    return usage;
  }

  g.verbosity = quiet ? 0 : 1 + verbose;
  try {
    return run ? run() : usage;
  } catch (const pipe_closed&) {
    return ok;
  } catch (const usage_error& e) {
    std::cerr << "sqb: " << e.what() << "\n\n" << synopsis(app);
    return usage;
  } catch (const sqb::error& e) {
    std::cerr << "sqb: " << e.what() << '\n';
    if (e.code() == sqb::errc::invalid_argument) return usage;
    return sqb::is_io_error(e.code()) ? io_error : data_error;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "sqb: " << e.what() << '\n';
    return io_error;
  } catch (const std::system_error& e) {
    std::cerr << "sqb: " << e.what() << '\n';
    return io_error;
  } catch (const std::exception& e) {
    std::cerr << "sqb: " << e.what() << '\n';
    return data_error;
  }
}
