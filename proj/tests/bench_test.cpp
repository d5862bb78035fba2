#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include <nlohmann/json.hpp>

#include "sqb/bench.hpp"
#include "sqb/digest.hpp"
#include "sqb/overlay.hpp"
#include "sqb/packer.hpp"
#include "sqb/reader.hpp"
#include "support.hpp"

namespace sqb {
namespace {

namespace fs = std::filesystem;
using namespace bench;

std::pair<int, std::string> run_capture(const std::string& cmd) {
  std::string out;
  FILE* p = ::popen((cmd + " 2>&1").c_str(), "r");
  if (!p) return {-1, ""};
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, p)) out.append(buf, n);
  int st = ::pclose(p);
  return {WIFEXITED(st) ? WEXITSTATUS(st) : -1, out};
}

template <class F>
errc error_of(F&& f) {
  try {
    f();
  } catch (const error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return errc::io_error;
}

// HCP figures: files, directories, scanned entries.
constexpr std::uint64_t kHcpFiles = 15716005;
constexpr std::uint64_t kHcpDirs = 940082;
constexpr std::uint64_t kHcpEntries = 16656087;
constexpr std::uint64_t kSubsetEntries = 186432;

TEST(BenchArithmetic, FullScaleEntryIdentity) {
  EXPECT_EQ(kHcpFiles + kHcpDirs, kHcpEntries);
}

TEST(BenchArithmetic, HcpRatesAreInternallyConsistent) {
  struct cell {
    std::uint64_t entries;
    double seconds;
    double rate;
  };
  const cell cells[] = {
      {kSubsetEntries, 12.9, 14.5e3}, {kSubsetEntries, 2.1, 88.4e3}, {kHcpEntries, 147.4, 113.0e3},
      {kSubsetEntries, 5.0, 37.2e3},  {kSubsetEntries, 0.6, 309.3e3}, {kHcpEntries, 66.9, 248.8e3},
  };
  for (auto& c : cells) {
    double derived = double(c.entries) / c.seconds;
    EXPECT_LE(std::fabs(derived - c.rate) / c.rate, 0.005) << c.entries << " / " << c.seconds;
  }
}

TEST(BenchFormat, Rates) {
  EXPECT_EQ(format_rate(186432 / 12.9), "14.5K");
  EXPECT_EQ(format_rate(16656087 / 147.4), "113K");
  EXPECT_EQ(format_rate(186432 / 0.6), "311K");
  EXPECT_EQ(format_rate(999.0), "999");
  EXPECT_EQ(format_rate(1234.0), "1.23K");
  EXPECT_EQ(format_rate(2.5e6), "2.5M");
  EXPECT_EQ(format_count(186432), "186,432");
  EXPECT_EQ(format_count(16656087), "16,656,087");
  EXPECT_EQ(format_count(7), "7");
  EXPECT_EQ(format_seconds(12.9), "12.9 seconds");
}

TEST(BenchTrim, DropsExactlyMinAndMax) {
  EXPECT_DOUBLE_EQ(trimmed_mean({3, 1, 2}), 2.0);
  std::vector<double> v(40, 1.0);
  v.push_back(1000.0); // injected outlier
  v.push_back(0.5);
  std::shuffle(v.begin(), v.end(), std::mt19937_64(4));
  EXPECT_DOUBLE_EQ(trimmed_mean(v), 1.0);
  EXPECT_EQ(error_of([] { trimmed_mean({1, 2}); }), errc::invalid_argument);
}

std::string listing_digest(const fs::path& root) {
  std::vector<std::string> lines;
  for (auto it = fs::recursive_directory_iterator(root); it != fs::recursive_directory_iterator(); ++it) {
    struct stat st{};
    ::lstat(it->path().c_str(), &st);
    std::string line = it->path().lexically_relative(root).string() + " " + std::to_string(st.st_mode) +
                       " " + std::to_string(st.st_size) + " " + std::to_string(st.st_mtime);
    if (S_ISREG(st.st_mode)) line += " " + sha256_file(it->path());
    lines.push_back(line);
  }
  std::sort(lines.begin(), lines.end());
  std::string all;
  for (auto& l : lines) all += l + "\n";
  return sha256_hex(as_bytes(all));
}

std::uint32_t host_max_depth(const fs::path& root) {
  std::uint32_t d = 0;
  for (auto it = fs::recursive_directory_iterator(root); it != fs::recursive_directory_iterator(); ++it) {
    d = std::max<std::uint32_t>(d, static_cast<std::uint32_t>(it.depth()) + 1);
  }
  return d;
}

TEST(BenchGen, SingleEntryIsEmptyRoot) {
  test::scratch_dir d;
  auto c = gen_tree({.entries = 1}, d / "t");
  EXPECT_EQ(c.entries, 1u);
  EXPECT_TRUE(fs::is_directory(d / "t"));
  EXPECT_TRUE(fs::is_empty(d / "t"));
  EXPECT_EQ(read_sidecar(d / "t").entries, 1u);
  EXPECT_TRUE(fs::exists(d / "t.json"));
}

TEST(BenchGen, ExactCountsAndShape) {
  test::scratch_dir d;
  auto c = gen_tree({.entries = 5000, .max_depth = 7, .dir_fraction = 0.0565, .seed = 1}, d / "t");
  EXPECT_EQ(test::count_host_entries(d / "t"), 5000u);
  EXPECT_EQ(c.entries, 5000u);
  EXPECT_EQ(host_max_depth(d / "t"), 7u);
  EXPECT_EQ(c.max_depth, 7u);
  std::uint64_t dirs = 1;
  for (auto& e : fs::recursive_directory_iterator(d / "t")) dirs += e.is_directory() ? 1 : 0;
  EXPECT_EQ(dirs, 283u); // round(5000 * 0.0565)
  EXPECT_EQ(c.dirs, dirs);
  auto side = read_sidecar(d / "t");
  EXPECT_EQ(side.files + side.dirs, side.entries);
}

TEST(BenchGen, Deterministic) {
  test::scratch_dir d;
  gen_spec s{.entries = 800, .max_depth = 5, .seed = 9};
  gen_tree(s, d / "a");
  gen_tree(s, d / "b");
  s.seed = 10;
  gen_tree(s, d / "c");
  EXPECT_EQ(listing_digest(d / "a"), listing_digest(d / "b"));
  EXPECT_NE(listing_digest(d / "a"), listing_digest(d / "c"));
}

TEST(BenchGen, SubjectsAtRoot) {
  test::scratch_dir d;
  gen_tree({.entries = 2000, .max_depth = 6, .subjects = 45}, d / "t");
  std::size_t n = 0;
  for (auto& e : fs::directory_iterator(d / "t")) {
    EXPECT_TRUE(e.is_directory());
    ++n;
  }
  EXPECT_EQ(n, 45u);
  EXPECT_EQ(test::count_host_entries(d / "t"), 2000u);
  EXPECT_EQ(shard_plan(d / "t", 20).shards.size(), 3u);
}

TEST(BenchGen, Errors) {
  test::scratch_dir d;
  EXPECT_EQ(error_of([&] { gen_tree({.entries = 0}, d / "x"); }), errc::invalid_argument);
  EXPECT_EQ(error_of([&] { gen_tree({.entries = 5, .subjects = 10}, d / "x"); }),
            errc::invalid_argument);
  fs::create_directories(d / "exists");
  EXPECT_EQ(error_of([&] { gen_tree({.entries = 3}, d / "exists"); }), errc::already_exists);
}

class BenchTargets : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new test::scratch_dir("bench");
    counts_ = gen_tree({.entries = 3000, .max_depth = 6, .seed = 2, .subjects = 45}, *dir_ / "tree");
    auto tree = scan_source(*dir_ / "tree", {});
    pack(tree, {}, *dir_ / "tree.sqfs");
    pack_shards(shard_plan(*dir_ / "tree", 20), *dir_ / "tree", *dir_ / "shards", {});
  }
  static void TearDownTestSuite() { delete dir_; }

  static inline test::scratch_dir* dir_ = nullptr;
  static inline gen_counts counts_;
};

TEST_F(BenchTargets, EntryCountInvariance) {
  auto h = scan_host(*dir_ / "tree");
  auto b = bundle_reader::open(*dir_ / "tree.sqfs");
  auto sb = scan_filesystem(*b, target_kind::bundle, "bundle");
  auto o = overlay_reader::open_manifest(*dir_ / "shards/manifest.json");
  EXPECT_EQ(o->layer_count(), 3u);
  auto so = scan_filesystem(*o, target_kind::overlay, "overlay");
  EXPECT_EQ(h.entries, counts_.entries);
  EXPECT_EQ(sb.entries, counts_.entries);
  EXPECT_EQ(so.entries, counts_.entries);
  for (auto* r : {&h, &sb, &so}) {
    EXPECT_TRUE(r->ok);
    EXPECT_GT(r->wall_seconds, 0);
    EXPECT_NEAR(r->entries_per_sec * r->wall_seconds, double(r->entries), 0.005 * double(r->entries));
  }
}

TEST_F(BenchTargets, EmptyDirectoryScan) {
  test::scratch_dir d;
  auto r = scan_host(d.path());
  EXPECT_EQ(r.entries, 1u);
  EXPECT_GT(r.wall_seconds, 0);
}

TEST_F(BenchTargets, MissingHostTargetReportsPartialFailure) {
  auto r = scan_host(*dir_ / "nope");
  EXPECT_FALSE(r.ok);
  EXPECT_EQ(r.entries, 0u);
}

TEST_F(BenchTargets, DetectTargets) {
  EXPECT_EQ(detect_target(*dir_ / "tree"), target_kind::host);
  EXPECT_EQ(detect_target(*dir_ / "tree.sqfs"), target_kind::bundle);
  EXPECT_EQ(detect_target(*dir_ / "shards"), target_kind::overlay);
  EXPECT_EQ(detect_target(*dir_ / "shards/manifest.json"), target_kind::overlay);
  test::scratch_dir d;
  fs::create_directories(d / "odd.sqfs");
  test::write_file(d / "odd.sqfs/manifest.json", "{}");
  EXPECT_EQ(error_of([&] { detect_target(d / "odd.sqfs"); }), errc::invalid_argument);
  EXPECT_EQ(error_of([&] { detect_target(d / "missing"); }), errc::not_found);
}

TEST_F(BenchTargets, WarmPassHitsCacheOnly) {
  bench_config cfg;
  cfg.repetitions = 3;
  cfg.targets = {make_target(*dir_ / "tree.sqfs", "bundle")};
  auto res = run_suite(cfg);
  ASSERT_EQ(res.raw.size(), 6u);
  for (std::size_t i = 0; i < res.raw.size(); i += 2) {
    const auto& cold = res.raw[i].cache;
    const auto& warm = res.raw[i + 1].cache;
    EXPECT_GT(cold.metadata_misses, 0u);
    // The second pass adds no misses: everything came from the cache.
    EXPECT_EQ(warm.metadata_misses, cold.metadata_misses);
    EXPECT_GT(warm.metadata_hits, cold.metadata_hits);
  }
}

TEST_F(BenchTargets, SuiteTrimsAndSummarises) {
  bench_config cfg;
  cfg.repetitions = 42;
  cfg.targets = {make_target(*dir_ / "tree", "host"), make_target(*dir_ / "tree.sqfs", "bundle"),
                 make_target(*dir_ / "shards", "overlay")};
  std::size_t streamed = 0;
  auto res = run_suite(cfg, [&](const scan_report&) { ++streamed; });
  EXPECT_EQ(res.raw.size(), 42u * 3 * 2);
  EXPECT_EQ(streamed, res.raw.size());
  ASSERT_EQ(res.summary.size(), 6u);
  for (auto& c : res.summary) {
    EXPECT_EQ(c.runs, 42u);
    EXPECT_EQ(c.averaged, 40u);
    EXPECT_EQ(c.entries, counts_.entries);
    EXPECT_LE(std::fabs(c.entries_per_sec - c.mean_rate) / c.mean_rate, 0.05) << c.target;
  }
  EXPECT_EQ(res.summary[0].pass_label, "ambient");
  EXPECT_EQ(res.summary[1].pass_label, "warm");
  EXPECT_EQ(res.summary[2].pass_label, "cold");
  for (auto& r : res.raw) {
    EXPECT_NEAR(r.entries_per_sec, double(r.entries) / r.wall_seconds,
                0.005 * double(r.entries) / r.wall_seconds);
  }
}

TEST_F(BenchTargets, TrimFloorAndMinimum) {
  bench_config cfg;
  cfg.repetitions = 3;
  cfg.targets = {make_target(*dir_ / "tree.sqfs")};
  auto res = run_suite(cfg);
  EXPECT_EQ(res.summary[0].averaged, 1u);
  cfg.repetitions = 2;
  EXPECT_EQ(error_of([&] { run_suite(cfg); }), errc::invalid_argument);
}

TEST_F(BenchTargets, FailedRepetitionsExcluded) {
  test::scratch_dir d;
  fs::copy_file(*dir_ / "tree.sqfs", d / "gone.sqfs");
  bench_config cfg;
  cfg.repetitions = 3;
  cfg.targets = {make_target(d / "gone.sqfs")};
  fs::remove(d / "gone.sqfs");
  auto res = run_suite(cfg);
  EXPECT_EQ(res.summary[0].runs, 0u);
  EXPECT_GE(res.notes.size(), 3u);
}

TEST_F(BenchTargets, OpenBench) {
  std::vector<fs::path> bundles;
  for (auto& s : shard_manifest::load(*dir_ / "shards/manifest.json").shards) {
    bundles.push_back(*dir_ / "shards" / s.file);
  }
  auto one = open_bench({bundles[0]});
  EXPECT_FALSE(one.cold_slope.has_value());
  EXPECT_EQ(one.cold_seconds.size(), 1u);
  auto all = open_bench(bundles);
  EXPECT_TRUE(all.cold_slope.has_value());
  EXPECT_TRUE(all.warm_slope.has_value());
  EXPECT_EQ(all.warm_seconds.size(), 3u);
  EXPECT_GT(all.warm_total, 0);
  EXPECT_EQ(error_of([] { open_bench({}); }), errc::empty_overlay);
}

TEST(BenchSlope, LinearFit) {
  auto s = cumulative_slope({0.5, 0.5, 0.5, 0.5});
  ASSERT_TRUE(s);
  EXPECT_NEAR(*s, 0.5, 1e-12);
  EXPECT_FALSE(cumulative_slope({1.0}));
}

std::vector<report_row> table2_rows() {
  return {{"subset-host", 1, 186432, 12.9, 186432 / 12.9, target_kind::host},
          {"subset-host", 2, 186432, 5.0, 186432 / 5.0, target_kind::host},
          {"subset-bundle", 1, 186432, 2.1, 186432 / 2.1, target_kind::bundle},
          {"subset-bundle", 2, 186432, 0.6, 186432 / 0.6, target_kind::bundle},
          {"full, overlay", 1, 16656087, 147.4, 16656087 / 147.4, target_kind::overlay},
          {"full, overlay", 2, 16656087, 66.9, 16656087 / 66.9, target_kind::overlay}};
}

TEST(BenchReport, SingleRowJson) {
  auto text = emit_report({{"t", 1, 10, 0.5, 20, target_kind::bundle}}, report_format::json);
  auto j = nlohmann::ordered_json::parse(text);
  ASSERT_TRUE(j.is_array());
  ASSERT_EQ(j.size(), 1u);
  std::vector<std::string> keys;
  for (auto& [k, v] : j[0].items()) keys.push_back(k);
  EXPECT_EQ(keys, (std::vector<std::string>{"target", "pass", "entries", "wall_seconds",
                                            "entries_per_sec", "kind"}));
  EXPECT_EQ(j[0]["entries"], 10);
  EXPECT_EQ(error_of([] { emit_report({}, report_format::json); }), errc::invalid_argument);
}

TEST(BenchReport, TableMirrorsHcpLayout) {
  auto t = emit_report(table2_rows(), report_format::table);
  std::size_t cells = 0;
  for (std::size_t p = t.find("entries/s"); p != std::string::npos; p = t.find("entries/s", p + 1)) ++cells;
  EXPECT_EQ(cells, 6u);
  EXPECT_NE(t.find("14.5K entries/s"), std::string::npos);
  EXPECT_NE(t.find("113K entries/s"), std::string::npos);
  EXPECT_NE(t.find("16,656,087"), std::string::npos);
  EXPECT_NE(t.find("Scan 1"), std::string::npos);
  EXPECT_NE(t.find("Scan 2"), std::string::npos);
  EXPECT_NE(t.find("ambient"), std::string::npos);
  // Targets are columns: the header line names all three.
  auto header = t.substr(0, t.find('\n'));
  EXPECT_NE(header.find("subset-host"), std::string::npos);
  EXPECT_NE(header.find("full, overlay"), std::string::npos);
}

TEST(BenchReport, CsvRoundTripsThroughPythonCsv) {
  if (run_capture("python3 -c pass").first != 0) GTEST_SKIP() << "python3 not available";
  test::scratch_dir d;
  auto rows = table2_rows();
  test::write_file(d / "r.csv", emit_report(rows, report_format::csv));
  auto [status, output] = run_capture(
      "python3 -c 'import csv,json,sys; print(json.dumps(list(csv.reader(open(sys.argv[1], "
      "newline=\"\")))))' '" + (d / "r.csv").string() + "'");
  ASSERT_EQ(status, 0) << output;
  auto j = nlohmann::json::parse(output);
  ASSERT_EQ(j.size(), rows.size() + 1);
  EXPECT_EQ(j[0][0], "target");
  EXPECT_EQ(j[0][4], "entries_per_sec");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto& r = j[i + 1];
    EXPECT_EQ(r[0], rows[i].target);
    EXPECT_EQ(std::stoul(r[1].get<std::string>()), rows[i].pass);
    EXPECT_EQ(std::stoull(r[2].get<std::string>()), rows[i].entries);
    EXPECT_EQ(std::stod(r[3].get<std::string>()), rows[i].wall_seconds);
    EXPECT_EQ(std::stod(r[4].get<std::string>()), rows[i].entries_per_sec);
  }
}

} // namespace
} // namespace sqb
