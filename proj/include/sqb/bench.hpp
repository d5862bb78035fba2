#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sqb/cache.hpp"
#include "sqb/target.hpp"
#include "sqb/vfs.hpp"

namespace sqb::bench {

struct gen_spec {
  std::uint64_t entries = 1;   ///< exact, root included
  std::uint32_t max_depth = 7; ///< deepest entry's component count
  double dir_fraction = 0.0565;
  std::uint64_t max_file_size = 512; ///< sizes uniform in [0, max]
  std::uint64_t seed = 1;
  /// When non-zero, the root holds exactly this many subject directories
  /// and everything else lives below them.
  std::uint32_t subjects = 0;
  std::uint32_t mtime = 1500000000;
};

struct gen_counts {
  std::uint64_t entries = 0;
  std::uint64_t files = 0;
  std::uint64_t dirs = 0; ///< root included
  std::uint64_t bytes = 0;
  std::uint32_t max_depth = 0;
  std::uint32_t subjects = 0;
};

/// Builds a deterministic synthetic tree at `out` (which must not exist)
/// and writes the ground-truth counts to sidecar_path(out).
/// InvalidArgument for an infeasible spec; DiskFull when space runs out.
gen_counts gen_tree(const gen_spec& spec, const std::filesystem::path& out);

std::filesystem::path sidecar_path(const std::filesystem::path& tree);
gen_counts read_sidecar(const std::filesystem::path& tree);

struct scan_target {
  target_kind kind = target_kind::host;
  std::filesystem::path path;
  std::string label; ///< defaults to the path
};

scan_target make_target(const std::filesystem::path& path, std::string label = {});

struct scan_report {
  std::string target;
  target_kind kind = target_kind::host;
  std::uint32_t pass = 1;
  std::uint64_t entries = 0;
  double wall_seconds = 0;
  double entries_per_sec = 0;
  cache_stats cache;
  std::string timestamp;
  std::string host;
  bool ok = true;
  std::string error; ///< set when !ok; entries then holds the partial count

  /// "cold", "warm", or "ambient" for a host first pass.
  std::string pass_label() const;
};

/// Counts every entry (root included) touching name and attributes.
/// Host trees are read with readdir + lstat; bundles and overlays with walk.
scan_report scan_host(const std::filesystem::path& root, std::string label = {});
scan_report scan_filesystem(const filesystem& fs, target_kind kind, std::string label);

/// "uname" style descriptor of the machine running the measurement.
std::string host_descriptor();

/// Best-effort, unprivileged page-cache drop for one file.
void advise_drop(const std::filesystem::path& file);

/// Drops one minimum and one maximum and averages the rest.
/// InvalidArgument for fewer than three values.
double trimmed_mean(std::vector<double> values);

/// Rate with a K (or M) suffix at three significant figures: "14.5K".
std::string format_rate(double entries_per_sec);
std::string format_seconds(double seconds);
/// Thousands separators: "186,432".
std::string format_count(std::uint64_t n);

struct bench_config {
  std::uint32_t repetitions = 42;
  bool trim = true;
  std::uint32_t passes = 2;
  std::vector<scan_target> targets;
  bool drop_os_cache = true;
  std::uint64_t cache_budget = block_cache::kDefaultBudget;
};

struct suite_cell {
  std::string target;
  target_kind kind = target_kind::host;
  std::uint32_t pass = 1;
  std::string pass_label;
  std::uint64_t entries = 0;
  std::size_t runs = 0;      ///< successful repetitions
  std::size_t averaged = 0;  ///< values left after trimming
  double mean_wall = 0;      ///< trimmed
  double entries_per_sec = 0; ///< entries / mean_wall
  double mean_rate = 0;       ///< trimmed mean of per-run rates
  double median_wall = 0;
};

struct suite_result {
  std::vector<suite_cell> summary; ///< target-major, then pass
  std::vector<scan_report> raw;
  std::vector<std::string> notes;
};

/// For each repetition and target: cold reset, then `passes` scans in a
/// row. Failed repetitions are excluded with a note.
suite_result run_suite(const bench_config& cfg,
                       const std::function<void(const scan_report&)>& on_row = {});

struct open_bench_result {
  std::vector<std::string> bundles;
  std::vector<double> cold_seconds; ///< per bundle
  std::vector<double> warm_seconds;
  double cold_merge_seconds = 0;
  double warm_merge_seconds = 0;
  double cold_total = 0; ///< opens plus merge
  double warm_total = 0;
  /// Least-squares slope of cumulative open time against bundle count;
  /// undefined for a single bundle.
  std::optional<double> cold_slope;
  std::optional<double> warm_slope;
};

/// Cold: page cache advised away and fresh readers. Warm: immediate reopen.
open_bench_result open_bench(const std::vector<std::filesystem::path>& bundles,
                             bool drop_os_cache = true);

std::optional<double> cumulative_slope(const std::vector<double>& per_item);

struct report_row {
  std::string target;
  std::uint32_t pass = 1;
  std::uint64_t entries = 0;
  double wall_seconds = 0;
  double entries_per_sec = 0;
  target_kind kind = target_kind::host;
};

report_row to_row(const scan_report& r);
report_row to_row(const suite_cell& c);

enum class report_format : std::uint8_t { json, csv, table };
report_format parse_report_format(std::string_view name);

/// Columns: target, pass, entries, wall_seconds, entries_per_sec, kind.
/// The table puts targets in columns and passes in rows.
/// InvalidArgument for an empty row set.
std::string emit_report(const std::vector<report_row>& rows, report_format format);

} // namespace sqb::bench
