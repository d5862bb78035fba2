#include "sqb/overlay.hpp"

#include <sys/stat.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <dirent.h>

#include <nlohmann/json.hpp>

#include "sqb/digest.hpp"

namespace sqb {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Manifest

std::uint64_t shard_manifest::member_count() const noexcept {
  std::uint64_t n = 0;
  for (const auto& s : shards) n += s.members.size();
  return n;
}

std::uint64_t shard_manifest::entry_count() const noexcept {
  std::uint64_t n = 1;
  for (const auto& s : shards) n += s.entries;
  return n;
}

std::string shard_manifest::to_json() const {
  json j;
  j["version"] = kVersion;
  j["dataset"] = dataset;
  j["group_size"] = group_size;
  j["assignment"] = assignment;
  j["created"] = created;
  json arr = json::array();
  for (const auto& s : shards) {
    json e;
    e["file"] = s.file;
    e["members"] = s.members;
    e["entries"] = s.entries;
    e["bytes"] = s.bytes;
    e["sha256"] = s.sha256;
    arr.push_back(std::move(e));
  }
  j["shards"] = std::move(arr);
  try {
    return j.dump(2) + "\n";
  } catch (const json::type_error&) {
    fail(errc::bad_name, "manifest names must be valid UTF-8");
  }
}

namespace {

[[noreturn]] void bad_manifest(const std::string& why) {
  fail(errc::bad_manifest, why);
}

template <class T>
T field(const json& j, const char* name) {
  if (!j.contains(name)) bad_manifest(std::string("missing field \"") + name + "\"");
  try {
    return j.at(name).get<T>();
  } catch (const json::exception&) {
    bad_manifest(std::string("field \"") + name + "\" has the wrong type");
  }
}

bool safe_file_name(const std::string& name) {
  return !name.empty() && name != "." && name != ".." &&
         name.find('/') == std::string::npos && name.find('\0') == std::string::npos;
}

} // namespace

shard_manifest shard_manifest::from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    bad_manifest(std::string("not JSON: ") + e.what());
  }
  if (!j.is_object()) bad_manifest("top level is not an object");
  auto version = field<int>(j, "version");
  if (version != kVersion) {
    bad_manifest("unsupported manifest version " + std::to_string(version));
  }
  shard_manifest m;
  m.dataset = field<std::string>(j, "dataset");
  m.group_size = field<std::uint32_t>(j, "group_size");
  if (m.group_size == 0) bad_manifest("group_size is zero");
  if (j.contains("created")) m.created = field<std::uint32_t>(j, "created");
  if (j.contains("assignment")) m.assignment = field<std::string>(j, "assignment");
  if (!j.contains("shards") || !j["shards"].is_array()) bad_manifest("missing shard list");
  std::map<std::string, bool> seen_members, seen_files;
  for (const auto& s : j["shards"]) {
    if (!s.is_object()) bad_manifest("shard is not an object");
    shard_entry e;
    e.file = field<std::string>(s, "file");
    e.members = field<std::vector<std::string>>(s, "members");
    e.entries = field<std::uint64_t>(s, "entries");
    e.bytes = field<std::uint64_t>(s, "bytes");
    e.sha256 = field<std::string>(s, "sha256");
    if (!safe_file_name(e.file)) bad_manifest("bundle name \"" + e.file + "\" is not a plain file name");
    if (seen_files[e.file]) bad_manifest("bundle \"" + e.file + "\" listed twice");
    seen_files[e.file] = true;
    if (e.members.empty() || e.members.size() > m.group_size) {
      bad_manifest("shard " + e.file + " has " + std::to_string(e.members.size()) +
                   " members (group size " + std::to_string(m.group_size) + ")");
    }
    for (const auto& name : e.members) {
      if (seen_members[name]) bad_manifest("member \"" + name + "\" appears in two shards");
      seen_members[name] = true;
    }
    m.shards.push_back(std::move(e));
  }
  return m;
}

shard_manifest shard_manifest::load(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) fail(errc::io_error, file.string() + ": cannot open manifest");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return from_json(ss.str());
  } catch (const error& e) {
    fail(e.code(), file.string() + ": " + e.what());
  }
}

void shard_manifest::save(const fs::path& file) const {
  fs::path tmp = file;
  tmp += ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(errc::io_error, tmp.string() + ": cannot write manifest");
    out << to_json();
    if (!out.flush()) fail(errc::io_error, tmp.string() + ": write failed");
  }
  std::error_code ec;
  fs::rename(tmp, file, ec);
  if (ec) fail(errc::io_error, file.string() + ": " + ec.message());
}

std::string shard_file_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "shard-%04zu.sqfs", index);
  return buf;
}

// ---------------------------------------------------------------------------
// Planning and packing

shard_manifest shard_plan(const fs::path& root, std::uint32_t group_size,
                          std::string dataset) {
  if (group_size == 0) fail(errc::invalid_argument, "group size must be at least 1");
  struct stat st {};
  if (::stat(root.c_str(), &st) != 0) {
    fail(errc::unreadable, root.string() + ": cannot stat");
  }
  if (!S_ISDIR(st.st_mode)) fail(errc::not_a_directory, root.string());
  DIR* d = ::opendir(root.c_str());
  if (!d) fail(errc::unreadable, root.string() + ": cannot list");
  std::vector<std::string> names;
  while (dirent* e = ::readdir(d)) {
    std::string_view n = e->d_name;
    if (n != "." && n != "..") names.emplace_back(n);
  }
  ::closedir(d);
  if (names.empty()) fail(errc::empty_dataset, root.string() + " has no entries");
  std::sort(names.begin(), names.end());

  shard_manifest m;
  m.dataset = dataset.empty() ? fs::absolute(root).lexically_normal().filename().string()
                              : std::move(dataset);
  if (m.dataset.empty()) m.dataset = "dataset";
  m.group_size = group_size;
  m.created = static_cast<std::uint32_t>(st.st_mtim.tv_sec);
  for (std::size_t i = 0; i < names.size(); i += group_size) {
    shard_entry s;
    s.file = shard_file_name(m.shards.size());
    auto end = std::min(names.size(), i + group_size);
    s.members.assign(names.begin() + static_cast<long>(i), names.begin() + static_cast<long>(end));
    m.shards.push_back(std::move(s));
  }
  return m;
}

shard_pack_report pack_shards(shard_manifest manifest, const fs::path& src,
                              const fs::path& out_dir, const pack_options& opts,
                              const std::function<void(std::size_t, bool)>& on_shard) {
  validate(opts);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) fail(errc::io_error, out_dir.string() + ": " + ec.message());

  fs::path manifest_file = out_dir / kManifestName;
  std::map<std::string, shard_entry> previous;
  if (fs::exists(manifest_file)) {
    try {
      for (auto& s : shard_manifest::load(manifest_file).shards) {
        previous.emplace(s.file, s);
      }
    } catch (const error&) {
      // An unreadable previous manifest only disables resuming.
    }
  }

  shard_pack_report report;
  for (std::size_t i = 0; i < manifest.shards.size(); ++i) {
    shard_entry& s = manifest.shards[i];
    fs::path bundle = out_dir / s.file;
    auto prev = previous.find(s.file);
    if (prev != previous.end() && prev->second.members == s.members &&
        !prev->second.sha256.empty() && fs::exists(bundle) &&
        sha256_file(bundle) == prev->second.sha256) {
      s.entries = prev->second.entries;
      s.bytes = prev->second.bytes;
      s.sha256 = prev->second.sha256;
      report.skipped.push_back(i);
      if (on_shard) on_shard(i, false);
      continue;
    }
    try {
      auto tree = scan_source(src, opts, s.members);
      auto summary = pack(tree, opts, bundle);
      s.entries = tree.entries() - 1;
      s.bytes = summary.bytes_written;
      s.sha256 = sha256_file(bundle);
    } catch (const error& e) {
      fail(e.code(), "shard " + s.file + ": " + e.what());
    }
    report.built.push_back(i);
    // Persist progress so an interrupted run resumes after this shard.
    manifest.save(manifest_file);
    if (on_shard) on_shard(i, true);
  }
  manifest.save(manifest_file);
  report.manifest = std::move(manifest);
  return report;
}

// ---------------------------------------------------------------------------
// Overlay

namespace {

std::uint64_t count_subtree(const bundle_reader& b, node_id top) {
  std::uint64_t n = 1;
  std::vector<node_id> pending{top};
  while (!pending.empty()) {
    node_id dir = pending.back();
    pending.pop_back();
    for (const auto& item : b.readdir(dir)) {
      ++n;
      if (item.kind == file_kind::directory) pending.push_back(item.node);
    }
  }
  return n;
}

} // namespace

overlay_reader::overlay_reader(std::vector<std::shared_ptr<bundle_reader>> layers)
    : layers_(std::move(layers)) {}

std::shared_ptr<overlay_reader> overlay_reader::open(
    std::vector<std::shared_ptr<bundle_reader>> bundles, const overlay_options& opts) {
  if (bundles.empty()) fail(errc::empty_overlay, "no bundles to overlay");
  auto started = std::chrono::steady_clock::now();
  std::shared_ptr<overlay_reader> o(new overlay_reader(std::move(bundles)));
  o->merge_roots(opts);
  o->open_seconds_ = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return o;
}

std::shared_ptr<overlay_reader> overlay_reader::open_bundles(
    const std::vector<fs::path>& bundles, const overlay_options& opts) {
  if (bundles.empty()) fail(errc::empty_overlay, "no bundles to overlay");
  auto started = std::chrono::steady_clock::now();
  std::vector<std::shared_ptr<bundle_reader>> layers;
  reader_options ro{opts.cache_budget / bundles.size()};
  for (const auto& b : bundles) layers.push_back(bundle_reader::open(b, ro));
  auto o = open(std::move(layers), opts);
  o->open_seconds_ = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return o;
}

std::shared_ptr<overlay_reader> overlay_reader::open_manifest(
    const shard_manifest& manifest, const fs::path& dir, const overlay_options& opts) {
  if (manifest.shards.empty()) fail(errc::empty_overlay, "manifest lists no shards");
  auto started = std::chrono::steady_clock::now();
  std::vector<fs::path> paths;
  for (const auto& s : manifest.shards) {
    fs::path p = dir / s.file;
    if (opts.verify_digests) {
      if (s.sha256.empty()) {
        fail(errc::digest_mismatch, s.file + ": manifest records no digest");
      }
      std::string got;
      try {
        got = sha256_file(p);
      } catch (const error& e) {
        fail(e.code(), p.string() + ": " + e.what());
      }
      if (got != s.sha256) {
        fail(errc::digest_mismatch, s.file + ": sha256 " + got + ", manifest says " + s.sha256);
      }
    }
    paths.push_back(std::move(p));
  }
  auto o = open_bundles(paths, opts);
  o->open_seconds_ = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return o;
}

std::shared_ptr<overlay_reader> overlay_reader::open_manifest(const fs::path& manifest_file,
                                                              const overlay_options& opts) {
  return open_manifest(shard_manifest::load(manifest_file), manifest_file.parent_path(), opts);
}

void overlay_reader::merge_roots(const overlay_options& opts) {
  std::uint64_t total = 0;
  for (std::uint32_t i = 0; i < layers_.size(); ++i) {
    const bundle_reader& b = *layers_[i];
    total += b.entry_count();
    for (dir_item item : b.readdir(b.root())) {
      item.node.layer = i;
      auto [it, inserted] = root_index_.try_emplace(item.name, root_items_.size());
      if (inserted) {
        root_items_.push_back(std::move(item));
        continue;
      }
      const dir_item& winner = root_items_[it->second];
      overlay_conflict c{"/" + item.name, layers_[winner.node.layer]->name(), b.name()};
      // The losing subtree is hidden; keep the entry count exact.
      std::uint64_t hidden = item.kind == file_kind::directory
                                 ? count_subtree(b, local(item.node))
                                 : 1;
      total -= hidden;
      conflicts_.push_back(c);
      if (opts.on_conflict) {
        opts.on_conflict(c);
      } else {
        std::cerr << "overlay conflict: " << c.path << " from " << c.loser
                  << " hidden by " << c.winner << "\n";
      }
    }
  }
  std::sort(root_items_.begin(), root_items_.end(),
            [](const dir_item& a, const dir_item& b) { return a.name < b.name; });
  for (std::size_t i = 0; i < root_items_.size(); ++i) root_index_[root_items_[i].name] = i;
  entry_count_ = total - (layers_.size() - 1);

  root_attr_ = layers_[0]->getattr(layers_[0]->root());
  std::uint32_t subdirs = 0;
  for (const auto& item : root_items_) {
    if (item.kind == file_kind::directory) ++subdirs;
  }
  root_attr_.nlink = 2 + subdirs;
}

const bundle_reader& overlay_reader::owner(node_id n) const {
  if (n.layer >= layers_.size()) {
    fail(errc::invalid_argument, "node from unknown layer " + std::to_string(n.layer));
  }
  return *layers_[n.layer];
}

node_id overlay_reader::root() const { return {kMergedLayer, 0}; }

node_id overlay_reader::lookup(node_id dir, std::string_view name) const {
  if (dir.layer == kMergedLayer) {
    auto it = root_index_.find(name);
    if (it == root_index_.end()) fail(errc::not_found, "\"" + std::string(name) + "\"");
    return root_items_[it->second].node;
  }
  node_id n = owner(dir).lookup(local(dir), name);
  n.layer = dir.layer;
  return n;
}

attr overlay_reader::getattr(node_id node) const {
  if (node.layer == kMergedLayer) return root_attr_;
  return owner(node).getattr(local(node));
}

std::vector<dir_item> overlay_reader::readdir(node_id dir) const {
  if (dir.layer == kMergedLayer) return root_items_;
  auto items = owner(dir).readdir(local(dir));
  for (auto& i : items) i.node.layer = dir.layer;
  return items;
}

byte_buffer overlay_reader::read(node_id file, std::uint64_t offset,
                                 std::uint32_t length) const {
  if (file.layer == kMergedLayer) fail(errc::not_a_file, "overlay root");
  return owner(file).read(local(file), offset, length);
}

std::string overlay_reader::readlink(node_id link) const {
  if (link.layer == kMergedLayer) fail(errc::not_a_symlink, "overlay root");
  return owner(link).readlink(local(link));
}

cache_stats overlay_reader::cache_control(cache_action action, std::uint64_t budget) const {
  cache_stats sum;
  std::uint64_t share = budget / layers_.size();
  for (const auto& l : layers_) {
    auto s = l->cache_control(action, share);
    sum.hits += s.hits;
    sum.misses += s.misses;
    sum.metadata_hits += s.metadata_hits;
    sum.metadata_misses += s.metadata_misses;
    sum.data_hits += s.data_hits;
    sum.data_misses += s.data_misses;
    sum.decompressed += s.decompressed;
    sum.evictions += s.evictions;
    sum.bytes += s.bytes;
    sum.capacity += s.capacity;
    sum.entries += s.entries;
  }
  return sum;
}

std::string overlay_reader::layer_name(std::uint32_t layer) const {
  if (layer == kMergedLayer) return "(merged root)";
  return owner({layer, 0}).name();
}

} // namespace sqb
