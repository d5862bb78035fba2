#include <algorithm>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "sqb/digest.hpp"
#include "sqb/overlay.hpp"
#include "support.hpp"
#include "tree_oracle.hpp"

namespace sqb {
namespace {

namespace fs = std::filesystem;
using test::scratch_dir;
using test::write_file;

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

void make_subjects(const fs::path& root, int n) {
  for (int i = 0; i < n; ++i) {
    char name[16];
    std::snprintf(name, sizeof name, "%06d", 100000 + i * 7);
    fs::create_directories(root / name);
  }
}

overlay_options verified() {
  overlay_options o;
  o.verify_digests = true;
  return o;
}

// Independent arithmetic oracle for sorted-greedy grouping.
std::vector<std::size_t> expected_sizes(std::size_t n, std::size_t g) {
  std::vector<std::size_t> out;
  while (n > 0) {
    out.push_back(std::min(n, g));
    n -= out.back();
  }
  return out;
}

std::vector<std::size_t> sizes(const shard_manifest& m) {
  std::vector<std::size_t> out;
  for (auto& s : m.shards) out.push_back(s.members.size());
  return out;
}

TEST(ShardPlan, SubjectsGroupedByTwenty) {
  scratch_dir d;
  make_subjects(d.path(), 1113);
  auto m = shard_plan(d.path(), 20);
  EXPECT_EQ(m.shards.size(), 56u);
  EXPECT_EQ(m.shards.back().members.size(), 13u);
  EXPECT_EQ(55u * 20u + 13u, 1113u);
  EXPECT_EQ(sizes(m), expected_sizes(1113, 20));
  EXPECT_EQ(m.member_count(), 1113u);
  // Sorted order, every name exactly once.
  std::vector<std::string> all;
  for (auto& s : m.shards) all.insert(all.end(), s.members.begin(), s.members.end());
  EXPECT_TRUE(std::is_sorted(all.begin(), all.end()));
  EXPECT_EQ(std::set<std::string>(all.begin(), all.end()).size(), 1113u);
  EXPECT_EQ(m.shards[0].file, "shard-0000.sqfs");
  EXPECT_EQ(m.shards[55].file, "shard-0055.sqfs");
}

TEST(ShardPlan, SmallCases) {
  scratch_dir one, many;
  make_subjects(one.path(), 1);
  make_subjects(many.path(), 41);
  EXPECT_EQ(sizes(shard_plan(one.path(), 20)), (std::vector<std::size_t>{1}));
  EXPECT_EQ(sizes(shard_plan(many.path(), 20)), (std::vector<std::size_t>{20, 20, 1}));
  std::mt19937_64 rng(3);
  for (int i = 0; i < 20; ++i) {
    scratch_dir d;
    int n = 1 + static_cast<int>(rng() % 120);
    std::uint32_t g = 1 + static_cast<std::uint32_t>(rng() % 30);
    make_subjects(d.path(), n);
    EXPECT_EQ(sizes(shard_plan(d.path(), g)), expected_sizes(n, g));
  }
}

TEST(ShardPlan, Errors) {
  scratch_dir d;
  EXPECT_EQ(error_of([&] { shard_plan(d.path(), 20); }), errc::empty_dataset);
  write_file(d / "file", "x");
  EXPECT_EQ(error_of([&] { shard_plan(d / "file", 20); }), errc::not_a_directory);
  EXPECT_EQ(error_of([&] { shard_plan(d.path(), 0); }), errc::invalid_argument);
}

TEST(ShardPlan, DeterministicJson) {
  scratch_dir d;
  make_subjects(d.path(), 57);
  auto a = shard_plan(d.path(), 20, "demo").to_json();
  auto b = shard_plan(d.path(), 20, "demo").to_json();
  EXPECT_EQ(a, b);
  EXPECT_NE(a.find("\"version\": 1"), std::string::npos);
  EXPECT_NE(a.find("\"assignment\": \"sorted-greedy\""), std::string::npos);
}

TEST(Manifest, JsonRoundTripAndSchemaErrors) {
  shard_manifest m;
  m.dataset = "hcp";
  m.group_size = 2;
  m.created = 77;
  m.shards = {{"shard-0000.sqfs", {"a", "b"}, 10, 4096, std::string(64, 'f')},
              {"shard-0001.sqfs", {"c"}, 3, 4096, ""}};
  EXPECT_EQ(shard_manifest::from_json(m.to_json()), m);

  auto broken = [](std::string text) {
    return error_of([&] { shard_manifest::from_json(text); });
  };
  EXPECT_EQ(broken("not json"), errc::bad_manifest);
  EXPECT_EQ(broken("[]"), errc::bad_manifest);
  EXPECT_EQ(broken(R"({"version":2,"dataset":"x","group_size":1,"shards":[]})"), errc::bad_manifest);
  EXPECT_EQ(broken(R"({"version":1,"group_size":1,"shards":[]})"), errc::bad_manifest);
  EXPECT_EQ(broken(R"({"version":1,"dataset":"x","group_size":1,"shards":[
      {"file":"../x","members":["a"],"entries":1,"bytes":1,"sha256":""}]})"),
            errc::bad_manifest);
  EXPECT_EQ(broken(R"({"version":1,"dataset":"x","group_size":1,"shards":[
      {"file":"a","members":["a"],"entries":1,"bytes":1,"sha256":""},
      {"file":"b","members":["a"],"entries":1,"bytes":1,"sha256":""}]})"),
            errc::bad_manifest);
  EXPECT_EQ(broken(R"({"version":1,"dataset":"x","group_size":1,"shards":[
      {"file":"a","members":["a","b"],"entries":1,"bytes":1,"sha256":""}]})"),
            errc::bad_manifest);
  EXPECT_EQ(broken(R"({"version":1,"dataset":"x","group_size":"3","shards":[]})"),
            errc::bad_manifest);
}

TEST(Manifest, NonUtf8NamesRejected) {
  shard_manifest m;
  m.dataset = "x";
  m.shards = {{"s", {"bad\xff"}, 0, 0, ""}};
  EXPECT_EQ(error_of([&] { (void)m.to_json(); }), errc::bad_name);
}

class ShardFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    src_ = dir_ / "src";
    test::make_random_tree(src_ / "sub-a", 1, {.max_entries = 60});
    test::make_random_tree(src_ / "sub-b", 2, {.max_entries = 60});
    test::make_random_tree(src_ / "sub-c", 3, {.max_entries = 60});
    write_file(src_ / "sub-c/README.txt", "subject c\n");
  }

  shard_pack_report build(std::uint32_t group = 2) {
    auto plan = shard_plan(src_, group);
    return pack_shards(plan, src_, dir_ / "out", {});
  }

  scratch_dir dir_{"shard"};
  fs::path src_;
};

TEST_F(ShardFixture, PackAccountsForEveryEntry) {
  auto rep = build();
  ASSERT_EQ(rep.manifest.shards.size(), 2u);
  EXPECT_EQ(rep.built.size(), 2u);
  std::uint64_t sum = 0;
  for (auto& s : rep.manifest.shards) {
    sum += s.entries;
    EXPECT_EQ(s.bytes, fs::file_size(dir_ / "out" / s.file));
    EXPECT_EQ(s.sha256, sha256_file(dir_ / "out" / s.file));
  }
  EXPECT_EQ(sum, test::count_host_entries(src_) - 1);
  EXPECT_EQ(shard_manifest::load(dir_ / "out/manifest.json"), rep.manifest);
}

TEST_F(ShardFixture, ResumeSkipsFinishedShards) {
  build();
  auto again = build();
  EXPECT_EQ(again.built.size(), 0u);
  EXPECT_EQ(again.skipped.size(), 2u);
  fs::remove(dir_ / "out/shard-0001.sqfs");
  auto third = build();
  EXPECT_EQ(third.built, (std::vector<std::size_t>{1}));
  // A bundle altered on disk no longer matches its digest and is rebuilt.
  {
    std::fstream f(dir_ / "out/shard-0000.sqfs", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(200);
    f.put('\x55');
  }
  auto fourth = build();
  EXPECT_EQ(fourth.built, (std::vector<std::size_t>{0}));
}

TEST_F(ShardFixture, OverlayMatchesSource) {
  build();
  auto o = overlay_reader::open_manifest(dir_ / "out/manifest.json", verified());
  EXPECT_EQ(o->layer_count(), 2u);
  auto names = o->readdir(o->root());
  ASSERT_EQ(names.size(), 3u);
  EXPECT_EQ(names[0].name, "sub-a");
  EXPECT_EQ(names[2].name, "sub-c");
  std::uint64_t n = 0;
  o->walk([&](const walk_entry&) { ++n; });
  EXPECT_EQ(n, test::count_host_entries(src_));
  EXPECT_EQ(o->entry_count(), n);
  auto problems = test::compare_with_host(*o, src_);
  EXPECT_TRUE(problems.empty()) << problems.front();
  EXPECT_EQ(as_chars(o->read(o->resolve("/sub-c/README.txt"), 0, 100)), "subject c\n");
  EXPECT_EQ(o->getattr(o->root()).nlink, 5u);
  EXPECT_TRUE(o->conflicts().empty());
}

TEST_F(ShardFixture, WalkTagsOriginBundle) {
  build();
  auto o = overlay_reader::open_manifest(dir_ / "out/manifest.json");
  std::map<std::string, std::string> top_origin;
  o->walk([&](const walk_entry& w) {
    auto slash = w.path.find('/', 1);
    if (w.path != "/" && slash == std::string::npos) top_origin[w.path] = o->layer_name(w.node.layer);
  });
  EXPECT_EQ(top_origin["/sub-a"], "shard-0000.sqfs");
  EXPECT_EQ(top_origin["/sub-b"], "shard-0000.sqfs");
  EXPECT_EQ(top_origin["/sub-c"], "shard-0001.sqfs");
}

TEST_F(ShardFixture, PartitionPropertyAgainstSinglePack) {
  build(1);
  auto tree = scan_source(src_, {});
  pack(tree, {}, dir_ / "whole.sqfs");
  auto whole = bundle_reader::open(dir_ / "whole.sqfs");
  auto o = overlay_reader::open_manifest(dir_ / "out/manifest.json");
  auto digest_set = [](const filesystem& f) {
    std::multiset<std::pair<std::string, std::string>> out;
    f.walk([&](const walk_entry& w) {
      std::string dg;
      if (w.attributes.kind == file_kind::regular) dg = sha256_hex(f.read(w.node, 0, 1 << 24));
      if (w.attributes.kind == file_kind::symlink) dg = f.readlink(w.node);
      out.emplace(w.path, dg);
    });
    return out;
  };
  EXPECT_EQ(digest_set(*o), digest_set(*whole));
  std::uint64_t per_bundle = 0;
  for (std::size_t i = 0; i < o->layer_count(); ++i) per_bundle += o->layer(i).entry_count();
  EXPECT_EQ(o->entry_count(), per_bundle - (o->layer_count() - 1));
}

TEST_F(ShardFixture, DigestMismatchDetected) {
  build();
  {
    std::fstream f(dir_ / "out/shard-0001.sqfs", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0, std::ios::end);
    f.put('\0');
  }
  EXPECT_EQ(error_of([&] {
              overlay_reader::open_manifest(dir_ / "out/manifest.json", verified());
            }),
            errc::digest_mismatch);
  // Without the check the bundle still opens.
  EXPECT_NO_THROW(overlay_reader::open_manifest(dir_ / "out/manifest.json"));
}

TEST(Overlay, EmptyListIsError) {
  EXPECT_EQ(error_of([&] { overlay_reader::open_bundles({}); }), errc::empty_overlay);
  EXPECT_EQ(error_of([&] { overlay_reader::open(std::vector<std::shared_ptr<bundle_reader>>{}); }),
            errc::empty_overlay);
}

TEST(Overlay, SingleBundleBehavesLikeReader) {
  scratch_dir d;
  test::make_random_tree(d / "src", 31, {.max_entries = 200});
  auto tree = scan_source(d / "src", {});
  pack(tree, {}, d / "one.sqfs");
  auto b = bundle_reader::open(d / "one.sqfs");
  auto o = overlay_reader::open_bundles({d / "one.sqfs"});
  std::vector<std::pair<std::string, attr>> wb, wo;
  b->walk([&](const walk_entry& w) { wb.emplace_back(w.path, w.attributes); });
  o->walk([&](const walk_entry& w) { wo.emplace_back(w.path, w.attributes); });
  EXPECT_EQ(wb, wo);
  EXPECT_EQ(o->entry_count(), b->entry_count());
}

TEST(Overlay, FirstBundleWinsConflicts) {
  scratch_dir d;
  write_file(d / "a/README.txt", "from a\n");
  write_file(d / "a/only-a", "1");
  write_file(d / "b/README.txt", "from b\n");
  write_file(d / "b/shared/x", "x");
  write_file(d / "b/shared/y", "y");
  write_file(d / "c/shared/z", "z");
  for (auto n : {"a", "b", "c"}) {
    auto tree = scan_source(d / n, {});
    pack(tree, {}, d / (std::string(n) + ".sqfs"));
  }
  std::vector<overlay_conflict> seen;
  overlay_options opts;
  opts.on_conflict = [&](const overlay_conflict& c) { seen.push_back(c); };
  auto o = overlay_reader::open_bundles({d / "a.sqfs", d / "b.sqfs", d / "c.sqfs"}, opts);
  ASSERT_EQ(o->conflicts().size(), 2u);
  EXPECT_EQ(seen.size(), 2u);
  EXPECT_EQ(o->conflicts()[0].path, "/README.txt");
  EXPECT_EQ(o->conflicts()[0].winner, "a.sqfs");
  EXPECT_EQ(o->conflicts()[0].loser, "b.sqfs");
  EXPECT_EQ(o->conflicts()[1].path, "/shared");
  EXPECT_EQ(as_chars(o->read(o->resolve("/README.txt"), 0, 100)), "from a\n");
  EXPECT_TRUE(o->try_resolve("/shared/x"));
  EXPECT_FALSE(o->try_resolve("/shared/z"));
  std::uint64_t n = 0;
  o->walk([&](const walk_entry&) { ++n; });
  EXPECT_EQ(o->entry_count(), n);
  EXPECT_EQ(n, 6u); // root, README.txt, only-a, shared, shared/x, shared/y
}

TEST(Overlay, PermutationChangesOnlyConflictWinners) {
  scratch_dir d;
  write_file(d / "a/README.txt", "A");
  write_file(d / "a/alpha", "1");
  write_file(d / "b/README.txt", "B");
  write_file(d / "b/beta", "2");
  for (auto n : {"a", "b"}) {
    auto tree = scan_source(d / n, {});
    pack(tree, {}, d / (std::string(n) + ".sqfs"));
  }
  overlay_options quiet;
  quiet.on_conflict = [](const overlay_conflict&) {};
  auto ab = overlay_reader::open_bundles({d / "a.sqfs", d / "b.sqfs"}, quiet);
  auto ba = overlay_reader::open_bundles({d / "b.sqfs", d / "a.sqfs"}, quiet);
  auto content = [](const overlay_reader& o) {
    std::map<std::string, std::string> out;
    o.walk([&](const walk_entry& w) {
      if (w.attributes.kind == file_kind::regular) out[w.path] = std::string(as_chars(o.read(w.node, 0, 100)));
    });
    return out;
  };
  auto x = content(*ab), y = content(*ba);
  std::set<std::string> differing;
  for (auto& [path, body] : x) {
    if (y[path] != body) differing.insert(path);
  }
  std::set<std::string> conflicted;
  for (auto& c : ab->conflicts()) conflicted.insert(c.path);
  EXPECT_EQ(differing, conflicted);
}

} // namespace
} // namespace sqb
