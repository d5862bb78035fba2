// Drives the sqb binary as a subprocess.

#include <gtest/gtest.h>

#include <sys/stat.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "sqb/reader.hpp"
#include "support.hpp"
#include "tree_oracle.hpp"

using namespace sqb;
using namespace sqb::test;

namespace {

struct result {
  int code = -1;
  std::string out;
  std::string err;
};

std::string quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) {
    if (c == '\'') q += "'\\''";
    else q += c;
  }
  return q + "'";
}

std::string command_line(const std::vector<std::string>& args) {
  std::string cmd = quote(SQB_CLI);
  for (auto& a : args) cmd += " " + quote(a);
  return cmd;
}

result run_shell(const std::string& cmd, const std::string& env = {}) {
  static int n = 0;
  fs::path base = fs::temp_directory_path() /
                  ("sqb-cli-" + std::to_string(::getpid()) + "-" + std::to_string(n++));
  std::string full = env + (env.empty() ? "" : " ") + cmd + " >" + quote(base.string() + ".out") +
                     " 2>" + quote(base.string() + ".err") + " </dev/null";
  int status = std::system(full.c_str());
  result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(base.string() + ".out");
  r.err = read_file(base.string() + ".err");
  fs::remove(base.string() + ".out");
  fs::remove(base.string() + ".err");
  return r;
}

result sqb_run(const std::vector<std::string>& args, const std::string& env = {}) {
  return run_shell(command_line(args), env);
}

// A small dataset with a README at the top, 25 subject directories (two
// shards at the default group size), odd modes, symlinks and a file that
// spans several data blocks.
void make_dataset(const fs::path& root) {
  std::mt19937_64 rng(99);
  write_file(root / "README.txt", "Dataset of twenty-five subjects.\nSee subjects/.\n");
  for (int s = 0; s < 25; ++s) {
    char name[16];
    std::snprintf(name, sizeof name, "sub-%03d", s);
    fs::path d = root / name;
    write_file(d / "anat" / "T1w.nii", random_bytes(rng, 1000 + 37 * std::size_t(s)));
    write_file(d / "notes.txt", std::string(std::size_t(s), 'n'));
    fs::create_directories(d / "empty");
  }
  write_file(root / "sub-003" / "big.bin", random_bytes(rng, 3 * 131072 + 4321));
  fs::create_symlink("../README.txt", root / "sub-001" / "readme");
  fs::create_symlink("/sub-002/notes.txt", root / "sub-002" / "abs");
  ::chmod((root / "sub-004" / "notes.txt").c_str(), 0600);
  ::chmod((root / "sub-005" / "notes.txt").c_str(), 0755);
  ::chmod((root / "sub-006").c_str(), 0750);
}

class CliFixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = std::make_unique<scratch_dir>("cli");
    make_dataset(src());
    auto p = sqb_run({"pack", src().string(), bundle().string(), "--mtime", "1600000000"});
    ASSERT_EQ(p.code, 0) << p.err;
    auto s = sqb_run({"shard", "pack", src().string(), dataset().string(), "-q"});
    ASSERT_EQ(s.code, 0) << s.err;
  }
  static void TearDownTestSuite() { dir_.reset(); }

  static fs::path src() { return dir_->path() / "src"; }
  static fs::path bundle() { return dir_->path() / "bundle.sqfs"; }
  static fs::path dataset() { return dir_->path() / "dataset-dir"; }
  static fs::path scratch(const std::string& name) { return dir_->path() / name; }

  static inline std::unique_ptr<scratch_dir> dir_;
};

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

} // namespace

TEST_F(CliFixture, LsBundleRoot) {
  auto r = sqb_run({"ls", bundle().string(), "/"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::vector<std::string> want;
  for (auto& e : fs::directory_iterator(src())) want.push_back(e.path().filename().string());
  std::sort(want.begin(), want.end());
  EXPECT_EQ(lines(r.out), want);
}

TEST_F(CliFixture, CatFromOverlayDirectory) {
  ASSERT_TRUE(fs::exists(dataset() / "manifest.json"));
  auto r = sqb_run({"cat", dataset().string(), "/README.txt"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, read_file(src() / "README.txt"));
  EXPECT_TRUE(r.err.empty()) << r.err;

  auto big = sqb_run({"cat", dataset().string(), "/sub-003/big.bin"});
  ASSERT_EQ(big.code, 0);
  EXPECT_EQ(big.out, read_file(src() / "sub-003" / "big.bin"));

  // Symlinks are followed, relative and absolute alike.
  EXPECT_EQ(sqb_run({"cat", bundle().string(), "/sub-001/readme"}).out,
            read_file(src() / "README.txt"));
  EXPECT_EQ(sqb_run({"cat", bundle().string(), "/sub-002/abs"}).out,
            read_file(src() / "sub-002" / "notes.txt"));
}

TEST_F(CliFixture, UsageErrorsExitOne) {
  auto r = sqb_run({"pack", src().string()});
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("Usage"), std::string::npos) << r.err;
  EXPECT_TRUE(r.out.empty());

  EXPECT_EQ(sqb_run({}).code, 1);
  EXPECT_EQ(sqb_run({"frobnicate"}).code, 1);
  EXPECT_EQ(sqb_run({"ls", bundle().string(), "/", "--format", "yaml"}).code, 1);
  EXPECT_EQ(sqb_run({"pack", src().string(), "x.sqfs", "--codec", "lzo"}).code, 1);
  EXPECT_EQ(sqb_run({"serve", "--bundle", bundle().string()}).code, 1);
  EXPECT_EQ(sqb_run({"ls", bundle().string()}, "SQB_CACHE_BUDGET=lots").code, 1);
}

TEST_F(CliFixture, HelpExitsZero) {
  auto r = sqb_run({"--help"});
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("extract"), std::string::npos);
  auto sub = sqb_run({"bench", "scan", "--help"});
  EXPECT_EQ(sub.code, 0);
  EXPECT_NE(sub.out.find("--reps"), std::string::npos);
}

TEST_F(CliFixture, ExtractRootRoundTrips) {
  fs::path out = scratch("x-root");
  auto r = sqb_run({"extract", bundle().string(), "/", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  auto want = snapshot_host(src());
  auto got = snapshot_host(out);
  ASSERT_EQ(got.size(), want.size());
  auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["entries"].get<std::size_t>(), want.size());
  for (auto& [path, w] : want) {
    auto it = got.find(path);
    ASSERT_NE(it, got.end()) << path;
    auto& g = it->second;
    EXPECT_EQ(g.kind, w.kind) << path;
    EXPECT_EQ(g.payload, w.payload) << path;
    EXPECT_EQ(g.size, w.size) << path;
    if (w.kind != file_kind::symlink) {
      EXPECT_EQ(g.mode, w.mode) << path;
    }
    EXPECT_EQ(g.mtime, 1600000000u) << path;
  }
}

TEST_F(CliFixture, ExtractFromOverlayKeepsSourceTimes) {
  fs::path out = scratch("x-overlay");
  auto r = sqb_run({"extract", dataset().string(), "/sub-003", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  auto want = snapshot_host(src() / "sub-003");
  auto got = snapshot_host(out / "sub-003");
  ASSERT_EQ(got.size(), want.size());
  for (auto& [path, w] : want) {
    auto& g = got.at(path);
    EXPECT_EQ(g.payload, w.payload) << path;
    EXPECT_EQ(g.mtime, w.mtime) << path;
  }
}

TEST_F(CliFixture, ExtractSingleFile) {
  fs::path out = scratch("x-one");
  auto r = sqb_run({"extract", bundle().string(), "/sub-005/notes.txt", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(nlohmann::json::parse(r.out)["entries"], 1);
  EXPECT_EQ(read_file(out / "notes.txt"), read_file(src() / "sub-005" / "notes.txt"));
  struct stat st {};
  ASSERT_EQ(::stat((out / "notes.txt").c_str(), &st), 0);
  EXPECT_EQ(st.st_mode & 07777, 0755u);
}

TEST_F(CliFixture, ExtractMissingPathIsDataError) {
  auto r = sqb_run({"extract", bundle().string(), "/no/such", scratch("x-miss").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("NotFound"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(scratch("x-miss")));
}

TEST_F(CliFixture, ExtractRefusesOverwriteWithoutForce) {
  fs::path out = scratch("x-force");
  write_file(out / "README.txt", "local edits");
  auto r = sqb_run({"extract", bundle().string(), "/", out.string()});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("--force"), std::string::npos) << r.err;
  EXPECT_EQ(read_file(out / "README.txt"), "local edits");
  // Nothing at all is written when a collision is found.
  EXPECT_FALSE(fs::exists(out / "sub-000"));

  auto f = sqb_run({"extract", "--force", bundle().string(), "/", out.string()});
  ASSERT_EQ(f.code, 0) << f.err;
  EXPECT_EQ(read_file(out / "README.txt"), read_file(src() / "README.txt"));
}

TEST_F(CliFixture, DataAndIoExitCodes) {
  fs::path junk = scratch("junk.sqfs");
  write_file(junk, std::string(4096, 'j'));
  auto bad = sqb_run({"ls", junk.string()});
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.err.find("BadMagic"), std::string::npos) << bad.err;

  EXPECT_EQ(sqb_run({"ls", scratch("absent.sqfs").string()}).code, 2);
  EXPECT_EQ(sqb_run({"cat", bundle().string(), "/sub-000"}).code, 2);

  // A name that matches both detection rules is refused, never guessed.
  fs::path both = scratch("both.sqfs");
  fs::create_directories(both);
  fs::copy_file(dataset() / "manifest.json", both / "manifest.json");
  auto amb = sqb_run({"ls", both.string()});
  EXPECT_EQ(amb.code, 1);
  EXPECT_NE(amb.err.find("ambiguous"), std::string::npos) << amb.err;
}

TEST_F(CliFixture, VerifyReportsMismatches) {
  auto ok = sqb_run({"verify", bundle().string(), src().string()});
  ASSERT_EQ(ok.code, 0) << ok.err;
  EXPECT_TRUE(nlohmann::json::parse(ok.out)["ok"].get<bool>());

  scratch_dir other("cli-other");
  fs::copy(src(), other.path() / "t", fs::copy_options::recursive | fs::copy_options::copy_symlinks);
  write_file(other.path() / "t" / "README.txt", "changed");
  auto bad = sqb_run({"verify", bundle().string(), (other.path() / "t").string()});
  EXPECT_EQ(bad.code, 2);
  auto j = nlohmann::json::parse(bad.out);
  EXPECT_FALSE(j["ok"].get<bool>());
  ASSERT_EQ(j["mismatches"].size(), 1u);
  EXPECT_EQ(j["mismatches"][0]["path"], "/README.txt");
}

TEST_F(CliFixture, MachineReadableOutputs) {
  auto ls = nlohmann::json::parse(
      sqb_run({"ls", bundle().string(), "/sub-001", "--format", "json"}).out);
  ASSERT_TRUE(ls.is_array());
  bool saw_link = false;
  for (auto& e : ls) {
    EXPECT_TRUE(e.contains("name") && e.contains("kind") && e.contains("size"));
    if (e["name"] == "readme") {
      saw_link = true;
      EXPECT_EQ(e["target"], "../README.txt");
    }
  }
  EXPECT_TRUE(saw_link);

  auto st = nlohmann::json::parse(
      sqb_run({"stat", dataset().string(), "/sub-004/notes.txt", "--format", "json"}).out);
  EXPECT_EQ(st["mode"], 0600);
  EXPECT_EQ(st["bundle"], "shard-0000.sqfs");

  std::size_t want = snapshot_host(src()).size();
  for (auto& t : {src(), bundle(), dataset()}) {
    auto scan = nlohmann::json::parse(sqb_run({"scan", t.string()}).out);
    ASSERT_EQ(scan.size(), 1u);
    EXPECT_EQ(scan[0]["entries"].get<std::size_t>(), want) << t;
  }

  auto man = nlohmann::json::parse(
      sqb_run({"shard", "ls", dataset().string(), "--format", "json"}).out);
  EXPECT_EQ(man["shards"].size(), 2u);
  EXPECT_EQ(man["shards"][1]["members"].size(), 6u);  // README.txt is a member too
}

TEST_F(CliFixture, CacheBudgetFromEnvironment) {
  auto r = sqb_run({"cat", bundle().string(), "/sub-003/big.bin"}, "SQB_CACHE_BUDGET=0");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out, read_file(src() / "sub-003" / "big.bin"));
  EXPECT_EQ(sqb_run({"--cache-budget", "1M", "ls", bundle().string()}).code, 0);
}

TEST_F(CliFixture, ClosedPipeIsNotAnError) {
  auto r = run_shell("bash -c " +
                     quote(command_line({"cat", bundle().string(), "/sub-003/big.bin"}) +
                           " | head -c 10 >/dev/null; exit ${PIPESTATUS[0]}"));
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(r.err.empty()) << r.err;
}

TEST_F(CliFixture, ShardPackResumes) {
  auto r = sqb_run({"shard", "pack", src().string(), dataset().string()});
  ASSERT_EQ(r.code, 0) << r.err;
  auto j = nlohmann::json::parse(r.out);
  EXPECT_TRUE(j["built"].empty());
  EXPECT_EQ(j["skipped"].size(), 2u);
  EXPECT_EQ(j["entries"].get<std::size_t>(), snapshot_host(src()).size());
}

TEST_F(CliFixture, OpenSshClientSession) {
  if (::access("/usr/bin/sftp", X_OK) != 0) GTEST_SKIP() << "OpenSSH sftp client not installed";
  fs::path wrapper = scratch("serve.sh");
  write_file(wrapper, "#!/bin/sh\nexec " + command_line({"serve", "--stdio", "--manifest",
                                                         dataset().string()}) + "\n");
  ::chmod(wrapper.c_str(), 0755);
  fs::path got = scratch("sftp-got");
  fs::path batch = scratch("batch");
  write_file(batch, "get -r /sub-003 " + got.string() + "\nget /README.txt " +
                        (scratch("sftp-readme")).string() + "\n");
  auto r = run_shell("/usr/bin/sftp -b " + quote(batch.string()) + " -D " +
                     quote(wrapper.string()));
  ASSERT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_EQ(read_file(scratch("sftp-readme")), read_file(src() / "README.txt"));
  auto want = snapshot_host(src() / "sub-003");
  auto have = snapshot_host(got);
  ASSERT_EQ(have.size(), want.size());
  for (auto& [p, w] : want) EXPECT_EQ(have.at(p).payload, w.payload) << p;

  fs::path denied = scratch("batch-put");
  write_file(denied, "put " + batch.string() + " /x\n");
  auto put = run_shell("/usr/bin/sftp -b " + quote(denied.string()) + " -D " +
                       quote(wrapper.string()));
  EXPECT_NE(put.code, 0);
  EXPECT_NE((put.out + put.err).find("Permission denied"), std::string::npos) << put.err;
}
