#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "superlim/cli.hpp"

namespace fs = std::filesystem;
using superlim::cli::run;

namespace {

std::string scenario_path(const std::string& name) {
  return std::string(SUPERLIM_SCENARIO_DIR) + "/" + name + ".json";
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) : path(fs::temp_directory_path() / ("superlim_cli_" + tag)) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

int call(std::vector<std::string> args, std::string* out_text = nullptr) {
  std::ostringstream out, err;
  const int rc = run(std::move(args), out, err);
  if (out_text) *out_text = out.str() + err.str();
  return rc;
}

std::vector<superlim::Json> manifest(const fs::path& dir) {
  std::vector<superlim::Json> out;
  std::ifstream in(dir / "manifest.jsonl");
  std::string line;
  while (std::getline(in, line)) out.push_back(superlim::Json::parse(line));
  return out;
}

}  // namespace

TEST(Cli, ExitCodes) {
  TempDir dir("codes");
  const std::string out = dir.path.string();
  std::string text;
  EXPECT_EQ(call({"validate", scenario_path("feller1"), "--out", out}), 0);
  EXPECT_EQ(call({"frobnicate", scenario_path("feller1"), "--out", out}, &text), 2);
  EXPECT_NE(text.find("unknown subcommand"), std::string::npos);
  EXPECT_EQ(call({"validate", "/no/such/file.json", "--out", out}, &text), 2);
  EXPECT_NE(text.find("file not found"), std::string::npos);
  EXPECT_EQ(call({"smallvalue", scenario_path("feller1"), "--batch", "/no/batch.csv", "--out", out}, &text), 2);
  EXPECT_NE(text.find("sample-w"), std::string::npos);
  EXPECT_EQ(call({"cumulants", scenario_path("heavytail_q2"), "--out", out}), 1);
  EXPECT_EQ(call({"report", (dir.path / "empty").string()}, &text), 2);
}

TEST(Cli, ManifestIsAppendOnly) {
  TempDir dir("manifest");
  const std::string out = dir.path.string();
  ASSERT_EQ(call({"extinction", scenario_path("poissonic"), "--out", out}), 0);
  ASSERT_EQ(call({"spectra", scenario_path("twosite"), "--out", out}), 0);
  const auto recs = manifest(dir.path);
  ASSERT_EQ(recs.size(), 2u);
  EXPECT_EQ(recs[0]["subcommand"], "extinction");
  EXPECT_EQ(recs[1]["run"], 1);
  for (const auto& r : recs) {
    EXPECT_EQ(r["scenario_hash"].get<std::string>().size(), 16u);
    for (const auto& f : r["outputs"]) EXPECT_TRUE(fs::exists(dir.path / f.get<std::string>()));
  }
  const auto verdict = superlim::read_json(dir.path / recs[0]["verdict"].get<std::string>());
  EXPECT_NEAR(verdict["v"][0].get<double>(), 1.5936242600400, 1e-10);
}

TEST(Cli, BatchReuseAndReport) {
  TempDir dir("batch");
  const std::string out = dir.path.string();
  const std::vector<std::string> common = {"--out", out, "--samples", "50000", "--seed", "3"};
  auto with = [&](std::vector<std::string> head) {
    head.insert(head.end(), common.begin(), common.end());
    return head;
  };
  EXPECT_EQ(call(with({"sample-w", scenario_path("feller1")})), 0);
  EXPECT_EQ(call(with({"tailcheck", scenario_path("feller1")})), 0);
  auto recs = manifest(dir.path);
  ASSERT_EQ(recs.size(), 2u);
  ASSERT_EQ(recs[1]["inputs"].size(), 1u);
  EXPECT_EQ(recs[1]["inputs"][0], recs[0]["outputs"][1]);

  std::string text;
  EXPECT_EQ(call({"report", out}, &text), 0);
  EXPECT_NE(text.find("feller1"), std::string::npos);
  recs = manifest(dir.path);
  EXPECT_EQ(recs.back()["subcommand"], "report");
}

TEST(Cli, GridParsing) {
  const auto g = superlim::cli::parse_grid("1:100:3");
  ASSERT_EQ(g.size(), 3u);
  EXPECT_NEAR(g[1], 10.0, 1e-12);
  EXPECT_EQ(superlim::cli::parse_grid("0.5,2"), (std::vector<double>{0.5, 2.0}));
  EXPECT_THROW(superlim::cli::parse_grid("a:b"), superlim::InputError);
}
