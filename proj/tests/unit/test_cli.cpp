#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "stan/cli.hpp"
#include "stan/data/manifest.hpp"
#include "stan/serialize.hpp"

using namespace stan;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "stan");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
}

struct Cli : ::testing::Test {
  static void SetUpTestSuite() {
    root = fs::temp_directory_path() / "stan_cli_test";
    fs::remove_all(root);
    fs::create_directories(root);
    write_text(root / "small.json", R"({"clips_per_class": 3, "frames": 20})");
    write_text(root / "train.json", R"({"epochs": 2, "batch_size": 4})");
    ASSERT_EQ(run({"gen-data", "--config", (root / "small.json").string(), "--out", (root / "data").string(),
                   "--seed", "5"}).code, 0);
    ASSERT_EQ(run({"train", "--manifest", manifest(), "--model", "stan", "--view", "global-local", "--train-config",
                   (root / "train.json").string(), "--out", (root / "stan.stnk").string(), "--seed", "1"}).code, 0);
    ASSERT_EQ(run({"train", "--manifest", manifest(), "--model", "cnn", "--train-config",
                   (root / "train.json").string(), "--out", (root / "cnn.stnk").string(), "--seed", "1"}).code, 0);
  }
  static void TearDownTestSuite() { fs::remove_all(root); }
  static std::string manifest() { return (root / "data" / "manifest.json").string(); }
  static std::string stan_ckpt() { return (root / "stan.stnk").string(); }
  static inline fs::path root;
};

std::string category(const Result& r) {
  const auto first = r.err.find(": "), second = r.err.find(": ", first + 2);
  return r.err.substr(first + 2, second - first - 2);
}

}  // namespace

TEST_F(Cli, SmokePath) {
  EXPECT_TRUE(fs::exists(root / "stan.stnk.log.csv"));
  auto ex = run({"explain", "--checkpoint", stan_ckpt(), "--manifest", manifest(), "--method", "gradcam", "--clip",
                 "clip_0002", "--out", (root / "ex_gc").string()});
  ASSERT_EQ(ex.code, 0) << ex.err;
  for (auto f : {"saliency.stnt", "scores.stnt", "overlay.ppm", "explanation.json"})
    EXPECT_TRUE(fs::exists(root / "ex_gc" / f)) << f;
  auto side = nlohmann::json::parse(read_file(root / "ex_gc" / "explanation.json"));
  EXPECT_EQ(side["method"], "gradcam");
  EXPECT_EQ(side["clip"], "clip_0002");
  EXPECT_EQ(read_file(root / "ex_gc" / "overlay.ppm").substr(0, 2), "P6");

  auto ev = run({"eval", "--checkpoint", stan_ckpt(), "--checkpoint", (root / "cnn.stnk").string(), "--manifest",
                 manifest(), "--out", (root / "ev1").string(), "--smooth-samples", "2"});
  ASSERT_EQ(ev.code, 0) << ev.err;
  for (auto f : {"report.json", "cells.csv", "report.txt"}) EXPECT_TRUE(fs::exists(root / "ev1" / f)) << f;
  auto rep = run({"report", "--runs", root.string(), "--out", (root / "tables.txt").string()});
  ASSERT_EQ(rep.code, 0) << rep.err;
  EXPECT_NE(read_file(root / "tables.txt").find("Frame identification"), std::string::npos);
}

TEST_F(Cli, EvalIsByteDeterministic) {
  for (auto name : {"det_a", "det_b"})
    ASSERT_EQ(run({"eval", "--checkpoint", stan_ckpt(), "--manifest", manifest(), "--out", (root / name).string(),
                   "--methods", "vanilla,gradcam"}).code, 0);
  for (const auto& e : fs::recursive_directory_iterator(root / "det_a")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), root / "det_a");
    EXPECT_EQ(read_file(e.path()), read_file(root / "det_b" / rel)) << rel;
  }
}

TEST_F(Cli, SmoothGradDegenerateMatchesVanillaFiles) {
  ASSERT_EQ(run({"explain", "--checkpoint", stan_ckpt(), "--manifest", manifest(), "--method", "vanilla", "--clip",
                 "clip_0001", "--out", (root / "ex_v").string()}).code, 0);
  ASSERT_EQ(run({"explain", "--checkpoint", stan_ckpt(), "--manifest", manifest(), "--method", "smoothgrad",
                 "--samples", "1", "--sigma", "0", "--clip", "clip_0001", "--out", (root / "ex_s").string()}).code,
            0);
  for (auto f : {"saliency.stnt", "scores.stnt", "overlay.ppm"})
    EXPECT_EQ(read_file(root / "ex_v" / f), read_file(root / "ex_s" / f)) << f;
}

TEST_F(Cli, ErrorCategories) {
  auto usage = run({});
  EXPECT_EQ(usage.code, kExitUsage);
  EXPECT_EQ(run({"train", "--bogus"}).code, kExitUsage);

  auto unknown = run({"explain", "--checkpoint", stan_ckpt(), "--manifest", manifest(), "--method", "lime", "--clip",
                      "clip_0001", "--out", (root / "bad1").string()});
  EXPECT_EQ(unknown.code, kExitUnknownName);
  EXPECT_EQ(category(unknown), "unknown-name");
  EXPECT_EQ(unknown.err.find('\n'), unknown.err.size() - 1);
  EXPECT_FALSE(fs::exists(root / "bad1"));

  auto view = run({"train", "--manifest", manifest(), "--view", "side", "--out", (root / "bad2.stnk").string()});
  EXPECT_EQ(view.code, kExitUnknownName);
  EXPECT_FALSE(fs::exists(root / "bad2.stnk"));
  EXPECT_EQ(run({"explain", "--checkpoint", stan_ckpt(), "--manifest", manifest(), "--method", "vanilla", "--clip",
                 "nope", "--out", (root / "bad3").string()}).code,
            kExitUnknownName);

  fs::create_directories(root / "broken");
  write_text(root / "broken" / "manifest.json", R"({"format": "stan-manifest", "version": 1, "clips": 3})");
  auto malformed = run({"train", "--manifest", (root / "broken" / "manifest.json").string(), "--out",
                        (root / "bad4.stnk").string()});
  EXPECT_EQ(malformed.code, kExitMalformedManifest);
  EXPECT_EQ(category(malformed), "malformed-manifest");
  EXPECT_FALSE(fs::exists(root / "bad4.stnk"));

  write_text(root / "wide.json", R"({"clips_per_class": 1, "frames": 20, "height": 64, "width": 64})");
  ASSERT_EQ(run({"gen-data", "--config", (root / "wide.json").string(), "--out", (root / "wide").string()}).code, 0);
  auto shape = run({"explain", "--checkpoint", stan_ckpt(), "--manifest", (root / "wide" / "manifest.json").string(),
                    "--method", "vanilla", "--clip", "clip_0000", "--out", (root / "bad5").string()});
  EXPECT_EQ(shape.code, kExitShapeMismatch);
  EXPECT_FALSE(fs::exists(root / "bad5"));

  auto io = run({"train", "--manifest", (root / "missing.json").string(), "--out", (root / "bad6.stnk").string()});
  EXPECT_EQ(io.code, kExitIo);
  EXPECT_EQ(category(io), "io");

  write_text(root / "badtrain.json", R"({"epochs": 0})");
  auto config = run({"train", "--manifest", manifest(), "--train-config", (root / "badtrain.json").string(), "--out",
                     (root / "bad7.stnk").string()});
  EXPECT_EQ(config.code, kExitInvalidConfig);
  EXPECT_EQ(category(config), "invalid-config");
  EXPECT_FALSE(fs::exists(root / "bad7.stnk"));

  write_text(root / "badgen.json", R"({"window_max": 2.0})");
  EXPECT_EQ(run({"gen-data", "--config", (root / "badgen.json").string(), "--out", (root / "bad8").string()}).code,
            kExitInvalidConfig);
  EXPECT_FALSE(fs::exists(root / "bad8"));
}

TEST_F(Cli, GenDataIsDeterministicAndRoundTrips) {
  ASSERT_EQ(run({"gen-data", "--config", (root / "small.json").string(), "--out", (root / "data2").string(),
                 "--seed", "5"}).code, 0);
  EXPECT_EQ(read_file(root / "data" / "manifest.json"), read_file(root / "data2" / "manifest.json"));
  auto m = read_manifest(root / "data" / "manifest.json");
  EXPECT_EQ(m.clips.size(), 12u);
  write_manifest(root / "copy.json", m);
  EXPECT_EQ(manifest_to_json(read_manifest(root / "copy.json", false)), manifest_to_json(m));
  EXPECT_EQ(read_file(root / "copy.json"), read_file(root / "data" / "manifest.json"));
}
