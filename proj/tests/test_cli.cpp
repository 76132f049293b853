// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "vidgan_cli.hpp"

namespace vidgan {
namespace {

namespace fs = std::filesystem;

struct Result {
  int code;
  std::string out, err;
};

Result call(std::vector<std::string> args) {
  args.insert(args.begin(), "vidgan");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("vidgan_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

RunConfig small_run(const fs::path& out) {
  RunConfig r = testing::tiny_run(3, 2, 4, 2);
  r.dataset.toy.frames = 4;
  r.train.iterations = 4;
  r.train.snapshot_interval = 2;
  r.output_dir = out.string();
  return r;
}

fs::path write_config(const RunConfig& r, const fs::path& path) {
  std::ofstream(path) << to_json(r).dump(2);
  return path;
}

// Keeps VIDGAN_OUTPUT_ROOT unset for the tests that do not set it.
class Cli : public ::testing::Test {
 protected:
  void SetUp() override { unsetenv(cli::kOutputRootEnv); }
  void TearDown() override { unsetenv(cli::kOutputRootEnv); }
};

TEST_F(Cli, HelpAndUsageErrors) {
  EXPECT_EQ(call({"--help"}).code, 0);
  EXPECT_EQ(call({}).code, 2);
  EXPECT_EQ(call({"bogus"}).code, 2);
  EXPECT_EQ(call({"generate"}).code, 2);
  EXPECT_EQ(call({"train", "--preset", "no-such-preset"}).code, 2);
}

TEST_F(Cli, DryRunTouchesNoFiles) {
  const auto root = scratch_dir("dry");
  setenv(cli::kOutputRootEnv, root.c_str(), 1);
  const Result r = call({"train", "--preset", "desk-64px", "--dry-run", "--seed", "3"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("GFlops"), std::string::npos);
  EXPECT_TRUE(fs::is_empty(root));
}

TEST_F(Cli, SchemaErrorsExitTwo) {
  const auto dir = scratch_dir("schema");
  std::ofstream(dir / "bad.json") << R"({"model": {"levels": 4, "no_such_key": 1}})";
  const Result r = call({"train", (dir / "bad.json").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("no_such_key"), std::string::npos);
  std::ofstream(dir / "broken.json") << "{ not json";
  EXPECT_EQ(call({"train", (dir / "broken.json").string()}).code, 2);
  EXPECT_EQ(call({"train", (dir / "missing.json").string()}).code, 2);
}

TEST_F(Cli, TrainResumeAndDeterminism) {
  const auto dir = scratch_dir("train");
  const fs::path cfg = write_config(small_run(dir / "a"), dir / "run.json");
  const std::string before = slurp(cfg);
  const Result r = call({"train", cfg.string(), "--seed", "7", "--log-every", "1"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(cfg), before);
  EXPECT_TRUE(fs::exists(dir / "a" / kFinalCheckpoint));
  EXPECT_TRUE(fs::exists(dir / "a" / snapshot_name(2)));
  const std::string log = slurp(dir / "a" / kTrainLog);

  const Result again = call({"train", cfg.string(), "--seed", "7", "--resume"});
  EXPECT_EQ(again.code, 0) << again.err;
  EXPECT_EQ(slurp(dir / "a" / kTrainLog), log);

  ASSERT_EQ(call({"train", cfg.string(), "--seed", "7", "--output", (dir / "b").string()}).code, 0);
  EXPECT_EQ(slurp(dir / "b" / kTrainLog), log);
}

TEST_F(Cli, DivergenceExitsThree) {
  const auto dir = scratch_dir("diverge");
  RunConfig c = small_run(dir / "run");
  c.train.lr = 1e30;
  c.train.iterations = 20;
  const Result r = call({"train", write_config(c, dir / "run.json").string()});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("diverged"), std::string::npos);
}

class CliWithCheckpoint : public Cli {
 protected:
  static void SetUpTestSuite() {
    dir_ = scratch_dir("ckpt");
    RunConfig c = small_run(dir_ / "run");
    run_training<float>(c);
    RunConfig cond = c;
    cond.model.label_count = cond.discriminator.label_count = 3;
    cond.dataset.use_labels = true;
    cond.dataset.toy.label_count = 3;
    snapshot(TrainState<float>::create(cond), dir_ / "cond.vgck");
  }
  static fs::path ckpt() { return dir_ / "run" / kFinalCheckpoint; }
  static inline fs::path dir_;
};

TEST_F(CliWithCheckpoint, GenerateIsByteIdenticalUnderSeed) {
  for (const char* sub : {"x", "y"}) {
    const Result r = call({"generate", ckpt().string(), "--n", "1", "--seed", "5", "--out", (dir_ / sub).string()});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  for (int t = 0; t < 4; ++t) {
    const std::string f = "clip_000/frame_00" + std::to_string(t) + ".png";
    EXPECT_EQ(slurp(dir_ / "x" / f), slurp(dir_ / "y" / f));
    EXPECT_FALSE(slurp(dir_ / "x" / f).empty());
  }
}

TEST_F(CliWithCheckpoint, GridStrideSelectsFrames) {
  const fs::path grid = dir_ / "grid.png";
  ASSERT_EQ(call({"generate", ckpt().string(), "--n", "2", "--grid", grid.string(), "--stride", "2",
                  "--out", (dir_ / "g").string()}).code, 0);
  const Image img = read_png(grid);
  const int side = 8;  // 3 levels of a 1x1 coarse map
  EXPECT_EQ(img.width, 2 * side + 3);
  EXPECT_EQ(img.height, 2 * side + 3);
  // The second column is frame 2 of clip 0.
  const Image frame2 = read_png(dir_ / "g" / "clip_000" / "frame_002.png");
  for (int y = 0; y < side; ++y)
    for (int x = 0; x < side; ++x) EXPECT_EQ(img.at(1 + y, 2 + side + x, 0), frame2.at(y, x, 0));
}

TEST_F(CliWithCheckpoint, LabelsOnConditionalModels) {
  EXPECT_EQ(call({"generate", ckpt().string(), "--label", "1", "--out", (dir_ / "l").string()}).code, 2);
  const fs::path cond = dir_ / "cond.vgck";
  ASSERT_EQ(call({"generate", cond.string(), "--label", "0", "--seed", "2", "--out", (dir_ / "c0").string()}).code, 0);
  ASSERT_EQ(call({"generate", cond.string(), "--label", "2", "--seed", "2", "--out", (dir_ / "c2").string()}).code, 0);
  EXPECT_NE(slurp(dir_ / "c0" / "clip_000" / "frame_001.png"), slurp(dir_ / "c2" / "clip_000" / "frame_001.png"));
  EXPECT_EQ(call({"generate", cond.string(), "--label", "3"}).code, 2);
}

TEST_F(CliWithCheckpoint, MissingCheckpointNamesPath) {
  for (const char* cmd : {"generate", "interpolate", "consistency"}) {
    const Result r = call({cmd, "/no/such/file.vgck"});
    EXPECT_EQ(r.code, 2) << cmd;
    EXPECT_NE(r.err.find("/no/such/file.vgck"), std::string::npos) << cmd;
  }
}

TEST_F(CliWithCheckpoint, InterpolateWritesEverySteps) {
  const Result r = call({"interpolate", ckpt().string(), "--steps", "3", "--seed", "4", "--out", (dir_ / "i").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  for (int k = 0; k < 3; ++k) EXPECT_TRUE(fs::exists(dir_ / "i" / ("clip_00" + std::to_string(k)) / "frame_000.png"));
  EXPECT_EQ(call({"interpolate", ckpt().string(), "--steps", "1"}).code, 2);
}

TEST_F(CliWithCheckpoint, ConsistencyWritesCsvUnderOutputRoot) {
  const auto root = scratch_dir("root");
  setenv(cli::kOutputRootEnv, root.c_str(), 1);
  const Result r = call({"consistency", ckpt().string(), "--n", "3", "--seed", "1", "--csv", "curve.csv"});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream in(root / "curve.csv");
  std::string line;
  int rows = -1;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 4);
}

TEST_F(CliWithCheckpoint, EvalScoresSnapshots) {
  EmbedderConfig ec;
  ec.frames = 4;
  ec.height = ec.width = 8;
  Rng rng(1);
  Embedder(ec, rng).save(dir_ / "emb.vgck");
  const Result r = call({"eval", (dir_ / "run").string(), "--embedder", (dir_ / "emb.vgck").string(), "--samples", "4",
                         "--repeats", "1", "--stride", "2", "--seed", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("best IS"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir_ / "run" / "eval.csv"));
}

TEST_F(Cli, EvalOnEmptyRunExitsTwo) {
  const auto dir = scratch_dir("emptyrun");
  const Result r = call({"eval", dir.string(), "--embedder", "x.vgck"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("empty run"), std::string::npos);
}

TEST_F(Cli, EstimateTableAndPlan) {
  const Result r = call({"estimate", "--preset", "paper-192px", "--rates", "2,4", "--budget-mb", "500"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.find("Method"), 0u);
  EXPECT_NE(r.out.find("Dis (naive impl.)"), std::string::npos);
  EXPECT_NE(r.out.find("Subsampling (s_t=4)"), std::string::npos);
  EXPECT_NE(r.out.find("plan for 500 MB"), std::string::npos);
  EXPECT_EQ(call({"estimate", "--preset", "paper-192px", "--budget-mb", "0.001"}).code, 2);
}

TEST_F(Cli, EmbedderCommand) {
  const auto dir = scratch_dir("embedder");
  const Result r = call({"embedder", "--preset", "cpu-16px", "--steps", "3", "--batch", "2", "--out",
                         (dir / "e.vgck").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(Embedder::load(dir / "e.vgck").config().frames, 16);
  EXPECT_EQ(call({"embedder", "--preset", "paper-192px"}).code, 2);
}

TEST_F(Cli, PresetPrintsLoadableConfig) {
  const Result r = call({"preset", "cpu-16px", "--seed", "9"});
  ASSERT_EQ(r.code, 0);
  const RunConfig c = run_config_from_json(nlohmann::json::parse(r.out));
  EXPECT_EQ(c.train.seed, 9u);
  EXPECT_EQ(c.model.height, 16);
}

}  // namespace
}  // namespace vidgan
