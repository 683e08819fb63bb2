// Copyright 2026 The MTSCI Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <json.hpp>

namespace {

namespace fs = std::filesystem;

struct RunResult {
  int code = -1;
  std::string output;
};

std::string quote(const std::string& s) { return "'" + s + "'"; }

RunResult run(const fs::path& cwd, const std::string& args) {
  const std::string cmd =
      "cd " + quote(cwd.string()) + " && " + quote(MTSCI_CLI_PATH) + " " + args + " 2>&1";
  RunResult r;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (!pipe) return r;
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), static_cast<int>(buf.size()), pipe)) r.output += buf.data();
  const int status = ::pclose(pipe);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  for (std::string cell; std::getline(ss, cell, ',');) out.push_back(cell);
  return out;
}

nlohmann::json report_entry(const fs::path& dir, const std::string& model) {
  const auto all = nlohmann::json::parse(slurp(dir / "report.json"));
  for (const auto& e : all)
    if (e.at("model") == model) return e;
  return nullptr;
}

// Window 8, 3 features; 640 steps give 16 test windows of 24 cells each.
constexpr int kTestRows = 16 * 8 * 3;

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / "mtsci_cli_test";
    fs::remove_all(root_);
    fs::create_directories(root_);
    ASSERT_EQ(run(root_, "synth -o data.csv --steps 640 --features 3 --latents 2 --seed 5").code, 0);
    std::ofstream(root_ / "run.conf") << "dataset.path = data.csv\n"
                                         "dataset.name = tiny\n"
                                         "dataset.window = 8\n"
                                         "model.d = 8\nmodel.layers = 1\nmodel.heads = 2\nmodel.ff = 8\n"
                                         "diffusion.K = 5\n"
                                         "train.epochs = 1\ntrain.batch_size = 8\n"
                                         "infer.samples = 3\n";
    const auto r = run(root_, "train -c run.conf -o trained");
    ASSERT_EQ(r.code, 0) << r.output;
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static fs::path root_;
};

fs::path CliTest::root_;

TEST_F(CliTest, HelpAndUsage) {
  EXPECT_EQ(run(root_, "--help").code, 0);
  EXPECT_EQ(run(root_, "").code, 1);
  EXPECT_EQ(run(root_, "teleport").code, 1);
  EXPECT_EQ(run(root_, "train --no-such-flag").code, 1);
}

TEST_F(CliTest, UnknownKeyNamed) {
  const auto r = run(root_, "simulate -c run.conf -o unk --set train.epoch=3");
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.output.find("train.epoch"), std::string::npos) << r.output;
}

TEST_F(CliTest, SimulateIsReproducibleAndGuarded) {
  ASSERT_EQ(run(root_, "simulate -c run.conf -o sim_a").code, 0);
  ASSERT_EQ(run(root_, "simulate -c run.conf -o sim_b").code, 0);
  int files = 0;
  for (const auto& e : fs::directory_iterator(root_ / "sim_a/masks")) {
    ++files;
    EXPECT_EQ(slurp(e.path()), slurp(root_ / "sim_b/masks" / e.path().filename())) << e.path();
  }
  EXPECT_EQ(files, 3);
  EXPECT_EQ(run(root_, "simulate -c run.conf -o sim_a").code, 1);
  EXPECT_EQ(run(root_, "simulate -c run.conf -o sim_a --force").code, 0);
  ASSERT_EQ(run(root_, "simulate -c run.conf -o sim_c --seed 8").code, 0);
  EXPECT_NE(slurp(root_ / "sim_a/masks/test.point.7.mask"), slurp(root_ / "sim_c/masks/test.point.8.mask"));
}

TEST_F(CliTest, BlockPatternHidesMoreThanFivePercent) {
  // Weather-shaped: 21 features, default window.
  ASSERT_EQ(run(root_, "synth -o wide.csv --steps 10000 --features 21 --latents 4 --seed 6").code, 0);
  ASSERT_EQ(run(root_, "simulate -o blk --pattern block --set dataset.path=wide.csv").code, 0);
  long held = 0, cells = 0;
  for (const std::string split : {"train", "val", "test"}) {
    const auto rows = lines(root_ / ("blk/masks/" + split + ".block.7.mask"));
    ASSERT_GT(rows.size(), 1u) << split;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const auto f = split_csv(rows[i]);
      for (std::size_t j = 2; j < f.size(); ++j, ++cells) held += f[j] == "1";
    }
  }
  EXPECT_GT(cells, 9900L * 21);  // trailing partial windows are dropped
  EXPECT_GT(static_cast<double>(held) / static_cast<double>(cells), 0.05);
}

TEST_F(CliTest, RatioOutOfRangeNamesKey) {
  const auto r = run(root_, "simulate -c run.conf -o bad --set missing.point_ratio=1.5");
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.output.find("missing.point_ratio"), std::string::npos) << r.output;
}

TEST_F(CliTest, ZeroEpochsWarnsAndWritesCheckpoint) {
  const auto r = run(root_, "train -c run.conf -o zero --epochs 0");
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("warning"), std::string::npos) << r.output;
  EXPECT_TRUE(fs::exists(root_ / "zero/model.ckpt"));
}

TEST_F(CliTest, ResumeContinuesEpochCounter) {
  ASSERT_EQ(run(root_, "train -c run.conf -o resume").code, 0);
  const auto r = run(root_, "train -c run.conf -o resume --epochs 2 --resume resume/model.ckpt");
  ASSERT_EQ(r.code, 0) << r.output;
  const auto log = lines(root_ / "resume/train_log.csv");
  ASSERT_EQ(log.size(), 4u);
  for (int e = 1; e <= 3; ++e) EXPECT_EQ(split_csv(log[static_cast<std::size_t>(e)])[0], std::to_string(e));
}

TEST_F(CliTest, ImputeWritesEveryCellAndIsRepeatable) {
  fs::create_directories(root_ / "imp1");
  fs::create_directories(root_ / "imp2");
  ASSERT_EQ(run(root_, "impute -c run.conf -o imp1 --checkpoint trained/model.ckpt").code, 0);
  ASSERT_EQ(run(root_, "impute -c run.conf -o imp2 --checkpoint trained/model.ckpt --workers 3").code, 0);
  const auto rows = lines(root_ / "imp1/imputations.csv");
  EXPECT_EQ(rows.size(), static_cast<std::size_t>(kTestRows + 1));
  EXPECT_EQ(rows[0], "window_start,t,feature,observed_flag,target_flag,truth_if_known,point_estimate,q05,q25,q50,q75,q95");
  EXPECT_EQ(slurp(root_ / "imp1/imputations.csv"), slurp(root_ / "imp2/imputations.csv"));
  EXPECT_EQ(slurp(root_ / "imp1/imputations.quantiles.csv"), slurp(root_ / "imp2/imputations.quantiles.csv"));
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto f = split_csv(rows[i]);
    ASSERT_EQ(f.size(), 12u);
    EXPECT_NE(f[3] == "1", f[4] == "1") << rows[i];
    if (f[3] == "1") EXPECT_EQ(f[6], f[5]) << rows[i];
  }
}

TEST_F(CliTest, SingleSampleQuantilesEqualPoint) {
  ASSERT_EQ(run(root_, "impute -c run.conf -o one --checkpoint trained/model.ckpt --samples 1").code, 0);
  const auto rows = lines(root_ / "one/imputations.csv");
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto f = split_csv(rows[i]);
    for (std::size_t j = 7; j < f.size(); ++j) EXPECT_EQ(f[j], f[6]) << rows[i];
  }
}

TEST_F(CliTest, PerfectPredictionsScoreZero) {
  ASSERT_EQ(run(root_, "impute -c run.conf -o perfect --checkpoint trained/model.ckpt").code, 0);
  const auto rows = lines(root_ / "perfect/imputations.csv");
  {
    std::ofstream out(root_ / "perfect/oracle.csv");
    out << rows[0] << '\n';
    for (std::size_t i = 1; i < rows.size(); ++i) {
      auto f = split_csv(rows[i]);
      if (!f[5].empty())
        for (std::size_t j = 6; j < f.size(); ++j) f[j] = f[5];
      for (std::size_t j = 0; j < f.size(); ++j) out << (j ? "," : "") << f[j];
      out << '\n';
    }
  }
  const auto r = run(root_, "evaluate -c run.conf -o perfect --predictions perfect/oracle.csv --model oracle");
  ASSERT_EQ(r.code, 0) << r.output;
  const auto e = report_entry(root_ / "perfect", "oracle");
  ASSERT_FALSE(e.is_null());
  EXPECT_EQ(e.at("mae").get<double>(), 0.0);
  EXPECT_EQ(e.at("rmse").get<double>(), 0.0);
  EXPECT_GT(e.at("n_cells").get<long>(), 0);
  EXPECT_TRUE(fs::exists(root_ / "perfect/report.csv"));
}

TEST_F(CliTest, BaselinesAndModelShareReport) {
  ASSERT_EQ(run(root_, "baseline -c run.conf -o rep --method mean").code, 0);
  ASSERT_EQ(run(root_, "baseline -c run.conf -o rep --method linear").code, 0);
  ASSERT_EQ(run(root_, "impute -c run.conf -o rep --checkpoint trained/model.ckpt").code, 0);
  ASSERT_EQ(run(root_, "evaluate -c run.conf -o rep --predictions rep/baseline_mean.csv --model mean").code, 0);
  ASSERT_EQ(run(root_, "evaluate -c run.conf -o rep --predictions rep/baseline_linear.csv --model linear").code, 0);
  ASSERT_EQ(run(root_, "evaluate -c run.conf -o rep").code, 0);
  // Re-evaluating replaces the entry instead of duplicating it.
  ASSERT_EQ(run(root_, "evaluate -c run.conf -o rep").code, 0);
  const auto all = nlohmann::json::parse(slurp(root_ / "rep/report.json"));
  EXPECT_EQ(all.size(), 3u);
  const auto mean = report_entry(root_ / "rep", "mean");
  EXPECT_GT(mean.at("mae").get<double>(), 0.0);
  const auto model = report_entry(root_ / "rep", "mtsci");
  ASSERT_FALSE(model.is_null());
  EXPECT_TRUE(model.contains("crps"));
  EXPECT_EQ(model.at("n_cells"), mean.at("n_cells"));
  EXPECT_EQ(lines(root_ / "rep/report.csv").size(), 4u);
}

TEST_F(CliTest, MissingPredictionRowsExitFour) {
  ASSERT_EQ(run(root_, "baseline -c run.conf -o join --method linear").code, 0);
  const auto rows = lines(root_ / "join/baseline_linear.csv");
  {
    std::ofstream out(root_ / "join/partial.csv");
    for (std::size_t i = 0; i < rows.size(); ++i)
      if (i == 0 || split_csv(rows[i])[4] != "1") out << rows[i] << '\n';
  }
  const auto r = run(root_, "evaluate -c run.conf -o join --predictions join/partial.csv");
  EXPECT_EQ(r.code, 4) << r.output;
  EXPECT_NE(r.output.find("no prediction for window_start="), std::string::npos) << r.output;
}

TEST_F(CliTest, CheckpointMismatchExitsThree) {
  auto r = run(root_, "impute -c run.conf -o mm --checkpoint trained/model.ckpt --set model.d=16");
  EXPECT_EQ(r.code, 3) << r.output;
  EXPECT_NE(r.output.find("model.d"), std::string::npos) << r.output;
  r = run(root_, "impute -c run.conf -o mm --checkpoint run.conf");
  EXPECT_EQ(r.code, 3) << r.output;
}

TEST_F(CliTest, DeterministicTrainingReproduces) {
  ASSERT_EQ(run(root_, "train -c run.conf -o det1 --deterministic --seed 4").code, 0);
  ASSERT_EQ(run(root_, "train -c run.conf -o det2 --deterministic --seed 4").code, 0);
  EXPECT_EQ(slurp(root_ / "det1/train_log.csv"), slurp(root_ / "det2/train_log.csv"));
  ASSERT_EQ(run(root_, "impute -c run.conf -o det1 --deterministic").code, 0);
  ASSERT_EQ(run(root_, "impute -c run.conf -o det2 --deterministic").code, 0);
  EXPECT_EQ(slurp(root_ / "det1/imputations.csv"), slurp(root_ / "det2/imputations.csv"));
}

TEST_F(CliTest, EffectiveConfigEchoed) {
  ASSERT_EQ(run(root_, "simulate -c run.conf -o echo --set train.lr=0.002").code, 0);
  const std::string text = slurp(root_ / "echo/simulate.config.txt");
  EXPECT_NE(text.find("train.lr = 0.002"), std::string::npos) << text;
  EXPECT_NE(text.find("dataset.window = 8"), std::string::npos) << text;
}

}  // namespace
