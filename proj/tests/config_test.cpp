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

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "mtsci/checkpoint.hpp"
#include "mtsci/common.hpp"
#include "mtsci/config.hpp"
#include "mtsci/denoiser.hpp"

namespace mtsci {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("mtsci_config_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
             ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

TEST(RunConfigTest, Defaults) {
  RunConfig c;
  EXPECT_EQ(c.get_int("dataset.window"), 24);
  EXPECT_EQ(c.get_int("diffusion.K"), 50);
  EXPECT_DOUBLE_EQ(c.get_double("diffusion.beta_1"), 1e-4);
  EXPECT_DOUBLE_EQ(c.get_double("diffusion.beta_K"), 0.2);
  EXPECT_EQ(c.get_int("model.d"), 64);
  EXPECT_EQ(c.get_int("model.layers"), 2);
  EXPECT_DOUBLE_EQ(c.get_double("train.lambda"), 0.1);
  EXPECT_EQ(c.get_string("missing.pattern"), "point");
  EXPECT_EQ(c.ablation_name(), "mtsci");
  const auto sched = c.schedule();
  EXPECT_EQ(sched.steps(), 50);
}

TEST(RunConfigTest, UnknownKeyRejected) {
  RunConfig c;
  try {
    c.set("train.epoch", "3");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("train.epoch"), std::string::npos);
  }
}

TEST(RunConfigTest, TypedParsing) {
  RunConfig c;
  c.set_assignment("train.epochs=7");
  c.set_assignment("train.lr = 0.005");
  c.set_assignment("train.intra=false");
  EXPECT_EQ(c.get_int("train.epochs"), 7);
  EXPECT_DOUBLE_EQ(c.get_double("train.lr"), 0.005);
  EXPECT_FALSE(c.get_bool("train.intra"));
  EXPECT_THROW(c.set("train.epochs", "seven"), ConfigError);
  EXPECT_THROW(c.set("train.intra", "maybe"), ConfigError);
  EXPECT_THROW(c.set_assignment("no_equals_sign"), ConfigError);
}

TEST(RunConfigTest, TypedViewsValidate) {
  RunConfig c;
  c.set("model.d", "7");
  EXPECT_THROW(c.denoiser(3), ConfigError);
  c = RunConfig{};
  c.set("missing.point_ratio", "1.5");
  try {
    c.missing_pattern();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("missing.point_ratio"), std::string::npos) << e.what();
  }
  c = RunConfig{};
  c.set("diffusion.beta_K", "1.5");
  EXPECT_THROW(c.schedule(), ConfigError);
}

TEST(RunConfigTest, FileWithInclude) {
  TempDir dir;
  write(dir / "base.conf", "# base\ntrain.epochs = 3\nmodel.d = 32\n");
  write(dir / "run.conf", "@include base.conf\nmodel.d = 16   # later wins\n");
  RunConfig c;
  c.merge_file((dir / "run.conf").string());
  EXPECT_EQ(c.get_int("train.epochs"), 3);
  EXPECT_EQ(c.get_int("model.d"), 16);
}

TEST(RunConfigTest, IncludeCycleDetected) {
  TempDir dir;
  write(dir / "a.conf", "@include b.conf\n");
  write(dir / "b.conf", "@include a.conf\n");
  RunConfig c;
  try {
    c.merge_file((dir / "a.conf").string());
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("cycle"), std::string::npos) << e.what();
  }
}

TEST(RunConfigTest, FileErrorNamesLine) {
  TempDir dir;
  write(dir / "bad.conf", "train.epochs = 2\n\nbogus.key = 1\n");
  RunConfig c;
  try {
    c.merge_file((dir / "bad.conf").string());
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.conf:3"), std::string::npos) << e.what();
  }
  EXPECT_THROW(c.merge_file((dir / "absent.conf").string()), ConfigError);
}

TEST(RunConfigTest, Ablations) {
  RunConfig c;
  c.apply_ablation("wo_cons");
  EXPECT_FALSE(c.train_config().intra);
  EXPECT_FALSE(c.train_config().inter);
  EXPECT_EQ(c.ablation_name(), "wo_cons");
  c.apply_ablation("wo_intra");
  EXPECT_FALSE(c.train_config().intra);
  EXPECT_TRUE(c.train_config().inter);
  EXPECT_EQ(c.ablation_name(), "wo_intra");
  c.apply_ablation("wo_inter");
  EXPECT_EQ(c.ablation_name(), "wo_inter");
  c.apply_ablation("none");
  EXPECT_EQ(c.ablation_name(), "mtsci");
  EXPECT_THROW(c.apply_ablation("wo_everything"), ConfigError);
}

TEST(RunConfigTest, SeedEnvironmentOverride) {
  RunConfig c;
  c.set("train.seed", "5");
  ::unsetenv("MTSCI_SEED");
  EXPECT_EQ(c.seed("train.seed"), 5u);
  ::setenv("MTSCI_SEED", "123", 1);
  EXPECT_EQ(c.seed("train.seed"), 123u);
  EXPECT_EQ(c.train_config().seed, 123u);
  ::setenv("MTSCI_SEED", "abc", 1);
  EXPECT_THROW(c.seed("train.seed"), ConfigError);
  ::unsetenv("MTSCI_SEED");
}

TEST(RunConfigTest, SerializeRoundTrips) {
  RunConfig a;
  a.set("train.lr", "0.0003");
  a.set("dataset.name", "traffic");
  a.set("train.inter", "false");
  const std::string text = a.serialize();
  EXPECT_NE(text.find("train.lr = 0.00029999999999999997"), std::string::npos);
  RunConfig b;
  std::istringstream in(text);
  b.merge_text(in, ".", "<serialized>");
  EXPECT_EQ(b.serialize(), text);
}

Checkpoint sample_checkpoint() {
  DenoiserConfig cfg;
  cfg.window = 4;
  cfg.features = 2;
  cfg.d = 8;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.ff = 8;
  Denoiser<double> model(cfg, 3);
  Checkpoint ck;
  ck.model = cfg;
  ck.steps = 10;
  ck.beta_1 = 1e-3;
  ck.beta_K = 0.3;
  ck.norm.mean = Vector::LinSpaced(2, -1.0, 2.5);
  ck.norm.std = Vector::Constant(2, 0.1);
  ck.feature_names = {"north", "south"};
  ck.params = model.parameter_values();
  ResumeState rs;
  rs.epoch = 4;
  rs.best_val = 0.25;
  rs.best_epoch = 3;
  rs.stale_epochs = 1;
  rs.adam_steps = 40;
  rs.last_params = ck.params;
  rs.last_params["input.b"](0, 0) += 1.0;
  for (const auto& [name, v] : ck.params) {
    rs.adam_m[name] = Matrix::Constant(v.rows(), v.cols(), 0.5);
    rs.adam_v[name] = Matrix::Constant(v.rows(), v.cols(), 0.25);
  }
  ck.resume = rs;
  ck.meta["ablation"] = "mtsci";
  return ck;
}

TEST(CheckpointTest, RoundTripIsExact) {
  TempDir dir;
  const Checkpoint ck = sample_checkpoint();
  const auto path = (dir / "model.ckpt").string();
  ck.save(path);
  const Checkpoint back = Checkpoint::load(path);
  EXPECT_EQ(back.model, ck.model);
  EXPECT_EQ(back.steps, 10);
  EXPECT_EQ(back.beta_1, ck.beta_1);
  EXPECT_EQ(back.beta_K, ck.beta_K);
  EXPECT_TRUE(back.norm.mean == ck.norm.mean);
  EXPECT_TRUE(back.norm.std == ck.norm.std);
  EXPECT_EQ(back.feature_names, ck.feature_names);
  ASSERT_EQ(back.params.size(), ck.params.size());
  for (const auto& [name, v] : ck.params) EXPECT_TRUE(back.params.at(name) == v) << name;
  ASSERT_TRUE(back.resume.has_value());
  EXPECT_EQ(back.resume->epoch, 4);
  EXPECT_EQ(back.resume->best_epoch, 3);
  EXPECT_EQ(back.resume->stale_epochs, 1);
  EXPECT_EQ(back.resume->adam_steps, 40);
  EXPECT_EQ(back.resume->best_val, 0.25);
  EXPECT_TRUE(back.resume->last_params.at("input.b") == ck.resume->last_params.at("input.b"));
  EXPECT_TRUE(back.resume->adam_v.at("input.w") == ck.resume->adam_v.at("input.w"));
  EXPECT_EQ(back.meta.at("ablation"), "mtsci");

  Denoiser<double> model(ck.model, 99);
  model.load_parameters(back.params);
  EXPECT_TRUE(model.parameter("input.w")->value == ck.params.at("input.w"));
}

TEST(CheckpointTest, CompatibilityNamesField) {
  const Checkpoint ck = sample_checkpoint();
  EXPECT_NO_THROW(ck.check_compatible(ck.model, 10, 1e-3, 0.3, ScheduleShape::kQuadratic,
                                      Objective::kPredictNoise));
  DenoiserConfig other = ck.model;
  other.d = 16;
  try {
    ck.check_compatible(other, 10, 1e-3, 0.3, ScheduleShape::kQuadratic, Objective::kPredictNoise);
    FAIL();
  } catch (const CheckpointMismatch& e) {
    EXPECT_NE(std::string(e.what()).find("model.d"), std::string::npos) << e.what();
  }
  try {
    ck.check_compatible(ck.model, 50, 1e-3, 0.3, ScheduleShape::kQuadratic, Objective::kPredictNoise);
    FAIL();
  } catch (const CheckpointMismatch& e) {
    EXPECT_NE(std::string(e.what()).find("diffusion.K"), std::string::npos) << e.what();
  }
}

TEST(CheckpointTest, RejectsForeignAndTruncatedFiles) {
  TempDir dir;
  write(dir / "notes.txt", "these are not the weights you are looking for");
  EXPECT_THROW(Checkpoint::load((dir / "notes.txt").string()), CheckpointMismatch);
  EXPECT_THROW(Checkpoint::load((dir / "absent.ckpt").string()), CheckpointMismatch);

  const auto path = dir / "model.ckpt";
  sample_checkpoint().save(path.string());
  fs::resize_file(path, fs::file_size(path) - 64);
  EXPECT_THROW(Checkpoint::load(path.string()), CheckpointMismatch);
}

TEST(CheckpointTest, RejectsUnknownVersion) {
  TempDir dir;
  const auto path = dir / "model.ckpt";
  sample_checkpoint().save(path.string());
  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(8);
  const std::uint32_t v = 99;
  f.write(reinterpret_cast<const char*>(&v), sizeof v);
  f.close();
  try {
    Checkpoint::load(path.string());
    FAIL();
  } catch (const CheckpointMismatch& e) {
    EXPECT_NE(std::string(e.what()).find("version 99"), std::string::npos) << e.what();
  }
}

}  // namespace
}  // namespace mtsci
