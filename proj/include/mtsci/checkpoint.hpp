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

#ifndef MTSCI_CHECKPOINT_HPP_
#define MTSCI_CHECKPOINT_HPP_

// Checkpoint container:
//   8 bytes   magic "MTSCICKP"
//   uint32    format version
//   uint64    header length in bytes
//   header    JSON: configs, normalizer, schedule, tensor directory
//   payload   float64 tensors in directory order, row-major

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtsci/common.hpp"
#include "mtsci/dataset.hpp"
#include "mtsci/denoiser.hpp"
#include "mtsci/diffusion.hpp"
#include "mtsci/training.hpp"

namespace mtsci {

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;
  static constexpr char kMagic[8] = {'M', 'T', 'S', 'C', 'I', 'C', 'K', 'P'};

  DenoiserConfig model;
  int steps = 50;
  double beta_1 = 1e-4;
  double beta_K = 0.2;
  ScheduleShape shape = ScheduleShape::kQuadratic;
  Objective objective = Objective::kPredictNoise;
  NormStats norm;
  std::vector<std::string> feature_names;
  /// Parameters selected by validation loss; used for inference.
  std::map<std::string, Matrix> params;
  std::optional<ResumeState> resume;
  /// Free-form metadata (effective config text, ablation name, ...).
  nlohmann::json meta = nlohmann::json::object();

  DiffusionSchedule schedule() const { return DiffusionSchedule::build(steps, beta_1, beta_K, shape); }

  /// Throws CheckpointMismatch naming the first differing field.
  void check_compatible(const DenoiserConfig& expected_model, int expected_steps,
                        double expected_beta_1, double expected_beta_K,
                        ScheduleShape expected_shape, Objective expected_objective) const {
    auto fail = [](const std::string& what, const std::string& have, const std::string& want) {
      throw CheckpointMismatch("checkpoint " + what + " is " + have + " but the config asks for " + want);
    };
    const DenoiserConfig& m = model;
    const DenoiserConfig& e = expected_model;
    if (m.window != e.window) fail("window length", std::to_string(m.window), std::to_string(e.window));
    if (m.features != e.features) fail("feature count", std::to_string(m.features), std::to_string(e.features));
    if (m.d != e.d) fail("model.d", std::to_string(m.d), std::to_string(e.d));
    if (m.layers != e.layers) fail("model.layers", std::to_string(m.layers), std::to_string(e.layers));
    if (m.heads != e.heads) fail("model.heads", std::to_string(m.heads), std::to_string(e.heads));
    if (m.ff != e.ff) fail("model.ff", std::to_string(m.ff), std::to_string(e.ff));
    if (m.fusion != e.fusion) fail("cond.fusion", to_string(m.fusion), to_string(e.fusion));
    if (m.pool != e.pool) fail("contrastive.pool", to_string(m.pool), to_string(e.pool));
    if (steps != expected_steps) fail("diffusion.K", std::to_string(steps), std::to_string(expected_steps));
    if (beta_1 != expected_beta_1) fail("diffusion.beta_1", std::to_string(beta_1), std::to_string(expected_beta_1));
    if (beta_K != expected_beta_K) fail("diffusion.beta_K", std::to_string(beta_K), std::to_string(expected_beta_K));
    if (shape != expected_shape) fail("diffusion.shape", to_string(shape), to_string(expected_shape));
    if (objective != expected_objective)
      fail("train.objective", to_string(objective), to_string(expected_objective));
  }

  void save(const std::string& path) const {
    using nlohmann::json;
    json header;
    header["model"] = {{"window", model.window}, {"features", model.features}, {"d", model.d},
                       {"layers", model.layers}, {"heads", model.heads},     {"ff", model.ff},
                       {"dropout", model.dropout}, {"fusion", to_string(model.fusion)},
                       {"pool", to_string(model.pool)}};
    header["diffusion"] = {{"K", steps}, {"beta_1", beta_1}, {"beta_K", beta_K}, {"shape", to_string(shape)}};
    header["objective"] = to_string(objective);
    header["normalizer"] = {{"mean", std::vector<double>(norm.mean.data(), norm.mean.data() + norm.mean.size())},
                            {"std", std::vector<double>(norm.std.data(), norm.std.data() + norm.std.size())}};
    header["feature_names"] = feature_names;
    header["meta"] = meta;

    std::vector<std::pair<std::string, const Matrix*>> tensors;
    for (const auto& [name, m] : params) tensors.emplace_back("params/" + name, &m);
    if (resume) {
      header["resume"] = {{"epoch", resume->epoch},
                          {"best_val", resume->best_val},
                          {"best_epoch", resume->best_epoch},
                          {"stale_epochs", resume->stale_epochs},
                          {"adam_steps", resume->adam_steps}};
      for (const auto& [name, m] : resume->last_params) tensors.emplace_back("last/" + name, &m);
      for (const auto& [name, m] : resume->adam_m) tensors.emplace_back("adam_m/" + name, &m);
      for (const auto& [name, m] : resume->adam_v) tensors.emplace_back("adam_v/" + name, &m);
    }
    json dir = json::array();
    for (const auto& [name, m] : tensors) dir.push_back({{"name", name}, {"rows", m->rows()}, {"cols", m->cols()}});
    header["tensors"] = dir;

    const std::string text = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint '" + path + "'");
    out.write(kMagic, sizeof kMagic);
    const std::uint32_t version = kVersion;
    const std::uint64_t len = text.size();
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, m] : tensors) {
      for (Eigen::Index i = 0; i < m->rows(); ++i)
        for (Eigen::Index j = 0; j < m->cols(); ++j) {
          const double v = (*m)(i, j);
          out.write(reinterpret_cast<const char*>(&v), sizeof v);
        }
    }
    if (!out) throw Error("failed writing checkpoint '" + path + "'");
  }

  static Checkpoint load(const std::string& path) {
    using nlohmann::json;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointMismatch("cannot open checkpoint '" + path + "'");
    char magic[8];
    std::uint32_t version = 0;
    std::uint64_t len = 0;
    in.read(magic, sizeof magic);
    if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0)
      throw CheckpointMismatch("'" + path + "' is not a checkpoint file");
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    in.read(reinterpret_cast<char*>(&len), sizeof len);
    if (!in || version != kVersion)
      throw CheckpointMismatch("unsupported checkpoint version " + std::to_string(version));
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    json header;
    try {
      header = json::parse(text);
    } catch (const json::exception& e) {
      throw CheckpointMismatch(std::string("corrupt checkpoint header: ") + e.what());
    }
    Checkpoint ck;
    try {
      const auto& m = header.at("model");
      ck.model.window = m.at("window");
      ck.model.features = m.at("features");
      ck.model.d = m.at("d");
      ck.model.layers = m.at("layers");
      ck.model.heads = m.at("heads");
      ck.model.ff = m.at("ff");
      ck.model.dropout = m.at("dropout");
      ck.model.fusion = parse_fusion(m.at("fusion"));
      ck.model.pool = parse_pool(m.at("pool"));
      const auto& d = header.at("diffusion");
      ck.steps = d.at("K");
      ck.beta_1 = d.at("beta_1");
      ck.beta_K = d.at("beta_K");
      ck.shape = parse_schedule_shape(d.at("shape"));
      ck.objective = parse_objective(header.at("objective"));
      const std::vector<double> mean = header.at("normalizer").at("mean");
      const std::vector<double> sd = header.at("normalizer").at("std");
      ck.norm.mean = Eigen::Map<const Vector>(mean.data(), static_cast<Eigen::Index>(mean.size()));
      ck.norm.std = Eigen::Map<const Vector>(sd.data(), static_cast<Eigen::Index>(sd.size()));
      ck.feature_names = header.at("feature_names").get<std::vector<std::string>>();
      ck.meta = header.value("meta", json::object());
      if (header.contains("resume")) {
        const auto& r = header.at("resume");
        ResumeState st;
        st.epoch = r.at("epoch");
        st.best_val = r.at("best_val").is_null() ? std::numeric_limits<double>::infinity()
                                                 : r.at("best_val").get<double>();
        st.best_epoch = r.at("best_epoch");
        st.stale_epochs = r.at("stale_epochs");
        st.adam_steps = r.at("adam_steps");
        ck.resume = std::move(st);
      }
      for (const auto& t : header.at("tensors")) {
        const std::string name = t.at("name");
        const Eigen::Index rows = t.at("rows"), cols = t.at("cols");
        Matrix m(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i)
          for (Eigen::Index j = 0; j < cols; ++j) in.read(reinterpret_cast<char*>(&m(i, j)), sizeof(double));
        if (!in) throw CheckpointMismatch("checkpoint payload truncated at '" + name + "'");
        const auto slash = name.find('/');
        const std::string group = name.substr(0, slash), key = name.substr(slash + 1);
        if (group == "params") {
          ck.params[key] = std::move(m);
        } else if (ck.resume && group == "last") {
          ck.resume->last_params[key] = std::move(m);
        } else if (ck.resume && group == "adam_m") {
          ck.resume->adam_m[key] = std::move(m);
        } else if (ck.resume && group == "adam_v") {
          ck.resume->adam_v[key] = std::move(m);
        }
      }
    } catch (const json::exception& e) {
      throw CheckpointMismatch(std::string("malformed checkpoint header: ") + e.what());
    } catch (const ConfigError& e) {
      throw CheckpointMismatch(std::string("malformed checkpoint header: ") + e.what());
    }
    if (ck.resume) ck.resume->best_params = ck.params;
    return ck;
  }
};

}  // namespace mtsci

#endif  // MTSCI_CHECKPOINT_HPP_
