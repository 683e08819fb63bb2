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

#ifndef MTSCI_CONFIG_HPP_
#define MTSCI_CONFIG_HPP_

// Run configuration: a flat tree of dotted keys with typed values.
//
//   # comment
//   @include base.conf        (path relative to the including file)
//   train.epochs = 30
//
// Every key has a default; unknown keys are rejected. Later assignments win,
// so command-line overrides are applied after files.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <variant>

#include "mtsci/common.hpp"
#include "mtsci/dataset.hpp"
#include "mtsci/denoiser.hpp"
#include "mtsci/diffusion.hpp"
#include "mtsci/masking.hpp"
#include "mtsci/training.hpp"

namespace mtsci {

class RunConfig {
 public:
  using Value = std::variant<long, double, bool, std::string>;

  RunConfig() {
    def("dataset.name", std::string("dataset"));
    def("dataset.path", std::string(""));
    def("dataset.split", std::string("0.7,0.1,0.2"));
    def("dataset.split.train", std::string(""));
    def("dataset.split.val", std::string(""));
    def("dataset.split.test", std::string(""));
    def("dataset.window", 24L);
    def("dataset.missing_token", std::string("NaN"));

    def("missing.pattern", std::string("point"));
    def("missing.point_ratio", 0.2);
    def("missing.block_base_ratio", 0.05);
    def("missing.block_prob", 0.0015);
    def("missing.seed", 7L);

    def("mask.kind", std::string("point"));
    def("mask.point_ratio_max", 1.0);
    def("mask.block_prob_max", 0.15);

    def("diffusion.K", 50L);
    def("diffusion.beta_1", 1e-4);
    def("diffusion.beta_K", 0.2);
    def("diffusion.shape", std::string("quadratic"));

    def("model.d", 64L);
    def("model.layers", 2L);
    def("model.heads", 4L);
    def("model.ff", 64L);
    def("model.dropout", 0.0);
    def("cond.fusion", std::string("concat"));
    def("contrastive.pool", std::string("mean"));

    def("train.lambda", 0.1);
    def("train.tau", 0.1);
    def("train.lr", 1e-3);
    def("train.epochs", 100L);
    def("train.batch_size", 16L);
    def("train.patience", 10L);
    def("train.seed", 1L);
    def("train.intra", true);
    def("train.inter", true);
    def("train.objective", std::string("predict_noise"));
    def("loss.both_views", true);
    def("loss.reduction", std::string("mean"));

    def("infer.samples", 100L);
    def("infer.seed", 1L);
    def("metrics.mape_floor", 1e-4);

    def("output.dir", std::string("out"));
    def("run.workers", 1L);
    def("run.deterministic", false);
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  /// Assigns from text, converting to the key's declared type.
  void set(const std::string& key, const std::string& text) {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second = std::visit([&](const auto& current) -> Value { return parse_as(current, key, text); },
                            it->second);
  }

  /// Applies `key=value` (as given on the command line).
  void set_assignment(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
    set(detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
  }

  void merge_file(const std::string& path) {
    std::set<std::string> stack;
    merge_file(std::filesystem::path(path), stack);
  }

  void merge_text(std::istream& in, const std::filesystem::path& base_dir, const std::string& origin) {
    std::set<std::string> stack;
    merge_stream(in, base_dir, origin, stack);
  }

  long get_int(const std::string& key) const { return get<long>(key); }
  double get_double(const std::string& key) const { return get<double>(key); }
  bool get_bool(const std::string& key) const { return get<bool>(key); }
  const std::string& get_string(const std::string& key) const { return get<std::string>(key); }

  /// Seeds honour MTSCI_SEED when it is set.
  std::uint64_t seed(const std::string& key) const {
    if (const char* env = std::getenv("MTSCI_SEED"); env && *env) {
      try {
        return std::stoull(env);
      } catch (const std::exception&) {
        throw ConfigError("MTSCI_SEED must be a non-negative integer");
      }
    }
    const long v = get_int(key);
    if (v < 0) throw ConfigError(key + " must be >= 0");
    return static_cast<std::uint64_t>(v);
  }

  /// Effective configuration, one `key = value` per line in key order.
  std::string serialize() const {
    std::ostringstream out;
    for (const auto& [key, value] : values_) out << key << " = " << format(value) << '\n';
    return out.str();
  }

  // Typed views -------------------------------------------------------------

  SplitSpec split_spec() const {
    const std::string& s = get_string("dataset.split");
    if (s == "dates") {
      return SplitSpec::dates(parse_range("dataset.split.train"), parse_range("dataset.split.val"),
                              parse_range("dataset.split.test"));
    }
    std::vector<double> parts;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        parts.push_back(std::stod(item));
      } catch (const std::exception&) {
        throw ConfigError("dataset.split: bad fraction '" + item + "'");
      }
    }
    if (parts.size() != 3) throw ConfigError("dataset.split needs three fractions or 'dates'");
    return SplitSpec::fractions(parts[0], parts[1], parts[2]);
  }

  LoadOptions load_options() const {
    LoadOptions o;
    o.missing_tokens.push_back(get_string("dataset.missing_token"));
    return o;
  }

  MissingPattern missing_pattern() const {
    MissingPattern p;
    p.kind = parse_missing_kind(get_string("missing.pattern"));
    p.point_ratio = get_double("missing.point_ratio");
    p.block_base_ratio = get_double("missing.block_base_ratio");
    p.block_prob = get_double("missing.block_prob");
    p.validate();
    return p;
  }

  DiffusionSchedule schedule() const {
    return DiffusionSchedule::build(static_cast<int>(get_int("diffusion.K")),
                                    get_double("diffusion.beta_1"), get_double("diffusion.beta_K"),
                                    parse_schedule_shape(get_string("diffusion.shape")));
  }

  DenoiserConfig denoiser(int features) const {
    DenoiserConfig c;
    c.window = static_cast<int>(get_int("dataset.window"));
    c.features = features;
    c.d = static_cast<int>(get_int("model.d"));
    c.layers = static_cast<int>(get_int("model.layers"));
    c.heads = static_cast<int>(get_int("model.heads"));
    c.ff = static_cast<int>(get_int("model.ff"));
    c.dropout = get_double("model.dropout");
    c.fusion = parse_fusion(get_string("cond.fusion"));
    c.pool = parse_pool(get_string("contrastive.pool"));
    c.validate();
    return c;
  }

  MaskStrategy mask_strategy() const {
    const auto kind = parse_mask_kind(get_string("mask.kind"));
    MaskStrategy s = kind == MaskStrategy::Kind::kPoint
                         ? MaskStrategy::point(get_double("mask.point_ratio_max"))
                         : MaskStrategy::block(get_double("mask.block_prob_max"));
    s.validate();
    return s;
  }

  TrainConfig train_config() const {
    TrainConfig t;
    t.lambda = get_double("train.lambda");
    t.tau = get_double("train.tau");
    t.learning_rate = get_double("train.lr");
    t.epochs = static_cast<int>(get_int("train.epochs"));
    t.batch_size = static_cast<int>(get_int("train.batch_size"));
    t.patience = static_cast<int>(get_int("train.patience"));
    t.seed = seed("train.seed");
    t.intra = get_bool("train.intra");
    t.inter = get_bool("train.inter");
    t.both_views = get_bool("loss.both_views");
    t.objective = parse_objective(get_string("train.objective"));
    t.reduction = parse_reduction(get_string("loss.reduction"));
    t.strategy = mask_strategy();
    t.validate();
    return t;
  }

  /// Sets the consistency flags for a named ablation.
  void apply_ablation(const std::string& name) {
    if (name == "none" || name == "full") {
      set("train.intra", "true");
      set("train.inter", "true");
    } else if (name == "wo_intra") {
      set("train.intra", "false");
      set("train.inter", "true");
    } else if (name == "wo_inter") {
      set("train.intra", "true");
      set("train.inter", "false");
    } else if (name == "wo_cons") {
      set("train.intra", "false");
      set("train.inter", "false");
    } else {
      throw ConfigError("ablation must be none, wo_intra, wo_inter or wo_cons, got '" + name + "'");
    }
  }

  std::string ablation_name() const {
    const bool intra = get_bool("train.intra"), inter = get_bool("train.inter");
    if (intra && inter) return "mtsci";
    if (!intra && !inter) return "wo_cons";
    return intra ? "wo_inter" : "wo_intra";
  }

 private:
  template <typename V>
  void def(const std::string& key, V value) {
    values_[key] = Value(std::move(value));
  }

  template <typename V>
  const V& get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return std::get<V>(it->second);
  }

  static Value parse_as(long, const std::string& key, const std::string& text) {
    try {
      std::size_t used = 0;
      const long v = std::stol(text, &used);
      if (used == text.size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError(key + ": expected an integer, got '" + text + "'");
  }
  static Value parse_as(double, const std::string& key, const std::string& text) {
    try {
      std::size_t used = 0;
      const double v = std::stod(text, &used);
      if (used == text.size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError(key + ": expected a number, got '" + text + "'");
  }
  static Value parse_as(bool, const std::string& key, const std::string& text) {
    if (text == "true" || text == "1" || text == "yes") return true;
    if (text == "false" || text == "0" || text == "no") return false;
    throw ConfigError(key + ": expected true or false, got '" + text + "'");
  }
  static Value parse_as(const std::string&, const std::string&, const std::string& text) {
    if (text.size() >= 2 && text.front() == '"' && text.back() == '"')
      return text.substr(1, text.size() - 2);
    return text;
  }

  static std::string format(const Value& v) {
    return std::visit(
        [](const auto& x) -> std::string {
          using X = std::decay_t<decltype(x)>;
          if constexpr (std::is_same_v<X, bool>) {
            return x ? "true" : "false";
          } else if constexpr (std::is_same_v<X, std::string>) {
            return x.empty() ? "\"\"" : x;
          } else if constexpr (std::is_same_v<X, double>) {
            std::ostringstream o;
            o.precision(17);
            o << x;
            return o.str();
          } else {
            return std::to_string(x);
          }
        },
        v);
  }

  DateRange parse_range(const std::string& key) const {
    const std::string& s = get_string(key);
    const auto sep = s.find("..");
    if (sep == std::string::npos) throw ConfigError(key + ": expected 'begin..end', got '" + s + "'");
    try {
      return {parse_timestamp(detail::trim(s.substr(0, sep))),
              parse_timestamp(detail::trim(s.substr(sep + 2)))};
    } catch (const ParseError& e) {
      throw ConfigError(key + ": " + e.what());
    }
  }

  void merge_file(const std::filesystem::path& path, std::set<std::string>& stack) {
    const std::string canon = std::filesystem::weakly_canonical(path).string();
    if (stack.count(canon)) throw ConfigError("config include cycle at '" + path.string() + "'");
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
    stack.insert(canon);
    merge_stream(in, path.parent_path(), path.string(), stack);
    stack.erase(canon);
  }

  void merge_stream(std::istream& in, const std::filesystem::path& base_dir,
                    const std::string& origin, std::set<std::string>& stack) {
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      try {
        if (line.rfind("@include", 0) == 0) {
          std::filesystem::path inc = detail::trim(line.substr(8));
          if (inc.is_relative()) inc = base_dir / inc;
          merge_file(inc, stack);
          continue;
        }
        set_assignment(line);
      } catch (const ConfigError& e) {
        throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
  }

  std::map<std::string, Value> values_;
};

}  // namespace mtsci

#endif  // MTSCI_CONFIG_HPP_
