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

#ifndef MTSCI_DENOISER_HPP_
#define MTSCI_DENOISER_HPP_

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mtsci/autograd.hpp"
#include "mtsci/common.hpp"

namespace mtsci {

enum class FusionMode { kConcat, kAdd };
enum class PoolMode { kMean, kFlatten };

inline FusionMode parse_fusion(const std::string& s) {
  if (s == "concat") return FusionMode::kConcat;
  if (s == "add") return FusionMode::kAdd;
  throw ConfigError("cond.fusion must be concat or add, got '" + s + "'");
}
inline std::string to_string(FusionMode m) { return m == FusionMode::kConcat ? "concat" : "add"; }

inline PoolMode parse_pool(const std::string& s) {
  if (s == "mean") return PoolMode::kMean;
  if (s == "flatten") return PoolMode::kFlatten;
  throw ConfigError("contrastive.pool must be mean or flatten, got '" + s + "'");
}
inline std::string to_string(PoolMode m) { return m == PoolMode::kMean ? "mean" : "flatten"; }

struct DenoiserConfig {
  int window = 24;   // L
  int features = 1;  // C
  int d = 64;
  int layers = 2;
  int heads = 4;
  int ff = 64;  // transformer feed-forward width
  double dropout = 0.0;
  FusionMode fusion = FusionMode::kConcat;
  PoolMode pool = PoolMode::kMean;

  void validate() const {
    if (d <= 0 || d % 2 != 0) throw ConfigError("model.d must be a positive even number");
    if (layers < 1) throw ConfigError("model.layers must be >= 1");
    if (heads < 1 || d % heads != 0) throw ConfigError("model.heads must divide model.d");
    if (ff < 1) throw ConfigError("model.ff must be >= 1");
    if (window < 2) throw ConfigError("window length must be >= 2");
    if (features < 1) throw ConfigError("feature count must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model.dropout must lie in [0, 1)");
  }

  bool operator==(const DenoiserConfig&) const = default;
};

/// Sinusoidal diffusion-step bank of width d: sin over frequencies
/// 10^(4j/(w-1)) for j in [0, w), then the matching cosines, w = d/2.
inline Vector step_sinusoids(int k, int d) {
  if (d <= 0 || d % 2 != 0) throw ConfigError("step embedding width must be positive and even");
  const int w = d / 2;
  Vector out(d);
  for (int j = 0; j < w; ++j) {
    const double freq = w == 1 ? 1.0 : std::pow(10.0, 4.0 * j / (w - 1));
    out(j) = std::sin(freq * k);
    out(w + j) = std::cos(freq * k);
  }
  return out;
}

/// Fixed sinusoidal temporal position encoding, L x d.
inline Matrix temporal_encoding(int length, int d) {
  Matrix pe(length, d);
  for (int t = 0; t < length; ++t)
    for (int i = 0; i < d; i += 2) {
      const double div = std::pow(10000.0, static_cast<double>(i) / d);
      pe(t, i) = std::sin(t / div);
      if (i + 1 < d) pe(t, i + 1) = std::cos(t / div);
    }
  return pe;
}

/// Conditioning inputs for a batch of B windows. Cells are stored in
/// (sample, time, feature) row order.
template <typename Scalar>
struct ConditionBatch {
  ag::Tensor<Scalar> sampled;  // (B*L*C) x 1, conditioning observations, zero elsewhere
  ag::Tensor<Scalar> context;  // (B*L) x C, context-window observations, zero elsewhere
  ag::Tensor<Scalar> mix;      // (B*L*C) x 1, mixing coefficients in [0, 1]
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> provided;  // 1 where a cell carries conditioning
};

/// Network inputs for a batch of B windows sharing (L, C).
template <typename Scalar>
struct DenoiserBatch {
  int batch = 0;
  int window = 0;
  int features = 0;
  ag::Tensor<Scalar> x;  // (B*L*C) x 1, noised targets, zero off-target
  std::vector<int> steps;
  ConditionBatch<Scalar> cond;

  DenoiserBatch(int L, int C) : window(L), features(C) {}

  Eigen::Index cells() const { return Eigen::Index(window) * features; }

  /// Appends one sample. `cond_values` is read only where `cond_mask` holds,
  /// `context_values` only where `context_mask` holds. A null context means
  /// no context window; the mix matrix is then forced to ones.
  void add(const Matrix& x_k, int step, const Matrix& cond_values, const Mask& cond_mask,
           const Matrix* context_values, const Mask* context_mask, const Matrix* mix_matrix) {
    const Eigen::Index L = window, C = features, n = batch;
    if (x_k.rows() != L || x_k.cols() != C || cond_values.rows() != L ||
        cond_values.cols() != C || cond_mask.rows() != L || cond_mask.cols() != C)
      throw ValidationError("denoiser batch: sample shape differs from (L, C)");
    const bool has_ctx = context_values != nullptr;
    if (has_ctx && (context_values->rows() != L || context_values->cols() != C ||
                    context_mask->rows() != L || context_mask->cols() != C))
      throw ValidationError("denoiser batch: context window shape differs from sampled window");
    if (mix_matrix && (mix_matrix->rows() != L || mix_matrix->cols() != C))
      throw ValidationError("denoiser batch: mix matrix shape mismatch");
    ++batch;
    x.conservativeResize(batch * cells(), 1);
    cond.sampled.conservativeResize(batch * cells(), 1);
    cond.mix.conservativeResize(batch * cells(), 1);
    cond.provided.conservativeResize(batch * cells());
    cond.context.conservativeResize(batch * L, C);
    steps.push_back(step);
    for (Eigen::Index l = 0; l < L; ++l) {
      for (Eigen::Index c = 0; c < C; ++c) {
        const Eigen::Index r = (n * L + l) * C + c;
        x(r, 0) = static_cast<Scalar>(x_k(l, c));
        const bool co = cond_mask(l, c);
        cond.sampled(r, 0) = co ? static_cast<Scalar>(cond_values(l, c)) : Scalar(0);
        const double m = has_ctx && mix_matrix ? (*mix_matrix)(l, c) : 1.0;
        cond.mix(r, 0) = static_cast<Scalar>(m);
        const bool ctx_obs = has_ctx && (*context_mask)(l, c);
        cond.provided(r) = (co || (ctx_obs && m < 1.0)) ? Scalar(1) : Scalar(0);
        cond.context(n * L + l, c) =
            ctx_obs ? static_cast<Scalar>((*context_values)(l, c)) : Scalar(0);
      }
    }
  }
};

/// Flattens an L x C matrix into the (time, feature) cell column used by
/// DenoiserBatch, and back.
template <typename Scalar>
Matrix cells_to_matrix(const ag::Tensor<Scalar>& cells, Eigen::Index offset, int L, int C) {
  Matrix m(L, C);
  for (int l = 0; l < L; ++l)
    for (int c = 0; c < C; ++c) m(l, c) = static_cast<double>(cells(offset + l * C + c, 0));
  return m;
}

/// The noise-prediction network.
template <typename Scalar>
class Denoiser {
 public:
  using T = ag::Tensor<Scalar>;
  using V = ag::Var<Scalar>;
  using G = ag::Graph<Scalar>;

  struct Linear {
    V w, b;
  };
  struct Norm {
    V gamma, beta;
  };
  struct Block {
    Linear q, k, v, o, ff1, ff2;
    Norm ln1, ln2;
  };
  // Linear([h, c]) is evaluated as h W_h + c W_c + b so that c W_c can be
  // reused across diffusion steps.
  struct EncoderLayer {
    Linear fuse;
    V fuse_cond;  // d x d, W_c
    Block temporal, variable;
  };

  struct Output {
    V eps;        // (B*L*C) x 1
    V embedding;  // B x d (mean pool) or B x (L*C*d) (flatten)
  };

  /// Condition representation c and its per-layer projections; constant
  /// across diffusion steps so the sampler computes it once.
  struct EncodedCondition {
    V c;
    std::vector<V> per_layer;
  };

  Denoiser(const DenoiserConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    Rng rng(seed);
    const int d = config_.d, C = config_.features;
    step_ff1_ = linear("step.ff1", d, d, rng);
    step_ff2_ = linear("step.ff2", d, d, rng);
    input_ = linear("input", 1, d, rng);
    cond_transform_.w = add_param("cond.transform.w", T::Identity(C, C));
    cond_transform_.b = add_param("cond.transform.b", T::Zero(1, C));
    cond_lift_ = linear("cond.lift", 1, d, rng);
    feature_embedding_ = add_param("feature_embedding", uniform_init(C, d, 1.0, rng));
    for (int i = 0; i < config_.layers; ++i) {
      const std::string p = "layer" + std::to_string(i) + ".";
      EncoderLayer layer;
      layer.fuse = linear(p + "fuse", d, d, rng);
      if (config_.fusion == FusionMode::kConcat)
        layer.fuse_cond = add_param(p + "fuse.cond", uniform_init(d, d, 1.0 / std::sqrt(2.0 * d), rng));
      layer.temporal = block(p + "temporal.", rng);
      layer.variable = block(p + "variable.", rng);
      layers_.push_back(std::move(layer));
    }
    const int cat = d * config_.layers;
    decoder_norm_.gamma = add_param("decoder.ln.gamma", T::Ones(1, cat));
    decoder_norm_.beta = add_param("decoder.ln.beta", T::Zero(1, cat));
    decoder_ff1_ = linear("decoder.ff1", cat, d, rng);
    decoder_ff2_ = linear("decoder.ff2", d, 1, rng);
    const Matrix te = temporal_encoding(config_.window, d);
    temporal_encoding_ = ag::constant<Scalar>(te.cast<Scalar>());
  }

  const DenoiserConfig& config() const { return config_; }

  /// All learned tensors in a stable order.
  const std::vector<std::pair<std::string, V>>& parameters() const { return params_; }

  V parameter(const std::string& name) const {
    for (const auto& [n, v] : params_)
      if (n == name) return v;
    throw ValidationError("unknown parameter '" + name + "'");
  }

  std::size_t num_scalars() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.second->value.size());
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.second->zero_grad();
  }

  /// Replaces parameter values; names and shapes must match exactly.
  void load_parameters(const std::map<std::string, Matrix>& values) {
    for (auto& [name, var] : params_) {
      const auto it = values.find(name);
      if (it == values.end()) throw CheckpointMismatch("checkpoint lacks parameter '" + name + "'");
      if (it->second.rows() != var->value.rows() || it->second.cols() != var->value.cols())
        throw CheckpointMismatch("parameter '" + name + "' has shape " +
                                 std::to_string(it->second.rows()) + "x" +
                                 std::to_string(it->second.cols()) + ", expected " +
                                 std::to_string(var->value.rows()) + "x" +
                                 std::to_string(var->value.cols()));
      var->value = it->second.template cast<Scalar>();
    }
    if (values.size() != params_.size())
      throw CheckpointMismatch("checkpoint has parameters the model does not define");
  }

  std::map<std::string, Matrix> parameter_values() const {
    std::map<std::string, Matrix> out;
    for (const auto& [name, var] : params_) out[name] = var->value.template cast<double>();
    return out;
  }

  /// p^k for each step: two fully-connected layers with a SiLU between.
  V step_embedding(G& g, const std::vector<int>& steps) const {
    T bank(static_cast<Eigen::Index>(steps.size()), config_.d);
    for (std::size_t i = 0; i < steps.size(); ++i)
      bank.row(static_cast<Eigen::Index>(i)) =
          step_sinusoids(steps[i], config_.d).transpose().cast<Scalar>();
    auto h = g.silu(g.linear(g.input(std::move(bank)), step_ff1_.w, step_ff1_.b));
    return g.linear(h, step_ff2_.w, step_ff2_.b);
  }

  /// x_mix = mix * sampled + (1 - mix) * F(context), with F a per-time-step
  /// feature map (a 1x1 convolution over the C channels).
  V mixed_condition(G& g, const ConditionBatch<Scalar>& cond) const {
    const auto rows = cond.sampled.rows();
    auto ctx = g.linear(g.input(cond.context), cond_transform_.w, cond_transform_.b);
    auto ctx_cells = g.reshape(ctx, rows, 1);
    auto mix = g.input(cond.mix);
    auto keep = g.input(T::Ones(rows, 1) - cond.mix);
    return g.add(g.hadamard(mix, g.input(cond.sampled)), g.hadamard(keep, ctx_cells));
  }

  EncodedCondition encode_condition(G& g, const ConditionBatch<Scalar>& cond) const {
    EncodedCondition enc;
    auto x_mix = mixed_condition(g, cond);
    enc.c = g.scale_rows(g.linear(x_mix, cond_lift_.w, cond_lift_.b), cond.provided);
    for (const auto& layer : layers_)
      enc.per_layer.push_back(config_.fusion == FusionMode::kConcat ? g.linear(enc.c, layer.fuse_cond)
                                                                    : enc.c);
    return enc;
  }

  Output forward(G& g, const DenoiserBatch<Scalar>& batch, Rng* dropout_rng = nullptr) const {
    auto enc = encode_condition(g, batch.cond);
    return forward(g, batch.x, batch.steps, enc, dropout_rng);
  }

  /// `x` holds B samples of L*C cells; `steps` one step per sample.
  Output forward(G& g, const T& x, const std::vector<int>& steps, const EncodedCondition& enc,
                 Rng* dropout_rng = nullptr) const {
    const int L = config_.window, C = config_.features;
    const auto B = static_cast<Eigen::Index>(steps.size());
    const Eigen::Index rows = B * L * C;
    if (x.rows() != rows || x.cols() != 1)
      throw ValidationError("denoiser input has " + std::to_string(x.rows()) + " cells, expected " +
                            std::to_string(rows));
    if (enc.c->value.rows() != rows) throw ValidationError("condition/batch size mismatch");

    std::vector<int> sample_of(static_cast<std::size_t>(rows)), time_of(sample_of.size()),
        feature_of(sample_of.size());
    for (Eigen::Index r = 0; r < rows; ++r) {
      sample_of[static_cast<std::size_t>(r)] = static_cast<int>(r / (L * C));
      time_of[static_cast<std::size_t>(r)] = static_cast<int>((r / C) % L);
      feature_of[static_cast<std::size_t>(r)] = static_cast<int>(r % C);
    }
    ag::Grouping over_time{L, {}}, over_features{C, {}};
    over_time.order.reserve(static_cast<std::size_t>(rows));
    for (Eigen::Index n = 0; n < B; ++n)
      for (int c = 0; c < C; ++c)
        for (int l = 0; l < L; ++l)
          over_time.order.push_back(static_cast<int>((n * L + l) * C + c));
    over_features.order.resize(static_cast<std::size_t>(rows));
    for (Eigen::Index r = 0; r < rows; ++r) over_features.order[static_cast<std::size_t>(r)] = static_cast<int>(r);

    const double drop = dropout_rng ? config_.dropout : 0.0;
    auto p = step_embedding(g, steps);
    auto h = g.add(g.linear(g.input(x), input_.w, input_.b), g.gather_rows(p, sample_of));
    auto te = g.gather_rows(temporal_encoding_, time_of);
    auto fe = g.gather_rows(feature_embedding_, feature_of);

    std::vector<V> outputs;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const auto& layer = layers_[i];
      auto u = g.add(g.linear(h, layer.fuse.w, layer.fuse.b), enc.per_layer[i]);
      auto temporal = transformer(g, g.add(u, te), layer.temporal, over_time, drop, dropout_rng);
      h = transformer(g, g.add(temporal, fe), layer.variable, over_features, drop, dropout_rng);
      outputs.push_back(h);
    }
    auto merged = g.layer_norm(outputs.size() == 1 ? outputs.front() : g.concat_cols(outputs),
                               decoder_norm_.gamma, decoder_norm_.beta);
    auto hidden = g.relu(g.linear(merged, decoder_ff1_.w, decoder_ff1_.b));
    Output out;
    out.eps = g.linear(hidden, decoder_ff2_.w, decoder_ff2_.b);
    out.embedding = config_.pool == PoolMode::kMean ? g.segment_mean(h, Eigen::Index(L) * C)
                                                    : g.flatten_segments(h, Eigen::Index(L) * C);
    return out;
  }

 private:
  V add_param(const std::string& name, T value) {
    auto v = ag::parameter<Scalar>(std::move(value));
    params_.emplace_back(name, v);
    return v;
  }

  static T uniform_init(int rows, int cols, double bound, Rng& rng) {
    T m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i)
      m.data()[i] = static_cast<Scalar>(uniform(rng, -bound, bound));
    return m;
  }

  Linear linear(const std::string& name, int in, int out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    return {add_param(name + ".w", uniform_init(in, out, bound, rng)),
            add_param(name + ".b", uniform_init(1, out, bound, rng))};
  }

  Block block(const std::string& prefix, Rng& rng) {
    const int d = config_.d;
    Block b;
    b.q = linear(prefix + "q", d, d, rng);
    b.k = linear(prefix + "k", d, d, rng);
    b.v = linear(prefix + "v", d, d, rng);
    b.o = linear(prefix + "o", d, d, rng);
    b.ff1 = linear(prefix + "ff1", d, config_.ff, rng);
    b.ff2 = linear(prefix + "ff2", config_.ff, d, rng);
    b.ln1 = {add_param(prefix + "ln1.gamma", T::Ones(1, d)), add_param(prefix + "ln1.beta", T::Zero(1, d))};
    b.ln2 = {add_param(prefix + "ln2.gamma", T::Ones(1, d)), add_param(prefix + "ln2.beta", T::Zero(1, d))};
    return b;
  }

  /// Post-norm transformer encoder block with attention inside `grouping`.
  V transformer(G& g, const V& x, const Block& b, const ag::Grouping& grouping, double drop,
                Rng* rng) const {
    auto q = g.linear(x, b.q.w, b.q.b);
    auto k = g.linear(x, b.k.w, b.k.b);
    auto v = g.linear(x, b.v.w, b.v.b);
    auto attn = g.linear(g.grouped_attention(q, k, v, grouping, config_.heads), b.o.w, b.o.b);
    if (drop > 0.0) attn = g.dropout(attn, drop, *rng);
    auto x1 = g.layer_norm(g.add(x, attn), b.ln1.gamma, b.ln1.beta);
    auto f = g.linear(g.relu(g.linear(x1, b.ff1.w, b.ff1.b)), b.ff2.w, b.ff2.b);
    if (drop > 0.0) f = g.dropout(f, drop, *rng);
    return g.layer_norm(g.add(x1, f), b.ln2.gamma, b.ln2.beta);
  }

  DenoiserConfig config_;
  std::vector<std::pair<std::string, V>> params_;
  Linear step_ff1_, step_ff2_, input_, cond_transform_, cond_lift_;
  V feature_embedding_;
  std::vector<EncoderLayer> layers_;
  Norm decoder_norm_;
  Linear decoder_ff1_, decoder_ff2_;
  V temporal_encoding_;
};

}  // namespace mtsci

#endif  // MTSCI_DENOISER_HPP_
