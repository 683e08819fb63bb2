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

#ifndef MTSCI_TRAINING_HPP_
#define MTSCI_TRAINING_HPP_

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "mtsci/autograd.hpp"
#include "mtsci/common.hpp"
#include "mtsci/dataset.hpp"
#include "mtsci/denoiser.hpp"
#include "mtsci/diffusion.hpp"
#include "mtsci/masking.hpp"

namespace mtsci {

enum class Objective { kPredictNoise, kPredictX0 };
enum class Reduction { kMean, kSum };

inline Objective parse_objective(const std::string& s) {
  if (s == "predict_noise") return Objective::kPredictNoise;
  if (s == "predict_x0") return Objective::kPredictX0;
  throw ConfigError("train.objective must be predict_noise or predict_x0, got '" + s + "'");
}
inline std::string to_string(Objective o) {
  return o == Objective::kPredictNoise ? "predict_noise" : "predict_x0";
}

inline Reduction parse_reduction(const std::string& s) {
  if (s == "mean") return Reduction::kMean;
  if (s == "sum") return Reduction::kSum;
  throw ConfigError("loss.reduction must be mean or sum, got '" + s + "'");
}
inline std::string to_string(Reduction r) { return r == Reduction::kMean ? "mean" : "sum"; }

struct TrainConfig {
  double lambda = 0.1;
  double tau = 0.1;
  double learning_rate = 1e-3;
  int batch_size = 16;
  int epochs = 100;
  int patience = 10;
  std::uint64_t seed = 1;
  /// Complementary views plus contrastive loss. Off = w/o intra.
  bool intra = true;
  /// Mixup with the context window. Off = w/o inter.
  bool inter = true;
  /// Denoising loss on both complementary views (otherwise view 1 only).
  bool both_views = true;
  Objective objective = Objective::kPredictNoise;
  Reduction reduction = Reduction::kMean;
  MaskStrategy strategy = MaskStrategy::point();

  void validate() const {
    if (!(lambda >= 0.0)) throw ConfigError("train.lambda must be >= 0");
    if (!(tau > 0.0)) throw ConfigError("train.tau must be > 0");
    if (!(learning_rate > 0.0)) throw ConfigError("train.lr must be > 0");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
    if (patience < 1) throw ConfigError("train.patience must be >= 1");
    strategy.validate();
  }
};

// ---------------------------------------------------------------------------
// Losses on plain matrices
// ---------------------------------------------------------------------------

/// Squared noise-prediction error over target cells; mean over targets by
/// default, literal sum with Reduction::kSum.
inline double denoising_loss(const Matrix& true_eps, const Matrix& predicted_eps,
                             const Mask& target_mask, Reduction reduction = Reduction::kMean) {
  if (true_eps.rows() != predicted_eps.rows() || true_eps.cols() != predicted_eps.cols() ||
      target_mask.rows() != true_eps.rows() || target_mask.cols() != true_eps.cols())
    throw ValidationError("denoising_loss: shape mismatch");
  const auto count = target_mask.count();
  if (count == 0) {
    warn("denoising_loss: empty target set, loss is 0");
    return 0.0;
  }
  const double sum = ((true_eps - predicted_eps).array() * target_mask.cast<double>()).square().sum();
  return reduction == Reduction::kMean ? sum / static_cast<double>(count) : sum;
}

/// Contrastive loss over N complementary pairs (rows of z1 and z2).
inline double intra_contrastive_loss(const Matrix& z1, const Matrix& z2, double tau) {
  if (z1.rows() != z2.rows() || z1.cols() != z2.cols() || z1.rows() < 1)
    throw ValidationError("intra_contrastive_loss: need N >= 1 pairs of equal-width embeddings");
  if (!(tau > 0.0)) throw ConfigError("contrastive temperature must be > 0");
  ag::Tensor<double> z(2 * z1.rows(), z1.cols());
  z.topRows(z1.rows()) = z1;
  z.bottomRows(z2.rows()) = z2;
  ag::Graph<double> g(false);
  return g.nt_xent(g.input(std::move(z)), tau)->value(0, 0);
}

inline double total_loss(double denoise, double contrastive, double lambda, bool intra_on = true) {
  return intra_on ? denoise + lambda * contrastive : denoise;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Adaptive-moment gradient method over a fixed parameter list.
template <typename Scalar>
class Adam {
 public:
  using T = ag::Tensor<Scalar>;

  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<std::pair<std::string, ag::Var<Scalar>>>& params) {
    if (m_.empty()) {
      for (const auto& [name, p] : params) {
        m_[name] = T::Zero(p->value.rows(), p->value.cols());
        v_[name] = T::Zero(p->value.rows(), p->value.cols());
      }
    }
    ++t_;
    const Scalar c1 = static_cast<Scalar>(1.0 - std::pow(beta1_, t_));
    const Scalar c2 = static_cast<Scalar>(1.0 - std::pow(beta2_, t_));
    const auto b1 = static_cast<Scalar>(beta1_), b2 = static_cast<Scalar>(beta2_);
    for (const auto& [name, p] : params) {
      if (!p->has_grad()) continue;
      T& m = m_.at(name);
      T& v = v_.at(name);
      m = b1 * m + (Scalar(1) - b1) * p->grad;
      v = b2 * v + (Scalar(1) - b2) * p->grad.cwiseProduct(p->grad);
      p->value.array() -= static_cast<Scalar>(lr_) * (m.array() / c1) /
                          ((v.array() / c2).sqrt() + static_cast<Scalar>(eps_));
    }
  }

  long steps_taken() const { return t_; }

  std::map<std::string, Matrix> first_moments() const { return export_map(m_); }
  std::map<std::string, Matrix> second_moments() const { return export_map(v_); }

  void restore(long t, const std::map<std::string, Matrix>& m, const std::map<std::string, Matrix>& v) {
    t_ = t;
    m_.clear();
    v_.clear();
    for (const auto& [k, x] : m) m_[k] = x.template cast<Scalar>();
    for (const auto& [k, x] : v) v_[k] = x.template cast<Scalar>();
  }

 private:
  static std::map<std::string, Matrix> export_map(const std::map<std::string, T>& src) {
    std::map<std::string, Matrix> out;
    for (const auto& [k, x] : src) out[k] = x.template cast<double>();
    return out;
  }

  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::map<std::string, T> m_, v_;
};

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct StepStats {
  double total = 0.0;
  double denoise = 0.0;
  double contrastive = 0.0;
  long target_cells = 0;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double denoise_loss = 0.0;
  double contrastive_loss = 0.0;
  double val_loss = 0.0;
};

/// Everything needed to continue an interrupted run exactly.
struct ResumeState {
  int epoch = 0;  // epochs completed
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  int stale_epochs = 0;
  long adam_steps = 0;
  std::map<std::string, Matrix> adam_m, adam_v;
  std::map<std::string, Matrix> last_params, best_params;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  ResumeState state;
  bool stopped_early = false;
};

/// Runs the training algorithm on a Denoiser.
template <typename Scalar>
class Trainer {
 public:
  using T = ag::Tensor<Scalar>;

  Trainer(Denoiser<Scalar>& model, DiffusionSchedule schedule, TrainConfig config)
      : model_(model), schedule_(std::move(schedule)), config_(std::move(config)),
        adam_(config_.learning_rate) {
    config_.validate();
  }

  const TrainConfig& config() const { return config_; }

  /// Builds the network inputs for a batch of pairs: the complementary views
  /// (or a single view when intra is off), noised targets, and the mixed
  /// condition.
  struct Prepared {
    DenoiserBatch<Scalar> batch;
    T targets;      // eps or x0 per cell
    T loss_mask;    // 1 at cells that enter the denoising loss
    int pairs = 0;  // N; batch holds 2N samples when views are paired
  };

  Prepared prepare(const std::vector<const WindowPair*>& pairs, Rng& rng) const {
    const int L = model_.config().window, C = model_.config().features;
    Prepared out{DenoiserBatch<Scalar>(L, C), {}, {}, static_cast<int>(pairs.size())};
    struct Sample {
      Matrix x_k, target_value, cond_values, mix;
      Mask target, cond;
      const Window* context;
      Mask context_mask;
      int k;
      bool in_loss;
    };
    std::vector<Sample> first, second;
    for (const WindowPair* pair : pairs) {
      const Window& w = pair->sampled;
      if (w.length() != L || w.num_features() != C)
        throw ValidationError("training window shape differs from model (L, C)");
      const Mask observed = w.cond_mask();
      const Mask m = sample_training_mask(observed, config_.strategy, rng);
      const ComplementaryViews views = complementary_views(observed, m);
      const int k = uniform_int(rng, 1, schedule_.steps());
      const Matrix eps = gaussian_matrix(rng, L, C);
      const bool with_context = config_.inter && pair->has_context;
      Matrix mix = Matrix::Ones(L, C);
      if (with_context)
        for (Eigen::Index i = 0; i < mix.size(); ++i) mix.data()[i] = uniform01(rng);
      const Mask ctx_mask = with_context ? pair->context.cond_mask() : Mask();

      auto make_sample = [&](const View& view, bool in_loss) {
        Sample s;
        const Matrix tmask = to_real(view.target);
        const Matrix x0 = w.values.cwiseProduct(tmask);
        s.x_k = noise_targets(x0, k, eps, schedule_).x_k.cwiseProduct(tmask);
        s.target_value = config_.objective == Objective::kPredictNoise ? eps : x0;
        s.target = view.target;
        s.cond = view.cond;
        s.cond_values = w.values;
        s.mix = mix;
        s.context = with_context ? &pair->context : nullptr;
        s.context_mask = ctx_mask;
        s.k = k;
        s.in_loss = in_loss;
        return s;
      };
      first.push_back(make_sample(views.view1, true));
      if (config_.intra) second.push_back(make_sample(views.view2, config_.both_views));
    }
    std::vector<Sample> all = std::move(first);
    all.insert(all.end(), std::make_move_iterator(second.begin()),
               std::make_move_iterator(second.end()));
    const Eigen::Index cells = Eigen::Index(L) * C;
    out.targets.resize(static_cast<Eigen::Index>(all.size()) * cells, 1);
    out.loss_mask.resize(out.targets.rows(), 1);
    for (std::size_t n = 0; n < all.size(); ++n) {
      const Sample& s = all[n];
      out.batch.add(s.x_k, s.k, s.cond_values, s.cond,
                    s.context ? &s.context->values : nullptr,
                    s.context ? &s.context_mask : nullptr, &s.mix);
      for (int l = 0; l < L; ++l)
        for (int c = 0; c < C; ++c) {
          const Eigen::Index r = static_cast<Eigen::Index>(n) * cells + l * C + c;
          out.targets(r, 0) = static_cast<Scalar>(s.target_value(l, c));
          out.loss_mask(r, 0) = (s.in_loss && s.target(l, c)) ? Scalar(1) : Scalar(0);
        }
    }
    return out;
  }

  /// Forward, loss, backward and one optimizer update. Throws
  /// DivergenceError on a non-finite loss.
  StepStats train_step(const std::vector<const WindowPair*>& pairs, Rng& rng, long batch_index = 0) {
    Prepared prep = prepare(pairs, rng);
    ag::Graph<Scalar> g(true);
    model_.zero_grad();
    auto out = model_.forward(g, prep.batch, model_.config().dropout > 0.0 ? &rng : nullptr);
    StepStats stats;
    stats.target_cells = static_cast<long>(prep.loss_mask.sum());
    const Scalar divisor = config_.reduction == Reduction::kMean
                               ? static_cast<Scalar>(std::max<long>(stats.target_cells, 1))
                               : Scalar(1);
    auto denoise = g.masked_squared_error(out.eps, prep.targets, prep.loss_mask, divisor);
    auto total = denoise;
    stats.denoise = static_cast<double>(denoise->value(0, 0));
    if (config_.intra) {
      auto cl = g.nt_xent(out.embedding, static_cast<Scalar>(config_.tau));
      stats.contrastive = static_cast<double>(cl->value(0, 0));
      total = g.add(denoise, g.scale(cl, static_cast<Scalar>(config_.lambda)));
    }
    stats.total = static_cast<double>(total->value(0, 0));
    if (!std::isfinite(stats.total)) {
      std::ostringstream msg;
      msg << "non-finite loss at batch " << batch_index << " (diffusion steps k =";
      for (std::size_t i = 0; i < prep.batch.steps.size() && i < 16; ++i)
        msg << ' ' << prep.batch.steps[i];
      msg << ")";
      throw DivergenceError(msg.str());
    }
    g.backward(total);
    adam_.step(model_.parameters());
    return stats;
  }

  /// Deterministic denoising loss on held-out windows with the mix matrix at
  /// ones. Targets are the frozen eval cells, or a fixed-seed point mask for
  /// windows without any.
  double validation_loss(const std::vector<Window>& windows) const {
    if (windows.empty()) return std::numeric_limits<double>::quiet_NaN();
    const int L = model_.config().window, C = model_.config().features;
    const auto chunk = static_cast<std::size_t>(std::max(1, 2 * config_.batch_size));
    double sum = 0.0;
    long count = 0;
    for (std::size_t begin = 0; begin < windows.size(); begin += chunk) {
      DenoiserBatch<Scalar> batch(L, C);
      T targets, mask;
      const std::size_t end = std::min(windows.size(), begin + chunk);
      targets.resize(static_cast<Eigen::Index>(end - begin) * L * C, 1);
      mask.resize(targets.rows(), 1);
      for (std::size_t i = begin; i < end; ++i) {
        const Window& w = windows[i];
        Rng rng(derive_seed(config_.seed ^ 0x76616cULL, static_cast<std::uint64_t>(w.start_index)));
        Mask target = w.eval_mask;
        Mask cond = w.cond_mask();
        if (!target.any()) {
          target = sample_training_mask(w.obs_mask, MaskStrategy{MaskStrategy::Kind::kPoint, 0.2, 0.2}, rng);
          cond = w.obs_mask && !target;
        }
        const int k = uniform_int(rng, 1, schedule_.steps());
        const Matrix eps = gaussian_matrix(rng, L, C);
        const Matrix tmask = to_real(target);
        const Matrix x0 = w.values.cwiseProduct(tmask);
        const Matrix x_k = noise_targets(x0, k, eps, schedule_).x_k.cwiseProduct(tmask);
        batch.add(x_k, k, w.values, cond, nullptr, nullptr, nullptr);
        const Matrix& tv = config_.objective == Objective::kPredictNoise ? eps : x0;
        const Eigen::Index off = static_cast<Eigen::Index>(i - begin) * L * C;
        for (int l = 0; l < L; ++l)
          for (int c = 0; c < C; ++c) {
            targets(off + l * C + c, 0) = static_cast<Scalar>(tv(l, c));
            mask(off + l * C + c, 0) = target(l, c) ? Scalar(1) : Scalar(0);
          }
      }
      ag::Graph<Scalar> g(false);
      auto out = model_.forward(g, batch);
      sum += static_cast<double>(g.masked_squared_error(out.eps, targets, mask, Scalar(1))->value(0, 0));
      count += static_cast<long>(mask.sum());
    }
    return count == 0 ? 0.0 : sum / static_cast<double>(count);
  }

  using EpochCallback = std::function<void(const EpochRecord&)>;

  /// Runs epochs until the configured count or early stop. Starts from
  /// `resume` when given (the model must already hold resume->last_params).
  TrainResult fit(const std::vector<WindowPair>& train, const std::vector<Window>& val,
                  const ResumeState* resume = nullptr, const EpochCallback& on_epoch = {}) {
    TrainResult result;
    ResumeState& st = result.state;
    if (resume) {
      st = *resume;
      adam_.restore(st.adam_steps, st.adam_m, st.adam_v);
    } else {
      st.best_params = model_.parameter_values();
    }
    if (config_.epochs == 0) warn("train.epochs is 0; returning the initialized parameters");
    if (train.empty() && config_.epochs > 0) throw ValidationError("no training windows");
    std::vector<std::size_t> order(train.size());
    const int first_epoch = st.epoch + 1;
    for (int epoch = first_epoch; epoch < first_epoch + config_.epochs; ++epoch) {
      Rng rng(derive_seed(config_.seed, static_cast<std::uint64_t>(epoch)));
      std::iota(order.begin(), order.end(), std::size_t{0});
      for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[static_cast<std::size_t>(rng() % i)]);
      EpochRecord rec;
      rec.epoch = epoch;
      double weight = 0.0;
      long batch_index = 0;
      for (std::size_t begin = 0; begin < order.size();
           begin += static_cast<std::size_t>(config_.batch_size), ++batch_index) {
        std::vector<const WindowPair*> batch;
        for (std::size_t i = begin;
             i < std::min(order.size(), begin + static_cast<std::size_t>(config_.batch_size)); ++i)
          batch.push_back(&train[order[i]]);
        const StepStats s = train_step(batch, rng, batch_index);
        const double n = static_cast<double>(batch.size());
        rec.train_loss += s.total * n;
        rec.denoise_loss += s.denoise * n;
        rec.contrastive_loss += s.contrastive * n;
        weight += n;
      }
      rec.train_loss /= weight;
      rec.denoise_loss /= weight;
      rec.contrastive_loss /= weight;
      rec.val_loss = val.empty() ? rec.denoise_loss : validation_loss(val);
      result.history.push_back(rec);
      st.epoch = epoch;
      if (rec.val_loss < st.best_val) {
        st.best_val = rec.val_loss;
        st.best_epoch = epoch;
        st.best_params = model_.parameter_values();
        st.stale_epochs = 0;
      } else {
        ++st.stale_epochs;
      }
      if (on_epoch) on_epoch(rec);
      if (st.stale_epochs >= config_.patience) {
        result.stopped_early = true;
        break;
      }
    }
    st.adam_steps = adam_.steps_taken();
    st.adam_m = adam_.first_moments();
    st.adam_v = adam_.second_moments();
    st.last_params = model_.parameter_values();
    return result;
  }

 private:
  Denoiser<Scalar>& model_;
  DiffusionSchedule schedule_;
  TrainConfig config_;
  Adam<Scalar> adam_;
};

}  // namespace mtsci

#endif  // MTSCI_TRAINING_HPP_
