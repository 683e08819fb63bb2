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

#ifndef MTSCI_AUTOGRAD_HPP_
#define MTSCI_AUTOGRAD_HPP_

// Minimal tape-based reverse-mode differentiation over row-major Eigen
// matrices. Every activation is a 2-D tensor whose rows are tokens; batching
// is done by stacking tokens of several samples.

#include <Eigen/Dense>

#include <cmath>
#include <algorithm>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mtsci/common.hpp"

namespace mtsci::ag {

template <typename Scalar>
using Tensor =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
struct Node {
  Tensor<Scalar> value;
  Tensor<Scalar> grad;
  bool requires_grad = false;
  std::function<void()> backward;

  Tensor<Scalar>& grad_buffer() {
    if (grad.size() == 0) grad.setZero(value.rows(), value.cols());
    return grad;
  }
  bool has_grad() const { return grad.size() != 0; }
  void zero_grad() { grad.resize(0, 0); }
};

template <typename Scalar>
using Var = std::shared_ptr<Node<Scalar>>;

template <typename Scalar>
Var<Scalar> constant(Tensor<Scalar> value) {
  auto n = std::make_shared<Node<Scalar>>();
  n->value = std::move(value);
  return n;
}

template <typename Scalar>
Var<Scalar> parameter(Tensor<Scalar> value) {
  auto n = constant<Scalar>(std::move(value));
  n->requires_grad = true;
  return n;
}

/// Row permutation that lays tokens out group-by-group for attention.
/// `order[g * group_size + i]` is the source row of the i-th token of group g.
struct Grouping {
  int group_size = 0;
  std::vector<int> order;

  int num_groups() const {
    return group_size == 0 ? 0 : static_cast<int>(order.size()) / group_size;
  }
};

inline void check_shape(bool ok, const char* op) {
  if (!ok) throw ValidationError(std::string("shape mismatch in ") + op);
}

/// Records operations for a single forward pass. With recording disabled the
/// graph only evaluates values.
template <typename Scalar>
class Graph {
 public:
  using T = Tensor<Scalar>;
  using V = Var<Scalar>;

  explicit Graph(bool record = true) : record_(record) {}

  bool recording() const { return record_; }

  V input(T value) { return constant<Scalar>(std::move(value)); }

  /// y = x w + b (b is a 1 x out row, optional).
  V linear(const V& x, const V& w, const V& b = nullptr) {
    check_shape(x->value.cols() == w->value.rows(), "linear");
    T y = x->value * w->value;
    if (b) y.rowwise() += b->value.row(0);
    return make(std::move(y), {x, w, b}, [x, w, b](Node<Scalar>& out) {
      if (x->requires_grad) x->grad_buffer().noalias() += out.grad * w->value.transpose();
      if (w->requires_grad) w->grad_buffer().noalias() += x->value.transpose() * out.grad;
      if (b && b->requires_grad) b->grad_buffer() += out.grad.colwise().sum();
    });
  }

  V add(const V& a, const V& b) {
    check_shape(a->value.rows() == b->value.rows() && a->value.cols() == b->value.cols(), "add");
    return make(a->value + b->value, {a, b}, [a, b](Node<Scalar>& out) {
      if (a->requires_grad) a->grad_buffer() += out.grad;
      if (b->requires_grad) b->grad_buffer() += out.grad;
    });
  }

  V sub(const V& a, const V& b) {
    check_shape(a->value.rows() == b->value.rows() && a->value.cols() == b->value.cols(), "sub");
    return make(a->value - b->value, {a, b}, [a, b](Node<Scalar>& out) {
      if (a->requires_grad) a->grad_buffer() += out.grad;
      if (b->requires_grad) b->grad_buffer() -= out.grad;
    });
  }

  V scale(const V& a, Scalar s) {
    return make(a->value * s, {a}, [a, s](Node<Scalar>& out) {
      if (a->requires_grad) a->grad_buffer() += out.grad * s;
    });
  }

  V hadamard(const V& a, const V& b) {
    check_shape(a->value.rows() == b->value.rows() && a->value.cols() == b->value.cols(), "hadamard");
    T y = a->value.cwiseProduct(b->value);
    return make(std::move(y), {a, b}, [a, b](Node<Scalar>& out) {
      if (a->requires_grad) a->grad_buffer() += out.grad.cwiseProduct(b->value);
      if (b->requires_grad) b->grad_buffer() += out.grad.cwiseProduct(a->value);
    });
  }

  /// Scales row r of x by weights[r] (a constant column vector).
  V scale_rows(const V& x, const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& weights) {
    check_shape(weights.size() == x->value.rows(), "scale_rows");
    T y = weights.asDiagonal() * x->value;
    return make(std::move(y), {x}, [x, weights](Node<Scalar>& out) {
      if (x->requires_grad) x->grad_buffer() += weights.asDiagonal() * out.grad;
    });
  }

  /// y[r] = table[index[r]].
  V gather_rows(const V& table, std::vector<int> index) {
    T y(static_cast<Eigen::Index>(index.size()), table->value.cols());
    for (std::size_t r = 0; r < index.size(); ++r) y.row(r) = table->value.row(index[r]);
    return make(std::move(y), {table}, [table, index = std::move(index)](Node<Scalar>& out) {
      if (!table->requires_grad) return;
      auto& g = table->grad_buffer();
      for (std::size_t r = 0; r < index.size(); ++r) g.row(index[r]) += out.grad.row(r);
    });
  }

  V concat_cols(const std::vector<V>& parts) {
    Eigen::Index rows = parts.front()->value.rows(), cols = 0;
    for (const auto& p : parts) {
      check_shape(p->value.rows() == rows, "concat_cols");
      cols += p->value.cols();
    }
    T y(rows, cols);
    Eigen::Index c = 0;
    for (const auto& p : parts) {
      y.middleCols(c, p->value.cols()) = p->value;
      c += p->value.cols();
    }
    return make(std::move(y), parts, [parts](Node<Scalar>& out) {
      Eigen::Index c = 0;
      for (const auto& p : parts) {
        if (p->requires_grad) p->grad_buffer() += out.grad.middleCols(c, p->value.cols());
        c += p->value.cols();
      }
    });
  }

  /// Reinterprets the row-major storage with a new shape.
  V reshape(const V& x, Eigen::Index rows, Eigen::Index cols) {
    check_shape(rows * cols == x->value.size(), "reshape");
    T y = Eigen::Map<const T>(x->value.data(), rows, cols);
    return make(std::move(y), {x}, [x](Node<Scalar>& out) {
      if (x->requires_grad)
        x->grad_buffer() += Eigen::Map<const T>(out.grad.data(), x->value.rows(), x->value.cols());
    });
  }

  V relu(const V& x) {
    T y = x->value.cwiseMax(Scalar(0));
    return make(std::move(y), {x}, [x](Node<Scalar>& out) {
      if (x->requires_grad)
        x->grad_buffer().array() += (x->value.array() > Scalar(0)).select(out.grad.array(), Scalar(0));
    });
  }

  V silu(const V& x) {
    auto sig = (Scalar(1) / (Scalar(1) + (-x->value.array()).exp())).eval();
    T y = (x->value.array() * sig).matrix();
    return make(std::move(y), {x}, [x, sig](Node<Scalar>& out) {
      if (x->requires_grad)
        x->grad_buffer().array() +=
            out.grad.array() * sig * (Scalar(1) + x->value.array() * (Scalar(1) - sig));
    });
  }

  /// Inverted dropout with a caller-owned random stream.
  V dropout(const V& x, double rate, Rng& rng) {
    if (rate <= 0.0) return x;
    T keep(x->value.rows(), x->value.cols());
    const Scalar s = Scalar(1.0 / (1.0 - rate));
    for (Eigen::Index i = 0; i < keep.size(); ++i)
      keep.data()[i] = uniform01(rng) < rate ? Scalar(0) : s;
    T y = x->value.cwiseProduct(keep);
    return make(std::move(y), {x}, [x, keep](Node<Scalar>& out) {
      if (x->requires_grad) x->grad_buffer() += out.grad.cwiseProduct(keep);
    });
  }

  /// Per-row layer normalization with learned gain and shift (1 x cols each).
  V layer_norm(const V& x, const V& gamma, const V& beta, Scalar eps = Scalar(1e-5)) {
    const Eigen::Index n = x->value.rows(), d = x->value.cols();
    check_shape(gamma->value.cols() == d && beta->value.cols() == d, "layer_norm");
    T xhat(n, d);
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std(n);
    for (Eigen::Index r = 0; r < n; ++r) {
      const Scalar mean = x->value.row(r).mean();
      const Scalar var = (x->value.row(r).array() - mean).square().mean();
      inv_std(r) = Scalar(1) / std::sqrt(var + eps);
      xhat.row(r) = (x->value.row(r).array() - mean) * inv_std(r);
    }
    T y = xhat.array().rowwise() * gamma->value.row(0).array();
    y.rowwise() += beta->value.row(0);
    return make(std::move(y), {x, gamma, beta},
                [x, gamma, beta, xhat, inv_std](Node<Scalar>& out) {
      const Eigen::Index d = xhat.cols();
      if (gamma->requires_grad)
        gamma->grad_buffer() += out.grad.cwiseProduct(xhat).colwise().sum();
      if (beta->requires_grad) beta->grad_buffer() += out.grad.colwise().sum();
      if (!x->requires_grad) return;
      T gx = out.grad.array().rowwise() * gamma->value.row(0).array();
      auto& g = x->grad_buffer();
      for (Eigen::Index r = 0; r < xhat.rows(); ++r) {
        const Scalar mean_g = gx.row(r).sum() / Scalar(d);
        const Scalar mean_gx = gx.row(r).dot(xhat.row(r)) / Scalar(d);
        g.row(r).array() +=
            inv_std(r) * (gx.row(r).array() - mean_g - xhat.row(r).array() * mean_gx);
      }
    });
  }

  /// Multi-head scaled dot-product self-attention restricted to groups of
  /// tokens. q, k, v are already projected (tokens x d); output is tokens x d
  /// in the original row order, before the output projection.
  V grouped_attention(const V& q, const V& k, const V& v, const Grouping& grouping,
                      int heads) {
    const Eigen::Index n = q->value.rows(), d = q->value.cols();
    check_shape(k->value.rows() == n && v->value.rows() == n && k->value.cols() == d &&
                    v->value.cols() == d && static_cast<Eigen::Index>(grouping.order.size()) == n &&
                    d % heads == 0,
                "grouped_attention");
    const int gs = grouping.group_size;
    const int groups = grouping.num_groups();
    const Eigen::Index dh = d / heads;
    const Scalar scl = Scalar(1) / std::sqrt(Scalar(dh));
    auto permute = [&](const T& src) {
      T dst(n, d);
      for (Eigen::Index r = 0; r < n; ++r) dst.row(r) = src.row(grouping.order[r]);
      return dst;
    };
    T qp = permute(q->value), kp = permute(k->value), vp = permute(v->value);
    T op(n, d);
    // probs holds one gs x gs softmax block per (group, head).
    auto probs = std::make_shared<std::vector<T>>(static_cast<std::size_t>(groups) * heads);
    for (int g = 0; g < groups; ++g) {
      for (int h = 0; h < heads; ++h) {
        auto qb = qp.block(Eigen::Index(g) * gs, h * dh, gs, dh);
        auto kb = kp.block(Eigen::Index(g) * gs, h * dh, gs, dh);
        auto vb = vp.block(Eigen::Index(g) * gs, h * dh, gs, dh);
        T s = (qb * kb.transpose()) * scl;
        for (int i = 0; i < gs; ++i) {
          const Scalar mx = s.row(i).maxCoeff();
          s.row(i) = (s.row(i).array() - mx).exp();
          s.row(i) /= s.row(i).sum();
        }
        op.block(Eigen::Index(g) * gs, h * dh, gs, dh).noalias() = s * vb;
        (*probs)[static_cast<std::size_t>(g) * heads + h] = std::move(s);
      }
    }
    T y(n, d);
    for (Eigen::Index r = 0; r < n; ++r) y.row(grouping.order[r]) = op.row(r);
    if (!record_) return constant<Scalar>(std::move(y));
    return make(std::move(y), {q, k, v},
                [q, k, v, grouping, heads, probs, qp = std::move(qp), kp = std::move(kp),
                 vp = std::move(vp), scl](Node<Scalar>& out) {
      const Eigen::Index n = out.grad.rows(), d = out.grad.cols();
      const int gs = grouping.group_size;
      const Eigen::Index dh = d / heads;
      T gop(n, d);
      for (Eigen::Index r = 0; r < n; ++r) gop.row(r) = out.grad.row(grouping.order[r]);
      T gq = T::Zero(n, d), gk = T::Zero(n, d), gv = T::Zero(n, d);
      for (int g = 0; g < grouping.num_groups(); ++g) {
        for (int h = 0; h < heads; ++h) {
          const T& p = (*probs)[static_cast<std::size_t>(g) * heads + h];
          const Eigen::Index r0 = Eigen::Index(g) * gs, c0 = h * dh;
          auto go = gop.block(r0, c0, gs, dh);
          gv.block(r0, c0, gs, dh).noalias() = p.transpose() * go;
          T gp = go * vp.block(r0, c0, gs, dh).transpose();
          T gs_ = p.cwiseProduct(gp);
          Eigen::Matrix<Scalar, Eigen::Dynamic, 1> rows = gs_.rowwise().sum();
          gs_ -= p.cwiseProduct(rows.replicate(1, gs));
          gs_ *= scl;
          gq.block(r0, c0, gs, dh).noalias() = gs_ * kp.block(r0, c0, gs, dh);
          gk.block(r0, c0, gs, dh).noalias() = gs_.transpose() * qp.block(r0, c0, gs, dh);
        }
      }
      auto scatter = [&](const V& dst, const T& src) {
        if (!dst->requires_grad) return;
        auto& g = dst->grad_buffer();
        for (Eigen::Index r = 0; r < n; ++r) g.row(grouping.order[r]) += src.row(r);
      };
      scatter(q, gq);
      scatter(k, gk);
      scatter(v, gv);
    });
  }

  /// Mean over consecutive blocks of `segment` rows: (n x d) -> (n/segment x d).
  V segment_mean(const V& x, Eigen::Index segment) {
    const Eigen::Index n = x->value.rows(), d = x->value.cols();
    check_shape(segment > 0 && n % segment == 0, "segment_mean");
    const Eigen::Index m = n / segment;
    T y(m, d);
    for (Eigen::Index s = 0; s < m; ++s)
      y.row(s) = x->value.middleRows(s * segment, segment).colwise().mean();
    return make(std::move(y), {x}, [x, segment](Node<Scalar>& out) {
      if (!x->requires_grad) return;
      auto& g = x->grad_buffer();
      const Scalar w = Scalar(1) / Scalar(segment);
      for (Eigen::Index s = 0; s < out.grad.rows(); ++s)
        g.middleRows(s * segment, segment).rowwise() += out.grad.row(s) * w;
    });
  }

  /// Flattens x row-major into a single row.
  V flatten_segments(const V& x, Eigen::Index segment) {
    return reshape(x, x->value.rows() / segment, segment * x->value.cols());
  }

  /// sum(mask * (pred - target)^2) / divisor, a 1 x 1 result.
  V masked_squared_error(const V& pred, const T& target, const T& mask, Scalar divisor) {
    check_shape(pred->value.rows() == target.rows() && pred->value.cols() == target.cols() &&
                    mask.rows() == target.rows() && mask.cols() == target.cols(),
                "masked_squared_error");
    T diff = (pred->value - target).cwiseProduct(mask);
    T y(1, 1);
    y(0, 0) = diff.squaredNorm() / divisor;
    return make(std::move(y), {pred}, [pred, diff, divisor](Node<Scalar>& out) {
      if (pred->requires_grad)
        pred->grad_buffer() += diff * (Scalar(2) * out.grad(0, 0) / divisor);
    });
  }

  V sum_squares(const V& x) {
    T y(1, 1);
    y(0, 0) = x->value.squaredNorm();
    return make(std::move(y), {x}, [x](Node<Scalar>& out) {
      if (x->requires_grad) x->grad_buffer() += x->value * (Scalar(2) * out.grad(0, 0));
    });
  }

  /// Normalized-temperature cross entropy over 2N views. Rows [0, N) are the
  /// first views and rows [N, 2N) their complementary partners. Each anchor's
  /// positive is its partner and every other view is a negative. Averaged over
  /// all 2N anchors.
  V nt_xent(const V& z, Scalar tau, Scalar norm_floor = Scalar(1e-12)) {
    const Eigen::Index m = z->value.rows();
    check_shape(m >= 2 && m % 2 == 0, "nt_xent");
    const Eigen::Index half = m / 2;
    Eigen::Matrix<Scalar, Eigen::Dynamic, 1> norms(m);
    T u(m, z->value.cols());
    for (Eigen::Index i = 0; i < m; ++i) {
      norms(i) = std::max(z->value.row(i).norm(), norm_floor);
      u.row(i) = z->value.row(i) / norms(i);
    }
    T logits = (u * u.transpose()) / tau;
    T dlogits = T::Zero(m, m);
    Scalar loss = 0;
    for (Eigen::Index a = 0; a < m; ++a) {
      const Eigen::Index pos = a < half ? a + half : a - half;
      Scalar mx = -std::numeric_limits<Scalar>::infinity();
      for (Eigen::Index j = 0; j < m; ++j)
        if (j != a) mx = std::max(mx, logits(a, j));
      Scalar denom = 0;
      for (Eigen::Index j = 0; j < m; ++j)
        if (j != a) denom += std::exp(logits(a, j) - mx);
      loss += -(logits(a, pos) - mx) + std::log(denom);
      for (Eigen::Index j = 0; j < m; ++j)
        if (j != a) dlogits(a, j) = std::exp(logits(a, j) - mx) / denom;
      dlogits(a, pos) -= Scalar(1);
    }
    T y(1, 1);
    y(0, 0) = loss / Scalar(m);
    dlogits /= Scalar(m);
    return make(std::move(y), {z}, [z, u, norms, dlogits, tau, norm_floor](Node<Scalar>& out) {
      if (!z->requires_grad) return;
      T gu = ((dlogits + dlogits.transpose()) * u) * (out.grad(0, 0) / tau);
      auto& g = z->grad_buffer();
      for (Eigen::Index i = 0; i < u.rows(); ++i) {
        if (norms(i) <= norm_floor) {
          g.row(i) += gu.row(i) / norms(i);
        } else {
          g.row(i) += (gu.row(i) - u.row(i) * u.row(i).dot(gu.row(i))) / norms(i);
        }
      }
    });
  }

  /// Back-propagates from a 1 x 1 output through every recorded operation.
  void backward(const V& loss) {
    if (!record_) throw std::logic_error("backward on a non-recording graph");
    check_shape(loss->value.size() == 1, "backward");
    loss->grad_buffer().setConstant(Scalar(1));
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) {
      Node<Scalar>& node = **it;
      if (node.backward && node.has_grad()) node.backward();
    }
  }

 private:
  template <typename Fn>
  V make(T value, std::initializer_list<V> inputs, Fn&& fn) {
    return make(std::move(value), std::vector<V>(inputs), std::forward<Fn>(fn));
  }

  template <typename Fn>
  V make(T value, const std::vector<V>& inputs, Fn&& fn) {
    auto out = constant<Scalar>(std::move(value));
    if (!record_) return out;
    bool needs = false;
    for (const auto& in : inputs) needs = needs || (in && in->requires_grad);
    if (!needs) return out;
    out->requires_grad = true;
    Node<Scalar>* raw = out.get();
    out->backward = [raw, fn = std::forward<Fn>(fn)]() mutable { fn(*raw); };
    tape_.push_back(out);
    return out;
  }

  bool record_;
  std::vector<V> tape_;
};

}  // namespace mtsci::ag

#endif  // MTSCI_AUTOGRAD_HPP_
