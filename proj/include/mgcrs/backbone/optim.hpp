// Copyright 2026 The mgcrs Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <vector>

#include "mgcrs/backbone/transformer.hpp"

namespace mgcrs::nn {

struct OptimConfig {
  double lr = 1e-3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // <= 0 disables clipping
  long warmup_steps = 0;
};

/// Adam with decoupled weight decay. Decay applies to tensors flagged
/// `decay` (weight matrices and embeddings, not biases or norm gains).
template <class T>
class AdamW {
 public:
  AdamW() = default;
  explicit AdamW(const OptimConfig& cfg, std::size_t n) : cfg_(cfg), m_(n), v_(n) {}

  long steps() const { return t_; }
  const OptimConfig& config() const { return cfg_; }

  double lr_at(long step) const {
    if (cfg_.warmup_steps > 0 && step <= cfg_.warmup_steps)
      return cfg_.lr * static_cast<double>(step) / static_cast<double>(cfg_.warmup_steps);
    return cfg_.lr;
  }

  /// One update from the model's accumulated grads; returns the pre-clip
  /// gradient norm.
  double step(Seq2Seq<T>& model) {
    auto& w = model.params();
    auto& g = model.grads();
    if (m_.size() != w.size()) {
      m_.assign(w.size(), T(0));
      v_.assign(w.size(), T(0));
    }
    double sq = 0;
    for (T x : g) sq += static_cast<double>(x) * static_cast<double>(x);
    const double norm = std::sqrt(sq);
    const double clip =
        cfg_.clip_norm > 0 && norm > cfg_.clip_norm ? cfg_.clip_norm / norm : 1.0;
    ++t_;
    const double lr = lr_at(t_);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T step_size = static_cast<T>(lr / bc1);
    const T inv_bc2 = static_cast<T>(1.0 / bc2);
    const T eps = static_cast<T>(cfg_.eps);
    const T c = static_cast<T>(clip);
    for (const auto& t : model.tensors()) {
      const std::size_t n = static_cast<std::size_t>(t.rows) * static_cast<std::size_t>(t.cols);
      const T decay = t.decay ? static_cast<T>(1.0 - lr * cfg_.weight_decay) : T(1);
      for (std::size_t i = t.offset; i < t.offset + n; ++i) {
        T gi = g[i] * c;
        m_[i] = b1 * m_[i] + (T(1) - b1) * gi;
        v_[i] = b2 * v_[i] + (T(1) - b2) * gi * gi;
        w[i] = w[i] * decay - step_size * m_[i] / (std::sqrt(v_[i] * inv_bc2) + eps);
      }
    }
    return norm;
  }

 private:
  OptimConfig cfg_;
  std::vector<T> m_, v_;
  long t_ = 0;
};

}  // namespace mgcrs::nn
