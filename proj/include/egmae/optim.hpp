#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <string>
#include <vector>

#include "egmae/errors.hpp"
#include "egmae/model.hpp"

namespace egmae {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

/// AdamW with decoupled weight decay:
///   m ← β1·m + (1−β1)·g,  v ← β2·v + (1−β2)·g²
///   p ← p − lr·(m̂/(√v̂ + eps) + wd·p)
/// with bias-corrected m̂ = m/(1−β1^t), v̂ = v/(1−β2^t).
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  const AdamWConfig& config() const { return cfg_; }
  std::size_t steps() const { return t_; }
  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }

  /// One update at learning rate `lr`. Parameters without a gradient are
  /// treated as having a zero gradient (decay still applies).
  void step(ParamStore<T>& params, double lr) {
    if (m_.empty()) {
      for (const auto& [_, p] : params) {
        m_.emplace_back(p.numel(), T(0));
        v_.emplace_back(p.numel(), T(0));
      }
    }
    if (m_.size() != params.size()) throw ContractError("AdamW: parameter set changed between steps");
    for (const auto& [name, p] : params) {
      if (!p.has_grad()) continue;
      for (T g : p.grad())
        if (!std::isfinite(static_cast<double>(g))) throw TrainingError("non-finite gradient in parameter " + name);
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    std::size_t k = 0;
    for (auto& [name, p] : params) {
      auto& m = m_[k];
      auto& v = v_[k];
      ++k;
      if (m.size() != p.numel()) throw ContractError("AdamW: shape of " + name + " changed between steps");
      auto data = p.mutable_data();
      const bool has_grad = p.has_grad();
      auto grad = p.grad();
      for (std::size_t i = 0; i < data.size(); ++i) {
        const T g = has_grad ? grad[i] : T(0);
        m[i] = T(cfg_.beta1) * m[i] + T(1.0 - cfg_.beta1) * g;
        v[i] = T(cfg_.beta2) * v[i] + T(1.0 - cfg_.beta2) * g * g;
        const double mhat = static_cast<double>(m[i]) / bc1;
        const double vhat = static_cast<double>(v[i]) / bc2;
        const double update = mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * static_cast<double>(data[i]);
        data[i] = static_cast<T>(static_cast<double>(data[i]) - lr * update);
      }
    }
  }

 private:
  AdamWConfig cfg_;
  std::size_t t_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

/// lr_min + ½(lr_max − lr_min)(1 + cos(π·step/total)).
inline double cosine_lr(std::size_t step, std::size_t total_steps, double lr_max, double lr_min) {
  if (total_steps == 0) throw ParameterError("cosine_lr: total_steps must be at least 1");
  if (step > total_steps) step = total_steps;
  const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

/// Linear warmup from lr_max/warmup to lr_max over `warmup` steps, then cosine
/// annealing over the remaining steps.
inline double warmup_cosine_lr(std::size_t step, std::size_t total_steps, std::size_t warmup, double lr_max,
                               double lr_min) {
  if (warmup > 0 && step < warmup) {
    return lr_max * static_cast<double>(step + 1) / static_cast<double>(warmup);
  }
  const std::size_t span = total_steps > warmup ? total_steps - warmup : 1;
  return cosine_lr(step - warmup, span, lr_max, lr_min);
}

/// Scales all gradients so their global L2 norm is at most max_norm; returns
/// the norm before scaling.
template <typename T>
double clip_grad_norm(ParamStore<T>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& [_, p] : params)
    for (T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& [_, p] : params) {
      if (!p.has_grad()) continue;
      for (T& g : p.mutable_grad()) g = static_cast<T>(static_cast<double>(g) * s);
    }
  }
  return norm;
}

}  // namespace egmae
