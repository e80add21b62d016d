#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace agop {

/// A named trainable buffer and its gradient, both borrowed from the model.
struct ParamRef {
  std::string name;
  std::span<double> value;
  std::span<double> grad;
};

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  /// Global gradient-norm clip applied before the update; disabled when empty.
  std::optional<double> clip_norm;
};

struct OptimState {
  AdamWConfig config;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
  long long step = 0;

  OptimState() = default;
  OptimState(AdamWConfig cfg, std::span<const ParamRef> params) : config(cfg) {
    for (const auto& p : params) {
      first_moment.emplace_back(p.value.size(), 0.0);
      second_moment.emplace_back(p.value.size(), 0.0);
    }
  }
};

enum class StepStatus { ok, diverged };

inline double global_grad_norm(std::span<const ParamRef> params) {
  double sq = 0.0;
  for (const auto& p : params)
    for (double g : p.grad) sq += g * g;
  return std::sqrt(sq);
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
inline double clip_grad_norm(std::span<const ParamRef> params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (std::isfinite(norm) && norm > max_norm) {
    const double scale = max_norm / (norm + 1e-6);
    for (const auto& p : params)
      for (double& g : p.grad) g *= scale;
  }
  return norm;
}

/// One AdamW update with decoupled weight decay and bias-corrected moments.
/// A non-finite gradient leaves parameters untouched and reports divergence.
inline StepStatus adamw_step(std::span<const ParamRef> params, OptimState& state, double lr) {
  if (lr < 0.0) throw std::invalid_argument("learning rate must be non-negative");
  if (params.size() != state.first_moment.size())
    throw std::invalid_argument("optimizer state does not match parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].value.size() != params[i].grad.size() || params[i].value.size() != state.first_moment[i].size())
      throw std::invalid_argument("parameter '" + params[i].name + "' misaligned with its gradient or state");
  }

  const auto& cfg = state.config;
  const double norm = cfg.clip_norm ? clip_grad_norm(params, *cfg.clip_norm) : global_grad_norm(params);
  if (!std::isfinite(norm)) return StepStatus::diverged;

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto value = params[i].value;
    auto grad = params[i].grad;
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double g = grad[j];
      value[j] -= lr * cfg.weight_decay * value[j];
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      value[j] -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
  return StepStatus::ok;
}

/// Linear warmup from 0 to `peak`, then cosine decay to 0 at `total`.
struct LrSchedule {
  double peak = 0.0;
  long long warmup = 0;
  long long total = 0;

  LrSchedule() = default;
  LrSchedule(double peak_lr, long long warmup_steps, long long total_steps)
      : peak(peak_lr), warmup(warmup_steps), total(total_steps) {
    if (peak < 0.0) throw std::invalid_argument("peak learning rate must be non-negative");
    if (warmup < 0 || warmup > total) throw std::invalid_argument("need 0 <= warmup <= total");
  }
};

inline double lr_at(const LrSchedule& s, long long step) {
  step = std::clamp(step, 0LL, s.total);
  if (step < s.warmup) return s.peak * static_cast<double>(step) / static_cast<double>(s.warmup);
  const long long decay = s.total - s.warmup;
  if (decay == 0) return s.peak;
  const double progress = static_cast<double>(step - s.warmup) / static_cast<double>(decay);
  return s.peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace agop
