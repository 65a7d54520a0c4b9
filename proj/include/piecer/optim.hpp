#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "piecer/errors.hpp"
#include "piecer/tensor.hpp"

namespace piecer {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-6;
  double weight_decay = 0.01;
};

/// AdamW with decoupled weight decay:
///   p <- p * (1 - lr * wd) - lr * m_hat / (sqrt(v_hat) + eps)
class AdamW {
 public:
  AdamW(std::vector<Parameter*> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    for (const Parameter* p : params_) {
      m_.emplace_back(p->value.shape());
      v_.emplace_back(p->value.shape());
    }
  }

  void step(double lr) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const Parameter& p = *params_[i];
      if (p.grad.shape() != p.value.shape()) {
        throw ContractError("adamw: parameter " + p.name + " has no gradient of shape " + shape_str(p.value.shape()));
      }
      if (m_[i].shape() != p.value.shape()) {
        throw ContractError("adamw: moment shape drift for parameter " + p.name);
      }
    }
    ++step_;
    const double t = static_cast<double>(step_);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Parameter& p = *params_[i];
      Tensor& m = m_[i];
      Tensor& v = v_[i];
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        const double g = p.grad[k];
        m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g;
        v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g * g;
        const double m_hat = m[k] / bc1;
        const double v_hat = v[k] / bc2;
        p.value[k] = p.value[k] * (1.0 - lr * cfg_.weight_decay) - lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
      }
    }
  }

  void zero_grad() {
    for (Parameter* p : params_) p->zero_grad();
  }

  std::size_t step_count() const { return step_; }
  const AdamWConfig& config() const { return cfg_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }

 private:
  std::vector<Parameter*> params_;
  AdamWConfig cfg_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::size_t step_ = 0;
};

/// Slanted triangular schedule: linear 0 -> peak over the first ceil(6%) of
/// steps, then linear peak -> 0 at `total`. With total == 1 the single step
/// is the peak.
inline double lr_at(std::size_t step, std::size_t total, double peak) {
  if (total == 0) throw ContractError("lr_at: total steps must be positive");
  if (step > total) {
    throw ContractError("lr_at: step " + std::to_string(step) + " beyond total " + std::to_string(total));
  }
  const std::size_t warm = (6 * total + 99) / 100;
  if (step == warm) return peak;
  if (step < warm) return peak * static_cast<double>(step) / static_cast<double>(warm);
  return peak * static_cast<double>(total - step) / static_cast<double>(total - warm);
}

/// Shadow parameters updated as shadow <- decay * shadow + (1 - decay) * param.
class Ema {
 public:
  Ema(const std::vector<Parameter*>& params, double decay) : decay_(decay) {
    if (!(decay >= 0.0 && decay < 1.0)) throw ContractError("ema: decay must lie in [0, 1)");
    for (const Parameter* p : params) shadow_.push_back(p->value);
  }

  void update(const std::vector<Parameter*>& params) {
    check(params);
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& s = shadow_[i];
      const Tensor& v = params[i]->value;
      // Equal entries are skipped: decay * x + (1 - decay) * x can round away from x.
      for (std::size_t k = 0; k < s.size(); ++k)
        if (s[k] != v[k]) s[k] = decay_ * s[k] + (1.0 - decay_) * v[k];
    }
  }

  /// Exchanges live and shadow values; calling twice restores the original state.
  void swap(const std::vector<Parameter*>& params) {
    check(params);
    for (std::size_t i = 0; i < params.size(); ++i) std::swap(shadow_[i], params[i]->value);
  }

  const std::vector<Tensor>& shadow() const { return shadow_; }
  double decay() const { return decay_; }

 private:
  void check(const std::vector<Parameter*>& params) const {
    if (params.size() != shadow_.size()) throw ContractError("ema: parameter count changed");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i]->value.shape() != shadow_[i].shape()) {
        throw ContractError("ema: shape drift for parameter " + params[i]->name);
      }
    }
  }

  double decay_;
  std::vector<Tensor> shadow_;
};

}  // namespace piecer
