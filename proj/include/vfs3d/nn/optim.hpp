#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "vfs3d/nn/layers.hpp"

namespace vfs3d::nn {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-2;
};

struct OptimizerState {
  struct Moments {
    std::vector<real> m, v;
    bool operator==(const Moments&) const = default;
  };

  AdamWConfig config;
  std::map<std::string, Moments> moments;
  std::uint64_t step = 0;

  bool operator==(const OptimizerState& o) const { return moments == o.moments && step == o.step; }
};

struct ScheduleConfig {
  double main_lr = 8e-4;
  double block_lr = 8e-5;
  std::uint64_t total_steps = 1;
  double min_lr = 0.0;

  double base(ParamGroup g) const { return g == ParamGroup::main ? main_lr : block_lr; }
};

/// Cosine annealing from the group's base rate to min_lr over total_steps.
inline double cosine_lr(std::uint64_t step, const ScheduleConfig& cfg, ParamGroup group) {
  require(cfg.total_steps >= 1, "cosine_lr: total_steps must be >= 1");
  require(step <= cfg.total_steps, "cosine_lr: step beyond total_steps");
  const double base = cfg.base(group);
  const double t = static_cast<double>(step) / static_cast<double>(cfg.total_steps);
  return cfg.min_lr + 0.5 * (base - cfg.min_lr) * (1.0 + std::cos(std::numbers::pi * t));
}

struct GroupRates {
  double main = 0;
  double block = 0;
  double operator()(ParamGroup g) const { return g == ParamGroup::main ? main : block; }

  static GroupRates uniform(double lr) { return {lr, lr}; }
  static GroupRates at(std::uint64_t step, const ScheduleConfig& cfg) {
    return {cosine_lr(step, cfg, ParamGroup::main), cosine_lr(step, cfg, ParamGroup::block)};
  }
};

/// One decoupled-weight-decay Adam update over `params`, using the gradients
/// accumulated in each parameter. Fails without touching anything if some
/// gradient is not finite.
inline void adamw_step(std::span<const Parameter> params, OptimizerState& state, const GroupRates& lr) {
  for (const auto& p : params) {
    if (!p.var.has_grad()) continue;
    for (real g : p.var.grad())
      if (!std::isfinite(g)) throw Error("adamw_step: non-finite gradient in parameter '" + p.name + "'");
  }
  const auto& cfg = state.config;
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (const auto& p : params) {
    Var var = p.var;
    auto& mom = state.moments[p.name];
    if (mom.m.size() != var.size()) {
      mom.m.assign(var.size(), real(0));
      mom.v.assign(var.size(), real(0));
    }
    const std::vector<real> grad = var.grad();
    auto value = var.mutable_value();
    const double rate = lr(p.group);
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i];
      mom.m[i] = static_cast<real>(cfg.beta1 * mom.m[i] + (1.0 - cfg.beta1) * g);
      mom.v[i] = static_cast<real>(cfg.beta2 * mom.v[i] + (1.0 - cfg.beta2) * g * g);
      const double m_hat = mom.m[i] / bc1;
      const double v_hat = mom.v[i] / bc2;
      const double x = value[i];
      value[i] = static_cast<real>(x - rate * cfg.weight_decay * x - rate * m_hat / (std::sqrt(v_hat) + cfg.eps));
    }
  }
}

}  // namespace vfs3d::nn
