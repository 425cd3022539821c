#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "vfs3d/core/rng.hpp"
#include "vfs3d/nn/tensor.hpp"

namespace vfs3d::nn {

struct GradCheckReport {
  double max_rel_error = 0;
  double max_abs_error = 0;
  std::size_t checked = 0;
  std::string worst;  // "input[i] coordinate j"
  bool passed = true;
};

struct GradCheckOptions {
  double step = 1e-5;
  /// Relative error uses max(|analytic|, |numeric|, floor) as denominator.
  double floor = 1e-6;
  /// 0 checks every coordinate; otherwise a seeded random subset per input.
  std::size_t max_coords_per_input = 0;
  std::uint64_t seed = 0;
};

/// Compares the recorded adjoints of scalar `fn` against central differences
/// with respect to every listed input (which must require gradients).
inline GradCheckReport finite_diff_check(const std::function<Var()>& fn, std::vector<Var> inputs, double tol,
                                         const GradCheckOptions& opt = {}) {
  for (auto& in : inputs) in.zero_grad();
  fn().backward();
  std::vector<std::vector<real>> analytic;
  for (const auto& in : inputs) analytic.push_back(in.grad());

  GradCheckReport rep;
  Rng rng(opt.seed);
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Var in = inputs[k];
    std::vector<std::size_t> coords(in.size());
    for (std::size_t j = 0; j < coords.size(); ++j) coords[j] = j;
    if (opt.max_coords_per_input && coords.size() > opt.max_coords_per_input) {
      for (std::size_t j = 0; j < opt.max_coords_per_input; ++j)
        std::swap(coords[j], coords[j + rng.below(coords.size() - j)]);
      coords.resize(opt.max_coords_per_input);
    }
    for (auto j : coords) {
      auto value = in.mutable_value();
      const real saved = value[j];
      double fp = 0, fm = 0;
      {
        NoGradGuard guard;
        value[j] = static_cast<real>(saved + opt.step);
        fp = fn().item();
        value[j] = static_cast<real>(saved - opt.step);
        fm = fn().item();
      }
      value[j] = saved;
      const double numeric = (fp - fm) / (2 * opt.step);
      const double a = analytic[k][j];
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), opt.floor});
      rep.max_abs_error = std::max(rep.max_abs_error, abs_err);
      if (rel > rep.max_rel_error || !std::isfinite(rel)) {
        rep.max_rel_error = std::isfinite(rel) ? rel : HUGE_VAL;
        rep.worst = "input[" + std::to_string(k) + "] coordinate " + std::to_string(j);
      }
      ++rep.checked;
    }
  }
  for (auto& in : inputs) in.zero_grad();
  rep.passed = rep.max_rel_error <= tol;
  return rep;
}

}  // namespace vfs3d::nn
