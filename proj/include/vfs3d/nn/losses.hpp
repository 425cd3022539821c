#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "vfs3d/nn/ops.hpp"

namespace vfs3d::nn {

inline constexpr int kNoIgnore = -1;

/// Mean over non-ignored rows of -log softmax(logits)[label].
inline Var cross_entropy_loss(const Var& logits, std::span<const std::uint16_t> labels, int ignore_index = kNoIgnore) {
  detail::expect_rank(logits, 2, "cross_entropy");
  const auto n = logits.dim(0), c = logits.dim(1);
  if (labels.size() != n) throw ShapeError("cross_entropy: label count does not match rows");
  std::vector<real> prob(n * c, real(0));
  std::vector<std::uint8_t> used(n, 0);
  std::size_t count = 0;
  real total = 0;
  const auto lv = logits.value();
  for (std::size_t i = 0; i < n; ++i) {
    if (static_cast<int>(labels[i]) == ignore_index) continue;
    if (labels[i] >= c) throw ShapeError("cross_entropy: label outside [0, C)");
    real mx = -std::numeric_limits<real>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, lv[i * c + j]);
    real z = 0;
    for (std::size_t j = 0; j < c; ++j) z += (prob[i * c + j] = std::exp(lv[i * c + j] - mx));
    for (std::size_t j = 0; j < c; ++j) prob[i * c + j] /= z;
    total += mx + std::log(z) - lv[i * c + labels[i]];
    used[i] = 1;
    ++count;
  }
  if (count == 0) throw Error("cross_entropy: every point is ignored");
  const real inv = real(1) / static_cast<real>(count);
  std::vector<std::uint16_t> lab(labels.begin(), labels.end());
  return make_result({}, {total * inv}, {logits},
                     [prob = std::move(prob), used = std::move(used), lab = std::move(lab), n, c, inv](Node& s) {
                       if (auto* gl = parent_grad(s, 0)) {
                         const real g = s.grad[0] * inv;
                         for (std::size_t i = 0; i < n; ++i) {
                           if (!used[i]) continue;
                           for (std::size_t j = 0; j < c; ++j) (*gl)[i * c + j] += g * prob[i * c + j];
                           (*gl)[i * c + lab[i]] -= g;
                         }
                       }
                     });
}

/// Lovasz-softmax: per present class, sorted errors dotted with the discrete
/// Jaccard gradient; averaged over present classes. The sort permutation is
/// treated as constant when differentiating.
inline Var lovasz_softmax_loss(const Var& probs, std::span<const std::uint16_t> labels, int ignore_index = kNoIgnore) {
  detail::expect_rank(probs, 2, "lovasz_softmax");
  const auto n = probs.dim(0), c = probs.dim(1);
  if (labels.size() != n) throw ShapeError("lovasz_softmax: label count does not match rows");
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < n; ++i) {
    if (static_cast<int>(labels[i]) == ignore_index) continue;
    if (labels[i] >= c) throw ShapeError("lovasz_softmax: label outside [0, C)");
    rows.push_back(i);
  }
  if (rows.empty()) throw Error("lovasz_softmax: empty input");
  const auto pv = probs.value();
  // coef[i*c + k]: d loss_k / d p_ik before averaging.
  std::vector<real> coef(n * c, real(0));
  real total = 0;
  std::size_t present = 0;
  std::vector<real> err(rows.size());
  std::vector<std::size_t> order(rows.size());
  for (std::size_t k = 0; k < c; ++k) {
    std::size_t gts = 0;
    for (auto i : rows) gts += labels[i] == k;
    if (gts == 0) continue;
    ++present;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const std::size_t i = rows[r];
      const bool fg = labels[i] == k;
      err[r] = fg ? real(1) - pv[i * c + k] : pv[i * c + k];
    }
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return err[a] > err[b]; });
    real prev_jac = 0;
    std::size_t cum_fg = 0;
    for (std::size_t t = 0; t < order.size(); ++t) {
      const std::size_t i = rows[order[t]];
      const bool fg = labels[i] == k;
      cum_fg += fg;
      const real inter = static_cast<real>(gts - cum_fg);
      const real uni = static_cast<real>(gts + (t + 1 - cum_fg));
      const real jac = real(1) - inter / uni;
      const real dj = jac - prev_jac;
      prev_jac = jac;
      total += err[order[t]] * dj;
      coef[i * c + k] = fg ? -dj : dj;
    }
  }
  const real inv = real(1) / static_cast<real>(present);
  return make_result({}, {total * inv}, {probs}, [coef = std::move(coef), inv](Node& s) {
    if (auto* gp = parent_grad(s, 0)) {
      const real g = s.grad[0] * inv;
      for (std::size_t i = 0; i < coef.size(); ++i) (*gp)[i] += g * coef[i];
    }
  });
}

}  // namespace vfs3d::nn
