#pragma once

#include <Eigen/Core>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "vfs3d/nn/tensor.hpp"

namespace vfs3d::nn {

using RowMat = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

namespace detail {

inline void expect_rank(const Var& v, std::size_t rank, const char* op) {
  if (v.rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(v.shape()));
}

inline ShapeError mismatch(const char* op, const Var& a, const Var& b) {
  return ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a.shape()) + " and " +
                    shape_str(b.shape()));
}

// Rank <= 2 shapes viewed as rows x cols.
inline std::array<std::size_t, 2> as_2d(const Shape& s) {
  if (s.empty()) return {1, 1};
  if (s.size() == 1) return {1, s[0]};
  return {s[0], s[1]};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(const Var& a, const Var& b) {
  detail::expect_rank(a, 2, "matmul");
  detail::expect_rank(b, 2, "matmul");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw detail::mismatch("matmul", a, b);
  std::vector<real> out(m * n);
  MatMap(out.data(), m, n).noalias() =
      ConstMatMap(a.value().data(), m, k) * ConstMatMap(b.value().data(), k, n);
  return make_result({m, n}, std::move(out), {a, b}, [m, k, n](Node& s) {
    ConstMatMap g(s.grad.data(), m, n);
    if (auto* ga = parent_grad(s, 0))
      MatMap(ga->data(), m, k).noalias() += g * ConstMatMap(parent_value(s, 1).data(), k, n).transpose();
    if (auto* gb = parent_grad(s, 1))
      MatMap(gb->data(), k, n).noalias() += ConstMatMap(parent_value(s, 0).data(), m, k).transpose() * g;
  });
}

inline Var transpose(const Var& a) {
  detail::expect_rank(a, 2, "transpose");
  const auto r = a.dim(0), c = a.dim(1);
  std::vector<real> out(r * c);
  MatMap(out.data(), c, r) = ConstMatMap(a.value().data(), r, c).transpose();
  return make_result({c, r}, std::move(out), {a}, [r, c](Node& s) {
    if (auto* ga = parent_grad(s, 0))
      MatMap(ga->data(), r, c) += ConstMatMap(s.grad.data(), c, r).transpose();
  });
}

inline Var reshape(const Var& a, Shape shape) {
  if (numel(shape) != a.size())
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  std::vector<real> out(a.value().begin(), a.value().end());
  return make_result(std::move(shape), std::move(out), {a}, [](Node& s) {
    if (auto* ga = parent_grad(s, 0))
      for (std::size_t i = 0; i < s.grad.size(); ++i) (*ga)[i] += s.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Broadcasting arithmetic. Equal shapes of any rank, or rank <= 2 operands
// whose dimensions are equal or 1.

enum class BinaryKind { add, sub, mul, div };

namespace detail {

inline Var binary(const Var& a, const Var& b, BinaryKind kind, const char* op) {
  if (a.shape() == b.shape()) {
    const auto n = a.size();
    std::vector<real> out(n);
    const auto av = a.value();
    const auto bv = b.value();
    for (std::size_t i = 0; i < n; ++i) {
      switch (kind) {
        case BinaryKind::add: out[i] = av[i] + bv[i]; break;
        case BinaryKind::sub: out[i] = av[i] - bv[i]; break;
        case BinaryKind::mul: out[i] = av[i] * bv[i]; break;
        case BinaryKind::div: out[i] = av[i] / bv[i]; break;
      }
    }
    return make_result(a.shape(), std::move(out), {a, b}, [kind, n](Node& s) {
      const auto& av = parent_value(s, 0);
      const auto& bv = parent_value(s, 1);
      auto* ga = parent_grad(s, 0);
      auto* gb = parent_grad(s, 1);
      for (std::size_t i = 0; i < n; ++i) {
        const real g = s.grad[i];
        switch (kind) {
          case BinaryKind::add:
            if (ga) (*ga)[i] += g;
            if (gb) (*gb)[i] += g;
            break;
          case BinaryKind::sub:
            if (ga) (*ga)[i] += g;
            if (gb) (*gb)[i] -= g;
            break;
          case BinaryKind::mul:
            if (ga) (*ga)[i] += g * bv[i];
            if (gb) (*gb)[i] += g * av[i];
            break;
          case BinaryKind::div:
            if (ga) (*ga)[i] += g / bv[i];
            if (gb) (*gb)[i] -= g * av[i] / (bv[i] * bv[i]);
            break;
        }
      }
    });
  }
  if (a.rank() > 2 || b.rank() > 2) throw mismatch(op, a, b);
  const auto [ar, ac] = as_2d(a.shape());
  const auto [br, bc] = as_2d(b.shape());
  if ((ar != br && ar != 1 && br != 1) || (ac != bc && ac != 1 && bc != 1)) throw mismatch(op, a, b);
  const std::size_t r = std::max(ar, br), c = std::max(ac, bc);
  auto ia = [ar = ar, ac = ac](std::size_t i, std::size_t j) { return (ar == 1 ? 0 : i) * ac + (ac == 1 ? 0 : j); };
  auto ib = [br = br, bc = bc](std::size_t i, std::size_t j) { return (br == 1 ? 0 : i) * bc + (bc == 1 ? 0 : j); };
  std::vector<real> out(r * c);
  const auto av = a.value();
  const auto bv = b.value();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const real x = av[ia(i, j)], y = bv[ib(i, j)];
      real& o = out[i * c + j];
      switch (kind) {
        case BinaryKind::add: o = x + y; break;
        case BinaryKind::sub: o = x - y; break;
        case BinaryKind::mul: o = x * y; break;
        case BinaryKind::div: o = x / y; break;
      }
    }
  return make_result({r, c}, std::move(out), {a, b}, [kind, r, c, ia, ib](Node& s) {
    const auto& av = parent_value(s, 0);
    const auto& bv = parent_value(s, 1);
    auto* ga = parent_grad(s, 0);
    auto* gb = parent_grad(s, 1);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        const real g = s.grad[i * c + j];
        const real x = av[ia(i, j)], y = bv[ib(i, j)];
        switch (kind) {
          case BinaryKind::add:
            if (ga) (*ga)[ia(i, j)] += g;
            if (gb) (*gb)[ib(i, j)] += g;
            break;
          case BinaryKind::sub:
            if (ga) (*ga)[ia(i, j)] += g;
            if (gb) (*gb)[ib(i, j)] -= g;
            break;
          case BinaryKind::mul:
            if (ga) (*ga)[ia(i, j)] += g * y;
            if (gb) (*gb)[ib(i, j)] += g * x;
            break;
          case BinaryKind::div:
            if (ga) (*ga)[ia(i, j)] += g / y;
            if (gb) (*gb)[ib(i, j)] -= g * x / (y * y);
            break;
        }
      }
  });
}

template <class F, class DF>
Var unary(const Var& a, F f, DF df) {
  std::vector<real> out(a.size());
  const auto av = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i]);
  return make_result(a.shape(), std::move(out), {a}, [df](Node& s) {
    if (auto* ga = parent_grad(s, 0)) {
      const auto& av = parent_value(s, 0);
      for (std::size_t i = 0; i < s.grad.size(); ++i) (*ga)[i] += s.grad[i] * df(av[i], s.value[i]);
    }
  });
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) { return detail::binary(a, b, BinaryKind::add, "add"); }
inline Var sub(const Var& a, const Var& b) { return detail::binary(a, b, BinaryKind::sub, "sub"); }
inline Var mul(const Var& a, const Var& b) { return detail::binary(a, b, BinaryKind::mul, "mul"); }
inline Var div(const Var& a, const Var& b) { return detail::binary(a, b, BinaryKind::div, "div"); }

inline Var scale(const Var& a, real k) {
  return detail::unary(a, [k](real x) { return k * x; }, [k](real, real) { return k; });
}

inline Var add_scalar(const Var& a, real k) {
  return detail::unary(a, [k](real x) { return x + k; }, [](real, real) { return real(1); });
}

inline Var relu(const Var& a) {
  return detail::unary(
      a, [](real x) { return x > 0 ? x : real(0); }, [](real x, real) { return x > 0 ? real(1) : real(0); });
}

/// Exact (erf) GELU.
inline Var gelu(const Var& a) {
  constexpr real inv_sqrt2 = real(0.70710678118654752440);
  constexpr real inv_sqrt2pi = real(0.39894228040143267794);
  return detail::unary(
      a, [](real x) { return real(0.5) * x * (real(1) + std::erf(x * inv_sqrt2)); },
      [](real x, real) {
        return real(0.5) * (real(1) + std::erf(x * inv_sqrt2)) + x * inv_sqrt2pi * std::exp(real(-0.5) * x * x);
      });
}

inline Var exp(const Var& a) {
  return detail::unary(a, [](real x) { return std::exp(x); }, [](real, real y) { return y; });
}

inline Var log(const Var& a) {
  return detail::unary(a, [](real x) { return std::log(x); }, [](real x, real) { return real(1) / x; });
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum(const Var& a) {
  real total = 0;
  for (real x : a.value()) total += x;
  return make_result({}, {total}, {a}, [](Node& s) {
    if (auto* ga = parent_grad(s, 0))
      for (auto& g : *ga) g += s.grad[0];
  });
}

inline Var mean(const Var& a) {
  if (a.size() == 0) throw ShapeError("mean: empty array");
  const real inv = real(1) / static_cast<real>(a.size());
  real total = 0;
  for (real x : a.value()) total += x;
  return make_result({}, {total * inv}, {a}, [inv](Node& s) {
    if (auto* ga = parent_grad(s, 0))
      for (auto& g : *ga) g += s.grad[0] * inv;
  });
}

/// Sum over one axis of a matrix, keeping it as a length-1 dimension.
inline Var sum_axis(const Var& a, int axis) {
  detail::expect_rank(a, 2, "sum_axis");
  const auto r = a.dim(0), c = a.dim(1);
  const auto av = a.value();
  if (axis == 0) {
    std::vector<real> out(c, real(0));
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[j] += av[i * c + j];
    return make_result({1, c}, std::move(out), {a}, [r, c](Node& s) {
      if (auto* ga = parent_grad(s, 0))
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) (*ga)[i * c + j] += s.grad[j];
    });
  }
  if (axis != 1) throw ShapeError("sum_axis: axis must be 0 or 1");
  std::vector<real> out(r, real(0));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i] += av[i * c + j];
  return make_result({r, 1}, std::move(out), {a}, [r, c](Node& s) {
    if (auto* ga = parent_grad(s, 0))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) (*ga)[i * c + j] += s.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Structural ops

inline Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  for (const auto& p : parts) detail::expect_rank(p, 2, "concat");
  if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
  const int other = 1 - axis;
  const auto fixed = parts[0].dim(other);
  std::vector<std::size_t> extents;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.dim(other) != fixed) throw detail::mismatch("concat", parts[0], p);
    extents.push_back(p.dim(axis));
    total += p.dim(axis);
  }
  const std::size_t rows = axis == 0 ? total : fixed;
  const std::size_t cols = axis == 0 ? fixed : total;
  std::vector<real> out(rows * cols);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pv = parts[k].value();
    const auto pr = parts[k].dim(0), pc = parts[k].dim(1);
    for (std::size_t i = 0; i < pr; ++i)
      for (std::size_t j = 0; j < pc; ++j) {
        const std::size_t oi = axis == 0 ? offset + i : i;
        const std::size_t oj = axis == 0 ? j : offset + j;
        out[oi * cols + oj] = pv[i * pc + j];
      }
    offset += extents[k];
  }
  return make_result({rows, cols}, std::move(out), parts, [axis, extents, fixed, cols](Node& s) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < extents.size(); ++k) {
      if (auto* gp = parent_grad(s, k)) {
        const std::size_t pr = axis == 0 ? extents[k] : fixed;
        const std::size_t pc = axis == 0 ? fixed : extents[k];
        for (std::size_t i = 0; i < pr; ++i)
          for (std::size_t j = 0; j < pc; ++j) {
            const std::size_t oi = axis == 0 ? offset + i : i;
            const std::size_t oj = axis == 0 ? j : offset + j;
            (*gp)[i * pc + j] += s.grad[oi * cols + oj];
          }
      }
      offset += extents[k];
    }
  });
}

/// Half-open range [begin, end) along `axis` of a matrix.
inline Var slice(const Var& a, int axis, std::size_t begin, std::size_t end) {
  detail::expect_rank(a, 2, "slice");
  if (axis != 0 && axis != 1) throw ShapeError("slice: axis must be 0 or 1");
  if (begin > end || end > a.dim(axis))
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") outside " +
                     shape_str(a.shape()));
  const auto r = a.dim(0), c = a.dim(1);
  const std::size_t orows = axis == 0 ? end - begin : r;
  const std::size_t ocols = axis == 0 ? c : end - begin;
  std::vector<real> out(orows * ocols);
  const auto av = a.value();
  for (std::size_t i = 0; i < orows; ++i)
    for (std::size_t j = 0; j < ocols; ++j)
      out[i * ocols + j] = axis == 0 ? av[(begin + i) * c + j] : av[i * c + begin + j];
  return make_result({orows, ocols}, std::move(out), {a}, [axis, begin, orows, ocols, c](Node& s) {
    if (auto* ga = parent_grad(s, 0))
      for (std::size_t i = 0; i < orows; ++i)
        for (std::size_t j = 0; j < ocols; ++j) {
          const std::size_t src = axis == 0 ? (begin + i) * c + j : i * c + begin + j;
          (*ga)[src] += s.grad[i * ocols + j];
        }
  });
}

/// Rows of `a` selected by index (repeats allowed); adjoint scatter-adds.
inline Var gather_rows(const Var& a, std::vector<std::size_t> idx) {
  detail::expect_rank(a, 2, "gather_rows");
  const auto r = a.dim(0), c = a.dim(1);
  for (auto i : idx)
    if (i >= r) throw ShapeError("gather_rows: index " + std::to_string(i) + " out of " + std::to_string(r) + " rows");
  std::vector<real> out(idx.size() * c);
  const auto av = a.value();
  for (std::size_t k = 0; k < idx.size(); ++k)
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(idx[k] * c), c, out.begin() + static_cast<std::ptrdiff_t>(k * c));
  const Shape shape{idx.size(), c};
  return make_result(shape, std::move(out), {a}, [idx = std::move(idx), c](Node& s) {
    if (auto* ga = parent_grad(s, 0))
      for (std::size_t k = 0; k < idx.size(); ++k)
        for (std::size_t j = 0; j < c; ++j) (*ga)[idx[k] * c + j] += s.grad[k * c + j];
  });
}

/// Row means per segment: out[s] = mean of rows i with seg[i] == s. Every
/// segment must be non-empty.
inline Var segment_mean(const Var& a, std::vector<std::size_t> seg, std::size_t num_segments) {
  detail::expect_rank(a, 2, "segment_mean");
  const auto r = a.dim(0), c = a.dim(1);
  if (seg.size() != r) throw ShapeError("segment_mean: segment ids do not match row count");
  std::vector<real> count(num_segments, real(0));
  for (auto s : seg) {
    if (s >= num_segments) throw ShapeError("segment_mean: segment id out of range");
    count[s] += 1;
  }
  for (real n : count)
    if (n == 0) throw ShapeError("segment_mean: empty segment");
  std::vector<real> out(num_segments * c, real(0));
  const auto av = a.value();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[seg[i] * c + j] += av[i * c + j];
  for (std::size_t s = 0; s < num_segments; ++s)
    for (std::size_t j = 0; j < c; ++j) out[s * c + j] /= count[s];
  return make_result({num_segments, c}, std::move(out), {a},
                     [seg = std::move(seg), count = std::move(count), c](Node& s) {
                       if (auto* ga = parent_grad(s, 0))
                         for (std::size_t i = 0; i < seg.size(); ++i)
                           for (std::size_t j = 0; j < c; ++j)
                             (*ga)[i * c + j] += s.grad[seg[i] * c + j] / count[seg[i]];
                     });
}

// ---------------------------------------------------------------------------
// Normalizations

/// Row-wise softmax. With `col_mask`, columns whose mask is 0 get exactly zero
/// probability; a row with every column masked is an error.
inline Var softmax_rows(const Var& a, std::span<const std::uint8_t> col_mask = {}) {
  detail::expect_rank(a, 2, "softmax");
  const auto r = a.dim(0), c = a.dim(1);
  if (!col_mask.empty() && col_mask.size() != c) throw ShapeError("softmax: mask length does not match columns");
  auto keep = [&](std::size_t j) { return col_mask.empty() || col_mask[j] != 0; };
  std::vector<real> out(r * c, real(0));
  const auto av = a.value();
  for (std::size_t i = 0; i < r; ++i) {
    real mx = -std::numeric_limits<real>::infinity();
    for (std::size_t j = 0; j < c; ++j)
      if (keep(j)) mx = std::max(mx, av[i * c + j]);
    if (!std::isfinite(mx)) throw ShapeError("softmax: every column of a row is masked");
    real z = 0;
    for (std::size_t j = 0; j < c; ++j)
      if (keep(j)) z += (out[i * c + j] = std::exp(av[i * c + j] - mx));
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= z;
  }
  return make_result({r, c}, std::move(out), {a}, [r, c](Node& s) {
    if (auto* ga = parent_grad(s, 0))
      for (std::size_t i = 0; i < r; ++i) {
        real dot = 0;
        for (std::size_t j = 0; j < c; ++j) dot += s.grad[i * c + j] * s.value[i * c + j];
        for (std::size_t j = 0; j < c; ++j)
          (*ga)[i * c + j] += s.value[i * c + j] * (s.grad[i * c + j] - dot);
      }
  });
}

inline constexpr real kLayerNormEps = real(1e-9);

/// Row-wise layer normalization with affine gain/bias of length C.
inline Var layer_norm(const Var& x, const Var& gamma, const Var& beta, real eps = kLayerNormEps) {
  detail::expect_rank(x, 2, "layer_norm");
  const auto r = x.dim(0), c = x.dim(1);
  if (gamma.size() != c || beta.size() != c) throw detail::mismatch("layer_norm", x, gamma);
  std::vector<real> xhat(r * c), inv_std(r), out(r * c);
  const auto xv = x.value();
  const auto gv = gamma.value();
  const auto bv = beta.value();
  for (std::size_t i = 0; i < r; ++i) {
    real mu = 0;
    for (std::size_t j = 0; j < c; ++j) mu += xv[i * c + j];
    mu /= static_cast<real>(c);
    real var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (xv[i * c + j] - mu) * (xv[i * c + j] - mu);
    var /= static_cast<real>(c);
    inv_std[i] = real(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (xv[i * c + j] - mu) * inv_std[i];
      out[i * c + j] = xhat[i * c + j] * gv[j] + bv[j];
    }
  }
  return make_result({r, c}, std::move(out), {x, gamma, beta},
                     [r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& s) {
                       const auto& gv = parent_value(s, 1);
                       auto* gx = parent_grad(s, 0);
                       auto* gg = parent_grad(s, 1);
                       auto* gb = parent_grad(s, 2);
                       for (std::size_t i = 0; i < r; ++i) {
                         real mean_g = 0, mean_gx = 0;
                         for (std::size_t j = 0; j < c; ++j) {
                           const real g = s.grad[i * c + j];
                           if (gg) (*gg)[j] += g * xhat[i * c + j];
                           if (gb) (*gb)[j] += g;
                           const real gh = g * gv[j];
                           mean_g += gh;
                           mean_gx += gh * xhat[i * c + j];
                         }
                         if (!gx) continue;
                         mean_g /= static_cast<real>(c);
                         mean_gx /= static_cast<real>(c);
                         for (std::size_t j = 0; j < c; ++j) {
                           const real gh = s.grad[i * c + j] * gv[j];
                           (*gx)[i * c + j] += inv_std[i] * (gh - mean_g - xhat[i * c + j] * mean_gx);
                         }
                       }
                     });
}

}  // namespace vfs3d::nn
