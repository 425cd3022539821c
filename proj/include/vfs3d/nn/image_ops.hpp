#pragma once

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "vfs3d/nn/ops.hpp"

namespace vfs3d::nn {

/// 2-D convolution of a C x H x W map with a Co x Ci x k x k kernel
/// (im2col + GEMM). `bias` may be undefined.
inline Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
  detail::expect_rank(x, 3, "conv2d");
  detail::expect_rank(weight, 4, "conv2d");
  const auto ci = x.dim(0), h = x.dim(1), w = x.dim(2);
  const auto co = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != ci || weight.dim(3) != k) throw detail::mismatch("conv2d", x, weight);
  if (bias.defined() && bias.size() != co) throw detail::mismatch("conv2d", weight, bias);
  if (stride < 1 || pad < 0) throw ShapeError("conv2d: stride must be >= 1 and pad >= 0");
  const long hl = static_cast<long>(h) + 2 * pad - static_cast<long>(k);
  const long wl = static_cast<long>(w) + 2 * pad - static_cast<long>(k);
  if (hl < 0 || wl < 0) throw ShapeError("conv2d: kernel larger than padded input " + shape_str(x.shape()));
  const std::size_t ho = static_cast<std::size_t>(hl / stride + 1), wo = static_cast<std::size_t>(wl / stride + 1);
  const std::size_t kk = ci * k * k, positions = ho * wo;

  // cols[(c*k*k + ky*k + kx), (oy*wo + ox)]
  std::vector<real> cols(kk * positions, real(0));
  const auto xv = x.value();
  for (std::size_t c = 0; c < ci; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        real* row = cols.data() + ((c * k + ky) * k + kx) * positions;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const long iy = static_cast<long>(oy) * stride - pad + static_cast<long>(ky);
          if (iy < 0 || iy >= static_cast<long>(h)) continue;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const long ix = static_cast<long>(ox) * stride - pad + static_cast<long>(kx);
            if (ix < 0 || ix >= static_cast<long>(w)) continue;
            row[oy * wo + ox] = xv[(c * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)];
          }
        }
      }
  std::vector<real> out(co * positions);
  MatMap om(out.data(), co, positions);
  om.noalias() = ConstMatMap(weight.value().data(), co, kk) * ConstMatMap(cols.data(), kk, positions);
  if (bias.defined()) {
    const auto bv = bias.value();
    for (std::size_t o = 0; o < co; ++o) om.row(o).array() += bv[o];
  }
  return make_result(
      {co, ho, wo}, std::move(out), {x, weight, bias},
      [=, cols = std::move(cols)](Node& s) {
        ConstMatMap g(s.grad.data(), co, positions);
        if (auto* gw = parent_grad(s, 1))
          MatMap(gw->data(), co, kk).noalias() += g * ConstMatMap(cols.data(), kk, positions).transpose();
        if (auto* gb = parent_grad(s, 2))
          for (std::size_t o = 0; o < co; ++o) (*gb)[o] += g.row(o).sum();
        if (auto* gx = parent_grad(s, 0)) {
          RowMat gcols = ConstMatMap(parent_value(s, 1).data(), co, kk).transpose() * g;
          for (std::size_t c = 0; c < ci; ++c)
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const real* row = gcols.data() + ((c * k + ky) * k + kx) * positions;
                for (std::size_t oy = 0; oy < ho; ++oy) {
                  const long iy = static_cast<long>(oy) * stride - pad + static_cast<long>(ky);
                  if (iy < 0 || iy >= static_cast<long>(h)) continue;
                  for (std::size_t ox = 0; ox < wo; ++ox) {
                    const long ix = static_cast<long>(ox) * stride - pad + static_cast<long>(kx);
                    if (ix < 0 || ix >= static_cast<long>(w)) continue;
                    (*gx)[(c * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix)] += row[oy * wo + ox];
                  }
                }
              }
        }
      });
}

inline Var upsample_nearest2x(const Var& x) {
  detail::expect_rank(x, 3, "upsample_nearest2x");
  const auto c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const auto h2 = 2 * h, w2 = 2 * w;
  std::vector<real> out(c * h2 * w2);
  const auto xv = x.value();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h2; ++y)
      for (std::size_t xx = 0; xx < w2; ++xx) out[(ch * h2 + y) * w2 + xx] = xv[(ch * h + y / 2) * w + xx / 2];
  return make_result({c, h2, w2}, std::move(out), {x}, [c, h, w, h2, w2](Node& s) {
    if (auto* gx = parent_grad(s, 0))
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < h2; ++y)
          for (std::size_t xx = 0; xx < w2; ++xx)
            (*gx)[(ch * h + y / 2) * w + xx / 2] += s.grad[(ch * h2 + y) * w2 + xx];
  });
}

/// Continuous pixel position (u = column, v = row).
struct PixelCoord {
  double u = 0;
  double v = 0;
};

/// Bilinear samples of a C x H x W map at N positions -> N x C.
/// Positions must satisfy 0 <= u <= W-1 and 0 <= v <= H-1.
inline Var bilinear_gather(const Var& feat, std::span<const PixelCoord> coords) {
  detail::expect_rank(feat, 3, "bilinear_gather");
  const auto c = feat.dim(0), h = feat.dim(1), w = feat.dim(2);
  struct Tap {
    std::array<std::size_t, 4> idx;
    std::array<real, 4> wt;
  };
  std::vector<Tap> taps(coords.size());
  for (std::size_t n = 0; n < coords.size(); ++n) {
    const double u = coords[n].u, v = coords[n].v;
    require(u >= 0 && v >= 0 && u <= static_cast<double>(w - 1) && v <= static_cast<double>(h - 1),
            "bilinear_gather: coordinate outside [0, W-1] x [0, H-1]");
    const auto u0 = static_cast<std::size_t>(std::floor(u)), v0 = static_cast<std::size_t>(std::floor(v));
    const std::size_t u1 = std::min(u0 + 1, w - 1), v1 = std::min(v0 + 1, h - 1);
    const real du = static_cast<real>(u - static_cast<double>(u0)), dv = static_cast<real>(v - static_cast<double>(v0));
    taps[n].idx = {v0 * w + u0, v0 * w + u1, v1 * w + u0, v1 * w + u1};
    taps[n].wt = {(1 - du) * (1 - dv), du * (1 - dv), (1 - du) * dv, du * dv};
  }
  const std::size_t plane = h * w;
  std::vector<real> out(coords.size() * c, real(0));
  const auto fv = feat.value();
  for (std::size_t n = 0; n < taps.size(); ++n)
    for (std::size_t ch = 0; ch < c; ++ch) {
      real acc = 0;
      for (int t = 0; t < 4; ++t) acc += taps[n].wt[t] * fv[ch * plane + taps[n].idx[t]];
      out[n * c + ch] = acc;
    }
  return make_result({coords.size(), c}, std::move(out), {feat}, [taps = std::move(taps), c, plane](Node& s) {
    if (auto* gf = parent_grad(s, 0))
      for (std::size_t n = 0; n < taps.size(); ++n)
        for (std::size_t ch = 0; ch < c; ++ch) {
          const real g = s.grad[n * c + ch];
          for (int t = 0; t < 4; ++t) (*gf)[ch * plane + taps[n].idx[t]] += taps[n].wt[t] * g;
        }
  });
}

/// Single-position convenience wrapper: returns a 1 x C row.
inline Var bilinear_sample(const Var& feat, double u, double v) {
  const PixelCoord p{u, v};
  return bilinear_gather(feat, std::span<const PixelCoord>(&p, 1));
}

}  // namespace vfs3d::nn
