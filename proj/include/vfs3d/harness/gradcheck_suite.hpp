#pragma once

#include <functional>
#include <string>
#include <vector>

#include "vfs3d/backbones/image_encoder.hpp"
#include "vfs3d/backbones/lidar_encoder.hpp"
#include "vfs3d/fusion/fusion.hpp"
#include "vfs3d/nn/gradcheck.hpp"
#include "vfs3d/nn/losses.hpp"

namespace vfs3d::harness {

inline constexpr double kOpTolerance = 1e-4;
inline constexpr double kCompositeTolerance = 1e-3;

struct GradCase {
  std::string name;
  bool composite = false;
  std::function<nn::GradCheckReport()> run;
};

namespace gc {

inline nn::Var param(nn::Shape shape, Rng& rng, double lo = -1, double hi = 1) {
  std::vector<nn::real> v(nn::numel(shape));
  for (auto& x : v) x = static_cast<nn::real>(rng.uniform(lo, hi));
  return nn::Var::parameter(std::move(shape), std::move(v));
}

/// Scalar probe <out, R> with a fixed random R, so every output entry matters.
inline nn::Var probe(const nn::Var& out, std::uint64_t seed = 99) {
  Rng rng(seed);
  std::vector<nn::real> r(out.size());
  for (auto& x : r) x = static_cast<nn::real>(rng.uniform(-1, 1));
  return nn::sum(nn::mul(out, nn::Var::constant(out.shape(), std::move(r))));
}

inline nn::GradCheckReport check(std::function<nn::Var()> f, std::vector<nn::Var> in, double tol,
                                 std::size_t max_coords = 0) {
  nn::GradCheckOptions opt;
  opt.max_coords_per_input = max_coords;
  return nn::finite_diff_check(f, std::move(in), tol, opt);
}

inline std::vector<nn::Var> all_params(const nn::ParamStore& s) {
  std::vector<nn::Var> out;
  for (const auto& p : s.params()) out.push_back(p.var);
  return out;
}

inline GradCase op(std::string name, std::function<nn::GradCheckReport(double)> body) {
  return {std::move(name), false, [body] { return body(kOpTolerance); }};
}

inline GradCase composite(std::string name, std::function<nn::GradCheckReport(double)> body) {
  return {std::move(name), true, [body] { return body(kCompositeTolerance); }};
}

}  // namespace gc

/// Finite-difference checks of every differentiable operation and the
/// composite blocks built from them.
inline std::vector<GradCase> gradcheck_suite() {
  using namespace nn;
  using gc::check;
  using gc::param;
  using gc::probe;
  std::vector<GradCase> cases;

  cases.push_back(gc::op("matmul", [](double tol) {
    Rng r(1);
    Var a = param({3, 4}, r), b = param({4, 2}, r);
    return check([=] { return probe(matmul(a, b)); }, {a, b}, tol);
  }));
  cases.push_back(gc::op("transpose", [](double tol) {
    Rng r(2);
    Var a = param({3, 4}, r);
    return check([=] { return probe(transpose(a)); }, {a}, tol);
  }));
  cases.push_back(gc::op("reshape", [](double tol) {
    Rng r(3);
    Var a = param({2, 6}, r);
    return check([=] { return probe(reshape(a, {3, 2, 2})); }, {a}, tol);
  }));
  const std::vector<std::pair<std::string, Var (*)(const Var&, const Var&)>> binaries{
      {"add", &add}, {"sub", &sub}, {"mul", &mul}, {"div", &div}};
  for (const auto& [name, fn] : binaries) {
    auto f = fn;
    cases.push_back(gc::op(name + " (broadcast)", [f](double tol) {
      Rng r(4);
      Var a = param({3, 4}, r, 0.5, 1.5), row = param({1, 4}, r, 0.5, 1.5), col = param({3, 1}, r, 0.5, 1.5),
          vec = param({4}, r, 0.5, 1.5);
      return check([=] { return add(add(probe(f(a, row)), probe(f(a, col), 7)), probe(f(a, vec), 8)); },
                   {a, row, col, vec}, tol);
    }));
  }
  cases.push_back(gc::op("outer broadcast", [](double tol) {
    Rng r(5);
    Var col = param({3, 1}, r), row = param({1, 4}, r);
    return check([=] { return probe(mul(col, row)); }, {col, row}, tol);
  }));
  cases.push_back(gc::op("scale / add_scalar", [](double tol) {
    Rng r(6);
    Var a = param({2, 3}, r);
    return check([=] { return probe(add_scalar(scale(a, 1.7), -0.3)); }, {a}, tol);
  }));
  cases.push_back(gc::op("relu", [](double tol) {
    Rng r(7);
    Var a = param({4, 5}, r);
    return check([=] { return probe(relu(a)); }, {a}, tol);
  }));
  cases.push_back(gc::op("gelu", [](double tol) {
    Rng r(8);
    Var a = param({4, 5}, r, -3, 3);
    return check([=] { return probe(gelu(a)); }, {a}, tol);
  }));
  cases.push_back(gc::op("exp / log", [](double tol) {
    Rng r(9);
    Var a = param({3, 3}, r), b = param({3, 3}, r, 0.2, 2.0);
    return check([=] { return add(probe(exp(a)), probe(log(b), 5)); }, {a, b}, tol);
  }));
  cases.push_back(gc::op("sum / mean", [](double tol) {
    Rng r(10);
    Var a = param({3, 4}, r);
    return check([=] { return add(sum(mul(a, a)), mean(exp(a))); }, {a}, tol);
  }));
  cases.push_back(gc::op("sum_axis", [](double tol) {
    Rng r(11);
    Var a = param({3, 4}, r);
    return check([=] { return add(probe(sum_axis(a, 0)), probe(sum_axis(a, 1), 3)); }, {a}, tol);
  }));
  cases.push_back(gc::op("concat", [](double tol) {
    Rng r(12);
    Var a = param({2, 3}, r), b = param({2, 2}, r), c = param({1, 3}, r);
    return check([=] { return add(probe(concat({a, b}, 1)), probe(concat({a, c}, 0), 4)); }, {a, b, c}, tol);
  }));
  cases.push_back(gc::op("slice", [](double tol) {
    Rng r(13);
    Var a = param({4, 5}, r);
    return check([=] { return add(probe(slice(a, 0, 1, 3)), probe(slice(a, 1, 2, 5), 4)); }, {a}, tol);
  }));
  cases.push_back(gc::op("gather_rows", [](double tol) {
    Rng r(14);
    Var a = param({4, 3}, r);
    return check([=] { return probe(gather_rows(a, {3, 0, 0, 2, 3})); }, {a}, tol);
  }));
  cases.push_back(gc::op("segment_mean", [](double tol) {
    Rng r(15);
    Var a = param({6, 3}, r);
    return check([=] { return probe(segment_mean(a, {0, 2, 1, 0, 2, 2}, 3)); }, {a}, tol);
  }));
  cases.push_back(gc::op("softmax_rows", [](double tol) {
    Rng r(16);
    Var a = param({3, 5}, r, -2, 2);
    const std::vector<std::uint8_t> mask{1, 0, 1, 1, 0};
    return check([=] { return add(probe(softmax_rows(a)), probe(softmax_rows(a, mask), 5)); }, {a}, tol);
  }));
  cases.push_back(gc::op("layer_norm", [](double tol) {
    Rng r(17);
    Var x = param({3, 6}, r, -2, 2), g = param({6}, r, 0.5, 1.5), b = param({6}, r);
    return check([=] { return probe(layer_norm(x, g, b)); }, {x, g, b}, tol);
  }));
  cases.push_back(gc::op("attention (masked, blocks)", [](double tol) {
    Rng r(18);
    Var q = param({5, 4}, r), k = param({6, 4}, r), v = param({6, 4}, r);
    const std::vector<std::uint8_t> mask{1, 1, 0, 1, 0, 1};
    return check(
        [=] {
          std::vector<AttentionBlock> blocks{{{0, 1, 2}, {0, 1, 2, 3}}, {{3, 4}, {3, 4, 5}}};
          return probe(attention(q, k, v, 2, blocks, mask));
        },
        {q, k, v}, tol);
  }));
  cases.push_back(gc::op("conv2d", [](double tol) {
    Rng r(19);
    Var x = param({2, 5, 6}, r), w = param({3, 2, 3, 3}, r), b = param({3}, r);
    return check([=] { return add(probe(conv2d(x, w, b, 1, 1)), probe(conv2d(x, w, b, 2, 1), 3)); }, {x, w, b}, tol);
  }));
  cases.push_back(gc::op("upsample_nearest2x", [](double tol) {
    Rng r(20);
    Var x = param({2, 3, 2}, r);
    return check([=] { return probe(upsample_nearest2x(x)); }, {x}, tol);
  }));
  cases.push_back(gc::op("bilinear_gather", [](double tol) {
    Rng r(21);
    Var f = param({3, 4, 5}, r);
    const std::vector<PixelCoord> at{{0.3, 0.7}, {4.0, 3.0}, {2.5, 1.25}, {0, 0}};
    return check([=] { return probe(bilinear_gather(f, at)); }, {f}, tol);
  }));
  cases.push_back(gc::op("cross_entropy", [](double tol) {
    Rng r(22);
    Var l = param({5, 4}, r, -2, 2);
    const std::vector<std::uint16_t> lab{0, 3, 255, 1, 1};
    return check([=] { return cross_entropy_loss(l, lab, 255); }, {l}, tol);
  }));
  cases.push_back(gc::op("lovasz_softmax", [](double tol) {
    Rng r(23);
    Var l = param({6, 3}, r, -2, 2);
    const std::vector<std::uint16_t> lab{0, 2, 2, 1, 0, 2};
    return check([=] { return lovasz_softmax_loss(softmax_rows(l), lab); }, {l}, tol);
  }));

  // Composites: small widths, every parameter plus the inputs, subsampled.
  cases.push_back(gc::composite("gffm", [](double tol) {
    fusion::FusionConfig fc{3, 4, 3, 8, 2, 8, true, 1e-6};
    ParamStore s(31);
    fusion::Gffm g(s, "gffm", fc);
    Rng r(31);
    Var l = param({5, 4}, r), c = param({5, 3}, r);
    const std::vector<std::uint8_t> m{1, 0, 1, 1, 0};
    auto in = gc::all_params(s);
    in.push_back(l);
    in.push_back(c);
    return check([=] { return probe(g(l, c, m)); }, in, tol, 16);
  }));
  cases.push_back(gc::composite("sfam", [](double tol) {
    fusion::FusionConfig fc{3, 4, 3, 8, 2, 8, true, 1e-6};
    ParamStore s(32);
    fusion::Sfam a(s, "sfam", 4, fc);
    Rng r(32);
    Var x = param({5, 4}, r), logits = param({5, 3}, r, -2, 2);
    const std::vector<std::uint8_t> m{1, 0, 1, 1, 0};
    auto in = gc::all_params(s);
    in.push_back(x);
    in.push_back(logits);
    return check([=] { return probe(a(x, softmax_rows(logits), m).embeddings); }, in, tol, 16);
  }));
  cases.push_back(gc::composite("sffm", [](double tol) {
    fusion::FusionConfig fc{3, 4, 3, 8, 2, 16, true, 1e-6};
    ParamStore s(33);
    fusion::Sffm f(s, "sffm", fc);
    Rng r(33);
    Var geo = param({4, 8}, r), e1 = param({3, 8}, r), e2 = param({3, 8}, r);
    auto in = gc::all_params(s);
    in.push_back(geo);
    in.push_back(e1);
    in.push_back(e2);
    return check(
        [=] {
          std::vector<fusion::SemanticEmbeddings> sem{{e1, e1, {1, 1, 0}}, {e2, e2, {0, 1, 1}}};
          return probe(f(geo, sem));
        },
        in, tol, 16);
  }));
  cases.push_back(gc::composite("image neck", [](double tol) {
    backbones::ImageEncoderConfig ec{3, {4, 5, 6, 7, 8}, 1};
    backbones::ImageNeckConfig nc{{4, 4, 4, 4}};
    ParamStore s(34);
    backbones::ImageEncoder enc(s, "image.encoder", ec);
    backbones::ImageNeck neck(s, "image.neck", ec, nc);
    Rng r(34);
    Var img = param({3, 32, 32}, r, 0, 1);
    auto in = gc::all_params(s);
    in.push_back(img);
    return check([=] { return probe(neck(enc(img))); }, in, tol, 6);
  }));
  cases.push_back(gc::composite("lidar encoder stage", [](double tol) {
    backbones::LidarEncoderConfig lc;
    lc.in_channels = 5;
    lc.enc_channels = {8, 8};
    lc.dec_channels = {8};
    lc.group_size = 4;
    lc.heads = 2;
    lc.grid_origin = {-2, -2, -2};
    ParamStore s(35);
    backbones::LidarEncoder enc(s, "lidar.encoder", lc);
    Rng r(35);
    backbones::Coords coords;
    for (int i = 0; i < 10; ++i) coords.push_back({r.uniform(-1, 1), r.uniform(-1, 1), r.uniform(-1, 1)});
    Var x = param({10, 5}, r);
    auto in = gc::all_params(s);
    in.push_back(x);
    return check([=] { return probe(enc(x, coords).features.back()); }, in, tol, 12);
  }));
  return cases;
}

}  // namespace vfs3d::harness
