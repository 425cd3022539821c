#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numbers>

#include "vfs3d/core/rng.hpp"
#include "vfs3d/geom/types.hpp"

namespace vfs3d::aug {

struct ImageAugConfig {
  std::array<double, 2> scale_range{1.0, 1.5};
  std::array<double, 2> rot_range_deg{-1.0, 1.0};
  int crop_h = 0;  // 0 keeps the input height
  int crop_w = 0;
  double brightness = 0.3;
  double contrast = 0.3;
  double saturation = 0.3;
  double hue = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(scale_range[0] > 0 && scale_range[0] <= scale_range[1]))
      throw ConfigError("image scale range must satisfy 0 < min <= max");
    if (rot_range_deg[0] > rot_range_deg[1]) throw ConfigError("image rotation range must be ordered");
    if (crop_h < 0 || crop_w < 0) throw ConfigError("crop size must be non-negative");
    for (double j : {brightness, contrast, saturation, hue})
      if (!(j >= 0 && j <= 1)) throw ConfigError("color jitter magnitudes must lie in [0,1]");
  }
  bool operator==(const ImageAugConfig&) const = default;
};

/// Everything one image augmentation draw decided.
struct ImageAugParams {
  double scale = 1;
  double rot_deg = 0;
  int crop_y = 0, crop_x = 0;
  int crop_h = 0, crop_w = 0;
  double brightness = 1, contrast = 1, saturation = 1;
  double hue_shift = 0;  // fraction of the hue circle

  bool operator==(const ImageAugParams&) const = default;
};

/// Hook for the compression step; the default does nothing.
using JpegHook = std::function<void(geom::Image&)>;

namespace detail {

inline int scaled_dim(int d, double s) { return static_cast<int>(std::floor(d * s + 1e-9)); }

inline std::array<double, 3> rgb_to_hsv(double r, double g, double b) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b}), d = mx - mn;
  double h = 0;
  if (d > 0) {
    if (mx == r) h = std::fmod((g - b) / d, 6.0);
    else if (mx == g) h = (b - r) / d + 2.0;
    else h = (r - g) / d + 4.0;
    h /= 6.0;
    if (h < 0) h += 1.0;
  }
  return {h, mx > 0 ? d / mx : 0.0, mx};
}

inline std::array<double, 3> hsv_to_rgb(double h, double s, double v) {
  h = (h - std::floor(h)) * 6.0;
  const int sector = std::min(5, static_cast<int>(h));
  const double f = h - sector, p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

inline double luma(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

/// Output pixel (x, y) of the crop -> source pixel in the input image.
inline std::array<double, 2> source_position(int x, int y, const ImageAugParams& p, int in_h, int in_w) {
  const int sh = scaled_dim(in_h, p.scale), sw = scaled_dim(in_w, p.scale);
  const double px = x + p.crop_x + 0.5 - sw / 2.0, py = y + p.crop_y + 0.5 - sh / 2.0;
  const double a = -p.rot_deg * std::numbers::pi / 180.0;
  const double rx = std::cos(a) * px - std::sin(a) * py, ry = std::sin(a) * px + std::cos(a) * py;
  return {rx / p.scale + in_w / 2.0 - 0.5, ry / p.scale + in_h / 2.0 - 0.5};
}

inline double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace detail

inline ImageAugParams sample_image_aug(int in_h, int in_w, const ImageAugConfig& cfg, Rng& rng) {
  cfg.validate();
  ImageAugParams p;
  p.scale = rng.uniform(cfg.scale_range[0], cfg.scale_range[1]);
  p.rot_deg = rng.uniform(cfg.rot_range_deg[0], cfg.rot_range_deg[1]);
  p.crop_h = cfg.crop_h ? cfg.crop_h : in_h;
  p.crop_w = cfg.crop_w ? cfg.crop_w : in_w;
  const int sh = detail::scaled_dim(in_h, p.scale), sw = detail::scaled_dim(in_w, p.scale);
  if (p.crop_h > sh || p.crop_w > sw)
    throw ConfigError("crop " + std::to_string(p.crop_h) + "x" + std::to_string(p.crop_w) +
                      " exceeds the scaled image " + std::to_string(sh) + "x" + std::to_string(sw));
  p.crop_y = static_cast<int>(rng.below(static_cast<std::uint64_t>(sh - p.crop_h) + 1));
  p.crop_x = static_cast<int>(rng.below(static_cast<std::uint64_t>(sw - p.crop_w) + 1));
  p.brightness = rng.uniform(1 - cfg.brightness, 1 + cfg.brightness);
  p.contrast = rng.uniform(1 - cfg.contrast, 1 + cfg.contrast);
  p.saturation = rng.uniform(1 - cfg.saturation, 1 + cfg.saturation);
  p.hue_shift = rng.uniform(-cfg.hue, cfg.hue);
  return p;
}

/// Scale, rotate and crop (bilinear, zeros outside), then brightness,
/// contrast, saturation and hue jitter, each followed by clamping to [0,1].
inline geom::Image apply_image_aug(const geom::Image& img, const ImageAugParams& p, const JpegHook& jpeg = {}) {
  const int sh = detail::scaled_dim(img.height, p.scale), sw = detail::scaled_dim(img.width, p.scale);
  if (p.crop_h <= 0 || p.crop_w <= 0 || p.crop_y < 0 || p.crop_x < 0 || p.crop_y + p.crop_h > sh ||
      p.crop_x + p.crop_w > sw)
    throw ConfigError("crop window does not fit inside the scaled image");
  geom::Image out(p.crop_h, p.crop_w, 0.0);
  for (int y = 0; y < p.crop_h; ++y)
    for (int x = 0; x < p.crop_w; ++x) {
      const auto [su, sv] = detail::source_position(x, y, p, img.height, img.width);
      const double fu = std::floor(su), fv = std::floor(sv);
      const double du = su - fu, dv = sv - fv;
      for (int c = 0; c < 3; ++c) {
        double acc = 0;
        for (int ty = 0; ty < 2; ++ty)
          for (int tx = 0; tx < 2; ++tx) {
            const double w = (tx ? du : 1 - du) * (ty ? dv : 1 - dv);
            if (w == 0) continue;
            const int ix = static_cast<int>(fu) + tx, iy = static_cast<int>(fv) + ty;
            if (ix < 0 || iy < 0 || ix >= img.width || iy >= img.height) continue;
            acc += w * img.at(iy, ix, c);
          }
        out.at(y, x, c) = acc;
      }
    }
  const std::size_t pixels = static_cast<std::size_t>(out.height) * out.width;
  if (p.brightness != 1)
    for (auto& v : out.data) v = detail::clamp01(v * p.brightness);
  if (p.contrast != 1) {
    double m = 0;
    for (std::size_t i = 0; i < pixels; ++i)
      m += detail::luma(out.data[3 * i], out.data[3 * i + 1], out.data[3 * i + 2]);
    m /= static_cast<double>(pixels);
    for (auto& v : out.data) v = detail::clamp01((v - m) * p.contrast + m);
  }
  if (p.saturation != 1)
    for (std::size_t i = 0; i < pixels; ++i) {
      double* px = &out.data[3 * i];
      const double g = detail::luma(px[0], px[1], px[2]);
      for (int c = 0; c < 3; ++c) px[c] = detail::clamp01((px[c] - g) * p.saturation + g);
    }
  if (p.hue_shift != 0)
    for (std::size_t i = 0; i < pixels; ++i) {
      double* px = &out.data[3 * i];
      const auto hsv = detail::rgb_to_hsv(px[0], px[1], px[2]);
      const auto rgb = detail::hsv_to_rgb(hsv[0] + p.hue_shift, hsv[1], hsv[2]);
      for (int c = 0; c < 3; ++c) px[c] = detail::clamp01(rgb[c]);
    }
  if (jpeg) jpeg(out);
  return out;
}

/// Same geometric warp for a label image, nearest neighbour; pixels that fall
/// outside the source become the ignore label.
inline geom::LabelImage warp_labels(const geom::LabelImage& labels, const ImageAugParams& p) {
  geom::LabelImage out(p.crop_h, p.crop_w);
  for (int y = 0; y < p.crop_h; ++y)
    for (int x = 0; x < p.crop_w; ++x) {
      const auto [su, sv] = detail::source_position(x, y, p, labels.height, labels.width);
      const int ix = static_cast<int>(std::lround(su)), iy = static_cast<int>(std::lround(sv));
      if (ix >= 0 && iy >= 0 && ix < labels.width && iy < labels.height) out.at(y, x) = labels.at(iy, ix);
    }
  return out;
}

inline std::pair<geom::Image, ImageAugParams> augment_image(const geom::Image& img, const ImageAugConfig& cfg, Rng rng,
                                                            const JpegHook& jpeg = {}) {
  const ImageAugParams p = sample_image_aug(img.height, img.width, cfg, rng);
  return {apply_image_aug(img, p, jpeg), p};
}

}  // namespace vfs3d::aug
