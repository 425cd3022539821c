#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "vfs3d/core/rng.hpp"
#include "vfs3d/geom/types.hpp"
#include "vfs3d/nn/tensor.hpp"

namespace vfs3d::aug {

enum class Flip { none, x, y, xy };

inline std::string_view to_string(Flip f) {
  switch (f) {
    case Flip::none: return "none";
    case Flip::x: return "x";
    case Flip::y: return "y";
    case Flip::xy: return "xy";
  }
  return "?";
}

/// Coordinate-only test-time transform: flip, then rotate about z, then
/// scale, then translate.
struct TtaTransform {
  double scale = 1;
  Flip flip = Flip::none;
  double rot = 0;
  std::array<double, 3> trans{0, 0, 0};

  bool is_identity() const { return scale == 1 && flip == Flip::none && rot == 0 && trans == std::array<double, 3>{}; }
  bool operator==(const TtaTransform&) const = default;
};

inline std::array<double, 3> apply_tta(const std::array<double, 3>& p, const TtaTransform& t) {
  double x = p[0], y = p[1];
  if (t.flip == Flip::x || t.flip == Flip::xy) x = -x;
  if (t.flip == Flip::y || t.flip == Flip::xy) y = -y;
  if (t.is_identity()) return p;
  const double c = std::cos(t.rot), s = std::sin(t.rot);
  return {t.scale * (c * x - s * y) + t.trans[0], t.scale * (s * x + c * y) + t.trans[1],
          t.scale * p[2] + t.trans[2]};
}

struct TtaConfig {
  /// Explicit variants; when empty, `count` variants are drawn.
  std::vector<TtaTransform> variants;
  std::size_t count = 1;
  bool include_identity = true;
  std::array<double, 2> scale_range{0.95, 1.05};
  std::array<double, 2> rot_range{-std::numbers::pi / 4, std::numbers::pi / 4};
  double trans_sigma = 0.5;

  void validate() const {
    if (variants.empty() && count == 0) throw ConfigError("TTA needs at least one variant");
    if (!(scale_range[0] > 0 && scale_range[0] <= scale_range[1])) throw ConfigError("bad TTA scale range");
    if (rot_range[0] > rot_range[1]) throw ConfigError("bad TTA rotation range");
    if (!(trans_sigma >= 0)) throw ConfigError("TTA translation sigma must be >= 0");
  }
};

/// The transform list a config expands to. Drawn variants cycle through the
/// four flips; the identity comes first when requested.
inline std::vector<TtaTransform> expand_tta(const TtaConfig& cfg, Rng rng) {
  cfg.validate();
  if (!cfg.variants.empty()) return cfg.variants;
  std::vector<TtaTransform> out;
  if (cfg.include_identity) out.push_back({});
  static constexpr std::array<Flip, 4> kFlips{Flip::x, Flip::y, Flip::xy, Flip::none};
  for (std::size_t k = 0; out.size() < cfg.count; ++k) {
    TtaTransform t;
    t.flip = kFlips[k % kFlips.size()];
    t.scale = rng.uniform(cfg.scale_range[0], cfg.scale_range[1]);
    t.rot = rng.uniform(cfg.rot_range[0], cfg.rot_range[1]);
    for (auto& d : t.trans) d = cfg.trans_sigma > 0 ? rng.normal(0.0, cfg.trans_sigma) : 0.0;
    out.push_back(t);
  }
  return out;
}

struct TtaVariant {
  geom::LidarPointCloud cloud;
  TtaTransform transform;
};

/// Transformed copies with point order and count unchanged.
inline std::vector<TtaVariant> make_tta_variants(const geom::LidarPointCloud& cloud, const TtaConfig& cfg, Rng rng) {
  std::vector<TtaVariant> out;
  for (const auto& t : expand_tta(cfg, rng)) {
    TtaVariant v{cloud, t};
    for (auto& p : v.cloud.points) {
      const auto q = apply_tta(p.xyz(), t);
      p.x = q[0];
      p.y = q[1];
      p.z = q[2];
    }
    out.push_back(std::move(v));
  }
  return out;
}

/// Mean over variants of N x C logit arrays.
inline std::vector<nn::real> aggregate_tta_logits(std::span<const std::vector<nn::real>> logits) {
  if (logits.empty()) throw ShapeError("aggregate_tta_logits: no variants");
  const std::size_t n = logits[0].size();
  for (const auto& l : logits)
    if (l.size() != n) throw ShapeError("aggregate_tta_logits: variants differ in shape");
  if (logits.size() == 1) return logits[0];
  std::vector<nn::real> out(n, nn::real(0));
  for (const auto& l : logits)
    for (std::size_t i = 0; i < n; ++i) out[i] += l[i];
  const nn::real inv = nn::real(1) / static_cast<nn::real>(logits.size());
  for (auto& v : out) v *= inv;
  return out;
}

/// Overload taking N x C arrays; checks the shapes agree.
inline nn::Var aggregate_tta_logits(std::span<const nn::Var> logits) {
  if (logits.empty()) throw ShapeError("aggregate_tta_logits: no variants");
  std::vector<std::vector<nn::real>> flat;
  for (const auto& l : logits) {
    if (l.shape() != logits[0].shape())
      throw ShapeError("aggregate_tta_logits: shape " + nn::shape_str(l.shape()) + " vs " +
                       nn::shape_str(logits[0].shape()));
    flat.emplace_back(l.value().begin(), l.value().end());
  }
  return nn::Var::constant(logits[0].shape(), aggregate_tta_logits(std::span<const std::vector<nn::real>>(flat)));
}

}  // namespace vfs3d::aug
