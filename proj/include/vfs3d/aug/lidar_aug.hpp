#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <utility>

#include "vfs3d/core/rng.hpp"
#include "vfs3d/geom/types.hpp"

namespace vfs3d::aug {

struct LidarAugConfig {
  std::array<double, 2> rot_range{-std::numbers::pi / 4, std::numbers::pi / 4};
  double trans_sigma = 0.5;
  std::array<double, 2> scale_range{0.95, 1.05};
  /// Chance of mirroring x, and independently y, before the rotation. Off by
  /// default; turn it on when test-time variants flip.
  double flip_prob = 0;
  std::uint64_t seed = 0;

  void validate() const {
    if (rot_range[0] > rot_range[1] || rot_range[0] < -std::numbers::pi || rot_range[1] > std::numbers::pi)
      throw ConfigError("lidar rotation range must be an ordered pair within [-pi, pi]");
    if (!(trans_sigma >= 0)) throw ConfigError("lidar translation sigma must be >= 0");
    if (!(scale_range[0] > 0 && scale_range[0] <= scale_range[1]))
      throw ConfigError("lidar scale range must satisfy 0 < min <= max");
    if (!(flip_prob >= 0 && flip_prob <= 1)) throw ConfigError("lidar flip probability must be in [0, 1]");
  }
  bool operator==(const LidarAugConfig&) const = default;
};

/// p' = scale * (Rz(theta) F p + translation), F mirroring the flipped axes.
struct LidarTransform {
  double theta = 0;
  std::array<double, 3> translation{0, 0, 0};
  double scale = 1;
  bool flip_x = false, flip_y = false;

  bool operator==(const LidarTransform&) const = default;
};

inline std::array<double, 3> apply_lidar_transform(const std::array<double, 3>& p, const LidarTransform& t) {
  const double x = t.flip_x ? -p[0] : p[0], y = t.flip_y ? -p[1] : p[1];
  const double c = std::cos(t.theta), s = std::sin(t.theta);
  return {t.scale * (c * x - s * y + t.translation[0]), t.scale * (s * x + c * y + t.translation[1]),
          t.scale * (p[2] + t.translation[2])};
}

inline geom::LidarPointCloud apply_lidar_transform(geom::LidarPointCloud cloud, const LidarTransform& t) {
  for (auto& p : cloud.points) {
    const auto q = apply_lidar_transform(p.xyz(), t);
    p.x = q[0];
    p.y = q[1];
    p.z = q[2];
  }
  return cloud;
}

inline LidarTransform sample_lidar_transform(const LidarAugConfig& cfg, Rng& rng) {
  LidarTransform t;
  t.theta = rng.uniform(cfg.rot_range[0], cfg.rot_range[1]);
  for (auto& d : t.translation) d = cfg.trans_sigma > 0 ? rng.normal(0.0, cfg.trans_sigma) : 0.0;
  t.scale = rng.uniform(cfg.scale_range[0], cfg.scale_range[1]);
  // No draws when disabled, so flip-free runs keep their random stream.
  if (cfg.flip_prob > 0) {
    t.flip_x = rng.uniform(0, 1) < cfg.flip_prob;
    t.flip_y = rng.uniform(0, 1) < cfg.flip_prob;
  }
  return t;
}

/// Optional axis flips, rotation about z, Gaussian translation, then uniform scaling.
inline std::pair<geom::LidarPointCloud, LidarTransform> augment_lidar(const geom::LidarPointCloud& cloud,
                                                                      const LidarAugConfig& cfg, Rng rng) {
  cfg.validate();
  const LidarTransform t = sample_lidar_transform(cfg, rng);
  return {apply_lidar_transform(cloud, t), t};
}

}  // namespace vfs3d::aug
