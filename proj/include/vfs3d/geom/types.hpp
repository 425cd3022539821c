#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vfs3d/core/error.hpp"

namespace vfs3d::geom {

/// One LiDAR return: position in meters plus the two per-point scalars.
struct LidarPoint {
  double x = 0, y = 0, z = 0;
  double intensity = 0;
  double elongation = 0;

  std::array<double, 3> xyz() const { return {x, y, z}; }
  bool operator==(const LidarPoint&) const = default;
};

struct LidarPointCloud {
  std::vector<LidarPoint> points;
  std::optional<std::vector<std::uint16_t>> labels;
  std::string frame_id;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_labels() const { return labels.has_value(); }

  std::vector<std::array<double, 3>> coords() const {
    std::vector<std::array<double, 3>> out;
    out.reserve(points.size());
    for (const auto& p : points) out.push_back(p.xyz());
    return out;
  }

  /// Checks finiteness, [0,1] scalar channels and label range.
  void validate(int num_classes) const {
    for (std::size_t i = 0; i < points.size(); ++i) {
      const auto& p = points[i];
      if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
        throw Error("point " + std::to_string(i) + " has a non-finite coordinate");
      if (p.intensity < 0 || p.intensity > 1 || p.elongation < 0 || p.elongation > 1)
        throw Error("point " + std::to_string(i) + " has intensity/elongation outside [0,1]");
    }
    if (labels) {
      if (labels->size() != points.size()) throw Error("label count does not match point count");
      for (auto l : *labels)
        if (static_cast<int>(l) >= num_classes)
          throw Error("label " + std::to_string(l) + " outside [0, " + std::to_string(num_classes) + ")");
    }
  }

  bool operator==(const LidarPointCloud&) const = default;
};

/// Axis-aligned crop volume, half-open on the max side.
struct RangeBox {
  std::array<double, 3> min{-75.2, -75.2, -4.0};
  std::array<double, 3> max{75.2, 75.2, 2.0};

  void validate() const {
    for (int k = 0; k < 3; ++k)
      if (!(min[k] < max[k])) throw ConfigError("range box requires min < max on every axis");
  }

  bool contains(const std::array<double, 3>& p) const {
    for (int k = 0; k < 3; ++k)
      if (!(p[k] >= min[k] && p[k] < max[k])) return false;
    return true;
  }

  bool operator==(const RangeBox&) const = default;
};

/// H x W x 3 image, row-major HWC, values nominally in [0,1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w, double fill = 0.0)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3, fill) {}

  double& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  double at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }

  bool operator==(const Image&) const = default;
};

/// Per-pixel class ids; `kIgnoreLabel` marks pixels without a surface.
struct LabelImage {
  static constexpr std::uint16_t kIgnoreLabel = 255;

  int height = 0;
  int width = 0;
  std::vector<std::uint16_t> data;

  LabelImage() = default;
  LabelImage(int h, int w, std::uint16_t fill = kIgnoreLabel)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  std::uint16_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint16_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }

  bool operator==(const LabelImage&) const = default;
};

struct ImageNormConfig {
  std::array<double, 3> mean{0.40789654, 0.44719302, 0.47026115};
  std::array<double, 3> std{0.28863828, 0.27408164, 0.27809835};

  void validate() const {
    for (double s : std)
      if (!(s > 0)) throw ConfigError("image std components must be positive");
  }
  bool operator==(const ImageNormConfig&) const = default;
};

/// Returns the points with min <= coord < max on all axes, order preserved.
inline LidarPointCloud crop_to_range(const LidarPointCloud& cloud, const RangeBox& box) {
  LidarPointCloud out;
  out.frame_id = cloud.frame_id;
  if (cloud.labels) out.labels.emplace();
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (!box.contains(cloud.points[i].xyz())) continue;
    out.points.push_back(cloud.points[i]);
    if (cloud.labels) out.labels->push_back((*cloud.labels)[i]);
  }
  return out;
}

inline Image normalize_image(const Image& img, const ImageNormConfig& cfg) {
  cfg.validate();
  Image out = img;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const int c = static_cast<int>(i % 3);
    out.data[i] = (img.data[i] - cfg.mean[c]) / cfg.std[c];
  }
  return out;
}

}  // namespace vfs3d::geom
