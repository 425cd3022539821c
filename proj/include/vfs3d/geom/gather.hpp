#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "vfs3d/geom/camera.hpp"
#include "vfs3d/nn/image_ops.hpp"

namespace vfs3d::geom {

/// Feature map (C x h x w) computed from an image of `source_width` x
/// `source_height` pixels whose top-left corner matches the camera image.
struct CameraFeatureMap {
  nn::Var features;
  int source_width = 0;
  int source_height = 0;
};

struct GatheredFeatures {
  nn::Var features;                 // N x C
  std::vector<std::uint8_t> mask;   // 1 where some camera saw the point
  std::vector<int> camera;          // index into the rig, -1 if none
};

/// Pixel position in the camera image -> position on a feature level,
/// corners mapped onto corners.
inline nn::PixelCoord to_feature_coords(double u, double v, const CameraFeatureMap& fm) {
  const double fw = static_cast<double>(fm.features.dim(2)), fh = static_cast<double>(fm.features.dim(1));
  const double sw = fm.source_width, sh = fm.source_height;
  const double su = sw > 1 ? (fw - 1) / (sw - 1) : 0.0;
  const double sv = sh > 1 ? (fh - 1) / (sh - 1) : 0.0;
  return {std::clamp(std::min(u, sw - 1) * su, 0.0, fw - 1), std::clamp(std::min(v, sh - 1) * sv, 0.0, fh - 1)};
}

/// Samples per-point camera features. Cameras are tried in rig order and the
/// first valid projection wins; points seen by no camera get zeros, mask 0.
inline GatheredFeatures gather_point_camera_features(std::span<const std::array<double, 3>> points,
                                                     const MultiCamRig& rig,
                                                     std::span<const CameraFeatureMap> feats) {
  if (feats.size() != rig.cameras.size()) throw ShapeError("gather: one feature map per camera is required");
  std::size_t channels = 0;
  for (std::size_t c = 0; c < feats.size(); ++c) {
    nn::detail::expect_rank(feats[c].features, 3, "gather_point_camera_features");
    if (c == 0) channels = feats[c].features.dim(0);
    if (feats[c].features.dim(0) != channels) throw ShapeError("gather: camera feature maps differ in channels");
  }
  const std::size_t n = points.size();
  GatheredFeatures out;
  out.mask.assign(n, 0);
  out.camera.assign(n, -1);
  std::vector<std::vector<nn::PixelCoord>> coords(rig.cameras.size());
  std::vector<std::vector<std::size_t>> members(rig.cameras.size());
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d p(points[i][0], points[i][1], points[i][2]);
    for (std::size_t c = 0; c < rig.cameras.size(); ++c) {
      const auto pr = project_point(p, rig.cameras[c]);
      if (!pr.valid) continue;
      coords[c].push_back(to_feature_coords(pr.u, pr.v, feats[c]));
      members[c].push_back(i);
      out.mask[i] = 1;
      out.camera[i] = static_cast<int>(c);
      break;
    }
  }
  // Stack [camera 0 rows; camera 1 rows; ...; one zero row] and pick per point.
  std::vector<nn::Var> stack;
  std::vector<std::size_t> pick(n, 0);
  std::size_t offset = 0;
  for (std::size_t c = 0; c < rig.cameras.size(); ++c) {
    if (coords[c].empty()) continue;
    stack.push_back(nn::bilinear_gather(feats[c].features, coords[c]));
    for (std::size_t r = 0; r < members[c].size(); ++r) pick[members[c][r]] = offset + r;
    offset += members[c].size();
  }
  stack.push_back(nn::Var::zeros({1, channels}));
  for (std::size_t i = 0; i < n; ++i)
    if (!out.mask[i]) pick[i] = offset;
  out.features = nn::gather_rows(stack.size() == 1 ? stack[0] : nn::concat(stack, 0), std::move(pick));
  return out;
}

inline GatheredFeatures gather_point_camera_features(const LidarPointCloud& cloud, const MultiCamRig& rig,
                                                     std::span<const CameraFeatureMap> feats) {
  const auto coords = cloud.coords();
  return gather_point_camera_features(std::span<const std::array<double, 3>>(coords), rig, feats);
}

}  // namespace vfs3d::geom
