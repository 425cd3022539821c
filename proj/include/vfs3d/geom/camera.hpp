#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "vfs3d/core/error.hpp"
#include "vfs3d/geom/types.hpp"

namespace vfs3d::geom {

enum class CameraName { front, front_left, front_right, side_left, side_right };

inline constexpr std::array<CameraName, 5> kAllCameras{CameraName::front, CameraName::front_left,
                                                       CameraName::front_right, CameraName::side_left,
                                                       CameraName::side_right};

inline std::string_view to_string(CameraName n) {
  switch (n) {
    case CameraName::front: return "front";
    case CameraName::front_left: return "front-left";
    case CameraName::front_right: return "front-right";
    case CameraName::side_left: return "side-left";
    case CameraName::side_right: return "side-right";
  }
  return "?";
}

inline CameraName parse_camera_name(std::string_view s) {
  for (auto n : kAllCameras)
    if (to_string(n) == s) return n;
  throw ConfigError("unknown camera name '" + std::string(s) + "'");
}

/// Minimum depth (meters) for a projection to count as valid.
inline constexpr double kMinValidDepth = 0.1;

/// Pinhole camera. `rotation`/`translation` map LiDAR frame to camera frame
/// (camera looks along +z, image x right, image y down).
struct CameraModel {
  CameraName name = CameraName::front;
  double fx = 1, fy = 1, cx = 0, cy = 0;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  int width = 960;
  int height = 640;

  void validate() const {
    if (!(fx > 0 && fy > 0)) throw ConfigError("camera focal lengths must be positive");
    if (width <= 0 || height <= 0) throw ConfigError("camera image size must be positive");
    const Eigen::Matrix3d err = rotation.transpose() * rotation - Eigen::Matrix3d::Identity();
    if (err.cwiseAbs().maxCoeff() > 1e-9) throw ConfigError("camera rotation is not orthonormal");
  }

  bool operator==(const CameraModel& o) const {
    return name == o.name && fx == o.fx && fy == o.fy && cx == o.cx && cy == o.cy &&
           rotation == o.rotation && translation == o.translation && width == o.width &&
           height == o.height;
  }
};

struct Projection {
  double u = 0, v = 0, depth = 0;
  bool valid = false;
};

inline Projection project_point(const Eigen::Vector3d& p, const CameraModel& cam) {
  const Eigen::Vector3d q = cam.rotation * p + cam.translation;
  Projection out;
  out.depth = q.z();
  if (q.z() == 0.0) return out;
  out.u = cam.fx * q.x() / q.z() + cam.cx;
  out.v = cam.fy * q.y() / q.z() + cam.cy;
  out.valid = out.depth > kMinValidDepth && out.u >= 0 && out.u < cam.width && out.v >= 0 &&
              out.v < cam.height;
  return out;
}

/// Inverse of project_point for a known depth: pixel + depth -> LiDAR-frame point.
inline Eigen::Vector3d back_project(double u, double v, double depth, const CameraModel& cam) {
  const Eigen::Vector3d q((u - cam.cx) / cam.fx * depth, (v - cam.cy) / cam.fy * depth, depth);
  return cam.rotation.transpose() * (q - cam.translation);
}

/// Camera mounted at `position` (LiDAR frame) looking horizontally at `yaw`
/// radians (0 = +x, counter-clockwise about +z), pitched down by `pitch`.
inline CameraModel make_camera(CameraName name, double yaw, double pitch, const Eigen::Vector3d& position,
                               int width, int height, double fx, double fy) {
  // Camera axes expressed in the LiDAR frame.
  const Eigen::Vector3d forward(std::cos(yaw) * std::cos(pitch), std::sin(yaw) * std::cos(pitch),
                                -std::sin(pitch));
  const Eigen::Vector3d left(-std::sin(yaw), std::cos(yaw), 0.0);
  const Eigen::Vector3d right = -left;
  const Eigen::Vector3d down = forward.cross(right);
  CameraModel cam;
  cam.name = name;
  cam.rotation.row(0) = right.transpose();
  cam.rotation.row(1) = down.transpose();
  cam.rotation.row(2) = forward.transpose();
  cam.translation = -cam.rotation * position;
  cam.width = width;
  cam.height = height;
  cam.fx = fx;
  cam.fy = fy;
  cam.cx = width / 2.0;
  cam.cy = height / 2.0;
  return cam;
}

struct MultiCamRig {
  std::vector<CameraModel> cameras;
  std::vector<Image> images;

  void validate() const {
    std::set<CameraName> seen;
    for (const auto& c : cameras) {
      c.validate();
      if (!seen.insert(c.name).second)
        throw ConfigError("duplicate camera '" + std::string(to_string(c.name)) + "' in rig");
    }
    if (!images.empty()) {
      if (images.size() != cameras.size()) throw ConfigError("rig image count does not match camera count");
      for (std::size_t i = 0; i < images.size(); ++i)
        if (images[i].width != cameras[i].width || images[i].height != cameras[i].height)
          throw ConfigError("rig image size does not match camera '" +
                            std::string(to_string(cameras[i].name)) + "'");
    }
  }

  bool operator==(const MultiCamRig&) const = default;
};

}  // namespace vfs3d::geom
