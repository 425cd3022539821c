#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "vfs3d/core/rng.hpp"
#include "vfs3d/geom/camera.hpp"
#include "vfs3d/geom/types.hpp"

namespace vfs3d::harness {

// Class ids of the synthetic world.
inline constexpr std::uint16_t kGround = 0, kVehicle = 1, kPedestrian = 2, kPole = 3, kBuilding = 4, kVegetation = 5;
inline constexpr std::size_t kSceneClasses = 6;
inline constexpr std::array<std::string_view, 6> kSceneClassNames{"ground", "vehicle", "pedestrian", "pole", "building", "vegetation"};

inline constexpr std::array<std::array<double, 3>, kSceneClasses> kPalette{{
    {0.45, 0.40, 0.33},  // ground
    {0.15, 0.25, 0.85},  // vehicle
    {0.90, 0.15, 0.15},  // pedestrian
    {0.95, 0.85, 0.10},  // pole
    {0.62, 0.62, 0.64},  // building
    {0.15, 0.70, 0.20},  // vegetation
}};
inline constexpr std::array<double, 3> kSkyColor{0.55, 0.80, 1.00};

inline constexpr double kSensorHeight = 1.8;  // LiDAR origin above the ground plane
inline constexpr double kGroundRadius = 18.0;

struct SceneSpec {
  std::uint64_t seed = 0;
  std::size_t num_points = 512;
  std::size_t num_classes = kSceneClasses;
  std::vector<geom::CameraName> cameras{geom::CameraName::front, geom::CameraName::front_left};
  int width = 64;
  int height = 48;
  double focal = 48;
  /// Pedestrians and poles share shape and intensity; only color tells them apart.
  bool ambiguous_pair = true;
  double color_noise = 0.02;
  double render_step_deg = 0.4;

  void validate() const {
    if (num_points == 0) throw ConfigError("scene needs at least one point");
    if (num_classes < 2 || num_classes > kSceneClasses)
      throw ConfigError("synthetic scenes support 2.." + std::to_string(kSceneClasses) + " classes");
    if (cameras.empty()) throw ConfigError("scene needs at least one camera");
    if (width <= 0 || height <= 0 || !(focal > 0)) throw ConfigError("bad scene camera geometry");
  }
};

/// Ground disc, yawed box or upright cylinder.
struct Primitive {
  enum class Kind { plane, box, cylinder } kind = Kind::plane;
  std::uint16_t label = kGround;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();  // box centre; cylinder base centre
  double yaw = 0;
  Eigen::Vector3d half = Eigen::Vector3d::Zero();    // box half extents
  double radius = 0;
  double height = 0;

  double footprint_radius() const { return kind == Kind::box ? std::hypot(half.x(), half.y()) : radius; }
};

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();
  std::size_t primitive = 0;
};

namespace detail {

inline std::optional<Hit> intersect(const Primitive& p, const Eigen::Vector3d& o, const Eigen::Vector3d& d) {
  constexpr double kEps = 1e-9;
  switch (p.kind) {
    case Primitive::Kind::plane: {
      if (std::abs(d.z()) < kEps) return std::nullopt;
      const double t = (p.center.z() - o.z()) / d.z();
      if (t <= kEps) return std::nullopt;
      const Eigen::Vector3d x = o + t * d;
      if (std::hypot(x.x(), x.y()) > kGroundRadius) return std::nullopt;
      return Hit{t, Eigen::Vector3d::UnitZ(), 0};
    }
    case Primitive::Kind::box: {
      const double c = std::cos(-p.yaw), s = std::sin(-p.yaw);
      const Eigen::Vector3d rel = o - p.center;
      const Eigen::Vector3d lo(c * rel.x() - s * rel.y(), s * rel.x() + c * rel.y(), rel.z());
      const Eigen::Vector3d ld(c * d.x() - s * d.y(), s * d.x() + c * d.y(), d.z());
      double t0 = -std::numeric_limits<double>::infinity(), t1 = std::numeric_limits<double>::infinity();
      int axis = 0;
      double sign = 1;
      for (int a = 0; a < 3; ++a) {
        if (std::abs(ld[a]) < kEps) {
          if (std::abs(lo[a]) > p.half[a]) return std::nullopt;
          continue;
        }
        double ta = (-p.half[a] - lo[a]) / ld[a], tb = (p.half[a] - lo[a]) / ld[a];
        double sa = -1;
        if (ta > tb) {
          std::swap(ta, tb);
          sa = 1;
        }
        if (ta > t0) {
          t0 = ta;
          axis = a;
          sign = sa;
        }
        t1 = std::min(t1, tb);
      }
      if (t0 > t1 || t0 <= kEps) return std::nullopt;
      Eigen::Vector3d ln = Eigen::Vector3d::Zero();
      ln[axis] = sign;
      const double cw = std::cos(p.yaw), sw = std::sin(p.yaw);
      return Hit{t0, Eigen::Vector3d(cw * ln.x() - sw * ln.y(), sw * ln.x() + cw * ln.y(), ln.z()), 0};
    }
    case Primitive::Kind::cylinder: {
      Hit best;
      const double ox = o.x() - p.center.x(), oy = o.y() - p.center.y();
      const double a = d.x() * d.x() + d.y() * d.y();
      if (a > kEps) {
        const double b = 2 * (ox * d.x() + oy * d.y()), cc = ox * ox + oy * oy - p.radius * p.radius;
        const double disc = b * b - 4 * a * cc;
        if (disc >= 0) {
          const double t = (-b - std::sqrt(disc)) / (2 * a);
          const double z = o.z() + t * d.z();
          if (t > kEps && z >= p.center.z() && z <= p.center.z() + p.height) {
            best.t = t;
            best.normal = Eigen::Vector3d(ox + t * d.x(), oy + t * d.y(), 0).normalized();
          }
        }
      }
      if (std::abs(d.z()) > kEps) {
        const double t = (p.center.z() + p.height - o.z()) / d.z();
        const double hx = ox + t * d.x(), hy = oy + t * d.y();
        if (t > kEps && t < best.t && hx * hx + hy * hy <= p.radius * p.radius) {
          best.t = t;
          best.normal = Eigen::Vector3d::UnitZ();
        }
      }
      if (!std::isfinite(best.t)) return std::nullopt;
      return best;
    }
  }
  return std::nullopt;
}

inline double camera_yaw(geom::CameraName n) {
  constexpr double q = std::numbers::pi / 4;
  switch (n) {
    case geom::CameraName::front: return 0;
    case geom::CameraName::front_left: return q;
    case geom::CameraName::front_right: return -q;
    case geom::CameraName::side_left: return 2 * q;
    case geom::CameraName::side_right: return -2 * q;
  }
  return 0;
}

// The volatile keeps g++ 11's SLP vectorizer at -O3 from folding the
// double -> float -> double pair away.
inline double round_f32(double v) {
  volatile float f = static_cast<float>(v);
  return static_cast<double>(f);
}

}  // namespace detail

/// Nearest intersection of the ray o + t d with any primitive.
inline std::optional<Hit> cast_ray(const std::vector<Primitive>& prims, const Eigen::Vector3d& o,
                                   const Eigen::Vector3d& d) {
  std::optional<Hit> best;
  for (std::size_t i = 0; i < prims.size(); ++i) {
    auto h = detail::intersect(prims[i], o, d);
    if (h && (!best || h->t < best->t)) {
      h->primitive = i;
      best = h;
    }
  }
  return best;
}

/// Camera rig of a synthetic scene: cameras slightly below the LiDAR, pitched
/// down, at the standard yaws of their names.
inline std::vector<geom::CameraModel> make_scene_cameras(const SceneSpec& spec) {
  std::vector<geom::CameraModel> cams;
  for (auto n : spec.cameras) {
    const double yaw = detail::camera_yaw(n);
    const Eigen::Vector3d pos(0.1 * std::cos(yaw), 0.1 * std::sin(yaw), -0.2);
    cams.push_back(geom::make_camera(n, yaw, 12.0 * std::numbers::pi / 180.0, pos, spec.width, spec.height, spec.focal,
                                     spec.focal));
  }
  return cams;
}

/// Azimuth interval covered by the cameras, with a small inner margin.
inline std::array<double, 2> scene_sector(const SceneSpec& spec) {
  const double half_fov = std::atan2(spec.width / 2.0, spec.focal);
  const double margin = 4.0 * std::numbers::pi / 180.0;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (auto n : spec.cameras) {
    lo = std::min(lo, detail::camera_yaw(n) - half_fov + margin);
    hi = std::max(hi, detail::camera_yaw(n) + half_fov - margin);
  }
  return {lo, hi};
}

inline std::vector<Primitive> make_scene_layout(const SceneSpec& spec, Rng rng) {
  std::vector<Primitive> prims;
  Primitive ground;
  ground.center = Eigen::Vector3d(0, 0, -kSensorHeight);
  prims.push_back(ground);
  const auto sector = scene_sector(spec);
  const double gz = -kSensorHeight;
  struct Plan {
    std::uint16_t label;
    int count;
    double rmin, rmax;
  };
  const std::array<Plan, 5> plans{{{kVehicle, 2, 5.0, 10.5},
                                   {kPedestrian, 2, 4.0, 10.0},
                                   {kPole, 2, 4.0, 10.0},
                                   {kBuilding, 1, 12.5, 15.0},
                                   {kVegetation, 2, 5.0, 11.0}}};
  for (const auto& plan : plans) {
    if (plan.label >= spec.num_classes) continue;
    for (int k = 0; k < plan.count; ++k) {
      for (int attempt = 0; attempt < 200; ++attempt) {
        const double r = rng.uniform(plan.rmin, plan.rmax);
        const double az = rng.uniform(sector[0], sector[1]);
        Primitive p;
        p.label = plan.label;
        switch (plan.label) {
          case kVehicle:
            p.kind = Primitive::Kind::box;
            p.half = Eigen::Vector3d(2.0, 0.9, 0.75);
            p.yaw = rng.uniform(0, std::numbers::pi);
            p.center = Eigen::Vector3d(r * std::cos(az), r * std::sin(az), gz + 0.75);
            break;
          case kBuilding:
            p.kind = Primitive::Kind::box;
            p.half = Eigen::Vector3d(3.0, 0.6, 2.5);
            p.yaw = az + std::numbers::pi / 2;
            p.center = Eigen::Vector3d(r * std::cos(az), r * std::sin(az), gz + 2.5);
            break;
          case kVegetation:
            p.kind = Primitive::Kind::cylinder;
            p.radius = 0.9;
            p.height = 2.6;
            p.center = Eigen::Vector3d(r * std::cos(az), r * std::sin(az), gz);
            break;
          default: {  // pedestrian or pole
            const bool thin_pole = plan.label == kPole && !spec.ambiguous_pair;
            p.kind = Primitive::Kind::cylinder;
            p.radius = thin_pole ? 0.15 : 0.35;
            p.height = thin_pole ? 3.5 : 1.8;
            p.center = Eigen::Vector3d(r * std::cos(az), r * std::sin(az), gz);
          }
        }
        // Keep the whole object inside the sector and apart from the others.
        const double ang = std::asin(std::min(1.0, p.footprint_radius() / r));
        if (az - ang < sector[0] || az + ang > sector[1]) continue;
        bool clear = true;
        for (std::size_t j = 1; j < prims.size() && clear; ++j) {
          const double dist = std::hypot(prims[j].center.x() - p.center.x(), prims[j].center.y() - p.center.y());
          clear = dist > prims[j].footprint_radius() + p.footprint_radius() + 0.5;
        }
        if (!clear) continue;
        prims.push_back(p);
        break;
      }
    }
  }
  return prims;
}

/// Per-class LiDAR return statistics: intensity mean and elongation range.
struct ReturnModel {
  double intensity_mean;
  double elongation_lo, elongation_hi;
};

inline ReturnModel return_model(std::uint16_t label, bool ambiguous_pair) {
  switch (label) {
    case kGround: return {0.20, 0.0, 0.2};
    case kVehicle: return {0.70, 0.0, 0.2};
    case kPedestrian: return {0.45, 0.1, 0.3};
    case kPole: return ambiguous_pair ? ReturnModel{0.45, 0.1, 0.3} : ReturnModel{0.88, 0.4, 0.6};
    case kBuilding: return {0.30, 0.0, 0.2};
    default: return {0.10, 0.3, 0.6};
  }
}

/// One point to splat: position, class and approximate surface patch size.
struct RenderSample {
  Eigen::Vector3d position;
  std::uint16_t label = 0;
  double footprint = 0;  // meters
};

struct RenderResult {
  geom::Image image;
  geom::LabelImage labels;
  std::vector<double> depth;  // per pixel, +inf where nothing was drawn
};

/// Splats samples into a camera; the nearest sample wins each pixel. Pixels no
/// sample reaches show the sky colour and the ignore label.
inline RenderResult render_camera(std::span<const RenderSample> samples, const geom::CameraModel& cam,
                                  double color_noise, Rng rng) {
  const int w = cam.width, h = cam.height;
  RenderResult out{geom::Image(h, w), geom::LabelImage(h, w),
                   std::vector<double>(static_cast<std::size_t>(w) * h, std::numeric_limits<double>::infinity())};
  for (const auto& s : samples) {
    const Eigen::Vector3d q = cam.rotation * s.position + cam.translation;
    if (q.z() <= geom::kMinValidDepth) continue;
    const double u = cam.fx * q.x() / q.z() + cam.cx, v = cam.fy * q.y() / q.z() + cam.cy;
    const int r = std::clamp(static_cast<int>(std::ceil(0.5 * cam.fx * s.footprint / q.z() - 0.5)), 0, 3);
    const int cu = static_cast<int>(std::floor(u)), cv = static_cast<int>(std::floor(v));
    for (int y = cv - r; y <= cv + r; ++y)
      for (int x = cu - r; x <= cu + r; ++x) {
        if (x < 0 || y < 0 || x >= w || y >= h) continue;
        auto& z = out.depth[static_cast<std::size_t>(y) * w + x];
        if (q.z() < z) {
          z = q.z();
          out.labels.at(y, x) = s.label;
        }
      }
  }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const auto l = out.labels.at(y, x);
      const auto& base = l == geom::LabelImage::kIgnoreLabel ? kSkyColor : kPalette[l];
      for (int c = 0; c < 3; ++c) {
        const double n = color_noise > 0 ? rng.normal(0.0, color_noise) : 0.0;
        out.image.at(y, x, c) = detail::round_f32(std::clamp(base[c] + n, 0.0, 1.0));
      }
    }
  return out;
}

struct Scene {
  geom::LidarPointCloud cloud;
  geom::MultiCamRig rig;
  std::vector<geom::LabelImage> label_images;  // per camera
};

/// Deterministic synthetic frame: ray-cast LiDAR returns on a ground disc,
/// boxes and cylinders, plus camera images rendered from a dense ray grid.
inline Scene generate_scene(const SceneSpec& spec) {
  spec.validate();
  const Rng root(spec.seed);
  const auto prims = make_scene_layout(spec, root.split(1));
  const auto sector = scene_sector(spec);
  const Eigen::Vector3d origin = Eigen::Vector3d::Zero();

  std::vector<std::uint16_t> classes;
  for (const auto& p : prims)
    if (std::find(classes.begin(), classes.end(), p.label) == classes.end()) classes.push_back(p.label);
  std::sort(classes.begin(), classes.end());

  Scene scene;
  scene.cloud.labels.emplace();
  Rng rng = root.split(2);
  const std::size_t max_attempts = 200 * spec.num_points;
  for (std::size_t attempt = 0; scene.cloud.size() < spec.num_points; ++attempt) {
    if (attempt >= max_attempts) throw Error("scene generator could not place enough LiDAR points");
    // Class-balanced aiming: pick a class, then a target on one of its objects.
    const auto cls = classes[rng.below(classes.size())];
    Eigen::Vector3d target;
    if (cls == kGround) {
      const double az = rng.uniform(sector[0], sector[1]), d = rng.uniform(2.5, 16.0);
      target = Eigen::Vector3d(d * std::cos(az), d * std::sin(az), -kSensorHeight);
    } else {
      std::vector<std::size_t> members;
      for (std::size_t i = 0; i < prims.size(); ++i)
        if (prims[i].label == cls) members.push_back(i);
      const auto& p = prims[members[rng.below(members.size())]];
      const double rr = p.footprint_radius();
      const double zlo = p.kind == Primitive::Kind::box ? p.center.z() - p.half.z() : p.center.z();
      const double zhi = p.kind == Primitive::Kind::box ? p.center.z() + p.half.z() : p.center.z() + p.height;
      target = Eigen::Vector3d(p.center.x() + rng.uniform(-rr, rr), p.center.y() + rng.uniform(-rr, rr),
                               rng.uniform(zlo, zhi));
    }
    const Eigen::Vector3d dir = (target - origin).normalized();
    const auto hit = cast_ray(prims, origin, dir);
    if (!hit) continue;
    const Eigen::Vector3d x = origin + hit->t * dir;
    const auto label = prims[hit->primitive].label;
    if (label != cls && rng.uniform(0, 1) > 0.25) continue;  // mostly keep class balance under occlusion
    const auto model = return_model(label, spec.ambiguous_pair);
    geom::LidarPoint pt;
    pt.x = detail::round_f32(x.x());
    pt.y = detail::round_f32(x.y());
    pt.z = detail::round_f32(x.z());
    pt.intensity = detail::round_f32(std::clamp(rng.normal(model.intensity_mean, 0.04), 0.0, 1.0));
    pt.elongation = detail::round_f32(rng.uniform(model.elongation_lo, model.elongation_hi));
    scene.cloud.points.push_back(pt);
    scene.cloud.labels->push_back(label);
  }

  // Dense render set on a regular angular grid, plus the LiDAR returns themselves.
  std::vector<RenderSample> samples;
  const double step = spec.render_step_deg * std::numbers::pi / 180.0;
  const double half_fov = std::atan2(spec.width / 2.0, spec.focal);
  for (double az = sector[0] - half_fov; az <= sector[1] + half_fov; az += step)
    for (double el = -60.0 * std::numbers::pi / 180.0; el <= 25.0 * std::numbers::pi / 180.0; el += step) {
      const Eigen::Vector3d dir(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
      const auto hit = cast_ray(prims, origin, dir);
      if (!hit) continue;
      const double incidence = std::max(std::abs(hit->normal.dot(dir)), 0.15);
      samples.push_back({origin + hit->t * dir, prims[hit->primitive].label, hit->t * step / incidence});
    }
  for (std::size_t i = 0; i < scene.cloud.size(); ++i) {
    const auto& p = scene.cloud.points[i];
    samples.push_back({Eigen::Vector3d(p.x, p.y, p.z), (*scene.cloud.labels)[i], 0.0});
  }

  scene.rig.cameras = make_scene_cameras(spec);
  for (std::size_t c = 0; c < scene.rig.cameras.size(); ++c) {
    auto r = render_camera(samples, scene.rig.cameras[c], spec.color_noise, root.split(100 + c));
    scene.rig.images.push_back(std::move(r.image));
    scene.label_images.push_back(std::move(r.labels));
  }
  scene.cloud.frame_id = "scene-" + std::to_string(spec.seed);
  return scene;
}

/// Index of the palette colour nearest to `rgb`, or the ignore label for sky.
inline std::uint16_t classify_color(const std::array<double, 3>& rgb, std::size_t num_classes = kSceneClasses) {
  double best = std::numeric_limits<double>::infinity();
  std::uint16_t arg = geom::LabelImage::kIgnoreLabel;
  auto dist = [&](const std::array<double, 3>& c) {
    return (rgb[0] - c[0]) * (rgb[0] - c[0]) + (rgb[1] - c[1]) * (rgb[1] - c[1]) + (rgb[2] - c[2]) * (rgb[2] - c[2]);
  };
  for (std::size_t k = 0; k < num_classes; ++k)
    if (dist(kPalette[k]) < best) {
      best = dist(kPalette[k]);
      arg = static_cast<std::uint16_t>(k);
    }
  if (dist(kSkyColor) < best) arg = geom::LabelImage::kIgnoreLabel;
  return arg;
}

}  // namespace vfs3d::harness
