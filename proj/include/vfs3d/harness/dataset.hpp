#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "vfs3d/aug/grid_sample.hpp"
#include "vfs3d/backbones/image_encoder.hpp"
#include "vfs3d/geom/pointcloud_io.hpp"
#include "vfs3d/harness/config.hpp"
#include "vfs3d/harness/io.hpp"
#include "vfs3d/harness/scene.hpp"

namespace vfs3d::harness {

enum class Split { train, val };

inline std::string_view to_string(Split s) { return s == Split::train ? "train" : "val"; }

inline SceneSpec scene_spec(const Config& cfg, Split split, std::size_t index) {
  SceneSpec s;
  s.seed = Rng(cfg.scene.seed).split(split == Split::train ? 1 : 2).split(index).key();
  s.num_points = cfg.scene.num_points;
  s.num_classes = cfg.num_classes;
  s.cameras = cfg.scene.cameras;
  s.width = cfg.scene.camera_width;
  s.height = cfg.scene.camera_height;
  s.focal = cfg.scene.focal;
  s.ambiguous_pair = cfg.scene.ambiguous_pair;
  s.color_noise = cfg.scene.color_noise;
  return s;
}

inline std::vector<Scene> generate_split(const Config& cfg, Split split) {
  const std::size_t n = split == Split::train ? cfg.scene.train_scenes : cfg.scene.val_scenes;
  std::vector<Scene> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(generate_scene(scene_spec(cfg, split, i)));
  return out;
}

namespace detail {

inline std::string scene_stem(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene-%04zu", i);
  return buf;
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream is(p);
  if (!is) throw IoError("cannot read " + p.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace detail

/// dir/scene-NNNN.{pc,rig} plus per camera scene-NNNN.camK.pfm and .camK.labels.pgm.
inline void save_scenes(const std::filesystem::path& dir, const std::vector<Scene>& scenes) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const auto stem = detail::scene_stem(i);
    const auto& s = scenes[i];
    geom::save_point_cloud(dir / (stem + ".pc"), s.cloud);
    std::ofstream(dir / (stem + ".rig")) << dump_rig(s.rig.cameras);
    for (std::size_t c = 0; c < s.rig.cameras.size(); ++c) {
      save_pfm(dir / (stem + ".cam" + std::to_string(c) + ".pfm"), s.rig.images[c]);
      save_pgm(dir / (stem + ".cam" + std::to_string(c) + ".labels.pgm"), s.label_images[c]);
    }
  }
}

inline std::vector<Scene> load_scenes(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("dataset directory not found: " + dir.string());
  std::vector<Scene> out;
  for (std::size_t i = 0;; ++i) {
    const auto stem = detail::scene_stem(i);
    if (!std::filesystem::exists(dir / (stem + ".pc"))) break;
    Scene s;
    s.cloud = geom::load_point_cloud(dir / (stem + ".pc"));
    s.rig.cameras = parse_rig(detail::read_text(dir / (stem + ".rig")));
    for (std::size_t c = 0; c < s.rig.cameras.size(); ++c) {
      s.rig.images.push_back(load_pfm(dir / (stem + ".cam" + std::to_string(c) + ".pfm")));
      s.label_images.push_back(load_pgm(dir / (stem + ".cam" + std::to_string(c) + ".labels.pgm")));
    }
    s.rig.validate();
    out.push_back(std::move(s));
  }
  return out;
}

/// A scene ready for the networks: cropped and grid-sampled cloud, normalized
/// and padded camera images.
struct PreparedScene {
  geom::LidarPointCloud cloud;  // cropped, full resolution
  aug::GridSampleResult sampled;
  std::vector<geom::CameraModel> cameras;
  std::vector<geom::Image> raw_images;
  std::vector<geom::Image> images;  // normalized, zero-padded to the encoder stride
  std::vector<geom::LabelImage> label_images;
};

inline PreparedScene prepare_scene(const Scene& scene, const Config& cfg) {
  PreparedScene p;
  p.cloud = geom::crop_to_range(scene.cloud, cfg.range);
  if (p.cloud.empty()) throw Error("scene '" + scene.cloud.frame_id + "' has no points inside the range box");
  p.cloud.validate(static_cast<int>(cfg.num_classes));
  p.sampled = aug::grid_sample(p.cloud, cfg.grid_cell);
  p.cameras = scene.rig.cameras;
  p.raw_images = scene.rig.images;
  const int stride = static_cast<int>(cfg.image_encoder.stride());
  for (const auto& img : scene.rig.images)
    p.images.push_back(backbones::pad_image(geom::normalize_image(img, cfg.image_norm), stride));
  p.label_images = scene.label_images;
  return p;
}

inline std::vector<PreparedScene> prepare_scenes(const std::vector<Scene>& scenes, const Config& cfg) {
  std::vector<PreparedScene> out;
  out.reserve(scenes.size());
  for (const auto& s : scenes) out.push_back(prepare_scene(s, cfg));
  return out;
}

}  // namespace vfs3d::harness
