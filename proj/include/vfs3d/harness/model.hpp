#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "vfs3d/backbones/image_encoder.hpp"
#include "vfs3d/backbones/lidar_encoder.hpp"
#include "vfs3d/fusion/fusion.hpp"
#include "vfs3d/geom/gather.hpp"
#include "vfs3d/harness/config.hpp"
#include "vfs3d/nn/losses.hpp"

namespace vfs3d::harness {

/// Parameter name prefixes. Backbones live under "lidar." and "image.".
inline constexpr std::string_view kLidarPrefix = "lidar.";
inline constexpr std::string_view kImagePrefix = "image.";
inline constexpr std::string_view kLidarHeadPrefix = "lidar_head.";
inline constexpr std::string_view kImageHeadPrefix = "image_head.";
inline constexpr std::string_view kFusionPrefix = "fusion.";

/// N x 5 input rows: x, y, z, intensity, elongation.
inline nn::Var lidar_input(const geom::LidarPointCloud& cloud) {
  std::vector<nn::real> v;
  v.reserve(cloud.size() * 5);
  for (const auto& p : cloud.points)
    for (double f : {p.x, p.y, p.z, p.intensity, p.elongation}) v.push_back(static_cast<nn::real>(f));
  return nn::Var::constant({cloud.size(), 5}, std::move(v));
}

/// C x h x w -> (h*w) x C.
inline nn::Var map_to_rows(const nn::Var& map) {
  nn::detail::expect_rank(map, 3, "map_to_rows");
  return nn::transpose(nn::reshape(map, {map.dim(0), map.dim(1) * map.dim(2)}));
}

/// Label per feature cell: the source pixel nearest to the cell under the
/// corner-aligned mapping. Pixels outside the unpadded image are ignored.
inline std::vector<std::uint16_t> labels_at_feature_cells(const geom::LabelImage& labels, std::size_t fh,
                                                          std::size_t fw, int source_width, int source_height) {
  std::vector<std::uint16_t> out(fh * fw, geom::LabelImage::kIgnoreLabel);
  const double sx = fw > 1 ? static_cast<double>(source_width - 1) / static_cast<double>(fw - 1) : 0.0;
  const double sy = fh > 1 ? static_cast<double>(source_height - 1) / static_cast<double>(fh - 1) : 0.0;
  for (std::size_t y = 0; y < fh; ++y)
    for (std::size_t x = 0; x < fw; ++x) {
      const long px = std::lround(static_cast<double>(x) * sx), py = std::lround(static_cast<double>(y) * sy);
      if (px < labels.width && py < labels.height) out[y * fw + x] = labels.at(static_cast<int>(py), static_cast<int>(px));
    }
  return out;
}

/// Weighted cross entropy plus Lovasz-softmax.
inline nn::Var segmentation_loss(const nn::Var& logits, std::span<const std::uint16_t> labels, const LossConfig& cfg,
                                 int ignore_index = nn::kNoIgnore) {
  nn::Var loss = nn::scale(nn::cross_entropy_loss(logits, labels, ignore_index), static_cast<nn::real>(cfg.ce_weight));
  if (cfg.lovasz_weight != 0)
    loss = nn::add(loss, nn::scale(nn::lovasz_softmax_loss(nn::softmax_rows(logits), labels, ignore_index),
                                   static_cast<nn::real>(cfg.lovasz_weight)));
  return loss;
}

inline std::vector<std::uint16_t> argmax_rows(const nn::Var& logits) {
  nn::detail::expect_rank(logits, 2, "argmax_rows");
  const auto n = logits.dim(0), c = logits.dim(1);
  const auto v = logits.value();
  std::vector<std::uint16_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
      if (v[i * c + j] > v[i * c + best]) best = j;
    out[i] = static_cast<std::uint16_t>(best);
  }
  return out;
}

/// Both backbones, both auxiliary heads and the fusion module in one store.
class Model {
 public:
  explicit Model(const Config& cfg, std::uint64_t seed = 0) : cfg_(cfg), store_(seed) {
    cfg_.finalize();
    using nn::ParamGroup;
    lidar_encoder_ = backbones::LidarEncoder(store_, "lidar.encoder", cfg_.lidar, ParamGroup::block);
    lidar_decoder_ = backbones::LidarDecoder(store_, "lidar.decoder", cfg_.lidar, ParamGroup::block);
    image_encoder_ = backbones::ImageEncoder(store_, "image.encoder", cfg_.image_encoder, ParamGroup::block);
    image_neck_ = backbones::ImageNeck(store_, "image.neck", cfg_.image_encoder, cfg_.image_neck, ParamGroup::block);
    lidar_head_ = nn::Linear(store_, "lidar_head.linear", lidar_decoder_.out_channels(), cfg_.num_classes,
                             ParamGroup::main);
    image_head_ = nn::Linear(store_, "image_head.linear", image_neck_.out_channels(), cfg_.num_classes,
                             ParamGroup::main);
    fusion_ = fusion::FusionModule(store_, "fusion", cfg_.fusion);
  }

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const Config& config() const { return cfg_; }
  nn::ParamStore& store() { return store_; }
  const nn::ParamStore& store() const { return store_; }

  /// Per-point LiDAR features (N x decoder width) of a cropped, grid-sampled cloud.
  nn::Var lidar_features(const geom::LidarPointCloud& cloud) const {
    const auto coords = cloud.coords();
    return lidar_decoder_(lidar_encoder_(lidar_input(cloud), backbones::Coords(coords.begin(), coords.end())));
  }

  nn::Var lidar_logits(const nn::Var& features) const { return lidar_head_(features); }
  nn::Var image_logits(const nn::Var& rows) const { return image_head_(rows); }

  /// Neck output for one normalized, stride-padded image.
  geom::CameraFeatureMap camera_map(const geom::Image& image) const {
    const nn::Var fm = image_neck_(image_encoder_(backbones::image_to_tensor(image)));
    return {fm, image.width, image.height};
  }

  /// Per-pixel logits of a camera map, (h*w) x K.
  nn::Var pixel_logits(const geom::CameraFeatureMap& fm) const { return image_head_(map_to_rows(fm.features)); }

  geom::GatheredFeatures camera_features(const geom::LidarPointCloud& cloud,
                                         const std::vector<geom::CameraModel>& cameras,
                                         std::span<const geom::CameraFeatureMap> maps) const {
    geom::MultiCamRig rig;
    rig.cameras = cameras;
    return geom::gather_point_camera_features(cloud, rig, maps);
  }

  fusion::FusionOutput fuse(const nn::Var& lidar, const nn::Var& lidar_logits, const geom::GatheredFeatures& cam,
                            const nn::Var& camera_logits, bool use_camera = true) const {
    fusion::FusionInputs in{lidar, lidar_logits, cam.features, camera_logits, cam.mask};
    return fusion_(in, use_camera);
  }

  const fusion::FusionModule& fusion() const { return fusion_; }
  const backbones::LidarEncoder& lidar_encoder() const { return lidar_encoder_; }
  const backbones::ImageNeck& image_neck() const { return image_neck_; }

 private:
  Config cfg_;
  nn::ParamStore store_;
  backbones::LidarEncoder lidar_encoder_;
  backbones::LidarDecoder lidar_decoder_;
  backbones::ImageEncoder image_encoder_;
  backbones::ImageNeck image_neck_;
  nn::Linear lidar_head_, image_head_;
  fusion::FusionModule fusion_;
};

}  // namespace vfs3d::harness
