#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "vfs3d/geom/types.hpp"
#include "vfs3d/nn/layers.hpp"

namespace vfs3d::backbones {

struct ImageEncoderConfig {
  std::size_t stem_channels = 16;
  std::vector<std::size_t> stage_channels{32, 64, 128, 256, 512};
  std::size_t blocks_per_stage = 1;

  void validate() const {
    if (stage_channels.empty()) throw ConfigError("image encoder needs at least one stage");
    std::size_t prev = stem_channels;
    for (auto c : stage_channels) {
      if (c <= prev) throw ConfigError("image encoder channels must be strictly increasing");
      prev = c;
    }
  }
  /// Inputs must be divisible by this.
  std::size_t stride() const { return std::size_t{1} << stage_channels.size(); }
  bool operator==(const ImageEncoderConfig&) const = default;
};

struct ImageNeckConfig {
  std::vector<std::size_t> out_channels{32, 64, 128, 256};
  bool operator==(const ImageNeckConfig&) const = default;
};

/// Level l holds a C_l x H/2^l x W/2^l map; level 0 is the stem.
struct FeaturePyramid {
  std::vector<nn::Var> levels;
  std::vector<int> scales;
};

/// HWC image -> 3 x H x W array.
inline nn::Var image_to_tensor(const geom::Image& img) {
  const std::size_t h = static_cast<std::size_t>(img.height), w = static_cast<std::size_t>(img.width);
  std::vector<nn::real> v(3 * h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c)
        v[(c * h + y) * w + x] = static_cast<nn::real>(img.data[(y * w + x) * 3 + c]);
  return nn::Var::constant({3, h, w}, std::move(v));
}

/// Zero-pads on the bottom and right up to multiples of `multiple`.
inline geom::Image pad_image(const geom::Image& img, int multiple) {
  const int h = (img.height + multiple - 1) / multiple * multiple;
  const int w = (img.width + multiple - 1) / multiple * multiple;
  if (h == img.height && w == img.width) return img;
  geom::Image out(h, w, 0.0);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, x, c);
  return out;
}

/// relu(x + conv2(relu(conv1(x))))
struct ResidualBlock {
  nn::Conv2d conv1, conv2;

  ResidualBlock() = default;
  ResidualBlock(nn::ParamStore& store, const std::string& name, std::size_t ch, nn::ParamGroup group)
      : conv1(store, name + ".conv1", ch, ch, 3, 1, group), conv2(store, name + ".conv2", ch, ch, 3, 1, group, 0.5) {}

  nn::Var operator()(const nn::Var& x) const { return nn::relu(nn::add(x, conv2(nn::relu(conv1(x))))); }
};

class ImageEncoder {
 public:
  ImageEncoder() = default;
  ImageEncoder(nn::ParamStore& store, const std::string& name, ImageEncoderConfig cfg,
               nn::ParamGroup group = nn::ParamGroup::block)
      : cfg_(std::move(cfg)) {
    cfg_.validate();
    stem_ = nn::Conv2d(store, name + ".stem", 3, cfg_.stem_channels, 3, 1, group);
    std::size_t prev = cfg_.stem_channels;
    for (std::size_t s = 0; s < cfg_.stage_channels.size(); ++s) {
      const std::string stage = name + ".stage" + std::to_string(s + 1);
      const auto ch = cfg_.stage_channels[s];
      down_.emplace_back(store, stage + ".down", prev, ch, 3, 2, group);
      std::vector<ResidualBlock> blocks;
      for (std::size_t b = 0; b < cfg_.blocks_per_stage; ++b)
        blocks.emplace_back(store, stage + ".block" + std::to_string(b), ch, group);
      blocks_.push_back(std::move(blocks));
      prev = ch;
    }
  }

  const ImageEncoderConfig& config() const { return cfg_; }

  /// x: 3 x H x W with H, W divisible by 2^stages.
  FeaturePyramid operator()(const nn::Var& x) const {
    nn::detail::expect_rank(x, 3, "image_encode");
    if (x.dim(0) != 3) throw ShapeError("image_encode: expected 3 input channels, got " + nn::shape_str(x.shape()));
    const auto stride = cfg_.stride();
    if (x.dim(1) % stride != 0 || x.dim(2) % stride != 0)
      throw ConfigError("image_encode: " + std::to_string(x.dim(1)) + "x" + std::to_string(x.dim(2)) +
                        " input is not divisible by " + std::to_string(stride));
    FeaturePyramid out;
    nn::Var h = nn::relu(stem_(x));
    out.levels.push_back(h);
    out.scales.push_back(1);
    for (std::size_t s = 0; s < down_.size(); ++s) {
      h = nn::relu(down_[s](h));
      for (const auto& b : blocks_[s]) h = b(h);
      out.levels.push_back(h);
      out.scales.push_back(1 << (s + 1));
    }
    return out;
  }

 private:
  ImageEncoderConfig cfg_;
  nn::Conv2d stem_;
  std::vector<nn::Conv2d> down_;
  std::vector<std::vector<ResidualBlock>> blocks_;
};

/// Top-down aggregation: lateral 1x1 projections of the deepest levels, each
/// deeper result upsampled x2, projected and added into the next shallower one.
class ImageNeck {
 public:
  ImageNeck() = default;
  ImageNeck(nn::ParamStore& store, const std::string& name, const ImageEncoderConfig& enc, ImageNeckConfig cfg,
            nn::ParamGroup group = nn::ParamGroup::block)
      : cfg_(std::move(cfg)) {
    const std::size_t levels = cfg_.out_channels.size();
    if (levels == 0 || levels > enc.stage_channels.size())
      throw ConfigError("image neck level count does not fit the encoder");
    first_level_ = enc.stage_channels.size() + 1 - levels;
    for (std::size_t i = 0; i < levels; ++i) {
      const std::size_t level = first_level_ + i;
      lateral_.emplace_back(store, name + ".lateral" + std::to_string(level), enc.stage_channels[level - 1],
                            cfg_.out_channels[i], 1, 1, group);
      if (i + 1 < levels)
        up_.emplace_back(store, name + ".up" + std::to_string(level), cfg_.out_channels[i + 1], cfg_.out_channels[i],
                         1, 1, group);
    }
    enc_channels_.push_back(enc.stem_channels);
    for (auto c : enc.stage_channels) enc_channels_.push_back(c);
  }

  /// Pyramid level of the output map (2 means 1/4 resolution).
  std::size_t output_level() const { return first_level_; }
  std::size_t out_channels() const { return cfg_.out_channels.front(); }

  nn::Var operator()(const FeaturePyramid& pyr) const {
    if (pyr.levels.size() != enc_channels_.size())
      throw ShapeError("image_neck: expected " + std::to_string(enc_channels_.size()) + " pyramid levels, got " +
                       std::to_string(pyr.levels.size()));
    for (std::size_t l = 0; l < pyr.levels.size(); ++l) {
      const auto& v = pyr.levels[l];
      nn::detail::expect_rank(v, 3, "image_neck");
      if (v.dim(0) != enc_channels_[l]) throw ShapeError("image_neck: level " + std::to_string(l) + " channel mismatch");
      if (l > 0 && (v.dim(1) * 2 != pyr.levels[l - 1].dim(1) || v.dim(2) * 2 != pyr.levels[l - 1].dim(2)))
        throw ShapeError("image_neck: level " + std::to_string(l) + " is not half the size of level " +
                         std::to_string(l - 1));
    }
    const std::size_t n = lateral_.size();
    nn::Var y = lateral_[n - 1](pyr.levels[first_level_ + n - 1]);
    for (std::size_t i = n - 1; i-- > 0;) {
      const nn::Var lat = lateral_[i](pyr.levels[first_level_ + i]);
      y = nn::relu(nn::add(lat, up_[i](nn::upsample_nearest2x(y))));
    }
    return y;
  }

 private:
  ImageNeckConfig cfg_;
  std::size_t first_level_ = 2;
  std::vector<std::size_t> enc_channels_;
  std::vector<nn::Conv2d> lateral_;
  std::vector<nn::Conv2d> up_;
};

}  // namespace vfs3d::backbones
