#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "vfs3d/aug/grid_sample.hpp"
#include "vfs3d/curves/curves.hpp"
#include "vfs3d/nn/layers.hpp"

namespace vfs3d::backbones {

struct LidarEncoderConfig {
  std::size_t in_channels = 5;
  std::vector<std::size_t> enc_channels{32, 64, 128, 256, 512};
  std::vector<std::size_t> dec_channels{64, 64, 128, 256};
  std::size_t group_size = 32;
  std::size_t heads = 4;
  std::size_t blocks_per_stage = 1;
  std::vector<curves::CurveKind> curves{curves::CurveKind::z, curves::CurveKind::z_trans, curves::CurveKind::hilbert,
                                        curves::CurveKind::hilbert_trans};
  double base_cell = 0.1;  // stage s pools at base_cell * 2^s
  int bits_per_axis = 11;
  std::array<double, 3> grid_origin{-75.2, -75.2, -4.0};

  void validate() const {
    if (enc_channels.empty()) throw ConfigError("lidar encoder needs at least one stage");
    if (dec_channels.size() + 1 != enc_channels.size())
      throw ConfigError("lidar decoder needs one width per encoder stage except the deepest");
    if (group_size < 4) throw ConfigError("lidar group_size must be >= 4");
    if (curves.empty()) throw ConfigError("lidar encoder needs at least one serialization curve");
    if (!(base_cell > 0)) throw ConfigError("lidar base cell must be positive");
    for (auto c : enc_channels)
      if (heads == 0 || c % heads != 0) throw ConfigError("lidar stage width must be divisible by the head count");
  }

  double cell(std::size_t stage) const { return std::ldexp(base_cell, static_cast<int>(stage)); }
  curves::CurveKind curve(std::size_t stage) const { return curves[stage % curves.size()]; }
  curves::GridSpec grid(std::size_t stage) const { return {grid_origin, cell(stage), bits_per_axis}; }
  bool operator==(const LidarEncoderConfig&) const = default;
};

using Coords = std::vector<std::array<double, 3>>;

/// Everything the decoder needs from the encoder.
struct LidarEncoding {
  std::vector<nn::Var> features;                 // per stage, N_s x C_s
  std::vector<Coords> coords;                    // per stage
  std::vector<std::vector<std::size_t>> parent;  // parent[s]: stage s-1 point -> stage s point (s >= 1)
};

/// Groups of a serialized ordering of `coords`.
inline std::vector<std::vector<std::size_t>> serialized_groups(const Coords& coords, const curves::GridSpec& grid,
                                                               curves::CurveKind kind, std::size_t group_size) {
  const auto order = curves::serialize_order(std::span<const std::array<double, 3>>(coords), grid, kind);
  return curves::partition_groups(order, group_size);
}

/// Per-point offset to the centroid of its group, N x 3.
inline nn::Var group_offsets(const Coords& coords, const std::vector<std::vector<std::size_t>>& groups) {
  std::vector<nn::real> v(coords.size() * 3, nn::real(0));
  for (const auto& g : groups) {
    std::array<double, 3> c{0, 0, 0};
    for (auto i : g)
      for (int k = 0; k < 3; ++k) c[k] += coords[i][k];
    for (auto& x : c) x /= static_cast<double>(g.size());
    for (auto i : g)
      for (int k = 0; k < 3; ++k) v[i * 3 + k] = static_cast<nn::real>(coords[i][k] - c[k]);
  }
  return nn::Var::constant({coords.size(), 3}, std::move(v));
}

/// x + attn([LN(x), offsets]) within groups, then x + FFN(LN(x)).
struct SerializedBlock {
  nn::LayerNorm ln1, ln2;
  nn::MultiHeadAttention attn;
  nn::FeedForward ffn;

  SerializedBlock() = default;
  SerializedBlock(nn::ParamStore& store, const std::string& name, std::size_t ch, std::size_t heads,
                  nn::ParamGroup group)
      : ln1(store, name + ".ln1", ch, group),
        ln2(store, name + ".ln2", ch, group),
        attn(store, name + ".attn", ch + 3, ch + 3, ch, heads, group),
        ffn(store, name + ".ffn", ch, 2 * ch, group) {}

  nn::Var operator()(const nn::Var& x, const nn::Var& offsets,
                     const std::vector<std::vector<std::size_t>>& groups) const {
    const nn::Var h = nn::concat({ln1(x), offsets}, 1);
    const nn::Var y = nn::add(x, attn.grouped(h, groups));
    return nn::add(y, ffn(ln2(y)));
  }
};

class LidarEncoder {
 public:
  LidarEncoder() = default;
  LidarEncoder(nn::ParamStore& store, const std::string& name, LidarEncoderConfig cfg,
               nn::ParamGroup group = nn::ParamGroup::block)
      : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::size_t prev = cfg_.in_channels;
    for (std::size_t s = 0; s < cfg_.enc_channels.size(); ++s) {
      const std::string stage = name + ".stage" + std::to_string(s);
      const auto ch = cfg_.enc_channels[s];
      embed_.emplace_back(store, stage + ".embed", prev, ch, group);
      embed_ln_.emplace_back(store, stage + ".embed_ln", ch, group);
      std::vector<SerializedBlock> blocks;
      for (std::size_t b = 0; b < cfg_.blocks_per_stage; ++b)
        blocks.emplace_back(store, stage + ".block" + std::to_string(b), ch, cfg_.heads, group);
      blocks_.push_back(std::move(blocks));
      prev = ch;
    }
  }

  const LidarEncoderConfig& config() const { return cfg_; }
  std::size_t stages() const { return cfg_.enc_channels.size(); }

  /// Serialized groups used by stage `s` for the given stage coordinates.
  std::vector<std::vector<std::size_t>> groups(std::size_t s, const Coords& coords) const {
    return serialized_groups(coords, cfg_.grid(s), cfg_.curve(s), cfg_.group_size);
  }

  /// One stage on already pooled inputs: embed, then serialized attention blocks.
  nn::Var stage(std::size_t s, const nn::Var& x, const Coords& coords) const {
    if (x.dim(0) != coords.size()) throw ShapeError("lidar stage: feature rows do not match coordinates");
    nn::Var h = embed_ln_[s](embed_[s](x));
    const auto g = groups(s, coords);
    const nn::Var offsets = group_offsets(coords, g);
    for (const auto& b : blocks_[s]) h = b(h, offsets, g);
    return h;
  }

  /// features: N x in_channels; coords: N points (already cropped and grid sampled).
  LidarEncoding operator()(const nn::Var& features, const Coords& coords) const {
    nn::detail::expect_rank(features, 2, "lidar_encode");
    if (coords.empty()) throw Error("lidar_encode: empty cloud");
    if (features.dim(1) != cfg_.in_channels)
      throw ShapeError("lidar_encode: expected " + std::to_string(cfg_.in_channels) + " input channels, got " +
                       nn::shape_str(features.shape()));
    LidarEncoding enc;
    nn::Var x = features;
    Coords c = coords;
    enc.parent.emplace_back();
    for (std::size_t s = 0; s < stages(); ++s) {
      if (s > 0) {
        // Average features per cell; the lowest-index member's coordinates stand for the cell.
        auto cells = aug::grid_cells(c, cfg_.cell(s));
        Coords pooled;
        pooled.reserve(cells.kept.size());
        for (auto i : cells.kept) pooled.push_back(c[i]);
        x = nn::segment_mean(x, cells.inverse, cells.kept.size());
        c = std::move(pooled);
        enc.parent.push_back(std::move(cells.inverse));
      }
      x = stage(s, x, c);
      enc.features.push_back(x);
      enc.coords.push_back(c);
    }
    return enc;
  }

 private:
  LidarEncoderConfig cfg_;
  std::vector<nn::Linear> embed_;
  std::vector<nn::LayerNorm> embed_ln_;
  std::vector<std::vector<SerializedBlock>> blocks_;
};

/// Walks back up the stages: unpool along the membership map, concatenate the
/// skip features, project to the decoder width, LN, GELU.
class LidarDecoder {
 public:
  LidarDecoder() = default;
  LidarDecoder(nn::ParamStore& store, const std::string& name, const LidarEncoderConfig& cfg,
               nn::ParamGroup group = nn::ParamGroup::block) {
    cfg.validate();
    const std::size_t stages = cfg.enc_channels.size();
    std::size_t deeper = cfg.enc_channels.back();
    proj_.resize(stages - 1);
    ln_.resize(stages - 1);
    for (std::size_t s = stages - 1; s-- > 0;) {
      const std::string n = name + ".up" + std::to_string(s);
      proj_[s] = nn::Linear(store, n + ".proj", deeper + cfg.enc_channels[s], cfg.dec_channels[s], group);
      ln_[s] = nn::LayerNorm(store, n + ".ln", cfg.dec_channels[s], group);
      deeper = cfg.dec_channels[s];
    }
    out_channels_ = stages > 1 ? cfg.dec_channels.front() : cfg.enc_channels.front();
  }

  std::size_t out_channels() const { return out_channels_; }

  nn::Var operator()(const LidarEncoding& enc) const {
    if (enc.features.size() != proj_.size() + 1 || enc.parent.size() != enc.features.size())
      throw ShapeError("lidar_decode: expected " + std::to_string(proj_.size() + 1) + " encoder stages with skips");
    nn::Var y = enc.features.back();
    for (std::size_t s = proj_.size(); s-- > 0;) {
      const nn::Var up = nn::gather_rows(y, enc.parent[s + 1]);
      y = nn::gelu(ln_[s](proj_[s](nn::concat({up, enc.features[s]}, 1))));
    }
    return y;
  }

 private:
  std::vector<nn::Linear> proj_;
  std::vector<nn::LayerNorm> ln_;
  std::size_t out_channels_ = 0;
};

}  // namespace vfs3d::backbones
