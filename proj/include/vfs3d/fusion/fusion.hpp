#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vfs3d/nn/layers.hpp"

namespace vfs3d::fusion {

struct FusionConfig {
  std::size_t num_classes = 6;
  std::size_t lidar_channels = 64;
  std::size_t camera_channels = 32;
  std::size_t fused_width = 128;
  std::size_t heads = 4;
  std::size_t ffn_hidden = 256;
  bool sffm_ffn = true;
  double absent_mass = 1e-6;

  void validate() const {
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (heads == 0 || fused_width % heads != 0) throw ConfigError("fused width must be divisible by the head count");
    if (!(absent_mass > 0)) throw ConfigError("absent_mass must be positive");
  }
  bool operator==(const FusionConfig&) const = default;
};

/// N x 1 column holding the mask as 0/1.
inline nn::Var mask_column(std::span<const std::uint8_t> mask) {
  std::vector<nn::real> v(mask.size());
  for (std::size_t i = 0; i < mask.size(); ++i) v[i] = mask[i] ? nn::real(1) : nn::real(0);
  return nn::Var::constant({mask.size(), 1}, std::move(v));
}

/// Geometry-based fusion: [lidar, camera * mask, mask] -> projection ->
/// residual two-layer perceptron.
class Gffm {
 public:
  Gffm() = default;
  Gffm(nn::ParamStore& store, const std::string& name, const FusionConfig& cfg)
      : proj_(store, name + ".proj", cfg.lidar_channels + cfg.camera_channels + 1, cfg.fused_width,
              nn::ParamGroup::main),
        mlp_(store, name + ".mlp", cfg.fused_width, cfg.fused_width, nn::ParamGroup::main) {}

  nn::Var operator()(const nn::Var& lidar, const nn::Var& camera, std::span<const std::uint8_t> mask) const {
    nn::detail::expect_rank(lidar, 2, "gffm_fuse");
    nn::detail::expect_rank(camera, 2, "gffm_fuse");
    if (lidar.dim(0) != camera.dim(0) || mask.size() != lidar.dim(0))
      throw ShapeError("gffm_fuse: point counts differ (lidar " + std::to_string(lidar.dim(0)) + ", camera " +
                       std::to_string(camera.dim(0)) + ", mask " + std::to_string(mask.size()) + ")");
    const nn::Var m = mask_column(mask);
    const nn::Var h = proj_(nn::concat({lidar, nn::mul(camera, m), m}, 1));
    return nn::add(h, mlp_(h));
  }

 private:
  nn::Linear proj_;
  nn::FeedForward mlp_;
};

struct SemanticEmbeddings {
  nn::Var embeddings;                // K x D_f
  nn::Var pooled;                    // K x D before projection
  std::vector<std::uint8_t> present;  // per class
};

/// Probability-weighted class pooling: weights p_ik * mask_i normalized over
/// points per class. Classes with too little mass use the null embedding.
class Sfam {
 public:
  Sfam() = default;
  Sfam(nn::ParamStore& store, const std::string& name, std::size_t in_dim, const FusionConfig& cfg)
      : absent_mass_(cfg.absent_mass) {
    null_ = store.add(name + ".null", {1, in_dim}, nn::InitSpec::normal(0.02), nn::ParamGroup::main);
    proj_ = nn::Linear(store, name + ".proj", in_dim, cfg.fused_width, nn::ParamGroup::main);
  }

  /// `mask` empty means every point counts.
  SemanticEmbeddings operator()(const nn::Var& feats, const nn::Var& probs,
                                std::span<const std::uint8_t> mask = {}) const {
    nn::detail::expect_rank(feats, 2, "sfam_aggregate");
    nn::detail::expect_rank(probs, 2, "sfam_aggregate");
    const auto n = feats.dim(0), k = probs.dim(1);
    if (n == 0) throw Error("sfam_aggregate: no points");
    if (probs.dim(0) != n) throw ShapeError("sfam_aggregate: feature and probability rows differ");
    if (!mask.empty() && mask.size() != n) throw ShapeError("sfam_aggregate: mask length mismatch");
    const nn::Var w = mask.empty() ? probs : nn::mul(probs, mask_column(mask));
    const nn::Var mass = nn::sum_axis(w, 0);  // 1 x K
    SemanticEmbeddings out;
    out.present.resize(k);
    std::vector<nn::real> present(k), absent(k);
    for (std::size_t c = 0; c < k; ++c) {
      out.present[c] = mass[c] >= absent_mass_;
      present[c] = out.present[c] ? 1 : 0;
      absent[c] = 1 - present[c];
    }
    const nn::Var present_col = nn::Var::constant({k, 1}, present);
    const nn::Var absent_col = nn::Var::constant({k, 1}, absent);
    // Absent classes divide by 1 instead of ~0.
    const nn::Var denom = nn::add(nn::mul(nn::transpose(mass), present_col), absent_col);
    const nn::Var pooled = nn::div(nn::matmul(nn::transpose(w), feats), denom);
    out.pooled = nn::add(nn::mul(pooled, present_col), nn::mul(absent_col, null_));
    out.embeddings = proj_(out.pooled);
    return out;
  }

 private:
  double absent_mass_ = 1e-6;
  nn::Var null_;
  nn::Linear proj_;
};

/// Cross-attention from point features to the stacked class embeddings, then
/// residual + LN, optional feed-forward + residual + LN.
class Sffm {
 public:
  Sffm() = default;
  Sffm(nn::ParamStore& store, const std::string& name, const FusionConfig& cfg) : use_ffn_(cfg.sffm_ffn) {
    attn_ = nn::MultiHeadAttention(store, name + ".attn", cfg.fused_width, cfg.fused_width, cfg.fused_width,
                                   cfg.heads, nn::ParamGroup::main);
    ln1_ = nn::LayerNorm(store, name + ".ln1", cfg.fused_width, nn::ParamGroup::main);
    if (use_ffn_) {
      ffn_ = nn::FeedForward(store, name + ".ffn", cfg.fused_width, cfg.ffn_hidden, nn::ParamGroup::main);
      ln2_ = nn::LayerNorm(store, name + ".ln2", cfg.fused_width, nn::ParamGroup::main);
    }
  }

  /// `sems` are stacked in order; their absent classes are masked out.
  nn::Var operator()(const nn::Var& geo, std::span<const SemanticEmbeddings> sems,
                     nn::AttentionWeights* weights = nullptr) const {
    std::vector<nn::Var> rows;
    std::vector<std::uint8_t> mask;
    for (const auto& s : sems) {
      rows.push_back(s.embeddings);
      mask.insert(mask.end(), s.present.begin(), s.present.end());
    }
    bool any = false;
    for (auto m : mask) any = any || m;
    if (!any) throw Error("sffm_fuse: every semantic embedding is absent");
    const nn::Var keys = rows.size() == 1 ? rows[0] : nn::concat(rows, 0);
    nn::Var x = ln1_(nn::add(geo, attn_(geo, keys, keys, mask, weights)));
    if (use_ffn_) x = ln2_(nn::add(x, ffn_(x)));
    return x;
  }

 private:
  bool use_ffn_ = true;
  nn::MultiHeadAttention attn_;
  nn::LayerNorm ln1_, ln2_;
  nn::FeedForward ffn_;
};

struct FusionInputs {
  nn::Var lidar;        // N x lidar_channels
  nn::Var lidar_logits;  // N x K from the LiDAR auxiliary head
  nn::Var camera;        // N x camera_channels (ignored when use_camera is false)
  nn::Var camera_logits;
  std::vector<std::uint8_t> mask;
};

struct FusionOutput {
  nn::Var logits;  // N x K
  nn::Var geo;
  std::vector<SemanticEmbeddings> semantics;  // LiDAR, then camera when used
};

/// GFFM -> SFAM per modality -> SFFM -> classifier.
class FusionModule {
 public:
  FusionModule() = default;
  FusionModule(nn::ParamStore& store, const std::string& name, FusionConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    gffm_ = Gffm(store, name + ".gffm", cfg_);
    sfam_lidar_ = Sfam(store, name + ".sfam_lidar", cfg_.lidar_channels, cfg_);
    sfam_camera_ = Sfam(store, name + ".sfam_camera", cfg_.camera_channels, cfg_);
    sffm_ = Sffm(store, name + ".sffm", cfg_);
    head_ = nn::Linear(store, name + ".head", cfg_.fused_width, cfg_.num_classes, nn::ParamGroup::main);
  }

  const FusionConfig& config() const { return cfg_; }

  /// With `use_camera` false the camera branch is never evaluated: camera
  /// features and mask are zero and only LiDAR embeddings are attended.
  FusionOutput operator()(const FusionInputs& in, bool use_camera = true) const {
    const auto n = in.lidar.dim(0);
    FusionOutput out;
    if (use_camera) {
      if (in.mask.size() != n) throw ShapeError("fusion: mask length does not match point count");
      out.geo = gffm_(in.lidar, in.camera, in.mask);
    } else {
      const std::vector<std::uint8_t> none(n, 0);
      out.geo = gffm_(in.lidar, nn::Var::zeros({n, cfg_.camera_channels}), none);
    }
    out.semantics.push_back(sfam_lidar_(in.lidar, nn::softmax_rows(in.lidar_logits)));
    if (use_camera) out.semantics.push_back(sfam_camera_(in.camera, nn::softmax_rows(in.camera_logits), in.mask));
    out.logits = head_(sffm_(out.geo, out.semantics));
    return out;
  }

  const Gffm& gffm() const { return gffm_; }
  const Sfam& sfam_lidar() const { return sfam_lidar_; }
  const Sfam& sfam_camera() const { return sfam_camera_; }
  const Sffm& sffm() const { return sffm_; }
  const nn::Linear& head() const { return head_; }

 private:
  FusionConfig cfg_;
  Gffm gffm_;
  Sfam sfam_lidar_, sfam_camera_;
  Sffm sffm_;
  nn::Linear head_;
};

}  // namespace vfs3d::fusion
