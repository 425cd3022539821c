#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "vfs3d/aug/image_aug.hpp"
#include "vfs3d/aug/lidar_aug.hpp"
#include "vfs3d/aug/tta.hpp"
#include "vfs3d/backbones/image_encoder.hpp"
#include "vfs3d/backbones/lidar_encoder.hpp"
#include "vfs3d/core/kv.hpp"
#include "vfs3d/fusion/fusion.hpp"
#include "vfs3d/geom/camera.hpp"
#include "vfs3d/geom/types.hpp"
#include "vfs3d/nn/optim.hpp"

namespace vfs3d::harness {

enum class Stage { lidar, image, fusion };

inline std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::lidar: return "lidar";
    case Stage::image: return "image";
    case Stage::fusion: return "fusion";
  }
  return "?";
}

inline Stage parse_stage(std::string_view s) {
  if (s == "lidar") return Stage::lidar;
  if (s == "image") return Stage::image;
  if (s == "fusion") return Stage::fusion;
  throw ConfigError("unknown stage '" + std::string(s) + "' (expected lidar, image or fusion)");
}

struct SceneConfig {
  std::uint64_t seed = 0;
  std::size_t train_scenes = 5;
  std::size_t val_scenes = 2;
  std::size_t num_points = 512;
  std::vector<geom::CameraName> cameras{geom::CameraName::front, geom::CameraName::front_left};
  int camera_width = 64;
  int camera_height = 48;
  double focal = 48;  // pixels
  bool ambiguous_pair = true;
  double color_noise = 0.02;
  bool operator==(const SceneConfig&) const = default;
};

struct StageSchedule {
  std::size_t epochs = 0;  // 0 falls back to train.epochs
  std::size_t batch_size = 2;
  bool operator==(const StageSchedule&) const = default;
};

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batch_size = 2;
  StageSchedule lidar{45, 2};
  StageSchedule image{10, 8};
  StageSchedule fusion{25, 2};
  std::size_t max_steps = 0;  // 0 = no cap
  std::uint64_t seed = 0;
  bool lidar_augment = true;
  bool image_augment = true;

  const StageSchedule& stage(Stage s) const {
    return s == Stage::lidar ? lidar : s == Stage::image ? image : fusion;
  }
  std::size_t epochs_for(Stage s) const { return stage(s).epochs ? stage(s).epochs : epochs; }
  std::size_t batch_for(Stage s) const { return stage(s).batch_size ? stage(s).batch_size : batch_size; }
  bool operator==(const TrainConfig&) const = default;
};

struct LossConfig {
  double ce_weight = 1.0;
  double lovasz_weight = 1.0;
  double main_weight = 1.0;
  double aux_lidar_weight = 0.5;
  double aux_camera_weight = 0.5;
  bool operator==(const LossConfig&) const = default;
};

struct OptimConfig {
  double main_lr = 8e-4;
  double block_lr = 8e-5;
  double min_lr = 0.0;
  double weight_decay = 5e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  bool operator==(const OptimConfig&) const = default;
};

struct Config {
  std::size_t num_classes = 6;
  geom::RangeBox range;
  double grid_cell = 0.1;
  geom::ImageNormConfig image_norm;
  int image_width = 960;
  int image_height = 640;

  SceneConfig scene;
  backbones::ImageEncoderConfig image_encoder;
  backbones::ImageNeckConfig image_neck;
  backbones::LidarEncoderConfig lidar;
  fusion::FusionConfig fusion;
  aug::LidarAugConfig lidar_aug;
  aug::ImageAugConfig image_aug;
  aug::TtaConfig tta;
  OptimConfig optim;
  LossConfig loss;
  TrainConfig train;

  bool operator==(const Config& o) const {
    return num_classes == o.num_classes && range == o.range && grid_cell == o.grid_cell &&
           image_norm == o.image_norm && image_width == o.image_width && image_height == o.image_height &&
           scene == o.scene && image_encoder == o.image_encoder && image_neck == o.image_neck && lidar == o.lidar &&
           fusion == o.fusion && lidar_aug == o.lidar_aug && image_aug == o.image_aug && tta_equal(tta, o.tta) &&
           optim == o.optim && loss == o.loss && train == o.train;
  }

  /// Cross-field checks; keeps derived fields (grid origin, fused head sizes) in sync.
  void finalize() {
    range.validate();
    image_norm.validate();
    if (!(grid_cell > 0)) throw ConfigError("data.grid_cell must be positive");
    if (num_classes < 2) throw ConfigError("data.num_classes must be >= 2");
    lidar.grid_origin = range.min;
    lidar.base_cell = grid_cell;
    lidar.validate();
    image_encoder.validate();
    fusion.num_classes = num_classes;
    fusion.lidar_channels = lidar.dec_channels.empty() ? lidar.enc_channels.front() : lidar.dec_channels.front();
    fusion.camera_channels = image_neck.out_channels.front();
    fusion.validate();
    lidar_aug.validate();
    image_aug.validate();
    tta.validate();
    if (scene.cameras.empty()) throw ConfigError("scene.cameras must list at least one camera");
    if (scene.num_points == 0) throw ConfigError("scene.num_points must be positive");
  }

  nn::AdamWConfig adamw() const { return {optim.beta1, optim.beta2, optim.eps, optim.weight_decay}; }

 private:
  static bool tta_equal(const aug::TtaConfig& a, const aug::TtaConfig& b) {
    return a.variants == b.variants && a.count == b.count && a.include_identity == b.include_identity &&
           a.scale_range == b.scale_range && a.rot_range == b.rot_range && a.trans_sigma == b.trans_sigma;
  }
};

namespace detail {

struct Field {
  std::string section;
  std::string key;
  std::function<std::string(const Config&)> get;
  std::function<void(Config&, std::string_view)> set;
};

template <class T>
std::string fmt_value(const T& v) {
  if constexpr (std::is_same_v<T, bool>) return v ? "true" : "false";
  else if constexpr (std::is_floating_point_v<T>) return kv::format_double(v);
  else return std::to_string(v);
}

template <class T>
T parse_value(std::string_view s, const std::string& what) {
  if constexpr (std::is_same_v<T, bool>) return kv::parse_bool(s, what);
  else if constexpr (std::is_floating_point_v<T>) return kv::parse_double(s, what);
  else {
    const auto v = kv::parse_int(s, what);
    if (v < 0) throw ConfigError(what + ": must be non-negative");
    return static_cast<T>(v);
  }
}

template <class T, class Proj>
Field scalar(std::string section, std::string key, Proj proj) {
  const std::string what = section + "." + key;
  return {section, key, [proj](const Config& c) { return fmt_value(proj(const_cast<Config&>(c))); },
          [proj, what](Config& c, std::string_view s) { proj(c) = parse_value<T>(s, what); }};
}

template <class T, class Proj>
Field list(std::string section, std::string key, Proj proj, std::size_t fixed = 0) {
  const std::string what = section + "." + key;
  return {section, key,
          [proj](const Config& c) {
            std::string out;
            for (const auto& v : proj(const_cast<Config&>(c))) {
              if (!out.empty()) out += ", ";
              out += fmt_value(v);
            }
            return out;
          },
          [proj, what, fixed](Config& c, std::string_view s) {
            const auto items = kv::split_list(s);
            if (fixed && items.size() != fixed)
              throw ConfigError(what + ": expected " + std::to_string(fixed) + " values, got " +
                                std::to_string(items.size()));
            auto& dst = proj(c);
            using Container = std::decay_t<decltype(dst)>;
            Container out{};
            if constexpr (requires { out.push_back(T{}); }) {
              for (const auto& it : items) out.push_back(parse_value<T>(it, what));
            } else {
              for (std::size_t i = 0; i < items.size(); ++i) out[i] = parse_value<T>(items[i], what);
            }
            dst = out;
          }};
}

inline const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(scalar<std::size_t>("data", "num_classes", [](Config& c) -> auto& { return c.num_classes; }));
    f.push_back({"data", "range",
                 [](const Config& c) {
                   return kv::join_doubles(std::vector<double>{c.range.min[0], c.range.min[1], c.range.min[2],
                                                               c.range.max[0], c.range.max[1], c.range.max[2]});
                 },
                 [](Config& c, std::string_view s) {
                   const auto v = kv::parse_doubles(s, "data.range");
                   if (v.size() != 6) throw ConfigError("data.range: expected 6 values");
                   c.range.min = {v[0], v[1], v[2]};
                   c.range.max = {v[3], v[4], v[5]};
                 }});
    f.push_back(scalar<double>("data", "grid_cell", [](Config& c) -> auto& { return c.grid_cell; }));
    f.push_back(list<double>("data", "image_mean", [](Config& c) -> auto& { return c.image_norm.mean; }, 3));
    f.push_back(list<double>("data", "image_std", [](Config& c) -> auto& { return c.image_norm.std; }, 3));
    f.push_back(scalar<int>("data", "image_width", [](Config& c) -> auto& { return c.image_width; }));
    f.push_back(scalar<int>("data", "image_height", [](Config& c) -> auto& { return c.image_height; }));

    f.push_back(scalar<std::uint64_t>("scene", "seed", [](Config& c) -> auto& { return c.scene.seed; }));
    f.push_back(scalar<std::size_t>("scene", "train_scenes", [](Config& c) -> auto& { return c.scene.train_scenes; }));
    f.push_back(scalar<std::size_t>("scene", "val_scenes", [](Config& c) -> auto& { return c.scene.val_scenes; }));
    f.push_back(scalar<std::size_t>("scene", "num_points", [](Config& c) -> auto& { return c.scene.num_points; }));
    f.push_back({"scene", "cameras",
                 [](const Config& c) {
                   std::string out;
                   for (auto n : c.scene.cameras) out += (out.empty() ? "" : ", ") + std::string(geom::to_string(n));
                   return out;
                 },
                 [](Config& c, std::string_view s) {
                   c.scene.cameras.clear();
                   for (const auto& item : kv::split_list(s)) c.scene.cameras.push_back(geom::parse_camera_name(item));
                 }});
    f.push_back(scalar<int>("scene", "camera_width", [](Config& c) -> auto& { return c.scene.camera_width; }));
    f.push_back(scalar<int>("scene", "camera_height", [](Config& c) -> auto& { return c.scene.camera_height; }));
    f.push_back(scalar<double>("scene", "focal", [](Config& c) -> auto& { return c.scene.focal; }));
    f.push_back(scalar<bool>("scene", "ambiguous_pair", [](Config& c) -> auto& { return c.scene.ambiguous_pair; }));
    f.push_back(scalar<double>("scene", "color_noise", [](Config& c) -> auto& { return c.scene.color_noise; }));

    f.push_back({"serialization", "curves",
                 [](const Config& c) {
                   std::string out;
                   for (auto k : c.lidar.curves) out += (out.empty() ? "" : ", ") + std::string(curves::to_string(k));
                   return out;
                 },
                 [](Config& c, std::string_view s) {
                   c.lidar.curves.clear();
                   for (const auto& item : kv::split_list(s)) c.lidar.curves.push_back(curves::parse_curve_kind(item));
                 }});
    f.push_back(scalar<int>("serialization", "bits_per_axis", [](Config& c) -> auto& { return c.lidar.bits_per_axis; }));
    f.push_back(scalar<std::size_t>("serialization", "group_size", [](Config& c) -> auto& { return c.lidar.group_size; }));

    f.push_back(list<std::size_t>("channels", "lidar_enc", [](Config& c) -> auto& { return c.lidar.enc_channels; }));
    f.push_back(list<std::size_t>("channels", "lidar_dec", [](Config& c) -> auto& { return c.lidar.dec_channels; }));
    f.push_back(scalar<std::size_t>("channels", "image_stem", [](Config& c) -> auto& { return c.image_encoder.stem_channels; }));
    f.push_back(list<std::size_t>("channels", "image_enc", [](Config& c) -> auto& { return c.image_encoder.stage_channels; }));
    f.push_back(list<std::size_t>("channels", "image_neck", [](Config& c) -> auto& { return c.image_neck.out_channels; }));
    f.push_back(scalar<std::size_t>("channels", "fused_width", [](Config& c) -> auto& { return c.fusion.fused_width; }));
    f.push_back(scalar<std::size_t>("channels", "ffn_hidden", [](Config& c) -> auto& { return c.fusion.ffn_hidden; }));
    f.push_back(scalar<std::size_t>("channels", "heads", [](Config& c) -> auto& { return c.fusion.heads; }));
    f.push_back(scalar<std::size_t>("channels", "lidar_heads", [](Config& c) -> auto& { return c.lidar.heads; }));
    f.push_back(scalar<std::size_t>("channels", "image_blocks", [](Config& c) -> auto& { return c.image_encoder.blocks_per_stage; }));
    f.push_back(scalar<std::size_t>("channels", "lidar_blocks", [](Config& c) -> auto& { return c.lidar.blocks_per_stage; }));
    f.push_back(scalar<bool>("channels", "sffm_ffn", [](Config& c) -> auto& { return c.fusion.sffm_ffn; }));

    f.push_back(list<double>("augment.lidar", "rot_range", [](Config& c) -> auto& { return c.lidar_aug.rot_range; }, 2));
    f.push_back(scalar<double>("augment.lidar", "trans_sigma", [](Config& c) -> auto& { return c.lidar_aug.trans_sigma; }));
    f.push_back(list<double>("augment.lidar", "scale_range", [](Config& c) -> auto& { return c.lidar_aug.scale_range; }, 2));
    f.push_back(scalar<double>("augment.lidar", "flip_prob", [](Config& c) -> auto& { return c.lidar_aug.flip_prob; }));
    f.push_back(scalar<std::uint64_t>("augment.lidar", "seed", [](Config& c) -> auto& { return c.lidar_aug.seed; }));
    f.push_back(list<double>("augment.image", "scale_range", [](Config& c) -> auto& { return c.image_aug.scale_range; }, 2));
    f.push_back(list<double>("augment.image", "rot_range_deg", [](Config& c) -> auto& { return c.image_aug.rot_range_deg; }, 2));
    f.push_back(scalar<int>("augment.image", "crop_h", [](Config& c) -> auto& { return c.image_aug.crop_h; }));
    f.push_back(scalar<int>("augment.image", "crop_w", [](Config& c) -> auto& { return c.image_aug.crop_w; }));
    f.push_back(scalar<double>("augment.image", "brightness", [](Config& c) -> auto& { return c.image_aug.brightness; }));
    f.push_back(scalar<double>("augment.image", "contrast", [](Config& c) -> auto& { return c.image_aug.contrast; }));
    f.push_back(scalar<double>("augment.image", "saturation", [](Config& c) -> auto& { return c.image_aug.saturation; }));
    f.push_back(scalar<double>("augment.image", "hue", [](Config& c) -> auto& { return c.image_aug.hue; }));
    f.push_back(scalar<std::uint64_t>("augment.image", "seed", [](Config& c) -> auto& { return c.image_aug.seed; }));

    f.push_back(list<double>("tta", "scale_range", [](Config& c) -> auto& { return c.tta.scale_range; }, 2));
    f.push_back(list<double>("tta", "rot_range", [](Config& c) -> auto& { return c.tta.rot_range; }, 2));
    f.push_back(scalar<double>("tta", "trans_sigma", [](Config& c) -> auto& { return c.tta.trans_sigma; }));
    f.push_back(scalar<bool>("tta", "include_identity", [](Config& c) -> auto& { return c.tta.include_identity; }));

    f.push_back({"optim", "optimizer", [](const Config&) { return std::string("adamw"); },
                 [](Config&, std::string_view s) {
                   if (kv::trim(s) != "adamw") throw ConfigError("optim.optimizer: only adamw is supported");
                 }});
    f.push_back({"optim", "scheduler", [](const Config&) { return std::string("cosine"); },
                 [](Config&, std::string_view s) {
                   if (kv::trim(s) != "cosine") throw ConfigError("optim.scheduler: only cosine is supported");
                 }});
    f.push_back(scalar<double>("optim", "main_lr", [](Config& c) -> auto& { return c.optim.main_lr; }));
    f.push_back(scalar<double>("optim", "block_lr", [](Config& c) -> auto& { return c.optim.block_lr; }));
    f.push_back(scalar<double>("optim", "min_lr", [](Config& c) -> auto& { return c.optim.min_lr; }));
    f.push_back(scalar<double>("optim", "weight_decay", [](Config& c) -> auto& { return c.optim.weight_decay; }));
    f.push_back(scalar<double>("optim", "beta1", [](Config& c) -> auto& { return c.optim.beta1; }));
    f.push_back(scalar<double>("optim", "beta2", [](Config& c) -> auto& { return c.optim.beta2; }));
    f.push_back(scalar<double>("optim", "eps", [](Config& c) -> auto& { return c.optim.eps; }));

    f.push_back(scalar<double>("loss", "ce_weight", [](Config& c) -> auto& { return c.loss.ce_weight; }));
    f.push_back(scalar<double>("loss", "lovasz_weight", [](Config& c) -> auto& { return c.loss.lovasz_weight; }));
    f.push_back(scalar<double>("loss", "main_weight", [](Config& c) -> auto& { return c.loss.main_weight; }));
    f.push_back(scalar<double>("loss", "aux_lidar_weight", [](Config& c) -> auto& { return c.loss.aux_lidar_weight; }));
    f.push_back(scalar<double>("loss", "aux_camera_weight", [](Config& c) -> auto& { return c.loss.aux_camera_weight; }));

    f.push_back(scalar<std::size_t>("train", "epochs", [](Config& c) -> auto& { return c.train.epochs; }));
    f.push_back(scalar<std::size_t>("train", "batch_size", [](Config& c) -> auto& { return c.train.batch_size; }));
    f.push_back(scalar<std::size_t>("train", "max_steps", [](Config& c) -> auto& { return c.train.max_steps; }));
    f.push_back(scalar<std::uint64_t>("train", "seed", [](Config& c) -> auto& { return c.train.seed; }));
    f.push_back(scalar<bool>("train", "lidar_augment", [](Config& c) -> auto& { return c.train.lidar_augment; }));
    f.push_back(scalar<bool>("train", "image_augment", [](Config& c) -> auto& { return c.train.image_augment; }));
    for (Stage s : {Stage::lidar, Stage::image, Stage::fusion}) {
      const std::string sec = "stage." + std::string(to_string(s));
      auto pick = [s](Config& c) -> StageSchedule& {
        return s == Stage::lidar ? c.train.lidar : s == Stage::image ? c.train.image : c.train.fusion;
      };
      f.push_back(scalar<std::size_t>(sec, "epochs", [pick](Config& c) -> auto& { return pick(c).epochs; }));
      f.push_back(scalar<std::size_t>(sec, "batch_size", [pick](Config& c) -> auto& { return pick(c).batch_size; }));
    }
    return f;
  }();
  return table;
}

}  // namespace detail

/// Text form: one section per group, every field listed.
inline std::string dump_config(const Config& cfg) {
  std::ostringstream os;
  std::string section = "\x01";
  for (const auto& f : detail::fields()) {
    if (f.section != section) {
      if (section != "\x01") os << '\n';
      section = f.section;
      os << '[' << section << "]\n";
    }
    os << f.key << " = " << f.get(cfg) << '\n';
  }
  return os.str();
}

/// Starts from `base` and applies every key in `text`. Unknown sections or keys
/// and repeated keys are errors.
inline Config parse_config(std::string_view text, Config base = {}) {
  const auto sections = kv::parse(text);
  std::set<std::string> seen;
  for (const auto& sec : sections) {
    for (const auto& e : sec.entries) {
      const std::string full = sec.name.empty() ? e.key : sec.name + "." + e.key;
      const detail::Field* field = nullptr;
      for (const auto& f : detail::fields())
        if (f.section == sec.name && f.key == e.key) field = &f;
      if (!field) throw ConfigError("line " + std::to_string(e.line) + ": unknown config key '" + full + "'");
      if (!seen.insert(full).second)
        throw ConfigError("line " + std::to_string(e.line) + ": duplicate config key '" + full + "'");
      try {
        field->set(base, e.value);
      } catch (const ConfigError& err) {
        throw ConfigError("line " + std::to_string(e.line) + ": " + err.what());
      }
    }
  }
  base.finalize();
  return base;
}

inline Config load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

inline Config default_config() {
  Config c;
  c.finalize();
  return c;
}

}  // namespace vfs3d::harness
