#pragma once

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "vfs3d/aug/image_aug.hpp"
#include "vfs3d/aug/lidar_aug.hpp"
#include "vfs3d/aug/tta.hpp"
#include "vfs3d/core/hash.hpp"
#include "vfs3d/harness/dataset.hpp"
#include "vfs3d/harness/metrics.hpp"
#include "vfs3d/harness/model.hpp"
#include "vfs3d/nn/checkpoint.hpp"
#include "vfs3d/nn/optim.hpp"

namespace vfs3d::harness {

// ---------------------------------------------------------------------------
// Freezing

inline std::uint64_t value_digest(const nn::Var& v) {
  const auto vals = v.value();
  return fnv1a(std::string_view(reinterpret_cast<const char*>(vals.data()), vals.size() * sizeof(nn::real)));
}

/// Names and value digests of every parameter under the frozen prefixes.
struct FrozenSet {
  std::vector<std::string> prefixes;
  std::map<std::string, std::uint64_t> digests;

  bool covers(std::string_view name) const {
    return std::any_of(prefixes.begin(), prefixes.end(), [&](const auto& p) { return name.starts_with(p); });
  }
};

inline FrozenSet freeze_params(const nn::ParamStore& store, const std::vector<std::string>& prefixes) {
  FrozenSet f;
  f.prefixes = prefixes;
  for (const auto& pre : prefixes) {
    const auto hits = store.with_prefix(pre);
    if (hits.empty()) throw ConfigError("freeze prefix '" + pre + "' matches no parameter");
    for (const auto* p : hits) f.digests[p->name] = value_digest(p->var);
  }
  return f;
}

/// Frozen parameters whose values differ from the recorded digest.
inline std::vector<std::string> changed_frozen(const nn::ParamStore& store, const FrozenSet& f) {
  std::vector<std::string> out;
  for (const auto& [name, digest] : f.digests) {
    const auto* p = store.find(name);
    if (!p || value_digest(p->var) != digest) out.push_back(name);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Stage configuration

struct TrainStageConfig {
  Stage stage = Stage::lidar;
  std::size_t epochs = 1;
  std::size_t batch_size = 1;
  std::size_t max_steps = 0;  // 0 = no cap
  std::vector<std::string> trainable;  // parameter prefixes updated by the optimizer
  std::vector<std::string> frozen;     // prefixes whose values must not change
  nn::ScheduleConfig schedule;
  nn::AdamWConfig adamw;
  LossConfig loss;
  bool lidar_augment = false;
  bool image_augment = false;
  std::uint64_t seed = 0;
};

inline TrainStageConfig stage_config(const Config& cfg, Stage stage) {
  TrainStageConfig s;
  s.stage = stage;
  s.epochs = cfg.train.epochs_for(stage);
  s.batch_size = cfg.train.batch_for(stage);
  s.max_steps = cfg.train.max_steps;
  s.schedule = {cfg.optim.main_lr, cfg.optim.block_lr, 1, cfg.optim.min_lr};
  s.adamw = cfg.adamw();
  s.loss = cfg.loss;
  s.seed = cfg.train.seed;
  switch (stage) {
    case Stage::lidar:
      s.trainable = {std::string(kLidarPrefix), std::string(kLidarHeadPrefix)};
      s.lidar_augment = cfg.train.lidar_augment;
      break;
    case Stage::image:
      s.trainable = {std::string(kImagePrefix), std::string(kImageHeadPrefix)};
      s.image_augment = cfg.train.image_augment;
      break;
    case Stage::fusion:
      s.trainable = {std::string(kFusionPrefix), std::string(kLidarHeadPrefix), std::string(kImageHeadPrefix)};
      s.frozen = {std::string(kLidarPrefix), std::string(kImagePrefix)};
      s.lidar_augment = cfg.train.lidar_augment;
      break;
  }
  if (s.epochs == 0 || s.batch_size == 0) throw ConfigError("stage epochs and batch size must be positive");
  return s;
}

inline std::vector<nn::Parameter> trainable_params(const nn::ParamStore& store, const TrainStageConfig& sc,
                                                   const FrozenSet& frozen) {
  std::vector<nn::Parameter> out;
  for (const auto& p : store.params()) {
    if (frozen.covers(p.name)) continue;
    if (std::any_of(sc.trainable.begin(), sc.trainable.end(), [&](const auto& pre) { return p.name.starts_with(pre); }))
      out.push_back(p);
  }
  if (out.empty()) throw ConfigError("stage '" + std::string(to_string(sc.stage)) + "' has no trainable parameters");
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint files

inline std::filesystem::path epoch_checkpoint_path(const std::filesystem::path& dir, Stage s, std::size_t epoch) {
  return dir / ("stage-" + std::string(to_string(s)) + "-epoch-" + std::to_string(epoch) + ".ckpt");
}

/// Text file holding the file name of the stage's most recent checkpoint.
inline std::filesystem::path latest_manifest_path(const std::filesystem::path& dir, Stage s) {
  return dir / ("stage-" + std::string(to_string(s)) + "-latest");
}

inline std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& dir, Stage s) {
  std::ifstream is(latest_manifest_path(dir, s));
  if (!is) return std::nullopt;
  std::string name;
  std::getline(is, name);
  const auto p = dir / name;
  if (name.empty() || !std::filesystem::exists(p)) return std::nullopt;
  return p;
}

inline std::filesystem::path require_stage_checkpoint(const std::filesystem::path& dir, Stage s) {
  auto p = latest_checkpoint(dir, s);
  if (!p)
    throw Error("missing " + std::string(to_string(s)) + " stage checkpoint in '" + dir.string() +
                "'; run the " + std::string(to_string(s)) + " stage first");
  return *p;
}

// ---------------------------------------------------------------------------
// Training

struct StepInfo {
  std::size_t step = 0;  // 1-based count of optimizer updates so far
  std::size_t epoch = 0;
  double loss = 0;
  nn::GroupRates lr;
};

struct StageOptions {
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints written
  std::ostream* log = nullptr;           // per-epoch CSV lines
  std::function<void(const StepInfo&)> on_step;
  const std::vector<PreparedScene>* val = nullptr;
};

struct StageResult {
  std::size_t steps = 0;
  std::vector<EpochMetrics> history;
  std::vector<std::filesystem::path> checkpoints;
  FrozenSet frozen;
};

namespace detail {

/// Backbone outputs reused across fusion steps.
struct FusionCache {
  nn::Var lidar;   // constant, un-augmented
  nn::Var camera;  // constant N x C
  geom::GatheredFeatures gathered;
};

inline std::vector<geom::CameraFeatureMap> camera_maps(const Model& m, const PreparedScene& s) {
  std::vector<geom::CameraFeatureMap> maps;
  for (const auto& img : s.images) maps.push_back(m.camera_map(img));
  return maps;
}

inline FusionCache fusion_cache(const Model& m, const PreparedScene& s) {
  nn::NoGradGuard ng;
  FusionCache c;
  c.lidar = m.lidar_features(s.sampled.cloud).detach();
  const auto maps = camera_maps(m, s);
  c.gathered = m.camera_features(s.sampled.cloud, s.cameras, maps);
  c.gathered.features = c.gathered.features.detach();
  c.camera = c.gathered.features;
  return c;
}

inline std::vector<std::size_t> valid_rows(std::span<const std::uint8_t> mask) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) out.push_back(i);
  return out;
}

template <class T>
std::vector<T> pick(std::span<const T> v, std::span<const std::size_t> idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(v[i]);
  return out;
}

/// Fused loss for one scene given (possibly augmented) LiDAR features.
inline nn::Var fusion_loss(const Model& m, const nn::Var& lidar, const FusionCache& c,
                           std::span<const std::uint16_t> labels, const LossConfig& lc, nn::Var* logits_out) {
  const nn::Var lidar_logits = m.lidar_logits(lidar);
  const nn::Var camera_logits = m.image_logits(c.camera);
  const auto out = m.fuse(lidar, lidar_logits, c.gathered, camera_logits, true);
  if (logits_out) *logits_out = out.logits;
  nn::Var loss = nn::scale(segmentation_loss(out.logits, labels, lc), static_cast<nn::real>(lc.main_weight));
  if (lc.aux_lidar_weight != 0)
    loss = nn::add(loss, nn::scale(segmentation_loss(lidar_logits, labels, lc), static_cast<nn::real>(lc.aux_lidar_weight)));
  const auto rows = valid_rows(c.gathered.mask);
  if (lc.aux_camera_weight != 0 && !rows.empty()) {
    const auto lab = pick<std::uint16_t>(labels, rows);
    loss = nn::add(loss, nn::scale(segmentation_loss(nn::gather_rows(camera_logits, rows), lab, lc),
                                   static_cast<nn::real>(lc.aux_camera_weight)));
  }
  return loss;
}

inline const std::vector<std::uint16_t>& sampled_labels(const PreparedScene& s) {
  if (!s.sampled.cloud.labels) throw Error("training scene '" + s.cloud.frame_id + "' has no labels");
  return *s.sampled.cloud.labels;
}

}  // namespace detail

/// Runs one training stage in memory. Units are scenes for the LiDAR and
/// fusion stages and (scene, camera) images for the image stage.
inline StageResult run_stage(Model& model, const std::vector<PreparedScene>& train, const TrainStageConfig& sc,
                             const StageOptions& opt = {});

// ---------------------------------------------------------------------------
// Evaluation

enum class Head { fused, lidar, camera };

inline std::string_view to_string(Head h) {
  return h == Head::fused ? "fused" : h == Head::lidar ? "lidar" : "camera";
}

struct EvalOptions {
  Head head = Head::fused;
  bool use_camera = true;
  std::size_t tta = 0;  // variant count, identity included; 0 disables test-time augmentation
  aug::TtaConfig tta_config;
  std::uint64_t seed = 0;
};

/// Per-point logits on the grid-sampled cloud, averaged over TTA variants.
inline nn::Var predict_sampled(const Model& model, const PreparedScene& s, const EvalOptions& opt) {
  nn::NoGradGuard ng;
  std::vector<geom::LidarPointCloud> clouds;
  if (opt.tta == 0) {
    clouds.push_back(s.sampled.cloud);
  } else {
    aug::TtaConfig tc = opt.tta_config;
    tc.count = opt.tta;
    tc.include_identity = true;
    for (auto& v : aug::make_tta_variants(s.sampled.cloud, tc, Rng(opt.seed).split(fnv1a(s.cloud.frame_id))))
      clouds.push_back(std::move(v.cloud));
  }
  // Camera features are always looked up at the un-augmented coordinates.
  std::optional<detail::FusionCache> cache;
  if (opt.head != Head::lidar) cache = detail::fusion_cache(model, s);
  std::vector<nn::Var> logits;
  for (const auto& cl : clouds) {
    if (opt.head == Head::camera) {
      logits.push_back(model.image_logits(cache->camera));
      break;
    }
    const nn::Var lidar = model.lidar_features(cl);
    const nn::Var ll = model.lidar_logits(lidar);
    if (opt.head == Head::lidar) {
      logits.push_back(ll);
      continue;
    }
    const nn::Var cl_logits = model.image_logits(cache->camera);
    logits.push_back(model.fuse(lidar, ll, cache->gathered, cl_logits, opt.use_camera).logits);
  }
  return aug::aggregate_tta_logits(std::span<const nn::Var>(logits));
}

/// Confusion over original (cropped, full-resolution) points. The camera head
/// is scored only on points some camera sees.
inline ConfusionMatrix evaluate(const Model& model, const std::vector<PreparedScene>& scenes, const EvalOptions& opt) {
  if (scenes.empty()) throw Error("evaluate: empty dataset");
  ConfusionMatrix cm(model.config().num_classes);
  for (const auto& s : scenes) {
    if (!s.cloud.labels) throw Error("evaluate: scene '" + s.cloud.frame_id + "' has no labels");
    const auto pred = argmax_rows(predict_sampled(model, s, opt));
    std::vector<std::uint8_t> seen;
    if (opt.head == Head::camera) seen = detail::fusion_cache(model, s).gathered.mask;
    const auto& truth = *s.cloud.labels;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      const auto r = s.sampled.inverse[i];
      if (!seen.empty() && !seen[r]) continue;
      cm.add(truth[i], pred[r]);
    }
  }
  return cm;
}

inline double evaluate_miou(const Model& model, const std::vector<PreparedScene>& scenes, const EvalOptions& opt) {
  return evaluate(model, scenes, opt).miou_percent();
}

// ---------------------------------------------------------------------------

inline StageResult run_stage(Model& model, const std::vector<PreparedScene>& train, const TrainStageConfig& sc,
                             const StageOptions& opt) {
  if (train.empty()) throw Error("run_stage: empty training set");
  const auto& cfg = model.config();
  StageResult res;
  res.frozen = freeze_params(model.store(), sc.frozen);
  const auto params = trainable_params(model.store(), sc, res.frozen);

  struct Unit {
    std::size_t scene, camera;
  };
  std::vector<Unit> units;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (sc.stage == Stage::image)
      for (std::size_t c = 0; c < train[i].images.size(); ++c) units.push_back({i, c});
    else
      units.push_back({i, 0});
  }
  const std::size_t per_epoch = (units.size() + sc.batch_size - 1) / sc.batch_size;
  std::size_t total = sc.epochs * per_epoch;
  if (sc.max_steps) total = std::min(total, sc.max_steps);
  nn::ScheduleConfig sched = sc.schedule;
  sched.total_steps = total;

  std::vector<detail::FusionCache> cache;
  if (sc.stage == Stage::fusion)
    for (const auto& s : train) cache.push_back(detail::fusion_cache(model, s));

  nn::OptimizerState state;
  state.config = sc.adamw;
  const Rng base = Rng(sc.seed).split(fnv1a(to_string(sc.stage)));
  if (!opt.checkpoint_dir.empty()) std::filesystem::create_directories(opt.checkpoint_dir);
  if (opt.log) *opt.log << metrics_csv_header(cfg.num_classes) << "\n";

  for (std::size_t epoch = 1; epoch <= sc.epochs && res.steps < total; ++epoch) {
    const Rng erng = base.split(epoch);
    std::vector<std::size_t> order(units.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle = erng.split(0);
    std::shuffle(order.begin(), order.end(), shuffle);
    ConfusionMatrix cm(cfg.num_classes);
    double loss_sum = 0;
    std::size_t loss_count = 0;

    for (std::size_t b0 = 0; b0 < order.size() && res.steps < total; b0 += sc.batch_size) {
      const std::size_t b1 = std::min(order.size(), b0 + sc.batch_size);
      nn::Var batch_loss;
      for (std::size_t bi = b0; bi < b1; ++bi) {
        const Unit u = units[order[bi]];
        const auto& s = train[u.scene];
        Rng urng = erng.split(1 + order[bi]).split(sc.stage == Stage::image ? cfg.image_aug.seed : cfg.lidar_aug.seed);
        nn::Var loss, logits;
        std::vector<std::uint16_t> truth;
        switch (sc.stage) {
          case Stage::lidar: {
            geom::LidarPointCloud cl = s.sampled.cloud;
            if (sc.lidar_augment) cl = aug::augment_lidar(cl, cfg.lidar_aug, urng).first;
            truth = detail::sampled_labels(s);
            logits = model.lidar_logits(model.lidar_features(cl));
            loss = segmentation_loss(logits, truth, sc.loss);
            break;
          }
          case Stage::image: {
            geom::Image img = s.raw_images[u.camera];
            geom::LabelImage lab = s.label_images[u.camera];
            if (sc.image_augment) {
              const auto p = aug::sample_image_aug(img.height, img.width, cfg.image_aug, urng);
              img = aug::apply_image_aug(img, p);
              lab = aug::warp_labels(lab, p);
            }
            const int stride = static_cast<int>(cfg.image_encoder.stride());
            const auto fm = model.camera_map(backbones::pad_image(geom::normalize_image(img, cfg.image_norm), stride));
            truth = labels_at_feature_cells(lab, fm.features.dim(1), fm.features.dim(2), fm.source_width,
                                            fm.source_height);
            logits = model.pixel_logits(fm);
            const bool any = std::any_of(truth.begin(), truth.end(),
                                         [](auto l) { return l != geom::LabelImage::kIgnoreLabel; });
            if (!any) continue;
            loss = segmentation_loss(logits, truth, sc.loss, geom::LabelImage::kIgnoreLabel);
            break;
          }
          case Stage::fusion: {
            nn::Var lidar = cache[u.scene].lidar;
            if (sc.lidar_augment) {
              nn::NoGradGuard ng;
              lidar = model.lidar_features(aug::augment_lidar(s.sampled.cloud, cfg.lidar_aug, urng).first).detach();
            }
            truth = detail::sampled_labels(s);
            loss = detail::fusion_loss(model, lidar, cache[u.scene], truth, sc.loss, &logits);
            break;
          }
        }
        const auto pred = argmax_rows(logits);
        for (std::size_t i = 0; i < truth.size(); ++i)
          if (truth[i] != geom::LabelImage::kIgnoreLabel) cm.add(truth[i], pred[i]);
        batch_loss = batch_loss.defined() ? nn::add(batch_loss, loss) : loss;
      }
      if (!batch_loss.defined()) continue;
      batch_loss = nn::scale(batch_loss, nn::real(1) / static_cast<nn::real>(b1 - b0));
      model.store().zero_grad();
      batch_loss.backward();
      const auto rates = nn::GroupRates::at(res.steps, sched);
      nn::adamw_step(params, state, rates);
      ++res.steps;
      loss_sum += batch_loss.item();
      ++loss_count;
      if (opt.on_step) opt.on_step({res.steps, epoch, batch_loss.item(), rates});
    }
    model.store().zero_grad();

    EpochMetrics em{epoch, "train", loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0, cm.miou(), cm.iou()};
    if (opt.log) *opt.log << metrics_csv_line(em) << "\n";
    res.history.push_back(em);
    if (opt.val && !opt.val->empty()) {
      EvalOptions eo;
      eo.head = sc.stage == Stage::lidar ? Head::lidar : sc.stage == Stage::image ? Head::camera : Head::fused;
      const auto vcm = evaluate(model, *opt.val, eo);
      EpochMetrics vm{epoch, "val", 0.0, vcm.miou(), vcm.iou()};
      if (opt.log) *opt.log << metrics_csv_line(vm) << "\n";
      res.history.push_back(vm);
    }
    if (!opt.checkpoint_dir.empty()) {
      const auto path = epoch_checkpoint_path(opt.checkpoint_dir, sc.stage, epoch);
      nn::write_checkpoint(path, params, res.steps);
      std::ofstream(latest_manifest_path(opt.checkpoint_dir, sc.stage)) << path.filename().string() << "\n";
      res.checkpoints.push_back(path);
    }
  }
  const auto changed = changed_frozen(model.store(), res.frozen);
  if (!changed.empty()) throw Error("frozen parameter '" + changed.front() + "' changed during training");
  return res;
}

/// Loads the prerequisites of `stage` from `dir`: the fusion stage needs both
/// backbone checkpoints.
inline void load_stage_prerequisites(Model& model, const std::filesystem::path& dir, Stage stage) {
  if (stage != Stage::fusion) return;
  const auto lidar = require_stage_checkpoint(dir, Stage::lidar);
  const auto image = require_stage_checkpoint(dir, Stage::image);
  nn::load_checkpoint(lidar, model.store());
  nn::load_checkpoint(image, model.store());
}

/// Loads whatever stage checkpoints exist in `dir`, in stage order. Returns
/// the stages found.
inline std::vector<Stage> load_available_stages(Model& model, const std::filesystem::path& dir) {
  std::vector<Stage> found;
  for (Stage s : {Stage::lidar, Stage::image, Stage::fusion})
    if (auto p = latest_checkpoint(dir, s)) {
      nn::load_checkpoint(*p, model.store());
      found.push_back(s);
    }
  return found;
}

}  // namespace vfs3d::harness
