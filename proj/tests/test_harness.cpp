#include <filesystem>
#include <numbers>
#include <sstream>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "vfs3d/harness/dataset.hpp"
#include "vfs3d/harness/metrics.hpp"
#include "vfs3d/harness/model.hpp"
#include "vfs3d/harness/train.hpp"
#include "vfs3d/nn/gradcheck.hpp"

using namespace vfs3d;
using namespace vfs3d::harness;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("vfs3d_test_harness_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::vector<PreparedScene> tiny_split(const Config& cfg, Split split) {
  return prepare_scenes(generate_split(cfg, split), cfg);
}

std::map<std::string, std::vector<nn::real>> snapshot(const nn::ParamStore& s) {
  std::map<std::string, std::vector<nn::real>> out;
  for (const auto& p : s.params()) out[p.name] = {p.var.value().begin(), p.var.value().end()};
  return out;
}

std::vector<int> as_int(const std::vector<std::uint16_t>& v) { return {v.begin(), v.end()}; }

}  // namespace

// --- configuration ---------------------------------------------------------

TEST(Config, DefaultsFollowTheTrainingRecipe) {
  const auto c = default_config();
  EXPECT_DOUBLE_EQ(c.optim.main_lr, 8e-4);
  EXPECT_DOUBLE_EQ(c.optim.block_lr, 8e-5);
  EXPECT_DOUBLE_EQ(c.optim.weight_decay, 5e-2);
  EXPECT_EQ(c.train.batch_size, 2u);
  EXPECT_DOUBLE_EQ(c.grid_cell, 0.1);
  EXPECT_EQ(c.lidar.enc_channels, (std::vector<std::size_t>{32, 64, 128, 256, 512}));
  EXPECT_EQ(c.lidar.dec_channels, (std::vector<std::size_t>{64, 64, 128, 256}));
  EXPECT_EQ(c.image_encoder.stage_channels, (std::vector<std::size_t>{32, 64, 128, 256, 512}));
  EXPECT_EQ(c.fusion.lidar_channels, 64u);
  EXPECT_EQ(c.fusion.camera_channels, 32u);
}

TEST(Config, RoundTrip) {
  for (const auto& c : {default_config(), fixtures::tiny_config()}) {
    const auto text = dump_config(c);
    const auto back = parse_config(text);
    EXPECT_TRUE(back == c);
    EXPECT_EQ(dump_config(back), text);
  }
}

TEST(Config, UnknownKeysAndBadValuesAreErrors) {
  EXPECT_THROW(parse_config("[optim]\nmain_lrr = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("[bogus]\nx = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("[optim]\nmain_lr = fast\n"), ConfigError);
  EXPECT_THROW(parse_config("[data]\ngrid_cell = -1\n"), ConfigError);
  EXPECT_EQ(parse_config("[optim]\nmain_lr = 0.5\n").optim.main_lr, 0.5);
  EXPECT_THROW(load_config("/nonexistent/vfs3d.cfg"), IoError);
}

// --- scenes ----------------------------------------------------------------

TEST(Scene, DeterministicAndExactPointCount) {
  const auto cfg = fixtures::tiny_config();
  const auto spec = scene_spec(cfg, Split::train, 0);
  const auto a = generate_scene(spec), b = generate_scene(spec);
  EXPECT_EQ(a.cloud.points, b.cloud.points);
  EXPECT_EQ(a.cloud.labels, b.cloud.labels);
  EXPECT_EQ(a.rig.images, b.rig.images);
  EXPECT_EQ(a.cloud.size(), 64u);
  for (auto l : *a.cloud.labels) EXPECT_LT(l, 6);
  EXPECT_NE(generate_scene(scene_spec(cfg, Split::train, 1)).cloud.points, a.cloud.points);
  auto bad = spec;
  bad.num_points = 0;
  EXPECT_THROW(generate_scene(bad), ConfigError);
}

TEST(Scene, PointsLandOnTheirClassColor) {
  auto spec = scene_spec(fixtures::tiny_config(), Split::train, 3);
  spec.num_points = 300;
  spec.color_noise = 0;
  const auto scene = generate_scene(spec);
  std::size_t visible = 0, agree = 0;
  for (std::size_t c = 0; c < scene.rig.cameras.size(); ++c) {
    const auto& cam = scene.rig.cameras[c];
    for (std::size_t i = 0; i < scene.cloud.size(); ++i) {
      const auto& p = scene.cloud.points[i];
      const auto label = (*scene.cloud.labels)[i];
      // Alone in the frame, a point paints its own class colour.
      const std::vector<RenderSample> one{{Eigen::Vector3d(p.x, p.y, p.z), label, 0.0}};
      const auto proj = geom::project_point(Eigen::Vector3d(p.x, p.y, p.z), cam);
      if (!proj.valid) continue;
      const auto solo = render_camera(one, cam, 0.0, Rng(0));
      const int u = static_cast<int>(std::floor(proj.u)), v = static_cast<int>(std::floor(proj.v));
      const std::array<double, 3> rgb{solo.image.at(v, u, 0), solo.image.at(v, u, 1), solo.image.at(v, u, 2)};
      ASSERT_EQ(classify_color(rgb), label);
      // In the full render, occlusion and neighbouring splats may take a few pixels.
      ++visible;
      const auto& img = scene.rig.images[c];
      agree += classify_color({img.at(v, u, 0), img.at(v, u, 1), img.at(v, u, 2)}) == label;
    }
  }
  ASSERT_GT(visible, 50u);
  // Nearer splats legitimately cover some returns; the solo check above is the exact one.
  EXPECT_GE(static_cast<double>(agree) / visible, 0.75);
}

TEST(Scene, SaveLoadRoundTrip) {
  const auto cfg = fixtures::tiny_config();
  const auto dir = scratch_dir("scenes");
  const auto scenes = generate_split(cfg, Split::train);
  save_scenes(dir, scenes);
  const auto back = load_scenes(dir);
  ASSERT_EQ(back.size(), scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    EXPECT_EQ(back[i].cloud.points, scenes[i].cloud.points);
    EXPECT_EQ(back[i].cloud.labels, scenes[i].cloud.labels);
    EXPECT_EQ(back[i].rig.images, scenes[i].rig.images);
    EXPECT_EQ(back[i].label_images[0].data, scenes[i].label_images[0].data);
  }
  EXPECT_THROW(load_scenes(dir / "missing"), IoError);
  fs::remove_all(dir);
}

// --- metrics ---------------------------------------------------------------

TEST(Metrics, Examples) {
  ConfusionMatrix perfect(3);
  const std::vector<std::uint16_t> t{0, 1, 2, 2, 1};
  perfect.add(t, t);
  EXPECT_DOUBLE_EQ(perfect.miou_percent(), 100.0);

  // class 0: tp 1, fn 1 -> 1/2; class 1: tp 2, fp 1 -> 2/3
  ConfusionMatrix cm(2);
  cm.add(0, 0);
  cm.add(0, 1);
  cm.add(1, 1);
  cm.add(1, 1);
  EXPECT_NEAR(cm.miou_percent(), 100.0 * (0.5 + 2.0 / 3.0) / 2, 1e-12);

  // Both classes at 3/4 -> 75%.
  ConfusionMatrix q(2);
  for (int i = 0; i < 3; ++i) q.add(0, 0), q.add(1, 1);
  q.add(0, 1);
  EXPECT_NEAR(q.iou()[0], 0.75, 1e-15);
  EXPECT_NEAR(q.iou()[1], 0.75, 1e-15);
  EXPECT_NEAR(q.miou_percent(), 75.0, 1e-12);

  // Classes absent from truth and prediction are left out of the mean.
  ConfusionMatrix sparse(4);
  sparse.add(1, 1);
  sparse.add(3, 3);
  EXPECT_EQ(sparse.iou()[0], -1.0);
  EXPECT_DOUBLE_EQ(sparse.miou_percent(), 100.0);
  EXPECT_EQ(sparse.total(), 2u);
  EXPECT_THROW(sparse.add(4, 0), ShapeError);
}

TEST(Metrics, MatchesCountingOracle) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    Rng rng(s);
    const std::size_t n = 1 + rng.below(60);
    std::vector<std::uint16_t> truth(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      truth[i] = static_cast<std::uint16_t>(rng.below(3));
      pred[i] = static_cast<std::uint16_t>(rng.below(3));
    }
    ConfusionMatrix cm(3);
    cm.add(truth, pred);
    EXPECT_EQ(cm.total(), n);
    EXPECT_NEAR(cm.miou_percent(), oracle::miou_percent(as_int(truth), as_int(pred), 3), 1e-12);
  }
}

TEST(Metrics, UniformRandomPredictorIou) {
  const std::size_t k = 6, n = 100000;
  Rng rng(42);
  ConfusionMatrix cm(k);
  for (std::size_t i = 0; i < n; ++i) cm.add(i % k, rng.below(k));
  const double expect = 1.0 / (2.0 * k - 1.0);
  for (double v : cm.iou()) EXPECT_NEAR(v, expect, 0.2 * expect);
}

TEST(Metrics, CsvAndSummary) {
  EXPECT_EQ(metrics_csv_header(3), "epoch,split,loss,miou,iou_0,iou_1,iou_2");
  EpochMetrics m{2, "train", 0.5, 0.25, {0.5, -1, 0}};
  EXPECT_EQ(metrics_csv_line(m), "2,train,0.5,0.25,0.5,nan,0");
  ConfusionMatrix cm(2);
  cm.add(0, 0);
  std::ostringstream os;
  const std::vector<std::string> names{"ground", "vehicle"};
  print_summary(os, cm, names);
  EXPECT_NE(os.str().find("ground"), std::string::npos);
  EXPECT_NE(os.str().find("100.00"), std::string::npos);
}

// --- model and training ----------------------------------------------------

TEST(Model, ParameterPrefixesAndGroups) {
  Model m(fixtures::tiny_config(), 1);
  for (const auto& p : m.store().params()) {
    const bool backbone = p.name.starts_with(kLidarPrefix) || p.name.starts_with(kImagePrefix);
    const bool head = p.name.starts_with(kLidarHeadPrefix) || p.name.starts_with(kImageHeadPrefix) ||
                      p.name.starts_with(kFusionPrefix);
    EXPECT_TRUE(backbone != head) << p.name;
    EXPECT_EQ(p.group, backbone ? nn::ParamGroup::block : nn::ParamGroup::main) << p.name;
  }
}

TEST(Model, LabelsAtFeatureCells) {
  // 4 rows by 8 columns inside an 8x8 padded input; a 2x2 map samples the corners.
  geom::LabelImage l(4, 8);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 8; ++x) l.at(y, x) = static_cast<std::uint16_t>(x < 4 ? 1 : 2);
  const auto cells = labels_at_feature_cells(l, 2, 2, 8, 8);
  EXPECT_EQ(cells, (std::vector<std::uint16_t>{1, 2, 255, 255}));
  // 3x3 over 9x9: the middle cell lands on pixel (4, 4).
  geom::LabelImage m(9, 9, 0);
  m.at(4, 4) = 3;
  EXPECT_EQ(labels_at_feature_cells(m, 3, 3, 9, 9)[4], 3);
}

TEST(Model, EndToEndGradientOnToyScene) {
  auto cfg = fixtures::tiny_config();
  SceneSpec spec = scene_spec(cfg, Split::train, 0);
  spec.num_points = 6;
  spec.width = spec.height = 16;
  spec.focal = 12;
  const auto scene = prepare_scene(generate_scene(spec), cfg);
  ASSERT_EQ(scene.cameras.size(), 2u);
  Model m(cfg, 3);
  const auto& labels = *scene.sampled.cloud.labels;
  auto loss = [&] {
    std::vector<geom::CameraFeatureMap> maps;
    for (const auto& img : scene.images) maps.push_back(m.camera_map(img));
    const auto cam = m.camera_features(scene.sampled.cloud, scene.cameras, maps);
    const auto lidar = m.lidar_features(scene.sampled.cloud);
    const auto ll = m.lidar_logits(lidar);
    const auto cl = m.image_logits(cam.features);
    const auto out = m.fuse(lidar, ll, cam, cl);
    return nn::add(segmentation_loss(out.logits, labels, cfg.loss),
                   nn::scale(nn::add(segmentation_loss(ll, labels, cfg.loss), segmentation_loss(cl, labels, cfg.loss)),
                             0.5));
  };
  // Zero biases put every padded pixel exactly on a ReLU kink; jitter to a generic point.
  Rng jitter(11);
  std::vector<nn::Var> in;
  for (const auto& p : m.store().params()) {
    nn::Var v = p.var;
    for (auto& x : v.mutable_value()) x += 0.01 * jitter.normal(0, 1);
    in.push_back(v);
  }
  nn::GradCheckOptions opt;
  opt.max_coords_per_input = 2;
  opt.seed = 5;
  const auto rep = nn::finite_diff_check(loss, in, 1e-3, opt);
  EXPECT_TRUE(rep.passed) << rep.max_rel_error << " at " << rep.worst;
  EXPECT_GT(rep.checked, 100u);
}

TEST(Freeze, Basics) {
  Model m(fixtures::tiny_config(), 1);
  EXPECT_TRUE(freeze_params(m.store(), {}).digests.empty());
  EXPECT_THROW(freeze_params(m.store(), {"lidar.encodr"}), ConfigError);
  const auto f = freeze_params(m.store(), {"lidar.", "image."});
  EXPECT_TRUE(f.covers("lidar.encoder.stage0.embed.weight"));
  EXPECT_FALSE(f.covers("lidar_head.linear.weight"));
  EXPECT_TRUE(changed_frozen(m.store(), f).empty());
  nn::Var w = m.store().find("lidar.encoder.stage0.embed.weight")->var;
  w.mutable_value()[0] += 1;
  EXPECT_EQ(changed_frozen(m.store(), f), (std::vector<std::string>{"lidar.encoder.stage0.embed.weight"}));
}

TEST(Freeze, FreezingEverythingLeavesNothingToStep) {
  Model m(fixtures::tiny_config(), 1);
  auto sc = stage_config(m.config(), Stage::lidar);
  const auto all = freeze_params(m.store(), {"lidar", "image", "fusion"});
  EXPECT_THROW(trainable_params(m.store(), sc, all), ConfigError);
  const auto before = snapshot(m.store());
  nn::OptimizerState st;
  nn::adamw_step(std::span<const nn::Parameter>(), st, nn::GroupRates::uniform(1));
  EXPECT_EQ(snapshot(m.store()), before);
}

TEST(Stage, FusionConfigFreezesBothBackbones) {
  const auto sc = stage_config(fixtures::tiny_config(), Stage::fusion);
  EXPECT_EQ(sc.frozen, (std::vector<std::string>{"lidar.", "image."}));
  EXPECT_EQ(stage_config(fixtures::tiny_config(), Stage::lidar).frozen.size(), 0u);
}

TEST(Stage, ZeroLearningRateChangesNothing) {
  const auto cfg = fixtures::tiny_config();
  const auto train = tiny_split(cfg, Split::train);
  for (Stage s : {Stage::lidar, Stage::image, Stage::fusion}) {
    Model m(cfg, 2);
    const auto before = snapshot(m.store());
    auto sc = stage_config(cfg, s);
    sc.schedule.main_lr = sc.schedule.block_lr = 0;
    const auto r = run_stage(m, train, sc, {});
    EXPECT_GT(r.steps, 0u);
    EXPECT_EQ(snapshot(m.store()), before) << to_string(s);
  }
}

TEST(Stage, LossDecreasesOverFirstTenLidarSteps) {
  auto cfg = fixtures::tiny_config();
  cfg.scene.num_points = 64;
  auto scene = prepare_scene(generate_scene(scene_spec(cfg, Split::train, 0)), cfg);
  Model m(cfg, 7);
  auto sc = stage_config(cfg, Stage::lidar);
  sc.epochs = 10;
  sc.batch_size = 1;
  sc.lidar_augment = false;
  sc.schedule.main_lr = sc.schedule.block_lr = 3e-3;
  std::vector<double> losses;
  StageOptions opt;
  opt.on_step = [&](const StepInfo& s) { losses.push_back(s.loss); };
  run_stage(m, {scene}, sc, opt);
  ASSERT_EQ(losses.size(), 10u);
  for (std::size_t i = 1; i < losses.size(); ++i) EXPECT_LT(losses[i], losses[i - 1]) << "step " << i;
}

TEST(Stage, FusionKeepsBackbonesAndWritesCheckpoints) {
  const auto cfg = fixtures::tiny_config();
  const auto train = tiny_split(cfg, Split::train);
  const auto dir = scratch_dir("fusion");
  Model m(cfg, 4);
  EXPECT_THROW(load_stage_prerequisites(m, dir, Stage::fusion), Error);
  run_stage(m, train, stage_config(cfg, Stage::lidar), {dir});
  try {
    load_stage_prerequisites(m, dir, Stage::fusion);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("image stage"), std::string::npos) << e.what();
  }
  run_stage(m, train, stage_config(cfg, Stage::image), {dir});
  EXPECT_TRUE(fs::exists(epoch_checkpoint_path(dir, Stage::lidar, 2)));
  EXPECT_EQ(latest_checkpoint(dir, Stage::lidar), epoch_checkpoint_path(dir, Stage::lidar, 2));

  Model fresh(cfg, 99);
  load_stage_prerequisites(fresh, dir, Stage::fusion);
  for (const auto& p : m.store().with_prefix("lidar."))
    EXPECT_EQ(snapshot(fresh.store())[p->name], snapshot(m.store())[p->name]);

  const auto backbone = [&] {
    auto s = snapshot(fresh.store());
    std::erase_if(s, [](const auto& kv) { return !(kv.first.starts_with("lidar.") || kv.first.starts_with("image.")); });
    return s;
  };
  const auto before = backbone();
  const auto r = run_stage(fresh, train, stage_config(cfg, Stage::fusion), {dir});
  EXPECT_EQ(backbone(), before);
  EXPECT_TRUE(changed_frozen(fresh.store(), r.frozen).empty());
  EXPECT_FALSE(r.frozen.digests.empty());

  // Stage checkpoints hold that stage's trainable parameters only.
  const auto ck = nn::read_checkpoint(*latest_checkpoint(dir, Stage::fusion));
  for (const auto& e : ck.entries) EXPECT_FALSE(e.name.starts_with("lidar.") || e.name.starts_with("image.")) << e.name;
  fs::remove_all(dir);
}

TEST(Stage, TwoRunsAreBitIdentical) {
  const auto cfg = fixtures::tiny_config();
  const auto train = tiny_split(cfg, Split::train);
  auto run = [&] {
    Model m(cfg, 5);
    std::ostringstream log;
    StageOptions opt;
    opt.log = &log;
    run_stage(m, train, stage_config(cfg, Stage::lidar), opt);
    run_stage(m, train, stage_config(cfg, Stage::image), opt);
    run_stage(m, train, stage_config(cfg, Stage::fusion), opt);
    return std::pair{snapshot(m.store()), log.str() + std::to_string(evaluate_miou(m, train, {}))};
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
}

// --- evaluation ------------------------------------------------------------

TEST(Eval, TtaOneEqualsPlainEvaluation) {
  const auto cfg = fixtures::tiny_config();
  const auto val = tiny_split(cfg, Split::val);
  Model m(cfg, 6);
  EvalOptions plain, one;
  one.tta = 1;
  const auto a = predict_sampled(m, val[0], plain), b = predict_sampled(m, val[0], one);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) ASSERT_EQ(a[i], b[i]);
  EvalOptions eight;
  eight.tta = 8;
  EXPECT_EQ(predict_sampled(m, val[0], eight).shape(), a.shape());
}

TEST(Eval, BroadcastMatchesRepresentativeLabeling) {
  const auto cfg = fixtures::tiny_config();
  auto scenes = tiny_split(cfg, Split::train);
  Model m(cfg, 8);
  for (Head h : {Head::fused, Head::lidar}) {
    EvalOptions opt;
    opt.head = h;
    const auto cm = evaluate(m, scenes, opt);
    std::vector<int> truth, pred;
    for (const auto& s : scenes) {
      const auto sampled_pred = argmax_rows(predict_sampled(m, s, opt));
      for (std::size_t i = 0; i < s.cloud.size(); ++i) {
        truth.push_back((*s.cloud.labels)[i]);
        // Label each original point with the prediction of its cell's kept point.
        std::size_t rep = 0;
        while (aug::cell_key(s.sampled.cloud.points[rep].xyz(), cfg.grid_cell) !=
               aug::cell_key(s.cloud.points[i].xyz(), cfg.grid_cell))
          ++rep;
        pred.push_back(sampled_pred[rep]);
      }
    }
    EXPECT_EQ(cm.total(), truth.size());
    EXPECT_NEAR(cm.miou_percent(), oracle::miou_percent(truth, pred, 6), 1e-12);
  }
  EXPECT_THROW(evaluate(m, {}, {}), Error);
}

TEST(Eval, CameraBlindWhenNothingIsVisible) {
  const auto cfg = fixtures::tiny_config();
  auto scenes = tiny_split(cfg, Split::val);
  Model m(cfg, 9);
  auto& s = scenes[0];
  // Cameras far away and facing off the scene see no point.
  for (auto& cam : s.cameras)
    cam = geom::make_camera(cam.name, std::numbers::pi / 4, 0.0, {1000, 1000, 0}, cam.width, cam.height, cam.fx, cam.fy);
  EvalOptions blind;
  blind.use_camera = false;
  const auto a = predict_sampled(m, s, blind), b = predict_sampled(m, s, {});
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}
