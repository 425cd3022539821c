#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vfs3d/curves/curves.hpp"
#include "vfs3d/harness/dataset.hpp"
#include "vfs3d/harness/gradcheck_suite.hpp"
#include "vfs3d/harness/train.hpp"

namespace fs = std::filesystem;
using namespace vfs3d;
using namespace vfs3d::harness;

namespace {

Config config_from(const std::string& path) { return path.empty() ? default_config() : load_config(path); }

std::vector<std::string> class_names(std::size_t k) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < k; ++i)
    out.emplace_back(i < kSceneClassNames.size() ? std::string(kSceneClassNames[i]) : "class " + std::to_string(i));
  return out;
}

int cmd_generate(const Config& cfg, const fs::path& out) {
  for (Split s : {Split::train, Split::val}) {
    const auto scenes = generate_split(cfg, s);
    save_scenes(out / std::string(to_string(s)), scenes);
    std::cout << "wrote " << scenes.size() << " " << to_string(s) << " scenes to " << (out / std::string(to_string(s))).string()
              << "\n";
  }
  std::ofstream(out / "config.cfg") << dump_config(cfg);
  return 0;
}

int cmd_train(const Config& cfg, Stage stage, const fs::path& data, const fs::path& ckpt) {
  const auto train = prepare_scenes(load_scenes(data / "train"), cfg);
  if (train.empty()) throw Error("no training scenes in '" + (data / "train").string() + "'");
  std::vector<PreparedScene> val;
  if (fs::is_directory(data / "val")) val = prepare_scenes(load_scenes(data / "val"), cfg);
  Model model(cfg, cfg.train.seed);
  load_stage_prerequisites(model, ckpt, stage);
  fs::create_directories(ckpt);
  std::ofstream csv(ckpt / ("metrics-" + std::string(to_string(stage)) + ".csv"));
  StageOptions opt;
  opt.checkpoint_dir = ckpt;
  opt.log = &csv;
  opt.val = val.empty() ? nullptr : &val;
  const auto t0 = std::chrono::steady_clock::now();
  const auto res = run_stage(model, train, stage_config(cfg, stage), opt);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::cout << "stage " << to_string(stage) << ": " << res.steps << " steps in " << secs << " s, final train mIoU "
            << 100.0 * res.history[res.history.size() - (val.empty() ? 1 : 2)].miou << "%\n";
  if (!res.checkpoints.empty()) std::cout << "checkpoint " << res.checkpoints.back().string() << "\n";
  return 0;
}

int cmd_eval(const Config& cfg, const fs::path& data, const fs::path& ckpt, std::size_t tta, const std::string& head,
             const std::string& split) {
  EvalOptions eo;
  eo.head = head == "lidar" ? Head::lidar : head == "camera" ? Head::camera : Head::fused;
  eo.tta = tta;
  eo.tta_config = cfg.tta;
  eo.seed = cfg.train.seed;
  Model model(cfg, cfg.train.seed);
  const auto found = load_available_stages(model, ckpt);
  auto need = [&](Stage s) {
    if (std::find(found.begin(), found.end(), s) == found.end())
      throw Error("missing " + std::string(to_string(s)) + " stage checkpoint in '" + ckpt.string() + "'");
  };
  if (eo.head != Head::camera) need(Stage::lidar);
  if (eo.head != Head::lidar) need(Stage::image);
  if (eo.head == Head::fused) need(Stage::fusion);
  const auto scenes = prepare_scenes(load_scenes(data / split), cfg);
  const auto cm = evaluate(model, scenes, eo);
  const auto names = class_names(cfg.num_classes);
  std::cout << "head " << to_string(eo.head) << ", split " << split << ", tta " << tta << "\n";
  print_summary(std::cout, cm, names);
  std::cout << "miou " << kv::format_double(cm.miou_percent()) << "\n";
  return 0;
}

int cmd_serialize_bench(const std::vector<int>& bits_list, std::size_t points) {
  std::cout << "kind,bits,mean_adjacent_code_gap,encode_ns_per_point\n";
  Rng rng(7);
  std::vector<curves::Cell> cells(points);
  for (int bits : bits_list) {
    const std::uint32_t n = std::uint32_t{1} << bits;
    for (auto& c : cells)
      for (auto& v : c) v = static_cast<std::uint32_t>(rng.below(n));
    for (auto kind : curves::kAllCurves) {
      const double gap = curves::mean_adjacent_code_gap(kind, bits);
      std::uint64_t sink = 0;
      const auto t0 = std::chrono::steady_clock::now();
      for (const auto& c : cells) sink ^= curves::encode(c, bits, kind).code;
      const double ns = std::chrono::duration<double, std::nano>(std::chrono::steady_clock::now() - t0).count();
      if (sink == 0x5eed) std::cerr << "";
      std::cout << to_string(kind) << "," << bits << "," << kv::format_double(gap) << ","
                << kv::format_double(ns / static_cast<double>(cells.size())) << "\n";
    }
  }
  return 0;
}

int cmd_gradcheck() {
  bool ok = true;
  for (const auto& c : gradcheck_suite()) {
    const auto r = c.run();
    ok = ok && r.passed;
    std::cout << (r.passed ? "PASS " : "FAIL ") << c.name << " max_rel_error=" << r.max_rel_error
              << " tol=" << (c.composite ? kCompositeTolerance : kOpTolerance) << " checked=" << r.checked
              << (r.passed ? "" : " worst=" + r.worst) << "\n";
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Desk-scale LiDAR + camera 3D semantic segmentation"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("--config", config_path, "key = value config file")->check(CLI::ExistingFile);

  auto* gen = app.add_subcommand("generate", "write synthetic train/val scenes");
  std::string gen_out = "data";
  gen->add_option("--out", gen_out, "output directory");

  auto* train = app.add_subcommand("train", "run one training stage");
  std::string stage_name, data_dir = "data", ckpt_dir = "checkpoints";
  train->add_option("--stage", stage_name, "lidar, image or fusion")->required()->check(
      CLI::IsMember({"lidar", "image", "fusion"}));
  train->add_option("--data", data_dir, "dataset directory");
  train->add_option("--checkpoints", ckpt_dir, "checkpoint directory");

  auto* eval = app.add_subcommand("eval", "evaluate mIoU");
  std::size_t tta = 0;
  std::string head = "fused", split = "val";
  eval->add_option("--tta", tta, "number of test-time variants (identity included)");
  eval->add_option("--data", data_dir, "dataset directory");
  eval->add_option("--checkpoints", ckpt_dir, "checkpoint directory");
  eval->add_option("--head", head, "fused, lidar or camera")->check(CLI::IsMember({"fused", "lidar", "camera"}));
  eval->add_option("--split", split, "train or val")->check(CLI::IsMember({"train", "val"}));

  auto* bench = app.add_subcommand("serialize-bench", "curve locality and encode speed as CSV");
  std::vector<int> bits{3, 4, 5};
  std::size_t bench_points = 100000;
  bench->add_option("--bits", bits, "bits per axis (1..7)")->check(CLI::Range(1, 7));
  bench->add_option("--points", bench_points, "random cells to encode");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference checks of every differentiable op");

  for (auto* sub : {gen, train, eval, bench, grad}) sub->allow_extras(false);
  app.allow_extras(false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    const Config cfg = config_from(config_path);
    if (*gen) return cmd_generate(cfg, gen_out);
    if (*train) return cmd_train(cfg, parse_stage(stage_name), data_dir, ckpt_dir);
    if (*eval) return cmd_eval(cfg, data_dir, ckpt_dir, tta, head, split);
    if (*bench) return cmd_serialize_bench(bits, bench_points);
    if (*grad) return cmd_gradcheck();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
