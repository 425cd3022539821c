#include <numeric>

#include <gtest/gtest.h>

#include "vfs3d/fusion/fusion.hpp"
#include "vfs3d/harness/gradcheck_suite.hpp"
#include "vfs3d/nn/optim.hpp"

using namespace vfs3d;
using namespace vfs3d::fusion;
using harness::gc::param;
using harness::gc::probe;

namespace {

FusionConfig toy_config() {
  FusionConfig c;
  c.num_classes = 3;
  c.lidar_channels = 4;
  c.camera_channels = 3;
  c.fused_width = 8;
  c.heads = 2;
  c.ffn_hidden = 6;
  return c;
}

std::vector<nn::Var> params_of(const nn::ParamStore& s) {
  std::vector<nn::Var> out;
  for (const auto& p : s.params()) out.push_back(p.var);
  return out;
}

nn::Var one_hot_logits(const std::vector<std::size_t>& cls, std::size_t k) {
  std::vector<nn::real> v(cls.size() * k, -1e3);
  for (std::size_t i = 0; i < cls.size(); ++i) v[i * k + cls[i]] = 1e3;
  return nn::Var::constant({cls.size(), k}, v);
}

}  // namespace

TEST(Gffm, MaskedCameraIsIgnored) {
  nn::ParamStore store(1);
  const auto cfg = toy_config();
  Gffm g(store, "g", cfg);
  Rng rng(1);
  nn::Var lidar = param({5, 4}, rng), cam_a = param({5, 3}, rng), cam_b = param({5, 3}, rng);
  const std::vector<std::uint8_t> none(5, 0);
  const auto a = g(lidar, cam_a, none), b = g(lidar, cam_b, none);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
  EXPECT_EQ(g(param({1, 4}, rng), param({1, 3}, rng), std::vector<std::uint8_t>{1}).shape(), (nn::Shape{1, 8}));
  EXPECT_THROW(g(lidar, param({4, 3}, rng), none), ShapeError);
}

TEST(Gffm, FiniteDifferenceOnSixPoints) {
  nn::ParamStore store(2);
  Gffm g(store, "g", toy_config());
  Rng rng(2);
  nn::Var lidar = param({6, 4}, rng), cam = param({6, 3}, rng);
  const std::vector<std::uint8_t> mask{1, 0, 1, 1, 0, 1};
  auto in = params_of(store);
  in.push_back(lidar);
  in.push_back(cam);
  const auto rep = nn::finite_diff_check([&] { return probe(g(lidar, cam, mask)); }, in, harness::kOpTolerance);
  EXPECT_TRUE(rep.passed) << rep.max_rel_error;
}

TEST(Sfam, OneHotPoolsClassMeans) {
  nn::ParamStore store(3);
  Sfam s(store, "s", 2, toy_config());
  const nn::Var feats = nn::Var::constant({4, 2}, {1, 2, 3, 4, 10, 20, 5, 6});
  const auto out = s(feats, nn::softmax_rows(one_hot_logits({0, 0, 2, 0}, 3)));
  EXPECT_EQ(out.present, (std::vector<std::uint8_t>{1, 0, 1}));
  EXPECT_NEAR(out.pooled.at(0, 0), 3.0, 1e-9);
  EXPECT_NEAR(out.pooled.at(0, 1), 4.0, 1e-9);
  EXPECT_NEAR(out.pooled.at(2, 0), 10.0, 1e-9);
  const auto null = store.find("s.null")->var;
  EXPECT_EQ(out.pooled.at(1, 0), null[0]);
  EXPECT_EQ(out.pooled.at(1, 1), null[1]);
  EXPECT_EQ(out.embeddings.shape(), (nn::Shape{3, 8}));
  EXPECT_THROW(s(nn::Var::zeros({0, 2}), nn::Var::zeros({0, 3})), Error);
}

TEST(Sfam, MaskRemovesPoints) {
  nn::ParamStore store(4);
  Sfam s(store, "s", 2, toy_config());
  const nn::Var feats = nn::Var::constant({3, 2}, {1, 1, 3, 3, 100, 100});
  const std::vector<std::uint8_t> mask{1, 1, 0};
  const auto out = s(feats, nn::softmax_rows(one_hot_logits({1, 1, 2}, 3)), mask);
  EXPECT_EQ(out.present, (std::vector<std::uint8_t>{0, 1, 0}));
  EXPECT_NEAR(out.pooled.at(1, 0), 2.0, 1e-9);
}

TEST(Sfam, FiniteDifferenceFivePointsThreeClasses) {
  nn::ParamStore store(5);
  Sfam s(store, "s", 4, toy_config());
  Rng rng(5);
  nn::Var feats = param({5, 4}, rng), logits = param({5, 3}, rng);
  auto in = params_of(store);
  in.push_back(feats);
  in.push_back(logits);
  const auto rep = nn::finite_diff_check([&] { return probe(s(feats, nn::softmax_rows(logits)).embeddings); }, in,
                                         harness::kOpTolerance);
  EXPECT_TRUE(rep.passed) << rep.max_rel_error;
}

TEST(Sffm, SinglePresentRowTakesAllAttention) {
  nn::ParamStore store(6);
  const auto cfg = toy_config();
  Sffm f(store, "f", cfg);
  Rng rng(6);
  SemanticEmbeddings a{param({3, 8}, rng), {}, {0, 0, 0}}, b{param({3, 8}, rng), {}, {0, 1, 0}};
  std::vector<SemanticEmbeddings> sems{a, b};
  nn::AttentionWeights w;
  const auto out = f(param({4, 8}, rng), sems, &w);
  EXPECT_EQ(out.shape(), (nn::Shape{4, 8}));
  for (std::size_t h = 0; h < w.data.size(); ++h)
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 6; ++c) EXPECT_EQ(w.data[h][r * 6 + c], c == 4 ? 1.0 : 0.0);
  sems[1].present = {0, 0, 0};
  EXPECT_THROW(f(param({4, 8}, rng), sems), Error);
}

TEST(Sffm, FiniteDifferenceFourPoints) {
  for (bool ffn : {true, false}) {
    nn::ParamStore store(7);
    auto cfg = toy_config();
    cfg.sffm_ffn = ffn;
    Sffm f(store, "f", cfg);
    Rng rng(7);
    nn::Var geo = param({4, 8}, rng), ea = param({3, 8}, rng), eb = param({3, 8}, rng);
    auto in = params_of(store);
    in.insert(in.end(), {geo, ea, eb});
    const auto rep = nn::finite_diff_check(
        [&] {
          std::vector<SemanticEmbeddings> s{{ea, {}, {1, 0, 1}}, {eb, {}, {1, 1, 1}}};
          return probe(f(geo, s));
        },
        in, harness::kOpTolerance);
    EXPECT_TRUE(rep.passed) << rep.max_rel_error << " ffn=" << ffn;
    EXPECT_EQ(store.find("f.ffn.fc1.weight") != nullptr, ffn);
  }
}

TEST(Head, ZeroWeightsGiveUniformSoftmax) {
  const auto logits = nn::linear_forward(nn::Var::full({3, 8}, 2.0), nn::Var::zeros({8, 4}), nn::Var::zeros({4}));
  EXPECT_EQ(logits.shape(), (nn::Shape{3, 4}));
  const auto probs = nn::softmax_rows(logits);
  for (auto v : probs.value()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Head, OverfitMatchesNearestCentroid) {
  const std::vector<std::array<double, 2>> centroids{{0, 0}, {3, 1}, {-1, 4}};
  Rng rng(8);
  std::vector<nn::real> x;
  std::vector<std::uint16_t> y;
  for (std::size_t c = 0; c < 3; ++c)
    for (int i = 0; i < 10; ++i) {
      x.push_back(centroids[c][0] + rng.uniform(-0.4, 0.4));
      x.push_back(centroids[c][1] + rng.uniform(-0.4, 0.4));
      y.push_back(static_cast<std::uint16_t>(c));
    }
  const nn::Var feats = nn::Var::constant({30, 2}, x);
  nn::ParamStore store(8);
  nn::Linear head(store, "head", 2, 3, nn::ParamGroup::main);
  nn::OptimizerState st;
  for (int step = 0; step < 300; ++step) {
    store.zero_grad();
    nn::cross_entropy_loss(head(feats), y).backward();
    nn::adamw_step(store.params(), st, nn::GroupRates::uniform(0.05));
  }
  const auto logits = head(feats);
  for (std::size_t i = 0; i < 30; ++i) {
    std::size_t best = 0, nearest = 0;
    double bd = 1e300;
    for (std::size_t c = 0; c < 3; ++c) {
      if (logits.at(i, c) > logits.at(i, best)) best = c;
      const double d = std::hypot(x[2 * i] - centroids[c][0], x[2 * i + 1] - centroids[c][1]);
      if (d < bd) bd = d, nearest = c;
    }
    EXPECT_EQ(best, nearest) << "point " << i;
  }
}

TEST(FusionModule, ShapesAndSemantics) {
  nn::ParamStore store(9);
  FusionModule m(store, "fusion", toy_config());
  Rng rng(9);
  FusionInputs in{param({7, 4}, rng), param({7, 3}, rng), param({7, 3}, rng), param({7, 3}, rng),
                  {1, 0, 1, 1, 0, 0, 1}};
  const auto out = m(in);
  EXPECT_EQ(out.logits.shape(), (nn::Shape{7, 3}));
  EXPECT_EQ(out.semantics.size(), 2u);
  EXPECT_EQ(m(in, false).semantics.size(), 1u);
  in.mask.pop_back();
  EXPECT_THROW(m(in), ShapeError);
}

TEST(FusionModule, AllMasksFalseEqualsCameraBlind) {
  nn::ParamStore store(10);
  FusionModule m(store, "fusion", toy_config());
  Rng rng(10);
  FusionInputs in{param({6, 4}, rng), param({6, 3}, rng), param({6, 3}, rng), param({6, 3}, rng),
                  std::vector<std::uint8_t>(6, 0)};
  const auto blind = m(in, false).logits;
  const auto masked = m(in, true).logits;
  for (std::size_t i = 0; i < blind.size(); ++i) EXPECT_NEAR(blind[i], masked[i], 1e-12);
  // Camera-side weights do not matter when nothing is visible.
  for (const auto* p : store.with_prefix("fusion.sfam_camera")) {
    nn::Var v = p->var;
    for (auto& e : v.mutable_value()) e += 0.5;
  }
  const auto perturbed = m(in, true).logits;
  for (std::size_t i = 0; i < blind.size(); ++i) EXPECT_NEAR(blind[i], perturbed[i], 1e-12);
}

TEST(FusionModule, MaskedEmbeddingsGetZeroAttention) {
  nn::ParamStore store(11);
  FusionModule m(store, "fusion", toy_config());
  Rng rng(11);
  FusionInputs in{param({5, 4}, rng), one_hot_logits({0, 0, 1, 0, 1}, 3), param({5, 3}, rng),
                  one_hot_logits({2, 2, 2, 2, 2}, 3), {1, 1, 0, 0, 0}};
  const auto out = m(in);
  std::vector<SemanticEmbeddings> sems = out.semantics;
  EXPECT_EQ(sems[0].present, (std::vector<std::uint8_t>{1, 1, 0}));
  EXPECT_EQ(sems[1].present, (std::vector<std::uint8_t>{0, 0, 1}));
  nn::AttentionWeights w;
  m.sffm()(out.geo, sems, &w);
  for (const auto& head : w.data)
    for (std::size_t r = 0; r < 5; ++r) {
      EXPECT_EQ(head[r * 6 + 2], 0.0);
      EXPECT_EQ(head[r * 6 + 3], 0.0);
      EXPECT_EQ(head[r * 6 + 4], 0.0);
    }
}

TEST(FusionModule, PermutationEquivariant) {
  nn::ParamStore store(12);
  FusionModule m(store, "fusion", toy_config());
  Rng rng(12);
  FusionInputs in{param({8, 4}, rng), param({8, 3}, rng), param({8, 3}, rng), param({8, 3}, rng),
                  {1, 0, 1, 1, 0, 1, 1, 0}};
  std::vector<std::size_t> perm(8);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  FusionInputs p{nn::gather_rows(in.lidar, perm), nn::gather_rows(in.lidar_logits, perm),
                 nn::gather_rows(in.camera, perm), nn::gather_rows(in.camera_logits, perm), {}};
  for (auto i : perm) p.mask.push_back(in.mask[i]);
  const auto a = nn::gather_rows(m(in).logits, perm);
  const auto b = m(p).logits;
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(FusionModule, FiniteDifferenceEndToEnd) {
  nn::ParamStore store(13);
  FusionModule m(store, "fusion", toy_config());
  Rng rng(13);
  nn::Var lidar = param({6, 4}, rng), ll = param({6, 3}, rng), cam = param({6, 3}, rng), cl = param({6, 3}, rng);
  auto in = params_of(store);
  in.insert(in.end(), {lidar, ll, cam, cl});
  const std::vector<std::uint16_t> labels{0, 1, 2, 1, 0, 2};
  const auto rep = nn::finite_diff_check(
      [&] {
        const auto out = m({lidar, ll, cam, cl, {1, 1, 0, 1, 0, 1}});
        return nn::add(nn::cross_entropy_loss(out.logits, labels),
                       nn::lovasz_softmax_loss(nn::softmax_rows(out.logits), labels));
      },
      in, harness::kCompositeTolerance);
  EXPECT_TRUE(rep.passed) << rep.max_rel_error << " " << rep.worst;
}

TEST(FusionConfig, Validation) {
  auto c = toy_config();
  c.num_classes = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = toy_config();
  c.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
}
