#include <gtest/gtest.h>

#include <vector>

#include "fedcam/attack.hpp"
#include "fedcam/data.hpp"
#include "test_util.hpp"

using namespace fedcam;
using fedcam::testing::random_params;

namespace {

const std::vector<LayerSpec> kLine{LayerSpec::fc(1, 1)};

struct AttackSetup {
  ClassifierArch arch;
  Dataset test;
  ModelParams global;
  std::vector<ModelParams> benign;

  AttackSetup() {
    arch.image_size = 8;
    test = generate_synthetic(10, 10, 0.2, 4, 1, arch.image_size);
    global = arch.init(1);
    for (std::uint64_t s = 0; s < 6; ++s) {
      ModelParams p = random_params(arch.layers(), s + 20, 0.05);
      for (std::size_t i = 0; i < p.size(); ++i) p.values[i] += global.values[i] + 0.02;
      benign.push_back(p);
    }
  }

  AttackContext ctx(std::size_t round = 1) const { return {round, &global, benign, &arch, &test}; }
};

}  // namespace

TEST(Projection, Examples) {
  const ModelParams c(kLine, {0, 0});
  const auto p = project_to_ball(ModelParams(kLine, {3, 4}), c, 1.0);
  EXPECT_NEAR(p.values[0], 0.6, 1e-15);
  EXPECT_NEAR(p.values[1], 0.8, 1e-15);
  const ModelParams inside(kLine, {0.1, 0.2});
  EXPECT_EQ(project_to_ball(inside, c, 1.0), inside);
  EXPECT_EQ(project_to_ball(ModelParams(kLine, {3, 4}), c, 0.0), c);
}

TEST(Radius, DefaultIsHalfMedianDistance) {
  const std::vector<ModelParams> b{ModelParams(kLine, {0, 0}), ModelParams(kLine, {1, 0}), ModelParams(kLine, {3, 0})};
  EXPECT_DOUBLE_EQ(median_pairwise_distance(b), 2.0);
  AttackConfig cfg;
  EXPECT_DOUBLE_EQ(attack_radius(cfg, b), 1.0);
  cfg.radius = 0.3;
  EXPECT_DOUBLE_EQ(attack_radius(cfg, b), 0.3);
}

TEST(Craft, ZeroRadiusReturnsCentre) {
  const AttackSetup s;
  const ModelParams centre = mean_params(s.benign);
  for (auto strat : {AttackStrategy::sign_flip, AttackStrategy::noise_ball, AttackStrategy::grad_ascent}) {
    AttackConfig cfg;
    cfg.strategy = strat;
    cfg.radius = 0.0;
    EXPECT_EQ(craft_update(cfg, s.ctx(), 0), centre) << to_string(strat);
  }
}

TEST(Craft, NoiseLiesOnSphere) {
  const AttackSetup s;
  AttackConfig cfg;
  cfg.strategy = AttackStrategy::noise_ball;
  const double r = attack_radius(cfg, s.benign);
  const ModelParams centre = mean_params(s.benign);
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_NEAR(euclidean_distance(craft_update(cfg, s.ctx(), k).values, centre.values), r, 1e-9 * r);
  }
}

TEST(Craft, AllStrategiesStayInBall) {
  const AttackSetup s;
  const ModelParams centre = mean_params(s.benign);
  for (auto strat : {AttackStrategy::sign_flip, AttackStrategy::noise_ball, AttackStrategy::grad_ascent}) {
    AttackConfig cfg;
    cfg.strategy = strat;
    cfg.steps = 4;
    const double r = attack_radius(cfg, s.benign);
    for (std::size_t k = 0; k < 3; ++k) {
      const ModelParams m = craft_update(cfg, s.ctx(2), k);
      EXPECT_LE(euclidean_distance(m.values, centre.values), r + 1e-9) << to_string(strat);
    }
  }
}

TEST(Craft, SignFlipStepsAgainstConsensus) {
  const AttackSetup s;
  AttackConfig cfg;
  cfg.strategy = AttackStrategy::sign_flip;
  const ModelParams centre = mean_params(s.benign);
  const double r = attack_radius(cfg, s.benign);
  const ModelParams m = craft_update(cfg, s.ctx(), 0);
  const double dn = euclidean_distance(centre.values, s.global.values);
  ModelParams cand = s.global;
  for (std::size_t i = 0; i < cand.size(); ++i) cand.values[i] -= r * (centre.values[i] - s.global.values[i]) / dn;
  EXPECT_EQ(m, project_to_ball(cand, centre, r));
}

TEST(Craft, SeedsDifferAcrossAttackersAndRounds) {
  const AttackSetup s;
  AttackConfig cfg;
  const auto a = craft_update(cfg, s.ctx(1), 0), b = craft_update(cfg, s.ctx(1), 1), c = craft_update(cfg, s.ctx(2), 0);
  EXPECT_NE(a, b);
  EXPECT_NE(a, c);
  EXPECT_EQ(a, craft_update(cfg, s.ctx(1), 0));
}

TEST(Craft, NoBenignFallsBackToGlobalNoise) {
  const AttackSetup s;
  AttackConfig cfg;
  cfg.radius = 0.25;
  const AttackContext ctx{1, &s.global, {}, &s.arch, &s.test};
  EXPECT_NEAR(euclidean_distance(craft_update(cfg, ctx, 0).values, s.global.values), 0.25, 1e-12);
}

TEST(GradientAscent, QuadraticObjectiveStrictlyIncreases) {
  const std::vector<LayerSpec> layers{LayerSpec::fc(2, 2)};
  const ModelParams centre = ModelParams::zeros(layers);
  const std::vector<double> target{3, -1, 2, 0.5, -2, 1};
  std::vector<double> trace;
  auto obj = [&](const ModelParams& p) {
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s -= (p.values[i] - target[i]) * (p.values[i] - target[i]);
    return s;
  };
  auto grad = [&](const ModelParams& p) {
    trace.push_back(obj(p));
    std::vector<double> g(p.size());
    for (std::size_t i = 0; i < p.size(); ++i) g[i] = -2.0 * (p.values[i] - target[i]);
    return g;
  };
  const ModelParams w = projected_gradient_ascent(centre, 1.0, 20, 0.3, obj, grad);
  // gradients are taken at every accepted iterate
  ASSERT_GE(trace.size(), 3u);
  EXPECT_GE(obj(w), trace.back());
  for (std::size_t i = 1; i < trace.size(); ++i) EXPECT_GT(trace[i], trace[i - 1]) << i;
  EXPECT_LE(l2_norm(w.values), 1.0 + 1e-12);
}

TEST(GradientAscent, RaisesTestLoss) {
  const AttackSetup s;
  AttackConfig cfg;
  cfg.strategy = AttackStrategy::grad_ascent;
  cfg.batch_size = 0;  // whole test set
  const ModelParams centre = mean_params(s.benign);
  const ModelParams m = craft_update(cfg, s.ctx(), 0);
  detail::TestLoss loss{&s.arch, {}, {}};
  for (std::size_t i = 0; i < s.test.size(); ++i) {
    loss.images.push_back(&s.test.images[i]);
    loss.labels.push_back(s.test.labels[i]);
  }
  EXPECT_GT(loss.value(m), loss.value(centre));
}
