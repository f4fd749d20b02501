#include <gtest/gtest.h>

#include <sstream>
#include <vector>

#include "fedcam/io.hpp"
#include "fedcam/layercam.hpp"
#include "test_util.hpp"

using namespace fedcam;
using fedcam::testing::random_tensor;
using fedcam::testing::rel_error;

namespace {

// Class-score gradient at every feature-map location by central differences
// on the post-feature part of the network.
Tensor fd_activation_gradients(Network& net, const ProbeImage& probe, double h = 1e-4) {
  const std::size_t f = *net.feature_layer();
  const Tensor a = net.forward(probe.image).activations[f];
  Tensor g(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    Tensor plus = a, minus = a;
    plus[i] += h;
    minus[i] -= h;
    g[i] = (net.forward_from(f + 1, plus)[probe.true_class] - net.forward_from(f + 1, minus)[probe.true_class]) / (2 * h);
  }
  return g;
}

ProbeImage seeded_probe(const ClassifierArch& arch, std::uint64_t seed) {
  return {random_tensor(arch.input_shape(), seed, 0.0, 1.0), seed % arch.num_classes};
}

}  // namespace

TEST(LayerCam, NonPositiveGradientsGiveZeroMap) {
  const Tensor a = random_tensor({3, 4, 4}, 1, 0.0, 2.0);
  const Tensor g = random_tensor({3, 4, 4}, 2, -1.0, 0.0);
  const HeatMap m = layercam_from(a, g);
  for (double v : m.values.values()) EXPECT_EQ(v, 0.0);
}

TEST(LayerCam, UnitGradientReturnsActivations) {
  const Tensor a = random_tensor({1, 5, 5}, 3, 0.0, 1.0);
  Tensor g({1, 5, 5}, 1.0);
  const HeatMap m = layercam_from(a, g);
  EXPECT_EQ(m.values.values().size(), 25u);
  for (std::size_t i = 0; i < 25; ++i) EXPECT_EQ(m.values[i], a[i]);
  const HeatMap gc = gradcam_from(a, g);
  for (std::size_t i = 0; i < 25; ++i) EXPECT_EQ(gc.values[i], a[i]);
}

TEST(LayerCam, UniformGradientsMakeGradcamEqualLayercam) {
  const Tensor a = random_tensor({4, 6, 6}, 4, 0.0, 1.0);
  Tensor g({4, 6, 6}, 0.37);
  const HeatMap lc = layercam_from(a, g), gc = gradcam_from(a, g);
  for (std::size_t i = 0; i < lc.values.size(); ++i) EXPECT_NEAR(lc.values[i], gc.values[i], 1e-12);
}

TEST(LayerCam, ShapeChecks) {
  EXPECT_THROW(layercam_from(Tensor({2, 3, 3}), Tensor({2, 3, 4})), ShapeError);
  EXPECT_THROW(gradcam_from(Tensor({3, 3}), Tensor({3, 3})), ShapeError);
  const ClassifierArch arch;
  ClassifierArch other;
  other.conv2_channels = 4;
  EXPECT_THROW(layercam_map(arch, other.init(1), seeded_probe(arch, 1)), ShapeError);
}

class CamOracle : public ::testing::TestWithParam<int> {};

TEST_P(CamOracle, LayercamMatchesFiniteDifferenceOracle) {
  const ClassifierArch arch;
  const auto seed = static_cast<std::uint64_t>(GetParam()) + 31;
  const ModelParams p = arch.init(seed);
  const ProbeImage probe = seeded_probe(arch, seed);
  Network net = arch.network(p);
  const Tensor g = fd_activation_gradients(net, probe);
  const Tensor a = net.forward(probe.image).activations[*net.feature_layer()];
  const std::size_t k = a.extent(0), h = a.extent(1), b = a.extent(2);
  const HeatMap lib = layercam_map(arch, p, probe);
  ASSERT_EQ(lib.values.shape(), (Shape{h, b}));
  double worst = 0.0;
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < k; ++c) s += std::max(0.0, g.at(c, i, j)) * a.at(c, i, j);
      worst = std::max(worst, rel_error(lib.values.at(i, j), std::max(0.0, s), 1e-9));
    }
  }
  EXPECT_LE(worst, 1e-3);
  EXPECT_EQ(lib.target_class, probe.true_class);
}

TEST_P(CamOracle, GradcamMatchesFiniteDifferenceOracle) {
  const ClassifierArch arch;
  const auto seed = static_cast<std::uint64_t>(GetParam()) + 77;
  const ModelParams p = arch.init(seed);
  const ProbeImage probe = seeded_probe(arch, seed);
  Network net = arch.network(p);
  const Tensor g = fd_activation_gradients(net, probe);
  const Tensor a = net.forward(probe.image).activations[*net.feature_layer()];
  const std::size_t k = a.extent(0), h = a.extent(1), b = a.extent(2);
  std::vector<double> w(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < h * b; ++i) w[c] += g[c * h * b + i];
    w[c] /= static_cast<double>(h * b);
  }
  const HeatMap lib = gradcam_map(arch, p, probe);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < k; ++c) s += w[c] * a.at(c, i, j);
      EXPECT_LE(rel_error(lib.values.at(i, j), std::max(0.0, s), 1e-9), 1e-3);
    }
  }
}

TEST_P(CamOracle, MapsAreNonNegativeAndFinite) {
  const ClassifierArch arch;
  const auto seed = static_cast<std::uint64_t>(GetParam()) + 5;
  for (auto method : {CamMethod::layercam, CamMethod::gradcam}) {
    const HeatMap m = cam_map(method, arch, arch.init(seed), seeded_probe(arch, seed));
    EXPECT_TRUE(m.values.all_finite());
    for (double v : m.values.values()) EXPECT_GE(v, 0.0);
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, CamOracle, ::testing::Range(0, 5));

TEST(LayerCam, UpstreamScaleLeavesNormalisedRowUnchanged) {
  const Tensor a = random_tensor({4, 6, 6}, 8, 0.0, 1.0);
  const Tensor g = random_tensor({4, 6, 6}, 9);
  Tensor g5 = g;
  for (auto& v : g5.values()) v *= 5.0;
  const auto r1 = normalized_row(layercam_from(a, g).values);
  const auto r5 = normalized_row(layercam_from(a, g5).values);
  for (std::size_t i = 0; i < r1.size(); ++i) EXPECT_NEAR(r1[i], r5[i], 1e-9);
}

TEST(FlattenMaps, MinMaxRow) {
  HeatMap m;
  m.values = Tensor({2, 2}, {1, 2, 3, 4});
  const std::vector<HeatMap> maps{m};
  const Tensor rows = flatten_maps(maps);
  ASSERT_EQ(rows.shape(), (Shape{1, 4}));
  EXPECT_DOUBLE_EQ(rows[0], 0.0);
  EXPECT_DOUBLE_EQ(rows[1], 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(rows[2], 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(rows[3], 1.0);
}

TEST(FlattenMaps, ConstantMapBecomesZeros) {
  HeatMap m;
  m.values = Tensor({3, 3}, 0.7);
  const std::vector<HeatMap> maps{m, m};
  const Tensor rows = flatten_maps(maps);
  for (double v : rows.values()) EXPECT_EQ(v, 0.0);
}

TEST(FlattenMaps, RoundTripAndMixedDimensions) {
  std::vector<HeatMap> maps(3);
  for (std::size_t i = 0; i < 3; ++i) maps[i].values = random_tensor({4, 5}, 40 + i, 0.0, 3.0);
  const Tensor rows = flatten_maps(maps);
  for (std::size_t i = 0; i < 3; ++i) {
    const Tensor back = unflatten_row(rows, i, 4, 5);
    const auto expect = normalized_row(maps[i].values);
    EXPECT_EQ(back.vector(), expect);
  }
  maps.push_back(HeatMap{Tensor({5, 4}), 3, 0, 0});
  EXPECT_THROW(flatten_maps(maps), ShapeError);
}

TEST(Pgm, RoundTripWithinQuantisation) {
  const Tensor map = random_tensor({12, 12}, 3, 0.0, 2.0);
  std::stringstream buf;
  write_pgm(buf, map);
  const std::string text = buf.str();
  EXPECT_EQ(text.rfind("P5\n12 12\n255\n", 0), 0u);
  const Tensor back = read_pgm(buf);
  double mx = 0.0;
  for (double v : map.values()) mx = std::max(mx, v);
  for (std::size_t i = 0; i < map.size(); ++i) EXPECT_NEAR(back[i], map[i] / mx, 0.5 / 255.0 + 1e-12);
}
