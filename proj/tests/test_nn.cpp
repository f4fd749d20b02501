#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "fedcam/nn.hpp"
#include "test_util.hpp"

using namespace fedcam;
using fedcam::testing::random_params;
using fedcam::testing::random_tensor;
using fedcam::testing::rel_error;

namespace {

// Straight nested-loop reference of the desk classifier, written without any
// of the library's layer code.
std::vector<double> reference_logits(const ClassifierArch& arch, const std::vector<double>& p, const Tensor& img) {
  const std::size_t S = arch.image_size, K = arch.kernel, C1 = arch.conv1_channels, C2 = arch.conv2_channels;
  const std::size_t H1 = S - K + 1, H2 = H1 - K + 1;
  std::size_t off = 0;
  const double* w1 = p.data() + off;
  off += C1 * arch.channels * K * K;
  const double* b1 = p.data() + off;
  off += C1;
  const double* w2 = p.data() + off;
  off += C2 * C1 * K * K;
  const double* b2 = p.data() + off;
  off += C2;
  const double* wd = p.data() + off;
  off += arch.num_classes * C2;
  const double* bd = p.data() + off;

  std::vector<double> a1(C1 * H1 * H1);
  for (std::size_t o = 0; o < C1; ++o)
    for (std::size_t y = 0; y < H1; ++y)
      for (std::size_t x = 0; x < H1; ++x) {
        double s = b1[o];
        for (std::size_t i = 0; i < arch.channels; ++i)
          for (std::size_t ky = 0; ky < K; ++ky)
            for (std::size_t kx = 0; kx < K; ++kx)
              s += w1[((o * arch.channels + i) * K + ky) * K + kx] * img.at(i, y + ky, x + kx);
        a1[(o * H1 + y) * H1 + x] = std::max(0.0, s);
      }
  std::vector<double> pooled(C2, 0.0);
  for (std::size_t o = 0; o < C2; ++o) {
    for (std::size_t y = 0; y < H2; ++y)
      for (std::size_t x = 0; x < H2; ++x) {
        double s = b2[o];
        for (std::size_t i = 0; i < C1; ++i)
          for (std::size_t ky = 0; ky < K; ++ky)
            for (std::size_t kx = 0; kx < K; ++kx)
              s += w2[((o * C1 + i) * K + ky) * K + kx] * a1[(i * H1 + y + ky) * H1 + x + kx];
        pooled[o] += std::max(0.0, s);
      }
    pooled[o] /= static_cast<double>(H2 * H2);
  }
  std::vector<double> logits(arch.num_classes);
  for (std::size_t c = 0; c < arch.num_classes; ++c) {
    double s = bd[c];
    for (std::size_t k = 0; k < C2; ++k) s += wd[c * C2 + k] * pooled[k];
    logits[c] = s;
  }
  return logits;
}

double ce_loss(Network& net, const Tensor& x, std::size_t label) {
  return softmax_cross_entropy(net.forward(x).output, label).loss;
}

// Central differences of the cross-entropy loss over every parameter.
double max_param_gradient_error(const std::vector<LayerSpec>& layers, const Shape& input, std::size_t classes,
                                std::uint64_t seed) {
  const ModelParams p = random_params(layers, seed, 0.6);
  const Tensor x = random_tensor(input, seed + 1000, 0.0, 1.0);
  const std::size_t label = seed % classes;
  Network net(p, input);
  const auto fwd = net.forward(x);
  const GradientTape tape = net.backward(softmax_cross_entropy(fwd.output, label).grad);
  double worst = 0.0;
  const double h = 1e-6;
  for (std::size_t i = 0; i < p.size(); ++i) {
    ModelParams plus = p, minus = p;
    plus.values[i] += h;
    minus.values[i] -= h;
    Network np(plus, input), nm(minus, input);
    const double fd = (ce_loss(np, x, label) - ce_loss(nm, x, label)) / (2 * h);
    worst = std::max(worst, rel_error(tape.params[i], fd, 1e-6));
  }
  return worst;
}

}  // namespace

TEST(Tensor, RejectsMismatchedData) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<Real>(5)), ShapeError);
  EXPECT_NO_THROW(Tensor({2, 3}, std::vector<Real>(6)));
}

TEST(Tensor, DistanceHelpers) {
  const std::vector<Real> a{0, 0}, b{3, 4}, c{1};
  EXPECT_DOUBLE_EQ(euclidean_distance(a, b), 5.0);
  EXPECT_DOUBLE_EQ(squared_distance(a, b), 25.0);
  EXPECT_THROW(squared_distance(a, c), AlignmentError);
}

TEST(ModelParams, LengthIsAFunctionOfLayers) {
  const ClassifierArch arch;
  EXPECT_EQ(param_count(arch.layers()), 8u * 9 + 8 + 16 * 8 * 9 + 16 + 10 * 16 + 10);
  EXPECT_THROW(ModelParams(arch.layers(), std::vector<Real>(3)), AlignmentError);
}

TEST(ModelParams, FlattenUnflattenRoundTrip) {
  const ClassifierArch arch;
  const ModelParams p = arch.init(7);
  const auto tensors = unflatten(p);
  ASSERT_EQ(tensors.size(), 3u);  // activations and pooling carry no parameters
  EXPECT_EQ(tensors[0].weights.shape(), (Shape{8, 1, 3, 3}));
  EXPECT_EQ(tensors[2].weights.shape(), (Shape{10, 16}));
  EXPECT_EQ(flatten(p.layers, tensors), p);
}

TEST(ModelParams, InitIsSeeded) {
  const ClassifierArch arch;
  EXPECT_EQ(arch.init(3), arch.init(3));
  EXPECT_NE(arch.init(3), arch.init(4));
}

TEST(Forward, ZeroWeightsGiveBiasLogits) {
  const ClassifierArch arch;
  ModelParams p = ModelParams::zeros(arch.layers());
  const std::size_t bias_offset = p.size() - arch.num_classes;
  for (std::size_t c = 0; c < arch.num_classes; ++c) p.values[bias_offset + c] = 0.1 * static_cast<double>(c) - 0.3;
  Network net = arch.network(p);
  const auto out = net.forward(random_tensor(arch.input_shape(), 5, 0, 1)).output;
  for (std::size_t c = 0; c < arch.num_classes; ++c) EXPECT_DOUBLE_EQ(out[c], p.values[bias_offset + c]);
}

TEST(Forward, IdentityOneByOneConv) {
  ModelParams p(std::vector<LayerSpec>{LayerSpec::conv(1, 1, 1)}, std::vector<Real>{1.0, 0.0});
  Network net(p, {1, 4, 4});
  const Tensor x = random_tensor({1, 4, 4}, 11);
  EXPECT_EQ(net.forward(x).output, x);
}

TEST(Forward, MatchesNestedLoopReference) {
  const ClassifierArch arch;
  const ModelParams p = arch.init(42);
  const Tensor img = random_tensor(arch.input_shape(), 42, 0.0, 1.0);
  Network net = arch.network(p);
  const auto fwd = net.forward(img);
  const auto ref = reference_logits(arch, p.values, img);
  ASSERT_EQ(fwd.output.size(), ref.size());
  for (std::size_t c = 0; c < ref.size(); ++c) EXPECT_NEAR(fwd.output[c], ref[c], 1e-6);
  const auto fl = net.feature_layer();
  ASSERT_TRUE(fl.has_value());
  EXPECT_EQ(fwd.activations[*fl].shape(), (Shape{16, 12, 12}));
}

TEST(Forward, RejectsWrongInputShape) {
  const ClassifierArch arch;
  Network net = arch.network(arch.init(1));
  EXPECT_THROW(net.forward(Tensor({1, 15, 16})), ShapeError);
  EXPECT_THROW(arch.network(ModelParams::zeros({LayerSpec::fc(2, 2)})), ShapeError);
}

TEST(Backward, RequiresForward) {
  const ClassifierArch arch;
  Network net = arch.network(arch.init(1));
  EXPECT_THROW(net.backward(Tensor({arch.num_classes})), StateError);
}

TEST(Backward, LinearRegressionClosedForm) {
  const ModelParams p = random_params({LayerSpec::fc(3, 2)}, 9);
  Network net(p, {3});
  const Tensor x({3}, {0.5, -1.0, 2.0});
  const std::vector<Real> y{0.25, -0.75};
  const auto fwd = net.forward(x);
  const GradientTape tape = net.backward(squared_error(fwd.output, y).grad);
  for (std::size_t r = 0; r < 2; ++r) {
    double wx = p.values[6 + r];
    for (std::size_t c = 0; c < 3; ++c) wx += p.values[r * 3 + c] * x[c];
    const double resid = 2.0 * (wx - y[r]);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(tape.params[r * 3 + c], resid * x[c], 1e-12);
    EXPECT_NEAR(tape.params[6 + r], resid, 1e-12);
  }
}

TEST(Backward, ZeroUpstreamGivesZeroTape) {
  const ClassifierArch arch;
  Network net = arch.network(arch.init(2));
  net.forward(random_tensor(arch.input_shape(), 3, 0, 1));
  const GradientTape tape = net.backward(Tensor({arch.num_classes}));
  for (double g : tape.params) EXPECT_EQ(g, 0.0);
  for (const auto& a : tape.activations)
    for (double g : a.values()) EXPECT_EQ(g, 0.0);
}

TEST(Backward, LinearInUpstreamGradient) {
  const ClassifierArch arch;
  Network net = arch.network(arch.init(4));
  net.forward(random_tensor(arch.input_shape(), 4, 0, 1));
  const Tensor g = random_tensor({arch.num_classes}, 8);
  Tensor g3 = g;
  for (auto& v : g3.values()) v *= 3.0;
  const auto t1 = net.backward(g), t3 = net.backward(g3);
  for (std::size_t i = 0; i < t1.params.size(); ++i) EXPECT_NEAR(t3.params[i], 3.0 * t1.params[i], 1e-9);
}

TEST(Backward, DeterministicAcrossInstances) {
  const ClassifierArch arch;
  const ModelParams p = arch.init(12);
  const Tensor x = random_tensor(arch.input_shape(), 12, 0, 1);
  Network a = arch.network(p), b = arch.network(p);
  const auto ta = a.backward(softmax_cross_entropy(a.forward(x).output, 3).grad);
  const auto tb = b.backward(softmax_cross_entropy(b.forward(x).output, 3).grad);
  EXPECT_EQ(ta.params, tb.params);
}

TEST(Backward, AccumulateMatchesTape) {
  const ClassifierArch arch;
  Network net = arch.network(arch.init(13));
  const auto out = net.forward(random_tensor(arch.input_shape(), 13, 0, 1)).output;
  const Tensor g = softmax_cross_entropy(out, 1).grad;
  const auto tape = net.backward(g);
  std::vector<Real> acc(tape.params.size(), 1.0);
  net.accumulate_gradient(g, acc);
  for (std::size_t i = 0; i < acc.size(); ++i) EXPECT_NEAR(acc[i], 1.0 + tape.params[i], 1e-12);
}

// Every layer kind, five seeds each, against central differences.
struct GradCase {
  const char* name;
  std::vector<LayerSpec> layers;
  Shape input;
  std::size_t classes;
};

class FiniteDifference : public ::testing::TestWithParam<int> {};

TEST_P(FiniteDifference, EveryLayerKind) {
  const std::uint64_t seed = 100 + static_cast<std::uint64_t>(GetParam());
  const std::vector<GradCase> cases{
      {"conv+relu+gap+dense",
       {LayerSpec::conv(1, 2, 3), LayerSpec::act(LayerKind::relu), LayerSpec::conv(2, 3, 3),
        LayerSpec::act(LayerKind::relu), LayerSpec::act(LayerKind::global_avg_pool), LayerSpec::fc(3, 4)},
       {1, 6, 6},
       4},
      {"conv+sigmoid",
       {LayerSpec::conv(2, 2, 2), LayerSpec::act(LayerKind::sigmoid), LayerSpec::act(LayerKind::global_avg_pool),
        LayerSpec::fc(2, 3)},
       {2, 4, 4},
       3},
      {"dense stack",
       {LayerSpec::fc(6, 8), LayerSpec::act(LayerKind::sigmoid), LayerSpec::fc(8, 5), LayerSpec::act(LayerKind::relu),
        LayerSpec::fc(5, 3)},
       {6},
       3},
      {"desk classifier", ClassifierArch{}.layers(), ClassifierArch{}.input_shape(), 10},
  };
  for (const auto& c : cases) {
    EXPECT_LE(max_param_gradient_error(c.layers, c.input, c.classes, seed), 1e-3) << c.name;
  }
}

INSTANTIATE_TEST_SUITE_P(Seeds, FiniteDifference, ::testing::Range(0, 5));

TEST(Backward, ActivationGradientsMatchFiniteDifferences) {
  const ClassifierArch arch;
  const ModelParams p = arch.init(21);
  const Tensor x = random_tensor(arch.input_shape(), 21, 0, 1);
  Network net = arch.network(p);
  const auto fwd = net.forward(x);
  const auto tape = net.backward(softmax_cross_entropy(fwd.output, 2).grad);
  const std::size_t layer = 2;  // second conv output
  Tensor a = fwd.activations[layer];
  const double h = 1e-5;
  for (std::size_t i = 0; i < a.size(); i += 37) {
    Tensor plus = a, minus = a;
    plus[i] += h;
    minus[i] -= h;
    const double fd = (softmax_cross_entropy(net.forward_from(layer + 1, plus), 2).loss -
                       softmax_cross_entropy(net.forward_from(layer + 1, minus), 2).loss) /
                      (2 * h);
    EXPECT_LE(rel_error(tape.activations[layer][i], fd, 1e-7), 1e-3) << i;
  }
}

TEST(Sgd, Arithmetic) {
  const ModelParams p({LayerSpec::fc(1, 1)}, {1.0, 2.0});
  const std::vector<Real> g{1.0, 1.0};
  EXPECT_EQ(sgd_step(p, g, 0.5).values, (std::vector<Real>{0.5, 1.5}));
  EXPECT_EQ(sgd_step(p, g, 0.0).values, p.values);
  EXPECT_THROW(sgd_step(p, std::vector<Real>{1.0}, 0.1), AlignmentError);
}

TEST(Sgd, ConvergesOnConvexQuadratic) {
  // f(w) = sum a_i (w_i - b_i)^2
  const std::vector<double> a{1.0, 2.0, 0.5}, b{3.0, -1.0, 0.25};
  ModelParams p(std::vector<LayerSpec>{LayerSpec::fc(2, 1)}, {0.0, 0.0, 0.0});
  for (int it = 0; it < 2000; ++it) {
    std::vector<Real> g(3);
    for (int i = 0; i < 3; ++i) g[i] = 2 * a[i] * (p.values[i] - b[i]);
    p = sgd_step(p, g, 0.1);
  }
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(p.values[i], b[i], 1e-6);
}

TEST(Adam, FirstStepClosedForm) {
  AdamState st;
  const AdamOptions opt{0.01, 0.9, 0.999, 1e-8, 0.0};
  const ModelParams p({LayerSpec::fc(1, 1)}, {0.5, -0.5});
  const std::vector<Real> g{0.3, -2.0};
  const ModelParams q = adam_step(st, p, g, opt);
  for (int i = 0; i < 2; ++i) {
    EXPECT_NEAR(q.values[i], p.values[i] - opt.lr * g[i] / (std::abs(g[i]) + opt.eps), 1e-15);
  }
}

TEST(Adam, MatchesScalarReferenceOnQuadratic) {
  // f(w) = (w - 2)^2 from w = -1, reference loop written independently
  const AdamOptions opt{0.05, 0.9, 0.999, 1e-8, 0.0};
  double w = -1.0, m = 0.0, v = 0.0;
  AdamState st;
  std::vector<Real> lib{-1.0};
  for (int t = 1; t <= 300; ++t) {
    const double g = 2.0 * (w - 2.0);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1 - std::pow(0.9, t)), vh = v / (1 - std::pow(0.999, t));
    w -= 0.05 * mh / (std::sqrt(vh) + 1e-8);

    const std::vector<Real> lg{2.0 * (lib[0] - 2.0)};
    adam_update(st, lib, lg, opt);
    ASSERT_NEAR(lib[0], w, 1e-8) << "step " << t;
  }
}

TEST(Adam, ZeroGradientLeavesParams) {
  AdamState st;
  const ModelParams p({LayerSpec::fc(1, 1)}, {0.5, -0.5});
  EXPECT_EQ(adam_step(st, p, std::vector<Real>{0.0, 0.0}, {}).values, p.values);
}

TEST(Adam, NonFiniteMomentThrows) {
  AdamState st;
  std::vector<Real> p{1.0};
  EXPECT_THROW(adam_update(st, p, std::vector<Real>{INFINITY}, {}), NumericError);
}

TEST(Adam, DecoupledWeightDecay) {
  AdamState st;
  std::vector<Real> p{2.0};
  adam_update(st, p, std::vector<Real>{0.0}, {0.1, 0.9, 0.999, 1e-8, 0.5});
  EXPECT_NEAR(p[0], 2.0 - 0.1 * 0.5 * 2.0, 1e-15);
}

TEST(Losses, SoftmaxCrossEntropyGradient) {
  const Tensor logits({3}, {1.0, 2.0, 0.5});
  const auto lv = softmax_cross_entropy(logits, 1);
  double z = 0.0;
  for (double l : logits.values()) z += std::exp(l);
  EXPECT_NEAR(lv.loss, -std::log(std::exp(2.0) / z), 1e-12);
  EXPECT_NEAR(lv.grad[1], std::exp(2.0) / z - 1.0, 1e-12);
  EXPECT_NEAR(lv.grad[0], std::exp(1.0) / z, 1e-12);
}
