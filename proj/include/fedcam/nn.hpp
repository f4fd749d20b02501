#pragma once

// Small dense neural-network engine: sequential layers over single samples,
// exact reverse-mode gradients, and the two optimizers the simulator needs.
//
// Parameters of a whole network live in one flat ModelParams vector, laid out
// layer by layer in declaration order, weights first and then biases.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedcam/errors.hpp"
#include "fedcam/tensor.hpp"

namespace fedcam {

enum class LayerKind { conv2d, dense, relu, sigmoid, global_avg_pool };

inline std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::dense: return "dense";
    case LayerKind::relu: return "relu";
    case LayerKind::sigmoid: return "sigmoid";
    case LayerKind::global_avg_pool: return "global_avg_pool";
  }
  return "?";
}

inline LayerKind layer_kind_from_string(std::string_view s) {
  for (LayerKind k : {LayerKind::conv2d, LayerKind::dense, LayerKind::relu, LayerKind::sigmoid,
                      LayerKind::global_avg_pool}) {
    if (to_string(k) == s) return k;
  }
  throw ParameterError("unknown layer kind '" + std::string(s) + "'");
}

/// One layer descriptor. `in`/`out` are channels for conv2d and widths for dense;
/// `kernel` is the square kernel extent of a conv2d (valid padding, stride 1).
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t kernel = 0;

  std::size_t weight_count() const {
    switch (kind) {
      case LayerKind::conv2d: return out * in * kernel * kernel;
      case LayerKind::dense: return out * in;
      default: return 0;
    }
  }
  std::size_t bias_count() const {
    return (kind == LayerKind::conv2d || kind == LayerKind::dense) ? out : 0;
  }
  std::size_t param_count() const { return weight_count() + bias_count(); }

  static LayerSpec conv(std::size_t in, std::size_t out, std::size_t kernel) {
    return {LayerKind::conv2d, in, out, kernel};
  }
  static LayerSpec fc(std::size_t in, std::size_t out) { return {LayerKind::dense, in, out, 0}; }
  static LayerSpec act(LayerKind kind) { return {kind, 0, 0, 0}; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

inline std::size_t param_count(std::span<const LayerSpec> layers) {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.param_count();
  return n;
}

/// Flat parameter vector of one network, tagged with the layers it belongs to.
struct ModelParams {
  std::vector<LayerSpec> layers;
  std::vector<Real> values;

  ModelParams() = default;
  ModelParams(std::vector<LayerSpec> l, std::vector<Real> v) : layers(std::move(l)), values(std::move(v)) {
    if (values.size() != param_count(layers)) {
      throw AlignmentError("parameter vector has " + std::to_string(values.size()) +
                           " entries, layers require " + std::to_string(param_count(layers)));
    }
  }

  static ModelParams zeros(std::vector<LayerSpec> layers) {
    const std::size_t n = param_count(layers);
    return ModelParams(std::move(layers), std::vector<Real>(n, 0.0));
  }

  std::size_t size() const noexcept { return values.size(); }
  std::span<const Real> view() const noexcept { return values; }

  bool compatible(const ModelParams& other) const { return layers == other.layers; }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

inline std::span<const Real> as_span(const ModelParams& p) { return p.values; }
inline std::span<const Real> as_span(const std::vector<Real>& v) { return v; }

inline void require_compatible(const ModelParams& a, const ModelParams& b, const char* where) {
  if (!a.compatible(b)) throw AlignmentError(std::string(where) + ": layer specs differ");
}

/// Weights and bias of one parameterised layer, in their natural shapes.
struct LayerTensors {
  Tensor weights;
  Tensor bias;
};

inline std::vector<LayerTensors> unflatten(const ModelParams& params) {
  std::vector<LayerTensors> out;
  std::size_t offset = 0;
  for (const auto& l : params.layers) {
    if (l.param_count() == 0) continue;
    Shape wshape = l.kind == LayerKind::conv2d ? Shape{l.out, l.in, l.kernel, l.kernel} : Shape{l.out, l.in};
    const auto w0 = params.values.begin() + static_cast<std::ptrdiff_t>(offset);
    const auto b0 = w0 + static_cast<std::ptrdiff_t>(l.weight_count());
    out.push_back({Tensor(wshape, std::vector<Real>(w0, b0)),
                   Tensor({l.out}, std::vector<Real>(b0, b0 + static_cast<std::ptrdiff_t>(l.bias_count())))});
    offset += l.param_count();
  }
  return out;
}

inline ModelParams flatten(std::vector<LayerSpec> layers, const std::vector<LayerTensors>& tensors) {
  std::vector<Real> values;
  values.reserve(param_count(layers));
  std::size_t t = 0;
  for (const auto& l : layers) {
    if (l.param_count() == 0) continue;
    if (t >= tensors.size()) throw ShapeError("flatten: too few layer tensors");
    const auto& lt = tensors[t++];
    if (lt.weights.size() != l.weight_count() || lt.bias.size() != l.bias_count()) {
      throw ShapeError("flatten: tensor sizes do not match layer spec");
    }
    values.insert(values.end(), lt.weights.values().begin(), lt.weights.values().end());
    values.insert(values.end(), lt.bias.values().begin(), lt.bias.values().end());
  }
  if (t != tensors.size()) throw ShapeError("flatten: too many layer tensors");
  return ModelParams(std::move(layers), std::move(values));
}

/// Seeded initialisation: He-normal conv kernels with zero bias, and
/// uniform(+-1/sqrt(fan_in)) dense weights and biases.
inline ModelParams init_params(std::vector<LayerSpec> layers, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Real> values;
  values.reserve(param_count(layers));
  for (const auto& l : layers) {
    if (l.kind == LayerKind::conv2d) {
      std::normal_distribution<Real> n(0.0, std::sqrt(2.0 / static_cast<Real>(l.in * l.kernel * l.kernel)));
      for (std::size_t i = 0; i < l.weight_count(); ++i) values.push_back(n(rng));
      values.insert(values.end(), l.bias_count(), 0.0);
    } else if (l.kind == LayerKind::dense) {
      const Real bound = 1.0 / std::sqrt(static_cast<Real>(l.in));
      std::uniform_real_distribution<Real> u(-bound, bound);
      for (std::size_t i = 0; i < l.param_count(); ++i) values.push_back(u(rng));
    }
  }
  return ModelParams(std::move(layers), std::move(values));
}

/// Per-parameter gradient plus the gradient with respect to every layer output.
struct GradientTape {
  std::vector<Real> params;
  std::vector<Tensor> activations;  // activations[i] = dL / d(output of layer i)
};

struct ForwardResult {
  Tensor output;
  std::vector<Tensor> activations;  // activations[i] = output of layer i
};

/// Sequential network evaluated one sample at a time. Holds the trace of the
/// most recent forward pass so that backward() can run against it.
class Network {
 public:
  Network(ModelParams params, Shape input_shape) : params_(std::move(params)), input_shape_(std::move(input_shape)) {
    if (params_.values.size() != param_count(params_.layers)) {
      throw AlignmentError("network parameters do not match layer specs");
    }
    Shape s = input_shape_;
    std::size_t offset = 0;
    for (const auto& l : params_.layers) {
      offsets_.push_back(offset);
      offset += l.param_count();
      s = infer_output(l, s);
      shapes_.push_back(s);
    }
  }

  const ModelParams& params() const noexcept { return params_; }
  const std::vector<LayerSpec>& layers() const noexcept { return params_.layers; }
  const Shape& input_shape() const noexcept { return input_shape_; }
  const Shape& output_shape(std::size_t layer) const { return shapes_.at(layer); }
  std::size_t layer_count() const noexcept { return params_.layers.size(); }

  /// Index of the layer whose output is the final convolutional feature map:
  /// the activation directly after the last conv2d, or the conv2d itself.
  std::optional<std::size_t> feature_layer() const {
    std::optional<std::size_t> conv;
    for (std::size_t i = 0; i < layer_count(); ++i) {
      if (params_.layers[i].kind == LayerKind::conv2d) conv = i;
    }
    if (!conv) return std::nullopt;
    const std::size_t next = *conv + 1;
    if (next < layer_count() && params_.layers[next].kind == LayerKind::relu) return next;
    return conv;
  }

  ForwardResult forward(const Tensor& input) {
    if (input.shape() != input_shape_) {
      throw ShapeError("input shape " + shape_string(input.shape()) + " does not match network input " +
                       shape_string(input_shape_));
    }
    input_ = input;
    trace_.clear();
    trace_.reserve(layer_count());
    const Tensor* x = &input_;
    for (std::size_t i = 0; i < layer_count(); ++i) {
      trace_.push_back(apply(i, *x));
      x = &trace_.back();
    }
    has_trace_ = true;
    return {trace_.back(), trace_};
  }

  /// Evaluates layers [first, end) on `input`, which must have the shape of the
  /// input to layer `first`. Does not touch the recorded trace.
  Tensor forward_from(std::size_t first, const Tensor& input) const {
    const Shape& expected = first == 0 ? input_shape_ : shapes_.at(first - 1);
    if (input.shape() != expected) throw ShapeError("forward_from: unexpected input shape");
    Tensor x = input;
    for (std::size_t i = first; i < layer_count(); ++i) x = apply(i, x);
    return x;
  }

  GradientTape backward(const Tensor& loss_grad) const {
    if (!has_trace_) throw StateError("backward called before forward");
    if (loss_grad.shape() != shapes_.back()) throw ShapeError("loss gradient shape does not match output");
    GradientTape tape;
    tape.params.assign(params_.values.size(), 0.0);
    tape.activations.resize(layer_count());
    Tensor upstream = loss_grad;
    for (std::size_t i = layer_count(); i-- > 0;) {
      tape.activations[i] = upstream;
      const Tensor& in = i == 0 ? input_ : trace_[i - 1];
      upstream = backprop(i, in, trace_[i], upstream, tape.params, i > 0);
    }
    return tape;
  }

  /// Convenience for training loops: adds this sample's parameter gradient into `accum`.
  void accumulate_gradient(const Tensor& loss_grad, std::span<Real> accum) const {
    if (accum.size() != params_.values.size()) throw AlignmentError("gradient accumulator length mismatch");
    if (!has_trace_) throw StateError("backward called before forward");
    Tensor upstream = loss_grad;
    for (std::size_t i = layer_count(); i-- > 0;) {
      const Tensor& in = i == 0 ? input_ : trace_[i - 1];
      upstream = backprop(i, in, trace_[i], upstream, accum, i > 0);
    }
  }

 private:
  static Shape infer_output(const LayerSpec& l, const Shape& in) {
    switch (l.kind) {
      case LayerKind::conv2d: {
        if (in.size() != 3 || in[0] != l.in) throw ShapeError("conv2d expects " + std::to_string(l.in) + " input channels");
        if (l.kernel == 0 || in[1] < l.kernel || in[2] < l.kernel) throw ShapeError("conv2d kernel larger than input");
        return {l.out, in[1] - l.kernel + 1, in[2] - l.kernel + 1};
      }
      case LayerKind::dense:
        if (shape_volume(in) != l.in) throw ShapeError("dense expects " + std::to_string(l.in) + " inputs");
        return {l.out};
      case LayerKind::global_avg_pool:
        if (in.size() != 3) throw ShapeError("global_avg_pool expects a CxHxW input");
        return {in[0]};
      case LayerKind::relu:
      case LayerKind::sigmoid: return in;
    }
    return in;
  }

  Tensor apply(std::size_t i, const Tensor& x) const {
    const LayerSpec& l = params_.layers[i];
    const Real* w = params_.values.data() + offsets_[i];
    switch (l.kind) {
      case LayerKind::conv2d: return conv_forward(l, w, x, shapes_[i]);
      case LayerKind::dense: {
        Tensor y(shapes_[i]);
        const Real* b = w + l.weight_count();
        for (std::size_t o = 0; o < l.out; ++o) {
          Real s = b[o];
          const Real* row = w + o * l.in;
          for (std::size_t k = 0; k < l.in; ++k) s += row[k] * x[k];
          y[o] = s;
        }
        return y;
      }
      case LayerKind::relu: {
        Tensor y = x;
        for (auto& v : y.values()) v = v > 0.0 ? v : 0.0;
        return y;
      }
      case LayerKind::sigmoid: {
        Tensor y = x;
        for (auto& v : y.values()) v = 1.0 / (1.0 + std::exp(-v));
        return y;
      }
      case LayerKind::global_avg_pool: {
        const std::size_t c = x.extent(0), plane = x.extent(1) * x.extent(2);
        Tensor y({c});
        for (std::size_t ch = 0; ch < c; ++ch) {
          Real s = 0.0;
          for (std::size_t k = 0; k < plane; ++k) s += x[ch * plane + k];
          y[ch] = s / static_cast<Real>(plane);
        }
        return y;
      }
    }
    return x;
  }

  static Tensor conv_forward(const LayerSpec& l, const Real* w, const Tensor& x, const Shape& out_shape) {
    const std::size_t ih = x.extent(1), iw = x.extent(2);
    const std::size_t oh = out_shape[1], ow = out_shape[2], k = l.kernel;
    const Real* b = w + l.weight_count();
    Tensor y(out_shape);
    for (std::size_t o = 0; o < l.out; ++o) {
      Real* yo = y.data() + o * oh * ow;
      std::fill(yo, yo + oh * ow, b[o]);
      for (std::size_t c = 0; c < l.in; ++c) {
        const Real* xc = x.data() + c * ih * iw;
        const Real* wk = w + (o * l.in + c) * k * k;
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t kx = 0; kx < k; ++kx) {
            const Real wv = wk[ky * k + kx];
            for (std::size_t r = 0; r < oh; ++r) {
              const Real* xr = xc + (r + ky) * iw + kx;
              Real* yr = yo + r * ow;
              for (std::size_t q = 0; q < ow; ++q) yr[q] += wv * xr[q];
            }
          }
        }
      }
    }
    return y;
  }

  // Adds the parameter gradient of layer i into `grad` (full-network layout)
  // and returns dL/d(input of layer i) when `need_input` is set.
  Tensor backprop(std::size_t i, const Tensor& in, const Tensor& out, const Tensor& up, std::span<Real> grad,
                  bool need_input) const {
    const LayerSpec& l = params_.layers[i];
    const Real* w = params_.values.data() + offsets_[i];
    Real* gw = grad.data() + offsets_[i];
    switch (l.kind) {
      case LayerKind::conv2d: {
        const std::size_t ih = in.extent(1), iw = in.extent(2);
        const std::size_t oh = out.extent(1), ow = out.extent(2), k = l.kernel;
        Real* gb = gw + l.weight_count();
        Tensor din(in.shape());
        for (std::size_t o = 0; o < l.out; ++o) {
          const Real* uo = up.data() + o * oh * ow;
          Real s = 0.0;
          for (std::size_t q = 0; q < oh * ow; ++q) s += uo[q];
          gb[o] += s;
          for (std::size_t c = 0; c < l.in; ++c) {
            const Real* xc = in.data() + c * ih * iw;
            Real* dc = din.data() + c * ih * iw;
            const Real* wk = w + (o * l.in + c) * k * k;
            Real* gk = gw + (o * l.in + c) * k * k;
            for (std::size_t ky = 0; ky < k; ++ky) {
              for (std::size_t kx = 0; kx < k; ++kx) {
                const Real wv = wk[ky * k + kx];
                Real acc = 0.0;
                for (std::size_t r = 0; r < oh; ++r) {
                  const Real* xr = xc + (r + ky) * iw + kx;
                  const Real* ur = uo + r * ow;
                  for (std::size_t q = 0; q < ow; ++q) acc += ur[q] * xr[q];
                  if (need_input) {
                    Real* dr = dc + (r + ky) * iw + kx;
                    for (std::size_t q = 0; q < ow; ++q) dr[q] += wv * ur[q];
                  }
                }
                gk[ky * k + kx] += acc;
              }
            }
          }
        }
        return din;
      }
      case LayerKind::dense: {
        Real* gb = gw + l.weight_count();
        Tensor din(in.shape());
        for (std::size_t o = 0; o < l.out; ++o) {
          const Real u = up[o];
          gb[o] += u;
          if (u == 0.0) continue;
          const Real* row = w + o * l.in;
          Real* grow = gw + o * l.in;
          for (std::size_t k = 0; k < l.in; ++k) {
            grow[k] += u * in[k];
            din[k] += u * row[k];
          }
        }
        return din;
      }
      case LayerKind::relu: {
        Tensor din = up;
        for (std::size_t k = 0; k < din.size(); ++k) {
          if (!(in[k] > 0.0)) din[k] = 0.0;
        }
        return din;
      }
      case LayerKind::sigmoid: {
        Tensor din = up;
        for (std::size_t k = 0; k < din.size(); ++k) din[k] *= out[k] * (1.0 - out[k]);
        return din;
      }
      case LayerKind::global_avg_pool: {
        Tensor din(in.shape());
        const std::size_t plane = in.extent(1) * in.extent(2);
        const Real scale = 1.0 / static_cast<Real>(plane);
        for (std::size_t ch = 0; ch < in.extent(0); ++ch) {
          for (std::size_t q = 0; q < plane; ++q) din[ch * plane + q] = up[ch] * scale;
        }
        return din;
      }
    }
    return up;
  }

  ModelParams params_;
  Shape input_shape_;
  std::vector<Shape> shapes_;
  std::vector<std::size_t> offsets_;
  Tensor input_;
  std::vector<Tensor> trace_;
  bool has_trace_ = false;
};

// ---------------------------------------------------------------------------
// Losses

struct LossValue {
  Real loss = 0.0;
  Tensor grad;
};

/// Softmax followed by negative log-likelihood of `label`.
inline LossValue softmax_cross_entropy(const Tensor& logits, std::size_t label) {
  if (label >= logits.size()) throw ParameterError("label out of range");
  const Real mx = *std::max_element(logits.values().begin(), logits.values().end());
  Real z = 0.0;
  for (Real v : logits.values()) z += std::exp(v - mx);
  LossValue out{0.0, Tensor(logits.shape())};
  for (std::size_t k = 0; k < logits.size(); ++k) out.grad[k] = std::exp(logits[k] - mx) / z;
  out.loss = -(logits[label] - mx - std::log(z));
  out.grad[label] -= 1.0;
  return out;
}

/// Sum of squared differences; gradient 2(y - target).
inline LossValue squared_error(const Tensor& output, std::span<const Real> target) {
  if (target.size() != output.size()) throw ShapeError("squared_error: target length mismatch");
  LossValue out{0.0, Tensor(output.shape())};
  for (std::size_t k = 0; k < output.size(); ++k) {
    const Real d = output[k] - target[k];
    out.loss += d * d;
    out.grad[k] = 2.0 * d;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimizers

inline ModelParams sgd_step(const ModelParams& params, std::span<const Real> grad, Real lr) {
  if (grad.size() != params.values.size()) throw AlignmentError("sgd_step: gradient length mismatch");
  ModelParams out = params;
  for (std::size_t i = 0; i < grad.size(); ++i) out.values[i] -= lr * grad[i];
  return out;
}

inline ModelParams sgd_step(const ModelParams& params, const GradientTape& tape, Real lr) {
  return sgd_step(params, tape.params, lr);
}

struct AdamOptions {
  Real lr = 1e-3;
  Real beta1 = 0.9;
  Real beta2 = 0.999;
  Real eps = 1e-8;
  Real weight_decay = 0.0;  // decoupled (AdamW-style); 0 gives plain Adam
};

struct AdamState {
  std::vector<Real> m;
  std::vector<Real> v;
  std::size_t step = 0;
};

/// In-place Adam update of `params`. An empty state is initialised on first use.
inline void adam_update(AdamState& state, std::span<Real> params, std::span<const Real> grad, const AdamOptions& opt) {
  if (grad.size() != params.size()) throw AlignmentError("adam_step: gradient length mismatch");
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
    state.step = 0;
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw AlignmentError("adam_step: state length mismatch");
  }
  ++state.step;
  const Real c1 = 1.0 - std::pow(opt.beta1, static_cast<Real>(state.step));
  const Real c2 = 1.0 - std::pow(opt.beta2, static_cast<Real>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Real g = grad[i];
    state.m[i] = opt.beta1 * state.m[i] + (1.0 - opt.beta1) * g;
    state.v[i] = opt.beta2 * state.v[i] + (1.0 - opt.beta2) * g * g;
    if (!std::isfinite(state.m[i]) || !std::isfinite(state.v[i])) {
      throw NumericError("adam_step: non-finite moment at index " + std::to_string(i));
    }
    const Real mhat = state.m[i] / c1;
    const Real vhat = state.v[i] / c2;
    if (opt.weight_decay != 0.0) params[i] -= opt.lr * opt.weight_decay * params[i];
    params[i] -= opt.lr * mhat / (std::sqrt(vhat) + opt.eps);
  }
}

inline ModelParams adam_step(AdamState& state, const ModelParams& params, std::span<const Real> grad,
                             const AdamOptions& opt) {
  ModelParams out = params;
  adam_update(state, out.values, grad, opt);
  return out;
}

// ---------------------------------------------------------------------------
// Reference classifier

/// Desk-scale classifier: conv3x3 (C->8) + ReLU, conv3x3 (8->16) + ReLU,
/// global average pool, dense (16->classes).
struct ClassifierArch {
  std::size_t channels = 1;
  std::size_t image_size = 16;
  std::size_t num_classes = 10;
  std::size_t conv1_channels = 8;
  std::size_t conv2_channels = 16;
  std::size_t kernel = 3;

  std::vector<LayerSpec> layers() const {
    return {LayerSpec::conv(channels, conv1_channels, kernel), LayerSpec::act(LayerKind::relu),
            LayerSpec::conv(conv1_channels, conv2_channels, kernel), LayerSpec::act(LayerKind::relu),
            LayerSpec::act(LayerKind::global_avg_pool), LayerSpec::fc(conv2_channels, num_classes)};
  }
  Shape input_shape() const { return {channels, image_size, image_size}; }
  std::size_t feature_size() const { return image_size - 2 * (kernel - 1); }

  ModelParams init(std::uint64_t seed) const { return init_params(layers(), seed); }
  Network network(const ModelParams& params) const {
    if (params.layers != layers()) throw ShapeError("parameters do not match the classifier architecture");
    return Network(params, input_shape());
  }
};

}  // namespace fedcam
