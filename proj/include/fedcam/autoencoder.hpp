#pragma once

// Fully connected autoencoder over flattened heat maps, reconstruction-error
// scoring, and the mean + alpha * std verdict threshold.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedcam/errors.hpp"
#include "fedcam/nn.hpp"
#include "fedcam/tensor.hpp"

namespace fedcam {

enum class AeActivation { sigmoid, linear };

struct AeOptions {
  std::size_t hidden = 128;
  std::size_t epochs = 200;
  double lr = 1e-3;
  double weight_decay = 1e-5;
  std::uint64_t seed = 0;
  AeActivation activation = AeActivation::sigmoid;
};

struct Autoencoder {
  ModelParams params;
  std::size_t input_dim = 0;
  std::vector<double> loss_history;  // mean per-row squared error, one entry per epoch

  Network network() const { return Network(params, {input_dim}); }

  /// Reconstruction of every row of `rows` (n x input_dim).
  Tensor reconstruct(const Tensor& rows) const {
    if (rows.rank() != 2 || rows.extent(1) != input_dim) throw ShapeError("autoencoder input width mismatch");
    Network net = network();
    Tensor out(rows.shape());
    for (std::size_t r = 0; r < rows.extent(0); ++r) {
      const Real* p = rows.data() + r * input_dim;
      const ForwardResult fwd = net.forward(Tensor({input_dim}, std::vector<Real>(p, p + input_dim)));
      std::copy(fwd.output.values().begin(), fwd.output.values().end(), out.data() + r * input_dim);
    }
    return out;
  }
};

inline std::vector<LayerSpec> autoencoder_layers(std::size_t dim, std::size_t hidden, AeActivation act) {
  if (act == AeActivation::sigmoid) {
    return {LayerSpec::fc(dim, hidden), LayerSpec::act(LayerKind::sigmoid), LayerSpec::fc(hidden, dim),
            LayerSpec::act(LayerKind::sigmoid)};
  }
  return {LayerSpec::fc(dim, hidden), LayerSpec::fc(hidden, dim)};
}

inline Autoencoder init_autoencoder(std::size_t dim, const AeOptions& opt) {
  if (dim == 0 || opt.hidden == 0) throw ParameterError("autoencoder dimensions must be positive");
  return {init_params(autoencoder_layers(dim, opt.hidden, opt.activation), opt.seed), dim, {}};
}

/// Full-batch Adam on the mean (over rows) of each row's summed squared
/// reconstruction error. A fresh model is initialised from `opt.seed`.
inline Autoencoder train_ae(const Tensor& rows, const AeOptions& opt) {
  if (rows.rank() != 2 || rows.extent(0) == 0 || rows.extent(1) == 0) {
    throw ShapeError("train_ae: rows must be a nonempty n x d matrix");
  }
  const std::size_t n = rows.extent(0), dim = rows.extent(1);
  Autoencoder ae = init_autoencoder(dim, opt);
  AdamState state;
  const AdamOptions adam{opt.lr, 0.9, 0.999, 1e-8, opt.weight_decay};
  std::vector<Tensor> inputs;
  inputs.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    const Real* p = rows.data() + r * dim;
    inputs.emplace_back(Shape{dim}, std::vector<Real>(p, p + dim));
  }
  std::vector<Real> grad(ae.params.size());
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    Network net = ae.network();
    std::fill(grad.begin(), grad.end(), 0.0);
    double loss = 0.0;
    for (const Tensor& x : inputs) {
      const ForwardResult fwd = net.forward(x);
      const LossValue l = squared_error(fwd.output, x.values());
      loss += l.loss;
      net.accumulate_gradient(l.grad, grad);
    }
    loss /= static_cast<double>(n);
    if (!std::isfinite(loss)) throw NumericError("train_ae: non-finite loss at epoch " + std::to_string(epoch));
    ae.loss_history.push_back(loss);
    for (auto& g : grad) g /= static_cast<double>(n);
    adam_update(state, ae.params.values, grad, adam);
  }
  return ae;
}

/// Mean absolute difference between each row and its reconstruction.
inline std::vector<double> score(const Autoencoder& ae, const Tensor& rows) {
  const Tensor rec = ae.reconstruct(rows);
  const std::size_t dim = ae.input_dim;
  std::vector<double> errors(rows.extent(0), 0.0);
  for (std::size_t r = 0; r < errors.size(); ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < dim; ++k) s += std::abs(rows[r * dim + k] - rec[r * dim + k]);
    errors[r] = s / static_cast<double>(dim);
  }
  return errors;
}

struct RoundVerdicts {
  std::vector<double> errors;
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation
  double threshold = 0.0;
  std::vector<int> verdicts;  // 1 = looks benign (error <= threshold), 0 = flagged
};

inline RoundVerdicts threshold_and_verdicts(std::span<const double> errors, double alpha) {
  if (errors.empty()) throw ParameterError("threshold_and_verdicts: no errors given");
  RoundVerdicts out;
  out.errors.assign(errors.begin(), errors.end());
  const double n = static_cast<double>(errors.size());
  for (double e : errors) out.mean += e;
  out.mean /= n;
  double var = 0.0;
  for (double e : errors) var += (e - out.mean) * (e - out.mean);
  out.stddev = std::sqrt(var / n);
  out.threshold = out.mean + alpha * out.stddev;
  out.verdicts.reserve(errors.size());
  for (double e : errors) out.verdicts.push_back(e <= out.threshold ? 1 : 0);
  return out;
}

}  // namespace fedcam
