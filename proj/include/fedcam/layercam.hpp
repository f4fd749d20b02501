#pragma once

// Class activation maps of an uploaded model on a fixed probe image.
//
// Both maps are built from the final convolutional feature map A (K x H x B,
// taken after its ReLU) and the gradient of the pre-softmax class score
// Y(c) with respect to A:
//
//   LayerCAM:  map(i,j) = ReLU( sum_k ReLU(dY/dA_k(i,j)) * A_k(i,j) )
//   GradCAM:   map(i,j) = ReLU( sum_k mean_ij(dY/dA_k)  * A_k(i,j) )

#include <algorithm>
#include <span>
#include <vector>

#include "fedcam/errors.hpp"
#include "fedcam/nn.hpp"
#include "fedcam/tensor.hpp"

namespace fedcam {

enum class CamMethod { layercam, gradcam };

struct HeatMap {
  Tensor values;  // H x B, every entry >= 0
  std::size_t client_id = 0;
  std::size_t round = 0;
  std::size_t target_class = 0;

  std::size_t height() const { return values.extent(0); }
  std::size_t width() const { return values.extent(1); }
};

struct ProbeImage {
  Tensor image;
  std::size_t true_class = 0;
};

/// Feature map and class-score gradient at the final conv layer.
struct CamInputs {
  Tensor activations;  // K x H x B
  Tensor gradients;    // K x H x B
};

inline CamInputs cam_inputs(Network& net, const ProbeImage& probe) {
  const auto feature = net.feature_layer();
  if (!feature) throw ShapeError("class activation maps need a convolutional layer");
  const ForwardResult fwd = net.forward(probe.image);
  if (probe.true_class >= fwd.output.size()) throw ParameterError("probe class outside the logit range");
  Tensor seed(fwd.output.shape());
  seed[probe.true_class] = 1.0;
  GradientTape tape = net.backward(seed);
  return {fwd.activations[*feature], std::move(tape.activations[*feature])};
}

inline void check_cam_shapes(const Tensor& activations, const Tensor& gradients) {
  if (activations.rank() != 3 || activations.shape() != gradients.shape()) {
    throw ShapeError("activations and gradients must share a K x H x B shape");
  }
}

inline HeatMap layercam_from(const Tensor& activations, const Tensor& gradients) {
  check_cam_shapes(activations, gradients);
  const std::size_t k = activations.extent(0), h = activations.extent(1), b = activations.extent(2);
  HeatMap map;
  map.values = Tensor({h, b});
  for (std::size_t ch = 0; ch < k; ++ch) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < b; ++j) {
        const Real g = gradients.at(ch, i, j);
        if (g > 0.0) map.values.at(i, j) += g * activations.at(ch, i, j);
      }
    }
  }
  for (auto& v : map.values.values()) v = std::max(v, 0.0);
  return map;
}

inline HeatMap gradcam_from(const Tensor& activations, const Tensor& gradients) {
  check_cam_shapes(activations, gradients);
  const std::size_t k = activations.extent(0), h = activations.extent(1), b = activations.extent(2);
  HeatMap map;
  map.values = Tensor({h, b});
  for (std::size_t ch = 0; ch < k; ++ch) {
    Real weight = 0.0;
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < b; ++j) weight += gradients.at(ch, i, j);
    }
    weight /= static_cast<Real>(h * b);
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < b; ++j) map.values.at(i, j) += weight * activations.at(ch, i, j);
    }
  }
  for (auto& v : map.values.values()) v = std::max(v, 0.0);
  return map;
}

inline HeatMap cam_map(CamMethod method, const ClassifierArch& arch, const ModelParams& params,
                       const ProbeImage& probe) {
  Network net = arch.network(params);
  const CamInputs in = cam_inputs(net, probe);
  HeatMap map = method == CamMethod::layercam ? layercam_from(in.activations, in.gradients)
                                              : gradcam_from(in.activations, in.gradients);
  map.target_class = probe.true_class;
  return map;
}

inline HeatMap layercam_map(const ClassifierArch& arch, const ModelParams& params, const ProbeImage& probe) {
  return cam_map(CamMethod::layercam, arch, params, probe);
}

inline HeatMap gradcam_map(const ClassifierArch& arch, const ModelParams& params, const ProbeImage& probe) {
  return cam_map(CamMethod::gradcam, arch, params, probe);
}

/// Min-max scales a map into [0, 1]; a constant map becomes all zeros.
inline std::vector<Real> normalized_row(const Tensor& map) {
  std::vector<Real> row(map.values().begin(), map.values().end());
  if (row.empty()) return row;
  const auto [lo, hi] = std::minmax_element(row.begin(), row.end());
  const Real mn = *lo, range = *hi - *lo;
  for (auto& v : row) v = range > 0.0 ? (v - mn) / range : 0.0;
  return row;
}

/// One min-max normalised, row-major flattened map per row, in input order.
inline Tensor flatten_maps(std::span<const HeatMap> maps) {
  if (maps.empty()) return Tensor({0, 0});
  const Shape dims = maps.front().values.shape();
  const std::size_t cols = maps.front().values.size();
  Tensor rows({maps.size(), cols});
  for (std::size_t r = 0; r < maps.size(); ++r) {
    if (maps[r].values.shape() != dims) throw ShapeError("flatten_maps: heat maps have mixed dimensions");
    const auto row = normalized_row(maps[r].values);
    std::copy(row.begin(), row.end(), rows.data() + r * cols);
  }
  return rows;
}

/// Row `r` of a flattened matrix back in H x B form.
inline Tensor unflatten_row(const Tensor& rows, std::size_t r, std::size_t height, std::size_t width) {
  if (rows.rank() != 2 || rows.extent(1) != height * width) throw ShapeError("unflatten_row: width mismatch");
  const Real* p = rows.data() + r * rows.extent(1);
  return Tensor({height, width}, std::vector<Real>(p, p + height * width));
}

}  // namespace fedcam
