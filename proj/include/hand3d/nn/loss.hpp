#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "hand3d/error.hpp"
#include "hand3d/nn/tensor.hpp"

namespace hand3d::nn {

template <typename T>
struct LossResult {
  T loss = T(0);
  /// Gradient with respect to the prediction, same shape.
  Tensor<T> grad;
};

/// Mean over rows of -log softmax(logits)[label]; logits are [N, C].
template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.shape.size() != 2 || logits.shape[0] != labels.size())
    throw Error(ErrorCode::ShapeMismatch, "cross entropy needs [N, C] logits and N labels");
  const std::size_t n = logits.shape[0], c = logits.shape[1];
  LossResult<T> r{T(0), Tensor<T>(logits.shape)};
  for (std::size_t i = 0; i < n; ++i) {
    const int label = labels[i];
    if (label < 0 || std::size_t(label) >= c)
      throw Error(ErrorCode::LabelOutOfRange,
                  "label " + std::to_string(label) + " outside [0, " + std::to_string(c) + ")");
    const T* z = logits.data.data() + i * c;
    T zmax = z[0];
    for (std::size_t k = 1; k < c; ++k) zmax = std::max(zmax, z[k]);
    T sum = 0;
    for (std::size_t k = 0; k < c; ++k) sum += std::exp(z[k] - zmax);
    const T log_sum = std::log(sum) + zmax;
    r.loss += log_sum - z[label];
    T* g = r.grad.data.data() + i * c;
    for (std::size_t k = 0; k < c; ++k) g[k] = (std::exp(z[k] - log_sum) - T(k == std::size_t(label))) / T(n);
  }
  r.loss /= T(n);
  return r;
}

/// Sum of squared differences; gradient 2 (pred - target).
template <typename T>
LossResult<T> l2_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.shape != target.shape)
    throw Error(ErrorCode::ShapeMismatch,
                "l2 loss operands " + shape_string(pred.shape) + " and " + shape_string(target.shape));
  LossResult<T> r{T(0), Tensor<T>(pred.shape)};
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const T d = pred.data[i] - target.data[i];
    r.loss += d * d;
    r.grad.data[i] = 2 * d;
  }
  return r;
}

}  // namespace hand3d::nn
