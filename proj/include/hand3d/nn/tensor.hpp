#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "hand3d/error.hpp"

namespace hand3d::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t element_count(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
  return out + "]";
}

/// Row-major n-d array with an optional gradient buffer of the same size.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)), data(element_count(shape), fill) {}
  Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != element_count(shape))
      throw Error(ErrorCode::ShapeMismatch, "tensor data length does not match shape " + shape_string(shape));
  }

  std::size_t size() const { return data.size(); }
  bool has_grad() const { return grad.size() == data.size(); }

  void zero_grad() { grad.assign(data.size(), T(0)); }

  void reshape(Shape s) {
    if (element_count(s) != data.size())
      throw Error(ErrorCode::ShapeMismatch, "cannot reshape " + shape_string(shape) + " to " + shape_string(s));
    shape = std::move(s);
  }

  T& operator[](std::size_t i) { return data[i]; }
  T operator[](std::size_t i) const { return data[i]; }
};

}  // namespace hand3d::nn
