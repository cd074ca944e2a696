#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "hand3d/error.hpp"
#include "hand3d/nn/tensor.hpp"

namespace hand3d::nn {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
  AdamOptions options;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::uint64_t t = 0;

  AdamState() = default;
  AdamState(const std::vector<Tensor<T>>& params, AdamOptions opts) : options(opts) {
    for (const Tensor<T>& p : params) {
      m.emplace_back(p.size(), T(0));
      v.emplace_back(p.size(), T(0));
    }
  }
};

/// One bias-corrected Adam update using each parameter's grad. lr overrides
/// options.lr when positive (for schedules).
template <typename T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state, double lr = -1.0) {
  if (state.m.size() != params.size())
    throw Error(ErrorCode::ShapeMismatch, "optimizer state does not match the parameter list");
  const AdamOptions& o = state.options;
  if (!(lr > 0.0)) lr = o.lr;
  ++state.t;
  const double c1 = 1.0 - std::pow(o.beta1, double(state.t));
  const double c2 = 1.0 - std::pow(o.beta2, double(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<T>& p = params[k];
    if (p.grad.size() != p.size() || state.m[k].size() != p.size())
      throw Error(ErrorCode::ShapeMismatch, "parameter " + std::to_string(k) + " has no matching gradient or state");
    std::vector<T>& m = state.m[k];
    std::vector<T>& v = state.v[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double g = double(p.grad[i]);
      m[i] = T(o.beta1 * double(m[i]) + (1.0 - o.beta1) * g);
      v[i] = T(o.beta2 * double(v[i]) + (1.0 - o.beta2) * g * g);
      const double mhat = double(m[i]) / c1;
      const double vhat = double(v[i]) / c2;
      p.data[i] = T(double(p.data[i]) - lr * mhat / (std::sqrt(vhat) + o.epsilon));
    }
  }
}

}  // namespace hand3d::nn
