#pragma once

// Executes a NetworkSpec over a batch. Activations carry a leading batch
// dimension. Per-sample work runs in parallel; weight gradients are summed
// over samples in index order so results do not depend on the worker count.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "hand3d/error.hpp"
#include "hand3d/nn/ops.hpp"
#include "hand3d/nn/spec.hpp"
#include "hand3d/nn/tensor.hpp"
#include "hand3d/parallel.hpp"
#include "hand3d/rng.hpp"

namespace hand3d::nn {

struct RunOptions {
  bool train = false;
  /// Dropout stream: masks are a pure function of (seed, layer, step, element).
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  std::size_t workers = worker_count();
};

/// Keep-scale of one dropout element: 1/(1-p) or 0.
inline double dropout_scale(double p, std::uint64_t seed, std::uint64_t layer, std::uint64_t step,
                            std::uint64_t element) {
  const double keep = 1.0 - p;
  return bits_to_unit(child_seed(seed, {layer, step, element})) < keep ? 1.0 / keep : 0.0;
}

template <typename T>
class Network {
 public:
  explicit Network(NetworkSpec spec) : spec_(std::move(spec)), graph_(resolve(spec_)) {
    const std::size_t n_layers = spec_.layers.size();
    first_param_.assign(n_layers, kNone);
    for (std::size_t l = 0; l < n_layers; ++l) {
      const LayerSpec& ls = spec_.layers[l];
      const Shape& in = graph_.shapes[graph_.sources[l][0]];
      Shape w;
      if (ls.kind == LayerKind::Conv) w = {ls.kernel, ls.kernel, in[2], ls.units};
      else if (ls.kind == LayerKind::FullyConnected) w = {in[0], ls.units};
      else continue;
      first_param_[l] = params_.size();
      params_.emplace_back(w);
      params_.emplace_back(Shape{ls.units});
      names_.push_back(ls.name + "/weight");
      names_.push_back(ls.name + "/bias");
    }
    for (Tensor<T>& p : params_) p.zero_grad();
  }

  const NetworkSpec& spec() const { return spec_; }
  const ResolvedGraph& graph() const { return graph_; }

  std::vector<Tensor<T>>& parameters() { return params_; }
  const std::vector<Tensor<T>>& parameters() const { return params_; }
  const std::vector<std::string>& parameter_names() const { return names_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.size();
    return n;
  }

  /// Fan-in scaled uniform weights U(-sqrt(6/fan_in), +sqrt(6/fan_in)), zero biases.
  void init_params(std::uint64_t seed) {
    for (std::size_t l = 0; l < spec_.layers.size(); ++l) {
      if (first_param_[l] == kNone) continue;
      Tensor<T>& w = params_[first_param_[l]];
      const std::size_t fan_in = w.size() / w.shape.back();
      const double bound = std::sqrt(6.0 / double(fan_in));
      Rng rng(child_seed(seed, {l}));
      for (T& v : w.data) v = T(rng.uniform(-bound, bound));
      std::fill(params_[first_param_[l] + 1].data.begin(), params_[first_param_[l] + 1].data.end(), T(0));
    }
  }

  void zero_grad() {
    for (Tensor<T>& p : params_) p.zero_grad();
  }

  /// Inputs in spec order, each shaped [N, ...input shape]. Returns the output
  /// taps in spec order.
  std::vector<const Tensor<T>*> forward(const std::vector<Tensor<T>>& inputs, const RunOptions& options = {}) {
    if (inputs.size() != spec_.inputs.size())
      throw Error(ErrorCode::ShapeMismatch, spec_.arch + ": expected " + std::to_string(spec_.inputs.size()) +
                                                " inputs, got " + std::to_string(inputs.size()));
    batch_ = inputs[0].shape.empty() ? 0 : inputs[0].shape[0];
    if (batch_ == 0) throw Error(ErrorCode::ShapeMismatch, spec_.arch + ": empty batch");
    options_ = options;
    acts_.resize(graph_.names.size());
    aux_.resize(spec_.layers.size());
    masks_.resize(spec_.layers.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      if (inputs[i].shape != batched(graph_.shapes[i]))
        throw Error(ErrorCode::ShapeMismatch, spec_.arch + ": input \"" + graph_.names[i] + "\" should be " +
                                                  shape_string(batched(graph_.shapes[i])) + ", got " +
                                                  shape_string(inputs[i].shape));
      acts_[i].shape = inputs[i].shape;
      acts_[i].data = inputs[i].data;
    }
    for (std::size_t l = 0; l < spec_.layers.size(); ++l) forward_layer(l);
    std::vector<const Tensor<T>*> out;
    for (std::size_t o : graph_.outputs) out.push_back(&acts_[o]);
    return out;
  }

  /// Activation of any named node from the last forward pass.
  const Tensor<T>& activation(const std::string& name) const { return acts_.at(graph_.index_of(name)); }

  /// Backpropagates output gradients (one per tap, shaped like the tap).
  /// Parameter gradients are overwritten. With input_grads the gradients of
  /// the network inputs are left in activation(input).grad.
  void backward(const std::vector<Tensor<T>>& output_grads, bool input_grads = false) {
    if (output_grads.size() != graph_.outputs.size())
      throw Error(ErrorCode::ShapeMismatch, spec_.arch + ": one gradient per output tap required");
    for (Tensor<T>& a : acts_) a.grad.assign(a.data.size(), T(0));
    for (std::size_t k = 0; k < graph_.outputs.size(); ++k) {
      Tensor<T>& a = acts_[graph_.outputs[k]];
      if (output_grads[k].size() != a.size())
        throw Error(ErrorCode::ShapeMismatch, spec_.arch + ": output gradient size mismatch");
      for (std::size_t i = 0; i < a.size(); ++i) a.grad[i] += output_grads[k].data[i];
    }
    zero_grad();
    for (std::size_t l = spec_.layers.size(); l-- > 0;) backward_layer(l, input_grads);
  }

  /// Hash of every discrete choice made in the last forward pass (ReLU
  /// active sets, pooling winners). Equal signatures mean the network was
  /// evaluated on the same smooth piece.
  std::uint64_t pattern_signature() const {
    std::uint64_t h = 0x243f6a8885a308d3ULL;
    for (std::size_t l = 0; l < spec_.layers.size(); ++l) {
      const LayerSpec& ls = spec_.layers[l];
      if (ls.kind == LayerKind::ReLU) {
        const Tensor<T>& x = acts_[graph_.sources[l][0]];
        for (std::size_t i = 0; i < x.size(); ++i) h = mix64(h ^ (x.data[i] > T(0) ? 0x9e37ULL + i : i));
      } else if (ls.kind == LayerKind::MaxPool || ls.kind == LayerKind::Argmax) {
        for (std::size_t v : aux_[l]) h = mix64(h ^ v);
      }
    }
    return h;
  }

 private:
  static constexpr std::size_t kNone = std::size_t(-1);

  Shape batched(const Shape& s) const {
    Shape b{batch_};
    b.insert(b.end(), s.begin(), s.end());
    return b;
  }

  std::size_t layer_node(std::size_t l) const { return graph_.num_inputs + l; }

  ConvGeometry geometry(std::size_t l) const {
    const LayerSpec& ls = spec_.layers[l];
    const Shape& in = graph_.shapes[graph_.sources[l][0]];
    return {in[0], in[1], in[2], ls.kernel, ls.stride, ls.padding,
            ls.kind == LayerKind::Conv ? ls.units : in[2]};
  }

  void forward_layer(std::size_t l) {
    const LayerSpec& ls = spec_.layers[l];
    const std::size_t node = layer_node(l);
    const std::vector<std::size_t>& src = graph_.sources[l];
    const Tensor<T>& x = acts_[src[0]];
    Tensor<T>& y = acts_[node];
    y.shape = batched(graph_.shapes[node]);
    y.data.assign(element_count(y.shape), T(0));
    const std::size_t in_size = element_count(graph_.shapes[src[0]]);
    const std::size_t out_size = element_count(graph_.shapes[node]);
    const std::size_t workers = options_.workers;

    switch (ls.kind) {
      case LayerKind::Conv: {
        const ConvGeometry g = geometry(l);
        const T* w = params_[first_param_[l]].data.data();
        const T* b = params_[first_param_[l] + 1].data.data();
        parallel_for(batch_, [&](std::size_t n) {
          conv_forward(g, x.data.data() + n * in_size, w, b, y.data.data() + n * out_size);
        }, workers);
        break;
      }
      case LayerKind::FullyConnected: {
        const T* w = params_[first_param_[l]].data.data();
        const T* b = params_[first_param_[l] + 1].data.data();
        parallel_for(batch_, [&](std::size_t n) {
          fc_forward(in_size, out_size, x.data.data() + n * in_size, w, b, y.data.data() + n * out_size);
        }, workers);
        break;
      }
      case LayerKind::ReLU:
        for (std::size_t i = 0; i < y.size(); ++i) y.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
        break;
      case LayerKind::MaxPool: {
        const ConvGeometry g = geometry(l);
        aux_[l].assign(y.size(), 0);
        parallel_for(batch_, [&](std::size_t n) {
          maxpool_forward(g, x.data.data() + n * in_size, y.data.data() + n * out_size, aux_[l].data() + n * out_size);
        }, workers);
        break;
      }
      case LayerKind::Dropout: {
        if (!options_.train || ls.dropout == 0.0) {
          masks_[l].clear();
          y.data = x.data;
          break;
        }
        masks_[l].resize(y.size());
        parallel_for(batch_, [&](std::size_t n) {
          for (std::size_t i = n * out_size; i < (n + 1) * out_size; ++i) {
            masks_[l][i] = T(dropout_scale(ls.dropout, options_.seed, l, options_.step, i));
            y.data[i] = x.data[i] * masks_[l][i];
          }
        }, workers);
        break;
      }
      case LayerKind::Concat: {
        const std::size_t c_out = graph_.shapes[node].back();
        const std::size_t pixels = out_size / c_out;
        std::size_t offset = 0;
        for (std::size_t s : src) {
          const std::size_t c = graph_.shapes[s].back();
          const T* xs = acts_[s].data.data();
          for (std::size_t n = 0; n < batch_; ++n)
            for (std::size_t p = 0; p < pixels; ++p)
              std::copy_n(xs + (n * pixels + p) * c, c, y.data.data() + (n * pixels + p) * c_out + offset);
          offset += c;
        }
        break;
      }
      case LayerKind::BilinearUpsample: {
        const Shape& in = graph_.shapes[src[0]];
        parallel_for(batch_, [&](std::size_t n) {
          upsample_forward(in[0], in[1], in[2], ls.target[0], ls.target[1], x.data.data() + n * in_size,
                           y.data.data() + n * out_size);
        }, workers);
        break;
      }
      case LayerKind::Reshape:
        y.data = x.data;
        break;
      case LayerKind::Argmax: {
        const std::size_t c = graph_.shapes[src[0]].back();
        aux_[l].assign(y.size(), 0);
        for (std::size_t p = 0; p < y.size(); ++p) {
          std::size_t best = 0;
          for (std::size_t k = 1; k < c; ++k)
            if (x.data[p * c + k] > x.data[p * c + best]) best = k;
          aux_[l][p] = best;
          y.data[p] = T(best);
        }
        break;
      }
    }
  }

  bool needs_grad(std::size_t node, bool input_grads) const { return node >= graph_.num_inputs || input_grads; }

  /// Sums per-sample buffers [N, size] into dst in sample order.
  static void reduce_samples(const std::vector<T>& partial, std::size_t batch, std::vector<T>& dst) {
    const std::size_t size = dst.size();
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t i = 0; i < size; ++i) dst[i] += partial[n * size + i];
  }

  void backward_layer(std::size_t l, bool input_grads) {
    const LayerSpec& ls = spec_.layers[l];
    const std::size_t node = layer_node(l);
    const std::vector<std::size_t>& src = graph_.sources[l];
    Tensor<T>& x = acts_[src[0]];
    const Tensor<T>& y = acts_[node];
    const std::size_t in_size = element_count(graph_.shapes[src[0]]);
    const std::size_t out_size = element_count(graph_.shapes[node]);
    const bool want_dx = needs_grad(src[0], input_grads);
    const std::size_t workers = options_.workers;

    switch (ls.kind) {
      case LayerKind::Conv:
      case LayerKind::FullyConnected: {
        Tensor<T>& w = params_[first_param_[l]];
        Tensor<T>& b = params_[first_param_[l] + 1];
        std::vector<T> dw(batch_ * w.size(), T(0)), db(batch_ * b.size(), T(0));
        const ConvGeometry g = ls.kind == LayerKind::Conv ? geometry(l) : ConvGeometry{};
        parallel_for(batch_, [&](std::size_t n) {
          const T* xn = x.data.data() + n * in_size;
          const T* dyn = y.grad.data() + n * out_size;
          T* dxn = want_dx ? x.grad.data() + n * in_size : nullptr;
          if (ls.kind == LayerKind::Conv)
            conv_backward(g, xn, w.data.data(), dyn, dxn, dw.data() + n * w.size(), db.data() + n * b.size());
          else
            fc_backward(in_size, out_size, xn, w.data.data(), dyn, dxn, dw.data() + n * w.size(),
                        db.data() + n * b.size());
        }, workers);
        reduce_samples(dw, batch_, w.grad);
        reduce_samples(db, batch_, b.grad);
        break;
      }
      case LayerKind::ReLU:
        if (want_dx)
          for (std::size_t i = 0; i < y.size(); ++i)
            if (x.data[i] > T(0)) x.grad[i] += y.grad[i];
        break;
      case LayerKind::MaxPool:
        if (want_dx)
          parallel_for(batch_, [&](std::size_t n) {
            // argmax indices are per-sample offsets
            maxpool_backward(out_size, aux_[l].data() + n * out_size, y.grad.data() + n * out_size,
                             x.grad.data() + n * in_size);
          }, workers);
        break;
      case LayerKind::Dropout:
        if (!want_dx) break;
        if (masks_[l].empty()) {
          for (std::size_t i = 0; i < y.size(); ++i) x.grad[i] += y.grad[i];
        } else {
          for (std::size_t i = 0; i < y.size(); ++i) x.grad[i] += y.grad[i] * masks_[l][i];
        }
        break;
      case LayerKind::Concat: {
        const std::size_t c_out = graph_.shapes[node].back();
        const std::size_t pixels = out_size / c_out;
        std::size_t offset = 0;
        for (std::size_t s : src) {
          const std::size_t c = graph_.shapes[s].back();
          if (needs_grad(s, input_grads)) {
            T* gs = acts_[s].grad.data();
            for (std::size_t n = 0; n < batch_; ++n)
              for (std::size_t p = 0; p < pixels; ++p)
                for (std::size_t k = 0; k < c; ++k)
                  gs[(n * pixels + p) * c + k] += y.grad[(n * pixels + p) * c_out + offset + k];
          }
          offset += c;
        }
        break;
      }
      case LayerKind::BilinearUpsample: {
        if (!want_dx) break;
        const Shape& in = graph_.shapes[src[0]];
        parallel_for(batch_, [&](std::size_t n) {
          upsample_backward(in[0], in[1], in[2], ls.target[0], ls.target[1], y.grad.data() + n * out_size,
                            x.grad.data() + n * in_size);
        }, workers);
        break;
      }
      case LayerKind::Reshape:
        if (want_dx)
          for (std::size_t i = 0; i < y.size(); ++i) x.grad[i] += y.grad[i];
        break;
      case LayerKind::Argmax:
        break;  // piecewise constant
    }
  }

  NetworkSpec spec_;
  ResolvedGraph graph_;
  std::vector<Tensor<T>> params_;
  std::vector<std::string> names_;
  std::vector<std::size_t> first_param_;
  std::vector<Tensor<T>> acts_;
  std::vector<std::vector<std::size_t>> aux_;
  std::vector<std::vector<T>> masks_;
  RunOptions options_;
  std::size_t batch_ = 0;
};

}  // namespace hand3d::nn
