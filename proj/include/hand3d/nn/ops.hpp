#pragma once

// Single-sample layer kernels on channels-last buffers. Backward kernels
// accumulate (+=) into their gradient outputs; a null dx skips the input
// gradient.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>

#include "hand3d/error.hpp"
#include "hand3d/nn/tensor.hpp"

namespace hand3d::nn {

struct ConvGeometry {
  std::size_t h = 0, w = 0, cin = 0;
  std::size_t kernel = 1, stride = 1, padding = 0;
  std::size_t cout = 0;

  std::size_t out_h() const { return (h + 2 * padding - kernel) / stride + 1; }
  std::size_t out_w() const { return (w + 2 * padding - kernel) / stride + 1; }
};

/// Cross-correlation with zero padding; weights are [k, k, cin, cout].
template <typename T>
void conv_forward(const ConvGeometry& g, const T* x, const T* weight, const T* bias, T* y) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t oy = 0; oy < oh; ++oy)
    for (std::size_t ox = 0; ox < ow; ++ox) {
      T* out = y + (oy * ow + ox) * g.cout;
      for (std::size_t co = 0; co < g.cout; ++co) out[co] = bias ? bias[co] : T(0);
      for (std::size_t ky = 0; ky < g.kernel; ++ky) {
        const std::ptrdiff_t iy = std::ptrdiff_t(oy * g.stride + ky) - std::ptrdiff_t(g.padding);
        if (iy < 0 || iy >= std::ptrdiff_t(g.h)) continue;
        for (std::size_t kx = 0; kx < g.kernel; ++kx) {
          const std::ptrdiff_t ix = std::ptrdiff_t(ox * g.stride + kx) - std::ptrdiff_t(g.padding);
          if (ix < 0 || ix >= std::ptrdiff_t(g.w)) continue;
          const T* in = x + (std::size_t(iy) * g.w + std::size_t(ix)) * g.cin;
          const T* wk = weight + (ky * g.kernel + kx) * g.cin * g.cout;
          for (std::size_t ci = 0; ci < g.cin; ++ci) {
            const T v = in[ci];
            if (v == T(0)) continue;
            const T* wrow = wk + ci * g.cout;
            for (std::size_t co = 0; co < g.cout; ++co) out[co] += v * wrow[co];
          }
        }
      }
    }
}

template <typename T>
void conv_backward(const ConvGeometry& g, const T* x, const T* weight, const T* dy, T* dx, T* dweight, T* dbias) {
  const std::size_t oh = g.out_h(), ow = g.out_w();
  for (std::size_t oy = 0; oy < oh; ++oy)
    for (std::size_t ox = 0; ox < ow; ++ox) {
      const T* d = dy + (oy * ow + ox) * g.cout;
      for (std::size_t co = 0; co < g.cout; ++co) dbias[co] += d[co];
      for (std::size_t ky = 0; ky < g.kernel; ++ky) {
        const std::ptrdiff_t iy = std::ptrdiff_t(oy * g.stride + ky) - std::ptrdiff_t(g.padding);
        if (iy < 0 || iy >= std::ptrdiff_t(g.h)) continue;
        for (std::size_t kx = 0; kx < g.kernel; ++kx) {
          const std::ptrdiff_t ix = std::ptrdiff_t(ox * g.stride + kx) - std::ptrdiff_t(g.padding);
          if (ix < 0 || ix >= std::ptrdiff_t(g.w)) continue;
          const std::size_t at = (std::size_t(iy) * g.w + std::size_t(ix)) * g.cin;
          const std::size_t wk = (ky * g.kernel + kx) * g.cin * g.cout;
          for (std::size_t ci = 0; ci < g.cin; ++ci) {
            const T v = x[at + ci];
            const T* wrow = weight + wk + ci * g.cout;
            T* dwrow = dweight + wk + ci * g.cout;
            if (dx) {
              T acc = 0;
              for (std::size_t co = 0; co < g.cout; ++co) {
                dwrow[co] += v * d[co];
                acc += wrow[co] * d[co];
              }
              dx[at + ci] += acc;
            } else if (v != T(0)) {
              for (std::size_t co = 0; co < g.cout; ++co) dwrow[co] += v * d[co];
            }
          }
        }
      }
    }
}

/// Window maximum; argmax records the flat input index of the winner (first
/// in row-major window order on ties). Padding never wins.
template <typename T>
void maxpool_forward(const ConvGeometry& g, const T* x, T* y, std::size_t* argmax) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), c = g.cin;
  for (std::size_t oy = 0; oy < oh; ++oy)
    for (std::size_t ox = 0; ox < ow; ++ox)
      for (std::size_t ch = 0; ch < c; ++ch) {
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_at = 0;
        for (std::size_t ky = 0; ky < g.kernel; ++ky) {
          const std::ptrdiff_t iy = std::ptrdiff_t(oy * g.stride + ky) - std::ptrdiff_t(g.padding);
          if (iy < 0 || iy >= std::ptrdiff_t(g.h)) continue;
          for (std::size_t kx = 0; kx < g.kernel; ++kx) {
            const std::ptrdiff_t ix = std::ptrdiff_t(ox * g.stride + kx) - std::ptrdiff_t(g.padding);
            if (ix < 0 || ix >= std::ptrdiff_t(g.w)) continue;
            const std::size_t at = (std::size_t(iy) * g.w + std::size_t(ix)) * c + ch;
            if (x[at] > best) best = x[at], best_at = at;
          }
        }
        const std::size_t o = (oy * ow + ox) * c + ch;
        y[o] = best;
        argmax[o] = best_at;
      }
}

template <typename T>
void maxpool_backward(std::size_t out_size, const std::size_t* argmax, const T* dy, T* dx) {
  for (std::size_t o = 0; o < out_size; ++o) dx[argmax[o]] += dy[o];
}

/// y = x W + b with W stored [in, out].
template <typename T>
void fc_forward(std::size_t in, std::size_t out, const T* x, const T* weight, const T* bias, T* y) {
  for (std::size_t o = 0; o < out; ++o) y[o] = bias ? bias[o] : T(0);
  for (std::size_t i = 0; i < in; ++i) {
    const T v = x[i];
    if (v == T(0)) continue;
    const T* wrow = weight + i * out;
    for (std::size_t o = 0; o < out; ++o) y[o] += v * wrow[o];
  }
}

template <typename T>
void fc_backward(std::size_t in, std::size_t out, const T* x, const T* weight, const T* dy, T* dx, T* dweight,
                 T* dbias) {
  for (std::size_t o = 0; o < out; ++o) dbias[o] += dy[o];
  for (std::size_t i = 0; i < in; ++i) {
    const T v = x[i];
    const T* wrow = weight + i * out;
    T* dwrow = dweight + i * out;
    if (dx) {
      T acc = 0;
      for (std::size_t o = 0; o < out; ++o) {
        dwrow[o] += v * dy[o];
        acc += wrow[o] * dy[o];
      }
      dx[i] += acc;
    } else if (v != T(0)) {
      for (std::size_t o = 0; o < out; ++o) dwrow[o] += v * dy[o];
    }
  }
}

/// Half-pixel-center source coordinate, clamped to the valid range.
struct BilinearTap {
  std::size_t i0 = 0, i1 = 0;
  double t = 0.0;
};

inline BilinearTap bilinear_tap(std::size_t out_index, std::size_t in_size, std::size_t out_size) {
  double s = (double(out_index) + 0.5) * double(in_size) / double(out_size) - 0.5;
  s = std::clamp(s, 0.0, double(in_size - 1));
  BilinearTap tap;
  tap.i0 = std::size_t(std::floor(s));
  tap.i1 = std::min(tap.i0 + 1, in_size - 1);
  tap.t = s - double(tap.i0);
  return tap;
}

template <typename T>
void upsample_forward(std::size_t h, std::size_t w, std::size_t c, std::size_t oh, std::size_t ow, const T* x, T* y) {
  for (std::size_t oy = 0; oy < oh; ++oy) {
    const BilinearTap ty = bilinear_tap(oy, h, oh);
    for (std::size_t ox = 0; ox < ow; ++ox) {
      const BilinearTap tx = bilinear_tap(ox, w, ow);
      const T* a = x + (ty.i0 * w + tx.i0) * c;
      const T* b = x + (ty.i0 * w + tx.i1) * c;
      const T* d = x + (ty.i1 * w + tx.i0) * c;
      const T* e = x + (ty.i1 * w + tx.i1) * c;
      const T wy = T(ty.t), wx = T(tx.t);
      T* out = y + (oy * ow + ox) * c;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const T top = a[ch] + wx * (b[ch] - a[ch]);
        const T bottom = d[ch] + wx * (e[ch] - d[ch]);
        out[ch] = top + wy * (bottom - top);
      }
    }
  }
}

template <typename T>
void upsample_backward(std::size_t h, std::size_t w, std::size_t c, std::size_t oh, std::size_t ow, const T* dy,
                       T* dx) {
  for (std::size_t oy = 0; oy < oh; ++oy) {
    const BilinearTap ty = bilinear_tap(oy, h, oh);
    for (std::size_t ox = 0; ox < ow; ++ox) {
      const BilinearTap tx = bilinear_tap(ox, w, ow);
      const T wy = T(ty.t), wx = T(tx.t);
      const T* d = dy + (oy * ow + ox) * c;
      for (std::size_t ch = 0; ch < c; ++ch) {
        dx[(ty.i0 * w + tx.i0) * c + ch] += (1 - wy) * (1 - wx) * d[ch];
        dx[(ty.i0 * w + tx.i1) * c + ch] += (1 - wy) * wx * d[ch];
        dx[(ty.i1 * w + tx.i0) * c + ch] += wy * (1 - wx) * d[ch];
        dx[(ty.i1 * w + tx.i1) * c + ch] += wy * wx * d[ch];
      }
    }
  }
}

// Tensor-level conveniences for a single unbatched sample.

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias, std::size_t stride,
                         std::size_t padding) {
  const Shape& s = input.shape;
  const Shape& ws = weights.shape;
  if (s.size() != 3 || ws.size() != 4 || ws[0] != ws[1] || ws[2] != s[2] || bias.shape != Shape{ws[3]} || stride == 0 ||
      s[0] + 2 * padding < ws[0] || s[1] + 2 * padding < ws[0])
    throw Error(ErrorCode::ShapeMismatch, "conv2d: input " + shape_string(s) + ", weights " + shape_string(ws) +
                                              ", bias " + shape_string(bias.shape));
  const ConvGeometry g{s[0], s[1], s[2], ws[0], stride, padding, ws[3]};
  Tensor<T> out({g.out_h(), g.out_w(), g.cout});
  conv_forward(g, input.data.data(), weights.data.data(), bias.data.data(), out.data.data());
  return out;
}

template <typename T>
Tensor<T> maxpool_forward(const Tensor<T>& input, std::size_t kernel = 4, std::size_t stride = 2,
                          std::size_t padding = 1) {
  const Shape& s = input.shape;
  if (s.size() != 3 || stride == 0 || s[0] + 2 * padding < kernel || s[1] + 2 * padding < kernel)
    throw Error(ErrorCode::ShapeMismatch, "maxpool: input " + shape_string(s) + " smaller than the window");
  const ConvGeometry g{s[0], s[1], s[2], kernel, stride, padding, s[2]};
  Tensor<T> out({g.out_h(), g.out_w(), s[2]});
  std::vector<std::size_t> idx(out.size());
  maxpool_forward(g, input.data.data(), out.data.data(), idx.data());
  return out;
}

template <typename T>
Tensor<T> bilinear_upsample(const Tensor<T>& input, std::size_t height, std::size_t width) {
  const Shape& s = input.shape;
  if (s.size() != 3 || height < s[0] || width < s[1])
    throw Error(ErrorCode::ShapeMismatch, "upsample: bad input " + shape_string(s) + " or target");
  Tensor<T> out({height, width, s[2]});
  upsample_forward(s[0], s[1], s[2], height, width, input.data.data(), out.data.data());
  return out;
}

}  // namespace hand3d::nn
