#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "triplab/rng.hpp"
#include "triplab/tensor.hpp"

namespace triplab {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <typename T>
using MatrixRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// 2D convolution parameters. Weight layout is [kh, kw, cin, cout] so the
/// flat buffer doubles as the (kh*kw*cin) x cout GEMM operand.
template <typename T>
struct ConvLayer {
  Tensor<T> w;
  Tensor<T> b;
  int stride = 1;
  int pad = 1;

  ConvLayer() = default;
  ConvLayer(int kh, int kw, int cin, int cout, int stride_ = 1, int pad_ = 1)
      : w({kh, kw, cin, cout}), b({cout}), stride(stride_), pad(pad_) {}

  int out_h(int in) const { return (in + 2 * pad - w.dim(0)) / stride + 1; }
  int out_w(int in) const { return (in + 2 * pad - w.dim(1)) / stride + 1; }
};

template <typename T>
struct DenseLayer {
  Tensor<T> w;  // [in, out]
  Tensor<T> b;  // [out]

  DenseLayer() = default;
  DenseLayer(int in, int out) : w({in, out}), b({out}) {}
};

template <typename T>
void he_init(ConvLayer<T>& layer, Rng& rng) {
  const int fan_in = layer.w.dim(0) * layer.w.dim(1) * layer.w.dim(2);
  const T std = static_cast<T>(std::sqrt(2.0 / fan_in));
  for (std::int64_t i = 0; i < layer.w.size(); ++i) layer.w[i] = static_cast<T>(rng.normal()) * std;
  layer.b.zero();
}

template <typename T>
void he_init(DenseLayer<T>& layer, Rng& rng) {
  const T std = static_cast<T>(std::sqrt(2.0 / layer.w.dim(0)));
  for (std::int64_t i = 0; i < layer.w.size(); ++i) layer.w[i] = static_cast<T>(rng.normal()) * std;
  layer.b.zero();
}

template <typename T>
struct ConvCache {
  Tensor<T> cols;  // [oh*ow, kh*kw*cin]
  int in_h = 0, in_w = 0, in_c = 0;
};

namespace nn {

template <typename T>
void im2col(const Tensor<T>& x, int kh, int kw, int stride, int pad, Tensor<T>& cols) {
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (w + 2 * pad - kw) / stride + 1;
  cols.reshape_buffer({oh * ow, kh * kw * c});
  T* out = cols.data();
  const T* in = x.data();
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      T* row = out + (static_cast<std::int64_t>(oy) * ow + ox) * kh * kw * c;
      for (int ky = 0; ky < kh; ++ky) {
        const int sy = oy * stride - pad + ky;
        for (int kx = 0; kx < kw; ++kx) {
          const int sx = ox * stride - pad + kx;
          T* dst = row + (static_cast<std::int64_t>(ky) * kw + kx) * c;
          if (sy < 0 || sy >= h || sx < 0 || sx >= w) {
            for (int ci = 0; ci < c; ++ci) dst[ci] = T(0);
          } else {
            const T* src = in + (static_cast<std::int64_t>(sy) * w + sx) * c;
            for (int ci = 0; ci < c; ++ci) dst[ci] = src[ci];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const Tensor<T>& cols, int kh, int kw, int stride, int pad, Tensor<T>& dx) {
  const int h = dx.dim(0), w = dx.dim(1), c = dx.dim(2);
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (w + 2 * pad - kw) / stride + 1;
  dx.zero();
  const T* in = cols.data();
  T* out = dx.data();
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      const T* row = in + (static_cast<std::int64_t>(oy) * ow + ox) * kh * kw * c;
      for (int ky = 0; ky < kh; ++ky) {
        const int sy = oy * stride - pad + ky;
        if (sy < 0 || sy >= h) continue;
        for (int kx = 0; kx < kw; ++kx) {
          const int sx = ox * stride - pad + kx;
          if (sx < 0 || sx >= w) continue;
          const T* src = row + (static_cast<std::int64_t>(ky) * kw + kx) * c;
          T* dst = out + (static_cast<std::int64_t>(sy) * w + sx) * c;
          for (int ci = 0; ci < c; ++ci) dst[ci] += src[ci];
        }
      }
    }
  }
}

}  // namespace nn

/// y = conv(x, w) + b with zero padding. x is (h, w, cin), y is (oh, ow, cout).
template <typename T>
void conv2d_forward(const ConvLayer<T>& layer, const Tensor<T>& x, ConvCache<T>& cache, Tensor<T>& y) {
  if (x.rank() != 3 || x.dim(2) != layer.w.dim(2))
    throw ShapeError("conv2d_forward: input shape " + shape_string(x.shape()) + " does not match kernel " +
                     shape_string(layer.w.shape()));
  const int kh = layer.w.dim(0), kw = layer.w.dim(1), cin = layer.w.dim(2), cout = layer.w.dim(3);
  const int oh = layer.out_h(x.dim(0)), ow = layer.out_w(x.dim(1));
  if (oh < 1 || ow < 1) throw ShapeError("conv2d_forward: output would be empty");
  nn::im2col(x, kh, kw, layer.stride, layer.pad, cache.cols);
  cache.in_h = x.dim(0);
  cache.in_w = x.dim(1);
  cache.in_c = x.dim(2);

  y.reshape_buffer({oh, ow, cout});
  Eigen::Map<const MatrixRM<T>> cols(cache.cols.data(), oh * ow, kh * kw * cin);
  Eigen::Map<const MatrixRM<T>> wmat(layer.w.data(), kh * kw * cin, cout);
  Eigen::Map<MatrixRM<T>> out(y.data(), oh * ow, cout);
  out.noalias() = cols * wmat;
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bias(layer.b.data(), cout);
  out.rowwise() += bias.transpose();
}

/// Accumulates dw/db into `grads` (same struct as the layer) and, when dx is
/// non-null, writes the input gradient.
template <typename T>
void conv2d_backward(const ConvLayer<T>& layer, const ConvCache<T>& cache, const Tensor<T>& dy,
                     ConvLayer<T>& grads, Tensor<T>* dx, Tensor<T>* dcols_buf = nullptr) {
  const int kh = layer.w.dim(0), kw = layer.w.dim(1), cin = layer.w.dim(2), cout = layer.w.dim(3);
  const int rows = dy.dim(0) * dy.dim(1);
  Eigen::Map<const MatrixRM<T>> cols(cache.cols.data(), rows, kh * kw * cin);
  Eigen::Map<const MatrixRM<T>> dout(dy.data(), rows, cout);
  Eigen::Map<MatrixRM<T>> dw(grads.w.data(), kh * kw * cin, cout);
  dw.noalias() += cols.transpose() * dout;
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> db(grads.b.data(), cout);
  db.noalias() += dout.colwise().sum().transpose();

  if (dx) {
    Tensor<T> local;
    Tensor<T>& dcols = dcols_buf ? *dcols_buf : local;
    dcols.reshape_buffer({rows, kh * kw * cin});
    Eigen::Map<MatrixRM<T>> dcols_map(dcols.data(), rows, kh * kw * cin);
    Eigen::Map<const MatrixRM<T>> wmat(layer.w.data(), kh * kw * cin, cout);
    dcols_map.noalias() = dout * wmat.transpose();
    dx->reshape_buffer({cache.in_h, cache.in_w, cache.in_c});
    nn::col2im(dcols, kh, kw, layer.stride, layer.pad, *dx);
  }
}

template <typename T>
void relu_forward(const Tensor<T>& x, Tensor<T>& y) {
  y.reshape_buffer(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
}

/// dx = dy where the forward output was positive. `y` is the forward output.
template <typename T>
void relu_backward(const Tensor<T>& y, const Tensor<T>& dy, Tensor<T>& dx) {
  dx.reshape_buffer(y.shape());
  for (std::int64_t i = 0; i < y.size(); ++i) dx[i] = y[i] > T(0) ? dy[i] : T(0);
}

/// Global max pooling over the spatial grid: logits[k] = max_{y,x} x(y,x,k).
/// Ties resolve to the first position in row-major scan order.
template <typename T>
void global_max_pool(const Tensor<T>& x, Tensor<T>& logits, std::vector<int>& argmax) {
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  logits.reshape_buffer({c});
  argmax.assign(static_cast<std::size_t>(c), 0);
  for (int k = 0; k < c; ++k) {
    T best = x(0, 0, k);
    int best_pos = 0;
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) {
        const T v = x(y, xx, k);
        if (v > best) {
          best = v;
          best_pos = y * w + xx;
        }
      }
    logits(k) = best;
    argmax[static_cast<std::size_t>(k)] = best_pos;
  }
}

template <typename T>
void global_max_pool_backward(const Tensor<T>& dlogits, const std::vector<int>& argmax, Tensor<T>& dx) {
  const int w = dx.dim(1), c = dx.dim(2);
  dx.zero();
  for (int k = 0; k < c; ++k) {
    const int pos = argmax[static_cast<std::size_t>(k)];
    dx(pos / w, pos % w, k) += dlogits(k);
  }
}

/// y = x^T W + b over the flattened input.
template <typename T>
void dense_forward(const DenseLayer<T>& layer, const Tensor<T>& x, Tensor<T>& y) {
  const int in = layer.w.dim(0), out = layer.w.dim(1);
  if (x.size() != in)
    throw ShapeError("dense_forward: input size " + std::to_string(x.size()) + " != " + std::to_string(in));
  y.reshape_buffer({out});
  Eigen::Map<const MatrixRM<T>> wmat(layer.w.data(), in, out);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> xv(x.data(), in);
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> yv(y.data(), out);
  yv.noalias() = wmat.transpose() * xv;
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bv(layer.b.data(), out);
  yv += bv;
}

template <typename T>
void dense_backward(const DenseLayer<T>& layer, const Tensor<T>& x, const Tensor<T>& dy,
                    DenseLayer<T>& grads, Tensor<T>* dx) {
  const int in = layer.w.dim(0), out = layer.w.dim(1);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> xv(x.data(), in);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> dyv(dy.data(), out);
  Eigen::Map<MatrixRM<T>> dw(grads.w.data(), in, out);
  dw.noalias() += xv * dyv.transpose();
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> db(grads.b.data(), out);
  db.noalias() += dyv;
  if (dx) {
    dx->reshape_buffer(x.shape());
    Eigen::Map<const MatrixRM<T>> wmat(layer.w.data(), in, out);
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> dxv(dx->data(), in);
    dxv.noalias() = wmat * dyv;
  }
}

/// Channel concatenation of two spatially aligned maps.
template <typename T>
void concat_channels(const Tensor<T>& a, const Tensor<T>& b, Tensor<T>& y) {
  if (a.dim(0) != b.dim(0) || a.dim(1) != b.dim(1))
    throw ShapeError("concat_channels: spatial misalignment " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  const int h = a.dim(0), w = a.dim(1), ca = a.dim(2), cb = b.dim(2);
  y.reshape_buffer({h, w, ca + cb});
  for (int yx = 0; yx < h * w; ++yx) {
    T* dst = y.data() + static_cast<std::int64_t>(yx) * (ca + cb);
    const T* pa = a.data() + static_cast<std::int64_t>(yx) * ca;
    const T* pb = b.data() + static_cast<std::int64_t>(yx) * cb;
    for (int c = 0; c < ca; ++c) dst[c] = pa[c];
    for (int c = 0; c < cb; ++c) dst[ca + c] = pb[c];
  }
}

template <typename T>
void split_channels_backward(const Tensor<T>& dy, int ca, Tensor<T>& da, Tensor<T>& db) {
  const int h = dy.dim(0), w = dy.dim(1), cc = dy.dim(2);
  const int cb = cc - ca;
  da.reshape_buffer({h, w, ca});
  db.reshape_buffer({h, w, cb});
  for (int yx = 0; yx < h * w; ++yx) {
    const T* src = dy.data() + static_cast<std::int64_t>(yx) * cc;
    T* pa = da.data() + static_cast<std::int64_t>(yx) * ca;
    T* pb = db.data() + static_cast<std::int64_t>(yx) * cb;
    for (int c = 0; c < ca; ++c) pa[c] = src[c];
    for (int c = 0; c < cb; ++c) pb[c] = src[ca + c];
  }
}

/// Bilinear resize of an (h, w, c) map to (out_h, out_w, c), sampling at
/// pixel centers with edge clamping.
template <typename T>
void bilinear_resize(const Tensor<T>& x, int out_h, int out_w, Tensor<T>& y) {
  const int h = x.dim(0), w = x.dim(1), c = x.dim(2);
  y.reshape_buffer({out_h, out_w, c});
  for (int oy = 0; oy < out_h; ++oy) {
    double sy = (oy + 0.5) * static_cast<double>(h) / out_h - 0.5;
    sy = std::min(std::max(sy, 0.0), static_cast<double>(h - 1));
    const int y0 = static_cast<int>(sy);
    const int y1 = std::min(y0 + 1, h - 1);
    const T fy = static_cast<T>(sy - y0);
    for (int ox = 0; ox < out_w; ++ox) {
      double sx = (ox + 0.5) * static_cast<double>(w) / out_w - 0.5;
      sx = std::min(std::max(sx, 0.0), static_cast<double>(w - 1));
      const int x0 = static_cast<int>(sx);
      const int x1 = std::min(x0 + 1, w - 1);
      const T fx = static_cast<T>(sx - x0);
      for (int k = 0; k < c; ++k) {
        const T top = x(y0, x0, k) * (T(1) - fx) + x(y0, x1, k) * fx;
        const T bot = x(y1, x0, k) * (T(1) - fx) + x(y1, x1, k) * fx;
        y(oy, ox, k) = top * (T(1) - fy) + bot * fy;
      }
    }
  }
}

/// Transpose of bilinear_resize: scatters each output gradient back onto the
/// four source taps with the same weights.
template <typename T>
void bilinear_resize_backward(const Tensor<T>& dy, int in_h, int in_w, Tensor<T>& dx) {
  const int out_h = dy.dim(0), out_w = dy.dim(1), c = dy.dim(2);
  dx.reshape_buffer({in_h, in_w, c});
  dx.zero();
  for (int oy = 0; oy < out_h; ++oy) {
    double sy = (oy + 0.5) * static_cast<double>(in_h) / out_h - 0.5;
    sy = std::min(std::max(sy, 0.0), static_cast<double>(in_h - 1));
    const int y0 = static_cast<int>(sy);
    const int y1 = std::min(y0 + 1, in_h - 1);
    const T fy = static_cast<T>(sy - y0);
    for (int ox = 0; ox < out_w; ++ox) {
      double sx = (ox + 0.5) * static_cast<double>(in_w) / out_w - 0.5;
      sx = std::min(std::max(sx, 0.0), static_cast<double>(in_w - 1));
      const int x0 = static_cast<int>(sx);
      const int x1 = std::min(x0 + 1, in_w - 1);
      const T fx = static_cast<T>(sx - x0);
      for (int k = 0; k < c; ++k) {
        const T g = dy(oy, ox, k);
        dx(y0, x0, k) += g * (T(1) - fx) * (T(1) - fy);
        dx(y0, x1, k) += g * fx * (T(1) - fy);
        dx(y1, x0, k) += g * (T(1) - fx) * fy;
        dx(y1, x1, k) += g * fx * fy;
      }
    }
  }
}

}  // namespace triplab
