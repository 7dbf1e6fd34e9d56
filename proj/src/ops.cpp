#include "lrr/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace lrr {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

Shape with_dims(const Shape& like, ImageDims d) {
  if (like.size() == 3) return {d.c, d.h, d.w};
  return {d.n, d.c, d.h, d.w};
}

void check_conv(const Shape& input, const Shape& weights, const ConvSpec& spec) {
  const ImageDims d = image_dims(input);
  if (weights.size() != 4 || weights[0] != spec.out_channels || weights[1] != spec.in_channels ||
      weights[2] != spec.kernel_h || weights[3] != spec.kernel_w)
    throw ShapeError("conv2d: weights " + shape_str(weights) + " inconsistent with spec");
  if (d.c != spec.in_channels)
    throw ShapeError("conv2d: input " + shape_str(input) + " has " + std::to_string(d.c) +
                     " channels, spec expects " + std::to_string(spec.in_channels));
  if (spec.stride == 0) throw ShapeError("conv2d: stride must be positive");
}

// Unfolds one C x H x W image into (C*kh*kw) x (Ho*Wo) columns.
template <typename T>
void im2col(const T* img, std::size_t channels, std::size_t h, std::size_t w, const ConvSpec& spec,
            std::size_t out_h, std::size_t out_w, T* col) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(spec.pad);
  const std::ptrdiff_t stride = static_cast<std::ptrdiff_t>(spec.stride);
  for (std::size_t c = 0; c < channels; ++c) {
    const T* plane = img + c * h * w;
    for (std::size_t ky = 0; ky < spec.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < spec.kernel_w; ++kx) {
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * stride - pad +
                                    static_cast<std::ptrdiff_t>(ky);
          T* dst = col + oy * out_w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(dst, dst + out_w, T(0));
            continue;
          }
          const T* row = plane + iy * static_cast<std::ptrdiff_t>(w);
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox) * stride - pad +
                                      static_cast<std::ptrdiff_t>(kx);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) ? T(0) : row[ix];
          }
        }
        col += out_h * out_w;
      }
    }
  }
}

template <typename T>
void col2im(const T* col, std::size_t channels, std::size_t h, std::size_t w, const ConvSpec& spec,
            std::size_t out_h, std::size_t out_w, T* img) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(spec.pad);
  const std::ptrdiff_t stride = static_cast<std::ptrdiff_t>(spec.stride);
  for (std::size_t c = 0; c < channels; ++c) {
    T* plane = img + c * h * w;
    for (std::size_t ky = 0; ky < spec.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < spec.kernel_w; ++kx) {
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * stride - pad +
                                    static_cast<std::ptrdiff_t>(ky);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          const T* src = col + oy * out_w;
          T* row = plane + iy * static_cast<std::ptrdiff_t>(w);
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox) * stride - pad +
                                      static_cast<std::ptrdiff_t>(kx);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(w)) row[ix] += src[ox];
          }
        }
        col += out_h * out_w;
      }
    }
  }
}

bool is_pointwise(const ConvSpec& spec) {
  return spec.kernel_h == 1 && spec.kernel_w == 1 && spec.stride == 1 && spec.pad == 0;
}

}  // namespace

std::size_t ConvSpec::out_extent(std::size_t in, std::size_t kernel) const {
  if (stride == 0) throw ShapeError("conv: stride must be positive");
  if (in + 2 * pad < kernel)
    throw ShapeError("conv: kernel " + std::to_string(kernel) + " exceeds padded extent " +
                     std::to_string(in + 2 * pad));
  return (in + 2 * pad - kernel) / stride + 1;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias,
                 const ConvSpec& spec) {
  check_conv(input.shape(), weights.shape(), spec);
  if (bias.size() != spec.out_channels)
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " inconsistent with spec");
  const ImageDims d = image_dims(input.shape());
  const std::size_t out_h = spec.out_extent(d.h, spec.kernel_h);
  const std::size_t out_w = spec.out_extent(d.w, spec.kernel_w);
  const std::size_t rows = d.c * spec.kernel_h * spec.kernel_w;
  const std::size_t pixels = out_h * out_w;

  Tensor<T> out(with_dims(input.shape(), {d.n, spec.out_channels, out_h, out_w}));
  std::vector<T> col(is_pointwise(spec) ? 0 : rows * pixels);
  ConstMatMap<T> wmat(weights.data(), spec.out_channels, rows);
  for (std::size_t n = 0; n < d.n; ++n) {
    const T* img = input.data() + n * d.c * d.h * d.w;
    const T* colp = img;
    if (!is_pointwise(spec)) {
      im2col(img, d.c, d.h, d.w, spec, out_h, out_w, col.data());
      colp = col.data();
    }
    MatMap<T> omat(out.data() + n * spec.out_channels * pixels, spec.out_channels, pixels);
    omat.noalias() = wmat * ConstMatMap<T>(colp, rows, pixels);
    for (std::size_t o = 0; o < spec.out_channels; ++o) omat.row(o).array() += bias[o];
  }
  require_finite(out, "conv2d");
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weights,
                             const ConvSpec& spec, const Tensor<T>& grad_out, bool need_input) {
  check_conv(input.shape(), weights.shape(), spec);
  const ImageDims d = image_dims(input.shape());
  const std::size_t out_h = spec.out_extent(d.h, spec.kernel_h);
  const std::size_t out_w = spec.out_extent(d.w, spec.kernel_w);
  if (grad_out.shape() != with_dims(input.shape(), {d.n, spec.out_channels, out_h, out_w}))
    throw ShapeError("conv2d_backward: grad_out " + shape_str(grad_out.shape()) +
                     " does not match forward output");
  const std::size_t rows = d.c * spec.kernel_h * spec.kernel_w;
  const std::size_t pixels = out_h * out_w;

  ConvGrads<T> g{need_input ? Tensor<T>(input.shape()) : Tensor<T>(), Tensor<T>(weights.shape()),
                 Tensor<T>(Shape{spec.out_channels})};
  std::vector<T> col(rows * pixels);
  ConstMatMap<T> wmat(weights.data(), spec.out_channels, rows);
  MatMap<T> gw(g.weights.data(), spec.out_channels, rows);
  for (std::size_t n = 0; n < d.n; ++n) {
    const T* img = input.data() + n * d.c * d.h * d.w;
    ConstMatMap<T> gout(grad_out.data() + n * spec.out_channels * pixels, spec.out_channels,
                        pixels);
    for (std::size_t o = 0; o < spec.out_channels; ++o) {
      const T* row = grad_out.data() + (n * spec.out_channels + o) * pixels;
      T acc = 0;
      for (std::size_t i = 0; i < pixels; ++i) acc += row[i];
      g.bias[o] += acc;
    }

    const T* colp = img;
    if (!is_pointwise(spec)) {
      im2col(img, d.c, d.h, d.w, spec, out_h, out_w, col.data());
      colp = col.data();
    }
    gw.noalias() += gout * ConstMatMap<T>(colp, rows, pixels).transpose();

    if (!need_input) continue;
    T* gimg = g.input.data() + n * d.c * d.h * d.w;
    if (is_pointwise(spec)) {
      MatMap<T>(gimg, rows, pixels).noalias() = wmat.transpose() * gout;
    } else {
      MatMap<T> gcol(col.data(), rows, pixels);
      gcol.noalias() = wmat.transpose() * gout;
      col2im(col.data(), d.c, d.h, d.w, spec, out_h, out_w, gimg);
    }
  }
  return g;
}

template <typename T>
PoolResult<T> maxpool2d(const Tensor<T>& input, std::size_t window, std::size_t stride,
                        std::size_t pad) {
  if (window == 0 || stride == 0) throw ShapeError("maxpool2d: window and stride must be >= 1");
  if (pad >= window) throw ShapeError("maxpool2d: padding must be smaller than the window");
  const ImageDims d = image_dims(input.shape());
  if (d.h + 2 * pad < window || d.w + 2 * pad < window)
    throw ShapeError("maxpool2d: window " + std::to_string(window) + " larger than padded input " +
                     shape_str(input.shape()));
  const std::size_t out_h = (d.h + 2 * pad - window) / stride + 1;
  const std::size_t out_w = (d.w + 2 * pad - window) / stride + 1;

  PoolResult<T> r{Tensor<T>(with_dims(input.shape(), {d.n, d.c, out_h, out_w})), {}};
  r.argmax.resize(r.output.size());
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < d.n * d.c; ++plane) {
    const std::size_t base = plane * d.h * d.w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const std::ptrdiff_t y0 = static_cast<std::ptrdiff_t>(oy * stride) - static_cast<std::ptrdiff_t>(pad);
      const std::size_t ya = static_cast<std::size_t>(std::max<std::ptrdiff_t>(y0, 0));
      const std::size_t yb = std::min<std::size_t>(d.h, static_cast<std::size_t>(y0 + static_cast<std::ptrdiff_t>(window)));
      for (std::size_t ox = 0; ox < out_w; ++ox, ++o) {
        const std::ptrdiff_t x0 = static_cast<std::ptrdiff_t>(ox * stride) - static_cast<std::ptrdiff_t>(pad);
        const std::size_t xa = static_cast<std::size_t>(std::max<std::ptrdiff_t>(x0, 0));
        const std::size_t xb = std::min<std::size_t>(d.w, static_cast<std::size_t>(x0 + static_cast<std::ptrdiff_t>(window)));
        T best = -std::numeric_limits<T>::infinity();
        std::size_t best_i = base + ya * d.w + xa;
        for (std::size_t y = ya; y < yb; ++y)
          for (std::size_t x = xa; x < xb; ++x) {
            const std::size_t i = base + y * d.w + x;
            if (input[i] > best) {
              best = input[i];
              best_i = i;
            }
          }
        r.output[o] = best;
        r.argmax[o] = static_cast<std::uint32_t>(best_i);
      }
    }
  }
  require_finite(r.output, "maxpool2d");
  return r;
}

template <typename T>
Tensor<T> maxpool2d_backward(const Shape& input_shape, const std::vector<std::uint32_t>& argmax,
                             const Tensor<T>& grad_out) {
  if (argmax.size() != grad_out.size())
    throw ShapeError("maxpool2d_backward: grad_out " + shape_str(grad_out.shape()) +
                     " does not match recorded argmax");
  Tensor<T> g(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) {
    if (argmax[i] >= g.size()) throw ShapeError("maxpool2d_backward: argmax out of range");
    g[argmax[i]] += grad_out[i];
  }
  return g;
}

template <typename T>
Tensor<T> max_filter(const Tensor<T>& input, std::size_t window) {
  if (window % 2 == 0) throw ShapeError("max_filter: window must be odd");
  const ImageDims d = image_dims(input.shape());
  const std::ptrdiff_t r = static_cast<std::ptrdiff_t>(window / 2);
  const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(d.h);
  const std::ptrdiff_t w = static_cast<std::ptrdiff_t>(d.w);
  Tensor<T> tmp(input.shape());
  Tensor<T> out(input.shape());
  for (std::size_t plane = 0; plane < d.n * d.c; ++plane) {
    const T* src = input.data() + plane * d.h * d.w;
    T* mid = tmp.data() + plane * d.h * d.w;
    T* dst = out.data() + plane * d.h * d.w;
    for (std::ptrdiff_t y = 0; y < h; ++y)
      for (std::ptrdiff_t x = 0; x < w; ++x) {
        T m = -std::numeric_limits<T>::infinity();
        for (std::ptrdiff_t k = std::max<std::ptrdiff_t>(0, x - r); k <= std::min(w - 1, x + r); ++k)
          m = std::max(m, src[y * w + k]);
        mid[y * w + x] = m;
      }
    for (std::ptrdiff_t y = 0; y < h; ++y)
      for (std::ptrdiff_t x = 0; x < w; ++x) {
        T m = -std::numeric_limits<T>::infinity();
        for (std::ptrdiff_t k = std::max<std::ptrdiff_t>(0, y - r); k <= std::min(h - 1, y + r); ++k)
          m = std::max(m, mid[k * w + x]);
        dst[y * w + x] = m;
      }
  }
  return out;
}

namespace {

struct AxisTaps {
  std::vector<std::size_t> lo, hi;
  std::vector<double> frac;
};

AxisTaps axis_taps(std::size_t in, std::size_t out) {
  AxisTaps t;
  t.lo.resize(out);
  t.hi.resize(out);
  t.frac.resize(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    t.lo[i] = lo;
    t.hi[i] = std::min(lo + 1, in - 1);
    t.frac[i] = src - static_cast<double>(lo);
  }
  return t;
}

}  // namespace

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& input, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0) throw ShapeError("bilinear_resize: output extents must be >= 1");
  const ImageDims d = image_dims(input.shape());
  if (d.h == 0 || d.w == 0) throw ShapeError("bilinear_resize: empty input");
  const AxisTaps ty = axis_taps(d.h, out_h);
  const AxisTaps tx = axis_taps(d.w, out_w);
  Tensor<T> out(with_dims(input.shape(), {d.n, d.c, out_h, out_w}));
  for (std::size_t plane = 0; plane < d.n * d.c; ++plane) {
    const T* src = input.data() + plane * d.h * d.w;
    T* dst = out.data() + plane * out_h * out_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const T fy = static_cast<T>(ty.frac[y]);
      const T* r0 = src + ty.lo[y] * d.w;
      const T* r1 = src + ty.hi[y] * d.w;
      for (std::size_t x = 0; x < out_w; ++x) {
        const T fx = static_cast<T>(tx.frac[x]);
        const T top = r0[tx.lo[x]] * (T(1) - fx) + r0[tx.hi[x]] * fx;
        const T bot = r1[tx.lo[x]] * (T(1) - fx) + r1[tx.hi[x]] * fx;
        dst[y * out_w + x] = top * (T(1) - fy) + bot * fy;
      }
    }
  }
  require_finite(out, "bilinear_resize");
  return out;
}

template <typename T>
Tensor<T> bilinear_resize_backward(const Shape& input_shape, const Tensor<T>& grad_out) {
  const ImageDims d = image_dims(input_shape);
  const ImageDims o = image_dims(grad_out.shape());
  if (o.n != d.n || o.c != d.c)
    throw ShapeError("bilinear_resize_backward: grad " + shape_str(grad_out.shape()) +
                     " incompatible with input " + shape_str(input_shape));
  const AxisTaps ty = axis_taps(d.h, o.h);
  const AxisTaps tx = axis_taps(d.w, o.w);
  Tensor<T> g(input_shape);
  for (std::size_t plane = 0; plane < d.n * d.c; ++plane) {
    const T* src = grad_out.data() + plane * o.h * o.w;
    T* dst = g.data() + plane * d.h * d.w;
    for (std::size_t y = 0; y < o.h; ++y) {
      const T fy = static_cast<T>(ty.frac[y]);
      T* r0 = dst + ty.lo[y] * d.w;
      T* r1 = dst + ty.hi[y] * d.w;
      for (std::size_t x = 0; x < o.w; ++x) {
        const T fx = static_cast<T>(tx.frac[x]);
        const T v = src[y * o.w + x];
        const T top = v * (T(1) - fy);
        const T bot = v * fy;
        r0[tx.lo[x]] += top * (T(1) - fx);
        r0[tx.hi[x]] += top * fx;
        r1[tx.lo[x]] += bot * (T(1) - fx);
        r1[tx.hi[x]] += bot * fx;
      }
    }
  }
  return g;
}

template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& input) {
  require_finite(input, "softmax_channels input");
  const ImageDims d = image_dims(input.shape());
  if (d.c == 0) throw ShapeError("softmax_channels: no channels");
  const std::size_t hw = d.h * d.w;
  Tensor<T> out(input.shape());
  for (std::size_t n = 0; n < d.n; ++n) {
    const T* src = input.data() + n * d.c * hw;
    T* dst = out.data() + n * d.c * hw;
    std::vector<T> m(src, src + hw), sum(hw, T(0));
    for (std::size_t c = 1; c < d.c; ++c)
      for (std::size_t p = 0; p < hw; ++p) m[p] = std::max(m[p], src[c * hw + p]);
    for (std::size_t c = 0; c < d.c; ++c)
      for (std::size_t p = 0; p < hw; ++p) {
        const T e = std::exp(src[c * hw + p] - m[p]);
        dst[c * hw + p] = e;
        sum[p] += e;
      }
    for (std::size_t c = 0; c < d.c; ++c)
      for (std::size_t p = 0; p < hw; ++p) dst[c * hw + p] /= sum[p];
  }
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > T(0) ? input[i] : T(0);
  return out;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& forward, const Tensor<T>& grad_out) {
  if (forward.shape() != grad_out.shape()) throw ShapeError("relu_backward: shape mismatch");
  Tensor<T> g(forward.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = forward[i] > T(0) ? grad_out[i] : T(0);
  return g;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input) {
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) {
    const T z = input[i];
    if (z >= 0) {
      out[i] = T(1) / (T(1) + std::exp(-z));
    } else {
      const T e = std::exp(z);
      out[i] = e / (T(1) + e);
    }
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& output, const Tensor<T>& grad_out) {
  if (output.shape() != grad_out.shape()) throw ShapeError("sigmoid_backward: shape mismatch");
  Tensor<T> g(output.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = grad_out[i] * output[i] * (T(1) - output[i]);
  return g;
}

template <typename T>
std::vector<std::uint8_t> argmax_channels(const Tensor<T>& scores) {
  if (scores.ndim() != 3) throw ShapeError("argmax_channels: expected C x H x W");
  const std::size_t c_n = scores.dim(0);
  const std::size_t hw = scores.dim(1) * scores.dim(2);
  if (c_n > 255) throw ShapeError("argmax_channels: more than 255 classes");
  std::vector<std::uint8_t> labels(hw, 0);
  for (std::size_t p = 0; p < hw; ++p) {
    T best = scores[p];
    for (std::size_t c = 1; c < c_n; ++c)
      if (scores[c * hw + p] > best) {
        best = scores[c * hw + p];
        labels[p] = static_cast<std::uint8_t>(c);
      }
  }
  return labels;
}

#define LRR_INSTANTIATE_OPS(T)                                                                  \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,              \
                            const ConvSpec&);                                                   \
  template ConvGrads<T> conv2d_backward(const Tensor<T>&, const Tensor<T>&, const ConvSpec&,   \
                                        const Tensor<T>&, bool);                                \
  template PoolResult<T> maxpool2d(const Tensor<T>&, std::size_t, std::size_t, std::size_t);   \
  template Tensor<T> maxpool2d_backward(const Shape&, const std::vector<std::uint32_t>&,       \
                                        const Tensor<T>&);                                      \
  template Tensor<T> max_filter(const Tensor<T>&, std::size_t);                                \
  template Tensor<T> bilinear_resize(const Tensor<T>&, std::size_t, std::size_t);              \
  template Tensor<T> bilinear_resize_backward(const Shape&, const Tensor<T>&);                 \
  template Tensor<T> softmax_channels(const Tensor<T>&);                                       \
  template Tensor<T> relu(const Tensor<T>&);                                                   \
  template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                \
  template Tensor<T> sigmoid_backward(const Tensor<T>&, const Tensor<T>&);                     \
  template std::vector<std::uint8_t> argmax_channels(const Tensor<T>&);

LRR_INSTANTIATE_OPS(float)
LRR_INSTANTIATE_OPS(double)

}  // namespace lrr
