#pragma once

#include <cstdint>
#include <vector>

#include "lrr/tensor.hpp"

// Differentiable kernels. Image tensors are C x H x W or N x C x H x W; the
// output keeps the rank of the input. Every forward has an explicit backward.

namespace lrr {

struct ConvSpec {
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::size_t stride = 1;
  std::size_t pad = 1;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;

  std::size_t out_extent(std::size_t in, std::size_t kernel) const;
};

/// Cross-correlation with zero padding. weights: out x in x kh x kw, bias: out.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weights, const Tensor<T>& bias,
                 const ConvSpec& spec);

template <typename T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> weights;
  Tensor<T> bias;
};

/// Set `need_input` false to skip the input gradient (first layer).
template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weights,
                             const ConvSpec& spec, const Tensor<T>& grad_out,
                             bool need_input = true);

template <typename T>
struct PoolResult {
  Tensor<T> output;
  std::vector<std::uint32_t> argmax;  // flat input index per output element
};

/// Max pooling; padded cells act as -inf and never win.
template <typename T>
PoolResult<T> maxpool2d(const Tensor<T>& input, std::size_t window, std::size_t stride,
                        std::size_t pad);

template <typename T>
Tensor<T> maxpool2d_backward(const Shape& input_shape, const std::vector<std::uint32_t>& argmax,
                             const Tensor<T>& grad_out);

/// Stride-1 max filter over an odd square window, same-size output. Equal to
/// maxpool2d(input, window, 1, window / 2) but separable.
template <typename T>
Tensor<T> max_filter(const Tensor<T>& input, std::size_t window);

/// Half-pixel bilinear resize: src = (dst + 0.5) * in / out - 0.5, clamped.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& input, std::size_t out_h, std::size_t out_w);

template <typename T>
Tensor<T> bilinear_resize_backward(const Shape& input_shape, const Tensor<T>& grad_out);

/// Softmax over the channel axis with max subtraction.
template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& input);

template <typename T>
Tensor<T> relu(const Tensor<T>& input);
/// Gradient of relu given the forward output (or input; the zero set agrees).
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& forward, const Tensor<T>& grad_out);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input);
template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& output, const Tensor<T>& grad_out);

/// Per-pixel argmax over channels of a C x H x W tensor, ties to the lower index.
template <typename T>
std::vector<std::uint8_t> argmax_channels(const Tensor<T>& scores);

}  // namespace lrr
