#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "lrr/ops.hpp"

namespace lrr {

template <typename T>
struct ConvLayer {
  Tensor<T> weight;
  Tensor<T> bias;
  ConvSpec spec;
};

/// He-uniform weights (limit sqrt(6 / fan_in)), zero bias.
template <typename T>
ConvLayer<T> make_conv_layer(std::size_t in, std::size_t out, std::size_t kernel, std::size_t pad,
                             std::uint64_t seed, std::uint64_t stream);

struct BackboneConfig {
  std::array<std::size_t, 4> widths{16, 32, 64, 128};
  std::size_t convs_per_stage = 2;
  std::uint64_t seed = 1;
};

/// Stage 1 is pool, conv, pool, conv...; stages 2-4 are pool, conv, conv...
/// Each stage output (post-ReLU) is a tap, so taps land at strides 4, 8, 16, 32.
template <typename T>
struct BackboneParams {
  std::vector<ConvLayer<T>> convs;
};

template <typename T>
struct FeaturePyramid {
  std::array<Tensor<T>, 4> levels;  // strides 4, 8, 16, 32

  const Tensor<T>& at_stride(std::size_t stride) const;
};

inline constexpr std::array<std::size_t, 4> kTapStrides{4, 8, 16, 32};
std::size_t tap_index(std::size_t stride);

template <typename T>
struct BackboneCache {
  struct Step {
    enum class Kind { Pool, Conv, Tap } kind;
    std::size_t index = 0;       // conv layer index or tap index
    Shape input_shape;           // pool
    std::vector<std::uint32_t> argmax;
    Tensor<T> input;             // conv input
    Tensor<T> output;            // conv output after ReLU
  };
  std::vector<Step> steps;
};

template <typename T>
BackboneParams<T> init_backbone(const BackboneConfig& config);

/// Requires H and W divisible by 32. The cache is filled only when non-null.
template <typename T>
FeaturePyramid<T> backbone_forward(const Tensor<T>& image, const BackboneParams<T>& params,
                                   const BackboneConfig& config, BackboneCache<T>* cache = nullptr);

/// grads_by_tap may hold empty tensors for levels that receive no gradient.
/// Returns one weight/bias gradient pair per conv layer.
template <typename T>
std::vector<ConvLayer<T>> backbone_backward(const BackboneCache<T>& cache,
                                            const BackboneParams<T>& params,
                                            const std::array<Tensor<T>, 4>& grads_by_tap);

}  // namespace lrr
