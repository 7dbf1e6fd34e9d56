#pragma once

#include <array>
#include <span>
#include <vector>

#include "lrr/backbone.hpp"
#include "lrr/reconstruction.hpp"

namespace lrr {

struct PyramidConfig {
  std::vector<std::size_t> strides{32, 16, 8, 4};  // coarse to fine
  std::size_t recon_stride = 4;
  std::size_t mask_pool = 9;
  double tau = 0.0;
  std::size_t K = 10;
  std::size_t C = 2;
  bool masking = true;

  void validate() const;
};

template <typename T>
struct Branch {
  std::size_t stride = 32;  // backbone tap feeding this branch
  CoefficientHead<T> head;
  BasisBank<T> bank;
};

template <typename T>
struct LevelOutput {
  std::size_t stride = 32;
  Tensor<T> raw;     // this branch's reconstruction
  Tensor<T> fused;   // running estimate after this level
  Tensor<T> mask;    // C x h x w gate; empty for the coarsest level
  Tensor<T> coeffs;  // kept for backward
};

/// Binary C x h x w gate from scores already at the fine resolution: 1 on the
/// overlap of dilated confident foreground and background, and on every
/// pixel whose top softmax probability is below tau.
template <typename T>
Tensor<T> boundary_mask(const Tensor<T>& upsampled_scores, std::size_t pool, double tau);

/// fused = coarse + mask * fine.
template <typename T>
Tensor<T> fuse_level(const Tensor<T>& coarse, const Tensor<T>& fine, const Tensor<T>& mask);

template <typename T>
struct FuseGrads {
  Tensor<T> coarse;
  Tensor<T> fine;
};

/// The mask is a constant: no gradient flows into it.
template <typename T>
FuseGrads<T> fuse_level_backward(const Tensor<T>& mask, const Tensor<T>& grad_fused);

/// Runs the first `levels` branches coarse to fine (0 means all).
template <typename T>
std::vector<LevelOutput<T>> pyramid_forward(const FeaturePyramid<T>& features,
                                            std::span<const Branch<T>> branches,
                                            const PyramidConfig& config, std::size_t levels = 0);

template <typename T>
struct PyramidGrads {
  std::vector<Tensor<T>> head_weights;
  std::vector<Tensor<T>> head_biases;
  std::vector<Tensor<T>> banks;          // empty tensors unless basis grads requested
  std::array<Tensor<T>, 4> taps;         // gradients w.r.t. backbone features
};

/// Masks are treated as constants. grad_fused[l] / grad_raw[l] may be empty.
template <typename T>
PyramidGrads<T> pyramid_backward(const FeaturePyramid<T>& features,
                                 std::span<const Branch<T>> branches,
                                 const std::vector<LevelOutput<T>>& levels,
                                 const std::vector<Tensor<T>>& grad_fused,
                                 const std::vector<Tensor<T>>& grad_raw, bool basis_grads = false);

}  // namespace lrr
