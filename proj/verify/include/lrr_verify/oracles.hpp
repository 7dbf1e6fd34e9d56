#pragma once

// Straight-loop reference implementations. They share no code with the
// optimised kernels and trade speed for obviousness.

#include <vector>

#include "lrr/dataio.hpp"
#include "lrr/ops.hpp"
#include "lrr/reconstruction.hpp"

namespace lrr::verify {

/// Six nested loops over (o, y, x, i, ky, kx), accumulated in double.
TensorD naive_conv2d(const TensorD& input, const TensorD& weights, const TensorD& bias,
                     const ConvSpec& spec);

/// Y_c[i,j] = sum_k sum_{u,v in {0,1}} B[i mod s + s u, j mod s + s v, k, c]
///            * X_{k,c}[i div s - u, j div s - v], X zero outside its extent.
TensorD naive_reconstruct(const TensorD& coeffs, const TensorD& basis, std::size_t stride,
                          std::size_t K, std::size_t C);

/// Max over every window cell, padding ignored.
TensorD naive_maxpool(const TensorD& input, std::size_t window, std::size_t stride, std::size_t pad);

/// Bilinear resize evaluated pixel by pixel from the half-pixel mapping.
TensorD naive_bilinear(const TensorD& input, std::size_t out_h, std::size_t out_w);

/// Minkowski operations by scanning every disk offset for every pixel.
LabelMap brute_dilate(const LabelMap& mask, int r);
LabelMap brute_erode(const LabelMap& mask, int r);

struct SetMetrics {
  std::vector<double> iou;  // NaN when the union is empty
  std::vector<double> acc;  // NaN when the class has no truth pixels
  double mean_iou = 0;
  double mean_class_acc = 0;
  double pixel_acc = 0;
};

/// IoU and accuracies from explicit pixel sets {i : truth_i = c} and
/// {i : pred_i = c}, restricted to non-void truth.
SetMetrics set_metrics(const LabelMap& pred, const LabelMap& truth, std::size_t C);

/// The tent profile 1 - |t - (s - 1/2)| / s evaluated directly.
double tent_value(std::size_t s, std::size_t t);

}  // namespace lrr::verify
