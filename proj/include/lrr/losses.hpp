#pragma once

#include <array>
#include <vector>

#include "lrr/dataio.hpp"
#include "lrr/refinement.hpp"

namespace lrr {

template <typename T>
struct LossGrad {
  T loss = 0;
  Tensor<T> grad;
  std::size_t counted = 0;  // elements contributing to the mean
};

/// Mean over non-void pixels of -log softmax(scores)[truth]. All-void input
/// yields loss 0, zero gradient and counted = 0.
template <typename T>
LossGrad<T> softmax_xent(const Tensor<T>& scores, const LabelMap& truth);

/// Nearest-neighbour downsample taking the top-left pixel of each block.
LabelMap downsample_truth(const LabelMap& truth, std::size_t factor);

/// 0/1 maps share the LabelMap storage.
using BinaryMap = LabelMap;

/// Minkowski dilation / erosion by the disk {dx^2 + dy^2 <= r^2}. Erosion
/// treats pixels outside the image as background.
BinaryMap disk_dilate(const BinaryMap& mask, int r);
BinaryMap disk_erode(const BinaryMap& mask, int r);

BinaryMap class_indicator(const LabelMap& truth, std::uint8_t cls);

struct DETargets {
  int radius = 32;
  std::size_t factor = 8;
  std::vector<BinaryMap> dilated;  // per class, downsampled
  std::vector<BinaryMap> eroded;
  BinaryMap ignore;                // 1 where the downsampled truth is void
};

DETargets build_de_targets(const LabelMap& truth, std::size_t num_classes, int radius,
                           std::size_t out_factor);

/// Mean of the numerically stable binary cross-entropy over the elements whose
/// pixel is not ignored. `ignore` (H x W, may be empty) applies to every channel.
template <typename T>
LossGrad<T> logistic_loss(const Tensor<T>& logits, const Tensor<T>& targets,
                          const BinaryMap& ignore = {});

struct LossReport {
  std::array<double, 4> branch{};  // 32x, 16x, 8x, 4x
  double dilation = 0;
  double erosion = 0;
  double total = 0;
};

struct LossWeights {
  std::array<double, 4> branch{1, 1, 1, 1};
  double de = 1.0;
  bool supervise_raw = false;  // supervise raw branch reconstructions instead of fused scores
};

template <typename T>
struct AssembledLoss {
  LossReport report;
  std::vector<Tensor<T>> grad_fused;
  std::vector<Tensor<T>> grad_raw;
  Tensor<T> grad_de;  // empty when DE is inactive
};

/// Losses for the first `active_levels` pyramid levels against downsampled
/// truth, plus DE terms when de_logits (2C x h x w; dilation channels first)
/// is non-empty. `scale` multiplies every gradient (batch averaging).
template <typename T>
AssembledLoss<T> assemble_losses(const std::vector<LevelOutput<T>>& levels, const LabelMap& truth,
                                 std::size_t active_levels, const Tensor<T>& de_logits,
                                 const DETargets* de_targets, const LossWeights& weights,
                                 T scale = T(1));

}  // namespace lrr
