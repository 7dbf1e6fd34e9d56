#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "lrr/dataio.hpp"
#include "lrr/losses.hpp"

namespace lrr {

/// counts[g * C + p] = pixels with truth g predicted as p. Void truth is skipped.
struct ConfusionMatrix {
  std::size_t C = 0;
  std::vector<std::uint64_t> counts;

  explicit ConfusionMatrix(std::size_t num_classes)
      : C(num_classes), counts(num_classes * num_classes, 0) {}

  std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts[truth * C + pred]; }
  std::uint64_t total() const;
  void merge(const ConfusionMatrix& other);
};

/// `region` (same extents, may be null) restricts which pixels are counted.
void accumulate(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& truth,
                const BinaryMap* region = nullptr);

struct Metrics {
  double pixel_acc = 0;
  double mean_class_acc = 0;
  double mean_iou = 0;
  std::vector<double> class_iou;  // NaN where the class has an empty union
  std::vector<double> class_acc;  // NaN where the class has no truth pixels
  std::size_t iou_classes = 0;    // classes included in mean_iou
};

/// Throws std::invalid_argument for an all-zero matrix.
Metrics metrics(const ConfusionMatrix& cm);

/// Non-void pixels with a 4-neighbour of a different non-void label, grown by
/// r - 1 iterated 3x3 dilations: the Chebyshev band of half-width r straddling
/// each label edge.
BinaryMap trimap_band(const LabelMap& truth, int radius);

struct TrimapPoint {
  int radius = 0;
  double mean_iou = 0;   // NaN when the band is empty
  double pixel_acc = 0;
  std::uint64_t pixels = 0;
};

std::vector<TrimapPoint> trimap_curve(std::span<const LabelMap> preds,
                                      std::span<const LabelMap> truths, std::span<const int> radii,
                                      std::size_t num_classes);

LabelMap labels_from_scores(const TensorF& scores);
LabelMap labels_from_scores(const TensorD& scores);

template <typename T>
using ScoreFn = std::function<Tensor<T>(const Tensor<T>&)>;

/// Scaled extents: nearest multiple of 32 to extent * scale.
std::size_t scaled_extent(std::size_t extent, double scale);

/// Runs `scores` at each scale, converts to probabilities at the original
/// resolution and keeps the per-pixel, per-class maximum over scales.
template <typename T>
Tensor<T> multiscale_predict(const ScoreFn<T>& scores, const Tensor<T>& image,
                             std::span<const double> scales);

}  // namespace lrr
