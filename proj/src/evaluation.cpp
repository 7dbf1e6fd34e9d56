#include "lrr/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "lrr/ops.hpp"

namespace lrr {

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.C != C) throw std::invalid_argument("confusion matrix merge: class counts differ");
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
}

void accumulate(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& truth,
                const BinaryMap* region) {
  if (pred.height != truth.height || pred.width != truth.width)
    throw ShapeError("accumulate: prediction and truth extents differ");
  if (region && (region->height != truth.height || region->width != truth.width))
    throw ShapeError("accumulate: region extents differ from truth");
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const std::uint8_t g = truth.labels[i];
    if (g == kVoidLabel) continue;
    if (region && region->labels[i] == 0) continue;
    const std::uint8_t p = pred.labels[i];
    if (g >= cm.C || p >= cm.C)
      throw std::invalid_argument("accumulate: label outside [0, " + std::to_string(cm.C) + ")");
    ++cm.counts[g * cm.C + p];
  }
}

Metrics metrics(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  if (total == 0) throw std::invalid_argument("metrics: empty confusion matrix");
  const double nan = std::numeric_limits<double>::quiet_NaN();
  Metrics m;
  m.class_iou.assign(cm.C, nan);
  m.class_acc.assign(cm.C, nan);
  std::uint64_t correct = 0;
  double iou_sum = 0, acc_sum = 0;
  std::size_t acc_classes = 0;
  for (std::size_t c = 0; c < cm.C; ++c) {
    std::uint64_t row = 0, col = 0;
    for (std::size_t k = 0; k < cm.C; ++k) {
      row += cm.at(c, k);
      col += cm.at(k, c);
    }
    const std::uint64_t tp = cm.at(c, c);
    correct += tp;
    const std::uint64_t uni = row + col - tp;
    if (uni > 0) {
      m.class_iou[c] = double(tp) / double(uni);
      iou_sum += m.class_iou[c];
      ++m.iou_classes;
    }
    if (row > 0) {
      m.class_acc[c] = double(tp) / double(row);
      acc_sum += m.class_acc[c];
      ++acc_classes;
    }
  }
  m.pixel_acc = double(correct) / double(total);
  m.mean_iou = iou_sum / double(m.iou_classes);
  m.mean_class_acc = acc_sum / double(acc_classes);
  return m;
}

BinaryMap trimap_band(const LabelMap& truth, int radius) {
  if (radius < 1) throw std::invalid_argument("trimap_band: radius must be >= 1");
  const std::size_t h = truth.height, w = truth.width;
  BinaryMap band(h, w, 0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const std::uint8_t l = truth.at(y, x);
      if (l == kVoidLabel) continue;
      auto differs = [&](std::size_t yy, std::size_t xx) {
        const std::uint8_t o = truth.at(yy, xx);
        return o != kVoidLabel && o != l;
      };
      if ((y > 0 && differs(y - 1, x)) || (y + 1 < h && differs(y + 1, x)) ||
          (x > 0 && differs(y, x - 1)) || (x + 1 < w && differs(y, x + 1)))
        band.at(y, x) = 1;
    }
  for (int it = 1; it < radius; ++it) {
    BinaryMap grown(h, w, 0);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        std::uint8_t v = 0;
        for (std::size_t yy = y ? y - 1 : 0; yy <= std::min(h - 1, y + 1) && !v; ++yy)
          for (std::size_t xx = x ? x - 1 : 0; xx <= std::min(w - 1, x + 1); ++xx)
            if (band.at(yy, xx)) {
              v = 1;
              break;
            }
        grown.at(y, x) = v;
      }
    band = std::move(grown);
  }
  return band;
}

std::vector<TrimapPoint> trimap_curve(std::span<const LabelMap> preds,
                                      std::span<const LabelMap> truths, std::span<const int> radii,
                                      std::size_t num_classes) {
  if (preds.size() != truths.size())
    throw std::invalid_argument("trimap_curve: prediction and truth counts differ");
  std::vector<TrimapPoint> curve;
  for (int r : radii) {
    ConfusionMatrix cm(num_classes);
    for (std::size_t i = 0; i < truths.size(); ++i) {
      const BinaryMap band = trimap_band(truths[i], r);
      accumulate(cm, preds[i], truths[i], &band);
    }
    TrimapPoint pt;
    pt.radius = r;
    pt.pixels = cm.total();
    if (pt.pixels == 0) {
      pt.mean_iou = pt.pixel_acc = std::numeric_limits<double>::quiet_NaN();
    } else {
      const Metrics m = metrics(cm);
      pt.mean_iou = m.mean_iou;
      pt.pixel_acc = m.pixel_acc;
    }
    curve.push_back(pt);
  }
  return curve;
}

namespace {

template <typename T>
LabelMap labels_from(const Tensor<T>& scores) {
  if (scores.ndim() != 3) throw ShapeError("labels_from_scores: expected C x H x W");
  LabelMap m(scores.dim(1), scores.dim(2));
  m.labels = argmax_channels(scores);
  return m;
}

}  // namespace

LabelMap labels_from_scores(const TensorF& scores) { return labels_from(scores); }
LabelMap labels_from_scores(const TensorD& scores) { return labels_from(scores); }

std::size_t scaled_extent(std::size_t extent, double scale) {
  const long blocks = std::lround(double(extent) * scale / 32.0);
  if (blocks < 1)
    throw std::invalid_argument("multiscale: scale " + std::to_string(scale) +
                                " shrinks extent " + std::to_string(extent) + " below 32");
  return static_cast<std::size_t>(blocks) * 32;
}

template <typename T>
Tensor<T> multiscale_predict(const ScoreFn<T>& scores, const Tensor<T>& image,
                             std::span<const double> scales) {
  if (scales.empty()) throw std::invalid_argument("multiscale_predict: no scales");
  if (image.ndim() != 3) throw ShapeError("multiscale_predict: expected a 3 x H x W image");
  const std::size_t h = image.dim(1), w = image.dim(2);
  Tensor<T> fused;
  for (double s : scales) {
    const std::size_t sh = scaled_extent(h, s), sw = scaled_extent(w, s);
    const Tensor<T> input = (sh == h && sw == w) ? image : bilinear_resize(image, sh, sw);
    Tensor<T> probs = softmax_channels(scores(input));
    if (probs.dim(1) != h || probs.dim(2) != w) probs = bilinear_resize(probs, h, w);
    if (fused.empty()) {
      fused = std::move(probs);
      continue;
    }
    if (probs.shape() != fused.shape()) throw ShapeError("multiscale_predict: class count changed");
    for (std::size_t i = 0; i < fused.size(); ++i) fused[i] = std::max(fused[i], probs[i]);
  }
  return fused;
}

template Tensor<float> multiscale_predict(const ScoreFn<float>&, const Tensor<float>&,
                                          std::span<const double>);
template Tensor<double> multiscale_predict(const ScoreFn<double>&, const Tensor<double>&,
                                           std::span<const double>);

}  // namespace lrr
