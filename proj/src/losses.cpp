#include "lrr/losses.hpp"

#include <algorithm>
#include <cmath>

namespace lrr {

template <typename T>
LossGrad<T> softmax_xent(const Tensor<T>& scores, const LabelMap& truth) {
  if (scores.ndim() != 3 || scores.dim(1) != truth.height || scores.dim(2) != truth.width)
    throw ShapeError("softmax_xent: scores " + shape_str(scores.shape()) + " vs truth " +
                     std::to_string(truth.height) + "x" + std::to_string(truth.width));
  const std::size_t C = scores.dim(0);
  const std::size_t hw = truth.size();
  validate_labels(truth, C);
  LossGrad<T> r;
  r.grad = Tensor<T>(scores.shape());
  for (std::uint8_t l : truth.labels) r.counted += l != kVoidLabel;
  if (r.counted == 0) return r;
  const T inv = T(1) / static_cast<T>(r.counted);
  std::vector<T> m(scores.data(), scores.data() + hw), sum(hw, T(0));
  for (std::size_t c = 1; c < C; ++c)
    for (std::size_t p = 0; p < hw; ++p) m[p] = std::max(m[p], scores[c * hw + p]);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t p = 0; p < hw; ++p) {
      const T e = std::exp(scores[c * hw + p] - m[p]);
      r.grad[c * hw + p] = e;
      sum[p] += e;
    }
  double acc = 0;
  for (std::size_t p = 0; p < hw; ++p) {
    const std::uint8_t l = truth.labels[p];
    if (l == kVoidLabel) {
      for (std::size_t c = 0; c < C; ++c) r.grad[c * hw + p] = T(0);
      continue;
    }
    // log-sum-exp for the loss keeps saturated pixels exact.
    acc += static_cast<double>(m[p] + std::log(sum[p]) - scores[l * hw + p]);
    const T scale = inv / sum[p];
    for (std::size_t c = 0; c < C; ++c) r.grad[c * hw + p] *= scale;
    r.grad[l * hw + p] -= inv;
  }
  r.loss = static_cast<T>(acc / static_cast<double>(r.counted));
  return r;
}

LabelMap downsample_truth(const LabelMap& truth, std::size_t factor) {
  if (factor == 0 || truth.height % factor != 0 || truth.width % factor != 0)
    throw ShapeError("downsample_truth: " + std::to_string(truth.height) + "x" +
                     std::to_string(truth.width) + " not divisible by " + std::to_string(factor));
  LabelMap out(truth.height / factor, truth.width / factor);
  for (std::size_t y = 0; y < out.height; ++y)
    for (std::size_t x = 0; x < out.width; ++x) out.at(y, x) = truth.at(y * factor, x * factor);
  return out;
}

namespace {

int isqrt(int v) {
  int r = static_cast<int>(std::sqrt(static_cast<double>(v)));
  while (r * r > v) --r;
  while ((r + 1) * (r + 1) <= v) ++r;
  return r;
}

// Row prefix counts of set pixels: prefix[y * (w + 1) + x] = count in [0, x).
std::vector<int> row_prefix(const BinaryMap& m) {
  std::vector<int> prefix(m.height * (m.width + 1), 0);
  for (std::size_t y = 0; y < m.height; ++y) {
    int* row = &prefix[y * (m.width + 1)];
    for (std::size_t x = 0; x < m.width; ++x) row[x + 1] = row[x] + (m.at(y, x) != 0);
  }
  return prefix;
}

// Dilation and erosion decompose the disk into horizontal runs of half
// width isqrt(r^2 - dy^2) per row offset dy. The result is evaluated only at
// pixels (factor y, factor x), which equals the full-resolution operation
// followed by top-left nearest downsampling.
BinaryMap disk_op(const BinaryMap& mask, int r, bool dilate, std::size_t factor = 1) {
  if (r < 0) throw std::invalid_argument("disk morphology: radius must be >= 0");
  const int h = static_cast<int>(mask.height), w = static_cast<int>(mask.width);
  const std::vector<int> prefix = row_prefix(mask);
  std::vector<int> half(2 * r + 1);
  for (int dy = -r; dy <= r; ++dy) half[dy + r] = isqrt(r * r - dy * dy);
  if (factor == 0 || mask.height % factor != 0 || mask.width % factor != 0)
    throw ShapeError("disk morphology: extents not divisible by " + std::to_string(factor));
  const int f = static_cast<int>(factor);
  BinaryMap out(mask.height / factor, mask.width / factor, 0);
  for (int oy = 0; oy < h / f; ++oy)
    for (int ox = 0; ox < w / f; ++ox) {
      const int y = oy * f, x = ox * f;
      bool hit = !dilate;
      for (int dy = -r; dy <= r; ++dy) {
        const int yy = y + dy;
        const int hw = half[dy + r];
        if (yy < 0 || yy >= h) {
          if (!dilate) {
            hit = false;
            break;
          }
          continue;
        }
        const int lo = x - hw, hi = x + hw;
        const int* row = &prefix[static_cast<std::size_t>(yy) * (mask.width + 1)];
        if (dilate) {
          const int a = std::max(lo, 0), b = std::min(hi, w - 1);
          if (a <= b && row[b + 1] - row[a] > 0) {
            hit = true;
            break;
          }
        } else if (lo < 0 || hi >= w || row[hi + 1] - row[lo] != hi - lo + 1) {
          hit = false;
          break;
        }
      }
      out.at(std::size_t(oy), std::size_t(ox)) = hit ? 1 : 0;
    }
  return out;
}

}  // namespace

BinaryMap disk_dilate(const BinaryMap& mask, int r) { return disk_op(mask, r, true); }
BinaryMap disk_erode(const BinaryMap& mask, int r) { return disk_op(mask, r, false); }

BinaryMap class_indicator(const LabelMap& truth, std::uint8_t cls) {
  BinaryMap m(truth.height, truth.width, 0);
  for (std::size_t i = 0; i < truth.size(); ++i) m.labels[i] = truth.labels[i] == cls ? 1 : 0;
  return m;
}

DETargets build_de_targets(const LabelMap& truth, std::size_t num_classes, int radius,
                           std::size_t out_factor) {
  validate_labels(truth, num_classes);
  DETargets t;
  t.radius = radius;
  t.factor = out_factor;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const BinaryMap m = class_indicator(truth, static_cast<std::uint8_t>(c));
    const bool present = std::any_of(m.labels.begin(), m.labels.end(), [](auto v) { return v != 0; });
    if (!present) {
      t.dilated.push_back(BinaryMap(truth.height / out_factor, truth.width / out_factor, 0));
      t.eroded.push_back(t.dilated.back());
      continue;
    }
    t.dilated.push_back(disk_op(m, radius, true, out_factor));
    t.eroded.push_back(disk_op(m, radius, false, out_factor));
  }
  t.ignore = class_indicator(downsample_truth(truth, out_factor), kVoidLabel);
  return t;
}

template <typename T>
LossGrad<T> logistic_loss(const Tensor<T>& logits, const Tensor<T>& targets, const BinaryMap& ignore) {
  if (logits.shape() != targets.shape())
    throw ShapeError("logistic_loss: logits " + shape_str(logits.shape()) + " vs targets " +
                     shape_str(targets.shape()));
  const ImageDims d = image_dims(logits.shape());
  const std::size_t hw = d.h * d.w;
  if (!ignore.labels.empty() && (ignore.height != d.h || ignore.width != d.w))
    throw ShapeError("logistic_loss: ignore mask extents differ from logits");
  LossGrad<T> r;
  r.grad = Tensor<T>(logits.shape());
  auto skipped = [&](std::size_t p) { return !ignore.labels.empty() && ignore.labels[p] != 0; };
  for (std::size_t i = 0; i < logits.size(); ++i) r.counted += !skipped(i % hw);
  if (r.counted == 0) return r;
  const T inv = T(1) / static_cast<T>(r.counted);
  double acc = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (skipped(i % hw)) continue;
    const T z = logits[i], t = targets[i];
    acc += static_cast<double>(std::max(z, T(0)) - z * t + std::log1p(std::exp(-std::abs(z))));
    const T sig = z >= 0 ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
    r.grad[i] = (sig - t) * inv;
  }
  r.loss = static_cast<T>(acc / static_cast<double>(r.counted));
  return r;
}

template <typename T>
AssembledLoss<T> assemble_losses(const std::vector<LevelOutput<T>>& levels, const LabelMap& truth,
                                 std::size_t active_levels, const Tensor<T>& de_logits,
                                 const DETargets* de_targets, const LossWeights& weights, T scale) {
  if (levels.size() < active_levels)
    throw std::invalid_argument("assemble_losses: stage needs " + std::to_string(active_levels) +
                                " level outputs, got " + std::to_string(levels.size()));
  if (active_levels > 4) throw std::invalid_argument("assemble_losses: at most four levels");
  AssembledLoss<T> out;
  out.grad_fused.resize(levels.size());
  out.grad_raw.resize(levels.size());
  for (std::size_t l = 0; l < active_levels; ++l) {
    const bool raw = weights.supervise_raw && l > 0;
    const Tensor<T>& scores = raw ? levels[l].raw : levels[l].fused;
    if (truth.height % scores.dim(1) != 0 || truth.height / scores.dim(1) != truth.width / scores.dim(2))
      throw ShapeError("assemble_losses: level extents do not divide the truth extents");
    const LabelMap target = downsample_truth(truth, truth.height / scores.dim(1));
    LossGrad<T> lg = softmax_xent(scores, target);
    const T w = static_cast<T>(weights.branch[l]);
    out.report.branch[l] = static_cast<double>(lg.loss);
    out.report.total += weights.branch[l] * static_cast<double>(lg.loss);
    lg.grad *= w * scale;
    (raw ? out.grad_raw : out.grad_fused)[l] = std::move(lg.grad);
  }
  if (!de_logits.empty()) {
    if (!de_targets) throw std::invalid_argument("assemble_losses: DE logits without targets");
    const std::size_t C = de_targets->dilated.size();
    if (de_logits.ndim() != 3 || de_logits.dim(0) != 2 * C)
      throw ShapeError("assemble_losses: DE logits " + shape_str(de_logits.shape()) +
                       " do not carry 2C channels");
    const std::size_t h = de_logits.dim(1), w = de_logits.dim(2), hw = h * w;
    out.grad_de = Tensor<T>(de_logits.shape());
    for (int half = 0; half < 2; ++half) {
      const auto& maps = half == 0 ? de_targets->dilated : de_targets->eroded;
      Tensor<T> logits({C, h, w}), targets({C, h, w});
      for (std::size_t c = 0; c < C; ++c) {
        if (maps[c].height != h || maps[c].width != w)
          throw ShapeError("assemble_losses: DE targets do not match DE logits");
        for (std::size_t p = 0; p < hw; ++p) {
          logits[c * hw + p] = de_logits[(half * C + c) * hw + p];
          targets[c * hw + p] = static_cast<T>(maps[c].labels[p]);
        }
      }
      LossGrad<T> lg = logistic_loss(logits, targets, de_targets->ignore);
      (half == 0 ? out.report.dilation : out.report.erosion) = static_cast<double>(lg.loss);
      out.report.total += weights.de * static_cast<double>(lg.loss);
      const T gscale = static_cast<T>(weights.de) * scale;
      for (std::size_t i = 0; i < C * hw; ++i) out.grad_de[half * C * hw + i] = lg.grad[i] * gscale;
    }
  }
  return out;
}

#define LRR_INSTANTIATE_LOSSES(T)                                                             \
  template LossGrad<T> softmax_xent(const Tensor<T>&, const LabelMap&);                       \
  template LossGrad<T> logistic_loss(const Tensor<T>&, const Tensor<T>&, const BinaryMap&);   \
  template AssembledLoss<T> assemble_losses(const std::vector<LevelOutput<T>>&,               \
                                            const LabelMap&, std::size_t, const Tensor<T>&,   \
                                            const DETargets*, const LossWeights&, T);

LRR_INSTANTIATE_LOSSES(float)
LRR_INSTANTIATE_LOSSES(double)

}  // namespace lrr
