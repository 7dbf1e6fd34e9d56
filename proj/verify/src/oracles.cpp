#include "lrr_verify/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace lrr::verify {

TensorD naive_conv2d(const TensorD& input, const TensorD& weights, const TensorD& bias,
                     const ConvSpec& spec) {
  const std::size_t Ci = input.dim(0), H = input.dim(1), W = input.dim(2);
  const std::size_t Co = weights.dim(0), kh = weights.dim(2), kw = weights.dim(3);
  const long pad = static_cast<long>(spec.pad), st = static_cast<long>(spec.stride);
  const std::size_t Ho = (H + 2 * spec.pad - kh) / spec.stride + 1;
  const std::size_t Wo = (W + 2 * spec.pad - kw) / spec.stride + 1;
  TensorD out({Co, Ho, Wo});
  for (std::size_t o = 0; o < Co; ++o)
    for (std::size_t y = 0; y < Ho; ++y)
      for (std::size_t x = 0; x < Wo; ++x) {
        double acc = bias.empty() ? 0.0 : bias[o];
        for (std::size_t i = 0; i < Ci; ++i)
          for (std::size_t ky = 0; ky < kh; ++ky)
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const long iy = static_cast<long>(y) * st + static_cast<long>(ky) - pad;
              const long ix = static_cast<long>(x) * st + static_cast<long>(kx) - pad;
              if (iy < 0 || ix < 0 || iy >= long(H) || ix >= long(W)) continue;
              acc += input.at(i, std::size_t(iy), std::size_t(ix)) * weights.at(o, i, ky, kx);
            }
        out.at(o, y, x) = acc;
      }
  return out;
}

TensorD naive_reconstruct(const TensorD& coeffs, const TensorD& basis, std::size_t s,
                          std::size_t K, std::size_t C) {
  const std::size_t H = coeffs.dim(1), W = coeffs.dim(2), n = 2 * s;
  auto B = [&](std::size_t a, std::size_t b, std::size_t k, std::size_t c) {
    return basis[((a * n + b) * K + k) * C + c];
  };
  auto X = [&](std::size_t k, std::size_t c, long p, long q) {
    if (p < 0 || q < 0 || p >= long(H) || q >= long(W)) return 0.0;
    return coeffs.at(c * K + k, std::size_t(p), std::size_t(q));
  };
  TensorD Y({C, s * H, s * W});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < s * H; ++i)
      for (std::size_t j = 0; j < s * W; ++j) {
        double acc = 0;
        for (std::size_t k = 0; k < K; ++k)
          for (std::size_t u = 0; u < 2; ++u)
            for (std::size_t v = 0; v < 2; ++v)
              acc += B(i % s + s * u, j % s + s * v, k, c) *
                     X(k, c, long(i / s) - long(u), long(j / s) - long(v));
        Y.at(c, i, j) = acc;
      }
  return Y;
}

TensorD naive_maxpool(const TensorD& input, std::size_t window, std::size_t stride, std::size_t pad) {
  const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
  const std::size_t Ho = (H + 2 * pad - window) / stride + 1, Wo = (W + 2 * pad - window) / stride + 1;
  TensorD out({C, Ho, Wo});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < Ho; ++y)
      for (std::size_t x = 0; x < Wo; ++x) {
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < window; ++a)
          for (std::size_t b = 0; b < window; ++b) {
            const long iy = long(y * stride + a) - long(pad), ix = long(x * stride + b) - long(pad);
            if (iy < 0 || ix < 0 || iy >= long(H) || ix >= long(W)) continue;
            best = std::max(best, input.at(c, std::size_t(iy), std::size_t(ix)));
          }
        out.at(c, y, x) = best;
      }
  return out;
}

TensorD naive_bilinear(const TensorD& input, std::size_t out_h, std::size_t out_w) {
  const std::size_t C = input.dim(0), H = input.dim(1), W = input.dim(2);
  TensorD out({C, out_h, out_w});
  auto sample = [&](std::size_t c, double sy, double sx) {
    sy = std::clamp(sy, 0.0, double(H - 1));
    sx = std::clamp(sx, 0.0, double(W - 1));
    const auto y0 = std::size_t(std::floor(sy)), x0 = std::size_t(std::floor(sx));
    const std::size_t y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
    const double fy = sy - double(y0), fx = sx - double(x0);
    return (1 - fy) * ((1 - fx) * input.at(c, y0, x0) + fx * input.at(c, y0, x1)) +
           fy * ((1 - fx) * input.at(c, y1, x0) + fx * input.at(c, y1, x1));
  };
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < out_h; ++y)
      for (std::size_t x = 0; x < out_w; ++x)
        out.at(c, y, x) = sample(c, (double(y) + 0.5) * double(H) / double(out_h) - 0.5,
                                 (double(x) + 0.5) * double(W) / double(out_w) - 0.5);
  return out;
}

LabelMap brute_dilate(const LabelMap& mask, int r) {
  LabelMap out(mask.height, mask.width, 0);
  const long H = long(mask.height), W = long(mask.width);
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x)
      for (long dy = -r; dy <= r && !out.at(y, x); ++dy)
        for (long dx = -r; dx <= r; ++dx) {
          if (dx * dx + dy * dy > long(r) * r) continue;
          const long sy = y + dy, sx = x + dx;
          if (sy >= 0 && sx >= 0 && sy < H && sx < W && mask.at(sy, sx)) {
            out.at(y, x) = 1;
            break;
          }
        }
  return out;
}

LabelMap brute_erode(const LabelMap& mask, int r) {
  LabelMap out(mask.height, mask.width, 0);
  const long H = long(mask.height), W = long(mask.width);
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x) {
      bool all = true;
      for (long dy = -r; dy <= r && all; ++dy)
        for (long dx = -r; dx <= r; ++dx) {
          if (dx * dx + dy * dy > long(r) * r) continue;
          const long sy = y + dy, sx = x + dx;
          if (sy < 0 || sx < 0 || sy >= H || sx >= W || !mask.at(sy, sx)) {
            all = false;
            break;
          }
        }
      out.at(y, x) = all ? 1 : 0;
    }
  return out;
}

SetMetrics set_metrics(const LabelMap& pred, const LabelMap& truth, std::size_t C) {
  SetMetrics m;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::set<std::size_t> valid;
  for (std::size_t i = 0; i < truth.size(); ++i)
    if (truth.labels[i] != kVoidLabel) valid.insert(i);
  std::size_t correct = 0;
  for (std::size_t i : valid) correct += pred.labels[i] == truth.labels[i];
  m.pixel_acc = valid.empty() ? nan : double(correct) / double(valid.size());

  double iou_sum = 0, acc_sum = 0;
  std::size_t iou_n = 0, acc_n = 0;
  for (std::size_t c = 0; c < C; ++c) {
    std::set<std::size_t> P, G, I, U;
    for (std::size_t i : valid) {
      if (pred.labels[i] == c) P.insert(i);
      if (truth.labels[i] == c) G.insert(i);
    }
    std::set_intersection(P.begin(), P.end(), G.begin(), G.end(), std::inserter(I, I.begin()));
    std::set_union(P.begin(), P.end(), G.begin(), G.end(), std::inserter(U, U.begin()));
    m.iou.push_back(U.empty() ? nan : double(I.size()) / double(U.size()));
    m.acc.push_back(G.empty() ? nan : double(I.size()) / double(G.size()));
    if (!U.empty()) iou_sum += m.iou.back(), ++iou_n;
    if (!G.empty()) acc_sum += m.acc.back(), ++acc_n;
  }
  m.mean_iou = iou_n ? iou_sum / double(iou_n) : nan;
  m.mean_class_acc = acc_n ? acc_sum / double(acc_n) : nan;
  return m;
}

double tent_value(std::size_t s, std::size_t t) {
  return 1.0 - std::abs(double(t) - (double(s) - 0.5)) / double(s);
}

}  // namespace lrr::verify
