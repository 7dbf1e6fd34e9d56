#include "lrr/refinement.hpp"

#include <algorithm>

namespace lrr {

void PyramidConfig::validate() const {
  if (strides.empty()) throw std::invalid_argument("pyramid: no branches");
  for (std::size_t i = 1; i < strides.size(); ++i)
    if (strides[i] * 2 != strides[i - 1])
      throw std::invalid_argument("pyramid: consecutive branch strides must halve");
  for (std::size_t s : strides) tap_index(s);
  if (recon_stride == 0) throw std::invalid_argument("pyramid: reconstruction stride must be >= 1");
  if (mask_pool % 2 == 0) throw std::invalid_argument("pyramid: mask pool size must be odd");
  if (tau < 0 || tau > 1) throw std::invalid_argument("pyramid: tau must lie in [0, 1]");
  if (C < 1 || K < 1) throw std::invalid_argument("pyramid: K and C must be >= 1");
}

namespace {

/// Windowed OR of per-pixel class bitmasks, separable with a clamped window.
std::vector<std::uint64_t> window_or(const std::vector<std::uint64_t>& bits, std::size_t h, std::size_t w,
                                     std::size_t pool) {
  const std::size_t r = pool / 2;
  std::vector<std::uint64_t> rows(bits.size()), out(bits.size());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      std::uint64_t acc = 0;
      const std::size_t x1 = std::min(w - 1, x + r);
      for (std::size_t xx = x > r ? x - r : 0; xx <= x1; ++xx) acc |= bits[y * w + xx];
      rows[y * w + x] = acc;
    }
  for (std::size_t y = 0; y < h; ++y) {
    const std::size_t y0 = y > r ? y - r : 0, y1 = std::min(h - 1, y + r);
    for (std::size_t x = 0; x < w; ++x) {
      std::uint64_t acc = 0;
      for (std::size_t yy = y0; yy <= y1; ++yy) acc |= rows[yy * w + x];
      out[y * w + x] = acc;
    }
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> boundary_mask(const Tensor<T>& upsampled_scores, std::size_t pool, double tau) {
  if (pool % 2 == 0) throw ShapeError("boundary_mask: pool size must be odd");
  if (upsampled_scores.ndim() != 3) throw ShapeError("boundary_mask: expected C x H x W scores");
  const std::size_t C = upsampled_scores.dim(0);
  const std::size_t h = upsampled_scores.dim(1), w = upsampled_scores.dim(2), hw = h * w;
  const std::vector<std::uint8_t> arg = argmax_channels(upsampled_scores);
  std::vector<bool> confident(hw, true);
  if (tau > 0) {
    const Tensor<T> probs = softmax_channels(upsampled_scores);
    for (std::size_t p = 0; p < hw; ++p) confident[p] = probs[arg[p] * hw + p] >= static_cast<T>(tau);
  }

  Tensor<T> mask(upsampled_scores.shape());
  if (C <= 64) {
    // D(fg_c) at p is "class c occurs confidently in the window", D(bg_c) is
    // "some other class does", so one OR-filter over class bits serves every c.
    std::vector<std::uint64_t> bits(hw, 0);
    for (std::size_t p = 0; p < hw; ++p)
      if (confident[p]) bits[p] = std::uint64_t(1) << arg[p];
    const std::vector<std::uint64_t> seen = window_or(bits, h, w, pool);
    for (std::size_t c = 0; c < C; ++c) {
      const std::uint64_t self = std::uint64_t(1) << c;
      for (std::size_t p = 0; p < hw; ++p)
        mask[c * hw + p] = (!confident[p] || ((seen[p] & self) && (seen[p] & ~self))) ? T(1) : T(0);
    }
    return mask;
  }

  const Shape plane{1, h, w};
  for (std::size_t c = 0; c < C; ++c) {
    Tensor<T> fg(plane), bg(plane);
    for (std::size_t p = 0; p < hw; ++p) {
      if (!confident[p]) continue;
      (arg[p] == c ? fg : bg)[p] = T(1);
    }
    const Tensor<T> dfg = max_filter(fg, pool);
    const Tensor<T> dbg = max_filter(bg, pool);
    for (std::size_t p = 0; p < hw; ++p)
      mask[c * hw + p] = (!confident[p] || std::min(dfg[p], dbg[p]) > T(0)) ? T(1) : T(0);
  }
  return mask;
}

template <typename T>
Tensor<T> fuse_level(const Tensor<T>& coarse, const Tensor<T>& fine, const Tensor<T>& mask) {
  if (coarse.shape() != fine.shape() || coarse.shape() != mask.shape())
    throw ShapeError("fuse_level: coarse " + shape_str(coarse.shape()) + ", fine " +
                     shape_str(fine.shape()) + ", mask " + shape_str(mask.shape()));
  Tensor<T> out = coarse;
  for (std::size_t i = 0; i < out.size(); ++i)
    if (mask[i] != T(0)) out[i] += mask[i] * fine[i];
  return out;
}

template <typename T>
FuseGrads<T> fuse_level_backward(const Tensor<T>& mask, const Tensor<T>& grad_fused) {
  if (mask.shape() != grad_fused.shape())
    throw ShapeError("fuse_level_backward: mask " + shape_str(mask.shape()) + " vs gradient " +
                     shape_str(grad_fused.shape()));
  FuseGrads<T> g{grad_fused, Tensor<T>(grad_fused.shape())};
  for (std::size_t i = 0; i < g.fine.size(); ++i) g.fine[i] = mask[i] * grad_fused[i];
  return g;
}

template <typename T>
std::vector<LevelOutput<T>> pyramid_forward(const FeaturePyramid<T>& features,
                                            std::span<const Branch<T>> branches,
                                            const PyramidConfig& config, std::size_t levels) {
  config.validate();
  const std::size_t count = levels == 0 ? config.strides.size() : std::min(levels, config.strides.size());
  if (branches.size() < count) throw std::invalid_argument("pyramid_forward: missing branch parameters");
  std::vector<LevelOutput<T>> out;
  out.reserve(count);
  for (std::size_t l = 0; l < count; ++l) {
    const Branch<T>& br = branches[l];
    if (br.stride != config.strides[l])
      throw std::invalid_argument("pyramid_forward: branch " + std::to_string(l) + " has stride " +
                                  std::to_string(br.stride) + ", expected " +
                                  std::to_string(config.strides[l]));
    LevelOutput<T> lo;
    lo.stride = br.stride;
    lo.coeffs = predict_coefficients(features.at_stride(br.stride), br.head);
    lo.raw = reconstruct(lo.coeffs, br.bank);
    if (l == 0) {
      lo.fused = lo.raw;
    } else {
      const Tensor<T> up = bilinear_resize(out.back().fused, lo.raw.dim(1), lo.raw.dim(2));
      lo.mask = config.masking ? boundary_mask(up, config.mask_pool, config.tau) : Tensor<T>(up.shape(), T(1));
      lo.fused = fuse_level(up, lo.raw, lo.mask);
    }
    out.push_back(std::move(lo));
  }
  return out;
}

template <typename T>
PyramidGrads<T> pyramid_backward(const FeaturePyramid<T>& features,
                                 std::span<const Branch<T>> branches,
                                 const std::vector<LevelOutput<T>>& levels,
                                 const std::vector<Tensor<T>>& grad_fused,
                                 const std::vector<Tensor<T>>& grad_raw, bool basis_grads) {
  const std::size_t n = levels.size();
  if (branches.size() < n) throw std::invalid_argument("pyramid_backward: missing branch parameters");
  PyramidGrads<T> g;
  g.head_weights.resize(n);
  g.head_biases.resize(n);
  g.banks.resize(n);

  auto grad_at = [](const std::vector<Tensor<T>>& v, std::size_t l, const Shape& shape) -> Tensor<T> {
    if (l >= v.size() || v[l].empty()) return Tensor<T>(shape);
    if (v[l].shape() != shape)
      throw ShapeError("pyramid_backward: level gradient " + shape_str(v[l].shape()) +
                       " does not match " + shape_str(shape));
    return v[l];
  };

  Tensor<T> carry;  // gradient reaching level l's fused output from level l + 1
  for (std::size_t li = n; li-- > 0;) {
    const LevelOutput<T>& lo = levels[li];
    const Branch<T>& br = branches[li];
    Tensor<T> gfused = grad_at(grad_fused, li, lo.fused.shape());
    if (!carry.empty()) gfused += carry;

    Tensor<T> graw = grad_at(grad_raw, li, lo.raw.shape());
    if (li == 0) {
      graw += gfused;
      carry = Tensor<T>();
    } else {
      const FuseGrads<T> fg = fuse_level_backward(lo.mask, gfused);
      graw += fg.fine;
      carry = bilinear_resize_backward(levels[li - 1].fused.shape(), fg.coarse);
    }

    auto rg = reconstruct_backward(lo.coeffs, br.bank, graw, basis_grads);
    const Tensor<T>& feat = features.at_stride(br.stride);
    auto cg = conv2d_backward(feat, br.head.weight, br.head.spec(), rg.coeffs);
    g.head_weights[li] = std::move(cg.weights);
    g.head_biases[li] = std::move(cg.bias);
    g.banks[li] = std::move(rg.basis);
    Tensor<T>& tap = g.taps[tap_index(br.stride)];
    if (tap.empty()) tap = std::move(cg.input);
    else tap += cg.input;
  }
  return g;
}

#define LRR_INSTANTIATE_REFINE(T)                                                               \
  template Tensor<T> boundary_mask(const Tensor<T>&, std::size_t, double);                      \
  template Tensor<T> fuse_level(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);          \
  template FuseGrads<T> fuse_level_backward(const Tensor<T>&, const Tensor<T>&);                \
  template std::vector<LevelOutput<T>> pyramid_forward(const FeaturePyramid<T>&,                \
                                                       std::span<const Branch<T>>,              \
                                                       const PyramidConfig&, std::size_t);      \
  template PyramidGrads<T> pyramid_backward(const FeaturePyramid<T>&, std::span<const Branch<T>>, \
                                            const std::vector<LevelOutput<T>>&,                 \
                                            const std::vector<Tensor<T>>&,                      \
                                            const std::vector<Tensor<T>>&, bool);

LRR_INSTANTIATE_REFINE(float)
LRR_INSTANTIATE_REFINE(double)

}  // namespace lrr
