#include "lrr/backbone.hpp"

#include <cmath>

#include "lrr/rng.hpp"

namespace lrr {

template <typename T>
ConvLayer<T> make_conv_layer(std::size_t in, std::size_t out, std::size_t kernel, std::size_t pad,
                             std::uint64_t seed, std::uint64_t stream) {
  ConvLayer<T> layer;
  layer.spec = ConvSpec{kernel, kernel, 1, pad, in, out};
  layer.weight = Tensor<T>({out, in, kernel, kernel});
  layer.bias = Tensor<T>({out});
  const double limit = std::sqrt(6.0 / double(in * kernel * kernel));
  CounterRng rng(seed, stream);
  for (auto& w : layer.weight.values()) w = static_cast<T>(rng.uniform(-limit, limit));
  return layer;
}

std::size_t tap_index(std::size_t stride) {
  for (std::size_t i = 0; i < kTapStrides.size(); ++i)
    if (kTapStrides[i] == stride) return i;
  throw std::invalid_argument("no backbone tap at stride " + std::to_string(stride));
}

template <typename T>
const Tensor<T>& FeaturePyramid<T>::at_stride(std::size_t stride) const {
  return levels[tap_index(stride)];
}

namespace {

struct Op {
  enum class Kind { Pool, Conv, Tap } kind;
  std::size_t index = 0;
};

std::vector<Op> backbone_program(const BackboneConfig& config) {
  std::vector<Op> ops;
  std::size_t conv = 0;
  for (std::size_t stage = 0; stage < 4; ++stage) {
    ops.push_back({Op::Kind::Pool});
    for (std::size_t k = 0; k < config.convs_per_stage; ++k) {
      ops.push_back({Op::Kind::Conv, conv++});
      if (stage == 0 && k == 0) ops.push_back({Op::Kind::Pool});
    }
    if (config.convs_per_stage == 0 && stage == 0) ops.push_back({Op::Kind::Pool});
    ops.push_back({Op::Kind::Tap, stage});
  }
  return ops;
}

}  // namespace

template <typename T>
BackboneParams<T> init_backbone(const BackboneConfig& config) {
  if (config.convs_per_stage == 0) throw std::invalid_argument("backbone: convs_per_stage must be >= 1");
  BackboneParams<T> p;
  std::size_t in = 3;
  std::uint64_t stream = 0;
  for (std::size_t stage = 0; stage < 4; ++stage) {
    for (std::size_t k = 0; k < config.convs_per_stage; ++k) {
      p.convs.push_back(make_conv_layer<T>(in, config.widths[stage], 3, 1, config.seed, stream++));
      in = config.widths[stage];
    }
  }
  return p;
}

template <typename T>
FeaturePyramid<T> backbone_forward(const Tensor<T>& image, const BackboneParams<T>& params,
                                   const BackboneConfig& config, BackboneCache<T>* cache) {
  if (image.ndim() != 3 || image.dim(0) != 3)
    throw ShapeError("backbone_forward: expected a 3 x H x W image, got " + shape_str(image.shape()));
  if (image.dim(1) % 32 != 0 || image.dim(2) % 32 != 0 || image.dim(1) == 0 || image.dim(2) == 0)
    throw ShapeError("backbone_forward: extents " + shape_str(image.shape()) +
                     " are not divisible by 32");
  FeaturePyramid<T> pyr;
  if (cache) cache->steps.clear();
  Tensor<T> x = image;
  for (const Op& op : backbone_program(config)) {
    using Step = typename BackboneCache<T>::Step;
    switch (op.kind) {
      case Op::Kind::Pool: {
        auto r = maxpool2d(x, 2, 2, 0);
        if (cache) cache->steps.push_back(Step{Step::Kind::Pool, 0, x.shape(), std::move(r.argmax), {}, {}});
        x = std::move(r.output);
        break;
      }
      case Op::Kind::Conv: {
        const auto& layer = params.convs.at(op.index);
        Tensor<T> y = relu(conv2d(x, layer.weight, layer.bias, layer.spec));
        if (cache) cache->steps.push_back(Step{Step::Kind::Conv, op.index, {}, {}, std::move(x), y});
        x = std::move(y);
        break;
      }
      case Op::Kind::Tap:
        pyr.levels[op.index] = x;
        if (cache) cache->steps.push_back(Step{Step::Kind::Tap, op.index, {}, {}, {}, {}});
        break;
    }
  }
  return pyr;
}

template <typename T>
std::vector<ConvLayer<T>> backbone_backward(const BackboneCache<T>& cache,
                                            const BackboneParams<T>& params,
                                            const std::array<Tensor<T>, 4>& grads_by_tap) {
  using Step = typename BackboneCache<T>::Step;
  std::vector<ConvLayer<T>> grads(params.convs.size());
  for (std::size_t i = 0; i < params.convs.size(); ++i) {
    grads[i].weight = Tensor<T>(params.convs[i].weight.shape());
    grads[i].bias = Tensor<T>(params.convs[i].bias.shape());
    grads[i].spec = params.convs[i].spec;
  }
  Tensor<T> g;
  for (auto it = cache.steps.rbegin(); it != cache.steps.rend(); ++it) {
    const Step& s = *it;
    switch (s.kind) {
      case Step::Kind::Tap: {
        const Tensor<T>& tg = grads_by_tap[s.index];
        if (tg.empty()) break;
        if (g.empty()) {
          g = tg;
        } else {
          if (tg.shape() != g.shape())
            throw ShapeError("backbone_backward: tap gradient " + shape_str(tg.shape()) +
                             " does not match feature " + shape_str(g.shape()));
          g += tg;
        }
        break;
      }
      case Step::Kind::Conv: {
        if (g.empty()) break;
        if (g.shape() != s.output.shape())
          throw ShapeError("backbone_backward: tap gradient has wrong shape " + shape_str(g.shape()));
        const auto& layer = params.convs[s.index];
        const bool first = s.index == 0;
        auto cg = conv2d_backward(s.input, layer.weight, layer.spec, relu_backward(s.output, g), !first);
        grads[s.index].weight += cg.weights;
        grads[s.index].bias += cg.bias;
        g = std::move(cg.input);
        break;
      }
      case Step::Kind::Pool:
        if (g.empty()) break;
        g = maxpool2d_backward(s.input_shape, s.argmax, g);
        break;
    }
  }
  return grads;
}

#define LRR_INSTANTIATE_BACKBONE(T)                                                            \
  template ConvLayer<T> make_conv_layer<T>(std::size_t, std::size_t, std::size_t, std::size_t, \
                                           std::uint64_t, std::uint64_t);                      \
  template struct FeaturePyramid<T>;                                                           \
  template BackboneParams<T> init_backbone<T>(const BackboneConfig&);                          \
  template FeaturePyramid<T> backbone_forward(const Tensor<T>&, const BackboneParams<T>&,      \
                                              const BackboneConfig&, BackboneCache<T>*);       \
  template std::vector<ConvLayer<T>> backbone_backward(const BackboneCache<T>&,                \
                                                       const BackboneParams<T>&,               \
                                                       const std::array<Tensor<T>, 4>&);

LRR_INSTANTIATE_BACKBONE(float)
LRR_INSTANTIATE_BACKBONE(double)

}  // namespace lrr
