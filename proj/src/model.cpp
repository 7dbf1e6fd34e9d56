#include "lrr/model.hpp"

#include "lrr/evaluation.hpp"

namespace lrr {

template <typename T>
ModelParams<T> ModelParams<T>::zeros_like() const {
  ModelParams z = *this;
  z.for_each([](const std::string&, const std::string&, Tensor<T>& t) { t.fill(T(0)); });
  return z;
}

template <typename T>
std::size_t ModelParams<T>::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const std::string&, const Tensor<T>& t) { n += t.size(); });
  return n;
}

template <typename T>
ModelParams<T> init_model(const ModelConfig& config, const std::vector<PcaBasis>& bases) {
  config.pyramid.validate();
  const PyramidConfig& pc = config.pyramid;
  if (!bases.empty() && bases.size() != pc.C)
    throw std::invalid_argument("init_model: expected PCA bases for " + std::to_string(pc.C) + " classes");
  ModelParams<T> p;
  p.backbone = init_backbone<T>(config.backbone);
  BasisBank<T> bank;
  if (bases.empty()) {
    const BasisBank<T> tent = tent_bank<T>(pc.recon_stride, pc.C);
    bank = BasisBank<T>::zeros(pc.recon_stride, pc.K, pc.C);
    const std::size_t n = bank.support();
    for (std::size_t c = 0; c < pc.C; ++c)
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b) bank(a, b, 0, c) = tent(a, b, 0, c);
  } else {
    bank = bank_from_pca<T>(bases, pc.recon_stride, pc.K);
  }
  std::uint64_t stream = 1000;
  for (std::size_t stride : pc.strides) {
    Branch<T> br;
    br.stride = stride;
    const std::size_t features = config.backbone.widths[tap_index(stride)];
    br.head = init_coefficient_head<T>(features, pc.K, pc.C, config.backbone.seed, stream++);
    br.bank = bank;
    p.branches.push_back(std::move(br));
  }
  p.de_head = make_conv_layer<T>(config.backbone.widths[3], 2 * pc.C, 3, 1, config.backbone.seed, 2000);
  return p;
}

template <typename T>
ForwardPass<T> model_forward(const ModelParams<T>& params, const ModelConfig& config,
                             const Tensor<T>& image, std::size_t levels, bool with_de,
                             bool keep_cache) {
  ForwardPass<T> pass;
  pass.features = backbone_forward(image, params.backbone, config.backbone, keep_cache ? &pass.cache : nullptr);
  pass.levels = pyramid_forward<T>(pass.features, params.branches, config.pyramid, levels);
  if (with_de) {
    const Tensor<T>& f32 = pass.features.at_stride(32);
    pass.de_coarse = conv2d(f32, params.de_head.weight, params.de_head.bias, params.de_head.spec);
    pass.de_logits = bilinear_resize(pass.de_coarse, image.dim(1) / config.de_factor,
                                     image.dim(2) / config.de_factor);
  }
  return pass;
}

template <typename T>
ModelParams<T> model_backward(const ModelParams<T>& params, const ModelConfig& config,
                              const ForwardPass<T>& pass, const AssembledLoss<T>& loss,
                              bool basis_grads) {
  ModelParams<T> g = params.zeros_like();
  PyramidGrads<T> pg = pyramid_backward<T>(pass.features, params.branches, pass.levels,
                                           loss.grad_fused, loss.grad_raw, basis_grads);
  for (std::size_t l = 0; l < pass.levels.size(); ++l) {
    g.branches[l].head.weight = std::move(pg.head_weights[l]);
    g.branches[l].head.bias = std::move(pg.head_biases[l]);
    if (basis_grads) g.branches[l].bank.basis = std::move(pg.banks[l]);
  }
  if (!loss.grad_de.empty()) {
    const Tensor<T> gcoarse = bilinear_resize_backward(pass.de_coarse.shape(), loss.grad_de);
    const Tensor<T>& f32 = pass.features.at_stride(32);
    auto cg = conv2d_backward(f32, params.de_head.weight, params.de_head.spec, gcoarse);
    g.de_head.weight = std::move(cg.weights);
    g.de_head.bias = std::move(cg.bias);
    Tensor<T>& tap = pg.taps[tap_index(32)];
    if (tap.empty()) tap = std::move(cg.input);
    else tap += cg.input;
  }
  auto bg = backbone_backward(pass.cache, params.backbone, pg.taps);
  for (std::size_t i = 0; i < bg.size(); ++i) {
    g.backbone.convs[i].weight = std::move(bg[i].weight);
    g.backbone.convs[i].bias = std::move(bg[i].bias);
  }
  (void)config;
  return g;
}

template <typename T>
Tensor<T> predict_scores(const ModelParams<T>& params, const ModelConfig& config, const Tensor<T>& image) {
  ForwardPass<T> pass = model_forward(params, config, image, 0, false, false);
  Tensor<T> scores = pass.levels.back().fused;
  if (scores.dim(1) != image.dim(1) || scores.dim(2) != image.dim(2))
    scores = bilinear_resize(scores, image.dim(1), image.dim(2));
  return scores;
}

template <typename T>
std::vector<LabelMap> level_labels(const std::vector<LevelOutput<T>>& levels, std::size_t h, std::size_t w) {
  std::vector<LabelMap> out;
  for (const auto& lo : levels) {
    const Tensor<T>& s = lo.fused;
    out.push_back(labels_from_scores(s.dim(1) == h && s.dim(2) == w ? s : bilinear_resize(s, h, w)));
  }
  return out;
}

template <typename T>
std::vector<LabelMap> predict_level_labels(const ModelParams<T>& params, const ModelConfig& config,
                                           const Tensor<T>& image) {
  ForwardPass<T> pass = model_forward(params, config, image, 0, false, false);
  return level_labels(pass.levels, image.dim(1), image.dim(2));
}

#define LRR_INSTANTIATE_MODEL(T)                                                                 \
  template struct ModelParams<T>;                                                                \
  template ModelParams<T> init_model<T>(const ModelConfig&, const std::vector<PcaBasis>&);       \
  template ForwardPass<T> model_forward(const ModelParams<T>&, const ModelConfig&,               \
                                        const Tensor<T>&, std::size_t, bool, bool);              \
  template ModelParams<T> model_backward(const ModelParams<T>&, const ModelConfig&,              \
                                         const ForwardPass<T>&, const AssembledLoss<T>&, bool);  \
  template Tensor<T> predict_scores(const ModelParams<T>&, const ModelConfig&, const Tensor<T>&); \
  template std::vector<LabelMap> level_labels(const std::vector<LevelOutput<T>>&, std::size_t,   \
                                              std::size_t);                                      \
  template std::vector<LabelMap> predict_level_labels(const ModelParams<T>&, const ModelConfig&, \
                                                      const Tensor<T>&);

LRR_INSTANTIATE_MODEL(float)
LRR_INSTANTIATE_MODEL(double)

}  // namespace lrr
