#pragma once

#include <string>
#include <vector>

#include "lrr/backbone.hpp"
#include "lrr/losses.hpp"
#include "lrr/reconstruction.hpp"
#include "lrr/refinement.hpp"

namespace lrr {

struct ModelConfig {
  BackboneConfig backbone;
  PyramidConfig pyramid;
  std::size_t de_factor = 8;  // DE logits live at 1/de_factor resolution

  std::size_t classes() const { return pyramid.C; }
};

/// Every trainable tensor of an LRR model. The same type doubles as the
/// gradient container.
template <typename T>
struct ModelParams {
  BackboneParams<T> backbone;
  std::vector<Branch<T>> branches;  // coarse to fine, matching pyramid.strides
  ConvLayer<T> de_head;             // 3x3 conv on the stride-32 features -> 2C logits

  /// f(name, group, tensor); group is "backbone", "branch<stride>" or "de".
  template <typename F>
  void for_each(F&& f) {
    for (std::size_t i = 0; i < backbone.convs.size(); ++i) {
      const std::string p = "backbone.conv" + std::to_string(i + 1);
      f(p + ".weight", std::string("backbone"), backbone.convs[i].weight);
      f(p + ".bias", std::string("backbone"), backbone.convs[i].bias);
    }
    for (auto& br : branches) {
      const std::string g = "branch" + std::to_string(br.stride);
      f(g + ".head.weight", g, br.head.weight);
      f(g + ".head.bias", g, br.head.bias);
      f(g + ".bank", g, br.bank.basis);
    }
    f(std::string("de.weight"), std::string("de"), de_head.weight);
    f(std::string("de.bias"), std::string("de"), de_head.bias);
  }
  template <typename F>
  void for_each(F&& f) const {
    const_cast<ModelParams*>(this)->for_each(
        [&](const std::string& n, const std::string& g, Tensor<T>& t) { f(n, g, static_cast<const Tensor<T>&>(t)); });
  }

  ModelParams zeros_like() const;
  std::size_t parameter_count() const;
};

/// Per-class PCA results (index = class id). With an empty list every bank
/// falls back to the separable tent in basis slot 0.
template <typename T>
ModelParams<T> init_model(const ModelConfig& config, const std::vector<PcaBasis>& bases);

template <typename T>
struct ForwardPass {
  FeaturePyramid<T> features;
  BackboneCache<T> cache;
  std::vector<LevelOutput<T>> levels;
  Tensor<T> de_coarse;  // DE logits at stride 32
  Tensor<T> de_logits;  // resized to 1/de_factor; empty when DE is off
};

template <typename T>
ForwardPass<T> model_forward(const ModelParams<T>& params, const ModelConfig& config,
                             const Tensor<T>& image, std::size_t levels = 0, bool with_de = false,
                             bool keep_cache = true);

/// Gradients of every parameter given the assembled loss gradients.
template <typename T>
ModelParams<T> model_backward(const ModelParams<T>& params, const ModelConfig& config,
                              const ForwardPass<T>& pass, const AssembledLoss<T>& loss,
                              bool basis_grads = false);

/// Final fused class scores at the input resolution.
template <typename T>
Tensor<T> predict_scores(const ModelParams<T>& params, const ModelConfig& config,
                         const Tensor<T>& image);

/// Argmax labels of every level's fused scores, bilinearly upsampled to the
/// input resolution (coarsest first).
template <typename T>
std::vector<LabelMap> predict_level_labels(const ModelParams<T>& params, const ModelConfig& config,
                                           const Tensor<T>& image);

template <typename T>
std::vector<LabelMap> level_labels(const std::vector<LevelOutput<T>>& levels, std::size_t h,
                                   std::size_t w);

}  // namespace lrr
