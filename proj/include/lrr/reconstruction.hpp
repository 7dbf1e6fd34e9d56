#pragma once

#include <span>
#include <string>
#include <vector>

#include "lrr/dataio.hpp"
#include "lrr/ops.hpp"

namespace lrr {

/// Class-specific basis functions with support 2s, applied at stride s.
/// `basis` has shape {2s, 2s, K, C}.
template <typename T>
struct BasisBank {
  std::size_t stride = 4;
  std::size_t K = 10;
  std::size_t C = 2;
  Tensor<T> basis;

  std::size_t support() const { return 2 * stride; }
  T& operator()(std::size_t a, std::size_t b, std::size_t k, std::size_t c) {
    return basis[((a * support() + b) * K + k) * C + c];
  }
  T operator()(std::size_t a, std::size_t b, std::size_t k, std::size_t c) const {
    return basis[((a * support() + b) * K + k) * C + c];
  }

  static BasisBank zeros(std::size_t stride, std::size_t K, std::size_t C);
  void validate() const;
};

/// 5x5 linear convolution (pad 2) predicting K coefficients per class.
/// Output channel c * K + k holds coefficient k of class c.
template <typename T>
struct CoefficientHead {
  Tensor<T> weight;  // (K*C) x F x 5 x 5
  Tensor<T> bias;    // K*C
  std::size_t K = 10;
  std::size_t C = 2;

  ConvSpec spec() const;
};

/// Weights uniform in +-1e-3, zero bias.
template <typename T>
CoefficientHead<T> init_coefficient_head(std::size_t features, std::size_t K, std::size_t C,
                                         std::uint64_t seed, std::uint64_t stream);

template <typename T>
Tensor<T> predict_coefficients(const Tensor<T>& features, const CoefficientHead<T>& head);

/// Synthesis Y_c[i,j] = sum_k sum_{u,v in {0,1}} B_{k,c}[i mod s + s u, j mod s + s v]
///                      * X_{k,c}[i div s - u, j div s - v]
/// with X zero padded. coeffs: (K*C) x H x W; result: C x sH x sW.
template <typename T>
Tensor<T> reconstruct(const Tensor<T>& coeffs, const BasisBank<T>& bank);

template <typename T>
struct ReconstructGrads {
  Tensor<T> coeffs;
  Tensor<T> basis;  // empty unless requested
};

template <typename T>
ReconstructGrads<T> reconstruct_backward(const Tensor<T>& coeffs, const BasisBank<T>& bank,
                                         const Tensor<T>& grad_scores, bool want_basis = true);

struct PcaBasis {
  std::vector<TensorD> components;  // unit norm, patch x patch
  std::vector<double> singular_values;
  std::size_t patches_used = 0;
  std::string note;  // set when fewer than K components could be produced
};

/// Top-K left singular vectors of the uncentred patch matrix, sorted by
/// decreasing singular value; each sign-fixed so its largest-magnitude entry
/// is positive.
PcaBasis fit_basis_pca(const PatchSet& patches, std::size_t K);

/// Block-average a square component down to target x target, then rescale to
/// unit norm.
TensorD downsample_basis(const TensorD& component, std::size_t target);

/// Bank for stride s from per-class PCA results (index = class id). Missing
/// components stay zero.
template <typename T>
BasisBank<T> bank_from_pca(std::span<const PcaBasis> per_class, std::size_t stride, std::size_t K);

/// K = 1 separable tent b(t) = 1 - |t - (s - 0.5)| / s for every class.
template <typename T>
BasisBank<T> tent_bank(std::size_t stride, std::size_t C);

}  // namespace lrr
