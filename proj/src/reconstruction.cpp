#include "lrr/reconstruction.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "lrr/rng.hpp"

namespace lrr {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

}  // namespace

template <typename T>
BasisBank<T> BasisBank<T>::zeros(std::size_t stride, std::size_t K, std::size_t C) {
  BasisBank b;
  b.stride = stride;
  b.K = K;
  b.C = C;
  b.basis = Tensor<T>({2 * stride, 2 * stride, K, C});
  return b;
}

template <typename T>
void BasisBank<T>::validate() const {
  if (stride == 0) throw ShapeError("basis bank: stride must be >= 1");
  if (basis.shape() != Shape{2 * stride, 2 * stride, K, C})
    throw ShapeError("basis bank: tensor " + shape_str(basis.shape()) + " is not 2s x 2s x K x C");
}

template <typename T>
ConvSpec CoefficientHead<T>::spec() const {
  return ConvSpec{5, 5, 1, 2, weight.dim(1), K * C};
}

template <typename T>
CoefficientHead<T> init_coefficient_head(std::size_t features, std::size_t K, std::size_t C,
                                         std::uint64_t seed, std::uint64_t stream) {
  CoefficientHead<T> h;
  h.K = K;
  h.C = C;
  h.weight = Tensor<T>({K * C, features, 5, 5});
  h.bias = Tensor<T>({K * C});
  CounterRng rng(seed, stream);
  for (auto& w : h.weight.values()) w = static_cast<T>(rng.uniform(-1e-3, 1e-3));
  return h;
}

template <typename T>
Tensor<T> predict_coefficients(const Tensor<T>& features, const CoefficientHead<T>& head) {
  if (features.ndim() != 3 || features.dim(0) != head.weight.dim(1))
    throw ShapeError("predict_coefficients: features " + shape_str(features.shape()) +
                     " do not match head with " + std::to_string(head.weight.dim(1)) + " inputs");
  return conv2d(features, head.weight, head.bias, head.spec());
}

namespace {

template <typename T>
void check_coeffs(const Tensor<T>& coeffs, const BasisBank<T>& bank) {
  bank.validate();
  if (coeffs.ndim() != 3 || coeffs.dim(0) != bank.K * bank.C)
    throw ShapeError("reconstruct: coefficients " + shape_str(coeffs.shape()) + " do not carry K*C = " +
                     std::to_string(bank.K * bank.C) + " channels");
  if (coeffs.dim(1) == 0 || coeffs.dim(2) == 0) throw ShapeError("reconstruct: empty coefficient map");
}

// Basis functions regrouped as contiguous 2s x 2s planes, index c * K + k.
template <typename T>
std::vector<T> basis_planes(const BasisBank<T>& bank) {
  const std::size_t n = bank.support();
  std::vector<T> planes(bank.K * bank.C * n * n);
  for (std::size_t c = 0; c < bank.C; ++c)
    for (std::size_t k = 0; k < bank.K; ++k)
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b)
          planes[((c * bank.K + k) * n + a) * n + b] = bank(a, b, k, c);
  return planes;
}

}  // namespace

template <typename T>
Tensor<T> reconstruct(const Tensor<T>& coeffs, const BasisBank<T>& bank) {
  check_coeffs(coeffs, bank);
  const std::size_t s = bank.stride, n = bank.support(), K = bank.K;
  const std::size_t h = coeffs.dim(1), w = coeffs.dim(2), hw = h * w;
  const std::size_t oh = s * h, ow = s * w;
  const std::vector<T> planes = basis_planes(bank);
  Tensor<T> out({bank.C, oh, ow});
  RowMat<T> stamps(Eigen::Index(n * n), Eigen::Index(hw));
  for (std::size_t c = 0; c < bank.C; ++c) {
    // stamps[(a, b), (p, q)] = sum_k B[a, b, k, c] X[c K + k, p, q]
    const ConstMatMap<T> B(planes.data() + c * K * n * n, Eigen::Index(K), Eigen::Index(n * n));
    const ConstMatMap<T> X(coeffs.data() + c * K * hw, Eigen::Index(K), Eigen::Index(hw));
    stamps.noalias() = B.transpose() * X;
    // Each coefficient's stamp lands at (s p, s q); parts past the edge are cropped.
    T* y = out.data() + c * oh * ow;
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b) {
        const T* src = stamps.data() + (a * n + b) * hw;
        for (std::size_t p = 0; p < h && s * p + a < oh; ++p) {
          T* dst = y + (s * p + a) * ow + b;
          for (std::size_t q = 0; q < w && s * q + b < ow; ++q) dst[s * q] += src[p * w + q];
        }
      }
  }
  require_finite(out, "reconstruct");
  return out;
}

template <typename T>
ReconstructGrads<T> reconstruct_backward(const Tensor<T>& coeffs, const BasisBank<T>& bank,
                                         const Tensor<T>& grad_scores, bool want_basis) {
  check_coeffs(coeffs, bank);
  const std::size_t s = bank.stride, n = bank.support(), K = bank.K;
  const std::size_t h = coeffs.dim(1), w = coeffs.dim(2), hw = h * w;
  const std::size_t oh = s * h, ow = s * w;
  if (grad_scores.shape() != Shape{bank.C, oh, ow})
    throw ShapeError("reconstruct_backward: grad " + shape_str(grad_scores.shape()) +
                     " does not match output " + shape_str({bank.C, oh, ow}));
  const std::vector<T> planes = basis_planes(bank);
  ReconstructGrads<T> g{Tensor<T>(coeffs.shape()), {}};
  std::vector<T> gplanes(want_basis ? planes.size() : 0, T(0));
  RowMat<T> cols(Eigen::Index(n * n), Eigen::Index(hw));
  for (std::size_t c = 0; c < bank.C; ++c) {
    const T* gy = grad_scores.data() + c * oh * ow;
    cols.setZero();
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b) {
        T* dst = cols.data() + (a * n + b) * hw;
        for (std::size_t p = 0; p < h && s * p + a < oh; ++p) {
          const T* src = gy + (s * p + a) * ow + b;
          for (std::size_t q = 0; q < w && s * q + b < ow; ++q) dst[p * w + q] = src[s * q];
        }
      }
    const ConstMatMap<T> B(planes.data() + c * K * n * n, Eigen::Index(K), Eigen::Index(n * n));
    MatMap<T> GX(g.coeffs.data() + c * K * hw, Eigen::Index(K), Eigen::Index(hw));
    GX.noalias() = B * cols;
    if (want_basis) {
      const ConstMatMap<T> X(coeffs.data() + c * K * hw, Eigen::Index(K), Eigen::Index(hw));
      MatMap<T> GB(gplanes.data() + c * K * n * n, Eigen::Index(K), Eigen::Index(n * n));
      GB.noalias() = X * cols.transpose();
    }
  }
  if (want_basis) {
    g.basis = Tensor<T>(bank.basis.shape());
    for (std::size_t c = 0; c < bank.C; ++c)
      for (std::size_t k = 0; k < K; ++k)
        for (std::size_t a = 0; a < n; ++a)
          for (std::size_t b = 0; b < n; ++b)
            g.basis[((a * n + b) * K + k) * bank.C + c] = gplanes[((c * K + k) * n + a) * n + b];
  }
  return g;
}

PcaBasis fit_basis_pca(const PatchSet& patches, std::size_t K) {
  PcaBasis out;
  const std::size_t count = patches.patches.size();
  out.patches_used = count;
  if (K == 0) return out;
  if (count == 0) {
    out.note = "no patches for class " + std::to_string(patches.class_id);
    return out;
  }
  const std::size_t side = patches.patches.front().dim(0);
  const std::size_t dim = side * side;

  Eigen::MatrixXd data(dim, count);
  for (std::size_t j = 0; j < count; ++j) {
    const TensorF& p = patches.patches[j];
    if (p.size() != dim) throw ShapeError("fit_basis_pca: patches differ in size");
    for (std::size_t i = 0; i < dim; ++i) data(Eigen::Index(i), Eigen::Index(j)) = p[i];
  }
  // Left singular vectors of the patch matrix are eigenvectors of its Gram matrix.
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(Eigen::Index(dim), Eigen::Index(dim));
  gram.selfadjointView<Eigen::Lower>().rankUpdate(data);
  gram = gram.selfadjointView<Eigen::Lower>();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  if (eig.info() != Eigen::Success) throw NumericError("fit_basis_pca: eigen decomposition failed");

  const std::size_t available = std::min(count, dim);
  const std::size_t take = std::min(K, available);
  if (take < K)
    out.note = "class " + std::to_string(patches.class_id) + ": only " + std::to_string(take) +
               " of " + std::to_string(K) + " components available";
  for (std::size_t r = 0; r < take; ++r) {
    const Eigen::Index col = Eigen::Index(dim - 1 - r);  // eigenvalues ascend
    Eigen::VectorXd v = eig.eigenvectors().col(col);
    Eigen::Index peak = 0;
    v.cwiseAbs().maxCoeff(&peak);
    if (v(peak) < 0) v = -v;
    v.normalize();
    out.singular_values.push_back(std::sqrt(std::max(0.0, eig.eigenvalues()(col))));
    out.components.emplace_back(Shape{side, side}, std::vector<double>(v.data(), v.data() + v.size()));
  }
  return out;
}

TensorD downsample_basis(const TensorD& component, std::size_t target) {
  if (component.ndim() != 2 || component.dim(0) != component.dim(1))
    throw ShapeError("downsample_basis: expected a square component");
  const std::size_t side = component.dim(0);
  if (target == 0 || target > side || side % target != 0)
    throw ShapeError("downsample_basis: " + std::to_string(side) + " is not divisible by " +
                     std::to_string(target));
  const std::size_t f = side / target;
  TensorD out({target, target});
  for (std::size_t y = 0; y < target; ++y)
    for (std::size_t x = 0; x < target; ++x) {
      double acc = 0;
      for (std::size_t dy = 0; dy < f; ++dy)
        for (std::size_t dx = 0; dx < f; ++dx) acc += component[(y * f + dy) * side + x * f + dx];
      out[y * target + x] = acc / double(f * f);
    }
  const double norm = std::sqrt(dot(out, out));
  if (norm > 0) out *= 1.0 / norm;
  return out;
}

template <typename T>
BasisBank<T> bank_from_pca(std::span<const PcaBasis> per_class, std::size_t stride, std::size_t K) {
  BasisBank<T> bank = BasisBank<T>::zeros(stride, K, per_class.size());
  const std::size_t n = bank.support();
  for (std::size_t c = 0; c < per_class.size(); ++c)
    for (std::size_t k = 0; k < std::min(K, per_class[c].components.size()); ++k) {
      const TensorD small = downsample_basis(per_class[c].components[k], n);
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b) bank(a, b, k, c) = static_cast<T>(small[a * n + b]);
    }
  return bank;
}

template <typename T>
BasisBank<T> tent_bank(std::size_t stride, std::size_t C) {
  BasisBank<T> bank = BasisBank<T>::zeros(stride, 1, C);
  const std::size_t n = bank.support();
  const double s = double(stride);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b) {
        const double ta = 1.0 - std::abs(double(a) - (s - 0.5)) / s;
        const double tb = 1.0 - std::abs(double(b) - (s - 0.5)) / s;
        bank(a, b, 0, c) = static_cast<T>(ta * tb);
      }
  return bank;
}

#define LRR_INSTANTIATE_RECON(T)                                                                \
  template struct BasisBank<T>;                                                                 \
  template struct CoefficientHead<T>;                                                           \
  template CoefficientHead<T> init_coefficient_head<T>(std::size_t, std::size_t, std::size_t,   \
                                                       std::uint64_t, std::uint64_t);           \
  template Tensor<T> predict_coefficients(const Tensor<T>&, const CoefficientHead<T>&);         \
  template Tensor<T> reconstruct(const Tensor<T>&, const BasisBank<T>&);                        \
  template ReconstructGrads<T> reconstruct_backward(const Tensor<T>&, const BasisBank<T>&,      \
                                                    const Tensor<T>&, bool);                    \
  template BasisBank<T> bank_from_pca<T>(std::span<const PcaBasis>, std::size_t, std::size_t);  \
  template BasisBank<T> tent_bank<T>(std::size_t, std::size_t);

LRR_INSTANTIATE_RECON(float)
LRR_INSTANTIATE_RECON(double)

}  // namespace lrr
