#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "lrr/reconstruction.hpp"
#include "lrr/train.hpp"
#include "lrr_verify/oracles.hpp"
#include "lrr_verify/suites.hpp"

using namespace lrr;
using lrr::test::max_abs;
using lrr::test::max_abs_diff;
using lrr::verify::fill_uniform;

namespace {

double project_error(const TensorF& patch, const PcaBasis& basis, std::size_t K) {
  std::vector<double> residual(patch.values().begin(), patch.values().end());
  for (std::size_t k = 0; k < K; ++k) {
    const TensorD& u = basis.components[k];
    double coef = 0;
    for (std::size_t i = 0; i < u.size(); ++i) coef += u[i] * patch[i];
    for (std::size_t i = 0; i < u.size(); ++i) residual[i] -= coef * u[i];
  }
  double e = 0;
  for (double r : residual) e += r * r;
  return e / double(residual.size());
}

}  // namespace

TEST_SUITE("reconstruction") {

TEST_CASE("a one-hot coefficient stamps its basis function") {
  const std::size_t s = 4, K = 3, C = 2, H = 4, W = 5;
  BasisBank<double> bank = BasisBank<double>::zeros(s, K, C);
  fill_uniform(bank.basis, 1, 0);
  for (auto [p, q, k, c] : {std::array<std::size_t, 4>{1, 2, 2, 1}, {0, 0, 0, 0}, {2, 3, 1, 0}}) {
    TensorD X({K * C, H, W});
    X.at(c * K + k, p, q) = 1.0;
    const TensorD Y = reconstruct(X, bank);
    REQUIRE(Y.shape() == Shape{C, s * H, s * W});
    for (std::size_t cc = 0; cc < C; ++cc)
      for (std::size_t i = 0; i < s * H; ++i)
        for (std::size_t j = 0; j < s * W; ++j) {
          const bool inside = cc == c && i >= s * p && i < s * p + 2 * s && j >= s * q && j < s * q + 2 * s;
          if (inside) {
            CHECK(Y.at(cc, i, j) == bank(i - s * p, j - s * q, k, c));
          } else {
            CHECK(Y.at(cc, i, j) == 0.0);
            CHECK_FALSE(std::signbit(Y.at(cc, i, j)));
          }
        }
  }
}

TEST_CASE("tent basis with constant coefficients is a partition of unity") {
  for (std::size_t s : {1, 2, 4}) {
    const BasisBank<double> bank = tent_bank<double>(s, 2);
    const TensorD X({2, 5, 6}, 1.0);
    const TensorD Y = reconstruct(X, bank);
    auto partial = [&](std::size_t i) { return i < s ? verify::tent_value(s, i) : 1.0; };
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t i = 0; i < 5 * s; ++i)
        for (std::size_t j = 0; j < 6 * s; ++j) {
          const double want = partial(i) * partial(j);
          CHECK(std::abs(Y.at(c, i, j) - want) <= 1e-6);
          if (i >= s && j >= s) CHECK(std::abs(Y.at(c, i, j) - 1.0) <= 1e-6);
        }
  }
  // Border values follow (m + 1/2) / s along each axis.
  const TensorD Y = reconstruct(TensorD({1, 3, 3}, 1.0), tent_bank<double>(4, 1));
  CHECK(Y.at(0, 0, 8) == doctest::Approx(0.125));
  CHECK(Y.at(0, 3, 8) == doctest::Approx(0.875));
  CHECK(Y.at(0, 1, 2) == doctest::Approx(0.375 * 0.625));
}

TEST_CASE("reconstruct equals the direct per-pixel sum on a random 2x3, K=10, C=3, s=4 case") {
  TensorD X({30, 2, 3});
  fill_uniform(X, 2, 0);
  BasisBank<double> bank = BasisBank<double>::zeros(4, 10, 3);
  fill_uniform(bank.basis, 2, 1);
  const TensorD ref = verify::naive_reconstruct(X, bank.basis, 4, 10, 3);
  CHECK(max_abs_diff(reconstruct(X, bank), ref) <= 1e-6 * max_abs(ref));
}

TEST_CASE("reconstruct rejects mismatched K*C") {
  const BasisBank<double> bank = BasisBank<double>::zeros(2, 3, 2);
  CHECK_THROWS_AS(reconstruct(TensorD({5, 2, 2}), bank), ShapeError);
  BasisBank<double> bad = bank;
  bad.basis = TensorD({3, 4, 3, 2});
  CHECK_THROWS_AS(bad.validate(), ShapeError);
}

TEST_CASE("reconstruct_backward") {
  const std::size_t s = 4, K = 3, C = 2;
  BasisBank<double> bank = BasisBank<double>::zeros(s, K, C);
  fill_uniform(bank.basis, 3, 0);
  TensorD X({K * C, 3, 4});
  fill_uniform(X, 3, 1);

  SUBCASE("zero output gradient gives zero gradients") {
    const auto g = reconstruct_backward(X, bank, TensorD({C, 12, 16}));
    CHECK(max_abs(g.coeffs) == 0.0);
    CHECK(max_abs(g.basis) == 0.0);
  }
  SUBCASE("basis gradient is skipped on request") {
    TensorD G({C, 12, 16}, 1.0);
    CHECK(reconstruct_backward(X, bank, G, false).basis.empty());
  }
  SUBCASE("adjoint identity on 20 random instances") {
    for (std::uint64_t t = 0; t < 20; ++t) {
      const std::size_t ss = 1 + t % 4, kk = 1 + t % 3, cc = 1 + (t / 3) % 3;
      BasisBank<double> b = BasisBank<double>::zeros(ss, kk, cc);
      fill_uniform(b.basis, 100 + t, 0);
      TensorD x({kk * cc, 2 + t % 3, 3 + t % 2});
      fill_uniform(x, 100 + t, 1);
      const TensorD y = reconstruct(x, b);
      TensorD G(y.shape());
      fill_uniform(G, 100 + t, 2);
      const auto g = reconstruct_backward(x, b, G);
      const double lhs = dot(y, G);
      CHECK(std::abs(lhs - dot(x, g.coeffs)) <= 1e-6 * std::max(1.0, std::abs(lhs)));
      CHECK(std::abs(lhs - dot(b.basis, g.basis)) <= 1e-6 * std::max(1.0, std::abs(lhs)));
    }
  }
}

TEST_CASE("PCA on rank-one data") {
  PatchSet ps;
  ps.patch = 8;
  TensorF p({8, 8});
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = float((i * 37) % 11) / 10.0f;
  for (int i = 0; i < 30; ++i) ps.patches.push_back(p);
  const PcaBasis b = fit_basis_pca(ps, 5);
  REQUIRE(b.components.size() == 5);
  CHECK(b.singular_values[0] > 0);
  for (std::size_t k = 1; k < 5; ++k) CHECK(b.singular_values[k] <= 1e-6 * b.singular_values[0]);
  const TensorD pd = p.cast<double>();
  const double norm = std::sqrt(dot(pd, pd));
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(b.components[0][i] == doctest::Approx(pd[i] / norm).epsilon(1e-9));
}

TEST_CASE("PCA on class patches") {
  const auto train = generate_shapes(30, 96, 5, 8);
  const auto held = generate_shapes(10, 96, 5, 9);
  const PatchSet ps = extract_class_patches(train, 1, 600, 32, 0.02, 1);
  const PatchSet test_ps = extract_class_patches(held, 1, 100, 32, 0.02, 2);
  REQUIRE(ps.patches.size() == 600);
  REQUIRE(test_ps.patches.size() > 20);
  const PcaBasis b = fit_basis_pca(ps, 10);
  REQUIRE(b.components.size() == 10);
  CHECK(b.note.empty());

  SUBCASE("components are orthonormal, sorted and sign fixed") {
    for (std::size_t i = 0; i < 10; ++i) {
      for (std::size_t j = 0; j < 10; ++j)
        CHECK(std::abs(dot(b.components[i], b.components[j]) - (i == j ? 1.0 : 0.0)) <= 1e-6);
      if (i > 0) CHECK(b.singular_values[i] <= b.singular_values[i - 1]);
      double peak = 0;
      for (double v : b.components[i].values())
        if (std::abs(v) > std::abs(peak)) peak = v;
      CHECK(peak > 0);
    }
  }
  SUBCASE("held-out reconstruction error does not increase with K") {
    double prev = INFINITY;
    for (std::size_t K = 1; K <= 10; ++K) {
      double mse = 0;
      for (const auto& p : test_ps.patches) mse += project_error(p, b, K);
      mse /= double(test_ps.patches.size());
      CHECK(mse <= prev + 1e-12);
      prev = mse;
    }
  }
  SUBCASE("ten components at the 8x8 resolution of the stride-4 bank") {
    const std::vector<PcaBasis> per_class(5, b);
    const BasisBank<float> bank = bank_from_pca<float>(per_class, 4, 10);
    CHECK(bank.basis.shape() == Shape{8, 8, 10, 5});
    CHECK_NOTHROW(bank.validate());
  }
}

TEST_CASE("PCA with fewer patches than components reports the shortfall") {
  PatchSet ps;
  ps.patches.assign(3, TensorF({4, 4}, 1.0f));
  ps.patches[1][3] = 0;
  ps.patches[2][7] = 0;
  const PcaBasis b = fit_basis_pca(ps, 10);
  CHECK(b.components.size() == 3);
  CHECK_FALSE(b.note.empty());
}

TEST_CASE("downsample_basis") {
  TensorD comp({32, 32});
  fill_uniform(comp, 4, 0);
  SUBCASE("target 8 averages 4x4 blocks before normalising") {
    const TensorD d = downsample_basis(comp, 8);
    TensorD manual({8, 8});
    for (std::size_t y = 0; y < 32; ++y)
      for (std::size_t x = 0; x < 32; ++x) manual[(y / 4) * 8 + x / 4] += comp[y * 32 + x] / 16.0;
    manual *= 1.0 / std::sqrt(dot(manual, manual));
    CHECK(max_abs_diff(d, manual) <= 1e-12);
  }
  SUBCASE("target 32 only renormalises") {
    const TensorD d = downsample_basis(comp, 32);
    const double n = std::sqrt(dot(comp, comp));
    for (std::size_t i = 0; i < comp.size(); ++i) CHECK(d[i] == doctest::Approx(comp[i] / n).epsilon(1e-12));
  }
  SUBCASE("a constant component stays constant") {
    const TensorD d = downsample_basis(TensorD({32, 32}, 0.3), 4);
    for (double v : d.values()) CHECK(v == doctest::Approx(0.25));
  }
  SUBCASE("indivisible targets are rejected") { CHECK_THROWS_AS(downsample_basis(comp, 6), ShapeError); }
}

TEST_CASE("coefficient head") {
  TensorD feat({6, 4, 5});
  fill_uniform(feat, 5, 0);
  CoefficientHead<double> head = init_coefficient_head<double>(6, 3, 2, 1, 0);
  CHECK(head.weight.shape() == Shape{6, 6, 5, 5});
  for (double v : head.weight.values()) CHECK(std::abs(v) <= 1e-3);

  SUBCASE("zero head gives zero coefficients and zero scores") {
    head.weight.fill(0);
    const TensorD X = predict_coefficients(feat, head);
    CHECK(max_abs(X) == 0.0);
    BasisBank<double> bank = BasisBank<double>::zeros(4, 3, 2);
    fill_uniform(bank.basis, 5, 1);
    CHECK(max_abs(reconstruct(X, bank)) == 0.0);
  }
  SUBCASE("bias only gives a constant plane") {
    head.weight.fill(0);
    head.bias[4] = 0.625;
    const TensorD X = predict_coefficients(feat, head);
    for (std::size_t ch = 0; ch < 6; ++ch)
      for (std::size_t i = 0; i < 20; ++i) CHECK(X[ch * 20 + i] == (ch == 4 ? 0.625 : 0.0));
  }
  SUBCASE("delegates to conv2d with a 5x5 pad-2 spec") {
    fill_uniform(head.weight, 5, 2);
    fill_uniform(head.bias, 5, 3);
    const ConvSpec spec{5, 5, 1, 2, 6, 6};
    CHECK(max_abs_diff(predict_coefficients(feat, head), conv2d(feat, head.weight, head.bias, spec)) <= 1e-12);
  }
  SUBCASE("channel mismatch is rejected") { CHECK_THROWS_AS(predict_coefficients(TensorD({5, 4, 4}), head), ShapeError); }
}

TEST_CASE("bases survive the container round trip") {
  const auto samples = generate_shapes(8, 64, 3, 2);
  const auto bases = extract_bases(samples, 3, 4, 100, 32, 0.02, 1);
  REQUIRE(bases.size() == 3);
  const auto back = bases_from_checkpoint(bases_to_checkpoint(bases));
  REQUIRE(back.size() == 3);
  for (std::size_t c = 0; c < 3; ++c) {
    REQUIRE(back[c].components.size() == bases[c].components.size());
    CHECK(back[c].patches_used == bases[c].patches_used);
    for (std::size_t k = 0; k < back[c].components.size(); ++k)
      CHECK(max_abs_diff(back[c].components[k], bases[c].components[k]) <= 1e-7);
  }
}

}  // TEST_SUITE
