#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "lrr/backbone.hpp"
#include "lrr_verify/suites.hpp"

using namespace lrr;
using lrr::verify::fill_uniform;

namespace {

BackboneConfig small_config() {
  BackboneConfig c;
  c.widths = {4, 5, 6, 7};
  c.convs_per_stage = 1;
  c.seed = 3;
  return c;
}

}  // namespace

TEST_SUITE("backbone") {

TEST_CASE("feature extents follow the tap strides") {
  const BackboneConfig cfg;
  const auto params = init_backbone<float>(cfg);
  for (std::size_t size : {64, 96, 128}) {
    TensorF img({3, size, size + 32});
    fill_uniform(img, 1, size, 0, 1);
    const FeaturePyramid<float> f = backbone_forward(img, params, cfg);
    for (std::size_t t = 0; t < 4; ++t) {
      const std::size_t s = kTapStrides[t];
      CHECK(f.levels[t].shape() == Shape{cfg.widths[t], size / s, (size + 32) / s});
      CHECK(f.levels[t].all_finite());
    }
  }
  const FeaturePyramid<float> f = backbone_forward(TensorF({3, 128, 128}, 0.5f), params, cfg);
  CHECK(f.at_stride(4).dim(1) == 32);
  CHECK(f.at_stride(8).dim(1) == 16);
  CHECK(f.at_stride(16).dim(1) == 8);
  CHECK(f.at_stride(32).dim(1) == 4);
  CHECK_THROWS(f.at_stride(2));
}

TEST_CASE("indivisible extents are rejected") {
  const BackboneConfig cfg;
  const auto params = init_backbone<float>(cfg);
  CHECK_THROWS_AS(backbone_forward(TensorF({3, 100, 128}), params, cfg), ShapeError);
  CHECK_THROWS_AS(backbone_forward(TensorF({1, 128, 128}), params, cfg), ShapeError);
}

TEST_CASE("zero input with zero biases gives zero features") {
  const BackboneConfig cfg;
  const auto params = init_backbone<double>(cfg);
  const auto f = backbone_forward(TensorD({3, 64, 64}), params, cfg);
  for (const auto& l : f.levels) CHECK(test::max_abs(l) == 0.0);
}

TEST_CASE("initialisation") {
  BackboneConfig cfg;
  cfg.seed = 17;
  const auto a = init_backbone<float>(cfg), b = init_backbone<float>(cfg);
  REQUIRE(a.convs.size() == 8);
  double sum = 0, var_sum = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.convs.size(); ++i) {
    CHECK(a.convs[i].weight == b.convs[i].weight);
    for (float v : a.convs[i].bias.values()) CHECK(v == 0.0f);
    const ConvSpec& s = a.convs[i].spec;
    const double limit = std::sqrt(6.0 / double(s.in_channels * s.kernel_h * s.kernel_w));
    for (float v : a.convs[i].weight.values()) {
      CHECK(std::abs(v) <= limit);
      sum += v;
      var_sum += limit * limit / 3.0;
      ++n;
    }
  }
  CHECK(n >= 1000);
  CHECK(std::abs(sum / double(n)) <= 3.0 * std::sqrt(var_sum) / double(n));

  cfg.seed = 18;
  CHECK_FALSE(init_backbone<float>(cfg).convs[0].weight == a.convs[0].weight);
}

TEST_CASE("backbone_backward") {
  const BackboneConfig cfg = small_config();
  const auto params = init_backbone<double>(cfg);
  TensorD img({3, 64, 64});
  fill_uniform(img, 4, 0, 0, 1);
  BackboneCache<double> cache;
  const auto f = backbone_forward(img, params, cfg, &cache);

  SUBCASE("zero tap gradients give zero parameter gradients") {
    std::array<TensorD, 4> g;
    for (std::size_t t = 0; t < 4; ++t) g[t] = TensorD(f.levels[t].shape());
    for (const auto& layer : backbone_backward(cache, params, g)) {
      CHECK(test::max_abs(layer.weight) == 0.0);
      CHECK(test::max_abs(layer.bias) == 0.0);
    }
  }

  SUBCASE("trunk gradients sum the contributions of every tap") {
    std::array<TensorD, 4> all, only32;
    for (std::size_t t = 0; t < 4; ++t) {
      all[t] = TensorD(f.levels[t].shape());
      fill_uniform(all[t], 5, t);
    }
    only32[3] = all[3];
    const auto ga = backbone_backward(cache, params, all);
    const auto g32 = backbone_backward(cache, params, only32);
    CHECK_FALSE(ga[0].weight == g32[0].weight);

    std::array<TensorD, 4> rest = all;
    rest[3] = TensorD();
    const auto gr = backbone_backward(cache, params, rest);
    for (std::size_t i = 0; i < ga[0].weight.size(); ++i)
      CHECK(ga[0].weight[i] == doctest::Approx(gr[0].weight[i] + g32[0].weight[i]).epsilon(1e-9).scale(1e-12));
  }

  SUBCASE("two-parameter finite-difference probe") {
    std::array<TensorD, 4> g;
    for (std::size_t t = 0; t < 4; ++t) {
      g[t] = TensorD(f.levels[t].shape());
      fill_uniform(g[t], 6, t);
    }
    auto p = params;
    const auto grads = backbone_backward(cache, params, g);
    TensorD probe({2}, std::vector<double>{p.convs[0].weight[7], p.convs[3].weight[2]});
    const TensorD analytic({2}, std::vector<double>{grads[0].weight[7], grads[3].weight[2]});
    auto loss = [&] {
      p.convs[0].weight[7] = probe[0];
      p.convs[3].weight[2] = probe[1];
      const auto ff = backbone_forward(img, p, cfg);
      double l = 0;
      for (std::size_t t = 0; t < 4; ++t) l += dot(ff.levels[t], g[t]);
      return l;
    };
    const auto r = verify::finite_difference("backbone probe", {&probe}, {analytic}, loss, 1e-5, 1e-5, 2, 1);
    CHECK(r.pass);
    CHECK(r.max_error <= 1e-5);
  }
}

TEST_CASE("forward is deterministic for fixed parameters") {
  const BackboneConfig cfg;
  const auto params = init_backbone<float>(cfg);
  TensorF img({3, 64, 64});
  fill_uniform(img, 7, 0, 0, 1);
  const auto a = backbone_forward(img, params, cfg), b = backbone_forward(img, params, cfg);
  for (std::size_t t = 0; t < 4; ++t) CHECK(a.levels[t] == b.levels[t]);
}

}  // TEST_SUITE
