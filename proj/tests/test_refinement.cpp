#include <doctest.h>

#include "helpers.hpp"
#include "lrr/model.hpp"
#include "lrr/refinement.hpp"
#include "lrr_verify/suites.hpp"

using namespace lrr;
using lrr::verify::fill_uniform;

namespace {

/// Two-class scores favouring class 0 on columns <= c and class 1 after.
TensorD step_scores(std::size_t h, std::size_t w, std::size_t c, double margin = 2.0) {
  TensorD s({2, h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) s.at(x <= c ? 0 : 1, y, x) = margin;
  return s;
}

ModelConfig tiny_model(std::size_t C = 3) {
  ModelConfig m;
  m.backbone.widths = {4, 6, 8, 10};
  m.backbone.convs_per_stage = 1;
  m.backbone.seed = 5;
  m.pyramid.C = C;
  m.pyramid.K = 3;
  return m;
}

}  // namespace

TEST_SUITE("refinement") {

TEST_CASE("mask at a vertical step covers columns c-3..c+4 for pool 9") {
  const std::size_t c = 15;
  const TensorD m = boundary_mask(step_scores(12, 32, c), 9, 0.0);
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t y = 0; y < 12; ++y)
      for (std::size_t x = 0; x < 32; ++x) CHECK(m.at(k, y, x) == (x + 3 >= c && x <= c + 4 ? 1.0 : 0.0));
}

TEST_CASE("band width at a straight step is pool - 1 for every odd pool") {
  for (std::size_t pool : {1, 3, 5, 7, 9, 11, 15}) {
    const TensorD m = boundary_mask(step_scores(4, 40, 19), pool, 0.0);
    std::size_t cols = 0;
    for (std::size_t x = 0; x < 40; ++x) cols += m.at(0, 0, x) == 1.0;
    CHECK(cols == pool - 1);
  }
}

TEST_CASE("a uniform confident map has an empty mask") {
  TensorD s({3, 10, 10});
  for (std::size_t i = 0; i < 100; ++i) s[100 + i] = 4.0;
  const TensorD m = boundary_mask(s, 9, 0.0);
  for (double v : m.values()) CHECK(v == 0.0);
}

TEST_CASE("tau = 1 marks every pixel unconfident") {
  TensorD s({3, 8, 8});
  fill_uniform(s, 1, 0);
  const TensorD m = boundary_mask(s, 9, 1.0);
  for (double v : m.values()) CHECK(v == 1.0);
}

TEST_CASE("tau adds exactly the unconfident pixels") {
  TensorD s = step_scores(6, 30, 10, 3.0);
  s.at(0, 2, 25) = 0.0;
  s.at(1, 2, 25) = 0.1;  // max prob ~0.52
  const TensorD base = boundary_mask(s, 5, 0.0), strict = boundary_mask(s, 5, 0.6);
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t y = 0; y < 6; ++y)
      for (std::size_t x = 0; x < 30; ++x) {
        const double want = (y == 2 && x == 25) ? 1.0 : base.at(k, y, x);
        CHECK(strict.at(k, y, x) == want);
      }
}

TEST_CASE("mask is binary and agrees with the max-pool definition on random scores") {
  TensorD s({4, 20, 17});
  fill_uniform(s, 2, 0, -3, 3);
  const std::size_t pool = 7;
  const TensorD m = boundary_mask(s, pool, 0.0);
  const auto arg = argmax_channels(s);
  TensorD fg({4, 20, 17}), bg({4, 20, 17});
  for (std::size_t k = 0; k < 4; ++k)
    for (std::size_t p = 0; p < 340; ++p) (arg[p] == k ? fg : bg)[k * 340 + p] = 1.0;
  const TensorD dfg = maxpool2d(fg, pool, 1, pool / 2).output, dbg = maxpool2d(bg, pool, 1, pool / 2).output;
  for (std::size_t i = 0; i < m.size(); ++i) CHECK(m[i] == std::min(dfg[i], dbg[i]));
}

TEST_CASE("boundary_mask rejects even pools") { CHECK_THROWS_AS(boundary_mask(TensorD({2, 4, 4}), 8, 0.0), ShapeError); }

TEST_CASE("fuse_level gating") {
  TensorD coarse({2, 6, 6}), fine({2, 6, 6});
  fill_uniform(coarse, 3, 0);
  fill_uniform(fine, 3, 1);
  SUBCASE("zero mask returns the coarse scores bit for bit") {
    CHECK(fuse_level(coarse, fine, TensorD({2, 6, 6})) == coarse);
  }
  SUBCASE("unit mask is plain additive fusion") {
    const TensorD f = fuse_level(coarse, fine, TensorD({2, 6, 6}, 1.0));
    for (std::size_t i = 0; i < f.size(); ++i) CHECK(f[i] == coarse[i] + fine[i]);
  }
  SUBCASE("mixed mask changes only its support") {
    TensorD mask({2, 6, 6});
    for (std::size_t i = 0; i < mask.size(); i += 3) mask[i] = 1.0;
    const TensorD f = fuse_level(coarse, fine, mask);
    for (std::size_t i = 0; i < f.size(); ++i) CHECK(f[i] == (mask[i] == 1.0 ? coarse[i] + fine[i] : coarse[i]));
    const auto g = fuse_level_backward(mask, fine);
    CHECK(g.coarse == fine);
    for (std::size_t i = 0; i < f.size(); ++i) CHECK(g.fine[i] == mask[i] * fine[i]);
  }
  SUBCASE("shape mismatch is rejected") {
    CHECK_THROWS_AS(fuse_level(coarse, TensorD({2, 6, 5}), TensorD({2, 6, 6})), ShapeError);
  }
}

TEST_CASE("pyramid extents on a 128 x 128 input") {
  const ModelConfig cfg = tiny_model();
  const auto params = init_model<float>(cfg, {});
  TensorF img({3, 128, 128});
  fill_uniform(img, 4, 0, 0, 1);
  const auto pass = model_forward(params, cfg, img);
  REQUIRE(pass.levels.size() == 4);
  const std::size_t want[] = {16, 32, 64, 128};
  for (std::size_t l = 0; l < 4; ++l) {
    CHECK(pass.levels[l].fused.shape() == Shape{3, want[l], want[l]});
    CHECK(pass.levels[l].raw.shape() == pass.levels[l].fused.shape());
    if (l == 0)
      CHECK(pass.levels[l].mask.empty());
    else
      CHECK(pass.levels[l].mask.shape() == pass.levels[l].fused.shape());
  }
  CHECK(model_forward(params, cfg, img, 2).levels.size() == 2);
}

TEST_CASE("zeroed fine heads leave the upsampled 32x prediction") {
  const ModelConfig cfg = tiny_model();
  auto params = init_model<double>(cfg, {});
  for (auto& p : params.branches[0].head.weight.values()) p *= 300.0;
  for (std::size_t l = 1; l < 4; ++l) {
    params.branches[l].head.weight.fill(0);
    params.branches[l].head.bias.fill(0);
  }
  TensorD img({3, 64, 64});
  fill_uniform(img, 5, 0, 0, 1);
  const auto pass = model_forward(params, cfg, img);
  TensorD up = pass.levels[0].fused;
  for (std::size_t l = 1; l < 4; ++l) {
    up = bilinear_resize(up, pass.levels[l].fused.dim(1), pass.levels[l].fused.dim(2));
    CHECK(pass.levels[l].fused == up);
  }
  CHECK(argmax_channels(pass.levels[3].fused) == argmax_channels(up));
}

TEST_CASE("masked and unmasked pyramids agree wherever the mask is one") {
  ModelConfig masked = tiny_model(), open = tiny_model();
  open.pyramid.masking = false;
  auto params = init_model<double>(masked, {});
  for (auto& br : params.branches) fill_uniform(br.head.weight, 6, br.stride, -0.2, 0.2);
  fill_uniform(params.branches[0].head.weight, 6, 0, -20, 20);
  TensorD img({3, 128, 128});
  fill_uniform(img, 6, 0, 0, 1);
  const auto a = model_forward(params, masked, img, 2), b = model_forward(params, open, img, 2);
  const LevelOutput<double>& la = a.levels[1];
  const LevelOutput<double>& lb = b.levels[1];
  REQUIRE(la.fused.size() == lb.fused.size());
  std::size_t on = 0;
  for (std::size_t i = 0; i < la.fused.size(); ++i)
    if (la.mask[i] == 1.0) {
      ++on;
      CHECK(la.fused[i] == lb.fused[i]);
    }
  CHECK(on > 0);
  CHECK(on < la.fused.size());
}

TEST_CASE("pyramid_backward") {
  const ModelConfig cfg = tiny_model();
  auto params = init_model<double>(cfg, {});
  TensorD img({3, 64, 64});
  fill_uniform(img, 7, 0, 0, 1);
  const auto pass = model_forward(params, cfg, img);

  SUBCASE("zero level gradients give zero parameter gradients") {
    std::vector<TensorD> gf, gr(4);
    for (const auto& l : pass.levels) gf.emplace_back(l.fused.shape());
    const auto g = pyramid_backward<double>(pass.features, params.branches, pass.levels, gf, gr, true);
    for (std::size_t l = 0; l < 4; ++l) {
      CHECK(test::max_abs(g.head_weights[l]) == 0.0);
      CHECK(test::max_abs(g.head_biases[l]) == 0.0);
      CHECK(test::max_abs(g.banks[l]) == 0.0);
    }
  }

  SUBCASE("an all-zero mask blocks every gradient into the fine heads") {
    auto levels = pass.levels;
    for (std::size_t l = 1; l < 4; ++l) levels[l].mask.fill(0);
    std::vector<TensorD> gf, gr(4);
    for (const auto& l : levels) {
      gf.emplace_back(l.fused.shape());
      fill_uniform(gf.back(), 8, gf.size());
    }
    const auto g = pyramid_backward<double>(pass.features, params.branches, levels, gf, gr);
    CHECK(test::max_abs(g.head_weights[0]) > 0.0);
    for (std::size_t l = 1; l < 4; ++l) {
      CHECK(test::max_abs(g.head_weights[l]) == 0.0);
      CHECK(test::max_abs(g.head_biases[l]) == 0.0);
    }
  }
}

TEST_CASE("pyramid configuration is validated") {
  PyramidConfig p;
  p.C = 2;
  CHECK_NOTHROW(p.validate());
  p.mask_pool = 8;
  CHECK_THROWS(p.validate());
  p.mask_pool = 9;
  p.strides = {32, 8};
  CHECK_THROWS(p.validate());
  p.strides = {32, 16};
  p.tau = 1.5;
  CHECK_THROWS(p.validate());
}

}  // TEST_SUITE
