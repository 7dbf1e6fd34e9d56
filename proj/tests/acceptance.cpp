#include <CLI11.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include "lrr/evaluation.hpp"
#include "lrr/rng.hpp"
#include "lrr/train.hpp"
#include "lrr_verify/oracles.hpp"
#include "lrr_verify/suites.hpp"

using namespace lrr;
using verify::fill_uniform;
using Clock = std::chrono::steady_clock;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double max_abs(const TensorD& t) {
  double m = 0;
  for (double v : t.values()) m = std::max(m, std::abs(v));
  return m;
}

bool subset(const BinaryMap& a, const BinaryMap& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a.labels[i] && !b.labels[i]) return false;
  return true;
}

BinaryMap random_mask(std::size_t h, std::size_t w, std::uint64_t seed, double p) {
  BinaryMap m(h, w);
  CounterRng rng(seed, 0);
  for (auto& v : m.labels) v = rng.uniform() < p ? 1 : 0;
  return m;
}

// ---- 1 ----------------------------------------------------------------------------

Verdict reconstruction_oracle() {
  const auto t0 = Clock::now();
  double worst = 0;
  std::size_t n = 0;
  for (std::size_t s : {1, 2, 4})
    for (std::size_t K : {1, 3, 10})
      for (std::size_t C : {1, 2, 5}) {
        BasisBank<double> bank = BasisBank<double>::zeros(s, K, C);
        fill_uniform(bank.basis, 1000 + n, 0);
        TensorD X({K * C, 3 + n % 3, 4 + n % 2});
        fill_uniform(X, 1000 + n, 1);
        const TensorD ref = verify::naive_reconstruct(X, bank.basis, s, K, C);
        const TensorD got = reconstruct(X, bank);
        if (got.shape() != ref.shape()) return {false, "shape mismatch"};
        double err = 0;
        for (std::size_t i = 0; i < ref.size(); ++i) err = std::max(err, std::abs(got[i] - ref[i]));
        worst = std::max(worst, err / std::max(1e-300, max_abs(ref)));
        ++n;
      }
  const double t = seconds_since(t0);
  return {worst <= 1e-6 && t < 5.0, fmt("%zu configurations, max rel err %.2e (tol 1e-6), %.2f s (limit 5 s)", n, worst, t)};
}

// ---- 2 ----------------------------------------------------------------------------

Verdict single_stamp() {
  std::size_t cases = 0, bad = 0;
  for (std::size_t s : {1, 2, 4}) {
    const std::size_t K = 3, C = 2, H = 4, W = 5;
    BasisBank<double> bank = BasisBank<double>::zeros(s, K, C);
    fill_uniform(bank.basis, 20 + s, 0);
    for (std::size_t p = 0; p < H; ++p)
      for (std::size_t q = 0; q < W; ++q) {
        const std::size_t k = (p + q) % K, c = (p * q) % C;
        TensorD X({K * C, H, W});
        X.at(c * K + k, p, q) = 1.0;
        const TensorD Y = reconstruct(X, bank);
        for (std::size_t cc = 0; cc < C; ++cc)
          for (std::size_t i = 0; i < s * H; ++i)
            for (std::size_t j = 0; j < s * W; ++j) {
              const double v = Y.at(cc, i, j);
              const bool inside = cc == c && i >= s * p && i < s * p + 2 * s && j >= s * q && j < s * q + 2 * s;
              if (inside ? v != bank(i - s * p, j - s * q, k, c) : (v != 0.0 || std::signbit(v))) ++bad;
            }
        ++cases;
      }
  }
  return {bad == 0, fmt("%zu one-hot placements, %zu mismatching pixels (exact, +0 outside the stamp)", cases, bad)};
}

// ---- 3 ----------------------------------------------------------------------------

Verdict tent_partition() {
  double interior = 0, border = 0;
  for (std::size_t s : {1, 2, 4, 8}) {
    const BasisBank<double> bank = tent_bank<double>(s, 2);
    const TensorD Y = reconstruct(TensorD({2, 5, 6}, 0.75), bank);
    auto partial = [&](std::size_t i) { return i < s ? (double(i) + 0.5) / double(s) : 1.0; };
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t i = 0; i < 5 * s; ++i)
        for (std::size_t j = 0; j < 6 * s; ++j) {
          const double err = std::abs(Y.at(c, i, j) - 0.75 * partial(i) * partial(j));
          (i >= s && j >= s ? interior : border) = std::max(i >= s && j >= s ? interior : border, err);
        }
  }
  return {interior <= 1e-6 && border <= 1e-6,
          fmt("s in {1,2,4,8}: interior deviation %.2e, border-band deviation from (m+1/2)/s sums %.2e (tol 1e-6)",
              interior, border)};
}

// ---- 4 ----------------------------------------------------------------------------

Verdict gradient_suite() {
  const auto t0 = Clock::now();
  const auto results = verify::gradcheck_suite();
  const double t = seconds_since(t0);
  const std::vector<std::string> required = {"conv2d",  "reconstruct", "maxpool2d", "bilinear_resize", "softmax_xent",
                                             "logistic_loss", "sigmoid", "relu", "fuse_level", "end-to-end"};
  std::string missing;
  for (const auto& r : required) {
    bool found = false;
    for (const auto& c : results) found = found || c.name.rfind(r, 0) == 0;
    if (!found) missing += " " + r;
  }
  std::size_t failed = 0;
  double worst = 0;
  for (const auto& c : results) {
    failed += !c.pass;
    worst = std::max(worst, c.max_error / c.tolerance);
  }
  std::string d = fmt("%zu checks, %zu failed, worst error/tolerance %.2e, %.1f s (limit 60 s)", results.size(), failed,
                      worst, t);
  if (!missing.empty()) d += "; missing:" + missing;
  return {failed == 0 && missing.empty() && t < 60.0, d};
}

// ---- 5 ----------------------------------------------------------------------------

Verdict adjoint_identity() {
  double worst = 0;
  for (std::uint64_t t = 0; t < 20; ++t) {
    const std::size_t s = 1 + t % 4, K = 1 + t % 5, C = 1 + (t / 5) % 3;
    BasisBank<double> b = BasisBank<double>::zeros(s, K, C);
    fill_uniform(b.basis, 500 + t, 0);
    TensorD x({K * C, 2 + t % 4, 3 + t % 3});
    fill_uniform(x, 500 + t, 1);
    const TensorD y = reconstruct(x, b);
    TensorD g(y.shape());
    fill_uniform(g, 500 + t, 2);
    const auto grads = reconstruct_backward(x, b, g);
    const double lhs = dot(y, g);
    const double norm = std::sqrt(dot(y, y) * dot(g, g));
    worst = std::max(worst, std::abs(lhs - dot(x, grads.coeffs)) / norm);
    worst = std::max(worst, std::abs(lhs - dot(b.basis, grads.basis)) / norm);
  }
  return {worst <= 1e-6, fmt("20 instances, max |<Y,G> - <X,dX>|/(|Y||G|) = %.2e (also B path; tol 1e-6)", worst)};
}

// ---- 6 ----------------------------------------------------------------------------

Verdict mask_geometry() {
  const std::size_t H = 12, W = 40, c = 19;
  TensorD s({2, H, W});
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) s.at(x <= c ? 0 : 1, y, x) = 3.0;
  const TensorD m = boundary_mask(s, 9, 0.0);
  std::size_t wrong = 0, width = 0;
  for (std::size_t k = 0; k < 2; ++k)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) wrong += m.at(k, y, x) != ((x + 3 >= c && x <= c + 4) ? 1.0 : 0.0);
  for (std::size_t x = 0; x < W; ++x) width += m.at(0, 0, x) == 1.0;

  TensorD uniform({3, 10, 10});
  for (std::size_t i = 0; i < 100; ++i) uniform[100 + i] = 5.0;
  std::size_t uniform_on = 0;
  const TensorD uniform_mask = boundary_mask(uniform, 9, 0.0);
  for (double v : uniform_mask.values()) uniform_on += v != 0.0;

  TensorD rnd({3, 10, 10});
  fill_uniform(rnd, 6, 0, -4, 4);
  std::size_t tau_off = 0;
  const TensorD tau_mask = boundary_mask(rnd, 9, 1.0);
  for (double v : tau_mask.values()) tau_off += v != 1.0;

  return {wrong == 0 && width == 8 && uniform_on == 0 && tau_off == 0,
          fmt("step: %zu wrong pixels, band width %zu (want 8); uniform map: %zu set; tau=1: %zu unset", wrong, width,
              uniform_on, tau_off)};
}

// ---- 7 ----------------------------------------------------------------------------

Verdict pca_properties() {
  const auto train = generate_shapes(40, 128, 5, 71);
  const auto held = generate_shapes(10, 128, 5, 72);
  double ortho = 0;
  bool monotone = true;
  std::string mse_trace;
  for (std::uint8_t cls = 0; cls < 5; ++cls) {
    const PatchSet ps = extract_class_patches(train, cls, 800, 32, 0.02, 3 + cls);
    const PatchSet test = extract_class_patches(held, cls, 100, 32, 0.02, 30 + cls);
    const PcaBasis b = fit_basis_pca(ps, 10);
    for (std::size_t i = 0; i < b.components.size(); ++i)
      for (std::size_t j = 0; j < b.components.size(); ++j)
        ortho = std::max(ortho, std::abs(dot(b.components[i], b.components[j]) - (i == j ? 1.0 : 0.0)));
    double prev = INFINITY;
    for (std::size_t K = 1; K <= b.components.size(); ++K) {
      double mse = 0;
      for (const auto& p : test.patches) {
        std::vector<double> r(p.values().begin(), p.values().end());
        for (std::size_t k = 0; k < K; ++k) {
          const TensorD& u = b.components[k];
          double coef = 0;
          for (std::size_t i = 0; i < u.size(); ++i) coef += u[i] * r[i];
          for (std::size_t i = 0; i < u.size(); ++i) r[i] -= coef * u[i];
        }
        for (double v : r) mse += v * v;
      }
      mse /= double(test.patches.size() * 1024);
      if (mse > prev + 1e-12) monotone = false;
      prev = mse;
      if (cls == 1 && (K == 1 || K == 10)) mse_trace += fmt(" K=%zu:%.4f", K, mse);
    }
  }
  PatchSet rank1;
  rank1.patch = 32;
  TensorF base({32, 32});
  fill_uniform(base, 9, 0, 0, 1);
  for (int i = 0; i < 50; ++i) {
    TensorF p = base;
    for (float& v : p.values()) v *= 0.5f + 0.01f * float(i);
    rank1.patches.push_back(p);
  }
  const PcaBasis r1 = fit_basis_pca(rank1, 3);
  const double ratio = r1.singular_values.size() > 1 ? r1.singular_values[1] / r1.singular_values[0] : 0.0;
  return {ortho <= 1e-6 && monotone && ratio <= 1e-6,
          fmt("orthonormality err %.2e (tol 1e-6), held-out MSE nonincreasing: %s (class 1%s), rank-1 s2/s1 %.2e "
              "(tol 1e-6)",
              ortho, monotone ? "yes" : "no", mse_trace.c_str(), ratio)};
}

// ---- 8 ----------------------------------------------------------------------------

Verdict morphology(int de_radius) {
  std::size_t mism = 0, containment = 0, nesting = 0, masks = 0;
  for (int r : {1, 3, 10})
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const BinaryMap m = random_mask(32, 32, 900 + 10 * r + seed, 0.05 + 0.2 * double(seed));
      mism += disk_dilate(m, r) != verify::brute_dilate(m, r);
      mism += disk_erode(m, r) != verify::brute_erode(m, r);
      BinaryMap padded(32 + 4 * r, 32 + 4 * r);
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) padded.at(y + 2 * r, x + 2 * r) = m.at(y, x);
      containment += !subset(padded, disk_erode(disk_dilate(padded, r), r));
      containment += !subset(disk_dilate(disk_erode(m, r), r), m);
      ++masks;
    }
  for (const Sample& s : generate_shapes(50, 128, 5, 88)) {
    const DETargets t = build_de_targets(s.truth, 5, de_radius, 8);
    for (std::uint8_t c = 0; c < 5; ++c) {
      const BinaryMap m = class_indicator(s.truth, c);
      nesting += !subset(disk_erode(m, de_radius), m) || !subset(m, disk_dilate(m, de_radius));
      const BinaryMap md = downsample_truth(m, 8);
      nesting += !subset(t.eroded[c], md) || !subset(md, t.dilated[c]);
    }
  }
  return {mism == 0 && containment == 0 && nesting == 0,
          fmt("%zu random 32x32 masks x r in {1,3,10}: %zu brute-force mismatches, %zu closing/opening violations; "
              "50 samples (r=%d): %zu nesting violations",
              masks, mism, containment, de_radius, nesting)};
}

// ---- 9 ----------------------------------------------------------------------------

struct ToyOptions {
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::size_t stage1 = 1200, stage2 = 500;
  double budget = 600.0;
};

struct EvalResult {
  double miou32 = 0, miou4 = 0, band32 = 0, band4 = 0;
};

EvalResult evaluate_model(const Trainer<float>& tr, const std::vector<Sample>& val, std::size_t classes) {
  std::vector<LabelMap> coarse, fine, truths;
  ConfusionMatrix c0(classes), cf(classes);
  for (const auto& s : val) {
    auto levels = predict_level_labels(tr.params(), tr.config().model_config(), s.image);
    accumulate(c0, levels.front(), s.truth);
    accumulate(cf, levels.back(), s.truth);
    coarse.push_back(std::move(levels.front()));
    fine.push_back(std::move(levels.back()));
    truths.push_back(s.truth);
  }
  const int r[] = {5};
  EvalResult e;
  e.miou32 = metrics(c0).mean_iou;
  e.miou4 = metrics(cf).mean_iou;
  e.band32 = trimap_curve(coarse, truths, r, classes)[0].mean_iou;
  e.band4 = trimap_curve(fine, truths, r, classes)[0].mean_iou;
  return e;
}

Verdict toy_end_to_end(const ToyOptions& opt, std::ostream& log) {
  const auto t0 = Clock::now();
  double ratio_sum = 0, miou4_sum = 0, miou32_sum = 0, band4_sum = 0, band32_sum = 0;
  std::size_t band_wins = 0;
  bool miou_guard = true;
  for (std::uint64_t seed : opt.seeds) {
    const auto ts = Clock::now();
    const auto train = generate_shapes(200, 128, 5, seed);
    ShapesOptions vo;
    vo.n = 50;
    vo.size = 128;
    vo.num_classes = 5;
    vo.seed = seed;
    vo.first_index = 1000000;
    const auto val = generate_shapes(vo);

    TrainConfig cfg;
    cfg.seed = seed;
    cfg.classes = 5;
    cfg.stages = {{{32}, opt.stage1, 1e-2, false}, {{32, 16, 8, 4}, opt.stage2, 1e-3, true}};
    cfg.pca_patches = 2000;
    const auto init = Trainer<float>::initial_params(cfg, train);
    Trainer<float> masked(cfg, train, init);

    double first = 0, tail = 0;
    std::size_t tail_n = 0;
    masked.run(opt.stage1, [&](const IterationLog& l) {
      if (l.iteration == 1) first = l.report.branch[0];
      if (l.iteration + 20 > opt.stage1) {
        tail += l.report.branch[0];
        ++tail_n;
      }
    });
    const double ratio = tail / double(tail_n) / first;

    TrainConfig open_cfg = cfg;
    open_cfg.masking = false;
    Trainer<float> unmasked(open_cfg, train, init);
    unmasked.restore(masked.checkpoint(), false);

    masked.run(cfg.total_iterations());
    unmasked.run(cfg.total_iterations());
    const EvalResult m = evaluate_model(masked, val, 5), u = evaluate_model(unmasked, val, 5);

    ratio_sum += ratio;
    miou4_sum += m.miou4;
    miou32_sum += m.miou32;
    band4_sum += m.band4;
    band32_sum += m.band32;
    band_wins += m.band4 > u.band4;
    miou_guard = miou_guard && m.miou4 >= u.miou4 - 0.005;
    log << fmt("    seed %llu: stage-1 loss ratio %.3f | masked mIoU 32x %.4f 4x %.4f, band(r=5) 32x %.4f 4x %.4f | "
               "unmasked mIoU 4x %.4f band 4x %.4f | %.0f s\n",
               static_cast<unsigned long long>(seed), ratio, m.miou32, m.miou4, m.band32, m.band4, u.miou4, u.band4,
               seconds_since(ts));
  }
  const double n = double(opt.seeds.size());
  const double t = seconds_since(t0);
  const bool a = ratio_sum / n <= 0.4;
  const bool b = miou4_sum / n > miou32_sum / n;
  const bool c = band4_sum / n > band32_sum / n;
  const bool d = band_wins >= 2 && miou_guard;
  const bool budget = t <= opt.budget;
  return {a && b && c && d && budget,
          fmt("(a) loss ratio %.3f <= 0.4 %s; (b) mIoU 4x %.4f > 32x %.4f %s; (c) band 4x %.4f > 32x %.4f %s; "
              "(d) masked band wins %zu/%zu (need 2), mIoU within 0.005 in every seed: %s -> %s; runtime %.0f s "
              "(limit %.0f) %s",
              ratio_sum / n, a ? "ok" : "FAIL", miou4_sum / n, miou32_sum / n, b ? "ok" : "FAIL", band4_sum / n,
              band32_sum / n, c ? "ok" : "FAIL", band_wins, opt.seeds.size(), miou_guard ? "yes" : "no",
              d ? "ok" : "FAIL", t, opt.budget, budget ? "ok" : "FAIL")};
}

// ---- 10 ---------------------------------------------------------------------------

std::string checkpoint_bytes(const Checkpoint& ck) {
  std::ostringstream os;
  write_checkpoint(os, ck);
  return os.str();
}

Verdict determinism_and_formats() {
  const auto data = generate_shapes(8, 64, 5, 41);
  TrainConfig cfg;
  cfg.classes = 5;
  cfg.seed = 9;
  cfg.batch = 2;
  cfg.stages = {{{32}, 4, 1e-2, false}, {{32, 16, 8, 4}, 4, 1e-3, true}};
  cfg.aug = {64, 96, 64, 0};
  cfg.widths = {4, 6, 8, 10};
  cfg.convs_per_stage = 1;
  cfg.basis_count = 4;
  cfg.pca_patches = 60;
  cfg.de_radius = 3;

  auto run = [&](std::uint64_t until) {
    Trainer<float> t(cfg, data, Trainer<float>::initial_params(cfg, data));
    t.run(until);
    return t;
  };
  const Trainer<float> a = run(8), b = run(8);
  const bool same = checkpoint_bytes(a.checkpoint()) == checkpoint_bytes(b.checkpoint());

  const Trainer<float> half = run(3);
  std::stringstream ss;
  write_checkpoint(ss, half.checkpoint());
  Trainer<float> resumed(cfg, data, init_model<float>(cfg.model_config(), {}));
  resumed.restore(read_checkpoint(ss));
  resumed.run(8);
  const bool resume = checkpoint_bytes(resumed.checkpoint()) == checkpoint_bytes(a.checkpoint());

  TensorF t({2, 3, 5});
  fill_uniform(t, 4, 0, -1e6, 1e6);
  t[0] = -0.0f;
  t[1] = std::numeric_limits<float>::denorm_min();
  std::stringstream ts;
  write_lrrt(ts, t);
  const TensorF tb = read_lrrt(ts);
  bool lrrt = tb.shape() == t.shape();
  for (std::size_t i = 0; lrrt && i < t.size(); ++i) lrrt = std::memcmp(&t[i], &tb[i], sizeof(float)) == 0;

  std::stringstream cs;
  write_checkpoint(cs, a.checkpoint());
  const bool lrrc = read_checkpoint(cs) == a.checkpoint();

  const std::string dir = (std::filesystem::temp_directory_path() / "lrr_acceptance_formats").string();
  std::filesystem::create_directories(dir);
  TensorF img({3, 7, 9});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = float((i * 37) % 256) / 255.0f;
  write_image_ppm(dir + "/a.ppm", img);
  const TensorF img2 = read_image_ppm(dir + "/a.ppm");
  write_image_ppm(dir + "/b.ppm", img2);
  const bool ppm = img2 == img && read_image_ppm(dir + "/b.ppm") == img2;
  LabelMap mask(5, 6);
  for (std::size_t i = 0; i < mask.size(); ++i) mask.labels[i] = std::uint8_t(i % 5);
  mask.labels[4] = kVoidLabel;
  write_mask_pgm(dir + "/m.pgm", mask);
  const bool pgm = read_mask_pgm(dir + "/m.pgm") == mask;
  std::filesystem::remove_all(dir);

  const bool ok = same && resume && lrrt && lrrc && ppm && pgm;
  return {ok, fmt("repeat run bit-identical: %s; resume from iteration 3 bit-identical: %s; round trips LRRT %s, "
                  "LRRC %s, PPM %s, PGM %s",
                  same ? "yes" : "no", resume ? "yes" : "no", lrrt ? "ok" : "FAIL", lrrc ? "ok" : "FAIL",
                  ppm ? "ok" : "FAIL", pgm ? "ok" : "FAIL")};
}

// ---- 11 ---------------------------------------------------------------------------

Verdict metric_oracle() {
  std::size_t mism = 0;
  for (std::uint64_t t = 0; t < 100; ++t) {
    CounterRng rng(1100 + t, 0);
    const std::size_t h = 1 + std::size_t(rng.uniform_int(0, 15)), w = 1 + std::size_t(rng.uniform_int(0, 15));
    const std::size_t C = 2 + std::size_t(rng.uniform_int(0, 5));
    LabelMap pred(h, w), truth(h, w);
    for (std::size_t i = 0; i < h * w; ++i) {
      pred.labels[i] = std::uint8_t(rng.uniform_int(0, std::int64_t(C) - 1));
      truth.labels[i] = rng.uniform() < 0.05 ? kVoidLabel : std::uint8_t(rng.uniform_int(0, std::int64_t(C) - 1));
    }
    truth.labels[0] = 0;
    ConfusionMatrix cm(C);
    accumulate(cm, pred, truth);
    const Metrics m = metrics(cm);
    const auto o = verify::set_metrics(pred, truth, C);
    auto same = [](double x, double y) { return (std::isnan(x) && std::isnan(y)) || x == y; };
    bool ok = same(m.mean_iou, o.mean_iou) && same(m.pixel_acc, o.pixel_acc) &&
              same(m.mean_class_acc, o.mean_class_acc);
    for (std::size_t c = 0; c < C; ++c) ok = ok && same(m.class_iou[c], o.iou[c]) && same(m.class_acc[c], o.acc[c]);
    mism += !ok;
  }

  ModelConfig mc;
  mc.backbone.widths = {4, 6, 8, 10};
  mc.backbone.convs_per_stage = 1;
  mc.pyramid.C = 5;
  mc.pyramid.K = 4;
  const auto params = init_model<float>(mc, {});
  TensorF image({3, 96, 64});
  fill_uniform(image, 12, 0, 0, 1);
  const ScoreFn<float> fn = [&](const TensorF& im) { return predict_scores(params, mc, im); };
  const double one[] = {1.0};
  const TensorF fused = multiscale_predict(fn, image, one);
  const TensorF single = softmax_channels(predict_scores(params, mc, image));
  bool bitwise = fused.shape() == single.shape();
  for (std::size_t i = 0; bitwise && i < fused.size(); ++i)
    bitwise = std::memcmp(&fused[i], &single[i], sizeof(float)) == 0;
  return {mism == 0 && bitwise, fmt("100 random map pairs: %zu differ from set arithmetic (exact); multiscale [1.0] "
                                    "bit-identical to single scale: %s",
                                    mism, bitwise ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria for the lrr library"};
  std::vector<int> known;
  std::vector<int> only;
  ToyOptions toy;
  bool skip_toy = false;
  app.add_option("--known-failure", known, "Criteria reported but excluded from the exit status");
  app.add_option("--only", only, "Run only these criteria");
  app.add_flag("--skip-toy", skip_toy, "Skip the end-to-end training criterion");
  app.add_option("--toy-seeds", toy.seeds, "Seeds for the end-to-end criterion");
  app.add_option("--toy-stage1", toy.stage1, "Stage-1 iterations");
  app.add_option("--toy-stage2", toy.stage2, "Stage-2 iterations");
  CLI11_PARSE(app, argc, argv);

  const TrainConfig defaults;
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"reconstruction oracle equivalence", reconstruction_oracle},
      {"single-coefficient stamp", single_stamp},
      {"tent partition of unity", tent_partition},
      {"gradient suite", gradient_suite},
      {"reconstruct adjoint identity", adjoint_identity},
      {"mask geometry", mask_geometry},
      {"PCA properties", pca_properties},
      {"morphology", [&] { return morphology(defaults.de_radius); }},
      {"toy end-to-end trends", [&] { return toy_end_to_end(toy, std::cout); }},
      {"determinism and formats", determinism_and_formats},
      {"metric oracle", metric_oracle},
  };

  std::size_t hard_failures = 0, known_failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = int(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    if (id == 9 && skip_toy) {
      std::cout << fmt("criterion %2d  SKIP  %s\n", id, criteria[i].first.c_str());
      continue;
    }
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const bool is_known = std::find(known.begin(), known.end(), id) != known.end();
    std::string tag = v.pass ? "PASS" : "FAIL";
    if (!v.pass && is_known) tag = "FAIL (known)";
    std::cout << fmt("criterion %2d  %-12s %s: %s [%.1f s]\n", id, tag.c_str(), criteria[i].first.c_str(),
                     v.detail.c_str(), seconds_since(t0))
              << std::flush;
    if (!v.pass) ++(is_known ? known_failures : hard_failures);
  }
  std::cout << fmt("summary: %zu unexpected failure(s), %zu known failure(s)\n", hard_failures, known_failures);
  return hard_failures == 0 ? 0 : 1;
}
