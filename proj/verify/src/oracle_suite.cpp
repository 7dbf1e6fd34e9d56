#include <algorithm>
#include <cmath>

#include "lrr/evaluation.hpp"
#include "lrr/losses.hpp"
#include "lrr/ops.hpp"
#include "lrr/reconstruction.hpp"
#include "lrr/rng.hpp"
#include "lrr_verify/oracles.hpp"
#include "lrr_verify/suites.hpp"

namespace lrr::verify {

namespace {

double max_abs_diff(const TensorD& a, const TensorD& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double max_abs(const TensorD& a) {
  double m = 0;
  for (double v : a.values()) m = std::max(m, std::abs(v));
  return m;
}

LabelMap random_binary(std::size_t h, std::size_t w, std::uint64_t seed, std::uint64_t stream, double p) {
  LabelMap m(h, w);
  CounterRng rng(seed, stream);
  for (auto& v : m.labels) v = rng.uniform() < p ? 1 : 0;
  return m;
}

bool same_doubles(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

CheckResult conv_oracle(std::uint64_t seed) {
  CheckResult r{"conv2d vs six-loop reference", true, 0, 1e-10, 0, {}};
  const ConvSpec specs[] = {{3, 3, 1, 1, 3, 5}, {3, 3, 2, 1, 3, 5}, {5, 5, 1, 2, 3, 5},
                            {1, 1, 1, 0, 3, 5}, {2, 3, 2, 0, 3, 5}, {3, 3, 1, 0, 3, 5}};
  std::uint64_t stream = 0;
  for (const ConvSpec& s : specs) {
    TensorD x({3, 9, 8}), w({5, 3, s.kernel_h, s.kernel_w}), b({5});
    fill_uniform(x, seed, stream++);
    fill_uniform(w, seed, stream++);
    fill_uniform(b, seed, stream++);
    const double e = max_abs_diff(conv2d(x, w, b, s), naive_conv2d(x, w, b, s));
    r.max_error = std::max(r.max_error, e);
    ++r.probes;
  }
  r.pass = r.max_error <= r.tolerance;
  return r;
}

CheckResult reconstruct_oracle(std::uint64_t seed) {
  CheckResult r{"reconstruct vs direct per-pixel sum", true, 0, 1e-6, 0, {}};
  std::uint64_t stream = 100;
  for (std::size_t s : {1, 2, 4})
    for (std::size_t K : {1, 3, 10})
      for (std::size_t C : {1, 2, 5}) {
        TensorD X({K * C, 5, 6});
        fill_uniform(X, seed, stream++);
        BasisBank<double> bank = BasisBank<double>::zeros(s, K, C);
        fill_uniform(bank.basis, seed, stream++);
        const TensorD ref = naive_reconstruct(X, bank.basis, s, K, C);
        const double e = max_abs_diff(reconstruct(X, bank), ref) / std::max(1e-300, max_abs(ref));
        r.max_error = std::max(r.max_error, e);
        ++r.probes;
      }
  r.pass = r.max_error <= r.tolerance;
  return r;
}

CheckResult pool_oracle(std::uint64_t seed) {
  CheckResult r{"maxpool2d / max_filter vs window scan", true, 0, 0, 0, {}};
  TensorD x({3, 11, 9});
  fill_uniform(x, seed, 300);
  const std::size_t cfgs[][3] = {{2, 2, 0}, {3, 2, 1}, {3, 1, 1}, {5, 3, 2}};
  for (const auto& c : cfgs) {
    r.max_error = std::max(r.max_error, max_abs_diff(maxpool2d(x, c[0], c[1], c[2]).output,
                                                     naive_maxpool(x, c[0], c[1], c[2])));
    ++r.probes;
  }
  for (std::size_t w : {1, 3, 5, 9}) {
    r.max_error = std::max(r.max_error, max_abs_diff(max_filter(x, w), naive_maxpool(x, w, 1, w / 2)));
    ++r.probes;
  }
  r.pass = r.max_error == 0;
  return r;
}

CheckResult bilinear_oracle(std::uint64_t seed) {
  CheckResult r{"bilinear_resize vs per-pixel formula", true, 0, 1e-12, 0, {}};
  TensorD x({2, 7, 5});
  fill_uniform(x, seed, 400);
  const std::size_t sizes[][2] = {{14, 10}, {3, 2}, {7, 5}, {9, 13}, {1, 1}, {28, 20}};
  for (const auto& s : sizes) {
    r.max_error = std::max(r.max_error, max_abs_diff(bilinear_resize(x, s[0], s[1]), naive_bilinear(x, s[0], s[1])));
    ++r.probes;
  }
  r.pass = r.max_error <= r.tolerance;
  return r;
}

CheckResult morphology_oracle(std::uint64_t seed) {
  CheckResult r{"disk dilate/erode vs brute-force Minkowski", true, 0, 0, 0, {}};
  std::uint64_t stream = 500;
  for (int rad : {0, 1, 3, 10})
    for (double p : {0.05, 0.5, 0.9}) {
      const LabelMap m = random_binary(32, 32, seed, stream++, p);
      std::size_t bad = 0;
      const LabelMap d = disk_dilate(m, rad), e = disk_erode(m, rad);
      const LabelMap bd = brute_dilate(m, rad), be = brute_erode(m, rad);
      for (std::size_t i = 0; i < m.size(); ++i) bad += (d.labels[i] != bd.labels[i]) + (e.labels[i] != be.labels[i]);
      r.max_error = std::max(r.max_error, double(bad));
      r.probes += 2;
    }
  r.pass = r.max_error == 0;
  if (!r.pass) r.detail = "mismatching pixels";
  return r;
}

CheckResult metrics_oracle(std::uint64_t seed) {
  CheckResult r{"confusion-matrix metrics vs set arithmetic", true, 0, 0, 0, {}};
  CounterRng rng(seed, 600);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t C = 2 + static_cast<std::size_t>(rng.uniform_int(0, 4));
    const std::size_t h = 1 + static_cast<std::size_t>(rng.uniform_int(0, 15));
    const std::size_t w = 1 + static_cast<std::size_t>(rng.uniform_int(0, 15));
    LabelMap pred(h, w), truth(h, w);
    for (std::size_t i = 0; i < h * w; ++i) {
      pred.labels[i] = std::uint8_t(rng.uniform_int(0, std::int64_t(C) - 1));
      truth.labels[i] = rng.uniform() < 0.1 ? kVoidLabel : std::uint8_t(rng.uniform_int(0, std::int64_t(C) - 1));
    }
    const SetMetrics ref = set_metrics(pred, truth, C);
    ConfusionMatrix cm(C);
    accumulate(cm, pred, truth);
    ++r.probes;
    if (cm.total() == 0) continue;
    const Metrics m = metrics(cm);
    bool ok = same_doubles(m.mean_iou, ref.mean_iou) && same_doubles(m.pixel_acc, ref.pixel_acc) &&
              same_doubles(m.mean_class_acc, ref.mean_class_acc);
    for (std::size_t c = 0; c < C; ++c)
      ok = ok && same_doubles(m.class_iou[c], ref.iou[c]) && same_doubles(m.class_acc[c], ref.acc[c]);
    if (!ok) {
      r.max_error += 1;
      if (r.detail.empty()) r.detail = "first mismatch at trial " + std::to_string(trial);
    }
  }
  r.pass = r.max_error == 0;
  return r;
}

CheckResult multiscale_oracle(std::uint64_t seed) {
  CheckResult r{"multiscale [1.0] vs single scale", true, 0, 0, 1, {}};
  TensorF image({3, 64, 96});
  fill_uniform(image, seed, 700, 0, 1);
  TensorF w({4, 3, 3, 3}), b({4});
  fill_uniform(w, seed, 701);
  fill_uniform(b, seed, 702);
  const ConvSpec spec{3, 3, 1, 1, 3, 4};
  const ScoreFn<float> fn = [&](const TensorF& im) { return conv2d(im, w, b, spec); };
  const double scales[] = {1.0};
  const TensorF multi = multiscale_predict<float>(fn, image, scales);
  const TensorF single = softmax_channels(fn(image));
  r.pass = multi == single;
  if (!r.pass) r.max_error = 1, r.detail = "probability maps differ";
  return r;
}

}  // namespace

std::vector<CheckResult> oracle_suite(std::uint64_t seed) {
  return {conv_oracle(seed),      reconstruct_oracle(seed), pool_oracle(seed),     bilinear_oracle(seed),
          morphology_oracle(seed), metrics_oracle(seed),    multiscale_oracle(seed)};
}

}  // namespace lrr::verify
