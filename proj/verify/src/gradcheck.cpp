#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>

#include "lrr/losses.hpp"
#include "lrr/model.hpp"
#include "lrr/ops.hpp"
#include "lrr/reconstruction.hpp"
#include "lrr/refinement.hpp"
#include "lrr/rng.hpp"
#include "lrr_verify/suites.hpp"

namespace lrr::verify {

void fill_uniform(TensorD& t, std::uint64_t seed, std::uint64_t stream, double lo, double hi) {
  CounterRng rng(seed, stream);
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
}

void fill_uniform(TensorF& t, std::uint64_t seed, std::uint64_t stream, double lo, double hi) {
  CounterRng rng(seed, stream);
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(lo, hi));
}

std::string format_result(const CheckResult& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-4s %-46s err %.3e tol %.1e probes %zu", r.pass ? "PASS" : "FAIL",
                r.name.c_str(), r.max_error, r.tolerance, r.probes);
  std::string s = buf;
  if (!r.detail.empty()) s += "  (" + r.detail + ")";
  return s;
}

bool all_passed(const std::vector<CheckResult>& results) {
  return std::all_of(results.begin(), results.end(), [](const CheckResult& r) { return r.pass; });
}

CheckResult finite_difference(const std::string& name, const std::vector<TensorD*>& inputs,
                              const std::vector<TensorD>& analytic,
                              const std::function<double()>& loss, double step, double tolerance,
                              std::size_t max_probes, std::uint64_t seed) {
  CheckResult r;
  r.name = name;
  r.tolerance = tolerance;
  if (inputs.size() != analytic.size()) {
    r.detail = "input/gradient count mismatch";
    return r;
  }
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    TensorD& x = *inputs[t];
    const TensorD& g = analytic[t];
    if (g.shape() != x.shape()) {
      r.detail = "gradient " + std::to_string(t) + " has shape " + shape_str(g.shape()) + ", input " +
                 shape_str(x.shape());
      return r;
    }
    std::vector<std::size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), 0);
    if (idx.size() > max_probes) {
      CounterRng rng(seed, 100 + t);
      for (std::size_t i = 0; i < max_probes; ++i)
        std::swap(idx[i], idx[i + static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(idx.size() - i - 1)))]);
      idx.resize(max_probes);
    }
    for (std::size_t i : idx) {
      const double orig = x[i];
      x[i] = orig + step;
      const double lp = loss();
      x[i] = orig - step;
      const double lm = loss();
      x[i] = orig;
      const double num = (lp - lm) / (2 * step);
      const double a = g[i];
      const double err = std::abs(a - num) / std::max({1.0, std::abs(a), std::abs(num)});
      ++r.probes;
      if (!(err <= r.max_error)) {
        r.max_error = err;
        char buf[160];
        std::snprintf(buf, sizeof buf, "worst at tensor %zu index %zu: analytic %.9g numeric %.9g", t, i, a, num);
        r.detail = buf;
      }
    }
  }
  r.pass = r.max_error <= tolerance;
  if (r.pass) r.detail.clear();
  return r;
}

namespace {

double inner(const TensorD& a, const TensorD& b) { return dot(a, b); }

TensorD random_like(const Shape& shape, std::uint64_t seed, std::uint64_t stream, double lo = -1, double hi = 1) {
  TensorD t(shape);
  fill_uniform(t, seed, stream, lo, hi);
  return t;
}

CheckResult check_conv(const GradcheckOptions& o, const char* tag, std::size_t kh, std::size_t kw,
                       std::size_t stride, std::size_t pad, std::uint64_t stream) {
  ConvSpec spec{kh, kw, stride, pad, 3, 4};
  TensorD x = random_like({3, 7, 6}, o.seed, stream);
  TensorD w = random_like({4, 3, kh, kw}, o.seed, stream + 1);
  TensorD b = random_like({4}, o.seed, stream + 2);
  const TensorD y = conv2d(x, w, b, spec);
  const TensorD G = random_like(y.shape(), o.seed, stream + 3);
  const auto g = conv2d_backward(x, w, spec, G);
  return finite_difference(std::string("conv2d ") + tag, {&x, &w, &b}, {g.input, g.weights, g.bias},
                           [&] { return inner(conv2d(x, w, b, spec), G); }, o.step, o.tolerance,
                           o.max_probes, o.seed);
}

CheckResult check_reconstruct(const GradcheckOptions& o, std::size_t s, std::size_t K, std::size_t C,
                              std::uint64_t stream) {
  TensorD X = random_like({K * C, 4, 5}, o.seed, stream);
  BasisBank<double> bank = BasisBank<double>::zeros(s, K, C);
  fill_uniform(bank.basis, o.seed, stream + 1);
  const TensorD Y = reconstruct(X, bank);
  const TensorD G = random_like(Y.shape(), o.seed, stream + 2);
  const auto g = reconstruct_backward(X, bank, G, true);
  return finite_difference("reconstruct s=" + std::to_string(s) + " K=" + std::to_string(K) + " C=" +
                               std::to_string(C) + " (X, B)",
                           {&X, &bank.basis}, {g.coeffs, g.basis},
                           [&] { return inner(reconstruct(X, bank), G); }, o.step, o.tolerance,
                           o.max_probes, o.seed);
}

CheckResult check_maxpool(const GradcheckOptions& o, std::size_t window, std::size_t stride,
                          std::size_t pad, std::uint64_t stream) {
  // A shuffled ramp keeps every window free of near-ties.
  TensorD x({2, 8, 7});
  std::vector<std::size_t> perm(x.size());
  std::iota(perm.begin(), perm.end(), 0);
  CounterRng rng(o.seed, stream);
  for (std::size_t i = perm.size(); i > 1; --i)
    std::swap(perm[i - 1], perm[static_cast<std::size_t>(rng.uniform_int(0, std::int64_t(i - 1)))]);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.01 * double(perm[i]);
  const auto fwd = maxpool2d(x, window, stride, pad);
  const TensorD G = random_like(fwd.output.shape(), o.seed, stream + 1);
  const TensorD g = maxpool2d_backward(x.shape(), fwd.argmax, G);
  return finite_difference("maxpool2d w=" + std::to_string(window) + " s=" + std::to_string(stride) +
                               " p=" + std::to_string(pad),
                           {&x}, {g}, [&] { return inner(maxpool2d(x, window, stride, pad).output, G); },
                           o.step, o.tolerance, o.max_probes, o.seed);
}

CheckResult check_bilinear(const GradcheckOptions& o, std::size_t h, std::size_t w, std::size_t oh,
                           std::size_t ow, std::uint64_t stream) {
  TensorD x = random_like({2, h, w}, o.seed, stream);
  const TensorD G = random_like({2, oh, ow}, o.seed, stream + 1);
  const TensorD g = bilinear_resize_backward(x.shape(), G);
  char name[80];
  std::snprintf(name, sizeof name, "bilinear_resize %zux%zu->%zux%zu", h, w, oh, ow);
  return finite_difference(name, {&x}, {g}, [&] { return inner(bilinear_resize(x, oh, ow), G); }, o.step,
                           o.tolerance, o.max_probes, o.seed);
}

CheckResult check_softmax_xent(const GradcheckOptions& o, std::uint64_t stream) {
  TensorD s = random_like({4, 5, 6}, o.seed, stream, -3, 3);
  LabelMap truth(5, 6);
  CounterRng rng(o.seed, stream + 1);
  for (auto& l : truth.labels) l = rng.uniform() < 0.15 ? kVoidLabel : std::uint8_t(rng.uniform_int(0, 3));
  const auto lg = softmax_xent(s, truth);
  return finite_difference("softmax_xent (with void)", {&s}, {lg.grad},
                           [&] { return softmax_xent(s, truth).loss; }, o.step, o.tolerance,
                           o.max_probes, o.seed);
}

CheckResult check_logistic(const GradcheckOptions& o, std::uint64_t stream) {
  TensorD z = random_like({3, 4, 5}, o.seed, stream, -6, 6);
  TensorD t({3, 4, 5});
  CounterRng rng(o.seed, stream + 1);
  for (auto& v : t.values()) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
  BinaryMap ignore(4, 5);
  for (auto& v : ignore.labels) v = rng.uniform() < 0.2;
  const auto lg = logistic_loss(z, t, ignore);
  return finite_difference("logistic_loss (with ignore)", {&z}, {lg.grad},
                           [&] { return logistic_loss(z, t, ignore).loss; }, o.step, o.tolerance,
                           o.max_probes, o.seed);
}

CheckResult check_sigmoid(const GradcheckOptions& o, std::uint64_t stream) {
  TensorD x = random_like({2, 4, 4}, o.seed, stream, -4, 4);
  const TensorD G = random_like(x.shape(), o.seed, stream + 1);
  const TensorD g = sigmoid_backward(sigmoid(x), G);
  return finite_difference("sigmoid", {&x}, {g}, [&] { return inner(sigmoid(x), G); }, o.step,
                           o.tolerance, o.max_probes, o.seed);
}

CheckResult check_relu(const GradcheckOptions& o, std::uint64_t stream) {
  TensorD x = random_like({2, 4, 4}, o.seed, stream);
  for (auto& v : x.values())
    if (std::abs(v) < 0.05) v = v < 0 ? -0.05 : 0.05;
  const TensorD G = random_like(x.shape(), o.seed, stream + 1);
  const TensorD g = relu_backward(relu(x), G);
  return finite_difference("relu", {&x}, {g}, [&] { return inner(relu(x), G); }, o.step, o.tolerance,
                           o.max_probes, o.seed);
}

CheckResult check_fuse(const GradcheckOptions& o, std::uint64_t stream) {
  TensorD coarse = random_like({3, 4, 5}, o.seed, stream);
  TensorD fine = random_like({3, 8, 10}, o.seed, stream + 1);
  TensorD mask({3, 8, 10});
  CounterRng rng(o.seed, stream + 2);
  for (auto& v : mask.values()) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
  const TensorD G = random_like(mask.shape(), o.seed, stream + 3);
  const auto fg = fuse_level_backward(mask, G);
  const TensorD gc = bilinear_resize_backward(coarse.shape(), fg.coarse);
  return finite_difference("fuse_level (mask fixed)", {&coarse, &fine}, {gc, fg.fine},
                           [&] { return inner(fuse_level(bilinear_resize(coarse, 8, 10), fine, mask), G); },
                           o.step, o.tolerance, o.max_probes, o.seed);
}

CheckResult check_end_to_end(const GradcheckOptions& o) {
  ModelConfig cfg;
  cfg.backbone.widths = {4, 6, 8, 10};
  cfg.backbone.convs_per_stage = 1;
  cfg.backbone.seed = o.seed;
  cfg.pyramid.C = 3;
  cfg.pyramid.K = 3;
  cfg.pyramid.masking = true;
  ModelParams<double> params = init_model<double>(cfg, {});
  // Larger head weights so every branch contributes a visible gradient.
  std::uint64_t stream = 900;
  for (auto& br : params.branches) fill_uniform(br.head.weight, o.seed, stream++, -0.05, 0.05);

  TensorD image = random_like({3, 64, 64}, o.seed, 950, 0, 1);
  LabelMap truth(64, 64);
  for (std::size_t y = 0; y < 64; ++y)
    for (std::size_t x = 0; x < 64; ++x) {
      const double dy = double(y) - 30.5, dx = double(x) - 34.5;
      truth.at(y, x) = dx * dx + dy * dy < 300 ? 1 : (x > 52 ? 2 : 0);
    }
  const DETargets targets = build_de_targets(truth, 3, 4, cfg.de_factor);
  const LossWeights weights;

  auto run = [&](bool want_grads, ModelParams<double>* grads) {
    ForwardPass<double> pass = model_forward(params, cfg, image, 0, true, want_grads);
    AssembledLoss<double> loss = assemble_losses(pass.levels, truth, 4, pass.de_logits, &targets, weights);
    if (grads) *grads = model_backward(params, cfg, pass, loss, true);
    return loss.report.total;
  };
  ModelParams<double> grads;
  run(true, &grads);

  std::map<std::string, std::pair<TensorD*, const TensorD*>> by_name;
  params.for_each([&](const std::string& n, const std::string&, TensorD& t) { by_name[n].first = &t; });
  grads.for_each([&](const std::string& n, const std::string&, TensorD& t) { by_name[n].second = &t; });

  // Probe the entries with the largest analytic gradient so every probe
  // measures a real signal: five per branch head plus trunk and DE entries.
  const std::vector<std::pair<std::string, std::size_t>> plan{
      {"branch32.head.weight", 5}, {"branch16.head.weight", 5}, {"branch8.head.weight", 5},
      {"branch4.head.weight", 5},  {"backbone.conv1.weight", 1}, {"backbone.conv4.bias", 1},
      {"de.weight", 1}};
  const std::string name = "end-to-end pyramid (5 params per branch)";
  struct Probe {
    TensorD* param;
    std::size_t index;
  };
  std::vector<Probe> probes;
  std::vector<TensorD> values, analytic;
  for (const auto& [tensor, count] : plan) {
    const auto it = by_name.find(tensor);
    if (it == by_name.end()) return CheckResult{name, false, 0, 0, 0, "missing " + tensor};
    const TensorD& g = *it->second.second;
    std::vector<std::size_t> order(g.size());
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + std::ptrdiff_t(count), order.end(),
                      [&](std::size_t a, std::size_t b) { return std::abs(g[a]) > std::abs(g[b]); });
    for (std::size_t j = 0; j < count; ++j) {
      probes.push_back({it->second.first, order[j]});
      values.push_back(TensorD({1}, std::vector<double>{(*it->second.first)[order[j]]}));
      analytic.push_back(TensorD({1}, std::vector<double>{g[order[j]]}));
    }
  }
  std::vector<TensorD*> inputs;
  for (auto& v : values) inputs.push_back(&v);
  auto loss = [&] {
    for (std::size_t k = 0; k < probes.size(); ++k) (*probes[k].param)[probes[k].index] = values[k][0];
    return run(false, nullptr);
  };
  CheckResult r = finite_difference(name, inputs, analytic, loss, o.step, o.end_to_end_tolerance, 1, o.seed);
  loss();
  return r;
}

}  // namespace

std::vector<CheckResult> gradcheck_suite(const GradcheckOptions& o) {
  std::vector<CheckResult> out;
  out.push_back(check_conv(o, "3x3 s1 p1", 3, 3, 1, 1, 10));
  out.push_back(check_conv(o, "3x3 s2 p1", 3, 3, 2, 1, 20));
  out.push_back(check_conv(o, "5x5 s1 p2", 5, 5, 1, 2, 30));
  out.push_back(check_conv(o, "1x1 s1 p0", 1, 1, 1, 0, 40));
  out.push_back(check_conv(o, "2x3 s2 p0", 2, 3, 2, 0, 50));
  out.push_back(check_reconstruct(o, 1, 1, 1, 60));
  out.push_back(check_reconstruct(o, 2, 3, 2, 70));
  out.push_back(check_reconstruct(o, 4, 2, 3, 80));
  out.push_back(check_maxpool(o, 2, 2, 0, 90));
  out.push_back(check_maxpool(o, 3, 2, 1, 100));
  out.push_back(check_bilinear(o, 5, 4, 10, 8, 110));
  out.push_back(check_bilinear(o, 9, 7, 4, 3, 120));
  out.push_back(check_bilinear(o, 5, 5, 7, 3, 130));
  out.push_back(check_softmax_xent(o, 140));
  out.push_back(check_logistic(o, 150));
  out.push_back(check_sigmoid(o, 160));
  out.push_back(check_relu(o, 170));
  out.push_back(check_fuse(o, 180));
  out.push_back(check_end_to_end(o));
  return out;
}

}  // namespace lrr::verify
