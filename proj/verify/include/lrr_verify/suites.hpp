#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lrr/tensor.hpp"

namespace lrr::verify {

struct CheckResult {
  std::string name;
  bool pass = false;
  double max_error = 0;  // worst mixed abs/rel error (gradients) or abs error (oracles)
  double tolerance = 0;
  std::size_t probes = 0;
  std::string detail;
};

struct GradcheckOptions {
  double step = 1e-5;
  double tolerance = 1e-5;
  double end_to_end_tolerance = 1e-4;
  std::size_t max_probes = 64;  // per tensor; smaller tensors are checked exhaustively
  std::uint64_t seed = 7;
};

/// Central differences of L = <f(x), G> with random G against the analytic
/// backward pass. Error per probe: |a - n| / max(1, |a|, |n|).
CheckResult finite_difference(const std::string& name, const std::vector<TensorD*>& inputs,
                              const std::vector<TensorD>& analytic,
                              const std::function<double()>& loss, double step, double tolerance,
                              std::size_t max_probes, std::uint64_t seed);

/// Every differentiable kernel plus a five-parameter end-to-end probe of the
/// full model, all in double precision.
std::vector<CheckResult> gradcheck_suite(const GradcheckOptions& opts = {});

/// Optimised kernels against the straight-loop references.
std::vector<CheckResult> oracle_suite(std::uint64_t seed = 11);

std::string format_result(const CheckResult& r);
bool all_passed(const std::vector<CheckResult>& results);

/// Deterministic uniform fill in [lo, hi).
void fill_uniform(TensorD& t, std::uint64_t seed, std::uint64_t stream, double lo = -1, double hi = 1);
void fill_uniform(TensorF& t, std::uint64_t seed, std::uint64_t stream, double lo = -1, double hi = 1);

}  // namespace lrr::verify
