#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "csip/tensor.hpp"

namespace csip {

/// Central finite-difference check of a scalar-valued function of one tensor.
/// Returns max over coordinates of |analytic - central| / max(1, |analytic|).
/// f must be deterministic and return a one-element tensor.
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         double step = 1e-5);

/// Same check against one leaf parameter of a deterministic closed forward
/// pass: d forward() / d param, probed by perturbing the parameter buffer in
/// place. Used for paths whose raw inputs are not tensors (pixels, coords).
double finite_diff_check_param(const std::function<Tensor()>& forward, const Tensor& param,
                               double step = 1e-5);

/// One registered gradient check: runs at a given seed, returns the max
/// relative error reported by finite_diff_check.
struct GradCheckCase {
  std::string name;
  std::function<double(std::uint64_t seed)> run;
};

/// Every differentiable primitive, layer and loss in the project, each
/// wrapped as a scalar function of a random input.
const std::vector<GradCheckCase>& gradcheck_suite();

struct GradCheckRow {
  std::string name;
  double max_error = 0.0;
  bool passed = false;
};

/// Runs every case over `seeds` seeds against `tolerance`.
std::vector<GradCheckRow> run_gradcheck_suite(int seeds, double tolerance,
                                              std::uint64_t base_seed = 20240801);

}  // namespace csip
