#include "csip/gradcheck.hpp"

#include <cmath>

namespace csip {

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         double step) {
  if (step <= 0.0) tensor_error("finite_diff_check: step must be positive");
  Tensor leaf = x.clone_data(true);
  Tensor y = f(leaf);
  if (y.numel() != 1) {
    tensor_error("finite_diff_check: function must return a single element, got " +
                 shape_str(y.shape));
  }
  y.backward();
  const std::vector<double> analytic = *leaf.grad;

  Tensor probe = x.clone_data(false);
  double worst = 0.0;
  NoGradGuard ng;
  for (std::size_t i = 0; i < probe.numel(); ++i) {
    const double orig = (*probe.data)[i];
    (*probe.data)[i] = orig + step;
    const double fp = f(probe).item();
    (*probe.data)[i] = orig - step;
    const double fm = f(probe).item();
    (*probe.data)[i] = orig;
    const double central = (fp - fm) / (2.0 * step);
    const double err = std::abs(analytic[i] - central) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

double finite_diff_check_param(const std::function<Tensor()>& forward, const Tensor& param,
                               double step) {
  if (step <= 0.0) tensor_error("finite_diff_check_param: step must be positive");
  if (!param.requires_grad || !param.grad) {
    tensor_error("finite_diff_check_param: parameter does not track gradients");
  }
  param.zero_grad();
  Tensor y = forward();
  if (y.numel() != 1) {
    tensor_error("finite_diff_check_param: forward must return a single element, got " +
                 shape_str(y.shape));
  }
  y.backward();
  const std::vector<double> analytic = *param.grad;

  double worst = 0.0;
  NoGradGuard ng;
  auto& buf = *param.data;
  for (std::size_t i = 0; i < buf.size(); ++i) {
    const double orig = buf[i];
    buf[i] = orig + step;
    const double fp = forward().item();
    buf[i] = orig - step;
    const double fm = forward().item();
    buf[i] = orig;
    const double central = (fp - fm) / (2.0 * step);
    const double err = std::abs(analytic[i] - central) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

std::vector<GradCheckRow> run_gradcheck_suite(int seeds, double tolerance,
                                              std::uint64_t base_seed) {
  std::vector<GradCheckRow> rows;
  for (const GradCheckCase& c : gradcheck_suite()) {
    GradCheckRow row;
    row.name = c.name;
    for (int s = 0; s < seeds; ++s) {
      row.max_error = std::max(row.max_error, c.run(base_seed + static_cast<std::uint64_t>(s)));
    }
    row.passed = row.max_error < tolerance;
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace csip
