#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace shottrack::nn {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
  double tolerance = 0.0;
  bool passed() const { return max_rel_error < tolerance; }
};

// value(x) returns f(x); gradient(x) returns the analytic df/dx.
struct ScalarFunction {
  std::function<double(std::span<const double>)> value;
  std::function<std::vector<double>(std::span<const double>)> gradient;
};

// Compares the analytic gradient with central differences
//   (f(x + h e_i) - f(x - h e_i)) / 2h
// at the given coordinates (all of them when `coords` is empty).
// Relative error is |a - n| / max(|a|, |n|, floor).
GradCheckReport grad_check(const ScalarFunction& fn, std::span<const double> x, double tolerance,
                           std::span<const std::size_t> coords = {}, double h = 1e-4,
                           double floor = 1e-6);

}  // namespace shottrack::nn
