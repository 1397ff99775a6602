#include "shottrack/nn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace shottrack::nn {

GradCheckReport grad_check(const ScalarFunction& fn, std::span<const double> x, double tolerance,
                           std::span<const std::size_t> coords, double h, double floor) {
  GradCheckReport report;
  report.tolerance = tolerance;
  const auto analytic = fn.gradient(x);
  if (analytic.size() != x.size()) throw std::invalid_argument("gradient size mismatch");

  std::vector<std::size_t> all;
  if (coords.empty()) {
    all.resize(x.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    coords = all;
  }

  std::vector<double> probe(x.begin(), x.end());
  for (std::size_t i : coords) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = fn.value(probe);
    probe[i] = orig - h;
    const double fm = fn.value(probe);
    probe[i] = orig;
    const double numeric = (fp - fm) / (2.0 * h);
    const double a = analytic[i];
    const double denom = std::max({std::abs(a), std::abs(numeric), floor});
    const double rel = std::abs(a - numeric) / denom;
    ++report.checked;
    if (report.checked == 1 || rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = i;
      report.worst_analytic = a;
      report.worst_numeric = numeric;
    }
  }
  return report;
}

}  // namespace shottrack::nn
