#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

namespace bevtrack::testing {

using ScalarFunction = std::function<double(const std::vector<double>&)>;

// Central difference of f at x along coordinate i.
inline double central_difference(const ScalarFunction& f, std::vector<double> x, std::size_t i, double h) {
  const double x0 = x[i];
  x[i] = x0 + h;
  const double plus = f(x);
  x[i] = x0 - h;
  const double minus = f(x);
  return (plus - minus) / (2.0 * h);
}

struct GradientCheck {
  double worst_relative = 0.0;
  // Coordinates whose discrepancy is below the rounding noise of the
  // difference quotient and so cannot be judged relatively.
  std::size_t roundoff_limited = 0;
  std::size_t coordinates = 0;
};

// Central differences at step h against `analytic`, one coordinate at a time.
inline GradientCheck check_gradient(const ScalarFunction& f, std::vector<double> x,
                                    const std::vector<double>& analytic, double h) {
  constexpr double eps = std::numeric_limits<double>::epsilon();
  GradientCheck out;
  out.coordinates = x.size();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double x0 = x[i];
    x[i] = x0 + h;
    const double plus = f(x);
    x[i] = x0 - h;
    const double minus = f(x);
    x[i] = x0;
    const double numeric = (plus - minus) / (2.0 * h);
    const double diff = std::abs(analytic[i] - numeric);
    const double noise = 8.0 * eps * std::max(std::abs(plus), std::abs(minus)) / h;
    const double scale = std::max(std::abs(analytic[i]), std::abs(numeric));
    if (diff <= noise && diff > 1e-6 * scale) {
      ++out.roundoff_limited;
      continue;
    }
    out.worst_relative = std::max(out.worst_relative, scale > 0.0 ? diff / scale : 0.0);
  }
  return out;
}

}  // namespace bevtrack::testing
