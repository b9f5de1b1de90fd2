#pragma once
// Central finite-difference gradient probes.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>

namespace oracle {

inline constexpr double kFdStep = 1e-6;

inline double central_difference(double& x, const std::function<double()>& f, double h = kFdStep) {
  const double saved = x;
  x = saved + h;
  const double up = f();
  x = saved - h;
  const double down = f();
  x = saved;
  return (up - down) / (2.0 * h);
}

// Relative error with an absolute floor so near-zero gradients compare on scale.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

}  // namespace oracle
