#pragma once

#include <algorithm>
#include <cmath>
#include <functional>

#include "adapam/ndmath.hpp"
#include "adapam/rng.hpp"

namespace adapam::testing {

inline constexpr double kFdStep = 1e-6;
inline constexpr double kFdTolerance = 1e-4;

/// |a - n| / max(|a|, |n|, floor). The floor keeps near-zero partials from
/// amplifying cancellation noise of the difference quotient.
inline double rel_error(double analytic, double numeric, double floor = 1e-5) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Central difference of f with respect to x, restoring x afterwards.
inline double central_difference(double& x, const std::function<double()>& f, double h = kFdStep) {
  const double saved = x;
  x = saved + h;
  const double up = f();
  x = saved - h;
  const double down = f();
  x = saved;
  return (up - down) / (2.0 * h);
}

/// A random entry of a parameter set: (entry index, flat index).
inline std::pair<std::size_t, std::size_t> random_coordinate(const ParameterSet& p, Rng& rng) {
  std::size_t total = p.scalar_count();
  std::size_t k = rng.index(total);
  for (std::size_t e = 0; e < p.size(); ++e) {
    if (k < p.at(e).size()) return {e, k};
    k -= p.at(e).size();
  }
  return {0, 0};
}

inline Vec random_vec(Rng& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
  Vec v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

inline MlpSpec small_spec(std::size_t in, std::size_t out, Activation act = Activation::tanh) {
  return MlpSpec{{in, 8, out}, act};
}

}  // namespace adapam::testing
