#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "adapam/errors.hpp"

namespace adapam::stats {

inline double mean(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

/// Unbiased sample variance; 0 for fewer than two samples.
inline double variance(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  double m = mean(xs), s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return s / static_cast<double>(xs.size() - 1);
}

inline double stderr_of_mean(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  return std::sqrt(variance(xs) / static_cast<double>(xs.size()));
}

/// Linear-interpolated quantile (q in [0,1]) of the samples.
inline double quantile(std::vector<double> xs, double q) {
  if (xs.empty()) throw ArgumentError("quantile of empty sample");
  std::sort(xs.begin(), xs.end());
  double pos = q * static_cast<double>(xs.size() - 1);
  auto lo = static_cast<std::size_t>(std::floor(pos));
  auto hi = std::min(lo + 1, xs.size() - 1);
  double w = pos - static_cast<double>(lo);
  return xs[lo] * (1.0 - w) + xs[hi] * w;
}

/// One-sample one-sided t-test of H0: mean(d) <= 0 against H1: mean(d) > 0.
/// Returns the p-value. Degenerate zero-variance samples give 0 or 1.
inline double one_sided_p_greater(std::span<const double> d) {
  if (d.size() < 2) return 1.0;
  double m = mean(d), se = stderr_of_mean(d);
  if (se == 0.0) return m > 0.0 ? 0.0 : 1.0;
  boost::math::students_t dist(static_cast<double>(d.size() - 1));
  return boost::math::cdf(boost::math::complement(dist, m / se));
}

/// Two-sided 95% half-width of the mean's t confidence interval.
inline double ci95_halfwidth(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  boost::math::students_t dist(static_cast<double>(xs.size() - 1));
  return boost::math::quantile(boost::math::complement(dist, 0.025)) * stderr_of_mean(xs);
}

}  // namespace adapam::stats
