#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace panelcf {

// Linear-interpolation quantile (R type 7) on an ascending-sorted sample.
inline double quantile_sorted(const std::vector<double>& x, double q) {
  const std::size_t n = x.size();
  if (n == 0) return std::nan("");
  if (n == 1) return x[0];
  const double h = q * static_cast<double>(n - 1);
  const std::size_t lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, n - 1);
  const double w = h - static_cast<double>(lo);
  return (1.0 - w) * x[lo] + w * x[hi];
}

struct Moments {
  double mean = 0.0;
  double m2 = 0.0;  // population central moments
  double m3 = 0.0;
  double m4 = 0.0;
};

inline Moments central_moments(const std::vector<double>& x) {
  Moments m;
  const double n = static_cast<double>(x.size());
  if (x.empty()) return m;
  for (const double v : x) m.mean += v;
  m.mean /= n;
  for (const double v : x) {
    const double d = v - m.mean;
    const double d2 = d * d;
    m.m2 += d2;
    m.m3 += d2 * d;
    m.m4 += d2 * d2;
  }
  m.m2 /= n;
  m.m3 /= n;
  m.m4 /= n;
  return m;
}

}  // namespace panelcf
