#ifndef MISSBGM_TESTS_TEST_UTIL_HPP
#define MISSBGM_TESTS_TEST_UTIL_HPP

#include <cmath>
#include <vector>

#include "missbgm/normal.hpp"
#include "missbgm/tape.hpp"

namespace missbgm::test {

// Independent high-precision quantile oracle: bisection on the erfc-based
// CDF, no shared code path with normal_quantile's rational approximation.
inline double quantile_by_bisection(double u) {
  double lo = -40.0, hi = 40.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (normal_cdf(mid) < u) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

// Effective sample size via the initial positive sequence of
// autocovariances (truncate at the first nonpositive pair sum).
inline double effective_sample_size(const std::vector<double>& x) {
  const std::size_t n = x.size();
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(n);
  auto gamma = [&](std::size_t lag) {
    double s = 0.0;
    for (std::size_t i = 0; i + lag < n; ++i) {
      s += (x[i] - mean) * (x[i + lag] - mean);
    }
    return s / static_cast<double>(n);
  };
  const double g0 = gamma(0);
  if (g0 <= 0.0) return static_cast<double>(n);
  double rho_sum = 0.0;
  for (std::size_t lag = 1; lag + 1 < n; lag += 2) {
    const double pair = gamma(lag) + gamma(lag + 1);
    if (pair <= 0.0) break;
    rho_sum += pair / g0;
  }
  return static_cast<double>(n) / (1.0 + 2.0 * rho_sum);
}

inline double mean_of(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

inline double var_of(const std::vector<double>& x) {
  const double m = mean_of(x);
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

}  // namespace missbgm::test

#endif  // MISSBGM_TESTS_TEST_UTIL_HPP
