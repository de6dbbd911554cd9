#ifndef MISSBGM_NORMAL_HPP
#define MISSBGM_NORMAL_HPP

// Standard normal special functions. Quantile accuracy contract:
// |normal_cdf(normal_quantile(u)) - u| < 1e-9 on u in [1e-12, 1 - 1e-12].

namespace missbgm {

double normal_pdf(double x);
double normal_cdf(double x);

// Inverse of normal_cdf. Throws std::domain_error unless u is in (0, 1).
double normal_quantile(double u);

// Moments of a standard normal truncated to the upper tail {e > kappa}.
double upper_truncated_normal_mean(double kappa);
double upper_truncated_normal_var(double kappa);

}  // namespace missbgm

#endif  // MISSBGM_NORMAL_HPP
