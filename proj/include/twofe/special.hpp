#pragma once

#include <cmath>
#include <cstdint>

namespace twofe {

inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;

// Standard normal density.
inline double norm_pdf(double z) { return std::exp(-0.5 * z * z - kLogSqrt2Pi); }

// log Phi(z), stable over the whole real line (asymptotic Mills-ratio
// expansion in the far left tail where erfc underflows).
double norm_logcdf(double z);

inline double norm_cdf(double z) { return std::exp(norm_logcdf(z)); }

// Inverse standard normal CDF (AS241-quality, refined by one Halley step).
double norm_icdf(double p);

// Mills-type ratio phi(z)/Phi(z), stable for z << 0.
double norm_pdf_over_cdf(double z);

// Regularized lower incomplete gamma P(a, x), relative accuracy ~1e-14.
double gamma_p(double a, double x);

// Chi-square CDF with (possibly non-integer) dof.
inline double chi2_cdf(double x, double dof) {
  if (x <= 0.0) return 0.0;
  return gamma_p(0.5 * dof, 0.5 * x);
}

// SplitMix64 mix; used to derive independent per-replication RNG streams.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace twofe
