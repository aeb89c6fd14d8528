#include "twofe/special.hpp"

#include <cmath>
#include <limits>

#include "twofe/errors.hpp"

namespace twofe {

double norm_logcdf(double z) {
  if (z > -1.0) {
    // erfc is accurate here and log1p handles z >> 0.
    double p = 0.5 * std::erfc(-z * M_SQRT1_2);
    if (p < 1.0) return std::log(p);
    return -0.5 * std::erfc(z * M_SQRT1_2);  // log(1-q) ~ -q for tiny q
  }
  if (z > -25.0) {
    return std::log(0.5 * std::erfc(-z * M_SQRT1_2));
  }
  // Asymptotic expansion: Phi(z) = phi(z)/(-z) * (1 - 1/z^2 + 3/z^4 - ...)
  double z2 = z * z;
  double series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2) +
                  105.0 / (z2 * z2 * z2 * z2);
  return -0.5 * z2 - kLogSqrt2Pi - std::log(-z) + std::log(series);
}

double norm_pdf_over_cdf(double z) {
  // phi(z)/Phi(z); for z << 0 this is ~ -z, computed via log-space.
  return std::exp(-0.5 * z * z - kLogSqrt2Pi - norm_logcdf(z));
}

namespace {

// Acklam's rational approximation for the inverse normal CDF.
double norm_icdf_approx(double p) {
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  if (p < plow) {
    double q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  if (p > 1.0 - plow) {
    double q = std::sqrt(-2.0 * std::log(1.0 - p));
    return -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  double q = p - 0.5;
  double r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

}  // namespace

double norm_icdf(double p) {
  if (!(p > 0.0 && p < 1.0)) throw NumericOverflow("norm_icdf: p outside (0,1)");
  double x = norm_icdf_approx(p);
  // One Halley refinement against the stable log-CDF.
  double e = norm_cdf(x) - p;
  double u = e / norm_pdf(x);
  x -= u / (1.0 + 0.5 * x * u);
  return x;
}

double gamma_p(double a, double x) {
  if (x < 0.0 || a <= 0.0) throw NumericOverflow("gamma_p: bad arguments");
  if (x == 0.0) return 0.0;
  const double lga = std::lgamma(a);
  if (x < a + 1.0) {
    // Series representation.
    double ap = a;
    double sum = 1.0 / a;
    double del = sum;
    for (int n = 0; n < 1000; ++n) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::fabs(del) < std::fabs(sum) * 1e-16)
        return sum * std::exp(-x + a * std::log(x) - lga);
    }
    throw NumericalBreakdown("gamma_p: series did not converge");
  }
  // Continued fraction (modified Lentz).
  const double tiny = std::numeric_limits<double>::min() / 1e-30;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 1000; ++i) {
    double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    double delt = d * c;
    h *= delt;
    if (std::fabs(delt - 1.0) < 1e-16) {
      double q = std::exp(-x + a * std::log(x) - lga) * h;
      return 1.0 - q;
    }
  }
  throw NumericalBreakdown("gamma_p: continued fraction did not converge");
}

}  // namespace twofe
