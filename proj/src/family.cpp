#include "twofe/family.hpp"

#include <algorithm>
#include <cmath>

#include "twofe/special.hpp"

namespace twofe {

namespace {

class ProbitFamily final : public LikelihoodFamily {
 public:
  const char* name() const override { return "probit"; }

  PiDerivs eval(double y, double eta) const override {
    check_outcome(y);
    // Fold y=0 into y=1 via the symmetry l(0, eta) = l(1, -eta).
    double s = (y > 0.5) ? 1.0 : -1.0;
    double z = s * eta;
    double r = norm_pdf_over_cdf(z);  // phi(z)/Phi(z), stable in the tail
    double rp = -z * r - r * r;       // d/dz of the ratio
    double rpp = -r - z * rp - 2.0 * r * rp;
    return {norm_logcdf(z), s * r, rp, s * rpp};
  }

  std::array<double, 5> mean_derivs(double eta) const override {
    double f = norm_pdf(eta);
    return {norm_cdf(eta), f, -eta * f, (eta * eta - 1.0) * f,
            (3.0 * eta - eta * eta * eta) * f};
  }

  double start_link(double ybar) const override {
    double p = std::clamp(ybar, 0.02, 0.98);
    return norm_icdf(p);
  }

  bool binary_outcome() const override { return true; }

  void check_outcome(double y) const override {
    if (y != 0.0 && y != 1.0)
      throw InvalidSpec("probit: outcome must be 0 or 1");
  }
};

class LogitFamily final : public LikelihoodFamily {
 public:
  const char* name() const override { return "logit"; }

  PiDerivs eval(double y, double eta) const override {
    check_outcome(y);
    // log(1 + e^eta) without overflow
    double log1pe = (eta > 0) ? eta + std::log1p(std::exp(-eta))
                              : std::log1p(std::exp(eta));
    double F = 1.0 / (1.0 + std::exp(-eta));
    double w = F * (1.0 - F);
    return {y * eta - log1pe, y - F, -w, -w * (1.0 - 2.0 * F)};
  }

  std::array<double, 5> mean_derivs(double eta) const override {
    double F = 1.0 / (1.0 + std::exp(-eta));
    double f = F * (1.0 - F);
    double u = 1.0 - 2.0 * F;
    double f2 = f * u;
    double f3 = f * u * u - 2.0 * f * f;
    double f4 = f * u * (u * u - 8.0 * f);
    return {F, f, f2, f3, f4};
  }

  double start_link(double ybar) const override {
    double p = std::clamp(ybar, 0.02, 0.98);
    return std::log(p / (1.0 - p));
  }

  bool binary_outcome() const override { return true; }

  void check_outcome(double y) const override {
    if (y != 0.0 && y != 1.0)
      throw InvalidSpec("logit: outcome must be 0 or 1");
  }
};

class PoissonFamily final : public LikelihoodFamily {
 public:
  const char* name() const override { return "poisson"; }

  PiDerivs eval(double y, double eta) const override {
    check_outcome(y);
    if (eta > 690.0) throw NumericOverflow("poisson: exp(index) overflows");
    double mu = std::exp(eta);
    return {y * eta - mu - std::lgamma(y + 1.0), y - mu, -mu, -mu};
  }

  std::array<double, 5> mean_derivs(double eta) const override {
    if (eta > 690.0) throw NumericOverflow("poisson: exp(index) overflows");
    double mu = std::exp(eta);
    return {mu, mu, mu, mu, mu};
  }

  double start_link(double ybar) const override {
    return std::log(std::max(ybar, 0.1));
  }

  void check_outcome(double y) const override {
    if (y < 0.0 || y != std::floor(y))
      throw InvalidSpec("poisson: outcome must be a nonnegative integer");
  }
};

class GaussianFamily final : public LikelihoodFamily {
 public:
  const char* name() const override { return "gaussian"; }

  PiDerivs eval(double y, double eta) const override {
    double e = y - eta;
    return {-0.5 * e * e - kLogSqrt2Pi, e, -1.0, 0.0};
  }

  std::array<double, 5> mean_derivs(double eta) const override {
    return {eta, 1.0, 0.0, 0.0, 0.0};
  }

  double start_link(double ybar) const override { return ybar; }
};

const ProbitFamily kProbit;
const LogitFamily kLogit;
const PoissonFamily kPoisson;
const GaussianFamily kGaussian;

}  // namespace

const LikelihoodFamily& family_by_name(const std::string& name) {
  if (name == "probit") return kProbit;
  if (name == "logit") return kLogit;
  if (name == "poisson") return kPoisson;
  if (name == "gaussian") return kGaussian;
  throw InvalidSpec("unknown likelihood family: " + name);
}

LoglikBundle loglik_bundle(const LikelihoodFamily& f, double y,
                           const Eigen::VectorXd& x, const Eigen::VectorXd& beta,
                           double pi) {
  double eta = x.dot(beta) + pi;
  PiDerivs d = f.eval(y, eta);
  LoglikBundle b;
  b.ll = d.ll;
  b.d_pi = d.d1;
  b.d_pi2 = d.d2;
  b.d_pi3 = d.d3;
  b.d_beta = d.d1 * x;
  b.d_beta_pi = d.d2 * x;
  b.d_beta_pi2 = d.d3 * x;
  b.d_beta_beta = d.d2 * x * x.transpose();
  return b;
}

EffectKind effect_kind_from_string(const std::string& s) {
  if (s == "binary-difference" || s == "diff") return EffectKind::BinaryDifference;
  if (s == "continuous-derivative" || s == "deriv")
    return EffectKind::ContinuousDerivative;
  if (s == "poisson-transform" || s == "poisson")
    return EffectKind::PoissonTransform;
  throw InvalidSpec("unknown effect kind: " + s);
}

const char* to_string(EffectKind k) {
  switch (k) {
    case EffectKind::BinaryDifference: return "binary-difference";
    case EffectKind::ContinuousDerivative: return "continuous-derivative";
    case EffectKind::PoissonTransform: return "poisson-transform";
  }
  return "?";
}

EffectBundle partial_effect_bundle(const LikelihoodFamily& f,
                                   const PartialEffectSpec& spec,
                                   const Eigen::VectorXd& x,
                                   const Eigen::VectorXd& beta, double pi) {
  const int K = static_cast<int>(beta.size());
  if (spec.k < 0 || spec.k >= K)
    throw InvalidSpec("partial effect: regressor index out of range");
  EffectBundle out;
  out.d_beta = Eigen::VectorXd::Zero(K);

  switch (spec.kind) {
    case EffectKind::BinaryDifference: {
      // F(beta_k + x_{-k}'beta_{-k} + pi) - F(x_{-k}'beta_{-k} + pi):
      // the target regressor is evaluated at 1 and 0.
      double base = x.dot(beta) - x(spec.k) * beta(spec.k) + pi;
      auto m1 = f.mean_derivs(base + beta(spec.k));
      auto m0 = f.mean_derivs(base);
      out.value = m1[0] - m0[0];
      out.d_pi = m1[1] - m0[1];
      out.d_pi2 = m1[2] - m0[2];
      out.d_pi3 = m1[3] - m0[3];
      for (int m = 0; m < K; ++m)
        out.d_beta(m) = (m == spec.k) ? m1[1] : (m1[1] - m0[1]) * x(m);
      break;
    }
    case EffectKind::ContinuousDerivative: {
      double eta = x.dot(beta) + pi;
      auto md = f.mean_derivs(eta);
      double bk = beta(spec.k);
      out.value = bk * md[1];
      out.d_pi = bk * md[2];
      out.d_pi2 = bk * md[3];
      out.d_pi3 = bk * md[4];
      for (int m = 0; m < K; ++m) {
        out.d_beta(m) = bk * md[2] * x(m);
        if (m == spec.k) out.d_beta(m) += md[1];
      }
      break;
    }
    case EffectKind::PoissonTransform: {
      double eta = x.dot(beta) + pi;
      if (eta > 690.0) throw NumericOverflow("partial effect: exp overflows");
      double mu = std::exp(eta);
      double dh = 0.0;
      if (spec.j >= 0) {
        if (spec.j >= K)
          throw InvalidSpec("partial effect: transform index out of range");
        if (!spec.transform_deriv)
          throw InvalidSpec("partial effect: transform derivative missing");
        dh = spec.transform_deriv(x(spec.k));
      }
      double g = beta(spec.k) + ((spec.j >= 0) ? beta(spec.j) * dh : 0.0);
      out.value = g * mu;
      out.d_pi = out.d_pi2 = out.d_pi3 = g * mu;
      for (int m = 0; m < K; ++m) out.d_beta(m) = g * mu * x(m);
      out.d_beta(spec.k) += mu;
      if (spec.j >= 0) out.d_beta(spec.j) += dh * mu;
      break;
    }
  }
  return out;
}

}  // namespace twofe
