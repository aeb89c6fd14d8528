#pragma once

#include <Eigen/Core>
#include <array>
#include <functional>
#include <memory>
#include <string>

#include "twofe/errors.hpp"

namespace twofe {

// Per-observation log-likelihood value and derivatives in the scalar index
// pi (the single index is eta = x'beta + pi, so all beta derivatives follow
// by multiplying with x).
struct PiDerivs {
  double ll;
  double d1;  // d l / d pi
  double d2;  // d^2 l / d pi^2
  double d3;  // d^3 l / d pi^3
};

// Full derivative bundle at one observation.
struct LoglikBundle {
  double ll, d_pi, d_pi2, d_pi3;
  Eigen::VectorXd d_beta;      // = d_pi * x
  Eigen::VectorXd d_beta_pi;   // = d_pi2 * x
  Eigen::VectorXd d_beta_pi2;  // = d_pi3 * x
  Eigen::MatrixXd d_beta_beta; // = d_pi2 * x x'
};

// Stateless single-index likelihood family, strictly concave in (beta, pi).
// mean_derivs returns {F, F', F'', F''', F''''} of the mean/CDF function,
// used by the partial-effect formulas.
class LikelihoodFamily {
 public:
  virtual ~LikelihoodFamily() = default;
  virtual const char* name() const = 0;
  virtual PiDerivs eval(double y, double eta) const = 0;
  virtual std::array<double, 5> mean_derivs(double eta) const = 0;
  // Starting value for an individual effect given a unit mean of y.
  virtual double start_link(double ybar) const = 0;
  virtual bool binary_outcome() const { return false; }
  // Throws on outcomes outside the family's support.
  virtual void check_outcome(double y) const {}
};

// Registry lookup by name: probit | logit | poisson | gaussian.
// Throws InvalidSpec on unknown names.
const LikelihoodFamily& family_by_name(const std::string& name);

LoglikBundle loglik_bundle(const LikelihoodFamily& f, double y,
                           const Eigen::VectorXd& x, const Eigen::VectorXd& beta,
                           double pi);

enum class EffectKind { BinaryDifference, ContinuousDerivative, PoissonTransform };

EffectKind effect_kind_from_string(const std::string& s);
const char* to_string(EffectKind k);

// Partial effect Delta_it(beta, pi) of regressor k. For PoissonTransform the
// effect is [beta_k + beta_j dH(x_k)] exp(x'beta + pi); without a transform
// (j < 0) it reduces to beta_k exp(x'beta + pi).
struct PartialEffectSpec {
  EffectKind kind = EffectKind::ContinuousDerivative;
  int k = 0;
  int j = -1;
  std::function<double(double)> transform_deriv;  // dH, evaluated at x_k
};

struct EffectBundle {
  double value, d_pi, d_pi2, d_pi3;
  Eigen::VectorXd d_beta;
};

EffectBundle partial_effect_bundle(const LikelihoodFamily& f,
                                   const PartialEffectSpec& spec,
                                   const Eigen::VectorXd& x,
                                   const Eigen::VectorXd& beta, double pi);

}  // namespace twofe
