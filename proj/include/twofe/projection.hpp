#pragma once

#include <Eigen/Core>

#include "twofe/errors.hpp"

namespace twofe {

struct FitResult;
class LikelihoodFamily;
struct PartialEffectSpec;

// Weighted least squares projection of an N x T array onto the additive
// space {a_i + g_t} under the metric w_it. Cells with w_it == 0 are treated
// as unobserved and excluded from all sums.
struct TwoWayProjection {
  Eigen::VectorXd a;        // N unit coefficients, normalized sum(a) == sum(g)
  Eigen::VectorXd g;        // T period coefficients
  Eigen::MatrixXd fitted;   // a_i + g_t (zero on unobserved cells)
  Eigen::MatrixXd residual; // A - fitted (zero on unobserved cells)
  int sweeps = 0;
  bool used_dense_fallback = false;
};

// Minimizes sum_it w_it (A_it - a_i - g_t)^2. Alternating weighted means
// with a dense structured solve as fallback. Throws DegenerateProjection if
// some unit or period has no cell with positive weight.
TwoWayProjection project(const Eigen::MatrixXd& w, const Eigen::MatrixXd& A,
                         double tol = 1e-12, int max_sweeps_factor = 10);

// Fitted values of the w-metric projection of d_{beta_k pi} l / d_{pi^2} l
// onto the additive space, with w_it = -d_{pi^2} l evaluated at the fit.
Eigen::MatrixXd xi_hat(const FitResult& fit, const LikelihoodFamily& f, int k);

// Fitted values of the w-metric projection of d_pi Delta / d_{pi^2} l.
Eigen::MatrixXd psi_hat(const FitResult& fit, const LikelihoodFamily& f,
                        const PartialEffectSpec& spec);

}  // namespace twofe
