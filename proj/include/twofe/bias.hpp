#pragma once

#include <Eigen/Core>
#include <vector>

#include "twofe/ape.hpp"
#include "twofe/family.hpp"
#include "twofe/solver.hpp"

namespace twofe {

// Analytical incidental-parameter bias and variance estimators for the model
// parameter beta.
struct CorrectionResult {
  Eigen::MatrixXd W_hat;         // K x K information matrix estimate
  Eigen::VectorXd B_hat;         // time-direction bias component
  Eigen::VectorXd D_hat;         // cross-section bias component
  Eigen::VectorXd beta_tilde_A;  // beta_hat - W^{-1}B/T - W^{-1}D/N
  Eigen::MatrixXd vcov;          // W^{-1}/(NT)
  Eigen::VectorXd se;            // sqrt(diag(vcov))
  int trim_L = 0;
  bool no_bartlett = false;
};

// W_hat = -(NT)^{-1} sum_it [d_bb' l - d_pi2 l Xi Xi']. Throws
// SingularInformation if not positive definite (collinearity with the
// effects missed upstream).
Eigen::MatrixXd estimate_W(const FitResult& fit, const LikelihoodFamily& f);

// Spectral bias component with trimming L lags (0 <= L <= T-2) and the
// T/(T-j) degrees-of-freedom factor (observed-count ratio when unbalanced).
Eigen::VectorXd estimate_B(const FitResult& fit, const LikelihoodFamily& f,
                           int L);

// Cross-section bias component (no lag structure).
Eigen::VectorXd estimate_D(const FitResult& fit, const LikelihoodFamily& f);

// no_bartlett = true uses the conditional-moment expressions that avoid
// the Bartlett identities (untrimmed upper-triangular time sums and the
// sandwich variance).
CorrectionResult analytical_correct(const FitResult& fit,
                                    const LikelihoodFamily& f, int L,
                                    bool no_bartlett = false);

enum class VarianceMode { Conditional, IidUnits, StationaryTimes, Both };
VarianceMode variance_mode_from_string(const std::string& s);
const char* to_string(VarianceMode m);

// Analytical correction for average partial effects.
struct ApeCorrectionResult {
  Eigen::VectorXd delta_hat;      // APE at the uncorrected fit
  Eigen::VectorXd delta_tilde;    // APE rebuilt at the corrected beta
  Eigen::VectorXd B_delta;
  Eigen::VectorXd D_delta;
  Eigen::VectorXd delta_tilde_A;  // delta_tilde - B/T - D/N
  Eigen::MatrixXd V_delta;        // bracketed variance sum (no rate factor)
  Eigen::VectorXd se;             // sqrt(diag(V_delta))/(NT)
  VarianceMode variance_mode = VarianceMode::Conditional;
  int trim_L = 0;
};

// corr: a precomputed parameter correction; computed internally if null.
ApeCorrectionResult ape_correction(const FitResult& fit,
                                   const LikelihoodFamily& f,
                                   const std::vector<PartialEffectSpec>& specs,
                                   int L, VarianceMode mode,
                                   const CorrectionResult* corr = nullptr);

}  // namespace twofe
