#pragma once

#include <Eigen/Core>
#include <memory>
#include <string>

#include "twofe/family.hpp"
#include "twofe/panel.hpp"

namespace twofe {

enum class Normalization { Penalty, DropFirstAlpha, DropFirstGamma };

Normalization normalization_from_string(const std::string& s);
const char* to_string(Normalization n);

struct FitOptions {
  Normalization normalization = Normalization::Penalty;
  double penalty_b = 1.0;   // "b > 0 is an arbitrary constant"
  double tol_grad = 1e-8;   // relative: |grad|_max <= tol_grad * (1 + |L|)
  int max_iterations = 200;
  int max_halvings = 30;
  double effect_bound = 1e3;  // separation guard on |alpha_i|, |gamma_t|
};

struct ParameterState {
  Eigen::VectorXd beta;   // K
  Eigen::VectorXd alpha;  // N
  Eigen::VectorXd gamma;  // T
  Normalization normalization = Normalization::Penalty;

  double pi(int i, int t) const { return alpha(i) + gamma(t); }
};

struct FitResult {
  ParameterState state;
  double loglik = 0.0;  // sum of per-cell log-likelihoods (no penalty term)
  int iterations = 0;
  double gradient_norm = 0.0;
  bool converged = false;
  Eigen::MatrixXd pi_hat;  // N x T fitted indices
  std::shared_ptr<const PanelDataset> data;
  std::string family;
  FitOptions options;
};

// Expected incidental-parameter Hessian in its two-way structure:
//   H = scale * ( [diag(diag_alpha), cross; cross', diag(diag_gamma)]
//                 + penalty_b * v v' ),   v = (1_N', -1_T')'.
// cross(i,t) holds the weight -E[d_pi2 l_it] (zero on masked cells) and the
// diagonals are its row/column sums.
struct StructuredHessian {
  Eigen::VectorXd diag_alpha;  // N
  Eigen::VectorXd diag_gamma;  // T
  Eigen::MatrixXd cross;       // N x T
  double penalty_b = 1.0;
  double scale = 1.0;          // 1/sqrt(NT)

  static StructuredHessian from_weights(const Eigen::MatrixXd& w,
                                        double penalty_b = 1.0);
};

// Solves H x = rhs exploiting the structure: Sherman-Morrison on the
// penalty rank-one term, diagonal elimination of the larger block, and a
// dense Schur solve on the smaller block.
Eigen::VectorXd solve_structured(const StructuredHessian& h,
                                 const Eigen::VectorXd& rhs);

// One damped Newton step on (beta, alpha, gamma) via block elimination.
// Returns the updated state; optionally reports the objective value after
// the step and the gradient max-norm before it.
ParameterState newton_step(const ParameterState& state, const PanelDataset& d,
                           const LikelihoodFamily& f, const FitOptions& opts,
                           double* objective_out = nullptr,
                           double* grad_norm_out = nullptr,
                           double* step_norm_out = nullptr);

// start: optional warm start (e.g. subpanel fits warm-started at the full
// solution); concavity guarantees the same optimum either way.
FitResult fit(std::shared_ptr<const PanelDataset> d, const LikelihoodFamily& f,
              const FitOptions& opts = {},
              const ParameterState* start = nullptr);

// Re-optimizes the effects (alpha, gamma) with beta held fixed; used by the
// APE correction which rebuilds effects at the corrected beta.
FitResult refit_effects(const FitResult& base, const LikelihoodFamily& f,
                        const Eigen::VectorXd& beta);

// Penalized sample objective at a state (includes the penalty term under
// the penalty normalization).
double objective(const ParameterState& state, const PanelDataset& d,
                 const LikelihoodFamily& f, const FitOptions& opts);

}  // namespace twofe
