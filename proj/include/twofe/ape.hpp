#pragma once

#include <Eigen/Core>
#include <vector>

#include "twofe/family.hpp"
#include "twofe/solver.hpp"

namespace twofe {

// Average partial effects evaluated at a fitted model: one entry of delta
// per requested effect, with the per-cell effect surfaces retained for the
// variance estimators.
struct ApeValue {
  Eigen::VectorXd delta;                  // E per requested effect
  std::vector<Eigen::MatrixXd> cells;     // E matrices of per-cell effects
  Eigen::VectorXd beta_used;
};

ApeValue compute_ape(const FitResult& fit, const LikelihoodFamily& f,
                     const std::vector<PartialEffectSpec>& specs);

}  // namespace twofe
