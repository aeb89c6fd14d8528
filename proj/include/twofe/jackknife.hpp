#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "twofe/bias.hpp"
#include "twofe/family.hpp"
#include "twofe/solver.hpp"

namespace twofe {

struct JackknifeOptions {
  // Number of random half-partitions of the units; 1 = split by the order
  // of the observations (no randomness).
  int unit_partitions = 1;
  std::uint64_t seed = 0;
  // Drop perfectly classified units/periods from each half panel before
  // fitting (binary outcomes only) instead of failing the subfit. Used by
  // the simulation harness, where half panels of a valid full panel can
  // still contain constant-outcome units.
  bool drop_separated = false;
};

// Split-panel jackknife: corrected = 3*full - mean(time-half pair) -
// mean(unit-half estimates).
struct JackknifeResult {
  Eigen::VectorXd corrected;
  Eigen::VectorXd full_estimate;
  std::pair<Eigen::VectorXd, Eigen::VectorXd> half_time_estimates;
  std::vector<Eigen::VectorXd> half_unit_estimates;  // 2 per partition
  std::string partitions_used;
  std::uint64_t rng_seed = 0;
  FitResult full_fit;
};

JackknifeResult spj_beta(std::shared_ptr<const PanelDataset> d,
                         const LikelihoodFamily& f,
                         const FitOptions& fopts = {},
                         const JackknifeOptions& jopts = {});

JackknifeResult spj_ape(std::shared_ptr<const PanelDataset> d,
                        const LikelihoodFamily& f,
                        const std::vector<PartialEffectSpec>& specs,
                        const FitOptions& fopts = {},
                        const JackknifeOptions& jopts = {});

// Chow-type Wald test that the two half-panel estimates share a common
// limit; a precondition for the jackknife correction.
struct HomogeneityTest {
  double statistic = 0.0;
  int dof = 0;
  double p_value = 1.0;
  Eigen::VectorXd beta_first, beta_second;
};

HomogeneityTest homogeneity_test(std::shared_ptr<const PanelDataset> d,
                                 const LikelihoodFamily& f,
                                 const std::string& axis,  // time | cross-section
                                 const FitOptions& fopts = {});

}  // namespace twofe
