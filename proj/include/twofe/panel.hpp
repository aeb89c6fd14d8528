#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "twofe/errors.hpp"

namespace twofe {

using MatrixXb = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

// Rectangular (possibly masked) N x T panel. Units and periods are opaque
// labels mapped to dense 0-based indices at load; all math runs on indices.
// Immutable after construction; safe to share across threads.
struct PanelDataset {
  std::vector<std::string> unit_ids;  // N labels, order of first appearance
  std::vector<std::string> time_ids;  // T labels, order of first appearance
  Eigen::MatrixXd y;                  // N x T, undefined where masked
  std::vector<Eigen::MatrixXd> X;     // K regressors, each N x T
  MatrixXb mask;                      // true = observed

  int n_units() const { return static_cast<int>(unit_ids.size()); }
  int n_periods() const { return static_cast<int>(time_ids.size()); }
  int n_regressors() const { return static_cast<int>(X.size()); }
  bool observed(int i, int t) const { return mask(i, t); }
  int n_observed() const { return static_cast<int>(mask.cast<int>().sum()); }
  bool balanced() const { return n_observed() == n_units() * n_periods(); }

  // Throws DegeneratePanel if N < 2, T < 2, K < 1 or some unit/period has
  // no observed cell.
  void check() const;
};

struct CsvSchema {
  std::string id = "id";
  std::string time = "time";
  std::string y = "y";
  std::vector<std::string> x;  // empty = every other column, in file order
};

// Subset of a panel. Time subsets must be contiguous intervals (the time
// series structure is preserved); unit subsets may be arbitrary.
struct SubpanelSpec {
  std::vector<int> unit_subset;  // indices into unit_ids
  int time_first = 0;            // inclusive interval [time_first, time_last]
  int time_last = -1;            // -1 = through the last period

  static SubpanelSpec full(const PanelDataset& d);
};

PanelDataset load_csv(const std::string& path, const CsvSchema& schema = {});
void write_csv(const PanelDataset& d, const std::string& path,
               const CsvSchema& schema = {});

PanelDataset subpanel(const PanelDataset& d, const SubpanelSpec& s);

// Remove units and periods whose observed outcome is constant in {0,1}
// (perfectly classified under a binary model; their effects are not
// identified and the likelihood is unbounded in them). Iterates until no
// such unit or period remains. Returns the input unchanged when nothing is
// dropped; throws DegeneratePanel if fewer than 2 units or periods survive.
PanelDataset drop_constant_outcome(const PanelDataset& d);

struct ValidationReport {
  // Two-way within variation of each regressor after (unit-weight) two-way
  // demeaning over observed cells, as a fraction of its total variation.
  std::vector<double> within_variation;
  std::vector<bool> collinear_with_effects;  // within variation ~ 0
  int constant_outcome_units = 0;   // all observed y equal and in {0,1}
  int constant_outcome_periods = 0;
  double missing_fraction = 0.0;
  bool separation_risk() const {
    return constant_outcome_units > 0 || constant_outcome_periods > 0;
  }
  bool any_collinear() const;
};

ValidationReport validate(const PanelDataset& d);

}  // namespace twofe
