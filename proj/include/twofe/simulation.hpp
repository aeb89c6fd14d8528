#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "twofe/bias.hpp"
#include "twofe/family.hpp"
#include "twofe/panel.hpp"

namespace twofe {

enum class DgpKind {
  NeymanScott,
  StaticProbitAr,
  StaticProbitTrend,
  DynamicProbitAr,
  DynamicProbitTrend,
  LinearAr,
  PoissonAr,
};

DgpKind dgp_kind_from_string(const std::string& s);
const char* to_string(DgpKind k);

struct DgpSpec {
  DgpKind kind = DgpKind::StaticProbitAr;
  int N = 52;
  int T = 14;
  double beta = 1.0;     // slope (static/linear/poisson); variance level for
                         // the Neyman-Scott design
  double beta_y = 0.5;   // dynamic designs: feedback coefficient
  double beta_z = 1.0;   // dynamic designs: exogenous-regressor coefficient
  std::uint64_t seed = 1;
};

struct GeneratedPanel {
  PanelDataset data;
  Eigen::VectorXd beta0;   // true model parameters
  Eigen::VectorXd delta0;  // true APEs of the default effects (empty if none)
  // Per-cell true effects (one N x T matrix per default effect); lets the
  // study recompute the APE target when cells are removed before fitting.
  std::vector<Eigen::MatrixXd> delta0_cells;
};

// Deterministic given (spec.seed, rep); identical across thread counts.
GeneratedPanel generate_with_truth(const DgpSpec& dgp, int rep);
PanelDataset generate(const DgpSpec& dgp, int rep);

const LikelihoodFamily& dgp_family(const DgpSpec& dgp);
std::vector<PartialEffectSpec> default_effects(const DgpSpec& dgp);
std::vector<std::string> dgp_quantity_names(const DgpSpec& dgp);

// Closed-form bias/SD/coverage table row for the Neyman-Scott variance
// model, in units of the true parameter. The jackknife SD/coverage require
// simulation (jackknife_reps > 0); its mean ratio is the exact -1/(NT).
struct OracleRow {
  int N = 0, T = 0;
  double bias_fe, bias_a, bias_j;  // E[estimator]/beta0 - 1
  double sd_fe, sd_a;              // sqrt(var)/beta0
  double cov_fe, cov_a;            // coverage of the 0.95 CIs
  int jack_reps = 0;
  double jack_mean = std::numeric_limits<double>::quiet_NaN();
  double jack_sd = std::numeric_limits<double>::quiet_NaN();
  double jack_cov = std::numeric_limits<double>::quiet_NaN();
};

OracleRow neyman_scott_oracle(int N, int T, int jackknife_reps = 0,
                              std::uint64_t seed = 1);

// Monte Carlo study runner.
struct EstimatorSpec {
  std::string kind;   // fe | analytical | jackknife
  int trim = 0;       // analytical only
  std::string label;  // defaults to kind (+ trim)
};

struct StudyOptions {
  std::vector<EstimatorSpec> estimators = {{"fe", 0, ""}};
  std::vector<PartialEffectSpec> effects;  // empty = design defaults
  VarianceMode variance_mode = VarianceMode::Both;
  int reps = 500;
  int threads = 0;  // 0 = hardware concurrency
  double max_failure_rate = 0.05;
};

struct SummaryRow {
  std::string estimator;
  std::string quantity;
  double truth = 0.0;     // mean truth across replications
  double bias = 0.0;
  double sd = 0.0;
  double rmse = 0.0;
  double se_sd = 0.0;     // mean(se)/SD
  double coverage = 0.0;  // 0.95 nominal
  bool relative = false;  // bias/sd/rmse divided by |truth|
};

struct SimulationReport {
  std::vector<SummaryRow> rows;
  int reps = 0;
  int failures = 0;
  std::uint64_t seed = 0;
  std::string dgp;
  int N = 0, T = 0;
};

SummaryRow summarize(const std::string& estimator, const std::string& quantity,
                     const std::vector<double>& estimates,
                     const std::vector<double>& truths,
                     const std::vector<double>& ses);

SimulationReport run_study(const DgpSpec& dgp, const StudyOptions& opts);

std::string report_table(const SimulationReport& rep);

}  // namespace twofe
