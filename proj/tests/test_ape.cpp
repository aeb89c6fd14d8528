#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "test_util.hpp"
#include "twofe/ape.hpp"
#include "twofe/bias.hpp"
#include "twofe/rng.hpp"
#include "twofe/simulation.hpp"
#include "twofe/solver.hpp"
#include "twofe/special.hpp"

using namespace twofe;

namespace {

FitResult manual_fit(std::shared_ptr<const PanelDataset> data,
                     const Eigen::VectorXd& beta) {
  FitResult fr;
  fr.data = data;
  fr.state.beta = beta;
  fr.state.alpha = Eigen::VectorXd::Zero(data->n_units());
  fr.state.gamma = Eigen::VectorXd::Zero(data->n_periods());
  fr.pi_hat = Eigen::MatrixXd::Zero(data->n_units(), data->n_periods());
  return fr;
}

}  // namespace

TEST_CASE("probit APE at a zero index is the standard normal density") {
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(3, 3);
  y(0, 0) = 1.0;
  y(1, 1) = 1.0;
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(3, 3);
  auto data = testutil::share(testutil::make_panel(y, {x}));
  FitResult fr = manual_fit(data, Eigen::VectorXd::Ones(1));

  std::vector<PartialEffectSpec> specs = {
      {EffectKind::ContinuousDerivative, 0, -1, nullptr}};
  ApeValue v = compute_ape(fr, family_by_name("probit"), specs);
  CHECK(v.delta(0) == doctest::Approx(norm_pdf(0.0)).epsilon(1e-12));
  CHECK(v.cells[0](2, 2) == doctest::Approx(norm_pdf(0.0)));
  CHECK(v.beta_used(0) == 1.0);
}

TEST_CASE("binary difference with a zero coefficient is a zero effect") {
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(3, 3);
  y(0, 1) = 1.0;
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(3, 3);
  auto data = testutil::share(testutil::make_panel(y, {x}));
  FitResult fr = manual_fit(data, Eigen::VectorXd::Zero(1));
  std::vector<PartialEffectSpec> specs = {
      {EffectKind::BinaryDifference, 0, -1, nullptr}};
  ApeValue v = compute_ape(fr, family_by_name("probit"), specs);
  CHECK(std::abs(v.delta(0)) < 1e-14);
}

TEST_CASE("empty effect lists are rejected") {
  auto data = testutil::share(
      testutil::make_panel(Eigen::MatrixXd::Zero(2, 2),
                           {Eigen::MatrixXd::Ones(2, 2)}));
  FitResult fr = manual_fit(data, Eigen::VectorXd::Zero(1));
  CHECK_THROWS_AS(compute_ape(fr, family_by_name("gaussian"), {}), InvalidSpec);
  CHECK_THROWS_AS(
      ape_correction(fr, family_by_name("gaussian"), {}, 0,
                     VarianceMode::Conditional),
      InvalidSpec);
}

TEST_CASE("poisson APE satisfies the mean identity at the fit") {
  DgpSpec dgp;
  dgp.kind = DgpKind::PoissonAr;
  dgp.N = 14;
  dgp.T = 8;
  dgp.beta = 0.5;
  auto data = testutil::share(generate(dgp, 2));
  const LikelihoodFamily& f = family_by_name("poisson");
  FitResult fr = fit(data, f);
  std::vector<PartialEffectSpec> specs = {
      {EffectKind::PoissonTransform, 0, -1, nullptr}};
  ApeValue v = compute_ape(fr, f, specs);
  // the effect-level score equations force mean(exp(eta_hat)) == mean(y)
  double ybar = 0.0;
  for (int i = 0; i < data->n_units(); ++i) ybar += data->y.row(i).sum();
  ybar /= data->n_observed();
  CHECK(v.delta(0) == doctest::Approx(fr.state.beta(0) * ybar).epsilon(1e-8));
}

TEST_CASE("APE is invariant to the effect normalization") {
  DgpSpec dgp;
  dgp.kind = DgpKind::StaticProbitAr;
  dgp.N = 18;
  dgp.T = 10;
  auto data = testutil::share(drop_constant_outcome(generate(dgp, 3)));
  const LikelihoodFamily& f = family_by_name("probit");
  std::vector<PartialEffectSpec> specs = {
      {EffectKind::ContinuousDerivative, 0, -1, nullptr}};
  FitOptions pen, drop;
  drop.normalization = Normalization::DropFirstGamma;
  double a = compute_ape(fit(data, f, pen), f, specs).delta(0);
  double b = compute_ape(fit(data, f, drop), f, specs).delta(0);
  CHECK(a == doctest::Approx(b).epsilon(1e-8));
}

TEST_CASE("gaussian derivative APE reduces to the slope") {
  DgpSpec dgp;
  dgp.kind = DgpKind::LinearAr;
  dgp.N = 16;
  dgp.T = 9;
  auto data = testutil::share(drop_constant_outcome(generate(dgp, 4)));
  const LikelihoodFamily& f = family_by_name("gaussian");
  FitResult fr = fit(data, f);
  std::vector<PartialEffectSpec> specs = {
      {EffectKind::ContinuousDerivative, 0, -1, nullptr}};
  CorrectionResult cr = analytical_correct(fr, f, 1);
  ApeCorrectionResult ar =
      ape_correction(fr, f, specs, 1, VarianceMode::Both, &cr);
  // linear model: the APE is the coefficient itself, and the effect has no
  // curvature in the index, so the APE bias terms vanish
  CHECK(ar.delta_hat(0) == doctest::Approx(fr.state.beta(0)).epsilon(1e-12));
  CHECK(std::abs(ar.B_delta(0)) < 1e-12);
  CHECK(std::abs(ar.D_delta(0)) < 1e-12);
  CHECK(ar.delta_tilde_A(0) ==
        doctest::Approx(cr.beta_tilde_A(0)).epsilon(1e-9));
  CHECK(ar.se(0) > 0.0);
}

TEST_CASE("APE correction produces coherent output across variance modes") {
  DgpSpec dgp;
  dgp.kind = DgpKind::StaticProbitAr;
  dgp.N = 24;
  dgp.T = 12;
  auto data = testutil::share(drop_constant_outcome(generate(dgp, 5)));
  const LikelihoodFamily& f = family_by_name("probit");
  FitResult fr = fit(data, f);
  std::vector<PartialEffectSpec> specs = {
      {EffectKind::ContinuousDerivative, 0, -1, nullptr}};
  CorrectionResult cr = analytical_correct(fr, f, 1);

  double prev_se = -1.0;
  for (VarianceMode mode :
       {VarianceMode::Conditional, VarianceMode::IidUnits,
        VarianceMode::StationaryTimes, VarianceMode::Both}) {
    ApeCorrectionResult ar = ape_correction(fr, f, specs, 1, mode, &cr);
    CHECK(ar.variance_mode == mode);
    CHECK(std::isfinite(ar.delta_hat(0)));
    CHECK(std::isfinite(ar.delta_tilde(0)));
    CHECK(std::isfinite(ar.delta_tilde_A(0)));
    CHECK(ar.se(0) > 0.0);
    CHECK((ar.V_delta - ar.V_delta.transpose()).cwiseAbs().maxCoeff() < 1e-10);
    // the corrected APE stays near the uncorrected one on this design
    CHECK(std::abs(ar.delta_tilde_A(0) - ar.delta_hat(0)) <
          10.0 * ar.se(0) + 0.05);
    prev_se = ar.se(0);
  }
  (void)prev_se;

  // conditional and both differ through the centering
  double se_cond =
      ape_correction(fr, f, specs, 1, VarianceMode::Conditional, &cr).se(0);
  double se_both =
      ape_correction(fr, f, specs, 1, VarianceMode::Both, &cr).se(0);
  CHECK(se_cond != se_both);
}

TEST_CASE("dynamic design reports both state dependence and slope effects") {
  DgpSpec dgp;
  dgp.kind = DgpKind::DynamicProbitAr;
  dgp.N = 26;
  dgp.T = 12;
  auto data = testutil::share(drop_constant_outcome(generate(dgp, 6)));
  const LikelihoodFamily& f = family_by_name("probit");
  FitResult fr = fit(data, f);
  std::vector<PartialEffectSpec> specs = {
      {EffectKind::BinaryDifference, 0, -1, nullptr},
      {EffectKind::ContinuousDerivative, 1, -1, nullptr}};
  ApeCorrectionResult ar =
      ape_correction(fr, f, specs, 1, VarianceMode::Both, nullptr);
  CHECK(ar.delta_hat.size() == 2);
  CHECK(ar.delta_hat(0) > 0.0);  // positive state dependence in the design
  CHECK(ar.delta_hat(1) > 0.0);
  CHECK(ar.se(0) > 0.0);
  CHECK(ar.se(1) > 0.0);
  CHECK(ar.V_delta.rows() == 2);
}
