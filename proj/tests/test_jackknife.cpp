#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "test_util.hpp"
#include "twofe/jackknife.hpp"
#include "twofe/rng.hpp"
#include "twofe/simulation.hpp"
#include "twofe/solver.hpp"

using namespace twofe;

namespace {

std::shared_ptr<const PanelDataset> probit_panel(int N, int T, int rep) {
  DgpSpec dgp;
  dgp.kind = DgpKind::StaticProbitAr;
  dgp.N = N;
  dgp.T = T;
  return testutil::share(drop_constant_outcome(generate(dgp, rep)));
}

// Finds a replication where the full panel and the four half panels used by
// the split are all free of perfectly classified units/periods, so subfits
// succeed without dropping.
std::shared_ptr<const PanelDataset> clean_probit_panel(int N, int T, int rep) {
  DgpSpec dgp;
  dgp.kind = DgpKind::StaticProbitAr;
  dgp.N = N;
  dgp.T = T;
  for (;; ++rep) {
    PanelDataset d = generate(dgp, rep);
    if (validate(d).separation_risk()) continue;
    const int half_n = (N + 1) / 2;
    SubpanelSpec t1 = SubpanelSpec::full(d), t2 = SubpanelSpec::full(d);
    t1.time_last = (T + 1) / 2 - 1;
    t2.time_first = T / 2;
    SubpanelSpec u1, u2;
    for (int i = 0; i < half_n; ++i) u1.unit_subset.push_back(i);
    for (int i = N - half_n; i < N; ++i) u2.unit_subset.push_back(i);
    bool ok = true;
    for (const auto& s : {t1, t2, u1, u2}) {
      try {
        fit(testutil::share(subpanel(d, s)), family_by_name("probit"));
      } catch (const Error&) {
        ok = false;
        break;
      }
    }
    if (ok) return testutil::share(std::move(d));
  }
}

Eigen::VectorXd fit_beta(const PanelDataset& d, const SubpanelSpec& s,
                         const LikelihoodFamily& f) {
  auto sub = testutil::share(subpanel(d, s));
  return fit(sub, f).state.beta;
}

}  // namespace

TEST_CASE("split-panel halves follow the overlap convention") {
  // T = 5: time halves are periods {1,2,3} and {3,4,5} (1-based, shared
  // middle period); N = 6 units split into the first and last three.
  auto data = clean_probit_panel(6, 5, 1);
  const LikelihoodFamily& f = family_by_name("probit");
  JackknifeResult jr = spj_beta(data, f);

  SubpanelSpec t1 = SubpanelSpec::full(*data), t2 = SubpanelSpec::full(*data);
  t1.time_first = 0;
  t1.time_last = 2;
  t2.time_first = 2;
  t2.time_last = 4;
  CHECK((jr.half_time_estimates.first - fit_beta(*data, t1, f))
            .cwiseAbs()
            .maxCoeff() < 1e-5);
  CHECK((jr.half_time_estimates.second - fit_beta(*data, t2, f))
            .cwiseAbs()
            .maxCoeff() < 1e-5);

  SubpanelSpec u1, u2;
  u1.unit_subset = {0, 1, 2};
  u2.unit_subset = {3, 4, 5};
  REQUIRE(jr.half_unit_estimates.size() == 2);
  CHECK((jr.half_unit_estimates[0] - fit_beta(*data, u1, f))
            .cwiseAbs()
            .maxCoeff() < 1e-5);
  CHECK((jr.half_unit_estimates[1] - fit_beta(*data, u2, f))
            .cwiseAbs()
            .maxCoeff() < 1e-5);
}

TEST_CASE("jackknife combination is exactly linear in its components") {
  auto data = clean_probit_panel(10, 8, 2);
  const LikelihoodFamily& f = family_by_name("probit");
  JackknifeResult jr = spj_beta(data, f);
  Eigen::VectorXd unit_mean = Eigen::VectorXd::Zero(jr.full_estimate.size());
  for (const auto& e : jr.half_unit_estimates) unit_mean += e;
  unit_mean /= static_cast<double>(jr.half_unit_estimates.size());
  Eigen::VectorXd expect =
      3.0 * jr.full_estimate -
      0.5 * (jr.half_time_estimates.first + jr.half_time_estimates.second) -
      unit_mean;
  CHECK((jr.corrected - expect).cwiseAbs().maxCoeff() == 0.0);  // bit-exact
}

TEST_CASE("random partitions are seed-deterministic") {
  auto data = clean_probit_panel(12, 8, 3);
  const LikelihoodFamily& f = family_by_name("probit");
  JackknifeOptions j1;
  j1.unit_partitions = 3;
  j1.seed = 17;
  j1.drop_separated = true;  // random halves may contain classified units
  JackknifeResult a = spj_beta(data, f, {}, j1);
  JackknifeResult b = spj_beta(data, f, {}, j1);
  CHECK(a.half_unit_estimates.size() == 6);
  CHECK((a.corrected - b.corrected).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.partitions_used == b.partitions_used);

  JackknifeOptions j2 = j1;
  j2.seed = 18;
  JackknifeResult c = spj_beta(data, f, {}, j2);
  CHECK((a.corrected - c.corrected).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("small panels are rejected") {
  // dimension checks run before any fitting, so raw panels suffice
  DgpSpec dgp;
  dgp.kind = DgpKind::StaticProbitAr;
  dgp.N = 3;
  dgp.T = 8;
  auto data = testutil::share(generate(dgp, 1));
  CHECK_THROWS_AS(spj_beta(data, family_by_name("probit")), InvalidSpec);
  dgp.N = 8;
  dgp.T = 3;
  auto data2 = testutil::share(generate(dgp, 1));
  CHECK_THROWS_AS(spj_beta(data2, family_by_name("probit")), InvalidSpec);
}

TEST_CASE("subfit failures name the offending subpanel") {
  // Unit 0 is mixed on the full panel but constant on the second time half,
  // so the full fit and the first-half subfit succeed while the second-half
  // subfit fails. The search skips draws where some other slice misbehaves.
  const int N = 8, T = 5;
  const LikelihoodFamily& f = family_by_name("probit");
  std::shared_ptr<const PanelDataset> data;
  for (std::uint64_t seed = 4;; ++seed) {
    Eigen::MatrixXd y(N, T), x(N, T);
    Rng rng(seed);
    for (int i = 0; i < N; ++i)
      for (int t = 0; t < T; ++t) {
        x(i, t) = rng.normal();
        y(i, t) = rng.uniform() < 0.5 ? 0.0 : 1.0;
      }
    y.row(0) << 0, 1, 1, 1, 1;
    PanelDataset d = testutil::make_panel(y, {x});
    SubpanelSpec t1 = SubpanelSpec::full(d);
    t1.time_last = (T + 1) / 2 - 1;
    try {
      auto shared = testutil::share(std::move(d));
      fit(shared, f);
      fit(testutil::share(subpanel(*shared, t1)), f);
      data = shared;
      break;
    } catch (const Error&) {
      continue;
    }
  }
  try {
    spj_beta(data, f);
    FAIL("expected JackknifeSubfitError");
  } catch (const JackknifeSubfitError& e) {
    CHECK(std::string(e.what()).find("time-second-half") != std::string::npos);
  }
}

TEST_CASE("jackknife applies to average partial effects") {
  auto data = clean_probit_panel(10, 8, 5);
  const LikelihoodFamily& f = family_by_name("probit");
  std::vector<PartialEffectSpec> specs = {
      {EffectKind::ContinuousDerivative, 0, -1, nullptr}};
  JackknifeResult jr = spj_ape(data, f, specs);
  CHECK(jr.corrected.size() == 1);
  CHECK(std::isfinite(jr.corrected(0)));
  Eigen::VectorXd unit_mean = Eigen::VectorXd::Zero(1);
  for (const auto& e : jr.half_unit_estimates) unit_mean += e;
  unit_mean /= static_cast<double>(jr.half_unit_estimates.size());
  Eigen::VectorXd expect =
      3.0 * jr.full_estimate -
      0.5 * (jr.half_time_estimates.first + jr.half_time_estimates.second) -
      unit_mean;
  CHECK((jr.corrected - expect).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("homogeneity test is zero under exact duplication") {
  DgpSpec dgp;
  dgp.kind = DgpKind::StaticProbitAr;
  dgp.N = 6;
  dgp.T = 8;
  PanelDataset base = generate(dgp, 7);
  for (int rep = 8; validate(base).separation_risk(); ++rep)
    base = generate(dgp, rep);
  Eigen::MatrixXd y(12, 8), x(12, 8);  // units duplicated block-wise
  y.topRows(6) = base.y;
  y.bottomRows(6) = base.y;
  x.topRows(6) = base.X[0];
  x.bottomRows(6) = base.X[0];
  auto data = testutil::share(testutil::make_panel(y, {x}));
  const LikelihoodFamily& f = family_by_name("probit");
  HomogeneityTest ht = homogeneity_test(data, f, "cross-section");
  CHECK(ht.dof == 1);
  CHECK(std::abs(ht.statistic) < 1e-8);
  CHECK(ht.p_value == doctest::Approx(1.0).epsilon(1e-6));
  CHECK((ht.beta_first - ht.beta_second).cwiseAbs().maxCoeff() < 1e-5);
}

TEST_CASE("homogeneity test over the time axis") {
  auto data = clean_probit_panel(16, 10, 8);
  const LikelihoodFamily& f = family_by_name("probit");
  HomogeneityTest ht = homogeneity_test(data, f, "time");
  CHECK(ht.statistic >= 0.0);
  CHECK(ht.dof == 1);
  CHECK(ht.p_value >= 0.0);
  CHECK(ht.p_value <= 1.0);
  CHECK_THROWS_AS(homogeneity_test(data, f, "diagonal"), InvalidSpec);
}
