#include "twofe/jackknife.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "twofe/ape.hpp"
#include "twofe/rng.hpp"
#include "twofe/special.hpp"

namespace twofe {

namespace {

// Half panels along the time axis: {t <= ceil(T/2)} and {t >= floor(T/2)+1}
// (1-based; the halves overlap in one period when T is odd).
std::pair<SubpanelSpec, SubpanelSpec> time_halves(const PanelDataset& d) {
  const int T = d.n_periods();
  SubpanelSpec first = SubpanelSpec::full(d);
  SubpanelSpec second = SubpanelSpec::full(d);
  first.time_first = 0;
  first.time_last = (T + 1) / 2 - 1;
  second.time_first = T / 2;
  second.time_last = T - 1;
  return {first, second};
}

std::pair<SubpanelSpec, SubpanelSpec> unit_halves(
    const PanelDataset& d, const std::vector<int>& order) {
  const int N = d.n_units();
  const int half = (N + 1) / 2;
  SubpanelSpec first, second;
  first.unit_subset.assign(order.begin(), order.begin() + half);
  second.unit_subset.assign(order.end() - half, order.end());
  std::sort(first.unit_subset.begin(), first.unit_subset.end());
  std::sort(second.unit_subset.begin(), second.unit_subset.end());
  first.time_last = second.time_last = d.n_periods() - 1;
  return {first, second};
}

// Warm start for a subpanel: full-fit slopes and the matching subset of the
// effect estimates.
ParameterState warm_state(const FitResult& full, const PanelDataset& d,
                          const SubpanelSpec& s) {
  ParameterState st;
  st.beta = full.state.beta;
  st.alpha.resize(static_cast<int>(s.unit_subset.size()));
  for (int a = 0; a < st.alpha.size(); ++a)
    st.alpha(a) = full.state.alpha(s.unit_subset[a]);
  int tl = (s.time_last < 0) ? d.n_periods() - 1 : s.time_last;
  st.gamma = full.state.gamma.segment(s.time_first, tl - s.time_first + 1);
  st.normalization = full.options.normalization;
  if (st.normalization == Normalization::Penalty) {
    double shift = (st.alpha.sum() - st.gamma.sum()) /
                   (st.alpha.size() + st.gamma.size());
    st.alpha.array() -= shift;
    st.gamma.array() += shift;
  } else if (st.normalization == Normalization::DropFirstAlpha) {
    double a0 = st.alpha(0);
    st.alpha.array() -= a0;
    st.gamma.array() += a0;
  } else {
    double g0 = st.gamma(0);
    st.gamma.array() -= g0;
    st.alpha.array() += g0;
  }
  return st;
}

FitResult subfit(const FitResult& full, const LikelihoodFamily& f,
                 const SubpanelSpec& s, const std::string& label,
                 bool drop_separated) {
  try {
    PanelDataset cut = subpanel(*full.data, s);
    if (drop_separated && f.binary_outcome()) {
      PanelDataset kept = drop_constant_outcome(cut);
      if (kept.n_units() != cut.n_units() ||
          kept.n_periods() != cut.n_periods())
        // the warm start no longer lines up with the surviving effects
        return fit(std::make_shared<PanelDataset>(std::move(kept)), f,
                   full.options);
    }
    auto sub = std::make_shared<PanelDataset>(std::move(cut));
    ParameterState start = warm_state(full, *full.data, s);
    return fit(sub, f, full.options, &start);
  } catch (const Error& e) {
    throw JackknifeSubfitError("subpanel '" + label + "': " + e.what());
  }
}

std::vector<int> identity_order(int n) {
  std::vector<int> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

// Shared driver: `evaluate` maps a fit to the estimate vector being
// jackknifed (beta itself, or an APE vector).
template <typename Evaluate>
JackknifeResult spj_impl(std::shared_ptr<const PanelDataset> d,
                         const LikelihoodFamily& f, const FitOptions& fopts,
                         const JackknifeOptions& jopts, Evaluate evaluate) {
  if (d->n_periods() < 4 || d->n_units() < 4)
    throw InvalidSpec("split-panel jackknife needs N >= 4 and T >= 4");

  JackknifeResult out;
  out.rng_seed = jopts.seed;
  out.full_fit = fit(d, f, fopts);
  out.full_estimate = evaluate(out.full_fit);

  const bool drop = jopts.drop_separated;
  auto [t1, t2] = time_halves(*d);
  out.half_time_estimates.first =
      evaluate(subfit(out.full_fit, f, t1, "time-first-half", drop));
  out.half_time_estimates.second =
      evaluate(subfit(out.full_fit, f, t2, "time-second-half", drop));

  const bool random = jopts.unit_partitions > 1;
  const int S = random ? jopts.unit_partitions : 1;
  for (int s = 0; s < S; ++s) {
    std::vector<int> order = identity_order(d->n_units());
    if (random) {
      Rng rng(jopts.seed, static_cast<std::uint64_t>(s) + 1);
      rng.shuffle(order);
    }
    auto [u1, u2] = unit_halves(*d, order);
    out.half_unit_estimates.push_back(evaluate(subfit(
        out.full_fit, f, u1, "units-half-" + std::to_string(2 * s + 1), drop)));
    out.half_unit_estimates.push_back(evaluate(subfit(
        out.full_fit, f, u2, "units-half-" + std::to_string(2 * s + 2), drop)));
  }
  out.partitions_used = random
                            ? std::to_string(S) + " random half-partitions"
                            : "observation order";

  Eigen::VectorXd time_mean = 0.5 * (out.half_time_estimates.first +
                                     out.half_time_estimates.second);
  Eigen::VectorXd unit_mean =
      Eigen::VectorXd::Zero(out.full_estimate.size());
  for (const auto& e : out.half_unit_estimates) unit_mean += e;
  unit_mean /= static_cast<double>(out.half_unit_estimates.size());

  out.corrected = 3.0 * out.full_estimate - time_mean - unit_mean;
  return out;
}

}  // namespace

JackknifeResult spj_beta(std::shared_ptr<const PanelDataset> d,
                         const LikelihoodFamily& f, const FitOptions& fopts,
                         const JackknifeOptions& jopts) {
  return spj_impl(d, f, fopts, jopts,
                  [](const FitResult& r) { return r.state.beta; });
}

JackknifeResult spj_ape(std::shared_ptr<const PanelDataset> d,
                        const LikelihoodFamily& f,
                        const std::vector<PartialEffectSpec>& specs,
                        const FitOptions& fopts,
                        const JackknifeOptions& jopts) {
  return spj_impl(d, f, fopts, jopts, [&](const FitResult& r) {
    return compute_ape(r, f, specs).delta;
  });
}

HomogeneityTest homogeneity_test(std::shared_ptr<const PanelDataset> d,
                                 const LikelihoodFamily& f,
                                 const std::string& axis,
                                 const FitOptions& fopts) {
  SubpanelSpec s1, s2;
  if (axis == "time") {
    std::tie(s1, s2) = time_halves(*d);
  } else if (axis == "cross-section") {
    std::tie(s1, s2) = unit_halves(*d, identity_order(d->n_units()));
  } else {
    throw InvalidSpec("homogeneity test axis must be time or cross-section");
  }

  auto fit_half = [&](const SubpanelSpec& s) {
    auto sub = std::make_shared<PanelDataset>(subpanel(*d, s));
    FitResult r = fit(sub, f, fopts);
    CorrectionResult c = analytical_correct(r, f, 0);
    return std::pair<Eigen::VectorXd, Eigen::MatrixXd>(r.state.beta, c.vcov);
  };
  auto [b1, v1] = fit_half(s1);
  auto [b2, v2] = fit_half(s2);

  HomogeneityTest out;
  out.beta_first = b1;
  out.beta_second = b2;
  out.dof = static_cast<int>(b1.size());

  Eigen::MatrixXd V = v1 + v2;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(V);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
    throw SingularInformation("combined variance in homogeneity test is singular");
  Eigen::VectorXd diff = b1 - b2;
  out.statistic = diff.dot(ldlt.solve(diff));
  out.p_value = 1.0 - chi2_cdf(out.statistic, out.dof);
  return out;
}

}  // namespace twofe
