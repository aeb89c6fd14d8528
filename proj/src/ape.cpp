#include "twofe/ape.hpp"

namespace twofe {

ApeValue compute_ape(const FitResult& fit, const LikelihoodFamily& f,
                     const std::vector<PartialEffectSpec>& specs) {
  const PanelDataset& d = *fit.data;
  const int N = d.n_units(), T = d.n_periods(), K = d.n_regressors();
  const int E = static_cast<int>(specs.size());
  if (E == 0) throw InvalidSpec("compute_ape: no effects requested");

  ApeValue out;
  out.delta = Eigen::VectorXd::Zero(E);
  out.cells.assign(E, Eigen::MatrixXd::Zero(N, T));
  out.beta_used = fit.state.beta;

  Eigen::VectorXd x(K);
  const int n = d.n_observed();
  for (int i = 0; i < N; ++i)
    for (int t = 0; t < T; ++t) {
      if (!d.mask(i, t)) continue;
      for (int k = 0; k < K; ++k) x(k) = d.X[k](i, t);
      for (int e = 0; e < E; ++e) {
        EffectBundle eb = partial_effect_bundle(f, specs[e], x, fit.state.beta,
                                                fit.pi_hat(i, t));
        out.cells[e](i, t) = eb.value;
        out.delta(e) += eb.value / n;
      }
    }
  return out;
}

}  // namespace twofe
