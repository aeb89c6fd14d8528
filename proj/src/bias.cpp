#include "twofe/bias.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <cmath>

#include "twofe/projection.hpp"

namespace twofe {

namespace {

// Per-cell derivative surfaces at the fitted parameters, plus the fitted
// two-way projections Xi_k of the score-ratio regressors.
struct CellCache {
  Eigen::MatrixXd d1, d2, d3;        // N x T, zero on masked cells
  std::vector<Eigen::MatrixXd> Xi;   // K fitted projections
};

CellCache build_cache(const FitResult& fit, const LikelihoodFamily& f) {
  const PanelDataset& d = *fit.data;
  const int N = d.n_units(), T = d.n_periods(), K = d.n_regressors();
  CellCache c;
  c.d1.setZero(N, T);
  c.d2.setZero(N, T);
  c.d3.setZero(N, T);
  Eigen::VectorXd x(K);
  for (int i = 0; i < N; ++i)
    for (int t = 0; t < T; ++t) {
      if (!d.mask(i, t)) continue;
      for (int k = 0; k < K; ++k) x(k) = d.X[k](i, t);
      PiDerivs pd = f.eval(d.y(i, t), x.dot(fit.state.beta) + fit.pi_hat(i, t));
      c.d1(i, t) = pd.d1;
      c.d2(i, t) = pd.d2;
      c.d3(i, t) = pd.d3;
    }
  c.Xi.reserve(K);
  for (int k = 0; k < K; ++k) c.Xi.push_back(xi_hat(fit, f, k));
  return c;
}

// D_{beta pi^q} l = d_{q+1} * (x - Xi): the projected score derivatives.
Eigen::VectorXd residual_x(const PanelDataset& d, const CellCache& c, int i,
                           int t) {
  Eigen::VectorXd r(d.n_regressors());
  for (int k = 0; k < d.n_regressors(); ++k)
    r(k) = d.X[k](i, t) - c.Xi[k](i, t);
  return r;
}

Eigen::MatrixXd estimate_W_impl(const FitResult& fit, const CellCache& c) {
  const PanelDataset& d = *fit.data;
  const int N = d.n_units(), T = d.n_periods(), K = d.n_regressors();
  Eigen::MatrixXd W = Eigen::MatrixXd::Zero(K, K);
  for (int i = 0; i < N; ++i)
    for (int t = 0; t < T; ++t) {
      if (!d.mask(i, t)) continue;
      Eigen::VectorXd xt = residual_x(d, c, i, t);
      W += (-c.d2(i, t)) * xt * xt.transpose();
    }
  W /= static_cast<double>(N) * T;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(W);
  double emax = es.eigenvalues().maxCoeff();
  if (es.eigenvalues().minCoeff() <= 1e-10 * std::max(1.0, emax))
    throw SingularInformation(
        "information matrix for the slopes is singular; a regressor is "
        "collinear with the two-way effects");
  return W;
}

Eigen::VectorXd estimate_B_impl(const FitResult& fit, const CellCache& c,
                                int L) {
  const PanelDataset& d = *fit.data;
  const int N = d.n_units(), T = d.n_periods(), K = d.n_regressors();
  if (L < 0 || L >= T - 1)
    throw InvalidTrim("trim L must satisfy 0 <= L <= T-2");

  Eigen::VectorXd B = Eigen::VectorXd::Zero(K);
  for (int i = 0; i < N; ++i) {
    double denom = 0.0;
    int n_i = 0;
    for (int t = 0; t < T; ++t)
      if (d.mask(i, t)) {
        denom += c.d2(i, t);
        ++n_i;
      }
    Eigen::VectorXd num = Eigen::VectorXd::Zero(K);
    for (int j = 0; j <= L; ++j) {
      Eigen::VectorXd lag_sum = Eigen::VectorXd::Zero(K);
      int pairs = 0;
      for (int t = j; t < T; ++t) {
        if (!d.mask(i, t) || !d.mask(i, t - j)) continue;
        lag_sum += c.d1(i, t - j) * c.d2(i, t) * residual_x(d, c, i, t);
        ++pairs;
      }
      // degrees-of-freedom factor: T/(T-j) balanced, observed-count ratio
      // otherwise; a lag with no observed pairs contributes nothing
      if (pairs > 0) num += (static_cast<double>(n_i) / pairs) * lag_sum;
    }
    for (int t = 0; t < T; ++t)
      if (d.mask(i, t))
        num += 0.5 * c.d3(i, t) * residual_x(d, c, i, t);
    B -= num / denom / N;
  }
  return B;
}

Eigen::VectorXd estimate_D_impl(const FitResult& fit, const CellCache& c) {
  const PanelDataset& d = *fit.data;
  const int N = d.n_units(), T = d.n_periods(), K = d.n_regressors();
  Eigen::VectorXd D = Eigen::VectorXd::Zero(K);
  for (int t = 0; t < T; ++t) {
    double denom = 0.0;
    Eigen::VectorXd num = Eigen::VectorXd::Zero(K);
    for (int i = 0; i < N; ++i) {
      if (!d.mask(i, t)) continue;
      denom += c.d2(i, t);
      Eigen::VectorXd xt = residual_x(d, c, i, t);
      num += (c.d1(i, t) * c.d2(i, t) + 0.5 * c.d3(i, t)) * xt;
    }
    D -= num / denom / T;
  }
  return D;
}

// Conditional-moment ("no Bartlett identities") variants: untrimmed
// upper-triangular time sums and a squared-denominator second term.
Eigen::VectorXd estimate_B_nb(const FitResult& fit, const CellCache& c) {
  const PanelDataset& d = *fit.data;
  const int N = d.n_units(), T = d.n_periods(), K = d.n_regressors();
  Eigen::VectorXd B = Eigen::VectorXd::Zero(K);
  for (int i = 0; i < N; ++i) {
    double denom = 0.0, score_sq = 0.0;
    Eigen::VectorXd first = Eigen::VectorXd::Zero(K);
    Eigen::VectorXd dbp2 = Eigen::VectorXd::Zero(K);
    for (int t = 0; t < T; ++t) {
      if (!d.mask(i, t)) continue;
      denom += c.d2(i, t);
      score_sq += c.d1(i, t) * c.d1(i, t);
      dbp2 += c.d3(i, t) * residual_x(d, c, i, t);
      for (int tau = t; tau < T; ++tau) {
        if (!d.mask(i, tau)) continue;
        first += c.d1(i, t) * c.d2(i, tau) * residual_x(d, c, i, tau);
      }
    }
    B += (-first / denom + 0.5 * score_sq * dbp2 / (denom * denom)) / N;
  }
  return B;
}

Eigen::VectorXd estimate_D_nb(const FitResult& fit, const CellCache& c) {
  const PanelDataset& d = *fit.data;
  const int N = d.n_units(), T = d.n_periods(), K = d.n_regressors();
  Eigen::VectorXd D = Eigen::VectorXd::Zero(K);
  for (int t = 0; t < T; ++t) {
    double denom = 0.0, score_sq = 0.0;
    Eigen::VectorXd first = Eigen::VectorXd::Zero(K);
    Eigen::VectorXd dbp2 = Eigen::VectorXd::Zero(K);
    for (int i = 0; i < N; ++i) {
      if (!d.mask(i, t)) continue;
      denom += c.d2(i, t);
      score_sq += c.d1(i, t) * c.d1(i, t);
      Eigen::VectorXd xt = residual_x(d, c, i, t);
      first += c.d1(i, t) * c.d2(i, t) * xt;
      dbp2 += c.d3(i, t) * xt;
    }
    D += (-first / denom + 0.5 * score_sq * dbp2 / (denom * denom)) / T;
  }
  return D;
}

}  // namespace

Eigen::MatrixXd estimate_W(const FitResult& fit, const LikelihoodFamily& f) {
  return estimate_W_impl(fit, build_cache(fit, f));
}

Eigen::VectorXd estimate_B(const FitResult& fit, const LikelihoodFamily& f,
                           int L) {
  return estimate_B_impl(fit, build_cache(fit, f), L);
}

Eigen::VectorXd estimate_D(const FitResult& fit, const LikelihoodFamily& f) {
  return estimate_D_impl(fit, build_cache(fit, f));
}

CorrectionResult analytical_correct(const FitResult& fit,
                                    const LikelihoodFamily& f, int L,
                                    bool no_bartlett) {
  const PanelDataset& d = *fit.data;
  const double nt = static_cast<double>(d.n_units()) * d.n_periods();
  CellCache c = build_cache(fit, f);

  CorrectionResult out;
  out.trim_L = L;
  out.no_bartlett = no_bartlett;
  out.W_hat = estimate_W_impl(fit, c);
  out.B_hat = no_bartlett ? estimate_B_nb(fit, c) : estimate_B_impl(fit, c, L);
  out.D_hat = no_bartlett ? estimate_D_nb(fit, c) : estimate_D_impl(fit, c);

  Eigen::LDLT<Eigen::MatrixXd> ldlt(out.W_hat);
  out.beta_tilde_A = fit.state.beta - ldlt.solve(out.B_hat) / d.n_periods() -
                     ldlt.solve(out.D_hat) / d.n_units();
  if (no_bartlett) {
    // sandwich: W^{-1} [n^{-1} sum D_b l D_b l'] W^{-1} / (NT)
    const int K = d.n_regressors();
    Eigen::MatrixXd mid = Eigen::MatrixXd::Zero(K, K);
    for (int i = 0; i < d.n_units(); ++i)
      for (int t = 0; t < d.n_periods(); ++t) {
        if (!d.mask(i, t)) continue;
        Eigen::VectorXd g = c.d1(i, t) * residual_x(d, c, i, t);
        mid += g * g.transpose();
      }
    mid /= nt;
    out.vcov = ldlt.solve(ldlt.solve(mid).transpose()) / nt;
  } else {
    out.vcov =
        ldlt.solve(Eigen::MatrixXd::Identity(d.n_regressors(), d.n_regressors())) /
        nt;
  }
  out.se = out.vcov.diagonal().cwiseSqrt();
  return out;
}

VarianceMode variance_mode_from_string(const std::string& s) {
  if (s == "conditional") return VarianceMode::Conditional;
  if (s == "iid-units") return VarianceMode::IidUnits;
  if (s == "stationary-times") return VarianceMode::StationaryTimes;
  if (s == "both") return VarianceMode::Both;
  throw InvalidSpec("unknown variance mode: " + s);
}

const char* to_string(VarianceMode m) {
  switch (m) {
    case VarianceMode::Conditional: return "conditional";
    case VarianceMode::IidUnits: return "iid-units";
    case VarianceMode::StationaryTimes: return "stationary-times";
    case VarianceMode::Both: return "both";
  }
  return "?";
}

ApeCorrectionResult ape_correction(const FitResult& fit,
                                   const LikelihoodFamily& f,
                                   const std::vector<PartialEffectSpec>& specs,
                                   int L, VarianceMode mode,
                                   const CorrectionResult* corr) {
  const PanelDataset& d = *fit.data;
  const int N = d.n_units(), T = d.n_periods(), K = d.n_regressors();
  const int E = static_cast<int>(specs.size());
  if (E == 0) throw InvalidSpec("ape_correction: no effects requested");

  CorrectionResult local;
  if (!corr) {
    local = analytical_correct(fit, f, L);
    corr = &local;
  }

  CellCache c = build_cache(fit, f);
  ApeValue ape = compute_ape(fit, f, specs);

  ApeCorrectionResult out;
  out.trim_L = L;
  out.variance_mode = mode;
  out.delta_hat = ape.delta;

  // Per-cell effect derivative surfaces and the Psi projections.
  std::vector<Eigen::MatrixXd> Psi;
  Psi.reserve(E);
  Eigen::MatrixXd dpi_delta(N, T), dpi2_delta(N, T);
  std::vector<Eigen::MatrixXd> dpi2_all(E, Eigen::MatrixXd::Zero(N, T));
  Eigen::MatrixXd Dbd_mean = Eigen::MatrixXd::Zero(K, E);  // mean of D_b Delta
  Eigen::VectorXd x(K);
  const int n_obs = d.n_observed();
  for (int e = 0; e < E; ++e) Psi.push_back(psi_hat(fit, f, specs[e]));
  for (int i = 0; i < N; ++i)
    for (int t = 0; t < T; ++t) {
      if (!d.mask(i, t)) continue;
      for (int k = 0; k < K; ++k) x(k) = d.X[k](i, t);
      Eigen::VectorXd xres = residual_x(d, c, i, t);
      for (int e = 0; e < E; ++e) {
        EffectBundle eb = partial_effect_bundle(f, specs[e], x, fit.state.beta,
                                                fit.pi_hat(i, t));
        dpi2_all[e](i, t) = eb.d_pi2;
        // D_b Delta = d_b Delta - d_pi Delta * Xi
        for (int k = 0; k < K; ++k)
          Dbd_mean(k, e) +=
              (eb.d_beta(k) - eb.d_pi * c.Xi[k](i, t)) / n_obs;
      }
    }

  // Bias components per effect.
  out.B_delta = Eigen::VectorXd::Zero(E);
  out.D_delta = Eigen::VectorXd::Zero(E);
  for (int e = 0; e < E; ++e) {
    for (int i = 0; i < N; ++i) {
      double denom = 0.0;
      int n_i = 0;
      for (int t = 0; t < T; ++t)
        if (d.mask(i, t)) {
          denom += c.d2(i, t);
          ++n_i;
        }
      double num = 0.0;
      for (int j = 0; j <= L; ++j) {
        double lag_sum = 0.0;
        int pairs = 0;
        for (int t = j; t < T; ++t) {
          if (!d.mask(i, t) || !d.mask(i, t - j)) continue;
          lag_sum += c.d1(i, t - j) * c.d2(i, t) * Psi[e](i, t);
          ++pairs;
        }
        if (pairs > 0) num += (static_cast<double>(n_i) / pairs) * lag_sum;
      }
      double second = 0.0;
      for (int t = 0; t < T; ++t)
        if (d.mask(i, t))
          second += dpi2_all[e](i, t) - c.d3(i, t) * Psi[e](i, t);
      out.B_delta(e) += (num - 0.5 * second) / denom / N;
    }
    for (int t = 0; t < T; ++t) {
      double denom = 0.0, num = 0.0;
      for (int i = 0; i < N; ++i) {
        if (!d.mask(i, t)) continue;
        denom += c.d2(i, t);
        num += c.d1(i, t) * c.d2(i, t) * Psi[e](i, t) -
               0.5 * dpi2_all[e](i, t) + 0.5 * c.d3(i, t) * Psi[e](i, t);
      }
      out.D_delta(e) += num / denom / T;
    }
  }

  // APE rebuilt at the corrected beta (effects re-optimized).
  FitResult refit = refit_effects(fit, f, corr->beta_tilde_A);
  out.delta_tilde = compute_ape(refit, f, specs).delta;
  out.delta_tilde_A = out.delta_tilde - out.B_delta / T - out.D_delta / N;

  // Variance: influence terms Gamma_it and the mode-dependent centering of
  // the per-cell effects.
  Eigen::LDLT<Eigen::MatrixXd> wldlt(corr->W_hat);
  Eigen::MatrixXd proj = wldlt.solve(Dbd_mean);  // K x E: W^{-1} (mean D_b D)

  std::vector<Eigen::MatrixXd> centered(E, Eigen::MatrixXd::Zero(N, T));
  Eigen::VectorXi unit_count = Eigen::VectorXi::Zero(N);
  Eigen::VectorXi time_count = Eigen::VectorXi::Zero(T);
  for (int i = 0; i < N; ++i)
    for (int t = 0; t < T; ++t)
      if (d.mask(i, t)) {
        ++unit_count(i);
        ++time_count(t);
      }
  for (int e = 0; e < E; ++e) {
    const Eigen::MatrixXd& cell = ape.cells[e];
    Eigen::MatrixXd& ctr = centered[e];
    switch (mode) {
      case VarianceMode::Conditional:
      case VarianceMode::IidUnits: {
        for (int t = 0; t < T; ++t) {
          double mean = 0.0;
          for (int i = 0; i < N; ++i)
            if (d.mask(i, t)) mean += cell(i, t);
          mean /= time_count(t);
          for (int i = 0; i < N; ++i)
            if (d.mask(i, t)) ctr(i, t) = cell(i, t) - mean;
        }
        break;
      }
      case VarianceMode::StationaryTimes: {
        for (int i = 0; i < N; ++i) {
          double mean = 0.0;
          for (int t = 0; t < T; ++t)
            if (d.mask(i, t)) mean += cell(i, t);
          mean /= unit_count(i);
          for (int t = 0; t < T; ++t)
            if (d.mask(i, t)) ctr(i, t) = cell(i, t) - mean;
        }
        break;
      }
      case VarianceMode::Both: {
        for (int i = 0; i < N; ++i)
          for (int t = 0; t < T; ++t)
            if (d.mask(i, t)) ctr(i, t) = cell(i, t) - out.delta_hat(e);
        break;
      }
    }
  }

  Eigen::MatrixXd V = Eigen::MatrixXd::Zero(E, E);
  // own-unit serial covariance term: sum_i (sum_t ctr)(sum_t ctr)'
  for (int i = 0; i < N; ++i) {
    Eigen::VectorXd rowsum(E);
    for (int e = 0; e < E; ++e) rowsum(e) = centered[e].row(i).sum();
    V += rowsum * rowsum.transpose();
  }
  // cross-unit contemporaneous term (time-effect variants only)
  if (mode == VarianceMode::StationaryTimes || mode == VarianceMode::Both) {
    for (int t = 0; t < T; ++t) {
      Eigen::VectorXd colsum(E);
      for (int e = 0; e < E; ++e) colsum(e) = centered[e].col(t).sum();
      V += colsum * colsum.transpose();
      for (int i = 0; i < N; ++i) {
        Eigen::VectorXd cv(E);
        for (int e = 0; e < E; ++e) cv(e) = centered[e](i, t);
        V -= cv * cv.transpose();
      }
    }
  }
  // estimation-noise term: sum_it Gamma Gamma'
  for (int i = 0; i < N; ++i)
    for (int t = 0; t < T; ++t) {
      if (!d.mask(i, t)) continue;
      Eigen::VectorXd xres = residual_x(d, c, i, t);
      Eigen::VectorXd gamma =
          proj.transpose() * (c.d1(i, t) * xres);  // E-vector
      for (int e = 0; e < E; ++e) gamma(e) -= Psi[e](i, t) * c.d1(i, t);
      V += gamma * gamma.transpose();
    }

  out.V_delta = V;
  out.se = V.diagonal().cwiseMax(0.0).cwiseSqrt() /
           (static_cast<double>(N) * T);
  return out;
}

}  // namespace twofe
