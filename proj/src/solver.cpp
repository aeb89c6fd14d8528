#include "twofe/solver.hpp"

#include <Eigen/Cholesky>
#include <cmath>
#include <limits>

namespace twofe {

Normalization normalization_from_string(const std::string& s) {
  if (s == "penalty") return Normalization::Penalty;
  if (s == "drop-first-alpha") return Normalization::DropFirstAlpha;
  if (s == "drop-first-gamma") return Normalization::DropFirstGamma;
  throw InvalidSpec("unknown normalization: " + s);
}

const char* to_string(Normalization n) {
  switch (n) {
    case Normalization::Penalty: return "penalty";
    case Normalization::DropFirstAlpha: return "drop-first-alpha";
    case Normalization::DropFirstGamma: return "drop-first-gamma";
  }
  return "?";
}

StructuredHessian StructuredHessian::from_weights(const Eigen::MatrixXd& w,
                                                  double penalty_b) {
  StructuredHessian h;
  h.cross = w;
  h.diag_alpha = w.rowwise().sum();
  h.diag_gamma = w.colwise().sum().transpose();
  h.penalty_b = penalty_b;
  h.scale = 1.0 / std::sqrt(static_cast<double>(w.rows()) * w.cols());
  return h;
}

namespace {

// Solve ([diag(da), W; W', diag(dg)] + b vv') x = rhs with v = (1', -1')',
// eliminating the alpha block (diagonal plus rank one, inverted by
// Sherman-Morrison) and factorizing the T x T Schur complement.
void solve_core(const Eigen::VectorXd& da, const Eigen::VectorXd& dg,
                const Eigen::MatrixXd& W, double b, const Eigen::VectorXd& ra,
                const Eigen::VectorXd& rg, Eigen::VectorXd& xa,
                Eigen::VectorXd& xg) {
  const int N = static_cast<int>(da.size());
  const int T = static_cast<int>(dg.size());
  if ((da.array() <= 0.0).any() || (dg.array() <= 0.0).any())
    throw NumericalBreakdown("nonpositive diagonal in effects block");

  Eigen::VectorXd invda = da.cwiseInverse();
  const double s = invda.sum();
  const double denom = 1.0 + b * s;
  auto a_solve = [&](const Eigen::VectorXd& u) {
    Eigen::VectorXd v = u.cwiseProduct(invda);
    return (v - (b * v.sum() / denom) * invda).eval();
  };

  // M = A^{-1} C with A = diag(da) + b 11', C = W - b 1 1'.
  Eigen::MatrixXd P = invda.asDiagonal() * W;
  Eigen::RowVectorXd colsum_p = P.colwise().sum();
  Eigen::RowVectorXd q =
      Eigen::RowVectorXd::Constant(T, b) +
      (b / denom) * (colsum_p - Eigen::RowVectorXd::Constant(T, b * s));
  Eigen::MatrixXd M = P - invda * q;

  // Schur complement S = diag(dg) + b 11' - C' M.
  Eigen::MatrixXd S = -W.transpose() * M;
  S += b * Eigen::VectorXd::Ones(T) * M.colwise().sum();  // +b 1 (1'M)
  S += Eigen::MatrixXd::Constant(T, T, b);
  S.diagonal() += dg;

  Eigen::LDLT<Eigen::MatrixXd> ldlt(S);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
    throw NumericalBreakdown("effects Schur complement not positive definite");

  Eigen::VectorXd u = a_solve(ra);
  Eigen::VectorXd rhs_g = rg - (W.transpose() * u -
                                b * Eigen::VectorXd::Constant(T, u.sum()));
  xg = ldlt.solve(rhs_g);
  Eigen::VectorXd cxg =
      W * xg - b * Eigen::VectorXd::Constant(N, xg.sum());
  xa = a_solve(ra - cxg);
}

}  // namespace

Eigen::VectorXd solve_structured(const StructuredHessian& h,
                                 const Eigen::VectorXd& rhs) {
  const int N = static_cast<int>(h.diag_alpha.size());
  const int T = static_cast<int>(h.diag_gamma.size());
  if (rhs.size() != N + T)
    throw InvalidSpec("solve_structured: rhs has wrong length");
  if (!(h.penalty_b > 0.0))
    throw InvalidSpec("solve_structured: penalty constant must be positive");

  Eigen::VectorXd xa, xg;
  if (T <= N) {
    solve_core(h.diag_alpha, h.diag_gamma, h.cross, h.penalty_b, rhs.head(N),
               rhs.tail(T), xa, xg);
  } else {
    // Swap blocks so the dense Schur solve runs on the smaller side; the
    // rank-one penalty is symmetric under the swap since (-v)(-v)' = vv'.
    solve_core(h.diag_gamma, h.diag_alpha, h.cross.transpose(), h.penalty_b,
               rhs.tail(T), rhs.head(N), xg, xa);
  }
  Eigen::VectorXd x(N + T);
  x.head(N) = xa;
  x.tail(T) = xg;
  return x / h.scale;
}

namespace {

// Accumulated gradient and (negative) Hessian blocks at a parameter state.
struct NewtonSystem {
  double loglik = 0.0;    // sum of per-cell log-likelihoods
  double vphi = 0.0;      // sum(alpha) - sum(gamma)
  Eigen::VectorXd g_beta, g_alpha, g_gamma;
  Eigen::MatrixXd Hbb;    // K x K     sum w x x'
  Eigen::MatrixXd Hba;    // K x N     columns: sum_t w x
  Eigen::MatrixXd Hbg;    // K x T
  Eigen::VectorXd da, dg; // effects diagonals (row/column sums of w)
  Eigen::MatrixXd W;      // N x T cell weights -d_pi2 (zero on masked)
};

NewtonSystem assemble(const ParameterState& st, const PanelDataset& d,
                      const LikelihoodFamily& f) {
  const int N = d.n_units(), T = d.n_periods(), K = d.n_regressors();
  NewtonSystem s;
  s.g_beta = Eigen::VectorXd::Zero(K);
  s.g_alpha = Eigen::VectorXd::Zero(N);
  s.g_gamma = Eigen::VectorXd::Zero(T);
  s.Hbb = Eigen::MatrixXd::Zero(K, K);
  s.Hba = Eigen::MatrixXd::Zero(K, N);
  s.Hbg = Eigen::MatrixXd::Zero(K, T);
  s.W = Eigen::MatrixXd::Zero(N, T);

  Eigen::VectorXd x(K);
  for (int i = 0; i < N; ++i)
    for (int t = 0; t < T; ++t) {
      if (!d.mask(i, t)) continue;
      for (int k = 0; k < K; ++k) x(k) = d.X[k](i, t);
      double eta = x.dot(st.beta) + st.alpha(i) + st.gamma(t);
      PiDerivs pd = f.eval(d.y(i, t), eta);
      double w = -pd.d2;
      s.loglik += pd.ll;
      s.g_beta += pd.d1 * x;
      s.g_alpha(i) += pd.d1;
      s.g_gamma(t) += pd.d1;
      s.Hbb += w * x * x.transpose();
      s.Hba.col(i) += w * x;
      s.Hbg.col(t) += w * x;
      s.W(i, t) = w;
    }
  s.da = s.W.rowwise().sum();
  s.dg = s.W.colwise().sum().transpose();
  s.vphi = st.alpha.sum() - st.gamma.sum();
  return s;
}

// Inner solve of the effects block J_phiphi x = (ra, rg) under the chosen
// normalization. For the drop normalizations the dropped coordinate is
// removed by diagonal elimination of its own block.
void inner_solve(const NewtonSystem& s, const FitOptions& opts,
                 const Eigen::VectorXd& ra, const Eigen::VectorXd& rg,
                 Eigen::VectorXd& xa, Eigen::VectorXd& xg) {
  const int N = static_cast<int>(s.da.size());
  const int T = static_cast<int>(s.dg.size());
  switch (opts.normalization) {
    case Normalization::Penalty:
      solve_core(s.da, s.dg, s.W, opts.penalty_b, ra, rg, xa, xg);
      return;
    case Normalization::DropFirstAlpha: {
      if ((s.da.tail(N - 1).array() <= 0.0).any() ||
          (s.dg.array() <= 0.0).any())
        throw NumericalBreakdown("nonpositive diagonal in effects block");
      Eigen::MatrixXd S = Eigen::MatrixXd::Zero(T, T);
      Eigen::VectorXd rhs = rg;
      for (int i = 1; i < N; ++i) {
        S -= s.W.row(i).transpose() * s.W.row(i) / s.da(i);
        rhs -= s.W.row(i).transpose() * (ra(i) / s.da(i));
      }
      S.diagonal() += s.dg;
      Eigen::LDLT<Eigen::MatrixXd> ldlt(S);
      if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
        throw NumericalBreakdown("effects Schur complement not positive definite");
      xg = ldlt.solve(rhs);
      xa = Eigen::VectorXd::Zero(N);
      for (int i = 1; i < N; ++i)
        xa(i) = (ra(i) - s.W.row(i).dot(xg)) / s.da(i);
      return;
    }
    case Normalization::DropFirstGamma: {
      if ((s.dg.tail(T - 1).array() <= 0.0).any() ||
          (s.da.array() <= 0.0).any())
        throw NumericalBreakdown("nonpositive diagonal in effects block");
      Eigen::MatrixXd S = Eigen::MatrixXd::Zero(N, N);
      Eigen::VectorXd rhs = ra;
      for (int t = 1; t < T; ++t) {
        S -= s.W.col(t) * s.W.col(t).transpose() / s.dg(t);
        rhs -= s.W.col(t) * (rg(t) / s.dg(t));
      }
      S.diagonal() += s.da;
      Eigen::LDLT<Eigen::MatrixXd> ldlt(S);
      if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
        throw NumericalBreakdown("effects Schur complement not positive definite");
      xa = ldlt.solve(rhs);
      xg = Eigen::VectorXd::Zero(T);
      for (int t = 1; t < T; ++t)
        xg(t) = (rg(t) - s.W.col(t).dot(xa)) / s.dg(t);
      return;
    }
  }
  throw InvalidSpec("unknown normalization");
}

// Gradient of the (unscaled) penalized objective under the normalization,
// with dropped coordinates zeroed out.
void effective_gradient(const NewtonSystem& s, const FitOptions& opts,
                        Eigen::VectorXd& ga, Eigen::VectorXd& gg) {
  ga = s.g_alpha;
  gg = s.g_gamma;
  switch (opts.normalization) {
    case Normalization::Penalty:
      ga.array() -= opts.penalty_b * s.vphi;
      gg.array() += opts.penalty_b * s.vphi;
      break;
    case Normalization::DropFirstAlpha:
      ga(0) = 0.0;
      break;
    case Normalization::DropFirstGamma:
      gg(0) = 0.0;
      break;
  }
}

struct Direction {
  Eigen::VectorXd dbeta, dalpha, dgamma;
  double grad_norm_scaled = 0.0;
};

Direction solve_direction(const NewtonSystem& s, const PanelDataset& d,
                          const FitOptions& opts) {
  const int N = d.n_units(), T = d.n_periods(), K = d.n_regressors();
  Eigen::VectorXd ga, gg;
  effective_gradient(s, opts, ga, gg);

  const double root_nt = std::sqrt(static_cast<double>(N) * T);
  Direction dir;
  double gmax = s.g_beta.cwiseAbs().maxCoeff();
  gmax = std::max(gmax, ga.cwiseAbs().maxCoeff());
  gmax = std::max(gmax, gg.cwiseAbs().maxCoeff());
  dir.grad_norm_scaled = gmax / root_nt;

  // Block elimination of the effects: Schur complement in beta.
  Eigen::MatrixXd JinvHa(N, K), JinvHg(T, K);
  for (int k = 0; k < K; ++k) {
    Eigen::VectorXd xa, xg;
    inner_solve(s, opts, s.Hba.row(k).transpose(), s.Hbg.row(k).transpose(),
                xa, xg);
    JinvHa.col(k) = xa;
    JinvHg.col(k) = xg;
  }
  Eigen::MatrixXd schur = s.Hbb - s.Hba * JinvHa - s.Hbg * JinvHg;

  Eigen::VectorXd ua, ug;
  inner_solve(s, opts, ga, gg, ua, ug);
  Eigen::VectorXd rhs_beta = s.g_beta - s.Hba * ua - s.Hbg * ug;

  Eigen::LDLT<Eigen::MatrixXd> ldlt(schur);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
    throw NumericalBreakdown("indefinite Schur complement for slope block");
  dir.dbeta = ldlt.solve(rhs_beta);

  Eigen::VectorXd xa, xg;
  inner_solve(s, opts, ga - s.Hba.transpose() * dir.dbeta,
              gg - s.Hbg.transpose() * dir.dbeta, xa, xg);
  dir.dalpha = xa;
  dir.dgamma = xg;
  return dir;
}

double unscaled_objective(const ParameterState& st, const PanelDataset& d,
                          const LikelihoodFamily& f, const FitOptions& opts,
                          double* loglik_out = nullptr) {
  const int K = d.n_regressors();
  Eigen::VectorXd x(K);
  double ll = 0.0;
  for (int i = 0; i < d.n_units(); ++i)
    for (int t = 0; t < d.n_periods(); ++t) {
      if (!d.mask(i, t)) continue;
      for (int k = 0; k < K; ++k) x(k) = d.X[k](i, t);
      ll += f.eval(d.y(i, t), x.dot(st.beta) + st.alpha(i) + st.gamma(t)).ll;
    }
  if (loglik_out) *loglik_out = ll;
  if (opts.normalization == Normalization::Penalty) {
    double vphi = st.alpha.sum() - st.gamma.sum();
    ll -= 0.5 * opts.penalty_b * vphi * vphi;
  }
  return ll;
}

ParameterState damped_update(const ParameterState& st, const Direction& dir,
                             const PanelDataset& d, const LikelihoodFamily& f,
                             const FitOptions& opts, double obj0,
                             double* obj_out, double* step_out) {
  double step = 1.0;
  ParameterState trial = st;
  const double slack = 1e-12 * (1.0 + std::abs(obj0));
  for (int h = 0; h <= opts.max_halvings; ++h, step *= 0.5) {
    trial.beta = st.beta + step * dir.dbeta;
    trial.alpha = st.alpha + step * dir.dalpha;
    trial.gamma = st.gamma + step * dir.dgamma;
    double obj;
    try {
      obj = unscaled_objective(trial, d, f, opts);
    } catch (const NumericOverflow&) {
      continue;  // step jumped outside the numerically safe region
    }
    if (std::isfinite(obj) && obj >= obj0 - slack) {
      if (obj_out) *obj_out = obj;
      if (step_out) *step_out = step;
      return trial;
    }
  }
  throw NumericalBreakdown("line search failed to improve the objective");
}

void check_separation(const ParameterState& st, const FitOptions& opts) {
  double m = std::max(st.alpha.cwiseAbs().maxCoeff(),
                      st.gamma.cwiseAbs().maxCoeff());
  if (m > opts.effect_bound)
    throw SeparationError("effect estimates diverging (|effect| > " +
                          std::to_string(opts.effect_bound) +
                          "); outcome is likely separated");
}

void check_binary_separation(const PanelDataset& d,
                             const LikelihoodFamily& f) {
  if (!f.binary_outcome()) return;
  ValidationReport rep = validate(d);
  if (rep.separation_risk())
    throw SeparationError(
        std::to_string(rep.constant_outcome_units) + " unit(s) and " +
        std::to_string(rep.constant_outcome_periods) +
        " period(s) have a constant binary outcome; their effects are not "
        "identified");
}

ParameterState start_state(const PanelDataset& d, const LikelihoodFamily& f,
                           const FitOptions& opts) {
  const int N = d.n_units(), T = d.n_periods();
  ParameterState st;
  st.normalization = opts.normalization;
  st.beta = Eigen::VectorXd::Zero(d.n_regressors());
  st.alpha.resize(N);
  st.gamma = Eigen::VectorXd::Zero(T);
  for (int i = 0; i < N; ++i) {
    double sum = 0.0;
    int n = 0;
    for (int t = 0; t < T; ++t)
      if (d.mask(i, t)) {
        sum += d.y(i, t);
        ++n;
      }
    st.alpha(i) = f.start_link(sum / n);
  }
  switch (opts.normalization) {
    case Normalization::Penalty: {
      double shift = (st.alpha.sum() - st.gamma.sum()) / (N + T);
      st.alpha.array() -= shift;
      st.gamma.array() += shift;
      break;
    }
    case Normalization::DropFirstAlpha: {
      double a0 = st.alpha(0);
      st.alpha.array() -= a0;
      st.gamma.array() += a0;
      break;
    }
    case Normalization::DropFirstGamma:
      break;  // gamma starts at zero already
  }
  return st;
}

}  // namespace

double objective(const ParameterState& state, const PanelDataset& d,
                 const LikelihoodFamily& f, const FitOptions& opts) {
  double root_nt = std::sqrt(static_cast<double>(d.n_units()) * d.n_periods());
  return unscaled_objective(state, d, f, opts) / root_nt;
}

ParameterState newton_step(const ParameterState& state, const PanelDataset& d,
                           const LikelihoodFamily& f, const FitOptions& opts,
                           double* objective_out, double* grad_norm_out,
                           double* step_norm_out) {
  NewtonSystem s = assemble(state, d, f);
  Direction dir = solve_direction(s, d, opts);
  if (grad_norm_out) *grad_norm_out = dir.grad_norm_scaled;
  double obj0 = s.loglik;
  if (opts.normalization == Normalization::Penalty)
    obj0 -= 0.5 * opts.penalty_b * s.vphi * s.vphi;
  double obj = obj0, step = 0.0;
  ParameterState next =
      damped_update(state, dir, d, f, opts, obj0, &obj, &step);
  if (objective_out) *objective_out = obj;
  if (step_norm_out) {
    double m = std::max({dir.dbeta.cwiseAbs().maxCoeff(),
                         dir.dalpha.cwiseAbs().maxCoeff(),
                         dir.dgamma.cwiseAbs().maxCoeff()});
    *step_norm_out = step * m;
  }
  return next;
}

FitResult fit(std::shared_ptr<const PanelDataset> d, const LikelihoodFamily& f,
              const FitOptions& opts, const ParameterState* start) {
  d->check();
  check_binary_separation(*d, f);

  const double root_nt =
      std::sqrt(static_cast<double>(d->n_units()) * d->n_periods());
  ParameterState st = start ? *start : start_state(*d, f, opts);
  st.normalization = opts.normalization;

  FitResult res;
  res.data = d;
  res.family = f.name();
  res.options = opts;

  for (int it = 0; it < opts.max_iterations; ++it) {
    NewtonSystem s = assemble(st, *d, f);
    Direction dir = solve_direction(s, *d, opts);
    res.gradient_norm = dir.grad_norm_scaled;
    double obj_scaled = s.loglik;
    if (opts.normalization == Normalization::Penalty)
      obj_scaled -= 0.5 * opts.penalty_b * s.vphi * s.vphi;
    obj_scaled /= root_nt;
    if (dir.grad_norm_scaled <= opts.tol_grad * (1.0 + std::abs(obj_scaled))) {
      res.converged = true;
      res.loglik = s.loglik;
      break;
    }
    double obj0 = obj_scaled * root_nt;
    st = damped_update(st, dir, *d, f, opts, obj0, nullptr, nullptr);
    check_separation(st, opts);
    res.iterations = it + 1;
  }
  if (!res.converged)
    throw NotConverged("no convergence after " +
                       std::to_string(opts.max_iterations) +
                       " iterations (gradient norm " +
                       std::to_string(res.gradient_norm) + ")");

  res.state = st;
  res.pi_hat.resize(d->n_units(), d->n_periods());
  for (int i = 0; i < d->n_units(); ++i)
    for (int t = 0; t < d->n_periods(); ++t)
      res.pi_hat(i, t) = st.alpha(i) + st.gamma(t);
  return res;
}

FitResult refit_effects(const FitResult& base, const LikelihoodFamily& f,
                        const Eigen::VectorXd& beta) {
  const PanelDataset& d = *base.data;
  const FitOptions& opts = base.options;
  const double root_nt =
      std::sqrt(static_cast<double>(d.n_units()) * d.n_periods());

  ParameterState st = base.state;
  st.beta = beta;

  FitResult res;
  res.data = base.data;
  res.family = f.name();
  res.options = opts;

  for (int it = 0; it < opts.max_iterations; ++it) {
    NewtonSystem s = assemble(st, d, f);
    Eigen::VectorXd ga, gg;
    effective_gradient(s, opts, ga, gg);
    double gmax = std::max(ga.cwiseAbs().maxCoeff(), gg.cwiseAbs().maxCoeff());
    res.gradient_norm = gmax / root_nt;
    double obj0 = s.loglik;
    if (opts.normalization == Normalization::Penalty)
      obj0 -= 0.5 * opts.penalty_b * s.vphi * s.vphi;
    if (res.gradient_norm <=
        opts.tol_grad * (1.0 + std::abs(obj0 / root_nt))) {
      res.converged = true;
      res.loglik = s.loglik;
      break;
    }
    Direction dir;
    dir.dbeta = Eigen::VectorXd::Zero(d.n_regressors());
    inner_solve(s, opts, ga, gg, dir.dalpha, dir.dgamma);
    st = damped_update(st, dir, d, f, opts, obj0, nullptr, nullptr);
    check_separation(st, opts);
    res.iterations = it + 1;
  }
  if (!res.converged)
    throw NotConverged("effects refit did not converge");

  res.state = st;
  res.pi_hat.resize(d.n_units(), d.n_periods());
  for (int i = 0; i < d.n_units(); ++i)
    for (int t = 0; t < d.n_periods(); ++t)
      res.pi_hat(i, t) = st.alpha(i) + st.gamma(t);
  return res;
}

}  // namespace twofe
