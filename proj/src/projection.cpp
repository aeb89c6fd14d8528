#include "twofe/projection.hpp"

#include <cmath>

#include "twofe/family.hpp"
#include "twofe/panel.hpp"
#include "twofe/solver.hpp"

namespace twofe {

TwoWayProjection project(const Eigen::MatrixXd& w, const Eigen::MatrixXd& A,
                         double tol, int max_sweeps_factor) {
  const int N = static_cast<int>(w.rows());
  const int T = static_cast<int>(w.cols());
  if (A.rows() != N || A.cols() != T)
    throw InvalidSpec("project: weight and data dimensions differ");
  if ((w.array() < 0.0).any())
    throw InvalidSpec("project: weights must be nonnegative");

  Eigen::VectorXd rw = w.rowwise().sum();
  Eigen::VectorXd cw = w.colwise().sum();
  for (int i = 0; i < N; ++i)
    if (rw(i) <= 0.0)
      throw DegenerateProjection("unit " + std::to_string(i) +
                                 " has no positive weight");
  for (int t = 0; t < T; ++t)
    if (cw(t) <= 0.0)
      throw DegenerateProjection("period " + std::to_string(t) +
                                 " has no positive weight");

  TwoWayProjection out;
  out.a = Eigen::VectorXd::Zero(N);
  out.g = Eigen::VectorXd::Zero(T);

  const double scale_ref = 1.0 + A.cwiseAbs().maxCoeff();
  const int max_sweeps = max_sweeps_factor * (N + T);
  bool converged = false;
  for (int s = 0; s < max_sweeps; ++s) {
    Eigen::VectorXd a_old = out.a, g_old = out.g;
    // a_i <- weighted row mean of (A - g), then g_t <- weighted column mean
    // of (A - a): one Gauss-Seidel sweep of the two-way normal equations.
    Eigen::MatrixXd R = A;
    R.rowwise() -= out.g.transpose();
    out.a = w.cwiseProduct(R).rowwise().sum().cwiseQuotient(rw);
    R = A;
    R.colwise() -= out.a;
    out.g = w.cwiseProduct(R).colwise().sum().transpose().cwiseQuotient(cw);
    ++out.sweeps;
    double delta = (out.a - a_old).cwiseAbs().maxCoeff() +
                   (out.g - g_old).cwiseAbs().maxCoeff();
    if (delta <= tol * scale_ref) {
      converged = true;
      break;
    }
  }

  if (!converged) {
    // Slowly mixing weight pattern: solve the normal equations directly.
    // The rank-one augmented system is nonsingular and its right-hand side
    // is orthogonal to (1_N', -1_T')', so the solution automatically
    // satisfies sum(a) == sum(g).
    StructuredHessian h;
    h.cross = w;
    h.diag_alpha = rw;
    h.diag_gamma = cw;
    h.penalty_b = 1.0;
    h.scale = 1.0;
    Eigen::VectorXd rhs(N + T);
    rhs.head(N) = (w.cwiseProduct(A)).rowwise().sum();
    rhs.tail(T) = (w.cwiseProduct(A)).colwise().sum().transpose();
    Eigen::VectorXd x = solve_structured(h, rhs);
    out.a = x.head(N);
    out.g = x.tail(T);
    out.used_dense_fallback = true;
  } else {
    // Normalize sum(a) == sum(g); leaves fitted values unchanged.
    double shift = (out.a.sum() - out.g.sum()) / (N + T);
    out.a.array() -= shift;
    out.g.array() += shift;
  }

  out.fitted.setZero(N, T);
  out.residual.setZero(N, T);
  for (int i = 0; i < N; ++i)
    for (int t = 0; t < T; ++t)
      if (w(i, t) > 0.0) {
        out.fitted(i, t) = out.a(i) + out.g(t);
        out.residual(i, t) = A(i, t) - out.fitted(i, t);
      }
  return out;
}

namespace {

// Per-cell -d_pi2 weights and the ratio array to be projected; the fitted
// values of the weighted projection are what the bias formulas need.
Eigen::MatrixXd project_ratio(const FitResult& fit,
                              const Eigen::MatrixXd& numerator,
                              const Eigen::MatrixXd& d2) {
  const PanelDataset& d = *fit.data;
  const int N = d.n_units(), T = d.n_periods();
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(N, T);
  Eigen::MatrixXd ratio = Eigen::MatrixXd::Zero(N, T);
  for (int i = 0; i < N; ++i)
    for (int t = 0; t < T; ++t)
      if (d.mask(i, t)) {
        w(i, t) = -d2(i, t);
        if (!(w(i, t) > 0.0))
          throw DegenerateProjection("nonpositive information weight at cell");
        ratio(i, t) = numerator(i, t) / d2(i, t);
      }
  return project(w, ratio).fitted;
}

}  // namespace

Eigen::MatrixXd xi_hat(const FitResult& fit, const LikelihoodFamily& f, int k) {
  const PanelDataset& d = *fit.data;
  if (k < 0 || k >= d.n_regressors())
    throw InvalidSpec("xi_hat: regressor index out of range");
  const int N = d.n_units(), T = d.n_periods();
  Eigen::MatrixXd num(N, T), d2(N, T);
  num.setZero();
  d2.setZero();
  for (int i = 0; i < N; ++i)
    for (int t = 0; t < T; ++t)
      if (d.mask(i, t)) {
        double eta = 0.0;
        for (int kk = 0; kk < d.n_regressors(); ++kk)
          eta += d.X[kk](i, t) * fit.state.beta(kk);
        eta += fit.pi_hat(i, t);
        PiDerivs pd = f.eval(d.y(i, t), eta);
        d2(i, t) = pd.d2;
        num(i, t) = pd.d2 * d.X[k](i, t);  // d_{beta_k pi} l
      }
  return project_ratio(fit, num, d2);
}

Eigen::MatrixXd psi_hat(const FitResult& fit, const LikelihoodFamily& f,
                        const PartialEffectSpec& spec) {
  const PanelDataset& d = *fit.data;
  const int N = d.n_units(), T = d.n_periods(), K = d.n_regressors();
  Eigen::MatrixXd num(N, T), d2(N, T);
  num.setZero();
  d2.setZero();
  Eigen::VectorXd x(K);
  for (int i = 0; i < N; ++i)
    for (int t = 0; t < T; ++t)
      if (d.mask(i, t)) {
        for (int k = 0; k < K; ++k) x(k) = d.X[k](i, t);
        double eta = x.dot(fit.state.beta) + fit.pi_hat(i, t);
        PiDerivs pd = f.eval(d.y(i, t), eta);
        EffectBundle eb =
            partial_effect_bundle(f, spec, x, fit.state.beta, fit.pi_hat(i, t));
        d2(i, t) = pd.d2;
        num(i, t) = eb.d_pi;
      }
  return project_ratio(fit, num, d2);
}

}  // namespace twofe
