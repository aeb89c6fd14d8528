#include "twofe/simulation.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <memory>
#include <mutex>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "twofe/ape.hpp"
#include "twofe/jackknife.hpp"
#include "twofe/rng.hpp"
#include "twofe/solver.hpp"
#include "twofe/special.hpp"

namespace twofe {

DgpKind dgp_kind_from_string(const std::string& s) {
  if (s == "neyman-scott") return DgpKind::NeymanScott;
  if (s == "static-probit-ar") return DgpKind::StaticProbitAr;
  if (s == "static-probit-trend") return DgpKind::StaticProbitTrend;
  if (s == "dynamic-probit-ar") return DgpKind::DynamicProbitAr;
  if (s == "dynamic-probit-trend") return DgpKind::DynamicProbitTrend;
  if (s == "linear-ar") return DgpKind::LinearAr;
  if (s == "poisson-ar") return DgpKind::PoissonAr;
  throw InvalidSpec("unknown dgp kind: " + s);
}

const char* to_string(DgpKind k) {
  switch (k) {
    case DgpKind::NeymanScott: return "neyman-scott";
    case DgpKind::StaticProbitAr: return "static-probit-ar";
    case DgpKind::StaticProbitTrend: return "static-probit-trend";
    case DgpKind::DynamicProbitAr: return "dynamic-probit-ar";
    case DgpKind::DynamicProbitTrend: return "dynamic-probit-trend";
    case DgpKind::LinearAr: return "linear-ar";
    case DgpKind::PoissonAr: return "poisson-ar";
  }
  return "?";
}

const LikelihoodFamily& dgp_family(const DgpSpec& dgp) {
  switch (dgp.kind) {
    case DgpKind::LinearAr:
    case DgpKind::NeymanScott: return family_by_name("gaussian");
    case DgpKind::PoissonAr: return family_by_name("poisson");
    default: return family_by_name("probit");
  }
}

std::vector<PartialEffectSpec> default_effects(const DgpSpec& dgp) {
  switch (dgp.kind) {
    case DgpKind::NeymanScott: return {};
    case DgpKind::StaticProbitAr:
    case DgpKind::StaticProbitTrend:
    case DgpKind::LinearAr:
      return {{EffectKind::ContinuousDerivative, 0, -1, nullptr}};
    case DgpKind::PoissonAr:
      return {{EffectKind::PoissonTransform, 0, -1, nullptr}};
    case DgpKind::DynamicProbitAr:
    case DgpKind::DynamicProbitTrend:
      // state dependence (lagged outcome handled as a binary regressor)
      // and the APE of the exogenous regressor
      return {{EffectKind::BinaryDifference, 0, -1, nullptr},
              {EffectKind::ContinuousDerivative, 1, -1, nullptr}};
  }
  return {};
}

std::vector<std::string> dgp_quantity_names(const DgpSpec& dgp) {
  switch (dgp.kind) {
    case DgpKind::NeymanScott: return {"beta"};
    case DgpKind::DynamicProbitAr:
    case DgpKind::DynamicProbitTrend:
      return {"beta_Y", "beta_Z", "ape_Y", "ape_Z"};
    default: return {"beta", "ape"};
  }
}

namespace {

PanelDataset blank_panel(int N, int T, int K) {
  PanelDataset d;
  d.unit_ids.resize(N);
  d.time_ids.resize(T);
  for (int i = 0; i < N; ++i) d.unit_ids[i] = std::to_string(i + 1);
  for (int t = 0; t < T; ++t) d.time_ids[t] = std::to_string(t + 1);
  d.y = Eigen::MatrixXd::Zero(N, T);
  d.X.assign(K, Eigen::MatrixXd::Zero(N, T));
  d.mask = MatrixXb::Constant(N, T, true);
  return d;
}

// True APEs of the default effects at the generating parameters; also fills
// the per-cell effect surfaces so the target can be re-averaged over a
// subset of cells.
Eigen::VectorXd true_ape(const PanelDataset& d, const LikelihoodFamily& f,
                         const std::vector<PartialEffectSpec>& specs,
                         const Eigen::VectorXd& beta0,
                         const Eigen::MatrixXd& pi0,
                         std::vector<Eigen::MatrixXd>* cells = nullptr) {
  const int E = static_cast<int>(specs.size());
  Eigen::VectorXd delta = Eigen::VectorXd::Zero(E);
  if (E == 0) return delta;
  const int K = d.n_regressors();
  if (cells) cells->assign(E, Eigen::MatrixXd(d.n_units(), d.n_periods()));
  Eigen::VectorXd x(K);
  for (int i = 0; i < d.n_units(); ++i)
    for (int t = 0; t < d.n_periods(); ++t) {
      for (int k = 0; k < K; ++k) x(k) = d.X[k](i, t);
      for (int e = 0; e < E; ++e) {
        double v =
            partial_effect_bundle(f, specs[e], x, beta0, pi0(i, t)).value;
        delta(e) += v;
        if (cells) (*cells)[e](i, t) = v;
      }
    }
  return delta / (d.n_units() * d.n_periods());
}

}  // namespace

GeneratedPanel generate_with_truth(const DgpSpec& dgp, int rep) {
  const int N = dgp.N, T = dgp.T;
  if (N < 2 || T < 2) throw InvalidSpec("dgp needs N >= 2 and T >= 2");
  Rng rng(dgp.seed, static_cast<std::uint64_t>(rep));
  const double effect_sd = 0.25;  // N(0, 1/16) individual and time effects

  GeneratedPanel out;
  switch (dgp.kind) {
    case DgpKind::NeymanScott: {
      out.data = blank_panel(N, T, 1);
      const double sd = std::sqrt(dgp.beta);
      Eigen::VectorXd alpha(N), gamma(T);
      for (int i = 0; i < N; ++i) alpha(i) = rng.normal(0.0, effect_sd);
      for (int t = 0; t < T; ++t) gamma(t) = rng.normal(0.0, effect_sd);
      for (int i = 0; i < N; ++i)
        for (int t = 0; t < T; ++t)
          out.data.y(i, t) = alpha(i) + gamma(t) + rng.normal(0.0, sd);
      out.beta0 = Eigen::VectorXd::Constant(1, dgp.beta);
      return out;
    }
    case DgpKind::StaticProbitAr:
    case DgpKind::StaticProbitTrend:
    case DgpKind::LinearAr:
    case DgpKind::PoissonAr: {
      const bool trend = dgp.kind == DgpKind::StaticProbitTrend;
      out.data = blank_panel(N, T, 1);
      Eigen::VectorXd alpha(N), gamma(T);
      for (int i = 0; i < N; ++i) alpha(i) = rng.normal(0.0, effect_sd);
      for (int t = 0; t < T; ++t) gamma(t) = rng.normal(0.0, effect_sd);
      Eigen::MatrixXd& X = out.data.X[0];
      const double ups_sd = std::sqrt(trend ? 0.75 : 0.5);
      for (int i = 0; i < N; ++i) {
        double prev = trend ? 0.0 : rng.normal(0.0, 1.0);  // X_{i0}
        for (int t = 0; t < T; ++t) {
          double u = rng.normal(0.0, ups_sd);
          X(i, t) = trend ? 2.0 * (t + 1) / T + alpha(i) + gamma(t) + u
                          : prev / 2.0 + alpha(i) + gamma(t) + u;
          prev = X(i, t);
        }
      }
      Eigen::MatrixXd pi0(N, T);
      for (int i = 0; i < N; ++i)
        for (int t = 0; t < T; ++t) pi0(i, t) = alpha(i) + gamma(t);
      for (int i = 0; i < N; ++i)
        for (int t = 0; t < T; ++t) {
          double eta = X(i, t) * dgp.beta + pi0(i, t);
          if (dgp.kind == DgpKind::LinearAr)
            out.data.y(i, t) = eta + rng.normal(0.0, 1.0);
          else if (dgp.kind == DgpKind::PoissonAr)
            out.data.y(i, t) = rng.poisson(std::exp(eta));
          else
            out.data.y(i, t) = (eta > rng.normal(0.0, 1.0)) ? 1.0 : 0.0;
        }
      out.beta0 = Eigen::VectorXd::Constant(1, dgp.beta);
      out.delta0 = true_ape(out.data, dgp_family(dgp), default_effects(dgp),
                            out.beta0, pi0, &out.delta0_cells);
      return out;
    }
    case DgpKind::DynamicProbitAr:
    case DgpKind::DynamicProbitTrend: {
      const bool trend = dgp.kind == DgpKind::DynamicProbitTrend;
      out.data = blank_panel(N, T, 2);
      Eigen::VectorXd alpha(N), gamma(T + 1);  // gamma(0) is the pre-sample
      for (int i = 0; i < N; ++i) alpha(i) = rng.normal(0.0, effect_sd);
      for (int t = 0; t <= T; ++t) gamma(t) = rng.normal(0.0, effect_sd);
      const double ups_sd = std::sqrt(trend ? 0.75 : 0.5);
      Eigen::MatrixXd& Ylag = out.data.X[0];
      Eigen::MatrixXd& Z = out.data.X[1];
      Eigen::MatrixXd pi0(N, T);
      for (int i = 0; i < N; ++i) {
        double z_prev = trend ? alpha(i) + gamma(0) + rng.normal(0.0, ups_sd)
                              : rng.normal(0.0, 1.0);  // Z_{i0}
        double y_prev =
            (z_prev * dgp.beta_z + alpha(i) + gamma(0) > rng.normal(0.0, 1.0))
                ? 1.0
                : 0.0;
        for (int t = 0; t < T; ++t) {
          double u = rng.normal(0.0, ups_sd);
          double z = trend
                         ? 1.5 * (t + 1) / T + alpha(i) + gamma(t + 1) + u
                         : z_prev / 2.0 + alpha(i) + gamma(t + 1) + u;
          double eta = y_prev * dgp.beta_y + z * dgp.beta_z + alpha(i) +
                       gamma(t + 1);
          double y = (eta > rng.normal(0.0, 1.0)) ? 1.0 : 0.0;
          Ylag(i, t) = y_prev;
          Z(i, t) = z;
          pi0(i, t) = alpha(i) + gamma(t + 1);
          out.data.y(i, t) = y;
          z_prev = z;
          y_prev = y;
        }
      }
      out.beta0 = Eigen::VectorXd(2);
      out.beta0 << dgp.beta_y, dgp.beta_z;
      out.delta0 = true_ape(out.data, dgp_family(dgp), default_effects(dgp),
                            out.beta0, pi0, &out.delta0_cells);
      return out;
    }
  }
  throw InvalidSpec("unknown dgp kind");
}

PanelDataset generate(const DgpSpec& dgp, int rep) {
  return generate_with_truth(dgp, rep).data;
}

namespace {

// Closed-form Gaussian variance estimator: mean squared two-way demeaned
// residual. This is the exact MLE of the Neyman-Scott variance model.
double ns_beta_hat(const Eigen::MatrixXd& Y) {
  Eigen::MatrixXd C = Y;
  C.colwise() -= Y.rowwise().mean().eval();
  C.rowwise() -= C.colwise().mean().eval();
  return C.squaredNorm() / (Y.rows() * Y.cols());
}

double ns_jackknife(const Eigen::MatrixXd& Y) {
  const int N = static_cast<int>(Y.rows());
  const int T = static_cast<int>(Y.cols());
  const int th = (T + 1) / 2, nh = (N + 1) / 2;
  double full = ns_beta_hat(Y);
  double time_mean = 0.5 * (ns_beta_hat(Y.leftCols(th)) +
                            ns_beta_hat(Y.rightCols(T - T / 2)));
  double unit_mean = 0.5 * (ns_beta_hat(Y.topRows(nh)) +
                            ns_beta_hat(Y.bottomRows(N - N / 2)));
  return 3.0 * full - time_mean - unit_mean;
}

}  // namespace

OracleRow neyman_scott_oracle(int N, int T, int jackknife_reps,
                              std::uint64_t seed) {
  if (N < 2 || T < 2) throw InvalidSpec("oracle needs N >= 2 and T >= 2");
  OracleRow row;
  row.N = N;
  row.T = T;
  const double nt = static_cast<double>(N) * T;
  const double dof = static_cast<double>(N - 1) * (T - 1);
  const double a = 1.0 + 1.0 / N + 1.0 / T;  // analytical correction factor
  row.bias_fe = dof / nt - 1.0;
  row.bias_a = a * dof / nt - 1.0;
  row.bias_j = -1.0 / nt;
  row.sd_fe = std::sqrt(2.0 * dof) / nt;
  row.sd_a = a * row.sd_fe;

  // Coverage: NT beta_hat / beta0 ~ chi2(dof) and the CI uses the plug-in
  // standard error beta_hat * sqrt(2/(NT)).
  const double c = 1.96 * std::sqrt(2.0 / nt);
  row.cov_fe = chi2_cdf(nt / (1.0 - c), dof) - chi2_cdf(nt / (1.0 + c), dof);
  row.cov_a =
      chi2_cdf(nt / (a * (1.0 - c)), dof) - chi2_cdf(nt / (a * (1.0 + c)), dof);

  if (jackknife_reps > 0) {
    double sum = 0.0, sumsq = 0.0;
    int hits = 0;
    Eigen::MatrixXd Y(N, T);
    for (int r = 0; r < jackknife_reps; ++r) {
      Rng rng(seed, static_cast<std::uint64_t>(r));
      for (int i = 0; i < N; ++i)
        for (int t = 0; t < T; ++t) Y(i, t) = rng.normal();
      double bj = ns_jackknife(Y);
      // each estimator plugs its own value into V = 2 beta^2 / (NT)
      double se = bj * std::sqrt(2.0 / nt);
      sum += bj;
      sumsq += bj * bj;
      if (std::abs(bj - 1.0) <= 1.96 * se) ++hits;
    }
    row.jack_reps = jackknife_reps;
    row.jack_mean = sum / jackknife_reps;
    row.jack_sd = std::sqrt((sumsq - sum * sum / jackknife_reps) /
                            (jackknife_reps - 1));
    row.jack_cov = static_cast<double>(hits) / jackknife_reps;
  }
  return row;
}

SummaryRow summarize(const std::string& estimator, const std::string& quantity,
                     const std::vector<double>& estimates,
                     const std::vector<double>& truths,
                     const std::vector<double>& ses) {
  const int R = static_cast<int>(estimates.size());
  if (R < 2 || truths.size() != estimates.size() ||
      ses.size() != estimates.size())
    throw InvalidSpec("summarize: needs >= 2 aligned replications");

  SummaryRow row;
  row.estimator = estimator;
  row.quantity = quantity;

  double mean_truth = 0.0, mean_diff = 0.0, mean_se = 0.0;
  int hits = 0;
  for (int r = 0; r < R; ++r) {
    mean_truth += truths[r] / R;
    mean_diff += (estimates[r] - truths[r]) / R;
    mean_se += ses[r] / R;
    if (std::abs(estimates[r] - truths[r]) <= 1.96 * ses[r]) ++hits;
  }
  double var = 0.0;
  for (int r = 0; r < R; ++r) {
    double d = estimates[r] - truths[r] - mean_diff;
    var += d * d / (R - 1);
  }
  row.truth = mean_truth;
  row.bias = mean_diff;
  row.sd = std::sqrt(var);
  row.rmse = std::sqrt(row.bias * row.bias + row.sd * row.sd);
  row.se_sd = (row.sd > 0) ? mean_se / row.sd : 0.0;
  row.coverage = static_cast<double>(hits) / R;
  if (std::abs(mean_truth) > 1e-12) {
    row.relative = true;
    row.bias /= std::abs(mean_truth);
    row.sd /= std::abs(mean_truth);
    row.rmse /= std::abs(mean_truth);
  }
  return row;
}

namespace {

struct RepRecord {
  bool ok = false;
  // estimator x quantity, flattened
  std::vector<double> est, truth, se;
};

// One replication of the generic (solver-based) study.
RepRecord run_generic_rep(const DgpSpec& dgp, const StudyOptions& opts,
                          int rep) {
  RepRecord rec;
  GeneratedPanel gp = generate_with_truth(dgp, rep);
  const LikelihoodFamily& f = dgp_family(dgp);
  std::vector<PartialEffectSpec> effects = default_effects(dgp);
  const int KB = static_cast<int>(gp.beta0.size());
  const int E = static_cast<int>(effects.size());
  const int Q = KB + E;

  // Perfectly classified units/periods are not identified under binary
  // outcomes; drop them from the replication before fitting, as fixed-effects
  // probit/logit practice does. The APE target is re-averaged over the
  // retained cells so the estimand matches the estimation sample.
  if (f.binary_outcome()) {
    PanelDataset kept = drop_constant_outcome(gp.data);
    if (E > 0 && (kept.n_units() != gp.data.n_units() ||
                  kept.n_periods() != gp.data.n_periods())) {
      std::unordered_map<std::string, int> ui, ti;
      for (int i = 0; i < gp.data.n_units(); ++i) ui[gp.data.unit_ids[i]] = i;
      for (int t = 0; t < gp.data.n_periods(); ++t) ti[gp.data.time_ids[t]] = t;
      for (int e = 0; e < E; ++e) {
        double sum = 0.0;
        int n = 0;
        for (int a = 0; a < kept.n_units(); ++a)
          for (int b = 0; b < kept.n_periods(); ++b)
            if (kept.mask(a, b)) {
              sum += gp.delta0_cells[e](ui[kept.unit_ids[a]],
                                        ti[kept.time_ids[b]]);
              ++n;
            }
        gp.delta0(e) = sum / n;
      }
    }
    gp.data = std::move(kept);
  }
  auto data = std::make_shared<PanelDataset>(std::move(gp.data));
  FitResult fr = fit(data, f);

  // SEs of the corrected estimators reuse the plug-ins at the uncorrected
  // fit, so one base correction serves every estimator.
  int base_trim = std::min(1, data->n_periods() - 2);
  for (const auto& e : opts.estimators)
    if (e.kind == "analytical") {
      base_trim = e.trim;
      break;
    }
  CorrectionResult base = analytical_correct(fr, f, base_trim);
  ApeCorrectionResult base_ape;
  if (E > 0)
    base_ape = ape_correction(fr, f, effects, base_trim, opts.variance_mode,
                              &base);

  auto push = [&](const Eigen::VectorXd& beta_est,
                  const Eigen::VectorXd& ape_est) {
    for (int k = 0; k < KB; ++k) {
      rec.est.push_back(beta_est(k));
      rec.truth.push_back(gp.beta0(k));
      rec.se.push_back(base.se(k));
    }
    for (int e = 0; e < E; ++e) {
      rec.est.push_back(ape_est(e));
      rec.truth.push_back(gp.delta0(e));
      rec.se.push_back(base_ape.se(e));
    }
  };

  for (const auto& est : opts.estimators) {
    if (est.kind == "fe") {
      push(fr.state.beta, (E > 0) ? base_ape.delta_hat : Eigen::VectorXd());
    } else if (est.kind == "analytical") {
      if (est.trim == base_trim) {
        push(base.beta_tilde_A,
             (E > 0) ? base_ape.delta_tilde_A : Eigen::VectorXd());
      } else {
        CorrectionResult c = analytical_correct(fr, f, est.trim);
        Eigen::VectorXd ape_est;
        if (E > 0)
          ape_est = ape_correction(fr, f, effects, est.trim,
                                   opts.variance_mode, &c)
                        .delta_tilde_A;
        push(c.beta_tilde_A, ape_est);
      }
    } else if (est.kind == "jackknife") {
      JackknifeOptions jopts;
      jopts.drop_separated = true;
      JackknifeResult jb = spj_beta(data, f, fr.options, jopts);
      Eigen::VectorXd ape_est;
      if (E > 0)
        ape_est = spj_ape(data, f, effects, fr.options, jopts).corrected;
      push(jb.corrected, ape_est);
    } else {
      throw InvalidSpec("unknown estimator kind: " + est.kind);
    }
  }
  (void)Q;
  rec.ok = true;
  return rec;
}

// Neyman-Scott replications use the closed-form variance estimator.
RepRecord run_ns_rep(const DgpSpec& dgp, const StudyOptions& opts, int rep) {
  RepRecord rec;
  GeneratedPanel gp = generate_with_truth(dgp, rep);
  const double nt = static_cast<double>(dgp.N) * dgp.T;
  double bhat = ns_beta_hat(gp.data.y);
  double se = bhat * std::sqrt(2.0 / nt);
  const double a = 1.0 + 1.0 / dgp.N + 1.0 / dgp.T;
  for (const auto& est : opts.estimators) {
    double value;
    if (est.kind == "fe") value = bhat;
    else if (est.kind == "analytical") value = a * bhat;
    else if (est.kind == "jackknife") value = ns_jackknife(gp.data.y);
    else throw InvalidSpec("unknown estimator kind: " + est.kind);
    rec.est.push_back(value);
    rec.truth.push_back(gp.beta0(0));
    rec.se.push_back(se);
  }
  rec.ok = true;
  return rec;
}

std::string estimator_label(const EstimatorSpec& e) {
  if (!e.label.empty()) return e.label;
  if (e.kind == "analytical")
    return "analytical(L=" + std::to_string(e.trim) + ")";
  return e.kind;
}

}  // namespace

SimulationReport run_study(const DgpSpec& dgp, const StudyOptions& opts) {
  if (opts.reps < 2) throw InvalidSpec("run_study needs at least 2 replications");
  if (opts.estimators.empty())
    throw InvalidSpec("run_study needs at least one estimator");

  const int R = opts.reps;
  std::vector<RepRecord> records(R);
  std::atomic<int> next{0};
  std::atomic<int> failures{0};
  std::exception_ptr fatal;
  std::mutex fatal_mu;

  auto worker = [&]() {
    for (;;) {
      int r = next.fetch_add(1);
      if (r >= R) return;
      try {
        records[r] = (dgp.kind == DgpKind::NeymanScott)
                         ? run_ns_rep(dgp, opts, r)
                         : run_generic_rep(dgp, opts, r);
      } catch (const Error&) {
        failures.fetch_add(1);
      } catch (...) {
        std::lock_guard<std::mutex> lock(fatal_mu);
        if (!fatal) fatal = std::current_exception();
        return;
      }
    }
  };

  int n_threads = opts.threads > 0
                      ? opts.threads
                      : static_cast<int>(std::thread::hardware_concurrency());
  n_threads = std::max(1, std::min(n_threads, R));
  std::vector<std::thread> pool;
  for (int w = 0; w < n_threads; ++w) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (fatal) std::rethrow_exception(fatal);

  SimulationReport report;
  report.reps = R;
  report.failures = failures.load();
  report.seed = dgp.seed;
  report.dgp = to_string(dgp.kind);
  report.N = dgp.N;
  report.T = dgp.T;
  if (report.failures > opts.max_failure_rate * R)
    throw StudyUnreliable(std::to_string(report.failures) + " of " +
                          std::to_string(R) + " replications failed");

  std::vector<std::string> quantities = dgp_quantity_names(dgp);
  const int Q = static_cast<int>(quantities.size());
  for (int e = 0; e < static_cast<int>(opts.estimators.size()); ++e) {
    for (int q = 0; q < Q; ++q) {
      std::vector<double> est, truth, se;
      for (const auto& rec : records) {
        if (!rec.ok) continue;
        est.push_back(rec.est[e * Q + q]);
        truth.push_back(rec.truth[e * Q + q]);
        se.push_back(rec.se[e * Q + q]);
      }
      report.rows.push_back(summarize(estimator_label(opts.estimators[e]),
                                      quantities[q], est, truth, se));
    }
  }
  return report;
}

std::string report_table(const SimulationReport& rep) {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%s  N=%d T=%d  reps=%d failures=%d seed=%llu\n",
                rep.dgp.c_str(), rep.N, rep.T, rep.reps, rep.failures,
                static_cast<unsigned long long>(rep.seed));
  os << buf;
  std::snprintf(buf, sizeof(buf), "%-20s %-8s %10s %10s %10s %10s %8s %6s\n",
                "estimator", "quantity", "bias", "sd", "rmse", "se/sd",
                "cov.95", "scale");
  os << buf;
  for (const auto& r : rep.rows) {
    std::snprintf(buf, sizeof(buf),
                  "%-20s %-8s %10.4f %10.4f %10.4f %10.3f %8.3f %6s\n",
                  r.estimator.c_str(), r.quantity.c_str(), r.bias, r.sd,
                  r.rmse, r.se_sd, r.coverage, r.relative ? "rel" : "abs");
    os << buf;
  }
  return os.str();
}

}  // namespace twofe
