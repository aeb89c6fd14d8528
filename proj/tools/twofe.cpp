// twofe: fixed-effects estimation for nonlinear panels with two-way effects,
// with analytical and split-panel-jackknife bias corrections.
#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include "twofe/ape.hpp"
#include "twofe/bias.hpp"
#include "twofe/jackknife.hpp"
#include "twofe/panel.hpp"
#include "twofe/simulation.hpp"
#include "twofe/solver.hpp"

using nlohmann::json;
using namespace twofe;

namespace {

json to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

json to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (int i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (int j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(r);
  }
  return rows;
}

// "k:kind" with a 1-based regressor index, e.g. "1:deriv", "2:diff".
PartialEffectSpec parse_effect(const std::string& s) {
  auto pos = s.find(':');
  if (pos == std::string::npos)
    throw CLI::ValidationError("--effect", "expected k:kind");
  PartialEffectSpec spec;
  spec.k = std::stoi(s.substr(0, pos)) - 1;
  spec.kind = effect_kind_from_string(s.substr(pos + 1));
  return spec;
}

void emit(const json& doc, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << doc.dump(2) << std::endl;
  } else {
    std::ofstream out(out_path);
    if (!out) throw ParseError("cannot open output file: " + out_path);
    out << doc.dump(2) << std::endl;
  }
}

int default_threads(int flag_value) {
  if (flag_value > 0) return flag_value;
  if (const char* env = std::getenv("TWOFE_THREADS")) {
    int v = std::atoi(env);
    if (v > 0) return v;
  }
  return 0;  // library default: hardware concurrency
}

struct EstimateConfig {
  std::string input, out, family = "probit";
  std::string correction = "analytical";
  std::string variance_mode = "both";
  std::string normalization = "penalty";
  std::vector<std::string> effects;
  int trim = 1;
  bool no_bartlett = false;
  std::uint64_t seed = 1;
  CsvSchema schema;
};

int run_estimate(const EstimateConfig& cfg) {
  auto data = std::make_shared<PanelDataset>(load_csv(cfg.input, cfg.schema));
  const LikelihoodFamily& fam = family_by_name(cfg.family);
  FitOptions opts;
  opts.normalization = normalization_from_string(cfg.normalization);

  FitResult fr = fit(data, fam, opts);

  json doc;
  doc["beta_hat"] = to_json(fr.state.beta);
  doc["diagnostics"] = {
      {"converged", fr.converged},
      {"iterations", fr.iterations},
      {"gradient_norm", fr.gradient_norm},
      {"normalization", to_string(opts.normalization)},
      {"trim", cfg.trim},
      {"family", cfg.family},
      {"n_units", data->n_units()},
      {"n_periods", data->n_periods()},
      {"n_observed", data->n_observed()},
  };

  bool analytical =
      cfg.correction == "analytical" || cfg.correction == "both";
  bool jackknife = cfg.correction == "jackknife" || cfg.correction == "both";

  CorrectionResult corr = analytical_correct(fr, fam, cfg.trim, cfg.no_bartlett);
  doc["W_hat"] = to_json(corr.W_hat);
  doc["B_hat"] = to_json(corr.B_hat);
  doc["D_hat"] = to_json(corr.D_hat);
  doc["vcov"] = to_json(corr.vcov);
  doc["se"] = to_json(corr.se);
  if (analytical) doc["beta_tilde_A"] = to_json(corr.beta_tilde_A);
  if (jackknife) {
    JackknifeOptions jopts;
    jopts.seed = cfg.seed;
    JackknifeResult jr = spj_beta(data, fam, opts, jopts);
    doc["beta_tilde_J"] = to_json(jr.corrected);
    doc["jackknife"] = {
        {"half_time", {to_json(jr.half_time_estimates.first),
                       to_json(jr.half_time_estimates.second)}},
        {"partitions", jr.partitions_used},
    };
  }

  if (!cfg.effects.empty()) {
    std::vector<PartialEffectSpec> specs;
    for (const auto& s : cfg.effects) specs.push_back(parse_effect(s));
    ApeCorrectionResult ape =
        ape_correction(fr, fam, specs, cfg.trim,
                       variance_mode_from_string(cfg.variance_mode), &corr);
    json apes = json::array();
    for (int e = 0; e < ape.delta_hat.size(); ++e) {
      json one;
      one["spec"] = cfg.effects[e];
      one["delta_hat"] = ape.delta_hat(e);
      one["se"] = ape.se(e);
      if (analytical) {
        one["delta_tilde_A"] = ape.delta_tilde_A(e);
        one["B_delta"] = ape.B_delta(e);
        one["D_delta"] = ape.D_delta(e);
      }
      apes.push_back(one);
    }
    if (jackknife) {
      JackknifeOptions jopts;
      jopts.seed = cfg.seed;
      JackknifeResult ja = spj_ape(data, fam, specs, opts, jopts);
      for (int e = 0; e < ja.corrected.size(); ++e)
        apes[e]["delta_tilde_J"] = ja.corrected(e);
    }
    doc["apes"] = std::move(apes);
    doc["variance_mode"] = cfg.variance_mode;
  }

  emit(doc, cfg.out);
  return 0;
}

json report_to_json(const SimulationReport& rep) {
  json doc;
  doc["dgp"] = rep.dgp;
  doc["N"] = rep.N;
  doc["T"] = rep.T;
  doc["reps"] = rep.reps;
  doc["failures"] = rep.failures;
  doc["seed"] = rep.seed;
  json rows = json::array();
  for (const auto& r : rep.rows) {
    rows.push_back({{"estimator", r.estimator},
                    {"quantity", r.quantity},
                    {"truth", r.truth},
                    {"bias", r.bias},
                    {"sd", r.sd},
                    {"rmse", r.rmse},
                    {"se_sd", r.se_sd},
                    {"coverage", r.coverage},
                    {"relative", r.relative}});
  }
  doc["rows"] = std::move(rows);
  return doc;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fixed-effects panel estimation with two-way effects and "
               "incidental-parameter bias corrections"};
  app.require_subcommand(1);

  // ---- estimate ----
  EstimateConfig ecfg;
  auto* est = app.add_subcommand("estimate", "fit a model on CSV panel data");
  est->add_option("input", ecfg.input, "CSV file (columns id,time,y,x...)")
      ->required();
  est->add_option("--family", ecfg.family, "probit|logit|poisson|gaussian")
      ->check(CLI::IsMember({"probit", "logit", "poisson", "gaussian"}));
  est->add_option("--correction", ecfg.correction,
                  "none|analytical|jackknife|both")
      ->check(CLI::IsMember({"none", "analytical", "jackknife", "both"}));
  est->add_option("--trim", ecfg.trim, "lag trimming L for the bias estimate");
  est->add_option("--effect", ecfg.effects,
                  "partial effect spec k:kind (kind: diff|deriv|poisson)");
  est->add_option("--variance-mode", ecfg.variance_mode,
                  "conditional|iid-units|stationary-times|both")
      ->check(CLI::IsMember(
          {"conditional", "iid-units", "stationary-times", "both"}));
  est->add_option("--normalization", ecfg.normalization,
                  "penalty|drop-first-alpha|drop-first-gamma")
      ->check(CLI::IsMember(
          {"penalty", "drop-first-alpha", "drop-first-gamma"}));
  est->add_flag("--no-bartlett", ecfg.no_bartlett,
                "conditional-moment bias/variance expressions");
  est->add_option("--seed", ecfg.seed, "seed for jackknife partitions");
  est->add_option("--out", ecfg.out, "output JSON path (default stdout)");
  est->add_option("--id-column", ecfg.schema.id, "unit id column name");
  est->add_option("--time-column", ecfg.schema.time, "time column name");
  est->add_option("--y-column", ecfg.schema.y, "outcome column name");
  est->add_option("--x-columns", ecfg.schema.x,
                  "regressor columns (default: all remaining)");

  // ---- simulate ----
  DgpSpec dgp;
  std::string dgp_name = "static-probit-ar";
  std::string sim_out;
  std::vector<std::string> estimators = {"fe", "analytical", "jackknife"};
  std::vector<int> trims;
  std::string sim_variance_mode = "both";
  int reps = 500, threads = 0;
  auto* sim = app.add_subcommand("simulate", "run a Monte Carlo study");
  sim->add_option("--dgp", dgp_name,
                  "neyman-scott|static-probit-ar|static-probit-trend|"
                  "dynamic-probit-ar|dynamic-probit-trend|linear-ar|poisson-ar");
  sim->add_option("--N", dgp.N, "number of units");
  sim->add_option("--T", dgp.T, "number of periods");
  sim->add_option("--beta", dgp.beta, "true slope (static designs)");
  sim->add_option("--beta-y", dgp.beta_y, "true feedback slope (dynamic)");
  sim->add_option("--beta-z", dgp.beta_z, "true exogenous slope (dynamic)");
  sim->add_option("--reps", reps, "number of replications");
  sim->add_option("--seed", dgp.seed, "study seed");
  sim->add_option("--threads", threads, "worker threads (default: all cores)");
  sim->add_option("--estimators", estimators,
                  "subset of fe analytical jackknife");
  sim->add_option("--trim", trims,
                  "trim L per analytical estimator (repeatable)");
  sim->add_option("--variance-mode", sim_variance_mode,
                  "conditional|iid-units|stationary-times|both");
  sim->add_option("--out", sim_out,
                  "output path prefix (<prefix>.json and <prefix>.txt)");

  // ---- oracle ----
  int oN = 10, oT = 10, jack_reps = 0;
  std::uint64_t oracle_seed = 1;
  std::string oracle_out;
  auto* ora = app.add_subcommand(
      "oracle", "closed-form Neyman-Scott bias/coverage table row");
  ora->add_option("--N", oN, "number of units");
  ora->add_option("--T", oT, "number of periods");
  ora->add_option("--jack-reps", jack_reps,
                  "simulate the jackknife row with this many replications");
  ora->add_option("--seed", oracle_seed, "seed for the jackknife simulation");
  ora->add_option("--out", oracle_out, "output JSON path (default stdout)");

  // ---- test ----
  std::string test_input, test_family = "probit", test_axis = "time", test_out;
  CsvSchema test_schema;
  auto* tst = app.add_subcommand("test", "Chow-type homogeneity test");
  tst->add_option("input", test_input, "CSV file")->required();
  tst->add_option("--family", test_family, "probit|logit|poisson|gaussian")
      ->check(CLI::IsMember({"probit", "logit", "poisson", "gaussian"}));
  tst->add_option("--axis", test_axis, "time|cross-section")
      ->check(CLI::IsMember({"time", "cross-section"}));
  tst->add_option("--out", test_out, "output JSON path (default stdout)");
  tst->add_option("--id-column", test_schema.id, "unit id column name");
  tst->add_option("--time-column", test_schema.time, "time column name");
  tst->add_option("--y-column", test_schema.y, "outcome column name");
  tst->add_option("--x-columns", test_schema.x, "regressor columns");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 4;
  }

  try {
    if (est->parsed()) return run_estimate(ecfg);

    if (sim->parsed()) {
      dgp.kind = dgp_kind_from_string(dgp_name);
      StudyOptions opts;
      opts.reps = reps;
      opts.threads = default_threads(threads);
      opts.variance_mode = variance_mode_from_string(sim_variance_mode);
      opts.estimators.clear();
      for (const auto& kind : estimators) {
        if (kind == "analytical") {
          if (trims.empty()) trims.push_back(1);
          for (int L : trims) opts.estimators.push_back({kind, L, ""});
        } else {
          opts.estimators.push_back({kind, 0, ""});
        }
      }
      SimulationReport rep = run_study(dgp, opts);
      json doc = report_to_json(rep);
      if (sim_out.empty()) {
        std::cout << doc.dump(2) << "\n" << report_table(rep);
      } else {
        emit(doc, sim_out + ".json");
        std::ofstream txt(sim_out + ".txt");
        txt << report_table(rep);
      }
      return 0;
    }

    if (ora->parsed()) {
      OracleRow row = neyman_scott_oracle(oN, oT, jack_reps, oracle_seed);
      json doc = {
          {"N", row.N},
          {"T", row.T},
          {"bias_fe", row.bias_fe},
          {"bias_analytical", row.bias_a},
          {"bias_jackknife", row.bias_j},
          {"sd_fe", row.sd_fe},
          {"sd_analytical", row.sd_a},
          {"coverage_fe", row.cov_fe},
          {"coverage_analytical", row.cov_a},
      };
      if (row.jack_reps > 0) {
        doc["jackknife_simulation"] = {{"reps", row.jack_reps},
                                       {"mean", row.jack_mean},
                                       {"sd", row.jack_sd},
                                       {"coverage", row.jack_cov}};
      }
      emit(doc, oracle_out);
      return 0;
    }

    if (tst->parsed()) {
      auto data =
          std::make_shared<PanelDataset>(load_csv(test_input, test_schema));
      HomogeneityTest ht =
          homogeneity_test(data, family_by_name(test_family), test_axis);
      json doc = {
          {"axis", test_axis},
          {"statistic", ht.statistic},
          {"dof", ht.dof},
          {"p_value", ht.p_value},
          {"beta_first", to_json(ht.beta_first)},
          {"beta_second", to_json(ht.beta_second)},
      };
      emit(doc, test_out);
      return 0;
    }
  } catch (const StudyUnreliable& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 5;
  } catch (const SeparationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const JackknifeSubfitError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const NotConverged& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const NumericalBreakdown& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const InvalidTrim& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
