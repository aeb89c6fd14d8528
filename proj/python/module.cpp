// Python bindings for the two-way fixed-effects estimation library.
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "twofe/ape.hpp"
#include "twofe/bias.hpp"
#include "twofe/jackknife.hpp"
#include "twofe/panel.hpp"
#include "twofe/simulation.hpp"
#include "twofe/solver.hpp"

namespace py = pybind11;
using namespace twofe;

namespace {

std::vector<double> to_vec(const Eigen::VectorXd& v) {
  return {v.data(), v.data() + v.size()};
}

std::vector<std::vector<double>> to_mat(const Eigen::MatrixXd& m) {
  std::vector<std::vector<double>> out(m.rows());
  for (int i = 0; i < m.rows(); ++i) {
    out[i].resize(m.cols());
    for (int j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
  }
  return out;
}

// (kind, k) pairs, e.g. [("deriv", 0), ("diff", 1)].
std::vector<PartialEffectSpec> parse_effects(
    const std::vector<std::pair<std::string, int>>& effects) {
  std::vector<PartialEffectSpec> specs;
  for (const auto& [kind, k] : effects) {
    PartialEffectSpec s;
    s.kind = effect_kind_from_string(kind);
    s.k = k;
    specs.push_back(s);
  }
  return specs;
}

struct PyFit {
  FitResult result;
  std::string family;
};

FitOptions make_options(const std::string& normalization) {
  FitOptions o;
  o.normalization = normalization_from_string(normalization);
  return o;
}

py::dict correction_dict(const CorrectionResult& c) {
  py::dict d;
  d["W_hat"] = to_mat(c.W_hat);
  d["B_hat"] = to_vec(c.B_hat);
  d["D_hat"] = to_vec(c.D_hat);
  d["beta_tilde_A"] = to_vec(c.beta_tilde_A);
  d["vcov"] = to_mat(c.vcov);
  d["se"] = to_vec(c.se);
  d["trim"] = c.trim_L;
  d["no_bartlett"] = c.no_bartlett;
  return d;
}

py::dict jackknife_dict(const JackknifeResult& j) {
  py::dict d;
  d["corrected"] = to_vec(j.corrected);
  d["full"] = to_vec(j.full_estimate);
  d["half_time"] = py::make_tuple(to_vec(j.half_time_estimates.first),
                                  to_vec(j.half_time_estimates.second));
  std::vector<std::vector<double>> halves;
  for (const auto& e : j.half_unit_estimates) halves.push_back(to_vec(e));
  d["half_units"] = halves;
  d["partitions"] = j.partitions_used;
  return d;
}

}  // namespace

PYBIND11_MODULE(_twofe, m) {
  m.doc() =
      "Fixed-effects estimation for nonlinear panel models with additive "
      "two-way effects, with analytical and split-panel-jackknife bias "
      "corrections.";

  py::register_exception<Error>(m, "TwofeError");

  py::class_<PanelDataset, std::shared_ptr<PanelDataset>>(m, "Panel")
      .def_property_readonly("n_units", &PanelDataset::n_units)
      .def_property_readonly("n_periods", &PanelDataset::n_periods)
      .def_property_readonly("n_regressors", &PanelDataset::n_regressors)
      .def_property_readonly("n_observed", &PanelDataset::n_observed)
      .def_property_readonly("balanced", &PanelDataset::balanced)
      .def_property_readonly(
          "unit_ids", [](const PanelDataset& d) { return d.unit_ids; })
      .def_property_readonly(
          "time_ids", [](const PanelDataset& d) { return d.time_ids; });

  py::class_<PyFit>(m, "Fit")
      .def_property_readonly(
          "beta", [](const PyFit& f) { return to_vec(f.result.state.beta); })
      .def_property_readonly(
          "alpha", [](const PyFit& f) { return to_vec(f.result.state.alpha); })
      .def_property_readonly(
          "gamma", [](const PyFit& f) { return to_vec(f.result.state.gamma); })
      .def_property_readonly(
          "loglik", [](const PyFit& f) { return f.result.loglik; })
      .def_property_readonly(
          "iterations", [](const PyFit& f) { return f.result.iterations; })
      .def_property_readonly(
          "converged", [](const PyFit& f) { return f.result.converged; })
      .def_property_readonly("family",
                             [](const PyFit& f) { return f.family; });

  m.def(
      "load_csv",
      [](const std::string& path, const std::string& id, const std::string& time,
         const std::string& y, const std::vector<std::string>& x) {
        CsvSchema s{id, time, y, x};
        return std::make_shared<PanelDataset>(load_csv(path, s));
      },
      py::arg("path"), py::arg("id") = "id", py::arg("time") = "time",
      py::arg("y") = "y", py::arg("x") = std::vector<std::string>{});

  m.def(
      "drop_constant_outcome",
      [](std::shared_ptr<PanelDataset> d) {
        return std::make_shared<PanelDataset>(drop_constant_outcome(*d));
      },
      py::arg("panel"),
      "Remove perfectly classified units/periods (constant binary outcome).");

  m.def(
      "write_csv",
      [](std::shared_ptr<PanelDataset> d, const std::string& path) {
        write_csv(*d, path);
      },
      py::arg("panel"), py::arg("path"));

  m.def(
      "generate",
      [](const std::string& dgp, int N, int T, std::uint64_t seed, int rep,
         double beta, double beta_y, double beta_z) {
        DgpSpec spec;
        spec.kind = dgp_kind_from_string(dgp);
        spec.N = N;
        spec.T = T;
        spec.seed = seed;
        spec.beta = beta;
        spec.beta_y = beta_y;
        spec.beta_z = beta_z;
        return std::make_shared<PanelDataset>(generate(spec, rep));
      },
      py::arg("dgp"), py::arg("N") = 52, py::arg("T") = 14,
      py::arg("seed") = 1, py::arg("rep") = 0, py::arg("beta") = 1.0,
      py::arg("beta_y") = 0.5, py::arg("beta_z") = 1.0);

  m.def(
      "fit",
      [](std::shared_ptr<PanelDataset> data, const std::string& family,
         const std::string& normalization) {
        PyFit out;
        out.family = family;
        out.result =
            fit(data, family_by_name(family), make_options(normalization));
        return out;
      },
      py::arg("panel"), py::arg("family") = "probit",
      py::arg("normalization") = "penalty");

  m.def(
      "analytical_correct",
      [](const PyFit& f, int trim, bool no_bartlett) {
        return correction_dict(analytical_correct(
            f.result, family_by_name(f.family), trim, no_bartlett));
      },
      py::arg("fit"), py::arg("trim") = 1, py::arg("no_bartlett") = false);

  m.def(
      "compute_ape",
      [](const PyFit& f,
         const std::vector<std::pair<std::string, int>>& effects) {
        return to_vec(compute_ape(f.result, family_by_name(f.family),
                                  parse_effects(effects))
                          .delta);
      },
      py::arg("fit"), py::arg("effects"));

  m.def(
      "ape_correction",
      [](const PyFit& f,
         const std::vector<std::pair<std::string, int>>& effects, int trim,
         const std::string& variance_mode) {
        ApeCorrectionResult r = ape_correction(
            f.result, family_by_name(f.family), parse_effects(effects), trim,
            variance_mode_from_string(variance_mode));
        py::dict d;
        d["delta_hat"] = to_vec(r.delta_hat);
        d["delta_tilde_A"] = to_vec(r.delta_tilde_A);
        d["B_delta"] = to_vec(r.B_delta);
        d["D_delta"] = to_vec(r.D_delta);
        d["se"] = to_vec(r.se);
        d["variance_mode"] = std::string(to_string(r.variance_mode));
        return d;
      },
      py::arg("fit"), py::arg("effects"), py::arg("trim") = 1,
      py::arg("variance_mode") = "both");

  m.def(
      "spj_beta",
      [](std::shared_ptr<PanelDataset> data, const std::string& family,
         int unit_partitions, std::uint64_t seed) {
        JackknifeOptions j;
        j.unit_partitions = unit_partitions;
        j.seed = seed;
        return jackknife_dict(spj_beta(data, family_by_name(family), {}, j));
      },
      py::arg("panel"), py::arg("family") = "probit",
      py::arg("unit_partitions") = 1, py::arg("seed") = 0);

  m.def(
      "spj_ape",
      [](std::shared_ptr<PanelDataset> data, const std::string& family,
         const std::vector<std::pair<std::string, int>>& effects,
         int unit_partitions, std::uint64_t seed) {
        JackknifeOptions j;
        j.unit_partitions = unit_partitions;
        j.seed = seed;
        return jackknife_dict(
            spj_ape(data, family_by_name(family), parse_effects(effects), {}, j));
      },
      py::arg("panel"), py::arg("family"), py::arg("effects"),
      py::arg("unit_partitions") = 1, py::arg("seed") = 0);

  m.def(
      "homogeneity_test",
      [](std::shared_ptr<PanelDataset> data, const std::string& family,
         const std::string& axis) {
        HomogeneityTest h =
            homogeneity_test(data, family_by_name(family), axis);
        py::dict d;
        d["statistic"] = h.statistic;
        d["dof"] = h.dof;
        d["p_value"] = h.p_value;
        d["beta_first"] = to_vec(h.beta_first);
        d["beta_second"] = to_vec(h.beta_second);
        return d;
      },
      py::arg("panel"), py::arg("family") = "probit", py::arg("axis") = "time");

  m.def(
      "neyman_scott_oracle",
      [](int N, int T, int jack_reps, std::uint64_t seed) {
        OracleRow r = neyman_scott_oracle(N, T, jack_reps, seed);
        py::dict d;
        d["bias_fe"] = r.bias_fe;
        d["bias_analytical"] = r.bias_a;
        d["bias_jackknife"] = r.bias_j;
        d["sd_fe"] = r.sd_fe;
        d["sd_analytical"] = r.sd_a;
        d["coverage_fe"] = r.cov_fe;
        d["coverage_analytical"] = r.cov_a;
        if (r.jack_reps > 0) {
          d["jack_mean"] = r.jack_mean;
          d["jack_sd"] = r.jack_sd;
          d["jack_coverage"] = r.jack_cov;
        }
        return d;
      },
      py::arg("N"), py::arg("T"), py::arg("jack_reps") = 0,
      py::arg("seed") = 1);

  m.def(
      "run_study",
      [](const std::string& dgp, int N, int T, int reps,
         const std::vector<std::string>& estimators, int trim,
         std::uint64_t seed, int threads) {
        DgpSpec spec;
        spec.kind = dgp_kind_from_string(dgp);
        spec.N = N;
        spec.T = T;
        spec.seed = seed;
        StudyOptions opts;
        opts.reps = reps;
        opts.threads = threads;
        opts.estimators.clear();
        for (const auto& e : estimators)
          opts.estimators.push_back({e, e == "analytical" ? trim : 0, ""});
        SimulationReport rep = run_study(spec, opts);
        py::list rows;
        for (const auto& r : rep.rows) {
          py::dict row;
          row["estimator"] = r.estimator;
          row["quantity"] = r.quantity;
          row["truth"] = r.truth;
          row["bias"] = r.bias;
          row["sd"] = r.sd;
          row["rmse"] = r.rmse;
          row["se_sd"] = r.se_sd;
          row["coverage"] = r.coverage;
          row["relative"] = r.relative;
          rows.append(row);
        }
        py::dict d;
        d["dgp"] = rep.dgp;
        d["N"] = rep.N;
        d["T"] = rep.T;
        d["reps"] = rep.reps;
        d["failures"] = rep.failures;
        d["rows"] = rows;
        return d;
      },
      py::arg("dgp"), py::arg("N") = 52, py::arg("T") = 14,
      py::arg("reps") = 100,
      py::arg("estimators") =
          std::vector<std::string>{"fe", "analytical", "jackknife"},
      py::arg("trim") = 1, py::arg("seed") = 1, py::arg("threads") = 0);
}
