#include "twofe/panel.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "twofe/projection.hpp"

namespace twofe {

void PanelDataset::check() const {
  const int N = n_units(), T = n_periods(), K = n_regressors();
  if (N < 2 || T < 2) throw DegeneratePanel("panel needs N >= 2 and T >= 2");
  if (K < 1) throw DegeneratePanel("panel needs at least one regressor");
  for (int i = 0; i < N; ++i)
    if (!mask.row(i).any())
      throw DegeneratePanel("unit " + unit_ids[i] + " has no observed cell");
  for (int t = 0; t < T; ++t)
    if (!mask.col(t).any())
      throw DegeneratePanel("period " + time_ids[t] + " has no observed cell");
}

SubpanelSpec SubpanelSpec::full(const PanelDataset& d) {
  SubpanelSpec s;
  s.unit_subset.resize(d.n_units());
  for (int i = 0; i < d.n_units(); ++i) s.unit_subset[i] = i;
  s.time_first = 0;
  s.time_last = d.n_periods() - 1;
  return s;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) {
    // trim whitespace and CR
    auto b = field.find_first_not_of(" \t\r");
    auto e = field.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : field.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

double parse_number(const std::string& s, const std::string& what) {
  double v;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw ParseError("non-numeric " + what + " value: '" + s + "'");
  return v;
}

}  // namespace

PanelDataset load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open file: " + path);

  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty file: " + path);
  auto header = split_csv_line(line);

  auto col_of = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end())
      throw ParseError("missing column '" + name + "' in " + path);
    return static_cast<int>(it - header.begin());
  };
  int id_col = col_of(schema.id);
  int time_col = col_of(schema.time);
  int y_col = col_of(schema.y);

  std::vector<int> x_cols;
  if (schema.x.empty()) {
    for (int c = 0; c < static_cast<int>(header.size()); ++c)
      if (c != id_col && c != time_col && c != y_col) x_cols.push_back(c);
  } else {
    for (const auto& name : schema.x) x_cols.push_back(col_of(name));
  }
  const int K = static_cast<int>(x_cols.size());
  if (K < 1) throw ParseError("no regressor columns found in " + path);

  struct Row {
    int i, t;
    double y;
    std::vector<double> x;
  };
  std::vector<Row> rows;
  std::unordered_map<std::string, int> unit_index, time_index;
  std::vector<std::string> unit_ids, time_ids;

  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto fields = split_csv_line(line);
    if (static_cast<int>(fields.size()) < static_cast<int>(header.size()))
      throw ParseError("line " + std::to_string(lineno) + ": too few fields");
    Row r;
    const std::string& id = fields[id_col];
    const std::string& tm = fields[time_col];
    auto [ui, unew] = unit_index.try_emplace(id, static_cast<int>(unit_ids.size()));
    if (unew) unit_ids.push_back(id);
    auto [ti, tnew] = time_index.try_emplace(tm, static_cast<int>(time_ids.size()));
    if (tnew) time_ids.push_back(tm);
    r.i = ui->second;
    r.t = ti->second;
    r.y = parse_number(fields[y_col], schema.y);
    r.x.resize(K);
    for (int k = 0; k < K; ++k)
      r.x[k] = parse_number(fields[x_cols[k]], header[x_cols[k]]);
    rows.push_back(std::move(r));
  }

  const int N = static_cast<int>(unit_ids.size());
  const int T = static_cast<int>(time_ids.size());
  if (N < 2 || T < 2)
    throw DegeneratePanel("panel needs at least 2 units and 2 periods");

  PanelDataset d;
  d.unit_ids = std::move(unit_ids);
  d.time_ids = std::move(time_ids);
  d.y = Eigen::MatrixXd::Zero(N, T);
  d.X.assign(K, Eigen::MatrixXd::Zero(N, T));
  d.mask = MatrixXb::Constant(N, T, false);
  for (const auto& r : rows) {
    if (d.mask(r.i, r.t))
      throw DuplicateCell("duplicate row for (id=" + d.unit_ids[r.i] +
                          ", time=" + d.time_ids[r.t] + ")");
    d.mask(r.i, r.t) = true;
    d.y(r.i, r.t) = r.y;
    for (int k = 0; k < K; ++k) d.X[k](r.i, r.t) = r.x[k];
  }
  d.check();
  return d;
}

void write_csv(const PanelDataset& d, const std::string& path,
               const CsvSchema& schema) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot open file for writing: " + path);
  out.precision(17);
  out << schema.id << ',' << schema.time << ',' << schema.y;
  for (int k = 0; k < d.n_regressors(); ++k) {
    if (static_cast<int>(schema.x.size()) > k)
      out << ',' << schema.x[k];
    else
      out << ",x" << (k + 1);
  }
  out << '\n';
  for (int i = 0; i < d.n_units(); ++i)
    for (int t = 0; t < d.n_periods(); ++t) {
      if (!d.mask(i, t)) continue;
      out << d.unit_ids[i] << ',' << d.time_ids[t] << ',' << d.y(i, t);
      for (int k = 0; k < d.n_regressors(); ++k) out << ',' << d.X[k](i, t);
      out << '\n';
    }
}

PanelDataset subpanel(const PanelDataset& d, const SubpanelSpec& s) {
  int tl = (s.time_last < 0) ? d.n_periods() - 1 : s.time_last;
  if (s.unit_subset.empty() || s.time_first > tl)
    throw DegeneratePanel("empty subpanel subset");
  if (s.time_first < 0 || tl >= d.n_periods())
    throw DegeneratePanel("time subset out of range");
  const int N = static_cast<int>(s.unit_subset.size());
  const int T = tl - s.time_first + 1;
  const int K = d.n_regressors();

  PanelDataset out;
  out.unit_ids.reserve(N);
  for (int i : s.unit_subset) {
    if (i < 0 || i >= d.n_units())
      throw DegeneratePanel("unit subset index out of range");
    out.unit_ids.push_back(d.unit_ids[i]);
  }
  out.time_ids.assign(d.time_ids.begin() + s.time_first,
                      d.time_ids.begin() + tl + 1);
  out.y.resize(N, T);
  out.X.assign(K, Eigen::MatrixXd(N, T));
  out.mask.resize(N, T);
  for (int a = 0; a < N; ++a) {
    int i = s.unit_subset[a];
    for (int b = 0; b < T; ++b) {
      int t = s.time_first + b;
      out.mask(a, b) = d.mask(i, t);
      out.y(a, b) = d.y(i, t);
      for (int k = 0; k < K; ++k) out.X[k](a, b) = d.X[k](i, t);
    }
  }
  out.check();
  return out;
}

PanelDataset drop_constant_outcome(const PanelDataset& d) {
  const int N = d.n_units(), T = d.n_periods(), K = d.n_regressors();
  std::vector<bool> keep_i(N, true), keep_t(T, true);

  auto constant_binary = [&](bool by_unit, int idx) {
    bool seen = false;
    double v0 = 0.0;
    int len = by_unit ? T : N;
    for (int s = 0; s < len; ++s) {
      int i = by_unit ? idx : s;
      int t = by_unit ? s : idx;
      if (!(by_unit ? keep_t[t] : keep_i[i])) continue;
      if (!d.mask(i, t)) continue;
      double v = d.y(i, t);
      if (v != 0.0 && v != 1.0) return false;
      if (!seen) {
        v0 = v;
        seen = true;
      } else if (v != v0) {
        return false;
      }
    }
    return true;  // includes fully unobserved slices within the kept block
  };

  bool changed = true, any_dropped = false;
  while (changed) {
    changed = false;
    for (int i = 0; i < N; ++i)
      if (keep_i[i] && constant_binary(true, i)) {
        keep_i[i] = false;
        changed = any_dropped = true;
      }
    for (int t = 0; t < T; ++t)
      if (keep_t[t] && constant_binary(false, t)) {
        keep_t[t] = false;
        changed = any_dropped = true;
      }
  }
  if (!any_dropped) return d;

  std::vector<int> units, periods;
  for (int i = 0; i < N; ++i)
    if (keep_i[i]) units.push_back(i);
  for (int t = 0; t < T; ++t)
    if (keep_t[t]) periods.push_back(t);
  if (units.size() < 2 || periods.size() < 2)
    throw DegeneratePanel(
        "dropping perfectly classified units/periods leaves fewer than 2 "
        "units or periods");

  PanelDataset out;
  for (int i : units) out.unit_ids.push_back(d.unit_ids[i]);
  for (int t : periods) out.time_ids.push_back(d.time_ids[t]);
  const int Nk = static_cast<int>(units.size());
  const int Tk = static_cast<int>(periods.size());
  out.y.resize(Nk, Tk);
  out.X.assign(K, Eigen::MatrixXd(Nk, Tk));
  out.mask.resize(Nk, Tk);
  for (int a = 0; a < Nk; ++a)
    for (int b = 0; b < Tk; ++b) {
      int i = units[a], t = periods[b];
      out.mask(a, b) = d.mask(i, t);
      out.y(a, b) = d.y(i, t);
      for (int k = 0; k < K; ++k) out.X[k](a, b) = d.X[k](i, t);
    }
  out.check();
  return out;
}

ValidationReport validate(const PanelDataset& d) {
  const int N = d.n_units(), T = d.n_periods(), K = d.n_regressors();
  ValidationReport rep;
  Eigen::MatrixXd w = d.mask.cast<double>();

  rep.within_variation.resize(K);
  rep.collinear_with_effects.resize(K);
  for (int k = 0; k < K; ++k) {
    auto proj = project(w, d.X[k]);
    double total = 0.0, within = 0.0;
    double mean = 0.0;
    int n = 0;
    for (int i = 0; i < N; ++i)
      for (int t = 0; t < T; ++t)
        if (d.mask(i, t)) {
          mean += d.X[k](i, t);
          ++n;
        }
    mean /= n;
    for (int i = 0; i < N; ++i)
      for (int t = 0; t < T; ++t)
        if (d.mask(i, t)) {
          double c = d.X[k](i, t) - mean;
          total += c * c;
          within += proj.residual(i, t) * proj.residual(i, t);
        }
    rep.within_variation[k] = (total > 0) ? within / total : 0.0;
    rep.collinear_with_effects[k] = within <= 1e-12 * (1.0 + total);
  }

  auto constant_binary = [&](bool by_unit, int idx) {
    bool seen = false;
    double v0 = 0.0;
    int len = by_unit ? T : N;
    for (int s = 0; s < len; ++s) {
      int i = by_unit ? idx : s;
      int t = by_unit ? s : idx;
      if (!d.mask(i, t)) continue;
      double v = d.y(i, t);
      if (v != 0.0 && v != 1.0) return false;
      if (!seen) {
        v0 = v;
        seen = true;
      } else if (v != v0) {
        return false;
      }
    }
    return seen;
  };
  for (int i = 0; i < N; ++i)
    if (constant_binary(true, i)) ++rep.constant_outcome_units;
  for (int t = 0; t < T; ++t)
    if (constant_binary(false, t)) ++rep.constant_outcome_periods;

  rep.missing_fraction = 1.0 - static_cast<double>(d.n_observed()) / (N * T);
  return rep;
}

bool ValidationReport::any_collinear() const {
  return std::any_of(collinear_with_effects.begin(), collinear_with_effects.end(),
                     [](bool b) { return b; });
}

}  // namespace twofe
