#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <string>

#include "test_util.hpp"
#include "twofe/panel.hpp"

using namespace twofe;

namespace {

struct TempCsv {
  std::string path;
  explicit TempCsv(const std::string& content) {
    static int counter = 0;
    path = "twofe_test_" + std::to_string(counter++) + ".csv";
    std::ofstream out(path);
    out << content;
  }
  ~TempCsv() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("csv loading maps labels to dense indices") {
  TempCsv f(
      "id,time,y,x1,x2\n"
      "a,2001,1,0.5,2\n"
      "a,2002,0,0.25,3\n"
      "b,2001,0,-1,4\n"
      "b,2002,1,0.75,5\n");
  PanelDataset d = load_csv(f.path);
  CHECK(d.n_units() == 2);
  CHECK(d.n_periods() == 2);
  CHECK(d.n_regressors() == 2);
  CHECK(d.balanced());
  CHECK(d.unit_ids[0] == "a");
  CHECK(d.time_ids[1] == "2002");
  CHECK(d.y(0, 0) == 1.0);
  CHECK(d.y(1, 1) == 1.0);
  CHECK(d.X[0](1, 0) == -1.0);
  CHECK(d.X[1](0, 1) == 3.0);
}

TEST_CASE("missing rows become masked cells") {
  TempCsv f(
      "id,time,y,x\n"
      "a,1,1,0.5\n"
      "a,2,0,0.25\n"
      "b,1,0,-1\n"
      "b,2,1,0.75\n"
      "c,1,1,0.1\n");
  PanelDataset d = load_csv(f.path);
  CHECK(d.n_units() == 3);
  CHECK(d.n_observed() == 5);
  CHECK_FALSE(d.balanced());
  CHECK_FALSE(d.observed(2, 1));
  CHECK(validate(d).missing_fraction == doctest::Approx(1.0 / 6.0));
}

TEST_CASE("duplicate (id,time) rows are rejected") {
  TempCsv f(
      "id,time,y,x\n"
      "a,1,1,0.5\n"
      "a,1,0,0.25\n"
      "b,1,0,-1\n"
      "b,2,1,0.75\n");
  CHECK_THROWS_AS(load_csv(f.path), DuplicateCell);
}

TEST_CASE("parse errors carry context") {
  TempCsv bad_number(
      "id,time,y,x\n"
      "a,1,one,0.5\n"
      "b,1,0,0.5\n");
  CHECK_THROWS_AS(load_csv(bad_number.path), ParseError);
  TempCsv missing_col("id,time,z\na,1,1\n");
  CHECK_THROWS_AS(load_csv(missing_col.path), ParseError);
  CHECK_THROWS_AS(load_csv("no_such_file_12345.csv"), ParseError);
}

TEST_CASE("degenerate panels are rejected") {
  TempCsv single_unit(
      "id,time,y,x\n"
      "a,1,1,0.5\n"
      "a,2,0,0.25\n");
  CHECK_THROWS_AS(load_csv(single_unit.path), DegeneratePanel);
}

TEST_CASE("custom column schema") {
  TempCsv f(
      "firm,year,output,labor,capital\n"
      "f1,1,2,1,7\n"
      "f1,2,3,2,8\n"
      "f2,1,1,0,9\n"
      "f2,2,4,3,10\n");
  CsvSchema s;
  s.id = "firm";
  s.time = "year";
  s.y = "output";
  s.x = {"capital"};
  PanelDataset d = load_csv(f.path, s);
  CHECK(d.n_regressors() == 1);
  CHECK(d.X[0](0, 1) == 8.0);
}

TEST_CASE("write/load round trip preserves the panel") {
  Eigen::MatrixXd y(2, 3), x(2, 3);
  y << 0.125, 1.5, -2.25, 3.0, 0.0625, 7.5;
  x << 1, 2, 3, 4, 5, 6;
  PanelDataset d = testutil::make_panel(y, {x});
  d.mask(0, 2) = false;
  TempCsv f("");
  write_csv(d, f.path);
  PanelDataset r = load_csv(f.path);
  CHECK(r.n_observed() == 5);
  CHECK_FALSE(r.observed(0, 2));
  for (int i = 0; i < 2; ++i)
    for (int t = 0; t < 3; ++t) {
      if (!d.mask(i, t)) continue;
      CHECK(r.y(i, t) == d.y(i, t));
      CHECK(r.X[0](i, t) == d.X[0](i, t));
    }
}

TEST_CASE("subpanel extraction") {
  Eigen::MatrixXd y(4, 5), x(4, 5);
  for (int i = 0; i < 4; ++i)
    for (int t = 0; t < 5; ++t) {
      y(i, t) = 10 * i + t;
      x(i, t) = i - t;
    }
  PanelDataset d = testutil::make_panel(y, {x});

  SubpanelSpec s;
  s.unit_subset = {1, 3};
  s.time_first = 2;
  s.time_last = 4;
  PanelDataset sub = subpanel(d, s);
  CHECK(sub.n_units() == 2);
  CHECK(sub.n_periods() == 3);
  CHECK(sub.unit_ids[1] == "u3");
  CHECK(sub.time_ids[0] == "p2");
  CHECK(sub.y(0, 0) == 12.0);
  CHECK(sub.y(1, 2) == 34.0);
  CHECK(sub.X[0](1, 1) == 0.0);

  SubpanelSpec bad;
  bad.unit_subset = {0, 7};
  CHECK_THROWS_AS(subpanel(d, bad), DegeneratePanel);
  SubpanelSpec empty;
  CHECK_THROWS_AS(subpanel(d, empty), DegeneratePanel);
}

TEST_CASE("validation flags separation risk and collinear regressors") {
  Eigen::MatrixXd y(3, 4), x1(3, 4), x2(3, 4);
  y << 1, 0, 1, 0,
       1, 1, 1, 1,   // constant binary unit: separation risk
       0, 1, 0, 1;
  for (int i = 0; i < 3; ++i)
    for (int t = 0; t < 4; ++t) {
      x1(i, t) = (i + 1) * 2.0 + (t + 1) * 3.0;  // additive: no within variation
      x2(i, t) = std::sin(1.0 + 3.0 * i + 7.0 * t);
    }
  PanelDataset d = testutil::make_panel(y, {x1, x2});
  ValidationReport rep = validate(d);
  CHECK(rep.separation_risk());
  CHECK(rep.constant_outcome_units == 1);
  CHECK(rep.collinear_with_effects[0]);
  CHECK_FALSE(rep.collinear_with_effects[1]);
  CHECK(rep.any_collinear());
  CHECK(rep.within_variation[0] == doctest::Approx(0.0));
  CHECK(rep.within_variation[1] > 0.1);
}
