// Panel loading, treatment schedules, observation sets, and outcome
// transforms.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "panelcf/errors.hpp"
#include "panelcf/panel.hpp"
#include "panelcf/rng.hpp"

using namespace panelcf;
namespace fs = std::filesystem;

namespace {

std::string temp_csv(const std::string& content) {
  static int counter = 0;
  const fs::path p = fs::temp_directory_path() /
                     ("panelcf_test_panel_" + std::to_string(counter++) + ".csv");
  std::ofstream out(p);
  out << content;
  return p.string();
}

bool same_values(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) {
      const bool na = std::isnan(a(i, j)), nb = std::isnan(b(i, j));
      if (na != nb) return false;
      if (!na && a(i, j) != b(i, j)) return false;
    }
  return true;
}

// Two regions, one treated from its third year, with one missing control cell.
PanelDataset tiny_panel() {
  PanelDataset d;
  d.region_ids = {"A", "B"};
  d.years = {2000, 2001, 2002};
  d.Y.resize(2, 3);
  d.Y << 1.0, 2.0, 3.0, 4.0, 5.0, 6.0;
  d.D.setZero(2, 3);
  d.D(1, 2) = 1;
  return d;
}

}  // namespace

TEST_CASE("load_panel squares the grid and keeps absent rows missing") {
  const std::string path = temp_csv(
      "region,year,outcome,treated\n"
      "A,2000,1.5,0\n"
      "A,2001,2.5,0\n"
      "A,2002,3.5,0\n"
      "B,2000,4.5,0\n"
      "B,2002,6.5,1\n");
  const PanelDataset d = load_panel(path);
  CHECK(d.n_regions() == 2);
  CHECK(d.n_periods() == 3);
  CHECK(d.years == std::vector<int>{2000, 2001, 2002});
  CHECK(d.Y(0, 1) == 2.5);
  CHECK(std::isnan(d.Y(1, 1)));  // B,2001 absent from the file
  CHECK(d.D(1, 2) == 1);
  CHECK(d.D(1, 0) == 0);
}

TEST_CASE("load_panel is insensitive to column order") {
  const std::string a = temp_csv(
      "region,year,outcome,cov_pop,treated\n"
      "A,2000,1.0,10,0\nA,2001,2.0,11,0\n"
      "B,2000,3.0,12,0\nB,2001,4.0,13,1\n");
  const std::string b = temp_csv(
      "treated,cov_pop,outcome,year,region\n"
      "0,10,1.0,2000,A\n0,11,2.0,2001,A\n"
      "0,12,3.0,2000,B\n1,13,4.0,2001,B\n");
  const PanelDataset da = load_panel(a), db = load_panel(b);
  CHECK(same_values(da.Y, db.Y));
  CHECK(da.X.size() == 1);
  CHECK(same_values(da.X[0], db.X[0]));
  CHECK(da.D == db.D);
}

TEST_CASE("load_panel rejects malformed inputs") {
  CHECK_THROWS_WITH_AS(load_panel(temp_csv("region,year,outcome\n")),
                       doctest::Contains("no rows"), DataError);
  CHECK_THROWS_WITH_AS(
      load_panel(temp_csv("region,year,outcome\nA,2000,1\nA,2000,2\n"
                          "B,2000,1\nB,2001,1\nA,2001,3\n")),
      doctest::Contains("duplicate"), DataError);
  CHECK_THROWS_WITH_AS(
      load_panel(temp_csv("region,year,outcome\nA,2000,1\nA,2003,2\n"
                          "B,2000,1\nB,2003,1\n")),
      doctest::Contains("gap"), DataError);
  CHECK_THROWS_AS(
      load_panel(temp_csv("region,year,outcome\nA,2000,abc\nA,2001,2\n"
                          "B,2000,1\nB,2001,1\n")),
      DataError);
  CHECK_THROWS_AS(load_panel(temp_csv("region,year\nA,2000\n")), DataError);
  CHECK_THROWS_WITH_AS(
      load_panel(temp_csv("region,year,outcome,treated\nA,2000,1,2\n"
                          "A,2001,1,0\nB,2000,1,0\nB,2001,1,0\n")),
      doctest::Contains("treated"), DataError);
}

TEST_CASE("derive_schedule pins T_i to the last pre-treatment period") {
  PanelDataset d;
  d.region_ids = {"R1", "R2"};
  d.years = {2000, 2001, 2002, 2003};
  d.Y = Eigen::MatrixXd::Ones(2, 4);
  d.D.setZero(2, 4);
  d.D(0, 2) = 1;
  d.D(0, 3) = 1;

  const TreatmentSchedule s = derive_schedule(d);
  CHECK(s.T_i[0] == 2);  // D row [0,0,1,1]
  CHECK(s.T_i[1] == 4);  // never treated: T_i = T
  CHECK(s.is_treated[0]);
  CHECK_FALSE(s.is_treated[1]);
  CHECK(s.N_tr == 1);
  CHECK(s.N_c == 1);
  CHECK(s.N_c + s.N_tr == d.n_regions());
}

TEST_CASE("derive_schedule rejects reversals unless the flag allows them") {
  PanelDataset d;
  d.region_ids = {"R1", "R2"};
  d.years = {2000, 2001, 2002, 2003};
  d.Y = Eigen::MatrixXd::Ones(2, 4);
  d.D.setZero(2, 4);
  d.D(0, 1) = 1;  // [0,1,0,1]
  d.D(0, 3) = 1;

  CHECK_THROWS_WITH_AS(derive_schedule(d), doctest::Contains("R1"), DataError);

  const TreatmentSchedule s = derive_schedule(d, true);
  CHECK(s.T_i[0] == 1);  // treated from period 2 onward
  const ObservationSet O = build_observation_set(d, s);
  // Periods 2..4 of the reverser stay out of O even where D flips back to 0.
  CHECK(O.mask(0, 0) == 1.0);
  CHECK(O.mask(0, 1) == 0.0);
  CHECK(O.mask(0, 2) == 0.0);
  CHECK(O.mask(0, 3) == 0.0);
  CHECK(O.n_to_impute == 3);
}

TEST_CASE("derive_schedule is idempotent and order independent") {
  PanelDataset d = tiny_panel();
  const TreatmentSchedule s1 = derive_schedule(d);
  const TreatmentSchedule s2 = derive_schedule(d);
  CHECK(s1.T_i == s2.T_i);

  PanelDataset rev = d;
  rev.region_ids = {"B", "A"};
  rev.Y.row(0) = d.Y.row(1);
  rev.Y.row(1) = d.Y.row(0);
  rev.D.row(0) = d.D.row(1);
  rev.D.row(1) = d.D.row(0);
  const TreatmentSchedule sr = derive_schedule(rev);
  CHECK(sr.T_i[0] == s1.T_i[1]);
  CHECK(sr.T_i[1] == s1.T_i[0]);
}

TEST_CASE("observation set enumerates control and pre-treatment cells") {
  const PanelDataset d = tiny_panel();
  const TreatmentSchedule s = derive_schedule(d);
  const ObservationSet O = build_observation_set(d, s);
  const std::vector<std::pair<int, int>> want = {
      {0, 0}, {0, 1}, {0, 2}, {1, 0}, {1, 1}};
  CHECK(O.cells == want);
  CHECK(O.n_obs == 5);
  CHECK(O.n_to_impute == 1);
}

TEST_CASE("missing outcome cells stay out of O") {
  PanelDataset d = tiny_panel();
  d.Y(0, 1) = std::nan("");
  const TreatmentSchedule s = derive_schedule(d);
  const ObservationSet O = build_observation_set(d, s);
  CHECK(O.mask(0, 1) == 0.0);
  CHECK(O.n_obs == 4);
  CHECK(O.frac_missing == doctest::Approx(1.0 / 6.0));
}

TEST_CASE("every cell is exactly one of: in O, to impute, missing") {
  Rng rng(31);
  for (int rep = 0; rep < 10; ++rep) {
    const int N = 4 + static_cast<int>(rng.uniform_int(6));
    const int T = 4 + static_cast<int>(rng.uniform_int(8));
    PanelDataset d;
    for (int i = 0; i < N; ++i) d.region_ids.push_back("R" + std::to_string(i));
    for (int t = 0; t < T; ++t) d.years.push_back(1990 + t);
    d.Y.resize(N, T);
    d.D.setZero(N, T);
    for (int i = 0; i < N; ++i) {
      const bool treated = rng.uniform() < 0.4 && i > 0;
      const int adopt = treated ? 2 + static_cast<int>(rng.uniform_int(T - 2)) : T;
      for (int t = 0; t < T; ++t) {
        d.Y(i, t) = rng.uniform() < 0.15 && t != 0 ? std::nan("") : rng.normal();
        if (t >= adopt) d.D(i, t) = 1;
      }
      d.Y(i, 0) = rng.normal();  // guarantee a pre-treatment observation
    }
    const TreatmentSchedule s = derive_schedule(d);
    const ObservationSet O = build_observation_set(d, s);
    long in_o = 0, impute = 0, missing = 0;
    for (int i = 0; i < N; ++i)
      for (int t = 0; t < T; ++t) {
        const bool is_o = O.mask(i, t) == 1.0;
        const bool is_missing = std::isnan(d.Y(i, t));
        const bool is_post = (t + 1) > s.T_i[i];
        CHECK(is_o == (!is_missing && !is_post));
        in_o += is_o;
        impute += !is_missing && is_post;
        missing += is_missing;
      }
    CHECK(in_o == O.n_obs);
    CHECK(impute == O.n_to_impute);
    CHECK(in_o + impute + missing == long(N) * T);
  }
}

TEST_CASE("treated region without observed pre periods is fatal") {
  PanelDataset d = tiny_panel();
  d.Y(1, 0) = std::nan("");
  d.Y(1, 1) = std::nan("");
  const TreatmentSchedule s = derive_schedule(d);
  CHECK_THROWS_WITH_AS(build_observation_set(d, s), doctest::Contains("B"),
                       DataError);
}

TEST_CASE("save and reload round-trips bitwise") {
  Rng rng(77);
  PanelDataset d;
  const int N = 6, T = 9;
  for (int i = 0; i < N; ++i) d.region_ids.push_back("RE" + std::to_string(i));
  for (int t = 0; t < T; ++t) d.years.push_back(1985 + t);
  d.Y.resize(N, T);
  d.D.setZero(N, T);
  d.intensity = Eigen::MatrixXd::Constant(N, T, std::nan(""));
  d.levels.resize(N, T);
  Eigen::MatrixXd X0(N, T);
  for (int i = 0; i < N; ++i)
    for (int t = 0; t < T; ++t) {
      d.Y(i, t) = (i == 2 && t == 3) ? std::nan("") : rng.normal() * 1e3;
      d.levels(i, t) = std::exp(rng.normal());
      X0(i, t) = rng.normal() / 7.0;
      if (i < 2 && t >= 5) {
        d.D(i, t) = 1;
        d.intensity(i, t) = rng.uniform() * 0.01;
      }
    }
  d.X = {X0};
  d.covariate_names = {"dens"};

  const fs::path p = fs::temp_directory_path() / "panelcf_roundtrip.csv";
  save_panel(d, p.string());
  const PanelDataset r = load_panel(p.string());

  CHECK(r.region_ids == d.region_ids);
  CHECK(r.years == d.years);
  CHECK(same_values(r.Y, d.Y));
  CHECK(r.D == d.D);
  REQUIRE(r.X.size() == 1);
  CHECK(r.covariate_names == std::vector<std::string>{"cov_dens"});
  CHECK(same_values(r.X[0], d.X[0]));
  CHECK(same_values(r.intensity, d.intensity));
  CHECK(same_values(r.levels, d.levels));

  const ObservationSet Oa = build_observation_set(d, derive_schedule(d));
  const ObservationSet Ob = build_observation_set(r, derive_schedule(r));
  CHECK(Oa.cells == Ob.cells);
}

TEST_CASE("transform_outcome takes logs of levels and keeps them around") {
  PanelDataset d = tiny_panel();
  d.Y << 1000.0, std::exp(9.0), 9064.0, 2.0, 3.0, 4.0;

  const PanelDataset ident = transform_outcome(d, TransformKind::identity);
  CHECK(ident.Y(0, 0) == 1000.0);
  CHECK(ident.transform == TransformKind::identity);

  const PanelDataset logd = transform_outcome(d, TransformKind::log_per_capita);
  CHECK(logd.Y(0, 1) == 9.0);
  CHECK(logd.Y(0, 2) == std::log(9064.0));
  CHECK(logd.Y(0, 2) == doctest::Approx(9.1121).epsilon(1e-4));
  CHECK(logd.transform == TransformKind::log_per_capita);
  REQUIRE(logd.has_levels());
  CHECK(logd.levels(0, 2) == 9064.0);  // raw levels preserved

  // A preexisting level column is the log's source and missing cells pass
  // through untouched.
  PanelDataset with_levels = d;
  with_levels.levels = Eigen::MatrixXd::Constant(2, 3, 100.0);
  with_levels.levels(1, 1) = std::nan("");
  const PanelDataset lr = transform_outcome(with_levels, TransformKind::log_ratio);
  CHECK(lr.Y(0, 0) == std::log(100.0));
  CHECK(std::isnan(lr.Y(1, 1)));
  CHECK(lr.transform == TransformKind::log_ratio);
}

TEST_CASE("log transform rejects non-positive levels, naming the cell") {
  PanelDataset d = tiny_panel();
  d.Y(1, 1) = -3.0;
  CHECK_THROWS_WITH_AS(transform_outcome(d, TransformKind::log_per_capita),
                       doctest::Contains("2001"), DataError);
}

TEST_CASE("validate_panel summarizes a good file and folds errors into issues") {
  const std::string good = temp_csv(
      "region,year,outcome,treated\n"
      "A,2000,1.0,0\nA,2001,2.0,0\nA,2002,2.0,0\n"
      "B,2000,3.0,0\nB,2001,4.0,1\nB,2002,4.0,1\n");
  const ValidationReport ok = validate_panel(good);
  CHECK(ok.issues.empty());
  CHECK(ok.n_regions == 2);
  CHECK(ok.n_years == 3);
  CHECK(ok.n_treated == 1);
  CHECK(ok.n_obs == 4);

  const std::string dup = temp_csv(
      "region,year,outcome\nA,2000,1\nA,2000,2\nB,2000,1\nB,2001,1\n");
  const ValidationReport bad = validate_panel(dup);
  REQUIRE_FALSE(bad.issues.empty());
  CHECK(bad.issues[0].find("duplicate") != std::string::npos);
}
