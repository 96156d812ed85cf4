// In-process CLI runs: artifact round trips, determinism, seeding, manifest
// hygiene, and the error contract.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "panelcf/cli.hpp"

using namespace panelcf;
namespace fs = std::filesystem;

namespace {

// Captures std::cout/std::cerr around an in-process run.
struct CliRun {
  int exit_code = 0;
  std::string out;
  std::string err;
};

CliRun run(const std::vector<std::string>& args) {
  std::stringstream sink_out, sink_err;
  std::streambuf* old_out = std::cout.rdbuf(sink_out.rdbuf());
  std::streambuf* old_err = std::cerr.rdbuf(sink_err.rdbuf());
  CliRun r;
  r.exit_code = run_cli(args);
  std::cout.rdbuf(old_out);
  std::cerr.rdbuf(old_err);
  r.out = sink_out.str();
  r.err = sink_err.str();
  return r;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "panelcf_test_cli" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool contains(const std::string& hay, const std::string& needle) {
  return hay.find(needle) != std::string::npos;
}

// Simulated panel with levels and intensity, shared across the cases below.
const fs::path& sim_dir() {
  static fs::path dir = [] {
    const fs::path p = fresh_dir("sim");
    const CliRun r = run({"simulate", "--N", "30", "--T", "14", "--K", "1",
                          "--share", "0.4", "--noise-sd", "0.05",
                          "--emit-levels", "--emit-intensity",
                          "--seed", "424", "--out-dir", p.string()});
    REQUIRE(r.exit_code == 0);
    return p;
  }();
  return dir;
}

std::string sim_panel() { return (sim_dir() / "panel.csv").string(); }

}  // namespace

TEST_CASE("simulate writes a panel, the truth sheets, and a manifest") {
  const fs::path& dir = sim_dir();
  for (const char* name :
       {"panel.csv", "truth.json", "truth_tau.csv", "truth_L.csv",
        "manifest.json"})
    CHECK(fs::exists(dir / name));

  const std::string manifest = slurp(dir / "manifest.json");
  CHECK(contains(manifest, "\"simulate\""));
  CHECK(contains(manifest, "424"));
  // Reproducibility-neutral knobs stay out of the manifest.
  CHECK_FALSE(contains(manifest, "threads"));
  CHECK_FALSE(contains(manifest, "out-dir"));
  CHECK_FALSE(contains(manifest, "out_dir"));
}

TEST_CASE("validate reports panel shape without touching the input") {
  const fs::path out = fresh_dir("validate");
  const std::string before = slurp(sim_panel());
  const CliRun r = run({"validate", "--input", sim_panel(), "--out-dir",
                        out.string()});
  CHECK(r.exit_code == 0);
  CHECK(slurp(sim_panel()) == before);
  REQUIRE(fs::exists(out / "validation.json"));
  const std::string rep = slurp(out / "validation.json");
  CHECK(contains(rep, "\"n_regions\": 30"));
  CHECK(contains(rep, "\"n_years\": 14"));
  CHECK(contains(rep, "\"issues\""));
}

TEST_CASE("estimate produces fit artifacts and is byte-stable across reruns") {
  const fs::path a = fresh_dir("est_a");
  const fs::path b = fresh_dir("est_b");
  const std::string before = slurp(sim_panel());

  for (const fs::path& out : {a, b}) {
    const CliRun r = run({"estimate", "--input", sim_panel(), "--transform",
                          "as-log", "--lambda", "0.01", "--seed", "3",
                          "--out-dir", out.string()});
    REQUIRE(r.exit_code == 0);
  }
  CHECK(slurp(sim_panel()) == before);

  for (const char* name : {"fit.json", "lhat.csv", "effects.csv",
                           "event_study.csv", "att_calendar.csv",
                           "manifest.json"}) {
    CAPTURE(name);
    REQUIRE(fs::exists(a / name));
    CHECK(slurp(a / name) == slurp(b / name));
  }

  const std::string fit = slurp(a / "fit.json");
  CHECK(contains(fit, "\"lambda\""));
  CHECK(contains(fit, "\"rank\""));
  CHECK(contains(fit, "\"converged\": true"));

  const std::string manifest = slurp(a / "manifest.json");
  CHECK(contains(manifest, "\"estimate\""));
  CHECK(contains(manifest, "\"lambda\""));
  CHECK(contains(manifest, "\"inputs\""));
  CHECK(contains(manifest, sim_panel()));
  CHECK_FALSE(contains(manifest, "threads"));
}

TEST_CASE("cv selects a penalty and estimate honors --auto-cv") {
  const fs::path cv_out = fresh_dir("cv");
  const CliRun r = run({"cv", "--input", sim_panel(), "--transform", "as-log",
                        "--grid-size", "8", "--folds", "3", "--seed", "12",
                        "--out-dir", cv_out.string()});
  REQUIRE(r.exit_code == 0);
  CHECK(fs::exists(cv_out / "cv.json"));
  CHECK(fs::exists(cv_out / "cv_curve.csv"));
  CHECK(contains(slurp(cv_out / "cv.json"), "lambda_star"));

  const fs::path est = fresh_dir("est_cv");
  const CliRun e = run({"estimate", "--input", sim_panel(), "--transform",
                        "as-log", "--auto-cv", "--grid-size", "8", "--folds",
                        "3", "--seed", "12", "--out-dir", est.string()});
  REQUIRE(e.exit_code == 0);
  CHECK(fs::exists(est / "cv.json"));
  // The two runs share seed and grid, so the selected penalty must agree.
  CHECK(slurp(est / "cv.json") == slurp(cv_out / "cv.json"));
}

TEST_CASE("report reuses estimate artifacts and writes the summary tables") {
  const fs::path est = fresh_dir("est_for_report");
  REQUIRE(run({"estimate", "--input", sim_panel(), "--transform", "as-log",
               "--lambda", "0.01", "--seed", "3", "--out-dir", est.string()})
              .exit_code == 0);

  const fs::path rep = fresh_dir("report");
  const CliRun r = run({"report", "--input", sim_panel(), "--transform",
                        "as-log", "--fit-dir", est.string(), "--euro-horizon",
                        "3", "--out-dir", rep.string()});
  REQUIRE(r.exit_code == 0);
  for (const char* name :
       {"headline.json", "event_study.csv", "tau_samples.csv", "table4.csv",
        "quintile_att.csv", "quintile_paths.csv", "quintile_members.csv",
        "euro_effect.csv", "gini.csv", "intensity.csv", "manifest.json"}) {
    CAPTURE(name);
    CHECK(fs::exists(rep / name));
  }
  const std::string headline = slurp(rep / "headline.json");
  CHECK(contains(headline, "\"lambda\""));
  CHECK(contains(headline, "\"n_treated\""));
}

TEST_CASE("bootstrap emits bands that respect the requested level") {
  const fs::path out = fresh_dir("boot");
  const CliRun r = run({"bootstrap", "--input", sim_panel(), "--transform",
                        "as-log", "--lambda", "0.01", "--B", "16", "--level",
                        "0.9", "--seed", "21", "--out-dir", out.string()});
  REQUIRE(r.exit_code == 0);
  REQUIRE(fs::exists(out / "att_bands.csv"));
  const std::string bands = slurp(out / "att_bands.csv");
  CHECK(contains(bands, "event_time"));
  CHECK(contains(bands, "lo"));
  CHECK(contains(bands, "hi"));
  const std::string manifest = slurp(out / "manifest.json");
  CHECK(contains(manifest, "\"B\""));
  CHECK(contains(manifest, "16"));
}

TEST_CASE("compare writes both estimators with bias columns when truth is given") {
  const fs::path sim = fresh_dir("sim_confounded");
  REQUIRE(run({"simulate", "--N", "40", "--T", "14", "--K", "1", "--assign",
               "loading", "--seed", "77", "--out-dir", sim.string()})
              .exit_code == 0);
  const fs::path out = fresh_dir("compare");
  const CliRun r = run({"compare", "--input", (sim / "panel.csv").string(),
                        "--lambda", "0.01", "--leads", "2", "--lags", "6",
                        "--truth", (sim / "truth_tau.csv").string(),
                        "--seed", "5", "--out-dir", out.string()});
  REQUIRE(r.exit_code == 0);
  REQUIRE(fs::exists(out / "compare.csv"));
  const std::string table = slurp(out / "compare.csv");
  CHECK(contains(table, "twfe"));
  CHECK(contains(table, "bias"));
  CHECK(fs::exists(out / "twfe.json"));
}

TEST_CASE("PANELCF_SEED seeds a run exactly like --seed") {
  const fs::path by_flag = fresh_dir("seed_flag");
  const fs::path by_env = fresh_dir("seed_env");
  REQUIRE(run({"simulate", "--N", "12", "--T", "8", "--seed", "909",
               "--out-dir", by_flag.string()})
              .exit_code == 0);

  setenv("PANELCF_SEED", "909", 1);
  const CliRun r = run({"simulate", "--N", "12", "--T", "8", "--out-dir",
                        by_env.string()});
  unsetenv("PANELCF_SEED");
  REQUIRE(r.exit_code == 0);
  CHECK(slurp(by_env / "panel.csv") == slurp(by_flag / "panel.csv"));
  CHECK(slurp(by_env / "truth.json") == slurp(by_flag / "truth.json"));
}

TEST_CASE("usage errors exit 64 with a JSON error line") {
  const auto usage = [](const std::vector<std::string>& args) {
    const CliRun r = run(args);
    CHECK(r.exit_code == 64);
    CHECK(contains(r.err, "\"error\""));
    CHECK(contains(r.err, "\"usage\""));
  };
  usage({"frobnicate"});
  usage({});
  usage({"estimate", "--lambda", "0.1"});  // missing the required --input
  usage({"estimate", "--input", sim_panel(), "--transform", "bogus",
         "--lambda", "0.1", "--out-dir", fresh_dir("u1").string()});
  usage({"estimate", "--input", sim_panel(), "--lambda", "0.1", "--auto-cv",
         "--out-dir", fresh_dir("u2").string()});
  usage({"estimate", "--input", sim_panel(),
         "--out-dir", fresh_dir("u3").string()});  // no lambda, no auto-cv
  usage({"simulate", "--N", "1", "--out-dir", fresh_dir("u4").string()});
}

TEST_CASE("data errors exit 2 with a JSON error line") {
  const CliRun missing = run({"validate", "--input", "/nonexistent/panel.csv",
                              "--out-dir", fresh_dir("d1").string()});
  CHECK(missing.exit_code == 2);
  CHECK(contains(missing.err, "\"error\""));
  CHECK(contains(missing.err, "\"data\""));

  const fs::path dir = fresh_dir("d2");
  const fs::path bad = dir / "bad.csv";
  std::ofstream(bad) << "region,year\nA,2000\n";  // no outcome column
  const CliRun malformed = run({"estimate", "--input", bad.string(),
                                "--lambda", "0.1", "--out-dir",
                                (dir / "out").string()});
  CHECK(malformed.exit_code == 2);
  CHECK(contains(malformed.err, "\"data\""));

  // as-log requires a level column; the confounded sim has none.
  const fs::path sim = fresh_dir("d3");
  REQUIRE(run({"simulate", "--N", "12", "--T", "8", "--seed", "5",
               "--out-dir", sim.string()})
              .exit_code == 0);
  const CliRun nolevels = run({"estimate", "--input",
                               (sim / "panel.csv").string(), "--transform",
                               "as-log", "--lambda", "0.1", "--out-dir",
                               (sim / "out").string()});
  CHECK(nolevels.exit_code == 2);
  CHECK(contains(nolevels.err, "level"));
}

TEST_CASE("--format csv prints key=value style summaries") {
  const fs::path out = fresh_dir("fmt");
  const CliRun j = run({"validate", "--input", sim_panel(), "--format", "json",
                        "--out-dir", out.string()});
  REQUIRE(j.exit_code == 0);
  CHECK(contains(j.out, "n_regions"));
  const CliRun c = run({"validate", "--input", sim_panel(), "--format", "csv",
                        "--out-dir", out.string()});
  REQUIRE(c.exit_code == 0);
  CHECK(contains(c.out, "n_regions"));
  CHECK(j.out != c.out);
}
