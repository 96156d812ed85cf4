#include "panelcf/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "panelcf/csv.hpp"
#include "panelcf/dgp.hpp"
#include "panelcf/effects.hpp"
#include "panelcf/errors.hpp"
#include "panelcf/inference.hpp"
#include "panelcf/io.hpp"
#include "panelcf/panel.hpp"
#include "panelcf/rng.hpp"
#include "panelcf/solver.hpp"
#include "panelcf/twfe.hpp"

namespace panelcf {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using KvList = std::vector<std::pair<std::string, std::string>>;

struct GlobalOpts {
  std::uint64_t seed = 42;
  int threads = 0;  // 0 = all hardware threads
  std::string out_dir = ".";
  std::string format = "json";
};

struct FitFlags {
  double lambda = -1.0;  // explicit penalty; < 0 means unset
  bool auto_cv = false;
  int folds = 5;
  int grid_size = 30;
  bool no_unit_fe = false;
  bool no_time_fe = false;
  int max_iters = 500;
  double tol = 1e-7;
};

struct LoadedPanel {
  PanelDataset data;
  TreatmentSchedule schedule;
  ObservationSet O;
};

int resolve_threads(int flag) {
  if (flag > 0) return flag;
  const unsigned hc = std::thread::hardware_concurrency();
  return hc > 0 ? static_cast<int>(hc) : 1;
}

std::string out_path(const GlobalOpts& g, const std::string& name) {
  return (fs::path(g.out_dir) / name).string();
}

void print_summary(const GlobalOpts& g, const KvList& kv) {
  if (g.format == "csv") {
    std::string head, vals;
    for (size_t i = 0; i < kv.size(); ++i) {
      if (i) {
        head += ',';
        vals += ',';
      }
      head += kv[i].first;
      vals += kv[i].second;
    }
    std::cout << head << '\n' << vals << '\n';
  } else {
    json j = json::object();
    for (const auto& [k, v] : kv) j[k] = v;
    std::cout << j.dump() << '\n';
  }
}

// Subcommand flags are echoed into the manifest; --threads and --out-dir are
// deliberately left out so outputs stay byte-identical across thread counts
// and directory layouts.
void emit_manifest(const GlobalOpts& g, const std::string& command,
                   const KvList& inputs, KvList options) {
  options.push_back({"seed", std::to_string(g.seed)});
  options.push_back({"format", g.format});
  std::sort(options.begin(), options.end());
  write_manifest(out_path(g, "manifest.json"), command, inputs, options);
}

TransformKind parse_transform(const std::string& name, bool* pre_logged) {
  *pre_logged = false;
  if (name == "identity") return TransformKind::identity;
  if (name == "log") return TransformKind::log_per_capita;
  if (name == "log-ratio") return TransformKind::log_ratio;
  if (name == "as-log") {
    *pre_logged = true;
    return TransformKind::log_per_capita;
  }
  throw ConfigError("unknown --transform '" + name +
                    "' (expected identity, log, log-ratio, or as-log)");
}

LoadedPanel load_input(const std::string& path, const std::string& transform,
                       bool allow_reversal) {
  LoadedPanel lp;
  lp.data = load_panel(path);
  bool pre_logged = false;
  const TransformKind kind = parse_transform(transform, &pre_logged);
  if (pre_logged) {
    // Outcome column already holds log(level); tag it without recomputing so
    // round-tripped files stay bit-exact.
    if (!lp.data.has_levels())
      throw DataError("--transform as-log needs a level column");
    lp.data.transform = kind;
  } else if (kind != TransformKind::identity) {
    lp.data = transform_outcome(lp.data, kind);
  }
  lp.schedule = derive_schedule(lp.data, allow_reversal);
  lp.O = build_observation_set(lp.data, lp.schedule);
  return lp;
}

SolverConfig make_solver_config(const FitFlags& f, const GlobalOpts& g) {
  SolverConfig scfg;
  scfg.seed = g.seed;
  scfg.max_iters = f.max_iters;
  scfg.tol = f.tol;
  scfg.include_unit_fe = !f.no_unit_fe;
  scfg.include_time_fe = !f.no_time_fe;
  return scfg;
}

std::pair<FactorFit, std::optional<CvResult>> run_fit(const LoadedPanel& lp,
                                                      const FitFlags& f,
                                                      const GlobalOpts& g) {
  if (f.auto_cv && f.lambda >= 0)
    throw ConfigError("pass either --lambda or --auto-cv, not both");
  SolverConfig scfg = make_solver_config(f, g);
  std::optional<CvResult> cv;
  const auto grid = default_lambda_grid(lp.data, lp.O, scfg, f.grid_size);
  if (f.auto_cv) {
    cv = cross_validate(lp.data, lp.O, grid, f.folds, scfg,
                        resolve_threads(g.threads));
    scfg.lambda = cv->lambda_star;
  } else if (f.lambda >= 0) {
    scfg.lambda = f.lambda;
  } else {
    throw ConfigError("pass --lambda <value> or --auto-cv");
  }
  return {fit_mcnnm_path(lp.data, lp.O, scfg, grid), std::move(cv)};
}

void fit_options(const FitFlags& f, KvList& options) {
  if (f.auto_cv) {
    options.push_back({"auto_cv", "1"});
    options.push_back({"folds", std::to_string(f.folds)});
    options.push_back({"grid_size", std::to_string(f.grid_size)});
  } else {
    options.push_back({"lambda", fmt_double(f.lambda)});
  }
  options.push_back({"unit_fe", f.no_unit_fe ? "0" : "1"});
  options.push_back({"time_fe", f.no_time_fe ? "0" : "1"});
  options.push_back({"max_iters", std::to_string(f.max_iters)});
  options.push_back({"tol", fmt_double(f.tol)});
}

Eigen::VectorXd json_vector(const json& a) {
  Eigen::VectorXd v(a.size());
  for (size_t i = 0; i < a.size(); ++i) v[i] = a[i].get<double>();
  return v;
}

// Rebuild a FactorFit from fit.json + lhat.csv written by `estimate`.
FactorFit read_fit_artifacts(const std::string& dir, const PanelDataset& data) {
  const json j = json::parse(read_file((fs::path(dir) / "fit.json").string()));
  FactorFit fit;
  fit.lambda = j.at("lambda").get<double>();
  fit.rank = j.at("rank").get<int>();
  fit.iterations = j.at("iterations").get<int>();
  fit.converged = j.at("converged").get<bool>();
  fit.objective_trace = j.at("objective_trace").get<std::vector<double>>();
  fit.beta_hat = json_vector(j.at("beta"));
  fit.Gamma_hat = json_vector(j.at("gamma"));
  fit.Delta_hat = json_vector(j.at("delta"));
  const int p = data.n_covariates();
  fit.has_intercept = p > 0 && fit.beta_hat.size() == p + 1;
  if (fit.Gamma_hat.size() != data.n_regions() ||
      fit.Delta_hat.size() != data.n_periods() ||
      (fit.beta_hat.size() != 0 && !fit.has_intercept &&
       fit.beta_hat.size() != p))
    throw DataError("fit artifacts in '" + dir + "' do not match the panel");

  std::map<std::string, int> region_of;
  for (int i = 0; i < data.n_regions(); ++i) region_of[data.region_ids[i]] = i;
  fit.L_hat = Eigen::MatrixXd::Zero(data.n_regions(), data.n_periods());
  const CsvTable t = read_csv((fs::path(dir) / "lhat.csv").string());
  const int jr = t.column("region"), jy = t.column("year"), jv = t.column("value");
  if (jr < 0 || jy < 0 || jv < 0)
    throw DataError("lhat.csv in '" + dir + "' lacks region/year/value columns");
  for (const auto& row : t.rows) {
    const auto it = region_of.find(row[jr]);
    const auto year = parse_cell(row[jy], "lhat.csv year");
    const auto value = parse_cell(row[jv], "lhat.csv value");
    if (it == region_of.end() || !year || !value)
      throw DataError("lhat.csv row does not match the panel");
    const int s = static_cast<int>(*year) - data.years.front();
    if (s < 0 || s >= data.n_periods())
      throw DataError("lhat.csv year outside the panel range");
    fit.L_hat(it->second, s) = *value;
  }
  return fit;
}

// ---------- subcommand bodies ----------

struct ValidateArgs {
  std::string input;
  bool allow_reversal = false;
};

int cmd_validate(const GlobalOpts& g, const ValidateArgs& a) {
  const std::string input_hash = hash_file(a.input);
  const ValidationReport rep = validate_panel(a.input, {}, a.allow_reversal);
  write_validation_report(rep, out_path(g, "validation.json"));
  emit_manifest(g, "validate", {{a.input, input_hash}},
                {{"allow_reversal", a.allow_reversal ? "1" : "0"}});
  print_summary(g, {{"n_regions", std::to_string(rep.n_regions)},
                    {"n_years", std::to_string(rep.n_years)},
                    {"n_treated", std::to_string(rep.n_treated)},
                    {"n_obs", std::to_string(rep.n_obs)},
                    {"n_issues", std::to_string(rep.issues.size())}});
  return 0;
}

struct CvArgs {
  std::string input;
  std::string transform = "identity";
  bool allow_reversal = false;
  FitFlags fit;
};

int cmd_cv(const GlobalOpts& g, const CvArgs& a) {
  const std::string input_hash = hash_file(a.input);
  const LoadedPanel lp = load_input(a.input, a.transform, a.allow_reversal);
  const SolverConfig scfg = make_solver_config(a.fit, g);
  const auto grid = default_lambda_grid(lp.data, lp.O, scfg, a.fit.grid_size);
  const CvResult cv = cross_validate(lp.data, lp.O, grid, a.fit.folds, scfg,
                                     resolve_threads(g.threads));
  write_cv_result(cv, out_path(g, "cv.json"), out_path(g, "cv_curve.csv"));
  KvList options = {{"transform", a.transform},
                    {"folds", std::to_string(a.fit.folds)},
                    {"grid_size", std::to_string(a.fit.grid_size)}};
  emit_manifest(g, "cv", {{a.input, input_hash}}, std::move(options));
  print_summary(g, {{"lambda_star", fmt_double(cv.lambda_star)},
                    {"se_rule_lambda", fmt_double(cv.se_rule_lambda)},
                    {"grid_size", std::to_string(cv.lambda_grid.size())},
                    {"folds", std::to_string(a.fit.folds)}});
  return 0;
}

struct EstimateArgs {
  std::string input;
  std::string transform = "identity";
  bool allow_reversal = false;
  FitFlags fit;
};

int cmd_estimate(const GlobalOpts& g, const EstimateArgs& a) {
  const std::string input_hash = hash_file(a.input);
  const LoadedPanel lp = load_input(a.input, a.transform, a.allow_reversal);
  const auto [fit, cv] = run_fit(lp, a.fit, g);
  write_factor_fit(fit, out_path(g, "fit.json"));
  write_lhat_csv(fit, lp.data, out_path(g, "lhat.csv"));
  if (cv) write_cv_result(*cv, out_path(g, "cv.json"), out_path(g, "cv_curve.csv"));

  const EffectsMatrix eff = impute_effects(lp.data, fit, lp.schedule);
  write_effects_csv(eff, lp.data, lp.schedule, out_path(g, "effects.csv"));
  write_event_study(
      att_event_study(eff, lp.schedule, lp.data, Alignment::event_time),
      out_path(g, "event_study.csv"));
  write_event_study(
      att_event_study(eff, lp.schedule, lp.data, Alignment::calendar),
      out_path(g, "att_calendar.csv"));

  KvList options = {{"transform", a.transform},
                    {"allow_reversal", a.allow_reversal ? "1" : "0"}};
  fit_options(a.fit, options);
  emit_manifest(g, "estimate", {{a.input, input_hash}}, std::move(options));
  print_summary(g, {{"lambda", fmt_double(fit.lambda)},
                    {"rank", std::to_string(fit.rank)},
                    {"iterations", std::to_string(fit.iterations)},
                    {"converged", fit.converged ? "1" : "0"},
                    {"n_support", std::to_string(eff.n_support)}});
  return 0;
}

struct BootstrapArgs {
  std::string input;
  std::string transform = "identity";
  bool allow_reversal = false;
  FitFlags fit;
  int B = 1000;
  double level = 0.95;
  bool refit_lambda = false;
};

int cmd_bootstrap(const GlobalOpts& g, const BootstrapArgs& a) {
  const std::string input_hash = hash_file(a.input);
  const LoadedPanel lp = load_input(a.input, a.transform, a.allow_reversal);
  const auto [fit, cv] = run_fit(lp, a.fit, g);
  write_factor_fit(fit, out_path(g, "fit.json"));

  BootstrapConfig bcfg;
  bcfg.B = a.B;
  bcfg.seed = g.seed;
  bcfg.level = a.level;
  bcfg.refit_lambda = a.refit_lambda;
  bcfg.n_threads = resolve_threads(g.threads);
  bcfg.cv_folds = a.fit.folds;
  bcfg.solver = make_solver_config(a.fit, g);
  const AttBands bands = bootstrap_att(lp.data, lp.O, fit, lp.schedule, bcfg);
  write_att_bands(bands, out_path(g, "att_bands.csv"));

  KvList options = {{"transform", a.transform},
                    {"B", std::to_string(a.B)},
                    {"level", fmt_double(a.level)},
                    {"refit_lambda", a.refit_lambda ? "1" : "0"}};
  fit_options(a.fit, options);
  emit_manifest(g, "bootstrap", {{a.input, input_hash}}, std::move(options));
  print_summary(g,
                {{"B", std::to_string(a.B)},
                 {"n_failed", std::to_string(bands.n_failed)},
                 {"level", fmt_double(a.level)},
                 {"n_event_times", std::to_string(bands.event_time.size())}});
  return 0;
}

struct ReportArgs {
  std::string input;
  std::string transform = "identity";
  bool allow_reversal = false;
  std::string fit_dir;  // reuse estimate artifacts when set
  FitFlags fit;
  int euro_horizon = 7;
  std::string intensity_agg = "mean";
  double bandwidth = 0.0;
};

int cmd_report(const GlobalOpts& g, const ReportArgs& a) {
  const std::string input_hash = hash_file(a.input);
  const LoadedPanel lp = load_input(a.input, a.transform, a.allow_reversal);
  FactorFit fit;
  std::optional<CvResult> cv;
  if (!a.fit_dir.empty()) {
    fit = read_fit_artifacts(a.fit_dir, lp.data);
  } else {
    std::tie(fit, cv) = run_fit(lp, a.fit, g);
  }
  const EffectsMatrix eff = impute_effects(lp.data, fit, lp.schedule);
  json headline;
  headline["lambda"] = fit.lambda;
  headline["n_treated"] = lp.schedule.N_tr;

  // Event-study ATT and the per-region effect samples behind the density plots.
  const EventStudySeries es =
      att_event_study(eff, lp.schedule, lp.data, Alignment::event_time);
  write_event_study(es, out_path(g, "event_study.csv"));
  for (const auto& row : es.rows)
    if (row.time == 7 || row.time == 14 || row.time == 21)
      headline["att_h" + std::to_string(row.time)] = row.att;

  {
    CsvTable t;
    t.header = {"region", "horizon", "tau_hat"};
    const int T = lp.data.n_periods();
    for (const int i : lp.schedule.treated_set) {
      const int Ti = lp.schedule.T_i[i];
      double sum = 0.0;
      int n = 0;
      for (int s = Ti; s < T; ++s) {
        if (std::isnan(eff.tau_hat(i, s))) continue;
        sum += eff.tau_hat(i, s);
        ++n;
        const int e = s - Ti;
        if (e == 7 || e == 14 || e == 21)
          t.rows.push_back({lp.data.region_ids[i], std::to_string(e),
                            fmt_double(eff.tau_hat(i, s))});
      }
      if (n > 0)
        t.rows.push_back(
            {lp.data.region_ids[i], "average", fmt_double(sum / n)});
    }
    write_csv(out_path(g, "tau_samples.csv"), t);
  }

  {
    CsvTable t;
    t.header = {"horizon", "n_regions", "share_positive", "skewness",
                "kurtosis"};
    for (const auto& s : distribution_summary(eff, lp.schedule)) {
      t.rows.push_back({s.horizon_label, std::to_string(s.n_regions),
                        fmt_double(s.share_positive),
                        s.moments_defined ? fmt_double(s.skewness) : "",
                        s.moments_defined ? fmt_double(s.kurtosis) : ""});
      if (s.horizon_label == "7") headline["share_positive_h7"] = s.share_positive;
    }
    write_csv(out_path(g, "table4.csv"), t);
  }

  try {
    const QuintileResult qr = quintile_att(eff, lp.data, lp.schedule);
    CsvTable att_t, path_t, member_t;
    att_t.header = {"quintile", "event_time", "att", "n_regions", "placebo"};
    path_t.header = {"quintile", "event_time", "observed_mean",
                     "counterfactual_mean", "n_regions"};
    member_t.header = {"quintile", "region"};
    for (int q = 0; q < 5; ++q) {
      for (const auto& row : qr.att[q].rows)
        att_t.rows.push_back({std::to_string(q + 1), std::to_string(row.time),
                              fmt_double(row.att),
                              std::to_string(row.n_regions),
                              row.placebo ? "1" : "0"});
      for (const auto& p : qr.paths[q])
        path_t.rows.push_back(
            {std::to_string(q + 1), std::to_string(p.event_time),
             fmt_double(p.observed_mean), fmt_double(p.counterfactual_mean),
             std::to_string(p.n_regions)});
    }
    for (size_t r = 0; r < qr.region_index.size(); ++r)
      member_t.rows.push_back({std::to_string(qr.quintile[r]),
                               lp.data.region_ids[qr.region_index[r]]});
    write_csv(out_path(g, "quintile_att.csv"), att_t);
    write_csv(out_path(g, "quintile_paths.csv"), path_t);
    write_csv(out_path(g, "quintile_members.csv"), member_t);
    headline["quintiles"] = "written";
  } catch (const DataError& e) {
    headline["quintiles"] = std::string("skipped: ") + e.what();
  }

  try {
    const EuroEffect euro =
        euro_effect(eff, lp.data, lp.schedule, a.euro_horizon);
    CsvTable t;
    t.header = {"region", "level_delta"};
    for (int i = 0; i < euro.n; ++i)
      t.rows.push_back({euro.region_ids[i], fmt_double(euro.delta[i])});
    write_csv(out_path(g, "euro_effect.csv"), t);
    headline["euro_mean_delta_h" + std::to_string(a.euro_horizon)] =
        euro.mean_delta;
  } catch (const DataError& e) {
    headline["euro_effect"] = std::string("skipped: ") + e.what();
  }

  try {
    const GiniPath gp = gini_path(lp.data, eff, lp.schedule);
    CsvTable t;
    t.header = {"year", "gini_observed", "gini_counterfactual", "n_regions"};
    for (size_t k = 0; k < gp.years.size(); ++k)
      t.rows.push_back({std::to_string(gp.years[k]), fmt_double(gp.observed[k]),
                        fmt_double(gp.counterfactual[k]),
                        std::to_string(gp.n_regions[k])});
    write_csv(out_path(g, "gini.csv"), t);
    if (!gp.years.empty()) {
      headline["gini_observed_first"] = gp.observed.front();
      headline["gini_observed_last"] = gp.observed.back();
      headline["gini_counterfactual_last"] = gp.counterfactual.back();
    }
  } catch (const DataError& e) {
    headline["gini"] = std::string("skipped: ") + e.what();
  }

  try {
    const IntensityAgg agg = a.intensity_agg == "cumulative"
                                 ? IntensityAgg::cumulative
                                 : IntensityAgg::mean;
    if (a.intensity_agg != "mean" && a.intensity_agg != "cumulative")
      throw ConfigError("unknown --intensity-agg '" + a.intensity_agg + "'");
    const auto curves = intensity_curve(eff, lp.data, lp.schedule,
                                        {-1, 7, 14, 21}, a.bandwidth, agg);
    CsvTable t;
    t.header = {"horizon", "intensity", "att_smoothed"};
    json peaks = json::array();
    for (const auto& c : curves) {
      for (int k = 0; k < c.grid.size(); ++k)
        t.rows.push_back({std::to_string(c.horizon), fmt_double(c.grid[k]),
                          fmt_double(c.value[k])});
      json pk;
      pk["horizon"] = c.horizon;
      pk["argmax_intensity"] = c.argmax_intensity;
      pk["peak"] = c.peak;
      pk["peak_pct"] = c.peak_pct;
      pk["bandwidth"] = c.bandwidth;
      pk["n_regions"] = c.n_regions;
      peaks.push_back(pk);
    }
    write_csv(out_path(g, "intensity.csv"), t);
    headline["intensity_peaks"] = peaks;
  } catch (const DataError& e) {
    headline["intensity"] = std::string("skipped: ") + e.what();
  }

  write_file(out_path(g, "headline.json"), headline.dump(2) + "\n");

  KvList options = {{"transform", a.transform},
                    {"euro_horizon", std::to_string(a.euro_horizon)},
                    {"intensity_agg", a.intensity_agg},
                    {"bandwidth", fmt_double(a.bandwidth)}};
  if (!a.fit_dir.empty())
    options.push_back({"fit_dir", a.fit_dir});
  else
    fit_options(a.fit, options);
  emit_manifest(g, "report", {{a.input, input_hash}}, std::move(options));
  print_summary(g, {{"n_treated", std::to_string(lp.schedule.N_tr)},
                    {"n_support", std::to_string(eff.n_support)},
                    {"lambda", fmt_double(fit.lambda)}});
  return 0;
}

struct SimulateArgs {
  DgpConfig cfg;
  std::string effect = "constant";
  std::string assign = "random";
  std::string adoption = "staggered";
  std::vector<double> beta;
  double mask_fraction = 0.0;
};

int cmd_simulate(const GlobalOpts& g, SimulateArgs& a) {
  if (a.effect == "zero") a.cfg.effect = EffectKind::zero;
  else if (a.effect == "constant") a.cfg.effect = EffectKind::constant;
  else if (a.effect == "linear") a.cfg.effect = EffectKind::linear;
  else throw ConfigError("unknown --effect '" + a.effect + "'");
  if (a.assign == "random") a.cfg.assign = AssignRule::random_share;
  else if (a.assign == "loading") a.cfg.assign = AssignRule::loading_ranked;
  else throw ConfigError("unknown --assign '" + a.assign + "'");
  if (a.adoption == "simultaneous")
    a.cfg.adoption = AdoptionPattern::simultaneous;
  else if (a.adoption == "staggered")
    a.cfg.adoption = AdoptionPattern::staggered_uniform;
  else throw ConfigError("unknown --adoption '" + a.adoption + "'");
  if (!a.beta.empty()) {
    a.cfg.beta_true =
        Eigen::Map<Eigen::VectorXd>(a.beta.data(), a.beta.size());
    if (a.cfg.p == 0) a.cfg.p = static_cast<int>(a.beta.size());
  }
  a.cfg.seed = g.seed;

  auto [data, truth] = generate(a.cfg);
  if (a.mask_fraction > 0)
    data = mask_additional(data, a.mask_fraction, splitmix64(g.seed) + 1);
  save_panel(data, out_path(g, "panel.csv"));

  json tj;
  tj["N"] = a.cfg.N;
  tj["T"] = a.cfg.T;
  tj["K"] = a.cfg.K;
  tj["p"] = a.cfg.p;
  tj["seed"] = a.cfg.seed;
  tj["noise_sd"] = a.cfg.noise_sd;
  tj["ar_coef"] = a.cfg.ar_coef;
  tj["effect"] = a.effect;
  tj["effect_param"] = a.cfg.effect_param;
  tj["assign"] = a.assign;
  tj["share"] = a.cfg.share;
  tj["adoption"] = a.adoption;
  tj["mask_fraction"] = a.mask_fraction;
  json beta = json::array();
  for (Eigen::Index k = 0; k < truth.beta.size(); ++k)
    beta.push_back(truth.beta[k]);
  tj["beta"] = beta;
  json treated = json::array();
  json adoption_year = json::object();
  for (const int i : truth.treated) {
    treated.push_back(data.region_ids[i]);
    adoption_year[data.region_ids[i]] = data.years.front() + truth.T_i[i];
  }
  tj["treated"] = treated;
  tj["adoption_year"] = adoption_year;
  write_file(out_path(g, "truth.json"), tj.dump(2) + "\n");

  {
    CsvTable t;
    t.header = {"region", "year", "tau"};
    for (const int i : truth.treated)
      for (int s = truth.T_i[i]; s < a.cfg.T; ++s)
        t.rows.push_back({data.region_ids[i], std::to_string(data.years[s]),
                          fmt_double(truth.tau(i, s))});
    write_csv(out_path(g, "truth_tau.csv"), t);
  }
  {
    CsvTable t;
    t.header = {"region", "year", "value"};
    for (int i = 0; i < a.cfg.N; ++i)
      for (int s = 0; s < a.cfg.T; ++s)
        t.rows.push_back({data.region_ids[i], std::to_string(data.years[s]),
                          fmt_double(truth.L(i, s))});
    write_csv(out_path(g, "truth_L.csv"), t);
  }

  KvList options = {{"N", std::to_string(a.cfg.N)},
                    {"T", std::to_string(a.cfg.T)},
                    {"K", std::to_string(a.cfg.K)},
                    {"p", std::to_string(a.cfg.p)},
                    {"noise_sd", fmt_double(a.cfg.noise_sd)},
                    {"ar_coef", fmt_double(a.cfg.ar_coef)},
                    {"effect", a.effect},
                    {"effect_param", fmt_double(a.cfg.effect_param)},
                    {"assign", a.assign},
                    {"share", fmt_double(a.cfg.share)},
                    {"adoption", a.adoption},
                    {"adopt_start", std::to_string(a.cfg.adopt_start)},
                    {"adopt_end", std::to_string(a.cfg.adopt_end)},
                    {"first_year", std::to_string(a.cfg.first_year)},
                    {"emit_levels", a.cfg.emit_levels ? "1" : "0"},
                    {"emit_intensity", a.cfg.emit_intensity ? "1" : "0"},
                    {"mask_fraction", fmt_double(a.mask_fraction)}};
  emit_manifest(g, "simulate", {}, std::move(options));
  print_summary(g,
                {{"n_regions", std::to_string(a.cfg.N)},
                 {"n_years", std::to_string(a.cfg.T)},
                 {"n_treated", std::to_string(truth.treated.size())},
                 {"panel", out_path(g, "panel.csv")}});
  return 0;
}

struct CompareArgs {
  std::string input;
  std::string transform = "identity";
  bool allow_reversal = false;
  FitFlags fit;
  int leads = -1;  // -1 = full supported range
  int lags = -1;
  std::string truth_tau;  // optional truth_tau.csv for bias columns
};

int cmd_compare(const GlobalOpts& g, const CompareArgs& a) {
  const std::string input_hash = hash_file(a.input);
  const LoadedPanel lp = load_input(a.input, a.transform, a.allow_reversal);
  const auto [fit, cv] = run_fit(lp, a.fit, g);
  const EffectsMatrix eff = impute_effects(lp.data, fit, lp.schedule);
  const EventStudySeries mc =
      att_event_study(eff, lp.schedule, lp.data, Alignment::event_time);

  int leads = a.leads, lags = a.lags;
  if (leads < 0 || lags < 0) {
    int max_lead = 0, max_lag = 0;
    for (const int i : lp.schedule.treated_set) {
      max_lead = std::max(max_lead, lp.schedule.T_i[i]);
      max_lag = std::max(max_lag, lp.data.n_periods() - 1 - lp.schedule.T_i[i]);
    }
    if (leads < 0) leads = max_lead;
    if (lags < 0) lags = max_lag;
  }
  const EventStudySeries tw =
      twfe_event_study(lp.data, lp.schedule, leads, lags, true);
  const TwfeFit twfe = fit_twfe(lp.data, true);
  write_twfe_fit(twfe, out_path(g, "twfe.json"));

  std::map<int, std::pair<double, int>> truth;  // event -> (mean, n)
  if (!a.truth_tau.empty()) {
    std::map<std::string, int> region_of;
    for (int i = 0; i < lp.data.n_regions(); ++i)
      region_of[lp.data.region_ids[i]] = i;
    const CsvTable t = read_csv(a.truth_tau);
    const int jr = t.column("region"), jy = t.column("year"),
              jt = t.column("tau");
    if (jr < 0 || jy < 0 || jt < 0)
      throw DataError("--truth file lacks region/year/tau columns");
    std::map<int, std::pair<double, int>> acc;
    for (const auto& row : t.rows) {
      const auto it = region_of.find(row[jr]);
      const auto year = parse_cell(row[jy], "truth year");
      const auto tau = parse_cell(row[jt], "truth tau");
      if (it == region_of.end() || !year || !tau) continue;
      const int s = static_cast<int>(*year) - lp.data.years.front();
      if (s < 0 || s >= lp.data.n_periods()) continue;
      auto& [sum, n] = acc[s - lp.schedule.T_i[it->second]];
      sum += *tau;
      ++n;
    }
    for (const auto& [e, sn] : acc)
      truth[e] = {sn.first / sn.second, sn.second};
  }

  std::map<int, const EventStudyRow*> mc_rows, tw_rows;
  for (const auto& r : mc.rows) mc_rows[r.time] = &r;
  for (const auto& r : tw.rows) tw_rows[r.time] = &r;
  std::vector<int> times;
  for (const auto& [e, r] : mc_rows)
    if (e >= -leads && e <= lags) times.push_back(e);
  for (const auto& [e, r] : tw_rows)
    if (std::find(times.begin(), times.end(), e) == times.end() &&
        e >= -leads && e <= lags)
      times.push_back(e);
  std::sort(times.begin(), times.end());

  CsvTable t;
  t.header = {"event_time", "att_mcnnm", "n_mcnnm", "att_twfe", "n_twfe"};
  if (!truth.empty()) {
    t.header.push_back("att_true");
    t.header.push_back("bias_mcnnm");
    t.header.push_back("bias_twfe");
  }
  for (const int e : times) {
    const auto* m = mc_rows.count(e) ? mc_rows[e] : nullptr;
    const auto* w = tw_rows.count(e) ? tw_rows[e] : nullptr;
    std::vector<std::string> row = {
        std::to_string(e), m ? fmt_double(m->att) : "",
        m ? std::to_string(m->n_regions) : "", w ? fmt_double(w->att) : "",
        w ? std::to_string(w->n_regions) : ""};
    if (!truth.empty()) {
      const auto it = truth.find(e);
      row.push_back(it != truth.end() ? fmt_double(it->second.first) : "");
      row.push_back(it != truth.end() && m
                        ? fmt_double(m->att - it->second.first)
                        : "");
      row.push_back(it != truth.end() && w
                        ? fmt_double(w->att - it->second.first)
                        : "");
    }
    t.rows.push_back(std::move(row));
  }
  write_csv(out_path(g, "compare.csv"), t);

  KvList inputs = {{a.input, input_hash}};
  if (!a.truth_tau.empty()) inputs.push_back({a.truth_tau, hash_file(a.truth_tau)});
  KvList options = {{"transform", a.transform},
                    {"leads", std::to_string(leads)},
                    {"lags", std::to_string(lags)}};
  fit_options(a.fit, options);
  emit_manifest(g, "compare", std::move(inputs), std::move(options));
  print_summary(g, {{"n_event_times", std::to_string(times.size())},
                    {"twfe_tau_hat", fmt_double(twfe.tau_hat)},
                    {"lambda", fmt_double(fit.lambda)}});
  return 0;
}

void add_fit_flags(CLI::App* sub, FitFlags& f) {
  sub->add_option("--lambda", f.lambda,
                  "Nuclear-norm penalty; skips cross-validation");
  sub->add_flag("--auto-cv", f.auto_cv,
                "Select the penalty by K-fold cross-validation");
  sub->add_option("--folds", f.folds, "Cross-validation folds")
      ->check(CLI::Range(2, 1000));
  sub->add_option("--grid-size", f.grid_size, "Penalty grid size")
      ->check(CLI::Range(2, 1000));
  sub->add_flag("--no-unit-fe", f.no_unit_fe, "Drop unit fixed effects");
  sub->add_flag("--no-time-fe", f.no_time_fe, "Drop time fixed effects");
  sub->add_option("--max-iters", f.max_iters, "Outer iteration cap")
      ->check(CLI::PositiveNumber);
  sub->add_option("--tol", f.tol, "Relative objective tolerance")
      ->check(CLI::PositiveNumber);
}

void add_input_flags(CLI::App* sub, std::string& input, std::string& transform,
                     bool& allow_reversal) {
  sub->add_option("--input", input, "Panel CSV")->required();
  sub->add_option("--transform", transform,
                  "Outcome transform: identity, log, log-ratio, or as-log "
                  "(outcome already holds log of the level column)");
  sub->add_flag("--allow-reversal", allow_reversal,
                "Permit treatment switching back off");
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  GlobalOpts g;
  CLI::App app{"Panel counterfactual estimation via regularized matrix "
               "completion"};
  app.name("panelcf");
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);
  app.add_option("--seed", g.seed, "Random seed")
      ->envname("PANELCF_SEED")
      ->capture_default_str();
  app.add_option("--threads", g.threads,
                 "Worker threads for CV and bootstrap (0 = all cores)");
  app.add_option("--out-dir", g.out_dir, "Output directory")
      ->capture_default_str();
  app.add_option("--format", g.format, "Console summary format: json or csv")
      ->check(CLI::IsMember({"json", "csv"}));

  ValidateArgs va;
  auto* sub_validate =
      app.add_subcommand("validate", "Check a panel CSV and report issues");
  sub_validate->fallthrough();
  sub_validate->add_option("--input", va.input, "Panel CSV")->required();
  sub_validate->add_flag("--allow-reversal", va.allow_reversal,
                         "Permit treatment switching back off");

  CvArgs ca;
  auto* sub_cv =
      app.add_subcommand("cv", "Cross-validate the nuclear-norm penalty");
  sub_cv->fallthrough();
  add_input_flags(sub_cv, ca.input, ca.transform, ca.allow_reversal);
  add_fit_flags(sub_cv, ca.fit);

  EstimateArgs ea;
  auto* sub_estimate = app.add_subcommand(
      "estimate", "Fit the completion model and impute effects");
  sub_estimate->fallthrough();
  add_input_flags(sub_estimate, ea.input, ea.transform, ea.allow_reversal);
  add_fit_flags(sub_estimate, ea.fit);

  BootstrapArgs ba;
  auto* sub_bootstrap = app.add_subcommand(
      "bootstrap", "Parametric bootstrap bands for the event-study effects");
  sub_bootstrap->fallthrough();
  add_input_flags(sub_bootstrap, ba.input, ba.transform, ba.allow_reversal);
  add_fit_flags(sub_bootstrap, ba.fit);
  sub_bootstrap->add_option("--B", ba.B, "Bootstrap replicates")
      ->check(CLI::Range(2, 1000000));
  sub_bootstrap->add_option("--level", ba.level, "Coverage level");
  sub_bootstrap->add_flag("--refit-lambda", ba.refit_lambda,
                          "Re-cross-validate the penalty per replicate");

  ReportArgs ra;
  auto* sub_report = app.add_subcommand(
      "report", "Distributional, quintile, inequality, and intensity tables");
  sub_report->fallthrough();
  add_input_flags(sub_report, ra.input, ra.transform, ra.allow_reversal);
  add_fit_flags(sub_report, ra.fit);
  sub_report->add_option("--fit-dir", ra.fit_dir,
                         "Directory with fit.json/lhat.csv from `estimate`");
  sub_report->add_option("--euro-horizon", ra.euro_horizon,
                         "Event time for the level-difference table");
  sub_report->add_option("--intensity-agg", ra.intensity_agg,
                         "Per-region intensity summary: mean or cumulative")
      ->check(CLI::IsMember({"mean", "cumulative"}));
  sub_report->add_option("--bandwidth", ra.bandwidth,
                         "Kernel bandwidth override for intensity curves");

  SimulateArgs sa;
  auto* sub_simulate =
      app.add_subcommand("simulate", "Generate a synthetic panel with truth");
  sub_simulate->fallthrough();
  sub_simulate->add_option("--N", sa.cfg.N, "Regions")->check(CLI::Range(2, 100000));
  sub_simulate->add_option("--T", sa.cfg.T, "Years")->check(CLI::Range(2, 100000));
  sub_simulate->add_option("--K", sa.cfg.K, "True factor count")
      ->check(CLI::Range(0, 1000));
  sub_simulate->add_option("--p", sa.cfg.p, "Covariates")
      ->check(CLI::Range(0, 1000));
  sub_simulate->add_option("--ar", sa.cfg.ar_coef, "Factor AR(1) coefficient");
  sub_simulate->add_option("--factor-sd", sa.cfg.factor_innov_sd,
                           "Factor innovation scale");
  sub_simulate->add_option("--loading-mean", sa.cfg.loading_mean,
                           "Loading mean");
  sub_simulate->add_option("--loading-sd", sa.cfg.loading_sd, "Loading scale");
  sub_simulate->add_option("--beta", sa.beta, "Covariate coefficients");
  sub_simulate->add_option("--noise-sd", sa.cfg.noise_sd, "Noise scale");
  sub_simulate->add_option("--effect", sa.effect,
                           "Effect schedule: zero, constant, or linear");
  sub_simulate->add_option("--effect-param", sa.cfg.effect_param,
                           "Effect size (constant) or slope (linear)");
  sub_simulate->add_option("--assign", sa.assign,
                           "Assignment: random or loading (top share by "
                           "first loading)");
  sub_simulate->add_option("--share", sa.cfg.share, "Treated share");
  sub_simulate->add_option("--adoption", sa.adoption,
                           "Adoption: simultaneous or staggered");
  sub_simulate->add_option("--adopt-start", sa.cfg.adopt_start,
                           "First adoption period (1-based; 0 = T/3)");
  sub_simulate->add_option("--adopt-end", sa.cfg.adopt_end,
                           "Last adoption period (0 = start + 4)");
  sub_simulate->add_option("--first-year", sa.cfg.first_year,
                           "Calendar year of the first period");
  sub_simulate->add_flag("--emit-levels", sa.cfg.emit_levels,
                         "Write exp(outcome) as a level column");
  sub_simulate->add_flag("--emit-intensity", sa.cfg.emit_intensity,
                         "Write a per-region treatment intensity column");
  sub_simulate->add_option("--mask-fraction", sa.mask_fraction,
                           "Extra share of donor cells to blank out")
      ->check(CLI::Range(0.0, 0.999));

  CompareArgs pa;
  auto* sub_compare = app.add_subcommand(
      "compare", "Event studies from matrix completion vs two-way FE");
  sub_compare->fallthrough();
  add_input_flags(sub_compare, pa.input, pa.transform, pa.allow_reversal);
  add_fit_flags(sub_compare, pa.fit);
  sub_compare->add_option("--leads", pa.leads,
                          "Lead window (default: full support)");
  sub_compare->add_option("--lags", pa.lags,
                          "Lag window (default: full support)");
  sub_compare->add_option("--truth", pa.truth_tau,
                          "truth_tau.csv from `simulate` for bias columns");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    json err;
    err["error"] = {{"type", "usage"}, {"message", e.what()}};
    std::cerr << err.dump() << '\n';
    return 64;
  }

  try {
    fs::create_directories(g.out_dir);
    if (sub_validate->parsed()) return cmd_validate(g, va);
    if (sub_cv->parsed()) return cmd_cv(g, ca);
    if (sub_estimate->parsed()) return cmd_estimate(g, ea);
    if (sub_bootstrap->parsed()) return cmd_bootstrap(g, ba);
    if (sub_report->parsed()) return cmd_report(g, ra);
    if (sub_simulate->parsed()) return cmd_simulate(g, sa);
    if (sub_compare->parsed()) return cmd_compare(g, pa);
    throw ConfigError("no subcommand given");
  } catch (const ConfigError& e) {
    json err;
    err["error"] = {{"type", "usage"}, {"message", e.what()}};
    std::cerr << err.dump() << '\n';
    return 64;
  } catch (const DataError& e) {
    json err;
    err["error"] = {{"type", "data"}, {"message", e.what()}};
    std::cerr << err.dump() << '\n';
    return 2;
  } catch (const std::exception& e) {
    json err;
    err["error"] = {{"type", "internal"}, {"message", e.what()}};
    std::cerr << err.dump() << '\n';
    return 70;
  }
}

}  // namespace panelcf
