#include "panelcf/inference.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <string>
#include <thread>
#include <vector>

#include "panelcf/errors.hpp"
#include "panelcf/linalg.hpp"
#include "panelcf/rng.hpp"
#include "panelcf/stats.hpp"

namespace panelcf {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct ResidualPool {
  Eigen::MatrixXd resid;                    // fit residuals, NaN off O
  std::vector<int> donors;                  // control regions with data
  std::vector<std::vector<int>> observed;   // per donor: observed columns
};

ResidualPool build_pool(const PanelDataset& data, const ObservationSet& O,
                        const FactorFit& fit,
                        const TreatmentSchedule& schedule) {
  const int N = data.n_regions();
  const int T = data.n_periods();
  ResidualPool pool;
  pool.resid = Eigen::MatrixXd::Constant(N, T, kNaN);
  for (const auto& [i, t] : O.cells)
    pool.resid(i, t) = data.Y(i, t) - fit.predict(data, i, t);
  pool.observed.resize(N);
  for (int i = 0; i < N; ++i) {
    if (schedule.is_treated[i]) continue;
    for (int t = 0; t < T; ++t)
      if (O.mask(i, t) > 0.5) pool.observed[i].push_back(t);
    if (!pool.observed[i].empty()) pool.donors.push_back(i);
  }
  if (pool.donors.empty())
    throw DataError("bootstrap_att: no control regions with observed cells to "
                    "resample from");
  return pool;
}

// In-sample residuals of a cross-validated shrinkage fit understate the
// innovation scale because the fit absorbs part of the noise, so bands built
// from them run too narrow. Estimate the held-out noise sd from a two-fold
// split refit at the same lambda and inflate the donor rows to match.
double residual_scale(const PanelDataset& data, const ObservationSet& O,
                      const FactorFit& fit, const ResidualPool& pool,
                      const BootstrapConfig& cfg) {
  double ss_in = 0.0;
  long n_in = 0;
  for (const int j : pool.donors)
    for (const int t : pool.observed[j]) {
      ss_in += pool.resid(j, t) * pool.resid(j, t);
      ++n_in;
    }
  if (!(ss_in > 0.0) || n_in == 0) return 1.0;
  const double sd_in = std::sqrt(ss_in / static_cast<double>(n_in));

  const int n_cells = static_cast<int>(O.cells.size());
  const int N = data.n_regions();
  std::vector<int> fold(n_cells);
  bool ok = false;
  for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
    Rng rng(splitmix64(cfg.seed ^ (0x5CA1EULL + attempt)));
    for (int c = 0; c < n_cells; ++c)
      fold[c] = static_cast<int>(rng.uniform_int(2));
    ok = true;
    // Both halves nonempty and every region present in each training split,
    // mirroring the cross-validation fold rules.
    int cnt[2] = {0, 0};
    std::vector<int> first(N, -1);
    std::vector<bool> multi(N, false);
    for (int c = 0; c < n_cells; ++c) {
      ++cnt[fold[c]];
      const int i = O.cells[c].first;
      if (first[i] < 0)
        first[i] = fold[c];
      else if (first[i] != fold[c])
        multi[i] = true;
    }
    if (cnt[0] == 0 || cnt[1] == 0) ok = false;
    for (int i = 0; i < N && ok; ++i)
      if (first[i] >= 0 && !multi[i]) ok = false;
  }
  if (!ok) return 1.0;  // degenerate panel: keep the plain residual scale

  SolverConfig scfg = cfg.solver;
  scfg.lambda = fit.lambda;
  double sse = 0.0;
  long n_held = 0;
  for (int k = 0; k < 2; ++k) {
    ObservationSet train;
    train.mask = O.mask;
    train.cells.reserve(O.cells.size());
    for (int c = 0; c < n_cells; ++c) {
      if (fold[c] == k)
        train.mask(O.cells[c].first, O.cells[c].second) = 0.0;
      else
        train.cells.push_back(O.cells[c]);
    }
    train.n_obs = static_cast<long>(train.cells.size());
    const FactorFit half = fit_mcnnm(data, train, scfg, &fit);
    for (int c = 0; c < n_cells; ++c)
      if (fold[c] == k) {
        const auto& [i, t] = O.cells[c];
        const double r = data.Y(i, t) - half.predict(data, i, t);
        sse += r * r;
        ++n_held;
      }
  }
  const double sd_out = std::sqrt(sse / static_cast<double>(n_held));
  return std::max(1.0, sd_out / sd_in);
}

// Simulation model for the replicate worlds. The refit applies the same
// soft-thresholding as the original estimator, so simulating straight from
// the shrunk L_hat would shrink twice: weak factor directions fall below the
// threshold in every replicate and contribute no refit variance, which
// collapses the bands. Adding the threshold back onto the retained directions
// makes the replicate truth play the role the real signal played for the
// original fit.
Eigen::MatrixXd simulation_model(const PanelDataset& data,
                                 const ObservationSet& O,
                                 const FactorFit& fit) {
  const int N = data.n_regions();
  const int T = data.n_periods();
  Eigen::MatrixXd model(N, T);
  for (int i = 0; i < N; ++i)
    for (int t = 0; t < T; ++t) model(i, t) = fit.predict(data, i, t);
  if (fit.lambda > 0.0 && fit.rank > 0) {
    const double thr = fit.lambda * static_cast<double>(O.n_obs) / 2.0;
    const SvdResult svd = svd_thin(fit.L_hat);
    const int r = std::min<int>(fit.rank, static_cast<int>(svd.s.size()));
    const Eigen::VectorXd s = svd.s.head(r).array() + thr;
    model += svd.U.leftCols(r) * s.asDiagonal() * svd.V.leftCols(r).transpose() -
             fit.L_hat;
  }
  return model;
}

// One simulated outcome matrix: model values plus donor-row residuals on O,
// observed outcomes plus donor residuals on the treated support. Cells keep
// their original missingness, so O is identical across replicates.
Eigen::MatrixXd simulate_outcomes(const PanelDataset& data,
                                  const ObservationSet& O,
                                  const Eigen::MatrixXd& model,
                                  const ResidualPool& pool, Rng& rng) {
  const int N = data.n_regions();
  const int T = data.n_periods();
  Eigen::MatrixXd Ystar =
      Eigen::MatrixXd::Constant(N, T, kNaN);
  for (int i = 0; i < N; ++i) {
    const int j =
        pool.donors[static_cast<int>(rng.uniform_int(pool.donors.size()))];
    const auto& cols = pool.observed[j];
    for (int t = 0; t < T; ++t) {
      if (std::isnan(data.Y(i, t))) continue;
      double e = pool.resid(j, t);
      if (std::isnan(e))
        e = pool.resid(j, cols[static_cast<int>(rng.uniform_int(cols.size()))]);
      // On O the simulated series is the null model plus noise; on the
      // treated support the estimated effect rides along, which is exactly
      // the observed outcome there.
      Ystar(i, t) = O.mask(i, t) > 0.5 ? model(i, t) + e : data.Y(i, t) + e;
    }
  }
  return Ystar;
}

std::vector<double> replicate_att(const PanelDataset& sim,
                                  const ObservationSet& O,
                                  const FactorFit& fit,
                                  const TreatmentSchedule& schedule,
                                  const BootstrapConfig& cfg,
                                  const std::vector<int>& event_times,
                                  std::uint64_t rep_seed, bool* ok) {
  SolverConfig scfg = cfg.solver;
  scfg.seed = rep_seed;
  double lam = fit.lambda;
  if (cfg.refit_lambda) {
    const auto grid = default_lambda_grid(sim, O, scfg);
    lam = cross_validate(sim, O, grid, cfg.cv_folds, scfg, 1).lambda_star;
  }
  scfg.lambda = lam;
  const FactorFit refit = fit_mcnnm(sim, O, scfg, &fit);
  if (!refit.converged) {
    *ok = false;
    return {};
  }
  *ok = true;
  const EffectsMatrix eff = impute_effects(sim, refit, schedule);
  const EventStudySeries es =
      att_event_study(eff, schedule, sim, Alignment::event_time);
  std::vector<double> att(event_times.size(), kNaN);
  for (const auto& row : es.rows) {
    const auto it =
        std::lower_bound(event_times.begin(), event_times.end(), row.time);
    if (it != event_times.end() && *it == row.time)
      att[it - event_times.begin()] = row.att;
  }
  return att;
}

// Recentered percentile interval; the point estimate is kept inside, which
// only binds when extreme outliers push the replicate mean past a quantile.
void fill_bands(AttBands& bands) {
  const int S = static_cast<int>(bands.event_time.size());
  const int B = static_cast<int>(bands.replicates.cols());
  bands.lo.resize(S);
  bands.hi.resize(S);
  bands.se.resize(S);
  const double alpha = 1.0 - bands.level;
  for (int s = 0; s < S; ++s) {
    std::vector<double> r(bands.replicates.row(s).begin(),
                          bands.replicates.row(s).end());
    std::sort(r.begin(), r.end());
    double mean = 0.0;
    for (const double v : r) mean += v;
    mean /= B;
    double ss = 0.0;
    for (const double v : r) ss += (v - mean) * (v - mean);
    bands.se[s] = B > 1 ? std::sqrt(ss / (B - 1)) : 0.0;
    const double qlo = quantile_sorted(r, alpha / 2.0);
    const double qhi = quantile_sorted(r, 1.0 - alpha / 2.0);
    bands.lo[s] = std::min(bands.att[s], bands.att[s] + (qlo - mean));
    bands.hi[s] = std::max(bands.att[s], bands.att[s] + (qhi - mean));
  }
}

}  // namespace

AttBands bootstrap_att(const PanelDataset& data, const ObservationSet& O,
                       const FactorFit& fit, const TreatmentSchedule& schedule,
                       const BootstrapConfig& cfg) {
  if (cfg.B < 2) throw ConfigError("bootstrap_att: B must be >= 2");
  if (!(cfg.level > 0 && cfg.level < 1))
    throw ConfigError("bootstrap_att: level must lie in (0, 1)");
  if (!fit.converged)
    throw DataError("bootstrap_att: the original fit did not converge");

  const EffectsMatrix eff = impute_effects(data, fit, schedule);
  const EventStudySeries es =
      att_event_study(eff, schedule, data, Alignment::event_time);
  AttBands bands;
  bands.level = cfg.level;
  for (const auto& row : es.rows)
    if (row.time >= 0) {
      bands.event_time.push_back(row.time);
      bands.n_regions.push_back(row.n_regions);
    }
  const int S = static_cast<int>(bands.event_time.size());
  if (S == 0) throw DataError("bootstrap_att: no post-treatment event times");
  bands.att.resize(S);
  {
    int s = 0;
    for (const auto& row : es.rows)
      if (row.time >= 0) bands.att[s++] = row.att;
  }

  ResidualPool pool = build_pool(data, O, fit, schedule);
  const double scale = residual_scale(data, O, fit, pool, cfg);
  if (scale != 1.0) pool.resid *= scale;  // NaN cells stay NaN
  const Eigen::MatrixXd model = simulation_model(data, O, fit);

  Eigen::MatrixXd reps(S, cfg.B);
  std::vector<char> ok(cfg.B, 0);
  const auto run_one = [&](int b) {
    Rng rng(splitmix64(cfg.seed) ^ static_cast<std::uint64_t>(b + 1));
    PanelDataset sim = data;
    sim.Y = simulate_outcomes(data, O, model, pool, rng);
    bool conv = false;
    const std::vector<double> att =
        replicate_att(sim, O, fit, schedule, cfg,
                      bands.event_time, rng.next_u64(), &conv);
    if (conv) {
      ok[b] = 1;
      for (int s = 0; s < S; ++s) reps(s, b) = att[s];
    }
  };

  const int workers = std::max(1, std::min(cfg.n_threads, cfg.B));
  if (workers == 1) {
    for (int b = 0; b < cfg.B; ++b) run_one(b);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (int w = 0; w < workers; ++w)
      threads.emplace_back([&] {
        for (int b = next.fetch_add(1); b < cfg.B; b = next.fetch_add(1))
          run_one(b);
      });
    for (auto& th : threads) th.join();
  }

  int n_ok = 0;
  for (int b = 0; b < cfg.B; ++b) n_ok += ok[b];
  bands.n_failed = cfg.B - n_ok;
  if (bands.n_failed * 10 > cfg.B)
    throw DataError("bootstrap_att: " + std::to_string(bands.n_failed) +
                    " of " + std::to_string(cfg.B) +
                    " replicates failed to converge");
  bands.replicates.resize(S, n_ok);
  for (int b = 0, c = 0; b < cfg.B; ++b)
    if (ok[b]) bands.replicates.col(c++) = reps.col(b);

  fill_bands(bands);
  return bands;
}

AttBands rebuild_bands(const AttBands& bands, double level) {
  if (!(level > 0 && level < 1))
    throw ConfigError("rebuild_bands: level must lie in (0, 1)");
  AttBands out = bands;
  out.level = level;
  fill_bands(out);
  return out;
}

Eigen::VectorXd att_pointwise_se(const AttBands& bands) { return bands.se; }

}  // namespace panelcf
