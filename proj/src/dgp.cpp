#include "panelcf/dgp.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "panelcf/errors.hpp"
#include "panelcf/rng.hpp"

namespace panelcf {

namespace {

// Tags for deriving one independent stream per random ingredient, so changing
// e.g. the noise draw count never perturbs the assignment.
enum : std::uint64_t {
  kFactorStream = 1,
  kLoadingStream = 2,
  kCovariateStream = 3,
  kNoiseStream = 4,
  kAssignStream = 5,
  kAdoptStream = 6,
  kIntensityStream = 7,
  kMaskStream = 8,
};

Rng stream(std::uint64_t seed, std::uint64_t tag) {
  return Rng(splitmix64(seed) + tag);
}

std::string region_label(int index, int n) {
  std::string digits = std::to_string(index + 1);
  std::string width = std::to_string(n);
  std::string out = "R";
  out.append(width.size() - std::min(width.size(), digits.size()), '0');
  return out + digits;
}

void check_config(const DgpConfig& cfg) {
  if (cfg.N < 2 || cfg.T < 2)
    throw ConfigError("generate: need N >= 2 and T >= 2");
  if (cfg.K < 0) throw ConfigError("generate: K must be >= 0");
  if (cfg.p < 0) throw ConfigError("generate: p must be >= 0");
  if (!(cfg.noise_sd >= 0)) throw ConfigError("generate: noise_sd must be >= 0");
  if (!(cfg.share > 0 && cfg.share < 1))
    throw ConfigError("generate: treated share must lie in (0, 1)");
  if (cfg.assign == AssignRule::loading_ranked && cfg.K == 0)
    throw ConfigError(
        "generate: loading-ranked assignment needs K >= 1 (no loading to rank)");
  if (cfg.beta_true.size() != 0 && cfg.beta_true.size() != cfg.p)
    throw ConfigError("generate: beta_true length does not match p");
}

}  // namespace

std::pair<PanelDataset, DgpTruth> generate(const DgpConfig& cfg) {
  check_config(cfg);
  const int N = cfg.N, T = cfg.T, K = cfg.K, p = cfg.p;

  // Common factors: independent AR(1) paths started from the stationary law
  // (plain draw when |coef| >= 1, which is only sensible for testing).
  Eigen::MatrixXd F = Eigen::MatrixXd::Zero(T, K);
  {
    Rng rng = stream(cfg.seed, kFactorStream);
    const double rho = cfg.ar_coef;
    const double sd = cfg.factor_innov_sd;
    const double sd0 =
        std::abs(rho) < 1.0 ? sd / std::sqrt(1.0 - rho * rho) : sd;
    for (int k = 0; k < K; ++k) {
      F(0, k) = sd0 * rng.normal();
      for (int t = 1; t < T; ++t)
        F(t, k) = rho * F(t - 1, k) + sd * rng.normal();
    }
  }

  Eigen::MatrixXd Lambda(N, K);
  {
    Rng rng = stream(cfg.seed, kLoadingStream);
    for (int i = 0; i < N; ++i)
      for (int k = 0; k < K; ++k)
        Lambda(i, k) = cfg.loading_mean + cfg.loading_sd * rng.normal();
  }

  std::vector<Eigen::MatrixXd> X(p);
  {
    Rng rng = stream(cfg.seed, kCovariateStream);
    for (int k = 0; k < p; ++k) {
      X[k].resize(N, T);
      for (int i = 0; i < N; ++i)
        for (int t = 0; t < T; ++t) X[k](i, t) = rng.normal();
    }
  }
  Eigen::VectorXd beta = cfg.beta_true.size() == p && p > 0
                             ? cfg.beta_true
                             : Eigen::VectorXd::Ones(p);

  // Treated set: either a uniform draw of round(share*N) regions, or the top
  // regions by first factor loading (the confounded design).
  const int m = static_cast<int>(std::lround(cfg.share * N));
  if (m < 1 || m > N - 1)
    throw ConfigError("generate: share * N leaves no treated or no control "
                      "regions");
  std::vector<int> order(N);
  std::iota(order.begin(), order.end(), 0);
  if (cfg.assign == AssignRule::random_share) {
    Rng rng = stream(cfg.seed, kAssignStream);
    for (int i = 0; i < m; ++i) {
      const int j = i + static_cast<int>(rng.uniform_int(N - i));
      std::swap(order[i], order[j]);
    }
  } else {
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return Lambda(a, 0) > Lambda(b, 0);
    });
  }
  std::vector<int> treated(order.begin(), order.begin() + m);
  std::sort(treated.begin(), treated.end());

  // Adoption calendar. adopt_start/adopt_end are 1-based periods; the window
  // defaults to [T/3, T/3 + 4], clamped so every region keeps at least one
  // pre-treatment and one treated period.
  int start = cfg.adopt_start > 0 ? cfg.adopt_start : std::max(2, T / 3);
  int end = cfg.adoption == AdoptionPattern::simultaneous
                ? start
                : (cfg.adopt_end > 0 ? cfg.adopt_end : start + 4);
  if (start < 2 || end < start || end > T)
    throw ConfigError("generate: adoption window must satisfy 2 <= start <= "
                      "end <= T");
  std::vector<int> T_i(N, T);
  {
    Rng rng = stream(cfg.seed, kAdoptStream);
    for (const int i : treated) {
      const int adopt =
          cfg.adoption == AdoptionPattern::simultaneous
              ? start
              : start + static_cast<int>(rng.uniform_int(end - start + 1));
      T_i[i] = adopt - 1;  // periods 1..adopt-1 are pre-treatment
    }
  }

  Eigen::MatrixXi D = Eigen::MatrixXi::Zero(N, T);
  Eigen::MatrixXd tau = Eigen::MatrixXd::Zero(N, T);
  for (const int i : treated)
    for (int t = T_i[i]; t < T; ++t) {
      D(i, t) = 1;
      switch (cfg.effect) {
        case EffectKind::zero: break;
        case EffectKind::constant: tau(i, t) = cfg.effect_param; break;
        case EffectKind::linear:
          tau(i, t) = cfg.effect_param * (t - T_i[i] + 1);
          break;
      }
    }

  Eigen::MatrixXd E(N, T);
  {
    Rng rng = stream(cfg.seed, kNoiseStream);
    for (int i = 0; i < N; ++i)
      for (int t = 0; t < T; ++t) E(i, t) = cfg.noise_sd * rng.normal();
  }

  const Eigen::MatrixXd L = Lambda * F.transpose();
  Eigen::MatrixXd Y = L + E + tau.cwiseProduct(D.cast<double>());
  for (int k = 0; k < p; ++k) Y += beta[k] * X[k];

  PanelDataset data;
  data.region_ids.reserve(N);
  for (int i = 0; i < N; ++i) data.region_ids.push_back(region_label(i, N));
  data.years.resize(T);
  std::iota(data.years.begin(), data.years.end(), cfg.first_year);
  data.Y = Y;
  data.D = D;
  data.X = X;
  for (int k = 0; k < p; ++k)
    data.covariate_names.push_back("x" + std::to_string(k + 1));

  if (cfg.emit_levels) {
    data.levels = Y.array().exp().matrix();
    data.transform = TransformKind::log_per_capita;
  }
  if (cfg.emit_intensity) {
    Rng rng = stream(cfg.seed, kIntensityStream);
    data.intensity = Eigen::MatrixXd::Constant(
        N, T, std::numeric_limits<double>::quiet_NaN());
    for (const int i : treated) {
      const double share_i = 0.002 + 0.010 * rng.uniform();
      for (int t = T_i[i]; t < T; ++t) data.intensity(i, t) = share_i;
    }
  }

  DgpTruth truth;
  truth.L = L;
  truth.tau = tau;
  truth.beta = beta;
  truth.noise = E;
  truth.factors = F;
  truth.loadings = Lambda;
  truth.treated = treated;
  truth.T_i = T_i;
  return {std::move(data), std::move(truth)};
}

PanelDataset mask_additional(const PanelDataset& data, double fraction,
                             std::uint64_t seed, Eigen::ArrayXXd* mask_out) {
  if (!(fraction >= 0 && fraction < 1))
    throw ConfigError("mask_additional: fraction must lie in [0, 1)");
  const int N = data.n_regions();
  const int T = data.n_periods();
  if (mask_out) *mask_out = Eigen::ArrayXXd::Zero(N, T);
  if (fraction == 0) return data;

  const TreatmentSchedule schedule = derive_schedule(data);
  std::vector<std::pair<int, int>> eligible;
  for (int i = 0; i < N; ++i) {
    const int last = schedule.is_treated[i] ? schedule.T_i[i] : T;
    for (int t = 0; t < last; ++t)
      if (!std::isnan(data.Y(i, t))) eligible.push_back({i, t});
  }

  const int m =
      static_cast<int>(std::lround(fraction * static_cast<double>(eligible.size())));
  Rng rng = stream(seed, kMaskStream);
  for (int attempt = 0; attempt < 10; ++attempt) {
    std::vector<std::pair<int, int>> pool = eligible;
    for (int j = 0; j < m; ++j) {
      const int k =
          j + static_cast<int>(rng.uniform_int(pool.size() - j));
      std::swap(pool[j], pool[k]);
    }

    // Every treated region must keep at least one observed pre-treatment cell.
    std::vector<int> kept(N, 0);
    for (int i = 0; i < N; ++i)
      for (int t = 0; t < schedule.T_i[i]; ++t)
        if (!std::isnan(data.Y(i, t))) ++kept[i];
    bool ok = true;
    for (int j = 0; j < m; ++j) {
      const auto [i, t] = pool[j];
      if (schedule.is_treated[i] && t < schedule.T_i[i]) --kept[i];
    }
    for (const int i : schedule.treated_set)
      if (kept[i] <= 0) {
        ok = false;
        break;
      }
    if (!ok) continue;

    PanelDataset out = data;
    for (int j = 0; j < m; ++j) {
      const auto [i, t] = pool[j];
      out.Y(i, t) = std::numeric_limits<double>::quiet_NaN();
      if (mask_out) (*mask_out)(i, t) = 1.0;
    }
    return out;
  }
  throw DataError("mask_additional: could not draw a mask leaving every "
                  "treated region a pre-treatment observation (10 attempts)");
}

}  // namespace panelcf
