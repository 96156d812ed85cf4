#include "panelcf/effects.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <string>

#include "panelcf/errors.hpp"
#include "panelcf/stats.hpp"

namespace panelcf {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool defined(double v) { return !std::isnan(v); }

bool is_log(TransformKind k) { return k != TransformKind::identity; }

// Event-study rows over a subset of treated regions: tau_hat means at
// relative years >= 0, placebo residual means at relative years < 0.
EventStudySeries event_study_subset(const EffectsMatrix& effects,
                                    const TreatmentSchedule& schedule,
                                    const std::vector<int>& regions) {
  const int T = static_cast<int>(effects.tau_hat.cols());
  std::map<int, std::pair<double, int>> acc;  // event time -> (sum, n)
  for (const int i : regions) {
    const int Ti = schedule.T_i[i];
    for (int t = 0; t < T; ++t) {
      const double v =
          t >= Ti ? effects.tau_hat(i, t) : effects.placebo_resid(i, t);
      if (!defined(v)) continue;
      auto& [sum, n] = acc[t - Ti];
      sum += v;
      ++n;
    }
  }
  EventStudySeries series;
  series.alignment = Alignment::event_time;
  for (const auto& [e, sn] : acc) {
    EventStudyRow row;
    row.time = e;
    row.att = sn.first / sn.second;
    row.n_regions = sn.second;
    row.placebo = e < 0;
    series.rows.push_back(row);
  }
  return series;
}

}  // namespace

EffectsMatrix impute_effects(const PanelDataset& data, const FactorFit& fit,
                             const TreatmentSchedule& schedule) {
  const int N = data.n_regions();
  const int T = data.n_periods();
  EffectsMatrix eff;
  eff.transform = data.transform;
  eff.tau_hat = Eigen::MatrixXd::Constant(N, T, kNaN);
  eff.y0_hat = Eigen::MatrixXd::Constant(N, T, kNaN);
  eff.placebo_resid = Eigen::MatrixXd::Constant(N, T, kNaN);
  const bool want_levels = data.has_levels() && is_log(data.transform);
  if (want_levels) eff.levels0_hat = Eigen::MatrixXd::Constant(N, T, kNaN);

  for (const int i : schedule.treated_set) {
    const int Ti = schedule.T_i[i];
    for (int t = 0; t < T; ++t) {
      const double y = data.Y(i, t);
      if (t >= Ti) {
        if (!defined(y)) {
          ++eff.n_missing_treated;
          continue;
        }
        const double y0 = fit.predict(data, i, t);
        eff.y0_hat(i, t) = y0;
        eff.tau_hat(i, t) = y - y0;
        if (want_levels) eff.levels0_hat(i, t) = std::exp(y0);
        ++eff.n_support;
      } else if (defined(y)) {
        eff.placebo_resid(i, t) = y - fit.predict(data, i, t);
      }
    }
  }
  return eff;
}

EventStudySeries att_event_study(const EffectsMatrix& effects,
                                 const TreatmentSchedule& schedule,
                                 const PanelDataset& data,
                                 Alignment alignment) {
  if (alignment == Alignment::event_time)
    return event_study_subset(effects, schedule, schedule.treated_set);

  const int T = data.n_periods();
  EventStudySeries series;
  series.alignment = Alignment::calendar;
  for (int t = 0; t < T; ++t) {
    double sum = 0.0;
    int n = 0;
    for (const int i : schedule.treated_set)
      if (defined(effects.tau_hat(i, t))) {
        sum += effects.tau_hat(i, t);
        ++n;
      }
    if (n == 0) continue;
    EventStudyRow row;
    row.time = data.years[t];
    row.att = sum / n;
    row.n_regions = n;
    series.rows.push_back(row);
  }
  return series;
}

EuroEffect euro_effect(const EffectsMatrix& effects, const PanelDataset& data,
                       const TreatmentSchedule& schedule, int horizon) {
  if (!is_log(effects.transform) || effects.levels0_hat.size() == 0)
    throw DataError("euro_effect: level conversion needs raw levels and a log "
                    "outcome transform");
  if (horizon < 0)
    throw ConfigError("euro_effect: horizon must be a post-treatment event time");
  const int T = data.n_periods();
  EuroEffect out;
  out.horizon = horizon;
  for (const int i : schedule.treated_set) {
    const int t = schedule.T_i[i] + horizon;
    if (t >= T) continue;
    const double cf = effects.levels0_hat(i, t);
    const double obs = data.levels(i, t);
    if (!defined(cf) || !defined(obs)) continue;
    out.region_ids.push_back(data.region_ids[i]);
    out.delta.push_back(obs - cf);
  }
  out.n = static_cast<int>(out.delta.size());
  if (out.n == 0)
    throw DataError("euro_effect: no treated region observed at horizon " +
                    std::to_string(horizon));
  out.mean_delta =
      std::accumulate(out.delta.begin(), out.delta.end(), 0.0) / out.n;
  return out;
}

std::vector<DistributionSummary> distribution_summary(
    const EffectsMatrix& effects, const TreatmentSchedule& schedule,
    const std::vector<int>& horizons) {
  const int T = static_cast<int>(effects.tau_hat.cols());

  const auto summarize = [](const std::string& label,
                            const std::vector<double>& sample) {
    DistributionSummary s;
    s.horizon_label = label;
    s.n_regions = static_cast<int>(sample.size());
    int pos = 0;
    for (const double v : sample) pos += v > 0 ? 1 : 0;
    s.share_positive = 100.0 * pos / s.n_regions;
    const Moments m = central_moments(sample);
    if (s.n_regions >= 3 && m.m2 > 0) {
      s.moments_defined = true;
      s.skewness = m.m3 / std::pow(m.m2, 1.5);
      s.kurtosis = m.m4 / (m.m2 * m.m2);
    }
    return s;
  };

  std::vector<DistributionSummary> out;
  for (const int h : horizons) {
    std::vector<double> sample;
    for (const int i : schedule.treated_set) {
      const int t = schedule.T_i[i] + h;
      if (h >= 0 && t < T && defined(effects.tau_hat(i, t)))
        sample.push_back(effects.tau_hat(i, t));
    }
    if (!sample.empty()) out.push_back(summarize(std::to_string(h), sample));
  }

  std::vector<double> averages;
  for (const int i : schedule.treated_set) {
    double sum = 0.0;
    int n = 0;
    for (int t = schedule.T_i[i]; t < T; ++t)
      if (defined(effects.tau_hat(i, t))) {
        sum += effects.tau_hat(i, t);
        ++n;
      }
    if (n > 0) averages.push_back(sum / n);
  }
  if (!averages.empty()) out.push_back(summarize("average", averages));
  return out;
}

QuintileResult quintile_att(const EffectsMatrix& effects,
                            const PanelDataset& data,
                            const TreatmentSchedule& schedule) {
  const int n = schedule.N_tr;
  if (n < 5)
    throw DataError("quintile_att: need at least 5 treated regions, have " +
                    std::to_string(n));

  // Ranking value: outcome level in the last pre-treatment year with data
  // (raw levels when present, else the model-scale outcome).
  std::vector<std::pair<double, int>> ranked;
  for (const int i : schedule.treated_set) {
    double v = kNaN;
    for (int t = schedule.T_i[i] - 1; t >= 0; --t) {
      const double cand =
          data.has_levels() ? data.levels(i, t) : data.Y(i, t);
      if (defined(cand) && defined(data.Y(i, t))) {
        v = cand;
        break;
      }
    }
    if (!defined(v))
      throw DataError("quintile_att: region '" + data.region_ids[i] +
                      "' has no observed pre-treatment outcome");
    ranked.push_back({v, i});
  }
  std::stable_sort(ranked.begin(), ranked.end(), [&](const auto& a,
                                                     const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return data.region_ids[a.second] < data.region_ids[b.second];
  });

  QuintileResult res;
  res.quintile.resize(n);
  res.region_index.resize(n);
  std::vector<std::vector<int>> groups(5);
  for (int r = 0; r < n; ++r) {
    int q = 5;
    for (int g = 1; g <= 5; ++g)
      if (r + 1 <= (g * n + 4) / 5) {  // rank cut ceil(g*n/5), lower group wins
        q = g;
        break;
      }
    res.region_index[r] = ranked[r].second;
    res.quintile[r] = q;
    groups[q - 1].push_back(ranked[r].second);
  }

  const int T = data.n_periods();
  for (const auto& members : groups) {
    res.att.push_back(event_study_subset(effects, schedule, members));

    std::map<int, std::array<double, 2>> acc;  // event -> (obs sum, cf sum)
    std::map<int, int> cnt;
    for (const int i : members) {
      const int Ti = schedule.T_i[i];
      for (int t = 0; t < T; ++t) {
        const double y = data.Y(i, t);
        if (!defined(y)) continue;
        const double cf = t >= Ti ? effects.y0_hat(i, t) : y;
        if (!defined(cf)) continue;
        acc[t - Ti][0] += y;
        acc[t - Ti][1] += cf;
        ++cnt[t - Ti];
      }
    }
    std::vector<QuintilePath> paths;
    for (const auto& [e, sums] : acc) {
      QuintilePath p;
      p.event_time = e;
      p.observed_mean = sums[0] / cnt[e];
      p.counterfactual_mean = sums[1] / cnt[e];
      p.n_regions = cnt[e];
      paths.push_back(p);
    }
    res.paths.push_back(std::move(paths));
  }
  return res;
}

double gini(std::vector<double> x) {
  const int n = static_cast<int>(x.size());
  if (n == 0) throw ConfigError("gini: empty sample");
  std::sort(x.begin(), x.end());
  double total = 0.0, weighted = 0.0;
  for (int i = 0; i < n; ++i) {
    total += x[i];
    weighted += (i + 1) * x[i];
  }
  if (!(total > 0)) throw DataError("gini: sample mean must be positive");
  return 2.0 * weighted / (n * total) - static_cast<double>(n + 1) / n;
}

GiniPath gini_path(const PanelDataset& data, const EffectsMatrix& effects,
                   const TreatmentSchedule& schedule) {
  if (!data.has_levels())
    throw DataError("gini_path: raw levels are required");
  if (effects.levels0_hat.size() == 0)
    throw DataError("gini_path: counterfactual levels need a log outcome "
                    "transform");
  const int N = data.n_regions();
  const int T = data.n_periods();
  (void)schedule;

  GiniPath path;
  for (int t = 0; t < T; ++t) {
    std::vector<double> obs, cf;
    for (int i = 0; i < N; ++i) {
      const double lv = data.levels(i, t);
      if (!defined(lv)) continue;
      if (!(lv > 0))
        throw DataError("gini_path: nonpositive level at region '" +
                        data.region_ids[i] + "', year " +
                        std::to_string(data.years[t]));
      obs.push_back(lv);
      const double c = effects.levels0_hat(i, t);
      cf.push_back(defined(c) ? c : lv);
    }
    if (obs.size() < 2) continue;
    path.years.push_back(data.years[t]);
    path.observed.push_back(gini(obs));
    path.counterfactual.push_back(gini(cf));
    path.n_regions.push_back(static_cast<int>(obs.size()));
  }
  return path;
}

std::vector<IntensityCurve> intensity_curve(const EffectsMatrix& effects,
                                            const PanelDataset& data,
                                            const TreatmentSchedule& schedule,
                                            const std::vector<int>& horizons,
                                            double bandwidth,
                                            IntensityAgg agg) {
  if (!data.has_intensity())
    throw DataError("intensity_curve: intensity column is required");
  if (agg == IntensityAgg::cumulative && !data.has_levels())
    throw DataError("intensity_curve: cumulative intensity aggregation needs "
                    "raw levels");
  const int T = data.n_periods();

  // One intensity summary per treated region over its treated window: the
  // time mean, or total transfers over total levels for the cumulative view.
  std::vector<int> regions;
  std::vector<double> xs;
  for (const int i : schedule.treated_set) {
    double num = 0.0, den = 0.0;
    for (int t = schedule.T_i[i]; t < T; ++t) {
      const double u = data.intensity(i, t);
      if (!defined(u)) continue;
      if (agg == IntensityAgg::mean) {
        num += u;
        den += 1.0;
      } else {
        const double lv = data.levels(i, t);
        if (!defined(lv)) continue;
        num += u * lv;
        den += lv;
      }
    }
    if (den > 0) {
      regions.push_back(i);
      xs.push_back(num / den);
    }
  }
  if (static_cast<int>(regions.size()) < 10)
    throw DataError("intensity_curve: need at least 10 treated regions with "
                    "intensity, have " + std::to_string(regions.size()));

  std::vector<IntensityCurve> out;
  for (const int h : horizons) {
    std::vector<double> x, v;
    for (std::size_t k = 0; k < regions.size(); ++k) {
      const int i = regions[k];
      const int t = schedule.T_i[i] + h;
      if (t < 0 || t >= T) continue;
      const double tau =
          h >= 0 ? effects.tau_hat(i, t) : effects.placebo_resid(i, t);
      if (!defined(tau)) continue;
      x.push_back(xs[k]);
      v.push_back(tau);
    }
    const int n = static_cast<int>(x.size());
    if (n < 10) continue;  // horizon beyond the panel for most adopters

    const double xmin = *std::min_element(x.begin(), x.end());
    const double xmax = *std::max_element(x.begin(), x.end());
    if (!(xmax > xmin))
      throw DataError("intensity_curve: intensity support is degenerate");

    double bw = bandwidth;
    if (!(bw > 0)) {
      std::vector<double> sorted = x;
      std::sort(sorted.begin(), sorted.end());
      const Moments m = central_moments(x);
      const double sd = std::sqrt(m.m2 * n / std::max(n - 1, 1));
      const double iqr = quantile_sorted(sorted, 0.75) -
                         quantile_sorted(sorted, 0.25);
      double spread = std::min(sd, iqr / 1.34);
      if (!(spread > 0)) spread = std::max(sd, 1e-12);
      bw = 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
    }

    IntensityCurve curve;
    curve.horizon = h;
    curve.bandwidth = bw;
    curve.n_regions = n;
    curve.grid = Eigen::VectorXd::LinSpaced(100, xmin, xmax);
    curve.value.resize(100);
    for (int g = 0; g < 100; ++g) {
      const double c = curve.grid[g];
      double s0 = 0, s1 = 0, s2 = 0, t0 = 0, t1 = 0;
      for (int k = 0; k < n; ++k) {
        const double d = x[k] - c;
        const double z = d / bw;
        const double w = std::exp(-0.5 * z * z);
        s0 += w;
        s1 += w * d;
        s2 += w * d * d;
        t0 += w * v[k];
        t1 += w * d * v[k];
      }
      const double denom = s0 * s2 - s1 * s1;
      curve.value[g] = denom > 1e-12 * s0 * s2 && s2 > 0
                           ? (s2 * t0 - s1 * t1) / denom
                           : t0 / std::max(s0, 1e-300);
    }
    int arg = 0;
    curve.value.maxCoeff(&arg);
    curve.argmax_intensity = curve.grid[arg];
    curve.peak = curve.value[arg];
    curve.peak_pct = (std::exp(curve.peak) - 1.0) * 100.0;
    out.push_back(std::move(curve));
  }
  return out;
}

}  // namespace panelcf
