#include "panelcf/twfe.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <Eigen/Cholesky>

#include "panelcf/errors.hpp"
#include "panelcf/linalg.hpp"

namespace panelcf {

namespace {

struct TwfeWork {
  Eigen::ArrayXXd mask;
  Eigen::VectorXd row_count, col_count;
  Eigen::MatrixXd Yz;
  long n_obs = 0;
};

TwfeWork make_work(const PanelDataset& data) {
  TwfeWork w;
  const int N = data.n_regions();
  const int T = data.n_periods();
  w.mask = Eigen::ArrayXXd::Zero(N, T);
  for (int i = 0; i < N; ++i)
    for (int s = 0; s < T; ++s)
      if (!std::isnan(data.Y(i, s))) w.mask(i, s) = 1.0;
  w.row_count = w.mask.rowwise().sum().matrix();
  w.col_count = w.mask.colwise().sum().matrix().transpose();
  w.Yz = (w.mask > 0.5).select(data.Y, Eigen::MatrixXd::Zero(N, T));
  w.n_obs = static_cast<long>(w.mask.sum());
  if (w.n_obs == 0) throw DataError("fit_twfe: no observed cells");
  return w;
}

Eigen::MatrixXd masked_covariate(const PanelDataset& data, const TwfeWork& w,
                                 int k) {
  const int N = data.n_regions();
  const int T = data.n_periods();
  for (int i = 0; i < N; ++i)
    for (int s = 0; s < T; ++s)
      if (w.mask(i, s) > 0.5 && std::isnan(data.X[k](i, s)))
        throw DataError("covariate '" + data.covariate_names[k] +
                        "' missing on an observed cell (region '" +
                        data.region_ids[i] + "', year " +
                        std::to_string(data.years[s]) + ")");
  return (w.mask > 0.5).select(data.X[k], Eigen::MatrixXd::Zero(N, T));
}

// OLS of y on regressors with two-way fixed effects absorbed by iterated
// demeaning; returns the coefficient vector.
Eigen::VectorXd within_ols(const TwfeWork& w, Eigen::MatrixXd y,
                           std::vector<Eigen::MatrixXd> Z,
                           const std::string& what) {
  const int q = static_cast<int>(Z.size());
  y = masked_two_way_demean(std::move(y), w.mask, w.row_count, w.col_count,
                            true, true);
  for (auto& z : Z)
    z = masked_two_way_demean(std::move(z), w.mask, w.row_count, w.col_count,
                              true, true);
  Eigen::MatrixXd G(q, q);
  Eigen::VectorXd rhs(q);
  for (int a = 0; a < q; ++a) {
    rhs[a] = (Z[a].array() * y.array()).sum();
    for (int b = a; b < q; ++b)
      G(a, b) = G(b, a) = (Z[a].array() * Z[b].array()).sum();
  }
  Eigen::LDLT<Eigen::MatrixXd> ldlt(G);
  const double dmax = G.diagonal().maxCoeff();
  if (ldlt.info() != Eigen::Success ||
      ldlt.vectorD().minCoeff() <= 1e-12 * std::max(dmax, 1e-300))
    throw DataError(what + ": design is singular after the within "
                           "transformation (regressor collinear with the "
                           "fixed effects)");
  return ldlt.solve(rhs);
}

// Additive decomposition of a masked residual into intercept + unit and time
// effects, each summing to zero.
void recover_fe(const TwfeWork& w, const Eigen::MatrixXd& resid,
                double& intercept, Eigen::VectorXd& unit_fe,
                Eigen::VectorXd& time_fe) {
  const int N = static_cast<int>(w.mask.rows());
  const int T = static_cast<int>(w.mask.cols());
  unit_fe = Eigen::VectorXd::Zero(N);
  time_fe = Eigen::VectorXd::Zero(T);
  const double scale = std::max(1.0, resid.cwiseAbs().maxCoeff());
  for (int sweep = 0; sweep < 2000; ++sweep) {
    double moved = 0.0;
    Eigen::MatrixXd part =
        resid - (Eigen::VectorXd::Ones(N) * time_fe.transpose())
                    .cwiseProduct(w.mask.matrix());
    Eigen::VectorXd g = part.rowwise().sum();
    for (int i = 0; i < N; ++i)
      g[i] = w.row_count[i] > 0 ? g[i] / w.row_count[i] : 0.0;
    moved = std::max(moved, (g - unit_fe).cwiseAbs().maxCoeff());
    unit_fe = g;

    part = resid - (unit_fe * Eigen::RowVectorXd::Ones(T))
                       .cwiseProduct(w.mask.matrix());
    Eigen::VectorXd d = part.colwise().sum().transpose();
    for (int t = 0; t < T; ++t)
      d[t] = w.col_count[t] > 0 ? d[t] / w.col_count[t] : 0.0;
    moved = std::max(moved, (d - time_fe).cwiseAbs().maxCoeff());
    time_fe = d;
    if (moved < 1e-13 * scale) break;
  }
  const double gm = unit_fe.mean();
  const double dm = time_fe.mean();
  unit_fe.array() -= gm;
  time_fe.array() -= dm;
  intercept = gm + dm;
}

}  // namespace

TwfeFit fit_twfe(const PanelDataset& data, bool include_covariates) {
  const int N = data.n_regions();
  const int T = data.n_periods();
  TwfeWork w = make_work(data);

  bool any0 = false, any1 = false;
  for (int i = 0; i < N; ++i)
    for (int s = 0; s < T; ++s)
      if (w.mask(i, s) > 0.5) (data.D(i, s) ? any1 : any0) = true;
  if (!any0 || !any1)
    throw DataError("fit_twfe: treatment indicator is constant across "
                    "observed cells; tau is unidentified");

  std::vector<Eigen::MatrixXd> Z;
  Z.push_back(
      (w.mask > 0.5).select(data.D.cast<double>(), Eigen::MatrixXd::Zero(N, T)));
  const int p = include_covariates ? data.n_covariates() : 0;
  for (int k = 0; k < p; ++k) Z.push_back(masked_covariate(data, w, k));

  const Eigen::VectorXd coef = within_ols(w, w.Yz, Z, "fit_twfe");

  TwfeFit fit;
  fit.tau_hat = coef[0];
  fit.beta = coef.tail(p);
  fit.n_obs_used = w.n_obs;

  Eigen::MatrixXd resid = w.Yz;
  for (size_t a = 0; a < Z.size(); ++a) resid -= coef[a] * Z[a];
  recover_fe(w, resid, fit.intercept, fit.unit_fe, fit.time_fe);

  const Eigen::MatrixXd e =
      resid -
      (fit.intercept * w.mask.matrix() +
       (fit.unit_fe * Eigen::RowVectorXd::Ones(T)).cwiseProduct(w.mask.matrix()) +
       (Eigen::VectorXd::Ones(N) * fit.time_fe.transpose())
           .cwiseProduct(w.mask.matrix()));
  const long dof =
      w.n_obs - (N - 1) - (T - 1) - 1 - static_cast<long>(Z.size());
  fit.residual_variance = e.squaredNorm() / std::max<long>(dof, 1);
  return fit;
}

EventStudySeries twfe_event_study(const PanelDataset& data,
                                  const TreatmentSchedule& schedule,
                                  int n_leads, int n_lags,
                                  bool include_covariates) {
  if (n_leads < 0 || n_lags < 0)
    throw ConfigError("twfe_event_study: n_leads and n_lags must be >= 0");
  const int N = data.n_regions();
  const int T = data.n_periods();
  TwfeWork w = make_work(data);

  // Every supported event time gets a dummy (reference -1 excluded) so cells
  // outside the reported window cannot contaminate the time effects.
  std::map<int, int> support;  // event time -> distinct regions
  for (const int i : schedule.treated_set) {
    std::set<int> seen;
    for (int s = 0; s < T; ++s) {
      if (w.mask(i, s) < 0.5) continue;
      const int e = s - schedule.T_i[i];
      if (seen.insert(e).second) ++support[e];
    }
  }
  if (support.empty())
    throw DataError("twfe_event_study: no treated regions with observed cells");

  std::vector<int> dummy_times;
  for (const auto& [e, n] : support)
    if (e != -1) dummy_times.push_back(e);

  std::vector<Eigen::MatrixXd> Z;
  for (const int e : dummy_times) {
    Eigen::MatrixXd dz = Eigen::MatrixXd::Zero(N, T);
    for (const int i : schedule.treated_set) {
      const int s = schedule.T_i[i] + e;
      if (s >= 0 && s < T && w.mask(i, s) > 0.5) dz(i, s) = 1.0;
    }
    Z.push_back(std::move(dz));
  }
  const int p = include_covariates ? data.n_covariates() : 0;
  for (int k = 0; k < p; ++k) Z.push_back(masked_covariate(data, w, k));

  const Eigen::VectorXd coef = within_ols(w, w.Yz, Z, "twfe_event_study");

  EventStudySeries series;
  series.alignment = Alignment::event_time;
  for (int e = -n_leads; e <= n_lags; ++e) {
    const auto it = support.find(e);
    if (it == support.end()) continue;  // no support: absent, not zero
    EventStudyRow row;
    row.time = e;
    row.n_regions = it->second;
    row.placebo = e < 0;
    if (e == -1) {
      row.att = 0.0;  // reference period
    } else {
      const auto pos = std::lower_bound(dummy_times.begin(), dummy_times.end(), e);
      row.att = coef[static_cast<int>(pos - dummy_times.begin())];
    }
    series.rows.push_back(row);
  }
  return series;
}

}  // namespace panelcf
