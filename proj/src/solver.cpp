#include "panelcf/solver.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <sstream>
#include <thread>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "panelcf/errors.hpp"
#include "panelcf/linalg.hpp"
#include "panelcf/rng.hpp"

namespace panelcf {

namespace {

constexpr double kTiny = 1e-300;

// Masked copies with zeros off O, so sums over the mask never touch NaNs.
struct Workspace {
  Eigen::ArrayXXd mask;      // 1.0 in O
  Eigen::MatrixXd Yz;        // Y with non-O cells zeroed
  std::vector<Eigen::MatrixXd> Xz;
  Eigen::VectorXd row_count;
  Eigen::VectorXd col_count;
  Eigen::MatrixXd XtX;       // p x p cross-product over O
  Eigen::LDLT<Eigen::MatrixXd> XtX_ldlt;
  long n_obs = 0;
};

Workspace make_workspace(const PanelDataset& data, const ObservationSet& O) {
  Workspace w;
  const int N = data.n_regions();
  const int T = data.n_periods();
  const int p = data.n_covariates();
  w.mask = O.mask;
  w.n_obs = O.n_obs;
  w.Yz = (w.mask > 0.5).select(data.Y, Eigen::MatrixXd::Zero(N, T));
  w.row_count = w.mask.rowwise().sum().matrix();
  w.col_count = w.mask.colwise().sum().matrix().transpose();
  w.Xz.reserve(p);
  for (int k = 0; k < p; ++k) {
    for (const auto& [i, s] : O.cells)
      if (std::isnan(data.X[k](i, s)))
        throw DataError("covariate '" + data.covariate_names[k] +
                        "' missing on an observed cell (region '" +
                        data.region_ids[i] + "', year " +
                        std::to_string(data.years[s]) + ")");
    w.Xz.push_back((w.mask > 0.5).select(data.X[k], Eigen::MatrixXd::Zero(N, T)));
  }
  if (p > 0) {
    w.XtX.resize(p, p);
    for (int a = 0; a < p; ++a)
      for (int b = a; b < p; ++b)
        w.XtX(a, b) = w.XtX(b, a) = (w.Xz[a].array() * w.Xz[b].array()).sum();
    w.XtX_ldlt.compute(w.XtX);
  }
  return w;
}

void check_collinearity(const PanelDataset& data, const Workspace& w,
                        const SolverConfig& cfg) {
  const int p = data.n_covariates();
  if (p == 0) return;
  std::vector<Eigen::MatrixXd> cols;
  cols.reserve(p);
  for (int k = 0; k < p; ++k)
    cols.push_back(masked_two_way_demean(w.Xz[k], w.mask, w.row_count,
                                         w.col_count, cfg.include_unit_fe,
                                         cfg.include_time_fe));
  Eigen::MatrixXd G(p, p);
  for (int a = 0; a < p; ++a)
    for (int b = a; b < p; ++b)
      G(a, b) = G(b, a) = (cols[a].array() * cols[b].array()).sum();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(G);
  const double emax = eig.eigenvalues().maxCoeff();
  const double emin = eig.eigenvalues().minCoeff();
  if (emin <= 1e-10 * std::max(emax, kTiny)) {
    const Eigen::VectorXd null_vec = eig.eigenvectors().col(0);
    std::ostringstream names;
    const double vmax = null_vec.cwiseAbs().maxCoeff();
    for (int k = 0; k < p; ++k)
      if (std::abs(null_vec[k]) > 1e-3 * vmax)
        names << (names.tellp() > 0 ? ", " : "") << data.covariate_names[k];
    throw DataError(
        "collinear covariates on the observation set (after fixed-effect "
        "projection): " + names.str());
  }
}

struct FeState {
  Eigen::VectorXd beta;   // user covariates only
  Eigen::VectorXd Gamma;  // zero-length treated as zeros
  Eigen::VectorXd Delta;
};

// Step (a): least squares of (Y - L) on covariates and fixed effects over O,
// by block coordinate descent (each block update is an exact minimization,
// so the objective never increases).
void fit_fe_step(const PanelDataset& data, const Workspace& w,
                 const SolverConfig& cfg, const Eigen::MatrixXd& L,
                 FeState& st) {
  const int N = data.n_regions();
  const int T = data.n_periods();
  const int p = data.n_covariates();

  Eigen::MatrixXd R = w.Yz - w.mask.matrix().cwiseProduct(L);
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(N, T);  // covariate contribution
  if (p > 0) {
    for (int k = 0; k < p; ++k) C += st.beta[k] * w.Xz[k];
  }
  const double scale = std::max(1.0, R.cwiseAbs().maxCoeff());

  for (int sweep = 0; sweep < 500; ++sweep) {
    double moved = 0.0;
    if (p > 0) {
      Eigen::MatrixXd part = R - C;
      if (cfg.include_unit_fe)
        part -= (st.Gamma * Eigen::RowVectorXd::Ones(T)).cwiseProduct(w.mask.matrix());
      if (cfg.include_time_fe)
        part -= (Eigen::VectorXd::Ones(N) * st.Delta.transpose()).cwiseProduct(w.mask.matrix());
      // part currently holds the residual at the OLD beta; add C back to get
      // the target for the covariate block.
      part += C;
      Eigen::VectorXd rhs(p);
      for (int k = 0; k < p; ++k)
        rhs[k] = (w.Xz[k].array() * part.array()).sum();
      const Eigen::VectorXd beta_new = w.XtX_ldlt.solve(rhs);
      moved = std::max(moved, (beta_new - st.beta).cwiseAbs().maxCoeff());
      st.beta = beta_new;
      C.setZero();
      for (int k = 0; k < p; ++k) C += st.beta[k] * w.Xz[k];
    }
    if (cfg.include_unit_fe) {
      Eigen::MatrixXd part = R - C;
      if (cfg.include_time_fe)
        part -= (Eigen::VectorXd::Ones(N) * st.Delta.transpose()).cwiseProduct(w.mask.matrix());
      Eigen::VectorXd g = part.rowwise().sum();
      for (int i = 0; i < N; ++i)
        g[i] = w.row_count[i] > 0 ? g[i] / w.row_count[i] : 0.0;
      moved = std::max(moved, (g - st.Gamma).cwiseAbs().maxCoeff());
      st.Gamma = g;
    }
    if (cfg.include_time_fe) {
      Eigen::MatrixXd part = R - C;
      if (cfg.include_unit_fe)
        part -= (st.Gamma * Eigen::RowVectorXd::Ones(T)).cwiseProduct(w.mask.matrix());
      Eigen::VectorXd d = part.colwise().sum().transpose();
      for (int t = 0; t < T; ++t)
        d[t] = w.col_count[t] > 0 ? d[t] / w.col_count[t] : 0.0;
      moved = std::max(moved, (d - st.Delta).cwiseAbs().maxCoeff());
      st.Delta = d;
    }
    if (moved < 1e-12 * scale) break;
    if (p == 0 && !cfg.include_unit_fe && !cfg.include_time_fe) break;
  }
}

Eigen::MatrixXd fe_residual(const Workspace& w, const SolverConfig& cfg,
                            const FeState& st, int N, int T, int p) {
  Eigen::MatrixXd R = w.Yz;
  for (int k = 0; k < p; ++k) R -= st.beta[k] * w.Xz[k];
  if (cfg.include_unit_fe)
    R -= (st.Gamma * Eigen::RowVectorXd::Ones(T)).cwiseProduct(w.mask.matrix());
  if (cfg.include_time_fe)
    R -= (Eigen::VectorXd::Ones(N) * st.Delta.transpose()).cwiseProduct(w.mask.matrix());
  return R;  // zero off O by construction
}

double objective_masked(const Workspace& w, const SolverConfig& cfg,
                        const FeState& st, const Eigen::MatrixXd& L,
                        double lambda, int N, int T, int p,
                        const double* nn_known = nullptr) {
  const Eigen::MatrixXd R =
      fe_residual(w, cfg, st, N, T, p) - w.mask.matrix().cwiseProduct(L);
  const double sse = R.squaredNorm();
  double nn = 0.0;
  if (lambda > 0.0) nn = nn_known ? *nn_known : nuclear_norm(L);
  return sse / static_cast<double>(w.n_obs) + lambda * nn;
}

// Soft-thresholding via the Gram matrix of the short side. For an N x T panel
// with T << N this costs three small GEMMs and one T x T eigendecomposition
// instead of a full SVD. The subtractive form
//   shrink(A) = A - sum_i min(sigma_i, tau) u_i v_i' = A - A V D V'
// with D_ii = min(sigma_i, tau) / sigma_i needs only the short-side singular
// vectors, is exact at both tau -> 0 (D -> 0) and tau >= sigma_max (returns
// an exact zero), and is stable under clustered singular values because
// near-equal sigmas get near-equal D weights.
Eigen::MatrixXd shrink_sv(const Eigen::MatrixXd& A, double tau,
                          Eigen::VectorXd* sv_shrunk) {
  if (tau == 0.0) {
    if (sv_shrunk) sv_shrunk->resize(0);
    return A;
  }
  const Eigen::Index m = std::min(A.rows(), A.cols());
  if (m <= 16) {
    SvdResult svd = svd_thin(A);
    Eigen::VectorXd s = (svd.s.array() - tau).max(0.0);
    if (sv_shrunk) *sv_shrunk = s;
    return svd.U * s.asDiagonal() * svd.V.transpose();
  }
  const bool wide = A.rows() < A.cols();
  Eigen::MatrixXd G;  // short-side Gram
  if (wide)
    G.noalias() = A * A.transpose();
  else
    G.noalias() = A.transpose() * A;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(G);
  Eigen::VectorXd sv(m);      // descending
  Eigen::VectorXd factor(m);  // min(sigma, tau) / sigma, 1 at sigma = 0
  double smax = 0.0;
  for (Eigen::Index k = 0; k < m; ++k) {
    const double s = std::sqrt(std::max(eig.eigenvalues()[m - 1 - k], 0.0));
    sv[k] = s;
    factor[k] = s > tau ? tau / s : 1.0;
    smax = std::max(smax, s);
  }
  if (sv_shrunk) *sv_shrunk = (sv.array() - tau).max(0.0);
  if (smax <= tau) return Eigen::MatrixXd::Zero(A.rows(), A.cols());
  // With W = V sqrt(D), the correction A V D V' becomes (A W) W' (or W W' A on
  // the wide side), keeping everything symmetric in one GEMM pair.
  Eigen::MatrixXd W(G.rows(), m);
  for (Eigen::Index k = 0; k < m; ++k)
    W.col(k) = eig.eigenvectors().col(m - 1 - k) * std::sqrt(factor[k]);
  Eigen::MatrixXd out;
  if (wide) {
    Eigen::MatrixXd WtA;
    WtA.noalias() = W.transpose() * A;
    out.noalias() = A - W * WtA;
  } else {
    Eigen::MatrixXd AW;
    AW.noalias() = A * W;
    out.noalias() = A - AW * W.transpose();
  }
  return out;
}

Eigen::MatrixXd soft_impute_sv(const Eigen::MatrixXd& R,
                               const ObservationSet& O, double threshold,
                               const Eigen::MatrixXd& L_init,
                               const SolverConfig& cfg, bool* converged,
                               Eigen::VectorXd* sv_out) {
  Eigen::MatrixXd L = L_init;
  if (sv_out) sv_out->resize(0);
  bool ok = false;
  for (int it = 0; it < cfg.inner_max_iters; ++it) {
    const Eigen::MatrixXd Z = (O.mask > 0.5).select(R, L);
    Eigen::MatrixXd L_new = shrink_sv(Z, threshold, sv_out);
    const double delta = (L_new - L).norm();
    const double base = std::max(L.norm(), kTiny);
    L = std::move(L_new);
    if (delta <= cfg.inner_tol * base) {
      ok = true;
      break;
    }
  }
  if (converged) *converged = ok;
  return L;
}

}  // namespace

double FactorFit::predict(const PanelDataset& data, int i, int t) const {
  double v = L_hat(i, t);
  if (has_intercept) v += beta_hat[0];
  const int p = data.n_covariates();
  const int off = has_intercept ? 1 : 0;
  for (int k = 0; k < p; ++k) v += beta_hat[off + k] * data.X[k](i, t);
  if (Gamma_hat.size() > 0) v += Gamma_hat[i];
  if (Delta_hat.size() > 0) v += Delta_hat[t];
  return v;
}

Eigen::MatrixXd shrink(const Eigen::MatrixXd& A, double threshold) {
  if (!A.allFinite()) throw DataError("shrink: non-finite entries");
  if (threshold < 0.0) throw ConfigError("shrink: negative threshold");
  return shrink_sv(A, threshold, nullptr);
}

Eigen::MatrixXd soft_impute(const Eigen::MatrixXd& R, const ObservationSet& O,
                            double threshold, const Eigen::MatrixXd& L_init,
                            const SolverConfig& cfg, bool* converged) {
  return soft_impute_sv(R, O, threshold, L_init, cfg, converged, nullptr);
}

double objective(const PanelDataset& data, const ObservationSet& O,
                 const Eigen::MatrixXd& L, const Eigen::VectorXd& beta,
                 const Eigen::VectorXd& Gamma, const Eigen::VectorXd& Delta,
                 double lambda) {
  const int p = data.n_covariates();
  const bool with_intercept = beta.size() == p + 1;
  if (beta.size() != p && !with_intercept)
    throw ConfigError("objective: beta length must be p or p+1 (intercept first)");
  double sse = 0.0;
  for (const auto& [i, t] : O.cells) {
    double fit = L(i, t);
    if (with_intercept) fit += beta[0];
    const int off = with_intercept ? 1 : 0;
    for (int k = 0; k < p; ++k) fit += beta[off + k] * data.X[k](i, t);
    if (Gamma.size() > 0) fit += Gamma[i];
    if (Delta.size() > 0) fit += Delta[t];
    const double r = data.Y(i, t) - fit;
    sse += r * r;
  }
  return sse / static_cast<double>(std::max<long>(O.n_obs, 1)) +
         lambda * nuclear_norm(L);
}

FactorFit fit_mcnnm(const PanelDataset& data, const ObservationSet& O,
                    const SolverConfig& cfg, const FactorFit* warm_start) {
  if (cfg.lambda < 0.0) throw ConfigError("fit_mcnnm: negative lambda");
  if (O.n_obs <= 0) throw DataError("fit_mcnnm: empty observation set");
  const int N = data.n_regions();
  const int T = data.n_periods();
  const int p = data.n_covariates();

  Workspace w = make_workspace(data, O);
  check_collinearity(data, w, cfg);

  FeState st;
  st.beta = Eigen::VectorXd::Zero(p);
  st.Gamma = Eigen::VectorXd::Zero(N);
  st.Delta = Eigen::VectorXd::Zero(T);
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(N, T);
  if (warm_start && warm_start->L_hat.rows() == N &&
      warm_start->L_hat.cols() == T) {
    L = warm_start->L_hat;
    st.Gamma = warm_start->Gamma_hat.size() == N ? warm_start->Gamma_hat
                                                 : Eigen::VectorXd::Zero(N);
    st.Delta = warm_start->Delta_hat.size() == T ? warm_start->Delta_hat
                                                 : Eigen::VectorXd::Zero(T);
    const int off = warm_start->has_intercept ? 1 : 0;
    if (warm_start->beta_hat.size() == p + off)
      for (int k = 0; k < p; ++k) st.beta[k] = warm_start->beta_hat[off + k];
    // A warm intercept folds back into Delta (or Gamma) so that predictions
    // match the stored fit; it gets re-extracted at normalization below.
    if (warm_start->has_intercept) {
      if (cfg.include_time_fe)
        st.Delta.array() += warm_start->beta_hat[0];
      else if (cfg.include_unit_fe)
        st.Gamma.array() += warm_start->beta_hat[0];
    }
  }

  const double thr = cfg.lambda * static_cast<double>(O.n_obs) / 2.0;
  FactorFit fit;
  fit.lambda = cfg.lambda;
  // The nuclear-norm term is tracked from the shrink step's own singular
  // values (|L|_* = sum max(sigma_i - thr, 0) by construction), so recording
  // the objective costs no extra decomposition.
  Eigen::VectorXd sv_L;
  double nn = 0.0;
  if (cfg.lambda > 0.0 && L.squaredNorm() > 0.0) nn = nuclear_norm(L);
  fit.objective_trace.push_back(
      objective_masked(w, cfg, st, L, cfg.lambda, N, T, p, &nn));

  bool converged = false;
  int iters = 0;
  for (; iters < cfg.max_iters; ++iters) {
    fit_fe_step(data, w, cfg, L, st);
    const Eigen::MatrixXd R = fe_residual(w, cfg, st, N, T, p);
    L = soft_impute_sv(R, O, thr, L, cfg, nullptr, &sv_L);
    if (cfg.lambda > 0.0) nn = sv_L.size() > 0 ? sv_L.sum() : nuclear_norm(L);
    const double obj = objective_masked(w, cfg, st, L, cfg.lambda, N, T, p, &nn);
    const double prev = fit.objective_trace.back();
    fit.objective_trace.push_back(obj);
    const double rel = (prev - obj) / std::max(std::abs(prev), kTiny);
    if (std::abs(rel) < cfg.tol || (prev < 1e-14 && obj < 1e-14)) {
      ++iters;
      converged = true;
      break;
    }
  }
  fit.converged = converged;
  fit.iterations = iters;
  fit.L_hat = L;

  // Location normalization: included effects are centered; the level goes to
  // an intercept (p >= 1) or stays in Delta/Gamma.
  double intercept = 0.0;
  if (cfg.include_unit_fe && (p >= 1 || cfg.include_time_fe)) {
    const double g = st.Gamma.mean();
    st.Gamma.array() -= g;
    if (p >= 1)
      intercept += g;
    else
      st.Delta.array() += g;
  }
  if (cfg.include_time_fe && p >= 1) {
    const double d = st.Delta.mean();
    st.Delta.array() -= d;
    intercept += d;
  }
  fit.has_intercept = p >= 1;
  if (fit.has_intercept) {
    fit.beta_hat.resize(p + 1);
    fit.beta_hat[0] = intercept;
    fit.beta_hat.tail(p) = st.beta;
  } else {
    fit.beta_hat = st.beta;
  }
  fit.Gamma_hat = cfg.include_unit_fe ? st.Gamma : Eigen::VectorXd::Zero(N);
  fit.Delta_hat = cfg.include_time_fe ? st.Delta : Eigen::VectorXd::Zero(T);

  const Eigen::VectorXd sv = sv_L.size() > 0 ? sv_L : singular_values(L);
  const double smax = sv.size() > 0 ? sv[0] : 0.0;
  if (smax <= 1e-12 * thr) {
    // At lambda near the shutoff value the surviving component is pure
    // rounding noise from the threshold arithmetic; snap it away.
    fit.L_hat.setZero();
    fit.rank = 0;
    return fit;
  }
  fit.rank = 0;
  for (int k = 0; k < sv.size(); ++k)
    if (sv[k] > 1e-10 * smax) ++fit.rank;
  if (smax == 0.0) fit.rank = 0;
  return fit;
}

FactorFit fit_mcnnm_path(const PanelDataset& data, const ObservationSet& O,
                         const SolverConfig& cfg,
                         const std::vector<double>& lambda_path) {
  if (cfg.lambda < 0.0) throw ConfigError("fit_mcnnm_path: negative lambda");
  std::vector<double> stages;
  for (const double v : lambda_path)
    if (std::isfinite(v) && v > cfg.lambda) stages.push_back(v);
  std::sort(stages.begin(), stages.end(), std::greater<double>());
  stages.erase(std::unique(stages.begin(), stages.end()), stages.end());

  FactorFit warm;
  bool have_warm = false;
  for (const double lam : stages) {
    SolverConfig stage_cfg = cfg;
    stage_cfg.lambda = lam;
    warm = fit_mcnnm(data, O, stage_cfg, have_warm ? &warm : nullptr);
    have_warm = true;
  }
  return fit_mcnnm(data, O, cfg, have_warm ? &warm : nullptr);
}

std::vector<double> default_lambda_grid(const PanelDataset& data,
                                        const ObservationSet& O,
                                        const SolverConfig& cfg, int n_grid) {
  const int N = data.n_regions();
  const int T = data.n_periods();
  const int p = data.n_covariates();
  Workspace w = make_workspace(data, O);
  FeState st;
  st.beta = Eigen::VectorXd::Zero(p);
  st.Gamma = Eigen::VectorXd::Zero(N);
  st.Delta = Eigen::VectorXd::Zero(T);
  fit_fe_step(data, w, cfg, Eigen::MatrixXd::Zero(N, T), st);
  const Eigen::MatrixXd R = fe_residual(w, cfg, st, N, T, p);
  const Eigen::VectorXd sv = singular_values(R);
  const double smax = sv.size() > 0 ? sv[0] : 0.0;
  const double lambda_max = 2.0 * smax / static_cast<double>(O.n_obs);
  if (lambda_max <= 0.0) return {0.0};

  std::vector<double> grid;
  grid.reserve(n_grid + 1);
  const double lo = std::log10(lambda_max) - 4.0;
  const double hi = std::log10(lambda_max);
  for (int g = 0; g < n_grid; ++g) {
    const double f = n_grid > 1 ? static_cast<double>(g) / (n_grid - 1) : 0.0;
    grid.push_back(std::pow(10.0, hi + f * (lo - hi)));
  }
  grid.push_back(0.0);
  return grid;
}

namespace {

ObservationSet subset_observation_set(const ObservationSet& O,
                                      const std::vector<int>& fold_of,
                                      int drop_fold) {
  ObservationSet out;
  out.mask = O.mask;
  out.cells.reserve(O.cells.size());
  for (size_t c = 0; c < O.cells.size(); ++c) {
    if (fold_of[c] == drop_fold) {
      out.mask(O.cells[c].first, O.cells[c].second) = 0.0;
    } else {
      out.cells.push_back(O.cells[c]);
    }
  }
  out.n_obs = static_cast<long>(out.cells.size());
  out.n_to_impute = O.n_to_impute;
  out.frac_missing = O.frac_missing;
  return out;
}

}  // namespace

CvResult cross_validate(const PanelDataset& data, const ObservationSet& O,
                        const std::vector<double>& grid, int K_folds,
                        const SolverConfig& cfg, int n_threads) {
  if (K_folds < 2) throw ConfigError("cross_validate: K_folds must be >= 2");
  if (static_cast<long>(K_folds) > O.n_obs)
    throw ConfigError("cross_validate: K_folds exceeds |O|");
  if (grid.empty() || grid.back() != 0.0)
    throw ConfigError("cross_validate: grid must be descending and end at 0");
  for (size_t g = 1; g < grid.size(); ++g)
    if (grid[g] >= grid[g - 1])
      throw ConfigError("cross_validate: grid must be strictly descending");

  const int n_cells = static_cast<int>(O.cells.size());
  std::vector<int> fold_of(n_cells);
  bool ok = false;
  for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
    Rng rng(splitmix64(cfg.seed ^ (0xA11CEULL + attempt)));
    for (int c = 0; c < n_cells; ++c)
      fold_of[c] = static_cast<int>(rng.uniform_int(K_folds));
    ok = true;
    std::vector<int> fold_count(K_folds, 0);
    for (const int f : fold_of) ++fold_count[f];
    for (const int cnt : fold_count)
      if (cnt == 0) ok = false;
    // A region whose entire O support falls in one fold would vanish from a
    // training split; redraw with a different derived seed.
    std::vector<int> first_fold(data.n_regions(), -1);
    std::vector<bool> multi(data.n_regions(), false);
    for (int c = 0; c < n_cells; ++c) {
      const int i = O.cells[c].first;
      if (first_fold[i] < 0)
        first_fold[i] = fold_of[c];
      else if (first_fold[i] != fold_of[c])
        multi[i] = true;
    }
    for (int i = 0; i < data.n_regions(); ++i)
      if (first_fold[i] >= 0 && !multi[i]) ok = false;
  }
  if (!ok)
    throw DataError(
        "cross_validate: could not draw folds leaving every region "
        "represented in all training splits (a region may have a single "
        "observed cell)");

  const int G = static_cast<int>(grid.size());
  Eigen::MatrixXd fold_mse(G, K_folds);

  auto run_fold = [&](int k) {
    ObservationSet train = subset_observation_set(O, fold_of, k);
    std::vector<std::pair<int, int>> hold;
    for (int c = 0; c < n_cells; ++c)
      if (fold_of[c] == k) hold.push_back(O.cells[c]);
    FactorFit warm;
    for (int g = 0; g < G; ++g) {
      SolverConfig cfg_g = cfg;
      cfg_g.lambda = grid[g];
      const FactorFit fit =
          fit_mcnnm(data, train, cfg_g, g > 0 ? &warm : nullptr);
      double sse = 0.0;
      for (const auto& [i, t] : hold) {
        const double r = data.Y(i, t) - fit.predict(data, i, t);
        sse += r * r;
      }
      fold_mse(g, k) = sse / static_cast<double>(hold.size());
      warm = fit;
    }
  };

  if (n_threads > 1) {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    const int workers = std::min(n_threads, K_folds);
    for (int wk = 0; wk < workers; ++wk)
      pool.emplace_back([&] {
        for (int k = next.fetch_add(1); k < K_folds; k = next.fetch_add(1))
          run_fold(k);
      });
    for (auto& th : pool) th.join();
  } else {
    for (int k = 0; k < K_folds; ++k) run_fold(k);
  }

  CvResult cv;
  cv.lambda_grid = grid;
  cv.fold_mse = fold_mse;
  cv.mean_mse.resize(G);
  cv.se_mse.resize(G);
  for (int g = 0; g < G; ++g) {
    const double m = fold_mse.row(g).mean();
    cv.mean_mse[g] = m;
    double var = 0.0;
    for (int k = 0; k < K_folds; ++k) {
      const double d = fold_mse(g, k) - m;
      var += d * d;
    }
    cv.se_mse[g] = std::sqrt(var / (K_folds - 1)) / std::sqrt(double(K_folds));
  }

  // Ties within 1e-9 relative resolve to the smaller lambda (less shrinkage
  // bias on the refit).
  int best = 0;
  for (int g = 1; g < G; ++g)
    if (cv.mean_mse[g] < cv.mean_mse[best]) best = g;
  int star = best;
  for (int g = G - 1; g >= 0; --g) {
    if (cv.mean_mse[g] <= cv.mean_mse[best] * (1.0 + 1e-9) + kTiny) {
      star = g;
      break;
    }
  }
  cv.lambda_star = cv.lambda_grid[star];
  const double cutoff = cv.mean_mse[star] + cv.se_mse[star];
  for (int g = 0; g < G; ++g) {
    if (cv.mean_mse[g] <= cutoff) {
      cv.se_rule_lambda = cv.lambda_grid[g];
      break;
    }
  }
  return cv;
}

}  // namespace panelcf
