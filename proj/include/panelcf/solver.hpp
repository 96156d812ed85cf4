#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "panelcf/panel.hpp"

namespace panelcf {

struct SolverConfig {
  double lambda = 0.0;
  int max_iters = 500;        // outer alternation cap
  double tol = 1e-7;          // relative objective change
  bool include_unit_fe = true;
  bool include_time_fe = true;
  std::uint64_t seed = 0;     // fold draws and any randomized step
  int inner_max_iters = 200;  // soft-impute cap
  double inner_tol = 1e-8;    // relative change of ||L||_F
};

// Estimated completion model. When p >= 1 covariates are present, beta_hat
// has p + 1 entries with the intercept first (the level is absorbed there);
// with p = 0 the level stays in Delta_hat and only Gamma_hat is centered.
struct FactorFit {
  Eigen::MatrixXd L_hat;
  Eigen::VectorXd beta_hat;
  Eigen::VectorXd Gamma_hat;
  Eigen::VectorXd Delta_hat;
  int rank = 0;
  std::vector<double> objective_trace;
  bool converged = false;
  int iterations = 0;
  double lambda = 0.0;
  bool has_intercept = false;

  // Model prediction for cell (i, t): L + x'beta + Gamma_i + Delta_t.
  double predict(const PanelDataset& data, int i, int t) const;
};

struct CvResult {
  std::vector<double> lambda_grid;  // descending, last element 0
  Eigen::MatrixXd fold_mse;         // grid x K
  std::vector<double> mean_mse;
  std::vector<double> se_mse;
  double lambda_star = 0.0;
  double se_rule_lambda = 0.0;
};

// Singular-value soft-thresholding: S * max(Sigma - threshold, 0) * R', the
// unique minimizer of 1/2 ||Z - A||_F^2 + threshold * ||Z||_*.
Eigen::MatrixXd shrink(const Eigen::MatrixXd& A, double threshold);

// Iterates L <- shrink(P_O(R) + P_O_perp(L), threshold) from L_init until the
// relative change of ||L||_F drops below cfg.inner_tol. threshold is
// lambda * |O| / 2, precomputed by the caller.
Eigen::MatrixXd soft_impute(const Eigen::MatrixXd& R, const ObservationSet& O,
                            double threshold, const Eigen::MatrixXd& L_init,
                            const SolverConfig& cfg, bool* converged = nullptr);

// (1/|O|) sum_O (Y - L - x'beta - Gamma_i - Delta_t)^2 + lambda ||L||_*.
// beta follows the FactorFit layout (intercept first when p >= 1).
double objective(const PanelDataset& data, const ObservationSet& O,
                 const Eigen::MatrixXd& L, const Eigen::VectorXd& beta,
                 const Eigen::VectorXd& Gamma, const Eigen::VectorXd& Delta,
                 double lambda);

// Alternating minimization: (a) beta/Gamma/Delta by least squares on the
// O-residuals of Y - L; (b) L by soft_impute on the O-residuals of
// Y - X beta - Gamma 1' - 1 Delta'. Objective recorded per outer iteration.
FactorFit fit_mcnnm(const PanelDataset& data, const ObservationSet& O,
                    const SolverConfig& cfg,
                    const FactorFit* warm_start = nullptr);

// Continuation fit: runs fit_mcnnm at each lambda_path entry strictly above
// cfg.lambda (descending), warm-starting each stage from the previous one,
// then fits cfg.lambda itself. Cold starts at small lambda converge slowly;
// walking the path reaches the same stationary point in far fewer iterations.
// The returned fit (trace, iterations, converged) describes the final stage.
FactorFit fit_mcnnm_path(const PanelDataset& data, const ObservationSet& O,
                         const SolverConfig& cfg,
                         const std::vector<double>& lambda_path);

// 30 log-spaced values from lambda_max down to lambda_max * 1e-4, then 0.
// lambda_max = 2 sigma_max(P_O(residual at L=0)) / |O|, so the first fit on
// the grid yields L_hat = 0.
std::vector<double> default_lambda_grid(const PanelDataset& data,
                                        const ObservationSet& O,
                                        const SolverConfig& cfg,
                                        int n_grid = 30);

// K-fold CV over the grid with per-fold warm starts in grid order.
// Ties in mean MSE (1e-9 relative) resolve to the smaller lambda.
CvResult cross_validate(const PanelDataset& data, const ObservationSet& O,
                        const std::vector<double>& grid, int K_folds,
                        const SolverConfig& cfg, int n_threads = 1);

}  // namespace panelcf
