#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <utility>

#include "panelcf/panel.hpp"

namespace panelcf {

enum class EffectKind { zero, constant, linear };
enum class AssignRule { random_share, loading_ranked };
enum class AdoptionPattern { simultaneous, staggered_uniform };

struct DgpConfig {
  int N = 100;
  int T = 30;
  int K = 2;   // true factor count
  int p = 0;   // covariates
  double ar_coef = 0.8;        // per-factor AR(1) coefficient
  // Innovation scale of the factor AR(1). The default keeps the stationary
  // factor signal (sd 0.1/0.6 per factor before loadings) comparable to
  // noise_sd, so the low-rank component is recoverable but does not drown
  // per-cohort averages in common shocks.
  double factor_innov_sd = 0.1;
  double loading_mean = 0.0;
  double loading_sd = 1.0;
  Eigen::VectorXd beta_true;   // length p
  double noise_sd = 0.1;
  EffectKind effect = EffectKind::constant;
  double effect_param = 0.1;   // constant c, or linear slope
  AssignRule assign = AssignRule::random_share;
  double share = 0.4;          // treated share q in (0,1)
  AdoptionPattern adoption = AdoptionPattern::staggered_uniform;
  int adopt_start = 0;   // first treated period (1-based); 0 = T/3 default
  int adopt_end = 0;     // staggered upper bound; 0 = adopt_start + 4
  int first_year = 2000;
  bool emit_levels = false;     // level column = exp(outcome)
  bool emit_intensity = false;  // constant per-region share on treated cells
  std::uint64_t seed = 42;
};

struct DgpTruth {
  Eigen::MatrixXd L;      // Lambda F'
  Eigen::MatrixXd tau;    // true effect, 0 off the treated support
  Eigen::VectorXd beta;
  Eigen::MatrixXd noise;
  Eigen::MatrixXd factors;   // T x K
  Eigen::MatrixXd loadings;  // N x K
  std::vector<int> treated;  // region indices
  std::vector<int> T_i;      // last pre-treatment period per region
};

// Y = Lambda F' + X beta + tau .* D + E, balanced and fully observed.
// Deterministic given cfg.seed.
std::pair<PanelDataset, DgpTruth> generate(const DgpConfig& cfg);

// Marks a seeded random subset of O-eligible cells (control or pre-treatment)
// missing-at-source; mask_out (optional) receives the held-out cell indicator.
PanelDataset mask_additional(const PanelDataset& data, double fraction,
                             std::uint64_t seed,
                             Eigen::ArrayXXd* mask_out = nullptr);

}  // namespace panelcf
