#pragma once

#include <Eigen/Dense>

#include "panelcf/effects.hpp"
#include "panelcf/panel.hpp"

namespace panelcf {

// Two-way fixed effects fit, y = tau D + intercept + unit_fe + time_fe (+Xb).
// unit_fe and time_fe are each normalized to sum to zero.
struct TwfeFit {
  double tau_hat = 0.0;
  Eigen::VectorXd unit_fe;
  Eigen::VectorXd time_fe;
  double intercept = 0.0;
  Eigen::VectorXd beta;  // covariate coefficients (empty when excluded)
  double residual_variance = 0.0;
  long n_obs_used = 0;
};

TwfeFit fit_twfe(const PanelDataset& data, bool include_covariates = true);

// Lead/lag event-study regression with unit and time effects; dummies span
// every supported event time except the reference -1 (pinned to 0), and the
// series reports [-n_leads, n_lags]. Event times without support are omitted.
EventStudySeries twfe_event_study(const PanelDataset& data,
                                  const TreatmentSchedule& schedule,
                                  int n_leads, int n_lags,
                                  bool include_covariates = true);

}  // namespace panelcf
