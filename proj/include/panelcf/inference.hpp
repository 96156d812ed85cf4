#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "panelcf/effects.hpp"
#include "panelcf/panel.hpp"
#include "panelcf/solver.hpp"

namespace panelcf {

struct BootstrapConfig {
  int B = 1000;
  std::uint64_t seed = 0;
  double level = 0.95;
  bool refit_lambda = false;  // re-cross-validate per replicate when true
  int n_threads = 1;
  int cv_folds = 5;           // only used when refit_lambda
  SolverConfig solver;        // replicate refit knobs; lambda is overridden
};

struct AttBands {
  std::vector<int> event_time;   // >= 0
  Eigen::VectorXd att;           // point estimates from the original fit
  Eigen::VectorXd lo, hi, se;
  std::vector<int> n_regions;
  Eigen::MatrixXd replicates;    // S x B_ok replicate ATT paths
  int n_failed = 0;
  double level = 0.95;
};

// Parametric bootstrap: control-region residual rows are resampled per region
// (preserving serial correlation), rescaled to a held-out estimate of the
// noise level (in-sample residuals of a shrinkage fit run small), simulated
// outcomes rebuilt around the fitted model plus the estimated effects, and
// the model refit with lambda fixed at the original value. Bands are
// percentile intervals recentered on the point estimate; se is the replicate
// standard deviation.
AttBands bootstrap_att(const PanelDataset& data, const ObservationSet& O,
                       const FactorFit& fit, const TreatmentSchedule& schedule,
                       const BootstrapConfig& cfg);

// Recompute bands at a different level from an existing replicate set.
AttBands rebuild_bands(const AttBands& bands, double level);

Eigen::VectorXd att_pointwise_se(const AttBands& bands);

}  // namespace panelcf
