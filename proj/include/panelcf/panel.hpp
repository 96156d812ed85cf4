#pragma once

#include <Eigen/Dense>
#include <string>
#include <utility>
#include <vector>

namespace panelcf {

enum class TransformKind { identity, log_per_capita, log_ratio };

// Rectangular region x year panel. Missing-at-source cells are NaN in Y.
// Row order follows first appearance in the source file; the year axis is the
// consecutive range [min_year, max_year] found in the data.
struct PanelDataset {
  std::vector<std::string> region_ids;      // length N
  std::vector<int> years;                   // length T, consecutive
  Eigen::MatrixXd Y;                        // N x T, NaN = missing-at-source
  Eigen::MatrixXi D;                        // N x T, 0/1
  std::vector<Eigen::MatrixXd> X;           // p covariate matrices, N x T
  std::vector<std::string> covariate_names; // length p, sorted
  Eigen::MatrixXd intensity;                // empty if absent; NaN where unset
  Eigen::MatrixXd levels;                   // empty if absent
  TransformKind transform = TransformKind::identity;

  int n_regions() const { return static_cast<int>(region_ids.size()); }
  int n_periods() const { return static_cast<int>(years.size()); }
  int n_covariates() const { return static_cast<int>(X.size()); }
  bool has_intensity() const { return intensity.size() > 0; }
  bool has_levels() const { return levels.size() > 0; }
};

// Per-region treatment timing. T_i is the 1-based index of the last
// pre-treatment period; T_i == T for never-treated regions.
struct TreatmentSchedule {
  std::vector<int> T_i;
  std::vector<int> treated_set;  // region indices with any treatment
  std::vector<bool> is_treated;
  int N_c = 0;
  int N_tr = 0;
};

// Cells entering the estimation objective: observed Y and either a control
// region or a pre-treatment period of a treated region.
struct ObservationSet {
  Eigen::ArrayXXd mask;                     // N x T, 1.0 in O else 0.0
  std::vector<std::pair<int, int>> cells;   // row-major order
  long n_obs = 0;
  long n_to_impute = 0;     // treated cells with observed Y
  double frac_missing = 0;  // share of cells missing at source
};

struct CsvSchema {
  std::string region = "region";
  std::string year = "year";
  std::string outcome = "outcome";
  std::string treated = "treated";
  std::string intensity = "intensity";
  std::string level = "level";
  std::string covariate_prefix = "cov_";
};

struct ValidationReport {
  int n_regions = 0;
  int n_years = 0;
  int n_treated = 0;
  long n_obs = 0;
  std::vector<std::string> issues;
};

PanelDataset load_panel(const std::string& path, const CsvSchema& schema = {});
void save_panel(const PanelDataset& data, const std::string& path,
                const CsvSchema& schema = {});

TreatmentSchedule derive_schedule(const PanelDataset& data,
                                  bool allow_reversal = false);

ObservationSet build_observation_set(const PanelDataset& data,
                                     const TreatmentSchedule& schedule);

PanelDataset transform_outcome(const PanelDataset& data, TransformKind kind);

// Load + schedule + observation set, folding failures into `issues`.
ValidationReport validate_panel(const std::string& path,
                                const CsvSchema& schema = {},
                                bool allow_reversal = false);

}  // namespace panelcf
