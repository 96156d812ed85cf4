#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "panelcf/panel.hpp"
#include "panelcf/solver.hpp"

namespace panelcf {

// Estimated effects on the treated support (t > T_i, observed Y); NaN
// elsewhere. placebo_resid holds Y - fitted on pre-treatment cells of treated
// regions, used only for flagged placebo diagnostics.
struct EffectsMatrix {
  Eigen::MatrixXd tau_hat;
  Eigen::MatrixXd y0_hat;
  Eigen::MatrixXd levels0_hat;  // empty unless levels present and log transform
  Eigen::MatrixXd placebo_resid;
  long n_support = 0;
  long n_missing_treated = 0;  // treated cells dropped for missing observed Y
  TransformKind transform = TransformKind::identity;
};

enum class Alignment { event_time, calendar };

struct EventStudyRow {
  int time = 0;  // event time (0 = first treated year) or calendar year
  double att = 0.0;
  int n_regions = 0;
  bool placebo = false;  // event times < 0
};

struct EventStudySeries {
  Alignment alignment = Alignment::event_time;
  std::vector<EventStudyRow> rows;
};

struct EuroEffect {
  int horizon = 0;
  std::vector<std::string> region_ids;
  std::vector<double> delta;  // level difference per region at the horizon
  double mean_delta = 0.0;
  int n = 0;
};

struct DistributionSummary {
  std::string horizon_label;  // "7", "14", "21", "average"
  double share_positive = 0.0;
  double skewness = 0.0;
  double kurtosis = 0.0;  // raw (normal = 3)
  bool moments_defined = false;
  int n_regions = 0;
};

struct QuintilePath {
  int event_time = 0;
  double observed_mean = 0.0;
  double counterfactual_mean = 0.0;
  int n_regions = 0;
};

struct QuintileResult {
  std::vector<int> quintile;  // per treated region index, 1..5
  std::vector<int> region_index;
  std::vector<EventStudySeries> att;        // 5 series
  std::vector<std::vector<QuintilePath>> paths;  // 5 path sets
};

struct GiniPath {
  std::vector<int> years;
  std::vector<double> observed;
  std::vector<double> counterfactual;
  std::vector<int> n_regions;
};

enum class IntensityAgg { mean, cumulative };

struct IntensityCurve {
  int horizon = 0;  // -1 is the placebo horizon
  Eigen::VectorXd grid;    // 100 points over the observed intensity support
  Eigen::VectorXd value;   // smoothed ATT at each grid point
  double argmax_intensity = 0.0;
  double peak = 0.0;       // log-scale peak
  double peak_pct = 0.0;   // (e^peak - 1) * 100
  double bandwidth = 0.0;
  int n_regions = 0;
};

EffectsMatrix impute_effects(const PanelDataset& data, const FactorFit& fit,
                             const TreatmentSchedule& schedule);

EventStudySeries att_event_study(const EffectsMatrix& effects,
                                 const TreatmentSchedule& schedule,
                                 const PanelDataset& data, Alignment alignment);

EuroEffect euro_effect(const EffectsMatrix& effects, const PanelDataset& data,
                       const TreatmentSchedule& schedule, int horizon);

std::vector<DistributionSummary> distribution_summary(
    const EffectsMatrix& effects, const TreatmentSchedule& schedule,
    const std::vector<int>& horizons = {7, 14, 21});  // "average" always added

QuintileResult quintile_att(const EffectsMatrix& effects,
                            const PanelDataset& data,
                            const TreatmentSchedule& schedule);

GiniPath gini_path(const PanelDataset& data, const EffectsMatrix& effects,
                   const TreatmentSchedule& schedule);

// Gini = sum_ij |x_i - x_j| / (2 n^2 xbar), computed via the sorted form.
double gini(std::vector<double> x);

std::vector<IntensityCurve> intensity_curve(
    const EffectsMatrix& effects, const PanelDataset& data,
    const TreatmentSchedule& schedule,
    const std::vector<int>& horizons = {-1, 7, 14, 21}, double bandwidth = 0.0,
    IntensityAgg agg = IntensityAgg::mean);

}  // namespace panelcf
