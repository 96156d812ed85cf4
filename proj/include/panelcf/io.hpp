#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "panelcf/effects.hpp"
#include "panelcf/inference.hpp"
#include "panelcf/panel.hpp"
#include "panelcf/solver.hpp"
#include "panelcf/twfe.hpp"

namespace panelcf {

inline constexpr const char* kToolName = "panelcf";
inline constexpr const char* kToolVersion = "0.1.0";

// FNV-1a 64-bit over raw bytes; used for input attribution in manifests.
std::uint64_t fnv1a64(const std::string& bytes);
std::string hash_file(const std::string& path);  // hex of fnv1a64

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& content);

// {lambda, rank, beta[], gamma[], delta[], iterations, converged,
//  objective_trace[]} plus a sidecar CSV of L_hat (region, year, value).
void write_factor_fit(const FactorFit& fit, const std::string& json_path);
void write_lhat_csv(const FactorFit& fit, const PanelDataset& data,
                    const std::string& path);

void write_validation_report(const ValidationReport& report,
                             const std::string& path);

void write_cv_result(const CvResult& cv, const std::string& json_path,
                     const std::string& curve_csv_path);

// event_time,att,lo,hi,se,n_regions
void write_att_bands(const AttBands& bands, const std::string& path);

// region,year,event_time,tau_hat,y0_hat[,level0_hat]
void write_effects_csv(const EffectsMatrix& effects, const PanelDataset& data,
                       const TreatmentSchedule& schedule,
                       const std::string& path);

void write_event_study(const EventStudySeries& series, const std::string& path);

void write_twfe_fit(const TwfeFit& fit, const std::string& path);

// Canonical flag map -> manifest JSON with input hash and tool version.
void write_manifest(const std::string& path, const std::string& command,
                    const std::vector<std::pair<std::string, std::string>>& inputs,
                    const std::vector<std::pair<std::string, std::string>>& options);

}  // namespace panelcf
