#include "panelcf/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "panelcf/csv.hpp"
#include "panelcf/errors.hpp"

namespace panelcf {

using nlohmann::json;

// ---------- CSV primitives ----------

int CsvTable::column(const std::string& name) const {
  for (size_t j = 0; j < header.size(); ++j)
    if (header[j] == name) return static_cast<int>(j);
  return -1;
}

namespace {

std::vector<std::string> split_line(const std::string& text, size_t& pos) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  bool any = false;
  while (pos < text.size()) {
    const char c = text[pos];
    if (quoted) {
      if (c == '"') {
        if (pos + 1 < text.size() && text[pos + 1] == '"') {
          field += '"';
          ++pos;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && pos + 1 < text.size() && text[pos + 1] == '\n') ++pos;
      ++pos;
      out.push_back(std::move(field));
      return out;
    } else {
      field += c;
      any = true;
    }
    ++pos;
  }
  if (any || !field.empty()) out.push_back(std::move(field));
  return out;
}

std::string quote_if_needed(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (const char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += '"';
  return out;
}

}  // namespace

CsvTable read_csv(const std::string& path) {
  const std::string text = read_file(path);
  CsvTable table;
  size_t pos = 0;
  bool first = true;
  while (pos < text.size()) {
    auto fields = split_line(text, pos);
    if (fields.empty()) continue;
    if (fields.size() == 1 && fields[0].empty()) continue;  // blank line
    if (first) {
      table.header = std::move(fields);
      first = false;
    } else {
      table.rows.push_back(std::move(fields));
    }
  }
  if (first) throw DataError("CSV '" + path + "': no rows");
  return table;
}

void write_csv(const std::string& path, const CsvTable& table) {
  std::ostringstream os;
  for (size_t j = 0; j < table.header.size(); ++j) {
    if (j) os << ',';
    os << quote_if_needed(table.header[j]);
  }
  os << '\n';
  for (const auto& row : table.rows) {
    for (size_t j = 0; j < row.size(); ++j) {
      if (j) os << ',';
      os << quote_if_needed(row[j]);
    }
    os << '\n';
  }
  write_file(path, os.str());
}

std::string fmt_double(double v) {
  char buf[40];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string fmt_cell(double v) {
  if (std::isnan(v)) return "";
  return fmt_double(v);
}

std::optional<double> parse_cell(const std::string& s, const std::string& context) {
  size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t')) --e;
  if (b == e) return std::nullopt;
  double v = 0;
  auto res = std::from_chars(s.data() + b, s.data() + e, v);
  if (res.ec != std::errc() || res.ptr != s.data() + e)
    throw DataError("non-numeric value '" + s + "' in " + context);
  return v;
}

// ---------- files and hashing ----------

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write file '" + path + "'");
  out << content;
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hash_file(const std::string& path) {
  char buf[24];
  auto res = std::to_chars(buf, buf + sizeof(buf), fnv1a64(read_file(path)), 16);
  return std::string(buf, res.ptr);
}

// ---------- artifact writers ----------

namespace {

json vec_to_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

}  // namespace

void write_factor_fit(const FactorFit& fit, const std::string& json_path) {
  json j;
  j["lambda"] = fit.lambda;
  j["rank"] = fit.rank;
  j["beta"] = vec_to_json(fit.beta_hat);
  j["gamma"] = vec_to_json(fit.Gamma_hat);
  j["delta"] = vec_to_json(fit.Delta_hat);
  j["iterations"] = fit.iterations;
  j["converged"] = fit.converged;
  j["objective_trace"] = fit.objective_trace;
  write_file(json_path, j.dump(2) + "\n");
}

void write_lhat_csv(const FactorFit& fit, const PanelDataset& data,
                    const std::string& path) {
  CsvTable t;
  t.header = {"region", "year", "value"};
  for (int i = 0; i < data.n_regions(); ++i)
    for (int s = 0; s < data.n_periods(); ++s)
      t.rows.push_back({data.region_ids[i], std::to_string(data.years[s]),
                        fmt_double(fit.L_hat(i, s))});
  write_csv(path, t);
}

void write_validation_report(const ValidationReport& report,
                             const std::string& path) {
  json j;
  j["n_regions"] = report.n_regions;
  j["n_years"] = report.n_years;
  j["n_treated"] = report.n_treated;
  j["n_obs"] = report.n_obs;
  j["issues"] = report.issues;
  write_file(path, j.dump(2) + "\n");
}

void write_cv_result(const CvResult& cv, const std::string& json_path,
                     const std::string& curve_csv_path) {
  json j;
  j["lambda_grid"] = cv.lambda_grid;
  json fm = json::array();
  for (Eigen::Index g = 0; g < cv.fold_mse.rows(); ++g) {
    json row = json::array();
    for (Eigen::Index k = 0; k < cv.fold_mse.cols(); ++k)
      row.push_back(cv.fold_mse(g, k));
    fm.push_back(row);
  }
  j["fold_mse"] = fm;
  j["lambda_star"] = cv.lambda_star;
  j["se_rule_lambda"] = cv.se_rule_lambda;
  write_file(json_path, j.dump(2) + "\n");

  CsvTable t;
  t.header = {"lambda", "mean_mse", "se_mse"};
  for (size_t g = 0; g < cv.lambda_grid.size(); ++g)
    t.rows.push_back({fmt_double(cv.lambda_grid[g]), fmt_double(cv.mean_mse[g]),
                      fmt_double(cv.se_mse[g])});
  write_csv(curve_csv_path, t);
}

void write_att_bands(const AttBands& bands, const std::string& path) {
  CsvTable t;
  t.header = {"event_time", "att", "lo", "hi", "se", "n_regions"};
  for (size_t s = 0; s < bands.event_time.size(); ++s)
    t.rows.push_back({std::to_string(bands.event_time[s]),
                      fmt_double(bands.att[s]), fmt_double(bands.lo[s]),
                      fmt_double(bands.hi[s]), fmt_double(bands.se[s]),
                      std::to_string(bands.n_regions[s])});
  write_csv(path, t);
}

void write_effects_csv(const EffectsMatrix& effects, const PanelDataset& data,
                       const TreatmentSchedule& schedule,
                       const std::string& path) {
  const bool with_levels = effects.levels0_hat.size() > 0;
  CsvTable t;
  t.header = {"region", "year", "event_time", "tau_hat", "y0_hat"};
  if (with_levels) t.header.push_back("level0_hat");
  for (int i = 0; i < data.n_regions(); ++i) {
    for (int s = 0; s < data.n_periods(); ++s) {
      if (std::isnan(effects.tau_hat(i, s))) continue;
      const int event_time = (s + 1) - schedule.T_i[i] - 1;
      std::vector<std::string> row = {
          data.region_ids[i], std::to_string(data.years[s]),
          std::to_string(event_time), fmt_double(effects.tau_hat(i, s)),
          fmt_double(effects.y0_hat(i, s))};
      if (with_levels) row.push_back(fmt_double(effects.levels0_hat(i, s)));
      t.rows.push_back(std::move(row));
    }
  }
  write_csv(path, t);
}

void write_event_study(const EventStudySeries& series, const std::string& path) {
  CsvTable t;
  const bool event_mode = series.alignment == Alignment::event_time;
  t.header = {event_mode ? "event_time" : "year", "att", "n_regions", "placebo"};
  for (const auto& row : series.rows)
    t.rows.push_back({std::to_string(row.time), fmt_double(row.att),
                      std::to_string(row.n_regions), row.placebo ? "1" : "0"});
  write_csv(path, t);
}

void write_twfe_fit(const TwfeFit& fit, const std::string& path) {
  json j;
  j["tau_hat"] = fit.tau_hat;
  j["unit_fe"] = vec_to_json(fit.unit_fe);
  j["time_fe"] = vec_to_json(fit.time_fe);
  j["intercept"] = fit.intercept;
  j["residual_variance"] = fit.residual_variance;
  j["n_obs_used"] = fit.n_obs_used;
  write_file(path, j.dump(2) + "\n");
}

void write_manifest(const std::string& path, const std::string& command,
                    const std::vector<std::pair<std::string, std::string>>& inputs,
                    const std::vector<std::pair<std::string, std::string>>& options) {
  json j;
  j["tool"] = kToolName;
  j["version"] = kToolVersion;
  j["command"] = command;
  json in = json::object();
  for (const auto& [name, hash] : inputs) in[name] = hash;
  j["inputs"] = in;
  json opt = json::object();
  for (const auto& [k, v] : options) opt[k] = v;
  j["options"] = opt;
  write_file(path, j.dump(2) + "\n");
}

}  // namespace panelcf
