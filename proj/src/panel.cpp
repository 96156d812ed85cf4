#include "panelcf/panel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "panelcf/csv.hpp"
#include "panelcf/errors.hpp"
#include "panelcf/io.hpp"

namespace panelcf {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

int require_column(const CsvTable& t, const std::string& name,
                   const std::string& path) {
  const int j = t.column(name);
  if (j < 0)
    throw DataError("CSV '" + path + "': required column '" + name + "' missing");
  return j;
}

}  // namespace

PanelDataset load_panel(const std::string& path, const CsvSchema& schema) {
  const CsvTable table = read_csv(path);
  if (table.rows.empty()) throw DataError("CSV '" + path + "': no rows");

  const int c_region = require_column(table, schema.region, path);
  const int c_year = require_column(table, schema.year, path);
  const int c_outcome = require_column(table, schema.outcome, path);
  const int c_treated = table.column(schema.treated);
  const int c_intensity = table.column(schema.intensity);
  const int c_level = table.column(schema.level);

  std::vector<std::pair<std::string, int>> cov_cols;
  for (size_t j = 0; j < table.header.size(); ++j)
    if (table.header[j].rfind(schema.covariate_prefix, 0) == 0)
      cov_cols.emplace_back(table.header[j], static_cast<int>(j));
  std::sort(cov_cols.begin(), cov_cols.end());

  // First pass: region order by first appearance, year range.
  std::vector<std::string> regions;
  std::map<std::string, int> region_index;
  std::set<int> year_set;
  for (const auto& row : table.rows) {
    if (row.size() != table.header.size())
      throw DataError("CSV '" + path + "': row with " +
                      std::to_string(row.size()) + " fields, expected " +
                      std::to_string(table.header.size()));
    const std::string& rid = row[c_region];
    if (rid.empty()) throw DataError("CSV '" + path + "': empty region id");
    if (region_index.emplace(rid, static_cast<int>(regions.size())).second)
      regions.push_back(rid);
    const auto yv = parse_cell(row[c_year], "column '" + schema.year + "'");
    if (!yv) throw DataError("CSV '" + path + "': empty year field");
    year_set.insert(static_cast<int>(*yv));
  }

  std::vector<int> years(year_set.begin(), year_set.end());
  for (size_t s = 1; s < years.size(); ++s)
    if (years[s] != years[s - 1] + 1)
      throw DataError("CSV '" + path + "': years have a gap between " +
                      std::to_string(years[s - 1]) + " and " +
                      std::to_string(years[s]));

  const int N = static_cast<int>(regions.size());
  const int T = static_cast<int>(years.size());
  const int year0 = years.front();

  PanelDataset data;
  data.region_ids = regions;
  data.years = years;
  data.Y = Eigen::MatrixXd::Constant(N, T, kNaN);
  data.D = Eigen::MatrixXi::Zero(N, T);
  for (const auto& [name, col] : cov_cols) {
    (void)col;
    data.covariate_names.push_back(name);
    data.X.push_back(Eigen::MatrixXd::Constant(N, T, kNaN));
  }
  if (c_intensity >= 0) data.intensity = Eigen::MatrixXd::Constant(N, T, kNaN);
  if (c_level >= 0) data.levels = Eigen::MatrixXd::Constant(N, T, kNaN);

  Eigen::MatrixXi seen = Eigen::MatrixXi::Zero(N, T);
  for (const auto& row : table.rows) {
    const int i = region_index[row[c_region]];
    const int year = static_cast<int>(*parse_cell(row[c_year], "year"));
    const int s = year - year0;
    if (seen(i, s)++)
      throw DataError("CSV '" + path + "': duplicate row for region '" +
                      regions[i] + "', year " + std::to_string(year));
    const std::string cell_id =
        "region '" + regions[i] + "', year " + std::to_string(year);

    const auto y = parse_cell(row[c_outcome], "outcome at " + cell_id);
    if (y) data.Y(i, s) = *y;

    if (c_treated >= 0) {
      const auto d = parse_cell(row[c_treated], "treated at " + cell_id);
      if (d) {
        if (*d != 0.0 && *d != 1.0)
          throw DataError("treated flag must be 0 or 1 at " + cell_id);
        data.D(i, s) = static_cast<int>(*d);
      }
    }
    for (size_t k = 0; k < cov_cols.size(); ++k) {
      const auto v = parse_cell(row[cov_cols[k].second],
                                cov_cols[k].first + " at " + cell_id);
      if (v) data.X[k](i, s) = *v;
    }
    if (c_intensity >= 0) {
      const auto v = parse_cell(row[c_intensity], "intensity at " + cell_id);
      if (v) {
        if (*v < 0.0) throw DataError("negative intensity at " + cell_id);
        data.intensity(i, s) = *v;
      }
    }
    if (c_level >= 0) {
      const auto v = parse_cell(row[c_level], "level at " + cell_id);
      if (v) data.levels(i, s) = *v;
    }
  }

  if (N < 2 || T < 2)
    throw DataError("CSV '" + path + "': need at least 2 regions and 2 years");
  return data;
}

void save_panel(const PanelDataset& data, const std::string& path,
                const CsvSchema& schema) {
  CsvTable t;
  t.header = {schema.region, schema.year, schema.outcome};
  // Covariate columns must carry the schema prefix to be recognized on
  // reload; bare names picked by in-memory builders get it added here.
  for (const auto& name : data.covariate_names)
    t.header.push_back(name.rfind(schema.covariate_prefix, 0) == 0
                           ? name
                           : schema.covariate_prefix + name);
  t.header.push_back(schema.treated);
  if (data.has_intensity()) t.header.push_back(schema.intensity);
  if (data.has_levels()) t.header.push_back(schema.level);

  for (int i = 0; i < data.n_regions(); ++i) {
    for (int s = 0; s < data.n_periods(); ++s) {
      std::vector<std::string> row = {data.region_ids[i],
                                      std::to_string(data.years[s]),
                                      fmt_cell(data.Y(i, s))};
      for (const auto& Xk : data.X) row.push_back(fmt_cell(Xk(i, s)));
      row.push_back(std::to_string(data.D(i, s)));
      if (data.has_intensity()) row.push_back(fmt_cell(data.intensity(i, s)));
      if (data.has_levels()) row.push_back(fmt_cell(data.levels(i, s)));
      t.rows.push_back(std::move(row));
    }
  }
  write_csv(path, t);
}

TreatmentSchedule derive_schedule(const PanelDataset& data, bool allow_reversal) {
  const int N = data.n_regions();
  const int T = data.n_periods();
  TreatmentSchedule sched;
  sched.T_i.assign(N, T);
  sched.is_treated.assign(N, false);

  for (int i = 0; i < N; ++i) {
    int first = -1;
    for (int s = 0; s < T; ++s) {
      if (data.D(i, s) == 1) {
        first = s;
        break;
      }
    }
    if (first < 0) continue;
    for (int s = first + 1; s < T; ++s) {
      // A zero after the first treated period only matters where the row was
      // actually observed; absent rows default D to 0.
      if (data.D(i, s) == 0 && !std::isnan(data.Y(i, s)) && !allow_reversal)
        throw DataError("region '" + data.region_ids[i] +
                        "': treatment reversal at year " +
                        std::to_string(data.years[s]) +
                        " (non-absorbing path; pass --allow-reversal to treat "
                        "all post-adoption periods as treated)");
    }
    sched.is_treated[i] = true;
    sched.treated_set.push_back(i);
    sched.T_i[i] = first;  // 1-based count of last pre-treatment period
  }
  sched.N_tr = static_cast<int>(sched.treated_set.size());
  sched.N_c = N - sched.N_tr;
  return sched;
}

ObservationSet build_observation_set(const PanelDataset& data,
                                     const TreatmentSchedule& schedule) {
  const int N = data.n_regions();
  const int T = data.n_periods();
  ObservationSet O;
  O.mask = Eigen::ArrayXXd::Zero(N, T);
  long missing = 0;

  for (int i = 0; i < N; ++i) {
    int pre_obs = 0;
    for (int s = 0; s < T; ++s) {
      if (std::isnan(data.Y(i, s))) {
        ++missing;
        continue;
      }
      const bool post = (s + 1) > schedule.T_i[i];  // t > T_i
      if (post) {
        ++O.n_to_impute;
      } else {
        O.mask(i, s) = 1.0;
        O.cells.emplace_back(i, s);
        ++pre_obs;
      }
    }
    if (schedule.is_treated[i] && pre_obs == 0)
      throw DataError("region '" + data.region_ids[i] +
                      "': treated region has no observed pre-treatment "
                      "periods; counterfactual cannot be imputed");
  }
  O.n_obs = static_cast<long>(O.cells.size());
  O.frac_missing = static_cast<double>(missing) / (static_cast<double>(N) * T);
  return O;
}

PanelDataset transform_outcome(const PanelDataset& data, TransformKind kind) {
  PanelDataset out = data;
  out.transform = kind;
  if (kind == TransformKind::identity) return out;

  // The log is taken on the level series; if no explicit level column exists,
  // the current outcome is the level.
  const Eigen::MatrixXd src = data.has_levels() ? data.levels : data.Y;
  out.levels = src;
  out.Y = Eigen::MatrixXd::Constant(src.rows(), src.cols(), kNaN);
  for (int i = 0; i < src.rows(); ++i) {
    for (int s = 0; s < src.cols(); ++s) {
      const double v = src(i, s);
      if (std::isnan(v)) continue;
      if (v <= 0.0)
        throw DataError("non-positive level " + fmt_double(v) +
                        " under log transform at region '" +
                        data.region_ids[i] + "', year " +
                        std::to_string(data.years[s]));
      out.Y(i, s) = std::log(v);
    }
  }
  return out;
}

ValidationReport validate_panel(const std::string& path, const CsvSchema& schema,
                                bool allow_reversal) {
  ValidationReport report;
  PanelDataset data;
  try {
    data = load_panel(path, schema);
  } catch (const DataError& e) {
    report.issues.push_back(e.what());
    return report;
  }
  report.n_regions = data.n_regions();
  report.n_years = data.n_periods();
  try {
    const TreatmentSchedule sched = derive_schedule(data, allow_reversal);
    report.n_treated = sched.N_tr;
    const ObservationSet O = build_observation_set(data, sched);
    report.n_obs = O.n_obs;
    if (data.has_intensity()) {
      for (int i = 0; i < data.n_regions(); ++i)
        for (int s = 0; s < data.n_periods(); ++s)
          if (data.D(i, s) == 0 && !std::isnan(data.intensity(i, s)) &&
              data.intensity(i, s) != 0.0) {
            report.issues.push_back("region '" + data.region_ids[i] +
                                    "', year " + std::to_string(data.years[s]) +
                                    ": nonzero intensity on an untreated cell");
          }
    }
  } catch (const DataError& e) {
    report.issues.push_back(e.what());
  }
  return report;
}

}  // namespace panelcf
