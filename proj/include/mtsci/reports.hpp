// Copyright 2026 The MTSCI Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef MTSCI_REPORTS_HPP_
#define MTSCI_REPORTS_HPP_

// Imputation CSV files and score reports.

#include <array>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "mtsci/common.hpp"
#include "mtsci/dataset.hpp"
#include "mtsci/metrics.hpp"
#include "mtsci/sampler.hpp"

namespace mtsci {

inline constexpr std::array<double, 5> kCsvQuantiles = {0.05, 0.25, 0.5, 0.75, 0.95};

/// (window_start, t, feature name)
using CellKey = std::tuple<long, int, std::string>;

struct ImputationRow {
  bool observed = false;
  bool target = false;
  std::optional<double> truth;
  double point = 0.0;
  std::vector<double> quantiles;  // one per level of the file it came from
};

namespace detail {

inline std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

inline double parse_double(const std::string& s, long line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ParseError("line " + std::to_string(line) + ": '" + s + "' is not a number");
  }
}

inline std::string level_name(double q) {
  std::ostringstream s;
  s << 'q' << std::setw(2) << std::setfill('0') << static_cast<int>(std::lround(q * 100));
  return s.str();
}

}  // namespace detail

/// Writes one row per cell of every window. Quantile columns hold the sample
/// quantiles at `levels`; observed cells repeat the observed value.
inline void write_imputations(std::ostream& out, const std::vector<Window>& raw,
                              const std::vector<ImputationResult>& results,
                              const std::vector<std::string>& feature_names,
                              const std::vector<double>& levels, bool full_schema = true) {
  if (raw.size() != results.size()) throw ValidationError("write_imputations: size mismatch");
  out << "window_start,t,feature";
  if (full_schema) out << ",observed_flag,target_flag,truth_if_known,point_estimate";
  for (double q : levels) out << ',' << detail::level_name(q);
  out << '\n';
  for (std::size_t n = 0; n < raw.size(); ++n) {
    const Window& w = raw[n];
    const ImputationResult& r = results[n];
    std::vector<Matrix> quant;
    for (double q : levels) quant.push_back(r.quantile(q));
    const Mask cond = w.cond_mask();
    for (Eigen::Index i = 0; i < w.values.rows(); ++i)
      for (Eigen::Index j = 0; j < w.values.cols(); ++j) {
        out << w.start_index << ',' << i << ',' << feature_names.at(static_cast<std::size_t>(j));
        if (full_schema) {
          out << ',' << (cond(i, j) ? 1 : 0) << ',' << (cond(i, j) ? 0 : 1) << ',';
          if (w.obs_mask(i, j)) out << detail::fmt(w.values(i, j));
          out << ',' << detail::fmt(r.point_estimate(i, j));
        }
        for (const auto& m : quant) out << ',' << detail::fmt(cond(i, j) ? w.values(i, j) : m(i, j));
        out << '\n';
      }
  }
}

/// Reads a file produced by write_imputations. Level columns are returned
/// in `levels` when non-null.
inline std::map<CellKey, ImputationRow> read_imputations(std::istream& in,
                                                         std::vector<double>* levels = nullptr) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("line 1: empty imputation file");
  const auto header = detail::split_line(line, ',');
  if (header.size() < 3 || header[0] != "window_start" || header[1] != "t" || header[2] != "feature")
    throw ParseError("line 1: expected columns window_start,t,feature");
  const bool full = header.size() >= 7 && header[3] == "observed_flag";
  const std::size_t first_q = full ? 7 : 3;
  std::vector<double> lv;
  for (std::size_t c = first_q; c < header.size(); ++c) {
    if (header[c].size() < 2 || header[c][0] != 'q')
      throw ParseError("line 1: unexpected column '" + header[c] + "'");
    lv.push_back(detail::parse_double(header[c].substr(1), 1) / 100.0);
  }
  if (levels) *levels = lv;
  std::map<CellKey, ImputationRow> rows;
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto cells = detail::split_line(line, ',');
    if (cells.size() != header.size())
      throw ParseError("line " + std::to_string(lineno) + ": expected " +
                       std::to_string(header.size()) + " fields, found " + std::to_string(cells.size()));
    ImputationRow row;
    const CellKey key{static_cast<long>(detail::parse_double(cells[0], lineno)),
                      static_cast<int>(detail::parse_double(cells[1], lineno)), cells[2]};
    if (full) {
      row.observed = cells[3] == "1";
      row.target = cells[4] == "1";
      if (!cells[5].empty()) row.truth = detail::parse_double(cells[5], lineno);
      row.point = detail::parse_double(cells[6], lineno);
    }
    for (std::size_t c = first_q; c < cells.size(); ++c)
      row.quantiles.push_back(detail::parse_double(cells[c], lineno));
    if (!rows.emplace(key, std::move(row)).second)
      throw ParseError("line " + std::to_string(lineno) + ": duplicate cell");
  }
  return rows;
}

/// Scores predictions against the evaluation cells of `truth_windows`.
/// CRPS uses `quantile_rows` (with its `levels`) when given, otherwise the
/// quantile columns of `rows`. Throws JoinError on the first missing cell.
inline ScoreReport evaluate_predictions(const std::vector<Window>& truth_windows,
                                        const std::vector<std::string>& feature_names,
                                        const std::map<CellKey, ImputationRow>& rows,
                                        const std::vector<double>& row_levels,
                                        const std::map<CellKey, ImputationRow>* quantile_rows,
                                        const std::vector<double>& quantile_levels,
                                        double mape_floor = 1e-4) {
  PointAccumulator point;
  point.mape_floor = mape_floor;
  CrpsAccumulator crps;
  const auto& q_rows = quantile_rows ? *quantile_rows : rows;
  const auto& q_levels = quantile_rows ? quantile_levels : row_levels;
  for (const Window& w : truth_windows)
    for (Eigen::Index i = 0; i < w.values.rows(); ++i)
      for (Eigen::Index j = 0; j < w.values.cols(); ++j) {
        if (!w.eval_mask(i, j)) continue;
        const CellKey key{w.start_index, static_cast<int>(i), feature_names.at(static_cast<std::size_t>(j))};
        const auto it = rows.find(key);
        const auto qt = q_rows.find(key);
        if (it == rows.end() || qt == q_rows.end())
          throw JoinError("no prediction for window_start=" + std::to_string(w.start_index) +
                          " t=" + std::to_string(i) + " feature=" + std::get<2>(key));
        point.add(w.values(i, j), it->second.point);
        if (!q_levels.empty()) crps.add(w.values(i, j), qt->second.quantiles, q_levels);
      }
  if (point.n == 0) throw ValidationError("no evaluation cells to score");
  const PointScores ps = point.finish();
  ScoreReport rep;
  rep.mae = ps.mae;
  rep.rmse = ps.rmse;
  rep.mape = ps.mape;
  rep.n_cells = ps.n_cells;
  rep.mape_excluded = ps.mape_excluded;
  if (!q_levels.empty() && crps.abs_truth_sum > 0.0) rep.crps = crps.finish();
  return rep;
}

struct ReportKey {
  std::string dataset, pattern, model;
  std::uint64_t seed = 0;
  bool operator==(const ReportKey&) const = default;
};

inline nlohmann::json report_to_json(const ReportKey& key, const ScoreReport& r) {
  nlohmann::json j = {{"dataset", key.dataset}, {"pattern", key.pattern}, {"seed", key.seed},
                      {"model", key.model},     {"mae", r.mae},           {"rmse", r.rmse},
                      {"n_cells", r.n_cells},   {"mape_excluded", r.mape_excluded}};
  j["mape"] = r.mape ? nlohmann::json(*r.mape) : nlohmann::json(nullptr);
  j["crps"] = r.crps ? nlohmann::json(*r.crps) : nlohmann::json(nullptr);
  return j;
}

/// Inserts or replaces the entry for `key` in `<dir>/report.json` and
/// rewrites `<dir>/report.csv` from it.
inline void update_reports(const std::string& dir, const ReportKey& key, const ScoreReport& r) {
  using nlohmann::json;
  const std::string json_path = dir + "/report.json";
  json all = json::array();
  if (std::ifstream in(json_path); in) {
    try {
      all = json::parse(in);
    } catch (const json::exception&) {
      all = json::array();
    }
    if (!all.is_array()) all = json::array();
  }
  const json entry = report_to_json(key, r);
  bool replaced = false;
  for (auto& e : all)
    if (e.value("dataset", "") == key.dataset && e.value("pattern", "") == key.pattern &&
        e.value("model", "") == key.model && e.value("seed", std::uint64_t{0}) == key.seed) {
      e = entry;
      replaced = true;
    }
  if (!replaced) all.push_back(entry);
  std::ofstream(json_path) << all.dump(2) << '\n';
  std::ofstream csv(dir + "/report.csv");
  csv << "dataset,pattern,seed,model,mae,rmse,mape,crps,n_cells,mape_excluded\n";
  auto opt = [](const json& v) { return v.is_null() ? std::string() : detail::fmt(v.get<double>()); };
  for (const auto& e : all)
    csv << e["dataset"].get<std::string>() << ',' << e["pattern"].get<std::string>() << ','
        << e["seed"].get<std::uint64_t>() << ',' << e["model"].get<std::string>() << ','
        << detail::fmt(e["mae"].get<double>()) << ',' << detail::fmt(e["rmse"].get<double>()) << ','
        << opt(e["mape"]) << ',' << opt(e["crps"]) << ',' << e["n_cells"].get<long>() << ','
        << e["mape_excluded"].get<long>() << '\n';
}

}  // namespace mtsci

#endif  // MTSCI_REPORTS_HPP_
