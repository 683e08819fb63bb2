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

#ifndef MTSCI_DATASET_HPP_
#define MTSCI_DATASET_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mtsci/common.hpp"

namespace mtsci {

// ---------------------------------------------------------------------------
// Timestamps
// ---------------------------------------------------------------------------

/// Days since 1970-01-01 for a proleptic Gregorian date.
inline std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const auto yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

inline void civil_from_days(std::int64_t z, int& y, unsigned& m, unsigned& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const auto doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = doy - (153 * mp + 2) / 5 + 1;
  m = mp < 10 ? mp + 3 : mp - 9;
  y = static_cast<int>(static_cast<std::int64_t>(yoe) + era * 400 + (m <= 2));
}

/// Parses "YYYY-MM-DD[( |T)HH:MM[:SS]]" (trailing fraction or zone ignored)
/// into seconds since the epoch, interpreted as UTC.
inline std::int64_t parse_timestamp(const std::string& text) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  char sep = 0;
  const int n = std::sscanf(text.c_str(), "%d-%d-%d%c%d:%d:%d", &y, &mo, &d, &sep, &h, &mi, &s);
  if (n < 3 || (n >= 4 && sep != ' ' && sep != 'T') || (n > 3 && n < 6) || mo < 1 || mo > 12 ||
      d < 1 || d > 31 || h < 0 || h > 23 || mi < 0 || mi > 59 || s < 0 || s > 60)
    throw ParseError("invalid ISO-8601 timestamp '" + text + "'");
  return days_from_civil(y, static_cast<unsigned>(mo), static_cast<unsigned>(d)) * 86400 +
         h * 3600 + mi * 60 + s;
}

inline std::string format_timestamp(std::int64_t t) {
  std::int64_t days = t / 86400, rem = t % 86400;
  if (rem < 0) {
    rem += 86400;
    --days;
  }
  int y;
  unsigned m, d;
  civil_from_days(days, y, m, d);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u %02d:%02d:%02d", y, m, d,
                static_cast<int>(rem / 3600), static_cast<int>(rem % 3600 / 60),
                static_cast<int>(rem % 60));
  return buf;
}

// ---------------------------------------------------------------------------
// Series tables
// ---------------------------------------------------------------------------

/// A C-variate series with its native observation mask.
struct SeriesTable {
  Matrix values;     // T x C
  Mask native_mask;  // T x C, true = observed
  std::vector<std::int64_t> timestamps;
  std::vector<std::string> feature_names;
  /// Row offset of this table inside the series it was cut from.
  long origin = 0;

  long num_steps() const { return static_cast<long>(values.rows()); }
  int num_features() const { return static_cast<int>(values.cols()); }

  SeriesTable slice(long begin, long end) const {
    SeriesTable out;
    out.values = values.middleRows(begin, end - begin);
    out.native_mask = native_mask.middleRows(begin, end - begin);
    out.timestamps.assign(timestamps.begin() + begin, timestamps.begin() + end);
    out.feature_names = feature_names;
    out.origin = origin + begin;
    return out;
  }
};

struct LoadOptions {
  char delimiter = ',';
  /// Cell contents treated as missing in addition to the empty string.
  std::vector<std::string> missing_tokens = {"NaN", "nan", "NA", "null"};
};

namespace detail {

inline std::vector<std::string> split_line(const std::string& line, char delim) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == delim) {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Checks the timestamp invariant: strictly increasing with a constant step.
inline void validate_timestamps(const std::vector<std::int64_t>& ts) {
  for (std::size_t i = 1; i < ts.size(); ++i) {
    if (ts[i] <= ts[i - 1])
      throw ValidationError("timestamps not strictly increasing at row " + std::to_string(i + 1) +
                            " (" + format_timestamp(ts[i]) + ")");
    if (i >= 2 && ts[i] - ts[i - 1] != ts[1] - ts[0])
      throw ValidationError("irregular sampling interval at row " + std::to_string(i + 1));
  }
}

/// Reads the CSV layout: header `timestamp,<feature names...>`, one row per
/// step, missing cells empty or a sentinel token.
inline SeriesTable read_series(std::istream& in, const LoadOptions& opts = {}) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("line 1: empty input");
  const auto header = detail::split_line(line, opts.delimiter);
  if (header.size() < 2) throw ParseError("line 1: need a timestamp column and >= 1 feature");
  const std::size_t num_features = header.size() - 1;

  std::vector<double> vals;
  std::vector<char> obs;
  SeriesTable table;
  for (std::size_t j = 1; j < header.size(); ++j)
    table.feature_names.push_back(detail::trim(header[j]));
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_line(line, opts.delimiter);
    if (cells.size() != header.size())
      throw ParseError("line " + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " columns, found " +
                       std::to_string(cells.size()));
    try {
      table.timestamps.push_back(parse_timestamp(detail::trim(cells[0])));
    } catch (const ParseError& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    for (std::size_t j = 1; j < cells.size(); ++j) {
      const std::string cell = detail::trim(cells[j]);
      const bool missing =
          cell.empty() || std::find(opts.missing_tokens.begin(), opts.missing_tokens.end(),
                                    cell) != opts.missing_tokens.end();
      double v = 0.0;
      if (!missing) {
        std::size_t used = 0;
        try {
          v = std::stod(cell, &used);
        } catch (const std::exception&) {
          used = 0;
        }
        if (used != cell.size() || !std::isfinite(v))
          throw ParseError("line " + std::to_string(line_no) + ": bad number '" + cell + "'");
      }
      vals.push_back(v);
      obs.push_back(missing ? 0 : 1);
    }
  }
  const auto rows = static_cast<Eigen::Index>(table.timestamps.size());
  const auto cols = static_cast<Eigen::Index>(num_features);
  table.values.resize(rows, cols);
  table.native_mask.resize(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) {
      table.values(i, j) = vals[static_cast<std::size_t>(i * cols + j)];
      table.native_mask(i, j) = obs[static_cast<std::size_t>(i * cols + j)] != 0;
    }
  validate_timestamps(table.timestamps);
  return table;
}

inline SeriesTable load_series(const std::string& path, const LoadOptions& opts = {}) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open series file '" + path + "'");
  return read_series(in, opts);
}

inline void write_series(std::ostream& out, const SeriesTable& table) {
  out << "timestamp";
  for (const auto& n : table.feature_names) out << ',' << n;
  out << '\n';
  char buf[64];
  for (long i = 0; i < table.num_steps(); ++i) {
    out << format_timestamp(table.timestamps[static_cast<std::size_t>(i)]);
    for (int j = 0; j < table.num_features(); ++j) {
      out << ',';
      if (table.native_mask(i, j)) {
        std::snprintf(buf, sizeof buf, "%.17g", table.values(i, j));
        out << buf;
      }
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

/// Half-open timestamp range [begin, end).
struct DateRange {
  std::int64_t begin = 0;
  std::int64_t end = 0;
};

struct SplitSpec {
  enum class Kind { kFraction, kDates } kind = Kind::kFraction;
  double train = 0.7, val = 0.1, test = 0.2;
  DateRange train_range, val_range, test_range;

  static SplitSpec fractions(double train, double val, double test) {
    SplitSpec s;
    s.train = train;
    s.val = val;
    s.test = test;
    return s;
  }

  static SplitSpec dates(DateRange train, DateRange val, DateRange test) {
    SplitSpec s;
    s.kind = Kind::kDates;
    s.train_range = train;
    s.val_range = val;
    s.test_range = test;
    return s;
  }
};

struct Splits {
  SeriesTable train, val, test;
};

inline Splits split_series(const SeriesTable& series, const SplitSpec& spec) {
  const long n = series.num_steps();
  if (spec.kind == SplitSpec::Kind::kFraction) {
    if (spec.train < 0 || spec.val < 0 || spec.test < 0 ||
        std::abs(spec.train + spec.val + spec.test - 1.0) > 1e-9)
      throw ConfigError("split fractions must be non-negative and sum to 1");
    const long n_train = static_cast<long>(std::floor(n * spec.train + 1e-9));
    const long n_val = static_cast<long>(std::floor(n * spec.val + 1e-9));
    return {series.slice(0, n_train), series.slice(n_train, n_train + n_val),
            series.slice(n_train + n_val, n)};
  }
  const DateRange ranges[3] = {spec.train_range, spec.val_range, spec.test_range};
  for (const auto& r : ranges)
    if (r.end <= r.begin) throw ConfigError("split date range is empty or reversed");
  for (int a = 0; a < 3; ++a)
    for (int b = a + 1; b < 3; ++b)
      if (ranges[a].begin < ranges[b].end && ranges[b].begin < ranges[a].end)
        throw ConfigError("split date ranges overlap");
  auto cut = [&](const DateRange& r) {
    const auto lo = std::lower_bound(series.timestamps.begin(), series.timestamps.end(), r.begin);
    const auto hi = std::lower_bound(series.timestamps.begin(), series.timestamps.end(), r.end);
    return series.slice(lo - series.timestamps.begin(), hi - series.timestamps.begin());
  };
  return {cut(spec.train_range), cut(spec.val_range), cut(spec.test_range)};
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Per-feature z-score statistics over observed training cells.
struct NormStats {
  static constexpr double kStdFloor = 1e-8;
  Vector mean;
  Vector std;

  Matrix apply(const Matrix& x) const {
    return ((x.rowwise() - mean.transpose()).array().rowwise() / std.transpose().array())
        .matrix();
  }
  Matrix invert(const Matrix& x) const {
    return ((x.array().rowwise() * std.transpose().array()).matrix().rowwise() +
            mean.transpose());
  }
  double invert_cell(double v, int feature) const { return v * std(feature) + mean(feature); }
};

inline NormStats fit_normalizer(const SeriesTable& train) {
  const int c = train.num_features();
  NormStats s;
  s.mean = Vector::Zero(c);
  s.std = Vector::Zero(c);
  for (int j = 0; j < c; ++j) {
    double sum = 0.0;
    long count = 0;
    for (long i = 0; i < train.num_steps(); ++i)
      if (train.native_mask(i, j)) {
        sum += train.values(i, j);
        ++count;
      }
    if (count == 0)
      throw ValidationError("feature '" +
                            (j < static_cast<int>(train.feature_names.size())
                                 ? train.feature_names[static_cast<std::size_t>(j)]
                                 : std::to_string(j)) +
                            "' has no observed training cells");
    const double mean = sum / static_cast<double>(count);
    double ss = 0.0;
    for (long i = 0; i < train.num_steps(); ++i)
      if (train.native_mask(i, j)) ss += (train.values(i, j) - mean) * (train.values(i, j) - mean);
    s.mean(j) = mean;
    s.std(j) = std::max(std::sqrt(ss / static_cast<double>(count)), NormStats::kStdFloor);
  }
  return s;
}

/// Copy of the table in normalized units; unobserved cells are zeroed.
inline SeriesTable normalize(const SeriesTable& table, const NormStats& stats) {
  SeriesTable out = table;
  out.values = stats.apply(table.values).cwiseProduct(to_real(table.native_mask));
  return out;
}

// ---------------------------------------------------------------------------
// Windows
// ---------------------------------------------------------------------------

struct Window {
  Matrix values;   // L x C
  Mask obs_mask;   // L x C
  Mask eval_mask;  // L x C, artificially hidden targets (subset of obs_mask)
  long start_index = 0;

  long length() const { return static_cast<long>(values.rows()); }
  int num_features() const { return static_cast<int>(values.cols()); }
  /// Cells usable as conditioning: observed and not held out.
  Mask cond_mask() const { return obs_mask && !eval_mask; }
};

inline std::vector<Window> make_windows(const SeriesTable& series, int length,
                                        int stride = 0) {
  if (length < 2) throw ConfigError("window length must be >= 2");
  if (stride <= 0) stride = length;
  std::vector<Window> out;
  if (series.num_steps() < length) {
    warn("series of " + std::to_string(series.num_steps()) + " steps is shorter than window " +
         std::to_string(length) + "; no windows produced");
    return out;
  }
  for (long s = 0; s + length <= series.num_steps(); s += stride) {
    Window w;
    w.values = series.values.middleRows(s, length);
    w.obs_mask = series.native_mask.middleRows(s, length);
    w.eval_mask = Mask::Constant(length, series.num_features(), false);
    w.start_index = series.origin + s;
    out.push_back(std::move(w));
  }
  return out;
}

/// Evaluation missing-pattern parameters.
struct MissingPattern {
  enum class Kind { kPoint, kBlock } kind = Kind::kPoint;
  double point_ratio = 0.2;
  double block_base_ratio = 0.05;
  double block_prob = 0.0015;

  void validate() const {
    auto check = [](double v, const char* key) {
      if (!(v >= 0.0 && v <= 1.0))
        throw ConfigError(std::string(key) + " must lie in [0, 1]");
    };
    check(point_ratio, "missing.point_ratio");
    check(block_base_ratio, "missing.block_base_ratio");
    check(block_prob, "missing.block_prob");
  }
};

inline MissingPattern::Kind parse_missing_kind(const std::string& s) {
  if (s == "point") return MissingPattern::Kind::kPoint;
  if (s == "block") return MissingPattern::Kind::kBlock;
  throw ConfigError("missing pattern must be point or block, got '" + s + "'");
}

inline std::string to_string(MissingPattern::Kind k) {
  return k == MissingPattern::Kind::kPoint ? "point" : "block";
}

/// Marks evaluation targets. Each window draws from its own stream derived
/// from (seed, start_index), so results do not depend on how the list is
/// partitioned. Blocks run forward along one feature and stop at the window
/// edge.
inline void simulate_missing_window(Window& w, const MissingPattern& p, std::uint64_t seed) {
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(w.start_index)));
  const long len = w.length();
  const int c = w.num_features();
  w.eval_mask.setConstant(false);
  const double base = p.kind == MissingPattern::Kind::kPoint ? p.point_ratio : p.block_base_ratio;
  for (int j = 0; j < c; ++j)
    for (long i = 0; i < len; ++i)
      if (bernoulli(rng, base)) w.eval_mask(i, j) = true;
  if (p.kind == MissingPattern::Kind::kBlock) {
    const int min_len = static_cast<int>(len / 2), max_len = static_cast<int>(2 * len);
    for (int j = 0; j < c; ++j)
      for (long i = 0; i < len; ++i)
        if (bernoulli(rng, p.block_prob)) {
          const long block = uniform_int(rng, min_len, max_len);
          for (long t = i; t < std::min(len, i + block); ++t) w.eval_mask(t, j) = true;
        }
  }
  w.eval_mask = w.eval_mask && w.obs_mask;
}

inline std::vector<Window> simulate_missing(std::vector<Window> windows, const MissingPattern& p,
                                            std::uint64_t seed) {
  p.validate();
  for (auto& w : windows) simulate_missing_window(w, p, seed);
  return windows;
}

struct WindowPair {
  Window sampled;
  Window context;
  bool has_context = false;
};

inline std::vector<WindowPair> pair_with_context(const std::vector<Window>& windows) {
  std::vector<WindowPair> out;
  out.reserve(windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    WindowPair p;
    p.sampled = windows[i];
    if (i + 1 < windows.size() &&
        windows[i + 1].start_index == windows[i].start_index + windows[i].length()) {
      p.context = windows[i + 1];
      p.has_context = true;
    }
    out.push_back(std::move(p));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Frozen evaluation masks
// ---------------------------------------------------------------------------

inline std::string mask_sidecar_name(const std::string& split, const std::string& pattern,
                                     std::uint64_t seed) {
  return split + "." + pattern + "." + std::to_string(seed) + ".mask";
}

/// CSV with header `window_start,t,<features...>` and one 0/1 row per step.
inline void write_mask_sidecar(std::ostream& out, const std::vector<Window>& windows,
                               const std::vector<std::string>& feature_names) {
  out << "window_start,t";
  for (const auto& n : feature_names) out << ',' << n;
  out << '\n';
  for (const auto& w : windows)
    for (long t = 0; t < w.length(); ++t) {
      out << w.start_index << ',' << t;
      for (int j = 0; j < w.num_features(); ++j) out << ',' << (w.eval_mask(t, j) ? 1 : 0);
      out << '\n';
    }
}

inline std::map<long, Mask> read_mask_sidecar(std::istream& in, int window_length) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("mask sidecar: empty file");
  const auto header = detail::split_line(line, ',');
  if (header.size() < 3) throw ParseError("mask sidecar: bad header");
  const auto c = static_cast<Eigen::Index>(header.size() - 2);
  std::map<long, Mask> out;
  long line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_line(line, ',');
    if (cells.size() != header.size())
      throw ParseError("mask sidecar line " + std::to_string(line_no) + ": column count mismatch");
    const long start = std::stol(cells[0]);
    const long t = std::stol(cells[1]);
    if (t < 0 || t >= window_length)
      throw ParseError("mask sidecar line " + std::to_string(line_no) + ": t out of range");
    auto it = out.find(start);
    if (it == out.end()) it = out.emplace(start, Mask::Constant(window_length, c, false)).first;
    for (Eigen::Index j = 0; j < c; ++j)
      it->second(t, j) = cells[static_cast<std::size_t>(j + 2)] == "1";
  }
  return out;
}

/// Installs frozen eval masks; fails if a window has no entry.
inline void apply_frozen_masks(std::vector<Window>& windows, const std::map<long, Mask>& masks) {
  for (auto& w : windows) {
    const auto it = masks.find(w.start_index);
    if (it == masks.end())
      throw ValidationError("no frozen mask for window starting at " +
                            std::to_string(w.start_index));
    if (it->second.rows() != w.length() || it->second.cols() != w.num_features())
      throw ValidationError("frozen mask shape mismatch at window " +
                            std::to_string(w.start_index));
    w.eval_mask = it->second && w.obs_mask;
  }
}

}  // namespace mtsci

#endif  // MTSCI_DATASET_HPP_
