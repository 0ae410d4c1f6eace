#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "lcsurv/error.hpp"
#include "lcsurv/rng.hpp"

namespace lcsurv {

struct SurvivalRecord {
  std::string id;
  double time = 0.0;  // follow-up, >= 0
  int event = 0;      // 1 = death observed, 0 = censored
  std::vector<double> x;  // survival-model covariates
  std::vector<double> z;  // class-membership covariates
};

/// Immutable-by-convention collection of records sharing one covariate schema.
struct Dataset {
  std::vector<SurvivalRecord> records;
  std::vector<std::string> x_names;
  std::vector<std::string> z_names;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
  std::size_t dim_x() const { return x_names.size(); }
  std::size_t dim_z() const { return z_names.size(); }

  std::size_t n_events() const {
    return static_cast<std::size_t>(std::count_if(
        records.begin(), records.end(), [](const SurvivalRecord& r) { return r.event == 1; }));
  }

  std::vector<double> times() const {
    std::vector<double> t(records.size());
    std::transform(records.begin(), records.end(), t.begin(),
                   [](const SurvivalRecord& r) { return r.time; });
    return t;
  }

  std::vector<int> events() const {
    std::vector<int> e(records.size());
    std::transform(records.begin(), records.end(), e.begin(),
                   [](const SurvivalRecord& r) { return r.event; });
    return e;
  }

  /// Records at the given indices, in that order (repeats allowed).
  Dataset subset(const std::vector<std::size_t>& idx) const {
    Dataset out{{}, x_names, z_names};
    out.records.reserve(idx.size());
    for (auto i : idx) out.records.push_back(records.at(i));
    return out;
  }
};

/// Column-role mapping for load_csv. An empty `x` means "every column that is
/// not time, event or id".
struct CsvSchema {
  std::string time_col = "time";
  std::string event_col = "event";
  std::string id_col = "id";  // optional; row number used when empty or absent
  std::vector<std::string> x;
  std::vector<std::string> z;
  bool z_from_x = false;  // empty z means "same columns as x" instead of "none"
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  bool quoted = false;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i < line.size() && line[i] == '"') quoted = !quoted;
    if (i == line.size() || (line[i] == ',' && !quoted)) {
      out.emplace_back(trim(line.substr(start, i - start)));
      start = i + 1;
    }
  }
  return out;
}

/// Locale-independent strict parse; rejects empty cells, NA and trailing junk.
inline bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto* first = s.data();
  const auto* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc{} && ptr == last && std::isfinite(out);
}

inline std::size_t find_column(const std::vector<std::string>& header, const std::string& name) {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw Error(ErrorKind::MissingColumn, "column '" + name + "' not found");
  return static_cast<std::size_t>(it - header.begin());
}

}  // namespace detail

inline Dataset parse_csv(std::istream& in, const CsvSchema& schema) {
  std::string line;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty() || line.front() == '#') continue;
    header = detail::split_csv_line(line);
    break;
  }
  if (header.empty()) throw Error(ErrorKind::EmptyFile, "no header row");

  const auto time_idx = detail::find_column(header, schema.time_col);
  const auto event_idx = detail::find_column(header, schema.event_col);
  std::ptrdiff_t id_idx = -1;
  if (!schema.id_col.empty()) {
    auto it = std::find(header.begin(), header.end(), schema.id_col);
    if (it != header.end()) id_idx = it - header.begin();
  }

  std::vector<std::string> x_names = schema.x;
  if (x_names.empty()) {
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (c == time_idx || c == event_idx || static_cast<std::ptrdiff_t>(c) == id_idx) continue;
      x_names.push_back(header[c]);
    }
  }
  const std::vector<std::string> z_names = schema.z.empty() && schema.z_from_x ? x_names : schema.z;
  if (x_names.empty() && z_names.empty())
    throw Error(ErrorKind::MissingColumn, "no covariate columns");

  std::vector<std::size_t> x_idx, z_idx;
  for (const auto& n : x_names) x_idx.push_back(detail::find_column(header, n));
  for (const auto& n : z_names) z_idx.push_back(detail::find_column(header, n));

  Dataset ds{{}, x_names, z_names};
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (detail::trim(line).empty() || line.front() == '#') continue;
    ++row;
    const auto cells = detail::split_csv_line(line);
    auto cell_value = [&](std::size_t col) {
      double v = 0.0;
      if (col >= cells.size() || !detail::parse_double(cells[col], v)) {
        throw Error(ErrorKind::NonNumericCell,
                    "row " + std::to_string(row) + ", column '" + header[col] + "': '" +
                        (col < cells.size() ? cells[col] : std::string{}) + "'");
      }
      return v;
    };
    SurvivalRecord rec;
    rec.id = id_idx >= 0 && static_cast<std::size_t>(id_idx) < cells.size()
                 ? cells[static_cast<std::size_t>(id_idx)]
                 : std::to_string(row);
    rec.time = cell_value(time_idx);
    if (rec.time < 0.0)
      throw Error(ErrorKind::NegativeTime, "row " + std::to_string(row) + ": time " + cells[time_idx]);
    const double ev = cell_value(event_idx);
    if (ev != 0.0 && ev != 1.0)
      throw Error(ErrorKind::EventNotBinary,
                  "row " + std::to_string(row) + ": event '" + cells[event_idx] + "'");
    rec.event = static_cast<int>(ev);
    for (auto c : x_idx) rec.x.push_back(cell_value(c));
    for (auto c : z_idx) rec.z.push_back(cell_value(c));
    ds.records.push_back(std::move(rec));
  }
  if (ds.records.empty()) throw Error(ErrorKind::EmptyFile, "header but no data rows");
  if (ds.n_events() == 0) throw Error(ErrorKind::NoEvents, "dataset has no events");
  return ds;
}

inline Dataset load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::EmptyFile, "cannot open '" + path + "'");
  return parse_csv(in, schema);
}

/// Writes id,time,event followed by the union of x and z columns. Values are
/// printed with 17 significant digits so that reloading is exact.
inline void write_csv(std::ostream& out, const Dataset& ds) {
  std::vector<std::string> cols = ds.x_names;
  std::vector<std::pair<bool, std::size_t>> source;  // (is_z, index)
  for (std::size_t i = 0; i < ds.x_names.size(); ++i) source.emplace_back(false, i);
  for (std::size_t i = 0; i < ds.z_names.size(); ++i) {
    if (std::find(cols.begin(), cols.end(), ds.z_names[i]) != cols.end()) continue;
    cols.push_back(ds.z_names[i]);
    source.emplace_back(true, i);
  }
  out << "#schema_version=1\nid,time,event";
  for (const auto& c : cols) out << ',' << c;
  out << '\n';
  out << std::setprecision(17);
  for (const auto& r : ds.records) {
    out << r.id << ',' << r.time << ',' << r.event;
    for (auto [is_z, i] : source) out << ',' << (is_z ? r.z[i] : r.x[i]);
    out << '\n';
  }
}

/// Type-7 sample quantile (linear interpolation between order statistics).
inline double quantile(std::vector<double> v, double p) {
  if (v.empty()) throw Error(ErrorKind::InvalidArgument, "quantile of empty sample");
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct VariableSummary {
  std::string name;
  bool binary = false;
  double mean = 0.0, sd = 0.0;            // continuous
  double median = 0.0, q1 = 0.0, q3 = 0.0;  // continuous
  std::size_t count = 0;                  // binary: number of ones
  double percent = 0.0;                   // binary
};

struct DatasetSummary {
  std::size_t n = 0;
  double time_median = 0.0, time_q1 = 0.0, time_q3 = 0.0;
  std::size_t deaths = 0;
  double death_percent = 0.0;
  std::vector<VariableSummary> variables;
};

inline VariableSummary summarize_variable(std::string name, const std::vector<double>& v) {
  VariableSummary s;
  s.name = std::move(name);
  s.binary = std::all_of(v.begin(), v.end(), [](double a) { return a == 0.0 || a == 1.0; });
  const double n = static_cast<double>(v.size());
  if (s.binary) {
    s.count = static_cast<std::size_t>(std::count(v.begin(), v.end(), 1.0));
    s.percent = 100.0 * static_cast<double>(s.count) / n;
  }
  s.mean = std::accumulate(v.begin(), v.end(), 0.0) / n;
  double ss = 0.0;
  for (double a : v) ss += (a - s.mean) * (a - s.mean);
  s.sd = v.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
  s.median = quantile(v, 0.5);
  s.q1 = quantile(v, 0.25);
  s.q3 = quantile(v, 0.75);
  return s;
}

/// Descriptive table: median (IQR) of follow-up, deaths n (%), and per
/// covariate either mean (SD) / median (IQR) or n (%) for 0/1 columns.
inline DatasetSummary summarize(const Dataset& ds) {
  if (ds.empty()) throw Error(ErrorKind::InvalidArgument, "summarize: empty dataset");
  DatasetSummary out;
  out.n = ds.size();
  const auto t = ds.times();
  out.time_median = quantile(t, 0.5);
  out.time_q1 = quantile(t, 0.25);
  out.time_q3 = quantile(t, 0.75);
  out.deaths = ds.n_events();
  out.death_percent = 100.0 * static_cast<double>(out.deaths) / static_cast<double>(out.n);

  auto column = [&](bool is_z, std::size_t j) {
    std::vector<double> v(ds.size());
    for (std::size_t i = 0; i < ds.size(); ++i) v[i] = is_z ? ds.records[i].z[j] : ds.records[i].x[j];
    return v;
  };
  for (std::size_t j = 0; j < ds.dim_x(); ++j)
    out.variables.push_back(summarize_variable(ds.x_names[j], column(false, j)));
  for (std::size_t j = 0; j < ds.dim_z(); ++j) {
    if (std::find(ds.x_names.begin(), ds.x_names.end(), ds.z_names[j]) != ds.x_names.end()) continue;
    out.variables.push_back(summarize_variable(ds.z_names[j], column(true, j)));
  }
  return out;
}

struct FoldAssignment {
  std::size_t k = 0;
  std::vector<std::size_t> fold_of;  // record index -> fold in [0, k)

  std::vector<std::size_t> members(std::size_t fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < fold_of.size(); ++i)
      if (fold_of[i] == fold) out.push_back(i);
    return out;
  }
  std::vector<std::size_t> complement(std::size_t fold) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < fold_of.size(); ++i)
      if (fold_of[i] != fold) out.push_back(i);
    return out;
  }
  std::vector<std::size_t> sizes() const {
    std::vector<std::size_t> s(k, 0);
    for (auto f : fold_of) ++s[f];
    return s;
  }
};

/// Seeded Fisher-Yates permutation of 0..n-1.
inline std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

/// Random permutation dealt round-robin into k folds.
inline FoldAssignment kfold_split(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw Error(ErrorKind::InvalidArgument, "k must be >= 2");
  if (k > n) throw Error(ErrorKind::KTooLarge, "k=" + std::to_string(k) + " exceeds n=" + std::to_string(n));
  const auto perm = permutation(n, derive(seed, "kfold", 0));
  FoldAssignment fa{k, std::vector<std::size_t>(n)};
  for (std::size_t i = 0; i < n; ++i) fa.fold_of[perm[i]] = i % k;
  return fa;
}

inline FoldAssignment kfold_split(const Dataset& ds, std::size_t k, std::uint64_t seed) {
  return kfold_split(ds.size(), k, seed);
}

inline std::vector<std::size_t> bootstrap_indices(std::size_t n, std::uint64_t seed) {
  Rng rng(derive(seed, "bootstrap", 0));
  std::vector<std::size_t> idx(n);
  for (auto& i : idx) i = static_cast<std::size_t>(rng.below(n));
  return idx;
}

/// n records drawn with replacement.
inline Dataset bootstrap_sample(const Dataset& ds, std::uint64_t seed) {
  if (ds.empty()) throw Error(ErrorKind::InvalidArgument, "bootstrap of empty dataset");
  return ds.subset(bootstrap_indices(ds.size(), seed));
}

}  // namespace lcsurv
