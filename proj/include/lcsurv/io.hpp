#pragma once

// JSON and CSV serialization for configs, scenarios, fits and study outputs.
// Requires nlohmann/json (vendor/json.hpp) on the include path.

#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "lcsurv/dataset.hpp"
#include "lcsurv/evaluation.hpp"
#include "lcsurv/mixture.hpp"
#include "lcsurv/parallel.hpp"
#include "lcsurv/selection.hpp"
#include "lcsurv/simulation.hpp"

namespace lcsurv::io {

using json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

/// Shortest round-trip text for a double.
inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_schema_line(std::ostream& out) { out << "#schema_version=" << kSchemaVersion << '\n'; }

inline json read_json_file(const std::string& path, ErrorKind missing_kind = ErrorKind::InvalidArgument) {
  std::ifstream in(path);
  if (!in) throw Error(missing_kind, "cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(missing_kind, path + ": " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::InvalidArgument, "cannot write " + path);
  out << text;
}

namespace detail {

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidArgument, std::string("bad value for '") + key + "': " + e.what());
  }
}

inline void reject_unknown_keys(const json& j, const std::vector<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorKind::InvalidArgument, where + " must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end())
      throw Error(ErrorKind::InvalidArgument, "unknown key '" + k + "' in " + where);
}

}  // namespace detail

// ---------------------------------------------------------------- scenario

inline json scenario_to_json(const SimulationScenario& s) {
  json j;
  j["variables"] = s.path.variables;
  j["class_variable"] = s.class_variable;
  j["survival_variable"] = s.survival_variable;
  j["edges"] = json::array();
  for (const auto& e : s.path.edges) j["edges"].push_back({{"from", e.from}, {"to", e.to}, {"coef", e.coef}});
  j["covariances"] = json::array();
  for (const auto& c : s.path.covariances) j["covariances"].push_back({{"a", c.a}, {"b", c.b}, {"value", c.value}});
  j["residual_sd"] = json::object();
  for (const auto& [k, v] : s.path.residual_sd) j["residual_sd"][k] = v;
  j["n"] = s.n;
  j["class_split"] = s.class_split;
  j["weibull"] = {{"eta", s.weibull_eta}, {"lambda", s.weibull_lambda}};
  j["censor_rate"] = s.censor_rate;
  j["replicates"] = s.replicates;
  j["base_seed"] = s.base_seed;
  j["horizon"] = s.horizon;
  return j;
}

/// Missing keys keep the default-scenario values.
inline SimulationScenario scenario_from_json(const json& j) {
  using detail::get_or;
  detail::reject_unknown_keys(j,
                              {"schema_version", "variables", "class_variable", "survival_variable", "edges",
                               "covariances", "residual_sd", "n", "class_split", "weibull", "censor_rate", "replicates",
                               "base_seed", "horizon"},
                              "scenario");
  SimulationScenario s;
  try {
    if (j.contains("variables")) {
      s.path.variables = j.at("variables").get<std::vector<std::string>>();
      s.path.edges.clear();
      s.path.covariances.clear();
      s.path.residual_sd.clear();
    }
    if (j.contains("edges")) {
      s.path.edges.clear();
      for (const auto& e : j.at("edges"))
        s.path.edges.push_back({e.at("from").get<std::string>(), e.at("to").get<std::string>(), e.at("coef").get<double>()});
    }
    if (j.contains("covariances")) {
      s.path.covariances.clear();
      for (const auto& c : j.at("covariances"))
        s.path.covariances.push_back({c.at("a").get<std::string>(), c.at("b").get<std::string>(), c.at("value").get<double>()});
    }
    if (j.contains("residual_sd")) {
      s.path.residual_sd.clear();
      for (const auto& [k, v] : j.at("residual_sd").items()) s.path.residual_sd[k] = v.get<double>();
    }
    if (j.contains("weibull")) {
      const auto& w = j.at("weibull");
      s.weibull_eta = get_or(w, "eta", s.weibull_eta);
      s.weibull_lambda = get_or(w, "lambda", s.weibull_lambda);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::InvalidArgument, std::string("malformed scenario: ") + e.what());
  }
  s.class_variable = get_or(j, "class_variable", s.class_variable);
  s.survival_variable = get_or(j, "survival_variable", s.survival_variable);
  s.n = get_or(j, "n", s.n);
  s.class_split = get_or(j, "class_split", s.class_split);
  s.censor_rate = get_or(j, "censor_rate", s.censor_rate);
  s.replicates = get_or(j, "replicates", s.replicates);
  s.base_seed = get_or(j, "base_seed", s.base_seed);
  s.horizon = get_or(j, "horizon", s.horizon);
  for (const auto& [k, v] : s.path.residual_sd)
    if (!(v > 0.0)) throw Error(ErrorKind::InvalidArgument, "residual_sd for " + k + " must be positive");
  s.validate();
  return s;
}

inline SimulationScenario load_scenario(const std::string& path) { return scenario_from_json(read_json_file(path)); }

// ---------------------------------------------------------------- run config

struct RunConfig {
  std::string data;
  CsvSchema schema;
  std::size_t g = 1;
  std::size_t g_min = 1;
  std::optional<std::size_t> g_max;
  std::size_t n_starts = 30;
  std::uint64_t seed = 1;
  double tol = 1e-8;
  int max_iter = 500;
  double horizon = 0.0;  // <= 0: median observed follow-up
  std::size_t k = 10;
  std::size_t bootstrap = 30;
  unsigned threads = default_threads();
  std::string out = ".";
  std::string scenario;
  std::size_t replicates = 0;  // simulate: 0 keeps the scenario's count

  EmOptions em() const {
    EmOptions o;
    o.n_starts = n_starts;
    o.base_seed = seed;
    o.tol = tol;
    o.max_iter = max_iter;
    o.threads = threads;
    return o;
  }

  void validate() const {
    if (g < 1) throw Error(ErrorKind::InvalidArgument, "g must be >= 1");
    if (g_max && *g_max < g_min) throw Error(ErrorKind::InvalidArgument, "g-max must be >= g-min");
    if (n_starts < 1) throw Error(ErrorKind::InvalidArgument, "starts must be >= 1");
    if (!(tol > 0.0) || max_iter < 1) throw Error(ErrorKind::InvalidArgument, "tolerance and max_iter must be positive");
    if (threads < 1) throw Error(ErrorKind::InvalidArgument, "threads must be >= 1");
  }
};

/// Overlays the keys present in `j` onto `base`.
inline RunConfig config_from_json(const json& j, RunConfig base = {}) {
  using detail::get_or;
  detail::reject_unknown_keys(j,
                              {"schema_version", "data", "time", "event", "id", "x", "z", "g", "g_min", "g_max", "starts",
                               "seed", "tol", "max_iter", "horizon", "k", "bootstrap", "threads", "out", "scenario",
                               "replicates"},
                              "config");
  RunConfig c = std::move(base);
  c.data = get_or(j, "data", c.data);
  c.schema.time_col = get_or(j, "time", c.schema.time_col);
  c.schema.event_col = get_or(j, "event", c.schema.event_col);
  c.schema.id_col = get_or(j, "id", c.schema.id_col);
  c.schema.x = get_or(j, "x", c.schema.x);
  c.schema.z = get_or(j, "z", c.schema.z);
  c.g = get_or(j, "g", c.g);
  c.g_min = get_or(j, "g_min", c.g_min);
  if (j.contains("g_max")) c.g_max = get_or<std::size_t>(j, "g_max", 1);
  c.n_starts = get_or(j, "starts", c.n_starts);
  c.seed = get_or(j, "seed", c.seed);
  c.tol = get_or(j, "tol", c.tol);
  c.max_iter = get_or(j, "max_iter", c.max_iter);
  c.horizon = get_or(j, "horizon", c.horizon);
  c.k = get_or(j, "k", c.k);
  c.bootstrap = get_or(j, "bootstrap", c.bootstrap);
  c.threads = get_or(j, "threads", c.threads);
  c.out = get_or(j, "out", c.out);
  c.scenario = get_or(j, "scenario", c.scenario);
  c.replicates = get_or(j, "replicates", c.replicates);
  return c;
}

// ---------------------------------------------------------------- fit report

inline json statistics_json(const FitStatistics& s) {
  return {{"neg2ll", s.neg2ll}, {"n_params", s.n_params}, {"n", s.n},
          {"aic", s.aic},       {"bic", s.bic},           {"abic", s.abic}};
}

inline json summary_json(const DatasetSummary& s) {
  json j{{"n", s.n},
         {"deaths", s.deaths},
         {"death_percent", s.death_percent},
         {"time_median", s.time_median},
         {"time_q1", s.time_q1},
         {"time_q3", s.time_q3}};
  j["variables"] = json::array();
  for (const auto& v : s.variables) {
    if (v.binary)
      j["variables"].push_back({{"name", v.name}, {"type", "binary"}, {"count", v.count}, {"percent", v.percent}});
    else
      j["variables"].push_back({{"name", v.name},
                                {"type", "continuous"},
                                {"mean", v.mean},
                                {"sd", v.sd},
                                {"median", v.median},
                                {"q1", v.q1},
                                {"q3", v.q3}});
  }
  return j;
}

inline json roc_json(const RocResult& roc) {
  json pts = json::array();
  for (const auto& p : roc.points) pts.push_back({p.fpr, p.tpr});
  return {{"horizon", roc.horizon}, {"auc", roc.auc}, {"n_cases", roc.n_cases}, {"n_controls", roc.n_controls},
          {"points", pts}};
}

/// Full description of a latent-class fit on `ds`, optionally with the
/// apparent ROC at the evaluation horizon.
inline json fit_report(const LatentClassFit& fit, const Dataset& ds, const std::optional<RocResult>& roc = std::nullopt) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["g"] = fit.g;
  j["n"] = fit.n;
  j["x"] = ds.x_names;
  j["z"] = ds.z_names;
  j["loglik"] = fit.loglik;
  j["n_params"] = fit.n_params;
  j["fit_statistics"] = statistics_json(fit_statistics(fit.loglik, fit.n_params, fit.n));
  j["converged"] = fit.converged;
  j["iterations"] = fit.iterations;
  j["best_replicated"] = fit.best_replicated;
  if (!fit.best_replicated && fit.g > 1)
    j["warning"] = "best loglik was not replicated by a second start; increase the number of random starts";

  json mem;
  mem["reference_class"] = fit.g;
  mem["convention"] = "log(pi_i / pi_g) = gamma_i + z'delta_i; the last class is the reference with gamma = 0, delta = 0";
  mem["gamma"] = std::vector<double>(fit.membership.gamma.data(), fit.membership.gamma.data() + fit.membership.gamma.size());
  mem["delta"] = json::array();
  for (Eigen::Index i = 0; i < fit.membership.delta.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index c = 0; c < fit.membership.delta.cols(); ++c) row.push_back(fit.membership.delta(i, c));
    mem["delta"].push_back(row);
  }
  j["membership"] = mem;

  const auto pi = fit.pi_mean();
  const auto modal = fit.modal_class();
  j["classes"] = json::array();
  for (std::size_t c = 0; c < fit.g; ++c) {
    const auto& m = fit.class_models[c];
    json cls;
    cls["class"] = c + 1;
    cls["pi_mean"] = pi[c];
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < modal.size(); ++i)
      if (modal[i] == c) members.push_back(i);
    cls["modal_size"] = members.size();
    cls["modal_percent"] = modal.empty() ? 0.0 : 100.0 * static_cast<double>(members.size()) / static_cast<double>(modal.size());
    json beta = json::object();
    for (std::size_t b = 0; b < ds.x_names.size(); ++b) beta[ds.x_names[b]] = m.beta[static_cast<Eigen::Index>(b)];
    cls["beta"] = beta;
    cls["cox_converged"] = m.converged;
    if (!m.diagnostic.empty()) cls["cox_diagnostic"] = m.diagnostic;
    cls["baseline"] = {{"times", m.baseline.times}, {"increments", m.baseline.increments}};
    if (!members.empty()) cls["summary"] = summary_json(summarize(ds.subset(members)));
    j["classes"].push_back(cls);
  }

  j["starts_summary"] = json::array();
  for (const auto& s : fit.starts_summary) {
    json e{{"start", s.index}, {"seed", s.seed},           {"converged", s.converged}, {"failed", s.failed},
           {"iterations", s.iterations}, {"max_decrease", s.max_decrease}};
    e["loglik"] = std::isfinite(s.loglik) ? json(s.loglik) : json(nullptr);
    if (!s.diagnostic.empty()) e["diagnostic"] = s.diagnostic;
    j["starts_summary"].push_back(e);
  }
  j["sample"] = summary_json(summarize(ds));
  if (roc) j["roc"] = roc_json(*roc);
  return j;
}

// ---------------------------------------------------------------- CSV tables

inline void write_sweep_csv(std::ostream& out, const SweepResult& sweep) {
  write_schema_line(out);
  out << "g,neg2ll,n_params,aic,bic,abic,converged,best_replicated\n";
  for (const auto& r : sweep.rows) {
    const bool ok = r.diagnostic.empty() || r.converged;
    out << r.g << ',' << (ok ? fmt(r.stats.neg2ll) : "") << ',' << r.stats.n_params << ','
        << (ok ? fmt(r.stats.aic) : "") << ',' << (ok ? fmt(r.stats.bic) : "") << ','
        << (ok ? fmt(r.stats.abic) : "") << ',' << (r.converged ? 1 : 0) << ',' << (r.best_replicated ? 1 : 0) << '\n';
  }
}

inline json sweep_json(const SweepResult& sweep) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["rows"] = json::array();
  for (const auto& r : sweep.rows) {
    json row = statistics_json(r.stats);
    row["g"] = r.g;
    row["converged"] = r.converged;
    row["best_replicated"] = r.best_replicated;
    if (!r.diagnostic.empty()) row["diagnostic"] = r.diagnostic;
    j["rows"].push_back(row);
  }
  j["recommended_g"] = sweep.recommended_g ? json(*sweep.recommended_g) : json(nullptr);
  j["rule"] = "minimum BIC among converged fits; ties go to fewer classes";
  return j;
}

/// Successful replicates only; failures are listed in the summary JSON.
inline void write_validation_csv(std::ostream& out, const std::vector<ValidationSummary>& runs) {
  write_schema_line(out);
  out << "method,g,replicate,seed,auc,n_cases,n_controls\n";
  for (const auto& s : runs)
    for (const auto& o : s.outcomes)
      if (o.ok)
        out << to_string(s.method) << ',' << s.g << ',' << o.replicate << ',' << o.seed << ',' << fmt(o.auc) << ','
            << o.n_cases << ',' << o.n_controls << '\n';
}

inline json validation_json(const ValidationSummary& s) {
  json j{{"method", to_string(s.method)},
         {"g", s.g},
         {"horizon", s.horizon},
         {"replicates", s.replicates},
         {"mean", s.mean},
         {"sd", s.sd},
         {"ci_low", s.ci_low},
         {"ci_high", s.ci_high},
         {"pooled", s.pooled},
         {"auc_values", s.auc_values}};
  j["failures"] = json::array();
  for (const auto& o : s.outcomes)
    if (!o.ok) j["failures"].push_back({{"replicate", o.replicate}, {"seed", o.seed}, {"diagnostic", o.diagnostic}});
  return j;
}

inline void write_roc_csv(std::ostream& out, const std::vector<std::pair<std::string, RocResult>>& curves) {
  write_schema_line(out);
  out << "model,horizon,auc,fpr,tpr\n";
  for (const auto& [name, roc] : curves)
    for (const auto& p : roc.points)
      out << name << ',' << fmt(roc.horizon) << ',' << fmt(roc.auc) << ',' << fmt(p.fpr) << ',' << fmt(p.tpr) << '\n';
}

inline void write_study_csv(std::ostream& out, const StudyResult& study) {
  write_schema_line(out);
  out << "replicate,seed,ok,horizon,realized_censoring,auc_one_class,auc_two_class,bic_one_class,bic_two_class,"
         "class_recovery_auc,two_class_converged,two_class_replicated,diagnostic\n";
  for (const auto& r : study.rows) {
    std::string diag = r.diagnostic;
    std::replace(diag.begin(), diag.end(), ',', ';');
    std::replace(diag.begin(), diag.end(), '\n', ' ');
    out << r.replicate << ',' << r.seed << ',' << (r.ok ? 1 : 0) << ',' << fmt(r.horizon) << ','
        << fmt(r.realized_censoring) << ',' << fmt(r.auc_one_class) << ',' << fmt(r.auc_two_class) << ','
        << fmt(r.bic_one_class) << ',' << fmt(r.bic_two_class) << ',' << fmt(r.class_recovery_auc) << ','
        << (r.two_class_converged ? 1 : 0) << ',' << (r.two_class_replicated ? 1 : 0) << ',' << diag << '\n';
  }
}

inline json distribution_json(const DistributionSummary& d) {
  return {{"mean", d.mean}, {"sd", d.sd}, {"median", d.median}, {"q1", d.q1}, {"q3", d.q3}};
}

inline json study_json(const StudyResult& study, const SimulationScenario& scn) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["scenario"] = scenario_to_json(scn);
  j["replicates"] = study.rows.size();
  j["succeeded"] = study.succeeded;
  j["one_class"] = distribution_json(study.one_class);
  j["two_class"] = distribution_json(study.two_class);
  j["two_class_wins"] = study.two_class_wins;
  j["bic_prefers_two"] = study.bic_prefers_two;
  j["mean_class_recovery_auc"] = study.mean_class_recovery_auc;
  std::vector<double> one, two;
  for (const auto& r : study.rows)
    if (r.ok) {
      one.push_back(r.auc_one_class);
      two.push_back(r.auc_two_class);
    }
  j["auc_one_class"] = one;
  j["auc_two_class"] = two;
  return j;
}

inline void write_density_csv(std::ostream& out, const DensityCurves& d, const std::vector<std::string>& names) {
  write_schema_line(out);
  out << "#bandwidth";
  for (std::size_t k = 0; k < names.size(); ++k) out << ' ' << names[k] << '=' << fmt(d.bandwidth[k]);
  out << "\ngrid";
  for (const auto& n : names) out << ',' << n;
  out << '\n';
  for (std::size_t i = 0; i < d.grid.size(); ++i) {
    out << fmt(d.grid[i]);
    for (const auto& curve : d.density) out << ',' << fmt(curve[i]);
    out << '\n';
  }
}

// ---------------------------------------------------------------- errors

inline json error_json(const Error& e) {
  const auto cat = error_category(e.kind());
  return {{"error", std::string(to_string(e.kind()))},
          {"category", std::string(to_string(cat))},
          {"exit_code", exit_code(cat)},
          {"message", e.what()}};
}

}  // namespace lcsurv::io
