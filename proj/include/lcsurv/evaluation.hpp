#pragma once

// Discrimination at a horizon t*: cumulative cases (event observed by t*)
// against dynamic controls (still under observation after t*). Cases are
// weighted by 1 / G(T_i-) with G the Kaplan-Meier estimate of the censoring
// distribution; controls share the weight 1 / G(t*), which cancels. Score
// ties count one half. Without censoring this is the Mann-Whitney statistic.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lcsurv/coxph.hpp"
#include "lcsurv/dataset.hpp"
#include "lcsurv/error.hpp"
#include "lcsurv/mixture.hpp"
#include "lcsurv/parallel.hpp"

namespace lcsurv {

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocResult {
  double horizon = 0.0;
  std::vector<RocPoint> points;
  double auc = 0.5;
  std::size_t n_cases = 0;
  std::size_t n_controls = 0;
};

/// Predicted event probability by the horizon, 1 - S(t* | x).
inline double risk_score(const CoxFit& fit, const SurvivalRecord& rec, double horizon) {
  return 1.0 - predict_survival(fit, rec.x, horizon);
}

/// 1 - S(t* | x, z) under the mixture survival function.
inline double risk_score(const LatentClassFit& fit, const SurvivalRecord& rec, double horizon) {
  return 1.0 - predict_mixture_survival(fit, rec.x, rec.z, horizon);
}

template <class Model>
std::vector<double> risk_scores(const Model& fit, const Dataset& ds, double horizon) {
  std::vector<double> s(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) s[i] = risk_score(fit, ds.records[i], horizon);
  return s;
}

/// Kaplan-Meier survival of the censoring time evaluated just before each
/// requested time. Deaths tied with censorings are treated as occurring first.
inline std::vector<double> censoring_survival_before(std::span<const double> times, std::span<const int> events,
                                                     std::span<const double> at) {
  std::vector<std::size_t> order(times.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return times[a] < times[b]; });
  // steps (u, G(u)) at each distinct censoring time u
  std::vector<std::pair<double, double>> steps;
  double g = 1.0;
  std::size_t pos = 0;
  const std::size_t n = times.size();
  while (pos < n) {
    const double u = times[order[pos]];
    std::size_t end = pos;
    std::size_t censored = 0;
    for (; end < n && times[order[end]] == u; ++end)
      if (events[order[end]] == 0) ++censored;
    if (censored > 0) {
      // deaths at u have already left the risk set
      const double at_risk = static_cast<double>(n - end + censored);
      g *= 1.0 - static_cast<double>(censored) / at_risk;
      steps.emplace_back(u, g);
    }
    pos = end;
  }
  std::vector<double> out(at.size(), 1.0);
  for (std::size_t k = 0; k < at.size(); ++k) {
    // last step strictly before at[k]
    auto it = std::lower_bound(steps.begin(), steps.end(), at[k],
                               [](const std::pair<double, double>& s, double t) { return s.first < t; });
    out[k] = it == steps.begin() ? 1.0 : std::prev(it)->second;
  }
  return out;
}

inline RocResult time_dependent_auc(std::span<const double> scores, std::span<const double> times,
                                    std::span<const int> events, double horizon) {
  const std::size_t n = scores.size();
  if (times.size() != n || events.size() != n)
    throw Error(ErrorKind::InvalidArgument, "scores, times and events differ in length");
  std::vector<std::size_t> cases, controls;
  for (std::size_t i = 0; i < n; ++i) {
    if (times[i] <= horizon && events[i] == 1) cases.push_back(i);
    else if (times[i] > horizon) controls.push_back(i);
  }
  if (cases.empty()) throw Error(ErrorKind::NoCases, "no events at or before horizon " + std::to_string(horizon));
  if (controls.empty()) throw Error(ErrorKind::NoControls, "nobody under observation after horizon " + std::to_string(horizon));

  std::vector<double> case_times(cases.size());
  for (std::size_t k = 0; k < cases.size(); ++k) case_times[k] = times[cases[k]];
  const auto g_before = censoring_survival_before(times, events, case_times);
  std::vector<double> w(cases.size());
  for (std::size_t k = 0; k < cases.size(); ++k) w[k] = 1.0 / g_before[k];
  const double w_total = std::accumulate(w.begin(), w.end(), 0.0);

  RocResult roc;
  roc.horizon = horizon;
  roc.n_cases = cases.size();
  roc.n_controls = controls.size();

  std::vector<double> ctrl(controls.size());
  for (std::size_t k = 0; k < controls.size(); ++k) ctrl[k] = scores[controls[k]];
  std::sort(ctrl.begin(), ctrl.end());
  const double n_ctrl = static_cast<double>(ctrl.size());
  double concord = 0.0;
  for (std::size_t k = 0; k < cases.size(); ++k) {
    const double s = scores[cases[k]];
    const auto lo = std::lower_bound(ctrl.begin(), ctrl.end(), s);
    const auto hi = std::upper_bound(lo, ctrl.end(), s);
    concord += w[k] * (static_cast<double>(lo - ctrl.begin()) + 0.5 * static_cast<double>(hi - lo));
  }
  roc.auc = concord / (w_total * n_ctrl);

  // staircase over distinct thresholds, highest first
  std::vector<std::pair<double, double>> marks;  // (score, case weight or -1 for control)
  marks.reserve(cases.size() + controls.size());
  for (std::size_t k = 0; k < cases.size(); ++k) marks.emplace_back(scores[cases[k]], w[k]);
  for (double s : ctrl) marks.emplace_back(s, -1.0);
  std::sort(marks.begin(), marks.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  roc.points.push_back({0.0, 0.0});
  double tp = 0.0, fp = 0.0;
  for (std::size_t i = 0; i < marks.size();) {
    const double s = marks[i].first;
    for (; i < marks.size() && marks[i].first == s; ++i) {
      if (marks[i].second < 0.0) fp += 1.0;
      else tp += marks[i].second;
    }
    roc.points.push_back({fp / n_ctrl, tp / w_total});
  }
  roc.points.back() = {1.0, 1.0};
  return roc;
}

inline RocResult time_dependent_auc(std::span<const double> scores, const Dataset& ds, double horizon) {
  const auto t = ds.times();
  const auto e = ds.events();
  return time_dependent_auc(scores, t, e, horizon);
}

/// Trapezoidal area under a ROC staircase.
inline double trapezoid_area(const std::vector<RocPoint>& pts) {
  double a = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i)
    a += (pts[i].fpr - pts[i - 1].fpr) * 0.5 * (pts[i].tpr + pts[i - 1].tpr);
  return a;
}

/// Median observed follow-up, the default evaluation horizon.
inline double default_horizon(const Dataset& ds) { return quantile(ds.times(), 0.5); }

enum class ValidationMethod { KFold, Bootstrap };

inline const char* to_string(ValidationMethod m) { return m == ValidationMethod::KFold ? "kfold" : "bootstrap"; }

struct ReplicateOutcome {
  std::size_t replicate = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  double auc = 0.0;
  std::size_t n_cases = 0;
  std::size_t n_controls = 0;
  std::string diagnostic;
};

struct ValidationSummary {
  ValidationMethod method = ValidationMethod::KFold;
  std::size_t g = 1;
  double horizon = 0.0;
  std::size_t replicates = 0;   // == auc_values.size()
  std::vector<double> auc_values;
  double mean = 0.0;
  double sd = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  bool pooled = false;  // summary is a single AUC over pooled held-out scores
  std::vector<ReplicateOutcome> outcomes;  // every fold / replicate, including failures
};

/// mean +- 1.96 SD / sqrt(R).
inline void summarize_aucs(ValidationSummary& s) {
  const auto r = static_cast<double>(s.auc_values.size());
  s.replicates = s.auc_values.size();
  s.mean = std::accumulate(s.auc_values.begin(), s.auc_values.end(), 0.0) / r;
  double ss = 0.0;
  for (double a : s.auc_values) ss += (a - s.mean) * (a - s.mean);
  s.sd = s.auc_values.size() > 1 ? std::sqrt(ss / (r - 1.0)) : 0.0;
  const double half = 1.96 * s.sd / std::sqrt(r);
  s.ci_low = s.mean - half;
  s.ci_high = s.mean + half;
}

struct ValidationOptions {
  std::size_t g = 1;
  double horizon = 0.0;  // <= 0: median observed follow-up of the full data
  EmOptions em;          // em.threads is ignored; replicates are parallelized instead
  unsigned threads = 1;
};

namespace detail {

inline LatentClassFit fit_for_validation(const Dataset& train, const ValidationOptions& opt, std::uint64_t seed) {
  EmOptions em = opt.em;
  em.base_seed = seed;
  em.threads = 1;
  return fit_latent_class(train, opt.g, em);
}

}  // namespace detail

/// Train on k-1 folds, freeze the fit, score the held-out fold.
inline ValidationSummary cross_validate(const Dataset& ds, const FoldAssignment& folds, const ValidationOptions& opt,
                                        std::uint64_t seed) {
  if (folds.k < 2) throw Error(ErrorKind::InvalidArgument, "k must be >= 2");
  if (folds.fold_of.size() != ds.size()) throw Error(ErrorKind::InvalidArgument, "fold assignment size mismatch");
  ValidationSummary out;
  out.method = ValidationMethod::KFold;
  out.g = opt.g;
  out.horizon = opt.horizon > 0.0 ? opt.horizon : default_horizon(ds);
  out.outcomes.resize(folds.k);
  std::vector<std::vector<double>> held_scores(folds.k);
  std::vector<std::vector<std::size_t>> held_idx(folds.k);

  parallel_for(folds.k, opt.threads, [&](std::size_t f) {
    auto& o = out.outcomes[f];
    o.replicate = f;
    o.seed = derive(seed, "cv-fit", f);
    try {
      const auto test_idx = folds.members(f);
      const Dataset train = ds.subset(folds.complement(f));
      const Dataset test = ds.subset(test_idx);
      const auto fit = detail::fit_for_validation(train, opt, o.seed);
      held_scores[f] = risk_scores(fit, test, out.horizon);
      held_idx[f] = test_idx;
      const auto roc = time_dependent_auc(held_scores[f], test, out.horizon);
      o.ok = true;
      o.auc = roc.auc;
      o.n_cases = roc.n_cases;
      o.n_controls = roc.n_controls;
    } catch (const Error& e) {
      o.diagnostic = e.what();
    }
  });

  for (const auto& o : out.outcomes)
    if (o.ok) out.auc_values.push_back(o.auc);
  if (2 * out.auc_values.size() >= folds.k) {
    summarize_aucs(out);
    return out;
  }
  // case-starved folds: pool every held-out score into one AUC
  std::vector<double> scores, times;
  std::vector<int> events;
  for (std::size_t f = 0; f < folds.k; ++f) {
    for (std::size_t m = 0; m < held_idx[f].size(); ++m) {
      const auto& r = ds.records[held_idx[f][m]];
      scores.push_back(held_scores[f][m]);
      times.push_back(r.time);
      events.push_back(r.event);
    }
  }
  try {
    const auto roc = time_dependent_auc(scores, times, events, out.horizon);
    out.pooled = true;
    out.auc_values = {roc.auc};
    summarize_aucs(out);
  } catch (const Error& e) {
    throw Error(ErrorKind::FoldDegenerate, std::string("cross-validation failed in every fold and when pooled: ") + e.what());
  }
  return out;
}

inline ValidationSummary cross_validate(const Dataset& ds, std::size_t k, const ValidationOptions& opt,
                                        std::uint64_t seed) {
  return cross_validate(ds, kfold_split(ds, k, seed), opt, seed);
}

/// Apparent AUC of models refitted on bootstrap samples drawn with the given
/// per-replicate seeds.
inline ValidationSummary bootstrap_validate_seeds(const Dataset& ds, const std::vector<std::uint64_t>& seeds,
                                                  const ValidationOptions& opt) {
  if (seeds.size() < 2) throw Error(ErrorKind::InvalidArgument, "need at least 2 bootstrap replicates");
  ValidationSummary out;
  out.method = ValidationMethod::Bootstrap;
  out.g = opt.g;
  out.horizon = opt.horizon > 0.0 ? opt.horizon : default_horizon(ds);
  out.outcomes.resize(seeds.size());
  parallel_for(seeds.size(), opt.threads, [&](std::size_t b) {
    auto& o = out.outcomes[b];
    o.replicate = b;
    o.seed = seeds[b];
    try {
      const Dataset sample = bootstrap_sample(ds, seeds[b]);
      const auto fit = detail::fit_for_validation(sample, opt, derive(seeds[b], "fit", 0));
      const auto roc = time_dependent_auc(risk_scores(fit, sample, out.horizon), sample, out.horizon);
      o.ok = true;
      o.auc = roc.auc;
      o.n_cases = roc.n_cases;
      o.n_controls = roc.n_controls;
    } catch (const Error& e) {
      o.diagnostic = e.what();
    }
  });
  for (const auto& o : out.outcomes)
    if (o.ok) out.auc_values.push_back(o.auc);
  if (2 * out.auc_values.size() < seeds.size())
    throw Error(ErrorKind::FoldDegenerate, "fewer than half of the bootstrap replicates succeeded");
  summarize_aucs(out);
  return out;
}

inline ValidationSummary bootstrap_validate(const Dataset& ds, std::size_t replicates, const ValidationOptions& opt,
                                            std::uint64_t seed) {
  std::vector<std::uint64_t> seeds(replicates);
  for (std::size_t b = 0; b < replicates; ++b) seeds[b] = derive(seed, "boot", b);
  return bootstrap_validate_seeds(ds, seeds, opt);
}

}  // namespace lcsurv
