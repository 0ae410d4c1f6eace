#pragma once

// Shared fixtures and brute-force oracles for the unit and acceptance suites.
// The oracles deliberately use the most direct O(n^2) formulations so they
// share no code path with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lcsurv/dataset.hpp"
#include "lcsurv/rng.hpp"

namespace lcsurv::testkit {

/// Random survival data with p covariates; x = z; roughly PH with beta_true.
inline Dataset random_dataset(std::size_t n, std::size_t p, std::uint64_t seed, double censor_prob = 0.3,
                              bool round_times = false) {
  Rng rng(seed);
  Dataset ds;
  for (std::size_t j = 0; j < p; ++j) ds.x_names.push_back("v" + std::to_string(j + 1));
  ds.z_names = ds.x_names;
  for (std::size_t i = 0; i < n; ++i) {
    SurvivalRecord r;
    r.id = std::to_string(i + 1);
    double eta = 0.0;
    for (std::size_t j = 0; j < p; ++j) {
      const double v = rng.normal();
      r.x.push_back(v);
      eta += (j % 2 == 0 ? 0.5 : -0.3) * v;
    }
    r.z = r.x;
    r.time = rng.exponential() * std::exp(-eta);
    if (round_times) r.time = std::ceil(r.time * 4.0) / 4.0;
    r.event = rng.uniform() < censor_prob ? 0 : 1;
    ds.records.push_back(std::move(r));
  }
  if (ds.n_events() == 0) ds.records[0].event = 1;
  return ds;
}

/// Two classes with opposite covariate effects; membership (about 60/40)
/// depends on the same covariate.
inline Dataset two_class_data(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Dataset ds;
  ds.x_names = {"v1"};
  ds.z_names = {"v1"};
  for (std::size_t i = 0; i < n; ++i) {
    const double x = rng.normal();
    const bool first = rng.uniform() < 1.0 / (1.0 + std::exp(-(0.4 + 0.8 * x)));
    const double rate = first ? 0.3 * std::exp(1.0 * x) : 3.0 * std::exp(-1.0 * x);
    const double t = rng.exponential() / rate;
    const int e = rng.uniform() < 0.8 ? 1 : 0;
    ds.records.push_back({std::to_string(i + 1), t, e, {x}, {x}});
  }
  return ds;
}

/// Builds a dataset from columns; x = z.
inline Dataset make_dataset(const std::vector<double>& time, const std::vector<int>& event,
                            const std::vector<std::vector<double>>& x) {
  Dataset ds;
  const std::size_t p = x.empty() ? 0 : x.front().size();
  for (std::size_t j = 0; j < p; ++j) ds.x_names.push_back("v" + std::to_string(j + 1));
  ds.z_names = ds.x_names;
  for (std::size_t i = 0; i < time.size(); ++i)
    ds.records.push_back({std::to_string(i + 1), time[i], event[i], x.empty() ? std::vector<double>{} : x[i],
                          x.empty() ? std::vector<double>{} : x[i]});
  return ds;
}

/// Direct Breslow negative log partial likelihood:
///   -sum_j w_j [ x_j'b - log sum_{k: t_k >= t_j} w_k exp(x_k'b) ].
inline double brute_neg_log_pl(const Dataset& ds, const std::vector<double>& w, const std::vector<double>& beta) {
  auto lp = [&](const SurvivalRecord& r) {
    double e = 0.0;
    for (std::size_t j = 0; j < beta.size(); ++j) e += r.x[j] * beta[j];
    return e;
  };
  double total = 0.0;
  for (std::size_t j = 0; j < ds.size(); ++j) {
    const auto& rj = ds.records[j];
    if (rj.event != 1 || w[j] == 0.0) continue;
    long double s = 0.0;
    for (std::size_t k = 0; k < ds.size(); ++k)
      if (ds.records[k].time >= rj.time) s += w[k] * std::exp(static_cast<long double>(lp(ds.records[k])));
    total -= w[j] * (lp(rj) - static_cast<double>(std::log(s)));
  }
  return total;
}

/// Kaplan-Meier estimate of the censoring survival just before t, computed
/// directly from its product definition (events precede censorings at ties).
inline double brute_censoring_km_before(const std::vector<double>& times, const std::vector<int>& events, double t) {
  std::vector<double> cens;
  for (std::size_t i = 0; i < times.size(); ++i)
    if (events[i] == 0 && times[i] < t) cens.push_back(times[i]);
  std::sort(cens.begin(), cens.end());
  cens.erase(std::unique(cens.begin(), cens.end()), cens.end());
  double g = 1.0;
  for (double u : cens) {
    double at_risk = 0.0, d = 0.0;
    for (std::size_t i = 0; i < times.size(); ++i) {
      // a death at u is not at risk of being censored at u
      if (times[i] > u || (times[i] == u && events[i] == 0)) at_risk += 1.0;
      if (times[i] == u && events[i] == 0) d += 1.0;
    }
    g *= 1.0 - d / at_risk;
  }
  return g;
}

/// IPCW cumulative/dynamic AUC by enumerating every (case, control) pair.
inline double brute_ipcw_auc(const std::vector<double>& s, const std::vector<double>& t, const std::vector<int>& e,
                             double horizon) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!(e[i] == 1 && t[i] <= horizon)) continue;
    const double w = 1.0 / brute_censoring_km_before(t, e, t[i]);
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (!(t[j] > horizon)) continue;
      den += w;
      if (s[i] > s[j]) num += w;
      else if (s[i] == s[j]) num += 0.5 * w;
    }
  }
  return num / den;
}

/// Fraction of concordant (case, control) pairs with ties counted 1/2.
inline double pair_count_auc(const std::vector<double>& s, const std::vector<double>& t, const std::vector<int>& e,
                             double horizon) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!(e[i] == 1 && t[i] <= horizon)) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (!(t[j] > horizon)) continue;
      den += 1.0;
      num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return num / den;
}

}  // namespace lcsurv::testkit
