#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "lcsurv/mixture.hpp"

namespace lcsurv {

struct FitStatistics {
  double neg2ll = 0.0;
  std::size_t n_params = 0;
  std::size_t n = 0;
  double aic = 0.0;
  double bic = 0.0;
  double abic = 0.0;  // sample-size adjusted BIC, n* = (n + 2) / 24
};

inline FitStatistics fit_statistics_from_neg2ll(double neg2ll, std::size_t n_params, std::size_t n) {
  if (n < 1) throw Error(ErrorKind::InvalidArgument, "n must be >= 1");
  const double k = static_cast<double>(n_params);
  const double nn = static_cast<double>(n);
  return {neg2ll, n_params, n, neg2ll + 2.0 * k, neg2ll + k * std::log(nn),
          neg2ll + k * std::log((nn + 2.0) / 24.0)};
}

inline FitStatistics fit_statistics(double loglik, std::size_t n_params, std::size_t n) {
  return fit_statistics_from_neg2ll(-2.0 * loglik, n_params, n);
}

struct SweepRow {
  std::size_t g = 0;
  FitStatistics stats;
  bool converged = false;  // false also when every start failed
  bool best_replicated = false;
  std::string diagnostic;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::optional<std::size_t> recommended_g;
  std::vector<std::optional<LatentClassFit>> fits;  // aligned with rows; empty when all starts failed
};

/// Minimum BIC over converged rows; ties go to the smaller g.
inline std::optional<std::size_t> recommend_g(const std::vector<SweepRow>& rows) {
  std::optional<std::size_t> best_g;
  double best_bic = 0.0;
  for (const auto& r : rows) {
    if (!r.converged) continue;
    if (!best_g || r.stats.bic < best_bic || (r.stats.bic == best_bic && r.g < *best_g)) {
      best_g = r.g;
      best_bic = r.stats.bic;
    }
  }
  return best_g;
}

/// Fits g_min..g_max classes and tabulates their fit statistics.
inline SweepResult class_sweep(const MixtureData& data, std::size_t g_min, std::size_t g_max, const EmOptions& opt) {
  if (g_min < 1 || g_max < g_min) throw Error(ErrorKind::InvalidArgument, "invalid class range");
  SweepResult out;
  for (std::size_t g = g_min; g <= g_max; ++g) {
    SweepRow row;
    row.g = g;
    row.stats.n = data.size();
    row.stats.n_params = latent_class_n_params(g, data.cox().dim(), static_cast<std::size_t>(data.z().cols()));
    try {
      auto fit = fit_latent_class(data, g, opt);
      row.stats = fit_statistics(fit.loglik, fit.n_params, fit.n);
      row.converged = fit.converged;
      row.best_replicated = fit.best_replicated;
      if (!fit.converged) row.diagnostic = "EM iteration limit reached";
      out.fits.push_back(std::move(fit));
    } catch (const Error& e) {
      row.diagnostic = e.what();
      out.fits.emplace_back();
    }
    out.rows.push_back(std::move(row));
  }
  out.recommended_g = recommend_g(out.rows);
  return out;
}

}  // namespace lcsurv
