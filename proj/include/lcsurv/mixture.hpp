#pragma once

// Latent-class Cox model.
//
// Observed-data likelihood of record j:
//   L_j = sum_i pi_i(z_j) f_i(t_j, d_j | x_j),
//   f_i = (dH0_i(t_j) exp(x_j'b_i))^d_j * exp(-H0_i(t_j) exp(x_j'b_i)),
// with dH0_i the Breslow mass of class i at t_j. EM alternates posterior
// responsibilities with one weighted Cox fit per class (responsibility
// weights, warm-started, Breslow refreshed) and a weighted multinomial-logit
// fit of the membership model. Profiling the class hazards over their event
// masses gives exactly the weighted partial likelihood, so every M-step
// maximizes the expected complete-data log-likelihood and the observed
// log-likelihood cannot decrease.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "lcsurv/classmodel.hpp"
#include "lcsurv/coxph.hpp"
#include "lcsurv/dataset.hpp"
#include "lcsurv/error.hpp"
#include "lcsurv/parallel.hpp"
#include "lcsurv/rng.hpp"

namespace lcsurv {

struct StartSummary {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  double loglik = -std::numeric_limits<double>::infinity();
  bool converged = false;
  bool failed = false;
  int iterations = 0;
  double max_decrease = 0.0;  // largest loglik drop between consecutive E-steps
  std::string diagnostic;
};

struct LatentClassFit {
  std::size_t g = 0;
  MembershipParams membership;
  std::vector<CoxFit> class_models;
  Eigen::MatrixXd resp;  // n x g posterior responsibilities
  double loglik = 0.0;
  std::size_t n_params = 0;
  std::size_t n = 0;
  bool converged = false;
  int iterations = 0;
  std::vector<StartSummary> starts_summary;
  bool best_replicated = false;
  std::vector<double> loglik_trace;  // best chain, one entry per E-step

  std::vector<double> pi_mean() const {
    std::vector<double> out(g);
    for (std::size_t i = 0; i < g; ++i) out[i] = resp.col(static_cast<Eigen::Index>(i)).mean();
    return out;
  }

  /// Index of the most probable class for each record.
  std::vector<std::size_t> modal_class() const {
    std::vector<std::size_t> out(static_cast<std::size_t>(resp.rows()));
    for (Eigen::Index j = 0; j < resp.rows(); ++j) {
      Eigen::Index best = 0;
      resp.row(j).maxCoeff(&best);
      out[static_cast<std::size_t>(j)] = static_cast<std::size_t>(best);
    }
    return out;
  }
};

/// Free parameters: membership (g-1)(1 + dim z) plus class coefficients
/// g * dim x. Baseline hazard masses are not counted.
inline std::size_t latent_class_n_params(std::size_t g, std::size_t dim_x, std::size_t dim_z) {
  return (g - 1) * (1 + dim_z) + g * dim_x;
}

/// Everything the EM loop reads from the dataset, built once.
class MixtureData {
 public:
  explicit MixtureData(const Dataset& ds) : ds_(&ds), cox_(ds) {
    z_.resize(static_cast<Eigen::Index>(ds.size()), static_cast<Eigen::Index>(ds.dim_z()));
    for (std::size_t j = 0; j < ds.size(); ++j) {
      if (ds.records[j].z.size() != ds.dim_z()) throw Error(ErrorKind::InvalidArgument, "record z length mismatch");
      for (std::size_t k = 0; k < ds.dim_z(); ++k)
        z_(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) = ds.records[j].z[k];
    }
  }

  const Dataset& dataset() const { return *ds_; }
  const CoxData& cox() const { return cox_; }
  const Eigen::MatrixXd& z() const { return z_; }
  std::size_t size() const { return cox_.size(); }

 private:
  const Dataset* ds_;
  CoxData cox_;
  Eigen::MatrixXd z_;
};

/// log f_i for one record against an arbitrary fit (grid looked up by time).
/// Returns -inf when an event time carries no baseline mass.
inline double log_observation_density(const CoxFit& fit, const SurvivalRecord& rec) {
  const double eta = linear_predictor(fit, rec.x);
  const double h = fit.baseline.cumulative(rec.time);
  double out = h == 0.0 ? 0.0 : -h * std::exp(eta);
  if (rec.event == 1) {
    const double dh = fit.baseline.increment_at(rec.time);
    if (!(dh > 0.0)) return -std::numeric_limits<double>::infinity();
    out += std::log(dh) + eta;
  }
  return out;
}

/// h_i(t)^event * S_i(t) with Breslow increments; 0 when the record's event
/// time has no mass (counted in `zero_mass_count` when provided).
inline double observation_density(const CoxFit& fit, const SurvivalRecord& rec,
                                  std::size_t* zero_mass_count = nullptr) {
  const double ld = log_observation_density(fit, rec);
  if (rec.event == 1 && std::isinf(ld) && zero_mass_count) ++*zero_mass_count;
  return std::exp(ld);
}

/// log f_i for every record of `data`; uses prefix sums when the fit's
/// baseline lives on the data's own event grid.
inline Eigen::VectorXd class_log_densities(const MixtureData& data, const CoxFit& fit,
                                           std::size_t* zero_mass_count = nullptr) {
  const auto& cox = data.cox();
  const auto n = static_cast<Eigen::Index>(cox.size());
  Eigen::VectorXd out(n);
  if (fit.baseline.times != cox.grid()) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto& rec = data.dataset().records[static_cast<std::size_t>(j)];
      out[j] = log_observation_density(fit, rec);
      if (rec.event == 1 && std::isinf(out[j]) && zero_mass_count) ++*zero_mass_count;
    }
    return out;
  }
  const auto& inc = fit.baseline.increments;
  std::vector<double> cum(inc.size() + 1, 0.0);
  for (std::size_t k = 0; k < inc.size(); ++k) cum[k + 1] = cum[k] + inc[k];
  const Eigen::VectorXd eta = cox.linear_predictor(fit.beta);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto jj = static_cast<std::size_t>(j);
    const std::size_t up = cox.grid_upto(jj);
    const double h = cum[up];
    double v = h == 0.0 ? 0.0 : -h * std::exp(eta[j]);
    if (cox.event(jj) == 1) {
      const double dh = inc[up - 1];
      if (dh > 0.0) {
        v += std::log(dh) + eta[j];
      } else {
        v = -std::numeric_limits<double>::infinity();
        if (zero_mass_count) ++*zero_mass_count;
      }
    }
    out[j] = v;
  }
  return out;
}

struct EStepResult {
  Eigen::MatrixXd resp;
  double loglik = 0.0;
  std::size_t zero_mass_count = 0;
};

/// Posterior responsibilities and observed-data log-likelihood, in log space.
inline EStepResult e_step(const MixtureData& data, const MembershipParams& membership,
                          const std::vector<CoxFit>& class_models) {
  const auto n = static_cast<Eigen::Index>(data.size());
  const auto g = static_cast<Eigen::Index>(class_models.size());
  if (static_cast<Eigen::Index>(membership.g()) != g)
    throw Error(ErrorKind::InvalidArgument, "membership and class model counts differ");
  EStepResult out;
  Eigen::MatrixXd logw(n, g);
  for (Eigen::Index i = 0; i < g; ++i)
    logw.col(i) = class_log_densities(data, class_models[static_cast<std::size_t>(i)], &out.zero_mass_count);
  const auto& z = data.z();
  for (Eigen::Index j = 0; j < n; ++j) {
    Eigen::VectorXd a = membership.gamma;
    if (z.cols() > 0) a.noalias() += membership.delta * z.row(j).transpose();
    logw.row(j) += log_softmax(a).transpose();
  }
  out.resp.resize(n, g);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double m = logw.row(j).maxCoeff();
    if (std::isinf(m) && m < 0)
      throw Error(ErrorKind::DegenerateRecord,
                  "record '" + data.dataset().records[static_cast<std::size_t>(j)].id +
                      "' has zero density under every class");
    // std::exp keeps exp(-inf) == 0; Eigen's vectorized exp clamps to a denormal
    const Eigen::RowVectorXd e = (logw.row(j).array() - m).unaryExpr([](double v) { return std::exp(v); });
    const double s = e.sum();
    out.resp.row(j) = e / s;
    out.loglik += m + std::log(s);
  }
  return out;
}

struct MStepResult {
  MembershipParams membership;
  std::vector<CoxFit> class_models;
};

/// One weighted Cox fit per class plus the membership fit. Class models with
/// a divergent coefficient (|b| > bound) are reported as errors.
inline MStepResult m_step(const MixtureData& data, const Eigen::MatrixXd& resp,
                          const MembershipParams& membership, const std::vector<Eigen::VectorXd>& warm_betas,
                          const CoxOptions& cox_opt = {}, const MembershipOptions& mem_opt = {}) {
  const auto g = static_cast<std::size_t>(resp.cols());
  MStepResult out;
  out.class_models.reserve(g);
  std::vector<double> w(data.size());
  for (std::size_t i = 0; i < g; ++i) {
    for (std::size_t j = 0; j < w.size(); ++j) w[j] = resp(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i));
    try {
      auto fit = fit_cox(data.cox(), w, warm_betas.at(i), cox_opt);
      if (fit.beta.size() > 0 && fit.beta.cwiseAbs().maxCoeff() > kDivergenceBound)
        throw Error(ErrorKind::SeparationDetected, fit.diagnostic);
      out.class_models.push_back(std::move(fit));
    } catch (const Error& e) {
      throw Error(e.kind(), "class " + std::to_string(i) + ": " + e.what());
    }
  }
  try {
    out.membership = fit_membership(data.z(), resp, membership, mem_opt);
  } catch (const Error& e) {
    throw Error(e.kind(), std::string("membership model: ") + e.what());
  }
  return out;
}

struct EmOptions {
  std::size_t n_starts = 30;
  std::uint64_t base_seed = 1;
  double tol = 1e-8;      // relative loglik change
  int max_iter = 500;
  double ascent_slack = 1e-10;
  double replicate_tol = 1e-4;
  unsigned threads = 1;
  CoxOptions cox;
  MembershipOptions membership;
};

struct ChainResult {
  StartSummary summary;
  MembershipParams membership;
  std::vector<CoxFit> class_models;
  Eigen::MatrixXd resp;
  std::vector<double> loglik_trace;
};

/// Dirichlet(1,...,1) responsibility rows.
inline Eigen::MatrixXd random_responsibilities(std::size_t n, std::size_t g, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd r(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(g));
  for (Eigen::Index j = 0; j < r.rows(); ++j) {
    for (Eigen::Index i = 0; i < r.cols(); ++i) r(j, i) = rng.exponential();
    r.row(j) /= r.row(j).sum();
  }
  return r;
}

/// One EM chain from the given initial responsibilities. Never throws for
/// numerical trouble; failures are reported in the summary.
inline ChainResult run_em_chain(const MixtureData& data, const Eigen::MatrixXd& init_resp, const EmOptions& opt) {
  const auto g = static_cast<std::size_t>(init_resp.cols());
  const std::size_t p = data.cox().dim();
  const double min_mass = std::max(5.0, static_cast<double>(p) + 1.0);
  ChainResult chain;
  auto& s = chain.summary;

  auto guard_mass = [&](const Eigen::MatrixXd& r) {
    if (g == 1) return true;
    for (Eigen::Index i = 0; i < r.cols(); ++i) {
      if (r.col(i).sum() < min_mass) {
        s.failed = true;
        s.diagnostic = "class " + std::to_string(i) + " emptied (mass " + std::to_string(r.col(i).sum()) + ")";
        return false;
      }
    }
    return true;
  };

  try {
    if (!guard_mass(init_resp)) return chain;
    std::vector<Eigen::VectorXd> betas(g, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p)));
    auto state = m_step(data, init_resp, MembershipParams::zeros(g, static_cast<std::size_t>(data.z().cols())),
                        betas, opt.cox, opt.membership);
    double prev = -std::numeric_limits<double>::infinity();
    for (int it = 1; it <= opt.max_iter; ++it) {
      s.iterations = it;
      auto es = e_step(data, state.membership, state.class_models);
      chain.loglik_trace.push_back(es.loglik);
      chain.membership = state.membership;
      chain.class_models = state.class_models;
      chain.resp = es.resp;
      s.loglik = es.loglik;
      if (it > 1) {
        const double drop = prev - es.loglik;
        s.max_decrease = std::max(s.max_decrease, drop);
        if (drop > opt.ascent_slack) {
          s.failed = true;
          s.diagnostic = "loglik decreased by " + std::to_string(drop) + " at iteration " + std::to_string(it);
          return chain;
        }
        if (std::abs(es.loglik - prev) <= opt.tol * std::abs(prev)) {
          s.converged = true;
          return chain;
        }
      }
      prev = es.loglik;
      if (!guard_mass(es.resp)) return chain;
      for (std::size_t i = 0; i < g; ++i) betas[i] = state.class_models[i].beta;
      state = m_step(data, es.resp, state.membership, betas, opt.cox, opt.membership);
    }
  } catch (const Error& e) {
    s.failed = true;
    s.diagnostic = e.what();
  }
  return chain;
}

/// Reorders classes by descending mean responsibility (ties: ascending first
/// coefficient).
inline void canonicalize(LatentClassFit& fit) {
  const auto pis = fit.pi_mean();
  std::vector<std::size_t> order(fit.g);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (pis[a] != pis[b]) return pis[a] > pis[b];
    const auto& ba = fit.class_models[a].beta;
    const auto& bb = fit.class_models[b].beta;
    return ba.size() > 0 && ba[0] < bb[0];
  });
  std::vector<CoxFit> models;
  Eigen::MatrixXd resp(fit.resp.rows(), fit.resp.cols());
  for (std::size_t k = 0; k < fit.g; ++k) {
    models.push_back(fit.class_models[order[k]]);
    resp.col(static_cast<Eigen::Index>(k)) = fit.resp.col(static_cast<Eigen::Index>(order[k]));
  }
  fit.class_models = std::move(models);
  fit.resp = std::move(resp);
  fit.membership = permute_classes(fit.membership, order);
}

/// Assembles a LatentClassFit from chain results: best loglik wins (ties to
/// the lower start index), replication is checked, classes canonicalized.
inline LatentClassFit select_best_chain(const MixtureData& data, std::size_t g, std::vector<ChainResult>& chains,
                                        const EmOptions& opt) {
  std::ptrdiff_t best = -1;
  for (std::size_t s = 0; s < chains.size(); ++s) {
    const auto& c = chains[s].summary;
    if (c.failed || !std::isfinite(c.loglik)) continue;
    if (best < 0 || c.loglik > chains[static_cast<std::size_t>(best)].summary.loglik)
      best = static_cast<std::ptrdiff_t>(s);
  }
  LatentClassFit fit;
  for (const auto& c : chains) fit.starts_summary.push_back(c.summary);
  if (best < 0) {
    std::string why = chains.empty() ? "no starts" : chains.front().summary.diagnostic;
    throw Error(ErrorKind::AllStartsFailed, "all " + std::to_string(chains.size()) +
                                                " EM starts failed for g=" + std::to_string(g) + " (first: " + why + ")");
  }
  auto& b = chains[static_cast<std::size_t>(best)];
  fit.g = g;
  fit.n = data.size();
  fit.membership = std::move(b.membership);
  fit.class_models = std::move(b.class_models);
  fit.resp = std::move(b.resp);
  fit.loglik = b.summary.loglik;
  fit.converged = b.summary.converged;
  fit.iterations = b.summary.iterations;
  fit.loglik_trace = std::move(b.loglik_trace);
  fit.n_params = latent_class_n_params(g, data.cox().dim(), static_cast<std::size_t>(data.z().cols()));
  std::size_t near = 0;
  for (const auto& c : fit.starts_summary)
    if (!c.failed && std::abs(c.loglik - fit.loglik) <= opt.replicate_tol) ++near;
  fit.best_replicated = near >= 2;
  canonicalize(fit);
  return fit;
}

/// EM with `n_starts` random starts; start s draws its initial
/// responsibilities from derive(base_seed, "start", s).
inline LatentClassFit fit_latent_class(const MixtureData& data, std::size_t g, const EmOptions& opt = {}) {
  if (g < 1) throw Error(ErrorKind::InvalidArgument, "g must be >= 1");
  if (data.size() < 10 * g)
    throw Error(ErrorKind::InvalidArgument, "need at least 10*g records (n=" + std::to_string(data.size()) + ")");
  if (opt.n_starts < 1) throw Error(ErrorKind::InvalidArgument, "need at least one start");
  // a single class has only one possible start
  const std::size_t starts = g == 1 ? 1 : opt.n_starts;
  std::vector<ChainResult> chains(starts);
  parallel_for(starts, opt.threads, [&](std::size_t s) {
    const auto seed = derive(opt.base_seed, "start", s);
    chains[s] = run_em_chain(data, random_responsibilities(data.size(), g, seed), opt);
    chains[s].summary.index = s;
    chains[s].summary.seed = seed;
  });
  return select_best_chain(data, g, chains, opt);
}

inline LatentClassFit fit_latent_class(const Dataset& ds, std::size_t g, const EmOptions& opt = {}) {
  const MixtureData data(ds);
  return fit_latent_class(data, g, opt);
}

/// S(t|x,z) = sum_i pi_i(z) S_i(t|x).
inline double predict_mixture_survival(const LatentClassFit& fit, std::span<const double> x,
                                       std::span<const double> z, double t) {
  if (t < 0.0) throw Error(ErrorKind::InvalidArgument, "negative time");
  const auto pi = class_probs(fit.membership, z);
  double s = 0.0;
  for (std::size_t i = 0; i < fit.g; ++i) s += pi[i] * predict_survival(fit.class_models[i], x, t);
  return s;
}

/// Bayes posterior over classes for one record (same rule as e_step).
inline std::vector<double> posterior_class(const LatentClassFit& fit, const SurvivalRecord& rec) {
  const Eigen::VectorXd lp = log_softmax(fit.membership.scores(rec.z));
  Eigen::VectorXd logw(static_cast<Eigen::Index>(fit.g));
  for (std::size_t i = 0; i < fit.g; ++i)
    logw[static_cast<Eigen::Index>(i)] = log_observation_density(fit.class_models[i], rec) + lp[static_cast<Eigen::Index>(i)];
  const double m = logw.maxCoeff();
  if (std::isinf(m) && m < 0)
    throw Error(ErrorKind::DegenerateRecord, "record '" + rec.id + "' has zero density under every class");
  const Eigen::VectorXd e = (logw.array() - m).unaryExpr([](double v) { return std::exp(v); });
  const double s = e.sum();
  std::vector<double> out(fit.g);
  for (std::size_t i = 0; i < fit.g; ++i) out[i] = e[static_cast<Eigen::Index>(i)] / s;
  return out;
}

}  // namespace lcsurv
