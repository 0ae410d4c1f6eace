#pragma once

// Weighted Cox proportional-hazards model with Breslow ties.
//
// Log partial likelihood with case weights w:
//   l(b) = sum_{events j} w_j [ x_j'b - log sum_{k in R(t_j)} w_k exp(x_k'b) ],
// R(t) = { k : t_k >= t }. Tied event times share one risk-set denominator.
// Risk-set sums are accumulated from the longest follow-up downwards with a
// running maximum of the linear predictor, so every log-sum is max-shifted.

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "lcsurv/dataset.hpp"
#include "lcsurv/error.hpp"

namespace lcsurv {

/// Parameter magnitude beyond which a fit is reported as divergent
/// (monotone likelihood / separation).
inline constexpr double kDivergenceBound = 50.0;

/// Relative size of a Newton decrement treated as objective rounding noise.
inline constexpr double kNewtonNoiseFloor = 1e-13;

struct BaselineHazard {
  std::vector<double> times;       // strictly increasing event times
  std::vector<double> increments;  // Breslow mass at each time, >= 0

  /// H0(t), right-continuous, constant after the last event time.
  double cumulative(double t) const {
    const auto end = std::upper_bound(times.begin(), times.end(), t);
    return std::accumulate(increments.begin(), increments.begin() + (end - times.begin()), 0.0);
  }

  /// Mass placed exactly at t, 0 when t is not on the grid.
  double increment_at(double t) const {
    const auto it = std::lower_bound(times.begin(), times.end(), t);
    if (it == times.end() || *it != t) return 0.0;
    return increments[static_cast<std::size_t>(it - times.begin())];
  }

  double survival(double t) const { return std::exp(-cumulative(t)); }
};

struct CoxFit {
  Eigen::VectorXd beta;
  BaselineHazard baseline;
  bool converged = false;
  int iterations = 0;
  double final_gradient_norm = 0.0;
  std::string diagnostic;
};

/// Dataset rearranged for repeated risk-set passes: covariate matrix plus the
/// descending-time order and the event-time grid. Built once, reused for
/// every weight vector (EM classes, Newton iterations).
class CoxData {
 public:
  explicit CoxData(const Dataset& ds) : n_(ds.size()), p_(ds.dim_x()) {
    x_.resize(static_cast<Eigen::Index>(n_), static_cast<Eigen::Index>(p_));
    time_.resize(n_);
    event_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) {
      const auto& r = ds.records[i];
      if (r.x.size() != p_) throw Error(ErrorKind::InvalidArgument, "record x length mismatch");
      for (std::size_t j = 0; j < p_; ++j)
        x_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = r.x[j];
      time_[i] = r.time;
      event_[i] = r.event;
    }
    order_.resize(n_);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::stable_sort(order_.begin(), order_.end(),
                     [&](std::size_t a, std::size_t b) { return time_[a] > time_[b]; });
    for (std::size_t i = 0; i < n_; ++i)
      if (event_[i] == 1) grid_.push_back(time_[i]);
    std::sort(grid_.begin(), grid_.end());
    grid_.erase(std::unique(grid_.begin(), grid_.end()), grid_.end());
    grid_upto_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i)
      grid_upto_[i] = static_cast<std::size_t>(
          std::upper_bound(grid_.begin(), grid_.end(), time_[i]) - grid_.begin());
  }

  std::size_t size() const { return n_; }
  std::size_t dim() const { return p_; }
  const Eigen::MatrixXd& x() const { return x_; }
  double time(std::size_t i) const { return time_[i]; }
  int event(std::size_t i) const { return event_[i]; }
  /// Record indices by descending follow-up time (stable on ties).
  const std::vector<std::size_t>& order() const { return order_; }
  /// Distinct event times, ascending.
  const std::vector<double>& grid() const { return grid_; }
  /// Number of grid times <= time(i).
  std::size_t grid_upto(std::size_t i) const { return grid_upto_[i]; }

  Eigen::VectorXd linear_predictor(const Eigen::VectorXd& beta) const {
    if (p_ == 0) return Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_));
    return x_ * beta;
  }

 private:
  std::size_t n_, p_;
  Eigen::MatrixXd x_;
  std::vector<double> time_;
  std::vector<int> event_;
  std::vector<std::size_t> order_;
  std::vector<double> grid_;
  std::vector<std::size_t> grid_upto_;
};

struct PartialLikelihoodDerivatives {
  Eigen::VectorXd gradient;  // score of the log partial likelihood
  Eigen::MatrixXd hessian;   // negative semi-definite
};

namespace detail {

struct RiskSetPass {
  double log_pl = 0.0;
  Eigen::VectorXd score;
  Eigen::MatrixXd hessian;
};

inline void check_inputs(const CoxData& data, std::span<const double> w, const Eigen::VectorXd& beta) {
  if (w.size() != data.size())
    throw Error(ErrorKind::InvalidArgument, "weights length " + std::to_string(w.size()) +
                                                " != n " + std::to_string(data.size()));
  if (static_cast<std::size_t>(beta.size()) != data.dim())
    throw Error(ErrorKind::InvalidArgument, "beta length does not match covariate dimension");
  for (double v : w)
    if (!(v >= 0.0) || !std::isfinite(v)) throw Error(ErrorKind::InvalidArgument, "weights must be finite and >= 0");
}

/// One descending-time sweep. With `derivatives` false only log_pl is filled.
inline RiskSetPass risk_set_pass(const CoxData& data, std::span<const double> w,
                                 const Eigen::VectorXd& beta, bool derivatives) {
  const auto p = static_cast<Eigen::Index>(data.dim());
  const Eigen::VectorXd eta = data.linear_predictor(beta);
  const auto& X = data.x();
  const auto& order = data.order();
  const std::size_t n = data.size();

  RiskSetPass out;
  Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
  Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd ev_x = Eigen::VectorXd::Zero(p);
  if (derivatives) {
    out.score = Eigen::VectorXd::Zero(p);
    out.hessian = Eigen::MatrixXd::Zero(p, p);
  }
  double s0 = 0.0;
  double shift = -std::numeric_limits<double>::infinity();

  std::size_t pos = 0;
  while (pos < n) {
    const double t = data.time(order[pos]);
    std::size_t end = pos;
    double d_w = 0.0;
    double ev_eta = 0.0;
    if (derivatives) ev_x.setZero();
    // add the whole tie group to the risk set before scoring its events
    for (; end < n && data.time(order[end]) == t; ++end) {
      const std::size_t i = order[end];
      const double wi = w[i];
      if (wi <= 0.0) continue;
      const double e = eta[static_cast<Eigen::Index>(i)];
      if (e > shift) {
        const double f = std::isinf(shift) ? 0.0 : std::exp(shift - e);
        s0 *= f;
        if (derivatives) {
          s1 *= f;
          s2 *= f;
        }
        shift = e;
      }
      const double r = wi * std::exp(e - shift);
      s0 += r;
      if (derivatives) {
        const auto xi = X.row(static_cast<Eigen::Index>(i)).transpose();
        s1.noalias() += r * xi;
        s2.noalias() += r * xi * xi.transpose();
      }
      if (data.event(i) == 1) {
        d_w += wi;
        ev_eta += wi * e;
        if (derivatives) ev_x.noalias() += wi * X.row(static_cast<Eigen::Index>(i)).transpose();
      }
    }
    if (d_w > 0.0) {
      const double log_s0 = shift + std::log(s0);
      out.log_pl += ev_eta - d_w * log_s0;
      if (derivatives) {
        const Eigen::VectorXd mean = s1 / s0;
        out.score.noalias() += ev_x - d_w * mean;
        out.hessian.noalias() -= d_w * (s2 / s0 - mean * mean.transpose());
      }
    }
    pos = end;
  }
  if (!std::isfinite(out.log_pl))
    throw Error(ErrorKind::NonFiniteValue, "partial likelihood is not finite");
  if (derivatives && (!out.score.allFinite() || !out.hessian.allFinite()))
    throw Error(ErrorKind::NonFiniteValue, "partial likelihood derivatives are not finite");
  return out;
}

inline double weighted_events(const CoxData& data, std::span<const double> w) {
  double d = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (data.event(i) == 1) d += w[i];
  return d;
}

}  // namespace detail

inline double neg_log_partial_likelihood(const CoxData& data, std::span<const double> weights,
                                         const Eigen::VectorXd& beta) {
  detail::check_inputs(data, weights, beta);
  return -detail::risk_set_pass(data, weights, beta, false).log_pl;
}

inline double neg_log_partial_likelihood(const Dataset& ds, std::span<const double> weights,
                                         const Eigen::VectorXd& beta) {
  return neg_log_partial_likelihood(CoxData(ds), weights, beta);
}

/// Analytic score and Hessian of the weighted log partial likelihood.
inline PartialLikelihoodDerivatives pl_derivatives(const CoxData& data, std::span<const double> weights,
                                                   const Eigen::VectorXd& beta) {
  detail::check_inputs(data, weights, beta);
  auto pass = detail::risk_set_pass(data, weights, beta, true);
  return {std::move(pass.score), std::move(pass.hessian)};
}

inline PartialLikelihoodDerivatives pl_derivatives(const Dataset& ds, std::span<const double> weights,
                                                   const Eigen::VectorXd& beta) {
  return pl_derivatives(CoxData(ds), weights, beta);
}

/// Breslow estimator: at each event time t, (weighted deaths at t) divided by
/// the weighted risk-set sum of exp(x'b). Stored on the data's event grid.
inline BaselineHazard breslow_baseline(const CoxData& data, std::span<const double> weights,
                                       const Eigen::VectorXd& beta) {
  detail::check_inputs(data, weights, beta);
  if (!(detail::weighted_events(data, weights) > 0.0))
    throw Error(ErrorKind::NoEvents, "no weighted events for the baseline hazard");
  const Eigen::VectorXd eta = data.linear_predictor(beta);
  const auto& order = data.order();
  const std::size_t n = data.size();

  BaselineHazard h;
  h.times = data.grid();
  h.increments.assign(h.times.size(), 0.0);
  double s0 = 0.0;
  double shift = -std::numeric_limits<double>::infinity();
  std::size_t pos = 0;
  while (pos < n) {
    const double t = data.time(order[pos]);
    std::size_t end = pos;
    double d_w = 0.0;
    bool has_event = false;
    for (; end < n && data.time(order[end]) == t; ++end) {
      const std::size_t i = order[end];
      if (data.event(i) == 1) has_event = true;
      const double wi = weights[i];
      if (wi <= 0.0) continue;
      const double e = eta[static_cast<Eigen::Index>(i)];
      if (e > shift) {
        s0 *= std::isinf(shift) ? 0.0 : std::exp(shift - e);
        shift = e;
      }
      s0 += wi * std::exp(e - shift);
      if (data.event(i) == 1) d_w += wi;
    }
    if (has_event && d_w > 0.0) {
      const auto g = static_cast<std::size_t>(
          std::lower_bound(h.times.begin(), h.times.end(), t) - h.times.begin());
      h.increments[g] = d_w * std::exp(-shift) / s0;
    }
    pos = end;
  }
  for (double v : h.increments)
    if (!std::isfinite(v)) throw Error(ErrorKind::NonFiniteValue, "baseline hazard overflow");
  return h;
}

inline BaselineHazard breslow_baseline(const Dataset& ds, std::span<const double> weights,
                                       const Eigen::VectorXd& beta) {
  return breslow_baseline(CoxData(ds), weights, beta);
}

struct CoxOptions {
  double tol = 1e-8;  // gradient max-norm
  int max_iter = 100;
};

namespace detail {

/// Solves A d = b for symmetric positive semi-definite A, retrying once with a
/// 1e-8 ridge. Returns false if both attempts fail.
inline bool solve_psd(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, Eigen::VectorXd& out) {
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() == Eigen::Success) {
    out = llt.solve(b);
    if (out.allFinite()) return true;
  }
  const Eigen::MatrixXd ridged =
      a + 1e-8 * Eigen::MatrixXd::Identity(a.rows(), a.cols());
  llt.compute(ridged);
  if (llt.info() != Eigen::Success) return false;
  out = llt.solve(b);
  return out.allFinite();
}

}  // namespace detail

/// Newton-Raphson with step halving on the negative log partial likelihood.
inline CoxFit fit_cox(const CoxData& data, std::span<const double> weights, const Eigen::VectorXd& init,
                      const CoxOptions& opt = {}) {
  detail::check_inputs(data, weights, init);
  if (!(detail::weighted_events(data, weights) > 0.0))
    throw Error(ErrorKind::NoEvents, "no weighted events");

  CoxFit fit;
  fit.beta = init;
  for (int iter = 1; iter <= opt.max_iter; ++iter) {
    fit.iterations = iter;
    const auto pass = detail::risk_set_pass(data, weights, fit.beta, true);
    fit.final_gradient_norm = data.dim() == 0 ? 0.0 : pass.score.cwiseAbs().maxCoeff();
    if (fit.final_gradient_norm <= opt.tol) {
      fit.converged = true;
      break;
    }
    Eigen::VectorXd step;
    if (!detail::solve_psd(-pass.hessian, pass.score, step))
      throw Error(ErrorKind::SingularHessian, "Cox information matrix is singular");

    const double f0 = -pass.log_pl;
    // Below rounding noise of f the line search cannot discriminate; the
    // full Newton step is taken (quadratic convergence near the optimum).
    const bool below_noise = pass.score.dot(step) <= kNewtonNoiseFloor * (1.0 + std::abs(f0));
    double scale = 1.0;
    bool improved = below_noise;
    Eigen::VectorXd trial = fit.beta + step;
    for (int h = 0; h < 40 && !below_noise; ++h, scale *= 0.5) {
      trial = fit.beta + scale * step;
      double f1;
      try {
        f1 = -detail::risk_set_pass(data, weights, trial, false).log_pl;
      } catch (const Error&) {
        continue;
      }
      if (f1 <= f0) {
        improved = true;
        break;
      }
    }
    if (!improved) {
      fit.diagnostic = "step halving failed to decrease the objective";
      break;
    }
    fit.beta = trial;
    if (fit.beta.size() > 0 && fit.beta.cwiseAbs().maxCoeff() > kDivergenceBound) {
      fit.diagnostic = "monotone likelihood: |beta| exceeded " + std::to_string(kDivergenceBound);
      fit.final_gradient_norm =
          detail::risk_set_pass(data, weights, fit.beta, true).score.cwiseAbs().maxCoeff();
      fit.baseline = breslow_baseline(data, weights, fit.beta);
      return fit;
    }
  }
  if (!fit.converged && fit.diagnostic.empty()) fit.diagnostic = "iteration limit reached";
  fit.baseline = breslow_baseline(data, weights, fit.beta);
  return fit;
}

inline CoxFit fit_cox(const Dataset& ds, std::span<const double> weights, const Eigen::VectorXd& init,
                      const CoxOptions& opt = {}) {
  return fit_cox(CoxData(ds), weights, init, opt);
}

inline double linear_predictor(const CoxFit& fit, std::span<const double> x) {
  if (static_cast<std::size_t>(fit.beta.size()) != x.size())
    throw Error(ErrorKind::InvalidArgument, "covariate length does not match the fit");
  double eta = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) eta += fit.beta[static_cast<Eigen::Index>(j)] * x[j];
  return eta;
}

/// S(t|x) = S0(t)^exp(x'b).
inline double predict_survival(const CoxFit& fit, std::span<const double> x, double t) {
  if (t < 0.0) throw Error(ErrorKind::InvalidArgument, "negative time");
  const double h0 = fit.baseline.cumulative(t);
  if (h0 == 0.0) return 1.0;
  return std::exp(-h0 * std::exp(linear_predictor(fit, x)));
}

}  // namespace lcsurv
