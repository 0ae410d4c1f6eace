#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "lcsurv/coxph.hpp"
#include "lcsurv/error.hpp"

namespace lcsurv {

/// Multinomial-logit membership model pi_i(z) = softmax_i(gamma_i + z'delta_i).
/// The last class is the reference: gamma[g-1] = 0 and delta.row(g-1) = 0.
struct MembershipParams {
  Eigen::VectorXd gamma;  // g
  Eigen::MatrixXd delta;  // g x dim(z)

  static MembershipParams zeros(std::size_t g, std::size_t dim_z) {
    return {Eigen::VectorXd::Zero(static_cast<Eigen::Index>(g)),
            Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(g), static_cast<Eigen::Index>(dim_z))};
  }

  std::size_t g() const { return static_cast<std::size_t>(gamma.size()); }
  std::size_t dim_z() const { return static_cast<std::size_t>(delta.cols()); }

  /// Linear predictors gamma_i + z'delta_i for all classes.
  Eigen::VectorXd scores(std::span<const double> z) const {
    if (z.size() != dim_z()) throw Error(ErrorKind::InvalidArgument, "z length does not match membership model");
    Eigen::VectorXd a = gamma;
    for (Eigen::Index i = 0; i < a.size(); ++i)
      for (std::size_t j = 0; j < z.size(); ++j) a[i] += delta(i, static_cast<Eigen::Index>(j)) * z[j];
    return a;
  }
};

/// Max-shifted log-softmax.
inline Eigen::VectorXd log_softmax(const Eigen::VectorXd& a) {
  const double m = a.maxCoeff();
  const double lse = m + std::log((a.array() - m).exp().sum());
  return a.array() - lse;
}

inline std::vector<double> class_probs(const MembershipParams& params, std::span<const double> z) {
  const Eigen::VectorXd lp = log_softmax(params.scores(z));
  std::vector<double> out(static_cast<std::size_t>(lp.size()));
  for (Eigen::Index i = 0; i < lp.size(); ++i) out[static_cast<std::size_t>(i)] = std::exp(lp[i]);
  return out;
}

/// Re-expresses params so that `new_order[k]` (an old class index) becomes
/// class k, then renormalizes against the new last class. Probabilities are
/// permuted, never changed.
inline MembershipParams permute_classes(const MembershipParams& p, const std::vector<std::size_t>& new_order) {
  const auto g = static_cast<Eigen::Index>(p.g());
  MembershipParams out = MembershipParams::zeros(p.g(), p.dim_z());
  for (Eigen::Index k = 0; k < g; ++k) {
    out.gamma[k] = p.gamma[static_cast<Eigen::Index>(new_order[static_cast<std::size_t>(k)])];
    out.delta.row(k) = p.delta.row(static_cast<Eigen::Index>(new_order[static_cast<std::size_t>(k)]));
  }
  const double ref_gamma = out.gamma[g - 1];
  const Eigen::RowVectorXd ref_delta = out.delta.row(g - 1);
  out.gamma.array() -= ref_gamma;
  out.delta.rowwise() -= ref_delta;
  return out;
}

struct MembershipOptions {
  double tol = 1e-8;
  int max_iter = 200;
};

struct MembershipFit {
  MembershipParams params;
  bool converged = false;
  int iterations = 0;
  double gradient_norm = 0.0;
  std::vector<double> objective_trace;  // weighted log-likelihood after each accepted step
};

namespace detail {

struct MembershipProblem {
  const Eigen::MatrixXd& z;     // n x q
  const Eigen::MatrixXd& resp;  // n x g
  Eigen::Index g, q, n;

  Eigen::Index n_free() const { return (g - 1) * (q + 1); }

  MembershipParams unpack(const Eigen::VectorXd& theta) const {
    MembershipParams p = MembershipParams::zeros(static_cast<std::size_t>(g), static_cast<std::size_t>(q));
    for (Eigen::Index c = 0; c + 1 < g; ++c) {
      p.gamma[c] = theta[c * (q + 1)];
      for (Eigen::Index j = 0; j < q; ++j) p.delta(c, j) = theta[c * (q + 1) + 1 + j];
    }
    return p;
  }

  Eigen::VectorXd pack(const MembershipParams& p) const {
    Eigen::VectorXd theta(n_free());
    for (Eigen::Index c = 0; c + 1 < g; ++c) {
      theta[c * (q + 1)] = p.gamma[c] - p.gamma[g - 1];
      for (Eigen::Index j = 0; j < q; ++j) theta[c * (q + 1) + 1 + j] = p.delta(c, j) - p.delta(g - 1, j);
    }
    return theta;
  }

  Eigen::MatrixXd log_probs(const Eigen::VectorXd& theta) const {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, g);
    for (Eigen::Index c = 0; c + 1 < g; ++c) {
      a.col(c).setConstant(theta[c * (q + 1)]);
      if (q > 0) a.col(c).noalias() += z * theta.segment(c * (q + 1) + 1, q);
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      double m = a(i, 0);
      for (Eigen::Index c = 1; c < g; ++c) m = std::max(m, a(i, c));
      double s = 0.0;
      for (Eigen::Index c = 0; c < g; ++c) s += std::exp(a(i, c) - m);
      const double lse = m + std::log(s);
      for (Eigen::Index c = 0; c < g; ++c) a(i, c) -= lse;
    }
    return a;
  }

  double objective(const Eigen::VectorXd& theta) const {
    return (resp.array() * log_probs(theta).array()).sum();
  }

  void derivatives(const Eigen::VectorXd& theta, Eigen::VectorXd& grad, Eigen::MatrixXd& hess) const {
    const Eigen::MatrixXd pi = log_probs(theta).array().exp();
    const auto m = n_free();
    grad = Eigen::VectorXd::Zero(m);
    hess = Eigen::MatrixXd::Zero(m, m);
    Eigen::VectorXd u(q + 1);
    Eigen::MatrixXd uu(q + 1, q + 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      u[0] = 1.0;
      if (q > 0) u.tail(q) = z.row(i).transpose();
      const double w = resp.row(i).sum();
      uu.noalias() = u * u.transpose();
      for (Eigen::Index c = 0; c + 1 < g; ++c) {
        grad.segment(c * (q + 1), q + 1).noalias() += (resp(i, c) - w * pi(i, c)) * u;
        for (Eigen::Index d = 0; d + 1 < g; ++d) {
          const double f = w * pi(i, c) * ((c == d ? 1.0 : 0.0) - pi(i, d));
          hess.block(c * (q + 1), d * (q + 1), q + 1, q + 1).noalias() -= f * uu;
        }
      }
    }
  }
};

}  // namespace detail

/// Weighted multinomial-logit maximum likelihood from fractional class
/// responsibilities, by Newton-Raphson with step halving.
inline MembershipFit fit_membership_traced(const Eigen::MatrixXd& z, const Eigen::MatrixXd& resp,
                                           const MembershipParams& init, const MembershipOptions& opt = {}) {
  const Eigen::Index n = resp.rows(), g = resp.cols(), q = z.cols();
  if (z.rows() != n) throw Error(ErrorKind::InvalidArgument, "Z and responsibilities differ in rows");
  if (g < 1) throw Error(ErrorKind::InvalidArgument, "need at least one class");
  if (n < g) throw Error(ErrorKind::InvalidArgument, "fewer records than classes");
  if (static_cast<Eigen::Index>(init.g()) != g || static_cast<Eigen::Index>(init.dim_z()) != q)
    throw Error(ErrorKind::InvalidArgument, "initial membership params have the wrong shape");
  for (Eigen::Index i = 0; i < n; ++i)
    if (std::abs(resp.row(i).sum() - 1.0) > 1e-8)
      throw Error(ErrorKind::InvalidArgument, "responsibility row " + std::to_string(i) + " does not sum to 1");

  MembershipFit fit;
  if (g == 1) {
    fit.params = MembershipParams::zeros(1, static_cast<std::size_t>(q));
    fit.converged = true;
    return fit;
  }
  const detail::MembershipProblem prob{z, resp, g, q, n};
  Eigen::VectorXd theta = prob.pack(init);
  double f0 = prob.objective(theta);
  fit.objective_trace.push_back(f0);
  Eigen::VectorXd grad;
  Eigen::MatrixXd hess;
  for (int iter = 1; iter <= opt.max_iter; ++iter) {
    fit.iterations = iter;
    prob.derivatives(theta, grad, hess);
    fit.gradient_norm = grad.cwiseAbs().maxCoeff();
    if (fit.gradient_norm <= opt.tol) {
      fit.converged = true;
      break;
    }
    Eigen::VectorXd step;
    if (!detail::solve_psd(-hess, grad, step))
      throw Error(ErrorKind::SingularHessian, "membership information matrix is singular");
    // below rounding noise of the objective the full step is taken
    const bool below_noise = grad.dot(step) <= kNewtonNoiseFloor * (1.0 + std::abs(f0));
    double scale = 1.0;
    bool improved = below_noise;
    Eigen::VectorXd trial = theta + step;
    double f1 = below_noise ? prob.objective(trial) : f0;
    for (int h = 0; h < 40 && !below_noise; ++h, scale *= 0.5) {
      trial = theta + scale * step;
      f1 = prob.objective(trial);
      if (std::isfinite(f1) && f1 >= f0) {
        improved = true;
        break;
      }
    }
    if (!improved) break;
    theta = trial;
    f0 = f1;
    if (!below_noise) fit.objective_trace.push_back(f0);  // noise steps may wobble by ~1 ulp
    if (theta.cwiseAbs().maxCoeff() > kDivergenceBound)
      throw Error(ErrorKind::SeparationDetected,
                  "membership parameter exceeded " + std::to_string(kDivergenceBound));
  }
  fit.params = prob.unpack(theta);
  return fit;
}

inline MembershipParams fit_membership(const Eigen::MatrixXd& z, const Eigen::MatrixXd& resp,
                                       const MembershipParams& init, const MembershipOptions& opt = {}) {
  return fit_membership_traced(z, resp, init, opt).params;
}

}  // namespace lcsurv
