#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "taplab/linear_model.hpp"
#include "taplab/prior.hpp"
#include "taplab/rng.hpp"
#include "taplab/scalar_channel.hpp"

namespace taplab {

/// Positive root of 1/v = 1/tau2 + delta / (sigma2 + v), i.e. of
/// v^2 + (sigma2 + delta tau2 - tau2) v - sigma2 tau2 = 0.
inline double v_star(double tau2, double sigma2, double delta) {
  const double b = sigma2 + delta * tau2 - tau2;
  const double c = sigma2 * tau2;
  const double disc = std::sqrt(b * b + 4.0 * c);
  return b >= 0.0 ? 2.0 * c / (b + disc) : 0.5 * (disc - b);
}

/// Exact posterior for b ~ N(0, tau2 I).
struct GaussianOracle {
  double tau2 = 1.0;
  Eigen::MatrixXd Sigma;
  Eigen::VectorXd post_mean;
  double log_evidence = 0.0;
  double v_star = 0.0;
  /// logdet(tau2 X X^T + sigma2 I) from the n x n and the p x p factorization.
  double logdet_n = 0.0, logdet_p = 0.0;
};

inline GaussianOracle gaussian_posterior(const LinearModel& model, double tau2) {
  if (!(tau2 > 0.0)) throw std::invalid_argument("gaussian_posterior: tau2 must be positive");
  const auto n = model.n(), p = model.p();
  const double s2 = model.sigma2;
  GaussianOracle out;
  out.tau2 = tau2;

  Eigen::MatrixXd prec = model.X.transpose() * model.X / s2;
  prec.diagonal().array() += 1.0 / tau2;
  Eigen::LLT<Eigen::MatrixXd> llt_p(prec);
  if (llt_p.info() != Eigen::Success) throw std::runtime_error("gaussian_posterior: precision factorization failed");
  out.Sigma = llt_p.solve(Eigen::MatrixXd::Identity(p, p));
  out.Sigma = 0.5 * (out.Sigma + out.Sigma.transpose());
  out.post_mean = llt_p.solve(model.X.transpose() * model.y) / s2;

  Eigen::MatrixXd cov = tau2 * model.X * model.X.transpose();
  cov.diagonal().array() += s2;
  Eigen::LLT<Eigen::MatrixXd> llt_n(cov);
  if (llt_n.info() != Eigen::Success) throw std::runtime_error("gaussian_posterior: marginal covariance factorization failed");
  out.logdet_n = 2.0 * llt_n.matrixLLT().diagonal().array().log().sum();
  // Weinstein-Aronszajn: det(tau2 X X^T + s2 I_n) = s2^n det((tau2/s2) X^T X + I_p),
  // and (tau2/s2) X^T X + I_p = tau2 * prec.
  out.logdet_p = static_cast<double>(n) * std::log(s2) + 2.0 * llt_p.matrixLLT().diagonal().array().log().sum() +
                 static_cast<double>(p) * std::log(tau2);
  const double quad = model.y.dot(llt_n.solve(model.y));
  out.log_evidence = -0.5 * (static_cast<double>(n) * std::log(2.0 * std::numbers::pi) + out.logdet_n + quad);
  out.v_star = v_star(tau2, s2, model.delta_hat());
  return out;
}

struct EnumerationResult {
  double log_evidence = 0.0;
  Eigen::VectorXd marginal_m, marginal_s;
};

struct EnumerationGuard : std::length_error {
  using std::length_error::length_error;
};

namespace detail {

// Streaming log-sum-exp that rescales its accumulators when the running
// maximum moves, so weights spanning hundreds of orders of magnitude are fine.
struct LogSumExp {
  double max = -std::numeric_limits<double>::infinity();
  double sum = 0.0;

  // Returns the factor by which previously accumulated weights were rescaled.
  double add(double lw, double& w_out) {
    double rescale = 1.0;
    if (lw > max) {
      rescale = std::exp(max - lw);
      sum *= rescale;
      max = lw;
    }
    w_out = std::exp(lw - max);
    sum += w_out;
    return rescale;
  }
  double value() const { return max + std::log(sum); }
};

inline void check_enumerable(const LinearModel& model, const Prior& prior, int p_max_guard) {
  if (prior.kind() != PriorKind::ExplicitDiscrete) {
    throw std::invalid_argument("enumeration needs an explicit discrete prior");
  }
  if (model.p() > p_max_guard) throw EnumerationGuard("enumeration: p exceeds the guard");
  if (std::pow(static_cast<double>(prior.size()), static_cast<double>(model.p())) > 1e8) {
    throw EnumerationGuard("enumeration: more than 1e8 configurations");
  }
}

// Visits every b in support^p in odometer order, keeping r = y - X b current.
// visit(idx, r) receives atom indices and the residual.
template <class Visit>
void odometer(const LinearModel& model, const Prior& prior, Visit&& visit) {
  const auto p = model.p();
  const auto& loc = prior.locations();
  const int k = static_cast<int>(loc.size());
  std::vector<int> idx(p, 0);
  Eigen::VectorXd r = model.y - model.X * Eigen::VectorXd::Constant(p, loc[0]);
  while (true) {
    visit(idx, r);
    Eigen::Index j = 0;
    while (j < p) {
      if (idx[j] + 1 < k) {
        r -= model.X.col(j) * (loc[idx[j] + 1] - loc[idx[j]]);
        ++idx[j];
        break;
      }
      r -= model.X.col(j) * (loc[0] - loc[idx[j]]);
      idx[j] = 0;
      ++j;
    }
    if (j == p) return;
  }
}

}  // namespace detail

/// Exact log P(y) and posterior marginal moments by summing over support^p.
inline EnumerationResult enumerate_posterior(const LinearModel& model, const Prior& prior, int p_max_guard = 12) {
  detail::check_enumerable(model, prior, p_max_guard);
  const auto p = model.p();
  const auto& loc = prior.locations();
  std::vector<double> logw(prior.size());
  for (std::size_t i = 0; i < prior.size(); ++i) logw[i] = std::log(prior.weights()[i]);
  const double norm = -0.5 * static_cast<double>(model.n()) * std::log(2.0 * std::numbers::pi * model.sigma2);

  detail::LogSumExp lse;
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(p), m2 = Eigen::VectorXd::Zero(p);
  detail::odometer(model, prior, [&](const std::vector<int>& idx, const Eigen::VectorXd& r) {
    double lw = norm - r.squaredNorm() / (2.0 * model.sigma2);
    for (Eigen::Index j = 0; j < p; ++j) lw += logw[idx[j]];
    double w = 0.0;
    const double rescale = lse.add(lw, w);
    if (rescale != 1.0) {
      m1 *= rescale;
      m2 *= rescale;
    }
    for (Eigen::Index j = 0; j < p; ++j) {
      const double b = loc[idx[j]];
      m1(j) += w * b;
      m2(j) += w * b * b;
    }
  });
  EnumerationResult out;
  out.log_evidence = lse.value();
  out.marginal_m = m1 / lse.sum;
  out.marginal_s = m2 / lse.sum;
  return out;
}

/// The mean-field objective of the product of tilts in `state`, computed by
/// direct enumeration: E_q[log q(b) / P0(b) - log N(y; X b, sigma2 I)].
/// Equals KL(q || posterior) - log P(y), so it is never below -log P(y).
inline double enumerate_mean_field_objective(const LinearModel& model, const Prior& prior,
                                             const VariationalState& state, int p_max_guard = 12) {
  detail::check_enumerable(model, prior, p_max_guard);
  if (!state.duals_fresh) throw std::logic_error("enumerate_mean_field_objective: duals are stale");
  const auto p = model.p();
  const auto& loc = prior.locations();
  const int k = static_cast<int>(loc.size());
  // log q_j(b) - log P0(b) = lambda_j b - gamma_j b^2 / 2 - log Z_j.
  Eigen::MatrixXd log_ratio(p, k);
  for (Eigen::Index j = 0; j < p; ++j) {
    for (int a = 0; a < k; ++a) {
      log_ratio(j, a) = state.lambda(j) * loc[a] - 0.5 * state.gamma(j) * loc[a] * loc[a] - state.log_partition(j);
    }
  }
  std::vector<double> logw(k);
  for (int a = 0; a < k; ++a) logw[a] = std::log(prior.weights()[a]);
  const double norm = -0.5 * static_cast<double>(model.n()) * std::log(2.0 * std::numbers::pi * model.sigma2);
  double acc = 0.0, comp = 0.0;
  detail::odometer(model, prior, [&](const std::vector<int>& idx, const Eigen::VectorXd& r) {
    double lq = 0.0, lratio = 0.0;
    for (Eigen::Index j = 0; j < p; ++j) {
      lratio += log_ratio(j, idx[j]);
      lq += logw[idx[j]] + log_ratio(j, idx[j]);
    }
    const double q = std::exp(lq);
    const double term = q * (lratio - norm + r.squaredNorm() / (2.0 * model.sigma2));
    const double t = acc + term;
    comp += std::abs(acc) >= std::abs(term) ? (acc - t) + term : (term - t) + acc;
    acc = t;
  });
  return acc + comp;
}

struct MonteCarloEvidence {
  double mean = 0.0;       // estimate of P(y)
  double std_error = 0.0;  // of the mean
  /// Both on the scale exp(-shift) P(y) to avoid underflow; log P(y) ~ log(mean) + shift.
  double shift = 0.0;
};

/// Plain Monte Carlo estimate of E_{P0}[N(y; X b, sigma2 I)] over prior draws.
inline MonteCarloEvidence monte_carlo_evidence(const LinearModel& model, const Prior& prior, std::int64_t samples,
                                               std::uint64_t seed) {
  if (samples < 2) throw std::invalid_argument("monte_carlo_evidence: need at least two samples");
  CounterRng rng(seed);
  std::discrete_distribution<int> pick(prior.weights().begin(), prior.weights().end());
  const auto p = model.p();
  const double norm = -0.5 * static_cast<double>(model.n()) * std::log(2.0 * std::numbers::pi * model.sigma2);
  std::vector<double> lw(samples);
  Eigen::VectorXd b(p);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::int64_t t = 0; t < samples; ++t) {
    for (Eigen::Index j = 0; j < p; ++j) b(j) = prior.locations()[pick(rng)];
    lw[t] = norm - (model.y - model.X * b).squaredNorm() / (2.0 * model.sigma2);
    mx = std::max(mx, lw[t]);
  }
  double s1 = 0.0, s2 = 0.0;
  for (double v : lw) {
    const double w = std::exp(v - mx);
    s1 += w;
    s2 += w * w;
  }
  const double ns = static_cast<double>(samples);
  MonteCarloEvidence out;
  out.shift = mx;
  out.mean = s1 / ns;
  const double var = std::max(0.0, (s2 / ns - out.mean * out.mean) * ns / (ns - 1.0));
  out.std_error = std::sqrt(var / ns);
  return out;
}

struct FdReport {
  double max_rel_error = 0.0;
  Eigen::Index worst_index = -1;
  bool passed = true;
  Eigen::VectorXd fd, analytic;
};

/// Central differences of f against grad, coordinate by coordinate, with
/// error |fd - analytic| / (1 + |analytic|).
inline FdReport fd_check(const std::function<double(const Eigen::VectorXd&)>& f,
                         const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& grad,
                         const Eigen::VectorXd& point, double step, double tol) {
  if (!(step > 0.0)) throw std::invalid_argument("fd_check: step must be positive");
  FdReport rep;
  rep.analytic = grad(point);
  rep.fd.resize(point.size());
  Eigen::VectorXd x = point;
  for (Eigen::Index i = 0; i < point.size(); ++i) {
    x(i) = point(i) + step;
    const double fp = f(x);
    x(i) = point(i) - step;
    const double fm = f(x);
    x(i) = point(i);
    rep.fd(i) = (fp - fm) / (2.0 * step);
    const double err = std::abs(rep.fd(i) - rep.analytic(i)) / (1.0 + std::abs(rep.analytic(i)));
    if (rep.worst_index < 0 || err > rep.max_rel_error) {
      rep.max_rel_error = err;
      rep.worst_index = i;
    }
  }
  rep.passed = rep.max_rel_error < tol;
  return rep;
}

}  // namespace taplab
