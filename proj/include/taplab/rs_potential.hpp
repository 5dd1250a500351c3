#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "taplab/prior.hpp"
#include "taplab/quadrature.hpp"
#include "taplab/scalar_channel.hpp"

namespace taplab {

struct NoBracket : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Noise level and aspect ratio delta = n / p of the asymptotic model.
struct ChannelParams {
  double sigma2 = 1.0;
  double delta = 1.0;
};

enum class Regime { Easy, Hard, Degenerate };

inline const char* to_string(Regime r) {
  switch (r) {
    case Regime::Easy: return "easy";
    case Regime::Hard: return "hard";
    case Regime::Degenerate: return "degenerate";
  }
  return "?";
}

/// Replica-symmetric potential
///   phi(gamma) = sigma^2 gamma / 2 - (delta / 2) log(gamma / (2 pi delta)) + i(gamma).
inline double phi(const Prior& prior, ChannelParams cp, double gamma, const QuadratureSpec& quad = {}) {
  if (!(gamma > 0.0)) throw std::domain_error("phi: gamma must be positive");
  const auto st = channel_stats(prior, gamma, gauss_hermite_cached(quad.nodes));
  return 0.5 * cp.sigma2 * gamma - 0.5 * cp.delta * std::log(gamma / (2.0 * std::numbers::pi * cp.delta)) +
         st.mutual_info;
}

/// phi'(gamma) through the I-MMSE relation: (sigma^2 - delta / gamma + mmse(gamma)) / 2.
inline double phi_prime(const Prior& prior, ChannelParams cp, double gamma, const QuadratureSpec& quad = {}) {
  if (!(gamma > 0.0)) throw std::domain_error("phi_prime: gamma must be positive");
  const double mm = mmse(prior, gamma, gauss_hermite_cached(quad.nodes));
  return 0.5 * (cp.sigma2 - cp.delta / gamma + mm);
}

/// phi'(gamma) by differentiating the quadrature for i(gamma) directly; no
/// I-MMSE identity involved.
inline double phi_prime_direct(const Prior& prior, ChannelParams cp, double gamma,
                               const QuadratureSpec& quad = {}) {
  if (!(gamma > 0.0)) throw std::domain_error("phi_prime_direct: gamma must be positive");
  const auto st = channel_stats(prior, gamma, gauss_hermite_cached(quad.nodes));
  return 0.5 * cp.sigma2 - 0.5 * cp.delta / gamma + st.mutual_info_slope;
}

/// phi''(gamma) = (delta / gamma^2 - E[Var(b0 | channel)^2]) / 2.
inline double phi_second(const Prior& prior, ChannelParams cp, double gamma, const QuadratureSpec& quad = {}) {
  if (!(gamma > 0.0)) throw std::domain_error("phi_second: gamma must be positive");
  const auto st = channel_stats(prior, gamma, gauss_hermite_cached(quad.nodes));
  return 0.5 * (cp.delta / (gamma * gamma) - st.mean_var_sq);
}

/// State-evolution recursion gamma_{k+1} = delta / (sigma^2 + mmse(gamma_k)),
/// started from gamma_1 = delta / (sigma^2 + E b0^2). Returns gamma_1..gamma_k.
inline std::vector<double> se_gamma_sequence(const Prior& prior, ChannelParams cp, int k,
                                             const QuadratureSpec& quad = {}) {
  const auto& rule = gauss_hermite_cached(quad.nodes);
  std::vector<double> seq;
  seq.reserve(std::max(k, 0));
  double g = cp.delta / (cp.sigma2 + prior.second_moment());
  for (int i = 0; i < k; ++i) {
    seq.push_back(g);
    g = cp.delta / (cp.sigma2 + mmse(prior, g, rule));
  }
  return seq;
}

struct GridSpec {
  int points = 400;
  double lo_factor = 1e-4;  // grid starts at lo_factor * delta / sigma^2
  double hi_factor = 10.0;  // and ends at hi_factor * delta / sigma^2
};

struct PotentialProfile {
  std::vector<double> gamma_grid;
  std::vector<double> phi;
  std::vector<double> phi_prime;
  std::vector<double> phi_second;
  double gamma_stat = 0.0;
  double gamma_alg = 0.0;
  double phi_second_at_stat = 0.0;
  /// Refined local minimizers of phi, increasing.
  std::vector<double> local_minima;
  Regime regime = Regime::Degenerate;
  /// |gamma_alg - gamma_stat| / gamma_stat, reported alongside the flag.
  double regime_margin = 0.0;
};

namespace detail {

// Bisection for a sign change of f on [lo, hi] with f(lo) < 0 <= f(hi).
template <class F>
double bisect_up(F&& f, double lo, double hi) {
  for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (f(mid) < 0.0) lo = mid;
    else hi = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

/// Scans phi on a log grid, then refines every local minimizer by bisection
/// on the fixed-point residual mmse(gamma) - delta / gamma + sigma^2 = 2 phi'.
/// gamma_alg is the first upward crossing of that residual, gamma_stat the
/// local minimizer with the lowest phi.
inline PotentialProfile solve_gammas(const Prior& prior, ChannelParams cp, const QuadratureSpec& quad = {},
                                     const GridSpec& grid = {}) {
  if (grid.points < 3) throw std::invalid_argument("solve_gammas: grid too small");
  const auto& rule = gauss_hermite_cached(quad.nodes);
  const double scale = cp.delta / cp.sigma2;
  const double lo = std::log(grid.lo_factor * scale), hi = std::log(grid.hi_factor * scale);

  PotentialProfile prof;
  prof.gamma_grid.resize(grid.points);
  prof.phi.resize(grid.points);
  prof.phi_prime.resize(grid.points);
  prof.phi_second.resize(grid.points);
  std::vector<double> resid(grid.points);
  for (int i = 0; i < grid.points; ++i) {
    const double g = std::exp(lo + (hi - lo) * i / (grid.points - 1));
    const auto st = channel_stats(prior, g, rule);
    prof.gamma_grid[i] = g;
    prof.phi[i] = 0.5 * cp.sigma2 * g - 0.5 * cp.delta * std::log(g / (2.0 * std::numbers::pi * cp.delta)) +
                  st.mutual_info;
    resid[i] = st.mmse - cp.delta / g + cp.sigma2;
    prof.phi_prime[i] = 0.5 * resid[i];
    prof.phi_second[i] = 0.5 * (cp.delta / (g * g) - st.mean_var_sq);
  }

  auto residual = [&](double g) { return mmse(prior, g, rule) - cp.delta / g + cp.sigma2; };

  for (int i = 0; i + 1 < grid.points; ++i) {
    if (resid[i] < 0.0 && resid[i + 1] >= 0.0) {
      prof.local_minima.push_back(detail::bisect_up(residual, prof.gamma_grid[i], prof.gamma_grid[i + 1]));
    }
  }
  if (prof.local_minima.empty()) throw NoBracket("solve_gammas: fixed-point residual never changes sign on the grid");

  prof.gamma_alg = prof.local_minima.front();
  std::vector<double> values;
  for (double g : prof.local_minima) values.push_back(phi(prior, cp, g, quad));
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] < values[best]) best = i;
  }
  bool tie = false;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i != best && std::abs(values[i] - values[best]) <= 1e-9) {
      tie = true;
      best = std::min(best, i);
    }
  }
  prof.gamma_stat = prof.local_minima[best];
  prof.phi_second_at_stat = phi_second(prior, cp, prof.gamma_stat, quad);
  prof.regime_margin = std::abs(prof.gamma_alg - prof.gamma_stat) / prof.gamma_stat;

  if (tie || prof.phi_second_at_stat <= 1e-8) {
    prof.regime = Regime::Degenerate;
  } else if (prof.regime_margin < 1e-6) {
    prof.regime = Regime::Easy;
  } else {
    prof.regime = Regime::Hard;
  }
  return prof;
}

/// Upper-left k x k blocks of the AMP state-evolution covariances:
/// K_g[i][j] = 1 / gamma_max(i,j), K_h[i][j] = delta / gamma_max(i,j) - sigma^2.
struct SECovariances {
  Eigen::MatrixXd K_g;
  Eigen::MatrixXd K_h;
  std::vector<double> gamma_seq;
};

inline SECovariances se_covariances(const std::vector<double>& gamma_seq, ChannelParams cp) {
  const auto k = static_cast<Eigen::Index>(gamma_seq.size());
  SECovariances out;
  out.gamma_seq = gamma_seq;
  out.K_g.resize(k, k);
  out.K_h.resize(k, k);
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) {
      const double g = gamma_seq[std::max(i, j)];
      out.K_g(i, j) = 1.0 / g;
      out.K_h(i, j) = cp.delta / g - cp.sigma2;
    }
  }
  return out;
}

inline SECovariances se_covariances(const Prior& prior, ChannelParams cp, int k, const QuadratureSpec& quad = {}) {
  if (k < 1) throw std::invalid_argument("se_covariances: k must be at least 1");
  return se_covariances(se_gamma_sequence(prior, cp, k, quad), cp);
}

}  // namespace taplab
