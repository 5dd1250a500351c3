#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "taplab/prior.hpp"
#include "taplab/quadrature.hpp"

namespace taplab {

struct DegenerateTilt : std::domain_error {
  using std::domain_error::domain_error;
};

struct NotInDomain : std::domain_error {
  using std::domain_error::domain_error;
};

/// Natural parameters of P_{lambda,gamma}(db) ~ exp(-gamma b^2 / 2 + lambda b) P0(db).
struct DualPair {
  double lambda = 0.0;
  double gamma = 0.0;
};

/// First and second moment of a coordinate law.
struct MomentPair {
  double m = 0.0;
  double s = 0.0;
};

/// Moments of a tilted prior, its log partition function and the covariance
/// of (b, b^2), which is the Jacobian of the moment map in (lambda, -gamma/2).
struct TiltedSummary {
  double m = 0.0;
  double s = 0.0;
  double log_partition = 0.0;
  double var_b = 0.0;
  double cov_b_b2 = 0.0;
  double var_b2 = 0.0;

  Eigen::Matrix2d cov_matrix() const {
    Eigen::Matrix2d c;
    c << var_b, cov_b_b2, cov_b_b2, var_b2;
    return c;
  }
};

/// Cap on |lambda| and |gamma| in the dual solver.
inline constexpr double kDualCap = 1e6;
/// Absolute tolerance for classifying a moment pair as lying on the boundary of Gamma.
inline constexpr double kGammaBoundaryTol = 1e-10;

inline TiltedSummary tilted_moments(const Prior& prior, const DualPair& dual) {
  if (!std::isfinite(dual.lambda) || !std::isfinite(dual.gamma)) {
    throw DegenerateTilt("tilted_moments: non-finite natural parameters");
  }
  const auto& loc = prior.locations();
  const auto& w = prior.weights();
  const std::size_t k = loc.size();

  double shift = -std::numeric_limits<double>::infinity();
  thread_local std::vector<double> expo;
  expo.resize(k);
  for (std::size_t i = 0; i < k; ++i) {
    const double b = loc[i];
    expo[i] = std::log(w[i]) - 0.5 * dual.gamma * b * b + dual.lambda * b;
    shift = std::max(shift, expo[i]);
  }
  double z = 0.0, m1 = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    expo[i] = std::exp(expo[i] - shift);
    z += expo[i];
    m1 += expo[i] * loc[i];
  }
  if (!(z > 0.0) || !std::isfinite(z)) throw DegenerateTilt("tilted_moments: all tilted weights underflow");
  m1 /= z;

  // Central moments avoid the cancellation in s - m^2 for concentrated tilts.
  double c2 = 0.0, c3 = 0.0, c4 = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double d = loc[i] - m1;
    const double pd2 = expo[i] * d * d;
    c2 += pd2;
    c3 += pd2 * d;
    c4 += pd2 * d * d;
  }
  c2 /= z;
  c3 /= z;
  c4 /= z;

  TiltedSummary out;
  out.m = m1;
  out.s = c2 + m1 * m1;
  out.log_partition = shift + std::log(z);
  out.var_b = c2;
  // b^2 - E b^2 = d^2 + 2 m d - c2 with d = b - m.
  out.cov_b_b2 = c3 + 2.0 * m1 * c2;
  out.var_b2 = c4 - c2 * c2 + 4.0 * m1 * c3 + 4.0 * m1 * m1 * c2;
  return out;
}

/// Inverse of the covariance of (b, b^2) under the tilt, which is the Hessian
/// of -h in (m, s). The determinant is formed as Var(b) times the residual
/// variance of b^2 regressed on b, summed atom by atom; the textbook
/// var_b * var_b2 - cov^2 loses all digits for nearly two-point tilts.
inline Eigen::Matrix2d tilted_covariance_inverse(const Prior& prior, const DualPair& dual) {
  const auto ts = tilted_moments(prior, dual);
  const auto& loc = prior.locations();
  const auto& w = prior.weights();
  double shift = -std::numeric_limits<double>::infinity();
  std::vector<double> pr(loc.size());
  for (std::size_t i = 0; i < loc.size(); ++i) {
    pr[i] = std::log(w[i]) - 0.5 * dual.gamma * loc[i] * loc[i] + dual.lambda * loc[i];
    shift = std::max(shift, pr[i]);
  }
  double z = 0.0;
  for (auto& v : pr) z += (v = std::exp(v - shift));
  const double c2 = ts.var_b;
  if (!(c2 > 0.0)) throw std::domain_error("tilted_covariance_inverse: tilt is a point mass");
  double c3 = 0.0;
  for (std::size_t i = 0; i < loc.size(); ++i) {
    const double d = loc[i] - ts.m;
    c3 += pr[i] * d * d * d;
  }
  c3 /= z;
  double resid = 0.0;
  for (std::size_t i = 0; i < loc.size(); ++i) {
    const double d = loc[i] - ts.m;
    const double e = d * d - c2 - (c3 / c2) * d;
    resid += pr[i] * e * e;
  }
  resid /= z;
  const double det = c2 * resid;
  if (!(det > 0.0) || !std::isfinite(1.0 / det)) {
    throw std::domain_error("tilted_covariance_inverse: singular covariance (boundary of the moment space)");
  }
  Eigen::Matrix2d inv;
  inv << ts.var_b2 / det, -ts.cov_b_b2 / det, -ts.cov_b_b2 / det, ts.var_b / det;
  return inv;
}

/// Probability that a draw from the tilted prior is an exact zero, i.e. the
/// tilted weight of the point mass at the origin.
inline double tilted_zero_probability(const Prior& prior, const DualPair& dual) {
  const int iz = prior.zero_index();
  if (iz < 0 || prior.zero_mass() <= 0.0) return 0.0;
  const auto& loc = prior.locations();
  const auto& w = prior.weights();
  double shift = -std::numeric_limits<double>::infinity();
  std::vector<double> expo(loc.size());
  for (std::size_t i = 0; i < loc.size(); ++i) {
    expo[i] = std::log(w[i]) - 0.5 * dual.gamma * loc[i] * loc[i] + dual.lambda * loc[i];
    shift = std::max(shift, expo[i]);
  }
  double z = 0.0;
  for (double e : expo) z += std::exp(e - shift);
  const double at_zero = std::exp(expo[iz] - shift) / z;
  return at_zero * prior.zero_mass() / w[iz];
}

/// Posterior inclusion probability <1{b != 0}> under the tilted prior.
inline double inclusion_probability(const Prior& prior, const DualPair& dual) {
  return 1.0 - tilted_zero_probability(prior, dual);
}

enum class GammaRegion { Interior, Boundary, Exterior };

/// Lower envelope (a(m) + b(m)) m - a(m) b(m) of the moment space: the
/// piecewise-linear interpolation of m^2 between consecutive atoms.
inline double gamma_lower_envelope(const Prior& prior, double m) {
  const auto& loc = prior.locations();
  if (m <= loc.front()) return m * m;
  if (m >= loc.back()) return m * m;
  auto hi = std::lower_bound(loc.begin(), loc.end(), m);
  if (*hi == m) return m * m;
  const double b = *hi;
  const double a = *(hi - 1);
  return (a + b) * m - a * b;
}

/// Upper envelope (a(P0) + b(P0)) m - a(P0) b(P0).
inline double gamma_upper_envelope(const Prior& prior, double m) {
  const double a = prior.lower(), b = prior.upper();
  return (a + b) * m - a * b;
}

inline GammaRegion gamma_region(const Prior& prior, const MomentPair& mp) {
  const double tol = kGammaBoundaryTol;
  const double a = prior.lower(), b = prior.upper();
  if (!std::isfinite(mp.m) || !std::isfinite(mp.s)) return GammaRegion::Exterior;
  if (mp.m < a - tol || mp.m > b + tol) return GammaRegion::Exterior;
  const double lo = gamma_lower_envelope(prior, mp.m);
  const double hi = gamma_upper_envelope(prior, mp.m);
  if (mp.s < lo - tol || mp.s > hi + tol) return GammaRegion::Exterior;
  if (mp.m - a <= tol || b - mp.m <= tol || mp.s - lo <= tol || hi - mp.s <= tol) return GammaRegion::Boundary;
  return GammaRegion::Interior;
}

/// Nudges a moment pair into the interior of Gamma: m is kept a relative
/// 1e-9 away from the support endpoints, s a relative `eps` of the envelope
/// gap away from either envelope (and never within the boundary tolerance).
inline MomentPair project_interior(const Prior& prior, MomentPair mp, double eps = 1e-9) {
  const double a = prior.lower(), b = prior.upper();
  const double span = b - a;
  const double m_margin = std::max(1e-9 * span, 4.0 * kGammaBoundaryTol);
  mp.m = std::clamp(mp.m, a + m_margin, b - m_margin);
  const double lo = gamma_lower_envelope(prior, mp.m);
  const double hi = gamma_upper_envelope(prior, mp.m);
  const double gap = hi - lo;
  // Near the corners the gap shrinks; keep clear of the classification tolerance.
  const double margin = std::min(std::max(eps * gap, 2.0 * kGammaBoundaryTol), 0.5 * gap);
  mp.s = std::clamp(mp.s, lo + margin, hi - margin);
  return mp;
}

struct DualSolveResult {
  DualPair dual;
  bool converged = false;
  int iterations = 0;
  double residual = 0.0;
};

/// Inverts the moment map by damped Newton ascent on the concave objective
/// -gamma s / 2 + lambda m - log E exp(-gamma b^2 / 2 + lambda b).
/// Throws NotInDomain unless (m, s) is interior to Gamma. Non-convergence is
/// reported through the flag with the best iterate.
inline DualSolveResult dual_solve(const Prior& prior, const MomentPair& mp,
                                  std::optional<DualPair> init = std::nullopt, double tol = 1e-10,
                                  int max_iters = 200) {
  if (gamma_region(prior, mp) != GammaRegion::Interior) {
    throw NotInDomain("dual_solve: moment pair is not interior to the moment space");
  }
  DualPair cur = init.value_or(DualPair{});
  auto objective = [&](const DualPair& d, const TiltedSummary& t) {
    return -0.5 * d.gamma * mp.s + d.lambda * mp.m - t.log_partition;
  };
  TiltedSummary ts = tilted_moments(prior, cur);
  double obj = objective(cur, ts);
  Eigen::Vector2d r(mp.m - ts.m, mp.s - ts.s);

  DualSolveResult out;
  for (int it = 0; it < max_iters; ++it) {
    out.iterations = it;
    if (r.norm() < tol) {
      out.converged = true;
      break;
    }
    // Ascent direction in (lambda, -gamma/2): Cov^{-1} r.
    Eigen::Matrix2d cov = ts.cov_matrix();
    Eigen::Vector2d dir;
    const double det = cov.determinant();
    if (det > 1e-300 * std::max(1.0, cov.squaredNorm())) {
      dir = cov.ldlt().solve(r);
    } else {
      dir = r;
    }
    double step = 1.0;
    bool accepted = false;
    for (int h = 0; h < 60; ++h) {
      DualPair trial{cur.lambda + step * dir(0), cur.gamma - 2.0 * step * dir(1)};
      if (std::abs(trial.lambda) <= 2 * kDualCap && std::abs(trial.gamma) <= 2 * kDualCap) {
        TiltedSummary tt = tilted_moments(prior, trial);
        const double tobj = objective(trial, tt);
        Eigen::Vector2d tr(mp.m - tt.m, mp.s - tt.s);
        if (tobj > obj || (tobj >= obj - 1e-14 * (1.0 + std::abs(obj)) && tr.norm() < r.norm())) {
          cur = trial;
          ts = tt;
          obj = tobj;
          r = tr;
          accepted = true;
          break;
        }
      }
      step *= 0.5;
    }
    if (!accepted) break;
    if (std::abs(cur.lambda) > kDualCap || std::abs(cur.gamma) > kDualCap) {
      cur.lambda = std::clamp(cur.lambda, -kDualCap, kDualCap);
      cur.gamma = std::clamp(cur.gamma, -kDualCap, kDualCap);
      ts = tilted_moments(prior, cur);
      r = Eigen::Vector2d(mp.m - ts.m, mp.s - ts.s);
      out.iterations = it + 1;
      break;
    }
    out.iterations = it + 1;
  }
  // Near the boundary the dual map has a large Jacobian, so a moment residual
  // at tol can still leave visible error in (lambda, gamma). A few plain
  // Newton steps remove it while they keep reducing the residual.
  if (r.norm() < tol) {
    for (int polish = 0; polish < 3 && r.norm() > 0.0; ++polish) {
      const Eigen::Vector2d dir = ts.cov_matrix().ldlt().solve(r);
      DualPair trial{cur.lambda + dir(0), cur.gamma - 2.0 * dir(1)};
      if (!std::isfinite(trial.lambda) || !std::isfinite(trial.gamma)) break;
      TiltedSummary tt = tilted_moments(prior, trial);
      Eigen::Vector2d tr(mp.m - tt.m, mp.s - tt.s);
      if (!(tr.norm() < r.norm())) break;
      cur = trial;
      ts = tt;
      r = tr;
    }
  }
  out.dual = cur;
  out.residual = r.norm();
  out.converged = out.residual < tol;
  return out;
}

/// -h(m, s) evaluated at a known dual point: -gamma s / 2 + lambda m - log Z.
inline double neg_entropy_at(const DualPair& dual, const MomentPair& mp, double log_partition) {
  return -0.5 * dual.gamma * mp.s + dual.lambda * mp.m - log_partition;
}

/// Relative entropy KL(P_{lambda(m,s), gamma(m,s)} || P0).
inline double neg_entropy(const Prior& prior, const MomentPair& mp) {
  auto sol = dual_solve(prior, mp);
  const auto ts = tilted_moments(prior, sol.dual);
  return std::max(0.0, neg_entropy_at(sol.dual, mp, ts.log_partition));
}

/// Posterior-mean denoiser of the scalar channel: coordinatewise
/// (<b>, <b^2>) at natural parameters (gamma x_j, gamma).
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> denoise(const Prior& prior, const Eigen::VectorXd& x,
                                                           double gamma) {
  Eigen::VectorXd m(x.size()), s(x.size());
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const auto ts = tilted_moments(prior, {gamma * x(j), gamma});
    m(j) = ts.m;
    s(j) = ts.s;
  }
  return {m, s};
}

/// Expectations over the scalar channel lambda = gamma b0 + sqrt(gamma) z,
/// computed in one pass: exact sum over prior atoms, Gauss-Hermite over z.
struct ChannelStats {
  double mmse = 0.0;
  /// Mutual information i(gamma) between b0 and lambda.
  double mutual_info = 0.0;
  /// E[Var(b0 | lambda)^2].
  double mean_var_sq = 0.0;
  /// d i / d gamma, differentiated under the integral at fixed (b0, z).
  double mutual_info_slope = 0.0;
};

inline ChannelStats channel_stats(const Prior& prior, double gamma, const GaussHermiteRule& rule) {
  if (gamma < 0.0) throw std::domain_error("channel_stats: gamma must be nonnegative");
  const auto& loc = prior.locations();
  const auto& w = prior.weights();
  const std::size_t k = loc.size();
  std::vector<double> logw(k), expo(k);
  for (std::size_t i = 0; i < k; ++i) logw[i] = std::log(w[i]) - 0.5 * gamma * loc[i] * loc[i];
  const double rg = std::sqrt(gamma);

  ChannelStats out;
  for (std::size_t a = 0; a < k; ++a) {
    const double b0 = loc[a];
    double acc_err = 0.0, acc_mi = 0.0, acc_v2 = 0.0, acc_slope = 0.0;
    for (std::size_t q = 0; q < rule.size(); ++q) {
      const double z = rule.nodes[q];
      const double lam = gamma * b0 + rg * z;
      double shift = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < k; ++i) {
        expo[i] = logw[i] + lam * loc[i];
        shift = std::max(shift, expo[i]);
      }
      double zsum = 0.0, mean = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        expo[i] = std::exp(expo[i] - shift);
        zsum += expo[i];
        mean += expo[i] * loc[i];
      }
      mean /= zsum;
      double var = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        const double d = loc[i] - mean;
        var += expo[i] * d * d;
      }
      var /= zsum;
      const double logz = shift + std::log(zsum);
      const double wq = rule.weights[q];
      const double err = b0 - mean;
      acc_err += wq * err * err;
      acc_mi += wq * (0.5 * gamma * b0 * b0 - logz);
      acc_v2 += wq * var * var;
      // d/dgamma of gamma b0^2/2 - log Z at fixed (b0, z).
      const double second = var + mean * mean;
      double slope = 0.5 * b0 * b0 + 0.5 * second - b0 * mean;
      if (gamma > 0.0) slope -= z * mean / (2.0 * rg);
      acc_slope += wq * slope;
    }
    out.mmse += w[a] * acc_err;
    out.mutual_info += w[a] * acc_mi;
    out.mean_var_sq += w[a] * acc_v2;
    out.mutual_info_slope += w[a] * acc_slope;
  }
  return out;
}

inline ChannelStats channel_stats(const Prior& prior, double gamma, const QuadratureSpec& quad = {}) {
  return channel_stats(prior, gamma, gauss_hermite_cached(quad.nodes));
}

/// Bayes risk of estimating b0 from gamma b0 + sqrt(gamma) z.
inline double mmse(const Prior& prior, double gamma, const QuadratureSpec& quad = {}) {
  return channel_stats(prior, gamma, quad).mmse;
}

inline double mmse(const Prior& prior, double gamma, const GaussHermiteRule& rule) {
  return channel_stats(prior, gamma, rule).mmse;
}

}  // namespace taplab
