#pragma once

#include <cmath>
#include <map>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace taplab {

/// Gauss-Hermite rule for expectations over a standard normal:
/// E[f(Z)] ~= sum_i weights[i] * f(nodes[i]), weights summing to one.
struct GaussHermiteRule {
  std::vector<double> nodes;
  std::vector<double> weights;

  std::size_t size() const { return nodes.size(); }
};

/// Quadrature over the Gaussian noise z in the scalar channel.
struct QuadratureSpec {
  int nodes = 61;
};

namespace detail {

// Orthonormal Hermite polynomials for weight exp(-x^2), evaluated at x.
// Returns phi_{n-1}(x), phi_n(x) and accumulates sum_{k<n} phi_k(x)^2.
inline void orthonormal_hermite(int n, double x, double& prev, double& cur, double& sumsq) {
  double p0 = std::pow(std::numbers::pi, -0.25);
  double p1 = std::numbers::sqrt2 * x * p0;
  sumsq = p0 * p0;
  if (n == 1) {
    prev = p0;
    cur = p1;
    return;
  }
  sumsq += p1 * p1;
  for (int k = 1; k < n - 1; ++k) {
    double p2 = std::sqrt(2.0 / (k + 1)) * x * p1 - std::sqrt(static_cast<double>(k) / (k + 1)) * p0;
    p0 = p1;
    p1 = p2;
    sumsq += p1 * p1;
  }
  prev = p1;
  cur = std::sqrt(2.0 / n) * x * p1 - std::sqrt((n - 1.0) / n) * p0;
}

}  // namespace detail

/// Nodes from the Golub-Welsch eigenproblem, polished by Newton on the
/// orthonormal recurrence. Weights use the Christoffel form
/// 1 / sum_k phi_k(x)^2, which keeps tail weights accurate in relative terms.
inline GaussHermiteRule gauss_hermite(int n) {
  if (n < 1) throw std::invalid_argument("gauss_hermite: need at least one node");
  GaussHermiteRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  if (n == 1) {
    rule.nodes[0] = 0.0;
    rule.weights[0] = 1.0;
    return rule;
  }

  Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    jacobi(k, k - 1) = jacobi(k - 1, k) = std::sqrt(k / 2.0);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jacobi, Eigen::EigenvaluesOnly);
  const Eigen::VectorXd& roots = es.eigenvalues();

  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    double x = roots(i);
    double prev = 0, cur = 0, sumsq = 0;
    for (int it = 0; it < 4; ++it) {
      detail::orthonormal_hermite(n, x, prev, cur, sumsq);
      double deriv = std::sqrt(2.0 * n) * prev;
      if (deriv == 0.0) break;
      double step = cur / deriv;
      x -= step;
      if (std::abs(step) < 1e-15 * (1.0 + std::abs(x))) break;
    }
    detail::orthonormal_hermite(n, x, prev, cur, sumsq);
    // Physicists' rule (weight exp(-x^2)) mapped to the standard normal.
    rule.nodes[i] = std::numbers::sqrt2 * x;
    rule.weights[i] = 1.0 / sumsq / std::sqrt(std::numbers::pi);
    total += rule.weights[i];
  }
  for (auto& w : rule.weights) w /= total;
  if (n % 2 == 1) rule.nodes[n / 2] = 0.0;
  return rule;
}

/// Memoized rule; safe to call from several threads.
inline const GaussHermiteRule& gauss_hermite_cached(int n) {
  static std::mutex mu;
  static std::map<int, GaussHermiteRule> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it == cache.end()) it = cache.emplace(n, gauss_hermite(n)).first;
  return it->second;
}

}  // namespace taplab
