#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>

#include <Eigen/Dense>

#include "taplab/prior.hpp"
#include "taplab/scalar_channel.hpp"

namespace taplab {

/// y = X beta + noise with noise variance sigma2.
struct LinearModel {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  double sigma2 = 1.0;

  LinearModel() = default;
  LinearModel(Eigen::MatrixXd design, Eigen::VectorXd response, double noise_var)
      : X(std::move(design)), y(std::move(response)), sigma2(noise_var) {
    validate();
  }

  Eigen::Index n() const { return X.rows(); }
  Eigen::Index p() const { return X.cols(); }
  double delta_hat() const { return static_cast<double>(n()) / static_cast<double>(p()); }

  void validate() const {
    if (X.rows() != y.size()) throw std::invalid_argument("LinearModel: X rows and y length differ");
    if (X.cols() < 1 || X.rows() < 1) throw std::invalid_argument("LinearModel: empty design");
    if (!(sigma2 > 0.0) || !std::isfinite(sigma2)) throw std::invalid_argument("LinearModel: sigma2 must be positive");
  }
};

/// Per-coordinate moments (m, s) together with the natural parameters that
/// generate them and the log partition at those parameters.
struct VariationalState {
  Eigen::VectorXd m, s;
  Eigen::VectorXd lambda, gamma;
  Eigen::VectorXd log_partition;
  bool duals_fresh = false;
  std::optional<double> f_value;

  Eigen::Index p() const { return m.size(); }
  double S() const { return s.mean(); }
  double Q() const { return m.squaredNorm() / static_cast<double>(m.size()); }
  double V(double sigma2) const { return sigma2 + S() - Q(); }
};

/// Moments of the tilted prior at the given natural parameters. The result
/// is exact: no inversion is involved.
inline VariationalState state_from_duals(const Prior& prior, const Eigen::VectorXd& lambda,
                                         const Eigen::VectorXd& gamma) {
  if (lambda.size() != gamma.size()) throw std::invalid_argument("state_from_duals: size mismatch");
  VariationalState st;
  const auto p = lambda.size();
  st.m.resize(p);
  st.s.resize(p);
  st.log_partition.resize(p);
  st.lambda = lambda;
  st.gamma = gamma;
  for (Eigen::Index j = 0; j < p; ++j) {
    const auto ts = tilted_moments(prior, {lambda(j), gamma(j)});
    st.m(j) = ts.m;
    st.s(j) = ts.s;
    st.log_partition(j) = ts.log_partition;
  }
  st.duals_fresh = true;
  return st;
}

/// Solves the dual of every coordinate. Throws NotInDomain if some (m_j, s_j)
/// is not interior to the moment space.
inline VariationalState state_from_moments(const Prior& prior, const Eigen::VectorXd& m, const Eigen::VectorXd& s) {
  if (m.size() != s.size()) throw std::invalid_argument("state_from_moments: size mismatch");
  VariationalState st;
  const auto p = m.size();
  st.m = m;
  st.s = s;
  st.lambda.resize(p);
  st.gamma.resize(p);
  st.log_partition.resize(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const auto sol = dual_solve(prior, {m(j), s(j)});
    st.lambda(j) = sol.dual.lambda;
    st.gamma(j) = sol.dual.gamma;
    st.log_partition(j) = tilted_moments(prior, sol.dual).log_partition;
  }
  st.duals_fresh = true;
  return st;
}

/// Untilted marginals: m_j = E b0, s_j = E b0^2, zero relative entropy.
inline VariationalState null_state(const Prior& prior, Eigen::Index p) {
  return state_from_duals(prior, Eigen::VectorXd::Zero(p), Eigen::VectorXd::Zero(p));
}

inline void refresh_duals(const Prior& prior, VariationalState& st) {
  if (!st.duals_fresh) st = state_from_moments(prior, st.m, st.s);
}

}  // namespace taplab
