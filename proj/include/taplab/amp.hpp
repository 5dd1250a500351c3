#pragma once

#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "taplab/free_energy.hpp"
#include "taplab/linear_model.hpp"
#include "taplab/prior.hpp"
#include "taplab/quadrature.hpp"
#include "taplab/rs_potential.hpp"
#include "taplab/scalar_channel.hpp"

namespace taplab {

struct AMPRecord {
  int k = 0;
  double gamma = 0.0;
  /// |m^{k+1} - b0|^2 / p, if the truth was supplied.
  std::optional<double> mse_empirical;
  /// State-evolution prediction mmse(gamma_k).
  double mse_se = 0.0;
  /// |grad F_TAP(m^{k+1}, s^{k+1})|^2 / p, if requested.
  std::optional<double> grad_norm_sq_per_p;
};

struct AMPOptions {
  /// Asymptotic aspect ratio used by the iteration; 0 means n / p of the model.
  double delta = 0.0;
  QuadratureSpec quad{};
  bool track_gradient = false;
  /// Keep m^1..m^T and z^1..z^T for state-evolution diagnostics.
  bool keep_iterates = false;
};

/// After T iterations: k = T, (m, s) = (m^{T+1}, s^{T+1}) generated by the
/// tilt (lambda, gamma) = (gamma_T x^T, gamma_T), z = z^T.
struct AMPState {
  int k = 0;
  Eigen::VectorXd m, s, z;
  Eigen::VectorXd lambda;
  double gamma_k = 0.0;
  std::vector<AMPRecord> history;
  /// Columns m^1..m^T and z^1..z^T when keep_iterates is set.
  std::vector<Eigen::VectorXd> m_iterates, z_iterates;

  /// Variational state of the last iterate; duals are exact.
  VariationalState variational_state(const Prior& prior) const {
    return state_from_duals(prior, lambda, Eigen::VectorXd::Constant(lambda.size(), gamma_k));
  }
};

/// Bayes-AMP with the deterministic state-evolution Onsager coefficient:
///   z^k = y - X m^k + (gamma_{k-1} mmse(gamma_{k-1}) / delta) z^{k-1},
///   (m^{k+1}, s^{k+1}) = denoise(m^k + X^T z^k / delta, gamma_k),
///   gamma_{k+1} = delta / (sigma^2 + mmse(gamma_k)),
/// from z^0 = 0, m^1 = 0 and gamma_1 = delta / (sigma^2 + E b0^2).
inline AMPState amp_run(const LinearModel& model, const Prior& prior, int T, const AMPOptions& opt = {},
                        const std::optional<Eigen::VectorXd>& truth = std::nullopt) {
  if (T < 1) throw std::invalid_argument("amp_run: T must be at least 1");
  const double delta = opt.delta > 0.0 ? opt.delta : model.delta_hat();
  const ChannelParams cp{model.sigma2, delta};
  const auto& rule = gauss_hermite_cached(opt.quad.nodes);
  const auto gammas = se_gamma_sequence(prior, cp, T, opt.quad);
  const auto p = model.p();

  AMPState st;
  Eigen::VectorXd m = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd z = Eigen::VectorXd::Zero(model.n());
  double onsager = 0.0;
  for (int k = 1; k <= T; ++k) {
    const double g = gammas[k - 1];
    if (opt.keep_iterates) st.m_iterates.push_back(m);
    z = model.y - model.X * m + onsager * z;
    if (opt.keep_iterates) st.z_iterates.push_back(z);
    const Eigen::VectorXd x = m + model.X.transpose() * z / delta;
    auto [m_next, s_next] = denoise(prior, x, g);
    const double mm = mmse(prior, g, rule);
    onsager = g * mm / delta;

    AMPRecord rec;
    rec.k = k;
    rec.gamma = g;
    rec.mse_se = mm;
    if (truth) rec.mse_empirical = (m_next - *truth).squaredNorm() / static_cast<double>(p);
    st.lambda = g * x;
    st.gamma_k = g;
    if (opt.track_gradient) {
      const auto vs = state_from_duals(prior, st.lambda, Eigen::VectorXd::Constant(p, g));
      rec.grad_norm_sq_per_p = tap_gradient(model, prior, vs).norm_sq_per_p();
    }
    st.history.push_back(rec);
    m = std::move(m_next);
    st.s = std::move(s_next);
  }
  st.k = T;
  st.m = std::move(m);
  st.z = std::move(z);
  return st;
}

struct SEDiagnostics {
  Eigen::MatrixXd empirical_h;  // V^T V / p with columns nu^i = m^i - b0
  Eigen::MatrixXd empirical_g;  // R^T R / n with columns r^i = -z^i
  SECovariances predicted;
  double max_dev_h = 0.0;  // |V^T V / p - K_h|_max
  double max_dev_g = 0.0;  // |R^T R / n - delta K_g|_max
};

/// Compares the empirical Gram matrices of the first k AMP iterates with the
/// state-evolution covariances. Requires an AMPState built with keep_iterates.
inline SEDiagnostics se_diagnostics(const AMPState& st, const LinearModel& model, const Prior& prior,
                                    const Eigen::VectorXd& truth, int k, const AMPOptions& opt = {}) {
  if (k < 1 || k > static_cast<int>(st.m_iterates.size())) {
    throw std::invalid_argument("se_diagnostics: k exceeds the stored iterates");
  }
  const double delta = opt.delta > 0.0 ? opt.delta : model.delta_hat();
  const auto p = model.p(), n = model.n();
  Eigen::MatrixXd V(p, k), R(n, k);
  for (int i = 0; i < k; ++i) {
    V.col(i) = st.m_iterates[i] - truth;
    R.col(i) = -st.z_iterates[i];
  }
  SEDiagnostics out;
  out.empirical_h = V.transpose() * V / static_cast<double>(p);
  out.empirical_g = R.transpose() * R / static_cast<double>(n);
  out.predicted = se_covariances(prior, {model.sigma2, delta}, k, opt.quad);
  out.max_dev_h = (out.empirical_h - out.predicted.K_h).cwiseAbs().maxCoeff();
  out.max_dev_g = (out.empirical_g - delta * out.predicted.K_g).cwiseAbs().maxCoeff();
  return out;
}

}  // namespace taplab
