#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "taplab/linear_model.hpp"
#include "taplab/prior.hpp"
#include "taplab/scalar_channel.hpp"

namespace taplab {

enum class Objective { TAP, MF };

inline const char* to_string(Objective o) { return o == Objective::TAP ? "tap" : "mf"; }

namespace detail {

// Neumaier's compensated summation.
struct CompensatedSum {
  double sum = 0.0;
  double comp = 0.0;

  void add(double x) {
    const double t = sum + x;
    if (std::abs(sum) >= std::abs(x)) comp += (sum - t) + x;
    else comp += (x - t) + sum;
    sum = t;
  }
  double value() const { return sum + comp; }
};

inline const VariationalState& fresh(const Prior& prior, const VariationalState& st, VariationalState& scratch) {
  if (st.duals_fresh) return st;
  scratch = state_from_moments(prior, st.m, st.s);
  return scratch;
}

}  // namespace detail

/// sum_j KL(tilted_j || P0) = sum_j -h(m_j, s_j), from the cached duals.
inline double entropy_sum(const VariationalState& st) {
  if (!st.duals_fresh) throw std::logic_error("entropy_sum: duals are stale");
  detail::CompensatedSum acc;
  for (Eigen::Index j = 0; j < st.p(); ++j) {
    acc.add(-0.5 * st.gamma(j) * st.s(j) + st.lambda(j) * st.m(j) - st.log_partition(j));
  }
  return acc.value();
}

/// Variance excess S(s) - Q(m) = mean(s_j - m_j^2), summed coordinatewise so
/// that it stays nonnegative to rounding.
inline double variance_excess(const VariationalState& st) {
  detail::CompensatedSum acc;
  for (Eigen::Index j = 0; j < st.p(); ++j) acc.add(st.s(j) - st.m(j) * st.m(j));
  return acc.value() / static_cast<double>(st.p());
}

/// Free energy
///   (n/2) log 2 pi sigma^2 + sum_j -h(m_j, s_j) + |y - X m|^2 / (2 sigma^2) + coupling,
/// with coupling (n/2) log(1 + (S - Q) / sigma^2) for TAP and
/// (n / (2 sigma^2)) (S - Q) for naive mean field.
inline double free_energy(const LinearModel& model, const Prior& prior, const VariationalState& state,
                          Objective obj) {
  VariationalState scratch;
  const auto& st = detail::fresh(prior, state, scratch);
  if (st.p() != model.p()) throw std::invalid_argument("free_energy: state and model sizes differ");
  const double n = static_cast<double>(model.n());
  const double excess = variance_excess(st);
  if (!(model.sigma2 + excess > 0.0)) throw std::domain_error("free_energy: V(m,s) is not positive");
  const double resid = (model.y - model.X * st.m).squaredNorm();
  const double coupling = obj == Objective::TAP ? 0.5 * n * std::log1p(excess / model.sigma2)
                                                : 0.5 * n * excess / model.sigma2;
  return 0.5 * n * std::log(2.0 * std::numbers::pi * model.sigma2) + entropy_sum(st) +
         resid / (2.0 * model.sigma2) + coupling;
}

inline double tap_energy(const LinearModel& model, const Prior& prior, const VariationalState& state) {
  return free_energy(model, prior, state, Objective::TAP);
}

inline double mf_energy(const LinearModel& model, const Prior& prior, const VariationalState& state) {
  return free_energy(model, prior, state, Objective::MF);
}

/// tap_energy - mf_energy = (n/2) [log(1 + x) - x], x = (S - Q) / sigma^2.
inline double onsager_correction(const LinearModel& model, const VariationalState& st) {
  const double x = variance_excess(st) / model.sigma2;
  return 0.5 * static_cast<double>(model.n()) * (std::log1p(x) - x);
}

struct Gradient {
  Eigen::VectorXd m, s;

  double norm_sq() const { return m.squaredNorm() + s.squaredNorm(); }
  double norm_sq_per_p() const { return norm_sq() / static_cast<double>(m.size()); }
  Eigen::VectorXd stacked() const {
    Eigen::VectorXd g(m.size() + s.size());
    g << m, s;
    return g;
  }
};

/// Gradient in (m, s):
///   grad_m = lambda - X^T (y - X m) / sigma^2 - (n/p) m / V,
///   grad_s = -gamma / 2 + (n/p) / (2 V),
/// where V = sigma^2 + S - Q for TAP and V = sigma^2 for mean field.
inline Gradient free_energy_gradient(const LinearModel& model, const Prior& prior, const VariationalState& state,
                                     Objective obj) {
  VariationalState scratch;
  const auto& st = detail::fresh(prior, state, scratch);
  const double ratio = model.delta_hat();
  const double v = obj == Objective::TAP ? model.sigma2 + variance_excess(st) : model.sigma2;
  if (!(v > 0.0)) throw std::domain_error("free_energy_gradient: V(m,s) is not positive");
  Gradient g;
  g.m = st.lambda - model.X.transpose() * (model.y - model.X * st.m) / model.sigma2 - (ratio / v) * st.m;
  g.s = -0.5 * st.gamma.array() + ratio / (2.0 * v);
  return g;
}

inline Gradient tap_gradient(const LinearModel& model, const Prior& prior, const VariationalState& state) {
  return free_energy_gradient(model, prior, state, Objective::TAP);
}

inline Gradient mf_gradient(const LinearModel& model, const Prior& prior, const VariationalState& state) {
  return free_energy_gradient(model, prior, state, Objective::MF);
}

/// Hessian of the TAP free energy in the coordinates (m, s), ordered as
/// [m_1..m_p, s_1..s_p]. The entropy part is block diagonal (per-coordinate
/// inverse covariance of (b, b^2)); the coupling part is a multiple of the
/// identity plus rank-one terms, kept in factored form.
class TapHessian {
 public:
  TapHessian(const LinearModel& model, const Prior& prior, const VariationalState& state)
      : model_(&model), p_(model.p()) {
    VariationalState scratch;
    const auto& st = detail::fresh(prior, state, scratch);
    m_ = st.m;
    v_ = model.sigma2 + variance_excess(st);
    if (!(v_ > 0.0)) throw std::domain_error("TapHessian: V(m,s) is not positive");
    h_mm_.resize(p_);
    h_ms_.resize(p_);
    h_ss_.resize(p_);
    for (Eigen::Index j = 0; j < p_; ++j) {
      const Eigen::Matrix2d inv = tilted_covariance_inverse(prior, {st.lambda(j), st.gamma(j)});
      h_mm_(j) = inv(0, 0);
      h_ms_(j) = inv(0, 1);
      h_ss_(j) = inv(1, 1);
    }
    const double n = static_cast<double>(model.n());
    const double p = static_cast<double>(p_);
    diag_shift_ = -(n / p) / v_;
    c_mm_ = -2.0 * n / (p * p * v_ * v_);
    c_ms_ = n / (p * p * v_ * v_);
    c_ss_ = -0.5 * n / (p * p * v_ * v_);
  }

  Eigen::Index dim() const { return 2 * p_; }

  Eigen::VectorXd apply(const Eigen::VectorXd& x) const {
    if (x.size() != dim()) throw std::invalid_argument("TapHessian::apply: wrong vector length");
    const auto xm = x.head(p_);
    const auto xs = x.tail(p_);
    const double mx = m_.dot(xm);
    const double sx = xs.sum();
    Eigen::VectorXd out(dim());
    out.head(p_) = h_mm_.cwiseProduct(xm) + h_ms_.cwiseProduct(xs) +
                   model_->X.transpose() * (model_->X * xm) / model_->sigma2 + diag_shift_ * xm +
                   (c_mm_ * mx + c_ms_ * sx) * m_;
    out.tail(p_) = h_ms_.cwiseProduct(xm) + h_ss_.cwiseProduct(xs) +
                   Eigen::VectorXd::Constant(p_, c_ms_ * mx + c_ss_ * sx);
    return out;
  }

  Eigen::MatrixXd dense() const {
    if (dim() > 8000) throw std::length_error("TapHessian::dense: only available for 2p <= 8000");
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(dim(), dim());
    auto mm = h.topLeftCorner(p_, p_);
    mm.noalias() = model_->X.transpose() * model_->X / model_->sigma2;
    mm += c_mm_ * m_ * m_.transpose();
    mm.diagonal().array() += h_mm_.array() + diag_shift_;
    auto ms = h.topRightCorner(p_, p_);
    ms = c_ms_ * m_ * Eigen::RowVectorXd::Ones(p_);
    ms.diagonal() += h_ms_;
    h.bottomLeftCorner(p_, p_) = ms.transpose();
    auto ss = h.bottomRightCorner(p_, p_);
    ss.setConstant(c_ss_);
    ss.diagonal() += h_ss_;
    return h;
  }

  /// Upper bound on the largest eigenvalue from absolute row sums, using
  /// sum_k |(X^T X)_jk| <= |X_j| sum_k |X_k| so no p x p product is formed.
  double gershgorin_upper() const {
    const Eigen::VectorXd col = model_->X.colwise().norm().transpose();
    const double col_sum = col.sum();
    const double abs_m_sum = m_.cwiseAbs().sum();
    const double p = static_cast<double>(p_);
    double bound = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < p_; ++j) {
      const double mj = std::abs(m_(j));
      const double row_m = h_mm_(j) + diag_shift_ + col(j) * col_sum / model_->sigma2 + std::abs(c_mm_) * mj * abs_m_sum +
                           std::abs(h_ms_(j)) + std::abs(c_ms_) * mj * p;
      const double row_s = h_ss_(j) + std::abs(c_ss_) * p + std::abs(h_ms_(j)) + std::abs(c_ms_) * abs_m_sum;
      bound = std::max({bound, row_m, row_s});
    }
    return bound;
  }

 private:
  const LinearModel* model_;
  Eigen::Index p_;
  Eigen::VectorXd m_;
  double v_ = 1.0;
  Eigen::VectorXd h_mm_, h_ms_, h_ss_;
  double diag_shift_ = 0.0, c_mm_ = 0.0, c_ms_ = 0.0, c_ss_ = 0.0;
};

inline Eigen::VectorXd tap_hessian_matvec(const LinearModel& model, const Prior& prior, const VariationalState& state,
                                          const Eigen::VectorXd& v) {
  return TapHessian(model, prior, state).apply(v);
}

inline Eigen::MatrixXd tap_hessian_dense(const LinearModel& model, const Prior& prior, const VariationalState& state) {
  return TapHessian(model, prior, state).dense();
}

enum class EigenMethod { Dense, Lanczos };

inline const char* to_string(EigenMethod m) { return m == EigenMethod::Dense ? "dense" : "lanczos"; }

struct MinEigenResult {
  double value = 0.0;
  EigenMethod method = EigenMethod::Dense;
  int iterations = 0;
  bool converged = true;
};

/// Largest eigenvalue of a symmetric operator by Lanczos with full
/// reorthogonalization. Converged when the Ritz residual falls below `tol`.
template <class Op>
MinEigenResult lanczos_largest(Op&& op, Eigen::Index dim, int max_iters, double tol, std::uint64_t seed = 12345) {
  max_iters = static_cast<int>(std::min<Eigen::Index>(max_iters, dim));
  Eigen::MatrixXd basis(dim, max_iters);
  std::vector<double> alpha, beta;
  // Deterministic start vector.
  Eigen::VectorXd q(dim);
  std::uint64_t x = seed;
  for (Eigen::Index i = 0; i < dim; ++i) {
    x += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    z ^= z >> 31;
    q(i) = static_cast<double>(z >> 11) * 0x1.0p-53 - 0.5;
  }
  q.normalize();

  MinEigenResult res;
  res.method = EigenMethod::Lanczos;
  res.converged = false;
  double theta = 0.0;
  for (int k = 0; k < max_iters; ++k) {
    basis.col(k) = q;
    Eigen::VectorXd w = op(q);
    const double a = q.dot(w);
    alpha.push_back(a);
    w -= a * q;
    if (k > 0) w -= beta.back() * basis.col(k - 1);
    for (int pass = 0; pass < 2; ++pass) {
      w -= basis.leftCols(k + 1) * (basis.leftCols(k + 1).transpose() * w);
    }
    const double b = w.norm();

    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(k + 1, k + 1);
    for (int i = 0; i <= k; ++i) {
      t(i, i) = alpha[i];
      if (i < k) t(i, i + 1) = t(i + 1, i) = beta[i];
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(t);
    theta = es.eigenvalues()(k);
    const double ritz_resid = b * std::abs(es.eigenvectors()(k, k));
    res.iterations = k + 1;
    if (ritz_resid < tol || b < 1e-14 * std::max(1.0, std::abs(theta))) {
      res.converged = true;
      break;
    }
    beta.push_back(b);
    q = w / b;
  }
  res.value = theta;
  return res;
}

/// Smallest eigenvalue of the TAP Hessian. The Lanczos path runs on
/// cI - H with c an upper bound on the spectrum, so the target is the top
/// of the shifted spectrum.
inline MinEigenResult min_eigenvalue(const LinearModel& model, const Prior& prior, const VariationalState& state,
                                     EigenMethod method, int max_iters = 500, double tol = 1e-10) {
  TapHessian hess(model, prior, state);
  if (method == EigenMethod::Dense) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(hess.dense(), Eigen::EigenvaluesOnly);
    MinEigenResult r;
    r.value = es.eigenvalues()(0);
    r.method = EigenMethod::Dense;
    r.iterations = 1;
    r.converged = es.info() == Eigen::Success;
    return r;
  }
  const double c = hess.gershgorin_upper();
  auto shifted = [&](const Eigen::VectorXd& v) -> Eigen::VectorXd { return c * v - hess.apply(v); };
  auto r = lanczos_largest(shifted, hess.dim(), max_iters, tol * std::max(1.0, std::abs(c)));
  r.value = c - r.value;
  return r;
}

}  // namespace taplab
