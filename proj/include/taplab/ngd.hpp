#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "taplab/free_energy.hpp"
#include "taplab/linear_model.hpp"
#include "taplab/prior.hpp"
#include "taplab/scalar_channel.hpp"

namespace taplab {

struct NGDConfig {
  double eta = 0.2;
  int max_iters = 20000;
  /// Stop once |grad F|^2 / p falls below this.
  double grad_tol = 1e-10;
  bool backtracking = true;
  Objective objective = Objective::TAP;
  /// Halvings tried per iteration before giving up on descent.
  int max_halvings = 50;

  void validate() const {
    if (!(eta > 0.0 && eta <= 1.0)) throw std::invalid_argument("NGDConfig: eta must lie in (0, 1]");
    if (!(grad_tol > 0.0)) throw std::invalid_argument("NGDConfig: grad_tol must be positive");
    if (max_iters < 0) throw std::invalid_argument("NGDConfig: max_iters must be nonnegative");
  }
};

struct NGDStep {
  int k = 0;
  double f_value = 0.0;
  double grad_norm_sq_per_p = 0.0;
  double step = 0.0;
};

struct NGDTrace {
  /// Entry k describes the iterate after k steps; entry 0 is the start.
  std::vector<NGDStep> steps;
  VariationalState state;
  bool converged = false;
  /// Descent could not be achieved even with the smallest step tried.
  bool stalled = false;
  int iterations = 0;
  int projections = 0;
  bool projection_flag = false;  // more than 100 projections

  double final_energy() const { return steps.back().f_value; }
};

namespace detail {

// Keeps natural parameters finite and within the dual cap; a clipped tilt
// lies (numerically) on the boundary of the moment space, which is where the
// dual map diverges.
inline bool clip_duals(Eigen::VectorXd& lambda, Eigen::VectorXd& gamma) {
  bool clipped = false;
  for (Eigen::Index j = 0; j < lambda.size(); ++j) {
    for (double* v : {&lambda(j), &gamma(j)}) {
      if (!std::isfinite(*v)) {
        *v = 0.0;
        clipped = true;
      } else if (std::abs(*v) > kDualCap) {
        *v = std::clamp(*v, -kDualCap, kDualCap);
        clipped = true;
      }
    }
  }
  return clipped;
}

}  // namespace detail

/// Natural gradient descent on the TAP or mean-field free energy. The
/// iteration moves the natural parameters against the (m, s) gradient,
///   lambda <- lambda - eta grad_m F,   -gamma/2 <- -gamma/2 - eta grad_s F,
/// and reads the next moments off the tilt. With backtracking, eta is halved
/// until the energy does not increase (and reset every iteration).
inline NGDTrace ngd_run(const LinearModel& model, const Prior& prior, const VariationalState& init,
                        const NGDConfig& cfg = {}) {
  cfg.validate();
  if (init.p() != model.p()) throw std::invalid_argument("ngd_run: init and model sizes differ");
  NGDTrace tr;
  VariationalState cur = init.duals_fresh ? init : state_from_moments(prior, init.m, init.s);
  double f = free_energy(model, prior, cur, cfg.objective);
  Gradient g = free_energy_gradient(model, prior, cur, cfg.objective);
  tr.steps.push_back({0, f, g.norm_sq_per_p(), 0.0});

  for (int k = 1; k <= cfg.max_iters; ++k) {
    if (g.norm_sq_per_p() < cfg.grad_tol) {
      tr.converged = true;
      break;
    }
    double eta = cfg.eta;
    bool accepted = false;
    for (int h = 0; h <= (cfg.backtracking ? cfg.max_halvings : 0); ++h) {
      Eigen::VectorXd lam = cur.lambda - eta * g.m;
      Eigen::VectorXd gam = cur.gamma + 2.0 * eta * g.s;
      const bool clipped = detail::clip_duals(lam, gam);
      VariationalState trial;
      double ft;
      try {
        trial = state_from_duals(prior, lam, gam);
        ft = free_energy(model, prior, trial, cfg.objective);
      } catch (const std::domain_error&) {
        eta *= 0.5;
        continue;
      }
      if (!cfg.backtracking || (std::isfinite(ft) && ft <= f)) {
        if (clipped) ++tr.projections;
        cur = std::move(trial);
        f = ft;
        accepted = true;
        break;
      }
      eta *= 0.5;
    }
    if (!accepted) {
      tr.stalled = true;
      break;
    }
    g = free_energy_gradient(model, prior, cur, cfg.objective);
    tr.iterations = k;
    tr.steps.push_back({k, f, g.norm_sq_per_p(), eta});
  }
  if (!tr.converged && g.norm_sq_per_p() < cfg.grad_tol) tr.converged = true;
  tr.projection_flag = tr.projections > 100;
  cur.f_value = f;
  tr.state = std::move(cur);
  return tr;
}

/// The same iteration applied to the naive mean-field free energy.
inline NGDTrace mf_minimize(const LinearModel& model, const Prior& prior, const VariationalState& init,
                            NGDConfig cfg = {}) {
  cfg.objective = Objective::MF;
  return ngd_run(model, prior, init, cfg);
}

}  // namespace taplab
