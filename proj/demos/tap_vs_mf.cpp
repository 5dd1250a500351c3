// Fits one three-point instance with AMP, then TAP and naive mean field,
// and prints the estimation error of each alongside the state-evolution
// prediction.

#include <cstdio>

#include "taplab/taplab.hpp"

int main() {
  using namespace taplab;
  ExperimentConfig cfg;
  cfg.n = 400;
  cfg.p = 400;
  cfg.sigma = 0.3;
  cfg.seed = 7;

  const Prior prior = parse_prior(cfg.prior);
  const Instance inst = generate_instance(cfg, 0);
  AMPState amp;
  const auto init = warm_start(cfg, inst, prior, &amp);
  const auto tap = ngd_run(inst.model, prior, init, ngd_config(cfg, Objective::TAP));
  const auto mf = ngd_run(inst.model, prior, init, ngd_config(cfg, Objective::MF));

  const auto prof = solve_gammas(prior, {cfg.sigma * cfg.sigma, inst.model.delta_hat()});
  std::printf("gamma_alg %.6f  gamma_stat %.6f  regime %s\n", prof.gamma_alg, prof.gamma_stat,
              to_string(prof.regime));
  std::printf("AMP after %d iterations   mse %.5f\n", cfg.amp_iters, *amp.history.back().mse_empirical);
  std::printf("TAP  %5d iterations   mse %.5f   F = %.4f\n", tap.iterations, mse(tap.state.m, inst.truth),
              tap.final_energy());
  std::printf("MF   %5d iterations   mse %.5f   F = %.4f\n", mf.iterations, mse(mf.state.m, inst.truth),
              mf.final_energy());
  std::printf("mmse(gamma_alg)          %.5f\n", mmse(prior, prof.gamma_alg));
  std::printf("min Hessian eigenvalue at the TAP fit: %.5f\n",
              min_eigenvalue(inst.model, prior, tap.state, EigenMethod::Lanczos).value);
  return 0;
}
