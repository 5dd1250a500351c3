#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <limits>
#include <mutex>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "taplab/amp.hpp"
#include "taplab/config.hpp"
#include "taplab/free_energy.hpp"
#include "taplab/linear_model.hpp"
#include "taplab/ngd.hpp"
#include "taplab/prior.hpp"
#include "taplab/rng.hpp"
#include "taplab/scalar_channel.hpp"

namespace taplab {

inline constexpr const char* kCsvVersionLine = "# tap-lab v1";

struct Instance {
  LinearModel model;
  Eigen::VectorXd truth;
  std::uint64_t seed = 0;
  Design design = Design::Gaussian;
};

/// One draw from the prior. Quadrature priors are sampled from the
/// continuous law they stand for, not from their atoms.
template <class Rng>
double sample_prior(const Prior& prior, Rng& rng) {
  if (prior.kind() == PriorKind::ExplicitDiscrete) {
    std::discrete_distribution<int> pick(prior.weights().begin(), prior.weights().end());
    return prior.locations()[pick(rng)];
  }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (u(rng) < prior.zero_mass()) return 0.0;
  std::normal_distribution<double> g(0.0, std::sqrt(prior.slab_variance()));
  return g(rng);
}

/// Design of the given scenario, filled column by column from its own stream.
inline Eigen::MatrixXd generate_design(Design design, int n, int p, std::uint64_t seed) {
  auto rng = stream_rng(seed, Stream::Design);
  Eigen::MatrixXd X(n, p);
  const double scale = 1.0 / std::sqrt(static_cast<double>(p));
  switch (design) {
    case Design::Gaussian:
    case Design::RademacherNoise: {
      std::normal_distribution<double> g(0.0, scale);
      for (int j = 0; j < p; ++j)
        for (int i = 0; i < n; ++i) X(i, j) = g(rng);
      break;
    }
    case Design::Rademacher: {
      std::bernoulli_distribution coin(0.5);
      for (int j = 0; j < p; ++j)
        for (int i = 0; i < n; ++i) X(i, j) = coin(rng) ? scale : -scale;
      break;
    }
    case Design::BernoulliHetero: {
      for (int j = 0; j < p; ++j) {
        const double q = p > 1 ? 0.1 + 0.8 * j / (p - 1.0) : 0.5;
        std::bernoulli_distribution coin(q);
        while (true) {
          for (int i = 0; i < n; ++i) X(i, j) = coin(rng) ? 1.0 : 0.0;
          const double mean = X.col(j).mean();
          const double ss = (X.col(j).array() - mean).square().sum();
          if (ss > 0.0) {
            // Empirical variance (1/n) sum (x - mean)^2 equal to 1/p.
            X.col(j) = (X.col(j).array() - mean) * std::sqrt(static_cast<double>(n) / (p * ss));
            break;
          }
        }
      }
      break;
    }
  }
  return X;
}

/// Instance for one replicate seed: design, coefficients drawn from the prior
/// and noise (Gaussian, or +-sigma for the rademacher_noise scenario).
inline Instance generate_instance(const ExperimentConfig& cfg, const Prior& prior, int p, std::uint64_t seed,
                                  Design design) {
  const int n = cfg.n;
  Instance inst;
  inst.seed = seed;
  inst.design = design;
  Eigen::MatrixXd X = generate_design(design, n, p, seed);
  auto sig = stream_rng(seed, Stream::Signal);
  inst.truth.resize(p);
  for (int j = 0; j < p; ++j) inst.truth(j) = sample_prior(prior, sig);
  auto noise_rng = stream_rng(seed, Stream::Noise);
  Eigen::VectorXd y = X * inst.truth;
  if (design == Design::RademacherNoise) {
    std::bernoulli_distribution coin(0.5);
    for (int i = 0; i < n; ++i) y(i) += coin(noise_rng) ? cfg.sigma : -cfg.sigma;
  } else {
    std::normal_distribution<double> g(0.0, cfg.sigma);
    for (int i = 0; i < n; ++i) y(i) += g(noise_rng);
  }
  inst.model = LinearModel(std::move(X), std::move(y), cfg.sigma * cfg.sigma);
  return inst;
}

inline Instance generate_instance(const ExperimentConfig& cfg, int replicate_index) {
  const Prior prior = parse_prior(cfg.prior, cfg.prior_nodes);
  const std::uint64_t seed = cfg.replicate_seed ? *cfg.replicate_seed : replicate_seed(cfg.seed, replicate_index);
  return generate_instance(cfg, prior, cfg.columns_for(cfg.delta_grid.front()), seed, cfg.design);
}

/// Seeds of the replicates a config asks for.
inline std::vector<std::uint64_t> replicate_seeds(const ExperimentConfig& cfg) {
  if (cfg.replicate_seed) return {*cfg.replicate_seed};
  std::vector<std::uint64_t> out;
  for (int r = 0; r < cfg.replicates; ++r) out.push_back(replicate_seed(cfg.seed, r));
  return out;
}

inline NGDConfig ngd_config(const ExperimentConfig& cfg, Objective obj) {
  NGDConfig c;
  c.eta = cfg.eta;
  c.max_iters = cfg.max_iters;
  c.grad_tol = cfg.grad_tol;
  c.objective = obj;
  return c;
}

/// Starting point for the optimizers: the last AMP iterate, or the null state.
inline VariationalState warm_start(const ExperimentConfig& cfg, const Instance& inst, const Prior& prior,
                                   AMPState* amp_out = nullptr) {
  if (cfg.cold_init) return null_state(prior, inst.model.p());
  AMPOptions opt;
  opt.delta = cfg.amp_delta;
  opt.quad = QuadratureSpec{cfg.quad_nodes};
  auto amp = amp_run(inst.model, prior, cfg.amp_iters, opt, inst.truth);
  auto st = amp.variational_state(prior);
  if (amp_out) *amp_out = std::move(amp);
  return st;
}

struct FitResult {
  NGDTrace tap, mf;
  bool has_tap = false, has_mf = false;
  double mse_amp = std::numeric_limits<double>::quiet_NaN();
};

inline FitResult fit_instance(const ExperimentConfig& cfg, const Instance& inst, const Prior& prior) {
  FitResult out;
  AMPState amp;
  const auto init = warm_start(cfg, inst, prior, &amp);
  if (!cfg.cold_init && !amp.history.empty()) out.mse_amp = *amp.history.back().mse_empirical;
  if (cfg.has_method(Method::TAP)) {
    out.tap = ngd_run(inst.model, prior, init, ngd_config(cfg, Objective::TAP));
    out.has_tap = true;
  }
  if (cfg.has_method(Method::MF)) {
    out.mf = ngd_run(inst.model, prior, init, ngd_config(cfg, Objective::MF));
    out.has_mf = true;
  }
  return out;
}

inline double mse(const Eigen::VectorXd& est, const Eigen::VectorXd& truth) {
  return (est - truth).squaredNorm() / static_cast<double>(truth.size());
}

/// Runs tasks 0..count-1 on `threads` workers; results land by index, so the
/// output does not depend on scheduling. The first exception is rethrown.
template <class F>
void parallel_for(int count, int threads, F&& body) {
  threads = std::max(1, std::min(threads, count));
  if (threads == 1) {
    for (int i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr err;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      while (true) {
        const int i = next.fetch_add(1);
        if (i >= count) return;
        try {
          body(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!err) err = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

namespace detail {

inline std::string csv_num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

}  // namespace detail

struct MseRow {
  double delta = 0.0;
  int replicate = 0;
  std::uint64_t seed = 0;
  int p = 0;
  double mse_tap = std::numeric_limits<double>::quiet_NaN();
  double mse_mf = std::numeric_limits<double>::quiet_NaN();
  double mse_amp = std::numeric_limits<double>::quiet_NaN();
  bool tap_converged = false, mf_converged = false;
  int tap_iters = 0, mf_iters = 0;
};

inline MseRow fit_row(const ExperimentConfig& cfg, const Prior& prior, double delta, int replicate,
                      std::uint64_t seed, Design design, FitResult* fit_out = nullptr, Instance* inst_out = nullptr) {
  const int p = cfg.columns_for(delta);
  Instance inst = generate_instance(cfg, prior, p, seed, design);
  FitResult fit = fit_instance(cfg, inst, prior);
  MseRow row;
  row.delta = delta;
  row.replicate = replicate;
  row.seed = seed;
  row.p = p;
  row.mse_amp = fit.mse_amp;
  if (fit.has_tap) {
    row.mse_tap = mse(fit.tap.state.m, inst.truth);
    row.tap_converged = fit.tap.converged;
    row.tap_iters = fit.tap.iterations;
  }
  if (fit.has_mf) {
    row.mse_mf = mse(fit.mf.state.m, inst.truth);
    row.mf_converged = fit.mf.converged;
    row.mf_iters = fit.mf.iterations;
  }
  if (fit_out) *fit_out = std::move(fit);
  if (inst_out) *inst_out = std::move(inst);
  return row;
}

/// MSE of the TAP and mean-field estimators for every delta and replicate.
inline std::vector<MseRow> run_mse_sweep(const ExperimentConfig& cfg) {
  cfg.validate();
  const Prior prior = parse_prior(cfg.prior, cfg.prior_nodes);
  const auto seeds = replicate_seeds(cfg);
  const int reps = static_cast<int>(seeds.size());
  const int count = static_cast<int>(cfg.delta_grid.size()) * reps;
  std::vector<MseRow> rows(count);
  parallel_for(count, cfg.threads, [&](int t) {
    const int d = t / reps, r = t % reps;
    const int rep_index = cfg.replicate_seed ? -1 : r;
    rows[t] = fit_row(cfg, prior, cfg.delta_grid[d], rep_index, seeds[r], cfg.design);
  });
  return rows;
}

inline void write_mse_csv(std::ostream& os, const std::vector<MseRow>& rows) {
  os << kCsvVersionLine << "\n";
  os << "delta,replicate,seed,p,mse_tap,mse_mf,mse_amp,tap_converged,mf_converged,tap_iters,mf_iters\n";
  for (const auto& r : rows) {
    os << detail::csv_num(r.delta) << ',' << r.replicate << ',' << r.seed << ',' << r.p << ','
       << detail::csv_num(r.mse_tap) << ',' << detail::csv_num(r.mse_mf) << ',' << detail::csv_num(r.mse_amp) << ','
       << (r.tap_converged ? 1 : 0) << ',' << (r.mf_converged ? 1 : 0) << ',' << r.tap_iters << ',' << r.mf_iters
       << "\n";
  }
}

struct CalibrationRow {
  double bin_lo = 0.0, bin_hi = 0.0;
  double pip_mean = std::numeric_limits<double>::quiet_NaN();
  double freq_nonzero = 0.0;
  long count = 0;
};

struct CalibrationTable {
  std::string method;
  std::vector<CalibrationRow> rows;

  long total() const {
    long c = 0;
    for (const auto& r : rows) c += r.count;
    return c;
  }
};

/// Pools (PIP, truth != 0) pairs into ten equal bins on [0, 1].
inline CalibrationTable calibration_table(std::string method, const std::vector<double>& pip,
                                          const std::vector<bool>& nonzero) {
  CalibrationTable t;
  t.method = std::move(method);
  t.rows.resize(10);
  std::vector<double> pip_sum(10, 0.0), hits(10, 0.0);
  for (std::size_t i = 0; i < pip.size(); ++i) {
    const int b = std::clamp(static_cast<int>(std::floor(pip[i] * 10.0)), 0, 9);
    pip_sum[b] += pip[i];
    hits[b] += nonzero[i] ? 1.0 : 0.0;
    ++t.rows[b].count;
  }
  for (int b = 0; b < 10; ++b) {
    auto& r = t.rows[b];
    r.bin_lo = b / 10.0;
    r.bin_hi = (b + 1) / 10.0;
    if (r.count > 0) {
      r.pip_mean = pip_sum[b] / static_cast<double>(r.count);
      r.freq_nonzero = hits[b] / static_cast<double>(r.count);
    }
  }
  return t;
}

/// Posterior inclusion probabilities of the fitted marginals, read from the
/// converged natural parameters.
inline std::vector<double> inclusion_probabilities(const Prior& prior, const VariationalState& st) {
  std::vector<double> out(st.p());
  for (Eigen::Index j = 0; j < st.p(); ++j) out[j] = inclusion_probability(prior, {st.lambda(j), st.gamma(j)});
  return out;
}

/// Calibration of TAP and mean-field PIPs, pooled over replicates at the
/// first delta of the grid. One table per fitted method.
inline std::vector<CalibrationTable> run_calibration(const ExperimentConfig& cfg) {
  cfg.validate();
  const Prior prior = parse_prior(cfg.prior, cfg.prior_nodes);
  if (prior.zero_mass() <= 0.0) throw std::invalid_argument("run_calibration: prior has no point mass at zero");
  const auto seeds = replicate_seeds(cfg);
  const int reps = static_cast<int>(seeds.size());
  const double delta = cfg.delta_grid.front();
  struct Pooled {
    std::vector<double> tap, mf;
    std::vector<bool> nonzero;
  };
  std::vector<Pooled> per(reps);
  parallel_for(reps, cfg.threads, [&](int r) {
    FitResult fit;
    Instance inst;
    fit_row(cfg, prior, delta, r, seeds[r], cfg.design, &fit, &inst);
    if (fit.has_tap) per[r].tap = inclusion_probabilities(prior, fit.tap.state);
    if (fit.has_mf) per[r].mf = inclusion_probabilities(prior, fit.mf.state);
    for (Eigen::Index j = 0; j < inst.truth.size(); ++j) per[r].nonzero.push_back(inst.truth(j) != 0.0);
  });
  std::vector<CalibrationTable> out;
  for (Method m : {Method::TAP, Method::MF}) {
    if (!cfg.has_method(m)) continue;
    std::vector<double> pip;
    std::vector<bool> nz;
    for (const auto& r : per) {
      const auto& src = m == Method::TAP ? r.tap : r.mf;
      pip.insert(pip.end(), src.begin(), src.end());
      nz.insert(nz.end(), r.nonzero.begin(), r.nonzero.end());
    }
    out.push_back(calibration_table(to_string(m), pip, nz));
  }
  return out;
}

inline void write_calibration_csv(std::ostream& os, const std::vector<CalibrationTable>& tables) {
  os << kCsvVersionLine << "\n";
  os << "method,bin_lo,bin_hi,pip_mean,freq_nonzero,count\n";
  for (const auto& t : tables) {
    for (const auto& r : t.rows) {
      os << t.method << ',' << detail::csv_num(r.bin_lo) << ',' << detail::csv_num(r.bin_hi) << ','
         << detail::csv_num(r.pip_mean) << ',' << detail::csv_num(r.freq_nonzero) << ',' << r.count << "\n";
    }
  }
}

struct UniversalityRow {
  Design scenario = Design::Gaussian;
  MseRow fit;
  double min_eig = std::numeric_limits<double>::quiet_NaN();
  bool min_eig_converged = false;
};

/// Smallest Hessian eigenvalue, dense when affordable and Lanczos otherwise.
inline MinEigenResult min_eigenvalue_auto(const LinearModel& model, const Prior& prior, const VariationalState& st) {
  return min_eigenvalue(model, prior, st, 2 * model.p() <= 2000 ? EigenMethod::Dense : EigenMethod::Lanczos);
}

/// MSE sweep over every design scenario plus the minimum eigenvalue of the
/// TAP Hessian at the TAP fit.
inline std::vector<UniversalityRow> run_universality(const ExperimentConfig& cfg) {
  cfg.validate();
  const Prior prior = parse_prior(cfg.prior, cfg.prior_nodes);
  const auto seeds = replicate_seeds(cfg);
  const int reps = static_cast<int>(seeds.size());
  const int nd = static_cast<int>(cfg.delta_grid.size());
  const int count = static_cast<int>(cfg.scenarios.size()) * nd * reps;
  std::vector<UniversalityRow> rows(count);
  parallel_for(count, cfg.threads, [&](int t) {
    const int sc = t / (nd * reps), d = (t / reps) % nd, r = t % reps;
    UniversalityRow row;
    row.scenario = cfg.scenarios[sc];
    FitResult fit;
    Instance inst;
    const int rep_index = cfg.replicate_seed ? -1 : r;
    row.fit = fit_row(cfg, prior, cfg.delta_grid[d], rep_index, seeds[r], row.scenario, &fit, &inst);
    if (fit.has_tap) {
      const auto eig = min_eigenvalue_auto(inst.model, prior, fit.tap.state);
      row.min_eig = eig.value;
      row.min_eig_converged = eig.converged;
    }
    rows[t] = std::move(row);
  });
  return rows;
}

inline void write_universality_csv(std::ostream& os, const std::vector<UniversalityRow>& rows) {
  os << kCsvVersionLine << "\n";
  os << "scenario,delta,replicate,seed,p,mse_tap,mse_mf,min_eig,tap_converged,mf_converged\n";
  for (const auto& r : rows) {
    os << to_string(r.scenario) << ',' << detail::csv_num(r.fit.delta) << ',' << r.fit.replicate << ',' << r.fit.seed
       << ',' << r.fit.p << ',' << detail::csv_num(r.fit.mse_tap) << ',' << detail::csv_num(r.fit.mse_mf) << ','
       << detail::csv_num(r.min_eig) << ',' << (r.fit.tap_converged ? 1 : 0) << ',' << (r.fit.mf_converged ? 1 : 0)
       << "\n";
  }
}

}  // namespace taplab
