// Command-line front end: one subcommand per experiment table.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "taplab/taplab.hpp"

#ifndef TAPLAB_GIT_DESCRIBE
#define TAPLAB_GIT_DESCRIBE "unknown"
#endif

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace taplab;

namespace {

struct GlobalOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::optional<int> threads;
  std::vector<std::string> overrides;
};

ExperimentConfig resolve_config(const GlobalOptions& g) {
  ExperimentConfig cfg;
  if (!g.config_path.empty()) cfg = load_config(g.config_path);
  for (const auto& kv : g.overrides) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (g.seed) cfg.seed = *g.seed;
  if (!g.out_dir.empty()) cfg.output_dir = g.out_dir;
  if (g.threads) cfg.threads = *g.threads;
  cfg.validate();
  return cfg;
}

class Run {
 public:
  Run(std::string command, ExperimentConfig cfg)
      : command_(std::move(command)), cfg_(std::move(cfg)), start_(std::chrono::steady_clock::now()) {
    fs::create_directories(cfg_.output_dir);
  }

  const ExperimentConfig& cfg() const { return cfg_; }

  std::ofstream open(const std::string& name) {
    const auto path = fs::path(cfg_.output_dir) / name;
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    outputs_.push_back(name);
    return os;
  }

  void write_json(const std::string& name, const json& j) {
    auto os = open(name);
    os << j.dump(2) << "\n";
  }

  void finish() {
    json cfg_echo = json::object();
    for (const auto& [k, v] : config_items(cfg_)) cfg_echo[k] = v;
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    json manifest{{"command", command_},
                  {"config", cfg_echo},
                  {"git_describe", TAPLAB_GIT_DESCRIBE},
                  {"wall_time_seconds", wall},
                  {"outputs", outputs_}};
    std::ofstream os(fs::path(cfg_.output_dir) / "manifest.json");
    os << manifest.dump(2) << "\n";
    for (const auto& o : outputs_) std::cout << (fs::path(cfg_.output_dir) / o).string() << "\n";
  }

 private:
  std::string command_;
  ExperimentConfig cfg_;
  std::chrono::steady_clock::time_point start_;
  std::vector<std::string> outputs_;
};

std::string num(double v) { return detail::csv_num(v); }

void cmd_potential(const ExperimentConfig& cfg, int points) {
  Run run("potential", cfg);
  const Prior prior = parse_prior(cfg.prior, cfg.prior_nodes);
  const ChannelParams cp{cfg.sigma * cfg.sigma, cfg.delta_grid.front()};
  GridSpec grid;
  grid.points = points;
  const auto prof = solve_gammas(prior, cp, QuadratureSpec{cfg.quad_nodes}, grid);
  {
    auto os = run.open("potential.csv");
    os << kCsvVersionLine << "\n" << "gamma,phi,phi_prime,phi_second\n";
    for (std::size_t i = 0; i < prof.gamma_grid.size(); ++i) {
      os << num(prof.gamma_grid[i]) << ',' << num(prof.phi[i]) << ',' << num(prof.phi_prime[i]) << ','
         << num(prof.phi_second[i]) << "\n";
    }
  }
  run.write_json("potential.json", json{{"gamma_stat", prof.gamma_stat},
                                        {"gamma_alg", prof.gamma_alg},
                                        {"regime", to_string(prof.regime)},
                                        {"regime_margin", prof.regime_margin},
                                        {"phi_second_at_stat", prof.phi_second_at_stat},
                                        {"local_minima", prof.local_minima}});
  run.finish();
}

void cmd_amp(const ExperimentConfig& cfg, int iters) {
  Run run("amp", cfg);
  const Prior prior = parse_prior(cfg.prior, cfg.prior_nodes);
  const auto inst = generate_instance(cfg, 0);
  AMPOptions opt;
  opt.delta = cfg.amp_delta;
  opt.quad = QuadratureSpec{cfg.quad_nodes};
  opt.track_gradient = true;
  const auto st = amp_run(inst.model, prior, iters, opt, inst.truth);
  auto os = run.open("amp.csv");
  os << kCsvVersionLine << "\n" << "k,gamma_k,mse_empirical,mse_se,grad_norm_sq_per_p\n";
  for (const auto& r : st.history) {
    os << r.k << ',' << num(r.gamma) << ',' << num(r.mse_empirical.value_or(NAN)) << ',' << num(r.mse_se) << ','
       << num(r.grad_norm_sq_per_p.value_or(NAN)) << "\n";
  }
  os.close();
  run.finish();
}

json state_json(const VariationalState& st) {
  auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  return json{{"m", vec(st.m)}, {"s", vec(st.s)}, {"lambda", vec(st.lambda)}, {"gamma", vec(st.gamma)}};
}

void cmd_ngd(const ExperimentConfig& cfg, const std::string& objective) {
  Run run("ngd", cfg);
  const Prior prior = parse_prior(cfg.prior, cfg.prior_nodes);
  const auto inst = generate_instance(cfg, 0);
  const auto init = warm_start(cfg, inst, prior);
  const Objective obj = objective == "mf" ? Objective::MF : Objective::TAP;
  const auto tr = ngd_run(inst.model, prior, init, ngd_config(cfg, obj));
  {
    auto os = run.open("ngd.csv");
    os << kCsvVersionLine << "\n" << "k,f_value,grad_norm_sq_per_p,step\n";
    for (const auto& s : tr.steps) {
      os << s.k << ',' << num(s.f_value) << ',' << num(s.grad_norm_sq_per_p) << ',' << num(s.step) << "\n";
    }
  }
  json state = state_json(tr.state);
  state["objective"] = to_string(obj);
  state["converged"] = tr.converged;
  state["iterations"] = tr.iterations;
  state["projections"] = tr.projections;
  state["mse"] = mse(tr.state.m, inst.truth);
  state["replicate_seed"] = inst.seed;
  run.write_json("ngd_state.json", state);
  run.finish();
}

void cmd_mse_sweep(const ExperimentConfig& cfg) {
  Run run("mse-sweep", cfg);
  const auto rows = run_mse_sweep(cfg);
  auto os = run.open("mse_sweep.csv");
  write_mse_csv(os, rows);
  os.close();
  run.finish();
}

void cmd_calibrate(const ExperimentConfig& cfg) {
  Run run("calibrate", cfg);
  const auto tables = run_calibration(cfg);
  auto os = run.open("calibration.csv");
  write_calibration_csv(os, tables);
  os.close();
  run.finish();
}

void cmd_universality(const ExperimentConfig& cfg) {
  Run run("universality", cfg);
  const auto rows = run_universality(cfg);
  auto os = run.open("universality.csv");
  write_universality_csv(os, rows);
  os.close();
  run.finish();
}

void cmd_hessian(const ExperimentConfig& cfg, const std::string& method) {
  Run run("hessian", cfg);
  const Prior prior = parse_prior(cfg.prior, cfg.prior_nodes);
  const auto inst = generate_instance(cfg, 0);
  const auto init = warm_start(cfg, inst, prior);
  const auto tr = ngd_run(inst.model, prior, init, ngd_config(cfg, Objective::TAP));
  MinEigenResult eig;
  if (method == "dense") eig = min_eigenvalue(inst.model, prior, tr.state, EigenMethod::Dense);
  else if (method == "lanczos") eig = min_eigenvalue(inst.model, prior, tr.state, EigenMethod::Lanczos);
  else eig = min_eigenvalue_auto(inst.model, prior, tr.state);
  run.write_json("hessian.json", json{{"min_eig", eig.value},
                                      {"method", to_string(eig.method)},
                                      {"iterations", eig.iterations},
                                      {"converged", eig.converged},
                                      {"ngd_converged", tr.converged}});
  run.finish();
}

void cmd_oracle(const ExperimentConfig& cfg, const std::string& kind, std::int64_t mc_samples) {
  Run run("oracle", cfg);
  const Prior prior = parse_prior(cfg.prior, cfg.prior_nodes);
  const auto inst = generate_instance(cfg, 0);
  json out{{"kind", kind}, {"n", inst.model.n()}, {"p", inst.model.p()}, {"replicate_seed", inst.seed}};
  if (kind == "gaussian") {
    const auto g = gaussian_posterior(inst.model, cfg.tau2);
    out["log_evidence"] = g.log_evidence;
    out["logdet_n"] = g.logdet_n;
    out["logdet_p"] = g.logdet_p;
    out["v_star"] = g.v_star;
    out["mean_posterior_variance"] = g.Sigma.diagonal().mean();
  } else if (kind == "enumerate") {
    const auto e = enumerate_posterior(inst.model, prior);
    out["log_evidence"] = e.log_evidence;
    out["marginal_m"] = std::vector<double>(e.marginal_m.data(), e.marginal_m.data() + e.marginal_m.size());
    out["marginal_s"] = std::vector<double>(e.marginal_s.data(), e.marginal_s.data() + e.marginal_s.size());
    if (mc_samples > 1) {
      const auto mc = monte_carlo_evidence(inst.model, prior, mc_samples, inst.seed);
      out["mc_log_evidence"] = std::log(mc.mean) + mc.shift;
      out["mc_relative_std_error"] = mc.std_error / mc.mean;
    }
  } else {
    throw std::invalid_argument("oracle --kind must be gaussian or enumerate");
  }
  run.write_json("oracle.json", out);
  run.finish();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TAP free energy, AMP and mean-field experiments for Bayesian linear regression"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalOptions g;
  app.add_option("--config", g.config_path, "key=value config file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "master seed");
  app.add_option("--out", g.out_dir, "output directory");
  app.add_option("--threads", g.threads, "worker threads for replicates");
  app.add_option("--set", g.overrides, "config override key=value (repeatable)");

  int points = 400;
  auto* potential = app.add_subcommand("potential", "replica-symmetric potential on a gamma grid");
  potential->add_option("--points", points, "grid points");

  int amp_iters = 10;
  auto* amp = app.add_subcommand("amp", "AMP trajectory against state evolution");
  amp->add_option("--iters", amp_iters, "AMP iterations");

  std::string objective = "tap";
  auto* ngd = app.add_subcommand("ngd", "natural gradient descent on the free energy");
  ngd->add_option("--objective", objective, "tap or mf")->check(CLI::IsMember({"tap", "mf"}));

  auto* sweep = app.add_subcommand("mse-sweep", "TAP vs mean-field MSE over the delta grid");
  auto* calib = app.add_subcommand("calibrate", "calibration of posterior inclusion probabilities");
  auto* univ = app.add_subcommand("universality", "MSE and Hessian spectrum across design scenarios");

  std::string eig_method = "auto";
  auto* hess = app.add_subcommand("hessian", "minimum Hessian eigenvalue at the TAP fit");
  hess->add_option("--method", eig_method, "dense, lanczos or auto")
      ->check(CLI::IsMember({"dense", "lanczos", "auto"}));

  std::string oracle_kind = "gaussian";
  std::int64_t mc_samples = 0;
  auto* oracle = app.add_subcommand("oracle", "exact evidence and marginals");
  oracle->add_option("--kind", oracle_kind, "gaussian or enumerate")
      ->check(CLI::IsMember({"gaussian", "enumerate"}));
  oracle->add_option("--mc-samples", mc_samples, "Monte Carlo samples for the evidence cross-check");

  CLI11_PARSE(app, argc, argv);

  try {
    const auto cfg = resolve_config(g);
    if (potential->parsed()) cmd_potential(cfg, points);
    else if (amp->parsed()) cmd_amp(cfg, amp_iters);
    else if (ngd->parsed()) cmd_ngd(cfg, objective);
    else if (sweep->parsed()) cmd_mse_sweep(cfg);
    else if (calib->parsed()) cmd_calibrate(cfg);
    else if (univ->parsed()) cmd_universality(cfg);
    else if (hess->parsed()) cmd_hessian(cfg, eig_method);
    else if (oracle->parsed()) cmd_oracle(cfg, oracle_kind, mc_samples);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
