#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "taplab/prior.hpp"

namespace taplab {

struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

enum class Design { Gaussian, Rademacher, RademacherNoise, BernoulliHetero };

inline const char* to_string(Design d) {
  switch (d) {
    case Design::Gaussian: return "gaussian";
    case Design::Rademacher: return "rademacher";
    case Design::RademacherNoise: return "rademacher_noise";
    case Design::BernoulliHetero: return "bernoulli_hetero";
  }
  return "?";
}

inline Design parse_design(std::string_view s) {
  s = detail::trim(s);
  for (auto d : {Design::Gaussian, Design::Rademacher, Design::RademacherNoise, Design::BernoulliHetero}) {
    if (s == to_string(d)) return d;
  }
  throw ConfigError("unknown design '" + std::string(s) + "'");
}

enum class Method { TAP, MF, AMP };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::TAP: return "tap";
    case Method::MF: return "mf";
    case Method::AMP: return "amp";
  }
  return "?";
}

/// Everything an experiment run depends on. Mirrors the key=value config file.
struct ExperimentConfig {
  std::string prior = "three-point";
  double sigma = 0.3;
  int n = 300;
  /// Fixed number of columns; 0 means p = floor(n / delta) for each delta.
  int p = 0;
  std::vector<double> delta_grid{0.6, 0.8, 1.0, 1.2, 1.4};
  /// Aspect ratio used inside AMP; 0 means n / p of the realized design.
  double amp_delta = 0.0;
  Design design = Design::Gaussian;
  std::vector<Design> scenarios{Design::Gaussian, Design::Rademacher, Design::RademacherNoise,
                                Design::BernoulliHetero};
  int replicates = 1;
  std::uint64_t seed = 1;
  /// Reruns a single replicate with exactly this seed (as printed in CSV rows).
  std::optional<std::uint64_t> replicate_seed;
  std::vector<Method> methods{Method::TAP, Method::MF, Method::AMP};
  std::string output_dir = ".";
  int amp_iters = 8;
  bool cold_init = false;
  double eta = 0.2;
  int max_iters = 20000;
  double grad_tol = 1e-10;
  int quad_nodes = 61;
  int prior_nodes = 101;
  int threads = 1;
  double tau2 = 1.0;

  bool has_method(Method m) const { return std::find(methods.begin(), methods.end(), m) != methods.end(); }

  void validate() const {
    if (replicates < 1) throw ConfigError("replicates must be at least 1");
    if (!(sigma > 0.0)) throw ConfigError("sigma must be positive");
    if (n < 1) throw ConfigError("n must be positive");
    if (p < 0) throw ConfigError("p must be nonnegative");
    if (delta_grid.empty()) throw ConfigError("delta_grid must not be empty");
    for (double d : delta_grid) {
      if (!(d > 0.0)) throw ConfigError("delta values must be positive");
    }
    if (amp_delta < 0.0) throw ConfigError("amp_delta must be nonnegative");
    if (amp_iters < 1) throw ConfigError("amp_iters must be at least 1");
    if (!(eta > 0.0 && eta <= 1.0)) throw ConfigError("eta must lie in (0, 1]");
    if (!(grad_tol > 0.0)) throw ConfigError("grad_tol must be positive");
    if (max_iters < 0) throw ConfigError("max_iters must be nonnegative");
    if (quad_nodes < 1 || prior_nodes < 3) throw ConfigError("quadrature node counts are too small");
    if (threads < 1) throw ConfigError("threads must be at least 1");
    if (!(tau2 > 0.0)) throw ConfigError("tau2 must be positive");
    if (scenarios.empty()) throw ConfigError("scenarios must not be empty");
    parse_prior(prior, prior_nodes);
  }

  /// Columns used at aspect ratio delta.
  int columns_for(double delta) const {
    if (p > 0) return p;
    const int cols = static_cast<int>(std::floor(static_cast<double>(n) / delta + 1e-9));
    if (cols < 1) throw ConfigError("delta too large for n");
    return cols;
  }
};

namespace detail {

template <class T>
T parse_number(std::string_view key, std::string_view s) {
  s = trim(s);
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("config key '" + std::string(key) + "': cannot parse '" + std::string(s) + "'");
  }
  return v;
}

inline bool parse_bool(std::string_view key, std::string_view s) {
  s = trim(s);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("config key '" + std::string(key) + "': expected a boolean");
}

inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace detail

/// Applies one key=value assignment.
inline void set_config_value(ExperimentConfig& cfg, std::string_view key, std::string_view value) {
  key = detail::trim(key);
  value = detail::trim(value);
  if (key == "prior") cfg.prior = std::string(value);
  else if (key == "sigma") cfg.sigma = detail::parse_number<double>(key, value);
  else if (key == "n") cfg.n = detail::parse_number<int>(key, value);
  else if (key == "p") cfg.p = detail::parse_number<int>(key, value);
  else if (key == "delta" || key == "delta_grid") {
    cfg.delta_grid.clear();
    for (auto item : detail::split(value, ',')) cfg.delta_grid.push_back(detail::parse_number<double>(key, item));
  } else if (key == "amp_delta") cfg.amp_delta = detail::parse_number<double>(key, value);
  else if (key == "design") cfg.design = parse_design(value);
  else if (key == "scenarios") {
    cfg.scenarios.clear();
    for (auto item : detail::split(value, ',')) cfg.scenarios.push_back(parse_design(item));
  } else if (key == "replicates") cfg.replicates = detail::parse_number<int>(key, value);
  else if (key == "seed") cfg.seed = detail::parse_number<std::uint64_t>(key, value);
  else if (key == "replicate_seed") cfg.replicate_seed = detail::parse_number<std::uint64_t>(key, value);
  else if (key == "methods") {
    cfg.methods.clear();
    for (auto item : detail::split(value, ',')) {
      auto t = detail::trim(item);
      if (t == "tap") cfg.methods.push_back(Method::TAP);
      else if (t == "mf") cfg.methods.push_back(Method::MF);
      else if (t == "amp") cfg.methods.push_back(Method::AMP);
      else throw ConfigError("unknown method '" + std::string(t) + "'");
    }
  } else if (key == "output_dir") cfg.output_dir = std::string(value);
  else if (key == "amp_iters") cfg.amp_iters = detail::parse_number<int>(key, value);
  else if (key == "cold_init") cfg.cold_init = detail::parse_bool(key, value);
  else if (key == "eta") cfg.eta = detail::parse_number<double>(key, value);
  else if (key == "max_iters") cfg.max_iters = detail::parse_number<int>(key, value);
  else if (key == "grad_tol") cfg.grad_tol = detail::parse_number<double>(key, value);
  else if (key == "quad_nodes") cfg.quad_nodes = detail::parse_number<int>(key, value);
  else if (key == "prior_nodes") cfg.prior_nodes = detail::parse_number<int>(key, value);
  else if (key == "threads") cfg.threads = detail::parse_number<int>(key, value);
  else if (key == "tau2") cfg.tau2 = detail::parse_number<double>(key, value);
  else throw ConfigError("unknown config key '" + std::string(key) + "'");
}

/// Parses `key = value` lines; `#` starts a comment.
inline ExperimentConfig parse_config(std::string_view text, ExperimentConfig cfg = {}) {
  std::size_t lineno = 0;
  for (auto line : detail::split(text, '\n')) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    set_config_value(cfg, line.substr(0, eq), line.substr(eq + 1));
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path, ExperimentConfig cfg = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(cfg));
}

/// Key/value echo of the configuration, in a fixed key order.
inline std::vector<std::pair<std::string, std::string>> config_items(const ExperimentConfig& cfg) {
  auto join = [](const auto& items, auto fmt) {
    std::string out;
    for (const auto& it : items) {
      if (!out.empty()) out += ",";
      out += fmt(it);
    }
    return out;
  };
  std::vector<std::pair<std::string, std::string>> kv{
      {"prior", cfg.prior},
      {"sigma", detail::format_double(cfg.sigma)},
      {"n", std::to_string(cfg.n)},
      {"p", std::to_string(cfg.p)},
      {"delta_grid", join(cfg.delta_grid, detail::format_double)},
      {"amp_delta", detail::format_double(cfg.amp_delta)},
      {"design", to_string(cfg.design)},
      {"scenarios", join(cfg.scenarios, [](Design d) { return std::string(to_string(d)); })},
      {"replicates", std::to_string(cfg.replicates)},
      {"seed", std::to_string(cfg.seed)},
      {"replicate_seed", cfg.replicate_seed ? std::to_string(*cfg.replicate_seed) : ""},
      {"methods", join(cfg.methods, [](Method m) { return std::string(to_string(m)); })},
      {"output_dir", cfg.output_dir},
      {"amp_iters", std::to_string(cfg.amp_iters)},
      {"cold_init", cfg.cold_init ? "true" : "false"},
      {"eta", detail::format_double(cfg.eta)},
      {"max_iters", std::to_string(cfg.max_iters)},
      {"grad_tol", detail::format_double(cfg.grad_tol)},
      {"quad_nodes", std::to_string(cfg.quad_nodes)},
      {"prior_nodes", std::to_string(cfg.prior_nodes)},
      {"threads", std::to_string(cfg.threads)},
      {"tau2", detail::format_double(cfg.tau2)},
  };
  return kv;
}

}  // namespace taplab
