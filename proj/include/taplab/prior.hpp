#pragma once

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "taplab/quadrature.hpp"

namespace taplab {

struct InvalidPrior : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

enum class PriorKind { ExplicitDiscrete, QuadratureOfContinuous };

/// Finite atomic measure standing in for the coordinate prior P0.
///
/// Continuous components are carried as Gauss-Hermite atoms, so every scalar
/// expectation under the prior (or a tilt of it) is a finite weighted sum.
/// `zero_mass` records how much of the weight at location 0 comes from an
/// exact point mass; it is what inclusion probabilities are measured against.
class Prior {
 public:
  Prior(std::vector<std::pair<double, double>> atoms, PriorKind kind, std::string descriptor,
        double zero_mass = -1.0, double slab_variance = 0.0)
      : kind_(kind), descriptor_(std::move(descriptor)), slab_variance_(slab_variance) {
    std::sort(atoms.begin(), atoms.end());
    double total = 0.0;
    for (const auto& [loc, w] : atoms) {
      if (!std::isfinite(loc)) throw InvalidPrior("prior atom location is not finite");
      if (!(w > 0.0)) throw InvalidPrior("prior weights must be strictly positive");
      if (!locations_.empty() && loc == locations_.back()) {
        weights_.back() += w;
      } else {
        locations_.push_back(loc);
        weights_.push_back(w);
      }
      total += w;
    }
    if (locations_.size() < 3) throw InvalidPrior("prior needs at least three distinct atoms");
    if (kind_ == PriorKind::ExplicitDiscrete && std::abs(total - 1.0) > 1e-12) {
      throw InvalidPrior("prior weights must sum to one");
    }
    for (auto& w : weights_) w /= total;
    if (zero_mass < 0.0) {
      auto it = std::find(locations_.begin(), locations_.end(), 0.0);
      zero_mass_ = it == locations_.end() ? 0.0 : weights_[it - locations_.begin()];
    } else {
      zero_mass_ = zero_mass;
    }
  }

  const std::vector<double>& locations() const { return locations_; }
  const std::vector<double>& weights() const { return weights_; }
  std::size_t size() const { return locations_.size(); }
  PriorKind kind() const { return kind_; }
  const std::string& descriptor() const { return descriptor_; }
  double zero_mass() const { return zero_mass_; }
  /// Variance of the Gaussian component for quadrature priors, 0 otherwise.
  double slab_variance() const { return slab_variance_; }

  /// Support endpoints a(P0), b(P0).
  double lower() const { return locations_.front(); }
  double upper() const { return locations_.back(); }

  /// Index of the atom at exactly zero, or -1.
  int zero_index() const {
    auto it = std::find(locations_.begin(), locations_.end(), 0.0);
    return it == locations_.end() ? -1 : static_cast<int>(it - locations_.begin());
  }

  double mean() const { return moment(1); }
  double second_moment() const { return moment(2); }
  double variance() const {
    double mu = mean();
    return second_moment() - mu * mu;
  }

 private:
  double moment(int k) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < size(); ++i) acc += weights_[i] * std::pow(locations_[i], k);
    return acc;
  }

  std::vector<double> locations_;
  std::vector<double> weights_;
  PriorKind kind_;
  std::string descriptor_;
  double zero_mass_ = 0.0;
  double slab_variance_ = 0.0;
};

inline Prior three_point_prior() {
  return Prior({{-1.0, 1.0 / 3}, {0.0, 1.0 / 3}, {1.0, 1.0 / 3}}, PriorKind::ExplicitDiscrete,
               "three-point");
}

/// (1 - inclusion) * delta_0 + inclusion * N(0, variance), Gaussian part on
/// `nodes` Gauss-Hermite atoms.
inline Prior bernoulli_gaussian_prior(double inclusion, double variance, int nodes = 101) {
  if (!(inclusion > 0.0 && inclusion < 1.0)) throw InvalidPrior("bernoulli-gaussian: inclusion must be in (0,1)");
  if (!(variance > 0.0)) throw InvalidPrior("bernoulli-gaussian: variance must be positive");
  auto rule = gauss_hermite(nodes);
  std::vector<std::pair<double, double>> atoms;
  atoms.reserve(rule.size() + 1);
  const double sd = std::sqrt(variance);
  for (std::size_t i = 0; i < rule.size(); ++i) atoms.emplace_back(sd * rule.nodes[i], inclusion * rule.weights[i]);
  atoms.emplace_back(0.0, 1.0 - inclusion);
  return Prior(std::move(atoms), PriorKind::QuadratureOfContinuous,
               "bernoulli-gaussian(" + std::to_string(inclusion) + ", " + std::to_string(variance) + ")",
               1.0 - inclusion, variance);
}

/// N(0, variance) on `nodes` Gauss-Hermite atoms.
inline Prior gaussian_prior(double variance, int nodes = 101) {
  if (!(variance > 0.0)) throw InvalidPrior("gaussian: variance must be positive");
  auto rule = gauss_hermite(nodes);
  std::vector<std::pair<double, double>> atoms;
  const double sd = std::sqrt(variance);
  for (std::size_t i = 0; i < rule.size(); ++i) atoms.emplace_back(sd * rule.nodes[i], rule.weights[i]);
  return Prior(std::move(atoms), PriorKind::QuadratureOfContinuous,
               "gaussian(" + std::to_string(variance) + ")", 0.0, variance);
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline double parse_double(std::string_view s) {
  s = trim(s);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw InvalidPrior("cannot parse number '" + std::string(s) + "'");
  }
  return v;
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace detail

/// Parses `three-point`, `point-mass:v1,w1;v2,w2;...`,
/// `bernoulli-gaussian:<inclusion>,<variance>` and `gaussian:<variance>`.
/// Angle brackets around the argument list are accepted and ignored.
inline Prior parse_prior(std::string_view text, int quadrature_nodes = 101) {
  text = detail::trim(text);
  auto colon = text.find(':');
  std::string_view name = detail::trim(text.substr(0, colon));
  std::string_view args = colon == std::string_view::npos ? std::string_view{} : detail::trim(text.substr(colon + 1));
  if (!args.empty() && args.front() == '<' && args.back() == '>') args = args.substr(1, args.size() - 2);

  if (name == "three-point") {
    if (!args.empty()) throw InvalidPrior("three-point takes no arguments");
    return three_point_prior();
  }
  if (name == "point-mass") {
    std::vector<std::pair<double, double>> atoms;
    for (auto item : detail::split(args, ';')) {
      if (detail::trim(item).empty()) continue;
      auto parts = detail::split(item, ',');
      if (parts.size() != 2) throw InvalidPrior("point-mass atoms are 'value,weight'");
      atoms.emplace_back(detail::parse_double(parts[0]), detail::parse_double(parts[1]));
    }
    return Prior(std::move(atoms), PriorKind::ExplicitDiscrete, std::string(text));
  }
  if (name == "bernoulli-gaussian") {
    auto parts = detail::split(args, ',');
    if (parts.size() != 2) throw InvalidPrior("bernoulli-gaussian takes '<inclusion>,<variance>'");
    return bernoulli_gaussian_prior(detail::parse_double(parts[0]), detail::parse_double(parts[1]),
                                    quadrature_nodes);
  }
  if (name == "gaussian") {
    return gaussian_prior(detail::parse_double(args), quadrature_nodes);
  }
  throw InvalidPrior("unknown prior descriptor '" + std::string(text) + "'");
}

}  // namespace taplab
