#pragma once

// Synthetic minimization benchmarks and their observation-noise model.
//
//   Ackley       [-32.768, 32.768]^d  a = 20, b = 0.2, c = 2 pi
//     f(x) = -a exp(-b sqrt(mean x_i^2)) - exp(mean cos(c x_i)) + a + e
//   Levy         [-10, 10]^d, w_i = 1 + (x_i - 1)/4
//     f(x) = sin^2(pi w_1) + sum_{i<d} (w_i - 1)^2 (1 + 10 sin^2(pi w_i + 1))
//            + (w_d - 1)^2 (1 + sin^2(2 pi w_d))
//   Michalewicz  [0, pi]^d, steepness 10
//     f(x) = -sum_i sin(x_i) sin^{20}(i x_i^2 / pi)

#include "neuralbo/common.hpp"

#include <cmath>
#include <functional>
#include <iostream>
#include <limits>
#include <map>
#include <mutex>
#include <numbers>
#include <optional>
#include <string>
#include <tuple>

namespace neuralbo {

struct Objective {
  std::string name;
  std::size_t dim = 0;
  Vector lower;
  Vector upper;
  std::function<double(const Eigen::Ref<const Vector>&)> fn;
  std::optional<double> known_minimum;

  std::string id() const { return name + "-" + std::to_string(dim); }

  bool contains(const Eigen::Ref<const Vector>& x) const {
    return x.size() == lower.size() && (x.array() >= lower.array()).all() && (x.array() <= upper.array()).all();
  }
};

namespace functions {

inline double ackley(const Eigen::Ref<const Vector>& x) {
  constexpr double a = 20.0, b = 0.2, c = 2.0 * std::numbers::pi;
  const double n = static_cast<double>(x.size());
  const double sq = x.squaredNorm() / n;
  const double cs = (c * x.array()).cos().sum() / n;
  return -a * std::exp(-b * std::sqrt(sq)) - std::exp(cs) + a + std::numbers::e;
}

inline double levy(const Eigen::Ref<const Vector>& x) {
  constexpr double pi = std::numbers::pi;
  const Eigen::Index d = x.size();
  auto w = [&](Eigen::Index i) { return 1.0 + (x[i] - 1.0) / 4.0; };
  auto sq = [](double v) { return v * v; };
  double f = sq(std::sin(pi * w(0)));
  for (Eigen::Index i = 0; i + 1 < d; ++i) f += sq(w(i) - 1.0) * (1.0 + 10.0 * sq(std::sin(pi * w(i) + 1.0)));
  const double wd = w(d - 1);
  return f + sq(wd - 1.0) * (1.0 + sq(std::sin(2.0 * pi * wd)));
}

inline double michalewicz(const Eigen::Ref<const Vector>& x) {
  constexpr double steepness = 10.0;
  double f = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double s = std::sin(static_cast<double>(i + 1) * x[i] * x[i] / std::numbers::pi);
    f -= std::sin(x[i]) * std::pow(s, 2.0 * steepness);
  }
  return f;
}

}  // namespace functions

inline Objective make_box_objective(std::string name, std::size_t dim, double lo, double hi,
                                    std::function<double(const Eigen::Ref<const Vector>&)> fn,
                                    std::optional<double> known_min = std::nullopt) {
  if (dim < 1) throw ConfigError("objective dimension must be >= 1");
  if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi)) throw ConfigError("objective bounds must be finite with lower < upper");
  const auto d = static_cast<Eigen::Index>(dim);
  return Objective{std::move(name), dim, Vector::Constant(d, lo), Vector::Constant(d, hi), std::move(fn), known_min};
}

/// Resolves "ackley-10", "levy-20", "michalewicz-50", ...
inline Objective make_objective(const std::string& id) {
  const auto dash = id.rfind('-');
  if (dash == std::string::npos || dash + 1 == id.size()) throw ConfigError("objective id must look like name-d: '" + id + "'");
  const std::string name = id.substr(0, dash);
  std::size_t dim = 0;
  try {
    std::size_t used = 0;
    dim = std::stoul(id.substr(dash + 1), &used);
    if (used != id.size() - dash - 1) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw ConfigError("objective id has a malformed dimension: '" + id + "'");
  }
  if (name == "ackley") return make_box_objective(name, dim, -32.768, 32.768, functions::ackley, 0.0);
  if (name == "levy") return make_box_objective(name, dim, -10.0, 10.0, functions::levy, 0.0);
  if (name == "michalewicz") return make_box_objective(name, dim, 0.0, std::numbers::pi, functions::michalewicz);
  throw ConfigError("unknown objective '" + name + "'");
}

inline double evaluate_true(const Objective& obj, const Eigen::Ref<const Vector>& x) {
  if (static_cast<std::size_t>(x.size()) != obj.dim) throw InputError("point dimension does not match objective " + obj.id());
  if (!obj.contains(x)) throw InputError("point lies outside the domain of " + obj.id());
  return obj.fn(x);
}

// ---------------------------------------------------------------------------
// Noise

/// How "noise variance is 1% of the function range" is read.
enum class NoiseInterpretation {
  variance_fraction,  // variance = fraction * range
  sd_fraction,        // sd = fraction * range
};

inline NoiseInterpretation parse_noise_interpretation(const std::string& s) {
  if (s == "variance") return NoiseInterpretation::variance_fraction;
  if (s == "sd") return NoiseInterpretation::sd_fraction;
  throw ConfigError("noise interpretation must be 'variance' or 'sd', got '" + s + "'");
}

inline std::string to_string(NoiseInterpretation n) {
  return n == NoiseInterpretation::variance_fraction ? "variance" : "sd";
}

struct NoiseModel {
  double sd = 0.0;

  static NoiseModel from_range(double range, NoiseInterpretation interp = NoiseInterpretation::variance_fraction,
                               double fraction = 0.01) {
    if (!(range >= 0.0) || !(fraction >= 0.0)) throw ConfigError("noise range and fraction must be non-negative");
    if (range == 0.0) std::clog << "warning: objective range is zero; observation noise disabled\n";
    return {interp == NoiseInterpretation::variance_fraction ? std::sqrt(fraction * range) : fraction * range};
  }
};

inline double evaluate_noisy(const Objective& obj, const NoiseModel& noise, const Eigen::Ref<const Vector>& x, Rng& rng) {
  const double f = evaluate_true(obj, x);
  if (noise.sd == 0.0) return f;
  std::normal_distribution<double> eps(0.0, noise.sd);
  return f + eps(rng);
}

/// max - min of the objective over n_probe uniform domain samples. Results are
/// memoized per (objective id, n_probe, seed).
inline double range_estimate(const Objective& obj, std::size_t n_probe, std::uint64_t seed) {
  if (n_probe < 2) throw ConfigError("range estimate needs at least two probes");
  static std::mutex mu;
  static std::map<std::tuple<std::string, std::size_t, std::uint64_t>, double> cache;
  const auto key = std::make_tuple(obj.id(), n_probe, seed);
  {
    std::lock_guard lock(mu);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
  }
  Rng rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Vector x(obj.lower.size());
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (std::size_t k = 0; k < n_probe; ++k) {
    for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = obj.lower[i] + (obj.upper[i] - obj.lower[i]) * u(rng);
    const double f = obj.fn(x);
    lo = std::min(lo, f);
    hi = std::max(hi, f);
  }
  const double range = hi - lo;
  std::lock_guard lock(mu);
  cache.emplace(key, range);
  return range;
}

}  // namespace neuralbo
