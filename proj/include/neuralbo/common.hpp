#pragma once

// Shared vocabulary types, the error hierarchy, and seeded random streams.

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace neuralbo {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Invalid or inconsistent configuration (shapes, schedules, registries).
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Malformed input to a well-configured object (dimension mismatch, out of domain).
struct InputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// A numerical routine produced an unusable result (indefinite matrix, failed factorization).
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// An internal invariant was found broken; the object state should not be trusted.
struct InvariantViolation : std::logic_error {
  using std::logic_error::logic_error;
};

/// Training produced a non-finite loss.
class TrainingDivergence : public std::runtime_error {
 public:
  TrainingDivergence(std::size_t step, double loss)
      : std::runtime_error("training diverged at step " + std::to_string(step) +
                           " (loss=" + std::to_string(loss) + ")"),
        step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Raised by an objective oracle that could not produce a value.
struct EvaluationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

/// splitmix64 finalizer; the mixing step used for every seed derivation.
constexpr std::uint64_t splitmix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Child seed for `index` under `parent`. Children are independent of each
/// other's existence, so adding a child never perturbs its siblings.
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) noexcept {
  return splitmix64(splitmix64(parent) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

/// Named sub-streams of one optimization run.
enum class Stream : std::uint64_t {
  network_init = 1,
  initial_design = 2,
  candidates = 3,
  thompson = 4,
  noise = 5,
  training = 6,
  perturbation = 7,
  initial_noise = 8,
};

inline Rng make_stream(std::uint64_t run_seed, Stream s) {
  return Rng(derive_seed(run_seed, static_cast<std::uint64_t>(s)));
}

inline double standard_normal(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  return n(rng);
}

inline Vector standard_normal_vector(Rng& rng, Eigen::Index n) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = dist(rng);
  return v;
}

}  // namespace neuralbo
