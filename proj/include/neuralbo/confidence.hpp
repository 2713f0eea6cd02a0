#pragma once

// Posterior width from the fixed initialization-gradient feature map.
//
//   phi(x)      = g(x; theta0) / sqrt(m)
//   U_t         = lambda I + sum_{i<=t} phi_i phi_i^T
//   sigma_t(x)  = sqrt(lambda phi(x)^T U_t^{-1} phi(x))
//
// U^{-1} is maintained directly with Sherman-Morrison updates together with
// log det(U_t / lambda).

#include "neuralbo/common.hpp"
#include "neuralbo/surrogate.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <vector>

namespace neuralbo {

inline Vector feature(const NetworkState& net, const Eigen::Ref<const Vector>& x) {
  return param_gradient(net, x, GradientAt::anchor) / std::sqrt(static_cast<double>(net.shape().width));
}

/// Row j is feature(net, X.col(j))^T.
inline RowMatrix feature_batch(const NetworkState& net, const Eigen::Ref<const Matrix>& X) {
  RowMatrix F = param_gradient_batch(net, X, GradientAt::anchor);
  F /= std::sqrt(static_cast<double>(net.shape().width));
  return F;
}

class PrecisionState {
 public:
  static constexpr double kNegativeTolerance = 1e-10;

  /// t = 0: U^{-1} = I / lambda, log det = 0.
  PrecisionState(std::size_t dim, double lambda, std::size_t feature_scale = 1)
      : lambda_(lambda), scale_(feature_scale) {
    if (dim < 1) throw ConfigError("precision dimension must be >= 1");
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be positive");
    inv_ = Matrix::Identity(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim)) / lambda;
  }

  /// Restores a state from its parts (checkpoint load). `inverse` must be symmetric.
  PrecisionState(Matrix inverse, double lambda, std::size_t feature_scale, std::size_t count, double logdet)
      : inv_(std::move(inverse)), lambda_(lambda), scale_(feature_scale), t_(count), logdet_(logdet) {
    if (inv_.rows() != inv_.cols() || inv_.rows() < 1) throw ConfigError("precision inverse must be square");
    if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
  }

  std::size_t dim() const noexcept { return static_cast<std::size_t>(inv_.rows()); }
  double lambda() const noexcept { return lambda_; }
  std::size_t feature_scale() const noexcept { return scale_; }
  std::size_t count() const noexcept { return t_; }
  /// log det(U_t / lambda)
  double logdet() const noexcept { return logdet_; }
  const Matrix& inverse() const noexcept { return inv_; }

  /// sigma = sqrt(lambda phi^T U^{-1} phi)
  double sigma(const Eigen::Ref<const Vector>& phi) const {
    check_dim(phi.size());
    return sigma_from_quadratic(lambda_ * phi.dot(inv_ * phi));
  }

  /// sigma for every row of F. Columns that are zero in every row are skipped,
  /// which is exact: they contribute nothing to any quadratic form.
  Vector sigma_batch(const Eigen::Ref<const RowMatrix>& F) const {
    check_dim(F.cols());
    std::vector<Eigen::Index> active;
    active.reserve(static_cast<std::size_t>(F.cols()));
    for (Eigen::Index j = 0; j < F.cols(); ++j)
      if (F.col(j).cwiseAbs().maxCoeff() != 0.0) active.push_back(j);

    Vector out(F.rows());
    if (active.empty()) return out.setZero();
    Matrix q;
    if (static_cast<Eigen::Index>(active.size()) == F.cols()) {
      q = (F * inv_).cwiseProduct(F);
    } else {
      const auto k = static_cast<Eigen::Index>(active.size());
      Matrix Fs(F.rows(), k), Us(k, k);
      for (Eigen::Index a = 0; a < k; ++a) {
        Fs.col(a) = F.col(active[static_cast<std::size_t>(a)]);
        for (Eigen::Index b = 0; b < k; ++b)
          Us(a, b) = inv_(active[static_cast<std::size_t>(a)], active[static_cast<std::size_t>(b)]);
      }
      q = (Fs * Us).cwiseProduct(Fs);
    }
    for (Eigen::Index i = 0; i < F.rows(); ++i) out[i] = sigma_from_quadratic(lambda_ * q.row(i).sum());
    return out;
  }

  /// In-place Sherman-Morrison step U <- U + phi phi^T.
  void update(const Eigen::Ref<const Vector>& phi) {
    check_dim(phi.size());
    if (!phi.allFinite()) throw InputError("feature vector is not finite");
    const Vector u = inv_ * phi;
    const double quad = phi.dot(u);
    const double denom = 1.0 + quad;
    if (!(denom > 0.0)) throw InvariantViolation("Sherman-Morrison denominator is non-positive; precision state corrupted");
    inv_.noalias() -= (u / denom) * u.transpose();
    symmetrize();
    logdet_ += std::log1p(quad);
    ++t_;
  }

  /// Largest |U^{-1} - U^{-T}| entry.
  double asymmetry() const { return (inv_ - inv_.transpose()).cwiseAbs().maxCoeff(); }

 private:
  void check_dim(Eigen::Index n) const {
    if (n != inv_.rows())
      throw InputError("feature has dimension " + std::to_string(n) + ", precision state expects " +
                       std::to_string(inv_.rows()));
  }

  static double sigma_from_quadratic(double q) {
    if (q >= 0.0) return std::sqrt(q);
    if (q >= -kNegativeTolerance) return 0.0;
    throw NumericalError("negative posterior variance " + std::to_string(q) + "; precision matrix is ill-conditioned");
  }

  void symmetrize() {
    const Eigen::Index p = inv_.rows();
    for (Eigen::Index j = 0; j < p; ++j)
      for (Eigen::Index i = j + 1; i < p; ++i) {
        const double avg = 0.5 * (inv_(i, j) + inv_(j, i));
        inv_(i, j) = avg;
        inv_(j, i) = avg;
      }
  }

  Matrix inv_;
  double lambda_;
  std::size_t scale_;
  std::size_t t_ = 0;
  double logdet_ = 0.0;
};

inline double sigma(const PrecisionState& state, const Eigen::Ref<const Vector>& phi) { return state.sigma(phi); }

inline PrecisionState rank_one_update(PrecisionState state, const Eigen::Ref<const Vector>& phi) {
  state.update(phi);
  return state;
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// Binary layout, host byte order (little-endian on every supported target):
//   char[8]  "NBOPREC1"
//   u64      t
//   f64      lambda
//   u64      m (feature scale)
//   u64      p
//   f64      log det(U_t / lambda)
//   f64[p(p+1)/2]  lower triangle of U^{-1}, row by row (j <= i)

namespace detail {
template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
template <class T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw InputError("truncated precision checkpoint");
  return v;
}
inline constexpr char kPrecisionMagic[8] = {'N', 'B', 'O', 'P', 'R', 'E', 'C', '1'};
}  // namespace detail

inline void save_checkpoint(std::ostream& os, const PrecisionState& s) {
  os.write(detail::kPrecisionMagic, sizeof detail::kPrecisionMagic);
  detail::put<std::uint64_t>(os, s.count());
  detail::put<double>(os, s.lambda());
  detail::put<std::uint64_t>(os, s.feature_scale());
  detail::put<std::uint64_t>(os, s.dim());
  detail::put<double>(os, s.logdet());
  const Matrix& inv = s.inverse();
  for (Eigen::Index i = 0; i < inv.rows(); ++i)
    for (Eigen::Index j = 0; j <= i; ++j) detail::put<double>(os, inv(i, j));
}

inline PrecisionState load_checkpoint(std::istream& is) {
  char magic[8];
  is.read(magic, sizeof magic);
  if (!is || std::memcmp(magic, detail::kPrecisionMagic, sizeof magic) != 0)
    throw InputError("not a precision checkpoint");
  const auto t = detail::get<std::uint64_t>(is);
  const auto lambda = detail::get<double>(is);
  const auto m = detail::get<std::uint64_t>(is);
  const auto p = detail::get<std::uint64_t>(is);
  const auto logdet = detail::get<double>(is);
  if (p == 0 || p > (1u << 20)) throw InputError("implausible precision dimension in checkpoint");
  Matrix inv(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(p));
  for (Eigen::Index i = 0; i < inv.rows(); ++i)
    for (Eigen::Index j = 0; j <= i; ++j) inv(i, j) = inv(j, i) = detail::get<double>(is);
  return PrecisionState(std::move(inv), lambda, static_cast<std::size_t>(m), static_cast<std::size_t>(t), logdet);
}

// ---------------------------------------------------------------------------
// Exploration scale

struct ExplorationSchedule {
  enum class Mode { theory, fixed };
  Mode mode = Mode::fixed;
  double rkhs_bound = 1.0;   // B
  double noise_scale = 0.0;  // R
  double alpha = 0.05;
  double value = 1.0;        // fixed-mode nu

  static ExplorationSchedule fixed(double nu) {
    ExplorationSchedule s;
    s.value = nu;
    return s;
  }
  static ExplorationSchedule theory(double B, double R, double alpha) {
    ExplorationSchedule s;
    s.mode = Mode::theory;
    s.rkhs_bound = B;
    s.noise_scale = R;
    s.alpha = alpha;
    return s;
  }

  void validate() const {
    if (mode == Mode::theory) {
      if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
      if (!(rkhs_bound > 0.0)) throw ConfigError("RKHS norm bound B must be positive");
      if (!(noise_scale >= 0.0)) throw ConfigError("noise parameter R must be non-negative");
    } else if (!(value >= 0.0) || !std::isfinite(value)) {
      // nu = 0 is accepted: it degenerates Thompson sampling to the greedy surrogate argmax.
      throw ConfigError("fixed exploration scale must be non-negative");
    }
  }
};

/// Theory mode: sqrt(2) B + (R / sqrt(lambda)) sqrt(2 ln(1/alpha)).
inline double nu(const ExplorationSchedule& s, double lambda) {
  s.validate();
  if (s.mode == ExplorationSchedule::Mode::fixed) return s.value;
  if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
  return std::sqrt(2.0) * s.rkhs_bound + s.noise_scale / std::sqrt(lambda) * std::sqrt(2.0 * std::log(1.0 / s.alpha));
}

/// lambda = 1 + 1/T
inline double theory_lambda(std::size_t horizon) { return 1.0 + 1.0 / static_cast<double>(horizon); }

}  // namespace neuralbo
