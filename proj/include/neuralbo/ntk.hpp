#pragma once

// Analytic neural tangent kernel of the bias-free ReLU network, its Gram
// matrices, information-gain diagnostics, and the finite-width empirical
// kernel it is compared against.
//
// Recursion over layers l = 1..L-1, starting from Sigma^(1) = Htilde^(1) = <x, x'>:
//
//   Sigma^(l+1)  = 2 E[relu(u) relu(v)]
//   Htilde^(l+1) = 2 Htilde^(l) E[relu'(u) relu'(v)] + Sigma^(l+1)
//
// with (u, v) ~ N(0, [[S_ii, S_ij], [S_ij, S_jj]]) built from Sigma^(l), and
// H = (Htilde^(L) + Sigma^(L)) / 2. The Gaussian expectations use the
// arc-cosine closed forms with rho = S_ij / sqrt(S_ii S_jj), t = acos(rho):
//
//   E[relu(u) relu(v)]   = sqrt(S_ii S_jj) (sin t + (pi - t) cos t) / (2 pi)
//   E[relu'(u) relu'(v)] = (pi - t) / (2 pi)

#include "neuralbo/common.hpp"
#include "neuralbo/confidence.hpp"
#include "neuralbo/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <sstream>
#include <utility>
#include <vector>

namespace neuralbo {

struct ReluMoments {
  double activation;  // E[relu(u) relu(v)]
  double derivative;  // E[relu'(u) relu'(v)]
};

inline ReluMoments relu_moments(double s_ii, double s_jj, double s_ij) {
  const double scale = std::sqrt(s_ii * s_jj);
  if (!(scale > 0.0)) throw InputError("relu moments need positive variances");
  const double rho = std::clamp(s_ij / scale, -1.0, 1.0);
  const double t = std::acos(rho);
  constexpr double pi = std::numbers::pi;
  return {scale * (std::sin(t) + (pi - t) * std::cos(t)) / (2.0 * pi), (pi - t) / (2.0 * pi)};
}

/// Sigma^(l) and Htilde^(l) for l = 1..L at one input pair.
struct NtkLayers {
  std::vector<double> sigma;
  std::vector<double> htilde;
};

inline NtkLayers ntk_layers(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& xp, std::size_t depth) {
  if (x.size() != xp.size()) throw InputError("kernel inputs differ in dimension");
  if (depth < 2) throw ConfigError("network depth must be >= 2");
  double s_ii = x.squaredNorm(), s_jj = xp.squaredNorm(), s_ij = x.dot(xp);
  if (!(s_ii > 0.0) || !(s_jj > 0.0)) throw InputError("NTK is undefined for a zero-norm input");
  NtkLayers out;
  out.sigma.push_back(s_ij);
  out.htilde.push_back(s_ij);
  for (std::size_t l = 1; l < depth; ++l) {
    const ReluMoments cross = relu_moments(s_ii, s_jj, s_ij);
    // Diagonal terms: 2 E[relu(u)^2] = S_ii, so the variances are preserved.
    s_ij = 2.0 * cross.activation;
    out.sigma.push_back(s_ij);
    out.htilde.push_back(2.0 * out.htilde.back() * cross.derivative + s_ij);
  }
  return out;
}

/// Unnormalized unless `normalize`, which divides by sqrt(k(x,x) k(x',x')).
inline double ntk_value(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& xp, std::size_t depth,
                        bool normalize = false) {
  const NtkLayers layers = ntk_layers(x, xp, depth);
  const double h = 0.5 * (layers.htilde.back() + layers.sigma.back());
  if (!normalize) return h;
  const double kxx = ntk_value(x, x, depth), kyy = ntk_value(xp, xp, depth);
  return h / std::sqrt(kxx * kyy);
}

struct KernelMatrix {
  Matrix values;
  std::vector<Vector> points;

  Eigen::Index size() const { return values.rows(); }
};

inline double psd_tolerance(const Eigen::VectorXd& eigenvalues) {
  return 1e-8 * std::max(eigenvalues.cwiseAbs().maxCoeff(), 0.0);
}

inline KernelMatrix ntk_matrix(const std::vector<Vector>& points, std::size_t depth, bool normalize = false) {
  if (points.empty()) throw InputError("kernel matrix needs at least one point");
  const auto t = static_cast<Eigen::Index>(points.size());
  KernelMatrix K{Matrix(t, t), points};
  for (Eigen::Index i = 0; i < t; ++i)
    for (Eigen::Index j = 0; j <= i; ++j)
      K.values(i, j) = K.values(j, i) =
          ntk_value(points[static_cast<std::size_t>(i)], points[static_cast<std::size_t>(j)], depth, normalize);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(K.values, Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success) throw NumericalError("eigen decomposition of NTK matrix failed");
  const double lo = eig.eigenvalues().minCoeff();
  if (lo < -psd_tolerance(eig.eigenvalues())) {
    std::ostringstream msg;
    msg << "NTK matrix is not PSD: smallest eigenvalue " << lo << ", largest " << eig.eigenvalues().maxCoeff();
    throw NumericalError(msg.str());
  }
  return K;
}

/// log det(I + K / lambda) by Cholesky.
inline double log_det_regularized(const Eigen::Ref<const Matrix>& K, double lambda) {
  if (!(lambda > 0.0)) throw ConfigError("lambda must be positive");
  const Matrix A = Matrix::Identity(K.rows(), K.cols()) + K / lambda;
  Eigen::LLT<Matrix> llt(A);
  if (llt.info() != Eigen::Success) throw NumericalError("Cholesky factorization of I + K/lambda failed");
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

struct InfoGainReport {
  std::size_t t = 0;
  double lambda = 0.0;
  double value = 0.0;           // 1/2 log det(I + H / lambda)
  double smallest_eigenvalue = 0.0;
};

inline InfoGainReport info_gain(const KernelMatrix& H, double lambda) {
  InfoGainReport r;
  r.t = static_cast<std::size_t>(H.size());
  r.lambda = lambda;
  r.value = 0.5 * log_det_regularized(H.values, lambda);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(H.values, Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success) throw NumericalError("eigen decomposition failed");
  r.smallest_eigenvalue = eig.eigenvalues().minCoeff();
  return r;
}

inline InfoGainReport info_gain(const std::vector<Vector>& points, double lambda, std::size_t depth) {
  return info_gain(ntk_matrix(points, depth), lambda);
}

// ---------------------------------------------------------------------------
// Finite-width kernel

/// K_ij = <g(x_i; theta0), g(x_j; theta0)> / m
inline Matrix empirical_gram(const NetworkState& net, const std::vector<Vector>& points) {
  if (points.empty()) throw InputError("empirical gram needs at least one point");
  Matrix X(static_cast<Eigen::Index>(net.shape().input_dim), static_cast<Eigen::Index>(points.size()));
  for (std::size_t i = 0; i < points.size(); ++i) X.col(static_cast<Eigen::Index>(i)) = points[i];
  const RowMatrix F = feature_batch(net, X);
  return F * F.transpose();
}

struct KernelEstimate {
  double mean = 0.0;
  double std_error = 0.0;
  std::size_t samples = 0;
};

/// Mean and standard error of <g(x; theta0), g(x'; theta0)>/m over one fresh
/// initialization per seed.
inline KernelEstimate empirical_kernel(const NetworkShape& shape, const std::vector<std::uint64_t>& seeds,
                                       const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& xp,
                                       InitScheme scheme = InitScheme::he_theory) {
  if (seeds.empty()) throw InputError("empirical kernel needs at least one seed");
  std::vector<double> vals;
  vals.reserve(seeds.size());
  for (auto s : seeds) {
    const NetworkState net = init_network(shape, s, scheme);
    vals.push_back(feature(net, x).dot(feature(net, xp)));
  }
  KernelEstimate e;
  e.samples = vals.size();
  for (double v : vals) e.mean += v;
  e.mean /= static_cast<double>(vals.size());
  if (vals.size() > 1) {
    double ss = 0.0;
    for (double v : vals) ss += (v - e.mean) * (v - e.mean);
    e.std_error = std::sqrt(ss / static_cast<double>(vals.size() - 1) / static_cast<double>(vals.size()));
  }
  return e;
}

/// Random unit-norm input pairs for kernel studies.
inline std::vector<std::pair<Vector, Vector>> random_unit_pairs(std::size_t dim, std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::pair<Vector, Vector>> out;
  for (std::size_t i = 0; i < count; ++i) {
    Vector a = standard_normal_vector(rng, static_cast<Eigen::Index>(dim)).normalized();
    Vector b = standard_normal_vector(rng, static_cast<Eigen::Index>(dim)).normalized();
    out.emplace_back(std::move(a), std::move(b));
  }
  return out;
}

struct WidthReport {
  std::size_t width = 0;
  double median_abs_error = 0.0;
  double max_abs_error = 0.0;
  double diagonal_ratio = 0.0;  // mean of K_emp(x, x) / K_ntk(x, x)
};

/// |empirical_kernel - ntk_value| over `pairs` at each width, with
/// `n_inits` initializations per pair.
inline std::vector<WidthReport> width_convergence(const std::vector<std::pair<Vector, Vector>>& pairs, std::size_t depth,
                                                  const std::vector<std::size_t>& widths, std::size_t n_inits,
                                                  InitScheme scheme, std::uint64_t seed) {
  if (pairs.empty()) throw InputError("width study needs at least one pair");
  std::vector<WidthReport> out;
  for (std::size_t w : widths) {
    const NetworkShape shape{static_cast<std::size_t>(pairs.front().first.size()), depth, w};
    std::vector<double> err;
    double ratio = 0.0;
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      std::vector<std::uint64_t> seeds;
      for (std::size_t s = 0; s < n_inits; ++s) seeds.push_back(derive_seed(derive_seed(seed, w), k * n_inits + s));
      const double exact = ntk_value(pairs[k].first, pairs[k].second, depth);
      const double est = empirical_kernel(shape, seeds, pairs[k].first, pairs[k].second, scheme).mean;
      err.push_back(std::abs(est - exact));
      const auto& x = pairs[k].first;
      ratio += empirical_kernel(shape, seeds, x, x, scheme).mean / ntk_value(x, x, depth);
    }
    WidthReport r;
    r.width = w;
    r.max_abs_error = *std::max_element(err.begin(), err.end());
    std::sort(err.begin(), err.end());
    const std::size_t n = err.size();
    r.median_abs_error = n % 2 ? err[n / 2] : 0.5 * (err[n / 2 - 1] + err[n / 2]);
    r.diagonal_ratio = ratio / static_cast<double>(pairs.size());
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV export

inline void write_kernel_csv(std::ostream& os, const KernelMatrix& K) {
  os.precision(17);
  const Eigen::Index t = K.size();
  os << "i";
  for (Eigen::Index j = 0; j < t; ++j) os << ",k" << j;
  os << '\n';
  for (Eigen::Index i = 0; i < t; ++i) {
    os << i;
    for (Eigen::Index j = 0; j < t; ++j) os << ',' << K.values(i, j);
    os << '\n';
  }
}

inline void write_info_gain_csv(std::ostream& os, const std::vector<InfoGainReport>& reports) {
  os.precision(17);
  os << "t,lambda,info_gain,smallest_eigenvalue\n";
  for (const auto& r : reports) os << r.t << ',' << r.lambda << ',' << r.value << ',' << r.smallest_eigenvalue << '\n';
}

}  // namespace neuralbo
