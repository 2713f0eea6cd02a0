#pragma once

// Bias-free fully-connected ReLU network
//
//   h(x; theta) = sqrt(m) * W_L relu(W_{L-1} relu( ... relu(W_1 x)))
//
// with W_1 in R^{m x d}, W_2..W_{L-1} in R^{m x m} and W_L in R^{1 x m}.
// Parameters live in one flat vector: W_1 row-major, then W_2, ..., W_L.
// Every parameter-space quantity (gradients, features, the precision
// matrix) uses this order.

#include "neuralbo/common.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace neuralbo {

struct NetworkShape {
  std::size_t input_dim = 1;
  std::size_t depth = 2;
  std::size_t width = 1;

  void validate() const {
    if (input_dim < 1) throw ConfigError("network input dimension must be >= 1");
    if (depth < 2) throw ConfigError("network depth must be >= 2");
    if (width < 1) throw ConfigError("network width must be >= 1");
  }

  /// p = m d + m^2 (L - 2) + m
  std::size_t param_count() const {
    return width * input_dim + width * width * (depth - 2) + width;
  }

  // Layers are 1-based to match W_1..W_L.
  std::size_t rows(std::size_t layer) const { return layer == depth ? 1 : width; }
  std::size_t cols(std::size_t layer) const { return layer == 1 ? input_dim : width; }

  std::size_t offset(std::size_t layer) const {
    std::size_t off = 0;
    for (std::size_t l = 1; l < layer; ++l) off += rows(l) * cols(l);
    return off;
  }

  friend bool operator==(const NetworkShape&, const NetworkShape&) = default;
};

enum class InitScheme {
  /// Hidden entries ~ N(0, 2/m), output layer zeroed: h(x; theta0) == 0.
  he_theory,
  /// Every entry ~ N(0, 1/m).
  experiment,
  /// Two identical half-width subnetworks with opposite output weights:
  /// h(x; theta0) = 0 up to rounding while every layer keeps a non-zero gradient. Hidden
  /// blocks use He scaling for their fan-in, output weights ~ N(0, 1/m), so
  /// <g, g'>/m at init converges to the analytic NTK. Requires even m.
  mirrored,
};

inline std::string to_string(InitScheme s) {
  switch (s) {
    case InitScheme::he_theory: return "he-theory";
    case InitScheme::experiment: return "experiment";
    case InitScheme::mirrored: return "mirrored";
  }
  return "?";
}

inline InitScheme parse_init_scheme(const std::string& s) {
  if (s == "he-theory") return InitScheme::he_theory;
  if (s == "experiment") return InitScheme::experiment;
  if (s == "mirrored") return InitScheme::mirrored;
  throw ConfigError("unknown init scheme '" + s + "'");
}

/// Live parameters plus the frozen initialization they are regularized toward.
/// Copies share the anchor, which is never written after construction.
class NetworkState {
 public:
  using LayerView = Eigen::Map<const RowMatrix>;

  NetworkState(NetworkShape shape, InitScheme scheme, Vector anchor)
      : shape_(shape), scheme_(scheme), params_(anchor),
        anchor_(std::make_shared<const Vector>(std::move(anchor))) {
    shape_.validate();
    if (static_cast<std::size_t>(params_.size()) != shape_.param_count())
      throw ConfigError("parameter vector length does not match network shape");
  }

  const NetworkShape& shape() const noexcept { return shape_; }
  InitScheme scheme() const noexcept { return scheme_; }
  const Vector& params() const noexcept { return params_; }
  const Vector& anchor() const noexcept { return *anchor_; }
  std::size_t param_count() const noexcept { return shape_.param_count(); }

  /// Same anchor, new live parameters.
  NetworkState with_params(Vector params) const {
    if (params.size() != params_.size()) throw InputError("parameter vector length mismatch");
    NetworkState out = *this;
    out.params_ = std::move(params);
    return out;
  }

  LayerView layer(std::size_t l) const { return view(params_, l); }
  LayerView anchor_layer(std::size_t l) const { return view(*anchor_, l); }

  LayerView view(const Vector& flat, std::size_t l) const {
    return LayerView(flat.data() + shape_.offset(l), static_cast<Eigen::Index>(shape_.rows(l)),
                     static_cast<Eigen::Index>(shape_.cols(l)));
  }

 private:
  NetworkShape shape_;
  InitScheme scheme_;
  Vector params_;
  std::shared_ptr<const Vector> anchor_;
};

inline NetworkState init_network(const NetworkShape& shape, std::uint64_t seed,
                                 InitScheme scheme = InitScheme::he_theory) {
  shape.validate();
  const std::size_t m = shape.width;
  const double md = static_cast<double>(m);
  if (scheme == InitScheme::mirrored && m % 2 != 0)
    throw ConfigError("mirrored initialization requires an even width");

  Rng rng(seed);
  Vector theta = Vector::Zero(static_cast<Eigen::Index>(shape.param_count()));
  auto fill = [&](std::size_t l, double variance) {
    std::normal_distribution<double> dist(0.0, std::sqrt(variance));
    const std::size_t off = shape.offset(l), n = shape.rows(l) * shape.cols(l);
    for (std::size_t i = 0; i < n; ++i) theta[static_cast<Eigen::Index>(off + i)] = dist(rng);
  };

  switch (scheme) {
    case InitScheme::he_theory:
      for (std::size_t l = 1; l < shape.depth; ++l) fill(l, 2.0 / md);
      break;
    case InitScheme::experiment:
      for (std::size_t l = 1; l <= shape.depth; ++l) fill(l, 1.0 / md);
      break;
    case InitScheme::mirrored: {
      const std::size_t half = m / 2, d = shape.input_dim;
      std::normal_distribution<double> first(0.0, std::sqrt(2.0 / md));
      std::normal_distribution<double> hidden(0.0, std::sqrt(4.0 / md));
      std::normal_distribution<double> out(0.0, std::sqrt(1.0 / md));
      auto at = [&](std::size_t l, std::size_t r, std::size_t c) -> double& {
        return theta[static_cast<Eigen::Index>(shape.offset(l) + r * shape.cols(l) + c)];
      };
      for (std::size_t r = 0; r < half; ++r)
        for (std::size_t c = 0; c < d; ++c) at(1, r, c) = at(1, r + half, c) = first(rng);
      for (std::size_t l = 2; l < shape.depth; ++l)
        for (std::size_t r = 0; r < half; ++r)
          for (std::size_t c = 0; c < half; ++c) at(l, r, c) = at(l, r + half, c + half) = hidden(rng);
      for (std::size_t c = 0; c < half; ++c) {
        at(shape.depth, 0, c) = out(rng);
        at(shape.depth, 0, c + half) = -at(shape.depth, 0, c);
      }
      break;
    }
  }
  return NetworkState(shape, scheme, std::move(theta));
}

namespace detail {

inline void check_input(const NetworkState& net, Eigen::Index rows) {
  if (static_cast<std::size_t>(rows) != net.shape().input_dim)
    throw InputError("input has dimension " + std::to_string(rows) + ", network expects " +
                     std::to_string(net.shape().input_dim));
}

// Pre-activations of every hidden layer for a batch of inputs (columns of X).
struct BatchActivations {
  std::vector<Matrix> pre;   // pre[l-1] = W_l a_{l-1}, l = 1..L-1
  std::vector<Matrix> post;  // post[0] = X, post[l] = relu(pre[l-1])
  Eigen::RowVectorXd output;
};

inline BatchActivations forward_batch_full(const NetworkState& net, const Vector& flat,
                                           const Eigen::Ref<const Matrix>& X) {
  const auto& s = net.shape();
  BatchActivations act;
  act.post.push_back(X);
  for (std::size_t l = 1; l < s.depth; ++l) {
    act.pre.push_back(net.view(flat, l) * act.post.back());
    act.post.push_back(act.pre.back().cwiseMax(0.0));
  }
  act.output = std::sqrt(static_cast<double>(s.width)) * (net.view(flat, s.depth) * act.post.back());
  return act;
}

inline Matrix relu_mask(const Matrix& pre) {
  return (pre.array() > 0.0).cast<double>().matrix();
}

// Gradient of sum_b w_b h(x_b) w.r.t. the flat parameters at `flat`.
inline Vector weighted_gradient(const NetworkState& net, const Vector& flat, const BatchActivations& act,
                                const Eigen::Ref<const Eigen::RowVectorXd>& w) {
  const auto& s = net.shape();
  const double sqm = std::sqrt(static_cast<double>(s.width));
  Vector grad(static_cast<Eigen::Index>(s.param_count()));
  auto block = [&](std::size_t l) {
    return Eigen::Map<RowMatrix>(grad.data() + s.offset(l), static_cast<Eigen::Index>(s.rows(l)),
                                 static_cast<Eigen::Index>(s.cols(l)));
  };
  const std::size_t L = s.depth;
  block(L) = sqm * (act.post[L - 1] * w.transpose()).transpose();
  Matrix delta = (sqm * net.view(flat, L).transpose() * w).cwiseProduct(relu_mask(act.pre[L - 2]));
  for (std::size_t l = L - 1; l >= 1; --l) {
    block(l) = delta * act.post[l - 1].transpose();
    if (l == 1) break;
    delta = (net.view(flat, l).transpose() * delta).cwiseProduct(relu_mask(act.pre[l - 2]));
  }
  return grad;
}

}  // namespace detail

inline double forward(const NetworkState& net, const Eigen::Ref<const Vector>& x) {
  detail::check_input(net, x.size());
  return detail::forward_batch_full(net, net.params(), x).output[0];
}

/// h(x_j; theta) for every column x_j of X.
inline Vector forward_batch(const NetworkState& net, const Eigen::Ref<const Matrix>& X) {
  detail::check_input(net, X.rows());
  return detail::forward_batch_full(net, net.params(), X).output.transpose();
}

enum class GradientAt { anchor, current };

/// g(x; theta) = d h / d theta in the flat parameter order. relu'(0) = 0.
inline Vector param_gradient(const NetworkState& net, const Eigen::Ref<const Vector>& x,
                             GradientAt at = GradientAt::current) {
  detail::check_input(net, x.size());
  const Vector& flat = at == GradientAt::anchor ? net.anchor() : net.params();
  auto act = detail::forward_batch_full(net, flat, x);
  Eigen::RowVectorXd one = Eigen::RowVectorXd::Ones(1);
  return detail::weighted_gradient(net, flat, act, one);
}

/// Row j holds g(x_j; theta)^T for column x_j of X.
inline RowMatrix param_gradient_batch(const NetworkState& net, const Eigen::Ref<const Matrix>& X,
                                      GradientAt at = GradientAt::current) {
  detail::check_input(net, X.rows());
  const auto& s = net.shape();
  const Vector& flat = at == GradientAt::anchor ? net.anchor() : net.params();
  const auto act = detail::forward_batch_full(net, flat, X);
  const double sqm = std::sqrt(static_cast<double>(s.width));
  const Eigen::Index n = X.cols();
  const std::size_t L = s.depth;
  RowMatrix G(n, static_cast<Eigen::Index>(s.param_count()));

  // delta[l] columns: dh/d pre_l for each sample
  Matrix delta = (sqm * net.view(flat, L).transpose()).replicate(1, n).cwiseProduct(
      detail::relu_mask(act.pre[L - 2]));
  G.middleCols(static_cast<Eigen::Index>(s.offset(L)), static_cast<Eigen::Index>(s.width)) =
      sqm * act.post[L - 1].transpose();
  for (std::size_t l = L - 1; l >= 1; --l) {
    const auto rows = static_cast<Eigen::Index>(s.rows(l)), cols = static_cast<Eigen::Index>(s.cols(l));
    const auto off = static_cast<Eigen::Index>(s.offset(l));
    for (Eigen::Index j = 0; j < n; ++j) {
      Eigen::Map<RowMatrix> blk(G.row(j).data() + off, rows, cols);
      blk.noalias() = delta.col(j) * act.post[l - 1].col(j).transpose();
    }
    if (l == 1) break;
    delta = (net.view(flat, l).transpose() * delta).cwiseProduct(detail::relu_mask(act.pre[l - 2]));
  }
  return G;
}

/// ||h_l||_2 of the post-activation of each hidden layer l = 1..L-1.
inline Vector hidden_norms(const NetworkState& net, const Eigen::Ref<const Vector>& x) {
  detail::check_input(net, x.size());
  const auto act = detail::forward_batch_full(net, net.params(), x);
  Vector out(static_cast<Eigen::Index>(net.shape().depth - 1));
  for (Eigen::Index l = 0; l < out.size(); ++l) out[l] = act.post[static_cast<std::size_t>(l) + 1].norm();
  return out;
}

/// Draws the hidden-layer norms of a fresh he-theory network at x without
/// materializing the weights. Given h_{l-1}, the rows of W_l are iid
/// N(0, 2/m I), so W_l h_{l-1} ~ N(0, (2/m)||h_{l-1}||^2 I_m) exactly; the
/// output has the same law as hidden_norms(init_network(shape, *, he_theory), x).
inline Vector sample_hidden_norms(const NetworkShape& shape, const Eigen::Ref<const Vector>& x, Rng& rng) {
  shape.validate();
  if (static_cast<std::size_t>(x.size()) != shape.input_dim) throw InputError("input dimension mismatch");
  const auto m = static_cast<Eigen::Index>(shape.width);
  Vector out(static_cast<Eigen::Index>(shape.depth - 1));
  double prev = x.norm();
  for (Eigen::Index l = 0; l < out.size(); ++l) {
    const double sd = std::sqrt(2.0 / static_cast<double>(m)) * prev;
    double sq = 0.0;
    for (Eigen::Index i = 0; i < m; ++i) {
      const double z = sd * standard_normal(rng);
      if (z > 0.0) sq += z * z;
    }
    prev = std::sqrt(sq);
    out[l] = prev;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

enum class TrainMode { full_batch, minibatch };

struct TrainConfig {
  TrainMode mode = TrainMode::minibatch;
  std::size_t steps = 100;        // J, full-batch mode
  double learning_rate = 1e-3;    // eta
  double lambda = 0.01;
  std::size_t batch_size = 50;    // minibatch mode
  std::size_t epochs = 50;        // minibatch mode
  bool theory_schedule = false;   // enforce eta * m * lambda < 1

  /// SGD settings used for the benchmark experiments.
  static TrainConfig experiment() { return {}; }

  /// Full-batch gradient descent with eta = 1 / (m lambda + m L T).
  static TrainConfig theory(const NetworkShape& shape, std::size_t horizon, double lambda, std::size_t steps) {
    TrainConfig c;
    c.mode = TrainMode::full_batch;
    c.lambda = lambda;
    c.steps = steps;
    const double m = static_cast<double>(shape.width);
    c.learning_rate = 1.0 / (m * lambda + m * static_cast<double>(shape.depth) * static_cast<double>(horizon));
    c.theory_schedule = true;
    return c;
  }

  void validate(const NetworkShape& shape) const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be positive");
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be positive");
    if (mode == TrainMode::minibatch && batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (theory_schedule && !(learning_rate * static_cast<double>(shape.width) * lambda < 1.0))
      throw ConfigError("theory schedule requires eta * m * lambda < 1");
  }
};

/// L(theta) = 1/2 sum_i (h(x_i) - y_i)^2 + 1/2 m lambda ||theta - theta0||^2
inline double training_loss(const NetworkState& net, const Eigen::Ref<const Matrix>& X,
                            const Eigen::Ref<const Vector>& y, double lambda) {
  detail::check_input(net, X.cols() ? X.rows() : static_cast<Eigen::Index>(net.shape().input_dim));
  const Vector r = forward_batch(net, X) - y;
  const double m = static_cast<double>(net.shape().width);
  return 0.5 * r.squaredNorm() + 0.5 * m * lambda * (net.params() - net.anchor()).squaredNorm();
}

/// Observer for per-step losses (full-batch mode reports the full objective
/// before each step and after the last).
using LossObserver = std::function<void(std::size_t step, double loss)>;

/// Gradient descent toward the anchor-regularized least-squares objective.
///
/// Full-batch mode runs exactly `steps` plain GD steps on the summed loss.
/// Minibatch mode runs `epochs` passes of shuffled minibatch SGD on
/// 1/(2B) sum_batch (h - y)^2 + 1/2 m lambda ||theta - theta0||^2; shuffling
/// draws from `rng`.
inline NetworkState train(const NetworkState& net, const Eigen::Ref<const Matrix>& X,
                          const Eigen::Ref<const Vector>& y, const TrainConfig& cfg, Rng* rng = nullptr,
                          const LossObserver& observe = {}) {
  const auto& s = net.shape();
  cfg.validate(s);
  if (X.cols() == 0) throw InputError("training set is empty");
  detail::check_input(net, X.rows());
  if (y.size() != X.cols()) throw InputError("target count does not match input count");

  const double mlambda = static_cast<double>(s.width) * cfg.lambda;
  const double eta = cfg.learning_rate;
  Vector theta = net.params();
  const Vector& anchor = net.anchor();
  NetworkState cur = net;

  if (cfg.mode == TrainMode::full_batch) {
    for (std::size_t k = 0; k < cfg.steps; ++k) {
      const auto act = detail::forward_batch_full(net, theta, X);
      const Eigen::RowVectorXd r = act.output - y.transpose();
      const double loss = 0.5 * r.squaredNorm() + 0.5 * mlambda * (theta - anchor).squaredNorm();
      if (!std::isfinite(loss)) throw TrainingDivergence(k, loss);
      if (observe) observe(k, loss);
      Vector grad = detail::weighted_gradient(net, theta, act, r);
      grad += mlambda * (theta - anchor);
      theta -= eta * grad;
    }
    if (observe || cfg.steps > 0) {
      const auto act = detail::forward_batch_full(net, theta, X);
      const double loss = 0.5 * (act.output - y.transpose()).squaredNorm() + 0.5 * mlambda * (theta - anchor).squaredNorm();
      if (!std::isfinite(loss)) throw TrainingDivergence(cfg.steps, loss);
      if (observe) observe(cfg.steps, loss);
    }
    return net.with_params(std::move(theta));
  }

  const auto n = X.cols();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Rng fallback(0);
  Rng& gen = rng ? *rng : fallback;
  const auto bs = static_cast<Eigen::Index>(std::min<std::size_t>(cfg.batch_size, static_cast<std::size_t>(n)));
  Matrix xb(X.rows(), bs);
  Vector yb(bs);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), gen);
    for (Eigen::Index start = 0; start < n; start += bs) {
      const Eigen::Index len = std::min(bs, n - start);
      for (Eigen::Index j = 0; j < len; ++j) {
        xb.col(j) = X.col(order[static_cast<std::size_t>(start + j)]);
        yb[j] = y[order[static_cast<std::size_t>(start + j)]];
      }
      const auto act = detail::forward_batch_full(net, theta, xb.leftCols(len));
      const Eigen::RowVectorXd r = act.output - yb.head(len).transpose();
      const double loss = 0.5 * r.squaredNorm() / static_cast<double>(len) +
                          0.5 * mlambda * (theta - anchor).squaredNorm();
      if (!std::isfinite(loss)) throw TrainingDivergence(step, loss);
      if (observe) observe(step, loss);
      Vector grad = detail::weighted_gradient(net, theta, act, r / static_cast<double>(len));
      grad += mlambda * (theta - anchor);
      theta -= eta * grad;
      ++step;
    }
  }
  return net.with_params(std::move(theta));
}

}  // namespace neuralbo
