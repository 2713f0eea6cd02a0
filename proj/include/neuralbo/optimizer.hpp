#pragma once

// Thompson-sampling optimization loop with a neural surrogate, plus the
// greedy-surrogate and random-search baselines.
//
// Objectives are minimized. Internally the loop maximizes -y, so surrogate
// means and Thompson samples live on the negated scale; trace rows report
// them back on the objective's own scale.

#include "neuralbo/benchmarks.hpp"
#include "neuralbo/common.hpp"
#include "neuralbo/confidence.hpp"
#include "neuralbo/surrogate.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace neuralbo {

// ---------------------------------------------------------------------------
// Search domain

class Domain {
 public:
  enum class Kind { box, annulus };

  static Domain box(Vector lower, Vector upper) {
    if (lower.size() != upper.size() || lower.size() < 1) throw ConfigError("box bounds must have equal, positive length");
    if (!(lower.array() < upper.array()).all()) throw ConfigError("box requires lower < upper coordinate-wise");
    Domain d;
    d.kind_ = Kind::box;
    d.lower_ = std::move(lower);
    d.upper_ = std::move(upper);
    return d;
  }

  /// a <= ||x||_2 <= b in R^dim
  static Domain annulus(std::size_t dim, double a, double b) {
    if (dim < 1) throw ConfigError("annulus dimension must be >= 1");
    if (!(a > 0.0 && a <= b) || !std::isfinite(b)) throw ConfigError("annulus requires 0 < a <= b");
    Domain d;
    d.kind_ = Kind::annulus;
    d.a_ = a;
    d.b_ = b;
    d.lower_ = Vector::Constant(static_cast<Eigen::Index>(dim), -b);
    d.upper_ = Vector::Constant(static_cast<Eigen::Index>(dim), b);
    return d;
  }

  static Domain of(const Objective& obj) { return box(obj.lower, obj.upper); }

  Kind kind() const noexcept { return kind_; }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(lower_.size()); }
  const Vector& lower() const noexcept { return lower_; }
  const Vector& upper() const noexcept { return upper_; }
  double inner_radius() const noexcept { return a_; }
  double outer_radius() const noexcept { return b_; }

  bool contains(const Eigen::Ref<const Vector>& x) const {
    if (static_cast<std::size_t>(x.size()) != dim()) return false;
    if (kind_ == Kind::box) return (x.array() >= lower_.array()).all() && (x.array() <= upper_.array()).all();
    const double r = x.norm();
    return r >= a_ && r <= b_;
  }

  /// Maps a point in the unit cube [0,1)^d into the domain.
  Vector from_unit(const Eigen::Ref<const Vector>& u, Rng& rng) const {
    if (kind_ == Kind::box) return (lower_.array() + (upper_ - lower_).array() * u.array()).matrix();
    // Direction from a Gaussian, radius by inverse CDF of r^{d-1} on [a, b].
    Vector dir = standard_normal_vector(rng, lower_.size());
    while (dir.norm() == 0.0) dir = standard_normal_vector(rng, lower_.size());
    const double d = static_cast<double>(dim());
    const double ad = std::pow(a_, d), bd = std::pow(b_, d);
    const double r = std::clamp(std::pow(ad + u[0] * (bd - ad), 1.0 / d), a_, b_);
    return dir.normalized() * r;
  }

  /// Surrogate input for a domain point. Boxes are mapped affinely onto
  /// [-1, 1]^d; annulus points are passed through.
  Matrix model_input(const Eigen::Ref<const Matrix>& X) const {
    if (kind_ == Kind::annulus) return X;
    const Vector center = 0.5 * (lower_ + upper_);
    const Vector half = 0.5 * (upper_ - lower_);
    return (X.colwise() - center).array().colwise() / half.array();
  }

 private:
  Kind kind_ = Kind::box;
  Vector lower_, upper_;
  double a_ = 0.0, b_ = 0.0;
};

// ---------------------------------------------------------------------------
// Candidate generation

enum class CandidateScheme { uniform, halton };

inline CandidateScheme parse_candidate_scheme(const std::string& s) {
  if (s == "uniform") return CandidateScheme::uniform;
  if (s == "halton") return CandidateScheme::halton;
  throw ConfigError("candidate scheme must be 'uniform' or 'halton', got '" + s + "'");
}

inline std::string to_string(CandidateScheme s) { return s == CandidateScheme::uniform ? "uniform" : "halton"; }

struct AcquisitionConfig {
  std::size_t n_candidates = 2000;
  CandidateScheme scheme = CandidateScheme::uniform;

  void validate() const {
    if (n_candidates < 1) throw ConfigError("candidate count must be >= 1");
  }
};

namespace detail {

inline std::vector<unsigned> first_primes(std::size_t n) {
  std::vector<unsigned> primes;
  for (unsigned c = 2; primes.size() < n; ++c) {
    bool prime = true;
    for (unsigned p : primes) {
      if (p * p > c) break;
      if (c % p == 0) {
        prime = false;
        break;
      }
    }
    if (prime) primes.push_back(c);
  }
  return primes;
}

inline double radical_inverse(std::size_t index, unsigned base) {
  double inv = 1.0 / base, f = inv, r = 0.0;
  while (index > 0) {
    r += f * static_cast<double>(index % base);
    index /= base;
    f *= inv;
  }
  return r;
}

}  // namespace detail

/// n candidate points (columns). Halton points carry a random
/// Cranley-Patterson shift so every call yields a fresh low-discrepancy set.
inline Matrix sample_candidates(const Domain& domain, const AcquisitionConfig& acq, Rng& rng) {
  acq.validate();
  const auto d = static_cast<Eigen::Index>(domain.dim());
  const auto n = static_cast<Eigen::Index>(acq.n_candidates);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Matrix C(d, n);
  Vector u(d);
  if (acq.scheme == CandidateScheme::uniform) {
    for (Eigen::Index j = 0; j < n; ++j) {
      for (Eigen::Index i = 0; i < d; ++i) u[i] = unif(rng);
      C.col(j) = domain.from_unit(u, rng);
    }
    return C;
  }
  const auto primes = detail::first_primes(static_cast<std::size_t>(d));
  Vector shift(d);
  for (Eigen::Index i = 0; i < d; ++i) shift[i] = unif(rng);
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < d; ++i) {
      double v = detail::radical_inverse(static_cast<std::size_t>(j + 1), primes[static_cast<std::size_t>(i)]) + shift[i];
      u[i] = v - std::floor(v);
    }
    C.col(j) = domain.from_unit(u, rng);
  }
  return C;
}

// ---------------------------------------------------------------------------
// Proposal

struct Proposal {
  Vector x;
  Eigen::Index index = 0;
  double mean = 0.0;    // h(x; theta_{t-1}) on the maximization scale
  double sigma = 0.0;
  double sample = 0.0;  // Thompson draw at x
};

/// Thompson selection over a fixed candidate set (columns of `candidates`, in
/// domain coordinates). Each candidate gets its own N(mean, (nu sigma)^2)
/// draw; the first maximum wins ties.
inline Proposal propose_among(const NetworkState& net, const PrecisionState& state, double nu_value,
                              const Domain& domain, const Eigen::Ref<const Matrix>& candidates, Rng& rng) {
  if (candidates.cols() < 1) throw InputError("candidate set is empty");
  if (state.dim() != net.param_count()) throw ConfigError("precision state and network disagree on parameter count");
  const Matrix Z = domain.model_input(candidates);
  const Vector mean = forward_batch(net, Z);
  if (!mean.allFinite()) throw TrainingDivergence(0, std::numeric_limits<double>::quiet_NaN());

  constexpr Eigen::Index chunk = 256;
  Vector sig(Z.cols());
  for (Eigen::Index s = 0; s < Z.cols(); s += chunk) {
    const Eigen::Index len = std::min(chunk, Z.cols() - s);
    sig.segment(s, len) = state.sigma_batch(feature_batch(net, Z.middleCols(s, len)));
  }

  Proposal best;
  best.sample = -std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < Z.cols(); ++j) {
    const double z = standard_normal(rng);
    const double draw = mean[j] + nu_value * sig[j] * z;
    if (draw > best.sample || j == 0) {
      best.sample = draw;
      best.index = j;
    }
  }
  best.x = candidates.col(best.index);
  best.mean = mean[best.index];
  best.sigma = sig[best.index];
  return best;
}

inline Proposal propose(const NetworkState& net, const PrecisionState& state, const ExplorationSchedule& sched,
                        const Domain& domain, const AcquisitionConfig& acq, Rng& rng) {
  const Matrix C = sample_candidates(domain, acq, rng);
  return propose_among(net, state, nu(sched, state.lambda()), domain, C, rng);
}

/// argmax of the surrogate mean over the candidates, first index on ties.
inline Proposal greedy_select(const NetworkState& net, const Domain& domain, const Eigen::Ref<const Matrix>& candidates) {
  if (candidates.cols() < 1) throw InputError("candidate set is empty");
  const Vector mean = forward_batch(net, domain.model_input(candidates));
  if (!mean.allFinite()) throw TrainingDivergence(0, std::numeric_limits<double>::quiet_NaN());
  Proposal p;
  mean.maxCoeff(&p.index);
  p.x = candidates.col(p.index);
  p.mean = p.sample = mean[p.index];
  p.sigma = std::numeric_limits<double>::quiet_NaN();
  return p;
}

// ---------------------------------------------------------------------------
// Run records

struct ObservationLog {
  std::vector<Vector> xs;
  std::vector<double> ys;

  std::size_t size() const noexcept { return xs.size(); }

  void append(Vector x, double y) {
    xs.push_back(std::move(x));
    ys.push_back(y);
  }

  Matrix inputs() const {
    Matrix X(xs.empty() ? 0 : xs.front().size(), static_cast<Eigen::Index>(xs.size()));
    for (std::size_t i = 0; i < xs.size(); ++i) X.col(static_cast<Eigen::Index>(i)) = xs[i];
    return X;
  }
  Vector targets() const { return Eigen::Map<const Vector>(ys.data(), static_cast<Eigen::Index>(ys.size())); }
};

struct TraceRow {
  std::size_t iter = 0;  // 1-based optimization step
  Vector x;
  double y_noisy = 0.0;
  double f_true = 0.0;
  double best_true = 0.0;
  double sigma = std::numeric_limits<double>::quiet_NaN();
  double sampled_value = std::numeric_limits<double>::quiet_NaN();
  double elapsed_ms = 0.0;
};

struct RunTrace {
  std::vector<TraceRow> rows;

  std::size_t size() const noexcept { return rows.size(); }
  std::vector<double> best_curve() const {
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(r.best_true);
    return out;
  }
  bool monotone() const {
    for (std::size_t i = 1; i < rows.size(); ++i)
      if (rows[i].best_true > rows[i - 1].best_true) return false;
    return true;
  }
};

/// Thrown when a run cannot continue; carries every row completed so far.
class RunAborted : public std::runtime_error {
 public:
  RunAborted(const std::string& what, RunTrace partial) : std::runtime_error(what), partial_(std::move(partial)) {}
  const RunTrace& partial() const noexcept { return partial_; }

 private:
  RunTrace partial_;
};

// ---------------------------------------------------------------------------
// Configuration

struct OptimizerConfig {
  std::size_t width = 128;
  std::size_t depth = 2;
  InitScheme init = InitScheme::he_theory;
  TrainConfig train = TrainConfig::experiment();
  /// Regularization for both training and the precision matrix. When
  /// `theory_lambda` is set it is replaced by 1 + 1/T.
  double lambda = 0.01;
  bool theory_lambda = false;
  ExplorationSchedule exploration = ExplorationSchedule::fixed(1.0);
  AcquisitionConfig acquisition;
  std::size_t budget = 100;          // T
  std::size_t initial_design = 15;
  bool warm_start = false;           // retrain from theta_{t-1} instead of theta0
  double greedy_perturbation = 0.1;  // target noise for the greedy baseline, relative to target sd
  NoiseInterpretation noise_interpretation = NoiseInterpretation::variance_fraction;
  double noise_fraction = 0.01;
  std::size_t range_probes = 100000;
  std::uint64_t range_seed = 0;

  double effective_lambda() const { return theory_lambda ? neuralbo::theory_lambda(budget) : lambda; }

  void validate() const {
    if (budget < 1) throw ConfigError("budget T must be >= 1");
    NetworkShape{1, depth, width}.validate();
    acquisition.validate();
    exploration.validate();
    if (!(effective_lambda() > 0.0)) throw ConfigError("lambda must be positive");
    if (!(greedy_perturbation >= 0.0)) throw ConfigError("greedy perturbation must be non-negative");
  }
};

/// Points and noisy observations evaluated before the first optimization step.
struct InitialDesign {
  std::vector<Vector> xs;
  std::vector<double> ys;
  std::vector<double> f_true;
};

inline InitialDesign draw_initial_design(const Objective& obj, const NoiseModel& noise, std::size_t n,
                                         std::uint64_t run_seed) {
  const Domain domain = Domain::of(obj);
  Rng pts = make_stream(run_seed, Stream::initial_design);
  Rng eps = make_stream(run_seed, Stream::initial_noise);
  AcquisitionConfig acq{std::max<std::size_t>(n, 1), CandidateScheme::uniform};
  InitialDesign out;
  if (n == 0) return out;
  const Matrix X = sample_candidates(domain, acq, pts);
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    out.xs.push_back(X.col(j));
    out.f_true.push_back(evaluate_true(obj, X.col(j)));
    out.ys.push_back(evaluate_noisy(obj, noise, X.col(j), eps));
    if (!std::isfinite(out.f_true.back()) || !std::isfinite(out.ys.back()))
      throw EvaluationError("objective returned a non-finite value in the initial design");
  }
  return out;
}

inline NoiseModel noise_for(const Objective& obj, const OptimizerConfig& cfg) {
  return NoiseModel::from_range(range_estimate(obj, cfg.range_probes, cfg.range_seed), cfg.noise_interpretation,
                                cfg.noise_fraction);
}

// ---------------------------------------------------------------------------
// The loop

enum class Method { neuralbo, neural_greedy, random_search };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::neuralbo: return "neuralbo";
    case Method::neural_greedy: return "neural-greedy";
    case Method::random_search: return "random";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "neuralbo") return Method::neuralbo;
  if (s == "neural-greedy") return Method::neural_greedy;
  if (s == "random") return Method::random_search;
  throw ConfigError("unknown optimizer '" + s + "'");
}

/// Mutable state of one run. Owned by exactly one thread.
class RunState {
 public:
  using RowSink = std::function<void(const TraceRow&)>;

  RunState(Method method, OptimizerConfig cfg, Objective obj, NoiseModel noise, std::uint64_t seed,
           std::optional<InitialDesign> design = std::nullopt)
      : method_(method),
        cfg_(std::move(cfg)),
        obj_(std::move(obj)),
        noise_(noise),
        domain_(Domain::of(obj_)),
        net_(init_network(NetworkShape{obj_.dim, cfg_.depth, cfg_.width}, derive_seed(seed, static_cast<std::uint64_t>(Stream::network_init)), cfg_.init)),
        precision_(net_.param_count(), cfg_.effective_lambda(), cfg_.width),
        candidates_rng_(make_stream(seed, Stream::candidates)),
        thompson_rng_(make_stream(seed, Stream::thompson)),
        noise_rng_(make_stream(seed, Stream::noise)),
        training_rng_(make_stream(seed, Stream::training)),
        perturb_rng_(make_stream(seed, Stream::perturbation)),
        start_(std::chrono::steady_clock::now()) {
    cfg_.validate();
    cfg_.train.lambda = cfg_.effective_lambda();
    if (method_ == Method::random_search) precision_ = PrecisionState(1, cfg_.effective_lambda());
    const InitialDesign init = design ? *std::move(design) : draw_initial_design(obj_, noise_, cfg_.initial_design, seed);
    for (std::size_t i = 0; i < init.xs.size(); ++i) {
      if (!domain_.contains(init.xs[i])) throw InputError("initial design point outside the domain");
      ingest(init.xs[i], init.ys[i]);
      best_true_ = std::min(best_true_, init.f_true[i]);
    }
    if (!log_.xs.empty() && method_ != Method::random_search) retrain();
  }

  const ObservationLog& log() const noexcept { return log_; }
  const PrecisionState& precision() const noexcept { return precision_; }
  const NetworkState& network() const noexcept { return net_; }
  const RunTrace& trace() const noexcept { return trace_; }
  const Domain& domain() const noexcept { return domain_; }
  const OptimizerConfig& config() const noexcept { return cfg_; }
  double best_true() const noexcept { return best_true_; }
  double exploration_scale() const { return nu(cfg_.exploration, precision_.lambda()); }

  void set_sink(RowSink sink) { sink_ = std::move(sink); }

  /// One optimization step: select, evaluate, record, refit.
  void step() {
    TraceRow row;
    row.iter = trace_.size() + 1;
    if (method_ == Method::random_search) {
      const Matrix c = sample_candidates(domain_, AcquisitionConfig{1, CandidateScheme::uniform}, candidates_rng_);
      row.x = c.col(0);
    } else {
      const Matrix C = sample_candidates(domain_, cfg_.acquisition, candidates_rng_);
      Proposal p = method_ == Method::neuralbo
                       ? propose_among(net_, precision_, exploration_scale(), domain_, C, thompson_rng_)
                       : greedy_select(net_, domain_, C);
      row.x = std::move(p.x);
      row.sigma = p.sigma;
      row.sampled_value = -p.sample;
    }

    try {
      row.f_true = evaluate_true(obj_, row.x);
      row.y_noisy = evaluate_noisy(obj_, noise_, row.x, noise_rng_);
      if (!std::isfinite(row.f_true) || !std::isfinite(row.y_noisy)) throw EvaluationError("objective returned a non-finite value");
    } catch (const std::exception& e) {
      throw RunAborted(std::string("objective evaluation failed: ") + e.what(), trace_);
    }

    ingest(row.x, row.y_noisy);
    if (method_ != Method::random_search) retrain();
    best_true_ = std::min(best_true_, row.f_true);
    row.best_true = best_true_;
    row.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
    trace_.rows.push_back(row);
    if (sink_) sink_(trace_.rows.back());
  }

 private:
  void ingest(const Vector& x, double y) {
    log_.append(x, y);
    if (method_ == Method::neuralbo) precision_.update(feature(net_, domain_.model_input(x)));
  }

  void retrain() {
    const Matrix Z = domain_.model_input(log_.inputs());
    Vector targets = -log_.targets();
    if (method_ == Method::neural_greedy && cfg_.greedy_perturbation > 0.0 && targets.size() > 1) {
      const double mean = targets.mean();
      const double sd = std::sqrt((targets.array() - mean).square().sum() / static_cast<double>(targets.size() - 1));
      std::normal_distribution<double> z(0.0, cfg_.greedy_perturbation * sd);
      for (Eigen::Index i = 0; i < targets.size(); ++i) targets[i] += z(perturb_rng_);
    }
    const NetworkState start = cfg_.warm_start ? net_ : net_.with_params(net_.anchor());
    try {
      net_ = train(start, Z, targets, cfg_.train, &training_rng_);
    } catch (const TrainingDivergence& e) {
      throw RunAborted(e.what(), trace_);
    }
  }

  Method method_;
  OptimizerConfig cfg_;
  Objective obj_;
  NoiseModel noise_;
  Domain domain_;
  NetworkState net_;
  PrecisionState precision_;
  ObservationLog log_;
  RunTrace trace_;
  Rng candidates_rng_, thompson_rng_, noise_rng_, training_rng_, perturb_rng_;
  std::chrono::steady_clock::time_point start_;
  double best_true_ = std::numeric_limits<double>::infinity();
  RowSink sink_;
};

inline RunTrace run_method(Method method, const OptimizerConfig& cfg, const Objective& obj, std::uint64_t seed,
                           std::optional<InitialDesign> design = std::nullopt, RunState::RowSink sink = {}) {
  const NoiseModel noise = noise_for(obj, cfg);
  RunState run(method, cfg, obj, noise, seed, std::move(design));
  run.set_sink(std::move(sink));
  for (std::size_t t = 0; t < cfg.budget; ++t) run.step();
  return run.trace();
}

inline RunTrace run_neuralbo(const OptimizerConfig& cfg, const Objective& obj, std::uint64_t seed,
                             std::optional<InitialDesign> design = std::nullopt) {
  return run_method(Method::neuralbo, cfg, obj, seed, std::move(design));
}

inline RunTrace run_neural_greedy(const OptimizerConfig& cfg, const Objective& obj, std::uint64_t seed,
                                  std::optional<InitialDesign> design = std::nullopt) {
  return run_method(Method::neural_greedy, cfg, obj, seed, std::move(design));
}

inline RunTrace run_random_search(const OptimizerConfig& cfg, const Objective& obj, std::uint64_t seed,
                                  std::optional<InitialDesign> design = std::nullopt) {
  return run_method(Method::random_search, cfg, obj, seed, std::move(design));
}

}  // namespace neuralbo
