#pragma once

// Experiment configuration, seed fan-out, trace persistence and summaries.

#include "neuralbo/benchmarks.hpp"
#include "neuralbo/optimizer.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace neuralbo {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr const char* kTraceSchema = "#schema=neuralbo-trace/1";
inline constexpr const char* kTraceColumns = "iter,x,y_noisy,f_true,best_true,sigma,sampled_value,elapsed_ms";
inline constexpr const char* kOutputDirEnv = "NEURALBO_OUTPUT_DIR";

struct ExperimentConfig {
  std::string objective = "ackley-10";
  std::vector<std::string> optimizers{"neuralbo"};
  std::uint64_t master_seed = 0;
  std::vector<std::uint64_t> seeds;  // derived from master_seed when empty
  std::size_t repeats = 1;
  std::size_t workers = 1;
  OptimizerConfig optimizer;
  std::string output_dir = "results";

  /// Seed of run i: explicit list entry, or derive_seed(master_seed, i).
  std::vector<std::uint64_t> run_seeds() const {
    if (!seeds.empty()) return seeds;
    std::vector<std::uint64_t> out;
    for (std::size_t i = 0; i < repeats; ++i) out.push_back(derive_seed(master_seed, i));
    return out;
  }

  void validate() const {
    if (repeats < 1) throw ConfigError("repeats must be >= 1");
    if (!seeds.empty() && seeds.size() != repeats) throw ConfigError("repeats must equal the length of the seed list");
    if (optimizers.empty()) throw ConfigError("at least one optimizer id is required");
    for (const auto& o : optimizers) parse_method(o);
    make_objective(objective);
    optimizer.validate();
  }
};

// ---------------------------------------------------------------------------
// JSON config

inline json to_json(const ExperimentConfig& c) {
  const auto& o = c.optimizer;
  json j;
  j["objective"] = c.objective;
  j["optimizers"] = c.optimizers;
  j["master_seed"] = c.master_seed;
  j["seeds"] = c.run_seeds();
  j["repeats"] = c.repeats;
  j["budget"] = o.budget;
  j["initial_design"] = o.initial_design;
  j["width"] = o.width;
  j["depth"] = o.depth;
  j["init"] = to_string(o.init);
  j["train_mode"] = o.train.mode == TrainMode::full_batch ? "full-batch" : "minibatch";
  j["steps"] = o.train.steps;
  j["learning_rate"] = o.train.learning_rate;
  j["batch_size"] = o.train.batch_size;
  j["epochs"] = o.train.epochs;
  j["lambda"] = o.lambda;
  j["theory_lambda"] = o.theory_lambda;
  j["nu_mode"] = o.exploration.mode == ExplorationSchedule::Mode::theory ? "theory" : "fixed";
  j["nu"] = o.exploration.value;
  j["rkhs_bound"] = o.exploration.rkhs_bound;
  j["noise_scale"] = o.exploration.noise_scale;
  j["alpha"] = o.exploration.alpha;
  j["n_candidates"] = o.acquisition.n_candidates;
  j["candidate_scheme"] = to_string(o.acquisition.scheme);
  j["warm_start"] = o.warm_start;
  j["greedy_perturbation"] = o.greedy_perturbation;
  j["noise_interpretation"] = to_string(o.noise_interpretation);
  j["noise_fraction"] = o.noise_fraction;
  j["range_probes"] = o.range_probes;
  j["range_seed"] = o.range_seed;
  j["output_dir"] = c.output_dir;
  return j;
}

/// Reads a flat JSON document; absent keys keep their defaults, unknown keys are rejected.
inline ExperimentConfig config_from_json(const json& j) {
  static const std::vector<std::string> known = {
      "objective", "optimizer", "optimizers", "master_seed", "seeds", "repeats", "workers", "budget",
      "initial_design", "width", "depth", "init", "train_mode", "steps", "learning_rate", "batch_size", "epochs",
      "lambda", "theory_lambda", "nu_mode", "nu", "rkhs_bound", "noise_scale", "alpha", "n_candidates",
      "candidate_scheme", "warm_start", "greedy_perturbation", "noise_interpretation", "noise_fraction",
      "range_probes", "range_seed", "output_dir"};
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (std::find(known.begin(), known.end(), k) == known.end()) throw ConfigError("unknown config key '" + k + "'");

  ExperimentConfig c;
  auto& o = c.optimizer;
  try {
    auto opt = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    opt("objective", c.objective);
    if (j.contains("optimizer")) c.optimizers = {j.at("optimizer").get<std::string>()};
    opt("optimizers", c.optimizers);
    opt("master_seed", c.master_seed);
    opt("seeds", c.seeds);
    if (!c.seeds.empty()) c.repeats = c.seeds.size();
    opt("repeats", c.repeats);
    opt("workers", c.workers);
    opt("budget", o.budget);
    opt("initial_design", o.initial_design);
    opt("width", o.width);
    opt("depth", o.depth);
    if (j.contains("init")) o.init = parse_init_scheme(j.at("init").get<std::string>());
    if (j.contains("train_mode")) {
      const auto m = j.at("train_mode").get<std::string>();
      if (m == "full-batch") o.train.mode = TrainMode::full_batch;
      else if (m == "minibatch") o.train.mode = TrainMode::minibatch;
      else throw ConfigError("train_mode must be 'full-batch' or 'minibatch'");
    }
    opt("steps", o.train.steps);
    opt("learning_rate", o.train.learning_rate);
    opt("batch_size", o.train.batch_size);
    opt("epochs", o.train.epochs);
    opt("lambda", o.lambda);
    opt("theory_lambda", o.theory_lambda);
    if (j.contains("nu_mode")) {
      const auto m = j.at("nu_mode").get<std::string>();
      if (m == "theory") o.exploration.mode = ExplorationSchedule::Mode::theory;
      else if (m == "fixed") o.exploration.mode = ExplorationSchedule::Mode::fixed;
      else throw ConfigError("nu_mode must be 'theory' or 'fixed'");
    }
    opt("nu", o.exploration.value);
    opt("rkhs_bound", o.exploration.rkhs_bound);
    opt("noise_scale", o.exploration.noise_scale);
    opt("alpha", o.exploration.alpha);
    opt("n_candidates", o.acquisition.n_candidates);
    if (j.contains("candidate_scheme")) o.acquisition.scheme = parse_candidate_scheme(j.at("candidate_scheme").get<std::string>());
    opt("warm_start", o.warm_start);
    opt("greedy_perturbation", o.greedy_perturbation);
    if (j.contains("noise_interpretation"))
      o.noise_interpretation = parse_noise_interpretation(j.at("noise_interpretation").get<std::string>());
    opt("noise_fraction", o.noise_fraction);
    opt("range_probes", o.range_probes);
    opt("range_seed", o.range_seed);
    opt("output_dir", c.output_dir);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed experiment config: ") + e.what());
  }
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) c.output_dir = env;
  c.validate();
  return c;
}

inline ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Trace CSV

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline void write_trace_csv(std::ostream& os, const RunTrace& trace) {
  os << kTraceSchema << '\n' << kTraceColumns << '\n';
  for (const auto& r : trace.rows) {
    os << r.iter << ',';
    for (Eigen::Index i = 0; i < r.x.size(); ++i) os << (i ? ";" : "") << format_double(r.x[i]);
    os << ',' << format_double(r.y_noisy) << ',' << format_double(r.f_true) << ',' << format_double(r.best_true) << ','
       << format_double(r.sigma) << ',' << format_double(r.sampled_value) << ',' << format_double(r.elapsed_ms) << '\n';
  }
}

/// Writes to a sibling temporary and renames, so `path` is either absent,
/// the previous version, or complete.
inline void write_atomically(const fs::path& path, const std::string& contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << contents;
    out.flush();
    if (!out) throw std::runtime_error("write to " + tmp.string() + " failed");
  }
  fs::rename(tmp, path);
}

inline void save_trace_csv(const fs::path& path, const RunTrace& trace) {
  std::ostringstream os;
  write_trace_csv(os, trace);
  write_atomically(path, os.str());
}

inline double parse_double(const std::string& s) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw InputError("malformed number '" + s + "' in trace");
  }
  if (used != s.size()) throw InputError("malformed number '" + s + "' in trace");
  return v;
}

inline RunTrace read_trace_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kTraceSchema) throw InputError("trace is missing the schema line");
  if (!std::getline(in, line) || line != kTraceColumns) throw InputError("trace has an unexpected header");
  RunTrace trace;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (cells.size() != 8) throw InputError("trace row has " + std::to_string(cells.size()) + " cells, expected 8");
    TraceRow r;
    r.iter = static_cast<std::size_t>(std::stoull(cells[0]));
    std::vector<double> xs;
    std::stringstream xss(cells[1]);
    for (std::string c; std::getline(xss, c, ';');) xs.push_back(parse_double(c));
    r.x = Eigen::Map<Vector>(xs.data(), static_cast<Eigen::Index>(xs.size()));
    r.y_noisy = parse_double(cells[2]);
    r.f_true = parse_double(cells[3]);
    r.best_true = parse_double(cells[4]);
    r.sigma = parse_double(cells[5]);
    r.sampled_value = parse_double(cells[6]);
    r.elapsed_ms = parse_double(cells[7]);
    trace.rows.push_back(std::move(r));
  }
  return trace;
}

inline RunTrace load_trace_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open trace " + path.string());
  return read_trace_csv(in);
}

// ---------------------------------------------------------------------------
// Summaries

/// Linear-interpolation quantile of a sorted sample (midpoint for the median
/// of an even count).
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw InputError("quantile of an empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

struct FinalStats {
  double median = 0.0, q1 = 0.0, q3 = 0.0, min = 0.0, max = 0.0, mean = 0.0;
};

struct SummaryReport {
  std::size_t runs = 0;
  std::vector<double> median, q1, q3;  // per iteration, best-so-far
  FinalStats final_value;
  double wall_time_ms = 0.0;
};

inline SummaryReport summarize(const std::vector<RunTrace>& traces) {
  if (traces.empty()) throw InputError("summarize needs at least one trace");
  const std::size_t n = traces.front().size();
  for (const auto& t : traces)
    if (t.size() != n) throw InputError("traces have ragged lengths");

  SummaryReport r;
  r.runs = traces.size();
  std::vector<double> col(traces.size());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < traces.size(); ++k) col[k] = traces[k].rows[i].best_true;
    std::sort(col.begin(), col.end());
    r.median.push_back(quantile_sorted(col, 0.5));
    r.q1.push_back(quantile_sorted(col, 0.25));
    r.q3.push_back(quantile_sorted(col, 0.75));
  }
  if (n > 0) {
    for (std::size_t k = 0; k < traces.size(); ++k) col[k] = traces[k].rows.back().best_true;
    std::sort(col.begin(), col.end());
    auto& f = r.final_value;
    f.median = quantile_sorted(col, 0.5);
    f.q1 = quantile_sorted(col, 0.25);
    f.q3 = quantile_sorted(col, 0.75);
    f.min = col.front();
    f.max = col.back();
    for (double v : col) f.mean += v;
    f.mean /= static_cast<double>(col.size());
  }
  for (const auto& t : traces)
    if (!t.rows.empty()) r.wall_time_ms += t.rows.back().elapsed_ms;
  return r;
}

inline json to_json(const SummaryReport& r) {
  return json{{"runs", r.runs},
              {"median", r.median},
              {"q1", r.q1},
              {"q3", r.q3},
              {"final", {{"median", r.final_value.median}, {"q1", r.final_value.q1}, {"q3", r.final_value.q3},
                         {"min", r.final_value.min}, {"max", r.final_value.max}, {"mean", r.final_value.mean}}},
              {"wall_time_ms", r.wall_time_ms}};
}

// ---------------------------------------------------------------------------
// Experiments

struct RunFailure {
  std::string optimizer;
  std::size_t seed_index = 0;
  std::uint64_t seed = 0;
  std::string message;
  std::size_t completed_rows = 0;
};

struct ExperimentResult {
  std::map<std::string, SummaryReport> summaries;  // by optimizer id
  std::map<std::string, std::vector<RunTrace>> traces;
  std::vector<RunFailure> failures;
  std::vector<fs::path> files;
  json summary_json;
};

inline fs::path trace_path(const fs::path& dir, const std::string& optimizer, const std::string& objective,
                           std::size_t seed_index) {
  return dir / (optimizer + "_" + objective + "_run" + std::to_string(seed_index) + ".csv");
}

/// Runs every (optimizer, seed) pair of the config. Each seed's initial
/// design is drawn once and shared by all optimizers. Traces are written as
/// CSV and the per-optimizer summaries to summary.json under output_dir.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, bool persist = true) {
  cfg.validate();
  const Objective obj = make_objective(cfg.objective);
  const NoiseModel noise = noise_for(obj, cfg.optimizer);
  const auto seeds = cfg.run_seeds();

  std::vector<InitialDesign> designs;
  for (auto s : seeds) designs.push_back(draw_initial_design(obj, noise, cfg.optimizer.initial_design, s));

  struct Job {
    std::size_t opt, seed;
  };
  std::vector<Job> jobs;
  for (std::size_t o = 0; o < cfg.optimizers.size(); ++o)
    for (std::size_t s = 0; s < seeds.size(); ++s) jobs.push_back({o, s});

  std::vector<std::optional<RunTrace>> done(jobs.size());
  std::vector<std::optional<RunFailure>> failed(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k; (k = next.fetch_add(1)) < jobs.size();) {
      const auto [o, s] = jobs[k];
      const std::string& id = cfg.optimizers[o];
      try {
        RunState run(parse_method(id), cfg.optimizer, obj, noise, seeds[s], designs[s]);
        for (std::size_t t = 0; t < cfg.optimizer.budget; ++t) run.step();
        done[k] = run.trace();
      } catch (const RunAborted& e) {
        failed[k] = RunFailure{id, s, seeds[s], e.what(), e.partial().size()};
      } catch (const std::exception& e) {
        failed[k] = RunFailure{id, s, seeds[s], e.what(), 0};
      }
    }
  };
  const std::size_t n_workers = std::max<std::size_t>(1, std::min(cfg.workers, jobs.size()));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  ExperimentResult res;
  const fs::path dir = cfg.output_dir;
  for (std::size_t k = 0; k < jobs.size(); ++k) {
    const std::string& id = cfg.optimizers[jobs[k].opt];
    if (failed[k]) {
      res.failures.push_back(*failed[k]);
      continue;
    }
    res.traces[id].push_back(*done[k]);
    if (persist) {
      const auto path = trace_path(dir, id, obj.id(), jobs[k].seed);
      save_trace_csv(path, *done[k]);
      res.files.push_back(path);
    }
  }

  json& sj = res.summary_json;
  sj["config"] = to_json(cfg);
  sj["noise_sd"] = noise.sd;
  sj["trace_schema"] = kTraceSchema;
  sj["optimizers"] = json::object();
  for (const auto& id : cfg.optimizers) {
    if (auto it = res.traces.find(id); it != res.traces.end() && !it->second.empty()) {
      res.summaries[id] = summarize(it->second);
      sj["optimizers"][id] = to_json(res.summaries[id]);
    }
  }
  sj["failures"] = json::array();
  for (const auto& f : res.failures)
    sj["failures"].push_back({{"optimizer", f.optimizer}, {"run", f.seed_index}, {"seed", f.seed},
                              {"message", f.message}, {"completed_rows", f.completed_rows}});
  if (persist) {
    const auto path = dir / "summary.json";
    write_atomically(path, sj.dump(2) + "\n");
    res.files.push_back(path);
  }
  return res;
}

}  // namespace neuralbo
