// neuralbo command-line driver: run | suite | summarize | ntk-check

#include "neuralbo/neuralbo.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

namespace {

using neuralbo::json;

// CLI flags that mirror experiment-config keys. Only flags given on the
// command line override the config file.
struct ConfigFlags {
  std::string config_path;
  json overrides = json::object();

  void attach(CLI::App& app) {
    app.add_option("-c,--config", config_path, "JSON experiment config")->check(CLI::ExistingFile);
    str(app, "--objective", "objective", "objective id, e.g. ackley-10");
    num<std::uint64_t>(app, "--master-seed", "master_seed", "master seed for per-run seed derivation");
    app.add_option_function<std::vector<std::uint64_t>>(
        "--seeds", [this](const std::vector<std::uint64_t>& v) { overrides["seeds"] = v; }, "explicit run seeds")
        ->delimiter(',');
    num<std::size_t>(app, "--repeats", "repeats", "number of runs");
    num<std::size_t>(app, "--workers", "workers", "parallel worker threads");
    num<std::size_t>(app, "--budget", "budget", "optimization steps T");
    num<std::size_t>(app, "--initial-design", "initial_design", "random points evaluated before the loop");
    num<std::size_t>(app, "--width", "width", "network width m");
    num<std::size_t>(app, "--depth", "depth", "network depth L");
    str(app, "--init", "init", "he-theory | experiment | mirrored");
    str(app, "--train-mode", "train_mode", "minibatch | full-batch");
    num<std::size_t>(app, "--steps", "steps", "gradient steps J (full-batch)");
    num<double>(app, "--learning-rate", "learning_rate", "learning rate eta");
    num<std::size_t>(app, "--batch-size", "batch_size", "minibatch size");
    num<std::size_t>(app, "--epochs", "epochs", "training epochs (minibatch)");
    num<double>(app, "--lambda", "lambda", "regularization lambda");
    flag(app, "--theory-lambda", "theory_lambda", "use lambda = 1 + 1/T");
    str(app, "--nu-mode", "nu_mode", "fixed | theory");
    num<double>(app, "--nu", "nu", "fixed exploration scale");
    num<double>(app, "--rkhs-bound", "rkhs_bound", "B for the theory schedule");
    num<double>(app, "--noise-scale", "noise_scale", "R for the theory schedule");
    num<double>(app, "--alpha", "alpha", "confidence level for the theory schedule");
    num<std::size_t>(app, "--n-candidates", "n_candidates", "candidates per Thompson step");
    str(app, "--candidate-scheme", "candidate_scheme", "uniform | halton");
    flag(app, "--warm-start", "warm_start", "retrain from the previous parameters");
    num<double>(app, "--greedy-perturbation", "greedy_perturbation", "target perturbation for neural-greedy");
    str(app, "--noise-interpretation", "noise_interpretation", "variance | sd");
    num<double>(app, "--noise-fraction", "noise_fraction", "noise as a fraction of the function range");
    num<std::size_t>(app, "--range-probes", "range_probes", "samples for the range estimate");
    str(app, "-o,--output-dir", "output_dir", "directory for traces and summary.json");
  }

  neuralbo::ExperimentConfig resolve() const {
    json j = json::object();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      in >> j;
    }
    for (const auto& [k, v] : overrides.items()) j[k] = v;
    if (j.contains("seeds") && !overrides.contains("repeats")) j.erase("repeats");
    return neuralbo::config_from_json(j);
  }

 private:
  void str(CLI::App& app, const std::string& name, const std::string& key, const std::string& help) {
    app.add_option_function<std::string>(name, [this, key](const std::string& v) { overrides[key] = v; }, help);
  }
  template <class T>
  void num(CLI::App& app, const std::string& name, const std::string& key, const std::string& help) {
    app.add_option_function<T>(name, [this, key](const T& v) { overrides[key] = v; }, help);
  }
  void flag(CLI::App& app, const std::string& name, const std::string& key, const std::string& help) {
    app.add_flag_callback(name, [this, key] { overrides[key] = true; }, help);
  }
};

void report(const neuralbo::ExperimentResult& res) {
  for (const auto& [id, s] : res.summaries)
    std::cout << id << ": runs=" << s.runs << " final median=" << s.final_value.median << " IQR=[" << s.final_value.q1
              << ", " << s.final_value.q3 << "]\n";
  for (const auto& f : res.failures)
    std::cerr << "run " << f.seed_index << " of " << f.optimizer << " failed after " << f.completed_rows
              << " rows: " << f.message << '\n';
  for (const auto& p : res.files) std::cout << "wrote " << p.string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural-surrogate Thompson-sampling black-box optimizer"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "run one optimizer for every seed of a config");
  ConfigFlags run_flags;
  run_flags.attach(*run);
  std::string run_optimizer;
  run->add_option("--optimizer", run_optimizer, "neuralbo | neural-greedy | random");

  auto* suite = app.add_subcommand("suite", "run a comparison set sharing initial designs");
  ConfigFlags suite_flags;
  suite_flags.attach(*suite);
  std::vector<std::string> suite_optimizers;
  suite->add_option("--optimizers", suite_optimizers, "optimizer ids")->delimiter(',');

  auto* summ = app.add_subcommand("summarize", "summarize equal-length trace CSVs");
  std::vector<std::string> trace_files;
  std::string summary_out;
  summ->add_option("traces", trace_files, "trace CSV files")->required()->check(CLI::ExistingFile);
  summ->add_option("-o,--out", summary_out, "write the summary JSON here instead of stdout");

  auto* ntk = app.add_subcommand("ntk-check", "compare finite-width kernels with the analytic NTK");
  std::size_t dim = 5, depth = 2, pairs = 20, inits = 8;
  std::uint64_t seed = 0;
  std::vector<std::size_t> widths{64, 512, 4096};
  std::string scheme = "mirrored", csv_out;
  ntk->add_option("--dim", dim, "input dimension");
  ntk->add_option("--depth", depth, "network depth L");
  ntk->add_option("--pairs", pairs, "random unit-vector pairs");
  ntk->add_option("--inits", inits, "initializations per pair");
  ntk->add_option("--widths", widths, "widths to sweep")->delimiter(',');
  ntk->add_option("--scheme", scheme, "he-theory | experiment | mirrored");
  ntk->add_option("--seed", seed, "seed");
  ntk->add_option("--csv", csv_out, "write the sweep as CSV");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      auto cfg = run_flags.resolve();
      if (!run_optimizer.empty()) cfg.optimizers = {run_optimizer};
      if (cfg.optimizers.size() != 1) throw neuralbo::ConfigError("run takes exactly one optimizer; use suite for several");
      report(neuralbo::run_experiment(cfg));
    } else if (*suite) {
      auto cfg = suite_flags.resolve();
      if (!suite_optimizers.empty()) cfg.optimizers = suite_optimizers;
      cfg.validate();
      const auto res = neuralbo::run_experiment(cfg);
      report(res);
      return res.failures.empty() ? 0 : 3;
    } else if (*summ) {
      std::vector<neuralbo::RunTrace> traces;
      for (const auto& f : trace_files) traces.push_back(neuralbo::load_trace_csv(f));
      const std::string text = neuralbo::to_json(neuralbo::summarize(traces)).dump(2) + "\n";
      if (summary_out.empty()) std::cout << text;
      else neuralbo::write_atomically(summary_out, text);
    } else if (*ntk) {
      const auto init = neuralbo::parse_init_scheme(scheme);
      const auto p = neuralbo::random_unit_pairs(dim, pairs, seed);
      const auto rows = neuralbo::width_convergence(p, depth, widths, inits, init, seed);
      std::ostringstream csv;
      csv << "width,median_abs_error,max_abs_error,diagonal_ratio\n";
      for (const auto& r : rows) {
        csv << r.width << ',' << r.median_abs_error << ',' << r.max_abs_error << ',' << r.diagonal_ratio << '\n';
        std::cout << "m=" << r.width << "  median |K_emp - K_ntk| = " << r.median_abs_error
                  << "  max = " << r.max_abs_error << "  diagonal ratio = " << r.diagonal_ratio << '\n';
      }
      if (!csv_out.empty()) neuralbo::write_atomically(csv_out, csv.str());
    }
  } catch (const neuralbo::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
