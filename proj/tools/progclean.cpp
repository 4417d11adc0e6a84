// Command-line frontend: corrupt, train, simulate, compare, estimators,
// serve and demo-simpson. Exit status 0 on success, 1 on usage errors and 2
// on runtime errors.

#include <csignal>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "progclean/config.hpp"
#include "progclean/progclean.hpp"
#include "progclean/service.hpp"

using namespace progclean;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string input;
  std::optional<std::size_t> budget;
  std::optional<std::size_t> batch;
  bool timing = false;
};

void add_common(CLI::App* cmd, Common& c, bool run_flags) {
  cmd->add_option("--config", c.config, "TOML or JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "seed for all randomness");
  cmd->add_option("--out", c.out, "output file (default: standard output)");
  cmd->add_option("--input", c.input, "dataset CSV (replaces the synthetic generator)")->check(CLI::ExistingFile);
  if (run_flags) {
    cmd->add_option("--budget", c.budget, "records to clean (k)");
    cmd->add_option("--batch", c.batch, "batch size (b)");
    cmd->add_flag("--timing", c.timing, "record wall-clock times (makes output nondeterministic)");
  }
}

ExperimentConfig experiment_config(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig{} : load_experiment_config(c.config);
  if (!c.input.empty()) cfg.csv_path = c.input;
  if (c.budget) cfg.update.budget = *c.budget;
  if (c.batch) cfg.update.batch_size = *c.batch;
  if (c.seed) cfg.seeds = {*c.seed};
  if (c.timing) cfg.record_timing = true;
  cfg.validate();
  return cfg;
}

std::uint64_t single_seed(const Common& c, const ExperimentConfig& cfg) { return c.seed ? *c.seed : cfg.seeds.front(); }

/// Runs `write` against --out or standard output.
template <class F>
void emit(const std::string& path, F&& write) {
  if (path.empty()) {
    write(std::cout);
    std::cout.flush();
    return;
  }
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error("cannot write '" + path + "'");
    write(out);
    if (!out) throw Error("failed writing '" + path + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw Error("cannot replace '" + path + "'");
}

void write_theta(std::ostream& os, const Theta& theta) {
  for (double v : theta.values) os << format_double(v) << '\n';
}

ModelSpec spec_for(const ExperimentConfig& cfg, const DatasetView& data) {
  ModelSpec spec = ModelSpec::make(cfg.loss, data.d(), data.size(), cfg.reg_per_example);
  spec.thresholded = cfg.thresholded;
  spec.classes = cfg.classes;
  return spec;
}

int cmd_corrupt(const Common& c) {
  const ExperimentConfig cfg = experiment_config(c);
  const std::uint64_t seed = single_seed(c, cfg);
  DatasetView data;
  if (cfg.csv_path) {
    data = load_csv(*cfg.csv_path);
  } else {
    BenchmarkSpec b = cfg.benchmark;
    if (cfg.loss == LossKind::logistic_regression) b.zero_one_labels = true;
    data = synthetic_benchmark(b, seed);
  }
  std::vector<Record> recs = data.records();
  for (Record& r : recs) {
    r.clean_x.reset();
    r.clean_y.reset();
    r.error_class.reset();
  }
  const DatasetView clean(std::move(recs), data.d(), data.l());
  CorruptionSpec spec = cfg.corruption;
  spec.seed = cfg.corruption.seed ^ (seed * 0x9e3779b97f4a7c15ULL);
  Theta reference;
  if (spec.kind == CorruptionKind::systematic) reference = train_full(spec_for(cfg, clean), example_refs(clean));
  const DatasetView dirty = corrupt(clean, spec, reference.values);
  emit(c.out, [&](std::ostream& os) { write_csv(os, dirty); });
  return 0;
}

int cmd_train(const Common& c, const std::string& theta_out) {
  const ExperimentConfig cfg = experiment_config(c);
  if (!cfg.csv_path) throw Error("train needs --input or dataset.csv in the config");
  const DatasetView data = load_csv(*cfg.csv_path);
  if (data.empty()) throw Error("dataset '" + *cfg.csv_path + "' has no records");
  const ModelSpec spec = spec_for(cfg, data);
  const Theta theta = train_full(spec, example_refs(data));
  const std::string path = theta_out.empty() ? c.out : theta_out;
  emit(path, [&](std::ostream& os) { write_theta(os, theta); });
  return 0;
}

int cmd_simulate(const Common& c, const std::string& strategy, const std::string& theta_out) {
  const ExperimentConfig cfg = experiment_config(c);
  const std::uint64_t seed = single_seed(c, cfg);
  const StrategyId s = parse_strategy(strategy);
  const Trial trial = prepare_trial(cfg, seed);
  const Trajectory traj = run_strategy(trial, cfg, s);
  const auto test = example_refs(trial.test);
  emit(c.out, [&](std::ostream& os) {
    os << "step,records_cleaned,rel_model_error,test_accuracy,training_loss,wall_ms";
    for (std::size_t j = 0; j < trial.spec.theta_size(); ++j) os << ",theta_" << j;
    os << '\n';
    for (std::size_t i = 0; i < traj.size(); ++i) {
      const TrajectoryPoint& p = traj[i];
      os << i << ',' << p.records_cleaned << ',';
      if (norm2(trial.theta_clean.values) > 0) os << format_double(relative_model_error(p.theta, trial.theta_clean));
      os << ',';
      if (!test.empty() && trial.spec.is_classifier()) os << format_double(evaluate(trial.spec, p.theta, test).accuracy);
      os << ',' << format_double(p.training_loss) << ',' << format_double(p.wall_ms);
      for (double v : p.theta.values) os << ',' << format_double(v);
      os << '\n';
    }
  });
  if (!theta_out.empty()) emit(theta_out, [&](std::ostream& os) { write_theta(os, traj.back().theta); });
  return 0;
}

int cmd_compare(const Common& c) {
  const ExperimentConfig cfg = experiment_config(c);
  const Report rep = run_experiment(cfg);
  emit(c.out, [&](std::ostream& os) { write_report_csv(os, rep); });
  if (!c.out.empty()) {
    const std::size_t k = cfg.resolved_checkpoints().back();
    std::cout << "median at " << k << " records cleaned:\n";
    for (StrategyId s : cfg.strategies) {
      const ReportRow& m = rep.median(s, k);
      std::cout << "  " << m.strategy << " rel_model_error=" << format_double(m.rel_model_error) << '\n';
    }
  }
  return 0;
}

int cmd_estimators(const Common& c, std::vector<std::size_t> grid) {
  const ExperimentConfig cfg = experiment_config(c);
  const Trial trial = prepare_trial(cfg, single_seed(c, cfg));
  if (grid.empty()) {
    std::size_t dirty = 0;
    for (const Record& r : trial.train.records()) dirty += r.is_corrupted() ? 1 : 0;
    grid = {0, 10, 25, 50, 100, 150, dirty};
  }
  const auto rows = trial_estimator_errors(trial, grid);
  emit(c.out, [&](std::ostream& os) { write_estimator_csv(os, rows); });
  return 0;
}

int cmd_demo_simpson(const Common& c) {
  const SimpsonReport rep = simpson_demo();
  emit(c.out, [&](std::ostream& os) { write_simpson_csv(os, rep); });
  std::ostream& log = c.out.empty() ? std::cerr : std::cout;
  log << "clean slope " << format_double(rep.clean_slope) << ", dirty slope " << format_double(rep.dirty_slope)
      << ", mixed slope " << format_double(rep.mixed_slope) << (rep.sign_flipped ? " (sign flipped)" : "") << '\n';
  return 0;
}

httplib::Server* g_server = nullptr;

void stop_server(int) {
  if (g_server) g_server->stop();
}

int cmd_serve(const std::string& host, int port, const std::string& snapshots, const std::string& origin) {
  std::optional<std::filesystem::path> dir;
  if (!snapshots.empty()) dir = snapshots;
  SessionStore store(dir);
  httplib::Server server;
  mount_routes(server, store, {origin});
  g_server = &server;
  std::signal(SIGINT, stop_server);
  std::signal(SIGTERM, stop_server);
  int bound = port;
  if (port == 0) {
    bound = server.bind_to_any_port(host);
  } else if (!server.bind_to_port(host, port)) {
    throw Error("cannot bind " + host + ":" + std::to_string(port));
  }
  if (bound < 0) throw Error("cannot bind " + host);
  std::cout << "listening on http://" << host << ':' << bound << std::endl;
  if (!server.listen_after_bind()) throw Error("server stopped unexpectedly");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Progressive data cleaning for convex models"};
  app.require_subcommand(1);

  Common common;
  std::string strategy = "AC";
  std::string theta_out;
  std::vector<std::size_t> grid;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string snapshots;
  std::string origin = "*";

  auto* corrupt_cmd = app.add_subcommand("corrupt", "corrupt a dataset (or the synthetic benchmark) and write CSV");
  add_common(corrupt_cmd, common, false);
  auto* train_cmd = app.add_subcommand("train", "train the model on a dataset's observed values");
  add_common(train_cmd, common, false);
  train_cmd->add_option("--theta-out", theta_out, "parameter file (default: --out)");
  auto* sim_cmd = app.add_subcommand("simulate", "run one strategy on one seed and write its trajectory");
  add_common(sim_cmd, common, true);
  sim_cmd->add_option("--strategy", strategy, "strategy name, e.g. AC, AC_D, SC, AL");
  sim_cmd->add_option("--theta-out", theta_out, "final parameter file");
  auto* cmp_cmd = app.add_subcommand("compare", "run every configured strategy and seed, write the report CSV");
  add_common(cmp_cmd, common, true);
  auto* est_cmd = app.add_subcommand("estimators", "compare gradient estimators on one seed");
  add_common(est_cmd, common, false);
  est_cmd->add_option("--grid", grid, "cleaned-record counts")->delimiter(',');
  auto* serve_cmd = app.add_subcommand("serve", "run the HTTP session service");
  serve_cmd->add_option("--host", host, "bind address");
  serve_cmd->add_option("--port", port, "port (0 picks a free one)");
  serve_cmd->add_option("--snapshots", snapshots, "directory for session snapshots");
  serve_cmd->add_option("--cors-origin", origin, "allowed browser origin");
  auto* simpson_cmd = app.add_subcommand("demo-simpson", "mixed clean/dirty data demonstration");
  simpson_cmd->add_option("--out", common.out, "output CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (*corrupt_cmd) return cmd_corrupt(common);
    if (*train_cmd) return cmd_train(common, theta_out);
    if (*sim_cmd) return cmd_simulate(common, strategy, theta_out);
    if (*cmp_cmd) return cmd_compare(common);
    if (*est_cmd) return cmd_estimators(common, grid);
    if (*serve_cmd) return cmd_serve(host, port, snapshots, origin);
    if (*simpson_cmd) return cmd_demo_simpson(common);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
