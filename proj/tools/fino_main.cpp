#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <thread>

#include "fino/config.hpp"
#include "fino/env.hpp"
#include "fino/log.hpp"
#include "fino/pipeline.hpp"
#include "fino/verify.hpp"

namespace fs = std::filesystem;
using namespace fino;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;  // training/check failure
constexpr int kExitUsage = 2;    // bad flags, bad config, missing inputs

struct CommonFlags {
  std::string config_path;
  std::string out_dir = "out";
  std::optional<uint64_t> seed;
  int seeds = 1;
  std::optional<std::string> env;
  std::optional<double> eta;
  std::optional<long> steps;
};

void add_common(CLI::App* cmd, CommonFlags& flags, bool with_steps) {
  cmd->add_option("--config", flags.config_path, "key=value config file");
  cmd->add_option("--out", flags.out_dir, "output directory");
  cmd->add_option("--seed", flags.seed, "base seed (overrides config)");
  cmd->add_option("--seeds", flags.seeds, "number of independent runs (seed, seed+1, ...)")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--env", flags.env, "environment name (overrides config)");
  cmd->add_option("--eta", flags.eta, "noise constant (overrides config)");
  if (with_steps) cmd->add_option("--steps", flags.steps, "step count (overrides config)");
}

/// Flags take precedence over config-file keys.
RunConfig resolve_config(const CommonFlags& flags, bool steps_are_offline) {
  RunConfig config;
  if (!flags.config_path.empty()) config = parse_config_file(flags.config_path);
  if (flags.seed) config.seed = *flags.seed;
  if (flags.env) config.env = *flags.env;
  if (flags.eta) config.eta = *flags.eta;
  if (flags.steps) {
    if (steps_are_offline)
      config.offline_steps = *flags.steps;
    else
      config.online_steps = *flags.steps;
  }
  validate_config(config);
  return config;
}

Dataset load_config_dataset(const RunConfig& config) {
  if (config.dataset.empty())
    throw std::invalid_argument("config has no dataset= entry; run gen-dataset first");
  if (!fs::exists(config.dataset))
    throw std::invalid_argument("dataset file not found: " + config.dataset);
  return load_dataset(config.dataset);
}

/// Runs fn(seed, out_dir) for each seed on a small worker pool.
int run_seeds(const CommonFlags& flags, uint64_t base_seed,
              const std::function<void(uint64_t, const std::string&)>& fn) {
  std::vector<std::pair<uint64_t, std::string>> runs;
  if (flags.seeds == 1) {
    runs.emplace_back(base_seed, flags.out_dir);
  } else {
    for (int i = 0; i < flags.seeds; ++i)
      runs.emplace_back(base_seed + i, flags.out_dir + "/seed_" + std::to_string(base_seed + i));
  }
  std::atomic<size_t> next{0};
  std::atomic<bool> failed{false};
  std::string first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= runs.size()) return;
      try {
        fn(runs[i].first, runs[i].second);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!failed.exchange(true)) first_error = e.what();
      }
    }
  };
  const unsigned n_workers =
      std::min<unsigned>(std::max(1u, std::thread::hardware_concurrency()), runs.size());
  std::vector<std::thread> pool;
  for (unsigned i = 0; i < n_workers; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (failed) {
    log_error("%s", first_error.c_str());
    return kExitFailure;
  }
  return kExitOk;
}

int cmd_gen_dataset(const CommonFlags& flags, const std::string& env_name, int size,
                    bool with_csv) {
  RunConfig config = resolve_config(flags, true);
  const std::string env = flags.env ? *flags.env : env_name;
  std::unique_ptr<Environment> e = make_env(env);
  const Dataset ds =
      generate_offline_dataset(*e, default_behavior_for(env), size, flags.seed.value_or(0));
  fs::create_directories(flags.out_dir);
  const std::string path = flags.out_dir + "/dataset.bin";
  save_dataset(ds, path);
  if (with_csv) export_dataset_csv(ds, flags.out_dir + "/dataset.csv");
  log_info("wrote %s (%d transitions)", path.c_str(), ds.size());
  return kExitOk;
}

int cmd_train_offline(const CommonFlags& flags) {
  const RunConfig base = resolve_config(flags, true);
  const Dataset dataset = load_config_dataset(base);
  return run_seeds(flags, base.seed, [&](uint64_t seed, const std::string& out) {
    RunConfig config = base;
    config.seed = seed;
    fs::create_directories(out);
    MetricsWriter metrics(out + "/metrics.log");
    const AgentBundle bundle = pretrain_offline(config, dataset, &metrics);
    save_bundle(bundle, out + "/bundle");
    log_info("seed %llu: offline training done, bundle at %s/bundle",
             static_cast<unsigned long long>(seed), out.c_str());
  });
}

int cmd_finetune_online(const CommonFlags& flags, const std::string& bundle_dir) {
  const RunConfig base = resolve_config(flags, false);
  const Dataset dataset = load_config_dataset(base);
  if (!fs::exists(bundle_dir + "/bundle.cfg"))
    throw std::invalid_argument("bundle not found: " + bundle_dir);
  return run_seeds(flags, base.seed, [&](uint64_t seed, const std::string& out) {
    RunConfig config = base;
    config.seed = seed;
    fs::create_directories(out);
    AgentBundle bundle = load_bundle(bundle_dir);
    std::unique_ptr<Environment> env = make_env(config.env);
    MetricsWriter metrics(out + "/metrics.log");
    const OnlineResult result = finetune_online(config, bundle, *env, dataset, &metrics);
    save_bundle(bundle, out + "/bundle");
    if (config.env == "point_maze")
      write_visitation_csv(result.visitation, out + "/visitation.csv");
    log_info("seed %llu: online fine-tuning done, final return %.4f",
             static_cast<unsigned long long>(seed), result.final_eval.mean_return);
  });
}

int cmd_eval(const CommonFlags& flags, const std::string& bundle_dir, int episodes) {
  const RunConfig config = resolve_config(flags, false);
  if (!fs::exists(bundle_dir + "/bundle.cfg"))
    throw std::invalid_argument("bundle not found: " + bundle_dir);
  const AgentBundle bundle = load_bundle(bundle_dir);
  std::unique_ptr<Environment> env = make_env(config.env);
  const EvalResult result = evaluate(bundle, *env, episodes, config.seed);
  fs::create_directories(flags.out_dir);
  std::FILE* f = std::fopen((flags.out_dir + "/eval.log").c_str(), "w");
  if (f) {
    std::fprintf(f, "episodes=%d return=%.17g success=%.17g\n", episodes, result.mean_return,
                 result.success_rate);
    std::fclose(f);
  }
  std::printf("mean_return=%.6f success_rate=%.6f\n", result.mean_return, result.success_rate);
  return kExitOk;
}

int cmd_verify(const CommonFlags& flags, const std::string& check, long samples,
               int train_steps) {
  const double eta = flags.eta.value_or(0.1);
  const uint64_t seed = flags.seed.value_or(0);
  const std::vector<double> t_grid = {0.0, 0.25, 0.5, 0.75, 1.0};
  const std::vector<double> x_i = {1.0, -1.0};
  std::vector<VerifyReport> reports;
  auto run_check = [&](const std::string& name) {
    if (name == "schedule-identity") {
      auto r = check_schedule_identity(33);
      reports.insert(reports.end(), r.begin(), r.end());
    } else if (name == "conditional-path") {
      auto r = check_conditional_path(eta, t_grid, x_i, samples, seed);
      reports.insert(reports.end(), r.begin(), r.end());
    } else if (name == "variance-ordering") {
      Matrix points(4, 2);
      const double coords[4][2] = {{1, 1}, {1, -1}, {-1, 1}, {-1, -1}};
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 2; ++j) points(i, j) = coords[i][j];
      auto r = check_variance_ordering(points, eta, t_grid, samples, seed);
      reports.insert(reports.end(), r.begin(), r.end());
    } else if (name == "single-point") {
      const std::vector<double> target = {0.5, -0.5};
      auto r = check_single_point_generation(eta, target, train_steps, 10000, seed);
      reports.insert(reports.end(), r.begin(), r.end());
    } else if (name == "target-noise") {
      auto r = check_target_noise_noop(0.5, std::min<long>(samples, 100000), seed);
      reports.insert(reports.end(), r.begin(), r.end());
    } else {
      throw std::invalid_argument("unknown check: " + name);
    }
  };
  if (check == "all") {
    for (const char* name : {"schedule-identity", "conditional-path", "variance-ordering",
                             "single-point", "target-noise"})
      run_check(name);
  } else {
    run_check(check);
  }
  fs::create_directories(flags.out_dir);
  write_reports(reports, flags.out_dir + "/verify_report.log");
  int failures = 0;
  for (const VerifyReport& r : reports) {
    std::printf("%s %s statistic=%.6g tolerance=%.6g\n", r.pass ? "[PASS]" : "[FAIL]",
                r.check.c_str(), r.statistic, r.tolerance);
    if (!r.pass) ++failures;
  }
  return failures == 0 ? kExitOk : kExitFailure;
}

int cmd_export_plot(const CommonFlags& flags, const std::string& bundle_dir, int grid_n,
                    double range, long samples) {
  if (!fs::exists(bundle_dir + "/bundle.cfg"))
    throw std::invalid_argument("bundle not found: " + bundle_dir);
  const AgentBundle bundle = load_bundle(bundle_dir);
  GridSpec spec;
  spec.nx = spec.ny = grid_n;
  spec.x_min = spec.y_min = -range;
  spec.x_max = spec.y_max = range;
  const std::vector<double> state(bundle.flow.state_dim, 0.0);
  const DensityGrid grid =
      export_log_density(bundle.flow, state, spec, samples, flags.seed.value_or(0));
  fs::create_directories(flags.out_dir);
  write_density_csv(grid, flags.out_dir + "/log_density.csv");
  log_info("wrote %s/log_density.csv (grid mass %.4f)", flags.out_dir.c_str(),
           grid.normalization);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FINO: noise-injected flow-matching policies, desk scale"};
  app.require_subcommand(1);
  app.footer("Flags override config-file keys. FINO_LOG_LEVEL={error,info,debug} controls logging.");

  CommonFlags flags;

  auto* gen = app.add_subcommand("gen-dataset", "Generate an offline dataset");
  std::string gen_env = "four_circles";
  int gen_size = 10000;
  bool gen_csv = false;
  add_common(gen, flags, false);
  gen->add_option("--size", gen_size, "number of transitions")->check(CLI::PositiveNumber);
  gen->add_flag("--csv", gen_csv, "also write a csv export");

  auto* train = app.add_subcommand("train-offline", "Offline pre-training");
  add_common(train, flags, true);

  auto* finetune = app.add_subcommand("finetune-online", "Online fine-tuning");
  std::string bundle_dir = "out/bundle";
  add_common(finetune, flags, true);
  finetune->add_option("--bundle", bundle_dir, "pretrained bundle directory");

  auto* eval_cmd = app.add_subcommand("eval", "Deterministic evaluation of a bundle");
  int episodes = 20;
  add_common(eval_cmd, flags, false);
  eval_cmd->add_option("--bundle", bundle_dir, "bundle directory");
  eval_cmd->add_option("--episodes", episodes, "evaluation episodes")->check(CLI::PositiveNumber);

  auto* verify_cmd = app.add_subcommand("verify", "Numerical theorem checks");
  std::string check = "all";
  long samples = 1000000;
  int train_steps = 6000;
  add_common(verify_cmd, flags, true);
  verify_cmd->add_option("--check", check,
                         "one of: all, schedule-identity, conditional-path, variance-ordering, "
                         "single-point, target-noise");
  verify_cmd->add_option("--samples", samples, "Monte Carlo draws")->check(CLI::PositiveNumber);
  verify_cmd->add_option("--train-steps", train_steps, "training steps for single-point")
      ->check(CLI::PositiveNumber);

  auto* plot = app.add_subcommand("export-plot", "Export flow-sample log-density grid");
  int grid_n = 64;
  double range = 1.5;
  long plot_samples = 20000;
  add_common(plot, flags, false);
  plot->add_option("--bundle", bundle_dir, "bundle directory");
  plot->add_option("--grid", grid_n, "grid points per axis")->check(CLI::PositiveNumber);
  plot->add_option("--range", range, "half-width of the plotted square");
  plot->add_option("--samples", plot_samples, "flow samples for the KDE")
      ->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    if (e.get_name() == "RequiredError") std::fputs(app.help().c_str(), stderr);
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_dataset(flags, gen_env, gen_size, gen_csv);
    if (train->parsed()) return cmd_train_offline(flags);
    if (finetune->parsed()) return cmd_finetune_online(flags, bundle_dir);
    if (eval_cmd->parsed()) return cmd_eval(flags, bundle_dir, episodes);
    if (verify_cmd->parsed()) return cmd_verify(flags, check, samples, train_steps);
    if (plot->parsed()) return cmd_export_plot(flags, bundle_dir, grid_n, range, plot_samples);
  } catch (const std::invalid_argument& e) {
    log_error("%s", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    log_error("%s", e.what());
    // setup problems (unreadable inputs) are usage errors; anything that
    // happened mid-run is a failure
    const std::string what = e.what();
    if (what.find("cannot open") != std::string::npos) return kExitUsage;
    return kExitFailure;
  }
  return kExitUsage;
}
