#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fino {

/// Flat run configuration; parsed from key=value text with unknown-key
/// rejection. CLI flags override file values.
struct RunConfig {
  std::string env = "four_circles";
  uint64_t seed = 0;
  std::string dataset;  // path to an offline dataset file

  long offline_steps = 20000;
  long online_steps = 20000;
  long eval_interval = 2000;
  int eval_episodes = 20;
  long log_interval = 2000;

  std::vector<int> hidden = {64, 64};
  int batch_size = 256;
  double learning_rate = 3e-4;
  double discount = 0.99;
  double tau = 0.005;
  double bc_coefficient = 1.0;

  double eta = 0.1;
  double sigma_min = 0.0;
  std::string schedule = "shifted_exponential";
  std::string target_mode = "plain";
  int flow_steps = 10;
  bool use_min_of_two = false;

  std::string selection = "softmax";  // softmax | greedy (exploration ablation)
  int n_sample = 0;                   // 0 -> max(4, ceil(action_dim/2))
  double xi_init = 1.0;
  double xi_learning_rate = 0.01;
  long entropy_update_interval = 2000;  // N_xi
  double target_entropy = 0.0;          // used when target_entropy_auto is false
  bool target_entropy_auto = true;      // -dim(A)
  int entropy_actions_per_state = 200;
  int entropy_components = 3;
  int em_max_iterations = 100;
  double em_tolerance = 1e-6;
  double em_jitter = 1e-6;

  long replay_capacity = 0;  // 0 -> dataset size + online steps
};

/// Applies key=value lines from `path`; '#' starts a comment. Unknown keys
/// are rejected.
RunConfig parse_config_file(const std::string& path, RunConfig base = {});

/// Applies one key=value override; throws on unknown key or bad value.
void apply_config_entry(RunConfig& config, const std::string& key, const std::string& value);

/// Range/consistency checks (throws std::invalid_argument).
void validate_config(const RunConfig& config);

void write_config_file(const RunConfig& config, const std::string& path);

}  // namespace fino
