#pragma once

#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "fino/agent.hpp"
#include "fino/config.hpp"
#include "fino/env.hpp"
#include "fino/flow.hpp"
#include "fino/gmm.hpp"

namespace fino {

struct MetricsRecord {
  long step = 0;
  std::string phase;  // offline | online | eval
  double loss_q = std::numeric_limits<double>::quiet_NaN();
  double loss_flow = std::numeric_limits<double>::quiet_NaN();
  double loss_pi = std::numeric_limits<double>::quiet_NaN();
  double entropy = std::numeric_limits<double>::quiet_NaN();
  double xi = std::numeric_limits<double>::quiet_NaN();
  double ret = std::numeric_limits<double>::quiet_NaN();
  double success = std::numeric_limits<double>::quiet_NaN();
  double wall_clock = 0.0;  // seconds since run start; not serialized
};

/// Collects records in memory and, when a path is given, appends one
/// line-delimited record per log event with fixed field names.
class MetricsWriter {
 public:
  MetricsWriter() = default;
  explicit MetricsWriter(const std::string& path);
  ~MetricsWriter();
  MetricsWriter(const MetricsWriter&) = delete;
  MetricsWriter& operator=(const MetricsWriter&) = delete;

  void append(const MetricsRecord& record);
  const std::vector<MetricsRecord>& records() const { return records_; }

 private:
  std::vector<MetricsRecord> records_;
  FILE* file_ = nullptr;
};

/// Everything the agent owns: flow model, one-step policy, critic(s) with
/// targets, optimizer states, sampler and entropy controller.
struct AgentBundle {
  VectorFieldNet flow;
  OneStepPolicy policy;
  Critic critic;
  AdamState opt_flow, opt_policy, opt_q1, opt_q2;
  SamplerState sampler;
  EntropyController entropy;
  AgentConfig agent;
  NoiseSchedule schedule;
  TargetMode target_mode = TargetMode::plain;
  int flow_steps = 10;
};

AgentBundle make_bundle(const RunConfig& config, int state_dim, int action_dim, Rng& rng);

/// Directory with one nn_core checkpoint per network plus a key=value state
/// file for scalars.
void save_bundle(const AgentBundle& bundle, const std::string& dir);
AgentBundle load_bundle(const std::string& dir);

struct EvalResult {
  double mean_return = 0.0;
  double success_rate = std::numeric_limits<double>::quiet_NaN();
};

struct VisitationCell {
  int x = 0;
  int y = 0;
  long count = 0;
};

struct OnlineResult {
  std::vector<VisitationCell> visitation;  // quarter-unit cells, sorted by (y, x)
  long unique_cells = 0;
  EvalResult final_eval;
};

/// Offline pre-training: per step one critic TD update, one flow-matching
/// update and one distillation update on minibatches from the dataset.
AgentBundle pretrain_offline(const RunConfig& config, const Dataset& dataset,
                             MetricsWriter* metrics = nullptr);

/// Online fine-tuning per the training loop: replay seeded with the offline
/// dataset, entropy-guided action selection, periodic entropy/temperature
/// updates and periodic deterministic evaluation.
OnlineResult finetune_online(const RunConfig& config, AgentBundle& bundle, Environment& env,
                             const Dataset& dataset, MetricsWriter* metrics = nullptr);

/// Deterministic evaluation (argmax selection) averaged over episodes.
EvalResult evaluate(const AgentBundle& bundle, Environment& env, int episodes, uint64_t seed);

/// Replay buffer pre-seeded with the dataset in order (the online loop
/// starts from exactly the offline data).
ReplayBuffer seed_replay_buffer(const Dataset& dataset, long online_steps, long capacity_override);

void write_visitation_csv(const std::vector<VisitationCell>& cells, const std::string& path);

}  // namespace fino
