#include "fino/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

namespace fino {

namespace {

std::string fmt_num(double v) {
  char buf[64];
  if (std::isnan(v)) return "nan";
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double now_seconds(const std::chrono::steady_clock::time_point& start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// rng stream tags
enum : uint64_t {
  kStreamInit = 1,
  kStreamTrain = 2,
  kStreamAct = 3,
  kStreamEntropy = 4,
  kStreamEval = 5,
  kStreamEpisodes = 6,
};

}  // namespace

MetricsWriter::MetricsWriter(const std::string& path) {
  if (path.empty()) return;
  file_ = std::fopen(path.c_str(), "w");
  if (!file_) throw std::runtime_error("MetricsWriter: cannot open " + path);
}

MetricsWriter::~MetricsWriter() {
  if (file_) std::fclose(file_);
}

void MetricsWriter::append(const MetricsRecord& record) {
  records_.push_back(record);
  if (!file_) return;
  std::fprintf(file_, "step=%ld phase=%s loss_q=%s loss_flow=%s loss_pi=%s entropy=%s xi=%s return=%s success=%s\n",
               record.step, record.phase.c_str(), fmt_num(record.loss_q).c_str(),
               fmt_num(record.loss_flow).c_str(), fmt_num(record.loss_pi).c_str(),
               fmt_num(record.entropy).c_str(), fmt_num(record.xi).c_str(),
               fmt_num(record.ret).c_str(), fmt_num(record.success).c_str());
  std::fflush(file_);
}

AgentBundle make_bundle(const RunConfig& config, int state_dim, int action_dim, Rng& rng) {
  validate_config(config);
  AgentBundle b;
  b.flow = VectorFieldNet::make(state_dim, action_dim, config.hidden, rng);
  b.policy = OneStepPolicy::make(state_dim, action_dim, config.hidden, rng);
  b.critic = Critic::make(state_dim, action_dim, config.hidden, config.use_min_of_two, rng);
  b.opt_flow.learning_rate = config.learning_rate;
  b.opt_policy.learning_rate = config.learning_rate;
  b.opt_q1.learning_rate = config.learning_rate;
  b.opt_q2.learning_rate = config.learning_rate;
  b.sampler.xi = config.xi_init;
  b.sampler.n_sample = config.n_sample > 0 ? config.n_sample : default_n_sample(action_dim);
  b.entropy.target_entropy =
      config.target_entropy_auto ? -static_cast<double>(action_dim) : config.target_entropy;
  b.entropy.xi_learning_rate = config.xi_learning_rate;
  b.entropy.update_interval = static_cast<int>(config.entropy_update_interval);
  b.agent.bc_coefficient = config.bc_coefficient;
  b.agent.discount = config.discount;
  b.agent.tau = config.tau;
  b.agent.batch_size = config.batch_size;
  b.schedule.eta = config.eta;
  b.schedule.sigma_min = config.sigma_min;
  b.schedule.variant = parse_schedule_variant(config.schedule);
  b.target_mode = parse_target_mode(config.target_mode);
  b.flow_steps = config.flow_steps;
  return b;
}

namespace {

struct StepLosses {
  double q = 0.0;
  double flow = 0.0;
  double pi = 0.0;
};

/// One combined training step: critic TD, then flow matching, then
/// distillation (the policy sees the freshest flow and critic).
StepLosses train_step(AgentBundle& b, const TransitionBatch& batch, Rng& rng) {
  StepLosses losses;
  losses.q = td_update(b.critic, b.opt_q1, b.opt_q2, batch, b.policy, b.agent, rng);

  const FlowBatch flow_batch = make_flow_batch(batch.s, batch.a, b.schedule, rng);
  GradientBundle flow_grads = fino_loss(b.flow, flow_batch, b.schedule, b.target_mode);
  losses.flow = flow_grads.loss;
  adam_step(b.flow.net, b.opt_flow, flow_grads);

  Matrix z(batch.size(), b.policy.action_dim);
  for (size_t i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
  DistillResult distill =
      distill_loss(b.policy, b.flow, b.critic, batch.s, z, b.agent.bc_coefficient, b.flow_steps);
  losses.pi = distill.loss;
  adam_step(b.policy.net, b.opt_policy, distill.policy_grads);
  return losses;
}

}  // namespace

AgentBundle pretrain_offline(const RunConfig& config, const Dataset& dataset,
                             MetricsWriter* metrics) {
  validate_config(config);
  if (dataset.size() == 0) throw std::invalid_argument("pretrain_offline: empty dataset");
  const auto start = std::chrono::steady_clock::now();
  Rng rng_init(derive_seed(config.seed, kStreamInit));
  AgentBundle bundle =
      make_bundle(config, dataset.header.state_dim, dataset.header.action_dim, rng_init);
  Rng rng_train(derive_seed(config.seed, kStreamTrain));
  for (long step = 1; step <= config.offline_steps; ++step) {
    const TransitionBatch batch = sample_batch(dataset, config.batch_size, rng_train);
    StepLosses losses;
    try {
      losses = train_step(bundle, batch, rng_train);
    } catch (const std::runtime_error& e) {
      throw std::runtime_error("pretrain_offline: aborted at step " + std::to_string(step) +
                               ": " + e.what());
    }
    if (metrics && step % config.log_interval == 0) {
      MetricsRecord rec;
      rec.step = step;
      rec.phase = "offline";
      rec.loss_q = losses.q;
      rec.loss_flow = losses.flow;
      rec.loss_pi = losses.pi;
      rec.wall_clock = now_seconds(start);
      metrics->append(rec);
    }
  }
  return bundle;
}

EvalResult evaluate(const AgentBundle& bundle, Environment& env, int episodes, uint64_t seed) {
  if (episodes < 1) throw std::invalid_argument("evaluate: episodes must be >= 1");
  Rng rng(derive_seed(seed, kStreamEval));
  double total_return = 0.0;
  long goals = 0;
  const bool goal_based = env.name() == "point_maze";
  for (int ep = 0; ep < episodes; ++ep) {
    std::vector<double> s = env.reset(derive_seed(seed, 1000 + ep));
    double ep_return = 0.0;
    bool reached = false;
    for (int step = 0; step < env.horizon(); ++step) {
      const std::vector<double> a =
          select_action_eval(bundle.policy, bundle.critic, s, bundle.sampler.n_sample, rng);
      const StepResult res = env.step(a);
      ep_return += res.reward;
      s = res.state;
      if (res.done) {
        reached = true;
        break;
      }
      if (res.truncated) break;
    }
    total_return += ep_return;
    if (reached) ++goals;
  }
  EvalResult out;
  out.mean_return = total_return / episodes;
  out.success_rate = goal_based ? static_cast<double>(goals) / episodes
                                : std::numeric_limits<double>::quiet_NaN();
  return out;
}

ReplayBuffer seed_replay_buffer(const Dataset& dataset, long online_steps,
                                long capacity_override) {
  const long cap = capacity_override > 0 ? capacity_override : dataset.size() + online_steps;
  if (cap < dataset.size())
    throw std::invalid_argument("seed_replay_buffer: capacity below dataset size");
  ReplayBuffer buffer(static_cast<size_t>(cap));
  for (const Transition& t : dataset.transitions) buffer.push(t);
  return buffer;
}

OnlineResult finetune_online(const RunConfig& config, AgentBundle& bundle, Environment& env,
                             const Dataset& dataset, MetricsWriter* metrics) {
  validate_config(config);
  if (env.state_dim() != bundle.flow.state_dim || env.action_dim() != bundle.flow.action_dim)
    throw std::invalid_argument("finetune_online: bundle and environment dimensions differ");
  const auto start = std::chrono::steady_clock::now();
  ReplayBuffer buffer = seed_replay_buffer(dataset, config.online_steps, config.replay_capacity);

  Rng rng_train(derive_seed(config.seed, derive_seed(kStreamTrain, 0xF17E)));
  Rng rng_act(derive_seed(config.seed, kStreamAct));
  Rng rng_entropy(derive_seed(config.seed, kStreamEntropy));

  const bool is_maze = env.name() == "point_maze";
  std::map<std::pair<int, int>, long> visitation;  // quarter-unit cells
  auto visit = [&](const std::vector<double>& s) {
    if (!is_maze) return;
    visitation[{static_cast<int>(std::floor(s[0] * 4.0)),
                static_cast<int>(std::floor(s[1] * 4.0))}] += 1;
  };

  std::unique_ptr<Environment> eval_env = make_env(config.env);
  EmConfig em_cfg;
  em_cfg.max_iterations = config.em_max_iterations;
  em_cfg.tolerance = config.em_tolerance;
  em_cfg.jitter = config.em_jitter;
  em_cfg.seed = derive_seed(config.seed, 0x6E77);

  OnlineResult result;
  auto run_eval = [&](long step) {
    const EvalResult ev = evaluate(bundle, *eval_env, config.eval_episodes,
                                   derive_seed(config.seed, 0xEA11 + static_cast<uint64_t>(step)));
    result.final_eval = ev;
    if (metrics) {
      MetricsRecord rec;
      rec.step = step;
      rec.phase = "eval";
      rec.ret = ev.mean_return;
      rec.success = ev.success_rate;
      rec.xi = bundle.sampler.xi;
      rec.wall_clock = now_seconds(start);
      metrics->append(rec);
    }
  };

  run_eval(0);

  uint64_t episode = 0;
  std::vector<double> s = env.reset(derive_seed(config.seed, kStreamEpisodes));
  visit(s);
  for (long step = 1; step <= config.online_steps; ++step) {
    std::vector<double> a;
    if (config.selection == "softmax") {
      a = select_action_explore(bundle.policy, bundle.critic, s, bundle.sampler, rng_act);
    } else {
      a = select_action_eval(bundle.policy, bundle.critic, s, bundle.sampler.n_sample, rng_act);
    }
    const StepResult res = env.step(a);
    buffer.push({s, a, res.reward, res.state, res.done});
    visit(res.state);
    if (res.done || res.truncated) {
      ++episode;
      s = env.reset(derive_seed(config.seed, kStreamEpisodes + episode));
      visit(s);
    } else {
      s = res.state;
    }

    const TransitionBatch batch = buffer.sample(config.batch_size, rng_train);
    StepLosses losses;
    try {
      losses = train_step(bundle, batch, rng_train);
    } catch (const std::runtime_error& e) {
      throw std::runtime_error("finetune_online: aborted at step " + std::to_string(step) + ": " +
                               e.what());
    }

    const bool entropy_due = step % config.entropy_update_interval == 0;
    double entropy_value = std::numeric_limits<double>::quiet_NaN();
    if (entropy_due) {
      entropy_value = estimate_policy_entropy(bundle.policy, batch.s,
                                              config.entropy_actions_per_state,
                                              config.entropy_components, em_cfg, rng_entropy);
      bundle.sampler.xi = update_temperature(bundle.sampler.xi, entropy_value, bundle.entropy);
    }
    if (metrics && (step % config.log_interval == 0 || entropy_due)) {
      MetricsRecord rec;
      rec.step = step;
      rec.phase = "online";
      rec.loss_q = losses.q;
      rec.loss_flow = losses.flow;
      rec.loss_pi = losses.pi;
      rec.entropy = entropy_value;
      rec.xi = bundle.sampler.xi;
      rec.wall_clock = now_seconds(start);
      metrics->append(rec);
    }
    if (step % config.eval_interval == 0) run_eval(step);
  }

  for (const auto& [cell, count] : visitation)
    result.visitation.push_back({cell.first, cell.second, count});
  result.unique_cells = static_cast<long>(result.visitation.size());
  return result;
}

// ---------------------------------------------------------------------------
// Bundle serialization

namespace {

std::map<std::string, std::string> read_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_bundle: cannot open " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

}  // namespace

void save_bundle(const AgentBundle& bundle, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  save_net(bundle.flow.net, dir + "/flow.net");
  save_net(bundle.policy.net, dir + "/policy.net");
  save_net(bundle.critic.q1, dir + "/critic_q1.net");
  save_net(bundle.critic.q1_target, dir + "/critic_q1_target.net");
  if (bundle.critic.use_min_of_two) {
    save_net(bundle.critic.q2, dir + "/critic_q2.net");
    save_net(bundle.critic.q2_target, dir + "/critic_q2_target.net");
  }
  std::ofstream out(dir + "/bundle.cfg", std::ios::trunc);
  if (!out) throw std::runtime_error("save_bundle: cannot open " + dir + "/bundle.cfg");
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  out << "state_dim=" << bundle.flow.state_dim << "\n";
  out << "action_dim=" << bundle.flow.action_dim << "\n";
  out << "use_min_of_two=" << (bundle.critic.use_min_of_two ? "true" : "false") << "\n";
  out << "xi=" << num(bundle.sampler.xi) << "\n";
  out << "n_sample=" << bundle.sampler.n_sample << "\n";
  out << "target_entropy=" << num(bundle.entropy.target_entropy) << "\n";
  out << "xi_learning_rate=" << num(bundle.entropy.xi_learning_rate) << "\n";
  out << "entropy_update_interval=" << bundle.entropy.update_interval << "\n";
  out << "bc_coefficient=" << num(bundle.agent.bc_coefficient) << "\n";
  out << "discount=" << num(bundle.agent.discount) << "\n";
  out << "tau=" << num(bundle.agent.tau) << "\n";
  out << "batch_size=" << bundle.agent.batch_size << "\n";
  out << "eta=" << num(bundle.schedule.eta) << "\n";
  out << "sigma_min=" << num(bundle.schedule.sigma_min) << "\n";
  out << "schedule=" << schedule_variant_name(bundle.schedule.variant) << "\n";
  out << "target_mode=" << target_mode_name(bundle.target_mode) << "\n";
  out << "flow_steps=" << bundle.flow_steps << "\n";
}

AgentBundle load_bundle(const std::string& dir) {
  const auto kv = read_kv_file(dir + "/bundle.cfg");
  auto get = [&](const std::string& key) {
    const auto it = kv.find(key);
    if (it == kv.end()) throw std::runtime_error("load_bundle: missing key " + key);
    return it->second;
  };
  AgentBundle b;
  const int sd = std::stoi(get("state_dim"));
  const int ad = std::stoi(get("action_dim"));
  b.flow.state_dim = sd;
  b.flow.action_dim = ad;
  b.flow.net = load_net(dir + "/flow.net");
  b.policy.state_dim = sd;
  b.policy.action_dim = ad;
  b.policy.net = load_net(dir + "/policy.net");
  b.critic.state_dim = sd;
  b.critic.action_dim = ad;
  b.critic.use_min_of_two = get("use_min_of_two") == "true";
  b.critic.q1 = load_net(dir + "/critic_q1.net");
  b.critic.q1_target = load_net(dir + "/critic_q1_target.net");
  if (b.critic.use_min_of_two) {
    b.critic.q2 = load_net(dir + "/critic_q2.net");
    b.critic.q2_target = load_net(dir + "/critic_q2_target.net");
  }
  b.sampler.xi = std::stod(get("xi"));
  b.sampler.n_sample = std::stoi(get("n_sample"));
  b.entropy.target_entropy = std::stod(get("target_entropy"));
  b.entropy.xi_learning_rate = std::stod(get("xi_learning_rate"));
  b.entropy.update_interval = std::stoi(get("entropy_update_interval"));
  b.agent.bc_coefficient = std::stod(get("bc_coefficient"));
  b.agent.discount = std::stod(get("discount"));
  b.agent.tau = std::stod(get("tau"));
  b.agent.batch_size = std::stoi(get("batch_size"));
  b.schedule.eta = std::stod(get("eta"));
  b.schedule.sigma_min = std::stod(get("sigma_min"));
  b.schedule.variant = parse_schedule_variant(get("schedule"));
  b.target_mode = parse_target_mode(get("target_mode"));
  b.flow_steps = std::stoi(get("flow_steps"));
  return b;
}

void write_visitation_csv(const std::vector<VisitationCell>& cells, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("write_visitation_csv: cannot open " + path);
  out << "cell_x,cell_y,count\n";
  for (const VisitationCell& c : cells) out << c.x << "," << c.y << "," << c.count << "\n";
}

}  // namespace fino
