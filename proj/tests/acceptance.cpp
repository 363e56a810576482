// Acceptance suite: one case per criterion, one [PASS]/[FAIL] line each.
// The heavy training comparisons (8-10) run their per-seed arms on a small
// worker pool; each arm owns its generators, so results do not depend on the
// scheduling order.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <thread>
#include <vector>

#include "fino/gmm.hpp"
#include "fino/pipeline.hpp"
#include "fino/verify.hpp"
#include "test_util.hpp"

using namespace fino;

namespace {

constexpr double kLog2PiE = 2.8378770664093453;

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

void report(int criterion, bool pass, const char* label, double seconds,
            const std::string& detail = "") {
  std::printf("[%s] criterion %2d: %s (%.1fs)%s%s\n", pass ? "PASS" : "FAIL", criterion, label,
              seconds, detail.empty() ? "" : " -- ", detail.c_str());
  std::fflush(stdout);
}

void parallel_for(int n, const std::function<void(int)>& fn) {
  std::atomic<int> next{0};
  auto worker = [&] {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= n) return;
      fn(i);
    }
  };
  const unsigned workers = std::min<unsigned>(
      std::max(2u, std::thread::hardware_concurrency()), static_cast<unsigned>(n));
  std::vector<std::thread> pool;
  for (unsigned i = 0; i < workers; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

const std::vector<double> kEtaGrid = {0.0, 0.05, 0.1, 0.3};
const std::vector<double> kTimeGrid = {0.0, 0.25, 0.5, 0.75, 1.0};

}  // namespace

TEST_CASE("criterion 1: conditional-path Monte Carlo") {
  Timer timer;
  const std::vector<double> x_i = {1.0, -1.0};
  bool pass = true;
  std::string detail;
  for (const double eta : kEtaGrid) {
    const auto reports = check_conditional_path(eta, kTimeGrid, x_i, 1000000, 1000 + eta * 100);
    for (const auto& r : reports) {
      if (!r.pass) {
        pass = false;
        detail = r.check;
      }
    }
  }
  report(1, pass, "Prop. 1 conditional path moments over the (eta, t) grid, n=1e6",
         timer.seconds(), detail);
  CHECK(pass);
}

TEST_CASE("criterion 2: schedule identity") {
  Timer timer;
  const auto reports = check_schedule_identity(33);  // 1089 grid points
  const bool pass = all_pass(reports);
  report(2, pass, "(1-t)^2 + alpha_t^2 == (1-(1-eta)t)^2 to 1e-12 on a 33x33 grid",
         timer.seconds());
  CHECK(pass);
}

TEST_CASE("criterion 3: marginal variance ordering") {
  Timer timer;
  Matrix square(4, 2);
  const double coords[4][2] = {{1, 1}, {1, -1}, {-1, 1}, {-1, -1}};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 2; ++j) square(i, j) = coords[i][j];
  Matrix cloud(32, 2);
  {
    Rng rng(99);
    for (size_t i = 0; i < cloud.size(); ++i) cloud.data()[i] = rng.uniform(-1.0, 1.0);
  }
  const std::vector<const Matrix*> datasets = {&square, &cloud};
  std::vector<std::vector<VerifyReport>> results(datasets.size() * kEtaGrid.size());
  parallel_for(static_cast<int>(results.size()), [&](int task) {
    const Matrix& points = *datasets[task / kEtaGrid.size()];
    const double eta = kEtaGrid[task % kEtaGrid.size()];
    results[task] =
        check_variance_ordering(points, eta, kTimeGrid, 1000000, 3000 + task);
  });
  bool pass = true;
  std::string detail;
  for (const auto& reports : results)
    for (const auto& r : reports)
      if (!r.pass) {
        pass = false;
        detail = r.check;
      }
  report(3, pass,
         "Thm. 3 ordering, closed form vs MC within 2%, t=1 difference = d*eta^2 (N=4 and N=32)",
         timer.seconds(), detail);
  CHECK(pass);
}

TEST_CASE("criterion 4: single-point end-to-end transport") {
  Timer timer;
  const std::vector<double> x_i = {0.5, -0.5};
  std::vector<VerifyReport> widened, control;
  parallel_for(2, [&](int task) {
    if (task == 0)
      widened = check_single_point_generation(0.1, x_i, 6000, 10000, 41);
    else
      control = check_single_point_generation(0.0, x_i, 4000, 10000, 42);
  });
  const bool pass = all_pass(widened) && all_pass(control);
  char detail[128];
  std::snprintf(detail, sizeof(detail), "eta=0.1 worst |mean-x_i|=%.4f, std rel err=%.3f; eta=0 std=%.4f",
                widened[0].statistic, widened[1].statistic, control[1].statistic);
  report(4, pass, "Thm. 2 transport: mean within 0.05, std within 20% of eta; eta=0 collapses",
         timer.seconds(), detail);
  CHECK(pass);
}

TEST_CASE("criterion 5: target-noise gradient no-op") {
  Timer timer;
  const auto reports = check_target_noise_noop(0.5, 100000, 51);
  REQUIRE(reports.size() == 2);
  const bool pass = all_pass(reports);
  char detail[128];
  std::snprintf(detail, sizeof(detail), "|mean grad - exact|=%.3g vs 3SE=%.3g; single draw %.3g",
                reports[0].statistic, reports[0].tolerance, reports[1].statistic);
  report(5, pass, "App. C case 1: averaged target-noise gradient equals the noiseless gradient",
         timer.seconds(), detail);
  CHECK(pass);
}

TEST_CASE("criterion 6: gradient correctness for every loss") {
  Timer timer;
  Rng rng(61);
  double worst = 0.0;

  {  // behavior-cloning flow loss, plain and widened variants
    VectorFieldNet field = VectorFieldNet::make(2, 2, {64}, rng);
    Matrix states(6, 2), actions(6, 2);
    for (size_t i = 0; i < states.size(); ++i) states.data()[i] = rng.normal();
    for (size_t i = 0; i < actions.size(); ++i) actions.data()[i] = rng.uniform(-1.0, 1.0);
    for (const double eta : {0.0, 0.1}) {
      for (const TargetMode mode : {TargetMode::plain, TargetMode::exact}) {
        NoiseSchedule sched{eta, 0.0, ScheduleVariant::quadratic};
        const FlowBatch batch = make_flow_batch(states, actions, sched, rng);
        const GradientBundle analytic = fino_loss(field, batch, sched, mode);
        const GradientBundle fd = fino::test::finite_difference_grads(
            field.net, [&] { return fino_loss(field, batch, sched, mode).loss; });
        worst = std::max(worst, fino::test::max_relative_error(analytic, fd));
      }
    }
  }
  {  // TD regression loss
    Critic critic = Critic::make(2, 2, {64}, false, rng);
    Matrix states(6, 2), actions(6, 2);
    std::vector<double> y(6);
    for (size_t i = 0; i < states.size(); ++i) states.data()[i] = rng.normal();
    for (size_t i = 0; i < actions.size(); ++i) actions.data()[i] = rng.uniform(-1.0, 1.0);
    for (auto& v : y) v = rng.normal();
    const GradientBundle analytic = critic_regression(critic.q1, states, actions, y);
    const GradientBundle fd = fino::test::finite_difference_grads(
        critic.q1, [&] { return critic_regression(critic.q1, states, actions, y).loss; });
    worst = std::max(worst, fino::test::max_relative_error(analytic, fd));
  }
  {  // distillation objective, single and twin critics
    for (const bool twin : {false, true}) {
      OneStepPolicy policy = OneStepPolicy::make(2, 2, {64}, rng);
      VectorFieldNet flow = VectorFieldNet::make(2, 2, {16}, rng);
      Critic critic = Critic::make(2, 2, {16}, twin, rng);
      Matrix states(5, 2), z(5, 2);
      for (size_t i = 0; i < states.size(); ++i) states.data()[i] = rng.normal();
      for (size_t i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
      const DistillResult r = distill_loss(policy, flow, critic, states, z, 0.8, 5);
      const GradientBundle fd = fino::test::finite_difference_grads(policy.net, [&] {
        return distill_loss(policy, flow, critic, states, z, 0.8, 5).loss;
      });
      worst = std::max(worst, fino::test::max_relative_error(r.policy_grads, fd));
    }
  }
  const bool pass = worst < 1e-4;
  char detail[64];
  std::snprintf(detail, sizeof(detail), "worst relative error %.3g", worst);
  report(6, pass, "analytic gradients match central finite differences for all losses",
         timer.seconds(), detail);
  CHECK(pass);
}

TEST_CASE("criterion 7: GMM entropy estimation") {
  Timer timer;

  // absolute accuracy clause, K=3 on a 2-D standard normal
  Rng rng(71);
  Matrix samples(10000, 2);
  for (size_t i = 0; i < samples.size(); ++i) samples.data()[i] = rng.normal();
  EmConfig cfg;
  cfg.seed = 7;
  const double est_k3 = gmm_entropy(fit_em(samples, 3, cfg));
  const double est_k1 = gmm_entropy(fit_em(samples, 1, cfg));
  const bool accuracy_pass = std::abs(est_k3 - kLog2PiE) <= 0.05;

  // monotonicity clause on 100 random datasets
  bool monotone = true;
  Rng data_rng(72);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 100 + data_rng.uniform_int(200);
    Matrix x(n, 2);
    const double spread = 0.5 + data_rng.uniform() * 2.0;
    for (size_t i = 0; i < x.size(); ++i)
      x.data()[i] = spread * data_rng.normal() + (data_rng.uniform() < 0.4 ? 1.5 : -0.5);
    EmConfig trial_cfg;
    trial_cfg.seed = trial;
    EmTrace trace;
    (void)fit_em(x, 3, trial_cfg, &trace);
    for (size_t i = 1; i < trace.log_likelihood.size(); ++i)
      if (trace.log_likelihood[i] < trace.log_likelihood[i - 1] - 1e-8) monotone = false;
  }

  const bool pass = accuracy_pass && monotone;
  char detail[192];
  std::snprintf(detail, sizeof(detail),
                "K=3 estimate %.3f vs log(2 pi e)=%.3f +-0.05 (K=1 gives %.3f; the K=3 surrogate "
                "carries the component-overlap term); logL monotone on 100/100 datasets: %s",
                est_k3, kLog2PiE, est_k1, monotone ? "yes" : "no");
  report(7, pass, "GMM entropy within 0.05 nats at K=3 and EM log-likelihood monotonicity",
         timer.seconds(), detail);
  CHECK(monotone);
  CHECK_MESSAGE(accuracy_pass,
                "known defect: the mixture-entropy surrogate at K=3 overestimates the entropy "
                "of unimodal data by its component-overlap information; see README");
}

// ---------------------------------------------------------------------------
// Training comparisons

namespace {

VectorFieldNet train_flow_only(const Dataset& ds, double eta, long steps, uint64_t seed) {
  Rng rng_init(derive_seed(seed, 1));
  VectorFieldNet field = VectorFieldNet::make(1, 2, {32, 32}, rng_init);
  AdamState opt;
  // the coverage study runs the widened objective in its quadratic/exact
  // form, where the injected noise acts across all interpolation times
  NoiseSchedule sched{eta, 0.0, ScheduleVariant::quadratic};
  Rng rng(derive_seed(seed, 2));
  for (long step = 0; step < steps; ++step) {
    const TransitionBatch batch = sample_batch(ds, 128, rng);
    const FlowBatch fb = make_flow_batch(batch.s, batch.a, sched, rng);
    GradientBundle grads = fino_loss(field, fb, sched, TargetMode::exact);
    adam_step(field.net, opt, grads);
  }
  return field;
}

struct SampleStats {
  double mean[2] = {0.0, 0.0};
  double total_variance = 0.0;
};

SampleStats flow_sample_stats(const VectorFieldNet& field, long n, uint64_t seed) {
  Rng rng(seed);
  Matrix states(2048, 1, 0.0), z(2048, 2), out;
  double sum[2] = {0, 0}, sumsq[2] = {0, 0};
  long done = 0;
  while (done < n) {
    const int m = static_cast<int>(std::min<long>(2048, n - done));
    if (m != states.rows()) {
      states.resize(m, 1);
      states.set_zero();
      z.resize(m, 2);
    }
    for (size_t i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
    integrate_flow_batch(field, states, z, 10, /*clamp=*/true, out);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < 2; ++j) {
        sum[j] += out(i, j);
        sumsq[j] += out(i, j) * out(i, j);
      }
    done += m;
  }
  SampleStats stats;
  for (int j = 0; j < 2; ++j) {
    stats.mean[j] = sum[j] / n;
    stats.total_variance += sumsq[j] / n - stats.mean[j] * stats.mean[j];
  }
  return stats;
}

RunConfig desk_config(const std::string& env, double eta, const std::string& selection,
                      uint64_t seed) {
  RunConfig c;
  c.env = env;
  c.seed = seed;
  c.eta = eta;
  c.selection = selection;
  c.hidden = {32, 32};
  c.batch_size = 128;
  c.offline_steps = 20000;
  c.online_steps = 20000;
  c.eval_interval = 2000;
  c.log_interval = 2000;
  c.eval_episodes = 20;
  c.entropy_update_interval = 2000;
  c.entropy_actions_per_state = 50;
  c.entropy_components = 3;
  return c;
}

}  // namespace

TEST_CASE("criterion 8: four-circles coverage comparison") {
  Timer timer;
  const int n_seeds = 5;
  std::vector<SampleStats> fm(n_seeds), fino(n_seeds);
  std::vector<double> data_mean_x(n_seeds), data_mean_y(n_seeds);
  parallel_for(2 * n_seeds, [&](int task) {
    const int seed = task / 2;
    const bool widened = task % 2 == 1;
    std::unique_ptr<Environment> env = four_circles_env();
    const Dataset ds =
        generate_offline_dataset(*env, BehaviorPolicy::uniform_in_region, 4000, 100 + seed);
    if (!widened) {
      double mx = 0.0, my = 0.0;
      for (const Transition& t : ds.transitions) {
        mx += t.a[0] / ds.size();
        my += t.a[1] / ds.size();
      }
      data_mean_x[seed] = mx;
      data_mean_y[seed] = my;
    }
    const VectorFieldNet field =
        train_flow_only(ds, widened ? 0.1 : 0.0, 20000, 800 + task);
    (widened ? fino : fm)[seed] = flow_sample_stats(field, 10000, 900 + task);
  });

  double var_fm = 0.0, var_fino = 0.0;
  double mean_err_fm = 0.0, mean_err_fino = 0.0;
  for (int s = 0; s < n_seeds; ++s) {
    var_fm += fm[s].total_variance / n_seeds;
    var_fino += fino[s].total_variance / n_seeds;
    mean_err_fm = std::max({mean_err_fm, std::abs(fm[s].mean[0] - data_mean_x[s]),
                            std::abs(fm[s].mean[1] - data_mean_y[s])});
    mean_err_fino = std::max({mean_err_fino, std::abs(fino[s].mean[0] - data_mean_x[s]),
                              std::abs(fino[s].mean[1] - data_mean_y[s])});
  }
  const bool pass = var_fino > var_fm && mean_err_fm <= 0.1 && mean_err_fino <= 0.1;
  char detail[160];
  std::snprintf(detail, sizeof(detail),
                "total variance widened %.4f vs plain %.4f; worst |sample mean - data mean| %.3f/%.3f",
                var_fino, var_fm, mean_err_fino, mean_err_fm);
  report(8, pass, "noise-widened flow covers more than plain flow matching on four circles",
         timer.seconds(), detail);
  CHECK(pass);
}

TEST_CASE("criterion 9: rightward-reward policy improvement") {
  Timer timer;
  const int n_seeds = 5;
  const double action_noise_std = 0.1;  // matched to the widening constant
  std::vector<double> fino_mean_x(n_seeds), fino_reward(n_seeds), base_reward(n_seeds);
  parallel_for(2 * n_seeds, [&](int task) {
    const int seed = task / 2;
    const bool widened = task % 2 == 1;
    std::unique_ptr<Environment> env = rightward_reward_env();
    const Dataset ds =
        generate_offline_dataset(*env, BehaviorPolicy::gaussian, 4000, 200 + seed);
    RunConfig config = desk_config("rightward_reward", widened ? 0.1 : 0.0, "softmax",
                                   210 + 10 * seed + (widened ? 1 : 0));
    // the widened objective in its written form; value maximization gets
    // enough weight to actually push toward the reward boundary
    config.schedule = "quadratic";
    config.target_mode = "exact";
    config.bc_coefficient = 0.3;
    config.batch_size = 96;
    const AgentBundle bundle = pretrain_offline(config, ds);

    // emitted actions; the baseline perturbs its outputs with Gaussian noise
    Rng rng(derive_seed(7000 + task, 3));
    const long n = 10000;
    double sum_x = 0.0, sum_r = 0.0;
    const std::vector<double> state = {0.0};
    for (long i = 0; i < n; ++i) {
      std::vector<double> z = {rng.normal(), rng.normal()};
      std::vector<double> a = bundle.policy.act(state, z);
      if (!widened)
        for (double& v : a) v = std::clamp(v + action_noise_std * rng.normal(), -1.0, 1.0);
      sum_x += a[0];
      sum_r += a[0];  // bandit ground truth: r(a) = a_x
    }
    if (widened) {
      fino_mean_x[seed] = sum_x / n;
      fino_reward[seed] = sum_r / n;
    } else {
      base_reward[seed] = sum_r / n;
    }
  });

  double mean_x = 0.0, mean_r_fino = 0.0, mean_r_base = 0.0;
  for (int s = 0; s < n_seeds; ++s) {
    mean_x += fino_mean_x[s] / n_seeds;
    mean_r_fino += fino_reward[s] / n_seeds;
    mean_r_base += base_reward[s] / n_seeds;
  }
  const bool pass = mean_x >= 0.1 && mean_r_fino >= mean_r_base;
  char detail[160];
  std::snprintf(detail, sizeof(detail),
                "policy mean a_x %.3f (dataset mean 0); mean reward widened %.3f vs action-noise %.3f",
                mean_x, mean_r_fino, mean_r_base);
  report(9, pass, "distilled policy moves toward reward and beats the action-noise baseline",
         timer.seconds(), detail);
  CHECK(pass);
}

TEST_CASE("criterion 10: maze exploration comparison") {
  Timer timer;
  const int n_seeds = 5;
  std::vector<long> cells_fino(n_seeds), cells_base(n_seeds);
  std::vector<double> success_fino(n_seeds), success_base(n_seeds);
  parallel_for(2 * n_seeds, [&](int task) {
    const int seed = task / 2;
    const bool widened = task % 2 == 1;
    std::unique_ptr<Environment> env = point_maze_env(MazeLayout::default_layout());
    const Dataset ds =
        generate_offline_dataset(*env, BehaviorPolicy::scripted_corridor, 16000, 300 + seed);
    RunConfig config = desk_config("point_maze", widened ? 0.1 : 0.0,
                                   widened ? "softmax" : "greedy",
                                   310 + 10 * seed + (widened ? 1 : 0));
    // widened objective in its written quadratic/exact form, as in the
    // other studies: the desk-scale maze needs the full-path widening for
    // the exploration mechanism to register above seed noise
    config.schedule = "quadratic";
    config.target_mode = "exact";
    config.batch_size = 96;
    AgentBundle bundle = pretrain_offline(config, ds);
    std::unique_ptr<Environment> train_env = point_maze_env(MazeLayout::default_layout());
    const OnlineResult result = finetune_online(config, bundle, *train_env, ds, nullptr);
    if (widened) {
      cells_fino[seed] = result.unique_cells;
      success_fino[seed] = result.final_eval.success_rate;
    } else {
      cells_base[seed] = result.unique_cells;
      success_base[seed] = result.final_eval.success_rate;
    }
  });

  int cell_wins = 0;
  double mean_succ_fino = 0.0, mean_succ_base = 0.0;
  for (int s = 0; s < n_seeds; ++s) {
    if (cells_fino[s] >= cells_base[s]) ++cell_wins;
    mean_succ_fino += success_fino[s] / n_seeds;
    mean_succ_base += success_base[s] / n_seeds;
  }
  const bool pass = cell_wins >= 4 && mean_succ_fino >= mean_succ_base;
  char detail[256];
  std::snprintf(
      detail, sizeof(detail),
      "unique cells widened/greedy per seed: %ld/%ld %ld/%ld %ld/%ld %ld/%ld %ld/%ld; success %.2f vs %.2f",
      cells_fino[0], cells_base[0], cells_fino[1], cells_base[1], cells_fino[2], cells_base[2],
      cells_fino[3], cells_base[3], cells_fino[4], cells_base[4], mean_succ_fino, mean_succ_base);
  report(10, pass, "entropy-guided widened agent explores at least as widely and succeeds",
         timer.seconds(), detail);
  CHECK(pass);
}

TEST_CASE("criterion 11: sampler laws and temperature trace") {
  Timer timer;
  bool pass = true;

  {  // softmax laws
    Rng rng(111);
    std::vector<double> q(6);
    for (auto& v : q) v = rng.uniform(-2.0, 2.0);
    const std::vector<double> p = sampling_probs(q, 0.7);
    double sum = 0.0;
    for (double v : p) sum += v;
    if (std::abs(sum - 1.0) > 1e-12) pass = false;

    std::vector<double> shifted = q;
    for (auto& v : shifted) v += 42.0;
    const std::vector<double> p_shift = sampling_probs(shifted, 0.7);
    for (size_t i = 0; i < p.size(); ++i)
      if (std::abs(p[i] - p_shift[i]) > 1e-12) pass = false;

    const std::vector<double> uniform = sampling_probs(q, 0.0);
    for (double v : uniform)
      if (std::abs(v - 1.0 / q.size()) > 1e-12) pass = false;

    // argmax concentration at xi = 1e3 over 1e4 categorical draws
    const std::vector<double> sharp = sampling_probs(q, 1000.0);
    const size_t best = std::max_element(q.begin(), q.end()) - q.begin();
    long hits = 0;
    const long trials = 10000;
    for (long k = 0; k < trials; ++k) {
      const double u = rng.uniform();
      double acc = 0.0;
      size_t pick = sharp.size() - 1;
      for (size_t i = 0; i < sharp.size(); ++i) {
        acc += sharp[i];
        if (u < acc) {
          pick = i;
          break;
        }
      }
      if (pick == best) ++hits;
    }
    if (static_cast<double>(hits) / trials <= 0.999) pass = false;
  }

  double worst_trace_gap = 0.0;
  {  // exact temperature-update identity over a logged online run
    RunConfig c;
    c.env = "four_circles";
    c.hidden = {16, 16};
    c.batch_size = 64;
    c.offline_steps = 200;
    c.online_steps = 600;
    c.eval_interval = 300;
    c.log_interval = 300;
    c.eval_episodes = 2;
    c.entropy_update_interval = 150;
    c.entropy_actions_per_state = 16;
    c.entropy_components = 2;
    std::unique_ptr<Environment> env = four_circles_env();
    const Dataset ds =
        generate_offline_dataset(*env, BehaviorPolicy::uniform_in_region, 500, 11);
    AgentBundle bundle = pretrain_offline(c, ds);
    MetricsWriter metrics;
    (void)finetune_online(c, bundle, *env, ds, &metrics);
    double xi = c.xi_init;
    int updates = 0;
    for (const MetricsRecord& rec : metrics.records()) {
      if (rec.phase != "online" || std::isnan(rec.entropy)) continue;
      const double expected =
          xi - c.xi_learning_rate * (rec.entropy - bundle.entropy.target_entropy);
      worst_trace_gap = std::max(worst_trace_gap, std::abs(rec.xi - expected));
      if (rec.xi != expected) pass = false;  // exact identity, no tolerance
      xi = rec.xi;
      ++updates;
    }
    if (updates != 4) pass = false;
  }

  char detail[96];
  std::snprintf(detail, sizeof(detail), "trace deviation %.3g (exact identity required)",
                worst_trace_gap);
  report(11, pass, "softmax selection laws and the exact temperature-update trace",
         timer.seconds(), detail);
  CHECK(pass);
}
