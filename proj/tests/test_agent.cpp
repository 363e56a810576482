#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "fino/agent.hpp"
#include "test_util.hpp"

using namespace fino;

namespace {

/// Critic computing Q(s, a) = w . a + c exactly (single linear layer).
Critic linear_critic(int state_dim, const std::vector<double>& w, double c) {
  Critic critic;
  critic.state_dim = state_dim;
  critic.action_dim = static_cast<int>(w.size());
  critic.q1 = DenseNet::zeros({state_dim + critic.action_dim, 1});
  for (size_t j = 0; j < w.size(); ++j) critic.q1.weights(0)(0, state_dim + j) = w[j];
  critic.q1.biases(0) = {c};
  critic.q1_target = critic.q1;
  return critic;
}

OneStepPolicy zero_policy(int state_dim, int action_dim) {
  OneStepPolicy p;
  p.state_dim = state_dim;
  p.action_dim = action_dim;
  p.net = DenseNet::zeros({state_dim + action_dim, action_dim});
  return p;
}

VectorFieldNet zero_field(int state_dim, int action_dim) {
  VectorFieldNet f;
  f.state_dim = state_dim;
  f.action_dim = action_dim;
  f.net = DenseNet::zeros({1 + state_dim + action_dim, action_dim});
  return f;
}

}  // namespace

TEST_CASE("compute_td_targets: terminal transitions use the reward alone") {
  Rng rng(1);
  Critic critic = Critic::make(1, 2, {8}, false, rng);
  OneStepPolicy policy = OneStepPolicy::make(1, 2, {8}, rng);
  TransitionBatch batch;
  batch.resize(3, 1, 2);
  for (int i = 0; i < 3; ++i) {
    batch.set_row(i, {{0.5}, {0.1, 0.2}, 1.5 * (i + 1), {0.7}, true});
  }
  const std::vector<double> y = compute_td_targets(critic, batch, policy, 0.99, rng);
  CHECK(y[0] == doctest::Approx(1.5));
  CHECK(y[1] == doctest::Approx(3.0));
  CHECK(y[2] == doctest::Approx(4.5));
}

TEST_CASE("compute_td_targets: zero discount is myopic") {
  Rng rng(2);
  Critic critic = Critic::make(1, 2, {8}, false, rng);
  OneStepPolicy policy = OneStepPolicy::make(1, 2, {8}, rng);
  TransitionBatch batch;
  batch.resize(2, 1, 2);
  batch.set_row(0, {{0.0}, {0.0, 0.0}, 0.25, {1.0}, false});
  batch.set_row(1, {{1.0}, {0.5, -0.5}, -0.75, {0.0}, false});
  const std::vector<double> y = compute_td_targets(critic, batch, policy, 0.0, rng);
  CHECK(y[0] == doctest::Approx(0.25));
  CHECK(y[1] == doctest::Approx(-0.75));
}

TEST_CASE("td loss equals the hand-computed squared error on one transition") {
  Rng rng(3);
  Critic critic = Critic::make(1, 1, {8}, false, rng);
  OneStepPolicy policy = zero_policy(1, 1);  // a'(s', z) = tanh(0) = 0 for any z
  TransitionBatch batch;
  batch.resize(1, 1, 1);
  batch.set_row(0, {{0.3}, {0.2}, 0.7, {-0.4}, false});

  const double gamma = 0.9;
  const double q_next = critic.q1_target.forward(std::vector<double>{-0.4, 0.0})[0];
  const double target = 0.7 + gamma * q_next;
  const double q = critic.q1.forward(std::vector<double>{0.3, 0.2})[0];

  const GradientBundle g = critic_regression(critic.q1, batch.s, batch.a, {target});
  CHECK(g.loss == doctest::Approx((q - target) * (q - target)).epsilon(1e-12));
}

TEST_CASE("critic_regression gradient matches finite differences") {
  Rng rng(4);
  Critic critic = Critic::make(2, 2, {16, 16}, false, rng);
  Matrix states(6, 2), actions(6, 2);
  std::vector<double> y(6);
  for (size_t i = 0; i < states.size(); ++i) states.data()[i] = rng.normal();
  for (size_t i = 0; i < actions.size(); ++i) actions.data()[i] = rng.uniform(-1.0, 1.0);
  for (auto& v : y) v = rng.normal();

  const GradientBundle analytic = critic_regression(critic.q1, states, actions, y);
  const GradientBundle fd = test::finite_difference_grads(
      critic.q1, [&] { return critic_regression(critic.q1, states, actions, y).loss; });
  CHECK(test::max_relative_error(analytic, fd) < 1e-4);
}

TEST_CASE("td_update applies polyak averaging to the targets") {
  Rng rng(5);
  Critic critic = Critic::make(1, 1, {8}, false, rng);
  OneStepPolicy policy = OneStepPolicy::make(1, 1, {8}, rng);
  const DenseNet target_before = critic.q1_target;
  AdamState q1, q2;
  AgentConfig config;
  config.tau = 0.5;  // exaggerated so the move is visible
  TransitionBatch batch;
  batch.resize(2, 1, 1);
  batch.set_row(0, {{0.1}, {0.2}, 1.0, {0.3}, false});
  batch.set_row(1, {{-0.1}, {-0.2}, -1.0, {-0.3}, true});
  (void)td_update(critic, q1, q2, batch, policy, config, rng);
  CHECK_FALSE(critic.q1.same_parameters(target_before));          // online moved
  CHECK_FALSE(critic.q1_target.same_parameters(target_before));   // target followed
  CHECK_FALSE(critic.q1_target.same_parameters(critic.q1));       // but not all the way
}

TEST_CASE("td fixed point on a two-state chain matches the analytic values") {
  // s0 -(r=0)-> s1 -(r=1)-> s0, single action 0, gamma = 0.9
  // V1 = 1/(1-g^2), V0 = g V1
  Rng rng(6);
  Critic critic = Critic::make(1, 1, {16, 16}, false, rng);
  OneStepPolicy policy = zero_policy(1, 1);
  AdamState q1, q2;
  q1.learning_rate = 3e-3;
  AgentConfig config;
  config.discount = 0.9;
  config.tau = 0.01;
  TransitionBatch batch;
  batch.resize(2, 1, 1);
  batch.set_row(0, {{0.0}, {0.0}, 0.0, {1.0}, false});
  batch.set_row(1, {{1.0}, {0.0}, 1.0, {0.0}, false});
  for (int step = 0; step < 12000; ++step)
    (void)td_update(critic, q1, q2, batch, policy, config, rng);
  const double v0 = critic.q1.forward(std::vector<double>{0.0, 0.0})[0];
  const double v1 = critic.q1.forward(std::vector<double>{1.0, 0.0})[0];
  const double g = 0.9;
  CHECK(std::abs(v1 - 1.0 / (1.0 - g * g)) < 1e-2);
  CHECK(std::abs(v0 - g / (1.0 - g * g)) < 1e-2);
}

TEST_CASE("distill_loss: zero everywhere gives zero loss") {
  OneStepPolicy policy = zero_policy(1, 2);
  VectorFieldNet flow = zero_field(1, 2);
  Critic critic = linear_critic(1, {0.0, 0.0}, 0.0);
  Matrix states(4, 1, 0.0), z(4, 2, 0.0);  // z = 0 so a_flow = a_policy = 0
  const DistillResult r = distill_loss(policy, flow, critic, states, z, 1.0, 10);
  CHECK(r.loss == doctest::Approx(0.0));
}

TEST_CASE("distill_loss: alpha=0 reduces to value maximization") {
  Rng rng(7);
  OneStepPolicy policy = OneStepPolicy::make(1, 2, {8}, rng);
  VectorFieldNet flow = VectorFieldNet::make(1, 2, {8}, rng);
  Critic critic = Critic::make(1, 2, {8}, false, rng);
  Matrix states(5, 1), z(5, 2);
  for (size_t i = 0; i < states.size(); ++i) states.data()[i] = rng.normal();
  for (size_t i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();
  const DistillResult r = distill_loss(policy, flow, critic, states, z, 0.0, 10);

  double want = 0.0;
  for (int i = 0; i < 5; ++i) {
    const std::vector<double> a =
        policy.act(std::span<const double>(states.row(i), 1), std::span<const double>(z.row(i), 2));
    want -= critic.q_value(std::span<const double>(states.row(i), 1), a) / 5.0;
  }
  CHECK(r.loss == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("distill_loss: scalar toy minimized at a = 1/2") {
  // Q(s,a) = a, a_flow = 0, alpha = 1: loss(a) = -a + a^2, argmin 0.5
  OneStepPolicy policy = zero_policy(1, 1);
  {
    Rng rng(8);
    policy.net = DenseNet({2, 16, 1}, rng);
  }
  VectorFieldNet flow = zero_field(1, 1);
  Critic critic = linear_critic(1, {1.0}, 0.0);
  Matrix states(8, 1, 0.0), z(8, 1, 0.0);
  AdamState opt;
  opt.learning_rate = 0.01;
  for (int step = 0; step < 3000; ++step) {
    DistillResult r = distill_loss(policy, flow, critic, states, z, 1.0, 5);
    adam_step(policy.net, opt, r.policy_grads);
  }
  const std::vector<double> a = policy.act(std::vector<double>{0.0}, std::vector<double>{0.0});
  CHECK(std::abs(a[0] - 0.5) < 1e-2);
}

TEST_CASE("distill_loss: gradient matches finite differences (single and twin critics)") {
  for (const bool min_of_two : {false, true}) {
    CAPTURE(min_of_two);
    Rng rng(9);
    OneStepPolicy policy = OneStepPolicy::make(2, 2, {12}, rng);
    VectorFieldNet flow = VectorFieldNet::make(2, 2, {12}, rng);
    Critic critic = Critic::make(2, 2, {12}, min_of_two, rng);
    Matrix states(5, 2), z(5, 2);
    for (size_t i = 0; i < states.size(); ++i) states.data()[i] = rng.normal();
    for (size_t i = 0; i < z.size(); ++i) z.data()[i] = rng.normal();

    const DistillResult r = distill_loss(policy, flow, critic, states, z, 0.7, 6);
    const GradientBundle fd = test::finite_difference_grads(policy.net, [&] {
      return distill_loss(policy, flow, critic, states, z, 0.7, 6).loss;
    });
    GradientBundle analytic = r.policy_grads;
    CHECK(test::max_relative_error(analytic, fd) < 1e-4);
  }
}

TEST_CASE("candidate_actions: n=1 equals a single act with the same z") {
  Rng rng_a(10), rng_b(10);
  OneStepPolicy policy;
  {
    Rng rng(11);
    policy = OneStepPolicy::make(1, 2, {8}, rng);
  }
  const std::vector<double> s = {0.4};
  const Matrix got = candidate_actions(policy, s, 1, rng_a);
  const std::vector<double> z = {rng_b.normal(), rng_b.normal()};
  const std::vector<double> want = policy.act(s, z);
  CHECK(got(0, 0) == doctest::Approx(want[0]).epsilon(1e-13));
  CHECK(got(0, 1) == doctest::Approx(want[1]).epsilon(1e-13));
}

TEST_CASE("candidate_actions: constant policy gives identical candidates, fixed seed reproduces") {
  OneStepPolicy policy = zero_policy(1, 2);
  policy.net.biases(0) = {0.3, -0.6};
  Rng rng(12);
  const Matrix c = candidate_actions(policy, std::vector<double>{0.0}, 6, rng);
  for (int i = 1; i < 6; ++i) {
    CHECK(c(i, 0) == c(0, 0));
    CHECK(c(i, 1) == c(0, 1));
  }
  Rng rng_a(13), rng_b(13);
  OneStepPolicy random_policy;
  {
    Rng rng(14);
    random_policy = OneStepPolicy::make(1, 2, {8}, rng);
  }
  const Matrix a = candidate_actions(random_policy, std::vector<double>{0.0}, 4, rng_a);
  const Matrix b = candidate_actions(random_policy, std::vector<double>{0.0}, 4, rng_b);
  CHECK(a == b);
}

TEST_CASE("sampling_probs: uniform at xi=0 and on ties, exact two-point softmax") {
  const std::vector<double> q = {1.0, 2.0};
  const std::vector<double> flat = sampling_probs(q, 0.0);
  CHECK(flat[0] == doctest::Approx(0.5));
  CHECK(flat[1] == doctest::Approx(0.5));
  const std::vector<double> p = sampling_probs(q, 1.0);
  CHECK(p[0] == doctest::Approx(0.26894142136999510).epsilon(1e-10));
  CHECK(p[1] == doctest::Approx(0.73105857863000490).epsilon(1e-10));
  const std::vector<double> ties = sampling_probs(std::vector<double>{3.0, 3.0, 3.0}, 17.0);
  for (double v : ties) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK_THROWS_AS((void)sampling_probs(std::vector<double>{}, 1.0), std::invalid_argument);
}

TEST_CASE("sampling_probs: sums to one, shift invariant, correct limits") {
  Rng rng(15);
  std::vector<double> q(7);
  for (auto& v : q) v = rng.uniform(-3.0, 3.0);
  for (const double xi : {0.0, 0.3, 7.0, 1e3, 1e-6}) {
    const std::vector<double> p = sampling_probs(q, xi);
    double sum = 0.0;
    for (double v : p) sum += v;
    CHECK(std::abs(sum - 1.0) <= 1e-12);
    std::vector<double> shifted = q;
    for (auto& v : shifted) v += 123.456;
    const std::vector<double> p2 = sampling_probs(shifted, xi);
    for (size_t i = 0; i < p.size(); ++i) CHECK(std::abs(p[i] - p2[i]) <= 1e-12);
  }
  // xi -> inf: argmax indicator; xi -> 0: uniform
  const std::vector<double> sharp = sampling_probs(q, 1e3);
  const size_t best = std::max_element(q.begin(), q.end()) - q.begin();
  CHECK(sharp[best] > 0.999);
  const std::vector<double> flat = sampling_probs(q, 1e-6);
  for (double v : flat) CHECK(v == doctest::Approx(1.0 / q.size()).epsilon(1e-4));
}

TEST_CASE("select_action_explore: singleton sampler returns the lone candidate") {
  Rng rng(16);
  OneStepPolicy policy = OneStepPolicy::make(1, 2, {8}, rng);
  Critic critic = Critic::make(1, 2, {8}, false, rng);
  SamplerState sampler;
  sampler.n_sample = 1;
  sampler.xi = 123.0;
  const std::vector<double> s = {0.2};
  Rng rng_sel(17), rng_copy(17);
  const std::vector<double> a = select_action_explore(policy, critic, s, sampler, rng_sel);
  const Matrix cand = candidate_actions(policy, s, 1, rng_copy);
  CHECK(a[0] == cand(0, 0));
  CHECK(a[1] == cand(0, 1));
  CHECK(sampler.explore_calls == 1);
}

TEST_CASE("select_action_explore: high xi concentrates on the argmax") {
  Rng rng(18);
  OneStepPolicy policy = OneStepPolicy::make(1, 2, {8}, rng);
  Critic critic = linear_critic(1, {3.0, -1.0}, 0.0);  // well-separated scores
  SamplerState sampler;
  sampler.n_sample = 4;
  sampler.xi = 1000.0;
  const std::vector<double> s = {0.0};
  Rng rng_sel(19);
  int hits = 0;
  const int trials = 10000;
  for (int k = 0; k < trials; ++k) {
    Rng snapshot = rng_sel;
    const std::vector<double> a = select_action_explore(policy, critic, s, sampler, rng_sel);
    const Matrix cand = candidate_actions(policy, s, 4, snapshot);
    int best = 0;
    double best_q = -1e300;
    for (int i = 0; i < 4; ++i) {
      const double q = critic.q_value(s, std::span<const double>(cand.row(i), 2));
      if (q > best_q) {
        best_q = q;
        best = i;
      }
    }
    if (a[0] == cand(best, 0) && a[1] == cand(best, 1)) ++hits;
  }
  CHECK(static_cast<double>(hits) / trials > 0.999);
}

TEST_CASE("select_action_explore: xi=0 samples uniformly") {
  Rng rng(20);
  OneStepPolicy policy = OneStepPolicy::make(1, 2, {8}, rng);
  Critic critic = Critic::make(1, 2, {8}, false, rng);
  SamplerState sampler;
  sampler.n_sample = 4;
  sampler.xi = 0.0;
  const std::vector<double> s = {0.0};
  Rng rng_sel(21);
  std::vector<int> counts(4, 0);
  const int trials = 10000;
  for (int k = 0; k < trials; ++k) {
    Rng snapshot = rng_sel;
    const std::vector<double> a = select_action_explore(policy, critic, s, sampler, rng_sel);
    const Matrix cand = candidate_actions(policy, s, 4, snapshot);
    for (int i = 0; i < 4; ++i)
      if (a[0] == cand(i, 0) && a[1] == cand(i, 1)) {
        counts[i] += 1;
        break;
      }
  }
  const double sigma = std::sqrt(0.25 * 0.75 / trials);
  for (int i = 0; i < 4; ++i)
    CHECK(std::abs(counts[i] / static_cast<double>(trials) - 0.25) < 3.0 * sigma + 1e-9);
}

TEST_CASE("select_action_eval: argmax with lowest-index ties, shift invariant") {
  Rng rng(22);
  OneStepPolicy policy = OneStepPolicy::make(1, 2, {8}, rng);
  const std::vector<double> s = {0.0};
  for (const double shift : {0.0, 55.5}) {
    Critic critic = linear_critic(1, {2.0, 0.5}, shift);
    Rng rng_a(23), rng_b(23);
    const std::vector<double> pick = select_action_eval(policy, critic, s, 5, rng_a);
    const Matrix cand = candidate_actions(policy, s, 5, rng_b);
    int best = 0;
    double best_q = -1e300;
    for (int i = 0; i < 5; ++i) {
      const double q = critic.q_value(s, std::span<const double>(cand.row(i), 2));
      if (q > best_q) {
        best_q = q;
        best = i;
      }
    }
    CHECK(pick[0] == cand(best, 0));
    CHECK(pick[1] == cand(best, 1));
  }
  // constant policy: every candidate identical, the lone action comes back
  OneStepPolicy constant = zero_policy(1, 2);
  constant.net.biases(0) = {0.1, 0.2};
  Critic critic = linear_critic(1, {1.0, 1.0}, 0.0);
  Rng rng_c(24);
  const std::vector<double> a = select_action_eval(constant, critic, s, 3, rng_c);
  CHECK(a[0] == doctest::Approx(std::tanh(0.1)));
  CHECK(a[1] == doctest::Approx(std::tanh(0.2)));
}

TEST_CASE("update_temperature: fixed point, arithmetic, sign behavior") {
  EntropyController controller;
  controller.target_entropy = -2.0;
  controller.xi_learning_rate = 0.01;
  CHECK(update_temperature(1.0, -2.0, controller) == 1.0);
  CHECK(update_temperature(1.0, 0.0, controller) == doctest::Approx(0.98));
  CHECK(update_temperature(1.0, -1.0, controller) < 1.0);  // H above target
  CHECK(update_temperature(1.0, -3.0, controller) > 1.0);  // H below target
}

TEST_CASE("default_n_sample: floor of four, half the dimension above") {
  CHECK(default_n_sample(2) == 4);
  CHECK(default_n_sample(8) == 4);
  CHECK(default_n_sample(10) == 5);
  CHECK(default_n_sample(21) == 11);
}

TEST_CASE("one-step policy outputs stay inside the box") {
  Rng rng(25);
  OneStepPolicy policy = OneStepPolicy::make(2, 3, {16}, rng);
  for (int k = 0; k < 100; ++k) {
    const std::vector<double> s = {rng.normal(), rng.normal()};
    const std::vector<double> z = {rng.normal(), rng.normal(), rng.normal()};
    for (double v : policy.act(s, z)) {
      CHECK(v >= -1.0);
      CHECK(v <= 1.0);
    }
  }
}
