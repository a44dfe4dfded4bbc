#include <cmath>
#include <random>
#include <sstream>
#include <thread>

#include "doctest.h"

#include "d2c/agent.hpp"
#include "d2c/checkpoint.hpp"
#include "d2c/errors.hpp"

using namespace d2c;

namespace {

AgentConfig small_config(std::uint64_t seed = 1) {
  AgentConfig c;
  c.state_dim = 2;
  c.action = ActionSpaceSpec{2, 5, {-1.0, -1.0}, {1.0, 1.0}};
  c.n_value_atoms = 11;
  c.actor_hidden = {8};
  c.critic_hidden = {8};
  c.batch_size = 8;
  c.warmup_steps = 16;
  c.learning_rate = 1e-3;
  c.seed = seed;
  return c;
}

std::vector<double> flat_params(const Agent& a) {
  std::vector<double> out;
  for (const Mlp* m : {&a.actor(), &a.actor_target(), &a.critic(1), &a.critic(2),
                       &a.critic_target(1), &a.critic_target(2)}) {
    out.insert(out.end(), m->params().values.data(),
               m->params().values.data() + m->params().values.size());
  }
  return out;
}

void fill(Agent& agent, std::size_t count, std::uint64_t seed) {
  Rng rng = make_rng(seed, Stream::env);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<double> x = {nd(rng), nd(rng)};
    const auto r = agent.act(x, ActMode::train, rng);
    agent.observe(Transition{x, r.action, std::tanh(nd(rng)), {nd(rng), nd(rng)}, i % 3 == 0,
                             r.behavior});
  }
}

std::vector<const Transition*> first_batch(const Agent& a, std::size_t n) {
  std::vector<const Transition*> b;
  for (std::size_t i = 0; i < n; ++i) b.push_back(&a.buffer().at(i));
  return b;
}

// Critical value of the chi-square distribution at upper-tail 0.001
// (Wilson-Hilferty approximation).
double chi_square_critical_001(double df) {
  const double z = 3.090232;
  const double t = 2.0 / (9.0 * df);
  return df * std::pow(1.0 - t + z * std::sqrt(t), 3.0);
}

}  // namespace

TEST_SUITE("agent") {

TEST_CASE("config validation") {
  CHECK_NOTHROW(small_config().validate());
  auto c = small_config();
  c.gamma = 1.0;
  CHECK_THROWS_AS(c.validate(), InvalidInput);
  c = small_config();
  c.h = 0.0;
  CHECK_THROWS_AS(c.validate(), InvalidInput);
  c = small_config();
  c.beta = -0.1;
  CHECK_THROWS_AS(c.validate(), InvalidInput);
  c = small_config();
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), InvalidInput);
  c = small_config();
  c.v_max = c.v_min;
  CHECK_THROWS_AS(Agent{c}, InvalidInput);
}

TEST_CASE("untrained actor is uniform with maximal entropy") {
  const Agent agent(small_config());
  const std::vector<double> x = {0.4, -2.0};
  const auto p = agent.policy(x);
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t k = 0; k < 5; ++k) CHECK(p(r, k) == doctest::Approx(0.2).epsilon(1e-15));
  }
  CHECK(entropy(p) == doctest::Approx(2.0 * std::log(5.0)).epsilon(1e-14));
  Rng rng = make_rng(0, Stream::actor);
  const auto eval = agent.act(x, ActMode::eval, rng);
  CHECK(eval.action.indices == std::vector<std::size_t>{0, 0});
  const std::vector<double> wrong = {1.0};
  CHECK_THROWS_AS(agent.policy(wrong), InvalidInput);
}

TEST_CASE("critic weights") {
  const std::vector<double> l = {0.0, -1.0, -2.0};
  const auto w = critic_weights(l, WeightMode::normalized);
  CHECK(w[0] == 1.0);
  CHECK(w[1] == doctest::Approx(std::exp(-1.0)));
  const std::vector<double> shifted = {-50.0, -51.0};
  const auto ws = critic_weights(shifted, WeightMode::normalized);
  CHECK(ws[0] == 1.0);
  CHECK(ws[1] == doctest::Approx(std::exp(-1.0)));
  const auto raw = critic_weights(shifted, WeightMode::raw);
  CHECK(raw[0] == doctest::Approx(std::exp(-50.0)));
  const std::vector<double> dead = {-INFINITY, -INFINITY};
  for (double v : critic_weights(dead, WeightMode::normalized)) CHECK(v == 0.0);
  // A deterministic action under A_hat has log P = 0 and weight 1.
  const ActionDistribution det(1, 2, RowMatrix{{1.0, 0.0}});
  const std::vector<double> one = {log_prob(det, ActionSample{{0}})};
  CHECK(critic_weights(one, WeightMode::normalized)[0] == 1.0);
}

TEST_CASE("entropy gate examples") {
  const std::vector<double> rho = {0.4, 0.9, 1.0};
  CHECK(gate_threshold(rho, 0.5) == doctest::Approx(0.225));
  CHECK(entropy_gate(rho, 0.5, 0.15, 1.0));
  CHECK_FALSE(entropy_gate(rho, 0.5, 0.3, 1.0));
  // A maximal-entropy actor stays closed whenever h < 1.
  const std::vector<double> ones = {1.0, 1.0, 1.0};
  CHECK_FALSE(entropy_gate(ones, 0.5, std::log(5.0), std::log(5.0)));
  CHECK(entropy_gate(ones, 1.0, std::log(5.0), std::log(5.0)));
  // Zero entropy with any nonzero rho_1 opens it.
  const std::vector<double> small = {1e-9, 0.5, 1.0};
  CHECK(entropy_gate(small, 0.5, 0.0, 1.0));
}

TEST_CASE("entropy gate is monotone in entropy") {
  Rng rng = make_rng(3, Stream::eval);
  for (int c = 0; c < 200; ++c) {
    std::vector<double> rho(11);
    double acc = 0.0;
    for (auto& v : rho) v = (acc += uniform01(rng)) ;
    for (auto& v : rho) v /= acc;
    bool was_open = true;
    for (int k = 0; k <= 100; ++k) {
      const bool open = entropy_gate(rho, 0.5, k / 100.0, 1.0);
      if (!was_open) CHECK_FALSE(open);
      was_open = open;
    }
  }
}

TEST_CASE("replay buffer capacity and uniform sampling") {
  ReplayBuffer buf(5);
  for (int i = 0; i < 7; ++i) buf.push(Transition{{static_cast<double>(i)}, ActionSample{{0}}, 0.0, {0.0}, true, {}});
  CHECK(buf.size() == 5);
  CHECK(buf.inserted() == 7);
  CHECK(buf.at(0).x[0] == 5.0);  // oldest slot overwritten
  CHECK_THROWS_AS(ReplayBuffer(0), InvalidInput);

  ReplayBuffer big(50);
  for (int i = 0; i < 50; ++i) big.push(Transition{{0.0}, ActionSample{{0}}, 0.0, {0.0}, true, {}});
  Rng rng = make_rng(5, Stream::buffer);
  std::vector<double> counts(50, 0.0);
  const auto idx = big.sample_indices(100000, rng);
  for (auto i : idx) counts[i] += 1.0;
  const double expected = 100000.0 / 50.0;
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  CHECK(chi2 < chi_square_critical_001(49.0));
}

TEST_CASE("replay buffer accepts concurrent appends") {
  ReplayBuffer buf(10000);
  std::vector<std::thread> workers;
  for (int w = 0; w < 4; ++w) {
    workers.emplace_back([&buf] {
      for (int i = 0; i < 1000; ++i) buf.push(Transition{{0.0}, ActionSample{{0}}, 0.0, {0.0}, true, {}});
    });
  }
  for (auto& t : workers) t.join();
  CHECK(buf.size() == 4000);
}

TEST_CASE("observe validates dimensions") {
  Agent agent(small_config());
  CHECK_THROWS_AS(agent.observe(Transition{{0.0}, ActionSample{{0, 0}}, 0.0, {0.0, 0.0}, true, {}}),
                  InvalidInput);
  CHECK_THROWS_AS(agent.observe(Transition{{0.0, 0.0}, ActionSample{{0}}, 0.0, {0.0, 0.0}, true, {}}),
                  InvalidInput);
}

TEST_CASE("train_step before warmup is skipped") {
  Agent agent(small_config());
  fill(agent, 10, 1);
  Rng rng = make_rng(1, Stream::buffer);
  const auto before = flat_params(agent);
  CHECK(agent.train_step(rng).skipped);
  CHECK(flat_params(agent) == before);
  fill(agent, 10, 2);
  CHECK_FALSE(agent.train_step(rng).skipped);
  CHECK(flat_params(agent) != before);
}

TEST_CASE("build_target composes the target networks, merge and projection") {
  Agent agent(small_config());
  fill(agent, 8, 3);
  const auto batch = first_batch(agent, 8);
  const auto before = flat_params(agent);
  const auto targets = agent.build_target(batch);
  CHECK(flat_params(agent) == before);

  const auto support = agent.support();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& t = *batch[i];
    const auto logits = agent.actor_target().forward(t.x_next);
    const auto adist = ActionDistribution::from_logits(2, 5, logits);
    std::vector<double> in(t.x_next);
    const auto flat = adist.flatten();
    in.insert(in.end(), flat.begin(), flat.end());
    const auto z1 = softmax_dist(agent.critic_target(1).forward(in), support);
    const auto z2 = softmax_dist(agent.critic_target(2).forward(in), support);
    const auto want = bellman_project(clipped_merge(z1, z2), t.r, t.done ? 0.0 : 0.99, support);
    for (std::size_t k = 0; k < support.size(); ++k) {
      CHECK(std::abs(targets[i][k] - want[k]) <= 1e-12);
    }
  }
}

TEST_CASE("terminal target is a split point mass at the reward") {
  auto c = small_config();
  c.n_value_atoms = 51;
  Agent agent(c);
  agent.observe(Transition{{0.0, 0.0}, ActionSample{{0, 0}}, 0.5, {0.0, 0.0}, true, {}});
  const auto t = agent.build_target(first_batch(agent, 1))[0];
  CHECK(t[37] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(t[38] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(expectation(t) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("identical twin targets reduce to the single-critic backup") {
  auto cfg = small_config();
  Agent twin(cfg);
  fill(twin, 8, 4);
  auto ck = twin.to_checkpoint("{}");
  for (auto& n : ck.networks) {
    if (n.name == "critic2_target") n.params = ck.network("critic1_target").params;
  }
  twin.restore(ck);
  cfg.twin_critics = false;
  Agent single(cfg);
  single.restore(ck);
  fill(single, 8, 4);
  const auto a = twin.build_target(first_batch(twin, 8));
  const auto b = single.build_target(first_batch(single, 8));
  for (std::size_t i = 0; i < 8; ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("critic loss gradient vanishes when targets equal predictions") {
  const Agent agent(small_config());
  std::vector<std::vector<double>> xs = {{0.1, 0.2}, {-1.0, 0.5}};
  std::vector<std::vector<double>> as = {ActionDistribution::uniform(2, 5).flatten(),
                                         ActionDistribution::uniform(2, 5).flatten()};
  const auto in = critic_inputs(xs, as);
  CHECK(in.rows() == 12);
  const Eigen::MatrixXd logits = agent.critic(1).forward(in);
  std::vector<ValueDistribution> targets;
  for (Eigen::Index c = 0; c < 2; ++c) {
    targets.push_back(softmax_dist(std::vector<double>(logits.col(c).data(), logits.col(c).data() + 11), agent.support()));
  }
  const std::vector<double> w = {1.0, 1.0};
  const auto l = critic_loss_and_grad(agent.critic(1), in, targets, w);
  CHECK(l.grad.cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("a small actor step increases the objective on frozen critics") {
  Rng rng = make_rng(8, Stream::eval);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int c = 0; c < 20; ++c) {
    Agent agent(small_config(static_cast<std::uint64_t>(c)));
    // Perturb the zero-initialised actor output so rows are not uniform.
    auto& theta = agent.mutable_actor().params().values;
    for (Eigen::Index i = 0; i < theta.size(); ++i) theta[i] += 0.3 * nd(rng);
    std::vector<std::vector<double>> states(6);
    for (auto& s : states) s = {nd(rng), nd(rng)};
    ActorObjectiveParts parts;
    parts.entropy_term = false;
    const auto o = actor_objective_and_grad(agent.actor(), agent.critic(1), nullptr,
                                            agent.config().action, states, parts);
    Mlp stepped = agent.actor();
    stepped.params().values += 1e-4 * o.grad / std::max(1e-12, o.grad.norm());
    const auto o2 = actor_objective_and_grad(stepped, agent.critic(1), nullptr,
                                             agent.config().action, states, parts);
    CHECK(o2.cdf_objective > o.cdf_objective);
  }
}

TEST_CASE("training is deterministic under a fixed seed") {
  auto run = [] {
    Agent agent(small_config(9));
    Rng rng = make_rng(9, Stream::buffer);
    fill(agent, 40, 9);
    for (int i = 0; i < 10; ++i) agent.train_step(rng);
    return flat_params(agent);
  };
  CHECK(run() == run());
}

TEST_CASE("checkpoint restore reproduces the agent") {
  Agent a(small_config(2));
  fill(a, 40, 2);
  Rng rng = make_rng(2, Stream::buffer);
  for (int i = 0; i < 5; ++i) a.train_step(rng);
  std::stringstream buf;
  write_checkpoint(buf, a.to_checkpoint(R"({"k":1})"));
  Agent b(small_config(2));
  b.restore(read_checkpoint(buf));
  CHECK(flat_params(a) == flat_params(b));
  const std::vector<double> x = {0.2, 0.7};
  CHECK(a.policy(x).probs() == b.policy(x).probs());

  auto other = small_config(2);
  other.actor_hidden = {9};
  Agent c(other);
  CHECK_THROWS_AS(c.restore(a.to_checkpoint("{}")), InvalidInput);
}

TEST_CASE("epsilon-uniform exploration records the mixture as behaviour") {
  auto c = small_config();
  c.exploration = Exploration::epsilon_uniform;
  c.noise_rate = 0.5;
  const Agent agent(c);
  Rng rng = make_rng(1, Stream::actor);
  const std::vector<double> x = {0.0, 0.0};
  const auto r = agent.act(x, ActMode::train, rng);
  REQUIRE(r.behavior.size() == 10);
  double row = 0.0;
  for (std::size_t k = 0; k < 5; ++k) row += r.behavior[k];
  CHECK(row == doctest::Approx(1.0));
}

}  // TEST_SUITE
