#pragma once

// Discrete-actor agent with twin categorical critics.
//
// The actor maps a state to n x m logits; a per-row softmax gives the action
// distribution A_hat. Critics read [x, vec(A_hat)] (row-major) and emit N
// logits over the value support. Targets come from the target networks via
// the clipped double merge and the categorical Bellman projection.

#include <cstddef>
#include <cstdint>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "d2c/action_space.hpp"
#include "d2c/checkpoint.hpp"
#include "d2c/mlp.hpp"
#include "d2c/random.hpp"
#include "d2c/value_dist.hpp"

namespace d2c {

/// Scale handling for the P(A | A_hat) critic weights.
enum class WeightMode { normalized, raw };

/// Which A_hat the critic update sees: the current actor's output at x, or
/// the behaviour distribution stored with the transition.
enum class CriticInputSource { recomputed, stored };

/// Distribution whose CDF drives the policy objective and the entropy gate.
enum class PolicyCritic { critic1, merged };

/// entropy_gate: sample from A_hat plus the gated entropy term.
/// epsilon_uniform: no entropy term; each row is replaced by a uniform atom
/// with probability noise_rate during training.
enum class Exploration { entropy_gate, epsilon_uniform };

enum class ActMode { train, eval };

/// How eval mode turns A_hat into an action.
enum class EvalPolicy { argmax, sample };

struct AgentConfig {
  std::size_t state_dim = 1;
  ActionSpaceSpec action{1, 51, {-2.0}, {2.0}};
  double v_min = -1.0;
  double v_max = 1.0;
  std::size_t n_value_atoms = 51;

  std::vector<std::size_t> actor_hidden = {256, 256};
  std::vector<std::size_t> critic_hidden = {256, 256};

  double gamma = 0.99;
  std::size_t batch_size = 512;
  double learning_rate = 2.5e-4;
  double beta = 0.5;      // entropy coefficient
  double h = 0.5;         // entropy gate scale
  double epsilon = 1e-4;  // complement-CDF smoothing
  double tau = 0.005;
  std::size_t train_frequency = 1;
  std::size_t warmup_steps = 1000;
  std::size_t buffer_capacity = 1000000;
  std::uint64_t seed = 0;

  bool twin_critics = true;
  WeightMode weight_mode = WeightMode::normalized;
  CriticInputSource critic_input = CriticInputSource::recomputed;
  PolicyCritic policy_critic = PolicyCritic::critic1;
  Exploration exploration = Exploration::entropy_gate;
  double noise_rate = 0.1;
  EvalPolicy eval_policy = EvalPolicy::argmax;

  /// Throws InvalidInput on 0 < gamma < 1, 0 < h <= 1, beta >= 0, B >= 1 and
  /// the other range checks.
  void validate() const;
  ValueSupport support() const { return ValueSupport(v_min, v_max, n_value_atoms); }

  bool operator==(const AgentConfig&) const = default;
};

struct Transition {
  std::vector<double> x;
  ActionSample action;
  double r = 0.0;
  std::vector<double> x_next;
  bool done = false;
  /// Flattened behaviour distribution at collection time (n * m entries).
  std::vector<double> behavior;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);
  ReplayBuffer(const ReplayBuffer& other);
  ReplayBuffer& operator=(const ReplayBuffer&) = delete;

  /// Safe to call from several rollout workers; appends are serialised.
  void push(Transition t);

  std::size_t size() const;
  std::size_t capacity() const noexcept { return capacity_; }
  std::uint64_t inserted() const;

  /// Uniform indices with replacement over the stored items.
  std::vector<std::size_t> sample_indices(std::size_t count, Rng& rng) const;
  const Transition& at(std::size_t index) const { return items_.at(index); }

 private:
  std::size_t capacity_;
  std::vector<Transition> items_;
  std::uint64_t inserted_ = 0;
  mutable std::mutex mutex_;
};

// ---------------------------------------------------------------------------
// Pieces of the update that are useful on their own

/// Per-sample weights from log P(A | A_hat). normalized: exp(l - max l);
/// raw: exp(l). A batch whose weights are all zero yields all-zero weights.
std::vector<double> critic_weights(std::span<const double> log_probs, WeightMode mode);

/// max_j ((N-1-j) / (N-1)) * h * rho_j over 0-based atoms j.
double gate_threshold(std::span<const double> rho, double h);

/// s = 1 when gate_threshold(rho, h) >= entropy / max_entropy.
bool entropy_gate(std::span<const double> rho, double h, double entropy, double max_entropy);

/// Critic input matrix: each column is [x, flattened A_hat].
Eigen::MatrixXd critic_inputs(const std::vector<std::vector<double>>& states,
                              const std::vector<std::vector<double>>& adists);

struct CriticLoss {
  double loss = 0.0;  // (1/B) sum_t w_t CE(target_t, critic(x_t, A_hat_t))
  Eigen::VectorXd grad;
};

/// Weighted cross-entropy of one critic against fixed targets.
CriticLoss critic_loss_and_grad(const Mlp& critic, const Eigen::MatrixXd& inputs,
                                const std::vector<ValueDistribution>& targets,
                                std::span<const double> weights);

struct ActorObjectiveParts {
  double beta = 0.0;
  double h = 0.5;
  double epsilon = 1e-4;
  PolicyCritic policy_critic = PolicyCritic::critic1;
  bool entropy_term = true;
};

struct ActorObjective {
  /// (1/B) sum_t sum_{j<N-1} log(1 - (1 - eps) rho_j).
  double cdf_objective = 0.0;
  /// (1/B) sum_t s_t H_t / H_bar.
  double entropy_objective = 0.0;
  double mean_entropy = 0.0;
  double gate_rate = 0.0;
  /// Ascent direction for the actor parameters: gradient of
  /// cdf_objective + beta * entropy_objective with the gate bits held fixed.
  Eigen::VectorXd grad;
};

/// Policy objective through the composed actor -> critic graph. Critic
/// parameters are read only. `critic2` is used only in merged mode.
ActorObjective actor_objective_and_grad(const Mlp& actor, const Mlp& critic1, const Mlp* critic2,
                                        const ActionSpaceSpec& action,
                                        const std::vector<std::vector<double>>& states,
                                        const ActorObjectiveParts& parts);

struct TrainMetrics {
  bool skipped = true;
  double critic1_loss = 0.0;
  double critic2_loss = 0.0;
  double actor_objective = 0.0;
  double mean_entropy = 0.0;
  double gate_rate = 0.0;
  double mean_target_expectation = 0.0;
};

struct ActResult {
  ActionSample action;
  ActionDistribution adist;
  /// Distribution the action was actually drawn from (differs from adist
  /// under epsilon-uniform exploration).
  std::vector<double> behavior;
};

class Agent {
 public:
  explicit Agent(AgentConfig config);

  const AgentConfig& config() const noexcept { return config_; }
  const ValueSupport& support() const noexcept { return support_; }

  ActionDistribution policy(std::span<const double> x) const;
  ActResult act(std::span<const double> x, ActMode mode, Rng& rng) const;

  void observe(Transition t);
  ReplayBuffer& buffer() noexcept { return buffer_; }
  const ReplayBuffer& buffer() const noexcept { return buffer_; }

  /// Targets from the target networks. Const: no parameter or optimizer
  /// state changes.
  std::vector<ValueDistribution> build_target(const std::vector<const Transition*>& batch) const;

  /// Steps both critics (critic 1 only without twin critics). Returns the
  /// weighted losses before the step. Throws PoisonError on a non-finite loss.
  std::pair<double, double> critic_update(const std::vector<const Transition*>& batch,
                                          const std::vector<ValueDistribution>& targets);

  /// One actor ascent step on the policy objective plus gated entropy term.
  ActorObjective actor_update(const std::vector<const Transition*>& batch);

  void update_targets();

  /// One full update if the buffer holds at least warmup_steps transitions.
  TrainMetrics train_step(Rng& rng);

  const Mlp& actor() const noexcept { return actor_; }
  const Mlp& actor_target() const noexcept { return actor_target_; }
  const Mlp& critic(int i) const { return i == 1 ? critic1_ : critic2_; }
  const Mlp& critic_target(int i) const { return i == 1 ? critic1_target_ : critic2_target_; }
  Mlp& mutable_critic(int i) { return i == 1 ? critic1_ : critic2_; }
  Mlp& mutable_actor() { return actor_; }

  Checkpoint to_checkpoint(std::string metadata_json) const;
  /// Restores parameters and optimizer state; the buffer starts empty.
  void restore(const Checkpoint& ckpt);

 private:
  std::vector<std::vector<double>> policy_rows(const std::vector<const Transition*>& batch,
                                               bool next_state, bool target) const;

  AgentConfig config_;
  ValueSupport support_;
  Mlp actor_, actor_target_;
  Mlp critic1_, critic2_, critic1_target_, critic2_target_;
  OptimizerState actor_opt_, critic1_opt_, critic2_opt_;
  ReplayBuffer buffer_;
};

}  // namespace d2c
