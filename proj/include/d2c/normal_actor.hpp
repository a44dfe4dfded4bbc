#pragma once

// Ablation agent: the discrete actor is replaced by a deterministic
// continuous actor (tanh-bounded) with fixed Gaussian exploration noise. The
// twin categorical critics, merge, projection and policy objective are the
// same as the main agent; critics read [x, a scaled to [-1, 1]].

#include <cstddef>
#include <span>
#include <vector>

#include "d2c/agent.hpp"

namespace d2c {

struct ContinuousTransition {
  std::vector<double> x;
  std::vector<double> action;  // actuator units
  double r = 0.0;
  std::vector<double> x_next;
  bool done = false;
};

class NormalActorAgent {
 public:
  /// Uses config.action bounds, the value support, network sizes, gamma,
  /// learning rate, tau, batch size, warmup and seed. Exploration noise is
  /// noise_rate times the half-range of each dimension.
  explicit NormalActorAgent(AgentConfig config);

  const AgentConfig& config() const noexcept { return config_; }

  std::vector<double> mean_action(std::span<const double> x) const;
  std::vector<double> act(std::span<const double> x, ActMode mode, Rng& rng) const;

  void observe(ContinuousTransition t);
  std::size_t buffer_size() const noexcept { return items_.size(); }

  TrainMetrics train_step(Rng& rng);

  Checkpoint to_checkpoint(std::string metadata_json) const;
  void restore(const Checkpoint& ckpt);

 private:
  Eigen::MatrixXd scaled_actions(const Eigen::MatrixXd& raw) const;

  AgentConfig config_;
  ValueSupport support_;
  Mlp actor_, actor_target_;
  Mlp critic1_, critic2_, critic1_target_, critic2_target_;
  OptimizerState actor_opt_, critic1_opt_, critic2_opt_;
  std::vector<ContinuousTransition> items_;
  std::size_t inserted_ = 0;
};

}  // namespace d2c
