#include "d2c/agent.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "d2c/errors.hpp"

namespace d2c {

void AgentConfig::validate() const {
  if (state_dim < 1) throw InvalidInput("agent state_dim must be >= 1");
  action.validate();
  if (!(v_min < v_max) || n_value_atoms < 2) throw InvalidInput("invalid value support");
  if (!(gamma > 0.0 && gamma < 1.0)) throw InvalidInput("gamma must lie in (0, 1)");
  if (!(h > 0.0 && h <= 1.0)) throw InvalidInput("entropy gate scale h must lie in (0, 1]");
  if (!(beta >= 0.0)) throw InvalidInput("entropy coefficient beta must be >= 0");
  if (batch_size < 1) throw InvalidInput("batch size must be >= 1");
  if (!(learning_rate > 0.0)) throw InvalidInput("learning rate must be positive");
  if (!(epsilon >= 0.0 && epsilon < 1.0)) throw InvalidInput("epsilon must lie in [0, 1)");
  if (!(tau > 0.0 && tau <= 1.0)) throw InvalidInput("tau must lie in (0, 1]");
  if (train_frequency < 1) throw InvalidInput("train frequency must be >= 1");
  if (buffer_capacity < 1) throw InvalidInput("buffer capacity must be >= 1");
  if (!(noise_rate >= 0.0 && noise_rate <= 1.0)) throw InvalidInput("noise rate must lie in [0, 1]");
}

// ---------------------------------------------------------------------------
// Replay buffer

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity < 1) throw InvalidInput("replay buffer capacity must be >= 1");
}

ReplayBuffer::ReplayBuffer(const ReplayBuffer& other) : capacity_(other.capacity_) {
  std::lock_guard lock(other.mutex_);
  items_ = other.items_;
  inserted_ = other.inserted_;
}

void ReplayBuffer::push(Transition t) {
  std::lock_guard lock(mutex_);
  if (items_.size() < capacity_) {
    items_.push_back(std::move(t));
  } else {
    items_[inserted_ % capacity_] = std::move(t);
  }
  ++inserted_;
}

std::size_t ReplayBuffer::size() const {
  std::lock_guard lock(mutex_);
  return items_.size();
}

std::uint64_t ReplayBuffer::inserted() const {
  std::lock_guard lock(mutex_);
  return inserted_;
}

std::vector<std::size_t> ReplayBuffer::sample_indices(std::size_t count, Rng& rng) const {
  const std::size_t n = size();
  if (n == 0) throw InvalidInput("cannot sample from an empty replay buffer");
  std::uniform_int_distribution<std::size_t> dist(0, n - 1);
  std::vector<std::size_t> out(count);
  for (auto& i : out) i = dist(rng);
  return out;
}

// ---------------------------------------------------------------------------
// Free functions

std::vector<double> critic_weights(std::span<const double> log_probs, WeightMode mode) {
  std::vector<double> w(log_probs.size(), 0.0);
  if (mode == WeightMode::raw) {
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp(log_probs[i]);
    return w;
  }
  double top = -std::numeric_limits<double>::infinity();
  for (double l : log_probs) top = std::max(top, l);
  if (!std::isfinite(top)) return w;
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp(log_probs[i] - top);
  return w;
}

double gate_threshold(std::span<const double> rho, double h) {
  const std::size_t n = rho.size();
  if (n < 2) throw InvalidInput("gate threshold needs at least two atoms");
  double best = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double scale = static_cast<double>(n - 1 - j) / static_cast<double>(n - 1);
    best = std::max(best, scale * h * rho[j]);
  }
  return best;
}

bool entropy_gate(std::span<const double> rho, double h, double entropy, double max_entropy) {
  return gate_threshold(rho, h) >= entropy / max_entropy;
}

Eigen::MatrixXd critic_inputs(const std::vector<std::vector<double>>& states,
                              const std::vector<std::vector<double>>& adists) {
  if (states.empty() || states.size() != adists.size()) {
    throw InvalidInput("critic inputs need matching, non-empty state and policy batches");
  }
  const auto sd = static_cast<Eigen::Index>(states[0].size());
  const auto ad = static_cast<Eigen::Index>(adists[0].size());
  Eigen::MatrixXd in(sd + ad, static_cast<Eigen::Index>(states.size()));
  for (std::size_t t = 0; t < states.size(); ++t) {
    if (static_cast<Eigen::Index>(states[t].size()) != sd ||
        static_cast<Eigen::Index>(adists[t].size()) != ad) {
      throw InvalidInput("ragged critic input batch");
    }
    const auto col = static_cast<Eigen::Index>(t);
    for (Eigen::Index i = 0; i < sd; ++i) in(i, col) = states[t][static_cast<std::size_t>(i)];
    for (Eigen::Index i = 0; i < ad; ++i) in(sd + i, col) = adists[t][static_cast<std::size_t>(i)];
  }
  return in;
}

namespace {

std::span<const double> column(const Eigen::MatrixXd& m, Eigen::Index c) {
  return {m.data() + c * m.rows(), static_cast<std::size_t>(m.rows())};
}

Eigen::MatrixXd state_matrix(const std::vector<std::vector<double>>& states) {
  const auto sd = static_cast<Eigen::Index>(states.at(0).size());
  Eigen::MatrixXd x(sd, static_cast<Eigen::Index>(states.size()));
  for (std::size_t t = 0; t < states.size(); ++t) {
    if (static_cast<Eigen::Index>(states[t].size()) != sd) throw InvalidInput("ragged state batch");
    for (Eigen::Index i = 0; i < sd; ++i) {
      x(i, static_cast<Eigen::Index>(t)) = states[t][static_cast<std::size_t>(i)];
    }
  }
  return x;
}

// Per-row softmax of each column of actor logits, same layout.
Eigen::MatrixXd rowwise_softmax(const Eigen::MatrixXd& logits, std::size_t n, std::size_t m) {
  Eigen::MatrixXd p(logits.rows(), logits.cols());
  for (Eigen::Index c = 0; c < logits.cols(); ++c) {
    for (std::size_t r = 0; r < n; ++r) {
      const auto seg = logits.col(c).segment(static_cast<Eigen::Index>(r * m),
                                             static_cast<Eigen::Index>(m));
      const double top = seg.maxCoeff();
      if (!std::isfinite(top)) throw PoisonError("actor produced non-finite logits");
      const Eigen::VectorXd e = (seg.array() - top).exp().matrix();
      p.col(c).segment(static_cast<Eigen::Index>(r * m), static_cast<Eigen::Index>(m)) =
          e / e.sum();
    }
  }
  return p;
}

std::vector<double> cdf_of_logits(std::span<const double> logits) {
  auto p = softmax(logits);
  double acc = 0.0;
  for (double& v : p) {
    acc += v;
    v = acc;
  }
  return p;
}

std::vector<double> flat_row(const ActionDistribution& a) { return a.flatten(); }

}  // namespace

CriticLoss critic_loss_and_grad(const Mlp& critic, const Eigen::MatrixXd& inputs,
                                const std::vector<ValueDistribution>& targets,
                                std::span<const double> weights) {
  const auto batch = inputs.cols();
  if (static_cast<std::size_t>(batch) != targets.size() || targets.size() != weights.size()) {
    throw InvalidInput("critic loss needs one target and one weight per input column");
  }
  MlpTape tape;
  const Eigen::MatrixXd logits = critic.forward(inputs, &tape);
  Eigen::MatrixXd out_grad(logits.rows(), batch);
  CriticLoss out;
  const double inv_b = 1.0 / static_cast<double>(batch);
  for (Eigen::Index c = 0; c < batch; ++c) {
    const auto t = static_cast<std::size_t>(c);
    const auto ce = cross_entropy_with_grad(targets[t], column(logits, c));
    out.loss += weights[t] * ce.loss * inv_b;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      out_grad(i, c) = weights[t] * ce.grad[static_cast<std::size_t>(i)] * inv_b;
    }
  }
  out.grad = critic.backward(tape, out_grad).params;
  return out;
}

ActorObjective actor_objective_and_grad(const Mlp& actor, const Mlp& critic1, const Mlp* critic2,
                                        const ActionSpaceSpec& action,
                                        const std::vector<std::vector<double>>& states,
                                        const ActorObjectiveParts& parts) {
  const bool merged = parts.policy_critic == PolicyCritic::merged;
  if (merged && critic2 == nullptr) throw InvalidInput("merged policy objective needs critic 2");
  const std::size_t n = action.n_dims;
  const std::size_t m = action.m_atoms;
  const Eigen::MatrixXd x = state_matrix(states);
  const auto sd = x.rows();
  const auto batch = x.cols();
  const double inv_b = 1.0 / static_cast<double>(batch);
  const double h_bar = action.max_entropy();

  MlpTape actor_tape;
  const Eigen::MatrixXd a_logits = actor.forward(x, &actor_tape);
  const Eigen::MatrixXd probs = rowwise_softmax(a_logits, n, m);
  Eigen::MatrixXd inputs(sd + probs.rows(), batch);
  inputs.topRows(sd) = x;
  inputs.bottomRows(probs.rows()) = probs;

  MlpTape tape1, tape2;
  const Eigen::MatrixXd l1 = critic1.forward(inputs, &tape1);
  Eigen::MatrixXd l2;
  if (merged) l2 = critic2->forward(inputs, &tape2);
  const auto n_atoms = static_cast<std::size_t>(l1.rows());

  Eigen::MatrixXd g1 = Eigen::MatrixXd::Zero(l1.rows(), batch);
  Eigen::MatrixXd g2;
  if (merged) g2 = Eigen::MatrixXd::Zero(l2.rows(), batch);
  Eigen::MatrixXd logit_grad = Eigen::MatrixXd::Zero(a_logits.rows(), batch);

  ActorObjective out;
  for (Eigen::Index c = 0; c < batch; ++c) {
    std::vector<double> rho;
    if (!merged) {
      const auto obj = complement_cdf_objective(column(l1, c), parts.epsilon);
      out.cdf_objective += obj.value * inv_b;
      for (std::size_t i = 0; i < n_atoms; ++i) {
        g1(static_cast<Eigen::Index>(i), c) = obj.grad[i] * inv_b;
      }
      rho = cdf_of_logits(column(l1, c));
    } else {
      const auto c1 = cdf_of_logits(column(l1, c));
      const auto c2 = cdf_of_logits(column(l2, c));
      rho.resize(n_atoms);
      for (std::size_t j = 0; j < n_atoms; ++j) rho[j] = std::max(c1[j], c2[j]);
      for (std::size_t j = 0; j + 1 < n_atoms; ++j) {
        const bool use2 = c2[j] > c1[j];
        const auto lc = use2 ? column(l2, c) : column(l1, c);
        out.cdf_objective += log_complement_cdf(lc, j, parts.epsilon) * inv_b;
        const auto g = log_complement_cdf_grad(lc, j, parts.epsilon);
        auto& gm = use2 ? g2 : g1;
        for (std::size_t i = 0; i < n_atoms; ++i) gm(static_cast<Eigen::Index>(i), c) += g[i] * inv_b;
      }
    }

    RowMatrix p_row = Eigen::Map<const RowMatrix>(probs.col(c).data(), static_cast<Eigen::Index>(n),
                                                  static_cast<Eigen::Index>(m));
    const ActionDistribution adist(n, m, std::move(p_row));
    const double h_val = entropy(adist);
    out.mean_entropy += h_val * inv_b;
    if (parts.entropy_term && entropy_gate(rho, parts.h, h_val, h_bar)) {
      out.gate_rate += inv_b;
      out.entropy_objective += h_val / h_bar * inv_b;
      const auto eg = entropy_grad_logits(adist);
      const double scale = parts.beta / h_bar * inv_b;
      for (std::size_t i = 0; i < eg.size(); ++i) {
        logit_grad(static_cast<Eigen::Index>(i), c) += scale * eg[i];
      }
    }
  }

  // Back through the critic(s) to the action-distribution inputs.
  Eigen::MatrixXd dp = critic1.backward(tape1, g1, true).input.bottomRows(probs.rows());
  if (merged) dp += critic2->backward(tape2, g2, true).input.bottomRows(probs.rows());

  // Per-row softmax Jacobian: dx_j = p_j (g_j - sum_k p_k g_k).
  for (Eigen::Index c = 0; c < batch; ++c) {
    for (std::size_t r = 0; r < n; ++r) {
      const auto off = static_cast<Eigen::Index>(r * m);
      const auto len = static_cast<Eigen::Index>(m);
      const auto p = probs.col(c).segment(off, len).array();
      const auto g = dp.col(c).segment(off, len).array();
      const double dot = (p * g).sum();
      logit_grad.col(c).segment(off, len).array() += p * (g - dot);
    }
  }
  out.grad = actor.backward(actor_tape, logit_grad).params;
  return out;
}

// ---------------------------------------------------------------------------
// Agent

namespace {

MlpSpec actor_spec(const AgentConfig& c) {
  MlpSpec s;
  s.input_dim = c.state_dim;
  s.hidden = c.actor_hidden;
  s.output_dim = c.action.n_dims * c.action.m_atoms;
  s.init_seed = derive_seed(c.seed, Stream::init, 0);
  s.zero_output_layer = true;
  return s;
}

MlpSpec critic_spec(const AgentConfig& c, std::uint64_t index) {
  MlpSpec s;
  s.input_dim = c.state_dim + c.action.n_dims * c.action.m_atoms;
  s.hidden = c.critic_hidden;
  s.output_dim = c.n_value_atoms;
  s.init_seed = derive_seed(c.seed, Stream::init, index);
  return s;
}

AdamConfig adam_for(const AgentConfig& c) {
  AdamConfig a;
  a.learning_rate = c.learning_rate;
  return a;
}

}  // namespace

Agent::Agent(AgentConfig config)
    : config_((config.validate(), std::move(config))),
      support_(config_.support()),
      actor_(actor_spec(config_)),
      actor_target_(actor_),
      critic1_(critic_spec(config_, 1)),
      critic2_(critic_spec(config_, 2)),
      critic1_target_(critic1_),
      critic2_target_(critic2_),
      actor_opt_(OptimizerState::for_parameters(actor_.params(), adam_for(config_))),
      critic1_opt_(OptimizerState::for_parameters(critic1_.params(), adam_for(config_))),
      critic2_opt_(OptimizerState::for_parameters(critic2_.params(), adam_for(config_))),
      buffer_(config_.buffer_capacity) {}

ActionDistribution Agent::policy(std::span<const double> x) const {
  if (x.size() != config_.state_dim) throw InvalidInput("state has the wrong dimension");
  const auto logits = actor_.forward(x);
  return ActionDistribution::from_logits(config_.action.n_dims, config_.action.m_atoms, logits);
}

ActResult Agent::act(std::span<const double> x, ActMode mode, Rng& rng) const {
  auto adist = policy(x);
  if (mode == ActMode::eval) {
    auto a = config_.eval_policy == EvalPolicy::argmax ? argmax_action(adist)
                                                       : sample(adist, rng).action;
    return ActResult{std::move(a), adist, flat_row(adist)};
  }
  if (config_.exploration == Exploration::epsilon_uniform && config_.noise_rate > 0.0) {
    const double u = 1.0 / static_cast<double>(config_.action.m_atoms);
    RowMatrix mixed = (1.0 - config_.noise_rate) * adist.probs().array() + config_.noise_rate * u;
    const ActionDistribution behavior(config_.action.n_dims, config_.action.m_atoms, mixed);
    auto a = sample(behavior, rng).action;
    return ActResult{std::move(a), adist, flat_row(behavior)};
  }
  auto a = sample(adist, rng).action;
  auto behavior = flat_row(adist);
  return ActResult{std::move(a), std::move(adist), std::move(behavior)};
}

void Agent::observe(Transition t) {
  if (t.x.size() != config_.state_dim || t.x_next.size() != config_.state_dim) {
    throw InvalidInput("transition state has the wrong dimension");
  }
  if (t.action.indices.size() != config_.action.n_dims) {
    throw InvalidInput("transition action has the wrong dimension");
  }
  if (!std::isfinite(t.r)) throw InvalidInput("transition reward is not finite");
  buffer_.push(std::move(t));
}

std::vector<std::vector<double>> Agent::policy_rows(const std::vector<const Transition*>& batch,
                                                    bool next_state, bool target) const {
  std::vector<std::vector<double>> states;
  states.reserve(batch.size());
  for (const auto* t : batch) states.push_back(next_state ? t->x_next : t->x);
  const Eigen::MatrixXd x = state_matrix(states);
  const Mlp& net = target ? actor_target_ : actor_;
  const Eigen::MatrixXd p =
      rowwise_softmax(net.forward(x), config_.action.n_dims, config_.action.m_atoms);
  std::vector<std::vector<double>> out(batch.size());
  for (Eigen::Index c = 0; c < p.cols(); ++c) {
    out[static_cast<std::size_t>(c)].assign(p.col(c).data(), p.col(c).data() + p.rows());
  }
  return out;
}

std::vector<ValueDistribution> Agent::build_target(
    const std::vector<const Transition*>& batch) const {
  if (batch.empty()) throw InvalidInput("cannot build targets for an empty batch");
  std::vector<std::vector<double>> next_states;
  for (const auto* t : batch) next_states.push_back(t->x_next);
  const auto next_policy = policy_rows(batch, true, true);
  const Eigen::MatrixXd inputs = critic_inputs(next_states, next_policy);
  const Eigen::MatrixXd l1 = critic1_target_.forward(inputs);
  Eigen::MatrixXd l2;
  if (config_.twin_critics) l2 = critic2_target_.forward(inputs);

  std::vector<ValueDistribution> out;
  out.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto c = static_cast<Eigen::Index>(i);
    auto z = softmax_dist(column(l1, c), support_);
    if (config_.twin_critics) z = clipped_merge(z, softmax_dist(column(l2, c), support_));
    const double g = batch[i]->done ? 0.0 : config_.gamma;
    out.push_back(bellman_project(z, batch[i]->r, g, support_));
  }
  return out;
}

std::pair<double, double> Agent::critic_update(const std::vector<const Transition*>& batch,
                                               const std::vector<ValueDistribution>& targets) {
  std::vector<std::vector<double>> states;
  for (const auto* t : batch) states.push_back(t->x);
  std::vector<std::vector<double>> adists;
  if (config_.critic_input == CriticInputSource::recomputed) {
    adists = policy_rows(batch, false, false);
  } else {
    for (const auto* t : batch) {
      if (t->behavior.size() != config_.action.n_dims * config_.action.m_atoms) {
        throw InvalidInput("stored-policy mode needs behaviour distributions in the buffer");
      }
      adists.push_back(t->behavior);
    }
  }
  const std::size_t m = config_.action.m_atoms;
  std::vector<double> log_w(batch.size(), 0.0);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    for (std::size_t r = 0; r < config_.action.n_dims; ++r) {
      log_w[i] += std::log(adists[i][r * m + batch[i]->action.indices[r]]);
    }
  }
  const auto weights = critic_weights(log_w, config_.weight_mode);
  const Eigen::MatrixXd inputs = critic_inputs(states, adists);

  const auto c1 = critic_loss_and_grad(critic1_, inputs, targets, weights);
  if (!std::isfinite(c1.loss)) throw PoisonError("critic 1 loss is not finite");
  double loss2 = 0.0;
  if (config_.twin_critics) {
    const auto c2 = critic_loss_and_grad(critic2_, inputs, targets, weights);
    if (!std::isfinite(c2.loss)) throw PoisonError("critic 2 loss is not finite");
    optimizer_step(critic2_opt_, critic2_.params(), c2.grad);
    loss2 = c2.loss;
  }
  optimizer_step(critic1_opt_, critic1_.params(), c1.grad);
  return {c1.loss, loss2};
}

ActorObjective Agent::actor_update(const std::vector<const Transition*>& batch) {
  std::vector<std::vector<double>> states;
  for (const auto* t : batch) states.push_back(t->x);
  ActorObjectiveParts parts;
  parts.beta = config_.beta;
  parts.h = config_.h;
  parts.epsilon = config_.epsilon;
  parts.policy_critic = config_.twin_critics ? config_.policy_critic : PolicyCritic::critic1;
  parts.entropy_term = config_.exploration == Exploration::entropy_gate;
  auto obj = actor_objective_and_grad(actor_, critic1_, &critic2_, config_.action, states, parts);
  if (!std::isfinite(obj.cdf_objective) || !std::isfinite(obj.entropy_objective)) {
    throw PoisonError("actor objective is not finite");
  }
  optimizer_step(actor_opt_, actor_.params(), -obj.grad);
  return obj;
}

void Agent::update_targets() {
  target_update(actor_target_.params(), actor_.params(), config_.tau);
  target_update(critic1_target_.params(), critic1_.params(), config_.tau);
  target_update(critic2_target_.params(), critic2_.params(), config_.tau);
}

TrainMetrics Agent::train_step(Rng& rng) {
  TrainMetrics metrics;
  const std::size_t stored = buffer_.size();
  if (stored == 0 || stored < config_.warmup_steps) return metrics;
  const auto idx = buffer_.sample_indices(config_.batch_size, rng);
  std::vector<const Transition*> batch;
  batch.reserve(idx.size());
  for (auto i : idx) batch.push_back(&buffer_.at(i));

  const auto targets = build_target(batch);
  const auto [l1, l2] = critic_update(batch, targets);
  const auto obj = actor_update(batch);
  update_targets();

  metrics.skipped = false;
  metrics.critic1_loss = l1;
  metrics.critic2_loss = l2;
  metrics.actor_objective = obj.cdf_objective + config_.beta * obj.entropy_objective;
  metrics.mean_entropy = obj.mean_entropy;
  metrics.gate_rate = obj.gate_rate;
  double e = 0.0;
  for (const auto& t : targets) e += expectation(t);
  metrics.mean_target_expectation = e / static_cast<double>(targets.size());
  return metrics;
}

Checkpoint Agent::to_checkpoint(std::string metadata_json) const {
  Checkpoint ckpt;
  ckpt.metadata_json = std::move(metadata_json);
  ckpt.networks.push_back({"actor", actor_.spec(), actor_.params(), actor_opt_});
  ckpt.networks.push_back({"actor_target", actor_target_.spec(), actor_target_.params(), {}});
  ckpt.networks.push_back({"critic1", critic1_.spec(), critic1_.params(), critic1_opt_});
  ckpt.networks.push_back({"critic2", critic2_.spec(), critic2_.params(), critic2_opt_});
  ckpt.networks.push_back({"critic1_target", critic1_target_.spec(), critic1_target_.params(), {}});
  ckpt.networks.push_back({"critic2_target", critic2_target_.spec(), critic2_target_.params(), {}});
  return ckpt;
}

void Agent::restore(const Checkpoint& ckpt) {
  auto load = [&](const std::string& name, Mlp& net, OptimizerState* opt) {
    const auto& rec = ckpt.network(name);
    if (!(rec.spec == net.spec())) {
      throw InvalidInput("checkpoint network '" + name + "' does not match the agent config");
    }
    net = Mlp(rec.spec, rec.params);
    if (opt != nullptr && rec.optimizer) *opt = *rec.optimizer;
  };
  load("actor", actor_, &actor_opt_);
  load("actor_target", actor_target_, nullptr);
  load("critic1", critic1_, &critic1_opt_);
  load("critic2", critic2_, &critic2_opt_);
  load("critic1_target", critic1_target_, nullptr);
  load("critic2_target", critic2_target_, nullptr);
}

}  // namespace d2c
