#include "d2c/normal_actor.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "d2c/errors.hpp"

namespace d2c {

namespace {

MlpSpec continuous_actor_spec(const AgentConfig& c) {
  MlpSpec s;
  s.input_dim = c.state_dim;
  s.hidden = c.actor_hidden;
  s.output_dim = c.action.n_dims;
  s.init_seed = derive_seed(c.seed, Stream::init, 10);
  s.zero_output_layer = true;
  return s;
}

MlpSpec continuous_critic_spec(const AgentConfig& c, std::uint64_t index) {
  MlpSpec s;
  s.input_dim = c.state_dim + c.action.n_dims;
  s.hidden = c.critic_hidden;
  s.output_dim = c.n_value_atoms;
  s.init_seed = derive_seed(c.seed, Stream::init, 10 + index);
  return s;
}

AdamConfig adam(const AgentConfig& c) {
  AdamConfig a;
  a.learning_rate = c.learning_rate;
  return a;
}

std::span<const double> col(const Eigen::MatrixXd& m, Eigen::Index c) {
  return {m.data() + c * m.rows(), static_cast<std::size_t>(m.rows())};
}

}  // namespace

NormalActorAgent::NormalActorAgent(AgentConfig config)
    : config_((config.validate(), std::move(config))),
      support_(config_.support()),
      actor_(continuous_actor_spec(config_)),
      actor_target_(actor_),
      critic1_(continuous_critic_spec(config_, 1)),
      critic2_(continuous_critic_spec(config_, 2)),
      critic1_target_(critic1_),
      critic2_target_(critic2_),
      actor_opt_(OptimizerState::for_parameters(actor_.params(), adam(config_))),
      critic1_opt_(OptimizerState::for_parameters(critic1_.params(), adam(config_))),
      critic2_opt_(OptimizerState::for_parameters(critic2_.params(), adam(config_))) {}

std::vector<double> NormalActorAgent::mean_action(std::span<const double> x) const {
  if (x.size() != config_.state_dim) throw InvalidInput("state has the wrong dimension");
  const auto y = actor_.forward(x);
  std::vector<double> a(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double mid = 0.5 * (config_.action.low[i] + config_.action.high[i]);
    const double half = 0.5 * (config_.action.high[i] - config_.action.low[i]);
    a[i] = mid + half * std::tanh(y[i]);
  }
  return a;
}

std::vector<double> NormalActorAgent::act(std::span<const double> x, ActMode mode,
                                          Rng& rng) const {
  auto a = mean_action(x);
  if (mode == ActMode::eval) return a;
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double half = 0.5 * (config_.action.high[i] - config_.action.low[i]);
    a[i] = std::clamp(a[i] + config_.noise_rate * half * normal(rng), config_.action.low[i],
                      config_.action.high[i]);
  }
  return a;
}

void NormalActorAgent::observe(ContinuousTransition t) {
  if (t.x.size() != config_.state_dim || t.x_next.size() != config_.state_dim ||
      t.action.size() != config_.action.n_dims) {
    throw InvalidInput("transition has the wrong dimensions");
  }
  if (items_.size() < config_.buffer_capacity) {
    items_.push_back(std::move(t));
  } else {
    items_[inserted_ % config_.buffer_capacity] = std::move(t);
  }
  ++inserted_;
}

Eigen::MatrixXd NormalActorAgent::scaled_actions(const Eigen::MatrixXd& raw) const {
  Eigen::MatrixXd s(raw.rows(), raw.cols());
  for (Eigen::Index i = 0; i < raw.rows(); ++i) {
    const auto d = static_cast<std::size_t>(i);
    const double mid = 0.5 * (config_.action.low[d] + config_.action.high[d]);
    const double half = 0.5 * (config_.action.high[d] - config_.action.low[d]);
    s.row(i) = ((raw.row(i).array() - mid) / half).cwiseMax(-1.0).cwiseMin(1.0).matrix();
  }
  return s;
}

TrainMetrics NormalActorAgent::train_step(Rng& rng) {
  TrainMetrics metrics;
  if (items_.empty() || items_.size() < config_.warmup_steps) return metrics;
  std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
  const std::size_t b = config_.batch_size;
  const auto sd = static_cast<Eigen::Index>(config_.state_dim);
  const auto ad = static_cast<Eigen::Index>(config_.action.n_dims);
  const auto bb = static_cast<Eigen::Index>(b);
  Eigen::MatrixXd x(sd, bb), xn(sd, bb), a_raw(ad, bb);
  std::vector<const ContinuousTransition*> batch(b);
  for (std::size_t k = 0; k < b; ++k) {
    batch[k] = &items_[pick(rng)];
    const auto c = static_cast<Eigen::Index>(k);
    for (Eigen::Index i = 0; i < sd; ++i) {
      x(i, c) = batch[k]->x[static_cast<std::size_t>(i)];
      xn(i, c) = batch[k]->x_next[static_cast<std::size_t>(i)];
    }
    for (Eigen::Index i = 0; i < ad; ++i) a_raw(i, c) = batch[k]->action[static_cast<std::size_t>(i)];
  }

  // Targets.
  Eigen::MatrixXd next_in(sd + ad, bb);
  next_in.topRows(sd) = xn;
  next_in.bottomRows(ad) = actor_target_.forward(xn).array().tanh().matrix();
  const Eigen::MatrixXd t1 = critic1_target_.forward(next_in);
  Eigen::MatrixXd t2;
  if (config_.twin_critics) t2 = critic2_target_.forward(next_in);
  std::vector<ValueDistribution> targets;
  double target_e = 0.0;
  for (Eigen::Index c = 0; c < bb; ++c) {
    auto z = softmax_dist(col(t1, c), support_);
    if (config_.twin_critics) z = clipped_merge(z, softmax_dist(col(t2, c), support_));
    const double g = batch[static_cast<std::size_t>(c)]->done ? 0.0 : config_.gamma;
    targets.push_back(bellman_project(z, batch[static_cast<std::size_t>(c)]->r, g, support_));
    target_e += expectation(targets.back());
  }

  // Critics.
  Eigen::MatrixXd in(sd + ad, bb);
  in.topRows(sd) = x;
  in.bottomRows(ad) = scaled_actions(a_raw);
  const std::vector<double> ones(b, 1.0);
  const auto c1 = critic_loss_and_grad(critic1_, in, targets, ones);
  if (!std::isfinite(c1.loss)) throw PoisonError("critic 1 loss is not finite");
  optimizer_step(critic1_opt_, critic1_.params(), c1.grad);
  double loss2 = 0.0;
  if (config_.twin_critics) {
    const auto c2 = critic_loss_and_grad(critic2_, in, targets, ones);
    if (!std::isfinite(c2.loss)) throw PoisonError("critic 2 loss is not finite");
    optimizer_step(critic2_opt_, critic2_.params(), c2.grad);
    loss2 = c2.loss;
  }

  // Actor: ascend the complement-CDF objective through critic 1.
  MlpTape actor_tape, critic_tape;
  const Eigen::MatrixXd y = actor_.forward(x, &actor_tape);
  const Eigen::MatrixXd s = y.array().tanh().matrix();
  Eigen::MatrixXd pin(sd + ad, bb);
  pin.topRows(sd) = x;
  pin.bottomRows(ad) = s;
  const Eigen::MatrixXd logits = critic1_.forward(pin, &critic_tape);
  Eigen::MatrixXd g(logits.rows(), bb);
  double objective = 0.0;
  const double inv_b = 1.0 / static_cast<double>(b);
  for (Eigen::Index c = 0; c < bb; ++c) {
    const auto o = complement_cdf_objective(col(logits, c), config_.epsilon);
    objective += o.value * inv_b;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) g(i, c) = o.grad[static_cast<std::size_t>(i)] * inv_b;
  }
  if (!std::isfinite(objective)) throw PoisonError("actor objective is not finite");
  const Eigen::MatrixXd ds = critic1_.backward(critic_tape, g, true).input.bottomRows(ad);
  const Eigen::MatrixXd dy = (ds.array() * (1.0 - s.array().square())).matrix();
  const Eigen::VectorXd grad = actor_.backward(actor_tape, dy).params;
  optimizer_step(actor_opt_, actor_.params(), -grad);

  target_update(actor_target_.params(), actor_.params(), config_.tau);
  target_update(critic1_target_.params(), critic1_.params(), config_.tau);
  target_update(critic2_target_.params(), critic2_.params(), config_.tau);

  metrics.skipped = false;
  metrics.critic1_loss = c1.loss;
  metrics.critic2_loss = loss2;
  metrics.actor_objective = objective;
  metrics.mean_target_expectation = target_e * inv_b;
  return metrics;
}

Checkpoint NormalActorAgent::to_checkpoint(std::string metadata_json) const {
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

void NormalActorAgent::restore(const Checkpoint& ckpt) {
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
