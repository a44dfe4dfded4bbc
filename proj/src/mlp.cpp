#include "d2c/mlp.hpp"

#include <cmath>
#include <random>
#include <string>

#include "d2c/errors.hpp"

namespace d2c {

void MlpSpec::validate() const {
  if (input_dim < 1 || output_dim < 1) throw InvalidInput("MLP dimensions must be >= 1");
  for (std::size_t w : hidden) {
    if (w < 1) throw InvalidInput("MLP hidden widths must be >= 1");
  }
}

std::size_t MlpSpec::layer_in(std::size_t l) const { return l == 0 ? input_dim : hidden[l - 1]; }

std::size_t MlpSpec::layer_out(std::size_t l) const {
  return l == hidden.size() ? output_dim : hidden[l];
}

std::size_t MlpSpec::parameter_count() const {
  std::size_t total = 0;
  for (std::size_t l = 0; l < layer_count(); ++l) total += (layer_in(l) + 1) * layer_out(l);
  return total;
}

ParameterSet init_parameters(const MlpSpec& spec) {
  spec.validate();
  ParameterSet out;
  out.values = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec.parameter_count()));
  std::mt19937_64 rng(spec.init_seed);
  std::size_t pos = 0;
  for (std::size_t l = 0; l < spec.layer_count(); ++l) {
    const std::size_t in = spec.layer_in(l);
    const std::size_t out_dim = spec.layer_out(l);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    const bool zero = spec.zero_output_layer && l + 1 == spec.layer_count();
    for (std::size_t i = 0; i < in * out_dim; ++i) {
      const double w = dist(rng);
      out.values[static_cast<Eigen::Index>(pos + i)] = zero ? 0.0 : w;
    }
    pos += in * out_dim + out_dim;
  }
  return out;
}

Mlp::Mlp(MlpSpec spec) : Mlp(spec, init_parameters(spec)) {}

Mlp::Mlp(MlpSpec spec, ParameterSet params) : spec_(std::move(spec)), params_(std::move(params)) {
  spec_.validate();
  if (params_.size() != spec_.parameter_count()) {
    throw InvalidInput("parameter count " + std::to_string(params_.size()) +
                       " does not match MLP spec (" + std::to_string(spec_.parameter_count()) +
                       ")");
  }
  std::size_t pos = 0;
  for (std::size_t l = 0; l < spec_.layer_count(); ++l) {
    offsets_.push_back(pos);
    pos += (spec_.layer_in(l) + 1) * spec_.layer_out(l);
  }
}

Mlp::ConstMap Mlp::weights(std::size_t l) const {
  return ConstMap(params_.values.data() + offset(l), static_cast<Eigen::Index>(spec_.layer_out(l)),
                  static_cast<Eigen::Index>(spec_.layer_in(l)));
}

Eigen::Map<const Eigen::VectorXd> Mlp::bias(std::size_t l) const {
  const std::size_t w = spec_.layer_in(l) * spec_.layer_out(l);
  return Eigen::Map<const Eigen::VectorXd>(params_.values.data() + offset(l) + w,
                                           static_cast<Eigen::Index>(spec_.layer_out(l)));
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& inputs, MlpTape* tape) const {
  if (static_cast<std::size_t>(inputs.rows()) != spec_.input_dim) {
    throw InvalidInput("MLP input has " + std::to_string(inputs.rows()) + " rows, expected " +
                       std::to_string(spec_.input_dim));
  }
  if (tape) {
    tape->layer_inputs.clear();
    tape->pre_activations.clear();
  }
  Eigen::MatrixXd h = inputs;
  for (std::size_t l = 0; l < spec_.layer_count(); ++l) {
    Eigen::MatrixXd z = weights(l) * h;
    z.colwise() += bias(l);
    if (tape) tape->layer_inputs.push_back(std::move(h));
    if (l + 1 == spec_.layer_count()) return z;
    if (tape) tape->pre_activations.push_back(z);
    if (spec_.activation == Activation::relu) {
      h = z.cwiseMax(0.0);
    } else {
      h = z.array().tanh().matrix();
    }
  }
  return h;  // unreachable: layer_count() >= 1
}

MlpGradients Mlp::backward(const MlpTape& tape, const Eigen::MatrixXd& output_grad,
                           bool want_input_grad) const {
  const std::size_t layers = spec_.layer_count();
  if (tape.layer_inputs.size() != layers || tape.pre_activations.size() + 1 != layers) {
    throw InvalidInput("MLP tape does not match the network");
  }
  if (static_cast<std::size_t>(output_grad.rows()) != spec_.output_dim ||
      output_grad.cols() != tape.layer_inputs[0].cols()) {
    throw InvalidInput("MLP output gradient has the wrong shape");
  }
  MlpGradients out;
  out.params = Eigen::VectorXd::Zero(params_.values.size());
  Eigen::MatrixXd delta = output_grad;
  for (std::size_t l = layers; l-- > 0;) {
    const auto in = static_cast<Eigen::Index>(spec_.layer_in(l));
    const auto od = static_cast<Eigen::Index>(spec_.layer_out(l));
    Eigen::Map<Eigen::MatrixXd> gw(out.params.data() + offset(l), od, in);
    Eigen::Map<Eigen::VectorXd> gb(out.params.data() + offset(l) + od * in, od);
    gw.noalias() = delta * tape.layer_inputs[l].transpose();
    gb = delta.rowwise().sum();
    if (l == 0 && !want_input_grad) break;
    Eigen::MatrixXd upstream = weights(l).transpose() * delta;
    if (l == 0) {
      out.input = std::move(upstream);
      break;
    }
    const Eigen::MatrixXd& z = tape.pre_activations[l - 1];
    if (spec_.activation == Activation::relu) {
      delta = (z.array() > 0.0).select(upstream, 0.0);
    } else {
      const Eigen::ArrayXXd t = z.array().tanh();
      delta = (upstream.array() * (1.0 - t * t)).matrix();
    }
  }
  return out;
}

std::vector<double> Mlp::forward(std::span<const double> input) const {
  Eigen::MatrixXd x = Eigen::Map<const Eigen::MatrixXd>(input.data(),
                                                        static_cast<Eigen::Index>(input.size()), 1);
  const Eigen::MatrixXd y = forward(x);
  return std::vector<double>(y.data(), y.data() + y.size());
}

MlpGradients Mlp::backward(std::span<const double> input,
                           std::span<const double> output_grad) const {
  Eigen::MatrixXd x = Eigen::Map<const Eigen::MatrixXd>(input.data(),
                                                        static_cast<Eigen::Index>(input.size()), 1);
  if (output_grad.size() != spec_.output_dim) {
    throw InvalidInput("MLP output gradient has the wrong length");
  }
  MlpTape tape;
  forward(x, &tape);
  Eigen::MatrixXd g = Eigen::Map<const Eigen::MatrixXd>(
      output_grad.data(), static_cast<Eigen::Index>(output_grad.size()), 1);
  return backward(tape, g, true);
}

OptimizerState OptimizerState::for_parameters(const ParameterSet& params, AdamConfig config) {
  OptimizerState s;
  s.config = config;
  s.first_moment = Eigen::VectorXd::Zero(params.values.size());
  s.second_moment = Eigen::VectorXd::Zero(params.values.size());
  return s;
}

void optimizer_step(OptimizerState& state, ParameterSet& params, const Eigen::VectorXd& grads) {
  if (grads.size() != params.values.size() || state.first_moment.size() != grads.size() ||
      state.second_moment.size() != grads.size()) {
    throw InvalidInput("optimizer state, parameters and gradient differ in size");
  }
  if (!grads.allFinite()) throw PoisonError("non-finite gradient passed to the optimizer");
  const auto& c = state.config;
  state.step += 1;
  state.first_moment = c.beta1 * state.first_moment + (1.0 - c.beta1) * grads;
  state.second_moment =
      c.beta2 * state.second_moment + (1.0 - c.beta2) * grads.cwiseProduct(grads);
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  const double step_size = c.learning_rate / bc1;
  params.values.array() -= step_size * state.first_moment.array() /
                           ((state.second_moment.array() / bc2).sqrt() + c.epsilon);
  if (!params.all_finite()) throw PoisonError("optimizer produced non-finite parameters");
}

void target_update(ParameterSet& target, const ParameterSet& online, double tau) {
  if (target.values.size() != online.values.size()) {
    throw InvalidInput("target and online parameter sets differ in size");
  }
  if (!(tau > 0.0 && tau <= 1.0)) throw InvalidInput("target update tau must lie in (0, 1]");
  if (tau == 1.0) {
    target.values = online.values;
    return;
  }
  target.values = (1.0 - tau) * target.values + tau * online.values;
}

}  // namespace d2c
