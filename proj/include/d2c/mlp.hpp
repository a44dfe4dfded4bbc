#pragma once

// Multi-layer perceptrons with hand-written reverse-mode gradients, an Adam
// optimizer and Polyak target tracking.
//
// Parameters live in one flat vector. Layer l contributes its weight matrix
// (out x in, column-major) followed by its bias (out). Batches are passed as
// matrices with one sample per column.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace d2c {

enum class Activation : std::uint8_t { relu = 0, tanh = 1 };

struct MlpSpec {
  std::size_t input_dim = 1;
  std::vector<std::size_t> hidden = {256, 256};
  std::size_t output_dim = 1;
  Activation activation = Activation::relu;
  std::uint64_t init_seed = 0;
  /// Initialise the last layer to zero (the actor starts at uniform rows).
  bool zero_output_layer = false;

  void validate() const;
  std::size_t layer_count() const noexcept { return hidden.size() + 1; }
  std::size_t layer_in(std::size_t l) const;
  std::size_t layer_out(std::size_t l) const;
  std::size_t parameter_count() const;

  bool operator==(const MlpSpec&) const = default;
};

struct ParameterSet {
  Eigen::VectorXd values;

  std::size_t size() const noexcept { return static_cast<std::size_t>(values.size()); }
  bool all_finite() const { return values.allFinite(); }
};

/// Fan-in scaled uniform initialisation U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
/// biases zero, driven by spec.init_seed.
ParameterSet init_parameters(const MlpSpec& spec);

/// Intermediate values recorded by forward() for backward().
struct MlpTape {
  std::vector<Eigen::MatrixXd> layer_inputs;  // input to each layer
  std::vector<Eigen::MatrixXd> pre_activations;  // hidden layers only
};

struct MlpGradients {
  Eigen::VectorXd params;
  Eigen::MatrixXd input;  // empty unless requested
};

class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(MlpSpec spec);
  Mlp(MlpSpec spec, ParameterSet params);

  const MlpSpec& spec() const noexcept { return spec_; }
  const ParameterSet& params() const noexcept { return params_; }
  ParameterSet& params() noexcept { return params_; }

  /// inputs: input_dim x batch. Returns output_dim x batch.
  Eigen::MatrixXd forward(const Eigen::MatrixXd& inputs, MlpTape* tape = nullptr) const;

  /// Reverse pass for d loss / d outputs (output_dim x batch). Parameter
  /// gradients are summed over the batch.
  MlpGradients backward(const MlpTape& tape, const Eigen::MatrixXd& output_grad,
                        bool want_input_grad = false) const;

  std::vector<double> forward(std::span<const double> input) const;
  MlpGradients backward(std::span<const double> input, std::span<const double> output_grad) const;

 private:
  using ConstMap = Eigen::Map<const Eigen::MatrixXd>;
  ConstMap weights(std::size_t l) const;
  Eigen::Map<const Eigen::VectorXd> bias(std::size_t l) const;
  std::size_t offset(std::size_t l) const { return offsets_[l]; }

  MlpSpec spec_;
  ParameterSet params_;
  std::vector<std::size_t> offsets_;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  bool operator==(const AdamConfig&) const = default;
};

struct OptimizerState {
  AdamConfig config;
  Eigen::VectorXd first_moment;
  Eigen::VectorXd second_moment;
  std::uint64_t step = 0;

  static OptimizerState for_parameters(const ParameterSet& params, AdamConfig config);
};

/// One Adam descent step. Throws PoisonError on a non-finite gradient; the
/// parameters and state are left untouched in that case.
void optimizer_step(OptimizerState& state, ParameterSet& params, const Eigen::VectorXd& grads);

/// target <- (1 - tau) target + tau online, tau in (0, 1]; tau = 1 copies.
void target_update(ParameterSet& target, const ParameterSet& online, double tau);

}  // namespace d2c
