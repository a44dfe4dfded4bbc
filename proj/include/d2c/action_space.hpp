#pragma once

// Discretised n-dimensional action space. Each dimension is split into m
// evenly spaced atoms including both endpoints; an action distribution is an
// n x m row-stochastic matrix and a sample picks one atom per row.
//
// Atom indices are 0-based.

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "d2c/random.hpp"

namespace d2c {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ActionSpaceSpec {
  std::size_t n_dims = 1;
  std::size_t m_atoms = 51;
  std::vector<double> low;
  std::vector<double> high;

  /// Throws InvalidInput when n < 1, m < 2, or some low[i] >= high[i].
  void validate() const;

  /// Continuous value of atom `index` in dimension `dim`.
  double atom_value(std::size_t dim, std::size_t index) const;

  /// log(m) * n, the entropy of uniform rows.
  double max_entropy() const;

  bool operator==(const ActionSpaceSpec&) const = default;
};

class ActionDistribution {
 public:
  /// Validates shape, non-negativity and unit row sums (tolerance 1e-9).
  ActionDistribution(std::size_t n_dims, std::size_t m_atoms, RowMatrix probs);

  /// Row-wise softmax of an n*m logit vector laid out row-major.
  static ActionDistribution from_logits(std::size_t n_dims, std::size_t m_atoms,
                                        std::span<const double> logits);
  static ActionDistribution uniform(std::size_t n_dims, std::size_t m_atoms);

  std::size_t n_dims() const noexcept { return static_cast<std::size_t>(probs_.rows()); }
  std::size_t m_atoms() const noexcept { return static_cast<std::size_t>(probs_.cols()); }
  const RowMatrix& probs() const noexcept { return probs_; }
  double operator()(std::size_t row, std::size_t col) const { return probs_(row, col); }

  /// Row-major flattening, the layout fed to the critics.
  std::vector<double> flatten() const;

 private:
  RowMatrix probs_;
};

struct ActionSample {
  std::vector<std::size_t> indices;

  /// n x m one-hot matrix form.
  RowMatrix one_hot(std::size_t m_atoms) const;

  bool operator==(const ActionSample&) const = default;
};

struct SampledAction {
  ActionSample action;
  double log_prob = 0.0;  // log P(A | A_hat)
};

/// Draws one atom per row independently.
SampledAction sample(const ActionDistribution& adist, Rng& rng);

/// sum_i log probs[i, indices[i]]; -inf when some entry is zero.
double log_prob(const ActionDistribution& adist, const ActionSample& action);

/// Per-row argmax; ties go to the lowest index.
ActionSample argmax_action(const ActionDistribution& adist);

/// Continuous actuator values for a sample.
std::vector<double> decode(const ActionSpaceSpec& spec, const ActionSample& action);

/// -sum p log p over all entries, with 0 log 0 = 0.
double entropy(const ActionDistribution& adist);

/// Gradient of entropy() with respect to the row-major logits that produced
/// `adist` through a per-row softmax.
std::vector<double> entropy_grad_logits(const ActionDistribution& adist);

}  // namespace d2c
