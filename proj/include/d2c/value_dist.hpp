#pragma once

// Categorical value distributions on a fixed, evenly spaced return support,
// plus the log-domain primitives used by the critic and policy losses.
//
// Atom indices are 0-based throughout: atom(0) == v_min, atom(N-1) == v_max.

#include <cstddef>
#include <span>
#include <vector>

namespace d2c {

class ValueSupport {
 public:
  ValueSupport(double v_min, double v_max, std::size_t n_atoms);

  double v_min() const noexcept { return v_min_; }
  double v_max() const noexcept { return v_max_; }
  std::size_t size() const noexcept { return n_atoms_; }
  double delta_z() const noexcept { return delta_z_; }

  double atom(std::size_t i) const noexcept {
    return v_min_ + static_cast<double>(i) * delta_z_;
  }
  std::vector<double> atoms() const;

  bool operator==(const ValueSupport&) const = default;

 private:
  double v_min_;
  double v_max_;
  std::size_t n_atoms_;
  double delta_z_;
};

/// Probability vector over the atoms of a ValueSupport.
class ValueDistribution {
 public:
  /// Validates non-negativity and unit mass (tolerance 1e-9). Tiny negative
  /// round-off (> -1e-12) is clamped to zero.
  ValueDistribution(ValueSupport support, std::vector<double> probs);

  /// Point mass on atom `i`.
  static ValueDistribution point_mass(const ValueSupport& support, std::size_t i);
  static ValueDistribution uniform(const ValueSupport& support);

  const ValueSupport& support() const noexcept { return support_; }
  std::span<const double> probs() const noexcept { return probs_; }
  double operator[](std::size_t i) const noexcept { return probs_[i]; }
  std::size_t size() const noexcept { return probs_.size(); }

  /// Cumulative probabilities; the last entry is 1 up to round-off. A merged
  /// distribution returns the CDF it was defined by.
  std::vector<double> cdf() const;

  /// Compares supports and probabilities.
  bool operator==(const ValueDistribution& o) const {
    return support_ == o.support_ && probs_ == o.probs_;
  }

 private:
  friend ValueDistribution clipped_merge(const ValueDistribution&, const ValueDistribution&);

  ValueSupport support_;
  std::vector<double> probs_;
  // Set by clipped_merge. Prefix sums of probs_ can miss it by an ulp when an
  // increment is not representable.
  std::vector<double> cdf_;
};

// ---------------------------------------------------------------------------
// Log-domain primitives

/// max + log(sum(exp(x - max))). Throws InvalidInput on an empty input.
double log_sum_exp(std::span<const double> xs);

std::vector<double> softmax(std::span<const double> logits);
std::vector<double> log_softmax(std::span<const double> logits);

/// log(1 - (1 - epsilon) * rho_k), where rho_k is the softmax mass on atoms
/// 0..k. Evaluated as the difference of two log-sum-exps, so it never takes
/// the log of a computed near-zero difference. epsilon must be in [0, 1).
double log_complement_cdf(std::span<const double> logits, std::size_t k,
                          double epsilon);

/// Gradient of log_complement_cdf with respect to the logits.
std::vector<double> log_complement_cdf_grad(std::span<const double> logits,
                                            std::size_t k, double epsilon);

struct ObjectiveWithGrad {
  double value = 0.0;
  std::vector<double> grad;
};

/// sum_{k=0}^{N-2} log_complement_cdf(logits, k, epsilon) and its gradient,
/// in O(N) for epsilon > 0. The k = N-1 term is the constant log(epsilon) and
/// is excluded.
ObjectiveWithGrad complement_cdf_objective(std::span<const double> logits,
                                           double epsilon);

// ---------------------------------------------------------------------------
// Distribution operations

/// Softmax of `logits` as a distribution over `support`.
ValueDistribution softmax_dist(std::span<const double> logits,
                               const ValueSupport& support);

double expectation(const ValueDistribution& z);

/// Distributional Bellman backup r + gamma * Z projected onto `support`.
/// Each atom value is clamped to [v_min, v_max] before its mass is split
/// linearly between the two neighbouring atoms. Terminal transitions pass
/// gamma = 0.
ValueDistribution bellman_project(const ValueDistribution& z_next, double reward,
                                  double gamma, const ValueSupport& support);

/// Clipped double merge: the distribution whose CDF is the pointwise maximum
/// of the two input CDFs. cdf() of the result returns that maximum exactly;
/// its probabilities reproduce it under prefix summation to within one ulp.
ValueDistribution clipped_merge(const ValueDistribution& z1,
                                const ValueDistribution& z2);

struct CrossEntropyWithGrad {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d logits = softmax(logits) - target
};

/// -sum_j target_j * log_softmax(logits)_j. The KL divergence differs from it
/// by a term that does not depend on the logits.
CrossEntropyWithGrad cross_entropy_with_grad(const ValueDistribution& target,
                                             std::span<const double> logits);

}  // namespace d2c
