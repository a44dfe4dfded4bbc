#pragma once

// Gaussian-policy baseline: a compact likelihood-ratio policy-gradient
// learner with an entropy bonus, the closed-form Trap Cheese MLE analytics,
// and a Monte Carlo probe of which region the policy gradient favours.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "d2c/envs.hpp"
#include "d2c/mlp.hpp"
#include "d2c/random.hpp"

namespace d2c {

/// The union of [-1 - delta, -1 + delta] and [1 - delta, 1 + delta].
struct RewardRegion {
  double delta = 0.3;

  /// Throws InvalidInput unless 0 < delta < 1.
  void validate() const;
  bool contains(double a) const;
};

/// Integral over the region of log N(a; mu, sigma^2):
/// -4 delta log(sqrt(2 pi) sigma) - (2 delta / (3 sigma^2)) (3 (1 + mu^2) + delta^2).
double gaussian_region_log_likelihood(const RewardRegion& region, double mu, double sigma);

/// (d/dmu, d/dsigma) of gaussian_region_log_likelihood.
std::pair<double, double> gaussian_region_log_likelihood_grad(const RewardRegion& region,
                                                              double mu, double sigma);

struct GaussianFit {
  double mu = 0.0;
  double sigma_sq = 1.0;
  std::size_t iterations = 0;
};

/// Damped Newton ascent on the closed-form objective. Throws ConvergenceError
/// if the gradient norm does not fall below 1e-12 within 200 iterations.
GaussianFit gaussian_mle_fit(const RewardRegion& region);

/// Uniform mass on the atoms inside the region, zero elsewhere. Throws
/// InvalidInput when no atom lies in the region.
std::vector<double> discrete_mle_fit(const RewardRegion& region, std::span<const double> atoms);

/// N(mu(x), diag(sigma^2)) with a linear-or-deeper mean network and a
/// state-independent log-std vector clamped to [-5, 2]. Samples are clamped
/// to the action bounds before they reach the environment.
class GaussianPolicy {
 public:
  GaussianPolicy(std::size_t state_dim, std::vector<double> low, std::vector<double> high,
                 std::vector<std::size_t> hidden, double init_mean, double init_log_std,
                 std::uint64_t init_seed);

  static constexpr double kMinLogStd = -5.0;
  static constexpr double kMaxLogStd = 2.0;

  std::size_t action_dim() const noexcept { return low_.size(); }
  std::vector<double> mean(std::span<const double> x) const;
  const std::vector<double>& log_std() const noexcept { return log_std_; }
  std::vector<double> clamp(std::span<const double> a) const;

  Mlp& mean_net() noexcept { return mean_net_; }
  const Mlp& mean_net() const noexcept { return mean_net_; }
  void set_log_std(std::vector<double> v);

 private:
  Mlp mean_net_;
  std::vector<double> log_std_;
  std::vector<double> low_, high_;
};

struct GaussianBaselineConfig {
  std::size_t episodes = 20000;
  std::size_t batch_episodes = 16;
  double learning_rate = 0.01;
  double entropy_coef = 0.2;
  double baseline_decay = 0.99;  // running-mean reward baseline
  double init_mean = 0.0;
  double init_log_std = 0.0;     // sigma = 1
  std::vector<std::size_t> hidden = {};
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const GaussianBaselineConfig&) const = default;
};

struct BaselineResult {
  std::vector<double> episode_returns;  // raw returns, one per episode
  std::vector<double> final_mean;       // mean action at the first observed state
  std::vector<double> final_log_std;
  /// Mean of the last min(1000, episodes) returns.
  double final_average_return = 0.0;
};

/// Likelihood-ratio policy gradient with an entropy bonus. Episodes are
/// rolled out to termination or the env horizon; every batch_episodes
/// episodes one Adam step is taken on the mean network and the log-std.
/// Throws PoisonError if the parameters become non-finite.
BaselineResult train_baseline(Environment& env, const GaussianBaselineConfig& config, Rng& rng,
                              GaussianPolicy* policy_out = nullptr);

struct PreferenceEstimate {
  double omega1 = 0.0;  // <grad J, unit direction toward the omega1 centroid>
  double omega1_se = 0.0;
  double omega2 = 0.0;
  double omega2_se = 0.0;
  double difference = 0.0;  // omega2 - omega1, paired per sample
  double difference_se = 0.0;
  /// sigma exceeds the largest grain diameter.
  bool premise_holds = false;
};

/// Monte Carlo score-function estimate of grad_mu J = E[(a - mu) / sigma^2 Q(a)]
/// for a ~ N(mu, sigma^2 I), projected on the unit directions from mu toward
/// each region's centroid. Uses the landscape's expected return Q.
PreferenceEstimate preference_probe(const HRHRLandscape& landscape, std::span<const double> mu,
                                    double sigma, std::size_t n_samples, Rng& rng);

}  // namespace d2c
