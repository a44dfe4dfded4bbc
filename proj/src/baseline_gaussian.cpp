#include "d2c/baseline_gaussian.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "d2c/errors.hpp"

namespace d2c {

void RewardRegion::validate() const {
  if (!(delta > 0.0 && delta < 1.0)) throw InvalidInput("region half-width must lie in (0, 1)");
}

bool RewardRegion::contains(double a) const {
  return (a >= -1.0 - delta && a <= -1.0 + delta) || (a >= 1.0 - delta && a <= 1.0 + delta);
}

double gaussian_region_log_likelihood(const RewardRegion& region, double mu, double sigma) {
  region.validate();
  if (!(sigma > 0.0)) throw InvalidInput("sigma must be positive");
  const double d = region.delta;
  const double spread = 3.0 * (1.0 + mu * mu) + d * d;
  return -4.0 * d * std::log(std::sqrt(2.0 * std::numbers::pi) * sigma) -
         2.0 * d / (3.0 * sigma * sigma) * spread;
}

std::pair<double, double> gaussian_region_log_likelihood_grad(const RewardRegion& region,
                                                              double mu, double sigma) {
  region.validate();
  if (!(sigma > 0.0)) throw InvalidInput("sigma must be positive");
  const double d = region.delta;
  const double s2 = sigma * sigma;
  const double spread = 3.0 * (1.0 + mu * mu) + d * d;
  return {-4.0 * d * mu / s2, -4.0 * d / sigma + 4.0 * d / (3.0 * s2 * sigma) * spread};
}

GaussianFit gaussian_mle_fit(const RewardRegion& region) {
  region.validate();
  const double d = region.delta;
  double mu = 0.5;
  double sigma = 1.5;
  auto f = [&](double m, double s) { return gaussian_region_log_likelihood(region, m, s); };
  for (std::size_t it = 0; it < 200; ++it) {
    const auto [gm, gs] = gaussian_region_log_likelihood_grad(region, mu, sigma);
    if (std::hypot(gm, gs) < 1e-12) return GaussianFit{mu, sigma * sigma, it};
    const double s2 = sigma * sigma;
    const double spread = 3.0 * (1.0 + mu * mu) + d * d;
    const double hmm = -4.0 * d / s2;
    const double hms = 8.0 * d * mu / (s2 * sigma);
    const double hss = 4.0 * d / s2 - 4.0 * d / (s2 * s2) * spread;
    const double det = hmm * hss - hms * hms;
    double step_m = gm;
    double step_s = gs;
    if (hmm < 0.0 && det > 0.0) {
      // Newton direction -H^{-1} g for a negative-definite Hessian.
      step_m = -(hss * gm - hms * gs) / det;
      step_s = -(-hms * gm + hmm * gs) / det;
    }
    double t = 1.0;
    const double f0 = f(mu, sigma);
    while (t > 1e-12) {
      const double ns = sigma + t * step_s;
      if (ns > 0.0 && f(mu + t * step_m, ns) >= f0) break;
      t *= 0.5;
    }
    if (t <= 1e-12) break;
    mu += t * step_m;
    sigma += t * step_s;
  }
  const auto [gm, gs] = gaussian_region_log_likelihood_grad(region, mu, sigma);
  if (std::hypot(gm, gs) < 1e-12) return GaussianFit{mu, sigma * sigma, 200};
  throw ConvergenceError("Gaussian MLE fit did not converge (gradient norm " +
                         std::to_string(std::hypot(gm, gs)) + ")");
}

std::vector<double> discrete_mle_fit(const RewardRegion& region, std::span<const double> atoms) {
  region.validate();
  std::size_t inside = 0;
  for (double a : atoms) inside += region.contains(a) ? 1 : 0;
  if (inside == 0) throw InvalidInput("no action atom lies in the reward region");
  std::vector<double> p(atoms.size(), 0.0);
  for (std::size_t i = 0; i < atoms.size(); ++i) {
    if (region.contains(atoms[i])) p[i] = 1.0 / static_cast<double>(inside);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Policy

namespace {

MlpSpec mean_spec(std::size_t state_dim, std::size_t action_dim, std::vector<std::size_t> hidden,
                  std::uint64_t seed) {
  MlpSpec s;
  s.input_dim = state_dim;
  s.hidden = std::move(hidden);
  s.output_dim = action_dim;
  s.activation = Activation::tanh;
  s.init_seed = seed;
  s.zero_output_layer = true;
  return s;
}

}  // namespace

GaussianPolicy::GaussianPolicy(std::size_t state_dim, std::vector<double> low,
                               std::vector<double> high, std::vector<std::size_t> hidden,
                               double init_mean, double init_log_std, std::uint64_t init_seed)
    : mean_net_(mean_spec(state_dim, low.size(), std::move(hidden), init_seed)),
      low_(std::move(low)),
      high_(std::move(high)) {
  if (low_.empty() || low_.size() != high_.size()) {
    throw InvalidInput("Gaussian policy bounds must be non-empty and matching");
  }
  auto& v = mean_net_.params().values;
  for (std::size_t i = 0; i < low_.size(); ++i) {
    v[v.size() - static_cast<Eigen::Index>(low_.size() - i)] = init_mean;
  }
  set_log_std(std::vector<double>(low_.size(), init_log_std));
}

std::vector<double> GaussianPolicy::mean(std::span<const double> x) const {
  return mean_net_.forward(x);
}

std::vector<double> GaussianPolicy::clamp(std::span<const double> a) const {
  std::vector<double> out(a.begin(), a.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(out[i], low_[i], high_[i]);
  return out;
}

void GaussianPolicy::set_log_std(std::vector<double> v) {
  if (v.size() != low_.size()) throw InvalidInput("log-std has the wrong dimension");
  for (double& s : v) {
    if (!std::isfinite(s)) throw PoisonError("log-std is not finite");
    s = std::clamp(s, kMinLogStd, kMaxLogStd);
  }
  log_std_ = std::move(v);
}

void GaussianBaselineConfig::validate() const {
  if (batch_episodes < 1) throw InvalidInput("batch_episodes must be >= 1");
  if (!(learning_rate > 0.0)) throw InvalidInput("baseline learning rate must be positive");
  if (!(entropy_coef >= 0.0)) throw InvalidInput("entropy coefficient must be >= 0");
  if (!(baseline_decay >= 0.0 && baseline_decay < 1.0)) {
    throw InvalidInput("baseline decay must lie in [0, 1)");
  }
}

BaselineResult train_baseline(Environment& env, const GaussianBaselineConfig& config, Rng& rng,
                              GaussianPolicy* policy_out) {
  config.validate();
  const auto& spec = env.spec();
  GaussianPolicy policy(spec.state_dim, spec.action_low, spec.action_high, config.hidden,
                        config.init_mean, config.init_log_std,
                        derive_seed(config.seed, Stream::baseline, 0));
  const std::size_t n = spec.action_dim;
  AdamConfig adam;
  adam.learning_rate = config.learning_rate;
  auto mean_opt = OptimizerState::for_parameters(policy.mean_net().params(), adam);
  ParameterSet log_std_params;
  log_std_params.values = Eigen::Map<const Eigen::VectorXd>(policy.log_std().data(),
                                                            static_cast<Eigen::Index>(n));
  auto std_opt = OptimizerState::for_parameters(log_std_params, adam);

  std::normal_distribution<double> normal(0.0, 1.0);
  BaselineResult result;
  result.episode_returns.reserve(config.episodes);
  Eigen::VectorXd mean_grad = Eigen::VectorXd::Zero(policy.mean_net().params().values.size());
  Eigen::VectorXd std_grad = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  double running = 0.0;
  bool have_running = false;
  std::size_t in_batch = 0;
  std::vector<double> first_state;

  struct StepRecord {
    std::vector<double> x;
    std::vector<double> a;
    std::vector<double> mu;
  };

  for (std::size_t ep = 0; ep < config.episodes; ++ep) {
    auto x = env.reset(rng);
    if (first_state.empty()) first_state = x;
    std::vector<StepRecord> steps;
    double ret = 0.0;
    for (std::size_t t = 0; t < spec.horizon; ++t) {
      const auto mu = policy.mean(x);
      std::vector<double> a(n);
      for (std::size_t i = 0; i < n; ++i) {
        a[i] = mu[i] + std::exp(policy.log_std()[i]) * normal(rng);
      }
      const auto result_step = env.step(policy.clamp(a), rng);
      ret += result_step.reward;
      steps.push_back({x, a, mu});
      x = result_step.next_state;
      if (result_step.done) break;
    }
    result.episode_returns.push_back(ret);

    if (!have_running) {
      running = ret;
      have_running = true;
    }
    const double advantage = ret - running;
    running = config.baseline_decay * running + (1.0 - config.baseline_decay) * ret;

    for (const auto& s : steps) {
      std::vector<double> dmu(n);
      for (std::size_t i = 0; i < n; ++i) {
        const double sigma = std::exp(policy.log_std()[i]);
        const double z = (s.a[i] - s.mu[i]) / sigma;
        dmu[i] = advantage * z / sigma;
        std_grad[static_cast<Eigen::Index>(i)] += advantage * (z * z - 1.0);
      }
      mean_grad += policy.mean_net().backward(s.x, dmu).params;
    }
    for (std::size_t i = 0; i < n; ++i) {
      std_grad[static_cast<Eigen::Index>(i)] += config.entropy_coef;
    }

    if (++in_batch == config.batch_episodes) {
      const double scale = -1.0 / static_cast<double>(in_batch);  // ascent via Adam descent
      optimizer_step(mean_opt, policy.mean_net().params(), scale * mean_grad);
      log_std_params.values = Eigen::Map<const Eigen::VectorXd>(policy.log_std().data(),
                                                                static_cast<Eigen::Index>(n));
      optimizer_step(std_opt, log_std_params, scale * std_grad);
      policy.set_log_std(std::vector<double>(log_std_params.values.data(),
                                             log_std_params.values.data() + n));
      mean_grad.setZero();
      std_grad.setZero();
      in_batch = 0;
    }
  }

  if (!first_state.empty()) result.final_mean = policy.mean(first_state);
  result.final_log_std = policy.log_std();
  const std::size_t tail = std::min<std::size_t>(1000, result.episode_returns.size());
  if (tail > 0) {
    double s = 0.0;
    for (std::size_t i = result.episode_returns.size() - tail; i < result.episode_returns.size();
         ++i) {
      s += result.episode_returns[i];
    }
    result.final_average_return = s / static_cast<double>(tail);
  }
  if (policy_out != nullptr) *policy_out = policy;
  return result;
}

// ---------------------------------------------------------------------------
// Preference probe

PreferenceEstimate preference_probe(const HRHRLandscape& landscape, std::span<const double> mu,
                                    double sigma, std::size_t n_samples, Rng& rng) {
  landscape.validate_shape();
  const std::size_t dim = landscape.dimension;
  if (mu.size() != dim) throw InvalidInput("probe mean has the wrong dimension");
  if (!(sigma > 0.0)) throw InvalidInput("probe sigma must be positive");
  if (n_samples < 2) throw InvalidInput("probe needs at least two samples");

  auto direction = [&](const Box& region) {
    auto c = region.centroid();
    double norm = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      c[i] -= mu[i];
      norm += c[i] * c[i];
    }
    norm = std::sqrt(norm);
    if (norm > 0.0) {
      for (double& v : c) v /= norm;
    }
    return c;
  };
  const auto d1 = direction(landscape.omega1);
  const auto d2 = direction(landscape.omega2);

  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> a(dim);
  double s1 = 0.0, q1 = 0.0, s2 = 0.0, q2 = 0.0, sd = 0.0, qd = 0.0;
  for (std::size_t k = 0; k < n_samples; ++k) {
    std::vector<double> z(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      z[i] = normal(rng);
      a[i] = mu[i] + sigma * z[i];
    }
    const double q = landscape.q(a);
    double p1 = 0.0, p2 = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      const double g = z[i] / sigma * q;  // (a - mu) / sigma^2 * Q(a)
      p1 += g * d1[i];
      p2 += g * d2[i];
    }
    s1 += p1;
    q1 += p1 * p1;
    s2 += p2;
    q2 += p2 * p2;
    sd += p2 - p1;
    qd += (p2 - p1) * (p2 - p1);
  }
  const double nn = static_cast<double>(n_samples);
  auto se = [&](double s, double q) {
    const double mean = s / nn;
    const double var = std::max(0.0, (q - nn * mean * mean) / (nn - 1.0));
    return std::sqrt(var / nn);
  };
  PreferenceEstimate out;
  out.omega1 = s1 / nn;
  out.omega1_se = se(s1, q1);
  out.omega2 = s2 / nn;
  out.omega2_se = se(s2, q2);
  out.difference = sd / nn;
  out.difference_se = se(sd, qd);
  out.premise_holds = sigma > landscape.max_grain_diameter();
  return out;
}

}  // namespace d2c
