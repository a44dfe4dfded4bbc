#include "d2c/value_dist.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "d2c/errors.hpp"

namespace d2c {

namespace {

void require_finite(std::span<const double> xs, const char* what) {
  for (double x : xs) {
    if (!std::isfinite(x)) {
      throw InvalidInput(std::string(what) + ": non-finite entry");
    }
  }
}

void require_same_support(const ValueSupport& a, const ValueSupport& b) {
  if (!(a == b)) {
    throw InvalidInput("value distributions live on different supports");
  }
}

// Largest double p >= 0 with prev + p <= next (prev <= next) under rounding.
// It hits next exactly unless no increment can, which happens when prev has
// finer bits than next and the sum falls on a round-to-even tie.
double exact_increment(double prev, double next) {
  double p = next - prev;
  while (prev + p < next) p = std::nextafter(p, std::numeric_limits<double>::infinity());
  while (p > 0.0 && prev + p > next) p = std::nextafter(p, 0.0);
  return p;
}

}  // namespace

ValueSupport::ValueSupport(double v_min, double v_max, std::size_t n_atoms)
    : v_min_(v_min), v_max_(v_max), n_atoms_(n_atoms), delta_z_(0.0) {
  if (!std::isfinite(v_min) || !std::isfinite(v_max) || !(v_min < v_max)) {
    throw InvalidInput("value support requires finite v_min < v_max");
  }
  if (n_atoms < 2) {
    throw InvalidInput("value support requires at least two atoms");
  }
  delta_z_ = (v_max - v_min) / static_cast<double>(n_atoms - 1);
}

std::vector<double> ValueSupport::atoms() const {
  std::vector<double> out(n_atoms_);
  for (std::size_t i = 0; i < n_atoms_; ++i) out[i] = atom(i);
  // Pin the upper endpoint; v_min + (N-1) * dz can miss v_max by an ulp.
  out.back() = v_max_;
  return out;
}

ValueDistribution::ValueDistribution(ValueSupport support, std::vector<double> probs)
    : support_(support), probs_(std::move(probs)) {
  if (probs_.size() != support_.size()) {
    throw InvalidInput("probability vector length " + std::to_string(probs_.size()) +
                       " does not match support size " +
                       std::to_string(support_.size()));
  }
  double total = 0.0;
  for (double& p : probs_) {
    if (!std::isfinite(p) || p < -1e-12) {
      throw InvalidInput("value distribution has a negative or non-finite probability");
    }
    if (p < 0.0) p = 0.0;
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw InvalidInput("value distribution mass " + std::to_string(total) + " != 1");
  }
}

ValueDistribution ValueDistribution::point_mass(const ValueSupport& support, std::size_t i) {
  if (i >= support.size()) throw InvalidInput("point mass atom out of range");
  std::vector<double> p(support.size(), 0.0);
  p[i] = 1.0;
  return ValueDistribution(support, std::move(p));
}

ValueDistribution ValueDistribution::uniform(const ValueSupport& support) {
  return ValueDistribution(
      support, std::vector<double>(support.size(), 1.0 / static_cast<double>(support.size())));
}

std::vector<double> ValueDistribution::cdf() const {
  if (!cdf_.empty()) return cdf_;
  std::vector<double> c(probs_.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < probs_.size(); ++i) {
    acc += probs_[i];
    c[i] = acc;
  }
  return c;
}

// ---------------------------------------------------------------------------

double log_sum_exp(std::span<const double> xs) {
  if (xs.empty()) throw InvalidInput("log_sum_exp of an empty vector");
  const double x_max = *std::max_element(xs.begin(), xs.end());
  if (std::isinf(x_max)) return x_max;
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - x_max);
  return x_max + std::log(acc);
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw InvalidInput("softmax of an empty vector");
  require_finite(logits, "softmax");
  const double x_max = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - x_max);
    total += out[i];
  }
  for (double& p : out) p /= total;
  return out;
}

std::vector<double> log_softmax(std::span<const double> logits) {
  require_finite(logits, "log_softmax");
  const double lse = log_sum_exp(logits);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

double log_complement_cdf(std::span<const double> logits, std::size_t k, double epsilon) {
  const std::size_t n = logits.size();
  if (k >= n) throw InvalidInput("log_complement_cdf: atom index out of range");
  if (!(epsilon >= 0.0 && epsilon < 1.0)) {
    throw InvalidInput("log_complement_cdf: epsilon must lie in [0, 1)");
  }
  require_finite(logits, "log_complement_cdf");
  if (k + 1 == n) {
    // rho = 1, so the value is log(epsilon) regardless of the logits.
    return epsilon > 0.0 ? std::log(epsilon) : -std::numeric_limits<double>::infinity();
  }

  const double lse_all = log_sum_exp(logits);
  const auto head = logits.subspan(0, k + 1);
  const auto tail = logits.subspan(k + 1);
  const double tail_max = *std::max_element(tail.begin(), tail.end());

  if (epsilon == 0.0) {
    double acc = 0.0;
    for (double x : tail) acc += std::exp(x - tail_max);
    return tail_max + std::log(acc) - lse_all;
  }

  const double log_eps = std::log(epsilon);
  const double head_max = *std::max_element(head.begin(), head.end()) + log_eps;
  const double shift = std::max(head_max, tail_max);
  double acc = 0.0;
  for (double x : head) acc += std::exp(x + log_eps - shift);
  for (double x : tail) acc += std::exp(x - shift);
  return shift + std::log(acc) - lse_all;
}

std::vector<double> log_complement_cdf_grad(std::span<const double> logits, std::size_t k,
                                            double epsilon) {
  const std::size_t n = logits.size();
  if (k >= n) throw InvalidInput("log_complement_cdf_grad: atom index out of range");
  if (!(epsilon >= 0.0 && epsilon < 1.0)) {
    throw InvalidInput("log_complement_cdf_grad: epsilon must lie in [0, 1)");
  }
  if (k + 1 == n) return std::vector<double>(n, 0.0);

  // d/dx [lse(x + log(eps) * 1{i<=k}) - lse(x)] = softmax(shifted) - softmax(x)
  std::vector<double> grad = softmax(logits);
  for (double& g : grad) g = -g;
  std::vector<double> shifted(logits.begin(), logits.end());
  const double tail_max = *std::max_element(shifted.begin() + static_cast<long>(k) + 1, shifted.end());
  if (epsilon == 0.0) {
    double total = 0.0;
    for (std::size_t i = k + 1; i < n; ++i) total += std::exp(shifted[i] - tail_max);
    for (std::size_t i = k + 1; i < n; ++i) grad[i] += std::exp(shifted[i] - tail_max) / total;
    return grad;
  }
  const double log_eps = std::log(epsilon);
  for (std::size_t i = 0; i <= k; ++i) shifted[i] += log_eps;
  const std::vector<double> q = softmax(shifted);
  for (std::size_t i = 0; i < n; ++i) grad[i] += q[i];
  return grad;
}

ObjectiveWithGrad complement_cdf_objective(std::span<const double> logits, double epsilon) {
  const std::size_t n = logits.size();
  if (n < 2) throw InvalidInput("complement_cdf_objective needs at least two atoms");
  if (!(epsilon >= 0.0 && epsilon < 1.0)) {
    throw InvalidInput("complement_cdf_objective: epsilon must lie in [0, 1)");
  }
  require_finite(logits, "complement_cdf_objective");

  ObjectiveWithGrad out;
  out.grad.assign(n, 0.0);

  if (epsilon == 0.0) {
    for (std::size_t k = 0; k + 1 < n; ++k) {
      out.value += log_complement_cdf(logits, k, 0.0);
      const auto g = log_complement_cdf_grad(logits, k, 0.0);
      for (std::size_t i = 0; i < n; ++i) out.grad[i] += g[i];
    }
    return out;
  }

  // Scaled weights e_i = exp(x_i - max). For every k, D_k = eps * P_k + T_k is
  // built from a prefix sum P and a suffix sum T of non-negative terms, so no
  // cancellation occurs. One of P_k, T_k contains the max term, hence D_k >= eps.
  const double x_max = *std::max_element(logits.begin(), logits.end());
  std::vector<double> e(n);
  for (std::size_t i = 0; i < n; ++i) e[i] = std::exp(logits[i] - x_max);

  std::vector<double> suffix(n + 1, 0.0);
  for (std::size_t i = n; i-- > 0;) suffix[i] = suffix[i + 1] + e[i];
  const double total = suffix[0];
  const double log_total = std::log(total);

  std::vector<double> inv_d(n - 1);
  double prefix = 0.0;
  for (std::size_t k = 0; k + 1 < n; ++k) {
    prefix += e[k];
    const double d = epsilon * prefix + suffix[k + 1];
    inv_d[k] = 1.0 / d;
    out.value += std::log(d) - log_total;
  }

  // grad_i = e_i * (eps * sum_{k>=i} 1/D_k + sum_{k<i} 1/D_k) - (N-1) e_i / S
  std::vector<double> inv_suffix(n, 0.0);  // sum_{k>=i, k<=N-2} 1/D_k
  for (std::size_t i = n - 1; i-- > 0;) inv_suffix[i] = inv_suffix[i + 1] + inv_d[i];
  double inv_prefix = 0.0;  // sum_{k<i} 1/D_k
  const double terms = static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) {
    out.grad[i] = e[i] * (epsilon * inv_suffix[i] + inv_prefix) - terms * e[i] / total;
    if (i + 1 < n) inv_prefix += inv_d[i];
  }
  return out;
}

// ---------------------------------------------------------------------------

ValueDistribution softmax_dist(std::span<const double> logits, const ValueSupport& support) {
  if (logits.size() != support.size()) {
    throw InvalidInput("logit vector length does not match the value support");
  }
  return ValueDistribution(support, softmax(logits));
}

double expectation(const ValueDistribution& z) {
  const auto& s = z.support();
  double acc = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) acc += z[i] * s.atom(i);
  return std::clamp(acc, s.v_min(), s.v_max());
}

ValueDistribution bellman_project(const ValueDistribution& z_next, double reward, double gamma,
                                  const ValueSupport& support) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) {
    throw InvalidInput("bellman_project: gamma must lie in [0, 1]");
  }
  if (!std::isfinite(reward)) throw InvalidInput("bellman_project: non-finite reward");

  const std::size_t n = support.size();
  const double top = static_cast<double>(n - 1);
  const auto& src = z_next.support();
  std::vector<double> out(n, 0.0);
  for (std::size_t j = 0; j < z_next.size(); ++j) {
    const double p = z_next[j];
    if (p == 0.0) continue;
    const double tz = std::clamp(reward + gamma * src.atom(j), support.v_min(), support.v_max());
    const double b = std::clamp((tz - support.v_min()) / support.delta_z(), 0.0, top);
    const double lower = std::floor(b);
    const auto l = static_cast<std::size_t>(lower);
    if (b == lower) {
      out[l] += p;
      continue;
    }
    const double frac = b - lower;
    out[l] += p * (1.0 - frac);
    out[l + 1] += p * frac;
  }
  return ValueDistribution(support, std::move(out));
}

ValueDistribution clipped_merge(const ValueDistribution& z1, const ValueDistribution& z2) {
  require_same_support(z1.support(), z2.support());
  const std::size_t n = z1.size();
  const auto c1 = z1.cdf();
  const auto c2 = z2.cdf();

  // Where a single input attains the max CDF at both k-1 and k, its own
  // probability reproduces the merged CDF bit-for-bit under prefix summation.
  // The rule is symmetric in (z1, z2), so the merge is exactly commutative
  // and merge(z, z) returns z unchanged.
  std::vector<double> out(n);
  std::vector<double> merged(n);
  double prev = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const double c = std::max(c1[k], c2[k]);
    merged[k] = c;
    const bool from1 = c1[k] == c && (k == 0 || c1[k - 1] == prev);
    const bool from2 = c2[k] == c && (k == 0 || c2[k - 1] == prev);
    if (from1 && from2) {
      out[k] = std::min(z1[k], z2[k]);
    } else if (from1) {
      out[k] = z1[k];
    } else if (from2) {
      out[k] = z2[k];
    } else {
      out[k] = exact_increment(prev, c);
    }
    prev = c;
  }
  ValueDistribution result(z1.support(), std::move(out));
  result.cdf_ = std::move(merged);
  return result;
}

CrossEntropyWithGrad cross_entropy_with_grad(const ValueDistribution& target,
                                             std::span<const double> logits) {
  if (logits.size() != target.size()) {
    throw InvalidInput("cross_entropy: logit length does not match the target support");
  }
  const auto log_p = log_softmax(logits);
  CrossEntropyWithGrad out;
  out.grad.resize(logits.size());
  for (std::size_t j = 0; j < logits.size(); ++j) {
    if (target[j] > 0.0) out.loss -= target[j] * log_p[j];
    out.grad[j] = std::exp(log_p[j]) - target[j];
  }
  return out;
}

}  // namespace d2c
