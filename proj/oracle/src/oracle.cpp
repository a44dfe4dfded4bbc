#include "d2c/oracle/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace d2c::oracle {

OracleReport compare(std::string name, std::vector<double> oracle, std::vector<double> candidate,
                     double tolerance, bool relative) {
  OracleReport r;
  r.name = std::move(name);
  r.tolerance = tolerance;
  r.relative = relative;
  bool ok = oracle.size() == candidate.size();
  if (ok) {
    for (std::size_t i = 0; i < oracle.size(); ++i) {
      const double a = oracle[i];
      const double b = candidate[i];
      if (!std::isfinite(a) || !std::isfinite(b)) {
        ok = false;
        r.max_abs_deviation = std::numeric_limits<double>::infinity();
        r.max_rel_deviation = std::numeric_limits<double>::infinity();
        continue;
      }
      const double dev = std::abs(a - b);
      const double scale = std::max({std::abs(a), std::abs(b), 1e-12});
      r.max_abs_deviation = std::max(r.max_abs_deviation, dev);
      r.max_rel_deviation = std::max(r.max_rel_deviation, dev / scale);
    }
  }
  r.oracle = std::move(oracle);
  r.candidate = std::move(candidate);
  const double dev = relative ? r.max_rel_deviation : r.max_abs_deviation;
  r.pass = ok && dev <= tolerance;
  return r;
}

double support_atom(double v_min, double v_max, std::size_t n, std::size_t i) {
  return v_min + (v_max - v_min) * static_cast<double>(i) / static_cast<double>(n - 1);
}

std::vector<double> naive_project(const std::vector<double>& probs, double reward, double gamma,
                                  double v_min, double v_max) {
  const std::size_t n = probs.size();
  const double dz = (v_max - v_min) / static_cast<double>(n - 1);
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double zi = support_atom(v_min, v_max, n, i);
    for (std::size_t j = 0; j < n; ++j) {
      double tz = reward + gamma * support_atom(v_min, v_max, n, j);
      tz = std::min(std::max(tz, v_min), v_max);
      const double w = std::min(1.0, std::max(0.0, 1.0 - std::abs(tz - zi) / dz));
      out[i] += w * probs[j];
    }
  }
  return out;
}

std::vector<double> naive_cdf(const std::vector<double>& p) {
  std::vector<double> c(p.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    c[i] = acc;
  }
  return c;
}

std::vector<double> naive_merge(const std::vector<double>& p1, const std::vector<double>& p2) {
  if (p1.size() != p2.size()) throw std::invalid_argument("naive_merge: length mismatch");
  std::vector<double> c(p1.size());
  for (std::size_t k = 0; k < p1.size(); ++k) {
    double s1 = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i <= k; ++i) {
      s1 += p1[i];
      s2 += p2[i];
    }
    c[k] = std::max(s1, s2);
  }
  std::vector<double> out(c.size());
  for (std::size_t k = 0; k < c.size(); ++k) out[k] = k == 0 ? c[0] : c[k] - c[k - 1];
  return out;
}

std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f,
                                std::vector<double> params, double step) {
  if (!(step >= 1e-7 && step <= 1e-4)) throw std::invalid_argument("fd step outside [1e-7, 1e-4]");
  std::vector<double> g(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double keep = params[i];
    params[i] = keep + step;
    const double up = f(params);
    params[i] = keep - step;
    const double down = f(params);
    params[i] = keep;
    g[i] = (up - down) / (2.0 * step);
  }
  return g;
}

double naive_log_sum_exp(const std::vector<double>& xs) {
  long double s = 0.0L;
  for (double x : xs) s += std::exp(static_cast<long double>(x));
  return static_cast<double>(std::log(s));
}

std::vector<double> naive_log_softmax(const std::vector<double>& xs) {
  long double s = 0.0L;
  for (double x : xs) s += std::exp(static_cast<long double>(x));
  std::vector<double> out(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    out[i] = static_cast<double>(static_cast<long double>(xs[i]) - std::log(s));
  }
  return out;
}

double naive_log_complement_cdf(const std::vector<double>& logits, std::size_t k, double epsilon) {
  long double total = 0.0L, head = 0.0L;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const long double e = std::exp(static_cast<long double>(logits[i]));
    total += e;
    if (i <= k) head += e;
  }
  const long double rho = head / total;
  return static_cast<double>(std::log(1.0L - (1.0L - epsilon) * rho));
}

double naive_softmax_entropy(const std::vector<double>& logits) {
  long double total = 0.0L;
  for (double x : logits) total += std::exp(static_cast<long double>(x));
  long double h = 0.0L;
  for (double x : logits) {
    const long double p = std::exp(static_cast<long double>(x)) / total;
    if (p > 0.0L) h -= p * std::log(p);
  }
  return static_cast<double>(h);
}

double naive_cross_entropy(const std::vector<double>& target, const std::vector<double>& logits) {
  const auto ls = naive_log_softmax(logits);
  long double s = 0.0L;
  for (std::size_t i = 0; i < target.size(); ++i) s -= target[i] * static_cast<long double>(ls[i]);
  return static_cast<double>(s);
}

DpResult value_iteration(const TabularMdp& mdp, double gamma) {
  const std::size_t ns = mdp.outcomes.size();
  DpResult r;
  r.values.assign(ns, 0.0);
  r.policy.assign(ns, 0);
  auto q_value = [&](const std::vector<double>& v, std::size_t s, std::size_t a) {
    double q = 0.0;
    for (const auto& o : mdp.outcomes[s][a]) {
      q += o.probability * (o.reward + (o.terminal ? 0.0 : gamma * v[o.next_state]));
    }
    return q;
  };
  for (std::size_t sweep = 1; sweep <= 100000; ++sweep) {
    std::vector<double> next(ns, -std::numeric_limits<double>::infinity());
    double change = 0.0;
    for (std::size_t s = 0; s < ns; ++s) {
      for (std::size_t a = 0; a < mdp.outcomes[s].size(); ++a) {
        next[s] = std::max(next[s], q_value(r.values, s, a));
      }
      change = std::max(change, std::abs(next[s] - r.values[s]));
    }
    r.values = std::move(next);
    if (change < 1e-10) {
      r.sweeps = sweep;
      for (std::size_t s = 0; s < ns; ++s) {
        double best = -std::numeric_limits<double>::infinity();
        for (std::size_t a = 0; a < mdp.outcomes[s].size(); ++a) {
          const double q = q_value(r.values, s, a);
          if (q > best + 1e-12) {
            best = q;
            r.policy[s] = a;
          }
        }
      }
      return r;
    }
  }
  throw std::runtime_error("value iteration did not converge within 100000 sweeps");
}

TabularMdp chain_mdp(const ChainParams& p, const std::vector<double>& action_values) {
  TabularMdp mdp;
  mdp.outcomes.resize(p.length);
  for (std::size_t s = 0; s < p.length; ++s) {
    const double centre = (s % 2 == 0) ? 1.0 : -1.0;
    for (double a : action_values) {
      std::vector<Outcome> outs;
      const bool in_band = a >= centre - p.band_half_width && a <= centre + p.band_half_width;
      const bool same_side = centre * a > 0.0;
      if (in_band) {
        if (s + 1 < p.length) {
          outs.push_back({1.0, 0.0, false, s + 1});
        } else {
          outs.push_back({p.final_probability, p.final_reward, true, 0});
          outs.push_back({1.0 - p.final_probability, 0.0, true, 0});
        }
      } else if (same_side) {
        outs.push_back({1.0, p.trap_reward, true, 0});
      } else {
        outs.push_back({1.0, p.safe_reward, true, 0});
      }
      mdp.outcomes[s].push_back(std::move(outs));
    }
  }
  return mdp;
}

double region_log_likelihood(double delta, double mu, double sigma) {
  const double pi = 3.14159265358979323846;
  return -4.0 * delta * std::log(std::sqrt(2.0 * pi) * sigma) -
         (2.0 * delta / (3.0 * sigma * sigma)) * (3.0 * (1.0 + mu * mu) + delta * delta);
}

GridMle mle_grid_search(double delta, double mu_lo, double mu_hi, std::size_t n_mu,
                        double sigma_lo, double sigma_hi, std::size_t n_sigma) {
  if (n_mu < 2 || n_sigma < 2 || !(sigma_lo > 0.0)) {
    throw std::invalid_argument("mle_grid_search: degenerate grid");
  }
  GridMle best;
  best.value = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n_mu; ++i) {
    const double mu = mu_lo + (mu_hi - mu_lo) * static_cast<double>(i) / static_cast<double>(n_mu - 1);
    for (std::size_t k = 0; k < n_sigma; ++k) {
      const double sigma = sigma_lo + (sigma_hi - sigma_lo) * static_cast<double>(k) /
                                          static_cast<double>(n_sigma - 1);
      const double v = region_log_likelihood(delta, mu, sigma);
      if (v > best.value) best = GridMle{mu, sigma * sigma, v};
    }
  }
  return best;
}

double uniform_grid_expectation(const std::vector<double>& actions,
                                const std::function<double(double)>& q) {
  double s = 0.0;
  for (double a : actions) s += q(a);
  return s / static_cast<double>(actions.size());
}

}  // namespace d2c::oracle
