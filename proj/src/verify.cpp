#include "d2c/verify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <random>

#include "d2c/agent.hpp"
#include "d2c/baseline_gaussian.hpp"
#include "d2c/envs.hpp"
#include "d2c/value_dist.hpp"

namespace d2c {

namespace {

using oracle::OracleReport;

constexpr std::size_t kCases = 10000;

std::vector<double> random_probs(std::size_t n, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 2.0);
  std::vector<double> p(n);
  const int shape = std::uniform_int_distribution<int>(0, 3)(rng);
  if (shape == 0) {
    // Point mass.
    p.assign(n, 0.0);
    p[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)] = 1.0;
    return p;
  }
  double s = 0.0;
  for (auto& v : p) {
    v = std::exp(normal(rng));
    if (shape == 1 && uniform01(rng) < 0.5) v = 0.0;  // sparse
    s += v;
  }
  if (s == 0.0) {
    p[0] = 1.0;
    return p;
  }
  for (auto& v : p) v /= s;
  return p;
}

std::vector<double> random_logits(std::size_t n, double scale, Rng& rng) {
  std::normal_distribution<double> normal(0.0, scale);
  std::vector<double> x(n);
  for (auto& v : x) v = normal(rng);
  return x;
}

double norm_rel_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
  return std::sqrt(diff) / scale;
}

std::vector<double> to_vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd to_eigen(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

struct Collector {
  std::vector<double> oracle, candidate;
  void add(const std::vector<double>& o, const std::vector<double>& c) {
    oracle.insert(oracle.end(), o.begin(), o.end());
    candidate.insert(candidate.end(), c.begin(), c.end());
  }
  void add(double o, double c) {
    oracle.push_back(o);
    candidate.push_back(c);
  }
  OracleReport report(std::string name, double tol, bool relative = false) {
    return oracle::compare(std::move(name), std::move(oracle), std::move(candidate), tol, relative);
  }
};

// ---------------------------------------------------------------------------

void projection_checks(const VerifyHooks& hooks, Rng& rng, std::vector<OracleReport>& out) {
  Collector values, mass;
  const std::size_t sizes[] = {2, 5, 11, 51};
  for (std::size_t c = 0; c < kCases; ++c) {
    const std::size_t n = sizes[c % 4];
    const double v_min = -std::uniform_real_distribution<double>(0.5, 10.0)(rng);
    const double v_max = std::uniform_real_distribution<double>(0.5, 10.0)(rng);
    const auto p = random_probs(n, rng);
    double gamma = uniform01(rng);
    double r = std::uniform_real_distribution<double>(2.0 * v_min, 2.0 * v_max)(rng);
    switch (c % 5) {
      case 0: gamma = 0.0; break;  // terminal
      case 1: r = v_max; gamma = 1.0; break;  // everything clamps to v_max or lands on it
      case 2: r = v_min - 1.0; break;  // pushed below the support
      case 3: r = oracle::support_atom(v_min, v_max, n, c % n); gamma = 0.0; break;  // exact atom
      default: break;
    }
    const auto cand = hooks.project(p, r, gamma, v_min, v_max);
    values.add(oracle::naive_project(p, r, gamma, v_min, v_max), cand);
    double s = 0.0;
    for (double v : cand) s += v;
    mass.add(1.0, s);
  }
  out.push_back(values.report("projection_values", 1e-9));
  out.push_back(mass.report("projection_mass", 1e-12));
}

void merge_checks(const VerifyHooks& hooks, Rng& rng, std::vector<OracleReport>& out) {
  Collector cdf, probs, expect, commute, idem;
  const std::size_t sizes[] = {2, 7, 51};
  for (std::size_t c = 0; c < kCases; ++c) {
    const std::size_t n = sizes[c % 3];
    const auto p1 = random_probs(n, rng);
    const auto p2 = random_probs(n, rng);
    const auto m = hooks.merge(p1, p2);
    const auto c1 = oracle::naive_cdf(p1);
    const auto c2 = oracle::naive_cdf(p2);
    std::vector<double> cmax(n);
    for (std::size_t k = 0; k < n; ++k) cmax[k] = std::max(c1[k], c2[k]);
    cdf.add(cmax, hooks.merge_cdf(p1, p2));
    probs.add(oracle::naive_merge(p1, p2), m);

    double e1 = 0.0, e2 = 0.0, em = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double z = oracle::support_atom(-1.0, 1.0, n, k);
      e1 += z * p1[k];
      e2 += z * p2[k];
      em += z * m[k];
    }
    // Excess of the merged expectation over the smaller input expectation.
    expect.add(0.0, std::max(0.0, em - std::min(e1, e2)));
    commute.add(m, hooks.merge(p2, p1));
    idem.add(p1, hooks.merge(p1, p1));
  }
  out.push_back(cdf.report("merge_cdf_is_max", 0.0));
  out.push_back(probs.report("merge_probs", 1e-12));
  out.push_back(expect.report("merge_expectation_bound", 1e-12));
  out.push_back(commute.report("merge_commutative", 0.0));
  out.push_back(idem.report("merge_idempotent", 0.0));
}

void log_domain_checks(Rng& rng, std::vector<OracleReport>& out) {
  Collector lse, lsm, lcc;
  for (std::size_t c = 0; c < kCases; ++c) {
    const std::size_t n = 2 + c % 60;
    const auto x = random_logits(n, 3.0, rng);
    lse.add(oracle::naive_log_sum_exp(x), log_sum_exp(x));
    lsm.add(oracle::naive_log_softmax(x), log_softmax(x));
    const double eps = (c % 2 == 0) ? 1e-4 : 0.0;
    // Keep k below n-1 when eps = 0 so the value stays finite.
    const std::size_t k = c % (n - 1);
    lcc.add(oracle::naive_log_complement_cdf(x, k, eps), log_complement_cdf(x, k, eps));
  }
  out.push_back(lse.report("log_sum_exp", 1e-10));
  out.push_back(lsm.report("log_softmax", 1e-10));
  out.push_back(lcc.report("log_complement_cdf", 1e-10));

  // Extreme logits: count non-finite outputs.
  double bad = 0.0;
  for (std::size_t c = 0; c < 100; ++c) {
    auto x = random_logits(51, 1.0, rng);
    for (auto& v : x) v = (v >= 0.0 ? 700.0 : -700.0) + v;
    if (c % 3 == 0) x[c % 51] = 700.0;
    if (!std::isfinite(log_sum_exp(x))) ++bad;
    for (double v : log_softmax(x)) bad += std::isfinite(v) ? 0.0 : 1.0;
    for (std::size_t k = 0; k + 1 < x.size(); ++k) {
      bad += std::isfinite(log_complement_cdf(x, k, 1e-4)) ? 0.0 : 1.0;
    }
    const auto o = complement_cdf_objective(x, 1e-4);
    bad += std::isfinite(o.value) ? 0.0 : 1.0;
    for (double g : o.grad) bad += std::isfinite(g) ? 0.0 : 1.0;
  }
  Collector finite;
  finite.add(0.0, bad);
  out.push_back(finite.report("log_domain_finite_at_700", 0.0));
}

MlpSpec small_spec(std::size_t in, std::vector<std::size_t> hidden, std::size_t outd,
                   std::uint64_t seed, Activation act = Activation::tanh) {
  MlpSpec s;
  s.input_dim = in;
  s.hidden = std::move(hidden);
  s.output_dim = outd;
  s.init_seed = seed;
  // tanh keeps the finite differences away from ReLU kinks.
  s.activation = act;
  return s;
}

void gradient_checks(Rng& rng, std::vector<OracleReport>& out) {
  constexpr double kStep = 1e-6;
  constexpr std::size_t kConfigs = 100;
  Collector ce_grad, ce_value, pol_grad, pol_merged_grad, ent_grad, ent_value;
  for (std::size_t c = 0; c < kConfigs; ++c) {
    const std::uint64_t seed = rng();
    const std::size_t sd = 1 + c % 3;
    const std::size_t n = 1 + c % 2;
    const std::size_t m = 3 + c % 4;
    const std::size_t natoms = 5 + c % 7;
    const std::size_t batch = 2 + c % 3;
    const ValueSupport support(-1.0, 1.0, natoms);

    ActionSpaceSpec action;
    action.n_dims = n;
    action.m_atoms = m;
    action.low.assign(n, -1.0);
    action.high.assign(n, 1.0);

    std::vector<std::vector<double>> states(batch);
    for (auto& s : states) s = random_logits(sd, 1.0, rng);

    // Critic cross-entropy.
    Mlp critic(small_spec(sd + n * m, {6}, natoms, seed));
    {
      std::vector<std::vector<double>> adists(batch);
      for (auto& a : adists) {
        a.clear();
        for (std::size_t r = 0; r < n; ++r) {
          const auto row = random_probs(m, rng);
          a.insert(a.end(), row.begin(), row.end());
        }
      }
      const auto inputs = critic_inputs(states, adists);
      std::vector<ValueDistribution> targets;
      for (std::size_t b = 0; b < batch; ++b) targets.emplace_back(support, random_probs(natoms, rng));
      std::vector<double> weights(batch);
      for (auto& w : weights) w = uniform01(rng);
      const auto analytic = critic_loss_and_grad(critic, inputs, targets, weights);
      auto loss_at = [&](const std::vector<double>& theta) {
        Mlp probe(critic.spec(), ParameterSet{to_eigen(theta)});
        const Eigen::MatrixXd logits = probe.forward(inputs);
        double s = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
          const auto col = logits.col(static_cast<Eigen::Index>(b));
          const std::vector<double> l(col.data(), col.data() + col.size());
          const auto t = targets[b].probs();
          s += weights[b] * oracle::naive_cross_entropy({t.begin(), t.end()}, l);
        }
        return s / static_cast<double>(batch);
      };
      const auto theta = to_vec(critic.params().values);
      const auto fd = oracle::fd_gradient(loss_at, theta, kStep);
      ce_grad.add(0.0, norm_rel_error(fd, to_vec(analytic.grad)));
      ce_value.add(loss_at(theta), analytic.loss);
    }

    // Policy objective through actor -> softmax rows -> critic.
    Mlp actor(small_spec(sd, {5}, n * m, seed + 1));
    Mlp critic2(small_spec(sd + n * m, {6}, natoms, seed + 2));
    for (int merged = 0; merged < 2; ++merged) {
      ActorObjectiveParts parts;
      parts.beta = 0.0;
      parts.entropy_term = false;
      parts.epsilon = 1e-4;
      parts.policy_critic = merged ? PolicyCritic::merged : PolicyCritic::critic1;
      const auto analytic =
          actor_objective_and_grad(actor, critic, merged ? &critic2 : nullptr, action, states, parts);
      auto objective_at = [&](const std::vector<double>& theta) {
        Mlp probe(actor.spec(), ParameterSet{to_eigen(theta)});
        double total = 0.0;
        for (const auto& x : states) {
          const auto logits = probe.forward(x);
          std::vector<double> in(x);
          for (std::size_t r = 0; r < n; ++r) {
            const std::vector<double> row(logits.begin() + static_cast<long>(r * m),
                                          logits.begin() + static_cast<long>((r + 1) * m));
            for (double l : oracle::naive_log_softmax(row)) in.push_back(std::exp(l));
          }
          const auto z1 = critic.forward(in);
          std::vector<double> rho(natoms);
          const auto p1 = oracle::naive_log_softmax(z1);
          std::vector<double> q1(natoms);
          for (std::size_t k = 0; k < natoms; ++k) q1[k] = std::exp(p1[k]);
          auto cdf = oracle::naive_cdf(q1);
          if (merged) {
            const auto p2 = oracle::naive_log_softmax(critic2.forward(in));
            std::vector<double> q2(natoms);
            for (std::size_t k = 0; k < natoms; ++k) q2[k] = std::exp(p2[k]);
            const auto cdf2 = oracle::naive_cdf(q2);
            for (std::size_t k = 0; k < natoms; ++k) cdf[k] = std::max(cdf[k], cdf2[k]);
          }
          for (std::size_t k = 0; k + 1 < natoms; ++k) {
            total += std::log(1.0 - (1.0 - parts.epsilon) * cdf[k]);
          }
        }
        return total / static_cast<double>(states.size());
      };
      const auto fd = oracle::fd_gradient(objective_at, to_vec(actor.params().values), kStep);
      (merged ? pol_merged_grad : pol_grad).add(0.0, norm_rel_error(fd, to_vec(analytic.grad)));
    }

    // Entropy of softmax rows.
    {
      const auto logits = random_logits(n * m, 1.5, rng);
      const auto adist = ActionDistribution::from_logits(n, m, logits);
      auto entropy_at = [&](const std::vector<double>& l) {
        double h = 0.0;
        for (std::size_t r = 0; r < n; ++r) {
          h += oracle::naive_softmax_entropy(
              {l.begin() + static_cast<long>(r * m), l.begin() + static_cast<long>((r + 1) * m)});
        }
        return h;
      };
      const auto fd = oracle::fd_gradient(entropy_at, logits, kStep);
      ent_grad.add(0.0, norm_rel_error(fd, entropy_grad_logits(adist)));
      ent_value.add(entropy_at(logits), entropy(adist));
    }
  }
  out.push_back(ce_value.report("critic_ce_value", 1e-10));
  out.push_back(ce_grad.report("critic_ce_grad_fd", 1e-5));
  out.push_back(pol_grad.report("policy_grad_fd", 1e-5));
  out.push_back(pol_merged_grad.report("policy_grad_merged_fd", 1e-5));
  out.push_back(ent_value.report("entropy_value", 1e-10));
  out.push_back(ent_grad.report("entropy_grad_fd", 1e-5));
}

void mle_checks(std::vector<OracleReport>& out) {
  Collector fit;
  for (double delta : {0.1, 0.3, 0.5, 0.9}) {
    const auto f = gaussian_mle_fit(RewardRegion{delta});
    const auto g = oracle::mle_grid_search(delta, -0.5, 0.5, 1001, 0.9, 1.4, 2001);
    fit.add({g.mu, g.sigma_sq}, {f.mu, f.sigma_sq});
  }
  out.push_back(fit.report("gaussian_mle_vs_grid", 1e-3));
}

void chain_checks(std::vector<OracleReport>& out) {
  const ChainConfig cfg;
  const double gamma = 0.99;
  const std::size_t m = 51;
  std::vector<double> actions(m);
  for (std::size_t j = 0; j < m; ++j) {
    actions[j] = cfg.action_low +
                 (cfg.action_high - cfg.action_low) * static_cast<double>(j) / static_cast<double>(m - 1);
  }
  // Backward induction with the environment's own action classification.
  std::vector<double> v(cfg.length, 0.0);
  for (std::size_t s = cfg.length; s-- > 0;) {
    double best = -std::numeric_limits<double>::infinity();
    for (double a : actions) {
      double q = 0.0;
      switch (classify_chain_action(cfg, s, a)) {
        case ChainOutcome::advance:
          q = s + 1 < cfg.length ? gamma * v[s + 1] : cfg.final_probability * cfg.final_reward;
          break;
        case ChainOutcome::safe_exit: q = cfg.safe_reward; break;
        case ChainOutcome::trap: q = cfg.trap_reward; break;
      }
      best = std::max(best, q);
    }
    v[s] = best;
  }
  oracle::ChainParams p;
  p.length = cfg.length;
  p.band_half_width = cfg.band_half_width;
  p.safe_reward = cfg.safe_reward;
  p.trap_reward = cfg.trap_reward;
  p.final_reward = cfg.final_reward;
  p.final_probability = cfg.final_probability;
  const auto dp = oracle::value_iteration(oracle::chain_mdp(p, actions), gamma);
  out.push_back(oracle::compare("chain_values_vs_value_iteration", dp.values, v, 1e-9));
}

}  // namespace

VerifyHooks default_hooks() {
  VerifyHooks h;
  h.merge = [](const std::vector<double>& p1, const std::vector<double>& p2) {
    const ValueSupport s(-1.0, 1.0, p1.size());
    const auto m = clipped_merge(ValueDistribution(s, p1), ValueDistribution(s, p2));
    return std::vector<double>(m.probs().begin(), m.probs().end());
  };
  h.merge_cdf = [](const std::vector<double>& p1, const std::vector<double>& p2) {
    const ValueSupport s(-1.0, 1.0, p1.size());
    return clipped_merge(ValueDistribution(s, p1), ValueDistribution(s, p2)).cdf();
  };
  h.project = [](const std::vector<double>& probs, double r, double gamma, double v_min,
                 double v_max) {
    const ValueSupport s(v_min, v_max, probs.size());
    const auto z = bellman_project(ValueDistribution(s, probs), r, gamma, s);
    return std::vector<double>(z.probs().begin(), z.probs().end());
  };
  return h;
}

std::vector<oracle::OracleReport> run_verify(const VerifyHooks& hooks, std::uint64_t seed) {
  std::vector<OracleReport> out;
  Rng rng = make_rng(seed, Stream::eval, 0xC0FFEE);
  projection_checks(hooks, rng, out);
  merge_checks(hooks, rng, out);
  log_domain_checks(rng, out);
  gradient_checks(rng, out);
  mle_checks(out);
  chain_checks(out);
  return out;
}

std::vector<std::string> verify_check_names() {
  return {"projection_values",       "projection_mass",        "merge_cdf_is_max",
          "merge_probs",             "merge_expectation_bound", "merge_commutative",
          "merge_idempotent",        "log_sum_exp",            "log_softmax",
          "log_complement_cdf",      "log_domain_finite_at_700", "critic_ce_value",
          "critic_ce_grad_fd",       "policy_grad_fd",         "policy_grad_merged_fd",
          "entropy_value",           "entropy_grad_fd",        "gaussian_mle_vs_grid",
          "chain_values_vs_value_iteration"};
}

void write_reports(std::ostream& out, const std::vector<oracle::OracleReport>& reports) {
  out << "name,pass,max_abs_deviation,max_rel_deviation,tolerance,mode\n";
  for (const auto& r : reports) {
    out << r.name << ',' << (r.pass ? "true" : "false") << ',' << r.max_abs_deviation << ','
        << r.max_rel_deviation << ',' << r.tolerance << ',' << (r.relative ? "relative" : "absolute")
        << '\n';
  }
}

}  // namespace d2c
