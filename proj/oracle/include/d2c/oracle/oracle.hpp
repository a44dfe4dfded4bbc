#pragma once

// Brute-force reference implementations for tests and the verify command.
// Nothing here includes or links the main library; inputs are plain vectors.

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace d2c::oracle {

struct OracleReport {
  std::string name;
  std::vector<double> oracle;
  std::vector<double> candidate;
  double max_abs_deviation = 0.0;
  double max_rel_deviation = 0.0;
  double tolerance = 0.0;
  bool relative = false;
  bool pass = false;
};

/// Compares element-wise. With `relative`, each deviation is divided by
/// max(|oracle|, |candidate|, 1e-12) before the tolerance test. Length
/// mismatch or a non-finite value fails.
OracleReport compare(std::string name, std::vector<double> oracle, std::vector<double> candidate,
                     double tolerance, bool relative = false);

/// Atom i of an evenly spaced support.
double support_atom(double v_min, double v_max, std::size_t n, std::size_t i);

/// Direct double loop over target atoms i and source atoms j:
/// p_i = sum_j [1 - |clamp(r + gamma z_j) - z_i| / dz]_0^1 q_j.
std::vector<double> naive_project(const std::vector<double>& probs, double reward, double gamma,
                                  double v_min, double v_max);

/// c_k = max(sum_{i<=k} p1_i, sum_{i<=k} p2_i); p_0 = c_0, p_k = c_k - c_{k-1}.
std::vector<double> naive_merge(const std::vector<double>& p1, const std::vector<double>& p2);

/// Running sums in index order.
std::vector<double> naive_cdf(const std::vector<double>& p);

/// Central differences per coordinate; step must lie in [1e-7, 1e-4].
std::vector<double> fd_gradient(const std::function<double(const std::vector<double>&)>& f,
                                std::vector<double> params, double step);

// Long-double evaluations without max-shifting; only for well-conditioned input.
double naive_log_sum_exp(const std::vector<double>& xs);
std::vector<double> naive_log_softmax(const std::vector<double>& xs);
double naive_log_complement_cdf(const std::vector<double>& logits, std::size_t k, double epsilon);
double naive_softmax_entropy(const std::vector<double>& logits);
double naive_cross_entropy(const std::vector<double>& target, const std::vector<double>& logits);

// ---------------------------------------------------------------------------
// Tabular dynamic programming

struct Outcome {
  double probability = 1.0;
  double reward = 0.0;
  bool terminal = true;
  std::size_t next_state = 0;
};

/// outcomes[s][a] lists the possible results of action a in state s.
struct TabularMdp {
  std::vector<std::vector<std::vector<Outcome>>> outcomes;
};

struct DpResult {
  std::vector<double> values;
  std::vector<std::size_t> policy;  // greedy, lowest index on ties
  std::size_t sweeps = 0;
};

/// Gauss-Seidel-free synchronous value iteration to a sup-norm change below
/// 1e-10. Throws std::runtime_error after 1e5 sweeps without convergence.
DpResult value_iteration(const TabularMdp& mdp, double gamma);

struct ChainParams {
  std::size_t length = 5;
  double band_half_width = 0.3;
  double safe_reward = 0.1;
  double trap_reward = -1.0;
  double final_reward = 1.0;
  double final_probability = 0.5;
};

/// The chain task over a list of action values: advance band centred at +1
/// in even states and -1 in odd states, traps on the rest of the advance
/// side, safe exit on the other side (zero included).
TabularMdp chain_mdp(const ChainParams& params, const std::vector<double>& action_values);

// ---------------------------------------------------------------------------
// Maximum likelihood over the two-band region

/// -4 delta log(sqrt(2 pi) sigma) - (2 delta / (3 sigma^2)) (3 (1 + mu^2) + delta^2).
double region_log_likelihood(double delta, double mu, double sigma);

struct GridMle {
  double mu = 0.0;
  double sigma_sq = 0.0;
  double value = 0.0;
};

/// Exhaustive search over an n_mu x n_sigma grid (endpoints included).
GridMle mle_grid_search(double delta, double mu_lo, double mu_hi, std::size_t n_mu,
                        double sigma_lo, double sigma_hi, std::size_t n_sigma);

/// Mean of q over a list of equally likely action values.
double uniform_grid_expectation(const std::vector<double>& actions,
                                const std::function<double(double)>& q);

}  // namespace d2c::oracle
