#include "d2c/action_space.hpp"

#include <cmath>
#include <string>

#include "d2c/errors.hpp"

namespace d2c {

void ActionSpaceSpec::validate() const {
  if (n_dims < 1) throw InvalidInput("action space needs at least one dimension");
  if (m_atoms < 2) throw InvalidInput("action space needs at least two atoms per dimension");
  if (low.size() != n_dims || high.size() != n_dims) {
    throw InvalidInput("action bounds must have one entry per dimension");
  }
  for (std::size_t i = 0; i < n_dims; ++i) {
    if (!std::isfinite(low[i]) || !std::isfinite(high[i]) || !(low[i] < high[i])) {
      throw InvalidInput("action bounds require low < high in dimension " + std::to_string(i));
    }
  }
}

double ActionSpaceSpec::atom_value(std::size_t dim, std::size_t index) const {
  if (index + 1 == m_atoms) return high[dim];
  const double step = (high[dim] - low[dim]) / static_cast<double>(m_atoms - 1);
  return low[dim] + static_cast<double>(index) * step;
}

double ActionSpaceSpec::max_entropy() const {
  return static_cast<double>(n_dims) * std::log(static_cast<double>(m_atoms));
}

ActionDistribution::ActionDistribution(std::size_t n_dims, std::size_t m_atoms, RowMatrix probs)
    : probs_(std::move(probs)) {
  if (static_cast<std::size_t>(probs_.rows()) != n_dims ||
      static_cast<std::size_t>(probs_.cols()) != m_atoms) {
    throw InvalidInput("action distribution shape does not match n x m");
  }
  for (Eigen::Index r = 0; r < probs_.rows(); ++r) {
    double total = 0.0;
    for (Eigen::Index c = 0; c < probs_.cols(); ++c) {
      const double p = probs_(r, c);
      if (!std::isfinite(p) || p < 0.0) {
        throw InvalidInput("action distribution has a negative or non-finite entry");
      }
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) {
      throw InvalidInput("action distribution row " + std::to_string(r) + " does not sum to 1");
    }
  }
}

ActionDistribution ActionDistribution::from_logits(std::size_t n_dims, std::size_t m_atoms,
                                                   std::span<const double> logits) {
  if (logits.size() != n_dims * m_atoms) {
    throw InvalidInput("actor output length does not match n * m");
  }
  RowMatrix probs(n_dims, m_atoms);
  for (std::size_t r = 0; r < n_dims; ++r) {
    const double* row = logits.data() + r * m_atoms;
    double x_max = row[0];
    for (std::size_t c = 1; c < m_atoms; ++c) x_max = std::max(x_max, row[c]);
    if (!std::isfinite(x_max)) throw InvalidInput("actor produced non-finite logits");
    double total = 0.0;
    for (std::size_t c = 0; c < m_atoms; ++c) {
      const double e = std::exp(row[c] - x_max);
      probs(r, c) = e;
      total += e;
    }
    probs.row(r) /= total;
  }
  return ActionDistribution(n_dims, m_atoms, std::move(probs));
}

ActionDistribution ActionDistribution::uniform(std::size_t n_dims, std::size_t m_atoms) {
  RowMatrix probs = RowMatrix::Constant(n_dims, m_atoms, 1.0 / static_cast<double>(m_atoms));
  return ActionDistribution(n_dims, m_atoms, std::move(probs));
}

std::vector<double> ActionDistribution::flatten() const {
  return std::vector<double>(probs_.data(), probs_.data() + probs_.size());
}

RowMatrix ActionSample::one_hot(std::size_t m_atoms) const {
  RowMatrix out = RowMatrix::Zero(static_cast<Eigen::Index>(indices.size()),
                                  static_cast<Eigen::Index>(m_atoms));
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= m_atoms) throw InvalidInput("action index out of range");
    out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(indices[r])) = 1.0;
  }
  return out;
}

SampledAction sample(const ActionDistribution& adist, Rng& rng) {
  SampledAction out;
  out.action.indices.resize(adist.n_dims());
  const auto& p = adist.probs();
  for (std::size_t r = 0; r < adist.n_dims(); ++r) {
    const double u = uniform01(rng);
    double acc = 0.0;
    // Fall back to the last atom with positive mass if round-off leaves u
    // above the accumulated total.
    std::size_t pick = adist.m_atoms();
    std::size_t last_positive = 0;
    for (std::size_t c = 0; c < adist.m_atoms(); ++c) {
      const double pc = p(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
      if (pc > 0.0) last_positive = c;
      acc += pc;
      if (u < acc && pc > 0.0) {
        pick = c;
        break;
      }
    }
    if (pick == adist.m_atoms()) pick = last_positive;
    out.action.indices[r] = pick;
    out.log_prob += std::log(p(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(pick)));
  }
  return out;
}

double log_prob(const ActionDistribution& adist, const ActionSample& action) {
  if (action.indices.size() != adist.n_dims()) {
    throw InvalidInput("action sample has the wrong number of dimensions");
  }
  double acc = 0.0;
  for (std::size_t r = 0; r < action.indices.size(); ++r) {
    if (action.indices[r] >= adist.m_atoms()) throw InvalidInput("action index out of range");
    acc += std::log(adist(r, action.indices[r]));
  }
  return acc;
}

ActionSample argmax_action(const ActionDistribution& adist) {
  ActionSample out;
  out.indices.resize(adist.n_dims());
  for (std::size_t r = 0; r < adist.n_dims(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < adist.m_atoms(); ++c) {
      if (adist(r, c) > adist(r, best)) best = c;
    }
    out.indices[r] = best;
  }
  return out;
}

std::vector<double> decode(const ActionSpaceSpec& spec, const ActionSample& action) {
  if (action.indices.size() != spec.n_dims) {
    throw InvalidInput("action sample has the wrong number of dimensions");
  }
  std::vector<double> out(spec.n_dims);
  for (std::size_t i = 0; i < spec.n_dims; ++i) {
    if (action.indices[i] >= spec.m_atoms) throw InvalidInput("action index out of range");
    out[i] = spec.atom_value(i, action.indices[i]);
  }
  return out;
}

double entropy(const ActionDistribution& adist) {
  double h = 0.0;
  const auto& p = adist.probs();
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double v = p.data()[i];
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

std::vector<double> entropy_grad_logits(const ActionDistribution& adist) {
  // For one softmax row: dH/dx_j = -p_j (log p_j + H_row).
  const auto& p = adist.probs();
  std::vector<double> grad(static_cast<std::size_t>(p.size()), 0.0);
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    double h_row = 0.0;
    for (Eigen::Index c = 0; c < p.cols(); ++c) {
      if (p(r, c) > 0.0) h_row -= p(r, c) * std::log(p(r, c));
    }
    for (Eigen::Index c = 0; c < p.cols(); ++c) {
      const double v = p(r, c);
      if (v > 0.0) {
        grad[static_cast<std::size_t>(r * p.cols() + c)] = -v * (std::log(v) + h_row);
      }
    }
  }
  return grad;
}

}  // namespace d2c
