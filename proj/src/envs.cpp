#include "d2c/envs.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <string>

#include "d2c/errors.hpp"

namespace d2c {

void EnvSpec::validate() const {
  if (state_dim < 1 || action_dim < 1) throw InvalidInput("environment dimensions must be >= 1");
  if (action_low.size() != action_dim || action_high.size() != action_dim) {
    throw InvalidInput("environment action bounds must match action_dim");
  }
  if (horizon < 1) throw InvalidInput("environment horizon must be >= 1");
  if (!(reward_bound > 0.0)) throw InvalidInput("environment reward bound must be positive");
}

double normalize_reward(double raw, double bound) {
  if (!(bound > 0.0)) throw InvalidInput("reward bound must be positive");
  return raw / bound;
}

namespace {

double clamp_to(double a, double lo, double hi) { return std::clamp(a, lo, hi); }

std::vector<double> clamp_action(std::span<const double> action, const EnvSpec& spec) {
  if (action.size() != spec.action_dim) throw InvalidInput("action has the wrong dimension");
  std::vector<double> out(action.begin(), action.end());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = clamp_to(out[i], spec.action_low[i], spec.action_high[i]);
  }
  return out;
}

bool bernoulli(Rng& rng, double p) { return uniform01(rng) < p; }

}  // namespace

// ---------------------------------------------------------------------------
// Trap Cheese

bool in_cheese_region(double action, double delta) {
  return (action >= -1.0 - delta && action <= -1.0 + delta) ||
         (action >= 1.0 - delta && action <= 1.0 + delta);
}

double trap_cheese_q(double action, double delta) {
  return in_cheese_region(action, delta) ? 0.5 : -1.0;
}

double trap_cheese_step(double action, double delta, Rng& rng) {
  if (!in_cheese_region(action, delta)) return -1.0;
  return bernoulli(rng, 0.5) ? 1.0 : 0.0;
}

TrapCheeseEnv::TrapCheeseEnv(double delta, double low, double high) : delta_(delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw InvalidInput("trap cheese delta must lie in (0, 1)");
  spec_.state_dim = 1;
  spec_.action_dim = 1;
  spec_.action_low = {low};
  spec_.action_high = {high};
  spec_.horizon = 1;
  spec_.reward_bound = 1.0;
  spec_.validate();
}

std::vector<double> TrapCheeseEnv::reset(Rng&) { return {1.0}; }

StepResult TrapCheeseEnv::step(std::span<const double> action, Rng& rng) {
  const auto a = clamp_action(action, spec_);
  return StepResult{{1.0}, trap_cheese_step(a[0], delta_, rng), true};
}

std::unique_ptr<Environment> TrapCheeseEnv::clone() const {
  return std::make_unique<TrapCheeseEnv>(*this);
}

QuadraticBanditEnv::QuadraticBanditEnv(double bound) {
  spec_.state_dim = 1;
  spec_.action_dim = 1;
  spec_.action_low = {-bound};
  spec_.action_high = {bound};
  spec_.horizon = 1;
  spec_.reward_bound = bound * bound;
  spec_.validate();
}

std::vector<double> QuadraticBanditEnv::reset(Rng&) { return {1.0}; }

StepResult QuadraticBanditEnv::step(std::span<const double> action, Rng&) {
  const auto a = clamp_action(action, spec_);
  double r = 0.0;
  for (double v : a) r -= v * v;
  return StepResult{{1.0}, r, true};
}

std::unique_ptr<Environment> QuadraticBanditEnv::clone() const {
  return std::make_unique<QuadraticBanditEnv>(*this);
}

// ---------------------------------------------------------------------------
// Landscapes

bool Box::contains(std::span<const double> point) const {
  if (point.size() != low.size()) return false;
  for (std::size_t i = 0; i < point.size(); ++i) {
    if (point[i] < low[i] || point[i] > high[i]) return false;
  }
  return true;
}

double Box::measure() const {
  double m = 1.0;
  for (std::size_t i = 0; i < low.size(); ++i) m *= std::max(0.0, high[i] - low[i]);
  return m;
}

std::vector<double> Box::centroid() const {
  std::vector<double> c(low.size());
  for (std::size_t i = 0; i < low.size(); ++i) c[i] = 0.5 * (low[i] + high[i]);
  return c;
}

bool Grain::contains(std::span<const double> point) const {
  if (point.size() != center.size()) return false;
  double d2 = 0.0;
  for (std::size_t i = 0; i < point.size(); ++i) d2 += (point[i] - center[i]) * (point[i] - center[i]);
  const double r = 0.5 * diameter;
  return d2 <= r * r;
}

namespace {

void check_box(const Box& b, std::size_t dim, const std::string& name) {
  if (b.low.size() != dim || b.high.size() != dim) {
    throw InvalidInput(name + " must have " + std::to_string(dim) + " coordinates");
  }
  for (std::size_t i = 0; i < dim; ++i) {
    if (!std::isfinite(b.low[i]) || !std::isfinite(b.high[i]) || !(b.low[i] < b.high[i])) {
      throw InvalidInput(name + " has zero measure or an inverted extent");
    }
  }
}

bool interiors_overlap(const Box& a, const Box& b) {
  for (std::size_t i = 0; i < a.low.size(); ++i) {
    if (std::min(a.high[i], b.high[i]) <= std::max(a.low[i], b.low[i])) return false;
  }
  return true;
}

// The ball lies inside the box iff its bounding cube does.
bool grain_inside(const Grain& g, const Box& b) {
  const double r = 0.5 * g.diameter;
  for (std::size_t i = 0; i < g.center.size(); ++i) {
    if (g.center[i] - r < b.low[i] || g.center[i] + r > b.high[i]) return false;
  }
  return true;
}

}  // namespace

void HRHRLandscape::validate_shape() const {
  if (dimension != 1 && dimension != 2) throw InvalidInput("landscape dimension must be 1 or 2");
  check_box(action_bounds, dimension, "action_bounds");
  check_box(omega1, dimension, "omega1");
  check_box(omega2, dimension, "omega2");
  for (const auto& p : plateaus) check_box(p.box, dimension, "plateau");
  for (const auto& g : grains) {
    if (g.center.size() != dimension) throw InvalidInput("grain centre has the wrong dimension");
    if (!(g.diameter > 0.0)) throw InvalidInput("grain diameter must be positive");
  }
}

void HRHRLandscape::validate() const {
  validate_shape();
  if (interiors_overlap(omega1, omega2)) throw InvalidInput("omega1 and omega2 overlap");
  for (const auto& g : grains) {
    if (!grain_inside(g, omega1)) throw InvalidInput("every grain must lie within omega1");
  }
}

double HRHRLandscape::q(std::span<const double> action) const {
  double best_grain = -std::numeric_limits<double>::infinity();
  for (const auto& g : grains) {
    if (g.contains(action)) best_grain = std::max(best_grain, g.height);
  }
  if (std::isfinite(best_grain)) return best_grain;
  double value = base;
  for (const auto& p : plateaus) {
    if (p.box.contains(action)) value = p.level;
  }
  return value;
}

double HRHRLandscape::sample_reward(std::span<const double> action, Rng& rng) const {
  bool in_grain = false;
  for (const auto& g : grains) in_grain = in_grain || g.contains(action);
  const double value = q(action);
  if (!in_grain || !stochastic_grains) return value;
  return bernoulli(rng, 0.5) ? 2.0 * value : 0.0;
}

double HRHRLandscape::reward_bound() const {
  double b = std::abs(base);
  for (const auto& p : plateaus) b = std::max(b, std::abs(p.level));
  for (const auto& g : grains) {
    b = std::max(b, (stochastic_grains ? 2.0 : 1.0) * std::abs(g.height));
  }
  return b > 0.0 ? b : 1.0;
}

double HRHRLandscape::max_grain_diameter() const {
  double d = 0.0;
  for (const auto& g : grains) d = std::max(d, g.diameter);
  return d;
}

namespace {

struct RegionStats {
  double sup = -std::numeric_limits<double>::infinity();
  double mean = 0.0;
};

RegionStats scan_region(const HRHRLandscape& land, const Box& box, std::size_t resolution) {
  RegionStats s;
  double total = 0.0;
  std::size_t count = 0;
  const auto res = static_cast<double>(resolution);
  auto cell = [&](std::size_t d, std::size_t i) {
    return box.low[d] + (static_cast<double>(i) + 0.5) * (box.high[d] - box.low[d]) / res;
  };
  std::vector<double> point(land.dimension);
  if (land.dimension == 1) {
    for (std::size_t i = 0; i < resolution; ++i) {
      point[0] = cell(0, i);
      const double v = land.q(point);
      s.sup = std::max(s.sup, v);
      total += v;
      ++count;
    }
  } else {
    for (std::size_t i = 0; i < resolution; ++i) {
      point[0] = cell(0, i);
      for (std::size_t k = 0; k < resolution; ++k) {
        point[1] = cell(1, k);
        const double v = land.q(point);
        s.sup = std::max(s.sup, v);
        total += v;
        ++count;
      }
    }
  }
  s.mean = total / static_cast<double>(count);
  return s;
}

}  // namespace

HrhrVerdict is_hrhr(const HRHRLandscape& landscape, std::size_t resolution) {
  if (resolution < 100) throw InvalidInput("is_hrhr needs at least 100 grid points per dimension");
  landscape.validate_shape();
  const auto r1 = scan_region(landscape, landscape.omega1, resolution);
  const auto r2 = scan_region(landscape, landscape.omega2, resolution);
  HrhrVerdict v;
  v.sup_omega1 = r1.sup;
  v.sup_omega2 = r2.sup;
  v.mean_omega1 = r1.mean;
  v.mean_omega2 = r2.mean;
  v.sup_condition = r1.sup > r2.sup;
  v.mean_condition = r1.mean < r2.mean;
  v.is_hrhr = v.sup_condition && v.mean_condition;
  return v;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

template <typename T>
T field(const nlohmann::json& j, const std::string& key, const std::string& path) {
  if (!j.contains(key)) throw ConfigError(path + "." + key, "missing field");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + "." + key, e.what());
  }
}

Box box_from_json(const nlohmann::json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path, "expected an object with low/high");
  return Box{field<std::vector<double>>(j, "low", path), field<std::vector<double>>(j, "high", path)};
}

nlohmann::json box_to_json(const Box& b) { return {{"low", b.low}, {"high", b.high}}; }

}  // namespace

HRHRLandscape landscape_from_json(const nlohmann::json& j) {
  const std::string root = "landscape";
  if (!j.is_object()) throw ConfigError(root, "expected an object");
  HRHRLandscape l;
  l.dimension = field<std::size_t>(j, "dimension", root);
  l.base = field<double>(j, "base", root);
  if (j.contains("plateaus")) {
    std::size_t i = 0;
    for (const auto& p : j.at("plateaus")) {
      const std::string path = root + ".plateaus[" + std::to_string(i++) + "]";
      l.plateaus.push_back(Plateau{box_from_json(p, path), field<double>(p, "level", path)});
    }
  }
  if (j.contains("grains")) {
    std::size_t i = 0;
    for (const auto& g : j.at("grains")) {
      const std::string path = root + ".grains[" + std::to_string(i++) + "]";
      l.grains.push_back(Grain{field<std::vector<double>>(g, "center", path),
                               field<double>(g, "diameter", path), field<double>(g, "height", path)});
    }
  }
  if (!j.contains("omega1")) throw ConfigError(root + ".omega1", "missing field");
  if (!j.contains("omega2")) throw ConfigError(root + ".omega2", "missing field");
  if (!j.contains("action_bounds")) throw ConfigError(root + ".action_bounds", "missing field");
  l.omega1 = box_from_json(j.at("omega1"), root + ".omega1");
  l.omega2 = box_from_json(j.at("omega2"), root + ".omega2");
  l.action_bounds = box_from_json(j.at("action_bounds"), root + ".action_bounds");
  if (j.contains("stochastic_grains")) {
    l.stochastic_grains = field<bool>(j, "stochastic_grains", root);
  }
  return l;
}

nlohmann::json landscape_to_json(const HRHRLandscape& l) {
  nlohmann::json j;
  j["dimension"] = l.dimension;
  j["base"] = l.base;
  j["plateaus"] = nlohmann::json::array();
  for (const auto& p : l.plateaus) {
    auto pj = box_to_json(p.box);
    pj["level"] = p.level;
    j["plateaus"].push_back(pj);
  }
  j["grains"] = nlohmann::json::array();
  for (const auto& g : l.grains) {
    j["grains"].push_back({{"center", g.center}, {"diameter", g.diameter}, {"height", g.height}});
  }
  j["omega1"] = box_to_json(l.omega1);
  j["omega2"] = box_to_json(l.omega2);
  j["action_bounds"] = box_to_json(l.action_bounds);
  j["stochastic_grains"] = l.stochastic_grains;
  return j;
}

void export_landscape_csv(const HRHRLandscape& landscape, std::size_t resolution,
                          std::ostream& out) {
  landscape.validate_shape();
  if (resolution < 2) throw InvalidInput("landscape export needs at least 2 points per dimension");
  const auto& b = landscape.action_bounds;
  auto coord = [&](std::size_t d, std::size_t i) {
    if (i + 1 == resolution) return b.high[d];
    return b.low[d] + static_cast<double>(i) * (b.high[d] - b.low[d]) /
                          static_cast<double>(resolution - 1);
  };
  out.precision(17);
  std::vector<double> point(landscape.dimension);
  if (landscape.dimension == 1) {
    out << "a1,q\n";
    for (std::size_t i = 0; i < resolution; ++i) {
      point[0] = coord(0, i);
      out << point[0] << ',' << landscape.q(point) << '\n';
    }
    return;
  }
  out << "a1,a2,q\n";
  for (std::size_t i = 0; i < resolution; ++i) {
    point[0] = coord(0, i);
    for (std::size_t k = 0; k < resolution; ++k) {
      point[1] = coord(1, k);
      out << point[0] << ',' << point[1] << ',' << landscape.q(point) << '\n';
    }
  }
}

HRHRLandscape trap_cheese_landscape(double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw InvalidInput("trap cheese delta must lie in (0, 1)");
  HRHRLandscape l;
  l.dimension = 1;
  l.base = -1.0;
  l.grains = {Grain{{-1.0}, 2.0 * delta, 0.5}, Grain{{1.0}, 2.0 * delta, 0.5}};
  l.plateaus = {Plateau{Box{{1.6}, {2.0}}, 0.2}};
  l.omega1 = Box{{-1.5}, {1.5}};
  l.omega2 = Box{{1.6}, {2.0}};
  l.action_bounds = Box{{-2.0}, {2.0}};
  l.validate();
  return l;
}

HRHRLandscape grain_probe_landscape(double grain_diameter) {
  if (!(grain_diameter > 0.0 && grain_diameter < 1.0)) {
    throw InvalidInput("probe grain diameter must lie in (0, 1)");
  }
  HRHRLandscape l;
  l.dimension = 1;
  l.base = -1.0;
  l.plateaus = {Plateau{Box{{-1.0}, {0.0}}, 0.2}, Plateau{Box{{0.0}, {1.0}}, -0.5}};
  l.grains = {Grain{{0.5 * grain_diameter}, grain_diameter, 1.0}};
  l.omega1 = Box{{0.0}, {1.0}};
  l.omega2 = Box{{-1.0}, {0.0}};
  l.action_bounds = Box{{-2.0}, {2.0}};
  l.validate();
  return l;
}

LandscapeBanditEnv::LandscapeBanditEnv(HRHRLandscape landscape) : landscape_(std::move(landscape)) {
  landscape_.validate();
  spec_.state_dim = 1;
  spec_.action_dim = landscape_.dimension;
  spec_.action_low = landscape_.action_bounds.low;
  spec_.action_high = landscape_.action_bounds.high;
  spec_.horizon = 1;
  spec_.reward_bound = landscape_.reward_bound();
  spec_.validate();
}

std::vector<double> LandscapeBanditEnv::reset(Rng&) { return {1.0}; }

StepResult LandscapeBanditEnv::step(std::span<const double> action, Rng& rng) {
  const auto a = clamp_action(action, spec_);
  return StepResult{{1.0}, landscape_.sample_reward(a, rng), true};
}

std::unique_ptr<Environment> LandscapeBanditEnv::clone() const {
  return std::make_unique<LandscapeBanditEnv>(*this);
}

// ---------------------------------------------------------------------------
// Chain

void ChainConfig::validate() const {
  if (length < 1) throw InvalidInput("chain length must be >= 1");
  if (!(band_half_width > 0.0 && band_half_width < 1.0)) {
    throw InvalidInput("chain band half-width must lie in (0, 1)");
  }
  if (!(action_low <= -1.0 - band_half_width && action_high >= 1.0 + band_half_width)) {
    throw InvalidInput("chain action range must contain both advance bands");
  }
  if (!(final_probability >= 0.0 && final_probability <= 1.0)) {
    throw InvalidInput("chain final probability must lie in [0, 1]");
  }
}

double ChainConfig::band_center(std::size_t state) const { return state % 2 == 0 ? 1.0 : -1.0; }

ChainOutcome classify_chain_action(const ChainConfig& config, std::size_t state, double action) {
  const double c = config.band_center(state);
  if (std::abs(action - c) <= config.band_half_width) return ChainOutcome::advance;
  const bool advance_side = c > 0.0 ? action > 0.0 : action < 0.0;
  return advance_side ? ChainOutcome::trap : ChainOutcome::safe_exit;
}

ChainStep chain_step(const ChainConfig& config, std::size_t state, double action, Rng& rng) {
  if (state >= config.length) throw InvalidInput("chain state out of range");
  switch (classify_chain_action(config, state, action)) {
    case ChainOutcome::advance:
      if (state + 1 == config.length) {
        const bool paid = bernoulli(rng, config.final_probability);
        return ChainStep{state, paid ? config.final_reward : 0.0, true};
      }
      return ChainStep{state + 1, 0.0, false};
    case ChainOutcome::safe_exit:
      return ChainStep{state, config.safe_reward, true};
    case ChainOutcome::trap:
      break;
  }
  return ChainStep{state, config.trap_reward, true};
}

ChainEnv::ChainEnv(ChainConfig config) : config_(config) {
  config_.validate();
  spec_.state_dim = config_.length;
  spec_.action_dim = 1;
  spec_.action_low = {config_.action_low};
  spec_.action_high = {config_.action_high};
  spec_.horizon = config_.length;
  spec_.reward_bound = std::max({std::abs(config_.safe_reward), std::abs(config_.trap_reward),
                                 std::abs(config_.final_reward)});
  spec_.validate();
}

std::vector<double> ChainEnv::observation(std::size_t state) const {
  std::vector<double> x(config_.length, 0.0);
  x[state] = 1.0;
  return x;
}

std::vector<double> ChainEnv::reset(Rng&) {
  state_ = 0;
  return observation(state_);
}

StepResult ChainEnv::step(std::span<const double> action, Rng& rng) {
  const auto a = clamp_action(action, spec_);
  const auto s = chain_step(config_, state_, a[0], rng);
  state_ = s.next_state;
  return StepResult{observation(state_), s.reward, s.done};
}

std::unique_ptr<Environment> ChainEnv::clone() const { return std::make_unique<ChainEnv>(*this); }

}  // namespace d2c
