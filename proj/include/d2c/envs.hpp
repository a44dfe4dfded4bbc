#pragma once

// Desk-scale environments: the Trap Cheese bandit, configurable HRHR
// landscape bandits and a short chain task whose every state is an HRHR
// decision.

#include <cstddef>
#include <iosfwd>
#include <memory>
#include <span>
#include <vector>

#include "json.hpp"

#include "d2c/random.hpp"

namespace d2c {

struct EnvSpec {
  std::size_t state_dim = 1;
  std::size_t action_dim = 1;
  std::vector<double> action_low;
  std::vector<double> action_high;
  std::size_t horizon = 1;
  /// sup |raw reward|; rewards are divided by it before learning.
  double reward_bound = 1.0;

  void validate() const;
};

struct StepResult {
  std::vector<double> next_state;
  double reward = 0.0;
  bool done = false;
};

class Environment {
 public:
  virtual ~Environment() = default;
  virtual const EnvSpec& spec() const = 0;
  virtual std::vector<double> reset(Rng& rng) = 0;
  /// `action` is in actuator units and is clamped to the declared bounds.
  virtual StepResult step(std::span<const double> action, Rng& rng) = 0;
  virtual std::unique_ptr<Environment> clone() const = 0;
};

/// raw / bound. Throws InvalidInput when bound <= 0.
double normalize_reward(double raw, double bound);

// ---------------------------------------------------------------------------
// Trap Cheese

/// a in [-1-delta, -1+delta] U [1-delta, 1+delta].
bool in_cheese_region(double action, double delta);

/// Expected reward: 0.5 inside the cheese region, -1 elsewhere.
double trap_cheese_q(double action, double delta);

/// One episode: -1 outside the cheese region; inside it 1.0 or 0.0 with equal
/// probability (the cheese may have expired).
double trap_cheese_step(double action, double delta, Rng& rng);

class TrapCheeseEnv final : public Environment {
 public:
  explicit TrapCheeseEnv(double delta = 0.3, double low = -2.0, double high = 2.0);

  const EnvSpec& spec() const override { return spec_; }
  std::vector<double> reset(Rng& rng) override;
  StepResult step(std::span<const double> action, Rng& rng) override;
  std::unique_ptr<Environment> clone() const override;

  double delta() const noexcept { return delta_; }

 private:
  double delta_;
  EnvSpec spec_;
};

/// Single-state bandit with deterministic reward -(a . a); used as a sanity
/// task for the Gaussian baseline.
class QuadraticBanditEnv final : public Environment {
 public:
  explicit QuadraticBanditEnv(double bound = 2.0);

  const EnvSpec& spec() const override { return spec_; }
  std::vector<double> reset(Rng& rng) override;
  StepResult step(std::span<const double> action, Rng& rng) override;
  std::unique_ptr<Environment> clone() const override;

 private:
  EnvSpec spec_;
};

// ---------------------------------------------------------------------------
// HRHR landscapes

/// Axis-aligned closed box.
struct Box {
  std::vector<double> low;
  std::vector<double> high;

  bool contains(std::span<const double> point) const;
  double measure() const;
  std::vector<double> centroid() const;
  std::size_t dimension() const noexcept { return low.size(); }
};

/// High-reward grain: a closed Euclidean ball of the given diameter.
struct Grain {
  std::vector<double> center;
  double diameter = 0.1;
  double height = 1.0;

  bool contains(std::span<const double> point) const;
};

struct Plateau {
  Box box;
  double level = 0.0;
};

/// Expected-return landscape Q(a) over a 1-D or 2-D action box. Grains take
/// precedence over plateaus; later plateaus override earlier ones; `base`
/// applies elsewhere.
struct HRHRLandscape {
  std::size_t dimension = 1;
  double base = -1.0;
  std::vector<Plateau> plateaus;
  std::vector<Grain> grains;
  Box omega1;  // high-risk-high-return region
  Box omega2;  // low-risk-stable-return region
  Box action_bounds;
  /// In-grain rewards pay 2 * height or 0 with equal probability; flat
  /// regions pay their level deterministically.
  bool stochastic_grains = true;

  /// Dimensions agree, boxes have positive measure, grain diameters are
  /// positive. Enough for analysis (is_hrhr, export, probes).
  void validate_shape() const;
  /// validate_shape plus: grains lie within omega1 and omega1, omega2 have
  /// disjoint interiors. Required to build an environment.
  void validate() const;

  double q(std::span<const double> action) const;
  double sample_reward(std::span<const double> action, Rng& rng) const;
  /// Largest reward magnitude the noise model can produce.
  double reward_bound() const;
  double max_grain_diameter() const;
};

struct HrhrVerdict {
  double sup_omega1 = 0.0;
  double sup_omega2 = 0.0;
  double mean_omega1 = 0.0;
  double mean_omega2 = 0.0;
  bool sup_condition = false;   // sup over omega1 > sup over omega2
  bool mean_condition = false;  // uniform mean over omega1 < over omega2
  bool is_hrhr = false;
};

/// Grid maxima and midpoint Riemann means over each region, `resolution`
/// points per dimension (>= 100). Riemann error is O(1 / resolution).
HrhrVerdict is_hrhr(const HRHRLandscape& landscape, std::size_t resolution = 1001);

HRHRLandscape landscape_from_json(const nlohmann::json& j);
nlohmann::json landscape_to_json(const HRHRLandscape& landscape);

/// Writes `a1[,a2],q` rows on a `resolution`-per-dimension grid spanning the
/// action bounds (endpoints included).
void export_landscape_csv(const HRHRLandscape& landscape, std::size_t resolution,
                          std::ostream& out);

/// Trap Cheese as a landscape: grains of diameter 2*delta and height 0.5 at
/// +-1 on base -1, omega1 = [-1.5, 1.5], plus a 0.2 plateau on [1.6, 2] that
/// serves as omega2.
HRHRLandscape trap_cheese_landscape(double delta);

/// Landscape used to probe Gaussian gradient preference: omega2 = [-1, 0] at
/// level 0.2, omega1 = [0, 1] at level -0.5 with a grain of the given
/// diameter and height 1 touching the shared boundary at 0.
HRHRLandscape grain_probe_landscape(double grain_diameter);

class LandscapeBanditEnv final : public Environment {
 public:
  explicit LandscapeBanditEnv(HRHRLandscape landscape);

  const EnvSpec& spec() const override { return spec_; }
  std::vector<double> reset(Rng& rng) override;
  StepResult step(std::span<const double> action, Rng& rng) override;
  std::unique_ptr<Environment> clone() const override;

  const HRHRLandscape& landscape() const noexcept { return landscape_; }

 private:
  HRHRLandscape landscape_;
  EnvSpec spec_;
};

// ---------------------------------------------------------------------------
// Chain task

/// In state s the advance band is centred at +1 for even s and -1 for odd s.
/// Choosing it moves to s + 1 with reward 0; in the last state it pays the
/// cheese reward (1 or 0 with equal probability) and ends the episode. Any
/// other action on the advance side of zero is a trap (-1, episode ends); an
/// action on the other side (zero included) takes the safe exit.
struct ChainConfig {
  std::size_t length = 5;
  double band_half_width = 0.3;
  double safe_reward = 0.1;
  double trap_reward = -1.0;
  double final_reward = 1.0;
  double final_probability = 0.5;
  double action_low = -2.0;
  double action_high = 2.0;

  void validate() const;
  double band_center(std::size_t state) const;
};

enum class ChainOutcome { advance, safe_exit, trap };

ChainOutcome classify_chain_action(const ChainConfig& config, std::size_t state, double action);

struct ChainStep {
  std::size_t next_state = 0;
  double reward = 0.0;
  bool done = false;
};

ChainStep chain_step(const ChainConfig& config, std::size_t state, double action, Rng& rng);

class ChainEnv final : public Environment {
 public:
  explicit ChainEnv(ChainConfig config = {});

  const EnvSpec& spec() const override { return spec_; }
  std::vector<double> reset(Rng& rng) override;
  StepResult step(std::span<const double> action, Rng& rng) override;
  std::unique_ptr<Environment> clone() const override;

  const ChainConfig& config() const noexcept { return config_; }
  std::size_t state() const noexcept { return state_; }
  /// One-hot observation of a state index.
  std::vector<double> observation(std::size_t state) const;

 private:
  ChainConfig config_;
  EnvSpec spec_;
  std::size_t state_ = 0;
};

}  // namespace d2c
