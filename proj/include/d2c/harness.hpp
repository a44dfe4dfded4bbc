#pragma once

// Experiment orchestration: configuration, seeded runs, metrics CSV,
// manifests, checkpoints, evaluation and landscape loading.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "d2c/agent.hpp"
#include "d2c/baseline_gaussian.hpp"
#include "d2c/envs.hpp"

namespace d2c {

inline constexpr int kMetricsSchemaVersion = 1;
inline constexpr const char* kCodeVersion = "0.1.0";

enum class EnvKind { trap_cheese, chain, landscape, quadratic };
enum class Algorithm { d2c, gaussian, normal_actor };

struct EnvConfig {
  EnvKind kind = EnvKind::trap_cheese;
  double delta = 0.3;
  double action_low = -2.0;
  double action_high = 2.0;
  ChainConfig chain;
  std::optional<HRHRLandscape> landscape;

  bool operator==(const EnvConfig& o) const;
};

struct ExperimentConfig {
  std::string name = "trap_cheese";
  EnvConfig env;
  Algorithm algorithm = Algorithm::d2c;
  AgentConfig agent;
  GaussianBaselineConfig baseline;
  std::size_t total_steps = 5000;
  std::size_t eval_every = 1000;
  std::size_t eval_episodes = 200;
  std::size_t final_eval_episodes = 10000;
  std::vector<std::uint64_t> seeds = {0};
  std::string output_dir = "runs";
  bool record_wall_clock = false;
  std::vector<std::string> ablations;
  /// Set on the full-scale benchmark presets, which document hyperparameters
  /// but have no simulator here; run_seed refuses them.
  bool reference_only = false;

  /// total_steps >= warmup (unless zero), seeds non-empty and distinct, and
  /// the nested configs valid. Throws ConfigError naming the field.
  void validate() const;
  bool operator==(const ExperimentConfig&) const = default;
};

nlohmann::json config_to_json(const ExperimentConfig& config);
/// Missing fields take the preset defaults of the named env (or the struct
/// defaults). Throws ConfigError with the field path.
ExperimentConfig config_from_json(const nlohmann::json& j);
/// Parses a JSON file; syntax errors report the line and column.
ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const ExperimentConfig& config);

/// Named presets: trap_cheese, chain, trap_cheese_gaussian, plus the
/// documentation-only bipedal_walker_hardcore, fetch_push and mujoco.
ExperimentConfig preset(std::string_view name);
std::vector<std::string> preset_names();

/// normal-actor | normal-exploration | single-critic | raw-weight.
void apply_ablation(ExperimentConfig& config, std::string_view ablation);

std::unique_ptr<Environment> make_env(const EnvConfig& config);
/// Agent config with state_dim and action bounds taken from the env.
AgentConfig resolved_agent_config(const ExperimentConfig& config, std::uint64_t seed);

/// 64-bit FNV-1a of the canonical JSON dump.
std::uint64_t config_hash(const ExperimentConfig& config);

// ---------------------------------------------------------------------------
// Metrics

struct MetricsRow {
  std::size_t step = 0;
  std::uint64_t seed = 0;
  std::string algorithm;
  std::size_t episodes = 0;       // training episodes finished in this window
  double episode_return = 0.0;    // their mean raw return (0 when none)
  double eval_mean_return = 0.0;
  double critic1_loss = 0.0;
  double critic2_loss = 0.0;
  double actor_loss = 0.0;
  double mean_entropy = 0.0;
  double gate_rate = 0.0;
  double wall_clock = 0.0;        // seconds; written only when enabled
};

/// RFC 4180 field quoting.
std::string csv_field(std::string_view s);
std::string metrics_header();
std::string metrics_line(const MetricsRow& row, bool record_wall_clock);
void write_metrics(std::ostream& out, const std::vector<MetricsRow>& rows, bool record_wall_clock);

// ---------------------------------------------------------------------------
// Runs

struct EvalSummary {
  std::size_t episodes = 0;
  double mean = 0.0;
  double std = 0.0;
  /// histograms[d][k]: how often atom k of dimension d was chosen (discrete
  /// agents only).
  std::vector<std::vector<std::size_t>> histograms;
};

/// Mean and sample std of per-episode returns sum_t discount^t r_t under the
/// agent's eval policy.
EvalSummary evaluate(const Agent& agent, Environment& env, std::size_t episodes, Rng& rng,
                     double discount = 1.0);

struct RunResult {
  std::uint64_t seed = 0;
  std::vector<MetricsRow> rows;
  EvalSummary final_eval;
  std::filesystem::path run_dir;
  bool poisoned = false;
  std::string error;
  /// Gaussian runs: final mean action and log-std.
  std::vector<double> final_mean;
  std::vector<double> final_log_std;
};

/// Trains one seed and writes metrics.csv, manifest.json, summary.json and
/// (for learning agents) checkpoint.bin under <out>/<name>/seed_<seed>/. Set
/// `out` empty to skip writing. A poisoned run keeps its partial artifacts
/// and returns with poisoned = true.
RunResult run_seed(const ExperimentConfig& config, std::uint64_t seed,
                   const std::filesystem::path& out);

/// Output root: $D2C_OUTPUT_ROOT when set, else config.output_dir.
std::filesystem::path output_root(const ExperimentConfig& config);

/// Loads a checkpoint written by run_seed and evaluates it under the run's
/// eval policy, or `policy` when given. Returns are discounted as in evaluate.
EvalSummary evaluate_checkpoint(const std::filesystem::path& path, std::size_t episodes,
                                std::uint64_t seed, std::optional<EvalPolicy> policy = {},
                                double discount = 1.0);

// ---------------------------------------------------------------------------
// Landscapes

/// Either a preset name ("trap_cheese", "grain_probe") or a JSON file with
/// a "landscape" object or the landscape fields at top level.
HRHRLandscape load_landscape(const std::string& source);

// ---------------------------------------------------------------------------
// Statistics

/// One-sided Mann-Whitney U test of H1: values in `lower` tend to be smaller
/// than values in `upper`. Exact null distribution without ties; normal
/// approximation with tie correction otherwise.
double mann_whitney_p_less(const std::vector<double>& lower, const std::vector<double>& upper);

}  // namespace d2c
