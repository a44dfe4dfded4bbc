#include "d2c/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "d2c/checkpoint.hpp"
#include "d2c/errors.hpp"
#include "d2c/normal_actor.hpp"

namespace d2c {

using nlohmann::json;

bool EnvConfig::operator==(const EnvConfig& o) const {
  if (kind != o.kind || delta != o.delta || action_low != o.action_low ||
      action_high != o.action_high) {
    return false;
  }
  const auto& a = chain;
  const auto& b = o.chain;
  if (a.length != b.length || a.band_half_width != b.band_half_width ||
      a.safe_reward != b.safe_reward || a.trap_reward != b.trap_reward ||
      a.final_reward != b.final_reward || a.final_probability != b.final_probability ||
      a.action_low != b.action_low || a.action_high != b.action_high) {
    return false;
  }
  if (landscape.has_value() != o.landscape.has_value()) return false;
  return !landscape || landscape_to_json(*landscape) == landscape_to_json(*o.landscape);
}

// ---------------------------------------------------------------------------
// Enum names

namespace {

template <typename E>
struct EnumName {
  E value;
  const char* name;
};

constexpr EnumName<EnvKind> kEnvKinds[] = {{EnvKind::trap_cheese, "trap_cheese"},
                                           {EnvKind::chain, "chain"},
                                           {EnvKind::landscape, "landscape"},
                                           {EnvKind::quadratic, "quadratic"}};
constexpr EnumName<Algorithm> kAlgorithms[] = {{Algorithm::d2c, "d2c"},
                                               {Algorithm::gaussian, "gaussian"},
                                               {Algorithm::normal_actor, "normal_actor"}};
constexpr EnumName<WeightMode> kWeightModes[] = {{WeightMode::normalized, "normalized"},
                                                 {WeightMode::raw, "raw"}};
constexpr EnumName<CriticInputSource> kCriticInputs[] = {
    {CriticInputSource::recomputed, "recomputed"}, {CriticInputSource::stored, "stored"}};
constexpr EnumName<PolicyCritic> kPolicyCritics[] = {{PolicyCritic::critic1, "critic1"},
                                                     {PolicyCritic::merged, "merged"}};
constexpr EnumName<Exploration> kExplorations[] = {
    {Exploration::entropy_gate, "entropy_gate"}, {Exploration::epsilon_uniform, "epsilon_uniform"}};
constexpr EnumName<EvalPolicy> kEvalPolicies[] = {{EvalPolicy::argmax, "argmax"},
                                                  {EvalPolicy::sample, "sample"}};

template <typename E, std::size_t N>
const char* to_name(const EnumName<E> (&table)[N], E v) {
  for (const auto& e : table) {
    if (e.value == v) return e.name;
  }
  return "?";
}

template <typename E, std::size_t N>
E from_name(const EnumName<E> (&table)[N], const std::string& s, const std::string& where) {
  for (const auto& e : table) {
    if (s == e.name) return e.value;
  }
  std::string options;
  for (const auto& e : table) options += std::string(options.empty() ? "" : ", ") + e.name;
  throw ConfigError(where, "unknown value '" + s + "' (expected one of: " + options + ")");
}

// Reads j[key] into `out` when present; type errors name the field path.
template <typename T>
void read(const json& j, const char* key, const std::string& path, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(path + "." + key, e.what());
  }
}

template <typename E, std::size_t N>
void read_enum(const json& j, const char* key, const std::string& path,
               const EnumName<E> (&table)[N], E& out) {
  if (!j.contains(key)) return;
  std::string s;
  read(j, key, path, s);
  out = from_name(table, s, path + "." + key);
}

void reject_unknown(const json& j, const std::string& path, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ConfigError(path, "expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : keys) known = known || it.key() == k;
    if (!known) throw ConfigError(path + "." + it.key(), "unknown field");
  }
}

json agent_to_json(const AgentConfig& a) {
  return {{"action_atoms", a.action.m_atoms},
          {"v_min", a.v_min},
          {"v_max", a.v_max},
          {"value_atoms", a.n_value_atoms},
          {"actor_hidden", a.actor_hidden},
          {"critic_hidden", a.critic_hidden},
          {"gamma", a.gamma},
          {"batch_size", a.batch_size},
          {"learning_rate", a.learning_rate},
          {"beta", a.beta},
          {"h", a.h},
          {"epsilon", a.epsilon},
          {"tau", a.tau},
          {"train_frequency", a.train_frequency},
          {"warmup_steps", a.warmup_steps},
          {"buffer_capacity", a.buffer_capacity},
          {"twin_critics", a.twin_critics},
          {"weight_mode", to_name(kWeightModes, a.weight_mode)},
          {"critic_input", to_name(kCriticInputs, a.critic_input)},
          {"policy_critic", to_name(kPolicyCritics, a.policy_critic)},
          {"exploration", to_name(kExplorations, a.exploration)},
          {"noise_rate", a.noise_rate},
          {"eval_policy", to_name(kEvalPolicies, a.eval_policy)}};
}

void agent_from_json(const json& j, const std::string& p, AgentConfig& a) {
  reject_unknown(j, p,
                 {"action_atoms", "v_min", "v_max", "value_atoms", "actor_hidden", "critic_hidden",
                  "gamma", "batch_size", "learning_rate", "beta", "h", "epsilon", "tau",
                  "train_frequency", "warmup_steps", "buffer_capacity", "twin_critics",
                  "weight_mode", "critic_input", "policy_critic", "exploration", "noise_rate",
                  "eval_policy"});
  read(j, "action_atoms", p, a.action.m_atoms);
  read(j, "v_min", p, a.v_min);
  read(j, "v_max", p, a.v_max);
  read(j, "value_atoms", p, a.n_value_atoms);
  read(j, "actor_hidden", p, a.actor_hidden);
  read(j, "critic_hidden", p, a.critic_hidden);
  read(j, "gamma", p, a.gamma);
  read(j, "batch_size", p, a.batch_size);
  read(j, "learning_rate", p, a.learning_rate);
  read(j, "beta", p, a.beta);
  read(j, "h", p, a.h);
  read(j, "epsilon", p, a.epsilon);
  read(j, "tau", p, a.tau);
  read(j, "train_frequency", p, a.train_frequency);
  read(j, "warmup_steps", p, a.warmup_steps);
  read(j, "buffer_capacity", p, a.buffer_capacity);
  read(j, "twin_critics", p, a.twin_critics);
  read_enum(j, "weight_mode", p, kWeightModes, a.weight_mode);
  read_enum(j, "critic_input", p, kCriticInputs, a.critic_input);
  read_enum(j, "policy_critic", p, kPolicyCritics, a.policy_critic);
  read_enum(j, "exploration", p, kExplorations, a.exploration);
  read(j, "noise_rate", p, a.noise_rate);
  read_enum(j, "eval_policy", p, kEvalPolicies, a.eval_policy);
}

json baseline_to_json(const GaussianBaselineConfig& b) {
  return {{"batch_episodes", b.batch_episodes}, {"learning_rate", b.learning_rate},
          {"entropy_coef", b.entropy_coef},     {"baseline_decay", b.baseline_decay},
          {"init_mean", b.init_mean},           {"init_log_std", b.init_log_std},
          {"hidden", b.hidden}};
}

void baseline_from_json(const json& j, const std::string& p, GaussianBaselineConfig& b) {
  reject_unknown(j, p,
                 {"batch_episodes", "learning_rate", "entropy_coef", "baseline_decay", "init_mean",
                  "init_log_std", "hidden"});
  read(j, "batch_episodes", p, b.batch_episodes);
  read(j, "learning_rate", p, b.learning_rate);
  read(j, "entropy_coef", p, b.entropy_coef);
  read(j, "baseline_decay", p, b.baseline_decay);
  read(j, "init_mean", p, b.init_mean);
  read(j, "init_log_std", p, b.init_log_std);
  read(j, "hidden", p, b.hidden);
}

json env_to_json(const EnvConfig& e) {
  json j = {{"kind", to_name(kEnvKinds, e.kind)},
            {"delta", e.delta},
            {"action_low", e.action_low},
            {"action_high", e.action_high},
            {"chain",
             {{"length", e.chain.length},
              {"band_half_width", e.chain.band_half_width},
              {"safe_reward", e.chain.safe_reward},
              {"trap_reward", e.chain.trap_reward},
              {"final_reward", e.chain.final_reward},
              {"final_probability", e.chain.final_probability}}}};
  if (e.landscape) j["landscape"] = landscape_to_json(*e.landscape);
  return j;
}

void env_from_json(const json& j, const std::string& p, EnvConfig& e) {
  reject_unknown(j, p, {"kind", "delta", "action_low", "action_high", "chain", "landscape"});
  read_enum(j, "kind", p, kEnvKinds, e.kind);
  read(j, "delta", p, e.delta);
  read(j, "action_low", p, e.action_low);
  read(j, "action_high", p, e.action_high);
  if (j.contains("chain")) {
    const auto& c = j.at("chain");
    const std::string cp = p + ".chain";
    reject_unknown(c, cp,
                   {"length", "band_half_width", "safe_reward", "trap_reward", "final_reward",
                    "final_probability"});
    read(c, "length", cp, e.chain.length);
    read(c, "band_half_width", cp, e.chain.band_half_width);
    read(c, "safe_reward", cp, e.chain.safe_reward);
    read(c, "trap_reward", cp, e.chain.trap_reward);
    read(c, "final_reward", cp, e.chain.final_reward);
    read(c, "final_probability", cp, e.chain.final_probability);
  }
  e.chain.action_low = e.action_low;
  e.chain.action_high = e.action_high;
  if (j.contains("landscape")) e.landscape = landscape_from_json(j.at("landscape"));
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw ConfigError("seeds", "at least one seed is required");
  std::set<std::uint64_t> uniq(seeds.begin(), seeds.end());
  if (uniq.size() != seeds.size()) throw ConfigError("seeds", "seeds must be distinct");
  if (eval_every < 1) throw ConfigError("eval_every", "must be >= 1");
  try {
    if (algorithm == Algorithm::gaussian) {
      baseline.validate();
    } else {
      agent.validate();
      if (total_steps > 0 && total_steps < agent.warmup_steps) {
        throw ConfigError("total_steps", "must be >= agent.warmup_steps (or 0)");
      }
    }
    if (env.kind == EnvKind::landscape) {
      if (!env.landscape) throw ConfigError("env.landscape", "landscape env needs a landscape");
      env.landscape->validate();
    }
    if (env.kind == EnvKind::chain) env.chain.validate();
    if (env.kind == EnvKind::trap_cheese && !(env.delta > 0.0 && env.delta < 1.0)) {
      throw ConfigError("env.delta", "must lie in (0, 1)");
    }
  } catch (const InvalidInput& e) {
    throw ConfigError(name, e.what());
  }
}

json config_to_json(const ExperimentConfig& c) {
  return {{"name", c.name},
          {"env", env_to_json(c.env)},
          {"algorithm", to_name(kAlgorithms, c.algorithm)},
          {"agent", agent_to_json(c.agent)},
          {"baseline", baseline_to_json(c.baseline)},
          {"total_steps", c.total_steps},
          {"eval_every", c.eval_every},
          {"eval_episodes", c.eval_episodes},
          {"final_eval_episodes", c.final_eval_episodes},
          {"seeds", c.seeds},
          {"output_dir", c.output_dir},
          {"record_wall_clock", c.record_wall_clock},
          {"ablations", c.ablations},
          {"reference_only", c.reference_only}};
}

ExperimentConfig config_from_json(const json& j) {
  const std::string p = "config";
  reject_unknown(j, p,
                 {"preset", "name", "env", "algorithm", "agent", "baseline", "total_steps",
                  "eval_every", "eval_episodes", "final_eval_episodes", "seeds", "output_dir",
                  "record_wall_clock", "ablations", "reference_only"});
  ExperimentConfig c;
  if (j.contains("preset")) {
    std::string name;
    read(j, "preset", p, name);
    try {
      c = preset(name);
    } catch (const InvalidInput& e) {
      throw ConfigError(p + ".preset", e.what());
    }
  }
  if (j.contains("env")) env_from_json(j.at("env"), p + ".env", c.env);
  read_enum(j, "algorithm", p, kAlgorithms, c.algorithm);
  if (j.contains("agent")) agent_from_json(j.at("agent"), p + ".agent", c.agent);
  if (j.contains("baseline")) baseline_from_json(j.at("baseline"), p + ".baseline", c.baseline);
  read(j, "total_steps", p, c.total_steps);
  read(j, "eval_every", p, c.eval_every);
  read(j, "eval_episodes", p, c.eval_episodes);
  read(j, "final_eval_episodes", p, c.final_eval_episodes);
  read(j, "seeds", p, c.seeds);
  read(j, "output_dir", p, c.output_dir);
  read(j, "record_wall_clock", p, c.record_wall_clock);
  read(j, "reference_only", p, c.reference_only);
  std::vector<std::string> ablations;
  read(j, "ablations", p, ablations);
  for (const auto& a : ablations) {
    try {
      apply_ablation(c, a);
    } catch (const InvalidInput& e) {
      throw ConfigError(p + ".ablations", e.what());
    }
  }
  // Read last so an explicit name wins over the ablation suffixes.
  read(j, "name", p, c.name);
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string(), "cannot open config file");
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<long>(upto), '\n');
    throw ConfigError(path.string() + ":" + std::to_string(line), e.what());
  }
  return config_from_json(j);
}

void save_config(const std::filesystem::path& path, const ExperimentConfig& config) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << config_to_json(config).dump(2) << '\n';
}

namespace {

std::vector<std::uint64_t> ten_seeds() { return {0, 1, 2, 3, 4, 5, 6, 7, 8, 9}; }

ExperimentConfig desk_agent_base() {
  ExperimentConfig c;
  c.agent.actor_hidden = {32};
  c.agent.critic_hidden = {64, 64};
  c.agent.batch_size = 64;
  c.agent.learning_rate = 1e-3;
  c.agent.warmup_steps = 500;
  c.agent.buffer_capacity = 100000;
  c.seeds = ten_seeds();
  return c;
}

}  // namespace

std::vector<std::string> preset_names() {
  return {"trap_cheese", "trap_cheese_gaussian", "chain", "bipedal_walker_hardcore", "fetch_push",
          "mujoco"};
}

ExperimentConfig preset(std::string_view name) {
  if (name == "trap_cheese") {
    auto c = desk_agent_base();
    c.name = "trap_cheese";
    c.env.kind = EnvKind::trap_cheese;
    c.total_steps = 5000;
    c.eval_every = 500;
    c.eval_episodes = 200;
    c.final_eval_episodes = 10000;
    return c;
  }
  if (name == "trap_cheese_gaussian") {
    ExperimentConfig c;
    c.name = "trap_cheese_gaussian";
    c.env.kind = EnvKind::trap_cheese;
    c.algorithm = Algorithm::gaussian;
    c.baseline.entropy_coef = 0.2;
    c.total_steps = 20000;
    c.eval_every = 1000;
    c.final_eval_episodes = 1000;
    c.seeds = ten_seeds();
    return c;
  }
  if (name == "chain") {
    auto c = desk_agent_base();
    c.name = "chain";
    c.env.kind = EnvKind::chain;
    c.agent.critic_input = CriticInputSource::stored;
    c.agent.batch_size = 128;
    c.total_steps = 20000;
    c.eval_every = 1000;
    c.eval_episodes = 200;
    c.final_eval_episodes = 20000;
    return c;
  }
  // Hyperparameters of the full-scale benchmarks, kept for reference; the
  // simulators themselves are not part of this library.
  if (name == "bipedal_walker_hardcore" || name == "fetch_push" || name == "mujoco") {
    ExperimentConfig c;
    c.name = std::string(name);
    c.reference_only = true;
    c.agent.actor_hidden = {256, 256};
    c.agent.critic_hidden = {256, 256};
    c.agent.warmup_steps = 10000;
    c.total_steps = 20000000;
    if (name == "bipedal_walker_hardcore") {
      c.agent.learning_rate = 2.5e-4;
      c.agent.v_min = -100.0;
      c.agent.v_max = 100.0;
      c.agent.gamma = 0.99;
      c.agent.batch_size = 512;
    } else if (name == "fetch_push") {
      c.agent.learning_rate = 3e-5;
      c.agent.v_min = -50.0;
      c.agent.v_max = 50.0;
      c.agent.gamma = 1.0 - 1.0 / 50.0;
      c.agent.batch_size = 512;
    } else {
      c.agent.learning_rate = 1e-4;
      c.agent.v_min = -200.0;
      c.agent.v_max = 200.0;
      c.agent.gamma = 0.99;
      c.agent.batch_size = 1024;
    }
    return c;
  }
  throw InvalidInput("unknown preset '" + std::string(name) + "'");
}

void apply_ablation(ExperimentConfig& c, std::string_view ablation) {
  if (ablation == "normal-actor") {
    c.algorithm = Algorithm::normal_actor;
  } else if (ablation == "normal-exploration") {
    c.agent.exploration = Exploration::epsilon_uniform;
  } else if (ablation == "single-critic") {
    c.agent.twin_critics = false;
  } else if (ablation == "raw-weight") {
    c.agent.weight_mode = WeightMode::raw;
  } else {
    throw InvalidInput("unknown ablation '" + std::string(ablation) +
                       "' (expected normal-actor, normal-exploration, single-critic or raw-weight)");
  }
  const std::string tag(ablation);
  if (std::find(c.ablations.begin(), c.ablations.end(), tag) == c.ablations.end()) {
    c.ablations.push_back(tag);
    c.name += "+" + tag;
  }
}

std::unique_ptr<Environment> make_env(const EnvConfig& e) {
  switch (e.kind) {
    case EnvKind::trap_cheese:
      return std::make_unique<TrapCheeseEnv>(e.delta, e.action_low, e.action_high);
    case EnvKind::chain: {
      auto cc = e.chain;
      cc.action_low = e.action_low;
      cc.action_high = e.action_high;
      return std::make_unique<ChainEnv>(cc);
    }
    case EnvKind::landscape:
      if (!e.landscape) throw InvalidInput("landscape env needs a landscape");
      return std::make_unique<LandscapeBanditEnv>(*e.landscape);
    case EnvKind::quadratic:
      return std::make_unique<QuadraticBanditEnv>(e.action_high);
  }
  throw InvalidInput("unknown env kind");
}

AgentConfig resolved_agent_config(const ExperimentConfig& config, std::uint64_t seed) {
  const auto env = make_env(config.env);
  AgentConfig a = config.agent;
  a.state_dim = env->spec().state_dim;
  a.action.n_dims = env->spec().action_dim;
  a.action.low = env->spec().action_low;
  a.action.high = env->spec().action_high;
  a.seed = seed;
  return a;
}

std::uint64_t config_hash(const ExperimentConfig& config) {
  const std::string s = config_to_json(config).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// ---------------------------------------------------------------------------
// Metrics

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  out += '"';
  return out;
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string metrics_header() {
  return "schema_version,step,seed,algorithm,episodes,episode_return,eval_mean_return,"
         "critic1_loss,critic2_loss,actor_loss,mean_entropy,gate_rate,wall_clock_s";
}

std::string metrics_line(const MetricsRow& r, bool record_wall_clock) {
  std::string s = std::to_string(kMetricsSchemaVersion) + "," + std::to_string(r.step) + "," +
                  std::to_string(r.seed) + "," + csv_field(r.algorithm) + "," +
                  std::to_string(r.episodes) + "," + num(r.episode_return) + "," +
                  num(r.eval_mean_return) + "," + num(r.critic1_loss) + "," +
                  num(r.critic2_loss) + "," + num(r.actor_loss) + "," + num(r.mean_entropy) +
                  "," + num(r.gate_rate) + ",";
  if (record_wall_clock) s += num(r.wall_clock);
  return s;
}

void write_metrics(std::ostream& out, const std::vector<MetricsRow>& rows,
                   bool record_wall_clock) {
  out << metrics_header() << "\r\n";
  for (const auto& r : rows) out << metrics_line(r, record_wall_clock) << "\r\n";
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

struct Welford {
  std::size_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;
  void add(double x) {
    ++n;
    const double d = x - mean;
    mean += d / static_cast<double>(n);
    m2 += d * (x - mean);
  }
  double stddev() const { return n > 1 ? std::sqrt(m2 / static_cast<double>(n - 1)) : 0.0; }
};

EvalSummary evaluate_normal(const NormalActorAgent& agent, Environment& env,
                            std::size_t episodes, Rng& rng, double discount = 1.0) {
  EvalSummary s;
  Welford w;
  for (std::size_t ep = 0; ep < episodes; ++ep) {
    auto x = env.reset(rng);
    double ret = 0.0;
    double weight = 1.0;
    for (std::size_t t = 0; t < env.spec().horizon; ++t) {
      const auto step = env.step(agent.act(x, ActMode::eval, rng), rng);
      ret += weight * step.reward;
      weight *= discount;
      x = step.next_state;
      if (step.done) break;
    }
    w.add(ret);
  }
  s.episodes = episodes;
  s.mean = w.mean;
  s.std = w.stddev();
  return s;
}

}  // namespace

EvalSummary evaluate(const Agent& agent, Environment& env, std::size_t episodes, Rng& rng,
                     double discount) {
  const auto& spec = agent.config().action;
  EvalSummary s;
  s.histograms.assign(spec.n_dims, std::vector<std::size_t>(spec.m_atoms, 0));
  Welford w;
  for (std::size_t ep = 0; ep < episodes; ++ep) {
    auto x = env.reset(rng);
    double ret = 0.0;
    double weight = 1.0;
    for (std::size_t t = 0; t < env.spec().horizon; ++t) {
      const auto r = agent.act(x, ActMode::eval, rng);
      for (std::size_t d = 0; d < spec.n_dims; ++d) ++s.histograms[d][r.action.indices[d]];
      const auto step = env.step(decode(spec, r.action), rng);
      ret += weight * step.reward;
      weight *= discount;
      x = step.next_state;
      if (step.done) break;
    }
    w.add(ret);
  }
  s.episodes = episodes;
  s.mean = w.mean;
  s.std = w.stddev();
  return s;
}

// ---------------------------------------------------------------------------
// Runs

namespace {

// Common surface of the two value-distribution learners.
class Learner {
 public:
  virtual ~Learner() = default;
  virtual std::vector<double> act(const std::vector<double>& x, Rng& rng) = 0;
  virtual void observe(const std::vector<double>& x, double r, const std::vector<double>& x_next,
                       bool done) = 0;
  virtual TrainMetrics train(Rng& rng) = 0;
  virtual EvalSummary eval(Environment& env, std::size_t episodes, Rng& rng) const = 0;
  virtual Checkpoint checkpoint(std::string meta) const = 0;
};

class DiscreteLearner final : public Learner {
 public:
  explicit DiscreteLearner(AgentConfig c) : agent_(std::move(c)) {}
  std::vector<double> act(const std::vector<double>& x, Rng& rng) override {
    pending_ = agent_.act(x, ActMode::train, rng);
    return decode(agent_.config().action, pending_->action);
  }
  void observe(const std::vector<double>& x, double r, const std::vector<double>& x_next,
               bool done) override {
    agent_.observe(Transition{x, pending_->action, r, x_next, done, pending_->behavior});
  }
  TrainMetrics train(Rng& rng) override { return agent_.train_step(rng); }
  EvalSummary eval(Environment& env, std::size_t episodes, Rng& rng) const override {
    return evaluate(agent_, env, episodes, rng);
  }
  Checkpoint checkpoint(std::string meta) const override {
    return agent_.to_checkpoint(std::move(meta));
  }

 private:
  Agent agent_;
  std::optional<ActResult> pending_;
};

class ContinuousLearner final : public Learner {
 public:
  explicit ContinuousLearner(AgentConfig c) : agent_(std::move(c)) {}
  std::vector<double> act(const std::vector<double>& x, Rng& rng) override {
    pending_ = agent_.act(x, ActMode::train, rng);
    return pending_;
  }
  void observe(const std::vector<double>& x, double r, const std::vector<double>& x_next,
               bool done) override {
    agent_.observe(ContinuousTransition{x, pending_, r, x_next, done});
  }
  TrainMetrics train(Rng& rng) override { return agent_.train_step(rng); }
  EvalSummary eval(Environment& env, std::size_t episodes, Rng& rng) const override {
    return evaluate_normal(agent_, env, episodes, rng);
  }
  Checkpoint checkpoint(std::string meta) const override {
    return agent_.to_checkpoint(std::move(meta));
  }

 private:
  NormalActorAgent agent_;
  std::vector<double> pending_;
};

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

json eval_json(const EvalSummary& e) {
  return {{"episodes", e.episodes}, {"mean", e.mean}, {"std", e.std}};
}

void write_artifacts(const ExperimentConfig& config, const RunResult& r, std::size_t steps_done,
                     const Learner* learner) {
  if (r.run_dir.empty()) return;
  std::filesystem::create_directories(r.run_dir);
  std::ostringstream metrics;
  write_metrics(metrics, r.rows, config.record_wall_clock);
  write_text(r.run_dir / "metrics.csv", metrics.str());

  json manifest = {{"schema_version", kMetricsSchemaVersion},
                   {"code_version", kCodeVersion},
                   {"checkpoint_version", kCheckpointVersion},
                   {"config_hash", hex64(config_hash(config))},
                   {"seed", r.seed},
                   {"name", config.name},
                   {"algorithm", to_name(kAlgorithms, config.algorithm)},
                   {"total_steps", config.total_steps},
                   {"steps_completed", steps_done},
                   {"status", r.poisoned ? "poisoned" : "complete"},
                   {"error", r.error},
                   {"config", config_to_json(config)}};
  write_text(r.run_dir / "manifest.json", manifest.dump(2) + "\n");

  json summary = {{"seed", r.seed}, {"final_eval", eval_json(r.final_eval)}};
  if (!r.final_eval.histograms.empty()) summary["action_histograms"] = r.final_eval.histograms;
  if (!r.final_mean.empty()) {
    summary["final_mean"] = r.final_mean;
    summary["final_log_std"] = r.final_log_std;
  }
  write_text(r.run_dir / "summary.json", summary.dump(2) + "\n");

  if (learner != nullptr) {
    json meta = {{"config", config_to_json(config)}, {"seed", r.seed}, {"step", steps_done}};
    save_checkpoint(r.run_dir / "checkpoint.bin", learner->checkpoint(meta.dump()));
  }
}

RunResult run_gaussian(const ExperimentConfig& config, std::uint64_t seed, RunResult result) {
  auto env = make_env(config.env);
  auto bc = config.baseline;
  bc.seed = seed;
  bc.episodes = config.total_steps;
  Rng rng = make_rng(seed, Stream::baseline, 1);
  const auto started = std::chrono::steady_clock::now();
  try {
    const auto br = train_baseline(*env, bc, rng);
    for (std::size_t start = 0; start < br.episode_returns.size(); start += config.eval_every) {
      const std::size_t end = std::min(br.episode_returns.size(), start + config.eval_every);
      double s = 0.0;
      for (std::size_t i = start; i < end; ++i) s += br.episode_returns[i];
      MetricsRow row;
      row.step = end;
      row.seed = seed;
      row.algorithm = "gaussian";
      row.episodes = end - start;
      row.episode_return = s / static_cast<double>(end - start);
      row.eval_mean_return = row.episode_return;
      result.rows.push_back(row);
    }
    const std::size_t tail = std::min(config.final_eval_episodes, br.episode_returns.size());
    Welford w;
    for (std::size_t i = br.episode_returns.size() - tail; i < br.episode_returns.size(); ++i) {
      w.add(br.episode_returns[i]);
    }
    result.final_eval.episodes = tail;
    result.final_eval.mean = w.mean;
    result.final_eval.std = w.stddev();
    result.final_mean = br.final_mean;
    result.final_log_std = br.final_log_std;
  } catch (const PoisonError& e) {
    result.poisoned = true;
    result.error = e.what();
  }
  if (config.record_wall_clock) {
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    for (auto& row : result.rows) row.wall_clock = secs;
  }
  write_artifacts(config, result, result.poisoned ? 0 : config.total_steps, nullptr);
  return result;
}

}  // namespace

std::filesystem::path output_root(const ExperimentConfig& config) {
  if (const char* env = std::getenv("D2C_OUTPUT_ROOT"); env != nullptr && *env != '\0') {
    return env;
  }
  return config.output_dir;
}

RunResult run_seed(const ExperimentConfig& config, std::uint64_t seed,
                   const std::filesystem::path& out) {
  config.validate();
  if (config.reference_only) {
    throw ConfigError("config.reference_only",
                      "preset '" + config.name + "' documents a full-scale benchmark and cannot be trained here");
  }
  RunResult result;
  result.seed = seed;
  if (!out.empty()) result.run_dir = out / config.name / ("seed_" + std::to_string(seed));
  if (config.algorithm == Algorithm::gaussian) return run_gaussian(config, seed, std::move(result));

  const auto agent_config = resolved_agent_config(config, seed);
  std::unique_ptr<Learner> learner;
  if (config.algorithm == Algorithm::normal_actor) {
    learner = std::make_unique<ContinuousLearner>(agent_config);
  } else {
    learner = std::make_unique<DiscreteLearner>(agent_config);
  }
  auto env = make_env(config.env);
  auto eval_env = make_env(config.env);
  const double bound = env->spec().reward_bound;
  const std::string algo = to_name(kAlgorithms, config.algorithm);

  Rng env_rng = make_rng(seed, Stream::env);
  Rng actor_rng = make_rng(seed, Stream::actor);
  Rng buffer_rng = make_rng(seed, Stream::buffer);
  const auto started = std::chrono::steady_clock::now();

  std::vector<double> x = env->reset(env_rng);
  std::size_t t_in_episode = 0;
  double episode_ret = 0.0;
  double window_ret = 0.0;
  std::size_t window_eps = 0;
  TrainMetrics sum;
  std::size_t trained = 0;
  std::size_t step = 0;
  std::uint64_t eval_index = 0;

  try {
    for (step = 1; step <= config.total_steps; ++step) {
      const auto action = learner->act(x, actor_rng);
      const auto res = env->step(action, env_rng);
      ++t_in_episode;
      episode_ret += res.reward;
      learner->observe(x, normalize_reward(res.reward, bound), res.next_state, res.done);
      x = res.next_state;
      if (res.done || t_in_episode >= env->spec().horizon) {
        window_ret += episode_ret;
        ++window_eps;
        episode_ret = 0.0;
        t_in_episode = 0;
        x = env->reset(env_rng);
      }
      if (step % agent_config.train_frequency == 0) {
        const auto m = learner->train(buffer_rng);
        if (!m.skipped) {
          sum.critic1_loss += m.critic1_loss;
          sum.critic2_loss += m.critic2_loss;
          sum.actor_objective += m.actor_objective;
          sum.mean_entropy += m.mean_entropy;
          sum.gate_rate += m.gate_rate;
          ++trained;
        }
      }
      if (step % config.eval_every == 0 || step == config.total_steps) {
        MetricsRow row;
        row.step = step;
        row.seed = seed;
        row.algorithm = algo;
        row.episodes = window_eps;
        row.episode_return = window_eps > 0 ? window_ret / static_cast<double>(window_eps) : 0.0;
        Rng eval_rng = make_rng(seed, Stream::eval, ++eval_index);
        row.eval_mean_return = learner->eval(*eval_env, config.eval_episodes, eval_rng).mean;
        if (trained > 0) {
          const double k = static_cast<double>(trained);
          row.critic1_loss = sum.critic1_loss / k;
          row.critic2_loss = sum.critic2_loss / k;
          row.actor_loss = -sum.actor_objective / k;
          row.mean_entropy = sum.mean_entropy / k;
          row.gate_rate = sum.gate_rate / k;
        }
        if (config.record_wall_clock) {
          row.wall_clock =
              std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        }
        result.rows.push_back(row);
        sum = TrainMetrics{};
        trained = 0;
        window_ret = 0.0;
        window_eps = 0;
      }
    }
    Rng final_rng = make_rng(seed, Stream::eval, 0);
    result.final_eval = learner->eval(*eval_env, config.final_eval_episodes, final_rng);
  } catch (const PoisonError& e) {
    result.poisoned = true;
    result.error = e.what();
    step = step > 0 ? step - 1 : 0;
  }
  const std::size_t done_steps = result.poisoned ? step : config.total_steps;
  write_artifacts(config, result, done_steps, learner.get());
  return result;
}

EvalSummary evaluate_checkpoint(const std::filesystem::path& path, std::size_t episodes,
                                std::uint64_t seed, std::optional<EvalPolicy> policy,
                                double discount) {
  const auto ckpt = load_checkpoint(path);
  json meta;
  try {
    meta = json::parse(ckpt.metadata_json);
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("checkpoint metadata is not valid JSON: ") + e.what());
  }
  if (!meta.contains("config") || !meta.contains("seed")) {
    throw InvalidInput("checkpoint metadata lacks the run config");
  }
  auto config = config_from_json(meta.at("config"));
  auto ac = resolved_agent_config(config, meta.at("seed").get<std::uint64_t>());
  if (policy) ac.eval_policy = *policy;
  auto env = make_env(config.env);
  Rng rng = make_rng(seed, Stream::eval, 0);
  if (config.algorithm == Algorithm::normal_actor) {
    NormalActorAgent agent(ac);
    agent.restore(ckpt);
    return evaluate_normal(agent, *env, episodes, rng, discount);
  }
  if (config.algorithm != Algorithm::d2c) {
    throw InvalidInput("checkpoint does not hold a value-distribution agent");
  }
  Agent agent(ac);
  agent.restore(ckpt);
  return evaluate(agent, *env, episodes, rng, discount);
}

// ---------------------------------------------------------------------------
// Landscapes

HRHRLandscape load_landscape(const std::string& source) {
  if (source == "trap_cheese") return trap_cheese_landscape(0.3);
  if (source == "grain_probe") return grain_probe_landscape(0.1);
  std::ifstream in(source);
  if (!in) throw ConfigError(source, "not a landscape preset and not a readable file");
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<long>(upto), '\n');
    throw ConfigError(source + ":" + std::to_string(line), e.what());
  }
  auto l = landscape_from_json(j.contains("landscape") ? j.at("landscape") : j);
  l.validate();
  return l;
}

// ---------------------------------------------------------------------------
// Statistics

double mann_whitney_p_less(const std::vector<double>& lower, const std::vector<double>& upper) {
  const std::size_t n1 = lower.size();
  const std::size_t n2 = upper.size();
  if (n1 == 0 || n2 == 0) throw InvalidInput("Mann-Whitney test needs two non-empty samples");
  double u = 0.0;
  for (double a : lower) {
    for (double b : upper) u += a < b ? 1.0 : (a == b ? 0.5 : 0.0);
  }
  std::vector<double> all(lower);
  all.insert(all.end(), upper.begin(), upper.end());
  std::sort(all.begin(), all.end());
  double tie_term = 0.0;
  for (std::size_t i = 0; i < all.size();) {
    std::size_t k = i;
    while (k < all.size() && all[k] == all[i]) ++k;
    const double t = static_cast<double>(k - i);
    tie_term += t * t * t - t;
    i = k;
  }
  if (tie_term == 0.0) {
    // counts[a][b][u]: orderings of a lower and b upper values with u pairs lower < upper.
    const std::size_t umax = n1 * n2;
    std::vector<std::vector<std::vector<double>>> f(
        n1 + 1, std::vector<std::vector<double>>(n2 + 1, std::vector<double>(umax + 1, 0.0)));
    for (std::size_t a = 0; a <= n1; ++a) {
      for (std::size_t b = 0; b <= n2; ++b) {
        if (a == 0 || b == 0) {
          f[a][b][0] = 1.0;
          continue;
        }
        for (std::size_t v = 0; v <= a * b; ++v) {
          // Largest element is an upper value (beats all a lower values) or a lower value.
          f[a][b][v] = (v >= a ? f[a][b - 1][v - a] : 0.0) + f[a - 1][b][v];
        }
      }
    }
    double total = 0.0, tail = 0.0;
    const auto u_obs = static_cast<std::size_t>(u);
    for (std::size_t v = 0; v <= umax; ++v) {
      total += f[n1][n2][v];
      if (v >= u_obs) tail += f[n1][n2][v];
    }
    return tail / total;
  }
  const double nn1 = static_cast<double>(n1), nn2 = static_cast<double>(n2);
  const double n = nn1 + nn2;
  const double mean = nn1 * nn2 / 2.0;
  const double var = nn1 * nn2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
  if (var <= 0.0) return 1.0;
  const double z = (u - mean - 0.5) / std::sqrt(var);
  return 0.5 * std::erfc(z / std::sqrt(2.0));
}

}  // namespace d2c
