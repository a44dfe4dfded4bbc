// Command-line front end: train, eval, verify, landscape.
//
// Exit codes: 0 success, 1 a check failed, 2 configuration error, 3 a run
// was poisoned by non-finite values.

#include <atomic>
#include <exception>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <mutex>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"

#include "d2c/errors.hpp"
#include "d2c/harness.hpp"
#include "d2c/verify.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kConfigError = 2;
constexpr int kPoisoned = 3;

struct TrainArgs {
  std::string config;
  std::string preset;
  std::vector<std::uint64_t> seeds;
  std::string out;
  long long steps = -1;
  std::vector<std::string> ablations;
  unsigned jobs = 1;
  bool wall_clock = false;
};

int do_train(const TrainArgs& a) {
  d2c::ExperimentConfig cfg;
  if (!a.config.empty()) {
    cfg = d2c::load_config(a.config);
  } else {
    try {
      cfg = d2c::preset(a.preset.empty() ? "trap_cheese" : a.preset);
    } catch (const d2c::InvalidInput& e) {
      throw d2c::ConfigError("--preset", e.what());
    }
  }
  for (const auto& ab : a.ablations) {
    try {
      d2c::apply_ablation(cfg, ab);
    } catch (const d2c::InvalidInput& e) {
      throw d2c::ConfigError("--ablation", e.what());
    }
  }
  if (!a.seeds.empty()) cfg.seeds = a.seeds;
  if (a.steps >= 0) cfg.total_steps = static_cast<std::size_t>(a.steps);
  if (!a.out.empty()) cfg.output_dir = a.out;
  if (a.wall_clock) cfg.record_wall_clock = true;
  cfg.validate();
  std::filesystem::path root = a.out.empty() ? d2c::output_root(cfg) : std::filesystem::path(a.out);

  std::vector<d2c::RunResult> results(cfg.seeds.size());
  std::atomic<std::size_t> next{0};
  std::mutex io;
  std::exception_ptr failure;
  auto worker = [&] {
    for (std::size_t i = next++; i < cfg.seeds.size(); i = next++) {
      try {
        results[i] = d2c::run_seed(cfg, cfg.seeds[i], root);
      } catch (...) {
        // Stop handing out seeds; the first error is rethrown on the main thread.
        std::lock_guard<std::mutex> lock(io);
        if (!failure) failure = std::current_exception();
        next = cfg.seeds.size();
        return;
      }
      std::lock_guard<std::mutex> lock(io);
      const auto& r = results[i];
      if (r.poisoned) {
        std::printf("seed %llu: POISONED (%s)\n", static_cast<unsigned long long>(r.seed),
                    r.error.c_str());
      } else {
        std::printf("seed %llu: final eval mean %.4f (std %.4f, %zu episodes) -> %s\n",
                    static_cast<unsigned long long>(r.seed), r.final_eval.mean, r.final_eval.std,
                    r.final_eval.episodes, r.run_dir.string().c_str());
      }
      std::fflush(stdout);
    }
  };
  const unsigned jobs = std::max(1u, std::min<unsigned>(a.jobs, static_cast<unsigned>(cfg.seeds.size())));
  std::vector<std::thread> pool;
  for (unsigned j = 1; j < jobs; ++j) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);

  bool poisoned = false;
  for (const auto& r : results) poisoned = poisoned || r.poisoned;
  return poisoned ? kPoisoned : kOk;
}

int do_eval(const std::string& checkpoint, std::size_t episodes, std::uint64_t seed,
            const std::string& policy) {
  std::optional<d2c::EvalPolicy> p;
  if (policy == "argmax") p = d2c::EvalPolicy::argmax;
  if (policy == "sample") p = d2c::EvalPolicy::sample;
  const auto s = d2c::evaluate_checkpoint(checkpoint, episodes, seed, p);
  nlohmann::json j = {{"episodes", s.episodes}, {"mean", s.mean}, {"std", s.std}};
  if (!s.histograms.empty()) j["action_histograms"] = s.histograms;
  std::cout << j.dump() << '\n';
  return kOk;
}

int do_verify(std::uint64_t seed, const std::string& report) {
  const auto reports = d2c::run_verify(d2c::default_hooks(), seed);
  bool ok = true;
  for (const auto& r : reports) {
    std::printf("%-4s %-34s max_abs=%.3e max_rel=%.3e tol=%.1e (%s)\n", r.pass ? "PASS" : "FAIL",
                r.name.c_str(), r.max_abs_deviation, r.max_rel_deviation, r.tolerance,
                r.relative ? "relative" : "absolute");
    ok = ok && r.pass;
  }
  if (!report.empty()) {
    std::ofstream out(report);
    d2c::write_reports(out, reports);
  }
  return ok ? kOk : kCheckFailed;
}

int do_landscape(const std::string& source, std::size_t resolution, const std::string& out) {
  const auto land = d2c::load_landscape(source);
  const auto v = d2c::is_hrhr(land, std::max<std::size_t>(resolution, 100));
  std::fprintf(stderr,
               "sup(omega1)=%.6f sup(omega2)=%.6f mean(omega1)=%.6f mean(omega2)=%.6f hrhr=%s\n",
               v.sup_omega1, v.sup_omega2, v.mean_omega1, v.mean_omega2, v.is_hrhr ? "yes" : "no");
  if (out.empty() || out == "-") {
    d2c::export_landscape_csv(land, resolution, std::cout);
  } else {
    std::ofstream f(out);
    if (!f) throw std::runtime_error("cannot write " + out);
    d2c::export_landscape_csv(land, resolution, f);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributional discrete-action actor-critic: training, evaluation and checks"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* tr = app.add_subcommand("train", "Train one or more seeds and write run artifacts");
  tr->add_option("--config", train.config, "JSON config file");
  tr->add_option("--preset", train.preset, "Named preset (used when --config is absent)");
  tr->add_option("--seed", train.seeds, "Seed(s) to run, overriding the config");
  tr->add_option("--out", train.out, "Output root (overrides D2C_OUTPUT_ROOT and the config)");
  tr->add_option("--steps", train.steps, "Override total_steps");
  tr->add_option("--ablation", train.ablations,
                 "normal-actor | normal-exploration | single-critic | raw-weight");
  tr->add_option("--jobs", train.jobs, "Seeds trained in parallel")->check(CLI::Range(1u, 256u));
  tr->add_flag("--wall-clock", train.wall_clock, "Record wall-clock seconds in metrics.csv");

  std::string ckpt, policy;
  std::size_t episodes = 10000;
  std::uint64_t eval_seed = 0;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint with greedy actions");
  ev->add_option("--checkpoint", ckpt, "checkpoint.bin written by train")->required();
  ev->add_option("--episodes", episodes, "Evaluation episodes");
  ev->add_option("--seed", eval_seed, "Evaluation seed");
  ev->add_option("--policy", policy, "argmax | sample (default: from the checkpoint's config)")
      ->check(CLI::IsMember({"argmax", "sample"}));

  std::uint64_t verify_seed = 7;
  std::string report;
  auto* ve = app.add_subcommand("verify", "Run the oracle checks");
  ve->add_option("--seed", verify_seed, "Seed for the randomized cases");
  ve->add_option("--report", report, "Write a CSV report here");

  std::string source = "trap_cheese", land_out;
  std::size_t resolution = 1001;
  auto* la = app.add_subcommand("landscape", "Export a reward landscape as CSV");
  la->add_option("--source", source, "Preset (trap_cheese, grain_probe) or JSON file");
  la->add_option("--resolution", resolution, "Grid points per dimension");
  la->add_option("--out", land_out, "CSV path (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*tr) return do_train(train);
    if (*ev) return do_eval(ckpt, episodes, eval_seed, policy);
    if (*ve) return do_verify(verify_seed, report);
    if (*la) return do_landscape(source, resolution, land_out);
  } catch (const d2c::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfigError;
  } catch (const d2c::VersionError& e) {
    std::fprintf(stderr, "checkpoint error: %s\n", e.what());
    return kConfigError;
  } catch (const d2c::InvalidInput& e) {
    std::fprintf(stderr, "invalid input: %s\n", e.what());
    return kConfigError;
  } catch (const d2c::PoisonError& e) {
    std::fprintf(stderr, "poisoned: %s\n", e.what());
    return kPoisoned;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kPoisoned;
  }
  return kOk;
}
