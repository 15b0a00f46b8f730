// Command-line front end. Every subcommand reads the same run configuration:
// built-in defaults, then command-line flags, then (when --config is given)
// the config file on top. DPC_OUT_ROOT, when set, prefixes the output
// directory.

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dpc/bench.hpp"

namespace {

using namespace dpc;

struct Flags {
  RunConfig cfg;
  std::string config_path;
  std::string detector = to_string(RunConfig{}.detector_mode);
  std::string arm = to_string(RunConfig{}.arm);
  std::string cpl_strategy = to_string(RunConfig{}.cpl_strategy);
  std::vector<double> cpl_shift;
  std::vector<double> cpl_shift_b;
};

void add_config_flags(CLI::App* app, Flags& f) {
  RunConfig& c = f.cfg;
  app->add_option("--config", f.config_path, "JSON config file, overrides flags");
  app->add_option("--out", c.out_dir, "run output directory");
  app->add_option("--seeds", c.seeds, "run seeds");
  app->add_option("--demos", c.demos, "demonstration count");
  app->add_option("--failures", c.failures, "labeled failure count");
  app->add_option("--correction-variants", c.correction_variants,
                  "conditioning variants per failure");
  app->add_option("--detect-train", c.detect_train, "detector training samples");
  app->add_option("--detect-eval", c.detect_eval, "detector held-out samples");
  app->add_option("--eval-episodes", c.eval_episodes, "evaluation episodes per seed");
  app->add_option("--seen", c.seen_categories, "seen category ids");
  app->add_option("--unseen", c.unseen_categories, "unseen category ids");
  app->add_option("-K,--retries", c.K, "correction budget per episode");
  app->add_option("--noise-sigma", c.fidelity.noise_sigma, "expert noise level");
  app->add_option("--corruption-prob", c.fidelity.corruption_prob,
                  "expert corruption probability");
  app->add_option("--detector", f.detector, "learned | oracle");
  app->add_option("--arm", f.arm, "adaptive | position-only | rotation-only | both");
  app->add_option("--lr", c.learning_rate, "learning rate");
  app->add_option("--momentum", c.momentum, "gradient momentum");
  app->add_option("--epochs", c.epochs, "training epochs");
  app->add_option("--batch-size", c.batch_size, "minibatch size");
  app->add_option("--cpl-strategy", f.cpl_strategy, "ema | naive | replay");
  app->add_option("--cpl-alpha", c.cpl_alpha, "EMA merge coefficient");
  app->add_option("--cpl-iters", c.cpl_iters_per_sample, "fine-tune iterations per sample");
  app->add_option("--cpl-rounds", c.cpl_rounds, "update rounds to stream");
  app->add_option("--cpl-trigger", c.cpl_trigger, "buffer size that triggers an update");
  app->add_option("--cpl-eval-episodes", c.cpl_eval_episodes, "episodes per snapshot set");
  app->add_option("--cpl-stream-cap", c.cpl_stream_cap, "hard cap on streamed episodes");
  app->add_option("--cpl-shift", f.cpl_shift, "stream placement shift (x y z)")
      ->expected(3);
  app->add_option("--cpl-shift-b", f.cpl_shift_b, "second placement shift (x y z)")
      ->expected(3);
  app->add_option("--cpl-iters-sweep", c.cpl_iters_sweep, "iteration counts to ablate");
}

RunConfig resolve(Flags& f) {
  RunConfig cfg = f.cfg;
  cfg.detector_mode = detector_mode_from_string(f.detector);
  cfg.arm = routing_arm_from_string(f.arm);
  cfg.cpl_strategy = cpl_strategy_from_string(f.cpl_strategy);
  if (f.cpl_shift.size() == 3) cfg.cpl_shift = {f.cpl_shift[0], f.cpl_shift[1], f.cpl_shift[2]};
  if (f.cpl_shift_b.size() == 3)
    cfg.cpl_shift_b = {f.cpl_shift_b[0], f.cpl_shift_b[1], f.cpl_shift_b[2]};
  if (!f.config_path.empty()) {
    std::ifstream in(f.config_path);
    if (!in) throw Error("cannot read config " + f.config_path);
    ordered_json j;
    in >> j;
    cfg = config_from_json(j, cfg);
  }
  if (const char* root = std::getenv("DPC_OUT_ROOT"))
    cfg.out_dir = std::string(root) + "/" + cfg.out_dir;
  validate(cfg);
  return cfg;
}

PolicyParams policy_for(const RunConfig& cfg, std::uint64_t seed, const std::string& override_path) {
  const std::string path =
      override_path.empty() ? seed_dir(cfg, seed) + "/policy.json" : override_path;
  return load_policy(path);
}

struct StageClock {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  void done(const std::string& what) const {
    const auto dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0);
    std::cerr << "[dpc] " << what << " (" << dt.count() << "s)\n";
  }
};

template <typename Fn>
int per_seed(const RunConfig& cfg, const std::string& label, Fn&& fn) {
  for (const std::uint64_t seed : cfg.seeds) {
    StageClock clock;
    fn(seed);
    clock.done(label + " seed=" + std::to_string(seed));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dual-process articulated-panel control benchmark"};
  app.require_subcommand(1);

  Flags f;
  std::string policy_path, trace_path;
  std::vector<double> replay_shift;

  CLI::App* gen = app.add_subcommand("gen-data", "draw and verify all datasets");
  CLI::App* train = app.add_subcommand("train", "train the policy on the generated data");
  CLI::App* eval = app.add_subcommand("eval", "run the dual-process evaluation");
  CLI::App* abl_e = app.add_subcommand("ablate-experts", "compare expert routing arms");
  CLI::App* abl_c = app.add_subcommand("ablate-corrections", "sweep the correction budget");
  CLI::App* abl_p = app.add_subcommand("ablate-cpl", "sweep continuous-learning iterations");
  CLI::App* cplr = app.add_subcommand("cpl-run", "stream deployment episodes and update");
  CLI::App* replay = app.add_subcommand("replay", "re-execute a trace file and verify bytes");
  CLI::App* report = app.add_subcommand("report", "aggregate all stage reports");
  CLI::App* run = app.add_subcommand("run", "full pipeline: all stages, then report");

  for (CLI::App* sub : {gen, train, eval, abl_e, abl_c, abl_p, cplr, replay, report, run})
    add_config_flags(sub, f);
  for (CLI::App* sub : {eval, abl_e, abl_c, abl_p, cplr, replay})
    sub->add_option("--policy", policy_path, "checkpoint path (default: the seed's)");
  replay->add_option("--trace", trace_path, "trace JSONL file")->required();
  replay->add_option("--shift", replay_shift, "scene placement shift (x y z)")->expected(3);

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = resolve(f);
    if (gen->parsed())
      return per_seed(cfg, "gen-data", [&](std::uint64_t s) {
        gen_data(cfg, s);
        check_no_leakage(cfg, s);
      });
    if (train->parsed())
      return per_seed(cfg, "train", [&](std::uint64_t s) { train_policy_stage(cfg, s); });
    if (eval->parsed())
      return per_seed(cfg, "eval", [&](std::uint64_t s) {
        const PolicyParams policy = policy_for(cfg, s, policy_path);
        eval_stage(cfg, s, policy);
        detect_eval_stage(cfg, s, policy);
      });
    if (abl_e->parsed())
      return per_seed(cfg, "ablate-experts", [&](std::uint64_t s) {
        ablate_experts(cfg, s, policy_for(cfg, s, policy_path));
      });
    if (abl_c->parsed())
      return per_seed(cfg, "ablate-corrections", [&](std::uint64_t s) {
        ablate_corrections(cfg, s, policy_for(cfg, s, policy_path));
      });
    if (abl_p->parsed())
      return per_seed(cfg, "ablate-cpl", [&](std::uint64_t s) {
        ablate_cpl(cfg, s, policy_for(cfg, s, policy_path));
      });
    if (cplr->parsed())
      return per_seed(cfg, "cpl-run", [&](std::uint64_t s) {
        cpl_run_stage(cfg, s, policy_for(cfg, s, policy_path));
      });
    if (replay->parsed()) {
      SceneSampleOptions opts;
      if (replay_shift.size() == 3)
        opts.placement_shift = {replay_shift[0], replay_shift[1], replay_shift[2]};
      const std::uint64_t seed = cfg.seeds.front();
      const int n = replay_trace_file(cfg, seed, trace_path,
                                      policy_for(cfg, seed, policy_path), opts);
      std::cout << "replayed " << n << " episodes, bytes identical\n";
      return 0;
    }
    if (report->parsed()) {
      report_stage(cfg);
      std::cout << "wrote " << cfg.out_dir << "/summary.csv\n";
      return 0;
    }
    if (run->parsed()) {
      StageClock clock;
      run_pipeline(cfg);
      clock.done("run");
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "dpc: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
