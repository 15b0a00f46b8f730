#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dpc/orchestrator.hpp"
#include "dpc/policy.hpp"

namespace dpc {

// One successfully corrected attempt, stored in the fast-system format: the
// observation the re-prediction saw and the bins that worked, no conditioning.
struct CplSample {
  Observation obs;
  int category_id = 0;
  DiscretePose bins;
};

struct SuccessBuffer {
  std::vector<CplSample> samples;
  int trigger_size = 50;
  int admitted_total = 0;  // lifetime count, survives clearing

  int size() const { return static_cast<int>(samples.size()); }
};

enum class CplStrategy { EMA, NaiveFineTune, Replay };

inline std::string to_string(CplStrategy s) {
  switch (s) {
    case CplStrategy::EMA: return "ema";
    case CplStrategy::NaiveFineTune: return "naive";
    default: return "replay";
  }
}

inline CplStrategy cpl_strategy_from_string(const std::string& s) {
  if (s == "ema") return CplStrategy::EMA;
  if (s == "naive") return CplStrategy::NaiveFineTune;
  if (s == "replay") return CplStrategy::Replay;
  throw Error("unknown CPL strategy: " + s);
}

struct CPLConfig {
  double alpha = 0.999;
  int iters_per_sample = 1;  // full-buffer gradient steps per buffered sample
  bool adapter_only = true;
  CplStrategy strategy = CplStrategy::EMA;
  double replay_ratio = 0.25;
  double learning_rate = 0.003;
  double momentum = 0.9;
  std::uint64_t seed = 0;
};

struct CplSnapshot {
  int round = 0;
  double test_sr = 0.0;
  double testB_sr = 0.0;
  double heldout_sr = 0.0;
};

struct CPLState {
  int t = 0;  // completed update rounds
  PolicyParams params;
  std::vector<CplSnapshot> history;
};

// Pulls the succeeding correction out of a finished episode. The observation
// is re-rendered from the joint value the retry actually saw, so a trace is
// all the evidence needed.
inline SuccessBuffer& admit(SuccessBuffer& buffer, const EpisodeTrace& trace,
                            const CategoryTable& table, const SceneSampleOptions& opts = {}) {
  if (!trace.final_success)
    throw RejectNonCorrected("episode did not succeed");
  if (trace.corrections.empty())
    throw RejectNonCorrected("fast-only success carries no correction to learn from");
  const CorrectionStep& last = trace.corrections.back();
  if (!last.outcome.success)
    throw RejectNonCorrected("final correction did not succeed");

  const SceneState drawn = sample_scene(table, trace.category_id, trace.scene_seed, opts);
  SceneState at_retry = drawn;
  at_retry.q = trace.corrections.size() == 1
                   ? trace.fast_outcome.end_state.q
                   : trace.corrections[trace.corrections.size() - 2].outcome.end_state.q;

  CplSample s;
  s.obs = render(at_retry);
  s.category_id = trace.category_id;
  s.bins = last.reprediction;
  buffer.samples.push_back(std::move(s));
  buffer.admitted_total += 1;
  return buffer;
}

// Elementwise affine merge of two parameter sets:
//   merged = alpha * previous + (1 - alpha) * fresh
// The limits are exact: alpha 1 returns `previous` bitwise, alpha 0 returns
// `fresh` bitwise. Non-numeric members (dims, seen, rng_seed) come from
// `previous` in between.
inline PolicyParams ema_merge(const PolicyParams& previous, const PolicyParams& fresh,
                              double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error("alpha outside [0, 1]");
  if (!(previous.dims == fresh.dims)) throw ShapeMismatch("merge across different dimensions");
  if (alpha == 1.0) return previous;
  if (alpha == 0.0) return fresh;
  PolicyParams out = previous;
  const double beta = 1.0 - alpha;
  // a tensor the fine-tune left untouched merges to itself; copying it
  // bitwise keeps frozen parameters exactly fixed across rounds
  const auto mix = [&](auto& dst, const auto& a, const auto& b) {
    if ((a.array() == b.array()).all()) return;
    dst = alpha * a + beta * b;
  };
  mix(out.W1, previous.W1, fresh.W1);
  mix(out.b1, previous.b1, fresh.b1);
  mix(out.W2, previous.W2, fresh.W2);
  mix(out.b2, previous.b2, fresh.b2);
  mix(out.head_W, previous.head_W, fresh.head_W);
  mix(out.head_b, previous.head_b, fresh.head_b);
  mix(out.detect_W, previous.detect_W, fresh.detect_W);
  mix(out.detect_b, previous.detect_b, fresh.detect_b);
  mix(out.task_emb, previous.task_emb, fresh.task_emb);
  mix(out.adapters.A, previous.adapters.A, fresh.adapters.A);
  mix(out.adapters.B, previous.adapters.B, fresh.adapters.B);
  mix(out.adapters.bias, previous.adapters.bias, fresh.adapters.bias);
  return out;
}

namespace detail {

inline std::vector<TrainSample> buffer_train_set(const PolicyParams& p,
                                                 const SuccessBuffer& buffer) {
  std::vector<TrainSample> set;
  set.reserve(buffer.samples.size());
  for (const auto& s : buffer.samples)
    set.push_back(make_train_sample(p, s.obs, s.category_id, ConditioningVector{}, s.bins));
  return set;
}

}  // namespace detail

// Fine-tunes on the buffered corrections and merges per strategy once the
// buffer reaches its trigger size. Returns false (and changes nothing) below
// the trigger. A trainer error propagates with the state untouched.
inline bool maybe_update(CPLState& state, SuccessBuffer& buffer, const CPLConfig& cfg,
                         const std::vector<TrainSample>& replay_pool = {}) {
  if (buffer.size() < buffer.trigger_size) return false;

  std::vector<TrainSample> set = detail::buffer_train_set(state.params, buffer);
  if (cfg.strategy == CplStrategy::Replay && !replay_pool.empty()) {
    const int extra = static_cast<int>(cfg.replay_ratio * buffer.size());
    Rng rng(Rng::derive(cfg.seed, "replay", static_cast<std::uint64_t>(state.t)));
    for (int i = 0; i < extra; ++i)
      set.push_back(
          replay_pool[rng.uniform_int(0, static_cast<std::int64_t>(replay_pool.size()) - 1)]);
  }

  TrainConfig tc;
  tc.learning_rate = cfg.learning_rate;
  tc.momentum = cfg.momentum;
  tc.batch_size = static_cast<int>(set.size());  // full-buffer steps
  tc.epochs = std::max(1, cfg.iters_per_sample * buffer.size());
  tc.seed = Rng::derive(cfg.seed, "cpl-train", static_cast<std::uint64_t>(state.t));
  tc.adapter_only = cfg.adapter_only;
  const PolicyParams fine_tuned = train(state.params, set, tc).params;

  state.params = cfg.strategy == CplStrategy::NaiveFineTune
                     ? fine_tuned
                     : ema_merge(state.params, fine_tuned, cfg.alpha);
  state.t += 1;
  buffer.samples.clear();
  return true;
}

// Fast-mode (unconditioned, no retries) success fraction over scene refs.
inline double fast_success_rate(const CategoryTable& table, const PolicyParams& p,
                                const std::vector<EvalEpisodeRef>& refs,
                                const SceneSampleOptions& opts = {},
                                const PoseNormalization& nrm = {}) {
  if (refs.empty()) throw Error("empty eval set");
  int ok = 0;
  EpisodeConfig cfg;
  cfg.use_slow = false;
  for (const auto& ref : refs) {
    const SceneState st = sample_scene(table, ref.category_id, ref.scene_seed, opts);
    ok += run_episode(st, ref.category_id, ref.scene_seed, p, cfg, nrm).final_success ? 1 : 0;
  }
  return static_cast<double>(ok) / static_cast<double>(refs.size());
}

struct CplEvalSet {
  std::vector<EvalEpisodeRef> refs;
  SceneSampleOptions opts;
};

// test: the distribution the CPL stream is drawn from; testB: the same refs
// under a different relative placement; heldout: the original training
// distribution, never fine-tuned on.
struct CplEvalSets {
  CplEvalSet test;
  CplEvalSet testB;
  CplEvalSet heldout;
};

inline CplSnapshot cpl_snapshot(const CPLState& state, const CategoryTable& table,
                                const CplEvalSets& sets, const PoseNormalization& nrm = {}) {
  if (sets.test.refs.empty() || sets.testB.refs.empty() || sets.heldout.refs.empty())
    throw Error("forgetting evaluation needs all three sets");
  CplSnapshot snap;
  snap.round = state.t;
  snap.test_sr = fast_success_rate(table, state.params, sets.test.refs, sets.test.opts, nrm);
  snap.testB_sr = fast_success_rate(table, state.params, sets.testB.refs, sets.testB.opts, nrm);
  snap.heldout_sr =
      fast_success_rate(table, state.params, sets.heldout.refs, sets.heldout.opts, nrm);
  return snap;
}

inline std::string forgetting_csv(const CPLState& state, CplStrategy strategy) {
  std::ostringstream os;
  os.precision(17);
  os << "round,test_sr,testB_sr,heldout_sr,strategy\n";
  for (const auto& s : state.history)
    os << s.round << ',' << s.test_sr << ',' << s.testB_sr << ',' << s.heldout_sr << ','
       << to_string(strategy) << '\n';
  return os.str();
}

// Improvement on the stream distribution and drop on the held-out original
// distribution, from the first to the last recorded snapshot.
inline std::vector<ReportRow> forgetting_eval(const CPLState& state, CplStrategy strategy,
                                              const std::string& experiment_id,
                                              std::uint64_t seed,
                                              const std::string& config_hash) {
  if (state.history.empty()) throw Error("no snapshots recorded");
  std::vector<ReportRow> rows;
  const auto row = [&](const std::string& split, const std::string& metric, double value) {
    rows.push_back({experiment_id, split, "all", metric, value, seed, config_hash});
  };
  for (const auto& s : state.history) {
    const std::string r = std::to_string(s.round);
    row("test", "sr_round_" + r, s.test_sr);
    row("testB", "sr_round_" + r, s.testB_sr);
    row("heldout", "sr_round_" + r, s.heldout_sr);
  }
  const CplSnapshot& first = state.history.front();
  const CplSnapshot& last = state.history.back();
  row("test", "improvement", last.test_sr - first.test_sr);
  row("heldout", "drop", first.heldout_sr - last.heldout_sr);
  row("all", "rounds", last.round);
  row("all", "strategy_" + to_string(strategy), 1.0);
  return rows;
}

}  // namespace dpc
