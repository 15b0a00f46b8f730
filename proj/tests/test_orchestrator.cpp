#include <gtest/gtest.h>

#include <map>
#include <string>
#include <vector>

#include "dpc/actions.hpp"
#include "dpc/orchestrator.hpp"

namespace {

using namespace dpc;

const CategoryTable& table() {
  static CategoryTable t = CategoryTable::builtin();
  return t;
}

PolicyParams untrained(std::uint64_t seed = 3) {
  std::vector<std::uint8_t> seen(12, 1);
  return init_policy(PolicyDims{}, seen, seed);
}

std::vector<std::string> expert_names(const CorrectionStep& s) {
  std::vector<std::string> out;
  for (const auto& c : s.experts_invoked) out.push_back(c.expert);
  return out;
}

// Repeatedly draws scenes until sample_action yields the requested mode.
struct Injected {
  SceneState st;
  std::uint64_t scene_seed = 0;
  SampledAction act;
};

Injected inject_case(int category_id, ActionMode mode, std::uint64_t seed_base, int index) {
  const PoseNormalization nrm;
  for (int i = 0; i < 64; ++i) {
    const std::uint64_t scene_seed = Rng::derive(seed_base, "inject-scene", index * 64 + i);
    SceneState st = sample_scene(table(), category_id, scene_seed);
    Rng rng(Rng::derive(seed_base, "inject-act", index * 64 + i));
    if (auto act = sample_action(st, mode, rng, nrm)) return {st, scene_seed, *act};
  }
  throw std::runtime_error("no injectable action found");
}

TEST(Orchestrator, FastSuccessIsFastOnly) {
  const PolicyParams p = untrained();
  for (int i = 0; i < 20; ++i) {
    const Injected c = inject_case(i % 12, ActionMode::Demo, 101, i);
    EpisodeConfig cfg;
    cfg.detector_mode = DetectorMode::Oracle;
    cfg.seed = 7;
    cfg.inject_fast = c.act.bins;
    const EpisodeTrace tr = run_episode(c.st, i % 12, c.scene_seed, p, cfg);
    ASSERT_TRUE(tr.fast_outcome.success);
    ASSERT_TRUE(tr.final_success);
    ASSERT_TRUE(tr.corrections.empty());
    ASSERT_EQ(tr.system_used, SystemUsed::FastOnly);
  }
}

TEST(Orchestrator, KZeroMatchesSlowDisabled) {
  const PolicyParams p = untrained();
  const std::uint64_t scene_seed = 40;
  const SceneState st = sample_scene(table(), 2, scene_seed);
  EpisodeConfig a;
  a.K = 0;
  a.detector_mode = DetectorMode::Oracle;
  a.seed = 9;
  EpisodeConfig b = a;
  b.K = 3;
  b.use_slow = false;
  const EpisodeTrace ta = run_episode(st, 2, scene_seed, p, a);
  const EpisodeTrace tb = run_episode(st, 2, scene_seed, p, b);
  EXPECT_TRUE(ta.corrections.empty());
  EXPECT_EQ(ta.system_used, SystemUsed::FastOnly);
  EXPECT_EQ(trace_to_json(ta).dump(), trace_to_json(tb).dump());
}

TEST(Orchestrator, InjectedRotationFailureRoutesRotationOnly) {
  const PolicyParams p = untrained();
  int checked = 0;
  for (int i = 0; i < 100; ++i) {
    const int cat = i % 12;
    const Injected c = inject_case(cat, ActionMode::RotationError, 202, i);
    EpisodeConfig cfg;
    cfg.K = 1;
    cfg.detector_mode = DetectorMode::Oracle;
    cfg.seed = Rng::derive(55, "ep", i);
    cfg.inject_fast = c.act.bins;
    const EpisodeTrace tr = run_episode(c.st, cat, c.scene_seed, p, cfg);
    ASSERT_FALSE(tr.fast_outcome.success);
    ASSERT_EQ(tr.fast_outcome.failure, FailureType::Rotation);
    ASSERT_EQ(tr.corrections.size(), 1u);
    const CorrectionStep& s = tr.corrections.front();
    ASSERT_EQ(s.detected, FailureType::Rotation);
    ASSERT_TRUE(s.error.empty());
    ASSERT_EQ(expert_names(s), std::vector<std::string>{"rotation"});
    ASSERT_TRUE(s.feedback.points.empty());
    ASSERT_FALSE(s.feedback.dirs.empty());
    ++checked;
  }
  ASSERT_EQ(checked, 100);
}

TEST(Orchestrator, InjectedPositionFailureRoutesPositionChain) {
  const PolicyParams p = untrained();
  for (int i = 0; i < 40; ++i) {
    const int cat = i % 12;
    const Injected c = inject_case(cat, ActionMode::PositionError, 303, i);
    EpisodeConfig cfg;
    cfg.K = 1;
    cfg.detector_mode = DetectorMode::Oracle;
    cfg.seed = Rng::derive(56, "ep", i);
    cfg.inject_fast = c.act.bins;
    const EpisodeTrace tr = run_episode(c.st, cat, c.scene_seed, p, cfg);
    ASSERT_EQ(tr.fast_outcome.failure, FailureType::Position);
    const CorrectionStep& s = tr.corrections.front();
    ASSERT_EQ(s.detected, FailureType::Position);
    ASSERT_TRUE(s.error.empty());
    ASSERT_EQ(expert_names(s), (std::vector<std::string>{"position", "reasoning"}));
    ASSERT_FALSE(s.feedback.points.empty());
    ASSERT_TRUE(s.feedback.dirs.empty());
  }
}

TEST(Orchestrator, CombinedRoutesPositionBeforeRotation) {
  const PolicyParams p = untrained();
  for (int i = 0; i < 40; ++i) {
    const int cat = i % 12;
    const Injected c = inject_case(cat, ActionMode::CombinedError, 404, i);
    EpisodeConfig cfg;
    cfg.K = 1;
    cfg.detector_mode = DetectorMode::Oracle;
    cfg.seed = Rng::derive(57, "ep", i);
    cfg.inject_fast = c.act.bins;
    const EpisodeTrace tr = run_episode(c.st, cat, c.scene_seed, p, cfg);
    ASSERT_EQ(tr.fast_outcome.failure, FailureType::Combined);
    const CorrectionStep& s = tr.corrections.front();
    ASSERT_EQ(s.detected, FailureType::Combined);
    ASSERT_TRUE(s.error.empty());
    ASSERT_EQ(expert_names(s), (std::vector<std::string>{"position", "reasoning", "rotation"}));
    ASSERT_FALSE(s.feedback.points.empty());
    ASSERT_FALSE(s.feedback.dirs.empty());
  }
}

TEST(Orchestrator, ForcedArmsIgnoreDetectedCause) {
  const PolicyParams p = untrained();
  const Injected c = inject_case(4, ActionMode::RotationError, 505, 0);
  EpisodeConfig cfg;
  cfg.K = 1;
  cfg.detector_mode = DetectorMode::Oracle;
  cfg.seed = 61;
  cfg.inject_fast = c.act.bins;

  cfg.arm = RoutingArm::PositionOnly;
  EpisodeTrace tr = run_episode(c.st, 4, c.scene_seed, p, cfg);
  EXPECT_EQ(expert_names(tr.corrections.front()),
            (std::vector<std::string>{"position", "reasoning"}));

  cfg.arm = RoutingArm::Both;
  tr = run_episode(c.st, 4, c.scene_seed, p, cfg);
  EXPECT_EQ(expert_names(tr.corrections.front()),
            (std::vector<std::string>{"position", "reasoning", "rotation"}));

  const Injected cp = inject_case(4, ActionMode::PositionError, 505, 1);
  cfg.arm = RoutingArm::RotationOnly;
  cfg.inject_fast = cp.act.bins;
  tr = run_episode(cp.st, 4, cp.scene_seed, p, cfg);
  EXPECT_EQ(expert_names(tr.corrections.front()), std::vector<std::string>{"rotation"});
}

// Routing, ordering, early stopping, attempt numbering, and oracle agreement
// over real (untrained) predictions.
TEST(Orchestrator, TraceInvariantsHoldOnRealPredictions) {
  const PolicyParams p = untrained(11);
  int steps_seen = 0;
  for (int i = 0; i < 60; ++i) {
    const int cat = i % 12;
    const std::uint64_t scene_seed = Rng::derive(606, "scene", i);
    const SceneState st = sample_scene(table(), cat, scene_seed);
    EpisodeConfig cfg;
    cfg.K = 3;
    cfg.detector_mode = DetectorMode::Oracle;
    cfg.seed = Rng::derive(606, "ep", i);
    const EpisodeTrace tr = run_episode(st, cat, scene_seed, p, cfg);

    ASSERT_EQ(tr.corrections.empty(),
              tr.fast_outcome.success || !cfg.use_slow || cfg.K == 0);
    ASSERT_EQ(tr.system_used,
              tr.corrections.empty() ? SystemUsed::FastOnly : SystemUsed::FastPlusSlow);
    bool any_success = tr.fast_outcome.success;
    FailureType prior = tr.fast_outcome.failure;
    for (std::size_t k = 0; k < tr.corrections.size(); ++k) {
      const CorrectionStep& s = tr.corrections[k];
      ASSERT_FALSE(any_success);  // no step follows a success
      ASSERT_EQ(s.attempt_index, static_cast<int>(k) + 1);
      ASSERT_EQ(s.detected, prior);  // oracle echoes the failed outcome
      if (s.error.empty()) {
        std::vector<std::string> want;
        if (s.detected == FailureType::Position || s.detected == FailureType::Combined) {
          want.push_back("position");
          want.push_back("reasoning");
        }
        if (s.detected == FailureType::Rotation || s.detected == FailureType::Combined)
          want.push_back("rotation");
        ASSERT_EQ(expert_names(s), want);
      }
      ASSERT_TRUE(s.feedback.failure.has_value());
      ASSERT_EQ(*s.feedback.failure, s.detected);
      ASSERT_TRUE(s.feedback.prev.has_value());
      any_success = s.outcome.success;
      prior = s.outcome.failure;
      ++steps_seen;
    }
    ASSERT_EQ(tr.final_success, any_success);
  }
  ASSERT_GT(steps_seen, 100);
}

// A sub-threshold in-affordance nudge moves the joint without success; the
// next attempt must start from the moved state, and the oracle reports None
// for a cause (delta too small, geometry clean), which summons no expert.
TEST(Orchestrator, PartialAdvancePersistsAcrossAttempts) {
  const PolicyParams p = untrained();
  const PoseNormalization nrm;
  int checked = 0;
  for (int i = 0; i < 40 && checked < 5; ++i) {
    const std::uint64_t scene_seed = Rng::derive(707, "scene", i);
    const SceneState st = sample_scene(table(), 7, scene_seed);  // affordance near hinge
    const PanelRect& rect = st.spec.affordance;
    const Vec3 contact = panel_point_world(st.spec, st.q, (rect.u0 + rect.u1) / 2.0,
                                           (rect.v0 + rect.v1) / 2.0);
    const Vec3 n = panel_normal_world(st.spec, st.q);
    SampledAction act;
    try {
      act = quantize_action(make_action_pose(contact, -n), nrm);
    } catch (const Error&) {
      continue;
    }
    const InteractionOutcome probe = interact(st, act.pose);
    if (probe.success || probe.delta_q <= 0.0 || probe.failure != FailureType::None) continue;

    EpisodeConfig cfg;
    cfg.K = 1;
    cfg.detector_mode = DetectorMode::Oracle;
    cfg.seed = Rng::derive(707, "ep", i);
    cfg.inject_fast = act.bins;
    const EpisodeTrace tr = run_episode(st, 7, scene_seed, p, cfg);
    ASSERT_FALSE(tr.fast_outcome.success);
    ASSERT_EQ(tr.fast_outcome.failure, FailureType::None);
    ASSERT_GT(tr.fast_outcome.end_state.q, st.q);
    ASSERT_EQ(tr.corrections.size(), 1u);
    const CorrectionStep& s = tr.corrections.front();
    ASSERT_EQ(s.detected, FailureType::None);
    ASSERT_TRUE(s.experts_invoked.empty());
    ASSERT_TRUE(s.feedback.points.empty());
    ASSERT_TRUE(s.feedback.dirs.empty());
    ASSERT_TRUE(s.feedback.failure.has_value());
    ASSERT_TRUE(s.feedback.prev.has_value());
    // the retry interacts from the advanced joint value
    ASSERT_GE(s.outcome.end_state.q, tr.fast_outcome.end_state.q - 1e-12);
    ++checked;
  }
  ASSERT_GE(checked, 5);
}

TEST(Orchestrator, ExpertSeedsAreDerivedFromEpisodeSeed) {
  const PolicyParams p = untrained();
  const Injected c = inject_case(3, ActionMode::CombinedError, 808, 0);
  EpisodeConfig cfg;
  cfg.K = 2;
  cfg.detector_mode = DetectorMode::Oracle;
  cfg.seed = 90210;
  cfg.inject_fast = c.act.bins;
  const EpisodeTrace tr = run_episode(c.st, 3, c.scene_seed, p, cfg);
  ASSERT_FALSE(tr.corrections.empty());
  for (const auto& s : tr.corrections)
    for (const auto& call : s.experts_invoked)
      EXPECT_EQ(call.seed, Rng::derive(cfg.seed, call.expert, s.attempt_index));
}

TEST(Orchestrator, ReplayReproducesTraceBytes) {
  const PolicyParams p = untrained(17);
  std::vector<EvalEpisodeRef> refs;
  for (int i = 0; i < 12; ++i)
    refs.push_back({i % 12, Rng::derive(909, "scene", i), i % 12 < 8 ? "seen" : "unseen"});
  EvalOptions opt;
  opt.episode.K = 2;
  opt.episode.detector_mode = DetectorMode::Oracle;
  opt.episode.fidelity.noise_sigma = 0.5;  // seeds must matter for this test
  opt.seed = 31;
  const EvalResult res = evaluate(table(), p, refs, opt);
  ASSERT_EQ(res.traces.size(), refs.size());
  for (const auto& tr : res.traces) {
    const ordered_json line = trace_to_json(tr);
    const EpisodeTrace again = replay_episode(table(), p, line, opt.episode);
    EXPECT_EQ(line.dump(), trace_to_json(again).dump());
  }
}

// Overfit one conditioned sample so the first correction actually lands, then
// check the loop stops early and reports the corrected success.
TEST(Orchestrator, SuccessfulCorrectionStopsTheLoop) {
  const int cat = 2;
  const Injected fail_case = inject_case(cat, ActionMode::PositionError, 1010, 0);
  Rng demo_rng(Rng::derive(1010, "demo", 0));
  const PoseNormalization nrm;
  const auto demo = sample_action(fail_case.st, ActionMode::Demo, demo_rng, nrm);
  ASSERT_TRUE(demo.has_value());

  EpisodeConfig cfg;
  cfg.K = 3;
  cfg.detector_mode = DetectorMode::Oracle;
  cfg.seed = 77;
  cfg.inject_fast = fail_case.act.bins;

  PolicyParams p = untrained(23);
  const EpisodeTrace capture =
      run_episode(fail_case.st, cat, fail_case.scene_seed, p, cfg, nrm);
  ASSERT_FALSE(capture.final_success);
  ASSERT_EQ(capture.corrections.size(), 3u);

  // the failed position attempt leaves the joint untouched, so the retry
  // observation equals the initial render
  const Observation obs = render(fail_case.st);
  const TrainSample s =
      make_train_sample(p, obs, cat, capture.corrections.front().feedback, demo->bins);
  TrainConfig tc;
  tc.learning_rate = 0.003;
  tc.epochs = 300;
  tc.batch_size = 1;
  p = train(p, {s}, tc).params;

  const EpisodeTrace tr = run_episode(fail_case.st, cat, fail_case.scene_seed, p, cfg, nrm);
  ASSERT_EQ(tr.corrections.size(), 1u);
  EXPECT_EQ(tr.corrections.front().reprediction.bins, demo->bins.bins);
  EXPECT_TRUE(tr.corrections.front().outcome.success);
  EXPECT_TRUE(tr.final_success);
  EXPECT_EQ(tr.system_used, SystemUsed::FastPlusSlow);
}

TEST(Orchestrator, EvaluateRowsMatchTraces) {
  const PolicyParams p = untrained(29);
  std::vector<EvalEpisodeRef> refs;
  for (int i = 0; i < 30; ++i) {
    const int cat = i % 3 == 0 ? 9 : i % 3;  // two splits represented
    refs.push_back({cat, Rng::derive(1111, "scene", i),
                    table().at(cat).seen ? "seen" : "unseen"});
  }
  EvalOptions opt;
  opt.episode.K = 2;
  opt.episode.detector_mode = DetectorMode::Oracle;
  opt.experiment_id = "unit";
  opt.config_hash = "deadbeef";
  opt.seed = 5;
  const EvalResult res = evaluate(table(), p, refs, opt);

  const auto value = [&](const std::string& split, const std::string& category,
                         const std::string& metric) {
    for (const auto& r : res.rows)
      if (r.split == split && r.category == category && r.metric == metric) return r.value;
    ADD_FAILURE() << "missing row " << split << "/" << category << "/" << metric;
    return -1.0;
  };

  int fast_ok = 0, final_ok = 0, pos_calls = 0;
  for (const auto& tr : res.traces) {
    fast_ok += tr.fast_outcome.success ? 1 : 0;
    final_ok += tr.final_success ? 1 : 0;
    for (const auto& s : tr.corrections)
      for (const auto& c : s.experts_invoked) pos_calls += c.expert == "position" ? 1 : 0;
  }
  EXPECT_EQ(value("all", "all", "episodes"), 30.0);
  EXPECT_DOUBLE_EQ(value("all", "all", "sr_fast"), fast_ok / 30.0);
  EXPECT_DOUBLE_EQ(value("all", "all", "sr_final"), final_ok / 30.0);
  EXPECT_DOUBLE_EQ(value("all", "all", "calls_position"), pos_calls);
  EXPECT_EQ(value("seen", "all", "episodes") + value("unseen", "all", "episodes"), 30.0);

  double hist = 0.0;
  for (const auto& r : res.rows)
    if (r.split == "all" && r.category == "all" && r.metric.rfind("hist_corrections_", 0) == 0)
      hist += r.value;
  EXPECT_NEAR(hist, 1.0, 1e-12);

  for (const auto& r : res.rows) {
    EXPECT_EQ(r.experiment_id, "unit");
    EXPECT_EQ(r.config_hash, "deadbeef");
    EXPECT_EQ(r.seed, 5u);
  }
}

TEST(Orchestrator, EvaluateRejectsEmptySet) {
  const PolicyParams p = untrained();
  EXPECT_THROW(evaluate(table(), p, {}, EvalOptions{}), Error);
}

}  // namespace
