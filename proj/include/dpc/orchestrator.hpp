#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dpc/detect.hpp"
#include "dpc/experts.hpp"
#include "dpc/interact.hpp"
#include "dpc/policy.hpp"
#include "dpc/render.hpp"
#include "dpc/report.hpp"
#include "dpc/rng.hpp"
#include "dpc/scene.hpp"

namespace dpc {

enum class DetectorMode { Learned, Oracle };
enum class RoutingArm { Adaptive, PositionOnly, RotationOnly, Both };
enum class SystemUsed { FastOnly, FastPlusSlow };

inline std::string to_string(DetectorMode m) {
  return m == DetectorMode::Learned ? "learned" : "oracle";
}

inline DetectorMode detector_mode_from_string(const std::string& s) {
  if (s == "learned") return DetectorMode::Learned;
  if (s == "oracle") return DetectorMode::Oracle;
  throw Error("unknown detector mode: " + s);
}

inline std::string to_string(RoutingArm a) {
  switch (a) {
    case RoutingArm::Adaptive: return "adaptive";
    case RoutingArm::PositionOnly: return "position-only";
    case RoutingArm::RotationOnly: return "rotation-only";
    default: return "both";
  }
}

inline RoutingArm routing_arm_from_string(const std::string& s) {
  if (s == "adaptive") return RoutingArm::Adaptive;
  if (s == "position-only") return RoutingArm::PositionOnly;
  if (s == "rotation-only") return RoutingArm::RotationOnly;
  if (s == "both") return RoutingArm::Both;
  throw Error("unknown routing arm: " + s);
}

inline std::string to_string(SystemUsed s) {
  return s == SystemUsed::FastOnly ? "fast" : "fast+slow";
}

struct ExpertCall {
  std::string expert;  // "position" | "reasoning" | "rotation"
  std::uint64_t seed = 0;
};

struct CorrectionStep {
  int attempt_index = 0;  // 1-based
  FailureType detected = FailureType::None;
  double detect_confidence = 0.0;
  std::vector<ExpertCall> experts_invoked;
  ConditioningVector feedback;
  DiscretePose reprediction;
  double entropy = 0.0;  // summed head entropy of the re-prediction
  InteractionOutcome outcome;
  std::string error;  // expert or decode failure text; empty on a clean step
};

struct EpisodeTrace {
  int category_id = 0;
  std::uint64_t scene_seed = 0;
  std::uint64_t episode_seed = 0;
  DiscretePose fast_prediction;
  double fast_entropy = 0.0;
  InteractionOutcome fast_outcome;
  std::vector<CorrectionStep> corrections;
  bool final_success = false;
  SystemUsed system_used = SystemUsed::FastOnly;
};

struct EpisodeConfig {
  int K = 3;
  bool use_slow = true;
  DetectorMode detector_mode = DetectorMode::Learned;
  RoutingArm arm = RoutingArm::Adaptive;
  ExpertFidelity fidelity;
  std::uint64_t seed = 0;  // base of this episode's expert streams
  std::optional<DiscretePose> inject_fast;  // test hook: overrides the fast prediction
};

namespace detail {

// Pixel anchor for the rotation expert: the failed contact when one exists
// and lands on a movable pixel, otherwise the visible movable pixel nearest
// to it (or, on a full miss, nearest to the action ray).
inline std::optional<CandidatePoint> rotation_anchor(const Observation& obs,
                                                     const InteractionOutcome& failed,
                                                     const Pose6D& action) {
  if (failed.contact) {
    if (const auto pr = obs.camera.project(*failed.contact)) {
      const int r = static_cast<int>(std::lround(pr->row));
      const int c = static_cast<int>(std::lround(pr->col));
      if (obs.in_bounds(r, c) && obs.movable(r, c)) {
        CandidatePoint cp;
        cp.row = r;
        cp.col = c;
        cp.world_point = *failed.contact;
        cp.score = 1.0;
        return cp;
      }
    }
  }
  std::optional<CandidatePoint> best;
  double best_d = std::numeric_limits<double>::infinity();
  for (const auto& px : surface_pixels(obs)) {
    const double d = failed.contact ? norm(px.point - *failed.contact)
                                    : point_line_distance(px.point, action.position, action.forward);
    if (d < best_d) {
      best_d = d;
      CandidatePoint cp;
      cp.row = px.row;
      cp.col = px.col;
      cp.world_point = px.point;
      cp.score = 1.0;
      best = cp;
    }
  }
  return best;
}

// Experts dictated by the detected cause. Adaptive maps Position to the
// position chain, Rotation to the rotation expert alone, and Combined to
// position-then-rotation. A failure the detector cannot name (None despite an
// unsuccessful interaction) summons no expert: the re-prediction runs on the
// failure flag and the previous bins alone. Forced arms ignore the cause.
inline bool route_wants_position(RoutingArm arm, FailureType detected) {
  if (arm == RoutingArm::PositionOnly || arm == RoutingArm::Both) return true;
  if (arm == RoutingArm::RotationOnly) return false;
  return detected == FailureType::Position || detected == FailureType::Combined;
}

inline bool route_wants_rotation(RoutingArm arm, FailureType detected) {
  if (arm == RoutingArm::RotationOnly || arm == RoutingArm::Both) return true;
  if (arm == RoutingArm::PositionOnly) return false;
  return detected == FailureType::Rotation || detected == FailureType::Combined;
}

}  // namespace detail

// One Chain-of-Thought episode: fast prediction, interaction, and up to K
// detect-route-repredict corrections. The scene is not reset between
// attempts; partial joint movement persists and every retry re-renders.
inline EpisodeTrace run_episode(const SceneState& initial, int category_id,
                                std::uint64_t scene_seed, const PolicyParams& policy,
                                const EpisodeConfig& cfg, const PoseNormalization& nrm = {}) {
  if (cfg.K < 0) throw Error("negative correction budget");
  EpisodeTrace tr;
  tr.category_id = category_id;
  tr.scene_seed = scene_seed;
  tr.episode_seed = cfg.seed;

  SceneState st = initial;
  Observation obs = render(st);

  Pose6D last_pose;  // the executed pose behind tr/step bins, for the oracle
  bool last_decodable = false;
  if (cfg.inject_fast) {
    tr.fast_prediction = *cfg.inject_fast;
    tr.fast_entropy = 0.0;
  } else {
    const Prediction pred = predict(policy, obs, category_id);
    tr.fast_prediction = pred.pose;
    tr.fast_entropy = prediction_entropy(pred.logits);
  }
  std::string decode_error;
  try {
    last_pose = decode_pose(tr.fast_prediction, nrm);
    last_decodable = true;
  } catch (const Error& e) {
    decode_error = std::string("decode: ") + e.what();
  }
  if (last_decodable) {
    tr.fast_outcome = interact(st, last_pose);
    st = tr.fast_outcome.end_state;
  } else {
    tr.fast_outcome.end_state = st;
  }

  bool success = tr.fast_outcome.success;
  DiscretePose last_bins = tr.fast_prediction;
  InteractionOutcome last_outcome = tr.fast_outcome;

  for (int attempt = 1; attempt <= cfg.K && cfg.use_slow && !success; ++attempt) {
    CorrectionStep step;
    step.attempt_index = attempt;
    step.error = decode_error;
    decode_error.clear();

    // detect on the post-action observation of the failed attempt
    const Observation end_obs = render(st);
    if (cfg.detector_mode == DetectorMode::Oracle) {
      step.detected = last_outcome.failure;
      step.detect_confidence = 1.0;
    } else {
      const Classification cls = classify(policy, end_obs, ActionDescriptor{last_bins, category_id});
      step.detected = cls.failure;
      step.detect_confidence = cls.confidence;
    }

    step.feedback.failure = step.detected;
    step.feedback.prev = last_bins;

    obs = end_obs;  // retries see the moved scene
    std::optional<CandidatePoint> anchor;
    try {
      if (detail::route_wants_position(cfg.arm, step.detected)) {
        const std::uint64_t pos_seed = Rng::derive(cfg.seed, "position", attempt);
        Rng pos_rng(pos_seed);
        auto [map, cands] = position_expert(st, obs, cfg.fidelity, pos_rng);
        step.experts_invoked.push_back({"position", pos_seed});
        const std::uint64_t rsn_seed = Rng::derive(cfg.seed, "reasoning", attempt);
        Rng rsn_rng(rsn_seed);
        const auto top = reasoning_expert(cands, st, kReasoningTopN, cfg.fidelity, rsn_rng);
        step.experts_invoked.push_back({"reasoning", rsn_seed});
        for (const auto& cand : top) {
          ConditioningVector::Point pt;
          pt.row01 = (cand.row + 0.5) / obs.height;
          pt.col01 = (cand.col + 0.5) / obs.width;
          pt.score = cand.score;
          pt.world = cand.world_point;
          step.feedback.points.push_back(pt);
        }
        if (!top.empty()) anchor = top.front();
      }
      if (detail::route_wants_rotation(cfg.arm, step.detected)) {
        if (!anchor) anchor = detail::rotation_anchor(obs, last_outcome, last_pose);
        if (!anchor) throw DegeneratePatch("no movable pixel to anchor the rotation expert");
        const std::uint64_t rot_seed = Rng::derive(cfg.seed, "rotation", attempt);
        Rng rot_rng(rot_seed);
        const auto rots = rotation_expert(*anchor, st, obs, cfg.fidelity, rot_rng);
        step.experts_invoked.push_back({"rotation", rot_seed});
        for (const auto& rot : rots)
          step.feedback.dirs.push_back({rot.up, rot.forward, rot.confidence});
      }
    } catch (const Error& e) {
      // the attempt still counts; the policy re-predicts on partial feedback
      step.error = step.error.empty() ? e.what() : step.error + "; " + e.what();
    }

    const Prediction pred = predict(policy, obs, category_id, step.feedback);
    step.reprediction = pred.pose;
    step.entropy = prediction_entropy(pred.logits);
    last_bins = step.reprediction;
    try {
      last_pose = decode_pose(step.reprediction, nrm);
      step.outcome = interact(st, last_pose);
      st = step.outcome.end_state;
    } catch (const Error& e) {
      decode_error = std::string("decode: ") + e.what();
      step.error = step.error.empty() ? decode_error : step.error + "; " + decode_error;
      step.outcome = InteractionOutcome{};
      step.outcome.end_state = st;
    }
    last_outcome = step.outcome;
    success = step.outcome.success;
    tr.corrections.push_back(std::move(step));
  }

  tr.final_success = success;
  tr.system_used = tr.corrections.empty() ? SystemUsed::FastOnly : SystemUsed::FastPlusSlow;
  return tr;
}

// --- trace serialization ---

inline ordered_json outcome_to_json(const InteractionOutcome& o) {
  ordered_json j;
  j["delta_q"] = o.delta_q;
  j["success"] = o.success;
  j["failure"] = to_string(o.failure);
  if (o.contact) j["contact"] = {o.contact->x, o.contact->y, o.contact->z};
  j["theta_deg"] = o.theta_deg;
  j["lever"] = o.lever;
  j["in_affordance"] = o.in_affordance;
  j["end_q"] = o.end_state.q;
  return j;
}

inline ordered_json feedback_to_json(const ConditioningVector& cv) {
  ordered_json j;
  if (cv.failure) j["failure"] = to_string(*cv.failure);
  if (cv.prev) j["prev"] = cv.prev->bins;
  if (!cv.points.empty()) {
    j["points"] = ordered_json::array();
    for (const auto& p : cv.points)
      j["points"].push_back({{"row01", p.row01},
                             {"col01", p.col01},
                             {"score", p.score},
                             {"world", {p.world.x, p.world.y, p.world.z}}});
  }
  if (!cv.dirs.empty()) {
    j["dirs"] = ordered_json::array();
    for (const auto& d : cv.dirs)
      j["dirs"].push_back({{"up", {d.up.x, d.up.y, d.up.z}},
                           {"forward", {d.forward.x, d.forward.y, d.forward.z}},
                           {"confidence", d.confidence}});
  }
  return j;
}

inline ConditioningVector feedback_from_json(const ordered_json& j) {
  ConditioningVector cv;
  if (j.contains("failure")) cv.failure = failure_type_from_string(j.at("failure").get<std::string>());
  if (j.contains("prev")) {
    DiscretePose dp;
    dp.bins = j.at("prev").get<std::array<int, 9>>();
    cv.prev = dp;
  }
  if (j.contains("points"))
    for (const auto& pj : j.at("points")) {
      ConditioningVector::Point p;
      p.row01 = pj.at("row01").get<double>();
      p.col01 = pj.at("col01").get<double>();
      p.score = pj.at("score").get<double>();
      const auto w = pj.at("world").get<std::array<double, 3>>();
      p.world = Vec3{w[0], w[1], w[2]};
      cv.points.push_back(p);
    }
  if (j.contains("dirs"))
    for (const auto& dj : j.at("dirs")) {
      ConditioningVector::Dir d;
      const auto u = dj.at("up").get<std::array<double, 3>>();
      const auto f = dj.at("forward").get<std::array<double, 3>>();
      d.up = Vec3{u[0], u[1], u[2]};
      d.forward = Vec3{f[0], f[1], f[2]};
      d.confidence = dj.at("confidence").get<double>();
      cv.dirs.push_back(d);
    }
  return cv;
}

inline ordered_json trace_to_json(const EpisodeTrace& tr) {
  ordered_json j;
  j["category_id"] = tr.category_id;
  j["scene_seed"] = tr.scene_seed;
  j["episode_seed"] = tr.episode_seed;
  j["fast"] = {{"bins", tr.fast_prediction.bins},
               {"entropy", tr.fast_entropy},
               {"outcome", outcome_to_json(tr.fast_outcome)}};
  j["corrections"] = ordered_json::array();
  for (const auto& s : tr.corrections) {
    ordered_json sj;
    sj["attempt"] = s.attempt_index;
    sj["detected"] = to_string(s.detected);
    sj["detect_confidence"] = s.detect_confidence;
    sj["experts"] = ordered_json::array();
    for (const auto& c : s.experts_invoked)
      sj["experts"].push_back({{"expert", c.expert}, {"seed", c.seed}});
    sj["feedback"] = feedback_to_json(s.feedback);
    sj["bins"] = s.reprediction.bins;
    sj["entropy"] = s.entropy;
    sj["outcome"] = outcome_to_json(s.outcome);
    if (!s.error.empty()) sj["error"] = s.error;
    j["corrections"].push_back(std::move(sj));
  }
  j["final_success"] = tr.final_success;
  j["system"] = to_string(tr.system_used);
  return j;
}

// Re-executes the episode a trace line records: same scene draw, same episode
// seed, same config. Byte-identical re-serialization is the replay check.
inline EpisodeTrace replay_episode(const CategoryTable& table, const PolicyParams& policy,
                                   const ordered_json& trace_line, const EpisodeConfig& run_cfg,
                                   const PoseNormalization& nrm = {},
                                   const SceneSampleOptions& opts = {}) {
  const int category_id = trace_line.at("category_id").get<int>();
  const std::uint64_t scene_seed = trace_line.at("scene_seed").get<std::uint64_t>();
  EpisodeConfig cfg = run_cfg;
  cfg.seed = trace_line.at("episode_seed").get<std::uint64_t>();
  const SceneState st = sample_scene(table, category_id, scene_seed, opts);
  return run_episode(st, category_id, scene_seed, policy, cfg, nrm);
}

// --- evaluation ---

struct EvalEpisodeRef {
  int category_id = 0;
  std::uint64_t scene_seed = 0;
  std::string split;  // "seen" | "unseen"
};

struct EvalOptions {
  EpisodeConfig episode;  // per-episode seed is derived from `seed` below
  PoseNormalization nrm;
  SceneSampleOptions scene_opts;
  std::string experiment_id = "eval";
  std::string config_hash;
  std::uint64_t seed = 0;
};

struct EvalResult {
  std::vector<EpisodeTrace> traces;
  std::vector<ReportRow> rows;
};

namespace detail {

struct EvalBucket {
  int episodes = 0;
  int fast_successes = 0;
  int final_successes = 0;
  int corrections = 0;
  std::map<int, int> corrections_hist;
  std::map<std::string, int> expert_calls;
  double entropy_fast_sum = 0.0;
  double entropy_corrected_sum = 0.0;
  int corrected_predictions = 0;

  void add(const EpisodeTrace& tr) {
    episodes += 1;
    fast_successes += tr.fast_outcome.success ? 1 : 0;
    final_successes += tr.final_success ? 1 : 0;
    corrections += static_cast<int>(tr.corrections.size());
    corrections_hist[static_cast<int>(tr.corrections.size())] += 1;
    entropy_fast_sum += tr.fast_entropy;
    for (const auto& s : tr.corrections) {
      for (const auto& c : s.experts_invoked) expert_calls[c.expert] += 1;
      entropy_corrected_sum += s.entropy;
      corrected_predictions += 1;
    }
  }

  void emit(std::vector<ReportRow>& rows, const EvalOptions& opt, const std::string& split,
            const std::string& category) const {
    const auto row = [&](const std::string& metric, double value) {
      rows.push_back({opt.experiment_id, split, category, metric, value, opt.seed,
                      opt.config_hash});
    };
    const double n = std::max(1, episodes);
    row("episodes", episodes);
    row("sr_fast", fast_successes / n);
    row("sr_final", final_successes / n);
    if (category != "all") return;  // the remaining diagnostics are split-level
    row("mean_corrections", corrections / n);
    for (const auto& [k, count] : corrections_hist)
      row("hist_corrections_" + std::to_string(k), count / n);
    for (const std::string name : {"position", "reasoning", "rotation"}) {
      const auto it = expert_calls.find(name);
      row("calls_" + name, it == expert_calls.end() ? 0.0 : it->second);
    }
    row("entropy_fast_mean", entropy_fast_sum / n);
    row("entropy_corrected_mean",
        corrected_predictions > 0 ? entropy_corrected_sum / corrected_predictions : 0.0);
  }
};

}  // namespace detail

inline EvalResult evaluate(const CategoryTable& table, const PolicyParams& policy,
                           const std::vector<EvalEpisodeRef>& eval_set, const EvalOptions& opt) {
  if (eval_set.empty()) throw Error("empty eval set");
  EvalResult out;
  out.traces.reserve(eval_set.size());
  detail::EvalBucket all;
  std::map<std::string, detail::EvalBucket> by_split;
  std::map<std::pair<std::string, int>, detail::EvalBucket> by_category;

  for (std::size_t i = 0; i < eval_set.size(); ++i) {
    const auto& ref = eval_set[i];
    EpisodeConfig cfg = opt.episode;
    cfg.seed = Rng::derive(opt.seed, "episode", i);
    const SceneState st = sample_scene(table, ref.category_id, ref.scene_seed, opt.scene_opts);
    EpisodeTrace tr = run_episode(st, ref.category_id, ref.scene_seed, policy, cfg, opt.nrm);
    all.add(tr);
    by_split[ref.split].add(tr);
    by_category[{ref.split, ref.category_id}].add(tr);
    out.traces.push_back(std::move(tr));
  }

  all.emit(out.rows, opt, "all", "all");
  for (const auto& [split, bucket] : by_split) bucket.emit(out.rows, opt, split, "all");
  for (const auto& [key, bucket] : by_category)
    bucket.emit(out.rows, opt, key.first, table.at(key.second).name);
  return out;
}

}  // namespace dpc
