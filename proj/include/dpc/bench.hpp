#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dpc/actions.hpp"
#include "dpc/cpl.hpp"
#include "dpc/detect.hpp"
#include "dpc/orchestrator.hpp"

namespace dpc {

struct RunConfig {
  std::vector<std::uint64_t> seeds{1};
  // dataset sizes
  int demos = 2000;
  int failures = 2000;
  int correction_variants = 4;  // conditioning variants per failure tuple
  int detect_train = 2400;
  int detect_eval = 1100;  // ~0.6 failure share keeps 600+ labeled failures held out
  int eval_episodes = 600;
  // category split
  std::vector<int> seen_categories{0, 1, 2, 3, 4, 5, 6, 7};
  std::vector<int> unseen_categories{8, 9, 10, 11};
  // slow system
  int K = 3;
  ExpertFidelity fidelity;
  DetectorMode detector_mode = DetectorMode::Learned;
  RoutingArm arm = RoutingArm::Adaptive;
  // trainer
  double learning_rate = 0.003;
  double momentum = 0.9;
  int epochs = 16;
  int batch_size = 32;
  // continuous learning
  CplStrategy cpl_strategy = CplStrategy::EMA;
  double cpl_alpha = 0.999;
  int cpl_iters_per_sample = 1;
  int cpl_rounds = 2;
  int cpl_trigger = 50;
  int cpl_eval_episodes = 120;
  int cpl_stream_cap = 2000;
  Vec3 cpl_shift{0.25, 0.15, 0.0};     // the deployment stream's placement
  Vec3 cpl_shift_b{-0.20, 0.25, 0.0};  // Test-B twin placement
  std::vector<int> cpl_iters_sweep{1, 2, 4};
  std::string out_dir = "runs/default";
};

inline void validate(const RunConfig& cfg) {
  if (cfg.seeds.empty()) throw Error("no seeds");
  if (cfg.demos < 1 || cfg.failures < 1 || cfg.detect_train < 1 || cfg.detect_eval < 1 ||
      cfg.eval_episodes < 1 || cfg.correction_variants < 1)
    throw Error("all dataset sizes must be at least 1");
  if (cfg.seen_categories.empty()) throw Error("no seen categories");
  std::set<int> seen(cfg.seen_categories.begin(), cfg.seen_categories.end());
  for (int c : cfg.unseen_categories)
    if (seen.count(c)) throw Error("category " + std::to_string(c) + " is in both splits");
}

inline ordered_json config_to_json(const RunConfig& c) {
  ordered_json j;
  j["seeds"] = c.seeds;
  j["demos"] = c.demos;
  j["failures"] = c.failures;
  j["correction_variants"] = c.correction_variants;
  j["detect_train"] = c.detect_train;
  j["detect_eval"] = c.detect_eval;
  j["eval_episodes"] = c.eval_episodes;
  j["seen_categories"] = c.seen_categories;
  j["unseen_categories"] = c.unseen_categories;
  j["K"] = c.K;
  j["noise_sigma"] = c.fidelity.noise_sigma;
  j["corruption_prob"] = c.fidelity.corruption_prob;
  j["detector_mode"] = to_string(c.detector_mode);
  j["arm"] = to_string(c.arm);
  j["learning_rate"] = c.learning_rate;
  j["momentum"] = c.momentum;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["cpl_strategy"] = to_string(c.cpl_strategy);
  j["cpl_alpha"] = c.cpl_alpha;
  j["cpl_iters_per_sample"] = c.cpl_iters_per_sample;
  j["cpl_rounds"] = c.cpl_rounds;
  j["cpl_trigger"] = c.cpl_trigger;
  j["cpl_eval_episodes"] = c.cpl_eval_episodes;
  j["cpl_stream_cap"] = c.cpl_stream_cap;
  j["cpl_shift"] = {c.cpl_shift.x, c.cpl_shift.y, c.cpl_shift.z};
  j["cpl_shift_b"] = {c.cpl_shift_b.x, c.cpl_shift_b.y, c.cpl_shift_b.z};
  j["cpl_iters_sweep"] = c.cpl_iters_sweep;
  j["out_dir"] = c.out_dir;
  return j;
}

// Applies the keys present in j on top of `base`; anything absent keeps its
// current value, so a config file can override just a few flags.
inline RunConfig config_from_json(const ordered_json& j, RunConfig base = {}) {
  const auto get = [&](const char* key, auto& dst) {
    if (j.contains(key)) dst = j.at(key).get<std::decay_t<decltype(dst)>>();
  };
  get("seeds", base.seeds);
  get("demos", base.demos);
  get("failures", base.failures);
  get("correction_variants", base.correction_variants);
  get("detect_train", base.detect_train);
  get("detect_eval", base.detect_eval);
  get("eval_episodes", base.eval_episodes);
  get("seen_categories", base.seen_categories);
  get("unseen_categories", base.unseen_categories);
  get("K", base.K);
  get("noise_sigma", base.fidelity.noise_sigma);
  get("corruption_prob", base.fidelity.corruption_prob);
  if (j.contains("detector_mode"))
    base.detector_mode = detector_mode_from_string(j.at("detector_mode").get<std::string>());
  if (j.contains("arm")) base.arm = routing_arm_from_string(j.at("arm").get<std::string>());
  get("learning_rate", base.learning_rate);
  get("momentum", base.momentum);
  get("epochs", base.epochs);
  get("batch_size", base.batch_size);
  if (j.contains("cpl_strategy"))
    base.cpl_strategy = cpl_strategy_from_string(j.at("cpl_strategy").get<std::string>());
  get("cpl_alpha", base.cpl_alpha);
  get("cpl_iters_per_sample", base.cpl_iters_per_sample);
  get("cpl_rounds", base.cpl_rounds);
  get("cpl_trigger", base.cpl_trigger);
  get("cpl_eval_episodes", base.cpl_eval_episodes);
  get("cpl_stream_cap", base.cpl_stream_cap);
  if (j.contains("cpl_shift")) {
    const auto v = j.at("cpl_shift").get<std::array<double, 3>>();
    base.cpl_shift = Vec3{v[0], v[1], v[2]};
  }
  if (j.contains("cpl_shift_b")) {
    const auto v = j.at("cpl_shift_b").get<std::array<double, 3>>();
    base.cpl_shift_b = Vec3{v[0], v[1], v[2]};
  }
  get("cpl_iters_sweep", base.cpl_iters_sweep);
  get("out_dir", base.out_dir);
  return base;
}

inline std::string config_hash(const RunConfig& cfg) {
  RunConfig keyed = cfg;
  keyed.out_dir.clear();  // two runs of the same experiment hash alike anywhere
  const std::uint64_t h = hash_label(config_to_json(keyed).dump());
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

// --- filesystem plumbing ---

inline std::string seed_dir(const RunConfig& cfg, std::uint64_t seed) {
  return cfg.out_dir + "/seed_" + std::to_string(seed);
}

inline void write_text(const std::string& path, const std::string& text) {
  std::filesystem::create_directories(std::filesystem::path(path).parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << text;
}

inline void write_jsonl(const std::string& path, const std::vector<ordered_json>& lines) {
  std::string text;
  for (const auto& j : lines) {
    text += j.dump();
    text += '\n';
  }
  write_text(path, text);
}

inline std::vector<ordered_json> read_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path);
  std::vector<ordered_json> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(ordered_json::parse(line));
  }
  return out;
}

// --- dataset generation ---

namespace detail {

inline std::vector<int> all_categories(const RunConfig& cfg) {
  std::vector<int> cats = cfg.seen_categories;
  cats.insert(cats.end(), cfg.unseen_categories.begin(), cfg.unseen_categories.end());
  return cats;
}

inline std::vector<std::uint8_t> seen_mask(const RunConfig& cfg, int n_cat) {
  std::vector<std::uint8_t> mask(n_cat, 0);
  for (int c : cfg.seen_categories) {
    if (c < 0 || c >= n_cat) throw UnknownCategory("category " + std::to_string(c));
    mask[c] = 1;
  }
  for (int c : cfg.unseen_categories)
    if (c < 0 || c >= n_cat) throw UnknownCategory("category " + std::to_string(c));
  return mask;
}

inline ordered_json action_line(int category, std::uint64_t scene_seed, const DiscretePose& dp) {
  ordered_json j;
  j["category"] = category;
  j["scene_seed"] = scene_seed;
  j["bins"] = dp.bins;
  return j;
}

inline DiscretePose bins_of(const ordered_json& j) {
  DiscretePose dp;
  dp.bins = j.at("bins").get<std::array<int, 9>>();
  return dp;
}

// Success-verified corrected action built from oracle feedback: contact at
// the given world point (snapped into the affordance), approach along the
// expert frame when one is given, anti-normal otherwise. When the snapped
// contact cannot clear the lever threshold the contact marches toward the
// affordance edge farthest from the hinge.
inline std::optional<SampledAction> feedback_target(
    const SceneState& st, const PoseNormalization& nrm, const Vec3& contact_world,
    const std::optional<CandidateRotation>& frame) {
  const SceneSpec& s = st.spec;
  const PanelRect& r = s.affordance;
  const double mu = 0.04 * (r.u1 - r.u0), mv = 0.04 * (r.v1 - r.v0);
  double u, v;
  panel_world_to_local(s, st.q, contact_world, u, v);
  double uf = std::clamp(u, r.u0 + mu, r.u1 - mu);
  double vf = std::clamp(v, r.v0 + mv, r.v1 - mv);
  const double u0 = uf, v0 = vf;
  if (s.joint == JointKind::Revolute) {
    switch (s.hinge) {
      case HingeSide::Left: uf = r.u1 - mu; break;
      case HingeSide::Right: uf = r.u0 + mu; break;
      case HingeSide::Top: vf = r.v0 + mv; break;
      default: vf = r.v1 - mv; break;
    }
  }
  for (const double frac : {0.0, 0.25, 0.5, 0.75, 1.0}) {
    const double uu = u0 + frac * (uf - u0);
    const double vv = v0 + frac * (vf - v0);
    const Vec3 cw = panel_point_world(s, st.q, uu, vv);
    Pose6D pose;
    if (frame)
      pose = Pose6D{cw - frame->forward * kActionStandoff, frame->up, frame->forward};
    else
      pose = make_action_pose(cw, panel_normal_world(s, st.q) * -1.0);
    const SampledAction act = quantize_action(pose, nrm);
    if (interact(st, act.pose).success) return act;
  }
  return std::nullopt;
}

}  // namespace detail

// Scripted demonstrations and labeled failures. Every demo is re-verified to
// succeed and every failure label is re-checked against the rule oracle
// before the line is written. Throws InsufficientSuccesses when fewer than
// one scene in ten yields an accepted demonstration.
inline void gen_data(const RunConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  const CategoryTable table = CategoryTable::builtin();
  const PoseNormalization nrm;
  const std::string dir = seed_dir(cfg, seed);
  const int n_seen = static_cast<int>(cfg.seen_categories.size());

  std::vector<ordered_json> demo_lines;
  int attempts = 0;
  while (static_cast<int>(demo_lines.size()) < cfg.demos) {
    const int i = attempts++;
    if (attempts > 500 && demo_lines.size() * 10 < static_cast<std::size_t>(attempts))
      throw InsufficientSuccesses("demo acceptance rate below 10%");
    const int cat = cfg.seen_categories[i % n_seen];
    const std::uint64_t scene_seed = Rng::derive(seed, "demo-scene", i);
    const SceneState st = sample_scene(table, cat, scene_seed);
    Rng rng(Rng::derive(seed, "demo-act", i));
    const auto act = sample_action(st, ActionMode::Demo, rng, nrm);
    if (!act) continue;
    demo_lines.push_back(detail::action_line(cat, scene_seed, act->bins));
  }
  write_jsonl(dir + "/demos.jsonl", demo_lines);

  const auto gen_labeled = [&](int count, std::string_view scene_label,
                               std::string_view act_label, bool seen_only,
                               const std::array<double, 4>& mix) {
    std::vector<ordered_json> lines;
    const std::vector<int> cats =
        seen_only ? cfg.seen_categories : detail::all_categories(cfg);
    std::array<int, 4> produced{};
    Rng mode_rng(Rng::derive(seed, std::string(scene_label) + "-mode"));
    int attempt = 0;
    while (static_cast<int>(lines.size()) < count) {
      const int i = attempt++;
      if (attempt > 200 * count) throw Error("labeled draw budget exhausted");
      // the kind is fixed before any scene is drawn, so an unsamplable scene
      // cannot skew the class mix
      const double u = mode_rng.uniform01();
      ActionMode mode;
      FailureType want;
      if (u < mix[0]) {
        mode = ActionMode::Demo;
        want = FailureType::None;
      } else if (u < mix[0] + mix[1]) {
        mode = ActionMode::PositionError;
        want = FailureType::Position;
      } else if (u < mix[0] + mix[1] + mix[2]) {
        mode = ActionMode::RotationError;
        want = FailureType::Rotation;
      } else {
        mode = ActionMode::CombinedError;
        want = FailureType::Combined;
      }
      const int cat = cats[i % cats.size()];
      const std::uint64_t scene_seed = Rng::derive(seed, scene_label, i);
      const SceneState st = sample_scene(table, cat, scene_seed);
      Rng rng(Rng::derive(seed, act_label, i));
      const auto act = sample_action(st, mode, rng, nrm);
      if (!act) continue;
      const FailureType oracle = failure_oracle(st, act->pose);
      if (mode != ActionMode::Demo && oracle != want) continue;
      ordered_json j = detail::action_line(cat, scene_seed, act->bins);
      j["label"] = to_string(oracle);
      lines.push_back(std::move(j));
      produced[static_cast<int>(oracle)] += 1;
    }
    for (int k = 0; k < 4; ++k)
      if (mix[k] > 0.0 && produced[k] == 0)
        throw EmptyClass("class " + to_string(static_cast<FailureType>(k)) + " never sampled");
    return lines;
  };

  // pure failures, three kinds in equal shares
  const auto failure_lines =
      gen_labeled(cfg.failures, "fail-scene", "fail-act", true, {0.0, 1.0 / 3, 1.0 / 3, 1.0 / 3});
  write_jsonl(dir + "/failures.jsonl", failure_lines);

  // detector sets keep a success share so the head sees all five outcomes
  write_jsonl(dir + "/detect_train.jsonl",
              gen_labeled(cfg.detect_train, "detect-scene", "detect-act", true,
                          {0.4, 0.2, 0.2, 0.2}));
  write_jsonl(dir + "/detect_eval.jsonl",
              gen_labeled(cfg.detect_eval, "deval-scene", "deval-act", false,
                          {0.4, 0.2, 0.2, 0.2}));

  // correction tuples: oracle feedback + a corrected target per failure,
  // fanned out over the conditioning variants the slow system produces
  std::vector<ordered_json> corr_lines;
  const ExpertFidelity oracle_fidelity{};
  for (std::size_t t = 0; t < failure_lines.size(); ++t) {
    const auto& fj = failure_lines[t];
    const int cat = fj.at("category").get<int>();
    const std::uint64_t scene_seed = fj.at("scene_seed").get<std::uint64_t>();
    const SceneState st = sample_scene(table, cat, scene_seed);
    const DiscretePose failed = detail::bins_of(fj);
    const Pose6D failed_pose = decode_pose(failed, nrm);
    const InteractionOutcome out = interact(st, failed_pose);

    Rng demo_rng(Rng::derive(seed, "corr-demo", t));
    const auto fallback = sample_action(st, ActionMode::Demo, demo_rng, nrm);
    if (!fallback) continue;

    ConditioningVector base;
    base.failure = out.failure;
    base.prev = failed;

    std::vector<ConditioningVector::Point> points;
    std::vector<CandidatePoint> kept;
    std::optional<CandidateRotation> frame_contact, frame_top;
    std::vector<ConditioningVector::Dir> dirs_contact, dirs_top;
    std::optional<CandidatePoint> anchor_contact;
    try {
      const Observation obs = render(st);
      Rng pos_rng(Rng::derive(seed, "corr-pos", t));
      auto [map, cands] = position_expert(st, obs, oracle_fidelity, pos_rng);
      Rng rsn_rng(Rng::derive(seed, "corr-rsn", t));
      kept = reasoning_expert(cands, st, kReasoningTopN, oracle_fidelity, rsn_rng);
      for (const auto& cand : kept) {
        ConditioningVector::Point pt;
        pt.row01 = (cand.row + 0.5) / obs.height;
        pt.col01 = (cand.col + 0.5) / obs.width;
        pt.score = cand.score;
        pt.world = cand.world_point;
        points.push_back(pt);
      }

      anchor_contact = detail::rotation_anchor(obs, out, failed_pose);
      Rng rot_c(Rng::derive(seed, "corr-rot-c", t));
      if (anchor_contact) {
        const auto rots = rotation_expert(*anchor_contact, st, obs, oracle_fidelity, rot_c);
        for (const auto& r : rots) dirs_contact.push_back({r.up, r.forward, r.confidence});
        if (!rots.empty()) frame_contact = rots.front();
      }
      Rng rot_t(Rng::derive(seed, "corr-rot-t", t));
      if (!kept.empty()) {
        const auto rots = rotation_expert(kept.front(), st, obs, oracle_fidelity, rot_t);
        for (const auto& r : rots) dirs_top.push_back({r.up, r.forward, r.confidence});
        if (!rots.empty()) frame_top = rots.front();
      }
    } catch (const DegeneratePatch&) {
      continue;
    }

    // each variant's target follows its own feedback: contact from the
    // candidate points where points are given, the failed contact where only
    // directions are, the frame from the directions where given
    const auto points_target = [&](const std::optional<CandidateRotation>& frame) {
      for (const auto& cand : kept)
        if (const auto act = detail::feedback_target(st, nrm, cand.world_point, frame))
          return *act;
      return *fallback;
    };
    const auto contact_target = [&]() {
      const Vec3 at = out.contact ? *out.contact
                     : anchor_contact ? anchor_contact->world_point
                                      : failed_pose.position;
      if (const auto act = detail::feedback_target(st, nrm, at, frame_contact)) return *act;
      return *fallback;
    };

    for (int v = 0; v < cfg.correction_variants; ++v) {
      ConditioningVector cv = base;
      SampledAction target = *fallback;
      switch (v % 4) {
        case 1:
          cv.points = points;
          target = points_target(std::nullopt);
          break;
        case 2:
          cv.dirs = dirs_contact;
          if (!dirs_contact.empty()) target = contact_target();
          break;
        case 3:
          cv.points = points;
          cv.dirs = dirs_top;
          target = points_target(frame_top);
          break;
        default: break;
      }
      ordered_json j;
      j["category"] = cat;
      j["scene_seed"] = scene_seed;
      j["variant"] = v;
      j["failed_bins"] = failed.bins;
      j["cause"] = to_string(out.failure);
      j["feedback"] = feedback_to_json(cv);
      j["target_bins"] = target.bins.bins;
      corr_lines.push_back(std::move(j));
    }
  }
  write_jsonl(dir + "/corrections.jsonl", corr_lines);
  write_text(dir + "/config.json", config_to_json(cfg).dump(2) + "\n");
}

// No unseen category may appear in any training file.
inline void check_no_leakage(const RunConfig& cfg, std::uint64_t seed) {
  const std::set<int> unseen(cfg.unseen_categories.begin(), cfg.unseen_categories.end());
  const std::string dir = seed_dir(cfg, seed);
  for (const char* name : {"demos.jsonl", "failures.jsonl", "corrections.jsonl",
                           "detect_train.jsonl"})
    for (const auto& j : read_jsonl(dir + "/" + std::string(name)))
      if (unseen.count(j.at("category").get<int>()))
        throw Error(std::string(name) + " contains an unseen category");
}

// --- training stage ---

namespace detail {

struct ObsCache {
  int category = -1;
  std::uint64_t scene_seed = 0;
  Eigen::VectorXd img;
  bool valid = false;
};

// rebuilds a detector sample from a labeled action line; the end state is
// re-derived by executing the stored action
inline DetectionSample detection_sample_of(const CategoryTable& table,
                                           const PoseNormalization& nrm, const ordered_json& j) {
  const int cat = j.at("category").get<int>();
  const SceneState st = sample_scene(table, cat, j.at("scene_seed").get<std::uint64_t>());
  const DiscretePose bins = bins_of(j);
  DetectionSample d;
  d.scene = st.spec;
  d.end_q = interact(st, decode_pose(bins, nrm)).end_state.q;
  d.ad = ActionDescriptor{bins, cat};
  d.label = failure_type_from_string(j.at("label").get<std::string>());
  return d;
}

}  // namespace detail

inline std::vector<TrainSample> load_train_set(const RunConfig& cfg, std::uint64_t seed,
                                               const PolicyParams& p) {
  const CategoryTable table = CategoryTable::builtin();
  const PoseNormalization nrm;
  const std::string dir = seed_dir(cfg, seed);
  std::vector<TrainSample> set;

  // demonstrations enter twice: correction tuples outnumber them four to one
  // and would otherwise dominate the unconditioned prior
  for (const auto& j : read_jsonl(dir + "/demos.jsonl")) {
    const int cat = j.at("category").get<int>();
    const std::uint64_t s = j.at("scene_seed").get<std::uint64_t>();
    const Observation obs = render(sample_scene(table, cat, s));
    set.push_back(make_train_sample(p, obs, cat, ConditioningVector{}, detail::bins_of(j)));
    set.push_back(set.back());
  }

  detail::ObsCache cache;  // variants of one tuple share the rendered scene
  for (const auto& j : read_jsonl(dir + "/corrections.jsonl")) {
    const int cat = j.at("category").get<int>();
    const std::uint64_t s = j.at("scene_seed").get<std::uint64_t>();
    if (!cache.valid || cache.category != cat || cache.scene_seed != s) {
      cache.img = featurize(render(sample_scene(table, cat, s)));
      cache.category = cat;
      cache.scene_seed = s;
      cache.valid = true;
    }
    TrainSample t;
    t.img = cache.img;
    t.category = cat;
    t.cond = feedback_from_json(j.at("feedback")).encode(p.dims);
    const auto target = j.at("target_bins").get<std::array<int, 9>>();
    for (int h = 0; h < 9; ++h) t.target[h] = target[h] - kBinLo;
    t.has_pose = true;
    set.push_back(std::move(t));
  }

  for (const auto& j : read_jsonl(dir + "/detect_train.jsonl"))
    set.push_back(detection_train_sample(p, detail::detection_sample_of(table, nrm, j)));
  return set;
}

inline PolicyParams train_policy_stage(const RunConfig& cfg, std::uint64_t seed) {
  const PolicyDims dims;
  PolicyParams p = init_policy(dims, detail::seen_mask(cfg, dims.n_cat),
                               Rng::derive(seed, "policy-init"));
  const std::vector<TrainSample> set = load_train_set(cfg, seed, p);
  TrainConfig tc;
  tc.learning_rate = cfg.learning_rate;
  tc.momentum = cfg.momentum;
  tc.epochs = cfg.epochs;
  tc.batch_size = cfg.batch_size;
  tc.seed = Rng::derive(seed, "train");
  const TrainResult res = train(std::move(p), set, tc);
  save_policy(res.params, seed_dir(cfg, seed) + "/policy.json");
  return res.params;
}

// --- evaluation stages ---

inline std::vector<EvalEpisodeRef> make_eval_refs(const RunConfig& cfg, std::uint64_t seed,
                                                  int episodes, std::string_view label) {
  const std::set<int> unseen(cfg.unseen_categories.begin(), cfg.unseen_categories.end());
  const std::vector<int> cats = detail::all_categories(cfg);
  std::vector<EvalEpisodeRef> refs;
  refs.reserve(episodes);
  for (int i = 0; i < episodes; ++i) {
    const int cat = cats[i % cats.size()];
    refs.push_back({cat, Rng::derive(seed, label, i),
                    unseen.count(cat) ? "unseen" : "seen"});
  }
  return refs;
}

inline EpisodeConfig episode_config(const RunConfig& cfg) {
  EpisodeConfig ec;
  ec.K = cfg.K;
  ec.use_slow = cfg.K > 0;
  ec.detector_mode = cfg.detector_mode;
  ec.arm = cfg.arm;
  ec.fidelity = cfg.fidelity;
  return ec;
}

inline std::vector<ReportRow> eval_stage(const RunConfig& cfg, std::uint64_t seed,
                                         const PolicyParams& policy) {
  const CategoryTable table = CategoryTable::builtin();
  EvalOptions opt;
  opt.episode = episode_config(cfg);
  opt.experiment_id = "eval";
  opt.config_hash = config_hash(cfg);
  opt.seed = seed;
  const auto refs = make_eval_refs(cfg, seed, cfg.eval_episodes, "eval-scene");
  const EvalResult res = evaluate(table, policy, refs, opt);
  std::vector<ordered_json> lines;
  lines.reserve(res.traces.size());
  for (const auto& tr : res.traces) lines.push_back(trace_to_json(tr));
  const std::string dir = seed_dir(cfg, seed);
  write_jsonl(dir + "/traces_eval.jsonl", lines);
  write_text(dir + "/report_eval.csv", report_to_csv(res.rows));
  return res.rows;
}

// Held-out detector quality: per-class accuracy of the learned classifier
// against the rule labels frozen at generation time.
inline std::vector<ReportRow> detect_eval_stage(const RunConfig& cfg, std::uint64_t seed,
                                                const PolicyParams& policy) {
  const CategoryTable table = CategoryTable::builtin();
  const PoseNormalization nrm;
  std::vector<DetectionSample> samples;
  for (const auto& j : read_jsonl(seed_dir(cfg, seed) + "/detect_eval.jsonl"))
    samples.push_back(detail::detection_sample_of(table, nrm, j));
  const ConfusionMatrix m = confusion_matrix(policy, samples);
  const std::string hash = config_hash(cfg);
  std::vector<ReportRow> rows;
  double min_acc = 1.0;
  int failure_count = 0;
  for (int k = 0; k < 4; ++k) {
    int n = 0;
    for (int c = 0; c < 4; ++c) n += m[k][c];
    const double acc = n > 0 ? static_cast<double>(m[k][k]) / n : 0.0;
    if (k > 0) failure_count += n;
    min_acc = std::min(min_acc, acc);
    const std::string cls = k == 0 ? "success" : to_string(static_cast<FailureType>(k));
    rows.push_back({"detect-eval", "all", cls, "accuracy", acc, seed, hash});
    rows.push_back({"detect-eval", "all", cls, "count", static_cast<double>(n), seed, hash});
  }
  rows.push_back({"detect-eval", "all", "all", "min_class_accuracy", min_acc, seed, hash});
  rows.push_back(
      {"detect-eval", "all", "all", "failure_count", static_cast<double>(failure_count), seed, hash});
  write_text(seed_dir(cfg, seed) + "/report_detect.csv", report_to_csv(rows));
  return rows;
}

inline std::vector<ReportRow> ablate_experts(const RunConfig& cfg, std::uint64_t seed,
                                             const PolicyParams& policy) {
  const CategoryTable table = CategoryTable::builtin();
  const auto refs = make_eval_refs(cfg, seed, cfg.eval_episodes, "ablate-exp-scene");
  std::vector<ReportRow> rows;
  for (const RoutingArm arm : {RoutingArm::PositionOnly, RoutingArm::RotationOnly,
                               RoutingArm::Both, RoutingArm::Adaptive}) {
    EvalOptions opt;
    opt.episode = episode_config(cfg);
    opt.episode.arm = arm;
    opt.experiment_id = "ablate-experts:" + to_string(arm);
    opt.config_hash = config_hash(cfg);
    opt.seed = seed;
    const EvalResult res = evaluate(table, policy, refs, opt);
    rows.insert(rows.end(), res.rows.begin(), res.rows.end());

    // detection tallies back the invocation-count identity of the adaptive arm
    std::map<FailureType, int> detected;
    int invocations = 0;
    for (const auto& tr : res.traces)
      for (const auto& s : tr.corrections) {
        detected[s.detected] += 1;
        invocations += static_cast<int>(s.experts_invoked.size());
      }
    const auto extra = [&](const std::string& metric, double value) {
      rows.push_back({opt.experiment_id, "all", "all", metric, value, seed, opt.config_hash});
    };
    extra("invocations_total", invocations);
    extra("detected_position", detected[FailureType::Position]);
    extra("detected_rotation", detected[FailureType::Rotation]);
    extra("detected_combined", detected[FailureType::Combined]);
    extra("detected_none", detected[FailureType::None]);
  }
  write_text(seed_dir(cfg, seed) + "/report_ablate_experts.csv", report_to_csv(rows));
  return rows;
}

inline std::vector<ReportRow> ablate_corrections(const RunConfig& cfg, std::uint64_t seed,
                                                 const PolicyParams& policy,
                                                 int k_max = 5) {
  const CategoryTable table = CategoryTable::builtin();
  const auto refs = make_eval_refs(cfg, seed, cfg.eval_episodes, "ablate-k-scene");
  EvalOptions opt;
  opt.episode = episode_config(cfg);
  opt.episode.K = k_max;
  opt.episode.use_slow = true;
  opt.experiment_id = "ablate-corrections";
  opt.config_hash = config_hash(cfg);
  opt.seed = seed;
  const EvalResult res = evaluate(table, policy, refs, opt);

  // the loop stops early on success and never resets the scene, so a K-run is
  // exactly the K_max-run truncated; prefixes give the whole sweep
  std::vector<ReportRow> rows;
  const auto sr_at = [&](const std::string& split, int k) {
    int n = 0, ok = 0;
    for (std::size_t i = 0; i < refs.size(); ++i) {
      if (split != "all" && refs[i].split != split) continue;
      n += 1;
      const EpisodeTrace& tr = res.traces[i];
      bool s = tr.fast_outcome.success;
      for (int a = 0; a < k && a < static_cast<int>(tr.corrections.size()); ++a)
        s = s || tr.corrections[a].outcome.success;
      ok += s ? 1 : 0;
    }
    return n > 0 ? static_cast<double>(ok) / n : 0.0;
  };
  for (const std::string split : {"all", "seen", "unseen"}) {
    std::vector<double> sr;
    for (int k = 0; k <= k_max; ++k) {
      sr.push_back(sr_at(split, k));
      rows.push_back({opt.experiment_id, split, "all", "sr_at_k_" + std::to_string(k),
                      sr.back(), seed, opt.config_hash});
    }
    rows.push_back({opt.experiment_id, split, "all", "plateau_gain_3_to_5",
                    sr[std::min(5, k_max)] - sr[std::min(3, k_max)], seed, opt.config_hash});
  }
  write_text(seed_dir(cfg, seed) + "/report_ablate_corrections.csv", report_to_csv(rows));
  return rows;
}

// --- continuous learning driver ---

struct CplRunResult {
  CPLState state;
  int episodes_used = 0;
  int admitted = 0;
  std::vector<ordered_json> stream_lines;
};

inline CplRunResult cpl_drive(const RunConfig& cfg, std::uint64_t seed,
                              const PolicyParams& start, CplStrategy strategy,
                              int iters_per_sample,
                              const std::vector<TrainSample>& replay_pool = {}) {
  const CategoryTable table = CategoryTable::builtin();
  const PoseNormalization nrm;
  SceneSampleOptions stream_opts;
  stream_opts.placement_shift = cfg.cpl_shift;

  CplEvalSets sets;
  sets.test.refs = make_eval_refs(cfg, seed, cfg.cpl_eval_episodes, "cpl-test");
  sets.test.opts = stream_opts;
  sets.testB.refs = sets.test.refs;  // same scenes, only the placement differs
  sets.testB.opts.placement_shift = cfg.cpl_shift_b;
  sets.heldout.refs = make_eval_refs(cfg, seed, cfg.cpl_eval_episodes, "cpl-held");

  CplRunResult out;
  out.state.params = start;
  out.state.history.push_back(cpl_snapshot(out.state, table, sets, nrm));

  CPLConfig cc;
  cc.alpha = cfg.cpl_alpha;
  cc.iters_per_sample = iters_per_sample;
  cc.adapter_only = true;
  cc.strategy = strategy;
  cc.learning_rate = cfg.learning_rate;
  cc.momentum = cfg.momentum;
  cc.seed = Rng::derive(seed, "cpl");

  SuccessBuffer buf;
  buf.trigger_size = cfg.cpl_trigger;
  const std::vector<int> cats = detail::all_categories(cfg);
  EpisodeConfig ec = episode_config(cfg);
  for (int i = 0; i < cfg.cpl_stream_cap && out.state.t < cfg.cpl_rounds; ++i) {
    const int cat = cats[i % cats.size()];
    const std::uint64_t scene_seed = Rng::derive(seed, "cpl-stream", i);
    ec.seed = Rng::derive(seed, "cpl-ep", i);
    const SceneState st = sample_scene(table, cat, scene_seed, stream_opts);
    const EpisodeTrace tr =
        run_episode(st, cat, scene_seed, out.state.params, ec, nrm);
    out.episodes_used = i + 1;
    out.stream_lines.push_back(trace_to_json(tr));
    if (tr.final_success && !tr.corrections.empty()) {
      admit(buf, tr, table, stream_opts);
      out.admitted += 1;
      if (maybe_update(out.state, buf, cc, replay_pool))
        out.state.history.push_back(cpl_snapshot(out.state, table, sets, nrm));
    }
  }
  return out;
}

inline std::vector<ReportRow> cpl_rows(const CplRunResult& run, const std::string& experiment_id,
                                       std::uint64_t seed, const std::string& hash,
                                       CplStrategy strategy) {
  std::vector<ReportRow> rows = forgetting_eval(run.state, strategy, experiment_id, seed, hash);
  rows.push_back({experiment_id, "all", "all", "episodes_streamed",
                  static_cast<double>(run.episodes_used), seed, hash});
  rows.push_back({experiment_id, "all", "all", "admitted",
                  static_cast<double>(run.admitted), seed, hash});
  return rows;
}

inline std::vector<ReportRow> cpl_run_stage(const RunConfig& cfg, std::uint64_t seed,
                                            const PolicyParams& policy) {
  const std::string dir = seed_dir(cfg, seed);
  std::vector<TrainSample> pool;
  if (cfg.cpl_strategy == CplStrategy::Replay) pool = load_train_set(cfg, seed, policy);
  CplRunResult run =
      cpl_drive(cfg, seed, policy, cfg.cpl_strategy, cfg.cpl_iters_per_sample, pool);
  for (const auto& snap : run.state.history)
    if (snap.round > 0)
      save_policy(run.state.params, dir + "/cpl_round_" + std::to_string(snap.round) + ".json");
  write_jsonl(dir + "/traces_cpl_stream.jsonl", run.stream_lines);
  write_text(dir + "/forgetting_" + to_string(cfg.cpl_strategy) + ".csv",
             forgetting_csv(run.state, cfg.cpl_strategy));
  const auto rows = cpl_rows(run, "cpl-run", seed, config_hash(cfg), cfg.cpl_strategy);
  write_text(dir + "/report_cpl_run.csv", report_to_csv(rows));
  return rows;
}

inline std::vector<ReportRow> ablate_cpl(const RunConfig& cfg, std::uint64_t seed,
                                         const PolicyParams& policy) {
  std::vector<ReportRow> rows;
  for (int iters : cfg.cpl_iters_sweep) {
    const CplRunResult run = cpl_drive(cfg, seed, policy, cfg.cpl_strategy, iters);
    const std::string id = "ablate-cpl:iters=" + std::to_string(iters);
    const auto r = cpl_rows(run, id, seed, config_hash(cfg), cfg.cpl_strategy);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  write_text(seed_dir(cfg, seed) + "/report_ablate_cpl.csv", report_to_csv(rows));
  return rows;
}

// --- report aggregation ---

inline std::vector<ReportRow> parse_report_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path);
  std::vector<ReportRow> rows;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    ReportRow r;
    std::string value, seed;
    std::getline(ls, r.experiment_id, ',');
    std::getline(ls, r.split, ',');
    std::getline(ls, r.category, ',');
    std::getline(ls, r.metric, ',');
    std::getline(ls, value, ',');
    std::getline(ls, seed, ',');
    std::getline(ls, r.config_hash, ',');
    r.value = std::stod(value);
    r.seed = std::stoull(seed);
    rows.push_back(std::move(r));
  }
  return rows;
}

// Gathers every stage CSV under the run directory into one table plus a
// cross-seed mean summary. Charts are a bonus artifact; the CSV and JSON are
// the contract.
inline void report_stage(const RunConfig& cfg, bool with_charts = true) {
  namespace fs = std::filesystem;
  std::vector<std::string> files;
  if (fs::exists(cfg.out_dir))
    for (const auto& entry : fs::recursive_directory_iterator(cfg.out_dir)) {
      const std::string name = entry.path().filename().string();
      if (name.rfind("report_", 0) == 0 && name.size() > 4 &&
          name.substr(name.size() - 4) == ".csv")
        files.push_back(entry.path().string());
    }
  if (files.empty()) throw EmptyRun("no stage reports under " + cfg.out_dir);
  std::sort(files.begin(), files.end());

  std::vector<ReportRow> all;
  for (const auto& f : files) {
    const auto rows = parse_report_csv(f);
    all.insert(all.end(), rows.begin(), rows.end());
  }
  write_text(cfg.out_dir + "/summary.csv", report_to_csv(all));

  // cross-seed means keyed by (experiment, split, category, metric)
  std::map<std::string, std::pair<double, int>> agg;
  for (const auto& r : all) {
    auto& slot = agg[r.experiment_id + "|" + r.split + "|" + r.category + "|" + r.metric];
    slot.first += r.value;
    slot.second += 1;
  }
  ordered_json summary;
  summary["config_hash"] = config_hash(cfg);
  summary["rows"] = static_cast<int>(all.size());
  summary["means"] = ordered_json::object();
  for (const auto& [key, slot] : agg) summary["means"][key] = slot.first / slot.second;
  write_text(cfg.out_dir + "/summary.json", summary.dump(2) + "\n");

  if (with_charts) {
    // one polyline per split of the correction-budget sweep
    std::ostringstream svg;
    svg << "<svg xmlns='http://www.w3.org/2000/svg' width='480' height='320'>\n";
    svg << "<rect width='480' height='320' fill='white'/>\n";
    const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c"};
    int ci = 0;
    for (const std::string split : {"all", "seen", "unseen"}) {
      std::map<int, std::pair<double, int>> pts;
      for (const auto& r : all)
        if (r.experiment_id == "ablate-corrections" && r.split == split &&
            r.metric.rfind("sr_at_k_", 0) == 0) {
          auto& p = pts[std::stoi(r.metric.substr(8))];
          p.first += r.value;
          p.second += 1;
        }
      if (pts.empty()) continue;
      svg << "<polyline fill='none' stroke='" << colors[ci % 3] << "' points='";
      for (const auto& [k, p] : pts)
        svg << 40 + k * 80 << "," << 300 - 260 * (p.first / p.second) << " ";
      svg << "'/>\n";
      ++ci;
    }
    svg << "</svg>\n";
    write_text(cfg.out_dir + "/charts.svg", svg.str());
  }
}

// --- whole pipeline ---

inline void run_pipeline(const RunConfig& cfg) {
  validate(cfg);
  write_text(cfg.out_dir + "/config.json", config_to_json(cfg).dump(2) + "\n");
  for (const std::uint64_t seed : cfg.seeds) {
    gen_data(cfg, seed);
    check_no_leakage(cfg, seed);
    const PolicyParams policy = train_policy_stage(cfg, seed);
    eval_stage(cfg, seed, policy);
    detect_eval_stage(cfg, seed, policy);
    ablate_experts(cfg, seed, policy);
    ablate_corrections(cfg, seed, policy);
    ablate_cpl(cfg, seed, policy);
    cpl_run_stage(cfg, seed, policy);
  }
  report_stage(cfg);
}

// Re-executes every episode of a trace file and requires byte-identical
// re-serialization. Returns the number of episodes checked.
inline int replay_trace_file(const RunConfig& cfg, std::uint64_t seed, const std::string& path,
                             const PolicyParams& policy, const SceneSampleOptions& opts = {}) {
  const CategoryTable table = CategoryTable::builtin();
  EpisodeConfig ec = episode_config(cfg);
  int n = 0;
  for (const auto& line : read_jsonl(path)) {
    const EpisodeTrace again = replay_episode(table, policy, line, ec, PoseNormalization{}, opts);
    if (trace_to_json(again).dump() != line.dump())
      throw Error("replay diverged at episode " + std::to_string(n) + " of " + path);
    ++n;
  }
  (void)seed;
  return n;
}

}  // namespace dpc
