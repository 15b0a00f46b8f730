#pragma once

#include <array>
#include <string>
#include <vector>

#include "dpc/actions.hpp"
#include "dpc/policy.hpp"

namespace dpc {

// What the detector is allowed to see about the executed action: the
// discretized pose and the task, never the simulator's joint delta.
struct ActionDescriptor {
  DiscretePose bins;
  int category_id = 0;
};

// failure head class order: {Success, Position, Rotation, Combined, reserved};
// FailureType::None shares index 0 with Success
inline int detect_label(FailureType f) { return static_cast<int>(f); }

struct Classification {
  bool success = false;
  FailureType failure = FailureType::None;
  double confidence = 0.0;
};

inline ConditioningVector descriptor_conditioning(const ActionDescriptor& ad) {
  ConditioningVector cv;
  cv.prev = ad.bins;
  return cv;
}

// Learned success check + failure typing from the end observation and the
// action descriptor. Argmax over the four active classes of the failure head.
inline Classification classify(const PolicyParams& p, const Observation& end_obs,
                               const ActionDescriptor& ad) {
  if (p.detect_W.isZero(0.0))
    throw UntrainedDetector("failure head has never been trained");
  const auto cv = descriptor_conditioning(ad);
  const auto f = forward_input(
      p, assemble_input(p, featurize(end_obs), ad.category_id, cv.encode(p.dims)));
  int best = 0;
  for (int k = 1; k < 4; ++k)
    if (f.detect_logits(k) > f.detect_logits(best)) best = k;
  double mx = f.detect_logits(0);
  for (int k = 1; k < 4; ++k) mx = std::max(mx, f.detect_logits(k));
  double z = 0;
  for (int k = 0; k < 4; ++k) z += std::exp(f.detect_logits(k) - mx);
  Classification out;
  out.failure = static_cast<FailureType>(best);
  out.success = best == 0;
  out.confidence = std::exp(f.detect_logits(best) - mx) / z;
  return out;
}

struct DetectionSample {
  SceneSpec scene;     // end state is re-derivable: spec + end q
  double end_q = 0.0;
  ActionDescriptor ad;
  FailureType label = FailureType::None;
};

struct DetectionMix {
  double success = 0.4;
  double position = 0.2;
  double rotation = 0.2;
  double combined = 0.2;
};

struct DetectionDataset {
  std::vector<DetectionSample> samples;
  std::array<int, 4> class_counts = {0, 0, 0, 0};
};

// Draws labeled end states by executing demonstration and corrupted actions
// in the requested proportions. Labels come from the rule oracle at execution
// time. Scenes cycle over `categories` so the set is stratified by category.
inline DetectionDataset build_detection_dataset(const CategoryTable& table,
                                                const std::vector<int>& categories, int n,
                                                const DetectionMix& mix, std::uint64_t seed,
                                                const PoseNormalization& nrm = {}) {
  if (categories.empty() || n <= 0) throw EmptyClass("nothing to draw from");
  DetectionDataset out;
  Rng rng(Rng::derive(seed, "detect-data"));
  int scene_counter = 0;
  while (static_cast<int>(out.samples.size()) < n) {
    const double u01 = rng.uniform01();
    ActionMode mode;
    if (u01 < mix.success) mode = ActionMode::Demo;
    else if (u01 < mix.success + mix.position) mode = ActionMode::PositionError;
    else if (u01 < mix.success + mix.position + mix.rotation) mode = ActionMode::RotationError;
    else mode = ActionMode::CombinedError;

    // the mode is fixed before scenes are drawn, so an unsamplable scene
    // cannot skew the class mix
    for (int tries = 0; tries < 16; ++tries) {
      const int category = categories[scene_counter % categories.size()];
      const SceneState st =
          sample_scene(table, category, Rng::derive(seed, "detect-scene", scene_counter));
      ++scene_counter;
      const auto act = sample_action(st, mode, rng, nrm);
      if (!act) continue;

      DetectionSample s;
      s.scene = st.spec;
      s.label = failure_oracle(st, act->pose);
      s.ad.bins = act->bins;
      s.ad.category_id = category;
      s.end_q = interact(st, act->pose).end_state.q;
      out.class_counts[detect_label(s.label)]++;
      out.samples.push_back(std::move(s));
      break;
    }
  }
  for (int k = 0; k < 4; ++k)
    if (out.class_counts[k] == 0)
      throw EmptyClass("failure class " + std::to_string(k) + " has no samples");
  return out;
}

inline Observation detection_end_obs(const DetectionSample& s) {
  return render(SceneState{s.scene, s.end_q});
}

inline TrainSample detection_train_sample(const PolicyParams& p, const DetectionSample& s) {
  TrainSample t;
  t.img = featurize(detection_end_obs(s));
  t.category = s.ad.category_id;
  t.cond = descriptor_conditioning(s.ad).encode(p.dims);
  t.failure_label = detect_label(s.label);
  return t;
}

// rows: oracle label, cols: predicted label
using ConfusionMatrix = std::array<std::array<int, 4>, 4>;

inline ConfusionMatrix confusion_matrix(const PolicyParams& p,
                                        const std::vector<DetectionSample>& samples) {
  ConfusionMatrix m{};
  for (const auto& s : samples) {
    const auto c = classify(p, detection_end_obs(s), s.ad);
    m[detect_label(s.label)][detect_label(c.failure)]++;
  }
  return m;
}

inline std::array<double, 4> per_class_accuracy(const ConfusionMatrix& m) {
  std::array<double, 4> acc{};
  for (int k = 0; k < 4; ++k) {
    int row = 0;
    for (int j = 0; j < 4; ++j) row += m[k][j];
    acc[k] = row ? static_cast<double>(m[k][k]) / row : 0.0;
  }
  return acc;
}

inline std::string confusion_to_csv(const ConfusionMatrix& m) {
  static const char* names[4] = {"success", "position", "rotation", "combined"};
  std::string csv = "oracle";
  for (const char* n : names) { csv += ","; csv += n; }
  csv += "\n";
  for (int k = 0; k < 4; ++k) {
    csv += names[k];
    for (int j = 0; j < 4; ++j) csv += "," + std::to_string(m[k][j]);
    csv += "\n";
  }
  return csv;
}

}  // namespace dpc
