#pragma once

#include <cmath>
#include <optional>

#include "dpc/interact.hpp"
#include "dpc/pose.hpp"
#include "dpc/render.hpp"
#include "dpc/rng.hpp"

namespace dpc {

inline constexpr double kActionStandoff = 0.1;  // gripper offset back along forward

// Build an orthonormal action frame for a given approach direction.
inline Pose6D make_action_pose(const Vec3& contact, const Vec3& forward_raw) {
  const Vec3 f = normalize(forward_raw);
  Vec3 hint{0, 0, 1};
  if (std::fabs(dot(f, hint)) > 0.98) hint = {1, 0, 0};
  const Frame fr = orthonormalize(hint, f);
  return Pose6D{contact - f * kActionStandoff, fr.up, fr.forward};
}

// Rotate dir away from itself by tilt_deg about a random orthogonal axis.
inline Vec3 tilt_direction(const Vec3& dir, double tilt_deg, Rng& rng) {
  Vec3 any{1, 0, 0};
  if (std::fabs(dot(dir, any)) > 0.9) any = {0, 1, 0};
  const Vec3 e1 = normalize(cross(dir, any));
  const Vec3 e2 = cross(dir, e1);
  const double phi = rng.uniform(0.0, 2.0 * kPi);
  const Vec3 axis = e1 * std::cos(phi) + e2 * std::sin(phi);
  return rotate_about_axis(dir, axis, deg_to_rad(tilt_deg));
}

// An action plus its quantized form; the quantized pose is what executes.
struct SampledAction {
  Pose6D pose;  // decode(bins), the executed action
  DiscretePose bins;
};

inline SampledAction quantize_action(const Pose6D& p, const PoseNormalization& nrm) {
  SampledAction a;
  a.bins = encode_pose(p, nrm);
  a.pose = decode_pose(a.bins, nrm);
  return a;
}

enum class ActionMode { Demo, PositionError, RotationError, CombinedError };

inline std::string to_string(ActionMode m) {
  switch (m) {
    case ActionMode::Demo: return "demo";
    case ActionMode::PositionError: return "position";
    case ActionMode::RotationError: return "rotation";
    default: return "combined";
  }
}

// Draws one action of the requested kind and verifies, after quantization,
// that the executed pose still lands in the intended cell of the taxonomy
// (success for Demo, matching failure type otherwise). Returns nothing when
// the draw budget is exhausted, which the callers treat as a skipped scene.
inline std::optional<SampledAction> sample_action(const SceneState& st, ActionMode mode, Rng& rng,
                                                  const PoseNormalization& nrm,
                                                  double demo_tilt_deg = 12.0) {
  const PanelRect& rect = st.spec.affordance;
  const Vec3 n = panel_normal_world(st.spec, st.q);
  for (int attempt = 0; attempt < 64; ++attempt) {
    double u, v;
    double tilt;
    if (mode == ActionMode::Demo || mode == ActionMode::RotationError) {
      // contact inside the affordance, margin so quantization cannot escape it
      const double mu = 0.04 * (rect.u1 - rect.u0), mv = 0.04 * (rect.v1 - rect.v0);
      u = rng.uniform(rect.u0 + mu, rect.u1 - mu);
      v = rng.uniform(rect.v0 + mv, rect.v1 - mv);
    } else if (rng.bernoulli(0.7)) {
      // on the panel but outside the affordance
      u = rng.uniform(0.02, st.spec.panel_w - 0.02);
      v = rng.uniform(0.02, st.spec.panel_h - 0.02);
      const double margin = 0.06;
      if (u > rect.u0 - margin && u < rect.u1 + margin && v > rect.v0 - margin &&
          v < rect.v1 + margin)
        continue;
    } else {
      // miss the panel entirely (aim at the frame or past an edge)
      u = rng.bernoulli(0.5) ? rng.uniform(-0.2, -0.06) : rng.uniform(st.spec.panel_w + 0.06, st.spec.panel_w + 0.2);
      v = rng.uniform(-0.1, st.spec.panel_h + 0.1);
      if (rng.bernoulli(0.5)) std::swap(u, v);
    }
    if (mode == ActionMode::RotationError || mode == ActionMode::CombinedError)
      tilt = rng.uniform(33.0, 80.0);
    else
      tilt = rng.uniform(0.0, demo_tilt_deg);

    const Vec3 contact = panel_point_world(st.spec, st.q, u, v);
    const Vec3 fwd = tilt_direction(-n, tilt, rng);
    SampledAction act;
    try {
      act = quantize_action(make_action_pose(contact, fwd), nrm);
    } catch (const Error&) {
      continue;
    }
    const InteractionOutcome out = interact(st, act.pose);
    if (mode == ActionMode::Demo) {
      if (out.success) return act;
    } else {
      const FailureType want = mode == ActionMode::PositionError  ? FailureType::Position
                               : mode == ActionMode::RotationError ? FailureType::Rotation
                                                                    : FailureType::Combined;
      if (!out.success && out.failure == want) return act;
    }
  }
  return std::nullopt;
}

}  // namespace dpc
