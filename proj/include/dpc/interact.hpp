#pragma once

#include <cmath>
#include <optional>
#include <string>

#include "dpc/pose.hpp"
#include "dpc/scene.hpp"

namespace dpc {

enum class FailureType { None, Position, Rotation, Combined };

inline std::string to_string(FailureType f) {
  switch (f) {
    case FailureType::None: return "none";
    case FailureType::Position: return "position";
    case FailureType::Rotation: return "rotation";
    default: return "combined";
  }
}

inline FailureType failure_type_from_string(const std::string& s) {
  if (s == "none") return FailureType::None;
  if (s == "position") return FailureType::Position;
  if (s == "rotation") return FailureType::Rotation;
  if (s == "combined") return FailureType::Combined;
  throw Error("unknown failure type: " + s);
}

inline constexpr double kMaxJointGain = 0.5;      // full-power joint advance
inline constexpr double kSuccessThreshold = 0.1;  // advance required for success
inline constexpr double kLeverFloor = 0.2;
inline constexpr double kAngleLimitDeg = 30.0;

// alignment falloff: 1 at zero incidence, 0 at the 30 degree limit
inline double alignment_factor(double theta_deg) {
  const double c30 = std::cos(deg_to_rad(kAngleLimitDeg));
  const double a = (std::cos(deg_to_rad(theta_deg)) - c30) / (1.0 - c30);
  return a > 0.0 ? a : 0.0;
}

struct InteractionOutcome {
  double delta_q = 0.0;  // commanded advance from the contact model (pre-clip)
  bool success = false;
  FailureType failure = FailureType::Combined;
  std::optional<Vec3> contact;  // world contact point, empty on a miss
  double contact_u = 0.0, contact_v = 0.0;
  double theta_deg = 180.0;  // angle between forward and the anti-normal
  double lever = 0.0;
  bool in_affordance = false;
  SceneState end_state;
};

namespace detail {

struct GeomEval {
  bool hit = false;
  bool in_aff = false;
  double theta_deg = 180.0;
  double lever = 1.0;
  std::optional<PanelHit> contact;
};

inline GeomEval evaluate_action(const SceneState& st, const Pose6D& action) {
  GeomEval g;
  const Vec3 n = panel_normal_world(st.spec, st.q);
  g.theta_deg = angle_between_deg(action.forward, -n);
  const auto hit = ray_panel(st.spec, st.q, action.position, action.forward);
  if (hit) {
    g.hit = true;
    g.contact = hit;
    g.in_aff = st.spec.affordance.contains(hit->u, hit->v);
    if (st.spec.joint == JointKind::Revolute) {
      const double d =
          point_line_distance(hit->point, hinge_anchor_world(st.spec), hinge_axis(st.spec));
      double lv = d / st.spec.panel_w;
      if (lv < kLeverFloor) lv = kLeverFloor;
      if (lv > 1.0) lv = 1.0;
      g.lever = lv;
    } else {
      g.lever = 1.0;
    }
  }
  return g;
}

inline FailureType classify_rules(const GeomEval& g) {
  const bool position_bad = !g.hit || !g.in_aff;
  const bool rotation_bad = g.theta_deg > kAngleLimitDeg;
  if (position_bad && rotation_bad) return FailureType::Combined;
  if (position_bad) return FailureType::Position;
  if (rotation_bad) return FailureType::Rotation;
  return FailureType::None;
}

}  // namespace detail

// Exhaustive-by-construction failure taxonomy:
//   Position  - missed panel or contact outside the affordance, angle fine
//   Rotation  - contact fine, approach angle beyond the 30 degree limit
//   Combined  - both violated
//   None      - neither violated
inline FailureType failure_oracle(const SceneState& st, const Pose6D& action) {
  return detail::classify_rules(detail::evaluate_action(st, action));
}

// Analytic contact surrogate. The commanded advance is
//   delta_q = 0.5 * lever * alignment * [contact inside affordance]
// with lever = clamp(dist(contact, hinge)/panel_width, 0.2, 1) for revolute
// joints and 1 for prismatic. The joint moves by delta_q clipped into the
// joint range; success means delta_q exceeds 0.1.
inline InteractionOutcome interact(const SceneState& st, const Pose6D& action) {
  const auto g = detail::evaluate_action(st, action);
  InteractionOutcome out;
  out.end_state = st;
  out.theta_deg = g.theta_deg;
  out.lever = g.hit ? g.lever : 0.0;
  out.in_affordance = g.in_aff;
  if (g.contact) {
    out.contact = g.contact->point;
    out.contact_u = g.contact->u;
    out.contact_v = g.contact->v;
  }
  if (g.hit && g.in_aff) {
    out.delta_q = kMaxJointGain * g.lever * alignment_factor(g.theta_deg);
  }
  out.success = out.delta_q > kSuccessThreshold;
  out.failure = detail::classify_rules(g);

  double q = st.q + out.delta_q;
  if (q > st.spec.q_max) q = st.spec.q_max;
  if (q < st.spec.q_min) q = st.spec.q_min;
  out.end_state.q = q;
  return out;
}

}  // namespace dpc
