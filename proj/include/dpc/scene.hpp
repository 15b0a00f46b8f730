#pragma once

#include <cmath>
#include <cstdint>
#include <optional>

#include "dpc/category.hpp"
#include "dpc/geometry.hpp"
#include "dpc/rng.hpp"

namespace dpc {

// Viewpoint draw, upper hemisphere around the workspace center.
struct CameraDraw {
  double azimuth_deg = 0.0;   // about +z, from +x, in [-45, 45]
  double altitude_deg = 45.0; // from the xy plane, in [30, 60]
  double distance = 5.0;      // in [4.5, 5.5]
};

// Axis-aligned rectangle in panel coordinates (u right, v up, origin at the
// panel's lower-left corner, world units).
struct PanelRect {
  double u0 = 0, v0 = 0, u1 = 0, v1 = 0;

  bool contains(double u, double v) const { return u >= u0 && u <= u1 && v >= v0 && v <= v1; }
  double cu() const { return 0.5 * (u0 + u1); }
  double cv() const { return 0.5 * (v0 + v1); }
};

// Fully instantiated scene geometry. Everything downstream is a pure
// function of this struct plus the joint value q in SceneState.
struct SceneSpec {
  int category_id = 0;
  bool seen = true;
  std::uint64_t scene_seed = 0;
  JointKind joint = JointKind::Revolute;
  HingeSide hinge = HingeSide::Left;
  double panel_w = 1.0, panel_h = 1.0;
  double frame_margin = 0.22;  // static frame ring width around the aperture
  PanelRect affordance;
  double q_min = 0.0, q_max = 1.2;
  Vec3 base_offset{0, 0, 0};  // workspace translation (relative-placement shifts)
  CameraDraw camera;
};

struct SceneState {
  SceneSpec spec;
  double q = 0.0;
};

// hinge anchor and rotation axis in object-local coordinates, oriented so
// that positive q always swings the panel toward +z (outward)
inline Vec3 hinge_anchor(const SceneSpec& s) {
  switch (s.hinge) {
    case HingeSide::Left: return {-s.panel_w / 2.0, 0, 0};
    case HingeSide::Right: return {s.panel_w / 2.0, 0, 0};
    case HingeSide::Bottom: return {0, -s.panel_h / 2.0, 0};
    case HingeSide::Top: return {0, s.panel_h / 2.0, 0};
    default: return {0, 0, 0};
  }
}

inline Vec3 hinge_axis(const SceneSpec& s) {
  switch (s.hinge) {
    case HingeSide::Left: return {0, -1, 0};
    case HingeSide::Right: return {0, 1, 0};
    case HingeSide::Bottom: return {1, 0, 0};
    case HingeSide::Top: return {-1, 0, 0};
    default: return {0, 0, 1};  // prismatic pull direction
  }
}

// (u, v) on the closed panel -> object-local point
inline Vec3 panel_point_closed(const SceneSpec& s, double u, double v) {
  return {u - s.panel_w / 2.0, v - s.panel_h / 2.0, 0.0};
}

// object-local closed-panel point -> world at joint value q
inline Vec3 panel_local_to_world(const SceneSpec& s, double q, const Vec3& p) {
  if (s.joint == JointKind::Prismatic) return p + Vec3{0, 0, q} + s.base_offset;
  const Vec3 a = hinge_anchor(s);
  return rotate_about_axis(p - a, hinge_axis(s), q) + a + s.base_offset;
}

inline Vec3 panel_point_world(const SceneSpec& s, double q, double u, double v) {
  return panel_local_to_world(s, q, panel_point_closed(s, u, v));
}

// outward panel normal in world coordinates at joint value q
inline Vec3 panel_normal_world(const SceneSpec& s, double q) {
  if (s.joint == JointKind::Prismatic) return {0, 0, 1};
  return rotate_about_axis({0, 0, 1}, hinge_axis(s), q);
}

// hinge line in world coordinates (invariant in q)
inline Vec3 hinge_anchor_world(const SceneSpec& s) { return hinge_anchor(s) + s.base_offset; }

struct PanelHit {
  double t = 0;   // ray parameter
  double u = 0;   // panel coordinates of the hit
  double v = 0;
  Vec3 point;     // world point
};

// Ray vs the (open) panel rectangle at joint value q.
inline std::optional<PanelHit> ray_panel(const SceneSpec& s, double q, const Vec3& origin,
                                         const Vec3& dir) {
  // transform the ray into panel coordinates, where the panel is z=0
  Vec3 o = origin - s.base_offset;
  Vec3 d = dir;
  if (s.joint == JointKind::Prismatic) {
    o = o - Vec3{0, 0, q};
  } else {
    const Vec3 a = hinge_anchor(s);
    const Vec3 ax = hinge_axis(s);
    o = rotate_about_axis(o - a, ax, -q) + a;
    d = rotate_about_axis(d, ax, -q);
  }
  const auto t = ray_plane(o, d, {0, 0, 0}, {0, 0, 1});
  if (!t) return std::nullopt;
  const Vec3 p = o + d * (*t);
  const double u = p.x + s.panel_w / 2.0;
  const double v = p.y + s.panel_h / 2.0;
  if (u < 0.0 || u > s.panel_w || v < 0.0 || v > s.panel_h) return std::nullopt;
  PanelHit hit;
  hit.t = *t;
  hit.u = u;
  hit.v = v;
  hit.point = origin + dir * (*t);
  return hit;
}

// World point -> panel (u, v). Only meaningful for points on (or numerically
// near) the panel plane at joint value q; the z residual is dropped.
inline void panel_world_to_local(const SceneSpec& s, double q, const Vec3& p, double& u,
                                 double& v) {
  Vec3 o = p - s.base_offset;
  if (s.joint == JointKind::Prismatic) {
    o = o - Vec3{0, 0, q};
  } else {
    const Vec3 a = hinge_anchor(s);
    o = rotate_about_axis(o - a, hinge_axis(s), -q) + a;
  }
  u = o.x + s.panel_w / 2.0;
  v = o.y + s.panel_h / 2.0;
}

// Ray vs the static frame ring (the z=0 border around the aperture).
inline std::optional<double> ray_frame(const SceneSpec& s, const Vec3& origin, const Vec3& dir) {
  const Vec3 o = origin - s.base_offset;
  const auto t = ray_plane(o, dir, {0, 0, 0}, {0, 0, 1});
  if (!t) return std::nullopt;
  const Vec3 p = o + dir * (*t);
  const double hw = s.panel_w / 2.0, hh = s.panel_h / 2.0, m = s.frame_margin;
  const bool in_outer = p.x >= -hw - m && p.x <= hw + m && p.y >= -hh - m && p.y <= hh + m;
  const bool in_aperture = p.x > -hw && p.x < hw && p.y > -hh && p.y < hh;
  if (!in_outer || in_aperture) return std::nullopt;
  return *t;
}

struct SceneSampleOptions {
  Vec3 placement_shift{0, 0, 0};
};

// Steepest acceptable angle between the view ray and the panel normal at the
// starting joint value; beyond this the panel projects to a sliver.
inline constexpr double kMaxViewIncidenceDeg = 75.0;

// Deterministic scene draw. Same (table entry, seed, options) always yields
// the same geometry, camera, and starting joint value.
inline SceneState sample_scene(const CategoryTable& table, int category_id, std::uint64_t seed,
                               const SceneSampleOptions& opts = {}) {
  const CategorySpec& c = table.at(category_id);
  Rng rng(Rng::derive(seed, "scene", static_cast<std::uint64_t>(category_id)));

  SceneSpec s;
  s.category_id = c.id;
  s.seen = c.seen;
  s.scene_seed = seed;
  s.joint = c.joint;
  s.hinge = c.hinge;
  s.panel_w = rng.uniform(c.panel_w_lo, c.panel_w_hi);
  s.panel_h = rng.uniform(c.panel_h_lo, c.panel_h_hi);
  s.q_min = c.q_min;
  s.q_max = c.q_max;
  s.base_offset = opts.placement_shift;

  double cu = c.aff_cu + rng.uniform(-c.aff_jitter, c.aff_jitter);
  double cv = c.aff_cv + rng.uniform(-c.aff_jitter, c.aff_jitter);
  const double hu = c.aff_su / 2.0, hv = c.aff_sv / 2.0;
  // keep the rectangle strictly inside the panel
  const double margin = 0.02;
  double ulo = cu * s.panel_w - hu, uhi = cu * s.panel_w + hu;
  if (ulo < margin) { uhi += margin - ulo; ulo = margin; }
  if (uhi > s.panel_w - margin) { ulo -= uhi - (s.panel_w - margin); uhi = s.panel_w - margin; }
  double vlo = cv * s.panel_h - hv, vhi = cv * s.panel_h + hv;
  if (vlo < margin) { vhi += margin - vlo; vlo = margin; }
  if (vhi > s.panel_h - margin) { vlo -= vhi - (s.panel_h - margin); vhi = s.panel_h - margin; }
  s.affordance = {ulo, vlo, uhi, vhi};

  SceneState st;
  // rest pose up to half open
  st.q = rng.uniform(c.q_min, c.q_min + (c.q_max - c.q_min) / 2.0);

  // Redraw viewpoints that see the panel nearly edge-on; such scenes carry no
  // usable surface signal. Keeps the least-grazing draw if the budget runs out.
  CameraDraw best{};
  double best_incidence = 1e9;
  for (int attempt = 0; attempt < 64; ++attempt) {
    CameraDraw cam;
    cam.distance = rng.uniform(4.5, 5.5);
    cam.azimuth_deg = rng.uniform(-45.0, 45.0);
    cam.altitude_deg = rng.uniform(30.0, 60.0);
    const double az = deg_to_rad(cam.azimuth_deg), alt = deg_to_rad(cam.altitude_deg);
    const Vec3 origin = Vec3{std::cos(alt) * std::cos(az), std::cos(alt) * std::sin(az),
                             std::sin(alt)} *
                        cam.distance;
    const Vec3 center = panel_local_to_world(s, st.q, Vec3{0, 0, 0});
    const double incidence = angle_between_deg(origin - center, panel_normal_world(s, st.q));
    if (incidence < best_incidence) {
      best_incidence = incidence;
      best = cam;
    }
    if (incidence <= kMaxViewIncidenceDeg) break;
  }
  s.camera = best;

  st.spec = s;
  return st;
}

}  // namespace dpc
