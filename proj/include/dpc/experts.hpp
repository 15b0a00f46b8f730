#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "dpc/actions.hpp"
#include "dpc/errors.hpp"
#include "dpc/interact.hpp"
#include "dpc/render.hpp"
#include "dpc/rng.hpp"
#include "dpc/scene.hpp"

namespace dpc {

// Imperfection knobs for the three oracles. noise_sigma is in pixels for the
// position expert and in degrees for the rotation expert; corruption replaces
// a whole candidate with a uniformly random one.
struct ExpertFidelity {
  double noise_sigma = 0.0;
  double corruption_prob = 0.0;
};

// Per-pixel manipulability score over the observation raster. Nonzero only on
// movable-part pixels.
struct AffordanceMap {
  int width = 0, height = 0;
  std::vector<double> score;

  double at(int row, int col) const { return score[static_cast<size_t>(row) * width + col]; }
};

struct CandidatePoint {
  int row = 0, col = 0;
  Vec3 world_point;
  double score = 0.0;
};

struct CandidateRotation {
  Vec3 up;
  Vec3 forward;
  double confidence = 0.0;
};

namespace detail {

// movable pixels of an observation with their surface points
struct SurfacePixel {
  int row, col;
  Vec3 point;
};

inline std::vector<SurfacePixel> surface_pixels(const Observation& obs) {
  std::vector<SurfacePixel> out;
  for (int r = 0; r < obs.height; ++r)
    for (int c = 0; c < obs.width; ++c)
      if (obs.movable(r, c)) {
        const double t = obs.camera.denormalize_depth(obs.depth_at(r, c));
        out.push_back({r, c, obs.camera.unproject(r, c, t)});
      }
  return out;
}

}  // namespace detail

inline constexpr int kPositionTopM = 10;
inline constexpr int kReasoningTopN = 3;
inline constexpr int kRotationAlternates = 3;
inline constexpr int kManipulationBoxPx = 5;
inline constexpr double kNmsRadiusPx = 3.0;

// Affordance scorer. Builds a smooth bump over the movable surface, peaked at
// the affordance-rect center and falling to zero at the farthest panel corner,
// then picks the top_m scoring pixels under non-maximum suppression. The bump
// center is displaced by noise_sigma (converted to panel units through the
// raster footprint); corrupted candidates are redrawn uniformly over the
// movable pixels.
inline AffordanceMap position_expert_map(const SceneState& st, const Observation& obs,
                                         const ExpertFidelity& fidelity, Rng& rng) {
  const PanelRect& rect = st.spec.affordance;
  double cu = rect.cu(), cv = rect.cv();
  if (fidelity.noise_sigma > 0.0) {
    // one pixel subtends roughly footprint/width panel units at the working
    // distance; displace the bump center accordingly
    const double span = 2.0 * 5.0 * obs.camera.tan_half_fov / obs.width;
    cu += rng.normal() * fidelity.noise_sigma * span;
    cv += rng.normal() * fidelity.noise_sigma * span;
  }
  double reach = 0.0;
  for (double u : {0.0, st.spec.panel_w})
    for (double v : {0.0, st.spec.panel_h})
      reach = std::max(reach, std::hypot(u - cu, v - cv));

  AffordanceMap map;
  map.width = obs.width;
  map.height = obs.height;
  map.score.assign(static_cast<size_t>(obs.width) * obs.height, 0.0);
  for (const auto& px : detail::surface_pixels(obs)) {
    double u, v;
    panel_world_to_local(st.spec, st.q, px.point, u, v);
    const double d = std::hypot(u - cu, v - cv);
    const double s = std::max(0.0, 1.0 - d / reach);
    map.score[static_cast<size_t>(px.row) * map.width + px.col] = s * s;
  }
  return map;
}

inline std::vector<CandidatePoint> position_expert_candidates(const SceneState& st,
                                                              const Observation& obs,
                                                              const AffordanceMap& map,
                                                              const ExpertFidelity& fidelity,
                                                              Rng& rng, int top_m = kPositionTopM) {
  const auto pixels = detail::surface_pixels(obs);
  std::vector<int> order(pixels.size());
  for (size_t i = 0; i < pixels.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const double sa = map.at(pixels[a].row, pixels[a].col);
    const double sb = map.at(pixels[b].row, pixels[b].col);
    if (sa != sb) return sa > sb;
    if (pixels[a].row != pixels[b].row) return pixels[a].row < pixels[b].row;
    return pixels[a].col < pixels[b].col;
  });

  std::vector<CandidatePoint> out;
  for (int i : order) {
    if (static_cast<int>(out.size()) >= top_m) break;
    const auto& px = pixels[i];
    bool suppressed = false;
    for (const auto& kept : out) {
      const double dr = px.row - kept.row, dc = px.col - kept.col;
      if (dr * dr + dc * dc <= kNmsRadiusPx * kNmsRadiusPx) {
        suppressed = true;
        break;
      }
    }
    if (suppressed) continue;
    out.push_back({px.row, px.col, px.point, map.at(px.row, px.col)});
  }

  if (!pixels.empty() && fidelity.corruption_prob > 0.0) {
    for (auto& cand : out) {
      if (!rng.bernoulli(fidelity.corruption_prob)) continue;
      const auto& px = pixels[rng.uniform_int(0, static_cast<int>(pixels.size()) - 1)];
      cand = {px.row, px.col, px.point, map.at(px.row, px.col)};
    }
  }
  return out;
}

inline std::pair<AffordanceMap, std::vector<CandidatePoint>> position_expert(
    const SceneState& st, const Observation& obs, const ExpertFidelity& fidelity, Rng& rng,
    int top_m = kPositionTopM) {
  AffordanceMap map = position_expert_map(st, obs, fidelity, rng);
  auto cands = position_expert_candidates(st, obs, map, fidelity, rng, top_m);
  return {std::move(map), std::move(cands)};
}

inline std::pair<AffordanceMap, std::vector<CandidatePoint>> position_expert(
    const SceneState& st, const ExpertFidelity& fidelity, Rng& rng, int top_m = kPositionTopM) {
  return position_expert(st, render(st), fidelity, rng, top_m);
}

// Candidate selector. Re-scores contact candidates by affordance membership
// and lever arm, keeps the best n. A corrupted candidate gets a uniformly
// random re-score instead.
inline std::vector<CandidatePoint> reasoning_expert(const std::vector<CandidatePoint>& candidates,
                                                    const SceneState& st, int n,
                                                    const ExpertFidelity& fidelity, Rng& rng) {
  struct Scored {
    CandidatePoint cand;
    double key;
  };
  std::vector<Scored> scored;
  scored.reserve(candidates.size());
  for (const auto& cand : candidates) {
    double u, v;
    panel_world_to_local(st.spec, st.q, cand.world_point, u, v);
    double lever = 1.0;
    if (st.spec.joint == JointKind::Revolute) {
      const double d = point_line_distance(cand.world_point, hinge_anchor_world(st.spec),
                                           hinge_axis(st.spec));
      lever = std::clamp(d / st.spec.panel_w, kLeverFloor, 1.0);
    }
    double key = (st.spec.affordance.contains(u, v) ? 1.0 : 0.0) + lever;
    if (fidelity.noise_sigma > 0.0) key += rng.normal() * fidelity.noise_sigma * 0.05;
    if (fidelity.corruption_prob > 0.0 && rng.bernoulli(fidelity.corruption_prob))
      key = rng.uniform01() * 2.0;
    scored.push_back({cand, key});
  }
  std::stable_sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
    if (a.key != b.key) return a.key > b.key;
    if (a.cand.row != b.cand.row) return a.cand.row < b.cand.row;
    return a.cand.col < b.cand.col;
  });
  std::vector<CandidatePoint> out;
  for (const auto& s : scored) {
    if (static_cast<int>(out.size()) >= n) break;
    out.push_back(s.cand);
  }
  return out;
}

// Grasp-direction estimator. Fits a plane to the rendered depth inside the
// manipulation box around the contact pixel (movable pixels only), orients the
// estimated normal toward the camera, and returns forward = -normal with a
// deterministic up vector, plus jittered alternates at decreasing confidence.
inline std::vector<CandidateRotation> rotation_expert(const CandidatePoint& contact,
                                                      const SceneState& st,
                                                      const Observation& obs,
                                                      const ExpertFidelity& fidelity, Rng& rng,
                                                      int k = kRotationAlternates,
                                                      int box_px = kManipulationBoxPx) {
  const int r0 = std::max(0, contact.row - box_px);
  const int r1 = std::min(obs.height - 1, contact.row + box_px);
  const int c0 = std::max(0, contact.col - box_px);
  const int c1 = std::min(obs.width - 1, contact.col + box_px);
  std::vector<Vec3> pts;
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c)
      if (obs.movable(r, c)) {
        const double t = obs.camera.denormalize_depth(obs.depth_at(r, c));
        pts.push_back(obs.camera.unproject(r, c, t));
      }
  if (pts.size() < 3) throw DegeneratePatch("manipulation box holds fewer than 3 surface pixels");

  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  for (const auto& p : pts) centroid += Eigen::Vector3d(p.x, p.y, p.z);
  centroid /= static_cast<double>(pts.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& p : pts) {
    const Eigen::Vector3d d = Eigen::Vector3d(p.x, p.y, p.z) - centroid;
    cov += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
  // collinear patch: no unique plane
  if (eig.eigenvalues()(1) < 1e-12 * static_cast<double>(pts.size()))
    throw DegeneratePatch("manipulation box pixels are collinear");
  const Eigen::Vector3d nv = eig.eigenvectors().col(0);
  Vec3 normal{nv(0), nv(1), nv(2)};
  const Vec3 to_camera = obs.camera.origin - Vec3{centroid(0), centroid(1), centroid(2)};
  if (dot(normal, to_camera) < 0.0) normal = normal * -1.0;

  Vec3 fwd = normalize(normal * -1.0);
  if (fidelity.noise_sigma > 0.0)
    fwd = tilt_direction(fwd, std::fabs(rng.normal()) * fidelity.noise_sigma, rng);
  if (fidelity.corruption_prob > 0.0 && rng.bernoulli(fidelity.corruption_prob)) {
    Vec3 d{rng.normal(), rng.normal(), rng.normal()};
    if (norm(d) > 1e-9) fwd = normalize(d);
  }

  // up: world z projected off forward, panel width axis when near-parallel
  Vec3 up_hint{0, 0, 1};
  if (std::fabs(dot(up_hint, fwd)) > 0.98)
    up_hint = panel_local_to_world(st.spec, st.q, Vec3{1, 0, 0}) -
              panel_local_to_world(st.spec, st.q, Vec3{0, 0, 0});

  std::vector<CandidateRotation> out;
  for (int i = 0; i < k; ++i) {
    Vec3 f = i == 0 ? fwd : tilt_direction(fwd, 5.0 * i, rng);
    const Frame frame = orthonormalize(up_hint, f);
    out.push_back({frame.up, frame.forward, 0.9 * (1.0 - 0.25 * i)});
  }
  return out;
}

inline std::vector<CandidateRotation> rotation_expert(const CandidatePoint& contact,
                                                      const SceneState& st,
                                                      const ExpertFidelity& fidelity, Rng& rng,
                                                      int k = kRotationAlternates,
                                                      int box_px = kManipulationBoxPx) {
  return rotation_expert(contact, st, render(st), fidelity, rng, k, box_px);
}

// Baseline that bypasses the policy entirely: top-1 contact from the position
// expert composed with the top-1 frame from the rotation expert.
inline Pose6D experts_only_action(const SceneState& st, const ExpertFidelity& fidelity, Rng& rng) {
  const Observation obs = render(st);
  const auto [map, cands] = position_expert(st, obs, fidelity, rng);
  if (cands.empty()) throw DegeneratePatch("no surface pixels visible");
  const auto rots = rotation_expert(cands.front(), st, obs, fidelity, rng);
  Pose6D pose;
  pose.forward = rots.front().forward;
  pose.up = rots.front().up;
  pose.position = cands.front().world_point - pose.forward * kActionStandoff;
  return pose;
}

}  // namespace dpc
