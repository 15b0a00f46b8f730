#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "dpc/scene.hpp"

namespace dpc {

// Pinhole camera on the upper hemisphere, aimed at the workspace center.
// The 50 degree full field of view keeps the whole [-1,1]^3 workspace inside
// the frustum at every admissible camera draw.
struct CameraModel {
  Vec3 origin;
  Vec3 right, up, forward;  // orthonormal basis, forward toward the target
  double tan_half_fov = std::tan(deg_to_rad(25.0));
  int width = 64, height = 64;
  double depth_lo = 2.5, depth_hi = 7.5;  // normalization span for depth values

  // center ray of pixel (row, col); rows grow downward
  Vec3 ray_dir(int row, int col) const {
    const double x = ((col + 0.5) / width) * 2.0 - 1.0;
    const double y = 1.0 - ((row + 0.5) / height) * 2.0;
    return normalize(forward + (right * (x * tan_half_fov)) + (up * (y * tan_half_fov)));
  }

  // world point -> (row, col, ray distance); row/col are real-valued
  struct Projection {
    double row, col, t;
  };
  std::optional<Projection> project(const Vec3& p) const {
    const Vec3 v = p - origin;
    const double zc = dot(v, forward);
    if (zc <= 1e-9) return std::nullopt;
    const double nx = dot(v, right) / (zc * tan_half_fov);
    const double ny = dot(v, up) / (zc * tan_half_fov);
    Projection pr;
    pr.col = (nx + 1.0) / 2.0 * width - 0.5;
    pr.row = (1.0 - ny) / 2.0 * height - 0.5;
    pr.t = norm(v);
    return pr;
  }

  Vec3 unproject(int row, int col, double t) const { return origin + ray_dir(row, col) * t; }

  double normalize_depth(double t) const {
    double d = (t - depth_lo) / (depth_hi - depth_lo);
    if (d < 0.0) d = 0.0;
    if (d > 1.0) d = 1.0;
    return d;
  }

  double denormalize_depth(double d) const { return depth_lo + d * (depth_hi - depth_lo); }
};

inline CameraModel make_camera(const CameraDraw& draw, int width, int height) {
  CameraModel cam;
  cam.width = width;
  cam.height = height;
  const double az = deg_to_rad(draw.azimuth_deg);
  const double alt = deg_to_rad(draw.altitude_deg);
  cam.origin = Vec3{std::cos(alt) * std::cos(az), std::cos(alt) * std::sin(az), std::sin(alt)} *
               draw.distance;
  cam.forward = normalize(-cam.origin);  // towards the workspace center
  cam.right = normalize(cross(cam.forward, Vec3{0, 0, 1}));
  cam.up = cross(cam.right, cam.forward);
  return cam;
}

// Raster observation. depth is -1 wherever occupancy is 0 and lies in [0,1]
// wherever occupancy is 1; movable_mask is a subset of occupancy.
struct Observation {
  int width = 64, height = 64;
  std::vector<std::uint8_t> occupancy;
  std::vector<double> depth;
  std::vector<std::uint8_t> movable_mask;
  CameraModel camera;

  int idx(int row, int col) const { return row * width + col; }
  bool occupied(int row, int col) const { return occupancy[idx(row, col)] != 0; }
  bool movable(int row, int col) const { return movable_mask[idx(row, col)] != 0; }
  double depth_at(int row, int col) const { return depth[idx(row, col)]; }
  bool in_bounds(int row, int col) const {
    return row >= 0 && row < height && col >= 0 && col < width;
  }
};

// Deterministic ray-cast of panel plus static frame. Nearest hit wins;
// the movable mask marks panel hits only.
inline Observation render(const SceneState& st, int width = 64, int height = 64) {
  Observation obs;
  obs.width = width;
  obs.height = height;
  obs.camera = make_camera(st.spec.camera, width, height);
  obs.occupancy.assign(static_cast<size_t>(width) * height, 0);
  obs.movable_mask.assign(static_cast<size_t>(width) * height, 0);
  obs.depth.assign(static_cast<size_t>(width) * height, -1.0);

  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const Vec3 dir = obs.camera.ray_dir(r, c);
      const auto panel = ray_panel(st.spec, st.q, obs.camera.origin, dir);
      const auto frame = ray_frame(st.spec, obs.camera.origin, dir);
      double t = -1.0;
      bool on_panel = false;
      if (panel && (!frame || panel->t <= *frame)) {
        t = panel->t;
        on_panel = true;
      } else if (frame) {
        t = *frame;
      }
      if (t > 0.0) {
        const int i = obs.idx(r, c);
        obs.occupancy[i] = 1;
        obs.movable_mask[i] = on_panel ? 1 : 0;
        obs.depth[i] = obs.camera.normalize_depth(t);
      }
    }
  }
  return obs;
}

// Pixel mask of the true affordance rectangle (panel hits inside the rect).
inline std::vector<std::uint8_t> affordance_oracle(const SceneState& st, int width = 64,
                                                   int height = 64) {
  const CameraModel cam = make_camera(st.spec.camera, width, height);
  std::vector<std::uint8_t> mask(static_cast<size_t>(width) * height, 0);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const Vec3 dir = cam.ray_dir(r, c);
      const auto panel = ray_panel(st.spec, st.q, cam.origin, dir);
      if (!panel) continue;
      const auto frame = ray_frame(st.spec, cam.origin, dir);
      if (frame && *frame < panel->t) continue;
      if (st.spec.affordance.contains(panel->u, panel->v)) mask[r * width + c] = 1;
    }
  }
  return mask;
}

// Ground-truth outward panel normal at the current joint value.
inline Vec3 normal_oracle(const SceneState& st) { return panel_normal_world(st.spec, st.q); }

}  // namespace dpc
