#pragma once

#include <array>
#include <cmath>
#include <cstdint>

#include "dpc/errors.hpp"
#include "dpc/geometry.hpp"

namespace dpc {

// A gripper target: position plus an orthonormal (up, forward) frame.
// forward is the approach axis, pointing from the gripper into the scene.
struct Pose6D {
  Vec3 position;
  Vec3 up;       // unit
  Vec3 forward;  // unit, orthogonal to up
};

// 9 integer bins, one per pose component, each in (-50, 50] i.e. {-49..50}.
// Order: position xyz, up xyz, forward xyz.
struct DiscretePose {
  std::array<int, 9> bins{};

  bool operator==(const DiscretePose& o) const { return bins == o.bins; }
};

inline constexpr int kBinLo = -49;
inline constexpr int kBinHi = 50;

// Axis-aligned position bounds for normalization. Directions always use the
// fixed range [-1, 1] regardless of these bounds.
struct PoseNormalization {
  Vec3 position_lo{-1.0, -1.0, -1.0};
  Vec3 position_hi{1.0, 1.0, 1.0};
};

namespace detail {

// round half away from zero, then clamp into (-50, 50]
inline int quantize_norm(double v_norm) {
  int b = static_cast<int>(std::llround(v_norm * 100.0));  // llround is half away from zero
  if (b < kBinLo) b = kBinLo;
  if (b > kBinHi) b = kBinHi;
  return b;
}

inline double to_norm(double v, double lo, double hi) { return (v - lo) / (hi - lo) - 0.5; }
inline double from_norm(double v_norm, double lo, double hi) { return (v_norm + 0.5) * (hi - lo) + lo; }

}  // namespace detail

// --- component codec -------------------------------------------------------
// The affine map plus rounding below is the whole quantizer. encode_components
// and decode_components are exact mutual inverses on the bin lattice; the
// pose-level wrappers add workspace checks and frame repair on top.

inline DiscretePose encode_components(const std::array<double, 9>& comp,
                                      const PoseNormalization& nrm) {
  const double lo[3] = {nrm.position_lo.x, nrm.position_lo.y, nrm.position_lo.z};
  const double hi[3] = {nrm.position_hi.x, nrm.position_hi.y, nrm.position_hi.z};
  DiscretePose dp;
  for (int i = 0; i < 3; ++i) {
    const double width = hi[i] - lo[i];
    const double slack = width / 100.0;  // one bin of physical slack
    if (comp[i] < lo[i] - slack || comp[i] > hi[i] + slack)
      throw OutOfWorkspace("encode: position component outside normalization bounds");
    double v = comp[i];
    if (v < lo[i]) v = lo[i];
    if (v > hi[i]) v = hi[i];
    dp.bins[i] = detail::quantize_norm(detail::to_norm(v, lo[i], hi[i]));
  }
  for (int i = 3; i < 9; ++i) dp.bins[i] = detail::quantize_norm(detail::to_norm(comp[i], -1.0, 1.0));
  return dp;
}

inline std::array<double, 9> decode_components(const DiscretePose& dp,
                                               const PoseNormalization& nrm) {
  const double lo[3] = {nrm.position_lo.x, nrm.position_lo.y, nrm.position_lo.z};
  const double hi[3] = {nrm.position_hi.x, nrm.position_hi.y, nrm.position_hi.z};
  std::array<double, 9> comp{};
  for (int i = 0; i < 3; ++i) comp[i] = detail::from_norm(dp.bins[i] / 100.0, lo[i], hi[i]);
  for (int i = 3; i < 9; ++i) comp[i] = detail::from_norm(dp.bins[i] / 100.0, -1.0, 1.0);
  return comp;
}

// Normalized-space view of a raw component vector; used by round-trip checks.
inline std::array<double, 9> to_normalized(const std::array<double, 9>& comp,
                                           const PoseNormalization& nrm) {
  const double lo[3] = {nrm.position_lo.x, nrm.position_lo.y, nrm.position_lo.z};
  const double hi[3] = {nrm.position_hi.x, nrm.position_hi.y, nrm.position_hi.z};
  std::array<double, 9> out{};
  for (int i = 0; i < 3; ++i) out[i] = detail::to_norm(comp[i], lo[i], hi[i]);
  for (int i = 3; i < 9; ++i) out[i] = detail::to_norm(comp[i], -1.0, 1.0);
  return out;
}

inline std::array<double, 9> pose_components(const Pose6D& p) {
  return {p.position.x, p.position.y, p.position.z, p.up.x, p.up.y,
          p.up.z,       p.forward.x,  p.forward.y,  p.forward.z};
}

// --- pose codec -------------------------------------------------------------

// Quantizes a valid pose. The frame must already be orthonormal; encode does
// not modify it. Positions may sit up to one bin width outside the bounds and
// are clamped; farther out raises OutOfWorkspace.
inline DiscretePose encode_pose(const Pose6D& p, const PoseNormalization& nrm) {
  if (!finite(p.position) || !finite(p.up) || !finite(p.forward))
    throw OutOfWorkspace("encode_pose: non-finite component");
  return encode_components(pose_components(p), nrm);
}

// Inverse affine map followed by frame repair. The raw decoded directions are
// not unit vectors (they sit on the bin lattice); orthonormalize restores the
// frame invariant. DegenerateFrame propagates for parallel decoded directions.
inline Pose6D decode_pose(const DiscretePose& dp, const PoseNormalization& nrm) {
  const auto c = decode_components(dp, nrm);
  const Vec3 up_raw{c[3], c[4], c[5]};
  const Vec3 fwd_raw{c[6], c[7], c[8]};
  const Frame f = orthonormalize(up_raw, fwd_raw);
  return Pose6D{{c[0], c[1], c[2]}, f.up, f.forward};
}

}  // namespace dpc
