#pragma once

#include <cmath>
#include <optional>

#include "dpc/errors.hpp"

namespace dpc {

inline constexpr double kPi = 3.14159265358979323846;

inline double deg_to_rad(double d) { return d * (kPi / 180.0); }
inline double rad_to_deg(double r) { return r * (180.0 / kPi); }

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator-() const { return {-x, -y, -z}; }
  bool operator==(const Vec3& o) const { return x == o.x && y == o.y && z == o.z; }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }

inline bool finite(const Vec3& v) {
  return std::isfinite(v.x) && std::isfinite(v.y) && std::isfinite(v.z);
}

inline Vec3 normalize(const Vec3& v, double eps = 1e-12) {
  const double n = norm(v);
  if (!(n > eps)) throw ZeroVector("normalize(): zero-length vector");
  return v * (1.0 / n);
}

// Angle between two non-zero vectors, in degrees, in [0, 180].
inline double angle_between_deg(const Vec3& a, const Vec3& b) {
  const double na = norm(a), nb = norm(b);
  if (!(na > 1e-12) || !(nb > 1e-12)) throw ZeroVector("angle_between_deg(): zero-length input");
  double c = dot(a, b) / (na * nb);
  if (c > 1.0) c = 1.0;
  if (c < -1.0) c = -1.0;
  return rad_to_deg(std::acos(c));
}

// Gram-Schmidt repair of an (up, forward) pair. forward keeps its direction;
// up loses its forward component. Both come back unit length.
// Throws DegenerateFrame when the pair spans no plane.
struct Frame {
  Vec3 up;
  Vec3 forward;
};

inline Frame orthonormalize(const Vec3& up, const Vec3& forward) {
  const double nf = norm(forward), nu = norm(up);
  if (!(nf > 1e-6) || !(nu > 1e-6))
    throw DegenerateFrame("orthonormalize(): near-zero up or forward");
  const Vec3 f = forward * (1.0 / nf);
  const Vec3 u_raw = up * (1.0 / nu);
  const double c = dot(u_raw, f);
  if (std::fabs(c) > 1.0 - 1e-6)
    throw DegenerateFrame("orthonormalize(): up and forward are parallel");
  Vec3 u = u_raw - f * c;
  u = u * (1.0 / norm(u));
  return {u, f};
}

// Rodrigues rotation of v about unit axis by angle (radians).
inline Vec3 rotate_about_axis(const Vec3& v, const Vec3& axis, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return v * c + cross(axis, v) * s + axis * (dot(axis, v) * (1.0 - c));
}

// Distance from point p to the infinite line through a with unit direction d.
inline double point_line_distance(const Vec3& p, const Vec3& a, const Vec3& d) {
  const Vec3 w = p - a;
  return norm(w - d * dot(w, d));
}

// Ray / plane intersection. Plane through p0 with normal n. Returns the ray
// parameter t >= eps, or nothing for parallel or behind-origin hits.
inline std::optional<double> ray_plane(const Vec3& origin, const Vec3& dir, const Vec3& p0,
                                       const Vec3& n, double eps = 1e-9) {
  const double denom = dot(dir, n);
  if (std::fabs(denom) < 1e-12) return std::nullopt;
  const double t = dot(p0 - origin, n) / denom;
  if (t < eps) return std::nullopt;
  return t;
}

}  // namespace dpc
