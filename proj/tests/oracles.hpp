#pragma once

// Independent reference implementations used as test oracles. Everything in
// here recomputes results from first principles (exhaustive scans, scalar
// arithmetic, dense reference kernels) so the library paths they check stay
// independent.

#include <array>
#include <cmath>
#include <vector>

#include "bodynerf/body.hpp"
#include "bodynerf/camera.hpp"
#include "bodynerf/mesh_distance.hpp"

namespace oracles {

using bodynerf::Camera;
using bodynerf::Vec3;

// Exhaustive unsigned point-to-mesh distance.
inline double brute_force_mesh_distance(
    const Vec3& p, const std::vector<Vec3>& verts,
    const std::vector<std::array<int, 3>>& faces) {
  double best = std::numeric_limits<double>::infinity();
  for (const auto& f : faces)
    best = std::min(best, bodynerf::point_triangle_distance(
                              p, verts[f[0]], verts[f[1]], verts[f[2]]));
  return best;
}

// Moller-Trumbore segment/triangle intersection with parametric range
// (eps, 1-eps) along the segment.
inline bool segment_hits_triangle(const Vec3& a, const Vec3& b, const Vec3& v0,
                                  const Vec3& v1, const Vec3& v2) {
  constexpr double kEps = 1e-9;
  const Vec3 dir = b - a;
  const Vec3 e1 = v1 - v0, e2 = v2 - v0;
  const Vec3 pvec = dir.cross(e2);
  const double det = e1.dot(pvec);
  if (std::abs(det) < 1e-15) return false;
  const double inv = 1.0 / det;
  const Vec3 tvec = a - v0;
  const double u = tvec.dot(pvec) * inv;
  if (u < -kEps || u > 1.0 + kEps) return false;
  const Vec3 qvec = tvec.cross(e1);
  const double v = dir.dot(qvec) * inv;
  if (v < -kEps || u + v > 1.0 + kEps) return false;
  const double t = e2.dot(qvec) * inv;
  return t > 1e-6 && t < 1.0 - 1e-6;
}

// Ray-cast visibility: the segment from the camera center to the vertex must
// clear every face not incident to the vertex, and project inside the image.
inline std::vector<bool> raycast_visibility(
    const std::vector<Vec3>& verts,
    const std::vector<std::array<int, 3>>& faces, const Camera& cam) {
  const Vec3 origin = cam.center();
  std::vector<bool> visible(verts.size(), false);
  for (size_t vi = 0; vi < verts.size(); ++vi) {
    const bodynerf::Projection p = bodynerf::project(verts[vi], cam);
    if (!p.ok || p.u < 0 || p.u >= cam.width || p.v < 0 || p.v >= cam.height)
      continue;
    bool blocked = false;
    for (const auto& f : faces) {
      if (f[0] == static_cast<int>(vi) || f[1] == static_cast<int>(vi) ||
          f[2] == static_cast<int>(vi))
        continue;
      if (segment_hits_triangle(origin, verts[vi], verts[f[0]], verts[f[1]],
                                verts[f[2]])) {
        blocked = true;
        break;
      }
    }
    visible[vi] = !blocked;
  }
  return visible;
}

// Scalar volume-rendering reference for one ray.
inline std::array<double, 3> composite_reference(
    const std::vector<double>& sigma, const std::vector<std::array<double, 3>>& color,
    const std::vector<double>& delta) {
  std::array<double, 3> out = {0, 0, 0};
  double accum = 0.0;  // sum of sigma_j * delta_j over previous samples
  for (size_t k = 0; k < sigma.size(); ++k) {
    const double transmittance = std::exp(-accum);
    const double alpha = 1.0 - std::exp(-sigma[k] * delta[k]);
    for (int c = 0; c < 3; ++c)
      out[c] += transmittance * alpha * color[k][c];
    accum += sigma[k] * delta[k];
  }
  return out;
}

// Unit icosphere (subdivided icosahedron), centered at the origin.
inline void icosphere(int subdivisions, std::vector<Vec3>& verts,
                      std::vector<std::array<int, 3>>& faces) {
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {
      {-1, phi, 0}, {1, phi, 0}, {-1, -phi, 0}, {1, -phi, 0},
      {0, -1, phi}, {0, 1, phi}, {0, -1, -phi}, {0, 1, -phi},
      {phi, 0, -1}, {phi, 0, 1}, {-phi, 0, -1}, {-phi, 0, 1}};
  for (auto& p : v) p.normalize();
  std::vector<std::array<int, 3>> f = {
      {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
      {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
      {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
      {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::vector<std::array<int, 3>> next;
    for (const auto& tri : f) {
      const int a = static_cast<int>(v.size());
      v.push_back(((v[tri[0]] + v[tri[1]]) * 0.5).normalized());
      const int b = static_cast<int>(v.size());
      v.push_back(((v[tri[1]] + v[tri[2]]) * 0.5).normalized());
      const int c = static_cast<int>(v.size());
      v.push_back(((v[tri[2]] + v[tri[0]]) * 0.5).normalized());
      next.push_back({tri[0], a, c});
      next.push_back({a, tri[1], b});
      next.push_back({c, b, tri[2]});
      next.push_back({a, b, c});
    }
    f = std::move(next);
  }
  verts = std::move(v);
  faces = std::move(f);
}

}  // namespace oracles
