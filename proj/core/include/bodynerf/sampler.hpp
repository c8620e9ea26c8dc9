#pragma once

#include <vector>

#include "bodynerf/camera.hpp"
#include "bodynerf/mesh_distance.hpp"
#include "bodynerf/rng.hpp"

namespace bodynerf {

struct SurfaceSample {
  double t = 0;      // depth along the ray
  double delta = 0;  // gap to the next sample; march step for the last one
};

struct SamplerOptions {
  double threshold = 0.05;        // meters to the surface
  int n_samples = 32;
  double march_step_factor = 0.5;  // march step = factor * voxel size
};

/// Samples restricted to the near-surface band: march the ray through the
/// grid box, keep the intervals where the interpolated distance is within
/// the threshold, then stratify n_samples over their union. Returns samples
/// strictly increasing in depth; empty when the band is never entered.
/// A null rng places each sample at its stratum midpoint.
std::vector<SurfaceSample> surface_guided_sample(const Ray& ray,
                                                 const DistanceGrid& grid,
                                                 const SamplerOptions& options,
                                                 Rng* rng);

/// Slab intersection of a ray with an axis-aligned box; false on a miss.
bool ray_box_intersect(const Vec3& origin, const Vec3& dir, const Vec3& lo,
                       const Vec3& hi, double& t0, double& t1);

}  // namespace bodynerf
