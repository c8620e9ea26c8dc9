#include "bodynerf/sampler.hpp"

#include <algorithm>
#include <cmath>

namespace bodynerf {

bool ray_box_intersect(const Vec3& origin, const Vec3& dir, const Vec3& lo,
                       const Vec3& hi, double& t0, double& t1) {
  t0 = 0.0;
  t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(dir[a]) < 1e-15) {
      if (origin[a] < lo[a] || origin[a] > hi[a]) return false;
      continue;
    }
    double ta = (lo[a] - origin[a]) / dir[a];
    double tb = (hi[a] - origin[a]) / dir[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return false;
  }
  return t1 > 0.0;
}

std::vector<SurfaceSample> surface_guided_sample(const Ray& ray,
                                                 const DistanceGrid& grid,
                                                 const SamplerOptions& options,
                                                 Rng* rng) {
  BN_CHECK(options.threshold > 0.0, "surface_guided_sample: threshold must be > 0");
  BN_CHECK(options.n_samples > 0, "surface_guided_sample: n_samples must be > 0");

  double t0, t1;
  if (!ray_box_intersect(ray.origin, ray.direction, grid.box_lo(),
                         grid.box_hi(), t0, t1))
    return {};

  const double span = t1 - t0;
  const double target_step = options.march_step_factor * grid.voxel_size;
  const int steps = std::max(1, static_cast<int>(std::ceil(span / target_step)));
  const double step = span / steps;

  // March cell centers; a cell is kept when the interpolated distance at its
  // center is within the threshold. Kept runs form the sampling intervals.
  struct Interval {
    double lo, hi;
  };
  std::vector<Interval> intervals;
  bool inside = false;
  for (int k = 0; k < steps; ++k) {
    const double tc = t0 + (k + 0.5) * step;
    const Vec3 p = ray.origin + tc * ray.direction;
    const bool near = query_distance(grid, p).distance <= options.threshold;
    if (near && !inside) {
      intervals.push_back({t0 + k * step, t0 + (k + 1) * step});
      inside = true;
    } else if (near) {
      intervals.back().hi = t0 + (k + 1) * step;
    } else {
      inside = false;
    }
  }
  if (intervals.empty()) return {};

  double total = 0.0;
  for (const auto& iv : intervals) total += iv.hi - iv.lo;

  // Stratified positions over the union, mapped back through the intervals.
  std::vector<SurfaceSample> samples(options.n_samples);
  size_t cur = 0;
  double consumed = 0.0;  // union length before intervals[cur]
  for (int i = 0; i < options.n_samples; ++i) {
    const double xi = rng ? rng->uniform() : 0.5;
    const double u = (i + xi) / options.n_samples * total;
    while (u > consumed + (intervals[cur].hi - intervals[cur].lo) &&
           cur + 1 < intervals.size()) {
      consumed += intervals[cur].hi - intervals[cur].lo;
      ++cur;
    }
    samples[i].t = intervals[cur].lo + (u - consumed);
  }
  for (int i = 0; i + 1 < options.n_samples; ++i)
    samples[i].delta = samples[i + 1].t - samples[i].t;
  samples.back().delta = step;
  return samples;
}

}  // namespace bodynerf
