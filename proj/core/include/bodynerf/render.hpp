#pragma once

#include <optional>
#include <vector>

#include "bodynerf/image.hpp"
#include "bodynerf/mesh_distance.hpp"
#include "bodynerf/model.hpp"
#include "bodynerf/rasterizer.hpp"
#include "bodynerf/sampler.hpp"

namespace bodynerf {

struct Compositing {
  Tensor color;    // (R,3)
  Tensor weights;  // (M,1) per-sample contribution T_k * (1 - exp(-sigma delta))
};

/// Transmittance-weighted accumulation of samples into per-ray colors. Rays
/// without samples come out as the black background.
Compositing composite(const Tensor& sigma, const Tensor& rgb,
                      const std::vector<double>& deltas,
                      const std::vector<std::int64_t>& ray_ids,
                      std::int64_t n_rays);

/// Sum of squared color error over the ray batch.
Tensor photometric_loss(const Tensor& rendered, const Tensor& reference);

/// Observed-frame preparation: encoder features, kinematics and visibility.
ObservedFrame prepare_observed_frame(const Model& model, const Image& image,
                                     const Camera& camera, const Pose& pose,
                                     const BodyTemplate& tmpl,
                                     const VisibilityOptions& vis = {});

/// Per-target-frame state shared by every ray batch.
struct TargetContext {
  const BodyTemplate* tmpl = nullptr;
  Pose pose;
  PartTransforms transforms;
  std::vector<Vec3> posed_vertices;
  SparseFeatureVolume volume;         // diffused multi-scale volume
  const DistanceGrid* distance_grid = nullptr;
  std::vector<char> never_visible;
};

TargetContext build_target_context(const Model& model,
                                   const std::vector<ObservedFrame>& frames,
                                   const BodyTemplate& tmpl, const Pose& pose,
                                   const DistanceGrid* distance_grid,
                                   double voxel_size, double bbox_margin);

/// Flattened ray samples for one batch.
struct PointBatch {
  std::vector<Vec3> points;
  std::vector<Vec3> directions;          // per point (unit)
  std::vector<double> deltas;
  std::vector<std::int64_t> ray_ids;
  std::int64_t n_rays = 0;
};

struct RenderStats {
  std::int64_t rays = 0;
  std::int64_t rays_with_samples = 0;
  std::int64_t network_points = 0;
};

struct PointOutputs {
  Tensor sigma;  // (B,1), non-negative
  Tensor rgb;    // (B,3), in [0,1]
};

/// Density and color for a batch of target-space points. rgb is left
/// undefined when with_color is false (density-only probes).
PointOutputs evaluate_points(const Model& model, const TargetContext& target,
                             const std::vector<ObservedFrame>& frames,
                             const std::vector<Vec3>& points,
                             const std::vector<Vec3>& directions,
                             int camera_id, RenderStats* stats = nullptr,
                             bool with_color = true);

/// Differentiable render of a prepared point batch into per-ray colors.
Tensor render_rays(const Model& model, const TargetContext& target,
                   const std::vector<ObservedFrame>& frames,
                   const PointBatch& batch, int camera_id,
                   RenderStats* stats = nullptr);

struct RenderImageOptions {
  SamplerOptions sampler;
  int batch_points = 4096;  // flush threshold for ray batches
};

/// Full-frame render. Pixels whose rays miss the surface band stay
/// background; rays outside the volume's screen bbox never reach the sampler
/// or the network.
Image render_image(const Model& model, const TargetContext& target,
                   const std::vector<ObservedFrame>& frames,
                   const Camera& camera, const RenderImageOptions& options,
                   RenderStats* stats = nullptr);

/// Density sampled at the level-0 voxel centers, for geometry inspection.
struct DensityGrid {
  Vec3 origin;
  double voxel_size = 0;
  int nx = 0, ny = 0, nz = 0;
  std::vector<double> values;  // (z,y,x)
};
DensityGrid dump_density_grid(const Model& model, const TargetContext& target,
                              const std::vector<ObservedFrame>& frames);
void save_density_grid(const std::string& path, const DensityGrid& grid);

}  // namespace bodynerf
