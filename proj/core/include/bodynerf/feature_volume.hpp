#pragma once

#include <unordered_map>
#include <vector>

#include "bodynerf/body.hpp"
#include "bodynerf/camera.hpp"
#include "bodynerf/encoder.hpp"
#include "bodynerf/optim.hpp"
#include "bodynerf/rng.hpp"

namespace bodynerf {

/// One resolution of the sparse feature volume: occupied voxels and their
/// feature rows.
struct VoxelLevel {
  double voxel_size = 0;
  int nx = 0, ny = 0, nz = 0;
  std::vector<std::int64_t> coords;                      // linear (z*ny+y)*nx+x
  std::unordered_map<std::int64_t, std::int64_t> rows;   // linear -> row
  Tensor feats;                                          // (n_occupied, C)

  std::int64_t linear(int x, int y, int z) const {
    return (static_cast<std::int64_t>(z) * ny + y) * nx + x;
  }
};

/// Sparse voxel features over the target-frame body bounding box. Starts as
/// a single level of scattered vertex features; diffusion replaces the level
/// set with the multi-scale outputs retained for interpolation.
struct SparseFeatureVolume {
  Vec3 origin = Vec3::Zero();
  double voxel_size = 0;
  int nx = 0, ny = 0, nz = 0;
  bool diffused = false;
  std::vector<VoxelLevel> levels;

  Vec3 box_lo() const { return origin; }
  Vec3 box_hi() const { return origin + voxel_size * Vec3(nx, ny, nz); }
  bool contains(const Vec3& p) const;
  std::int64_t query_channels() const;
};

/// Everything the aggregation step needs from one observed frame.
struct ObservedFrame {
  FeatureMap fmap;
  Camera camera;
  PartTransforms transforms;
  std::vector<Vec3> posed_vertices;
  std::vector<bool> visibility;
};

struct AggregatedFeatures {
  Tensor features;                  // (V, C_f)
  std::vector<char> never_visible;  // rows that fell back to the plain mean
};

/// Visibility-weighted mean of sampled image features across frames; rows
/// with no visible frame receive the unweighted mean and a flag.
AggregatedFeatures aggregate_vertex_features(
    const std::vector<ObservedFrame>& frames);

/// Mean of vertex features per occupied voxel over the given box.
SparseFeatureVolume scatter_to_voxels(const Tensor& vertex_features,
                                      const std::vector<Vec3>& posed_vertices,
                                      const Vec3& bbox_lo, const Vec3& bbox_hi,
                                      double voxel_size);

struct DiffusionConfig {
  int in_channels = 32;   // channels of the scattered level
  int channels = 32;      // C_v per retained level
  int levels = 4;
};

/// Four sparse blocks, each a stride-2 downsample followed by a 3x3x3
/// gather-matmul-scatter convolution and ReLU. Block outputs live at 2x, 4x,
/// 8x and 16x the base voxel size and are all retained for interpolation.
class DiffusionNet {
 public:
  DiffusionNet() = default;
  DiffusionNet(const DiffusionConfig& config, Rng& rng);

  SparseFeatureVolume diffuse(const SparseFeatureVolume& volume) const;

  void collect_parameters(std::vector<Parameter*>& out);
  const DiffusionConfig& config() const { return config_; }

 private:
  DiffusionConfig config_;
  std::vector<Parameter> w_, b_;
};

struct VolumeQuery {
  Tensor features;               // (B, levels * C_v)
  std::vector<char> in_bounds;   // per point, inside the level-0 box
};

/// Trilinear interpolation at every retained level (missing neighbors read
/// as zero), concatenated across levels.
VolumeQuery query_volume(const SparseFeatureVolume& volume,
                         const std::vector<Vec3>& points);

}  // namespace bodynerf
