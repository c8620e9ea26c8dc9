#pragma once

#include <vector>

#include "bodynerf/body.hpp"
#include "bodynerf/encoder.hpp"
#include "bodynerf/feature_volume.hpp"
#include "bodynerf/mlp.hpp"

namespace bodynerf {

struct InitialWeights {
  Tensor w_s;                        // (B, N), rows copied from nearest vertices
  Tensor distance;                   // (B, 1) meters
  std::vector<std::int64_t> nearest; // winning vertex per point
};

/// Nearest-posed-vertex blend weights and distance. Exhaustive search; ties
/// go to the lowest vertex index.
InitialWeights initial_blend_weights(const std::vector<Vec3>& points,
                                     const std::vector<Vec3>& posed_vertices,
                                     const BodyTemplate& tmpl);

/// Residual blend-weight refinement: w_g = softmax(w_s + MLP(w_s, pose, d)).
class WeightRefiner {
 public:
  WeightRefiner() = default;
  WeightRefiner(int n_parts, const std::vector<std::int64_t>& hidden, Rng& rng);

  Tensor refine(const Tensor& w_s, const Pose& target_pose,
                const Tensor& distance) const;

  void collect_parameters(std::vector<Parameter*>& out) { mlp_.collect_parameters(out); }
  int n_parts() const { return n_parts_; }

 private:
  int n_parts_ = 0;
  Mlp mlp_;
};

/// Per-part target->observation transforms T_o[j] * T_g[j]^-1.
std::vector<Mat4> relative_part_transforms(const PartTransforms& target,
                                           const PartTransforms& observed);

/// Warp points into an observed frame with refined weights:
/// p_o = (sum_j w_j * T_o[j] T_g[j]^-1) p_g, batched over points.
Tensor warp_to_observation(const Tensor& w_g, const std::vector<Vec3>& points,
                           const PartTransforms& target,
                           const PartTransforms& observed);
Tensor warp_with_relative(const Tensor& w_g, const std::vector<Vec3>& points,
                          const std::vector<Mat4>& relative);

struct TemporalFeatures {
  std::vector<Tensor> features;            // per frame (B, C_f)
  std::vector<std::vector<char>> valid;    // projectable and in-image
};

/// Warp every point into each observed frame, project, and sample that
/// frame's feature map. Unprojectable or out-of-image points contribute a
/// zero feature and a cleared mask bit.
TemporalFeatures gather_temporal_features(const std::vector<Vec3>& points,
                                          const Tensor& w_g,
                                          const PartTransforms& target,
                                          const std::vector<ObservedFrame>& frames);

/// Differentiable pinhole projection of a (B,3) point tensor.
struct ProjectedPoints {
  Tensor uv;                 // (B,2); masked rows hold harmless values
  std::vector<char> in_front;
};
ProjectedPoints project_points(const Tensor& points, const Camera& camera);

}  // namespace bodynerf
