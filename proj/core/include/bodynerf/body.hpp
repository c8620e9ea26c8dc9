#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

#include "bodynerf/common.hpp"

namespace bodynerf {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Rest mesh, kinematic tree and per-vertex blend weights. Immutable after
/// construction; validate() enforces every structural invariant and is called
/// by the loaders and the generator.
struct BodyTemplate {
  std::vector<Vec3> vertices;            // V rest positions, meters
  std::vector<std::array<int, 3>> faces; // triangle indices
  std::vector<Vec3> joints;              // N rest joint positions
  std::vector<int> parent;               // per joint, -1 for root
  std::vector<double> blend_weights;     // V x N row-major, rows on simplex
  std::vector<Vec3> bone_tips;           // per joint, far end of its bone

  std::int64_t vertex_count() const { return static_cast<std::int64_t>(vertices.size()); }
  std::int64_t joint_count() const { return static_cast<std::int64_t>(joints.size()); }
  const double* weight_row(std::int64_t v) const {
    return blend_weights.data() + v * joint_count();
  }
  /// Joints ordered so parents precede children.
  std::vector<int> topo_order() const;
  void validate() const;
};

/// Per-joint axis-angle rotations plus a root offset at one time step.
struct Pose {
  std::vector<Vec3> joint_rotations;  // axis-angle, radians
  Vec3 root_translation = Vec3::Zero();
  int time_index = 0;

  /// Wraps any rotation with |axis-angle| >= 2*pi back into [0, 2*pi).
  Pose normalized() const;
};

/// Rigid transform per body part mapping rest space to posed space.
struct PartTransforms {
  std::vector<Mat4> transforms;

  std::int64_t count() const { return static_cast<std::int64_t>(transforms.size()); }
  const Mat4& operator[](std::int64_t j) const { return transforms[j]; }
};

Mat3 rodrigues(const Vec3& axis_angle);

PartTransforms forward_kinematics(const BodyTemplate& tmpl, const Pose& pose);

std::vector<Vec3> pose_mesh(const BodyTemplate& tmpl,
                            const PartTransforms& transforms);

/// Blended per-point transform (sum_j w_j T_j) applied to p.
Vec3 blend_transform_point(const double* weights, const PartTransforms& t,
                           const Vec3& p);

struct HumanoidConfig {
  double height = 1.7;          // head top to foot, meters
  double radius = 0.07;         // base limb radius
  int radial_segments = 8;      // capsule ring resolution
  int length_segments = 3;      // capsule shaft resolution
  double proportion_jitter = 0.08;  // relative spread of per-seed limb jitter
};

/// Deterministic low-poly capsule humanoid with 12 joints and smooth
/// distance-falloff blend weights.
BodyTemplate generate_humanoid(std::uint64_t seed,
                               const HumanoidConfig& config = {});

BodyTemplate load_template(const std::string& path);
void save_template(const std::string& path, const BodyTemplate& tmpl);

}  // namespace bodynerf
