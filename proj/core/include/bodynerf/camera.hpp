#pragma once

#include <vector>

#include "bodynerf/body.hpp"

namespace bodynerf {

/// Pinhole camera: world->camera extrinsics plus intrinsics in pixels.
struct Camera {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  Mat3 rotation = Mat3::Identity();   // world -> camera
  Vec3 translation = Vec3::Zero();
  int width = 0, height = 0;
  int camera_id = 0;

  Vec3 center() const { return -rotation.transpose() * translation; }
  Vec3 to_camera(const Vec3& p) const { return rotation * p + translation; }
  void validate() const;

  /// Look-at constructor; up must not be parallel to the view direction.
  static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up,
                        double focal_px, int width, int height, int camera_id);
};

struct Projection {
  double u = 0, v = 0;
  double depth = 0;
  bool ok = false;  // false when the point is at/behind the camera plane
};

Projection project(const Vec3& point, const Camera& camera);

struct Ray {
  Vec3 origin;
  Vec3 direction;  // unit norm
  double pixel_u = 0, pixel_v = 0;
  int time_index = 0;
};

/// Rays through continuous pixel coordinates (pixel (i,j) centers are at
/// (i+0.5, j+0.5)). Direction is the normalized back-projection.
std::vector<Ray> generate_rays(const Camera& camera,
                               const std::vector<std::pair<double, double>>& pixels);
Ray generate_ray(const Camera& camera, double u, double v);

}  // namespace bodynerf
