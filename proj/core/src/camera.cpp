#include "bodynerf/camera.hpp"

namespace bodynerf {

void Camera::validate() const {
  BN_CHECK(fx > 0.0 && fy > 0.0, "Camera: focal lengths must be positive");
  BN_CHECK(width > 0 && height > 0, "Camera: bad image size ", width, "x",
           height);
  const Mat3 rtr = rotation.transpose() * rotation;
  BN_CHECK((rtr - Mat3::Identity()).norm() <= 1e-9,
           "Camera: rotation is not orthonormal");
  BN_CHECK(std::abs(rotation.determinant() - 1.0) <= 1e-9,
           "Camera: rotation determinant is ", rotation.determinant());
}

Camera Camera::look_at(const Vec3& eye, const Vec3& target, const Vec3& up,
                       double focal_px, int width, int height, int camera_id) {
  Camera c;
  const Vec3 fwd = (target - eye).normalized();
  Vec3 right = fwd.cross(up);
  BN_CHECK(right.norm() > 1e-9, "Camera::look_at: up parallel to view axis");
  right.normalize();
  const Vec3 down = fwd.cross(right);
  // Camera frame: x right, y down, z forward.
  c.rotation.row(0) = right.transpose();
  c.rotation.row(1) = down.transpose();
  c.rotation.row(2) = fwd.transpose();
  c.translation = -c.rotation * eye;
  c.fx = c.fy = focal_px;
  c.cx = width * 0.5;
  c.cy = height * 0.5;
  c.width = width;
  c.height = height;
  c.camera_id = camera_id;
  c.validate();
  return c;
}

Projection project(const Vec3& point, const Camera& camera) {
  BN_CHECK(point.allFinite(), "project: non-finite point");
  const Vec3 pc = camera.to_camera(point);
  Projection out;
  out.depth = pc.z();
  if (pc.z() <= 1e-6) return out;  // unprojectable
  out.u = camera.fx * pc.x() / pc.z() + camera.cx;
  out.v = camera.fy * pc.y() / pc.z() + camera.cy;
  out.ok = true;
  return out;
}

Ray generate_ray(const Camera& camera, double u, double v) {
  Ray r;
  r.origin = camera.center();
  const Vec3 dir_cam((u - camera.cx) / camera.fx, (v - camera.cy) / camera.fy,
                     1.0);
  r.direction = (camera.rotation.transpose() * dir_cam).normalized();
  r.pixel_u = u;
  r.pixel_v = v;
  return r;
}

std::vector<Ray> generate_rays(
    const Camera& camera,
    const std::vector<std::pair<double, double>>& pixels) {
  std::vector<Ray> rays;
  rays.reserve(pixels.size());
  for (const auto& [u, v] : pixels) {
    BN_CHECK(u >= 0.0 && u <= camera.width && v >= 0.0 && v <= camera.height,
             "generate_rays: pixel (", u, ",", v, ") outside ", camera.width,
             "x", camera.height, " image");
    rays.push_back(generate_ray(camera, u, v));
  }
  return rays;
}

}  // namespace bodynerf
