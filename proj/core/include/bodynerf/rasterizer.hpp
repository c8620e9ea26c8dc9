#pragma once

#include <array>
#include <limits>
#include <vector>

#include "bodynerf/camera.hpp"

namespace bodynerf {

/// Z-buffer of a posed mesh under a camera, with optional per-vertex colors
/// interpolated perspective-correct. Coordinates match the camera's image
/// plane scaled to the buffer resolution.
struct Raster {
  int width = 0, height = 0;
  double scale_u = 1.0, scale_v = 1.0;  // image px -> buffer px
  std::vector<double> depth;            // camera z, +inf where empty
  std::vector<double> color;            // h*w*3 over black, if requested

  double depth_at(double image_u, double image_v) const;
  double max_depth_around(double image_u, double image_v) const;
};

Raster rasterize(const std::vector<Vec3>& vertices,
                 const std::vector<std::array<int, 3>>& faces,
                 const Camera& camera, int buffer_width, int buffer_height,
                 const std::vector<Vec3>* vertex_colors = nullptr);

struct VisibilityOptions {
  int resolution = 256;          // longest buffer side
  double depth_bias_scale = 1e-3;  // multiplied by the mesh bbox diagonal
};

/// Per-vertex visibility: inside the image, in front of the camera, and not
/// occluded per the z-buffer (with a small bias against self-occlusion).
std::vector<bool> rasterize_visibility(
    const std::vector<Vec3>& vertices,
    const std::vector<std::array<int, 3>>& faces, const Camera& camera,
    const VisibilityOptions& options = {});

}  // namespace bodynerf
