#include "bodynerf/rasterizer.hpp"

#include <algorithm>
#include <cmath>

namespace bodynerf {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

double Raster::depth_at(double image_u, double image_v) const {
  const int x = std::clamp(static_cast<int>(image_u * scale_u), 0, width - 1);
  const int y = std::clamp(static_cast<int>(image_v * scale_v), 0, height - 1);
  return depth[y * width + x];
}

double Raster::max_depth_around(double image_u, double image_v) const {
  // Max over the four pixel centers surrounding the exact position. Near
  // silhouettes the depth gradient dwarfs any constant bias; the neighbor on
  // the point's own side of the edge is the meaningful comparison.
  const double gx = image_u * scale_u - 0.5;
  const double gy = image_v * scale_v - 0.5;
  const int x0 = std::clamp(static_cast<int>(std::floor(gx)), 0, width - 1);
  const int y0 = std::clamp(static_cast<int>(std::floor(gy)), 0, height - 1);
  const int x1 = std::min(x0 + 1, width - 1);
  const int y1 = std::min(y0 + 1, height - 1);
  return std::max(std::max(depth[y0 * width + x0], depth[y0 * width + x1]),
                  std::max(depth[y1 * width + x0], depth[y1 * width + x1]));
}

Raster rasterize(const std::vector<Vec3>& vertices,
                 const std::vector<std::array<int, 3>>& faces,
                 const Camera& camera, int buffer_width, int buffer_height,
                 const std::vector<Vec3>* vertex_colors) {
  BN_CHECK(buffer_width > 0 && buffer_height > 0, "rasterize: bad buffer size");
  if (vertex_colors)
    BN_CHECK(vertex_colors->size() == vertices.size(),
             "rasterize: color count mismatch");
  Raster out;
  out.width = buffer_width;
  out.height = buffer_height;
  out.scale_u = static_cast<double>(buffer_width) / camera.width;
  out.scale_v = static_cast<double>(buffer_height) / camera.height;
  out.depth.assign(static_cast<size_t>(buffer_width) * buffer_height, kInf);
  if (vertex_colors)
    out.color.assign(out.depth.size() * 3, 0.0);

  // Buffer-space projections and inverse depths.
  std::vector<Projection> proj(vertices.size());
  for (size_t i = 0; i < vertices.size(); ++i) {
    proj[i] = project(vertices[i], camera);
    proj[i].u *= out.scale_u;
    proj[i].v *= out.scale_v;
  }

  for (const auto& f : faces) {
    const Projection& a = proj[f[0]];
    const Projection& b = proj[f[1]];
    const Projection& c = proj[f[2]];
    // Triangles touching the camera plane are dropped rather than clipped;
    // bodies sit well inside the frustum in this pipeline.
    if (!a.ok || !b.ok || !c.ok) continue;

    const double area =
        (b.u - a.u) * (c.v - a.v) - (b.v - a.v) * (c.u - a.u);
    if (area == 0.0) continue;

    const int x0 = std::max(0, static_cast<int>(std::floor(std::min({a.u, b.u, c.u}))));
    const int x1 = std::min(buffer_width - 1, static_cast<int>(std::ceil(std::max({a.u, b.u, c.u}))));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min({a.v, b.v, c.v}))));
    const int y1 = std::min(buffer_height - 1, static_cast<int>(std::ceil(std::max({a.v, b.v, c.v}))));

    const double iza = 1.0 / a.depth, izb = 1.0 / b.depth, izc = 1.0 / c.depth;
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double px = x + 0.5, py = y + 0.5;
        double w0 = (b.u - a.u) * (py - a.v) - (b.v - a.v) * (px - a.u);
        double w1 = (c.u - b.u) * (py - b.v) - (c.v - b.v) * (px - b.u);
        double w2 = (a.u - c.u) * (py - c.v) - (a.v - c.v) * (px - c.u);
        if (area < 0.0) {
          w0 = -w0;
          w1 = -w1;
          w2 = -w2;
        }
        if (w0 < 0.0 || w1 < 0.0 || w2 < 0.0) continue;
        const double wsum = w0 + w1 + w2;
        if (wsum <= 0.0) continue;
        // Screen barycentrics interpolate 1/z exactly under perspective.
        const double b0 = w1 / wsum, b1 = w2 / wsum, b2 = w0 / wsum;
        const double iz = b0 * iza + b1 * izb + b2 * izc;
        const double z = 1.0 / iz;
        const size_t pix = static_cast<size_t>(y) * buffer_width + x;
        if (z >= out.depth[pix]) continue;
        out.depth[pix] = z;
        if (vertex_colors) {
          const Vec3& ca = (*vertex_colors)[f[0]];
          const Vec3& cb = (*vertex_colors)[f[1]];
          const Vec3& cc = (*vertex_colors)[f[2]];
          const Vec3 col =
              (b0 * iza * ca + b1 * izb * cb + b2 * izc * cc) * z;
          out.color[pix * 3 + 0] = col.x();
          out.color[pix * 3 + 1] = col.y();
          out.color[pix * 3 + 2] = col.z();
        }
      }
  }
  return out;
}

std::vector<bool> rasterize_visibility(
    const std::vector<Vec3>& vertices,
    const std::vector<std::array<int, 3>>& faces, const Camera& camera,
    const VisibilityOptions& options) {
  BN_CHECK(!vertices.empty(), "rasterize_visibility: empty mesh");
  const double aspect =
      static_cast<double>(camera.height) / static_cast<double>(camera.width);
  int bw, bh;
  if (aspect <= 1.0) {
    bw = options.resolution;
    bh = std::max(1, static_cast<int>(std::lround(options.resolution * aspect)));
  } else {
    bh = options.resolution;
    bw = std::max(1, static_cast<int>(std::lround(options.resolution / aspect)));
  }
  Raster raster = rasterize(vertices, faces, camera, bw, bh);

  // Splat each vertex into the buffer. A silhouette vertex then competes
  // with at worst its own depth, which removes grazing-angle false
  // negatives without hiding real occluders.
  for (const auto& v : vertices) {
    const Projection p = project(v, camera);
    if (!p.ok) continue;
    const int x = static_cast<int>(p.u * raster.scale_u);
    const int y = static_cast<int>(p.v * raster.scale_v);
    if (x < 0 || x >= raster.width || y < 0 || y >= raster.height) continue;
    double& z = raster.depth[static_cast<size_t>(y) * raster.width + x];
    z = std::min(z, p.depth);
  }

  Vec3 lo = vertices[0], hi = vertices[0];
  for (const auto& v : vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  const double bias = options.depth_bias_scale * (hi - lo).norm();

  std::vector<bool> visible(vertices.size(), false);
  for (size_t i = 0; i < vertices.size(); ++i) {
    const Projection p = project(vertices[i], camera);
    if (!p.ok) continue;
    if (p.u < 0.0 || p.u >= camera.width || p.v < 0.0 || p.v >= camera.height)
      continue;
    visible[i] = p.depth <= raster.max_depth_around(p.u, p.v) + bias;
  }
  return visible;
}

}  // namespace bodynerf
