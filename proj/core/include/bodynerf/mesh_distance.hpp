#pragma once

#include <array>
#include <vector>

#include "bodynerf/body.hpp"

namespace bodynerf {

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b,
                               const Vec3& c);
double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b,
                               const Vec3& c);

/// AABB tree over triangles answering exact unsigned point-to-mesh distance.
class MeshDistanceIndex {
 public:
  MeshDistanceIndex(const std::vector<Vec3>& vertices,
                    const std::vector<std::array<int, 3>>& faces);

  double distance(const Vec3& p) const;

 private:
  struct Node {
    Vec3 lo, hi;
    int left = -1, right = -1;
    int begin = 0, end = 0;  // triangle range for leaves
  };
  struct Tri {
    Vec3 a, b, c;
  };

  int build(int begin, int end, std::vector<Vec3>& centroids,
            std::vector<int>& order);
  double query(int node, const Vec3& p, double best) const;

  std::vector<Tri> tris_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

/// Unsigned distance to a mesh surface sampled at voxel centers.
struct DistanceGrid {
  Vec3 origin;        // low corner of the covered box
  double voxel_size = 0;
  int nx = 0, ny = 0, nz = 0;
  std::vector<double> values;  // (z,y,x) order

  double at(int ix, int iy, int iz) const {
    return values[(static_cast<size_t>(iz) * ny + iy) * nx + ix];
  }
  Vec3 voxel_center(int ix, int iy, int iz) const {
    return origin + voxel_size * Vec3(ix + 0.5, iy + 0.5, iz + 0.5);
  }
  Vec3 box_lo() const { return origin; }
  Vec3 box_hi() const {
    return origin + voxel_size * Vec3(nx, ny, nz);
  }
  bool contains(const Vec3& p) const;
};

/// Exact point-to-mesh distance at every voxel center of the box
/// [bbox_lo, bbox_hi] gridded at voxel_size.
DistanceGrid build_distance_grid(const std::vector<Vec3>& vertices,
                                 const std::vector<std::array<int, 3>>& faces,
                                 const Vec3& bbox_lo, const Vec3& bbox_hi,
                                 double voxel_size);

struct DistanceQueryResult {
  double distance = 0;
  bool out_of_grid = false;
};

/// Trilinear interpolation over the voxel-center lattice; points outside the
/// box are clamped and flagged.
DistanceQueryResult query_distance(const DistanceGrid& grid, const Vec3& p);

}  // namespace bodynerf
