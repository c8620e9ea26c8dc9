#include "bodynerf/mesh_distance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace bodynerf {

// Ericson, "Real-Time Collision Detection", closest point on triangle.
Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b,
                               const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;

  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return b;

  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + (d1 / (d1 - d3)) * ab;

  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return c;

  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + (d2 / (d2 - d6)) * ac;

  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0)
    return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);

  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

double point_triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b,
                               const Vec3& c) {
  return (p - closest_point_on_triangle(p, a, b, c)).norm();
}

namespace {
double box_distance(const Vec3& p, const Vec3& lo, const Vec3& hi) {
  const Vec3 d = (lo - p).cwiseMax(p - hi).cwiseMax(Vec3::Zero());
  return d.norm();
}
}  // namespace

MeshDistanceIndex::MeshDistanceIndex(
    const std::vector<Vec3>& vertices,
    const std::vector<std::array<int, 3>>& faces) {
  BN_CHECK(!faces.empty(), "MeshDistanceIndex: empty mesh");
  tris_.reserve(faces.size());
  std::vector<Vec3> centroids;
  centroids.reserve(faces.size());
  for (const auto& f : faces) {
    Tri t{vertices[f[0]], vertices[f[1]], vertices[f[2]]};
    centroids.push_back((t.a + t.b + t.c) / 3.0);
    tris_.push_back(t);
  }
  std::vector<int> order(tris_.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  root_ = build(0, static_cast<int>(tris_.size()), centroids, order);
  std::vector<Tri> reordered(tris_.size());
  for (size_t i = 0; i < order.size(); ++i) reordered[i] = tris_[order[i]];
  tris_ = std::move(reordered);
}

int MeshDistanceIndex::build(int begin, int end, std::vector<Vec3>& centroids,
                             std::vector<int>& order) {
  Node node;
  node.lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  node.hi = -node.lo;
  for (int i = begin; i < end; ++i) {
    const Tri& t = tris_[order[i]];
    node.lo = node.lo.cwiseMin(t.a).cwiseMin(t.b).cwiseMin(t.c);
    node.hi = node.hi.cwiseMax(t.a).cwiseMax(t.b).cwiseMax(t.c);
  }
  const int idx = static_cast<int>(nodes_.size());
  nodes_.push_back(node);
  if (end - begin <= 4) {
    nodes_[idx].begin = begin;
    nodes_[idx].end = end;
    return idx;
  }
  const Vec3 ext = node.hi - node.lo;
  int axis = 0;
  if (ext.y() > ext.x()) axis = 1;
  if (ext.z() > ext[axis]) axis = 2;
  const int mid = (begin + end) / 2;
  std::nth_element(order.begin() + begin, order.begin() + mid,
                   order.begin() + end, [&](int a, int b) {
                     return centroids[a][axis] < centroids[b][axis];
                   });
  const int left = build(begin, mid, centroids, order);
  const int right = build(mid, end, centroids, order);
  nodes_[idx].left = left;
  nodes_[idx].right = right;
  return idx;
}

double MeshDistanceIndex::query(int ni, const Vec3& p, double best) const {
  const Node& n = nodes_[ni];
  if (n.left < 0) {
    for (int i = n.begin; i < n.end; ++i) {
      const Tri& t = tris_[i];
      best = std::min(best, point_triangle_distance(p, t.a, t.b, t.c));
    }
    return best;
  }
  const double dl = box_distance(p, nodes_[n.left].lo, nodes_[n.left].hi);
  const double dr = box_distance(p, nodes_[n.right].lo, nodes_[n.right].hi);
  const int first = dl <= dr ? n.left : n.right;
  const int second = dl <= dr ? n.right : n.left;
  const double dfirst = std::min(dl, dr), dsecond = std::max(dl, dr);
  if (dfirst < best) best = query(first, p, best);
  if (dsecond < best) best = query(second, p, best);
  return best;
}

double MeshDistanceIndex::distance(const Vec3& p) const {
  return query(root_, p, std::numeric_limits<double>::infinity());
}

bool DistanceGrid::contains(const Vec3& p) const {
  const Vec3 lo = box_lo(), hi = box_hi();
  return p.x() >= lo.x() && p.y() >= lo.y() && p.z() >= lo.z() &&
         p.x() <= hi.x() && p.y() <= hi.y() && p.z() <= hi.z();
}

DistanceGrid build_distance_grid(const std::vector<Vec3>& vertices,
                                 const std::vector<std::array<int, 3>>& faces,
                                 const Vec3& bbox_lo, const Vec3& bbox_hi,
                                 double voxel_size) {
  BN_CHECK(!faces.empty(), "build_distance_grid: empty mesh");
  BN_CHECK(voxel_size > 0.0, "build_distance_grid: voxel size must be > 0");
  BN_CHECK((bbox_hi - bbox_lo).minCoeff() > 0.0,
           "build_distance_grid: degenerate bounding box");

  DistanceGrid g;
  g.origin = bbox_lo;
  g.voxel_size = voxel_size;
  g.nx = std::max(1, static_cast<int>(std::ceil((bbox_hi.x() - bbox_lo.x()) / voxel_size)));
  g.ny = std::max(1, static_cast<int>(std::ceil((bbox_hi.y() - bbox_lo.y()) / voxel_size)));
  g.nz = std::max(1, static_cast<int>(std::ceil((bbox_hi.z() - bbox_lo.z()) / voxel_size)));
  g.values.resize(static_cast<size_t>(g.nx) * g.ny * g.nz);

  const MeshDistanceIndex index(vertices, faces);
  size_t i = 0;
  for (int z = 0; z < g.nz; ++z)
    for (int y = 0; y < g.ny; ++y)
      for (int x = 0; x < g.nx; ++x, ++i)
        g.values[i] = index.distance(g.voxel_center(x, y, z));
  return g;
}

DistanceQueryResult query_distance(const DistanceGrid& grid, const Vec3& p) {
  DistanceQueryResult out;
  out.out_of_grid = !grid.contains(p);
  // Continuous coordinates over the voxel-center lattice.
  const Vec3 c = (p - grid.origin) / grid.voxel_size - Vec3(0.5, 0.5, 0.5);
  auto axis = [](double v, int n, int& lo, double& f) {
    const double cl = std::clamp(v, 0.0, static_cast<double>(n - 1));
    lo = n == 1 ? 0 : std::min(static_cast<int>(std::floor(cl)), n - 2);
    f = n == 1 ? 0.0 : cl - lo;
  };
  int x0, y0, z0;
  double fx, fy, fz;
  axis(c.x(), grid.nx, x0, fx);
  axis(c.y(), grid.ny, y0, fy);
  axis(c.z(), grid.nz, z0, fz);
  const int x1 = std::min(x0 + 1, grid.nx - 1);
  const int y1 = std::min(y0 + 1, grid.ny - 1);
  const int z1 = std::min(z0 + 1, grid.nz - 1);
  const double v000 = grid.at(x0, y0, z0), v100 = grid.at(x1, y0, z0);
  const double v010 = grid.at(x0, y1, z0), v110 = grid.at(x1, y1, z0);
  const double v001 = grid.at(x0, y0, z1), v101 = grid.at(x1, y0, z1);
  const double v011 = grid.at(x0, y1, z1), v111 = grid.at(x1, y1, z1);
  const double c00 = v000 * (1 - fx) + v100 * fx;
  const double c10 = v010 * (1 - fx) + v110 * fx;
  const double c01 = v001 * (1 - fx) + v101 * fx;
  const double c11 = v011 * (1 - fx) + v111 * fx;
  const double c0 = c00 * (1 - fy) + c10 * fy;
  const double c1 = c01 * (1 - fy) + c11 * fy;
  out.distance = c0 * (1 - fz) + c1 * fz;
  return out;
}

}  // namespace bodynerf
