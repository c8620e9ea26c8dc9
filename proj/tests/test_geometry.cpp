#include <cmath>

#include "bodynerf/body.hpp"
#include "bodynerf/camera.hpp"
#include "bodynerf/mesh_distance.hpp"
#include "bodynerf/rasterizer.hpp"
#include "bodynerf/rng.hpp"
#include "bodynerf/sampler.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace bodynerf;

namespace {

Camera test_camera(int size = 128) {
  return Camera::look_at(Vec3(0, -2.5, 0.9), Vec3(0, 0, 0.9), Vec3(0, 0, 1),
                         1.1 * size, size, size, 0);
}

Pose humanoid_pose(const BodyTemplate& t, Rng& rng, double scale = 0.4) {
  Pose p;
  p.joint_rotations.resize(t.joint_count());
  for (auto& aa : p.joint_rotations)
    aa = Vec3(rng.normal(), rng.normal(), rng.normal()) * scale;
  p.root_translation = Vec3::Zero();
  return p;
}

// Axis-aligned unit cube mesh centered at the origin.
void unit_cube(std::vector<Vec3>& verts, std::vector<std::array<int, 3>>& faces) {
  verts.clear();
  for (int i = 0; i < 8; ++i)
    verts.emplace_back((i & 1 ? 0.5 : -0.5), (i & 2 ? 0.5 : -0.5),
                       (i & 4 ? 0.5 : -0.5));
  faces = {{0, 1, 3}, {0, 3, 2}, {4, 6, 7}, {4, 7, 5}, {0, 4, 5}, {0, 5, 1},
           {2, 3, 7}, {2, 7, 6}, {0, 2, 6}, {0, 6, 4}, {1, 5, 7}, {1, 7, 3}};
}

}  // namespace

TEST_CASE("projection of the optical axis point hits the principal point") {
  Camera cam = test_camera();
  const Vec3 p = cam.center() + cam.rotation.transpose() * Vec3(0, 0, 1.0);
  const Projection pr = project(p, cam);
  REQUIRE(pr.ok);
  CHECK(pr.u == doctest::Approx(cam.cx).epsilon(1e-12));
  CHECK(pr.v == doctest::Approx(cam.cy).epsilon(1e-12));
  CHECK(pr.depth == doctest::Approx(1.0));
}

TEST_CASE("points behind the camera are unprojectable") {
  Camera cam = test_camera();
  const Vec3 p = cam.center() - cam.rotation.transpose() * Vec3(0, 0, 1.0);
  CHECK_FALSE(project(p, cam).ok);
}

TEST_CASE("projection round-trips through the analytic inverse") {
  Camera cam = test_camera();
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const Vec3 p(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0, 2));
    const Projection pr = project(p, cam);
    if (!pr.ok) continue;
    // Invert: unproject (u,v,depth) back to world space.
    const Vec3 cam_pt(pr.depth * (pr.u - cam.cx) / cam.fx,
                      pr.depth * (pr.v - cam.cy) / cam.fy, pr.depth);
    const Vec3 back = cam.rotation.transpose() * (cam_pt - cam.translation);
    CHECK((back - p).norm() <= 1e-9);
  }
}

TEST_CASE("single front-facing triangle is fully visible") {
  Camera cam = test_camera();
  const std::vector<Vec3> verts = {{-0.3, 0, 0.7}, {0.3, 0, 0.7}, {0, 0, 1.3}};
  const std::vector<std::array<int, 3>> faces = {{0, 1, 2}};
  const auto vis = rasterize_visibility(verts, faces, cam);
  CHECK(vis == std::vector<bool>{true, true, true});
}

TEST_CASE("rear parallel triangle is occluded") {
  Camera cam = test_camera();
  // Front triangle strictly covers the rear one from this camera.
  std::vector<Vec3> verts = {{-0.6, 0, 0.3},  {0.6, 0, 0.3},  {0, 0, 1.6},
                             {-0.15, 1.0, 0.75}, {0.15, 1.0, 0.75}, {0, 1.0, 1.05}};
  std::vector<std::array<int, 3>> faces = {{0, 1, 2}, {3, 4, 5}};
  const auto vis = rasterize_visibility(verts, faces, cam);
  CHECK(vis[0]);
  CHECK(vis[1]);
  CHECK(vis[2]);
  CHECK_FALSE(vis[3]);
  CHECK_FALSE(vis[4]);
  CHECK_FALSE(vis[5]);
}

TEST_CASE("fully occluded mesh reports all false, not an error") {
  Camera cam = test_camera();
  std::vector<Vec3> verts = {{-2, 0.5, -1}, {2, 0.5, -1}, {0, 0.5, 3},
                             {-0.1, 1.5, 0.8}, {0.1, 1.5, 0.8}, {0, 1.5, 1.0}};
  std::vector<std::array<int, 3>> faces = {{0, 1, 2}, {3, 4, 5}};
  const auto vis = rasterize_visibility(verts, faces, cam);
  CHECK_FALSE(vis[3]);
  CHECK_FALSE(vis[4]);
  CHECK_FALSE(vis[5]);
}

TEST_CASE("humanoid visibility agrees >=98% with the ray-cast oracle") {
  Rng rng(17);
  double total = 0, agree = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const BodyTemplate t = generate_humanoid(100 + trial);
    const Pose pose = humanoid_pose(t, rng);
    const auto posed = pose_mesh(t, forward_kinematics(t, pose));

    const double az = rng.uniform(0, 2 * M_PI);
    const Camera cam = Camera::look_at(
        Vec3(2.4 * std::sin(az), -2.4 * std::cos(az), rng.uniform(0.4, 1.4)),
        Vec3(0, 0, 0.85), Vec3(0, 0, 1), 140, 128, 128, 0);

    const auto vis = rasterize_visibility(posed, t.faces, cam);
    const auto oracle = oracles::raycast_visibility(posed, t.faces, cam);
    for (size_t v = 0; v < vis.size(); ++v) {
      total += 1;
      if (vis[v] == oracle[v]) agree += 1;
    }
  }
  CHECK(agree / total >= 0.98);
}

TEST_CASE("icosphere visibility matches the oracle exactly") {
  std::vector<Vec3> verts;
  std::vector<std::array<int, 3>> faces;
  oracles::icosphere(2, verts, faces);
  const Camera cam = Camera::look_at(Vec3(0, -3, 0), Vec3(0, 0, 0),
                                     Vec3(0, 0, 1), 150, 128, 128, 0);
  VisibilityOptions opt;
  opt.resolution = 512;  // convex: no self-occlusion subtleties, fine raster
  const auto vis = rasterize_visibility(verts, faces, cam, opt);
  const auto oracle = oracles::raycast_visibility(verts, faces, cam);
  int mismatches = 0;
  for (size_t v = 0; v < vis.size(); ++v)
    if (vis[v] != oracle[v]) ++mismatches;
  CHECK(mismatches == 0);
}

TEST_CASE("distance grid: voxel centered on a vertex reads zero") {
  std::vector<Vec3> verts;
  std::vector<std::array<int, 3>> faces;
  unit_cube(verts, faces);
  // Voxel size 0.5 over [-1,1]^3 puts voxel centers at +-0.25, +-0.75;
  // shift the box so one center lands exactly on the (0.5,0.5,0.5) vertex.
  const Vec3 lo(-0.75, -0.75, -0.75);
  const DistanceGrid g = build_distance_grid(verts, faces, lo,
                                             lo + Vec3(2, 2, 2), 0.5);
  const Vec3 c = g.voxel_center(2, 2, 2);
  REQUIRE((c - Vec3(0.5, 0.5, 0.5)).norm() <= 1e-12);
  CHECK(g.at(2, 2, 2) == doctest::Approx(0.0));
}

TEST_CASE("distance grid: unit cube center reads 0.5") {
  std::vector<Vec3> verts;
  std::vector<std::array<int, 3>> faces;
  unit_cube(verts, faces);
  const DistanceGrid g = build_distance_grid(verts, faces, Vec3(-1, -1, -1),
                                             Vec3(1, 1, 1), 0.25);
  // Center voxel (4,4,4) has center (0.125,...)? Voxels span [-1,1] at 0.25:
  // center i has coordinate -1 + (i+0.5)*0.25; i=3 -> -0.125, i=4 -> 0.125.
  // Query the exact center through interpolation instead.
  const auto q = query_distance(g, Vec3(0, 0, 0));
  CHECK_FALSE(q.out_of_grid);
  CHECK(q.distance == doctest::Approx(0.5).epsilon(0.02));
  // And exactly at a voxel center, against the analytic value.
  const Vec3 c = g.voxel_center(4, 4, 4);
  const double expect = 0.5 - std::max({std::abs(c.x()), std::abs(c.y()),
                                        std::abs(c.z())});
  CHECK(g.at(4, 4, 4) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("distance grid matches the exhaustive oracle exactly") {
  const BodyTemplate t = generate_humanoid(3);
  const DistanceGrid g = build_distance_grid(
      t.vertices, t.faces, Vec3(-0.5, -0.4, -0.1), Vec3(0.5, 0.4, 1.9), 0.08);
  Rng rng(23);
  for (int i = 0; i < 200; ++i) {
    const int x = static_cast<int>(rng.uniform_index(g.nx));
    const int y = static_cast<int>(rng.uniform_index(g.ny));
    const int z = static_cast<int>(rng.uniform_index(g.nz));
    const double oracle = oracles::brute_force_mesh_distance(
        g.voxel_center(x, y, z), t.vertices, t.faces);
    CHECK(g.at(x, y, z) == doctest::Approx(oracle).epsilon(1e-12));
  }
}

TEST_CASE("distance grid obeys the Lipschitz bound between neighbors") {
  const BodyTemplate t = generate_humanoid(4);
  const DistanceGrid g = build_distance_grid(
      t.vertices, t.faces, Vec3(-0.5, -0.4, -0.1), Vec3(0.5, 0.4, 1.9), 0.1);
  const double bound = g.voxel_size * std::sqrt(3.0) + 1e-12;
  for (int z = 0; z < g.nz; ++z)
    for (int y = 0; y < g.ny; ++y)
      for (int x = 0; x < g.nx; ++x) {
        if (x + 1 < g.nx)
          CHECK(std::abs(g.at(x, y, z) - g.at(x + 1, y, z)) <= bound);
        if (y + 1 < g.ny)
          CHECK(std::abs(g.at(x, y, z) - g.at(x, y + 1, z)) <= bound);
        if (z + 1 < g.nz)
          CHECK(std::abs(g.at(x, y, z) - g.at(x, y, z + 1)) <= bound);
      }
}

TEST_CASE("interpolated distance stays within the Lipschitz error bound") {
  const BodyTemplate t = generate_humanoid(8);
  const DistanceGrid g = build_distance_grid(
      t.vertices, t.faces, Vec3(-0.5, -0.4, -0.1), Vec3(0.5, 0.4, 1.9), 0.06);
  Rng rng(29);
  for (int i = 0; i < 300; ++i) {
    const Vec3 p(rng.uniform(-0.45, 0.45), rng.uniform(-0.35, 0.35),
                 rng.uniform(-0.05, 1.85));
    const auto q = query_distance(g, p);
    const double exact =
        oracles::brute_force_mesh_distance(p, t.vertices, t.faces);
    CHECK(std::abs(q.distance - exact) <= g.voxel_size * std::sqrt(3.0));
  }
}

TEST_CASE("queries at voxel centers return stored values exactly") {
  const BodyTemplate t = generate_humanoid(8);
  const DistanceGrid g = build_distance_grid(
      t.vertices, t.faces, Vec3(-0.4, -0.3, 0.1), Vec3(0.4, 0.3, 1.7), 0.1);
  const auto q = query_distance(g, g.voxel_center(2, 3, 4));
  CHECK_FALSE(q.out_of_grid);
  CHECK(q.distance == doctest::Approx(g.at(2, 3, 4)).epsilon(1e-12));
}

TEST_CASE("out-of-grid queries clamp and set the flag") {
  const BodyTemplate t = generate_humanoid(8);
  const DistanceGrid g = build_distance_grid(
      t.vertices, t.faces, Vec3(-0.4, -0.3, 0.1), Vec3(0.4, 0.3, 1.7), 0.1);
  const auto q = query_distance(g, Vec3(5, 5, 5));
  CHECK(q.out_of_grid);
  CHECK(std::isfinite(q.distance));
}

TEST_CASE("empty mesh is fatal for grid construction") {
  std::vector<Vec3> verts = {{0, 0, 0}};
  std::vector<std::array<int, 3>> faces;
  CHECK_THROWS_AS(
      build_distance_grid(verts, faces, Vec3(-1, -1, -1), Vec3(1, 1, 1), 0.5),
      Error);
}

TEST_CASE("ray through the principal point follows the optical axis") {
  Camera cam = test_camera();
  const Ray r = generate_ray(cam, cam.cx, cam.cy);
  const Vec3 axis = cam.rotation.transpose() * Vec3(0, 0, 1);
  CHECK((r.direction - axis).norm() <= 1e-12);
  CHECK((r.origin - cam.center()).norm() <= 1e-12);
}

TEST_CASE("rays have unit directions and reproject onto their pixel") {
  Camera cam = test_camera();
  Rng rng(31);
  std::vector<std::pair<double, double>> pixels;
  for (int i = 0; i < 100; ++i)
    pixels.emplace_back(rng.uniform(0, cam.width), rng.uniform(0, cam.height));
  const auto rays = generate_rays(cam, pixels);
  for (size_t i = 0; i < rays.size(); ++i) {
    CHECK(std::abs(rays[i].direction.norm() - 1.0) <= 1e-12);
    const Projection pr =
        project(rays[i].origin + 1.7 * rays[i].direction, cam);
    REQUIRE(pr.ok);
    CHECK(std::abs(pr.u - pixels[i].first) <= 1e-6);
    CHECK(std::abs(pr.v - pixels[i].second) <= 1e-6);
  }
}

TEST_CASE("rays that miss the body produce no samples") {
  const BodyTemplate t = generate_humanoid(12);
  const DistanceGrid g = build_distance_grid(
      t.vertices, t.faces, Vec3(-0.5, -0.4, -0.1), Vec3(0.5, 0.4, 1.9), 0.02);
  Ray miss;
  miss.origin = Vec3(5, 5, 5);
  miss.direction = Vec3(1, 0, 0);
  SamplerOptions opt;
  opt.threshold = 0.05;
  opt.n_samples = 16;
  CHECK(surface_guided_sample(miss, g, opt, nullptr).empty());
}

TEST_CASE("every sample lies within threshold of the true surface") {
  const BodyTemplate t = generate_humanoid(12);
  const double voxel = 0.02, threshold = 0.05;
  const DistanceGrid g = build_distance_grid(
      t.vertices, t.faces, Vec3(-0.5, -0.4, -0.2), Vec3(0.5, 0.4, 1.95), voxel);
  const Camera cam = test_camera();
  Rng rng(37);
  SamplerOptions opt;
  opt.threshold = threshold;
  opt.n_samples = 12;
  const double bound = threshold + voxel * std::sqrt(3.0);
  int sampled_rays = 0;
  for (int i = 0; i < 150; ++i) {
    const Ray ray = generate_ray(cam, rng.uniform(0, cam.width),
                                 rng.uniform(0, cam.height));
    const auto samples = surface_guided_sample(ray, g, opt, &rng);
    if (!samples.empty()) ++sampled_rays;
    double prev = -1e300;
    for (const auto& s : samples) {
      CHECK(s.t > prev);  // strictly increasing depth
      prev = s.t;
      const Vec3 p = ray.origin + s.t * ray.direction;
      const double exact =
          oracles::brute_force_mesh_distance(p, t.vertices, t.faces);
      CHECK(exact <= bound);
    }
  }
  CHECK(sampled_rays > 10);  // the camera does see the body
}

TEST_CASE("sphere chord length matches the analytic band width") {
  std::vector<Vec3> verts;
  std::vector<std::array<int, 3>> faces;
  oracles::icosphere(3, verts, faces);  // radius 1
  const double voxel = 0.04, threshold = 1.2;  // threshold > radius
  const DistanceGrid g = build_distance_grid(
      verts, faces, Vec3::Constant(-2.4), Vec3::Constant(2.4), voxel);

  Ray ray;
  ray.origin = Vec3(-2.4, 0, 0);
  ray.direction = Vec3(1, 0, 0);
  SamplerOptions opt;
  opt.threshold = threshold;
  opt.n_samples = 64;
  const auto samples = surface_guided_sample(ray, g, opt, nullptr);
  REQUIRE(!samples.empty());

  // With threshold >= radius the band along a center ray is one interval of
  // length 2*(R + threshold), clipped by the grid box.
  const double march_step = voxel * opt.march_step_factor;
  const double lo = std::max(ray.origin.x() + 0.0, -(1.0 + threshold));
  const double hi = std::min(2.4, 1.0 + threshold);
  const double expected = hi - std::max(lo, -2.4);
  const double measured =
      (samples.back().t - samples.front().t) +
      expected / opt.n_samples;  // stratification trims half a stratum per end
  CHECK(std::abs(measured - expected) <= 2 * march_step + expected / opt.n_samples);
}

TEST_CASE("samples of one ray are strictly increasing in depth") {
  const BodyTemplate t = generate_humanoid(12);
  const DistanceGrid g = build_distance_grid(
      t.vertices, t.faces, Vec3(-0.5, -0.4, -0.2), Vec3(0.5, 0.4, 1.95), 0.02);
  Ray ray;
  ray.origin = Vec3(0, -2.0, 0.9);
  ray.direction = Vec3(0, 1, 0);
  SamplerOptions opt;
  opt.threshold = 0.05;
  opt.n_samples = 48;
  Rng rng(41);
  const auto samples = surface_guided_sample(ray, g, opt, &rng);
  REQUIRE(samples.size() == 48);
  for (size_t i = 1; i < samples.size(); ++i)
    CHECK(samples[i].t > samples[i - 1].t);
  for (size_t i = 0; i + 1 < samples.size(); ++i)
    CHECK(samples[i].delta ==
          doctest::Approx(samples[i + 1].t - samples[i].t));
}
