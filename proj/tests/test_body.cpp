#include <cmath>
#include <cstdio>
#include <map>

#include "bodynerf/body.hpp"
#include "bodynerf/rng.hpp"
#include "bodynerf/textio.hpp"
#include "doctest.h"

using namespace bodynerf;

namespace {

Pose zero_pose(const BodyTemplate& t) {
  Pose p;
  p.joint_rotations.assign(t.joint_count(), Vec3::Zero());
  return p;
}

Pose random_pose(const BodyTemplate& t, Rng& rng, double scale = 0.6) {
  Pose p = zero_pose(t);
  for (auto& aa : p.joint_rotations)
    aa = Vec3(rng.normal(), rng.normal(), rng.normal()) * scale;
  p.root_translation = Vec3(rng.normal(), rng.normal(), rng.normal()) * 0.2;
  return p;
}

// Every directed edge must appear exactly once and its reverse exactly once.
bool watertight(const BodyTemplate& t) {
  std::map<std::pair<int, int>, int> directed;
  for (const auto& f : t.faces)
    for (int k = 0; k < 3; ++k) {
      const int a = f[k], b = f[(k + 1) % 3];
      if (++directed[{a, b}] > 1) return false;
    }
  for (const auto& [edge, count] : directed) {
    auto rev = directed.find({edge.second, edge.first});
    if (rev == directed.end() || rev->second != 1) return false;
  }
  return true;
}

// Three-joint chain along x with unit spacing.
BodyTemplate chain3() {
  BodyTemplate t;
  t.joints = {{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
  t.parent = {-1, 0, 1};
  t.vertices = {{0.5, 0, 0}, {1.5, 0, 0}, {2.5, 0, 0}};
  t.faces = {{0, 1, 2}};
  t.blend_weights = {1, 0, 0, 0, 1, 0, 0, 0, 1};
  t.validate();
  return t;
}

}  // namespace

TEST_CASE("zero pose yields identity transforms") {
  const BodyTemplate t = generate_humanoid(5);
  const PartTransforms pt = forward_kinematics(t, zero_pose(t));
  for (std::int64_t j = 0; j < t.joint_count(); ++j)
    CHECK((pt[j] - Mat4::Identity()).norm() == doctest::Approx(0.0));
}

TEST_CASE("root rotation reaches every part transform") {
  const BodyTemplate t = generate_humanoid(5);
  Pose p = zero_pose(t);
  p.joint_rotations[0] = Vec3(0.3, -0.5, 0.9);
  const Mat3 r = rodrigues(p.joint_rotations[0]);
  const PartTransforms pt = forward_kinematics(t, p);
  for (std::int64_t j = 0; j < t.joint_count(); ++j)
    CHECK((Mat3(pt[j].topLeftCorner<3, 3>()) - r).norm() <= 1e-12);
}

TEST_CASE("90-degree middle joint matches hand-composed matrices") {
  const BodyTemplate t = chain3();
  Pose p = zero_pose(t);
  p.joint_rotations[1] = Vec3(0, 0, M_PI / 2);  // about z at joint (1,0,0)

  const PartTransforms pt = forward_kinematics(t, p);

  Mat3 r;
  r << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  Mat4 expect = Mat4::Identity();
  expect.topLeftCorner<3, 3>() = r;
  expect.topRightCorner<3, 1>() = Vec3(1, 0, 0) - r * Vec3(1, 0, 0);
  CHECK((pt[1] - expect).norm() <= 1e-12);
  CHECK((pt[2] - expect).norm() <= 1e-12);  // leaf inherits, own rotation id

  const Vec3 leaf = pt[2].topLeftCorner<3, 3>() * t.joints[2] +
                    pt[2].topRightCorner<3, 1>();
  CHECK((leaf - Vec3(1, 1, 0)).norm() <= 1e-12);
}

TEST_CASE("forward kinematics rejects joint count mismatch") {
  const BodyTemplate t = generate_humanoid(5);
  Pose p;
  p.joint_rotations.assign(3, Vec3::Zero());
  CHECK_THROWS_AS(forward_kinematics(t, p), Error);
}

TEST_CASE("identity transforms pose the mesh onto itself exactly") {
  const BodyTemplate t = generate_humanoid(6);
  const PartTransforms pt = forward_kinematics(t, zero_pose(t));
  const auto posed = pose_mesh(t, pt);
  for (std::int64_t v = 0; v < t.vertex_count(); ++v)
    CHECK((posed[v] - t.vertices[v]).norm() == doctest::Approx(0.0));
}

TEST_CASE("one-hot weight rows follow their part transform exactly") {
  const BodyTemplate t = chain3();
  Rng rng(11);
  const Pose p = random_pose(t, rng);
  const PartTransforms pt = forward_kinematics(t, p);
  const auto posed = pose_mesh(t, pt);
  for (int v = 0; v < 3; ++v) {
    const Vec3 expect = pt[v].topLeftCorner<3, 3>() * t.vertices[v] +
                        pt[v].topRightCorner<3, 1>();
    CHECK((posed[v] - expect).norm() <= 1e-12);
  }
}

TEST_CASE("half-half weights land at the midpoint of the rigid images") {
  BodyTemplate t;
  t.joints = {{0, 0, 0}, {1, 0, 0}};
  t.parent = {-1, 0};
  t.vertices = {{0.5, 0.2, 0}};
  t.faces = {{0, 0, 0}};
  t.blend_weights = {0.5, 0.5};
  t.validate();

  Pose p = zero_pose(t);
  p.joint_rotations[1] = Vec3(0, 0, 1.1);
  const PartTransforms pt = forward_kinematics(t, p);

  const Vec3 img0 = pt[0].topLeftCorner<3, 3>() * t.vertices[0] +
                    pt[0].topRightCorner<3, 1>();
  const Vec3 img1 = pt[1].topLeftCorner<3, 3>() * t.vertices[0] +
                    pt[1].topRightCorner<3, 1>();
  const auto posed = pose_mesh(t, pt);
  CHECK((posed[0] - 0.5 * (img0 + img1)).norm() <= 1e-12);
}

TEST_CASE("LBS commutes with rigid whole-body motion") {
  const BodyTemplate t = generate_humanoid(7);
  Rng rng(13);
  const Pose p = random_pose(t, rng);
  const PartTransforms pt = forward_kinematics(t, p);

  Mat4 g = Mat4::Identity();
  g.topLeftCorner<3, 3>() = rodrigues(Vec3(0.4, 0.2, -0.7));
  g.topRightCorner<3, 1>() = Vec3(0.3, -1.0, 0.25);

  PartTransforms composed;
  for (const auto& m : pt.transforms) composed.transforms.push_back(g * m);

  const auto posed = pose_mesh(t, pt);
  const auto posed_composed = pose_mesh(t, composed);
  for (std::int64_t v = 0; v < t.vertex_count(); ++v) {
    const Vec3 expect =
        g.topLeftCorner<3, 3>() * posed[v] + g.topRightCorner<3, 1>();
    CHECK((posed_composed[v] - expect).norm() <= 1e-9);
  }
}

TEST_CASE("humanoid generation is deterministic per seed") {
  const BodyTemplate a = generate_humanoid(42);
  const BodyTemplate b = generate_humanoid(42);
  const BodyTemplate c = generate_humanoid(43);
  REQUIRE(a.vertices.size() == b.vertices.size());
  bool equal = true;
  for (size_t i = 0; i < a.vertices.size(); ++i)
    if (a.vertices[i] != b.vertices[i]) equal = false;
  CHECK(equal);
  CHECK(a.blend_weights == b.blend_weights);
  bool different = false;
  for (size_t i = 0; i < std::min(a.vertices.size(), c.vertices.size()); ++i)
    if (a.vertices[i] != c.vertices[i]) different = true;
  CHECK(different);
}

TEST_CASE("humanoid blend weight rows sum to one") {
  const BodyTemplate t = generate_humanoid(42);
  const std::int64_t n = t.joint_count();
  CHECK(n == 12);
  CHECK(n >= 5);
  CHECK(n <= 24);
  for (std::int64_t v = 0; v < t.vertex_count(); ++v) {
    double sum = 0.0;
    for (std::int64_t j = 0; j < n; ++j) sum += t.weight_row(v)[j];
    CHECK(std::abs(sum - 1.0) <= 1e-9);
  }
}

TEST_CASE("humanoid mesh is watertight; posing never touches faces") {
  const BodyTemplate t = generate_humanoid(42);
  CHECK(watertight(t));
}

TEST_CASE("30-degree elbow bend moves forearm-dominant vertices rigidly") {
  const BodyTemplate t = generate_humanoid(42);
  const int elbow = 6;  // left forearm joint
  Pose p = zero_pose(t);
  p.joint_rotations[elbow] = Vec3(0, M_PI / 6, 0);
  const PartTransforms pt = forward_kinematics(t, p);
  const auto posed = pose_mesh(t, pt);

  int checked = 0;
  for (std::int64_t v = 0; v < t.vertex_count(); ++v) {
    const double w = t.weight_row(v)[elbow];
    if (w < 0.99) continue;
    ++checked;
    const Vec3 rigid = pt[elbow].topLeftCorner<3, 3>() * t.vertices[v] +
                       pt[elbow].topRightCorner<3, 1>();
    // Residual weight (1-w) rides on parts that stay put here, so the
    // deviation is bounded by (1-w) times the rigid displacement.
    const double bound =
        (1.0 - w) * (rigid - t.vertices[v]).norm() + 1e-12;
    CHECK((posed[v] - rigid).norm() <= bound);
  }
  CHECK(checked > 10);
}

TEST_CASE("degenerate humanoid configs are fatal") {
  HumanoidConfig cfg;
  cfg.height = 0.0;
  CHECK_THROWS_AS(generate_humanoid(1, cfg), Error);
  HumanoidConfig cfg2;
  cfg2.radius = -0.1;
  CHECK_THROWS_AS(generate_humanoid(1, cfg2), Error);
}

TEST_CASE("template save/load round trip is lossless") {
  const BodyTemplate t = generate_humanoid(9);
  const std::string path = "/tmp/bodynerf_template_test.txt";
  save_template(path, t);
  const BodyTemplate u = load_template(path);
  REQUIRE(u.vertices.size() == t.vertices.size());
  CHECK(u.faces == t.faces);
  CHECK(u.parent == t.parent);
  CHECK(u.blend_weights == t.blend_weights);
  for (size_t i = 0; i < t.joints.size(); ++i) {
    CHECK(u.joints[i] == t.joints[i]);
    CHECK(u.bone_tips[i] == t.bone_tips[i]);
  }
  std::remove(path.c_str());
}

TEST_CASE("template loader rejects a weights row that is not normalized") {
  const std::string path = "/tmp/bodynerf_template_bad.txt";
  write_text_file(path,
                  "bodynerf-template v1\n"
                  "vertices 2\n0 0 0\n1 0 0\n"
                  "faces 1\n0 1 1\n"
                  "joints 2\n0 0 0\n1 0 0\n"
                  "parents 2\n-1\n0\n"
                  "weights 2 2\n0.5 0.5\n0.9 0.3\n");
  try {
    load_template(path);
    FAIL("expected a throw");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("row 1") != std::string::npos);  // offending row index
    CHECK(msg.find(":15") != std::string::npos);    // source line
  }
  std::remove(path.c_str());
}

TEST_CASE("template loader rejects a parent cycle") {
  const std::string path = "/tmp/bodynerf_template_cycle.txt";
  write_text_file(path,
                  "bodynerf-template v1\n"
                  "vertices 1\n0 0 0\n"
                  "faces 1\n0 0 0\n"
                  "joints 3\n0 0 0\n1 0 0\n2 0 0\n"
                  "parents 3\n-1\n2\n1\n"
                  "weights 1 3\n1 0 0\n");
  CHECK_THROWS_AS(load_template(path), Error);
  std::remove(path.c_str());
}

TEST_CASE("pose normalization wraps rotations beyond two pi") {
  Pose p;
  p.joint_rotations = {Vec3(7.0, 0, 0)};
  const Pose n = p.normalized();
  CHECK(n.joint_rotations[0].norm() < 2 * M_PI);
  CHECK((rodrigues(p.joint_rotations[0]) - rodrigues(n.joint_rotations[0]))
            .norm() <= 1e-9);
}
