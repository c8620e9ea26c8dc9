#include "bodynerf/body.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include "bodynerf/rng.hpp"
#include "bodynerf/textio.hpp"

namespace bodynerf {

namespace {

double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  if (len2 <= 0.0) return (p - a).norm();
  const double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
  return (p - (a + t * ab)).norm();
}

Mat4 rot_about_point(const Vec3& c, const Mat3& r) {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = r;
  m.topRightCorner<3, 1>() = c - r * c;
  return m;
}

}  // namespace

Mat3 rodrigues(const Vec3& axis_angle) {
  const double theta = axis_angle.norm();
  if (theta < 1e-12) {
    Mat3 k;
    k << 0, -axis_angle.z(), axis_angle.y(),
         axis_angle.z(), 0, -axis_angle.x(),
         -axis_angle.y(), axis_angle.x(), 0;
    return Mat3::Identity() + k;
  }
  return Eigen::AngleAxisd(theta, axis_angle / theta).toRotationMatrix();
}

Pose Pose::normalized() const {
  Pose out = *this;
  constexpr double two_pi = 6.283185307179586476925286766559;
  for (auto& aa : out.joint_rotations) {
    BN_CHECK(aa.allFinite(), "Pose: non-finite joint rotation");
    const double theta = aa.norm();
    if (theta >= two_pi) {
      const double wrapped = std::fmod(theta, two_pi);
      aa = theta > 0.0 ? Vec3(aa * (wrapped / theta)) : Vec3::Zero();
    }
  }
  BN_CHECK(out.root_translation.allFinite(), "Pose: non-finite root translation");
  return out;
}

std::vector<int> BodyTemplate::topo_order() const {
  const int n = static_cast<int>(joints.size());
  std::vector<int> order;
  std::vector<bool> placed(n, false);
  order.reserve(n);
  for (int pass = 0; pass < n && static_cast<int>(order.size()) < n; ++pass) {
    for (int j = 0; j < n; ++j) {
      if (placed[j]) continue;
      if (parent[j] == -1 || placed[parent[j]]) {
        order.push_back(j);
        placed[j] = true;
      }
    }
  }
  BN_CHECK(static_cast<int>(order.size()) == n,
           "BodyTemplate: joint parents contain a cycle");
  return order;
}

void BodyTemplate::validate() const {
  const std::int64_t v = vertex_count();
  const std::int64_t n = joint_count();
  BN_CHECK(v > 0, "BodyTemplate: no vertices");
  BN_CHECK(n > 0, "BodyTemplate: no joints");
  BN_CHECK(static_cast<std::int64_t>(parent.size()) == n,
           "BodyTemplate: parent count ", parent.size(), " != joint count ", n);
  BN_CHECK(parent[0] == -1, "BodyTemplate: joint 0 must be the root");
  for (std::int64_t j = 1; j < n; ++j)
    BN_CHECK(parent[j] >= 0 && parent[j] < n && parent[j] != j,
             "BodyTemplate: joint ", j, " has invalid parent ", parent[j]);
  topo_order();  // throws on cycles
  for (size_t f = 0; f < faces.size(); ++f)
    for (int k = 0; k < 3; ++k)
      BN_CHECK(faces[f][k] >= 0 && faces[f][k] < v, "BodyTemplate: face ", f,
               " references vertex ", faces[f][k], " of ", v);
  BN_CHECK(static_cast<std::int64_t>(blend_weights.size()) == v * n,
           "BodyTemplate: blend weight matrix has ", blend_weights.size(),
           " entries, expected ", v * n);
  for (std::int64_t r = 0; r < v; ++r) {
    double sum = 0.0;
    for (std::int64_t j = 0; j < n; ++j) {
      const double w = blend_weights[r * n + j];
      BN_CHECK(w >= 0.0, "BodyTemplate: negative blend weight at row ", r);
      sum += w;
    }
    BN_CHECK(std::abs(sum - 1.0) <= 1e-9,
             "BodyTemplate: blend weights row ", r, " sums to ", sum);
  }
  if (!bone_tips.empty())
    BN_CHECK(static_cast<std::int64_t>(bone_tips.size()) == n,
             "BodyTemplate: bone tip count mismatch");
}

PartTransforms forward_kinematics(const BodyTemplate& tmpl, const Pose& pose) {
  const std::int64_t n = tmpl.joint_count();
  BN_CHECK(static_cast<std::int64_t>(pose.joint_rotations.size()) == n,
           "forward_kinematics: pose has ", pose.joint_rotations.size(),
           " rotations for ", n, " joints");
  const Pose p = pose.normalized();
  PartTransforms out;
  out.transforms.assign(n, Mat4::Identity());
  for (int j : tmpl.topo_order()) {
    const Mat3 r = rodrigues(p.joint_rotations[j]);
    Mat4 local = rot_about_point(tmpl.joints[j], r);
    if (tmpl.parent[j] == -1) {
      Mat4 root_shift = Mat4::Identity();
      root_shift.topRightCorner<3, 1>() = p.root_translation;
      out.transforms[j] = root_shift * local;
    } else {
      out.transforms[j] = out.transforms[tmpl.parent[j]] * local;
    }
  }
  return out;
}

Vec3 blend_transform_point(const double* weights, const PartTransforms& t,
                           const Vec3& p) {
  Vec3 out = Vec3::Zero();
  for (std::int64_t j = 0; j < t.count(); ++j) {
    const double w = weights[j];
    if (w == 0.0) continue;
    const Mat4& m = t[j];
    out += w * (m.topLeftCorner<3, 3>() * p + m.topRightCorner<3, 1>());
  }
  return out;
}

std::vector<Vec3> pose_mesh(const BodyTemplate& tmpl,
                            const PartTransforms& transforms) {
  BN_CHECK(transforms.count() == tmpl.joint_count(),
           "pose_mesh: transform count ", transforms.count(),
           " != joint count ", tmpl.joint_count());
  std::vector<Vec3> posed(tmpl.vertices.size());
  for (std::int64_t v = 0; v < tmpl.vertex_count(); ++v)
    posed[v] = blend_transform_point(tmpl.weight_row(v), transforms,
                                     tmpl.vertices[v]);
  return posed;
}

// ---------------------------------------------------------------------------
// Procedural humanoid

namespace {

struct MeshBuilder {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;

  int add(const Vec3& v) {
    vertices.push_back(v);
    return static_cast<int>(vertices.size()) - 1;
  }
  void tri(int a, int b, int c) { faces.push_back({a, b, c}); }
};

// Closed capsule from p0 to p1: two hemisphere caps and a cylindrical shaft.
void append_capsule(MeshBuilder& mb, const Vec3& p0, const Vec3& p1, double r,
                    int radial, int shaft_segments) {
  BN_CHECK((p1 - p0).norm() > 1e-6, "humanoid: zero-length limb");
  BN_CHECK(r > 0.0, "humanoid: non-positive limb radius");
  const Vec3 axis = (p1 - p0).normalized();
  Vec3 ref = std::abs(axis.z()) < 0.9 ? Vec3(0, 0, 1) : Vec3(1, 0, 0);
  const Vec3 u = axis.cross(ref).normalized();
  const Vec3 w = axis.cross(u);

  constexpr int kCapRings = 2;  // rings per hemisphere, equator included
  const double pi = 3.14159265358979323846;

  // Ring descriptors along the capsule: center + radius.
  std::vector<std::pair<Vec3, double>> rings;
  for (int k = 1; k <= kCapRings; ++k) {
    const double phi = -pi / 2 + pi / 2 * k / kCapRings;
    rings.push_back({p0 + axis * (r * std::sin(phi)), r * std::cos(phi)});
  }
  for (int i = 1; i < shaft_segments; ++i)
    rings.push_back({p0 + (p1 - p0) * (static_cast<double>(i) / shaft_segments), r});
  for (int k = 0; k < kCapRings; ++k) {
    const double phi = pi / 2 * k / kCapRings;
    rings.push_back({p1 + axis * (r * std::sin(phi)), r * std::cos(phi)});
  }

  const int bottom = mb.add(p0 - axis * r);
  std::vector<int> ring_start;
  for (const auto& [c, rr] : rings) {
    ring_start.push_back(static_cast<int>(mb.vertices.size()));
    for (int s = 0; s < radial; ++s) {
      const double a = 2.0 * pi * s / radial;
      mb.add(c + rr * (std::cos(a) * u + std::sin(a) * w));
    }
  }
  const int top = mb.add(p1 + axis * r);

  for (int s = 0; s < radial; ++s) {
    const int sn = (s + 1) % radial;
    mb.tri(bottom, ring_start[0] + sn, ring_start[0] + s);
  }
  for (size_t k = 0; k + 1 < rings.size(); ++k)
    for (int s = 0; s < radial; ++s) {
      const int sn = (s + 1) % radial;
      const int a = ring_start[k] + s, b = ring_start[k] + sn;
      const int c = ring_start[k + 1] + s, d = ring_start[k + 1] + sn;
      mb.tri(a, b, d);
      mb.tri(a, d, c);
    }
  const int last = static_cast<int>(rings.size()) - 1;
  for (int s = 0; s < radial; ++s) {
    const int sn = (s + 1) % radial;
    mb.tri(top, ring_start[last] + s, ring_start[last] + sn);
  }
}

}  // namespace

BodyTemplate generate_humanoid(std::uint64_t seed,
                               const HumanoidConfig& config) {
  BN_CHECK(config.height > 0.0 && config.radius > 0.0,
           "humanoid: height and radius must be positive");
  BN_CHECK(config.radial_segments >= 3 && config.length_segments >= 1,
           "humanoid: resolution too low");
  Rng rng(seed);
  auto jit = [&](double v) {
    return v * (1.0 + config.proportion_jitter * (2.0 * rng.uniform() - 1.0));
  };

  const double h = jit(config.height);
  const double shoulder_x = jit(0.13 * h);
  const double elbow_x = jit(0.21 * h);
  const double hand_x = jit(0.25 * h);
  const double hip_x = jit(0.06 * h);

  BodyTemplate t;
  t.joints = {
      {0, 0, 0.52 * h},                    // 0 pelvis
      {0, 0, jit(0.62 * h)},               // 1 spine
      {0, 0, jit(0.74 * h)},               // 2 chest
      {0, 0, jit(0.85 * h)},               // 3 head (neck base)
      {-shoulder_x, 0, 0.80 * h},          // 4 left upper arm
      {shoulder_x, 0, 0.80 * h},           // 5 right upper arm
      {-elbow_x, 0, jit(0.60 * h)},        // 6 left forearm
      {elbow_x, 0, jit(0.60 * h)},         // 7 right forearm
      {-hip_x, 0, 0.50 * h},               // 8 left thigh
      {hip_x, 0, 0.50 * h},                // 9 right thigh
      {-jit(0.07 * h), 0, jit(0.27 * h)},  // 10 left shin
      {jit(0.07 * h), 0, jit(0.27 * h)},   // 11 right shin
  };
  t.parent = {-1, 0, 1, 2, 2, 2, 4, 5, 0, 0, 8, 9};
  t.bone_tips = {
      t.joints[1],                     // pelvis -> spine
      t.joints[2],                     // spine -> chest
      t.joints[3],                     // chest -> neck base
      {0, 0, h},                       // head -> head top
      t.joints[6],                     // upper arms -> elbows
      t.joints[7],
      {-hand_x, 0, jit(0.42 * h)},     // forearms -> hand tips
      {hand_x, 0, jit(0.42 * h)},
      t.joints[10],                    // thighs -> knees
      t.joints[11],
      {-jit(0.08 * h), 0, 0.02 * h},   // shins -> feet
      {jit(0.08 * h), 0, 0.02 * h},
  };

  const double r = jit(config.radius);
  const std::vector<double> radii = {1.9 * r, 1.9 * r, 1.7 * r, 1.45 * r,
                                     0.85 * r, 0.85 * r, 0.72 * r, 0.72 * r,
                                     1.15 * r, 1.15 * r, 0.85 * r, 0.85 * r};

  MeshBuilder mb;
  const std::int64_t n = t.joint_count();
  for (std::int64_t j = 0; j < n; ++j)
    append_capsule(mb, t.joints[j], t.bone_tips[j], radii[j],
                   config.radial_segments, config.length_segments);
  t.vertices = std::move(mb.vertices);
  t.faces = std::move(mb.faces);

  // Smooth distance falloff to each bone, then row-normalize.
  t.blend_weights.assign(t.vertex_count() * n, 0.0);
  for (std::int64_t v = 0; v < t.vertex_count(); ++v) {
    double sum = 0.0;
    for (std::int64_t j = 0; j < n; ++j) {
      const double d =
          point_segment_distance(t.vertices[v], t.joints[j], t.bone_tips[j]);
      const double tau = 0.5 * radii[j];
      const double w = std::exp(-d * d / (2.0 * tau * tau));
      t.blend_weights[v * n + j] = w;
      sum += w;
    }
    for (std::int64_t j = 0; j < n; ++j) t.blend_weights[v * n + j] /= sum;
  }

  t.validate();
  return t;
}

// ---------------------------------------------------------------------------
// Template file format (see docs/FORMATS.md)

namespace {
constexpr const char* kTemplateHeader = "bodynerf-template";
constexpr const char* kTemplateVersion = "v1";
}  // namespace

void save_template(const std::string& path, const BodyTemplate& tmpl) {
  tmpl.validate();
  std::ostringstream os;
  os << kTemplateHeader << " " << kTemplateVersion << "\n";
  os << "vertices " << tmpl.vertex_count() << "\n";
  for (const auto& v : tmpl.vertices)
    os << fmt_double(v.x()) << " " << fmt_double(v.y()) << " "
       << fmt_double(v.z()) << "\n";
  os << "faces " << tmpl.faces.size() << "\n";
  for (const auto& f : tmpl.faces)
    os << f[0] << " " << f[1] << " " << f[2] << "\n";
  os << "joints " << tmpl.joint_count() << "\n";
  for (const auto& j : tmpl.joints)
    os << fmt_double(j.x()) << " " << fmt_double(j.y()) << " "
       << fmt_double(j.z()) << "\n";
  os << "parents " << tmpl.joint_count() << "\n";
  for (int p : tmpl.parent) os << p << "\n";
  os << "weights " << tmpl.vertex_count() << " " << tmpl.joint_count() << "\n";
  for (std::int64_t v = 0; v < tmpl.vertex_count(); ++v) {
    const double* row = tmpl.weight_row(v);
    for (std::int64_t j = 0; j < tmpl.joint_count(); ++j)
      os << (j ? " " : "") << fmt_double(row[j]);
    os << "\n";
  }
  if (!tmpl.bone_tips.empty()) {
    os << "tips " << tmpl.joint_count() << "\n";
    for (const auto& p : tmpl.bone_tips)
      os << fmt_double(p.x()) << " " << fmt_double(p.y()) << " "
         << fmt_double(p.z()) << "\n";
  }
  write_text_file(path, os.str());
}

BodyTemplate load_template(const std::string& path) {
  TextDoc doc = TextDoc::read_file(path);
  {
    auto header = doc.expect(kTemplateHeader);
    if (doc.str(header, 1) != kTemplateVersion)
      doc.fail_at(header, "unsupported template version '",
                  doc.str(header, 1), "'");
  }
  BodyTemplate t;

  auto vh = doc.expect("vertices");
  const std::int64_t nv = doc.integer(vh, 1);
  for (std::int64_t i = 0; i < nv; ++i) {
    auto l = doc.take();
    t.vertices.emplace_back(doc.num(l, 0), doc.num(l, 1), doc.num(l, 2));
  }

  auto fh = doc.expect("faces");
  const std::int64_t nf = doc.integer(fh, 1);
  for (std::int64_t i = 0; i < nf; ++i) {
    auto l = doc.take();
    t.faces.push_back({static_cast<int>(doc.integer(l, 0)),
                       static_cast<int>(doc.integer(l, 1)),
                       static_cast<int>(doc.integer(l, 2))});
  }

  auto jh = doc.expect("joints");
  const std::int64_t nj = doc.integer(jh, 1);
  for (std::int64_t i = 0; i < nj; ++i) {
    auto l = doc.take();
    t.joints.emplace_back(doc.num(l, 0), doc.num(l, 1), doc.num(l, 2));
  }

  auto ph = doc.expect("parents");
  if (doc.integer(ph, 1) != nj)
    doc.fail_at(ph, "parent count must equal joint count ", nj);
  for (std::int64_t i = 0; i < nj; ++i) {
    auto l = doc.take();
    t.parent.push_back(static_cast<int>(doc.integer(l, 0)));
  }

  auto wh = doc.expect("weights");
  if (doc.integer(wh, 1) != nv || doc.integer(wh, 2) != nj)
    doc.fail_at(wh, "weights header must be 'weights ", nv, " ", nj, "'");
  t.blend_weights.reserve(nv * nj);
  for (std::int64_t v = 0; v < nv; ++v) {
    auto l = doc.take();
    if (static_cast<std::int64_t>(l.tokens.size()) != nj)
      doc.fail_at(l, "weights row ", v, " has ", l.tokens.size(),
                  " entries, expected ", nj);
    double sum = 0.0;
    for (std::int64_t j = 0; j < nj; ++j) {
      const double w = doc.num(l, j);
      if (w < 0.0) doc.fail_at(l, "weights row ", v, " has negative entry");
      sum += w;
      t.blend_weights.push_back(w);
    }
    if (std::abs(sum - 1.0) > 1e-9)
      doc.fail_at(l, "weights row ", v, " sums to ", sum, ", expected 1");
  }

  if (!doc.eof() && doc.peek().tokens[0] == "tips") {
    auto th = doc.expect("tips");
    if (doc.integer(th, 1) != nj)
      doc.fail_at(th, "tip count must equal joint count ", nj);
    for (std::int64_t i = 0; i < nj; ++i) {
      auto l = doc.take();
      t.bone_tips.emplace_back(doc.num(l, 0), doc.num(l, 1), doc.num(l, 2));
    }
  }

  try {
    t.validate();
  } catch (const Error& e) {
    doc.fail_doc(e.what());
  }
  return t;
}

}  // namespace bodynerf
