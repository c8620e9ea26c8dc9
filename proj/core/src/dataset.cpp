#include "bodynerf/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <sstream>

#include "bodynerf/rasterizer.hpp"
#include "bodynerf/textio.hpp"

namespace fs = std::filesystem;

namespace bodynerf {

int Sequence::camera_id() const {
  BN_CHECK(!frames.empty(), "Sequence: no frames");
  return frames[0].camera.camera_id;
}

void Sequence::validate() const {
  BN_CHECK(!frames.empty(), "Sequence: no frames");
  const int cam = frames[0].camera.camera_id;
  for (size_t i = 0; i < frames.size(); ++i) {
    BN_CHECK(frames[i].camera.camera_id == cam,
             "Sequence: frame ", i, " has camera ", frames[i].camera.camera_id,
             ", expected the sequence camera ", cam);
    BN_CHECK(static_cast<std::int64_t>(frames[i].pose.joint_rotations.size()) ==
                 tmpl.joint_count(),
             "Sequence: frame ", i, " pose joint count mismatch");
    if (i > 0)
      BN_CHECK(frames[i].time_index > frames[i - 1].time_index,
               "Sequence: time indices must strictly increase (frame ", i, ")");
  }
}

std::vector<int> Sequence::train_frames() const {
  std::vector<int> out;
  for (size_t i = 0; i < frames.size(); ++i)
    if (frames[i].split == SplitTag::Train) out.push_back(static_cast<int>(i));
  return out;
}

std::vector<int> Sequence::heldout_frames() const {
  std::vector<int> out;
  for (size_t i = 0; i < frames.size(); ++i)
    if (frames[i].split == SplitTag::Heldout)
      out.push_back(static_cast<int>(i));
  return out;
}

Pose MotionScript::pose_at(int time_index, int n_joints) const {
  constexpr double two_pi = 6.283185307179586476925286766559;
  const double t = sequence_length > 1
                       ? static_cast<double>(time_index) / sequence_length
                       : 0.0;
  Pose pose;
  pose.time_index = time_index;
  pose.joint_rotations.assign(n_joints, Vec3::Zero());
  for (const Channel& ch : channels) {
    BN_CHECK(ch.joint >= 0 && ch.joint < n_joints,
             "MotionScript: channel joint ", ch.joint, " out of range");
    pose.joint_rotations[ch.joint] +=
        ch.axis * (ch.amplitude * std::sin(two_pi * ch.frequency * t + ch.phase));
  }
  pose.root_translation =
      root_amplitude * std::sin(two_pi * root_frequency * t);
  return pose;
}

MotionScript MotionScript::preset(const std::string& name,
                                  int sequence_length) {
  MotionScript s;
  s.sequence_length = sequence_length;
  // Joint ids follow the 12-part humanoid layout.
  const int kSpine = 1, kChest = 2;
  const int kLArm = 4, kRArm = 5, kLFore = 6, kRFore = 7;
  const int kLThigh = 8, kRThigh = 9;
  if (name == "wave") {
    s.channels = {
        {kRArm, Vec3::UnitY(), 1.1, 1.0, 0.0},
        {kRFore, Vec3::UnitY(), 0.7, 2.0, 0.6},
        {kLArm, Vec3::UnitY(), -0.35, 1.0, 1.3},
    };
  } else if (name == "turn") {
    s.channels = {
        {kSpine, Vec3::UnitZ(), 0.45, 1.0, 0.0},
        {kChest, Vec3::UnitZ(), 0.3, 1.0, 0.5},
    };
  } else if (name == "wave_turn") {
    s.channels = {
        {kRArm, Vec3::UnitY(), 1.0, 1.0, 0.0},
        {kRFore, Vec3::UnitY(), 0.65, 2.0, 0.7},
        {kLArm, Vec3::UnitY(), -0.4, 1.0, 1.1},
        {kLFore, Vec3::UnitY(), 0.3, 2.0, 0.2},
        {kChest, Vec3::UnitZ(), 0.3, 1.0, 0.4},
        {kSpine, Vec3::UnitZ(), 0.2, 1.0, 0.0},
        {kLThigh, Vec3::UnitX(), 0.18, 2.0, 0.0},
        {kRThigh, Vec3::UnitX(), -0.18, 2.0, 0.3},
    };
    s.root_amplitude = Vec3(0.0, 0.0, 0.012);
    s.root_frequency = 2.0;
  } else {
    fail("MotionScript: unknown preset '", name,
         "' (expected wave, turn or wave_turn)");
  }
  return s;
}

Image render_ground_truth(const BodyTemplate& tmpl, const Pose& pose,
                          const std::vector<Vec3>& vertex_colors,
                          const Camera& camera) {
  const PartTransforms transforms = forward_kinematics(tmpl, pose);
  const std::vector<Vec3> posed = pose_mesh(tmpl, transforms);
  const Raster raster = rasterize(posed, tmpl.faces, camera, camera.width,
                                  camera.height, &vertex_colors);
  Image img(camera.width, camera.height, 0.0);
  img.data = raster.color;
  return img;
}

namespace {

// Smooth per-part palette with a mild height modulation; gives each identity
// distinct, learnable appearance with detail for the point features.
std::vector<Vec3> make_vertex_colors(const BodyTemplate& tmpl, Rng& rng) {
  const std::int64_t n = tmpl.joint_count();
  std::vector<Vec3> palette(n);
  for (auto& c : palette)
    c = Vec3(0.15 + 0.7 * rng.uniform(), 0.15 + 0.7 * rng.uniform(),
             0.15 + 0.7 * rng.uniform());
  const double freq = 14.0 + 6.0 * rng.uniform();
  const double phase = 6.28 * rng.uniform();

  std::vector<Vec3> colors(tmpl.vertex_count());
  for (std::int64_t v = 0; v < tmpl.vertex_count(); ++v) {
    Vec3 c = Vec3::Zero();
    const double* w = tmpl.weight_row(v);
    for (std::int64_t j = 0; j < n; ++j) c += w[j] * palette[j];
    const double band =
        0.85 + 0.15 * std::sin(freq * tmpl.vertices[v].z() + phase);
    colors[v] = (c * band).cwiseMax(0.02).cwiseMin(0.98);
  }
  return colors;
}

}  // namespace

GeneratedScene generate_scene(const SceneConfig& config, std::uint64_t seed) {
  BN_CHECK(config.n_frames >= 1, "generate_scene: need at least one frame");
  BN_CHECK(!config.camera_azimuth_deg.empty(),
           "generate_scene: need at least one camera");
  Rng rng(seed);

  GeneratedScene scene;
  scene.tmpl = generate_humanoid(config.identity_seed, config.humanoid);
  Rng color_rng = Rng(config.identity_seed).fork(7);
  scene.vertex_colors = make_vertex_colors(scene.tmpl, color_rng);

  const MotionScript motion =
      MotionScript::preset(config.motion, config.n_frames);

  // Shared body center for the look-at cameras.
  Vec3 lo = scene.tmpl.vertices[0], hi = scene.tmpl.vertices[0];
  for (const auto& v : scene.tmpl.vertices) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
  const Vec3 center = 0.5 * (lo + hi);

  std::vector<Pose> poses(config.n_frames);
  for (int t = 0; t < config.n_frames; ++t)
    poses[t] = motion.pose_at(t, static_cast<int>(scene.tmpl.joint_count()));

  for (size_t c = 0; c < config.camera_azimuth_deg.size(); ++c) {
    const double az = config.camera_azimuth_deg[c] * M_PI / 180.0;
    const Vec3 eye = center + config.camera_distance *
                                  Vec3(std::sin(az), -std::cos(az), 0.0);
    const Camera camera = Camera::look_at(
        eye, center, Vec3(0, 0, 1), config.focal_scale * config.image_size,
        config.image_size, config.image_size, static_cast<int>(c));

    Sequence seq;
    seq.identity = "id" + std::to_string(config.identity_seed);
    seq.tmpl = scene.tmpl;
    for (int t = 0; t < config.n_frames; ++t) {
      Frame frame;
      frame.pose = poses[t];
      frame.camera = camera;
      frame.time_index = t;
      const bool heldout_view =
          config.heldout_camera == static_cast<int>(c);
      const bool heldout_time =
          config.heldout_every > 0 && (t % config.heldout_every) ==
                                          config.heldout_every - 1;
      frame.split = (heldout_view || heldout_time) ? SplitTag::Heldout
                                                   : SplitTag::Train;
      frame.image =
          render_ground_truth(scene.tmpl, frame.pose, scene.vertex_colors,
                              camera);
      seq.frames.push_back(std::move(frame));
    }
    seq.validate();
    scene.sequences.push_back(std::move(seq));
  }
  return scene;
}

std::vector<int> select_frames(const Sequence& seq, const Pose& target_pose,
                               int count, SelectionCriterion criterion,
                               int exclude_time) {
  std::vector<int> candidates;
  for (int i : seq.train_frames())
    if (seq.frames[i].time_index != exclude_time) candidates.push_back(i);
  BN_CHECK(static_cast<int>(candidates.size()) >= count,
           "select_frames: requested ", count, " of ", candidates.size(),
           " candidate frames");

  if (criterion == SelectionCriterion::Evenly) {
    std::vector<int> out;
    if (count == 1) {
      out.push_back(candidates[0]);
      return out;
    }
    const double step = static_cast<double>(candidates.size() - 1) /
                        static_cast<double>(count - 1);
    for (int k = 0; k < count; ++k)
      out.push_back(candidates[static_cast<size_t>(std::lround(k * step))]);
    return out;
  }

  // Criterion: smallest summed vertex distance to the target, measured in
  // the sequence camera's frame (a rigid map, so ranking matches world
  // space); ties resolve toward earlier frames.
  const PartTransforms target_t = forward_kinematics(seq.tmpl, target_pose);
  const std::vector<Vec3> target_mesh = pose_mesh(seq.tmpl, target_t);
  const Camera& cam = seq.frames[0].camera;
  std::vector<Vec3> target_cam(target_mesh.size());
  for (size_t v = 0; v < target_mesh.size(); ++v)
    target_cam[v] = cam.to_camera(target_mesh[v]);

  std::vector<std::pair<double, int>> scored;
  for (int i : candidates) {
    const PartTransforms t = forward_kinematics(seq.tmpl, seq.frames[i].pose);
    const std::vector<Vec3> mesh = pose_mesh(seq.tmpl, t);
    double sum = 0.0;
    for (size_t v = 0; v < mesh.size(); ++v)
      sum += (cam.to_camera(mesh[v]) - target_cam[v]).norm();
    scored.emplace_back(sum, i);
  }
  std::stable_sort(scored.begin(), scored.end(),
                   [](const auto& a, const auto& b) {
                     if (a.first != b.first) return a.first < b.first;
                     return a.second < b.second;
                   });
  std::vector<int> out;
  for (int k = 0; k < count; ++k) out.push_back(scored[k].second);
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Sequence directory format (see docs/FORMATS.md)

void save_sequence(const std::string& directory, const Sequence& seq) {
  seq.validate();
  fs::create_directories(directory);
  const std::string tmpl_file = "template.txt";
  save_template((fs::path(directory) / tmpl_file).string(), seq.tmpl);

  std::ostringstream os;
  os << "bodynerf-sequence v1\n";
  os << "identity " << seq.identity << "\n";
  os << "template " << tmpl_file << "\n";
  os << "frames " << seq.frames.size() << "\n";
  for (size_t i = 0; i < seq.frames.size(); ++i) {
    const Frame& f = seq.frames[i];
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%04d.png", f.time_index);
    write_png((fs::path(directory) / name).string(), f.image);

    os << "frame " << f.time_index << " "
       << (f.split == SplitTag::Train ? "train" : "heldout") << " " << name
       << "\n";
    const Camera& c = f.camera;
    os << "camera " << c.camera_id << " " << c.width << " " << c.height << " "
       << fmt_double(c.fx) << " " << fmt_double(c.fy) << " "
       << fmt_double(c.cx) << " " << fmt_double(c.cy) << "\n";
    os << "rot";
    for (int r = 0; r < 3; ++r)
      for (int cc = 0; cc < 3; ++cc) os << " " << fmt_double(c.rotation(r, cc));
    os << "\n";
    os << "trans " << fmt_double(c.translation.x()) << " "
       << fmt_double(c.translation.y()) << " "
       << fmt_double(c.translation.z()) << "\n";
    os << "pose";
    for (const auto& aa : f.pose.joint_rotations)
      os << " " << fmt_double(aa.x()) << " " << fmt_double(aa.y()) << " "
         << fmt_double(aa.z());
    os << "\n";
    os << "root " << fmt_double(f.pose.root_translation.x()) << " "
       << fmt_double(f.pose.root_translation.y()) << " "
       << fmt_double(f.pose.root_translation.z()) << "\n";
  }
  write_text_file((fs::path(directory) / "manifest.txt").string(), os.str());
}

Sequence load_sequence(const std::string& directory) {
  const fs::path dir(directory);
  TextDoc doc = TextDoc::read_file((dir / "manifest.txt").string());
  {
    auto header = doc.expect("bodynerf-sequence");
    if (doc.str(header, 1) != "v1")
      doc.fail_at(header, "unsupported sequence version");
  }
  Sequence seq;
  seq.identity = doc.str(doc.expect("identity"), 1);
  seq.template_path = doc.str(doc.expect("template"), 1);
  seq.tmpl = load_template((dir / seq.template_path).string());

  const std::int64_t n_frames = doc.integer(doc.expect("frames"), 1);
  const std::int64_t nj = seq.tmpl.joint_count();
  for (std::int64_t i = 0; i < n_frames; ++i) {
    Frame f;
    auto fl = doc.expect("frame");
    f.time_index = static_cast<int>(doc.integer(fl, 1));
    const std::string& split = doc.str(fl, 2);
    if (split == "train")
      f.split = SplitTag::Train;
    else if (split == "heldout")
      f.split = SplitTag::Heldout;
    else
      doc.fail_at(fl, "unknown split tag '", split, "'");
    f.image_file = doc.str(fl, 3);
    f.image = read_png((dir / f.image_file).string());

    auto cl = doc.expect("camera");
    f.camera.camera_id = static_cast<int>(doc.integer(cl, 1));
    f.camera.width = static_cast<int>(doc.integer(cl, 2));
    f.camera.height = static_cast<int>(doc.integer(cl, 3));
    f.camera.fx = doc.num(cl, 4);
    f.camera.fy = doc.num(cl, 5);
    f.camera.cx = doc.num(cl, 6);
    f.camera.cy = doc.num(cl, 7);
    auto rl = doc.expect("rot");
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c)
        f.camera.rotation(r, c) = doc.num(rl, 1 + r * 3 + c);
    auto tl = doc.expect("trans");
    f.camera.translation =
        Vec3(doc.num(tl, 1), doc.num(tl, 2), doc.num(tl, 3));
    try {
      f.camera.validate();
    } catch (const Error& e) {
      doc.fail_at(cl, e.what());
    }

    auto pl = doc.expect("pose");
    if (static_cast<std::int64_t>(pl.tokens.size()) != 1 + 3 * nj)
      doc.fail_at(pl, "pose must have ", 3 * nj, " numbers");
    for (std::int64_t j = 0; j < nj; ++j)
      f.pose.joint_rotations.emplace_back(doc.num(pl, 1 + j * 3),
                                          doc.num(pl, 2 + j * 3),
                                          doc.num(pl, 3 + j * 3));
    auto rootl = doc.expect("root");
    f.pose.root_translation =
        Vec3(doc.num(rootl, 1), doc.num(rootl, 2), doc.num(rootl, 3));
    f.pose.time_index = f.time_index;
    seq.frames.push_back(std::move(f));
  }
  seq.validate();
  return seq;
}

}  // namespace bodynerf
