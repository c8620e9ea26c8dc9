#pragma once

#include <string>
#include <vector>

#include "bodynerf/body.hpp"
#include "bodynerf/camera.hpp"
#include "bodynerf/image.hpp"
#include "bodynerf/rng.hpp"

namespace bodynerf {

enum class SplitTag { Train, Heldout };

struct Frame {
  Image image;
  Pose pose;
  Camera camera;
  int time_index = 0;
  SplitTag split = SplitTag::Train;
  std::string image_file;
};

/// One monocular video: frames share a camera and times strictly increase.
struct Sequence {
  std::string identity;
  std::string template_path;
  BodyTemplate tmpl;
  std::vector<Frame> frames;

  int camera_id() const;
  void validate() const;
  std::vector<int> train_frames() const;
  std::vector<int> heldout_frames() const;
};

/// Deterministic per-joint sinusoidal motion.
struct MotionScript {
  struct Channel {
    int joint = 0;
    Vec3 axis = Vec3::UnitX();
    double amplitude = 0;  // radians
    double frequency = 0;  // cycles over the whole sequence
    double phase = 0;
  };
  std::vector<Channel> channels;
  Vec3 root_amplitude = Vec3::Zero();
  double root_frequency = 1.0;
  int sequence_length = 20;

  Pose pose_at(int time_index, int n_joints) const;
  /// Presets: "wave", "turn", "wave_turn".
  static MotionScript preset(const std::string& name, int sequence_length);
};

struct SceneConfig {
  std::uint64_t identity_seed = 1;
  HumanoidConfig humanoid;
  std::string motion = "wave_turn";
  int n_frames = 20;
  int image_size = 64;
  double camera_distance = 2.3;
  double focal_scale = 1.05;           // focal = scale * image_size
  std::vector<double> camera_azimuth_deg = {0.0, 90.0};
  int heldout_every = 5;               // every k-th frame is held out
  int heldout_camera = -1;             // whole view held out (MVT), -1 = none
};

/// Identity-consistent multi-view scene: one Sequence per camera, all views
/// sharing the template, vertex colors and scripted motion.
struct GeneratedScene {
  BodyTemplate tmpl;
  std::vector<Vec3> vertex_colors;
  std::vector<Sequence> sequences;
};
GeneratedScene generate_scene(const SceneConfig& config, std::uint64_t seed);

/// Ground-truth surface render used by the generator (and its tests): posed
/// mesh with barycentric vertex colors over a black background.
Image render_ground_truth(const BodyTemplate& tmpl, const Pose& pose,
                          const std::vector<Vec3>& vertex_colors,
                          const Camera& camera);

enum class SelectionCriterion { Evenly, VertexDistance };

/// Input-frame selection among the train split. exclude_time drops a frame
/// with that time index (the target itself) from the candidates; pass a
/// negative value to keep all.
std::vector<int> select_frames(const Sequence& seq, const Pose& target_pose,
                               int count, SelectionCriterion criterion,
                               int exclude_time = -1);

void save_sequence(const std::string& directory, const Sequence& seq);
Sequence load_sequence(const std::string& directory);

}  // namespace bodynerf
