#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "bodynerf/dataset.hpp"
#include "bodynerf/model.hpp"
#include "bodynerf/render.hpp"

namespace bodynerf {

enum class TrainMode { MVT, MoT };

struct TrainConfig {
  TrainMode mode = TrainMode::MoT;
  int input_frames = 8;  // T
  int rays_per_batch = 128;
  int samples_per_ray = 24;
  std::int64_t iterations = 2000;
  double learning_rate = 1e-4;
  double voxel_size = 0.02;
  double threshold = 0.05;
  std::uint64_t seed = 0;
  bool seed_set = false;
  SelectionCriterion criterion = SelectionCriterion::VertexDistance;
  int eval_every = 0;        // 0 disables periodic evaluation
  int eval_frames = 2;       // held-out frames per periodic evaluation
  int checkpoint_every = 0;  // 0 disables periodic checkpoints
  double early_stop_psnr = 0.0;  // 0 disables
  int log_window = 100;
  int raster_resolution = 192;
  std::string out_checkpoint = "model.ckpt";
  std::vector<std::string> sequence_dirs;
  ModelConfig model;

  /// Applies one config key; returns false for unknown keys.
  bool set(const std::string& key, const std::string& value);
  void validate() const;
};

/// Parses the structured-text config (one `key value` pair per line).
TrainConfig load_train_config(const std::string& path);

struct IterationInfo {
  std::int64_t iteration = 0;
  int target_sequence = 0;
  int target_frame = 0;
  int input_sequence = 0;
  std::vector<int> input_frame_indices;
  int input_camera_id = 0;
  int target_camera_id = 0;
  double loss = 0;
};
using IterationCallback = std::function<void(const IterationInfo&)>;

struct TrainResult {
  std::vector<double> loss_curve;
  std::vector<double> window_means;
  std::int64_t iterations_run = 0;
  bool early_stopped = false;
  double final_psnr = -1.0;  // last periodic evaluation, if any
  double final_ssim = -1.0;
};

/// Runs the full loop (deterministic in config.seed) and returns the trained
/// model. A non-finite loss aborts with iteration diagnostics.
Model train(const TrainConfig& config, const std::vector<Sequence>& sequences,
            TrainResult* result = nullptr, std::ostream* log = nullptr,
            const IterationCallback& callback = nullptr);

struct EvalRow {
  int frame_index = 0;
  int time_index = 0;
  double psnr = 0;
  double ssim = 0;
};
struct EvalResult {
  std::vector<EvalRow> rows;
  double mean_psnr = 0;
  double mean_ssim = 0;
};

struct EvalOptions {
  int input_frames = 8;
  SelectionCriterion criterion = SelectionCriterion::VertexDistance;
  double voxel_size = 0.02;
  double threshold = 0.05;
  int samples_per_ray = 24;
  int raster_resolution = 192;
  int max_frames = -1;  // limit evaluated frames, -1 = all held out
};

/// Renders the target sequence's held-out frames from input_seq's train
/// frames and scores them. For same-sequence evaluation the target frame is
/// excluded from the inputs.
EvalResult evaluate_heldout(const Model& model, const Sequence& input_seq,
                            const Sequence& target_seq,
                            const EvalOptions& options,
                            std::vector<Image>* renders = nullptr);

/// Per-channel mean/std over the train-split images of the sequences.
void compute_normalization(const std::vector<Sequence>& sequences,
                           std::array<double, 3>& mean,
                           std::array<double, 3>& stddev);

}  // namespace bodynerf
