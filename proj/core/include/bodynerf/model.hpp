#pragma once

#include <array>
#include <string>
#include <vector>

#include "bodynerf/checkpoint.hpp"
#include "bodynerf/deformation.hpp"
#include "bodynerf/encoder.hpp"
#include "bodynerf/feature_volume.hpp"
#include "bodynerf/fusion.hpp"

namespace bodynerf {

struct ModelConfig {
  int n_parts = 12;
  int feature_channels = 32;  // C_f
  int volume_channels = 32;   // C_v per retained level
  int diffusion_levels = 4;
  int attn_dim = 32;
  int latent_dim = 16;
  int pe_bands = 4;
  std::array<int, 4> encoder_channels = {16, 32, 32, 32};
  std::vector<std::int64_t> refiner_hidden = {64, 64, 64, 64};
  std::vector<std::int64_t> density_hidden = {64, 64};
  std::vector<std::int64_t> color_hidden = {64, 64};
  bool use_attention = true;  // pass the volume feature through when false

  int query_dim() const { return diffusion_levels * volume_channels; }
  int pe_dim() const { return 3 + 6 * pe_bands; }
};

/// Every learned component of the pipeline plus its construction metadata.
class Model {
 public:
  Model(const ModelConfig& config, const std::vector<int>& camera_ids,
        std::uint64_t seed);

  ModelConfig config;
  ConvEncoder encoder;
  DiffusionNet diffusion;
  WeightRefiner refiner;
  AttentionBlock attn_density;
  AttentionBlock attn_color;
  Mlp density_mlp;
  Mlp color_mlp;
  CameraLatentTable latents;

  std::vector<Parameter*> parameters();

  Checkpoint to_checkpoint(std::map<std::string, std::string> extra_meta) const;
  static Model from_checkpoint(const Checkpoint& ckpt);
};

}  // namespace bodynerf
