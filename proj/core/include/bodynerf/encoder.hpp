#pragma once

#include <array>
#include <vector>

#include "bodynerf/mlp.hpp"
#include "bodynerf/optim.hpp"
#include "bodynerf/rng.hpp"
#include "bodynerf/tensor.hpp"

namespace bodynerf {

/// Pixel-aligned features for one image, stored (H_f, W_f, C) for sampling.
struct FeatureMap {
  Tensor features;
  int stride = 4;
  int image_width = 0;
  int image_height = 0;

  std::int64_t channels() const { return features.dim(2); }
};

struct EncoderConfig {
  int feature_channels = 32;                      // C_f
  std::array<int, 4> block_channels = {16, 32, 32, 32};
};

/// Four stride-2 conv blocks; the two deepest maps are upsampled back to
/// stride 4, concatenated and projected to C_f channels. Trained from
/// scratch with the rest of the pipeline.
class ConvEncoder {
 public:
  ConvEncoder() = default;
  ConvEncoder(const EncoderConfig& config, Rng& rng);

  /// image is (3,H,W) with values in [0,1]; H and W are zero-padded up to a
  /// multiple of 16 internally.
  FeatureMap encode(const Tensor& image) const;

  void set_normalization(const std::array<double, 3>& mean,
                         const std::array<double, 3>& stddev);
  const std::array<double, 3>& norm_mean() const { return mean_; }
  const std::array<double, 3>& norm_std() const { return std_; }

  void collect_parameters(std::vector<Parameter*>& out);
  int feature_channels() const { return config_.feature_channels; }

 private:
  EncoderConfig config_;
  std::vector<Parameter> conv_w_, conv_b_;
  Parameter head_w_, head_b_;
  std::array<double, 3> mean_ = {0.5, 0.5, 0.5};
  std::array<double, 3> std_ = {0.5, 0.5, 0.5};
};

/// Bilinear feature lookup at continuous image coordinates. uv is (B,2) and
/// may carry gradients; out-of-image points return a zero vector and a
/// cleared flag bit.
struct PixelSamples {
  Tensor features;              // (B, C)
  std::vector<char> in_image;   // per row
};
PixelSamples sample_pixel_feature(const FeatureMap& fmap, const Tensor& uv);

}  // namespace bodynerf
