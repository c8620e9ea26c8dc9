#include "bodynerf/encoder.hpp"

#include <cmath>

namespace bodynerf {

ConvEncoder::ConvEncoder(const EncoderConfig& config, Rng& rng)
    : config_(config) {
  int in_ch = 3;
  for (int k = 0; k < 4; ++k) {
    const int out_ch = config_.block_channels[k];
    conv_w_.emplace_back("encoder.conv" + std::to_string(k) + ".w",
                         init_weight({out_ch, in_ch, 3, 3}, in_ch * 9, rng));
    conv_b_.emplace_back("encoder.conv" + std::to_string(k) + ".b",
                         Tensor::zeros({out_ch}));
    in_ch = out_ch;
  }
  const int cat_ch = config_.block_channels[2] + config_.block_channels[3];
  head_w_ = Parameter("encoder.head.w",
                      init_weight({config_.feature_channels, cat_ch, 1, 1},
                                  cat_ch, rng));
  head_b_ = Parameter("encoder.head.b",
                      Tensor::zeros({config_.feature_channels}));
}

void ConvEncoder::set_normalization(const std::array<double, 3>& mean,
                                    const std::array<double, 3>& stddev) {
  for (double s : stddev)
    BN_CHECK(s > 0.0, "encoder: normalization stddev must be positive");
  mean_ = mean;
  std_ = stddev;
}

FeatureMap ConvEncoder::encode(const Tensor& image) const {
  BN_CHECK(image.ndim() == 3 && image.dim(0) == 3,
           "encode: image must be (3,H,W), got ", shape_str(image.shape()));
  const std::int64_t h = image.dim(1), w = image.dim(2);
  const std::int64_t hp = (h + 15) / 16 * 16;
  const std::int64_t wp = (w + 15) / 16 * 16;

  // Normalize and zero-pad in one constant tensor; the image itself never
  // carries gradients.
  std::vector<double> padded(static_cast<size_t>(3 * hp * wp), 0.0);
  const auto& src = image.values();
  for (int c = 0; c < 3; ++c)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x)
        padded[(c * hp + y) * wp + x] =
            (src[(c * h + y) * w + x] - mean_[c]) / std_[c];
  Tensor x = Tensor::from_values({1, 3, hp, wp}, std::move(padded));

  std::vector<Tensor> blocks;
  for (int k = 0; k < 4; ++k) {
    x = relu(conv2d(x, conv_w_[k].tensor, conv_b_[k].tensor, 2, 1));
    blocks.push_back(x);
  }
  const Tensor up3 = upsample_nearest2d(blocks[2], 2);
  const Tensor up4 = upsample_nearest2d(blocks[3], 4);
  Tensor feat = conv2d(concat({up3, up4}, 1), head_w_.tensor, head_b_.tensor,
                       1, 0);

  const std::int64_t hf = feat.dim(2), wf = feat.dim(3);
  feat = chw_to_hwc(reshape(feat, {config_.feature_channels, hf, wf}));

  FeatureMap out;
  out.features = feat;
  out.stride = 4;
  out.image_width = static_cast<int>(w);
  out.image_height = static_cast<int>(h);
  return out;
}

void ConvEncoder::collect_parameters(std::vector<Parameter*>& out) {
  for (auto& p : conv_w_) out.push_back(&p);
  for (auto& p : conv_b_) out.push_back(&p);
  out.push_back(&head_w_);
  out.push_back(&head_b_);
}

PixelSamples sample_pixel_feature(const FeatureMap& fmap, const Tensor& uv) {
  BN_CHECK(uv.ndim() == 2 && uv.dim(1) == 2,
           "sample_pixel_feature: uv must be (B,2), got ",
           shape_str(uv.shape()));
  const std::int64_t b = uv.dim(0);
  const double s = static_cast<double>(fmap.stride);

  // Feature cell (i,j) is centered at image coords ((i+0.5)s, (j+0.5)s).
  Tensor grid = add_scalar(scale(uv, 1.0 / s), -0.5);

  PixelSamples out;
  out.in_image.resize(b);
  std::vector<double> mask(b);
  const auto& vals = uv.values();
  for (std::int64_t i = 0; i < b; ++i) {
    const double u = vals[i * 2 + 0], v = vals[i * 2 + 1];
    const bool inside = u >= 0.0 && u < fmap.image_width && v >= 0.0 &&
                        v < fmap.image_height && std::isfinite(u) &&
                        std::isfinite(v);
    out.in_image[i] = inside ? 1 : 0;
    mask[i] = inside ? 1.0 : 0.0;
  }
  Tensor sampled = bilinear_sample(fmap.features, grid);
  out.features = mul(sampled, Tensor::from_values({b, 1}, std::move(mask)));
  return out;
}

}  // namespace bodynerf
