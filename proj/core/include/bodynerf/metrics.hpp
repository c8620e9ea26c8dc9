#pragma once

#include "bodynerf/image.hpp"

namespace bodynerf {

/// 10*log10(1/MSE) over all channels for [0,1] images; identical images cap
/// at 99 dB.
double psnr(const Image& a, const Image& b);

/// Windowed SSIM on luma: 11x11 Gaussian (sigma 1.5), K1=0.01, K2=0.03,
/// dynamic range 1.
double ssim(const Image& a, const Image& b);

}  // namespace bodynerf
