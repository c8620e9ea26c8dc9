#include "bodynerf/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace bodynerf {

double psnr(const Image& a, const Image& b) {
  BN_CHECK(a.same_size(b), "psnr: image sizes differ (", a.width, "x",
           a.height, " vs ", b.width, "x", b.height, ")");
  double se = 0.0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.data.size());
  if (mse <= 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

namespace {

std::vector<double> luma(const Image& img) {
  std::vector<double> out(static_cast<size_t>(img.width) * img.height);
  for (size_t i = 0; i < out.size(); ++i) {
    const double* p = img.data.data() + i * 3;
    out[i] = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
  }
  return out;
}

}  // namespace

double ssim(const Image& a, const Image& b) {
  BN_CHECK(a.same_size(b), "ssim: image sizes differ (", a.width, "x",
           a.height, " vs ", b.width, "x", b.height, ")");
  constexpr int kHalf = 5;  // 11x11 window
  BN_CHECK(a.width >= 11 && a.height >= 11,
           "ssim: images must be at least 11x11");

  double window[11][11];
  double wsum = 0.0;
  for (int y = -kHalf; y <= kHalf; ++y)
    for (int x = -kHalf; x <= kHalf; ++x) {
      const double g = std::exp(-(x * x + y * y) / (2.0 * 1.5 * 1.5));
      window[y + kHalf][x + kHalf] = g;
      wsum += g;
    }
  for (auto& row : window)
    for (auto& w : row) w /= wsum;

  constexpr double kC1 = 0.01 * 0.01;  // (K1*L)^2, L = 1
  constexpr double kC2 = 0.03 * 0.03;

  const std::vector<double> la = luma(a);
  const std::vector<double> lb = luma(b);
  const int w = a.width, h = a.height;

  double total = 0.0;
  std::int64_t count = 0;
  for (int cy = kHalf; cy < h - kHalf; ++cy)
    for (int cx = kHalf; cx < w - kHalf; ++cx) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int dy = -kHalf; dy <= kHalf; ++dy)
        for (int dx = -kHalf; dx <= kHalf; ++dx) {
          const double wgt = window[dy + kHalf][dx + kHalf];
          const double va = la[(cy + dy) * w + (cx + dx)];
          const double vb = lb[(cy + dy) * w + (cx + dx)];
          ma += wgt * va;
          mb += wgt * vb;
          saa += wgt * va * va;
          sbb += wgt * vb * vb;
          sab += wgt * va * vb;
        }
      const double var_a = saa - ma * ma;
      const double var_b = sbb - mb * mb;
      const double cov = sab - ma * mb;
      const double num = (2.0 * ma * mb + kC1) * (2.0 * cov + kC2);
      const double den = (ma * ma + mb * mb + kC1) * (var_a + var_b + kC2);
      total += num / den;
      ++count;
    }
  return total / static_cast<double>(count);
}

}  // namespace bodynerf
