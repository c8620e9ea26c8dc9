#pragma once

#include <string>
#include <vector>

#include "bodynerf/common.hpp"

namespace bodynerf {

/// RGB image with values in [0,1], row-major (y, x, channel).
struct Image {
  int width = 0, height = 0;
  std::vector<double> data;  // h*w*3

  Image() = default;
  Image(int w, int h, double fill = 0.0)
      : width(w), height(h), data(static_cast<size_t>(w) * h * 3, fill) {}

  double* pixel(int x, int y) { return data.data() + (static_cast<size_t>(y) * width + x) * 3; }
  const double* pixel(int x, int y) const {
    return data.data() + (static_cast<size_t>(y) * width + x) * 3;
  }
  bool same_size(const Image& o) const {
    return width == o.width && height == o.height;
  }
};

/// 8-bit PNG round trip; values clamp to [0,1] on write.
void write_png(const std::string& path, const Image& image);
Image read_png(const std::string& path);

}  // namespace bodynerf
