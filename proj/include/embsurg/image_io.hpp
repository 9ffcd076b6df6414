#pragma once

// Minimal 8-bit RGB PNG writer for sample grids and interpolation frames.
// Pixel mapping from generator space: x -> round(255 * (x + 1) / 2),
// clamped to [0, 255].

#include "embsurg/core.hpp"

#include <string>

namespace embsurg {

// img is a [-1,1] channel-major sample of size ch*h*w (ch = 1 or 3).
void write_png(const std::string& path, const float* img, int h, int w,
               int ch);

inline void write_png(const std::string& path, const VecF& img, int h, int w,
                      int ch) {
  if (img.size() != static_cast<Eigen::Index>(ch) * h * w)
    throw ShapeError("write_png: image size does not match dimensions");
  write_png(path, img.data(), h, w, ch);
}

}  // namespace embsurg
