#pragma once

// Qualitative artifacts: latent/embedding interpolation sequences and tiled
// image grids. Interpolation endpoints are bit-identical to direct
// generation because the t=0 and t=1 weights are exact.

#include "embsurg/nets.hpp"

#include <string>

namespace embsurg {

struct InterpolationSpec {
  enum class Kind { Latent, Embedding };
  Kind kind = Kind::Latent;
  // Latent: z_a -> z_b with fixed_embedding held constant.
  // Embedding: c_a -> c_b with fixed_latent held constant.
  VecF z_a, z_b;
  VecF c_a, c_b;
  VecF fixed_embedding;
  VecF fixed_latent;
  int steps = 8;
};

// Linear interpolation frames, one column per frame.
template <class T>
Mat<T> interpolate(const GeneratorCheckpoint<T>& g,
                   const InterpolationSpec& spec) {
  if (spec.steps < 2)
    throw ConfigError("interpolate: need at least 2 steps");
  Mat<T> frames(g.cfg.image_dim(), spec.steps);
  for (int i = 0; i < spec.steps; ++i) {
    const T t = static_cast<T>(i) / static_cast<T>(spec.steps - 1);
    const T u = T(1) - t;
    Vec<T> c, z;
    if (spec.kind == InterpolationSpec::Kind::Latent) {
      if (spec.z_a.size() == 0 || spec.z_b.size() == 0 ||
          spec.fixed_embedding.size() == 0)
        throw ConfigError("interpolate: latent endpoints or embedding missing");
      c = spec.fixed_embedding.template cast<T>();
      z = u * spec.z_a.template cast<T>() + t * spec.z_b.template cast<T>();
    } else {
      if (spec.c_a.size() == 0 || spec.c_b.size() == 0 ||
          spec.fixed_latent.size() == 0)
        throw ConfigError("interpolate: embedding endpoints or latent missing");
      c = u * spec.c_a.template cast<T>() + t * spec.c_b.template cast<T>();
      z = spec.fixed_latent.template cast<T>();
    }
    frames.col(i) = generate(g, c, Mat<T>(z)).col(0);
  }
  return frames;
}

// Row-major tiling with a constant-valued border of `pad` pixels around and
// between cells. Output side: rows*h + (rows+1)*pad.
inline VecF render_grid(const MatF& images, int h, int w, int ch, int rows,
                        int cols, int pad, float pad_value, int* out_h,
                        int* out_w) {
  if (rows < 1 || cols < 1 || pad < 0)
    throw ConfigError("render_grid: invalid layout");
  if (static_cast<Eigen::Index>(rows) * cols > images.cols())
    throw DataError("render_grid: not enough images for a " +
                    std::to_string(rows) + "x" + std::to_string(cols) +
                    " grid");
  if (images.rows() != static_cast<Eigen::Index>(ch) * h * w)
    throw ShapeError("render_grid: image dimensions mismatch");
  const int gh = rows * h + (rows + 1) * pad;
  const int gw = cols * w + (cols + 1) * pad;
  VecF grid = VecF::Constant(static_cast<Eigen::Index>(ch) * gh * gw,
                             pad_value);
  for (int r = 0; r < rows; ++r) {
    for (int cidx = 0; cidx < cols; ++cidx) {
      const auto img = images.col(static_cast<Eigen::Index>(r) * cols + cidx);
      const int oy = pad + r * (h + pad);
      const int ox = pad + cidx * (w + pad);
      for (int c = 0; c < ch; ++c) {
        for (int y = 0; y < h; ++y) {
          for (int x = 0; x < w; ++x) {
            grid[(static_cast<Eigen::Index>(c) * gh + oy + y) * gw + ox + x] =
                img[(static_cast<Eigen::Index>(c) * h + y) * w + x];
          }
        }
      }
    }
  }
  if (out_h) *out_h = gh;
  if (out_w) *out_w = gw;
  return grid;
}

}  // namespace embsurg
