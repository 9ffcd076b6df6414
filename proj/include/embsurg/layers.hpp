#pragma once

// Minimal dense/conv layer kit with explicit forward and backward passes.
// Free functions over parameter structs; callers own all activation caches,
// so parameter structs stay immutable during inference and the nets are
// safe to share across threads.
//
// Batch convention: one sample per column. Image columns are flattened
// channel-major: index (c*H + y)*W + x.
//
// All activations are smooth (GELU / tanh), which keeps finite-difference
// gradient checks well conditioned.

#include "embsurg/core.hpp"

#include <cmath>
#include <type_traits>

namespace embsurg {

// ---------------------------------------------------------------- dense --

template <class T>
struct Dense {
  Mat<T> w;  // [out, in]
  Mat<T> b;  // [out, 1]
};

template <class T>
Mat<T> dense_fwd(const Dense<T>& d, const Mat<T>& x) {
  return (d.w * x).colwise() + d.b.col(0);
}

// Returns dx; accumulates parameter gradients into *grad when non-null.
template <class T>
Mat<T> dense_bwd(const Dense<T>& d, const Mat<T>& x,
                 const std::type_identity_t<Mat<T>>& dy,
                 std::type_identity_t<Dense<T>>* grad, bool want_dx = true) {
  if (grad) {
    grad->w.noalias() += dy * x.transpose();
    grad->b.col(0).noalias() += dy.rowwise().sum();
  }
  if (!want_dx) return Mat<T>();
  return d.w.transpose() * dy;
}

// ----------------------------------------------------------- activations --

template <class T>
void gelu_inplace(Mat<T>& x) {
  const T inv_sqrt2 = static_cast<T>(0.7071067811865475);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const T v = x.data()[i];
    x.data()[i] =
        static_cast<T>(0.5) * v *
        (static_cast<T>(1) + static_cast<T>(std::erf(v * inv_sqrt2)));
  }
}

template <class T>
Mat<T> gelu(Mat<T> x) {
  gelu_inplace(x);
  return x;
}

// dy is consumed; pre is the cached pre-activation.
template <class T>
Mat<T> gelu_bwd(const Mat<T>& pre, Mat<T> dy) {
  const T inv_sqrt2 = static_cast<T>(0.7071067811865475);
  const T inv_sqrt2pi = static_cast<T>(0.3989422804014327);
  for (Eigen::Index i = 0; i < dy.size(); ++i) {
    const T v = pre.data()[i];
    const T cdf = static_cast<T>(0.5) *
                  (static_cast<T>(1) + static_cast<T>(std::erf(v * inv_sqrt2)));
    const T pdf = inv_sqrt2pi * static_cast<T>(std::exp(-0.5 * double(v) * double(v)));
    dy.data()[i] *= cdf + v * pdf;
  }
  return dy;
}

template <class T>
Mat<T> tanh_fwd(const Mat<T>& x) {
  return x.array().tanh().matrix();
}

// out is the cached tanh output (not the pre-activation).
template <class T>
Mat<T> tanh_bwd(const Mat<T>& out, Mat<T> dy) {
  dy.array() *= (T(1) - out.array().square());
  return dy;
}

// --------------------------------------------------------------- softmax --

// Column-wise softmax of logits [K, n].
template <class T>
Mat<T> softmax_cols(const Mat<T>& logits) {
  Mat<T> p = logits;
  for (Eigen::Index j = 0; j < p.cols(); ++j) {
    auto col = p.col(j);
    col.array() -= col.maxCoeff();
    col = col.array().exp().matrix();
    col /= col.sum();
  }
  return p;
}

// Column-wise log-softmax with the spec'd probability floor applied in log
// space, keeping log-probabilities finite for arbitrarily bad logits.
template <class T>
Mat<T> log_softmax_cols(const Mat<T>& logits, double prob_floor = 1e-12) {
  const T floor_log = static_cast<T>(std::log(prob_floor));
  Mat<T> lp = logits;
  for (Eigen::Index j = 0; j < lp.cols(); ++j) {
    auto col = lp.col(j);
    const T mx = col.maxCoeff();
    const T lse = mx + static_cast<T>(std::log(
                           double((col.array() - mx).exp().sum())));
    col.array() -= lse;
    col = col.array().max(floor_log).matrix();
  }
  return lp;
}

// ------------------------------------------------------------------ conv --

// 3x3 convolution, stride 1, zero padding 1 (spatial size preserved).
template <class T>
struct Conv3x3 {
  int in_ch = 0;
  int out_ch = 0;
  Mat<T> w;  // [out_ch, in_ch*9], row-of-kernel index (c*3 + ky)*3 + kx
  Mat<T> b;  // [out_ch, 1]
};

// Expands x [in_ch*H*W, n] into col [n*H*W, in_ch*9]; sample s occupies
// rows [s*H*W, (s+1)*H*W). Column r corresponds to kernel entry
// (c, ky, kx) with r = (c*3 + ky)*3 + kx; pixel runs are contiguous down
// each column.
template <class T>
void im2col3(const Mat<T>& x, int ch, int h, int w, Mat<T>& col) {
  const Eigen::Index n = x.cols();
  const int hw = h * w;
  col.resize(n * hw, static_cast<Eigen::Index>(ch) * 9);
  for (int c = 0; c < ch; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const Eigen::Index r = (static_cast<Eigen::Index>(c) * 3 + ky) * 3 + kx;
        T* column = col.col(r).data();
        for (Eigen::Index s = 0; s < n; ++s) {
          const T* src = x.col(s).data() + static_cast<Eigen::Index>(c) * hw;
          T* base = column + s * hw;
          for (int oy = 0; oy < h; ++oy) {
            T* dst = base + static_cast<Eigen::Index>(oy) * w;
            const int iy = oy + ky - 1;
            if (iy < 0 || iy >= h) {
              for (int ox = 0; ox < w; ++ox) dst[ox] = T(0);
              continue;
            }
            const T* row = src + static_cast<Eigen::Index>(iy) * w;
            for (int ox = 0; ox < w; ++ox) {
              const int ix = ox + kx - 1;
              dst[ox] = (ix < 0 || ix >= w) ? T(0) : row[ix];
            }
          }
        }
      }
    }
  }
}

// Scatters col-space gradients [n*H*W, in_ch*9] back onto dx [in_ch*H*W, n].
template <class T>
void col2im3(const Mat<T>& dcol, int ch, int h, int w, Mat<T>& dx) {
  const int hw = h * w;
  const Eigen::Index n = dcol.rows() / hw;
  dx.setZero(static_cast<Eigen::Index>(ch) * hw, n);
  for (int c = 0; c < ch; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      for (int kx = 0; kx < 3; ++kx) {
        const Eigen::Index r = (static_cast<Eigen::Index>(c) * 3 + ky) * 3 + kx;
        const T* column = dcol.col(r).data();
        for (Eigen::Index s = 0; s < n; ++s) {
          T* dst = dx.col(s).data() + static_cast<Eigen::Index>(c) * hw;
          const T* base = column + s * hw;
          for (int oy = 0; oy < h; ++oy) {
            const int iy = oy + ky - 1;
            if (iy < 0 || iy >= h) continue;
            const T* src = base + static_cast<Eigen::Index>(oy) * w;
            T* row = dst + static_cast<Eigen::Index>(iy) * w;
            for (int ox = 0; ox < w; ++ox) {
              const int ix = ox + kx - 1;
              if (ix >= 0 && ix < w) row[ix] += src[ox];
            }
          }
        }
      }
    }
  }
}

// Forward pass; fills *col_cache (required for the backward pass).
template <class T>
Mat<T> conv_fwd(const Conv3x3<T>& conv, const Mat<T>& x, int h, int w,
                std::type_identity_t<Mat<T>>* col_cache) {
  Mat<T> local_col;
  Mat<T>& col = col_cache ? *col_cache : local_col;
  im2col3(x, conv.in_ch, h, w, col);
  const Eigen::Index n = x.cols();
  const int hw = h * w;
  Mat<T> y(static_cast<Eigen::Index>(conv.out_ch) * hw, n);
  for (Eigen::Index s = 0; s < n; ++s) {
    // One sample's output block viewed as [hw, out_ch]; its column-major
    // memory is exactly the channel-major layout of y's column.
    Eigen::Map<Mat<T>> out(y.col(s).data(), hw, conv.out_ch);
    out.noalias() = col.middleRows(s * hw, hw) * conv.w.transpose();
    for (int co = 0; co < conv.out_ch; ++co) {
      out.col(co).array() += conv.b(co, 0);
    }
  }
  return y;
}

// Backward pass. dy is [out_ch*H*W, n]; returns dx when want_dx.
template <class T>
Mat<T> conv_bwd(const Conv3x3<T>& conv, const Mat<T>& col,
                const std::type_identity_t<Mat<T>>& dy, int h, int w,
                std::type_identity_t<Conv3x3<T>>* grad, bool want_dx = true) {
  const Eigen::Index n = dy.cols();
  const int hw = h * w;
  Mat<T> dcol;
  if (want_dx) dcol.resize(n * hw, static_cast<Eigen::Index>(conv.in_ch) * 9);
  for (Eigen::Index s = 0; s < n; ++s) {
    Eigen::Map<const Mat<T>> dout(dy.col(s).data(), hw, conv.out_ch);
    if (grad) {
      grad->w.noalias() += dout.transpose() * col.middleRows(s * hw, hw);
      grad->b.col(0).noalias() += dout.colwise().sum().transpose();
    }
    if (want_dx) {
      dcol.middleRows(s * hw, hw).noalias() = dout * conv.w;
    }
  }
  if (!want_dx) return Mat<T>();
  Mat<T> dx;
  col2im3(dcol, conv.in_ch, h, w, dx);
  return dx;
}

// ------------------------------------------------------ pool / upsample --

// 2x2 average pooling, stride 2. Spatial dims must be even.
template <class T>
Mat<T> avgpool2_fwd(const Mat<T>& x, int ch, int h, int w) {
  const Eigen::Index n = x.cols();
  const int oh = h / 2, ow = w / 2;
  Mat<T> y(static_cast<Eigen::Index>(ch) * oh * ow, n);
  for (Eigen::Index s = 0; s < n; ++s) {
    const T* src = x.col(s).data();
    T* dst = y.col(s).data();
    for (int c = 0; c < ch; ++c) {
      const T* plane = src + static_cast<Eigen::Index>(c) * h * w;
      T* out = dst + static_cast<Eigen::Index>(c) * oh * ow;
      for (int oy = 0; oy < oh; ++oy) {
        const T* r0 = plane + static_cast<Eigen::Index>(2 * oy) * w;
        const T* r1 = r0 + w;
        for (int ox = 0; ox < ow; ++ox) {
          out[oy * ow + ox] = static_cast<T>(0.25) *
                              (r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] +
                               r1[2 * ox + 1]);
        }
      }
    }
  }
  return y;
}

template <class T>
Mat<T> avgpool2_bwd(const Mat<T>& dy, int ch, int h, int w) {
  const Eigen::Index n = dy.cols();
  const int oh = h / 2, ow = w / 2;
  Mat<T> dx(static_cast<Eigen::Index>(ch) * h * w, n);
  for (Eigen::Index s = 0; s < n; ++s) {
    const T* src = dy.col(s).data();
    T* dst = dx.col(s).data();
    for (int c = 0; c < ch; ++c) {
      const T* g = src + static_cast<Eigen::Index>(c) * oh * ow;
      T* plane = dst + static_cast<Eigen::Index>(c) * h * w;
      for (int oy = 0; oy < oh; ++oy) {
        T* r0 = plane + static_cast<Eigen::Index>(2 * oy) * w;
        T* r1 = r0 + w;
        for (int ox = 0; ox < ow; ++ox) {
          const T v = static_cast<T>(0.25) * g[oy * ow + ox];
          r0[2 * ox] = v;
          r0[2 * ox + 1] = v;
          r1[2 * ox] = v;
          r1[2 * ox + 1] = v;
        }
      }
    }
  }
  return dx;
}

// Nearest-neighbour 2x upsampling.
template <class T>
Mat<T> upsample2_fwd(const Mat<T>& x, int ch, int h, int w) {
  const Eigen::Index n = x.cols();
  const int oh = h * 2, ow = w * 2;
  Mat<T> y(static_cast<Eigen::Index>(ch) * oh * ow, n);
  for (Eigen::Index s = 0; s < n; ++s) {
    const T* src = x.col(s).data();
    T* dst = y.col(s).data();
    for (int c = 0; c < ch; ++c) {
      const T* plane = src + static_cast<Eigen::Index>(c) * h * w;
      T* out = dst + static_cast<Eigen::Index>(c) * oh * ow;
      for (int y0 = 0; y0 < h; ++y0) {
        for (int x0 = 0; x0 < w; ++x0) {
          const T v = plane[y0 * w + x0];
          T* o = out + static_cast<Eigen::Index>(2 * y0) * ow + 2 * x0;
          o[0] = v;
          o[1] = v;
          o[ow] = v;
          o[ow + 1] = v;
        }
      }
    }
  }
  return y;
}

// h, w are the *input* (pre-upsampling) dims.
template <class T>
Mat<T> upsample2_bwd(const Mat<T>& dy, int ch, int h, int w) {
  const Eigen::Index n = dy.cols();
  const int ow = w * 2;
  Mat<T> dx(static_cast<Eigen::Index>(ch) * h * w, n);
  for (Eigen::Index s = 0; s < n; ++s) {
    const T* src = dy.col(s).data();
    T* dst = dx.col(s).data();
    for (int c = 0; c < ch; ++c) {
      const T* g = src + static_cast<Eigen::Index>(c) * h * w * 4;
      T* plane = dst + static_cast<Eigen::Index>(c) * h * w;
      for (int y0 = 0; y0 < h; ++y0) {
        for (int x0 = 0; x0 < w; ++x0) {
          const T* o = g + static_cast<Eigen::Index>(2 * y0) * ow + 2 * x0;
          plane[y0 * w + x0] = o[0] + o[1] + o[ow] + o[ow + 1];
        }
      }
    }
  }
  return dx;
}

// ------------------------------------------------------------ bilinear --

// Bilinear resize between square images (align-corners=false convention).
// A fixed linear map, so the backward pass is its transpose.
template <class T>
Mat<T> bilinear_resize(const Mat<T>& x, int ch, int h_in, int w_in, int h_out,
                       int w_out) {
  if (h_in == h_out && w_in == w_out) return x;
  const Eigen::Index n = x.cols();
  Mat<T> y(static_cast<Eigen::Index>(ch) * h_out * w_out, n);
  const double sy = static_cast<double>(h_in) / h_out;
  const double sx = static_cast<double>(w_in) / w_out;
  for (Eigen::Index s = 0; s < n; ++s) {
    const T* src = x.col(s).data();
    T* dst = y.col(s).data();
    for (int c = 0; c < ch; ++c) {
      const T* plane = src + static_cast<Eigen::Index>(c) * h_in * w_in;
      T* out = dst + static_cast<Eigen::Index>(c) * h_out * w_out;
      for (int oy = 0; oy < h_out; ++oy) {
        const double fy = std::max(0.0, (oy + 0.5) * sy - 0.5);
        const int y0 = std::min(static_cast<int>(fy), h_in - 1);
        const int y1 = std::min(y0 + 1, h_in - 1);
        const double wy = fy - y0;
        for (int ox = 0; ox < w_out; ++ox) {
          const double fx = std::max(0.0, (ox + 0.5) * sx - 0.5);
          const int x0 = std::min(static_cast<int>(fx), w_in - 1);
          const int x1 = std::min(x0 + 1, w_in - 1);
          const double wx = fx - x0;
          const double v =
              (1 - wy) * ((1 - wx) * plane[y0 * w_in + x0] +
                          wx * plane[y0 * w_in + x1]) +
              wy * ((1 - wx) * plane[y1 * w_in + x0] +
                    wx * plane[y1 * w_in + x1]);
          out[oy * w_out + ox] = static_cast<T>(v);
        }
      }
    }
  }
  return y;
}

// Transpose of bilinear_resize: scatters output-space gradients back to the
// input grid.
template <class T>
Mat<T> bilinear_resize_bwd(const Mat<T>& dy, int ch, int h_in, int w_in,
                           int h_out, int w_out) {
  if (h_in == h_out && w_in == w_out) return dy;
  const Eigen::Index n = dy.cols();
  Mat<T> dx = Mat<T>::Zero(static_cast<Eigen::Index>(ch) * h_in * w_in, n);
  const double sy = static_cast<double>(h_in) / h_out;
  const double sx = static_cast<double>(w_in) / w_out;
  for (Eigen::Index s = 0; s < n; ++s) {
    const T* src = dy.col(s).data();
    T* dst = dx.col(s).data();
    for (int c = 0; c < ch; ++c) {
      const T* g = src + static_cast<Eigen::Index>(c) * h_out * w_out;
      T* plane = dst + static_cast<Eigen::Index>(c) * h_in * w_in;
      for (int oy = 0; oy < h_out; ++oy) {
        const double fy = std::max(0.0, (oy + 0.5) * sy - 0.5);
        const int y0 = std::min(static_cast<int>(fy), h_in - 1);
        const int y1 = std::min(y0 + 1, h_in - 1);
        const double wy = fy - y0;
        for (int ox = 0; ox < w_out; ++ox) {
          const double fx = std::max(0.0, (ox + 0.5) * sx - 0.5);
          const int x0 = std::min(static_cast<int>(fx), w_in - 1);
          const int x1 = std::min(x0 + 1, w_in - 1);
          const double wx = fx - x0;
          const T v = g[oy * w_out + ox];
          plane[y0 * w_in + x0] += static_cast<T>((1 - wy) * (1 - wx)) * v;
          plane[y0 * w_in + x1] += static_cast<T>((1 - wy) * wx) * v;
          plane[y1 * w_in + x0] += static_cast<T>(wy * (1 - wx)) * v;
          plane[y1 * w_in + x1] += static_cast<T>(wy * wx) * v;
        }
      }
    }
  }
  return dx;
}

// ------------------------------------------------------------------ adam --

template <class T>
struct AdamOptimizer {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int t = 0;
  std::vector<Mat<T>> m, v;

  void init(const std::vector<Mat<T>*>& params) {
    m.clear();
    v.clear();
    for (const auto* p : params) {
      m.push_back(Mat<T>::Zero(p->rows(), p->cols()));
      v.push_back(Mat<T>::Zero(p->rows(), p->cols()));
    }
    t = 0;
  }

  // Gradient-descent step; pass negated gradients to ascend.
  void step(const std::vector<Mat<T>*>& params,
            const std::vector<const Mat<T>*>& grads) {
    ++t;
    const double bc1 = 1.0 - std::pow(beta1, t);
    const double bc2 = 1.0 - std::pow(beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = static_cast<T>(beta1) * m[i] +
             static_cast<T>(1.0 - beta1) * (*grads[i]);
      v[i] = (static_cast<T>(beta2) * v[i].array() +
              static_cast<T>(1.0 - beta2) * grads[i]->array().square())
                 .matrix();
      const T step_size = static_cast<T>(lr / bc1);
      const T denom_scale = static_cast<T>(1.0 / std::sqrt(bc2));
      params[i]->array() -=
          step_size * m[i].array() /
          (v[i].array().sqrt() * denom_scale + static_cast<T>(eps));
    }
  }
};

}  // namespace embsurg
