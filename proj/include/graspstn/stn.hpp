#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <vector>

#include "graspstn/geometry.hpp"
#include "graspstn/ops.hpp"
#include "graspstn/tensor.hpp"

// Spatial transformer machinery. Normalized coordinates follow the
// align-corners convention for sampling: -1 maps to pixel 0 and +1 to pixel
// W-1. A transform maps OUTPUT normalized coordinates to INPUT normalized
// coordinates, so chained sampling stages compose by plain homogeneous
// matrix product with the earlier stage on the left.

namespace graspstn {

/// 2x3 affine map p_in = A * p_out + t in normalized coordinates.
struct AffineTransform2D {
  double a11 = 1, a12 = 0, a13 = 0;
  double a21 = 0, a22 = 1, a23 = 0;

  static AffineTransform2D identity() { return {}; }

  static AffineTransform2D translation(double tx, double ty) {
    return {1, 0, tx, 0, 1, ty};
  }

  /// Pure rotation, zero translation.
  static AffineTransform2D rotation(double theta_rad) {
    const double c = std::cos(theta_rad), s = std::sin(theta_rad);
    return {c, -s, 0, s, c, 0};
  }

  static AffineTransform2D scale_translation(double sx, double sy, double tx,
                                             double ty) {
    return {sx, 0, tx, 0, sy, ty};
  }

  Eigen::Vector2d apply(const Eigen::Vector2d& p) const {
    return {a11 * p.x() + a12 * p.y() + a13, a21 * p.x() + a22 * p.y() + a23};
  }

  Eigen::Matrix3d homogeneous() const {
    Eigen::Matrix3d m;
    m << a11, a12, a13, a21, a22, a23, 0, 0, 1;
    return m;
  }

  static AffineTransform2D from_homogeneous(const Eigen::Matrix3d& m) {
    return {m(0, 0), m(0, 1), m(0, 2), m(1, 0), m(1, 1), m(1, 2)};
  }

  bool all_finite() const {
    return std::isfinite(a11) && std::isfinite(a12) && std::isfinite(a13) &&
           std::isfinite(a21) && std::isfinite(a22) && std::isfinite(a23);
  }

  enum class Form { Translation, Rotation, ScaleTranslation, General };

  /// Classify against the stage-restricted constructor forms.
  Form classify(double tol = 1e-9) const;

  /// Length-6 constant tensor [a11,a12,a13,a21,a22,a23].
  template <typename T>
  Tensor<T> to_tensor() const {
    return Tensor<T>::from_vector(
        Shape{6},
        {static_cast<T>(a11), static_cast<T>(a12), static_cast<T>(a13),
         static_cast<T>(a21), static_cast<T>(a22), static_cast<T>(a23)});
  }
};

/// compose(outer, inner): the single transform whose grid reproduces
/// sampling through `outer`'s stage first, then `inner`'s stage.
AffineTransform2D compose(const AffineTransform2D& outer,
                          const AffineTransform2D& inner);

/// Left fold of compose over a stage-ordered chain (front = first stage).
AffineTransform2D compose_chain(std::span<const AffineTransform2D> chain);

/// Lattice of normalized sampling positions, coords: [H,W,2] (x then y).
template <typename T>
struct SamplingGrid {
  Tensor<T> coords;
  Index height() const { return coords.dim(0); }
  Index width() const { return coords.dim(1); }
};

namespace detail {
// Align-corners lattice coordinate: -1 + 2i/(n-1); 0 when n == 1.
inline double lattice_coord(Index i, Index n) {
  return n > 1 ? -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(n - 1)
               : 0.0;
}
}  // namespace detail

/// Sampling grid for `theta` (length-6 tensor, differentiable w.r.t. all six
/// coefficients): coords[i,j] = theta * (x_j, y_i, 1).
template <typename T>
SamplingGrid<T> affine_grid(const Tensor<T>& theta, Index h_out, Index w_out) {
  if (theta.rank() != 1 || theta.dim(0) != 6) {
    throw ShapeError("affine_grid: theta must be a length-6 tensor");
  }
  if (h_out < 1 || w_out < 1) {
    throw ContractError("affine_grid: output size must be positive");
  }
  if (!theta.all_finite()) throw NumericError("affine_grid: non-finite theta");

  auto out = Tensor<T>::make_op(
      Shape{h_out, w_out, 2}, {theta},
      [tn = theta.node(), h_out, w_out](auto& self) {
        if (!tn->requires_grad) return;
        T d[6] = {0, 0, 0, 0, 0, 0};
        Index k = 0;
        for (Index i = 0; i < h_out; ++i) {
          const T y = static_cast<T>(detail::lattice_coord(i, h_out));
          for (Index j = 0; j < w_out; ++j) {
            const T x = static_cast<T>(detail::lattice_coord(j, w_out));
            const T gx = self.grad[k++];
            const T gy = self.grad[k++];
            d[0] += gx * x;
            d[1] += gx * y;
            d[2] += gx;
            d[3] += gy * x;
            d[4] += gy * y;
            d[5] += gy;
          }
        }
        for (int t = 0; t < 6; ++t) tn->grad[t] += d[t];
      });

  const T* t = theta.data();
  Index k = 0;
  auto& v = out.raw_values();
  for (Index i = 0; i < h_out; ++i) {
    const T y = static_cast<T>(detail::lattice_coord(i, h_out));
    for (Index j = 0; j < w_out; ++j) {
      const T x = static_cast<T>(detail::lattice_coord(j, w_out));
      v[k++] = t[0] * x + t[1] * y + t[2];
      v[k++] = t[3] * x + t[4] * y + t[5];
    }
  }
  return SamplingGrid<T>{out};
}

/// Constant-transform convenience overload.
template <typename T>
SamplingGrid<T> affine_grid(const AffineTransform2D& t, Index h_out,
                            Index w_out) {
  if (!t.all_finite()) throw NumericError("affine_grid: non-finite transform");
  return affine_grid(t.template to_tensor<T>(), h_out, w_out);
}

/// Bilinear sampling of input [N,C,H,W] at grid [H',W',2] -> [N,C,H',W'].
/// Out-of-bounds positions read zero; gradients flow into both the input
/// pixels and the grid coordinates.
template <typename T>
Tensor<T> bilinear_sample(const Tensor<T>& input, const SamplingGrid<T>& grid) {
  if (input.rank() != 4) throw ShapeError("bilinear_sample: input [N,C,H,W]");
  const Tensor<T>& g = grid.coords;
  if (g.rank() != 3 || g.dim(2) != 2) {
    throw ShapeError("bilinear_sample: grid [H,W,2]");
  }
  if (!g.all_finite()) {
    throw NumericError("bilinear_sample: non-finite grid coordinates");
  }
  const Index n = input.dim(0), c = input.dim(1), h = input.dim(2),
              w = input.dim(3);
  const Index gh = g.dim(0), gw = g.dim(1);
  const Index plane = h * w, opix = gh * gw;

  auto out = Tensor<T>::make_op(
      Shape{n, c, gh, gw}, {input, g},
      [in = input.node(), gn = g.node(), n, c, h, w, gh, gw, plane,
       opix](auto& self) {
        const T sx = static_cast<T>(w > 1 ? (w - 1) : 0) / T(2);
        const T sy = static_cast<T>(h > 1 ? (h - 1) : 0) / T(2);
        for (Index p = 0; p < opix; ++p) {
          const T px = (gn->values[2 * p] + 1) * sx;
          const T py = (gn->values[2 * p + 1] + 1) * sy;
          const Index x0 = static_cast<Index>(std::floor(px));
          const Index y0 = static_cast<Index>(std::floor(py));
          const T fx = px - static_cast<T>(x0);
          const T fy = py - static_cast<T>(y0);
          const bool x0v = x0 >= 0 && x0 < w, x1v = x0 + 1 >= 0 && x0 + 1 < w;
          const bool y0v = y0 >= 0 && y0 < h, y1v = y0 + 1 >= 0 && y0 + 1 < h;
          T dpx = 0, dpy = 0;
          for (Index i = 0; i < n; ++i) {
            for (Index ch = 0; ch < c; ++ch) {
              const Index base = (i * c + ch) * plane;
              const T go = self.grad[(i * c + ch) * opix + p];
              const T v00 = (x0v && y0v) ? in->values[base + y0 * w + x0] : T(0);
              const T v01 =
                  (x1v && y0v) ? in->values[base + y0 * w + x0 + 1] : T(0);
              const T v10 =
                  (x0v && y1v) ? in->values[base + (y0 + 1) * w + x0] : T(0);
              const T v11 =
                  (x1v && y1v) ? in->values[base + (y0 + 1) * w + x0 + 1] : T(0);
              if (in->requires_grad) {
                if (x0v && y0v)
                  in->grad[base + y0 * w + x0] += go * (1 - fx) * (1 - fy);
                if (x1v && y0v)
                  in->grad[base + y0 * w + x0 + 1] += go * fx * (1 - fy);
                if (x0v && y1v)
                  in->grad[base + (y0 + 1) * w + x0] += go * (1 - fx) * fy;
                if (x1v && y1v)
                  in->grad[base + (y0 + 1) * w + x0 + 1] += go * fx * fy;
              }
              dpx += go * ((1 - fy) * (v01 - v00) + fy * (v11 - v10));
              dpy += go * ((1 - fx) * (v10 - v00) + fx * (v11 - v01));
            }
          }
          if (gn->requires_grad) {
            gn->grad[2 * p] += dpx * sx;
            gn->grad[2 * p + 1] += dpy * sy;
          }
        }
      });

  const T sx = static_cast<T>(w > 1 ? (w - 1) : 0) / T(2);
  const T sy = static_cast<T>(h > 1 ? (h - 1) : 0) / T(2);
  auto& ov = out.raw_values();
  for (Index p = 0; p < opix; ++p) {
    const T px = (g.array()[2 * p] + 1) * sx;
    const T py = (g.array()[2 * p + 1] + 1) * sy;
    const Index x0 = static_cast<Index>(std::floor(px));
    const Index y0 = static_cast<Index>(std::floor(py));
    const T fx = px - static_cast<T>(x0);
    const T fy = py - static_cast<T>(y0);
    const bool x0v = x0 >= 0 && x0 < w, x1v = x0 + 1 >= 0 && x0 + 1 < w;
    const bool y0v = y0 >= 0 && y0 < h, y1v = y0 + 1 >= 0 && y0 + 1 < h;
    const T w00 = (1 - fx) * (1 - fy), w01 = fx * (1 - fy);
    const T w10 = (1 - fx) * fy, w11 = fx * fy;
    for (Index i = 0; i < n; ++i) {
      for (Index ch = 0; ch < c; ++ch) {
        const T* plane_ptr = input.data() + (i * c + ch) * plane;
        T acc = 0;
        if (x0v && y0v) acc += w00 * plane_ptr[y0 * w + x0];
        if (x1v && y0v) acc += w01 * plane_ptr[y0 * w + x0 + 1];
        if (x0v && y1v) acc += w10 * plane_ptr[(y0 + 1) * w + x0];
        if (x1v && y1v) acc += w11 * plane_ptr[(y0 + 1) * w + x0 + 1];
        ov[(i * c + ch) * opix + p] = acc;
      }
    }
  }
  return out;
}

/// Decode a stage-ordered transform chain into the grasp rectangle that is
/// the image of the canonical centered rectangle (canonical_w x canonical_h
/// px, theta = 0) under the chain. Pixel mapping: x_px = (x_norm + 1) * W/2.
GraspRect transform_to_grasp(std::span<const AffineTransform2D> chain,
                             double image_w, double image_h, double canonical_w,
                             double canonical_h);

// --- differentiable theta assembly for the pipeline stages ---

/// [s, 0, tx, 0, s, ty] with fixed isotropic scale s.
template <typename T>
Tensor<T> theta_crop(const Tensor<T>& tx, const Tensor<T>& ty, T fixed_scale) {
  auto zero = Tensor<T>::scalar(0);
  auto s = Tensor<T>::scalar(fixed_scale);
  return concat1d<T>({s, zero, tx, zero, s, ty});
}

/// [c, -s, 0, s, c, 0].
template <typename T>
Tensor<T> theta_rotation(const Tensor<T>& cos_t, const Tensor<T>& sin_t) {
  auto zero = Tensor<T>::scalar(0);
  return concat1d<T>(
      {cos_t, neg(sin_t), zero, sin_t, cos_t, zero.detach()});
}

/// [sx, 0, tx, 0, sy, ty].
template <typename T>
Tensor<T> theta_scale_translation(const Tensor<T>& sx, const Tensor<T>& sy,
                                  const Tensor<T>& tx, const Tensor<T>& ty) {
  auto zero = Tensor<T>::scalar(0);
  return concat1d<T>({sx, zero, tx, zero.detach(), sy, ty});
}

}  // namespace graspstn
