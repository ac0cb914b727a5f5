#pragma once

#include <Eigen/Core>

#include <cmath>
#include <string>
#include <vector>

#include "graspstn/tensor.hpp"

// Differentiable free functions over Tensor<T>. Every op fills its output,
// then (in grad mode) registers a closure that scatters the upstream
// gradient into its inputs. Shapes are validated eagerly; there is no
// broadcasting beyond what the pipeline needs.

namespace graspstn {

namespace detail {

template <typename T>
inline void check_same_shape(const char* op, const Tensor<T>& a,
                             const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <typename T>
inline void check_finite(const char* op, const Tensor<T>& t) {
  if (!t.all_finite()) {
    throw NumericError(std::string(op) + ": non-finite values produced");
  }
}

template <typename T>
using MatMap = Eigen::Map<
    Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap = Eigen::Map<
    const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ColMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise arithmetic

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("add", a, b);
  auto out = Tensor<T>::make_op(
      a.shape(), {a, b}, [an = a.node(), bn = b.node()](auto& self) {
        if (an->requires_grad) an->grad += self.grad;
        if (bn->requires_grad) bn->grad += self.grad;
      });
  out.raw_values() = a.array() + b.array();
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("sub", a, b);
  auto out = Tensor<T>::make_op(
      a.shape(), {a, b}, [an = a.node(), bn = b.node()](auto& self) {
        if (an->requires_grad) an->grad += self.grad;
        if (bn->requires_grad) bn->grad -= self.grad;
      });
  out.raw_values() = a.array() - b.array();
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("mul", a, b);
  auto out = Tensor<T>::make_op(
      a.shape(), {a, b}, [an = a.node(), bn = b.node()](auto& self) {
        if (an->requires_grad) an->grad += self.grad * bn->values;
        if (bn->requires_grad) bn->grad += self.grad * an->values;
      });
  out.raw_values() = a.array() * b.array();
  return out;
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check_same_shape("div", a, b);
  auto out = Tensor<T>::make_op(
      a.shape(), {a, b}, [an = a.node(), bn = b.node()](auto& self) {
        if (an->requires_grad) an->grad += self.grad / bn->values;
        if (bn->requires_grad)
          bn->grad -= self.grad * an->values / (bn->values * bn->values);
      });
  out.raw_values() = a.array() / b.array();
  detail::check_finite("div", out);
  return out;
}

template <typename T>
Tensor<T> neg(const Tensor<T>& x) {
  auto out = Tensor<T>::make_op(x.shape(), {x}, [xn = x.node()](auto& self) {
    if (xn->requires_grad) xn->grad -= self.grad;
  });
  out.raw_values() = -x.array();
  return out;
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T c) {
  auto out = Tensor<T>::make_op(x.shape(), {x}, [xn = x.node()](auto& self) {
    if (xn->requires_grad) xn->grad += self.grad;
  });
  out.raw_values() = x.array() + c;
  return out;
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& x, T c) {
  auto out = Tensor<T>::make_op(x.shape(), {x}, [xn = x.node(), c](auto& self) {
    if (xn->requires_grad) xn->grad += self.grad * c;
  });
  out.raw_values() = x.array() * c;
  return out;
}

template <typename T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T>
Tensor<T> operator*(T c, const Tensor<T>& x) { return mul_scalar(x, c); }

// ---------------------------------------------------------------------------
// elementwise nonlinearities

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  auto out = Tensor<T>::make_op(x.shape(), {x}, [xn = x.node()](auto& self) {
    if (xn->requires_grad)
      xn->grad += self.grad * (xn->values > static_cast<T>(0)).template cast<T>();
  });
  out.raw_values() = x.array().max(static_cast<T>(0));
  return out;
}

template <typename T>
Tensor<T> tanh_op(const Tensor<T>& x) {
  auto out = Tensor<T>::make_op(x.shape(), {x}, [xn = x.node()](auto& self) {
    if (!xn->requires_grad) return;
    const auto y = xn->values.tanh().eval();
    xn->grad += self.grad * (1 - y * y);
  });
  out.raw_values() = x.array().tanh();
  return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  auto out = Tensor<T>::make_op(x.shape(), {x}, [xn = x.node()](auto& self) {
    if (!xn->requires_grad) return;
    const auto y = ((-xn->values).exp() + 1).inverse().eval();
    xn->grad += self.grad * y * (1 - y);
  });
  out.raw_values() = ((-x.array()).exp() + 1).inverse();
  return out;
}

template <typename T>
Tensor<T> exp_op(const Tensor<T>& x) {
  auto out = Tensor<T>::make_op(x.shape(), {x}, [xn = x.node()](auto& self) {
    if (xn->requires_grad) xn->grad += self.grad * xn->values.exp();
  });
  out.raw_values() = x.array().exp();
  detail::check_finite("exp", out);
  return out;
}

template <typename T>
Tensor<T> log_op(const Tensor<T>& x) {
  auto out = Tensor<T>::make_op(x.shape(), {x}, [xn = x.node()](auto& self) {
    if (xn->requires_grad) xn->grad += self.grad / xn->values;
  });
  out.raw_values() = x.array().log();
  detail::check_finite("log", out);
  return out;
}

template <typename T>
Tensor<T> sqrt_op(const Tensor<T>& x) {
  auto out = Tensor<T>::make_op(x.shape(), {x}, [xn = x.node()](auto& self) {
    if (xn->requires_grad)
      xn->grad += self.grad / (2 * xn->values.sqrt());
  });
  out.raw_values() = x.array().sqrt();
  detail::check_finite("sqrt", out);
  return out;
}

template <typename T>
Tensor<T> sin_op(const Tensor<T>& x) {
  auto out = Tensor<T>::make_op(x.shape(), {x}, [xn = x.node()](auto& self) {
    if (xn->requires_grad) xn->grad += self.grad * xn->values.cos();
  });
  out.raw_values() = x.array().sin();
  return out;
}

template <typename T>
Tensor<T> cos_op(const Tensor<T>& x) {
  auto out = Tensor<T>::make_op(x.shape(), {x}, [xn = x.node()](auto& self) {
    if (xn->requires_grad) xn->grad -= self.grad * xn->values.sin();
  });
  out.raw_values() = x.array().cos();
  return out;
}

/// Elementwise atan2(y, x).
template <typename T>
Tensor<T> atan2_op(const Tensor<T>& y, const Tensor<T>& x) {
  detail::check_same_shape("atan2", y, x);
  auto out = Tensor<T>::make_op(
      y.shape(), {y, x}, [yn = y.node(), xn = x.node()](auto& self) {
        const auto denom =
            (xn->values * xn->values + yn->values * yn->values).eval();
        if (yn->requires_grad) yn->grad += self.grad * xn->values / denom;
        if (xn->requires_grad) xn->grad -= self.grad * yn->values / denom;
      });
  for (Index i = 0; i < y.size(); ++i) {
    out.raw_values()[i] = std::atan2(y.array()[i], x.array()[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions and shape ops

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  auto out = Tensor<T>::make_op(Shape{}, {x}, [xn = x.node()](auto& self) {
    if (xn->requires_grad) xn->grad += self.grad[0];
  });
  out.raw_values()[0] = x.array().sum();
  return out;
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& x) {
  const T inv_n = static_cast<T>(1) / static_cast<T>(x.size());
  auto out =
      Tensor<T>::make_op(Shape{}, {x}, [xn = x.node(), inv_n](auto& self) {
        if (xn->requires_grad) xn->grad += self.grad[0] * inv_n;
      });
  out.raw_values()[0] = x.array().sum() * inv_n;
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(new_shape));
  }
  auto out =
      Tensor<T>::make_op(std::move(new_shape), {x}, [xn = x.node()](auto& self) {
        if (xn->requires_grad) xn->grad += self.grad;
      });
  out.raw_values() = x.array();
  return out;
}

template <typename T>
Tensor<T> flatten(const Tensor<T>& x) {
  return reshape(x, Shape{x.size()});
}

/// Rank-0 view of one element (by flat index).
template <typename T>
Tensor<T> index_scalar(const Tensor<T>& x, Index i) {
  if (i < 0 || i >= x.size()) {
    throw ShapeError("index_scalar: index " + std::to_string(i) +
                     " out of range for " + shape_str(x.shape()));
  }
  auto out = Tensor<T>::make_op(Shape{}, {x}, [xn = x.node(), i](auto& self) {
    if (xn->requires_grad) xn->grad[i] += self.grad[0];
  });
  out.raw_values()[0] = x.array()[i];
  return out;
}

/// Concatenate rank-0/rank-1 tensors into one vector.
template <typename T>
Tensor<T> concat1d(const std::vector<Tensor<T>>& parts) {
  Index total = 0;
  for (const auto& p : parts) {
    if (p.rank() > 1) throw ShapeError("concat1d: inputs must be rank 0 or 1");
    total += p.size();
  }
  std::vector<Index> offsets(parts.size());
  Index off = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    offsets[i] = off;
    off += parts[i].size();
  }
  std::vector<std::shared_ptr<detail::TensorNode<T>>> nodes;
  nodes.reserve(parts.size());
  for (const auto& p : parts) nodes.push_back(p.node());
  auto out = Tensor<T>::make_op(
      Shape{total}, parts, [nodes, offsets](auto& self) {
        for (std::size_t i = 0; i < nodes.size(); ++i) {
          if (nodes[i]->requires_grad) {
            nodes[i]->grad +=
                self.grad.segment(offsets[i], nodes[i]->values.size());
          }
        }
      });
  for (std::size_t i = 0; i < parts.size(); ++i) {
    out.raw_values().segment(offsets[i], parts[i].size()) = parts[i].array();
  }
  return out;
}

/// Columns [j0, j0+len) of a rank-2 tensor.
template <typename T>
Tensor<T> narrow_cols(const Tensor<T>& x, Index j0, Index len) {
  if (x.rank() != 2) throw ShapeError("narrow_cols: rank-2 tensor required");
  const Index n = x.dim(0), m = x.dim(1);
  if (j0 < 0 || len < 1 || j0 + len > m) {
    throw ShapeError("narrow_cols: range out of bounds");
  }
  auto out = Tensor<T>::make_op(
      Shape{n, len}, {x}, [xn = x.node(), n, m, j0, len](auto& self) {
        if (!xn->requires_grad) return;
        for (Index r = 0; r < n; ++r) {
          xn->grad.segment(r * m + j0, len) += self.grad.segment(r * len, len);
        }
      });
  for (Index r = 0; r < n; ++r) {
    out.raw_values().segment(r * len, len) = x.array().segment(r * m + j0, len);
  }
  return out;
}

// ---------------------------------------------------------------------------
// dense / convolution / pooling

/// y = x * W^T + b for x:[N,In], W:[Out,In], b:[Out] -> [N,Out].
template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& weight,
                const Tensor<T>& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || bias.rank() != 1) {
    throw ShapeError("dense: expected x[N,In], W[Out,In], b[Out]");
  }
  const Index n = x.dim(0), in = x.dim(1);
  const Index out_f = weight.dim(0);
  if (weight.dim(1) != in || bias.dim(0) != out_f) {
    throw ShapeError("dense: W " + shape_str(weight.shape()) + ", b " +
                     shape_str(bias.shape()) + " incompatible with x " +
                     shape_str(x.shape()));
  }
  auto out = Tensor<T>::make_op(
      Shape{n, out_f}, {x, weight, bias},
      [xn = x.node(), wn = weight.node(), bn = bias.node(), n, in,
       out_f](auto& self) {
        detail::ConstMatMap<T> dy(self.grad.data(), n, out_f);
        detail::ConstMatMap<T> xm(xn->values.data(), n, in);
        detail::ConstMatMap<T> wm(wn->values.data(), out_f, in);
        if (xn->requires_grad) {
          detail::MatMap<T> dx(xn->grad.data(), n, in);
          dx.noalias() += dy * wm;
        }
        if (wn->requires_grad) {
          detail::MatMap<T> dw(wn->grad.data(), out_f, in);
          dw.noalias() += dy.transpose() * xm;
        }
        if (bn->requires_grad) {
          Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> db(bn->grad.data(),
                                                             out_f);
          db.noalias() += dy.colwise().sum().transpose();
        }
      });
  detail::ConstMatMap<T> xm(x.data(), n, in);
  detail::ConstMatMap<T> wm(weight.data(), out_f, in);
  detail::MatMap<T> ym(out.raw_values().data(), n, out_f);
  ym.noalias() = xm * wm.transpose();
  ym.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(
      bias.data(), out_f);
  return out;
}

namespace detail {

// cols is (C*kH*kW) x (oH*oW), column-major; one column per output pixel.
template <typename T>
void im2col(const T* x, Index c_in, Index h, Index w, Index k_h, Index k_w,
            Index stride, Index pad, Index o_h, Index o_w, T* cols) {
  const Index rows = c_in * k_h * k_w;
  for (Index oy = 0; oy < o_h; ++oy) {
    for (Index ox = 0; ox < o_w; ++ox) {
      T* col = cols + (oy * o_w + ox) * rows;
      Index r = 0;
      for (Index c = 0; c < c_in; ++c) {
        const T* plane = x + c * h * w;
        for (Index ky = 0; ky < k_h; ++ky) {
          const Index iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) {
            for (Index kx = 0; kx < k_w; ++kx) col[r++] = T(0);
            continue;
          }
          const T* row = plane + iy * w;
          for (Index kx = 0; kx < k_w; ++kx) {
            const Index ix = ox * stride - pad + kx;
            col[r++] = (ix >= 0 && ix < w) ? row[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_acc(const T* cols, Index c_in, Index h, Index w, Index k_h,
                Index k_w, Index stride, Index pad, Index o_h, Index o_w,
                T* dx) {
  const Index rows = c_in * k_h * k_w;
  for (Index oy = 0; oy < o_h; ++oy) {
    for (Index ox = 0; ox < o_w; ++ox) {
      const T* col = cols + (oy * o_w + ox) * rows;
      Index r = 0;
      for (Index c = 0; c < c_in; ++c) {
        T* plane = dx + c * h * w;
        for (Index ky = 0; ky < k_h; ++ky) {
          const Index iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) {
            r += k_w;
            continue;
          }
          T* row = plane + iy * w;
          for (Index kx = 0; kx < k_w; ++kx) {
            const Index ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) row[ix] += col[r];
            ++r;
          }
        }
      }
    }
  }
}

}  // namespace detail

/// 2-D convolution, zero padding: x:[N,C,H,W], w:[F,C,kH,kW], b:[F].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias, Index stride = 1, Index pad = 0) {
  if (x.rank() != 4 || weight.rank() != 4 || bias.rank() != 1) {
    throw ShapeError("conv2d: expected x[N,C,H,W], w[F,C,kH,kW], b[F]");
  }
  const Index n = x.dim(0), c_in = x.dim(1), h = x.dim(2), w = x.dim(3);
  const Index f = weight.dim(0), k_h = weight.dim(2), k_w = weight.dim(3);
  if (weight.dim(1) != c_in) {
    throw ShapeError("conv2d: input has " + std::to_string(c_in) +
                     " channels but weight expects " +
                     std::to_string(weight.dim(1)));
  }
  if (bias.dim(0) != f) throw ShapeError("conv2d: bias/filter count mismatch");
  if (stride < 1) throw ContractError("conv2d: stride must be positive");
  if (pad < 0) throw ContractError("conv2d: pad must be non-negative");
  if (h + 2 * pad < k_h || w + 2 * pad < k_w) {
    throw ShapeError("conv2d: kernel larger than padded input");
  }
  if (!x.all_finite()) throw NumericError("conv2d: non-finite input");

  const Index o_h = (h + 2 * pad - k_h) / stride + 1;
  const Index o_w = (w + 2 * pad - k_w) / stride + 1;
  const Index rows = c_in * k_h * k_w, pixels = o_h * o_w;

  auto out = Tensor<T>::make_op(
      Shape{n, f, o_h, o_w}, {x, weight, bias},
      [xn = x.node(), wn = weight.node(), bn = bias.node(), n, c_in, h, w, f,
       k_h, k_w, stride, pad, o_h, o_w, rows, pixels](auto& self) {
        detail::ColMat<T> cols(rows, pixels);
        detail::ConstMatMap<T> wm(wn->values.data(), f, rows);
        for (Index i = 0; i < n; ++i) {
          detail::ConstMatMap<T> dy(self.grad.data() + i * f * pixels, f,
                                    pixels);
          if (wn->requires_grad || xn->requires_grad) {
            detail::im2col(xn->values.data() + i * c_in * h * w, c_in, h, w,
                           k_h, k_w, stride, pad, o_h, o_w, cols.data());
          }
          if (wn->requires_grad) {
            detail::MatMap<T> dw(wn->grad.data(), f, rows);
            dw.noalias() += dy * cols.transpose();
          }
          if (bn->requires_grad) {
            Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> db(bn->grad.data(),
                                                               f);
            db.noalias() += dy.rowwise().sum();
          }
          if (xn->requires_grad) {
            detail::ColMat<T> dcols(rows, pixels);
            dcols.noalias() = wm.transpose() * dy;
            detail::col2im_acc(dcols.data(), c_in, h, w, k_h, k_w, stride, pad,
                               o_h, o_w, xn->grad.data() + i * c_in * h * w);
          }
        }
      });

  detail::ColMat<T> cols(rows, pixels);
  detail::ConstMatMap<T> wm(weight.data(), f, rows);
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> bv(bias.data(), f);
  for (Index i = 0; i < n; ++i) {
    detail::im2col(x.data() + i * c_in * h * w, c_in, h, w, k_h, k_w, stride,
                   pad, o_h, o_w, cols.data());
    detail::MatMap<T> ym(out.raw_values().data() + i * f * pixels, f, pixels);
    ym.noalias() = wm * cols;
    ym.colwise() += bv;
  }
  return out;
}

/// Max pooling, no padding; stores argmax positions for the backward pass.
template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, Index kernel, Index stride = 0) {
  if (x.rank() != 4) throw ShapeError("max_pool2d: expected x[N,C,H,W]");
  if (stride == 0) stride = kernel;
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (kernel < 1 || kernel > h || kernel > w) {
    throw ShapeError("max_pool2d: kernel does not fit input");
  }
  const Index o_h = (h - kernel) / stride + 1;
  const Index o_w = (w - kernel) / stride + 1;

  auto argmax = std::make_shared<std::vector<Index>>(
      static_cast<std::size_t>(n * c * o_h * o_w));
  auto out = Tensor<T>::make_op(
      Shape{n, c, o_h, o_w}, {x}, [xn = x.node(), argmax](auto& self) {
        if (!xn->requires_grad) return;
        for (Index i = 0; i < self.grad.size(); ++i) {
          xn->grad[(*argmax)[static_cast<std::size_t>(i)]] += self.grad[i];
        }
      });

  Index o = 0;
  for (Index i = 0; i < n; ++i) {
    for (Index ch = 0; ch < c; ++ch) {
      const T* plane = x.data() + (i * c + ch) * h * w;
      const Index plane_off = (i * c + ch) * h * w;
      for (Index oy = 0; oy < o_h; ++oy) {
        for (Index ox = 0; ox < o_w; ++ox) {
          T best = plane[oy * stride * w + ox * stride];
          Index best_idx = oy * stride * w + ox * stride;
          for (Index ky = 0; ky < kernel; ++ky) {
            for (Index kx = 0; kx < kernel; ++kx) {
              const Index idx = (oy * stride + ky) * w + (ox * stride + kx);
              if (plane[idx] > best) {
                best = plane[idx];
                best_idx = idx;
              }
            }
          }
          out.raw_values()[o] = best;
          (*argmax)[static_cast<std::size_t>(o)] = plane_off + best_idx;
          ++o;
        }
      }
    }
  }
  return out;
}

/// Spatial mean: [N,C,H,W] -> [N,C].
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("global_avg_pool: expected x[N,C,H,W]");
  const Index n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  const T inv = static_cast<T>(1) / static_cast<T>(hw);
  auto out = Tensor<T>::make_op(
      Shape{n, c}, {x}, [xn = x.node(), n, c, hw, inv](auto& self) {
        if (!xn->requires_grad) return;
        for (Index i = 0; i < n * c; ++i) {
          xn->grad.segment(i * hw, hw) += self.grad[i] * inv;
        }
      });
  for (Index i = 0; i < n * c; ++i) {
    out.raw_values()[i] = x.array().segment(i * hw, hw).sum() * inv;
  }
  return out;
}

// ---------------------------------------------------------------------------
// losses

/// Mean of -[y log s + (1-y) log(1-s)]; scores clamped to [eps, 1-eps].
/// Labels must be exactly 0 or 1 and never receive gradient.
template <typename T>
Tensor<T> binary_cross_entropy(const Tensor<T>& score, const Tensor<T>& label,
                               T eps = static_cast<T>(1e-7)) {
  detail::check_same_shape("binary_cross_entropy", score, label);
  for (Index i = 0; i < label.size(); ++i) {
    const T y = label.array()[i];
    if (y != static_cast<T>(0) && y != static_cast<T>(1)) {
      throw ContractError("binary_cross_entropy: label not in {0,1}");
    }
  }
  const Index n = score.size();
  const T inv_n = static_cast<T>(1) / static_cast<T>(n);
  auto out = Tensor<T>::make_op(
      Shape{}, {score, label},
      [sn = score.node(), ln = label.node(), eps, inv_n](auto& self) {
        if (!sn->requires_grad) return;
        const T g = self.grad[0] * inv_n;
        for (Index i = 0; i < sn->values.size(); ++i) {
          const T s = sn->values[i];
          if (s <= eps || s >= 1 - eps) continue;  // clamp region: zero slope
          const T y = ln->values[i];
          sn->grad[i] += g * (-y / s + (1 - y) / (1 - s));
        }
      });
  T loss = 0;
  for (Index i = 0; i < n; ++i) {
    const T s = std::min(std::max(score.array()[i], eps), 1 - eps);
    const T y = label.array()[i];
    loss -= y * std::log(s) + (1 - y) * std::log(1 - s);
  }
  out.raw_values()[0] = loss * inv_n;
  detail::check_finite("binary_cross_entropy", out);
  return out;
}

}  // namespace graspstn
