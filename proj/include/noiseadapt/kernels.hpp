#pragma once

// Forward and adjoint kernels on plain tensors. The tape in autodiff.hpp
// composes these; nothing here records anything.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <vector>

#include "noiseadapt/tensor.hpp"

namespace noiseadapt::kernels {

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (da != db && da != 1 && db != 1)
      fail(ErrorKind::ShapeMismatch, "cannot broadcast " + to_string(a) + " with " + to_string(b));
    out[i] = std::max(da, db);
  }
  return out;
}

namespace detail {

// Strides of `shape` aligned to a broadcast target of rank `rank`; broadcast
// dimensions get stride 0.
inline std::vector<std::size_t> broadcast_strides(const Shape& shape, const Shape& target) {
  const std::size_t rank = target.size();
  std::vector<std::size_t> strides(rank, 0);
  std::size_t s = 1;
  for (std::size_t i = shape.size(); i-- > 0;) {
    const std::size_t ti = i + (rank - shape.size());
    strides[ti] = shape[i] == 1 ? 0 : s;
    s *= shape[i];
  }
  return strides;
}

// Calls f(out_index, a_index, b_index) for every element of the broadcast output.
template <class F>
void for_each_broadcast(const Shape& out, const Shape& a, const Shape& b, F&& f) {
  const auto sa = broadcast_strides(a, out);
  const auto sb = broadcast_strides(b, out);
  const std::size_t rank = out.size();
  const std::size_t total = numel(out);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t k = 0; k < total; ++k) {
    f(k, ia, ib);
    for (std::size_t d = rank; d-- > 0;) {
      if (++idx[d] < out[d]) {
        ia += sa[d];
        ib += sb[d];
        break;
      }
      ia -= sa[d] * (out[d] - 1);
      ib -= sb[d] * (out[d] - 1);
      idx[d] = 0;
    }
  }
}

}  // namespace detail

template <class Op>
Tensor binary(const Tensor& a, const Tensor& b, Op op) {
  if (a.shape() == b.shape()) {
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = op(a[i], b[i]);
    return out;
  }
  Tensor out(broadcast_shape(a.shape(), b.shape()));
  detail::for_each_broadcast(out.shape(), a.shape(), b.shape(),
                             [&](std::size_t k, std::size_t ia, std::size_t ib) { out[k] = op(a[ia], b[ib]); });
  return out;
}

/// Sums a broadcast-shaped gradient back down to `shape`.
inline Tensor reduce_to_shape(const Tensor& grad, const Shape& shape) {
  if (grad.shape() == shape) return grad;
  Tensor out(shape);
  detail::for_each_broadcast(grad.shape(), shape, grad.shape(),
                             [&](std::size_t k, std::size_t ia, std::size_t) { out[ia] += grad[k]; });
  return out;
}

/// Elementwise product where the result has the broadcast shape; used by mul's adjoint.
inline Tensor mul_broadcast_grad(const Tensor& gout, const Tensor& other, const Shape& self_shape) {
  Tensor prod(gout.shape());
  if (other.shape() == gout.shape()) {
    for (std::size_t i = 0; i < gout.size(); ++i) prod[i] = gout[i] * other[i];
  } else {
    detail::for_each_broadcast(gout.shape(), gout.shape(), other.shape(),
                               [&](std::size_t k, std::size_t, std::size_t ib) { prod[k] = gout[k] * other[ib]; });
  }
  return reduce_to_shape(prod, self_shape);
}

template <class Op>
Tensor unary(const Tensor& a, Op op) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = op(a[i]);
  return out;
}

// ---------------------------------------------------------------------------
// matmul: [m,k] x [k,n]

inline Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false, bool transpose_b = false) {
  require(a.rank() == 2 && b.rank() == 2, ErrorKind::ShapeMismatch,
          "matmul expects rank-2 operands, got " + to_string(a.shape()) + " and " + to_string(b.shape()));
  const std::size_t m = transpose_a ? a.dim(1) : a.dim(0);
  const std::size_t k = transpose_a ? a.dim(0) : a.dim(1);
  const std::size_t kb = transpose_b ? b.dim(1) : b.dim(0);
  const std::size_t n = transpose_b ? b.dim(0) : b.dim(1);
  require(k == kb, ErrorKind::ShapeMismatch,
          "matmul inner dimensions differ: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  Tensor out({m, n});
  const std::size_t lda = a.dim(1), ldb = b.dim(1);
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = &out[i * n];
    for (std::size_t p = 0; p < k; ++p) {
      const double av = transpose_a ? a[p * lda + i] : a[i * lda + p];
      if (av == 0.0) continue;
      if (!transpose_b) {
        const double* brow = &b.data()[p * ldb];
        for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      } else {
        for (std::size_t j = 0; j < n; ++j) orow[j] += av * b[j * ldb + p];
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// conv2d: x [N,C,H,W], w [O,C,K,K], bias [O]

struct ConvGeometry {
  std::size_t n, c, h, w, o, k, stride, pad, oh, ow;
};

inline ConvGeometry conv_geometry(const Shape& x, const Shape& w, std::size_t stride, std::size_t pad) {
  require(x.size() == 4 && w.size() == 4, ErrorKind::ShapeMismatch,
          "conv2d expects [N,C,H,W] input and [O,C,K,K] kernel, got " + to_string(x) + " and " + to_string(w));
  require(x[1] == w[1], ErrorKind::ShapeMismatch,
          "conv2d channel mismatch: input " + to_string(x) + ", kernel " + to_string(w));
  require(w[2] == w[3], ErrorKind::ShapeMismatch, "conv2d expects square kernels");
  require(stride >= 1, ErrorKind::ShapeMismatch, "conv2d stride must be >= 1");
  const std::size_t k = w[2];
  require(x[2] + 2 * pad >= k && x[3] + 2 * pad >= k, ErrorKind::ShapeMismatch,
          "conv2d kernel larger than padded input " + to_string(x));
  ConvGeometry g{x[0], x[1], x[2], x[3], w[0], k, stride, pad, 0, 0};
  g.oh = (g.h + 2 * pad - k) / stride + 1;
  g.ow = (g.w + 2 * pad - k) / stride + 1;
  return g;
}

namespace detail {
// Output index range [lo, hi) whose input coordinate o*stride + kk - pad lies in [0, extent).
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t out_extent, std::size_t extent, std::size_t kk,
                                                       std::size_t stride, std::size_t pad) {
  const long s = static_cast<long>(stride);
  const long off = static_cast<long>(kk) - static_cast<long>(pad);
  long lo = off >= 0 ? 0 : (-off + s - 1) / s;
  long hi = (static_cast<long>(extent) - 1 - off);
  hi = hi < 0 ? 0 : hi / s + 1;
  hi = std::min<long>(hi, static_cast<long>(out_extent));
  if (lo > hi) lo = hi;
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}
}  // namespace detail

inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor* bias, std::size_t stride, std::size_t pad) {
  const auto g = conv_geometry(x.shape(), w.shape(), stride, pad);
  if (bias) require(bias->size() == g.o, ErrorKind::ShapeMismatch, "conv2d bias length mismatch");
  Tensor out({g.n, g.o, g.oh, g.ow});
  const std::size_t in_plane = g.h * g.w, out_plane = g.oh * g.ow;
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t o = 0; o < g.o; ++o) {
      double* op = &out[(n * g.o + o) * out_plane];
      if (bias) std::fill(op, op + out_plane, (*bias)[o]);
      for (std::size_t c = 0; c < g.c; ++c) {
        const double* ip = &x.data()[(n * g.c + c) * in_plane];
        const double* wp = &w.data()[(o * g.c + c) * g.k * g.k];
        for (std::size_t kh = 0; kh < g.k; ++kh) {
          const auto [oh0, oh1] = detail::valid_range(g.oh, g.h, kh, stride, pad);
          for (std::size_t kw = 0; kw < g.k; ++kw) {
            const double wv = wp[kh * g.k + kw];
            const auto [ow0, ow1] = detail::valid_range(g.ow, g.w, kw, stride, pad);
            for (std::size_t oh = oh0; oh < oh1; ++oh) {
              const double* irow = ip + (oh * stride + kh - pad) * g.w;
              double* orow = op + oh * g.ow;
              if (stride == 1) {
                const double* src = irow + (ow0 + kw - pad);
                for (std::size_t ow = ow0; ow < ow1; ++ow) orow[ow] += wv * src[ow - ow0];
              } else {
                for (std::size_t ow = ow0; ow < ow1; ++ow) orow[ow] += wv * irow[ow * stride + kw - pad];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

inline Tensor conv2d_grad_input(const Tensor& gout, const Tensor& w, const Shape& x_shape, std::size_t stride,
                                std::size_t pad) {
  const auto g = conv_geometry(x_shape, w.shape(), stride, pad);
  Tensor gx(x_shape);
  const std::size_t in_plane = g.h * g.w, out_plane = g.oh * g.ow;
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t o = 0; o < g.o; ++o) {
      const double* gp = &gout.data()[(n * g.o + o) * out_plane];
      for (std::size_t c = 0; c < g.c; ++c) {
        double* xp = &gx[(n * g.c + c) * in_plane];
        const double* wp = &w.data()[(o * g.c + c) * g.k * g.k];
        for (std::size_t kh = 0; kh < g.k; ++kh) {
          const auto [oh0, oh1] = detail::valid_range(g.oh, g.h, kh, stride, pad);
          for (std::size_t kw = 0; kw < g.k; ++kw) {
            const double wv = wp[kh * g.k + kw];
            const auto [ow0, ow1] = detail::valid_range(g.ow, g.w, kw, stride, pad);
            for (std::size_t oh = oh0; oh < oh1; ++oh) {
              double* xrow = xp + (oh * stride + kh - pad) * g.w;
              const double* grow = gp + oh * g.ow;
              for (std::size_t ow = ow0; ow < ow1; ++ow) xrow[ow * stride + kw - pad] += wv * grow[ow];
            }
          }
        }
      }
    }
  }
  return gx;
}

inline Tensor conv2d_grad_weight(const Tensor& gout, const Tensor& x, const Shape& w_shape, std::size_t stride,
                                 std::size_t pad) {
  const auto g = conv_geometry(x.shape(), w_shape, stride, pad);
  Tensor gw(w_shape);
  const std::size_t in_plane = g.h * g.w, out_plane = g.oh * g.ow;
  for (std::size_t n = 0; n < g.n; ++n) {
    for (std::size_t o = 0; o < g.o; ++o) {
      const double* gp = &gout.data()[(n * g.o + o) * out_plane];
      for (std::size_t c = 0; c < g.c; ++c) {
        const double* ip = &x.data()[(n * g.c + c) * in_plane];
        double* wp = &gw[(o * g.c + c) * g.k * g.k];
        for (std::size_t kh = 0; kh < g.k; ++kh) {
          const auto [oh0, oh1] = detail::valid_range(g.oh, g.h, kh, stride, pad);
          for (std::size_t kw = 0; kw < g.k; ++kw) {
            const auto [ow0, ow1] = detail::valid_range(g.ow, g.w, kw, stride, pad);
            double acc = 0.0;
            for (std::size_t oh = oh0; oh < oh1; ++oh) {
              const double* irow = ip + (oh * stride + kh - pad) * g.w;
              const double* grow = gp + oh * g.ow;
              for (std::size_t ow = ow0; ow < ow1; ++ow) acc += grow[ow] * irow[ow * stride + kw - pad];
            }
            wp[kh * g.k + kw] += acc;
          }
        }
      }
    }
  }
  return gw;
}

inline Tensor conv2d_grad_bias(const Tensor& gout) {
  const auto& s = gout.shape();
  Tensor gb({s[1]});
  const std::size_t plane = s[2] * s[3];
  for (std::size_t n = 0; n < s[0]; ++n)
    for (std::size_t o = 0; o < s[1]; ++o) {
      const double* gp = &gout.data()[(n * s[1] + o) * plane];
      double acc = 0.0;
      for (std::size_t i = 0; i < plane; ++i) acc += gp[i];
      gb[o] += acc;
    }
  return gb;
}

// ---------------------------------------------------------------------------
// pooling / upsampling on [N,C,H,W]

inline Tensor avg_pool(const Tensor& x, std::size_t k) {
  require(x.rank() == 4 && k >= 1 && x.dim(2) % k == 0 && x.dim(3) % k == 0, ErrorKind::ShapeMismatch,
          "avg_pool window " + std::to_string(k) + " does not tile " + to_string(x.shape()));
  const std::size_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3), oh = h / k, ow = w / k;
  Tensor out({x.dim(0), x.dim(1), oh, ow});
  const double inv = 1.0 / static_cast<double>(k * k);
  for (std::size_t p = 0; p < nc; ++p)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) out[(p * oh + i / k) * ow + j / k] += x[(p * h + i) * w + j] * inv;
  return out;
}

inline Tensor avg_pool_grad(const Tensor& gout, const Shape& x_shape, std::size_t k) {
  Tensor gx(x_shape);
  const std::size_t nc = x_shape[0] * x_shape[1], h = x_shape[2], w = x_shape[3], oh = h / k, ow = w / k;
  const double inv = 1.0 / static_cast<double>(k * k);
  for (std::size_t p = 0; p < nc; ++p)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) gx[(p * h + i) * w + j] = gout[(p * oh + i / k) * ow + j / k] * inv;
  return gx;
}

inline Tensor upsample_nearest(const Tensor& x, std::size_t f) {
  require(x.rank() == 4 && f >= 1, ErrorKind::ShapeMismatch, "upsample expects [N,C,H,W], got " + to_string(x.shape()));
  const std::size_t nc = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3), oh = h * f, ow = w * f;
  Tensor out({x.dim(0), x.dim(1), oh, ow});
  for (std::size_t p = 0; p < nc; ++p)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) out[(p * oh + i) * ow + j] = x[(p * h + i / f) * w + j / f];
  return out;
}

inline Tensor upsample_nearest_grad(const Tensor& gout, const Shape& x_shape, std::size_t f) {
  Tensor gx(x_shape);
  const std::size_t nc = x_shape[0] * x_shape[1], h = x_shape[2], w = x_shape[3], oh = h * f, ow = w * f;
  for (std::size_t p = 0; p < nc; ++p)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) gx[(p * h + i / f) * w + j / f] += gout[(p * oh + i) * ow + j];
  return gx;
}

// ---------------------------------------------------------------------------
// concat / slice along an axis. Both reduce to copying `inner`-sized runs.

struct AxisSplit {
  std::size_t outer, extent, inner;
};

inline AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r{1, s[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

inline Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  require(axis < x.rank() && begin < end && end <= x.dim(axis), ErrorKind::ShapeMismatch,
          "slice [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " + std::to_string(axis) +
              " of " + to_string(x.shape()));
  Shape os = x.shape();
  os[axis] = end - begin;
  Tensor out(os);
  const auto sp = split_at(x.shape(), axis);
  const std::size_t len = (end - begin) * sp.inner;
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(&x.data()[(o * sp.extent + begin) * sp.inner], len, &out[o * len]);
  return out;
}

inline Tensor slice_grad(const Tensor& gout, const Shape& x_shape, std::size_t axis, std::size_t begin) {
  Tensor gx(x_shape);
  const auto sp = split_at(x_shape, axis);
  const std::size_t len = gout.dim(axis) * sp.inner;
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(&gout.data()[o * len], len, &gx[(o * sp.extent + begin) * sp.inner]);
  return gx;
}

inline Tensor concat(const std::vector<const Tensor*>& parts, std::size_t axis) {
  require(!parts.empty(), ErrorKind::ShapeMismatch, "concat of zero tensors");
  Shape os = parts[0]->shape();
  require(axis < os.size(), ErrorKind::ShapeMismatch, "concat axis out of range");
  os[axis] = 0;
  for (const Tensor* p : parts) {
    Shape a = p->shape(), b = parts[0]->shape();
    require(a.size() == b.size(), ErrorKind::ShapeMismatch, "concat rank mismatch");
    a[axis] = b[axis] = 0;
    require(a == b, ErrorKind::ShapeMismatch,
            "concat shapes " + to_string(p->shape()) + " and " + to_string(parts[0]->shape()) + " disagree");
    os[axis] += p->dim(axis);
  }
  Tensor out(os);
  const auto so = split_at(os, axis);
  std::size_t offset = 0;
  for (const Tensor* p : parts) {
    const std::size_t len = p->dim(axis) * so.inner;
    for (std::size_t o = 0; o < so.outer; ++o)
      std::copy_n(&p->data()[o * len], len, &out[(o * so.extent) * so.inner + offset]);
    offset += len;
  }
  return out;
}

}  // namespace noiseadapt::kernels
