#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <utility>
#include <vector>

#include "uanet/tensor.hpp"

namespace uanet {

enum class Interp { Nearest, Bilinear };

namespace detail {

template <typename S>
void check_same_shape(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
  if (a.shape() != b.shape())
    throw shape_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                      " vs " + shape_str(b.shape()));
}

template <typename S>
void check_rank(const char* op, const Tensor<S>& t, int rank) {
  if (t.rank() != rank)
    throw shape_error(std::string(op) + ": expected rank " + std::to_string(rank) +
                      ", got " + shape_str(t.shape()));
}

inline int check_axis(const char* op, int axis, int rank) {
  if (axis < 0 || axis >= rank)
    throw shape_error(std::string(op) + ": axis " + std::to_string(axis) +
                      " out of range for rank " + std::to_string(rank));
  return axis;
}

template <typename S>
S stable_sigmoid(S x) {
  if (x >= S(0)) {
    return S(1) / (S(1) + std::exp(-x));
  }
  S e = std::exp(x);
  return e / (S(1) + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape("add", a, b);
  Tensor<S> out = Tensor<S>::empty(a.shape());
  out.val() = a.val() + b.val();
  return detail::finish_op<S>("add", std::move(out), {a, b},
      [pa = a.node_ptr(), pb = b.node_ptr()](TensorNode<S>& o) {
        if (pa->requires_grad) pa->grad_buffer() += o.grad;
        if (pb->requires_grad) pb->grad_buffer() += o.grad;
      });
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape("sub", a, b);
  Tensor<S> out = Tensor<S>::empty(a.shape());
  out.val() = a.val() - b.val();
  return detail::finish_op<S>("sub", std::move(out), {a, b},
      [pa = a.node_ptr(), pb = b.node_ptr()](TensorNode<S>& o) {
        if (pa->requires_grad) pa->grad_buffer() += o.grad;
        if (pb->requires_grad) pb->grad_buffer() -= o.grad;
      });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape("mul", a, b);
  Tensor<S> out = Tensor<S>::empty(a.shape());
  out.val() = a.val() * b.val();
  return detail::finish_op<S>("mul", std::move(out), {a, b},
      [pa = a.node_ptr(), pb = b.node_ptr()](TensorNode<S>& o) {
        if (pa->requires_grad) pa->grad_buffer() += o.grad * pb->value;
        if (pb->requires_grad) pb->grad_buffer() += o.grad * pa->value;
      });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S c) {
  Tensor<S> out = Tensor<S>::empty(a.shape());
  out.val() = a.val() * c;
  return detail::finish_op<S>("scale", std::move(out), {a},
      [pa = a.node_ptr(), c](TensorNode<S>& o) {
        if (pa->requires_grad) pa->grad_buffer() += o.grad * c;
      });
}

// Broadcast multiply by a one-element tensor (learnable scalar).
template <typename S>
Tensor<S> mul_scalar(const Tensor<S>& a, const Tensor<S>& s) {
  if (s.numel() != 1)
    throw shape_error("mul_scalar: scale must have one element, got " + shape_str(s.shape()));
  Tensor<S> out = Tensor<S>::empty(a.shape());
  out.val() = a.val() * s.val()[0];
  return detail::finish_op<S>("mul_scalar", std::move(out), {a, s},
      [pa = a.node_ptr(), ps = s.node_ptr()](TensorNode<S>& o) {
        if (pa->requires_grad) pa->grad_buffer() += o.grad * ps->value[0];
        if (ps->requires_grad) ps->grad_buffer()[0] += (o.grad * pa->value).sum();
      });
}

// x[c,h,w] * s[c]; s may be shaped [C] or [C,1].
template <typename S>
Tensor<S> mul_channelwise(const Tensor<S>& x, const Tensor<S>& s) {
  detail::check_rank("mul_channelwise", x, 3);
  const int c = x.dim(0);
  const std::int64_t hw = static_cast<std::int64_t>(x.dim(1)) * x.dim(2);
  if (s.numel() != c)
    throw shape_error("mul_channelwise: gate " + shape_str(s.shape()) +
                      " does not match channels of " + shape_str(x.shape()));
  Tensor<S> out = Tensor<S>::empty(x.shape());
  for (int i = 0; i < c; ++i)
    out.val().segment(i * hw, hw) = x.val().segment(i * hw, hw) * s.val()[i];
  return detail::finish_op<S>("mul_channelwise", std::move(out), {x, s},
      [px = x.node_ptr(), ps = s.node_ptr(), c, hw](TensorNode<S>& o) {
        for (int i = 0; i < c; ++i) {
          if (px->requires_grad)
            px->grad_buffer().segment(i * hw, hw) += o.grad.segment(i * hw, hw) * ps->value[i];
          if (ps->requires_grad)
            ps->grad_buffer()[i] +=
                (o.grad.segment(i * hw, hw) * px->value.segment(i * hw, hw)).sum();
        }
      });
}

// x[c,h,w] * m[0,h,w]; the map is broadcast across channels.
template <typename S>
Tensor<S> mul_spatial(const Tensor<S>& x, const Tensor<S>& m) {
  detail::check_rank("mul_spatial", x, 3);
  detail::check_rank("mul_spatial", m, 3);
  if (m.dim(0) != 1 || m.dim(1) != x.dim(1) || m.dim(2) != x.dim(2))
    throw shape_error("mul_spatial: map " + shape_str(m.shape()) +
                      " does not match " + shape_str(x.shape()));
  const int c = x.dim(0);
  const std::int64_t hw = static_cast<std::int64_t>(x.dim(1)) * x.dim(2);
  Tensor<S> out = Tensor<S>::empty(x.shape());
  for (int i = 0; i < c; ++i)
    out.val().segment(i * hw, hw) = x.val().segment(i * hw, hw) * m.val();
  return detail::finish_op<S>("mul_spatial", std::move(out), {x, m},
      [px = x.node_ptr(), pm = m.node_ptr(), c, hw](TensorNode<S>& o) {
        for (int i = 0; i < c; ++i) {
          if (px->requires_grad)
            px->grad_buffer().segment(i * hw, hw) += o.grad.segment(i * hw, hw) * pm->value;
          if (pm->requires_grad)
            pm->grad_buffer() += o.grad.segment(i * hw, hw) * px->value.segment(i * hw, hw);
        }
      });
}

template <typename S>
Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) { return add(a, b); }
template <typename S>
Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) { return sub(a, b); }
template <typename S>
Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) { return mul(a, b); }
template <typename S>
Tensor<S> operator*(S c, const Tensor<S>& a) { return scale(a, c); }

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_rank("matmul", a, 2);
  detail::check_rank("matmul", b, 2);
  if (a.dim(1) != b.dim(0))
    throw shape_error("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                      " vs " + shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<S> out = Tensor<S>::empty({m, n});
  MapConstMat<S> A(a.val().data(), m, k);
  MapConstMat<S> B(b.val().data(), k, n);
  MapMat<S> O(out.val().data(), m, n);
  O.noalias() = A * B;
  return detail::finish_op<S>("matmul", std::move(out), {a, b},
      [pa = a.node_ptr(), pb = b.node_ptr(), m, k, n](TensorNode<S>& o) {
        MapConstMat<S> G(o.grad.data(), m, n);
        if (pa->requires_grad) {
          MapConstMat<S> B(pb->value.data(), k, n);
          MapMat<S> dA(pa->grad_buffer().data(), m, k);
          dA.noalias() += G * B.transpose();
        }
        if (pb->requires_grad) {
          MapConstMat<S> A(pa->value.data(), m, k);
          MapMat<S> dB(pb->grad_buffer().data(), k, n);
          dB.noalias() += A.transpose() * G;
        }
      });
}

template <typename S>
Tensor<S> transpose2d(const Tensor<S>& a) {
  detail::check_rank("transpose2d", a, 2);
  const int m = a.dim(0), n = a.dim(1);
  Tensor<S> out = Tensor<S>::empty({n, m});
  MapConstMat<S> A(a.val().data(), m, n);
  MapMat<S> O(out.val().data(), n, m);
  O = A.transpose();
  return detail::finish_op<S>("transpose2d", std::move(out), {a},
      [pa = a.node_ptr(), m, n](TensorNode<S>& o) {
        if (!pa->requires_grad) return;
        MapConstMat<S> G(o.grad.data(), n, m);
        MapMat<S> dA(pa->grad_buffer().data(), m, n);
        dA += G.transpose();
      });
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> relu(const Tensor<S>& a) {
  Tensor<S> out = Tensor<S>::empty(a.shape());
  out.val() = a.val().max(S(0));
  return detail::finish_op<S>("relu", std::move(out), {a},
      [pa = a.node_ptr()](TensorNode<S>& o) {
        if (!pa->requires_grad) return;
        pa->grad_buffer() += o.grad * (pa->value > S(0)).template cast<S>();
      });
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& a) {
  Tensor<S> out = Tensor<S>::empty(a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i)
    out.val()[i] = detail::stable_sigmoid(a.val()[i]);
  return detail::finish_op<S>("sigmoid", std::move(out), {a},
      [pa = a.node_ptr()](TensorNode<S>& o) {
        if (!pa->requires_grad) return;
        pa->grad_buffer() += o.grad * o.value * (S(1) - o.value);
      });
}

template <typename S>
Tensor<S> softmax(const Tensor<S>& a, int axis) {
  detail::check_axis("softmax", axis, a.rank());
  const int n = a.dim(axis);
  std::int64_t inner = 1;
  for (int i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  const std::int64_t outer = a.numel() / (n * inner);
  Tensor<S> out = Tensor<S>::empty(a.shape());
  for (std::int64_t ou = 0; ou < outer; ++ou) {
    for (std::int64_t in = 0; in < inner; ++in) {
      const std::int64_t base = ou * n * inner + in;
      S mx = a.val()[base];
      for (int j = 1; j < n; ++j) mx = std::max(mx, a.val()[base + j * inner]);
      S sum = S(0);
      for (int j = 0; j < n; ++j) {
        S e = std::exp(a.val()[base + j * inner] - mx);
        out.val()[base + j * inner] = e;
        sum += e;
      }
      for (int j = 0; j < n; ++j) out.val()[base + j * inner] /= sum;
    }
  }
  return detail::finish_op<S>("softmax", std::move(out), {a},
      [pa = a.node_ptr(), n, inner, outer](TensorNode<S>& o) {
        if (!pa->requires_grad) return;
        auto& dx = pa->grad_buffer();
        for (std::int64_t ou = 0; ou < outer; ++ou) {
          for (std::int64_t in = 0; in < inner; ++in) {
            const std::int64_t base = ou * n * inner + in;
            S dot = S(0);
            for (int j = 0; j < n; ++j)
              dot += o.grad[base + j * inner] * o.value[base + j * inner];
            for (int j = 0; j < n; ++j) {
              const std::int64_t at = base + j * inner;
              dx[at] += o.value[at] * (o.grad[at] - dot);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, Shape shape) {
  if (numel(shape) != a.numel())
    throw shape_error("reshape: cannot view " + shape_str(a.shape()) + " as " +
                      shape_str(shape));
  Tensor<S> out = Tensor<S>::empty(std::move(shape));
  out.val() = a.val();
  return detail::finish_op<S>("reshape", std::move(out), {a},
      [pa = a.node_ptr()](TensorNode<S>& o) {
        if (pa->requires_grad) pa->grad_buffer() += o.grad;
      });
}

namespace detail {

// Geometry of an axis-wise block copy for concat/split.
struct AxisBlocks {
  std::int64_t outer, inner;
};

inline AxisBlocks axis_blocks(const Shape& s, int axis) {
  AxisBlocks b{1, 1};
  for (int i = 0; i < axis; ++i) b.outer *= s[static_cast<std::size_t>(i)];
  for (int i = axis + 1; i < static_cast<int>(s.size()); ++i)
    b.inner *= s[static_cast<std::size_t>(i)];
  return b;
}

}  // namespace detail

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& xs, int axis) {
  if (xs.empty()) throw shape_error("concat: no inputs");
  const Shape& first = xs[0].shape();
  detail::check_axis("concat", axis, static_cast<int>(first.size()));
  Shape out_shape = first;
  int total = 0;
  for (const auto& x : xs) {
    if (x.rank() != static_cast<int>(first.size()))
      throw shape_error("concat: rank mismatch " + shape_str(first) + " vs " +
                        shape_str(x.shape()));
    for (int i = 0; i < x.rank(); ++i)
      if (i != axis && x.dim(i) != first[static_cast<std::size_t>(i)])
        throw shape_error("concat: shape mismatch off axis, " + shape_str(first) +
                          " vs " + shape_str(x.shape()));
    total += x.dim(axis);
  }
  out_shape[static_cast<std::size_t>(axis)] = total;
  Tensor<S> out = Tensor<S>::empty(out_shape);
  const auto blocks = detail::axis_blocks(out_shape, axis);
  std::int64_t off = 0;
  std::vector<std::int64_t> offsets;
  for (const auto& x : xs) {
    offsets.push_back(off);
    const std::int64_t seg = static_cast<std::int64_t>(x.dim(axis)) * blocks.inner;
    for (std::int64_t ou = 0; ou < blocks.outer; ++ou)
      out.val().segment(ou * total * blocks.inner + off, seg) =
          x.val().segment(ou * seg, seg);
    off += seg;
  }
  std::vector<std::shared_ptr<TensorNode<S>>> pnodes;
  std::vector<std::int64_t> segs;
  for (const auto& x : xs) {
    pnodes.push_back(x.node_ptr());
    segs.push_back(static_cast<std::int64_t>(x.dim(axis)) * blocks.inner);
  }
  return detail::finish_op<S>("concat", std::move(out), xs,
      [pnodes, offsets, segs, blocks, total](TensorNode<S>& o) {
        for (std::size_t i = 0; i < pnodes.size(); ++i) {
          if (!pnodes[i]->requires_grad) continue;
          auto& dx = pnodes[i]->grad_buffer();
          for (std::int64_t ou = 0; ou < blocks.outer; ++ou)
            dx.segment(ou * segs[i], segs[i]) +=
                o.grad.segment(ou * total * blocks.inner + offsets[i], segs[i]);
        }
      });
}

template <typename S>
std::vector<Tensor<S>> split(const Tensor<S>& x, int axis, int parts) {
  detail::check_axis("split", axis, x.rank());
  if (parts < 1) throw param_error("split: parts must be positive");
  const int total = x.dim(axis);
  if (total % parts != 0)
    throw shape_error("split: axis extent " + std::to_string(total) +
                      " not divisible into " + std::to_string(parts) + " parts");
  const int each = total / parts;
  const auto blocks = detail::axis_blocks(x.shape(), axis);
  const std::int64_t seg = static_cast<std::int64_t>(each) * blocks.inner;
  std::vector<Tensor<S>> outs;
  for (int p = 0; p < parts; ++p) {
    Shape s = x.shape();
    s[static_cast<std::size_t>(axis)] = each;
    Tensor<S> out = Tensor<S>::empty(std::move(s));
    const std::int64_t off = static_cast<std::int64_t>(p) * seg;
    for (std::int64_t ou = 0; ou < blocks.outer; ++ou)
      out.val().segment(ou * seg, seg) =
          x.val().segment(ou * total * blocks.inner + off, seg);
    outs.push_back(detail::finish_op<S>("split", std::move(out), {x},
        [px = x.node_ptr(), off, seg, blocks, total](TensorNode<S>& o) {
          if (!px->requires_grad) return;
          auto& dx = px->grad_buffer();
          for (std::int64_t ou = 0; ou < blocks.outer; ++ou)
            dx.segment(ou * total * blocks.inner + off, seg) += o.grad.segment(ou * seg, seg);
        }));
  }
  return outs;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> sum(const Tensor<S>& a) {
  Tensor<S> out = Tensor<S>::empty({1});
  out.val()[0] = a.val().sum();
  return detail::finish_op<S>("sum", std::move(out), {a},
      [pa = a.node_ptr()](TensorNode<S>& o) {
        if (pa->requires_grad) pa->grad_buffer() += o.grad[0];
      });
}

template <typename S>
Tensor<S> mean(const Tensor<S>& a) {
  Tensor<S> out = Tensor<S>::empty({1});
  out.val()[0] = a.val().sum() / static_cast<S>(a.numel());
  return detail::finish_op<S>("mean", std::move(out), {a},
      [pa = a.node_ptr(), n = a.numel()](TensorNode<S>& o) {
        if (pa->requires_grad) pa->grad_buffer() += o.grad[0] / static_cast<S>(n);
      });
}

template <typename S>
Tensor<S> stop_gradient(const Tensor<S>& a) {
  Tensor<S> out = Tensor<S>::empty(a.shape());
  out.val() = a.val();
  out.node().op = "stop_gradient";
  return out;
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

namespace detail {

struct ConvGeom {
  int cin, h, w, cout, k, stride, pad, dil, hout, wout;
};

// col(row, opix): row = (c*k + ky)*k + kx, opix = oy*wout + ox.
template <typename S>
void im2col(const S* x, const ConvGeom& g, MatrixRM<S>& col) {
  col.resize(static_cast<std::int64_t>(g.cin) * g.k * g.k,
             static_cast<std::int64_t>(g.hout) * g.wout);
  const std::int64_t opix = static_cast<std::int64_t>(g.hout) * g.wout;
  for (int c = 0; c < g.cin; ++c) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const std::int64_t row = (static_cast<std::int64_t>(c) * g.k + ky) * g.k + kx;
        S* dst = col.data() + row * opix;
        for (int oy = 0; oy < g.hout; ++oy) {
          const int iy = oy * g.stride - g.pad + ky * g.dil;
          S* drow = dst + static_cast<std::int64_t>(oy) * g.wout;
          if (iy < 0 || iy >= g.h) {
            std::fill(drow, drow + g.wout, S(0));
            continue;
          }
          const S* src = x + (static_cast<std::int64_t>(c) * g.h + iy) * g.w;
          for (int ox = 0; ox < g.wout; ++ox) {
            const int ix = ox * g.stride - g.pad + kx * g.dil;
            drow[ox] = (ix >= 0 && ix < g.w) ? src[ix] : S(0);
          }
        }
      }
    }
  }
}

template <typename S>
void col2im_add(const MatrixRM<S>& col, const ConvGeom& g, S* dx) {
  const std::int64_t opix = static_cast<std::int64_t>(g.hout) * g.wout;
  for (int c = 0; c < g.cin; ++c) {
    for (int ky = 0; ky < g.k; ++ky) {
      for (int kx = 0; kx < g.k; ++kx) {
        const std::int64_t row = (static_cast<std::int64_t>(c) * g.k + ky) * g.k + kx;
        const S* src = col.data() + row * opix;
        for (int oy = 0; oy < g.hout; ++oy) {
          const int iy = oy * g.stride - g.pad + ky * g.dil;
          if (iy < 0 || iy >= g.h) continue;
          S* drow = dx + (static_cast<std::int64_t>(c) * g.h + iy) * g.w;
          const S* srow = src + static_cast<std::int64_t>(oy) * g.wout;
          for (int ox = 0; ox < g.wout; ++ox) {
            const int ix = ox * g.stride - g.pad + kx * g.dil;
            if (ix >= 0 && ix < g.w) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// Cross-correlation: kernels are applied unflipped.
// input [Cin,H,W], kernel [Cout,Cin,k,k], bias [Cout].
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b,
                 int stride = 1, int padding = 0, int dilation = 1) {
  detail::check_rank("conv2d", x, 3);
  detail::check_rank("conv2d", w, 4);
  detail::check_rank("conv2d", b, 1);
  if (stride < 1) throw param_error("conv2d: stride must be >= 1");
  if (padding < 0) throw param_error("conv2d: padding must be >= 0");
  if (dilation < 1) throw param_error("conv2d: dilation must be >= 1");
  if (w.dim(2) != w.dim(3))
    throw shape_error("conv2d: kernel must be square, got " + shape_str(w.shape()));
  if (w.dim(1) != x.dim(0))
    throw shape_error("conv2d: kernel " + shape_str(w.shape()) +
                      " does not match input " + shape_str(x.shape()));
  if (b.dim(0) != w.dim(0))
    throw shape_error("conv2d: bias " + shape_str(b.shape()) +
                      " does not match kernel " + shape_str(w.shape()));
  detail::ConvGeom g;
  g.cin = x.dim(0);
  g.h = x.dim(1);
  g.w = x.dim(2);
  g.cout = w.dim(0);
  g.k = w.dim(2);
  g.stride = stride;
  g.pad = padding;
  g.dil = dilation;
  g.hout = (g.h + 2 * g.pad - g.dil * (g.k - 1) - 1) / g.stride + 1;
  g.wout = (g.w + 2 * g.pad - g.dil * (g.k - 1) - 1) / g.stride + 1;
  if (g.h + 2 * g.pad < g.dil * (g.k - 1) + 1 || g.w + 2 * g.pad < g.dil * (g.k - 1) + 1 ||
      g.hout < 1 || g.wout < 1)
    throw shape_error("conv2d: non-positive output extent for input " + shape_str(x.shape()) +
                      ", kernel " + shape_str(w.shape()) + ", stride " + std::to_string(stride) +
                      ", padding " + std::to_string(padding) + ", dilation " +
                      std::to_string(dilation));

  MatrixRM<S> col;
  detail::im2col(x.val().data(), g, col);
  Tensor<S> out = Tensor<S>::empty({g.cout, g.hout, g.wout});
  const std::int64_t opix = static_cast<std::int64_t>(g.hout) * g.wout;
  const std::int64_t krows = static_cast<std::int64_t>(g.cin) * g.k * g.k;
  MapConstMat<S> W(w.val().data(), g.cout, krows);
  MapMat<S> O(out.val().data(), g.cout, opix);
  O.noalias() = W * col;
  O.colwise() += Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>(b.val().data(), g.cout);
  return detail::finish_op<S>("conv2d", std::move(out),
      {x, w, b},
      [px = x.node_ptr(), pw = w.node_ptr(), pb = b.node_ptr(), g, opix, krows](TensorNode<S>& o) {
        MapConstMat<S> G(o.grad.data(), g.cout, opix);
        if (pb->requires_grad) {
          Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>> db(pb->grad_buffer().data(), g.cout);
          db.noalias() += G.rowwise().sum();
        }
        if (pw->requires_grad) {
          MatrixRM<S> col;
          detail::im2col(px->value.data(), g, col);
          MapMat<S> dW(pw->grad_buffer().data(), g.cout, krows);
          dW.noalias() += G * col.transpose();
        }
        if (px->requires_grad) {
          MapConstMat<S> W(pw->value.data(), g.cout, krows);
          MatrixRM<S> dcol(krows, opix);
          dcol.noalias() = W.transpose() * G;
          detail::col2im_add(dcol, g, px->grad_buffer().data());
        }
      });
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

// Non-overlapping max pool. On ties the first element in row-major scan
// order of the window receives the gradient.
template <typename S>
Tensor<S> maxpool2d(const Tensor<S>& x, int window = 2) {
  detail::check_rank("maxpool2d", x, 3);
  if (window < 1) throw param_error("maxpool2d: window must be >= 1");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h % window != 0 || w % window != 0)
    throw shape_error("maxpool2d: extents of " + shape_str(x.shape()) +
                      " not divisible by window " + std::to_string(window));
  const int ho = h / window, wo = w / window;
  Tensor<S> out = Tensor<S>::empty({c, ho, wo});
  std::vector<std::int64_t> argmax(static_cast<std::size_t>(out.numel()));
  const S* xv = x.val().data();
  for (int ci = 0; ci < c; ++ci) {
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        std::int64_t best_at = -1;
        S best = S(0);
        for (int wy = 0; wy < window; ++wy) {
          for (int wx = 0; wx < window; ++wx) {
            const std::int64_t at =
                (static_cast<std::int64_t>(ci) * h + (oy * window + wy)) * w + ox * window + wx;
            if (best_at < 0 || xv[at] > best) {
              best = xv[at];
              best_at = at;
            }
          }
        }
        const std::int64_t oat = (static_cast<std::int64_t>(ci) * ho + oy) * wo + ox;
        out.val()[oat] = best;
        argmax[static_cast<std::size_t>(oat)] = best_at;
      }
    }
  }
  return detail::finish_op<S>("maxpool2d", std::move(out), {x},
      [px = x.node_ptr(), argmax = std::move(argmax)](TensorNode<S>& o) {
        if (!px->requires_grad) return;
        auto& dx = px->grad_buffer();
        for (std::int64_t i = 0; i < o.grad.size(); ++i)
          dx[argmax[static_cast<std::size_t>(i)]] += o.grad[i];
      });
}

// ---------------------------------------------------------------------------
// Upsampling
// ---------------------------------------------------------------------------

namespace detail {

// Source taps for one output axis under the half-pixel convention:
// src = (dst + 0.5) / factor - 0.5, clamped to the valid range.
struct BilinearTap {
  int i0, i1;
  double t;  // weight of i1
};

inline std::vector<BilinearTap> bilinear_taps(int in, int factor) {
  std::vector<BilinearTap> taps(static_cast<std::size_t>(in) * factor);
  for (int o = 0; o < in * factor; ++o) {
    double src = (o + 0.5) / factor - 0.5;
    src = std::min(std::max(src, 0.0), static_cast<double>(in - 1));
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = std::min(i0 + 1, in - 1);
    taps[static_cast<std::size_t>(o)] = {i0, i1, src - i0};
  }
  return taps;
}

}  // namespace detail

template <typename S>
Tensor<S> upsample(const Tensor<S>& x, int factor, Interp mode) {
  detail::check_rank("upsample", x, 3);
  if (factor < 1) throw param_error("upsample: factor must be >= 1");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int ho = h * factor, wo = w * factor;
  Tensor<S> out = Tensor<S>::empty({c, ho, wo});
  if (mode == Interp::Nearest) {
    for (int ci = 0; ci < c; ++ci)
      for (int oy = 0; oy < ho; ++oy) {
        const S* src = x.val().data() + (static_cast<std::int64_t>(ci) * h + oy / factor) * w;
        S* dst = out.val().data() + (static_cast<std::int64_t>(ci) * ho + oy) * wo;
        for (int ox = 0; ox < wo; ++ox) dst[ox] = src[ox / factor];
      }
    return detail::finish_op<S>("upsample_nearest", std::move(out), {x},
        [px = x.node_ptr(), c, h, w, factor](TensorNode<S>& o) {
          if (!px->requires_grad) return;
          auto& dx = px->grad_buffer();
          const int ho = h * factor, wo = w * factor;
          for (int ci = 0; ci < c; ++ci)
            for (int oy = 0; oy < ho; ++oy) {
              const S* g = o.grad.data() + (static_cast<std::int64_t>(ci) * ho + oy) * wo;
              S* d = dx.data() + (static_cast<std::int64_t>(ci) * h + oy / factor) * w;
              for (int ox = 0; ox < wo; ++ox) d[ox / factor] += g[ox];
            }
        });
  }
  const auto ty = detail::bilinear_taps(h, factor);
  const auto tx = detail::bilinear_taps(w, factor);
  for (int ci = 0; ci < c; ++ci) {
    const S* src = x.val().data() + static_cast<std::int64_t>(ci) * h * w;
    S* dst = out.val().data() + static_cast<std::int64_t>(ci) * ho * wo;
    for (int oy = 0; oy < ho; ++oy) {
      const auto& a = ty[static_cast<std::size_t>(oy)];
      for (int ox = 0; ox < wo; ++ox) {
        const auto& b = tx[static_cast<std::size_t>(ox)];
        const double v00 = static_cast<double>(src[a.i0 * w + b.i0]);
        const double v01 = static_cast<double>(src[a.i0 * w + b.i1]);
        const double v10 = static_cast<double>(src[a.i1 * w + b.i0]);
        const double v11 = static_cast<double>(src[a.i1 * w + b.i1]);
        dst[oy * wo + ox] = static_cast<S>((1 - a.t) * ((1 - b.t) * v00 + b.t * v01) +
                                           a.t * ((1 - b.t) * v10 + b.t * v11));
      }
    }
  }
  return detail::finish_op<S>("upsample_bilinear", std::move(out), {x},
      [px = x.node_ptr(), c, h, w, factor, ty, tx](TensorNode<S>& o) {
        if (!px->requires_grad) return;
        auto& dx = px->grad_buffer();
        const int ho = h * factor, wo = w * factor;
        for (int ci = 0; ci < c; ++ci) {
          const S* g = o.grad.data() + static_cast<std::int64_t>(ci) * ho * wo;
          S* d = dx.data() + static_cast<std::int64_t>(ci) * h * w;
          for (int oy = 0; oy < ho; ++oy) {
            const auto& a = ty[static_cast<std::size_t>(oy)];
            for (int ox = 0; ox < wo; ++ox) {
              const auto& b = tx[static_cast<std::size_t>(ox)];
              const S go = g[oy * wo + ox];
              d[a.i0 * w + b.i0] += static_cast<S>((1 - a.t) * (1 - b.t)) * go;
              d[a.i0 * w + b.i1] += static_cast<S>((1 - a.t) * b.t) * go;
              d[a.i1 * w + b.i0] += static_cast<S>(a.t * (1 - b.t)) * go;
              d[a.i1 * w + b.i1] += static_cast<S>(a.t * b.t) * go;
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

// Mean binary cross-entropy on raw logits, computed in the overflow-safe
// form max(x,0) - x*t + log1p(exp(-|x|)). Targets must be 0 or 1 and get
// no gradient.
template <typename S>
Tensor<S> bce_with_logits(const Tensor<S>& logits, const Tensor<S>& targets) {
  detail::check_same_shape("bce_with_logits", logits, targets);
  const std::int64_t n = logits.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    const S t = targets.val()[i];
    if (t != S(0) && t != S(1))
      throw contract_error("bce_with_logits: target " + std::to_string(static_cast<double>(t)) +
                           " at index " + std::to_string(i) + " is not binary");
  }
  Tensor<S> out = Tensor<S>::empty({1});
  double acc = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(logits.val()[i]);
    const double t = static_cast<double>(targets.val()[i]);
    acc += std::max(x, 0.0) - x * t + std::log1p(std::exp(-std::abs(x)));
  }
  out.val()[0] = static_cast<S>(acc / static_cast<double>(n));
  return detail::finish_op<S>("bce_with_logits", std::move(out), {logits, targets},
      [pl = logits.node_ptr(), pt = targets.node_ptr(), n](TensorNode<S>& o) {
        if (!pl->requires_grad) return;
        auto& dx = pl->grad_buffer();
        const S g = o.grad[0] / static_cast<S>(n);
        for (std::int64_t i = 0; i < n; ++i)
          dx[i] += g * (detail::stable_sigmoid(pl->value[i]) - pt->value[i]);
      });
}

// ---------------------------------------------------------------------------
// Value-level helpers (no gradient flow)
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> flip_hv(const Tensor<S>& x, bool horizontal, bool vertical) {
  detail::check_rank("flip_hv", x, 3);
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor<S> out = Tensor<S>::empty(x.shape());
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h; ++y) {
      const int sy = vertical ? h - 1 - y : y;
      for (int xx = 0; xx < w; ++xx) {
        const int sx = horizontal ? w - 1 - xx : xx;
        out.val()[(static_cast<std::int64_t>(ci) * h + y) * w + xx] =
            x.val()[(static_cast<std::int64_t>(ci) * h + sy) * w + sx];
      }
    }
  return out;
}

}  // namespace uanet
