#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "dimlab/image.hpp"

namespace dimlab::ad {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Feature map of one sample: channels x (height * width), row-major pixels.
template <typename S>
struct Tensor {
  Index c = 0, h = 0, w = 0;
  Mat<S> m;

  Tensor() = default;
  Tensor(Index channels, Index height, Index width) : c(channels), h(height), w(width), m(Mat<S>::Zero(channels, height * width)) {}

  Index pixels() const { return h * w; }
  bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }
  bool empty() const { return m.size() == 0; }
};

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

using Var = int;

/// Records operations in execution order; backward() walks them in reverse,
/// calling each node's adjoint once. A tape supports a single backward pass.
template <typename S>
class Tape {
 public:
  using Backward = std::function<void(Tape&, Var self)>;

  /// Leaf without gradient (network input).
  Var constant(Tensor<S> value) { return push(std::move(value), false, {}); }
  /// Leaf whose gradient is kept (parameters, probe inputs).
  Var leaf(Tensor<S> value) { return push(std::move(value), true, {}); }

  /// Op node; `back` is skipped when no input needs a gradient.
  Var record(Tensor<S> value, std::initializer_list<Var> inputs, Backward back) {
    bool needs = false;
    for (Var v : inputs) needs = needs || nodes_[static_cast<std::size_t>(v)].needs_grad;
    return push(std::move(value), needs, needs ? std::move(back) : Backward{});
  }

  const Tensor<S>& value(Var v) const { return node(v).value; }
  bool needs_grad(Var v) const { return node(v).needs_grad; }

  /// Zero-initialised on first use.
  Tensor<S>& grad_mut(Var v) {
    auto& n = node(v);
    if (n.grad.empty()) n.grad = Tensor<S>(n.value.c, n.value.h, n.value.w);
    return n.grad;
  }
  /// Gradient after backward(); zeros if nothing reached the node.
  Tensor<S> grad(Var v) const {
    const auto& n = node(v);
    return n.grad.empty() ? Tensor<S>(n.value.c, n.value.h, n.value.w) : n.grad;
  }

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }
  /// Number of adjoints run by the last backward().
  std::size_t visited() const { return visited_; }

  void backward(Var out, const Tensor<S>& upstream) {
    if (consumed_) throw TapeError("tape already consumed by a backward pass");
    if (!upstream.same_shape(value(out))) throw TapeError("upstream gradient shape differs from the output");
    consumed_ = true;
    grad_mut(out).m += upstream.m;
    for (Var v = out; v >= 0; --v) {
      auto& n = nodes_[static_cast<std::size_t>(v)];
      if (n.back && !n.grad.empty()) {
        n.back(*this, v);
        ++visited_;
      }
    }
  }

 private:
  struct Node {
    Tensor<S> value, grad;
    bool needs_grad = false;
    Backward back;
  };

  Var push(Tensor<S> value, bool needs, Backward back) {
    nodes_.push_back({std::move(value), {}, needs, std::move(back)});
    return static_cast<Var>(nodes_.size() - 1);
  }
  Node& node(Var v) { return nodes_.at(static_cast<std::size_t>(v)); }
  const Node& node(Var v) const { return nodes_.at(static_cast<std::size_t>(v)); }

  std::vector<Node> nodes_;
  bool consumed_ = false;
  std::size_t visited_ = 0;
};

namespace detail {

template <typename S>
void im2col(const Tensor<S>& x, Index k, Index stride, Index oh, Index ow, Mat<S>& cols) {
  const Index pad = k / 2;
  cols.setZero(x.c * k * k, oh * ow);
  for (Index ci = 0; ci < x.c; ++ci) {
    for (Index ky = 0; ky < k; ++ky) {
      for (Index kx = 0; kx < k; ++kx) {
        S* row = cols.row((ci * k + ky) * k + kx).data();
        const S* src = x.m.row(ci).data();
        for (Index oy = 0; oy < oh; ++oy) {
          const Index iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= x.h) continue;
          for (Index ox = 0; ox < ow; ++ox) {
            const Index ix = ox * stride + kx - pad;
            if (ix >= 0 && ix < x.w) row[oy * ow + ox] = src[iy * x.w + ix];
          }
        }
      }
    }
  }
}

template <typename S>
void col2im_add(const Mat<S>& cols, Index k, Index stride, Index oh, Index ow, Tensor<S>& dx) {
  const Index pad = k / 2;
  for (Index ci = 0; ci < dx.c; ++ci) {
    S* dst = dx.m.row(ci).data();
    for (Index ky = 0; ky < k; ++ky) {
      for (Index kx = 0; kx < k; ++kx) {
        const S* row = cols.row((ci * k + ky) * k + kx).data();
        for (Index oy = 0; oy < oh; ++oy) {
          const Index iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= dx.h) continue;
          for (Index ox = 0; ox < ow; ++ox) {
            const Index ix = ox * stride + kx - pad;
            if (ix >= 0 && ix < dx.w) dst[iy * dx.w + ix] += row[oy * ow + ox];
          }
        }
      }
    }
  }
}

// Half-pixel-centre bilinear weights for doubling a 1-D axis.
struct Lerp {
  std::vector<Index> i0, i1;
  std::vector<double> w1;
};

inline Lerp upsample_axis(Index n) {
  Lerp l;
  for (Index o = 0; o < 2 * n; ++o) {
    const double src = std::max(0.0, (static_cast<double>(o) + 0.5) / 2.0 - 0.5);
    const Index a = std::min(static_cast<Index>(src), n - 1);
    l.i0.push_back(a);
    l.i1.push_back(std::min(a + 1, n - 1));
    l.w1.push_back(src - static_cast<double>(a));
  }
  return l;
}

}  // namespace detail

/// Same-padded k x k convolution (k odd) with the given stride. `weight` is
/// out_channels x 1 x (in_channels * k * k); `bias` is out_channels x 1 x 1.
template <typename S>
Var conv2d(Tape<S>& t, Var x, Var weight, Var bias, Index k, Index stride = 1) {
  const Tensor<S>& in = t.value(x);
  const Tensor<S>& w = t.value(weight);
  if (k % 2 != 1 || w.w != in.c * k * k || t.value(bias).c != w.c) throw TapeError("conv2d: shape mismatch");
  const Index oh = (in.h - 1) / stride + 1, ow = (in.w - 1) / stride + 1;
  auto cols = std::make_shared<Mat<S>>();
  const bool pointwise = k == 1 && stride == 1;
  if (!pointwise) detail::im2col(in, k, stride, oh, ow, *cols);
  const Mat<S>& c = pointwise ? in.m : *cols;
  Tensor<S> out(w.c, oh, ow);
  out.m.noalias() = w.m * c;
  out.m.colwise() += t.value(bias).m.col(0);
  return t.record(std::move(out), {x, weight, bias}, [=](Tape<S>& tp, Var self) {
    const Mat<S>& dy = tp.grad_mut(self).m;
    const Mat<S>& colm = pointwise ? tp.value(x).m : *cols;
    if (tp.needs_grad(weight)) tp.grad_mut(weight).m.noalias() += dy * colm.transpose();
    if (tp.needs_grad(bias)) tp.grad_mut(bias).m.col(0) += dy.rowwise().sum();
    if (tp.needs_grad(x)) {
      if (pointwise) {
        tp.grad_mut(x).m.noalias() += tp.value(weight).m.transpose() * dy;
      } else {
        Mat<S> dcols = tp.value(weight).m.transpose() * dy;
        detail::col2im_add(dcols, k, stride, oh, ow, tp.grad_mut(x));
      }
    }
  });
}

/// Per-channel standardisation over pixels followed by gamma * x + beta.
template <typename S>
Var instance_norm(Tape<S>& t, Var x, Var gamma, Var beta, double eps) {
  const Tensor<S>& in = t.value(x);
  const Index n = in.pixels();
  auto xhat = std::make_shared<Mat<S>>(in.c, n);
  auto inv_std = std::make_shared<std::vector<S>>(static_cast<std::size_t>(in.c));
  Tensor<S> out(in.c, in.h, in.w);
  for (Index ch = 0; ch < in.c; ++ch) {
    const auto row = in.m.row(ch);
    const double mean = static_cast<double>(row.template cast<double>().mean());
    const double var = (row.template cast<double>().array() - mean).square().mean();
    const S is = static_cast<S>(1.0 / std::sqrt(var + eps));
    (*inv_std)[static_cast<std::size_t>(ch)] = is;
    xhat->row(ch) = (row.array() - static_cast<S>(mean)) * is;
    out.m.row(ch) = xhat->row(ch).array() * t.value(gamma).m(ch, 0) + t.value(beta).m(ch, 0);
  }
  return t.record(std::move(out), {x, gamma, beta}, [=](Tape<S>& tp, Var self) {
    const Mat<S>& dy = tp.grad_mut(self).m;
    const S nn = static_cast<S>(n);
    for (Index ch = 0; ch < dy.rows(); ++ch) {
      const auto g = dy.row(ch).array();
      const auto xh = xhat->row(ch).array();
      if (tp.needs_grad(gamma)) tp.grad_mut(gamma).m(ch, 0) += (g * xh).sum();
      if (tp.needs_grad(beta)) tp.grad_mut(beta).m(ch, 0) += g.sum();
      if (tp.needs_grad(x)) {
        const S gm = tp.value(gamma).m(ch, 0);
        const S sum_g = g.sum() * gm, sum_gx = (g * xh).sum() * gm;
        tp.grad_mut(x).m.row(ch).array() +=
            (*inv_std)[static_cast<std::size_t>(ch)] / nn * (nn * gm * g - sum_g - xh * sum_gx);
      }
    }
  });
}

template <typename S>
Var relu(Tape<S>& t, Var x) {
  Tensor<S> out = t.value(x);
  out.m = out.m.cwiseMax(S(0));
  return t.record(std::move(out), {x}, [=](Tape<S>& tp, Var self) {
    tp.grad_mut(x).m.array() += (tp.value(x).m.array() > S(0)).select(tp.grad_mut(self).m.array(), S(0));
  });
}

template <typename S>
Var sigmoid(Tape<S>& t, Var x) {
  Tensor<S> out = t.value(x);
  out.m = (S(1) + (-out.m.array()).exp()).inverse().matrix();
  return t.record(std::move(out), {x}, [=](Tape<S>& tp, Var self) {
    const auto y = tp.value(self).m.array();
    tp.grad_mut(x).m.array() += tp.grad_mut(self).m.array() * y * (S(1) - y);
  });
}

template <typename S>
Var add(Tape<S>& t, Var a, Var b) {
  if (!t.value(a).same_shape(t.value(b))) throw TapeError("add: shape mismatch");
  Tensor<S> out = t.value(a);
  out.m += t.value(b).m;
  return t.record(std::move(out), {a, b}, [=](Tape<S>& tp, Var self) {
    const Mat<S> g = tp.grad_mut(self).m;
    if (tp.needs_grad(a)) tp.grad_mut(a).m += g;
    if (tp.needs_grad(b)) tp.grad_mut(b).m += g;
  });
}

/// Channel concatenation [a; b].
template <typename S>
Var concat(Tape<S>& t, Var a, Var b) {
  const Tensor<S>& ta = t.value(a);
  const Tensor<S>& tb = t.value(b);
  if (ta.h != tb.h || ta.w != tb.w) throw TapeError("concat: spatial size mismatch");
  Tensor<S> out(ta.c + tb.c, ta.h, ta.w);
  out.m.topRows(ta.c) = ta.m;
  out.m.bottomRows(tb.c) = tb.m;
  const Index ca = ta.c, cb = tb.c;
  return t.record(std::move(out), {a, b}, [=](Tape<S>& tp, Var self) {
    const Mat<S>& g = tp.grad_mut(self).m;
    if (tp.needs_grad(a)) tp.grad_mut(a).m += g.topRows(ca);
    if (tp.needs_grad(b)) tp.grad_mut(b).m += g.bottomRows(cb);
  });
}

/// Bilinear 2x upsampling with half-pixel centres and edge clamping.
template <typename S>
Var upsample2x(Tape<S>& t, Var x) {
  const Tensor<S>& in = t.value(x);
  const auto ly = std::make_shared<detail::Lerp>(detail::upsample_axis(in.h));
  const auto lx = std::make_shared<detail::Lerp>(detail::upsample_axis(in.w));
  const Index oh = 2 * in.h, ow = 2 * in.w, iw = in.w;
  Tensor<S> out(in.c, oh, ow);
  for (Index ch = 0; ch < in.c; ++ch) {
    const S* src = in.m.row(ch).data();
    S* dst = out.m.row(ch).data();
    for (Index oy = 0; oy < oh; ++oy) {
      const std::size_t yy = static_cast<std::size_t>(oy);
      const S wy = static_cast<S>(ly->w1[yy]);
      const S* r0 = src + ly->i0[yy] * iw;
      const S* r1 = src + ly->i1[yy] * iw;
      for (Index ox = 0; ox < ow; ++ox) {
        const std::size_t xx = static_cast<std::size_t>(ox);
        const S wx = static_cast<S>(lx->w1[xx]);
        const Index a = lx->i0[xx], b = lx->i1[xx];
        const S top = r0[a] + wx * (r0[b] - r0[a]);
        const S bot = r1[a] + wx * (r1[b] - r1[a]);
        dst[oy * ow + ox] = top + wy * (bot - top);
      }
    }
  }
  return t.record(std::move(out), {x}, [=](Tape<S>& tp, Var self) {
    const Mat<S>& g = tp.grad_mut(self).m;
    Tensor<S>& dx = tp.grad_mut(x);
    for (Index ch = 0; ch < g.rows(); ++ch) {
      const S* src = g.row(ch).data();
      S* dst = dx.m.row(ch).data();
      for (Index oy = 0; oy < oh; ++oy) {
        const std::size_t yy = static_cast<std::size_t>(oy);
        const S wy = static_cast<S>(ly->w1[yy]);
        S* r0 = dst + ly->i0[yy] * iw;
        S* r1 = dst + ly->i1[yy] * iw;
        for (Index ox = 0; ox < ow; ++ox) {
          const std::size_t xx = static_cast<std::size_t>(ox);
          const S wx = static_cast<S>(lx->w1[xx]);
          const Index a = lx->i0[xx], b = lx->i1[xx];
          const S v = src[oy * ow + ox];
          r0[a] += (1 - wy) * (1 - wx) * v;
          r0[b] += (1 - wy) * wx * v;
          r1[a] += wy * (1 - wx) * v;
          r1[b] += wy * wx * v;
        }
      }
    }
  });
}

}  // namespace dimlab::ad
