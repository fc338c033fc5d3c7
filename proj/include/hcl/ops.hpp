#pragma once

#include <cmath>
#include <string>

#include "hcl/tape.hpp"
#include "hcl/tensor.hpp"

// Differentiable primitives. Every function computes the forward result and,
// when the tape is recording and some input carries gradient, records a
// backward rule that accumulates into the inputs' grad buffers.
namespace hcl::ops {

enum class PadMode { Zero, Replicate };

namespace detail {

inline Index conv_out_extent(Index in, Index k, Index stride, Index pad) {
  return (in + 2 * pad - k) / stride + 1;
}

template <class S>
void check_rank(const Tensor<S>& t, Index rank, const char* who) {
  if (t.rank() != rank)
    throw ShapeError(std::string(who) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
}

inline Index clamp_index(Index i, Index n) { return i < 0 ? 0 : (i >= n ? n - 1 : i); }

// Gathers conv patches into a (Ci*kh*kw) x (Ho*Wo) matrix, one column per
// output position.
template <class S>
MatX<S> im2col(const S* x, Index C, Index H, Index W, Index kh, Index kw, Index stride,
               Index pad, PadMode mode, Index Ho, Index Wo) {
  MatX<S> patches(C * kh * kw, Ho * Wo);
  for (Index oy = 0; oy < Ho; ++oy) {
    for (Index ox = 0; ox < Wo; ++ox) {
      const Index col = oy * Wo + ox;
      S* dst = patches.col(col).data();
      for (Index c = 0; c < C; ++c) {
        const S* plane = x + c * H * W;
        for (Index dy = 0; dy < kh; ++dy) {
          const Index iy = oy * stride + dy - pad;
          for (Index dx = 0; dx < kw; ++dx) {
            const Index ix = ox * stride + dx - pad;
            S v;
            if (mode == PadMode::Zero) {
              v = (iy >= 0 && iy < H && ix >= 0 && ix < W) ? plane[iy * W + ix] : S(0);
            } else {
              v = plane[clamp_index(iy, H) * W + clamp_index(ix, W)];
            }
            *dst++ = v;
          }
        }
      }
    }
  }
  return patches;
}

// Scatter-add of patch gradients back onto the input, inverse of im2col.
template <class S>
void col2im_add(const MatX<S>& dpatches, S* dx, Index C, Index H, Index W, Index kh, Index kw,
                Index stride, Index pad, PadMode mode, Index Ho, Index Wo) {
  for (Index oy = 0; oy < Ho; ++oy) {
    for (Index ox = 0; ox < Wo; ++ox) {
      const Index col = oy * Wo + ox;
      const S* src = dpatches.col(col).data();
      for (Index c = 0; c < C; ++c) {
        S* plane = dx + c * H * W;
        for (Index dy = 0; dy < kh; ++dy) {
          const Index iy = oy * stride + dy - pad;
          for (Index dx2 = 0; dx2 < kw; ++dx2) {
            const Index ix = ox * stride + dx2 - pad;
            const S g = *src++;
            if (mode == PadMode::Zero) {
              if (iy >= 0 && iy < H && ix >= 0 && ix < W) plane[iy * W + ix] += g;
            } else {
              plane[clamp_index(iy, H) * W + clamp_index(ix, W)] += g;
            }
          }
        }
      }
    }
  }
}

}  // namespace detail

// 2-d convolution of a [Ci,H,W] map with a [Co,Ci,kh,kw] kernel. `bias` is
// optional (undefined Tensor) and has shape [Co].
template <class S>
Tensor<S> conv2d(Tape<S>& tape, const Tensor<S>& x, const Tensor<S>& k, const Tensor<S>& bias,
                 int stride, int pad, PadMode mode = PadMode::Zero) {
  detail::check_rank(x, 3, "conv2d input");
  detail::check_rank(k, 4, "conv2d kernel");
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (pad < 0) throw ShapeError("conv2d: pad must be >= 0");
  const Index Ci = x.dim(0), H = x.dim(1), W = x.dim(2);
  const Index Co = k.dim(0), kh = k.dim(2), kw = k.dim(3);
  if (k.dim(1) != Ci)
    throw ShapeError("conv2d: kernel expects " + std::to_string(k.dim(1)) +
                     " input channels, map has " + std::to_string(Ci));
  if (kh > H + 2 * pad || kw > W + 2 * pad)
    throw ShapeError("conv2d: kernel larger than padded input");
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != Co))
    throw ShapeError("conv2d: bias must have shape [Co]");
  const Index Ho = detail::conv_out_extent(H, kh, stride, pad);
  const Index Wo = detail::conv_out_extent(W, kw, stride, pad);

  MatX<S> patches = detail::im2col(x.data(), Ci, H, W, kh, kw, stride, pad, mode, Ho, Wo);
  Eigen::Map<const RowMajorMatX<S>> kmat(k.data(), Co, Ci * kh * kw);

  Tensor<S> out = Tensor<S>::zeros({Co, Ho, Wo});
  Eigen::Map<RowMajorMatX<S>> omat(out.data(), Co, Ho * Wo);
  omat.noalias() = kmat * patches;
  if (bias.defined()) omat.colwise() += bias.values();

  const bool track_bias = bias.defined() && bias.needs_grad();
  if (tape.tracks(x, k) || (tape.recording() && track_bias)) {
    auto P = std::make_shared<MatX<S>>(std::move(patches));
    std::vector<Tensor<S>> inputs{x, k};
    if (bias.defined()) inputs.push_back(bias);
    tape.record(inputs, out, [=]() mutable {
      Eigen::Map<const RowMajorMatX<S>> dout(out.grad().data(), Co, Ho * Wo);
      if (k.needs_grad()) {
        Eigen::Map<RowMajorMatX<S>> dk(k.grad().data(), Co, Ci * kh * kw);
        dk.noalias() += dout * P->transpose();
      }
      if (x.needs_grad()) {
        Eigen::Map<const RowMajorMatX<S>> km(k.data(), Co, Ci * kh * kw);
        MatX<S> dpatches = km.transpose() * dout;
        detail::col2im_add(dpatches, x.grad().data(), Ci, H, W, kh, kw, Index(stride),
                           Index(pad), mode, Ho, Wo);
      }
      if (bias.defined() && bias.needs_grad()) bias.grad() += dout.rowwise().sum();
    });
  }
  return out;
}

template <class S>
Tensor<S> conv2d(Tape<S>& tape, const Tensor<S>& x, const Tensor<S>& k, int stride, int pad,
                 PadMode mode = PadMode::Zero) {
  return conv2d(tape, x, k, Tensor<S>(), stride, pad, mode);
}

// Mean over square windows; no padding, so `window <= H, W` is required.
template <class S>
Tensor<S> avg_pool2d(Tape<S>& tape, const Tensor<S>& x, int window, int stride) {
  detail::check_rank(x, 3, "avg_pool2d input");
  if (window < 1 || stride < 1) throw ShapeError("avg_pool2d: window and stride must be >= 1");
  const Index C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (window > H || window > W) throw ShapeError("avg_pool2d: window larger than input");
  const Index Ho = (H - window) / stride + 1;
  const Index Wo = (W - window) / stride + 1;

  Tensor<S> out = Tensor<S>::zeros({C, Ho, Wo});
  const S inv = S(1) / (S(window) * S(window));
  for (Index c = 0; c < C; ++c) {
    const S* plane = x.data() + c * H * W;
    S* oplane = out.data() + c * Ho * Wo;
    for (Index oy = 0; oy < Ho; ++oy)
      for (Index ox = 0; ox < Wo; ++ox) {
        S acc;
        if (window == 2) {
          // pairwise order: exact for fields of equal 2x2 blocks, which makes
          // pooling the exact inverse of nearest 2x upsampling
          const S* p = plane + (oy * stride) * W + ox * stride;
          acc = (p[0] + p[1]) + (p[W] + p[W + 1]);
        } else {
          acc = 0;
          for (Index dy = 0; dy < window; ++dy)
            for (Index dx = 0; dx < window; ++dx)
              acc += plane[(oy * stride + dy) * W + (ox * stride + dx)];
        }
        oplane[oy * Wo + ox] = acc * inv;
      }
  }

  if (tape.tracks(x)) {
    tape.record({x}, out, [=]() mutable {
      for (Index c = 0; c < C; ++c) {
        S* dplane = x.grad().data() + c * H * W;
        const S* doplane = out.grad().data() + c * Ho * Wo;
        for (Index oy = 0; oy < Ho; ++oy)
          for (Index ox = 0; ox < Wo; ++ox) {
            const S g = doplane[oy * Wo + ox] * inv;
            for (Index dy = 0; dy < window; ++dy)
              for (Index dx = 0; dx < window; ++dx)
                dplane[(oy * stride + dy) * W + (ox * stride + dx)] += g;
          }
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> upsample_nearest2x(Tape<S>& tape, const Tensor<S>& x) {
  detail::check_rank(x, 3, "upsample_nearest2x input");
  const Index C = x.dim(0), H = x.dim(1), W = x.dim(2);
  Tensor<S> out = Tensor<S>::zeros({C, 2 * H, 2 * W});
  for (Index c = 0; c < C; ++c) {
    const S* plane = x.data() + c * H * W;
    S* oplane = out.data() + c * 4 * H * W;
    for (Index y = 0; y < 2 * H; ++y)
      for (Index xph = 0; xph < 2 * W; ++xph) oplane[y * 2 * W + xph] = plane[(y / 2) * W + xph / 2];
  }
  if (tape.tracks(x)) {
    tape.record({x}, out, [=]() mutable {
      for (Index c = 0; c < C; ++c) {
        S* dplane = x.grad().data() + c * H * W;
        const S* doplane = out.grad().data() + c * 4 * H * W;
        for (Index y = 0; y < 2 * H; ++y)
          for (Index xph = 0; xph < 2 * W; ++xph)
            dplane[(y / 2) * W + xph / 2] += doplane[y * 2 * W + xph];
      }
    });
  }
  return out;
}

// out = W*x + b for a length-n vector, [m,n] weight and [m] bias.
template <class S>
Tensor<S> linear(Tape<S>& tape, const Tensor<S>& x, const Tensor<S>& weight,
                 const Tensor<S>& bias) {
  detail::check_rank(x, 1, "linear input");
  detail::check_rank(weight, 2, "linear weight");
  detail::check_rank(bias, 1, "linear bias");
  const Index n = x.dim(0), m = weight.dim(0);
  if (weight.dim(1) != n || bias.dim(0) != m)
    throw ShapeError("linear: dimension mismatch, x" + shape_str(x.shape()) + " W" +
                     shape_str(weight.shape()) + " b" + shape_str(bias.shape()));
  Eigen::Map<const RowMajorMatX<S>> wmat(weight.data(), m, n);
  Tensor<S> out = Tensor<S>::zeros({m});
  out.values().noalias() = wmat * x.values() + bias.values();

  if (tape.tracks(x, weight, bias)) {
    tape.record({x, weight, bias}, out, [=]() mutable {
      const auto& g = out.grad();
      if (x.needs_grad()) {
        Eigen::Map<const RowMajorMatX<S>> wm(weight.data(), m, n);
        x.grad().noalias() += wm.transpose() * g;
      }
      if (weight.needs_grad()) {
        Eigen::Map<RowMajorMatX<S>> dw(weight.grad().data(), m, n);
        dw.noalias() += g * x.values().transpose();
      }
      if (bias.needs_grad()) bias.grad() += g;
    });
  }
  return out;
}

// Group normalization over a [C,H,W] map: zero mean / unit variance within
// each channel group (biased variance), then per-channel affine.
template <class S>
Tensor<S> group_norm(Tape<S>& tape, const Tensor<S>& x, int groups, const Tensor<S>& gamma,
                     const Tensor<S>& beta, S eps) {
  detail::check_rank(x, 3, "group_norm input");
  if (eps <= S(0)) throw ShapeError("group_norm: eps must be > 0");
  const Index C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (groups < 1 || C % groups != 0)
    throw ShapeError("group_norm: channel count " + std::to_string(C) +
                     " not divisible by groups " + std::to_string(groups));
  if (gamma.rank() != 1 || gamma.dim(0) != C || beta.rank() != 1 || beta.dim(0) != C)
    throw ShapeError("group_norm: gamma/beta must have shape [C]");
  const Index gs = C / groups;       // channels per group
  const Index m = gs * H * W;        // elements per group

  Tensor<S> out = Tensor<S>::zeros({C, H, W});
  VecX<S> mean(groups), inv_std(groups);
  VecX<S> xhat(x.numel());
  for (Index g = 0; g < groups; ++g) {
    const auto seg = x.values().segment(g * m, m);
    const S mu = seg.mean();
    const S var = (seg.array() - mu).square().sum() / S(m);
    const S inv = S(1) / std::sqrt(var + eps);
    mean[g] = mu;
    inv_std[g] = inv;
    xhat.segment(g * m, m) = (seg.array() - mu) * inv;
  }
  for (Index c = 0; c < C; ++c)
    out.values().segment(c * H * W, H * W) =
        gamma.values()[c] * xhat.segment(c * H * W, H * W).array() + beta.values()[c];

  if (tape.tracks(x, gamma, beta)) {
    auto xh = std::make_shared<VecX<S>>(std::move(xhat));
    tape.record({x, gamma, beta}, out, [=]() mutable {
      const auto& g_out = out.grad();
      if (gamma.needs_grad() || beta.needs_grad()) {
        for (Index c = 0; c < C; ++c) {
          const auto gseg = g_out.segment(c * H * W, H * W);
          if (gamma.needs_grad())
            gamma.grad()[c] += (gseg.array() * xh->segment(c * H * W, H * W).array()).sum();
          if (beta.needs_grad()) beta.grad()[c] += gseg.sum();
        }
      }
      if (x.needs_grad()) {
        for (Index g = 0; g < groups; ++g) {
          const Index base = g * m;
          const S inv = inv_std[g];
          // dxhat for the whole group, channel by channel (gamma varies per channel)
          VecX<S> dxhat(m);
          for (Index j = 0; j < gs; ++j) {
            const Index c = g * gs + j;
            dxhat.segment(j * H * W, H * W) =
                g_out.segment(c * H * W, H * W) * gamma.values()[c];
          }
          const auto xseg = x.values().segment(base, m);
          const S mu = mean[g];
          const S dvar =
              (dxhat.array() * (xseg.array() - mu)).sum() * S(-0.5) * inv * inv * inv;
          const S dmu = -inv * dxhat.sum() +
                        dvar * S(-2) / S(m) * (xseg.array() - mu).sum();
          x.grad().segment(base, m).array() +=
              dxhat.array() * inv + dvar * S(2) / S(m) * (xseg.array() - mu) + dmu / S(m);
        }
      }
    });
  }
  return out;
}

// v / max(||v||, eps). The eps guard keeps degenerate activations finite
// instead of raising.
template <class S>
Tensor<S> l2_normalize(Tape<S>& tape, const Tensor<S>& v, S eps) {
  if (eps <= S(0)) throw ShapeError("l2_normalize: eps must be > 0");
  const S norm = v.values().norm();
  const bool guarded = norm < eps;
  const S denom = guarded ? eps : norm;
  Tensor<S> out = Tensor<S>::zeros(v.shape());
  out.values() = v.values() / denom;

  if (tape.tracks(v)) {
    tape.record({v}, out, [=]() mutable {
      const auto& g = out.grad();
      if (!v.needs_grad()) return;
      if (guarded) {
        v.grad() += g / eps;
      } else {
        const S proj = out.values().dot(g);
        v.grad() += (g - proj * out.values()) / denom;
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> relu(Tape<S>& tape, const Tensor<S>& x) {
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  out.values() = x.values().cwiseMax(S(0));
  if (tape.tracks(x)) {
    tape.record({x}, out, [=]() mutable {
      if (x.needs_grad())
        x.grad().array() +=
            out.grad().array() * (x.values().array() > S(0)).template cast<S>();
    });
  }
  return out;
}

template <class S>
Tensor<S> add(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
  if (!same_shape(a, b))
    throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  out.values() = a.values() + b.values();
  if (tape.tracks(a, b)) {
    tape.record({a, b}, out, [=]() mutable {
      if (a.needs_grad()) a.grad() += out.grad();
      if (b.needs_grad()) b.grad() += out.grad();
    });
  }
  return out;
}

template <class S>
Tensor<S> concat(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_rank(a, 1, "concat lhs");
  detail::check_rank(b, 1, "concat rhs");
  const Index n = a.dim(0), m = b.dim(0);
  Tensor<S> out = Tensor<S>::zeros({n + m});
  out.values().head(n) = a.values();
  out.values().tail(m) = b.values();
  if (tape.tracks(a, b)) {
    tape.record({a, b}, out, [=]() mutable {
      if (a.needs_grad()) a.grad() += out.grad().head(n);
      if (b.needs_grad()) b.grad() += out.grad().tail(m);
    });
  }
  return out;
}

template <class S>
Tensor<S> reshape(Tape<S>& tape, const Tensor<S>& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  Tensor<S> out = Tensor<S>::from(std::move(shape), x.values());
  if (tape.tracks(x)) {
    tape.record({x}, out, [=]() mutable {
      if (x.needs_grad()) x.grad() += out.grad();
    });
  }
  return out;
}

template <class S>
Tensor<S> sum(Tape<S>& tape, const Tensor<S>& x) {
  Tensor<S> out = Tensor<S>::scalar(x.values().sum());
  if (tape.tracks(x)) {
    tape.record({x}, out, [=]() mutable {
      if (x.needs_grad()) x.grad().array() += out.grad()[0];
    });
  }
  return out;
}

template <class S>
Tensor<S> dot(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
  if (a.numel() != b.numel())
    throw ShapeError("dot: size mismatch " + std::to_string(a.numel()) + " vs " +
                     std::to_string(b.numel()));
  Tensor<S> out = Tensor<S>::scalar(a.values().dot(b.values()));
  if (tape.tracks(a, b)) {
    tape.record({a, b}, out, [=]() mutable {
      const S g = out.grad()[0];
      if (a.needs_grad()) a.grad() += g * b.values();
      if (b.needs_grad()) b.grad() += g * a.values();
    });
  }
  return out;
}

template <class S>
Tensor<S> scale(Tape<S>& tape, const Tensor<S>& x, S c) {
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  out.values() = x.values() * c;
  if (tape.tracks(x)) {
    tape.record({x}, out, [=]() mutable {
      if (x.needs_grad()) x.grad() += c * out.grad();
    });
  }
  return out;
}

}  // namespace hcl::ops
