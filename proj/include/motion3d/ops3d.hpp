#pragma once

// Spatio-temporal kernels over (N, C, T, H, W) tensors: 3D convolution, its
// transpose, max pooling, and the two training losses. Convolutions lower to
// GEMM through an im2col buffer per sample; the transposed convolution reuses
// the same lowering in the adjoint direction, so the two are exact adjoints.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "motion3d/autodiff.hpp"

namespace motion3d {

struct Extent3 {
  Index t = 1;
  Index h = 1;
  Index w = 1;

  Index volume() const { return t * h * w; }
  bool operator==(const Extent3&) const = default;
  std::string str() const {
    return std::to_string(t) + "x" + std::to_string(h) + "x" + std::to_string(w);
  }
};

/// Spatio-temporal extents (T, H, W) of a rank-5 tensor.
inline Extent3 grid_of(const Shape& s) { return {s[2], s[3], s[4]}; }

struct ConvSpec {
  Index in_channels = 1;
  Index out_channels = 1;
  Extent3 kernel{3, 3, 3};
  Extent3 stride{1, 1, 1};
  Extent3 padding{1, 1, 1};

  void validate() const {
    auto bad = [&](const std::string& why) {
      throw SpecError("invalid conv spec (" + why + "): kernel " + kernel.str() + ", stride " +
                      stride.str() + ", padding " + padding.str());
    };
    if (in_channels < 1 || out_channels < 1) bad("channel count < 1");
    if (kernel.t < 1 || kernel.h < 1 || kernel.w < 1) bad("kernel extent < 1");
    if (stride.t < 1 || stride.h < 1 || stride.w < 1) bad("stride < 1");
    if (padding.t < 0 || padding.h < 0 || padding.w < 0) bad("negative padding");
    if (padding.t >= kernel.t || padding.h >= kernel.h || padding.w >= kernel.w) {
      bad("padding must be smaller than the kernel");
    }
  }

  /// floor((in + 2p - k) / s) + 1 per axis.
  Extent3 conv_output(Extent3 in) const {
    validate();
    auto axis = [](Index i, Index k, Index s, Index p) {
      const Index span = i + 2 * p - k;
      return span < 0 ? Index(0) : span / s + 1;
    };
    Extent3 out{axis(in.t, kernel.t, stride.t, padding.t), axis(in.h, kernel.h, stride.h, padding.h),
                axis(in.w, kernel.w, stride.w, padding.w)};
    if (out.t < 1 || out.h < 1 || out.w < 1) {
      throw SpecError("conv output collapses to zero size for input " + in.str() + " with kernel " +
                      kernel.str());
    }
    return out;
  }

  /// (in - 1) * s - 2p + k per axis.
  Extent3 deconv_output(Extent3 in) const {
    validate();
    auto axis = [](Index i, Index k, Index s, Index p) { return (i - 1) * s - 2 * p + k; };
    Extent3 out{axis(in.t, kernel.t, stride.t, padding.t), axis(in.h, kernel.h, stride.h, padding.h),
                axis(in.w, kernel.w, stride.w, padding.w)};
    if (out.t < 1 || out.h < 1 || out.w < 1) {
      throw SpecError("deconv output collapses to zero size for input " + in.str());
    }
    return out;
  }
};

namespace kernels {

/// Lowering geometry shared by conv (image -> grid) and deconv (grid -> image).
/// `image` is the full-resolution side, `grid` the positions the kernel visits.
struct Geometry {
  Index channels = 1;
  Extent3 image;
  Extent3 grid;
  Extent3 kernel;
  Extent3 stride;
  Extent3 padding;

  Index rows() const { return channels * kernel.volume(); }
  Index cols() const { return grid.volume(); }
  bool is_pointwise() const {
    return kernel == Extent3{1, 1, 1} && stride == Extent3{1, 1, 1} && padding == Extent3{0, 0, 0};
  }
};

// Valid output-position range [lo, hi) along one axis for kernel tap k.
inline void tap_range(Index k, Index stride, Index pad, Index in, Index out, Index& lo, Index& hi) {
  // need 0 <= o*stride - pad + k < in
  const Index num_lo = pad - k;
  lo = num_lo <= 0 ? 0 : (num_lo + stride - 1) / stride;
  const Index num_hi = in - 1 + pad - k;
  hi = num_hi < 0 ? 0 : std::min(out, num_hi / stride + 1);
  lo = std::min(lo, hi);
}

/// Unfolds one sample's image (C, T, H, W) into a (C*kt*kh*kw) x (grid voxels) matrix.
template <class T>
void im2col(const T* x, const Geometry& g, T* col) {
  const Index P = g.cols();
  const Index HW = g.grid.h * g.grid.w;
  for (Index c = 0; c < g.channels; ++c) {
    for (Index kt = 0; kt < g.kernel.t; ++kt) {
      for (Index kh = 0; kh < g.kernel.h; ++kh) {
        for (Index kw = 0; kw < g.kernel.w; ++kw) {
          const Index row = ((c * g.kernel.t + kt) * g.kernel.h + kh) * g.kernel.w + kw;
          T* dst = col + row * P;
          Index w_lo, w_hi;
          tap_range(kw, g.stride.w, g.padding.w, g.image.w, g.grid.w, w_lo, w_hi);
          for (Index ot = 0; ot < g.grid.t; ++ot) {
            const Index it = ot * g.stride.t - g.padding.t + kt;
            if (it < 0 || it >= g.image.t) {
              std::fill(dst + ot * HW, dst + (ot + 1) * HW, T(0));
              continue;
            }
            for (Index oh = 0; oh < g.grid.h; ++oh) {
              T* d = dst + ot * HW + oh * g.grid.w;
              const Index ih = oh * g.stride.h - g.padding.h + kh;
              if (ih < 0 || ih >= g.image.h) {
                std::fill(d, d + g.grid.w, T(0));
                continue;
              }
              const T* src = x + ((c * g.image.t + it) * g.image.h + ih) * g.image.w - g.padding.w + kw;
              std::fill(d, d + w_lo, T(0));
              for (Index ow = w_lo; ow < w_hi; ++ow) d[ow] = src[ow * g.stride.w];
              std::fill(d + w_hi, d + g.grid.w, T(0));
            }
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters (accumulates) the matrix back onto the image.
template <class T>
void col2im(const T* col, const Geometry& g, T* x) {
  const Index P = g.cols();
  const Index HW = g.grid.h * g.grid.w;
  for (Index c = 0; c < g.channels; ++c) {
    for (Index kt = 0; kt < g.kernel.t; ++kt) {
      for (Index kh = 0; kh < g.kernel.h; ++kh) {
        for (Index kw = 0; kw < g.kernel.w; ++kw) {
          const Index row = ((c * g.kernel.t + kt) * g.kernel.h + kh) * g.kernel.w + kw;
          const T* src = col + row * P;
          Index w_lo, w_hi;
          tap_range(kw, g.stride.w, g.padding.w, g.image.w, g.grid.w, w_lo, w_hi);
          for (Index ot = 0; ot < g.grid.t; ++ot) {
            const Index it = ot * g.stride.t - g.padding.t + kt;
            if (it < 0 || it >= g.image.t) continue;
            for (Index oh = 0; oh < g.grid.h; ++oh) {
              const Index ih = oh * g.stride.h - g.padding.h + kh;
              if (ih < 0 || ih >= g.image.h) continue;
              const T* s = src + ot * HW + oh * g.grid.w;
              T* dst = x + ((c * g.image.t + it) * g.image.h + ih) * g.image.w - g.padding.w + kw;
              for (Index ow = w_lo; ow < w_hi; ++ow) dst[ow * g.stride.w] += s[ow];
            }
          }
        }
      }
    }
  }
}

// Per-sample building blocks. `weight` is laid out as a (grid_channels x
// rows) matrix: for conv that is (C_out, C_in*k), for deconv (C_in, C_out*k).

/// grid (grid_channels x P) = weight * im2col(image).
template <class T>
void lower_forward(const T* image, const T* weight, Index grid_channels, const Geometry& g,
                   Buffer<T>& scratch, T* grid) {
  auto out = detail::view(grid, grid_channels, g.cols());
  auto wm = detail::view(weight, grid_channels, g.rows());
  if (g.is_pointwise()) {
    out.noalias() = wm * detail::view(image, g.rows(), g.cols());
    return;
  }
  scratch.resize(static_cast<std::size_t>(g.rows() * g.cols()));
  im2col(image, g, scratch.data());
  out.noalias() = wm * detail::view(scratch.data(), g.rows(), g.cols());
}

/// image += col2im(weight^T * grid).
template <class T>
void lower_adjoint(const T* grid, const T* weight, Index grid_channels, const Geometry& g,
                   Buffer<T>& scratch, T* image) {
  auto wm = detail::view(weight, grid_channels, g.rows());
  auto gm = detail::view(grid, grid_channels, g.cols());
  if (g.is_pointwise()) {
    detail::view(image, g.rows(), g.cols()).noalias() += wm.transpose() * gm;
    return;
  }
  scratch.resize(static_cast<std::size_t>(g.rows() * g.cols()));
  detail::view(scratch.data(), g.rows(), g.cols()).noalias() = wm.transpose() * gm;
  col2im(scratch.data(), g, image);
}

/// weight_grad += grid * im2col(image)^T.
template <class T>
void lower_weight_grad(const T* image, const T* grid, Index grid_channels, const Geometry& g,
                       Buffer<T>& scratch, T* weight_grad) {
  auto dw = detail::view(weight_grad, grid_channels, g.rows());
  auto gm = detail::view(grid, grid_channels, g.cols());
  if (g.is_pointwise()) {
    dw.noalias() += gm * detail::view(image, g.rows(), g.cols()).transpose();
    return;
  }
  scratch.resize(static_cast<std::size_t>(g.rows() * g.cols()));
  im2col(image, g, scratch.data());
  dw.noalias() += gm * detail::view(scratch.data(), g.rows(), g.cols()).transpose();
}

template <class T>
void add_channel_bias(T* y, const T* bias, Index channels, Index voxels) {
  for (Index c = 0; c < channels; ++c) {
    T* p = y + c * voxels;
    const T b = bias[c];
    for (Index i = 0; i < voxels; ++i) p[i] += b;
  }
}

template <class T>
void accumulate_channel_sums(const T* g, Index channels, Index voxels, T* out) {
  for (Index c = 0; c < channels; ++c) {
    const T* p = g + c * voxels;
    T s = 0;
    for (Index i = 0; i < voxels; ++i) s += p[i];
    out[c] += s;
  }
}

}  // namespace kernels

namespace detail {

inline void check_conv_operands(const char* op, const Shape& x, const Shape& w, const Shape& b,
                                Index x_channels, Index w0, Index w1, Index b_len,
                                const ConvSpec& spec) {
  const bool ok = x.rank() == 5 && w.rank() == 5 && b.rank() == 1 && x[1] == x_channels &&
                  w[0] == w0 && w[1] == w1 && w[2] == spec.kernel.t && w[3] == spec.kernel.h &&
                  w[4] == spec.kernel.w && b[0] == b_len;
  if (!ok) {
    throw ShapeError(std::string(op) + ": x " + x.str() + ", w " + w.str() + ", b " + b.str() +
                     " inconsistent with spec C_in=" + std::to_string(spec.in_channels) +
                     " C_out=" + std::to_string(spec.out_channels) + " kernel " + spec.kernel.str());
  }
}

}  // namespace detail

/// 3D cross-correlation. x (N, C_in, T, H, W), w (C_out, C_in, kt, kh, kw), b (C_out).
template <class T>
Var<T> conv3d(const Var<T>& x, const Var<T>& w, const Var<T>& b, const ConvSpec& spec) {
  spec.validate();
  detail::check_conv_operands("conv3d", x.shape(), w.shape(), b.shape(), spec.in_channels,
                              spec.out_channels, spec.in_channels, spec.out_channels, spec);
  count_kernel(Kernel::Conv3d);
  const Index n = x.shape()[0];
  const kernels::Geometry g{spec.in_channels, grid_of(x.shape()), spec.conv_output(grid_of(x.shape())),
                            spec.kernel,      spec.stride,        spec.padding};
  const Index cout = spec.out_channels;
  const Index in_sz = spec.in_channels * g.image.volume();
  const Index out_sz = cout * g.grid.volume();

  Tensor<T> out(Shape{n, cout, g.grid.t, g.grid.h, g.grid.w});
  Buffer<T> scratch;
  for (Index i = 0; i < n; ++i) {
    T* y = out.ptr() + i * out_sz;
    kernels::lower_forward(x.value().ptr() + i * in_sz, w.value().ptr(), cout, g, scratch, y);
    kernels::add_channel_bias(y, b.value().ptr(), cout, g.grid.volume());
  }

  const int ix = x.id(), iw = w.id(), ib = b.id();
  return x.tape().record(std::move(out), {ix, iw, ib}, [=](Tape<T>& t, int self) {
    const T* gy = t.grad(self).ptr();
    Buffer<T> buf;
    if (Tensor<T>* s = t.grad_sink(ib)) {
      for (Index i = 0; i < n; ++i)
        kernels::accumulate_channel_sums(gy + i * out_sz, cout, g.grid.volume(), s->ptr());
    }
    if (Tensor<T>* s = t.grad_sink(iw)) {
      for (Index i = 0; i < n; ++i)
        kernels::lower_weight_grad(t.value(ix).ptr() + i * in_sz, gy + i * out_sz, cout, g, buf, s->ptr());
    }
    if (Tensor<T>* s = t.grad_sink(ix)) {
      for (Index i = 0; i < n; ++i)
        kernels::lower_adjoint(gy + i * out_sz, t.value(iw).ptr(), cout, g, buf, s->ptr() + i * in_sz);
    }
  });
}

/// Transposed 3D convolution (adjoint of conv3d's input map, plus bias).
/// x (N, C_in, T, H, W), w (C_in, C_out, kt, kh, kw), b (C_out).
/// spec.in_channels / out_channels refer to this op's input / output.
template <class T>
Var<T> deconv3d(const Var<T>& x, const Var<T>& w, const Var<T>& b, const ConvSpec& spec) {
  spec.validate();
  detail::check_conv_operands("deconv3d", x.shape(), w.shape(), b.shape(), spec.in_channels,
                              spec.in_channels, spec.out_channels, spec.out_channels, spec);
  count_kernel(Kernel::Deconv3d);
  const Index n = x.shape()[0];
  const Extent3 in_grid = grid_of(x.shape());
  const kernels::Geometry g{spec.out_channels, spec.deconv_output(in_grid), in_grid,
                            spec.kernel,       spec.stride,                 spec.padding};
  const Index cin = spec.in_channels, cout = spec.out_channels;
  const Index in_sz = cin * g.grid.volume();
  const Index out_sz = cout * g.image.volume();

  Tensor<T> out(Shape{n, cout, g.image.t, g.image.h, g.image.w});
  Buffer<T> scratch;
  for (Index i = 0; i < n; ++i) {
    T* y = out.ptr() + i * out_sz;
    kernels::lower_adjoint(x.value().ptr() + i * in_sz, w.value().ptr(), cin, g, scratch, y);
    kernels::add_channel_bias(y, b.value().ptr(), cout, g.image.volume());
  }

  const int ix = x.id(), iw = w.id(), ib = b.id();
  return x.tape().record(std::move(out), {ix, iw, ib}, [=](Tape<T>& t, int self) {
    const T* gy = t.grad(self).ptr();
    Buffer<T> buf;
    if (Tensor<T>* s = t.grad_sink(ib)) {
      for (Index i = 0; i < n; ++i)
        kernels::accumulate_channel_sums(gy + i * out_sz, cout, g.image.volume(), s->ptr());
    }
    if (Tensor<T>* s = t.grad_sink(iw)) {
      for (Index i = 0; i < n; ++i)
        kernels::lower_weight_grad(gy + i * out_sz, t.value(ix).ptr() + i * in_sz, cin, g, buf, s->ptr());
    }
    if (Tensor<T>* s = t.grad_sink(ix)) {
      Buffer<T> tmp(static_cast<std::size_t>(in_sz));
      for (Index i = 0; i < n; ++i) {
        kernels::lower_forward(gy + i * out_sz, t.value(iw).ptr(), cin, g, buf, tmp.data());
        T* dst = s->ptr() + i * in_sz;
        for (Index j = 0; j < in_sz; ++j) dst[j] += tmp[static_cast<std::size_t>(j)];
      }
    }
  });
}

/// Max pooling without padding. The gradient is routed to the first maximal
/// voxel of each window in row-major (t, h, w) scan order.
template <class T>
Var<T> maxpool3d(const Var<T>& x, Extent3 window, Extent3 stride) {
  const Shape& s = x.shape();
  if (s.rank() != 5) throw ShapeError("maxpool3d expects rank 5, got " + s.str());
  if (window.t < 1 || window.h < 1 || window.w < 1 || stride.t < 1 || stride.h < 1 || stride.w < 1) {
    throw SpecError("maxpool3d: window " + window.str() + " / stride " + stride.str() + " must be >= 1");
  }
  const Extent3 in = grid_of(s);
  if (window.t > in.t || window.h > in.h || window.w > in.w) {
    throw SpecError("maxpool3d: window " + window.str() + " larger than input " + in.str());
  }
  count_kernel(Kernel::MaxPool3d);
  const Extent3 out{(in.t - window.t) / stride.t + 1, (in.h - window.h) / stride.h + 1,
                    (in.w - window.w) / stride.w + 1};
  const Index planes = s[0] * s[1];
  Tensor<T> y(Shape{s[0], s[1], out.t, out.h, out.w});
  std::vector<Index> argmax(static_cast<std::size_t>(y.numel()));
  const T* xp = x.value().ptr();
  Index o = 0;
  for (Index p = 0; p < planes; ++p) {
    const Index base = p * in.volume();
    for (Index ot = 0; ot < out.t; ++ot)
      for (Index oh = 0; oh < out.h; ++oh)
        for (Index ow = 0; ow < out.w; ++ow, ++o) {
          Index best = -1;
          T best_v = -std::numeric_limits<T>::infinity();
          for (Index kt = 0; kt < window.t; ++kt)
            for (Index kh = 0; kh < window.h; ++kh)
              for (Index kw = 0; kw < window.w; ++kw) {
                const Index idx = base + ((ot * stride.t + kt) * in.h + oh * stride.h + kh) * in.w +
                                  ow * stride.w + kw;
                if (best < 0 || xp[idx] > best_v) {
                  best = idx;
                  best_v = xp[idx];
                }
              }
          y[o] = best_v;
          argmax[static_cast<std::size_t>(o)] = best;
        }
  }
  const int ix = x.id();
  return x.tape().record(std::move(y), {ix}, [ix, argmax = std::move(argmax)](Tape<T>& t, int self) {
    Tensor<T>* sink = t.grad_sink(ix);
    if (!sink) return;
    const Tensor<T>& g = t.grad(self);
    for (Index i = 0; i < g.numel(); ++i) (*sink)[argmax[static_cast<std::size_t>(i)]] += g[i];
  });
}

/// Mean over the batch of -log softmax(logits)[label]. logits (N, K).
template <class T>
Var<T> softmax_cross_entropy(const Var<T>& logits, std::span<const int> labels) {
  const Shape& s = logits.shape();
  if (s.rank() != 2 || s[0] != static_cast<Index>(labels.size())) {
    throw ShapeError("softmax_cross_entropy: logits " + s.str() + " with " +
                     std::to_string(labels.size()) + " labels");
  }
  const Index n = s[0], k = s[1];
  for (int l : labels) {
    if (l < 0 || l >= k) {
      throw IndexError("label " + std::to_string(l) + " outside [0," + std::to_string(k) + ")");
    }
  }
  const T* z = logits.value().ptr();
  Tensor<T> prob(s);
  T loss = 0;
  for (Index i = 0; i < n; ++i) {
    const T* zi = z + i * k;
    const T m = *std::max_element(zi, zi + k);
    T denom = 0;
    for (Index j = 0; j < k; ++j) denom += std::exp(zi[j] - m);
    const T log_denom = std::log(denom);
    for (Index j = 0; j < k; ++j) prob[i * k + j] = std::exp(zi[j] - m - log_denom);
    loss -= zi[labels[static_cast<std::size_t>(i)]] - m - log_denom;
  }
  loss /= static_cast<T>(n);
  std::vector<int> lab(labels.begin(), labels.end());
  const int il = logits.id();
  return logits.tape().record(
      Tensor<T>(Shape{}, loss), {il},
      [il, n, k, prob = std::move(prob), lab = std::move(lab)](Tape<T>& t, int self) {
        Tensor<T>* sink = t.grad_sink(il);
        if (!sink) return;
        const T g = t.grad(self)[0] / static_cast<T>(n);
        for (Index i = 0; i < n; ++i)
          for (Index j = 0; j < k; ++j) {
            const T onehot = (j == lab[static_cast<std::size_t>(i)]) ? T(1) : T(0);
            (*sink)[i * k + j] += g * (prob[i * k + j] - onehot);
          }
      });
}

/// Mean endpoint error: average over voxels of the Euclidean (u, v) distance.
/// Tensors are (N, 2, T, H, W).
template <class T>
double flow_epe(const Tensor<T>& pred, const Tensor<T>& gt) {
  if (!(pred.shape() == gt.shape()) || pred.shape().rank() != 5 || pred.shape()[1] != 2) {
    throw ShapeError("flow_epe: " + pred.shape().str() + " vs " + gt.shape().str());
  }
  const Index n = pred.shape()[0];
  const Index vox = grid_of(pred.shape()).volume();
  double acc = 0;
  for (Index i = 0; i < n; ++i) {
    const Index u = i * 2 * vox, v = u + vox;
    for (Index j = 0; j < vox; ++j) {
      const double du = static_cast<double>(pred[u + j]) - static_cast<double>(gt[u + j]);
      const double dv = static_cast<double>(pred[v + j]) - static_cast<double>(gt[v + j]);
      acc += std::sqrt(du * du + dv * dv);
    }
  }
  return acc / static_cast<double>(n * vox);
}

template <class T>
struct FlowLoss {
  Var<T> loss;  // mean over voxels of the squared (u, v) error
  double epe;   // metric only, not differentiated
};

/// Voxel-wise squared-error flow loss; pred and gt are (N, 2, T-1, H, W).
template <class T>
FlowLoss<T> voxel_flow_loss(const Var<T>& pred, const Tensor<T>& gt) {
  if (!(pred.shape() == gt.shape()) || pred.shape().rank() != 5 || pred.shape()[1] != 2) {
    throw ShapeError("voxel_flow_loss: pred " + pred.shape().str() + " vs gt " + gt.shape().str());
  }
  const Tensor<T>& p = pred.value();
  const Index voxels = p.numel() / 2;
  T acc = 0;
  for (Index i = 0; i < p.numel(); ++i) {
    const T d = p[i] - gt[i];
    acc += d * d;
  }
  const double epe = flow_epe(p, gt);
  const int ip = pred.id();
  Var<T> loss = pred.tape().record(
      Tensor<T>(Shape{}, acc / static_cast<T>(voxels)), {ip}, [ip, voxels, gt](Tape<T>& t, int self) {
        Tensor<T>* sink = t.grad_sink(ip);
        if (!sink) return;
        const T g = T(2) * t.grad(self)[0] / static_cast<T>(voxels);
        const Tensor<T>& pv = t.value(ip);
        for (Index i = 0; i < pv.numel(); ++i) (*sink)[i] += g * (pv[i] - gt[i]);
      });
  return {loss, epe};
}

}  // namespace motion3d
