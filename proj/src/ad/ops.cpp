#include "shcanet/ad/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>

#include "shcanet/simd/kernels.hpp"

namespace shcanet::ad {
namespace {

void require_rank4(const Shape& s, const char* op) {
  require(s.rank() == 4, std::string(op) + ": expected a rank-4 (N,C,H,W) tensor, got " + s.str());
}

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  require(a == b, std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
}

// Output positions o in [lo, hi) with 0 <= o*stride + offset < in_extent.
struct Range {
  int lo;
  int hi;
  int count() const { return hi > lo ? hi - lo : 0; }
};

Range valid_range(int out_extent, int in_extent, int stride, int offset) {
  const int lo = offset >= 0 ? 0 : (-offset + stride - 1) / stride;
  const int last = in_extent - 1 - offset;
  const int hi = last < 0 ? 0 : std::min(out_extent, last / stride + 1);
  return {lo, hi};
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

// Applies f elementwise and records a backward pass dx += dy * df(x, y).
template <typename T, typename F, typename D>
Var<T> unary(Var<T> xv, F f, D df) {
  const Tensor<T>& x = xv.value();
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  return xv.tape().record(std::move(y), {xv}, [df](Tape<T>& t, NodeId self) {
    const NodeId in = t.inputs(self)[0];
    if (!t.requires_grad(in)) return;
    const Tensor<T>& x = t.value(in);
    const Tensor<T>& y = t.value(self);
    const Tensor<T>& dy = *t.grad_if_any(self);
    Tensor<T>& dx = t.grad_buffer(in);
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] += dy[i] * df(x[i], y[i]);
  });
}

// Splits a shape around `axis` into (outer, extent, inner) products.
struct AxisView {
  std::size_t outer = 1;
  std::size_t inner = 1;
};

AxisView axis_view(const Shape& s, int axis) {
  AxisView v;
  for (int i = 0; i < axis; ++i) v.outer *= static_cast<std::size_t>(s[i]);
  for (int i = axis + 1; i < s.rank(); ++i) v.inner *= static_cast<std::size_t>(s[i]);
  return v;
}

}  // namespace

// Gathers the receptive fields of group g into rows r = (ig, kh, kw) of a
// (icg*k*k, N*OH*OW) matrix; padding positions are zero.
template <typename T>
void im2col(const Tensor<T>& x, int g, int icg, int k, Conv2dOptions opt, int out_h, int out_w, std::vector<T>& cols) {
  const int n_batch = x.shape().n(), in_h = x.shape().h(), in_w = x.shape().w();
  const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
  const std::size_t len = plane * static_cast<std::size_t>(n_batch);
  cols.assign(static_cast<std::size_t>(icg) * k * k * len, T{0});
  for (int ig = 0; ig < icg; ++ig)
    for (int kh = 0; kh < k; ++kh) {
      const Range rows = valid_range(out_h, in_h, opt.stride, kh - opt.pad);
      for (int kw = 0; kw < k; ++kw) {
        const Range cs = valid_range(out_w, in_w, opt.stride, kw - opt.pad);
        T* row = cols.data() + (static_cast<std::size_t>(ig * k + kh) * k + kw) * len;
        for (int n = 0; n < n_batch; ++n) {
          const T* in = x.plane(n, g * icg + ig);
          for (int oh = rows.lo; oh < rows.hi; ++oh) {
            const T* src = in + static_cast<std::size_t>(oh * opt.stride + kh - opt.pad) * in_w + kw - opt.pad;
            T* dst = row + n * plane + static_cast<std::size_t>(oh) * out_w;
            for (int ow = cs.lo; ow < cs.hi; ++ow) dst[ow] = src[ow * opt.stride];
          }
        }
      }
    }
}

// Adjoint of im2col: accumulates column gradients back into dx.
template <typename T>
void col2im(const std::vector<T>& dcols, int g, int icg, int k, Conv2dOptions opt, int out_h, int out_w, Tensor<T>& dx) {
  const int n_batch = dx.shape().n(), in_h = dx.shape().h(), in_w = dx.shape().w();
  const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
  const std::size_t len = plane * static_cast<std::size_t>(n_batch);
  for (int ig = 0; ig < icg; ++ig)
    for (int kh = 0; kh < k; ++kh) {
      const Range rows = valid_range(out_h, in_h, opt.stride, kh - opt.pad);
      for (int kw = 0; kw < k; ++kw) {
        const Range cs = valid_range(out_w, in_w, opt.stride, kw - opt.pad);
        const T* row = dcols.data() + (static_cast<std::size_t>(ig * k + kh) * k + kw) * len;
        for (int n = 0; n < n_batch; ++n) {
          T* out = dx.plane(n, g * icg + ig);
          for (int oh = rows.lo; oh < rows.hi; ++oh) {
            T* dst = out + static_cast<std::size_t>(oh * opt.stride + kh - opt.pad) * in_w + kw - opt.pad;
            const T* src = row + n * plane + static_cast<std::size_t>(oh) * out_w;
            for (int ow = cs.lo; ow < cs.hi; ++ow) dst[ow * opt.stride] += src[ow];
          }
        }
      }
    }
}

// (N, C, P) <-> (C, N*P) for channels [c0, c0+count).
template <typename T>
void gather_channels(const Tensor<T>& t, int c0, int count, std::vector<T>& out) {
  const int n_batch = t.shape().n();
  const std::size_t plane = static_cast<std::size_t>(t.shape().h()) * t.shape().w();
  out.resize(static_cast<std::size_t>(count) * n_batch * plane);
  for (int c = 0; c < count; ++c)
    for (int n = 0; n < n_batch; ++n)
      std::copy_n(t.plane(n, c0 + c), plane, out.data() + (static_cast<std::size_t>(c) * n_batch + n) * plane);
}

template <typename T>
Var<T> conv2d(Var<T> xv, Var<T> wv, std::optional<Var<T>> bv, Conv2dOptions opt) {
  const Tensor<T>& x = xv.value();
  const Tensor<T>& w = wv.value();
  require_rank4(x.shape(), "conv2d input");
  require_rank4(w.shape(), "conv2d weight");
  const int n_batch = x.shape().n(), in_c = x.shape().c(), in_h = x.shape().h(), in_w = x.shape().w();
  const int out_c = w.shape()[0], k = w.shape()[2];
  require(opt.groups >= 1 && opt.stride >= 1 && opt.pad >= 0, "conv2d: invalid stride/pad/groups");
  require(w.shape()[3] == k, "conv2d: kernel must be square, got weight " + w.shape().str());
  require(in_c % opt.groups == 0,
          "conv2d: channel axis (1) of input " + x.shape().str() + " not divisible by groups " + std::to_string(opt.groups));
  require(out_c % opt.groups == 0, "conv2d: output channel axis (0) of weight " + w.shape().str() +
                                       " not divisible by groups " + std::to_string(opt.groups));
  const int icg = in_c / opt.groups;
  require(w.shape()[1] == icg, "conv2d: weight axis 1 is " + std::to_string(w.shape()[1]) + " but input channels / groups is " +
                                   std::to_string(icg));
  require(in_h + 2 * opt.pad >= k && in_w + 2 * opt.pad >= k,
          "conv2d: spatial axes (2,3) of input " + x.shape().str() + " smaller than kernel");
  const int out_h = (in_h + 2 * opt.pad - k) / opt.stride + 1;
  const int out_w = (in_w + 2 * opt.pad - k) / opt.stride + 1;
  if (bv) require(bv->shape() == Shape{out_c}, "conv2d: bias shape " + bv->shape().str() + " must be (" + std::to_string(out_c) + ")");

  const int ocg = out_c / opt.groups;
  const std::size_t taps = static_cast<std::size_t>(icg) * k * k;
  const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
  const std::size_t len = plane * static_cast<std::size_t>(n_batch);
  const auto& kern = simd::kernels<T>();
  Tensor<T> out(Shape::nchw(n_batch, out_c, out_h, out_w));
  std::vector<T> cols, acc(len);
  for (int g = 0; g < opt.groups; ++g) {
    im2col(x, g, icg, k, opt, out_h, out_w, cols);
    for (int j = 0; j < ocg; ++j) {
      const int oc = g * ocg + j;
      std::fill(acc.begin(), acc.end(), T{0});
      const T* wk = w.ptr() + static_cast<std::size_t>(oc) * taps;
      for (std::size_t r = 0; r < taps; ++r) kern.axpy(acc.data(), cols.data() + r * len, wk[r], len, 1);
      const T b = bv ? bv->value()[static_cast<std::size_t>(oc)] : T{0};
      for (int n = 0; n < n_batch; ++n) {
        T* o = out.plane(n, oc);
        const T* a = acc.data() + static_cast<std::size_t>(n) * plane;
        if (bv)
          for (std::size_t i = 0; i < plane; ++i) o[i] = a[i] + b;
        else
          std::copy_n(a, plane, o);
      }
    }
  }

  std::vector<Var<T>> inputs{xv, wv};
  if (bv) inputs.push_back(*bv);
  return xv.tape().record(std::move(out), inputs, [opt](Tape<T>& t, NodeId self) {
    const auto& ids = t.inputs(self);
    const Tensor<T>& x = t.value(ids[0]);
    const Tensor<T>& w = t.value(ids[1]);
    const Tensor<T>& dy = *t.grad_if_any(self);
    const int n_batch = x.shape().n(), in_c = x.shape().c();
    const int out_c = w.shape()[0], k = w.shape()[2];
    const int out_h = dy.shape().h(), out_w = dy.shape().w();
    const int icg = in_c / opt.groups, ocg = out_c / opt.groups;
    const std::size_t taps = static_cast<std::size_t>(icg) * k * k;
    const std::size_t plane = static_cast<std::size_t>(out_h) * out_w;
    const std::size_t len = plane * static_cast<std::size_t>(n_batch);
    const auto& kern = simd::kernels<T>();
    const bool need_dx = t.requires_grad(ids[0]), need_dw = t.requires_grad(ids[1]);

    std::vector<T> dyg, cols, dcols;
    for (int g = 0; g < opt.groups; ++g) {
      gather_channels(dy, g * ocg, ocg, dyg);
      if (need_dw) {
        Tensor<T>& dw = t.grad_buffer(ids[1]);
        im2col(x, g, icg, k, opt, out_h, out_w, cols);
        for (int j = 0; j < ocg; ++j) {
          T* dwk = dw.ptr() + static_cast<std::size_t>(g * ocg + j) * taps;
          for (std::size_t r = 0; r < taps; ++r) dwk[r] += kern.dot(dyg.data() + j * len, cols.data() + r * len, len, 1);
        }
      }
      if (need_dx) {
        dcols.assign(taps * len, T{0});
        for (int j = 0; j < ocg; ++j) {
          const T* wk = w.ptr() + static_cast<std::size_t>(g * ocg + j) * taps;
          for (std::size_t r = 0; r < taps; ++r) kern.axpy(dcols.data() + r * len, dyg.data() + j * len, wk[r], len, 1);
        }
        col2im(dcols, g, icg, k, opt, out_h, out_w, t.grad_buffer(ids[0]));
      }
    }

    if (ids.size() > 2 && t.requires_grad(ids[2])) {
      Tensor<T>& db = t.grad_buffer(ids[2]);
      for (int oc = 0; oc < out_c; ++oc) {
        T acc{0};
        for (int n = 0; n < n_batch; ++n) {
          const T* d = dy.plane(n, oc);
          for (std::size_t i = 0; i < plane; ++i) acc += d[i];
        }
        db[static_cast<std::size_t>(oc)] += acc;
      }
    }
  });
}

template <typename T>
Var<T> batchnorm2d(Var<T> xv, Var<T> gv, Var<T> bv, BnRunningStats<T> stats, BnMode mode, T momentum, T eps) {
  const Tensor<T>& x = xv.value();
  require_rank4(x.shape(), "batchnorm2d");
  require(eps > T{0}, "batchnorm2d: eps must be positive");
  const int n_batch = x.shape().n(), ch = x.shape().c();
  const std::size_t plane = static_cast<std::size_t>(x.shape().h()) * x.shape().w();
  const Shape pshape{ch};
  require(gv.shape() == pshape && bv.shape() == pshape, "batchnorm2d: gamma/beta must have length " + std::to_string(ch));
  require(stats.mean && stats.var, "batchnorm2d: running statistics required");
  require(stats.mean->shape() == pshape && stats.var->shape() == pshape,
          "batchnorm2d: running statistics must have length " + std::to_string(ch));
  const std::size_t count = static_cast<std::size_t>(n_batch) * plane;

  auto xhat = std::make_shared<Tensor<T>>(x.shape());
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(ch));
  Tensor<T> y(x.shape());
  const Tensor<T>& gamma = gv.value();
  const Tensor<T>& beta = bv.value();
  for (int c = 0; c < ch; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    T mean, var;
    if (mode == BnMode::train) {
      T acc{0};
      for (int n = 0; n < n_batch; ++n) {
        const T* p = x.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) acc += p[i];
      }
      mean = acc / static_cast<T>(count);
      T sq{0};
      for (int n = 0; n < n_batch; ++n) {
        const T* p = x.plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - mean) * (p[i] - mean);
      }
      var = sq / static_cast<T>(count);
      const T unbiased = count > 1 ? sq / static_cast<T>(count - 1) : var;
      (*stats.mean)[ci] = (T{1} - momentum) * (*stats.mean)[ci] + momentum * mean;
      (*stats.var)[ci] = (T{1} - momentum) * (*stats.var)[ci] + momentum * unbiased;
    } else {
      mean = (*stats.mean)[ci];
      var = (*stats.var)[ci];
    }
    const T is = T{1} / std::sqrt(var + eps);
    (*inv_std)[ci] = is;
    for (int n = 0; n < n_batch; ++n) {
      const T* p = x.plane(n, c);
      T* h = xhat->plane(n, c);
      T* o = y.plane(n, c);
      for (std::size_t i = 0; i < plane; ++i) {
        h[i] = (p[i] - mean) * is;
        o[i] = gamma[ci] * h[i] + beta[ci];
      }
    }
  }

  return xv.tape().record(std::move(y), {xv, gv, bv}, [xhat, inv_std, mode](Tape<T>& t, NodeId self) {
    const auto& ids = t.inputs(self);
    const Tensor<T>& dy = *t.grad_if_any(self);
    const Tensor<T>& gamma = t.value(ids[1]);
    const int n_batch = dy.shape().n(), ch = dy.shape().c();
    const std::size_t plane = static_cast<std::size_t>(dy.shape().h()) * dy.shape().w();
    const T count = static_cast<T>(static_cast<std::size_t>(n_batch) * plane);
    for (int c = 0; c < ch; ++c) {
      const auto ci = static_cast<std::size_t>(c);
      T dbeta{0}, dgamma{0};
      for (int n = 0; n < n_batch; ++n) {
        const T* d = dy.plane(n, c);
        const T* h = xhat->plane(n, c);
        for (std::size_t i = 0; i < plane; ++i) {
          dbeta += d[i];
          dgamma += d[i] * h[i];
        }
      }
      if (t.requires_grad(ids[1])) t.grad_buffer(ids[1])[ci] += dgamma;
      if (t.requires_grad(ids[2])) t.grad_buffer(ids[2])[ci] += dbeta;
      if (!t.requires_grad(ids[0])) continue;
      Tensor<T>& dx = t.grad_buffer(ids[0]);
      const T is = (*inv_std)[ci];
      if (mode == BnMode::train) {
        const T k = gamma[ci] * is / count;
        for (int n = 0; n < n_batch; ++n) {
          const T* d = dy.plane(n, c);
          const T* h = xhat->plane(n, c);
          T* o = dx.plane(n, c);
          for (std::size_t i = 0; i < plane; ++i) o[i] += k * (count * d[i] - dbeta - h[i] * dgamma);
        }
      } else {
        const T k = gamma[ci] * is;
        for (int n = 0; n < n_batch; ++n) {
          const T* d = dy.plane(n, c);
          T* o = dx.plane(n, c);
          for (std::size_t i = 0; i < plane; ++i) o[i] += k * d[i];
        }
      }
    }
  });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  return unary(x, [](T v) { return stable_sigmoid(v); }, [](T, T y) { return y * (T{1} - y); });
}

template <typename T>
Var<T> silu(Var<T> x) {
  return unary(
      x, [](T v) { return v * stable_sigmoid(v); },
      [](T v, T) {
        const T s = stable_sigmoid(v);
        return s * (T{1} + v * (T{1} - s));
      });
}

template <typename T>
Var<T> hardswish(Var<T> x) {
  return unary(
      x, [](T v) { return v * std::clamp(v + T{3}, T{0}, T{6}) / T{6}; },
      [](T v, T) {
        if (v < T{-3}) return T{0};
        if (v > T{3}) return T{1};
        return (T{2} * v + T{3}) / T{6};
      });
}

template <typename T>
Var<T> relu(Var<T> x) {
  return unary(x, [](T v) { return v > T{0} ? v : T{0}; }, [](T v, T) { return v > T{0} ? T{1} : T{0}; });
}

template <typename T>
Var<T> add(Var<T> av, Var<T> bv) {
  require_same_shape(av.shape(), bv.shape(), "add");
  Tensor<T> y = av.value();
  simd::kernels<T>().add(y.ptr(), bv.value().ptr(), y.size());
  return av.tape().record(std::move(y), {av, bv}, [](Tape<T>& t, NodeId self) {
    const Tensor<T>& dy = *t.grad_if_any(self);
    for (NodeId in : t.inputs(self))
      if (t.requires_grad(in)) simd::kernels<T>().add(t.grad_buffer(in).ptr(), dy.ptr(), dy.size());
  });
}

template <typename T>
Var<T> mul(Var<T> av, Var<T> bv) {
  require_same_shape(av.shape(), bv.shape(), "mul");
  Tensor<T> y(av.shape());
  simd::kernels<T>().mul(y.ptr(), av.value().ptr(), bv.value().ptr(), y.size());
  return av.tape().record(std::move(y), {av, bv}, [](Tape<T>& t, NodeId self) {
    const auto& ids = t.inputs(self);
    const Tensor<T>& dy = *t.grad_if_any(self);
    for (int k = 0; k < 2; ++k) {
      if (!t.requires_grad(ids[static_cast<std::size_t>(k)])) continue;
      const Tensor<T>& other = t.value(ids[static_cast<std::size_t>(1 - k)]);
      Tensor<T>& d = t.grad_buffer(ids[static_cast<std::size_t>(k)]);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i] * other[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> av, T s) {
  Tensor<T> y = av.value();
  for (auto& v : y.data()) v *= s;
  return av.tape().record(std::move(y), {av}, [s](Tape<T>& t, NodeId self) {
    const NodeId in = t.inputs(self)[0];
    if (!t.requires_grad(in)) return;
    const Tensor<T>& dy = *t.grad_if_any(self);
    Tensor<T>& dx = t.grad_buffer(in);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i] * s;
  });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, int axis) {
  require(!parts.empty(), "concat: no inputs");
  const Shape& first = parts[0].shape();
  require(axis >= 0 && axis < first.rank(), "concat: axis " + std::to_string(axis) + " out of range for " + first.str());
  int total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    require(s.rank() == first.rank(), "concat: rank mismatch " + first.str() + " vs " + s.str());
    for (int a = 0; a < s.rank(); ++a)
      if (a != axis)
        require(s[a] == first[a], "concat: extent mismatch on axis " + std::to_string(a) + ": " + first.str() + " vs " + s.str());
    total += s[axis];
  }
  const Shape out_shape = first.with(axis, total);
  const AxisView v = axis_view(out_shape, axis);
  Tensor<T> y(out_shape);
  const std::size_t out_row = static_cast<std::size_t>(total) * v.inner;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t row = static_cast<std::size_t>(p.shape()[axis]) * v.inner;
    const T* src = p.value().ptr();
    for (std::size_t o = 0; o < v.outer; ++o) std::copy_n(src + o * row, row, y.ptr() + o * out_row + offset);
    offset += row;
  }
  return parts[0].tape().record(std::move(y), parts, [axis](Tape<T>& t, NodeId self) {
    const Tensor<T>& dy = *t.grad_if_any(self);
    const AxisView v = axis_view(dy.shape(), axis);
    const std::size_t out_row = static_cast<std::size_t>(dy.shape()[axis]) * v.inner;
    std::size_t offset = 0;
    for (NodeId in : t.inputs(self)) {
      const std::size_t row = static_cast<std::size_t>(t.value(in).shape()[axis]) * v.inner;
      if (t.requires_grad(in)) {
        Tensor<T>& dx = t.grad_buffer(in);
        for (std::size_t o = 0; o < v.outer; ++o)
          simd::kernels<T>().add(dx.ptr() + o * row, dy.ptr() + o * out_row + offset, row);
      }
      offset += row;
    }
  });
}

template <typename T>
std::vector<Var<T>> split(Var<T> xv, int axis, const std::vector<int>& sizes) {
  const Shape& s = xv.shape();
  require(axis >= 0 && axis < s.rank(), "split: axis " + std::to_string(axis) + " out of range for " + s.str());
  int total = 0;
  for (int sz : sizes) {
    require(sz > 0, "split: sizes must be positive");
    total += sz;
  }
  require(total == s[axis], "split: sizes sum to " + std::to_string(total) + " but axis " + std::to_string(axis) + " of " +
                                s.str() + " has extent " + std::to_string(s[axis]));
  const AxisView v = axis_view(s, axis);
  const std::size_t in_row = static_cast<std::size_t>(s[axis]) * v.inner;
  std::vector<Var<T>> out;
  std::size_t offset = 0;
  for (int sz : sizes) {
    const std::size_t row = static_cast<std::size_t>(sz) * v.inner;
    Tensor<T> y(s.with(axis, sz));
    const T* src = xv.value().ptr();
    for (std::size_t o = 0; o < v.outer; ++o) std::copy_n(src + o * in_row + offset, row, y.ptr() + o * row);
    out.push_back(xv.tape().record(std::move(y), {xv}, [offset, row, in_row](Tape<T>& t, NodeId self) {
      const NodeId in = t.inputs(self)[0];
      if (!t.requires_grad(in)) return;
      const Tensor<T>& dy = *t.grad_if_any(self);
      Tensor<T>& dx = t.grad_buffer(in);
      const std::size_t outer = dy.size() / row;
      for (std::size_t o = 0; o < outer; ++o) simd::kernels<T>().add(dx.ptr() + o * in_row + offset, dy.ptr() + o * row, row);
    }));
    offset += row;
  }
  return out;
}

template <typename T>
Var<T> reshape(Var<T> xv, Shape shape) {
  Tensor<T> y = xv.value().reshaped(shape);
  return xv.tape().record(std::move(y), {xv}, [](Tape<T>& t, NodeId self) {
    const NodeId in = t.inputs(self)[0];
    if (!t.requires_grad(in)) return;
    const Tensor<T>& dy = *t.grad_if_any(self);
    simd::kernels<T>().add(t.grad_buffer(in).ptr(), dy.ptr(), dy.size());
  });
}

template <typename T>
Var<T> channel_shuffle(Var<T> xv, int groups) {
  const Shape& s = xv.shape();
  require_rank4(s, "channel_shuffle");
  require(groups >= 1 && s.c() % groups == 0,
          "channel_shuffle: channel count " + std::to_string(s.c()) + " not divisible by groups " + std::to_string(groups));
  const int per = s.c() / groups;
  const std::size_t plane = static_cast<std::size_t>(s.h()) * s.w();
  auto dest = [groups, per](int c) { return (c % per) * groups + c / per; };
  Tensor<T> y(s);
  for (int n = 0; n < s.n(); ++n)
    for (int c = 0; c < s.c(); ++c) std::copy_n(xv.value().plane(n, c), plane, y.plane(n, dest(c)));
  return xv.tape().record(std::move(y), {xv}, [dest, plane](Tape<T>& t, NodeId self) {
    const NodeId in = t.inputs(self)[0];
    if (!t.requires_grad(in)) return;
    const Tensor<T>& dy = *t.grad_if_any(self);
    Tensor<T>& dx = t.grad_buffer(in);
    for (int n = 0; n < dy.shape().n(); ++n)
      for (int c = 0; c < dy.shape().c(); ++c) simd::kernels<T>().add(dx.plane(n, c), dy.plane(n, dest(c)), plane);
  });
}

template <typename T>
Var<T> global_pool_h(Var<T> xv) {
  const Shape& s = xv.shape();
  require_rank4(s, "global_pool_h");
  Tensor<T> y(Shape::nchw(s.n(), s.c(), s.h(), 1));
  const T width = static_cast<T>(s.w());
  for (int n = 0; n < s.n(); ++n)
    for (int c = 0; c < s.c(); ++c)
      for (int h = 0; h < s.h(); ++h) {
        T acc{0};
        for (int w = 0; w < s.w(); ++w) acc += xv.value().at(n, c, h, w);
        y.at(n, c, h, 0) = acc / width;
      }
  return xv.tape().record(std::move(y), {xv}, [](Tape<T>& t, NodeId self) {
    const NodeId in = t.inputs(self)[0];
    if (!t.requires_grad(in)) return;
    const Tensor<T>& dy = *t.grad_if_any(self);
    Tensor<T>& dx = t.grad_buffer(in);
    const Shape& s = dx.shape();
    const T width = static_cast<T>(s.w());
    for (int n = 0; n < s.n(); ++n)
      for (int c = 0; c < s.c(); ++c)
        for (int h = 0; h < s.h(); ++h) {
          const T g = dy.at(n, c, h, 0) / width;
          for (int w = 0; w < s.w(); ++w) dx.at(n, c, h, w) += g;
        }
  });
}

template <typename T>
Var<T> global_pool_w(Var<T> xv) {
  const Shape& s = xv.shape();
  require_rank4(s, "global_pool_w");
  Tensor<T> y(Shape::nchw(s.n(), s.c(), 1, s.w()));
  const T height = static_cast<T>(s.h());
  for (int n = 0; n < s.n(); ++n)
    for (int c = 0; c < s.c(); ++c)
      for (int w = 0; w < s.w(); ++w) {
        T acc{0};
        for (int h = 0; h < s.h(); ++h) acc += xv.value().at(n, c, h, w);
        y.at(n, c, 0, w) = acc / height;
      }
  return xv.tape().record(std::move(y), {xv}, [](Tape<T>& t, NodeId self) {
    const NodeId in = t.inputs(self)[0];
    if (!t.requires_grad(in)) return;
    const Tensor<T>& dy = *t.grad_if_any(self);
    Tensor<T>& dx = t.grad_buffer(in);
    const Shape& s = dx.shape();
    const T height = static_cast<T>(s.h());
    for (int n = 0; n < s.n(); ++n)
      for (int c = 0; c < s.c(); ++c)
        for (int h = 0; h < s.h(); ++h)
          for (int w = 0; w < s.w(); ++w) dx.at(n, c, h, w) += dy.at(n, c, 0, w) / height;
  });
}

template <typename T>
Var<T> upsample_nearest2x(Var<T> xv) {
  const Shape& s = xv.shape();
  require_rank4(s, "upsample_nearest2x");
  Tensor<T> y(Shape::nchw(s.n(), s.c(), 2 * s.h(), 2 * s.w()));
  for (int n = 0; n < s.n(); ++n)
    for (int c = 0; c < s.c(); ++c)
      for (int h = 0; h < 2 * s.h(); ++h)
        for (int w = 0; w < 2 * s.w(); ++w) y.at(n, c, h, w) = xv.value().at(n, c, h / 2, w / 2);
  return xv.tape().record(std::move(y), {xv}, [](Tape<T>& t, NodeId self) {
    const NodeId in = t.inputs(self)[0];
    if (!t.requires_grad(in)) return;
    const Tensor<T>& dy = *t.grad_if_any(self);
    Tensor<T>& dx = t.grad_buffer(in);
    const Shape& s = dx.shape();
    for (int n = 0; n < s.n(); ++n)
      for (int c = 0; c < s.c(); ++c)
        for (int h = 0; h < s.h(); ++h)
          for (int w = 0; w < s.w(); ++w)
            dx.at(n, c, h, w) += (dy.at(n, c, 2 * h, 2 * w) + dy.at(n, c, 2 * h, 2 * w + 1)) +
                                 (dy.at(n, c, 2 * h + 1, 2 * w) + dy.at(n, c, 2 * h + 1, 2 * w + 1));
  });
}

template <typename T>
Var<T> maxpool2x2(Var<T> xv) {
  const Shape& s = xv.shape();
  require_rank4(s, "maxpool2x2");
  require(s.h() >= 2 && s.w() >= 2, "maxpool2x2: spatial extents must be at least 2, got " + s.str());
  const Shape os = Shape::nchw(s.n(), s.c(), s.h() / 2, s.w() / 2);
  Tensor<T> y(os);
  auto arg = std::make_shared<std::vector<std::size_t>>(os.numel());
  std::size_t k = 0;
  for (int n = 0; n < s.n(); ++n)
    for (int c = 0; c < s.c(); ++c)
      for (int h = 0; h < os.h(); ++h)
        for (int w = 0; w < os.w(); ++w, ++k) {
          std::size_t best = xv.value().offset(n, c, 2 * h, 2 * w);
          for (int dh = 0; dh < 2; ++dh)
            for (int dw = 0; dw < 2; ++dw) {
              const std::size_t i = xv.value().offset(n, c, 2 * h + dh, 2 * w + dw);
              if (xv.value()[i] > xv.value()[best]) best = i;
            }
          (*arg)[k] = best;
          y[k] = xv.value()[best];
        }
  return xv.tape().record(std::move(y), {xv}, [arg](Tape<T>& t, NodeId self) {
    const NodeId in = t.inputs(self)[0];
    if (!t.requires_grad(in)) return;
    const Tensor<T>& dy = *t.grad_if_any(self);
    Tensor<T>& dx = t.grad_buffer(in);
    for (std::size_t i = 0; i < dy.size(); ++i) dx[(*arg)[i]] += dy[i];
  });
}

template <typename T>
Var<T> coord_gate(Var<T> xv, Var<T> hv, Var<T> wv) {
  const Shape& s = xv.shape();
  require_rank4(s, "coord_gate");
  require(hv.shape() == Shape::nchw(s.n(), s.c(), s.h(), 1), "coord_gate: row gate shape " + hv.shape().str() + " incompatible with " + s.str());
  require(wv.shape() == Shape::nchw(s.n(), s.c(), 1, s.w()), "coord_gate: column gate shape " + wv.shape().str() + " incompatible with " + s.str());
  Tensor<T> y(s);
  const Tensor<T>& x = xv.value();
  const Tensor<T>& gh = hv.value();
  const Tensor<T>& gw = wv.value();
  for (int n = 0; n < s.n(); ++n)
    for (int c = 0; c < s.c(); ++c)
      for (int h = 0; h < s.h(); ++h)
        for (int w = 0; w < s.w(); ++w) y.at(n, c, h, w) = x.at(n, c, h, w) * gh.at(n, c, h, 0) * gw.at(n, c, 0, w);
  return xv.tape().record(std::move(y), {xv, hv, wv}, [](Tape<T>& t, NodeId self) {
    const auto& ids = t.inputs(self);
    const Tensor<T>& x = t.value(ids[0]);
    const Tensor<T>& gh = t.value(ids[1]);
    const Tensor<T>& gw = t.value(ids[2]);
    const Tensor<T>& dy = *t.grad_if_any(self);
    const Shape& s = x.shape();
    Tensor<T>* dx = t.requires_grad(ids[0]) ? &t.grad_buffer(ids[0]) : nullptr;
    Tensor<T>* dgh = t.requires_grad(ids[1]) ? &t.grad_buffer(ids[1]) : nullptr;
    Tensor<T>* dgw = t.requires_grad(ids[2]) ? &t.grad_buffer(ids[2]) : nullptr;
    for (int n = 0; n < s.n(); ++n)
      for (int c = 0; c < s.c(); ++c)
        for (int h = 0; h < s.h(); ++h)
          for (int w = 0; w < s.w(); ++w) {
            const T d = dy.at(n, c, h, w);
            const T xv = x.at(n, c, h, w);
            if (dx) dx->at(n, c, h, w) += d * gh.at(n, c, h, 0) * gw.at(n, c, 0, w);
            if (dgh) dgh->at(n, c, h, 0) += d * xv * gw.at(n, c, 0, w);
            if (dgw) dgw->at(n, c, 0, w) += d * xv * gh.at(n, c, h, 0);
          }
  });
}

template <typename T>
Var<T> weighted_fusion(const std::vector<Var<T>>& inputs, std::optional<Var<T>> weights, FusionMode mode, T eps) {
  require(!inputs.empty(), "weighted_fusion: empty input list");
  const Shape& s = inputs[0].shape();
  for (const auto& v : inputs) require_same_shape(s, v.shape(), "weighted_fusion");
  const std::size_t k = inputs.size();
  std::vector<Var<T>> recorded = inputs;
  Tensor<T> y(s);
  if (mode == FusionMode::plain_sum) {
    for (const auto& v : inputs) simd::kernels<T>().add(y.ptr(), v.value().ptr(), y.size());
    return inputs[0].tape().record(std::move(y), recorded, [](Tape<T>& t, NodeId self) {
      const Tensor<T>& dy = *t.grad_if_any(self);
      for (NodeId in : t.inputs(self))
        if (t.requires_grad(in)) simd::kernels<T>().add(t.grad_buffer(in).ptr(), dy.ptr(), dy.size());
    });
  }
  require(weights.has_value(), "weighted_fusion: fast-normalized mode needs weights");
  require(eps > T{0}, "weighted_fusion: epsilon must be positive");
  require(weights->shape() == Shape{static_cast<int>(k)},
          "weighted_fusion: weights shape " + weights->shape().str() + " must be (" + std::to_string(k) + ")");
  const Tensor<T>& w = weights->value();
  T denom = eps;
  for (std::size_t i = 0; i < k; ++i) denom += std::max(w[i], T{0});
  for (std::size_t i = 0; i < k; ++i) {
    const T a = std::max(w[i], T{0}) / denom;
    simd::kernels<T>().axpy(y.ptr(), inputs[i].value().ptr(), a, y.size(), 1);
  }
  recorded.push_back(*weights);
  return inputs[0].tape().record(std::move(y), recorded, [k, eps](Tape<T>& t, NodeId self) {
    const auto& ids = t.inputs(self);
    const Tensor<T>& dy = *t.grad_if_any(self);
    const Tensor<T>& w = t.value(ids[k]);
    T denom = eps;
    for (std::size_t i = 0; i < k; ++i) denom += std::max(w[i], T{0});
    std::vector<T> g(k);
    for (std::size_t i = 0; i < k; ++i) {
      const Tensor<T>& x = t.value(ids[i]);
      g[i] = simd::kernels<T>().dot(dy.ptr(), x.ptr(), dy.size(), 1);
      if (t.requires_grad(ids[i]))
        simd::kernels<T>().axpy(t.grad_buffer(ids[i]).ptr(), dy.ptr(), std::max(w[i], T{0}) / denom, dy.size(), 1);
    }
    if (!t.requires_grad(ids[k])) return;
    T mixed{0};
    for (std::size_t i = 0; i < k; ++i) mixed += g[i] * std::max(w[i], T{0});
    Tensor<T>& dw = t.grad_buffer(ids[k]);
    for (std::size_t j = 0; j < k; ++j)
      if (w[j] > T{0}) dw[j] += g[j] / denom - mixed / (denom * denom);
  });
}

template <typename T>
Var<T> sum(Var<T> xv) {
  T acc{0};
  for (T v : xv.value().data()) acc += v;
  return xv.tape().record(Tensor<T>(Shape{1}, acc), {xv}, [](Tape<T>& t, NodeId self) {
    const NodeId in = t.inputs(self)[0];
    if (!t.requires_grad(in)) return;
    const T d = (*t.grad_if_any(self))[0];
    for (auto& v : t.grad_buffer(in).data()) v += d;
  });
}

template <typename T>
Var<T> dot_constant(Var<T> xv, const Tensor<T>& coeffs) {
  require_same_shape(xv.shape(), coeffs.shape(), "dot_constant");
  T acc{0};
  for (std::size_t i = 0; i < coeffs.size(); ++i) acc += coeffs[i] * xv.value()[i];
  auto c = std::make_shared<Tensor<T>>(coeffs);
  return xv.tape().record(Tensor<T>(Shape{1}, acc), {xv}, [c](Tape<T>& t, NodeId self) {
    const NodeId in = t.inputs(self)[0];
    if (!t.requires_grad(in)) return;
    const T d = (*t.grad_if_any(self))[0];
    Tensor<T>& dx = t.grad_buffer(in);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += d * (*c)[i];
  });
}

#define SHCANET_INSTANTIATE_OPS(T)                                                                              \
  template Var<T> conv2d(Var<T>, Var<T>, std::optional<Var<T>>, Conv2dOptions);                                 \
  template Var<T> batchnorm2d(Var<T>, Var<T>, Var<T>, BnRunningStats<T>, BnMode, T, T);                         \
  template Var<T> sigmoid(Var<T>);                                                                              \
  template Var<T> silu(Var<T>);                                                                                 \
  template Var<T> hardswish(Var<T>);                                                                            \
  template Var<T> relu(Var<T>);                                                                                 \
  template Var<T> add(Var<T>, Var<T>);                                                                          \
  template Var<T> mul(Var<T>, Var<T>);                                                                          \
  template Var<T> scale(Var<T>, T);                                                                             \
  template Var<T> concat(const std::vector<Var<T>>&, int);                                                      \
  template std::vector<Var<T>> split(Var<T>, int, const std::vector<int>&);                                     \
  template Var<T> reshape(Var<T>, Shape);                                                                       \
  template Var<T> channel_shuffle(Var<T>, int);                                                                 \
  template Var<T> global_pool_h(Var<T>);                                                                        \
  template Var<T> global_pool_w(Var<T>);                                                                        \
  template Var<T> upsample_nearest2x(Var<T>);                                                                   \
  template Var<T> maxpool2x2(Var<T>);                                                                           \
  template Var<T> coord_gate(Var<T>, Var<T>, Var<T>);                                                           \
  template Var<T> weighted_fusion(const std::vector<Var<T>>&, std::optional<Var<T>>, FusionMode, T);            \
  template Var<T> sum(Var<T>);                                                                                  \
  template Var<T> dot_constant(Var<T>, const Tensor<T>&);

SHCANET_INSTANTIATE_OPS(float)
SHCANET_INSTANTIATE_OPS(double)

#undef SHCANET_INSTANTIATE_OPS

}  // namespace shcanet::ad
