#include "wmf/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "wmf/kernels.hpp"

namespace wmf::ops {

namespace {

using Entry = Tape::Entry;
namespace kp = kernels::parallel;

void check_same_dtype(const char* op, std::initializer_list<const Tensor*> ts) {
  const Tensor* first = nullptr;
  for (const Tensor* t : ts) {
    if (!t || !t->defined()) continue;
    if (!first) first = t;
    require(t->dtype() == first->dtype(), ErrorKind::Input,
            std::string(op) + ": mixed dtypes");
  }
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  require(a.shape() == b.shape(), ErrorKind::Shape,
          std::string(op) + ": shape " + to_string(a.shape()) + " vs " + to_string(b.shape()));
}

void check_rank(const char* op, const Tensor& t, std::size_t rank) {
  require(t.rank() == rank, ErrorKind::Shape,
          std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
              to_string(t.shape()));
}

void check_finite(const char* op, const Tensor& out) {
  dispatch(out.dtype(), [&]<class T>() {
    for (T v : out.data<T>())
      if (!std::isfinite(v)) fail(ErrorKind::Numeric, std::string(op) + " produced a non-finite value");
  });
}

// Registers `out` on the active tape when any input requires grad.
Tensor finish(const char* op, Tensor out, std::initializer_list<const Tensor*> inputs,
              std::function<void(Entry&)> backward) {
  if (finite_checks()) check_finite(op, out);
  Tape* tape = active_tape();
  if (!tape) return out;
  bool need = false;
  for (const Tensor* t : inputs) need = need || (t && t->defined() && t->requires_grad());
  if (!need) return out;
  Entry e;
  e.op = op;
  for (const Tensor* t : inputs) e.inputs.push_back(t && t->defined() ? t->impl() : nullptr);
  out.impl()->requires_grad = true;
  out.impl()->leaf = false;
  e.output = out.impl();
  e.backward = std::move(backward);
  tape->record(std::move(e));
  return out;
}

template <class T>
const T* gout(Entry& e) {
  return std::as_const(*e.output->grad).view<T>().data();
}
template <class T>
const T* oval(Entry& e) {
  return std::as_const(e.output->value).view<T>().data();
}
template <class T>
const T* ival(Entry& e, std::size_t i) {
  return std::as_const(e.inputs[i]->value).view<T>().data();
}
// Gradient sink of input i, or nullptr when it does not require grad.
template <class T>
T* igrad(Entry& e, std::size_t i) {
  auto& in = e.inputs[i];
  if (!in || !in->requires_grad) return nullptr;
  return in->ensure_grad().view<T>().data();
}

std::size_t count(const Tensor& t) { return static_cast<std::size_t>(t.numel()); }

template <class T>
T sigmoid_scalar(T z) {
  if (z >= 0) return T(1) / (T(1) + std::exp(-z));
  const T ez = std::exp(z);
  return ez / (T(1) + ez);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape("add", a, b);
  check_same_dtype("add", {&a, &b});
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  const std::size_t n = count(a);
  dispatch(a.dtype(), [&]<class T>() {
    auto x = a.data<T>(), y = b.data<T>();
    auto o = out.data<T>();
    for (std::size_t i = 0; i < n; ++i) o[i] = x[i] + y[i];
  });
  return finish("add", out, {&a, &b}, [n, dt = a.dtype()](Entry& e) {
    dispatch(dt, [&]<class T>() {
      const T* g = gout<T>(e);
      for (std::size_t k = 0; k < 2; ++k)
        if (T* gi = igrad<T>(e, k))
          for (std::size_t i = 0; i < n; ++i) gi[i] += g[i];
    });
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape("sub", a, b);
  check_same_dtype("sub", {&a, &b});
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  const std::size_t n = count(a);
  dispatch(a.dtype(), [&]<class T>() {
    auto x = a.data<T>(), y = b.data<T>();
    auto o = out.data<T>();
    for (std::size_t i = 0; i < n; ++i) o[i] = x[i] - y[i];
  });
  return finish("sub", out, {&a, &b}, [n, dt = a.dtype()](Entry& e) {
    dispatch(dt, [&]<class T>() {
      const T* g = gout<T>(e);
      if (T* ga = igrad<T>(e, 0))
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
      if (T* gb = igrad<T>(e, 1))
        for (std::size_t i = 0; i < n; ++i) gb[i] -= g[i];
    });
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape("mul", a, b);
  check_same_dtype("mul", {&a, &b});
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  const std::size_t n = count(a);
  dispatch(a.dtype(), [&]<class T>() {
    auto x = a.data<T>(), y = b.data<T>();
    auto o = out.data<T>();
    for (std::size_t i = 0; i < n; ++i) o[i] = x[i] * y[i];
  });
  return finish("mul", out, {&a, &b}, [n, dt = a.dtype()](Entry& e) {
    dispatch(dt, [&]<class T>() {
      const T* g = gout<T>(e);
      const T* x = ival<T>(e, 0);
      const T* y = ival<T>(e, 1);
      if (T* ga = igrad<T>(e, 0))
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * y[i];
      if (T* gb = igrad<T>(e, 1))
        for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * x[i];
    });
  });
}

Tensor scale(const Tensor& a, double s) {
  Tensor out = Tensor::zeros(a.shape(), a.dtype());
  const std::size_t n = count(a);
  dispatch(a.dtype(), [&]<class T>() {
    auto x = a.data<T>();
    auto o = out.data<T>();
    const T f = static_cast<T>(s);
    for (std::size_t i = 0; i < n; ++i) o[i] = x[i] * f;
  });
  return finish("scale", out, {&a}, [n, s, dt = a.dtype()](Entry& e) {
    dispatch(dt, [&]<class T>() {
      const T* g = gout<T>(e);
      const T f = static_cast<T>(s);
      if (T* ga = igrad<T>(e, 0))
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * f;
    });
  });
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  const std::size_t n = count(x);
  dispatch(x.dtype(), [&]<class T>() {
    auto v = x.data<T>();
    auto o = out.data<T>();
    for (std::size_t i = 0; i < n; ++i) o[i] = sigmoid_scalar(v[i]);
  });
  return finish("sigmoid", out, {&x}, [n, dt = x.dtype()](Entry& e) {
    dispatch(dt, [&]<class T>() {
      const T* g = gout<T>(e);
      const T* y = oval<T>(e);
      if (T* gx = igrad<T>(e, 0))
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * y[i] * (T(1) - y[i]);
    });
  });
}

Tensor gelu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  const std::size_t n = count(x);
  dispatch(x.dtype(), [&]<class T>() {
    auto v = x.data<T>();
    auto o = out.data<T>();
    for (std::size_t i = 0; i < n; ++i)
      o[i] = T(0.5) * v[i] * (T(1) + std::erf(v[i] * static_cast<T>(std::numbers::sqrt2 / 2)));
  });
  return finish("gelu", out, {&x}, [n, dt = x.dtype()](Entry& e) {
    dispatch(dt, [&]<class T>() {
      const T* g = gout<T>(e);
      const T* v = ival<T>(e, 0);
      T* gx = igrad<T>(e, 0);
      if (!gx) return;
      const T inv_sqrt2 = static_cast<T>(std::numbers::sqrt2 / 2);
      const T inv_sqrt2pi = static_cast<T>(std::numbers::inv_sqrtpi * std::numbers::sqrt2 / 2);
      for (std::size_t i = 0; i < n; ++i) {
        const T cdf = T(0.5) * (T(1) + std::erf(v[i] * inv_sqrt2));
        const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v[i] * v[i]);
        gx[i] += g[i] * (cdf + v[i] * pdf);
      }
    });
  });
}

Tensor sum(const Tensor& x) {
  Tensor out = Tensor::zeros({}, x.dtype());
  const std::size_t n = count(x);
  dispatch(x.dtype(), [&]<class T>() {
    T acc = 0;
    for (T v : x.data<T>()) acc += v;
    out.data<T>()[0] = acc;
  });
  return finish("sum", out, {&x}, [n, dt = x.dtype()](Entry& e) {
    dispatch(dt, [&]<class T>() {
      const T g = gout<T>(e)[0];
      if (T* gx = igrad<T>(e, 0))
        for (std::size_t i = 0; i < n; ++i) gx[i] += g;
    });
  });
}

Tensor mean(const Tensor& x) {
  require(x.numel() > 0, ErrorKind::Shape, "mean of empty tensor");
  Tensor out = Tensor::zeros({}, x.dtype());
  const std::size_t n = count(x);
  dispatch(x.dtype(), [&]<class T>() {
    T acc = 0;
    for (T v : x.data<T>()) acc += v;
    out.data<T>()[0] = acc / static_cast<T>(n);
  });
  return finish("mean", out, {&x}, [n, dt = x.dtype()](Entry& e) {
    dispatch(dt, [&]<class T>() {
      const T g = gout<T>(e)[0] / static_cast<T>(n);
      if (T* gx = igrad<T>(e, 0))
        for (std::size_t i = 0; i < n; ++i) gx[i] += g;
    });
  });
}

namespace {

Tensor batched_matmul(const char* op, const Tensor& a, const Tensor& b, std::int64_t batch,
                      Shape out_shape) {
  check_same_dtype(op, {&a, &b});
  const std::int64_t m = a.dim(-2), k = a.dim(-1), n = b.dim(-1);
  require(b.dim(-2) == k, ErrorKind::Shape,
          std::string(op) + ": inner extents differ, " + to_string(a.shape()) + " x " +
              to_string(b.shape()));
  Tensor out = Tensor::zeros(std::move(out_shape), a.dtype());
  dispatch(a.dtype(), [&]<class T>() {
    kp::gemm<T>(a.data<T>().data(), b.data<T>().data(), out.data<T>().data(),
                {batch, m, n, k, false, false}, false);
  });
  return finish(op, out, {&a, &b}, [=, dt = a.dtype()](Entry& e) {
    dispatch(dt, [&]<class T>() {
      const T* g = gout<T>(e);
      // dA = G * B^T  (m x n)(n x k);  dB = A^T * G  (k x m)(m x n)
      if (T* ga = igrad<T>(e, 0))
        kp::gemm<T>(g, ival<T>(e, 1), ga, {batch, m, k, n, false, true}, true);
      if (T* gb = igrad<T>(e, 1))
        kp::gemm<T>(ival<T>(e, 0), g, gb, {batch, k, n, m, true, false}, true);
    });
  });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_rank("matmul", a, 2);
  check_rank("matmul", b, 2);
  return batched_matmul("matmul", a, b, 1, {a.dim(0), b.dim(1)});
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  check_rank("bmm", a, 3);
  check_rank("bmm", b, 3);
  require(a.dim(0) == b.dim(0), ErrorKind::Shape, "bmm: batch extents differ");
  return batched_matmul("bmm", a, b, a.dim(0), {a.dim(0), a.dim(1), b.dim(2)});
}

Tensor transpose_last2(const Tensor& x) {
  require(x.rank() >= 2, ErrorKind::Shape, "transpose_last2 needs rank >= 2");
  const std::int64_t m = x.dim(-2), n = x.dim(-1), batch = x.numel() / std::max<std::int64_t>(m * n, 1);
  Shape shape = x.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  Tensor out = Tensor::zeros(shape, x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    auto src = x.data<T>();
    auto dst = out.data<T>();
    for (std::int64_t s = 0; s < batch; ++s)
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) dst[(s * n + j) * m + i] = src[(s * m + i) * n + j];
  });
  return finish("transpose_last2", out, {&x}, [=, dt = x.dtype()](Entry& e) {
    dispatch(dt, [&]<class T>() {
      const T* g = gout<T>(e);
      if (T* gx = igrad<T>(e, 0))
        for (std::int64_t s = 0; s < batch; ++s)
          for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < n; ++j) gx[(s * m + i) * n + j] += g[(s * n + j) * m + i];
    });
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require(numel(shape) == x.numel(), ErrorKind::Shape,
          "reshape " + to_string(x.shape()) + " -> " + to_string(shape));
  Tensor out = x.detach();
  out.impl()->shape = std::move(shape);
  const std::size_t n = count(x);
  return finish("reshape", out, {&x}, [n, dt = x.dtype()](Entry& e) {
    dispatch(dt, [&]<class T>() {
      const T* g = gout<T>(e);
      if (T* gx = igrad<T>(e, 0))
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i];
    });
  });
}

Tensor conv1x1(const Tensor& x, const Tensor& w, const Tensor& bias) {
  check_rank("conv1x1", x, 4);
  check_rank("conv1x1", w, 2);
  check_same_dtype("conv1x1", {&x, &w, &bias});
  const kernels::Conv1x1Dims d{x.dim(0), x.dim(1), w.dim(0), x.dim(2) * x.dim(3)};
  require(w.dim(1) == d.cin, ErrorKind::Shape,
          "conv1x1: weight " + to_string(w.shape()) + " vs input " + to_string(x.shape()));
  if (bias.defined())
    require(bias.shape() == Shape{d.cout}, ErrorKind::Shape, "conv1x1: bias shape");
  Tensor out = Tensor::zeros({d.batch, d.cout, x.dim(2), x.dim(3)}, x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    kp::conv1x1_forward<T>(x.data<T>().data(), w.data<T>().data(),
                           bias.defined() ? bias.data<T>().data() : nullptr, out.data<T>().data(), d);
  });
  const bool has_bias = bias.defined();
  return finish("conv1x1", out, {&x, &w, &bias}, [d, has_bias, dt = x.dtype()](Entry& e) {
    dispatch(dt, [&]<class T>() {
      const T* g = gout<T>(e);
      if (T* gx = igrad<T>(e, 0)) kp::conv1x1_backward_input<T>(g, ival<T>(e, 1), gx, d);
      T* gw = igrad<T>(e, 1);
      T* gb = has_bias ? igrad<T>(e, 2) : nullptr;
      if (gw || gb) {
        // the kernel always writes both; route an unused sink to scratch
        std::vector<T> scratch;
        if (!gw) {
          scratch.assign(static_cast<std::size_t>(d.cout * d.cin), T(0));
          gw = scratch.data();
        }
        kp::conv1x1_backward_weight<T>(g, ival<T>(e, 0), gw, gb, d);
      }
    });
  });
}

Tensor conv3x3(const Tensor& x, const Tensor& w, const Tensor& bias) {
  check_rank("conv3x3", x, 4);
  check_rank("conv3x3", w, 4);
  check_same_dtype("conv3x3", {&x, &w, &bias});
  require(w.dim(2) == 3 && w.dim(3) == 3, ErrorKind::Config, "conv3x3: kernel must be 3x3");
  const kernels::Conv3x3Dims d{x.dim(0), x.dim(1), w.dim(0), x.dim(2), x.dim(3)};
  require(w.dim(1) == d.cin, ErrorKind::Shape,
          "conv3x3: weight " + to_string(w.shape()) + " vs input " + to_string(x.shape()));
  if (bias.defined())
    require(bias.shape() == Shape{d.cout}, ErrorKind::Shape, "conv3x3: bias shape");
  Tensor out = Tensor::zeros({d.batch, d.cout, d.height, d.width}, x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    kp::conv3x3_forward<T>(x.data<T>().data(), w.data<T>().data(),
                           bias.defined() ? bias.data<T>().data() : nullptr, out.data<T>().data(), d);
  });
  const bool has_bias = bias.defined();
  return finish("conv3x3", out, {&x, &w, &bias}, [d, has_bias, dt = x.dtype()](Entry& e) {
    dispatch(dt, [&]<class T>() {
      const T* g = gout<T>(e);
      if (T* gx = igrad<T>(e, 0)) kp::conv3x3_backward_input<T>(g, ival<T>(e, 1), gx, d);
      T* gw = igrad<T>(e, 1);
      T* gb = has_bias ? igrad<T>(e, 2) : nullptr;
      if (gw || gb) {
        std::vector<T> scratch;
        if (!gw) {
          scratch.assign(static_cast<std::size_t>(d.cout * d.cin * 9), T(0));
          gw = scratch.data();
        }
        kp::conv3x3_backward_weight<T>(g, ival<T>(e, 0), gw, gb, d);
      }
    });
  });
}

Tensor dconv3x3(const Tensor& x, const Tensor& w, const Tensor& bias) {
  check_rank("dconv3x3", x, 4);
  check_same_dtype("dconv3x3", {&x, &w, &bias});
  require(w.rank() == 3 && w.dim(1) == 3 && w.dim(2) == 3, ErrorKind::Config,
          "dconv3x3: kernel must be (c, 3, 3), got " + to_string(w.shape()));
  const kernels::DepthwiseDims d{x.dim(0), x.dim(1), x.dim(2), x.dim(3)};
  require(w.dim(0) == d.channels, ErrorKind::Shape,
          "dconv3x3: weight " + to_string(w.shape()) + " vs input " + to_string(x.shape()));
  if (bias.defined())
    require(bias.shape() == Shape{d.channels}, ErrorKind::Shape, "dconv3x3: bias shape");
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    kp::dconv3x3_forward<T>(x.data<T>().data(), w.data<T>().data(),
                            bias.defined() ? bias.data<T>().data() : nullptr, out.data<T>().data(), d);
  });
  const bool has_bias = bias.defined();
  return finish("dconv3x3", out, {&x, &w, &bias}, [d, has_bias, dt = x.dtype()](Entry& e) {
    dispatch(dt, [&]<class T>() {
      const T* g = gout<T>(e);
      if (T* gx = igrad<T>(e, 0)) kp::dconv3x3_backward_input<T>(g, ival<T>(e, 1), gx, d);
      T* gw = igrad<T>(e, 1);
      T* gb = has_bias ? igrad<T>(e, 2) : nullptr;
      if (gw || gb) {
        std::vector<T> scratch;
        if (!gw) {
          scratch.assign(static_cast<std::size_t>(d.channels * 9), T(0));
          gw = scratch.data();
        }
        kp::dconv3x3_backward_weight<T>(g, ival<T>(e, 0), gw, gb, d);
      }
    });
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  check_rank("layer_norm", x, 4);
  check_same_dtype("layer_norm", {&x, &gamma, &beta});
  const std::int64_t B = x.dim(0), C = x.dim(1), P = x.dim(2) * x.dim(3);
  require(gamma.shape() == Shape{C} && beta.shape() == Shape{C}, ErrorKind::Shape,
          "layer_norm: affine parameters must have shape (" + std::to_string(C) + ")");
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    const T* xv = x.data<T>().data();
    const T* gv = gamma.data<T>().data();
    const T* bv = beta.data<T>().data();
    T* o = out.data<T>().data();
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t p = 0; p < P; ++p) {
        const T* xs = xv + b * C * P + p;
        T mu = 0;
        for (std::int64_t c = 0; c < C; ++c) mu += xs[c * P];
        mu /= static_cast<T>(C);
        T var = 0;
        for (std::int64_t c = 0; c < C; ++c) var += (xs[c * P] - mu) * (xs[c * P] - mu);
        var /= static_cast<T>(C);
        const T rstd = T(1) / std::sqrt(var + static_cast<T>(eps));
        for (std::int64_t c = 0; c < C; ++c)
          o[b * C * P + c * P + p] = (xs[c * P] - mu) * rstd * gv[c] + bv[c];
      }
  });
  return finish("layer_norm", out, {&x, &gamma, &beta}, [=, dt = x.dtype()](Entry& e) {
    dispatch(dt, [&]<class T>() {
      const T* g = gout<T>(e);
      const T* xv = ival<T>(e, 0);
      const T* gv = ival<T>(e, 1);
      T* gx = igrad<T>(e, 0);
      T* gg = igrad<T>(e, 1);
      T* gb = igrad<T>(e, 2);
      std::vector<T> xhat(static_cast<std::size_t>(C)), gxhat(static_cast<std::size_t>(C));
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t p = 0; p < P; ++p) {
          const std::int64_t base = b * C * P + p;
          T mu = 0;
          for (std::int64_t c = 0; c < C; ++c) mu += xv[base + c * P];
          mu /= static_cast<T>(C);
          T var = 0;
          for (std::int64_t c = 0; c < C; ++c)
            var += (xv[base + c * P] - mu) * (xv[base + c * P] - mu);
          var /= static_cast<T>(C);
          const T rstd = T(1) / std::sqrt(var + static_cast<T>(eps));
          T mean_g = 0, mean_gx = 0;
          for (std::int64_t c = 0; c < C; ++c) {
            const T gy = g[base + c * P];
            xhat[c] = (xv[base + c * P] - mu) * rstd;
            gxhat[c] = gy * gv[c];
            mean_g += gxhat[c];
            mean_gx += gxhat[c] * xhat[c];
            if (gg) gg[c] += gy * xhat[c];
            if (gb) gb[c] += gy;
          }
          mean_g /= static_cast<T>(C);
          mean_gx /= static_cast<T>(C);
          if (gx)
            for (std::int64_t c = 0; c < C; ++c)
              gx[base + c * P] += rstd * (gxhat[c] - mean_g - xhat[c] * mean_gx);
        }
    });
  });
}

Tensor softmax(const Tensor& x, int axis) {
  const int r = static_cast<int>(x.rank());
  if (axis < 0) axis += r;
  require(axis >= 0 && axis < r, ErrorKind::Shape, "softmax: axis out of range");
  std::int64_t outer = 1, len = x.dim(axis), inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < r; ++i) inner *= x.dim(i);
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    const T* xv = x.data<T>().data();
    T* o = out.data<T>().data();
    for (std::int64_t a = 0; a < outer; ++a)
      for (std::int64_t c = 0; c < inner; ++c) {
        const std::int64_t base = a * len * inner + c;
        T mx = xv[base];
        for (std::int64_t k = 1; k < len; ++k) mx = std::max(mx, xv[base + k * inner]);
        T z = 0;
        for (std::int64_t k = 0; k < len; ++k) {
          o[base + k * inner] = std::exp(xv[base + k * inner] - mx);
          z += o[base + k * inner];
        }
        for (std::int64_t k = 0; k < len; ++k) o[base + k * inner] /= z;
      }
  });
  return finish("softmax", out, {&x}, [=, dt = x.dtype()](Entry& e) {
    dispatch(dt, [&]<class T>() {
      const T* g = gout<T>(e);
      const T* y = oval<T>(e);
      T* gx = igrad<T>(e, 0);
      if (!gx) return;
      for (std::int64_t a = 0; a < outer; ++a)
        for (std::int64_t c = 0; c < inner; ++c) {
          const std::int64_t base = a * len * inner + c;
          T dot = 0;
          for (std::int64_t k = 0; k < len; ++k) dot += g[base + k * inner] * y[base + k * inner];
          for (std::int64_t k = 0; k < len; ++k)
            gx[base + k * inner] += y[base + k * inner] * (g[base + k * inner] - dot);
        }
    });
  });
}

namespace {

// Calls f(dense_index, sparse_index) for every element, where dense indexes the
// (b, c*f*f, h/f, w/f) layout and sparse the (b, c, h, w) layout.
template <class F>
void for_each_s2d(std::int64_t B, std::int64_t C, std::int64_t H, std::int64_t W, int f, F&& fn) {
  const std::int64_t h = H / f, w = W / f, CF = C * f * f;
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c)
      for (int dy = 0; dy < f; ++dy)
        for (int dx = 0; dx < f; ++dx) {
          const std::int64_t oc = c * f * f + dy * f + dx;
          for (std::int64_t i = 0; i < h; ++i)
            for (std::int64_t j = 0; j < w; ++j)
              fn(((b * CF + oc) * h + i) * w + j, ((b * C + c) * H + i * f + dy) * W + j * f + dx);
        }
}

}  // namespace

Tensor space_to_depth(const Tensor& x, int factor) {
  check_rank("space_to_depth", x, 4);
  require(factor >= 1, ErrorKind::Config, "space_to_depth: factor must be positive");
  const std::int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  require(H % factor == 0 && W % factor == 0, ErrorKind::Shape,
          "space_to_depth: extents " + to_string(x.shape()) + " not divisible by " +
              std::to_string(factor));
  Tensor out = Tensor::zeros({B, C * factor * factor, H / factor, W / factor}, x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    const T* src = x.data<T>().data();
    T* dst = out.data<T>().data();
    for_each_s2d(B, C, H, W, factor, [&](std::int64_t dense, std::int64_t sparse) { dst[dense] = src[sparse]; });
  });
  return finish("space_to_depth", out, {&x}, [=, dt = x.dtype()](Entry& e) {
    dispatch(dt, [&]<class T>() {
      const T* g = gout<T>(e);
      if (T* gx = igrad<T>(e, 0))
        for_each_s2d(B, C, H, W, factor, [&](std::int64_t dense, std::int64_t sparse) { gx[sparse] += g[dense]; });
    });
  });
}

Tensor depth_to_space(const Tensor& x, int factor) {
  check_rank("depth_to_space", x, 4);
  require(factor >= 1, ErrorKind::Config, "depth_to_space: factor must be positive");
  const std::int64_t ff = static_cast<std::int64_t>(factor) * factor;
  require(x.dim(1) % ff == 0, ErrorKind::Shape,
          "depth_to_space: channels " + std::to_string(x.dim(1)) + " not divisible by " +
              std::to_string(ff));
  const std::int64_t B = x.dim(0), C = x.dim(1) / ff, H = x.dim(2) * factor, W = x.dim(3) * factor;
  Tensor out = Tensor::zeros({B, C, H, W}, x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    const T* src = x.data<T>().data();
    T* dst = out.data<T>().data();
    for_each_s2d(B, C, H, W, factor, [&](std::int64_t dense, std::int64_t sparse) { dst[sparse] = src[dense]; });
  });
  return finish("depth_to_space", out, {&x}, [=, dt = x.dtype()](Entry& e) {
    dispatch(dt, [&]<class T>() {
      const T* g = gout<T>(e);
      if (T* gx = igrad<T>(e, 0))
        for_each_s2d(B, C, H, W, factor, [&](std::int64_t dense, std::int64_t sparse) { gx[dense] += g[sparse]; });
    });
  });
}

Tensor concat_channels(std::span<const Tensor> parts) {
  require(!parts.empty(), ErrorKind::Shape, "concat_channels: no inputs");
  const Tensor& first = parts.front();
  check_rank("concat_channels", first, 4);
  std::int64_t C = 0;
  for (const Tensor& p : parts) {
    check_rank("concat_channels", p, 4);
    require(p.dim(0) == first.dim(0) && p.dim(2) == first.dim(2) && p.dim(3) == first.dim(3),
            ErrorKind::Shape,
            "concat_channels: " + to_string(p.shape()) + " vs " + to_string(first.shape()));
    require(p.dtype() == first.dtype(), ErrorKind::Input, "concat_channels: mixed dtypes");
    C += p.dim(1);
  }
  const std::int64_t B = first.dim(0), P = first.dim(2) * first.dim(3);
  Tensor out = Tensor::zeros({B, C, first.dim(2), first.dim(3)}, first.dtype());
  std::vector<std::int64_t> widths;
  for (const Tensor& p : parts) widths.push_back(p.dim(1));
  dispatch(first.dtype(), [&]<class T>() {
    T* dst = out.data<T>().data();
    for (std::int64_t b = 0; b < B; ++b) {
      std::int64_t off = 0;
      for (const Tensor& p : parts) {
        const T* src = p.data<T>().data() + b * p.dim(1) * P;
        std::copy(src, src + p.dim(1) * P, dst + (b * C + off) * P);
        off += p.dim(1);
      }
    }
  });

  // finish() takes a fixed initializer list, so record by hand for n-ary input.
  if (finite_checks()) check_finite("concat_channels", out);
  Tape* tape = active_tape();
  bool need = false;
  for (const Tensor& p : parts) need = need || p.requires_grad();
  if (!tape || !need) return out;
  Entry e;
  e.op = "concat_channels";
  for (const Tensor& p : parts) e.inputs.push_back(p.impl());
  out.impl()->requires_grad = true;
  out.impl()->leaf = false;
  e.output = out.impl();
  e.backward = [=, dt = first.dtype()](Entry& en) {
    dispatch(dt, [&]<class T>() {
      const T* g = gout<T>(en);
      std::int64_t off = 0;
      for (std::size_t k = 0; k < widths.size(); ++k) {
        if (T* gi = igrad<T>(en, k))
          for (std::int64_t b = 0; b < B; ++b) {
            const T* src = g + (b * C + off) * P;
            T* dst = gi + b * widths[k] * P;
            for (std::int64_t i = 0; i < widths[k] * P; ++i) dst[i] += src[i];
          }
        off += widths[k];
      }
    });
  };
  tape->record(std::move(e));
  return out;
}

Tensor slice_channels(const Tensor& x, std::int64_t start, std::int64_t count_c) {
  check_rank("slice_channels", x, 4);
  const std::int64_t B = x.dim(0), C = x.dim(1), P = x.dim(2) * x.dim(3);
  require(start >= 0 && count_c >= 0 && start + count_c <= C, ErrorKind::Shape,
          "slice_channels: range out of bounds");
  Tensor out = Tensor::zeros({B, count_c, x.dim(2), x.dim(3)}, x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    const T* src = x.data<T>().data();
    T* dst = out.data<T>().data();
    for (std::int64_t b = 0; b < B; ++b)
      std::copy(src + (b * C + start) * P, src + (b * C + start + count_c) * P, dst + b * count_c * P);
  });
  return finish("slice_channels", out, {&x}, [=, dt = x.dtype()](Entry& e) {
    dispatch(dt, [&]<class T>() {
      const T* g = gout<T>(e);
      if (T* gx = igrad<T>(e, 0))
        for (std::int64_t b = 0; b < B; ++b) {
          T* dst = gx + (b * C + start) * P;
          const T* src = g + b * count_c * P;
          for (std::int64_t i = 0; i < count_c * P; ++i) dst[i] += src[i];
        }
    });
  });
}

std::pair<Tensor, Tensor> split_half_channels(const Tensor& x) {
  check_rank("split_half_channels", x, 4);
  require(x.dim(1) % 2 == 0, ErrorKind::Shape,
          "split_half_channels: odd channel count " + std::to_string(x.dim(1)));
  const std::int64_t half = x.dim(1) / 2;
  return {slice_channels(x, 0, half), slice_channels(x, half, half)};
}

Tensor l2_normalize(const Tensor& x, double eps) {
  require(x.rank() >= 1, ErrorKind::Shape, "l2_normalize needs rank >= 1");
  const std::int64_t len = x.dim(-1), rows = len ? x.numel() / len : 0;
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    const T* xv = x.data<T>().data();
    T* o = out.data<T>().data();
    for (std::int64_t r = 0; r < rows; ++r) {
      T ss = 0;
      for (std::int64_t k = 0; k < len; ++k) ss += xv[r * len + k] * xv[r * len + k];
      const T d = std::max(std::sqrt(ss), static_cast<T>(eps));
      for (std::int64_t k = 0; k < len; ++k) o[r * len + k] = xv[r * len + k] / d;
    }
  });
  return finish("l2_normalize", out, {&x}, [=, dt = x.dtype()](Entry& e) {
    dispatch(dt, [&]<class T>() {
      const T* g = gout<T>(e);
      const T* xv = ival<T>(e, 0);
      const T* y = oval<T>(e);
      T* gx = igrad<T>(e, 0);
      if (!gx) return;
      for (std::int64_t r = 0; r < rows; ++r) {
        T ss = 0, dot = 0;
        for (std::int64_t k = 0; k < len; ++k) {
          ss += xv[r * len + k] * xv[r * len + k];
          dot += g[r * len + k] * y[r * len + k];
        }
        const T n = std::sqrt(ss);
        if (n > static_cast<T>(eps)) {
          for (std::int64_t k = 0; k < len; ++k)
            gx[r * len + k] += (g[r * len + k] - y[r * len + k] * dot) / n;
        } else {
          for (std::int64_t k = 0; k < len; ++k) gx[r * len + k] += g[r * len + k] / static_cast<T>(eps);
        }
      }
    });
  });
}

Tensor scale_dim1(const Tensor& x, const Tensor& s) {
  require(x.rank() >= 2, ErrorKind::Shape, "scale_dim1 needs rank >= 2");
  check_same_dtype("scale_dim1", {&x, &s});
  const std::int64_t S = x.dim(1);
  require(s.shape() == Shape{S}, ErrorKind::Shape,
          "scale_dim1: scale shape " + to_string(s.shape()) + " vs dim 1 of " + to_string(x.shape()));
  const std::int64_t outer = x.dim(0), inner = S ? x.numel() / (outer * S) : 0;
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  dispatch(x.dtype(), [&]<class T>() {
    const T* xv = x.data<T>().data();
    const T* sv = s.data<T>().data();
    T* o = out.data<T>().data();
    for (std::int64_t a = 0; a < outer; ++a)
      for (std::int64_t k = 0; k < S; ++k)
        for (std::int64_t i = 0; i < inner; ++i) {
          const std::int64_t idx = (a * S + k) * inner + i;
          o[idx] = xv[idx] * sv[k];
        }
  });
  return finish("scale_dim1", out, {&x, &s}, [=, dt = x.dtype()](Entry& e) {
    dispatch(dt, [&]<class T>() {
      const T* g = gout<T>(e);
      const T* xv = ival<T>(e, 0);
      const T* sv = ival<T>(e, 1);
      T* gx = igrad<T>(e, 0);
      T* gs = igrad<T>(e, 1);
      for (std::int64_t a = 0; a < outer; ++a)
        for (std::int64_t k = 0; k < S; ++k) {
          T acc = 0;
          for (std::int64_t i = 0; i < inner; ++i) {
            const std::int64_t idx = (a * S + k) * inner + i;
            if (gx) gx[idx] += g[idx] * sv[k];
            acc += g[idx] * xv[idx];
          }
          if (gs) gs[k] += acc;
        }
    });
  });
}

namespace {
thread_local SignProbe* g_sign_probe = nullptr;
}

SignProbe::SignProbe() : previous_(g_sign_probe) { g_sign_probe = this; }
SignProbe::~SignProbe() { g_sign_probe = previous_; }
SignProbe* SignProbe::active() { return g_sign_probe; }

Tensor l1_mean(const Tensor& a, const Tensor& b) {
  check_same_shape("l1_mean", a, b);
  check_same_dtype("l1_mean", {&a, &b});
  require(a.numel() > 0, ErrorKind::Shape, "l1_mean of empty tensors");
  const std::size_t n = count(a);
  Tensor out = Tensor::zeros({}, a.dtype());
  dispatch(a.dtype(), [&]<class T>() {
    auto x = a.data<T>(), y = b.data<T>();
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i) acc += std::abs(x[i] - y[i]);
    out.data<T>()[0] = acc / static_cast<T>(n);
    if (SignProbe* probe = SignProbe::active()) {
      for (std::size_t i = 0; i < n; ++i) {
        const T d = x[i] - y[i];
        probe->record(d > 0 ? 1 : (d < 0 ? -1 : 0));
      }
    }
  });
  return finish("l1_mean", out, {&a, &b}, [n, dt = a.dtype()](Entry& e) {
    dispatch(dt, [&]<class T>() {
      const T g = gout<T>(e)[0] / static_cast<T>(n);
      const T* x = ival<T>(e, 0);
      const T* y = ival<T>(e, 1);
      T* ga = igrad<T>(e, 0);
      T* gb = igrad<T>(e, 1);
      for (std::size_t i = 0; i < n; ++i) {
        const T d = x[i] - y[i];
        const T sgn = d > 0 ? T(1) : (d < 0 ? T(-1) : T(0));
        if (ga) ga[i] += g * sgn;
        if (gb) gb[i] -= g * sgn;
      }
    });
  });
}

Tensor bce_with_logits_mean(const Tensor& logits, const Tensor& target) {
  check_same_shape("bce_with_logits_mean", logits, target);
  check_same_dtype("bce_with_logits_mean", {&logits, &target});
  require(logits.numel() > 0, ErrorKind::Shape, "bce_with_logits_mean of empty tensors");
  require(!target.requires_grad(), ErrorKind::Graph, "bce target must not require grad");
  const std::size_t n = count(logits);
  Tensor out = Tensor::zeros({}, logits.dtype());
  dispatch(logits.dtype(), [&]<class T>() {
    auto z = logits.data<T>();
    auto m = target.data<T>();
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
      require(m[i] == T(0) || m[i] == T(1), ErrorKind::Input, "mask values must be 0 or 1");
      acc += std::max(z[i], T(0)) - z[i] * m[i] + std::log1p(std::exp(-std::abs(z[i])));
    }
    out.data<T>()[0] = acc / static_cast<T>(n);
  });
  return finish("bce_with_logits_mean", out, {&logits, &target}, [n, dt = logits.dtype()](Entry& e) {
    dispatch(dt, [&]<class T>() {
      const T g = gout<T>(e)[0] / static_cast<T>(n);
      const T* z = ival<T>(e, 0);
      const T* m = ival<T>(e, 1);
      if (T* gz = igrad<T>(e, 0))
        for (std::size_t i = 0; i < n; ++i) gz[i] += g * (sigmoid_scalar(z[i]) - m[i]);
    });
  });
}

Tensor clamp01(const Tensor& x) {
  Tensor out = x.detach();
  dispatch(x.dtype(), [&]<class T>() {
    for (T& v : out.data<T>()) v = std::clamp(v, T(0), T(1));
  });
  return out;
}

}  // namespace wmf::ops
