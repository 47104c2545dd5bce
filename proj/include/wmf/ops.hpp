#pragma once

// Differentiable primitives. Every op records onto the active tape when at
// least one input requires grad; otherwise it is a plain value computation.
// Image-like tensors use (batch, channels, height, width) layout.

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "wmf/tensor.hpp"

namespace wmf::ops {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

Tensor sigmoid(const Tensor& x);
// Exact x * Phi(x) form.
Tensor gelu(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// (m x k) * (k x n)
Tensor matmul(const Tensor& a, const Tensor& b);
// (B x m x k) * (B x k x n)
Tensor bmm(const Tensor& a, const Tensor& b);
Tensor transpose_last2(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

// w: (cout, cin); bias: (cout) or undefined.
Tensor conv1x1(const Tensor& x, const Tensor& w, const Tensor& bias = {});
// w: (cout, cin, 3, 3), zero padding 1.
Tensor conv3x3(const Tensor& x, const Tensor& w, const Tensor& bias = {});
// w: (c, 3, 3), one kernel per channel, zero padding 1.
Tensor dconv3x3(const Tensor& x, const Tensor& w, const Tensor& bias = {});

// Normalizes over channels at each (batch, y, x) location.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

Tensor softmax(const Tensor& x, int axis);

// (b, c, h, w) -> (b, c*f*f, h/f, w/f); output channel c*f*f + dy*f + dx holds x[c][i*f+dy][j*f+dx].
Tensor space_to_depth(const Tensor& x, int factor = 2);
Tensor depth_to_space(const Tensor& x, int factor = 2);

Tensor concat_channels(std::span<const Tensor> parts);
Tensor slice_channels(const Tensor& x, std::int64_t start, std::int64_t count);
std::pair<Tensor, Tensor> split_half_channels(const Tensor& x);

// Divides each slice along the last axis by max(||slice||_2, eps).
Tensor l2_normalize(const Tensor& x, double eps = 1e-12);
// y[:, k, ...] = x[:, k, ...] * s[k]
Tensor scale_dim1(const Tensor& x, const Tensor& s);

// mean |a - b|
Tensor l1_mean(const Tensor& a, const Tensor& b);

// While alive, collects the sign of every |a - b| argument evaluated by
// l1_mean on this thread. Lets finite-difference checks detect steps that
// cross a kink.
class SignProbe {
 public:
  SignProbe();
  ~SignProbe();
  SignProbe(const SignProbe&) = delete;
  SignProbe& operator=(const SignProbe&) = delete;
  const std::vector<signed char>& signs() const { return signs_; }
  void clear() { signs_.clear(); }
  void record(signed char s) { signs_.push_back(s); }
  static SignProbe* active();

 private:
  std::vector<signed char> signs_;
  SignProbe* previous_;
};
// Mean binary cross-entropy of sigmoid(logits) against a {0,1} target, evaluated
// as max(z,0) - z*m + log1p(exp(-|z|)).
Tensor bce_with_logits_mean(const Tensor& logits, const Tensor& target);

// Value-only clamp to [0, 1]; never recorded.
Tensor clamp01(const Tensor& x);

}  // namespace wmf::ops
