#pragma once

// Compute kernels behind the convolution and matmul ops.
//
// `serial` holds plain reference loops kept for testing and benchmarking.
// `parallel` holds the OpenMP versions used by the ops. Every parallel kernel
// partitions work over output elements and reduces each element in a fixed
// order, so results do not depend on the thread count.
//
// Forward kernels overwrite their output; backward kernels accumulate (+=).

#include <cstdint>

namespace wmf::kernels {

struct Conv1x1Dims {
  std::int64_t batch, cin, cout, pixels;
};

struct Conv3x3Dims {
  std::int64_t batch, cin, cout, height, width;
};

// Depthwise: one 3x3 kernel per channel.
struct DepthwiseDims {
  std::int64_t batch, channels, height, width;
};

// c[b] = op(a[b]) * op(b[b]) with op = optional transpose; a is m x k after op.
struct GemmDims {
  std::int64_t batch, m, n, k;
  bool trans_a = false;
  bool trans_b = false;
};

#define WMF_KERNEL_DECLS                                                                      \
  template <class T>                                                                         \
  void conv1x1_forward(const T* x, const T* w, const T* bias, T* y, const Conv1x1Dims& d);   \
  template <class T>                                                                         \
  void conv1x1_backward_input(const T* gy, const T* w, T* gx, const Conv1x1Dims& d);         \
  template <class T>                                                                         \
  void conv1x1_backward_weight(const T* gy, const T* x, T* gw, T* gb, const Conv1x1Dims& d); \
  template <class T>                                                                         \
  void conv3x3_forward(const T* x, const T* w, const T* bias, T* y, const Conv3x3Dims& d);   \
  template <class T>                                                                         \
  void conv3x3_backward_input(const T* gy, const T* w, T* gx, const Conv3x3Dims& d);         \
  template <class T>                                                                         \
  void conv3x3_backward_weight(const T* gy, const T* x, T* gw, T* gb, const Conv3x3Dims& d); \
  template <class T>                                                                         \
  void dconv3x3_forward(const T* x, const T* w, const T* bias, T* y, const DepthwiseDims& d); \
  template <class T>                                                                         \
  void dconv3x3_backward_input(const T* gy, const T* w, T* gx, const DepthwiseDims& d);      \
  template <class T>                                                                         \
  void dconv3x3_backward_weight(const T* gy, const T* x, T* gw, T* gb,                       \
                                const DepthwiseDims& d);                                     \
  template <class T>                                                                         \
  void gemm(const T* a, const T* b, T* c, const GemmDims& d, bool accumulate);

namespace serial {
WMF_KERNEL_DECLS
}  // namespace serial

namespace parallel {
WMF_KERNEL_DECLS
}  // namespace parallel

#undef WMF_KERNEL_DECLS

// Worker thread cap for the parallel kernels. Reads WMF_THREADS on first use.
int max_threads();
void set_max_threads(int threads);

}  // namespace wmf::kernels
