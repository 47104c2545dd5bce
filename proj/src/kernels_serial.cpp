#include "wmf/kernels.hpp"

namespace wmf::kernels::serial {

template <class T>
void conv1x1_forward(const T* x, const T* w, const T* bias, T* y, const Conv1x1Dims& d) {
  for (std::int64_t b = 0; b < d.batch; ++b)
    for (std::int64_t o = 0; o < d.cout; ++o)
      for (std::int64_t p = 0; p < d.pixels; ++p) {
        T acc = bias ? bias[o] : T(0);
        for (std::int64_t c = 0; c < d.cin; ++c)
          acc += w[o * d.cin + c] * x[(b * d.cin + c) * d.pixels + p];
        y[(b * d.cout + o) * d.pixels + p] = acc;
      }
}

template <class T>
void conv1x1_backward_input(const T* gy, const T* w, T* gx, const Conv1x1Dims& d) {
  for (std::int64_t b = 0; b < d.batch; ++b)
    for (std::int64_t c = 0; c < d.cin; ++c)
      for (std::int64_t p = 0; p < d.pixels; ++p) {
        T acc = 0;
        for (std::int64_t o = 0; o < d.cout; ++o)
          acc += w[o * d.cin + c] * gy[(b * d.cout + o) * d.pixels + p];
        gx[(b * d.cin + c) * d.pixels + p] += acc;
      }
}

template <class T>
void conv1x1_backward_weight(const T* gy, const T* x, T* gw, T* gb, const Conv1x1Dims& d) {
  for (std::int64_t o = 0; o < d.cout; ++o) {
    for (std::int64_t c = 0; c < d.cin; ++c) {
      T acc = 0;
      for (std::int64_t b = 0; b < d.batch; ++b)
        for (std::int64_t p = 0; p < d.pixels; ++p)
          acc += gy[(b * d.cout + o) * d.pixels + p] * x[(b * d.cin + c) * d.pixels + p];
      gw[o * d.cin + c] += acc;
    }
    if (gb) {
      T acc = 0;
      for (std::int64_t b = 0; b < d.batch; ++b)
        for (std::int64_t p = 0; p < d.pixels; ++p) acc += gy[(b * d.cout + o) * d.pixels + p];
      gb[o] += acc;
    }
  }
}

template <class T>
void conv3x3_forward(const T* x, const T* w, const T* bias, T* y, const Conv3x3Dims& d) {
  const auto H = d.height, W = d.width;
  for (std::int64_t b = 0; b < d.batch; ++b)
    for (std::int64_t o = 0; o < d.cout; ++o)
      for (std::int64_t i = 0; i < H; ++i)
        for (std::int64_t j = 0; j < W; ++j) {
          T acc = bias ? bias[o] : T(0);
          for (std::int64_t c = 0; c < d.cin; ++c)
            for (int ki = 0; ki < 3; ++ki)
              for (int kj = 0; kj < 3; ++kj) {
                const auto si = i + ki - 1, sj = j + kj - 1;
                if (si < 0 || si >= H || sj < 0 || sj >= W) continue;
                acc += w[((o * d.cin + c) * 3 + ki) * 3 + kj] * x[((b * d.cin + c) * H + si) * W + sj];
              }
          y[((b * d.cout + o) * H + i) * W + j] = acc;
        }
}

template <class T>
void conv3x3_backward_input(const T* gy, const T* w, T* gx, const Conv3x3Dims& d) {
  const auto H = d.height, W = d.width;
  for (std::int64_t b = 0; b < d.batch; ++b)
    for (std::int64_t o = 0; o < d.cout; ++o)
      for (std::int64_t i = 0; i < H; ++i)
        for (std::int64_t j = 0; j < W; ++j) {
          const T g = gy[((b * d.cout + o) * H + i) * W + j];
          for (std::int64_t c = 0; c < d.cin; ++c)
            for (int ki = 0; ki < 3; ++ki)
              for (int kj = 0; kj < 3; ++kj) {
                const auto si = i + ki - 1, sj = j + kj - 1;
                if (si < 0 || si >= H || sj < 0 || sj >= W) continue;
                gx[((b * d.cin + c) * H + si) * W + sj] += w[((o * d.cin + c) * 3 + ki) * 3 + kj] * g;
              }
        }
}

template <class T>
void conv3x3_backward_weight(const T* gy, const T* x, T* gw, T* gb, const Conv3x3Dims& d) {
  const auto H = d.height, W = d.width;
  for (std::int64_t b = 0; b < d.batch; ++b)
    for (std::int64_t o = 0; o < d.cout; ++o)
      for (std::int64_t i = 0; i < H; ++i)
        for (std::int64_t j = 0; j < W; ++j) {
          const T g = gy[((b * d.cout + o) * H + i) * W + j];
          if (gb) gb[o] += g;
          for (std::int64_t c = 0; c < d.cin; ++c)
            for (int ki = 0; ki < 3; ++ki)
              for (int kj = 0; kj < 3; ++kj) {
                const auto si = i + ki - 1, sj = j + kj - 1;
                if (si < 0 || si >= H || sj < 0 || sj >= W) continue;
                gw[((o * d.cin + c) * 3 + ki) * 3 + kj] += g * x[((b * d.cin + c) * H + si) * W + sj];
              }
        }
}

template <class T>
void dconv3x3_forward(const T* x, const T* w, const T* bias, T* y, const DepthwiseDims& d) {
  const auto H = d.height, W = d.width;
  for (std::int64_t b = 0; b < d.batch; ++b)
    for (std::int64_t c = 0; c < d.channels; ++c)
      for (std::int64_t i = 0; i < H; ++i)
        for (std::int64_t j = 0; j < W; ++j) {
          T acc = bias ? bias[c] : T(0);
          for (int ki = 0; ki < 3; ++ki)
            for (int kj = 0; kj < 3; ++kj) {
              const auto si = i + ki - 1, sj = j + kj - 1;
              if (si < 0 || si >= H || sj < 0 || sj >= W) continue;
              acc += w[(c * 3 + ki) * 3 + kj] * x[((b * d.channels + c) * H + si) * W + sj];
            }
          y[((b * d.channels + c) * H + i) * W + j] = acc;
        }
}

template <class T>
void dconv3x3_backward_input(const T* gy, const T* w, T* gx, const DepthwiseDims& d) {
  const auto H = d.height, W = d.width;
  for (std::int64_t b = 0; b < d.batch; ++b)
    for (std::int64_t c = 0; c < d.channels; ++c)
      for (std::int64_t i = 0; i < H; ++i)
        for (std::int64_t j = 0; j < W; ++j) {
          const T g = gy[((b * d.channels + c) * H + i) * W + j];
          for (int ki = 0; ki < 3; ++ki)
            for (int kj = 0; kj < 3; ++kj) {
              const auto si = i + ki - 1, sj = j + kj - 1;
              if (si < 0 || si >= H || sj < 0 || sj >= W) continue;
              gx[((b * d.channels + c) * H + si) * W + sj] += w[(c * 3 + ki) * 3 + kj] * g;
            }
        }
}

template <class T>
void dconv3x3_backward_weight(const T* gy, const T* x, T* gw, T* gb, const DepthwiseDims& d) {
  const auto H = d.height, W = d.width;
  for (std::int64_t b = 0; b < d.batch; ++b)
    for (std::int64_t c = 0; c < d.channels; ++c)
      for (std::int64_t i = 0; i < H; ++i)
        for (std::int64_t j = 0; j < W; ++j) {
          const T g = gy[((b * d.channels + c) * H + i) * W + j];
          if (gb) gb[c] += g;
          for (int ki = 0; ki < 3; ++ki)
            for (int kj = 0; kj < 3; ++kj) {
              const auto si = i + ki - 1, sj = j + kj - 1;
              if (si < 0 || si >= H || sj < 0 || sj >= W) continue;
              gw[(c * 3 + ki) * 3 + kj] += g * x[((b * d.channels + c) * H + si) * W + sj];
            }
        }
}

template <class T>
void gemm(const T* a, const T* b, T* c, const GemmDims& d, bool accumulate) {
  for (std::int64_t s = 0; s < d.batch; ++s) {
    const T* A = a + s * d.m * d.k;
    const T* B = b + s * d.k * d.n;
    T* C = c + s * d.m * d.n;
    for (std::int64_t i = 0; i < d.m; ++i)
      for (std::int64_t j = 0; j < d.n; ++j) {
        T acc = 0;
        for (std::int64_t p = 0; p < d.k; ++p) {
          const T av = d.trans_a ? A[p * d.m + i] : A[i * d.k + p];
          const T bv = d.trans_b ? B[j * d.k + p] : B[p * d.n + j];
          acc += av * bv;
        }
        C[i * d.n + j] = accumulate ? C[i * d.n + j] + acc : acc;
      }
  }
}

#define WMF_INSTANTIATE(T)                                                                   \
  template void conv1x1_forward<T>(const T*, const T*, const T*, T*, const Conv1x1Dims&);    \
  template void conv1x1_backward_input<T>(const T*, const T*, T*, const Conv1x1Dims&);       \
  template void conv1x1_backward_weight<T>(const T*, const T*, T*, T*, const Conv1x1Dims&);  \
  template void conv3x3_forward<T>(const T*, const T*, const T*, T*, const Conv3x3Dims&);    \
  template void conv3x3_backward_input<T>(const T*, const T*, T*, const Conv3x3Dims&);       \
  template void conv3x3_backward_weight<T>(const T*, const T*, T*, T*, const Conv3x3Dims&);  \
  template void dconv3x3_forward<T>(const T*, const T*, const T*, T*, const DepthwiseDims&); \
  template void dconv3x3_backward_input<T>(const T*, const T*, T*, const DepthwiseDims&);    \
  template void dconv3x3_backward_weight<T>(const T*, const T*, T*, T*,                      \
                                            const DepthwiseDims&);                           \
  template void gemm<T>(const T*, const T*, T*, const GemmDims&, bool);

WMF_INSTANTIATE(float)
WMF_INSTANTIATE(double)

}  // namespace wmf::kernels::serial
