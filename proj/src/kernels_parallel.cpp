#include <algorithm>
#include <cstdlib>
#include <vector>

#include "wmf/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace wmf::kernels {

namespace {
int g_threads = 0;

int threads_from_env() {
  int n = 1;
#ifdef _OPENMP
  n = omp_get_max_threads();
#endif
  if (const char* env = std::getenv("WMF_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) n = std::min(n, cap);
  }
  return std::max(n, 1);
}
}  // namespace

int max_threads() {
  if (g_threads == 0) g_threads = threads_from_env();
  return g_threads;
}

void set_max_threads(int threads) { g_threads = std::max(threads, 1); }

}  // namespace wmf::kernels

namespace wmf::kernels::parallel {

template <class T>
void conv1x1_forward(const T* x, const T* w, const T* bias, T* y, const Conv1x1Dims& d) {
  const std::int64_t P = d.pixels;
#pragma omp parallel for collapse(2) schedule(static) num_threads(max_threads())
  for (std::int64_t b = 0; b < d.batch; ++b)
    for (std::int64_t o = 0; o < d.cout; ++o) {
      T* yr = y + (b * d.cout + o) * P;
      const T b0 = bias ? bias[o] : T(0);
      for (std::int64_t p = 0; p < P; ++p) yr[p] = b0;
      for (std::int64_t c = 0; c < d.cin; ++c) {
        const T wv = w[o * d.cin + c];
        const T* xr = x + (b * d.cin + c) * P;
        for (std::int64_t p = 0; p < P; ++p) yr[p] += wv * xr[p];
      }
    }
}

template <class T>
void conv1x1_backward_input(const T* gy, const T* w, T* gx, const Conv1x1Dims& d) {
  const std::int64_t P = d.pixels;
#pragma omp parallel num_threads(max_threads())
  {
    std::vector<T> acc(static_cast<std::size_t>(P));
#pragma omp for collapse(2) schedule(static)
    for (std::int64_t b = 0; b < d.batch; ++b)
      for (std::int64_t c = 0; c < d.cin; ++c) {
        std::fill(acc.begin(), acc.end(), T(0));
        for (std::int64_t o = 0; o < d.cout; ++o) {
          const T wv = w[o * d.cin + c];
          const T* gr = gy + (b * d.cout + o) * P;
          for (std::int64_t p = 0; p < P; ++p) acc[p] += wv * gr[p];
        }
        T* gxr = gx + (b * d.cin + c) * P;
        for (std::int64_t p = 0; p < P; ++p) gxr[p] += acc[p];
      }
  }
}

template <class T>
void conv1x1_backward_weight(const T* gy, const T* x, T* gw, T* gb, const Conv1x1Dims& d) {
  const std::int64_t P = d.pixels;
#pragma omp parallel for collapse(2) schedule(static) num_threads(max_threads())
  for (std::int64_t o = 0; o < d.cout; ++o)
    for (std::int64_t c = 0; c < d.cin; ++c) {
      T acc = 0;
      for (std::int64_t b = 0; b < d.batch; ++b) {
        const T* gr = gy + (b * d.cout + o) * P;
        const T* xr = x + (b * d.cin + c) * P;
        for (std::int64_t p = 0; p < P; ++p) acc += gr[p] * xr[p];
      }
      gw[o * d.cin + c] += acc;
    }
  if (!gb) return;
#pragma omp parallel for schedule(static) num_threads(max_threads())
  for (std::int64_t o = 0; o < d.cout; ++o) {
    T acc = 0;
    for (std::int64_t b = 0; b < d.batch; ++b) {
      const T* gr = gy + (b * d.cout + o) * P;
      for (std::int64_t p = 0; p < P; ++p) acc += gr[p];
    }
    gb[o] += acc;
  }
}

namespace {

// dst[i][j] += wv * src[i + di][j + dj] over the region where both are in bounds.
template <class T>
inline void shifted_axpy(T* dst, const T* src, T wv, std::int64_t H, std::int64_t W, int di,
                         int dj) {
  const std::int64_t i0 = std::max<std::int64_t>(0, -di), i1 = std::min<std::int64_t>(H, H - di);
  const std::int64_t j0 = std::max<std::int64_t>(0, -dj), j1 = std::min<std::int64_t>(W, W - dj);
  for (std::int64_t i = i0; i < i1; ++i) {
    T* dr = dst + i * W;
    const T* sr = src + (i + di) * W + dj;
    for (std::int64_t j = j0; j < j1; ++j) dr[j] += wv * sr[j];
  }
}

// sum over in-bounds (i, j) of a[i][j] * b[i + di][j + dj].
template <class T>
inline T shifted_dot(const T* a, const T* b, std::int64_t H, std::int64_t W, int di, int dj) {
  const std::int64_t i0 = std::max<std::int64_t>(0, -di), i1 = std::min<std::int64_t>(H, H - di);
  const std::int64_t j0 = std::max<std::int64_t>(0, -dj), j1 = std::min<std::int64_t>(W, W - dj);
  T acc = 0;
  for (std::int64_t i = i0; i < i1; ++i) {
    const T* ar = a + i * W;
    const T* br = b + (i + di) * W + dj;
    for (std::int64_t j = j0; j < j1; ++j) acc += ar[j] * br[j];
  }
  return acc;
}

}  // namespace

template <class T>
void conv3x3_forward(const T* x, const T* w, const T* bias, T* y, const Conv3x3Dims& d) {
  const std::int64_t H = d.height, W = d.width, P = H * W;
#pragma omp parallel for collapse(2) schedule(static) num_threads(max_threads())
  for (std::int64_t b = 0; b < d.batch; ++b)
    for (std::int64_t o = 0; o < d.cout; ++o) {
      T* yp = y + (b * d.cout + o) * P;
      const T b0 = bias ? bias[o] : T(0);
      for (std::int64_t p = 0; p < P; ++p) yp[p] = b0;
      for (std::int64_t c = 0; c < d.cin; ++c) {
        const T* xp = x + (b * d.cin + c) * P;
        const T* wk = w + (o * d.cin + c) * 9;
        for (int k = 0; k < 9; ++k) shifted_axpy(yp, xp, wk[k], H, W, k / 3 - 1, k % 3 - 1);
      }
    }
}

template <class T>
void conv3x3_backward_input(const T* gy, const T* w, T* gx, const Conv3x3Dims& d) {
  const std::int64_t H = d.height, W = d.width, P = H * W;
#pragma omp parallel for collapse(2) schedule(static) num_threads(max_threads())
  for (std::int64_t b = 0; b < d.batch; ++b)
    for (std::int64_t c = 0; c < d.cin; ++c) {
      T* gp = gx + (b * d.cin + c) * P;
      for (std::int64_t o = 0; o < d.cout; ++o) {
        const T* gyp = gy + (b * d.cout + o) * P;
        const T* wk = w + (o * d.cin + c) * 9;
        // x[i+di][j+dj] fed y[i][j], so gx[s] gathers gy[s - (di, dj)].
        for (int k = 0; k < 9; ++k) shifted_axpy(gp, gyp, wk[k], H, W, 1 - k / 3, 1 - k % 3);
      }
    }
}

template <class T>
void conv3x3_backward_weight(const T* gy, const T* x, T* gw, T* gb, const Conv3x3Dims& d) {
  const std::int64_t H = d.height, W = d.width, P = H * W;
#pragma omp parallel for collapse(2) schedule(static) num_threads(max_threads())
  for (std::int64_t o = 0; o < d.cout; ++o)
    for (std::int64_t c = 0; c < d.cin; ++c) {
      T* wk = gw + (o * d.cin + c) * 9;
      for (int k = 0; k < 9; ++k) {
        T acc = 0;
        for (std::int64_t b = 0; b < d.batch; ++b)
          acc += shifted_dot(gy + (b * d.cout + o) * P, x + (b * d.cin + c) * P, H, W, k / 3 - 1,
                             k % 3 - 1);
        wk[k] += acc;
      }
    }
  if (!gb) return;
#pragma omp parallel for schedule(static) num_threads(max_threads())
  for (std::int64_t o = 0; o < d.cout; ++o) {
    T acc = 0;
    for (std::int64_t b = 0; b < d.batch; ++b) {
      const T* gyp = gy + (b * d.cout + o) * P;
      for (std::int64_t p = 0; p < P; ++p) acc += gyp[p];
    }
    gb[o] += acc;
  }
}

template <class T>
void dconv3x3_forward(const T* x, const T* w, const T* bias, T* y, const DepthwiseDims& d) {
  const std::int64_t H = d.height, W = d.width, P = H * W;
#pragma omp parallel for collapse(2) schedule(static) num_threads(max_threads())
  for (std::int64_t b = 0; b < d.batch; ++b)
    for (std::int64_t c = 0; c < d.channels; ++c) {
      T* yp = y + (b * d.channels + c) * P;
      const T* xp = x + (b * d.channels + c) * P;
      const T b0 = bias ? bias[c] : T(0);
      for (std::int64_t p = 0; p < P; ++p) yp[p] = b0;
      for (int k = 0; k < 9; ++k) shifted_axpy(yp, xp, w[c * 9 + k], H, W, k / 3 - 1, k % 3 - 1);
    }
}

template <class T>
void dconv3x3_backward_input(const T* gy, const T* w, T* gx, const DepthwiseDims& d) {
  const std::int64_t H = d.height, W = d.width, P = H * W;
#pragma omp parallel for collapse(2) schedule(static) num_threads(max_threads())
  for (std::int64_t b = 0; b < d.batch; ++b)
    for (std::int64_t c = 0; c < d.channels; ++c) {
      T* gp = gx + (b * d.channels + c) * P;
      const T* gyp = gy + (b * d.channels + c) * P;
      for (int k = 0; k < 9; ++k) shifted_axpy(gp, gyp, w[c * 9 + k], H, W, 1 - k / 3, 1 - k % 3);
    }
}

template <class T>
void dconv3x3_backward_weight(const T* gy, const T* x, T* gw, T* gb, const DepthwiseDims& d) {
  const std::int64_t H = d.height, W = d.width, P = H * W;
#pragma omp parallel for schedule(static) num_threads(max_threads())
  for (std::int64_t c = 0; c < d.channels; ++c) {
    for (int k = 0; k < 9; ++k) {
      T acc = 0;
      for (std::int64_t b = 0; b < d.batch; ++b)
        acc += shifted_dot(gy + (b * d.channels + c) * P, x + (b * d.channels + c) * P, H, W,
                           k / 3 - 1, k % 3 - 1);
      gw[c * 9 + k] += acc;
    }
    if (gb) {
      T acc = 0;
      for (std::int64_t b = 0; b < d.batch; ++b) {
        const T* gyp = gy + (b * d.channels + c) * P;
        for (std::int64_t p = 0; p < P; ++p) acc += gyp[p];
      }
      gb[c] += acc;
    }
  }
}

template <class T>
void gemm(const T* a, const T* b, T* c, const GemmDims& d, bool accumulate) {
  const std::int64_t M = d.m, N = d.n, K = d.k;
#pragma omp parallel for collapse(2) schedule(static) num_threads(max_threads())
  for (std::int64_t s = 0; s < d.batch; ++s)
    for (std::int64_t i = 0; i < M; ++i) {
      const T* A = a + s * M * K;
      const T* B = b + s * K * N;
      T* C = c + (s * M + i) * N;
      if (!accumulate) std::fill(C, C + N, T(0));
      if (d.trans_b) {
        for (std::int64_t j = 0; j < N; ++j) {
          T acc = 0;
          for (std::int64_t p = 0; p < K; ++p)
            acc += (d.trans_a ? A[p * M + i] : A[i * K + p]) * B[j * K + p];
          C[j] += acc;
        }
      } else {
        for (std::int64_t p = 0; p < K; ++p) {
          const T av = d.trans_a ? A[p * M + i] : A[i * K + p];
          const T* br = B + p * N;
          for (std::int64_t j = 0; j < N; ++j) C[j] += av * br[j];
        }
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

}  // namespace wmf::kernels::parallel
