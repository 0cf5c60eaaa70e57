#pragma once

// Dense kernels behind conv2d. Every output element is produced by one
// sequential accumulation in a fixed order, so tiling and threading never
// change results.

#include <algorithm>
#include <cstddef>
#include <cstring>

namespace salfau::detail {

inline constexpr std::size_t kRowTile = 8;
inline constexpr std::size_t kColTile = 32;
inline constexpr std::size_t kDepthBlock = 256;

// Native vector of 64 bytes; a kColTile row of floats is two of these.
template <class T>
struct Vec {
  typedef T type __attribute__((vector_size(64)));
  static constexpr std::size_t width = 64 / sizeof(T);
};

template <class T>
inline typename Vec<T>::type vload(const T* p) {
  typename Vec<T>::type v;
  std::memcpy(&v, p, sizeof(v));
  return v;
}

template <class T>
inline void vstore(T* p, typename Vec<T>::type v) {
  std::memcpy(p, &v, sizeof(v));
}

// R x kColTile block of C over depth [k0, k1). The block is seeded from the
// bias when k0 == 0 and from C otherwise, so splitting the depth keeps each
// element's sum in plain k order.
template <class T, std::size_t R>
inline void gemm_tile(std::size_t k0, std::size_t k1, const T* A, std::size_t lda, const T* B,
                      std::size_t ldb, const T* bias, T* C, std::size_t ldc) {
  using V = typename Vec<T>::type;
  constexpr std::size_t W = Vec<T>::width;
  constexpr std::size_t NV = kColTile / W;
  V acc[R][NV];
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t v = 0; v < NV; ++v) {
      if (k0 == 0) {
        acc[r][v] = V{} + (bias ? bias[r] : T(0));
      } else {
        acc[r][v] = vload(C + r * ldc + v * W);
      }
    }
  }
  for (std::size_t k = k0; k < k1; ++k) {
    const T* brow = B + k * ldb;
    V b[NV];
    for (std::size_t v = 0; v < NV; ++v) b[v] = vload(brow + v * W);
    for (std::size_t r = 0; r < R; ++r) {
      const T w = A[r * lda + k];
      for (std::size_t v = 0; v < NV; ++v) acc[r][v] += w * b[v];
    }
  }
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t v = 0; v < NV; ++v) vstore(C + r * ldc + v * W, acc[r][v]);
  }
}

// C[m, n] = bias[m] + sum_k A[m, k] * B[k, n] for m < M, n < N.
template <class T>
void gemm_bias(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t lda, const T* B,
               std::size_t ldb, const T* bias, T* C, std::size_t ldc) {
  const std::size_t n_full = N - N % kColTile;
  std::size_t k0 = 0;
  do {
    const std::size_t k1 = std::min(K, k0 + kDepthBlock);
    for (std::size_t n = 0; n < n_full; n += kColTile) {
      std::size_t m = 0;
      for (; m + kRowTile <= M; m += kRowTile) {
        gemm_tile<T, kRowTile>(k0, k1, A + m * lda, lda, B + n, ldb, bias ? bias + m : nullptr,
                               C + m * ldc + n, ldc);
      }
      for (; m < M; ++m) {
        gemm_tile<T, 1>(k0, k1, A + m * lda, lda, B + n, ldb, bias ? bias + m : nullptr,
                        C + m * ldc + n, ldc);
      }
    }
    k0 = k1;
  } while (k0 < K);
  for (std::size_t m = 0; m < M; ++m) {
    const T* arow = A + m * lda;
    for (std::size_t n = n_full; n < N; ++n) {
      T acc = bias ? bias[m] : T(0);
      for (std::size_t k = 0; k < K; ++k) acc += arow[k] * B[k * ldb + n];
      C[m * ldc + n] = acc;
    }
  }
}

inline constexpr std::size_t kLanes = 16;

// Fixed-order dot product: lane-wise partial sums, then lanes folded in order.
template <class T>
T dot_lanes(const T* a, const T* b, std::size_t n) {
  T lanes[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) lanes[l] += a[i + l] * b[i + l];
  }
  T acc = T(0);
  for (std::size_t l = 0; l < kLanes; ++l) acc += lanes[l];
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

// Gathers the receptive fields of pixels [p0, p0 + count) of one image into
// col[(c * k + u) * k + v][p - p0], with zero padding k / 2.
template <class T>
void im2col_chunk(const T* x, std::size_t C, std::size_t H, std::size_t W, std::size_t k,
                  std::size_t p0, std::size_t count, T* col) {
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(H);
  const std::ptrdiff_t w = static_cast<std::ptrdiff_t>(W);
  for (std::size_t c = 0; c < C; ++c) {
    const T* plane = x + c * H * W;
    for (std::size_t u = 0; u < k; ++u) {
      for (std::size_t v = 0; v < k; ++v) {
        T* dst = col + ((c * k + u) * k + v) * count;
        std::ptrdiff_t i = static_cast<std::ptrdiff_t>(p0 / W);
        std::ptrdiff_t j = static_cast<std::ptrdiff_t>(p0 % W);
        const std::ptrdiff_t du = static_cast<std::ptrdiff_t>(u) - pad;
        const std::ptrdiff_t dv = static_cast<std::ptrdiff_t>(v) - pad;
        std::size_t p = 0;
        while (p < count) {
          const std::size_t run = std::min<std::size_t>(count - p, static_cast<std::size_t>(w - j));
          const std::ptrdiff_t si = i + du;
          if (si < 0 || si >= h) {
            std::fill_n(dst + p, run, T(0));
          } else {
            const T* src = plane + si * w;
            for (std::size_t q = 0; q < run; ++q) {
              const std::ptrdiff_t sj = j + static_cast<std::ptrdiff_t>(q) + dv;
              dst[p + q] = (sj < 0 || sj >= w) ? T(0) : src[sj];
            }
          }
          p += run;
          j = 0;
          ++i;
        }
      }
    }
  }
}

}  // namespace salfau::detail
