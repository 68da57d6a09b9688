// SPDX-License-Identifier: Apache-2.0
// Internal dense kernels shared by the op implementations.
#pragma once

#include <algorithm>
#include <cstddef>

namespace odisr::kernels {

/// C[M,N] += A[M,K] * B[K,N], all row-major with the given leading
/// dimensions. Every output element is accumulated over k in increasing
/// order from zero, whichever code path handles its tile, so results do not
/// depend on where an element falls in the tiling.
template <typename T>
void gemm(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t lda,
          const T* B, std::size_t ldb, T* C, std::size_t ldc) {
  constexpr std::size_t MR = 4;
  constexpr std::size_t NR = 128 / sizeof(T);
  for (std::size_t i0 = 0; i0 < M; i0 += MR) {
    const std::size_t mr = std::min(MR, M - i0);
    for (std::size_t j0 = 0; j0 < N; j0 += NR) {
      const std::size_t nr = std::min(NR, N - j0);
      T acc[MR][NR] = {};
      if (mr == MR && nr == NR) {
        const T* a0 = A + (i0 + 0) * lda;
        const T* a1 = A + (i0 + 1) * lda;
        const T* a2 = A + (i0 + 2) * lda;
        const T* a3 = A + (i0 + 3) * lda;
        for (std::size_t k = 0; k < K; ++k) {
          const T* b = B + k * ldb + j0;
          const T v0 = a0[k], v1 = a1[k], v2 = a2[k], v3 = a3[k];
          for (std::size_t j = 0; j < NR; ++j) {
            acc[0][j] += v0 * b[j];
            acc[1][j] += v1 * b[j];
            acc[2][j] += v2 * b[j];
            acc[3][j] += v3 * b[j];
          }
        }
      } else {
        for (std::size_t k = 0; k < K; ++k) {
          const T* b = B + k * ldb + j0;
          for (std::size_t r = 0; r < mr; ++r) {
            const T v = A[(i0 + r) * lda + k];
            for (std::size_t j = 0; j < nr; ++j) acc[r][j] += v * b[j];
          }
        }
      }
      for (std::size_t r = 0; r < mr; ++r) {
        T* c = C + (i0 + r) * ldc + j0;
        for (std::size_t j = 0; j < nr; ++j) c[j] += acc[r][j];
      }
    }
  }
}

/// dst[cols, rows] = src[rows, cols]ᵀ.
template <typename T>
void transpose(std::size_t rows, std::size_t cols, const T* src, T* dst) {
  constexpr std::size_t B = 32;
  for (std::size_t i0 = 0; i0 < rows; i0 += B)
    for (std::size_t j0 = 0; j0 < cols; j0 += B)
      for (std::size_t i = i0; i < std::min(rows, i0 + B); ++i)
        for (std::size_t j = j0; j < std::min(cols, j0 + B); ++j)
          dst[j * rows + i] = src[i * cols + j];
}

}  // namespace odisr::kernels
