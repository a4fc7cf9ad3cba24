// Compiled with -mavx2 -mfma; only reached through the dispatch table after a
// runtime CPU check.

#include <immintrin.h>

#include "imix/kernels.hpp"

namespace imix::kernels {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot_avx2(const double* x, const double* y, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
  }
  double sum = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) sum += x[i] * y[i];
  return sum;
}

void axpy_avx2(double a, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(a);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

// Shared micro-kernel for C = op(A) * B where element (row r, depth p) of
// op(A) lives at a[r * a_row + p * a_depth]. Blocks of 4 rows x 8 columns are
// held in registers across the whole depth loop.
void gemm_generic(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  std::size_t a_row, std::size_t a_depth, const double* b, double* c) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) {
      __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd();
      __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd();
      __m256d c20 = _mm256_setzero_pd(), c21 = _mm256_setzero_pd();
      __m256d c30 = _mm256_setzero_pd(), c31 = _mm256_setzero_pd();
      for (std::size_t p = 0; p < k; ++p) {
        const double* bp = b + p * n + j;
        const __m256d b0 = _mm256_loadu_pd(bp);
        const __m256d b1 = _mm256_loadu_pd(bp + 4);
        const double* ap = a + i * a_row + p * a_depth;
        __m256d av = _mm256_broadcast_sd(ap);
        c00 = _mm256_fmadd_pd(av, b0, c00);
        c01 = _mm256_fmadd_pd(av, b1, c01);
        av = _mm256_broadcast_sd(ap + a_row);
        c10 = _mm256_fmadd_pd(av, b0, c10);
        c11 = _mm256_fmadd_pd(av, b1, c11);
        av = _mm256_broadcast_sd(ap + 2 * a_row);
        c20 = _mm256_fmadd_pd(av, b0, c20);
        c21 = _mm256_fmadd_pd(av, b1, c21);
        av = _mm256_broadcast_sd(ap + 3 * a_row);
        c30 = _mm256_fmadd_pd(av, b0, c30);
        c31 = _mm256_fmadd_pd(av, b1, c31);
      }
      double* ci = c + i * n + j;
      _mm256_storeu_pd(ci, c00);
      _mm256_storeu_pd(ci + 4, c01);
      _mm256_storeu_pd(ci + n, c10);
      _mm256_storeu_pd(ci + n + 4, c11);
      _mm256_storeu_pd(ci + 2 * n, c20);
      _mm256_storeu_pd(ci + 2 * n + 4, c21);
      _mm256_storeu_pd(ci + 3 * n, c30);
      _mm256_storeu_pd(ci + 3 * n + 4, c31);
    }
    for (; j + 4 <= n; j += 4) {
      __m256d c0 = _mm256_setzero_pd(), c1 = _mm256_setzero_pd();
      __m256d c2 = _mm256_setzero_pd(), c3 = _mm256_setzero_pd();
      for (std::size_t p = 0; p < k; ++p) {
        const __m256d b0 = _mm256_loadu_pd(b + p * n + j);
        const double* ap = a + i * a_row + p * a_depth;
        c0 = _mm256_fmadd_pd(_mm256_broadcast_sd(ap), b0, c0);
        c1 = _mm256_fmadd_pd(_mm256_broadcast_sd(ap + a_row), b0, c1);
        c2 = _mm256_fmadd_pd(_mm256_broadcast_sd(ap + 2 * a_row), b0, c2);
        c3 = _mm256_fmadd_pd(_mm256_broadcast_sd(ap + 3 * a_row), b0, c3);
      }
      double* ci = c + i * n + j;
      _mm256_storeu_pd(ci, c0);
      _mm256_storeu_pd(ci + n, c1);
      _mm256_storeu_pd(ci + 2 * n, c2);
      _mm256_storeu_pd(ci + 3 * n, c3);
    }
    for (; j < n; ++j) {
      for (std::size_t r = 0; r < 4; ++r) {
        double sum = 0.0;
        for (std::size_t p = 0; p < k; ++p) sum += a[(i + r) * a_row + p * a_depth] * b[p * n + j];
        c[(i + r) * n + j] = sum;
      }
    }
  }
  for (; i < m; ++i) {
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      __m256d c0 = _mm256_setzero_pd();
      for (std::size_t p = 0; p < k; ++p) {
        c0 = _mm256_fmadd_pd(_mm256_broadcast_sd(a + i * a_row + p * a_depth),
                             _mm256_loadu_pd(b + p * n + j), c0);
      }
      _mm256_storeu_pd(c + i * n + j, c0);
    }
    for (; j < n; ++j) {
      double sum = 0.0;
      for (std::size_t p = 0; p < k; ++p) sum += a[i * a_row + p * a_depth] * b[p * n + j];
      c[i * n + j] = sum;
    }
  }
}

void gemm_nn_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                  double* c) {
  gemm_generic(m, n, k, a, k, 1, b, c);
}

void gemm_tn_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                  double* c) {
  gemm_generic(m, n, k, a, 1, m, b, c);
}

void gemm_nt_avx2(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b,
                  double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      const double* b0 = b + j * k;
      const double* b1 = b0 + k;
      const double* b2 = b1 + k;
      const double* b3 = b2 + k;
      __m256d s0 = _mm256_setzero_pd(), s1 = _mm256_setzero_pd();
      __m256d s2 = _mm256_setzero_pd(), s3 = _mm256_setzero_pd();
      std::size_t p = 0;
      for (; p + 4 <= k; p += 4) {
        const __m256d av = _mm256_loadu_pd(ai + p);
        s0 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b0 + p), s0);
        s1 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b1 + p), s1);
        s2 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b2 + p), s2);
        s3 = _mm256_fmadd_pd(av, _mm256_loadu_pd(b3 + p), s3);
      }
      double r0 = hsum(s0), r1 = hsum(s1), r2 = hsum(s2), r3 = hsum(s3);
      for (; p < k; ++p) {
        r0 += ai[p] * b0[p];
        r1 += ai[p] * b1[p];
        r2 += ai[p] * b2[p];
        r3 += ai[p] * b3[p];
      }
      double* ci = c + i * n + j;
      ci[0] = r0;
      ci[1] = r1;
      ci[2] = r2;
      ci[3] = r3;
    }
    for (; j < n; ++j) c[i * n + j] = dot_avx2(ai, b + j * k, k);
  }
}

const KernelTable kAvx2{Isa::avx2, dot_avx2, axpy_avx2, gemm_nn_avx2, gemm_tn_avx2, gemm_nt_avx2};

}  // namespace

const KernelTable* avx2_table_impl() { return &kAvx2; }

}  // namespace imix::kernels
