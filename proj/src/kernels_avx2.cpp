// AVX2/FMA kernel variants. This translation unit is compiled with
// -mavx2 -mfma when the toolchain supports it; otherwise every entry point
// forwards to the scalar reference. Accumulation order matches the scalar
// kernels (ascending k), so differences against the reference come only from
// FMA contraction and vector-lane partial sums.

#include <cstddef>

#include "kernels_impl.hpp"

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>

namespace cvit::kernels::avx2 {

bool compiled_with_avx2() { return true; }

namespace {

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  lo = _mm_hadd_ps(lo, lo);
  lo = _mm_hadd_ps(lo, lo);
  return _mm_cvtss_f32(lo);
}

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  lo = _mm_add_pd(lo, _mm_unpackhi_pd(lo, lo));
  return _mm_cvtsd_f64(lo);
}

}  // namespace

// ---- float ----

template <>
void add<float>(const float* a, const float* b, float* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

template <>
void sub<float>(const float* a, const float* b, float* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

template <>
void mul<float>(const float* a, const float* b, float* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

template <>
void scale<float>(const float* a, float alpha, float* out, std::size_t n) {
  __m256 va = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_mul_ps(va, _mm256_loadu_ps(a + i)));
  for (; i < n; ++i) out[i] = alpha * a[i];
}

template <>
void abs_val<float>(const float* a, float* out, std::size_t n) {
  __m256 mask = _mm256_castsi256_ps(_mm256_set1_epi32(0x7fffffff));
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_and_ps(mask, _mm256_loadu_ps(a + i)));
  for (; i < n; ++i) out[i] = a[i] < 0.0f ? -a[i] : a[i];
}

template <>
void relu<float>(const float* a, float* out, std::size_t n) {
  __m256 zero = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_max_ps(zero, _mm256_loadu_ps(a + i)));
  for (; i < n; ++i) out[i] = a[i] > 0.0f ? a[i] : 0.0f;
}

template <>
void relu_backward<float>(const float* x, const float* dy, float* dx, std::size_t n) {
  __m256 zero = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 mask = _mm256_cmp_ps(_mm256_loadu_ps(x + i), zero, _CMP_GT_OQ);
    __m256 g = _mm256_and_ps(mask, _mm256_loadu_ps(dy + i));
    _mm256_storeu_ps(dx + i, _mm256_add_ps(_mm256_loadu_ps(dx + i), g));
  }
  for (; i < n; ++i)
    if (x[i] > 0.0f) dx[i] += dy[i];
}

template <>
void axpy<float>(float alpha, const float* x, float* y, std::size_t n) {
  __m256 va = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

template <>
float dot<float>(const float* a, const float* b, std::size_t n) {
  __m256 acc = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    acc = _mm256_fmadd_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i), acc);
  float r = hsum(acc);
  for (; i < n; ++i) r += a[i] * b[i];
  return r;
}

template <>
float sum<float>(const float* a, std::size_t n) {
  __m256 acc = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(a + i));
  float r = hsum(acc);
  for (; i < n; ++i) r += a[i];
  return r;
}

namespace {

// 4x16 f32 microkernel: four rows of A against a 16-wide stripe of B.
inline void mk_nn_4x16_f32(std::size_t k, const float* a, std::size_t lda, const float* b,
                           std::size_t ldb, float* c, std::size_t ldc, bool accumulate) {
  __m256 acc[4][2];
  for (int r = 0; r < 4; ++r) {
    acc[r][0] = accumulate ? _mm256_loadu_ps(c + r * ldc) : _mm256_setzero_ps();
    acc[r][1] = accumulate ? _mm256_loadu_ps(c + r * ldc + 8) : _mm256_setzero_ps();
  }
  for (std::size_t p = 0; p < k; ++p) {
    __m256 b0 = _mm256_loadu_ps(b + p * ldb);
    __m256 b1 = _mm256_loadu_ps(b + p * ldb + 8);
    for (int r = 0; r < 4; ++r) {
      __m256 av = _mm256_set1_ps(a[r * lda + p]);
      acc[r][0] = _mm256_fmadd_ps(av, b0, acc[r][0]);
      acc[r][1] = _mm256_fmadd_ps(av, b1, acc[r][1]);
    }
  }
  for (int r = 0; r < 4; ++r) {
    _mm256_storeu_ps(c + r * ldc, acc[r][0]);
    _mm256_storeu_ps(c + r * ldc + 8, acc[r][1]);
  }
}

inline void mk_tn_4x16_f32(std::size_t k, const float* a, std::size_t lda, const float* b,
                           std::size_t ldb, float* c, std::size_t ldc, bool accumulate) {
  // a points at column i0 of the kxm matrix; rows advance by lda.
  __m256 acc[4][2];
  for (int r = 0; r < 4; ++r) {
    acc[r][0] = accumulate ? _mm256_loadu_ps(c + r * ldc) : _mm256_setzero_ps();
    acc[r][1] = accumulate ? _mm256_loadu_ps(c + r * ldc + 8) : _mm256_setzero_ps();
  }
  for (std::size_t p = 0; p < k; ++p) {
    __m256 b0 = _mm256_loadu_ps(b + p * ldb);
    __m256 b1 = _mm256_loadu_ps(b + p * ldb + 8);
    for (int r = 0; r < 4; ++r) {
      __m256 av = _mm256_set1_ps(a[p * lda + r]);
      acc[r][0] = _mm256_fmadd_ps(av, b0, acc[r][0]);
      acc[r][1] = _mm256_fmadd_ps(av, b1, acc[r][1]);
    }
  }
  for (int r = 0; r < 4; ++r) {
    _mm256_storeu_ps(c + r * ldc, acc[r][0]);
    _mm256_storeu_ps(c + r * ldc + 8, acc[r][1]);
  }
}

}  // namespace

template <>
void gemm_nn<float>(std::size_t m, std::size_t n, std::size_t k, const float* a,
                    std::size_t lda, const float* b, std::size_t ldb, float* c,
                    std::size_t ldc, bool accumulate) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    std::size_t j = 0;
    for (; j + 16 <= n; j += 16)
      mk_nn_4x16_f32(k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc, accumulate);
    if (j < n)
      scalar::gemm_nn(4, n - j, k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc,
                      accumulate);
  }
  if (i < m)
    scalar::gemm_nn(m - i, n, k, a + i * lda, lda, b, ldb, c + i * ldc, ldc, accumulate);
}

template <>
void gemm_nt<float>(std::size_t m, std::size_t n, std::size_t k, const float* a,
                    std::size_t lda, const float* b, std::size_t ldb, float* c,
                    std::size_t ldc, bool accumulate) {
  std::size_t i = 0;
  for (; i + 2 <= m; i += 2) {
    std::size_t j = 0;
    for (; j + 2 <= n; j += 2) {
      __m256 acc00 = _mm256_setzero_ps(), acc01 = _mm256_setzero_ps();
      __m256 acc10 = _mm256_setzero_ps(), acc11 = _mm256_setzero_ps();
      const float* a0 = a + i * lda;
      const float* a1 = a0 + lda;
      const float* b0 = b + j * ldb;
      const float* b1 = b0 + ldb;
      std::size_t p = 0;
      for (; p + 8 <= k; p += 8) {
        __m256 va0 = _mm256_loadu_ps(a0 + p);
        __m256 va1 = _mm256_loadu_ps(a1 + p);
        __m256 vb0 = _mm256_loadu_ps(b0 + p);
        __m256 vb1 = _mm256_loadu_ps(b1 + p);
        acc00 = _mm256_fmadd_ps(va0, vb0, acc00);
        acc01 = _mm256_fmadd_ps(va0, vb1, acc01);
        acc10 = _mm256_fmadd_ps(va1, vb0, acc10);
        acc11 = _mm256_fmadd_ps(va1, vb1, acc11);
      }
      float s00 = hsum(acc00), s01 = hsum(acc01), s10 = hsum(acc10), s11 = hsum(acc11);
      for (; p < k; ++p) {
        s00 += a0[p] * b0[p];
        s01 += a0[p] * b1[p];
        s10 += a1[p] * b0[p];
        s11 += a1[p] * b1[p];
      }
      float* c0 = c + i * ldc + j;
      float* c1 = c0 + ldc;
      if (accumulate) {
        c0[0] += s00;
        c0[1] += s01;
        c1[0] += s10;
        c1[1] += s11;
      } else {
        c0[0] = s00;
        c0[1] = s01;
        c1[0] = s10;
        c1[1] = s11;
      }
    }
    if (j < n)
      scalar::gemm_nt(2, n - j, k, a + i * lda, lda, b + j * ldb, ldb, c + i * ldc + j,
                      ldc, accumulate);
  }
  if (i < m)
    scalar::gemm_nt(m - i, n, k, a + i * lda, lda, b, ldb, c + i * ldc, ldc, accumulate);
}

template <>
void gemm_tn<float>(std::size_t m, std::size_t n, std::size_t k, const float* a,
                    std::size_t lda, const float* b, std::size_t ldb, float* c,
                    std::size_t ldc, bool accumulate) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    std::size_t j = 0;
    for (; j + 16 <= n; j += 16)
      mk_tn_4x16_f32(k, a + i, lda, b + j, ldb, c + i * ldc + j, ldc, accumulate);
    if (j < n)
      scalar::gemm_tn(4, n - j, k, a + i, lda, b + j, ldb, c + i * ldc + j, ldc,
                      accumulate);
  }
  if (i < m)
    scalar::gemm_tn(m - i, n, k, a + i, lda, b, ldb, c + i * ldc, ldc, accumulate);
}

template <>
void adam_update<float>(float* param, const float* grad, float* m, float* v, std::size_t n,
                        float lr, float beta1, float beta2, float eps, float weight_decay,
                        float bias_corr1, float bias_corr2) {
  __m256 vb1 = _mm256_set1_ps(beta1);
  __m256 vb2 = _mm256_set1_ps(beta2);
  __m256 vomb1 = _mm256_set1_ps(1.0f - beta1);
  __m256 vomb2 = _mm256_set1_ps(1.0f - beta2);
  __m256 vwd = _mm256_set1_ps(weight_decay);
  __m256 vlr = _mm256_set1_ps(lr);
  __m256 veps = _mm256_set1_ps(eps);
  __m256 vrc1 = _mm256_set1_ps(1.0f / bias_corr1);
  __m256 vrc2 = _mm256_set1_ps(1.0f / bias_corr2);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m256 p = _mm256_loadu_ps(param + i);
    __m256 g = _mm256_fmadd_ps(vwd, p, _mm256_loadu_ps(grad + i));
    __m256 mi = _mm256_fmadd_ps(vomb1, g, _mm256_mul_ps(vb1, _mm256_loadu_ps(m + i)));
    __m256 vi = _mm256_fmadd_ps(vomb2, _mm256_mul_ps(g, g),
                                _mm256_mul_ps(vb2, _mm256_loadu_ps(v + i)));
    _mm256_storeu_ps(m + i, mi);
    _mm256_storeu_ps(v + i, vi);
    __m256 mhat = _mm256_mul_ps(mi, vrc1);
    __m256 vhat = _mm256_mul_ps(vi, vrc2);
    __m256 denom = _mm256_add_ps(_mm256_sqrt_ps(vhat), veps);
    p = _mm256_sub_ps(p, _mm256_div_ps(_mm256_mul_ps(vlr, mhat), denom));
    _mm256_storeu_ps(param + i, p);
  }
  if (i < n)
    scalar::adam_update(param + i, grad + i, m + i, v + i, n - i, lr, beta1, beta2, eps,
                        weight_decay, bias_corr1, bias_corr2);
}

// ---- double ----

template <>
void add<double>(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

template <>
void sub<double>(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

template <>
void mul<double>(const double* a, const double* b, double* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

template <>
void scale<double>(const double* a, double alpha, double* out, std::size_t n) {
  __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_mul_pd(va, _mm256_loadu_pd(a + i)));
  for (; i < n; ++i) out[i] = alpha * a[i];
}

template <>
void abs_val<double>(const double* a, double* out, std::size_t n) {
  __m256d mask = _mm256_castsi256_pd(_mm256_set1_epi64x(0x7fffffffffffffffll));
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_and_pd(mask, _mm256_loadu_pd(a + i)));
  for (; i < n; ++i) out[i] = a[i] < 0.0 ? -a[i] : a[i];
}

template <>
void relu<double>(const double* a, double* out, std::size_t n) {
  __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(out + i, _mm256_max_pd(zero, _mm256_loadu_pd(a + i)));
  for (; i < n; ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
}

template <>
void relu_backward<double>(const double* x, const double* dy, double* dx, std::size_t n) {
  __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
    __m256d g = _mm256_and_pd(mask, _mm256_loadu_pd(dy + i));
    _mm256_storeu_pd(dx + i, _mm256_add_pd(_mm256_loadu_pd(dx + i), g));
  }
  for (; i < n; ++i)
    if (x[i] > 0.0) dx[i] += dy[i];
}

template <>
void axpy<double>(double alpha, const double* x, double* y, std::size_t n) {
  __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

template <>
double dot<double>(const double* a, const double* b, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4)
    acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc);
  double r = hsum(acc);
  for (; i < n; ++i) r += a[i] * b[i];
  return r;
}

template <>
double sum<double>(const double* a, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(a + i));
  double r = hsum(acc);
  for (; i < n; ++i) r += a[i];
  return r;
}

namespace {

inline void mk_nn_4x8_f64(std::size_t k, const double* a, std::size_t lda, const double* b,
                          std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  __m256d acc[4][2];
  for (int r = 0; r < 4; ++r) {
    acc[r][0] = accumulate ? _mm256_loadu_pd(c + r * ldc) : _mm256_setzero_pd();
    acc[r][1] = accumulate ? _mm256_loadu_pd(c + r * ldc + 4) : _mm256_setzero_pd();
  }
  for (std::size_t p = 0; p < k; ++p) {
    __m256d b0 = _mm256_loadu_pd(b + p * ldb);
    __m256d b1 = _mm256_loadu_pd(b + p * ldb + 4);
    for (int r = 0; r < 4; ++r) {
      __m256d av = _mm256_set1_pd(a[r * lda + p]);
      acc[r][0] = _mm256_fmadd_pd(av, b0, acc[r][0]);
      acc[r][1] = _mm256_fmadd_pd(av, b1, acc[r][1]);
    }
  }
  for (int r = 0; r < 4; ++r) {
    _mm256_storeu_pd(c + r * ldc, acc[r][0]);
    _mm256_storeu_pd(c + r * ldc + 4, acc[r][1]);
  }
}

inline void mk_tn_4x8_f64(std::size_t k, const double* a, std::size_t lda, const double* b,
                          std::size_t ldb, double* c, std::size_t ldc, bool accumulate) {
  __m256d acc[4][2];
  for (int r = 0; r < 4; ++r) {
    acc[r][0] = accumulate ? _mm256_loadu_pd(c + r * ldc) : _mm256_setzero_pd();
    acc[r][1] = accumulate ? _mm256_loadu_pd(c + r * ldc + 4) : _mm256_setzero_pd();
  }
  for (std::size_t p = 0; p < k; ++p) {
    __m256d b0 = _mm256_loadu_pd(b + p * ldb);
    __m256d b1 = _mm256_loadu_pd(b + p * ldb + 4);
    for (int r = 0; r < 4; ++r) {
      __m256d av = _mm256_set1_pd(a[p * lda + r]);
      acc[r][0] = _mm256_fmadd_pd(av, b0, acc[r][0]);
      acc[r][1] = _mm256_fmadd_pd(av, b1, acc[r][1]);
    }
  }
  for (int r = 0; r < 4; ++r) {
    _mm256_storeu_pd(c + r * ldc, acc[r][0]);
    _mm256_storeu_pd(c + r * ldc + 4, acc[r][1]);
  }
}

}  // namespace

template <>
void gemm_nn<double>(std::size_t m, std::size_t n, std::size_t k, const double* a,
                     std::size_t lda, const double* b, std::size_t ldb, double* c,
                     std::size_t ldc, bool accumulate) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8)
      mk_nn_4x8_f64(k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc, accumulate);
    if (j < n)
      scalar::gemm_nn(4, n - j, k, a + i * lda, lda, b + j, ldb, c + i * ldc + j, ldc,
                      accumulate);
  }
  if (i < m)
    scalar::gemm_nn(m - i, n, k, a + i * lda, lda, b, ldb, c + i * ldc, ldc, accumulate);
}

template <>
void gemm_nt<double>(std::size_t m, std::size_t n, std::size_t k, const double* a,
                     std::size_t lda, const double* b, std::size_t ldb, double* c,
                     std::size_t ldc, bool accumulate) {
  std::size_t i = 0;
  for (; i + 2 <= m; i += 2) {
    std::size_t j = 0;
    for (; j + 2 <= n; j += 2) {
      __m256d acc00 = _mm256_setzero_pd(), acc01 = _mm256_setzero_pd();
      __m256d acc10 = _mm256_setzero_pd(), acc11 = _mm256_setzero_pd();
      const double* a0 = a + i * lda;
      const double* a1 = a0 + lda;
      const double* b0 = b + j * ldb;
      const double* b1 = b0 + ldb;
      std::size_t p = 0;
      for (; p + 4 <= k; p += 4) {
        __m256d va0 = _mm256_loadu_pd(a0 + p);
        __m256d va1 = _mm256_loadu_pd(a1 + p);
        __m256d vb0 = _mm256_loadu_pd(b0 + p);
        __m256d vb1 = _mm256_loadu_pd(b1 + p);
        acc00 = _mm256_fmadd_pd(va0, vb0, acc00);
        acc01 = _mm256_fmadd_pd(va0, vb1, acc01);
        acc10 = _mm256_fmadd_pd(va1, vb0, acc10);
        acc11 = _mm256_fmadd_pd(va1, vb1, acc11);
      }
      double s00 = hsum(acc00), s01 = hsum(acc01), s10 = hsum(acc10), s11 = hsum(acc11);
      for (; p < k; ++p) {
        s00 += a0[p] * b0[p];
        s01 += a0[p] * b1[p];
        s10 += a1[p] * b0[p];
        s11 += a1[p] * b1[p];
      }
      double* c0 = c + i * ldc + j;
      double* c1 = c0 + ldc;
      if (accumulate) {
        c0[0] += s00;
        c0[1] += s01;
        c1[0] += s10;
        c1[1] += s11;
      } else {
        c0[0] = s00;
        c0[1] = s01;
        c1[0] = s10;
        c1[1] = s11;
      }
    }
    if (j < n)
      scalar::gemm_nt(2, n - j, k, a + i * lda, lda, b + j * ldb, ldb, c + i * ldc + j,
                      ldc, accumulate);
  }
  if (i < m)
    scalar::gemm_nt(m - i, n, k, a + i * lda, lda, b, ldb, c + i * ldc, ldc, accumulate);
}

template <>
void gemm_tn<double>(std::size_t m, std::size_t n, std::size_t k, const double* a,
                     std::size_t lda, const double* b, std::size_t ldb, double* c,
                     std::size_t ldc, bool accumulate) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8)
      mk_tn_4x8_f64(k, a + i, lda, b + j, ldb, c + i * ldc + j, ldc, accumulate);
    if (j < n)
      scalar::gemm_tn(4, n - j, k, a + i, lda, b + j, ldb, c + i * ldc + j, ldc,
                      accumulate);
  }
  if (i < m)
    scalar::gemm_tn(m - i, n, k, a + i, lda, b, ldb, c + i * ldc, ldc, accumulate);
}

template <>
void adam_update<double>(double* param, const double* grad, double* m, double* v,
                         std::size_t n, double lr, double beta1, double beta2, double eps,
                         double weight_decay, double bias_corr1, double bias_corr2) {
  __m256d vb1 = _mm256_set1_pd(beta1);
  __m256d vb2 = _mm256_set1_pd(beta2);
  __m256d vomb1 = _mm256_set1_pd(1.0 - beta1);
  __m256d vomb2 = _mm256_set1_pd(1.0 - beta2);
  __m256d vwd = _mm256_set1_pd(weight_decay);
  __m256d vlr = _mm256_set1_pd(lr);
  __m256d veps = _mm256_set1_pd(eps);
  __m256d vrc1 = _mm256_set1_pd(1.0 / bias_corr1);
  __m256d vrc2 = _mm256_set1_pd(1.0 / bias_corr2);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    __m256d p = _mm256_loadu_pd(param + i);
    __m256d g = _mm256_fmadd_pd(vwd, p, _mm256_loadu_pd(grad + i));
    __m256d mi = _mm256_fmadd_pd(vomb1, g, _mm256_mul_pd(vb1, _mm256_loadu_pd(m + i)));
    __m256d vi = _mm256_fmadd_pd(vomb2, _mm256_mul_pd(g, g),
                                 _mm256_mul_pd(vb2, _mm256_loadu_pd(v + i)));
    _mm256_storeu_pd(m + i, mi);
    _mm256_storeu_pd(v + i, vi);
    __m256d mhat = _mm256_mul_pd(mi, vrc1);
    __m256d vhat = _mm256_mul_pd(vi, vrc2);
    __m256d denom = _mm256_add_pd(_mm256_sqrt_pd(vhat), veps);
    p = _mm256_sub_pd(p, _mm256_div_pd(_mm256_mul_pd(vlr, mhat), denom));
    _mm256_storeu_pd(param + i, p);
  }
  if (i < n)
    scalar::adam_update(param + i, grad + i, m + i, v + i, n - i, lr, beta1, beta2, eps,
                        weight_decay, bias_corr1, bias_corr2);
}

}  // namespace cvit::kernels::avx2

#else  // !(__AVX2__ && __FMA__)

namespace cvit::kernels::avx2 {

bool compiled_with_avx2() { return false; }

template <typename T>
void add(const T* a, const T* b, T* out, std::size_t n) { scalar::add(a, b, out, n); }
template <typename T>
void sub(const T* a, const T* b, T* out, std::size_t n) { scalar::sub(a, b, out, n); }
template <typename T>
void mul(const T* a, const T* b, T* out, std::size_t n) { scalar::mul(a, b, out, n); }
template <typename T>
void scale(const T* a, T alpha, T* out, std::size_t n) { scalar::scale(a, alpha, out, n); }
template <typename T>
void abs_val(const T* a, T* out, std::size_t n) { scalar::abs_val(a, out, n); }
template <typename T>
void relu(const T* a, T* out, std::size_t n) { scalar::relu(a, out, n); }
template <typename T>
void relu_backward(const T* x, const T* dy, T* dx, std::size_t n) {
  scalar::relu_backward(x, dy, dx, n);
}
template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) { scalar::axpy(alpha, x, y, n); }
template <typename T>
T dot(const T* a, const T* b, std::size_t n) { return scalar::dot(a, b, n); }
template <typename T>
T sum(const T* a, std::size_t n) { return scalar::sum(a, n); }
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
             const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  scalar::gemm_nn(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
             const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  scalar::gemm_nt(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
             const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  scalar::gemm_tn(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}
template <typename T>
void adam_update(T* param, const T* grad, T* m, T* v, std::size_t n, T lr, T beta1,
                 T beta2, T eps, T weight_decay, T bias_corr1, T bias_corr2) {
  scalar::adam_update(param, grad, m, v, n, lr, beta1, beta2, eps, weight_decay,
                      bias_corr1, bias_corr2);
}

#define CVIT_INSTANTIATE_AVX2_FWD(T)                                                     \
  template void add<T>(const T*, const T*, T*, std::size_t);                             \
  template void sub<T>(const T*, const T*, T*, std::size_t);                             \
  template void mul<T>(const T*, const T*, T*, std::size_t);                             \
  template void scale<T>(const T*, T, T*, std::size_t);                                  \
  template void abs_val<T>(const T*, T*, std::size_t);                                   \
  template void relu<T>(const T*, T*, std::size_t);                                      \
  template void relu_backward<T>(const T*, const T*, T*, std::size_t);                   \
  template void axpy<T>(T, const T*, T*, std::size_t);                                   \
  template T dot<T>(const T*, const T*, std::size_t);                                    \
  template T sum<T>(const T*, std::size_t);                                              \
  template void gemm_nn<T>(std::size_t, std::size_t, std::size_t, const T*, std::size_t, \
                           const T*, std::size_t, T*, std::size_t, bool);                 \
  template void gemm_nt<T>(std::size_t, std::size_t, std::size_t, const T*, std::size_t, \
                           const T*, std::size_t, T*, std::size_t, bool);                 \
  template void gemm_tn<T>(std::size_t, std::size_t, std::size_t, const T*, std::size_t, \
                           const T*, std::size_t, T*, std::size_t, bool);                 \
  template void adam_update<T>(T*, const T*, T*, T*, std::size_t, T, T, T, T, T, T, T);

CVIT_INSTANTIATE_AVX2_FWD(float)
CVIT_INSTANTIATE_AVX2_FWD(double)

#undef CVIT_INSTANTIATE_AVX2_FWD

}  // namespace cvit::kernels::avx2

#endif
