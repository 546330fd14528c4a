// Scalar reference kernels. These define the semantics the SIMD variants are
// equivalence-tested against: plain loops, ascending index order, inner-k
// dot-product accumulation for every gemm flavor.

#include <cmath>
#include <cstddef>

#include "kernels_impl.hpp"

namespace cvit::kernels::scalar {

template <typename T>
void add(const T* a, const T* b, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <typename T>
void sub(const T* a, const T* b, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

template <typename T>
void mul(const T* a, const T* b, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <typename T>
void scale(const T* a, T alpha, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = alpha * a[i];
}

template <typename T>
void abs_val(const T* a, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] < T(0) ? -a[i] : a[i];
}

template <typename T>
void relu(const T* a, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] > T(0) ? a[i] : T(0);
}

template <typename T>
void relu_backward(const T* x, const T* dy, T* dx, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    if (x[i] > T(0)) dx[i] += dy[i];
  }
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <typename T>
T sum(const T* a, std::size_t n) {
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) acc += a[i];
  return acc;
}

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
             const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = accumulate ? c[i * ldc + j] : T(0);
      for (std::size_t p = 0; p < k; ++p) acc += a[i * lda + p] * b[p * ldb + j];
      c[i * ldc + j] = acc;
    }
  }
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
             const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = accumulate ? c[i * ldc + j] : T(0);
      for (std::size_t p = 0; p < k; ++p) acc += a[i * lda + p] * b[j * ldb + p];
      c[i * ldc + j] = acc;
    }
  }
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
             const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = accumulate ? c[i * ldc + j] : T(0);
      for (std::size_t p = 0; p < k; ++p) acc += a[p * lda + i] * b[p * ldb + j];
      c[i * ldc + j] = acc;
    }
  }
}

template <typename T>
void adam_update(T* param, const T* grad, T* m, T* v, std::size_t n, T lr, T beta1,
                 T beta2, T eps, T weight_decay, T bias_corr1, T bias_corr2) {
  for (std::size_t i = 0; i < n; ++i) {
    T g = grad[i] + weight_decay * param[i];
    m[i] = beta1 * m[i] + (T(1) - beta1) * g;
    v[i] = beta2 * v[i] + (T(1) - beta2) * g * g;
    T mhat = m[i] / bias_corr1;
    T vhat = v[i] / bias_corr2;
    param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

#define CVIT_INSTANTIATE_SCALAR(T)                                                      \
  template void add<T>(const T*, const T*, T*, std::size_t);                            \
  template void sub<T>(const T*, const T*, T*, std::size_t);                            \
  template void mul<T>(const T*, const T*, T*, std::size_t);                            \
  template void scale<T>(const T*, T, T*, std::size_t);                                 \
  template void abs_val<T>(const T*, T*, std::size_t);                                  \
  template void relu<T>(const T*, T*, std::size_t);                                     \
  template void relu_backward<T>(const T*, const T*, T*, std::size_t);                  \
  template void axpy<T>(T, const T*, T*, std::size_t);                                  \
  template T dot<T>(const T*, const T*, std::size_t);                                   \
  template T sum<T>(const T*, std::size_t);                                             \
  template void gemm_nn<T>(std::size_t, std::size_t, std::size_t, const T*,             \
                           std::size_t, const T*, std::size_t, T*, std::size_t, bool);  \
  template void gemm_nt<T>(std::size_t, std::size_t, std::size_t, const T*,             \
                           std::size_t, const T*, std::size_t, T*, std::size_t, bool);  \
  template void gemm_tn<T>(std::size_t, std::size_t, std::size_t, const T*,             \
                           std::size_t, const T*, std::size_t, T*, std::size_t, bool);  \
  template void adam_update<T>(T*, const T*, T*, T*, std::size_t, T, T, T, T, T, T, T);

CVIT_INSTANTIATE_SCALAR(float)
CVIT_INSTANTIATE_SCALAR(double)

#undef CVIT_INSTANTIATE_SCALAR

}  // namespace cvit::kernels::scalar
