// Runtime backend selection and public kernel dispatch.

#include "cvit/kernels.hpp"

#include <string>

#if defined(__x86_64__) || defined(__i386__)
#include <pmmintrin.h>
#include <xmmintrin.h>
#endif

#include "cvit/errors.hpp"
#include "kernels_impl.hpp"

namespace cvit::kernels {

void flush_denormals() {
#if defined(__x86_64__) || defined(__i386__)
  _MM_SET_FLUSH_ZERO_MODE(_MM_FLUSH_ZERO_ON);
  _MM_SET_DENORMALS_ZERO_MODE(_MM_DENORMALS_ZERO_ON);
#endif
}

namespace {

bool cpu_supports_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend detect_best() {
  return (avx2::compiled_with_avx2() && cpu_supports_avx2()) ? Backend::kAvx2
                                                             : Backend::kScalar;
}

Backend& backend_ref() {
  static Backend b = [] {
    flush_denormals();
    return detect_best();
  }();
  return b;
}

}  // namespace

bool avx2_available() { return avx2::compiled_with_avx2() && cpu_supports_avx2(); }

Backend active_backend() { return backend_ref(); }

void set_backend(Backend b) {
  if (b == Backend::kAvx2 && !avx2_available())
    throw ConfigError("AVX2 kernel backend requested but not available on this machine");
  backend_ref() = b;
}

void use_best_backend() { backend_ref() = detect_best(); }

const char* backend_name(Backend b) {
  return b == Backend::kAvx2 ? "avx2" : "scalar";
}

template <typename T>
void add(const T* a, const T* b, T* out, std::size_t n) {
  if (backend_ref() == Backend::kAvx2) avx2::add(a, b, out, n);
  else scalar::add(a, b, out, n);
}

template <typename T>
void sub(const T* a, const T* b, T* out, std::size_t n) {
  if (backend_ref() == Backend::kAvx2) avx2::sub(a, b, out, n);
  else scalar::sub(a, b, out, n);
}

template <typename T>
void mul(const T* a, const T* b, T* out, std::size_t n) {
  if (backend_ref() == Backend::kAvx2) avx2::mul(a, b, out, n);
  else scalar::mul(a, b, out, n);
}

template <typename T>
void scale(const T* a, T alpha, T* out, std::size_t n) {
  if (backend_ref() == Backend::kAvx2) avx2::scale(a, alpha, out, n);
  else scalar::scale(a, alpha, out, n);
}

template <typename T>
void abs_val(const T* a, T* out, std::size_t n) {
  if (backend_ref() == Backend::kAvx2) avx2::abs_val(a, out, n);
  else scalar::abs_val(a, out, n);
}

template <typename T>
void relu(const T* a, T* out, std::size_t n) {
  if (backend_ref() == Backend::kAvx2) avx2::relu(a, out, n);
  else scalar::relu(a, out, n);
}

template <typename T>
void relu_backward(const T* x, const T* dy, T* dx, std::size_t n) {
  if (backend_ref() == Backend::kAvx2) avx2::relu_backward(x, dy, dx, n);
  else scalar::relu_backward(x, dy, dx, n);
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  if (backend_ref() == Backend::kAvx2) avx2::axpy(alpha, x, y, n);
  else scalar::axpy(alpha, x, y, n);
}

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  if (backend_ref() == Backend::kAvx2) return avx2::dot(a, b, n);
  return scalar::dot(a, b, n);
}

template <typename T>
T sum(const T* a, std::size_t n) {
  if (backend_ref() == Backend::kAvx2) return avx2::sum(a, n);
  return scalar::sum(a, n);
}

template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
             const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  if (backend_ref() == Backend::kAvx2) avx2::gemm_nn(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
  else scalar::gemm_nn(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
             const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  if (backend_ref() == Backend::kAvx2) avx2::gemm_nt(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
  else scalar::gemm_nt(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
             const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate) {
  if (backend_ref() == Backend::kAvx2) avx2::gemm_tn(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
  else scalar::gemm_tn(m, n, k, a, lda, b, ldb, c, ldc, accumulate);
}

template <typename T>
void adam_update(T* param, const T* grad, T* m, T* v, std::size_t n, T lr, T beta1,
                 T beta2, T eps, T weight_decay, T bias_corr1, T bias_corr2) {
  if (backend_ref() == Backend::kAvx2)
    avx2::adam_update(param, grad, m, v, n, lr, beta1, beta2, eps, weight_decay,
                      bias_corr1, bias_corr2);
  else
    scalar::adam_update(param, grad, m, v, n, lr, beta1, beta2, eps, weight_decay,
                        bias_corr1, bias_corr2);
}

#define CVIT_INSTANTIATE_DISPATCH(T)                                                     \
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

CVIT_INSTANTIATE_DISPATCH(float)
CVIT_INSTANTIATE_DISPATCH(double)

#undef CVIT_INSTANTIATE_DISPATCH

}  // namespace cvit::kernels
