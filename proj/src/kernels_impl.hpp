#pragma once

// Internal: per-backend kernel entry points. The public dispatch lives in
// kernels.cpp; scalar reference implementations in kernels_scalar.cpp; AVX2
// variants in kernels_avx2.cpp (which degrade to scalar forwarding when the
// translation unit is built without AVX2 support).

#include <cstddef>

namespace cvit::kernels {

namespace scalar {

template <typename T> void add(const T* a, const T* b, T* out, std::size_t n);
template <typename T> void sub(const T* a, const T* b, T* out, std::size_t n);
template <typename T> void mul(const T* a, const T* b, T* out, std::size_t n);
template <typename T> void scale(const T* a, T alpha, T* out, std::size_t n);
template <typename T> void abs_val(const T* a, T* out, std::size_t n);
template <typename T> void relu(const T* a, T* out, std::size_t n);
template <typename T> void relu_backward(const T* x, const T* dy, T* dx, std::size_t n);
template <typename T> void axpy(T alpha, const T* x, T* y, std::size_t n);
template <typename T> T dot(const T* a, const T* b, std::size_t n);
template <typename T> T sum(const T* a, std::size_t n);
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
             const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate);
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
             const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate);
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
             const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate);
template <typename T>
void adam_update(T* param, const T* grad, T* m, T* v, std::size_t n, T lr, T beta1,
                 T beta2, T eps, T weight_decay, T bias_corr1, T bias_corr2);

}  // namespace scalar

namespace avx2 {

// True when kernels_avx2.cpp was compiled with -mavx2 -mfma; otherwise every
// avx2::* symbol forwards to the scalar implementation.
bool compiled_with_avx2();

template <typename T> void add(const T* a, const T* b, T* out, std::size_t n);
template <typename T> void sub(const T* a, const T* b, T* out, std::size_t n);
template <typename T> void mul(const T* a, const T* b, T* out, std::size_t n);
template <typename T> void scale(const T* a, T alpha, T* out, std::size_t n);
template <typename T> void abs_val(const T* a, T* out, std::size_t n);
template <typename T> void relu(const T* a, T* out, std::size_t n);
template <typename T> void relu_backward(const T* x, const T* dy, T* dx, std::size_t n);
template <typename T> void axpy(T alpha, const T* x, T* y, std::size_t n);
template <typename T> T dot(const T* a, const T* b, std::size_t n);
template <typename T> T sum(const T* a, std::size_t n);
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
             const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate);
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
             const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate);
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
             const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate);
template <typename T>
void adam_update(T* param, const T* grad, T* m, T* v, std::size_t n, T lr, T beta1,
                 T beta2, T eps, T weight_decay, T bias_corr1, T bias_corr2);

}  // namespace avx2

}  // namespace cvit::kernels
