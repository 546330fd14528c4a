#pragma once

#include <cstddef>

namespace cvit::kernels {

// Low-level arithmetic kernels behind the tensor engine. Every kernel has a
// scalar reference implementation and (on x86) an AVX2/FMA variant; the
// active backend is chosen at runtime from CPU capabilities and can be forced
// for equivalence testing. All kernels are single-threaded and accumulate in
// a fixed ascending index order, so results are reproducible run to run.

enum class Backend { kScalar, kAvx2 };

Backend active_backend();
// Force a backend. Throws cvit::ConfigError when the requested backend was
// not compiled in or the CPU does not support it.
void set_backend(Backend b);
// Flush subnormal floats to zero (FTZ/DAZ on x86). Saturated activations in
// trained networks otherwise fall into subnormal arithmetic, which runs an
// order of magnitude slower. Applied automatically on first kernel dispatch;
// no-op on targets without the control register.
void flush_denormals();
// Back to the best backend this machine supports.
void use_best_backend();
bool avx2_available();
const char* backend_name(Backend b);

// ---- elementwise ----
template <typename T> void add(const T* a, const T* b, T* out, std::size_t n);
template <typename T> void sub(const T* a, const T* b, T* out, std::size_t n);
template <typename T> void mul(const T* a, const T* b, T* out, std::size_t n);
template <typename T> void scale(const T* a, T alpha, T* out, std::size_t n);
template <typename T> void abs_val(const T* a, T* out, std::size_t n);
template <typename T> void relu(const T* a, T* out, std::size_t n);
// dx += dy where x > 0
template <typename T> void relu_backward(const T* x, const T* dy, T* dx, std::size_t n);
// y += alpha * x
template <typename T> void axpy(T alpha, const T* x, T* y, std::size_t n);

// ---- reductions ----
template <typename T> T dot(const T* a, const T* b, std::size_t n);
template <typename T> T sum(const T* a, std::size_t n);

// ---- matrix multiply, row-major with leading dimensions ----
// C[m,n] (+)= A[m,k] * B[k,n]
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
             const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate);
// C[m,n] (+)= A[m,k] * B[n,k]^T
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
             const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate);
// C[m,n] (+)= A[k,m]^T * B[k,n]
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, std::size_t lda,
             const T* b, std::size_t ldb, T* c, std::size_t ldc, bool accumulate);

// ---- fused Adam step (coupled weight decay) ----
// g' = g + wd * p;  m = b1*m + (1-b1)*g';  v = b2*v + (1-b2)*g'^2
// p -= lr * (m / bc1) / (sqrt(v / bc2) + eps)
template <typename T>
void adam_update(T* param, const T* grad, T* m, T* v, std::size_t n, T lr, T beta1,
                 T beta2, T eps, T weight_decay, T bias_corr1, T bias_corr2);

}  // namespace cvit::kernels
