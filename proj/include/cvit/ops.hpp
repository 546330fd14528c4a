#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cvit/kernels.hpp"
#include "cvit/rng.hpp"
#include "cvit/tensor.hpp"

namespace cvit {

// Differentiable tensor operations. Broadcasting is deliberately narrow:
// same-shape, scalar-vs-tensor, and trailing-axis (bias style). Anything else
// is a DimensionError.

namespace detail {

enum class Broadcast { kSame, kScalarA, kScalarB, kTrailingB };

inline bool is_trailing_suffix(const Shape& a, const Shape& b) {
  if (b.size() >= a.size()) return false;
  std::size_t off = a.size() - b.size();
  for (std::size_t i = 0; i < b.size(); ++i)
    if (a[off + i] != b[i]) return false;
  return true;
}

inline Broadcast resolve_broadcast(const Shape& a, const Shape& b, const char* op) {
  if (a == b) return Broadcast::kSame;
  if (shape_numel(b) == 1) return Broadcast::kScalarB;
  if (shape_numel(a) == 1) return Broadcast::kScalarA;
  if (is_trailing_suffix(a, b)) return Broadcast::kTrailingB;
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a) + " vs " +
                       shape_str(b));
}

template <typename T>
std::shared_ptr<Node<T>> make_op_node_v(const char* name, Shape shape,
                                        const std::vector<Tensor<T>>& inputs) {
  auto out = std::make_shared<Node<T>>();
  out->shape = std::move(shape);
  out->data.assign(static_cast<std::size_t>(shape_numel(out->shape)), T(0));
  out->op_name = name;
  bool rg = false;
  for (const auto& t : inputs) rg = rg || t.node()->requires_grad;
  out->requires_grad = rg;
  if (rg)
    for (const auto& t : inputs) out->parents.push_back(t.node());
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise binary ops
// ---------------------------------------------------------------------------

namespace detail {

// sign = +1 for add, -1 for sub.
template <typename T>
Tensor<T> add_like(const Tensor<T>& a, const Tensor<T>& b, T sign, const char* name) {
  Broadcast bc = resolve_broadcast(a.shape(), b.shape(), name);
  const Shape& out_shape = (bc == Broadcast::kScalarA) ? b.shape() : a.shape();
  auto out = make_op_node_v<T>(name, out_shape, {a, b});
  const std::size_t n = out->data.size();
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out->data.data();
  switch (bc) {
    case Broadcast::kSame:
      if (sign > T(0)) kernels::add(pa, pb, po, n);
      else kernels::sub(pa, pb, po, n);
      break;
    case Broadcast::kScalarB: {
      T s = sign * pb[0];
      for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + s;
      break;
    }
    case Broadcast::kScalarA: {
      T s = pa[0];
      for (std::size_t i = 0; i < n; ++i) po[i] = s + sign * pb[i];
      break;
    }
    case Broadcast::kTrailingB: {
      std::size_t nb = static_cast<std::size_t>(shape_numel(b.shape()));
      for (std::size_t off = 0; off < n; off += nb) {
        if (sign > T(0)) kernels::add(pa + off, pb, po + off, nb);
        else kernels::sub(pa + off, pb, po + off, nb);
      }
      break;
    }
  }
  if (out->requires_grad) {
    auto pan = a.node();
    auto pbn = b.node();
    out->backward_fn = [pan, pbn, bc, sign](detail::Node<T>& o) {
      const T* g = o.grad.data();
      const std::size_t n = o.grad.size();
      if (pan->requires_grad) {
        pan->ensure_grad();
        if (bc == Broadcast::kScalarA) {
          T acc = kernels::sum(g, n);
          pan->grad[0] += acc;
        } else {
          kernels::axpy(T(1), g, pan->grad.data(), n);
        }
      }
      if (pbn->requires_grad) {
        pbn->ensure_grad();
        if (bc == Broadcast::kSame) {
          kernels::axpy(sign, g, pbn->grad.data(), n);
        } else if (bc == Broadcast::kScalarB) {
          pbn->grad[0] += sign * kernels::sum(g, n);
        } else if (bc == Broadcast::kScalarA) {
          kernels::axpy(sign, g, pbn->grad.data(), n);
        } else {
          std::size_t nb = pbn->grad.size();
          for (std::size_t off = 0; off < n; off += nb)
            kernels::axpy(sign, g + off, pbn->grad.data(), nb);
        }
      }
    };
  }
  check_finite(*out);
  return Tensor<T>(out);
}

}  // namespace detail

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::add_like(a, b, T(1), "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::add_like(a, b, T(-1), "sub");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  using detail::Broadcast;
  Broadcast bc = detail::resolve_broadcast(a.shape(), b.shape(), "mul");
  const Shape& out_shape = (bc == Broadcast::kScalarA) ? b.shape() : a.shape();
  auto out = detail::make_op_node_v<T>("mul", out_shape, {a, b});
  const std::size_t n = out->data.size();
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out->data.data();
  switch (bc) {
    case Broadcast::kSame:
      kernels::mul(pa, pb, po, n);
      break;
    case Broadcast::kScalarB:
      kernels::scale(pa, pb[0], po, n);
      break;
    case Broadcast::kScalarA:
      kernels::scale(pb, pa[0], po, n);
      break;
    case Broadcast::kTrailingB: {
      std::size_t nb = static_cast<std::size_t>(shape_numel(b.shape()));
      for (std::size_t off = 0; off < n; off += nb) kernels::mul(pa + off, pb, po + off, nb);
      break;
    }
  }
  if (out->requires_grad) {
    auto pan = a.node();
    auto pbn = b.node();
    out->backward_fn = [pan, pbn, bc](detail::Node<T>& o) {
      const T* g = o.grad.data();
      const std::size_t n = o.grad.size();
      const T* da = pan->data.data();
      const T* db = pbn->data.data();
      if (pan->requires_grad) {
        pan->ensure_grad();
        T* ga = pan->grad.data();
        switch (bc) {
          case Broadcast::kSame:
            for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * db[i];
            break;
          case Broadcast::kScalarB:
            kernels::axpy(db[0], g, ga, n);
            break;
          case Broadcast::kScalarA: {
            T acc = kernels::dot(g, db, n);
            ga[0] += acc;
            break;
          }
          case Broadcast::kTrailingB: {
            std::size_t nb = pbn->data.size();
            for (std::size_t off = 0; off < n; off += nb)
              for (std::size_t i = 0; i < nb; ++i) ga[off + i] += g[off + i] * db[i];
            break;
          }
        }
      }
      if (pbn->requires_grad) {
        pbn->ensure_grad();
        T* gb = pbn->grad.data();
        switch (bc) {
          case Broadcast::kSame:
            for (std::size_t i = 0; i < n; ++i) gb[i] += g[i] * da[i];
            break;
          case Broadcast::kScalarB: {
            T acc = kernels::dot(g, da, n);
            gb[0] += acc;
            break;
          }
          case Broadcast::kScalarA:
            kernels::axpy(da[0], g, gb, n);
            break;
          case Broadcast::kTrailingB: {
            std::size_t nb = pbn->data.size();
            for (std::size_t off = 0; off < n; off += nb)
              for (std::size_t i = 0; i < nb; ++i) gb[i] += g[off + i] * da[off + i];
            break;
          }
        }
      }
    };
  }
  detail::check_finite(*out);
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> scalar_mul(const Tensor<T>& a, T s) {
  auto out = detail::make_op_node_v<T>("scalar_mul", a.shape(), {a});
  kernels::scale(a.data(), s, out->data.data(), out->data.size());
  if (out->requires_grad) {
    auto pan = a.node();
    out->backward_fn = [pan, s](detail::Node<T>& o) {
      pan->ensure_grad();
      kernels::axpy(s, o.grad.data(), pan->grad.data(), o.grad.size());
    };
  }
  detail::check_finite(*out);
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return scalar_mul(a, T(-1));
}

// ---------------------------------------------------------------------------
// elementwise unary ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  auto out = detail::make_op_node_v<T>("abs", a.shape(), {a});
  kernels::abs_val(a.data(), out->data.data(), out->data.size());
  if (out->requires_grad) {
    auto pan = a.node();
    // Subgradient 0 at x == 0.
    out->backward_fn = [pan](detail::Node<T>& o) {
      pan->ensure_grad();
      const T* x = pan->data.data();
      const T* g = o.grad.data();
      T* gx = pan->grad.data();
      for (std::size_t i = 0; i < o.grad.size(); ++i) {
        if (x[i] > T(0)) gx[i] += g[i];
        else if (x[i] < T(0)) gx[i] -= g[i];
      }
    };
  }
  detail::check_finite(*out);
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  auto out = detail::make_op_node_v<T>("relu", a.shape(), {a});
  kernels::relu(a.data(), out->data.data(), out->data.size());
  if (out->requires_grad) {
    auto pan = a.node();
    out->backward_fn = [pan](detail::Node<T>& o) {
      pan->ensure_grad();
      kernels::relu_backward(pan->data.data(), o.grad.data(), pan->grad.data(),
                             o.grad.size());
    };
  }
  detail::check_finite(*out);
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  auto out = detail::make_op_node_v<T>("sigmoid", a.shape(), {a});
  const T* x = a.data();
  T* y = out->data.data();
  for (std::size_t i = 0; i < out->data.size(); ++i) {
    T v = x[i];
    if (v >= T(0)) {
      T e = std::exp(-v);
      y[i] = T(1) / (T(1) + e);
    } else {
      T e = std::exp(v);
      y[i] = e / (T(1) + e);
    }
  }
  if (out->requires_grad) {
    auto pan = a.node();
    out->backward_fn = [pan](detail::Node<T>& o) {
      pan->ensure_grad();
      const T* y = o.data.data();
      const T* g = o.grad.data();
      T* gx = pan->grad.data();
      for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += g[i] * y[i] * (T(1) - y[i]);
    };
  }
  detail::check_finite(*out);
  return Tensor<T>(out);
}

// tanh approximation of GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kA = 0.044715;
  auto out = detail::make_op_node_v<T>("gelu", a.shape(), {a});
  const T* x = a.data();
  T* y = out->data.data();
  for (std::size_t i = 0; i < out->data.size(); ++i) {
    double v = static_cast<double>(x[i]);
    double t = std::tanh(kC * (v + kA * v * v * v));
    y[i] = static_cast<T>(0.5 * v * (1.0 + t));
  }
  if (out->requires_grad) {
    auto pan = a.node();
    out->backward_fn = [pan](detail::Node<T>& o) {
      pan->ensure_grad();
      const T* x = pan->data.data();
      const T* g = o.grad.data();
      T* gx = pan->grad.data();
      for (std::size_t i = 0; i < o.grad.size(); ++i) {
        double v = static_cast<double>(x[i]);
        double u = kC * (v + kA * v * v * v);
        double t = std::tanh(u);
        double du = kC * (1.0 + 3.0 * kA * v * v);
        double d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du;
        gx[i] += g[i] * static_cast<T>(d);
      }
    };
  }
  detail::check_finite(*out);
  return Tensor<T>(out);
}

// Pass-through gradient strictly inside [lo, hi], zero outside.
template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  auto out = detail::make_op_node_v<T>("clamp", a.shape(), {a});
  const T* x = a.data();
  T* y = out->data.data();
  for (std::size_t i = 0; i < out->data.size(); ++i) y[i] = std::min(std::max(x[i], lo), hi);
  if (out->requires_grad) {
    auto pan = a.node();
    out->backward_fn = [pan, lo, hi](detail::Node<T>& o) {
      pan->ensure_grad();
      const T* x = pan->data.data();
      const T* g = o.grad.data();
      T* gx = pan->grad.data();
      for (std::size_t i = 0; i < o.grad.size(); ++i)
        if (x[i] >= lo && x[i] <= hi) gx[i] += g[i];
    };
  }
  detail::check_finite(*out);
  return Tensor<T>(out);
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  auto out = detail::make_op_node_v<T>("sum", Shape{1}, {a});
  out->data[0] = kernels::sum(a.data(), a.vec().size());
  if (out->requires_grad) {
    auto pan = a.node();
    out->backward_fn = [pan](detail::Node<T>& o) {
      pan->ensure_grad();
      T g = o.grad[0];
      T* gx = pan->grad.data();
      for (std::size_t i = 0; i < pan->grad.size(); ++i) gx[i] += g;
    };
  }
  detail::check_finite(*out);
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  auto out = detail::make_op_node_v<T>("mean", Shape{1}, {a});
  T inv = T(1) / static_cast<T>(a.numel());
  out->data[0] = kernels::sum(a.data(), a.vec().size()) * inv;
  if (out->requires_grad) {
    auto pan = a.node();
    out->backward_fn = [pan, inv](detail::Node<T>& o) {
      pan->ensure_grad();
      T g = o.grad[0] * inv;
      T* gx = pan->grad.data();
      for (std::size_t i = 0; i < pan->grad.size(); ++i) gx[i] += g;
    };
  }
  detail::check_finite(*out);
  return Tensor<T>(out);
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                         shape_str(shape));
  auto out = detail::make_op_node_v<T>("reshape", std::move(shape), {a});
  out->data = a.vec();
  if (out->requires_grad) {
    auto pan = a.node();
    out->backward_fn = [pan](detail::Node<T>& o) {
      pan->ensure_grad();
      kernels::axpy(T(1), o.grad.data(), pan->grad.data(), o.grad.size());
    };
  }
  return Tensor<T>(out);
}

namespace detail {

// dst (shape of src with axes a0/a1 swapped) <- src. When accumulate is true
// the roles invert: dst[src layout] += src[swapped layout] is handled by the
// caller passing swapped shapes; here we always walk dst in row-major order.
template <typename T, bool kAccumulate>
void swap_axes_copy(const T* src, const Shape& src_shape, int a0, int a1, T* dst) {
  const int rank = static_cast<int>(src_shape.size());
  std::vector<int64_t> sstr(rank, 1);
  for (int d = rank - 2; d >= 0; --d) sstr[d] = sstr[d + 1] * src_shape[d + 1];
  std::vector<int> perm(rank);
  for (int d = 0; d < rank; ++d) perm[d] = d;
  std::swap(perm[a0], perm[a1]);
  Shape dshape(rank);
  std::vector<int64_t> dstr(rank);
  for (int d = 0; d < rank; ++d) {
    dshape[d] = src_shape[perm[d]];
    dstr[d] = sstr[perm[d]];
  }
  int64_t n = shape_numel(src_shape);
  std::vector<int64_t> idx(rank, 0);
  int64_t off = 0;
  for (int64_t i = 0; i < n; ++i) {
    if constexpr (kAccumulate) dst[off] += src[i];
    else dst[i] = src[off];
    for (int d = rank - 1; d >= 0; --d) {
      if (++idx[d] < dshape[d]) {
        off += dstr[d];
        break;
      }
      off -= dstr[d] * (dshape[d] - 1);
      idx[d] = 0;
    }
  }
}

}  // namespace detail

template <typename T>
Tensor<T> transpose(const Tensor<T>& a, int axis0, int axis1) {
  const int rank = a.rank();
  if (axis0 < 0 || axis1 < 0 || axis0 >= rank || axis1 >= rank)
    throw DimensionError("transpose: axis out of range for " + shape_str(a.shape()));
  Shape out_shape = a.shape();
  std::swap(out_shape[axis0], out_shape[axis1]);
  auto out = detail::make_op_node_v<T>("transpose", std::move(out_shape), {a});
  detail::swap_axes_copy<T, false>(a.data(), a.shape(), axis0, axis1, out->data.data());
  if (out->requires_grad) {
    auto pan = a.node();
    out->backward_fn = [pan, axis0, axis1](detail::Node<T>& o) {
      pan->ensure_grad();
      // Walking the output grad through the same swap accumulates into src.
      detail::swap_axes_copy<T, true>(o.grad.data(), pan->shape, axis0, axis1,
                                      pan->grad.data());
    };
  }
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const int rank = parts[0].rank();
  if (axis < 0 || axis >= rank) throw DimensionError("concat: bad axis");
  Shape out_shape = parts[0].shape();
  int64_t axis_total = 0;
  for (const auto& p : parts) {
    if (p.rank() != rank) throw DimensionError("concat: rank mismatch");
    for (int d = 0; d < rank; ++d)
      if (d != axis && p.shape()[d] != out_shape[d])
        throw DimensionError("concat: shape mismatch " + shape_str(p.shape()) + " vs " +
                             shape_str(out_shape) + " on non-concat axis");
    axis_total += p.shape()[axis];
  }
  out_shape[axis] = axis_total;

  auto out = detail::make_op_node_v<T>("concat", out_shape, parts);
  int64_t outer = 1;
  for (int d = 0; d < axis; ++d) outer *= out_shape[d];
  int64_t inner = 1;
  for (int d = axis + 1; d < rank; ++d) inner *= out_shape[d];

  std::vector<int64_t> widths;
  for (const auto& p : parts) widths.push_back(p.shape()[axis] * inner);
  const int64_t out_width = axis_total * inner;

  for (int64_t o = 0; o < outer; ++o) {
    int64_t dst_off = o * out_width;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
      const T* src = parts[pi].data() + o * widths[pi];
      std::copy(src, src + widths[pi], out->data.data() + dst_off);
      dst_off += widths[pi];
    }
  }
  if (out->requires_grad) {
    std::vector<typename Tensor<T>::NodePtr> pnodes;
    for (const auto& p : parts) pnodes.push_back(p.node());
    out->backward_fn = [pnodes, widths, outer, out_width](detail::Node<T>& o) {
      const T* g = o.grad.data();
      for (int64_t ou = 0; ou < outer; ++ou) {
        int64_t src_off = ou * out_width;
        for (std::size_t pi = 0; pi < pnodes.size(); ++pi) {
          if (pnodes[pi]->requires_grad) {
            pnodes[pi]->ensure_grad();
            kernels::axpy(T(1), g + src_off, pnodes[pi]->grad.data() + ou * widths[pi],
                          static_cast<std::size_t>(widths[pi]));
          }
          src_off += widths[pi];
        }
      }
    };
  }
  return Tensor<T>(out);
}

// ---------------------------------------------------------------------------
// matrix products
// ---------------------------------------------------------------------------

// a: [
//   [M,K] or [B..,M,K] ], b: [K,N] (shared) or [B..,K,N] (matching batch).
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() < 2) throw DimensionError("matmul: inputs must have rank >= 2");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  const int64_t M = sa[sa.size() - 2];
  const int64_t K = sa[sa.size() - 1];
  const int64_t Kb = sb[sb.size() - 2];
  const int64_t N = sb[sb.size() - 1];
  if (K != Kb)
    throw DimensionError("matmul: inner dims disagree " + shape_str(sa) + " x " +
                         shape_str(sb));
  bool b_shared = (b.rank() == 2 && a.rank() > 2);
  if (!b_shared && a.rank() != b.rank())
    throw DimensionError("matmul: rank mismatch " + shape_str(sa) + " x " + shape_str(sb));
  int64_t batch = 1;
  Shape out_shape;
  for (std::size_t d = 0; d + 2 < sa.size(); ++d) {
    if (!b_shared && sa[d] != sb[d])
      throw DimensionError("matmul: batch dims disagree " + shape_str(sa) + " x " +
                           shape_str(sb));
    batch *= sa[d];
    out_shape.push_back(sa[d]);
  }
  out_shape.push_back(M);
  out_shape.push_back(N);

  auto out = detail::make_op_node_v<T>("matmul", out_shape, {a, b});
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out->data.data();
  for (int64_t bi = 0; bi < batch; ++bi)
    kernels::gemm_nn(M, N, K, pa + bi * M * K, K, pb + (b_shared ? 0 : bi * K * N), N,
                     po + bi * M * N, N, false);

  if (out->requires_grad) {
    auto pan = a.node();
    auto pbn = b.node();
    out->backward_fn = [pan, pbn, M, N, K, batch, b_shared](detail::Node<T>& o) {
      const T* g = o.grad.data();
      if (pan->requires_grad) {
        pan->ensure_grad();
        for (int64_t bi = 0; bi < batch; ++bi)
          kernels::gemm_nt(M, K, N, g + bi * M * N, N,
                           pbn->data.data() + (b_shared ? 0 : bi * K * N), N,
                           pan->grad.data() + bi * M * K, K, true);
      }
      if (pbn->requires_grad) {
        pbn->ensure_grad();
        for (int64_t bi = 0; bi < batch; ++bi)
          kernels::gemm_tn(K, N, M, pan->data.data() + bi * M * K, K, g + bi * M * N, N,
                           pbn->grad.data() + (b_shared ? 0 : bi * K * N), N, true);
      }
    };
  }
  detail::check_finite(*out);
  return Tensor<T>(out);
}

// x: [.., Din] -> [.., Dout]; w: [Din, Dout]; optional bias b: [Dout].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (w.rank() != 2) throw DimensionError("linear: weight must be [Din, Dout]");
  const int64_t din = w.dim(0);
  const int64_t dout = w.dim(1);
  if (x.shape().back() != din)
    throw DimensionError("linear: input " + shape_str(x.shape()) + " vs weight " +
                         shape_str(w.shape()));
  bool has_bias = b.defined();
  if (has_bias && (b.rank() != 1 || b.dim(0) != dout))
    throw DimensionError("linear: bias must be [Dout]");
  Shape out_shape = x.shape();
  out_shape.back() = dout;
  const int64_t rows = x.numel() / din;

  std::vector<Tensor<T>> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  auto out = detail::make_op_node_v<T>("linear", out_shape, inputs);
  kernels::gemm_nn(rows, dout, din, x.data(), din, w.data(), dout, out->data.data(), dout,
                   false);
  if (has_bias) {
    T* po = out->data.data();
    for (int64_t r = 0; r < rows; ++r)
      kernels::add(po + r * dout, b.data(), po + r * dout, static_cast<std::size_t>(dout));
  }

  if (out->requires_grad) {
    auto pxn = x.node();
    auto pwn = w.node();
    auto pbn = has_bias ? b.node() : nullptr;
    out->backward_fn = [pxn, pwn, pbn, rows, din, dout](detail::Node<T>& o) {
      const T* g = o.grad.data();
      if (pxn->requires_grad) {
        pxn->ensure_grad();
        kernels::gemm_nt(rows, din, dout, g, dout, pwn->data.data(), dout,
                         pxn->grad.data(), din, true);
      }
      if (pwn->requires_grad) {
        pwn->ensure_grad();
        kernels::gemm_tn(din, dout, rows, pxn->data.data(), din, g, dout,
                         pwn->grad.data(), dout, true);
      }
      if (pbn && pbn->requires_grad) {
        pbn->ensure_grad();
        for (int64_t r = 0; r < rows; ++r)
          kernels::axpy(T(1), g + r * dout, pbn->grad.data(), static_cast<std::size_t>(dout));
      }
    };
  }
  detail::check_finite(*out);
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w) {
  return linear(x, w, Tensor<T>());
}

// ---------------------------------------------------------------------------
// convolution
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
void im2col(const T* x, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw,
            int64_t stride, int64_t pad, int64_t Ho, int64_t Wo, T* col) {
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t ky = 0; ky < kh; ++ky) {
      for (int64_t kx = 0; kx < kw; ++kx) {
        T* dst = col + ((c * kh + ky) * kw + kx) * Ho * Wo;
        for (int64_t oy = 0; oy < Ho; ++oy) {
          int64_t iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) {
            std::fill(dst + oy * Wo, dst + (oy + 1) * Wo, T(0));
            continue;
          }
          const T* src_row = x + (c * H + iy) * W;
          for (int64_t ox = 0; ox < Wo; ++ox) {
            int64_t ix = ox * stride - pad + kx;
            dst[oy * Wo + ox] = (ix >= 0 && ix < W) ? src_row[ix] : T(0);
          }
        }
      }
    }
  }
}

// Transpose of im2col: scatter-add columns back onto the image grid.
template <typename T>
void col2im(const T* col, int64_t C, int64_t H, int64_t W, int64_t kh, int64_t kw,
            int64_t stride, int64_t pad, int64_t Ho, int64_t Wo, T* x) {
  for (int64_t c = 0; c < C; ++c) {
    for (int64_t ky = 0; ky < kh; ++ky) {
      for (int64_t kx = 0; kx < kw; ++kx) {
        const T* src = col + ((c * kh + ky) * kw + kx) * Ho * Wo;
        for (int64_t oy = 0; oy < Ho; ++oy) {
          int64_t iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          T* dst_row = x + (c * H + iy) * W;
          for (int64_t ox = 0; ox < Wo; ++ox) {
            int64_t ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < W) dst_row[ix] += src[oy * Wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// x: [N,C,H,W], w: [O,C,kh,kw], optional b: [O].
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int stride,
                 int pad) {
  if (x.rank() != 4 || w.rank() != 4) throw DimensionError("conv2d: expects 4-d input and weight");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != C)
    throw DimensionError("conv2d: input channels " + std::to_string(C) +
                         " != weight channels " + std::to_string(w.dim(1)));
  if (stride < 1 || kh < 1 || kw < 1 || H + 2 * pad < kh || W + 2 * pad < kw)
    throw ContractError("conv2d: kernel does not fit padded input");
  bool has_bias = b.defined();
  if (has_bias && (b.rank() != 1 || b.dim(0) != O)) throw DimensionError("conv2d: bias must be [O]");

  const int64_t Ho = (H + 2 * pad - kh) / stride + 1;
  const int64_t Wo = (W + 2 * pad - kw) / stride + 1;
  const int64_t ckk = C * kh * kw;
  const int64_t owo = Ho * Wo;

  std::vector<Tensor<T>> inputs{x, w};
  if (has_bias) inputs.push_back(b);
  auto out = detail::make_op_node_v<T>("conv2d", Shape{N, O, Ho, Wo}, inputs);

  // im2col + gemm; columns are kept for the weight gradient.
  std::vector<T> cols(static_cast<std::size_t>(N * ckk * owo));
  for (int64_t n = 0; n < N; ++n) {
    T* col = cols.data() + n * ckk * owo;
    detail::im2col(x.data() + n * C * H * W, C, H, W, kh, kw, stride, pad, Ho, Wo, col);
    kernels::gemm_nn(O, owo, ckk, w.data(), ckk, col, owo, out->data.data() + n * O * owo,
                     owo, false);
    if (has_bias) {
      T* po = out->data.data() + n * O * owo;
      for (int64_t o = 0; o < O; ++o) {
        T bv = b.data()[o];
        for (int64_t i = 0; i < owo; ++i) po[o * owo + i] += bv;
      }
    }
  }

  if (out->requires_grad) {
    auto pxn = x.node();
    auto pwn = w.node();
    auto pbn = has_bias ? b.node() : nullptr;
    auto saved_cols = std::make_shared<std::vector<T>>(std::move(cols));
    int64_t stride64 = stride, pad64 = pad;
    out->backward_fn = [pxn, pwn, pbn, saved_cols, N, C, H, W, O, kh, kw, stride64, pad64,
                        Ho, Wo, ckk, owo](detail::Node<T>& o) {
      const T* g = o.grad.data();
      if (pwn->requires_grad) pwn->ensure_grad();
      if (pxn->requires_grad) pxn->ensure_grad();
      if (pbn && pbn->requires_grad) pbn->ensure_grad();
      std::vector<T> dcol(static_cast<std::size_t>(ckk * owo));
      for (int64_t n = 0; n < N; ++n) {
        const T* gn = g + n * O * owo;
        if (pwn->requires_grad)
          kernels::gemm_nt(O, ckk, owo, gn, owo, saved_cols->data() + n * ckk * owo, owo,
                           pwn->grad.data(), ckk, true);
        if (pxn->requires_grad) {
          kernels::gemm_tn(ckk, owo, O, pwn->data.data(), ckk, gn, owo, dcol.data(), owo,
                           false);
          detail::col2im(dcol.data(), C, H, W, kh, kw, stride64, pad64, Ho, Wo,
                         pxn->grad.data() + n * C * H * W);
        }
        if (pbn && pbn->requires_grad) {
          for (int64_t o2 = 0; o2 < O; ++o2)
            pbn->grad[o2] += kernels::sum(gn + o2 * owo, static_cast<std::size_t>(owo));
        }
      }
    };
  }
  detail::check_finite(*out);
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, int stride, int pad) {
  return conv2d(x, w, Tensor<T>(), stride, pad);
}

// Transposed convolution for the decoder's exact upsampling step:
// x: [N,C,H,W], w: [C,O,4,4], stride 2, pad 1 -> [N,O,2H,2W].
template <typename T>
Tensor<T> deconv2d(const Tensor<T>& x, const Tensor<T>& w, int stride = 2, int pad = 1) {
  if (x.rank() != 4 || w.rank() != 4) throw DimensionError("deconv2d: expects 4-d input and weight");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t O = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(0) != C)
    throw DimensionError("deconv2d: input channels " + std::to_string(C) +
                         " != weight channels " + std::to_string(w.dim(0)));
  if (stride != 2 || pad != 1 || kh != 4 || kw != 4)
    throw ContractError("deconv2d: only the 4x4/stride-2/pad-1 doubling configuration is supported");

  const int64_t Ho = 2 * H, Wo = 2 * W;
  const int64_t okk = O * kh * kw;
  const int64_t hw = H * W;

  auto out = detail::make_op_node_v<T>("deconv2d", Shape{N, O, Ho, Wo}, {x, w});
  std::vector<T> cols(static_cast<std::size_t>(okk * hw));
  for (int64_t n = 0; n < N; ++n) {
    // cols = w^T * x_n, then scatter onto the doubled grid.
    kernels::gemm_tn(okk, hw, C, w.data(), okk, x.data() + n * C * hw, hw, cols.data(), hw,
                     false);
    detail::col2im(cols.data(), O, Ho, Wo, kh, kw, stride, pad, H, W,
                   out->data.data() + n * O * Ho * Wo);
  }

  if (out->requires_grad) {
    auto pxn = x.node();
    auto pwn = w.node();
    int64_t stride64 = stride, pad64 = pad;
    out->backward_fn = [pxn, pwn, N, C, H, W, O, kh, kw, stride64, pad64, Ho, Wo, okk,
                        hw](detail::Node<T>& o) {
      const T* g = o.grad.data();
      if (pxn->requires_grad) pxn->ensure_grad();
      if (pwn->requires_grad) pwn->ensure_grad();
      std::vector<T> gcol(static_cast<std::size_t>(okk * hw));
      for (int64_t n = 0; n < N; ++n) {
        detail::im2col(g + n * O * Ho * Wo, O, Ho, Wo, kh, kw, stride64, pad64, H, W,
                       gcol.data());
        if (pxn->requires_grad)
          kernels::gemm_nn(C, hw, okk, pwn->data.data(), okk, gcol.data(), hw,
                           pxn->grad.data() + n * C * hw, hw, true);
        if (pwn->requires_grad)
          kernels::gemm_nt(C, okk, hw, pxn->data.data() + n * C * hw, hw, gcol.data(), hw,
                           pwn->grad.data(), okk, true);
      }
    };
  }
  detail::check_finite(*out);
  return Tensor<T>(out);
}

// ---------------------------------------------------------------------------
// normalization & softmax
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps) {
  if (eps <= T(0)) throw ContractError("layer_norm: eps must be positive");
  const int64_t D = x.shape().back();
  if (gamma.rank() != 1 || gamma.dim(0) != D || beta.rank() != 1 || beta.dim(0) != D)
    throw DimensionError("layer_norm: gamma/beta must be [D] with D = " + std::to_string(D));
  const int64_t rows = x.numel() / D;

  auto out = detail::make_op_node_v<T>("layer_norm", x.shape(), {x, gamma, beta});
  std::vector<T> xhat(static_cast<std::size_t>(x.numel()));
  std::vector<T> rstd(static_cast<std::size_t>(rows));
  const T* px = x.data();
  const T* pg = gamma.data();
  const T* pb = beta.data();
  T* py = out->data.data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = px + r * D;
    double mu = 0;
    for (int64_t d = 0; d < D; ++d) mu += xr[d];
    mu /= static_cast<double>(D);
    double var = 0;
    for (int64_t d = 0; d < D; ++d) {
      double c = xr[d] - mu;
      var += c * c;
    }
    var /= static_cast<double>(D);  // population variance
    T rs = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
    rstd[static_cast<std::size_t>(r)] = rs;
    T* xh = xhat.data() + r * D;
    T* yr = py + r * D;
    for (int64_t d = 0; d < D; ++d) {
      xh[d] = static_cast<T>((xr[d] - mu)) * rs;
      yr[d] = xh[d] * pg[d] + pb[d];
    }
  }

  if (out->requires_grad) {
    auto pxn = x.node();
    auto pgn = gamma.node();
    auto pbn = beta.node();
    auto sx = std::make_shared<std::vector<T>>(std::move(xhat));
    auto sr = std::make_shared<std::vector<T>>(std::move(rstd));
    out->backward_fn = [pxn, pgn, pbn, sx, sr, rows, D](detail::Node<T>& o) {
      const T* g = o.grad.data();
      const T* xh = sx->data();
      const T* pg = pgn->data.data();
      if (pxn->requires_grad) pxn->ensure_grad();
      if (pgn->requires_grad) pgn->ensure_grad();
      if (pbn->requires_grad) pbn->ensure_grad();
      for (int64_t r = 0; r < rows; ++r) {
        const T* gr = g + r * D;
        const T* xr = xh + r * D;
        if (pgn->requires_grad || pbn->requires_grad) {
          for (int64_t d = 0; d < D; ++d) {
            if (pgn->requires_grad) pgn->grad[d] += gr[d] * xr[d];
            if (pbn->requires_grad) pbn->grad[d] += gr[d];
          }
        }
        if (pxn->requires_grad) {
          double m1 = 0, m2 = 0;
          for (int64_t d = 0; d < D; ++d) {
            double dyg = static_cast<double>(gr[d]) * pg[d];
            m1 += dyg;
            m2 += dyg * xr[d];
          }
          m1 /= static_cast<double>(D);
          m2 /= static_cast<double>(D);
          T rs = (*sr)[static_cast<std::size_t>(r)];
          T* gx = pxn->grad.data() + r * D;
          for (int64_t d = 0; d < D; ++d) {
            double dyg = static_cast<double>(gr[d]) * pg[d];
            gx[d] += static_cast<T>(rs * (dyg - m1 - xr[d] * m2));
          }
        }
      }
    };
  }
  detail::check_finite(*out);
  return Tensor<T>(out);
}

// Softmax over the last axis, max-subtracted for stability.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  const int64_t K = x.shape().back();
  const int64_t rows = x.numel() / K;
  auto out = detail::make_op_node_v<T>("softmax", x.shape(), {x});
  const T* px = x.data();
  T* py = out->data.data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = px + r * K;
    T* yr = py + r * K;
    T m = xr[0];
    for (int64_t i = 1; i < K; ++i) m = std::max(m, xr[i]);
    double s = 0;
    for (int64_t i = 0; i < K; ++i) {
      double e = std::exp(static_cast<double>(xr[i] - m));
      yr[i] = static_cast<T>(e);
      s += e;
    }
    T inv = static_cast<T>(1.0 / s);
    for (int64_t i = 0; i < K; ++i) yr[i] *= inv;
  }
  if (out->requires_grad) {
    auto pxn = x.node();
    out->backward_fn = [pxn, rows, K](detail::Node<T>& o) {
      pxn->ensure_grad();
      const T* g = o.grad.data();
      const T* y = o.data.data();
      T* gx = pxn->grad.data();
      for (int64_t r = 0; r < rows; ++r) {
        const T* gr = g + r * K;
        const T* yr = y + r * K;
        double s = 0;
        for (int64_t i = 0; i < K; ++i) s += static_cast<double>(gr[i]) * yr[i];
        T* gxr = gx + r * K;
        for (int64_t i = 0; i < K; ++i)
          gxr[i] += yr[i] * (gr[i] - static_cast<T>(s));
      }
    };
  }
  detail::check_finite(*out);
  return Tensor<T>(out);
}

// ---------------------------------------------------------------------------
// resampling
// ---------------------------------------------------------------------------

namespace detail {

struct LerpAxis {
  std::vector<int64_t> i0, i1;
  std::vector<float> w1;  // weight of i1; weight of i0 is 1 - w1
};

inline LerpAxis bilinear2x_axis(int64_t in) {
  LerpAxis ax;
  ax.i0.resize(static_cast<std::size_t>(2 * in));
  ax.i1.resize(static_cast<std::size_t>(2 * in));
  ax.w1.resize(static_cast<std::size_t>(2 * in));
  for (int64_t o = 0; o < 2 * in; ++o) {
    double s = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
    if (s < 0) s = 0;
    if (s > static_cast<double>(in - 1)) s = static_cast<double>(in - 1);
    int64_t lo = static_cast<int64_t>(s);
    int64_t hi = std::min(lo + 1, in - 1);
    ax.i0[static_cast<std::size_t>(o)] = lo;
    ax.i1[static_cast<std::size_t>(o)] = hi;
    ax.w1[static_cast<std::size_t>(o)] = static_cast<float>(s - static_cast<double>(lo));
  }
  return ax;
}

}  // namespace detail

template <typename T>
Tensor<T> upsample_bilinear2x(const Tensor<T>& x) {
  if (x.rank() != 4) throw DimensionError("upsample_bilinear2x: expects [N,C,H,W]");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  auto out = detail::make_op_node_v<T>("upsample_bilinear2x", Shape{N, C, 2 * H, 2 * W}, {x});
  detail::LerpAxis ay = detail::bilinear2x_axis(H);
  detail::LerpAxis axx = detail::bilinear2x_axis(W);
  const T* px = x.data();
  T* py = out->data.data();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const T* src = px + nc * H * W;
    T* dst = py + nc * 4 * H * W;
    for (int64_t oy = 0; oy < 2 * H; ++oy) {
      const T* r0 = src + ay.i0[oy] * W;
      const T* r1 = src + ay.i1[oy] * W;
      T wy1 = static_cast<T>(ay.w1[oy]);
      T wy0 = T(1) - wy1;
      T* drow = dst + oy * 2 * W;
      for (int64_t ox = 0; ox < 2 * W; ++ox) {
        T wx1 = static_cast<T>(axx.w1[ox]);
        T wx0 = T(1) - wx1;
        drow[ox] = wy0 * (wx0 * r0[axx.i0[ox]] + wx1 * r0[axx.i1[ox]]) +
                   wy1 * (wx0 * r1[axx.i0[ox]] + wx1 * r1[axx.i1[ox]]);
      }
    }
  }
  if (out->requires_grad) {
    auto pxn = x.node();
    out->backward_fn = [pxn, N, C, H, W](detail::Node<T>& o) {
      pxn->ensure_grad();
      detail::LerpAxis ay = detail::bilinear2x_axis(H);
      detail::LerpAxis axx = detail::bilinear2x_axis(W);
      const T* g = o.grad.data();
      for (int64_t nc = 0; nc < N * C; ++nc) {
        T* dx = pxn->grad.data() + nc * H * W;
        const T* grow = g + nc * 4 * H * W;
        for (int64_t oy = 0; oy < 2 * H; ++oy) {
          T wy1 = static_cast<T>(ay.w1[oy]);
          T wy0 = T(1) - wy1;
          for (int64_t ox = 0; ox < 2 * W; ++ox) {
            T gv = grow[oy * 2 * W + ox];
            T wx1 = static_cast<T>(axx.w1[ox]);
            T wx0 = T(1) - wx1;
            dx[ay.i0[oy] * W + axx.i0[ox]] += wy0 * wx0 * gv;
            dx[ay.i0[oy] * W + axx.i1[ox]] += wy0 * wx1 * gv;
            dx[ay.i1[oy] * W + axx.i0[ox]] += wy1 * wx0 * gv;
            dx[ay.i1[oy] * W + axx.i1[ox]] += wy1 * wx1 * gv;
          }
        }
      }
    };
  }
  detail::check_finite(*out);
  return Tensor<T>(out);
}

// Average pool with an integer factor; used to bring detail-resolution tokens
// back onto the ViT grid.
template <typename T>
Tensor<T> avgpool2d(const Tensor<T>& x, int factor) {
  if (x.rank() != 4) throw DimensionError("avgpool2d: expects [N,C,H,W]");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t f = factor;
  if (f < 1 || H % f != 0 || W % f != 0)
    throw DimensionError("avgpool2d: spatial dims " + shape_str(x.shape()) +
                         " not divisible by factor " + std::to_string(factor));
  const int64_t Ho = H / f, Wo = W / f;
  auto out = detail::make_op_node_v<T>("avgpool2d", Shape{N, C, Ho, Wo}, {x});
  const T inv = T(1) / static_cast<T>(f * f);
  const T* px = x.data();
  T* py = out->data.data();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const T* src = px + nc * H * W;
    T* dst = py + nc * Ho * Wo;
    for (int64_t oy = 0; oy < Ho; ++oy)
      for (int64_t ox = 0; ox < Wo; ++ox) {
        double acc = 0;
        for (int64_t dy = 0; dy < f; ++dy)
          for (int64_t dx = 0; dx < f; ++dx) acc += src[(oy * f + dy) * W + ox * f + dx];
        dst[oy * Wo + ox] = static_cast<T>(acc) * inv;
      }
  }
  if (out->requires_grad) {
    auto pxn = x.node();
    out->backward_fn = [pxn, N, C, H, W, Ho, Wo, f, inv](detail::Node<T>& o) {
      pxn->ensure_grad();
      const T* g = o.grad.data();
      for (int64_t nc = 0; nc < N * C; ++nc) {
        T* dx = pxn->grad.data() + nc * H * W;
        const T* gsrc = g + nc * Ho * Wo;
        for (int64_t oy = 0; oy < Ho; ++oy)
          for (int64_t ox = 0; ox < Wo; ++ox) {
            T gv = gsrc[oy * Wo + ox] * inv;
            for (int64_t dy = 0; dy < f; ++dy)
              for (int64_t dx2 = 0; dx2 < f; ++dx2)
                dx[(oy * f + dy) * W + ox * f + dx2] += gv;
          }
      }
    };
  }
  detail::check_finite(*out);
  return Tensor<T>(out);
}

// ---------------------------------------------------------------------------
// initialization helpers
// ---------------------------------------------------------------------------

template <typename T>
void fill_trunc_normal(Tensor<T>& t, Rng& rng, double stddev) {
  for (auto& v : t.vec()) v = static_cast<T>(rng.trunc_normal(stddev));
}

template <typename T>
void fill_uniform(Tensor<T>& t, Rng& rng, double lo, double hi) {
  for (auto& v : t.vec()) v = static_cast<T>(rng.uniform(lo, hi));
}

}  // namespace cvit
