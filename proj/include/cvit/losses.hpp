#pragma once

#include <cmath>

#include "cvit/ops.hpp"

namespace cvit {

// Training losses. BCE uses log base 2, exactly as the loss is defined here;
// probabilities are clamped to [1e-7, 1-1e-7] before the logs. Dice carries
// the 1e-5 smoothing term in numerator and denominator. Both are fused nodes
// with analytic gradients (finite-difference checked in the test suite).

inline constexpr double kProbClamp = 1e-7;
inline constexpr double kDiceEps = 1e-5;

template <typename T>
Tensor<T> bce_loss(const Tensor<T>& p, const Tensor<T>& y) {
  if (p.shape() != y.shape())
    throw DimensionError("bce_loss: shapes disagree " + shape_str(p.shape()) + " vs " +
                         shape_str(y.shape()));
  const std::size_t n = p.vec().size();
  const double lo = kProbClamp, hi = 1.0 - kProbClamp;
  const double inv_n = 1.0 / static_cast<double>(n);
  const double inv_ln2 = 1.4426950408889634074;  // 1/ln(2)

  auto out = detail::make_op_node_v<T>("bce_loss", Shape{1}, {p, y});
  const T* pp = p.data();
  const T* py = y.data();
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double pc = std::min(std::max(static_cast<double>(pp[i]), lo), hi);
    double yv = static_cast<double>(py[i]);
    acc += yv * std::log2(pc) + (1.0 - yv) * std::log2(1.0 - pc);
  }
  out->data[0] = static_cast<T>(-acc * inv_n);

  if (out->requires_grad) {
    auto ppn = p.node();
    auto pyn = y.node();
    out->backward_fn = [ppn, pyn, n, lo, hi, inv_n, inv_ln2](detail::Node<T>& o) {
      const double g = static_cast<double>(o.grad[0]);
      const T* pp = ppn->data.data();
      const T* py = pyn->data.data();
      if (ppn->requires_grad) {
        ppn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          double pv = static_cast<double>(pp[i]);
          if (pv < lo || pv > hi) continue;  // clamp region: zero gradient
          double yv = static_cast<double>(py[i]);
          double d = -(yv / pv - (1.0 - yv) / (1.0 - pv)) * inv_ln2 * inv_n;
          ppn->grad[i] += static_cast<T>(g * d);
        }
      }
      if (pyn->requires_grad) {
        pyn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          double pc = std::min(std::max(static_cast<double>(pp[i]), lo), hi);
          double d = -(std::log2(pc) - std::log2(1.0 - pc)) * inv_n;
          pyn->grad[i] += static_cast<T>(g * d);
        }
      }
    };
  }
  detail::check_finite(*out);
  return Tensor<T>(out);
}

template <typename T>
Tensor<T> dice_loss(const Tensor<T>& p, const Tensor<T>& y) {
  if (p.shape() != y.shape())
    throw DimensionError("dice_loss: shapes disagree " + shape_str(p.shape()) + " vs " +
                         shape_str(y.shape()));
  const std::size_t n = p.vec().size();
  const double eps = kDiceEps;

  auto out = detail::make_op_node_v<T>("dice_loss", Shape{1}, {p, y});
  const T* pp = p.data();
  const T* py = y.data();
  double s1 = 0, s2 = 0, s3 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double pv = pp[i], yv = py[i];
    s1 += pv * yv;
    s2 += pv * pv;
    s3 += yv * yv;
  }
  const double den = s2 + s3 + eps;
  const double num = 2.0 * s1 + eps;
  out->data[0] = static_cast<T>(1.0 - num / den);

  if (out->requires_grad) {
    auto ppn = p.node();
    auto pyn = y.node();
    out->backward_fn = [ppn, pyn, n, num, den](detail::Node<T>& o) {
      const double g = static_cast<double>(o.grad[0]);
      const T* pp = ppn->data.data();
      const T* py = pyn->data.data();
      const double inv_den = 1.0 / den;
      const double inv_den2 = inv_den * inv_den;
      if (ppn->requires_grad) {
        ppn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          double d = -(2.0 * py[i] * den - num * 2.0 * pp[i]) * inv_den2;
          ppn->grad[i] += static_cast<T>(g * d);
        }
      }
      if (pyn->requires_grad) {
        pyn->ensure_grad();
        for (std::size_t i = 0; i < n; ++i) {
          double d = -(2.0 * pp[i] * den - num * 2.0 * py[i]) * inv_den2;
          pyn->grad[i] += static_cast<T>(g * d);
        }
      }
    };
  }
  detail::check_finite(*out);
  return Tensor<T>(out);
}

// Unweighted sum of the two components.
template <typename T>
Tensor<T> total_loss(const Tensor<T>& p, const Tensor<T>& y) {
  return add(bce_loss(p, y), dice_loss(p, y));
}

}  // namespace cvit
