#pragma once

#include <cmath>
#include <string>

#include "cvit/ops.hpp"

namespace cvit {

// Composite neural blocks: multi-head self/cross attention, feed-forward,
// residual convolution blocks, and the per-channel batch-style normalization
// the conv branches use (pure per-batch statistics, no running averages).

inline constexpr double kLayerNormEps = 1e-6;
inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kInitStd = 0.02;

template <typename T>
struct LayerNormParams {
  Tensor<T> gamma, beta;

  static LayerNormParams make(int64_t d) {
    LayerNormParams p;
    p.gamma = Tensor<T>::ones({d});
    p.beta = Tensor<T>::zeros({d});
    p.gamma.set_requires_grad(true);
    p.beta.set_requires_grad(true);
    return p;
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".gamma", gamma);
    f(prefix + ".beta", beta);
  }
};

template <typename T>
Tensor<T> apply_layer_norm(const Tensor<T>& x, const LayerNormParams<T>& p) {
  return layer_norm(x, p.gamma, p.beta, static_cast<T>(kLayerNormEps));
}

// ---------------------------------------------------------------------------
// attention
// ---------------------------------------------------------------------------

template <typename T>
struct AttentionParams {
  Tensor<T> wq, wk, wv, wo;  // each [D, D]
  int heads = 1;

  static AttentionParams make(int64_t d, int heads, Rng& rng) {
    if (heads < 1 || d % heads != 0)
      throw ConfigError("attention: dim " + std::to_string(d) +
                        " not divisible by heads " + std::to_string(heads));
    AttentionParams p;
    p.heads = heads;
    for (Tensor<T>* w : {&p.wq, &p.wk, &p.wv, &p.wo}) {
      *w = Tensor<T>({d, d});
      fill_trunc_normal(*w, rng, kInitStd);
      w->set_requires_grad(true);
    }
    return p;
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".wq", wq);
    f(prefix + ".wk", wk);
    f(prefix + ".wv", wv);
    f(prefix + ".wo", wo);
  }
};

// softmax(Q K^T / sqrt(dh)) V, per head, concatenated and projected by wo.
// No residual and no normalization here; callers compose those. When
// attn_out is given, it receives the row-normalized attention weights
// [N*heads, Tq, Tk].
template <typename T>
Tensor<T> attention_core(const Tensor<T>& q_in, const Tensor<T>& kv_in,
                         const AttentionParams<T>& p, Tensor<T>* attn_out = nullptr) {
  if (q_in.rank() != 3 || kv_in.rank() != 3)
    throw DimensionError("attention: expects [N,T,D] token tensors");
  const int64_t N = q_in.dim(0), Tq = q_in.dim(1), D = q_in.dim(2);
  const int64_t Tk = kv_in.dim(1);
  if (kv_in.dim(0) != N || kv_in.dim(2) != D)
    throw DimensionError("attention: query " + shape_str(q_in.shape()) +
                         " vs key/value " + shape_str(kv_in.shape()));
  if (p.wq.dim(0) != D)
    throw DimensionError("attention: params built for D=" + std::to_string(p.wq.dim(0)) +
                         ", input has D=" + std::to_string(D));
  if (D % p.heads != 0) throw ConfigError("attention: D not divisible by head count");
  const int64_t h = p.heads;
  const int64_t dh = D / h;

  auto split_heads = [&](const Tensor<T>& t, int64_t rows) {
    // [N, T, D] -> [N*h, T, dh]
    return reshape(transpose(reshape(t, {N, rows, h, dh}), 1, 2), {N * h, rows, dh});
  };

  Tensor<T> q = split_heads(linear(q_in, p.wq), Tq);
  Tensor<T> k = split_heads(linear(kv_in, p.wk), Tk);
  Tensor<T> v = split_heads(linear(kv_in, p.wv), Tk);

  Tensor<T> scores = matmul(q, transpose(k, 1, 2));
  scores = scalar_mul(scores, static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))));
  Tensor<T> attn = softmax(scores);
  if (attn_out) *attn_out = attn;
  Tensor<T> ctx = matmul(attn, v);  // [N*h, Tq, dh]
  ctx = reshape(transpose(reshape(ctx, {N, h, Tq, dh}), 1, 2), {N, Tq, D});
  return linear(ctx, p.wo);
}

template <typename T>
Tensor<T> mhsa(const Tensor<T>& x, const AttentionParams<T>& p) {
  return attention_core(x, x, p);
}

// Cross-attention with the residual on the query path.
template <typename T>
Tensor<T> cross_attention(const Tensor<T>& q_in, const Tensor<T>& kv_in,
                          const AttentionParams<T>& p) {
  return add(q_in, attention_core(q_in, kv_in, p));
}

// Pre-norm cross-attention block as used by the feature injector: both
// streams normalized, residual on the raw query.
template <typename T>
struct CrossAttentionBlockParams {
  LayerNormParams<T> ln_q, ln_kv;
  AttentionParams<T> attn;

  static CrossAttentionBlockParams make(int64_t d, int heads, Rng& rng) {
    CrossAttentionBlockParams p;
    p.ln_q = LayerNormParams<T>::make(d);
    p.ln_kv = LayerNormParams<T>::make(d);
    p.attn = AttentionParams<T>::make(d, heads, rng);
    return p;
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    ln_q.visit(prefix + ".ln_q", f);
    ln_kv.visit(prefix + ".ln_kv", f);
    attn.visit(prefix + ".attn", f);
  }
};

template <typename T>
Tensor<T> cross_attention_block(const Tensor<T>& q_in, const Tensor<T>& kv_in,
                                const CrossAttentionBlockParams<T>& p) {
  return add(q_in, attention_core(apply_layer_norm(q_in, p.ln_q),
                                  apply_layer_norm(kv_in, p.ln_kv), p.attn));
}

// ---------------------------------------------------------------------------
// feed-forward
// ---------------------------------------------------------------------------

template <typename T>
struct FfnParams {
  Tensor<T> w1, b1, w2, b2;

  static FfnParams make(int64_t d, int expansion, Rng& rng) {
    FfnParams p;
    int64_t inner = d * expansion;
    p.w1 = Tensor<T>({d, inner});
    p.w2 = Tensor<T>({inner, d});
    fill_trunc_normal(p.w1, rng, kInitStd);
    fill_trunc_normal(p.w2, rng, kInitStd);
    p.b1 = Tensor<T>::zeros({inner});
    p.b2 = Tensor<T>::zeros({d});
    for (Tensor<T>* t : {&p.w1, &p.b1, &p.w2, &p.b2}) t->set_requires_grad(true);
    return p;
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".w1", w1);
    f(prefix + ".b1", b1);
    f(prefix + ".w2", w2);
    f(prefix + ".b2", b2);
  }
};

template <typename T>
Tensor<T> ffn(const Tensor<T>& x, const FfnParams<T>& p) {
  return linear(gelu(linear(x, p.w1, p.b1)), p.w2, p.b2);
}

// ---------------------------------------------------------------------------
// transformer layer (pre-norm)
// ---------------------------------------------------------------------------

template <typename T>
struct TransformerLayerParams {
  LayerNormParams<T> ln1, ln2;
  AttentionParams<T> attn;
  FfnParams<T> mlp;

  static TransformerLayerParams make(int64_t d, int heads, int ffn_expansion, Rng& rng) {
    TransformerLayerParams p;
    p.ln1 = LayerNormParams<T>::make(d);
    p.ln2 = LayerNormParams<T>::make(d);
    p.attn = AttentionParams<T>::make(d, heads, rng);
    p.mlp = FfnParams<T>::make(d, ffn_expansion, rng);
    return p;
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    ln1.visit(prefix + ".ln1", f);
    attn.visit(prefix + ".attn", f);
    ln2.visit(prefix + ".ln2", f);
    mlp.visit(prefix + ".ffn", f);
  }
};

// x + MHSA(LN(x)), then + FFN(LN(.)).
template <typename T>
Tensor<T> transformer_layer(const Tensor<T>& x, const TransformerLayerParams<T>& p) {
  Tensor<T> h = add(x, mhsa(apply_layer_norm(x, p.ln1), p.attn));
  return add(h, ffn(apply_layer_norm(h, p.ln2), p.mlp));
}

// ---------------------------------------------------------------------------
// per-channel batch-style normalization (pure per-batch statistics)
// ---------------------------------------------------------------------------

template <typename T>
struct Norm2dParams {
  Tensor<T> gamma, beta;

  static Norm2dParams make(int64_t c) {
    Norm2dParams p;
    p.gamma = Tensor<T>::ones({c});
    p.beta = Tensor<T>::zeros({c});
    p.gamma.set_requires_grad(true);
    p.beta.set_requires_grad(true);
    return p;
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".gamma", gamma);
    f(prefix + ".beta", beta);
  }
};

template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Norm2dParams<T>& p) {
  if (x.rank() != 4) throw DimensionError("batch_norm2d: expects [N,C,H,W]");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (p.gamma.dim(0) != C)
    throw DimensionError("batch_norm2d: channel mismatch " + shape_str(x.shape()));
  const int64_t hw = H * W;
  const int64_t M = N * hw;
  const T eps = static_cast<T>(kBatchNormEps);

  auto out = detail::make_op_node_v<T>("batch_norm2d", x.shape(), {x, p.gamma, p.beta});
  std::vector<T> xhat(static_cast<std::size_t>(x.numel()));
  std::vector<T> rstd_c(static_cast<std::size_t>(C));
  const T* px = x.data();
  T* py = out->data.data();
  for (int64_t c = 0; c < C; ++c) {
    double mu = 0;
    for (int64_t n = 0; n < N; ++n) {
      const T* src = px + (n * C + c) * hw;
      for (int64_t i = 0; i < hw; ++i) mu += src[i];
    }
    mu /= static_cast<double>(M);
    double var = 0;
    for (int64_t n = 0; n < N; ++n) {
      const T* src = px + (n * C + c) * hw;
      for (int64_t i = 0; i < hw; ++i) {
        double d = src[i] - mu;
        var += d * d;
      }
    }
    var /= static_cast<double>(M);
    T rs = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(eps)));
    rstd_c[static_cast<std::size_t>(c)] = rs;
    T g = p.gamma.vec()[static_cast<std::size_t>(c)];
    T b = p.beta.vec()[static_cast<std::size_t>(c)];
    for (int64_t n = 0; n < N; ++n) {
      const T* src = px + (n * C + c) * hw;
      T* xh = xhat.data() + (n * C + c) * hw;
      T* dst = py + (n * C + c) * hw;
      for (int64_t i = 0; i < hw; ++i) {
        xh[i] = static_cast<T>((src[i] - mu)) * rs;
        dst[i] = xh[i] * g + b;
      }
    }
  }

  if (out->requires_grad) {
    auto pxn = x.node();
    auto pgn = p.gamma.node();
    auto pbn = p.beta.node();
    auto sx = std::make_shared<std::vector<T>>(std::move(xhat));
    auto sr = std::make_shared<std::vector<T>>(std::move(rstd_c));
    out->backward_fn = [pxn, pgn, pbn, sx, sr, N, C, hw, M](detail::Node<T>& o) {
      const T* g = o.grad.data();
      const T* xh = sx->data();
      if (pxn->requires_grad) pxn->ensure_grad();
      if (pgn->requires_grad) pgn->ensure_grad();
      if (pbn->requires_grad) pbn->ensure_grad();
      for (int64_t c = 0; c < C; ++c) {
        double sum_g = 0, sum_gx = 0;
        for (int64_t n = 0; n < N; ++n) {
          const T* gr = g + (n * C + c) * hw;
          const T* xr = xh + (n * C + c) * hw;
          for (int64_t i = 0; i < hw; ++i) {
            sum_g += gr[i];
            sum_gx += static_cast<double>(gr[i]) * xr[i];
          }
        }
        if (pgn->requires_grad) pgn->grad[c] += static_cast<T>(sum_gx);
        if (pbn->requires_grad) pbn->grad[c] += static_cast<T>(sum_g);
        if (pxn->requires_grad) {
          T gamma_c = pgn->data[static_cast<std::size_t>(c)];
          T rs = (*sr)[static_cast<std::size_t>(c)];
          double mean_g = sum_g / static_cast<double>(M);
          double mean_gx = sum_gx / static_cast<double>(M);
          for (int64_t n = 0; n < N; ++n) {
            const T* gr = g + (n * C + c) * hw;
            const T* xr = xh + (n * C + c) * hw;
            T* dst = pxn->grad.data() + (n * C + c) * hw;
            for (int64_t i = 0; i < hw; ++i)
              dst[i] += static_cast<T>(gamma_c * rs *
                                       (gr[i] - mean_g - xr[i] * mean_gx));
          }
        }
      }
    };
  }
  detail::check_finite(*out);
  return Tensor<T>(out);
}

// ---------------------------------------------------------------------------
// residual convolution block (ResNet basic block)
// ---------------------------------------------------------------------------

// Convs are bias-free: the batch norm that follows each one subtracts the
// per-channel mean, so a conv bias would be a dead parameter.
template <typename T>
struct ResBlockParams {
  Tensor<T> conv1_w;
  Norm2dParams<T> n1;
  Tensor<T> conv2_w;
  Norm2dParams<T> n2;
  bool has_proj = false;
  Tensor<T> proj_w;
  Norm2dParams<T> nproj;
  int stride = 1;

  static ResBlockParams make(int64_t cin, int64_t cout, int stride, Rng& rng) {
    if (stride != 1 && stride != 2) throw ConfigError("res_block: stride must be 1 or 2");
    ResBlockParams p;
    p.stride = stride;
    p.conv1_w = Tensor<T>({cout, cin, 3, 3});
    p.conv2_w = Tensor<T>({cout, cout, 3, 3});
    fill_trunc_normal(p.conv1_w, rng, kInitStd);
    fill_trunc_normal(p.conv2_w, rng, kInitStd);
    p.conv1_w.set_requires_grad(true);
    p.conv2_w.set_requires_grad(true);
    p.n1 = Norm2dParams<T>::make(cout);
    p.n2 = Norm2dParams<T>::make(cout);
    p.has_proj = (stride != 1 || cin != cout);
    if (p.has_proj) {
      p.proj_w = Tensor<T>({cout, cin, 1, 1});
      fill_trunc_normal(p.proj_w, rng, kInitStd);
      p.proj_w.set_requires_grad(true);
      p.nproj = Norm2dParams<T>::make(cout);
    }
    return p;
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".conv1.w", conv1_w);
    n1.visit(prefix + ".n1", f);
    f(prefix + ".conv2.w", conv2_w);
    n2.visit(prefix + ".n2", f);
    if (has_proj) {
      f(prefix + ".proj.w", proj_w);
      nproj.visit(prefix + ".nproj", f);
    }
  }
};

template <typename T>
Tensor<T> res_block(const Tensor<T>& x, const ResBlockParams<T>& p) {
  const int64_t cin = x.dim(1);
  const int64_t cout = p.conv1_w.dim(0);
  if (p.conv1_w.dim(1) != cin)
    throw ConfigError("res_block: built for " + std::to_string(p.conv1_w.dim(1)) +
                      " input channels, got " + std::to_string(cin));
  if (!p.has_proj && (p.stride != 1 || cin != cout))
    throw ConfigError("res_block: channel/stride change requires a projection skip");
  Tensor<T> h = conv2d(x, p.conv1_w, p.stride, 1);
  h = relu(batch_norm2d(h, p.n1));
  h = conv2d(h, p.conv2_w, 1, 1);
  h = batch_norm2d(h, p.n2);
  Tensor<T> skip =
      p.has_proj ? batch_norm2d(conv2d(x, p.proj_w, p.stride, 0), p.nproj) : x;
  return relu(add(skip, h));
}

}  // namespace cvit
