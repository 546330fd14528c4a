#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cvit/nn.hpp"

namespace cvit {

// Full change-detection network: shared plain-ViT encoder + detail-capture
// convolution branch per phase, cross-attention feature injector, per-scale
// difference modeling, cascade decoder to a change-probability map.

enum class InjectorVariant { kVitAsQuery, kDetailAsQuery };

inline const char* injector_variant_name(InjectorVariant v) {
  return v == InjectorVariant::kVitAsQuery ? "vit_as_query" : "detail_as_query";
}

struct ModelConfig {
  int image_size = 256;
  int patch_size = 16;
  int vit_dim = 384;
  int vit_layers = 12;
  int vit_heads = 6;
  int ffn_expansion = 4;
  std::array<int, 3> detail_channels{64, 128, 256};
  // Difference-feature widths, shallow (1/2) to deep (1/16).
  std::array<int, 4> decoder_channels{64, 64, 128, 256};
  InjectorVariant injector_variant = InjectorVariant::kVitAsQuery;
  float threshold = 0.5f;
  // Ablation switches for the size-stratified comparison harness.
  bool use_vit = true;
  bool use_detail = true;
  bool use_injector = true;

  void validate() const {
    if (patch_size != 16) throw ConfigError("model: patch_size is fixed at 16");
    if (image_size <= 0 || image_size % 16 != 0)
      throw ConfigError("model: image_size must be a positive multiple of 16, got " +
                        std::to_string(image_size));
    if (vit_dim <= 0 || vit_layers < 0 || vit_heads <= 0)
      throw ConfigError("model: vit dims must be positive");
    if (vit_dim % vit_heads != 0)
      throw ConfigError("model: vit_dim " + std::to_string(vit_dim) +
                        " not divisible by vit_heads " + std::to_string(vit_heads));
    for (int c : detail_channels)
      if (c <= 0) throw ConfigError("model: detail channels must be positive");
    for (int c : decoder_channels)
      if (c <= 0) throw ConfigError("model: decoder channels must be positive");
    if (threshold <= 0.0f || threshold >= 1.0f)
      throw ConfigError("model: threshold must lie in (0,1)");
    if (!use_vit && !use_detail)
      throw ConfigError("model: at least one of the ViT and detail branches is required");
    if (use_injector && !(use_vit && use_detail))
      throw ConfigError("model: the feature injector requires both branches");
  }

  int64_t tokens() const {
    int64_t g = image_size / patch_size;
    return g * g;
  }

  static ModelConfig tiny() {
    ModelConfig c;
    c.image_size = 64;
    c.vit_dim = 64;
    c.vit_layers = 4;
    c.vit_heads = 4;
    c.detail_channels = {16, 32, 64};
    c.decoder_channels = {16, 16, 32, 64};
    return c;
  }

  static ModelConfig vit_t() {
    ModelConfig c;
    c.vit_dim = 192;
    c.vit_layers = 12;
    c.vit_heads = 3;
    return c;
  }

  static ModelConfig vit_s() {
    ModelConfig c;
    c.vit_dim = 384;
    c.vit_layers = 12;
    c.vit_heads = 6;
    return c;
  }
};

// ---------------------------------------------------------------------------
// parameter structs
// ---------------------------------------------------------------------------

template <typename T>
struct PatchEmbedParams {
  Tensor<T> w;    // [D, 3, 16, 16] (patch projection as a stride-16 conv)
  Tensor<T> b;    // [D]
  Tensor<T> pos;  // [T, D]

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".w", w);
    f(prefix + ".b", b);
    f(prefix + ".pos", pos);
  }
};

template <typename T>
struct DetailCaptureParams {
  Tensor<T> stem_w;  // 3x3 stride-2 conv to C1 (bias-free: batch norm follows)
  Norm2dParams<T> stem_norm;
  std::vector<ResBlockParams<T>> c2, c3, c4;  // two basic blocks per stage

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".stem.w", stem_w);
    stem_norm.visit(prefix + ".stem.norm", f);
    for (std::size_t i = 0; i < c2.size(); ++i) c2[i].visit(prefix + ".c2." + std::to_string(i), f);
    for (std::size_t i = 0; i < c3.size(); ++i) c3[i].visit(prefix + ".c3." + std::to_string(i), f);
    for (std::size_t i = 0; i < c4.size(); ++i) c4[i].visit(prefix + ".c4." + std::to_string(i), f);
  }
};

template <typename T>
struct InjectorParams {
  std::array<Tensor<T>, 3> lift_w;  // 1x1 conv C_i -> D
  std::array<Tensor<T>, 3> lift_b;
  std::array<CrossAttentionBlockParams<T>, 3> blocks;
  Tensor<T> fuse_w, fuse_b;  // pointwise 1x1 conv 3D -> D

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    for (int i = 0; i < 3; ++i) {
      f(prefix + ".lift" + std::to_string(i) + ".w", lift_w[i]);
      f(prefix + ".lift" + std::to_string(i) + ".b", lift_b[i]);
      blocks[i].visit(prefix + ".block" + std::to_string(i), f);
    }
    f(prefix + ".fuse.w", fuse_w);
    f(prefix + ".fuse.b", fuse_b);
  }
};

// Three-layer 3x3 conv network with ReLU after each layer.
template <typename T>
struct DiffMlpParams {
  Tensor<T> w1, b1, w2, b2, w3, b3;

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".w1", w1);
    f(prefix + ".b1", b1);
    f(prefix + ".w2", w2);
    f(prefix + ".b2", b2);
    f(prefix + ".w3", w3);
    f(prefix + ".b3", b3);
  }
};

template <typename T>
struct DecoderParams {
  // Cascade steps deep -> shallow: 1x1 channel reduction then 4x4/stride-2
  // deconv. Step i lifts scale i to scale i+1 (0 = 1/16 -> 1/8, ...).
  std::array<Tensor<T>, 3> reduce_w, reduce_b;
  std::array<Tensor<T>, 3> deconv_w;
  std::array<bool, 3> step_used{false, false, false};
  Tensor<T> head_w, head_b;  // 3x3 classification conv -> 1 channel

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    for (int i = 0; i < 3; ++i) {
      if (!step_used[i]) continue;
      f(prefix + ".reduce" + std::to_string(i) + ".w", reduce_w[i]);
      f(prefix + ".reduce" + std::to_string(i) + ".b", reduce_b[i]);
      f(prefix + ".deconv" + std::to_string(i) + ".w", deconv_w[i]);
    }
    f(prefix + ".head.w", head_w);
    f(prefix + ".head.b", head_b);
  }
};

template <typename T>
struct ModelParams {
  ModelConfig cfg;
  PatchEmbedParams<T> patch;
  std::vector<TransformerLayerParams<T>> layers;
  LayerNormParams<T> final_ln;
  DetailCaptureParams<T> detail;
  InjectorParams<T> injector;
  // Difference networks deep -> shallow: [0] F_VE (1/16), [1] F_C3 (1/8),
  // [2] F_C2 (1/4), [3] F_C1 (1/2). Entries exist per the branch switches.
  std::array<DiffMlpParams<T>, 4> diff;
  std::array<bool, 4> diff_used{false, false, false, false};
  DecoderParams<T> dec;

  static ModelParams init(const ModelConfig& cfg, uint64_t seed);

  template <typename F>
  void visit(F&& f) {
    if (cfg.use_vit) {
      patch.visit("patch", f);
      for (std::size_t i = 0; i < layers.size(); ++i)
        layers[i].visit("vit.layer" + std::to_string(i), f);
      final_ln.visit("vit.final_ln", f);
    }
    if (cfg.use_detail) detail.visit("detail", f);
    if (cfg.use_injector) injector.visit("injector", f);
    static const char* kDiffNames[4] = {"diff.fve", "diff.fc3", "diff.fc2", "diff.fc1"};
    for (int i = 0; i < 4; ++i)
      if (diff_used[i]) diff[i].visit(kDiffNames[i], f);
    dec.visit("decoder", f);
  }

  int64_t param_count() {
    int64_t n = 0;
    visit([&](const std::string&, Tensor<T>& t) { n += t.numel(); });
    return n;
  }

  int64_t detail_param_count() {
    int64_t n = 0;
    detail.visit("detail", [&](const std::string&, Tensor<T>& t) { n += t.numel(); });
    return n;
  }

  void zero_grads() {
    visit([](const std::string&, Tensor<T>& t) { t.zero_grad(); });
  }
};

namespace detail_model {

template <typename T>
Tensor<T> make_conv_weight(Shape shape, Rng& rng) {
  Tensor<T> w(shape);
  fill_trunc_normal(w, rng, kInitStd);
  w.set_requires_grad(true);
  return w;
}

template <typename T>
Tensor<T> make_zero_bias(int64_t c) {
  Tensor<T> b = Tensor<T>::zeros({c});
  b.set_requires_grad(true);
  return b;
}

template <typename T>
DiffMlpParams<T> make_diff_mlp(int64_t cin, int64_t cout, Rng& rng) {
  DiffMlpParams<T> p;
  p.w1 = make_conv_weight<T>({cout, 3 * cin, 3, 3}, rng);
  p.b1 = make_zero_bias<T>(cout);
  p.w2 = make_conv_weight<T>({cout, cout, 3, 3}, rng);
  p.b2 = make_zero_bias<T>(cout);
  p.w3 = make_conv_weight<T>({cout, cout, 3, 3}, rng);
  p.b3 = make_zero_bias<T>(cout);
  return p;
}

}  // namespace detail_model

template <typename T>
ModelParams<T> ModelParams<T>::init(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ModelParams<T> p;
  p.cfg = cfg;
  const int64_t D = cfg.vit_dim;

  if (cfg.use_vit) {
    p.patch.w = detail_model::make_conv_weight<T>({D, 3, 16, 16}, rng);
    p.patch.b = detail_model::make_zero_bias<T>(D);
    p.patch.pos = Tensor<T>({cfg.tokens(), D});
    fill_trunc_normal(p.patch.pos, rng, kInitStd);
    p.patch.pos.set_requires_grad(true);
    for (int l = 0; l < cfg.vit_layers; ++l)
      p.layers.push_back(
          TransformerLayerParams<T>::make(D, cfg.vit_heads, cfg.ffn_expansion, rng));
    p.final_ln = LayerNormParams<T>::make(D);
  }

  if (cfg.use_detail) {
    const auto& ch = cfg.detail_channels;
    p.detail.stem_w = detail_model::make_conv_weight<T>({ch[0], 3, 3, 3}, rng);
    p.detail.stem_norm = Norm2dParams<T>::make(ch[0]);
    p.detail.c2.push_back(ResBlockParams<T>::make(ch[0], ch[0], 1, rng));
    p.detail.c2.push_back(ResBlockParams<T>::make(ch[0], ch[0], 1, rng));
    p.detail.c3.push_back(ResBlockParams<T>::make(ch[0], ch[1], 2, rng));
    p.detail.c3.push_back(ResBlockParams<T>::make(ch[1], ch[1], 1, rng));
    p.detail.c4.push_back(ResBlockParams<T>::make(ch[1], ch[2], 2, rng));
    p.detail.c4.push_back(ResBlockParams<T>::make(ch[2], ch[2], 1, rng));
  }

  if (cfg.use_injector) {
    for (int i = 0; i < 3; ++i) {
      p.injector.lift_w[i] =
          detail_model::make_conv_weight<T>({D, cfg.detail_channels[i], 1, 1}, rng);
      p.injector.lift_b[i] = detail_model::make_zero_bias<T>(D);
      p.injector.blocks[i] = CrossAttentionBlockParams<T>::make(D, cfg.vit_heads, rng);
    }
    p.injector.fuse_w = detail_model::make_conv_weight<T>({D, 3 * D, 1, 1}, rng);
    p.injector.fuse_b = detail_model::make_zero_bias<T>(D);
  }

  // Decoder widths deep -> shallow.
  const std::array<int64_t, 4> dch = {cfg.decoder_channels[3], cfg.decoder_channels[2],
                                      cfg.decoder_channels[1], cfg.decoder_channels[0]};
  if (cfg.use_vit) {
    p.diff[0] = detail_model::make_diff_mlp<T>(D, dch[0], rng);
    p.diff_used[0] = true;
  }
  if (cfg.use_detail) {
    p.diff[1] = detail_model::make_diff_mlp<T>(cfg.detail_channels[2], dch[1], rng);
    p.diff[2] = detail_model::make_diff_mlp<T>(cfg.detail_channels[1], dch[2], rng);
    p.diff[3] = detail_model::make_diff_mlp<T>(cfg.detail_channels[0], dch[3], rng);
    p.diff_used[1] = p.diff_used[2] = p.diff_used[3] = true;
  }
  for (int i = 0; i < 3; ++i) {
    if (i == 0 && !cfg.use_vit) continue;  // cascade starts at 1/8 without the ViT
    p.dec.reduce_w[i] = detail_model::make_conv_weight<T>({dch[i + 1], dch[i], 1, 1}, rng);
    p.dec.reduce_b[i] = detail_model::make_zero_bias<T>(dch[i + 1]);
    p.dec.deconv_w[i] = detail_model::make_conv_weight<T>({dch[i + 1], dch[i + 1], 4, 4}, rng);
    p.dec.deconv_w[i].set_requires_grad(true);
    p.dec.step_used[i] = true;
  }
  p.dec.head_w = detail_model::make_conv_weight<T>({1, dch[3], 3, 3}, rng);
  p.dec.head_b = detail_model::make_zero_bias<T>(1);
  return p;
}

// ---------------------------------------------------------------------------
// forward stages
// ---------------------------------------------------------------------------

// [N,C,H,W] -> [N, H*W, C]
template <typename T>
Tensor<T> map_to_tokens(const Tensor<T>& m) {
  const int64_t N = m.dim(0), C = m.dim(1), hw = m.dim(2) * m.dim(3);
  return transpose(reshape(m, {N, C, hw}), 1, 2);
}

// [N,T,C] -> [N,C,h,w]
template <typename T>
Tensor<T> tokens_to_map(const Tensor<T>& t, int64_t h, int64_t w) {
  const int64_t N = t.dim(0), C = t.dim(2);
  if (t.dim(1) != h * w) throw DimensionError("tokens_to_map: token count mismatch");
  return reshape(transpose(t, 1, 2), {N, C, h, w});
}

template <typename T>
Tensor<T> patch_embed(const Tensor<T>& img, const PatchEmbedParams<T>& p,
                      const ModelConfig& cfg) {
  if (img.rank() != 4 || img.dim(1) != 3)
    throw DimensionError("patch_embed: expects [N,3,H,W]");
  if (img.dim(2) % cfg.patch_size != 0 || img.dim(3) % cfg.patch_size != 0)
    throw ConfigError("patch_embed: image dims must be divisible by the patch size");
  Tensor<T> fm = conv2d(img, p.w, p.b, cfg.patch_size, 0);  // [N,D,th,tw]
  const int64_t t = fm.dim(2) * fm.dim(3);
  if (t != p.pos.dim(0))
    throw ConfigError("patch_embed: position embedding built for " +
                      std::to_string(p.pos.dim(0)) + " tokens, input produces " +
                      std::to_string(t));
  return add(map_to_tokens(fm), p.pos);
}

template <typename T>
Tensor<T> vit_encode(const Tensor<T>& tokens, const ModelParams<T>& p) {
  Tensor<T> x = tokens;
  for (const auto& layer : p.layers) x = transformer_layer(x, layer);
  return apply_layer_norm(x, p.final_ln);
}

template <typename T>
struct DetailFeatures {
  Tensor<T> f1, f2, f3;  // 1/2, 1/4, 1/8
};

template <typename T>
DetailFeatures<T> detail_capture(const Tensor<T>& img, const DetailCaptureParams<T>& p) {
  if (img.rank() != 4 || img.dim(1) != 3)
    throw DimensionError("detail_capture: expects [N,3,H,W]");
  if (img.dim(2) % 8 != 0 || img.dim(3) % 8 != 0)
    throw ConfigError("detail_capture: image dims must be divisible by 8");
  DetailFeatures<T> out;
  Tensor<T> x = relu(batch_norm2d(conv2d(img, p.stem_w, 2, 1), p.stem_norm));
  for (const auto& blk : p.c2) x = res_block(x, blk);
  out.f1 = x;
  for (const auto& blk : p.c3) x = res_block(x, blk);
  out.f2 = x;
  for (const auto& blk : p.c4) x = res_block(x, blk);
  out.f3 = x;
  return out;
}

// Cross-attention fusion of the detail features into the ViT representation.
// VIT_AS_QUERY keeps the ViT tokens as queries against each detail scale;
// DETAIL_AS_QUERY swaps the roles per scale and average-pools the refined
// detail tokens back onto the ViT grid before fusion.
template <typename T>
Tensor<T> inject_features(const Tensor<T>& fv, const DetailFeatures<T>& fc,
                          const InjectorParams<T>& p, InjectorVariant variant) {
  const int64_t h = fv.dim(2), w = fv.dim(3);
  Tensor<T> vit_tokens = map_to_tokens(fv);
  std::array<Tensor<T>, 3> fused;
  const Tensor<T>* scales[3] = {&fc.f1, &fc.f2, &fc.f3};
  for (int i = 0; i < 3; ++i) {
    Tensor<T> lifted = conv2d(*scales[i], p.lift_w[i], p.lift_b[i], 1, 0);
    const int64_t hi = lifted.dim(2), wi = lifted.dim(3);
    Tensor<T> detail_tokens = map_to_tokens(lifted);
    Tensor<T> out_tokens;
    switch (variant) {
      case InjectorVariant::kVitAsQuery:
        out_tokens = cross_attention_block(vit_tokens, detail_tokens, p.blocks[i]);
        break;
      case InjectorVariant::kDetailAsQuery: {
        Tensor<T> refined = cross_attention_block(detail_tokens, vit_tokens, p.blocks[i]);
        if (hi % h != 0)
          throw DimensionError("inject_features: detail grid not divisible by ViT grid");
        Tensor<T> pooled = avgpool2d(tokens_to_map(refined, hi, wi), static_cast<int>(hi / h));
        out_tokens = map_to_tokens(pooled);
        break;
      }
      default:
        throw ConfigError("inject_features: unknown injector variant");
    }
    fused[i] = tokens_to_map(out_tokens, h, w);
  }
  Tensor<T> cat = concat<T>({fused[0], fused[1], fused[2]}, 1);
  return conv2d(cat, p.fuse_w, p.fuse_b, 1, 0);
}

// concat(F1, F2, |F1 - F2|) -> three 3x3 conv + ReLU layers.
template <typename T>
Tensor<T> difference_model(const Tensor<T>& f1, const Tensor<T>& f2,
                           const DiffMlpParams<T>& p) {
  if (f1.shape() != f2.shape())
    throw DimensionError("difference_model: phase shapes disagree " +
                         shape_str(f1.shape()) + " vs " + shape_str(f2.shape()));
  Tensor<T> x = concat<T>({f1, f2, abs(sub(f1, f2))}, 1);
  x = relu(conv2d(x, p.w1, p.b1, 1, 1));
  x = relu(conv2d(x, p.w2, p.b2, 1, 1));
  return relu(conv2d(x, p.w3, p.b3, 1, 1));
}

// Cascade decode of difference features, deepest (1/16) first. Undefined
// entries are scales an ablated model does not produce. The head applies a
// 3x3 conv + sigmoid at 1/2, then a bilinear 2x upsample restores H x W.
template <typename T>
Tensor<T> decode(const std::array<Tensor<T>, 4>& fd, const DecoderParams<T>& p) {
  Tensor<T> cur;
  int start = fd[0].defined() ? 0 : 1;
  if (!fd[start].defined()) throw ContractError("decode: no difference features given");
  cur = fd[start];
  for (int i = start; i < 3; ++i) {
    if (!p.step_used[i]) throw ContractError("decode: cascade step missing parameters");
    Tensor<T> up = deconv2d(conv2d(cur, p.reduce_w[i], p.reduce_b[i], 1, 0), p.deconv_w[i]);
    if (fd[i + 1].defined()) {
      if (fd[i + 1].shape()[2] != up.shape()[2] || fd[i + 1].shape()[3] != up.shape()[3])
        throw DimensionError("decode: scale mismatch in the cascade at step " +
                             std::to_string(i));
      cur = add(fd[i + 1], up);
    } else {
      cur = up;
    }
  }
  Tensor<T> prob = sigmoid(conv2d(cur, p.head_w, p.head_b, 1, 1));
  return upsample_bilinear2x(prob);
}

template <typename T>
struct PhaseFeatures {
  Tensor<T> fv;   // [N,D,H/16,W/16] (defined when the ViT branch is on)
  DetailFeatures<T> fc;
  Tensor<T> fve;  // injected representation (or fv when the injector is off)
};

template <typename T>
PhaseFeatures<T> encode_phase(const Tensor<T>& img, const ModelParams<T>& p) {
  const ModelConfig& cfg = p.cfg;
  PhaseFeatures<T> ph;
  if (cfg.use_vit) {
    Tensor<T> tokens = vit_encode(patch_embed(img, p.patch, cfg), p);
    ph.fv = tokens_to_map(tokens, img.dim(2) / 16, img.dim(3) / 16);
  }
  if (cfg.use_detail) ph.fc = detail_capture(img, p.detail);
  if (cfg.use_injector)
    ph.fve = inject_features(ph.fv, ph.fc, p.injector, cfg.injector_variant);
  else
    ph.fve = ph.fv;
  return ph;
}

// Max |F1 - F2| per difference scale, deepest first; used by the siamese
// identity checks.
struct ForwardTrace {
  std::array<double, 4> max_absdiff{0, 0, 0, 0};
  std::array<bool, 4> present{false, false, false, false};
};

namespace detail_model {

template <typename T>
double max_absdiff_raw(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0;
  const auto& va = a.vec();
  const auto& vb = b.vec();
  for (std::size_t i = 0; i < va.size(); ++i)
    m = std::max(m, std::fabs(static_cast<double>(va[i]) - static_cast<double>(vb[i])));
  return m;
}

}  // namespace detail_model

template <typename T>
Tensor<T> forward(const Tensor<T>& img1, const Tensor<T>& img2, const ModelParams<T>& p,
                  ForwardTrace* trace = nullptr) {
  if (img1.shape() != img2.shape())
    throw DimensionError("forward: bi-temporal images must share a shape");
  PhaseFeatures<T> a = encode_phase(img1, p);
  PhaseFeatures<T> b = encode_phase(img2, p);

  std::array<Tensor<T>, 4> fd;
  if (p.cfg.use_vit) {
    fd[0] = difference_model(a.fve, b.fve, p.diff[0]);
    if (trace) {
      trace->max_absdiff[0] = detail_model::max_absdiff_raw(a.fve, b.fve);
      trace->present[0] = true;
    }
  }
  if (p.cfg.use_detail) {
    fd[1] = difference_model(a.fc.f3, b.fc.f3, p.diff[1]);
    fd[2] = difference_model(a.fc.f2, b.fc.f2, p.diff[2]);
    fd[3] = difference_model(a.fc.f1, b.fc.f1, p.diff[3]);
    if (trace) {
      trace->max_absdiff[1] = detail_model::max_absdiff_raw(a.fc.f3, b.fc.f3);
      trace->max_absdiff[2] = detail_model::max_absdiff_raw(a.fc.f2, b.fc.f2);
      trace->max_absdiff[3] = detail_model::max_absdiff_raw(a.fc.f1, b.fc.f1);
      trace->present[1] = trace->present[2] = trace->present[3] = true;
    }
  }
  return decode(fd, p.dec);
}

}  // namespace cvit
