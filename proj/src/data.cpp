#include "cvit/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "cvit/errors.hpp"

namespace fs = std::filesystem;

namespace cvit {

namespace {

std::set<std::string> list_png_stems(const fs::path& dir) {
  std::set<std::string> stems;
  if (!fs::is_directory(dir)) throw IoError("dataset folder missing: " + dir.string());
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    if (entry.path().extension() == ".png") stems.insert(entry.path().stem().string());
  }
  return stems;
}

}  // namespace

DatasetManifest load_dataset(const std::string& dir) {
  DatasetManifest m;
  m.dir = dir;
  auto a = list_png_stems(fs::path(dir) / "A");
  auto b = list_png_stems(fs::path(dir) / "B");
  auto label = list_png_stems(fs::path(dir) / "label");
  for (const auto& id : a) {
    if (!b.count(id)) throw IoError("missing B/" + id + ".png for sample \"" + id + "\"");
    if (!label.count(id))
      throw IoError("missing label/" + id + ".png for sample \"" + id + "\"");
  }
  for (const auto& id : b)
    if (!a.count(id)) throw IoError("missing A/" + id + ".png for sample \"" + id + "\"");
  for (const auto& id : label)
    if (!a.count(id)) throw IoError("missing A/" + id + ".png for sample \"" + id + "\"");
  m.ids.assign(a.begin(), a.end());  // already sorted and unique
  return m;
}

DatasetManifest load_dataset(const std::string& root, const std::string& split) {
  return load_dataset((fs::path(root) / split).string());
}

BinaryMask binarize_mask(const ImageU8& raw) {
  if (raw.c != 1)
    throw IoError("mask image must be grayscale, got " + std::to_string(raw.c) + " channels");
  BinaryMask m(raw.h, raw.w);
  for (std::size_t i = 0; i < raw.px.size(); ++i) m.v[i] = raw.px[i] > 127 ? 1 : 0;
  return m;
}

namespace {

std::vector<float> to_chw_float(const ImageU8& img) {
  if (img.c != 3) throw IoError("expected an RGB image, got " + std::to_string(img.c) + " channels");
  std::vector<float> out(static_cast<std::size_t>(3) * img.h * img.w);
  const float inv = 1.0f / 255.0f;
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < 3; ++c)
        out[(static_cast<std::size_t>(c) * img.h + y) * img.w + x] =
            inv * img.px[(static_cast<std::size_t>(y) * img.w + x) * 3 + c];
  return out;
}

ImageU8 from_chw_float(const std::vector<float>& chw, int h, int w) {
  ImageU8 img;
  img.h = h;
  img.w = w;
  img.c = 3;
  img.px.resize(static_cast<std::size_t>(3) * h * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        float v = chw[(static_cast<std::size_t>(c) * h + y) * w + x];
        v = std::min(std::max(v, 0.0f), 1.0f);
        img.px[(static_cast<std::size_t>(y) * w + x) * 3 + c] =
            static_cast<uint8_t>(std::lround(v * 255.0f));
      }
  return img;
}

}  // namespace

SamplePair load_sample(const DatasetManifest& m, std::size_t index) {
  const std::string& id = m.ids.at(index);
  ImageU8 a = read_png(m.a_path(id));
  ImageU8 b = read_png(m.b_path(id));
  ImageU8 label = read_png(m.label_path(id));
  if (a.w != b.w || a.h != b.h || a.w != label.w || a.h != label.h)
    throw IoError("sample \"" + id + "\": A/B/label dimensions disagree");
  SamplePair s;
  s.id = id;
  s.h = a.h;
  s.w = a.w;
  s.img_a = to_chw_float(a);
  s.img_b = to_chw_float(b);
  s.mask = binarize_mask(label);
  s.recompute_ratio();
  return s;
}

// ---------------------------------------------------------------------------
// augmentation
// ---------------------------------------------------------------------------

GeomTransform sample_transform(Rng& rng, int h, int w, const AugmentConfig& cfg) {
  GeomTransform t;
  if (cfg.crop) {
    double scale = rng.uniform(cfg.crop_min, 1.0);
    int ch = std::max(1, static_cast<int>(std::lround(scale * h)));
    int cw = std::max(1, static_cast<int>(std::lround(scale * w)));
    if (ch < h || cw < w) {
      t.cropped = true;
      t.ch = ch;
      t.cw = cw;
      t.cy = static_cast<int>(rng.uniform_int(h - ch + 1));
      t.cx = static_cast<int>(rng.uniform_int(w - cw + 1));
    }
  }
  if (cfg.flip) {
    t.flip_h = rng.bernoulli(0.5);
    t.flip_v = rng.bernoulli(0.5);
  }
  return t;
}

namespace {

// Bilinear CHW resize (images). align_corners=false sampling.
std::vector<float> resize_bilinear_chw(const std::vector<float>& src, int c, int sh, int sw,
                                       int dh, int dw) {
  std::vector<float> dst(static_cast<std::size_t>(c) * dh * dw);
  double sy = static_cast<double>(sh) / dh;
  double sx = static_cast<double>(sw) / dw;
  for (int ch = 0; ch < c; ++ch) {
    const float* in = src.data() + static_cast<std::size_t>(ch) * sh * sw;
    float* out = dst.data() + static_cast<std::size_t>(ch) * dh * dw;
    for (int y = 0; y < dh; ++y) {
      double fy = (y + 0.5) * sy - 0.5;
      fy = std::min(std::max(fy, 0.0), static_cast<double>(sh - 1));
      int y0 = static_cast<int>(fy);
      int y1 = std::min(y0 + 1, sh - 1);
      double wy = fy - y0;
      for (int x = 0; x < dw; ++x) {
        double fx = (x + 0.5) * sx - 0.5;
        fx = std::min(std::max(fx, 0.0), static_cast<double>(sw - 1));
        int x0 = static_cast<int>(fx);
        int x1 = std::min(x0 + 1, sw - 1);
        double wx = fx - x0;
        double v = (1 - wy) * ((1 - wx) * in[y0 * sw + x0] + wx * in[y0 * sw + x1]) +
                   wy * ((1 - wx) * in[y1 * sw + x0] + wx * in[y1 * sw + x1]);
        out[y * dw + x] = static_cast<float>(v);
      }
    }
  }
  return dst;
}

// Nearest-neighbor resize keeps the mask strictly binary.
BinaryMask resize_nearest_mask(const BinaryMask& src, int dh, int dw) {
  BinaryMask dst(dh, dw);
  double sy = static_cast<double>(src.h) / dh;
  double sx = static_cast<double>(src.w) / dw;
  for (int y = 0; y < dh; ++y) {
    int yy = std::min(static_cast<int>((y + 0.5) * sy), src.h - 1);
    for (int x = 0; x < dw; ++x) {
      int xx = std::min(static_cast<int>((x + 0.5) * sx), src.w - 1);
      dst.v[static_cast<std::size_t>(y) * dw + x] =
          src.v[static_cast<std::size_t>(yy) * src.w + xx];
    }
  }
  return dst;
}

std::vector<float> crop_chw(const std::vector<float>& src, int c, int sh, int sw,
                            const GeomTransform& t) {
  std::vector<float> out(static_cast<std::size_t>(c) * t.ch * t.cw);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < t.ch; ++y)
      for (int x = 0; x < t.cw; ++x)
        out[(static_cast<std::size_t>(ch) * t.ch + y) * t.cw + x] =
            src[(static_cast<std::size_t>(ch) * sh + t.cy + y) * sw + t.cx + x];
  return out;
}

void flip_chw(std::vector<float>& img, int c, int h, int w, bool fh, bool fv) {
  if (!fh && !fv) return;
  std::vector<float> tmp(img.size());
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        int sy = fv ? h - 1 - y : y;
        int sx = fh ? w - 1 - x : x;
        tmp[(static_cast<std::size_t>(ch) * h + y) * w + x] =
            img[(static_cast<std::size_t>(ch) * h + sy) * w + sx];
      }
  img = std::move(tmp);
}

void flip_mask(BinaryMask& m, bool fh, bool fv) {
  if (!fh && !fv) return;
  BinaryMask tmp(m.h, m.w);
  for (int y = 0; y < m.h; ++y)
    for (int x = 0; x < m.w; ++x) {
      int sy = fv ? m.h - 1 - y : y;
      int sx = fh ? m.w - 1 - x : x;
      tmp.v[static_cast<std::size_t>(y) * m.w + x] =
          m.v[static_cast<std::size_t>(sy) * m.w + sx];
    }
  m = std::move(tmp);
}

}  // namespace

SamplePair apply_transform(const SamplePair& s, const GeomTransform& t) {
  SamplePair out;
  out.id = s.id;
  out.h = s.h;
  out.w = s.w;
  if (t.cropped) {
    auto ca = crop_chw(s.img_a, 3, s.h, s.w, t);
    auto cb = crop_chw(s.img_b, 3, s.h, s.w, t);
    out.img_a = resize_bilinear_chw(ca, 3, t.ch, t.cw, s.h, s.w);
    out.img_b = resize_bilinear_chw(cb, 3, t.ch, t.cw, s.h, s.w);
    BinaryMask cm(t.ch, t.cw);
    for (int y = 0; y < t.ch; ++y)
      for (int x = 0; x < t.cw; ++x)
        cm.v[static_cast<std::size_t>(y) * t.cw + x] =
            s.mask.v[static_cast<std::size_t>(t.cy + y) * s.w + t.cx + x];
    out.mask = resize_nearest_mask(cm, s.h, s.w);
  } else {
    out.img_a = s.img_a;
    out.img_b = s.img_b;
    out.mask = s.mask;
  }
  flip_chw(out.img_a, 3, out.h, out.w, t.flip_h, t.flip_v);
  flip_chw(out.img_b, 3, out.h, out.w, t.flip_h, t.flip_v);
  flip_mask(out.mask, t.flip_h, t.flip_v);
  out.recompute_ratio();
  return out;
}

// ---------------------------------------------------------------------------
// synthetic scenes
// ---------------------------------------------------------------------------

void SynthSpec::validate() const {
  if (canvas < 8) throw ConfigError("synth: canvas must be at least 8 px");
  if (num_objects < 0) throw ConfigError("synth: num_objects must be non-negative");
  if (!(size_min > 0) || !(size_max >= size_min))
    throw ConfigError("synth: need 0 < size_min <= size_max");
  if (size_max > 1.0)
    throw ConfigError("synth: objects larger than the canvas (size_max > 1)");
  if (change_prob < 0 || change_prob > 1) throw ConfigError("synth: change_prob in [0,1]");
  if (noise < 0 || drift < 0) throw ConfigError("synth: noise/drift must be non-negative");
  if (!(drift_scale > 0) || drift_scale > 1) throw ConfigError("synth: drift_scale in (0,1]");
  if (contrast_min < 0 || contrast_max < contrast_min)
    throw ConfigError("synth: need 0 <= contrast_min <= contrast_max");
}

namespace {

// Smooth per-phase field: a coarse random grid upsampled bilinearly.
std::vector<float> smooth_field(int s, double amplitude, double scale, Rng& rng) {
  int grid = std::max(2, static_cast<int>(std::lround(1.0 / scale)) + 1);
  std::vector<float> coarse(static_cast<std::size_t>(grid) * grid);
  for (auto& v : coarse) v = static_cast<float>(rng.uniform(-amplitude, amplitude));
  std::vector<float> out(static_cast<std::size_t>(s) * s);
  double step = static_cast<double>(grid - 1) / s;
  for (int y = 0; y < s; ++y) {
    double fy = (y + 0.5) * step;
    int y0 = std::min(static_cast<int>(fy), grid - 2);
    double wy = fy - y0;
    for (int x = 0; x < s; ++x) {
      double fx = (x + 0.5) * step;
      int x0 = std::min(static_cast<int>(fx), grid - 2);
      double wx = fx - x0;
      double v = (1 - wy) * ((1 - wx) * coarse[y0 * grid + x0] + wx * coarse[y0 * grid + x0 + 1]) +
                 wy * ((1 - wx) * coarse[(y0 + 1) * grid + x0] + wx * coarse[(y0 + 1) * grid + x0 + 1]);
      out[static_cast<std::size_t>(y) * s + x] = static_cast<float>(v);
    }
  }
  return out;
}

struct SynthObject {
  bool ellipse = false;
  int cy = 0, cx = 0, hh = 0, hw = 0;  // center and half extents
  float color[3] = {0, 0, 0};
  bool in_a = true, in_b = true;

  bool contains(int y, int x) const {
    if (ellipse) {
      double dy = (y - cy) / static_cast<double>(hh);
      double dx = (x - cx) / static_cast<double>(hw);
      return dy * dy + dx * dx <= 1.0;
    }
    return std::abs(y - cy) <= hh && std::abs(x - cx) <= hw;
  }
};

void paint(std::vector<float>& layer, int s, const SynthObject& o) {
  int y0 = std::max(0, o.cy - o.hh), y1 = std::min(s - 1, o.cy + o.hh);
  int x0 = std::max(0, o.cx - o.hw), x1 = std::min(s - 1, o.cx + o.hw);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x)
      if (o.contains(y, x))
        for (int c = 0; c < 3; ++c)
          layer[(static_cast<std::size_t>(c) * s + y) * s + x] = o.color[c];
}

}  // namespace

std::vector<SamplePair> synth_generate(const SynthSpec& spec, int n, uint64_t seed) {
  spec.validate();
  const int s = spec.canvas;
  const std::size_t plane = static_cast<std::size_t>(s) * s;
  std::vector<SamplePair> out;
  out.reserve(static_cast<std::size_t>(n));

  for (int i = 0; i < n; ++i) {
    Rng rng(mix64(mix64(seed, spec.texture_seed), static_cast<uint64_t>(i)));

    // Shared background: base color plus two low-frequency sinusoid ramps.
    float base[3];
    for (auto& b : base) b = static_cast<float>(rng.uniform(0.35, 0.65));
    double a1 = rng.uniform(0, 6.283185307), f1 = rng.uniform(0.5, 2.0);
    double a2 = rng.uniform(0, 6.283185307), f2 = rng.uniform(0.5, 2.0);
    double p1 = rng.uniform(0, 6.283185307), p2 = rng.uniform(0, 6.283185307);
    std::vector<float> bg(3 * plane);
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) {
        double u = (std::cos(a1) * x + std::sin(a1) * y) / s;
        double v = (std::cos(a2) * x + std::sin(a2) * y) / s;
        double tex = 0.04 * std::sin(6.283185307 * f1 * u + p1) +
                     0.04 * std::sin(6.283185307 * f2 * v + p2);
        for (int c = 0; c < 3; ++c)
          bg[(static_cast<std::size_t>(c) * s + y) * s + x] =
              static_cast<float>(base[c] + tex);
      }

    std::vector<float> layer_a = bg, layer_b = bg;
    for (int k = 0; k < spec.num_objects; ++k) {
      SynthObject o;
      o.ellipse = rng.bernoulli(0.5);
      double frac = rng.uniform(spec.size_min, spec.size_max);
      double aspect = rng.uniform(0.6, 1.6);
      double area = frac * s * s;
      // Half extents; footprint area tracks the requested fraction.
      double wpx = std::sqrt(area * aspect);
      double hpx = area / wpx;
      if (o.ellipse) {
        // ellipse area = pi * hh * hw
        hpx *= 1.1283791670955126;  // 2/sqrt(pi)
        wpx *= 1.1283791670955126;
      }
      o.hh = std::max(1, std::min(s / 2, static_cast<int>(std::lround(hpx / 2))));
      o.hw = std::max(1, std::min(s / 2, static_cast<int>(std::lround(wpx / 2))));
      o.cy = static_cast<int>(rng.uniform_int(s));
      o.cx = static_cast<int>(rng.uniform_int(s));
      double contrast;
      if (spec.contrast_by_size) {
        double tsize = (spec.size_max > spec.size_min)
                           ? (frac - spec.size_min) / (spec.size_max - spec.size_min)
                           : 0.0;
        contrast = spec.contrast_max + (spec.contrast_min - spec.contrast_max) * tsize;
      } else {
        contrast = rng.uniform(spec.contrast_min, spec.contrast_max);
      }
      for (int c = 0; c < 3; ++c) {
        double dir = rng.bernoulli(0.5) ? 1.0 : -1.0;
        double v = base[c] + dir * contrast;
        o.color[c] = static_cast<float>(std::min(std::max(v, 0.0), 1.0));
      }
      if (rng.bernoulli(spec.change_prob)) {
        bool appears = rng.bernoulli(0.5);
        o.in_a = !appears;
        o.in_b = appears;
      }
      if (o.in_a) paint(layer_a, s, o);
      if (o.in_b) paint(layer_b, s, o);
    }

    SamplePair sp;
    sp.id = "synth_" + std::to_string(10000 + i).substr(1);
    sp.h = s;
    sp.w = s;
    sp.mask = BinaryMask(s, s);
    // Exact mask: pixelwise disagreement of the rendered object layers.
    for (std::size_t px = 0; px < plane; ++px) {
      bool differs = layer_a[px] != layer_b[px] || layer_a[plane + px] != layer_b[plane + px] ||
                     layer_a[2 * plane + px] != layer_b[2 * plane + px];
      sp.mask.v[px] = differs ? 1 : 0;
    }

    auto finish_phase = [&](std::vector<float> layer) {
      if (spec.drift > 0) {
        // independent per-channel fields: drift is not separable from object
        // change by channel statistics alone
        for (int c = 0; c < 3; ++c) {
          auto field = smooth_field(s, spec.drift, spec.drift_scale, rng);
          for (std::size_t px = 0; px < plane; ++px)
            layer[static_cast<std::size_t>(c) * plane + px] += field[px];
        }
      }
      if (spec.noise > 0)
        for (auto& v : layer) v += static_cast<float>(rng.uniform(-spec.noise, spec.noise));
      for (auto& v : layer) v = std::min(std::max(v, 0.0f), 1.0f);
      return layer;
    };
    sp.img_a = finish_phase(std::move(layer_a));
    sp.img_b = finish_phase(std::move(layer_b));
    sp.recompute_ratio();
    out.push_back(std::move(sp));
  }
  return out;
}

void write_synth_dataset(const std::string& dir, const std::vector<SamplePair>& samples) {
  fs::create_directories(fs::path(dir) / "A");
  fs::create_directories(fs::path(dir) / "B");
  fs::create_directories(fs::path(dir) / "label");
  nlohmann::json index;
  index["samples"] = nlohmann::json::array();
  for (const auto& s : samples) {
    write_png((fs::path(dir) / "A" / (s.id + ".png")).string(), from_chw_float(s.img_a, s.h, s.w));
    write_png((fs::path(dir) / "B" / (s.id + ".png")).string(), from_chw_float(s.img_b, s.h, s.w));
    ImageU8 label;
    label.h = s.h;
    label.w = s.w;
    label.c = 1;
    label.px.resize(s.mask.v.size());
    for (std::size_t i = 0; i < s.mask.v.size(); ++i) label.px[i] = s.mask.v[i] ? 255 : 0;
    write_png((fs::path(dir) / "label" / (s.id + ".png")).string(), label);
    index["samples"].push_back({{"id", s.id}, {"change_ratio", s.change_ratio}});
  }
  std::ofstream os(fs::path(dir) / "index.json");
  if (!os) throw IoError("cannot write index.json under " + dir);
  os << index.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// batching
// ---------------------------------------------------------------------------

Batch make_batch(DatasetCache& data, int64_t batch_size, uint64_t seed, int64_t iter,
                 bool do_augment, const AugmentConfig& aug) {
  if (batch_size < 1) throw ContractError("make_batch: batch_size must be >= 1");
  const int64_t n = static_cast<int64_t>(data.size());
  if (n == 0) throw ContractError("make_batch: empty manifest");
  const int64_t bpe = batches_per_epoch(n, batch_size);
  const int64_t epoch = iter / bpe;
  const int64_t slot = iter % bpe;

  std::vector<int64_t> order(static_cast<std::size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng shuffle_rng(mix64(seed, static_cast<uint64_t>(epoch)));
  for (int64_t i = n - 1; i > 0; --i)
    std::swap(order[static_cast<std::size_t>(i)],
              order[static_cast<std::size_t>(shuffle_rng.uniform_int(i + 1))]);

  const int64_t begin = slot * batch_size;
  const int64_t end = std::min(begin + batch_size, n);
  const int64_t bs = end - begin;

  Batch batch;
  bool first = true;
  int h = 0, w = 0;
  for (int64_t k = 0; k < bs; ++k) {
    const SamplePair& raw = data.get(static_cast<std::size_t>(order[static_cast<std::size_t>(begin + k)]));
    SamplePair s;
    if (do_augment) {
      Rng arng(augment_seed(seed, epoch, raw.id));
      s = augment(raw, arng, aug);
    } else {
      s = raw;
    }
    if (first) {
      h = s.h;
      w = s.w;
      batch.img_a = TensorF({bs, 3, h, w});
      batch.img_b = TensorF({bs, 3, h, w});
      batch.mask = TensorF({bs, 1, h, w});
      first = false;
    } else if (s.h != h || s.w != w) {
      throw DimensionError("make_batch: samples in a batch must share dimensions");
    }
    std::copy(s.img_a.begin(), s.img_a.end(),
              batch.img_a.data() + k * 3 * static_cast<int64_t>(h) * w);
    std::copy(s.img_b.begin(), s.img_b.end(),
              batch.img_b.data() + k * 3 * static_cast<int64_t>(h) * w);
    float* mdst = batch.mask.data() + k * static_cast<int64_t>(h) * w;
    for (std::size_t i = 0; i < s.mask.v.size(); ++i) mdst[i] = static_cast<float>(s.mask.v[i]);
    batch.ids.push_back(s.id);
  }
  return batch;
}

}  // namespace cvit
