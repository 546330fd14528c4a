#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "cvit/metrics.hpp"
#include "cvit/png_io.hpp"
#include "cvit/rng.hpp"
#include "cvit/tensor.hpp"

namespace cvit {

// Dataset ingestion for bi-temporal pairs (A/B/label PNG triplets), joint
// geometric augmentation, deterministic batching, and a synthetic scene
// generator for desk-scale experiments.

struct SamplePair {
  std::string id;
  int h = 0, w = 0;
  std::vector<float> img_a, img_b;  // CHW, 3*h*w, values in [0,1]
  BinaryMask mask;
  double change_ratio = 0;

  void recompute_ratio() { change_ratio = mask.ones_ratio(); }
};

struct DatasetManifest {
  std::string dir;               // contains A/, B/, label/
  std::vector<std::string> ids;  // sorted, unique, file stems

  std::size_t size() const { return ids.size(); }
  std::string a_path(const std::string& id) const { return dir + "/A/" + id + ".png"; }
  std::string b_path(const std::string& id) const { return dir + "/B/" + id + ".png"; }
  std::string label_path(const std::string& id) const { return dir + "/label/" + id + ".png"; }
};

// Scans dir/A, dir/B, dir/label for matching *.png triplets in lexicographic
// order. A file missing its counterparts is an IoError naming the id.
DatasetManifest load_dataset(const std::string& dir);
DatasetManifest load_dataset(const std::string& root, const std::string& split);

// value > 127 -> 1, else 0. Non-grayscale input is an ingestion error.
BinaryMask binarize_mask(const ImageU8& raw);

SamplePair load_sample(const DatasetManifest& m, std::size_t index);

// Loads lazily, keeps everything resident; fine at desk scale.
class DatasetCache {
 public:
  explicit DatasetCache(DatasetManifest m) : manifest_(std::move(m)) {
    cache_.resize(manifest_.size());
  }
  const DatasetManifest& manifest() const { return manifest_; }
  std::size_t size() const { return manifest_.size(); }
  const SamplePair& get(std::size_t i) {
    if (!cache_.at(i)) cache_[i] = std::make_unique<SamplePair>(load_sample(manifest_, i));
    return *cache_[i];
  }

 private:
  DatasetManifest manifest_;
  std::vector<std::unique_ptr<SamplePair>> cache_;
};

// ---------------------------------------------------------------------------
// augmentation
// ---------------------------------------------------------------------------

struct AugmentConfig {
  bool flip = true;        // horizontal/vertical flips, p = 0.5 each
  bool crop = true;        // random scale-crop then resize back
  double crop_min = 0.8;   // crop scale sampled uniformly in [crop_min, 1]
};

// One geometric transform applied jointly to img_a, img_b and the mask.
struct GeomTransform {
  bool flip_h = false, flip_v = false;
  bool cropped = false;
  int cy = 0, cx = 0, ch = 0, cw = 0;
};

GeomTransform sample_transform(Rng& rng, int h, int w, const AugmentConfig& cfg);
// Crop (bilinear resize back for images, nearest for the mask), then flips.
SamplePair apply_transform(const SamplePair& s, const GeomTransform& t);

inline SamplePair augment(const SamplePair& s, Rng& rng, const AugmentConfig& cfg) {
  return apply_transform(s, sample_transform(rng, s.h, s.w, cfg));
}

// Seed for the augmentation of (sample id) at (epoch); keyed this way so
// resumed runs reproduce the exact stream.
inline uint64_t augment_seed(uint64_t base_seed, int64_t epoch, const std::string& id) {
  return mix64(mix64(base_seed, static_cast<uint64_t>(epoch) + 0x5eedULL), fnv1a64(id));
}

// ---------------------------------------------------------------------------
// synthetic scenes
// ---------------------------------------------------------------------------

struct SynthSpec {
  int canvas = 64;
  int num_objects = 6;
  double size_min = 0.002;  // object area as a fraction of the canvas
  double size_max = 0.05;
  double change_prob = 0.5;  // per object: appears/disappears between phases
  uint64_t texture_seed = 0;
  double noise = 0.02;        // per-pixel per-phase uniform noise amplitude
  double drift = 0.0;         // low-frequency per-phase brightness drift
  double drift_scale = 0.35;  // drift correlation length, fraction of canvas
  double contrast_min = 0.35;
  double contrast_max = 0.6;
  // Large objects get contrast_min, small ones contrast_max (size-graded
  // difficulty for the stratified comparison harness).
  bool contrast_by_size = false;

  void validate() const;
};

// Deterministic from (spec, seed): textured background shared between phases,
// solid objects added/removed per change_prob, mask equal to the exact
// pixelwise disagreement of the two object layers (before drift and noise).
std::vector<SamplePair> synth_generate(const SynthSpec& spec, int n, uint64_t seed);

// Writes A/B/label PNGs plus an index.json with per-sample change ratios.
void write_synth_dataset(const std::string& dir, const std::vector<SamplePair>& samples);

// ---------------------------------------------------------------------------
// batching
// ---------------------------------------------------------------------------

struct Batch {
  TensorF img_a, img_b;  // [B,3,H,W]
  TensorF mask;          // [B,1,H,W]
  std::vector<std::string> ids;
};

inline int64_t batches_per_epoch(int64_t n, int64_t batch_size) {
  return (n + batch_size - 1) / batch_size;
}

// Deterministic batch assembly: epoch = iter / batches_per_epoch, the id
// order is a seeded shuffle per epoch, the final partial batch is kept.
// Augmentation (when enabled) is seeded per (seed, epoch, id).
Batch make_batch(DatasetCache& data, int64_t batch_size, uint64_t seed, int64_t iter,
                 bool do_augment, const AugmentConfig& aug);

}  // namespace cvit
