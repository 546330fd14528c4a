#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "cvit/data.hpp"
#include "cvit/kernels.hpp"
#include "cvit/metrics.hpp"
#include "cvit/model.hpp"

namespace cvit {

// Optimization loop: Adam with coupled weight decay, polynomial LR decay,
// periodic validation, best-by-val-F1 checkpoint retention.

struct TrainConfig {
  float lr0 = 2e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.99f;
  float weight_decay = 1e-4f;
  float alpha = 0.9f;  // poly decay exponent
  float adam_eps = 1e-8f;
  int max_iter = 2000;
  int batch_size = 4;
  int eval_interval = 100;
  uint64_t seed = 0;

  void validate() const {
    if (!(lr0 > 0)) throw ConfigError("train: lr0 must be positive");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
      throw ConfigError("train: betas must lie in [0, 1)");
    // max_iter == 0 is the "emit the initial checkpoint" degenerate run
    if (max_iter < 0) throw ConfigError("train: max_iter must be >= 0");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (eval_interval < 1) throw ConfigError("train: eval_interval must be >= 1");
  }
};

// (1 - curr/max)^alpha * lr0, evaluated exactly.
inline float poly_lr(int64_t curr_iter, const TrainConfig& cfg) {
  if (cfg.max_iter < 1) throw ContractError("poly_lr: schedule needs max_iter >= 1");
  if (curr_iter < 0 || curr_iter > cfg.max_iter)
    throw ContractError("poly_lr: iteration " + std::to_string(curr_iter) +
                        " outside [0, " + std::to_string(cfg.max_iter) + "]");
  double frac = 1.0 - static_cast<double>(curr_iter) / static_cast<double>(cfg.max_iter);
  return static_cast<float>(std::pow(frac, static_cast<double>(cfg.alpha)) * cfg.lr0);
}

template <typename T>
struct OptimState {
  struct Moments {
    std::vector<T> m, v;
  };
  std::map<std::string, Moments> moments;
  int64_t t = 0;
};

// One Adam step over every parameter with a populated gradient.
template <typename T>
void adam_step(ModelParams<T>& params, OptimState<T>& state, T lr, const TrainConfig& cfg) {
  state.t += 1;
  const T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(cfg.beta1),
                                               static_cast<double>(state.t)));
  const T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(cfg.beta2),
                                               static_cast<double>(state.t)));
  params.visit([&](const std::string& name, Tensor<T>& p) {
    if (!p.has_grad()) return;
    auto& mom = state.moments[name];
    if (mom.m.size() != p.vec().size()) {
      if (!mom.m.empty()) throw ContractError("adam_step: moment shape mismatch for " + name);
      mom.m.assign(p.vec().size(), T(0));
      mom.v.assign(p.vec().size(), T(0));
    }
    kernels::adam_update(p.data(), p.grad(), mom.m.data(), mom.v.data(), p.vec().size(),
                         lr, static_cast<T>(cfg.beta1), static_cast<T>(cfg.beta2),
                         static_cast<T>(cfg.adam_eps), static_cast<T>(cfg.weight_decay),
                         bc1, bc2);
  });
}

struct TrainLogRow {
  int64_t iter = 0;
  float lr = 0, bce = 0, dice = 0, total = 0;
  bool has_eval = false;
  float val_f1 = 0, val_iou = 0, val_oa = 0;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;
  std::string to_csv() const;
};

struct TrainOptions {
  bool augment = true;
  AugmentConfig aug;
  std::string out_dir;  // when set: writes last.cvit (+ best.cvit with val data)
  // Stop once a validation F1 at an eval point reaches this (<= 0: disabled).
  float stop_at_val_f1 = -1.0f;
  int64_t start_iter = 0;  // resume point; the LR schedule continues from here
  // Pause after this many scheduled iterations (< 0: run to max_iter). The
  // LR schedule always spans cfg.max_iter, so a paused-and-resumed run
  // reproduces an uninterrupted one.
  int64_t stop_iter = -1;
  std::function<void(const TrainLogRow&)> on_row;
};

struct TrainResult {
  TrainLog log;
  int64_t iters_run = 0;
  int64_t best_iter = -1;
  float best_val_f1 = -1.0f;
  bool stopped_early = false;
};

// Aggregate (pooled-count) metrics of a model over a dataset at the config
// threshold. Runs one sample at a time.
MetricReport evaluate_model(ModelParams<float>& params, DatasetCache& data);

TrainResult train_loop(ModelParams<float>& params, OptimState<float>& optim,
                       DatasetCache& train_data, DatasetCache* val_data,
                       const TrainConfig& cfg, const TrainOptions& opts);

// ---------------------------------------------------------------------------
// checkpointing
// ---------------------------------------------------------------------------

std::string model_config_canonical(const ModelConfig& cfg);
uint64_t model_config_hash(const ModelConfig& cfg);

struct CheckpointData {
  uint64_t config_hash = 0;
  ModelConfig cfg;
  int64_t iter = 0;
  std::map<std::string, std::pair<Shape, std::vector<float>>> arrays;
};

// Single binary file: "CVIT" magic, u32 format version, u64 config hash, then
// length-prefixed named float arrays (little-endian). Model config fields are
// stored as config/* arrays so a checkpoint is self-describing.
void save_checkpoint(const std::string& path, ModelParams<float>& params,
                     const OptimState<float>* optim, int64_t iter);

CheckpointData read_checkpoint(const std::string& path);

// Rebuilds a model from the checkpoint's embedded config.
ModelParams<float> model_from_checkpoint(const CheckpointData& data);

// Restores weights/optimizer into an existing model; the checkpoint's config
// hash must match the model's. Throws IncompatibilityError otherwise.
void restore_checkpoint(const CheckpointData& data, ModelParams<float>& params,
                        OptimState<float>* optim, int64_t* iter);

}  // namespace cvit
