#pragma once

#include <string>

#include "cvit/data.hpp"
#include "cvit/model.hpp"
#include "cvit/train.hpp"

namespace cvit {

// Run configuration: plain-text key-value file with [model]/[train]/[data]
// sections. Parsing is strict: unknown sections or keys are ConfigErrors.

struct DataConfig {
  std::string train_dir, val_dir;
  bool augment = true;
  bool augment_flip = true;
  bool augment_crop = true;
  double crop_min = 0.8;

  AugmentConfig augment_config() const {
    AugmentConfig a;
    a.flip = augment_flip;
    a.crop = augment_crop;
    a.crop_min = crop_min;
    return a;
  }
};

struct RunConfig {
  uint64_t seed = 0;
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
};

RunConfig parse_run_config_text(const std::string& text);
RunConfig parse_run_config_file(const std::string& path);

SynthSpec parse_synth_spec_text(const std::string& text);
SynthSpec parse_synth_spec_file(const std::string& path);

}  // namespace cvit
