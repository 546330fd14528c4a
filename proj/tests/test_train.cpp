#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "cvit/config.hpp"
#include "cvit/train.hpp"
#include "test_support.hpp"

using namespace cvit;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() /
               ("cvit_train_" + std::to_string(::getpid()) + "_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

ModelConfig micro_config() {
  ModelConfig c = ModelConfig::tiny();
  c.image_size = 32;
  c.vit_dim = 32;
  c.vit_layers = 1;
  c.vit_heads = 2;
  c.detail_channels = {8, 12, 16};
  c.decoder_channels = {8, 8, 12, 16};
  return c;
}

DatasetCache micro_dataset(const std::string& name, int n, uint64_t seed) {
  SynthSpec spec;
  spec.canvas = 32;
  spec.num_objects = 3;
  spec.size_min = 0.02;
  spec.size_max = 0.12;
  spec.noise = 0.01;
  fs::path dir = fresh_dir(name);
  write_synth_dataset(dir.string(), synth_generate(spec, n, seed));
  return DatasetCache(load_dataset(dir.string()));
}

}  // namespace

TEST_CASE("poly_lr: endpoints, midpoint, and domain") {
  TrainConfig cfg;
  cfg.max_iter = 1000;
  CHECK(poly_lr(0, cfg) == 2e-4f);  // exact in float
  CHECK(poly_lr(1000, cfg) == 0.0f);
  CHECK(poly_lr(500, cfg) == doctest::Approx(2e-4 * std::pow(0.5, 0.9)).epsilon(1e-6));
  CHECK(poly_lr(500, cfg) == doctest::Approx(1.0718e-4).epsilon(1e-3));
  CHECK_THROWS_AS(poly_lr(1001, cfg), ContractError);
  CHECK_THROWS_AS(poly_lr(-1, cfg), ContractError);
}

TEST_CASE("poly_lr: strictly decreasing for a positive exponent") {
  TrainConfig cfg;
  cfg.max_iter = 128;
  float prev = poly_lr(0, cfg);
  for (int i = 1; i <= 128; ++i) {
    float lr = poly_lr(i, cfg);
    CHECK(lr < prev);
    prev = lr;
  }
}

TEST_CASE("adam_step: zero gradients with zero weight decay keep params fixed") {
  auto params = ModelParams<float>::init(micro_config(), 7);
  std::vector<float> before;
  params.visit([&](const std::string&, Tensor<float>& t) {
    before.insert(before.end(), t.vec().begin(), t.vec().end());
  });
  params.zero_grads();  // allocates zero grad buffers
  OptimState<float> optim;
  TrainConfig cfg;
  cfg.weight_decay = 0.0f;
  adam_step(params, optim, 1e-3f, cfg);
  std::vector<float> after;
  params.visit([&](const std::string&, Tensor<float>& t) {
    after.insert(after.end(), t.vec().begin(), t.vec().end());
  });
  CHECK(before == after);
  CHECK(optim.t == 1);
}

TEST_CASE("adam: single-scalar first step equals -lr within eps") {
  // bias-corrected moments are exactly 1 when g = 1 at t = 1
  float w = 0.0f, g = 1.0f, m = 0.0f, v = 0.0f;
  kernels::adam_update(&w, &g, &m, &v, 1, 0.01f, 0.9f, 0.99f, 1e-8f, 0.0f,
                       1.0f - 0.9f, 1.0f - 0.99f);
  CHECK(w == doctest::Approx(-0.01 / (1.0 + 1e-8)).epsilon(1e-6));
}

TEST_CASE("adam: converges on f(w) = w^2 from w = 1") {
  float w = 1.0f, m = 0.0f, v = 0.0f;
  TrainConfig cfg;
  float prev = w;
  bool monotone = true;
  for (int t = 1; t <= 100; ++t) {
    float g = 2.0f * w;
    float bc1 = 1.0f - std::pow(0.9f, static_cast<float>(t));
    float bc2 = 1.0f - std::pow(0.99f, static_cast<float>(t));
    kernels::adam_update(&w, &g, &m, &v, 1, 0.01f, 0.9f, 0.99f, 1e-8f, 0.0f, bc1, bc2);
    if (std::fabs(w) > std::fabs(prev) && std::fabs(prev) > 0.5f) monotone = false;
    prev = w;
  }
  CHECK(monotone);
  CHECK(std::fabs(w) < 0.5f);
}

TEST_CASE("train_loop: zero iterations returns init params and an empty log") {
  auto params = ModelParams<float>::init(micro_config(), 11);
  auto data = micro_dataset("zero_iter", 4, 1);
  OptimState<float> optim;
  TrainConfig cfg;
  cfg.max_iter = 0;
  TrainOptions opts;
  opts.augment = false;
  std::vector<float> before;
  params.visit([&](const std::string&, Tensor<float>& t) {
    before.insert(before.end(), t.vec().begin(), t.vec().end());
  });
  TrainResult res = train_loop(params, optim, data, nullptr, cfg, opts);
  CHECK(res.log.rows.empty());
  CHECK(res.iters_run == 0);
  std::vector<float> after;
  params.visit([&](const std::string&, Tensor<float>& t) {
    after.insert(after.end(), t.vec().begin(), t.vec().end());
  });
  CHECK(before == after);
}

TEST_CASE("train_loop: initial loss sits in the analytic band") {
  // sigmoid of a near-zero head output gives P ~= 0.5, so bce ~= 1 and the
  // dice term stays moderate: total in (0.5, 2.5).
  auto params = ModelParams<float>::init(micro_config(), 13);
  auto data = micro_dataset("band", 4, 2);
  OptimState<float> optim;
  TrainConfig cfg;
  cfg.max_iter = 1;
  cfg.batch_size = 4;
  TrainOptions opts;
  opts.augment = false;
  TrainResult res = train_loop(params, optim, data, nullptr, cfg, opts);
  REQUIRE(res.log.rows.size() == 1);
  CHECK(res.log.rows[0].total > 0.5f);
  CHECK(res.log.rows[0].total < 2.5f);
}

TEST_CASE("train_loop: same seed gives byte-identical training logs") {
  TrainConfig cfg;
  cfg.max_iter = 5;
  cfg.batch_size = 2;
  cfg.seed = 42;
  TrainOptions opts;
  opts.augment = true;

  auto run = [&] {
    auto params = ModelParams<float>::init(micro_config(), 17);
    auto data = micro_dataset("determinism", 5, 3);
    OptimState<float> optim;
    return train_loop(params, optim, data, nullptr, cfg, opts).log.to_csv();
  };
  std::string a = run();
  std::string b = run();
  CHECK(a == b);
}

TEST_CASE("checkpoint: save/load round-trip is exact") {
  auto params = ModelParams<float>::init(micro_config(), 19);
  OptimState<float> optim;
  // give the optimizer some state
  auto data = micro_dataset("ckpt", 4, 4);
  TrainConfig cfg;
  cfg.max_iter = 2;
  cfg.batch_size = 2;
  TrainOptions opts;
  opts.augment = false;
  train_loop(params, optim, data, nullptr, cfg, opts);

  fs::path dir = fresh_dir("ckpt_files");
  std::string path = (dir / "model.cvit").string();
  save_checkpoint(path, params, &optim, 2);

  CheckpointData loaded = read_checkpoint(path);
  CHECK(loaded.iter == 2);
  CHECK(loaded.config_hash == model_config_hash(params.cfg));

  auto restored = ModelParams<float>::init(micro_config(), 999);  // different init
  OptimState<float> optim2;
  int64_t iter = -1;
  restore_checkpoint(loaded, restored, &optim2, &iter);
  CHECK(iter == 2);
  CHECK(optim2.t == optim.t);

  bool identical = true;
  params.visit([&](const std::string& name, Tensor<float>& t) {
    bool found = false;
    restored.visit([&](const std::string& name2, Tensor<float>& t2) {
      if (name2 == name) {
        found = true;
        if (t.vec() != t2.vec()) identical = false;
      }
    });
    if (!found) identical = false;
  });
  CHECK(identical);

  for (const auto& [name, mom] : optim.moments) {
    REQUIRE(optim2.moments.count(name));
    CHECK(optim2.moments[name].m == mom.m);
    CHECK(optim2.moments[name].v == mom.v);
  }
}

TEST_CASE("checkpoint: truncated file and config mismatch are errors") {
  auto params = ModelParams<float>::init(micro_config(), 23);
  fs::path dir = fresh_dir("ckpt_bad");
  std::string path = (dir / "model.cvit").string();
  save_checkpoint(path, params, nullptr, 0);

  // truncate
  auto size = fs::file_size(path);
  fs::resize_file(path, size / 2);
  CHECK_THROWS_AS(read_checkpoint(path), IoError);

  // config mismatch
  save_checkpoint(path, params, nullptr, 0);
  CheckpointData data = read_checkpoint(path);
  ModelConfig other = micro_config();
  other.vit_dim = 64;
  other.vit_heads = 4;
  auto other_params = ModelParams<float>::init(other, 23);
  CHECK_THROWS_AS(restore_checkpoint(data, other_params, nullptr, nullptr),
                  IncompatibilityError);
}

TEST_CASE("resume equivalence: train(2)+resume(3) equals train(5)") {
  TrainConfig cfg;
  cfg.max_iter = 5;
  cfg.batch_size = 2;
  cfg.seed = 7;
  TrainOptions opts;
  opts.augment = true;

  // straight run
  auto params_full = ModelParams<float>::init(micro_config(), 29);
  auto data_full = micro_dataset("resume_a", 5, 5);
  OptimState<float> optim_full;
  TrainResult full = train_loop(params_full, optim_full, data_full, nullptr, cfg, opts);

  // split run
  auto params_split = ModelParams<float>::init(micro_config(), 29);
  auto data_split = micro_dataset("resume_b", 5, 5);
  OptimState<float> optim_split;
  TrainOptions opts_first = opts;
  opts_first.stop_iter = 2;  // pause inside the same 5-iteration schedule
  TrainResult first = train_loop(params_split, optim_split, data_split, nullptr, cfg, opts_first);

  fs::path dir = fresh_dir("resume_ckpt");
  std::string path = (dir / "mid.cvit").string();
  save_checkpoint(path, params_split, &optim_split, first.iters_run);

  auto params_res = ModelParams<float>::init(micro_config(), 999);
  OptimState<float> optim_res;
  int64_t start = 0;
  restore_checkpoint(read_checkpoint(path), params_res, &optim_res, &start);
  CHECK(start == 2);
  TrainOptions opts_res = opts;
  opts_res.start_iter = start;
  TrainResult second = train_loop(params_res, optim_res, data_split, nullptr, cfg, opts_res);

  REQUIRE(full.log.rows.size() == 5);
  REQUIRE(first.log.rows.size() + second.log.rows.size() == 5);
  for (std::size_t i = 0; i < second.log.rows.size(); ++i) {
    const auto& a = full.log.rows[2 + i];
    const auto& b = second.log.rows[i];
    CHECK(a.iter == b.iter);
    CHECK(a.lr == b.lr);  // schedule continues from the stored iteration
    CHECK(std::fabs(a.total - b.total) <= 1e-6f);
  }
}

TEST_CASE("training log csv layout") {
  TrainLog log;
  TrainLogRow r;
  r.iter = 3;
  r.lr = 1e-4f;
  r.bce = 0.9f;
  r.dice = 0.4f;
  r.total = 1.3f;
  log.rows.push_back(r);
  r.iter = 4;
  r.has_eval = true;
  r.val_f1 = 0.5f;
  r.val_iou = 0.33f;
  r.val_oa = 0.9f;
  log.rows.push_back(r);
  std::string csv = log.to_csv();
  CHECK(csv.find("iter,lr,loss_bce,loss_dice,loss_total,val_f1,val_iou,val_oa\n") == 0);
  CHECK(csv.find("\n3,") != std::string::npos);
  CHECK(csv.find(",,,\n") != std::string::npos);  // no-eval row leaves val cells empty
}
