// cvit: change-detection trainer/evaluator CLI.
// Subcommands: synth, train, eval, predict, stratify.
// Exit codes: 0 success, 2 usage/config, 3 numerical failure, 4 incompatibility.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "cvit/config.hpp"
#include "cvit/losses.hpp"
#include "cvit/train.hpp"

namespace fs = std::filesystem;
using namespace cvit;

namespace {

std::optional<uint64_t> env_seed() {
  const char* s = std::getenv("CVIT_SEED");
  if (!s || !*s) return std::nullopt;
  char* end = nullptr;
  uint64_t v = std::strtoull(s, &end, 10);
  if (end == s || *end != '\0') throw ConfigError("CVIT_SEED is not an integer");
  return v;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write " + path);
  os << text;
}

int cmd_synth(const std::string& spec_path, const std::string& out, int count,
              uint64_t seed) {
  SynthSpec spec;
  if (!spec_path.empty()) spec = parse_synth_spec_file(spec_path);
  if (auto s = env_seed()) seed = *s;
  auto samples = synth_generate(spec, count, seed);
  write_synth_dataset(out, samples);
  std::printf("wrote %d synthetic pairs to %s\n", count, out.c_str());
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& val_dir, const std::string& out, int iters_override,
              const std::string& resume_path) {
  RunConfig rc = parse_run_config_file(config_path);
  if (auto s = env_seed()) {
    rc.seed = *s;
    rc.train.seed = *s;
  }
  if (!data_dir.empty()) rc.data.train_dir = data_dir;
  if (!val_dir.empty()) rc.data.val_dir = val_dir;
  if (iters_override >= 0) rc.train.max_iter = iters_override;
  if (rc.data.train_dir.empty())
    throw ConfigError("no training data: set data.train_dir or pass --data");
  rc.train.validate();

  DatasetCache train_data(load_dataset(rc.data.train_dir));
  std::optional<DatasetCache> val_data;
  if (!rc.data.val_dir.empty()) val_data.emplace(load_dataset(rc.data.val_dir));

  ModelParams<float> params = ModelParams<float>::init(rc.model, rc.seed);
  OptimState<float> optim;
  TrainOptions opts;
  opts.augment = rc.data.augment;
  opts.aug = rc.data.augment_config();
  opts.out_dir = out;
  if (!resume_path.empty()) {
    CheckpointData ckpt = read_checkpoint(resume_path);
    restore_checkpoint(ckpt, params, &optim, &opts.start_iter);
    std::printf("resumed from %s at iteration %lld\n", resume_path.c_str(),
                static_cast<long long>(opts.start_iter));
  }
  opts.on_row = [](const TrainLogRow& r) {
    if (r.has_eval)
      std::printf("iter %lld lr %.3g loss %.4f val_f1 %.4f val_iou %.4f val_oa %.4f\n",
                  static_cast<long long>(r.iter + 1), static_cast<double>(r.lr), r.total,
                  r.val_f1, r.val_iou, r.val_oa);
  };

  TrainResult res = train_loop(params, optim, train_data, val_data ? &*val_data : nullptr,
                               rc.train, opts);
  if (rc.train.max_iter == 0) {
    // degenerate run: emit the initial checkpoint
    fs::create_directories(out);
    save_checkpoint((fs::path(out) / "last.cvit").string(), params, &optim, 0);
  }
  write_text((fs::path(out) / "train_log.csv").string(), res.log.to_csv());
  std::printf("finished %lld iterations; artifacts in %s\n",
              static_cast<long long>(res.iters_run), out.c_str());
  if (res.best_iter >= 0)
    std::printf("best val F1 %.4f at iteration %lld (best.cvit)\n", res.best_val_f1,
                static_cast<long long>(res.best_iter));
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
             const std::string& split, const std::string& out_dir) {
  CheckpointData ckpt = read_checkpoint(ckpt_path);
  ModelParams<float> params = model_from_checkpoint(ckpt);
  DatasetManifest manifest =
      split.empty() ? load_dataset(data_dir) : load_dataset(data_dir, split);
  DatasetCache data(manifest);

  fs::create_directories(out_dir);
  std::ostringstream per_sample;
  per_sample << "id,change_ratio,precision,recall,f1,iou,oa\n";
  ConfusionCounts pooled;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const SamplePair& s = data.get(i);
    TensorF a = TensorF::from_data({1, 3, s.h, s.w}, s.img_a);
    TensorF b = TensorF::from_data({1, 3, s.h, s.w}, s.img_b);
    TensorF prob = forward(a, b, params);
    BinaryMask pred = threshold_map(prob.vec(), s.h, s.w, params.cfg.threshold);
    ConfusionCounts c = confusion(pred, s.mask);
    pooled += c;
    MetricReport m = metrics(c);
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%s,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", s.id.c_str(),
                  s.change_ratio, m.precision, m.recall, m.f1, m.iou, m.oa);
    per_sample << buf;
  }
  MetricReport agg = metrics(pooled);
  write_text((fs::path(out_dir) / "metrics.csv").string(), metric_report_csv(agg));
  write_text((fs::path(out_dir) / "per_sample.csv").string(), per_sample.str());
  std::printf("samples %zu  F1 %.4f  IoU %.4f  OA %.4f\n", data.size(), agg.f1, agg.iou,
              agg.oa);
  if (agg.degenerate)
    std::fprintf(stderr, "warning: degenerate metrics flagged (a zero denominator was pinned to 0)\n");
  return 0;
}

int cmd_predict(const std::string& ckpt_path, const std::string& a_path,
                const std::string& b_path, const std::string& out_prefix) {
  CheckpointData ckpt = read_checkpoint(ckpt_path);
  ModelParams<float> params = model_from_checkpoint(ckpt);

  auto load_rgb = [](const std::string& path, int& h, int& w) {
    ImageU8 img = read_png(path);
    if (img.c != 3) throw IoError("expected an RGB image: " + path);
    h = img.h;
    w = img.w;
    std::vector<float> chw(static_cast<std::size_t>(3) * h * w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c)
          chw[(static_cast<std::size_t>(c) * h + y) * w + x] =
              img.px[(static_cast<std::size_t>(y) * w + x) * 3 + c] / 255.0f;
    return chw;
  };
  int ha = 0, wa = 0, hb = 0, wb = 0;
  auto ca = load_rgb(a_path, ha, wa);
  auto cb = load_rgb(b_path, hb, wb);
  if (ha != hb || wa != wb) throw IoError("A and B images must share dimensions");

  TensorF a = TensorF::from_data({1, 3, ha, wa}, std::move(ca));
  TensorF b = TensorF::from_data({1, 3, hb, wb}, std::move(cb));
  TensorF prob = forward(a, b, params);

  ImageU8 prob_img;
  prob_img.h = ha;
  prob_img.w = wa;
  prob_img.c = 1;
  prob_img.px.resize(static_cast<std::size_t>(ha) * wa);
  for (std::size_t i = 0; i < prob_img.px.size(); ++i)
    prob_img.px[i] = static_cast<uint8_t>(std::lround(255.0f * prob.vec()[i]));

  BinaryMask pred = threshold_map(prob.vec(), ha, wa, params.cfg.threshold);
  ImageU8 bin_img = prob_img;
  for (std::size_t i = 0; i < bin_img.px.size(); ++i) bin_img.px[i] = pred.v[i] ? 255 : 0;

  write_png(out_prefix + "_prob.png", prob_img);
  write_png(out_prefix + "_mask.png", bin_img);
  std::printf("predicted change ratio %.6f; wrote %s_prob.png and %s_mask.png\n",
              pred.ones_ratio(), out_prefix.c_str(), out_prefix.c_str());
  return 0;
}

int cmd_stratify(const std::string& pred_dir, const std::string& pred_dir_b,
                 const std::string& label_dir, int buckets, const std::string& out_path) {
  std::vector<EvalSample> samples;
  for (const auto& entry : fs::directory_iterator(label_dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".png") continue;
    std::string id = entry.path().stem().string();
    BinaryMask truth = binarize_mask(read_png(entry.path().string()));
    fs::path pa = fs::path(pred_dir) / (id + ".png");
    if (!fs::exists(pa)) throw IoError("missing prediction " + pa.string());
    EvalSample s;
    s.id = id;
    s.change_ratio = truth.ones_ratio();
    s.counts_a = confusion(binarize_mask(read_png(pa.string())), truth);
    if (!pred_dir_b.empty()) {
      fs::path pb = fs::path(pred_dir_b) / (id + ".png");
      if (!fs::exists(pb)) throw IoError("missing prediction " + pb.string());
      s.counts_b = confusion(binarize_mask(read_png(pb.string())), truth);
    }
    samples.push_back(std::move(s));
  }
  SizeBucketReport report = size_stratified_eval(std::move(samples), buckets);
  std::string csv = report.to_csv();
  write_text(out_path, csv);
  std::fputs(csv.c_str(), stdout);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bi-temporal change detection: synthesize, train, evaluate, predict"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "generate a synthetic A/B/label dataset");
  std::string synth_spec, synth_out = "synth_data";
  int synth_count = 16;
  uint64_t synth_seed = 0;
  synth->add_option("--spec", synth_spec, "synth spec file (key = value)");
  synth->add_option("--out", synth_out, "output dataset directory")->required();
  synth->add_option("--count", synth_count, "number of pairs");
  synth->add_option("--seed", synth_seed, "generator seed");

  auto* train = app.add_subcommand("train", "train a model from a run config");
  std::string train_config, train_data, train_val, train_out = "run", train_resume;
  int train_iters = -1;
  train->add_option("--config", train_config, "run config file")->required();
  train->add_option("--data", train_data, "training split directory (A/B/label)");
  train->add_option("--val", train_val, "validation split directory");
  train->add_option("--out", train_out, "output directory for checkpoints and the log");
  train->add_option("--iters", train_iters, "override train.max_iter");
  train->add_option("--resume", train_resume, "checkpoint to resume from");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  std::string eval_ckpt, eval_data, eval_split = "test", eval_out = ".";
  eval->add_option("--checkpoint", eval_ckpt, "model checkpoint")->required();
  eval->add_option("--data", eval_data, "dataset root")->required();
  eval->add_option("--split", eval_split, "split subdirectory ('' = root is the split)");
  eval->add_option("--out", eval_out, "directory for metrics.csv / per_sample.csv");

  auto* predict = app.add_subcommand("predict", "predict a change map for one pair");
  std::string pr_ckpt, pr_a, pr_b, pr_out = "prediction";
  predict->add_option("--checkpoint", pr_ckpt, "model checkpoint")->required();
  predict->add_option("--a", pr_a, "phase-A PNG")->required();
  predict->add_option("--b", pr_b, "phase-B PNG")->required();
  predict->add_option("--out", pr_out, "output prefix (<out>_prob.png, <out>_mask.png)");

  auto* strat = app.add_subcommand("stratify", "size-stratified evaluation of predictions");
  std::string st_pred, st_pred_b, st_label, st_out = "stratify.csv";
  int st_buckets = 5;
  strat->add_option("--pred-dir", st_pred, "binary prediction PNGs")->required();
  strat->add_option("--pred-dir-b", st_pred_b, "second method's predictions (delta-IoU)");
  strat->add_option("--label-dir", st_label, "ground-truth label PNGs")->required();
  strat->add_option("--buckets", st_buckets, "bucket count");
  strat->add_option("--out", st_out, "output CSV path");

  try {
    app.parse(argc, argv);
    if (synth->parsed()) return cmd_synth(synth_spec, synth_out, synth_count, synth_seed);
    if (train->parsed())
      return cmd_train(train_config, train_data, train_val, train_out, train_iters,
                       train_resume);
    if (eval->parsed()) return cmd_eval(eval_ckpt, eval_data, eval_split, eval_out);
    if (predict->parsed()) return cmd_predict(pr_ckpt, pr_a, pr_b, pr_out);
    if (strat->parsed()) return cmd_stratify(st_pred, st_pred_b, st_label, st_buckets, st_out);
    return 2;
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;  // --help is a success; malformed usage is 2
  } catch (const IncompatibilityError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
