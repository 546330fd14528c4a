#include "cvit/train.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include "cvit/losses.hpp"

namespace cvit {

std::string TrainLog::to_csv() const {
  std::ostringstream os;
  os << "iter,lr,loss_bce,loss_dice,loss_total,val_f1,val_iou,val_oa\n";
  char buf[320];
  for (const auto& r : rows) {
    if (r.has_eval)
      std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                    static_cast<long long>(r.iter), r.lr, r.bce, r.dice, r.total, r.val_f1,
                    r.val_iou, r.val_oa);
    else
      std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.9g,%.9g,,,\n",
                    static_cast<long long>(r.iter), r.lr, r.bce, r.dice, r.total);
    os << buf;
  }
  return os.str();
}

MetricReport evaluate_model(ModelParams<float>& params, DatasetCache& data) {
  ConfusionCounts pooled;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const SamplePair& s = data.get(i);
    TensorF a = TensorF::from_data({1, 3, s.h, s.w}, s.img_a);
    TensorF b = TensorF::from_data({1, 3, s.h, s.w}, s.img_b);
    TensorF prob = forward(a, b, params);
    BinaryMask pred = threshold_map(prob.vec(), s.h, s.w, params.cfg.threshold);
    pooled += confusion(pred, s.mask);
  }
  return metrics(pooled);
}

TrainResult train_loop(ModelParams<float>& params, OptimState<float>& optim,
                       DatasetCache& train_data, DatasetCache* val_data,
                       const TrainConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  if (train_data.size() == 0) throw ContractError("train_loop: empty training manifest");

  TrainResult result;
  namespace fs = std::filesystem;
  if (!opts.out_dir.empty()) fs::create_directories(opts.out_dir);

  auto run_eval = [&](int64_t iter, TrainLogRow& row) {
    if (!val_data) return;
    MetricReport r = evaluate_model(params, *val_data);
    row.has_eval = true;
    row.val_f1 = static_cast<float>(r.f1);
    row.val_iou = static_cast<float>(r.iou);
    row.val_oa = static_cast<float>(r.oa);
    if (row.val_f1 > result.best_val_f1) {
      result.best_val_f1 = row.val_f1;
      result.best_iter = iter;
      if (!opts.out_dir.empty())
        save_checkpoint((fs::path(opts.out_dir) / "best.cvit").string(), params, &optim,
                        iter);
    }
  };

  int64_t end_iter = cfg.max_iter;
  if (opts.stop_iter >= 0) end_iter = std::min<int64_t>(end_iter, opts.stop_iter);
  for (int64_t iter = opts.start_iter; iter < end_iter; ++iter) {
    float lr = poly_lr(iter, cfg);
    Batch batch;
    TensorF prob, mask;
    TensorF bce, dice, total;
    try {
      batch = make_batch(train_data, cfg.batch_size, cfg.seed, iter, opts.augment, opts.aug);
      prob = forward(batch.img_a, batch.img_b, params);
      mask = batch.mask;
      bce = bce_loss(prob, mask);
      dice = dice_loss(prob, mask);
      total = add(bce, dice);
      if (!std::isfinite(total.item()))
        throw NumericError("non-finite loss value");
      params.zero_grads();
      total.backward();
      adam_step(params, optim, lr, cfg);
    } catch (const NumericError& e) {
      std::string ids;
      for (const auto& id : batch.ids) ids += (ids.empty() ? "" : ",") + id;
      throw NumericError("numerical failure at iteration " + std::to_string(iter) +
                         " on batch [" + ids + "]: " + e.what());
    }

    TrainLogRow row;
    row.iter = iter;
    row.lr = lr;
    row.bce = bce.item();
    row.dice = dice.item();
    row.total = total.item();
    int64_t next = iter + 1;
    if (next % cfg.eval_interval == 0 || next == cfg.max_iter) run_eval(next, row);
    result.log.rows.push_back(row);
    if (opts.on_row) opts.on_row(row);
    result.iters_run = next;
    if (opts.stop_at_val_f1 > 0 && row.has_eval && row.val_f1 >= opts.stop_at_val_f1) {
      result.stopped_early = true;
      break;
    }
  }

  if (!opts.out_dir.empty())
    save_checkpoint((fs::path(opts.out_dir) / "last.cvit").string(), params, &optim,
                    result.iters_run);
  return result;
}

}  // namespace cvit
