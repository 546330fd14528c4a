#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace cvit {

// Confusion-count metrics and the change-size-stratified evaluation protocol.

struct BinaryMask {
  int h = 0, w = 0;
  std::vector<uint8_t> v;  // strictly 0/1

  BinaryMask() = default;
  BinaryMask(int hh, int ww) : h(hh), w(ww), v(static_cast<std::size_t>(hh) * ww, 0) {}
  std::size_t size() const { return v.size(); }
  double ones_ratio() const;
};

struct ConfusionCounts {
  uint64_t tp = 0, fp = 0, tn = 0, fn = 0;

  uint64_t total() const { return tp + fp + tn + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }
  friend ConfusionCounts operator+(ConfusionCounts a, const ConfusionCounts& b) {
    return a += b;
  }
  bool operator==(const ConfusionCounts&) const = default;
};

struct MetricReport {
  double precision = 0, recall = 0, f1 = 0, iou = 0, oa = 0;
  // Set when any defining denominator was zero and the metric was pinned to 0.
  bool degenerate = false;
};

// Threshold a probability map at tau; ties (p == tau) go to 1.
BinaryMask threshold_map(const std::vector<float>& probs, int h, int w, float tau);

ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& truth);

// All five metrics from the counts. Throws ContractError when every count is
// zero; pins metrics with zero denominators to 0 and sets the degenerate flag.
MetricReport metrics(const ConfusionCounts& c);

std::string metric_report_csv(const MetricReport& r);

// ---------------------------------------------------------------------------
// size-stratified evaluation
// ---------------------------------------------------------------------------

struct EvalSample {
  std::string id;
  double change_ratio = 0;  // from the ground-truth mask
  ConfusionCounts counts_a;
  std::optional<ConfusionCounts> counts_b;  // second method, for delta-IoU
};

struct SizeBucket {
  int index = 0;
  int n = 0;
  double mean_ratio = 0;
  MetricReport report;    // per-sample metrics averaged within the bucket
  double iou_b = 0;       // second method's mean IoU (when present)
  double delta_iou = 0;   // method A - method B
};

struct SizeBucketReport {
  int buckets = 0;
  bool has_delta = false;
  std::vector<SizeBucket> rows;

  std::string to_csv() const;
};

// Sort ascending by (change_ratio, id), split into k near-equal buckets with
// the remainder spread over the earliest buckets, and report per-bucket
// per-sample-mean metrics. Throws ContractError with fewer samples than
// buckets.
SizeBucketReport size_stratified_eval(std::vector<EvalSample> samples, int k = 5);

}  // namespace cvit
