#include "cvit/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "cvit/errors.hpp"

namespace cvit {

double BinaryMask::ones_ratio() const {
  if (v.empty()) return 0;
  uint64_t ones = 0;
  for (uint8_t b : v) ones += b;
  return static_cast<double>(ones) / static_cast<double>(v.size());
}

BinaryMask threshold_map(const std::vector<float>& probs, int h, int w, float tau) {
  if (probs.size() != static_cast<std::size_t>(h) * w)
    throw DimensionError("threshold_map: size mismatch");
  BinaryMask m(h, w);
  for (std::size_t i = 0; i < probs.size(); ++i) m.v[i] = probs[i] >= tau ? 1 : 0;
  return m;
}

ConfusionCounts confusion(const BinaryMask& pred, const BinaryMask& truth) {
  if (pred.h != truth.h || pred.w != truth.w)
    throw DimensionError("confusion: mask shapes disagree");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.v.size(); ++i) {
    if (truth.v[i]) {
      if (pred.v[i]) ++c.tp;
      else ++c.fn;
    } else {
      if (pred.v[i]) ++c.fp;
      else ++c.tn;
    }
  }
  return c;
}

MetricReport metrics(const ConfusionCounts& c) {
  if (c.total() == 0) throw ContractError("metrics: all confusion counts are zero");
  MetricReport r;
  auto tp = static_cast<double>(c.tp);
  auto fp = static_cast<double>(c.fp);
  auto tn = static_cast<double>(c.tn);
  auto fn = static_cast<double>(c.fn);

  if (c.tp + c.fp > 0) r.precision = tp / (tp + fp);
  else r.degenerate = true;
  if (c.tp + c.fn > 0) r.recall = tp / (tp + fn);
  else r.degenerate = true;
  if (c.tp + c.fp + c.fn > 0) {
    r.f1 = 2.0 * tp / (2.0 * tp + fp + fn);
    r.iou = tp / (tp + fn + fp);
  } else {
    r.degenerate = true;
  }
  r.oa = (tp + tn) / (tp + tn + fp + fn);
  return r;
}

std::string metric_report_csv(const MetricReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "precision,recall,f1,iou,oa,degenerate\n%.9g,%.9g,%.9g,%.9g,%.9g,%d\n",
                r.precision, r.recall, r.f1, r.iou, r.oa, r.degenerate ? 1 : 0);
  return buf;
}

std::string SizeBucketReport::to_csv() const {
  std::ostringstream os;
  os << "bucket_index,n,mean_ratio,f1,iou,oa,delta_iou\n";
  char buf[256];
  for (const auto& b : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%.9g,%.9g,%.9g,%.9g,", b.index, b.n,
                  b.mean_ratio, b.report.f1, b.report.iou, b.report.oa);
    os << buf;
    if (has_delta) {
      std::snprintf(buf, sizeof(buf), "%.9g", b.delta_iou);
      os << buf;
    }
    os << "\n";
  }
  return os.str();
}

SizeBucketReport size_stratified_eval(std::vector<EvalSample> samples, int k) {
  if (k < 1) throw ContractError("size_stratified_eval: bucket count must be positive");
  if (static_cast<int>(samples.size()) < k)
    throw ContractError("size_stratified_eval: fewer samples (" +
                        std::to_string(samples.size()) + ") than buckets (" +
                        std::to_string(k) + ")");
  bool expect_b = samples.front().counts_b.has_value();
  for (const auto& s : samples)
    if (s.counts_b.has_value() != expect_b)
      throw ContractError("size_stratified_eval: second-method counts must be given for "
                          "all samples or none");

  // Deterministic under ratio ties: sort by (ratio, id).
  std::sort(samples.begin(), samples.end(), [](const EvalSample& a, const EvalSample& b) {
    if (a.change_ratio != b.change_ratio) return a.change_ratio < b.change_ratio;
    return a.id < b.id;
  });

  const int n = static_cast<int>(samples.size());
  const int q = n / k;
  const int rem = n % k;

  SizeBucketReport report;
  report.buckets = k;
  report.has_delta = expect_b;
  int pos = 0;
  for (int b = 0; b < k; ++b) {
    int size = q + (b < rem ? 1 : 0);
    SizeBucket bucket;
    bucket.index = b;
    bucket.n = size;
    double sum_ratio = 0, sum_p = 0, sum_r = 0, sum_f1 = 0, sum_iou = 0, sum_oa = 0;
    double sum_iou_b = 0;
    bool degenerate = false;
    for (int i = 0; i < size; ++i, ++pos) {
      const EvalSample& s = samples[static_cast<std::size_t>(pos)];
      sum_ratio += s.change_ratio;
      MetricReport m = metrics(s.counts_a);
      degenerate = degenerate || m.degenerate;
      sum_p += m.precision;
      sum_r += m.recall;
      sum_f1 += m.f1;
      sum_iou += m.iou;
      sum_oa += m.oa;
      if (expect_b) {
        MetricReport mb = metrics(*s.counts_b);
        degenerate = degenerate || mb.degenerate;
        sum_iou_b += mb.iou;
      }
    }
    double inv = size > 0 ? 1.0 / size : 0.0;
    bucket.mean_ratio = sum_ratio * inv;
    bucket.report.precision = sum_p * inv;
    bucket.report.recall = sum_r * inv;
    bucket.report.f1 = sum_f1 * inv;
    bucket.report.iou = sum_iou * inv;
    bucket.report.oa = sum_oa * inv;
    bucket.report.degenerate = degenerate;
    if (expect_b) {
      bucket.iou_b = sum_iou_b * inv;
      bucket.delta_iou = bucket.report.iou - bucket.iou_b;
    }
    report.rows.push_back(bucket);
  }
  return report;
}

}  // namespace cvit
