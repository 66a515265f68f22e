#pragma once

// Evaluation: frame-level ROC AUC, ranked average precision, detection mAP
// over an IoU sweep with greedy per-category matching, and the combined
// report with its JSON and table renderers.

#include <lec/featio.hpp>
#include <lec/infer.hpp>

#include <string>
#include <vector>

namespace lec {

// Mann-Whitney AUC with average ranks for ties. Throws if either class is
// missing.
double roc_auc(const std::vector<int>& labels, const std::vector<double>& scores);

// Step AP: sweep predictions by descending score (ties: earlier index), sum
// precision at each hit, divide by the positive count. Throws without
// positives.
double average_precision(const std::vector<int>& labels, const std::vector<double>& scores);

struct GtInstance {
  int video = 0;
  int64_t s = 0, e = 0;  // 1-based inclusive
  int g = 0;
};

struct PredInstance {
  int video = 0;
  int64_t s = 0, e = 0;
  int g = 0;
  double w = 0;
};

struct DetectionMap {
  std::vector<double> thresholds;
  std::vector<int> categories;          // categories holding >= 1 GT, ascending
  std::vector<std::vector<double>> ap;  // [threshold][category index]
  std::vector<double> map_at;           // mean AP per threshold
  double avg_map = 0;                   // mean over thresholds
};

// Greedy matching per (threshold, category): predictions by descending w
// (ties: video, start, end), each taking the unmatched same-video GT with
// the highest IoU (ties: earlier GT); a hit needs IoU >= threshold. Only
// hits consume GT instances.
DetectionMap detection_map(const std::vector<GtInstance>& gt,
                           const std::vector<PredInstance>& pred,
                           const std::vector<double>& thresholds = {0.1, 0.2, 0.3, 0.4, 0.5});

struct EvalReport {
  int n_videos = 0, n_gt = 0, n_pred = 0;
  double auc = 0;
  double frame_ap = 0;  // average precision over the same per-snippet scores as the AUC
  std::vector<double> thresholds;
  std::vector<double> map_at;
  double avg_map = 0;
  std::vector<int> categories;
  std::vector<std::vector<double>> ap;
  double mean_total_variation = 0;  // mean over videos of sum_t |conf(t+1) - conf(t)|
  double instances_per_gt = 0;      // mean over GT of overlapping same-category predictions

  std::string to_json() const;
  std::string to_table() const;
};

// Scores one test split: per-video confidence curves drive the AUC and the
// smoothness measure, per-video detections drive the detection mAP.
EvalReport evaluate(const Manifest& man, const std::vector<Eigen::VectorXd>& conf,
                    const std::vector<std::vector<AnomalyInstance>>& dets);

}  // namespace lec
