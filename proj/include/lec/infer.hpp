#pragma once

// Instance extraction from per-snippet scores: category selection by pooled
// softmax, threshold scanning with gap merging, outer-inner confidence
// scoring, and per-category temporal NMS.

#include <lec/config.hpp>
#include <lec/model.hpp>

#include <cstdint>
#include <utility>
#include <vector>

namespace lec {

// 1-based inclusive snippet interval with category and confidence.
struct AnomalyInstance {
  int64_t s = 0;
  int64_t e = 0;
  int g = 0;
  double w = 0;
};

// Per-snippet anomaly confidence for frame-level ranking: the mean of
// (1 - s_m[:,0]) and s_b[:,1], or just the former when the binary branch
// is disabled.
Eigen::VectorXd coarse_scores(const ScoreSet& sc);

// Categories (c >= 1) whose pooled-softmax probability strictly exceeds
// r_cls. Pooling is the top-K column mean with K = max(T/16, 1).
std::vector<int> select_categories(const Eigen::MatrixXd& s_aware, double r_cls);

// Maximal runs where col(t) > r_ano (strict), then runs separated by at
// most `gap` below-threshold snippets are merged. 0-based inclusive pairs.
std::vector<std::pair<int64_t, int64_t>> candidate_instances(const Eigen::VectorXd& col,
                                                             double r_ano, int gap);

// Mean score inside [s, e] minus the mean over the two flanking windows of
// width max(1, round(0.25 * len)), clipped to the signal; with no valid
// flank the inner mean itself. 0-based inclusive.
double outer_inner_confidence(const Eigen::VectorXd& col, int64_t s, int64_t e);

// Intersection-over-union of two inclusive intervals (any consistent base).
double temporal_iou(int64_t s1, int64_t e1, int64_t s2, int64_t e2);

// Greedy per-category suppression: scan by descending w (ties: earlier
// start), drop anything with IoU >= thresh against a kept instance of the
// same category.
std::vector<AnomalyInstance> temporal_nms(std::vector<AnomalyInstance> cand, double iou_thresh);

// Full pipeline over one video's scores; output is sorted by descending w
// (ties: earlier start, then smaller category).
std::vector<AnomalyInstance> detect(const ScoreSet& sc, const Config& cfg);

}  // namespace lec
