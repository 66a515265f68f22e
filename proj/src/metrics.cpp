#include <lec/metrics.hpp>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

namespace lec {

double roc_auc(const std::vector<int>& labels, const std::vector<double>& scores) {
  detail::require(labels.size() == scores.size() && !labels.empty(),
                  "roc_auc: labels and scores must align");
  const size_t n = labels.size();
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t(0));
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  // average ranks across tied scores (1-based ranks)
  std::vector<double> rank(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const double r = 0.5 * double(i + 1 + j + 1);
    for (size_t k = i; k <= j; ++k) rank[idx[k]] = r;
    i = j + 1;
  }

  double pos = 0, rank_sum = 0;
  for (size_t k = 0; k < n; ++k)
    if (labels[k]) {
      pos += 1;
      rank_sum += rank[k];
    }
  const double neg = double(n) - pos;
  detail::require(pos > 0 && neg > 0, "roc_auc: need both classes");
  return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

double average_precision(const std::vector<int>& labels, const std::vector<double>& scores) {
  detail::require(labels.size() == scores.size() && !labels.empty(),
                  "average_precision: labels and scores must align");
  const size_t n = labels.size();
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t(0));
  std::stable_sort(idx.begin(), idx.end(),
                   [&](size_t a, size_t b) { return scores[a] > scores[b]; });
  double pos = 0;
  for (int l : labels) pos += l ? 1 : 0;
  detail::require(pos > 0, "average_precision: no positives");
  double hits = 0, ap = 0;
  for (size_t k = 0; k < n; ++k) {
    if (labels[idx[k]]) {
      hits += 1;
      ap += hits / double(k + 1);
    }
  }
  return ap / pos;
}

namespace {

// one category at one threshold: ranked TP/FP against consumable GT
double category_ap(const std::vector<GtInstance>& gt, const std::vector<const PredInstance*>& pred,
                   double thresh) {
  std::vector<char> used(gt.size(), 0);
  double hits = 0, ap = 0;
  for (size_t k = 0; k < pred.size(); ++k) {
    const auto& p = *pred[k];
    double best = -1;
    size_t best_i = gt.size();
    for (size_t gi = 0; gi < gt.size(); ++gi) {
      if (used[gi] || gt[gi].video != p.video) continue;
      const double iou = temporal_iou(gt[gi].s, gt[gi].e, p.s, p.e);
      if (iou > best) {  // ties keep the earliest GT
        best = iou;
        best_i = gi;
      }
    }
    if (best_i < gt.size() && best >= thresh) {
      used[best_i] = 1;
      hits += 1;
      ap += hits / double(k + 1);
    }
  }
  return ap / double(gt.size());
}

}  // namespace

DetectionMap detection_map(const std::vector<GtInstance>& gt, const std::vector<PredInstance>& pred,
                           const std::vector<double>& thresholds) {
  DetectionMap out;
  out.thresholds = thresholds;

  std::set<int> cats;
  for (const auto& g : gt) cats.insert(g.g);
  out.categories.assign(cats.begin(), cats.end());

  std::vector<const PredInstance*> order;
  order.reserve(pred.size());
  for (const auto& p : pred) order.push_back(&p);
  std::sort(order.begin(), order.end(), [](const PredInstance* a, const PredInstance* b) {
    if (a->w != b->w) return a->w > b->w;
    if (a->video != b->video) return a->video < b->video;
    if (a->s != b->s) return a->s < b->s;
    return a->e < b->e;
  });

  for (double th : thresholds) {
    std::vector<double> row;
    double sum = 0;
    for (int c : out.categories) {
      std::vector<GtInstance> gt_c;
      for (const auto& g : gt)
        if (g.g == c) gt_c.push_back(g);
      std::vector<const PredInstance*> pred_c;
      for (const auto* p : order)
        if (p->g == c) pred_c.push_back(p);
      const double ap = category_ap(gt_c, pred_c, th);
      row.push_back(ap);
      sum += ap;
    }
    out.ap.push_back(row);
    out.map_at.push_back(out.categories.empty() ? 0.0 : sum / double(out.categories.size()));
  }
  out.avg_map = out.map_at.empty()
                    ? 0.0
                    : std::accumulate(out.map_at.begin(), out.map_at.end(), 0.0) /
                          double(out.map_at.size());
  return out;
}

EvalReport evaluate(const Manifest& man, const std::vector<Eigen::VectorXd>& conf,
                    const std::vector<std::vector<AnomalyInstance>>& dets) {
  const size_t n = man.videos.size();
  detail::require(conf.size() == n && dets.size() == n,
                  "evaluate: one confidence curve and one detection list per video");

  std::vector<int> labels;
  std::vector<double> scores;
  std::vector<GtInstance> gt;
  std::vector<PredInstance> pred;
  double tv = 0;

  for (size_t i = 0; i < n; ++i) {
    const auto& v = man.videos[i];
    detail::require(int64_t(v.frame_labels.size()) == v.T,
                    "evaluate: video '" + v.id + "' lacks frame labels");
    detail::require(conf[i].size() == v.T,
                    "evaluate: confidence length mismatch on video '" + v.id + "'");
    for (int64_t t = 0; t < v.T; ++t) {
      labels.push_back(v.frame_labels[size_t(t)]);
      scores.push_back(conf[i](t));
    }
    for (int64_t t = 0; t + 1 < v.T; ++t) tv += std::abs(conf[i](t + 1) - conf[i](t));
    for (const auto& inst : v.instances) gt.push_back({int(i), inst.s, inst.e, inst.g});
    for (const auto& d : dets[i]) pred.push_back({int(i), d.s, d.e, d.g, d.w});
  }

  EvalReport rep;
  rep.n_videos = int(n);
  rep.n_gt = int(gt.size());
  rep.n_pred = int(pred.size());
  rep.auc = roc_auc(labels, scores);
  rep.frame_ap = average_precision(labels, scores);
  rep.mean_total_variation = n ? tv / double(n) : 0.0;

  DetectionMap dm = detection_map(gt, pred);
  rep.thresholds = dm.thresholds;
  rep.map_at = dm.map_at;
  rep.avg_map = dm.avg_map;
  rep.categories = dm.categories;
  rep.ap = dm.ap;

  if (!gt.empty()) {
    double overlaps = 0;
    for (const auto& g : gt)
      for (const auto& p : pred)
        if (p.video == g.video && p.g == g.g && temporal_iou(g.s, g.e, p.s, p.e) > 0.0)
          overlaps += 1;
    rep.instances_per_gt = overlaps / double(gt.size());
  }
  return rep;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["n_videos"] = n_videos;
  j["n_gt"] = n_gt;
  j["n_pred"] = n_pred;
  j["frame_auc"] = auc;
  j["frame_ap"] = frame_ap;
  for (size_t i = 0; i < thresholds.size(); ++i) {
    std::ostringstream key;
    key << "map@" << std::fixed << std::setprecision(2) << thresholds[i];
    j[key.str()] = map_at[i];
  }
  j["map_avg"] = avg_map;
  j["mean_total_variation"] = mean_total_variation;
  j["instances_per_gt"] = instances_per_gt;
  nlohmann::ordered_json percat = nlohmann::ordered_json::object();
  for (size_t c = 0; c < categories.size(); ++c) {
    nlohmann::ordered_json row = nlohmann::ordered_json::array();
    for (size_t t = 0; t < thresholds.size(); ++t) row.push_back(ap[t][c]);
    percat[std::to_string(categories[c])] = row;
  }
  j["ap_per_category"] = percat;
  return j.dump(2) + "\n";
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  auto row = [&](const std::string& k, double v) {
    os << std::left << std::setw(22) << k << std::right << std::setw(8) << v << "\n";
  };
  os << std::left << std::setw(22) << "metric" << std::right << std::setw(8) << "value"
     << "\n";
  row("frame_auc", auc);
  row("frame_ap", frame_ap);
  for (size_t i = 0; i < thresholds.size(); ++i) {
    std::ostringstream key;
    key << "map@" << std::fixed << std::setprecision(2) << thresholds[i];
    row(key.str(), map_at[i]);
  }
  row("map_avg", avg_map);
  row("mean_total_variation", mean_total_variation);
  row("instances_per_gt", instances_per_gt);

  if (!categories.empty()) {
    os << "\n" << std::left << std::setw(10) << "category";
    for (double th : thresholds) {
      std::ostringstream key;
      key << "ap@" << std::fixed << std::setprecision(2) << th;
      os << std::right << std::setw(9) << key.str();
    }
    os << "\n";
    for (size_t c = 0; c < categories.size(); ++c) {
      os << std::left << std::setw(10) << categories[c];
      for (size_t t = 0; t < thresholds.size(); ++t)
        os << std::right << std::setw(9) << ap[t][c];
      os << "\n";
    }
  }
  return os.str();
}

}  // namespace lec
