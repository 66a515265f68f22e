#include <lec/infer.hpp>

#include <lec/objective.hpp>

#include <algorithm>
#include <cmath>

namespace lec {

Eigen::VectorXd coarse_scores(const ScoreSet& sc) {
  Eigen::VectorXd base = 1.0 - sc.s_m.col(0).array();
  if (!sc.has_vob) return base;
  detail::require(sc.s_b.rows() == sc.s_m.rows(), "coarse_scores: score shapes disagree");
  return 0.5 * (base + sc.s_b.col(1));
}

namespace {

double topk_col_mean_plain(const Eigen::VectorXd& col, Index K) {
  std::vector<double> v(col.data(), col.data() + col.size());
  std::partial_sort(v.begin(), v.begin() + K, v.end(), std::greater<double>());
  double s = 0;
  for (Index i = 0; i < K; ++i) s += v[size_t(i)];
  return s / double(K);
}

}  // namespace

std::vector<int> select_categories(const Eigen::MatrixXd& s_aware, double r_cls) {
  const Index T = s_aware.rows(), n = s_aware.cols();
  detail::require(T >= 1 && n >= 2, "select_categories: need T x (C+1) scores");
  const Index K = topk_size(T);
  Eigen::VectorXd pooled(n);
  for (Index c = 0; c < n; ++c) pooled(c) = topk_col_mean_plain(s_aware.col(c), K);
  Eigen::VectorXd p = (pooled.array() - pooled.maxCoeff()).exp();
  p /= p.sum();
  std::vector<int> out;
  for (Index c = 1; c < n; ++c)
    if (p(c) > r_cls) out.push_back(int(c));
  return out;
}

std::vector<std::pair<int64_t, int64_t>> candidate_instances(const Eigen::VectorXd& col,
                                                             double r_ano, int gap) {
  std::vector<std::pair<int64_t, int64_t>> runs;
  const int64_t T = col.size();
  int64_t t = 0;
  while (t < T) {
    if (col(t) > r_ano) {
      int64_t s = t;
      while (t + 1 < T && col(t + 1) > r_ano) ++t;
      runs.emplace_back(s, t);
    }
    ++t;
  }
  if (gap > 0 && runs.size() > 1) {
    std::vector<std::pair<int64_t, int64_t>> merged{runs[0]};
    for (size_t i = 1; i < runs.size(); ++i) {
      if (runs[i].first - merged.back().second - 1 <= gap)
        merged.back().second = runs[i].second;
      else
        merged.push_back(runs[i]);
    }
    runs = std::move(merged);
  }
  return runs;
}

double outer_inner_confidence(const Eigen::VectorXd& col, int64_t s, int64_t e) {
  const int64_t T = col.size();
  detail::require(s >= 0 && s <= e && e < T, "outer_inner_confidence: bad interval");
  const int64_t len = e - s + 1;
  const double inner = col.segment(s, len).mean();
  const int64_t delta = std::max<int64_t>(1, int64_t(std::llround(0.25 * double(len))));
  double sum = 0;
  int64_t cnt = 0;
  for (int64_t t = std::max<int64_t>(0, s - delta); t < s; ++t, ++cnt) sum += col(t);
  for (int64_t t = e + 1; t <= std::min<int64_t>(T - 1, e + delta); ++t, ++cnt) sum += col(t);
  if (cnt == 0) return inner;
  return inner - sum / double(cnt);
}

double temporal_iou(int64_t s1, int64_t e1, int64_t s2, int64_t e2) {
  const int64_t inter = std::min(e1, e2) - std::max(s1, s2) + 1;
  if (inter <= 0) return 0.0;
  const int64_t uni = (e1 - s1 + 1) + (e2 - s2 + 1) - inter;
  return double(inter) / double(uni);
}

std::vector<AnomalyInstance> temporal_nms(std::vector<AnomalyInstance> cand, double iou_thresh) {
  std::sort(cand.begin(), cand.end(), [](const AnomalyInstance& a, const AnomalyInstance& b) {
    if (a.w != b.w) return a.w > b.w;
    return a.s < b.s;
  });
  std::vector<AnomalyInstance> kept;
  for (const auto& c : cand) {
    bool ok = true;
    for (const auto& k : kept)
      if (k.g == c.g && temporal_iou(k.s, k.e, c.s, c.e) >= iou_thresh) {
        ok = false;
        break;
      }
    if (ok) kept.push_back(c);
  }
  return kept;
}

std::vector<AnomalyInstance> detect(const ScoreSet& sc, const Config& cfg) {
  const Index C = sc.s_m.cols() - 1;
  detail::require(sc.s_aware.rows() == sc.s_m.rows() && sc.s_aware.cols() == C + 1,
                  "detect: score shapes disagree");
  const Eigen::MatrixXd& source = cfg.score_source == "aware" ? sc.s_aware : sc.s_m;

  std::vector<AnomalyInstance> all;
  for (int g : select_categories(sc.s_aware, cfg.r_cls)) {
    const Eigen::VectorXd col = source.col(g);
    for (const auto& [s0, e0] : candidate_instances(col, cfg.r_ano, cfg.gap))
      all.push_back({s0 + 1, e0 + 1, g, outer_inner_confidence(col, s0, e0)});
  }
  std::vector<AnomalyInstance> kept = temporal_nms(std::move(all), cfg.nms_iou);
  std::sort(kept.begin(), kept.end(), [](const AnomalyInstance& a, const AnomalyInstance& b) {
    if (a.w != b.w) return a.w > b.w;
    if (a.s != b.s) return a.s < b.s;
    return a.g < b.g;
  });
  return kept;
}

}  // namespace lec
