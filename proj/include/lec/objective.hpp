#pragma once

// MIL pooling and the loss stack: top-K mean pooling per category, the
// category-agnostic and category-aware cross-entropies, the score-consistency
// l1 regularizer, and their weighted total.

#include <lec/tape.hpp>

namespace lec {

inline Index topk_size(Index T) { return std::max<Index>(T / 16, Index(1)); }

// mean of the K largest entries per column (attains the max over all index
// sets of size K)
template <typename S>
Var<S> topk_pool(Var<S> scores, Index K) {
  return topk_col_mean(scores, K);
}

// y in {0,1}: -log(p_b[y] + 1e-8) with p_b the pooled binary scores
template <typename S>
Var<S> agnostic_loss(Var<S> s_b, int y, Index K) {
  detail::require(y == 0 || y == 1, "agnostic_loss: y must be 0 or 1");
  Var<S> p = topk_pool(s_b, K);
  return scale(vlog_eps(pick(p, 0, y), S(1e-8)), S(-1));
}

// g in {0..C}: softmax over pooled per-category scores, then -log(p_m[g] + 1e-8)
template <typename S>
Var<S> aware_loss(Var<S> s_aware, int g, Index K) {
  detail::require(g >= 0 && g < s_aware.cols(), "aware_loss: g out of range");
  Var<S> pm = row_softmax(topk_pool(s_aware, K));
  return scale(vlog_eps(pick(pm, 0, g), S(1e-8)), S(-1));
}

// (1/T) * sum_t | 1 - s_m[t,0] - s_b[t,1] |
template <typename S>
Var<S> reg_loss(Var<S> s_m_normal, Var<S> s_b_anom) {
  detail::require(s_m_normal.rows() == s_b_anom.rows() && s_m_normal.cols() == 1 &&
                      s_b_anom.cols() == 1,
                  "reg_loss: expects two T x 1 columns");
  const Index T = s_m_normal.rows();
  Var<S> resid = affine(add(s_m_normal, s_b_anom), S(-1), S(1));
  return scale(sum_all(vabs(resid)), S(1) / S(T));
}

}  // namespace lec
