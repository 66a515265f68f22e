#pragma once

// Dual-branch scoring heads: category-agnostic s_b, category-aware s_m,
// text-conditioned cross-attention F_tv, cosine alignment s_tv, and the fused
// s_aware = s_m + s_tv.

#include <lec/tape.hpp>

#include <cmath>

namespace lec {

// affine map then row softmax; column 1 is the anomaly probability
template <typename S>
Var<S> binary_head(Var<S> f_video, Var<S> w, Var<S> b) {
  return row_softmax(add_rowvec(matmul(f_video, w), b));
}

// affine map then row softmax; column 0 is the normal category
template <typename S>
Var<S> multiclass_head(Var<S> f_video, Var<S> w, Var<S> b) {
  return row_softmax(add_rowvec(matmul(f_video, w), b));
}

// Single-head cross-attention with text as query: softmax(QK^T / sqrt(d)) V.
template <typename S>
Var<S> cross_attention(Var<S> f_text, Var<S> f_video, Var<S> wq, Var<S> wk, Var<S> wv) {
  const Index d = f_text.cols();
  Var<S> q = matmul(f_text, wq);
  Var<S> k = matmul(f_video, wk);
  Var<S> v = matmul(f_video, wv);
  Var<S> att = row_softmax(scale(matmul_nt(q, k), S(1) / std::sqrt(S(d))));
  return matmul(att, v);
}

// s_tv[t, c] = cosine(F_video[t], F_ctg[c]) with epsilon-guarded norms
template <typename S>
Var<S> cosine_align(Var<S> f_video, Var<S> f_ctg) {
  return matmul_nt(l2_normalize_rows(f_video, S(1e-8)),
                   l2_normalize_rows(f_ctg, S(1e-8)));
}

template <typename S>
Var<S> fuse_aware(Var<S> s_m, Var<S> s_tv) {
  return add(s_m, s_tv);
}

}  // namespace lec
