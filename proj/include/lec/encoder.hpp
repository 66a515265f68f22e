#pragma once

// Temporal feature enhancement: windowed local self-attention (one pre-norm
// transformer block applied independently per non-overlapping window) followed
// by a graph convolution over a cosine-similarity adjacency.

#include <lec/tape.hpp>

#include <cmath>
#include <string>
#include <vector>

namespace lec {

// Parameters of one pre-norm transformer block (multi-head self-attention
// with biases, x4 GELU feed-forward, residual connections).
template <typename S>
struct BlockVars {
  Var<S> ln1_g, ln1_b;
  Var<S> wq, bq, wk, bk, wv, bv, wo, bo;
  Var<S> ln2_g, ln2_b;
  Var<S> ff1_w, ff1_b, ff2_w, ff2_b;
};

// Sinusoidal absolute positional table, 0-based positions.
template <typename S>
Mat<S> positional_encoding(Index T, Index d) {
  Mat<S> pe(T, d);
  for (Index t = 0; t < T; ++t) {
    for (Index i = 0; i < d; i += 2) {
      const S freq = std::pow(S(10000), -S(i) / S(d));
      pe(t, i) = std::sin(S(t) * freq);
      if (i + 1 < d) pe(t, i + 1) = std::cos(S(t) * freq);
    }
  }
  return pe;
}

template <typename S>
Var<S> multihead_self_attention(Var<S> x, const BlockVars<S>& p, int heads) {
  const Index d = x.cols();
  detail::require(heads >= 1 && d % heads == 0,
                  "attention: feature dim must be divisible by head count");
  const Index dh = d / heads;
  Var<S> q = add_rowvec(matmul(x, p.wq), p.bq);
  Var<S> k = add_rowvec(matmul(x, p.wk), p.bk);
  Var<S> v = add_rowvec(matmul(x, p.wv), p.bv);
  std::vector<Var<S>> outs;
  for (int h = 0; h < heads; ++h) {
    Var<S> qh = slice_cols(q, h * dh, dh);
    Var<S> kh = slice_cols(k, h * dh, dh);
    Var<S> vh = slice_cols(v, h * dh, dh);
    Var<S> att = row_softmax(scale(matmul_nt(qh, kh), S(1) / std::sqrt(S(dh))));
    outs.push_back(matmul(att, vh));
  }
  return add_rowvec(matmul(concat_cols(outs), p.wo), p.bo);
}

template <typename S>
Var<S> transformer_block(Var<S> x, const BlockVars<S>& p, int heads) {
  Var<S> h1 = layer_norm_rows(x, p.ln1_g, p.ln1_b);
  Var<S> x2 = add(x, multihead_self_attention(h1, p, heads));
  Var<S> h2 = layer_norm_rows(x2, p.ln2_g, p.ln2_b);
  Var<S> ff = add_rowvec(
      matmul(gelu(add_rowvec(matmul(h2, p.ff1_w), p.ff1_b)), p.ff2_w), p.ff2_b);
  return add(x2, ff);
}

// Adds positional encoding, then runs the block independently on each
// contiguous window (the trailing partial window is simply shorter, which is
// numerically identical to padding plus masking).
//
// The positional table is scaled by 1/sqrt(d): inputs here are raw feature
// rows of roughly unit norm, not sqrt(d)-scaled embeddings, and an unscaled
// table (norm ~sqrt(d/2)) would swamp the content signal that the
// similarity adjacency downstream depends on.
template <typename S>
Var<S> window_attention(Var<S> x, const BlockVars<S>& p, int heads, Index window_len) {
  detail::require(window_len >= 1, "window_attention: window_len must be >= 1");
  detail::require(x.val().allFinite(), "window_attention: non-finite input");
  Tape<S>& t = *x.tape;
  const Index T = x.rows();
  const S pe_scale = S(1) / std::sqrt(S(x.cols()));
  Var<S> xpe = add(x, t.constant(Mat<S>(pe_scale * positional_encoding<S>(T, x.cols()))));
  Var<S> out;
  for (Index w0 = 0; w0 < T; w0 += window_len) {
    const Index n = std::min(window_len, T - w0);
    Var<S> blk = transformer_block(slice_rows(xpe, w0, n), p, heads);
    out = out.valid() ? concat_rows(out, blk) : blk;
  }
  return out;
}

// Row-softmax of the pairwise cosine-similarity matrix.
template <typename S>
Var<S> similarity_adjacency(Var<S> xl) {
  Var<S> n = l2_normalize_rows(xl, S(1e-8));
  return row_softmax(matmul_nt(n, n));
}

template <typename S>
Var<S> gcn_layer(Var<S> xl, Var<S> a_softmax, Var<S> w) {
  return gelu(matmul(matmul(a_softmax, xl), w));
}

template <typename S>
Var<S> encode(Var<S> x, const BlockVars<S>& p, Var<S> gcn_w, int heads, Index window_len) {
  Var<S> xl = window_attention(x, p, heads, window_len);
  return gcn_layer(xl, similarity_adjacency(xl), gcn_w);
}

}  // namespace lec
