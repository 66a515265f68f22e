#pragma once

// Gaussian-mixture temporal prior: a shared affine map predicts per-position,
// per-category Gaussian kernels (mu, sigma); the mixture weighted by the
// multi-class anomaly scores, evaluated at its own position, gives s_gmm,
// which is pulled toward the binary anomaly score by an L2-distance loss.

#include <lec/tape.hpp>

namespace lec {

template <typename S>
struct KernelVars {
  // the shared (2d -> 2) affine map, split into the text-half and video-half
  // of the concatenated input: [f_text_row, f_video_row] * W + b
  Var<S> w_text;   // d x 2
  Var<S> w_video;  // d x 2
  Var<S> b;        // 1 x 2
};

template <typename S>
struct GaussKernels {
  Var<S> mu;     // T x C, in (0,1)
  Var<S> sigma;  // T x C, >= sigma_min
};

// f_cat: (C+1) x d category features (rows 1..C are used); f_video: T x d.
template <typename S>
GaussKernels<S> predict_kernels(Var<S> f_cat, Var<S> f_video, const KernelVars<S>& kp,
                                S sigma_min = S(0.05)) {
  const Index C = f_cat.rows() - 1;
  detail::require(C >= 1, "predict_kernels: need at least one anomaly category");
  Var<S> a = matmul(slice_rows(f_cat, 1, C), kp.w_text);  // C x 2
  Var<S> v = matmul(f_video, kp.w_video);                 // T x 2
  Var<S> raw_mu = add_scalar(
      outer_add(slice_cols(v, 0, 1), transpose(slice_cols(a, 0, 1))), pick(kp.b, 0, 0));
  Var<S> raw_sigma = add_scalar(
      outer_add(slice_cols(v, 1, 1), transpose(slice_cols(a, 1, 1))), pick(kp.b, 0, 1));
  return {logistic(raw_mu), affine(softplus(raw_sigma), S(1), sigma_min)};
}

// s_gmm(t) = sum_{c=1..C} alpha[t,c] * exp(-beta * (t/T - mu[t,c])^2 / sigma[t,c]^2)
// with 1-based positions t; alpha[t,c] = s_m[t,c] for c >= 1.
template <typename S>
Var<S> gmm_scores(const GaussKernels<S>& k, Var<S> alpha, S beta) {
  Tape<S>& t = *alpha.tape;
  const Index T = alpha.rows(), C = alpha.cols();
  detail::require(k.mu.rows() == T && k.mu.cols() == C, "gmm_scores: shape mismatch");
  Mat<S> pos(T, C);
  for (Index i = 0; i < T; ++i) pos.row(i).setConstant(S(i + 1) / S(T));
  Var<S> diff = sub(t.constant(pos), k.mu);
  Var<S> g = vexp(scale(cdiv(vsquare(diff), vsquare(k.sigma)), -beta));
  return row_sum(hadamard(alpha, g));  // T x 1
}

// L_gmm = || s_gmm - s_b[:,1] ||_2  (Euclidean distance, not a mean)
template <typename S>
Var<S> gmm_loss(Var<S> s_gmm, Var<S> s_b_anom) {
  return vsqrt_safe(sum_all(vsquare(sub(s_gmm, s_b_anom))));
}

}  // namespace lec
