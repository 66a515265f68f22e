#pragma once

// Parameter store and the full forward pass: encoder -> dual heads ->
// text/vision fusion with the memory bank -> Gaussian-mixture prior ->
// loss stack. Templated on scalar; training uses double throughout.

#include <lec/config.hpp>
#include <lec/encoder.hpp>
#include <lec/gmprior.hpp>
#include <lec/heads.hpp>
#include <lec/membank.hpp>
#include <lec/objective.hpp>
#include <lec/rng.hpp>

#include <string>
#include <vector>

namespace lec {

struct ModelConfig {
  Index d = 0;
  Index C = 0;
  int heads = 4;
  Index window_len = 64;
  int m_blocks = 4;
  double beta = 0.7;
  double sigma_min = 0.05;
  double lambda = 0.3;
  double gamma = 1e-4;
  bool use_vob = true;
  bool use_cmb = true;
  bool use_gmm_loss = true;
  bool use_reg_loss = true;

  static ModelConfig from(const Config& c, Index d, Index C) {
    ModelConfig m;
    m.d = d;
    m.C = C;
    m.window_len = c.window_len;
    m.m_blocks = c.m_blocks;
    m.beta = c.gmm_beta;
    m.lambda = c.lambda;
    m.gamma = c.gamma;
    m.use_vob = c.use_vob;
    m.use_cmb = c.use_cmb;
    m.use_gmm_loss = c.use_gmm_loss;
    m.use_reg_loss = c.use_reg_loss;
    return m;
  }
};

template <typename S>
struct NamedTensor {
  std::string name;
  Mat<S> value, grad, adam_m, adam_v;
  bool decay = true;  // participates in decoupled weight decay
};

template <typename S>
struct ParamStore {
  std::vector<NamedTensor<S>> t;

  enum class Init { Zeros, Ones, Proj };

  int add(std::string name, Index r, Index c, bool decay, Init init, Rng& rng) {
    NamedTensor<S> nt;
    nt.name = std::move(name);
    nt.value = Mat<S>::Zero(r, c);
    if (init == Init::Ones) nt.value.setOnes();
    if (init == Init::Proj) {
      // Glorot-scaled truncated normal keeps activations O(1) through the
      // randomly initialized blocks, so small training budgets still move
      // the heads off their uniform starting point.
      const double std = std::sqrt(2.0 / double(r + c));
      for (Index i = 0; i < r; ++i)
        for (Index j = 0; j < c; ++j) nt.value(i, j) = S(std * rng.truncated_normal());
    }
    nt.grad = Mat<S>::Zero(r, c);
    nt.adam_m = Mat<S>::Zero(r, c);
    nt.adam_v = Mat<S>::Zero(r, c);
    nt.decay = decay;
    t.push_back(std::move(nt));
    return int(t.size()) - 1;
  }

  int find(const std::string& name) const {
    for (size_t i = 0; i < t.size(); ++i)
      if (t[i].name == name) return int(i);
    throw std::runtime_error("unknown tensor: " + name);
  }

  void zero_grad() {
    for (auto& nt : t) nt.grad.setZero();
  }
};

struct BlockIdx {
  int ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, ff1_w, ff1_b,
      ff2_w, ff2_b;
};

// Tape binding of every tensor, parallel to ParamStore::t.
template <typename S>
struct Bound {
  std::vector<Var<S>> v;
};

// Per-video forward outputs; loss vars are invalid unless with_loss was set.
template <typename S>
struct ForwardVars {
  Var<S> f_video, s_b, s_m, s_tv, s_aware, s_gmm, f_aug;
  Var<S> l_agnostic, l_aware, l_gmm, l_reg, l_total;
};

// Plain-value scores for inference and evaluation.
struct ScoreSet {
  Eigen::MatrixXd s_b;      // T x 2 (empty when the binary branch is disabled)
  Eigen::MatrixXd s_m;      // T x (C+1)
  Eigen::MatrixXd s_tv;     // T x (C+1) (empty when fusion is disabled)
  Eigen::MatrixXd s_aware;  // T x (C+1)
  Eigen::VectorXd s_gmm;    // T
  bool has_vob = true;
  bool has_cmb = true;
};

template <typename S>
class Model {
 public:
  ModelConfig cfg;
  ParamStore<S> params;
  MemoryBank<S> bank;
  Mat<S> f_text;  // frozen (C+1) x d text features

  BlockIdx enc_blk{};
  int gcn_w = -1;
  int bin_w = -1, bin_b = -1;
  int multi_w = -1, multi_b = -1;
  int xq = -1, xk = -1, xv = -1;
  std::vector<BlockIdx> bank_blks;
  int gmm_w_text = -1, gmm_w_video = -1, gmm_b = -1;

  void build(const ModelConfig& c, const Mat<S>& text, S eta, Rng& rng) {
    cfg = c;
    detail::require(c.d >= 1 && c.C >= 1, "model: d and C must be positive");
    detail::require(c.d % c.heads == 0,
                    "model: feature dim must be divisible by the head count");
    detail::require(text.rows() == c.C + 1 && text.cols() == c.d,
                    "model: text bank must be (C+1) x d");
    f_text = text;
    params.t.clear();
    bank_blks.clear();

    enc_blk = add_block("enc", rng);
    gcn_w = addp("enc.gcn_w", c.d, c.d, rng);
    if (c.use_vob) {
      bin_w = addp("head.bin_w", c.d, 2, rng);
      bin_b = addb("head.bin_b", 2);
    }
    multi_w = addp("head.multi_w", c.d, c.C + 1, rng);
    multi_b = addb("head.multi_b", c.C + 1);
    if (c.use_cmb) {
      xq = addp("head.xattn_wq", c.d, c.d, rng);
      xk = addp("head.xattn_wk", c.d, c.d, rng);
      xv = addp("head.xattn_wv", c.d, c.d, rng);
      for (int k = 0; k < c.m_blocks; ++k)
        bank_blks.push_back(add_block("bank.b" + std::to_string(k), rng));
    }
    gmm_w_text = addp("gmm.w_text", c.d, 2, rng);
    gmm_w_video = addp("gmm.w_video", c.d, 2, rng);
    gmm_b = addb("gmm.b", 2);

    bank = init_bank(f_text, eta);
  }

  Bound<S> bind(Tape<S>& tape, bool trainable = true) const {
    Bound<S> b;
    b.v.reserve(params.t.size());
    for (const auto& nt : params.t)
      b.v.push_back(trainable ? tape.leaf(nt.value) : tape.constant(nt.value));
    return b;
  }

  BlockVars<S> block_vars(const Bound<S>& b, const BlockIdx& i) const {
    return BlockVars<S>{b.v[i.ln1_g], b.v[i.ln1_b], b.v[i.wq],    b.v[i.bq],
                        b.v[i.wk],    b.v[i.bk],    b.v[i.wv],    b.v[i.bv],
                        b.v[i.wo],    b.v[i.bo],    b.v[i.ln2_g], b.v[i.ln2_b],
                        b.v[i.ff1_w], b.v[i.ff1_b], b.v[i.ff2_w], b.v[i.ff2_b]};
  }

  ForwardVars<S> forward(Tape<S>& tape, const Bound<S>& b, const Mat<S>& X,
                         bool with_loss, int y = 0, int g = 0) const {
    detail::require(X.cols() == cfg.d, "forward: feature dim mismatch");
    ForwardVars<S> out;
    Var<S> x = tape.constant(X);
    out.f_video = encode(x, block_vars(b, enc_blk), b.v[gcn_w], cfg.heads, cfg.window_len);
    out.s_m = multiclass_head(out.f_video, b.v[multi_w], b.v[multi_b]);
    if (cfg.use_vob) out.s_b = binary_head(out.f_video, b.v[bin_w], b.v[bin_b]);

    Var<S> f_cat;  // category features feeding the kernel predictor
    if (cfg.use_cmb) {
      Var<S> text = tape.constant(f_text);
      Var<S> f_tv = cross_attention(text, out.f_video, b.v[xq], b.v[xk], b.v[xv]);
      std::vector<BlockVars<S>> blocks;
      for (const auto& bi : bank_blks) blocks.push_back(block_vars(b, bi));
      out.f_aug = augment_text(f_tv, bank, blocks, cfg.heads);
      Var<S> f_ctg = add(f_tv, out.f_aug);
      out.s_tv = cosine_align(out.f_video, f_ctg);
      out.s_aware = fuse_aware(out.s_m, out.s_tv);
      f_cat = out.f_aug;
    } else {
      out.s_aware = out.s_m;
      f_cat = tape.constant(f_text);
    }

    KernelVars<S> kv{b.v[gmm_w_text], b.v[gmm_w_video], b.v[gmm_b]};
    GaussKernels<S> kern = predict_kernels(f_cat, out.f_video, kv, S(cfg.sigma_min));
    Var<S> alpha = slice_cols(out.s_m, 1, cfg.C);
    out.s_gmm = gmm_scores(kern, alpha, S(cfg.beta));

    if (with_loss) {
      const Index K = topk_size(X.rows());
      out.l_aware = aware_loss(out.s_aware, g, K);
      out.l_total = out.l_aware;
      if (cfg.use_vob) {
        out.l_agnostic = agnostic_loss(out.s_b, y, K);
        out.l_total = add(out.l_total, out.l_agnostic);
        Var<S> sb1 = slice_cols(out.s_b, 1, 1);
        out.l_gmm = gmm_loss(out.s_gmm, sb1);
        if (cfg.use_gmm_loss)
          out.l_total = add(out.l_total, scale(out.l_gmm, S(cfg.lambda)));
        out.l_reg = reg_loss(slice_cols(out.s_m, 0, 1), sb1);
        if (cfg.use_reg_loss)
          out.l_total = add(out.l_total, scale(out.l_reg, S(cfg.gamma)));
      }
    }
    return out;
  }

  // Loss value only (used by finite-difference checks).
  S loss_value(const Mat<S>& X, int y, int g) const {
    Tape<S> tape;
    Bound<S> b = bind(tape, false);
    ForwardVars<S> f = forward(tape, b, X, true, y, g);
    return f.l_total.val()(0, 0);
  }

  ScoreSet score_set(const Mat<S>& X) const {
    Tape<S> tape;
    Bound<S> b = bind(tape, false);
    ForwardVars<S> f = forward(tape, b, X, false);
    ScoreSet s;
    s.has_vob = cfg.use_vob;
    s.has_cmb = cfg.use_cmb;
    s.s_m = f.s_m.val().template cast<double>();
    s.s_aware = f.s_aware.val().template cast<double>();
    s.s_gmm = f.s_gmm.val().col(0).template cast<double>();
    if (cfg.use_vob) s.s_b = f.s_b.val().template cast<double>();
    if (cfg.use_cmb) s.s_tv = f.s_tv.val().template cast<double>();
    return s;
  }

 private:
  int addp(const std::string& name, Index r, Index c, Rng& rng) {
    return params.add(name, r, c, true, ParamStore<S>::Init::Proj, rng);
  }
  int addb(const std::string& name, Index c) {
    Rng dummy;
    return params.add(name, 1, c, false, ParamStore<S>::Init::Zeros, dummy);
  }
  int addg(const std::string& name, Index c) {
    Rng dummy;
    return params.add(name, 1, c, false, ParamStore<S>::Init::Ones, dummy);
  }

  BlockIdx add_block(const std::string& p, Rng& rng) {
    BlockIdx i;
    const Index d = cfg.d;
    i.ln1_g = addg(p + ".ln1_g", d);
    i.ln1_b = addb(p + ".ln1_b", d);
    i.wq = addp(p + ".wq", d, d, rng);
    i.bq = addb(p + ".bq", d);
    i.wk = addp(p + ".wk", d, d, rng);
    i.bk = addb(p + ".bk", d);
    i.wv = addp(p + ".wv", d, d, rng);
    i.bv = addb(p + ".bv", d);
    i.wo = addp(p + ".wo", d, d, rng);
    i.bo = addb(p + ".bo", d);
    i.ln2_g = addg(p + ".ln2_g", d);
    i.ln2_b = addb(p + ".ln2_b", d);
    i.ff1_w = addp(p + ".ff1_w", d, 4 * d, rng);
    i.ff1_b = addb(p + ".ff1_b", 4 * d);
    i.ff2_w = addp(p + ".ff2_w", 4 * d, d, rng);
    i.ff2_b = addb(p + ".ff2_b", d);
    return i;
  }
};

}  // namespace lec
