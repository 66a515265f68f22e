#pragma once

// Reverse-mode automatic differentiation over dense Eigen matrices.
//
// A Tape owns a flat list of nodes; every operation below appends one node
// holding its value and a closure that routes the node's gradient to its
// parents. backward() walks the tape once in reverse creation order, so a
// single backward pass yields gradients for every leaf. Scalars are 1x1
// matrices. Vars are cheap handles (tape pointer + index) and are only valid
// while their tape is alive.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lec {

using Index = Eigen::Index;

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

template <typename S>
class Tape;

template <typename S>
struct Var {
  Tape<S>* tape = nullptr;
  int idx = -1;

  bool valid() const { return tape != nullptr && idx >= 0; }
  const Mat<S>& val() const { return tape->value(idx); }
  Index rows() const { return val().rows(); }
  Index cols() const { return val().cols(); }
};

template <typename S>
class Tape {
 public:
  struct Node {
    Mat<S> value;
    Mat<S> grad;  // empty until touched during backward
    bool requires_grad = false;
    std::function<void(Tape&, int)> back;  // (tape, own index) -> push grad to parents
  };

  Var<S> constant(Mat<S> v) { return push(std::move(v), false, nullptr); }
  Var<S> leaf(Mat<S> v) { return push(std::move(v), true, nullptr); }

  Var<S> push(Mat<S> v, bool requires_grad, std::function<void(Tape&, int)> back) {
    Node n;
    n.value = std::move(v);
    n.requires_grad = requires_grad;
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var<S>{this, static_cast<int>(nodes_.size()) - 1};
  }

  const Mat<S>& value(int i) const { return nodes_[i].value; }
  bool requires_grad(int i) const { return nodes_[i].requires_grad; }

  // Gradient accumulator; allocates zeros on first touch.
  Mat<S>& grad(int i) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0) n.grad = Mat<S>::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  // Gradient of a node after backward(); zeros if the node was never reached.
  Mat<S> grad_of(const Var<S>& v) {
    const Node& n = nodes_[v.idx];
    if (n.grad.size() == 0) return Mat<S>::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }

  void backward(const Var<S>& root) {
    if (root.val().rows() != 1 || root.val().cols() != 1)
      throw std::invalid_argument("backward: root must be a 1x1 scalar node");
    grad(root.idx)(0, 0) = S(1);
    for (int i = root.idx; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.requires_grad || !n.back || n.grad.size() == 0) continue;
      n.back(*this, i);
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;
};

namespace detail {

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise / affine

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
  Tape<S>& t = *a.tape;
  const bool ra = t.requires_grad(a.idx), rb = t.requires_grad(b.idx);
  int ai = a.idx, bi = b.idx;
  return t.push(a.val() + b.val(), ra || rb, [=](Tape<S>& tp, int self) {
    const Mat<S>& g = tp.grad(self);
    if (ra) tp.grad(ai) += g;
    if (rb) tp.grad(bi) += g;
  });
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
  Tape<S>& t = *a.tape;
  const bool ra = t.requires_grad(a.idx), rb = t.requires_grad(b.idx);
  int ai = a.idx, bi = b.idx;
  return t.push(a.val() - b.val(), ra || rb, [=](Tape<S>& tp, int self) {
    const Mat<S>& g = tp.grad(self);
    if (ra) tp.grad(ai) += g;
    if (rb) tp.grad(bi) -= g;
  });
}

template <typename S>
Var<S> operator+(Var<S> a, Var<S> b) { return add(a, b); }
template <typename S>
Var<S> operator-(Var<S> a, Var<S> b) { return sub(a, b); }

template <typename S>
Var<S> hadamard(Var<S> a, Var<S> b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "hadamard: shape mismatch");
  Tape<S>& t = *a.tape;
  const bool ra = t.requires_grad(a.idx), rb = t.requires_grad(b.idx);
  int ai = a.idx, bi = b.idx;
  return t.push(a.val().cwiseProduct(b.val()), ra || rb, [=](Tape<S>& tp, int self) {
    const Mat<S>& g = tp.grad(self);
    if (ra) tp.grad(ai) += g.cwiseProduct(tp.value(bi));
    if (rb) tp.grad(bi) += g.cwiseProduct(tp.value(ai));
  });
}

template <typename S>
Var<S> cdiv(Var<S> a, Var<S> b) {
  detail::require(a.rows() == b.rows() && a.cols() == b.cols(), "cdiv: shape mismatch");
  Tape<S>& t = *a.tape;
  const bool ra = t.requires_grad(a.idx), rb = t.requires_grad(b.idx);
  int ai = a.idx, bi = b.idx;
  return t.push(a.val().cwiseQuotient(b.val()), ra || rb, [=](Tape<S>& tp, int self) {
    const Mat<S>& g = tp.grad(self);
    const Mat<S>& bv = tp.value(bi);
    if (ra) tp.grad(ai) += g.cwiseQuotient(bv);
    if (rb)
      tp.grad(bi) -= g.cwiseProduct(tp.value(self)).cwiseQuotient(bv);
  });
}

// y = k*x + c (elementwise)
template <typename S>
Var<S> affine(Var<S> a, S k, S c) {
  Tape<S>& t = *a.tape;
  const bool ra = t.requires_grad(a.idx);
  int ai = a.idx;
  Mat<S> v = (a.val().array() * k + c).matrix();
  return t.push(std::move(v), ra, [=](Tape<S>& tp, int self) {
    if (ra) tp.grad(ai) += k * tp.grad(self);
  });
}

template <typename S>
Var<S> scale(Var<S> a, S k) { return affine(a, k, S(0)); }

// ---------------------------------------------------------------------------
// matrix products / layout

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b) {
  detail::require(a.cols() == b.rows(), "matmul: inner dimension mismatch");
  Tape<S>& t = *a.tape;
  const bool ra = t.requires_grad(a.idx), rb = t.requires_grad(b.idx);
  int ai = a.idx, bi = b.idx;
  return t.push(a.val() * b.val(), ra || rb, [=](Tape<S>& tp, int self) {
    const Mat<S>& g = tp.grad(self);
    if (ra) tp.grad(ai) += g * tp.value(bi).transpose();
    if (rb) tp.grad(bi) += tp.value(ai).transpose() * g;
  });
}

// y = a * b^T
template <typename S>
Var<S> matmul_nt(Var<S> a, Var<S> b) {
  detail::require(a.cols() == b.cols(), "matmul_nt: inner dimension mismatch");
  Tape<S>& t = *a.tape;
  const bool ra = t.requires_grad(a.idx), rb = t.requires_grad(b.idx);
  int ai = a.idx, bi = b.idx;
  return t.push(a.val() * b.val().transpose(), ra || rb, [=](Tape<S>& tp, int self) {
    const Mat<S>& g = tp.grad(self);
    if (ra) tp.grad(ai) += g * tp.value(bi);
    if (rb) tp.grad(bi) += g.transpose() * tp.value(ai);
  });
}

template <typename S>
Var<S> transpose(Var<S> a) {
  Tape<S>& t = *a.tape;
  const bool ra = t.requires_grad(a.idx);
  int ai = a.idx;
  return t.push(a.val().transpose(), ra, [=](Tape<S>& tp, int self) {
    if (ra) tp.grad(ai) += tp.grad(self).transpose();
  });
}

// broadcast a 1xN row over every row of a
template <typename S>
Var<S> add_rowvec(Var<S> a, Var<S> r) {
  detail::require(r.rows() == 1 && r.cols() == a.cols(), "add_rowvec: row shape mismatch");
  Tape<S>& t = *a.tape;
  const bool ra = t.requires_grad(a.idx), rr = t.requires_grad(r.idx);
  int ai = a.idx, ri = r.idx;
  Mat<S> v = a.val().rowwise() + r.val().row(0);
  return t.push(std::move(v), ra || rr, [=](Tape<S>& tp, int self) {
    const Mat<S>& g = tp.grad(self);
    if (ra) tp.grad(ai) += g;
    if (rr) tp.grad(ri) += g.colwise().sum();
  });
}

// broadcast a 1x1 scalar over all entries
template <typename S>
Var<S> add_scalar(Var<S> a, Var<S> s) {
  detail::require(s.rows() == 1 && s.cols() == 1, "add_scalar: scalar must be 1x1");
  Tape<S>& t = *a.tape;
  const bool ra = t.requires_grad(a.idx), rs = t.requires_grad(s.idx);
  int ai = a.idx, si = s.idx;
  Mat<S> v = (a.val().array() + s.val()(0, 0)).matrix();
  return t.push(std::move(v), ra || rs, [=](Tape<S>& tp, int self) {
    const Mat<S>& g = tp.grad(self);
    if (ra) tp.grad(ai) += g;
    if (rs) tp.grad(si)(0, 0) += g.sum();
  });
}

// y(i,j) = c(i,0) + r(0,j)
template <typename S>
Var<S> outer_add(Var<S> c, Var<S> r) {
  detail::require(c.cols() == 1 && r.rows() == 1, "outer_add: expects Tx1 and 1xC");
  Tape<S>& t = *c.tape;
  const bool rc = t.requires_grad(c.idx), rr = t.requires_grad(r.idx);
  int ci = c.idx, ri = r.idx;
  Mat<S> v = c.val() * Mat<S>::Ones(1, r.cols()) + Mat<S>::Ones(c.rows(), 1) * r.val();
  return t.push(std::move(v), rc || rr, [=](Tape<S>& tp, int self) {
    const Mat<S>& g = tp.grad(self);
    if (rc) tp.grad(ci) += g.rowwise().sum();
    if (rr) tp.grad(ri) += g.colwise().sum();
  });
}

template <typename S>
Var<S> concat_rows(Var<S> a, Var<S> b) {
  detail::require(a.cols() == b.cols(), "concat_rows: column mismatch");
  Tape<S>& t = *a.tape;
  const bool ra = t.requires_grad(a.idx), rb = t.requires_grad(b.idx);
  int ai = a.idx, bi = b.idx;
  const Index na = a.rows(), nb = b.rows();
  Mat<S> v(na + nb, a.cols());
  v.topRows(na) = a.val();
  v.bottomRows(nb) = b.val();
  return t.push(std::move(v), ra || rb, [=](Tape<S>& tp, int self) {
    const Mat<S>& g = tp.grad(self);
    if (ra) tp.grad(ai) += g.topRows(na);
    if (rb) tp.grad(bi) += g.bottomRows(nb);
  });
}

template <typename S>
Var<S> concat_cols(const std::vector<Var<S>>& parts) {
  detail::require(!parts.empty(), "concat_cols: empty list");
  Tape<S>& t = *parts[0].tape;
  Index rows = parts[0].rows(), cols = 0;
  bool req = false;
  for (const auto& p : parts) {
    detail::require(p.rows() == rows, "concat_cols: row mismatch");
    cols += p.cols();
    req = req || t.requires_grad(p.idx);
  }
  Mat<S> v(rows, cols);
  std::vector<int> idxs;
  std::vector<Index> widths;
  Index c0 = 0;
  for (const auto& p : parts) {
    v.middleCols(c0, p.cols()) = p.val();
    idxs.push_back(p.idx);
    widths.push_back(p.cols());
    c0 += p.cols();
  }
  return t.push(std::move(v), req, [=](Tape<S>& tp, int self) {
    const Mat<S>& g = tp.grad(self);
    Index off = 0;
    for (size_t k = 0; k < idxs.size(); ++k) {
      if (tp.requires_grad(idxs[k])) tp.grad(idxs[k]) += g.middleCols(off, widths[k]);
      off += widths[k];
    }
  });
}

template <typename S>
Var<S> slice_rows(Var<S> a, Index r0, Index n) {
  detail::require(r0 >= 0 && n >= 0 && r0 + n <= a.rows(), "slice_rows: out of range");
  Tape<S>& t = *a.tape;
  const bool ra = t.requires_grad(a.idx);
  int ai = a.idx;
  return t.push(a.val().middleRows(r0, n), ra, [=](Tape<S>& tp, int self) {
    if (ra) tp.grad(ai).middleRows(r0, n) += tp.grad(self);
  });
}

template <typename S>
Var<S> slice_cols(Var<S> a, Index c0, Index n) {
  detail::require(c0 >= 0 && n >= 0 && c0 + n <= a.cols(), "slice_cols: out of range");
  Tape<S>& t = *a.tape;
  const bool ra = t.requires_grad(a.idx);
  int ai = a.idx;
  return t.push(a.val().middleCols(c0, n), ra, [=](Tape<S>& tp, int self) {
    if (ra) tp.grad(ai).middleCols(c0, n) += tp.grad(self);
  });
}

// ---------------------------------------------------------------------------
// reductions / selection

template <typename S>
Var<S> row_sum(Var<S> a) {
  Tape<S>& t = *a.tape;
  const bool ra = t.requires_grad(a.idx);
  int ai = a.idx;
  const Index n = a.cols();
  Mat<S> v = a.val().rowwise().sum();
  return t.push(std::move(v), ra, [=](Tape<S>& tp, int self) {
    if (ra) tp.grad(ai) += tp.grad(self) * Mat<S>::Ones(1, n);
  });
}

template <typename S>
Var<S> sum_all(Var<S> a) {
  Tape<S>& t = *a.tape;
  const bool ra = t.requires_grad(a.idx);
  int ai = a.idx;
  Mat<S> v(1, 1);
  v(0, 0) = a.val().sum();
  return t.push(std::move(v), ra, [=](Tape<S>& tp, int self) {
    if (ra) tp.grad(ai).array() += tp.grad(self)(0, 0);
  });
}

template <typename S>
Var<S> pick(Var<S> a, Index i, Index j) {
  detail::require(i >= 0 && i < a.rows() && j >= 0 && j < a.cols(), "pick: out of range");
  Tape<S>& t = *a.tape;
  const bool ra = t.requires_grad(a.idx);
  int ai = a.idx;
  Mat<S> v(1, 1);
  v(0, 0) = a.val()(i, j);
  return t.push(std::move(v), ra, [=](Tape<S>& tp, int self) {
    if (ra) tp.grad(ai)(i, j) += tp.grad(self)(0, 0);
  });
}

// Indices of the K largest entries of a column, ties resolved to the earlier
// index. Shared by the differentiable pooling node and the plain-matrix path.
template <typename S>
std::vector<Index> topk_indices(const Eigen::Ref<const Mat<S>>& col, Index k) {
  std::vector<Index> idx(static_cast<size_t>(col.rows()));
  for (Index i = 0; i < col.rows(); ++i) idx[static_cast<size_t>(i)] = i;
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](Index l, Index r) {
    if (col(l, 0) != col(r, 0)) return col(l, 0) > col(r, 0);
    return l < r;
  });
  idx.resize(static_cast<size_t>(k));
  return idx;
}

// Mean of the K largest entries per column: TxN -> 1xN.
template <typename S>
Var<S> topk_col_mean(Var<S> a, Index k) {
  detail::require(k >= 1 && k <= a.rows(), "topk_col_mean: K out of range");
  Tape<S>& t = *a.tape;
  const bool ra = t.requires_grad(a.idx);
  int ai = a.idx;
  const Index n = a.cols();
  Mat<S> v(1, n);
  std::vector<std::vector<Index>> sel(static_cast<size_t>(n));
  for (Index c = 0; c < n; ++c) {
    sel[static_cast<size_t>(c)] = topk_indices<S>(a.val().col(c), k);
    S s = 0;
    for (Index r : sel[static_cast<size_t>(c)]) s += a.val()(r, c);
    v(0, c) = s / S(k);
  }
  return t.push(std::move(v), ra, [=, sel = std::move(sel)](Tape<S>& tp, int self) {
    if (!ra) return;
    const Mat<S>& g = tp.grad(self);
    Mat<S>& ga = tp.grad(ai);
    for (Index c = 0; c < n; ++c)
      for (Index r : sel[static_cast<size_t>(c)]) ga(r, c) += g(0, c) / S(k);
  });
}

// ---------------------------------------------------------------------------
// nonlinearities

template <typename S>
Var<S> row_softmax(Var<S> a) {
  Tape<S>& t = *a.tape;
  const bool ra = t.requires_grad(a.idx);
  int ai = a.idx;
  Mat<S> v = a.val();
  for (Index i = 0; i < v.rows(); ++i) {
    const S m = v.row(i).maxCoeff();
    v.row(i) = (v.row(i).array() - m).exp();
    v.row(i) /= v.row(i).sum();
  }
  return t.push(std::move(v), ra, [=](Tape<S>& tp, int self) {
    if (!ra) return;
    const Mat<S>& y = tp.value(self);
    const Mat<S>& g = tp.grad(self);
    Mat<S>& ga = tp.grad(ai);
    for (Index i = 0; i < y.rows(); ++i) {
      const S dot = y.row(i).dot(g.row(i));
      ga.row(i) += y.row(i).cwiseProduct((g.row(i).array() - dot).matrix());
    }
  });
}

// exact (erf-based) GELU
template <typename S>
Var<S> gelu(Var<S> a) {
  Tape<S>& t = *a.tape;
  const bool ra = t.requires_grad(a.idx);
  int ai = a.idx;
  const S inv_sqrt2 = S(1) / std::sqrt(S(2));
  Mat<S> v = a.val().unaryExpr([=](S x) { return S(0.5) * x * (S(1) + std::erf(x * inv_sqrt2)); });
  return t.push(std::move(v), ra, [=](Tape<S>& tp, int self) {
    if (!ra) return;
    const S inv_sqrt2pi = S(0.39894228040143267794);  // 1/sqrt(2*pi)
    const Mat<S>& x = tp.value(ai);
    Mat<S> dx = x.unaryExpr([=](S xv) {
      const S cdf = S(0.5) * (S(1) + std::erf(xv * inv_sqrt2));
      const S pdf = std::exp(S(-0.5) * xv * xv) * inv_sqrt2pi;
      return cdf + xv * pdf;
    });
    tp.grad(ai) += tp.grad(self).cwiseProduct(dx);
  });
}

template <typename S>
Var<S> logistic(Var<S> a) {
  Tape<S>& t = *a.tape;
  const bool ra = t.requires_grad(a.idx);
  int ai = a.idx;
  Mat<S> v = a.val().unaryExpr([](S x) {
    if (x >= 0) return S(1) / (S(1) + std::exp(-x));
    const S e = std::exp(x);
    return e / (S(1) + e);
  });
  return t.push(std::move(v), ra, [=](Tape<S>& tp, int self) {
    if (!ra) return;
    const Mat<S>& y = tp.value(self);
    tp.grad(ai) += tp.grad(self).cwiseProduct(
        y.cwiseProduct((Mat<S>::Ones(y.rows(), y.cols()) - y)));
  });
}

template <typename S>
Var<S> softplus(Var<S> a) {
  Tape<S>& t = *a.tape;
  const bool ra = t.requires_grad(a.idx);
  int ai = a.idx;
  Mat<S> v = a.val().unaryExpr(
      [](S x) { return std::max(x, S(0)) + std::log1p(std::exp(-std::abs(x))); });
  return t.push(std::move(v), ra, [=](Tape<S>& tp, int self) {
    if (!ra) return;
    Mat<S> dx = tp.value(ai).unaryExpr([](S x) {
      if (x >= 0) return S(1) / (S(1) + std::exp(-x));
      const S e = std::exp(x);
      return e / (S(1) + e);
    });
    tp.grad(ai) += tp.grad(self).cwiseProduct(dx);
  });
}

template <typename S>
Var<S> vexp(Var<S> a) {
  Tape<S>& t = *a.tape;
  const bool ra = t.requires_grad(a.idx);
  int ai = a.idx;
  Mat<S> v = a.val().array().exp().matrix();
  return t.push(std::move(v), ra, [=](Tape<S>& tp, int self) {
    if (ra) tp.grad(ai) += tp.grad(self).cwiseProduct(tp.value(self));
  });
}

template <typename S>
Var<S> vlog_eps(Var<S> a, S eps) {
  Tape<S>& t = *a.tape;
  const bool ra = t.requires_grad(a.idx);
  int ai = a.idx;
  Mat<S> v = (a.val().array() + eps).log().matrix();
  return t.push(std::move(v), ra, [=](Tape<S>& tp, int self) {
    if (!ra) return;
    tp.grad(ai) += tp.grad(self).cwiseQuotient(
        (tp.value(ai).array() + eps).matrix());
  });
}

template <typename S>
Var<S> vsquare(Var<S> a) {
  Tape<S>& t = *a.tape;
  const bool ra = t.requires_grad(a.idx);
  int ai = a.idx;
  Mat<S> v = a.val().array().square().matrix();
  return t.push(std::move(v), ra, [=](Tape<S>& tp, int self) {
    if (ra) tp.grad(ai) += S(2) * tp.grad(self).cwiseProduct(tp.value(ai));
  });
}

// sqrt with subgradient 0 at the origin
template <typename S>
Var<S> vsqrt_safe(Var<S> a) {
  Tape<S>& t = *a.tape;
  const bool ra = t.requires_grad(a.idx);
  int ai = a.idx;
  Mat<S> v = a.val().unaryExpr([](S x) { return x > S(0) ? std::sqrt(x) : S(0); });
  return t.push(std::move(v), ra, [=](Tape<S>& tp, int self) {
    if (!ra) return;
    const Mat<S>& y = tp.value(self);
    Mat<S> dx = y.unaryExpr([](S yv) { return yv > S(0) ? S(0.5) / yv : S(0); });
    tp.grad(ai) += tp.grad(self).cwiseProduct(dx);
  });
}

// |x| with subgradient 0 at the origin
template <typename S>
Var<S> vabs(Var<S> a) {
  Tape<S>& t = *a.tape;
  const bool ra = t.requires_grad(a.idx);
  int ai = a.idx;
  Mat<S> v = a.val().cwiseAbs();
  return t.push(std::move(v), ra, [=](Tape<S>& tp, int self) {
    if (!ra) return;
    Mat<S> sign = tp.value(ai).unaryExpr(
        [](S x) { return x > S(0) ? S(1) : (x < S(0) ? S(-1) : S(0)); });
    tp.grad(ai) += tp.grad(self).cwiseProduct(sign);
  });
}

// y_i = x_i / (||x_i||_2 + eps), rowwise
template <typename S>
Var<S> l2_normalize_rows(Var<S> a, S eps) {
  Tape<S>& t = *a.tape;
  const bool ra = t.requires_grad(a.idx);
  int ai = a.idx;
  Mat<S> v = a.val();
  for (Index i = 0; i < v.rows(); ++i) v.row(i) /= v.row(i).norm() + eps;
  return t.push(std::move(v), ra, [=](Tape<S>& tp, int self) {
    if (!ra) return;
    const Mat<S>& x = tp.value(ai);
    const Mat<S>& g = tp.grad(self);
    Mat<S>& ga = tp.grad(ai);
    for (Index i = 0; i < x.rows(); ++i) {
      const S n = x.row(i).norm();
      const S s = n + eps;
      if (n > S(0)) {
        const S xg = x.row(i).dot(g.row(i));
        ga.row(i) += g.row(i) / s - x.row(i) * (xg / (s * s * n));
      } else {
        ga.row(i) += g.row(i) / eps;
      }
    }
  });
}

// Pre-norm layer normalization over each row, with learnable gain and bias.
template <typename S>
Var<S> layer_norm_rows(Var<S> a, Var<S> gain, Var<S> bias, S eps = S(1e-5)) {
  detail::require(gain.rows() == 1 && gain.cols() == a.cols(), "layer_norm: gain shape");
  detail::require(bias.rows() == 1 && bias.cols() == a.cols(), "layer_norm: bias shape");
  Tape<S>& t = *a.tape;
  const bool ra = t.requires_grad(a.idx);
  const bool rg = t.requires_grad(gain.idx), rb = t.requires_grad(bias.idx);
  int ai = a.idx, gi = gain.idx, bi = bias.idx;
  const Index d = a.cols();

  Mat<S> xhat(a.rows(), d);
  Eigen::Matrix<S, Eigen::Dynamic, 1> inv_std(a.rows());
  for (Index i = 0; i < a.rows(); ++i) {
    const S mu = a.val().row(i).mean();
    const S var = (a.val().row(i).array() - mu).square().sum() / S(d);
    inv_std(i) = S(1) / std::sqrt(var + eps);
    xhat.row(i) = (a.val().row(i).array() - mu) * inv_std(i);
  }
  Mat<S> v = (xhat.array().rowwise() * gain.val().row(0).array()).rowwise() +
             bias.val().row(0).array();
  return t.push(std::move(v), ra || rg || rb,
                [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<S>& tp, int self) {
    const Mat<S>& g = tp.grad(self);
    if (rg) tp.grad(gi) += g.cwiseProduct(xhat).colwise().sum();
    if (rb) tp.grad(bi) += g.colwise().sum();
    if (ra) {
      const Mat<S>& gv = tp.value(gi);
      Mat<S>& ga = tp.grad(ai);
      for (Index i = 0; i < g.rows(); ++i) {
        Eigen::Matrix<S, 1, Eigen::Dynamic> wd =
            g.row(i).cwiseProduct(gv.row(0));
        const S mean_wd = wd.mean();
        const S mean_wdx = wd.cwiseProduct(xhat.row(i)).mean();
        ga.row(i) += (wd.array() - mean_wd - xhat.row(i).array() * mean_wdx).matrix() *
                     inv_std(i);
      }
    }
  });
}

}  // namespace lec
