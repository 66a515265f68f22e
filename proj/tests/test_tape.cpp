#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <lec/tape.hpp>

#include <cmath>
#include <random>
#include <vector>

using lec::Index;
using lec::Tape;
using lec::Var;
using M = lec::Mat<double>;
using V = Var<double>;

namespace {

std::mt19937_64 rng(12345);

M randm(Index r, Index c, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  M m(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) m(i, j) = n(rng);
  return m;
}

// Reduce an arbitrary output to a scalar with fixed random weights so every
// entry of the output contributes a distinct gradient signal.
V weighted_sum(Tape<double>& t, V y, const M& w) {
  return lec::sum_all(lec::hadamard(y, t.constant(w)));
}

template <typename F>
double eval_scalar(const std::vector<M>& xs, F&& build) {
  Tape<double> t;
  std::vector<V> vs;
  for (const auto& x : xs) vs.push_back(t.leaf(x));
  return build(t, vs).val()(0, 0);
}

// Central finite differences against the tape's backward pass.
template <typename F>
void fd_check(std::vector<M> xs, F&& build, double tol = 1e-5, double h = 1e-6) {
  Tape<double> t;
  std::vector<V> vs;
  for (const auto& x : xs) vs.push_back(t.leaf(x));
  V out = build(t, vs);
  REQUIRE(out.rows() == 1);
  REQUIRE(out.cols() == 1);
  t.backward(out);
  std::vector<M> an;
  for (const auto& v : vs) an.push_back(t.grad_of(v));

  for (size_t k = 0; k < xs.size(); ++k) {
    for (Index i = 0; i < xs[k].rows(); ++i) {
      for (Index j = 0; j < xs[k].cols(); ++j) {
        const double orig = xs[k](i, j);
        xs[k](i, j) = orig + h;
        const double fp = eval_scalar(xs, build);
        xs[k](i, j) = orig - h;
        const double fm = eval_scalar(xs, build);
        xs[k](i, j) = orig;
        const double fd = (fp - fm) / (2.0 * h);
        const double err = std::abs(fd - an[k](i, j));
        CHECK(err <= tol * std::max(1.0, std::abs(fd)));
      }
    }
  }
}

}  // namespace

TEST_CASE("elementwise ops match finite differences") {
  const M w = randm(3, 4);
  fd_check({randm(3, 4), randm(3, 4)},
           [&](Tape<double>& t, const std::vector<V>& v) {
             return weighted_sum(t, lec::add(v[0], v[1]), w);
           });
  fd_check({randm(3, 4), randm(3, 4)},
           [&](Tape<double>& t, const std::vector<V>& v) {
             return weighted_sum(t, lec::sub(v[0], v[1]), w);
           });
  fd_check({randm(3, 4), randm(3, 4)},
           [&](Tape<double>& t, const std::vector<V>& v) {
             return weighted_sum(t, lec::hadamard(v[0], v[1]), w);
           });
  M denom = randm(3, 4);
  for (Index i = 0; i < denom.rows(); ++i)
    for (Index j = 0; j < denom.cols(); ++j)
      denom(i, j) = (denom(i, j) >= 0 ? 1.5 : -1.5) + denom(i, j);
  fd_check({randm(3, 4), denom},
           [&](Tape<double>& t, const std::vector<V>& v) {
             return weighted_sum(t, lec::cdiv(v[0], v[1]), w);
           });
  fd_check({randm(3, 4)},
           [&](Tape<double>& t, const std::vector<V>& v) {
             return weighted_sum(t, lec::affine(v[0], 1.7, -0.3), w);
           });
  fd_check({randm(3, 4)},
           [&](Tape<double>& t, const std::vector<V>& v) {
             return weighted_sum(t, lec::scale(v[0], -2.5), w);
           });
}

TEST_CASE("matrix products and layout ops match finite differences") {
  const M w34 = randm(3, 4);
  const M w35 = randm(3, 5);
  const M w43 = randm(4, 3);
  fd_check({randm(3, 2), randm(2, 4)},
           [&](Tape<double>& t, const std::vector<V>& v) {
             return weighted_sum(t, lec::matmul(v[0], v[1]), w34);
           });
  fd_check({randm(3, 2), randm(5, 2)},
           [&](Tape<double>& t, const std::vector<V>& v) {
             return weighted_sum(t, lec::matmul_nt(v[0], v[1]), w35);
           });
  fd_check({randm(3, 4)},
           [&](Tape<double>& t, const std::vector<V>& v) {
             return weighted_sum(t, lec::transpose(v[0]), w43);
           });
  fd_check({randm(3, 4), randm(1, 4)},
           [&](Tape<double>& t, const std::vector<V>& v) {
             return weighted_sum(t, lec::add_rowvec(v[0], v[1]), w34);
           });
  fd_check({randm(3, 4), randm(1, 1)},
           [&](Tape<double>& t, const std::vector<V>& v) {
             return weighted_sum(t, lec::add_scalar(v[0], v[1]), w34);
           });
  fd_check({randm(3, 1), randm(1, 4)},
           [&](Tape<double>& t, const std::vector<V>& v) {
             return weighted_sum(t, lec::outer_add(v[0], v[1]), w34);
           });
}

TEST_CASE("concat and slice ops match finite differences") {
  const M w54 = randm(5, 4);
  fd_check({randm(2, 4), randm(3, 4)},
           [&](Tape<double>& t, const std::vector<V>& v) {
             return weighted_sum(t, lec::concat_rows(v[0], v[1]), w54);
           });
  const M w37 = randm(3, 7);
  fd_check({randm(3, 2), randm(3, 4), randm(3, 1)},
           [&](Tape<double>& t, const std::vector<V>& v) {
             return weighted_sum(t, lec::concat_cols<double>({v[0], v[1], v[2]}), w37);
           });
  const M w24 = randm(2, 4);
  fd_check({randm(5, 4)},
           [&](Tape<double>& t, const std::vector<V>& v) {
             return weighted_sum(t, lec::slice_rows(v[0], 1, 2), w24);
           });
  const M w52 = randm(5, 2);
  fd_check({randm(5, 4)},
           [&](Tape<double>& t, const std::vector<V>& v) {
             return weighted_sum(t, lec::slice_cols(v[0], 2, 2), w52);
           });
}

TEST_CASE("reductions match finite differences") {
  const M w31 = randm(3, 1);
  fd_check({randm(3, 4)},
           [&](Tape<double>& t, const std::vector<V>& v) {
             return weighted_sum(t, lec::row_sum(v[0]), w31);
           });
  fd_check({randm(3, 4)},
           [&](Tape<double>& t, const std::vector<V>& v) { (void)t; return lec::sum_all(v[0]); });
  fd_check({randm(3, 4)},
           [&](Tape<double>& t, const std::vector<V>& v) {
             (void)t;
             return lec::pick(v[0], 2, 1);
           });
  const M w13 = randm(1, 3);
  fd_check({randm(7, 3)},
           [&](Tape<double>& t, const std::vector<V>& v) {
             return weighted_sum(t, lec::topk_col_mean(v[0], 3), w13);
           });
}

TEST_CASE("nonlinearities match finite differences") {
  const M w = randm(3, 4);
  fd_check({randm(3, 4)},
           [&](Tape<double>& t, const std::vector<V>& v) {
             return weighted_sum(t, lec::row_softmax(v[0]), w);
           });
  fd_check({randm(3, 4)},
           [&](Tape<double>& t, const std::vector<V>& v) {
             return weighted_sum(t, lec::gelu(v[0]), w);
           });
  fd_check({randm(3, 4)},
           [&](Tape<double>& t, const std::vector<V>& v) {
             return weighted_sum(t, lec::logistic(v[0]), w);
           });
  fd_check({randm(3, 4)},
           [&](Tape<double>& t, const std::vector<V>& v) {
             return weighted_sum(t, lec::softplus(v[0]), w);
           });
  fd_check({randm(3, 4, 0.5)},
           [&](Tape<double>& t, const std::vector<V>& v) {
             return weighted_sum(t, lec::vexp(v[0]), w);
           });
  M pos = randm(3, 4).cwiseAbs();
  pos.array() += 0.1;
  fd_check({pos},
           [&](Tape<double>& t, const std::vector<V>& v) {
             return weighted_sum(t, lec::vlog_eps(v[0], 1e-8), w);
           });
  fd_check({randm(3, 4)},
           [&](Tape<double>& t, const std::vector<V>& v) {
             return weighted_sum(t, lec::vsquare(v[0]), w);
           });
  fd_check({pos},
           [&](Tape<double>& t, const std::vector<V>& v) {
             return weighted_sum(t, lec::vsqrt_safe(v[0]), w);
           });
  M away = randm(3, 4);
  for (Index i = 0; i < away.rows(); ++i)
    for (Index j = 0; j < away.cols(); ++j)
      away(i, j) += (away(i, j) >= 0 ? 0.5 : -0.5);
  fd_check({away},
           [&](Tape<double>& t, const std::vector<V>& v) {
             return weighted_sum(t, lec::vabs(v[0]), w);
           });
  M rows = randm(3, 4);
  rows.array() += 2.0;  // keep rows well away from the zero-norm branch
  fd_check({rows},
           [&](Tape<double>& t, const std::vector<V>& v) {
             return weighted_sum(t, lec::l2_normalize_rows(v[0], 1e-8), w);
           });
  fd_check({randm(3, 4), randm(1, 4), randm(1, 4)},
           [&](Tape<double>& t, const std::vector<V>& v) {
             return weighted_sum(t, lec::layer_norm_rows(v[0], v[1], v[2]), w);
           },
           1e-4);
}

TEST_CASE("activation values match hand-computed references") {
  Tape<double> t;
  M x(1, 3);
  x << 2.0, 0.0, -1.0;
  V g = lec::gelu(t.leaf(x));
  CHECK(g.val()(0, 0) == doctest::Approx(1.9545).epsilon(1e-4));
  CHECK(g.val()(0, 1) == doctest::Approx(0.0));
  V sp = lec::softplus(t.leaf(M::Zero(1, 1)));
  CHECK(sp.val()(0, 0) == doctest::Approx(std::log(2.0)));

  M logits(1, 2);
  logits << 1.0, 0.0;
  V sm = lec::row_softmax(t.leaf(logits));
  CHECK(sm.val()(0, 0) == doctest::Approx(0.7311).epsilon(1e-4));
  CHECK(sm.val()(0, 1) == doctest::Approx(0.2689).epsilon(1e-4));
}

TEST_CASE("row_softmax rows sum to one even for extreme logits") {
  Tape<double> t;
  M x = randm(6, 5, 50.0);
  x(0, 0) = 1e4;
  x(1, 2) = -1e4;
  V y = lec::row_softmax(t.leaf(x));
  for (Index i = 0; i < y.rows(); ++i) {
    CHECK(y.val().row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(y.val().row(i).minCoeff() >= 0.0);
  }
}

TEST_CASE("topk prefers earlier index on ties") {
  Tape<double> t;
  M x(4, 1);
  x << 5.0, 3.0, 5.0, 1.0;
  auto idx = lec::topk_indices<double>(x.col(0), 2);
  REQUIRE(idx.size() == 2);
  CHECK(idx[0] == 0);
  CHECK(idx[1] == 2);

  V pooled = lec::topk_col_mean(t.leaf(x), 3);
  CHECK(pooled.val()(0, 0) == doctest::Approx((5.0 + 5.0 + 3.0) / 3.0));
}

TEST_CASE("l2_normalize_rows handles an all-zero row") {
  Tape<double> t;
  M x = M::Zero(2, 3);
  x.row(1) << 3.0, 0.0, 4.0;
  V ln = lec::l2_normalize_rows(t.leaf(x), 1e-8);
  CHECK(ln.val().row(0).norm() == 0.0);
  CHECK(ln.val()(1, 0) == doctest::Approx(0.6));
  CHECK(ln.val()(1, 2) == doctest::Approx(0.8));
}

TEST_CASE("subgradients at kinks are zero") {
  Tape<double> t;
  V x = t.leaf(M::Zero(2, 2));
  V y = lec::sum_all(lec::vabs(x));
  t.backward(y);
  CHECK(t.grad_of(x).cwiseAbs().maxCoeff() == 0.0);

  Tape<double> t2;
  V x2 = t2.leaf(M::Zero(2, 2));
  V y2 = lec::sum_all(lec::vsqrt_safe(x2));
  t2.backward(y2);
  CHECK(t2.grad_of(x2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gradients accumulate when a node feeds multiple consumers") {
  Tape<double> t;
  M x = randm(2, 3);
  V a = t.leaf(x);
  V y = lec::sum_all(lec::hadamard(a, a));
  t.backward(y);
  M expect = 2.0 * x;
  CHECK((t.grad_of(a) - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("constants receive no gradient and unused leaves return zeros") {
  Tape<double> t;
  V a = t.leaf(randm(2, 2));
  V c = t.constant(randm(2, 2));
  V unused = t.leaf(randm(3, 3));
  V y = lec::sum_all(lec::hadamard(a, c));
  t.backward(y);
  CHECK(t.grad_of(unused).cwiseAbs().maxCoeff() == 0.0);
  CHECK_FALSE(t.requires_grad(c.idx));
}

TEST_CASE("shape violations and non-scalar backward are rejected") {
  Tape<double> t;
  V a = t.leaf(randm(2, 3));
  V b = t.leaf(randm(3, 2));
  CHECK_THROWS_AS(lec::add(a, b), std::invalid_argument);
  CHECK_THROWS_AS(lec::matmul(a, a), std::invalid_argument);
  CHECK_THROWS_AS(lec::slice_rows(a, 1, 5), std::invalid_argument);
  CHECK_THROWS_AS(lec::topk_col_mean(a, 0), std::invalid_argument);
  CHECK_THROWS_AS(lec::topk_col_mean(a, 3), std::invalid_argument);
  CHECK_THROWS_AS(t.backward(a), std::invalid_argument);
}

TEST_CASE("zero-norm row backward routes gradient through the epsilon guard") {
  Tape<double> t;
  V x = t.leaf(M::Zero(1, 3));
  V y = lec::l2_normalize_rows(x, 1e-2);
  V s = lec::sum_all(y);
  t.backward(s);
  // y = x / (0 + eps) at x = 0, so dy/dx = 1/eps on the diagonal.
  CHECK(t.grad_of(x)(0, 0) == doctest::Approx(100.0));
}
