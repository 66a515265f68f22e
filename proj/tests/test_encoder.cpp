#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <lec/encoder.hpp>

#include "testutil.hpp"

#include <cstring>
#include <vector>

using testutil::M;
using testutil::randm;
using V = lec::Var<double>;
using lec::Index;
using lec::Tape;

namespace {

// 16 block tensors in a fixed order, as leaf list entries
std::vector<M> random_block_mats(Index d, double scale = 0.3) {
  std::vector<M> ms;
  ms.push_back(M::Ones(1, d));          // ln1_g
  ms.push_back(randm(1, d, 0.05));      // ln1_b
  for (int k = 0; k < 4; ++k) {         // wq,bq,wk,bk,wv,bv,wo,bo
    ms.push_back(randm(d, d, scale));
    ms.push_back(randm(1, d, 0.05));
  }
  ms.push_back(M::Ones(1, d));          // ln2_g
  ms.push_back(randm(1, d, 0.05));      // ln2_b
  ms.push_back(randm(d, 4 * d, scale));
  ms.push_back(randm(1, 4 * d, 0.05));
  ms.push_back(randm(4 * d, d, scale));
  ms.push_back(randm(1, d, 0.05));
  return ms;
}

lec::BlockVars<double> as_block(const std::vector<V>& v, size_t off = 0) {
  return {v[off + 0], v[off + 1], v[off + 2],  v[off + 3],  v[off + 4],  v[off + 5],
          v[off + 6], v[off + 7], v[off + 8],  v[off + 9],  v[off + 10], v[off + 11],
          v[off + 12], v[off + 13], v[off + 14], v[off + 15]};
}

}  // namespace

TEST_CASE("similarity adjacency matches hand arithmetic") {
  Tape<double> t;
  SUBCASE("identical nonzero rows give uniform rows") {
    M x(4, 3);
    for (int i = 0; i < 4; ++i) x.row(i) << 1.0, 2.0, -1.0;
    V a = lec::similarity_adjacency(t.leaf(x));
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) CHECK(a.val()(i, j) == doctest::Approx(0.25).epsilon(1e-9));
  }
  SUBCASE("single row") {
    M x(1, 2);
    x << 3.0, 4.0;
    V a = lec::similarity_adjacency(t.leaf(x));
    CHECK(a.val()(0, 0) == doctest::Approx(1.0));
  }
  SUBCASE("orthogonal unit rows") {
    M x(2, 2);
    x << 1.0, 0.0, 0.0, 1.0;
    V a = lec::similarity_adjacency(t.leaf(x));
    const double e = std::exp(1.0);
    CHECK(a.val()(0, 0) == doctest::Approx(e / (e + 1)).epsilon(1e-6));
    CHECK(a.val()(0, 1) == doctest::Approx(1 / (e + 1)).epsilon(1e-6));
    CHECK(a.val()(0, 0) == doctest::Approx(0.7311).epsilon(1e-4));
  }
  SUBCASE("rows sum to one for random input") {
    V a = lec::similarity_adjacency(t.leaf(randm(7, 5)));
    for (int i = 0; i < 7; ++i) CHECK(a.val().row(i).sum() == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("gcn layer matches the GELU(A X W) formula") {
  Tape<double> t;
  SUBCASE("identity weight, single position") {
    M x(1, 2);
    x << 2.0, 0.0;
    M a(1, 1);
    a << 1.0;
    V f = lec::gcn_layer(t.leaf(x), t.leaf(a), t.leaf(M::Identity(2, 2)));
    CHECK(f.val()(0, 0) == doctest::Approx(1.9545).epsilon(1e-4));
    CHECK(f.val()(0, 1) == doctest::Approx(0.0));
  }
  SUBCASE("zero input stays zero") {
    V f = lec::gcn_layer(t.leaf(M::Zero(3, 4)), t.leaf(M::Constant(3, 3, 1.0 / 3)),
                         t.leaf(randm(4, 4)));
    CHECK(f.val().cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("uniform adjacency with identical rows gives identical outputs") {
    M x(3, 4);
    for (int i = 0; i < 3; ++i) x.row(i) = randm(1, 4).row(0);
    x.row(1) = x.row(0);
    x.row(2) = x.row(0);
    V f = lec::gcn_layer(t.leaf(x), t.leaf(M::Constant(3, 3, 1.0 / 3)), t.leaf(randm(4, 4)));
    CHECK((f.val().row(0) - f.val().row(1)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((f.val().row(0) - f.val().row(2)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("window attention is local") {
  const Index d = 8, T = 10, w = 4;
  std::vector<M> block = random_block_mats(d);
  M x = randm(T, d);

  auto run = [&](const M& input) {
    Tape<double> t;
    std::vector<V> vs;
    for (const auto& m : block) vs.push_back(t.leaf(m));
    V out = lec::window_attention(t.leaf(input), as_block(vs), 4, w);
    return M(out.val());
  };

  M base = run(x);
  REQUIRE(base.rows() == T);

  M x2 = x;
  x2(5, 3) += 0.37;  // inside window 2 (rows 4..7)
  M pert = run(x2);

  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < d; ++j)
      CHECK(std::memcmp(&base(i, j), &pert(i, j), sizeof(double)) == 0);
  CHECK((base.middleRows(4, 4) - pert.middleRows(4, 4)).cwiseAbs().maxCoeff() > 0);
  for (Index i = 8; i < 10; ++i)
    for (Index j = 0; j < d; ++j)
      CHECK(std::memcmp(&base(i, j), &pert(i, j), sizeof(double)) == 0);
}

TEST_CASE("identical post-encoding window contents produce identical window outputs") {
  const Index d = 8, w = 3, T = 6;
  std::vector<M> block = random_block_mats(d);
  M pe = lec::positional_encoding<double>(T, d);
  const double pe_scale = 1.0 / std::sqrt(double(d));
  M base = randm(w, d);
  M x(T, d);
  for (Index t = 0; t < T; ++t) x.row(t) = base.row(t % w) - pe_scale * pe.row(t);

  Tape<double> t;
  std::vector<V> vs;
  for (const auto& m : block) vs.push_back(t.leaf(m));
  V out = lec::window_attention(t.leaf(x), as_block(vs), 4, w);
  // x was built as (window content - scaled PE), so adding the encoding back
  // reconstructs the same window contents up to one rounding step; outputs
  // agree to ~1 ulp.
  for (Index i = 0; i < w; ++i)
    for (Index j = 0; j < d; ++j)
      CHECK(out.val()(i, j) == doctest::Approx(out.val()(i + w, j)).epsilon(1e-10));
}

TEST_CASE("encode output shape survives padding edge cases") {
  const Index d = 8;
  std::vector<M> leaves = random_block_mats(d);
  leaves.push_back(randm(d, d, 0.3));  // gcn weight
  for (Index T : {Index(1), Index(63), Index(64), Index(65)}) {
    Tape<double> t;
    std::vector<V> vs;
    for (const auto& m : leaves) vs.push_back(t.leaf(m));
    V f = lec::encode(t.leaf(randm(T, d)), as_block(vs), vs[16], 4, 64);
    CHECK(f.rows() == T);
    CHECK(f.cols() == d);
    CHECK(f.val().allFinite());
  }
}

TEST_CASE("encode equals manual stage composition") {
  const Index d = 8, T = 9;
  std::vector<M> leaves = random_block_mats(d);
  leaves.push_back(randm(d, d, 0.3));
  M x = randm(T, d);

  Tape<double> t;
  std::vector<V> vs;
  for (const auto& m : leaves) vs.push_back(t.leaf(m));
  V comp = lec::encode(t.leaf(x), as_block(vs), vs[16], 4, 4);

  V xl = lec::window_attention(t.leaf(x), as_block(vs), 4, 4);
  V manual = lec::gcn_layer(xl, lec::similarity_adjacency(xl), vs[16]);
  CHECK((comp.val() - manual.val()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("encode gradient matches finite differences") {
  const Index d = 8, T = 5;
  std::vector<M> leaves = random_block_mats(d);
  leaves.push_back(randm(d, d, 0.3));  // gcn w
  leaves.push_back(randm(T, d));       // input
  const M w = randm(T, d);
  testutil::fd_check(
      leaves,
      [&](Tape<double>& t, const std::vector<V>& v) {
        V f = lec::encode(v[17], as_block(v), v[16], 4, 2);
        return lec::sum_all(lec::hadamard(f, t.constant(w)));
      },
      1e-4);
}

TEST_CASE("window attention rejects bad arguments") {
  Tape<double> t;
  std::vector<V> vs;
  for (const auto& m : random_block_mats(8)) vs.push_back(t.leaf(m));
  testutil::expect_throw_containing(
      [&] { lec::window_attention(t.leaf(randm(4, 8)), as_block(vs), 4, 0); }, "window_len");
  M bad = randm(4, 8);
  bad(1, 1) = std::numeric_limits<double>::infinity();
  testutil::expect_throw_containing(
      [&] { lec::window_attention(t.leaf(bad), as_block(vs), 4, 2); }, "non-finite");
  testutil::expect_throw_containing(
      [&] { lec::window_attention(t.leaf(randm(4, 8)), as_block(vs), 3, 2); }, "divisible");
}
