// SPDX-License-Identifier: MIT
//
// Tests for the labeled tensor algebra: products, partial trace/transpose,
// Choi objects, the link product, and JSON round-trips.

#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "causalkit/ops.hpp"

using namespace causalkit;

namespace {

Matrix random_complex(int d, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> g;
  Matrix m(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = Complex(g(rng), g(rng));
  return m;
}

Matrix random_hermitian(int d, unsigned seed) {
  Matrix m = random_complex(d, seed);
  return (m + m.adjoint()) / 2.0;
}

const SystemLabel X = SystemLabel::aux("x");
const SystemLabel Y = SystemLabel::aux("y");
const SystemLabel Z = SystemLabel::aux("z");

}  // namespace

TEST_CASE("canonical label order") {
  SpaceSpec s({{SystemLabel::future(), 2},
               {SystemLabel::out(1), 3},
               {SystemLabel::past(), 2},
               {SystemLabel::in(2), 2},
               {SystemLabel::in(1), 5}});
  REQUIRE(s.factors()[0].label == SystemLabel::past());
  REQUIRE(s.factors()[1].label == SystemLabel::in(1));
  REQUIRE(s.factors()[2].label == SystemLabel::out(1));
  REQUIRE(s.factors()[3].label == SystemLabel::in(2));
  REQUIRE(s.factors()[4].label == SystemLabel::future());
  REQUIRE(s.dim() == 2 * 3 * 2 * 2 * 5);
  REQUIRE_THROWS_AS(SpaceSpec({{X, 2}, {X, 2}}), LabelError);
  REQUIRE(SystemLabel::parse("A12O") == SystemLabel::out(12));
  REQUIRE(SystemLabel::parse(SystemLabel::aux("c").str()) == SystemLabel::aux("c"));
}

TEST_CASE("tensor of identities and basis projectors") {
  auto i2 = LabeledOperator::identity(SpaceSpec({{X, 2}}));
  auto i3 = LabeledOperator::identity(SpaceSpec({{Y, 3}}));
  auto t = tensor(i2, i3);
  REQUIRE(t.matrix().isApprox(Matrix::Identity(6, 6)));

  Matrix p0 = Matrix::Zero(2, 2), p1 = Matrix::Zero(2, 2);
  p0(0, 0) = 1; p1(1, 1) = 1;
  auto t2 = tensor(LabeledOperator(SpaceSpec({{X, 2}}), p0),
                   LabeledOperator(SpaceSpec({{Y, 2}}), p1));
  Matrix expect = Matrix::Zero(4, 4);
  expect(1, 1) = 1;  // |01><01| in [x, y] order
  REQUIRE(t2.matrix().isApprox(expect));
  REQUIRE_THROWS_AS(tensor(i2, i2), LabelError);
}

TEST_CASE("tensor equals brute-force Kronecker in canonical order") {
  Matrix a = random_complex(2, 1), b = random_complex(2, 2);
  auto t = tensor(LabeledOperator(SpaceSpec({{X, 2}}), a),
                  LabeledOperator(SpaceSpec({{Y, 2}}), b));
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      for (int k = 0; k < 2; ++k)
        for (int l = 0; l < 2; ++l)
          REQUIRE(t.matrix()(i * 2 + k, j * 2 + l) == a(i, j) * b(k, l));
}

TEST_CASE("tensor output independent of argument order") {
  Matrix a = random_complex(2, 3), b = random_complex(3, 4);
  LabeledOperator la(SpaceSpec({{X, 2}}), a), lb(SpaceSpec({{Y, 3}}), b);
  auto t1 = tensor(la, lb), t2 = tensor(lb, la);
  REQUIRE(t1.spec() == t2.spec());
  REQUIRE(t1.matrix().isApprox(t2.matrix()));
}

TEST_CASE("constructor re-canonicalizes permuted factor lists") {
  Matrix a = random_complex(2, 5), b = random_complex(3, 6);
  Matrix ab = Eigen::kroneckerProduct(a, b);   // [x, y] order
  Matrix ba = Eigen::kroneckerProduct(b, a);   // [y, x] order
  LabeledOperator m1({{X, 2}, {Y, 3}}, ab);
  LabeledOperator m2({{Y, 3}, {X, 2}}, ba);
  REQUIRE(m1.matrix().isApprox(m2.matrix()));
}

TEST_CASE("partial trace basics") {
  // maximally entangled reduction
  auto phi = max_entangled(X, Y, 2);  // |1>><<1|, trace 2
  auto red = partial_trace(phi.scaled(0.5), {Y});  // |Phi+><Phi+|
  REQUIRE(red.matrix().isApprox(Matrix::Identity(2, 2) * 0.5));

  // product state
  Matrix a = random_complex(2, 7), b = random_complex(3, 8);
  auto t = tensor(LabeledOperator(SpaceSpec({{X, 2}}), a),
                  LabeledOperator(SpaceSpec({{Y, 3}}), b));
  auto pt = partial_trace(t, {Y});
  REQUIRE(pt.matrix().isApprox(Matrix(a * b.trace())));

  // trace over everything = scalar trace; full trace preserved
  auto sc = partial_trace(t, {X, Y});
  REQUIRE(sc.dim() == 1);
  REQUIRE(std::abs(sc.matrix()(0, 0) - t.trace()) < 1e-12);
  REQUIRE(std::abs(pt.trace() - t.trace()) < 1e-12);

  REQUIRE_THROWS_AS(partial_trace(t, {Z}), LabelError);
}

TEST_CASE("partial transpose") {
  Matrix a = random_complex(2, 9), b = random_complex(3, 10);
  auto t = tensor(LabeledOperator(SpaceSpec({{X, 2}}), a),
                  LabeledOperator(SpaceSpec({{Y, 3}}), b));
  auto tt = partial_transpose(t, {Y});
  auto expect = tensor(LabeledOperator(SpaceSpec({{X, 2}}), a),
                       LabeledOperator(SpaceSpec({{Y, 3}}), Matrix(b.transpose())));
  REQUIRE(tt.matrix().isApprox(expect.matrix()));

  // involution on a random non-product operator
  LabeledOperator m({{X, 2}, {Y, 3}}, random_complex(6, 11));
  REQUIRE(partial_transpose(partial_transpose(m, {Y}), {Y}).matrix().isApprox(m.matrix()));

  // |Phi+><Phi+|^{T_Y} = SWAP/2, via index-loop oracle
  auto phi = max_entangled(X, Y, 2).scaled(0.5);
  auto sw = partial_transpose(phi, {Y});
  Matrix swap = Matrix::Zero(4, 4);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) swap(i * 2 + j, j * 2 + i) = 1.0;
  REQUIRE(sw.matrix().isApprox(Matrix(0.5 * swap)));
}

TEST_CASE("max_entangled basics") {
  auto phi = max_entangled(X, Y, 2);
  REQUIRE(std::abs(phi.trace() - Complex(2.0)) < 1e-14);
  Matrix m = phi.matrix();
  REQUIRE(m(0, 0) == Complex(1.0));
  REQUIRE(m(0, 3) == Complex(1.0));
  REQUIRE(m(3, 0) == Complex(1.0));
  REQUIRE(m(3, 3) == Complex(1.0));
  REQUIRE(m.cwiseAbs().sum() == 4.0);
  // reduction is the identity (Choi of the identity channel)
  REQUIRE(partial_trace(phi, {Y}).matrix().isApprox(Matrix::Identity(2, 2)));
  REQUIRE_THROWS_AS(max_entangled(X, X, 2), LabelError);
}

TEST_CASE("choi_from_kraus") {
  // single Kraus = identity -> |1>><<1|
  auto c = choi_from_kraus({Matrix::Identity(2, 2)}, X, 2, Y, 2);
  REQUIRE(c.matrix().isApprox(max_entangled(X, Y, 2).matrix()));

  // dephasing: {|0><0|, |1><1|} -> sum_z |zz><zz|
  Matrix k0 = Matrix::Zero(2, 2), k1 = Matrix::Zero(2, 2);
  k0(0, 0) = 1; k1(1, 1) = 1;
  auto deph = choi_from_kraus({k0, k1}, X, 2, Y, 2);
  Matrix expect = Matrix::Zero(4, 4);
  expect(0, 0) = 1; expect(3, 3) = 1;
  REQUIRE(deph.matrix().isApprox(expect));

  // random isometry 2 -> 4: TP iff sum K^dag K = 1; single Kraus isometry
  Matrix g = random_complex(4, 12).leftCols(2);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix V = Matrix(qr.householderQ()).leftCols(2);
  auto ch = choi_from_kraus({V}, X, 2, Y, 4);
  auto tr_out = partial_trace(ch, {Y});
  REQUIRE((tr_out.matrix() - Matrix::Identity(2, 2)).norm() < 1e-12);
  // PSD by construction
  Eigen::SelfAdjointEigenSolver<Matrix> es(ch.matrix());
  REQUIRE(es.eigenvalues().minCoeff() > -1e-12 * ch.matrix().norm());

  REQUIRE_THROWS_AS(choi_from_kraus({Matrix::Identity(3, 3)}, X, 2, Y, 2),
                    LabelError);
}

TEST_CASE("link product basic reductions") {
  // empty shared set -> tensor
  Matrix a = random_complex(2, 13), b = random_complex(3, 14);
  LabeledOperator la(SpaceSpec({{X, 2}}), a), lb(SpaceSpec({{Y, 3}}), b);
  REQUIRE(link_product(la, lb).matrix().isApprox(tensor(la, lb).matrix()));

  // all labels shared -> scalar Tr(a^T b)
  LabeledOperator ha({{X, 2}, {Y, 3}}, random_complex(6, 15));
  LabeledOperator hb({{X, 2}, {Y, 3}}, random_complex(6, 16));
  auto s = link_product(ha, hb);
  REQUIRE(s.dim() == 1);
  Complex expect = (ha.matrix().transpose() * hb.matrix()).trace();
  REQUIRE(std::abs(s.matrix()(0, 0) - expect) < 1e-12);

  // state through identity channel: rho * |1>><<1|^{XY} = rho^{Y}
  Matrix rho = random_hermitian(2, 17);
  auto out = link_product(LabeledOperator(SpaceSpec({{X, 2}}), rho),
                          max_entangled(X, Y, 2));
  REQUIRE(out.spec() == SpaceSpec({{Y, 2}}));
  REQUIRE(out.matrix().isApprox(rho));
}

TEST_CASE("link product applies a channel via its Choi") {
  // channel E(rho) = V rho V^dag for a random isometry V: X(2) -> Z(3)
  Matrix g = random_complex(3, 18).leftCols(2);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix V = Matrix(qr.householderQ()).leftCols(2);
  auto choi = choi_from_kraus({V}, X, 2, Z, 3);
  Matrix rho = random_hermitian(2, 19);
  auto out = link_product(LabeledOperator(SpaceSpec({{X, 2}}), rho), choi);
  REQUIRE(out.matrix().isApprox(Matrix(V * rho * V.adjoint())));
}

TEST_CASE("link product commutative and associative") {
  // three two-qubit Choi-like operators chained X -> Y -> Z -> X'
  const SystemLabel W = SystemLabel::aux("w");
  LabeledOperator m1({{X, 2}, {Y, 2}}, random_complex(4, 20));
  LabeledOperator m2({{Y, 2}, {Z, 2}}, random_complex(4, 21));
  LabeledOperator m3({{Z, 2}, {W, 2}}, random_complex(4, 22));

  auto ab = link_product(m1, m2);
  auto ba = link_product(m2, m1);
  REQUIRE(ab.spec() == ba.spec());
  REQUIRE((ab.matrix() - ba.matrix()).norm() < 1e-10);

  auto left = link_product(link_product(m1, m2), m3);
  auto right = link_product(m1, link_product(m2, m3));
  REQUIRE(left.spec() == right.spec());
  REQUIRE((left.matrix() - right.matrix()).norm() < 1e-10);

  // trace identity: Tr(a * b) over all labels = Tr(a^T b) when specs match
  LabeledOperator q1({{X, 2}, {Y, 2}}, random_complex(4, 23));
  LabeledOperator q2({{X, 2}, {Y, 2}}, random_complex(4, 24));
  auto sc = link_product(q1, q2);
  REQUIRE(std::abs(sc.matrix()(0, 0) -
                   (q1.matrix().transpose() * q2.matrix()).trace()) < 1e-12);
}

TEST_CASE("partial trace of tensor = scaled factor") {
  Matrix a = random_complex(3, 25), b = random_complex(2, 26);
  LabeledOperator la(SpaceSpec({{X, 3}}), a), lb(SpaceSpec({{Y, 2}}), b);
  auto pt = partial_trace(tensor(la, lb), {X});
  REQUIRE(pt.matrix().isApprox(Matrix(b * a.trace())));
}

TEST_CASE("JSON round trip is bit-exact") {
  LabeledOperator m({{SystemLabel::in(1), 2}, {SystemLabel::past(), 3}},
                    random_complex(6, 27));
  auto j = m.to_json();
  auto m2 = LabeledOperator::from_json(j);
  REQUIRE(m2.spec() == m.spec());
  REQUIRE(m2.matrix() == m.matrix());  // exact, not approximate

  // via string serialization too
  auto j3 = nlohmann::json::parse(j.dump());
  auto m3 = LabeledOperator::from_json(j3);
  REQUIRE(m3.matrix() == m.matrix());
}
