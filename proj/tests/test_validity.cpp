// SPDX-License-Identifier: MIT
//
// Tests for process-matrix validity: the [1 - A_k^O] projection, subset
// constraints, normalization modes, and the operational constant-weight
// property for trace-preserving instruments.

#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "causalkit/validity.hpp"

using namespace causalkit;

namespace {

Matrix pauli(char c) {
  Matrix m(2, 2);
  switch (c) {
    case 'I': m << 1, 0, 0, 1; break;
    case 'X': m << 0, 1, 1, 0; break;
    case 'Y': m << 0, Complex(0, -1), Complex(0, 1), 0; break;
    case 'Z': m << 1, 0, 0, -1; break;
    default: throw std::runtime_error("bad pauli");
  }
  return m;
}

/// Four-qubit operator from a Pauli string on [A1I, A1O, A2I, A2O].
LabeledOperator pauli4(const std::string& s) {
  LabeledOperator acc({{SystemLabel::in(1), 2}}, pauli(s[0]));
  acc = tensor(acc, LabeledOperator({{SystemLabel::out(1), 2}}, pauli(s[1])));
  acc = tensor(acc, LabeledOperator({{SystemLabel::in(2), 2}}, pauli(s[2])));
  acc = tensor(acc, LabeledOperator({{SystemLabel::out(2), 2}}, pauli(s[3])));
  return acc;
}

/// The two-party process (1/4)(1 + alpha(ZZZ1 + Z1XX)) on A1^{IO} A2^{IO}.
ProcessMatrix w_plus_alpha(double alpha) {
  LabeledOperator w = pauli4("IIII") + alpha * pauli4("ZZZI") + alpha * pauli4("ZIXX");
  return ProcessMatrix(w.scaled(0.25), {1, 2});
}

Matrix random_complex(int r, int c, std::mt19937& rng) {
  std::normal_distribution<double> g;
  Matrix m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = Complex(g(rng), g(rng));
  return m;
}

/// Choi of a Haar-random channel (random isometry into output x env, env
/// traced out) for party k with qubit input/output.
LabeledOperator random_tp_choi(int k, std::mt19937& rng) {
  const int d_in = 2, d_out = 2, d_env = 2;
  Matrix g = random_complex(d_out * d_env, d_in, rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix V = Matrix(qr.householderQ()).leftCols(d_in);  // isometry
  std::vector<Matrix> kraus;
  for (int e = 0; e < d_env; ++e) {
    Matrix K(d_out, d_in);
    for (int o = 0; o < d_out; ++o) K.row(o) = V.row(o * d_env + e);
    kraus.push_back(K);
  }
  return choi_from_kraus(kraus, SystemLabel::in(k), d_in, SystemLabel::out(k),
                         d_out);
}

}  // namespace

TEST_CASE("lv_project kernel, idempotence, tracelessness") {
  std::mt19937 rng(42);
  const SystemLabel a1i = SystemLabel::in(1), a1o = SystemLabel::out(1);

  // W = V (x) 1^{A_k^O} is annihilated
  Matrix v = random_complex(2, 2, rng);
  v = (v + v.adjoint()).eval();
  auto W = tensor(LabeledOperator({{a1i, 2}}, v),
                  LabeledOperator::identity(SpaceSpec({{a1o, 2}})));
  REQUIRE(lv_project(W, 1).frobenius_norm() < 1e-12);

  // idempotence and tracelessness on a random 2-party Hermitian operator
  Matrix h = random_complex(16, 16, rng);
  h = ((h + h.adjoint()) / 2).eval();
  LabeledOperator m({{SystemLabel::in(1), 2}, {SystemLabel::out(1), 2},
                     {SystemLabel::in(2), 2}, {SystemLabel::out(2), 2}}, h);
  auto once = lv_project(m, 1);
  auto twice = lv_project(once, 1);
  REQUIRE((once.matrix() - twice.matrix()).norm() < 1e-12);
  REQUIRE(partial_trace(once, {SystemLabel::out(1)}).frobenius_norm() < 1e-12);

  REQUIRE_THROWS_AS(lv_project(m, 3), LabelError);
}

TEST_CASE("W_{+alpha} is a valid normalized process") {
  auto w = w_plus_alpha(1.0 / std::sqrt(2.0));
  auto rep = is_valid_process(w, ValidityMode::normalized);
  INFO(rep.failing_constraint);
  REQUIRE(rep.ok);
  REQUIRE(rep.worst_residual < 1e-9);
  REQUIRE(std::abs(w.op().trace().real() - 4.0) < 1e-12);  // Tr W = d^O
}

TEST_CASE("alpha beyond 1/sqrt2 breaks PSD, scale breaks normalization only") {
  auto bad = w_plus_alpha(0.9);
  auto rep = is_valid_process(bad, ValidityMode::normalized);
  REQUIRE_FALSE(rep.ok);
  REQUIRE(rep.failing_constraint == "psd");

  auto w = w_plus_alpha(1.0 / std::sqrt(2.0));
  ProcessMatrix scaled(w.op().scaled(0.37), {1, 2});
  REQUIRE_FALSE(is_valid_process(scaled, ValidityMode::normalized).ok);
  auto rep2 = is_valid_process(scaled, ValidityMode::up_to_normalization);
  INFO(rep2.failing_constraint);
  REQUIRE(rep2.ok);
}

TEST_CASE("zero matrix is valid up to normalization") {
  auto zero = LabeledOperator::zero(SpaceSpec(
      {{SystemLabel::in(1), 2}, {SystemLabel::out(1), 2},
       {SystemLabel::in(2), 2}, {SystemLabel::out(2), 2}}));
  ProcessMatrix w(zero, {1, 2});
  REQUIRE(is_valid_process(w, ValidityMode::up_to_normalization).ok);
  REQUIRE_FALSE(is_valid_process(w, ValidityMode::normalized).ok);
}

TEST_CASE("a generic PSD matrix is not a valid process") {
  std::mt19937 rng(7);
  Matrix g = random_complex(16, 16, rng);
  Matrix p = g * g.adjoint();
  p *= 4.0 / p.trace().real();
  ProcessMatrix w(LabeledOperator({{SystemLabel::in(1), 2}, {SystemLabel::out(1), 2},
                                   {SystemLabel::in(2), 2}, {SystemLabel::out(2), 2}},
                                  p),
                  {1, 2});
  REQUIRE_FALSE(is_valid_process(w, ValidityMode::up_to_normalization).ok);
}

TEST_CASE("validity is invariant under factor reordering of the input") {
  auto w = w_plus_alpha(1.0 / std::sqrt(2.0));
  // Rebuild the same operator listing factors in reversed order.
  std::vector<Factor> rev(w.op().spec().factors().rbegin(),
                          w.op().spec().factors().rend());
  auto remapped = detail::index_map(w.op().spec().factors(), rev);
  long d = w.op().dim();
  Matrix m(d, d);
  for (long i = 0; i < d; ++i)
    for (long j = 0; j < d; ++j) m(i, j) = w.op().matrix()(remapped[i], remapped[j]);
  ProcessMatrix w2(LabeledOperator(rev, m), {1, 2});
  REQUIRE((w2.op().matrix() - w.op().matrix()).norm() < 1e-14);
  REQUIRE(is_valid_process(w2, ValidityMode::normalized).ok);
}

TEST_CASE("TP instruments give constant total weight on valid-up-to-norm W") {
  std::mt19937 rng(11);
  auto w = w_plus_alpha(1.0 / std::sqrt(2.0));
  ProcessMatrix scaled(w.op().scaled(0.61), {1, 2});
  REQUIRE(is_valid_process(scaled, ValidityMode::up_to_normalization).ok);

  double first = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    auto m1 = random_tp_choi(1, rng);
    auto m2 = random_tp_choi(2, rng);
    auto total = link_product(link_product(m1, m2), scaled.op());
    REQUIRE(total.dim() == 1);
    double val = total.matrix()(0, 0).real();
    if (trial == 0) first = val;
    REQUIRE(std::abs(val - first) < 1e-8);
  }
}
