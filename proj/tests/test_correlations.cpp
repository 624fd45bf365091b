#include <catch2/catch_amalgamated.hpp>

#include <unsupported/Eigen/KroneckerProduct>

#include "causalkit/correlations.hpp"

using namespace causalkit;

namespace {

Matrix pauli(char p) {
  Matrix m(2, 2);
  switch (p) {
    case 'x': m << 0, 1, 1, 0; break;
    case 'y': m << 0, Complex(0, -1), Complex(0, 1), 0; break;
    case 'z': m << 1, 0, 0, -1; break;
    default: m = Matrix::Identity(2, 2);
  }
  return m;
}

LabeledOperator proj(const SystemLabel& l, int v) {
  Matrix m = Matrix::Zero(2, 2);
  m(v, v) = 1.0;
  return LabeledOperator(SpaceSpec({{l, 2}}), m);
}

/// Bipartite identity-channel chain a -> b with |+> fed into party a.
LabeledOperator chain2(int a, int b) {
  Matrix plus(2, 2);
  plus << 0.5, 0.5, 0.5, 0.5;
  auto w = tensor(LabeledOperator(SpaceSpec({{SystemLabel::in(a), 2}}), plus),
                  max_entangled(SystemLabel::out(a), SystemLabel::in(b), 2));
  return tensor_identity(w, SystemLabel::out(b), 2);
}

/// 1/4 (1 + s (ZZZ1 + Z1XX)) on parties a, b (factor order aI aO bI bO).
ProcessMatrix w_two_party(double s, int a = 1, int b = 2) {
  auto kron4 = [](const Matrix& m1, const Matrix& m2, const Matrix& m3,
                  const Matrix& m4) {
    return Eigen::kroneckerProduct(
               Eigen::kroneckerProduct(m1, m2).eval(),
               Eigen::kroneckerProduct(m3, m4).eval())
        .eval();
  };
  Matrix one = Matrix::Identity(2, 2);
  Matrix m = (kron4(one, one, one, one) +
              s * (kron4(pauli('z'), pauli('z'), pauli('z'), one) +
                   kron4(pauli('z'), one, pauli('x'), pauli('x')))) /
             4.0;
  SpaceSpec spec({{SystemLabel::in(a), 2},
                  {SystemLabel::out(a), 2},
                  {SystemLabel::in(b), 2},
                  {SystemLabel::out(b), 2}});
  return ProcessMatrix(LabeledOperator(spec, m), {a, b});
}

/// Four-party process: a two-party core on {1,2} controls (via a projective
/// measurement of its joint output) whether |0> visits party 3 then 4, or 4
/// then 3.
ProcessMatrix controlled_relay(const ProcessMatrix& core1,
                               const ProcessMatrix& core2) {
  auto leg = [](int first, int second) {
    auto w = tensor(proj(SystemLabel::in(first), 0),
                    max_entangled(SystemLabel::out(first),
                                  SystemLabel::in(second), 2));
    return tensor_identity(w, SystemLabel::out(second), 2);
  };
  auto w = tensor(core1.op(), leg(3, 4)).scaled(0.5) +
           tensor(core2.op(), leg(4, 3)).scaled(0.5);
  return ProcessMatrix(w, {1, 2, 3, 4});
}

/// Tripartite process where party 1's output state classically controls
/// whether the chain runs 2 -> 3 or 3 -> 2.
ProcessMatrix dynamical3() {
  Matrix plus(2, 2);
  plus << 0.5, 0.5, 0.5, 0.5;
  auto rho1 = LabeledOperator(SpaceSpec({{SystemLabel::in(1), 2}}), plus);
  auto w = tensor(rho1, tensor(proj(SystemLabel::out(1), 0), chain2(2, 3))) +
           tensor(rho1, tensor(proj(SystemLabel::out(1), 1), chain2(3, 2)));
  return ProcessMatrix(w, {1, 2, 3});
}

/// Lazy classical instrument: on input 0, transmit untouched; on input 1,
/// measure in the Z basis, output the result, and send |send>.
Instrument lazy_classical(int k, int send) {
  auto I = SystemLabel::in(k), O = SystemLabel::out(k);
  return Instrument(
      k, {{max_entangled(I, O, 2)},
          {tensor(proj(I, 0), proj(O, send)), tensor(proj(I, 1), proj(O, send))}});
}

/// Single-setting, single-outcome identity-channel instrument.
Instrument transmit(int k) {
  return Instrument(k, {{max_entangled(SystemLabel::in(k), SystemLabel::out(k), 2)}});
}

template <typename F>
Correlation deterministic(const Scenario& sc, F pred) {
  std::vector<std::vector<double>> table;
  for (const auto& x : sc.input_tuples()) {
    std::vector<double> row;
    for (const auto& a : sc.outcome_tuples(x)) row.push_back(pred(x, a) ? 1.0 : 0.0);
    table.push_back(std::move(row));
  }
  return Correlation(sc, std::move(table));
}

}  // namespace

TEST_CASE("scenario enumeration and correlation tables") {
  Scenario sc = Scenario::lazy(4);
  REQUIRE(sc.n_input_tuples() == 16);
  long entries = 0;
  for (const auto& x : sc.input_tuples()) entries += sc.outcome_tuples(x).size();
  REQUIRE(entries == 81);

  Scenario s3({2, 2, 2}, {{1, 1}, {1, 2}, {1, 2}});
  REQUIRE(s3.n_outputs(1, 1) == 1);
  REQUIRE(s3.outcome_tuples({1, 1, 1}).size() == 4);

  auto p = deterministic(sc, [](const std::vector<int>&, const std::vector<int>& a) {
    return a == std::vector<int>(4, 0);
  });
  auto q = Correlation::from_json(p.to_json());
  REQUIRE(q.scenario() == sc);
  REQUIRE(q.p({1, 1, 1, 1}, {0, 0, 0, 0}) == 1.0);
  REQUIRE(q.p({1, 1, 1, 1}, {1, 1, 0, 0}) == 0.0);

  std::vector<std::vector<double>> bad(16);
  for (auto& row : bad) row = {1.0};
  REQUIRE_THROWS_AS(Correlation(sc, bad), ScenarioMismatch);
}

TEST_CASE("instrument validation") {
  REQUIRE_NOTHROW(lazy_classical(1, 0));
  // dropping a branch breaks trace preservation
  auto I = SystemLabel::in(1), O = SystemLabel::out(1);
  REQUIRE_THROWS_AS(
      Instrument(1, {{tensor(proj(I, 0), proj(O, 0))}}),
      DimensionMismatch);
  // negative branch is not CP
  REQUIRE_THROWS_AS(
      Instrument(1, {{max_entangled(I, O, 2).scaled(2.0),
                      max_entangled(I, O, 2).scaled(-1.0)}}),
      DimensionMismatch);

  auto h1 = sample_haar_instrument(2, 2, 2, {1, 2}, 42);
  auto h2 = sample_haar_instrument(2, 2, 2, {1, 2}, 42);
  REQUIRE((h1.op(1, 0) - h2.op(1, 0)).frobenius_norm() == 0.0);
  auto h3 = sample_haar_instrument(2, 2, 2, {1, 2}, 43);
  REQUIRE((h1.op(1, 0) - h3.op(1, 0)).frobenius_norm() > 1e-3);
}

TEST_CASE("game presets reproduce known values") {
  auto lgyni = GameFunctional::preset("lgyni");
  auto p00 = deterministic(Scenario::lazy(2),
                           [](const std::vector<int>&, const std::vector<int>& a) {
                             return a[0] == 0 && a[1] == 0;
                           });
  REQUIRE(lgyni.value(p00) == Catch::Approx(0.75).epsilon(1e-12));

  auto i3 = GameFunctional::preset("i3");
  auto p3 = deterministic(i3.scenario(),
                          [](const std::vector<int>& x, const std::vector<int>& a) {
                            return a[1] == 0 && a[2] == x[1] * x[2];
                          });
  REQUIRE(i3.value(p3) == Catch::Approx(7.0 / 8).epsilon(1e-12));

  auto i4 = GameFunctional::preset("i4");
  auto p4 = deterministic(Scenario::lazy(4),
                          [](const std::vector<int>& x, const std::vector<int>& a) {
                            return a[0] == 0 && a[1] == 0 && a[2] == 0 &&
                                   a[3] == x[2] * x[3];
                          });
  REQUIRE(i4.value(p4) == Catch::Approx(15.0 / 16).epsilon(1e-12));

  // adaptive strategy reaching the algebraic maximum: depending on whether
  // the first pair's product is 1, the last pair swaps who copies z*t
  auto p4max = deterministic(
      Scenario::lazy(4), [](const std::vector<int>& x, const std::vector<int>& a) {
        int zt = x[2] * x[3];
        if (a[0] != 0 || a[1] != 0) return false;
        if (x[0] * x[1] == 0) return a[2] == 0 && a[3] == zt;
        return a[3] == 0 && a[2] == zt;
      });
  REQUIRE(i4.value(p4max) == Catch::Approx(1.0).epsilon(1e-12));

  SECTION("game value is linear") {
    std::vector<std::vector<double>> mix;
    for (std::size_t xi = 0; xi < p4.table().size(); ++xi) {
      std::vector<double> row;
      for (std::size_t ai = 0; ai < p4.table()[xi].size(); ++ai)
        row.push_back(0.5 * p4.table()[xi][ai] + 0.5 * p4max.table()[xi][ai]);
      mix.push_back(std::move(row));
    }
    Correlation pm(Scenario::lazy(4), mix);
    REQUIRE(i4.value(pm) ==
            Catch::Approx(0.5 * i4.value(p4) + 0.5 * i4.value(p4max))
                .epsilon(1e-12));
  }

  SECTION("scenario mismatch is rejected") {
    REQUIRE_THROWS_AS(lgyni.value(p4), ScenarioMismatch);
    REQUIRE_THROWS_AS(GameFunctional::preset("nope"), ScenarioMismatch);
  }
}

TEST_CASE("Born rule reproduces analytic game values") {
  SECTION("identity chain with transparent instruments") {
    ProcessMatrix w(chain2(1, 2), {1, 2});
    auto p = born_rule(w, {transmit(1), transmit(2)}, {0, 0});
    REQUIRE(p.size() == 1);
    REQUIRE(p[0] == Catch::Approx(1.0).epsilon(1e-12));
  }

  const double alpha = 1.0 / std::sqrt(2.0);

  SECTION("two-party core beats the causal bound of the lazy guessing game") {
    auto w = w_two_party(alpha);
    auto p = born_rule_correlation(w, {lazy_classical(1, 0), lazy_classical(2, 0)});
    double v = GameFunctional::preset("lgyni").value(p);
    REQUIRE(v == Catch::Approx((9 + 5 * alpha) / 16).epsilon(1e-12));
    REQUIRE(v > 0.75 + 1e-2);
  }

  SECTION("four-party relay processes hit the facet violation value") {
    std::vector<Instrument> instr = {lazy_classical(1, 0), lazy_classical(2, 0),
                                     lazy_classical(3, 1), lazy_classical(4, 1)};
    auto game = GameFunctional::preset("i4prime");
    const double expect = (6 - 5 * std::sqrt(2.0)) / 16;

    auto w1 = controlled_relay(w_two_party(alpha), w_two_party(-alpha));
    REQUIRE(game.value(born_rule_correlation(w1, instr)) ==
            Catch::Approx(expect).margin(1e-10));

    auto w2 = controlled_relay(w_two_party(alpha), w_two_party(1 - alpha));
    REQUIRE(game.value(born_rule_correlation(w2, instr)) ==
            Catch::Approx(expect).margin(1e-10));
  }

  SECTION("random instruments give normalized distributions") {
    auto w = w_two_party(alpha);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      std::vector<Instrument> instr = {
          sample_haar_instrument(1, 2, 2, {1, 2}, 100 + seed),
          sample_haar_instrument(2, 2, 2, {1, 2}, 200 + seed)};
      for (const auto& x : Scenario::lazy(2).input_tuples()) {
        auto p = born_rule(w, instr, x);
        double total = 0;
        for (double v : p) {
          REQUIRE(v >= 0.0);
          total += v;
        }
        REQUIRE(total == Catch::Approx(1.0).margin(1e-9));
      }
    }
  }
}

TEST_CASE("Born rule with an open future") {
  // party 1 receives a fixed qubit state and its output line exits into F
  Matrix rho = (Matrix::Identity(2, 2) + 0.3 * pauli('x') + 0.4 * pauli('y')) / 2;
  auto w_op = tensor(LabeledOperator(SpaceSpec({{SystemLabel::in(1), 2}}), rho),
                     max_entangled(SystemLabel::out(1), SystemLabel::future(), 2));
  ProcessMatrix w(w_op, {1});

  auto inst = lazy_classical(1, 0);
  SECTION("transmission forwards the input state to the future") {
    auto m = born_rule_pf(w, {inst}, {0}, {0});
    REQUIRE(m.spec().contains(SystemLabel::future()));
    REQUIRE((m - LabeledOperator(m.spec(), rho)).frobenius_norm() < 1e-12);
  }
  SECTION("outcome branches sum to a unit-trace future state") {
    auto m = born_rule_pf(w, {inst}, {1}, {0}) + born_rule_pf(w, {inst}, {1}, {1});
    REQUIRE(m.trace().real() == Catch::Approx(1.0).epsilon(1e-12));
    REQUIRE((m - proj(SystemLabel::future(), 0)).frobenius_norm() < 1e-12);
  }
  SECTION("probability extraction requires a trivial future") {
    REQUIRE_THROWS_AS(born_rule(w, {inst}, {0}), DimensionMismatch);
  }
}

TEST_CASE("causal decompositions of certified circuits") {
  auto mix_op = chain2(1, 2).scaled(0.5) + chain2(2, 1).scaled(0.5);
  ProcessMatrix mix(mix_op, {1, 2});
  std::vector<Instrument> instr2 = {lazy_classical(1, 0), lazy_classical(2, 0)};
  auto born2 = born_rule_correlation(mix, instr2);

  auto check_consistency = [](const CausalDecomposition& dec,
                              const Correlation& born, double tol) {
    auto xs = dec.scenario.input_tuples();
    for (std::size_t xi = 0; xi < xs.size(); ++xi) {
      auto marg = dec.marginal(xi);
      for (std::size_t ai = 0; ai < marg.size(); ++ai)
        REQUIRE(marg[ai] == Catch::Approx(born.p(xi, ai)).margin(tol));
      for (std::size_t oi = 0; oi < dec.orders.size(); ++oi)
        for (double v : dec.values[xi][oi]) REQUIRE(v >= -1e-12);
    }
  };

  SECTION("even mixture of the two orders, via an ordered certificate") {
    auto r = check_membership(mix, ClassTag::conv_fo());
    REQUIRE(r.verdict == MembershipResult::Verdict::member);
    auto dec = causal_decomposition(*r.certificate, instr2);
    check_consistency(dec, born2, 1e-8);
    for (std::size_t xi = 0; xi < 4; ++xi)
      for (std::size_t oi = 0; oi < dec.orders.size(); ++oi)
        REQUIRE(dec.order_weight(xi, oi) == Catch::Approx(0.5).margin(1e-6));
  }

  SECTION("even mixture of the two orders, via a branch-ratio chain") {
    auto r = check_membership(mix, ClassTag::sup_fo());
    REQUIRE(r.verdict == MembershipResult::Verdict::member);
    auto dec = causal_decomposition(*r.certificate, instr2);
    check_consistency(dec, born2, 1e-8);
    for (std::size_t xi = 0; xi < 4; ++xi)
      for (std::size_t oi = 0; oi < dec.orders.size(); ++oi)
        REQUIRE(dec.order_weight(xi, oi) == Catch::Approx(0.5).margin(1e-6));
  }

  SECTION("dynamically ordered tripartite circuit") {
    auto w = dynamical3();
    std::vector<Instrument> instr3 = {
        sample_haar_instrument(1, 2, 2, {1, 2}, 7),
        sample_haar_instrument(2, 2, 2, {1, 2}, 8),
        sample_haar_instrument(3, 2, 2, {1, 2}, 9)};
    auto born = born_rule_correlation(w, instr3);

    auto rq = check_membership(w, ClassTag::qc());
    REQUIRE(rq.verdict == MembershipResult::Verdict::member);
    check_consistency(causal_decomposition(*rq.certificate, instr3), born, 1e-8);

    auto rc = check_membership(w, ClassTag::cc());
    REQUIRE(rc.verdict == MembershipResult::Verdict::member);
    auto dec = causal_decomposition(*rc.certificate, instr3);
    check_consistency(dec, born, 1e-8);

    // the order in which parties 2 and 3 act must react to party 1's setting
    double shift = 0.0;
    for (std::size_t oi = 0; oi < dec.orders.size(); ++oi)
      shift = std::max(shift, std::abs(dec.order_weight(0, oi) -
                                       dec.order_weight(4, oi)));
    REQUIRE(shift > 0.05);
  }

  SECTION("only circuit-shaped certificates unravel") {
    auto r = check_membership(mix, ClassTag::nio_hull());
    REQUIRE(r.verdict == MembershipResult::Verdict::member);
    REQUIRE_THROWS_AS(causal_decomposition(*r.certificate, instr2),
                      CertificateInvalid);
  }
}
