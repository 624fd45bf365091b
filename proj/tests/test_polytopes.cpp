// Tests for the correlation-polytope machinery: vertex censuses, LP game
// bounds, membership with decompositions and witnesses, vertex-distance,
// and the independent recursive causality oracle.

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <random>

#include "causalkit/polytopes.hpp"

using namespace causalkit;

namespace {

template <typename F>
Correlation make_corr(const Scenario& sc, F prob) {
  std::vector<std::vector<double>> table;
  for (const auto& x : sc.input_tuples()) {
    std::vector<double> row;
    for (const auto& a : sc.outcome_tuples(x)) row.push_back(prob(x, a));
    table.push_back(std::move(row));
  }
  return Correlation(sc, std::move(table));
}

// Three parties: the first has a binary input and no output, the others are
// lazy (output only when their input is 1).
Scenario steering_scenario() { return Scenario({2, 2, 2}, {{1, 1}, {1, 2}, {1, 2}}); }

// Dynamical-order correlation: the first input decides which of the other two
// parties guesses the product of the remaining inputs.
Correlation pbc_dynamical() {
  return make_corr(steering_scenario(),
                   [](const std::vector<int>& x, const std::vector<int>& a) {
                     int b = a[1], c = a[2], y = x[1], z = x[2];
                     if (x[0] == 0) return (b == 0 && c == y * z) ? 1.0 : 0.0;
                     return (c == 0 && b == y * z) ? 1.0 : 0.0;
                   });
}

// Two-way-signalling deterministic point: the middle and last party each
// output the product of each other's inputs.
Correlation two_way_vertex() {
  return make_corr(steering_scenario(),
                   [](const std::vector<int>& x, const std::vector<int>& a) {
                     int yz = x[1] * x[2];
                     return (a[1] == x[1] * yz && a[2] == x[2] * yz) ? 1.0 : 0.0;
                   });
}

// Four lazy parties: order-constant dynamical strategy reaching 31/32 on the
// four-party steering game.
Correlation saturate_constant_order() {
  return make_corr(
      Scenario::lazy(4),
      [](const std::vector<int>& xv, const std::vector<int>& av) {
        int x = xv[0], y = xv[1], z = xv[2], t = xv[3];
        int a = av[0], b = av[1], c = av[2], d = av[3];
        double pa = (x == 0) ? (a == 0 ? 1.0 : 0.0) : 0.5;
        double pb;
        if (y == 0)
          pb = (b == 0) ? 1.0 : 0.0;
        else
          pb = (x == 0) ? 0.5 : (b == a ? 1.0 : 0.0);
        double first = (c == 0 && d == z * t) ? 1.0 : 0.0;
        double second = (d == 0 && c == z * t) ? 1.0 : 0.0;
        double pcd;
        if (x == 0 && y == 0)
          pcd = 0.5 * first + 0.5 * second;
        else
          pcd = (a == b && a == x * y) ? first : second;
        return pa * pb * pcd;
      });
}

// Four lazy parties: coarse-grained-order-constant strategy reaching 47/48.
Correlation saturate_coarse_order() {
  return make_corr(
      Scenario::lazy(4),
      [](const std::vector<int>& xv, const std::vector<int>& av) {
        int x = xv[0], y = xv[1], z = xv[2], t = xv[3];
        int a = av[0], b = av[1], c = av[2], d = av[3];
        double first = (c == 0 && d == z * t) ? 1.0 : 0.0;
        double second = (d == 0 && c == z * t) ? 1.0 : 0.0;
        double p1;
        if (x == 0)
          p1 = (a == 0 && b == 0 && c == 0 && d == z * t) ? 1.0 : 0.0;
        else
          p1 = (b == y) ? 0.5 * ((y == a) ? first : second) : 0.0;
        double p2 =
            (b == y && a == x * y) ? ((x == 0) ? second : first) : 0.0;
        return (2.0 / 3.0) * p1 + (1.0 / 3.0) * p2;
      });
}

GameFunctional negated(const GameFunctional& g) {
  const Scenario& sc = g.scenario();
  return GameFunctional(sc, [&](const std::vector<int>& x,
                                const std::vector<int>& a) {
    return -g.coefficient(sc.input_index(x), sc.outcome_index(x, a));
  });
}

double max_witness_deficit(const GameFunctional& w,
                           const Scenario& sc,
                           const std::vector<DetVertex>& verts) {
  double worst = 0.0;
  for (const auto& v : verts)
    worst = std::min(worst, w.value(vertex_correlation(sc, v)));
  return worst;
}

}  // namespace

TEST_CASE("vertex censuses for the three-party steering scenario") {
  auto sc = steering_scenario();
  auto all = enumerate_vertices(sc, PolytopeTag::all);
  auto causal = enumerate_vertices(sc, PolytopeTag::causal);
  auto convfo = enumerate_vertices(sc, PolytopeTag::conv_fo);
  CHECK(all.size() == 256);
  CHECK(causal.size() == 144);
  CHECK(convfo.size() == 112);

  // strict inclusions as sets (lists are sorted and unique)
  CHECK(std::includes(causal.begin(), causal.end(), convfo.begin(),
                      convfo.end()));
  CHECK(std::includes(all.begin(), all.end(), causal.begin(), causal.end()));

  // the two-way-signalling point is an extreme point of the full set only
  auto p2 = two_way_vertex();
  DetVertex v2;
  for (const auto& x : sc.input_tuples()) {
    const auto outs = sc.outcome_tuples(x);
    for (std::size_t ai = 0; ai < outs.size(); ++ai)
      if (p2.p(x, outs[ai]) > 0.5)
        v2.outcome.push_back(static_cast<std::uint8_t>(ai));
  }
  CHECK(std::binary_search(all.begin(), all.end(), v2));
  CHECK(!std::binary_search(causal.begin(), causal.end(), v2));

  CHECK_THROWS_AS(enumerate_vertices(sc, PolytopeTag::nio),
                  VerticesUnavailable);
  CHECK_THROWS_AS(enumerate_vertices(Scenario::lazy(4), PolytopeTag::causal),
                  ScenarioTooLarge);
}

TEST_CASE("vertex cache round-trip") {
  auto sc = steering_scenario();
  std::string dir = "cache_test_dir";
  std::filesystem::create_directory(dir);
  setenv("CAUSALKIT_CACHE_DIR", dir.c_str(), 1);
  auto first = enumerate_vertices(sc, PolytopeTag::causal);
  auto second = enumerate_vertices(sc, PolytopeTag::causal);  // from disk
  unsetenv("CAUSALKIT_CACHE_DIR");
  CHECK(first == second);
  bool found = false;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.path().filename().string().find("causal") != std::string::npos)
      found = true;
  CHECK(found);
}

TEST_CASE("LP game bounds over the polytope hierarchy") {
  SECTION("three-party steering game") {
    auto i3 = GameFunctional::preset("i3");
    CHECK(max_game(i3, PolytopeTag::conv_fo).value ==
          Catch::Approx(7.0 / 8.0).margin(1e-6));
    auto opt = max_game(i3, PolytopeTag::causal);
    CHECK(opt.value == Catch::Approx(1.0).margin(1e-6));
    CHECK(membership(opt.argmax, PolytopeTag::causal).member);
    CHECK(i3.value(pbc_dynamical()) == Catch::Approx(1.0).margin(1e-12));
  }

  SECTION("four-party steering game upper bounds") {
    auto i4 = GameFunctional::preset("i4");
    CHECK(max_game(i4, PolytopeTag::conv_fo).value ==
          Catch::Approx(15.0 / 16.0).margin(1e-6));
    auto nio = max_game(i4, PolytopeTag::nio);
    CHECK(nio.value == Catch::Approx(31.0 / 32.0).margin(1e-6));
    CHECK(membership(nio.argmax, PolytopeTag::nio).member);
    CHECK(max_game(i4, PolytopeTag::nio_prime).value ==
          Catch::Approx(47.0 / 48.0).margin(1e-6));
    CHECK(max_game(i4, PolytopeTag::causal).value ==
          Catch::Approx(1.0).margin(1e-6));
  }

  SECTION("four-party facet functional lower bounds") {
    auto neg = negated(GameFunctional::preset("i4prime"));
    CHECK(max_game(neg, PolytopeTag::conv_fo).value ==
          Catch::Approx(0.0).margin(1e-6));
    CHECK(max_game(neg, PolytopeTag::nio).value ==
          Catch::Approx(0.5).margin(1e-6));
    CHECK(max_game(neg, PolytopeTag::nio_prime).value ==
          Catch::Approx(2.0 / 3.0).margin(1e-6));
    CHECK(max_game(neg, PolytopeTag::causal).value ==
          Catch::Approx(1.0).margin(1e-6));
  }
}

TEST_CASE("order-constant saturating correlation") {
  auto p = saturate_constant_order();
  auto i4 = GameFunctional::preset("i4");
  CHECK(i4.value(p) == Catch::Approx(31.0 / 32.0).margin(1e-9));

  auto in_nio = membership(p, PolytopeTag::nio);
  REQUIRE(in_nio.member);
  REQUIRE(in_nio.decomposition.has_value());
  const auto& dec = *in_nio.decomposition;
  // order weights constant across settings, and the decomposition sums to p
  for (std::size_t oi = 0; oi < dec.orders.size(); ++oi) {
    double w0 = dec.order_weight(0, static_cast<long>(oi));
    for (long xi = 1; xi < 16; ++xi)
      CHECK(dec.order_weight(xi, static_cast<long>(oi)) ==
            Catch::Approx(w0).margin(1e-6));
  }
  for (long xi = 0; xi < 16; ++xi) {
    auto row = dec.marginal(xi);
    for (std::size_t ai = 0; ai < row.size(); ++ai)
      CHECK(row[ai] == Catch::Approx(p.p(xi, static_cast<long>(ai)))
                           .margin(1e-6));
  }

  auto out_convfo = membership(p, PolytopeTag::conv_fo);
  CHECK(!out_convfo.member);
  REQUIRE(out_convfo.witness.has_value());
  CHECK(out_convfo.witness->value(p) < -1e-4);
}

TEST_CASE("coarse-grained-order saturating correlation") {
  auto p = saturate_coarse_order();
  auto i4 = GameFunctional::preset("i4");
  CHECK(i4.value(p) == Catch::Approx(47.0 / 48.0).margin(1e-9));
  CHECK(membership(p, PolytopeTag::nio_prime).member);
  auto out_nio = membership(p, PolytopeTag::nio);
  CHECK(!out_nio.member);
  REQUIRE(out_nio.witness.has_value());
  CHECK(out_nio.witness->value(p) < -1e-4);
  CHECK(membership(p, PolytopeTag::causal).member);
}

TEST_CASE("membership witnesses separate against the vertex list") {
  auto sc = steering_scenario();
  auto p = pbc_dynamical();
  auto verts = enumerate_vertices(sc, PolytopeTag::conv_fo);

  auto res = membership(p, PolytopeTag::conv_fo);
  REQUIRE(!res.member);
  REQUIRE(res.witness.has_value());
  CHECK(res.witness->value(p) < -1e-4);
  CHECK(max_witness_deficit(*res.witness, sc, verts) > -1e-7);

  // the same point is causal, with a full order decomposition
  auto in_causal = membership(p, PolytopeTag::causal);
  REQUIRE(in_causal.member);
  REQUIRE(in_causal.decomposition.has_value());
  for (long xi = 0; xi < 8; ++xi) {
    auto row = in_causal.decomposition->marginal(xi);
    for (std::size_t ai = 0; ai < row.size(); ++ai)
      CHECK(row[ai] ==
            Catch::Approx(p.p(xi, static_cast<long>(ai))).margin(1e-6));
  }

  // interior point: uniform outputs belong everywhere
  auto u = make_corr(sc, [&](const std::vector<int>& x,
                             const std::vector<int>& a) {
    (void)a;
    return 1.0 / static_cast<double>(sc.outcome_tuples(x).size());
  });
  for (auto tag : {PolytopeTag::conv_fo, PolytopeTag::nio,
                   PolytopeTag::nio_prime, PolytopeTag::causal,
                   PolytopeTag::all})
    CHECK(membership(u, tag).member);
}

TEST_CASE("three-party collapse and hierarchy on random mixtures") {
  auto sc = steering_scenario();
  auto causal_verts = enumerate_vertices(sc, PolytopeTag::causal);
  std::mt19937_64 rng(20260823);
  std::uniform_int_distribution<std::size_t> pick(0, causal_verts.size() - 1);
  std::exponential_distribution<double> expd(1.0);

  for (int trial = 0; trial < 10; ++trial) {
    // random mixture of a few causal vertices, softened toward uniform
    std::vector<double> flat(21, 0.0);
    detail::ScenarioIndex idx(sc);
    double total = 0;
    std::vector<double> weights;
    std::vector<std::size_t> chosen;
    for (int i = 0; i < 4; ++i) {
      chosen.push_back(pick(rng));
      weights.push_back(expd(rng));
      total += weights.back();
    }
    for (int i = 0; i < 4; ++i) {
      const auto& v = causal_verts[chosen[i]];
      for (std::size_t xi = 0; xi < idx.xs.size(); ++xi)
        flat[idx.flat(xi, v.outcome[xi])] += 0.9 * weights[i] / total;
    }
    for (std::size_t xi = 0; xi < idx.xs.size(); ++xi)
      for (std::size_t ai = 0; ai < idx.as[xi].size(); ++ai)
        flat[idx.flat(xi, ai)] += 0.1 / idx.as[xi].size();
    std::vector<std::vector<double>> table;
    for (std::size_t xi = 0; xi < idx.xs.size(); ++xi) {
      std::vector<double> row;
      for (std::size_t ai = 0; ai < idx.as[xi].size(); ++ai)
        row.push_back(flat[idx.flat(xi, ai)]);
      table.push_back(std::move(row));
    }
    Correlation q(sc, std::move(table));

    bool m_fo = membership(q, PolytopeTag::conv_fo).member;
    bool m_nio = membership(q, PolytopeTag::nio).member;
    bool m_niop = membership(q, PolytopeTag::nio_prime).member;
    bool m_c = membership(q, PolytopeTag::causal).member;
    // hierarchy
    CHECK((!m_fo || m_nio));
    CHECK((!m_nio || m_niop));
    CHECK((!m_niop || m_c));
    // with three parties the order-constant refinements collapse onto
    // fixed-order mixtures
    CHECK(m_nio == m_fo);
    CHECK(m_niop == m_fo);
    CHECK(m_c);
  }
}

TEST_CASE("recursive causality oracle") {
  auto sc = steering_scenario();
  CHECK(membership_recursive(pbc_dynamical()));
  CHECK(!membership_recursive(two_way_vertex()));
  CHECK_THROWS_AS(
      membership_recursive(make_corr(
          Scenario::lazy(4),
          [](const std::vector<int>& x, const std::vector<int>& a) {
            (void)x;
            for (int v : a)
              if (v != 0) return 0.0;
            return 1.0;
          })),
      ScenarioTooLarge);

  // agreement with the LP membership test on random correlations
  auto all_verts = enumerate_vertices(sc, PolytopeTag::all);
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::size_t> pick(0, all_verts.size() - 1);
  std::exponential_distribution<double> expd(1.0);
  detail::ScenarioIndex idx(sc);
  int disagreements = 0;
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> flat(21, 0.0);
    double total = 0;
    std::vector<double> weights;
    std::vector<std::size_t> chosen;
    for (int i = 0; i < 3; ++i) {
      chosen.push_back(pick(rng));
      weights.push_back(expd(rng));
      total += weights.back();
    }
    for (int i = 0; i < 3; ++i) {
      const auto& v = all_verts[chosen[i]];
      for (std::size_t xi = 0; xi < idx.xs.size(); ++xi)
        flat[idx.flat(xi, v.outcome[xi])] += 0.85 * weights[i] / total;
    }
    for (std::size_t xi = 0; xi < idx.xs.size(); ++xi)
      for (std::size_t ai = 0; ai < idx.as[xi].size(); ++ai)
        flat[idx.flat(xi, ai)] += 0.15 / idx.as[xi].size();
    std::vector<std::vector<double>> table;
    for (std::size_t xi = 0; xi < idx.xs.size(); ++xi) {
      std::vector<double> row;
      for (std::size_t ai = 0; ai < idx.as[xi].size(); ++ai)
        row.push_back(flat[idx.flat(xi, ai)]);
      table.push_back(std::move(row));
    }
    Correlation q(sc, std::move(table));
    if (membership_recursive(q) != membership(q, PolytopeTag::causal).member)
      ++disagreements;
  }
  CHECK(disagreements == 0);
}

TEST_CASE("vertex distance with dual witness") {
  auto sc = steering_scenario();
  auto p = pbc_dynamical();
  auto convfo = enumerate_vertices(sc, PolytopeTag::conv_fo);

  auto far = lp_distance(p, PolytopeTag::conv_fo);
  CHECK(far.r_star > 1e-3);
  REQUIRE(far.witness.has_value());
  CHECK(far.witness->value(p) < -1e-4);
  CHECK(max_witness_deficit(*far.witness, sc, convfo) > -1e-7);

  auto near = lp_distance(p, PolytopeTag::causal);
  CHECK(near.r_star == Catch::Approx(0.0).margin(1e-8));
  CHECK(!near.witness.has_value());

  CHECK_THROWS_AS(lp_distance(p, PolytopeTag::nio), VerticesUnavailable);
}
