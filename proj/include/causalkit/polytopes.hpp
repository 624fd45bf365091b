// SPDX-License-Identifier: MIT
//
// Correlation polytopes for multi-party scenarios: LP membership with
// order-decomposition variables, game-bound maximization, deterministic
// vertex enumeration, distance-to-polytope with dual witness inequalities,
// and an independent recursive causality oracle.

#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>

#include "causalkit/conic.hpp"
#include "causalkit/correlations.hpp"

namespace causalkit {

struct ScenarioTooLarge : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct VerticesUnavailable : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// The nested families of correlation sets handled here, innermost first:
/// mixtures of fixed orders, setting-independent orders, setting-independent
/// coarse-grained orders, general causal, and the full probability simplex.
enum class PolytopeTag { conv_fo, nio, nio_prime, causal, all };

inline std::string polytope_name(PolytopeTag t) {
  switch (t) {
    case PolytopeTag::conv_fo: return "convfo";
    case PolytopeTag::nio: return "nio";
    case PolytopeTag::nio_prime: return "nio-prime";
    case PolytopeTag::causal: return "causal";
    case PolytopeTag::all: return "all";
  }
  return "?";
}

/// A deterministic correlation: one outcome tuple per input tuple, stored as
/// the outcome's index in the scenario's admissible-outcome enumeration.
struct DetVertex {
  std::vector<std::uint8_t> outcome;
  auto operator<=>(const DetVertex&) const = default;
};

inline Correlation vertex_correlation(const Scenario& sc, const DetVertex& v) {
  std::vector<std::vector<double>> table;
  auto xs = sc.input_tuples();
  for (std::size_t xi = 0; xi < xs.size(); ++xi) {
    std::vector<double> row(sc.outcome_tuples(xs[xi]).size(), 0.0);
    row.at(v.outcome.at(xi)) = 1.0;
    table.push_back(std::move(row));
  }
  return Correlation(sc, std::move(table));
}

namespace detail {

/// Per-scenario indexing shared by the LP encodings: input tuples, admissible
/// outcome tuples, and flat offsets over (input, outcome) pairs.
struct ScenarioIndex {
  explicit ScenarioIndex(const Scenario& s) : sc(s), xs(s.input_tuples()) {
    for (const auto& x : xs) {
      as.push_back(s.outcome_tuples(x));
      flat_offset.push_back(n_flat);
      n_flat += static_cast<long>(as.back().size());
    }
  }
  const Scenario& sc;
  std::vector<std::vector<int>> xs;
  std::vector<std::vector<std::vector<int>>> as;
  std::vector<long> flat_offset;
  long n_flat = 0;

  long flat(long xi, long ai) const { return flat_offset[xi] + ai; }
};

using LpRow = std::pair<std::vector<std::pair<long, double>>, double>;

inline std::vector<std::pair<long, double>> to_terms(
    const std::map<long, double>& acc) {
  std::vector<std::pair<long, double>> t;
  for (const auto& [j, v] : acc)
    if (v != 0.0) t.emplace_back(j, v);
  return t;
}

/// Decomposition-variable layout v(order, input tuple, outcome tuple) plus
/// the structural zero-rows of each polytope encoding.
struct OrderLp {
  OrderLp(const Scenario& s, PolytopeTag t) : idx(s), tag(t) {
    const int n = s.n_parties();
    if (n > 4) throw ScenarioTooLarge("LP encodings support at most 4 parties");
    std::vector<int> ps(n);
    for (int k = 0; k < n; ++k) ps[k] = k + 1;
    orders = permutations_of(ps);
    n_vars = static_cast<long>(orders.size()) * idx.n_flat;
  }

  const ScenarioIndex idx;
  PolytopeTag tag;
  std::vector<std::vector<int>> orders;
  long n_vars = 0;

  long var(std::size_t oi, long xi, long ai) const {
    return static_cast<long>(oi) * idx.n_flat + idx.flat(xi, ai);
  }

  /// Orders whose first entries equal `seq`.
  std::vector<std::size_t> compatible(const std::vector<int>& seq) const {
    std::vector<std::size_t> out;
    for (std::size_t oi = 0; oi < orders.size(); ++oi)
      if (std::equal(seq.begin(), seq.end(), orders[oi].begin()))
        out.push_back(oi);
    return out;
  }

  /// Accumulates the marginal p(seq, a-prefix | x) over the given orders:
  /// sum over outcome tuples agreeing with `a_fix` at the positions in
  /// `parties_fix` (1-based parties).
  void accumulate(std::map<long, double>& acc,
                  const std::vector<std::size_t>& ois, long xi,
                  const std::vector<int>& parties_fix,
                  const std::vector<int>& a_fix) const {
    for (std::size_t ai = 0; ai < idx.as[xi].size(); ++ai) {
      const auto& a = idx.as[xi][ai];
      bool match = true;
      for (std::size_t i = 0; i < parties_fix.size() && match; ++i)
        match = a[parties_fix[i] - 1] == a_fix[i];
      if (!match) continue;
      for (auto oi : ois) acc[var(oi, xi, ai)] += 1.0;
    }
  }

  /// Structural equalities (all with right-hand side zero) that make the
  /// decomposition variables an encoding of the requested polytope.
  std::vector<LpRow> structural_rows() const {
    std::vector<LpRow> rows;
    const int n = idx.sc.n_parties();
    std::vector<int> ps(n);
    for (int k = 0; k < n; ++k) ps[k] = k + 1;

    auto add_span = [&](const std::function<void(std::map<long, double>&, long)>&
                            marg,
                        const std::vector<long>& xis) {
      std::map<long, double> ref;
      marg(ref, xis[0]);
      for (std::size_t i = 1; i < xis.size(); ++i) {
        std::map<long, double> acc;
        marg(acc, xis[i]);
        for (const auto& [j, v] : ref) acc[j] -= v;
        rows.push_back({to_terms(acc), 0.0});
      }
    };

    // groups of input tuples agreeing on the parties in `fixed`
    auto grouped_inputs = [&](const std::vector<int>& fixed) {
      std::map<std::vector<int>, std::vector<long>> groups;
      for (std::size_t xi = 0; xi < idx.xs.size(); ++xi) {
        std::vector<int> key;
        for (int k : fixed) key.push_back(idx.xs[xi][k - 1]);
        groups[key].push_back(static_cast<long>(xi));
      }
      return groups;
    };

    // all ordered tuples of `len` distinct parties
    std::function<void(std::vector<int>&, int,
                       const std::function<void(const std::vector<int>&)>&)>
        seqs = [&](std::vector<int>& cur, int len,
                   const std::function<void(const std::vector<int>&)>& fn) {
          if (static_cast<int>(cur.size()) == len) {
            fn(cur);
            return;
          }
          for (int k : ps) {
            if (std::find(cur.begin(), cur.end(), k) != cur.end()) continue;
            cur.push_back(k);
            seqs(cur, len, fn);
            cur.pop_back();
          }
        };
    auto for_each_seq = [&](int len,
                            const std::function<void(const std::vector<int>&)>& fn) {
      std::vector<int> cur;
      seqs(cur, len, fn);
    };

    // admissible joint outputs of `parties` under their inputs in x
    auto prefix_outputs = [&](const std::vector<int>& parties,
                              const std::vector<int>& x) {
      std::vector<std::vector<int>> out{{}};
      for (int k : parties) {
        std::vector<std::vector<int>> next;
        for (const auto& t : out)
          for (int a = 0; a < idx.sc.n_outputs(k, x[k - 1]); ++a) {
            auto u = t;
            u.push_back(a);
            next.push_back(std::move(u));
          }
        out = std::move(next);
      }
      return out;
    };

    if (tag == PolytopeTag::conv_fo) {
      // per-order tables: constant mass, and one-way signalling along the order
      for (std::size_t oi = 0; oi < orders.size(); ++oi) {
        const std::vector<std::size_t> me{oi};
        std::vector<long> all_x(idx.xs.size());
        for (std::size_t i = 0; i < all_x.size(); ++i) all_x[i] = i;
        add_span(
            [&](std::map<long, double>& acc, long xi) {
              accumulate(acc, me, xi, {}, {});
            },
            all_x);
        for (int len = 1; len <= n - 1; ++len) {
          std::vector<int> prefix(orders[oi].begin(), orders[oi].begin() + len);
          for (const auto& [key, xis] : grouped_inputs(prefix)) {
            for (const auto& ap : prefix_outputs(prefix, idx.xs[xis[0]]))
              add_span(
                  [&](std::map<long, double>& acc, long xi) {
                    accumulate(acc, me, xi, prefix, ap);
                  },
                  xis);
          }
        }
      }
      return rows;
    }

    // causal-family rows: for every ordered prefix (k_1..k_n) and announced
    // next party k_{n+1}, the marginal over the remaining outputs must not
    // depend on the inputs outside {k_1..k_n}
    for (int len = 1; len <= n; ++len)
      for_each_seq(len, [&](const std::vector<int>& seq) {
        std::vector<int> prefix(seq.begin(), seq.end() - 1);
        auto ois = compatible(seq);
        for (const auto& [key, xis] : grouped_inputs(prefix)) {
          for (const auto& ap : prefix_outputs(prefix, idx.xs[xis[0]]))
            add_span(
                [&](std::map<long, double>& acc, long xi) {
                  accumulate(acc, ois, xi, prefix, ap);
                },
                xis);
        }
      });

    std::vector<long> all_x(idx.xs.size());
    for (std::size_t i = 0; i < all_x.size(); ++i) all_x[i] = i;

    if (tag == PolytopeTag::nio) {
      // each complete order carries a setting-independent weight
      for (std::size_t oi = 0; oi < orders.size(); ++oi)
        add_span(
            [&](std::map<long, double>& acc, long xi) {
              accumulate(acc, {oi}, xi, {}, {});
            },
            all_x);
    } else if (tag == PolytopeTag::nio_prime) {
      // only the coarse-grained weights (acted set, next party) are
      // setting-independent
      for (int len = 1; len <= n; ++len)
        for_each_seq(len, [&](const std::vector<int>& seq) {
          std::vector<int> sorted_prefix(seq.begin(), seq.end() - 1);
          std::sort(sorted_prefix.begin(), sorted_prefix.end());
          // aggregate once per (set, head): only process the sorted ordering
          if (!std::is_sorted(seq.begin(), seq.end() - 1)) return;
          std::vector<std::size_t> ois;
          for_each_seq(len, [&](const std::vector<int>& seq2) {
            if (seq2.back() != seq.back()) return;
            std::vector<int> sp(seq2.begin(), seq2.end() - 1);
            std::sort(sp.begin(), sp.end());
            if (sp != sorted_prefix) return;
            for (auto oi : compatible(seq2)) ois.push_back(oi);
          });
          add_span(
              [&](std::map<long, double>& acc, long xi) {
                accumulate(acc, ois, xi, {}, {});
              },
              all_x);
        });
    }
    return rows;
  }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Vertex enumeration
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<DetVertex> enum_all_vertices(const ScenarioIndex& idx) {
  const int n = idx.sc.n_parties();
  // per party, all response maps x-tuple -> own outcome
  std::vector<std::vector<std::vector<std::uint8_t>>> party_maps(n);
  for (int k = 1; k <= n; ++k) {
    std::vector<std::vector<std::uint8_t>> maps{{}};
    for (const auto& x : idx.xs) {
      std::vector<std::vector<std::uint8_t>> next;
      for (const auto& m : maps)
        for (int a = 0; a < idx.sc.n_outputs(k, x[k - 1]); ++a) {
          auto u = m;
          u.push_back(static_cast<std::uint8_t>(a));
          next.push_back(std::move(u));
        }
      maps = std::move(next);
    }
    party_maps[k - 1] = std::move(maps);
  }
  std::vector<DetVertex> out;
  std::vector<std::size_t> pick(n, 0);
  for (;;) {
    DetVertex v;
    for (std::size_t xi = 0; xi < idx.xs.size(); ++xi) {
      std::vector<int> a(n);
      for (int k = 0; k < n; ++k) a[k] = party_maps[k][pick[k]][xi];
      v.outcome.push_back(static_cast<std::uint8_t>(
          idx.sc.outcome_index(idx.xs[xi], a)));
    }
    out.push_back(std::move(v));
    int k = n - 1;
    while (k >= 0 && ++pick[k] == party_maps[k].size()) pick[k--] = 0;
    if (k < 0) break;
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

inline std::vector<DetVertex> enum_conv_fo_vertices(const ScenarioIndex& idx) {
  const int n = idx.sc.n_parties();
  std::vector<int> ps(n);
  for (int k = 0; k < n; ++k) ps[k] = k + 1;
  std::set<DetVertex> seen;
  for (const auto& pi : permutations_of(ps)) {
    // strategy cells: for position j, one output choice per assignment of
    // the inputs of pi[0..j]; enumerate with an odometer over all cells
    struct Cell { int pos; std::vector<int> x_prefix; int radix; };
    std::vector<Cell> cells;
    for (int j = 0; j < n; ++j) {
      std::vector<std::vector<int>> doms{{}};
      for (int i = 0; i <= j; ++i) {
        std::vector<std::vector<int>> next;
        for (const auto& d : doms)
          for (int xv = 0; xv < idx.sc.n_inputs(pi[i]); ++xv) {
            auto u = d;
            u.push_back(xv);
            next.push_back(std::move(u));
          }
        doms = std::move(next);
      }
      for (auto& d : doms)
        cells.push_back({j, d, idx.sc.n_outputs(pi[j], d.back())});
    }
    std::vector<int> choice(cells.size(), 0);
    for (;;) {
      DetVertex v;
      for (std::size_t xi = 0; xi < idx.xs.size(); ++xi) {
        const auto& x = idx.xs[xi];
        std::vector<int> a(n, 0);
        for (std::size_t c = 0; c < cells.size(); ++c) {
          const auto& cell = cells[c];
          bool match = true;
          for (int i = 0; i <= cell.pos && match; ++i)
            match = x[pi[i] - 1] == cell.x_prefix[i];
          if (match) a[pi[cell.pos] - 1] = choice[c];
        }
        v.outcome.push_back(static_cast<std::uint8_t>(
            idx.sc.outcome_index(x, a)));
      }
      seen.insert(std::move(v));
      int c = static_cast<int>(cells.size()) - 1;
      while (c >= 0 && ++choice[c] == cells[c].radix) choice[c--] = 0;
      if (c < 0) break;
    }
  }
  return {seen.begin(), seen.end()};
}

/// Deterministic adaptive strategies: at each step the next party is chosen
/// from the realized history, and outputs its own deterministic response.
/// Each strategy is generated as a decision tree and flattened to a table.
struct CausalTree {
  int party = 0;
  std::vector<int> output;                 ///< per own-input value
  std::vector<std::vector<CausalTree>> sub;  ///< per own-input value (empty at leaves)
};

inline void enum_causal_trees(const ScenarioIndex& idx, std::vector<int> S,
                              const std::function<void(const CausalTree&)>& emit);

inline void enum_causal_products(
    const ScenarioIndex& idx, const std::vector<int>& S, CausalTree& node,
    int xv, const std::function<void(const CausalTree&)>& emit) {
  const int k = node.party;
  if (xv == idx.sc.n_inputs(k)) {
    emit(node);
    return;
  }
  for (int a = 0; a < idx.sc.n_outputs(k, xv); ++a) {
    node.output[xv] = a;
    if (S.empty()) {
      enum_causal_products(idx, S, node, xv + 1, emit);
    } else {
      enum_causal_trees(idx, S, [&](const CausalTree& sub) {
        node.sub[xv] = {sub};
        enum_causal_products(idx, S, node, xv + 1, emit);
      });
    }
  }
}

inline void enum_causal_trees(const ScenarioIndex& idx, std::vector<int> S,
                              const std::function<void(const CausalTree&)>& emit) {
  for (std::size_t i = 0; i < S.size(); ++i) {
    CausalTree node;
    node.party = S[i];
    node.output.assign(idx.sc.n_inputs(S[i]), 0);
    node.sub.assign(idx.sc.n_inputs(S[i]), {});
    std::vector<int> rest;
    for (std::size_t j = 0; j < S.size(); ++j)
      if (j != i) rest.push_back(S[j]);
    enum_causal_products(idx, rest, node, 0, emit);
  }
}

inline std::vector<DetVertex> enum_causal_vertices(const ScenarioIndex& idx) {
  const int n = idx.sc.n_parties();
  std::vector<int> ps(n);
  for (int k = 0; k < n; ++k) ps[k] = k + 1;
  std::set<DetVertex> seen;
  enum_causal_trees(idx, ps, [&](const CausalTree& tree) {
    DetVertex v;
    for (std::size_t xi = 0; xi < idx.xs.size(); ++xi) {
      const auto& x = idx.xs[xi];
      std::vector<int> a(n, 0);
      const CausalTree* t = &tree;
      for (int step = 0; step < n; ++step) {
        int xv = x[t->party - 1];
        a[t->party - 1] = t->output[xv];
        t = t->sub[xv].empty() ? nullptr : &t->sub[xv][0];
        if (!t) break;
      }
      v.outcome.push_back(static_cast<std::uint8_t>(
          idx.sc.outcome_index(x, a)));
    }
    seen.insert(std::move(v));
  });
  return {seen.begin(), seen.end()};
}

inline std::string scenario_cache_key(const Scenario& sc, PolytopeTag tag) {
  std::string blob = sc.to_json().dump() + "#" + polytope_name(tag);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016zx", std::hash<std::string>{}(blob));
  return std::string("vertices-") + polytope_name(tag) + "-" + buf + ".json";
}

}  // namespace detail

/// Deterministic vertices of P_all, P_convFO, or P_causal.  Results are
/// cached on disk (compact outcome-index tables, one per vertex) under
/// $CAUSALKIT_CACHE_DIR when that variable is set.
inline std::vector<DetVertex> enumerate_vertices(const Scenario& sc,
                                                 PolytopeTag tag) {
  detail::ScenarioIndex idx(sc);
  const int n = sc.n_parties();
  if (tag == PolytopeTag::conv_fo ? n > 4 : n > 3)
    throw ScenarioTooLarge("vertex enumeration limit exceeded");
  if (tag != PolytopeTag::all && tag != PolytopeTag::conv_fo &&
      tag != PolytopeTag::causal)
    throw VerticesUnavailable("no vertex enumeration for " + polytope_name(tag));

  std::string cache_path;
  if (const char* dir = std::getenv("CAUSALKIT_CACHE_DIR")) {
    cache_path = std::string(dir) + "/" + detail::scenario_cache_key(sc, tag);
    std::ifstream in(cache_path);
    if (in) {
      nlohmann::json j;
      in >> j;
      if (Scenario::from_json(j.at("scenario")) == sc) {
        std::vector<DetVertex> out;
        for (const auto& row : j.at("outcomes"))
          out.push_back({row.get<std::vector<std::uint8_t>>()});
        return out;
      }
    }
  }

  std::vector<DetVertex> out;
  switch (tag) {
    case PolytopeTag::all: out = detail::enum_all_vertices(idx); break;
    case PolytopeTag::conv_fo: out = detail::enum_conv_fo_vertices(idx); break;
    default: out = detail::enum_causal_vertices(idx); break;
  }

  if (!cache_path.empty()) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& v : out) rows.push_back(v.outcome);
    std::ofstream os(cache_path);
    if (os) os << nlohmann::json{{"scenario", sc.to_json()},
                                 {"tag", polytope_name(tag)},
                                 {"outcomes", rows}};
  }
  return out;
}

// ---------------------------------------------------------------------------
// LP membership / game bounds / distance
// ---------------------------------------------------------------------------

struct PolytopeMembership {
  bool member = false;
  /// optimal mixing weight mu in  mu p + (1-mu) uniform  still inside the
  /// polytope; member iff mu >= 1
  double mu = 0.0;
  std::optional<CausalDecomposition> decomposition;  ///< for members
  /// for non-members: game functional >= 0 on the polytope, < 0 at p
  std::optional<GameFunctional> witness;
};

namespace detail {

inline std::vector<double> uniform_flat(const ScenarioIndex& idx) {
  std::vector<double> u(idx.n_flat);
  for (std::size_t xi = 0; xi < idx.xs.size(); ++xi)
    for (std::size_t ai = 0; ai < idx.as[xi].size(); ++ai)
      u[idx.flat(xi, ai)] = 1.0 / static_cast<double>(idx.as[xi].size());
  return u;
}

/// Turns flat dual coefficients g (with members satisfying sum g.q >= 0)
/// into a GameFunctional with bound 0, normalized so that the worst
/// violation over the full probability simplex equals 1.
inline GameFunctional witness_game(const ScenarioIndex& idx,
                                   std::vector<double> g) {
  double worst = 0.0;
  for (std::size_t xi = 0; xi < idx.xs.size(); ++xi) {
    double mn = g[idx.flat(xi, 0)];
    for (std::size_t ai = 1; ai < idx.as[xi].size(); ++ai)
      mn = std::min(mn, g[idx.flat(xi, ai)]);
    worst += std::max(0.0, -mn) / static_cast<double>(idx.xs.size());
  }
  if (worst > 0)
    for (double& v : g) v /= worst;
  const double nx = static_cast<double>(idx.xs.size());
  return GameFunctional(idx.sc, [&](const std::vector<int>& x,
                                const std::vector<int>& a) {
    long xi = idx.sc.input_index(x);
    long ai = idx.sc.outcome_index(x, a);
    return nx * g[idx.flat(xi, ai)];
  });
}

inline CausalDecomposition extract_decomposition(const OrderLp& enc,
                                                 const Eigen::VectorXd& x) {
  CausalDecomposition dec{enc.idx.sc, enc.orders, {}};
  for (std::size_t xi = 0; xi < enc.idx.xs.size(); ++xi) {
    std::vector<std::vector<double>> per_order;
    for (std::size_t oi = 0; oi < enc.orders.size(); ++oi) {
      std::vector<double> row;
      for (std::size_t ai = 0; ai < enc.idx.as[xi].size(); ++ai)
        row.push_back(std::max(0.0, x(enc.var(oi, xi, ai))));
      per_order.push_back(std::move(row));
    }
    dec.values.push_back(std::move(per_order));
  }
  return dec;
}

}  // namespace detail

/// LP membership test.  For members, a full order decomposition satisfying
/// the polytope's defining constraints is returned; for non-members, a
/// separating inequality obtained from the LP duals.
inline PolytopeMembership membership(const Correlation& p, PolytopeTag tag) {
  if (tag == PolytopeTag::all) return {true, 1.0, std::nullopt, std::nullopt};
  detail::OrderLp enc(p.scenario(), tag);
  const auto& idx = enc.idx;
  auto structural = enc.structural_rows();
  auto pf = p.flat();
  auto uf = detail::uniform_flat(idx);

  // Phase 1: largest mu with  mu p + (1-mu) u  inside the polytope.
  LinearProgram lp(enc.n_vars + 1, Sense::maximize);
  const long mu_var = enc.n_vars;
  lp.set_free(mu_var);
  lp.set_cost(mu_var, 1.0);
  lp.add_ub_row({{mu_var, 1.0}}, 2.0);  // keeps the LP bounded for interior p
  for (const auto& [terms, rhs] : structural) lp.add_eq_row(terms, rhs);
  std::vector<long> tie_rows(idx.n_flat);
  for (std::size_t xi = 0; xi < idx.xs.size(); ++xi)
    for (std::size_t ai = 0; ai < idx.as[xi].size(); ++ai) {
      long f = idx.flat(xi, ai);
      std::vector<std::pair<long, double>> terms;
      for (std::size_t oi = 0; oi < enc.orders.size(); ++oi)
        terms.emplace_back(enc.var(oi, xi, ai), 1.0);
      terms.emplace_back(mu_var, -(pf[f] - uf[f]));
      tie_rows[f] = lp.add_eq_row(terms, uf[f]);
    }
  auto out = lp.solve();
  if (!out.ok()) throw SolverFailure("membership LP failed");

  PolytopeMembership res;
  res.mu = out.objective;
  res.member = res.mu >= 1.0 - 1e-8;
  if (!res.member) {
    std::vector<double> g(idx.n_flat);
    for (long f = 0; f < idx.n_flat; ++f) g[f] = out.y_eq(tie_rows[f]);
    double at_p = 0;
    for (long f = 0; f < idx.n_flat; ++f) at_p += g[f] * pf[f];
    if (at_p > 0)
      for (double& v : g) v = -v;
    res.witness = detail::witness_game(idx, std::move(g));
    return res;
  }

  // Phase 2: exact decomposition of p itself.
  LinearProgram lp2(enc.n_vars, Sense::minimize);
  for (const auto& [terms, rhs] : structural) lp2.add_eq_row(terms, rhs);
  for (std::size_t xi = 0; xi < idx.xs.size(); ++xi)
    for (std::size_t ai = 0; ai < idx.as[xi].size(); ++ai) {
      std::vector<std::pair<long, double>> terms;
      for (std::size_t oi = 0; oi < enc.orders.size(); ++oi)
        terms.emplace_back(enc.var(oi, xi, ai), 1.0);
      lp2.add_eq_row(terms, pf[idx.flat(xi, ai)]);
    }
  auto out2 = lp2.solve();
  if (out2.ok()) res.decomposition = detail::extract_decomposition(enc, out2.x);
  return res;
}

struct GameOptimum {
  double value = 0.0;
  Correlation argmax;
};

/// Maximum of a game functional over a polytope, with an optimizer.
inline GameOptimum max_game(const GameFunctional& g, PolytopeTag tag) {
  const Scenario& sc = g.scenario();
  detail::OrderLp enc(sc, tag == PolytopeTag::all ? PolytopeTag::causal : tag);
  const auto& idx = enc.idx;
  LinearProgram lp(enc.n_vars, Sense::maximize);
  if (tag != PolytopeTag::all)
    for (const auto& [terms, rhs] : enc.structural_rows())
      lp.add_eq_row(terms, rhs);
  const double wx = 1.0 / static_cast<double>(idx.xs.size());
  for (std::size_t xi = 0; xi < idx.xs.size(); ++xi) {
    std::vector<std::pair<long, double>> norm;
    for (std::size_t oi = 0; oi < enc.orders.size(); ++oi)
      for (std::size_t ai = 0; ai < idx.as[xi].size(); ++ai) {
        long j = enc.var(oi, xi, ai);
        norm.emplace_back(j, 1.0);
        lp.set_cost(j, wx * g.coefficient(xi, ai));
      }
    lp.add_eq_row(norm, 1.0);
  }
  auto out = lp.solve();
  if (!out.ok()) throw SolverFailure("game LP failed");
  auto dec = detail::extract_decomposition(enc, out.x);
  std::vector<std::vector<double>> table;
  for (std::size_t xi = 0; xi < idx.xs.size(); ++xi) {
    auto row = dec.marginal(static_cast<long>(xi));
    double total = std::accumulate(row.begin(), row.end(), 0.0);
    for (double& v : row) v /= total;
    table.push_back(std::move(row));
  }
  return {out.objective, Correlation(sc, std::move(table))};
}

struct DistanceResult {
  double r_star = 0.0;
  std::optional<GameFunctional> witness;  ///< >= 0 on the polytope, < 0 at p
};

/// Vertex-based distance: min r with  p + r u  in the cone spanned by the
/// polytope's vertices (u = vertex average).  The dual of a strictly
/// positive optimum yields a separating inequality.
inline DistanceResult lp_distance(const Correlation& p, PolytopeTag tag) {
  detail::ScenarioIndex idx(p.scenario());
  auto verts = enumerate_vertices(p.scenario(), tag);
  const long nv = static_cast<long>(verts.size());
  auto pf = p.flat();

  std::vector<double> u(idx.n_flat, 0.0);
  for (const auto& v : verts)
    for (std::size_t xi = 0; xi < idx.xs.size(); ++xi)
      u[idx.flat(xi, v.outcome[xi])] += 1.0 / static_cast<double>(nv);

  LinearProgram lp(nv + 1, Sense::minimize);
  const long r_var = nv;
  lp.set_cost(r_var, 1.0);
  std::vector<std::vector<std::pair<long, double>>> rows(idx.n_flat);
  for (long j = 0; j < nv; ++j)
    for (std::size_t xi = 0; xi < idx.xs.size(); ++xi)
      rows[idx.flat(xi, verts[j].outcome[xi])].emplace_back(j, 1.0);
  for (long f = 0; f < idx.n_flat; ++f) {
    rows[f].emplace_back(r_var, -u[f]);
    lp.add_eq_row(rows[f], pf[f]);
  }
  auto out = lp.solve();
  if (!out.ok()) throw SolverFailure("distance LP failed");

  DistanceResult res;
  res.r_star = out.objective;
  if (res.r_star > 1e-8) {
    std::vector<double> g(idx.n_flat);
    for (long f = 0; f < idx.n_flat; ++f) g[f] = out.y_eq(f);
    double at_p = 0;
    for (long f = 0; f < idx.n_flat; ++f) at_p += g[f] * pf[f];
    if (at_p > 0)
      for (double& v : g) v = -v;
    res.witness = detail::witness_game(idx, std::move(g));
  }
  return res;
}

// ---------------------------------------------------------------------------
// Recursive causality oracle
// ---------------------------------------------------------------------------

namespace detail {

/// Linear expression over LP variables plus a constant.
struct LinExpr {
  std::vector<std::pair<long, double>> terms;
  double constant = 0.0;
};

struct RecursiveBuilder {
  const ScenarioIndex& idx;
  long n_vars = 0;
  std::vector<LpRow> rows;

  void add_eq(const LinExpr& a, const LinExpr& b) {
    std::map<long, double> acc;
    for (auto [j, v] : a.terms) acc[j] += v;
    for (auto [j, v] : b.terms) acc[j] -= v;
    rows.push_back({to_terms(acc), b.constant - a.constant});
  }

  /// table accessor: (x over S as global input tuple index list?, a) handled
  /// through explicit per-subset enumeration below.
  struct SubTable {
    std::vector<int> parties;                       // 1-based, sorted
    std::vector<std::vector<int>> xs;               // input tuples over parties
    std::vector<std::vector<std::vector<int>>> as;  // admissible outcomes
    std::vector<std::vector<LinExpr>> entry;        // [xi][ai]
  };

  SubTable shape(const std::vector<int>& parties) const {
    SubTable t;
    t.parties = parties;
    t.xs = {{}};
    for (int k : parties) {
      std::vector<std::vector<int>> next;
      for (const auto& x : t.xs)
        for (int v = 0; v < idx.sc.n_inputs(k); ++v) {
          auto u = x;
          u.push_back(v);
          next.push_back(std::move(u));
        }
      t.xs = std::move(next);
    }
    for (const auto& x : t.xs) {
      std::vector<std::vector<int>> outs{{}};
      for (std::size_t i = 0; i < parties.size(); ++i) {
        std::vector<std::vector<int>> next;
        for (const auto& a : outs)
          for (int v = 0; v < idx.sc.n_outputs(parties[i], x[i]); ++v) {
            auto u = a;
            u.push_back(v);
            next.push_back(std::move(u));
          }
        outs = std::move(next);
      }
      t.as.push_back(outs);
      t.entry.emplace_back(outs.size());
    }
    return t;
  }

  SubTable fresh_vars(const std::vector<int>& parties) {
    SubTable t = shape(parties);
    for (auto& row : t.entry)
      for (auto& e : row) e.terms = {{n_vars++, 1.0}};
    return t;
  }

  /// Emits the constraints making `t` a nonnegative multiple of a causal
  /// correlation over its party set (entries of fresh tables are nonnegative
  /// LP variables by construction; the top-level table holds constants).
  void causal_cone(const SubTable& t) {
    const std::size_t np = t.parties.size();
    if (np <= 1) {
      // single party (or empty): only constant mass across the input
      for (std::size_t xi = 1; xi < t.xs.size(); ++xi) {
        LinExpr a = sum_all(t, 0), b = sum_all(t, xi);
        add_eq(b, a);
      }
      return;
    }
    // branch tables, one per candidate first party
    std::vector<SubTable> branches;
    for (std::size_t i = 0; i < np; ++i) branches.push_back(fresh_vars(t.parties));
    for (std::size_t xi = 0; xi < t.xs.size(); ++xi)
      for (std::size_t ai = 0; ai < t.as[xi].size(); ++ai) {
        LinExpr sum;
        for (const auto& b : branches) {
          for (auto tm : b.entry[xi][ai].terms) sum.terms.push_back(tm);
          sum.constant += b.entry[xi][ai].constant;
        }
        add_eq(sum, t.entry[xi][ai]);
      }
    for (std::size_t i = 0; i < np; ++i) {
      const int k = t.parties[i];
      const auto& b = branches[i];
      // (a) the first party's joint (output, mass) must not see the others'
      //     inputs
      for (int xk = 0; xk < idx.sc.n_inputs(k); ++xk)
        for (int ak = 0; ak < idx.sc.n_outputs(k, xk); ++ak) {
          LinExpr ref;
          bool have_ref = false;
          for (std::size_t xi = 0; xi < b.xs.size(); ++xi) {
            if (b.xs[xi][i] != xk) continue;
            LinExpr m = marginal(b, xi, i, ak);
            if (!have_ref) {
              ref = m;
              have_ref = true;
            } else {
              add_eq(m, ref);
            }
          }
        }
      // (b) its total mass must not even see its own input
      {
        LinExpr ref;
        bool have_ref = false;
        for (int xk = 0; xk < idx.sc.n_inputs(k); ++xk) {
          LinExpr m;
          for (std::size_t xi = 0; xi < b.xs.size(); ++xi) {
            if (b.xs[xi][i] != xk) continue;
            LinExpr one = sum_all(b, xi);
            for (auto tm : one.terms) m.terms.push_back(tm);
            m.constant += one.constant;
            break;  // one representative setting of the others suffices
          }
          if (!have_ref) {
            ref = m;
            have_ref = true;
          } else {
            add_eq(m, ref);
          }
        }
      }
      // (c) each realized (x_k, a_k) slice is itself a causal cone element
      std::vector<int> rest;
      for (std::size_t j = 0; j < np; ++j)
        if (j != i) rest.push_back(t.parties[j]);
      for (int xk = 0; xk < idx.sc.n_inputs(k); ++xk)
        for (int ak = 0; ak < idx.sc.n_outputs(k, xk); ++ak)
          causal_cone(slice(b, i, xk, ak, rest));
    }
  }

  LinExpr sum_all(const SubTable& t, std::size_t xi) const {
    LinExpr s;
    for (const auto& e : t.entry[xi]) {
      for (auto tm : e.terms) s.terms.push_back(tm);
      s.constant += e.constant;
    }
    return s;
  }

  /// sum over the other parties' outputs with party position `i` pinned
  LinExpr marginal(const SubTable& t, std::size_t xi, std::size_t i,
                   int ak) const {
    LinExpr s;
    for (std::size_t ai = 0; ai < t.as[xi].size(); ++ai) {
      if (t.as[xi][ai][i] != ak) continue;
      for (auto tm : t.entry[xi][ai].terms) s.terms.push_back(tm);
      s.constant += t.entry[xi][ai].constant;
    }
    return s;
  }

  SubTable slice(const SubTable& t, std::size_t i, int xk, int ak,
                 const std::vector<int>& rest) const {
    SubTable s = shape(rest);
    for (std::size_t xi = 0; xi < t.xs.size(); ++xi) {
      if (t.xs[xi][i] != xk) continue;
      std::vector<int> xr;
      for (std::size_t j = 0; j < t.parties.size(); ++j)
        if (j != i) xr.push_back(t.xs[xi][j]);
      // locate xr in s.xs
      std::size_t sxi = 0;
      while (s.xs[sxi] != xr) ++sxi;
      for (std::size_t ai = 0; ai < t.as[xi].size(); ++ai) {
        if (t.as[xi][ai][i] != ak) continue;
        std::vector<int> ar;
        for (std::size_t j = 0; j < t.parties.size(); ++j)
          if (j != i) ar.push_back(t.as[xi][ai][j]);
        std::size_t sai = 0;
        while (s.as[sxi][sai] != ar) ++sai;
        s.entry[sxi][sai] = t.entry[xi][ai];
      }
    }
    return s;
  }
};

}  // namespace detail

/// Independent causality oracle built on the recursive characterization:
/// p is causal iff some party can be taken first, with a setting-independent
/// weight and input-independent choice, such that every residual conditional
/// distribution is itself causal.  Compiled into one feasibility LP.
inline bool membership_recursive(const Correlation& p) {
  const int n = p.scenario().n_parties();
  if (n > 3) throw ScenarioTooLarge("recursive oracle supports at most 3 parties");
  if (n == 1) return true;
  detail::ScenarioIndex idx(p.scenario());
  detail::RecursiveBuilder rb{idx};
  std::vector<int> ps(n);
  for (int k = 0; k < n; ++k) ps[k] = k + 1;
  auto top = rb.shape(ps);
  for (std::size_t xi = 0; xi < top.xs.size(); ++xi)
    for (std::size_t ai = 0; ai < top.as[xi].size(); ++ai)
      top.entry[xi][ai].constant =
          p.p(static_cast<long>(xi), static_cast<long>(ai));
  rb.causal_cone(top);
  LinearProgram lp(rb.n_vars, Sense::minimize);
  for (const auto& [terms, rhs] : rb.rows) lp.add_eq_row(terms, rhs);
  auto out = lp.solve();
  if (out.status == SolveOutcome::Status::Optimal) return true;
  if (out.status == SolveOutcome::Status::Infeasible) return false;
  throw SolverFailure("recursive membership LP failed");
}

}  // namespace causalkit
