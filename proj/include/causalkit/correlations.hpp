// SPDX-License-Identifier: MIT
//
// Instruments, the generalized Born rule, multi-party game functionals over
// the lazy scenario, and the explicit causal decomposition of correlations
// induced by processes with certified circuit decompositions.

#pragma once

#include <numeric>
#include <random>

#include "causalkit/classes.hpp"
#include "causalkit/ops.hpp"
#include "causalkit/validity.hpp"

namespace causalkit {

struct ScenarioMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DimensionMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct InvalidDistribution : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CertificateInvalid : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Input/output cardinalities of an N-party correlation scenario.  Parties
/// are numbered 1..N; output cardinality may depend on the input ("lazy":
/// a_k = 0 is forced for x_k = 0, a_k in {0,1} for x_k = 1).
class Scenario {
 public:
  Scenario(std::vector<int> inputs, std::vector<std::vector<int>> outputs)
      : inputs_(std::move(inputs)), outputs_(std::move(outputs)) {
    if (inputs_.empty() || inputs_.size() != outputs_.size())
      throw ScenarioMismatch("inconsistent scenario cardinalities");
    for (std::size_t k = 0; k < inputs_.size(); ++k) {
      if (inputs_[k] < 1 ||
          outputs_[k].size() != static_cast<std::size_t>(inputs_[k]))
        throw ScenarioMismatch("inconsistent scenario cardinalities");
      for (int c : outputs_[k])
        if (c < 1) throw ScenarioMismatch("output cardinality must be >= 1");
    }
  }

  static Scenario lazy(int n) {
    return Scenario(std::vector<int>(n, 2),
                    std::vector<std::vector<int>>(n, {1, 2}));
  }

  int n_parties() const { return static_cast<int>(inputs_.size()); }
  int n_inputs(int k) const { return inputs_.at(k - 1); }
  int n_outputs(int k, int x) const { return outputs_.at(k - 1).at(x); }

  long n_input_tuples() const {
    long t = 1;
    for (int c : inputs_) t *= c;
    return t;
  }

  /// All input tuples, lexicographic with party 1 most significant.
  std::vector<std::vector<int>> input_tuples() const {
    return tuples_([&](int k) { return inputs_[k]; });
  }

  /// All admissible outcome tuples for a given input tuple.
  std::vector<std::vector<int>> outcome_tuples(const std::vector<int>& x) const {
    check_input(x);
    return tuples_([&](int k) { return outputs_[k][x[k]]; });
  }

  long input_index(const std::vector<int>& x) const {
    check_input(x);
    long i = 0;
    for (std::size_t k = 0; k < inputs_.size(); ++k) i = i * inputs_[k] + x[k];
    return i;
  }

  long outcome_index(const std::vector<int>& x, const std::vector<int>& a) const {
    check_input(x);
    if (a.size() != outputs_.size())
      throw ScenarioMismatch("outcome tuple arity mismatch");
    long i = 0;
    for (std::size_t k = 0; k < inputs_.size(); ++k) {
      if (a[k] < 0 || a[k] >= outputs_[k][x[k]])
        throw ScenarioMismatch("outcome out of range");
      i = i * outputs_[k][x[k]] + a[k];
    }
    return i;
  }

  bool operator==(const Scenario&) const = default;

  nlohmann::json to_json() const {
    return {{"inputs", inputs_}, {"outputs", outputs_}};
  }
  static Scenario from_json(const nlohmann::json& j) {
    return Scenario(j.at("inputs").get<std::vector<int>>(),
                    j.at("outputs").get<std::vector<std::vector<int>>>());
  }

 private:
  void check_input(const std::vector<int>& x) const {
    if (x.size() != inputs_.size())
      throw ScenarioMismatch("input tuple arity mismatch");
    for (std::size_t k = 0; k < inputs_.size(); ++k)
      if (x[k] < 0 || x[k] >= inputs_[k])
        throw ScenarioMismatch("input out of range");
  }

  template <typename F>
  std::vector<std::vector<int>> tuples_(F card) const {
    std::vector<std::vector<int>> out{{}};
    for (int k = 0; k < n_parties(); ++k) {
      std::vector<std::vector<int>> next;
      for (const auto& t : out)
        for (int v = 0; v < card(k); ++v) {
          auto u = t;
          u.push_back(v);
          next.push_back(std::move(u));
        }
      out = std::move(next);
    }
    return out;
  }

  std::vector<int> inputs_;
  std::vector<std::vector<int>> outputs_;
};

/// A quantum instrument of one party: for each input, a list of CP branch
/// Choi matrices on A_k^I (x) A_k^O whose sum is trace preserving.
class Instrument {
 public:
  Instrument(int party, std::vector<std::vector<LabeledOperator>> branches,
             double psd_tol = 1e-7)
      : party_(party), branches_(std::move(branches)) {
    if (branches_.empty()) throw DimensionMismatch("instrument has no inputs");
    SpaceSpec expect;
    for (auto& per_x : branches_) {
      if (per_x.empty())
        throw DimensionMismatch("instrument input with no branches");
      LabeledOperator total;
      for (auto& m : per_x) {
        m = m.symmetrized();
        if (expect.factors().empty()) {
          expect = m.spec();
          if (expect.size() != 2 ||
              !expect.contains(SystemLabel::in(party_)) ||
              !expect.contains(SystemLabel::out(party_)))
            throw DimensionMismatch("instrument must live on one party's I/O");
        } else if (!(m.spec() == expect)) {
          throw DimensionMismatch("instrument branches on mismatched spaces");
        }
        Eigen::SelfAdjointEigenSolver<Matrix> es(m.matrix(),
                                                 Eigen::EigenvaluesOnly);
        double scale = std::max(1.0, m.frobenius_norm());
        if (es.eigenvalues().minCoeff() < -psd_tol * scale)
          throw DimensionMismatch("instrument branch is not CP");
        total = total.spec().factors().empty() ? m : total + m;
      }
      auto marg = partial_trace(total, {SystemLabel::out(party_)});
      auto resid = marg - LabeledOperator::identity(marg.spec());
      if (resid.frobenius_norm() > 1e-9 * std::sqrt((double)marg.dim()))
        throw DimensionMismatch("instrument is not trace preserving");
    }
  }

  int party() const { return party_; }
  int n_inputs() const { return static_cast<int>(branches_.size()); }
  int n_outcomes(int x) const { return static_cast<int>(branches_.at(x).size()); }
  const LabeledOperator& op(int x, int a) const { return branches_.at(x).at(a); }
  int d_in() const {
    return branches_[0][0].spec().dim_of(SystemLabel::in(party_));
  }
  int d_out() const {
    return branches_[0][0].spec().dim_of(SystemLabel::out(party_));
  }

 private:
  int party_;
  std::vector<std::vector<LabeledOperator>> branches_;
};

/// A conditional distribution p(a-vec | x-vec) over a scenario's lazy table.
class Correlation {
 public:
  Correlation(Scenario sc, std::vector<std::vector<double>> table)
      : sc_(std::move(sc)), p_(std::move(table)) {
    if (p_.size() != static_cast<std::size_t>(sc_.n_input_tuples()))
      throw ScenarioMismatch("correlation table has wrong input count");
    auto xs = sc_.input_tuples();
    for (std::size_t xi = 0; xi < xs.size(); ++xi) {
      if (p_[xi].size() != sc_.outcome_tuples(xs[xi]).size())
        throw ScenarioMismatch("correlation table has wrong outcome count");
      double total = 0;
      for (double v : p_[xi]) {
        if (v < 0)
          throw InvalidDistribution("negative probability in correlation");
        total += v;
      }
      if (std::abs(total - 1.0) > 1e-9)
        throw InvalidDistribution("correlation not normalized");
    }
  }

  const Scenario& scenario() const { return sc_; }
  double p(long xi, long ai) const { return p_.at(xi).at(ai); }
  double p(const std::vector<int>& x, const std::vector<int>& a) const {
    return p_.at(sc_.input_index(x)).at(sc_.outcome_index(x, a));
  }
  const std::vector<std::vector<double>>& table() const { return p_; }

  /// Flat vector over (input tuple, admissible outcome tuple), lexicographic.
  std::vector<double> flat() const {
    std::vector<double> v;
    for (const auto& row : p_) v.insert(v.end(), row.begin(), row.end());
    return v;
  }

  nlohmann::json to_json() const {
    nlohmann::json entries = nlohmann::json::array();
    auto xs = sc_.input_tuples();
    for (std::size_t xi = 0; xi < xs.size(); ++xi) {
      auto as = sc_.outcome_tuples(xs[xi]);
      for (std::size_t ai = 0; ai < as.size(); ++ai)
        entries.push_back(
            {{"x", xs[xi]}, {"a", as[ai]}, {"p", p_[xi][ai]}});
    }
    return {{"scenario", sc_.to_json()}, {"entries", entries}};
  }

  static Correlation from_json(const nlohmann::json& j) {
    Scenario sc = Scenario::from_json(j.at("scenario"));
    std::vector<std::vector<double>> table;
    auto xs = sc.input_tuples();
    for (const auto& x : xs)
      table.emplace_back(sc.outcome_tuples(x).size(), 0.0);
    for (const auto& e : j.at("entries")) {
      auto x = e.at("x").get<std::vector<int>>();
      auto a = e.at("a").get<std::vector<int>>();
      table.at(sc.input_index(x)).at(sc.outcome_index(x, a)) =
          e.at("p").get<double>();
    }
    return Correlation(std::move(sc), std::move(table));
  }

 private:
  Scenario sc_;
  std::vector<std::vector<double>> p_;
};

/// Linear functional on correlations with uniform input weighting:
/// value(p) = sum_x |X|^{-1} sum_a c(a,x) p(a|x).
class GameFunctional {
 public:
  /// coeff(x, a) -> real coefficient.
  template <typename F>
  GameFunctional(Scenario sc, F coeff) : sc_(std::move(sc)) {
    auto xs = sc_.input_tuples();
    for (const auto& x : xs) {
      std::vector<double> row;
      for (const auto& a : sc_.outcome_tuples(x)) row.push_back(coeff(x, a));
      c_.push_back(std::move(row));
    }
  }

  const Scenario& scenario() const { return sc_; }
  double coefficient(long xi, long ai) const { return c_.at(xi).at(ai); }

  double value(const Correlation& p) const {
    if (!(p.scenario() == sc_))
      throw ScenarioMismatch("game and correlation scenarios differ");
    double acc = 0;
    const double wx = 1.0 / static_cast<double>(sc_.n_input_tuples());
    for (std::size_t xi = 0; xi < c_.size(); ++xi)
      for (std::size_t ai = 0; ai < c_[xi].size(); ++ai)
        acc += wx * c_[xi][ai] * p.p(xi, ai);
    return acc;
  }

  /// Named presets:
  ///  - "lgyni":  two lazy parties, win iff a = b = xy
  ///  - "i3":     three parties (first with trivial output), the last-pair
  ///              guessing game steered by the first input
  ///  - "i4":     four lazy parties, LGYNI on the first pair steering which
  ///              of the last pair guesses
  ///  - "i4prime": four lazy parties, the facet functional of the
  ///              fixed-order-mixture polytope violated by dynamical
  ///              non-influenceable control (bound >= 0)
  static GameFunctional preset(const std::string& name) {
    if (name == "lgyni")
      return GameFunctional(
          Scenario::lazy(2), [](const std::vector<int>& x,
                                const std::vector<int>& a) {
            int xy = x[0] * x[1];
            return (a[0] == xy && a[1] == xy) ? 1.0 : 0.0;
          });
    if (name == "i3")
      return GameFunctional(
          Scenario({2, 2, 2}, {{1, 1}, {1, 2}, {1, 2}}),
          [](const std::vector<int>& x, const std::vector<int>& a) {
            int yz = x[1] * x[2];
            if (x[0] == 0) return a[2] == yz ? 1.0 : 0.0;
            return a[1] == yz ? 1.0 : 0.0;
          });
    if (name == "i4")
      return GameFunctional(
          Scenario::lazy(4), [](const std::vector<int>& x,
                                const std::vector<int>& a) {
            int xy = x[0] * x[1], zt = x[2] * x[3];
            bool lgyni_won = (a[0] == xy && a[1] == xy);
            if (lgyni_won) return a[3] == zt ? 1.0 : 0.0;
            return a[2] == zt ? 1.0 : 0.0;
          });
    if (name == "i4prime")
      return GameFunctional(
          Scenario::lazy(4), [](const std::vector<int>& x,
                                const std::vector<int>& a) {
            // conditional-probability coefficients; the uniform 1/16 input
            // weighting is compensated by the factor 16
            double c = 0;
            auto match = [&](int x0, int x1, int x2, int x3) {
              return x[0] == x0 && x[1] == x1 && x[2] == x2 && x[3] == x3;
            };
            if (match(1, 0, 1, 1) && a[0] == 1 && a[2] == 0) c += 1;
            if (match(1, 0, 1, 0) && a[0] == 1 && a[2] == 1) c += 1;
            if (match(0, 1, 1, 1) && a[1] == 1 && a[2] == 0) c += 1;
            if (match(0, 1, 1, 0) && a[1] == 1 && a[2] == 1) c += 1;
            if (match(1, 1, 0, 1) && a[0] == 1 && a[1] == 1 && a[3] == 1)
              c += 1;
            if (match(1, 1, 1, 1) && a[0] == 1 && a[1] == 1 && a[2] == 0 &&
                a[3] == 1)
              c -= 1;
            return 16.0 * c;
          });
    throw ScenarioMismatch("unknown game preset: " + name);
  }

 private:
  Scenario sc_;
  std::vector<std::vector<double>> c_;
};

inline double game_value(const GameFunctional& g, const Correlation& p) {
  return g.value(p);
}

namespace detail {

/// <M, W> = Tr[M^T W] for two Hermitian operators on the same space.
inline double trace_pairing(const LabeledOperator& m, const LabeledOperator& w) {
  if (!(m.spec() == w.spec()))
    throw DimensionMismatch("trace pairing on mismatched spaces");
  return m.matrix().cwiseProduct(w.matrix()).sum().real();
}

inline const Instrument& instrument_for(const std::vector<Instrument>& instr,
                                        int party) {
  for (const auto& i : instr)
    if (i.party() == party) return i;
  throw DimensionMismatch("no instrument for party " + std::to_string(party));
}

inline void check_instruments(const ProcessMatrix& w,
                              const std::vector<Instrument>& instr) {
  for (int k : w.parties()) {
    const auto& i = instrument_for(instr, k);
    if (i.d_in() != w.d_in(k) || i.d_out() != w.d_out(k))
      throw DimensionMismatch("instrument dimensions do not match process");
  }
}

}  // namespace detail

/// Generalized Born rule with open past/future: the induced Choi operator
/// on P (x) F for one joint outcome,
///   M^{PF} = Tr_{A^IO}[ (1^P (x) ((x)_k M_{a_k|x_k})^T (x) 1^F) W ].
inline LabeledOperator born_rule_pf(const ProcessMatrix& w,
                                    const std::vector<Instrument>& instr,
                                    const std::vector<int>& x,
                                    const std::vector<int>& a) {
  detail::check_instruments(w, instr);
  if (x.size() != w.parties().size() || a.size() != x.size())
    throw DimensionMismatch("input/outcome arity mismatch");
  LabeledOperator m;
  bool first = true;
  for (std::size_t i = 0; i < w.parties().size(); ++i) {
    const auto& inst = detail::instrument_for(instr, w.parties()[i]);
    const auto& b = inst.op(x[i], a[i]);
    m = first ? b : tensor(m, b);
    first = false;
  }
  return link_product(m, w.op());
}

/// Generalized Born rule: outcome distribution for one input tuple.
/// Tiny negative values (rounding) are clamped; the row is renormalized.
inline std::vector<double> born_rule(const ProcessMatrix& w,
                                     const std::vector<Instrument>& instr,
                                     const std::vector<int>& x) {
  if (w.has_past() && w.d_past() > 1)
    throw DimensionMismatch("born_rule requires a trivial past");
  if (w.has_future() && w.d_future() > 1)
    throw DimensionMismatch("born_rule requires a trivial future");
  detail::check_instruments(w, instr);
  const auto& parties = w.parties();
  std::vector<int> a(parties.size(), 0), limit(parties.size());
  for (std::size_t i = 0; i < parties.size(); ++i)
    limit[i] = detail::instrument_for(instr, parties[i]).n_outcomes(x[i]);
  std::vector<double> out;
  for (;;) {
    double v = born_rule_pf(w, instr, x, a).trace().real();
    if (v < 0) {
      if (v < -1e-10)
        throw InvalidDistribution("negative probability " + std::to_string(v));
      v = 0;
    }
    out.push_back(v);
    std::size_t i = parties.size();
    while (i > 0 && ++a[i - 1] == limit[i - 1]) a[--i] = 0;
    if (i == 0) break;
  }
  double total = std::accumulate(out.begin(), out.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-6)
    throw InvalidDistribution("Born-rule row sums to " + std::to_string(total));
  for (double& v : out) v /= total;
  return out;
}

/// Full correlation table induced by a process and per-party instruments.
/// The scenario is read off the instruments (parties ordered as in w).
inline Correlation born_rule_correlation(const ProcessMatrix& w,
                                         const std::vector<Instrument>& instr) {
  std::vector<int> inputs;
  std::vector<std::vector<int>> outputs;
  for (int k : w.parties()) {
    const auto& i = detail::instrument_for(instr, k);
    inputs.push_back(i.n_inputs());
    std::vector<int> per;
    for (int x = 0; x < i.n_inputs(); ++x) per.push_back(i.n_outcomes(x));
    outputs.push_back(per);
  }
  Scenario sc(std::move(inputs), std::move(outputs));
  std::vector<std::vector<double>> table;
  for (const auto& x : sc.input_tuples()) table.push_back(born_rule(w, instr, x));
  return Correlation(std::move(sc), std::move(table));
}

/// Haar-random instrument: for each input, a Haar isometry into
/// output (x) outcome-ancilla, measured in the ancilla basis to split into
/// CP branches.  Deterministic in the seed.
inline Instrument sample_haar_instrument(int party, int d_in, int d_out,
                                         const std::vector<int>& n_outcomes,
                                         std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;
  std::vector<std::vector<LabeledOperator>> branches;
  for (int n_a : n_outcomes) {
    const long dt = static_cast<long>(d_out) * n_a;
    if (dt < d_in)
      throw DimensionMismatch("no isometry into output (x) outcomes");
    Matrix g(dt, d_in);
    for (long r = 0; r < dt; ++r)
      for (long c = 0; c < d_in; ++c)
        g(r, c) = Complex(gauss(rng), gauss(rng));
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix v = qr.householderQ() * Matrix::Identity(dt, d_in);
    // row index of v is (out_digit * n_a + ancilla_digit)
    std::vector<LabeledOperator> per_x;
    for (int anc = 0; anc < n_a; ++anc) {
      Matrix kraus(d_out, d_in);
      for (int o = 0; o < d_out; ++o)
        for (int i = 0; i < d_in; ++i)
          kraus(o, i) = v(static_cast<long>(o) * n_a + anc, i);
      per_x.push_back(choi_from_kraus({kraus}, SystemLabel::in(party), d_in,
                                      SystemLabel::out(party), d_out));
    }
    branches.push_back(std::move(per_x));
  }
  return Instrument(party, std::move(branches));
}

/// A causal unraveling p(pi, a-vec | x-vec) of a Born-rule correlation.
struct CausalDecomposition {
  Scenario scenario;
  std::vector<std::vector<int>> orders;  ///< permutations of the parties
  /// values[x index][order index][outcome index]
  std::vector<std::vector<std::vector<double>>> values;

  double order_weight(long xi, long oi) const {
    double s = 0;
    for (double v : values.at(xi).at(oi)) s += v;
    return s;
  }

  std::vector<double> marginal(long xi) const {
    std::vector<double> out(values.at(xi).at(0).size(), 0.0);
    for (const auto& per_order : values.at(xi))
      for (std::size_t ai = 0; ai < per_order.size(); ++ai)
        out[ai] += per_order[ai];
    return out;
  }
};

/// Explicit causal decomposition of the correlation induced by a certified
/// circuit decomposition.  Ordered certificates (cc / nicc / conv_fo)
/// contribute p(pi, a|x) directly through their full-order branch; quantum-
/// controlled certificates (qc / niqc / sup_fo) go through the telescoping
/// branch-ratio chain, with zero denominators contributing zero mass.
inline CausalDecomposition causal_decomposition(
    const ClassCertificate& cert, const std::vector<Instrument>& instr) {
  const auto kind = cert.tag.kind;
  const bool ordered = kind == ClassKind::cc || kind == ClassKind::nicc ||
                       kind == ClassKind::conv_fo;
  const bool chained = kind == ClassKind::qc || kind == ClassKind::niqc ||
                       kind == ClassKind::sup_fo;
  if (!ordered && !chained)
    throw CertificateInvalid("causal decomposition needs an ordered or "
                             "quantum-controlled certificate");

  std::vector<int> parties;
  for (const auto& i : instr) parties.push_back(i.party());
  std::sort(parties.begin(), parties.end());
  if (static_cast<int>(parties.size()) != cert.n_parties)
    throw CertificateInvalid("instrument count does not match certificate");
  for (const auto& [key, b] : cert.blocks)
    if (b.spec().contains(SystemLabel::past()) ||
        b.spec().contains(SystemLabel::future()))
      throw CertificateInvalid("decomposition requires trivial past/future");

  std::vector<int> inputs;
  std::vector<std::vector<int>> outputs;
  for (int k : parties) {
    const auto& i = detail::instrument_for(instr, k);
    inputs.push_back(i.n_inputs());
    std::vector<int> per;
    for (int x = 0; x < i.n_inputs(); ++x) per.push_back(i.n_outcomes(x));
    outputs.push_back(per);
  }
  Scenario sc(std::move(inputs), std::move(outputs));

  // s_{(K\k, k)}(a_K|x_K) = <(x)_{j in K} M_{a_j|x_j}, block (x) 1^{A_k^O}>
  auto branch_value = [&](const std::string& key,
                          const std::vector<int>& ordered_k,
                          const std::vector<int>& x,
                          const std::vector<int>& a) {
    auto it = cert.blocks.find(key);
    if (it == cert.blocks.end())
      throw CertificateInvalid("certificate missing block " + key);
    std::vector<Factor> pad;
    LabeledOperator m;
    bool first = true;
    for (int k : ordered_k) {
      std::size_t pos =
          std::find(parties.begin(), parties.end(), k) - parties.begin();
      const auto& b = detail::instrument_for(instr, k).op(x[pos], a[pos]);
      m = first ? b : tensor(m, b);
      first = false;
    }
    LabeledOperator blk = it->second;
    for (const auto& f : m.spec().factors())
      if (!blk.spec().contains(f.label)) pad.push_back(f);
    if (!pad.empty())
      blk = tensor(blk, LabeledOperator::identity(SpaceSpec(pad)));
    double v = detail::trace_pairing(m, blk);
    return std::max(v, 0.0);
  };

  CausalDecomposition dec{sc, detail::permutations_of(parties), {}};
  auto xs = sc.input_tuples();
  for (const auto& x : xs) {
    auto as = sc.outcome_tuples(x);
    std::vector<std::vector<double>> per_order(
        dec.orders.size(), std::vector<double>(as.size(), 0.0));
    for (std::size_t oi = 0; oi < dec.orders.size(); ++oi) {
      const auto& pi = dec.orders[oi];
      const int n = static_cast<int>(pi.size());
      for (std::size_t ai = 0; ai < as.size(); ++ai) {
        const auto& a = as[ai];
        double p;
        if (ordered) {
          std::vector<int> fut;  // conv_fo level-N keys have no superscript
          p = branch_value(detail::okey(pi, fut), pi, x, a);
        } else {
          p = 1.0;
          for (int lvl = 1; lvl <= n && p > 0; ++lvl) {
            std::vector<int> past(pi.begin(), pi.begin() + lvl - 1);
            std::vector<int> done(pi.begin(), pi.begin() + lvl);
            std::vector<int> fut(pi.begin() + lvl, pi.end());
            auto key = [&](const std::vector<int>& K, int head) {
              if (kind == ClassKind::sup_fo) {
                std::vector<int> f(fut);
                if (K.empty()) return detail::okey({head}, f);
                return detail::ukey(K, head, f);
              }
              return detail::ukey(K, head);
            };
            double s = branch_value(key(past, pi[lvl - 1]), done, x, a);
            if (lvl == 1) {
              p *= s;
              continue;
            }
            double f = 0;  // denominator over who acted last within `past`
            for (int k : past) {
              std::vector<int> rest;
              for (int j : past)
                if (j != k) rest.push_back(j);
              std::vector<int> fut2(pi.begin() + lvl - 1, pi.end());
              std::string dk;
              if (kind == ClassKind::sup_fo)
                dk = rest.empty() ? detail::okey({k}, fut2)
                                  : detail::ukey(rest, k, fut2);
              else
                dk = detail::ukey(rest, k);
              f += branch_value(dk, past, x, a);
            }
            p = f > 0 ? p * s / f : 0.0;
          }
        }
        per_order[oi][ai] = p;
      }
    }
    dec.values.push_back(std::move(per_order));
  }
  return dec;
}

}  // namespace causalkit
