// SPDX-License-Identifier: MIT
//
// Alternating (see-saw) maximization of a game functional over pairs
// (process matrix constrained to a circuit class) x (per-party instruments).
// Each half-step is a single conic solve: with instruments fixed, the game
// value is linear in W and is maximized over the class's semidefinite
// feasible set; with W fixed, each party's instrument is optimized in turn
// under its trace-preservation constraints.  Values are monotone
// nondecreasing along the trace up to solver accuracy.

#pragma once

#include <random>

#include "causalkit/classes.hpp"
#include "causalkit/correlations.hpp"

namespace causalkit {

struct SeesawRun {
  std::uint64_t seed = 0;
  std::vector<double> trace;  ///< game value after every half-step
  double value = -1e300;
  bool ok = false;
  std::string error;  ///< set when the seed was skipped
};

struct SeesawResult {
  double best_value = -1e300;
  std::optional<ProcessMatrix> w;
  std::vector<Instrument> instruments;
  std::uint64_t best_seed = 0;
  std::vector<SeesawRun> runs;

  nlohmann::json to_json() const {
    nlohmann::json jr = nlohmann::json::array();
    for (const auto& r : runs)
      jr.push_back({{"seed", r.seed},
                    {"trace", r.trace},
                    {"value", r.value},
                    {"ok", r.ok},
                    {"error", r.error}});
    return {{"best_value", best_value}, {"best_seed", best_seed}, {"runs", jr}};
  }
};

namespace detail {

/// Exact linear game value of (W, instruments), without the distribution
/// sanity checks of born_rule (intermediate iterates may be slightly off the
/// probability simplex).
inline double seesaw_value(const GameFunctional& g, const ProcessMatrix& w,
                           const std::vector<Instrument>& instr) {
  const Scenario& sc = g.scenario();
  const double wx = 1.0 / static_cast<double>(sc.n_input_tuples());
  double acc = 0;
  auto xs = sc.input_tuples();
  for (std::size_t xi = 0; xi < xs.size(); ++xi) {
    auto as = sc.outcome_tuples(xs[xi]);
    for (std::size_t ai = 0; ai < as.size(); ++ai) {
      double c = g.coefficient(static_cast<long>(xi), static_cast<long>(ai));
      if (c == 0.0) continue;
      acc += wx * c *
             born_rule_pf(w, instr, xs[xi], as[ai]).matrix().trace().real();
    }
  }
  return acc;
}

/// Objective operator O with <O, W> = game value at fixed instruments.
inline LabeledOperator seesaw_objective(const GameFunctional& g,
                                        const std::vector<Instrument>& instr,
                                        const SpaceSpec& full,
                                        const std::vector<int>& parties) {
  const Scenario& sc = g.scenario();
  const double wx = 1.0 / static_cast<double>(sc.n_input_tuples());
  Matrix acc = Matrix::Zero(full.dim(), full.dim());
  auto xs = sc.input_tuples();
  for (std::size_t xi = 0; xi < xs.size(); ++xi) {
    auto as = sc.outcome_tuples(xs[xi]);
    for (std::size_t ai = 0; ai < as.size(); ++ai) {
      double c = g.coefficient(static_cast<long>(xi), static_cast<long>(ai));
      if (c == 0.0) continue;
      LabeledOperator m;
      bool first = true;
      for (std::size_t i = 0; i < parties.size(); ++i) {
        const auto& b =
            instrument_for(instr, parties[i]).op(xs[xi][i], as[ai][i]);
        m = first ? b : tensor(m, b);
        first = false;
      }
      LabeledOperator padded = pad_to(m, full);
      acc += wx * c * padded.matrix().conjugate();
    }
  }
  return LabeledOperator(full, acc);
}

/// The W half-step: maximize a linear objective <O, W> over the class.
///
/// Two structural reductions keep the subproblems small.  First, instead of
/// adding W as its own variable tied to the class's top equality, the
/// objective is pushed onto the top-level branches directly (each branch B
/// contributes pad(B) to W, so <O, pad(B)> = <Tr_absent O, B>), which
/// removes the largest variable and equality block from the program.
/// Second, classes built from total orders split: for conv_fo the maximum
/// over the convex hull equals the maximum over single-order combs, so one
/// small program per order is solved and the best one wins (after the first
/// full scan only the incumbent order is re-solved until progress stalls);
/// for cc / nicc an explicit order support restricts the branch tree, which
/// searches a subset of the class -- iterates remain feasible for the full
/// class, so the optimizer still yields valid lower bounds.
class SeesawWStep {
 public:
  SeesawWStep(const std::vector<int>& parties, const std::vector<int>& dims,
              ClassTag tag,
              std::optional<std::vector<std::vector<int>>> orders =
                  std::nullopt) {
    std::vector<Factor> fs;
    long d_in_total = 1;
    for (std::size_t i = 0; i < parties.size(); ++i) {
      fs.push_back({SystemLabel::in(parties[i]), dims[i]});
      fs.push_back({SystemLabel::out(parties[i]), dims[i]});
      d_in_total *= dims[i];
    }
    full_ = SpaceSpec(fs);
    parties_ = parties;
    Matrix white = Matrix::Identity(full_.dim(), full_.dim()) /
                   static_cast<double>(d_in_total);
    ref_.emplace(LabeledOperator(full_, white), parties);

    if (tag.kind == ClassKind::conv_fo) {
      // exact order split: one comb program per order in the support
      auto support = orders ? *orders : permutations_of(parties_);
      for (const auto& pi : support)
        subs_.push_back(make_sub(tag, std::vector<std::vector<int>>{pi}));
    } else if ((tag.kind == ClassKind::cc || tag.kind == ClassKind::nicc) &&
               parties_.size() >= 4) {
      subs_.push_back(make_sub(tag, orders ? *orders : pair_split_orders()));
    } else {
      if (orders)
        subs_.push_back(make_sub(tag, *orders));
      else
        subs_.push_back(make_sub(tag, std::nullopt));
    }
  }

  /// Solves the half-step.  With several subprograms, `scan_all` re-solves
  /// every order; otherwise only the incumbent is refreshed (cheap, still a
  /// feasible ascent since the incumbent's previous point stays feasible).
  ProcessMatrix maximize(const LabeledOperator& objective, double eps,
                         long solver_iters = 200000, bool verbose = false,
                         bool scan_all = true) {
    last_iters = 0;
    if (subs_.size() == 1 || (!scan_all && scanned_)) {
      std::size_t i = subs_.size() == 1 ? 0 : incumbent_;
      auto [v, w] = solve_sub(subs_[i], objective, eps, solver_iters, verbose);
      subs_[i].last_value = v;
      return w;
    }
    scanned_ = true;
    double best = -1e300;
    std::optional<ProcessMatrix> bw;
    for (std::size_t i = 0; i < subs_.size(); ++i) {
      auto [v, w] = solve_sub(subs_[i], objective, eps, solver_iters, verbose);
      subs_[i].last_value = v;
      if (v > best) {
        best = v;
        bw = std::move(w);
        incumbent_ = i;
      }
    }
    return *bw;
  }

  const SpaceSpec& full() const { return full_; }

  long last_iters = 0;  ///< solver iterations of the most recent half-step

 private:
  struct Sub {
    ClassStructure st;
    std::map<std::string, int> vars;
    std::vector<ClassStructure::Term> top_terms;
    ConicProgram prog;
    std::vector<double> warm_x, warm_y, warm_s;
    double last_value = -1e300;
  };

  /// Orders keeping the first half of the party list before the second half
  /// (both halves in every internal order): the natural two-group causal
  /// branching, which covers the known dynamical-order strategies while
  /// keeping the branch tree shallow.
  std::vector<std::vector<int>> pair_split_orders() const {
    const std::size_t h = parties_.size() / 2;
    std::vector<int> first(parties_.begin(), parties_.begin() + h);
    std::vector<int> second(parties_.begin() + h, parties_.end());
    std::vector<std::vector<int>> out;
    for (const auto& a : permutations_of(first))
      for (const auto& b : permutations_of(second)) {
        auto o = a;
        o.insert(o.end(), b.begin(), b.end());
        out.push_back(std::move(o));
      }
    return out;
  }

  Sub make_sub(ClassTag tag,
               std::optional<std::vector<std::vector<int>>> orders) {
    Sub s;
    s.st = detail::StructureBuilder(*ref_, tag, std::move(orders)).build();
    for (const auto& b : s.st.blocks)
      s.vars[b.key] = s.prog.add_psd_variable(b.key, b.space);
    for (const auto& q : s.st.weight_keys)
      s.vars[q] = s.prog.add_scalar_variable(q, /*nonneg=*/true);
    for (const auto& a : s.st.aux_scalar_keys)
      s.vars[a] = s.prog.add_scalar_variable(a, /*nonneg=*/true);
    for (const auto& e : s.st.eqs) {
      if (e.name == "top" || e.name == "sum") {
        // Tr_F W = sum of (padded) branches: W is not a variable here, so
        // this equality becomes the reassembly recipe and the objective map.
        for (const auto& t : e.terms) {
          if (!t.trace_out.empty())
            throw SolverFailure("unexpected traced term in top equality");
          s.top_terms.push_back(t);
        }
        continue;
      }
      std::vector<OpTerm> ops;
      for (const auto& t : e.terms)
        ops.push_back({s.vars.at(t.key), t.coeff, t.trace_out});
      std::vector<ScalarOpTerm> sco;
      for (const auto& wt : e.weights)
        sco.push_back({s.vars.at(wt.key),
                       LabeledOperator::identity(e.target).scaled(wt.coeff)});
      s.prog.add_equality(e.name, std::move(ops), std::move(sco), e.rhs);
    }
    return s;
  }

  std::pair<double, ProcessMatrix> solve_sub(Sub& s,
                                             const LabeledOperator& objective,
                                             double eps, long solver_iters,
                                             bool verbose) {
    std::map<int, Matrix> acc;
    for (const auto& t : s.top_terms) {
      const auto& b = s.st.block(t.key);
      std::vector<SystemLabel> absent;
      for (const auto& f : full_.factors())
        if (!b.space.contains(f.label)) absent.push_back(f.label);
      LabeledOperator co =
          absent.empty() ? objective : partial_trace(objective, absent);
      int v = s.vars.at(t.key);
      auto [it, fresh] = acc.emplace(v, (t.coeff * co.matrix()).eval());
      if (!fresh) it->second += t.coeff * co.matrix();
    }
    std::map<int, LabeledOperator> obj;
    for (auto& [v, m] : acc)
      obj.emplace(v, LabeledOperator(s.prog.variable(v).spec, m));
    s.prog.set_objective(Sense::maximize, std::move(obj), {});
    SolveOptions so;
    so.eps = eps;
    so.max_iters = solver_iters;
    so.verbose = verbose;
    if (!s.warm_x.empty()) {
      so.warm_x = &s.warm_x;
      so.warm_y = &s.warm_y;
      so.warm_s = &s.warm_s;
    }
    auto out = s.prog.solve(so);
    if (!out.ok()) throw SolverFailure("process half-step solve failed");
    last_iters += out.iters;
    s.warm_x = out.raw_x;
    s.warm_y = out.raw_y;
    s.warm_s = out.raw_s;
    Matrix w = Matrix::Zero(full_.dim(), full_.dim());
    for (const auto& t : s.top_terms) {
      auto val = s.prog.value_of(out, s.vars.at(t.key));
      w += t.coeff * pad_to(val, full_).matrix();
    }
    return {out.objective,
            ProcessMatrix(LabeledOperator(full_, project_psd(w)), parties_)};
  }

  SpaceSpec full_;
  std::vector<int> parties_;
  std::optional<ProcessMatrix> ref_;
  std::vector<Sub> subs_;
  std::size_t incumbent_ = 0;
  bool scanned_ = false;
};

/// The instrument half-step for one party: maximize the game value over that
/// party's instrument (trace-preserving per input), all else fixed.
inline Instrument seesaw_instrument_step(const GameFunctional& g,
                                         const ProcessMatrix& w,
                                         const std::vector<Instrument>& instr,
                                         int party, double eps) {
  const Scenario& sc = g.scenario();
  const auto& parties = w.parties();
  std::size_t pos =
      std::find(parties.begin(), parties.end(), party) - parties.begin();
  const auto& self = instrument_for(instr, party);
  const double wx = 1.0 / static_cast<double>(sc.n_input_tuples());

  // reduced objective operators on this party's in/out space
  std::vector<std::vector<Matrix>> red(self.n_inputs());
  const long dk = static_cast<long>(w.d_in(party)) * w.d_out(party);
  for (int x = 0; x < self.n_inputs(); ++x)
    red[x].assign(self.n_outcomes(x), Matrix::Zero(dk, dk));

  auto xs = sc.input_tuples();
  for (std::size_t xi = 0; xi < xs.size(); ++xi) {
    auto as = sc.outcome_tuples(xs[xi]);
    for (std::size_t ai = 0; ai < as.size(); ++ai) {
      double c = g.coefficient(static_cast<long>(xi), static_cast<long>(ai));
      if (c == 0.0) continue;
      LabeledOperator m;
      bool first = true;
      for (std::size_t i = 0; i < parties.size(); ++i) {
        if (i == pos) continue;
        const auto& b = instrument_for(instr, parties[i]).op(xs[xi][i],
                                                             as[ai][i]);
        m = first ? b : tensor(m, b);
        first = false;
      }
      auto r = link_product(m, w.op());  // lives on this party's in/out
      red[xs[xi][pos]][as[ai][pos]] += wx * c * r.matrix().conjugate();
    }
  }

  SpaceSpec kspec({{SystemLabel::in(party), w.d_in(party)},
                   {SystemLabel::out(party), w.d_out(party)}});
  ConicProgram prog;
  std::vector<std::vector<int>> vars(self.n_inputs());
  std::map<int, LabeledOperator> obj;
  for (int x = 0; x < self.n_inputs(); ++x)
    for (int a = 0; a < self.n_outcomes(x); ++a) {
      int v = prog.add_psd_variable("m", kspec);
      vars[x].push_back(v);
      obj.emplace(v, LabeledOperator(kspec, red[x][a]));
    }
  SpaceSpec inspec({{SystemLabel::in(party), w.d_in(party)}});
  for (int x = 0; x < self.n_inputs(); ++x) {
    std::vector<OpTerm> terms;
    for (int v : vars[x])
      terms.push_back({v, 1.0, {SystemLabel::out(party)}});
    prog.add_equality("tp" + std::to_string(x), std::move(terms), {},
                      LabeledOperator::identity(inspec));
  }
  prog.set_objective(Sense::maximize, std::move(obj), {});
  SolveOptions so;
  so.eps = eps;
  auto out = prog.solve(so);
  if (!out.ok()) throw SolverFailure("instrument half-step solve failed");
  // PSD-project the solver point, then restore trace preservation exactly by
  // the symmetric rescaling M -> (S^{-1/2} (x) 1) M (S^{-1/2} (x) 1) with
  // S = Tr_out sum_a M_a (= identity up to solver accuracy)
  const int din = w.d_in(party), dout = w.d_out(party);
  std::vector<std::vector<LabeledOperator>> branches;
  for (int x = 0; x < self.n_inputs(); ++x) {
    std::vector<Matrix> ms;
    Matrix s = Matrix::Zero(din, din);
    for (int v : vars[x]) {
      ms.push_back(project_psd(prog.value_of(out, v).matrix()));
      s += partial_trace(LabeledOperator(kspec, ms.back()),
                         {SystemLabel::out(party)})
               .matrix();
    }
    Eigen::SelfAdjointEigenSolver<Matrix> es(s);
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(1e-12);
    Matrix isqrt = es.eigenvectors() *
                   ev.cwiseSqrt().cwiseInverse().asDiagonal() *
                   es.eigenvectors().adjoint();
    Matrix k = Eigen::kroneckerProduct(isqrt, Matrix::Identity(dout, dout));
    std::vector<LabeledOperator> row;
    for (auto& m : ms) row.emplace_back(kspec, Matrix(k * m * k.adjoint()));
    branches.push_back(std::move(row));
  }
  return Instrument(party, std::move(branches));
}

/// Starting instruments: the classical lazy set (seed 0) or a randomly
/// rotated variant (transmit through a Haar unitary; measure in a Haar basis
/// and re-prepare Haar basis states).
inline std::vector<Instrument> seesaw_initial_instruments(
    const Scenario& sc, const std::vector<int>& parties,
    const std::vector<int>& dims, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;
  auto haar = [&](int d) {
    if (seed == 0) return Matrix(Matrix::Identity(d, d));
    Matrix gm(d, d);
    for (int r = 0; r < d; ++r)
      for (int c = 0; c < d; ++c) gm(r, c) = Complex(gauss(rng), gauss(rng));
    Eigen::HouseholderQR<Matrix> qr(gm);
    return Matrix(qr.householderQ() * Matrix::Identity(d, d));
  };
  std::vector<Instrument> out;
  for (std::size_t i = 0; i < parties.size(); ++i) {
    const int k = parties[i], d = dims[i];
    auto in = SystemLabel::in(k);
    auto outl = SystemLabel::out(k);
    std::vector<std::vector<LabeledOperator>> branches;
    branches.push_back({choi_from_kraus({haar(d)}, in, d, outl, d)});
    Matrix v = haar(d), b = haar(d);
    const int na = sc.n_outputs(k, 1);
    std::vector<LabeledOperator> row;
    for (int a = 0; a < na; ++a) {
      // outcome a collects the basis directions congruent to a
      std::vector<Matrix> kraus;
      for (int j = a; j < d; j += na)
        kraus.push_back(b.col(j % d) * v.col(j).adjoint());
      if (kraus.empty()) kraus.push_back(Matrix::Zero(d, d));
      row.push_back(choi_from_kraus(kraus, in, d, outl, d));
    }
    branches.push_back(std::move(row));
    out.push_back(Instrument(k, std::move(branches)));
  }
  return out;
}

}  // namespace detail

/// Alternating maximization of `g` over (W in class `tag`) x instruments on
/// a lazy scenario.  `dims` are per-party system dimensions (default qubit).
/// Runs `seeds` independent starts (seed 0 = classical lazy instruments) and
/// returns the best; seeds whose solves fail are recorded and skipped.
inline SeesawResult seesaw_optimize(
    const GameFunctional& g, ClassTag tag, std::vector<int> dims = {},
    int seeds = 20, int max_iters = 50, double eps = 1e-8,
    std::optional<std::vector<std::vector<int>>> orders = std::nullopt) {
  const Scenario& sc = g.scenario();
  const int n = sc.n_parties();
  std::vector<int> parties(n);
  for (int k = 1; k <= n; ++k) {
    parties[k - 1] = k;
    if (sc.n_inputs(k) != 2 || sc.n_outputs(k, 0) != 1)
      throw ScenarioMismatch("see-saw requires a lazy scenario");
  }
  if (dims.empty()) dims.assign(n, 2);
  if (static_cast<int>(dims.size()) != n)
    throw ScenarioMismatch("one dimension per party expected");

  detail::SeesawWStep wstep(parties, dims, tag, std::move(orders));
  SeesawResult res;
  for (int s = 0; s < seeds; ++s) {
    SeesawRun run;
    run.seed = static_cast<std::uint64_t>(s);
    try {
      auto instr = detail::seesaw_initial_instruments(sc, parties, dims,
                                                      run.seed);
      std::optional<ProcessMatrix> w;
      double cur = -1e300;
      double sweep_best = -1e300;
      int stall = 0;
      for (int it = 0; it < max_iters; ++it) {
        // Each half-step keeps the previous iterate when the candidate's
        // exact value is lower (the previous point stays feasible), so the
        // recorded trace is monotone by construction.
        auto cand = wstep.maximize(
            detail::seesaw_objective(g, instr, wstep.full(), parties), eps,
            /*solver_iters=*/200000, /*verbose=*/false,
            /*scan_all=*/it == 0 || stall == 1);
        double cv = detail::seesaw_value(g, cand, instr);
        if (!w || cv >= cur) {
          w = std::move(cand);
          cur = cv;
        }
        run.trace.push_back(cur);
        for (int k : parties) {
          auto better = detail::seesaw_instrument_step(g, *w, instr, k, eps);
          auto trial = instr;
          for (auto& i : trial)
            if (i.party() == k) i = better;
          double iv = detail::seesaw_value(g, *w, trial);
          if (iv >= cur) {
            instr = std::move(trial);
            cur = iv;
          }
          run.trace.push_back(cur);
        }
        if (cur - sweep_best < 1e-6) {
          if (++stall >= 3) break;
        } else {
          stall = 0;
        }
        sweep_best = std::max(sweep_best, cur);
      }
      run.value = run.trace.back();
      run.ok = true;
      if (run.value > res.best_value) {
        res.best_value = run.value;
        res.w = w;
        res.instruments = instr;
        res.best_seed = run.seed;
      }
    } catch (const std::exception& e) {
      run.error = e.what();
    }
    res.runs.push_back(std::move(run));
  }
  if (!res.w) throw SolverFailure("all see-saw seeds failed");
  return res;
}

}  // namespace causalkit
