// SPDX-License-Identifier: MIT
//
// Named fixtures: exact constructors for the reference process matrices,
// instrument sets, correlations, and class certificates used throughout the
// test-suite and the CLI, plus generic constructions turning fixed-order or
// causal correlations into classically-controlled circuits reproducing them.

#pragma once

#include "causalkit/classes.hpp"
#include "causalkit/correlations.hpp"
#include "causalkit/polytopes.hpp"

namespace causalkit {

struct BadParameter : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NoKnownDecomposition : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NotConvFO : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NotCausal : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Identifies a catalog process matrix.  `name` is one of:
///   w_convfo, w_cs, w_nicc, w_supfo, w_qs, w_niqc, w_niqc_prime,
///   w_pm_alpha, w0, w1
struct CatalogKey {
  std::string name;
  int sign = +1;                        ///< for w_pm_alpha
  double alpha = 1.0 / std::sqrt(2.0);  ///< two-party core strength
  double beta = 1.0 - 1.0 / std::sqrt(2.0);
  Eigen::Vector2cd psi = Eigen::Vector2cd(1.0, 0.0);  ///< relayed state
};

namespace detail {

inline Matrix pauli_matrix(char p) {
  Matrix m(2, 2);
  switch (p) {
    case 'I': m << 1, 0, 0, 1; break;
    case 'X': m << 0, 1, 1, 0; break;
    case 'Y': m << 0, Complex(0, -1), Complex(0, 1), 0; break;
    case 'Z': m << 1, 0, 0, -1; break;
    default: throw BadParameter("unknown Pauli letter");
  }
  return m;
}

/// Pauli word on the given (canonically ordered) labels.
inline Matrix pauli_word(const std::string& w) {
  Matrix m = pauli_matrix(w[0]);
  for (std::size_t i = 1; i < w.size(); ++i)
    m = Eigen::kroneckerProduct(m, pauli_matrix(w[i])).eval();
  return m;
}

inline LabeledOperator state_proj(const SystemLabel& l,
                                  const Eigen::VectorXcd& v) {
  return LabeledOperator(SpaceSpec({{l, static_cast<int>(v.size())}}),
                         v * v.adjoint());
}

inline LabeledOperator basis_proj(const SystemLabel& l, int d, int i) {
  Eigen::VectorXcd v = Eigen::VectorXcd::Zero(d);
  v(i) = 1.0;
  return state_proj(l, v);
}

/// The two-qubit-pair core 1/4 (1111 +/- alpha (ZZZ1 + Z1XX)) on the input
/// and output spaces of parties 1 and 2 (canonical order A1I A1O A2I A2O).
inline LabeledOperator two_party_core(double alpha, int sign) {
  if (alpha < 0 || alpha > 1.0 / std::sqrt(2.0) + 1e-12)
    throw BadParameter("core strength must lie in [0, 1/sqrt(2)]");
  double s = sign >= 0 ? 1.0 : -1.0;
  Matrix m = 0.25 * (pauli_word("IIII") + s * alpha * pauli_word("ZZZI") +
                     s * alpha * pauli_word("ZIXX"));
  std::vector<Factor> fs = {{SystemLabel::in(1), 2},
                            {SystemLabel::out(1), 2},
                            {SystemLabel::in(2), 2},
                            {SystemLabel::out(2), 2}};
  return LabeledOperator(fs, m);
}

/// Entangled-pair cores with output-controlled Bell-like phases
/// (swap = false/true for the two variants).
inline LabeledOperator phase_pair_core(bool swap) {
  std::vector<Factor> fs = {{SystemLabel::in(1), 2},
                            {SystemLabel::out(1), 2},
                            {SystemLabel::in(2), 2},
                            {SystemLabel::out(2), 2}};
  Matrix m = Matrix::Zero(16, 16);
  auto phase = [](int a, int b) -> Complex {
    if (a == 0 && b == 0) return 1.0;
    if (a == 1 && b == 1) return -1.0;
    if (a == 0 && b == 1) return Complex(0, 1);
    return Complex(0, -1);  // a = 1, b = 0
  };
  auto idx = [](int ai, int ao, int bi, int bo) {
    return ((ai * 2 + ao) * 2 + bi) * 2 + bo;
  };
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) {
      Eigen::VectorXcd v = Eigen::VectorXcd::Zero(16);
      Complex ph = swap ? phase(b, a) : phase(a, b);
      v(idx(0, a, 0, b)) = 1.0 / std::sqrt(2.0);
      v(idx(1, a, 1, b)) = ph / std::sqrt(2.0);
      m += v * v.adjoint();
    }
  return LabeledOperator(fs, m);
}

/// [[psi]]^{first^I} (x) |1>><<1|^{first^O second^I}: a state handed to
/// `first` and relayed through an identity channel to `second`.
inline LabeledOperator relay(const Eigen::Vector2cd& psi, int first,
                             int second) {
  return tensor(state_proj(SystemLabel::in(first), psi),
                max_entangled(SystemLabel::out(first),
                              SystemLabel::in(second), 2));
}

/// Rank-1 coherently-controlled routing of `psi` through parties 1 and 2,
/// with the branch flag stored in `flag_label` (and optionally a copy in the
/// past space).  The future target leg goes to `ft_label` of dimension 2.
inline Eigen::VectorXcd routed_ket(const Eigen::Vector2cd& psi, bool with_past,
                                   double branch_amp) {
  // canonical order: [P,] A1I A1O A2I A2O F(=Ft(x)Fc, dim 4)
  const int d = with_past ? 128 : 64;
  Eigen::VectorXcd v = Eigen::VectorXcd::Zero(d);
  for (int p = 0; p < (with_past ? 2 : 1); ++p)
    for (int ai = 0; ai < 2; ++ai)
      for (int ao = 0; ao < 2; ++ao)
        for (int bi = 0; bi < 2; ++bi)
          for (int bo = 0; bo < 2; ++bo)
            for (int ft = 0; ft < 2; ++ft)
              for (int fc = 0; fc < 2; ++fc) {
                long idx = ((((ai * 2 + ao) * 2 + bi) * 2 + bo) * 4) +
                           ft * 2 + fc;
                if (with_past) idx += p * 64;
                Complex amp = 0.0;
                // branch 1 <-> 2: psi to party 1, relay to 2, then out
                if (fc == 0 && bi == ao && ft == bo && (!with_past || p == 0))
                  amp += branch_amp * psi(ai);
                // branch 2 <-> 1
                if (fc == 1 && ai == bo && ft == ao && (!with_past || p == 1))
                  amp += branch_amp * psi(bi);
                v(idx) = amp;
              }
  return v;
}

}  // namespace detail

/// Builds the named reference process matrix.
inline ProcessMatrix build_process(const CatalogKey& key) {
  using detail::relay;
  const auto& psi = key.psi;
  auto label_id = [](const SystemLabel& l, int d) {
    return LabeledOperator::identity(SpaceSpec({{l, d}}));
  };

  if (key.name == "w_pm_alpha")
    return ProcessMatrix(detail::two_party_core(key.alpha, key.sign), {1, 2});
  if (key.name == "w0")
    return ProcessMatrix(detail::phase_pair_core(false), {1, 2});
  if (key.name == "w1")
    return ProcessMatrix(detail::phase_pair_core(true), {1, 2});

  if (key.name == "w_convfo") {
    auto w = tensor(relay(psi, 1, 2), label_id(SystemLabel::out(2), 2))
                 .scaled(0.5) +
             tensor(relay(psi, 2, 1), label_id(SystemLabel::out(1), 2))
                 .scaled(0.5);
    return ProcessMatrix(w, {1, 2});
  }
  if (key.name == "w_cs") {
    auto w = tensor(detail::basis_proj(SystemLabel::past(), 2, 0),
                    tensor(relay(psi, 1, 2),
                           label_id(SystemLabel::out(2), 2))) +
             tensor(detail::basis_proj(SystemLabel::past(), 2, 1),
                    tensor(relay(psi, 2, 1),
                           label_id(SystemLabel::out(1), 2)));
    return ProcessMatrix(w, {1, 2});
  }

  // two-branch controlled relays over parties 3 and 4 on top of a
  // four-qubit core pair for parties 1 and 2
  auto controlled = [&](const LabeledOperator& core_a,
                        const LabeledOperator& core_b) {
    auto w = tensor(core_a, tensor(relay(psi, 3, 4),
                                   label_id(SystemLabel::out(4), 2)))
                 .scaled(0.5) +
             tensor(core_b, tensor(relay(psi, 4, 3),
                                   label_id(SystemLabel::out(3), 2)))
                 .scaled(0.5);
    return ProcessMatrix(w, {1, 2, 3, 4});
  };
  if (key.name == "w_nicc")
    return controlled(detail::two_party_core(key.alpha, +1),
                      detail::two_party_core(key.alpha, -1));
  if (key.name == "w_niqc")
    return controlled(detail::phase_pair_core(false),
                      detail::phase_pair_core(true));
  if (key.name == "w_niqc_prime")
    return controlled(detail::two_party_core(key.alpha, +1),
                      detail::two_party_core(key.beta, +1));

  if (key.name == "w_supfo" || key.name == "w_qs") {
    bool with_past = key.name == "w_qs";
    auto v = detail::routed_ket(psi, with_past,
                                with_past ? 1.0 : 1.0 / std::sqrt(2.0));
    std::vector<Factor> fs;
    if (with_past) fs.push_back({SystemLabel::past(), 2});
    fs.push_back({SystemLabel::in(1), 2});
    fs.push_back({SystemLabel::out(1), 2});
    fs.push_back({SystemLabel::in(2), 2});
    fs.push_back({SystemLabel::out(2), 2});
    fs.push_back({SystemLabel::future(), 4});
    return ProcessMatrix(LabeledOperator(fs, v * v.adjoint()), {1, 2});
  }
  throw BadParameter("unknown catalog process: " + key.name);
}

/// Builds the explicit class certificate documented for (key, tag).
/// Available pairs: (w_convfo, conv_fo), (w_cs, cc), (w_nicc, nicc),
/// (w_niqc, niqc), (w_qs, qc).
inline ClassCertificate build_certificate(const CatalogKey& key,
                                          ClassTag tag) {
  using detail::okey;
  using detail::relay;
  using detail::ukey;
  const auto& psi = key.psi;
  auto w = build_process(key);
  auto st = detail::StructureBuilder(w, tag).build();

  ClassCertificate cert;
  cert.tag = tag;
  cert.n_parties = w.n_parties();
  for (const auto& b : st.blocks)
    cert.blocks.emplace(b.key, LabeledOperator::zero(b.space));
  auto set = [&](const std::string& k, const LabeledOperator& v) {
    auto it = cert.blocks.find(k);
    if (it == cert.blocks.end()) throw KeyMismatch("no block " + k);
    it->second = v;
  };
  auto psiA = detail::state_proj(SystemLabel::in(1), psi);
  auto psiB = detail::state_proj(SystemLabel::in(2), psi);

  if (key.name == "w_convfo" && tag.kind == ClassKind::conv_fo) {
    set(okey({1, 2}), relay(psi, 1, 2).scaled(0.5));
    set(okey({2, 1}), relay(psi, 2, 1).scaled(0.5));
    set(okey({1}, {2}), psiA.scaled(0.5));
    set(okey({2}, {1}), psiB.scaled(0.5));
    cert.weights["q:1.2"] = 0.5;
    cert.weights["q:2.1"] = 0.5;
    return cert;
  }
  if (key.name == "w_cs" && tag.kind == ClassKind::cc) {
    auto p0 = detail::basis_proj(SystemLabel::past(), 2, 0);
    auto p1 = detail::basis_proj(SystemLabel::past(), 2, 1);
    set(okey({1, 2}), tensor(p0, relay(psi, 1, 2)));
    set(okey({2, 1}), tensor(p1, relay(psi, 2, 1)));
    set(okey({1}), tensor(p0, psiA));
    set(okey({2}), tensor(p1, psiB));
    return cert;
  }
  if (key.name == "w_qs" && tag.kind == ClassKind::qc) {
    auto p0 = detail::basis_proj(SystemLabel::past(), 2, 0);
    auto p1 = detail::basis_proj(SystemLabel::past(), 2, 1);
    set(ukey({1}, 2), tensor(p0, relay(psi, 1, 2)));
    set(ukey({2}, 1), tensor(p1, relay(psi, 2, 1)));
    set(ukey({}, 1), tensor(p0, psiA));
    set(ukey({}, 2), tensor(p1, psiB));
    return cert;
  }
  if (key.name == "w_nicc" && tag.kind == ClassKind::nicc) {
    auto wp = detail::two_party_core(key.alpha, +1);
    auto wm = detail::two_party_core(key.alpha, -1);
    auto psiC = detail::state_proj(SystemLabel::in(3), psi);
    auto psiD = detail::state_proj(SystemLabel::in(4), psi);
    set(okey({1, 2, 3, 4}),
        tensor(wp, relay(psi, 3, 4)).scaled(0.5));
    set(okey({1, 2, 4, 3}),
        tensor(wm, relay(psi, 4, 3)).scaled(0.5));
    set(okey({1, 2, 3}), tensor(wp, psiC).scaled(0.5));
    set(okey({1, 2, 4}), tensor(wm, psiD).scaled(0.5));
    set(okey({1, 2}),
        LabeledOperator::identity(SpaceSpec({{SystemLabel::in(1), 2},
                                             {SystemLabel::out(1), 2},
                                             {SystemLabel::in(2), 2}}))
            .scaled(0.25));
    set(okey({1}),
        LabeledOperator::identity(SpaceSpec({{SystemLabel::in(1), 2}}))
            .scaled(0.5));
    return cert;
  }
  if (key.name == "w_niqc" && tag.kind == ClassKind::niqc) {
    auto w0 = detail::phase_pair_core(false);
    auto w1 = detail::phase_pair_core(true);
    auto psiC = detail::state_proj(SystemLabel::in(3), psi);
    auto psiD = detail::state_proj(SystemLabel::in(4), psi);
    set(ukey({1, 2, 3}, 4), tensor(w0, relay(psi, 3, 4)).scaled(0.5));
    set(ukey({1, 2, 4}, 3), tensor(w1, relay(psi, 4, 3)).scaled(0.5));
    set(ukey({1, 2}, 3), tensor(w0, psiC).scaled(0.5));
    set(ukey({1, 2}, 4), tensor(w1, psiD).scaled(0.5));
    using detail::pauli_word;
    set(ukey({1}, 2),
        LabeledOperator({{SystemLabel::in(1), 2},
                         {SystemLabel::out(1), 2},
                         {SystemLabel::in(2), 2}},
                        0.125 * (pauli_word("III") + pauli_word("ZIZ") +
                                 pauli_word("XZX") - pauli_word("YZY"))));
    set(ukey({2}, 1),
        LabeledOperator({{SystemLabel::in(1), 2},
                         {SystemLabel::in(2), 2},
                         {SystemLabel::out(2), 2}},
                        0.125 * (pauli_word("III") + pauli_word("ZZI") +
                                 pauli_word("XXZ") - pauli_word("YYZ"))));
    set(ukey({}, 1),
        LabeledOperator::identity(SpaceSpec({{SystemLabel::in(1), 2}}))
            .scaled(0.25));
    set(ukey({}, 2),
        LabeledOperator::identity(SpaceSpec({{SystemLabel::in(2), 2}}))
            .scaled(0.25));
    return cert;
  }
  throw NoKnownDecomposition("no documented certificate for " + key.name +
                             " in " + tag.str());
}

// ---------------------------------------------------------------------------
// Instruments
// ---------------------------------------------------------------------------

namespace detail {

/// Lazy qubit relay instrument: input 0 transmits the system untouched,
/// input 1 measures in the computational basis and emits |flag>.
inline Instrument lazy_relay_instrument(int party, int flag) {
  auto in = SystemLabel::in(party);
  auto out = SystemLabel::out(party);
  std::vector<std::vector<LabeledOperator>> branches;
  branches.push_back({max_entangled(in, out, 2)});
  branches.push_back({tensor(basis_proj(in, 2, 0), basis_proj(out, 2, flag)),
                      tensor(basis_proj(in, 2, 1), basis_proj(out, 2, flag))});
  return Instrument(party, std::move(branches));
}

}  // namespace detail

/// Named instrument sets.
///  - "lazy_classical": four lazy qubit parties; the first pair resets the
///    measured system to |0>, the second pair marks it with |1>.
///  - "lazy_classical_mark": the |1>-marking variant for all four parties.
inline std::vector<Instrument> build_instruments(const std::string& name) {
  std::vector<Instrument> out;
  if (name == "lazy_classical") {
    for (int k = 1; k <= 4; ++k)
      out.push_back(detail::lazy_relay_instrument(k, k <= 2 ? 0 : 1));
    return out;
  }
  if (name == "lazy_classical_mark") {
    for (int k = 1; k <= 4; ++k)
      out.push_back(detail::lazy_relay_instrument(k, 1));
    return out;
  }
  throw BadParameter("unknown instrument set: " + name);
}

/// Classical read-out instruments for an arbitrary scenario: the input space
/// of party k enumerates response vectors (one prescribed output per
/// setting); the instrument reads off the output for the actual setting and
/// publishes the setting in its output space.
inline std::vector<Instrument> build_instruments(const std::string& name,
                                                 const Scenario& sc) {
  if (name != "readout_classical")
    throw BadParameter("unknown instrument set: " + name);
  std::vector<Instrument> out;
  for (int k = 1; k <= sc.n_parties(); ++k) {
    const int nx = sc.n_inputs(k);
    int d_in = 1;
    for (int x = 0; x < nx; ++x) d_in *= sc.n_outputs(k, x);
    auto in = SystemLabel::in(k);
    auto outl = SystemLabel::out(k);
    std::vector<std::vector<LabeledOperator>> branches;
    for (int x = 0; x < nx; ++x) {
      std::vector<LabeledOperator> row;
      for (int a = 0; a < sc.n_outputs(k, x); ++a) {
        Matrix sel = Matrix::Zero(d_in, d_in);
        for (int alpha = 0; alpha < d_in; ++alpha) {
          // response vectors in mixed radix, setting 0 most significant
          int rest = alpha;
          int digit = 0;
          for (int xx = nx - 1; xx >= 0; --xx) {
            int r = sc.n_outputs(k, xx);
            if (xx == x) digit = rest % r;
            rest /= r;
          }
          if (digit == a) sel(alpha, alpha) = 1.0;
        }
        row.push_back(tensor(LabeledOperator(SpaceSpec({{in, d_in}}), sel),
                             detail::basis_proj(outl, nx, x)));
      }
      branches.push_back(std::move(row));
    }
    out.push_back(Instrument(k, std::move(branches)));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Correlations
// ---------------------------------------------------------------------------

namespace detail {

template <typename F>
Correlation table_correlation(const Scenario& sc, F prob) {
  std::vector<std::vector<double>> table;
  for (const auto& x : sc.input_tuples()) {
    std::vector<double> row;
    for (const auto& a : sc.outcome_tuples(x)) row.push_back(prob(x, a));
    table.push_back(std::move(row));
  }
  return Correlation(sc, std::move(table));
}

}  // namespace detail

/// Named reference correlations:
///  - fo_i4_max: last party guesses the product of the last two inputs
///    (fixed-order optimum of the four-party steering game)
///  - i4_causal_max: the first pair's inputs decide which of the last pair
///    guesses (adaptive optimum)
///  - saturate_nio: order-constant dynamical strategy (31/32)
///  - saturate_nio_prime: coarse-grained-order-constant strategy (47/48)
///  - i3_dynamical: three-party steering optimum (first party has no output)
inline Correlation build_correlation(const std::string& name) {
  using V = const std::vector<int>&;
  if (name == "fo_i4_max")
    return detail::table_correlation(
        Scenario::lazy(4), [](V x, V a) {
          return (a[0] == 0 && a[1] == 0 && a[2] == 0 && a[3] == x[2] * x[3])
                     ? 1.0
                     : 0.0;
        });
  if (name == "i4_causal_max")
    return detail::table_correlation(
        Scenario::lazy(4), [](V x, V a) {
          if (a[0] != 0 || a[1] != 0) return 0.0;
          if (x[0] * x[1] == 0)
            return (a[2] == 0 && a[3] == x[2] * x[3]) ? 1.0 : 0.0;
          return (a[3] == 0 && a[2] == x[2] * x[3]) ? 1.0 : 0.0;
        });
  if (name == "saturate_nio")
    return detail::table_correlation(
        Scenario::lazy(4), [](V xv, V av) {
          int x = xv[0], y = xv[1], z = xv[2], t = xv[3];
          int a = av[0], b = av[1], c = av[2], d = av[3];
          double pa = (x == 0) ? (a == 0 ? 1.0 : 0.0) : 0.5;
          double pb = (y == 0) ? (b == 0 ? 1.0 : 0.0)
                               : ((x == 0) ? 0.5 : (b == a ? 1.0 : 0.0));
          double first = (c == 0 && d == z * t) ? 1.0 : 0.0;
          double second = (d == 0 && c == z * t) ? 1.0 : 0.0;
          double pcd = (x == 0 && y == 0)
                           ? 0.5 * first + 0.5 * second
                           : ((a == b && a == x * y) ? first : second);
          return pa * pb * pcd;
        });
  if (name == "saturate_nio_prime")
    return detail::table_correlation(
        Scenario::lazy(4), [](V xv, V av) {
          int x = xv[0], y = xv[1], z = xv[2], t = xv[3];
          int a = av[0], b = av[1], c = av[2], d = av[3];
          double first = (c == 0 && d == z * t) ? 1.0 : 0.0;
          double second = (d == 0 && c == z * t) ? 1.0 : 0.0;
          double p1 =
              (x == 0)
                  ? ((a == 0 && b == 0 && c == 0 && d == z * t) ? 1.0 : 0.0)
                  : ((b == y) ? 0.5 * ((y == a) ? first : second) : 0.0);
          double p2 =
              (b == y && a == x * y) ? ((x == 0) ? second : first) : 0.0;
          return (2.0 / 3.0) * p1 + (1.0 / 3.0) * p2;
        });
  if (name == "i3_dynamical")
    return detail::table_correlation(
        Scenario({2, 2, 2}, {{1, 1}, {1, 2}, {1, 2}}), [](V x, V a) {
          int b = a[1], c = a[2], y = x[1], z = x[2];
          if (x[0] == 0) return (b == 0 && c == y * z) ? 1.0 : 0.0;
          return (c == 0 && b == y * z) ? 1.0 : 0.0;
        });
  throw BadParameter("unknown catalog correlation: " + name);
}

// ---------------------------------------------------------------------------
// Processes reproducing a given correlation
// ---------------------------------------------------------------------------

namespace detail {

/// Shared machinery: builds the diagonal classical process whose input
/// spaces enumerate response vectors and whose output spaces carry the
/// settings, with the diagonal weights supplied per (assignment of settings,
/// assignment of response vectors) by `weight`.
class ResponseProcessBuilder {
 public:
  explicit ResponseProcessBuilder(const Scenario& sc) : sc_(sc) {
    const int n = sc.n_parties();
    for (int k = 1; k <= n; ++k) {
      int d = 1;
      for (int x = 0; x < sc.n_inputs(k); ++x) d *= sc.n_outputs(k, x);
      d_in_.push_back(d);
      d_out_.push_back(sc.n_inputs(k));
    }
  }

  /// response digit: output prescribed by response vector `alpha` of party k
  /// (0-based index) for setting x.
  int digit(int k, int alpha, int x) const {
    int rest = alpha, d = 0;
    for (int xx = sc_.n_inputs(k + 1) - 1; xx >= 0; --xx) {
      int r = sc_.n_outputs(k + 1, xx);
      if (xx == x) d = rest % r;
      rest /= r;
    }
    return d;
  }

  /// Iterates over all (settings, responses) assignments; `weight(x, alpha)`
  /// returns the diagonal weight (x and alpha indexed per party, 0-based).
  template <typename F>
  ProcessMatrix build(F weight) const {
    const int n = sc_.n_parties();
    std::vector<Factor> fs;
    long dim = 1;
    for (int k = 0; k < n; ++k) {
      fs.push_back({SystemLabel::in(k + 1), d_in_[k]});
      fs.push_back({SystemLabel::out(k + 1), d_out_[k]});
      dim *= d_in_[k] * d_out_[k];
    }
    Matrix m = Matrix::Zero(dim, dim);
    std::vector<int> x(n, 0), alpha(n, 0);
    for (;;) {
      double v = weight(x, alpha);
      if (v != 0.0) {
        long idx = 0;
        for (int k = 0; k < n; ++k)
          idx = (idx * d_in_[k] + alpha[k]) * d_out_[k] + x[k];
        m(idx, idx) += v;
      }
      int k = n - 1;
      while (k >= 0) {
        if (++alpha[k] < d_in_[k]) break;
        alpha[k] = 0;
        if (++x[k] < d_out_[k]) break;
        x[k] = 0;
        --k;
      }
      if (k < 0) break;
    }
    std::vector<int> parties(n);
    for (int k = 0; k < n; ++k) parties[k] = k + 1;
    return ProcessMatrix(LabeledOperator(fs, m), parties);
  }

  const Scenario& sc_;
  std::vector<int> d_in_, d_out_;
};

}  // namespace detail

/// Builds a classically-controlled fixed-order-mixture circuit reproducing a
/// correlation in the fixed-order-mixture polytope, using the read-out
/// instruments of build_instruments("readout_classical", sc).
inline ProcessMatrix process_from_convfo_correlation(const Correlation& p) {
  auto res = membership(p, PolytopeTag::conv_fo);
  if (!res.member || !res.decomposition)
    throw NotConvFO("correlation is not a mixture of fixed-order strategies");
  const auto& dec = *res.decomposition;
  const Scenario& sc = p.scenario();
  detail::ScenarioIndex idx(sc);
  detail::ResponseProcessBuilder rb(sc);
  const double eps = 1e-12;

  // per-order sub-tables and masses
  const auto& orders = dec.orders;
  std::vector<double> q(orders.size());
  for (std::size_t oi = 0; oi < orders.size(); ++oi)
    q[oi] = dec.order_weight(0, static_cast<long>(oi));

  // prefix marginal of order oi: settings fixed on `fixed` parties (others
  // zero), outputs fixed per response digits on those parties
  auto prefix_marginal = [&](std::size_t oi, int depth,
                             const std::vector<int>& x,
                             const std::vector<int>& alpha) {
    std::vector<int> xt(sc.n_parties(), 0);
    for (int j = 0; j < depth; ++j) {
      int k = orders[oi][j];
      xt[k - 1] = x[k - 1];
    }
    long xi = sc.input_index(xt);
    double s = 0;
    for (std::size_t ai = 0; ai < idx.as[xi].size(); ++ai) {
      const auto& at = idx.as[xi][ai];
      bool match = true;
      for (int j = 0; j < depth && match; ++j) {
        int k = orders[oi][j];
        match = at[k - 1] == rb.digit(k - 1, alpha[k - 1], x[k - 1]);
      }
      if (match) s += dec.values[xi][oi][ai];
    }
    return s;
  };

  return rb.build([&](const std::vector<int>& x,
                      const std::vector<int>& alpha) {
    double total = 0;
    for (std::size_t oi = 0; oi < orders.size(); ++oi) {
      if (q[oi] <= eps) continue;
      double w = q[oi];
      for (int n = 1; n <= sc.n_parties() && w > 0; ++n) {
        int k = orders[oi][n - 1];
        // product over this party's settings of the conditional response
        // probabilities given the realized prefix
        double denom = prefix_marginal(oi, n - 1, x, alpha);
        for (int xk = 0; xk < sc.n_inputs(k); ++xk) {
          auto x2 = x;
          x2[k - 1] = xk;
          if (denom <= eps) {
            // unreachable history: deterministic filler response
            if (rb.digit(k - 1, alpha[k - 1], xk) != 0) w = 0;
            continue;
          }
          w *= prefix_marginal(oi, n, x2, alpha) / denom;
        }
      }
      total += w;
    }
    return total;
  });
}

/// Builds a classically-controlled circuit with adaptive order reproducing
/// any causal correlation, again under the read-out instruments.
inline ProcessMatrix process_from_causal_correlation(const Correlation& p) {
  auto res = membership(p, PolytopeTag::causal);
  if (!res.member || !res.decomposition)
    throw NotCausal("correlation is not causal");
  const auto& dec = *res.decomposition;
  const Scenario& sc = p.scenario();
  detail::ScenarioIndex idx(sc);
  detail::ResponseProcessBuilder rb(sc);
  const double eps = 1e-12;
  const auto& orders = dec.orders;

  // mass of the orders whose first |seq| entries equal seq, with settings
  // taken from x on seq (reference value 0 elsewhere) and the outputs of the
  // first `fixed` entries of seq pinned to their response digits
  auto seq_mass = [&](const std::vector<int>& seq, int fixed,
                      const std::vector<int>& x,
                      const std::vector<int>& alpha) {
    std::vector<int> xt(sc.n_parties(), 0);
    for (int k : seq) xt[k - 1] = x[k - 1];
    long xi = sc.input_index(xt);
    double s = 0;
    for (std::size_t oi = 0; oi < orders.size(); ++oi) {
      if (!std::equal(seq.begin(), seq.end(), orders[oi].begin())) continue;
      for (std::size_t ai = 0; ai < idx.as[xi].size(); ++ai) {
        const auto& at = idx.as[xi][ai];
        bool match = true;
        for (int j = 0; j < fixed && match; ++j) {
          int k = seq[j];
          match = at[k - 1] == rb.digit(k - 1, alpha[k - 1], xt[k - 1]);
        }
        if (match) s += dec.values[xi][oi][ai];
      }
    }
    return s;
  };

  return rb.build([&](const std::vector<int>& x,
                      const std::vector<int>& alpha) {
    double total = 0;
    for (std::size_t oi = 0; oi < orders.size(); ++oi) {
      double w = 1.0;
      double a_prev = 1.0;  // mass of the realized history so far
      std::vector<int> seq;
      for (int n = 0; n < sc.n_parties() && w > 0; ++n) {
        int k = orders[oi][n];
        seq.push_back(k);
        // probability that k acts next: mass of orders continuing with k,
        // at k's reference setting (independent of k's actual setting)
        auto x0 = x;
        x0[k - 1] = 0;
        double bn = seq_mass(seq, n, x0, alpha);
        if (bn <= eps || a_prev <= eps) {
          w = 0;  // (near-)unreachable branch carries no weight
          break;
        }
        w *= bn / a_prev;
        // response probabilities for each of this party's settings
        for (int xk = 0; xk < sc.n_inputs(k); ++xk) {
          auto x2 = x;
          x2[k - 1] = xk;
          w *= seq_mass(seq, n + 1, x2, alpha) / bn;
        }
        a_prev = seq_mass(seq, n + 1, x, alpha);
      }
      total += w;
    }
    return total;
  });
}

}  // namespace causalkit
