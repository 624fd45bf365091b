// SPDX-License-Identifier: MIT
//
// Membership in the circuit classes with classical or quantum control of
// causal order, decided by semidefinite feasibility programs and certified
// independently.
//
// Every class is characterized by the existence of PSD "branch" matrices
// tied together by linear constraints:
//
//   * cc      -- ordered prefixes (k_1,...,k_n), chained by
//                sum_{k_{n+1}} Tr_{A_{k_{n+1}}^I} W_(...,k_{n+1})
//                  = W_(k_1..k_n) (x) 1^{A_{k_n}^O},
//                bottoming out at sum_{k_1} Tr W_(k_1) = 1^P.
//   * conv_fo -- one chain per total order, with per-order weights q_pi.
//   * nicc    -- cc plus validity (up to normalization) of every branch.
//   * qc      -- unordered sets (K_{n-1}, k_n), with the link constraint
//                sum_{k_{n+1} notin K_n} Tr_{A_{k_{n+1}}^I} W_(K_n,k_{n+1})
//                  = sum_{k_n in K_n} W_(K_n\{k_n},k_n) (x) 1^{A_{k_n}^O}.
//   * sup_fo  -- qc-shaped links carrying a pinned future order and weights.
//   * niqc    -- qc plus validity of every branch.
//   * nio(n*) -- ordered prefixes below level n*, order-resolved branches at
//                level n* (each valid up to normalization), set-indexed
//                branches with pinned future order above.
//   * nio_hull-- convex hull over n* of the nio(n*) classes.
//
// The same symbolic structure drives three consumers: the conic program
// (build_membership_program), the solver front-end (check_membership), and
// an independent re-check of any certificate using only dense tensor
// algebra (verify_certificate).

#pragma once

#include <algorithm>
#include <functional>
#include <optional>
#include <sstream>

#include "causalkit/conic.hpp"
#include "causalkit/validity.hpp"

namespace causalkit {

struct UnsupportedScenario : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct KeyMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class ClassKind { conv_fo, cc, nicc, qc, sup_fo, niqc, nio, nio_hull };

struct ClassTag {
  ClassKind kind;
  int n_star = 0;  ///< only for ClassKind::nio

  static ClassTag conv_fo() { return {ClassKind::conv_fo}; }
  static ClassTag cc() { return {ClassKind::cc}; }
  static ClassTag nicc() { return {ClassKind::nicc}; }
  static ClassTag qc() { return {ClassKind::qc}; }
  static ClassTag sup_fo() { return {ClassKind::sup_fo}; }
  static ClassTag niqc() { return {ClassKind::niqc}; }
  static ClassTag nio(int n_star) { return {ClassKind::nio, n_star}; }
  static ClassTag nio_hull() { return {ClassKind::nio_hull}; }

  std::string str() const {
    switch (kind) {
      case ClassKind::conv_fo: return "qc-convfo";
      case ClassKind::cc: return "qc-cc";
      case ClassKind::nicc: return "qc-nicc";
      case ClassKind::qc: return "qc-qc";
      case ClassKind::sup_fo: return "qc-supfo";
      case ClassKind::niqc: return "qc-niqc";
      case ClassKind::nio: return "qc-nio:" + std::to_string(n_star);
      case ClassKind::nio_hull: return "qc-nio-hull";
    }
    return "?";
  }

  static ClassTag parse(const std::string& s) {
    if (s == "qc-convfo") return conv_fo();
    if (s == "qc-cc") return cc();
    if (s == "qc-nicc") return nicc();
    if (s == "qc-qc") return qc();
    if (s == "qc-supfo") return sup_fo();
    if (s == "qc-niqc") return niqc();
    if (s == "qc-nio-hull") return nio_hull();
    if (s.rfind("qc-nio:", 0) == 0) return nio(std::stoi(s.substr(7)));
    throw UnsupportedScenario("unknown class tag: " + s);
  }

  bool operator==(const ClassTag& o) const {
    return kind == o.kind && (kind != ClassKind::nio || n_star == o.n_star);
  }
};

struct ClassCertificate {
  ClassTag tag;
  int n_parties = 0;
  std::map<std::string, LabeledOperator> blocks;
  std::map<std::string, double> weights;
  std::map<std::string, double> residuals;

  nlohmann::json to_json() const {
    nlohmann::json jb = nlohmann::json::object();
    for (const auto& [k, v] : blocks) jb[k] = v.to_json();
    return {{"tag", tag.str()}, {"N", n_parties}, {"blocks", jb},
            {"weights", weights}, {"residuals", residuals}};
  }

  static ClassCertificate from_json(const nlohmann::json& j) {
    ClassCertificate c;
    c.tag = ClassTag::parse(j.at("tag").get<std::string>());
    c.n_parties = j.at("N").get<int>();
    for (auto it = j.at("blocks").begin(); it != j.at("blocks").end(); ++it)
      c.blocks.emplace(it.key(), LabeledOperator::from_json(it.value()));
    if (j.contains("weights"))
      c.weights = j.at("weights").get<std::map<std::string, double>>();
    if (j.contains("residuals"))
      c.residuals = j.at("residuals").get<std::map<std::string, double>>();
    return c;
  }
};

struct VerifyReport {
  bool ok = true;
  double worst_residual = 0.0;  ///< absolute Frobenius residual
  double threshold = 0.0;
  std::string failing_constraint;
  std::map<std::string, double> residuals;
};

struct MembershipResult {
  enum class Verdict { member, non_member, unknown };
  Verdict verdict = Verdict::unknown;
  double slack = 0.0;          ///< relative to |W|_F
  std::optional<ClassCertificate> certificate;
  /// Separating functional for non-members: value(V) = <witness, Tr_F V> +
  /// witness_offset is < 0 at the tested W and >= 0 (up to solver accuracy)
  /// on every member of the class.
  std::optional<LabeledOperator> witness;
  double witness_offset = 0.0;
  std::map<std::string, double> residuals;
};

/// Decision thresholds on the slack optimum, relative to |W|_F.
inline constexpr double kMemberTol = 1e-6;
inline constexpr double kNonMemberTol = 1e-4;

namespace detail {

inline std::vector<std::vector<int>> permutations_of(std::vector<int> v) {
  std::sort(v.begin(), v.end());
  std::vector<std::vector<int>> out;
  do out.push_back(v); while (std::next_permutation(v.begin(), v.end()));
  return out;
}

inline std::string join(const std::vector<int>& v, char sep) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i)
    s += (i ? std::string(1, sep) : "") + std::to_string(v[i]);
  return s;
}

/// Ordered-prefix key "k1.k2", with optional future order "k1.k2|k3.k4".
inline std::string okey(const std::vector<int>& pre, const std::vector<int>& fut = {}) {
  std::string s = join(pre, '.');
  if (!fut.empty()) s += "|" + join(fut, '.');
  return s;
}

/// Unordered-set key "{k1,k2}:k3", with optional future order "...|k4".
inline std::string ukey(std::vector<int> set, int head, const std::vector<int>& fut = {}) {
  std::sort(set.begin(), set.end());
  std::string s = "{" + join(set, ',') + "}:" + std::to_string(head);
  if (!fut.empty()) s += "|" + join(fut, '.');
  return s;
}

/// Symbolic description of one class's membership constraints.  Consumed by
/// both the conic-program builder and the tensor-algebra verifier.
struct ClassStructure {
  struct Block {
    std::string key;
    SpaceSpec space;
    std::vector<int> prefix;  ///< parties with full IO in the block
    int head = 0;             ///< party contributing only its input space
    bool is_top = false;      ///< full-space branch including F
    bool require_valid = false;
  };
  struct Term {
    std::string key;
    double coeff;
    std::vector<SystemLabel> trace_out;
  };
  struct WTerm {
    std::string key;  ///< scalar (weight or auxiliary) variable
    double coeff;
  };
  struct Eq {
    std::string name;
    SpaceSpec target;
    std::vector<Term> terms;
    std::vector<WTerm> weights;
    LabeledOperator rhs;
    bool in_verify = true;  ///< validity expansions are re-checked separately
  };

  std::vector<Block> blocks;
  std::vector<std::string> weight_keys;      ///< appear in certificates
  std::vector<std::string> aux_scalar_keys;  ///< internal (validity scales)
  std::vector<Eq> eqs;

  const Block& block(const std::string& key) const {
    for (const auto& b : blocks)
      if (b.key == key) return b;
    throw KeyMismatch("unknown block key: " + key);
  }
};

/// Builds the symbolic constraint structure for (w, tag).  An optional
/// order filter restricts the cc / nicc / conv_fo structures to branches
/// compatible with the given total orders; since absent branches can always
/// be taken as zero, the filtered structure describes a subset of the class
/// (used by the alternating optimizer to keep its subproblems small).
class StructureBuilder {
 public:
  StructureBuilder(const ProcessMatrix& w, ClassTag tag,
                   std::optional<std::vector<std::vector<int>>> orders =
                       std::nullopt)
      : w_(w), tag_(tag), order_filter_(std::move(orders)) {
    if (w.n_parties() > 6)
      throw UnsupportedScenario("membership supports at most 6 parties");
    parties_ = w.parties();
    f_trivial_ = !w.has_future() || w.d_future() == 1;
    trf_w_ = w.has_future()
                 ? partial_trace(w.op(), {SystemLabel::future()})
                 : w.op();
    if (order_filter_) {
      if (tag.kind != ClassKind::cc && tag.kind != ClassKind::nicc &&
          tag.kind != ClassKind::conv_fo)
        throw UnsupportedScenario(
            "order restriction applies to cc, nicc and conv_fo only");
      if (order_filter_->empty())
        throw UnsupportedScenario("order restriction must be nonempty");
      for (const auto& o : *order_filter_) {
        auto s = o;
        std::sort(s.begin(), s.end());
        if (s != parties_)
          throw UnsupportedScenario(
              "order restriction entries must permute the parties");
      }
    }
  }

  ClassStructure build() {
    switch (tag_.kind) {
      case ClassKind::cc: build_cc(false); break;
      case ClassKind::nicc: build_cc(true); break;
      case ClassKind::conv_fo: build_conv_fo(); break;
      case ClassKind::qc: build_qc(false); break;
      case ClassKind::niqc: build_qc(true); break;
      case ClassKind::sup_fo: build_nio(1, "", ""); finish_top(); break;
      case ClassKind::nio:
        if (tag_.n_star < 1 || tag_.n_star > static_cast<int>(parties_.size()))
          throw UnsupportedScenario("n* out of range");
        build_nio(tag_.n_star, "", "");
        finish_top();
        break;
      case ClassKind::nio_hull: build_nio_hull(); break;
    }
    return std::move(s_);
  }

 private:
  // ---- shared pieces -------------------------------------------------

  SpaceSpec block_space(const std::vector<int>& prefix, int head) const {
    std::vector<Factor> fs;
    if (w_.has_past())
      fs.push_back({SystemLabel::past(), w_.d_past()});
    for (int k : prefix) {
      fs.push_back({SystemLabel::in(k), w_.d_in(k)});
      fs.push_back({SystemLabel::out(k), w_.d_out(k)});
    }
    fs.push_back({SystemLabel::in(head), w_.d_in(head)});
    return SpaceSpec(fs);
  }

  SpaceSpec io_space(const std::vector<int>& parties, bool with_f = false) const {
    std::vector<Factor> fs;
    if (w_.has_past()) fs.push_back({SystemLabel::past(), w_.d_past()});
    for (int k : parties) {
      fs.push_back({SystemLabel::in(k), w_.d_in(k)});
      fs.push_back({SystemLabel::out(k), w_.d_out(k)});
    }
    if (with_f && w_.has_future())
      fs.push_back({SystemLabel::future(), w_.d_future()});
    return SpaceSpec(fs);
  }

  SpaceSpec past_space() const {
    std::vector<Factor> fs;
    if (w_.has_past()) fs.push_back({SystemLabel::past(), w_.d_past()});
    return SpaceSpec(fs);
  }

  void add_block(const std::string& key, const std::vector<int>& prefix,
                 int head, bool require_valid) {
    s_.blocks.push_back({key, block_space(prefix, head), prefix, head, false,
                         require_valid});
    if (require_valid) add_validity_eqs(s_.blocks.back());
  }

  /// Equality  sum terms + sum weight-terms * 1^target = rhs.
  void add_eq(std::string name, SpaceSpec target,
              std::vector<ClassStructure::Term> terms,
              std::vector<ClassStructure::WTerm> wterms,
              LabeledOperator rhs, bool in_verify = true) {
    s_.eqs.push_back({std::move(name), std::move(target), std::move(terms),
                      std::move(wterms), std::move(rhs), in_verify});
  }

  LabeledOperator zero_on(const SpaceSpec& sp) const {
    return LabeledOperator::zero(sp);
  }

  /// Linear encoding of "valid up to normalization" for one branch: the
  /// [1 - A_k^O] subset constraints (with the head input traced like a
  /// global future) plus proportionality of the past marginal to 1^P via an
  /// auxiliary nonnegative scale.
  void add_validity_eqs(const ClassStructure::Block& b) {
    const auto& K = b.prefix;
    const int m = static_cast<int>(K.size());
    for (unsigned mask = 1; mask < (1u << m); ++mask) {
      std::vector<int> S, comp;
      for (int i = 0; i < m; ++i)
        ((mask >> i) & 1u ? S : comp).push_back(K[i]);
      SpaceSpec target = io_space(S);
      std::vector<ClassStructure::Term> terms;
      const int ns = static_cast<int>(S.size());
      for (unsigned t = 0; t < (1u << ns); ++t) {
        double coeff = 1.0;
        std::vector<SystemLabel> tr;
        for (int k : comp) {
          tr.push_back(SystemLabel::in(k));
          tr.push_back(SystemLabel::out(k));
        }
        tr.push_back(SystemLabel::in(b.head));
        for (int i = 0; i < ns; ++i)
          if ((t >> i) & 1u) {
            tr.push_back(SystemLabel::out(S[i]));
            coeff *= -1.0 / w_.d_out(S[i]);
          }
        terms.push_back({b.key, coeff, std::move(tr)});
      }
      add_eq("valid:" + b.key + ":{" + join(S, ',') + "}", target,
             std::move(terms), {}, zero_on(target), /*in_verify=*/false);
    }
    if (w_.has_past() && w_.d_past() > 1) {
      std::string aux = "scale:" + b.key;
      s_.aux_scalar_keys.push_back(aux);
      std::vector<SystemLabel> tr;
      for (int k : K) {
        tr.push_back(SystemLabel::in(k));
        tr.push_back(SystemLabel::out(k));
      }
      tr.push_back(SystemLabel::in(b.head));
      SpaceSpec target = past_space();
      add_eq("valid_norm:" + b.key, target, {{b.key, 1.0, std::move(tr)}},
             {{aux, -1.0}}, zero_on(target), /*in_verify=*/false);
    }
  }

  std::vector<int> others(const std::vector<int>& used) const {
    std::vector<int> out;
    for (int k : parties_)
      if (std::find(used.begin(), used.end(), k) == used.end())
        out.push_back(k);
    return out;
  }

  bool prefix_allowed(const std::vector<int>& pre) const {
    if (!order_filter_) return true;
    for (const auto& o : *order_filter_)
      if (std::equal(pre.begin(), pre.end(), o.begin())) return true;
    return false;
  }

  std::vector<std::vector<int>> allowed_orders() const {
    return order_filter_ ? *order_filter_ : permutations_of(parties_);
  }

  std::vector<std::vector<int>> prefixes_of_length(int n) const {
    std::vector<std::vector<int>> out;
    std::vector<int> cur;
    build_prefixes(n, cur, out);
    if (order_filter_) {
      std::vector<std::vector<int>> kept;
      for (auto& p : out)
        if (prefix_allowed(p)) kept.push_back(std::move(p));
      out = std::move(kept);
    }
    return out;
  }
  void build_prefixes(int n, std::vector<int>& cur,
                      std::vector<std::vector<int>>& out) const {
    if (static_cast<int>(cur.size()) == n) {
      out.push_back(cur);
      return;
    }
    for (int k : others(cur)) {
      cur.push_back(k);
      build_prefixes(n, cur, out);
      cur.pop_back();
    }
  }

  std::vector<std::vector<int>> subsets_of_size(int n) const {
    std::vector<std::vector<int>> out;
    const int N = static_cast<int>(parties_.size());
    for (unsigned mask = 0; mask < (1u << N); ++mask) {
      if (static_cast<int>(__builtin_popcount(mask)) != n) continue;
      std::vector<int> s;
      for (int i = 0; i < N; ++i)
        if ((mask >> i) & 1u) s.push_back(parties_[i]);
      out.push_back(s);
    }
    return out;
  }

  // ---- cc / nicc -----------------------------------------------------

  void build_cc(bool validity) {
    const int N = static_cast<int>(parties_.size());
    for (int n = 1; n <= N; ++n)
      for (const auto& pre : prefixes_of_length(n)) {
        std::vector<int> K(pre.begin(), pre.end() - 1);
        add_block(okey(pre), K, pre.back(), validity);
      }
    add_cc_top([&](const std::vector<int>& pi) { return okey(pi); });
    for (int n = 1; n <= N - 1; ++n)
      for (const auto& pre : prefixes_of_length(n)) {
        SpaceSpec target = io_space(pre);
        std::vector<ClassStructure::Term> terms;
        for (int k : others(pre)) {
          auto ext = pre;
          ext.push_back(k);
          if (!prefix_allowed(ext)) continue;
          terms.push_back({okey(ext), 1.0, {SystemLabel::in(k)}});
        }
        terms.push_back({okey(pre), -1.0, {}});
        add_eq("chain:" + okey(pre), target, std::move(terms), {},
               zero_on(target));
      }
    add_bottom_identity([&](int k1) {
      if (!prefix_allowed({k1})) return std::vector<ClassStructure::Term>{};
      return std::vector<ClassStructure::Term>{
          {okey({k1}), 1.0, {SystemLabel::in(k1)}}};
    });
  }

  // ---- conv_fo -------------------------------------------------------

  void build_conv_fo() {
    const int N = static_cast<int>(parties_.size());
    for (const auto& pi : allowed_orders()) {
      for (int n = 1; n <= N; ++n) {
        std::vector<int> pre(pi.begin(), pi.begin() + n);
        std::vector<int> fut(pi.begin() + n, pi.end());
        std::vector<int> K(pre.begin(), pre.end() - 1);
        add_block(okey(pre, fut), K, pre.back(), false);
      }
      for (int n = 1; n <= N - 1; ++n) {
        std::vector<int> pre(pi.begin(), pi.begin() + n);
        std::vector<int> ext(pi.begin(), pi.begin() + n + 1);
        std::vector<int> fut_pre(pi.begin() + n, pi.end());
        std::vector<int> fut_ext(pi.begin() + n + 1, pi.end());
        SpaceSpec target = io_space(pre);
        add_eq("chain:" + okey(ext, fut_ext), target,
               {{okey(ext, fut_ext), 1.0, {SystemLabel::in(pi[n])}},
                {okey(pre, fut_pre), -1.0, {}}},
               {}, zero_on(target));
      }
      std::string q = "q:" + join(pi, '.');
      s_.weight_keys.push_back(q);
      std::vector<int> fut1(pi.begin() + 1, pi.end());
      SpaceSpec target = past_space();
      add_eq("weight:" + join(pi, '.'), target,
             {{okey({pi[0]}, fut1), 1.0, {SystemLabel::in(pi[0])}}},
             {{q, -1.0}}, zero_on(target));
    }
    add_cc_top([&](const std::vector<int>& pi) { return okey(pi); });
    add_weights_sum();
  }

  // ---- qc / niqc -----------------------------------------------------

  void build_qc(bool validity) {
    const int N = static_cast<int>(parties_.size());
    for (int n = 1; n <= N; ++n)
      for (const auto& K : subsets_of_size(n - 1))
        for (int k : others(K)) add_block(ukey(K, k), K, k, validity);

    {  // Tr_F W = sum_{k_N} W_(N\{k_N},k_N) (x) 1^{A_{k_N}^O}
      SpaceSpec target = io_space(parties_);
      std::vector<ClassStructure::Term> terms;
      for (int kN : parties_) terms.push_back({ukey(others({kN}), kN), 1.0, {}});
      add_eq("top", target, std::move(terms), {},
             LabeledOperator(target, trf_w_.matrix()));
    }
    for (int n = 1; n <= N - 1; ++n)
      for (const auto& Kn : subsets_of_size(n)) {
        SpaceSpec target = io_space(Kn);
        std::vector<ClassStructure::Term> terms;
        for (int k : others(Kn))
          terms.push_back({ukey(Kn, k), 1.0, {SystemLabel::in(k)}});
        for (int k : Kn) {
          std::vector<int> rest;
          for (int j : Kn)
            if (j != k) rest.push_back(j);
          terms.push_back({ukey(rest, k), -1.0, {}});
        }
        add_eq("link:{" + join(Kn, ',') + "}", target, std::move(terms), {},
               zero_on(target));
      }
    add_bottom_identity([&](int k1) {
      return std::vector<ClassStructure::Term>{
          {ukey({}, k1), 1.0, {SystemLabel::in(k1)}}};
    });
  }

  // ---- nio(n*) family (n*=1 is sup_fo) -------------------------------

  /// Emits blocks and all constraints except the top equality; top terms are
  /// collected in top_terms_ so the hull can merge several subprograms.
  void build_nio(int ns, const std::string& prefix_key,
                 const std::string& bottom_weight) {
    const int N = static_cast<int>(parties_.size());
    auto key_o = [&](const std::vector<int>& p, const std::vector<int>& f) {
      return prefix_key + okey(p, f);
    };
    auto key_u = [&](const std::vector<int>& K, int h, const std::vector<int>& f) {
      return prefix_key + ukey(K, h, f);
    };

    // ordered blocks below level n*
    for (int n = 1; n <= ns - 1; ++n)
      for (const auto& pre : prefixes_of_length(n)) {
        std::vector<int> K(pre.begin(), pre.end() - 1);
        add_block(key_o(pre, {}), K, pre.back(), false);
      }
    // order-resolved level-n* blocks, one per total order; each valid
    for (const auto& pi : permutations_of(parties_)) {
      std::vector<int> pre(pi.begin(), pi.begin() + ns);
      std::vector<int> fut(pi.begin() + ns, pi.end());
      std::vector<int> K(pre.begin(), pre.end() - 1);
      add_block(key_o(pre, fut), K, pre.back(), true);
    }
    // set-indexed blocks with pinned future above level n*
    for (int n = ns + 1; n <= N; ++n)
      for (const auto& K : subsets_of_size(n - 1))
        for (const auto& tail : permutations_of(others(K)))
          add_block(key_u(K, tail[0], {tail.begin() + 1, tail.end()}), K,
                    tail[0], false);

    // aggregate of the branches representing (K_{n-1}, head)^{fut}
    auto agg = [&](const std::vector<int>& K, int head,
                   const std::vector<int>& fut, double coeff) {
      std::vector<ClassStructure::Term> terms;
      if (static_cast<int>(K.size()) + 1 > ns) {
        terms.push_back({key_u(K, head, fut), coeff, {}});
      } else {  // |K| + 1 == ns: sum over past orderings
        for (const auto& perm : permutations_of(K)) {
          auto pre = perm;
          pre.push_back(head);
          terms.push_back({key_o(pre, fut), coeff, {}});
        }
      }
      return terms;
    };

    // top terms: Tr_F W = sum_{k_N} (N\{k_N}, k_N)^{()} (x) 1
    for (int kN : parties_)
      for (auto& t : agg(others({kN}), kN, {}, 1.0)) top_terms_.push_back(t);

    // links for n = n*..N-1
    for (int n = ns; n <= N - 1; ++n)
      for (const auto& Kn : subsets_of_size(n))
        for (const auto& tail : permutations_of(others(Kn))) {
          SpaceSpec target = io_space(Kn);
          std::vector<ClassStructure::Term> terms;
          terms.push_back({key_u(Kn, tail[0], {tail.begin() + 1, tail.end()}),
                           1.0, {SystemLabel::in(tail[0])}});
          for (int k : Kn) {
            std::vector<int> rest;
            for (int j : Kn)
              if (j != k) rest.push_back(j);
            for (auto& t : agg(rest, k, tail, -1.0)) terms.push_back(t);
          }
          add_eq("link:" + prefix_key + "{" + join(Kn, ',') + "}|" +
                     join(tail, '.'),
                 target, std::move(terms), {}, zero_on(target));
        }

    // ordered chains for n = 1..n*-1
    for (int n = 1; n <= ns - 1; ++n)
      for (const auto& pre : prefixes_of_length(n)) {
        SpaceSpec target = io_space(pre);
        std::vector<ClassStructure::Term> terms;
        for (int k : others(pre)) {
          auto ext = pre;
          ext.push_back(k);
          if (n + 1 < ns) {
            terms.push_back({key_o(ext, {}), 1.0, {SystemLabel::in(k)}});
          } else {
            for (const auto& fut : permutations_of(others(ext)))
              terms.push_back({key_o(ext, fut), 1.0, {SystemLabel::in(k)}});
          }
        }
        terms.push_back({key_o(pre, {}), -1.0, {}});
        add_eq("chain:" + prefix_key + okey(pre), target, std::move(terms), {},
               zero_on(target));
      }

    // bottom: sum_{k_1} Tr_{A_{k_1}^I} (level-1 aggregate) = 1^P (or a hull
    // weight times 1^P)
    {
      SpaceSpec target = past_space();
      std::vector<ClassStructure::Term> terms;
      for (int k1 : parties_) {
        if (ns == 1) {
          for (const auto& fut : permutations_of(others({k1})))
            terms.push_back({key_o({k1}, fut), 1.0, {SystemLabel::in(k1)}});
        } else {
          terms.push_back({key_o({k1}, {}), 1.0, {SystemLabel::in(k1)}});
        }
      }
      if (bottom_weight.empty()) {
        add_eq("bottom" + (prefix_key.empty() ? "" : ":" + prefix_key), target,
               std::move(terms), {}, LabeledOperator::identity(target));
      } else {
        add_eq("bottom:" + prefix_key, target, std::move(terms),
               {{bottom_weight, -1.0}}, zero_on(target));
      }
    }

    // weights for n* = 1: validity of the level-1 branches pins per-order
    // scales q_pi = Tr_{A_{k_1}^I} W / 1^P; expose them as certificate
    // weights so sup_fo certificates carry the mixture explicitly.
    if (ns == 1 && bottom_weight.empty()) {
      for (const auto& pi : permutations_of(parties_)) {
        std::string q = prefix_key + "q:" + join(pi, '.');
        s_.weight_keys.push_back(q);
        std::vector<int> fut(pi.begin() + 1, pi.end());
        SpaceSpec target = past_space();
        add_eq("weight:" + prefix_key + join(pi, '.'), target,
               {{key_o({pi[0]}, fut), 1.0, {SystemLabel::in(pi[0])}}},
               {{q, -1.0}}, zero_on(target));
      }
      add_weights_sum();
    }
  }

  void build_nio_hull() {
    const int N = static_cast<int>(parties_.size());
    for (int ns = 1; ns <= N; ++ns) {
      std::string lam = "lambda:" + std::to_string(ns);
      s_.weight_keys.push_back(lam);
      build_nio(ns, "n" + std::to_string(ns) + "/", lam);
    }
    add_weights_sum();
    finish_top();
  }

  void finish_top() {
    SpaceSpec target = io_space(parties_);
    add_eq("top", target, std::move(top_terms_), {},
           LabeledOperator(target, trf_w_.matrix()));
    top_terms_.clear();
  }

  // ---- top / bottom helpers ------------------------------------------

  /// Top equalities of the cc family: with a nontrivial F, per-order
  /// full-space branches summing to W; otherwise the traced form directly.
  void add_cc_top(const std::function<std::string(const std::vector<int>&)>& leaf) {
    if (f_trivial_) {
      SpaceSpec target = io_space(parties_);
      std::vector<ClassStructure::Term> terms;
      for (const auto& pi : allowed_orders())
        terms.push_back({leaf(pi), 1.0, {}});
      add_eq("top", target, std::move(terms), {},
             LabeledOperator(target, trf_w_.matrix()));
      return;
    }
    SpaceSpec full = io_space(parties_, /*with_f=*/true);
    std::vector<ClassStructure::Term> sum_terms;
    for (const auto& pi : allowed_orders()) {
      std::string fkey = okey(pi) + ".F";
      s_.blocks.push_back({fkey, full, parties_, 0, true, false});
      sum_terms.push_back({fkey, 1.0, {}});
      SpaceSpec target = io_space(parties_);
      add_eq("topF:" + okey(pi), target,
             {{fkey, 1.0, {SystemLabel::future()}}, {leaf(pi), -1.0, {}}}, {},
             zero_on(target));
    }
    add_eq("sum", full, std::move(sum_terms), {},
           LabeledOperator(full, w_.op().matrix()));
  }

  void add_bottom_identity(
      const std::function<std::vector<ClassStructure::Term>(int)>& per_k1) {
    SpaceSpec target = past_space();
    std::vector<ClassStructure::Term> terms;
    for (int k1 : parties_)
      for (auto& t : per_k1(k1)) terms.push_back(t);
    add_eq("bottom", target, std::move(terms), {},
           LabeledOperator::identity(target));
  }

  void add_weights_sum() {
    SpaceSpec target;  // scalar
    std::vector<ClassStructure::WTerm> wt;
    for (const auto& q : s_.weight_keys) wt.push_back({q, 1.0});
    add_eq("weights_sum", target, {}, std::move(wt),
           LabeledOperator(target, Matrix::Constant(1, 1, 1.0)));
  }

  const ProcessMatrix& w_;
  ClassTag tag_;
  std::optional<std::vector<std::vector<int>>> order_filter_;
  std::vector<int> parties_;
  bool f_trivial_ = true;
  LabeledOperator trf_w_;
  ClassStructure s_;
  std::vector<ClassStructure::Term> top_terms_;
};

/// Pads an operator with identity factors up to `target`.
inline LabeledOperator pad_to(LabeledOperator o, const SpaceSpec& target) {
  std::vector<Factor> missing;
  for (const auto& f : target.factors())
    if (!o.spec().contains(f.label)) missing.push_back(f);
  if (!missing.empty())
    o = tensor(o, LabeledOperator::identity(SpaceSpec(missing)));
  if (!(o.spec() == target))
    throw KeyMismatch("constraint term does not land on its target space");
  return o;
}

/// Renames the head party's input factor to the global future so a branch
/// can be validity-checked as a process on its prefix parties.
inline LabeledOperator head_as_future(const LabeledOperator& o, int head) {
  std::vector<Factor> fs = o.spec().factors();
  for (auto& f : fs)
    if (f.label == SystemLabel::in(head)) f.label = SystemLabel::future();
  return LabeledOperator(fs, o.matrix());
}

}  // namespace detail

/// Conic feasibility program whose variables are exactly the class's
/// branches (plus class weights and internal scale variables).
inline ConicProgram build_membership_program(const ProcessMatrix& w,
                                             ClassTag tag) {
  auto st = detail::StructureBuilder(w, tag).build();
  ConicProgram prog;
  std::map<std::string, int> vars;
  for (const auto& b : st.blocks)
    vars[b.key] = prog.add_psd_variable(b.key, b.space);
  for (const auto& q : st.weight_keys)
    vars[q] = prog.add_scalar_variable(q, /*nonneg=*/true);
  for (const auto& a : st.aux_scalar_keys)
    vars[a] = prog.add_scalar_variable(a, /*nonneg=*/true);
  for (const auto& e : st.eqs) {
    std::vector<OpTerm> ops;
    for (const auto& t : e.terms)
      ops.push_back({vars.at(t.key), t.coeff, t.trace_out});
    std::vector<ScalarOpTerm> sc;
    for (const auto& wt : e.weights)
      sc.push_back({vars.at(wt.key),
                    LabeledOperator::identity(e.target).scaled(wt.coeff)});
    prog.add_equality(e.name, std::move(ops), std::move(sc), e.rhs);
  }
  return prog;
}

/// Independent re-check of a certificate: every constraint is re-evaluated
/// with dense tensor algebra, branch PSD-ness is checked spectrally, and
/// branches that the class requires to be valid processes go through
/// is_valid_process.  Passes iff the worst absolute residual stays below
/// 1e-6 |W|_F.
inline VerifyReport verify_certificate(const ProcessMatrix& w,
                                       const ClassCertificate& cert) {
  auto st = detail::StructureBuilder(w, cert.tag).build();
  VerifyReport rep;
  double wnorm = w.op().frobenius_norm();
  rep.threshold = 1e-6 * (wnorm > 0 ? wnorm : 1.0);

  // exact key matching
  if (cert.blocks.size() != st.blocks.size())
    throw KeyMismatch("certificate has " + std::to_string(cert.blocks.size()) +
                      " blocks, class structure has " +
                      std::to_string(st.blocks.size()));
  for (const auto& b : st.blocks)
    if (!cert.blocks.count(b.key))
      throw KeyMismatch("certificate missing block " + b.key);
  for (const auto& q : st.weight_keys)
    if (!cert.weights.count(q))
      throw KeyMismatch("certificate missing weight " + q);

  auto record = [&](const std::string& name, double res) {
    rep.residuals[name] = res;
    if (res > rep.worst_residual) rep.worst_residual = res;
    if (res > rep.threshold && rep.failing_constraint.empty()) {
      rep.ok = false;
      rep.failing_constraint = name;
    }
  };

  for (const auto& b : st.blocks) {
    const auto& op = cert.blocks.at(b.key);
    if (!(op.spec() == b.space))
      throw KeyMismatch("block " + b.key + " lives on the wrong space");
    Eigen::SelfAdjointEigenSolver<Matrix> es(op.symmetrized().matrix(),
                                             Eigen::EigenvaluesOnly);
    record("psd:" + b.key, std::max(0.0, -es.eigenvalues().minCoeff()));
    if (b.require_valid) {
      auto as_proc = detail::head_as_future(op, b.head);
      ProcessMatrix pm(as_proc, b.prefix);
      auto v = is_valid_process(pm, ValidityMode::up_to_normalization,
                                /*tol=*/1e300);
      record("valid:" + b.key, v.worst_residual * op.frobenius_norm());
    }
  }
  for (const auto& q : st.weight_keys)
    record("nonneg:" + q, std::max(0.0, -cert.weights.at(q)));

  for (const auto& e : st.eqs) {
    if (!e.in_verify) continue;
    LabeledOperator acc = LabeledOperator::zero(e.target);
    for (const auto& t : e.terms) {
      LabeledOperator v = cert.blocks.at(t.key);
      if (!t.trace_out.empty()) v = partial_trace(v, t.trace_out);
      acc += detail::pad_to(v.scaled(t.coeff), e.target);
    }
    for (const auto& wt : e.weights)
      acc += LabeledOperator::identity(e.target)
                 .scaled(wt.coeff * cert.weights.at(wt.key));
    record(e.name, (acc - e.rhs).frobenius_norm());
  }
  return rep;
}

struct MembershipOptions {
  double eps = 1e-8;        ///< accuracy of the deciding (second-phase) solve
  double eps_screen = 1e-5; ///< accuracy of the first-phase screening solve
  long max_iters = 200000;
  bool verbose = false;
};

/// Decides membership of w in the class `tag` by slack minimization over the
/// class's feasibility program, with the solution re-verified independently
/// and a separating functional extracted from the duals for non-members.
inline MembershipResult check_membership(const ProcessMatrix& w, ClassTag tag,
                                         const MembershipOptions& mo = {}) {
  auto st = detail::StructureBuilder(w, tag).build();
  auto prog = build_membership_program(w, tag);
  double wnorm_pre = w.op().frobenius_norm();
  double scale_pre = wnorm_pre > 0 ? wnorm_pre : 1.0;

  // Screening solve at moderate accuracy: the projection polish recovers
  // essentially exact feasible points for members, and non-members sit far
  // beyond the decision threshold, so the expensive high-accuracy solve is
  // needed only for genuinely borderline slacks.
  SolveOptions so;
  so.eps = mo.eps_screen;
  so.max_iters = mo.max_iters;
  so.verbose = mo.verbose;
  auto out = prog.solve(so);
  if (!out.ok() && out.status != SolveOutcome::Status::Infeasible)
    throw SolverFailure("membership solve failed for " + tag.str());
  double rel = out.slack / scale_pre;
  if (rel >= kMemberTol && rel <= 10 * kNonMemberTol) {
    SolveOptions so2 = so;
    so2.eps = mo.eps;
    so2.warm_x = &out.raw_x;
    so2.warm_y = &out.raw_y;
    so2.warm_s = &out.raw_s;
    auto out2 = prog.solve(so2);
    if (out2.ok() || out2.status == SolveOutcome::Status::Infeasible)
      out = std::move(out2);
  }

  MembershipResult res;
  double wnorm = w.op().frobenius_norm();
  double scale = wnorm > 0 ? wnorm : 1.0;
  res.slack = out.slack / scale;
  res.residuals = out.block_residuals;

  if (res.slack < kMemberTol) {
    ClassCertificate cert;
    cert.tag = tag;
    cert.n_parties = w.n_parties();
    int vi = 0;
    for (const auto& b : st.blocks)
      cert.blocks.emplace(b.key, prog.value_of(out, vi++));
    for (const auto& q : st.weight_keys)
      cert.weights[q] = prog.scalar_value_of(out, vi++);
    auto rep = verify_certificate(w, cert);
    cert.residuals = rep.residuals;
    if (rep.ok) {
      res.verdict = MembershipResult::Verdict::member;
      res.certificate = std::move(cert);
    } else {
      res.verdict = MembershipResult::Verdict::unknown;
    }
    return res;
  }

  if (res.slack > kNonMemberTol) {
    res.verdict = MembershipResult::Verdict::non_member;
    // Separating functional from the equality duals: for the optimal dual y
    // of min t s.t. ||A x - b(V)|| <= t, x conic,  phi(V) = <y, b(V)> equals
    // -t* < 0 at V = w and is >= 0 (to solver accuracy) for class members.
    double nrm = 0.0;
    for (long i = 0; i < out.y_eq.size(); ++i) nrm += out.y_eq(i) * out.y_eq(i);
    if (nrm > 0) {
      double offset = 0.0;
      std::optional<LabeledOperator> wit;
      for (const auto& e : st.eqs) {
        auto d = prog.dual_of(out, e.name);
        bool w_dep = (e.name == "top" || e.name == "sum");
        if (w_dep) {
          wit = d.symmetrized();
        } else {
          offset += d.matrix()
                        .cwiseProduct(e.rhs.matrix().conjugate())
                        .sum()
                        .real();
        }
      }
      res.witness = wit;
      res.witness_offset = offset;
    }
  } else {
    res.verdict = MembershipResult::Verdict::unknown;
  }
  return res;
}

}  // namespace causalkit
