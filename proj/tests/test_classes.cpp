// SPDX-License-Identifier: MIT
//
// Circuit-class membership: program shapes, solver verdicts on hand-built
// fixtures with known placements, certificate verification, and the
// low-party class collapses.

#include <catch2/catch_amalgamated.hpp>
#include <unsupported/Eigen/KroneckerProduct>

#include "causalkit/classes.hpp"

using namespace causalkit;

namespace {

Matrix pauli(char p) {
  Matrix m(2, 2);
  switch (p) {
    case 'I': m << 1, 0, 0, 1; break;
    case 'X': m << 0, 1, 1, 0; break;
    case 'Y': m << 0, Complex(0, -1), Complex(0, 1), 0; break;
    default:  m << 1, 0, 0, -1; break;  // Z
  }
  return m;
}

LabeledOperator proj(const SystemLabel& l, int v) {
  Matrix m = Matrix::Zero(2, 2);
  m(v, v) = 1.0;
  return LabeledOperator(SpaceSpec({{l, 2}}), m);
}

/// Fixed-order two-party process: party `a` acts before party `b`, the
/// identity channel connecting them, |+><+| fed into `a`.
ProcessMatrix chain2(int a, int b) {
  Matrix plus(2, 2);
  plus << 0.5, 0.5, 0.5, 0.5;
  auto w = tensor(LabeledOperator(SpaceSpec({{SystemLabel::in(a), 2}}), plus),
                  max_entangled(SystemLabel::out(a), SystemLabel::in(b), 2));
  w = tensor_identity(w, SystemLabel::out(b), 2);
  return ProcessMatrix(w, {1, 2});
}

/// W = (1/4)(1 + a(ZZZ1 + Z1XX)) on A^I A^O B^I B^O: a two-party process
/// that is not causally separable for a = 1/sqrt(2).
ProcessMatrix w_plus_alpha(double a) {
  auto kron4 = [](char p, char q, char r, char s) {
    Matrix m = Eigen::kroneckerProduct(
                   Eigen::kroneckerProduct(pauli(p), pauli(q)).eval(),
                   Eigen::kroneckerProduct(pauli(r), pauli(s)).eval())
                   .eval();
    return m;
  };
  Matrix m = 0.25 * (kron4('I', 'I', 'I', 'I') + a * kron4('Z', 'Z', 'Z', 'I') +
                     a * kron4('Z', 'I', 'X', 'X'));
  std::vector<Factor> fs = {{SystemLabel::in(1), 2}, {SystemLabel::out(1), 2},
                            {SystemLabel::in(2), 2}, {SystemLabel::out(2), 2}};
  return ProcessMatrix(LabeledOperator(fs, m), {1, 2});
}

/// Three-party process with classically controlled order: party 1 acts
/// first and its output qubit decides whether party 2 or party 3 acts next.
ProcessMatrix dynamical3() {
  Matrix plus(2, 2);
  plus << 0.5, 0.5, 0.5, 0.5;
  auto rho1 = LabeledOperator(SpaceSpec({{SystemLabel::in(1), 2}}), plus);
  auto chain = [&](int a, int b) {
    auto w = tensor(LabeledOperator(SpaceSpec({{SystemLabel::in(a), 2}}), plus),
                    max_entangled(SystemLabel::out(a), SystemLabel::in(b), 2));
    return tensor_identity(w, SystemLabel::out(b), 2);
  };
  auto w = tensor(rho1, tensor(proj(SystemLabel::out(1), 0), chain(2, 3))) +
           tensor(rho1, tensor(proj(SystemLabel::out(1), 1), chain(3, 2)));
  return ProcessMatrix(w, {1, 2, 3});
}

MembershipResult::Verdict verdict(const ProcessMatrix& w, ClassTag tag) {
  auto r = check_membership(w, tag);
  INFO(tag.str() << ": slack " << r.slack);
  return r.verdict;
}

double witness_value(const MembershipResult& r, const ProcessMatrix& v) {
  REQUIRE(r.witness.has_value());
  LabeledOperator arg = v.op();
  if (v.has_future()) arg = partial_trace(arg, {SystemLabel::future()});
  double ip =
      arg.matrix().cwiseProduct(r.witness->matrix().conjugate()).sum().real();
  return ip + r.witness_offset;
}

}  // namespace

TEST_CASE("class tags parse and print") {
  for (auto t : {ClassTag::conv_fo(), ClassTag::cc(), ClassTag::nicc(),
                 ClassTag::qc(), ClassTag::sup_fo(), ClassTag::niqc(),
                 ClassTag::nio(2), ClassTag::nio_hull()})
    CHECK(ClassTag::parse(t.str()) == t);
  CHECK_THROWS_AS(ClassTag::parse("bogus"), UnsupportedScenario);
}

TEST_CASE("program shapes match the class decompositions") {
  auto w2 = chain2(1, 2);

  SECTION("bipartite conv-fo: 2 top + 2 one-party blocks + 2 weights") {
    auto prog = build_membership_program(w2, ClassTag::conv_fo());
    int psd = 0, scal = 0;
    for (int i = 0; i < prog.n_variables(); ++i)
      (prog.variable(i).kind == VarKind::PSDHermitian ? psd : scal)++;
    CHECK(psd == 4);
    CHECK(scal == 2);
  }

  SECTION("tripartite qc: 3 + 6 + 3 = 12 blocks") {
    auto prog = build_membership_program(dynamical3(), ClassTag::qc());
    int psd = 0;
    for (int i = 0; i < prog.n_variables(); ++i)
      if (prog.variable(i).kind == VarKind::PSDHermitian) psd++;
    CHECK(psd == 12);
  }

  SECTION("more than six parties is rejected") {
    std::vector<Factor> fs;
    std::vector<int> parties;
    for (int k = 1; k <= 7; ++k) {
      fs.push_back({SystemLabel::in(k), 1});
      fs.push_back({SystemLabel::out(k), 1});
      parties.push_back(k);
    }
    ProcessMatrix w(LabeledOperator(fs, Matrix::Constant(1, 1, 1.0)), parties);
    CHECK_THROWS_AS(build_membership_program(w, ClassTag::cc()),
                    UnsupportedScenario);
  }
}

TEST_CASE("a fixed-order circuit belongs to every class") {
  auto w = chain2(1, 2);
  REQUIRE(is_valid_process(w, ValidityMode::normalized).ok);
  for (auto tag : {ClassTag::conv_fo(), ClassTag::cc(), ClassTag::nicc(),
                   ClassTag::qc(), ClassTag::sup_fo(), ClassTag::niqc(),
                   ClassTag::nio(1), ClassTag::nio(2), ClassTag::nio_hull()}) {
    auto r = check_membership(w, tag);
    INFO(tag.str() << ": slack " << r.slack);
    CHECK(r.verdict == MembershipResult::Verdict::member);
    REQUIRE(r.certificate.has_value());
    CHECK(verify_certificate(w, *r.certificate).ok);
  }
}

TEST_CASE("a mixture of both orders is conv-fo with sensible weights") {
  auto wa = chain2(1, 2).op(), wb = chain2(2, 1).op();
  ProcessMatrix w(wa.scaled(0.5) + wb.scaled(0.5), {1, 2});
  REQUIRE(is_valid_process(w, ValidityMode::normalized).ok);
  auto r = check_membership(w, ClassTag::conv_fo());
  REQUIRE(r.verdict == MembershipResult::Verdict::member);
  double total = 0;
  for (const auto& [k, q] : r.certificate->weights) {
    CHECK(q >= -1e-7);
    total += q;
  }
  CHECK_THAT(total, Catch::Matchers::WithinAbs(1.0, 1e-6));
  // the N <= 3 collapses: nicc coincides with conv-fo, niqc with sup-fo
  CHECK(verdict(w, ClassTag::nicc()) == MembershipResult::Verdict::member);
  CHECK(verdict(w, ClassTag::niqc()) == MembershipResult::Verdict::member);
}

TEST_CASE("a causally nonseparable process is rejected with a witness") {
  auto w = w_plus_alpha(1.0 / std::sqrt(2.0));
  REQUIRE(is_valid_process(w, ValidityMode::normalized).ok);
  auto r = check_membership(w, ClassTag::qc());
  REQUIRE(r.verdict == MembershipResult::Verdict::non_member);
  CHECK(r.slack > kNonMemberTol);
  // the separating functional is negative at w, nonnegative on members
  CHECK(witness_value(r, w) < 0.0);
  CHECK(witness_value(r, chain2(1, 2)) > -1e-5);
  CHECK(witness_value(r, chain2(2, 1)) > -1e-5);
  // the smaller classes reject it as well
  CHECK(verdict(w, ClassTag::cc()) == MembershipResult::Verdict::non_member);
  CHECK(verdict(w, ClassTag::conv_fo()) ==
        MembershipResult::Verdict::non_member);
}

TEST_CASE("classically controlled order separates the class hierarchy") {
  auto w = dynamical3();
  REQUIRE(is_valid_process(w, ValidityMode::normalized).ok);
  // dynamical classical control: inside cc (and everything above it) ...
  CHECK(verdict(w, ClassTag::cc()) == MembershipResult::Verdict::member);
  CHECK(verdict(w, ClassTag::qc()) == MembershipResult::Verdict::member);
  // ... but the order is influenced by party 1, so every class whose order
  // must be non-influenceable rejects it
  CHECK(verdict(w, ClassTag::conv_fo()) ==
        MembershipResult::Verdict::non_member);
  CHECK(verdict(w, ClassTag::nicc()) == MembershipResult::Verdict::non_member);
  CHECK(verdict(w, ClassTag::sup_fo()) ==
        MembershipResult::Verdict::non_member);
  CHECK(verdict(w, ClassTag::niqc()) == MembershipResult::Verdict::non_member);
  CHECK(verdict(w, ClassTag::nio(2)) == MembershipResult::Verdict::non_member);
  CHECK(verdict(w, ClassTag::nio(3)) == MembershipResult::Verdict::non_member);
  CHECK(verdict(w, ClassTag::nio_hull()) ==
        MembershipResult::Verdict::non_member);
}

TEST_CASE("a tripartite fixed-order chain sits in every interpolating class") {
  // identity channels 1 -> 2 -> 3
  Matrix plus(2, 2);
  plus << 0.5, 0.5, 0.5, 0.5;
  auto w0 = tensor(LabeledOperator(SpaceSpec({{SystemLabel::in(1), 2}}), plus),
                   max_entangled(SystemLabel::out(1), SystemLabel::in(2), 2));
  w0 = tensor(w0, max_entangled(SystemLabel::out(2), SystemLabel::in(3), 2));
  w0 = tensor_identity(w0, SystemLabel::out(3), 2);
  ProcessMatrix w(w0, {1, 2, 3});
  REQUIRE(is_valid_process(w, ValidityMode::normalized).ok);
  for (auto tag : {ClassTag::nio(1), ClassTag::nio(2), ClassTag::nio(3),
                   ClassTag::nio_hull()})
    CHECK(verdict(w, tag) == MembershipResult::Verdict::member);
}

TEST_CASE("certificates are verified independently") {
  auto w = chain2(1, 2);
  auto r = check_membership(w, ClassTag::nicc());
  REQUIRE(r.verdict == MembershipResult::Verdict::member);
  auto cert = *r.certificate;

  SECTION("accepted nicc branches are valid processes up to normalization") {
    // every branch, relabeling the head input as a global future
    int checked = 0;
    for (const auto& [key, op] : cert.blocks) {
      auto pos = key.find_last_of('.');
      int head;
      std::vector<int> prefix;
      if (pos == std::string::npos) {
        head = std::stoi(key);
      } else {
        head = std::stoi(key.substr(pos + 1));
        for (std::size_t i = 0; i < pos; i += 2)
          prefix.push_back(key[i] - '0');
      }
      ProcessMatrix b(detail::head_as_future(op, head), prefix);
      CHECK(is_valid_process(b, ValidityMode::up_to_normalization, 1e-5).ok);
      ++checked;
    }
    CHECK(checked == 4);
  }

  SECTION("round-trips through json") {
    auto back = ClassCertificate::from_json(cert.to_json());
    CHECK(back.tag == cert.tag);
    CHECK(verify_certificate(w, back).ok);
  }

  SECTION("a perturbed block fails verification with matching residual") {
    auto bad = cert;
    auto it = bad.blocks.find("1.2");
    REQUIRE(it != bad.blocks.end());
    Matrix m = it->second.matrix();
    m(0, 0) += 1e-3;
    it->second = LabeledOperator(it->second.spec(), m);
    auto rep = verify_certificate(w, bad);
    CHECK_FALSE(rep.ok);
    CHECK(rep.worst_residual == Catch::Approx(1e-3).epsilon(0.5));
  }

  SECTION("missing blocks raise a key mismatch") {
    auto bad = cert;
    bad.blocks.erase("1.2");
    CHECK_THROWS_AS(verify_certificate(w, bad), KeyMismatch);
  }
}
