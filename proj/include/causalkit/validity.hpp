// SPDX-License-Identifier: MIT
//
// Process-matrix validity.
//
// A process matrix W on P (x) A_1^{IO} ... A_N^{IO} (x) F is characterized by
// positive semidefiniteness together with one linear constraint per nonempty
// subset K of parties:
//
//   _{prod_{k in K} [1 - A_k^O]}  Tr_{A_{N\K}^{IO} F}  W  =  0,
//
// where  _{[1-A_k^O]} W := W - (Tr_{A_k^O} W) (x) 1^{A_k^O} / d_k^O,
//
// plus the normalization Tr_{A^{IO} F} W = (prod_k d_k^O) 1^P.  The
// "up to normalization" variant keeps the subset constraints but only
// requires Tr_{A^{IO} F} W to be proportional to 1^P with a nonnegative
// factor (the zero matrix qualifies).  Operationally, a matrix valid up to
// normalization returns the same total weight for every tuple of
// trace-preserving instruments.

#pragma once

#include <optional>
#include <string>

#include "causalkit/ops.hpp"

namespace causalkit {

/// Default relative tolerance for validity residuals (normalized by |W|_F).
inline constexpr double kValidityTol = 1e-7;

enum class ValidityMode { normalized, up_to_normalization };

struct ValidityReport {
  bool ok = true;
  double worst_residual = 0.0;       ///< relative to |W|_F
  std::string failing_constraint;    ///< empty when ok
};

/// A Hermitian operator on a process space with explicit party bookkeeping.
class ProcessMatrix {
 public:
  /// Builds from an operator whose spec must consist of PartyIn/PartyOut pairs
  /// for each party in `parties`, optionally GlobalPast and GlobalFuture.
  /// The matrix is symmetrized (Hermiticity is a boundary contract).
  ProcessMatrix(LabeledOperator op, std::vector<int> parties)
      : op_(op.symmetrized()), parties_(std::move(parties)) {
    const SpaceSpec& s = op_.spec();
    std::size_t expected = 0;
    for (int k : parties_) {
      if (!s.contains(SystemLabel::in(k)) || !s.contains(SystemLabel::out(k)))
        throw LabelError("process spec missing party " + std::to_string(k));
      expected += 2;
    }
    has_past_ = s.contains(SystemLabel::past());
    has_future_ = s.contains(SystemLabel::future());
    expected += (has_past_ ? 1 : 0) + (has_future_ ? 1 : 0);
    if (expected != s.size())
      throw LabelError("process spec contains unexpected factors");
  }

  const LabeledOperator& op() const { return op_; }
  const std::vector<int>& parties() const { return parties_; }
  int n_parties() const { return static_cast<int>(parties_.size()); }
  bool has_past() const { return has_past_; }
  bool has_future() const { return has_future_; }

  int d_in(int k) const { return op_.spec().dim_of(SystemLabel::in(k)); }
  int d_out(int k) const { return op_.spec().dim_of(SystemLabel::out(k)); }
  int d_past() const {
    return has_past_ ? op_.spec().dim_of(SystemLabel::past()) : 1;
  }
  int d_future() const {
    return has_future_ ? op_.spec().dim_of(SystemLabel::future()) : 1;
  }
  /// Product of all party output dimensions, d_N^O.
  long d_out_total() const {
    long d = 1;
    for (int k : parties_) d *= d_out(k);
    return d;
  }

 private:
  LabeledOperator op_;
  std::vector<int> parties_;
  bool has_past_ = false, has_future_ = false;
};

/// The projection W - (Tr_{A_k^O} W) (x) 1^{A_k^O} / d_k^O.  Idempotent and
/// traceless over A_k^O.
inline LabeledOperator lv_project(const LabeledOperator& w, int k) {
  SystemLabel out = SystemLabel::out(k);
  int d = w.spec().dim_of(out);  // throws UnknownLabel-style on absence
  LabeledOperator reduced = partial_trace(w, {out});
  LabeledOperator lifted = tensor_identity(reduced, out, d);
  return w - lifted.scaled(1.0 / d);
}

/// Full validity check.  Residuals are Frobenius norms relative to |W|_F
/// (absolute when W is numerically zero).
inline ValidityReport is_valid_process(const ProcessMatrix& w, ValidityMode mode,
                                       double tol = kValidityTol) {
  ValidityReport rep;
  const LabeledOperator& W = w.op();
  double scale = W.frobenius_norm();
  if (scale < 1e-300) scale = 1.0;  // zero matrix: absolute residuals

  auto record = [&](double res, const std::string& name) {
    if (res > rep.worst_residual) rep.worst_residual = res;
    if (res > tol && rep.failing_constraint.empty()) {
      rep.ok = false;
      rep.failing_constraint = name;
    }
  };

  // PSD.
  Eigen::SelfAdjointEigenSolver<Matrix> es(W.matrix(),
                                           Eigen::EigenvaluesOnly);
  double min_eig = es.eigenvalues().minCoeff();
  record(std::max(0.0, -min_eig) / scale, "psd");

  // Subset constraints, exhaustively over nonempty K (N <= 6 in scope).
  const auto& parties = w.parties();
  int N = w.n_parties();
  if (N > 6) throw LabelError("validity check supports at most 6 parties");
  for (unsigned mask = 1; mask < (1u << N); ++mask) {
    std::vector<SystemLabel> trace_out;
    std::vector<int> in_K;
    for (int i = 0; i < N; ++i) {
      int k = parties[i];
      if (mask & (1u << i)) {
        in_K.push_back(k);
      } else {
        trace_out.push_back(SystemLabel::in(k));
        trace_out.push_back(SystemLabel::out(k));
      }
    }
    if (w.has_future()) trace_out.push_back(SystemLabel::future());
    LabeledOperator R = trace_out.empty() ? W : partial_trace(W, trace_out);
    for (int k : in_K) R = lv_project(R, k);
    std::string name = "subset{";
    for (std::size_t i = 0; i < in_K.size(); ++i)
      name += (i ? "," : "") + std::to_string(in_K[i]);
    name += "}";
    record(R.frobenius_norm() / scale, name);
  }

  // Normalization: Tr_{A^{IO} F} W against d_N^O 1^P.
  {
    std::vector<SystemLabel> all;
    for (int k : parties) {
      all.push_back(SystemLabel::in(k));
      all.push_back(SystemLabel::out(k));
    }
    if (w.has_future()) all.push_back(SystemLabel::future());
    LabeledOperator RP = all.empty() ? W : partial_trace(W, all);
    long dP = RP.dim();
    double c_target = static_cast<double>(w.d_out_total());
    if (mode == ValidityMode::normalized) {
      Matrix diff = RP.matrix() - c_target * Matrix::Identity(dP, dP);
      record(diff.norm() / scale, "normalization");
    } else {
      double c = RP.trace().real() / dP;
      Matrix diff = RP.matrix() - c * Matrix::Identity(dP, dP);
      record(diff.norm() / scale, "normalization_proportional");
      record(std::max(0.0, -RP.trace().real()) / scale, "nonnegative_scale");
    }
  }
  return rep;
}

}  // namespace causalkit
