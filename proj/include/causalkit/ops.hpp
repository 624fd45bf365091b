// SPDX-License-Identifier: MIT
//
// Core operations of the labeled tensor algebra: tensor products, partial
// trace/transpose, maximally entangled (Choi) objects, and the link product
//
//   a * b = Tr_Y[ (a^{T_Y} (x) 1^Z) (1^X (x) b) ],
//
// where Y is the set of labels shared by a and b, X the labels only in a and
// Z the labels only in b.  The link product is commutative (up to canonical
// reordering) and associative, reduces to the tensor product when Y is empty
// and to the scalar Tr(a^T b) when X and Z are empty.

#pragma once

#include <set>

#include <unsupported/Eigen/KroneckerProduct>

#include "causalkit/operator.hpp"

namespace causalkit {

namespace detail {

/// Splits `spec` into (kept, selected) factor lists preserving canonical order.
inline void split_factors(const SpaceSpec& spec,
                          const std::vector<SystemLabel>& sel,
                          std::vector<Factor>& kept, std::vector<Factor>& chosen) {
  for (const auto& l : sel)
    if (!spec.contains(l)) throw LabelError("unknown label: " + l.str());
  for (const auto& f : spec.factors()) {
    bool in_sel = false;
    for (const auto& l : sel)
      if (f.label == l) { in_sel = true; break; }
    (in_sel ? chosen : kept).push_back(f);
  }
}

inline long dim_product(const std::vector<Factor>& fs) {
  long d = 1;
  for (const auto& f : fs) d *= f.dim;
  return d;
}

/// Data of `m` re-expressed with factors grouped as [group1, group2] in that
/// order (each group internally in canonical order).  Returns the matrix in
/// the grouped order, so index = i1 * dim(group2) + i2.
inline Matrix regroup(const LabeledOperator& m, const std::vector<Factor>& group1,
                      const std::vector<Factor>& group2) {
  std::vector<Factor> to = group1;
  to.insert(to.end(), group2.begin(), group2.end());
  auto map = index_map(m.spec().factors(), to);
  const Matrix& src = m.matrix();
  Matrix out(src.rows(), src.cols());
  for (long i = 0; i < src.rows(); ++i)
    for (long j = 0; j < src.cols(); ++j) out(i, j) = src(map[i], map[j]);
  return out;
}

}  // namespace detail

/// Tensor product; label sets must be disjoint.  The result is re-sorted to
/// canonical order.
inline LabeledOperator tensor(const LabeledOperator& a, const LabeledOperator& b) {
  std::vector<Factor> fs = a.spec().factors();
  const auto& bf = b.spec().factors();
  fs.insert(fs.end(), bf.begin(), bf.end());
  Matrix k = Eigen::kroneckerProduct(a.matrix(), b.matrix());
  return LabeledOperator(fs, k);  // ctor checks duplicates and canonicalizes
}

/// Partial trace over the factors in `over`.
inline LabeledOperator partial_trace(const LabeledOperator& m,
                                     const std::vector<SystemLabel>& over) {
  std::vector<Factor> kept, traced;
  detail::split_factors(m.spec(), over, kept, traced);
  long dk = detail::dim_product(kept), dt = detail::dim_product(traced);
  Matrix grouped = detail::regroup(m, kept, traced);
  Matrix out = Matrix::Zero(dk, dk);
  for (long i = 0; i < dk; ++i)
    for (long j = 0; j < dk; ++j)
      for (long t = 0; t < dt; ++t) out(i, j) += grouped(i * dt + t, j * dt + t);
  return LabeledOperator(SpaceSpec(kept), out);
}

/// Partial transpose over the factors in `over` (involutive).
inline LabeledOperator partial_transpose(const LabeledOperator& m,
                                         const std::vector<SystemLabel>& over) {
  std::vector<Factor> kept, sel;
  detail::split_factors(m.spec(), over, kept, sel);
  long dk = detail::dim_product(kept), ds = detail::dim_product(sel);
  Matrix grouped = detail::regroup(m, kept, sel);
  Matrix out(dk * ds, dk * ds);
  for (long i = 0; i < dk; ++i)
    for (long j = 0; j < dk; ++j)
      for (long s = 0; s < ds; ++s)
        for (long t = 0; t < ds; ++t)
          out(i * ds + s, j * ds + t) = grouped(i * ds + t, j * ds + s);
  // `out` is in [kept, sel] order; rebuild in that order and re-canonicalize.
  std::vector<Factor> order = kept;
  order.insert(order.end(), sel.begin(), sel.end());
  return LabeledOperator(order, out);
}

/// Unnormalized maximally entangled vector |1>> = sum_i |ii> on labels x,y
/// (both of dimension d), returned as the rank-1 operator |1>><<1| with
/// trace d.
inline LabeledOperator max_entangled(const SystemLabel& x, const SystemLabel& y,
                                     int d) {
  if (x == y) throw LabelError("max_entangled requires distinct labels");
  Vector v = Vector::Zero(static_cast<long>(d) * d);
  for (int i = 0; i < d; ++i) v(static_cast<long>(i) * d + i) = 1.0;
  Matrix m = v * v.adjoint();
  return LabeledOperator({{x, d}, {y, d}}, m);
}

/// Choi matrix sum_kappa |K_kappa>><<K_kappa| of the CP map with the given
/// Kraus operators (each d_out x d_in), with |K>> = (1 (x) K)|1>>.
inline LabeledOperator choi_from_kraus(const std::vector<Matrix>& kraus,
                                       const SystemLabel& in_label, int d_in,
                                       const SystemLabel& out_label, int d_out) {
  Matrix acc = Matrix::Zero(static_cast<long>(d_in) * d_out,
                            static_cast<long>(d_in) * d_out);
  for (const auto& K : kraus) {
    if (K.rows() != d_out || K.cols() != d_in)
      throw LabelError("Kraus operator shape mismatch");
    Vector v(static_cast<long>(d_in) * d_out);
    for (int i = 0; i < d_in; ++i)
      for (int o = 0; o < d_out; ++o) v(static_cast<long>(i) * d_out + o) = K(o, i);
    acc += v * v.adjoint();
  }
  return LabeledOperator({{in_label, d_in}, {out_label, d_out}}, acc);
}

/// Link product a * b over the shared label set.  Shared labels must have
/// equal dimensions in both operands.
inline LabeledOperator link_product(const LabeledOperator& a,
                                    const LabeledOperator& b) {
  std::vector<Factor> X, Y, Z;  // a-only, shared, b-only
  for (const auto& f : a.spec().factors()) {
    if (b.spec().contains(f.label)) {
      if (b.spec().dim_of(f.label) != f.dim)
        throw LabelError("shared label dimension mismatch: " + f.label.str());
      Y.push_back(f);
    } else {
      X.push_back(f);
    }
  }
  for (const auto& f : b.spec().factors())
    if (!a.spec().contains(f.label)) Z.push_back(f);

  long dX = detail::dim_product(X), dY = detail::dim_product(Y),
       dZ = detail::dim_product(Z);

  // A in [X, Y] order, B in [Y, Z] order.
  Matrix A = detail::regroup(a, X, Y);
  Matrix B = detail::regroup(b, Y, Z);

  // result(x z, x' z') = sum_{u v} A(x u, x' v) B(u z, v z'),
  // i.e. a^{T_Y} contracted against b on the shared indices.  Rearranged as
  // MA[(x,x'), (u,v)] * MB[(u,v), (z,z')].
  Matrix MA(dX * dX, dY * dY), MB(dY * dY, dZ * dZ);
  for (long x = 0; x < dX; ++x)
    for (long xp = 0; xp < dX; ++xp)
      for (long u = 0; u < dY; ++u)
        for (long v = 0; v < dY; ++v)
          MA(x * dX + xp, u * dY + v) = A(x * dY + u, xp * dY + v);
  for (long u = 0; u < dY; ++u)
    for (long v = 0; v < dY; ++v)
      for (long z = 0; z < dZ; ++z)
        for (long zp = 0; zp < dZ; ++zp)
          MB(u * dY + v, z * dZ + zp) = B(u * dZ + z, v * dZ + zp);
  Matrix R = MA * MB;

  std::vector<Factor> order = X;
  order.insert(order.end(), Z.begin(), Z.end());
  Matrix out(dX * dZ, dX * dZ);
  for (long x = 0; x < dX; ++x)
    for (long xp = 0; xp < dX; ++xp)
      for (long z = 0; z < dZ; ++z)
        for (long zp = 0; zp < dZ; ++zp)
          out(x * dZ + z, xp * dZ + zp) = R(x * dX + xp, z * dZ + zp);
  return LabeledOperator(order, out);
}

/// Tensor of an operator with a labeled identity.
inline LabeledOperator tensor_identity(const LabeledOperator& a,
                                       const SystemLabel& l, int d) {
  return tensor(a, LabeledOperator::identity(SpaceSpec({{l, d}})));
}

}  // namespace causalkit
