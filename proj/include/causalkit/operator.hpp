// SPDX-License-Identifier: MIT
//
// LabeledOperator: a dense complex matrix on a labeled tensor-product space.
//
// The matrix is always stored in the canonical factor order of SpaceSpec;
// constructors accept factors in any order and permute the data accordingly,
// so every operation is automatically invariant under the caller's factor
// ordering.  Serialization is row-major (re, im) pairs and round-trips
// bit-exactly.

#pragma once

#include <complex>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "causalkit/labels.hpp"

namespace causalkit {

using Complex = std::complex<double>;
using Matrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXcd;

namespace detail {

/// Index permutation that maps a tensor index expressed in `to` factor order
/// to the corresponding flat index in `from` factor order.  Both lists must
/// contain the same factors.  Row-major: the first factor is most significant.
inline std::vector<long> index_map(const std::vector<Factor>& from,
                                   const std::vector<Factor>& to) {
  const std::size_t m = from.size();
  // position of to[t] within `from`
  std::vector<int> pos(m);
  for (std::size_t t = 0; t < m; ++t) {
    int p = -1;
    for (std::size_t f = 0; f < m; ++f)
      if (from[f].label == to[t].label) { p = static_cast<int>(f); break; }
    if (p < 0) throw LabelError("factor lists do not match");
    pos[t] = p;
  }
  std::vector<long> stride_from(m, 1);
  for (int f = static_cast<int>(m) - 2; f >= 0; --f)
    stride_from[f] = stride_from[f + 1] * from[f + 1].dim;
  long total = 1;
  for (const auto& f : from) total *= f.dim;

  std::vector<long> map(total, 0);
  std::vector<int> digits(m, 0);
  for (long i = 0; i < total; ++i) {
    long idx = 0;
    for (std::size_t t = 0; t < m; ++t) idx += digits[t] * stride_from[pos[t]];
    map[i] = idx;
    // increment mixed-radix counter in `to` order (last digit fastest)
    for (int t = static_cast<int>(m) - 1; t >= 0; --t) {
      if (++digits[t] < to[t].dim) break;
      digits[t] = 0;
    }
  }
  return map;
}

}  // namespace detail

/// A square complex matrix on the tensor product described by its SpaceSpec.
/// Hermiticity/PSD-ness are never assumed here; consumers assert them.
class LabeledOperator {
 public:
  LabeledOperator() : spec_(), data_(Matrix::Zero(1, 1)) {}

  /// From an already-canonical spec and matching matrix.
  LabeledOperator(SpaceSpec spec, Matrix data)
      : spec_(std::move(spec)), data_(std::move(data)) {
    if (data_.rows() != data_.cols() || data_.rows() != spec_.dim())
      throw LabelError("matrix side does not match spec dimension");
  }

  /// From factors in arbitrary order with the matrix expressed in that order;
  /// data is permuted into canonical order.
  LabeledOperator(const std::vector<Factor>& factors, const Matrix& data)
      : spec_(factors) {
    if (data.rows() != data.cols() || data.rows() != spec_.dim())
      throw LabelError("matrix side does not match spec dimension");
    const auto& canon = spec_.factors();
    bool already = std::equal(canon.begin(), canon.end(), factors.begin(),
                              factors.end());
    if (already) {
      data_ = data;
    } else {
      auto map = detail::index_map(factors, canon);
      data_.resize(data.rows(), data.cols());
      for (long i = 0; i < data_.rows(); ++i)
        for (long j = 0; j < data_.cols(); ++j)
          data_(i, j) = data(map[i], map[j]);
    }
  }

  static LabeledOperator zero(SpaceSpec spec) {
    long d = spec.dim();
    return LabeledOperator(std::move(spec), Matrix::Zero(d, d));
  }

  static LabeledOperator identity(SpaceSpec spec) {
    long d = spec.dim();
    return LabeledOperator(std::move(spec), Matrix::Identity(d, d));
  }

  const SpaceSpec& spec() const { return spec_; }
  const Matrix& matrix() const { return data_; }
  Matrix& matrix() { return data_; }
  long dim() const { return data_.rows(); }

  Complex trace() const { return data_.trace(); }
  double frobenius_norm() const { return data_.norm(); }

  /// Enforce exact Hermiticity by symmetrization (module-boundary use only).
  LabeledOperator symmetrized() const {
    return LabeledOperator(spec_, Matrix((data_ + data_.adjoint()) / 2.0));
  }

  LabeledOperator scaled(Complex c) const {
    return LabeledOperator(spec_, Matrix(c * data_));
  }

  // In-place linear combination with an operator on the identical spec.
  LabeledOperator& operator+=(const LabeledOperator& o) {
    if (!(spec_ == o.spec_)) throw LabelError("spec mismatch in operator+=");
    data_ += o.data_;
    return *this;
  }
  LabeledOperator& operator-=(const LabeledOperator& o) {
    if (!(spec_ == o.spec_)) throw LabelError("spec mismatch in operator-=");
    data_ -= o.data_;
    return *this;
  }
  friend LabeledOperator operator+(LabeledOperator a, const LabeledOperator& b) {
    a += b; return a;
  }
  friend LabeledOperator operator-(LabeledOperator a, const LabeledOperator& b) {
    a -= b; return a;
  }
  friend LabeledOperator operator*(Complex c, const LabeledOperator& a) {
    return a.scaled(c);
  }

  nlohmann::json to_json() const {
    nlohmann::json jf = nlohmann::json::array();
    for (const auto& f : spec_.factors())
      jf.push_back({{"label", f.label.str()}, {"dim", f.dim}});
    nlohmann::json jd = nlohmann::json::array();
    for (long i = 0; i < data_.rows(); ++i)
      for (long j = 0; j < data_.cols(); ++j)
        jd.push_back({data_(i, j).real(), data_(i, j).imag()});
    return {{"factors", jf}, {"data", jd}};
  }

  static LabeledOperator from_json(const nlohmann::json& j) {
    std::vector<Factor> fs;
    for (const auto& f : j.at("factors"))
      fs.push_back({SystemLabel::parse(f.at("label").get<std::string>()),
                    f.at("dim").get<int>()});
    SpaceSpec spec(fs);
    long d = spec.dim();
    const auto& jd = j.at("data");
    if (static_cast<long>(jd.size()) != d * d)
      throw LabelError("operator JSON: data length mismatch");
    Matrix m(d, d);
    long idx = 0;
    for (long i = 0; i < d; ++i)
      for (long j2 = 0; j2 < d; ++j2, ++idx)
        m(i, j2) = Complex(jd[idx][0].get<double>(), jd[idx][1].get<double>());
    // `fs` may be listed in any order in the file; respect it.
    return LabeledOperator(fs, m);
  }

 private:
  SpaceSpec spec_;
  Matrix data_;
};

}  // namespace causalkit
