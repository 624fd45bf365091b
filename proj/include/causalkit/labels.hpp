// SPDX-License-Identifier: MIT
//
// System labels and labeled tensor-factor specifications.
//
// Every operator in this library lives on an explicit tensor product of
// finite-dimensional factors.  A factor is identified by a SystemLabel:
// the global past P, a party's input or output system, a named auxiliary
// system, or the global future F.  A SpaceSpec is an ordered list of
// (label, dimension) pairs; all stored operators use the canonical order
//
//   P  <  A_1^I < A_1^O < A_2^I < ... <  Aux (lexicographic)  <  F
//
// so that serialized matrices are bit-stable across runs.

#pragma once

#include <algorithm>
#include <compare>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace causalkit {

/// Error for malformed label/spec usage.
struct LabelError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class LabelKind : std::uint8_t {
  GlobalPast = 0,
  PartyIn = 1,
  PartyOut = 2,
  Aux = 3,
  GlobalFuture = 4,
};

/// Identifier of one tensor factor.
struct SystemLabel {
  LabelKind kind = LabelKind::Aux;
  int party = 0;          ///< party index (1-based), for PartyIn/PartyOut
  std::string aux_name;   ///< name, for Aux labels

  static SystemLabel past() { return {LabelKind::GlobalPast, 0, {}}; }
  static SystemLabel future() { return {LabelKind::GlobalFuture, 0, {}}; }
  static SystemLabel in(int k) { return {LabelKind::PartyIn, k, {}}; }
  static SystemLabel out(int k) { return {LabelKind::PartyOut, k, {}}; }
  static SystemLabel aux(std::string name) {
    return {LabelKind::Aux, 0, std::move(name)};
  }

  bool operator==(const SystemLabel&) const = default;

  /// Canonical order: P, then parties ascending with In before Out,
  /// then Aux lexicographic, then F.
  std::strong_ordering operator<=>(const SystemLabel& o) const {
    auto ga = group(), gb = o.group();
    if (ga != gb) return ga <=> gb;
    switch (kind) {
      case LabelKind::PartyIn:
      case LabelKind::PartyOut:
        if (party != o.party) return party <=> o.party;
        return static_cast<int>(kind) <=> static_cast<int>(o.kind);
      case LabelKind::Aux:
        return aux_name <=> o.aux_name;
      default:
        return std::strong_ordering::equal;
    }
  }

  /// Compact text form: "P", "F", "A3I", "A3O", "X:name".
  std::string str() const {
    switch (kind) {
      case LabelKind::GlobalPast: return "P";
      case LabelKind::GlobalFuture: return "F";
      case LabelKind::PartyIn: return "A" + std::to_string(party) + "I";
      case LabelKind::PartyOut: return "A" + std::to_string(party) + "O";
      case LabelKind::Aux: return "X:" + aux_name;
    }
    return "?";
  }

  static SystemLabel parse(const std::string& s) {
    if (s == "P") return past();
    if (s == "F") return future();
    if (s.size() >= 2 && s[0] == 'X' && s[1] == ':') return aux(s.substr(2));
    if (s.size() >= 3 && s[0] == 'A' && (s.back() == 'I' || s.back() == 'O')) {
      int k = std::stoi(s.substr(1, s.size() - 2));
      return s.back() == 'I' ? in(k) : out(k);
    }
    throw LabelError("unparseable system label: " + s);
  }

 private:
  int group() const {
    switch (kind) {
      case LabelKind::GlobalPast: return 0;
      case LabelKind::PartyIn:
      case LabelKind::PartyOut: return 1;
      case LabelKind::Aux: return 2;
      case LabelKind::GlobalFuture: return 3;
    }
    return 4;
  }
};

/// One tensor factor: a label with its dimension.
struct Factor {
  SystemLabel label;
  int dim = 1;
  bool operator==(const Factor&) const = default;
};

/// Ordered list of labeled factors describing a tensor-product space.
class SpaceSpec {
 public:
  SpaceSpec() = default;

  /// Builds a spec; factors may arrive in any order and are sorted into
  /// canonical order.  Duplicate labels and non-positive dims are rejected.
  explicit SpaceSpec(std::vector<Factor> factors) : factors_(std::move(factors)) {
    for (const auto& f : factors_)
      if (f.dim <= 0) throw LabelError("factor dimension must be positive");
    std::sort(factors_.begin(), factors_.end(),
              [](const Factor& a, const Factor& b) { return a.label < b.label; });
    for (std::size_t i = 1; i < factors_.size(); ++i)
      if (factors_[i - 1].label == factors_[i].label)
        throw LabelError("duplicate label in SpaceSpec: " + factors_[i].label.str());
  }

  const std::vector<Factor>& factors() const { return factors_; }
  std::size_t size() const { return factors_.size(); }

  /// Total dimension (product of factor dimensions); 1 for the empty spec.
  long dim() const {
    long d = 1;
    for (const auto& f : factors_) d *= f.dim;
    return d;
  }

  bool contains(const SystemLabel& l) const { return find(l) >= 0; }

  /// Index of a label within the canonical factor list, or -1.
  int find(const SystemLabel& l) const {
    for (std::size_t i = 0; i < factors_.size(); ++i)
      if (factors_[i].label == l) return static_cast<int>(i);
    return -1;
  }

  int dim_of(const SystemLabel& l) const {
    int i = find(l);
    if (i < 0) throw LabelError("unknown label: " + l.str());
    return factors_[i].dim;
  }

  bool operator==(const SpaceSpec&) const = default;

  /// Union of two specs with disjoint label sets.
  static SpaceSpec disjoint_union(const SpaceSpec& a, const SpaceSpec& b) {
    std::vector<Factor> fs = a.factors_;
    for (const auto& f : b.factors_) {
      if (a.contains(f.label))
        throw LabelError("duplicate label across operands: " + f.label.str());
      fs.push_back(f);
    }
    return SpaceSpec(std::move(fs));
  }

 private:
  std::vector<Factor> factors_;
};

}  // namespace causalkit
