// SPDX-License-Identifier: MIT
//
// Solver-agnostic conic programs.
//
// A ConicProgram has variables (Hermitian-PSD blocks on labeled spaces,
// nonnegative scalars, free scalars), affine equality constraints between
// them built from partial traces / identity paddings of the blocks, and an
// optional linear objective.  Programs compile to the standard cone form
//
//     min c'x   s.t.  Ax + s = b,   s in  zero x nonneg x soc x psd
//
// and are solved by an external backend process (HiGHS for pure LPs, SCS
// otherwise).  Feasibility problems are posed as slack minimization:
// minimize t subject to ||A_eq x - b_eq|| <= t, so near-feasibility is
// quantified; an alternating-projection polish step refines feasible points
// without trusting the solver.  All residuals reported in SolveOutcome are
// recomputed here from the returned point.

#pragma once

#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cstring>
#include <map>
#include <mutex>
#include <optional>

#include <Eigen/Sparse>

#include "causalkit/hermitian.hpp"
#include "causalkit/ops.hpp"

namespace causalkit {

struct SolverFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class VarKind { PSDHermitian, NonnegScalar, FreeScalar };

enum class Sense { feasibility, minimize, maximize };

struct SolveOptions {
  double eps = 1e-8;
  long max_iters = 200000;
  int route = 0;        ///< 0 auto, 1 force LP backend, 2 force SCS
  bool verbose = false;
  bool polish = true;   ///< refine feasibility solutions by projections
  /// Warm start from a previous outcome of the *same* program shape.
  const std::vector<double>* warm_x = nullptr;
  const std::vector<double>* warm_y = nullptr;
  const std::vector<double>* warm_s = nullptr;
};

struct SolveOutcome {
  enum class Status { Optimal, Inaccurate, Infeasible, Unbounded, Failed };
  Status status = Status::Failed;
  double objective = 0.0;          ///< in the caller's sense (max not negated)
  double slack = 0.0;              ///< t* for feasibility programs
  Eigen::VectorXd x;               ///< program variables (no auxiliary slack)
  Eigen::VectorXd y_eq;            ///< duals of the equality rows
  double res_pri = 0.0, res_dual = 0.0;
  long iters = 0;
  std::map<std::string, double> block_residuals;  ///< recomputed, per equality
  double worst_block_residual = 0.0;
  // Raw solver vectors for warm starting subsequent solves.
  std::vector<double> raw_x, raw_y, raw_s;

  bool ok() const {
    return status == Status::Optimal || status == Status::Inaccurate;
  }
};

namespace detail {

/// Client for the long-running Python solver worker.  One worker process,
/// guarded by a mutex; requests are serialized.
class ConicBackend {
 public:
  static ConicBackend& instance() {
    static ConicBackend b;
    return b;
  }

  /// Sends a raw request payload, returns the raw response payload.
  std::vector<char> request(const std::vector<char>& payload) {
    std::lock_guard<std::mutex> lock(mu_);
    if (pid_ < 0) start();
    std::uint64_t len = payload.size();
    if (!write_all(&len, 8) || !write_all(payload.data(), payload.size())) {
      restart();
      throw SolverFailure("conic backend write failed");
    }
    std::uint64_t rlen = 0;
    if (!read_all(&rlen, 8)) {
      restart();
      throw SolverFailure("conic backend died (no response)");
    }
    std::vector<char> out(rlen);
    if (!read_all(out.data(), rlen)) {
      restart();
      throw SolverFailure("conic backend died (truncated response)");
    }
    return out;
  }

 private:
  ConicBackend() = default;
  ~ConicBackend() {
    if (pid_ > 0) {
      close(to_child_);
      close(from_child_);
      int st;
      waitpid(pid_, &st, 0);
    }
  }

  void start() {
    const char* script = std::getenv("CAUSALKIT_BACKEND");
    if (!script || !*script) script = CAUSALKIT_BACKEND_DEFAULT;
    int in_pipe[2], out_pipe[2];
    if (pipe(in_pipe) || pipe(out_pipe))
      throw SolverFailure("cannot create backend pipes");
    pid_t pid = fork();
    if (pid < 0) throw SolverFailure("cannot fork backend");
    if (pid == 0) {
      dup2(in_pipe[0], 0);
      dup2(out_pipe[1], 1);
      close(in_pipe[0]); close(in_pipe[1]);
      close(out_pipe[0]); close(out_pipe[1]);
      execlp("python3", "python3", script, (char*)nullptr);
      _exit(127);
    }
    close(in_pipe[0]);
    close(out_pipe[1]);
    to_child_ = in_pipe[1];
    from_child_ = out_pipe[0];
    pid_ = pid;
  }

  void restart() {
    if (pid_ > 0) {
      close(to_child_);
      close(from_child_);
      int st;
      waitpid(pid_, &st, 0);
    }
    pid_ = -1;
  }

  bool write_all(const void* p, std::size_t n) {
    const char* c = static_cast<const char*>(p);
    while (n) {
      ssize_t w = ::write(to_child_, c, n);
      if (w <= 0) return false;
      c += w;
      n -= static_cast<std::size_t>(w);
    }
    return true;
  }
  bool read_all(void* p, std::size_t n) {
    char* c = static_cast<char*>(p);
    while (n) {
      ssize_t r = ::read(from_child_, c, n);
      if (r <= 0) return false;
      c += r;
      n -= static_cast<std::size_t>(r);
    }
    return true;
  }

  std::mutex mu_;
  pid_t pid_ = -1;
  int to_child_ = -1, from_child_ = -1;
};

struct Wire {
  std::vector<char> buf;
  void i64(std::int64_t v) { append(&v, 8); }
  void f64(double v) { append(&v, 8); }
  void i64s(const std::vector<std::int64_t>& v) { append(v.data(), 8 * v.size()); }
  void f64s(const double* p, std::size_t n) { append(p, 8 * n); }
  void append(const void* p, std::size_t n) {
    const char* c = static_cast<const char*>(p);
    buf.insert(buf.end(), c, c + n);
  }
};

struct WireReader {
  const char* p;
  const char* end;
  std::int64_t i64() {
    std::int64_t v;
    take(&v, 8);
    return v;
  }
  double f64() {
    double v;
    take(&v, 8);
    return v;
  }
  void f64s(double* out, std::size_t n) { take(out, 8 * n); }
  void take(void* out, std::size_t n) {
    if (p + n > end) throw SolverFailure("short backend response");
    std::memcpy(out, p, n);
    p += n;
  }
};

}  // namespace detail

/// A linear term c * (Tr_{trace_out} X_var) (x) 1^{target-minus-remaining}
/// inside an equality constraint.
struct OpTerm {
  int var;
  double coeff = 1.0;
  std::vector<SystemLabel> trace_out;
};

/// A term x_var * op with x_var a scalar variable.
struct ScalarOpTerm {
  int var;
  LabeledOperator op;
};

class ConicProgram {
 public:
  struct Variable {
    std::string name;
    VarKind kind;
    SpaceSpec spec;  // for PSDHermitian
    int d = 1;       // matrix side for PSDHermitian
    long offset = 0, size = 1;
  };

  struct EqualityBlock {
    std::string name;
    SpaceSpec target;
    std::vector<OpTerm> op_terms;
    std::vector<ScalarOpTerm> scalar_terms;
    LabeledOperator rhs;
    long row_offset = 0, n_rows = 0;
  };

  int add_psd_variable(const std::string& name, const SpaceSpec& spec) {
    Variable v{name, VarKind::PSDHermitian, spec,
               static_cast<int>(spec.dim()), 0, hvec_size(static_cast<int>(spec.dim()))};
    vars_.push_back(std::move(v));
    dirty_ = true;
    return static_cast<int>(vars_.size()) - 1;
  }

  int add_scalar_variable(const std::string& name, bool nonneg) {
    vars_.push_back({name, nonneg ? VarKind::NonnegScalar : VarKind::FreeScalar,
                     SpaceSpec(), 1, 0, 1});
    dirty_ = true;
    return static_cast<int>(vars_.size()) - 1;
  }

  const Variable& variable(int i) const { return vars_.at(i); }
  int n_variables() const { return static_cast<int>(vars_.size()); }

  /// Adds the equality  sum op_terms + sum scalar_terms = rhs  on the labeled
  /// space rhs.spec() (1x1 for scalar equalities).
  void add_equality(const std::string& name, std::vector<OpTerm> op_terms,
                    std::vector<ScalarOpTerm> scalar_terms,
                    const LabeledOperator& rhs) {
    eqs_.push_back(EqualityBlock{name, rhs.spec(), std::move(op_terms),
                                 std::move(scalar_terms), rhs, 0, 0});
    dirty_ = true;
  }

  /// Objective: sum over PSD vars of <C_v, X_v> plus scalar coefficients.
  void set_objective(Sense sense,
                     std::map<int, LabeledOperator> psd_coeffs = {},
                     std::map<int, double> scalar_coeffs = {}) {
    sense_ = sense;
    obj_psd_ = std::move(psd_coeffs);
    obj_scalar_ = std::move(scalar_coeffs);
  }

  Sense sense() const { return sense_; }

  long n_params() const {
    const_cast<ConicProgram*>(this)->compile();
    return n_;
  }
  long n_equality_rows() const {
    const_cast<ConicProgram*>(this)->compile();
    return m_eq_;
  }

  /// Solves the program through the backend.
  SolveOutcome solve(const SolveOptions& opts = {}) {
    compile();
    const bool feas = sense_ == Sense::feasibility;
    const long n_solver = n_ + (feas ? 1 : 0);  // + slack t

    // When every data matrix (equality right-hand sides, scalar-term
    // operators, objective coefficients) is real, the feasible set is
    // invariant under entrywise conjugation of all Hermitian blocks, so an
    // optimal point with real blocks exists.  In that regime each PSD cone
    // shrinks from the side-2d real embedding to a side-d symmetric cone and
    // the imaginary parameters are pinned to zero, which cuts the dominant
    // per-iteration eigendecomposition cost by roughly 8x.
    const bool real_ok = all_data_real();

    // Row layout: [zero (eq rows in optimization mode; imaginary-parameter
    //             pins in real mode)] [nonneg scalars]
    //             [soc 1+m_eq (feasibility only)] [psd blocks]
    std::vector<long> nonneg_vars;
    for (const auto& v : vars_)
      if (v.kind == VarKind::NonnegScalar) nonneg_vars.push_back(v.offset);
    long m_imag = 0;
    if (real_ok)
      for (const auto& v : vars_)
        if (v.kind == VarKind::PSDHermitian)
          m_imag += static_cast<long>(v.d) * (v.d - 1) / 2;
    const long m_zero = (feas ? 0 : m_eq_) + m_imag;
    const long m_l = static_cast<long>(nonneg_vars.size());
    const long m_q = feas ? 1 + m_eq_ : 0;
    long m_s = 0;
    std::vector<std::int64_t> s_sizes;
    for (const auto& v : vars_)
      if (v.kind == VarKind::PSDHermitian) {
        long side = real_ok ? v.d : 2L * v.d;
        s_sizes.push_back(side);
        m_s += side * (side + 1) / 2;
      }
    const long m = m_zero + m_l + m_q + m_s;

    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(eq_triplets_.size() + static_cast<std::size_t>(m_l + m_s) * 2);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(m);

    long eq_row_base;
    long pin_row;
    if (feas) {
      // SOC block: s = [t; b_eq - A_eq x]
      pin_row = 0;
      long q0 = m_zero + m_l;
      trips.emplace_back(q0, n_, -1.0);
      eq_row_base = q0 + 1;
      for (const auto& t : eq_triplets_)
        trips.emplace_back(eq_row_base + t.row(), t.col(), t.value());
      b.segment(eq_row_base, m_eq_) = b_eq_;
    } else {
      eq_row_base = 0;
      pin_row = m_eq_;
      for (const auto& t : eq_triplets_)
        trips.emplace_back(t.row(), t.col(), t.value());
      b.head(m_eq_) = b_eq_;
      // zero cone: s = b - Ax = 0  ->  A x = b: need A rows positive sign
    }
    if (real_ok) {
      // zero cone continued: pin all imaginary hvec parameters to zero
      for (const auto& v : vars_) {
        if (v.kind != VarKind::PSDHermitian) continue;
        for (int lo = 0; lo < v.d; ++lo)
          for (int hi = lo + 1; hi < v.d; ++hi)
            trips.emplace_back(pin_row++,
                               v.offset + hvec_off(v.d, lo, hi, true), 1.0);
      }
    }
    // nonneg scalars: s = x >= 0  ->  A row -1
    long l0 = m_zero;
    for (long i = 0; i < m_l; ++i) trips.emplace_back(l0 + i, nonneg_vars[i], -1.0);
    // psd blocks: s = svec(realify(X))  ->  A entries -coef
    long srow = m_zero + m_l + m_q;
    const double r2 = std::sqrt(2.0);
    for (const auto& v : vars_) {
      if (v.kind != VarKind::PSDHermitian) continue;
      if (real_ok) {
        // svec over the real part directly: diag entries are the diagonal
        // hvec params, off-diagonals carry sqrt2 * Re X(i,j) = param.
        const int d = v.d;
        long idx = 0;
        for (int j = 0; j < d; ++j)
          for (int i = j; i < d; ++i, ++idx) {
            long p = (i == j) ? v.offset + hvec_diag(d, i)
                              : v.offset + hvec_off(d, j, i, false);
            trips.emplace_back(srow + idx, p, -1.0);
          }
        srow += static_cast<long>(d) * (d + 1) / 2;
        continue;
      }
      const int d = v.d, D = 2 * d;
      // svec lower-triangular column-major over the realified matrix R:
      // R(i,j) with quadrants: (qi,qj) in {0,1}^2, base indices a=i%d, b=j%d.
      long idx = 0;
      for (int j = 0; j < D; ++j) {
        for (int i = j; i < D; ++i, ++idx) {
          int a = i % d, b = j % d;
          bool qi = i >= d, qj = j >= d;
          // R entry in terms of hvec params of X = Xr + i Xi:
          //   same quadrant: Xr(a,b);  qi&&!qj: Xi(a,b);  !qi&&qj: -Xi(a,b)
          double sc = (i == j) ? 1.0 : r2;  // svec scaling
          double coef;
          long p;
          if (qi == qj) {  // Re X(a,b)
            if (a == b) { p = v.offset + hvec_diag(d, a); coef = 1.0; }
            else {
              int lo = std::min(a, b), hi = std::max(a, b);
              p = v.offset + hvec_off(d, lo, hi, false);
              coef = 1.0 / r2;
            }
          } else {  // +-Im X(a,b), with hvec storing -sqrt2 Im X(lo,hi)
            if (a == b) continue;  // Im of diagonal vanishes; no entry
            int lo = std::min(a, b), hi = std::max(a, b);
            p = v.offset + hvec_off(d, lo, hi, true);
            // Im X(a,b) = -param/sqrt2 if (a,b)=(lo,hi) else +param/sqrt2
            double im = (a == lo) ? -1.0 / r2 : 1.0 / r2;
            coef = (qi && !qj) ? im : -im;
          }
          trips.emplace_back(srow + idx, p, -sc * coef);
        }
      }
      srow += static_cast<long>(D) * (D + 1) / 2;
    }

    Eigen::SparseMatrix<double> A(m, n_solver);
    A.setFromTriplets(trips.begin(), trips.end());
    A.makeCompressed();

    Eigen::VectorXd c = Eigen::VectorXd::Zero(n_solver);
    double obj_sign = (sense_ == Sense::maximize) ? -1.0 : 1.0;
    if (feas) {
      c(n_) = 1.0;
    } else {
      for (const auto& [vi, C] : obj_psd_) {
        const auto& v = vars_.at(vi);
        if (v.kind != VarKind::PSDHermitian)
          throw SolverFailure("objective operator on non-PSD variable");
        c.segment(v.offset, v.size) += obj_sign * matrix_to_hvec(C.matrix());
      }
      for (const auto& [vi, co] : obj_scalar_)
        c(vars_.at(vi).offset) += obj_sign * co;
    }

    // ---- wire request ----
    detail::Wire w;
    w.i64(0x434B5131);  // magic
    w.i64(1);
    w.i64(n_solver);
    w.i64(m);
    w.f64s(c.data(), n_solver);
    w.f64s(b.data(), m);
    {
      std::vector<std::int64_t> colptr(A.outerSize() + 1), rowind(A.nonZeros());
      for (long j = 0; j <= A.outerSize(); ++j) colptr[j] = A.outerIndexPtr()[j];
      for (long k = 0; k < A.nonZeros(); ++k) rowind[k] = A.innerIndexPtr()[k];
      w.i64s(colptr);
      w.i64s(rowind);
      w.f64s(A.valuePtr(), A.nonZeros());
    }
    w.i64(m_zero);
    w.i64(m_l);
    if (m_q) { w.i64(1); w.i64(m_q); } else { w.i64(0); }
    w.i64(static_cast<std::int64_t>(s_sizes.size()));
    w.i64s(s_sizes);
    w.f64(opts.eps);
    w.f64(opts.eps);
    w.i64(opts.max_iters);
    w.i64(opts.route);
    w.i64(opts.verbose ? 1 : 0);
    bool warm = opts.warm_x && static_cast<long>(opts.warm_x->size()) == n_solver &&
                opts.warm_y && static_cast<long>(opts.warm_y->size()) == m &&
                opts.warm_s && static_cast<long>(opts.warm_s->size()) == m;
    w.i64(warm ? 1 : 0);
    if (warm) {
      w.f64s(opts.warm_x->data(), n_solver);
      w.f64s(opts.warm_y->data(), m);
      w.f64s(opts.warm_s->data(), m);
    }

    auto resp = detail::ConicBackend::instance().request(w.buf);
    detail::WireReader r{resp.data(), resp.data() + resp.size()};
    if (r.i64() != 0x434B5131) throw SolverFailure("bad backend response magic");
    std::int64_t status = r.i64();
    SolveOutcome out;
    double pobj = r.f64();
    r.f64();  // dobj
    out.res_pri = r.f64();
    out.res_dual = r.f64();
    out.iters = r.i64();
    auto read_arr = [&r]() {
      std::int64_t k = r.i64();
      std::vector<double> v(k);
      r.f64s(v.data(), k);
      return v;
    };
    out.raw_x = read_arr();
    out.raw_y = read_arr();
    out.raw_s = read_arr();

    switch (status) {
      case 0: out.status = SolveOutcome::Status::Optimal; break;
      case 1: out.status = SolveOutcome::Status::Inaccurate; break;
      case 2: out.status = SolveOutcome::Status::Infeasible; break;
      case 3: out.status = SolveOutcome::Status::Unbounded; break;
      default: out.status = SolveOutcome::Status::Failed; break;
    }
    if (!out.ok()) return out;

    out.x = Eigen::Map<const Eigen::VectorXd>(out.raw_x.data(), n_solver).head(n_);
    out.objective = feas ? pobj : obj_sign * pobj;

    if (feas && opts.polish) polish(out.x, opts.eps);

    // Recompute residuals from the (possibly polished) point.
    Eigen::VectorXd resid = eq_apply(out.x) - b_eq_;
    out.slack = resid.norm();
    if (feas) out.objective = out.slack;
    for (const auto& e : eqs_) {
      double rn = resid.segment(e.row_offset, e.n_rows).norm();
      out.block_residuals[e.name] = rn;
      out.worst_block_residual = std::max(out.worst_block_residual, rn);
    }
    // duals of the equality rows
    Eigen::Map<const Eigen::VectorXd> y(out.raw_y.data(), m);
    out.y_eq = y.segment(feas ? m_zero + m_l + 1 : 0, m_eq_);
    return out;
  }

  /// Hermitian block value of a PSD variable from an outcome.
  LabeledOperator value_of(const SolveOutcome& out, int var) const {
    const auto& v = vars_.at(var);
    if (v.kind != VarKind::PSDHermitian)
      throw SolverFailure("value_of: not a PSD variable");
    Matrix mat = hvec_to_matrix(out.x.segment(v.offset, v.size), v.d);
    return LabeledOperator(v.spec, mat);
  }

  double scalar_value_of(const SolveOutcome& out, int var) const {
    const auto& v = vars_.at(var);
    return out.x(v.offset);
  }

  /// Overwrites the solution segment of a PSD variable (used for warm starts
  /// built from known certificates).
  void set_value(Eigen::VectorXd& x, int var, const LabeledOperator& val) const {
    const auto& v = vars_.at(var);
    x.segment(v.offset, v.size) = matrix_to_hvec(val.matrix());
  }

  /// Dual operator of a named equality block, mapped back to its space.
  LabeledOperator dual_of(const SolveOutcome& out, const std::string& name) {
    compile();
    for (const auto& e : eqs_)
      if (e.name == name) {
        Matrix m = hvec_to_matrix(out.y_eq.segment(e.row_offset, e.n_rows),
                                  static_cast<int>(e.target.dim()));
        return LabeledOperator(e.target, m);
      }
    throw SolverFailure("unknown equality block: " + name);
  }

  /// JSON dump of the compiled program (debug interface).
  nlohmann::json to_json() {
    compile();
    nlohmann::json jv = nlohmann::json::array(), je = nlohmann::json::array();
    for (const auto& v : vars_) {
      const char* kinds[] = {"psd_hermitian", "nonneg_scalar", "free_scalar"};
      jv.push_back({{"name", v.name}, {"kind", kinds[static_cast<int>(v.kind)]},
                    {"dim", v.d}, {"offset", v.offset}});
    }
    for (const auto& e : eqs_)
      je.push_back({{"name", e.name}, {"rows", e.n_rows}, {"row_offset", e.row_offset}});
    nlohmann::json jt = nlohmann::json::array();
    for (const auto& t : eq_triplets_)
      jt.push_back({t.row(), t.col(), t.value()});
    return {{"variables", jv}, {"equalities", je}, {"triplets", jt},
            {"rhs", std::vector<double>(b_eq_.data(), b_eq_.data() + b_eq_.size())}};
  }

 private:
  void compile() {
    if (!dirty_) return;
    n_ = 0;
    for (auto& v : vars_) {
      v.offset = n_;
      n_ += v.size;
    }
    m_eq_ = 0;
    for (auto& e : eqs_) {
      e.row_offset = m_eq_;
      e.n_rows = hvec_size(static_cast<int>(e.target.dim()));
      m_eq_ += e.n_rows;
    }
    eq_triplets_.clear();
    b_eq_ = Eigen::VectorXd::Zero(m_eq_);
    for (auto& e : eqs_) compile_block(e);
    A_eq_.resize(m_eq_, n_);
    A_eq_.setFromTriplets(eq_triplets_.begin(), eq_triplets_.end());
    A_eq_.makeCompressed();
    dirty_ = false;
  }

  /// True when every data matrix entering the program is real (up to
  /// rounding), so conjugating all Hermitian blocks maps feasible points to
  /// feasible points with unchanged objective.
  bool all_data_real() const {
    auto real = [](const Matrix& mat) {
      return mat.size() == 0 || mat.imag().cwiseAbs().maxCoeff() <= 1e-12;
    };
    for (const auto& e : eqs_) {
      if (!real(e.rhs.matrix())) return false;
      for (const auto& st : e.scalar_terms)
        if (!real(st.op.matrix())) return false;
    }
    for (const auto& [vi, C] : obj_psd_)
      if (!real(C.matrix())) return false;
    return true;
  }

  /// Emits triplets for one equality block using the adjoint maps: the row
  /// for target-basis element B_q reads <B_q, L(X)> = <L*(B_q), X>, and the
  /// adjoint of  X -> (Tr_T X) (x) 1_I  is  Y -> (Tr_I Y) (x) 1_T.
  void compile_block(EqualityBlock& e) {
    const auto& tf = e.target.factors();
    const int dt = static_cast<int>(e.target.dim());
    const double r2 = std::sqrt(2.0);

    b_eq_.segment(e.row_offset, e.n_rows) = matrix_to_hvec(e.rhs.matrix());

    for (const auto& term : e.op_terms) {
      const auto& v = vars_.at(term.var);
      if (v.kind != VarKind::PSDHermitian)
        throw SolverFailure("OpTerm on non-PSD variable");
      const auto& vf = v.spec.factors();
      auto in_trace = [&](const SystemLabel& l) {
        for (const auto& t : term.trace_out)
          if (t == l) return true;
        return false;
      };
      // classify target factors: kept (come from the variable) vs identity.
      // A label both traced and in the target means trace-then-repad,
      // (Tr_l X) (x) 1_l; for the adjoint its target digits behave exactly
      // like an identity factor's while the variable factor is swept.
      std::vector<int> kept_var_pos;  // for each target factor: var index or -1
      for (const auto& f : tf) {
        int p = v.spec.find(f.label);
        if (p >= 0) {
          if (vf[p].dim != f.dim)
            throw SolverFailure("dimension mismatch in equality term");
          if (in_trace(f.label)) p = -1;
        }
        kept_var_pos.push_back(p);
      }
      // variable factors split into kept / traced; validate trace list
      std::vector<int> var_role(vf.size(), -1);  // target position or -2 traced
      for (std::size_t p = 0; p < vf.size(); ++p) {
        if (in_trace(vf[p].label)) {
          var_role[p] = -2;
          continue;
        }
        int tpos = e.target.find(vf[p].label);
        if (tpos >= 0) {
          var_role[p] = tpos;
        } else {
          throw SolverFailure("variable label " + vf[p].label.str() +
                              " neither traced nor in target");
        }
      }
      // strides
      std::vector<long> tstride(tf.size(), 1), vstride(vf.size(), 1);
      for (int i = static_cast<int>(tf.size()) - 2; i >= 0; --i)
        tstride[i] = tstride[i + 1] * tf[i + 1].dim;
      for (int i = static_cast<int>(vf.size()) - 2; i >= 0; --i)
        vstride[i] = vstride[i + 1] * vf[i + 1].dim;
      long d_traced = 1;
      for (std::size_t p = 0; p < vf.size(); ++p)
        if (var_role[p] == -2) d_traced *= vf[p].dim;

      // For each target matrix entry (rt, ct), the adjoint image has entries
      // at var indices agreeing with (rt, ct) on kept factors (identity
      // factors of the target must match diagonally) and sweeping the traced
      // factors diagonally.  We enumerate target hvec basis elements.
      auto add_rows_for_entry = [&](long q_row, long rt, long ct, Complex wgt) {
        // decompose rt, ct into target digits
        // identity factors (kept_var_pos == -1) must be diagonal
        long rbase = 0, cbase = 0;
        for (std::size_t t = 0; t < tf.size(); ++t) {
          long rd = (rt / tstride[t]) % tf[t].dim;
          long cd = (ct / tstride[t]) % tf[t].dim;
          if (kept_var_pos[t] < 0) {
            if (rd != cd) return;  // Tr over identity factor kills this entry
          } else {
            rbase += rd * vstride[kept_var_pos[t]];
            cbase += cd * vstride[kept_var_pos[t]];
          }
        }
        // sweep traced factors diagonally
        std::vector<std::size_t> tr_pos;
        for (std::size_t p = 0; p < vf.size(); ++p)
          if (var_role[p] == -2) tr_pos.push_back(p);
        for (long sweep = 0; sweep < d_traced; ++sweep) {
          long off = 0, s = sweep;
          for (auto p : tr_pos) {
            off += (s % vf[p].dim) * vstride[p];
            s /= vf[p].dim;
          }
          long vr = rbase + off, vc = cbase + off;
          // accumulate <., X> onto hvec params of the variable:
          // entry (vr, vc) with weight wgt*coeff
          Complex val = wgt * term.coeff;
          if (vr == vc) {
            push(q_row, v.offset + hvec_diag(v.d, static_cast<int>(vr)),
                 val.real());
          } else {
            int lo = static_cast<int>(std::min(vr, vc));
            int hi = static_cast<int>(std::max(vr, vc));
            // <B_re, M> picks (M_lohi + M_hilo)/sqrt2;
            // hvec imag param stores -sqrt2 Im X(lo,hi):
            // <X contribution> of entry (vr,vc,val):
            push(q_row, v.offset + hvec_off(v.d, lo, hi, false),
                 val.real() / r2);
            double sgn = (vr == lo) ? -1.0 : 1.0;  // d(param_im) coefficient
            push(q_row, v.offset + hvec_off(v.d, lo, hi, true),
                 sgn * val.imag() / r2);
          }
        }
      };

      // enumerate target basis: diagonal elements
      for (int a = 0; a < dt; ++a)
        add_rows_for_entry(e.row_offset + hvec_diag(dt, a), a, a, 1.0);
      for (int a = 0; a < dt; ++a)
        for (int bb = a + 1; bb < dt; ++bb) {
          // B_re = (E_ab + E_ba)/sqrt2
          long row_re = e.row_offset + hvec_off(dt, a, bb, false);
          add_rows_for_entry(row_re, a, bb, 1.0 / r2);
          add_rows_for_entry(row_re, bb, a, 1.0 / r2);
          // B_im with our convention: X(a,b) = (p_re - i p_im)/sqrt2, so the
          // coefficient functional is p_im = -sqrt2 Im X(a,b):
          long row_im = e.row_offset + hvec_off(dt, a, bb, true);
          add_rows_for_entry(row_im, a, bb, Complex(0, -1.0) / r2);
          add_rows_for_entry(row_im, bb, a, Complex(0, 1.0) / r2);
        }
    }

    for (const auto& st : e.scalar_terms) {
      const auto& v = vars_.at(st.var);
      if (v.kind == VarKind::PSDHermitian)
        throw SolverFailure("ScalarOpTerm on PSD variable");
      if (!(st.op.spec() == e.target))
        throw SolverFailure("scalar term operator spec mismatch");
      Eigen::VectorXd h = matrix_to_hvec(st.op.matrix());
      for (long q = 0; q < h.size(); ++q)
        if (h(q) != 0.0) push(e.row_offset + q, v.offset, h(q));
    }
  }

  void push(long row, long col, double val) {
    if (val != 0.0) eq_triplets_.emplace_back(row, col, val);
  }

  Eigen::VectorXd eq_apply(const Eigen::VectorXd& x) const {
    return A_eq_ * x;
  }

  /// Alternating projections between the equality subspace and the cone
  /// constraints, warm-started at the solver point.  Improves x in place.
  void polish(Eigen::VectorXd& x, double target) {
    if (m_eq_ == 0) return;
    Eigen::SparseMatrix<double> At = A_eq_.transpose();
    for (int it = 0; it < 60; ++it) {
      Eigen::VectorXd r = A_eq_ * x - b_eq_;
      if (r.norm() < target * 1e-3) break;
      // min-norm correction: solve (A A' + delta I) u = r by CG
      Eigen::VectorXd u = Eigen::VectorXd::Zero(m_eq_);
      Eigen::VectorXd res = r, p = res;
      double rs = res.squaredNorm();
      for (int cg = 0; cg < 200 && rs > 1e-28; ++cg) {
        Eigen::VectorXd Ap = A_eq_ * (At * p) + 1e-12 * p;
        double alpha = rs / p.dot(Ap);
        u += alpha * p;
        res -= alpha * Ap;
        double rs2 = res.squaredNorm();
        p = res + (rs2 / rs) * p;
        rs = rs2;
      }
      x -= At * u;
      // project cones
      for (const auto& v : vars_) {
        if (v.kind == VarKind::PSDHermitian) {
          Matrix m = hvec_to_matrix(x.segment(v.offset, v.size), v.d);
          x.segment(v.offset, v.size) = matrix_to_hvec(project_psd(m));
        } else if (v.kind == VarKind::NonnegScalar) {
          x(v.offset) = std::max(0.0, x(v.offset));
        }
      }
    }
  }

  std::vector<Variable> vars_;
  std::vector<EqualityBlock> eqs_;
  Sense sense_ = Sense::feasibility;
  std::map<int, LabeledOperator> obj_psd_;
  std::map<int, double> obj_scalar_;

  bool dirty_ = true;
  long n_ = 0, m_eq_ = 0;
  std::vector<Eigen::Triplet<double>> eq_triplets_;
  Eigen::VectorXd b_eq_;
  Eigen::SparseMatrix<double> A_eq_;
};

/// Lean scalar linear program for the polytope machinery (vertex-sized
/// instances), solved through the same backend via the LP route.  Variables
/// are nonnegative by default.  Duals of <= rows are nonnegative in either
/// sense; the sensitivity of the reported objective to the row's rhs is
/// -y_ub for minimization and +y_ub for maximization (same for y_eq).
class LinearProgram {
 public:
  struct Outcome {
    SolveOutcome::Status status = SolveOutcome::Status::Failed;
    double objective = 0.0;
    Eigen::VectorXd x, y_eq, y_ub;
    bool ok() const { return status == SolveOutcome::Status::Optimal; }
  };

  explicit LinearProgram(long n_vars, Sense sense = Sense::minimize)
      : n_(n_vars), sense_(sense), c_(Eigen::VectorXd::Zero(n_vars)),
        free_(n_vars, 0) {}

  void set_cost(long j, double v) { c_(j) = v; }
  void set_free(long j) { free_[j] = 1; }

  long add_eq_row(const std::vector<std::pair<long, double>>& terms, double rhs) {
    for (auto [j, v] : terms) eq_trips_.emplace_back(static_cast<long>(b_eq_.size()), j, v);
    b_eq_.push_back(rhs);
    return static_cast<long>(b_eq_.size()) - 1;
  }

  long add_ub_row(const std::vector<std::pair<long, double>>& terms, double rhs) {
    for (auto [j, v] : terms) ub_trips_.emplace_back(static_cast<long>(b_ub_.size()), j, v);
    b_ub_.push_back(rhs);
    return static_cast<long>(b_ub_.size()) - 1;
  }

  long n_vars() const { return n_; }

  Outcome solve() const {
    const long m_eq = static_cast<long>(b_eq_.size());
    long m_l = static_cast<long>(b_ub_.size());
    std::vector<long> nn_vars;
    for (long j = 0; j < n_; ++j)
      if (!free_[j]) nn_vars.push_back(j);
    const long m = m_eq + m_l + static_cast<long>(nn_vars.size());

    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(eq_trips_.size() + ub_trips_.size() + nn_vars.size());
    for (const auto& t : eq_trips_) trips.emplace_back(t.row(), t.col(), t.value());
    for (const auto& t : ub_trips_)
      trips.emplace_back(m_eq + t.row(), t.col(), t.value());
    for (std::size_t i = 0; i < nn_vars.size(); ++i)
      trips.emplace_back(m_eq + m_l + static_cast<long>(i), nn_vars[i], -1.0);

    Eigen::SparseMatrix<double> A(m, n_);
    A.setFromTriplets(trips.begin(), trips.end());
    A.makeCompressed();
    Eigen::VectorXd b(m);
    for (long i = 0; i < m_eq; ++i) b(i) = b_eq_[i];
    for (long i = 0; i < m_l; ++i) b(m_eq + i) = b_ub_[i];
    b.tail(static_cast<long>(nn_vars.size())).setZero();

    double sgn = (sense_ == Sense::maximize) ? -1.0 : 1.0;
    Eigen::VectorXd c = sgn * c_;

    detail::Wire w;
    w.i64(0x434B5131);
    w.i64(1);
    w.i64(n_);
    w.i64(m);
    w.f64s(c.data(), n_);
    w.f64s(b.data(), m);
    std::vector<std::int64_t> colptr(A.outerSize() + 1), rowind(A.nonZeros());
    for (long j = 0; j <= A.outerSize(); ++j) colptr[j] = A.outerIndexPtr()[j];
    for (long k = 0; k < A.nonZeros(); ++k) rowind[k] = A.innerIndexPtr()[k];
    w.i64s(colptr);
    w.i64s(rowind);
    w.f64s(A.valuePtr(), A.nonZeros());
    w.i64(m_eq);
    w.i64(m - m_eq);
    w.i64(0);  // no soc
    w.i64(0);  // no psd
    w.f64(1e-9);
    w.f64(1e-9);
    w.i64(0);
    w.i64(1);  // route: LP
    w.i64(0);
    w.i64(0);  // no warm start

    auto resp = detail::ConicBackend::instance().request(w.buf);
    detail::WireReader r{resp.data(), resp.data() + resp.size()};
    if (r.i64() != 0x434B5131) throw SolverFailure("bad backend response magic");
    std::int64_t status = r.i64();
    double pobj = r.f64();
    r.f64();
    r.f64();
    r.f64();
    r.i64();
    auto skip_len = [&r](std::vector<double>& v) {
      std::int64_t k = r.i64();
      v.resize(k);
      r.f64s(v.data(), k);
    };
    std::vector<double> x, y, s;
    skip_len(x);
    skip_len(y);
    skip_len(s);

    Outcome out;
    switch (status) {
      case 0: out.status = SolveOutcome::Status::Optimal; break;
      case 2: out.status = SolveOutcome::Status::Infeasible; break;
      case 3: out.status = SolveOutcome::Status::Unbounded; break;
      default: out.status = SolveOutcome::Status::Failed; break;
    }
    if (!out.ok()) return out;
    out.objective = sgn * pobj;
    out.x = Eigen::Map<const Eigen::VectorXd>(x.data(), n_);
    out.y_eq = Eigen::Map<const Eigen::VectorXd>(y.data(), m_eq);
    out.y_ub = Eigen::Map<const Eigen::VectorXd>(y.data() + m_eq, m_l);
    return out;
  }

 private:
  long n_;
  Sense sense_;
  Eigen::VectorXd c_;
  std::vector<char> free_;
  std::vector<Eigen::Triplet<double>> eq_trips_, ub_trips_;
  std::vector<double> b_eq_, b_ub_;
};

}  // namespace causalkit
