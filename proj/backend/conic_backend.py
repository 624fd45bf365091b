#!/usr/bin/env python3
# SPDX-License-Identifier: MIT
"""Conic solver backend.

Long-running worker speaking a simple length-prefixed binary protocol on
stdin/stdout.  Each request is one cone program in the standard form

    minimize    c'x
    subject to  Ax + s = b,   s in K,

with K an ordered product of zero, nonnegative, second-order and PSD
(triangular svec, lower-column-major, off-diagonal scaled by sqrt(2)) cones.
Programs without SOC/PSD blocks are routed to HiGHS via scipy.linprog;
everything else is solved with SCS.  Duals are reported in the convention
``dual objective = -b'y`` (so LP marginals are negated).

Run with ``--self-test`` to exercise both routes on tiny fixtures.
"""

import struct
import sys

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

MAGIC = 0x434B5131  # "CKQ1"

ST_SOLVED = 0
ST_INACCURATE = 1
ST_INFEASIBLE = 2
ST_UNBOUNDED = 3
ST_FAILURE = 4


class Reader:
    def __init__(self, buf):
        self.buf = buf
        self.off = 0

    def ints(self, n):
        out = np.frombuffer(self.buf, dtype="<i8", count=n, offset=self.off)
        self.off += 8 * n
        return out

    def floats(self, n):
        out = np.frombuffer(self.buf, dtype="<f8", count=n, offset=self.off)
        self.off += 8 * n
        return out

    def int1(self):
        return int(self.ints(1)[0])

    def float1(self):
        return float(self.floats(1)[0])


def parse_request(buf):
    r = Reader(buf)
    magic = r.int1()
    if magic != MAGIC:
        raise ValueError("bad request magic")
    kind = r.int1()
    if kind != 1:
        raise ValueError("unknown request kind %d" % kind)
    n, m = r.int1(), r.int1()
    c = r.floats(n)
    b = r.floats(m)
    colptr = r.ints(n + 1)
    nnz = int(colptr[-1])
    rowind = r.ints(nnz)
    vals = r.floats(nnz)
    A = sp.csc_matrix((vals.copy(), rowind.copy(), colptr.copy()), shape=(m, n))
    cone = {}
    cone["z"] = r.int1()
    cone["l"] = r.int1()
    nq = r.int1()
    cone["q"] = [int(v) for v in r.ints(nq)]
    ns = r.int1()
    cone["s"] = [int(v) for v in r.ints(ns)]
    opts = {
        "eps_abs": r.float1(),
        "eps_rel": r.float1(),
        "max_iters": r.int1(),
        "route": r.int1(),  # 0 auto, 1 lp, 2 scs
        "verbose": bool(r.int1()),
    }
    warm = None
    if r.int1():
        warm = (r.floats(n).copy(), r.floats(m).copy(), r.floats(m).copy())
    return c, b, A, cone, opts, warm


def pack_response(status, pobj, dobj, res_pri, res_dual, iters, x, y, s):
    parts = [struct.pack("<qqddddq", MAGIC, status, pobj, dobj, res_pri,
                         res_dual, iters)]
    for arr in (x, y, s):
        a = np.ascontiguousarray(arr, dtype="<f8")
        parts.append(struct.pack("<q", a.size))
        parts.append(a.tobytes())
    payload = b"".join(parts)
    return struct.pack("<Q", len(payload)) + payload


def solve_lp(c, b, A, cone, opts):
    """Zero+nonneg cone program via HiGHS.  All variables are free; bounds
    and nonnegativity arrive as cone rows."""
    z, l = cone["z"], cone["l"]
    A_eq, b_eq = A[:z], b[:z]
    A_ub, b_ub = A[z:z + l], b[z:z + l]
    res = linprog(c, A_ub=A_ub if l else None, b_ub=b_ub if l else None,
                  A_eq=A_eq if z else None, b_eq=b_eq if z else None,
                  bounds=[(None, None)] * A.shape[1], method="highs")
    n, m = A.shape[1], A.shape[0]
    if res.status == 2:
        return (ST_INFEASIBLE, 0.0, 0.0, 0.0, 0.0, 0,
                np.zeros(n), np.zeros(m), np.zeros(m))
    if res.status == 3:
        return (ST_UNBOUNDED, 0.0, 0.0, 0.0, 0.0, 0,
                np.zeros(n), np.zeros(m), np.zeros(m))
    if res.status != 0:
        return (ST_FAILURE, 0.0, 0.0, 0.0, 0.0, 0,
                np.zeros(n), np.zeros(m), np.zeros(m))
    x = np.asarray(res.x)
    y = np.zeros(m)
    if z:
        y[:z] = -np.asarray(res.eqlin.marginals)
    if l:
        y[z:z + l] = -np.asarray(res.ineqlin.marginals)
    s = b - A @ x
    res_pri = float(np.linalg.norm(A_eq @ x - b_eq)) if z else 0.0
    if l:
        viol = np.maximum(A_ub @ x - b_ub, 0.0)
        res_pri = max(res_pri, float(np.linalg.norm(viol)))
    return (ST_SOLVED, float(res.fun), float(res.fun), res_pri, 0.0,
            int(getattr(res, "nit", 0)), x, y, s)


def solve_scs(c, b, A, cone, opts, warm):
    import scs

    data = {"A": A, "b": b.copy(), "c": c.copy()}
    kwargs = dict(eps_abs=opts["eps_abs"], eps_rel=opts["eps_rel"],
                  max_iters=opts["max_iters"], verbose=opts["verbose"])
    if warm is not None:
        data["x"], data["y"], data["s"] = warm
    ks = {k: v for k, v in cone.items() if (v if not isinstance(v, list) else len(v))}
    out = scs.solve(data, ks, **kwargs)
    info = out["info"]
    status = info.get("status", "").lower()
    if status.startswith("solved"):
        st = ST_INACCURATE if "inaccurate" in status else ST_SOLVED
    elif "infeasible" in status:
        st = ST_INFEASIBLE
    elif "unbounded" in status:
        st = ST_UNBOUNDED
    else:
        st = ST_FAILURE
    n, m = A.shape[1], A.shape[0]
    x = out.get("x")
    y = out.get("y")
    s = out.get("s")
    x = np.zeros(n) if x is None or np.any(~np.isfinite(x)) else x
    y = np.zeros(m) if y is None or np.any(~np.isfinite(y)) else y
    s = np.zeros(m) if s is None or np.any(~np.isfinite(s)) else s
    return (st, float(info.get("pobj", 0.0)), float(info.get("dobj", 0.0)),
            float(info.get("res_pri", 0.0)), float(info.get("res_dual", 0.0)),
            int(info.get("iter", 0)), x, y, s)


def handle(buf):
    c, b, A, cone, opts, warm = parse_request(buf)
    route = opts["route"]
    is_lp = not cone["q"] and not cone["s"]
    try:
        if route == 1 or (route == 0 and is_lp):
            result = solve_lp(c, b, A, cone, opts)
        else:
            result = solve_scs(c, b, A, cone, opts, warm)
    except Exception as exc:  # report solver breakdown, keep worker alive
        sys.stderr.write("backend error: %r\n" % (exc,))
        sys.stderr.flush()
        n, m = A.shape[1], A.shape[0]
        result = (ST_FAILURE, 0.0, 0.0, 0.0, 0.0, 0,
                  np.zeros(n), np.zeros(m), np.zeros(m))
    return pack_response(*result)


def serve():
    stdin = sys.stdin.buffer
    stdout = sys.stdout.buffer
    while True:
        head = stdin.read(8)
        if len(head) < 8:
            return
        (length,) = struct.unpack("<Q", head)
        buf = b""
        while len(buf) < length:
            chunk = stdin.read(length - len(buf))
            if not chunk:
                return
            buf += chunk
        stdout.write(handle(buf))
        stdout.flush()


def self_test():
    # LP: max x s.t. 0 <= x <= 1 -> 1  (min -x; rows: x <= 1, -x <= 0)
    A = sp.csc_matrix(np.array([[1.0], [-1.0]]))
    st, pobj, *_ = solve_lp(np.array([-1.0]), np.array([1.0, 0.0]), A,
                            {"z": 0, "l": 2, "q": [], "s": []}, {})
    assert st == ST_SOLVED and abs(pobj + 1.0) < 1e-9, (st, pobj)

    # SDP: min tr(CX) s.t. tr(X) = 1, X psd 2x2, C = diag(1, 2) -> 1
    r2 = np.sqrt(2.0)
    # x = svec(X) = [X00, r2 X10, X11]
    rows = [[1.0, 0.0, 1.0],             # zero cone: tr X = 1
            [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, -1.0]]  # psd: s = x
    A = sp.csc_matrix(np.array(rows))
    b = np.array([1.0, 0.0, 0.0, 0.0])
    c = np.array([1.0, 0.0, 2.0])
    st, pobj, *_rest = solve_scs(c, b, A, {"z": 1, "l": 0, "q": [], "s": [2]},
                                 dict(eps_abs=1e-10, eps_rel=1e-10,
                                      max_iters=100000, verbose=False), None)
    assert st == ST_SOLVED and abs(pobj - 1.0) < 1e-8, (st, pobj)

    # Infeasible LP: x <= -1, -x <= 0
    A = sp.csc_matrix(np.array([[1.0], [-1.0]]))
    st, *_ = solve_lp(np.array([0.0]), np.array([-1.0, 0.0]), A,
                      {"z": 0, "l": 2, "q": [], "s": []}, {})
    assert st == ST_INFEASIBLE, st
    print("self-test ok")


if __name__ == "__main__":
    if len(sys.argv) > 1 and sys.argv[1] == "--self-test":
        self_test()
    else:
        serve()
