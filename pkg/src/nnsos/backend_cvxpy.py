"""External SDP backend speaking the SdpData/SdpSolution JSON protocol.

Run as ``python -m nnsos.backend_cvxpy``: reads SdpData JSON on stdin,
solves it with cvxpy (Clarabel by default) and writes SdpSolution JSON on
stdout.  Exit status is nonzero when the backend itself fails.
"""

from __future__ import annotations

import json
import sys

import numpy as np


def solve_payload(d: dict, solver: str = "CLARABEL") -> dict:
    import cvxpy as cp

    from .sdpdata import SdpData, svec_len

    data = SdpData.from_json(d)
    n = data.n_vars
    x = cp.Variable(n)
    cons = [data.A @ x == data.b]
    if data.n_lp:
        cons.append(x[data.n_free:data.n_free + data.n_lp] >= 0)
    blocks = []
    for off, k in zip(data.offsets(), data.psd):
        X = cp.Variable((k, k), symmetric=True)
        cons.append(X >> 0)
        cons.append(x[off:off + svec_len(k)] == _svec_expr(X, k))
        blocks.append(X)
    prob = cp.Problem(cp.Minimize(data.c @ x), cons)
    try:
        prob.solve(solver=solver)
    except cp.error.SolverError as e:
        return {"status": "unknown", "info": {"error": str(e)}}
    st = prob.status
    out = {"iterations": int(prob.solver_stats.num_iters or 0) if prob.solver_stats else 0,
           "info": {"backend_status": st, "solver": solver}}
    if st in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        xv = np.asarray(x.value, dtype=float)
        y = -np.asarray(cons[0].dual_value, dtype=float)
        s = data.c - data.A.T @ y
        out.update(status="feasible" if st == cp.OPTIMAL else "unknown", x=xv.tolist(), y=y.tolist(),
                   s=s.tolist(), primal_obj=float(data.c @ xv), dual_obj=float(data.b @ y))
    elif st in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        out["status"] = "infeasible_certificate" if st == cp.INFEASIBLE else "unknown"
    elif st in (cp.UNBOUNDED, cp.UNBOUNDED_INACCURATE):
        out["status"] = "unbounded" if st == cp.UNBOUNDED else "unknown"
    else:
        out["status"] = "unknown"
    return out


def _svec_expr(X, k):
    """Packed lower triangle of X as one sparse linear map of vec(X)."""
    import cvxpy as cp
    import scipy.sparse as sp

    from .sdpdata import tril_indices, SQRT2
    r, c = tril_indices(k)
    scale = np.where(r == c, 1.0, SQRT2)
    # cvxpy's vec is column-major: entry (i, j) sits at j * k + i
    S = sp.csr_matrix((scale, (np.arange(len(r)), c * k + r)), shape=(len(r), k * k))
    return S @ cp.vec(X, order="F")


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    solver = argv[0] if argv else "CLARABEL"
    try:
        d = json.load(sys.stdin)
        out = solve_payload(d, solver)
    except Exception as e:  # report any backend failure through the exit status
        print(f"backend failure: {e}", file=sys.stderr)
        return 1
    json.dump(out, sys.stdout)
    return 0


if __name__ == "__main__":
    sys.exit(main())
