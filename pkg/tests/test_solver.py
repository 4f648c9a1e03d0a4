import sys

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from nnsos.errors import SolverError
from nnsos.sdpdata import SdpData, SdpSolution, smat, svec
from nnsos.solver import SolverConfig, line_search, solve, solve_builtin, solve_external

from sdp_cases import analytic_cases, oracle_cases

E11 = np.array([[1.0, 0.0], [0.0, 0.0]])


def one_block(mats, rhs, C):
    A = sp.csr_matrix(np.array([svec(M) for M in mats]))
    return SdpData(0, 0, [C.shape[0]], A, np.array(rhs, float), svec(C))


def test_trace_minimisation():
    sol = solve(one_block([E11], [1.0], np.eye(2)))
    assert sol.status == "feasible"
    assert sol.primal_obj == pytest.approx(1.0, abs=1e-6)
    assert smat(sol.x, 2) == pytest.approx(E11, abs=1e-5)


def test_negative_scalar_is_infeasible():
    data = SdpData(0, 1, [], sp.csr_matrix(np.array([[1.0]])), np.array([-1.0]), np.zeros(1))
    assert solve(data).status == "infeasible_certificate"


def test_unbounded_objective_reported():
    # min -x11 over x11 = x11 free of bounds except PSD, with x22 = 1
    E22 = np.array([[0.0, 0.0], [0.0, 1.0]])
    sol = solve(one_block([E22], [1.0], -E11))
    assert sol.status == "unbounded"


def test_tolerance_must_be_positive():
    with pytest.raises(ValueError):
        SolverConfig(tol=0.0)


CASES = analytic_cases() + oracle_cases()


@pytest.mark.parametrize("case", analytic_cases(), ids=lambda c: c.name)
def test_analytic_cases(case):
    sol = solve(case.data)
    assert sol.status == case.status
    if case.optimum is not None:
        assert sol.primal_obj == pytest.approx(case.optimum, abs=1e-5)


@pytest.mark.parametrize("case", [c for c in CASES if c.status == "feasible"], ids=lambda c: c.name)
def test_feasible_solutions_are_certified(case):
    tol = 1e-6
    sol = solve(case.data, SolverConfig(tol=tol))
    r = sol.residuals
    assert r["primal"] <= tol and r["dual"] <= tol and r["gap"] <= tol
    # weak duality for approximate iterates: c.x - b.y = x.s + y.(Ax - b) - x.(A'y + s - c),
    # so the gap can only fall below zero by the residual terms
    d = case.data
    slack = abs(sol.y @ (d.A @ sol.x - d.b)) + abs(sol.x @ (d.A.T @ sol.y + sol.s - d.c))
    assert sol.x @ sol.s >= -1e-12
    assert sol.primal_obj - sol.dual_obj >= -slack - 1e-12
    assert r["min_eig"] >= -10 * tol


@pytest.mark.parametrize("case", CASES[:10], ids=lambda c: c.name)
def test_solves_are_deterministic(case):
    a, b = solve(case.data), solve(case.data)
    assert a.status == b.status
    assert a.iterations == b.iterations
    if a.x is not None:
        assert np.array_equal(a.x, b.x)


def test_solution_json_round_trip():
    sol = solve(one_block([E11], [1.0], np.eye(2)))
    back = SdpSolution.from_json(sol.to_json())
    assert back.status == sol.status
    assert np.allclose(back.x, sol.x)


# -- external backends ------------------------------------------------------------

def test_external_backend_agrees():
    case = oracle_cases(count=1)[0]
    ext = solve(case.data, SolverConfig(backend="cvxpy"))
    own = solve_builtin(case.data)
    assert ext.status == own.status == "feasible"
    assert ext.primal_obj == pytest.approx(own.primal_obj, abs=1e-5)


def test_backend_failure_is_solver_error():
    data = one_block([E11], [1.0], np.eye(2))
    with pytest.raises(SolverError, match="exited"):
        solve_external(data, f"{sys.executable} -c 'import sys; sys.exit(4)'")
    with pytest.raises(SolverError, match="unreadable"):
        solve_external(data, f"{sys.executable} -c 'print(1)'")
    with pytest.raises(SolverError, match="failed to run"):
        solve_external(data, "/nonexistent/solver")


def test_backend_env_variable(monkeypatch):
    monkeypatch.setenv("NNSOS_BACKEND", f"{sys.executable} -c 'import sys; sys.exit(5)'")
    with pytest.raises(SolverError):
        solve(one_block([E11], [1.0], np.eye(2)))


# -- line search ------------------------------------------------------------------

def threshold(t):
    return lambda a: (a <= t, {"alpha": a})


def test_line_search_finds_threshold():
    res = line_search(2.0, 3.0, threshold(2.84), rel_tol=1e-3)
    assert res.value == pytest.approx(2.84, rel=1e-3)
    assert res.value <= 2.84
    assert res.artifact == {"alpha": res.value}
    assert not res.non_monotone


def test_line_search_all_feasible_returns_hi():
    res = line_search(2.0, 3.0, threshold(10.0))
    assert res.value == 3.0 and res.hit_upper


def test_line_search_flags_non_monotone():
    feasible = lambda a: (a <= 2.2 or 2.6 <= a <= 2.7, None)
    res = line_search(2.0, 3.0, feasible, rel_tol=1e-3, recheck=4)
    assert feasible(res.value)[0]
    assert res.non_monotone
    assert 2.6 <= res.value <= 2.7
    assert not line_search(2.0, 3.0, feasible, rel_tol=1e-3).non_monotone


def test_line_search_checks_lower_end():
    with pytest.raises(ValueError):
        line_search(3.0, 4.0, threshold(2.0), check_lo=True)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 5.0), st.floats(0.01, 5.0), st.floats(0.0, 1.0))
def test_line_search_bracket_property(lo, width, frac):
    t = lo + frac * width
    res = line_search(lo, lo + width, threshold(t), rel_tol=1e-3)
    assert res.value <= t
    if res.value < lo + width:
        assert t - res.value <= 1e-3 * max(abs(res.value), 1.0) + 1e-12
