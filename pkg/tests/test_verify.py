import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nnsos.errors import ModelError
from nnsos.fixtures import data_path, scalar_linear_model
from nnsos.semialg import load_model, model_from_dict
from nnsos.verify import (FAILED_ORIGIN_GATE, INCONCLUSIVE, INVALID, NOT_LINEARLY_STABLE,
                          UNVALIDATED, VALID, Certificate, NotLinearlyStable, RoaConfig,
                          VerifyConfig, boundary_points, check_nesting, export_grid,
                          init_linearization, lyapunov_matrix, maximize_gamma, run_algorithm1,
                          validate_certificate, verify_global, verify_local_candidate,
                          verify_local_two_step)


def scalar(a):
    return model_from_dict(scalar_linear_model(a))


# -- global -------------------------------------------------------------------

def test_global_stable_scalar_is_valid():
    cert = verify_global(scalar(0.5), 2)
    assert cert.status == VALID
    assert cert.validation["checks"]["decrease"]["passed"]


def test_global_zero_map_is_valid():
    assert verify_global(scalar(0.0), 2).status == VALID


def test_global_without_validation_stays_unvalidated():
    cert = verify_global(scalar(0.5), 2, VerifyConfig(validate=False))
    assert cert.status == UNVALIDATED
    assert cert.validation is None


def test_global_unstable_scalar_is_inconclusive():
    cert = verify_global(scalar(1.5), 2)
    assert cert.status == INCONCLUSIVE and cert.V is None


# -- local --------------------------------------------------------------------

def test_two_step_sublevel_fills_region():
    model = scalar(0.5)
    x = model.universe.var("x1")
    cert = verify_local_two_step(model, 1 - x * x, 2)
    assert cert.status == VALID
    # V is even in x here, so the largest sublevel set inside [-1, 1] ends at V(1)
    v1 = float(cert.V(model.zeta(np.array([[1.0]])))[0])
    assert cert.gamma <= v1 * (1 + 1e-6)
    assert cert.gamma >= v1 * (1 - 5e-3)


def test_region_must_contain_origin():
    model = scalar(0.5)
    x = model.universe.var("x1")
    with pytest.raises(ModelError, match="origin"):
        verify_local_two_step(model, x * x - 1, 2)


def test_region_only_in_states():
    model = load_model(data_path("saturated_lqr.json"))
    lam = model.universe.var(model.universe.names[model.n])
    with pytest.raises(ModelError):
        verify_local_two_step(model, 1 - lam * lam, 2)


def test_candidate_on_stable_scalar_is_valid():
    model = scalar(0.5)
    x = model.universe.var("x1")
    assert verify_local_candidate(model, 1 - x * x, 2).status == VALID


def test_unstable_map_never_valid_even_without_gate():
    model = load_model(data_path("scalar_unstable.json"))
    x = model.universe.var("x1")
    q = 0.25 - x * x
    gated = verify_local_two_step(model, q, 4)
    assert gated.status in (FAILED_ORIGIN_GATE, INCONCLUSIVE)
    open_gate = verify_local_two_step(model, q, 4, VerifyConfig(origin_gate=False))
    assert open_gate.status == INVALID
    failed = [c for c in open_gate.validation["checks"].values() if not c["passed"]]
    assert any("witness" in c for c in failed)


# -- certificates and validation ----------------------------------------------

def test_certificate_json_round_trip():
    model = scalar(0.5)
    cert = verify_global(model, 2)
    back = Certificate.from_json(json.loads(json.dumps(cert.to_json(model.universe))), model.universe)
    assert back.status == cert.status and back.kind == cert.kind
    assert back.V.allclose(cert.V, atol=0)


def test_malformed_certificate_rejected():
    with pytest.raises(ModelError):
        Certificate.from_json({"status": VALID}, scalar(0.5).universe)


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        Certificate("bogus", VALID, "m")


def test_tampered_V_fails_validation():
    model = scalar(0.5)
    x = model.universe.var("x1")
    cert = Certificate("global_GAS", UNVALIDATED, model.name, V=0.1 * x * x)
    rep = validate_certificate(model, cert)
    assert cert.status == INVALID and not rep["passed"]
    assert rep["checks"]["decrease"]["witness"] is not None


def test_validation_needs_V():
    with pytest.raises(ModelError):
        validate_certificate(scalar(0.5), Certificate("global_GAS", UNVALIDATED, "m"))


def test_misplaced_minimum_detected():
    model = scalar(0.0)
    x = model.universe.var("x1")
    # minimum at x^2 = 1/2, away from the origin
    V = x ** 4 - x * x + 1
    cert = Certificate("global_GAS", UNVALIDATED, model.name, V=V)
    validate_certificate(model, cert)
    assert not cert.validation["checks"]["argmin_at_origin"]["passed"]


# -- linearisation ---------------------------------------------------------------

def test_lyapunov_matrix_cases():
    assert lyapunov_matrix(np.zeros((2, 2))) == pytest.approx(np.eye(2))
    assert lyapunov_matrix(np.array([[0.5]])) == pytest.approx(np.array([[4.0 / 3.0]]))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_lyapunov_matrix_solves_equation(seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((3, 3))
    A *= 0.9 / max(abs(np.linalg.eigvals(A)))
    P = lyapunov_matrix(A)
    assert P - A.T @ P @ A == pytest.approx(np.eye(3), abs=1e-8)
    assert np.linalg.eigvalsh(P)[0] >= 1.0 - 1e-9


def test_unstable_linearisation_rejected():
    with pytest.raises(NotLinearlyStable):
        init_linearization(scalar(1.2))
    assert run_algorithm1(scalar(1.2)).status == NOT_LINEARLY_STABLE


# -- region helpers --------------------------------------------------------------

def test_boundary_points_of_disc():
    model = load_model(data_path("saturated_lqr.json"))
    x1, x2 = model.universe.vars("x")
    pts = boundary_points(model, 4 - x1 * x1 - x2 * x2, 200)
    assert pts.shape == (2, 200)
    assert np.linalg.norm(pts, axis=0) == pytest.approx(np.full(200, 2.0), abs=1e-9)


def test_check_nesting():
    model = load_model(data_path("saturated_lqr.json"))
    x1, x2 = model.universe.vars("x")
    small, big = 1 - x1 * x1 - x2 * x2, 4 - x1 * x1 - x2 * x2
    assert check_nesting(model, small, big, 100)["passed"]
    out = check_nesting(model, big, small, 100)
    assert not out["passed"] and out["worst"] == pytest.approx(-3.0, abs=1e-6)


def test_export_grid(tmp_path):
    model = load_model(data_path("saturated_lqr.json"))
    x1, x2 = model.universe.vars("x")
    cert = Certificate("sequential_ROA", UNVALIDATED, model.name, V=x1 * x1 + x2 * x2,
                       q=1 - x1 * x1)
    path = tmp_path / "grid.csv"
    assert export_grid(model, cert, path, points=11) == 121
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["x1", "x2", "V", "q"] and len(rows) == 122
    with pytest.raises(ModelError):
        export_grid(scalar(0.5), cert, tmp_path / "g.csv")


# -- gamma maximisation ---------------------------------------------------------

def test_maximize_gamma_threshold():
    gamma, probes = maximize_gamma(lambda g: (g <= 3.0, None), 0.0)
    assert gamma == pytest.approx(3.0, rel=2e-3) and gamma <= 3.0
    assert all(ok == (g <= 3.0) for g, ok in probes)


def test_maximize_gamma_none_when_origin_not_covered():
    gamma, probes = maximize_gamma(lambda g: (False, None), 1.0)
    assert gamma is None and len(probes) == 1


def test_maximize_gamma_unbounded_stops():
    gamma, _ = maximize_gamma(lambda g: (True, None), 0.0, max_doublings=5)
    assert gamma == pytest.approx(1e-3 * 2 ** 4)


# -- sequential invariant sets ----------------------------------------------------

def test_algorithm_resumes_from_history():
    model = load_model(data_path("saturated_lqr.json"))
    cfg = VerifyConfig(validate=False)
    first = run_algorithm1(model, RoaConfig(max_iter=1, nesting_points=100), cfg)
    assert first.status == UNVALIDATED and len(first.history) == 1
    assert first.history[0]["nesting"][0]["passed"]
    again = run_algorithm1(model, RoaConfig(max_iter=2, nesting_points=100), cfg,
                           history=json.loads(json.dumps(first.history)))
    assert len(again.history) == 2 and any("resumed" in n for n in again.notes)
    assert again.alpha >= first.alpha
