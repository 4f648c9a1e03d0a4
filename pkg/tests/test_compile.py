import numpy as np
import pytest

from nnsos.compile import CompileConfig, compile_program, export_sdp, extract, newton_basis
from nnsos.errors import CompileError, ExtractionError
from nnsos.fixtures import data_path, scalar_linear_model
from nnsos.poly import Polynomial, Universe, mono, monomial_basis, quad_form
from nnsos.sdpdata import SdpData, SdpSolution, smat, svec
from nnsos.semialg import load_model, model_from_dict
from nnsos.solver import solve
from nnsos.sosir import Expr, Frame, SosProgram, constraint_decrease, param_V_general


@pytest.fixture
def uni():
    u = Universe()
    u.add_block("x", 2)
    return u.freeze()


def test_single_sos_block():
    u = Universe()
    u.add_block("x", 1)
    u.freeze()
    prog = SosProgram(u)
    prog.sos(monomial_basis([0], 1), "sigma")
    data = compile_program(prog).data
    assert data.psd == [2]
    assert data.n_rows == 0


def unstable_residual(uni1):
    x = uni1.var("x1")
    V = (x - 2.0) ** 2 * (x + 2.0) ** 2 / 5.0
    return V - V.substitute({0: 2 * x}) - x * x - x ** 4 * (0.25 - x * x)


@pytest.mark.parametrize("fr", [True, False])
def test_unstable_identity_rows(fr):
    u = Universe()
    u.add_block("x", 1)
    u.freeze()
    prog = SosProgram(u)
    basis = [mono({0: 1}), mono({0: 2}), mono({0: 3})]
    prog.add("dec", Expr.const(unstable_residual(u)), gram_basis=basis)
    comp = compile_program(prog, CompileConfig(facial_reduction=fr))
    assert comp.data.psd == [3]
    # one row per monomial x^2 .. x^6
    assert [m for _, m in comp.row_labels] == [mono({0: d}) for d in range(2, 7)]
    sol = solve(comp.data)
    assert sol.feasible
    ex = extract(comp, sol)
    assert ex.max_residual <= 1e-5


def test_uncovered_monomial_named():
    u = Universe()
    u.add_block("x", 1)
    u.freeze()
    x = u.var("x1")
    prog = SosProgram(u)
    prog.add("c", Expr.const(x ** 4 + x + 1), gram_basis=[mono({0: 2}), mono({})])
    with pytest.raises(CompileError, match=r"x1"):
        compile_program(prog)


def test_unknown_block_rejected(uni):
    prog = SosProgram(uni)
    other = SosProgram(uni)
    _, e = other.sos(monomial_basis([0], 1), "s")
    prog.add("c", e)
    with pytest.raises(CompileError):
        compile_program(prog)


def test_msd_quartic_V_block_is_6x6():
    m = load_model(data_path("msd_implicit.json"))
    frame = Frame(m)
    prog = SosProgram(m.universe)
    V = param_V_general(prog, frame, 4)
    constraint_decrease(prog, frame, V)
    comp = compile_program(prog)
    (bid,) = V.blocks
    assert len(comp.kept[bid]) == 6
    assert 6 in comp.data.psd


def test_identity_gram_extracts_sum_of_squares(uni):
    x1, x2 = uni.vars("x")
    prog = SosProgram(uni)
    basis = monomial_basis([0, 1], 1)
    blk, sigma = prog.sos(basis, "sigma")
    prog.add("fix", sigma - (1 + x1 * x1 + x2 * x2), sense="zero")
    comp = compile_program(prog)
    sol = solve(comp.data)
    ex = extract(comp, sol)
    assert ex.blocks[blk.id] == pytest.approx(np.eye(3), abs=1e-6)
    assert ex.polys[blk.id].allclose(1 + x1 * x1 + x2 * x2, atol=1e-6)


def test_extract_refuses_infeasible():
    with pytest.raises(ExtractionError):
        extract(None, SdpSolution("infeasible_certificate"))


def test_newton_basis_prunes_to_polytope():
    # x^4 + y^2: half polytope spans 1, x, x^2, y only
    s = [mono({0: 4}), mono({1: 2})]
    b = set(newton_basis(s))
    assert b <= {mono({}), mono({0: 1}), mono({0: 2}), mono({1: 1})}
    assert mono({0: 2}) in b and mono({1: 1}) in b
    assert mono({0: 1, 1: 1}) not in b


def toy_program(uni, rng, feasible, scale=1.0):
    """``p`` SOS by construction, or negative at a random point."""
    basis = monomial_basis([0, 1], 2)
    L = rng.standard_normal((len(basis), len(basis)))
    G = L @ L.T + 0.1 * np.eye(len(basis))
    nu = [mono_poly(uni, m) for m in basis]
    p = quad_form(nu, G)
    if not feasible:
        pt = rng.uniform(-1, 1, 2)
        p = p - (float(p(pt)) + 1.0)
    prog = SosProgram(uni)
    prog.add("c", Expr.const(scale * p))
    return prog, scale * p


def mono_poly(uni, m):
    return Polynomial.from_monomial(m, 1.0, uni)


@pytest.mark.parametrize("seed", range(20))
def test_scaling_keeps_status(uni, seed):
    rng = np.random.default_rng(seed)
    feasible = bool(seed % 2)
    state = rng.bit_generator.state
    prog1, _ = toy_program(uni, rng, feasible)
    rng.bit_generator.state = state
    prog10, _ = toy_program(uni, rng, feasible, scale=10.0)
    s1 = solve(compile_program(prog1).data).status
    s10 = solve(compile_program(prog10).data).status
    assert s1 == s10 == ("feasible" if feasible else "infeasible_certificate")


@pytest.mark.parametrize("seed", range(10))
def test_round_trip_residual(uni, seed):
    rng = np.random.default_rng(100 + seed)
    prog, p = toy_program(uni, rng, True)
    comp = compile_program(prog)
    sol = solve(comp.data)
    ex = extract(comp, sol)
    assert ex.max_residual <= 1e-5
    G = ex.blocks[comp.gram_of["c"]]
    nu = [mono_poly(uni, m) for m in comp.blocks[comp.gram_of["c"]].basis]
    assert quad_form(nu, G).allclose(p, atol=1e-5)
    assert np.linalg.eigvalsh(G)[0] >= -1e-5


def test_compilation_is_deterministic():
    def build():
        m = model_from_dict(scalar_linear_model(0.5))
        frame = Frame(m)
        prog = SosProgram(m.universe)
        constraint_decrease(prog, frame, param_V_general(prog, frame, 4))
        return compile_program(prog).data
    a, b = build(), build()
    assert a.dumps() == b.dumps()


def test_svec_is_isometric():
    rng = np.random.default_rng(0)
    for k in (1, 2, 5):
        A = rng.standard_normal((k, k))
        A = A + A.T
        B = rng.standard_normal((k, k))
        B = B + B.T
        assert svec(A) @ svec(B) == pytest.approx(np.trace(A @ B))
        assert smat(svec(A), k) == pytest.approx(A)


def test_export_includes_row_labels():
    m = model_from_dict(scalar_linear_model(0.5))
    frame = Frame(m)
    prog = SosProgram(m.universe)
    constraint_decrease(prog, frame, param_V_general(prog, frame, 2))
    comp = compile_program(prog)
    d = export_sdp(comp)
    assert len(d["row_labels"]) == comp.data.n_rows
    assert SdpData.from_json(d).dumps() == comp.data.dumps()
