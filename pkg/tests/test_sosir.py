import numpy as np
import pytest

from nnsos.compile import compile_program, extract
from nnsos.errors import ModelError
from nnsos.fixtures import data_path, scalar_linear_model
from nnsos.poly import Polynomial
from nnsos.semialg import load_model, model_from_dict
from nnsos.solver import solve
from nnsos.sosir import (EPS_PREC, Expr, Frame, MultiplierConfig, SosProgram, barrier_k,
                         constraint_barrier, constraint_decrease, constraint_q_superset,
                         constraint_sublevel, fixed_param, param_q, param_V_candidate,
                         param_V_general)


def solved(prog):
    comp = compile_program(prog)
    sol = solve(comp.data)
    return sol, (extract(comp, sol) if sol.feasible else None)


def scalar_frame(a):
    m = model_from_dict(scalar_linear_model(a))
    return m, Frame(m)


def random_values(prog, rng):
    """Random decision values with every SOS block PSD and scalars nonnegative."""
    values = {}
    for blk in prog.blocks.values():
        if blk.kind == "sos":
            k = len(blk.basis)
            L = rng.standard_normal((k, k))
            G = L @ L.T
            for key in blk.keys():
                values[key] = G[key[1], key[2]]
        elif blk.kind == "free":
            for key in blk.keys():
                values[key] = rng.standard_normal()
        else:
            values[blk.keys()[0]] = rng.uniform(0, 2)
    return values


# -- Lyapunov parameterisations ---------------------------------------------------

def test_quartic_general_V_uses_one_6x6_block():
    m = load_model(data_path("msd_implicit.json"))
    prog = SosProgram(m.universe)
    V = param_V_general(prog, Frame(m), 4)
    (bid,) = V.blocks
    assert len(prog.blocks[bid].basis) == 6


def test_general_V_block_count_with_inequalities():
    m = load_model(data_path("zero_index_example.json"))
    frame = Frame(m)
    prog = SosProgram(m.universe)
    V = param_V_general(prog, frame, 2, basis_vars="zeta", ineq_terms=True)
    assert len(V.blocks) == 1 + len(frame.g)


@pytest.mark.parametrize("seed", range(5))
def test_general_V_is_nonnegative_on_traces(seed):
    m = load_model(data_path("zero_index_example.json"))
    frame = Frame(m)
    prog = SosProgram(m.universe)
    V = param_V_general(prog, frame, 2, basis_vars="zeta", ineq_terms=True)
    rng = np.random.default_rng(seed)
    Vp = frame.raw(V.expr.value(random_values(prog, rng)))
    Z = m.zeta(rng.uniform(-3, 3, (2, 1000)))
    assert np.min(Vp(Z)) >= -1e-9


def test_odd_degree_rejected():
    m, frame = scalar_frame(0.5)
    with pytest.raises(ModelError):
        param_V_general(SosProgram(m.universe), frame, 3)


def test_candidate_terms_for_zero_index_example():
    m = load_model(data_path("zero_index_example.json"))
    frame = Frame(m)
    prog = SosProgram(m.universe)
    V = param_V_candidate(prog, frame, 2)
    # q1 g3 + q2 g1 g3 + q3 g2 g3; g3 g4 is a multiple of an equality and is skipped
    assert V.meta["products"] == [[2], [0, 2], [1, 2]]
    assert prog.blocks[V.blocks[1]].eps == EPS_PREC


@pytest.mark.parametrize("name", ["zero_index_example.json", "msd_implicit.json",
                                  "saturated_lqr.json"])
def test_candidate_vanishes_at_origin_trace(name):
    m = load_model(data_path(name))
    frame = Frame(m)
    prog = SosProgram(m.universe)
    V = param_V_candidate(prog, frame, 2)
    assert V.expr.constant_terms() == {}
    Vp = frame.raw(V.expr.value(random_values(prog, np.random.default_rng(0))))
    assert abs(Vp(m.zeta0())) <= 1e-9


# -- decrease -------------------------------------------------------------------

def unstable_V(uni):
    x = uni.var("x1")
    return (x - 2.0) ** 2 * (x + 2.0) ** 2 / 5.0


def test_unstable_decrease_with_fixed_multiplier_is_sos():
    m, frame = scalar_frame(2.0)
    x = m.universe.var("x1")
    prog = SosProgram(m.universe)
    q = Expr.const(0.25 - x * x)
    con = constraint_decrease(prog, frame, fixed_param(unstable_V(m.universe)), q=[q], q_mult=[x ** 4])
    lhs = con.expr.fixed()
    expected = unstable_V(m.universe) - unstable_V(m.universe).substitute({0: 2 * x}) - x * x \
        - x ** 4 * (0.25 - x * x)
    assert lhs.allclose(expected, atol=1e-12)
    sol, _ = solved(prog)
    assert sol.status == "feasible"


def test_global_decrease_has_no_region_multiplier():
    m, frame = scalar_frame(0.5)
    prog = SosProgram(m.universe)
    constraint_decrease(prog, frame, param_V_general(prog, frame, 2))
    assert not [b for b in prog.blocks if b.startswith("decrease_q")]


def test_decrease_multiplier_counts():
    m = load_model(data_path("zero_index_example.json"))
    frame = Frame(m)
    prog = SosProgram(m.universe)
    con = constraint_decrease(prog, frame, param_V_general(prog, frame, 2), cfg=MultiplierConfig(budget=2))
    _, g, h = frame.loop_graph()
    made = con.meta["multipliers"]
    assert len(made["ineq"]) == len(g)
    assert len(made["eq"]) == len(h)


def test_stable_scalar_decrease_feasible():
    m, frame = scalar_frame(0.5)
    prog = SosProgram(m.universe)
    constraint_decrease(prog, frame, param_V_general(prog, frame, 2))
    sol, _ = solved(prog)
    assert sol.status == "feasible"


def test_decision_region_needs_fixed_multiplier():
    m, frame = scalar_frame(0.5)
    prog = SosProgram(m.universe)
    q, _, _ = param_q(prog, frame, 2)
    with pytest.raises(ModelError):
        constraint_decrease(prog, frame, param_V_general(prog, frame, 2), q=[q])


# -- sublevel -------------------------------------------------------------------

@pytest.mark.parametrize("gamma,feasible", [(0.5, True), (0.99, True), (1.05, False), (2.0, False)])
def test_sublevel_of_x2_inside_unit_interval(gamma, feasible):
    # {x^2 <= gamma} lies in {1 - x^2 >= 0} exactly when gamma <= 1
    m, frame = scalar_frame(0.5)
    x = m.universe.var("x1")
    prog = SosProgram(m.universe)
    constraint_sublevel(prog, frame, x * x, gamma, [1 - x * x])
    sol, _ = solved(prog)
    assert sol.feasible == feasible


def test_sublevel_one_constraint_per_region_entry():
    m, frame = scalar_frame(0.5)
    x = m.universe.var("x1")
    prog = SosProgram(m.universe)
    cons = constraint_sublevel(prog, frame, x * x, 0.5, [1 - x * x, 2 - x * x, 3 - x])
    assert len(cons) == 3


# -- region parameterisation and barrier ---------------------------------------

def test_param_q_vanishes_at_origin():
    m = load_model(data_path("saturated_lqr.json"))
    frame = Frame(m)
    prog = SosProgram(m.universe)
    q, sblk, ablk = param_q(prog, frame, 4, basis_vars="x")
    assert len(sblk.basis) == 5  # [x1, x2, x1^2, x1 x2, x2^2]
    assert ablk.sign == "positive" and ablk.eps == EPS_PREC
    sigma = prog.block_expr(sblk)
    assert sigma.constant_terms() == {}


def test_barrier_k_degree_matching():
    assert barrier_k(2, 2) == 0
    assert barrier_k(2, 4) == 1
    assert barrier_k(2, 5) == 2
    assert barrier_k(4, 6) == 1


def test_barrier_k0_is_plain_successor():
    m, frame = scalar_frame(0.5)
    x = m.universe.var("x1")
    prog = SosProgram(m.universe)
    con = constraint_barrier(prog, frame, Expr.const(1 - x * x), k=0, q_mult=Polynomial.zero(m.universe),
                             cfg=MultiplierConfig(ineq_degree=-1, eq_degree=-1))
    assert con.expr.fixed().allclose(1 - 0.25 * x * x)


def test_barrier_invariance_solution_holds_on_samples():
    # x+ = 0.5 x keeps {1 - x^2 >= 0} invariant
    m, frame = scalar_frame(0.5)
    x = m.universe.var("x1")
    prog = SosProgram(m.universe)
    con = constraint_barrier(prog, frame, Expr.const(1 - x * x), k=0)
    sol, ex = solved(prog)
    assert sol.feasible
    (mult,) = [ex.polys.get(b, None) if b in ex.polys else Polynomial.const(ex.scalar(b), m.universe)
               for b in prog.blocks if b.startswith("barrier_q")]
    X = np.linspace(-3, 3, 601)
    lhs = (1 - 0.25 * X * X) - (1 - X * X) * mult([X])
    assert np.min(lhs) >= -1e-6


def test_barrier_infeasible_for_unstable_map():
    m, frame = scalar_frame(2.0)
    x = m.universe.var("x1")
    prog = SosProgram(m.universe)
    constraint_barrier(prog, frame, Expr.const(1 - x * x), k=0)
    sol, _ = solved(prog)
    assert not sol.feasible


# -- superset -----------------------------------------------------------------

def test_superset_trivially_feasible_for_same_sigma():
    m = load_model(data_path("saturated_lqr.json"))
    frame = Frame(m)
    x1, x2 = m.universe.vars("x")
    old = frame.center(x1 * x1 + x1 * x2 + 2 * x2 * x2)
    prog = SosProgram(m.universe)
    constraint_q_superset(prog, frame, Expr.const(old), old, 1.0)
    sol, _ = solved(prog)
    assert sol.feasible


def test_superset_solution_dominated_on_old_region():
    m, frame = scalar_frame(0.5)
    x = m.universe.var("x1")
    old = 2 * x * x
    alpha = 1.0
    prog = SosProgram(m.universe)
    q, sblk, _ = param_q(prog, frame, 2, alpha=alpha)
    new = prog.block_expr(sblk)
    constraint_q_superset(prog, frame, new, old, alpha)
    sol, ex = solved(prog)
    assert sol.feasible
    s_new = ex.expr(new)
    X = np.linspace(-np.sqrt(alpha / 2), np.sqrt(alpha / 2), 1000)
    assert np.max(s_new([X]) - old([X])) <= 1e-8


# -- program determinism --------------------------------------------------------

def test_rebuilding_program_is_deterministic():
    def build():
        m = load_model(data_path("zero_index_example.json"))
        frame = Frame(m)
        prog = SosProgram(m.universe)
        constraint_decrease(prog, frame, param_V_candidate(prog, frame, 2))
        return compile_program(prog).data
    a, b = build(), build()
    assert (a.A != b.A).nnz == 0
    assert np.array_equal(a.b, b.b) and np.array_equal(a.c, b.c)


def test_program_json_lists_blocks_and_constraints():
    m, frame = scalar_frame(0.5)
    prog = SosProgram(m.universe)
    constraint_decrease(prog, frame, param_V_general(prog, frame, 2))
    d = prog.to_json()
    assert [c["name"] for c in d["constraints"]] == ["decrease"]
    assert any(b["kind"] == "sos" for b in d["blocks"])
