"""Verification procedures and independent certificate validation.

Each procedure builds an SOS program with :mod:`nnsos.sosir`, compiles and
solves it, and wraps the result in a :class:`Certificate`.  A certificate is
only marked VALID after :func:`validate_certificate` has checked it against
simulated closed-loop data; without validation it stays UNVALIDATED.

Polynomials stored on certificates are in raw zeta coordinates, so they can
be evaluated directly on ``model.zeta(x)``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import qmc

from .compile import CompileConfig, compile_program, extract
from .errors import ModelError, NnsosError, SolverError
from .poly import Polynomial, Universe
from .semialg import ClosedLoopModel
from .solver import SolverConfig, line_search, solve
from .sosir import (EPS_PREC, Expr, Frame, MultiplierConfig, SosProgram, constraint_barrier,
                    constraint_decrease, constraint_q_superset, constraint_sublevel,
                    param_q, param_V_candidate, param_V_general, q_multiplier_blocks)

log = logging.getLogger(__name__)

VALID = "VALID"
UNVALIDATED = "UNVALIDATED"
INVALID = "INVALID"
INCONCLUSIVE = "INCONCLUSIVE"
FAILED_ORIGIN_GATE = "FAILED_ORIGIN_GATE"
NOT_LINEARLY_STABLE = "NOT_LINEARLY_STABLE"

KINDS = ("global_GAS", "local_two_step", "local_candidate", "sequential_ROA")


class NotLinearlyStable(NnsosError):
    """The closed-loop linearisation at the origin is not Schur stable."""


@dataclass
class VerifyConfig:
    """Shared settings for the verification procedures and validation."""

    solver: SolverConfig = field(default_factory=SolverConfig)
    compile: CompileConfig = field(default_factory=CompileConfig)
    validate: bool = True
    origin_gate: bool = True
    samples: int = 2048           # low-discrepancy samples per validation
    grid: int = 201               # per-axis grid for models with n <= 2
    seed: int = 0
    box: float = 4.0              # half-width of the global validation box
    trajectories: int = 100
    max_steps: int = 10_000
    tol: float = 1e-6
    gamma_rel_tol: float = 1e-3


@dataclass
class RoaConfig:
    """Settings of the sequential invariant-set algorithm."""

    dalpha: float = 1.0           # bracket width of each line search
    rel_tol: float = 1e-3         # stop once alpha grows by less than this fraction
    max_iter: int = 15
    alpha0: float = 0.1
    v_degree: int = 2
    q_degree: int = 2
    budget: int = 4
    nesting_points: int = 1000

    def multipliers(self, frame: Frame) -> MultiplierConfig:
        # degree-2 SOS multipliers on graph inequalities, constant ones on
        # the (quadratic) graph equalities, each over its own variables and x
        return MultiplierConfig(budget=self.budget, prune=True, sparse=True, vars=frame.x_vars,
                                ineq_degree=2, eq_degree=0)


# ---------------------------------------------------------------------------
# certificates
# ---------------------------------------------------------------------------

def _pjson(p: Polynomial | None, uni: Universe):
    return None if p is None else p.to_json(uni.names)


def _pload(d, uni: Universe):
    return None if d is None else Polynomial.from_json(d, uni)


@dataclass
class Certificate:
    """Outcome of one verification procedure."""

    kind: str
    status: str
    model: str
    V: Polynomial | None = None
    q: Polynomial | None = None
    gamma: float | None = None
    alpha: float | None = None
    degree: int | None = None
    history: list = field(default_factory=list)
    solver: dict = field(default_factory=dict)
    validation: dict | None = None
    notes: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown certificate kind {self.kind!r}")

    @property
    def valid(self) -> bool:
        return self.status == VALID

    def to_json(self, universe: Universe) -> dict:
        return {
            "kind": self.kind,
            "status": self.status,
            "model": self.model,
            "degree": self.degree,
            "V": _pjson(self.V, universe),
            "q": _pjson(self.q, universe),
            "gamma": self.gamma,
            "alpha": self.alpha,
            "history": self.history,
            "solver": self.solver,
            "validation": self.validation,
            "notes": list(self.notes),
        }

    @classmethod
    def from_json(cls, d: dict, universe: Universe) -> "Certificate":
        try:
            return cls(d["kind"], d.get("status", UNVALIDATED), d.get("model", ""),
                       _pload(d.get("V"), universe), _pload(d.get("q"), universe),
                       d.get("gamma"), d.get("alpha"), d.get("degree"), list(d.get("history", [])),
                       dict(d.get("solver", {})), d.get("validation"), list(d.get("notes", [])))
        except (KeyError, TypeError, ValueError) as e:
            raise ModelError(f"malformed certificate: {e}") from e


# ---------------------------------------------------------------------------
# solve helpers
# ---------------------------------------------------------------------------

@dataclass
class _Solved:
    feasible: bool
    status: str
    ex: object = None
    comp: object = None
    stats: dict = field(default_factory=dict)


def _solve_program(prog: SosProgram, cfg: VerifyConfig) -> _Solved:
    comp = compile_program(prog, cfg.compile)
    try:
        sol = solve(comp.data, cfg.solver)
    except SolverError as e:
        log.warning("solver failure on %s: %s", prog.name, e)
        return _Solved(False, "solver_error", stats={"error": str(e)})
    stats = {"status": sol.status, "iterations": sol.iterations,
             "rows": comp.data.n_rows, "psd_blocks": len(comp.data.psd),
             "max_block": max(comp.data.psd, default=0)}
    if not sol.feasible:
        return _Solved(False, sol.status, comp=comp, stats=stats)
    ex = extract(comp, sol)
    stats["max_residual"] = ex.max_residual
    return _Solved(True, sol.status, ex, comp, stats)


def _mult_poly(ex, prog: SosProgram, bid: str, uni: Universe) -> Polynomial:
    blk = prog.blocks[bid]
    if blk.kind == "sos":
        return ex.polys[bid]
    return Polynomial.const(ex.scalar(bid), uni)


# ---------------------------------------------------------------------------
# global verification
# ---------------------------------------------------------------------------

def verify_global(model: ClosedLoopModel, deg: int = 4, cfg: VerifyConfig | None = None,
                  mult: MultiplierConfig | None = None) -> Certificate:
    """Search a global Lyapunov function of degree ``deg`` in x.

    Multipliers default to a degree budget of ``deg + 2`` with successor
    network constraints pruned; infeasibility proves nothing and is reported
    as INCONCLUSIVE.
    """
    cfg = cfg or VerifyConfig()
    frame = Frame(model)
    prog = SosProgram(model.universe, "global")
    V = param_V_general(prog, frame, deg)
    mult = mult or MultiplierConfig(budget=deg + 2, prune=True)
    constraint_decrease(prog, frame, V, cfg=mult)
    res = _solve_program(prog, cfg)
    cert = Certificate("global_GAS", INCONCLUSIVE, model.name, degree=deg, solver=res.stats)
    if not res.feasible:
        cert.notes.append(f"decrease program not solved ({res.status}); no conclusion")
        return cert
    cert.V = frame.raw(res.ex.expr(V.expr))
    cert.status = UNVALIDATED
    return _finish(model, cert, cfg)


def _finish(model, cert: Certificate, cfg: VerifyConfig) -> Certificate:
    if cfg.validate:
        validate_certificate(model, cert, cfg)
    return cert


# ---------------------------------------------------------------------------
# local verification with a fixed region
# ---------------------------------------------------------------------------

def _check_region(model: ClosedLoopModel, q: Polynomial):
    if not q.variables() <= set(model.x_vars):
        raise ModelError("the region polynomial may only involve state variables")
    q0 = float(q(np.zeros(model.n_zeta)))
    if not q0 > 0:
        raise ModelError(f"region must contain the origin in its interior (q(0) = {q0:g})")


def _gamma_oracle(model, frame: Frame, Vc: Polynomial, qc: Polynomial, cfg: VerifyConfig):
    def oracle(gamma):
        prog = SosProgram(model.universe, "sublevel")
        constraint_sublevel(prog, frame, Vc, gamma, [qc])
        res = _solve_program(prog, cfg)
        return res.feasible, res.stats
    return oracle


def maximize_gamma(oracle: Callable, v0: float, rel_tol: float = 1e-3, max_doublings: int = 40):
    """Largest gamma above ``v0`` that ``oracle`` accepts, or None.

    The first probe sits just above ``v0``; if it fails no sublevel set
    containing the origin was certified.  Returns ``(gamma, probes)``.
    """
    scale = max(1.0, abs(v0))
    step = 1e-6 * scale
    probes = []
    ok, _ = oracle(v0 + step)
    probes.append((v0 + step, ok))
    if not ok:
        return None, probes
    lo = step
    hi = None
    delta = max(step, 1e-3 * scale)
    for _ in range(max_doublings):
        ok, _ = oracle(v0 + delta)
        probes.append((v0 + delta, ok))
        if not ok:
            hi = delta
            break
        lo = delta
        delta *= 2.0
    if hi is None:
        return v0 + lo, probes
    res = line_search(v0 + lo, v0 + hi, lambda g: oracle(g), rel_tol=rel_tol)
    probes.extend(res.probes)
    return res.value, probes


def _local(model, q: Polynomial, deg: int, cfg: VerifyConfig, kind: str) -> Certificate:
    _check_region(model, q)
    frame = Frame(model)
    qc = frame.center(q)
    prog = SosProgram(model.universe, kind)
    if kind == "local_candidate":
        V = param_V_candidate(prog, frame, deg)
    else:
        V = param_V_general(prog, frame, deg)
    constraint_decrease(prog, frame, V, q=[Expr.const(qc)])
    res = _solve_program(prog, cfg)
    cert = Certificate(kind, INCONCLUSIVE, model.name, q=q, degree=deg, solver={"decrease": res.stats})
    if not res.feasible:
        cert.notes.append(f"local decrease program not solved ({res.status}); no conclusion")
        return cert
    Vc = res.ex.expr(V.expr)
    cert.V = frame.raw(Vc)
    v0 = float(cert.V(model.zeta0()))
    gamma, probes = maximize_gamma(_gamma_oracle(model, frame, Vc, qc, cfg), v0, cfg.gamma_rel_tol)
    cert.solver["gamma_probes"] = [[float(g), bool(ok)] for g, ok in probes]
    if gamma is None:
        cert.notes.append(f"no sublevel set above V(zeta(0)) = {v0:.6g} certified inside the region")
        if cfg.origin_gate:
            cert.status = FAILED_ORIGIN_GATE
            return cert
        cert.notes.append("origin gate disabled: the region itself is taken as the certified set")
    else:
        cert.gamma = float(gamma)
        if cfg.origin_gate and not v0 < cert.gamma:
            cert.status = FAILED_ORIGIN_GATE
            return cert
    cert.status = UNVALIDATED
    return _finish(model, cert, cfg)


def verify_local_two_step(model: ClosedLoopModel, q: Polynomial, deg: int = 4,
                          cfg: VerifyConfig | None = None) -> Certificate:
    """Local decrease on ``{q >= 0}``, then the largest sublevel set inside it.

    Feasibility of the decrease program alone certifies nothing; the
    sublevel stage and the origin gate ``V(zeta(0)) < gamma`` must pass too.
    """
    return _local(model, q, deg, cfg or VerifyConfig(), "local_two_step")


def verify_local_candidate(model: ClosedLoopModel, q: Polynomial, deg: int = 2,
                           cfg: VerifyConfig | None = None) -> Certificate:
    """Local decrease with a V that has a strict minimum at the origin trace."""
    return _local(model, q, deg, cfg or VerifyConfig(), "local_candidate")


# ---------------------------------------------------------------------------
# sequential invariant sets
# ---------------------------------------------------------------------------

def lyapunov_matrix(A: np.ndarray) -> np.ndarray:
    """Solve ``P - A' P A = I`` through its vectorised linear system."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    M = np.eye(n * n) - np.kron(A.T, A.T)
    P = np.linalg.solve(M, np.eye(n).reshape(-1)).reshape(n, n)
    return 0.5 * (P + P.T)


def quadratic_form(P: np.ndarray, xs: list[int], uni: Universe) -> Polynomial:
    out = Polynomial.zero(uni)
    for i, vi in enumerate(xs):
        for j, vj in enumerate(xs):
            if P[i, j]:
                out = out + float(P[i, j]) * Polynomial.var(vi, uni) * Polynomial.var(vj, uni)
    return out


@dataclass
class _Stage:
    """A solution of one sequential problem: a standalone certificate."""

    alpha: float
    sigma_q: Polynomial           # centred
    V: Polynomial                 # centred
    m_dec: Polynomial             # fixed region multipliers for the next problem B
    m_bar: Polynomial
    stats: dict = field(default_factory=dict)


def _problem_a(model, frame, sigma_q: Polynomial, alpha: float, rcfg: RoaConfig, cfg: VerifyConfig):
    uni = model.universe
    prog = SosProgram(uni, "roa_A")
    V = param_V_general(prog, frame, rcfg.v_degree)
    q = Expr.const(Polynomial.const(float(alpha), uni) - sigma_q)
    mcfg = rcfg.multipliers(frame)
    constraint_decrease(prog, frame, V, q=[q], cfg=mcfg, q_mult_vars="x", name="decrease")
    constraint_barrier(prog, frame, q, cfg=mcfg, k=0, q_mult_vars="x", name="barrier")
    res = _solve_program(prog, cfg)
    if not res.feasible:
        return False, None
    dec = q_multiplier_blocks(prog, "decrease")
    bar = q_multiplier_blocks(prog, "barrier")
    zero = Polynomial.zero(uni)
    m_dec = _mult_poly(res.ex, prog, dec[0], uni) if dec else zero
    m_bar = _mult_poly(res.ex, prog, bar[0], uni) if bar else zero
    return True, _Stage(float(alpha), sigma_q, res.ex.expr(V.expr), m_dec, m_bar, res.stats)


def _problem_b(model, frame, prev: _Stage, alpha: float, rcfg: RoaConfig, cfg: VerifyConfig):
    uni = model.universe
    prog = SosProgram(uni, "roa_B")
    V = param_V_general(prog, frame, rcfg.v_degree)
    q, sblk, _ = param_q(prog, frame, rcfg.q_degree, alpha=float(alpha))
    sigma = prog.block_expr(sblk)
    mcfg = rcfg.multipliers(frame)
    constraint_decrease(prog, frame, V, q=[q], cfg=mcfg, q_mult=[prev.m_dec], name="decrease")
    constraint_barrier(prog, frame, q, cfg=mcfg, k=0, q_mult=prev.m_bar, name="barrier")
    # the new region must contain the previous one; x-only, so no graph terms
    constraint_q_superset(prog, frame, sigma, prev.sigma_q, prev.alpha,
                          cfg=MultiplierConfig(ineq_degree=-1, eq_degree=-1), level_mult_vars="x")
    res = _solve_program(prog, cfg)
    if not res.feasible:
        return False, None
    return True, _Stage(float(alpha), res.ex.expr(sigma), res.ex.expr(V.expr), prev.m_dec, prev.m_bar,
                        res.stats)


def init_linearization(model: ClosedLoopModel, rcfg: RoaConfig | None = None,
                       cfg: VerifyConfig | None = None):
    """Initial region from the linearisation: ``(P, alpha0, stage)``.

    ``P`` solves ``P - A' P A = I`` for the closed-loop Jacobian ``A``;
    ``alpha0`` starts at ``rcfg.alpha0`` and is halved until problem A with
    ``sigma_q = x' P x`` is feasible.  ``stage`` is None if no trial
    succeeded above the solver precision.
    """
    rcfg = rcfg or RoaConfig()
    cfg = cfg or VerifyConfig()
    A = model.linearization()
    rho = float(max(abs(np.linalg.eigvals(A)))) if A.size else 0.0
    if rho >= 1.0:
        raise NotLinearlyStable(f"closed-loop linearisation has spectral radius {rho:.6g} >= 1")
    P = lyapunov_matrix(A)
    frame = Frame(model)
    sigma = quadratic_form(P, frame.x_vars, model.universe)
    alpha = rcfg.alpha0
    while alpha >= EPS_PREC:
        ok, stage = _problem_a(model, frame, sigma, alpha, rcfg, cfg)
        if ok:
            return P, alpha, stage
        alpha *= 0.5
    return P, None, None


def _stage_json(it: int, a: _Stage, b: _Stage, b_ok: bool, frame: Frame, uni: Universe) -> dict:
    return {
        "iteration": it,
        "alpha_A": a.alpha,
        "alpha_B": b.alpha,
        "B_feasible": b_ok,
        "sigma_q": _pjson(frame.raw(b.sigma_q), uni),
        "V": _pjson(frame.raw(b.V), uni),
        "mult_decrease": _pjson(a.m_dec, uni),
        "mult_barrier": _pjson(a.m_bar, uni),
    }


def _stage_from_json(d: dict, frame: Frame, uni: Universe) -> _Stage:
    return _Stage(float(d["alpha_B"]), frame.center(_pload(d["sigma_q"], uni)),
                  frame.center(_pload(d["V"], uni)), _pload(d["mult_decrease"], uni),
                  _pload(d["mult_barrier"], uni))


def _region(stage: _Stage, frame: Frame) -> Polynomial:
    return frame.raw(Polynomial.const(stage.alpha, frame.universe) - stage.sigma_q)


def run_algorithm1(model: ClosedLoopModel, rcfg: RoaConfig | None = None,
                   cfg: VerifyConfig | None = None, history: list | None = None) -> Certificate:
    """Alternate problems A (grow alpha) and B (reshape the region).

    Every accepted stage is itself a certificate for ``{alpha - sigma_q >= 0}``;
    the loop stops when alpha grows by less than ``rel_tol`` relative,
    after ``max_iter`` iterations, or when problem B fails, returning the
    last accepted stage.  Passing the ``history`` of an earlier run resumes it.
    """
    rcfg = rcfg or RoaConfig()
    cfg = cfg or VerifyConfig()
    uni = model.universe
    frame = Frame(model)
    cert = Certificate("sequential_ROA", INCONCLUSIVE, model.name, degree=rcfg.v_degree)
    history = [dict(h) for h in (history or [])]
    if history:
        cur = _stage_from_json(history[-1], frame, uni)
        alphas = [h["alpha_B"] for h in history]
        stopped = not history[-1].get("B_feasible", True)
        cert.notes.append(f"resumed after {len(history)} stored iterations")
    else:
        try:
            P, alpha0, init = init_linearization(model, rcfg, cfg)
        except NotLinearlyStable as e:
            cert.status = NOT_LINEARLY_STABLE
            cert.notes.append(str(e))
            return cert
        if init is None:
            cert.notes.append("problem A infeasible for every trial alpha0 of the linearisation")
            return cert
        cert.solver["P"] = P.tolist()
        cert.solver["alpha0"] = alpha0
        cur = init
        alphas = [alpha0]
        stopped = False
    prev_q = _region(cur, frame)
    delta = math.inf
    while not stopped and len(history) < rcfg.max_iter and delta > rcfg.rel_tol * max(cur.alpha, EPS_PREC):
        it = len(history) + 1
        old = cur.alpha
        ra = line_search(cur.alpha, cur.alpha + rcfg.dalpha,
                         lambda a, s=cur: _problem_a(model, frame, s.sigma_q, a, rcfg, cfg),
                         rel_tol=rcfg.rel_tol, lo_artifact=cur)
        stage_a = ra.artifact
        rb = line_search(stage_a.alpha, stage_a.alpha + rcfg.dalpha,
                         lambda a, s=stage_a: _problem_b(model, frame, s, a, rcfg, cfg),
                         rel_tol=rcfg.rel_tol, lo_artifact=None)
        b_ok = rb.artifact is not None
        stage_b = rb.artifact if b_ok else stage_a
        entry = _stage_json(it, stage_a, stage_b, b_ok, frame, uni)
        entry["probes_A"] = len(ra.probes)
        entry["probes_B"] = len(rb.probes)
        entry["non_monotone"] = bool(ra.non_monotone or rb.non_monotone)
        qa, qb = _region(stage_a, frame), _region(stage_b, frame)
        entry["nesting"] = [check_nesting(model, prev_q, qa, rcfg.nesting_points),
                            check_nesting(model, qa, qb, rcfg.nesting_points)]
        history.append(entry)
        alphas.extend([stage_a.alpha, stage_b.alpha])
        log.info("iteration %d: alpha_A = %.6g, alpha_B = %.6g%s", it, stage_a.alpha, stage_b.alpha,
                 "" if b_ok else " (problem B failed)")
        cur, prev_q = stage_b, qb
        delta = cur.alpha - old
        if not b_ok:
            stopped = True
    cert.history = history
    cert.alpha = cur.alpha
    cert.V = frame.raw(cur.V)
    cert.q = _region(cur, frame)
    cert.solver["alphas"] = alphas
    cert.solver["iterations"] = len(history)
    cert.status = UNVALIDATED
    return _finish(model, cert, cfg)


def check_nesting(model: ClosedLoopModel, q_small: Polynomial, q_big: Polynomial,
                  n_points: int = 1000, tol: float = 1e-6) -> dict:
    """Sampled check that ``{q_small >= 0}`` lies inside ``{q_big >= 0}``."""
    pts = boundary_points(model, q_small, n_points)
    if pts.shape[1] == 0:
        return {"passed": False, "points": 0, "worst": None, "witness": None}
    vals = _eval(q_big, model, pts)
    i = int(np.argmin(vals))
    return {"passed": bool(vals[i] >= -tol), "points": int(pts.shape[1]), "worst": float(vals[i]),
            "witness": pts[:, i].tolist()}


def _directions(n: int, count: int, seed: int = 0) -> np.ndarray:
    if n == 1:
        return np.array([[1.0, -1.0]])
    if n == 2:
        t = 2 * np.pi * np.arange(count) / count
        return np.vstack([np.cos(t), np.sin(t)])
    d = np.random.default_rng(seed).standard_normal((n, count))
    return d / np.linalg.norm(d, axis=0)


def boundary_points(model: ClosedLoopModel, q: Polynomial, count: int = 1000, r_max: float = 1e4):
    """Points on the boundary of the star-shaped region ``{q >= 0}`` (rays from 0)."""
    D = _directions(model.n, count)
    inside = lambda X: _eval(q, model, X) >= 0
    lo = np.zeros(D.shape[1])
    hi = np.full(D.shape[1], 1.0)
    # grow the outer radius until every ray has left the region
    for _ in range(60):
        out = ~inside(D * hi)
        if out.all() or hi.max() >= r_max:
            break
        hi = np.where(out, hi, hi * 2)
    keep = ~inside(D * hi)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        ins = inside(D * mid)
        lo = np.where(ins, mid, lo)
        hi = np.where(ins, hi, mid)
    return (D * lo)[:, keep]


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def _eval(p: Polynomial, model: ClosedLoopModel, X: np.ndarray) -> np.ndarray:
    """Evaluate a zeta polynomial at states ``X`` of shape ``(n, N)``."""
    X = np.asarray(X, dtype=float).reshape(model.n, -1)
    Z = model.zeta(X) if p.variables() - set(model.x_vars) else X
    val = p(Z)
    return np.broadcast_to(np.asarray(val, dtype=float), (X.shape[1],)).copy()


def _membership(model, cert: Certificate, slack: float = 0.0):
    """Indicator of the certified set, or None when it is the global box."""
    if cert.kind == "global_GAS":
        return None
    if cert.kind in ("local_two_step", "local_candidate") and cert.gamma is not None:
        V, g = cert.V, cert.gamma
        return lambda X: _eval(V, model, X) <= g + slack * max(1.0, abs(g))
    q = cert.q
    return lambda X: _eval(q, model, X) >= -slack


def _bounding_box(model, inside, rays: int = 720, r_cap: float = 1e3):
    """Half-widths of a box around the set reached along rays from the origin."""
    D = _directions(model.n, rays)
    radii = np.linspace(0.0, 1.0, 401)[1:]
    r_max = 1.0
    while r_max < r_cap:
        if not inside(D * r_max).any():
            break
        r_max *= 2.0
    ext = np.zeros(model.n)
    for r in radii * r_max:
        X = D * r
        m = inside(X)
        if m.any():
            ext = np.maximum(ext, np.abs(X[:, m]).max(axis=1))
    step = r_max / 400
    return ext + step


def _samples(model, half: np.ndarray, cfg: VerifyConfig):
    """Grid (n <= 2) plus scrambled Sobol points in the box, origin first."""
    n = model.n
    parts = [np.zeros((n, 1))]
    res = None
    if n <= 2:
        k = cfg.grid if n == 2 else 10 * cfg.grid
        axes = [np.linspace(-h, h, k) for h in half]
        mesh = np.meshgrid(*axes, indexing="ij")
        parts.append(np.vstack([m.reshape(-1) for m in mesh]))
        res = float(np.linalg.norm(2 * half / (k - 1)))
    m = max(1, int(math.ceil(math.log2(max(cfg.samples, 2)))))
    sob = qmc.Sobol(d=n, scramble=True, seed=cfg.seed).random_base2(m).T
    parts.append((2 * sob - 1) * half[:, None])
    if res is None:
        res = float(np.linalg.norm(2 * half) / (2 ** m) ** (1.0 / n))
    return np.hstack(parts), res


def _check(name, passed, worst=None, witness=None, **extra):
    out = {"passed": bool(passed)}
    if worst is not None:
        out["worst"] = float(worst)
    if witness is not None:
        out["witness"] = np.asarray(witness, dtype=float).tolist()
    out.update(extra)
    return name, out


def validate_certificate(model: ClosedLoopModel, cert: Certificate,
                         cfg: VerifyConfig | None = None) -> dict:
    """Sampling-based checks of a certificate; sets VALID or INVALID.

    Checks decrease and the lower bound ``V - V(0) >= |x|^2`` on samples of
    the certified set, invariance of the set, that the sampled minimum of V
    sits at the origin, containment of the sublevel set in the region for
    fixed-region certificates, and convergence of simulated trajectories.
    """
    cfg = cfg or VerifyConfig()
    if cert.V is None:
        raise ModelError("certificate carries no Lyapunov function")
    tol = cfg.tol
    inside = _membership(model, cert)
    if inside is None:
        half = np.full(model.n, float(cfg.box))
    else:
        half = _bounding_box(model, inside)
    X, res = _samples(model, half, cfg)
    if inside is not None:
        X = X[:, inside(X)]
    checks = {}
    zeta0 = model.zeta0()
    V0 = float(cert.V(zeta0))
    if inside is not None:
        ok = bool(inside(np.zeros((model.n, 1)))[0])
        k, v = _check("origin_in_set", ok, witness=None if ok else np.zeros(model.n))
        checks[k] = v
    if X.shape[1] == 0:
        k, v = _check("nonempty", False)
        checks[k] = v
    else:
        Z = model.zeta(X)
        Xp = model.step(X)
        Vx = np.broadcast_to(np.asarray(cert.V(Z), dtype=float), (X.shape[1],))
        Vp = np.broadcast_to(np.asarray(cert.V(model.zeta(Xp)), dtype=float), (X.shape[1],))
        nx = np.sum(X * X, axis=0)
        dec = Vx - Vp - nx
        i = int(np.argmin(dec))
        k, v = _check("decrease", dec[i] >= -tol, dec[i], X[:, i])
        checks[k] = v
        bnd = Vx - V0 - nx
        i = int(np.argmin(bnd))
        k, v = _check("lower_bound", bnd[i] >= -tol, bnd[i], X[:, i])
        checks[k] = v
        if inside is not None:
            loose = _membership(model, cert, slack=1e-9)
            stay = loose(Xp)
            bad = np.flatnonzero(~stay)
            k, v = _check("invariance", bad.size == 0, witness=X[:, bad[0]] if bad.size else None,
                          violations=int(bad.size))
            checks[k] = v
        i = int(np.argmin(Vx))
        at0 = np.linalg.norm(X[:, i]) <= res or Vx[i] >= V0 - tol
        wit = None
        if not at0:
            # report the sample nearest the origin that undercuts V(0)
            below = np.flatnonzero(Vx < V0 - tol)
            wit = X[:, below[np.argmin(np.linalg.norm(X[:, below], axis=0))]]
        k, v = _check("argmin_at_origin", at0, Vx[i] - V0, wit, argmin=X[:, i].tolist(),
                      resolution=res)
        checks[k] = v
        if cert.kind in ("local_two_step", "local_candidate") and cert.gamma is not None:
            qv = _eval(cert.q, model, X)
            i = int(np.argmin(qv))
            k, v = _check("sublevel_in_region", qv[i] >= -tol, qv[i], X[:, i])
            checks[k] = v
        k, v = _trajectories(model, X, cfg)
        checks[k] = v
    passed = all(c["passed"] for c in checks.values())
    report = {"passed": passed, "samples": int(X.shape[1]), "box": half.tolist(), "checks": checks}
    cert.validation = report
    cert.status = VALID if passed else INVALID
    return report


def _trajectories(model, X: np.ndarray, cfg: VerifyConfig):
    n_pts = X.shape[1]
    # start from the points farthest from the origin, spread over the sample order
    order = np.argsort(-np.sum(X * X, axis=0), kind="stable")
    idx = np.sort(order[:min(cfg.trajectories, n_pts)])
    x = X[:, idx].copy()
    done = np.zeros(x.shape[1], dtype=bool)
    steps = np.full(x.shape[1], -1)
    for t in range(cfg.max_steps + 1):
        nrm = np.linalg.norm(x, axis=0)
        newly = (nrm <= 1e-6) & ~done
        steps[newly] = t
        done |= newly
        if done.all() or not np.all(np.isfinite(nrm)) or nrm.max() > 1e8:
            break
        x[:, ~done] = model.step(x[:, ~done])
    bad = np.flatnonzero(~done)
    return _check("trajectories", bad.size == 0,
                  witness=X[:, idx[bad[0]]] if bad.size else None, count=int(len(idx)),
                  max_steps=int(steps.max()) if done.any() else None)


# ---------------------------------------------------------------------------
# counterexample identity and grid export
# ---------------------------------------------------------------------------

def reproduce_counterexample() -> dict:
    """Check the unstable-map decrease identity coefficientwise.

    For ``V = (x - 2)^2 (x + 2)^2 / 5`` and ``x+ = 2x``, the decrease
    residual ``V(x) - V(2x) - x^2 - x^4 (1/4 - x^2)`` is compared against an
    explicit sum of three squares.
    """
    uni = Universe()
    (xi,) = uni.add_block("x", 1)
    uni.freeze()
    x = Polynomial.var(xi, uni)
    V = (x - 2.0) ** 2 * (x + 2.0) ** 2 / 5.0
    x2 = 2.0 * x
    V2 = (x2 - 2.0) ** 2 * (x2 + 2.0) ** 2 / 5.0
    lhs = V - V2 - x * x - x ** 4 * (0.25 - x * x)
    sq1 = math.sqrt(95 / 25) * x - math.sqrt(4655 / 5776) * x ** 3
    rhs = sq1 * sq1 + (0.5 * x * x) ** 2 + (math.sqrt(1121 / 5776) * x ** 3) ** 2
    diff = lhs - rhs
    max_diff = max((abs(c) for c in diff.terms.values()), default=0.0)
    coeffs = lambda p: {str(sum(e for _, e in m)): c for m, c in sorted(p.terms.items())}
    at = 0.3
    return {
        "passed": max_diff <= 1e-9,
        "max_coeff_diff": max_diff,
        "lhs": coeffs(lhs),
        "rhs": coeffs(rhs),
        "eval_point": at,
        "lhs_value": float(lhs([at])),
        "rhs_value": float(rhs([at])),
        "degree": lhs.degree(),
    }


def export_grid(model: ClosedLoopModel, cert: Certificate, path, box=None, points: int = 201) -> int:
    """Write ``x1, x2, V, q`` rows over a square grid; returns the row count."""
    if model.n != 2:
        raise ModelError("grid export needs a model with two states")
    if box is None:
        box = (-4.0, 4.0, -4.0, 4.0)
    a = np.linspace(box[0], box[1], points)
    b = np.linspace(box[2], box[3], points)
    A, B = np.meshgrid(a, b, indexing="ij")
    X = np.vstack([A.reshape(-1), B.reshape(-1)])
    V = _eval(cert.V, model, X)
    q = _eval(cert.q, model, X) if cert.q is not None else None
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x1", "x2", "V", "q"])
        for j in range(X.shape[1]):
            w.writerow([f"{X[0, j]:.10g}", f"{X[1, j]:.10g}", f"{V[j]:.10g}",
                        "" if q is None else f"{q[j]:.10g}"])
    return X.shape[1]
