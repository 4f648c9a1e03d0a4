"""Intermediate representation of SOS programs and the constraint builders.

A program holds decision blocks (SOS Gram blocks, free polynomials,
scalars) and constraints of the form ``expr is SOS`` or ``expr == 0``
where ``expr`` is a polynomial whose coefficients are affine in the
decision entries (:class:`Expr`).

Builders work in a :class:`Frame`: the closed-loop graph rewritten in
coordinates centred at the origin trace (so the origin trace sits at the
zero vector) with affine equalities optionally eliminated by substitution.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ModelError
from .poly import (ONE, Monomial, Polynomial, mono_degree, mono_key, mono_mul, mono_str,
                   monomial_basis)
from .semialg import ClosedLoopModel

log = logging.getLogger(__name__)

EPS_PREC = 1e-6
ORIGIN_SNAP = 1e-9


# ---------------------------------------------------------------------------
# decision blocks and affine-in-decision polynomials
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DecisionBlock:
    """One group of decision variables.

    ``sos`` blocks are Gram matrices over ``basis`` (entries keyed by
    ``(i, j)`` with ``i >= j``), ``free`` blocks are coefficient vectors over
    ``basis`` and ``scalar`` blocks hold one number with ``sign`` in
    ``free``/``nonneg``/``positive``.  ``eps`` shifts the cone: ``G - eps*I``
    is PSD, or the scalar is at least ``eps``.
    """

    id: str
    kind: str
    basis: tuple = ()
    sign: str = "free"
    eps: float = 0.0

    def __post_init__(self):
        if self.kind not in ("sos", "free", "scalar"):
            raise ModelError(f"unknown decision block kind {self.kind!r}")
        if self.kind == "scalar" and self.sign not in ("free", "nonneg", "positive"):
            raise ModelError(f"unknown scalar sign {self.sign!r}")

    @property
    def size(self) -> int:
        return len(self.basis) if self.kind != "scalar" else 1

    def keys(self) -> list[tuple]:
        if self.kind == "sos":
            k = len(self.basis)
            return [(self.id, i, j) for j in range(k) for i in range(j, k)]
        if self.kind == "free":
            return [(self.id, i, 0) for i in range(len(self.basis))]
        return [(self.id, 0, 0)]

    def shift(self, key) -> float:
        """Offset between an entry's value and its cone variable."""
        if self.kind == "sos" and key[1] == key[2]:
            return self.eps
        if self.kind == "scalar" and self.sign == "positive":
            return self.eps
        return 0.0


class Expr:
    """Polynomial with coefficients affine in decision entries.

    ``terms`` maps an entry key (or ``None`` for the constant part) to the
    polynomial multiplying that entry.
    """

    __slots__ = ("terms", "universe")

    def __init__(self, terms: dict | None = None, universe=None):
        self.terms = {k: p for k, p in (terms or {}).items() if not p.is_zero()}
        self.universe = universe

    @classmethod
    def const(cls, p: Polynomial | float, universe=None) -> "Expr":
        if not isinstance(p, Polynomial):
            p = Polynomial.const(float(p), universe)
        return cls({None: p}, universe or p.universe)

    def _coerce(self, other) -> "Expr":
        if isinstance(other, Expr):
            return other
        if isinstance(other, (Polynomial, int, float, np.floating)):
            return Expr.const(other, self.universe)
        raise TypeError(f"cannot combine Expr with {type(other).__name__}")

    def __add__(self, other):
        other = self._coerce(other)
        out = dict(self.terms)
        for k, p in other.terms.items():
            out[k] = out[k] + p if k in out else p
        return Expr(out, self.universe or other.universe)

    __radd__ = __add__

    def __neg__(self):
        return Expr({k: -p for k, p in self.terms.items()}, self.universe)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating)):
            return Expr({k: p * float(other) for k, p in self.terms.items()}, self.universe)
        if isinstance(other, Polynomial):
            return Expr({k: p * other for k, p in self.terms.items()}, self.universe)
        if isinstance(other, Expr):
            if other.is_fixed():
                return self * other.fixed()
            if self.is_fixed():
                return other * self.fixed()
            raise ModelError("product of two decision-dependent expressions is not affine")
        return NotImplemented

    __rmul__ = __mul__

    def map(self, fn) -> "Expr":
        return Expr({k: fn(p) for k, p in self.terms.items()}, self.universe)

    def substitute(self, bindings) -> "Expr":
        if not bindings:
            return self
        return self.map(lambda p: p.substitute(bindings))

    def rename(self, mapping) -> "Expr":
        return self.map(lambda p: p.rename(mapping))

    def is_fixed(self) -> bool:
        return all(k is None for k in self.terms)

    def fixed(self) -> Polynomial:
        if not self.is_fixed():
            raise ModelError("expression depends on decision variables")
        return self.terms.get(None, Polynomial.zero(self.universe))

    def degree(self) -> int:
        return max((p.degree() for p in self.terms.values()), default=0)

    def support(self) -> set:
        out = set()
        for p in self.terms.values():
            out.update(p.terms)
        return out

    def variables(self) -> set[int]:
        out = set()
        for p in self.terms.values():
            out |= p.variables()
        return out

    def decision_keys(self) -> list:
        return [k for k in self.terms if k is not None]

    def value(self, values: dict) -> Polynomial:
        """Numeric polynomial for the given entry values."""
        out = self.terms.get(None, Polynomial.zero(self.universe))
        acc: dict[Monomial, float] = dict(out.terms)
        for k, p in self.terms.items():
            if k is None:
                continue
            v = values[k]
            if v == 0.0:
                continue
            for m, c in p.terms.items():
                acc[m] = acc.get(m, 0.0) + c * v
        return Polynomial(acc, self.universe)

    def constant_terms(self) -> dict:
        """Constant coefficient of each entry's polynomial (origin value)."""
        return {k: p.constant() for k, p in self.terms.items() if p.constant() != 0.0}


@dataclass
class SosConstraint:
    """``expr`` is SOS (``sense='sos'``) or identically zero (``'zero'``)."""

    name: str
    expr: Expr
    sense: str = "sos"
    gram_basis: tuple | None = None  # explicit Gram basis, else automatic
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.sense not in ("sos", "zero"):
            raise ModelError(f"unknown constraint sense {self.sense!r}")


class SosProgram:
    """Decision blocks, constraints and an optional linear objective (maximised)."""

    def __init__(self, universe, name: str = "program"):
        self.universe = universe
        self.name = name
        self.blocks: dict[str, DecisionBlock] = {}
        self.constraints: list[SosConstraint] = []
        self.objective: dict = {}  # entry key -> weight, maximised
        self._counter: dict[str, int] = {}

    def _fresh(self, prefix: str) -> str:
        n = self._counter.get(prefix, 0)
        self._counter[prefix] = n + 1
        return f"{prefix}{n}" if n or prefix in self.blocks else prefix

    def add_block(self, block: DecisionBlock) -> DecisionBlock:
        if block.id in self.blocks:
            raise ModelError(f"duplicate decision block {block.id!r}")
        self.blocks[block.id] = block
        return block

    # -- block constructors returning (block, expression) --------------------
    def sos(self, basis: Sequence[Monomial], name: str = "sigma", eps: float = 0.0):
        basis = tuple(basis)
        if not basis:
            raise ModelError(f"empty basis for SOS block {name!r}")
        blk = self.add_block(DecisionBlock(self._fresh(name), "sos", basis, eps=eps))
        return blk, self.block_expr(blk)

    def free(self, basis: Sequence[Monomial], name: str = "p"):
        blk = self.add_block(DecisionBlock(self._fresh(name), "free", tuple(basis)))
        return blk, self.block_expr(blk)

    def scalar(self, name: str = "s", sign: str = "nonneg", eps: float = 0.0):
        blk = self.add_block(DecisionBlock(self._fresh(name), "scalar", (), sign, eps))
        return blk, self.block_expr(blk)

    def block_expr(self, blk: DecisionBlock) -> Expr:
        uni = self.universe
        terms = {}
        if blk.kind == "sos":
            b = blk.basis
            for key in blk.keys():
                _, i, j = key
                w = 1.0 if i == j else 2.0
                terms[key] = Polynomial.from_monomial(mono_mul(b[i], b[j]), w, uni)
        elif blk.kind == "free":
            for key in blk.keys():
                terms[key] = Polynomial.from_monomial(blk.basis[key[1]], 1.0, uni)
        else:
            terms[blk.keys()[0]] = Polynomial.const(1.0, uni)
        return Expr(terms, uni)

    def add(self, name: str, expr: Expr, sense: str = "sos", gram_basis=None, **meta) -> SosConstraint:
        c = SosConstraint(name, expr, sense, tuple(gram_basis) if gram_basis is not None else None, meta)
        self.constraints.append(c)
        return c

    def maximize(self, blk: DecisionBlock, weight: float = 1.0):
        self.objective[blk.keys()[0]] = float(weight)

    def to_json(self) -> dict:
        names = self.universe.names

        def poly(p):
            return p.to_json(names)

        blocks = []
        for b in self.blocks.values():
            blocks.append({"id": b.id, "kind": b.kind, "sign": b.sign, "eps": b.eps,
                           "basis": [mono_str(m, names) for m in b.basis]})
        cons = []
        for c in self.constraints:
            terms = [{"entry": None if k is None else list(k), "poly": poly(p)}
                     for k, p in sorted(c.expr.terms.items(), key=lambda kv: (kv[0] is not None, str(kv[0])))]
            cons.append({"name": c.name, "sense": c.sense, "terms": terms})
        return {"name": self.name, "blocks": blocks, "constraints": cons,
                "objective": [[list(k), w] for k, w in self.objective.items()]}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1)


# ---------------------------------------------------------------------------
# centred coordinates and equality elimination
# ---------------------------------------------------------------------------

def eliminate_equalities(hs: Sequence[Polynomial], protected: Iterable[int],
                         nonlinear_ok: Iterable[int] = ()) -> tuple[dict, list[Polynomial]]:
    """Solve equalities for one variable each and substitute.

    An equality qualifies when some unprotected variable appears only in a
    single linear monomial with a constant coefficient and the remaining
    part is affine (or the variable is listed in ``nonlinear_ok``, used for
    successor states ``x+ = f(x, u)``).  Returns the bindings and the
    equalities left over (after substitution).
    """
    protected = set(protected)
    nonlinear_ok = set(nonlinear_ok)
    binds: dict[int, Polynomial] = {}
    remaining: list[Polynomial] = []
    for h in hs:
        h = h.substitute(binds) if binds else h
        if h.is_zero():
            continue
        if h.degree() == 0:
            raise ModelError(f"equality constraints are inconsistent (residual {h.constant():.3e})")
        best = None
        affine = h.degree() <= 1
        for m, c in h.terms.items():
            if len(m) != 1 or m[0][1] != 1:
                continue
            v = m[0][0]
            if v in protected or (not affine and v not in nonlinear_ok):
                continue
            if any(v in (w for w, _ in mm) for mm in h.terms if mm != m):
                continue
            score = (abs(c), v)
            if best is None or score > best[0]:
                best = (score, v, c)
        if best is None:
            remaining.append(h)
            continue
        _, v, c = best
        expr = (Polynomial.var(v, h.universe) * c - h) / c
        binds = {w: p.substitute({v: expr}) for w, p in binds.items()}
        binds[v] = expr
    remaining = [r.substitute(binds) for r in remaining]
    return binds, [r for r in remaining if not r.is_zero()]


class Frame:
    """Closed-loop graph in centred coordinates, ready for constraint building.

    Every zeta (and successor) variable is shifted by its value on the
    origin trace, so polynomials below vanish where the raw ones take their
    origin values.  ``raw(p)`` maps a centred polynomial back.
    """

    def __init__(self, model: ClosedLoopModel, eliminate: bool = True):
        self.model = model
        self.universe = uni = model.universe
        self.eliminate = eliminate
        nz = model.n_zeta
        z0 = model.zeta0() if model.has_trace() else np.zeros(nz)
        self.z0 = np.asarray(z0, dtype=float)
        self._to_centered = {}
        self._to_raw = {}
        for i in range(nz):
            if self.z0[i] != 0.0:
                for v in (i, i + nz):
                    self._to_centered[v] = Polynomial.var(v, uni) + float(self.z0[i])
                    self._to_raw[v] = Polynomial.var(v, uni) - float(self.z0[i])
        kp = model.k_phi
        self.zero_index = list(kp.zero_index)
        g = [self.center(p) for p in kp.g]
        for i in self.zero_index:  # exact zero at the origin for the I0 entries
            c = g[i].constant()
            if c and abs(c) <= ORIGIN_SNAP:
                g[i] = g[i] - c
        self.g = g
        self.h = [self.center(p) for p in kp.h]
        self.f = [self.center(p) for p in model.f]
        self.x_vars = list(model.x_vars)
        self.continuity = kp.continuity
        self._zeta_elim = None
        self._loop_elim = None

    # -- coordinates ----------------------------------------------------------
    def center(self, p: Polynomial) -> Polynomial:
        return p.substitute(self._to_centered) if self._to_centered else p

    def raw(self, p: Polynomial) -> Polynomial:
        return p.substitute(self._to_raw) if self._to_raw else p

    def succ(self, p):
        mapping = {i: i + self.model.n_zeta for i in range(self.model.n_zeta)}
        return p.rename(mapping)

    def continuous_vars(self) -> list[int]:
        """x plus the lifting/output entries declared continuous in x."""
        uni = self.universe
        lam, u = uni.block("lam"), uni.block("u")
        cont = self.continuity or {}
        if "lam" not in cont or "u" not in cont:
            raise ModelError("continuity metadata missing for lifting/output variables")
        return self.x_vars + [lam[i] for i in cont["lam"]] + [u[i] for i in cont["u"]]

    def var(self, v: int) -> Polynomial:
        return Polynomial.var(v, self.universe)

    def x_norm2(self) -> Polynomial:
        out = Polynomial.zero(self.universe)
        for v in self.x_vars:
            out = out + self.var(v) * self.var(v)
        return out

    # -- eliminated graphs ----------------------------------------------------
    def zeta_graph(self):
        """(bindings, g, h) over zeta with affine equalities substituted."""
        if self._zeta_elim is None:
            if self.eliminate:
                binds, h = eliminate_equalities(self.h, self.x_vars)
            else:
                binds, h = {}, list(self.h)
            g = _clean_ineqs([p.substitute(binds) for p in self.g])
            self._zeta_elim = (binds, g, h)
        return self._zeta_elim

    def loop_graph(self):
        """(bindings, g, h) over xi = (zeta, zeta+) including the dynamics."""
        if self._loop_elim is None:
            uni = self.universe
            nz = self.model.n_zeta
            g = self.g + [self.succ(p) for p in self.g]
            dyn = [self.var(self.x_vars[i] + nz) - fi for i, fi in enumerate(self.f)]
            h = self.h + [self.succ(p) for p in self.h] + dyn
            if self.eliminate:
                xp = [v + nz for v in self.x_vars]
                binds, h = eliminate_equalities(h, self.x_vars, nonlinear_ok=xp)
            else:
                binds = {}
            g = _clean_ineqs([p.substitute(binds) for p in g])
            self._loop_elim = (binds, g, h)
        return self._loop_elim


def _clean_ineqs(gs: list[Polynomial]) -> list[Polynomial]:
    out = []
    for p in gs:
        if p.degree() == 0:
            if p.constant() < -1e-12:
                raise ModelError("an inequality reduces to a negative constant; the graph is empty")
            continue
        out.append(p)
    return out


def even_floor(d: int) -> int:
    return d - (d % 2)


def _is_equality_multiple(p: Polynomial, hs: Sequence[Polynomial]) -> bool:
    """True when ``p`` is a scalar multiple of one of ``hs`` (redundant product)."""
    if p.is_zero():
        return True
    m0 = max(p.terms, key=lambda m: abs(p.terms[m]))
    for h in hs:
        if set(h.terms) != set(p.terms):
            continue
        r = p.terms[m0] / h.terms[m0]
        if (p - h * r).allclose(Polynomial.zero(p.universe), atol=1e-12 * max(1.0, abs(p.terms[m0]))):
            return True
    return False


# ---------------------------------------------------------------------------
# multiplier bookkeeping
# ---------------------------------------------------------------------------

@dataclass
class MultiplierConfig:
    """Degrees and structure of Positivstellensatz multipliers.

    ``None`` degrees follow the budget rule: SOS multipliers get the
    constraint degree budget minus the degree of the multiplied polynomial,
    rounded down to even; free multipliers get the exact residual degree.
    ``vars`` restricts multiplier bases (``None`` = all constraint variables).
    ``products`` adds SOS multiples of pairwise inequality products.
    ``prune`` drops graph constraints on variables the certified polynomial
    does not involve.  ``sparse`` builds each multiplier over the variables
    of the polynomial it multiplies plus ``vars``.
    """

    ineq_degree: int | None = None
    eq_degree: int | None = None
    vars: Sequence[int] | None = None
    products: bool = False
    budget: int | None = None
    prune: bool = False
    sparse: bool = False


def _sos_multiplier(prog: SosProgram, p: Polynomial, deg: int, vars_, name: str,
                    origin_vanishing=False) -> tuple[Expr | None, DecisionBlock | None]:
    """SOS multiplier of degree ``deg`` times ``p`` (a scalar when deg == 0)."""
    if deg < 0:
        return None, None
    if deg == 0:
        if origin_vanishing:
            return None, None
        blk, e = prog.scalar(name, "nonneg")
        return e * p, blk
    basis = monomial_basis(vars_, deg // 2, min_degree=1 if origin_vanishing else 0)
    if not basis:
        return None, None
    blk, e = prog.sos(basis, name)
    return e * p, blk


def _free_multiplier(prog: SosProgram, p: Polynomial, deg: int, vars_, name: str):
    if deg < 0:
        return None, None
    basis = monomial_basis(vars_, deg)
    blk, e = prog.free(basis, name)
    return e * p, blk


def _apply_multipliers(prog: SosProgram, lhs: Expr, ineqs: list[Polynomial], eqs: list[Polynomial],
                       cfg: MultiplierConfig, vars_: list[int], tag: str) -> tuple[Expr, dict]:
    """Subtract multiplier terms for ``ineqs``/``eqs`` from ``lhs``."""
    budget = cfg.budget if cfg.budget is not None else lhs.degree()
    budget = budget + (budget % 2)
    mvars = sorted(set(cfg.vars) & set(vars_)) if cfg.vars is not None else vars_

    def over(p):
        if not cfg.sparse:
            return mvars
        return sorted(p.variables() | set(cfg.vars or ()))

    made = {"ineq": [], "eq": [], "prod": []}
    for i, g in enumerate(ineqs):
        d = cfg.ineq_degree if cfg.ineq_degree is not None else even_floor(budget - g.degree())
        term, blk = _sos_multiplier(prog, g, d, over(g), f"{tag}_s{i}_")
        if term is not None:
            lhs = lhs - term
            made["ineq"].append(blk.id)
    if cfg.products:
        for i, j in itertools.combinations(range(len(ineqs)), 2):
            prod = ineqs[i] * ineqs[j]
            if prod.degree() > budget or _is_equality_multiple(prod, eqs):
                continue
            term, blk = _sos_multiplier(prog, prod, even_floor(budget - prod.degree()), over(prod),
                                        f"{tag}_pp{i}_{j}_")
            if term is not None:
                lhs = lhs - term
                made["prod"].append(blk.id)
    for i, h in enumerate(eqs):
        d = cfg.eq_degree if cfg.eq_degree is not None else budget - h.degree()
        term, blk = _free_multiplier(prog, h, d, over(h), f"{tag}_p{i}_")
        if term is not None:
            lhs = lhs - term
            made["eq"].append(blk.id)
    return lhs, made


# ---------------------------------------------------------------------------
# Lyapunov function parameterisations
# ---------------------------------------------------------------------------

@dataclass
class Param:
    """A parameterised function over zeta (centred) and the blocks it uses."""

    expr: Expr
    blocks: list[str]
    meta: dict = field(default_factory=dict)

    def at_successor(self, frame: Frame) -> Expr:
        return self.expr.map(frame.succ)


def _resolve_vars(frame: Frame, basis_vars) -> list[int]:
    if basis_vars in (None, "x"):
        return list(frame.x_vars)
    if basis_vars == "zeta":
        return frame.continuous_vars()
    allowed = set(frame.continuous_vars())
    vs = [int(v) for v in basis_vars]
    bad = [v for v in vs if v not in allowed]
    if bad:
        raise ModelError(f"variables {bad} are not declared continuous and cannot enter V")
    return vs


def param_V_general(prog: SosProgram, frame: Frame, deg: int, basis_vars="x",
                    ineq_terms: bool = False, name: str = "V") -> Param:
    """V = sigma(zeta) + sum_i sigma_i(zeta) g_i(zeta) with SOS blocks."""
    if deg < 2 or deg % 2:
        raise ModelError("Lyapunov degree must be even and at least 2")
    vs = _resolve_vars(frame, basis_vars)
    blk, V = prog.sos(monomial_basis(vs, deg // 2), f"{name}_sigma")
    blocks = [blk.id]
    if ineq_terms:
        allowed = set(frame.continuous_vars())
        for i, g in enumerate(frame.g):
            if not g.variables() <= allowed:
                continue
            d = even_floor(deg - g.degree())
            term, b = _sos_multiplier(prog, g, d, vs, f"{name}_ineq{i}_")
            if term is not None:
                V = V + term
                blocks.append(b.id)
    return Param(V, blocks, {"kind": "general", "degree": deg})


def param_V_candidate(prog: SosProgram, frame: Frame, deg: int, basis_vars="zeta",
                      max_product: int = 2, eps: float = EPS_PREC, name: str = "V") -> Param:
    """Candidate Lyapunov function vanishing at the origin trace with a strict minimum.

    V = nu(dz)' Q nu(dz) + x' P x + S_g with P - eps*I PSD.  S_g holds SOS
    multiples of inequality products containing at least one entry that
    vanishes at the origin, and origin-vanishing SOS multiples of products of
    the remaining entries.  Products are capped at ``max_product`` factors.
    """
    if deg < 2 or deg % 2:
        raise ModelError("Lyapunov degree must be even and at least 2")
    vs = _resolve_vars(frame, basis_vars)
    basis = monomial_basis(vs, deg // 2, min_degree=1)
    if not basis:
        raise ModelError("empty basis for the candidate Lyapunov function")
    qb, V = prog.sos(basis, f"{name}_Q")
    pb, Vp = prog.sos(monomial_basis(frame.x_vars, 1, min_degree=1), f"{name}_P", eps=eps)
    V = V + Vp
    blocks = [qb.id, pb.id]
    allowed = set(frame.continuous_vars())
    usable = [i for i, g in enumerate(frame.g) if g.variables() <= allowed]
    zero = [i for i in usable if i in set(frame.zero_index)]
    rest = [i for i in usable if i not in set(frame.zero_index)]
    terms = []
    for r in range(1, max_product + 1):
        for combo in itertools.combinations(usable, r):
            prod = Polynomial.const(1.0, frame.universe)
            for i in combo:
                prod = prod * frame.g[i]
            if prod.degree() > deg or _is_equality_multiple(prod, frame.h):
                continue
            has_zero = any(i in zero for i in combo)
            d = even_floor(deg - prod.degree())
            tag = "_".join(str(i) for i in combo)
            term, b = _sos_multiplier(prog, prod, d, vs, f"{name}_g{tag}_", origin_vanishing=not has_zero)
            if term is not None:
                V = V + term
                blocks.append(b.id)
                terms.append(list(combo))
    off = V.constant_terms()
    if off:
        raise ModelError(f"candidate V does not vanish at the origin trace: {off}")
    return Param(V, blocks, {"kind": "candidate", "degree": deg, "products": terms,
                             "zero_index": zero, "complement": rest})


def fixed_param(poly: Polynomial, frame: Frame | None = None, centered: bool = True) -> Param:
    """Wrap a numeric polynomial (raw coordinates unless ``centered``)."""
    p = poly if centered or frame is None else frame.center(poly)
    return Param(Expr.const(p), [], {"kind": "fixed"})


# ---------------------------------------------------------------------------
# constraint builders
# ---------------------------------------------------------------------------

def constraint_nonneg(prog: SosProgram, frame: Frame, V: Param, cfg: MultiplierConfig | None = None,
                      name: str = "V_nonneg") -> SosConstraint | None:
    """V(zeta) >= 0 on K_phi; only needed when V is not SOS by construction."""
    cfg = cfg or MultiplierConfig()
    binds, g, h = frame.zeta_graph()
    lhs = V.expr.substitute(binds)
    vs = sorted(lhs.variables() | set().union(*(p.variables() for p in g + h)) if g or h else lhs.variables())
    lhs, _ = _apply_multipliers(prog, lhs, g, h, cfg, vs, name)
    return prog.add(name, lhs)


def constraint_decrease(prog: SosProgram, frame: Frame, V: Param, q: Sequence[Expr] | None = None,
                        cfg: MultiplierConfig | None = None, q_mult: Sequence | None = None,
                        q_mult_degree: int | None = None, q_mult_vars=None,
                        name: str = "decrease") -> SosConstraint:
    """V(zeta) - V(zeta+) - |x|^2 - multipliers * [g; q; g+; h; h+; x+ - f] is SOS.

    ``q`` lists region polynomials (local variant).  Their multipliers are
    fresh SOS blocks unless ``q_mult`` supplies fixed numeric polynomials
    (one per entry of ``q``), which keeps the constraint affine when ``q``
    itself carries decisions.
    """
    cfg = cfg or MultiplierConfig()
    binds, g, h = frame.loop_graph()
    lhs = V.expr - V.at_successor(frame) - frame.x_norm2()
    lhs = lhs.substitute(binds)
    qs = [qi.substitute(binds) for qi in (q or [])]
    vs = sorted(lhs.variables().union(*(p.variables() for p in g + h)) if (g or h) else lhs.variables())
    q_terms = []
    for k, qi in enumerate(qs):
        if q_mult is not None:
            m = q_mult[k]
            if m is None:
                continue
            mp = m.fixed() if isinstance(m, Expr) else m
            q_terms.append(qi * mp.substitute(binds))
        else:
            if not qi.is_fixed():
                raise ModelError("a decision-dependent region needs fixed multipliers")
            qp = qi.fixed()
            d = q_mult_degree if q_mult_degree is not None else even_floor(max(lhs.degree(), 2) - qp.degree() + 2)
            mv = _mult_vars(frame, q_mult_vars, vs)
            term, blk = _sos_multiplier(prog, qp, d, mv, f"{name}_q{k}_")
            if term is not None:
                q_terms.append(term)
    for t in q_terms:
        lhs = lhs - t
    if cfg.prune:
        g, h, vs = _prune_graph(frame, lhs, g, h)
    lhs, made = _apply_multipliers(prog, lhs, g, h, cfg, vs, name)
    return prog.add(name, lhs, kind="decrease", multipliers=made)


def _prune_graph(frame: Frame, lhs: Expr, g: list[Polynomial], h: list[Polynomial]):
    """Drop successor-network constraints on lifting variables ``lhs`` ignores.

    Removing constraints only enlarges the set the certificate must cover,
    so this is always sound.  The successor lifting/output variables can
    always be completed from the successor state, so when the certified
    polynomial does not involve them nothing is lost in the set description
    while the multiplier space shrinks considerably.
    """
    uni = frame.universe
    used = lhs.variables()
    drop = {v for b in ("lamp", "up") for v in uni.block(b)} - used
    g = [p for p in g if not p.variables() & drop]
    h = [p for p in h if not p.variables() & drop]
    keep = set(used).union(*(p.variables() for p in g + h))
    return g, h, sorted(keep)


def _mult_vars(frame: Frame, spec, default):
    if spec is None:
        return default
    if spec == "x":
        return list(frame.x_vars)
    return list(spec)


def q_multiplier_blocks(prog: SosProgram, constraint_name: str) -> list[str]:
    """Ids of the SOS blocks multiplying region polynomials in a constraint."""
    pref = f"{constraint_name}_q"
    return [b for b in prog.blocks if b.startswith(pref)]


def constraint_sublevel(prog: SosProgram, frame: Frame, V: Polynomial, gamma: float,
                        q: Sequence[Polynomial], cfg: MultiplierConfig | None = None,
                        s_degree: int | None = None, sigma_q_degree: int = 0,
                        name: str = "sublevel") -> list[SosConstraint]:
    """q_i(x) >= 0 whenever V(zeta) <= gamma on K_phi, one constraint per entry.

    ``V`` and ``q`` are numeric (centred).  The multiplier of q_i is
    ``1 + s`` with ``s`` SOS of ``sigma_q_degree`` (0 keeps it at 1), which
    fixes the scale of the certificate.
    """
    cfg = cfg or MultiplierConfig()
    binds, g, h = frame.zeta_graph()
    Vb = V.substitute(binds)
    out = []
    for k, qk in enumerate(q):
        qb_ = qk.substitute(binds)
        lhs = Expr.const(qb_)
        vs = sorted(set(qb_.variables()) | Vb.variables() | set().union(*(p.variables() for p in g + h)))
        if sigma_q_degree > 0:
            term, _ = _sos_multiplier(prog, qb_, sigma_q_degree, vs, f"{name}{k}_sq_")
            if term is not None:
                lhs = lhs + term
        lev = Polynomial.const(float(gamma), frame.universe) - Vb
        budget = cfg.budget if cfg.budget is not None else max(lhs.degree(), Vb.degree())
        d = s_degree if s_degree is not None else even_floor(budget + (budget % 2) - Vb.degree())
        term, blk = _sos_multiplier(prog, lev, max(d, 0), vs, f"{name}{k}_lev_")
        if term is not None:
            lhs = lhs - term
        lhs, _ = _apply_multipliers(prog, lhs, g, h, cfg, vs, f"{name}{k}")
        out.append(prog.add(f"{name}{k}", lhs, kind="sublevel"))
    return out


def param_q(prog: SosProgram, frame: Frame, deg: int = 4, alpha: float | None = None,
            basis_vars="x", name: str = "q") -> tuple[Expr, DecisionBlock, DecisionBlock | None]:
    """q = alpha - sigma_q with sigma_q SOS and vanishing at the origin trace.

    ``alpha`` is a decision (>= eps_prec) unless a number is given.
    """
    vs = _resolve_vars(frame, basis_vars)
    basis = monomial_basis(vs, deg // 2, min_degree=1)
    sblk, sq = prog.sos(basis, f"{name}_sigma")
    if alpha is None:
        ablk, a = prog.scalar(f"{name}_alpha", "positive", EPS_PREC)
    else:
        ablk, a = None, Expr.const(float(alpha), frame.universe)
    return a - sq, sblk, ablk


def barrier_k(q_succ_degree: int, rhs_degree: int, xi_norm_degree: int = 2) -> int:
    """Smallest k with deg(|xi|^(2k) q(zeta+)) >= rhs degree."""
    k = 0
    while q_succ_degree + xi_norm_degree * k < rhs_degree:
        k += 1
    return k


def constraint_barrier(prog: SosProgram, frame: Frame, q: Expr, cfg: MultiplierConfig | None = None,
                       k: int | None = None, q_mult: Polynomial | None = None,
                       q_mult_degree: int | None = None, q_mult_vars=None,
                       name: str = "barrier") -> SosConstraint:
    """|xi|^(2k) q(zeta+) - multipliers * [g; q; g+; h; h+; x+ - f] is SOS."""
    cfg = cfg or MultiplierConfig()
    binds, g, h = frame.loop_graph()
    q_now = q.substitute(binds)
    q_next = q.map(frame.succ).substitute(binds)
    vs = sorted(q_next.variables() | q_now.variables() | set().union(*(p.variables() for p in g + h)))
    rhs_deg = cfg.budget if cfg.budget is not None else q_next.degree()
    if k is None:
        k = barrier_k(q_next.degree(), rhs_deg)
    lhs = q_next
    if k:
        nrm = Polynomial.zero(frame.universe)
        for v in vs:
            nrm = nrm + frame.var(v) * frame.var(v)
        lhs = lhs * (nrm ** k)
    if q_mult is not None:
        lhs = lhs - q_now * q_mult.substitute(binds)
    else:
        if not q_now.is_fixed():
            raise ModelError("a decision-dependent region needs a fixed multiplier")
        qp = q_now.fixed()
        # two degrees above the matching degree: a multiplier that grows faster
        # than |xi|^(2k) is needed wherever the open loop is unstable
        d = q_mult_degree if q_mult_degree is not None else even_floor(max(lhs.degree(), 2) - qp.degree() + 2)
        term, _ = _sos_multiplier(prog, qp, d, _mult_vars(frame, q_mult_vars, vs), f"{name}_q0_")
        if term is not None:
            lhs = lhs - term
    if cfg.prune:
        g, h, vs = _prune_graph(frame, lhs, g, h)
    lhs, made = _apply_multipliers(prog, lhs, g, h, cfg, vs, name)
    return prog.add(name, lhs, kind="barrier", k=k, multipliers=made)


def constraint_q_superset(prog: SosProgram, frame: Frame, sigma_new: Expr, sigma_old: Polynomial,
                          alpha: float, cfg: MultiplierConfig | None = None,
                          level_mult_degree: int | None = None, level_mult_vars=None,
                          name: str = "superset") -> SosConstraint:
    """sigma_old - sigma_new - s' [g; alpha - sigma_old] - p' h is SOS (zeta only)."""
    cfg = cfg or MultiplierConfig()
    binds, g, h = frame.zeta_graph()
    old = sigma_old.substitute(binds)
    lhs = Expr.const(old) - sigma_new.substitute(binds)
    vs = sorted(lhs.variables() | set().union(*(p.variables() for p in g + h)))
    lev = Polynomial.const(float(alpha), frame.universe) - old
    d = level_mult_degree if level_mult_degree is not None else even_floor(max(lhs.degree(), 2) - lev.degree() + 2)
    term, _ = _sos_multiplier(prog, lev, d, _mult_vars(frame, level_mult_vars, vs), f"{name}_lev_")
    if term is not None:
        lhs = lhs - term
    lhs, made = _apply_multipliers(prog, lhs, g, h, cfg, vs, name)
    return prog.add(name, lhs, kind="superset", multipliers=made)
