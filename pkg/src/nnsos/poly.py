"""Sparse multivariate polynomials over a frozen, named variable universe.

A monomial is a tuple of ``(var_index, exponent)`` pairs sorted by variable
index with strictly positive exponents; the empty tuple is the constant
monomial. Polynomials map monomials to float coefficients and drop any
coefficient whose magnitude falls below :data:`COEFF_TOL` after every
arithmetic operation.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ModelError

COEFF_TOL = 1e-14

Monomial = tuple  # tuple[tuple[int, int], ...]

ONE: Monomial = ()


# ---------------------------------------------------------------------------
# monomials
# ---------------------------------------------------------------------------

def mono(exps: Mapping[int, int] | Iterable[tuple[int, int]]) -> Monomial:
    """Build a canonical monomial from a ``{var: exp}`` mapping or pairs."""
    items = exps.items() if isinstance(exps, Mapping) else exps
    acc: dict[int, int] = {}
    for v, e in items:
        if e < 0:
            raise ModelError(f"negative exponent {e} for variable {v}")
        if e:
            acc[int(v)] = acc.get(int(v), 0) + int(e)
    return tuple(sorted(acc.items()))


def mono_mul(a: Monomial, b: Monomial) -> Monomial:
    if not a:
        return b
    if not b:
        return a
    out = []
    i = j = 0
    while i < len(a) and j < len(b):
        va, ea = a[i]
        vb, eb = b[j]
        if va == vb:
            out.append((va, ea + eb))
            i += 1
            j += 1
        elif va < vb:
            out.append(a[i])
            i += 1
        else:
            out.append(b[j])
            j += 1
    out.extend(a[i:])
    out.extend(b[j:])
    return tuple(out)


def mono_degree(m: Monomial) -> int:
    return sum(e for _, e in m)


def mono_vars(m: Monomial) -> tuple[int, ...]:
    return tuple(v for v, _ in m)


def mono_key(m: Monomial):
    """Sort key realising graded lexicographic order (x0 > x1 > ...)."""
    return (mono_degree(m), tuple((v, -e) for v, e in m))


def mono_str(m: Monomial, names: Sequence[str] | None = None) -> str:
    if not m:
        return "1"
    parts = []
    for v, e in m:
        nm = names[v] if names is not None else f"v{v}"
        parts.append(nm if e == 1 else f"{nm}^{e}")
    return "*".join(parts)


def monomial_basis(vars: Sequence[int], max_degree: int,
                   filter: Callable[[Monomial], bool] | None = None,
                   min_degree: int = 0) -> list[Monomial]:
    """All monomials over ``vars`` with ``min_degree <= deg <= max_degree``.

    The result is in graded lexicographic order and duplicate free. Without
    a filter and with ``min_degree == 0`` it has ``C(n + d, d)`` entries.
    """
    if max_degree < 0:
        raise ValueError("max_degree must be nonnegative")
    vs = sorted(set(int(v) for v in vars))
    out = []
    for d in range(max(min_degree, 0), max_degree + 1):
        for combo in itertools.combinations_with_replacement(vs, d):
            m = mono((v, 1) for v in combo)
            if filter is None or filter(m):
                out.append(m)
    out.sort(key=mono_key)
    return out


# ---------------------------------------------------------------------------
# variable universe
# ---------------------------------------------------------------------------

class Universe:
    """Ordered set of scalar variables grouped into named blocks.

    Blocks are appended while the universe is open; :meth:`freeze` makes it
    immutable. Block membership of any index is recoverable via
    :meth:`block_of`.
    """

    def __init__(self):
        self.names: list[str] = []
        self.blocks: dict[str, list[int]] = {}
        self._index: dict[str, int] = {}
        self._block_of: list[str] = []
        self.frozen = False

    def add_block(self, block: str, size: int, prefix: str | None = None) -> list[int]:
        if self.frozen:
            raise ModelError("variable universe is frozen")
        if block in self.blocks:
            raise ModelError(f"duplicate block {block!r}")
        prefix = block if prefix is None else prefix
        ids = []
        for k in range(size):
            name = f"{prefix}{k + 1}"
            if name in self._index:
                raise ModelError(f"duplicate variable name {name!r}")
            self._index[name] = len(self.names)
            ids.append(len(self.names))
            self.names.append(name)
            self._block_of.append(block)
        self.blocks[block] = ids
        return ids

    def freeze(self) -> "Universe":
        self.frozen = True
        return self

    def __len__(self):
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise ModelError(f"unknown variable {name!r}") from None

    def block_of(self, var: int) -> str:
        return self._block_of[var]

    def block(self, name: str) -> list[int]:
        return list(self.blocks.get(name, []))

    def var(self, name: str) -> "Polynomial":
        return Polynomial.var(self.index(name), universe=self)

    def vars(self, block: str) -> list["Polynomial"]:
        return [Polynomial.var(i, universe=self) for i in self.blocks.get(block, [])]


# ---------------------------------------------------------------------------
# polynomials
# ---------------------------------------------------------------------------

def _check_universe(a: "Polynomial", b: "Polynomial"):
    if a.universe is not None and b.universe is not None and a.universe is not b.universe:
        raise ModelError("polynomials belong to different variable universes")
    return a.universe if a.universe is not None else b.universe


class Polynomial:
    """Immutable sparse polynomial with float coefficients."""

    __slots__ = ("terms", "universe", "_hash")

    def __init__(self, terms: Mapping[Monomial, float] | None = None,
                 universe: Universe | None = None, *, _clean: bool = False):
        if terms is None:
            terms = {}
        if _clean:
            self.terms = dict(terms)
        else:
            self.terms = {m: float(c) for m, c in terms.items() if abs(c) >= COEFF_TOL}
        self.universe = universe
        self._hash = None

    # -- constructors -------------------------------------------------------
    @classmethod
    def const(cls, c: float, universe: Universe | None = None) -> "Polynomial":
        return cls({ONE: c}, universe)

    @classmethod
    def var(cls, index: int, universe: Universe | None = None) -> "Polynomial":
        return cls({((int(index), 1),): 1.0}, universe)

    @classmethod
    def zero(cls, universe: Universe | None = None) -> "Polynomial":
        return cls({}, universe)

    @classmethod
    def from_monomial(cls, m: Monomial, c: float = 1.0,
                      universe: Universe | None = None) -> "Polynomial":
        return cls({m: c}, universe)

    @classmethod
    def affine(cls, coeffs: Sequence[float], vars: Sequence[int], const: float = 0.0,
               universe: Universe | None = None) -> "Polynomial":
        terms: dict[Monomial, float] = {}
        if const:
            terms[ONE] = float(const)
        for c, v in zip(coeffs, vars):
            if c:
                m = ((int(v), 1),)
                terms[m] = terms.get(m, 0.0) + float(c)
        return cls(terms, universe)

    def _lift(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            return other
        if isinstance(other, (int, float, np.floating, np.integer)):
            return Polynomial.const(float(other), self.universe)
        return NotImplemented

    # -- basic queries ------------------------------------------------------
    def __len__(self):
        return len(self.terms)

    def is_zero(self) -> bool:
        return not self.terms

    def degree(self) -> int:
        return max((mono_degree(m) for m in self.terms), default=0)

    def min_degree(self) -> int:
        return min((mono_degree(m) for m in self.terms), default=0)

    def variables(self) -> set[int]:
        return {v for m in self.terms for v, _ in m}

    def coeff(self, m: Monomial) -> float:
        return self.terms.get(m, 0.0)

    def constant(self) -> float:
        return self.terms.get(ONE, 0.0)

    def monomials(self) -> list[Monomial]:
        return sorted(self.terms, key=mono_key)

    def is_affine(self) -> bool:
        return self.degree() <= 1

    # -- arithmetic ---------------------------------------------------------
    def __add__(self, other):
        other = self._lift(other)
        if other is NotImplemented:
            return other
        uni = _check_universe(self, other)
        out = dict(self.terms)
        for m, c in other.terms.items():
            out[m] = out.get(m, 0.0) + c
        return Polynomial(out, uni)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial({m: -c for m, c in self.terms.items()}, self.universe, _clean=True)

    def __sub__(self, other):
        other = self._lift(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        other = self._lift(other)
        if other is NotImplemented:
            return other
        return other + (-self)

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            s = float(other)
            return Polynomial({m: c * s for m, c in self.terms.items()}, self.universe)
        if not isinstance(other, Polynomial):
            return NotImplemented
        uni = _check_universe(self, other)
        out: dict[Monomial, float] = {}
        for ma, ca in self.terms.items():
            for mb, cb in other.terms.items():
                m = mono_mul(ma, mb)
                out[m] = out.get(m, 0.0) + ca * cb
        return Polynomial(out, uni)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, float, np.floating, np.integer)):
            return self * (1.0 / float(other))
        return NotImplemented

    def __pow__(self, k: int):
        if not isinstance(k, (int, np.integer)) or k < 0:
            raise ValueError("only nonnegative integer powers are supported")
        result = Polynomial.const(1.0, self.universe)
        base = self
        while k:
            if k & 1:
                result = result * base
            k >>= 1
            if k:
                base = base * base
        return result

    # -- comparisons --------------------------------------------------------
    def __eq__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.const(float(other))
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.terms == other.terms

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(frozenset(self.terms.items()))
        return self._hash

    def allclose(self, other: "Polynomial", atol: float = 1e-9, rtol: float = 0.0) -> bool:
        keys = set(self.terms) | set(other.terms)
        for m in keys:
            a, b = self.terms.get(m, 0.0), other.terms.get(m, 0.0)
            if abs(a - b) > atol + rtol * max(abs(a), abs(b)):
                return False
        return True

    # -- evaluation ---------------------------------------------------------
    def evaluate(self, point):
        """Evaluate at ``point``.

        ``point`` is either a mapping ``var -> value`` or an indexable array
        whose entry ``i`` is the value of variable ``i`` (values may be numpy
        arrays for vectorised evaluation).
        """
        total = 0.0
        is_map = isinstance(point, Mapping)
        cache: dict[tuple[int, int], object] = {}
        for m, c in self.terms.items():
            val = c
            for v, e in m:
                key = (v, e)
                p = cache.get(key)
                if p is None:
                    if is_map:
                        if v not in point:
                            raise ModelError(f"no value assigned to variable {self._name(v)}")
                        base = point[v]
                    else:
                        if v >= len(point):
                            raise ModelError(f"no value assigned to variable {self._name(v)}")
                        base = point[v]
                    p = base if e == 1 else base ** e
                    cache[key] = p
                val = val * p
            total = total + val
        return total

    __call__ = evaluate

    def _name(self, v: int) -> str:
        if self.universe is not None and v < len(self.universe.names):
            return self.universe.names[v]
        return f"v{v}"

    def substitute(self, bindings: Mapping[int, "Polynomial | float"]) -> "Polynomial":
        """Replace variables by polynomials (or constants) simultaneously."""
        if not bindings:
            return self
        uni = self.universe
        binds: dict[int, Polynomial] = {}
        for v, p in bindings.items():
            if not isinstance(p, Polynomial):
                p = Polynomial.const(float(p), uni)
            else:
                uni = _check_universe(Polynomial({}, uni), p)
            binds[int(v)] = p
        powers: dict[tuple[int, int], Polynomial] = {}

        def power(v, e):
            key = (v, e)
            if key not in powers:
                powers[key] = binds[v] ** e
            return powers[key]

        out: dict[Monomial, float] = {}
        for m, c in self.terms.items():
            keep = tuple((v, e) for v, e in m if v not in binds)
            sub = [(v, e) for v, e in m if v in binds]
            if not sub:
                out[keep] = out.get(keep, 0.0) + c
                continue
            prod = Polynomial({keep: c}, uni)
            for v, e in sub:
                prod = prod * power(v, e)
            for mm, cc in prod.terms.items():
                out[mm] = out.get(mm, 0.0) + cc
        return Polynomial(out, uni)

    def diff(self, var: int) -> "Polynomial":
        out: dict[Monomial, float] = {}
        for m, c in self.terms.items():
            for k, (v, e) in enumerate(m):
                if v == var:
                    nm = m[:k] + (((v, e - 1),) if e > 1 else ()) + m[k + 1:]
                    out[nm] = out.get(nm, 0.0) + c * e
        return Polynomial(out, self.universe)

    def rename(self, mapping: Mapping[int, int]) -> "Polynomial":
        """Relabel variables (an injective index map); cheaper than substitute."""
        out: dict[Monomial, float] = {}
        for m, c in self.terms.items():
            nm = mono((mapping.get(v, v), e) for v, e in m)
            out[nm] = out.get(nm, 0.0) + c
        return Polynomial(out, self.universe)

    def with_universe(self, universe: Universe | None) -> "Polynomial":
        return Polynomial(self.terms, universe, _clean=True)

    # -- serialisation ------------------------------------------------------
    def to_json(self, names: Sequence[str] | None = None) -> dict:
        if names is None and self.universe is not None:
            names = self.universe.names
        terms = []
        for m in self.monomials():
            exps = {(names[v] if names is not None else f"v{v}"): e for v, e in m}
            terms.append({"exps": exps, "coeff": self.terms[m]})
        return {"terms": terms}

    @classmethod
    def from_json(cls, data: Mapping, universe: Universe) -> "Polynomial":
        terms: dict[Monomial, float] = {}
        for t in data.get("terms", []):
            m = mono((universe.index(name), int(e)) for name, e in t.get("exps", {}).items())
            terms[m] = terms.get(m, 0.0) + float(t["coeff"])
        return cls(terms, universe)

    def __repr__(self):
        if not self.terms:
            return "0"
        names = self.universe.names if self.universe is not None else None
        parts = []
        for m in sorted(self.terms, key=mono_key, reverse=True):
            c = self.terms[m]
            parts.append(f"{c:+.6g}" + ("" if not m else "*" + mono_str(m, names)))
        return " ".join(parts)


def poly_arith(a: Polynomial, b: Polynomial, kind: str) -> Polynomial:
    if kind == "add":
        return a + b
    if kind == "sub":
        return a - b
    if kind == "mul":
        return a * b
    raise ValueError(f"unknown arithmetic kind {kind!r}")


def evaluate(p: Polynomial, point) -> float:
    return p.evaluate(point)


def substitute(p: Polynomial, bindings: Mapping[int, Polynomial]) -> Polynomial:
    return p.substitute(bindings)


def dot(coeffs: Sequence[float], polys: Sequence[Polynomial]) -> Polynomial:
    out = Polynomial.zero(polys[0].universe if polys else None)
    for c, p in zip(coeffs, polys):
        if c:
            out = out + p * float(c)
    return out


def quad_form(basis: Sequence[Polynomial], G: np.ndarray) -> Polynomial:
    """``basis^T G basis`` for a numeric matrix ``G``."""
    G = np.asarray(G, dtype=float)
    n = len(basis)
    uni = basis[0].universe if n else None
    out: dict[Monomial, float] = {}
    for i in range(n):
        for j in range(n):
            c = G[i, j]
            if c == 0.0:
                continue
            for p in (basis[i] * basis[j],):
                for m, cc in p.terms.items():
                    out[m] = out.get(m, 0.0) + c * cc
    return Polynomial(out, uni)


def sum_sq_norm(vars: Sequence[int], universe: Universe | None = None) -> Polynomial:
    """``sum_i v_i^2`` over the given variables."""
    return Polynomial({((int(v), 2),): 1.0 for v in vars}, universe)


def comb(n: int, k: int) -> int:
    return math.comb(n, k)
