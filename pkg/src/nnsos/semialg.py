"""Semialgebraic graph descriptions of neural networks and closed loops.

Every closed-loop model owns one frozen :class:`~nnsos.poly.Universe` with
blocks ``x``, ``lam``, ``u`` (the current-step vector zeta) followed by
``xp``, ``lamp``, ``up`` (the successor copy).  The successor copy of
zeta-variable ``i`` is ``i + n_zeta``.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ModelError
from .poly import Polynomial, Universe

log = logging.getLogger(__name__)

WELLPOSED_EIG_TOL = 1e-9
EQUILIBRIUM_TOL = 1e-12
EQUILIBRIUM_MAX_ITER = 1000
ORIGIN_TOL = 1e-9

KINDS = ("relu", "sat", "softplus_hat", "tanh_hat", "identity", "tanh_approx")


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Activation:
    """Scalar activation with a polynomially constrained graph.

    ``c`` is the softplus offset for ``softplus_hat`` and the slope for
    ``tanh_hat``/``tanh_approx``; ``delta`` bounds the squared slack of
    ``tanh_approx``.
    """

    kind: str
    c: float | None = None
    delta: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ModelError(f"unsupported activation kind {self.kind!r}")
        if self.kind in ("softplus_hat", "tanh_hat", "tanh_approx"):
            if self.c is None or not self.c > 0:
                raise ModelError(f"{self.kind} needs a positive parameter c")
        if self.kind == "tanh_approx" and (self.delta is None or not self.delta > 0):
            raise ModelError("tanh_approx needs a positive slack bound delta")

    @property
    def n_aux(self) -> int:
        return {"sat": 2, "tanh_approx": 1}.get(self.kind, 0)

    @classmethod
    def parse(cls, spec) -> "Activation":
        """Accept ``"relu"``, ``"softplus_hat(0.48)"``, ``"tanh_approx(1, 1e-3)"``
        or a dict ``{"kind": ..., "c": ..., "delta": ...}``."""
        if isinstance(spec, Activation):
            return spec
        if isinstance(spec, dict):
            return cls(spec["kind"], spec.get("c"), spec.get("delta"))
        if not isinstance(spec, str):
            raise ModelError(f"cannot parse activation {spec!r}")
        m = re.fullmatch(r"\s*(\w+)\s*(?:\((.*)\))?\s*", spec)
        if not m:
            raise ModelError(f"cannot parse activation {spec!r}")
        kind, args = m.group(1), m.group(2)
        try:
            vals = [float(a) for a in args.split(",")] if args else []
        except ValueError:
            raise ModelError(f"cannot parse activation parameters in {spec!r}") from None
        return cls(kind, *vals)

    def tag(self) -> str:
        if self.kind == "tanh_approx":
            return f"tanh_approx({self.c!r}, {self.delta!r})"
        if self.c is not None:
            return f"{self.kind}({self.c!r})"
        return self.kind

    # -- closed forms ------------------------------------------------------
    def forward(self, v):
        v = np.asarray(v, dtype=float)
        k = self.kind
        if k == "relu":
            return np.maximum(v, 0.0)
        if k == "sat":
            return np.clip(v, -1.0, 1.0)
        if k == "identity":
            return v.copy()
        if k == "softplus_hat":
            return softplus_hat(v, self.c)
        if k == "tanh_hat":
            return tanh_hat(v, self.c)
        return np.tanh(v)

    def aux(self, v) -> list:
        """Values of the auxiliary lifting variables at preactivation ``v``."""
        v = np.asarray(v, dtype=float)
        if self.kind == "sat":
            return [np.maximum(v + 1.0, 0.0), np.maximum(v - 1.0, 0.0)]
        if self.kind == "tanh_approx":
            return [np.tanh(v) - tanh_hat(v, self.c)]
        return []

    def derivative(self, v):
        """Derivative (zero subgradient at kinks)."""
        v = np.asarray(v, dtype=float)
        k = self.kind
        if k == "relu":
            return (v > 0).astype(float)
        if k == "sat":
            return (np.abs(v) < 1).astype(float)
        if k == "identity":
            return np.ones_like(v)
        if k == "softplus_hat":
            return 0.5 + 0.25 * v / np.sqrt(self.c + 0.25 * v * v)
        if k == "tanh_hat":
            return self.c / (1.0 + (self.c * v) ** 2) ** 1.5
        return 1.0 - np.tanh(v) ** 2

    def aux_derivative(self, v) -> list:
        v = np.asarray(v, dtype=float)
        if self.kind == "sat":
            return [(v + 1 > 0).astype(float), (v - 1 > 0).astype(float)]
        if self.kind == "tanh_approx":
            return [1.0 - np.tanh(v) ** 2 - self.c / (1.0 + (self.c * v) ** 2) ** 1.5]
        return []


def softplus_hat(v, c):
    """Smooth semialgebraic softplus ``v/2 + sqrt(c + v^2/4)``."""
    v = np.asarray(v, dtype=float)
    s = np.sqrt(c + 0.25 * v * v)
    # for v < 0 the direct sum cancels; use y = c / (s - v/2) there
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(v >= 0, 0.5 * v + s, c / (s - 0.5 * v))


def tanh_hat(v, c):
    """Smooth semialgebraic tanh surrogate ``c v / sqrt(1 + (c v)^2)``."""
    v = np.asarray(v, dtype=float)
    cv = c * v
    return cv / np.sqrt(1.0 + cv * cv)


def encode_neuron(act: Activation, preact: Polynomial, out_var: int,
                  aux_vars: Sequence[int] = (),
                  universe: Universe | None = None) -> tuple[list[Polynomial], list[Polynomial]]:
    """Inequalities ``g >= 0`` and equalities ``h = 0`` describing ``y = act(preact)``."""
    act = Activation.parse(act)
    if len(aux_vars) != act.n_aux:
        raise ModelError(f"{act.kind} needs {act.n_aux} auxiliary variables, got {len(aux_vars)}")
    uni = universe if universe is not None else preact.universe
    y = Polynomial.var(out_var, uni)
    v = preact
    k = act.kind
    if k == "relu":
        return [y, y - v], [y * (y - v)]
    if k == "identity":
        return [], [y - v]
    if k == "softplus_hat":
        return [y, y - v], [y * (y - v) - act.c]
    if k == "tanh_hat":
        cv = v * act.c
        return [v * y], [y * y * (1 + cv * cv) - cv * cv]
    if k == "sat":
        z1 = Polynomial.var(aux_vars[0], uni)
        z2 = Polynomial.var(aux_vars[1], uni)
        g1, h1 = encode_neuron(Activation("relu"), v + 1, aux_vars[0], (), uni)
        g2, h2 = encode_neuron(Activation("relu"), v - 1, aux_vars[1], (), uni)
        return g1 + g2, h1 + h2 + [y - z1 + z2 + 1]
    if k == "tanh_approx":
        d = Polynomial.var(aux_vars[0], uni)
        cv = v * act.c
        yd = y - d
        return [v * yd, act.delta - d * d], [yd * yd * (1 + cv * cv) - cv * cv]
    raise ModelError(f"unsupported activation kind {k!r}")


# ---------------------------------------------------------------------------
# network descriptions
# ---------------------------------------------------------------------------

def _mat(a, rows=None, cols=None, name="matrix") -> np.ndarray:
    arr = np.atleast_2d(np.asarray(a, dtype=float)) if a is not None else np.zeros((rows or 0, cols or 0))
    if arr.size == 0:
        arr = np.zeros((rows or 0, cols or 0))
    if rows is not None and arr.shape[0] != rows or cols is not None and arr.shape[1] != cols:
        raise ModelError(f"{name} has shape {arr.shape}, expected ({rows}, {cols})")
    return arr


def _vec(a, n, name="vector") -> np.ndarray:
    if a is None:
        return np.zeros(n)
    arr = np.asarray(a, dtype=float).reshape(-1)
    if arr.shape[0] != n:
        raise ModelError(f"{name} has length {arr.shape[0]}, expected {n}")
    return arr


@dataclass
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activations: list[Activation] | None = None  # None for the affine output layer


@dataclass
class FeedforwardNet:
    """Layered network ``u = W_out phi(... phi(W_1 x + b_1) ...) + b_out``.

    If the last layer carries activations the neuron outputs are the network
    outputs directly (no affine read-out).
    """

    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ModelError("feedforward network needs at least one layer")
        prev = None
        for i, L in enumerate(self.layers):
            L.weight = _mat(L.weight, name=f"layer {i} weight")
            L.bias = _vec(L.bias, L.weight.shape[0], name=f"layer {i} bias")
            if prev is not None and L.weight.shape[1] != prev:
                raise ModelError(f"layer {i} expects {L.weight.shape[1]} inputs, previous layer has {prev}")
            if L.activations is not None:
                L.activations = [Activation.parse(a) for a in L.activations]
                if len(L.activations) != L.weight.shape[0]:
                    raise ModelError(f"layer {i} has {L.weight.shape[0]} neurons but "
                                     f"{len(L.activations)} activations")
            elif i != len(self.layers) - 1:
                raise ModelError(f"hidden layer {i} has no activations")
            prev = L.weight.shape[0]

    @property
    def n_in(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def n_out(self) -> int:
        return self.layers[-1].weight.shape[0]

    @property
    def direct_output(self) -> bool:
        return self.layers[-1].activations is not None

    def lifting_layout(self):
        """List of ``(layer, neuron, role)`` per lifting variable.

        ``role`` is ``"out"`` for a hidden neuron's output and ``("aux", k)``
        for auxiliaries; output neurons of a direct-output last layer place
        only their auxiliaries here.
        """
        lay = []
        for li, L in enumerate(self.layers):
            if L.activations is None:
                continue
            last = li == len(self.layers) - 1
            for ni, a in enumerate(L.activations):
                if not last:
                    lay.append((li, ni, "out"))
                for k in range(a.n_aux):
                    lay.append((li, ni, ("aux", k)))
        return lay

    @property
    def n_lifting(self) -> int:
        return len(self.lifting_layout())

    def forward(self, x: np.ndarray):
        """Return ``(lam, u)`` for inputs ``x`` of shape ``(n_in, N)``."""
        z = np.asarray(x, dtype=float)
        vals: dict = {}
        for li, L in enumerate(self.layers):
            v = L.weight @ z + L.bias[:, None]
            if L.activations is None:
                z = v
                break
            outs = []
            for ni, a in enumerate(L.activations):
                outs.append(a.forward(v[ni]))
                vals[(li, ni, "out")] = outs[-1]
                for k, av in enumerate(a.aux(v[ni])):
                    vals[(li, ni, ("aux", k))] = av
            z = np.array(outs)
        lam = np.array([vals[key] for key in self.lifting_layout()]).reshape(-1, z.shape[1])
        return lam, z

    def jacobian(self, x0: np.ndarray):
        """``(dlam/dx, du/dx)`` at a single point."""
        z = np.asarray(x0, dtype=float).reshape(-1)
        J = np.eye(len(z))
        rows: dict = {}
        for li, L in enumerate(self.layers):
            v = L.weight @ z + L.bias
            Jv = L.weight @ J
            if L.activations is None:
                z, J = v, Jv
                break
            outs, Jo = [], []
            for ni, a in enumerate(L.activations):
                outs.append(float(a.forward(v[ni])))
                Jo.append(float(a.derivative(v[ni])) * Jv[ni])
                rows[(li, ni, "out")] = Jo[-1]
                for k, d in enumerate(a.aux_derivative(v[ni])):
                    rows[(li, ni, ("aux", k))] = float(d) * Jv[ni]
            z, J = np.array(outs), np.array(Jo)
        lay = self.lifting_layout()
        Jl = np.array([rows[key] for key in lay]) if lay else np.zeros((0, self.n_in))
        return Jl, J


@dataclass
class ImplicitNet:
    """Recurrent equilibrium network in linear fractional form.

    With internal state ``xp`` (dimension ``n_state``) and neurons
    ``w = phi(v)``::

        xp+ = A xp + B1 w + B2 x + bx
        v   = C1 xp + D11 w + D12 x + bv
        u   = C2 xp + D21 w + D22 x + bu

    When the read-out matrices are all absent the network output is ``w``
    itself (``direct_output``).
    """

    D11: np.ndarray
    D12: np.ndarray
    activations: list[Activation]
    bv: np.ndarray | None = None
    A: np.ndarray | None = None
    B1: np.ndarray | None = None
    B2: np.ndarray | None = None
    C1: np.ndarray | None = None
    bx: np.ndarray | None = None
    C2: np.ndarray | None = None
    D21: np.ndarray | None = None
    D22: np.ndarray | None = None
    bu: np.ndarray | None = None

    def __post_init__(self):
        self.activations = [Activation.parse(a) for a in self.activations]
        nphi = len(self.activations)
        self.direct_output = self.C2 is None and self.D21 is None and self.D22 is None
        self.D11 = _mat(self.D11, nphi, nphi, "D11")
        self.D12 = _mat(self.D12, nphi, None, "D12")
        nx = self.D12.shape[1]
        ns = 0 if self.A is None else np.atleast_2d(np.asarray(self.A, dtype=float)).shape[0]
        self.A = _mat(self.A, ns, ns, "A")
        self.B1 = _mat(self.B1, ns, nphi, "B1")
        self.B2 = _mat(self.B2, ns, nx, "B2")
        self.C1 = _mat(self.C1, nphi, ns, "C1")
        self.bx = _vec(self.bx, ns, "bx")
        self.bv = _vec(self.bv, nphi, "bv")
        if not self.direct_output:
            nu = next(np.atleast_2d(np.asarray(M, dtype=float)).shape[0]
                      for M in (self.C2, self.D21, self.D22) if M is not None)
            self.C2 = _mat(self.C2, nu, ns, "C2")
            self.D21 = _mat(self.D21, nu, nphi, "D21")
            self.D22 = _mat(self.D22, nu, nx, "D22")
            self.bu = _vec(self.bu, nu, "bu")

    @property
    def n_phi(self) -> int:
        return len(self.activations)

    @property
    def n_in(self) -> int:
        return self.D12.shape[1]

    @property
    def n_state(self) -> int:
        return self.A.shape[0]

    @property
    def n_out(self) -> int:
        return self.n_phi if self.direct_output else self.C2.shape[0]

    @property
    def n_aux(self) -> int:
        return sum(a.n_aux for a in self.activations)

    @property
    def n_lifting(self) -> int:
        return self.n_aux if self.direct_output else self.n_phi + self.n_aux

    def solve_neurons(self, x: np.ndarray, xs: np.ndarray, tol=1e-13, max_iter=100):
        """Solve ``w = phi(C1 xs + D11 w + D12 x + bv)`` by batched Newton steps."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        N = x.shape[1]
        xs = np.zeros((self.n_state, N)) if xs is None else np.atleast_2d(xs)
        c = self.D12 @ x + self.C1 @ xs + self.bv[:, None]
        w = np.zeros((self.n_phi, N))
        eye = np.eye(self.n_phi)
        for it in range(max_iter):
            v = self.D11 @ w + c
            phi = np.array([a.forward(v[i]) for i, a in enumerate(self.activations)]).reshape(w.shape)
            r = w - phi
            err = np.max(np.abs(r)) if r.size else 0.0
            if err <= tol * max(1.0, np.max(np.abs(w)) if w.size else 1.0):
                break
            dphi = np.array([a.derivative(v[i]) for i, a in enumerate(self.activations)]).reshape(w.shape)
            J = eye[None, :, :] - dphi.T[:, :, None] * self.D11[None, :, :]
            step = np.linalg.solve(J, r.T[:, :, None])[:, :, 0].T
            w = w - step
        else:
            log.debug("implicit layer Newton stopped at residual %.3e", err)
        v = self.D11 @ w + c
        return w, v

    def forward(self, x: np.ndarray, xs: np.ndarray | None = None):
        """Return ``(lam, u, v)`` where lam stacks w (if not direct) and auxiliaries."""
        w, v = self.solve_neurons(x, xs)
        aux = []
        for i, a in enumerate(self.activations):
            aux.extend(a.aux(v[i]))
        aux = np.array(aux).reshape(-1, w.shape[1])
        if self.direct_output:
            return aux, w, v
        xs = np.zeros((self.n_state, w.shape[1])) if xs is None else np.atleast_2d(xs)
        u = self.C2 @ xs + self.D21 @ w + self.D22 @ np.atleast_2d(x) + self.bu[:, None]
        return np.vstack([w, aux]), u, v

    def jacobian(self, x0, xs0=None):
        """Derivatives of ``(lam, u)`` with respect to the augmented state [x; xs]."""
        x0 = np.asarray(x0, dtype=float).reshape(-1, 1)
        xs0 = np.zeros((self.n_state, 1)) if xs0 is None else np.asarray(xs0, dtype=float).reshape(-1, 1)
        w, v = self.solve_neurons(x0, xs0)
        v = v[:, 0]
        dphi = np.array([float(a.derivative(v[i])) for i, a in enumerate(self.activations)])
        Dv = np.hstack([self.D12, self.C1])  # dv/d[x; xs] without the w feedback
        M = np.eye(self.n_phi) - dphi[:, None] * self.D11
        Jw = np.linalg.solve(M, dphi[:, None] * Dv)
        Jv = Dv + self.D11 @ Jw
        Jaux = []
        for i, a in enumerate(self.activations):
            for d in a.aux_derivative(v[i]):
                Jaux.append(float(d) * Jv[i])
        Jaux = np.array(Jaux).reshape(-1, Dv.shape[1])
        if self.direct_output:
            return Jaux, Jw
        Ju = np.hstack([self.D22, self.C2]) + self.D21 @ Jw
        return np.vstack([Jw, Jaux]), Ju


def check_wellposedness(net: ImplicitNet) -> bool:
    """True iff ``2I - D11 - D11^T`` has smallest eigenvalue above 1e-9."""
    return wellposedness_margin(net) > WELLPOSED_EIG_TOL


def wellposedness_margin(net: ImplicitNet) -> float:
    D = np.asarray(net.D11, dtype=float)
    if D.size == 0:
        return math.inf
    M = 2 * np.eye(D.shape[0]) - D - D.T
    return float(np.linalg.eigvalsh(M)[0])


# ---------------------------------------------------------------------------
# graphs and models
# ---------------------------------------------------------------------------

@dataclass
class SemialgebraicGraph:
    """Inequalities ``g >= 0`` and equalities ``h = 0`` over one universe."""

    g: list[Polynomial]
    h: list[Polynomial]
    n_lifting: int
    zero_index: list[int] = field(default_factory=list)
    continuity: dict = field(default_factory=dict)
    universe: Universe | None = None

    def complement_index(self) -> list[int]:
        z = set(self.zero_index)
        return [i for i in range(len(self.g)) if i not in z]

    def residuals(self, point) -> tuple[np.ndarray, np.ndarray]:
        gv = np.array([p(point) for p in self.g]) if self.g else np.zeros(0)
        hv = np.array([p(point) for p in self.h]) if self.h else np.zeros(0)
        return gv, hv


@dataclass
class ClosedLoopModel:
    """Closed loop ``x+ = f(x, u)``, ``u = phi(x)`` with its graph sets.

    ``f`` is a list of polynomials over zeta variables. ``trace`` maps a
    state array of shape ``(n, N)`` to the full zeta array of shape
    ``(n_zeta, N)``.  Coordinates are already shifted so the origin is an
    equilibrium; ``offset`` records the shift.
    """

    universe: Universe
    n: int
    n_lam: int
    m: int
    f: list[Polynomial]
    k_phi: SemialgebraicGraph
    trace: Callable | None
    zeta_jacobian: Callable | None = None
    offset: np.ndarray | None = None
    name: str = "model"
    meta: dict = field(default_factory=dict)
    _k_l: SemialgebraicGraph | None = None

    @property
    def n_zeta(self) -> int:
        return self.n + self.n_lam + self.m

    @property
    def x_vars(self) -> list[int]:
        return self.universe.block("x")

    @property
    def zeta_vars(self) -> list[int]:
        return list(range(self.n_zeta))

    def succ(self, var: int) -> int:
        return var + self.n_zeta

    def to_successor(self, p: Polynomial) -> Polynomial:
        """Rename every zeta variable of ``p`` to its successor copy."""
        return p.rename({i: i + self.n_zeta for i in range(self.n_zeta)})

    @property
    def k_l(self) -> SemialgebraicGraph:
        if self._k_l is None:
            self._k_l = build_loop_graph(self)
        return self._k_l

    def has_trace(self) -> bool:
        return self.trace is not None

    def zeta(self, x) -> np.ndarray:
        if self.trace is None:
            raise ModelError("model has no forward evaluation (raw graph)")
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        Z = self.trace(x.reshape(self.n, -1))
        return Z[:, 0] if single else Z

    def zeta0(self) -> np.ndarray:
        return self.zeta(np.zeros(self.n))

    def step(self, x) -> np.ndarray:
        """One closed-loop step for states of shape ``(n,)`` or ``(n, N)``."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        Z = self.trace(x.reshape(self.n, -1))
        out = np.array([fi(Z) * np.ones(Z.shape[1]) for fi in self.f])
        return out[:, 0] if single else out

    def simulate(self, x0, steps: int) -> np.ndarray:
        xs = [np.asarray(x0, dtype=float)]
        for _ in range(steps):
            xs.append(self.step(xs[-1]))
        return np.array(xs)

    def linearization(self) -> np.ndarray:
        """Closed-loop Jacobian at the origin."""
        if self.zeta_jacobian is None:
            raise ModelError("model provides no network Jacobian")
        dz = self.zeta_jacobian()  # (n_zeta, n)
        z0 = self.zeta0()
        A = np.zeros((self.n, self.n))
        for i, fi in enumerate(self.f):
            grad = np.array([fi.diff(j)(z0) for j in range(self.n_zeta)], dtype=float)
            A[i] = grad @ dz
        return A


def compute_zero_index(graph: SemialgebraicGraph, zeta0: np.ndarray, tol=ORIGIN_TOL) -> list[int]:
    """Indices of ``g`` vanishing at the origin trace."""
    return [i for i, gi in enumerate(graph.g) if abs(gi(zeta0)) <= tol]


def make_universe(n: int, n_lam: int, m: int) -> Universe:
    uni = Universe()
    uni.add_block("x", n, "x")
    uni.add_block("lam", n_lam, "lam")
    uni.add_block("u", m, "u")
    uni.add_block("xp", n, "xp")
    uni.add_block("lamp", n_lam, "lamp")
    uni.add_block("up", m, "up")
    return uni.freeze()


def _affine_rows(W, b, inputs: list[Polynomial], uni) -> list[Polynomial]:
    out = []
    for i in range(W.shape[0]):
        p = Polynomial.const(float(b[i]), uni)
        for j, c in enumerate(W[i]):
            if c:
                p = p + inputs[j] * float(c)
        out.append(p)
    return out


def _encode_feedforward(net: FeedforwardNet, x_polys, lam_ids, u_ids, uni):
    lay = net.lifting_layout()
    pos = {key: lam_ids[k] for k, key in enumerate(lay)}
    g, h = [], []
    z = list(x_polys)
    for li, L in enumerate(net.layers):
        pre = _affine_rows(L.weight, L.bias, z, uni)
        if L.activations is None:
            for i, p in enumerate(pre):
                h.append(Polynomial.var(u_ids[i], uni) - p)
            break
        last = li == len(net.layers) - 1
        nz = []
        for ni, a in enumerate(L.activations):
            out = u_ids[ni] if last else pos[(li, ni, "out")]
            aux = [pos[(li, ni, ("aux", k))] for k in range(a.n_aux)]
            gi, hi = encode_neuron(a, pre[ni], out, aux, uni)
            g += gi
            h += hi
            nz.append(Polynomial.var(out, uni))
        z = nz
    return g, h


def build_feedforward_graph(net: FeedforwardNet, universe: Universe | None = None) -> SemialgebraicGraph:
    """Graph of ``u = net(x)`` with one lifting variable per hidden neuron."""
    uni = universe or make_universe(net.n_in, net.n_lifting, net.n_out)
    x = uni.vars("x")[: net.n_in]
    g, h = _encode_feedforward(net, x, uni.block("lam"), uni.block("u"), uni)
    graph = SemialgebraicGraph(g, h, net.n_lifting, universe=uni,
                               continuity=_auto_continuity(net.n_lifting, net.n_out))
    lam0, u0 = net.forward(np.zeros((net.n_in, 1)))
    z0 = np.concatenate([np.zeros(len(uni.block("x"))), lam0[:, 0], u0[:, 0]])
    graph.zero_index = compute_zero_index(graph, z0)
    return graph


def _auto_continuity(n_lam, m):
    return {"lam": list(range(n_lam)), "u": list(range(m)), "source": "auto"}


def _encode_implicit(net: ImplicitNet, xt_polys, lam_ids, u_ids, uni):
    """Encode the implicit layer; neurons w live in u (direct) or lam[:n_phi]."""
    nx = net.n_in
    x = xt_polys[:nx]
    xs = xt_polys[nx:]
    if net.direct_output:
        w_ids = list(u_ids)
        aux_ids = list(lam_ids)
    else:
        w_ids = list(lam_ids[: net.n_phi])
        aux_ids = list(lam_ids[net.n_phi:])
    w = [Polynomial.var(i, uni) for i in w_ids]
    g, h = [], []
    k = 0
    for i, a in enumerate(net.activations):
        pre = Polynomial.const(float(net.bv[i]), uni)
        for j in range(nx):
            if net.D12[i, j]:
                pre = pre + x[j] * float(net.D12[i, j])
        for j in range(net.n_state):
            if net.C1[i, j]:
                pre = pre + xs[j] * float(net.C1[i, j])
        for j in range(net.n_phi):
            if net.D11[i, j]:
                pre = pre + w[j] * float(net.D11[i, j])
        aux = aux_ids[k:k + a.n_aux]
        k += a.n_aux
        gi, hi = encode_neuron(a, pre, w_ids[i], aux, uni)
        g += gi
        h += hi
    if not net.direct_output:
        read = [Polynomial.var(i, uni) for i in u_ids]
        for r in range(net.n_out):
            p = Polynomial.const(float(net.bu[r]), uni)
            for j in range(net.n_state):
                if net.C2[r, j]:
                    p = p + xs[j] * float(net.C2[r, j])
            for j in range(net.n_phi):
                if net.D21[r, j]:
                    p = p + w[j] * float(net.D21[r, j])
            for j in range(nx):
                if net.D22[r, j]:
                    p = p + x[j] * float(net.D22[r, j])
            h.append(read[r] - p)
    return g, h


def build_loop_graph(model: ClosedLoopModel) -> SemialgebraicGraph:
    """Graph over xi = (zeta, zeta+) with the dynamics equalities appended."""
    uni = model.universe
    kp = model.k_phi
    g = list(kp.g) + [model.to_successor(p) for p in kp.g]
    h = list(kp.h) + [model.to_successor(p) for p in kp.h]
    for i, fi in enumerate(model.f):
        h.append(Polynomial.var(model.succ(model.x_vars[i]), uni) - fi)
    return SemialgebraicGraph(g, h, 2 * kp.n_lifting, universe=uni, continuity=kp.continuity)


# ---------------------------------------------------------------------------
# model construction
# ---------------------------------------------------------------------------

def _find_equilibrium(F: Callable[[np.ndarray], np.ndarray], n: int,
                      damping=0.5, tol=EQUILIBRIUM_TOL, max_iter=EQUILIBRIUM_MAX_ITER) -> np.ndarray:
    x = np.zeros(n)
    for it in range(max_iter):
        fx = F(x)
        r = fx - x
        if np.max(np.abs(r), initial=0.0) <= tol:
            return x
        x = x + damping * r
    raise ModelError(f"equilibrium search did not converge (residual {np.max(np.abs(r)):.3e})")


def _shift_polys(polys, offset_vars: dict, uni):
    if not offset_vars:
        return list(polys)
    binds = {v: Polynomial.var(v, uni) + float(c) for v, c in offset_vars.items() if c}
    return [p.substitute(binds) for p in polys]


def _assemble(uni, n, n_lam, m, f_orig, g, h, raw_trace, raw_jac, continuity, name, meta,
              shift=True) -> ClosedLoopModel:
    """Shift to an origin equilibrium and package a model."""
    x_ids = uni.block("x")

    def F(x):
        Z = raw_trace(x.reshape(n, 1))
        return np.array([float(fi(Z[:, 0])) for fi in f_orig])

    offset = np.zeros(n)
    if raw_trace is not None and n:
        fx0 = F(np.zeros(n))
        if np.max(np.abs(fx0)) > ORIGIN_TOL:
            if not shift:
                raise ModelError("origin is not an equilibrium")
            offset = _find_equilibrium(F, n)
            log.info("shifted coordinates to equilibrium %s", offset)
    binds = {x_ids[i]: offset[i] for i in range(n)}
    f = [p - float(offset[i]) for i, p in enumerate(_shift_polys(f_orig, binds, uni))]
    g = _shift_polys(g, binds, uni)
    h = _shift_polys(h, binds, uni)

    trace = None
    jac = None
    if raw_trace is not None:
        def trace(x, _off=offset):
            return raw_trace(np.asarray(x, dtype=float) + _off[:, None])
    if raw_jac is not None:
        def jac(_off=offset):
            return raw_jac(_off)
    graph = SemialgebraicGraph(g, h, n_lam, universe=uni, continuity=continuity)
    model = ClosedLoopModel(uni, n, n_lam, m, f, graph, trace, jac, offset, name, dict(meta))
    if trace is not None:
        z0 = model.zeta0()
        graph.zero_index = compute_zero_index(graph, z0)
        resid = max((abs(fi(z0)) for fi in f), default=0.0)
        if resid > ORIGIN_TOL:
            raise ModelError(f"origin is not an equilibrium after shifting (residual {resid:.3e})")
    return model


def feedforward_closed_loop(f: Sequence[Polynomial], net: FeedforwardNet | None, n: int,
                            universe: Universe | None = None, name="feedforward",
                            meta: dict | None = None, shift=True) -> ClosedLoopModel:
    """Closed loop of a polynomial plant with a feedforward controller.

    ``f`` must be expressed over a universe from :func:`make_universe` (or the
    one passed in) whose ``u`` block has the network's output dimension.
    Pass ``net=None`` for an autonomous system ``x+ = f(x)``.
    """
    n_lam = net.n_lifting if net is not None else 0
    m = net.n_out if net is not None else 0
    uni = universe or (f[0].universe if f and f[0].universe is not None else make_universe(n, n_lam, m))
    if net is not None and net.n_in != n:
        raise ModelError(f"network expects {net.n_in} inputs but the state has dimension {n}")
    if net is not None:
        g, h = _encode_feedforward(net, uni.vars("x"), uni.block("lam"), uni.block("u"), uni)
    else:
        g, h = [], []

    def raw_trace(x):
        if net is None:
            return x
        lam, u = net.forward(x)
        return np.vstack([x, lam, u])

    def raw_jac(off):
        if net is None:
            return np.eye(n)
        Jl, Ju = net.jacobian(off)
        return np.vstack([np.eye(n), Jl, Ju])

    return _assemble(uni, n, n_lam, m, list(f), g, h, raw_trace, raw_jac,
                     _auto_continuity(n_lam, m), name, meta or {}, shift)


def ren_to_closed_loop(f: Sequence[Polynomial], net: ImplicitNet, n_plant: int,
                       universe: Universe | None = None, name="implicit",
                       meta: dict | None = None, shift=True) -> ClosedLoopModel:
    """Closed loop of a plant with an implicit network, state augmented by xs.

    ``f`` gives the plant update over the first ``n_plant`` state variables
    and the ``u`` block (which equals the neuron vector in direct mode).
    """
    if not check_wellposedness(net):
        raise ModelError("implicit network is not well posed: smallest eigenvalue of "
                         f"2I - D11 - D11^T is {wellposedness_margin(net):.6g}")
    if net.n_in != n_plant:
        raise ModelError(f"network expects {net.n_in} inputs but the plant state has dimension {n_plant}")
    n = n_plant + net.n_state
    n_lam, m = net.n_lifting, net.n_out
    uni = universe or make_universe(n, n_lam, m)
    xt = uni.vars("x")
    g, h = _encode_implicit(net, xt, uni.block("lam"), uni.block("u"), uni)
    f_aug = list(f)
    if len(f_aug) != n_plant:
        raise ModelError(f"plant has {len(f_aug)} update equations, expected {n_plant}")
    if net.n_state:
        if net.direct_output:
            w = [Polynomial.var(i, uni) for i in uni.block("u")]
        else:
            w = [Polynomial.var(i, uni) for i in uni.block("lam")[: net.n_phi]]
        xs_next = _affine_rows(np.hstack([net.A, net.B1, net.B2]), net.bx,
                               xt[n_plant:] + w + xt[:n_plant], uni)
        f_aug += xs_next

    def raw_trace(x):
        lam, u, _ = net.forward(x[:n_plant], x[n_plant:])
        return np.vstack([x, lam, u])

    def raw_jac(off):
        Jl, Ju = net.jacobian(off[:n_plant], off[n_plant:])
        return np.vstack([np.eye(n), Jl, Ju])

    meta = dict(meta or {})
    meta.setdefault("wellposedness_margin", wellposedness_margin(net))
    return _assemble(uni, n, n_lam, m, f_aug, g, h, raw_trace, raw_jac,
                     _auto_continuity(n_lam, m), name, meta, shift)


def raw_closed_loop(f, g, h, n, n_lam, m, continuity: dict, universe: Universe,
                    name="raw", meta=None) -> ClosedLoopModel:
    """Model from user supplied graph constraints (no forward evaluation)."""
    if not isinstance(continuity, dict) or "lam" not in continuity or "u" not in continuity:
        raise ModelError("raw graphs need an explicit continuity declaration "
                         "with 'lam' and 'u' index lists")
    graph = SemialgebraicGraph(list(g), list(h), n_lam, universe=universe,
                               continuity=dict(continuity, source="declared"))
    return ClosedLoopModel(universe, n, n_lam, m, list(f), graph, None, None,
                           np.zeros(n), name, dict(meta or {}))


# ---------------------------------------------------------------------------
# JSON model files
# ---------------------------------------------------------------------------

def _polys_from_json(items, uni) -> list[Polynomial]:
    out = []
    for it in items:
        if isinstance(it, (int, float)):
            out.append(Polynomial.const(float(it), uni))
        else:
            out.append(Polynomial.from_json(it, uni))
    return out


def model_from_dict(d: dict) -> ClosedLoopModel:
    """Build a :class:`ClosedLoopModel` from the documented JSON layout."""
    try:
        plant = d["plant"]
        n = int(plant["state_dim"])
        m_in = int(plant.get("input_dim", 0))
        f_json = plant["f"]
    except (KeyError, TypeError) as e:
        raise ModelError(f"model file is missing plant field {e}") from None
    net_d = d.get("network")
    name = d.get("name", "model")
    meta = {"description": d.get("description", "")}
    cont = d.get("continuity_assumption", "auto")
    ntype = (net_d or {}).get("type", "none") if net_d else "none"

    if ntype == "none":
        uni = make_universe(n, 0, 0)
        f = _polys_from_json(f_json, uni)
        return feedforward_closed_loop(f, None, n, uni, name, meta)

    if ntype == "feedforward":
        layers = []
        for L in net_d["layers"]:
            acts = L.get("activations")
            layers.append(Layer(np.asarray(L["weights"], dtype=float),
                                np.asarray(L.get("biases", np.zeros(len(L["weights"]))), dtype=float),
                                acts))
        net = FeedforwardNet(layers)
        if net.n_out != m_in:
            raise ModelError(f"network output dimension {net.n_out} != plant input_dim {m_in}")
        uni = make_universe(n, net.n_lifting, net.n_out)
        f = _polys_from_json(f_json, uni)
        model = feedforward_closed_loop(f, net, n, uni, name, meta)
    elif ntype == "implicit":
        keys = ("A", "B1", "B2", "C1", "bx", "C2", "D21", "D22", "bu", "bv")
        kw = {k: net_d.get(k) for k in keys}
        net = ImplicitNet(net_d["D11"], net_d["D12"], net_d["activations"], **kw)
        if net.n_out != m_in:
            raise ModelError(f"network output dimension {net.n_out} != plant input_dim {m_in}")
        n_aug = n + net.n_state
        uni = make_universe(n_aug, net.n_lifting, net.n_out)
        f = _polys_from_json(f_json, uni)
        model = ren_to_closed_loop(f, net, n, uni, name, meta)
    elif ntype == "raw":
        n_lam = int(net_d.get("lifting_dim", 0))
        uni = make_universe(n, n_lam, m_in)
        if cont == "auto":
            raise ModelError("raw graphs need an explicit continuity_assumption")
        return raw_closed_loop(_polys_from_json(f_json, uni), _polys_from_json(net_d.get("g", []), uni),
                               _polys_from_json(net_d.get("h", []), uni), n, n_lam, m_in, cont,
                               uni, name, meta)
    else:
        raise ModelError(f"unknown network type {ntype!r}")

    if cont != "auto":
        if not isinstance(cont, dict):
            raise ModelError("continuity_assumption must be 'auto' or an index mapping")
        model.k_phi.continuity = dict(cont, source="declared")
    return model


def load_model(path) -> ClosedLoopModel:
    with open(path) as fh:
        text = fh.read()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelError(f"{path}: malformed JSON at line {e.lineno}, column {e.colno}: {e.msg}") from None
    return model_from_dict(d)
