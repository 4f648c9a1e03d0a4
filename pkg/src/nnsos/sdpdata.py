"""Standard-form conic program data and solutions.

The decision vector stacks, in order, ``n_free`` unrestricted entries,
``n_lp`` nonnegative entries and one packed lower-triangular block per PSD
cone (off-diagonals scaled by sqrt(2) so that the Euclidean inner product
of packed vectors equals the trace inner product).  The problem is::

    minimize c^T x  subject to  A x = b,  x in cone
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

SQRT2 = np.sqrt(2.0)


def svec_len(k: int) -> int:
    return k * (k + 1) // 2


def tril_indices(k: int):
    """Row/col indices of packed entries (column-major lower triangle)."""
    rows, cols = [], []
    for j in range(k):
        for i in range(j, k):
            rows.append(i)
            cols.append(j)
    return np.array(rows, dtype=int), np.array(cols, dtype=int)


_TRIL_CACHE: dict = {}


def _tril(k):
    if k not in _TRIL_CACHE:
        r, c = tril_indices(k)
        scale = np.where(r == c, 1.0, SQRT2)
        pos = np.zeros((k, k), dtype=int)
        pos[r, c] = np.arange(len(r))
        pos[c, r] = np.arange(len(r))
        _TRIL_CACHE[k] = (r, c, scale, pos)
    return _TRIL_CACHE[k]


def svec(M: np.ndarray) -> np.ndarray:
    """Pack a symmetric matrix (or a stack of them along axis 0)."""
    M = np.asarray(M, dtype=float)
    k = M.shape[-1]
    r, c, scale, _ = _tril(k)
    return M[..., r, c] * scale


def smat(v: np.ndarray, k: int | None = None) -> np.ndarray:
    """Inverse of :func:`svec` (works on stacks along leading axes)."""
    v = np.asarray(v, dtype=float)
    if k is None:
        k = int(round((np.sqrt(8 * v.shape[-1] + 1) - 1) / 2))
    r, c, scale, _ = _tril(k)
    out = np.zeros(v.shape[:-1] + (k, k))
    vals = v / scale
    out[..., r, c] = vals
    out[..., c, r] = vals
    return out


def svec_index(k: int, i: int, j: int) -> int:
    """Position of entry (i, j) of a k x k block in its packed vector."""
    return int(_tril(k)[3][i, j])


def svec_scale(i: int, j: int) -> float:
    return 1.0 if i == j else SQRT2


@dataclass
class SdpData:
    """Conic program in standard form (see module docstring)."""

    n_free: int
    n_lp: int
    psd: list[int]
    A: sp.csr_matrix
    b: np.ndarray
    c: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.A = sp.csr_matrix(self.A, dtype=float)
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        self.c = np.asarray(self.c, dtype=float).reshape(-1)
        self.psd = [int(k) for k in self.psd]
        if self.A.shape != (len(self.b), self.n_vars):
            raise ValueError(f"A has shape {self.A.shape}, expected ({len(self.b)}, {self.n_vars})")
        if len(self.c) != self.n_vars:
            raise ValueError("objective length does not match variable count")

    @property
    def n_vars(self) -> int:
        return self.n_free + self.n_lp + sum(svec_len(k) for k in self.psd)

    @property
    def n_rows(self) -> int:
        return len(self.b)

    def offsets(self) -> list[int]:
        """Start offset of each PSD block in the decision vector."""
        off = self.n_free + self.n_lp
        out = []
        for k in self.psd:
            out.append(off)
            off += svec_len(k)
        return out

    def block_values(self, x: np.ndarray) -> list[np.ndarray]:
        return [smat(x[o:o + svec_len(k)], k) for o, k in zip(self.offsets(), self.psd)]

    def to_json(self) -> dict:
        A = self.A.tocoo()
        return {
            "n_free": self.n_free,
            "n_lp": self.n_lp,
            "psd": list(self.psd),
            "n_rows": self.n_rows,
            "A": {"rows": A.row.tolist(), "cols": A.col.tolist(), "vals": A.data.tolist()},
            "b": self.b.tolist(),
            "c": self.c.tolist(),
            "packing": "lower-triangular column-major, off-diagonals scaled by sqrt(2)",
        }

    @classmethod
    def from_json(cls, d: dict) -> "SdpData":
        n_vars = d["n_free"] + d["n_lp"] + sum(svec_len(k) for k in d["psd"])
        A = sp.coo_matrix((d["A"]["vals"], (d["A"]["rows"], d["A"]["cols"])),
                          shape=(d["n_rows"], n_vars))
        return cls(d["n_free"], d["n_lp"], d["psd"], A.tocsr(), d["b"], d["c"])

    def dumps(self) -> str:
        return json.dumps(self.to_json())


@dataclass
class SdpSolution:
    """Result of a conic solve.

    ``status`` is one of ``feasible`` (optimal when an objective is given),
    ``infeasible_certificate`` (primal infeasible, Farkas ray in ``y``),
    ``unbounded`` (dual infeasible, improving ray in ``x``) or ``unknown``.
    """

    status: str
    x: np.ndarray | None = None
    y: np.ndarray | None = None
    s: np.ndarray | None = None
    primal_obj: float = float("nan")
    dual_obj: float = float("nan")
    residuals: dict = field(default_factory=dict)
    iterations: int = 0
    info: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return self.status == "feasible"

    def to_json(self) -> dict:
        def arr(v):
            return None if v is None else np.asarray(v, dtype=float).tolist()
        return {
            "status": self.status,
            "x": arr(self.x),
            "y": arr(self.y),
            "s": arr(self.s),
            "primal_obj": _num(self.primal_obj),
            "dual_obj": _num(self.dual_obj),
            "residuals": {k: _num(v) for k, v in self.residuals.items()},
            "iterations": self.iterations,
            "info": {k: v for k, v in self.info.items() if isinstance(v, (str, int, float, bool))},
        }

    @classmethod
    def from_json(cls, d: dict) -> "SdpSolution":
        def arr(v):
            return None if v is None else np.asarray(v, dtype=float)
        return cls(d["status"], arr(d.get("x")), arr(d.get("y")), arr(d.get("s")),
                   _den(d.get("primal_obj")), _den(d.get("dual_obj")),
                   {k: _den(v) for k, v in d.get("residuals", {}).items()},
                   int(d.get("iterations", 0)), dict(d.get("info", {})))


def _num(v):
    v = float(v)
    return v if np.isfinite(v) else None


def _den(v):
    return float("nan") if v is None else float(v)
