"""Lowering of SOS programs to standard-form SDP data by coefficient matching.

Each SOS constraint gets its own Gram block over a monomial basis chosen
from the Newton polytope of the constraint's support; equating the
coefficients of every monomial of ``expr - nu' G nu`` gives the equality
rows.  A cheap facial reduction then removes Gram rows and scalars that
the equalities force to zero (common when constraints vanish at the
origin), which keeps the interior-point iterations well conditioned.
"""

from __future__ import annotations

import itertools
import logging
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .errors import CompileError, ExtractionError
from .poly import ONE, Monomial, Polynomial, mono, mono_degree, mono_key, mono_mul, mono_str
from .sdpdata import SQRT2, SdpData, SdpSolution, smat, svec_index, svec_len
from .sosir import DecisionBlock, Expr, SosProgram

log = logging.getLogger(__name__)

ZERO_RHS = 1e-12


@dataclass
class CompileConfig:
    newton: bool = True           # prune Gram bases with the Newton polytope
    facial_reduction: bool = True
    lp_limit: int = 20000         # skip exact polytope tests above this many candidates


# ---------------------------------------------------------------------------
# Gram basis selection
# ---------------------------------------------------------------------------

_NEWTON_CACHE: "OrderedDict[tuple, tuple]" = OrderedDict()
_NEWTON_CACHE_SIZE = 256


def newton_basis(support, groups=None, exact: bool = True, lp_limit: int = 20000) -> tuple:
    """Monomials ``m`` with ``2m`` in the convex hull of ``support``.

    Candidates are enumerated under per-variable and per-group degree
    bounds (``groups`` maps a variable to a group label) and then tested
    exactly by a small feasibility LP.
    """
    support = [m for m in support]
    if not support:
        return ()
    key = (frozenset(support), exact, None if groups is None else tuple(sorted(groups.items())))
    if key in _NEWTON_CACHE:
        _NEWTON_CACHE.move_to_end(key)
        return _NEWTON_CACHE[key]
    vars_ = sorted({v for m in support for v, _ in m})
    pos = {v: i for i, v in enumerate(vars_)}
    S = np.zeros((len(support), len(vars_)), dtype=int)
    for r, m in enumerate(support):
        for v, e in m:
            S[r, pos[v]] = e
    deg = S.sum(axis=1)
    dmin = int(np.ceil(deg.min() / 2))
    dmax = int(deg.max() // 2)
    vmax = S.max(axis=0) // 2 if len(vars_) else np.zeros(0, dtype=int)
    glabels = [groups.get(v, None) if groups else None for v in vars_]
    gmax = {}
    if groups:
        for lab in set(glabels):
            cols = [i for i, l in enumerate(glabels) if l == lab]
            gmax[lab] = int(S[:, cols].sum(axis=1).max() // 2)
    sset = {tuple(row) for row in S}
    cands = []

    def rec(i, cur, total, gtot):
        if i == len(vars_):
            if total >= dmin:
                cands.append(tuple(cur))
            return
        lab = glabels[i]
        room = dmax - total
        if groups:
            room = min(room, gmax[lab] - gtot.get(lab, 0))
        for e in range(0, min(int(vmax[i]), room) + 1):
            cur.append(e)
            if groups and e:
                gtot[lab] = gtot.get(lab, 0) + e
            rec(i + 1, cur, total + e, gtot)
            if groups and e:
                gtot[lab] -= e
            cur.pop()

    rec(0, [], 0, {})
    keep = []
    test_lp = exact and len(cands) <= lp_limit
    Aeq = np.vstack([S.T.astype(float), np.ones((1, len(support)))]) if test_lp else None
    for c in cands:
        two = tuple(2 * e for e in c)
        if two in sset:
            keep.append(c)
            continue
        if not test_lp:
            keep.append(c)
            continue
        beq = np.concatenate([np.array(two, dtype=float), [1.0]])
        res = linprog(np.zeros(len(support)), A_eq=Aeq, b_eq=beq, bounds=(0, None), method="highs")
        if res.status == 0:
            keep.append(c)
    basis = tuple(sorted((mono({vars_[i]: e for i, e in enumerate(c) if e}) for c in keep), key=mono_key))
    _NEWTON_CACHE[key] = basis
    if len(_NEWTON_CACHE) > _NEWTON_CACHE_SIZE:
        _NEWTON_CACHE.popitem(last=False)
    return basis


def full_half_basis(support) -> tuple:
    """All monomials up to half the support degree over its variables."""
    from .poly import monomial_basis
    support = list(support)
    if not support:
        return ()
    vars_ = sorted({v for m in support for v, _ in m})
    dmax = max(mono_degree(m) for m in support) // 2
    return tuple(monomial_basis(vars_, dmax))


# ---------------------------------------------------------------------------
# compilation
# ---------------------------------------------------------------------------

@dataclass
class Compiled:
    """SDP data plus the bookkeeping needed to read solutions back."""

    data: SdpData
    program: SosProgram
    blocks: dict                      # id -> DecisionBlock (program + constraint Gram blocks)
    var_of: dict                      # entry key -> (column, scale); value = x[col] * scale + shift
    zeroed: set                       # entry keys forced to zero by facial reduction
    kept: dict                        # sos block id -> kept basis positions
    gram_of: dict                     # constraint name -> Gram block id (sos constraints)
    row_labels: list                  # (constraint name, monomial) per row
    objective_const: float = 0.0
    stats: dict = field(default_factory=dict)

    def value_of(self, key, x) -> float:
        blk = self.blocks[key[0]]
        if key in self.zeroed:
            return 0.0
        col, scale = self.var_of[key]
        return float(x[col]) * scale + blk.shift(key)


def _block_groups(universe):
    groups = {}
    for v in range(len(universe)):
        groups[v] = universe.block_of(v)
    return groups


def compile_program(prog: SosProgram, cfg: CompileConfig | None = None) -> Compiled:
    """Lower ``prog`` to :class:`SdpData` (see module docstring)."""
    cfg = cfg or CompileConfig()
    uni = prog.universe
    groups = _block_groups(uni) if uni is not None else None
    blocks: dict[str, DecisionBlock] = dict(prog.blocks)
    gram_of = {}
    rows: "OrderedDict[tuple, dict]" = OrderedDict()
    rhs: dict[tuple, float] = {}

    for ci, con in enumerate(prog.constraints):
        expr = con.expr
        for k in expr.decision_keys():
            if k[0] not in blocks:
                raise CompileError(f"constraint {con.name!r} references unknown block {k[0]!r}")
        support = expr.support()
        if con.sense == "sos":
            if con.gram_basis is not None:
                basis = con.gram_basis
            elif cfg.newton:
                basis = newton_basis(support, groups, lp_limit=cfg.lp_limit)
            else:
                basis = full_half_basis(support)
            if basis:
                gid = f"#{con.name}"
                gb = DecisionBlock(gid, "sos", tuple(basis))
                blocks[gid] = gb
                gram_of[con.name] = gid
                covered = {mono_mul(a, b) for a in basis for b in basis}
                missing = [m for m in support if m not in covered]
                if con.gram_basis is not None:
                    # a user basis must span every monomial no decision can cancel
                    decided = set().union(*(p.terms for k, p in expr.terms.items() if k is not None))
                    for m in missing:
                        if m not in decided:
                            names = uni.names if uni is not None else None
                            raise CompileError(f"constraint {con.name!r}: monomial "
                                               f"{mono_str(m, names)} is not covered by its Gram basis")
                # monomials outside the Gram span must cancel through the decisions
                for m in missing:
                    rows.setdefault((ci, m), {})
                for j in range(len(basis)):
                    for i in range(j, len(basis)):
                        m = mono_mul(basis[i], basis[j])
                        row = rows.setdefault((ci, m), {})
                        w = 1.0 if i == j else 2.0
                        row[(gid, i, j)] = row.get((gid, i, j), 0.0) - w
        for k, p in expr.terms.items():
            for m, c in p.terms.items():
                r = (ci, m)
                if k is None:
                    rhs[r] = rhs.get(r, 0.0) - c
                    rows.setdefault(r, {})
                else:
                    row = rows.setdefault(r, {})
                    row[k] = row.get(k, 0.0) + c

    zeroed: set = set()
    if cfg.facial_reduction:
        zeroed = _facial_reduction(rows, rhs, blocks)

    # drop zeroed keys from rows
    kept: dict[str, list[int]] = {}
    for bid, blk in blocks.items():
        if blk.kind == "sos":
            dead = {i for (b, i, j) in zeroed if b == bid and i == j}
            kept[bid] = [i for i in range(len(blk.basis)) if i not in dead]

    # assign columns: free, lp, psd
    var_of = {}
    ncol = 0
    for bid, blk in blocks.items():
        if blk.kind == "free" or (blk.kind == "scalar" and blk.sign == "free"):
            for key in blk.keys():
                var_of[key] = (ncol, 1.0)
                ncol += 1
    n_free = ncol
    for bid, blk in blocks.items():
        if blk.kind == "scalar" and blk.sign != "free":
            key = blk.keys()[0]
            if key in zeroed:
                continue
            var_of[key] = (ncol, 1.0)
            ncol += 1
    n_lp = ncol - n_free
    psd = []
    for bid, blk in blocks.items():
        if blk.kind != "sos":
            continue
        kk = kept[bid]
        if not kk:
            continue
        k = len(kk)
        loc = {i: r for r, i in enumerate(kk)}
        for a in kk:
            for b in kk:
                if a < b:
                    continue
                ra, rb = loc[a], loc[b]
                scale = 1.0 if a == b else 1.0 / SQRT2
                var_of[(bid, a, b)] = (ncol + svec_index(k, ra, rb), scale)
        psd.append(k)
        ncol += svec_len(k)
    for bid, blk in blocks.items():
        if blk.kind == "sos":
            kk = set(kept[bid])
            for key in blk.keys():
                if key not in var_of and (key[1] not in kk or key[2] not in kk):
                    zeroed.add(key)

    r_idx, c_idx, vals, b_vec, labels = [], [], [], [], []
    nrow = 0
    for r, row in rows.items():
        bval = rhs.get(r, 0.0)
        ents = []
        for key, c in row.items():
            if c == 0.0 or key in zeroed:
                continue
            col, scale = var_of[key]
            ents.append((col, c * scale))
            bval -= c * blocks[key[0]].shift(key)
        if not ents and abs(bval) <= ZERO_RHS:
            continue
        merged: dict[int, float] = {}
        for col, v in ents:
            merged[col] = merged.get(col, 0.0) + v
        for col, v in merged.items():
            if v != 0.0:
                r_idx.append(nrow)
                c_idx.append(col)
                vals.append(v)
        b_vec.append(bval)
        labels.append((prog.constraints[r[0]].name, r[1]))
        nrow += 1
    A = sp.csr_matrix((vals, (r_idx, c_idx)), shape=(nrow, ncol))
    c = np.zeros(ncol)
    obj_const = 0.0
    for key, w in prog.objective.items():
        if key in zeroed:
            obj_const += w * blocks[key[0]].shift(key)
            continue
        col, scale = var_of[key]
        c[col] -= w * scale
        obj_const += w * blocks[key[0]].shift(key)
    meta = {"program": prog.name, "gram_sizes": {g: len(kept[g]) for g in gram_of.values()}}
    data = SdpData(n_free, n_lp, psd, A, np.array(b_vec), c, meta)
    stats = {"rows": nrow, "cols": ncol, "psd": psd, "n_free": n_free, "n_lp": n_lp,
             "zeroed": len(zeroed), "max_block": max(psd, default=0)}
    log.debug("compiled %s: %s", prog.name, stats)
    return Compiled(data, prog, blocks, var_of, zeroed, kept, gram_of, labels, obj_const, stats)


def _facial_reduction(rows, rhs, blocks) -> set:
    """Keys forced to zero by rows of the form sum(c_k * t_k) = 0, t_k >= 0, same-sign c_k."""
    def nonneg(key):
        blk = blocks[key[0]]
        if blk.kind == "sos":
            return key[1] == key[2] and blk.eps == 0.0
        if blk.kind == "scalar":
            return blk.sign == "nonneg" or (blk.sign == "positive" and blk.eps == 0.0)
        return False

    zeroed: set = set()
    dead_diag: dict[str, set] = {}
    active = [r for r in rows if abs(rhs.get(r, 0.0)) <= ZERO_RHS]
    changed = True
    while changed:
        changed = False
        for r in active:
            sign = 0
            keys = []
            ok = True
            for key, c in rows[r].items():
                if c == 0.0 or key in zeroed:
                    continue
                if blocks[key[0]].kind == "sos":
                    dd = dead_diag.get(key[0])
                    if dd and (key[1] in dd or key[2] in dd):
                        continue
                if not nonneg(key):
                    ok = False
                    break
                s = 1 if c > 0 else -1
                if sign == 0:
                    sign = s
                elif s != sign:
                    ok = False
                    break
                keys.append(key)
            if not ok or not keys:
                continue
            for key in keys:
                zeroed.add(key)
                if blocks[key[0]].kind == "sos":
                    dead_diag.setdefault(key[0], set()).add(key[1])
            changed = True
    # expand dead Gram diagonals to their rows and columns
    for bid, dd in dead_diag.items():
        for key in blocks[bid].keys():
            if key[1] in dd or key[2] in dd:
                zeroed.add(key)
    return zeroed


# ---------------------------------------------------------------------------
# extraction
# ---------------------------------------------------------------------------

@dataclass
class Extracted:
    values: dict          # entry key -> value
    blocks: dict          # block id -> Gram matrix / coefficient vector / float
    polys: dict           # block id -> Polynomial (sos and free blocks)
    residuals: dict       # constraint name -> max coefficient residual
    min_eigs: dict        # sos block id -> minimum Gram eigenvalue

    def expr(self, e: Expr) -> Polynomial:
        return e.value(self.values)

    def scalar(self, bid: str) -> float:
        return float(self.blocks[bid])

    @property
    def max_residual(self) -> float:
        return max(self.residuals.values(), default=0.0)


def extract(comp: Compiled, sol: SdpSolution) -> Extracted:
    """Read block values back from a feasible solution."""
    if not sol.feasible or sol.x is None:
        raise ExtractionError(f"cannot extract from a solve with status {sol.status!r}")
    x = sol.x
    values = {}
    for bid, blk in comp.blocks.items():
        for key in blk.keys():
            values[key] = comp.value_of(key, x)
    prog = comp.program
    uni = prog.universe
    out_blocks, polys, eigs = {}, {}, {}
    for bid, blk in comp.blocks.items():
        if blk.kind == "sos":
            k = len(blk.basis)
            G = np.zeros((k, k))
            for key in blk.keys():
                _, i, j = key
                G[i, j] = G[j, i] = values[key]
            out_blocks[bid] = G
            eigs[bid] = float(np.linalg.eigvalsh(G)[0]) if k else 0.0
            if not bid.startswith("#"):
                polys[bid] = prog.block_expr(blk).value(values)
        elif blk.kind == "free":
            vec = np.array([values[key] for key in blk.keys()])
            out_blocks[bid] = vec
            polys[bid] = prog.block_expr(blk).value(values)
        else:
            out_blocks[bid] = values[blk.keys()[0]]
    residuals = {}
    for con in prog.constraints:
        p = con.expr.value(values)
        gid = comp.gram_of.get(con.name)
        if gid is not None:
            gb = comp.blocks[gid]
            G = out_blocks[gid]
            acc = dict(p.terms)
            b = gb.basis
            for i in range(len(b)):
                for j in range(len(b)):
                    if G[i, j]:
                        m = mono_mul(b[i], b[j])
                        acc[m] = acc.get(m, 0.0) - G[i, j]
            p = Polynomial(acc, uni)
        residuals[con.name] = max((abs(c) for c in p.terms.values()), default=0.0)
    return Extracted(values, out_blocks, polys, residuals, eigs)


def export_sdp(comp: Compiled) -> dict:
    """SdpData JSON with row labels for debugging external solves."""
    d = comp.data.to_json()
    names = comp.program.universe.names if comp.program.universe is not None else None
    d["row_labels"] = [[c, mono_str(m, names)] for c, m in comp.row_labels]
    d["stats"] = comp.stats
    return d
