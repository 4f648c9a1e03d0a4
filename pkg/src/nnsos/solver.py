"""Dense primal-dual interior-point solver for standard-form SDPs.

The core works on the homogeneous self-dual embedding of

    minimize c^T x   s.t.  A x = b,  x in R^{n_lp}_+ x S^{k_1}_+ x ... ,

with Nesterov-Todd scaling and a Mehrotra predictor-corrector.  Free
variables are projected out before the core runs, redundant equality rows
are removed by pivoted QR, and the data is equilibrated.

Also provides the bisection :func:`line_search` used by the verification
procedures and the external-backend subprocess protocol.
"""

from __future__ import annotations

import json
import logging
import os
import shlex
import subprocess
import sys
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .errors import SolverError
from .sdpdata import SdpData, SdpSolution, smat, svec, svec_len

log = logging.getLogger(__name__)

BACKEND_ENV = "NNSOS_BACKEND"


@dataclass
class SolverConfig:
    """Interior-point settings; ``tol`` bounds relative residuals and gap."""

    tol: float = 1e-6
    max_iter: int = 200
    infeas_tol: float = 1e-8
    rank_tol: float = 1e-10
    ruiz_iters: int = 10
    step_frac: float = 0.98
    verbose: bool = False
    backend: str | None = None  # external solver command, or None for built-in

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")


# ---------------------------------------------------------------------------
# cone helpers on packed vectors (LP part followed by PSD blocks)
# ---------------------------------------------------------------------------

class _Cone:
    def __init__(self, n_lp: int, psd: list[int]):
        self.n_lp = n_lp
        self.psd = list(psd)
        self.slices = []
        off = n_lp
        for k in psd:
            self.slices.append(slice(off, off + svec_len(k)))
            off += svec_len(k)
        self.n = off
        self.degree = n_lp + sum(psd)

    def identity(self) -> np.ndarray:
        e = np.zeros(self.n)
        e[: self.n_lp] = 1.0
        for sl, k in zip(self.slices, self.psd):
            e[sl] = svec(np.eye(k))
        return e


class _Scaling:
    """Nesterov-Todd scaling point for the current iterate."""

    def __init__(self, cone: _Cone, x: np.ndarray, s: np.ndarray):
        self.cone = cone
        nl = cone.n_lp
        xl, sl_ = x[:nl], s[:nl]
        if np.any(xl <= 0) or np.any(sl_ <= 0):
            raise np.linalg.LinAlgError("LP iterate left the cone")
        self.w = np.sqrt(xl / sl_)
        self.lam_lp = np.sqrt(xl * sl_)
        self.R, self.Rinv, self.lam = [], [], []
        for sl, k in zip(cone.slices, cone.psd):
            X, S = smat(x[sl], k), smat(s[sl], k)
            Lx = np.linalg.cholesky(X)
            Ls = np.linalg.cholesky(S)
            U, lam, Vt = np.linalg.svd(Ls.T @ Lx)
            if lam[-1] <= 0:
                raise np.linalg.LinAlgError("degenerate scaling")
            isq = 1.0 / np.sqrt(lam)
            R = (Lx @ Vt.T) * isq[None, :]
            Rinv = (np.sqrt(lam)[:, None] * Vt) @ sla.solve_triangular(Lx, np.eye(k), lower=True)
            self.R.append(R)
            self.Rinv.append(Rinv)
            self.lam.append(lam)

    def lam_vec(self) -> np.ndarray:
        out = np.zeros(self.cone.n)
        out[: self.cone.n_lp] = self.lam_lp
        for sl, lam in zip(self.cone.slices, self.lam):
            out[sl] = svec(np.diag(lam))
        return out

    # scaled dual direction: T^T v  (R^T V R), primal map T v (R V R^T)
    def dual_to_scaled(self, v: np.ndarray) -> np.ndarray:
        out = np.empty_like(v)
        nl = self.cone.n_lp
        out[:nl] = v[:nl] * self.w
        for sl, k, R in zip(self.cone.slices, self.cone.psd, self.R):
            out[sl] = svec(R.T @ smat(v[sl], k) @ R)
        return out

    def scale_rows(self, A: np.ndarray) -> np.ndarray:
        """Rows of A mapped by T^T (the scaled constraint matrix)."""
        out = np.empty_like(A)
        nl = self.cone.n_lp
        out[:, :nl] = A[:, :nl] * self.w[None, :]
        for sl, k, R in zip(self.cone.slices, self.cone.psd, self.R):
            M = smat(A[:, sl], k)
            out[:, sl] = svec(R.T @ M @ R)
        return out

    def primal_from_scaled(self, v: np.ndarray) -> np.ndarray:
        out = np.empty_like(v)
        nl = self.cone.n_lp
        out[:nl] = v[:nl] * self.w
        for sl, k, R in zip(self.cone.slices, self.cone.psd, self.R):
            out[sl] = svec(R @ smat(v[sl], k) @ R.T)
        return out

    def dual_from_scaled(self, v: np.ndarray) -> np.ndarray:
        out = np.empty_like(v)
        nl = self.cone.n_lp
        out[:nl] = v[:nl] / self.w
        for sl, k, Ri in zip(self.cone.slices, self.cone.psd, self.Rinv):
            out[sl] = svec(Ri.T @ smat(v[sl], k) @ Ri)
        return out

    def jordan_solve(self, r: np.ndarray) -> np.ndarray:
        """Solve lam o z = r for z (lam diagonal in scaled space)."""
        out = np.empty_like(r)
        nl = self.cone.n_lp
        out[:nl] = r[:nl] / self.lam_lp
        for sl, k, lam in zip(self.cone.slices, self.cone.psd, self.lam):
            Rm = smat(r[sl], k)
            out[sl] = svec(2.0 * Rm / (lam[:, None] + lam[None, :]))
        return out

    def jordan(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        out = np.empty_like(a)
        nl = self.cone.n_lp
        out[:nl] = a[:nl] * b[:nl]
        for sl, k in zip(self.cone.slices, self.cone.psd):
            A, B = smat(a[sl], k), smat(b[sl], k)
            out[sl] = svec(0.5 * (A @ B + B @ A))
        return out

    def max_step(self, d: np.ndarray) -> float:
        """Largest alpha with lam + alpha d in the cone (scaled space)."""
        amax = np.inf
        nl = self.cone.n_lp
        if nl:
            ratio = d[:nl] / self.lam_lp
            mn = ratio.min()
            if mn < 0:
                amax = min(amax, -1.0 / mn)
        for sl, k, lam in zip(self.cone.slices, self.cone.psd, self.lam):
            isq = 1.0 / np.sqrt(lam)
            D = smat(d[sl], k) * isq[:, None] * isq[None, :]
            mn = np.linalg.eigvalsh(D)[0]
            if mn < 0:
                amax = min(amax, -1.0 / mn)
        return amax


# ---------------------------------------------------------------------------
# presolve: free-variable projection, redundant rows, equilibration
# ---------------------------------------------------------------------------

@dataclass
class _Presolved:
    A: np.ndarray          # reduced conic constraint matrix (unscaled)
    b: np.ndarray
    c: np.ndarray
    obj_const: float
    keep: np.ndarray       # kept rows of the projected system
    Q2: np.ndarray | None  # projection basis (None without free vars)
    y0: np.ndarray | None
    F: np.ndarray | None
    G: np.ndarray
    b_orig: np.ndarray
    status: str | None = None
    cert: np.ndarray | None = None
    info: dict = field(default_factory=dict)


def _presolve(data: SdpData, cfg: SolverConfig) -> _Presolved:
    A = data.A.toarray()
    b, c = data.b.copy(), data.c.copy()
    nf = data.n_free
    F, G = A[:, :nf], A[:, nf:]
    cF, cK = c[:nf], c[nf:]
    Q2 = y0 = None
    obj_const = 0.0
    Ar, br, cr = G, b, cK.copy()
    info = {}
    if nf:
        Q, R, _ = sla.qr(F, mode="full", pivoting=True)
        diag = np.abs(np.diag(R)) if R.size else np.zeros(0)
        rank = int(np.sum(diag > cfg.rank_tol * max(diag.max(initial=0.0), 1.0)))
        Q2 = Q[:, rank:]
        info["free_rank"] = rank
        if np.any(cF):
            y0, *_ = np.linalg.lstsq(F.T, cF, rcond=None)
            if np.linalg.norm(F.T @ y0 - cF) > 1e-9 * (1 + np.linalg.norm(cF)):
                return _Presolved(Ar, br, cr, 0.0, np.arange(0), Q2, y0, F, G, b,
                                  status="unbounded", info={"reason": "free objective"})
            cr = cK - G.T @ y0
            obj_const = float(b @ y0)
        Ar, br = Q2.T @ G, Q2.T @ b
    # redundant rows
    m = Ar.shape[0]
    keep = np.arange(m)
    if m:
        _, R, piv = sla.qr(Ar.T, mode="economic", pivoting=True)
        diag = np.abs(np.diag(R)) if R.size else np.zeros(0)
        scale = max(diag.max(initial=0.0), 1.0)
        rank = int(np.sum(diag > cfg.rank_tol * scale))
        keep = np.sort(piv[:rank])
        drop = np.sort(piv[rank:])
        info["dropped_rows"] = int(len(drop))
        if len(drop):
            T, *_ = np.linalg.lstsq(Ar[keep].T, Ar[drop].T, rcond=None)
            pred = T.T @ br[keep]
            bad = np.abs(br[drop] - pred)
            tolb = 1e-8 * (1.0 + np.linalg.norm(b))
            if np.any(bad > tolb):
                j = int(np.argmax(bad))
                yr = np.zeros(m)
                yr[drop[j]] = 1.0
                yr[keep] = -T[:, j]
                if br @ yr < 0:
                    yr = -yr
                return _Presolved(Ar, br, cr, obj_const, keep, Q2, y0, F, G, b,
                                  status="infeasible_certificate", cert=yr,
                                  info={"reason": "inconsistent equality rows", **info})
    return _Presolved(Ar[keep], br[keep], cr, obj_const, keep, Q2, y0, F, G, b, info=info)


def _equilibrate(A, b, c, cone: _Cone, iters: int):
    m, n = A.shape
    D = np.ones(m)
    E = np.ones(n)
    As = A.copy()
    groups = [slice(i, i + 1) for i in range(cone.n_lp)] + list(cone.slices)
    for _ in range(iters):
        rn = np.abs(As).max(axis=1) if n else np.ones(m)
        rn = np.where(rn < 1e-8, 1.0, rn)
        dr = 1.0 / np.sqrt(np.clip(rn, 1e-6, 1e6))
        cn = np.abs(As).max(axis=0) if m else np.ones(n)
        de = np.ones(n)
        for g in groups:
            v = cn[g].max() if cn[g].size else 1.0
            if v < 1e-8:
                v = 1.0
            de[g] = 1.0 / np.sqrt(np.clip(v, 1e-6, 1e6))
        D *= dr
        E *= de
        As = As * dr[:, None] * de[None, :]
    bs = D * b
    cs = E * c
    sb = 1.0 / max(np.abs(bs).max(initial=0.0), 1e-3) if bs.size else 1.0
    sc = 1.0 / max(np.abs(cs).max(initial=0.0), 1e-3) if cs.size else 1.0
    sb = float(np.clip(sb, 1e-4, 1e4))
    sc = float(np.clip(sc, 1e-4, 1e4))
    return As, bs * sb, cs * sc, D, E, sb, sc


# ---------------------------------------------------------------------------
# homogeneous self-dual interior point core
# ---------------------------------------------------------------------------

def _hsd(A, b, c, cone: _Cone, cfg: SolverConfig, check: Callable):
    m, n = A.shape
    x = cone.identity()
    s = cone.identity()
    y = np.zeros(m)
    tau = kappa = 1.0
    nu = cone.degree + 1
    status, it = "unknown", 0
    info: dict = {}
    best = None  # most accurate iterate within tolerance, kept in case accuracy degrades
    for it in range(cfg.max_iter + 1):
        rp = A @ x - b * tau
        rd = A.T @ y + s - c * tau
        rg = c @ x - b @ y + kappa
        mu = (x @ s + tau * kappa) / nu
        status, meas = check(x, y, s, tau, kappa)
        if meas.get("acceptable"):
            score = max(meas["pres"], meas["dres"], meas["gap"])
            if best is None or score < best[0]:
                best = (score, x.copy(), y.copy(), s.copy(), tau, kappa, it)
            elif score > 100 * best[0]:
                info["stalled"] = True
                break
        if cfg.verbose:
            log.info("it %3d mu %.2e tau %.2e kap %.2e %s", it, mu, tau, kappa,
                     " ".join(f"{k} {float(v):.2e}" for k, v in meas.items()))
        if status != "continue" or it == cfg.max_iter:
            break
        try:
            W = _Scaling(cone, x, s)
        except np.linalg.LinAlgError as e:
            status, info["breakdown"] = "unknown", f"scaling failed: {e}"
            break
        At = W.scale_rows(A)
        ct = W.dual_to_scaled(c)
        lam = W.lam_vec()
        M = At @ At.T
        try:
            cho = sla.cho_factor(M, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            reg = 1e-12 * max(1.0, np.abs(np.diag(M)).max(initial=1.0))
            try:
                cho = sla.cho_factor(M + reg * np.eye(m), lower=True, check_finite=False)
            except np.linalg.LinAlgError:
                status, info["breakdown"] = "unknown", "normal matrix not positive definite"
                break
        Act = At @ ct
        q = sla.cho_solve(cho, Act + b, check_finite=False) if m else np.zeros(0)
        denom = (Act - b) @ q - ct @ ct - kappa / tau

        def solve_kkt(r1, r2t, r3, z, r5):
            zr = z - r2t
            p = sla.cho_solve(cho, r1 - At @ zr, check_finite=False) if m else np.zeros(0)
            dtau = (r3 - ct @ zr - r5 / tau - (Act - b) @ p) / denom
            dy = p + q * dtau
            dst = r2t - At.T @ dy + ct * dtau
            dxt = z - dst
            dkap = (r5 - kappa * dtau) / tau
            return dxt, dy, dst, dtau, dkap

        def newton(r1, r2, r3, z, r5):
            rhs = (r1, W.dual_to_scaled(r2), r3, z, r5)
            d = solve_kkt(*rhs)
            # iterative refinement against the unreduced linearised system
            for _ in range(2):
                dxt, dy, dst, dtau, dkap = d
                res = (rhs[0] - (At @ dxt - b * dtau),
                       rhs[1] - (At.T @ dy + dst - ct * dtau),
                       rhs[2] - (ct @ dxt - b @ dy + dkap),
                       rhs[3] - (dxt + dst),
                       rhs[4] - (tau * dkap + kappa * dtau))
                if max(np.abs(r).max(initial=0.0) for r in map(np.atleast_1d, res)) < 1e-14:
                    break
                corr = solve_kkt(*res)
                d = tuple(u + v for u, v in zip(d, corr))
            return d

        def step_len(dxt, dst, dtau, dkap):
            a = min(W.max_step(dxt), W.max_step(dst))
            if dtau < 0:
                a = min(a, -tau / dtau)
            if dkap < 0:
                a = min(a, -kappa / dkap)
            return a

        # predictor
        rc_aff = -W.jordan(lam, lam)
        d_aff = newton(-rp, -rd, -rg, W.jordan_solve(rc_aff), -tau * kappa)
        a_aff = min(1.0, step_len(*[d_aff[0], d_aff[2], d_aff[3], d_aff[4]]))
        sigma = float(np.clip((1.0 - a_aff) ** 3, 0.0, 1.0))
        # corrector
        eta = 1.0 - sigma
        rc = rc_aff - W.jordan(d_aff[0], d_aff[2]) + sigma * mu * W.jordan(lam, 0 * lam + _unit(cone))
        r5 = -tau * kappa - d_aff[3] * d_aff[4] + sigma * mu
        dxt, dy, dst, dtau, dkap = newton(-eta * rp, -eta * rd, -eta * rg, W.jordan_solve(rc), r5)
        a = min(1.0, cfg.step_frac * step_len(dxt, dst, dtau, dkap))
        if not np.isfinite(a) or a <= 0:
            status, info["breakdown"] = "unknown", "zero step length"
            break
        x = x + a * W.primal_from_scaled(dxt)
        s = s + a * W.dual_from_scaled(dst)
        y = y + a * dy
        tau = tau + a * dtau
        kappa = kappa + a * dkap
        # renormalise the homogeneous scale to avoid drift
        scale = 1.0 / max(tau + kappa, 1e-300)
        if scale < 1e-3 or scale > 1e3:
            x, s, y, tau, kappa = x * scale, s * scale, y * scale, tau * scale, kappa * scale
    if status in ("unknown", "continue"):
        if best is not None:
            _, x, y, s, tau, kappa, _ = best
            status = "feasible"
            info["returned_iterate"] = best[6]
        else:
            status = "unknown"
    info["mu"] = float((x @ s + tau * kappa) / nu)
    return status, x, y, s, tau, kappa, it, info


_UNIT_CACHE: dict = {}


def _unit(cone: _Cone) -> np.ndarray:
    """Identity element e, for which lam o e = lam."""
    key = (cone.n_lp, tuple(cone.psd))
    if key not in _UNIT_CACHE:
        _UNIT_CACHE[key] = cone.identity()
    return _UNIT_CACHE[key]


def solve_builtin(data: SdpData, cfg: SolverConfig | None = None) -> SdpSolution:
    """Solve with the built-in interior-point method."""
    cfg = cfg or SolverConfig()
    t0 = time.perf_counter()
    cone = _Cone(data.n_lp, data.psd)
    pre = _presolve(data, cfg)
    bnorm = np.linalg.norm(data.b)
    cnorm = np.linalg.norm(data.c)
    if pre.status is not None:
        sol = SdpSolution(pre.status, info=dict(pre.info))
        if pre.cert is not None:
            sol.y = _lift_dual(pre, pre.cert, full_rows=True)
        sol.info["time"] = time.perf_counter() - t0
        return sol
    A, b, c = pre.A, pre.b, pre.c
    As, bs, cs, D, E, sb, sc = _equilibrate(A, b, c, cone, cfg.ruiz_iters)

    def unscale(x, y, s, tau):
        return E * x / (sb * tau), D * y / (sc * tau), s / (E * sc * tau)

    def check(x, y, s, tau, kappa):
        meas = {}
        xu, yu, su = unscale(x, y, s, tau)
        pres = np.linalg.norm(A @ xu - b) / (1.0 + bnorm)
        dres = np.linalg.norm(A.T @ yu + su - c) / (1.0 + cnorm)
        pobj, dobj = c @ xu, b @ yu
        gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        meas.update(pres=pres, dres=dres, gap=gap)
        # aim a decade below the tolerance; anything within it is accepted on exit
        tight = 0.1 * cfg.tol
        if pres <= tight and dres <= tight and gap <= tight:
            return "feasible", meas
        meas["acceptable"] = pres <= cfg.tol and dres <= cfg.tol and gap <= cfg.tol
        # infeasibility certificates (on unscaled rays)
        yr = D * y / sc
        sr = s / (E * sc)
        by = b @ yr
        if by > 0:
            r = np.linalg.norm(A.T @ yr + sr) / by
            meas["pinf"] = r
            if r <= cfg.infeas_tol * max(1.0, cnorm) and tau < kappa:
                return "infeasible_certificate", meas
        xr = E * x / sb
        cx = c @ xr
        if cx < 0:
            r = np.linalg.norm(A @ xr) / -cx
            meas["dinf"] = r
            if r <= cfg.infeas_tol * max(1.0, bnorm) and tau < kappa:
                return "unbounded", meas
        return "continue", meas

    status, x, y, s, tau, kappa, it, info = _hsd(As, bs, cs, cone, cfg, check)
    info.update(pre.info)
    info["tau"], info["kappa"] = float(tau), float(kappa)
    sol = SdpSolution(status, iterations=it, info=info)
    if status in ("feasible", "unknown") and tau > 0:
        xu, yu, su = unscale(x, y, s, tau)
        _fill_primal_dual(sol, data, pre, xu, yu, su)
        if status == "unknown":
            sol.info["note"] = "iteration limit or breakdown; last iterate reported"
    elif status == "infeasible_certificate":
        yr = D * y / sc
        sol.y = _lift_dual(pre, yr)
        sol.s = np.concatenate([np.zeros(data.n_free), s / (E * sc)])
        sol.residuals["farkas"] = float(np.linalg.norm(data.A.T @ sol.y + sol.s) / max(data.b @ sol.y, 1e-300))
    elif status == "unbounded":
        xr = E * x / sb
        sol.x = np.concatenate([np.zeros(data.n_free), xr])
    sol.info["time"] = time.perf_counter() - t0
    return sol


def _lift_dual(pre: _Presolved, yr: np.ndarray, full_rows=False) -> np.ndarray:
    m_proj = pre.A.shape[0] if not full_rows else len(yr)
    if not full_rows:
        full = np.zeros(pre.Q2.shape[1] if pre.Q2 is not None else len(pre.b_orig))
        full[pre.keep] = yr
    else:
        full = yr
    y = pre.Q2 @ full if pre.Q2 is not None else full
    if pre.y0 is not None:
        y = y + pre.y0
    return y


def _fill_primal_dual(sol: SdpSolution, data: SdpData, pre: _Presolved, xk, yr, sk):
    nf = data.n_free
    xf = np.zeros(nf)
    if nf:
        rhs = pre.b_orig - pre.G @ xk
        xf, *_ = np.linalg.lstsq(pre.F, rhs, rcond=None)
    x = np.concatenate([xf, xk])
    y = _lift_dual(pre, yr)
    s = np.concatenate([np.zeros(nf), sk])
    sol.x, sol.y, sol.s = x, y, s
    sol.primal_obj = float(data.c @ x)
    sol.dual_obj = float(data.b @ y)
    sol.residuals = residuals(data, x, y, s)


def residuals(data: SdpData, x, y, s) -> dict:
    bnorm, cnorm = np.linalg.norm(data.b), np.linalg.norm(data.c)
    pres = float(np.linalg.norm(data.A @ x - data.b) / (1 + bnorm))
    dres = float(np.linalg.norm(data.A.T @ y + s - data.c) / (1 + cnorm))
    p, d = float(data.c @ x), float(data.b @ y)
    gap = abs(p - d) / (1 + abs(p) + abs(d))
    cone = _Cone(data.n_lp, data.psd)
    mineig = np.inf
    xs = x[data.n_free:]
    if data.n_lp:
        mineig = min(mineig, xs[: data.n_lp].min())
    for sl, k in zip(cone.slices, cone.psd):
        mineig = min(mineig, np.linalg.eigvalsh(smat(xs[sl], k))[0])
    return {"primal": pres, "dual": dres, "gap": float(gap),
            "min_eig": float(mineig) if np.isfinite(mineig) else 0.0,
            "x_norm": float(np.linalg.norm(x))}


# ---------------------------------------------------------------------------
# external backends
# ---------------------------------------------------------------------------

def solve_external(data: SdpData, command: str, cfg: SolverConfig | None = None,
                   timeout: float | None = None) -> SdpSolution:
    """Run ``command`` with SdpData JSON on stdin; parse SdpSolution JSON from stdout."""
    cfg = cfg or SolverConfig()
    payload = data.to_json()
    payload["tol"] = cfg.tol
    args = shlex.split(command)
    try:
        proc = subprocess.run(args, input=json.dumps(payload), capture_output=True,
                              text=True, timeout=timeout)
    except (OSError, subprocess.TimeoutExpired) as e:
        raise SolverError(f"backend {command!r} failed to run: {e}") from e
    if proc.returncode != 0:
        raise SolverError(f"backend {command!r} exited with {proc.returncode}: {proc.stderr.strip()[-500:]}")
    try:
        sol = SdpSolution.from_json(json.loads(proc.stdout))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise SolverError(f"backend {command!r} produced unreadable output: {e}") from e
    if sol.x is not None and sol.y is not None and sol.s is not None:
        sol.residuals.update(residuals(data, sol.x, sol.y, sol.s))
    sol.info["backend"] = command
    return sol


def default_backend_command() -> str:
    return f"{sys.executable} -m nnsos.backend_cvxpy"


def solve(data: SdpData, cfg: SolverConfig | None = None) -> SdpSolution:
    """Dispatch to the configured backend (built-in unless ``cfg.backend``)."""
    cfg = cfg or SolverConfig()
    backend = cfg.backend or os.environ.get(BACKEND_ENV) or None
    if backend in (None, "", "builtin"):
        return solve_builtin(data, cfg)
    if backend == "cvxpy":
        backend = default_backend_command()
    return solve_external(data, backend, cfg)


# ---------------------------------------------------------------------------
# bisection line search
# ---------------------------------------------------------------------------

@dataclass
class LineSearchResult:
    value: float
    artifact: object = None
    probes: list = field(default_factory=list)
    non_monotone: bool = False
    hit_upper: bool = False


def line_search(lo: float, hi: float, oracle: Callable[[float], tuple[bool, object]],
                rel_tol: float = 1e-3, lo_artifact=None, check_lo: bool = False,
                max_probes: int = 60, recheck: int = 0) -> LineSearchResult:
    """Bisect ``[lo, hi]`` for the largest value the oracle accepts.

    ``oracle(a)`` returns ``(feasible, artifact)``.  ``lo`` is assumed
    feasible (pass ``check_lo`` to verify).  Stops once the bracket is below
    ``rel_tol * max(|lo|, 1)``.  ``recheck`` extra probes are then spread
    over the part of ``[lo, hi]`` above the first infeasible probe.  A
    feasible probe above an infeasible one marks the result non-monotone;
    the largest feasible probe is returned.
    """
    probes = []
    best, best_art = lo, lo_artifact
    if check_lo:
        ok, art = oracle(lo)
        probes.append((lo, ok))
        if not ok:
            raise ValueError(f"line search lower end {lo!r} is infeasible")
        best_art = art
    ok, art = oracle(hi)
    probes.append((hi, ok))
    if ok:
        return LineSearchResult(hi, art, probes, hit_upper=True)
    a, b = lo, hi
    while b - a > rel_tol * max(abs(a), 1.0) and len(probes) < max_probes:
        mid = 0.5 * (a + b)
        ok, art = oracle(mid)
        probes.append((mid, ok))
        if ok:
            a, best, best_art = mid, mid, art
        else:
            b = mid
    for t in np.linspace(b, hi, recheck + 2)[1:-1]:
        ok, art = oracle(float(t))
        probes.append((float(t), ok))
        if ok and t > best:
            best, best_art = float(t), art
    infeas = [p for p, f in probes if not f]
    non_mono = any(f and p > min(infeas) for p, f in probes) if infeas else False
    return LineSearchResult(best, best_art, probes, non_monotone=non_mono)
