"""Command-line entry point.

Exit status: 0 for a VALID certificate, 2 when no conclusion was reached,
3 when a certificate failed validation, 1 for usage or model errors.  Every
run that gets past argument parsing writes a JSON report.
"""

from __future__ import annotations

import argparse
import ast
import json
import logging
import sys
import time
from dataclasses import dataclass, field

from . import verify
from .compile import compile_program, export_sdp
from .errors import ModelError, NnsosError
from .poly import Polynomial, Universe
from .semialg import load_model
from .solver import SolverConfig
from .sosir import Expr, Frame, MultiplierConfig, SosProgram, constraint_decrease, param_V_general

log = logging.getLogger(__name__)

EXIT_VALID, EXIT_ERROR, EXIT_INCONCLUSIVE, EXIT_INVALID = 0, 1, 2, 3

COMMANDS = ("verify-global", "verify-local", "verify-local-candidate", "verify-roa",
            "check-certificate", "export-sdp")


def exit_code(status: str) -> int:
    if status == verify.VALID:
        return EXIT_VALID
    if status == verify.INVALID:
        return EXIT_INVALID
    return EXIT_INCONCLUSIVE


# ---------------------------------------------------------------------------
# region expressions
# ---------------------------------------------------------------------------

def parse_polynomial(text: str, universe: Universe) -> Polynomial:
    """Parse ``0.25 - x1^2``-style expressions over the universe's names.

    Also accepts inline JSON (``{"terms": ...}``) or ``@file.json``.
    """
    text = text.strip()
    if text.startswith("@"):
        with open(text[1:]) as fh:
            return Polynomial.from_json(json.load(fh), universe)
    if text.startswith("{"):
        return Polynomial.from_json(json.loads(text), universe)
    try:
        tree = ast.parse(text.replace("^", "**"), mode="eval")
    except SyntaxError as e:
        raise ModelError(f"cannot parse region {text!r}: {e.msg} at column {e.offset}") from e

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return Polynomial.const(float(node.value), universe)
        if isinstance(node, ast.Name):
            try:
                return Polynomial.var(universe.index(node.id), universe)
            except (KeyError, ValueError, ModelError) as e:
                raise ModelError(f"unknown variable {node.id!r} in region") from e
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.BinOp):
            a = ev(node.left)
            if isinstance(node.op, ast.Pow):
                if not (isinstance(node.right, ast.Constant) and isinstance(node.right.value, int)
                        and node.right.value >= 0):
                    raise ModelError("exponents in a region must be non-negative integers")
                return a ** node.right.value
            b = ev(node.right)
            if isinstance(node.op, ast.Add):
                return a + b
            if isinstance(node.op, ast.Sub):
                return a - b
            if isinstance(node.op, ast.Mult):
                return a * b
            if isinstance(node.op, ast.Div):
                if b.degree() > 0 or not b.constant():
                    raise ModelError("division in a region only by non-zero constants")
                return a / b.constant()
        raise ModelError(f"unsupported syntax in region {text!r}")

    return ev(tree)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    command: str
    model: str
    degree: int | None = None
    region: str | None = None
    certificate: str | None = None
    out: str | None = None
    grid_out: str | None = None
    grid_box: tuple = (-4.0, 4.0, -4.0, 4.0)
    box: float = 4.0
    tol: float = 1e-6
    dalpha: float = 1.0
    rel_tol: float = 1e-3
    max_iter: int = 15
    alpha0: float = 0.1
    resume: str | None = None
    seed: int = 0
    samples: int = 2048
    backend: str | None = None
    origin_gate: bool = True
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ModelError(f"unknown command {self.command!r}")
        if self.degree is not None and (self.degree < 2 or self.degree % 2):
            raise ModelError("--degree must be an even integer >= 2")

    def verify_config(self) -> verify.VerifyConfig:
        return verify.VerifyConfig(solver=SolverConfig(tol=self.tol, backend=self.backend),
                                   origin_gate=self.origin_gate, samples=self.samples,
                                   seed=self.seed, box=self.box)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_ERROR)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nnsos", description="SOS stability certificates for neural feedback loops")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--model", required=True, help="closed-loop model JSON")
        s.add_argument("--out", help="JSON report path (stdout if omitted)")
        s.add_argument("--tol", type=float, default=1e-6, help="solver tolerance")
        s.add_argument("--seed", type=int, default=0, help="validation sampling seed")
        s.add_argument("--samples", type=int, default=2048, help="validation samples")
        s.add_argument("--backend", help="'builtin', 'cvxpy' or an external solver command "
                                         "(default from NNSOS_BACKEND)")
        if name in ("verify-global", "verify-local", "verify-local-candidate", "export-sdp"):
            s.add_argument("--degree", type=int, default=None, help="Lyapunov degree (even)")
        if name in ("verify-local", "verify-local-candidate", "export-sdp"):
            s.add_argument("--region", required=name != "export-sdp",
                           help="region polynomial q with Q = {q >= 0}, e.g. '0.25 - x1^2'")
        if name == "verify-local":
            s.add_argument("--no-origin-gate", action="store_true",
                           help="keep going when no sublevel set above V(0) is certified")
        if name == "verify-global":
            s.add_argument("--box", type=float, default=4.0, help="validation box half-width")
        if name == "verify-roa":
            s.add_argument("--dalpha", type=float, default=1.0, help="line-search bracket width")
            s.add_argument("--rel-tol", type=float, default=1e-3, help="relative alpha stopping tolerance")
            s.add_argument("--max-iter", type=int, default=15)
            s.add_argument("--alpha0", type=float, default=0.1)
            s.add_argument("--resume", help="earlier report or certificate to resume from")
        if name == "check-certificate":
            s.add_argument("--certificate", required=True, help="certificate or report JSON")
        if name != "export-sdp":
            s.add_argument("--grid-out", help="CSV of (x1, x2, V, q) over a 201x201 grid")
            s.add_argument("--grid-box", type=float, nargs=4, default=[-4.0, 4.0, -4.0, 4.0],
                           metavar=("X1MIN", "X1MAX", "X2MIN", "X2MAX"))
    return p


def config_from_args(ns) -> RunConfig:
    return RunConfig(
        command=ns.command, model=ns.model, degree=getattr(ns, "degree", None),
        region=getattr(ns, "region", None), certificate=getattr(ns, "certificate", None),
        out=ns.out, grid_out=getattr(ns, "grid_out", None),
        grid_box=tuple(getattr(ns, "grid_box", (-4.0, 4.0, -4.0, 4.0))),
        box=getattr(ns, "box", 4.0), tol=ns.tol, dalpha=getattr(ns, "dalpha", 1.0),
        rel_tol=getattr(ns, "rel_tol", 1e-3), max_iter=getattr(ns, "max_iter", 15),
        alpha0=getattr(ns, "alpha0", 0.1), resume=getattr(ns, "resume", None), seed=ns.seed,
        samples=ns.samples, backend=ns.backend,
        origin_gate=not getattr(ns, "no_origin_gate", False))


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------

def _load_json(path: str) -> dict:
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as e:
            raise ModelError(f"{path}: malformed JSON at line {e.lineno}, column {e.colno}: {e.msg}") from e


def _certificate_dict(d: dict) -> dict:
    return d["certificate"] if "certificate" in d and isinstance(d["certificate"], dict) else d


def _export(cfg: RunConfig, model) -> dict:
    frame = Frame(model)
    deg = cfg.degree or 4
    prog = SosProgram(model.universe, "export")
    V = param_V_general(prog, frame, deg)
    if cfg.region:
        q = frame.center(parse_polynomial(cfg.region, model.universe))
        constraint_decrease(prog, frame, V, q=[Expr.const(q)])
    else:
        constraint_decrease(prog, frame, V, cfg=MultiplierConfig(budget=deg + 2, prune=True))
    return export_sdp(compile_program(prog))


def execute(cfg: RunConfig):
    """Run one command; returns ``(exit status, report dict)``."""
    model = load_model(cfg.model)
    report = {"command": cfg.command, "model": model.name, "model_path": cfg.model}
    if cfg.command == "export-sdp":
        report["sdp"] = _export(cfg, model)
        report["status"] = "EXPORTED"
        return EXIT_VALID, report
    vcfg = cfg.verify_config()
    if cfg.command == "verify-global":
        cert = verify.verify_global(model, cfg.degree or 4, vcfg)
    elif cfg.command in ("verify-local", "verify-local-candidate"):
        q = parse_polynomial(cfg.region, model.universe)
        fn = verify.verify_local_two_step if cfg.command == "verify-local" else verify.verify_local_candidate
        cert = fn(model, q, cfg.degree or (4 if cfg.command == "verify-local" else 2), vcfg)
    elif cfg.command == "verify-roa":
        rcfg = verify.RoaConfig(dalpha=cfg.dalpha, rel_tol=cfg.rel_tol, max_iter=cfg.max_iter,
                                alpha0=cfg.alpha0)
        history = None
        if cfg.resume:
            history = _certificate_dict(_load_json(cfg.resume)).get("history") or None
        cert = verify.run_algorithm1(model, rcfg, vcfg, history=history)
    else:  # check-certificate
        cert = verify.Certificate.from_json(_certificate_dict(_load_json(cfg.certificate)), model.universe)
        cert.status = verify.UNVALIDATED
        cert.validation = None
        verify.validate_certificate(model, cert, vcfg)
    report["status"] = cert.status
    report["certificate"] = cert.to_json(model.universe)
    if cfg.grid_out and cert.V is not None:
        verify.export_grid(model, cert, cfg.grid_out, cfg.grid_box)
        report["grid"] = cfg.grid_out
    return exit_code(cert.status), report


def _write_report(report: dict, out: str | None):
    report = dict(report)
    report["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
    text = json.dumps(report, indent=1, sort_keys=True) + "\n"
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def run(cfg: RunConfig) -> int:
    try:
        code, report = execute(cfg)
    except (ModelError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        code, report = EXIT_ERROR, {"command": cfg.command, "status": "ERROR", "error": str(e)}
    except NnsosError as e:  # solver or compilation breakdown
        print(f"no conclusion: {e}", file=sys.stderr)
        code, report = EXIT_INCONCLUSIVE, {"command": cfg.command, "status": verify.INCONCLUSIVE,
                                           "error": str(e)}
    report["exit_code"] = code
    _write_report(report, cfg.out)
    return code


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(ns)
    except ModelError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
