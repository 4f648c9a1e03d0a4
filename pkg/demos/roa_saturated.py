"""Grow an invariant region of attraction for the saturated LQR loop.

Runs the alternating region-growth procedure from the linearisation, prints
the alpha history and nesting checks, and writes a grid of (x1, x2, V, q)
values to ``roa_grid.csv`` for plotting.
"""

import logging
import sys

from nnsos.fixtures import data_path
from nnsos.semialg import load_model
from nnsos.verify import RoaConfig, export_grid, run_algorithm1

logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

name = sys.argv[1] if len(sys.argv) > 1 else "saturated_lqr.json"
model = load_model(data_path(name))
cert = run_algorithm1(model, RoaConfig())
print(f"status: {cert.status}, alpha: {cert.alpha:.6g}")
print(f"alpha sequence: {[round(a, 4) for a in cert.solver['alphas']]}")
for h in cert.history:
    nest = all(c["passed"] for c in h["nesting"])
    print(f"  iteration {h['iteration']}: alpha_A {h['alpha_A']:.4g}, alpha_B {h['alpha_B']:.4g}, "
          f"nested {nest}")
rows = export_grid(model, cert, "roa_grid.csv")
print(f"wrote {rows} grid rows to roa_grid.csv")
