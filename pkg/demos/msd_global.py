"""Global stability of the mass-spring-damper loop with an implicit network.

Searches a quartic Lyapunov function, validates it on samples and
trajectories, and prints the solver statistics and leading coefficients.
"""

import logging

from nnsos.fixtures import data_path
from nnsos.semialg import load_model
from nnsos.verify import verify_global

logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

model = load_model(data_path("msd_implicit.json"))
cert = verify_global(model, deg=4)
print(f"status: {cert.status}")
print(f"solver: {cert.solver}")
names = model.universe.names
quad = {m: c for m, c in cert.V.terms.items() if sum(e for _, e in m) == 2}
for m, c in sorted(quad.items(), key=lambda t: -abs(t[1])):
    print("  " + " ".join(f"{names[i]}^{e}" for i, e in m) + f": {c:.6g}")
for name, check in cert.validation["checks"].items():
    print(f"  {name}: {'ok' if check['passed'] else 'FAILED'}")
