"""Why a feasible local decrease program is not a stability proof.

For ``x+ = 2x`` on ``{0.25 - x^2 >= 0}`` the local decrease program with a
free quartic V is feasible, yet the origin is unstable.  The explicit
sum-of-squares identity is checked first; then the two-step procedure is
run with and without the origin gate, and the candidate parameterisation
(minimum pinned at the origin) is shown to be infeasible.
"""

from nnsos.fixtures import data_path
from nnsos.semialg import load_model
from nnsos.verify import (VerifyConfig, reproduce_counterexample, verify_local_candidate,
                          verify_local_two_step)

rep = reproduce_counterexample()
print(f"identity holds: {rep['passed']} (max coefficient difference {rep['max_coeff_diff']:.2e})")

model = load_model(data_path("scalar_unstable.json"))
x = model.universe.var("x1")
q = 0.25 - x * x

gated = verify_local_two_step(model, q, 4)
print(f"two-step, gated: {gated.status}; decrease program {gated.solver['decrease']['status']}")
for note in gated.notes:
    print(f"  {note}")

ungated = verify_local_two_step(model, q, 4, VerifyConfig(origin_gate=False))
print(f"two-step, gate disabled: {ungated.status}")
for name, check in ungated.validation["checks"].items():
    if not check["passed"]:
        print(f"  {name} failed, witness {check.get('witness')}")

cand = verify_local_candidate(model, q, 2)
print(f"candidate: {cand.status}; decrease program {cand.solver['decrease']['status']}")
