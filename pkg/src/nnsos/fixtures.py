"""Builders for the example models shipped in ``nnsos/data``.

Each builder returns a JSON-ready dict in the model file layout; the JSON
files in the data directory are generated from these functions.
"""

from __future__ import annotations

import json
import math
from importlib import resources

import numpy as np

C_SP = math.log(2) ** 2
LQR_GAIN_MSD = (-0.0714, -0.742)


def _lin(coeffs: dict, const: float = 0.0) -> dict:
    """Affine polynomial in JSON form from ``{name: coeff}``."""
    terms = [{"exps": {}, "coeff": const}] if const else []
    terms += [{"exps": {k: 1}, "coeff": v} for k, v in coeffs.items() if v]
    return {"terms": terms}


def scaled_gain(K=LQR_GAIN_MSD, c_sp=C_SP) -> np.ndarray:
    """Gain fed to the smooth saturation so its slope at 0 equals ``K``."""
    return 2.0 * math.sqrt(c_sp + 0.25) * np.asarray(K, dtype=float)


def msd_model(Ts=0.05, m=1.0, k=0.5, d1=0.1, d2=0.5, c_tanh=1.0, c_sp=C_SP) -> dict:
    """Backward-Euler mass-spring-damper loop written as an implicit network.

    Neurons: w1, w2 are the next position/velocity (identity), w3 the
    damping nonlinearity, w4 and w5 the two smooth-softplus halves of the
    saturated state feedback.
    """
    k1, k2 = scaled_gain(c_sp=c_sp)
    D11 = [
        [0.0, Ts, 0.0, 0.0, 0.0],
        [-Ts * k / m, 0.0, -Ts * d2 / m, Ts / m, -Ts / m],
        [0.0, d1, 0.0, 0.0, 0.0],
        [k1, k2, 0.0, 0.0, 0.0],
        [k1, k2, 0.0, 0.0, 0.0],
    ]
    D12 = [[1.0, 0.0], [0.0, 1.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0]]
    bv = [0.0, -Ts / m, 0.0, 1.0, -1.0]
    acts = ["identity", "identity", f"tanh_hat({c_tanh!r})",
            f"softplus_hat({c_sp!r})", f"softplus_hat({c_sp!r})"]
    return {
        "name": "mass_spring_damper_implicit",
        "description": "backward-Euler mass-spring-damper with smooth saturated LQR feedback "
                       f"(Ts={Ts}, m={m}, k={k}, d1={d1}, d2={d2}, c_tanh={c_tanh})",
        "plant": {"state_dim": 2, "input_dim": 5, "f": [_lin({"u1": 1.0}), _lin({"u2": 1.0})]},
        "network": {"type": "implicit", "D11": D11, "D12": D12, "bv": bv, "activations": acts},
        "continuity_assumption": "auto",
    }


def scalar_linear_model(a: float, name: str | None = None) -> dict:
    """Autonomous scalar system ``x+ = a x``."""
    return {
        "name": name or f"scalar_linear_{a:g}",
        "description": f"autonomous scalar map x+ = {a:g} x",
        "plant": {"state_dim": 1, "input_dim": 0, "f": [_lin({"x1": a})]},
        "network": None,
        "continuity_assumption": "auto",
    }


def zero_index_example_model(c_sp=C_SP) -> dict:
    """Two-state plant driven by ``u = [softplus_hat(x2), relu(x1 - 1)]``.

    The plant is chosen so the closed loop is locally stable with a quadratic
    candidate: near the origin ``u2 = 0`` and ``u1 = sqrt(c_sp) + x2/2 + ...``.
    """
    u10 = math.sqrt(c_sp)
    f1 = _lin({"x1": 0.5, "x2": 0.1, "u2": -0.2})
    f2 = _lin({"x2": 0.6, "u1": -0.4}, const=0.4 * u10)
    D12 = [[0.0, 1.0], [1.0, 0.0]]
    return {
        "name": "zero_index_example",
        "description": "polynomial plant with a smooth-softplus and a ReLU output neuron",
        "plant": {"state_dim": 2, "input_dim": 2, "f": [f1, f2]},
        "network": {"type": "implicit", "D11": [[0.0, 0.0], [0.0, 0.0]], "D12": D12,
                    "bv": [0.0, -1.0], "activations": [f"softplus_hat({c_sp!r})", "relu"]},
        "continuity_assumption": "auto",
    }


SAT_PLANT_A = ((1.0, 0.1), (0.0, 1.05))
SAT_PLANT_B = (0.0, 0.1)


def sat_plant_lqr(Q=5.0, R=1.0) -> np.ndarray:
    """LQR gain of the saturated double-integrator-like plant (u = K x)."""
    from scipy.linalg import solve_discrete_are

    A = np.array(SAT_PLANT_A)
    B = np.array(SAT_PLANT_B).reshape(2, 1)
    P = solve_discrete_are(A, B, Q * np.eye(2), R * np.eye(1))
    return -np.linalg.solve(R * np.eye(1) + B.T @ P @ B, B.T @ P @ A)


def _sat_plant(name: str, description: str, layers: list) -> dict:
    (a11, a12), (a21, a22) = SAT_PLANT_A
    b1, b2 = SAT_PLANT_B
    f = [_lin({"x1": a11, "x2": a12, "u1": b1}), _lin({"x1": a21, "x2": a22, "u1": b2})]
    return {
        "name": name,
        "description": description,
        "plant": {"state_dim": 2, "input_dim": 1, "f": f},
        "network": {"type": "feedforward", "layers": layers},
        "continuity_assumption": "auto",
    }


def saturated_lqr_model() -> dict:
    """Plant with ``u = sat(K x)``: the gain acts as a one-layer network."""
    K = sat_plant_lqr()
    layers = [{"weights": K.tolist(), "biases": [0.0], "activations": ["sat"]}]
    return _sat_plant("saturated_lqr", "saturated plant under saturated LQR feedback", layers)


def surrogate_relu_model(seed: int = 7) -> dict:
    """2x5x5x1 ReLU controller with saturated output for the saturated plant.

    Trained weights are not available, so the network is constructed: every
    hidden neuron is strictly active at the origin, the read-out is chosen so
    the network's slope at 0 equals the LQR gain, and a seeded null-space
    component makes the controller nonlinear away from the origin.  The
    output bias is then set so the origin is an equilibrium.
    """
    rng = np.random.default_rng(seed)
    W1 = rng.normal(size=(5, 2))
    b1 = rng.uniform(0.5, 1.0, size=5)
    W2 = 0.5 * rng.normal(size=(5, 5))
    lam1 = np.maximum(W1 @ np.zeros(2) + b1, 0.0)
    b2 = rng.uniform(0.3, 1.0, size=5) - W2 @ lam1
    lam2 = np.maximum(W2 @ lam1 + b2, 0.0)
    M = W2 @ W1
    Mp = np.linalg.pinv(M)
    W3 = sat_plant_lqr() @ Mp + 0.5 * rng.normal(size=(1, 5)) @ (np.eye(5) - M @ Mp)
    b3 = -W3 @ lam2
    layers = [
        {"weights": W1.tolist(), "biases": b1.tolist(), "activations": ["relu"] * 5},
        {"weights": W2.tolist(), "biases": b2.tolist(), "activations": ["relu"] * 5},
        {"weights": W3.tolist(), "biases": b3.tolist(), "activations": ["sat"]},
    ]
    return _sat_plant("relu_surrogate", "saturated plant with a constructed 2x5x5x1 ReLU controller "
                      f"(seed {seed}, slope at the origin equal to the LQR gain)", layers)


def save(d: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(d, fh, indent=1)
        fh.write("\n")


def data_path(name: str):
    return resources.files("nnsos") / "data" / name


BUILDERS = {
    "msd_implicit.json": msd_model,
    "scalar_unstable.json": lambda: scalar_linear_model(2.0, "scalar_unstable"),
    "scalar_stable.json": lambda: scalar_linear_model(0.5, "scalar_stable"),
    "zero_index_example.json": zero_index_example_model,
    "saturated_lqr.json": saturated_lqr_model,
    "relu_surrogate.json": surrogate_relu_model,
}


def write_all(directory) -> None:
    import os
    for fname, fn in BUILDERS.items():
        save(fn(), os.path.join(directory, fname))
