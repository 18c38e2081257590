"""Shared generators and comparisons for the test suite."""
from __future__ import annotations

import numpy as np
from hypothesis import strategies as st

from qstack.circuit import Circuit, gate
from qstack.simulator import circuit_unitary, phase_distance

ONE_Q = ("x", "y", "z", "h", "rx", "ry", "rz")
TWO_Q = ("cx", "swap", "cz")


def random_gate(rng: np.random.Generator, n_wires: int, allow_3q: bool = True):
    r = rng.random()
    if n_wires >= 3 and allow_3q and r < 0.05:
        return gate("ccx", *map(int, rng.choice(n_wires, 3, replace=False)))
    if n_wires >= 2 and r < 0.45:
        return gate(TWO_Q[rng.integers(len(TWO_Q))], *map(int, rng.choice(n_wires, 2, replace=False)))
    name = ONE_Q[rng.integers(len(ONE_Q))]
    theta = float(rng.uniform(-2 * np.pi, 2 * np.pi)) if name.startswith("r") else None
    return gate(name, int(rng.integers(n_wires)), theta=theta)


def random_circuit(rng: np.random.Generator, n_wires: int, n_gates: int, allow_3q: bool = True) -> Circuit:
    return Circuit.of(n_wires, [random_gate(rng, n_wires, allow_3q) for _ in range(n_gates)])


@st.composite
def circuits(draw, max_wires: int = 4, max_gates: int = 20, allow_3q: bool = True):
    """Hypothesis strategy for small random qubit circuits."""
    n = draw(st.integers(1, max_wires))
    seed = draw(st.integers(0, 2 ** 32 - 1))
    k = draw(st.integers(0, max_gates))
    return random_circuit(np.random.default_rng(seed), n, k, allow_3q)


def same_unitary(a: Circuit, b: Circuit, tol: float = 1e-10) -> bool:
    return phase_distance(circuit_unitary(a), circuit_unitary(b)) <= tol


def random_device(rng: np.random.Generator, n: int, p_edge: float = 0.5):
    """Connected random device with spread-out calibration values."""
    import networkx as nx

    from qstack.device import DeviceModel

    while True:
        g = nx.gnp_random_graph(n, p_edge, seed=int(rng.integers(2 ** 31)))
        if nx.is_connected(g):
            break
    edges = list(g.edges)
    return DeviceModel(n, edges, {e: float(rng.uniform(0.01, 0.2)) for e in edges},
                       tuple(rng.uniform(0.0005, 0.01, n)), tuple(rng.uniform(0.01, 0.1, n)), (40.0,) * n)


def mapping_instance(seed: int):
    """Random (circuit, device, weights) within exact-search bounds."""
    from qstack.mapper import ObjectiveWeights

    rng = np.random.default_rng(seed)
    n_dev = int(rng.integers(3, 9))
    p = int(rng.integers(1, min(5, n_dev) + 1))
    dev = random_device(rng, n_dev)
    gs = []
    for _ in range(int(rng.integers(1, 16))):
        if p >= 2 and rng.random() < 0.6:
            gs.append(gate("cx", *map(int, rng.choice(p, 2, replace=False))))
        elif rng.random() < 0.5:
            gs.append(gate("rz", int(rng.integers(p)), theta=float(rng.normal())))
        else:
            gs.append(gate(("h", "x")[rng.integers(2)], int(rng.integers(p))))
    w = ObjectiveWeights(float(rng.choice([0.0, 0.25, 0.5, 0.75, 1.0])))
    return Circuit.of(p, gs), dev, w
