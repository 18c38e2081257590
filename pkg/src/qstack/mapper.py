"""Noise-adaptive qubit mapping: reliability objective, SWAP routing, exact and heuristic search."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .circuit import Circuit, Gate, GateKind, decompose_toffoli, flatten, gate
from .device import DeviceModel, best_swap_path, edge_key
from .errors import Infeasible, TooLarge, UnroutedGate

EXACT_MAX_PROGRAM = 6
EXACT_MAX_DEVICE = 16


@dataclass(frozen=True)
class Mapping:
    """``assign[i]`` is the hardware qubit hosting program qubit ``i``."""

    assign: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "assign", tuple(int(a) for a in self.assign))
        if len(set(self.assign)) != len(self.assign):
            raise ValueError(f"mapping {self.assign} is not injective")

    def __getitem__(self, q: int) -> int:
        return self.assign[q]

    def __len__(self):
        return len(self.assign)

    @classmethod
    def identity(cls, n: int) -> "Mapping":
        return cls(tuple(range(n)))


@dataclass(frozen=True)
class ObjectiveWeights:
    omega: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.omega <= 1.0:
            raise ValueError("omega must lie in [0, 1]")


@dataclass(frozen=True)
class RoutedCircuit:
    """Circuit over hardware qubits plus routing bookkeeping.

    ``final_position[h]`` is where the content that started on hardware
    qubit ``h`` ends up once all inserted SWAPs have run.
    """

    circuit: Circuit
    swap_count: int
    log_reliability: float
    initial: Mapping
    final: Mapping
    final_position: tuple[int, ...] = field(default=())

    @property
    def reliability(self) -> float:
        return math.exp(self.log_reliability)


def prepare(c: Circuit) -> Circuit:
    """Flatten aggregates and expand Toffolis so that every gate has at most two operands."""
    c = decompose_toffoli(flatten(c))
    for g in c.gates:
        if len(g.operands) > 2:
            raise UnroutedGate(f"{g!r}: gates on more than two qubits must be decomposed first")
    return c


# ---------------------------------------------------------------------------
# objective

def log_reliability_objective(c: Circuit, m: Mapping, dev: DeviceModel, w: ObjectiveWeights,
                              readouts: Sequence[int] | None = None) -> float:
    """(1-w) sum ln r_2q + w sum ln r_ro + sum ln r_1q for an already-routed placement.

    Every two-qubit gate must land on a device edge (else UnroutedGate);
    SWAP counts as three native two-qubit gates. Readout terms come from
    MEASURE gates, or, when the circuit has none, from ``readouts``
    (hardware qubits; default: every mapped qubit).
    """
    total = 0.0
    measured = False
    for g in flatten(c).gates:
        site = [m[o] for o in g.operands]
        if g.kind is GateKind.MEASURE:
            total += w.omega * math.log1p(-dev.eps_ro[site[0]])
            measured = True
        elif len(site) == 1:
            total += math.log1p(-dev.eps_1q[site[0]])
        elif len(site) == 2:
            if not dev.has_edge(*site):
                raise UnroutedGate(f"{g!r} on non-adjacent hardware qubits {site}")
            k = 3 if g.kind is GateKind.SWAP else 1
            total += (1 - w.omega) * k * math.log1p(-dev.edge_error(*site))
        else:
            raise UnroutedGate(f"{g!r} has {len(site)} operands")
    if not measured:
        ro = m.assign if readouts is None else readouts
        total += w.omega * sum(math.log1p(-dev.eps_ro[h]) for h in ro)
    return total


def reliability(c: Circuit, m: Mapping, dev: DeviceModel, readouts: Sequence[int] | None = None) -> float:
    """Plain product of gate and readout reliabilities (no omega weighting)."""
    total = 0.0
    measured = False
    for g in flatten(c).gates:
        site = [m[o] for o in g.operands]
        if g.kind is GateKind.MEASURE:
            measured = True
            total += math.log1p(-dev.eps_ro[site[0]])
        elif len(site) == 1:
            total += math.log1p(-dev.eps_1q[site[0]])
        else:
            if not dev.has_edge(*site):
                raise UnroutedGate(f"{g!r} on non-adjacent hardware qubits {site}")
            total += (3 if g.kind is GateKind.SWAP else 1) * math.log1p(-dev.edge_error(*site))
    if not measured:
        ro = m.assign if readouts is None else readouts
        total += sum(math.log1p(-dev.eps_ro[h]) for h in ro)
    return math.exp(total)


# ---------------------------------------------------------------------------
# routing engine shared by all searches

class _Router:
    """Per-device tables: log reliabilities and cached best SWAP paths."""

    def __init__(self, dev: DeviceModel, w: ObjectiveWeights):
        self.dev = dev
        self.w = w
        self.ln1q = [math.log1p(-e) for e in dev.eps_1q]
        self.lnro = [math.log1p(-e) for e in dev.eps_ro]
        self.ln2q = {e: math.log1p(-dev.edge_error(*e)) for e in dev.edges}
        self._paths: dict[tuple[int, int], list[int]] = {}

    def path(self, a: int, b: int) -> list[int]:
        key = (a, b)
        p = self._paths.get(key)
        if p is None:
            p = best_swap_path(a, b, self.dev)[0]
            self._paths[key] = p
        return p

    def edge(self, a: int, b: int) -> float:
        return self.ln2q[edge_key(a, b)]


class _State:
    """Positions during routing. ``cur[h0]`` is the current hardware position of
    whatever started on ``h0``; ``at`` is its inverse."""

    __slots__ = ("cur", "at", "cost", "swaps")

    def __init__(self, n: int):
        self.cur = list(range(n))
        self.at = list(range(n))
        self.cost = 0.0
        self.swaps = 0

    def copy(self) -> "_State":
        s = _State.__new__(_State)
        s.cur, s.at, s.cost, s.swaps = list(self.cur), list(self.at), self.cost, self.swaps
        return s

    def swap(self, u: int, v: int):
        a, b = self.at[u], self.at[v]
        self.at[u], self.at[v] = b, a
        self.cur[a], self.cur[b] = v, u


def _apply(r: _Router, g: Gate, init: Sequence[int], st: _State, out: list | None):
    """Route and cost one program gate given the initial placement ``init``."""
    om = r.w.omega
    pos = [st.cur[init[o]] for o in g.operands]
    if g.kind is GateKind.MEASURE:
        st.cost += om * r.lnro[pos[0]]
    elif len(pos) == 1:
        st.cost += r.ln1q[pos[0]]
    else:
        a, b = pos
        if not r.dev.has_edge(a, b):
            path = r.path(a, b)
            for u, v in zip(path[:-2], path[1:-1]):
                st.swap(u, v)
                st.swaps += 1
                st.cost += (1 - om) * 3 * r.edge(u, v)
                if out is not None:
                    out.append(gate("swap", u, v))
            a = path[-2]
            pos = [a, b]
        k = 3 if g.kind is GateKind.SWAP else 1
        st.cost += (1 - om) * k * r.edge(a, b)
    if out is not None:
        out.append(Gate(g.kind, tuple(pos), 0, g.theta))


def _finish(r: _Router, init: Sequence[int], st: _State, measured: bool):
    if not measured:
        st.cost += r.w.omega * sum(r.lnro[st.cur[init[q]]] for q in range(len(init)))


def _evaluate(r: _Router, c: Circuit, init: Sequence[int], emit: bool = False):
    st = _State(r.dev.n_qubits)
    out: list | None = [] if emit else None
    measured = False
    for g in c.gates:
        measured |= g.kind is GateKind.MEASURE
        _apply(r, g, init, st, out)
    _finish(r, init, st, measured)
    return st, out


def _routed(r: _Router, c: Circuit, init: Sequence[int]) -> RoutedCircuit:
    st, out = _evaluate(r, c, init, emit=True)
    n = r.dev.n_qubits
    final = Mapping(tuple(st.cur[init[q]] for q in range(len(init))))
    return RoutedCircuit(Circuit.of(n, out), st.swaps, st.cost, Mapping(tuple(init)), final, tuple(st.cur))


def route(c: Circuit, m: Mapping, dev: DeviceModel, w: ObjectiveWeights | None = None) -> RoutedCircuit:
    """Insert SWAPs along best_swap_path so that every two-qubit gate sits on an edge.

    The first operand (the control for CNOT) is walked toward the second.
    """
    c = prepare(c)
    if len(m) != c.n_wires:
        raise ValueError(f"mapping covers {len(m)} qubits, circuit has {c.n_wires}")
    if max(m.assign, default=-1) >= dev.n_qubits:
        raise ValueError("mapping refers to a nonexistent hardware qubit")
    return _routed(_Router(dev, w or ObjectiveWeights()), c, m.assign)


def mapping_objective(c: Circuit, m: Mapping, dev: DeviceModel, w: ObjectiveWeights) -> float:
    """Objective of mapping ``m`` after routing."""
    c = prepare(c)
    return _evaluate(_Router(dev, w), c, m.assign)[0].cost


def _check_fit(c: Circuit, dev: DeviceModel):
    if c.n_wires > dev.n_qubits:
        raise Infeasible(f"{c.n_wires} program qubits exceed {dev.n_qubits} device qubits")


# ---------------------------------------------------------------------------
# exact search

def _first_use_order(c: Circuit) -> list[int]:
    order: list[int] = []
    for g in c.gates:
        for o in g.operands:
            if o not in order:
                order.append(o)
    return order + [q for q in range(c.n_wires) if q not in order]


def exact_map(c: Circuit, dev: DeviceModel, w: ObjectiveWeights | None = None) -> tuple[Mapping, RoutedCircuit]:
    """Optimal mapping by depth-first branch and bound.

    Program qubits are placed in order of first use. The gate prefix whose
    qubits are all placed is routed exactly; the remaining gates are bounded
    by the best edge / best single-qubit / best readout values, which never
    underestimates the achievable objective.
    """
    w = w or ObjectiveWeights()
    c = prepare(c)
    _check_fit(c, dev)
    p, n = c.n_wires, dev.n_qubits
    if p > EXACT_MAX_PROGRAM or n > EXACT_MAX_DEVICE:
        raise TooLarge(f"exact search limited to {EXACT_MAX_PROGRAM} program / {EXACT_MAX_DEVICE} device qubits")
    r = _Router(dev, w)
    if p == 0:
        return Mapping(()), _routed(r, c, ())
    om = w.omega
    best2 = max(r.ln2q.values(), default=0.0)
    best1 = max(r.ln1q)
    bestro = max(r.lnro)
    measured = any(g.kind is GateKind.MEASURE for g in c.gates)
    gates = c.gates
    # optimistic value of gates[i:]
    suffix = [0.0] * (len(gates) + 1)
    for i in range(len(gates) - 1, -1, -1):
        g = gates[i]
        if g.kind is GateKind.MEASURE:
            v = om * bestro
        elif len(g.operands) == 1:
            v = best1
        else:
            v = (1 - om) * (3 if g.kind is GateKind.SWAP else 1) * best2
        suffix[i] = suffix[i + 1] + v
    ro_bound = 0.0 if measured else om * sum(sorted(r.lnro, reverse=True)[:p])

    order = _first_use_order(c)
    rank = {q: i for i, q in enumerate(order)}
    # gates[i] becomes routable once its latest-placed qubit is placed
    need = [max(rank[o] for o in g.operands) for g in gates]
    quality = sorted(range(n), key=lambda h: (-(r.ln1q[h] + om * r.lnro[h]), h))

    best = {"val": -math.inf, "init": None}
    init = [-1] * p
    used = [False] * n

    def dfs(k: int, gi: int, st: _State):
        # route everything that only involves placed qubits
        while gi < len(gates) and need[gi] < k:
            _apply(r, gates[gi], init, st, None)
            gi += 1
        if k == p:
            _finish(r, init, st, measured)
            if st.cost > best["val"] + 1e-12:
                best["val"], best["init"] = st.cost, tuple(init)
            return
        if st.cost + suffix[gi] + ro_bound < best["val"] - 1e-12:
            return
        q = order[k]
        for h in quality:
            if used[h]:
                continue
            used[h] = True
            init[q] = h
            dfs(k + 1, gi, st.copy())
            used[h] = False
            init[q] = -1

    dfs(0, 0, _State(n))
    m = Mapping(best["init"])
    return m, _routed(r, c, m.assign)


def enumerate_map(c: Circuit, dev: DeviceModel, w: ObjectiveWeights | None = None) -> list[tuple[float, Mapping]]:
    """Objective of every injective mapping (brute force; testing oracle)."""
    w = w or ObjectiveWeights()
    c = prepare(c)
    _check_fit(c, dev)
    r = _Router(dev, w)
    return [(_evaluate(r, c, perm)[0].cost, Mapping(perm))
            for perm in itertools.permutations(range(dev.n_qubits), c.n_wires)]


# ---------------------------------------------------------------------------
# heuristic search

def _interactions(c: Circuit) -> dict[tuple[int, int], int]:
    counts: dict[tuple[int, int], int] = {}
    for g in c.gates:
        if len(g.operands) == 2:
            k = edge_key(*g.operands)
            counts[k] = counts.get(k, 0) + 1
    return counts


def greedy_placement(c: Circuit, dev: DeviceModel, w: ObjectiveWeights) -> tuple[int, ...]:
    """Busiest program qubits first, each onto the free site best linked to its placed partners."""
    c = prepare(c)
    _check_fit(c, dev)
    r = _Router(dev, w)
    om = w.omega
    inter = _interactions(c)
    degree = [0] * c.n_wires
    n1q = [0] * c.n_wires
    for (a, b), k in inter.items():
        degree[a] += k
        degree[b] += k
    for g in c.gates:
        if len(g.operands) == 1 and g.kind is not GateKind.MEASURE:
            n1q[g.operands[0]] += 1
    order = sorted(range(c.n_wires), key=lambda q: (-degree[q], q))

    def link(h: int, h2: int) -> float:
        if dev.has_edge(h, h2):
            return r.edge(h, h2)
        path = r.path(h, h2)
        cost = sum(3 * r.edge(u, v) for u, v in zip(path[:-2], path[1:-1]))
        return cost + r.edge(path[-2], path[-1])

    def neighbourhood(h: int) -> float:
        vals = [r.edge(h, x) for x in range(dev.n_qubits) if dev.has_edge(h, x)]
        return max(vals, default=-10.0)

    init = [-1] * c.n_wires
    free = set(range(dev.n_qubits))
    for q in order:
        def score(h):
            s = n1q[q] * r.ln1q[h] + om * r.lnro[h]
            placed = [(init[o], k) for (a, b), k in inter.items() for o in (a, b)
                      if q in (a, b) and o != q and init[o] >= 0]
            if placed:
                s += (1 - om) * sum(k * link(h, h2) for h2, k in placed)
            elif degree[q]:
                s += (1 - om) * degree[q] * neighbourhood(h)
            return s
        h = max(sorted(free), key=score)
        init[q] = h
        free.remove(h)
    return tuple(init)


def heuristic_map(c: Circuit, dev: DeviceModel, w: ObjectiveWeights | None = None, seed: int = 0,
                  iterations: int | None = None) -> tuple[Mapping, RoutedCircuit]:
    """Greedy placement refined by seeded simulated annealing.

    Moves relocate one program qubit to another hardware qubit (exchanging
    with its occupant, if any). The best mapping seen is returned, so the
    result is never worse than the start (the better of greedy and
    identity placement).
    """
    w = w or ObjectiveWeights()
    c = prepare(c)
    _check_fit(c, dev)
    p, n = c.n_wires, dev.n_qubits
    r = _Router(dev, w)
    if p == 0:
        return Mapping(()), _routed(r, c, ())
    memo: dict[tuple[int, ...], float] = {}

    def f(a: tuple[int, ...]) -> float:
        v = memo.get(a)
        if v is None:
            v = _evaluate(r, c, a)[0].cost
            memo[a] = v
        return v

    starts = [greedy_placement(c, dev, w), tuple(range(p))]
    cur = max(starts, key=f)
    cur_val = f(cur)
    best, best_val = cur, cur_val
    rng = np.random.default_rng(seed)
    if iterations is None:
        iterations = 3000 + 150 * p
    if n > 1:
        # temperatures in units of log reliability
        t0, t1 = 0.3, 3e-5
        for it in range(iterations):
            temp = t0 * (t1 / t0) ** (it / max(1, iterations - 1))
            q = int(rng.integers(p))
            h = int(rng.integers(n - 1))
            if h >= cur[q]:
                h += 1
            cand = list(cur)
            if h in cand:
                other = cand.index(h)
                cand[other] = cur[q]
            cand[q] = h
            cand = tuple(cand)
            val = f(cand)
            if val >= cur_val or rng.random() < math.exp((val - cur_val) / temp):
                cur, cur_val = cand, val
                if val > best_val + 1e-12:
                    best, best_val = cand, val
    m = Mapping(best)
    return m, _routed(r, c, m.assign)


# ---------------------------------------------------------------------------
# coherence

@dataclass(frozen=True)
class CoherenceReport:
    passed: bool
    violators: tuple[tuple[int, float, float], ...]  # (hardware qubit, last end ns, T2 ns)

    def to_json(self) -> dict:
        return {"pass": self.passed,
                "violators": [{"qubit": q, "end_ns": e, "t2_ns": t} for q, e, t in self.violators]}


def coherence_check(s, m: Mapping | None, dev: DeviceModel) -> CoherenceReport:
    """Every hardware qubit must finish its last gate within its T2.

    Schedule wires are hardware qubits; pass ``m`` when they are program
    qubits instead and need translating.
    """
    ends = s.wire_end_times()
    bad = []
    for wire, t_end in sorted(ends.items()):
        h = m[wire] if m is not None else wire
        t2_ns = dev.t2_us[h] * 1000.0
        if t_end > t2_ns:
            bad.append((h, float(t_end), t2_ns))
    return CoherenceReport(not bad, tuple(bad))


def permutation_unitary(final_position: Sequence[int]) -> np.ndarray:
    """Qubit permutation moving the content of wire h to ``final_position[h]``."""
    n = len(final_position)
    dim = 2 ** n
    idx = np.arange(dim)
    bits = (idx[:, None] >> (n - 1 - np.arange(n))) & 1
    new = np.zeros(dim, dtype=np.int64)
    for h, dest in enumerate(final_position):
        new |= bits[:, h] << (n - 1 - dest)
    u = np.zeros((dim, dim), dtype=complex)
    u[new, idx] = 1.0
    return u


def routing_error(c: Circuit, rc: RoutedCircuit, max_qubits: int = 12) -> float:
    """Phase-blind distance between the routed circuit and the original.

    The original is placed by ``rc.initial`` and followed by the routing
    permutation; only hardware qubits the routing touches are simulated.
    """
    from .simulator import circuit_unitary, phase_distance

    c = prepare(c)
    active = sorted(set(rc.initial.assign) | {w for g in rc.circuit.gates for w in g.operands})
    if len(active) > max_qubits:
        raise TooLarge(f"{len(active)} active qubits exceeds the verification cap {max_qubits}")
    idx = {h: i for i, h in enumerate(active)}
    k = len(active)
    routed = Circuit.of(k, [g.relabel(idx) for g in rc.circuit.gates])
    placed = Circuit.of(k, [g.relabel({q: idx[h] for q, h in enumerate(rc.initial.assign)}) for g in c.gates])
    perm = permutation_unitary([idx[rc.final_position[h]] for h in active])
    return phase_distance(circuit_unitary(routed), perm @ circuit_unitary(placed))
