"""Commutativity detection, diagonal-block aggregation and commutativity-aware list scheduling."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence, Union

import numpy as np

from .circuit import (Circuit, Gate, GateDependencyGraph, GateKind, build_gdg, embed_unitary,
                      gate, gate_unitary, is_diagonal_gate)
from .errors import TooLargeForMatrixCheck

MATRIX_CHECK_MAX_WIRES = 4
AGGREGATE_MAX_WIRES = 3
COMMUTE_TOL = 1e-10


@dataclass(frozen=True)
class CommutingBlock:
    """A run of gates treated as one unit."""

    gates: tuple[Gate, ...]

    @property
    def gate_ids(self) -> tuple[int, ...]:
        return tuple(g.id for g in self.gates)

    @property
    def wires(self) -> frozenset[int]:
        return frozenset(w for g in self.gates for w in g.operands)

    @property
    def is_diagonal(self) -> bool:
        ws = sorted(self.wires)
        if len(ws) > MATRIX_CHECK_MAX_WIRES:
            return all(_is_diag(g) for g in self.gates)
        u = _local_unitary(self.gates, ws)
        return _offdiag(u) < COMMUTE_TOL

    def as_gate(self, gate_id: int = 0) -> Gate:
        return Gate(GateKind.AGGREGATE, tuple(sorted(self.wires)), gate_id, None, self.gates)


Op = Union[Gate, CommutingBlock]


def _gates_of(x: Op) -> tuple[Gate, ...]:
    return x.gates if isinstance(x, CommutingBlock) else (x,)


def _wires_of(x: Op) -> frozenset[int]:
    return x.wires if isinstance(x, CommutingBlock) else frozenset(x.operands)


def _is_diag(g: Gate) -> bool:
    if g.kind in (GateKind.Z, GateKind.RZ, GateKind.CZ):
        return True
    if g.kind is GateKind.AGGREGATE:
        return all(_is_diag(b) for b in g.body) or (len(g.operands) <= MATRIX_CHECK_MAX_WIRES
                                                    and is_diagonal_gate(g))
    return False


def _op_diagonal(x: Op) -> bool:
    if isinstance(x, CommutingBlock):
        return x.is_diagonal
    return _is_diag(x)


def _offdiag(u: np.ndarray) -> float:
    return float(np.max(np.abs(u - np.diag(np.diag(u))))) if u.size else 0.0


def _local_unitary(gates: Iterable[Gate], frame: Sequence[int]) -> np.ndarray:
    frame = list(frame)
    dim = 2 ** len(frame)
    u = np.eye(dim, dtype=complex)
    for g in gates:
        u = embed_unitary(gate_unitary(g), g.operands, frame, (2,) * len(frame)) @ u
    return u


def _symbolic(a: Gate, b: Gate) -> bool | None:
    """Cheap sufficient rules; None when none applies."""
    if a.kind is GateKind.CNOT:
        a, b = b, a
    if b.kind is not GateKind.CNOT or len(a.operands) != 1:
        return None
    ctrl, tgt = b.operands
    (w,) = a.operands
    if w == ctrl and a.kind in (GateKind.Z, GateKind.RZ):
        return True
    if w == tgt and a.kind in (GateKind.X, GateKind.RX):
        return True
    return None


def commutes(a: Op, b: Op) -> bool:
    """True iff ``a`` and ``b`` commute.

    Symbolic rules fire first (disjoint wires, diagonal pairs, Z/RZ on a
    CNOT control, X/RX on a CNOT target, identical operations); otherwise the
    commutator is checked numerically on the joint wires (at most 4).
    """
    wa, wb = _wires_of(a), _wires_of(b)
    if not wa & wb:
        return True
    ga, gb = _gates_of(a), _gates_of(b)
    if any(g.kind is GateKind.MEASURE for g in ga + gb):
        return False
    if [g.signature() for g in ga] == [g.signature() for g in gb]:
        return True
    if _op_diagonal(a) and _op_diagonal(b):
        return True
    if len(ga) == 1 and len(gb) == 1:
        rule = _symbolic(ga[0], gb[0])
        if rule is not None:
            return rule
    joint = sorted(wa | wb)
    if len(joint) > MATRIX_CHECK_MAX_WIRES:
        raise TooLargeForMatrixCheck(f"joint support of {len(joint)} wires")
    return _matrix_commutes(tuple(g.signature() for g in ga), tuple(g.signature() for g in gb),
                            ga, gb, tuple(joint))


_MEMO: dict = {}


def _matrix_commutes(sa, sb, ga, gb, joint) -> bool:
    key = (sa, sb, joint)
    hit = _MEMO.get(key)
    if hit is None:
        ua = _local_unitary(ga, joint)
        ub = _local_unitary(gb, joint)
        hit = bool(np.max(np.abs(ua @ ub - ub @ ua)) < COMMUTE_TOL)
        if len(_MEMO) < 200_000:
            _MEMO[key] = hit
    return hit


def commutation_oracle(a: Gate, b: Gate) -> bool:
    """:func:`commutes` lifted to GDG use; falls back to 'not commuting' beyond the matrix cap."""
    try:
        return commutes(a, b)
    except TooLargeForMatrixCheck:
        return False


# ---------------------------------------------------------------------------
# aggregation

def aggregate_diagonal_blocks(c: Circuit, max_wires: int = 2, window: int = 256) -> Circuit:
    """Replace diagonal runs (length >= 2, on at most ``max_wires`` wires) by AGGREGATE gates.

    Scanning left to right, a run grows from its first gate by absorbing
    later gates that touch its wires, provided they commute with every
    gate skipped over on a shared wire. The longest prefix of the run whose
    product is diagonal (and not a multiple of the identity) becomes one
    AGGREGATE, placed where the run began.
    """
    if not 1 <= max_wires <= AGGREGATE_MAX_WIRES:
        raise ValueError(f"max_wires must be in 1..{AGGREGATE_MAX_WIRES}")
    gates = list(c.gates)
    n = len(gates)
    consumed = [False] * n
    out: list[Gate] = []
    for i in range(n):
        if consumed[i]:
            continue
        g0 = gates[i]
        if g0.kind in (GateKind.MEASURE, GateKind.AGGREGATE) or len(g0.operands) > max_wires:
            out.append(g0)
            consumed[i] = True
            continue
        run = _grow_run(gates, consumed, i, max_wires, min(n, i + window))
        k = _longest_diagonal_prefix([gates[j] for j in run])
        if k >= 2:
            block = CommutingBlock(tuple(gates[j] for j in run[:k]))
            out.append(block.as_gate())
            for j in run[:k]:
                consumed[j] = True
        else:
            out.append(g0)
            consumed[i] = True
    return Circuit.of(c.n_wires, out, c.wire_level)


def _grow_run(gates, consumed, i, max_wires, stop) -> list[int]:
    wires = set(gates[i].operands)
    members = {i}
    changed = True
    while changed:
        changed = False
        for j in range(i + 1, stop):
            if j in members or consumed[j]:
                continue
            g = gates[j]
            ws = set(g.operands)
            if not ws & wires or g.kind in (GateKind.MEASURE, GateKind.AGGREGATE):
                continue
            if len(ws | wires) > max_wires:
                continue
            skipped = [gates[k] for k in range(i + 1, j)
                       if k not in members and not consumed[k] and set(gates[k].operands) & ws]
            if all(commutation_oracle(s, g) for s in skipped):
                members.add(j)
                wires |= ws
                changed = True
    return sorted(members)


def _longest_diagonal_prefix(run: list[Gate]) -> int:
    frame = sorted({w for g in run for w in g.operands})
    u = np.eye(2 ** len(frame), dtype=complex)
    best = 0
    for k, g in enumerate(run, 1):
        u = embed_unitary(gate_unitary(g), g.operands, frame, (2,) * len(frame)) @ u
        d = np.diag(u)
        # a product proportional to the identity is a cancellation, not a block
        if _offdiag(u) < COMMUTE_TOL and np.max(np.abs(d - d[0])) > COMMUTE_TOL:
            best = k
    return best


def aggregates(c: Circuit) -> list[Gate]:
    return [g for g in c.gates if g.kind is GateKind.AGGREGATE]


# ---------------------------------------------------------------------------
# scheduling

def duration_fn(durations) -> Callable[[Gate], float]:
    """Normalise a DeviceModel, mapping or callable into ``gate -> ns``.

    Mappings are looked up by gate id, then gate kind name ("cx", "rz", ...),
    then gate class ("1q", "2q", "measure"); AGGREGATE gates missing from the
    mapping cost the sum of their bodies.
    """
    if callable(durations) and not isinstance(durations, Mapping):
        return durations
    if hasattr(durations, "duration"):
        return durations.duration
    table = dict(durations)

    def fn(g: Gate) -> float:
        for key in (("id", g.id), g.kind.value, g.kind.name):
            if key in table:
                return float(table[key])
        if g.kind is GateKind.AGGREGATE:
            return sum(fn(b) for b in g.body)
        cls = "measure" if g.kind is GateKind.MEASURE else ("1q" if len(g.operands) == 1 else "2q")
        return float(table[cls])

    return fn


@dataclass(frozen=True)
class Schedule:
    start: Mapping[int, float]
    end: Mapping[int, float]
    wires: Mapping[int, tuple[int, ...]]

    @property
    def makespan(self) -> float:
        return max(self.end.values(), default=0.0)

    def order(self) -> list[int]:
        return sorted(self.start, key=lambda i: (self.start[i], self.end[i], i))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["gate_id", "start_ns", "end_ns", "wires"])
        for i in self.order():
            w.writerow([i, f"{self.start[i]:g}", f"{self.end[i]:g}", " ".join(map(str, self.wires[i]))])
        return buf.getvalue()

    def wire_end_times(self) -> dict[int, float]:
        out: dict[int, float] = {}
        for i, ws in self.wires.items():
            for w in ws:
                out[w] = max(out.get(w, 0.0), self.end[i])
        return out

    def check(self, gdg: GateDependencyGraph, c: Circuit | None = None, tol: float = 1e-9) -> None:
        """Assert GDG edges are respected; with ``c`` given, also that any two
        gates overlapping in time on a shared wire commute."""
        for a, b in gdg.edges:
            if self.end[a] > self.start[b] + tol:
                raise AssertionError(f"edge {a}->{b} violated")
        if c is None:
            return
        by_id = {g.id: g for g in c.gates}
        ids = sorted(self.start)
        for i, a in enumerate(ids):
            for b in ids[i + 1:]:
                if not set(self.wires[a]) & set(self.wires[b]):
                    continue
                overlap = min(self.end[a], self.end[b]) - max(self.start[a], self.start[b])
                if overlap > tol and not commutation_oracle(by_id[a], by_id[b]):
                    raise AssertionError(f"non-commuting gates {a} and {b} overlap")


def asap_schedule(c: Circuit, durations) -> Schedule:
    """Source-order ASAP with plain wire dependences (no commutativity)."""
    dur = duration_fn(durations)
    free: dict[int, float] = {}
    start, end, wires = {}, {}, {}
    for g in c.gates:
        t = max((free.get(w, 0.0) for w in g.operands), default=0.0)
        start[g.id], end[g.id], wires[g.id] = t, t + dur(g), g.operands
        for w in g.operands:
            free[w] = end[g.id]
    return Schedule(start, end, wires)


def critical_paths(c: Circuit, gdg: GateDependencyGraph, dur: Callable[[Gate], float]) -> dict[int, float]:
    """Longest duration-weighted path from each gate to any sink, inclusive."""
    by_id = {g.id: g for g in c.gates}
    succ: dict[int, list[int]] = {n: [] for n in gdg.nodes}
    for a, b in gdg.edges:
        succ[a].append(b)
    out: dict[int, float] = {}
    for n in reversed(gdg.linear_extension()):
        out[n] = dur(by_id[n]) + max((out[s] for s in succ[n]), default=0.0)
    return out


def cls_schedule(c: Circuit, gdg: GateDependencyGraph | None = None, durations=None,
                 exclusive_wires: bool = False) -> Schedule:
    """Commutativity-aware list schedule.

    Among ready gates (all GDG predecessors placed) the one with the
    earliest feasible start goes next; ties go to the longer critical path,
    then the lower id. By default only GDG edges constrain start times, so
    commuting operations on a shared wire may run concurrently. With
    ``exclusive_wires`` each wire also hosts one gate at a time; that greedy
    result falls back to source-order ASAP whenever ASAP is shorter, so it
    is never worse.
    """
    if gdg is None:
        gdg = build_gdg(c, commutation_oracle)
    if durations is None:
        durations = {"1q": 50.0, "2q": 300.0, "measure": 1000.0, "swap": 900.0}
    dur = duration_fn(durations)
    by_id = {g.id: g for g in c.gates}
    preds: dict[int, list[int]] = {n: [] for n in gdg.nodes}
    succ: dict[int, list[int]] = {n: [] for n in gdg.nodes}
    for a, b in gdg.edges:
        preds[b].append(a)
        succ[a].append(b)
    cp = critical_paths(c, gdg, dur)
    missing = {n: len(preds[n]) for n in gdg.nodes}
    ready = {n for n in gdg.nodes if missing[n] == 0}
    free: dict[int, float] = {}
    start, end, wires = {}, {}, {}

    def earliest(n):
        t = max((end[p] for p in preds[n]), default=0.0)
        if exclusive_wires:
            t = max([t] + [free.get(w, 0.0) for w in by_id[n].operands])
        return t

    while ready:
        n = min(ready, key=lambda n: (earliest(n), -cp[n], n))
        t = earliest(n)
        g = by_id[n]
        start[n], end[n], wires[n] = t, t + dur(g), g.operands
        for w in g.operands:
            free[w] = max(free.get(w, 0.0), end[n])
        ready.remove(n)
        for s in succ[n]:
            missing[s] -= 1
            if missing[s] == 0:
                ready.add(s)
    sched = Schedule(start, end, wires)
    if exclusive_wires:
        naive = asap_schedule(c, dur)
        if naive.makespan < sched.makespan:
            return naive
    return sched


def scheduled_circuit(c: Circuit, s: Schedule) -> Circuit:
    by_id = {g.id: g for g in c.gates}
    return Circuit(c.n_wires, tuple(by_id[i] for i in s.order()), c.wire_level)


# ---------------------------------------------------------------------------
# fixtures

QAOA_GAMMA = 5.67
QAOA_BETA = 1.26


def qaoa_triangle(gamma: float = QAOA_GAMMA, beta: float = QAOA_BETA) -> Circuit:
    """MaxCut QAOA (p=1) on a triangle: H layer, three ZZ blocks, RX mixers. 15 gates."""
    gs = [gate("h", q) for q in range(3)]
    for a, b in ((0, 1), (1, 2), (0, 2)):
        gs += [gate("cx", a, b), gate("rz", b, theta=gamma), gate("cx", a, b)]
    gs += [gate("rx", q, theta=beta) for q in range(3)]
    return Circuit.of(3, gs)


QAOA_TRIANGLE_QASM = f"""OPENQASM 2.0;
include "qelib1.inc";
qreg q[3];
h q[0];
h q[1];
h q[2];
cx q[0],q[1];
rz({QAOA_GAMMA}) q[1];
cx q[0],q[1];
cx q[1],q[2];
rz({QAOA_GAMMA}) q[2];
cx q[1],q[2];
cx q[0],q[2];
rz({QAOA_GAMMA}) q[2];
cx q[0],q[2];
rx({QAOA_BETA}) q[0];
rx({QAOA_BETA}) q[1];
rx({QAOA_BETA}) q[2];
"""
