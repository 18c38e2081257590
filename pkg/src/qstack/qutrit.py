"""Qutrit gates and circuits: Toffoli via the |2> level, the log-depth
Generalized Toffoli tree, three-qutrit gate decomposition and cost tables.

Also hosts the qubit-only linear-depth multi-controlled X used as the
noisy-benchmark baseline.
"""
from __future__ import annotations

import ast
import json
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import schur

from .circuit import Circuit, Gate, GateKind, gate, toffoli_gates
from .errors import InvalidN, NotDecomposed, QStackError, UnsupportedAction

ACTIONS = ("X+1", "X-1", "X", "U")

_XP1 = np.roll(np.eye(3), 1, axis=0).astype(complex)   # |k> -> |k+1 mod 3>
_XM1 = _XP1.T.copy()
_X01 = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 1]], dtype=complex)


def action_matrix(action: str, matrix: np.ndarray | None = None) -> np.ndarray:
    """3x3 matrix for a target action. A 2x2 ``U`` acts on the {0,1} subspace."""
    if action == "X+1":
        return _XP1
    if action == "X-1":
        return _XM1
    if action == "X":
        return _X01
    if action == "U":
        if matrix is None:
            raise UnsupportedAction("action U needs a matrix")
        m = np.asarray(matrix, dtype=complex)
        if m.shape == (2, 2):
            full = np.eye(3, dtype=complex)
            full[:2, :2] = m
            m = full
        if m.shape != (3, 3) or not np.allclose(m.conj().T @ m, np.eye(3), atol=1e-10):
            raise UnsupportedAction("U must be a unitary 2x2 or 3x3 matrix")
        return m
    raise UnsupportedAction(f"unknown action {action!r}")


@dataclass(frozen=True)
class QutritControlledGate:
    """``action`` on ``target`` iff every control wire is in its activation state.

    With no controls this is a plain single-qutrit gate.
    """

    controls: tuple[tuple[int, int], ...]
    target: int
    action: str
    u: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        ctrls = tuple((int(w), int(s)) for w, s in self.controls)
        object.__setattr__(self, "controls", ctrls)
        wires = [w for w, _ in ctrls]
        if len(set(wires)) != len(wires) or self.target in wires:
            raise QStackError("controls must be distinct and exclude the target")
        if any(s not in (0, 1, 2) for _, s in ctrls):
            raise QStackError("activation state must be 0, 1 or 2")
        if self.action not in ACTIONS:
            raise UnsupportedAction(f"unknown action {self.action!r}")
        if self.u is not None:
            object.__setattr__(self, "u", action_matrix("U", self.u))
        elif self.action == "U":
            raise UnsupportedAction("action U needs a matrix")

    @property
    def wires(self) -> tuple[int, ...]:
        return tuple(w for w, _ in self.controls) + (self.target,)

    @property
    def target_matrix(self) -> np.ndarray:
        return action_matrix(self.action, self.u)

    def matrix(self) -> np.ndarray:
        """Unitary on ``wires`` (controls first, in order, then target)."""
        k = len(self.controls)
        dim = 3 ** (k + 1)
        out = np.eye(dim, dtype=complex)
        active = 0
        for _, s in self.controls:
            active = active * 3 + s
        blk = slice(active * 3, active * 3 + 3)
        out[blk, blk] = self.target_matrix
        return out

    def inverse(self) -> "QutritControlledGate":
        if self.action == "X+1":
            return QutritControlledGate(self.controls, self.target, "X-1")
        if self.action == "X-1":
            return QutritControlledGate(self.controls, self.target, "X+1")
        if self.action == "X":
            return self
        return QutritControlledGate(self.controls, self.target, "U", self.u.conj().T)

    def __repr__(self):
        cs = ",".join(f"q{w}@{s}" for w, s in self.controls)
        return f"{self.action}[{cs}->q{self.target}]"


def qgate(action: str, target: int, *controls: tuple[int, int], u=None) -> QutritControlledGate:
    return QutritControlledGate(tuple(controls), target, action, u)


@dataclass(frozen=True)
class QutritCircuit:
    n_wires: int
    gates: tuple[QutritControlledGate, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        for g in self.gates:
            if max(g.wires) >= self.n_wires or min(g.wires) < 0:
                raise QStackError(f"{g!r} outside {self.n_wires} wires")

    @property
    def dims(self) -> tuple[int, ...]:
        return (3,) * self.n_wires

    def __len__(self):
        return len(self.gates)

    def inverse(self) -> "QutritCircuit":
        return QutritCircuit(self.n_wires, [g.inverse() for g in reversed(self.gates)])


# ---------------------------------------------------------------------------
# text format

_LINE = re.compile(r"gate\s+(\S+)\s+controls=(\[.*?\])\s+target=(\d+)(?:\s+matrix=(.*))?$")


def dumps(c: QutritCircuit) -> str:
    lines = [f"qutrits {c.n_wires}"]
    for g in c.gates:
        ctrls = ",".join(f"({w},{s})" for w, s in g.controls)
        line = f"gate {g.action} controls=[{ctrls}] target={g.target}"
        if g.action == "U":
            line += " matrix=" + json.dumps([[[z.real, z.imag] for z in row] for row in g.u])
        lines.append(line)
    return "\n".join(lines) + "\n"


def loads(text: str) -> QutritCircuit:
    """Parse the line format written by :func:`dumps`.

    A ``qutrits n`` header is optional; without it the register is sized to
    the largest wire mentioned.
    """
    n = None
    gates = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("qutrits"):
            n = int(line.split()[1])
            continue
        m = _LINE.match(line)
        if m is None:
            raise QStackError(f"line {lineno}: cannot parse {raw!r}")
        ctrls = ast.literal_eval(m.group(2))
        if isinstance(ctrls, tuple):
            ctrls = [ctrls]
        u = None
        if m.group(4):
            u = np.array([[complex(re_, im) for re_, im in row] for row in json.loads(m.group(4))])
        gates.append(QutritControlledGate(tuple(tuple(c) for c in ctrls), int(m.group(3)), m.group(1), u))
    if n is None:
        n = 1 + max((max(g.wires) for g in gates), default=-1)
    return QutritCircuit(n, gates)


# ---------------------------------------------------------------------------
# constructions

def toffoli_via_qutrit() -> QutritCircuit:
    """q0, q1 controls, q2 target; q1 is lifted to |2> only when both controls are 1."""
    return QutritCircuit(3, [
        qgate("X+1", 1, (0, 1)),
        qgate("X", 2, (1, 2)),
        qgate("X-1", 1, (0, 1)),
    ])


def _tree(ctrls: Sequence[int]) -> tuple[int, int, list[QutritControlledGate]]:
    """(root wire, root activation state, compute gates) for a control subtree.

    After the compute gates the root sits in its activation state iff every
    control in ``ctrls`` was |1>. The root is the control between the two
    halves; halves get odd sizes where possible so that every internal node
    has two children (odd ``k`` gives a full binary tree).
    """
    k = len(ctrls)
    if k == 1:
        return ctrls[0], 1, []
    m = (k - 1) // 2
    if m % 2 == 0 and m > 1:
        m -= 1
    root = ctrls[m]
    gates: list[QutritControlledGate] = []
    children = []
    for part in (ctrls[:m], ctrls[m + 1:]):
        if part:
            w, s, gs = _tree(part)
            gates += gs
            children.append((w, s))
    gates.append(QutritControlledGate(tuple(children), root, "X+1"))
    return root, 2, gates


def _split_even(n: int) -> int:
    """Size of the left tree when an even control count is split into two odd trees."""
    half = n // 2
    return half if half % 2 else half - 1


def generalized_toffoli(n_controls: int) -> QutritCircuit:
    """Ancilla-free N-controlled X on N+1 qutrit wires (controls 0..N-1, target N).

    Odd N: one tree whose root, lifted to |2>, controls X on the target.
    Even N: two odd trees whose roots jointly control the target flip.
    """
    if n_controls < 2:
        raise InvalidN(f"need at least 2 controls, got {n_controls}")
    ctrls = list(range(n_controls))
    if n_controls % 2:
        root, state, compute = _tree(ctrls)
        flip_controls = ((root, state),)
    else:
        left = _split_even(n_controls)
        ra, sa, ga = _tree(ctrls[:left])
        rb, sb, gb = _tree(ctrls[left:])
        compute = ga + gb
        flip_controls = ((ra, sa), (rb, sb))
    flip = QutritControlledGate(flip_controls, n_controls, "X")
    uncompute = [g.inverse() for g in reversed(compute)]
    return QutritCircuit(n_controls + 1, compute + [flip] + uncompute)


# ---------------------------------------------------------------------------
# decomposition of doubly controlled gates

def _plane_rotation(alpha: float) -> np.ndarray:
    """Real rotation by ``alpha`` in the plane of (|0>-|1>)/sqrt2 and |2>."""
    r1 = np.array([1, -1, 0]) / math.sqrt(2)
    e2 = np.array([0, 0, 1.0])
    gen = np.outer(e2, r1) - np.outer(r1, e2)
    return (np.eye(3) + math.sin(alpha) * gen + (1 - math.cos(alpha)) * gen @ gen).astype(complex)


def _schur_basis(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    t, z = schur(m, output="complex")
    return np.diag(t), z


def _match_conjugator(w: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Unitary A with A m A^-1 = w, for normal matrices sharing a spectrum."""
    ew, zw = _schur_basis(w)
    em, zm = _schur_basis(m)
    perm = []
    free = list(range(3))
    for lam in em:
        j = min(free, key=lambda i: abs(ew[i] - lam))
        if abs(ew[j] - lam) > 1e-8:
            raise UnsupportedAction("spectra do not match")
        perm.append(j)
        free.remove(j)
    return zw[:, perm] @ zm.conj().T


def _su3_split(w: np.ndarray) -> tuple[float, np.ndarray]:
    """(phi, W') with W = e^{i phi} W' and W' having spectrum {1, e^{it}, e^{-it}}."""
    det = np.linalg.det(w)
    for lam in sorted(np.linalg.eigvals(w), key=lambda z: abs(np.angle(z))):
        if abs(lam ** 3 - det) < 1e-9:
            phi = float(np.angle(lam))
            return phi, w * np.exp(-1j * phi)
    raise UnsupportedAction("target action is outside the supported family")


def _controlled_general(ctrl: tuple[int, int], target: int, g: np.ndarray) -> list[QutritControlledGate]:
    """ctrl[g] as P, ctrl[diag], P^dagger."""
    if np.allclose(g, np.eye(3), atol=1e-12):
        return []
    evals, p = _schur_basis(g)
    diag = np.diag(evals)
    return [
        qgate("U", target, u=p.conj().T),
        qgate("U", target, ctrl, u=diag),
        qgate("U", target, u=p),
    ]


def decompose_ternary(g: QutritControlledGate) -> QutritCircuit:
    """Rewrite a doubly controlled gate as at most 6 two-qutrit and 6 single-qutrit gates.

    Identity used (time order left to right), with controls ``a`` and ``b``:
    ``b[C]  a[X01]  b[B]  a[X01]  b[A]``. The product is the identity unless
    both controls are active, in which case it is ``A X01 B X01 B^-1 A^-1``.
    ``B`` is a plane rotation making the commutator ``X01 B X01 B^-1``
    isospectral with the special-unitary part of the action, and ``A`` maps
    one onto the other. A leftover global phase becomes a controlled phase
    between the two controls.

    Gates with fewer than two controls are returned unchanged.
    """
    n = 1 + max(g.wires)
    if len(g.controls) < 2:
        return QutritCircuit(n, [g])
    if len(g.controls) > 2:
        raise UnsupportedAction("only doubly controlled gates are decomposed")
    (a, sa), (b, sb) = g.controls
    t = g.target
    phi, w = _su3_split(g.target_matrix)
    evals = np.linalg.eigvals(w)
    theta = max(abs(float(np.angle(e))) for e in evals)
    bmat = _plane_rotation(theta / 2)
    mmat = _X01 @ bmat @ _X01 @ bmat.conj().T
    amat = _match_conjugator(w, mmat)
    cmat = (amat @ bmat).conj().T
    x01 = qgate("X", t, (a, sa))
    out: list[QutritControlledGate] = []
    out += _controlled_general((b, sb), t, cmat)
    out.append(x01)
    out += _controlled_general((b, sb), t, bmat)
    out.append(x01)
    out += _controlled_general((b, sb), t, amat)
    if abs(phi) > 1e-12:
        ph = np.eye(3, dtype=complex)
        ph[sb, sb] = np.exp(1j * phi)
        out.append(qgate("U", b, (a, sa), u=ph))
    return QutritCircuit(n, out)


def decompose(c: QutritCircuit) -> QutritCircuit:
    """Decompose every doubly controlled gate of ``c``."""
    out: list[QutritControlledGate] = []
    for g in c.gates:
        if len(g.controls) > 2:
            raise UnsupportedAction(f"{g!r} has more than two controls")
        out += decompose_ternary(g).gates if len(g.controls) == 2 else [g]
    return QutritCircuit(c.n_wires, out)


# ---------------------------------------------------------------------------
# costs

@dataclass(frozen=True)
class CostReport:
    n_controls: int
    depth: int
    two_qudit_count: int
    single_qudit_count: int


def greedy_depth(wire_sets: Iterable[Sequence[int]]) -> int:
    """Layer count when each gate goes into the earliest layer after its wires free up."""
    free: dict[int, int] = {}
    depth = 0
    for ws in wire_sets:
        layer = max((free.get(w, 0) for w in ws), default=0)
        for w in ws:
            free[w] = layer + 1
        depth = max(depth, layer + 1)
    return depth


def cost_report(c: QutritCircuit | Circuit, n_controls: int | None = None) -> CostReport:
    wire_sets = []
    two = single = 0
    for g in c.gates:
        ws = g.wires if isinstance(g, QutritControlledGate) else g.operands
        if isinstance(g, Gate) and g.kind is GateKind.MEASURE:
            continue
        if len(ws) > 2:
            raise NotDecomposed(f"{g!r} acts on {len(ws)} wires")
        two += len(ws) == 2
        single += len(ws) == 1
        wire_sets.append(ws)
    if n_controls is None:
        n_controls = c.n_wires - 1
    return CostReport(n_controls, greedy_depth(wire_sets), two, single)


def scaling_table(n_values: Iterable[int]) -> list[CostReport]:
    return [cost_report(decompose(generalized_toffoli(n)), n) for n in n_values]


def r_squared(x: np.ndarray, y: np.ndarray) -> float:
    """Coefficient of determination of the least-squares line y ~ a + b x."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    coef = np.polyfit(x, y, 1)
    resid = y - np.polyval(coef, x)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    return 1.0 - float((resid ** 2).sum()) / ss_tot if ss_tot > 0 else 1.0


# ---------------------------------------------------------------------------
# qubit baseline

def _vchain(ctrls: Sequence[int], dirty: Sequence[int], t: int) -> list[tuple[int, int, int] | tuple[int, int]]:
    """Multi-controlled X from Toffolis using m-2 borrowed (dirty) wires; 4(m-2) Toffolis."""
    m = len(ctrls)
    if m == 1:
        return [(ctrls[0], t)]
    if m == 2:
        return [(ctrls[0], ctrls[1], t)]
    if len(dirty) < m - 2:
        raise QStackError(f"{m} controls need {m - 2} borrowed wires, got {len(dirty)}")
    a = list(dirty[: m - 2])
    top = (ctrls[m - 1], a[m - 3], t)
    up = [(ctrls[i + 2], a[i], a[i + 1]) for i in range(m - 3)]
    bottom = (ctrls[0], ctrls[1], a[0])
    half = list(reversed(up)) + [bottom] + up
    return [top] + half + [top] + half


def qubit_mcx_gates(n_controls: int) -> list[tuple[int, ...]]:
    """Toffoli/CNOT list for an N-controlled X on N+2 qubits (last is a borrowed ancilla).

    The controls are split in two halves; each half-gate is a V-chain that
    borrows the wires of the other half, and the pair is applied twice so
    the ancilla returns to its input value.
    """
    if n_controls < 1:
        raise InvalidN("need at least one control")
    t, anc = n_controls, n_controls + 1
    ctrls = list(range(n_controls))
    if n_controls <= 2:
        return _vchain(ctrls, [], t)
    m1 = (n_controls + 1) // 2
    first, second = ctrls[:m1], ctrls[m1:]
    p1 = _vchain(first, second + [t], anc)
    p2 = _vchain(second + [anc], first, t)
    return p1 + p2 + p1 + p2


def qubit_baseline_toffoli(n_controls: int, decompose_toffolis: bool = True) -> Circuit:
    """Qubit-only linear-depth Generalized Toffoli with one borrowed ancilla (wire N+1)."""
    gates: list[Gate] = []
    for op in qubit_mcx_gates(n_controls):
        if len(op) == 2:
            gates.append(gate("cx", *op))
        elif decompose_toffolis:
            gates += toffoli_gates(*op)
        else:
            gates.append(gate("ccx", *op))
    return Circuit.of(n_controls + 2, gates)
