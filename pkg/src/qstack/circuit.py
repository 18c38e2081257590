"""Circuit IR: gates, circuits, a QASM-subset parser/emitter and the gate dependency graph.

Wire ordering convention for every matrix in the package is big-endian over a
gate's operand list: the first operand is the most significant tensor factor.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Sequence

import networkx as nx
import numpy as np

from .errors import (
    ArityMismatch,
    InvalidCircuit,
    QasmSyntaxError,
    UndeclaredWire,
    UndefinedAtDimension,
    UnknownGate,
    UnsupportedGate,
)


class GateKind(Enum):
    X = "x"
    Y = "y"
    Z = "z"
    H = "h"
    RX = "rx"
    RY = "ry"
    RZ = "rz"
    CNOT = "cx"
    SWAP = "swap"
    CZ = "cz"
    TOFFOLI = "ccx"
    GENERALIZED_TOFFOLI = "mcx"
    MEASURE = "measure"
    AGGREGATE = "aggregate"
    # qutrit-only increment/decrement, no QASM form
    X_PLUS1 = "x+1"
    X_MINUS1 = "x-1"

    @property
    def arity(self) -> int | None:
        """Fixed operand count, or None for variable-arity kinds."""
        return _ARITY.get(self)

    @property
    def parametric(self) -> bool:
        return self in (GateKind.RX, GateKind.RY, GateKind.RZ)


_ARITY = {
    GateKind.X: 1, GateKind.Y: 1, GateKind.Z: 1, GateKind.H: 1,
    GateKind.RX: 1, GateKind.RY: 1, GateKind.RZ: 1,
    GateKind.CNOT: 2, GateKind.SWAP: 2, GateKind.CZ: 2,
    GateKind.TOFFOLI: 3, GateKind.MEASURE: 1,
    GateKind.X_PLUS1: 1, GateKind.X_MINUS1: 1,
}

DIAGONAL_KINDS = frozenset({GateKind.Z, GateKind.RZ, GateKind.CZ})


@dataclass(frozen=True)
class Gate:
    """One gate application.

    ``theta`` is set only for rotations. ``body`` is set only for AGGREGATE
    gates and holds the aggregated gates in application order; the
    aggregate's own id doubles as its subcircuit id.
    """

    kind: GateKind
    operands: tuple[int, ...]
    id: int = 0
    theta: float | None = None
    body: tuple["Gate", ...] = ()

    def __post_init__(self):
        ops = tuple(int(o) for o in self.operands)
        object.__setattr__(self, "operands", ops)
        if len(set(ops)) != len(ops):
            raise InvalidCircuit(f"repeated operand in {self.kind.name}{ops}")
        if any(o < 0 for o in ops):
            raise InvalidCircuit(f"negative wire index in {self.kind.name}{ops}")
        arity = self.kind.arity
        if arity is not None and len(ops) != arity:
            raise ArityMismatch(f"{self.kind.name} takes {arity} operands, got {len(ops)}")
        if self.kind is GateKind.GENERALIZED_TOFFOLI and len(ops) < 2:
            raise ArityMismatch("GENERALIZED_TOFFOLI needs at least one control")
        if self.kind.parametric:
            if self.theta is None or not math.isfinite(self.theta):
                raise InvalidCircuit(f"{self.kind.name} needs a finite angle")
            object.__setattr__(self, "theta", float(self.theta))
        elif self.theta is not None:
            raise InvalidCircuit(f"{self.kind.name} takes no angle")
        if self.kind is GateKind.AGGREGATE:
            if not self.body:
                raise InvalidCircuit("AGGREGATE gate with empty body")
            wires = set()
            for g in self.body:
                wires.update(g.operands)
            if wires != set(ops):
                raise InvalidCircuit("AGGREGATE operands must equal the wires of its body")
        elif self.body:
            raise InvalidCircuit(f"{self.kind.name} cannot carry a body")

    @property
    def n_controls(self) -> int:
        if self.kind is GateKind.GENERALIZED_TOFFOLI:
            return len(self.operands) - 1
        return {GateKind.CNOT: 1, GateKind.CZ: 1, GateKind.TOFFOLI: 2}.get(self.kind, 0)

    def relabel(self, wire_map: Sequence[int] | dict[int, int], new_id: int | None = None) -> "Gate":
        """Same gate on ``wire_map[w]`` for each operand ``w``."""
        body = tuple(b.relabel(wire_map) for b in self.body)
        return Gate(self.kind, tuple(wire_map[o] for o in self.operands),
                    self.id if new_id is None else new_id, self.theta, body)

    def with_id(self, new_id: int) -> "Gate":
        return Gate(self.kind, self.operands, new_id, self.theta, self.body)

    def signature(self) -> tuple:
        """Structure of the gate with ids stripped (used for equality up to numbering)."""
        return (self.kind, self.operands, self.theta, tuple(b.signature() for b in self.body))

    def __repr__(self):
        arg = f"({self.theta:.6g})" if self.theta is not None else ""
        return f"{self.kind.name}{arg}{list(self.operands)}#{self.id}"


@dataclass(frozen=True)
class Circuit:
    """Ordered gate list over ``n_wires`` wires of dimension ``wire_level[w]`` (2 or 3)."""

    n_wires: int
    gates: tuple[Gate, ...] = ()
    wire_level: tuple[int, ...] = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        if self.wire_level is None:
            object.__setattr__(self, "wire_level", (2,) * self.n_wires)
        else:
            object.__setattr__(self, "wire_level", tuple(int(d) for d in self.wire_level))
        if len(self.wire_level) != self.n_wires:
            raise InvalidCircuit("wire_level length must equal n_wires")
        if any(d not in (2, 3) for d in self.wire_level):
            raise InvalidCircuit("wire dimensions must be 2 or 3")
        ids = set()
        measured: set[int] = set()
        for g in self.gates:
            if g.id in ids:
                raise InvalidCircuit(f"duplicate gate id {g.id}")
            ids.add(g.id)
            for w in g.operands:
                if w >= self.n_wires:
                    raise UndeclaredWire(f"wire {w} out of range for {self.n_wires} wires")
                if w in measured:
                    raise InvalidCircuit(f"gate {g!r} follows a measurement on wire {w}")
            if g.kind is GateKind.MEASURE:
                measured.add(g.operands[0])

    @classmethod
    def of(cls, n_wires: int, gates: Iterable[Gate], wire_level: Sequence[int] | None = None) -> "Circuit":
        """Build a circuit, renumbering top-level gate ids to their positions."""
        return cls(n_wires, tuple(g.with_id(i) for i, g in enumerate(gates)),
                   None if wire_level is None else tuple(wire_level))

    def __len__(self):
        return len(self.gates)

    def gate(self, gate_id: int) -> Gate:
        for g in self.gates:
            if g.id == gate_id:
                return g
        raise KeyError(gate_id)

    def signature(self) -> tuple:
        return (self.n_wires, self.wire_level, tuple(g.signature() for g in self.gates))

    def structurally_equal(self, other: "Circuit") -> bool:
        return self.signature() == other.signature()


def gate(name: str | GateKind, *operands: int, theta: float | None = None) -> Gate:
    """Shorthand constructor: ``gate("cx", 0, 1)`` or ``gate("rz", 0, theta=0.3)``."""
    kind = name if isinstance(name, GateKind) else _KIND_BY_NAME.get(name.lower())
    if kind is None:
        raise UnknownGate(name)
    return Gate(kind, tuple(operands), 0, theta)


def circuit(n_wires: int, gates: Iterable[Gate], wire_level: Sequence[int] | None = None) -> Circuit:
    return Circuit.of(n_wires, gates, wire_level)


_KIND_BY_NAME = {k.value: k for k in GateKind}
_KIND_BY_NAME.update({"cnot": GateKind.CNOT, "toffoli": GateKind.TOFFOLI})


# ---------------------------------------------------------------------------
# unitaries

_SQ2 = 1 / math.sqrt(2)
_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
_Z = np.array([[1, 0], [0, -1]], dtype=complex)
_H = np.array([[_SQ2, _SQ2], [_SQ2, -_SQ2]], dtype=complex)
_XP1 = np.array([[0, 0, 1], [1, 0, 0], [0, 1, 0]], dtype=complex)
_X01 = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 1]], dtype=complex)


def _rot(pauli: np.ndarray, theta: float) -> np.ndarray:
    return math.cos(theta / 2) * np.eye(2) - 1j * math.sin(theta / 2) * pauli


def _controlled_x(n_controls: int) -> np.ndarray:
    dim = 2 ** (n_controls + 1)
    u = np.eye(dim, dtype=complex)
    u[[dim - 2, dim - 1]] = u[[dim - 1, dim - 2]]
    return u


def gate_unitary(g: Gate, d: int = 2) -> np.ndarray:
    """Unitary of ``g`` acting on its operands, each of dimension ``d``."""
    k = g.kind
    if k is GateKind.MEASURE:
        raise UndefinedAtDimension("MEASURE is not unitary")
    if k is GateKind.AGGREGATE:
        return _aggregate_unitary(g, d)
    if d == 3:
        if k is GateKind.X:
            return _X01.copy()
        if k is GateKind.X_PLUS1:
            return _XP1.copy()
        if k is GateKind.X_MINUS1:
            return _XP1.T.copy()
        raise UndefinedAtDimension(f"{k.name} has no qutrit matrix")
    if d != 2:
        raise UndefinedAtDimension(f"dimension {d} unsupported")
    if k is GateKind.X:
        return _X.copy()
    if k is GateKind.Y:
        return _Y.copy()
    if k is GateKind.Z:
        return _Z.copy()
    if k is GateKind.H:
        return _H.copy()
    if k is GateKind.RX:
        return _rot(_X, g.theta)
    if k is GateKind.RY:
        return _rot(_Y, g.theta)
    if k is GateKind.RZ:
        return np.diag([np.exp(-0.5j * g.theta), np.exp(0.5j * g.theta)])
    if k is GateKind.CNOT:
        return _controlled_x(1)
    if k is GateKind.CZ:
        return np.diag([1, 1, 1, -1]).astype(complex)
    if k is GateKind.SWAP:
        return np.eye(4, dtype=complex)[[0, 2, 1, 3]]
    if k is GateKind.TOFFOLI:
        return _controlled_x(2)
    if k is GateKind.GENERALIZED_TOFFOLI:
        return _controlled_x(g.n_controls)
    raise UndefinedAtDimension(f"{k.name} has no qubit matrix")


def embed_unitary(matrix: np.ndarray, wires: Sequence[int], frame: Sequence[int],
                  dims: Sequence[int] | int = 2) -> np.ndarray:
    """Lift ``matrix`` acting on ``wires`` to the full space of ``frame`` wires."""
    frame = list(frame)
    if isinstance(dims, int):
        dims = [dims] * len(frame)
    dims = list(dims)
    pos = [frame.index(w) for w in wires]
    total = int(np.prod(dims))
    ident = np.eye(total, dtype=complex).reshape(dims + [total])
    k = len(pos)
    local = [dims[p] for p in pos]
    m = matrix.reshape(local + local)
    out = np.tensordot(m, ident, axes=(list(range(k, 2 * k)), pos))
    out = np.moveaxis(out, list(range(k)), pos)
    return out.reshape(total, total)


def _aggregate_unitary(g: Gate, d: int) -> np.ndarray:
    frame = list(g.operands)
    u = np.eye(d ** len(frame), dtype=complex)
    for b in g.body:
        u = embed_unitary(gate_unitary(b, d), b.operands, frame, d) @ u
    return u


def is_diagonal_gate(g: Gate, tol: float = 1e-10) -> bool:
    """True if the gate's unitary is diagonal in the computational basis."""
    if g.kind in DIAGONAL_KINDS:
        return True
    if g.kind is GateKind.AGGREGATE:
        u = gate_unitary(g)
        return bool(np.max(np.abs(u - np.diag(np.diag(u)))) < tol)
    return False


# ---------------------------------------------------------------------------
# QASM subset

_TOKEN_RE = re.compile(r"\s*(?:(\d+\.\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?|\d+(?:[eE][-+]?\d+)?)|(pi)|([-+*/()]))")


class _ExprParser:
    """Recursive-descent evaluator for angle expressions: literals, pi, + - * / and parentheses."""

    def __init__(self, text: str, lineno: int, col0: int):
        self.text, self.lineno, self.col0 = text, lineno, col0
        self.tokens: list[tuple[str, str, int]] = []
        pos = 0
        while pos < len(text):
            if text[pos:].strip() == "":
                break
            m = _TOKEN_RE.match(text, pos)
            if not m:
                raise QasmSyntaxError(f"bad token in expression {text!r}", lineno, col0 + pos)
            if m.group(1):
                self.tokens.append(("num", m.group(1), m.start(1)))
            elif m.group(2):
                self.tokens.append(("pi", "pi", m.start(2)))
            else:
                self.tokens.append(("op", m.group(3), m.start(3)))
            pos = m.end()
        self.i = 0

    def _err(self, msg):
        col = self.tokens[self.i][2] if self.i < len(self.tokens) else len(self.text)
        return QasmSyntaxError(msg, self.lineno, self.col0 + col)

    def _peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def parse(self) -> float:
        if not self.tokens:
            raise self._err("empty expression")
        v = self._sum()
        if self._peek() is not None:
            raise self._err("unexpected token")
        return v

    def _sum(self):
        v = self._prod()
        while (t := self._peek()) and t[1] in "+-" and t[0] == "op":
            self.i += 1
            r = self._prod()
            v = v + r if t[1] == "+" else v - r
        return v

    def _prod(self):
        v = self._unary()
        while (t := self._peek()) and t[1] in "*/" and t[0] == "op":
            self.i += 1
            r = self._unary()
            if t[1] == "/":
                if r == 0:
                    raise self._err("division by zero")
                v = v / r
            else:
                v = v * r
        return v

    def _unary(self):
        t = self._peek()
        if t and t[0] == "op" and t[1] in "+-":
            self.i += 1
            v = self._unary()
            return -v if t[1] == "-" else v
        return self._atom()

    def _atom(self):
        t = self._peek()
        if t is None:
            raise self._err("expression ends early")
        self.i += 1
        if t[0] == "num":
            return float(t[1])
        if t[0] == "pi":
            return math.pi
        if t[1] == "(":
            v = self._sum()
            if (c := self._peek()) is None or c[1] != ")":
                raise self._err("missing ')'")
            self.i += 1
            return v
        self.i -= 1
        raise self._err(f"unexpected {t[1]!r}")


_STMT_GATE = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)\s*(?:\((.*)\))?\s*(.*)$", re.S)
_WIRE_REF = re.compile(r"\s*([A-Za-z_][A-Za-z0-9_]*)\s*\[\s*(\d+)\s*\]\s*$")

_QASM_NAMES = {
    "x": GateKind.X, "y": GateKind.Y, "z": GateKind.Z, "h": GateKind.H,
    "rx": GateKind.RX, "ry": GateKind.RY, "rz": GateKind.RZ,
    "cx": GateKind.CNOT, "CX": GateKind.CNOT, "swap": GateKind.SWAP, "cz": GateKind.CZ,
    "ccx": GateKind.TOFFOLI, "mcx": GateKind.GENERALIZED_TOFFOLI,
}


def _statements(text: str):
    """Yield (statement, line, column) with comments stripped; statements end at ';'."""
    buf: list[str] = []
    start = None
    line, col = 1, 1
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "/" and text.startswith("//", i):
            while i < len(text) and text[i] != "\n":
                i += 1
            continue
        if ch == ";":
            stmt = "".join(buf)
            if stmt.strip():
                yield stmt, start[0], start[1]
            else:
                raise QasmSyntaxError("empty statement", line, col)
            buf, start = [], None
        else:
            if start is None and not ch.isspace():
                start = (line, col)
            if start is not None:
                buf.append(ch)
        if ch == "\n":
            line, col = line + 1, 1
        else:
            col += 1
        i += 1
    if "".join(buf).strip():
        raise QasmSyntaxError("missing ';'", start[0], start[1])


def parse_qasm(text: str) -> Circuit:
    """Parse an OpenQASM-2.0-style program into a :class:`Circuit`.

    Supported: ``OPENQASM``/``include`` headers, ``qreg``/``creg``
    declarations (several quantum registers are concatenated in declaration
    order), the gates x y z h rx ry rz cx swap cz ccx mcx, and final
    ``measure q[i] -> c[j]``.
    """
    registers: dict[str, tuple[int, int]] = {}
    cregs: set[str] = set()
    n_wires = 0
    gates: list[Gate] = []
    for stmt, line, col in _statements(text):
        s = stmt.strip()
        head = s.split(None, 1)[0] if s.split() else ""
        if head == "OPENQASM" or head == "include":
            continue
        if head in ("qreg", "creg"):
            m = re.fullmatch(r"(qreg|creg)\s+([A-Za-z_][A-Za-z0-9_]*)\s*\[\s*(\d+)\s*\]\s*", s)
            if not m:
                raise QasmSyntaxError(f"malformed {head} declaration", line, col)
            name, size = m.group(2), int(m.group(3))
            if name in registers or name in cregs:
                raise QasmSyntaxError(f"register {name!r} redeclared", line, col)
            if head == "qreg":
                registers[name] = (n_wires, size)
                n_wires += size
            else:
                cregs.add(name)
            continue
        if head == "measure":
            m = re.fullmatch(r"measure\s+(.+?)\s*->\s*([A-Za-z_][A-Za-z0-9_]*)\s*\[\s*(\d+)\s*\]\s*", s)
            if not m:
                raise QasmSyntaxError("malformed measure", line, col)
            if m.group(2) not in cregs:
                raise UndeclaredWire(f"line {line}: classical register {m.group(2)!r} not declared")
            w = _resolve(m.group(1), registers, line, col)
            gates.append(Gate(GateKind.MEASURE, (w,), len(gates)))
            continue
        m = _STMT_GATE.match(s)
        if not m:
            raise QasmSyntaxError("unrecognised statement", line, col)
        name, params, args = m.group(1), m.group(2), m.group(3)
        kind = _QASM_NAMES.get(name)
        if kind is None:
            raise UnknownGate(f"line {line}: unknown gate {name!r}")
        theta = None
        if kind.parametric:
            if params is None:
                raise QasmSyntaxError(f"{name} needs an angle", line, col)
            theta = _ExprParser(params, line, col + s.index("(") + 1).parse()
        elif params is not None:
            raise QasmSyntaxError(f"{name} takes no parameters", line, col)
        if not args.strip():
            raise QasmSyntaxError(f"{name} without operands", line, col)
        wires = tuple(_resolve(a, registers, line, col) for a in args.split(","))
        if kind.arity is not None and len(wires) != kind.arity:
            raise ArityMismatch(f"line {line}: {name} takes {kind.arity} operands, got {len(wires)}")
        try:
            gates.append(Gate(kind, wires, len(gates), theta))
        except ArityMismatch:
            raise
        except InvalidCircuit as exc:
            raise QasmSyntaxError(str(exc), line, col) from None
    return Circuit(n_wires, tuple(gates))


def _resolve(ref: str, registers, line, col) -> int:
    m = _WIRE_REF.match(ref)
    if not m:
        raise QasmSyntaxError(f"bad wire reference {ref.strip()!r}", line, col)
    reg, idx = m.group(1), int(m.group(2))
    if reg not in registers:
        raise UndeclaredWire(f"line {line}: register {reg!r} not declared")
    off, size = registers[reg]
    if idx >= size:
        raise UndeclaredWire(f"line {line}: {reg}[{idx}] out of range (size {size})")
    return off + idx


def emit_qasm(c: Circuit) -> str:
    """Serialize ``c``; AGGREGATE and qutrit-only gates must be flattened/removed first."""
    lines = ["OPENQASM 2.0;", 'include "qelib1.inc";']
    if c.n_wires:
        lines.append(f"qreg q[{c.n_wires}];")
    if any(g.kind is GateKind.MEASURE for g in c.gates):
        lines.append(f"creg c[{c.n_wires}];")
    for g in c.gates:
        if g.kind is GateKind.MEASURE:
            w = g.operands[0]
            lines.append(f"measure q[{w}] -> c[{w}];")
            continue
        if g.kind in (GateKind.AGGREGATE, GateKind.X_PLUS1, GateKind.X_MINUS1):
            raise UnsupportedGate(f"{g.kind.name} has no QASM form")
        args = ",".join(f"q[{w}]" for w in g.operands)
        param = f"({g.theta!r})" if g.theta is not None else ""
        lines.append(f"{g.kind.value}{param} {args};")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# structural passes

def flatten(c: Circuit) -> Circuit:
    """Expand AGGREGATE gates (recursively) into their stored bodies."""
    out: list[Gate] = []

    def walk(g: Gate):
        if g.kind is GateKind.AGGREGATE:
            for b in g.body:
                walk(b)
        else:
            out.append(g)

    for g in c.gates:
        walk(g)
    return Circuit.of(c.n_wires, out, c.wire_level)


def decompose_swap(c: Circuit) -> Circuit:
    """Replace every SWAP(a,b) with CNOT(a,b) CNOT(b,a) CNOT(a,b)."""
    if not any(g.kind is GateKind.SWAP for g in c.gates):
        return c
    out: list[Gate] = []
    for g in c.gates:
        if g.kind is GateKind.SWAP:
            a, b = g.operands
            out += [gate("cx", a, b), gate("cx", b, a), gate("cx", a, b)]
        else:
            out.append(g)
    return Circuit.of(c.n_wires, out, c.wire_level)


def toffoli_gates(a: int, b: int, t: int) -> list[Gate]:
    """Clifford+T Toffoli with 6 CNOTs; T/T-dagger are written as RZ(+-pi/4),
    which differs only by a global phase."""
    t_, tdg = math.pi / 4, -math.pi / 4
    return [
        gate("h", t), gate("cx", b, t), gate("rz", t, theta=tdg), gate("cx", a, t),
        gate("rz", t, theta=t_), gate("cx", b, t), gate("rz", t, theta=tdg), gate("cx", a, t),
        gate("rz", b, theta=t_), gate("rz", t, theta=t_), gate("h", t), gate("cx", a, b),
        gate("rz", a, theta=t_), gate("rz", b, theta=tdg), gate("cx", a, b),
    ]


def decompose_toffoli(c: Circuit) -> Circuit:
    """Replace every TOFFOLI with its 6-CNOT Clifford+T form."""
    out: list[Gate] = []
    for g in c.gates:
        if g.kind is GateKind.TOFFOLI:
            out += toffoli_gates(*g.operands)
        else:
            out.append(g)
    return Circuit.of(c.n_wires, out, c.wire_level)


# ---------------------------------------------------------------------------
# gate dependency graph

CommutationOracle = Callable[[Gate, Gate], bool]


def never_commute(a: Gate, b: Gate) -> bool:
    """Oracle that only treats wire-disjoint gates as commuting (plain data dependence)."""
    return not set(a.operands) & set(b.operands)


@dataclass(frozen=True)
class GateDependencyGraph:
    """Partial order over gate ids.

    ``edges`` is the transitive reduction of the ordering induced by
    wire-sharing, non-commuting pairs. ``commutes`` lists the wire-sharing
    pairs the oracle declared commuting (as frozensets).
    """

    nodes: tuple[int, ...]
    edges: frozenset[tuple[int, int]]
    commutes: frozenset[frozenset[int]]

    def predecessors(self, n: int) -> list[int]:
        return sorted(a for a, b in self.edges if b == n)

    def successors(self, n: int) -> list[int]:
        return sorted(b for a, b in self.edges if a == n)

    def to_networkx(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(self.nodes)
        g.add_edges_from(self.edges)
        return g

    def is_acyclic(self) -> bool:
        return nx.is_directed_acyclic_graph(self.to_networkx())

    def linear_extension(self, rng: np.random.Generator | None = None) -> list[int]:
        """A topological order; random among ready nodes when ``rng`` is given."""
        preds = {n: 0 for n in self.nodes}
        succ: dict[int, list[int]] = {n: [] for n in self.nodes}
        for a, b in self.edges:
            preds[b] += 1
            succ[a].append(b)
        ready = sorted(n for n in self.nodes if preds[n] == 0)
        order = []
        while ready:
            i = int(rng.integers(len(ready))) if rng is not None else 0
            n = ready.pop(i)
            order.append(n)
            for s in succ[n]:
                preds[s] -= 1
                if preds[s] == 0:
                    ready.append(s)
            ready.sort()
        return order


def build_gdg(c: Circuit, commutation_oracle: CommutationOracle | None = None) -> GateDependencyGraph:
    """Dependency DAG of ``c``: an ordering constraint for every earlier/later
    pair that shares a wire and does not commute, transitively reduced."""
    oracle = commutation_oracle or never_commute
    gates = c.gates
    closure = nx.DiGraph()
    closure.add_nodes_from(g.id for g in gates)
    comm = set()
    for j, b in enumerate(gates):
        wb = set(b.operands)
        for a in gates[:j]:
            if not wb & set(a.operands):
                continue
            if a.kind is not GateKind.MEASURE and b.kind is not GateKind.MEASURE and oracle(a, b):
                comm.add(frozenset((a.id, b.id)))
            else:
                closure.add_edge(a.id, b.id)
    reduced = nx.transitive_reduction(closure)
    return GateDependencyGraph(tuple(g.id for g in gates), frozenset(reduced.edges()), frozenset(comm))


def reorder(c: Circuit, order: Sequence[int]) -> Circuit:
    """Circuit with the same gates applied in ``order`` (gate ids); ids are kept."""
    by_id = {g.id: g for g in c.gates}
    if sorted(order) != sorted(by_id):
        raise InvalidCircuit("order must be a permutation of the circuit's gate ids")
    return Circuit(c.n_wires, tuple(by_id[i] for i in order), c.wire_level)
