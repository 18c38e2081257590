"""Device calibration data: coupling graph, error rates, coherence times, durations."""
from __future__ import annotations

import datetime as _dt
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import networkx as nx
import numpy as np

from .circuit import Gate, GateKind
from .errors import GraphError, IllegalSite, RangeError, SchemaError, Unreachable

EPS_1Q = 0.002
EPS_RO = 0.04
EPS_2Q = 0.07
T2_US = 40.0

# Gate durations in ns. Typical transmon orders of magnitude; overridable per file.
DEFAULT_DURATIONS_NS = {
    "1q": 50.0,
    "2q": 300.0,
    "swap": 900.0,
    "measure": 1000.0,
}

NATIVE_2Q = ("CNOT", "CZ", "other")


def edge_key(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


def _parse_edge_key(k: str) -> tuple[int, int]:
    try:
        a, b = (int(x) for x in k.split("-"))
    except ValueError as exc:
        raise SchemaError(f"bad edge key {k!r}; expected 'a-b'") from exc
    return edge_key(a, b)


@dataclass(frozen=True)
class DeviceModel:
    n_qubits: int
    edges: frozenset
    eps_2q: Mapping[tuple[int, int], float]
    eps_1q: tuple[float, ...]
    eps_ro: tuple[float, ...]
    t2_us: tuple[float, ...]
    durations_ns: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_DURATIONS_NS))
    native_2q: str = "CNOT"

    def __post_init__(self):
        edges = frozenset(edge_key(*e) for e in self.edges)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "eps_2q", {edge_key(*k): float(v) for k, v in self.eps_2q.items()})
        for name in ("eps_1q", "eps_ro", "t2_us"):
            object.__setattr__(self, name, tuple(float(x) for x in getattr(self, name)))
        durs = dict(DEFAULT_DURATIONS_NS)
        durs.update({k: float(v) for k, v in self.durations_ns.items()})
        object.__setattr__(self, "durations_ns", durs)
        self._validate()

    def _validate(self):
        n = self.n_qubits
        if n < 1:
            raise SchemaError("n_qubits must be positive")
        for a, b in self.edges:
            if a == b or not (0 <= a < n and 0 <= b < n):
                raise GraphError(f"edge ({a},{b}) references a nonexistent qubit")
        for k in self.eps_2q:
            if k not in self.edges:
                raise GraphError(f"error rate given for non-edge {k}")
        for name in ("eps_1q", "eps_ro", "t2_us"):
            if len(getattr(self, name)) != n:
                raise SchemaError(f"{name} must have {n} entries")
        for name, vals in (("eps_2q", self.eps_2q.values()), ("eps_1q", self.eps_1q), ("eps_ro", self.eps_ro)):
            for v in vals:
                if not (0.0 <= v < 1.0) or math.isnan(v):
                    raise RangeError(f"{name} value {v} outside [0, 1)")
        if any(not t > 0 for t in self.t2_us):
            raise RangeError("T2 must be positive")
        if any(not d > 0 for d in self.durations_ns.values()):
            raise RangeError("durations must be positive")
        if self.native_2q not in NATIVE_2Q:
            raise SchemaError(f"native_2q must be one of {NATIVE_2Q}")

    @classmethod
    def uniform(cls, n_qubits: int, edges: Iterable[Sequence[int]], eps_2q: float = EPS_2Q,
                eps_1q: float = EPS_1Q, eps_ro: float = EPS_RO, t2_us: float = T2_US,
                durations_ns: Mapping[str, float] | None = None) -> "DeviceModel":
        edges = [edge_key(*e) for e in edges]
        return cls(n_qubits, frozenset(edges), {e: eps_2q for e in edges}, (eps_1q,) * n_qubits,
                   (eps_ro,) * n_qubits, (t2_us,) * n_qubits, dict(durations_ns or {}))

    # -- lookups ---------------------------------------------------------
    def graph(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(range(self.n_qubits))
        g.add_edges_from(self.edges)
        return g

    def has_edge(self, a: int, b: int) -> bool:
        return edge_key(a, b) in self.edges

    def edge_error(self, a: int, b: int) -> float:
        k = edge_key(a, b)
        if k not in self.edges:
            raise IllegalSite(f"qubits {a} and {b} are not coupled")
        return self.eps_2q.get(k, EPS_2Q)

    def duration(self, g: Gate, site: Sequence[int] | None = None) -> float:
        """Duration in ns. Lookup order: "<kind>@<site>", "<kind>", gate class."""
        site = tuple(site) if site is not None else g.operands
        kind = g.kind.value
        cls_key = _gate_class(g)
        for key in (f"{kind}@{'-'.join(map(str, site))}", kind):
            if key in self.durations_ns:
                return self.durations_ns[key]
        if g.kind is GateKind.AGGREGATE:
            return sum(self.duration(b) for b in g.body)
        if g.kind is GateKind.TOFFOLI:
            return 6 * self.durations_ns["2q"] + 9 * self.durations_ns["1q"]
        if cls_key in self.durations_ns:
            return self.durations_ns[cls_key]
        raise KeyError(kind)

    def with_edge_error(self, a: int, b: int, eps: float) -> "DeviceModel":
        e = dict(self.eps_2q)
        e[edge_key(a, b)] = eps
        return DeviceModel(self.n_qubits, self.edges, e, self.eps_1q, self.eps_ro, self.t2_us,
                           self.durations_ns, self.native_2q)

    # -- serialization ---------------------------------------------------
    def to_json(self) -> dict:
        return {
            "n_qubits": self.n_qubits,
            "edges": sorted([list(e) for e in self.edges]),
            "eps_2q": {f"{a}-{b}": v for (a, b), v in sorted(self.eps_2q.items())},
            "eps_1q": list(self.eps_1q),
            "eps_ro": list(self.eps_ro),
            "t2_us": list(self.t2_us),
            "durations_ns": dict(self.durations_ns),
            "native_2q": self.native_2q,
        }


def _gate_class(g: Gate) -> str:
    if g.kind is GateKind.MEASURE:
        return "measure"
    if g.kind is GateKind.SWAP:
        return "swap"
    return f"{len(g.operands)}q"


@dataclass(frozen=True)
class CalibrationSnapshot:
    timestamp: str
    model: DeviceModel

    def __post_init__(self):
        try:
            _dt.datetime.fromisoformat(self.timestamp.replace("Z", "+00:00"))
        except ValueError as exc:
            raise SchemaError(f"timestamp {self.timestamp!r} is not ISO-8601") from exc


def device_from_json(data: Mapping) -> DeviceModel:
    if not isinstance(data, Mapping):
        raise SchemaError("calibration must be a JSON object")
    if "n_qubits" not in data or "edges" not in data:
        raise SchemaError("calibration needs n_qubits and edges")
    n = data["n_qubits"]
    if not isinstance(n, int) or isinstance(n, bool):
        raise SchemaError("n_qubits must be an integer")
    try:
        edges = [edge_key(int(a), int(b)) for a, b in data["edges"]]
    except (TypeError, ValueError) as exc:
        raise SchemaError("edges must be a list of [a, b] pairs") from exc
    eps2 = {e: EPS_2Q for e in edges}
    for k, v in dict(data.get("eps_2q", {})).items():
        eps2[_parse_edge_key(k)] = _number(v, "eps_2q")

    def per_qubit(name, default):
        vals = data.get(name)
        if vals is None:
            return (default,) * n
        if isinstance(vals, Mapping):
            out = [default] * n
            for k, v in vals.items():
                i = int(k)
                if not 0 <= i < n:
                    raise GraphError(f"{name} given for nonexistent qubit {i}")
                out[i] = _number(v, name)
            return tuple(out)
        if not isinstance(vals, list) or len(vals) != n:
            raise SchemaError(f"{name} must list {n} values")
        return tuple(default if v is None else _number(v, name) for v in vals)

    return DeviceModel(
        n, frozenset(edges), eps2,
        per_qubit("eps_1q", EPS_1Q), per_qubit("eps_ro", EPS_RO), per_qubit("t2_us", T2_US),
        {k: _number(v, "durations_ns") for k, v in dict(data.get("durations_ns", {})).items()},
        data.get("native_2q", "CNOT"),
    )


def _number(v, name) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SchemaError(f"{name} entries must be numbers, got {v!r}")
    return float(v)


def load_calibration(path: str | Path) -> CalibrationSnapshot:
    """Read and validate a calibration JSON file."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    ts = data.get("timestamp", "1970-01-01T00:00:00") if isinstance(data, Mapping) else None
    return CalibrationSnapshot(str(ts), device_from_json(data))


def save_calibration(snap: CalibrationSnapshot, path: str | Path) -> None:
    data = snap.model.to_json()
    data["timestamp"] = snap.timestamp
    Path(path).write_text(json.dumps(data, indent=2))


# ---------------------------------------------------------------------------
# reliability arithmetic

def gate_reliability(g: Gate, site: Sequence[int], m: DeviceModel) -> float:
    """1 - eps for the gate's class on the given hardware site."""
    site = tuple(site)
    if g.kind is GateKind.MEASURE:
        return 1.0 - m.eps_ro[site[0]]
    if len(site) == 1:
        return 1.0 - m.eps_1q[site[0]]
    if len(site) == 2:
        r = 1.0 - m.edge_error(*site)
        return r ** 3 if g.kind is GateKind.SWAP else r
    raise IllegalSite(f"{g!r}: no reliability model for {len(site)}-qubit gates")


def swap_weight(eps: float) -> float:
    return -3.0 * math.log1p(-eps)


def best_swap_path(src: int, dst: int, m: DeviceModel) -> tuple[list[int], float]:
    """Most reliable path for moving ``src`` next to ``dst``.

    Every hop except the last one is a SWAP costing (1-eps)^3; the returned
    reliability is the product over those SWAP hops, so adjacent qubits give
    1.0. The path itself minimises the sum of -3 ln(1-eps) over SWAP hops.
    """
    if src == dst:
        return [src], 1.0
    g = m.graph()
    if m.has_edge(src, dst):
        return [src, dst], 1.0
    # the final hop is the gate itself, not a SWAP, so the search ends at any
    # neighbour of dst
    for u, v in g.edges:
        g.edges[u, v]["w"] = swap_weight(m.edge_error(u, v))
    best = None
    try:
        dist, paths = nx.single_source_dijkstra(g, src, weight="w")
    except nx.NodeNotFound as exc:
        raise Unreachable(str(exc)) from exc
    for nb in g.neighbors(dst):
        if nb in dist and nb != src and (best is None or dist[nb] < best[0] - 1e-15
                                           or (abs(dist[nb] - best[0]) <= 1e-15 and nb < best[1][-1])):
            best = (dist[nb], paths[nb])
    if best is None:
        raise Unreachable(f"no path from {src} to {dst}")
    return best[1] + [dst], math.exp(-best[0])


def all_simple_path_best(src: int, dst: int, m: DeviceModel) -> float:
    """Brute-force counterpart of :func:`best_swap_path` (reliability only)."""
    if m.has_edge(src, dst) or src == dst:
        return 1.0
    best = 0.0
    for path in nx.all_simple_paths(m.graph(), src, dst):
        r = 1.0
        for a, b in zip(path[:-2], path[1:-1]):
            r *= (1 - m.edge_error(a, b)) ** 3
        best = max(best, r)
    if best == 0.0:
        raise Unreachable(f"no path from {src} to {dst}")
    return best


# ---------------------------------------------------------------------------
# synthetic devices

def line_device(n: int, **kw) -> DeviceModel:
    return DeviceModel.uniform(n, [(i, i + 1) for i in range(n - 1)], **kw)


def grid_device(rows: int, cols: int, **kw) -> DeviceModel:
    edges = []
    for r, c in itertools.product(range(rows), range(cols)):
        q = r * cols + c
        if c + 1 < cols:
            edges.append((q, q + 1))
        if r + 1 < rows:
            edges.append((q, q + cols))
    return DeviceModel.uniform(rows * cols, edges, **kw)


def ladder_device(n: int, **kw) -> DeviceModel:
    """2 x n/2 ladder, the layout of 16-qubit superconducting chips of that era."""
    if n % 2:
        raise ValueError("ladder needs an even qubit count")
    return grid_device(2, n // 2, **kw)


def random_snapshot(n_qubits: int, edges: Iterable[Sequence[int]], seed: int,
                    timestamp: str = "2019-01-01T00:00:00") -> CalibrationSnapshot:
    """Seeded calibration with rates spread around the default averages.

    2q errors span roughly 0.02-0.20, coherence times 10-80 us, so the best
    and worst sites differ by close to an order of magnitude.
    """
    rng = np.random.default_rng(seed)
    edges = [edge_key(*e) for e in edges]
    eps2 = {e: float(np.clip(rng.lognormal(math.log(EPS_2Q), 0.5), 0.01, 0.25)) for e in edges}
    eps1 = np.clip(rng.lognormal(math.log(EPS_1Q), 0.5, n_qubits), 1e-4, 0.02)
    ro = np.clip(rng.lognormal(math.log(EPS_RO), 0.5, n_qubits), 0.005, 0.2)
    t2 = rng.uniform(10.0, 80.0, n_qubits)
    model = DeviceModel(n_qubits, frozenset(edges), eps2, tuple(eps1), tuple(ro), tuple(t2))
    return CalibrationSnapshot(timestamp, model)


__all__ = [
    "CalibrationSnapshot", "DeviceModel", "DEFAULT_DURATIONS_NS", "EPS_1Q", "EPS_2Q", "EPS_RO", "T2_US",
    "all_simple_path_best", "best_swap_path", "device_from_json", "edge_key", "gate_reliability",
    "grid_device", "ladder_device", "line_device", "load_calibration", "random_snapshot",
    "save_calibration", "swap_weight",
]
