"""GRAPE pulse optimisation for small blocks (up to 3 qubits).

Piecewise-constant controls; the gradient is exact, taken through the
eigendecomposition of each slice Hamiltonian.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .circuit import Circuit, Gate, GateKind, flatten, gate_unitary, embed_unitary
from .errors import BlockTooLarge, DimensionMismatch, Infeasible, ShapeMismatch

MAX_PULSE_QUBITS = 3

_SX = np.array([[0, 1], [1, 0]], dtype=complex)
_SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
_SZ = np.array([[1, 0], [0, -1]], dtype=complex)


@dataclass(frozen=True)
class ControlProblem:
    h_drift: np.ndarray
    h_controls: tuple[np.ndarray, ...]
    T: float
    n_steps: int
    u_target: np.ndarray

    def __post_init__(self):
        hd = np.asarray(self.h_drift, dtype=complex)
        hc = tuple(np.asarray(h, dtype=complex) for h in self.h_controls)
        ut = np.asarray(self.u_target, dtype=complex)
        d = hd.shape[0]
        for m in (hd, ut) + hc:
            if m.shape != (d, d):
                raise ShapeMismatch("all matrices must be square with a common dimension")
        for m in (hd,) + hc:
            if np.max(np.abs(m - m.conj().T), initial=0.0) > 1e-12:
                raise ValueError("Hamiltonians must be Hermitian")
        if not self.T > 0 or int(self.n_steps) < 1:
            raise ValueError("need T > 0 and n_steps >= 1")
        object.__setattr__(self, "h_drift", hd)
        object.__setattr__(self, "h_controls", hc)
        object.__setattr__(self, "u_target", ut)
        object.__setattr__(self, "n_steps", int(self.n_steps))
        object.__setattr__(self, "T", float(self.T))

    @property
    def dim(self) -> int:
        return self.h_drift.shape[0]

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    def with_duration(self, T: float, n_steps: int) -> "ControlProblem":
        return ControlProblem(self.h_drift, self.h_controls, T, n_steps, self.u_target)


@dataclass(frozen=True)
class PulseSequence:
    """``amplitudes[j, k]``: control ``j`` during slice ``k`` (rad/ns)."""

    amplitudes: np.ndarray
    dt: float

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.amplitudes, dtype=float))
        if not np.all(np.isfinite(a)):
            raise ValueError("amplitudes must be finite")
        object.__setattr__(self, "amplitudes", a)

    @property
    def n_steps(self) -> int:
        return self.amplitudes.shape[1]

    @property
    def duration(self) -> float:
        return self.dt * self.n_steps

    def to_csv(self) -> str:
        rows = ["control_index,step,amplitude"]
        for j, row in enumerate(self.amplitudes):
            rows += [f"{j},{k},{float(v)!r}" for k, v in enumerate(row)]
        return "\n".join(rows) + "\n"

    def resampled(self, n_steps: int, dt: float) -> "PulseSequence":
        """Same pulse shape stretched onto a new grid."""
        old = (np.arange(self.n_steps) + 0.5) / self.n_steps
        new = (np.arange(n_steps) + 0.5) / n_steps
        amps = np.array([np.interp(new, old, row) for row in self.amplitudes])
        return PulseSequence(amps, dt)


@dataclass(frozen=True)
class GrapeConfig:
    max_iters: int = 500
    learning_rate: float = 0.1
    fidelity_target: float = 0.999
    gradient_tolerance: float = 1e-9
    u_max: float | None = None

    def __post_init__(self):
        if self.max_iters < 1 or not self.learning_rate > 0 or not 0 < self.fidelity_target <= 1:
            raise ValueError("invalid GRAPE configuration")
        if not self.gradient_tolerance > 0 or (self.u_max is not None and not self.u_max > 0):
            raise ValueError("invalid GRAPE configuration")


@dataclass(frozen=True)
class GrapeResult:
    pulse: PulseSequence
    fidelity: float
    iterations: int
    history: tuple[float, ...] = field(default=(), repr=False)

    def __iter__(self):
        return iter((self.pulse, self.fidelity, self.iterations))


# ---------------------------------------------------------------------------
# propagation and fidelity

def _check(p: ControlProblem, u: PulseSequence):
    if u.amplitudes.shape != (len(p.h_controls), p.n_steps):
        raise ShapeMismatch(f"pulse shape {u.amplitudes.shape} does not match "
                            f"({len(p.h_controls)}, {p.n_steps})")


def _slice_hamiltonians(p: ControlProblem, amps: np.ndarray) -> np.ndarray:
    h = np.broadcast_to(p.h_drift, (p.n_steps,) + p.h_drift.shape).copy()
    for j, hj in enumerate(p.h_controls):
        h += amps[j][:, None, None] * hj
    return h


def _slices(p: ControlProblem, amps: np.ndarray):
    """Eigendecomposition and propagator of every slice."""
    h = _slice_hamiltonians(p, amps)
    evals, vecs = np.linalg.eigh(h)
    phases = np.exp(-1j * p.dt * evals)
    props = np.einsum("kab,kb,kcb->kac", vecs, phases, vecs.conj())
    return evals, vecs, phases, props


def propagate(p: ControlProblem, u: PulseSequence) -> np.ndarray:
    """U = U_M ... U_1 with U_k = exp(-i dt (H_d + sum_j u_jk H_j))."""
    _check(p, u)
    props = _slices(p, u.amplitudes)[3]
    out = np.eye(p.dim, dtype=complex)
    for uk in props:
        out = uk @ out
    return out


def fidelity(u: np.ndarray, u_target: np.ndarray) -> float:
    """|Tr(U_target^dagger U)|^2 / d^2, blind to global phase."""
    u, u_target = np.asarray(u), np.asarray(u_target)
    if u.shape != u_target.shape:
        raise DimensionMismatch(f"{u.shape} vs {u_target.shape}")
    d = u.shape[0]
    return float(min(1.0, abs(np.trace(u_target.conj().T @ u)) ** 2 / d ** 2))


def _value_and_grad(p: ControlProblem, amps: np.ndarray) -> tuple[float, np.ndarray]:
    evals, vecs, phases, props = _slices(p, amps)
    m, d = p.n_steps, p.dim
    fwd = np.empty((m + 1, d, d), dtype=complex)   # fwd[k] = U_k ... U_1 (fwd[0] = I)
    fwd[0] = np.eye(d)
    for k in range(m):
        fwd[k + 1] = props[k] @ fwd[k]
    bwd = np.empty((m + 1, d, d), dtype=complex)   # bwd[k] = Ut^dag U_M ... U_{k+1}
    bwd[m] = p.u_target.conj().T
    for k in range(m - 1, -1, -1):
        bwd[k] = bwd[k + 1] @ props[k]
    g = np.trace(bwd[0])
    fid = abs(g) ** 2 / d ** 2
    # divided differences of exp(-i dt x) at the slice eigenvalues
    de = evals[:, :, None] - evals[:, None, :]
    dp = phases[:, :, None] - phases[:, None, :]
    same = np.abs(de) < 1e-10
    ddiff = np.where(same, -1j * p.dt * phases[:, :, None] * np.ones_like(de), dp / np.where(same, 1, de))
    # Tr(bwd[k+1] dU_k fwd[k]) = Tr(V^dag fwd[k] bwd[k+1] V  (Hj' o D))
    mk = np.einsum("kba,kbc,kcd,kde->kae", vecs.conj(), fwd[:-1], bwd[1:], vecs)
    grad = np.empty((len(p.h_controls), m))
    for j, hj in enumerate(p.h_controls):
        hj_e = np.einsum("kba,bc,kcd->kad", vecs.conj(), hj, vecs)
        dg = np.einsum("kba,kab->k", mk, hj_e * ddiff)
        grad[j] = 2 * np.real(np.conj(g) * dg) / d ** 2
    return float(fid), grad


def grape_gradient(p: ControlProblem, u: PulseSequence) -> np.ndarray:
    """dF/du[j, k] for F = |Tr(Ut^dag U)|^2 / d^2 (exact derivative of each slice exponential)."""
    _check(p, u)
    return _value_and_grad(p, u.amplitudes)[1]


def finite_difference_gradient(p: ControlProblem, u: PulseSequence, h: float = 1e-6) -> np.ndarray:
    out = np.empty_like(u.amplitudes)
    for idx in np.ndindex(*u.amplitudes.shape):
        a = u.amplitudes.copy()
        a[idx] += h
        fp = fidelity(propagate(p, PulseSequence(a, u.dt)), p.u_target)
        a[idx] -= 2 * h
        fm = fidelity(propagate(p, PulseSequence(a, u.dt)), p.u_target)
        out[idx] = (fp - fm) / (2 * h)
    return out


# ---------------------------------------------------------------------------
# optimisation

def grape_optimize(p: ControlProblem, u0: PulseSequence | None, cfg: GrapeConfig, seed: int = 0) -> GrapeResult:
    """Gradient ascent on fidelity with a backtracking step size.

    A step is accepted only if it raises fidelity (the step then grows by
    1.5x); otherwise it is halved and retried. The ascent direction is the
    gradient combined with the previous accepted direction (Polak-Ribiere
    conjugate gradient, reset whenever it stops pointing uphill). Amplitudes
    are clipped to ``u_max``.
    """
    if u0 is None:
        rng = np.random.default_rng(seed)
        scale = cfg.u_max if cfg.u_max is not None else 0.1
        u0 = PulseSequence(rng.uniform(-0.5, 0.5, (len(p.h_controls), p.n_steps)) * scale, p.dt)
    _check(p, u0)
    amps = _clip(u0.amplitudes.copy(), cfg.u_max)
    fid, grad = _value_and_grad(p, amps)
    history = [fid]
    lr = cfg.learning_rate
    direction = grad.copy()
    prev_grad = grad.copy()
    it = 0
    while it < cfg.max_iters and fid < cfg.fidelity_target:
        gnorm = float(np.max(np.abs(grad), initial=0.0))
        if gnorm < cfg.gradient_tolerance or lr < 1e-12:
            break
        it += 1
        cand = _clip(amps + lr * direction, cfg.u_max)
        f_new, g_new = _value_and_grad(p, cand)
        if f_new > fid:
            amps, lr = cand, lr * 1.5
            beta = max(0.0, float(np.sum(g_new * (g_new - prev_grad)) / max(np.sum(prev_grad ** 2), 1e-300)))
            direction = g_new + beta * direction
            if np.sum(direction * g_new) <= 0:
                direction = g_new.copy()
            fid, grad, prev_grad = f_new, g_new, g_new
            history.append(fid)
        else:
            lr *= 0.5
            if lr < 1e-6 and not np.array_equal(direction, grad):
                direction, lr = grad.copy(), cfg.learning_rate
    return GrapeResult(PulseSequence(amps, p.dt), fid, it, tuple(history))


def _clip(a: np.ndarray, u_max: float | None) -> np.ndarray:
    return a if u_max is None else np.clip(a, -u_max, u_max)


# ---------------------------------------------------------------------------
# hardware model and block compilation

@dataclass(frozen=True)
class HamiltonianSpec:
    """Transmon-like chain: sigma_x/2, sigma_y/2 drives per qubit; J sigma_z sigma_z drift between neighbours.

    ``drive_strength`` bounds the amplitudes (rad/ns), ``coupling_strength``
    is J (rad/ns). Blocks are assumed to sit on a chain in wire order.
    """

    n_qubits: int = 3
    drive_strength: float = 0.2
    coupling_strength: float = 0.02

    @classmethod
    def from_json(cls, data: Mapping | str | Path) -> "HamiltonianSpec":
        if isinstance(data, (str, Path)) and Path(data).exists():
            data = json.loads(Path(data).read_text())
        elif isinstance(data, str):
            data = json.loads(data)
        return cls(int(data.get("n_qubits", 3)), float(data.get("drive_strength", 0.2)),
                   float(data.get("coupling_strength", 0.02)))

    def operators(self, n: int) -> tuple[np.ndarray, list[np.ndarray]]:
        if n > MAX_PULSE_QUBITS:
            raise BlockTooLarge(f"{n} qubits exceeds the pulse cap of {MAX_PULSE_QUBITS}")
        drift = np.zeros((2 ** n, 2 ** n), dtype=complex)
        for q in range(n - 1):
            drift += self.coupling_strength * _kron_at({q: _SZ, q + 1: _SZ}, n)
        ctrls = []
        for q in range(n):
            ctrls.append(_kron_at({q: _SX / 2}, n))
            ctrls.append(_kron_at({q: _SY / 2}, n))
        return drift, ctrls

    def problem(self, target: np.ndarray, T: float, dt: float = 1.0) -> ControlProblem:
        n = int(round(math.log2(target.shape[0])))
        drift, ctrls = self.operators(n)
        steps = max(1, int(round(T / dt)))
        return ControlProblem(drift, tuple(ctrls), T, steps, target)


def _kron_at(ops: Mapping[int, np.ndarray], n: int) -> np.ndarray:
    out = np.eye(1, dtype=complex)
    for q in range(n):
        out = np.kron(out, ops.get(q, np.eye(2)))
    return out


def block_unitary(gates: Sequence[Gate]) -> tuple[np.ndarray, tuple[int, ...]]:
    """Unitary of a gate list on its own (sorted) wires."""
    flat = []
    for g in gates:
        flat += list(flatten(Circuit(max(g.operands) + 1, (g.with_id(0),))).gates)
    wires = tuple(sorted({w for g in flat for w in g.operands}))
    if len(wires) > MAX_PULSE_QUBITS:
        raise BlockTooLarge(f"block spans {len(wires)} qubits")
    u = np.eye(2 ** len(wires), dtype=complex)
    for g in flat:
        u = embed_unitary(gate_unitary(g), g.operands, wires, 2) @ u
    return u, wires


@dataclass(frozen=True)
class DurationResult:
    duration_ns: float
    fidelity: float
    pulse: PulseSequence | None


def minimal_duration(target: np.ndarray, hw: HamiltonianSpec, cfg: GrapeConfig, seed: int = 0,
                     t_max: float = 400.0, restarts: int = 3) -> DurationResult:
    """Shortest whole-ns duration at which GRAPE reaches ``cfg.fidelity_target``.

    Feasibility is probed by doubling from a small guess, then bisected at
    1 ns granularity; each probe re-optimises, warm-started from the nearest
    feasible pulse and backed up by seeded random starts.
    """
    d = target.shape[0]
    if d == 1 or fidelity(np.eye(d), target) >= cfg.fidelity_target:
        return DurationResult(0.0, 1.0, None)
    cfg = GrapeConfig(cfg.max_iters, cfg.learning_rate, cfg.fidelity_target, cfg.gradient_tolerance,
                      cfg.u_max if cfg.u_max is not None else hw.drive_strength)
    cache: dict[int, GrapeResult] = {}
    rng = np.random.default_rng(seed)
    seeds = [int(s) for s in rng.integers(0, 2 ** 31, size=4096)]

    def probe(T: int, warm: PulseSequence | None) -> GrapeResult:
        if T in cache:
            return cache[T]
        p = hw.problem(target, float(T))
        best = None
        starts = ([warm.resampled(p.n_steps, p.dt)] if warm is not None else []) + [None] * restarts
        for s0 in starts:
            res = grape_optimize(p, s0, cfg, seed=seeds[(T * 7 + len(cache)) % len(seeds)] if s0 is None else 0)
            if best is None or res.fidelity > best.fidelity:
                best = res
            if best.fidelity >= cfg.fidelity_target:
                break
        cache[T] = best
        return best

    lo, hi = 0, 4
    best_hi = probe(hi, None)
    while best_hi.fidelity < cfg.fidelity_target:
        lo, hi = hi, hi * 2
        if hi > t_max:
            raise Infeasible(f"no pulse reaching fidelity {cfg.fidelity_target} within {t_max} ns")
        best_hi = probe(hi, best_hi.pulse)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        res = probe(mid, best_hi.pulse)
        if res.fidelity >= cfg.fidelity_target:
            hi, best_hi = mid, res
        else:
            lo = mid
    return DurationResult(float(hi), best_hi.fidelity, best_hi.pulse)


@dataclass
class BlockCompilation:
    durations: dict[int, float]          # gate id -> ns
    pulses: dict[int, PulseSequence | None]
    fidelities: dict[int, float]

    def duration_table(self, base: Mapping) -> dict:
        out = dict(base)
        out.update({("id", k): v for k, v in self.durations.items()})
        return out


def _gate_key(g: Gate) -> tuple:
    wires = sorted({w for w in g.operands} | {w for b in g.body for w in b.operands})
    return g.relabel({w: i for i, w in enumerate(wires)}, new_id=0).signature()


def aggregate_and_optimize(c: Circuit, hw: HamiltonianSpec, cfg: GrapeConfig, seed: int = 0,
                           gate_ids: Sequence[int] | None = None) -> BlockCompilation:
    """Minimal-duration pulses for gates of ``c`` (default: every gate).

    Identical gates up to a wire shift are optimised once. The resulting
    duration table (keyed ("id", gate_id)) plugs straight into cls_schedule.
    """
    wanted = set(gate_ids) if gate_ids is not None else None
    durs, pulses, fids = {}, {}, {}
    memo: dict[tuple, DurationResult] = {}
    for g in c.gates:
        if wanted is not None and g.id not in wanted:
            continue
        if g.kind is GateKind.MEASURE:
            continue
        if len(g.operands) > MAX_PULSE_QUBITS:
            raise BlockTooLarge(f"{g!r} spans {len(g.operands)} qubits")
        key = _gate_key(g)
        if key not in memo:
            u, _ = block_unitary([g])
            memo[key] = minimal_duration(u, hw, cfg, seed=seed)
        r = memo[key]
        durs[g.id], pulses[g.id], fids[g.id] = r.duration_ns, r.pulse, r.fidelity
    return BlockCompilation(durs, pulses, fids)


def physical_schedule(c: Circuit, hw: HamiltonianSpec, cfg: GrapeConfig, aggregate: bool = True,
                      seed: int = 0, exclusive_wires: bool = True):
    """Pulse-level schedule of ``c``: optimise every instruction, then list-schedule.

    With ``aggregate`` the diagonal runs are merged into AGGREGATE blocks
    first, so each block gets one joint pulse. Wires are exclusive by
    default since two pulses cannot drive one qubit at once.
    """
    from .scheduler import aggregate_diagonal_blocks, cls_schedule

    work = aggregate_diagonal_blocks(c) if aggregate else c
    comp = aggregate_and_optimize(work, hw, cfg, seed=seed)
    table = comp.duration_table({"measure": 1000.0})
    return work, cls_schedule(work, durations=table, exclusive_wires=exclusive_wires), comp
