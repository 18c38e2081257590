"""Qubit/qutrit simulation: dense statevectors, sparse amplitude maps, Kraus noise and trajectories.

Gates are accepted in two shapes: IR :class:`~qstack.circuit.Gate` objects
(matrix from :func:`~qstack.circuit.gate_unitary` at the operand dimension)
and any object exposing ``wires`` and ``matrix()`` (the qutrit gates).
MEASURE gates are treated as identity; measurement is always terminal, so
final-state fidelities are unaffected.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .circuit import Circuit, Gate, GateKind, gate_unitary
from .errors import DimensionMismatch, QStackError, TooLarge

DEFAULT_UNITARY_CAP = 2 ** 14
MAX_AMPLITUDES = 3 ** 15
DENSE_LIMIT = 2 ** 12
_ZERO = 1e-14


def circuit_dims(c) -> tuple[int, ...]:
    dims = getattr(c, "wire_level", None)
    if dims is None:
        dims = c.dims
    return tuple(dims)


def gate_local(g, dims: Sequence[int]) -> tuple[tuple[int, ...], np.ndarray] | None:
    """(wires, matrix) for a gate, or None for MEASURE."""
    if isinstance(g, Gate):
        if g.kind is GateKind.MEASURE:
            return None
        ds = {dims[w] for w in g.operands}
        if len(ds) != 1:
            raise DimensionMismatch(f"{g!r} spans wires of different dimension")
        return g.operands, gate_unitary(g, ds.pop())
    wires = tuple(g.wires)
    m = np.asarray(g.matrix(), dtype=complex)
    if m.shape[0] != int(np.prod([dims[w] for w in wires])):
        raise DimensionMismatch(f"{g!r} does not match wire dimensions")
    return wires, m


# ---------------------------------------------------------------------------
# dense states

@dataclass(frozen=True)
class QuditState:
    dims: tuple[int, ...]
    amplitudes: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(self.dims))
        amp = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if amp.size != int(np.prod(self.dims, dtype=np.int64)):
            raise DimensionMismatch("amplitude count does not match dims")
        object.__setattr__(self, "amplitudes", amp)

    @classmethod
    def basis(cls, dims: Sequence[int], digits: Sequence[int] | None = None) -> "QuditState":
        dims = tuple(dims)
        digits = tuple(digits) if digits is not None else (0,) * len(dims)
        amp = np.zeros(int(np.prod(dims, dtype=np.int64)), dtype=complex)
        amp[basis_index(dims, digits)] = 1.0
        return cls(dims, amp)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def level_population(self, level: int) -> float:
        """Total probability of any wire being in ``level``."""
        probs = np.abs(self.amplitudes.reshape(self.dims)) ** 2
        mask = np.zeros(self.dims, dtype=bool)
        for axis, d in enumerate(self.dims):
            if level < d:
                sl = [slice(None)] * len(self.dims)
                sl[axis] = level
                mask[tuple(sl)] = True
        return float(probs[mask].sum())


def basis_index(dims: Sequence[int], digits: Sequence[int]) -> int:
    idx = 0
    for d, x in zip(dims, digits):
        if not 0 <= x < d:
            raise DimensionMismatch(f"digit {x} invalid for dimension {d}")
        idx = idx * d + int(x)
    return idx


def _apply_dense(psi: np.ndarray, dims: tuple[int, ...], wires: Sequence[int], m: np.ndarray) -> np.ndarray:
    """Apply ``m`` on ``wires`` of ``psi`` (shape ``dims + extra``)."""
    k = len(wires)
    local = [dims[w] for w in wires]
    t = np.tensordot(m.reshape(local + local), psi, axes=(list(range(k, 2 * k)), list(wires)))
    return np.moveaxis(t, list(range(k)), list(wires))


def apply_gate(s: QuditState, g) -> QuditState:
    """State after applying ``g``."""
    loc = gate_local(g, s.dims)
    if loc is None:
        return s
    wires, m = loc
    if max(wires) >= len(s.dims):
        raise DimensionMismatch("gate wire outside the register")
    psi = _apply_dense(s.amplitudes.reshape(s.dims), s.dims, wires, m)
    return QuditState(s.dims, psi.reshape(-1))


def circuit_unitary(c, max_dim: int = DEFAULT_UNITARY_CAP) -> np.ndarray:
    """Product of all gate unitaries of ``c`` in application order."""
    dims = circuit_dims(c)
    total = int(np.prod(dims, dtype=np.int64))
    if total > max_dim:
        raise TooLarge(f"Hilbert dimension {total} exceeds cap {max_dim}")
    u = np.eye(total, dtype=complex).reshape(dims + (total,))
    for g in c.gates:
        loc = gate_local(g, dims)
        if loc is not None:
            u = _apply_dense(u, dims, *loc)
    return u.reshape(total, total)


def states_fidelity(a: QuditState, b: QuditState) -> float:
    """|<a|b>|^2."""
    if a.dims != b.dims:
        raise DimensionMismatch(f"{a.dims} vs {b.dims}")
    return float(min(1.0, abs(np.vdot(a.amplitudes, b.amplitudes)) ** 2))


def align_phase(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``v`` multiplied by the global phase that matches ``u`` at ``u``'s largest entry."""
    i = np.unravel_index(np.argmax(np.abs(u)), u.shape)
    if abs(v[i]) < 1e-12:
        return v
    return v * (u[i] / v[i]) / abs(u[i] / v[i])


def phase_distance(u: np.ndarray, v: np.ndarray) -> float:
    """max|u - e^{i phi} v| with phi fixed by the largest entry of ``u``."""
    return float(np.max(np.abs(u - align_phase(u, v))))


# ---------------------------------------------------------------------------
# sparse states

class _LocalOp:
    """A matrix on a few wires, precompiled for index arithmetic on flat basis indices."""

    __slots__ = ("wires", "matrix", "strides", "ldims", "lstrides", "offsets", "perm", "phase", "identity")

    def __init__(self, wires: Sequence[int], matrix: np.ndarray, dims: Sequence[int]):
        self.wires = tuple(wires)
        self.matrix = np.asarray(matrix, dtype=complex)
        gstrides = _strides(dims)
        self.strides = [int(gstrides[w]) for w in self.wires]
        self.ldims = [dims[w] for w in self.wires]
        self.lstrides = [int(s) for s in _strides(self.ldims)]
        size = self.matrix.shape[0]
        offs = np.zeros(size, dtype=np.int64)
        for l, digs in enumerate(itertools.product(*[range(d) for d in self.ldims])):
            offs[l] = sum(x * s for x, s in zip(digs, self.strides))
        self.offsets = offs
        nz = np.abs(self.matrix) > _ZERO
        self.identity = bool(np.allclose(self.matrix, np.eye(size), atol=1e-15))
        if np.all(nz.sum(axis=0) == 1):
            self.perm = np.argmax(nz, axis=0)
            self.phase = self.matrix[self.perm, np.arange(size)]
        else:
            self.perm = None
            self.phase = None

    def local_index(self, idx: np.ndarray) -> np.ndarray:
        loc = (idx // self.strides[0]) % self.ldims[0] * self.lstrides[0]
        for s, d, ls in zip(self.strides[1:], self.ldims[1:], self.lstrides[1:]):
            loc = loc + (idx // s) % d * ls
        return loc

    def apply_sparse(self, idx: np.ndarray, amp: np.ndarray):
        if self.identity:
            return idx, amp
        loc = self.local_index(idx)
        base = idx - self.offsets[loc]
        if self.perm is not None:
            return base + self.offsets[self.perm[loc]], amp * self.phase[loc]
        new_amp = (self.matrix[:, loc] * amp).reshape(-1)
        new_idx = (self.offsets[:, None] + base).reshape(-1)
        keep = np.abs(new_amp) > _ZERO
        new_idx, new_amp = new_idx[keep], new_amp[keep]
        uniq, inv = np.unique(new_idx, return_inverse=True)
        if uniq.size == new_idx.size:
            order = np.argsort(new_idx)
            return new_idx[order], new_amp[order]
        re = np.bincount(inv, weights=new_amp.real, minlength=uniq.size)
        im = np.bincount(inv, weights=new_amp.imag, minlength=uniq.size)
        out = re + 1j * im
        keep = np.abs(out) > _ZERO
        return uniq[keep], out[keep]

    def apply_dense(self, psi: np.ndarray, dims: tuple[int, ...]) -> np.ndarray:
        if self.identity:
            return psi
        return _apply_dense(psi, dims, self.wires, self.matrix)


def _strides(dims: Sequence[int]) -> np.ndarray:
    out = np.ones(len(dims), dtype=np.int64)
    for i in range(len(dims) - 2, -1, -1):
        out[i] = out[i + 1] * dims[i + 1]
    return out


@dataclass
class SparseState:
    """Amplitudes stored only on the occupied basis indices (sorted)."""

    dims: tuple[int, ...]
    idx: np.ndarray
    amp: np.ndarray

    @classmethod
    def basis(cls, dims: Sequence[int], digits: Sequence[int] | None = None) -> "SparseState":
        dims = tuple(dims)
        digits = tuple(digits) if digits is not None else (0,) * len(dims)
        return cls(dims, np.array([basis_index(dims, digits)], dtype=np.int64), np.ones(1, dtype=complex))

    @classmethod
    def from_dense(cls, s: QuditState) -> "SparseState":
        nz = np.flatnonzero(np.abs(s.amplitudes) > _ZERO)
        return cls(s.dims, nz.astype(np.int64), s.amplitudes[nz].copy())

    def to_dense(self) -> QuditState:
        amp = np.zeros(int(np.prod(self.dims, dtype=np.int64)), dtype=complex)
        amp[self.idx] = self.amp
        return QuditState(self.dims, amp)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amp))


def sparse_overlap(a: SparseState, b: SparseState) -> complex:
    common, ia, ib = np.intersect1d(a.idx, b.idx, assume_unique=True, return_indices=True)
    return complex(np.vdot(a.amp[ia], b.amp[ib]))


def propagate_basis_states(c, digits: np.ndarray) -> np.ndarray:
    """Push a batch of basis states (rows of wire digits) through a circuit of
    permutation gates. Raises if any gate is not a basis permutation."""
    dims = circuit_dims(c)
    digits = np.array(digits, dtype=np.int64, copy=True)
    for g in c.gates:
        loc = gate_local(g, dims)
        if loc is None:
            continue
        wires, m = loc
        nz = np.abs(m) > _ZERO
        if not (np.all(nz.sum(axis=0) == 1) and np.allclose(np.abs(m[nz]), 1.0)):
            raise QStackError(f"{g!r} is not a basis permutation")
        perm = np.argmax(nz, axis=0)
        ldims = [dims[w] for w in wires]
        lstr = _strides(ldims)
        loc_idx = sum(digits[:, w] * s for w, s in zip(wires, lstr))
        out = perm[loc_idx]
        for w, s, d in zip(wires, lstr, ldims):
            digits[:, w] = (out // s) % d
    return digits


# ---------------------------------------------------------------------------
# noise channels

def _weyl_ops(d: int) -> list[np.ndarray]:
    """X^a Z^b for a, b in range(d); index 0 is the identity."""
    x = np.roll(np.eye(d), 1, axis=0)
    z = np.diag(np.exp(2j * np.pi * np.arange(d) / d))
    return [np.linalg.matrix_power(x, a) @ np.linalg.matrix_power(z, b) for a in range(d) for b in range(d)]


@dataclass(frozen=True)
class NoiseChannel:
    """Kraus channel on ``n_wires`` wires of dimension ``d``.

    ``mixture`` is set for mixed-unitary channels: (probabilities, unitaries)
    with the identity first. Sampling those needs no state-dependent Born
    probabilities.
    """

    kind: str
    d: int
    n_wires: int
    kraus: tuple[np.ndarray, ...]
    mixture: tuple[np.ndarray, tuple[np.ndarray, ...]] | None = None

    def completeness_error(self) -> float:
        dim = self.d ** self.n_wires
        acc = sum(k.conj().T @ k for k in self.kraus)
        return float(np.max(np.abs(acc - np.eye(dim))))


def _from_mixture(kind, d, n, probs, unitaries) -> NoiseChannel:
    probs = np.asarray(probs, dtype=float)
    kraus = tuple(math.sqrt(p) * u for p, u in zip(probs, unitaries) if p > 0)
    return NoiseChannel(kind, d, n, kraus, (probs, tuple(unitaries)))


def depolarizing(p: float, d: int = 2, n_wires: int = 1) -> NoiseChannel:
    """rho -> (1-p) rho + p I/D over the joint D = d**n_wires space (Weyl twirl)."""
    if not 0 <= p <= 1:
        raise ValueError("p must be in [0, 1]")
    single = _weyl_ops(d)
    ops = single
    for _ in range(n_wires - 1):
        ops = [np.kron(a, b) for a in ops for b in single]
    dim2 = len(ops)
    probs = np.full(dim2, p / dim2)
    probs[0] += 1 - p
    return _from_mixture("depolarizing", d, n_wires, probs, ops)


def dephasing(p: float, d: int = 2) -> NoiseChannel:
    """rho -> (1-p) rho + p/(d-1) sum_{k>0} Z^k rho Z^-k on one wire."""
    if not 0 <= p <= 1:
        raise ValueError("p must be in [0, 1]")
    z = np.diag(np.exp(2j * np.pi * np.arange(d) / d))
    ops = [np.linalg.matrix_power(z, k) for k in range(d)]
    probs = np.array([1 - p] + [p / (d - 1)] * (d - 1))
    return _from_mixture("dephasing", d, 1, probs, ops)


def amplitude_damping(gamma: float, d: int = 2) -> NoiseChannel:
    """Decay ladder |k> -> |k-1> with probability gamma for every k >= 1."""
    if not 0 <= gamma <= 1:
        raise ValueError("gamma must be in [0, 1]")
    k0 = np.diag([1.0] + [math.sqrt(1 - gamma)] * (d - 1)).astype(complex)
    kraus = [k0]
    for k in range(1, d):
        m = np.zeros((d, d), dtype=complex)
        m[k - 1, k] = math.sqrt(gamma)
        kraus.append(m)
    return NoiseChannel("amplitude_damping", d, 1, tuple(kraus))


def idle_decoherence(t2: float, duration: float, d: int = 2) -> NoiseChannel:
    """Dephasing with p = 1 - exp(-duration/T2); both arguments in the same unit."""
    ch = dephasing(1 - math.exp(-duration / t2), d)
    return NoiseChannel("idle_decoherence", d, 1, ch.kraus, ch.mixture)


_PER_WIRE = {"dephasing", "amplitude_damping", "idle_decoherence"}


@dataclass(frozen=True)
class ChannelSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def build(self, d: int, n_wires: int) -> list[NoiseChannel]:
        """Channels to apply, one per wire for single-wire kinds."""
        p = self.params
        if self.kind == "depolarizing":
            return [depolarizing(float(p.get("p", 0.0)), d, n_wires)]
        if self.kind == "dephasing":
            return [dephasing(float(p.get("p", 0.0)), d)] * n_wires
        if self.kind == "amplitude_damping":
            return [amplitude_damping(float(p.get("gamma", 0.0)), d)] * n_wires
        if self.kind == "idle_decoherence":
            return [idle_decoherence(float(p["t2_ns"]), float(p["duration_ns"]), d)] * n_wires
        raise ValueError(f"unknown channel kind {self.kind!r}")


@dataclass(frozen=True)
class NoiseSpec:
    """Channel per gate class ("1q", "2q", "3q", ...) plus optional idle noise.

    With ``idle`` set, the circuit is run layer by layer (greedy ASAP
    layering) and ``idle_channel`` hits every wire a layer leaves untouched.
    """

    channels: dict = field(default_factory=dict)
    idle: bool = False
    idle_channel: ChannelSpec = ChannelSpec("idle_decoherence", {"t2_ns": 40_000.0, "duration_ns": 100.0})

    @classmethod
    def default(cls, p_1q: float = 0.001, p_2q: float = 0.01) -> "NoiseSpec":
        return cls({"1q": ChannelSpec("depolarizing", {"p": p_1q}),
                    "2q": ChannelSpec("depolarizing", {"p": p_2q})})

    @classmethod
    def from_json(cls, data: dict | str) -> "NoiseSpec":
        if isinstance(data, str):
            data = json.loads(data)
        chans = {k: ChannelSpec(v["kind"], dict(v.get("params", {}))) for k, v in data.get("channels", {}).items()}
        idle_ch = data.get("idle_channel")
        kw = {}
        if idle_ch:
            kw["idle_channel"] = ChannelSpec(idle_ch["kind"], dict(idle_ch.get("params", {})))
        spec = cls(chans, bool(data.get("idle", False)), **kw)
        spec.validate()
        return spec

    def validate(self):
        for ch in list(self.channels.values()) + ([self.idle_channel] if self.idle else []):
            for built in ch.build(2, 1):
                if built.completeness_error() > 1e-10:
                    raise ValueError(f"channel {ch} is not trace preserving")

    def for_gate(self, wires: Sequence[int], dims: Sequence[int]) -> list[tuple[tuple[int, ...], NoiseChannel]]:
        spec = self.channels.get(f"{len(wires)}q")
        if spec is None:
            return []
        ds = {dims[w] for w in wires}
        if len(ds) != 1:
            raise DimensionMismatch("noise on mixed-dimension wires is unsupported")
        d = ds.pop()
        built = spec.build(d, len(wires))
        if len(built) == 1 and built[0].n_wires == len(wires):
            return [(tuple(wires), built[0])]
        return [((w,), ch) for w, ch in zip(wires, built)]


def _layers(ops: list[tuple[tuple[int, ...], np.ndarray]], n_wires: int) -> list[list[int]]:
    free = [0] * n_wires
    layers: list[list[int]] = []
    for i, (wires, _) in enumerate(ops):
        t = max(free[w] for w in wires)
        if t == len(layers):
            layers.append([])
        layers[t].append(i)
        for w in wires:
            free[w] = t + 1
    return layers


def _program(c, noise: NoiseSpec) -> tuple[tuple[int, ...], list]:
    """Flatten a circuit + noise spec into a list of steps: ("u", op) or ("n", op-list, channel)."""
    dims = circuit_dims(c)
    gates = [gate_local(g, dims) for g in c.gates]
    gates = [g for g in gates if g is not None]
    steps: list = []
    order = _layers(gates, len(dims)) if noise.idle else [[i] for i in range(len(gates))]
    idle_cache: dict[int, list[NoiseChannel]] = {}
    for layer in order:
        busy = set()
        for i in layer:
            wires, m = gates[i]
            busy.update(wires)
            steps.append(("u", _LocalOp(wires, m, dims)))
            for ws, ch in noise.for_gate(wires, dims):
                steps.append(("n", _channel_ops(ws, ch, dims), ch))
        if noise.idle:
            for w in range(len(dims)):
                if w not in busy:
                    d = dims[w]
                    if d not in idle_cache:
                        idle_cache[d] = noise.idle_channel.build(d, 1)
                    ch = idle_cache[d][0]
                    steps.append(("n", _channel_ops((w,), ch, dims), ch))
    return dims, steps


def _channel_ops(wires, ch: NoiseChannel, dims) -> list[_LocalOp]:
    mats = ch.mixture[1] if ch.mixture is not None else ch.kraus
    return [_LocalOp(wires, m, dims) for m in mats]


# ---------------------------------------------------------------------------
# trajectories

@dataclass(frozen=True)
class NoisyResult:
    fidelity: float
    stderr: float
    trajectories: int
    seed: int

    def to_json(self) -> dict:
        return {"fidelity": self.fidelity, "stderr": self.stderr,
                "trajectories": self.trajectories, "seed": self.seed}


class _Engine:
    """Shared state-update interface over dense arrays or sparse (idx, amp) pairs."""

    def __init__(self, dims: tuple[int, ...], sparse: bool):
        self.dims, self.sparse = dims, sparse

    def init(self, initial):
        if self.sparse:
            if isinstance(initial, SparseState):
                return (initial.idx.copy(), initial.amp.copy())
            if isinstance(initial, QuditState):
                s = SparseState.from_dense(initial)
                return (s.idx, s.amp)
            s = SparseState.basis(self.dims, initial)
            return (s.idx, s.amp)
        if isinstance(initial, SparseState):
            initial = initial.to_dense()
        if not isinstance(initial, QuditState):
            initial = QuditState.basis(self.dims, initial)
        return initial.amplitudes.reshape(self.dims).copy()

    def apply(self, state, op: _LocalOp):
        if self.sparse:
            return op.apply_sparse(*state)
        return op.apply_dense(state, self.dims)

    def sqnorm(self, state) -> float:
        a = state[1] if self.sparse else state
        return float(np.vdot(a, a).real)

    def scale(self, state, f):
        if self.sparse:
            return (state[0], state[1] * f)
        return state * f

    def overlap(self, a, b) -> complex:
        if self.sparse:
            return sparse_overlap(SparseState(self.dims, *a), SparseState(self.dims, *b))
        return complex(np.vdot(a, b))


def _choose_engine(dims, engine: str) -> bool:
    total = int(np.prod(dims, dtype=np.int64))
    if total > MAX_AMPLITUDES and engine == "dense":
        raise TooLarge(f"{total} amplitudes exceeds the dense cap")
    if engine == "auto":
        return total > DENSE_LIMIT
    return engine == "sparse"


def simulate_noisy(c, noise: NoiseSpec, trajectories: int = 1000, seed: int = 0,
                   initial=None, engine: str = "auto") -> NoisyResult:
    """Monte Carlo Kraus-trajectory estimate of the mean fidelity |<ideal|noisy>|^2.

    After every gate the channel for its gate class is sampled (Born
    probabilities; fixed probabilities for mixed-unitary channels). Each
    trajectory draws from its own child of ``SeedSequence(seed)``, so the
    estimate is bit-reproducible per seed. ``initial`` is a basis digit
    tuple, a :class:`QuditState` or a :class:`SparseState` (default all zeros).
    """
    if trajectories < 1:
        raise ValueError("trajectories must be >= 1")
    dims, steps = _program(c, noise)
    total = int(np.prod(dims, dtype=np.int64))
    if total > MAX_AMPLITUDES:
        raise TooLarge(f"{total} amplitudes exceeds cap {MAX_AMPLITUDES}")
    eng = _Engine(dims, _choose_engine(dims, engine))

    # ideal run, caching the state before each step
    state = eng.init(initial)
    prefix = []
    for st in steps:
        prefix.append(state)
        if st[0] == "u":
            state = eng.apply(state, st[1])
    ideal = state
    noise_steps = [i for i, st in enumerate(steps) if st[0] == "n"]
    # per noise step: probability of a non-identity branch, or None if state-dependent
    p_err = []
    for i in noise_steps:
        ch = steps[i][2]
        p_err.append(None if ch.mixture is None else 1.0 - float(ch.mixture[0][0]))

    children = np.random.SeedSequence(seed).spawn(trajectories)
    fids = np.empty(trajectories)
    for t, child in enumerate(children):
        rng = np.random.Generator(np.random.PCG64(child))
        draws = rng.random(len(noise_steps))
        start = None
        for j, (i, pe) in enumerate(zip(noise_steps, p_err)):
            if pe is None or draws[j] < pe:
                start = j
                break
        if start is None:
            fids[t] = 1.0
            continue
        state = prefix[noise_steps[start]]
        j = start
        for i in range(noise_steps[start], len(steps)):
            st = steps[i]
            if st[0] == "u":
                state = eng.apply(state, st[1])
                continue
            ops, ch = st[1], st[2]
            if ch.mixture is not None:
                pe = p_err[j]
                if draws[j] < pe:
                    probs = ch.mixture[0][1:]
                    k = 1 + int(rng.choice(len(probs), p=probs / probs.sum()))
                    state = eng.apply(state, ops[k])
            else:
                state = _sample_kraus(eng, state, ops, draws[j])
            j += 1
        fids[t] = min(1.0, abs(eng.overlap(ideal, state)) ** 2 / eng.sqnorm(state))
    mean = float(fids.mean())
    err = float(fids.std(ddof=1) / math.sqrt(trajectories)) if trajectories > 1 else 0.0
    return NoisyResult(mean, err, trajectories, seed)


def _sample_kraus(eng: _Engine, state, ops, u: float):
    """Pick Kraus branch k with probability ||K_k psi||^2 using the uniform draw ``u``."""
    acc = 0.0
    last = None
    for op in ops:
        cand = eng.apply(state, op)
        w = eng.sqnorm(cand)
        if w <= 0:
            continue
        last = (cand, w)
        acc += w
        if u < acc:
            break
    cand, w = last
    return eng.scale(cand, 1 / math.sqrt(w))


def density_matrix_fidelity(c, noise: NoiseSpec, initial=None) -> float:
    """Exact <ideal| rho |ideal> by density-matrix evolution; the oracle for <= 3 wires."""
    dims, steps = _program(c, noise)
    if len(dims) > 3:
        raise TooLarge("density-matrix path is limited to 3 wires")
    eng = _Engine(dims, False)
    psi = eng.init(initial)
    n = len(dims)
    rho = np.multiply.outer(psi, psi.conj())  # shape dims + dims
    ideal = psi
    for st in steps:
        if st[0] == "u":
            op = st[1]
            ideal = op.apply_dense(ideal, dims)
            rho = _conj_apply(rho, op, dims, n)
        else:
            ops, ch = st[1], st[2]
            weights = ch.mixture[0] if ch.mixture is not None else np.ones(len(ops))
            rho = sum(w * _conj_apply(rho, op, dims, n) for w, op in zip(weights, ops) if w > 0)
    total = int(np.prod(dims))
    v = ideal.reshape(total)
    return float(np.real(v.conj() @ rho.reshape(total, total) @ v))


def _conj_apply(rho, op: _LocalOp, dims, n):
    """op rho op^dagger for rho of shape dims + dims."""
    t = _apply_dense(rho, tuple(dims) + tuple(dims), op.wires, op.matrix)
    return _apply_dense(t, tuple(dims) + tuple(dims), [w + n for w in op.wires], op.matrix.conj())


def entangled_with_reference(dims_sys: Sequence[int]) -> QuditState:
    """Maximally entangled state between the first k wires and k reference wires appended after them."""
    dims_sys = list(dims_sys)
    dims = tuple(dims_sys + dims_sys)
    d = int(np.prod(dims_sys))
    amp = np.zeros(d * d, dtype=complex)
    amp[np.arange(d) * d + np.arange(d)] = 1 / math.sqrt(d)
    return QuditState(dims, amp)
