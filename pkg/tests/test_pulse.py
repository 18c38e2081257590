import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from qstack.circuit import circuit, gate, gate_unitary
from qstack.errors import BlockTooLarge, DimensionMismatch, ShapeMismatch
from qstack.pulse import (ControlProblem, GrapeConfig, HamiltonianSpec, PulseSequence, aggregate_and_optimize,
                          block_unitary, finite_difference_gradient, fidelity, grape_gradient, grape_optimize,
                          minimal_duration, physical_schedule, propagate)
from qstack.scheduler import CommutingBlock, aggregate_diagonal_blocks, aggregates, qaoa_triangle

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
X = SX
HW = HamiltonianSpec()
CFG = GrapeConfig()


def random_hermitian(rng, d, scale=1.0):
    a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return scale * (a + a.conj().T) / 2


def random_problem(seed):
    rng = np.random.default_rng(seed)
    d = 2 ** int(rng.integers(1, 3))
    n_ctrl = int(rng.integers(1, 4))
    n_steps = int(rng.integers(1, 12))
    q, _ = np.linalg.qr(rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)))
    p = ControlProblem(random_hermitian(rng, d, 0.3), tuple(random_hermitian(rng, d) for _ in range(n_ctrl)),
                       float(rng.uniform(1, 10)), n_steps, q)
    u = PulseSequence(rng.normal(scale=0.5, size=(n_ctrl, n_steps)), p.dt)
    return p, u


def x_problem(T=10.0, n=20):
    return ControlProblem(np.zeros((2, 2)), (SX / 2, SY / 2), T, n, X)


class TestPropagate:
    def test_identity(self):
        p = ControlProblem(np.zeros((2, 2)), (SX,), 5.0, 4, np.eye(2))
        assert np.allclose(propagate(p, PulseSequence(np.zeros((1, 4)), p.dt)), np.eye(2))

    def test_rabi_pi_pulse(self):
        T = 10.0
        p = ControlProblem(np.zeros((2, 2)), (SX / 2,), T, 5, X)
        u = propagate(p, PulseSequence(np.full((1, 5), math.pi / T), p.dt))
        assert fidelity(u, X) == pytest.approx(1.0, abs=1e-12)

    def test_matches_expm_product(self):
        p, u = random_problem(3)
        ref = np.eye(p.dim, dtype=complex)
        for k in range(p.n_steps):
            h = p.h_drift + sum(a * hc for a, hc in zip(u.amplitudes[:, k], p.h_controls))
            ref = expm(-1j * p.dt * h) @ ref
        assert np.allclose(propagate(p, u), ref, atol=1e-10)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 31))
    def test_unitary(self, seed):
        p, u = random_problem(seed)
        m = propagate(p, u)
        assert np.max(np.abs(m.conj().T @ m - np.eye(p.dim))) < 1e-9

    def test_shape_mismatch(self):
        p = x_problem()
        with pytest.raises(ShapeMismatch):
            propagate(p, PulseSequence(np.zeros((1, 20)), p.dt))
        with pytest.raises(ShapeMismatch):
            ControlProblem(np.zeros((2, 2)), (np.zeros((4, 4)),), 1.0, 1, np.eye(2))

    def test_non_hermitian(self):
        with pytest.raises(ValueError):
            ControlProblem(np.zeros((2, 2)), (np.array([[0, 1], [0, 0]]),), 1.0, 1, np.eye(2))


class TestFidelity:
    def test_equal(self):
        assert fidelity(X, X) == pytest.approx(1.0)

    def test_global_phase(self):
        assert fidelity(np.exp(0.7j) * X, X) == pytest.approx(1.0)

    def test_traceless(self):
        assert fidelity(np.eye(2), X) == 0.0

    def test_mismatch(self):
        with pytest.raises(DimensionMismatch):
            fidelity(np.eye(2), np.eye(4))


class TestGradient:
    @pytest.mark.parametrize("seed", range(20))
    def test_matches_finite_differences(self, seed):
        p, u = random_problem(seed)
        g, fd = grape_gradient(p, u), finite_difference_gradient(p, u)
        mask = np.abs(g) > 1e-8
        assert np.all(np.abs(g[mask] - fd[mask]) <= 1e-4 * np.abs(g[mask]))

    def test_zero_controls(self):
        p = ControlProblem(SX, (np.zeros((2, 2)),), 3.0, 5, np.eye(2))
        assert np.all(grape_gradient(p, PulseSequence(np.ones((1, 5)), p.dt)) == 0)

    def test_stationary_at_optimum(self):
        T = 10.0
        p = ControlProblem(np.zeros((2, 2)), (SX / 2, SY / 2), T, 5, X)
        u = PulseSequence(np.vstack([np.full(5, math.pi / T), np.zeros(5)]), p.dt)
        assert np.max(np.abs(grape_gradient(p, u))) < 1e-6


class TestOptimize:
    def test_x_gate(self):
        p = x_problem()
        res = grape_optimize(p, None, CFG, seed=0)
        assert res.iterations <= 500
        assert res.fidelity >= 0.999
        assert fidelity(propagate(p, res.pulse), X) == pytest.approx(res.fidelity, abs=1e-12)

    def test_identity_returns_immediately(self):
        p = ControlProblem(np.zeros((2, 2)), (SX / 2, SY / 2), 10.0, 20, np.eye(2))
        res = grape_optimize(p, PulseSequence(np.zeros((2, 20)), p.dt), CFG)
        assert res.iterations == 0 and res.fidelity == pytest.approx(1.0)

    def test_cnot_with_zz_drift(self):
        cnot = gate_unitary(gate("cx", 0, 1))
        p = HW.problem(cnot, 60.0)
        res = grape_optimize(p, None, GrapeConfig(u_max=HW.drive_strength), seed=1)
        assert res.fidelity >= 0.99
        assert fidelity(propagate(p, res.pulse), cnot) >= 0.99

    @pytest.mark.parametrize("seed", range(5))
    def test_monotone_history(self, seed):
        p, _ = random_problem(seed)
        res = grape_optimize(p, None, GrapeConfig(max_iters=60), seed=seed)
        assert np.all(np.diff(res.history) >= 0)

    def test_clipping(self):
        p = x_problem(T=30.0, n=10)
        res = grape_optimize(p, PulseSequence(np.full((2, 10), 1.0), p.dt), GrapeConfig(u_max=0.15))
        assert np.max(np.abs(res.pulse.amplitudes)) <= 0.15

    def test_seeded(self):
        p = x_problem()
        a, b = grape_optimize(p, None, CFG, seed=4), grape_optimize(p, None, CFG, seed=4)
        assert np.array_equal(a.pulse.amplitudes, b.pulse.amplitudes)

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            GrapeConfig(max_iters=0)
        with pytest.raises(ValueError):
            GrapeConfig(u_max=-1.0)


class TestPulseSequence:
    def test_csv(self):
        text = PulseSequence(np.array([[0.5, -0.25]]), 1.0).to_csv().splitlines()
        assert text == ["control_index,step,amplitude", "0,0,0.5", "0,1,-0.25"]

    def test_resample_constant(self):
        r = PulseSequence(np.full((2, 4), 0.3), 2.0).resampled(8, 1.0)
        assert r.amplitudes.shape == (2, 8) and np.allclose(r.amplitudes, 0.3)


class TestBlocks:
    def test_block_unitary(self):
        u, wires = block_unitary([gate("cx", 2, 5)])
        assert wires == (2, 5) and np.allclose(u, gate_unitary(gate("cx", 0, 1)))

    def test_block_too_large(self):
        with pytest.raises(BlockTooLarge):
            HW.operators(4)
        c = circuit(4, [gate("h", 0), CommutingBlock((gate("cz", 0, 1), gate("cz", 2, 3))).as_gate()])
        with pytest.raises(BlockTooLarge):
            aggregate_and_optimize(c, HW, CFG)

    def test_hamiltonian_from_json(self, tmp_path):
        f = tmp_path / "hw.json"
        f.write_text('{"n_qubits": 2, "drive_strength": 0.3, "coupling_strength": 0.01}')
        assert HamiltonianSpec.from_json(f) == HamiltonianSpec(2, 0.3, 0.01)

    def test_identity_block_zero_duration(self):
        assert minimal_duration(np.eye(2), HW, CFG).duration_ns == 0.0

    def test_single_x_block_no_longer_than_x(self):
        x = minimal_duration(X, HW, CFG)
        blk = aggregate_and_optimize(circuit(1, [gate("x", 0)]), HW, CFG)
        assert blk.durations[0] <= x.duration_ns
        assert blk.fidelities[0] >= 0.999

    def test_minimal_is_tight(self):
        r = minimal_duration(X, HW, CFG)
        assert r.fidelity >= 0.999
        # a pi rotation at the amplitude bound needs at least pi / u_max
        assert r.duration_ns >= math.pi / HW.drive_strength - 1

    @pytest.mark.parametrize("parts", [[("h",), ("x",)], [("rz", 0.8), ("h",)], [("rx", 1.2), ("ry", 0.4)]])
    def test_duration_dominance_single_qubit(self, parts):
        gs = [gate(p[0], 0, theta=p[1] if len(p) > 1 else None) for p in parts]
        whole = minimal_duration(block_unitary(gs)[0], HW, CFG).duration_ns
        split = sum(minimal_duration(block_unitary([g])[0], HW, CFG).duration_ns for g in gs)
        assert whole <= split + 2


@pytest.fixture(scope="module")
def zz_durations():
    zz = [gate("cx", 0, 1), gate("rz", 1, theta=5.67), gate("cx", 0, 1)]
    whole = minimal_duration(block_unitary(zz)[0], HW, CFG).duration_ns
    parts = [minimal_duration(block_unitary([g])[0], HW, CFG).duration_ns for g in zz]
    return whole, parts


def test_zz_block_shorter_than_components(zz_durations):
    whole, parts = zz_durations
    assert whole < sum(parts)


def test_aggregated_qaoa_blocks_get_joint_pulses():
    c = aggregate_diagonal_blocks(qaoa_triangle())
    blocks = {b.id for b in aggregates(c)}
    comp = aggregate_and_optimize(c, HW, CFG, gate_ids=sorted(blocks))
    assert set(comp.durations) == blocks
    assert all(f >= 0.999 for f in comp.fidelities.values())
    # the three ZZ blocks are identical up to relabelling, so one duration
    assert len(set(comp.durations.values())) == 1


def test_physical_schedule_single_qubit_circuit():
    c = circuit(2, [gate("h", 0), gate("h", 1), gate("rz", 0, theta=0.3)])
    work, sched, comp = physical_schedule(c, HW, CFG)
    assert len(work) == 3
    d = comp.durations
    # wire 0 runs its two pulses back to back, wire 1 in parallel
    assert sched.makespan == pytest.approx(max(d[0] + d[2], d[1]))
    assert d[0] == d[1]
