"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py`` (the lines are echoed in the
terminal summary) or directly with ``python3 tests/test_acceptance.py``.
"""
import itertools
import math
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent))

from qstack.circuit import decompose_swap, emit_qasm, parse_qasm
from qstack.device import DeviceModel
from qstack.mapper import ObjectiveWeights, enumerate_map, exact_map, heuristic_map, route
from qstack.pulse import (ControlProblem, GrapeConfig, HamiltonianSpec, PulseSequence, block_unitary,
                          finite_difference_gradient, grape_gradient, grape_optimize, minimal_duration,
                          physical_schedule, propagate, fidelity)
from qstack.circuit import circuit, gate, gate_unitary
from qstack.qutrit import decompose, generalized_toffoli, qubit_baseline_toffoli, r_squared, scaling_table
from qstack.scheduler import aggregate_diagonal_blocks, asap_schedule, cls_schedule, qaoa_triangle, scheduled_circuit
from qstack.simulator import NoiseSpec, QuditState, apply_gate, circuit_unitary, phase_distance, propagate_basis_states, \
    simulate_noisy

from helpers import mapping_instance, random_circuit

RESULTS: list[str] = []
DUR = {"1q": 50.0, "2q": 300.0, "swap": 900.0, "3q": 2250.0, "measure": 1000.0}


def record(k: int, title: str, ok: bool, detail: str, t0: float):
    line = f"{'PASS' if ok else 'FAIL'} criterion {k:2d} ({title}): {detail} [{time.perf_counter() - t0:.1f}s]"
    RESULTS.append(line)
    print(line)
    assert ok, line


def all_inputs(n_wires):
    return np.array(list(itertools.product((0, 1), repeat=n_wires)), dtype=np.int64)


def test_criterion_01_generalized_toffoli():
    t0 = time.perf_counter()
    bad = []
    for n in range(2, 11):
        ins = all_inputs(n + 1)
        expect = ins.copy()
        expect[:, -1] ^= np.all(ins[:, :-1] == 1, axis=1)
        if not np.array_equal(propagate_basis_states(generalized_toffoli(n), ins), expect):
            bad.append(n)
    ok = not bad and time.perf_counter() - t0 < 120
    record(1, "generalized Toffoli truth tables", ok, f"N=2..10 all basis inputs, mismatches at {bad}", t0)


def test_criterion_02_qutrit_scaling():
    t0 = time.perf_counter()
    rows = {r.n_controls: r for r in scaling_table(range(3, 32))}
    two_ratio = {n: rows[n].two_qudit_count / n for n in (7, 15, 31)}
    depth_ratio = {n: rows[n].depth / math.log2(n) for n in (7, 15, 31)}
    ns = np.array(sorted(rows))
    r2_two = r_squared(ns, [rows[n].two_qudit_count for n in ns])
    r2_depth = r_squared(np.log2(ns), [rows[n].depth for n in ns])
    checks = {
        "two/N in [3,12]": all(3 <= v <= 12 for v in two_ratio.values()),
        "depth/log2N in [19,76]": all(19 <= v <= 76 for v in depth_ratio.values()),
        "R2(two ~ N) > 0.999": r2_two > 0.999,
        "R2(depth ~ log2 N) > 0.999": r2_depth > 0.999,
    }
    detail = (f"two/N={ {n: round(v, 2) for n, v in two_ratio.items()} } "
              f"depth/log2N={ {n: round(v, 2) for n, v in depth_ratio.items()} } "
              f"R2_two={r2_two:.4f} R2_depth={r2_depth:.4f}; failed: {[k for k, v in checks.items() if not v]}")
    record(2, "qutrit cost scaling", all(checks.values()) and time.perf_counter() - t0 < 60, detail, t0)


def test_criterion_03_qubit_subspace_closure():
    t0 = time.perf_counter()
    worst = 0.0
    for n in range(2, 11):
        out = propagate_basis_states(generalized_toffoli(n), all_inputs(n + 1))
        worst = max(worst, float(np.any(out == 2)))
    # the decomposed gate sequences pass through non-permutation gates; check them on full state vectors
    for n in range(2, 6):
        c = decompose(generalized_toffoli(n))
        for digits in all_inputs(n + 1):
            s = QuditState.basis(c.dims, digits)
            for g in c.gates:
                s = apply_gate(s, g)
            worst = max(worst, s.level_population(2))
    record(3, "qubit-subspace closure", worst < 1e-10, f"max final |2> population {worst:.2e}", t0)


def test_criterion_04_noisy_ordering():
    t0 = time.perf_counter()
    n, traj = 13, 10_000
    noise = NoiseSpec.default(p_1q=0.001, p_2q=0.01)
    q = simulate_noisy(decompose(generalized_toffoli(n)), noise, trajectories=traj, seed=1, initial=(1,) * n + (0,))
    b = simulate_noisy(qubit_baseline_toffoli(n), noise, trajectories=traj, seed=1, initial=(1,) * n + (0, 0))
    gap = (q.fidelity - b.fidelity) / math.hypot(q.stderr, b.stderr)
    ok = gap > 5 and time.perf_counter() - t0 < 1800
    record(4, "noisy qutrit vs qubit ordering", ok,
           f"qutrit {q.fidelity:.4f}+-{q.stderr:.4f} vs baseline {b.fidelity:.4f}+-{b.stderr:.4f} ({gap:.1f} sigma)", t0)


def test_criterion_05_mapping_optimality():
    t0 = time.perf_counter()
    agree, exact_ok = 0, 0
    for seed in range(100):
        c, dev, w = mapping_instance(seed)
        _, ex = exact_map(c, dev, w)
        _, he = heuristic_map(c, dev, w, seed=seed)
        best = max(v for v, _ in enumerate_map(c, dev, w))
        agree += abs(he.log_reliability - ex.log_reliability) <= 1e-9
        exact_ok += abs(ex.log_reliability - best) <= 1e-9
    ok = agree >= 90 and exact_ok == 100 and time.perf_counter() - t0 < 300
    record(5, "mapping optimality", ok, f"heuristic = exact on {agree}/100, exact = enumeration on {exact_ok}/100", t0)


def two_region_ladder():
    """2 x 4 ladder; the square {0, 1, 4, 5} is good, everything else bad."""
    edges = [(i, i + 1) for i in range(3)] + [(i, i + 1) for i in range(4, 7)] + [(i, i + 4) for i in range(4)]
    good = {(0, 1), (4, 5), (0, 4), (1, 5)}
    eps = {e: 0.02 if e in good else 0.20 for e in edges}
    return DeviceModel(8, edges, eps, (0.002,) * 8, (0.04,) * 8, (40.0,) * 8), good


def test_criterion_06_noise_adaptivity():
    t0 = time.perf_counter()
    dev, good = two_region_ladder()
    programs = {
        "4-cycle": circuit(4, [gate("cx", 0, 1), gate("cx", 1, 2), gate("cx", 2, 3), gate("cx", 3, 0)]),
        "3-chain": circuit(3, [gate("cx", 0, 1), gate("h", 1), gate("cx", 1, 2), gate("cx", 0, 1)]),
        "pair": circuit(2, [gate("h", 0), gate("cx", 0, 1), gate("cx", 1, 0)]),
    }
    bad = []
    n_opt = 0
    w = ObjectiveWeights(0.5)
    for name, c in programs.items():
        table = enumerate_map(c, dev, w)
        top = max(v for v, _ in table)
        # a SWAP-free embedding inside the good region exists for each program
        assert any(route(c, m, dev, w).swap_count == 0 and set(m.assign) <= {0, 1, 4, 5} for _, m in table)
        for v, m in table:
            if v < top - 1e-12:
                continue
            n_opt += 1
            rc = route(c, m, dev, w)
            used = {tuple(sorted(g.operands)) for g in rc.circuit.gates if len(g.operands) == 2}
            if not used <= good:
                bad.append((name, m.assign))
        _, rc = exact_map(c, dev, w)
        if not {tuple(sorted(g.operands)) for g in rc.circuit.gates if len(g.operands) == 2} <= good:
            bad.append((name, "exact_map"))
    ok = not bad and time.perf_counter() - t0 < 10
    record(6, "noise-adaptivity witness", ok, f"{n_opt} optimal mappings checked, off-region: {bad}", t0)


def random_control_problem(rng):
    d = 2 ** int(rng.integers(1, 3))
    n_ctrl = int(rng.integers(1, 5))
    n_steps = int(rng.integers(1, 16))

    def herm(scale):
        a = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        return scale * (a + a.conj().T) / 2

    q, _ = np.linalg.qr(rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)))
    p = ControlProblem(herm(0.3), tuple(herm(1.0) for _ in range(n_ctrl)), float(rng.uniform(1, 20)), n_steps, q)
    return p, PulseSequence(rng.normal(scale=0.5, size=(n_ctrl, n_steps)), p.dt)


def test_criterion_07_grape():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        p, u = random_control_problem(rng)
        g, fd = grape_gradient(p, u), finite_difference_gradient(p, u, h=1e-6)
        mask = np.abs(g) > 1e-8
        if mask.any():
            worst = max(worst, float(np.max(np.abs(g[mask] - fd[mask]) / np.abs(g[mask]))))
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    sy = np.array([[0, -1j], [1j, 0]], dtype=complex)
    px = ControlProblem(np.zeros((2, 2)), (sx / 2, sy / 2), 10.0, 20, sx)
    rx = grape_optimize(px, None, GrapeConfig(max_iters=500), seed=0)
    fx = fidelity(propagate(px, rx.pulse), sx)
    hw = HamiltonianSpec()
    cnot = gate_unitary(gate("cx", 0, 1))
    pc = hw.problem(cnot, 60.0)
    rc = grape_optimize(pc, None, GrapeConfig(max_iters=500, u_max=hw.drive_strength), seed=1)
    fc = fidelity(propagate(pc, rc.pulse), cnot)
    ok = worst < 1e-4 and fx >= 0.999 and fc >= 0.99 and time.perf_counter() - t0 < 600
    record(7, "GRAPE gradient and convergence", ok,
           f"max rel grad error {worst:.1e}, X fidelity {fx:.5f} ({rx.iterations} it), CNOT fidelity {fc:.5f}", t0)


def test_criterion_08_aggregation_speedup():
    t0 = time.perf_counter()
    hw, cfg = HamiltonianSpec(), GrapeConfig()
    gamma = 5.67
    zz = [gate("cx", 0, 1), gate("rz", 1, theta=gamma), gate("cx", 0, 1)]
    whole = minimal_duration(block_unitary(zz)[0], hw, cfg).duration_ns
    parts = [minimal_duration(block_unitary([g])[0], hw, cfg).duration_ns for g in zz]
    c = qaoa_triangle()
    _, s_agg, _ = physical_schedule(c, hw, cfg, aggregate=True)
    _, s_gate, _ = physical_schedule(c, hw, cfg, aggregate=False)
    ok = whole < sum(parts) and s_agg.makespan < s_gate.makespan and time.perf_counter() - t0 < 1200
    record(8, "aggregation speedup", ok,
           f"ZZ block {whole:g} ns vs parts {'+'.join(f'{p:g}' for p in parts)} = {sum(parts):g} ns; "
           f"QAOA makespan {s_agg.makespan:g} ns aggregated vs {s_gate.makespan:g} ns gate-by-gate "
           f"(ratio {s_gate.makespan / s_agg.makespan:.2f})", t0)


def test_criterion_09_scheduling_soundness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(99)
    worst_err, dominated = 0.0, 0
    for _ in range(200):
        c = random_circuit(rng, int(rng.integers(1, 5)), int(rng.integers(0, 30)))
        s = cls_schedule(c, durations=DUR)
        worst_err = max(worst_err, phase_distance(circuit_unitary(c), circuit_unitary(scheduled_circuit(c, s))))
        dominated += s.makespan <= asap_schedule(c, DUR).makespan + 1e-9
    q = aggregate_diagonal_blocks(qaoa_triangle())
    cls_q, asap_q = cls_schedule(q, durations=DUR).makespan, asap_schedule(q, DUR).makespan
    ok = worst_err <= 1e-10 and dominated == 200 and cls_q < asap_q and time.perf_counter() - t0 < 300
    record(9, "scheduling soundness", ok,
           f"max unitary error {worst_err:.1e}, CLS <= ASAP on {dominated}/200, QAOA {cls_q:g} vs {asap_q:g} ns", t0)


def test_criterion_10_round_trip():
    t0 = time.perf_counter()
    rng = np.random.default_rng(10)
    rt_ok, swap_ok = 0, 0
    for _ in range(500):
        c = random_circuit(rng, int(rng.integers(1, 5)), int(rng.integers(0, 25)))
        rt_ok += parse_qasm(emit_qasm(c)).structurally_equal(c)
        swap_ok += phase_distance(circuit_unitary(c), circuit_unitary(decompose_swap(c))) <= 1e-10
    ok = rt_ok == 500 and swap_ok == 500 and time.perf_counter() - t0 < 60
    record(10, "QASM round trip and SWAP decomposition", ok,
           f"round trips {rt_ok}/500, SWAP decompositions {swap_ok}/500", t0)


if __name__ == "__main__":
    failed = 0
    for name, fn in sorted((k, v) for k, v in globals().items() if k.startswith("test_criterion")):
        try:
            fn()
        except AssertionError:
            failed += 1
    sys.exit(1 if failed else 0)
