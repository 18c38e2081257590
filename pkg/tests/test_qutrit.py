import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qstack.errors import InvalidN, NotDecomposed, UnsupportedAction
from qstack.qutrit import (QutritCircuit, cost_report, decompose, decompose_ternary, dumps, generalized_toffoli,
                           greedy_depth, loads, qgate, qubit_baseline_toffoli, r_squared, scaling_table,
                           toffoli_via_qutrit)
from qstack.simulator import circuit_unitary, phase_distance, propagate_basis_states


def qubit_inputs(n_wires):
    return np.array(list(itertools.product((0, 1), repeat=n_wires)), dtype=np.int64)


def expected_mcx(inputs):
    out = inputs.copy()
    out[:, -1] ^= np.all(inputs[:, :-1] == 1, axis=1)
    return out


def embedded_unitary(g, n_wires=3):
    return circuit_unitary(QutritCircuit(n_wires, [g]))


class TestToffoliViaQutrit:
    def test_110(self):
        out = propagate_basis_states(toffoli_via_qutrit(), [[1, 1, 0]])
        assert out.tolist() == [[1, 1, 1]]

    def test_000(self):
        assert propagate_basis_states(toffoli_via_qutrit(), [[0, 0, 0]]).tolist() == [[0, 0, 0]]

    def test_qubit_block_is_toffoli(self):
        u = circuit_unitary(toffoli_via_qutrit())
        idx = [int("".join(map(str, b)), 3) for b in itertools.product((0, 1), repeat=3)]
        sub = u[np.ix_(idx, idx)]
        toffoli = np.eye(8)[:, [0, 1, 2, 3, 4, 5, 7, 6]]
        assert np.allclose(sub, toffoli, atol=1e-12)

    def test_structure(self):
        c = toffoli_via_qutrit()
        assert [(g.action, g.controls, g.target) for g in c.gates] == [
            ("X+1", ((0, 1),), 1), ("X", ((1, 2),), 2), ("X-1", ((0, 1),), 1)]


class TestGeneralizedToffoli:
    def test_invalid(self):
        with pytest.raises(InvalidN):
            generalized_toffoli(1)

    def test_n2_matches_toffoli_via_qutrit(self):
        ins = qubit_inputs(3)
        assert np.array_equal(propagate_basis_states(generalized_toffoli(2), ins),
                              propagate_basis_states(toffoli_via_qutrit(), ins))

    @pytest.mark.parametrize("n", list(range(2, 11)) + [15])
    def test_truth_table(self, n):
        c = generalized_toffoli(n)
        assert c.n_wires == n + 1
        ins = qubit_inputs(n + 1)
        out = propagate_basis_states(c, ins)
        assert np.array_equal(out, expected_mcx(ins))

    def test_n15_tree_shape(self):
        # full binary tree over 15 controls: 7 lifts up, 1 flip, 7 lifts down
        c = generalized_toffoli(15)
        assert len(c) == 15
        assert sum(g.action == "X" for g in c.gates) == 1
        flip = next(g for g in c.gates if g.action == "X")
        assert flip.controls[0][1] == 2 and len(flip.controls) == 1
        bottom = [g for g in c.gates[:7] if all(s == 1 for _, s in g.controls)]
        assert len(bottom) == 4

    def test_every_internal_gate_has_at_most_two_controls(self):
        for n in range(2, 32):
            assert all(len(g.controls) <= 2 for g in generalized_toffoli(n).gates)


class TestDecompose:
    @pytest.mark.parametrize("action", ["X+1", "X-1", "X"])
    @pytest.mark.parametrize("sa,sb", list(itertools.product((1, 2), repeat=2)))
    def test_unitary_and_budget(self, action, sa, sb):
        g = qgate(action, 2, (0, sa), (1, sb))
        d = decompose_ternary(g)
        two = sum(len(x.wires) == 2 for x in d.gates)
        one = sum(len(x.wires) == 1 for x in d.gates)
        assert all(len(x.wires) <= 2 for x in d.gates)
        assert two <= 6 and one <= 7
        assert phase_distance(embedded_unitary(g), circuit_unitary(d)) <= 1e-9

    def test_other_wire_orders(self):
        g = qgate("X+1", 0, (2, 1), (1, 2))
        assert phase_distance(embedded_unitary(g), circuit_unitary(decompose_ternary(g))) <= 1e-9

    def test_single_control_passthrough(self):
        g = qgate("X+1", 1, (0, 1))
        assert decompose_ternary(g).gates == (g,)

    def test_generic_u_unsupported(self):
        with pytest.raises(UnsupportedAction):
            decompose_ternary(qgate("U", 2, (0, 1), (1, 1), u=np.diag([1, 1j, 1])))

    def test_real_rotation_supported(self):
        theta = 0.3
        u = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        g = qgate("U", 2, (0, 1), (1, 1), u=u)
        assert phase_distance(embedded_unitary(g), circuit_unitary(decompose_ternary(g))) <= 1e-9

    @pytest.mark.parametrize("n", [2, 3, 4, 5])
    def test_decomposed_gt_unitary(self, n):
        c = generalized_toffoli(n)
        assert phase_distance(circuit_unitary(c, max_dim=3 ** 6), circuit_unitary(decompose(c), max_dim=3 ** 6)) <= 1e-9


class TestCosts:
    def test_empty(self):
        r = cost_report(QutritCircuit(2, []))
        assert (r.depth, r.two_qudit_count, r.single_qudit_count) == (0, 0, 0)

    def test_single_two_qutrit_gate(self):
        r = cost_report(QutritCircuit(2, [qgate("X+1", 1, (0, 1))]))
        assert (r.depth, r.two_qudit_count) == (1, 1)

    def test_not_decomposed(self):
        with pytest.raises(NotDecomposed):
            cost_report(generalized_toffoli(3))

    def test_greedy_depth(self):
        assert greedy_depth([(0,), (1,), (0, 1), (2,)]) == 2

    def test_two_qutrit_count_linear(self):
        rows = scaling_table(range(3, 32))
        ns = np.array([r.n_controls for r in rows])
        two = np.array([r.two_qudit_count for r in rows])
        assert r_squared(ns, two) > 0.999
        for r in rows:
            assert r.depth <= r.two_qudit_count + r.single_qudit_count

    def test_two_qutrit_ratio_band(self):
        for r in scaling_table([7, 15, 31]):
            assert 3 <= r.two_qudit_count / r.n_controls <= 12

    @settings(max_examples=20, deadline=None)
    @given(st.integers(2, 40))
    def test_ancilla_free_and_closed(self, n):
        c = generalized_toffoli(n)
        assert c.n_wires == n + 1
        rng = np.random.default_rng(n)
        ins = rng.integers(0, 2, size=(64, n + 1))
        ins[0, :-1] = 1
        out = propagate_basis_states(c, ins)
        assert out.max() <= 1
        assert np.array_equal(out, expected_mcx(ins))


class TestTextFormat:
    def test_round_trip(self):
        c = decompose(generalized_toffoli(4))
        back = loads(dumps(c))
        assert back.n_wires == c.n_wires
        assert phase_distance(circuit_unitary(c), circuit_unitary(back)) <= 1e-12

    def test_line_format(self):
        text = dumps(toffoli_via_qutrit())
        assert "gate X+1 controls=[(0,1)] target=1" in text.splitlines()


class TestQubitBaseline:
    @pytest.mark.parametrize("n", range(1, 9))
    def test_truth_table_with_dirty_ancilla(self, n):
        c = qubit_baseline_toffoli(n, decompose_toffolis=False)
        ins = qubit_inputs(n + 2)
        out = propagate_basis_states(c, ins)
        expect = ins.copy()
        expect[:, n] ^= np.all(ins[:, :n] == 1, axis=1)
        assert np.array_equal(out, expect)

    def test_decomposed_unitary(self):
        a, b = qubit_baseline_toffoli(3, False), qubit_baseline_toffoli(3, True)
        assert phase_distance(circuit_unitary(a), circuit_unitary(b)) <= 1e-9

    def test_linear_size(self):
        sizes = [len(qubit_baseline_toffoli(n, False)) for n in range(5, 20)]
        assert r_squared(np.arange(5, 20), sizes) > 0.99
