"""qstack: circuit IR, scheduling, noise-adaptive mapping, qutrit synthesis, simulation and pulse optimization."""
from .circuit import Circuit, Gate, GateKind, circuit, gate, parse_qasm, emit_qasm

__all__ = ["Circuit", "Gate", "GateKind", "circuit", "gate", "parse_qasm", "emit_qasm"]
__version__ = "0.1.0"
