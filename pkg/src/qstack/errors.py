"""Exception types shared across the toolkit."""


class QStackError(Exception):
    """Base class for every error raised by this package."""


class QasmSyntaxError(QStackError, SyntaxError):
    """Malformed QASM source. Carries 1-based ``lineno`` and ``offset`` (column)."""

    def __init__(self, msg: str, lineno: int, offset: int):
        SyntaxError.__init__(self, f"{msg} (line {lineno}, column {offset})")
        self.msg = msg
        self.lineno = lineno
        self.offset = offset

    def __str__(self):
        return f"line {self.lineno}, column {self.offset}: {self.msg}"


class UnknownGate(QStackError):
    pass


class ArityMismatch(QStackError):
    pass


class UndeclaredWire(QStackError):
    pass


class UnsupportedGate(QStackError):
    pass


class UndefinedAtDimension(QStackError):
    pass


class InvalidCircuit(QStackError):
    pass


# device model
class SchemaError(QStackError):
    pass


class RangeError(QStackError):
    pass


class GraphError(QStackError):
    pass


class IllegalSite(QStackError):
    pass


class Unreachable(QStackError):
    pass


# scheduler / mapper
class TooLargeForMatrixCheck(QStackError):
    pass


class UnroutedGate(QStackError):
    pass


class TooLarge(QStackError):
    pass


class Infeasible(QStackError):
    pass


# qutrit
class InvalidN(QStackError):
    pass


class UnsupportedAction(QStackError):
    pass


class NotDecomposed(QStackError):
    pass


# simulator / pulse
class DimensionMismatch(QStackError):
    pass


class ShapeMismatch(QStackError):
    pass


class BlockTooLarge(QStackError):
    pass
