"""Exception hierarchy shared by all solver and simulation modules."""

from __future__ import annotations


class MfgLqgError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 2


class ModelError(MfgLqgError, ValueError):
    """A model ingredient violates one of its invariants."""

    exit_code = 1

    def __init__(self, message: str, path: str | None = None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class SchemaError(ModelError):
    """A configuration document does not match the expected schema."""


class NegativeOffDiagonal(ModelError):
    def __init__(self, i: int, j: int, value: float):
        self.i, self.j, self.value = i, j, value
        super().__init__(f"off-diagonal rate q[{i}][{j}] = {value!r} is negative", "generator")


class RowSumNonzero(ModelError):
    def __init__(self, i: int, residual: float):
        self.i, self.residual = i, residual
        super().__init__(f"row {i} sums to {residual!r}, expected 0", "generator")


class OutOfRange(MfgLqgError, ValueError):
    """A time or state outside the admissible domain was requested."""

    exit_code = 1


class DimensionMismatch(MfgLqgError, ValueError):
    exit_code = 1


class ShapeMismatch(DimensionMismatch):
    pass


class GridMismatch(DimensionMismatch):
    pass


class BlowUp(MfgLqgError, ArithmeticError):
    """A backward Riccati integration left the representable range."""

    def __init__(self, t: float, state: int, value: float):
        self.t, self.state, self.value = t, state, value
        super().__init__(f"solution blew up at t={t:.6g} in state {state} (|value| = {abs(value):.3g})")


class NoConvergence(MfgLqgError, ArithmeticError):
    def __init__(self, iterations: int, residual: float):
        self.iterations, self.residual = iterations, residual
        super().__init__(f"fixed-point iteration stalled after {iterations} iterations (residual {residual:.3g})")


class CapExceeded(MfgLqgError, ValueError):
    exit_code = 1

    def __init__(self, n_players: int, cap: int):
        self.n_players, self.cap = n_players, cap
        super().__init__(f"full N-player system requested for N={n_players}, cap is {cap}")


class DomainError(MfgLqgError, ValueError):
    """The closed-form solution does not exist at the requested time."""


class NonPositiveValue(MfgLqgError, ValueError):
    pass


class EmptySamples(MfgLqgError, ValueError):
    pass
