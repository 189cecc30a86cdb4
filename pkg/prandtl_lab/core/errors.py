"""Exception hierarchy shared by the numerical modules and the service layer."""
from typing import Iterable, Optional, Sequence, Tuple


class LabError(Exception):
    """Base class for every failure raised by prandtl_lab."""


class ParameterError(LabError, ValueError):
    """An input violates a documented precondition."""


class GridError(ParameterError):
    pass


class FieldRoleError(ParameterError):
    pass


class GridMismatchError(ParameterError):
    pass


class CFLViolation(LabError):
    def __init__(self, dt: float, limit: float):
        super().__init__(f"dt={dt:.6g} exceeds the CFL bound {limit:.6g}")
        self.dt = dt
        self.limit = limit


class NonFiniteError(LabError):
    """Non-finite value produced by a step; ``node`` is the first offending index."""

    def __init__(self, node: Tuple[int, ...], t: Optional[float] = None, what: str = "u"):
        where = f" at t={t:.6g}" if t is not None else ""
        super().__init__(f"non-finite {what} at node {node}{where}")
        self.node = node
        self.t = t


class QuadratureError(LabError):
    pass


class DecayError(LabError):
    """Integrand or field does not decay toward the truncation boundary."""


class TailError(DecayError):
    pass


class ResolutionError(LabError):
    pass


class PositivityError(LabError):
    def __init__(self, node: Tuple[int, ...], value: float):
        super().__init__(f"w must be positive; w={value:.3g} at node {node}")
        self.node = node
        self.value = value


class MonotonicityError(LabError):
    pass


class StabilityGateError(LabError):
    def __init__(self, message: str, margin: float):
        super().__init__(message)
        self.margin = margin


class DominanceError(LabError):
    def __init__(self, row: int, column: Optional[int] = None):
        col = f", column {column}" if column is not None else ""
        super().__init__(f"tridiagonal system not diagonally dominant at row {row}{col}")
        self.row = row
        self.column = column


class SchemeBreakdown(LabError):
    pass


class DiscriminantError(SchemeBreakdown):
    pass


class BracketError(LabError):
    pass


class ConvergenceError(LabError):
    pass


class CharacteristicCrossing(LabError):
    pass


class ConfigError(LabError):
    """Scenario configuration could not be parsed or validated.

    ``violations`` lists every problem found as ``"dotted.key: message"``.
    ``line``/``column`` are 1-based and only set for syntax errors.
    """

    def __init__(
        self,
        violations: Iterable[str],
        line: Optional[int] = None,
        column: Optional[int] = None,
    ):
        self.violations: Sequence[str] = list(violations)
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__("invalid scenario config" + where + ": " + "; ".join(self.violations))
