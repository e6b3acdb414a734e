"""Exception types shared across the package."""

from __future__ import annotations


class BelavkinError(Exception):
    """Base class for all package errors."""


class InvalidDimensionError(BelavkinError, ValueError):
    """Fock-space truncation dimension is too small or malformed."""


class DimensionMismatchError(BelavkinError, ValueError):
    """Operands live on Fock spaces of different truncation dimension."""


class TruncationOverflowError(BelavkinError, ValueError):
    """Requested state puts too much weight at the truncation edge.

    Carries the offending leakage estimate in ``leakage``.
    """

    def __init__(self, message: str, leakage: float):
        super().__init__(message)
        self.leakage = leakage


class NormalizationError(BelavkinError, ValueError):
    """An operation required a unit-norm input and did not get one."""


class NumericalBlowupError(BelavkinError, RuntimeError):
    """State amplitudes became non-finite during integration.

    ``step`` and ``time`` locate the failing step when raised from a
    trajectory loop; they are ``None`` for a bare single-step call.
    """

    def __init__(self, message: str, step: int | None = None, time: float | None = None):
        super().__init__(message)
        self.step = step
        self.time = time


class StepSizeError(BelavkinError, RuntimeError):
    """Per-step drift exceeded its tolerance; the grid step is too coarse."""

    def __init__(self, message: str, step: int | None = None, time: float | None = None):
        super().__init__(message)
        self.step = step
        self.time = time


class ParamsMismatchError(BelavkinError, ValueError):
    """A record is being replayed against different model parameters."""


class SingularityError(BelavkinError, ArithmeticError):
    """A closed-form denominator came within tolerance of zero."""


class GridMismatchError(BelavkinError, ValueError):
    """Tracks or paths supplied on incompatible time grids."""


class ParametrizationBreakdownError(BelavkinError, ArithmeticError):
    """The squeeze-ansatz parametrization lost validity (Gamma1 -> 0)."""


class QuadratureError(BelavkinError, ArithmeticError):
    """Adaptive quadrature failed to reach the requested tolerance."""


class PhysicalDomainError(BelavkinError, ValueError):
    """Inputs left the physical domain (e.g. squeezing ratio |Gamma| >= 1)."""


class EnsembleTrajectoryError(BelavkinError, RuntimeError):
    """A trajectory inside an ensemble failed; the whole ensemble aborts."""


class ConfigError(BelavkinError, ValueError):
    """Configuration text failed validation.

    ``problems`` lists every validation failure found, not just the first.
    """

    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = list(problems)
