"""Truncated Fock-space linear algebra for a single cavity mode.

States are complex amplitude vectors over the number basis ``|0>, ..., |N-1>``
of a harmonic oscillator, with ``N`` the truncation dimension.  The module
provides the annihilation operator, coherent and squeezed coherent state
construction, displacement and squeeze unitaries (dense matrix exponentials),
quadrature statistics and overlaps.

Everything here is a plain value: construction returns immutable objects and
operations return fresh ones, so instances can be shared freely between
parallel workers.

Conventions: ``hbar = 1``; quadratures are ``X = (a + a^dag)/2`` and
``Y = (a - a^dag)/2i``, so the vacuum has ``dX = dY = 1/2``.  Truncation
artifacts concentrate at the basis edge; identities that hold only away from
the edge are checked on the interior projector (levels ``0..N//2``).
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.linalg import expm
from scipy.special import gammaln

from .errors import (
    DimensionMismatchError,
    InvalidDimensionError,
    NormalizationError,
    TruncationOverflowError,
)

#: A freshly constructed state is accepted as normalized within this.
NORM_ATOL = 1e-12

#: Edge-level occupancy above which constructors refuse to truncate.
OVERFLOW_BUDGET = 1e-6


def _check_dim(dim: int) -> None:
    if not isinstance(dim, (int, np.integer)) or dim < 2:
        raise InvalidDimensionError(f"truncation dimension must be an integer >= 2, got {dim!r}")


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=complex)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class QuantumState:
    """Wave function on the truncated number basis.

    Parameters
    ----------
    dim : int
        Truncation dimension ``N >= 2``.
    amps : array_like of complex, shape (dim,)
        Amplitude of Fock level ``n`` at index ``n``.
    normalized : bool
        Declares the state unit-norm; verified to ``NORM_ATOL`` at
        construction.  Pass ``False`` for intentionally unnormalized
        states (e.g. the linear-filter posterior).
    """

    dim: int
    amps: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        _check_dim(self.dim)
        amps = _frozen(self.amps)
        if amps.shape != (self.dim,):
            raise InvalidDimensionError(
                f"amplitude vector has shape {amps.shape}, expected ({self.dim},)"
            )
        object.__setattr__(self, "amps", amps)
        if self.normalized:
            n2 = float(np.vdot(amps, amps).real)
            if abs(n2 - 1.0) > NORM_ATOL:
                raise NormalizationError(
                    f"state flagged normalized has squared norm {n2!r}"
                )

    @property
    def leakage(self) -> float:
        """Occupancy of the top Fock level, ``|amps[N-1]|^2``."""
        return float(abs(self.amps[-1]) ** 2)

    @property
    def edge_mass(self) -> float:
        """Occupancy of the top two levels (robust to parity-sparse states)."""
        return float(abs(self.amps[-1]) ** 2 + abs(self.amps[-2]) ** 2)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amps))

    def normalize(self) -> "QuantumState":
        n = self.norm()
        if n == 0.0:
            raise NormalizationError("cannot normalize the zero vector")
        return QuantumState(self.dim, self.amps / n, normalized=True)

    def overlap(self, other: "QuantumState") -> complex:
        """Inner product ``<self|other>``."""
        if self.dim != other.dim:
            raise DimensionMismatchError(
                f"states live on dimensions {self.dim} and {other.dim}"
            )
        return complex(np.vdot(self.amps, other.amps))


@dataclass(frozen=True)
class Operator:
    """Dense operator on the truncated basis."""

    dim: int
    elems: np.ndarray

    def __post_init__(self):
        _check_dim(self.dim)
        elems = _frozen(self.elems)
        if elems.shape != (self.dim, self.dim):
            raise InvalidDimensionError(
                f"operator has shape {elems.shape}, expected ({self.dim}, {self.dim})"
            )
        object.__setattr__(self, "elems", elems)

    def dagger(self) -> "Operator":
        return Operator(self.dim, self.elems.conj().T)

    def apply(self, state: QuantumState) -> QuantumState:
        if self.dim != state.dim:
            raise DimensionMismatchError(
                f"operator dim {self.dim} does not match state dim {state.dim}"
            )
        return QuantumState(state.dim, self.elems @ state.amps, normalized=False)


@dataclass(frozen=True)
class DensityMatrix:
    """Hermitian, unit-trace, positive-semidefinite matrix on the basis.

    Invariants (Hermiticity to 1e-12, trace 1 to 1e-10, smallest eigenvalue
    >= -1e-10) are verified at construction unless ``validate=False``; the
    integrators use the unchecked path inside step loops and re-validate
    periodically.
    """

    dim: int
    elems: np.ndarray
    validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        _check_dim(self.dim)
        elems = _frozen(self.elems)
        if elems.shape != (self.dim, self.dim):
            raise InvalidDimensionError(
                f"density matrix has shape {elems.shape}, expected ({self.dim}, {self.dim})"
            )
        object.__setattr__(self, "elems", elems)
        if self.validate:
            herm = float(np.max(np.abs(elems - elems.conj().T)))
            if herm > 1e-12:
                raise NormalizationError(f"matrix is not Hermitian: max asymmetry {herm:g}")
            tr = complex(np.trace(elems))
            if abs(tr - 1.0) > 1e-10:
                raise NormalizationError(f"trace is {tr!r}, expected 1")
            lo = float(np.linalg.eigvalsh(elems)[0])
            if lo < -1e-10:
                raise NormalizationError(f"matrix is not positive semidefinite: eigmin {lo:g}")

    @classmethod
    def from_state(cls, state: QuantumState) -> "DensityMatrix":
        psi = state.amps if state.normalized else state.normalize().amps
        return cls(state.dim, np.outer(psi, psi.conj()), validate=False)

    def purity(self) -> float:
        """``Tr rho^2``, 1 for pure states."""
        return float(np.sum(np.abs(self.elems) ** 2))

    def expectation(self, op: np.ndarray) -> complex:
        return complex(np.einsum("ij,ji->", self.elems, op))


@dataclass(frozen=True)
class SqueezeParams:
    """Squeeze and displacement parameters of ``S(xi) D(alpha) |0>``.

    ``xi = rho0 * exp(i theta0)`` sets the squeeze factor ``rho0`` and axis
    ``theta0``; the derived pair ``Gamma1 = cosh rho0``,
    ``Gamma2 = exp(i theta0) sinh rho0`` satisfies the hyperbolic
    normalization ``|Gamma1|^2 - |Gamma2|^2 = 1``.
    """

    xi: complex
    alpha: complex

    @property
    def rho0(self) -> float:
        return abs(self.xi)

    @property
    def theta0(self) -> float:
        return cmath.phase(self.xi) if self.xi != 0 else 0.0

    @property
    def gamma1(self) -> float:
        return math.cosh(self.rho0)

    @property
    def gamma2(self) -> complex:
        return cmath.exp(1j * self.theta0) * math.sinh(self.rho0)

    @property
    def gamma(self) -> complex:
        """Squeezing ratio ``Gamma2 / Gamma1``; always inside the unit disk."""
        return self.gamma2 / self.gamma1

    @classmethod
    def from_gamma(cls, gamma: complex, alpha: complex) -> "SqueezeParams":
        """Invert the ratio: ``rho0 = atanh|Gamma|``, ``theta0 = arg Gamma``."""
        g = complex(gamma)
        if abs(g) >= 1.0:
            raise ValueError(f"|Gamma| must be < 1, got {abs(g)}")
        if g == 0:
            return cls(0j, complex(alpha))
        return cls(math.atanh(abs(g)) * cmath.exp(1j * cmath.phase(g)), complex(alpha))


class QuadratureStats(NamedTuple):
    mean_x: float
    mean_y: float
    dx: float
    dy: float


def make_annihilation(dim: int) -> Operator:
    """Annihilation operator: ``a[n-1, n] = sqrt(n)``, zero elsewhere."""
    _check_dim(dim)
    elems = np.zeros((dim, dim), dtype=complex)
    n = np.arange(1, dim)
    elems[n - 1, n] = np.sqrt(n)
    return Operator(dim, elems)


def vacuum_state(dim: int) -> QuantumState:
    amps = np.zeros(dim, dtype=complex)
    amps[0] = 1.0
    return QuantumState(dim, amps)


def number_state(n: int, dim: int) -> QuantumState:
    _check_dim(dim)
    if not 0 <= n < dim:
        raise InvalidDimensionError(f"Fock level {n} outside basis 0..{dim - 1}")
    amps = np.zeros(dim, dtype=complex)
    amps[n] = 1.0
    return QuantumState(dim, amps)


def coherent_state(alpha: complex, dim: int) -> QuantumState:
    """Coherent state ``|alpha>``, renormalized on the truncated basis.

    Amplitudes are ``exp(-|alpha|^2/2) alpha^n / sqrt(n!)``.  The Poisson
    tail mass beyond level ``N-1`` is the truncation leakage; construction
    fails when it exceeds ``OVERFLOW_BUDGET``.  Residual leakage remains
    queryable through :attr:`QuantumState.leakage`.
    """
    _check_dim(dim)
    alpha = complex(alpha)
    if alpha == 0:
        return vacuum_state(dim)
    n = np.arange(dim)
    logmag = -abs(alpha) ** 2 / 2 + n * math.log(abs(alpha)) - 0.5 * gammaln(n + 1.0)
    amps = np.exp(logmag + 1j * n * cmath.phase(alpha))
    captured = float(np.vdot(amps, amps).real)
    tail = max(1.0 - captured, 0.0)
    if tail > OVERFLOW_BUDGET:
        raise TruncationOverflowError(
            f"coherent amplitude |alpha|={abs(alpha):g} leaks {tail:.3g} "
            f"past dimension {dim}",
            leakage=tail,
        )
    return QuantumState(dim, amps / math.sqrt(captured))


def displacement(alpha: complex, dim: int) -> Operator:
    """Displacement unitary ``D(alpha) = exp(alpha a^dag - conj(alpha) a)``."""
    a = make_annihilation(dim).elems
    gen = alpha * a.conj().T - np.conj(alpha) * a
    return Operator(dim, expm(gen))


def squeeze(xi: complex, dim: int) -> Operator:
    """Squeeze unitary ``S(xi) = exp(conj(xi) a^2 / 2 - xi (a^dag)^2 / 2)``.

    Raises
    ------
    TruncationOverflowError
        When ``S(xi)|0>`` puts more than ``OVERFLOW_BUDGET`` of its weight
        on the top two Fock levels (squeezed vacua occupy even levels only,
        so a single edge entry can vanish by parity).
    """
    a = make_annihilation(dim).elems
    a2 = a @ a
    gen = 0.5 * np.conj(xi) * a2 - 0.5 * xi * a2.conj().T
    mat = expm(gen)
    edge = float(abs(mat[-1, 0]) ** 2 + abs(mat[-2, 0]) ** 2)
    if edge > OVERFLOW_BUDGET:
        raise TruncationOverflowError(
            f"squeeze factor |xi|={abs(xi):g} leaks {edge:.3g} past dimension {dim}",
            leakage=edge,
        )
    return Operator(dim, mat)


def squeezed_coherent_state(p: SqueezeParams, dim: int) -> QuantumState:
    """Squeezed coherent state ``S(xi) D(alpha) |0>``.

    Displacement acts first, squeezing second.  The result is an eigenstate
    of ``a Gamma1 + a^dag Gamma2`` with eigenvalue ``alpha`` away from the
    truncation edge.
    """
    base = coherent_state(p.alpha, dim)
    amps = squeeze(p.xi, dim).elems @ base.amps
    edge = float(abs(amps[-1]) ** 2 + abs(amps[-2]) ** 2)
    if edge > OVERFLOW_BUDGET:
        raise TruncationOverflowError(
            f"squeezed coherent state leaks {edge:.3g} past dimension {dim}",
            leakage=edge,
        )
    return QuantumState(dim, amps / np.linalg.norm(amps))


def _require_normalized(s: QuantumState, what: str) -> None:
    if not s.normalized or abs(np.vdot(s.amps, s.amps).real - 1.0) > 1e-9:
        raise NormalizationError(f"{what} requires a normalized state")


def quadrature_stats(s: QuantumState) -> QuadratureStats:
    """Means and standard deviations of the quadratures ``X`` and ``Y``.

    Second moments are evaluated with the truncated operators themselves, so
    the Robertson bound ``dx*dy >= 1/4`` holds exactly (up to roundoff) for
    any state with empty top level.
    """
    _require_normalized(s, "quadrature_stats")
    a = make_annihilation(s.dim).elems
    apsi = a @ s.amps
    adpsi = a.conj().T @ s.amps
    ea = complex(np.vdot(s.amps, apsi))
    ea2 = complex(np.vdot(s.amps, a @ apsi))
    n_lower = float(np.vdot(apsi, apsi).real)   # <a^dag a>
    n_upper = float(np.vdot(adpsi, adpsi).real)  # <a a^dag>, truncated
    mean_x = ea.real
    mean_y = ea.imag
    x2 = 0.25 * (2.0 * ea2.real + n_lower + n_upper)
    y2 = 0.25 * (n_lower + n_upper - 2.0 * ea2.real)
    dx = math.sqrt(max(x2 - mean_x**2, 0.0))
    dy = math.sqrt(max(y2 - mean_y**2, 0.0))
    return QuadratureStats(mean_x, mean_y, dx, dy)


def fidelity(s1: QuantumState, s2: QuantumState) -> float:
    """Overlap probability ``|<s1|s2>|^2`` of two normalized states."""
    if s1.dim != s2.dim:
        raise DimensionMismatchError(f"states live on dimensions {s1.dim} and {s2.dim}")
    _require_normalized(s1, "fidelity")
    _require_normalized(s2, "fidelity")
    return min(float(abs(np.vdot(s1.amps, s2.amps)) ** 2), 1.0)


def interior_projector(dim: int) -> np.ndarray:
    """Projector onto Fock levels ``0..dim//2``, where truncation noise is absent."""
    _check_dim(dim)
    diag = np.zeros(dim)
    diag[: dim // 2 + 1] = 1.0
    return np.diag(diag).astype(complex)


def trace_norm(delta: np.ndarray) -> float:
    """Trace norm ``Tr|delta|`` of a Hermitian matrix."""
    return float(np.sum(np.abs(np.linalg.eigvalsh(delta))))


def trace_distance(r1: DensityMatrix | np.ndarray, r2: DensityMatrix | np.ndarray) -> float:
    """Trace distance ``Tr|r1 - r2| / 2``."""
    m1 = r1.elems if isinstance(r1, DensityMatrix) else np.asarray(r1)
    m2 = r2.elems if isinstance(r2, DensityMatrix) else np.asarray(r2)
    return 0.5 * trace_norm(m1 - m2)
