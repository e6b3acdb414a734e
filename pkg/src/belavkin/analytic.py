"""Closed-form posterior dynamics: the oracle layer for the integrators.

For a coherent initial state the posterior stays coherent with the
noise-independent amplitude (``z = i omega + mu/2``)::

    alpha(t) = alpha0 exp(-z t) - sqrt(mu) int_0^t exp(-z (t-s)) f(s) ds

and relaxes to the drive-determined amplitude (the ``alpha0`` term decays at
rate ``mu/2``), so after a transient any memory of the initial condition is
lost.

For a squeezed coherent initial state ``S(xi0) D(alpha0)|0>`` the posterior
stays squeezed coherent.  The squeezing ratio ``Gamma = Gamma2/Gamma1``
follows the Riccati equation::

    dGamma/dt = -2 z Gamma + mu exp(-2 i phi(t)) Gamma^2

whose solution is ``Gamma(t) = Gamma(0) exp(-2 z t) / (1 - mu Gamma(0) J(t))``
with ``J(t) = int_0^t exp(-2 z s - 2 i phi(s)) ds``; for the swept phase
``phi(t) = pi/2 - omega0 t`` the integral closes to::

    Gamma(t) = (2i(omega - omega0) + mu) Gamma(0) /
               (exp(2 z t) [2i(omega - omega0) + mu (1 + Gamma(0))]
                - mu Gamma(0) exp(2 i omega0 t))

The displacement ``alpha(t)`` is stochastic.  Writing
``beta = alpha sqrt(1 - |Gamma|^2)`` and
``E(t) = exp(-z t + mu int_0^t exp(-2 i phi) Gamma ds)``::

    beta(t) = E(t) [ beta(0)
                     - sqrt(mu) int_0^t E(s)^{-1} (f + Gamma conj(f)) ds
                     - sqrt(mu) int_0^t E(s)^{-1} exp(-i phi) Gamma dW(s) ]

Quadrature statistics of the normalized posterior, with
``kappa = (1 + Gamma)/(1 - Gamma)``::

    <X> + i <Y> = (alpha - conj(alpha) Gamma) / sqrt(1 - |Gamma|^2)
    dX = (4 Re kappa)^{-1/2},   dY = |kappa| (4 Re kappa)^{-1/2}

and the squared norm of the linear-filter posterior (the output-measure
density, a unit-mean martingale) is, with ``g = Re(<a> exp(-i phi))``::

    |l(t)|^2 = exp( 2 sqrt(mu) int_0^t g dW - 2 mu int_0^t g^2 dt )

Discretization conventions: stochastic integrals are left-endpoint (Ito)
sums on the caller's grid, deterministic path-coupled integrals are
trapezoidal on the same grid, and path-free integrals use adaptive
quadrature to 1e-10.  Sharing the grid (and the Wiener increments) with the
Euler-Maruyama integrators aligns the leading discretization bias on both
sides of every cross-check.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, replace
from typing import Callable, NamedTuple

import numpy as np
from scipy.integrate import cumulative_trapezoid, quad

from .errors import (
    GridMismatchError,
    ParametrizationBreakdownError,
    PhysicalDomainError,
    QuadratureError,
    SingularityError,
)
from .filters import ModelParams, WienerPath

QUAD_TOL = 1e-10
_SINGULARITY_ATOL = 1e-12


def _z(p: ModelParams) -> complex:
    return 1j * p.omega + 0.5 * p.mu


def _complex_quad(fn: Callable[[float], complex], a: float, b: float) -> complex:
    val, err = quad(fn, a, b, complex_func=True, epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=800)
    worst = max(abs(err.real), abs(err.imag)) if isinstance(err, complex) else abs(err)
    if worst > 1e-7:
        raise QuadratureError(f"quadrature error estimate {worst:g} exceeds tolerance")
    return val


def coherent_amplitude(alpha0: complex, p: ModelParams, t: float) -> complex:
    """Posterior coherent amplitude at time ``t`` (noise independent)."""
    if t < 0:
        raise ValueError("t must be >= 0")
    z = _z(p)
    decay = cmath.exp(-z * t)
    if p.drive_is_constant:
        f0 = complex(p.drive)
        driven = math.sqrt(p.mu) * f0 * (1.0 - decay) / z
    else:
        driven = math.sqrt(p.mu) * _complex_quad(
            lambda s: cmath.exp(-z * (t - s)) * p.drive_at(s), 0.0, t)
    return alpha0 * decay - driven


def asymptotic_amplitude(p: ModelParams, t: float) -> complex:
    """Amplitude of the coherent state every posterior relaxes to."""
    return coherent_amplitude(0j, p, t)


def _gamma_special(gamma0: complex, p: ModelParams, t):
    """Closed-form Riccati solution for ``phi(t) = pi/2 - omega0 t``."""
    c = 2j * (p.omega - p.omega0) + p.mu
    num = c * gamma0
    den = (np.exp((2j * p.omega + p.mu) * np.asarray(t, dtype=complex))
           * (c + p.mu * gamma0)
           - p.mu * gamma0 * np.exp(2j * p.omega0 * np.asarray(t, dtype=complex)))
    scale = np.abs(den) + abs(num) + 1.0
    if np.any(np.abs(den) <= _SINGULARITY_ATOL * scale):
        raise SingularityError("Riccati denominator vanished on the requested grid")
    return num / den


def _gamma_from_j(gamma0: complex, p: ModelParams, t, j):
    den = 1.0 - p.mu * gamma0 * np.asarray(j)
    if np.any(np.abs(den) <= _SINGULARITY_ATOL * (np.abs(j) + 1.0)):
        raise SingularityError("Riccati denominator vanished on the requested grid")
    return gamma0 * np.exp(-2.0 * _z(p) * np.asarray(t, dtype=complex)) / den


def riccati_gamma(gamma0: complex, p: ModelParams, t: float, route: str = "auto") -> complex:
    """Squeezing ratio ``Gamma(t)`` from ``Gamma(0) = gamma0``.

    ``route="closed"`` uses the swept-phase (or constant-phase) closed form;
    ``route="quadrature"`` evaluates the phase integral ``J(t)`` by adaptive
    quadrature and works for any phase profile; ``"auto"`` prefers the
    closed form when one exists.  The two routes agree to well below 1e-9.
    """
    if abs(gamma0) >= 1.0:
        raise PhysicalDomainError(f"|Gamma(0)| must be < 1, got {abs(gamma0)}")
    if t < 0:
        raise ValueError("t must be >= 0")
    if route not in ("auto", "closed", "quadrature"):
        raise ValueError(f"unknown route {route!r}")
    if gamma0 == 0:
        return 0j
    if route in ("auto", "closed") and p.phase_mode == "special":
        return complex(_gamma_special(gamma0, p, t))
    if route in ("auto", "closed") and p.phase_mode == "constant":
        z2 = 2.0 * _z(p)
        j = cmath.exp(-2j * p.phi0) * (1.0 - cmath.exp(-z2 * t)) / z2
        return complex(_gamma_from_j(gamma0, p, t, j))
    if route == "closed":
        raise ValueError("no closed form for a custom phase profile; use route='quadrature'")
    z2 = 2.0 * _z(p)
    j = _complex_quad(lambda s: cmath.exp(-z2 * s - 2j * p.phase_at(s)), 0.0, t)
    return complex(_gamma_from_j(gamma0, p, t, j))


def riccati_gamma_grid(gamma0: complex, p: ModelParams, times: np.ndarray) -> np.ndarray:
    """Vectorized ``Gamma(t)`` on a uniform grid (closed form or trapezoid)."""
    if abs(gamma0) >= 1.0:
        raise PhysicalDomainError(f"|Gamma(0)| must be < 1, got {abs(gamma0)}")
    times = np.asarray(times, dtype=float)
    if gamma0 == 0:
        return np.zeros(len(times), dtype=complex)
    if p.phase_mode == "special":
        return _gamma_special(gamma0, p, times)
    z2 = 2.0 * _z(p)
    if p.phase_mode == "constant":
        j = cmath.exp(-2j * p.phi0) * (1.0 - np.exp(-z2 * times)) / z2
    else:
        integrand = np.exp(-z2 * times - 2j * p.phase_array(times))
        j = cumulative_trapezoid(integrand, times, initial=0.0)
    return _gamma_from_j(gamma0, p, times, j)


def riccati_rk4(gamma0: complex, p: ModelParams, t_final: float, dt: float = 1e-2) -> complex:
    """Classic fourth-order Runge-Kutta integration of the Riccati equation.

    Independent of the closed forms above; used as their cross-check oracle.
    """
    if abs(gamma0) >= 1.0:
        raise PhysicalDomainError(f"|Gamma(0)| must be < 1, got {abs(gamma0)}")
    steps = max(int(round(t_final / dt)), 1)
    h = t_final / steps
    z2 = 2.0 * _z(p)
    mu = p.mu
    phase = p.phase_at

    def rhs(t: float, g: complex) -> complex:
        return -z2 * g + mu * cmath.exp(-2j * phase(t)) * g * g

    g = complex(gamma0)
    t = 0.0
    for _ in range(steps):
        k1 = rhs(t, g)
        k2 = rhs(t + 0.5 * h, g + 0.5 * h * k1)
        k3 = rhs(t + 0.5 * h, g + 0.5 * h * k2)
        k4 = rhs(t + h, g + h * k3)
        g = g + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t += h
    return g


def ansatz_ode_step(gamma1: complex, gamma2: complex, alpha: complex,
                    t: float, dW: float, p: ModelParams, dt: float
                    ) -> tuple[complex, complex, complex]:
    """One Euler-Maruyama step of the coupled squeeze-ansatz system.

    The evolution splits into the linear pair ``dGamma1 = (z Gamma1 -
    mu exp(-2 i phi) Gamma2) dt``, ``dGamma2 = -z Gamma2 dt`` (whose ratio
    reproduces the Riccati flow) and the amplitude update ``dalpha =
    -sqrt(mu) (Gamma1 f + Gamma2 conj(f)) dt - sqrt(mu) Gamma2 exp(-i phi)
    dW``.  The triple is a projective representation: the physical
    displacement is ``alpha / (Gamma1 sqrt(1 - |Gamma2/Gamma1|^2))``.
    """
    if abs(gamma1) < 1e-12:
        raise ParametrizationBreakdownError("Gamma1 crossed zero; ansatz parametrization broke down")
    z = _z(p)
    e2 = cmath.exp(-2j * p.phase_at(t))
    em = cmath.exp(-1j * p.phase_at(t))
    f = p.drive_at(t)
    sqmu = math.sqrt(p.mu)
    g1 = gamma1 + (z * gamma1 - p.mu * e2 * gamma2) * dt
    g2 = gamma2 - z * gamma2 * dt
    al = alpha - sqmu * (gamma1 * f + gamma2 * f.conjugate()) * dt - sqmu * gamma2 * em * dW
    return g1, g2, al


@dataclass(frozen=True)
class SqueezeTrack:
    """Closed-form descriptors of the squeezed posterior on a grid.

    ``gamma1``/``gamma2`` are the hyperbolic-normalized section
    (``gamma1 = 1/sqrt(1-|Gamma|^2)`` real), ``alpha`` the stochastic
    displacement and ``weight`` the squared norm ``|l(t)|^2`` of the
    linear-filter posterior; ``alpha``/``weight`` are ``None`` until the
    corresponding evaluation has been run.
    """

    times: np.ndarray
    gamma0: complex
    alpha0: complex
    gamma: np.ndarray
    gamma1: np.ndarray
    gamma2: np.ndarray
    kappa: np.ndarray
    alpha: np.ndarray | None = None
    weight: np.ndarray | None = None

    def __post_init__(self):
        if np.any(np.abs(self.gamma) >= 1.0):
            raise PhysicalDomainError("|Gamma(t)| must stay below 1 on the whole track")

    def mean_a(self) -> np.ndarray:
        """Posterior ``<a>`` per step: ``(alpha - conj(alpha) Gamma) * gamma1``."""
        if self.alpha is None:
            raise ValueError("track has no amplitude; run squeezed_amplitude first")
        return (self.alpha - np.conj(self.alpha) * self.gamma) * self.gamma1


def _check_same_grid(track_times: np.ndarray, path: WienerPath) -> None:
    if len(track_times) != path.steps + 1 or not np.allclose(
            track_times, path.times, rtol=0.0, atol=1e-12):
        raise GridMismatchError("track and path grids differ")


def new_squeeze_track(p: ModelParams, gamma0: complex, alpha0: complex,
                      times: np.ndarray) -> SqueezeTrack:
    """Deterministic part of the track: Gamma, its section, and kappa."""
    gamma = riccati_gamma_grid(gamma0, p, times)
    one_minus = 1.0 - np.abs(gamma) ** 2
    gamma1 = 1.0 / np.sqrt(one_minus)
    kappa = (1.0 + gamma) / (1.0 - gamma)
    return SqueezeTrack(times=np.asarray(times, dtype=float), gamma0=complex(gamma0),
                        alpha0=complex(alpha0), gamma=gamma, gamma1=gamma1,
                        gamma2=gamma * gamma1, kappa=kappa)


def squeezed_amplitude(track: SqueezeTrack, p: ModelParams, path: WienerPath) -> np.ndarray:
    """Stochastic displacement ``alpha(t)`` along the path, per grid point.

    Ito integrals are left-endpoint sums over ``path.increments``;
    deterministic integrals are trapezoidal on the same grid.
    """
    _check_same_grid(track.times, path)
    dt = path.dt
    times = track.times
    gamma = track.gamma
    emph = np.exp(-1j * p.phase_array(times))
    f = p.drive_array(times)
    sqmu = math.sqrt(p.mu)

    phase_int = cumulative_trapezoid(emph**2 * gamma, dx=dt, initial=0.0)
    ln_e = -_z(p) * times + p.mu * phase_int
    e_fwd = np.exp(ln_e)
    e_inv = np.exp(-ln_e)

    det = cumulative_trapezoid(e_inv * (f + gamma * np.conj(f)), dx=dt, initial=0.0)
    sto_terms = e_inv[:-1] * emph[:-1] * gamma[:-1] * path.increments
    sto = np.concatenate(([0.0], np.cumsum(sto_terms)))

    beta0 = track.alpha0 * math.sqrt(1.0 - abs(track.gamma0) ** 2)
    beta = e_fwd * (beta0 - sqmu * (det + sto))
    return beta * track.gamma1


class QuadratureTrack(NamedTuple):
    mean_x: np.ndarray
    mean_y: np.ndarray
    dx: np.ndarray
    dy: np.ndarray


def quadrature_track(track: SqueezeTrack) -> QuadratureTrack:
    """Per-step quadrature means and (deterministic) uncertainties."""
    if np.any(np.abs(track.gamma) >= 1.0):
        raise PhysicalDomainError("|Gamma| must be < 1 for quadrature statistics")
    re_k = track.kappa.real
    dx = 1.0 / np.sqrt(4.0 * re_k)
    dy = np.abs(track.kappa) * dx
    mean = track.mean_a()
    return QuadratureTrack(mean.real, mean.imag, dx, dy)


def weight_track(track: SqueezeTrack, p: ModelParams, path: WienerPath) -> np.ndarray:
    """Squared norm ``|l(t)|^2`` of the linear-filter posterior, per step.

    Accumulated in log space: unit-mean exponential martingale of the
    Ito integral of ``2 sqrt(mu) g`` with ``g = Re(<a> exp(-i phi))``.
    """
    _check_same_grid(track.times, path)
    if track.alpha is None:
        raise ValueError("track has no amplitude; run squeezed_amplitude first")
    g = (track.mean_a() * np.exp(-1j * p.phase_array(track.times))).real
    sqmu = math.sqrt(p.mu)
    ito = np.concatenate(([0.0], np.cumsum(g[:-1] * path.increments)))
    comp = cumulative_trapezoid(g * g, dx=path.dt, initial=0.0)
    return np.exp(2.0 * sqmu * ito - 2.0 * p.mu * comp)


def build_squeeze_track(p: ModelParams, gamma0: complex, alpha0: complex,
                        path: WienerPath) -> SqueezeTrack:
    """Complete closed-form track (Gamma, alpha, kappa, weight) on a path grid."""
    track = new_squeeze_track(p, gamma0, alpha0, path.times)
    track = replace(track, alpha=squeezed_amplitude(track, p, path))
    return replace(track, weight=weight_track(track, p, path))
