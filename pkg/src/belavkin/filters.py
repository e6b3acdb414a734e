"""Stochastic integration of the heterodyne quantum filtering equations.

A cavity mode with Hamiltonian ``H = omega (a^dag a + 1/2)`` couples with
strength ``mu`` to a Bose field prepared in a coherent state of amplitude
``f(t)``; the output is mixed with an intense local oscillator of phase
``phi(t)`` and the photocurrent difference is observed.  Conditioning on the
diffusive record gives three equivalent filtering equations (``hbar = 1``,
``K = i H + (mu/2) a^dag a``, ``W`` a Wiener process under the input
measure):

* linear, for the unnormalized posterior ``psi``::

      d psi = -(K + sqrt(mu) (a^dag f - a conj(f))) psi dt
              + sqrt(mu) a exp(-i phi) psi dW

* nonlinear, for the normalized posterior ``phi`` with
  ``r = Re(<a> exp(-i phi))``::

      d phi = -(K + sqrt(mu) a^dag f - sqrt(mu) a conj(f)
                + mu r^2 / 2) phi dt
              + mu a exp(-i phi) r phi dt
              + sqrt(mu) (a exp(-i phi) - r) phi (dW - 2 sqrt(mu) r dt)

* density-matrix form, for ``rho`` with ``<a> = Tr[rho a]``::

      d rho = (-i[H, rho] - (mu/2){a^dag a, rho}
               + [sqrt(mu) a conj(f) - sqrt(mu) a^dag f, rho]
               + mu a rho a^dag) dt
              + (sqrt(mu) exp(-i phi) a rho + h.c.
                 - 2 sqrt(mu) r rho) (dW - 2 sqrt(mu) r dt)

The observed increment is ``dq = dW + 2 Re(exp(-i phi) f) dt``, so records
and driving noise are interconvertible.  All schemes run on a uniform grid.
The linear filter is plain Euler-Maruyama (strong order 1/2).  The
normalized filters are integrated in the interaction picture: the stiff
diagonal generator ``K`` is applied exactly through ``exp(-K dt)`` each step
(plain Euler on ``K`` alone would disperse the Fock-level phases by
``(omega (n + 1/2))^2 dt t / 2``, far above the closed-form cross-check
tolerances on long horizons), the drive coupling is stepped by Euler, and
the noise carries its second-order (Milstein) correction
``(N^2/2)(dw^2 - dt)``, which with a single noise channel lifts the
pathwise order to 1.  The nonlinear state is projectively renormalized every
step and the density matrix is re-Hermitized and trace-renormalized every
step.

Noise semantics: with ``noise="reference"`` the supplied increments are the
input-measure Wiener increments ``dW`` appearing above, which is what every
pathwise cross-check against closed forms uses.  With ``noise="innovation"``
(nonlinear/density only) the increments are the innovation process, i.e. the
trajectory is sampled under the physical output measure; the reference
increments are reconstructed per step for the record.  Ensemble averages of
normalized states against the unconditional master equation are unbiased only
in innovation mode.

Trajectories sharing a grid integrate together through
:func:`integrate_batch`, which steps a whole block per BLAS call;
:func:`integrate` is the single-trajectory case of the same kernels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .errors import (
    DimensionMismatchError,
    NormalizationError,
    NumericalBlowupError,
    ParamsMismatchError,
    StepSizeError,
)
from .fock import DensityMatrix, QuantumState, make_annihilation

DriveLike = Union[complex, float, Callable[[float], complex]]

PHASE_MODES = ("special", "constant", "custom")
FILTER_KINDS = ("linear", "nonlinear", "density")

#: Nonlinear/density step fails when the pre-renormalization norm (trace)
#: drifts further than this from 1 in a single step.
NORM_DRIFT_TOL = 1e-3

#: Density step fails when the smallest eigenvalue falls below this.
POSITIVITY_TOL = -1e-6


@dataclass(frozen=True)
class ModelParams:
    """Physical parameters of the monitored cavity.

    ``phase_mode="special"`` selects the swept local-oscillator phase
    ``phi(t) = pi/2 - omega0 t`` (the exponent ``exp(-2 i phi)`` then equals
    ``-exp(2 i omega0 t)``); ``"constant"`` holds ``phi(t) = phi0``; a custom
    callable can be supplied with ``phase_mode="custom"``.  The drive ``f``
    is either a complex constant or a callable of time.
    """

    omega: float = 1.0
    mu: float = 0.0
    dim: int = 64
    drive: DriveLike = 0j
    phase_mode: str = "special"
    omega0: float = 0.0
    phi0: float = math.pi / 2
    phase_fn: Callable[[float], float] | None = field(default=None, compare=True)

    def __post_init__(self):
        if not self.omega > 0:
            raise ValueError(f"omega must be > 0, got {self.omega}")
        if self.mu < 0:
            raise ValueError(f"mu must be >= 0, got {self.mu}")
        if self.dim < 2:
            raise ValueError(f"dim must be >= 2, got {self.dim}")
        if self.phase_mode not in PHASE_MODES:
            raise ValueError(f"phase_mode must be one of {PHASE_MODES}, got {self.phase_mode!r}")
        if self.phase_mode == "custom" and self.phase_fn is None:
            raise ValueError("phase_mode='custom' requires phase_fn")

    @property
    def drive_is_constant(self) -> bool:
        return not callable(self.drive)

    def drive_at(self, t: float) -> complex:
        return complex(self.drive(t)) if callable(self.drive) else complex(self.drive)

    def drive_array(self, times: np.ndarray) -> np.ndarray:
        if self.drive_is_constant:
            return np.full(len(times), complex(self.drive))
        return np.array([complex(self.drive(float(t))) for t in times])

    def phase_at(self, t: float) -> float:
        if self.phase_mode == "special":
            return math.pi / 2 - self.omega0 * t
        if self.phase_mode == "constant":
            return self.phi0
        return float(self.phase_fn(t))

    def phase_array(self, times: np.ndarray) -> np.ndarray:
        if self.phase_mode == "special":
            return math.pi / 2 - self.omega0 * np.asarray(times)
        if self.phase_mode == "constant":
            return np.full(len(times), self.phi0)
        return np.array([float(self.phase_fn(float(t))) for t in times])


@dataclass(frozen=True)
class WienerPath:
    """Seeded discretized Brownian increments on a uniform grid.

    ``generate`` draws ``increments[k] ~ Normal(0, dt)`` from a counter-based
    Philox stream keyed on ``(seed, stream)``, so the map
    ``(seed, stream, step index) -> increment`` is reproducible bit for bit
    and distinct streams are statistically independent, which is what makes
    parallel ensembles deterministic.  Instances may also be built from
    explicit increments (e.g. record replay); those carry their own data and
    are not regenerable from the seed.
    """

    seed: int
    dt: float
    steps: int
    increments: np.ndarray
    stream: int = 0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        inc = np.array(self.increments, dtype=float)
        if inc.shape != (self.steps,):
            raise ValueError(f"increments have shape {inc.shape}, expected ({self.steps},)")
        inc.flags.writeable = False
        object.__setattr__(self, "increments", inc)

    @classmethod
    def generate(cls, seed: int, dt: float, steps: int, stream: int = 0) -> "WienerPath":
        key = ((int(stream) & 0xFFFFFFFFFFFFFFFF) << 64) | (int(seed) & 0xFFFFFFFFFFFFFFFF)
        rng = np.random.Generator(np.random.Philox(key=key))
        return cls(seed=int(seed), dt=float(dt), steps=int(steps),
                   increments=rng.normal(0.0, math.sqrt(dt), size=steps),
                   stream=int(stream))

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt


@dataclass(frozen=True)
class TrajectoryRecord:
    """One integrated trajectory: grid, stored states, record and summaries.

    ``states`` holds the state at the grid indices in ``state_steps``
    (the final step is always present); rows are amplitude vectors for the
    wave-function filters and full matrices for the density filter.
    ``record_q[k]`` is the observed increment over ``(times[k], times[k+1])``.
    ``weights`` is ``|psi|^2`` per step for the linear filter and ``None``
    otherwise.  ``mean_x``/``mean_y`` are the per-step posterior quadrature
    means.
    """

    filter_kind: str
    params: ModelParams
    dt: float
    times: np.ndarray
    states: np.ndarray
    state_steps: np.ndarray
    record_q: np.ndarray
    mean_x: np.ndarray
    mean_y: np.ndarray
    weights: np.ndarray | None
    noise: str

    @property
    def steps(self) -> int:
        return len(self.times) - 1

    @property
    def state_times(self) -> np.ndarray:
        return self.times[self.state_steps]

    def state(self, i: int):
        """Wrap stored state ``i`` (index into ``state_steps``)."""
        raw = self.states[i]
        if self.filter_kind == "density":
            return DensityMatrix(raw.shape[0], raw, validate=False)
        if self.filter_kind == "linear":
            return QuantumState(len(raw), raw, normalized=False)
        return QuantumState(len(raw), raw / np.linalg.norm(raw))

    def final_state(self):
        return self.state(len(self.state_steps) - 1)


class _Engine:
    """Grid data and matrices shared by the batched step kernels.

    Wave-function states are stored as rows, so ``a psi`` is ``Psi @ a.T``
    for a whole batch at once.
    """

    def __init__(self, p: ModelParams, dt: float, steps: int):
        self.p = p
        self.dt = dt
        self.mu = p.mu
        self.sqmu = math.sqrt(p.mu)
        a = make_annihilation(p.dim).elems
        self.a = a
        self.ad = a.conj().T
        self.aT = np.ascontiguousarray(a.T)
        self.a2T = np.ascontiguousarray((a @ a).T)
        n_diag = np.arange(p.dim).astype(complex)
        # K = i H + (mu/2) a^dag a is diagonal
        k_diag = 1j * p.omega * (n_diag + 0.5) + 0.5 * p.mu * n_diag
        self.k_diag = k_diag
        self.rot = np.exp(-k_diag * dt)              # exp(-K dt), elementwise
        self.rot_mat = np.outer(self.rot, self.rot.conj())
        times = np.arange(steps + 1) * dt
        self.times = times
        self.f = p.drive_array(times)
        self.emph = np.exp(-1j * p.phase_array(times))   # exp(-i phi(t_k))
        self.record_drift = 2.0 * (self.emph[:steps] * self.f[:steps]).real * dt
        self.drive_zero = p.drive_is_constant and complex(p.drive) == 0
        if p.drive_is_constant:
            f0 = complex(p.drive)
            drive = -self.sqmu * (f0 * self.ad - np.conj(f0) * a)
            self.driveT = np.ascontiguousarray(drive.T)
            self.drive_mat = drive
            # full linear-filter drift -(K + sqrt(mu)(a^dag f - a conj(f)))
            self.linT = np.ascontiguousarray((np.diag(-k_diag) + drive).T)
        else:
            self.driveT = None
            self.drive_mat = None
            self.linT = None

    def drive_matrix(self, k: int) -> np.ndarray:
        if self.drive_mat is not None:
            return self.drive_mat
        fk = self.f[k]
        return -self.sqmu * (fk * self.ad - np.conj(fk) * self.a)

    def lin_t(self, k: int) -> np.ndarray:
        """Transposed full linear drift at grid index k."""
        if self.linT is not None:
            return self.linT
        return (np.diag(-self.k_diag) + self.drive_matrix(k)).T


def _linear_step_batch(psi: np.ndarray, eng: _Engine, k: int, dw: np.ndarray) -> np.ndarray:
    """Plain Euler-Maruyama update of a (B, dim) batch of linear states."""
    apsi = psi @ eng.aT
    coeff = (eng.sqmu * eng.emph[k]) * dw
    return psi + eng.dt * (psi @ eng.lin_t(k)) + coeff[:, None] * apsi


def _nonlinear_step_batch(psi: np.ndarray, eng: _Engine, k: int, dw: np.ndarray,
                          innovation_noise: bool):
    """Interaction-picture Milstein update of a (B, dim) batch of unit rows.

    Returns the un-renormalized update, the reference increments and the
    per-row ``<a>``.  The noise operator is
    ``N = sqrt(mu) exp(-i phi) a - m`` with ``m = sqrt(mu) r``.
    """
    apsi = psi @ eng.aT
    ea = np.einsum("bi,bi->b", psi.conj(), apsi)
    em = eng.emph[k]
    r = (ea * em).real
    m = eng.sqmu * r
    if innovation_noise:
        innov = dw
        dw_ref = dw + (2.0 * eng.dt) * m
    else:
        innov = dw - (2.0 * eng.dt) * m
        dw_ref = dw
    half_q = 0.5 * (innov * innov - eng.dt)
    scal = 1.0 - (0.5 * eng.dt * eng.mu) * r * r - innov * m + half_q * m * m
    coeff_a = (eng.dt * eng.mu * r + innov * eng.sqmu
               - 2.0 * half_q * m * eng.sqmu) * em
    coeff_a2 = (half_q * eng.mu) * (em * em)
    out = scal[:, None] * psi + coeff_a[:, None] * apsi \
        + coeff_a2[:, None] * (apsi @ eng.aT)
    if not eng.drive_zero:
        out += eng.dt * (psi @ (eng.driveT if eng.driveT is not None
                                else np.ascontiguousarray(eng.drive_matrix(k).T)))
    out *= eng.rot[None, :]
    return out, dw_ref, ea


def _density_step_batch(rho: np.ndarray, eng: _Engine, k: int, dw: np.ndarray,
                        innovation_noise: bool):
    """Matching update of a (B, dim, dim) batch of density matrices."""
    arho = np.matmul(eng.a, rho)
    ea = np.einsum("bii->b", arho)
    em = eng.emph[k]
    r = (ea * em).real
    m = eng.sqmu * r
    if innovation_noise:
        innov = dw
        dw_ref = dw + (2.0 * eng.dt) * m
    else:
        innov = dw - (2.0 * eng.dt) * m
        dw_ref = dw
    half_q = 0.5 * (innov * innov - eng.dt)
    c_rho = (eng.sqmu * em) * arho                     # c rho
    c_rho_h = c_rho + c_rho.conj().transpose(0, 2, 1)
    sandwich = np.matmul(arho, eng.ad)                 # a rho a^dag
    # ((c - m)^2 rho + h.c.) + 2 (c - m) rho (c - m)^dag, with rho Hermitian
    sq = ((eng.mu * em * em) * np.matmul(eng.a, arho)
          - (2.0 * m)[:, None, None] * c_rho
          + (m * m)[:, None, None] * rho)
    cross = (eng.mu * sandwich - m[:, None, None] * c_rho_h
             + (m * m)[:, None, None] * rho)
    out = (rho
           + (eng.dt * eng.mu) * sandwich
           + innov[:, None, None] * (c_rho_h - (2.0 * m)[:, None, None] * rho)
           + half_q[:, None, None] * (sq + sq.conj().transpose(0, 2, 1) + 2.0 * cross))
    if not eng.drive_zero:
        drho = np.matmul(eng.drive_matrix(k), rho)
        out += eng.dt * (drho + drho.conj().transpose(0, 2, 1))
    out *= eng.rot_mat[None, :, :]
    return out, dw_ref, ea


def step_linear(psi: QuantumState, t: float, dW: float, p: ModelParams, dt: float) -> QuantumState:
    """One Euler-Maruyama step of the linear (unnormalized) filter."""
    if psi.dim != p.dim:
        raise DimensionMismatchError(f"state dim {psi.dim} != model dim {p.dim}")
    eng = _single_time_engine(p, t, dt)
    out = _linear_step_batch(psi.amps[None, :], eng, 0, np.array([dW]))[0]
    if not np.all(np.isfinite(out)):
        raise NumericalBlowupError("linear step produced non-finite amplitudes", time=t)
    return QuantumState(psi.dim, out, normalized=False)


def step_nonlinear(phi: QuantumState, t: float, dW: float, p: ModelParams, dt: float) -> QuantumState:
    """One step of the normalized filter, renormalized afterwards."""
    if phi.dim != p.dim:
        raise DimensionMismatchError(f"state dim {phi.dim} != model dim {p.dim}")
    if abs(np.vdot(phi.amps, phi.amps).real - 1.0) > 1e-9:
        raise NormalizationError("nonlinear filter requires a normalized state")
    eng = _single_time_engine(p, t, dt)
    out, _, _ = _nonlinear_step_batch(phi.amps[None, :], eng, 0, np.array([dW]),
                                      innovation_noise=False)
    nrm = float(np.linalg.norm(out[0]))
    if not math.isfinite(nrm):
        raise NumericalBlowupError("nonlinear step produced non-finite amplitudes", time=t)
    if abs(nrm - 1.0) > NORM_DRIFT_TOL:
        raise StepSizeError(f"norm drifted to {nrm:.6f} in one step; reduce dt", time=t)
    return QuantumState(phi.dim, out[0] / nrm)


def step_density(rho: DensityMatrix, t: float, dW: float, p: ModelParams, dt: float) -> DensityMatrix:
    """One step of the density-matrix filter.

    The result is re-Hermitized and trace-renormalized; eigenvalues below
    ``POSITIVITY_TOL`` fail the step.
    """
    if rho.dim != p.dim:
        raise DimensionMismatchError(f"state dim {rho.dim} != model dim {p.dim}")
    eng = _single_time_engine(p, t, dt)
    out, _, _ = _density_step_batch(rho.elems[None, :, :], eng, 0, np.array([dW]),
                                    innovation_noise=False)
    out = out[0]
    out = 0.5 * (out + out.conj().T)
    tr = float(np.trace(out).real)
    if not math.isfinite(tr):
        raise NumericalBlowupError("density step produced non-finite entries", time=t)
    out = out / tr
    if float(np.linalg.eigvalsh(out)[0]) < POSITIVITY_TOL:
        raise StepSizeError("density matrix lost positivity; reduce dt", time=t)
    return DensityMatrix(rho.dim, out, validate=False)


def _single_time_engine(p: ModelParams, t: float, dt: float) -> _Engine:
    eng = _Engine(p, dt, 0)
    eng.f = np.array([p.drive_at(t)])
    eng.emph = np.exp(-1j * np.array([p.phase_at(t)]))
    return eng


def integrate(filter_kind: str,
              initial_state,
              p: ModelParams,
              path: WienerPath,
              *,
              noise: str = "reference",
              state_stride: int = 1,
              save_steps=None,
              positivity_stride: int = 100) -> TrajectoryRecord:
    """Integrate one trajectory over the full path.

    Parameters
    ----------
    filter_kind : {"linear", "nonlinear", "density"}
    initial_state : QuantumState or DensityMatrix
        Matching ``filter_kind``; must be normalized except for the linear
        filter, which accepts any starting vector.
    noise : {"reference", "innovation"}
        Interpretation of ``path.increments`` (module docstring); the linear
        filter only supports ``"reference"``.
    state_stride : int
        Store the state every this many steps (the final state is always
        stored).  ``1`` keeps the complete trajectory.
    save_steps : array_like of int, optional
        Explicit grid indices at which to store the state; overrides
        ``state_stride``.
    positivity_stride : int
        Density filter only: spectral positivity check cadence.

    The result is a deterministic function of ``(initial_state, p, path)``:
    repeated calls return bit-identical records.
    """
    recs = integrate_batch(filter_kind, [initial_state], p,
                           path.increments[None, :], path.dt,
                           noise=noise, state_stride=state_stride,
                           save_steps=save_steps,
                           positivity_stride=positivity_stride)
    return recs[0]


def integrate_batch(filter_kind: str,
                    initial_states,
                    p: ModelParams,
                    increments: np.ndarray,
                    dt: float,
                    *,
                    noise: str = "reference",
                    state_stride: int = 1,
                    save_steps=None,
                    positivity_stride: int = 100) -> list[TrajectoryRecord]:
    """Integrate a batch of trajectories stepping all of them per BLAS call.

    ``increments`` has shape ``(B, steps)``; ``initial_states`` is either a
    single state (shared by every row) or a sequence of length ``B``.  The
    kernels are identical to :func:`integrate`'s, so each returned record
    depends only on its own row.
    """
    if filter_kind not in FILTER_KINDS:
        raise ValueError(f"filter_kind must be one of {FILTER_KINDS}, got {filter_kind!r}")
    if noise not in ("reference", "innovation"):
        raise ValueError(f"noise must be 'reference' or 'innovation', got {noise!r}")
    if filter_kind == "linear" and noise == "innovation":
        raise ValueError("the linear filter is driven by reference increments only")
    if state_stride < 1:
        raise ValueError("state_stride must be >= 1")
    increments = np.asarray(increments, dtype=float)
    if increments.ndim != 2:
        raise ValueError("increments must have shape (batch, steps)")
    n_batch, steps = increments.shape

    if isinstance(initial_states, (QuantumState, DensityMatrix)):
        initial_states = [initial_states] * n_batch
    if len(initial_states) != n_batch:
        raise ValueError(f"{len(initial_states)} initial states for batch of {n_batch}")

    eng = _Engine(p, dt, steps)
    innovation_noise = noise == "innovation"

    if save_steps is None:
        save_steps = np.arange(0, steps + 1, state_stride)
    save_steps = np.unique(np.append(np.asarray(save_steps, dtype=int), steps))
    if len(save_steps) and (save_steps[0] < 0 or save_steps[-1] > steps):
        raise ValueError("save_steps outside the grid")
    save_pos = {int(s): i for i, s in enumerate(save_steps)}

    mean_x = np.empty((n_batch, steps + 1))
    mean_y = np.empty((n_batch, steps + 1))
    record_q = np.empty((n_batch, steps))
    density = filter_kind == "density"

    for st in initial_states:
        want = DensityMatrix if density else QuantumState
        if not isinstance(st, want):
            raise TypeError(f"{filter_kind} filter needs {want.__name__} initial states")
        if st.dim != p.dim:
            raise DimensionMismatchError(f"state dim {st.dim} != model dim {p.dim}")

    if density:
        state = np.stack([st.elems for st in initial_states])
        states_out = np.empty((n_batch, len(save_steps), p.dim, p.dim), dtype=complex)
        weights = None
    else:
        state = np.stack([st.amps for st in initial_states])
        states_out = np.empty((n_batch, len(save_steps), p.dim), dtype=complex)
        weights = np.empty((n_batch, steps + 1)) if filter_kind == "linear" else None
        if filter_kind == "nonlinear":
            norms0 = np.linalg.norm(state, axis=1)
            if np.any(np.abs(norms0 - 1.0) > 1e-9):
                raise NormalizationError("nonlinear filter requires normalized states")

    def fail(cls, msg, k, row):
        exc = cls(msg, step=k + 1, time=(k + 1) * dt)
        exc.batch_row = int(row)
        raise exc

    if filter_kind == "linear":
        nrm2 = np.einsum("bi,bi->b", state.conj(), state).real
        for k in range(steps):
            if k in save_pos:
                states_out[:, save_pos[k]] = state
            apsi = state @ eng.aT
            ea = np.einsum("bi,bi->b", state.conj(), apsi) / nrm2
            mean_x[:, k], mean_y[:, k] = ea.real, ea.imag
            weights[:, k] = nrm2
            record_q[:, k] = increments[:, k] + eng.record_drift[k]
            coeff = (eng.sqmu * eng.emph[k]) * increments[:, k]
            state = state + eng.dt * (state @ eng.lin_t(k)) + coeff[:, None] * apsi
            nrm2 = np.einsum("bi,bi->b", state.conj(), state).real
            finite = np.isfinite(nrm2)
            if not finite.all():
                fail(NumericalBlowupError, f"non-finite amplitudes at step {k + 1}",
                     k, np.argmin(finite))
        states_out[:, save_pos[steps]] = state
        weights[:, steps] = nrm2
        ea = np.einsum("bi,bi->b", state.conj(), state @ eng.aT) / nrm2
        mean_x[:, steps], mean_y[:, steps] = ea.real, ea.imag
    elif filter_kind == "nonlinear":
        for k in range(steps):
            if k in save_pos:
                states_out[:, save_pos[k]] = state
            new, dw_ref, ea = _nonlinear_step_batch(
                state, eng, k, increments[:, k], innovation_noise)
            mean_x[:, k], mean_y[:, k] = ea.real, ea.imag
            record_q[:, k] = dw_ref + eng.record_drift[k]
            nrm = np.linalg.norm(new, axis=1)
            finite = np.isfinite(nrm)
            if not finite.all():
                fail(NumericalBlowupError, f"non-finite amplitudes at step {k + 1}",
                     k, np.argmin(finite))
            drift = np.abs(nrm - 1.0)
            row = int(np.argmax(drift))
            if drift[row] > NORM_DRIFT_TOL:
                fail(StepSizeError,
                     f"norm drifted by {drift[row]:.2e} at step {k + 1}; reduce dt",
                     k, row)
            state = new / nrm[:, None]
        states_out[:, save_pos[steps]] = state
        ea = np.einsum("bi,bi->b", state.conj(), state @ eng.aT)
        mean_x[:, steps], mean_y[:, steps] = ea.real, ea.imag
    else:
        for k in range(steps):
            if k in save_pos:
                states_out[:, save_pos[k]] = state
            new, dw_ref, ea = _density_step_batch(
                state, eng, k, increments[:, k], innovation_noise)
            mean_x[:, k], mean_y[:, k] = ea.real, ea.imag
            record_q[:, k] = dw_ref + eng.record_drift[k]
            new = 0.5 * (new + new.conj().transpose(0, 2, 1))
            tr = np.einsum("bii->b", new).real
            finite = np.isfinite(tr)
            if not finite.all():
                fail(NumericalBlowupError, f"non-finite density matrix at step {k + 1}",
                     k, np.argmin(finite))
            state = new / tr[:, None, None]
            if (k + 1) % positivity_stride == 0 or k == steps - 1:
                eiglo = np.linalg.eigvalsh(state)[:, 0]
                row = int(np.argmin(eiglo))
                if eiglo[row] < POSITIVITY_TOL:
                    fail(StepSizeError,
                         f"density eigenvalue {eiglo[row]:g} at step {k + 1}; reduce dt",
                         k, row)
        states_out[:, save_pos[steps]] = state
        ea = np.einsum("bii->b", np.matmul(eng.a, state))
        mean_x[:, steps], mean_y[:, steps] = ea.real, ea.imag

    records = []
    for b in range(n_batch):
        records.append(TrajectoryRecord(
            filter_kind=filter_kind, params=p, dt=dt, times=eng.times,
            states=np.ascontiguousarray(states_out[b]),
            state_steps=save_steps, record_q=record_q[b],
            mean_x=mean_x[b], mean_y=mean_y[b],
            weights=None if weights is None else weights[b], noise=noise))
    return records


def reconstruct_increments(record: TrajectoryRecord) -> np.ndarray:
    """Recover the reference Wiener increments from an observed record."""
    p = record.params
    times = record.times[:-1]
    f = p.drive_array(times)
    emph = np.exp(-1j * p.phase_array(times))
    return record.record_q - 2.0 * (emph * f).real * record.dt


def replay_linear_from_record(initial: QuantumState,
                              p: ModelParams,
                              record: TrajectoryRecord,
                              *,
                              state_stride: int = 1) -> TrajectoryRecord:
    """Re-integrate the linear filter along an observed record.

    The reference increments are rebuilt from ``record_q`` and fed to the
    linear filter, so the replayed posterior follows the same trajectory as
    the filter that produced the record: its normalization matches the
    nonlinear run pathwise (Girsanov consistency) and its squared norm
    tracks the output-measure density.
    """
    if record.params != p:
        raise ParamsMismatchError("record was produced under different model parameters")
    dw = reconstruct_increments(record)
    path = WienerPath(seed=0, dt=record.dt, steps=record.steps, increments=dw)
    return integrate("linear", initial, p, path, state_stride=state_stride)
