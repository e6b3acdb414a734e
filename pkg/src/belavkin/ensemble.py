"""Trajectory ensembles, master-equation cross-validation, convergence order.

Ensembles are deterministic functions of their spec: trajectory ``i`` draws
its Wiener path from the Philox stream ``(base_seed, i)``, trajectories are
reduced in fixed blocks of :data:`BLOCK` in index order, and the blockwise
merge is identical whatever the worker count, so summaries are bit-identical
under any parallelism.  ``BELAVKIN_THREADS`` caps the process pool.

Noise semantics per filter kind (``noise="auto"``): nonlinear and density
ensembles draw the innovation process (physical output measure), which makes
the plain average of their projectors an unbiased estimate of the
unconditional master equation; linear ensembles draw reference-measure
increments, under which the squared norms are a unit-mean martingale and
weight-reweighted averages estimate the same master equation.
"""

from __future__ import annotations

import math
import os
import pickle
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EnsembleTrajectoryError, PhysicalDomainError
from .fock import DensityMatrix, QuantumState, SqueezeParams, coherent_state, \
    squeezed_coherent_state, vacuum_state
from .filters import ModelParams, WienerPath, integrate, integrate_batch
from . import analytic

#: Reduction block size; fixed so results do not depend on worker count.
BLOCK = 32


def worker_count(n_blocks: int) -> int:
    """Pool size: min(blocks, BELAVKIN_THREADS or cpu count)."""
    env = os.environ.get("BELAVKIN_THREADS")
    if env is not None:
        cap = int(env)
        if cap < 1:
            raise ValueError(f"BELAVKIN_THREADS must be a positive integer, got {env!r}")
    else:
        cap = os.cpu_count() or 1
    return max(1, min(n_blocks, cap))


@dataclass(frozen=True)
class InitialState:
    """State descriptor: vacuum, coherent(alpha), squeezed(xi, alpha), or
    explicit amplitudes."""

    kind: str
    alpha: complex = 0j
    xi: complex = 0j
    amps: tuple = ()

    def __post_init__(self):
        if self.kind not in ("vacuum", "coherent", "squeezed", "explicit"):
            raise ValueError(f"unknown initial state kind {self.kind!r}")
        if self.kind == "explicit" and len(self.amps) < 2:
            raise ValueError("explicit initial state needs amplitudes")

    @classmethod
    def vacuum(cls) -> "InitialState":
        return cls("vacuum")

    @classmethod
    def coherent(cls, alpha: complex) -> "InitialState":
        return cls("coherent", alpha=complex(alpha))

    @classmethod
    def squeezed(cls, xi: complex, alpha: complex) -> "InitialState":
        return cls("squeezed", alpha=complex(alpha), xi=complex(xi))

    @classmethod
    def from_gamma(cls, gamma: complex, alpha: complex) -> "InitialState":
        sp = SqueezeParams.from_gamma(gamma, alpha)
        return cls("squeezed", alpha=sp.alpha, xi=sp.xi)

    @classmethod
    def explicit(cls, amps) -> "InitialState":
        return cls("explicit", amps=tuple(complex(a) for a in amps))

    def build(self, dim: int) -> QuantumState:
        if self.kind == "vacuum":
            return vacuum_state(dim)
        if self.kind == "coherent":
            return coherent_state(self.alpha, dim)
        if self.kind == "squeezed":
            return squeezed_coherent_state(SqueezeParams(self.xi, self.alpha), dim)
        amps = np.asarray(self.amps, dtype=complex)
        if len(amps) != dim:
            raise ValueError(f"explicit amplitudes have length {len(amps)}, dim is {dim}")
        return QuantumState(dim, amps / np.linalg.norm(amps))


@dataclass(frozen=True)
class EnsembleSpec:
    """Trajectory ``i`` draws the Philox stream ``(base_seed,
    stream_offset + i)``; disjoint offsets give disjoint sub-ensembles."""

    params: ModelParams
    filter_kind: str
    initial: InitialState
    n_traj: int
    base_seed: int
    dt: float
    t_final: float
    noise: str = "auto"
    state_snapshots: int = 8
    spill_dir: str | None = None
    stream_offset: int = 0

    def __post_init__(self):
        if self.filter_kind not in ("linear", "nonlinear", "density"):
            raise ValueError(f"unknown filter kind {self.filter_kind!r}")
        if self.n_traj < 1:
            raise ValueError("n_traj must be >= 1")
        if not self.t_final > 0:
            raise ValueError("t_final must be > 0")
        steps = round(self.t_final / self.dt)
        if steps < 1 or abs(steps * self.dt - self.t_final) > 1e-9 * self.t_final:
            raise ValueError(f"dt={self.dt} does not divide t_final={self.t_final}")
        if self.noise not in ("auto", "reference", "innovation"):
            raise ValueError(f"unknown noise semantics {self.noise!r}")

    @property
    def steps(self) -> int:
        return round(self.t_final / self.dt)

    @property
    def resolved_noise(self) -> str:
        if self.noise != "auto":
            return self.noise
        return "reference" if self.filter_kind == "linear" else "innovation"

    @property
    def snapshot_steps(self) -> np.ndarray:
        k = min(self.state_snapshots, self.steps)
        return np.unique(np.round(np.linspace(0, self.steps, k + 1)).astype(int))


@dataclass
class EnsembleSummary:
    """Online-accumulated ensemble statistics.

    ``mean_x``/``mean_y`` are per-step means of the posterior quadrature
    means over trajectories, with standard errors ``se_x``/``se_y``;
    ``mean_states`` holds the ensemble-averaged density matrix at
    ``snapshot_steps`` (weight-reweighted and self-normalized for the linear
    filter, so its trace is exactly 1).  ``weight_mean``/``weight_se`` track
    the linear-filter martingale.
    """

    spec: EnsembleSpec
    times: np.ndarray
    snapshot_steps: np.ndarray
    mean_states: np.ndarray
    mean_x: np.ndarray
    se_x: np.ndarray
    mean_y: np.ndarray
    se_y: np.ndarray
    weight_mean: np.ndarray | None
    weight_se: np.ndarray | None

    def snapshot(self, i: int) -> DensityMatrix:
        return DensityMatrix(self.mean_states.shape[-1], self.mean_states[i], validate=False)

    def final_mean_state(self) -> DensityMatrix:
        return self.snapshot(len(self.snapshot_steps) - 1)


class _Welford:
    """One-pass mean/variance accumulator over arrays, mergeable in order."""

    def __init__(self, shape):
        self.count = 0
        self.mean = np.zeros(shape)
        self.m2 = np.zeros(shape)

    def add(self, x: np.ndarray) -> None:
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)

    def merge(self, other: "_Welford") -> None:
        if other.count == 0:
            return
        if self.count == 0:
            self.count, self.mean, self.m2 = other.count, other.mean, other.m2
            return
        n1, n2 = self.count, other.count
        delta = other.mean - self.mean
        tot = n1 + n2
        self.mean = self.mean + delta * (n2 / tot)
        self.m2 = self.m2 + other.m2 + delta * delta * (n1 * n2 / tot)
        self.count = tot

    def se(self) -> np.ndarray:
        if self.count < 2:
            return np.full_like(self.mean, np.nan)
        return np.sqrt(self.m2 / (self.count - 1) / self.count)


def _run_block(spec: EnsembleSpec, lo: int, hi: int) -> dict:
    """Integrate trajectories [lo, hi) as one batch; accumulate partials."""
    p = spec.params
    initial = spec.initial.build(p.dim)
    if spec.filter_kind == "density":
        initial = DensityMatrix.from_state(initial)
    snaps = spec.snapshot_steps
    steps = spec.steps
    wx = _Welford(steps + 1)
    wy = _Welford(steps + 1)
    ww = _Welford(steps + 1) if spec.filter_kind == "linear" else None
    state_sum = np.zeros((len(snaps), p.dim, p.dim), dtype=complex)
    wsum = np.zeros(len(snaps))
    full_states = spec.spill_dir is not None
    increments = np.stack([
        WienerPath.generate(spec.base_seed, spec.dt, steps,
                            stream=spec.stream_offset + i).increments
        for i in range(lo, hi)])
    try:
        recs = integrate_batch(spec.filter_kind, initial, p, increments, spec.dt,
                               noise=spec.resolved_noise, state_stride=1,
                               save_steps=None if full_states else snaps)
    except Exception as exc:
        row = getattr(exc, "batch_row", None)
        which = f"trajectory {lo + row}" if row is not None else \
            f"a trajectory in [{lo}, {hi})"
        raise EnsembleTrajectoryError(f"{which} failed: {exc}") from exc
    for i, rec in zip(range(lo, hi), recs):
        wx.add(rec.mean_x)
        wy.add(rec.mean_y)
        snap_idx = [int(np.searchsorted(rec.state_steps, s)) for s in snaps]
        if spec.filter_kind == "density":
            for out_i, rec_i in enumerate(snap_idx):
                state_sum[out_i] += rec.states[rec_i]
            wsum += 1.0
        elif spec.filter_kind == "linear":
            ww.add(rec.weights)
            for out_i, rec_i in enumerate(snap_idx):
                v = rec.states[rec_i]
                state_sum[out_i] += np.outer(v, v.conj())  # weight = |v|^2 built in
                wsum[out_i] += float(np.vdot(v, v).real)
        else:
            for out_i, rec_i in enumerate(snap_idx):
                v = rec.states[rec_i]
                state_sum[out_i] += np.outer(v, v.conj())
            wsum += 1.0
        if full_states:
            write_trajectory_spill(
                Path(spec.spill_dir) / f"traj_{i:06d}.bin", rec.states, spec.dt)
    return {"wx": wx, "wy": wy, "ww": ww, "state_sum": state_sum, "wsum": wsum}


def _block_args(spec: EnsembleSpec):
    return [(spec, lo, min(lo + BLOCK, spec.n_traj)) for lo in range(0, spec.n_traj, BLOCK)]


def _run_block_star(args):
    return _run_block(*args)


def run_ensemble(spec: EnsembleSpec) -> EnsembleSummary:
    """Run all trajectories and reduce to an :class:`EnsembleSummary`.

    All-or-nothing: any trajectory failure aborts the whole ensemble with
    the failing index.  Results are bit-identical for any worker count.
    """
    if spec.spill_dir is not None:
        Path(spec.spill_dir).mkdir(parents=True, exist_ok=True)
    args = _block_args(spec)
    workers = worker_count(len(args))
    if workers > 1 and _picklable(spec):
        with ProcessPoolExecutor(max_workers=workers) as pool:
            partials = list(pool.map(_run_block_star, args))
    else:
        partials = [_run_block(*a) for a in args]

    wx = _Welford(spec.steps + 1)
    wy = _Welford(spec.steps + 1)
    ww = _Welford(spec.steps + 1) if spec.filter_kind == "linear" else None
    snaps = spec.snapshot_steps
    p = spec.params
    state_sum = np.zeros((len(snaps), p.dim, p.dim), dtype=complex)
    wsum = np.zeros(len(snaps))
    for part in partials:
        wx.merge(part["wx"])
        wy.merge(part["wy"])
        if ww is not None:
            ww.merge(part["ww"])
        state_sum += part["state_sum"]
        wsum += part["wsum"]

    mean_states = state_sum / wsum[:, None, None]
    times = np.arange(spec.steps + 1) * spec.dt
    return EnsembleSummary(
        spec=spec, times=times, snapshot_steps=snaps, mean_states=mean_states,
        mean_x=wx.mean, se_x=wx.se(), mean_y=wy.mean, se_y=wy.se(),
        weight_mean=None if ww is None else ww.mean,
        weight_se=None if ww is None else ww.se())


def _picklable(spec: EnsembleSpec) -> bool:
    try:
        pickle.dumps(spec)
        return True
    except Exception:
        return False


_SPILL_HEADER = struct.Struct("<QQd")


def write_trajectory_spill(path, states: np.ndarray, dt: float) -> None:
    """Binary spill: header (dim, steps, dt as 64-bit LE) + row-major
    little-endian complex amplitudes, one row per stored step."""
    states = np.asarray(states)
    rows = states.shape[0]
    dim = states.shape[1]
    with open(path, "wb") as fh:
        fh.write(_SPILL_HEADER.pack(dim, rows - 1, dt))
        fh.write(np.ascontiguousarray(states.reshape(rows, -1), dtype="<c16").tobytes())


def read_trajectory_spill(path) -> tuple[float, np.ndarray]:
    """Read a spill file back; returns ``(dt, states)``."""
    with open(path, "rb") as fh:
        dim, steps, dt = _SPILL_HEADER.unpack(fh.read(_SPILL_HEADER.size))
        raw = np.frombuffer(fh.read(), dtype="<c16")
    rows = steps + 1
    rowlen = raw.size // rows
    if rowlen * rows != raw.size or rowlen not in (dim, dim * dim):
        raise ValueError(f"spill file {path} is inconsistent with its header")
    shape = (rows, dim) if rowlen == dim else (rows, dim, dim)
    return float(dt), raw.reshape(shape).astype(complex)


@dataclass(frozen=True)
class UnconditionalTrack:
    times: np.ndarray
    states: np.ndarray  # (n_saved, dim, dim)

    def state(self, i: int) -> DensityMatrix:
        return DensityMatrix(self.states.shape[-1], self.states[i], validate=False)

    def final(self) -> DensityMatrix:
        return self.state(len(self.times) - 1)


def unconditional_evolution(p: ModelParams, initial: DensityMatrix,
                            dt: float, t_final: float,
                            *, store_stride: int = 1) -> UnconditionalTrack:
    """Fourth-order Runge-Kutta integration of the noise-averaged equation.

    ``drho/dt = -i[H, rho] - (mu/2){a^dag a, rho}
    + [sqrt(mu) a conj(f) - sqrt(mu) a^dag f, rho] + mu a rho a^dag``
    (the filtering drift with the innovation term dropped).
    """
    from .fock import make_annihilation

    if initial.dim != p.dim:
        raise ValueError(f"state dim {initial.dim} != model dim {p.dim}")
    steps = round(t_final / dt)
    if steps < 1 or abs(steps * dt - t_final) > 1e-9 * t_final:
        raise ValueError(f"dt={dt} does not divide t_final={t_final}")
    a = make_annihilation(p.dim).elems
    ad = a.conj().T
    n_diag = np.arange(p.dim)
    base = np.diag(-1j * p.omega * (n_diag + 0.5) - 0.5 * p.mu * n_diag)
    sqmu = math.sqrt(p.mu)

    def m_op(t: float) -> np.ndarray:
        f = p.drive_at(t)
        return base + sqmu * (np.conj(f) * a - f * ad)

    const_m = m_op(0.0) if p.drive_is_constant else None

    def rhs(t: float, rho: np.ndarray) -> np.ndarray:
        m = const_m if const_m is not None else m_op(t)
        mr = m @ rho
        return mr + mr.conj().T + p.mu * (a @ rho @ ad)

    save = np.unique(np.append(np.arange(0, steps + 1, store_stride), steps))
    save_pos = {int(s): i for i, s in enumerate(save)}
    out = np.empty((len(save), p.dim, p.dim), dtype=complex)
    rho = np.array(initial.elems)
    for k in range(steps):
        if k in save_pos:
            out[save_pos[k]] = rho
        t = k * dt
        k1 = rhs(t, rho)
        k2 = rhs(t + 0.5 * dt, rho + 0.5 * dt * k1)
        k3 = rhs(t + 0.5 * dt, rho + 0.5 * dt * k2)
        k4 = rhs(t + dt, rho + dt * k3)
        rho = rho + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        rho = 0.5 * (rho + rho.conj().T)
        rho /= float(np.trace(rho).real)
    out[save_pos[steps]] = rho
    lo = float(np.linalg.eigvalsh(rho)[0])
    if lo < -1e-8:
        raise PhysicalDomainError(f"unconditional evolution lost positivity: eigmin {lo:g}")
    return UnconditionalTrack(times=save * dt, states=out)


@dataclass(frozen=True)
class ConvergenceResult:
    scenario: str
    dts: tuple
    errors: tuple
    order: float | None
    monotone: bool
    details: str


def _coarsen(fine: WienerPath, factor: int) -> WienerPath:
    inc = fine.increments.reshape(-1, factor).sum(axis=1)
    return WienerPath(seed=fine.seed, dt=fine.dt * factor,
                      steps=fine.steps // factor, increments=inc, stream=fine.stream)


def _linear_coherent_error(dt_list, n_seeds, mu, deterministic=False):
    """Mean terminal strong error of the linear filter vs the exact
    coherent-ray solution (amplitude in closed form, prefactor from
    fine-grid Ito sums on a refinement of the same path)."""
    omega, alpha0, dim, t_final = 1.0, 1.0, 32, 1.0
    p = ModelParams(omega=omega, mu=mu, dim=dim, omega0=0.0, phase_mode="special")
    psi0 = coherent_state(alpha0, dim)
    refine = 64
    dt_fine = min(dt_list) / refine
    n_fine = round(t_final / dt_fine)
    z = 1j * omega + 0.5 * mu
    n_levels = np.arange(dim)
    errors = np.zeros(len(dt_list))
    for seed in range(n_seeds):
        fine = WienerPath.generate(seed + 1, dt_fine, n_fine)
        if deterministic:
            ln_l = -1j * omega * t_final / 2
        else:
            t_f = fine.times[:-1]
            alpha_f = alpha0 * np.exp(-z * t_f)
            ito = np.sum(alpha_f * (-1j) * fine.increments)  # exp(-i phi) = -i
            g1 = abs(alpha0) ** 2 * (1.0 - math.exp(-mu * t_final)) / mu if mu else 0.0
            g2 = -(alpha0**2) * (1.0 - np.exp(-2 * z * t_final)) / (2 * z) if mu else 0.0
            ln_l = (-1j * omega * t_final / 2 - 0.5 * mu * g1 - 0.5 * mu * g2
                    + math.sqrt(mu) * ito)
        alpha_t = alpha0 * np.exp(-z * t_final)
        target = np.exp(ln_l) * coherent_state(alpha_t, dim).amps
        if deterministic:
            target = psi0.amps * np.exp(-1j * omega * (n_levels + 0.5) * t_final)
        for i, dtc in enumerate(dt_list):
            path = _coarsen(fine, round(dtc / dt_fine))
            rec = integrate("linear", psi0, p, path, state_stride=path.steps)
            errors[i] += np.linalg.norm(rec.states[-1] - target)
    return errors / n_seeds


def _nonlinear_squeezed_error(dt_list, n_seeds):
    """Max deviation of the numeric dX track from the closed form."""
    p = ModelParams(omega=1.0, mu=0.04, dim=64, omega0=0.05, phase_mode="special")
    psi0 = squeezed_coherent_state(SqueezeParams.from_gamma(0.8, 1.0), 64)
    t_final = 2.0
    dt_fine = min(dt_list) / 4
    fine_steps = round(t_final / dt_fine)
    errors = np.zeros(len(dt_list))
    for seed in range(n_seeds):
        fine = WienerPath.generate(seed + 1, dt_fine, fine_steps)
        for i, dtc in enumerate(dt_list):
            path = _coarsen(fine, round(dtc / dt_fine))
            rec = integrate("nonlinear", psi0, p, path, state_stride=1)
            track = analytic.new_squeeze_track(p, 0.8, 1.0, path.times)
            qt = analytic.quadrature_track(track)
            from .fock import make_annihilation
            a = make_annihilation(64).elems
            S = rec.states
            aS = S @ a.T
            ea = np.einsum("ij,ij->i", S.conj(), aS)
            ea2 = np.einsum("ij,ij->i", S.conj(), aS @ a.T)
            nlow = np.einsum("ij,ij->i", aS.conj(), aS).real
            adS = S @ a.conj()
            nup = np.einsum("ij,ij->i", adS.conj(), adS).real
            dx = np.sqrt(np.maximum(0.25 * (2 * ea2.real + nlow + nup) - ea.real**2, 0))
            errors[i] += float(np.max(np.abs(dx - qt.dx)))
    return errors / n_seeds


SCENARIOS = ("linear-coherent", "deterministic", "nonlinear-squeezed")


def convergence_order(scenario: str,
                      dt_list=(4e-3, 1e-3, 2.5e-4),
                      n_seeds: int = 20) -> ConvergenceResult:
    """Estimate the strong convergence order of a named scenario.

    ``dt_list`` should be geometric; the order is the least-squares slope of
    ``log(error)`` against ``log(dt)``.  A non-monotone error curve reports
    no order, only per-dt diagnostics.
    """
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; choose from {SCENARIOS}")
    dts = tuple(sorted((float(d) for d in dt_list), reverse=True))
    if scenario == "linear-coherent":
        errs = _linear_coherent_error(dts, n_seeds, mu=0.1)
    elif scenario == "deterministic":
        errs = _linear_coherent_error(dts, n_seeds=1, mu=0.0, deterministic=True)
    else:
        errs = _nonlinear_squeezed_error(dts, n_seeds)
    errs = tuple(float(e) for e in errs)
    monotone = all(errs[i] > errs[i + 1] for i in range(len(errs) - 1))
    details = ", ".join(f"dt={d:g}: err={e:.3e}" for d, e in zip(dts, errs))
    if not monotone or min(errs) <= 0:
        return ConvergenceResult(scenario, dts, errs, None, False,
                                 f"non-monotone error curve: {details}")
    slope = float(np.polyfit(np.log(dts), np.log(errs), 1)[0])
    return ConvergenceResult(scenario, dts, errs, slope, True, details)
