"""Command-line interface: scenario execution and CSV/JSON export.

Commands::

    belavkin simulate --config run.json [--compare-analytic]
    belavkin fig2 --out DIR [--mu 0.01,0.04,0.08] [--no-overlay]
    belavkin convergence --scenario linear-coherent

Exit codes: 0 success, 1 configuration/validation error, 2 numerical
failure (the failing step index and time are printed).  Worker parallelism
for ensembles is capped by the ``BELAVKIN_THREADS`` environment variable.

CSV files carry a header row and shortest round-trip decimal floats, so
re-parsing reproduces the values exactly.  ``record_q`` holds the observed
increment over the step ending at that row's time (first row 0).
"""

from __future__ import annotations

import csv
import json
import math
import sys
from pathlib import Path

import click
import numpy as np

from . import analytic
from .config import RunConfig, parse_config
from .ensemble import (
    SCENARIOS,
    EnsembleSpec,
    convergence_order,
    run_ensemble,
)
from .errors import BelavkinError, ConfigError
from .fock import make_annihilation
from .filters import ModelParams, WienerPath, integrate

FIG2_MU_DEFAULT = (0.01, 0.04, 0.08)
FIG2_GAMMA0 = 0.8
FIG2_OMEGA0 = 0.05
FIG2_TAU_MAX = 100.0


def _coherent_matrix(alphas: np.ndarray, dim: int) -> np.ndarray:
    """Rows are truncated, renormalized coherent states |alphas[k]>."""
    from scipy.special import gammaln

    n = np.arange(dim)
    alphas = np.asarray(alphas, dtype=complex)
    safe = np.where(alphas == 0, 1.0, alphas)
    logs = (-0.5 * np.abs(alphas[:, None]) ** 2
            + n[None, :] * np.log(safe[:, None])
            - 0.5 * gammaln(n + 1.0)[None, :])
    mat = np.exp(logs)
    mat[alphas == 0] = 0.0
    mat[alphas == 0, 0] = 1.0
    return mat / np.linalg.norm(mat, axis=1, keepdims=True)


def _vector_moments(states: np.ndarray, a: np.ndarray):
    """Per-row <a>, dX, dY for unit-norm amplitude rows."""
    a_s = states @ a.T
    ad_s = states @ a.conj()
    ea = np.einsum("ij,ij->i", states.conj(), a_s)
    ea2 = np.einsum("ij,ij->i", states.conj(), a_s @ a.T)
    n_low = np.einsum("ij,ij->i", a_s.conj(), a_s).real
    n_up = np.einsum("ij,ij->i", ad_s.conj(), ad_s).real
    dx = np.sqrt(np.maximum(0.25 * (2 * ea2.real + n_low + n_up) - ea.real**2, 0.0))
    dy = np.sqrt(np.maximum(0.25 * (n_low + n_up - 2 * ea2.real) - ea.imag**2, 0.0))
    return ea, dx, dy


def _density_moments(states: np.ndarray, a: np.ndarray):
    ad = a.conj().T
    ea = np.einsum("kij,ji->k", states, a)
    ea2 = np.einsum("kij,ji->k", states, a @ a)
    n_low = np.einsum("kij,ji->k", states, ad @ a).real
    n_up = np.einsum("kij,ji->k", states, a @ ad).real
    dx = np.sqrt(np.maximum(0.25 * (2 * ea2.real + n_low + n_up) - ea.real**2, 0.0))
    dy = np.sqrt(np.maximum(0.25 * (n_low + n_up - 2 * ea2.real) - ea.imag**2, 0.0))
    return ea, dx, dy


def _asymptotic_alphas(p: ModelParams, times: np.ndarray) -> np.ndarray:
    z = 1j * p.omega + 0.5 * p.mu
    if p.drive_is_constant:
        f0 = complex(p.drive)
        return -math.sqrt(p.mu) * f0 * (1.0 - np.exp(-z * times)) / z
    return np.array([analytic.asymptotic_amplitude(p, float(t)) for t in times])


def _record_column(record_q: np.ndarray) -> np.ndarray:
    return np.concatenate(([0.0], record_q))


def single_run_table(cfg: RunConfig) -> tuple[list[str], dict[str, np.ndarray]]:
    """Column names and per-step values for a single-trajectory run."""
    p = cfg.model
    path = WienerPath.generate(cfg.seed, cfg.dt, cfg.steps)
    cols: dict[str, np.ndarray] = {}
    if cfg.filter_kind == "analytic":
        track = analytic.build_squeeze_track(p, cfg.gamma0, cfg.alpha0, path)
        qt = analytic.quadrature_track(track)
        emph = np.exp(-1j * p.phase_array(path.times[:-1]))
        f = p.drive_array(path.times[:-1])
        values = {
            "meanX": qt.mean_x, "meanY": qt.mean_y, "dX": qt.dx, "dY": qt.dy,
            "norm": np.sqrt(track.weight), "weight": track.weight,
            "record_q": _record_column(
                path.increments + 2.0 * (emph * f).real * cfg.dt),
        }
    else:
        initial = cfg.initial.build(p.dim)
        if cfg.filter_kind == "density":
            from .fock import DensityMatrix
            initial = DensityMatrix.from_state(initial)
        rec = integrate(cfg.filter_kind, initial, p, path, state_stride=1)
        a = make_annihilation(p.dim).elems
        if cfg.filter_kind == "density":
            ea, dx, dy = _density_moments(rec.states, a)
            norm = np.einsum("kii->k", rec.states).real
        else:
            states = rec.states
            if cfg.filter_kind == "linear":
                norms = np.linalg.norm(states, axis=1)
                ea, dx, dy = _vector_moments(states / norms[:, None], a)
                norm = norms
            else:
                ea, dx, dy = _vector_moments(states, a)
                norm = np.ones(len(states))
        values = {
            "meanX": rec.mean_x, "meanY": rec.mean_y, "dX": dx, "dY": dy,
            "norm": norm, "record_q": _record_column(rec.record_q),
        }
        if cfg.filter_kind == "linear":
            values["weight"] = rec.weights
        if "fidelity_to_asymptotic" in cfg.fields:
            coh = _coherent_matrix(_asymptotic_alphas(p, path.times), p.dim)
            if cfg.filter_kind == "density":
                fid = np.einsum("ki,kij,kj->k", coh.conj(), rec.states, coh).real
            else:
                psi = rec.states if cfg.filter_kind == "nonlinear" \
                    else rec.states / np.linalg.norm(rec.states, axis=1)[:, None]
                fid = np.abs(np.einsum("ki,ki->k", coh.conj(), psi)) ** 2
            values["fidelity_to_asymptotic"] = fid
    cols["t"] = path.times
    for name in cfg.fields:
        cols[name] = values[name]
    return list(cols.keys()), cols


def ensemble_run_table(cfg: RunConfig) -> tuple[list[str], dict[str, np.ndarray]]:
    spec = EnsembleSpec(params=cfg.model, filter_kind=cfg.filter_kind,
                        initial=cfg.initial, n_traj=cfg.n_traj,
                        base_seed=cfg.seed, dt=cfg.dt, t_final=cfg.t_final)
    summary = run_ensemble(spec)
    cols: dict[str, np.ndarray] = {"t": summary.times}
    for name in cfg.fields:
        if name == "meanX":
            cols["meanX"] = summary.mean_x
            cols["meanX_se"] = summary.se_x
        elif name == "meanY":
            cols["meanY"] = summary.mean_y
            cols["meanY_se"] = summary.se_y
        elif name == "weight":
            cols["weight_mean"] = summary.weight_mean
            cols["weight_se"] = summary.weight_se
    return list(cols.keys()), cols


def write_table(path: str, fmt: str, columns: list[str], data: dict) -> None:
    rows = zip(*(data[c] for c in columns))
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(columns)
            for row in rows:
                writer.writerow([repr(float(v)) for v in row])
    else:
        payload = {"columns": columns,
                   "rows": [[float(v) for v in row] for row in rows]}
        with open(path, "w") as fh:
            json.dump(payload, fh)


def run_single(cfg: RunConfig) -> str:
    columns, data = single_run_table(cfg)
    write_table(cfg.out_path, cfg.out_format, columns, data)
    return cfg.out_path


def run_ensemble_cmd(cfg: RunConfig) -> str:
    columns, data = ensemble_run_table(cfg)
    write_table(cfg.out_path, cfg.out_format, columns, data)
    return cfg.out_path


def fig2_params(mu: float, dim: int = 64) -> ModelParams:
    return ModelParams(omega=1.0, mu=mu, dim=dim, omega0=FIG2_OMEGA0,
                       phase_mode="special")


def run_fig2(mu_values, out_dir, *, d_tau: float = 0.01, overlay: bool = True,
             overlay_dt: float = 5e-3, seed: int = 7) -> list[str]:
    """Squeezing-relaxation curves: per mu, CSV columns tau, dX, dY.

    The analytic file samples the closed-form uncertainties on
    ``tau = omega * t`` in [0, 100]; the companion ``*_numeric.csv`` overlays
    the same quantities extracted from one nonlinear-filter trajectory.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    taus = np.round(np.arange(0.0, FIG2_TAU_MAX + d_tau / 2, d_tau), 12)
    for mu in mu_values:
        p = fig2_params(mu)
        times = taus / p.omega
        track = analytic.new_squeeze_track(p, FIG2_GAMMA0, 1.0, times)
        qt = analytic.quadrature_track(track)
        path = out / f"fig2_mu{mu:g}.csv"
        write_table(str(path), "csv", ["tau", "dX", "dY"],
                    {"tau": taus, "dX": qt.dx, "dY": qt.dy})
        written.append(str(path))
        if overlay:
            from .fock import SqueezeParams, squeezed_coherent_state
            steps = round(FIG2_TAU_MAX / p.omega / overlay_dt)
            wpath = WienerPath.generate(seed, overlay_dt, steps)
            psi0 = squeezed_coherent_state(SqueezeParams.from_gamma(FIG2_GAMMA0, 1.0), p.dim)
            rec = integrate("nonlinear", psi0, p, wpath, state_stride=1)
            a = make_annihilation(p.dim).elems
            _, dx, dy = _vector_moments(rec.states, a)
            numeric = out / f"fig2_mu{mu:g}_numeric.csv"
            write_table(str(numeric), "csv", ["tau", "dX", "dY"],
                        {"tau": rec.times * p.omega, "dX": dx, "dY": dy})
            written.append(str(numeric))
    return written


def _compare_with_analytic(cfg: RunConfig) -> dict:
    """Numeric filter vs closed forms on the same path; max deviations."""
    p = cfg.model
    path = WienerPath.generate(cfg.seed, cfg.dt, cfg.steps)
    track = analytic.build_squeeze_track(p, cfg.gamma0, cfg.alpha0, path)
    qt = analytic.quadrature_track(track)
    initial = cfg.initial.build(p.dim)
    if cfg.filter_kind == "density":
        from .fock import DensityMatrix
        initial = DensityMatrix.from_state(initial)
    rec = integrate(cfg.filter_kind, initial, p, path, state_stride=1)
    a = make_annihilation(p.dim).elems
    if cfg.filter_kind == "density":
        _, dx, dy = _density_moments(rec.states, a)
    elif cfg.filter_kind == "linear":
        norms = np.linalg.norm(rec.states, axis=1)
        _, dx, dy = _vector_moments(rec.states / norms[:, None], a)
    else:
        _, dx, dy = _vector_moments(rec.states, a)
    return {
        "max |meanX - analytic|": float(np.max(np.abs(rec.mean_x - qt.mean_x))),
        "max |meanY - analytic|": float(np.max(np.abs(rec.mean_y - qt.mean_y))),
        "max |dX - analytic|": float(np.max(np.abs(dx - qt.dx))),
        "max |dY - analytic|": float(np.max(np.abs(dy - qt.dy))),
    }


@click.group()
def main():
    """Heterodyne quantum filtering simulator."""


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="JSON run configuration.")
@click.option("--compare-analytic", is_flag=True,
              help="Also run the closed forms on the same seed and print "
                   "the maximum deviations.")
def simulate(config_path: str, compare_analytic: bool):
    """Run a single trajectory or an ensemble from a config file."""
    try:
        cfg = parse_config(Path(config_path).read_text())
    except ConfigError as exc:
        for problem in exc.problems:
            click.echo(f"config error: {problem}", err=True)
        sys.exit(1)
    try:
        if cfg.n_traj > 1:
            out = run_ensemble_cmd(cfg)
        else:
            out = run_single(cfg)
            if compare_analytic:
                if cfg.filter_kind == "analytic":
                    click.echo("config error: --compare-analytic needs a "
                               "numeric filter", err=True)
                    sys.exit(1)
                for name, val in _compare_with_analytic(cfg).items():
                    click.echo(f"comparison {name} = {val:.6e}")
    except BelavkinError as exc:
        step = getattr(exc, "step", None)
        at = f" at step {step}, t={getattr(exc, 'time', None)}" if step is not None else ""
        click.echo(f"numerical failure{at}: {exc}", err=True)
        sys.exit(2)
    click.echo(f"wrote {out}")


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False),
              help="Output directory for the CSV files.")
@click.option("--mu", "mu_text", default="0.01,0.04,0.08", show_default=True,
              help="Comma-separated coupling constants.")
@click.option("--d-tau", default=0.01, show_default=True,
              help="Dimensionless time step of the analytic curves.")
@click.option("--overlay/--no-overlay", default=True, show_default=True,
              help="Also write numeric nonlinear-filter overlay files.")
@click.option("--overlay-dt", default=5e-3, show_default=True,
              help="Integrator step of the overlay trajectory.")
@click.option("--seed", default=7, show_default=True)
def fig2(out_dir, mu_text, d_tau, overlay, overlay_dt, seed):
    """Squeezing-relaxation curves dX(tau), dY(tau) for several couplings."""
    try:
        mu_values = [float(v) for v in mu_text.split(",") if v.strip()]
        if not mu_values or any(m < 0 for m in mu_values):
            raise ValueError(f"invalid mu list {mu_text!r}")
    except ValueError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(1)
    try:
        written = run_fig2(mu_values, out_dir, d_tau=d_tau, overlay=overlay,
                           overlay_dt=overlay_dt, seed=seed)
    except BelavkinError as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        sys.exit(2)
    for path in written:
        click.echo(f"wrote {path}")


@main.command()
@click.option("--scenario", required=True, type=click.Choice(SCENARIOS),
              help="Named convergence scenario.")
@click.option("--dt-list", default="4e-3,1e-3,2.5e-4", show_default=True)
@click.option("--seeds", default=20, show_default=True)
def convergence(scenario, dt_list, seeds):
    """Measure the strong convergence order of an integrator scenario."""
    try:
        dts = [float(v) for v in dt_list.split(",") if v.strip()]
    except ValueError:
        click.echo(f"config error: invalid dt list {dt_list!r}", err=True)
        sys.exit(1)
    try:
        result = convergence_order(scenario, dts, seeds)
    except BelavkinError as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        sys.exit(2)
    click.echo(result.details)
    if result.order is None:
        click.echo("order: not reported (non-monotone errors)")
        sys.exit(2)
    click.echo(f"order: {result.order:.3f}")


if __name__ == "__main__":
    main()
