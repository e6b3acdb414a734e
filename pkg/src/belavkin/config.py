"""Run configuration: a single flat two-level JSON document.

Schema (defaults in brackets)::

    {
      "model": {
        "omega":      number > 0            (required)
        "mu":         number >= 0           (required)
        "dim":        integer >= 2          (required)
        "omega0":     number                [0.0]
        "phase_mode": "special" | "constant"  ["special"]
        "phi0":       number, constant-mode phase  [pi/2]
        "f0_re":      number                [0.0]
        "f0_im":      number                [0.0]
      },
      "run": {
        "filter":   "linear" | "nonlinear" | "density" | "analytic"  (required)
        "initial":  "vacuum" | "coherent" | "squeezed"               (required)
        "alpha0":   number or [re, im]      [0.0]
        "gamma0":   number or [re, im], |gamma0| < 1   [0.0]
        "xi":       number or [re, im]; alternative to gamma0
        "dt":       number > 0              (required)
        "t_final":  number > 0, divisible by dt  (required)
        "seed":     integer                 [0]
        "n_traj":   integer >= 1            [1]
      },
      "output": {
        "path":     string                  (required)
        "format":   "csv" | "json"          ["csv"]
        "fields":   list from {meanX, meanY, dX, dY, norm, weight,
                    fidelity_to_asymptotic, record_q}
                    [meanX, meanY, dX, dY, norm]
      }
    }

Validation collects every problem (unknown keys get a nearest-key hint,
type mismatches name the expected type) instead of stopping at the first.
"""

from __future__ import annotations

import cmath
import difflib
import json
import math
from dataclasses import dataclass

from .errors import ConfigError
from .ensemble import InitialState
from .filters import ModelParams

ALL_FIELDS = ("meanX", "meanY", "dX", "dY", "norm", "weight",
              "fidelity_to_asymptotic", "record_q")
DEFAULT_FIELDS = ("meanX", "meanY", "dX", "dY", "norm")

_MODEL_KEYS = ("omega", "mu", "dim", "omega0", "phase_mode", "phi0", "f0_re", "f0_im")
_RUN_KEYS = ("filter", "initial", "alpha0", "gamma0", "xi", "dt", "t_final", "seed", "n_traj")
_OUTPUT_KEYS = ("path", "format", "fields")


@dataclass(frozen=True)
class RunConfig:
    model: ModelParams
    filter_kind: str
    initial: InitialState
    gamma0: complex
    alpha0: complex
    dt: float
    t_final: float
    seed: int
    n_traj: int
    out_format: str
    out_path: str
    fields: tuple

    @property
    def steps(self) -> int:
        return round(self.t_final / self.dt)


class _Collector:
    def __init__(self):
        self.problems: list[str] = []

    def add(self, msg: str) -> None:
        self.problems.append(msg)

    def unknown_keys(self, section: str, given, allowed) -> None:
        for key in given:
            if key not in allowed:
                hint = difflib.get_close_matches(key, allowed, n=1)
                extra = f"; did you mean '{hint[0]}'?" if hint else ""
                self.add(f"{section}: unknown key '{key}'{extra}")

    def number(self, section, data, key, *, required=False, default=None,
               minimum=None, strict_min=None):
        if key not in data:
            if required:
                self.add(f"{section}.{key}: missing required key")
            return default
        v = data[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.add(f"{section}.{key}: expected a number, got {type(v).__name__}")
            return default
        if minimum is not None and v < minimum:
            self.add(f"{section}.{key}: must be >= {minimum}, got {v}")
            return default
        if strict_min is not None and not v > strict_min:
            self.add(f"{section}.{key}: must be > {strict_min}, got {v}")
            return default
        return float(v)

    def integer(self, section, data, key, *, required=False, default=None, minimum=None):
        if key not in data:
            if required:
                self.add(f"{section}.{key}: missing required key")
            return default
        v = data[key]
        if isinstance(v, bool) or not isinstance(v, int):
            self.add(f"{section}.{key}: expected an integer, got {type(v).__name__}")
            return default
        if minimum is not None and v < minimum:
            self.add(f"{section}.{key}: must be >= {minimum}, got {v}")
            return default
        return int(v)

    def choice(self, section, data, key, allowed, *, required=False, default=None):
        if key not in data:
            if required:
                self.add(f"{section}.{key}: missing required key")
            return default
        v = data[key]
        if not isinstance(v, str) or v not in allowed:
            self.add(f"{section}.{key}: expected one of {list(allowed)}, got {v!r}")
            return default
        return v

    def complex_value(self, section, data, key, default=0j):
        if key not in data:
            return default
        v = data[key]
        if isinstance(v, bool):
            self.add(f"{section}.{key}: expected a number or [re, im], got bool")
            return default
        if isinstance(v, (int, float)):
            return complex(v)
        if (isinstance(v, list) and len(v) == 2
                and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v)):
            return complex(v[0], v[1])
        self.add(f"{section}.{key}: expected a number or [re, im] pair, got {v!r}")
        return default


def parse_config(text: str) -> RunConfig:
    """Parse and fully validate a JSON run configuration.

    Raises :class:`~belavkin.errors.ConfigError` carrying the complete list
    of validation problems.
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"invalid JSON: {exc}"]) from exc
    if not isinstance(data, dict):
        raise ConfigError(["top level must be a JSON object"])

    c = _Collector()
    c.unknown_keys("top level", data, ("model", "run", "output"))
    model = data.get("model")
    run = data.get("run")
    output = data.get("output")
    for name, section in (("model", model), ("run", run), ("output", output)):
        if section is None:
            c.add(f"{name}: missing required section")
        elif not isinstance(section, dict):
            c.add(f"{name}: expected an object")
    model = model if isinstance(model, dict) else {}
    run = run if isinstance(run, dict) else {}
    output = output if isinstance(output, dict) else {}

    c.unknown_keys("model", model, _MODEL_KEYS)
    c.unknown_keys("run", run, _RUN_KEYS)
    c.unknown_keys("output", output, _OUTPUT_KEYS)

    omega = c.number("model", model, "omega", required=True, strict_min=0.0)
    mu = c.number("model", model, "mu", required=True, minimum=0.0)
    dim = c.integer("model", model, "dim", required=True, minimum=2)
    omega0 = c.number("model", model, "omega0", default=0.0)
    phase_mode = c.choice("model", model, "phase_mode", ("special", "constant"),
                          default="special")
    phi0 = c.number("model", model, "phi0", default=math.pi / 2)
    f0 = complex(c.number("model", model, "f0_re", default=0.0),
                 c.number("model", model, "f0_im", default=0.0))

    filter_kind = c.choice("run", run, "filter",
                           ("linear", "nonlinear", "density", "analytic"), required=True)
    initial_kind = c.choice("run", run, "initial",
                            ("vacuum", "coherent", "squeezed"), required=True)
    alpha0 = c.complex_value("run", run, "alpha0")
    gamma0 = c.complex_value("run", run, "gamma0")
    xi = c.complex_value("run", run, "xi")
    dt = c.number("run", run, "dt", required=True, strict_min=0.0)
    t_final = c.number("run", run, "t_final", required=True, strict_min=0.0)
    seed = c.integer("run", run, "seed", default=0)
    n_traj = c.integer("run", run, "n_traj", default=1, minimum=1)

    out_path = output.get("path")
    if out_path is None:
        c.add("output.path: missing required key")
        out_path = ""
    elif not isinstance(out_path, str):
        c.add(f"output.path: expected a string, got {type(out_path).__name__}")
        out_path = ""
    out_format = c.choice("output", output, "format", ("csv", "json"), default="csv")
    fields = output.get("fields", list(DEFAULT_FIELDS))
    if not isinstance(fields, list) or not all(isinstance(f, str) for f in fields):
        c.add("output.fields: expected a list of field names")
        fields = list(DEFAULT_FIELDS)
    else:
        for f in fields:
            if f not in ALL_FIELDS:
                hint = difflib.get_close_matches(f, ALL_FIELDS, n=1)
                extra = f"; did you mean '{hint[0]}'?" if hint else ""
                c.add(f"output.fields: unknown field '{f}'{extra}")
        fields = [f for f in fields if f in ALL_FIELDS] or list(DEFAULT_FIELDS)

    # cross-field invariants
    if initial_kind == "squeezed":
        if "xi" in run and "gamma0" in run:
            c.add("run: give either gamma0 or xi, not both")
        if "gamma0" in run and abs(gamma0) >= 1:
            c.add(f"run.gamma0: |gamma0| must be < 1, got {abs(gamma0)}")
    if dt is not None and t_final is not None:
        steps = round(t_final / dt)
        if steps < 1 or abs(steps * dt - t_final) > 1e-9 * t_final:
            c.add(f"run: dt={dt} does not divide t_final={t_final}")
    if filter_kind is not None and n_traj and n_traj > 1:
        if filter_kind == "analytic":
            c.add("run.n_traj: ensembles need a stochastic filter, not 'analytic'")
        for f in fields:
            if f not in ("meanX", "meanY", "weight"):
                c.add(f"output.fields: '{f}' is per-trajectory; not available for ensembles")
    if filter_kind is not None:
        if "weight" in fields and filter_kind in ("nonlinear", "density"):
            c.add("output.fields: 'weight' requires filter 'linear' or 'analytic'")
        if "fidelity_to_asymptotic" in fields and filter_kind == "analytic":
            c.add("output.fields: 'fidelity_to_asymptotic' requires a state filter")

    if c.problems:
        raise ConfigError(c.problems)

    model_params = ModelParams(omega=omega, mu=mu, dim=dim, drive=f0,
                               phase_mode=phase_mode, omega0=omega0, phi0=phi0)
    if initial_kind == "vacuum":
        initial = InitialState.vacuum()
        gamma0 = 0j
        alpha0 = 0j
    elif initial_kind == "coherent":
        initial = InitialState.coherent(alpha0)
        gamma0 = 0j
    else:
        if "xi" in run:
            initial = InitialState.squeezed(xi, alpha0)
            gamma0 = cmath.tanh(abs(xi)) * cmath.exp(1j * cmath.phase(xi)) if xi else 0j
        else:
            initial = InitialState.from_gamma(gamma0, alpha0)
    return RunConfig(model=model_params, filter_kind=filter_kind, initial=initial,
                     gamma0=gamma0, alpha0=alpha0, dt=dt, t_final=t_final,
                     seed=seed, n_traj=n_traj, out_format=out_format,
                     out_path=out_path, fields=tuple(fields))
