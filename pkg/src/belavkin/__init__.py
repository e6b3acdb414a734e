"""Simulator for quantum filtering under intense balanced heterodyne detection.

A cavity mode monitored through a Bose field prepared in a coherent state:
truncated Fock-space linear algebra (:mod:`belavkin.fock`), the quantum Ito
table (:mod:`belavkin.ito`), stochastic integration of the linear, nonlinear
and density-matrix filtering equations (:mod:`belavkin.filters`), their
closed-form solutions (:mod:`belavkin.analytic`), trajectory ensembles and
convergence diagnostics (:mod:`belavkin.ensemble`), and a CLI
(:mod:`belavkin.cli`).
"""

from .fock import (
    DensityMatrix,
    Operator,
    QuantumState,
    SqueezeParams,
    coherent_state,
    displacement,
    fidelity,
    make_annihilation,
    number_state,
    quadrature_stats,
    squeeze,
    squeezed_coherent_state,
    trace_distance,
    vacuum_state,
)
from .filters import (
    ModelParams,
    TrajectoryRecord,
    WienerPath,
    integrate,
    replay_linear_from_record,
    step_density,
    step_linear,
    step_nonlinear,
)
from .analytic import (
    SqueezeTrack,
    asymptotic_amplitude,
    build_squeeze_track,
    coherent_amplitude,
    quadrature_track,
    riccati_gamma,
    riccati_rk4,
    squeezed_amplitude,
    weight_track,
)

__all__ = [
    "DensityMatrix", "Operator", "QuantumState", "SqueezeParams",
    "coherent_state", "displacement", "fidelity", "make_annihilation",
    "number_state", "quadrature_stats", "squeeze", "squeezed_coherent_state",
    "trace_distance", "vacuum_state",
    "ModelParams", "TrajectoryRecord", "WienerPath", "integrate",
    "replay_linear_from_record", "step_density", "step_linear", "step_nonlinear",
    "SqueezeTrack", "asymptotic_amplitude", "build_squeeze_track",
    "coherent_amplitude", "quadrature_track", "riccati_gamma", "riccati_rk4",
    "squeezed_amplitude", "weight_track",
]

__version__ = "0.1.0"
