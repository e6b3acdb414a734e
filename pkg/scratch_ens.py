"""Check ensemble-vs-master consistency and noise-semantics bias."""
import time
import numpy as np
from belavkin import ModelParams, trace_distance, DensityMatrix
from belavkin.ensemble import EnsembleSpec, InitialState, run_ensemble, unconditional_evolution

p = ModelParams(omega=1.0, mu=0.04, dim=32, omega0=0.05, phase_mode="special")
init = InitialState.from_gamma(0.5, 1.0)
rho0 = DensityMatrix.from_state(init.build(32))
master = unconditional_evolution(p, rho0, dt=5e-3, t_final=5.0, store_stride=1000)
rho_final = master.final().elems

for noise in ("innovation", "reference"):
    for m in (128, 512):
        t0 = time.time()
        spec = EnsembleSpec(params=p, filter_kind="nonlinear", initial=init,
                            n_traj=m, base_seed=42, dt=1e-3, t_final=5.0,
                            noise=noise)
        s = run_ensemble(spec)
        d = trace_distance(s.final_mean_state().elems, rho_final)
        print(f"noise={noise:11s} M={m:4d}: trace distance {d:.4f}  ({time.time()-t0:.1f}s)")
