"""Criterion-8 dress rehearsal: M-scaling at reduced dt."""
import time
import numpy as np
from belavkin import ModelParams, trace_distance, DensityMatrix
from belavkin.ensemble import EnsembleSpec, InitialState, run_ensemble, unconditional_evolution

p = ModelParams(omega=1.0, mu=0.04, dim=32, omega0=0.05, phase_mode="special")
init = InitialState.from_gamma(0.5, 1.0)
rho0 = DensityMatrix.from_state(init.build(32))
master = unconditional_evolution(p, rho0, dt=2.5e-3, t_final=5.0, store_stride=2000)
rho_final = master.final().elems

for dt in (5e-4, 2.5e-4):
    ds = {}
    for m in (256, 1024):
        t0 = time.time()
        spec = EnsembleSpec(params=p, filter_kind="nonlinear", initial=init,
                            n_traj=m, base_seed=2024, dt=dt, t_final=5.0)
        s = run_ensemble(spec)
        d = trace_distance(s.final_mean_state().elems, rho_final)
        ds[m] = d
        print(f"dt={dt:g} M={m:4d}: trace distance {d:.5f}  ({time.time()-t0:.1f}s)")
    print(f"  ratio d256/d1024 = {ds[256]/ds[1024]:.2f}")
