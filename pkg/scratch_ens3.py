"""Seed survey of the grouped criterion-8 estimator."""
import time
import numpy as np
from belavkin import ModelParams, DensityMatrix
from belavkin.fock import trace_norm
from belavkin.ensemble import EnsembleSpec, InitialState, run_ensemble, unconditional_evolution

p = ModelParams(omega=1.0, mu=0.04, dim=32, omega0=0.05, phase_mode="special")
init = InitialState.from_gamma(0.5, 1.0)
rho0 = DensityMatrix.from_state(init.build(32))
master = unconditional_evolution(p, rho0, dt=2.5e-3, t_final=5.0, store_stride=2000)
rho_final = master.final().elems

dt = 5e-4
for seed in (11, 23, 42, 77, 101):
    t0 = time.time()
    group_means = []
    for g in range(4):
        spec = EnsembleSpec(params=p, filter_kind="nonlinear", initial=init,
                            n_traj=256, base_seed=seed, dt=dt, t_final=5.0,
                            stream_offset=256 * g)
        s = run_ensemble(spec)
        group_means.append(s.final_mean_state().elems)
    d256 = np.mean([trace_norm(m - rho_final) for m in group_means])
    full = sum(group_means) / 4
    d1024 = trace_norm(full - rho_final)
    print(f"seed {seed}: d256={d256:.5f} d1024={d1024:.5f} ratio={d256/d1024:.2f} "
          f"bound(4/sqrt(1024))={4/32:.4f}  ({time.time()-t0:.0f}s)")
