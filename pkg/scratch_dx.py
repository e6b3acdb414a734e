"""Profile the nonlinear-filter dX error vs time, dt, and seed."""
import numpy as np
from dataclasses import replace
from belavkin import (ModelParams, WienerPath, SqueezeParams, squeezed_coherent_state,
                      integrate, make_annihilation)
from belavkin.analytic import new_squeeze_track, squeezed_amplitude, quadrature_track

p = ModelParams(omega=1.0, mu=0.04, dim=64, omega0=0.05, phase_mode="special")
sp = SqueezeParams.from_gamma(0.8, 1.0)
st = squeezed_coherent_state(sp, 64)
a = make_annihilation(64).elems

def run(seed, dt, T):
    steps = int(round(T / dt))
    path = WienerPath.generate(seed, dt, steps)
    rec = integrate("nonlinear", st, p, path, state_stride=1)
    track = new_squeeze_track(p, 0.8, 1.0, path.times)
    track = replace(track, alpha=squeezed_amplitude(track, p, path))
    qt = quadrature_track(track)
    S = rec.states
    aS = S @ a.T
    ea = np.einsum("ij,ij->i", S.conj(), aS)
    ea2 = np.einsum("ij,ij->i", S.conj(), aS @ a.T)
    nlow = np.einsum("ij,ij->i", aS.conj(), aS).real
    adS = S @ a.conj()
    nup = np.einsum("ij,ij->i", adS.conj(), adS).real
    dx_num = np.sqrt(np.maximum(0.25 * (2 * ea2.real + nlow + nup) - ea.real**2, 0))
    dy_num = np.sqrt(np.maximum(0.25 * (nlow + nup - 2 * ea2.real) - ea.imag**2, 0))
    ex = np.abs(dx_num - qt.dx); ey = np.abs(dy_num - qt.dy)
    emx = np.abs(rec.mean_x - qt.mean_x); emy = np.abs(rec.mean_y - qt.mean_y)
    # windowed maxima
    t = path.times
    for lo, hi in [(0, 1), (1, 3), (3, 6), (6, 10)]:
        m = (t >= lo) & (t <= hi)
        if m.any():
            print(f"  t in [{lo},{hi}]: dX {ex[m].max():.2e} dY {ey[m].max():.2e} "
                  f"mX {emx[m].max():.2e} mY {emy[m].max():.2e}")
    return ex.max(), ey.max(), emx.max(), emy.max()

for seed in (1, 2, 3):
    print(f"seed={seed} dt=1e-4 T=10:")
    r = run(seed, 1e-4, 10.0)
    print("  overall:", [f"{v:.2e}" for v in r])
print("seed=1 dt=2.5e-5 T=3:")
r = run(1, 2.5e-5, 3.0)
print("  overall:", [f"{v:.2e}" for v in r])
