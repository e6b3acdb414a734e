"""Scratch verification of the core math before tests are frozen."""
import math
import numpy as np

from belavkin import (
    ModelParams, WienerPath, SqueezeParams, coherent_state, squeezed_coherent_state,
    quadrature_stats, integrate, fidelity, coherent_amplitude, build_squeeze_track,
    quadrature_track, riccati_gamma, riccati_rk4, make_annihilation, vacuum_state,
)
from belavkin.analytic import new_squeeze_track, squeezed_amplitude, weight_track, ansatz_ode_step
from dataclasses import replace

print("== 1. fock squeezed-state statistics ==")
sp = SqueezeParams.from_gamma(0.8, 1.0)
st = squeezed_coherent_state(sp, 64)
qs = quadrature_stats(st)
print("meanX, meanY, dX, dY:", qs)
print("expected meanX = 1/3 =", 1/3, " dX = 1/6 =", 1/6, " dY = 3/2")
a = make_annihilation(64).elems
resid = (sp.gamma1 * a + sp.gamma2 * a.conj().T) @ st.amps - sp.alpha * st.amps
P = np.zeros(64); P[:33] = 1
print("interior eigen-residual:", np.linalg.norm(P * resid))
print("edge mass:", st.edge_mass)

print("\n== 2. Riccati: closed form vs RK4 vs quadrature ==")
p = ModelParams(omega=1.0, mu=0.04, dim=64, omega0=0.05, phase_mode="special")
for t in (0.5, 5.0, 20.0):
    gc = riccati_gamma(0.8, p, t, route="closed")
    gq = riccati_gamma(0.8, p, t, route="quadrature")
    gr = riccati_rk4(0.8, p, t, dt=5e-3)
    print(f"t={t}: closed={gc:.10f} |closed-quad|={abs(gc-gq):.2e} |closed-rk4|={abs(gc-gr):.2e}")

print("\n== 3. ansatz ODE (bracket closure) vs closed forms ==")
dt = 1e-4
steps = 20000   # t = 2
path = WienerPath.generate(seed=11, dt=dt, steps=steps)
g1, g2, al = complex(sp.gamma1), complex(sp.gamma2), 1.0 + 0j
g1s = np.empty(steps + 1, complex); g2s = np.empty(steps + 1, complex); als = np.empty(steps + 1, complex)
g1s[0], g2s[0], als[0] = g1, g2, al
for k in range(steps):
    g1, g2, al = ansatz_ode_step(g1, g2, al, k * dt, path.increments[k], p, dt)
    g1s[k + 1], g2s[k + 1], als[k + 1] = g1, g2, al
gam_ode = g2s / g1s
track = new_squeeze_track(p, 0.8, 1.0, path.times)
print("max |Gamma_ode - Gamma_closed|:", np.max(np.abs(gam_ode - track.gamma)))
al_paper_from_ode = als / (g1s * np.sqrt(1 - np.abs(gam_ode) ** 2))
alpha_eq = squeezed_amplitude(track, p, path)
print("max |alpha_ode->paper - alpha_eq49|:", np.max(np.abs(al_paper_from_ode - alpha_eq)))

print("\n== 4. nonlinear filter vs closed forms (t<=2, dt=1e-4) ==")
rec = integrate("nonlinear", st, p, path, state_stride=1)
track = replace(track, alpha=alpha_eq)
qt = quadrature_track(track)
# numeric quadrature track from stored states
S = rec.states
aS = S @ a.T
ea = np.einsum("ij,ij->i", S.conj(), aS)
ea2 = np.einsum("ij,ij->i", S.conj(), aS @ a.T)
nlow = np.einsum("ij,ij->i", aS.conj(), aS).real
adS = S @ a.conj()
nup = np.einsum("ij,ij->i", adS.conj(), adS).real
x2 = 0.25 * (2 * ea2.real + nlow + nup)
y2 = 0.25 * (nlow + nup - 2 * ea2.real)
dx_num = np.sqrt(np.maximum(x2 - ea.real ** 2, 0))
dy_num = np.sqrt(np.maximum(y2 - ea.imag ** 2, 0))
print("max |meanX_num - meanX_an|:", np.max(np.abs(rec.mean_x - qt.mean_x)))
print("max |meanY_num - meanY_an|:", np.max(np.abs(rec.mean_y - qt.mean_y)))
print("max |dX_num - dX_an|:", np.max(np.abs(dx_num - qt.dx)))
print("max |dY_num - dY_an|:", np.max(np.abs(dy_num - qt.dy)))

print("\n== 5. linear filter weight vs closed form ==")
rec_lin = integrate("linear", st, p, path, state_stride=steps)
w_an = weight_track(track, p, path)
rel = np.abs(rec_lin.weights / w_an - 1)
print("max |w_num/w_an - 1|:", np.max(rel))

print("\n== 6. coherent invariance (t=1, dt=1e-4, 2 seeds) ==")
p2 = ModelParams(omega=1.0, mu=0.1, dim=32, omega0=0.0, phase_mode="special")
c0 = coherent_state(1.0, 32)
for seed in (1, 2):
    pa = WienerPath.generate(seed, 1e-4, 10000)
    r1 = integrate("linear", c0, p2, pa, state_stride=10000)
    r2 = integrate("nonlinear", c0, p2, pa, state_stride=10000)
    target = coherent_state(coherent_amplitude(1.0, p2, 1.0), 32)
    f1 = fidelity(r1.final_state().normalize(), target)
    f2 = fidelity(r2.final_state(), target)
    print(f"seed {seed}: lin fid err {1-f1:.2e}  nonlin fid err {1-f2:.2e}")
