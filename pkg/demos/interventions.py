"""
Static-efficient lockdown and quarantine
========================================

Hold the equilibrium continuation values fixed and ask what activity would
maximise current welfare. Then ask how much of that gain survives if the
intervention lapses back to equilibrium behaviour at rate eta.
"""

# %%
import numpy as np

from episir import GridSpec, ModelParams, solve_pbe
from episir.grids import interpolate_values
from episir.pathsim import Z0, expected_deaths, simulate_path, social_welfare
from episir.solvers import (
    evaluate_policy_with_reversion,
    static_efficient_lockdown,
    static_efficient_quarantine,
)

p = ModelParams()
grid = GridSpec().build()
pbe = solve_pbe(p, grid)
a_star = pbe.policy
a_dag = static_efficient_lockdown(pbe)
q = static_efficient_quarantine(pbe)

# %%
# The lockdown never asks for less than half the equilibrium activity.
_, Ig = grid.mesh()
mask = Ig > 0
ratio = a_dag[mask] / a_star[mask]
print(f"a_dag / a*: min {ratio.min():.3f}, median {np.median(ratio):.3f}")

# %%
# A few states on the way up the first wave.
print(f"\n{'S':>6s}{'I':>9s}{'a*':>8s}{'a_dag':>8s}{'a_Ik_dag':>9s}")
for S, I in [(0.99, 0.005), (0.95, 0.03), (0.85, 0.06), (0.7, 0.06), (0.5, 0.02)]:
    vals = [float(interpolate_values(grid, f, S, I)[0]) for f in (a_star, a_dag, q)]
    print(f"{S:6.2f}{I:9.3f}" + "".join(f"{v:8.3f}" for v in vals))

# %%
# Welfare at z0 when the lockdown lapses at rate eta.
W_eq = float(interpolate_values(grid, social_welfare(pbe.value, Ig, grid.mesh()[0], 0.0, p), *Z0[:2])[0])
print(f"\nequilibrium W(z0) = {W_eq:.6f}")
for eta in (0.0, 0.01, 0.1, 1.0, np.inf):
    ev = evaluate_policy_with_reversion(a_dag, None, eta, pbe)
    W = float(interpolate_values(grid, ev.W, *Z0[:2])[0])
    print(f"eta={eta:<6} W(z0) = {W:.6f}")

# %%
# Quarantine with perfect testing: known infected cut activity to 0.4 and
# the epidemic never takes off.
strict = p.replace(sigma=1.0).quarantine(0.4)
path = simulate_path(solve_pbe(strict, grid).policy, Z0, strict, grid=grid)
print(f"\nsigma=1, a_Ik=0.4: peak/I0 = {path.peak()[0] / Z0[1]:.3f}, "
      f"deaths per 100k = {expected_deaths(path, strict):.4f}")
