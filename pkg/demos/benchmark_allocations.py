"""
Three ways through the same epidemic
====================================

Solve the benchmark economy under myopic behavior, the equilibrium with
self-interested distancing, and the planner's allocation, then follow each
policy from a near disease-free start.
"""

# %%
# Solve. Each solve is a handful of tridiagonal sweeps over a 100 x 400 grid.
import numpy as np

from episir import GridSpec, ModelParams, solve_myopic, solve_pbe, solve_spp
from episir.pathsim import Z0, expected_deaths, herd_immunity_day, simulate_path, welfare_cost

p = ModelParams()
grid = GridSpec().build()
results = {"myopic": solve_myopic(p, grid), "pbe": solve_pbe(p, grid), "spp": solve_spp(p, grid)}
for name, res in results.items():
    print(f"{name:7s} iterations={res.report.outer_iterations:3d} "
          f"residual={res.report.linear_residual:.1e} {res.report.wall_time:.2f}s")

# %%
# Simulate from z0 and summarise.
paths = {n: simulate_path(r.policy, Z0, p, grid=grid) for n, r in results.items()}
print(f"\n{'':8s}{'peak':>8s}{'day':>7s}{'herd day':>10s}{'welfare cost':>14s}{'deaths/100k':>13s}")
for name, path in paths.items():
    peak, day = path.peak()
    herd = herd_immunity_day(path, p)
    wc = welfare_cost(results[name].value, Z0, p, grid, planner=(name == "spp"))
    print(f"{name:8s}{peak:8.4f}{day:7.0f}{herd or float('nan'):10.0f}{wc:14.4f}{expected_deaths(path, p):13.1f}")

# %%
# Activity over the first year. Equilibrium agents only pull back once
# prevalence is visible; the planner starts earlier and eases off more slowly.
print(f"\n{'day':>5s}" + "".join(f"{n:>9s}" for n in paths))
for d in range(0, 361, 30):
    row = [np.interp(d, path.t, path.a_U) for path in paths.values()]
    print(f"{d:5d}" + "".join(f"{x:9.3f}" for x in row))

# %%
# The myopic peak is the continuous-time SIR value 1 - (1 + ln R0)/R0.
# Stepping the daily discrete model instead lands a little higher.
R0 = p.R0
print(f"\nclosed form {1 - (1 + np.log(R0)) / R0:.5f}, "
      f"daily model {simulate_path(1.0, Z0, p, dt=1.0, method='euler').peak()[0]:.5f}")
