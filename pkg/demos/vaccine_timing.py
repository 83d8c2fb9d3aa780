"""
When the vaccine is far away
============================

With a vaccine expected in a year, the planner locks down early and gently.
With one a century away there is no point delaying infections. The planner
then pushes activity above the equilibrium before herd immunity and holds it
back afterwards.
"""

# %%
import numpy as np

from episir import GridSpec, ModelParams, solve_pbe, solve_spp
from episir.pathsim import Z0, herd_immunity_day, policy_along_path, simulate_path

grid = GridSpec().build()

for years in (1, 100):
    p = ModelParams().with_vaccine_years(years)
    pbe, spp = solve_pbe(p, grid), solve_spp(p, grid)
    path = simulate_path(pbe.policy, Z0, p, grid=grid)
    a_spp = policy_along_path(path, {"spp": spp.policy}, grid)["spp"]
    herd = herd_immunity_day(path, p)
    print(f"\nT = {years} years, equilibrium path reaches herd immunity on day {herd:.0f}")
    print(f"{'day':>5s}{'S':>7s}{'I':>8s}{'a_pbe':>8s}{'a_spp':>8s}")
    for d in range(60, 241, 15):
        k = int(np.searchsorted(path.t, d))
        print(f"{d:5d}{path.S[k]:7.3f}{path.I[k]:8.4f}{path.a_U[k]:8.3f}{a_spp[k]:8.3f}")
