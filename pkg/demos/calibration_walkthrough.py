"""
Calibrating the death penalty
=============================

Turn cumulative death counts into a prevalence estimate, then pick the
death utility whose equilibrium peak matches it. The input here is a
synthetic wave; point ``load_epidemic_csv`` at real counts to do it for real.
"""

# %%
import datetime as dt
import tempfile
from pathlib import Path

import numpy as np

from episir import GridSpec, ModelParams
from episir.calibration import (
    SWEDEN_POPULATION,
    calibrate_uD,
    load_epidemic_csv,
    prevalence_estimate,
    vsl_uD,
)

p = ModelParams()

# %%
# Fake a wave that peaks at 6.63% and write it as integer counts.
t = np.arange(160)
wave = 0.0663 * np.exp(-((t - 80) / 25.0) ** 2)
deaths = np.round(np.concatenate(([0.0], np.cumsum(p.gamma * p.delta0 * wave))) * SWEDEN_POPULATION)
csv_path = Path(tempfile.mkdtemp()) / "deaths.csv"
with open(csv_path, "w") as fh:
    fh.write("date,cum_cases,cum_deaths\n")
    for k, d in enumerate(deaths.astype(int)):
        fh.write(f"{dt.date(2020, 3, 1) + dt.timedelta(days=k)},{100 * d + 1},{d}\n")

# %%
series = load_epidemic_csv(csv_path, SWEDEN_POPULATION)
prev = prevalence_estimate(series, p)
print(f"{len(series)} days, estimated peak prevalence {prev.max():.5f} on day {int(prev.argmax())}")

# %%
# Bisection on u_D; every step is a full equilibrium solve plus a path.
rep = calibrate_uD(float(prev.max()), p, GridSpec().build())
print(rep.as_text(), end="")
for u, peak in rep.history:
    print(f"  u_D={u:9.4f} -> peak {peak:.5f}")

# %%
# Cross-check against a value of statistical life of 238.7 years of consumption.
print(f"\nVSL-implied u_D = {vsl_uD(238.7, 0.05):.3f}")
