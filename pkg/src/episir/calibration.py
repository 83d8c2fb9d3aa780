"""Prevalence reconstruction from death counts and calibration of the death utility."""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field

import numpy as np

from .model import ModelParams

SWEDEN_POPULATION = 10_380_000


class DataError(ValueError):
    pass


class CalibrationError(RuntimeError):
    pass


@dataclass(eq=False)
class EpidemicSeries:
    dates: list
    cum_cases: np.ndarray
    cum_deaths: np.ndarray
    population: float

    def __len__(self):
        return len(self.dates)


def load_epidemic_csv(path, population):
    """Read ``date,cum_cases,cum_deaths`` rows into per-capita cumulative series."""
    if population <= 0:
        raise DataError(f"population must be positive, got {population}")
    try:
        fh = open(path, newline="")
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path} is empty")
        if [h.strip() for h in header] != ["date", "cum_cases", "cum_deaths"]:
            raise DataError(f"{path}: expected header date,cum_cases,cum_deaths, got {','.join(header)}")
        dates, cases, deaths = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not x.strip() for x in row):
                continue
            if len(row) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            try:
                d = dt.date.fromisoformat(row[0].strip())
                c, k = int(row[1]), int(row[2])
            except ValueError as e:
                raise DataError(f"{path}:{lineno}: malformed row {row}: {e}") from e
            if c < 0 or k < 0:
                raise DataError(f"{path}:{lineno}: negative count")
            if dates:
                if d <= dates[-1]:
                    raise DataError(f"{path}:{lineno}: date {d} does not follow {dates[-1]}")
                if c < cases[-1]:
                    raise DataError(f"{path}:{lineno}: cum_cases decreases ({cases[-1]} -> {c})")
                if k < deaths[-1]:
                    raise DataError(f"{path}:{lineno}: cum_deaths decreases ({deaths[-1]} -> {k})")
            if c > 0 and k > c:
                raise DataError(f"{path}:{lineno}: cum_deaths {k} exceeds cum_cases {c}")
            dates.append(d)
            cases.append(c)
            deaths.append(k)
    if not dates:
        raise DataError(f"{path} has no data rows")
    return EpidemicSeries(dates, np.array(cases) / population, np.array(deaths) / population, population)


def case_fatality_series(series: EpidemicSeries):
    """(dates, D_t / C_t) over days with at least one case."""
    keep = series.cum_cases > 0
    dates = [d for d, k in zip(series.dates, keep) if k]
    return dates, series.cum_deaths[keep] / series.cum_cases[keep]


def moving_average(x, window=7):
    """Centered moving average; the window shrinks near the ends."""
    x = np.asarray(x, dtype=float)
    h = window // 2
    csum = np.concatenate(([0.0], np.cumsum(x)))
    idx = np.arange(len(x))
    lo = np.maximum(idx - h, 0)
    hi = np.minimum(idx + h + 1, len(x))
    return (csum[hi] - csum[lo]) / (hi - lo)


def prevalence_estimate(series: EpidemicSeries, p: ModelParams, window=7):
    """Prevalence implied by daily deaths: (D_{t+1} - D_t) / (gamma delta0), smoothed."""
    if len(series) < 8:
        raise DataError(f"need at least 8 days of data, got {len(series)}")
    raw = np.diff(series.cum_deaths) / (p.gamma * p.delta0)
    return moving_average(raw, window)


def vsl_uD(v, annual_discount):
    """Death utility implied by a value of statistical life v (in per-period consumption units)."""
    return -annual_discount * v


@dataclass
class CalibrationReport:
    target: float
    bracket: tuple
    u_D: float
    achieved_peak: float
    evaluations: int
    history: list = field(default_factory=list)

    def as_text(self):
        lines = [f"target_peak={self.target:.17g}",
                 f"bracket={self.bracket[0]:.17g},{self.bracket[1]:.17g}",
                 f"iterations={self.evaluations}",
                 f"u_D={self.u_D:.17g}",
                 f"achieved_peak={self.achieved_peak:.17g}"]
        return "\n".join(lines) + "\n"


def model_peak(u_D, p: ModelParams, grid, dt=0.1):
    """Peak prevalence of the equilibrium path at death utility u_D."""
    from .pathsim import simulate_path
    from .solvers import solve_pbe
    q = p.replace(u_D=u_D)
    res = solve_pbe(q, grid)
    path = simulate_path(res.policy, p=q, grid=res.grid, dt=dt, stop_after_peak=True)
    return path.peak()[0]


def calibrate_uD(target_peak, p: ModelParams, grid=None, bounds=(-60.0, -0.5), tol=1e-3,
                 max_evals=40, peak_fn=None):
    """Bisect on u_D until the equilibrium peak prevalence is within tol of the target.

    The peak rises with u_D (a milder death penalty means less distancing).
    """
    if not 0 < target_peak < 1:
        raise CalibrationError(f"target peak {target_peak} must lie in (0, 1)")
    peak_fn = peak_fn or (lambda u: model_peak(u, p, grid))
    lo, hi = sorted(bounds)
    f_lo, f_hi = peak_fn(lo) - target_peak, peak_fn(hi) - target_peak
    history = [(lo, f_lo + target_peak), (hi, f_hi + target_peak)]
    best = min(history, key=lambda h: abs(h[1] - target_peak))
    if abs(best[1] - target_peak) <= tol:
        return CalibrationReport(target_peak, (lo, hi), best[0], best[1], 2, history)
    if f_lo > 0 or f_hi < 0:
        raise CalibrationError(f"bracket [{lo}, {hi}] does not straddle the target {target_peak}: "
                               f"peaks {f_lo + target_peak:.6g} and {f_hi + target_peak:.6g}")
    evals = 2
    while evals < max_evals:
        mid = 0.5 * (lo + hi)
        peak = peak_fn(mid)
        evals += 1
        history.append((mid, peak))
        if abs(peak - target_peak) <= tol:
            return CalibrationReport(target_peak, tuple(sorted(bounds)), mid, peak, evals, history)
        if peak < target_peak:
            lo = mid
        else:
            hi = mid
    raise CalibrationError(f"no u_D within {tol} of the target after {max_evals} evaluations; "
                           f"last bracket [{lo}, {hi}]")
