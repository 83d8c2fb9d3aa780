"""Epidemic paths under a policy, and welfare/death/herd-immunity metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .grids import Field, StateGrid, interpolate_values
from .model import ModelParams, inverse_utility

Z0 = (1 - 1e-6, 1e-6, 0.0)


class IntegrationError(RuntimeError):
    pass


class PolicyLookup:
    """Callable (S, I) -> activity from a field, an array on a grid, a scalar or a function."""

    def __init__(self, source, grid: StateGrid | None = None):
        self.out_of_bounds = False
        if isinstance(source, Field):
            grid, source = source.grid, source.values
        if callable(source):
            self._f = source
        elif np.ndim(source) == 0:
            const = float(source)
            self._f = lambda S, I: const
        else:
            if grid is None:
                raise ValueError("an array policy needs its grid")
            values = np.asarray(source, dtype=float)
            self._grid = grid
            self._values = values

            def f(S, I):
                val, out = interpolate_values(self._grid, self._values, S, I)
                self.out_of_bounds |= bool(np.any(out))
                return val

            self._f = f

    def __call__(self, S, I):
        return self._f(S, I)


@dataclass(eq=False)
class PathSeries:
    t: np.ndarray
    S: np.ndarray
    I: np.ndarray
    D: np.ndarray
    a_U: np.ndarray
    R_eff: np.ndarray
    cum_I: np.ndarray
    a_Ik: np.ndarray | None = None
    truncated: bool = False
    out_of_bounds: bool = False
    extra: dict = field(default_factory=dict)

    def to_csv(self, path, extra_columns=None):
        cols = {"t": self.t, "S": self.S, "I": self.I, "D": self.D, "a_U": self.a_U, "R_eff": self.R_eff}
        cols.update(extra_columns or {})
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(list(cols))
            for row in zip(*cols.values()):
                w.writerow([f"{x:.17g}" for x in row])

    def peak(self):
        """Peak prevalence and its time, refined by a parabola through the top three samples."""
        k = int(np.argmax(self.I))
        if k == 0 or k == len(self.I) - 1:
            return float(self.I[k]), float(self.t[k])
        y0, y1, y2 = self.I[k - 1:k + 2]
        h = self.t[k + 1] - self.t[k]
        den = y0 - 2 * y1 + y2
        if den >= 0:
            return float(y1), float(self.t[k])
        off = 0.5 * (y0 - y2) / den
        return float(y1 - 0.25 * (y0 - y2) * off), float(self.t[k] + off * h)


@dataclass
class PathMetrics:
    peak_prevalence: float
    peak_day: float
    herd_immunity_day: float | None
    welfare_cost: float | None
    expected_deaths_per_100k: float
    terminal_day: float

    def as_text(self):
        lines = []
        for k, v in vars(self).items():
            if v is None:
                lines.append(f"{k}=none")
            else:
                lines.append(f"{k}={v:.17g}")
        return "\n".join(lines) + "\n"


def _rhs(y, a, aI, p: ModelParams):
    S, I = y[0], y[1]
    new = p.beta * S * a * (p.sigma * aI + (1 - p.sigma) * a) * I
    return np.array([-new, new - p.gamma * I, p.gamma * p.delta * p.sigma * I, I])


def simulate_path(policy, z0=Z0, p: ModelParams = None, horizon=3650.0, dt=0.1, grid=None,
                  a_Ik_policy=None, stop_below=1e-12, method="rk4", stop_after_peak=False):
    """Fixed-step integration of (S, I, D) with activity read off the policy.

    ``method="rk4"`` integrates the continuous-time law of motion; ``"euler"``
    steps the discrete-time model with period dt instead (dt=1 is the daily model).
    ``a_Ik_policy`` optionally supplies state-dependent known-infected activity
    (static-efficient quarantine); otherwise params.a_Ik is used.
    ``stop_after_peak`` ends the run once prevalence has halved from its running max.
    """
    if method not in ("rk4", "euler"):
        raise ValueError(f"unknown method {method!r}")
    p = p or ModelParams()
    look = PolicyLookup(policy, grid)
    lookI = PolicyLookup(p.a_Ik if a_Ik_policy is None else a_Ik_policy, grid)
    if dt <= 0:
        raise ValueError("dt must be positive")
    S0, I0, D0 = z0
    if min(S0, I0, D0) < 0 or S0 + I0 + D0 > 1 + 1e-12:
        raise ValueError(f"invalid initial state {z0}")
    n = int(round(horizon / dt))
    t = np.empty(n + 1)
    Y = np.empty((n + 1, 4))
    A = np.empty(n + 1)
    AI = np.empty(n + 1)
    y = np.array([S0, I0, D0, 0.0])

    def controls(y):
        S = min(max(y[0], 0.0), 1.0)
        I = min(max(y[1], 0.0), 1.0)
        return float(look(S, I)), float(lookI(S, I))

    m = 0
    top = I0
    t[0], Y[0] = 0.0, y
    A[0], AI[0] = controls(y)
    for k in range(n):
        k1 = _rhs(y, A[k], AI[k], p)
        if method == "euler":
            y = y + dt * k1
        else:
            y2 = y + 0.5 * dt * k1
            k2 = _rhs(y2, *controls(y2), p)
            y3 = y + 0.5 * dt * k2
            k3 = _rhs(y3, *controls(y3), p)
            y4 = y + dt * k3
            k4 = _rhs(y4, *controls(y4), p)
            y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if y[0] < -1e-10 or y[1] < -1e-10 or y[0] + y[1] > 1 + 1e-10:
            raise IntegrationError(f"state left [0, 1] at t={(k + 1) * dt}: S={y[0]}, I={y[1]}; use a smaller dt")
        m = k + 1
        t[m], Y[m] = m * dt, y
        A[m], AI[m] = controls(y)
        if y[1] < stop_below:
            break
        if stop_after_peak:
            top = max(top, y[1])
            if y[1] < 0.5 * top and top > 2 * I0:
                break
    t, Y, A, AI = t[:m + 1], Y[:m + 1], A[:m + 1], AI[:m + 1]
    R = p.R0 * A * Y[:, 0] * (p.sigma * AI + (1 - p.sigma) * A)
    return PathSeries(t, Y[:, 0], Y[:, 1], Y[:, 2], A, R, Y[:, 3], AI,
                      truncated=bool(Y[-1, 1] >= stop_below),
                      out_of_bounds=look.out_of_bounds or lookI.out_of_bounds)


def herd_immunity_day(path: PathSeries, p: ModelParams):
    """First time S reaches 1/R0, linear between samples; None if it never does."""
    thr = p.herd_threshold
    hit = np.nonzero(path.S <= thr)[0]
    if not hit.size:
        return None
    k = hit[0]
    if k == 0:
        return float(path.t[0])
    s0, s1 = path.S[k - 1], path.S[k]
    return float(path.t[k - 1] + (s0 - thr) / (s0 - s1) * (path.t[k] - path.t[k - 1]))


def expected_deaths(path: PathSeries, p: ModelParams):
    """Deaths per 100k with the vaccine arriving at rate nu.

    If it arrives at t the toll is D_t plus the share delta of the currently
    known infected (the vaccine does not help infected agents).
    """
    toll = path.D + p.delta * p.sigma * path.I
    if p.nu == 0:
        return 1e5 * float(toll[-1])
    dens = p.nu * np.exp(-p.nu * path.t)
    body = np.trapezoid(dens * toll, path.t)
    tail = np.exp(-p.nu * path.t[-1]) * toll[-1]
    return 1e5 * float(body + tail)


def social_welfare(V_U, I, S, D, p: ModelParams):
    return (p.sigma * S + 1 - p.sigma) * V_U + p.sigma * I * p.V_Ik + D * p.u_D


def welfare_cost(value, z0=Z0, p: ModelParams = None, grid=None, planner=False):
    """Permanent consumption share lost to the epidemic, evaluated at z0.

    ``value`` is V_U (or the planner cost C with ``planner=True``) as a Field or
    an array on ``grid``; a callable (S, I) -> value also works.
    """
    p = p or ModelParams()
    S, I, D = z0
    if I == 0:
        return 0.0 if D == 0 else 1 - float(inverse_utility(D * p.u_D, p.alpha))
    v = float(PolicyLookup(value, grid)(S, I))
    W = D * p.u_D - v if planner else social_welfare(v, I, S, D, p)
    if W > 1e-15:
        raise ValueError(f"aggregate welfare {W} is positive; value fields look inconsistent")
    return 1 - float(inverse_utility(min(W, 0.0), p.alpha))


def path_metrics(path: PathSeries, p: ModelParams, welfare=None):
    peak, day = path.peak()
    return PathMetrics(peak, day, herd_immunity_day(path, p), welfare, expected_deaths(path, p),
                       float(path.t[-1]))


def policy_along_path(path: PathSeries, policies: dict, grid=None):
    """Each named policy evaluated at the path's states."""
    out = {}
    for name, pol in policies.items():
        look = PolicyLookup(pol, grid)
        out[name] = np.array([float(look(s, i)) for s, i in zip(path.S, path.I)])
    return out
