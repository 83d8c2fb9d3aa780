"""Model parameters, CRRA utility, closed-form values and the activity FOC solver.

All functions accept numpy arrays where it makes sense and are pure.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np


class ParameterError(ValueError):
    """Raised for inadmissible parameter sets."""


class DomainError(ValueError):
    """Raised when a function is evaluated outside its domain."""


class FOCError(ArithmeticError):
    """Raised when the first-order condition has no admissible root."""


@dataclass(frozen=True)
class ModelParams:
    """Economic and epidemiological primitives, per-day rates.

    ``uIk_flow=None`` means known infected agents enjoy ``u(a_Ik)``; quarantine
    mode sets it to an explicit constant (0.0 in the best-case analysis).
    """

    r: float = 0.05 / 365.25
    nu: float = 1 / 365.25
    beta: float = 1 / 5.4
    gamma: float = 1 / 13.5
    sigma: float = 0.4
    delta0: float = 0.0027
    alpha: float = 1.0
    a_min: float = 0.01
    u_D: float = -12.22
    a_Ik: float = 1.0
    uIk_flow: float | None = None

    def __post_init__(self):
        problems = []
        if not 0 < self.sigma <= 1:
            problems.append(f"sigma={self.sigma} not in (0, 1]")
        elif self.delta0 / self.sigma > 1:
            problems.append(f"delta = delta0/sigma = {self.delta0 / self.sigma} exceeds 1")
        if not 0 < self.delta0 <= 1:
            problems.append(f"delta0={self.delta0} not in (0, 1]")
        if not self.r > 0:
            problems.append(f"r={self.r} must be positive")
        if not self.nu >= 0:
            problems.append(f"nu={self.nu} must be nonnegative")
        if not self.beta > 0:
            problems.append(f"beta={self.beta} must be positive")
        if not self.gamma > 0:
            problems.append(f"gamma={self.gamma} must be positive")
        if not self.alpha > 0:
            problems.append(f"alpha={self.alpha} must be positive")
        if not 0 <= self.a_min < 1:
            problems.append(f"a_min={self.a_min} not in [0, 1)")
        if not self.a_min <= self.a_Ik <= 1 or self.a_Ik <= 0:
            problems.append(f"a_Ik={self.a_Ik} not in [a_min, 1] with a_Ik > 0")
        if not problems:
            uI = self.u_I
            if uI > 0:
                problems.append(f"known-infected flow utility {uI} must be <= 0")
            if not self.u_D < uI:
                problems.append(f"u_D={self.u_D} must be below known-infected flow utility {uI}")
        if problems:
            raise ParameterError("; ".join(problems))

    @property
    def delta(self) -> float:
        """Case fatality rate among known infected."""
        return self.delta0 / self.sigma

    @property
    def u_I(self) -> float:
        """Flow utility of a known infected agent."""
        if self.uIk_flow is None:
            return float(utility(self.a_Ik, self.alpha))
        return float(self.uIk_flow)

    @property
    def R0(self) -> float:
        return self.beta / self.gamma

    @property
    def herd_threshold(self) -> float:
        return self.gamma / self.beta

    @property
    def V_Ik(self) -> float:
        return value_known_infected(self)

    @property
    def C_vac(self) -> float:
        return cost_post_vaccine(self)

    @property
    def I_bar(self) -> float:
        return full_activity_threshold(self)

    def replace(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    def quarantine(self, a_Ik: float = 0.4) -> "ModelParams":
        """Known infected restricted to ``a_Ik`` while keeping zero flow loss."""
        return replace(self, a_Ik=a_Ik, uIk_flow=0.0)

    def with_vaccine_years(self, T: float) -> "ModelParams":
        return replace(self, nu=1.0 / (365.25 * T))

    def as_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        text = ";".join(f"{f.name}={getattr(self, f.name)!r}" for f in fields(self))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class DerivedConstants:
    delta: float
    R0: float
    herd_threshold: float
    V_Ik: float
    C_vac: float
    I_bar: float
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_params(cls, p: ModelParams) -> "DerivedConstants":
        return cls(p.delta, p.R0, p.herd_threshold, p.V_Ik, p.C_vac, p.I_bar)


def utility(a, alpha):
    """CRRA utility normalised so that u(1) = 0."""
    a = np.asarray(a, dtype=float)
    if np.any(a <= 0):
        raise DomainError("utility is defined for positive activity only")
    if alpha == 1:
        out = np.log(a)
    else:
        out = (a ** (1 - alpha) - 1) / (1 - alpha)
    return out[()] if out.ndim == 0 else out


def marginal_utility(a, alpha):
    a = np.asarray(a, dtype=float)
    out = a ** (-alpha)
    return out[()] if out.ndim == 0 else out


def inverse_utility(w, alpha):
    """Activity level delivering utility ``w``; requires w <= 0."""
    w = np.asarray(w, dtype=float)
    if np.any(w > 0):
        raise DomainError("no activity above 1 exists: utility must be <= 0")
    if alpha == 1:
        out = np.exp(w)
    else:
        base = (1 - alpha) * w + 1
        if np.any(base <= 0):
            raise DomainError(f"utility below the CRRA lower bound {-1 / (1 - alpha)}")
        out = base ** (1 / (1 - alpha))
    return out[()] if out.ndim == 0 else out


def inverse_marginal_utility(x, p: ModelParams):
    """phi(x): 1 if x <= u'(1), a_min if x >= u'(a_min), else (u')^{-1}(x)."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = np.where(x > 0, x, 1.0) ** (-1.0 / p.alpha)
    a = np.where(x <= 1.0, 1.0, a)
    out = np.clip(a, p.a_min, 1.0)
    return out[()] if out.ndim == 0 else out


def curvature_bounds(p: ModelParams) -> tuple[float, float]:
    """(min, max) of |u''| on [a_min, 1]; |u''(a)| = alpha a^(-alpha-1) is decreasing."""
    m = p.alpha
    M = p.alpha * p.a_min ** (-p.alpha - 1) if p.a_min > 0 else np.inf
    return m, M


def belief_mu(S, sigma):
    """Probability that an unknown agent is susceptible."""
    S = np.asarray(S, dtype=float)
    den = sigma * S + 1 - sigma
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(S > 0, S / np.where(den > 0, den, 1.0), 0.0)
    out = np.clip(out, 0.0, 1.0)
    return out[()] if out.ndim == 0 else out


def value_known_infected(p: ModelParams) -> float:
    return (p.r * p.u_I + p.gamma * p.delta * p.u_D) / (p.r + p.gamma)


def cost_post_vaccine(p: ModelParams) -> float:
    return p.sigma / (p.r + p.gamma) * (-p.gamma * p.delta * p.u_D - p.r * p.u_I)


def infectious_pressure(a_U, p: ModelParams, a_Ik=None):
    """Activity-weighted infectious share per infected: sigma a_Ik + (1-sigma) a_U."""
    a_Ik = p.a_Ik if a_Ik is None else a_Ik
    return p.sigma * np.asarray(a_Ik) + (1 - p.sigma) * np.asarray(a_U)


def effective_R(S, a_U, p: ModelParams, a_Ik=None):
    a_U = np.asarray(a_U, dtype=float)
    out = p.R0 * a_U * np.asarray(S, dtype=float) * infectious_pressure(a_U, p, a_Ik)
    return out[()] if np.ndim(out) == 0 else out


def full_activity_threshold(p: ModelParams) -> float:
    # u'(1) = 1 under the CRRA normalisation
    return -p.r / (p.sigma * p.beta * p.V_Ik)


def _bisect_decreasing(h, lo, hi, tol=1e-12, maxiter=200):
    """Vectorised bisection for a decreasing h with h(lo) > 0 > h(hi)."""
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    for _ in range(maxiter):
        mid = 0.5 * (lo + hi)
        pos = h(mid) > 0
        lo = np.where(pos, mid, lo)
        hi = np.where(pos, hi, mid)
        if np.all(hi - lo <= tol):
            break
    return 0.5 * (lo + hi)


def foc_activity(c, a_tilde, p: ModelParams, internalize: bool, a_Ik=None):
    """Maximiser of u(a) + c a (sigma a_Ik + (1-sigma) x) over [a_min, 1].

    With ``internalize`` the own action enters the infectious pressure (x = a,
    the planner's quadratic); otherwise x = a_tilde is taken as given.
    Ties at c = 0 resolve to full activity.
    """
    c = np.asarray(c, dtype=float)
    a_Ik = p.a_Ik if a_Ik is None else a_Ik
    shape = np.broadcast_shapes(c.shape, np.shape(a_tilde), np.shape(a_Ik))
    c = np.broadcast_to(c, shape)
    a_Ik = np.broadcast_to(np.asarray(a_Ik, dtype=float), shape)
    neg = c < 0
    s = p.sigma

    if internalize:
        A = 2 * c * (1 - s)
        B = c * s * a_Ik
        if p.alpha == 1:
            # positive root of A a^2 + B a + 1 = 0, stable for A -> 0
            with np.errstate(divide="ignore", invalid="ignore"):
                root = 2.0 / (-B + np.sqrt(B * B - 4 * A))
        else:
            def h(a):
                return a ** (-p.alpha) + c * (s * a_Ik + 2 * (1 - s) * a)
            root = _root_or_clamp(h, p, neg)
    else:
        a_tilde = np.broadcast_to(np.asarray(a_tilde, dtype=float), shape)
        b = c * (s * a_Ik + (1 - s) * a_tilde)
        neg = b < 0
        with np.errstate(divide="ignore", invalid="ignore"):
            root = np.where(neg, -b, 1.0) ** (-1.0 / p.alpha)

    a = np.where(neg, np.clip(root, p.a_min, 1.0), 1.0)
    if np.any(~np.isfinite(a)):
        bad = np.argwhere(~np.isfinite(a))[:5]
        raise FOCError(f"no admissible FOC root at indices {bad.tolist()}")
    return a[()] if a.ndim == 0 else a


def _root_or_clamp(h, p, neg):
    lo = max(p.a_min, 1e-300)
    h_lo, h_hi = h(lo), h(1.0)
    root = _bisect_decreasing(h, np.full(np.shape(h_hi), lo), np.ones(np.shape(h_hi)))
    root = np.where(h_hi >= 0, 1.0, root)
    return np.where(h_lo <= 0, p.a_min, root)


def self_consistent_activity(c, p: ModelParams, a_Ik=None):
    """Equilibrium action a solving a = argmax{u(a') + c a' (sigma a_Ik + (1-sigma) a)}.

    This is the fixed point of the non-internalised FOC at given continuation
    values; for log utility it is the positive root of c(1-s)a^2 + c s a_Ik a + 1 = 0.
    """
    c = np.asarray(c, dtype=float)
    a_Ik = np.broadcast_to(np.asarray(p.a_Ik if a_Ik is None else a_Ik, dtype=float), c.shape)
    s = p.sigma
    neg = c < 0
    if p.alpha == 1:
        A = c * (1 - s)
        B = c * s * a_Ik
        with np.errstate(divide="ignore", invalid="ignore"):
            root = 2.0 / (-B + np.sqrt(B * B - 4 * A))
    else:
        def h(a):
            return a ** (-p.alpha) + c * (s * a_Ik + (1 - s) * a)
        root = _root_or_clamp(h, p, neg)
    a = np.where(neg, np.clip(root, p.a_min, 1.0), 1.0)
    return a[()] if a.ndim == 0 else a
