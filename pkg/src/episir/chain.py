"""Markov-chain transition stencils, the stationary solver and a policy-iteration driver.

Every stationary system here has the row form

    (discount + p_S + p_Iu + p_Id + p_abs) V = flow + p_abs * absorb + p_S * V[target]
                                               + p_Iu * V[I up] + p_Id * V[I down]

S never increases along the chain, so the system is block lower-triangular in
S.  We march the S columns upward and solve one tridiagonal system in I per
column.  That is a direct solve, so results are deterministic.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_banded

from .grids import StateGrid
from .model import ModelParams, infectious_pressure, utility

WIRINGS = ("decoupled", "joint")


class SolverError(RuntimeError):
    def __init__(self, msg, history=None):
        super().__init__(msg)
        self.history = history or []


class ConvergenceWarning(UserWarning):
    pass


def _rate(num, step):
    """num/step with a zero step meaning no transition."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(step > 0, num / np.where(step > 0, step, 1.0), 0.0)


@dataclass(eq=False)
class TransitionStencil:
    """Per-node rates on an (n_S, n_I) grid.

    ``target_index``/``target_weight`` give the I-coordinate of the S-decrement
    target in the column below: row j lands on (1-w) V[i-1, k] + w V[i-1, k+1].
    ``None`` means the decoupled target (S - dS, I).
    """

    p_S: np.ndarray
    p_I_plus: np.ndarray
    p_I_minus: np.ndarray
    p_uk: np.ndarray
    absorb_value: np.ndarray
    flow: np.ndarray
    discount: float
    target_index: np.ndarray | None = None
    target_weight: np.ndarray | None = None

    def __post_init__(self):
        shape = self.flow.shape
        for name in ("p_S", "p_I_plus", "p_I_minus", "p_uk"):
            arr = np.broadcast_to(getattr(self, name), shape)
            if np.any(arr < 0) or not np.all(np.isfinite(arr)):
                raise SolverError(f"invalid {name} rates: negative or non-finite entries")
            setattr(self, name, arr)
        self.absorb_value = np.broadcast_to(np.asarray(self.absorb_value, dtype=float), shape)
        if np.any(self.p_S[0] != 0) or np.any(self.p_I_plus[:, -1] != 0) or np.any(self.p_I_minus[:, 0] != 0):
            raise SolverError("boundary rows must not leave the grid")

    @property
    def total_rate(self):
        return self.p_S + self.p_I_plus + self.p_I_minus + self.p_uk


@dataclass
class SolveReport:
    outer_iterations: int = 0
    linear_residual: float = 0.0
    policy_change: float = float("nan")
    wall_time: float = 0.0
    converged: bool = True
    history: list = field(default_factory=list)
    damped: bool = False

    def as_dict(self):
        return {
            "outer_iterations": self.outer_iterations,
            "linear_residual": self.linear_residual,
            "policy_change": self.policy_change,
            "wall_time": self.wall_time,
            "converged": self.converged,
            "damped": self.damped,
        }


def joint_target(grid: StateGrid):
    """Interpolation index/weight of I + dS on the I grid, in log(I + s)."""
    k, w, _ = grid.locate_I(np.minimum(grid.I + grid.delta_S, grid.I[-1]))
    return k, w


def _target_values(prev, st: TransitionStencil):
    if st.target_index is None:
        return prev
    k, w = st.target_index, st.target_weight
    return (1 - w) * prev[k] + w * prev[k + 1]


def solve_stationary(st: TransitionStencil):
    """Solve the stationary system; returns (values, relative residual)."""
    n_S, n_I = st.flow.shape
    diag = st.discount + st.total_rate
    base = st.flow + st.p_uk * st.absorb_value
    V = np.empty((n_S, n_I))
    ab = np.zeros((3, n_I))
    for i in range(n_S):
        rhs = base[i].copy()
        if i > 0:
            rhs += st.p_S[i] * _target_values(V[i - 1], st)
        ab[0, 1:] = -st.p_I_plus[i, :-1]
        ab[1] = diag[i]
        ab[2, :-1] = -st.p_I_minus[i, 1:]
        V[i] = solve_banded((1, 1), ab, rhs, check_finite=False)
    return V, residual(st, V)


def residual(st: TransitionStencil, V):
    """Sup over rows of |row residual| / (diagonal * |V|_inf + |rhs|).

    Dividing by the diagonal turns the row residual into an error in value
    units, so the result is an error relative to the size of the solution.
    """
    target = np.zeros_like(V)
    for i in range(1, V.shape[0]):
        target[i] = _target_values(V[i - 1], st)
    up = np.zeros_like(V)
    up[:, :-1] = V[:, 1:]
    down = np.zeros_like(V)
    down[:, 1:] = V[:, :-1]
    terms = [
        (st.discount + st.total_rate) * V,
        -st.flow,
        -st.p_uk * st.absorb_value,
        -st.p_S * target,
        -st.p_I_plus * up,
        -st.p_I_minus * down,
    ]
    res = np.abs(sum(terms))
    scale = (st.discount + st.total_rate) * np.max(np.abs(V)) + np.abs(st.flow + st.p_uk * st.absorb_value)
    rel = np.where(scale > 0, res / np.where(scale > 0, scale, 1.0), 0.0)
    return float(rel.max())


def assemble(st: TransitionStencil):
    """Sparse (A, b) with A V = b; used to cross-check the marching solver."""
    n_S, n_I = st.flow.shape
    idx = np.arange(n_S * n_I).reshape(n_S, n_I)
    rows, cols, vals = [idx.ravel()], [idx.ravel()], [(st.discount + st.total_rate).ravel()]
    rows.append(idx[:, :-1].ravel()); cols.append(idx[:, 1:].ravel()); vals.append(-st.p_I_plus[:, :-1].ravel())
    rows.append(idx[:, 1:].ravel()); cols.append(idx[:, :-1].ravel()); vals.append(-st.p_I_minus[:, 1:].ravel())
    if st.target_index is None:
        rows.append(idx[1:].ravel()); cols.append(idx[:-1].ravel()); vals.append(-st.p_S[1:].ravel())
    else:
        k, w = st.target_index, st.target_weight
        for off, wt in ((0, 1 - w), (1, w)):
            rows.append(idx[1:].ravel())
            cols.append(idx[:-1][:, k + off].ravel())
            vals.append((-st.p_S[1:] * wt).ravel())
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n_S * n_I, n_S * n_I))
    b = (st.flow + st.p_uk * st.absorb_value).ravel()
    return A, b


def boundary_cap(S, p: ModelParams):
    """Largest activity keeping the top I node from drifting upward, clamped to [a_min, 1]."""
    S = np.asarray(S, dtype=float)
    bS = p.beta * S
    s = p.sigma
    with np.errstate(divide="ignore", invalid="ignore"):
        if s == 1:
            a = p.gamma / (bS * p.a_Ik)
        else:
            b1 = bS * s * p.a_Ik
            a = (-b1 + np.sqrt(b1 * b1 + 4 * p.gamma * bS * (1 - s))) / (2 * bS * (1 - s))
    a = np.where(S > 0, a, 1.0)
    out = np.clip(a, p.a_min, 1.0)
    return out[()] if out.ndim == 0 else out


def incidence(S, I, a_U, p: ModelParams):
    """New infections per unit time: beta S a_U (sigma a_Ik + (1-sigma) a_U) I."""
    return p.beta * S * a_U * infectious_pressure(a_U, p) * I


def spp_stencil(a_U, p: ModelParams, grid: StateGrid):
    Sg, Ig = grid.mesh()
    new = incidence(Sg, Ig, a_U, p)
    p_S = new / grid.delta_S
    p_S[0] = 0.0
    p_Iu = _rate(new, grid.delta_I_plus[None, :])
    p_Id = _rate(p.gamma * Ig, grid.delta_I_minus[None, :])
    flow = (p.r * ((1 - p.sigma + p.sigma * Sg) * -utility(a_U, p.alpha) + p.sigma * Ig * -p.u_I)
            + p.gamma * p.delta * p.sigma * Ig * -p.u_D + p.nu * p.C_vac * Ig)
    return TransitionStencil(p_S, p_Iu, p_Id, np.zeros_like(flow), 0.0, flow, p.r + p.nu)


def own_infection_rate(a_own, a_tilde, p: ModelParams, S, I):
    """Hazard that an unknown agent becomes a known infected agent."""
    from .model import belief_mu
    return p.sigma * belief_mu(S, p.sigma) * p.beta * a_own * infectious_pressure(a_tilde, p) * I


def pbe_stencil(a_own, a_tilde, p: ModelParams, grid: StateGrid, wiring="decoupled"):
    """Unknown agent's chain: aggregate state moves under a_tilde, own action a_own."""
    if wiring not in WIRINGS:
        raise ValueError(f"wiring must be one of {WIRINGS}, got {wiring!r}")
    Sg, Ig = grid.mesh()
    new = incidence(Sg, Ig, a_tilde, p)
    p_S = new / grid.delta_S
    p_S[0] = 0.0
    if wiring == "decoupled":
        drift = new - p.gamma * Ig
        p_Iu = _rate(np.maximum(drift, 0), grid.delta_I_plus[None, :])
        p_Id = _rate(np.maximum(-drift, 0), grid.delta_I_minus[None, :])
        k = w = None
    else:
        p_Iu = np.zeros_like(new)
        p_Id = _rate(p.gamma * Ig, grid.delta_I_minus[None, :])
        k, w = joint_target(grid)
    p_uk = own_infection_rate(a_own, a_tilde, p, Sg, Ig)
    flow = p.r * utility(a_own, p.alpha) * np.ones_like(new)
    return TransitionStencil(p_S, p_Iu, p_Id, p_uk, p.V_Ik, flow, p.r + p.nu, k, w)


def policy_iteration(a0, evaluate, improve, tol=1e-8, max_iter=500, damping="auto", label=""):
    """Alternate evaluate(a) -> (V, resid) and improve(V, a) -> a until the policy settles.

    ``damping`` is "auto" (switch to half steps once the sup-change oscillates),
    a float weight on the new policy, or None for plain iteration.
    """
    t0 = time.perf_counter()
    rep = SolveReport()
    a = np.asarray(a0, dtype=float)
    weight = damping if isinstance(damping, float) else 1.0
    prev_signed = None
    V, resid = evaluate(a)
    rep.linear_residual = resid
    for it in range(1, max_iter + 1):
        a_new = improve(V, a)
        diff = a_new - a
        change = float(np.max(np.abs(diff))) if diff.size else 0.0
        rep.history.append(change)
        rep.outer_iterations = it
        rep.policy_change = change
        if change <= tol:
            a = a_new
            V, resid = evaluate(a)
            rep.linear_residual = max(rep.linear_residual, resid)
            break
        if damping == "auto" and weight == 1.0 and len(rep.history) >= 3:
            signed = diff.flat[int(np.argmax(np.abs(diff)))]
            if prev_signed is not None and np.sign(signed) != np.sign(prev_signed) \
                    and change >= 0.5 * rep.history[-2]:
                weight = 0.5
                rep.damped = True
        if damping == "auto" and diff.size:
            prev_signed = diff.flat[int(np.argmax(np.abs(diff)))]
        a = a + weight * diff
        V, resid = evaluate(a)
        rep.linear_residual = max(rep.linear_residual, resid)
    else:
        rep.converged = False
        warnings.warn(f"{label or 'policy iteration'} hit the {max_iter}-iteration cap; "
                      f"last policy change {rep.policy_change:.3e}", ConvergenceWarning, stacklevel=2)
    rep.wall_time = time.perf_counter() - t0
    return V, a, rep
