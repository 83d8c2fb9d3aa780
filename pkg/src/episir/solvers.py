"""The five allocations and policy evaluation under a reversion hazard."""

from __future__ import annotations

import os
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import chain
from .chain import SolveReport, TransitionStencil, policy_iteration, solve_stationary
from .grids import Field, GridSpec, StateGrid
from .model import (
    ModelParams,
    belief_mu,
    foc_activity,
    infectious_pressure,
    inverse_marginal_utility,
    self_consistent_activity,
    utility,
)

ALLOCATIONS = ("myopic", "spp", "pbe", "prme", "static_efficient")


@dataclass(eq=False)
class AllocationResult:
    """Policy and value fields of one allocation.

    ``value`` is the planner cost C for the SPP and V_U otherwise.
    """

    allocation: str
    params: ModelParams
    grid: StateGrid
    policy: np.ndarray
    value: np.ndarray | None
    report: SolveReport = field(default_factory=SolveReport)
    extra: dict = field(default_factory=dict)

    @property
    def params_hash(self):
        return self.params.digest()

    @property
    def V_Ik(self):
        return self.params.V_Ik

    def policy_field(self) -> Field:
        return Field(self.grid, self.policy, f"{self.allocation}_policy", self.params_hash)

    def value_field(self) -> Field:
        return Field(self.grid, self.value, f"{self.allocation}_value", self.params_hash)

    def export(self, outdir, tolerances=None):
        """Write <label>_policy.csv, <label>_value.csv and <label>_manifest.txt."""
        os.makedirs(outdir, exist_ok=True)
        files = []
        path = os.path.join(outdir, f"{self.allocation}_policy.csv")
        self.policy_field().to_csv(path)
        files.append(path)
        if self.value is not None:
            path = os.path.join(outdir, f"{self.allocation}_value.csv")
            self.value_field().to_csv(path)
            files.append(path)
        for name, arr in self.extra.items():
            if isinstance(arr, np.ndarray) and arr.shape[:2] == self.grid.shape:
                grid = self.grid if arr.ndim == 2 else self.grid.spec.with_mu(arr.shape[2]).build()
                path = os.path.join(outdir, f"{self.allocation}_{name}.csv")
                Field(grid, arr, f"{self.allocation}_{name}", self.params_hash).to_csv(path)
                files.append(path)
        path = os.path.join(outdir, f"{self.allocation}_manifest.txt")
        write_manifest(path, self, tolerances or {}, [os.path.basename(f) for f in files])
        files.append(path)
        return files


def write_manifest(path, res: AllocationResult, tolerances, files):
    lines = [f"allocation = {res.allocation}",
             f"params_hash = {res.params_hash}",
             f"grid_hash = {res.grid.spec.digest()}"]
    lines += [f"param.{k} = {v!r}" for k, v in res.params.as_dict().items()]
    lines += [f"grid.{k} = {v!r}" for k, v in vars(res.grid.spec).items()]
    lines += [f"tol.{k} = {v!r}" for k, v in tolerances.items()]
    lines += [f"report.{k} = {v!r}" for k, v in res.report.as_dict().items() if k != "wall_time"]
    lines += [f"files = {','.join(files)}",
              f"written = {time.strftime('%Y-%m-%dT%H:%M:%S')}"]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(path):
    out = {}
    with open(path) as fh:
        for line in fh:
            if "=" in line:
                k, v = line.split("=", 1)
                out[k.strip()] = v.strip()
    return out


def _grid(grid):
    if grid is None:
        return GridSpec().build()
    return grid.build() if isinstance(grid, GridSpec) else grid


def _2d(grid: StateGrid):
    if grid.mu is None:
        return grid
    return GridSpec(**{**vars(grid.spec), "n_mu": 0}).build()


def evaluate_unknown(a_own, a_tilde, p, grid, wiring="decoupled"):
    """V_U of an unknown agent playing a_own while the population plays a_tilde."""
    st = chain.pbe_stencil(a_own, a_tilde, p, grid, wiring)
    return solve_stationary(st)


def solve_myopic(p: ModelParams, grid=None, evaluate=True, wiring="decoupled"):
    grid = _2d(_grid(grid))
    a = np.ones(grid.shape)
    rep = SolveReport(outer_iterations=0, policy_change=0.0)
    V = None
    if evaluate:
        t0 = time.perf_counter()
        V, rep.linear_residual = evaluate_unknown(a, a, p, grid, wiring)
        rep.wall_time = time.perf_counter() - t0
    return AllocationResult("myopic", p, grid, a, V, rep)


def spp_coefficient(C, p: ModelParams, grid: StateGrid):
    """Node coefficient c of the planner's activity problem, one-sided differences."""
    Sg, Ig = grid.mesh()
    back_S = np.zeros_like(C)
    back_S[1:] = (C[1:] - C[:-1]) / grid.delta_S
    fwd_I = np.zeros_like(C)
    fwd_I[:, :-1] = (C[:, 1:] - C[:, :-1]) / grid.delta_I_plus[None, :-1]
    return p.beta * Sg * Ig * (back_S - fwd_I) / (p.r * (1 - p.sigma + p.sigma * Sg))


def spp_improve(C, p: ModelParams, grid: StateGrid):
    a = foc_activity(spp_coefficient(C, p, grid), None, p, internalize=True)
    a[:, -1] = np.minimum(a[:, -1], chain.boundary_cap(grid.S, p))
    return a


def solve_spp(p: ModelParams, grid=None, tol=1e-8, max_iter=500, a0=None):
    grid = _2d(_grid(grid))

    def evaluate(a):
        return solve_stationary(chain.spp_stencil(a, p, grid))

    a0 = np.ones(grid.shape) if a0 is None else a0
    C, a, rep = policy_iteration(a0, evaluate, lambda C, a: spp_improve(C, p, grid),
                                 tol, max_iter, damping=None, label="SPP")
    return AllocationResult("spp", p, grid, a, C, rep)


def pbe_coefficient(V, p: ModelParams, grid: StateGrid):
    Sg, Ig = grid.mesh()
    return p.sigma * belief_mu(Sg, p.sigma) * p.beta * (p.V_Ik - V) * Ig / p.r


def pbe_best_response(V, a_tilde, p: ModelParams, grid: StateGrid):
    return foc_activity(pbe_coefficient(V, p, grid), a_tilde, p, internalize=False)


def solve_pbe(p: ModelParams, grid=None, tol=1e-8, max_iter=500, wiring="decoupled", a0=None):
    """Fixed point a = best response to a, with V evaluated at own action = average action."""
    grid = _2d(_grid(grid))

    def evaluate(a):
        return evaluate_unknown(a, a, p, grid, wiring)

    a0 = np.ones(grid.shape) if a0 is None else a0
    V, a, rep = policy_iteration(a0, evaluate, lambda V, a: pbe_best_response(V, a, p, grid),
                                 tol, max_iter, damping="auto", label="PBE")
    res = AllocationResult("pbe", p, grid, a, V, rep, {"wiring": wiring})
    return res


# perfect-recall equilibrium: private belief mu is an extra state


def _prme_slice(V_low, a_tilde, mu, p, grid, wiring, dmu, tol, max_iter):
    """Policy iteration on one belief slice given the solved slice below."""
    Sg, Ig = grid.mesh()
    agg = chain.pbe_stencil(a_tilde, a_tilde, p, grid, wiring)
    press = infectious_pressure(a_tilde, p) * p.beta * Ig
    # agent at belief mu: known-infected hazard and belief-decrement hazard, both linear in own a
    base_uk = p.sigma * mu * press
    base_mu = (1 - p.sigma) * mu * press / dmu

    def stencil(a):
        absorb_rate = base_uk * a + base_mu * a
        with np.errstate(divide="ignore", invalid="ignore"):
            absorb = np.where(absorb_rate > 0,
                              (base_uk * a * p.V_Ik + base_mu * a * V_low) / np.where(absorb_rate > 0, absorb_rate, 1.0),
                              0.0)
        return TransitionStencil(agg.p_S, agg.p_I_plus, agg.p_I_minus, absorb_rate, absorb,
                                 p.r * utility(a, p.alpha) * np.ones(grid.shape), p.r + p.nu,
                                 agg.target_index, agg.target_weight)

    def improve(V, a):
        c = mu * p.beta * Ig / (p.r * dmu) * (dmu * p.sigma * (p.V_Ik - V) + (1 - p.sigma) * (V_low - V))
        return foc_activity(c, a_tilde, p, internalize=False)

    a0 = np.ones(grid.shape)
    V, a, rep = policy_iteration(a0, lambda a: solve_stationary(stencil(a)), improve, tol,
                                 max_iter, damping=None, label=f"PRME slice mu={mu:.3g}")
    return V, a, rep


def solve_prme(p: ModelParams, grid=None, n_mu=None, tol=1e-8, max_iter=500,
               wiring="decoupled", inner_tol=None):
    """Perfect-recall equilibrium; returns policy and value on (S, I, mu)."""
    grid = _grid(grid)
    if n_mu is not None:
        grid = grid.spec.with_mu(n_mu).build()
    if grid.mu is None:
        raise ValueError("PRME needs a belief grid (n_mu >= 2)")
    g2 = _2d(grid)
    mu_nodes, dmu = grid.mu, grid.delta_mu
    inner_tol = tol if inner_tol is None else inner_tol
    mu_eq = belief_mu(g2.mesh()[0], p.sigma)
    t0 = time.perf_counter()
    rep = SolveReport()
    a_tilde = np.ones(g2.shape)
    for it in range(1, max_iter + 1):
        V = np.zeros(g2.shape + (len(mu_nodes),))
        A = np.ones_like(V)
        resid = 0.0
        for k in range(1, len(mu_nodes)):
            V[..., k], A[..., k], r = _prme_slice(V[..., k - 1], a_tilde, mu_nodes[k], p, g2,
                                                  wiring, dmu, inner_tol, max_iter)
            resid = max(resid, r.linear_residual)
        a_new = equilibrium_belief_policy(A, mu_nodes, mu_eq)
        change = float(np.max(np.abs(a_new - a_tilde)))
        rep.history.append(change)
        rep.outer_iterations, rep.policy_change, rep.linear_residual = it, change, resid
        if change <= tol:
            a_tilde = a_new
            break
        if len(rep.history) >= 2 and change >= 0.5 * rep.history[-2]:
            rep.damped = True
        a_tilde = a_tilde + (0.5 if rep.damped else 1.0) * (a_new - a_tilde)
    else:
        rep.converged = False
        warnings.warn(f"PRME hit the {max_iter}-iteration cap; last change {rep.policy_change:.3e}",
                      chain.ConvergenceWarning, stacklevel=2)
    rep.wall_time = time.perf_counter() - t0
    res = AllocationResult("prme", p, g2, a_tilde, None, rep,
                           {"policy_mu": A, "value_mu": V, "mu": mu_nodes, "wiring": wiring})
    res.value = _along_belief(V, mu_nodes, mu_eq)
    return res


def _along_belief(F, mu_nodes, mu):
    """Linear interpolation of F[..., k] at belief mu (array over (S, I) nodes)."""
    dmu = mu_nodes[1] - mu_nodes[0]
    x = np.clip(mu, 0, 1) / dmu
    k = np.minimum(np.floor(x).astype(int), len(mu_nodes) - 2)
    w = x - k
    k = np.broadcast_to(k, F.shape[:2])[..., None]
    w = np.broadcast_to(w, F.shape[:2])
    lo = np.take_along_axis(F, k, axis=2)[..., 0]
    hi = np.take_along_axis(F, k + 1, axis=2)[..., 0]
    return (1 - w) * lo + w * hi


def equilibrium_belief_policy(A, mu_nodes, mu_eq):
    return _along_belief(A, mu_nodes, mu_eq)


# static-efficient interventions


def static_efficient_lockdown(pbe: AllocationResult):
    """Activity maximising current social welfare at PBE continuation values."""
    p, grid = pbe.params, pbe.grid
    c = pbe_coefficient(pbe.value, p, grid)
    return foc_activity(c, None, p, internalize=True)


def equilibrium_activity_exact(pbe: AllocationResult):
    """Self-consistent root of the equilibrium FOC at the PBE continuation values."""
    return self_consistent_activity(pbe_coefficient(pbe.value, pbe.params, pbe.grid), pbe.params)


def quarantine_argument(pbe: AllocationResult, a_U=None):
    p, grid = pbe.params, pbe.grid
    Sg, _ = grid.mesh()
    a_U = pbe.policy if a_U is None else a_U
    return (p.sigma * p.beta * belief_mu(Sg, p.sigma) * a_U * (p.sigma * Sg + 1 - p.sigma)
            * (pbe.value - p.V_Ik) / p.r)


def static_efficient_quarantine(pbe: AllocationResult, a_U=None):
    """Activity of known infected agents maximising current social welfare."""
    return inverse_marginal_utility(quarantine_argument(pbe, a_U), pbe.params)


@dataclass(eq=False)
class ReversionResult:
    eta: float
    V_U: np.ndarray
    V_Ik: np.ndarray
    W: np.ndarray
    deviation_payoff: np.ndarray | None = None
    residual: float = 0.0


def _known_infected_value(a_Ik, eta, V_Ik_eq, p: ModelParams):
    u_I = p.u_I if p.uIk_flow is not None else utility(a_Ik, p.alpha)
    return (p.r * u_I + p.gamma * p.delta * p.u_D + eta * V_Ik_eq) / (p.r + p.gamma + eta)


def evaluate_policy_with_reversion(a_U, a_Ik, eta, pbe: AllocationResult, wiring=None):
    """Values of following (a_U, a_Ik) until control lapses at hazard eta.

    On reversion society plays the equilibrium, so the values jump to the
    equilibrium fields.  ``eta = inf`` returns the equilibrium values and
    reports the instantaneous deviation payoff separately.
    """
    p, grid = pbe.params, pbe.grid
    wiring = wiring or pbe.extra.get("wiring", "decoupled")
    Sg, Ig = grid.mesh()
    a_U = np.broadcast_to(np.asarray(a_U, dtype=float), grid.shape)
    a_Ik = np.broadcast_to(np.asarray(p.a_Ik if a_Ik is None else a_Ik, dtype=float), grid.shape)
    V_eq, VIk_eq = pbe.value, p.V_Ik

    def W(VU, VI):
        return (p.sigma * Sg + 1 - p.sigma) * VU + p.sigma * Ig * VI

    if np.isinf(eta):
        press = p.sigma * a_Ik + (1 - p.sigma) * a_U
        dev = (utility(a_U, p.alpha) + p.sigma * belief_mu(Sg, p.sigma) * p.beta * a_U * press * Ig
               * (VIk_eq - V_eq) / p.r)
        return ReversionResult(eta, V_eq.copy(), np.full(grid.shape, VIk_eq), W(V_eq, VIk_eq), dev)
    VIk = _known_infected_value(a_Ik, eta, VIk_eq, p)
    new = p.beta * Sg * a_U * (p.sigma * a_Ik + (1 - p.sigma) * a_U) * Ig
    p_S = new / grid.delta_S
    p_S[0] = 0.0
    if wiring == "decoupled":
        drift = new - p.gamma * Ig
        p_Iu = chain._rate(np.maximum(drift, 0), grid.delta_I_plus[None, :])
        p_Id = chain._rate(np.maximum(-drift, 0), grid.delta_I_minus[None, :])
        k = w = None
    else:
        p_Iu = np.zeros_like(new)
        p_Id = chain._rate(p.gamma * Ig, grid.delta_I_minus[None, :])
        k, w = chain.joint_target(grid)
    p_uk = p.sigma * belief_mu(Sg, p.sigma) * p.beta * a_U * (p.sigma * a_Ik + (1 - p.sigma) * a_U) * Ig
    rate = p_uk + eta
    with np.errstate(divide="ignore", invalid="ignore"):
        absorb = np.where(rate > 0, (p_uk * VIk + eta * V_eq) / np.where(rate > 0, rate, 1.0), 0.0)
    st = TransitionStencil(p_S, p_Iu, p_Id, rate, absorb, p.r * utility(a_U, p.alpha) * np.ones(grid.shape),
                           p.r + p.nu, k, w)
    V, resid = solve_stationary(st)
    VIk = np.broadcast_to(VIk, grid.shape).copy()
    return ReversionResult(eta, V, VIk, W(V, VIk), None, resid)


def solve_static_efficient(pbe: AllocationResult, quarantine=False):
    """Static-efficient lockdown (and optionally quarantine) at PBE continuation values."""
    a_U = static_efficient_lockdown(pbe)
    extra = {"a_star": equilibrium_activity_exact(pbe)}
    if quarantine:
        extra["a_Ik"] = static_efficient_quarantine(pbe, a_U)
    rep = SolveReport(outer_iterations=0, policy_change=0.0,
                      linear_residual=pbe.report.linear_residual)
    return AllocationResult("static_efficient", pbe.params, pbe.grid, a_U, pbe.value, rep, extra)
