"""State grids over (S, I[, mu]) and fields living on them."""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field

import numpy as np


class GridError(ValueError):
    pass


def exponential_shift(a, b, c):
    """Shift s that puts the geometric midpoint of log(x+s) on c."""
    if not a < c:
        raise GridError(f"median {c} must exceed the lower bound {a}")
    if not c < (a + b) / 2:
        raise GridError(f"median {c} must lie below the midpoint {(a + b) / 2} of [{a}, {b}]")
    if not (a + b) / 2 < b:
        raise GridError(f"lower bound {a} must be below upper bound {b}")
    return (c * c - a * b) / (a + b - 2 * c)


def exponential_grid(a, b, c, N):
    """N nodes on [a, b], evenly spaced in log(x + s), median node c."""
    if N < 3:
        raise GridError(f"exponential grid needs at least 3 nodes, got {N}")
    s = exponential_shift(a, b, c)
    nodes = np.exp(np.linspace(np.log(a + s), np.log(b + s), N)) - s
    nodes[0], nodes[-1] = a, b
    if N % 2 == 1:
        nodes[N // 2] = c
    return nodes


def uniform_grid(lo, hi, N):
    if not lo < hi:
        raise GridError(f"need lo < hi, got {lo}, {hi}")
    if N < 2:
        raise GridError(f"uniform grid needs at least 2 nodes, got {N}")
    return np.linspace(lo, hi, N)


@dataclass(frozen=True)
class GridSpec:
    n_S: int = 100
    S_lo: float = 1e-8
    S_hi: float = 1.0
    n_I: int = 400
    I_lo: float = 1e-8
    I_hi: float = 1.0
    I_median: float = 1e-4
    n_mu: int = 0

    def __post_init__(self):
        if not self.S_lo < self.S_hi:
            raise GridError(f"S_lo={self.S_lo} must be below S_hi={self.S_hi}")
        if self.n_S < 2:
            raise GridError(f"n_S={self.n_S} must be at least 2")
        exponential_shift(self.I_lo, self.I_hi, self.I_median)
        if self.n_I < 3:
            raise GridError(f"n_I={self.n_I} must be at least 3")
        if self.n_mu == 1 or self.n_mu < 0:
            raise GridError(f"n_mu={self.n_mu} must be 0 (unused) or at least 2")

    def refined(self) -> "GridSpec":
        """Grid with both steps halved (node counts 2n - 1)."""
        return GridSpec(2 * self.n_S - 1, self.S_lo, self.S_hi, 2 * self.n_I - 1,
                        self.I_lo, self.I_hi, self.I_median, self.n_mu)

    def with_mu(self, n_mu) -> "GridSpec":
        return GridSpec(self.n_S, self.S_lo, self.S_hi, self.n_I, self.I_lo, self.I_hi,
                        self.I_median, n_mu)

    def digest(self) -> str:
        text = repr((self.n_S, self.S_lo, self.S_hi, self.n_I, self.I_lo, self.I_hi,
                     self.I_median, self.n_mu))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def build(self) -> "StateGrid":
        return StateGrid.from_spec(self)


@dataclass(frozen=True, eq=False)
class StateGrid:
    spec: GridSpec
    S: np.ndarray
    I: np.ndarray
    mu: np.ndarray | None
    shift: float

    @classmethod
    def from_spec(cls, spec: GridSpec) -> "StateGrid":
        S = uniform_grid(spec.S_lo, spec.S_hi, spec.n_S)
        I = exponential_grid(spec.I_lo, spec.I_hi, spec.I_median, spec.n_I)
        mu = uniform_grid(0.0, 1.0, spec.n_mu) if spec.n_mu else None
        for arr in (S, I, mu):
            if arr is not None:
                arr.setflags(write=False)
        return cls(spec, S, I, mu, exponential_shift(spec.I_lo, spec.I_hi, spec.I_median))

    @property
    def shape(self):
        return (len(self.S), len(self.I))

    @property
    def delta_S(self) -> float:
        return float(self.S[1] - self.S[0])

    @property
    def delta_mu(self) -> float:
        return float(self.mu[1] - self.mu[0])

    @property
    def delta_I_plus(self):
        return np.append(np.diff(self.I), 0.0)

    @property
    def delta_I_minus(self):
        return np.insert(np.diff(self.I), 0, 0.0)

    def mesh(self):
        """(S, I) arrays of shape (n_S, n_I)."""
        return np.meshgrid(self.S, self.I, indexing="ij")

    def log_I(self, I):
        return np.log(np.asarray(I, dtype=float) + self.shift)

    def locate_S(self, S):
        """Left index and weight of S on the uniform grid, clamped; also an out-of-bounds flag."""
        S = np.asarray(S, dtype=float)
        out = (S < self.S[0]) | (S > self.S[-1])
        x = (np.clip(S, self.S[0], self.S[-1]) - self.S[0]) / self.delta_S
        k = np.minimum(np.floor(x).astype(int), len(self.S) - 2)
        return k, x - k, out

    def locate_I(self, I):
        """Left index and weight of I in log(I + s) coordinates, clamped."""
        I = np.asarray(I, dtype=float)
        out = (I < self.I[0]) | (I > self.I[-1])
        z = self.log_I(np.clip(I, self.I[0], self.I[-1]))
        zn = self.log_I(self.I)
        k = np.clip(np.searchsorted(zn, z, side="right") - 1, 0, len(self.I) - 2)
        w = (z - zn[k]) / (zn[k + 1] - zn[k])
        return k, np.clip(w, 0.0, 1.0), out


def interpolate_values(grid: StateGrid, values, S, I):
    """Bilinear interpolation of an (n_S, n_I) array; returns (value, out_of_bounds)."""
    i, ws, out_s = grid.locate_S(S)
    j, wi, out_i = grid.locate_I(I)
    v = values
    val = ((1 - ws) * ((1 - wi) * v[i, j] + wi * v[i, j + 1])
           + ws * ((1 - wi) * v[i + 1, j] + wi * v[i + 1, j + 1]))
    return val, out_s | out_i


@dataclass(frozen=True, eq=False)
class Field:
    """Values on (S, I) or (S, I, mu) nodes, plus provenance metadata."""

    grid: StateGrid
    values: np.ndarray
    label: str = ""
    params_hash: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.values.ndim == 3 and self.grid.mu is None:
            raise GridError("a belief-indexed field needs a grid with a mu axis")
        expected = self.grid.shape + ((len(self.grid.mu),) if self.values.ndim == 3 else ())
        if self.values.shape != expected:
            raise GridError(f"field shape {self.values.shape} does not match grid {expected}")
        if not np.all(np.isfinite(self.values)):
            raise GridError(f"field '{self.label}' has non-finite values")

    def __call__(self, S, I):
        return self.interpolate(S, I)[0]

    def interpolate(self, S, I):
        if self.values.ndim != 2:
            raise GridError("interpolate works on (S, I) fields; slice the belief axis first")
        val, out = interpolate_values(self.grid, self.values, S, I)
        if np.ndim(val) == 0:
            return float(val), bool(out)
        return val, out

    def to_csv(self, path):
        g = self.grid
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            if self.values.ndim == 2:
                w.writerow(["S", "I", "value"])
                for i, s in enumerate(g.S):
                    for j, x in enumerate(g.I):
                        w.writerow([f"{s:.17g}", f"{x:.17g}", f"{self.values[i, j]:.17g}"])
            else:
                w.writerow(["S", "I", "mu", "value"])
                for i, s in enumerate(g.S):
                    for j, x in enumerate(g.I):
                        for k, m in enumerate(g.mu):
                            w.writerow([f"{s:.17g}", f"{x:.17g}", f"{m:.17g}",
                                        f"{self.values[i, j, k]:.17g}"])

    @classmethod
    def from_csv(cls, path, grid: StateGrid, label="", params_hash=""):
        """Read a field written by ``to_csv``; node coordinates must match ``grid``."""
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], np.array(rows[1:], dtype=float)
        has_mu = header == ["S", "I", "mu", "value"]
        if not has_mu and header != ["S", "I", "value"]:
            raise GridError(f"unexpected field header {header}")
        if has_mu and grid.mu is None:
            raise GridError(f"{path} has a mu column but the grid has no belief axis")
        shape = grid.shape + ((len(grid.mu),) if has_mu else ())
        if body.shape[0] != int(np.prod(shape)):
            raise GridError(f"{path}: {body.shape[0]} rows, grid needs {int(np.prod(shape))}")
        S = body[:, 0].reshape(shape)
        I = body[:, 1].reshape(shape)
        Sg, Ig = grid.mesh()
        if has_mu:
            Sg, Ig = Sg[..., None], Ig[..., None]
        if not (np.allclose(S, Sg, rtol=1e-14, atol=0) and np.allclose(I, Ig, rtol=1e-14, atol=0)):
            raise GridError(f"{path}: node coordinates do not match the grid")
        return cls(grid, body[:, -1].reshape(shape), label, params_hash)
