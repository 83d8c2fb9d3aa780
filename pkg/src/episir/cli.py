"""Command line: solve, simulate, sweep, calibrate.

Settings come from a flat ``key = value`` config file (``#`` starts a comment)
and can be overridden by flags of the same name.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np

from .calibration import (
    CalibrationError,
    DataError,
    calibrate_uD,
    case_fatality_series,
    load_epidemic_csv,
    prevalence_estimate,
    vsl_uD,
)
from .chain import ConvergenceWarning
from .grids import Field, GridError, GridSpec
from .model import ModelParams, ParameterError
from .pathsim import Z0, path_metrics, policy_along_path, simulate_path, welfare_cost
from .solvers import (
    ALLOCATIONS,
    evaluate_policy_with_reversion,
    read_manifest,
    solve_myopic,
    solve_pbe,
    solve_prme,
    solve_spp,
    solve_static_efficient,
)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_SOLVER = 0, 2, 3, 4
SWEEP_AXES = ("none", "sigma", "T_vaccine", "a_Ik")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    params: ModelParams = field(default_factory=ModelParams)
    grid: GridSpec = field(default_factory=GridSpec)
    allocation: str = "pbe"
    sweep_axis: str = "none"
    sweep_values: tuple = ()
    sweep_allocations: tuple = ("myopic", "spp", "pbe")
    outdir: str = "out"
    dt: float = 0.1
    horizon: float = 3650.0
    tol: float = 1e-8
    max_iter: int = 500
    wiring: str = "decoupled"
    n_mu: int = 21
    jobs: int = 1
    data: str = ""
    population: float = 10_380_000
    vsl: float = 238.7
    annual_discount: float = 0.05
    uD_lo: float = -60.0
    uD_hi: float = -0.5

    def tolerances(self):
        return {"policy_change": self.tol, "max_iter": self.max_iter, "linear_residual": 1e-10}


PARAM_KEYS = {f.name for f in fields(ModelParams)}
GRID_KEYS = {f.name for f in fields(GridSpec)}
RUN_KEYS = {f.name for f in fields(RunConfig)} - {"params", "grid"}


def _coerce(key, text):
    text = text.strip()
    if key == "uIk_flow":
        return None if text.lower() in ("none", "") else float(text)
    if key in ("sweep_values",):
        return tuple(float(x) for x in text.replace(" ", "").split(",") if x)
    if key == "sweep_allocations":
        return tuple(x.strip() for x in text.split(",") if x.strip())
    if key in ("n_S", "n_I", "n_mu", "max_iter", "jobs"):
        return int(text)
    if key in ("allocation", "sweep_axis", "outdir", "wiring", "data"):
        return text
    return float(text)


def parse_config_text(text, source="<config>"):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key == "T":
            key = "T_years"
        if key not in PARAM_KEYS | GRID_KEYS | RUN_KEYS | {"T_years"}:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            out[key] = _coerce(key, val) if key != "T_years" else float(val)
        except ValueError as e:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {val!r} ({e})") from e
    return out


def build_config(settings: dict) -> RunConfig:
    """Validate a flat settings dict against every owning type."""
    settings = dict(settings)
    if "T_years" in settings:
        T = settings.pop("T_years")
        if not T > 0:
            raise ConfigError(f"T must be positive years, got {T}")
        settings["nu"] = 1.0 / (365.25 * T)
    p_kw = {k: v for k, v in settings.items() if k in PARAM_KEYS}
    g_kw = {k: v for k, v in settings.items() if k in GRID_KEYS}
    r_kw = {k: v for k, v in settings.items() if k in RUN_KEYS}
    try:
        params = ModelParams(**p_kw)
    except ParameterError as e:
        raise ConfigError(f"parameters: {e}") from e
    try:
        grid = GridSpec(**g_kw)
    except GridError as e:
        raise ConfigError(f"grid: {e}") from e
    cfg = RunConfig(params=params, grid=grid, **r_kw)
    if cfg.allocation not in ALLOCATIONS + ("all",):
        raise ConfigError(f"allocation must be one of {ALLOCATIONS + ('all',)}, got {cfg.allocation!r}")
    if cfg.sweep_axis not in SWEEP_AXES:
        raise ConfigError(f"sweep_axis must be one of {SWEEP_AXES}, got {cfg.sweep_axis!r}")
    bad = [a for a in cfg.sweep_allocations if a not in ALLOCATIONS]
    if bad:
        raise ConfigError(f"unknown sweep allocations {bad}")
    if cfg.wiring not in ("decoupled", "joint"):
        raise ConfigError(f"wiring must be decoupled or joint, got {cfg.wiring!r}")
    if not cfg.dt > 0 or not cfg.horizon > 0:
        raise ConfigError("dt and horizon must be positive")
    if not cfg.tol > 0 or cfg.max_iter < 1:
        raise ConfigError("tol must be positive and max_iter at least 1")
    if cfg.n_mu < 2:
        raise ConfigError(f"n_mu must be at least 2, got {cfg.n_mu}")
    if cfg.jobs < 1:
        raise ConfigError("jobs must be at least 1")
    if not cfg.population > 0:
        raise ConfigError("population must be positive")
    if not cfg.uD_lo < cfg.uD_hi:
        raise ConfigError("uD_lo must be below uD_hi")
    return cfg


def solve_allocation(name, cfg: RunConfig, pbe=None):
    """Run one allocation; static_efficient reuses (or computes) the PBE."""
    p, g = cfg.params, cfg.grid.build()
    if name == "myopic":
        return solve_myopic(p, g, wiring=cfg.wiring)
    if name == "spp":
        return solve_spp(p, g, cfg.tol, cfg.max_iter)
    if name == "pbe":
        return solve_pbe(p, g, cfg.tol, cfg.max_iter, cfg.wiring)
    if name == "prme":
        return solve_prme(p, g, cfg.n_mu, cfg.tol, cfg.max_iter, cfg.wiring)
    if name == "static_efficient":
        pbe = pbe or solve_pbe(p, g, cfg.tol, cfg.max_iter, cfg.wiring)
        res = solve_static_efficient(pbe)
        ev = evaluate_policy_with_reversion(res.policy, None, 0.0, pbe)
        res.value = ev.V_U
        res.report.linear_residual = max(res.report.linear_residual, ev.residual)
        return res
    raise ConfigError(f"unknown allocation {name!r}")


def cmd_solve(cfg: RunConfig, out=sys.stdout):
    names = ALLOCATIONS if cfg.allocation == "all" else (cfg.allocation,)
    status = EXIT_OK
    pbe = None
    for name in names:
        res = solve_allocation(name, cfg, pbe)
        if name == "pbe":
            pbe = res
        res.export(cfg.outdir, cfg.tolerances())
        rep = res.report
        print(f"{name}: iterations={rep.outer_iterations} policy_change={rep.policy_change:.3e} "
              f"residual={rep.linear_residual:.3e} converged={rep.converged}", file=out)
        if not rep.converged:
            status = EXIT_SOLVER
    return status


def _load_artifact(cfg: RunConfig, name, grid):
    base = os.path.join(cfg.outdir, name)
    man_path = base + "_manifest.txt"
    if not os.path.exists(man_path):
        return None
    man = read_manifest(man_path)
    if man.get("grid_hash") != cfg.grid.digest():
        raise ConfigError(f"{man_path}: grid hash {man.get('grid_hash')} does not match the "
                          f"configured grid {cfg.grid.digest()}; re-run solve with this grid")
    if man.get("params_hash") != cfg.params.digest():
        warnings.warn(f"{name} artifacts were solved with different parameters "
                      f"({man.get('params_hash')} vs {cfg.params.digest()})")
    pol = Field.from_csv(base + "_policy.csv", grid).values
    val = None
    if os.path.exists(base + "_value.csv"):
        val = Field.from_csv(base + "_value.csv", grid).values
    return pol, val


def run_metrics(name, res_policy, res_value, cfg: RunConfig, grid):
    p = cfg.params
    path = simulate_path(res_policy, Z0, p, cfg.horizon, cfg.dt, grid)
    wc = None
    if res_value is not None:
        wc = welfare_cost(res_value, Z0, p, grid, planner=(name == "spp"))
    return path, path_metrics(path, p, wc)


def cmd_simulate(cfg: RunConfig, out=sys.stdout):
    grid = cfg.grid.build()
    name = cfg.allocation
    if name == "all":
        raise ConfigError("simulate needs a single allocation")
    art = _load_artifact(cfg, name, grid)
    if art is None:
        if name != "myopic":
            raise ConfigError(f"no {name} artifacts in {cfg.outdir}; run solve first")
        art = (np.ones(grid.shape), None)
    path, metrics = run_metrics(name, art[0], art[1], cfg, grid)
    extra = {}
    for other in ("spp", "static_efficient", "pbe"):
        if other == name:
            continue
        oth = _load_artifact(cfg, other, grid)
        if oth is not None:
            extra[f"a_{other}"] = policy_along_path(path, {other: oth[0]}, grid)[other]
    os.makedirs(cfg.outdir, exist_ok=True)
    path.to_csv(os.path.join(cfg.outdir, f"{name}_path.csv"), extra)
    text = metrics.as_text()
    with open(os.path.join(cfg.outdir, f"{name}_metrics.txt"), "w") as fh:
        fh.write(f"config_hash={cfg.params.digest()}:{cfg.grid.digest()}\n" + text)
    out.write(text)
    return EXIT_OK


def _sweep_params(cfg: RunConfig, value):
    p = cfg.params
    if cfg.sweep_axis == "sigma":
        return p.replace(sigma=value)
    if cfg.sweep_axis == "T_vaccine":
        return p.with_vaccine_years(value)
    if cfg.sweep_axis == "a_Ik":
        return p.replace(a_Ik=value)
    return p


def sweep_point(cfg: RunConfig, value):
    """All requested allocations at one sweep value; returns summary rows."""
    rows = []
    try:
        p = _sweep_params(cfg, value)
    except ParameterError as e:
        return [dict(allocation=a, axis=cfg.sweep_axis, value=value, status=f"invalid: {e}")
                for a in cfg.sweep_allocations]
    point = RunConfig(**{**vars(cfg), "params": p})
    grid = cfg.grid.build()
    pbe = None
    for name in cfg.sweep_allocations:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ConvergenceWarning)
            res = solve_allocation(name, point, pbe)
        if name == "pbe":
            pbe = res
        _, m = run_metrics(name, res.policy, res.value, point, grid)
        status = "ok" if res.report.converged else f"not converged ({res.report.policy_change:.2e})"
        if caught and status == "ok":
            status = "warning: " + str(caught[0].message)
        rows.append(dict(allocation=name, axis=cfg.sweep_axis, value=value,
                         welfare_cost=m.welfare_cost, expected_deaths_per_100k=m.expected_deaths_per_100k,
                         peak_prevalence=m.peak_prevalence, herd_immunity_day=m.herd_immunity_day,
                         status=status))
    return rows


def cmd_sweep(cfg: RunConfig, out=sys.stdout):
    if cfg.sweep_axis == "none" or not cfg.sweep_values:
        raise ConfigError("sweep needs sweep_axis and sweep_values")
    values = list(cfg.sweep_values)
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as ex:
            batches = list(ex.map(sweep_point, [cfg] * len(values), values))
    else:
        batches = [sweep_point(cfg, v) for v in values]
    rows = [r for b in batches for r in b]
    cols = ["allocation", "axis", "value", "welfare_cost", "expected_deaths_per_100k",
            "peak_prevalence", "herd_immunity_day", "status"]
    os.makedirs(cfg.outdir, exist_ok=True)
    path = os.path.join(cfg.outdir, f"sweep_{cfg.sweep_axis}.csv")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in cols])
    out.write(f"wrote {path} ({len(rows)} rows)\n")
    return EXIT_OK if all(r["status"] == "ok" for r in rows) else EXIT_SOLVER


def _fmt(x):
    if x is None:
        return "none"
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def cmd_calibrate(cfg: RunConfig, out=sys.stdout):
    if not cfg.data:
        raise ConfigError("calibrate needs --data")
    series = load_epidemic_csv(cfg.data, cfg.population)
    p = cfg.params
    dates, cfr = case_fatality_series(series)
    prev = prevalence_estimate(series, p)
    target = float(prev.max())
    os.makedirs(cfg.outdir, exist_ok=True)
    with open(os.path.join(cfg.outdir, "cfr.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "cfr"])
        w.writerows([[d.isoformat(), f"{x:.17g}"] for d, x in zip(dates, cfr)])
    with open(os.path.join(cfg.outdir, "prevalence.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "prevalence"])
        w.writerows([[d.isoformat(), f"{x:.17g}"] for d, x in zip(series.dates[:-1], prev)])
    rep = calibrate_uD(target, p, cfg.grid.build(), (cfg.uD_lo, cfg.uD_hi))
    text = rep.as_text() + f"vsl_uD={vsl_uD(cfg.vsl, cfg.annual_discount):.17g}\n"
    with open(os.path.join(cfg.outdir, "calibration.txt"), "w") as fh:
        fh.write(text)
    out.write(text)
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "simulate": cmd_simulate, "sweep": cmd_sweep, "calibrate": cmd_calibrate}


def make_parser():
    ap = argparse.ArgumentParser(prog="episir", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="flat key = value settings file")
        sp.add_argument("--allocation", choices=ALLOCATIONS + ("all",))
        sp.add_argument("--T", dest="T_years", type=float, help="expected vaccine arrival, years")
        for key in sorted((PARAM_KEYS | GRID_KEYS | RUN_KEYS) - {"allocation"}):
            sp.add_argument(f"--{key.replace('_', '-')}", dest=key, metavar="VALUE")
    return ap


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        settings = {}
        if args.config:
            try:
                with open(args.config) as fh:
                    settings.update(parse_config_text(fh.read(), args.config))
            except OSError as e:
                raise ConfigError(f"cannot read config {args.config}: {e}") from e
        for key, val in vars(args).items():
            if key in ("command", "config") or val is None:
                continue
            settings[key] = val if key in ("allocation", "T_years") else _coerce(key, val)
        cfg = build_config(settings)
        return COMMANDS[args.command](cfg)
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except CalibrationError as e:
        print(f"calibration failed: {e}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
