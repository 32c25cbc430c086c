"""Command-line front end: ``simtrack {solve,sweep,landscape,trajectory,equilibrium}``."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .continuation import (
    ContinuationConfig,
    PathFailure,
    SweepResult,
    parse_grid,
    solve_anchor,
    sweep_grid,
)
from .kinetics import BUNDLED_MECHANISM, Mechanism, MechanismError, load_mechanism, objective, source_term
from .nlp import NlpProblem, SolverOptions, interior_minima, landscape_scan
from .odeint import IntegrationError, Trajectory, integrate, relax_to_equilibrium

log = logging.getLogger("simtrack")

EXIT_OK, EXIT_NUMERIC, EXIT_CONFIG = 0, 1, 2
BUNDLED_DIR = BUNDLED_MECHANISM.parent


class ConfigError(ValueError):
    pass


class NumericalFailure(RuntimeError):
    pass


def fmt(v: float) -> str:
    return f"{float(v):.17g}"


@dataclass
class RunConfig:
    mechanism: Mechanism
    anchor: np.ndarray
    pins: list[tuple[str, np.ndarray]]
    continuation: ContinuationConfig
    out_dir: Path
    jobs: int = 1

    @property
    def pin_names(self) -> list[str]:
        return [name for name, _ in self.pins]


def parse_assignment(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise ConfigError(f"expected NAME=VALUE, got {text!r}")
    name, value = text.split("=", 1)
    return name.strip(), value.strip()


def parse_pins(items: list[str], mech: Mechanism) -> list[tuple[str, np.ndarray]]:
    pins, seen = [], set()
    for item in items or []:
        name, spec = parse_assignment(item)
        if name in seen:
            raise ConfigError("duplicate pin")
        if name not in mech.species:
            raise ConfigError(f"unknown species {name!r}")
        seen.add(name)
        try:
            pins.append((name, parse_grid(spec)))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    return pins


def parse_composition(text: str, mech: Mechanism) -> np.ndarray:
    values = {}
    for part in text.split(","):
        name, value = parse_assignment(part)
        values[name] = float(value)
    try:
        return mech.vector(values)
    except (KeyError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def read_point_csv(path: str | Path, mech: Mechanism) -> np.ndarray:
    """Composition from a ``point.csv`` written by ``simtrack solve``."""
    values = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["quantity"] == "z":
                values[row["name"]] = float(row["value"])
    if not values:
        raise ConfigError(f"no composition rows in {path}")
    return mech.vector(values)


def build_config(args) -> RunConfig:
    path = args.mechanism
    if path is not None and not Path(path).exists() and (BUNDLED_DIR / path).exists():
        path = BUNDLED_DIR / path
    try:
        mech = load_mechanism(path)
    except (OSError, MechanismError) as exc:
        raise ConfigError(str(exc)) from exc
    if args.anchor:
        anchor = parse_composition(args.anchor, mech)
    elif mech.anchor is not None:
        anchor = mech.anchor
    else:
        raise ConfigError("mechanism has no anchor composition; pass --anchor")
    solver = SolverOptions(tol_abs=args.tol_abs, tol_rel=args.tol_rel, scaling=args.scale)
    try:
        cont = ContinuationConfig(mode=args.mode, eps_tol=args.eps_tol, predictor=args.predictor,
                                  corrector=args.corrector, h_init=args.h_init,
                                  k_desired=args.k_desired, solver=solver)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    pins = parse_pins(getattr(args, "pin", None), mech)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return RunConfig(mech, anchor, pins, cont, out, args.jobs)


def _problem(cfg: RunConfig, values) -> NlpProblem:
    try:
        return NlpProblem.build(cfg.mechanism, list(zip(cfg.pin_names, values)), cfg.anchor)
    except (KeyError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


# ----------------------------------------------------------------------------
# commands


def cmd_solve(args) -> int:
    cfg = build_config(args)
    if not cfg.pins:
        raise ConfigError("solve needs at least one --pin")
    if any(v.size != 1 for _, v in cfg.pins):
        raise ConfigError("solve takes scalar pins; use sweep for grids")
    problem = _problem(cfg, [float(v[0]) for _, v in cfg.pins])
    t0 = time.perf_counter()
    point = solve_anchor(problem, cfg.anchor, cfg.continuation)
    elapsed = time.perf_counter() - t0
    sol = point.solution
    mech = cfg.mechanism
    rows = [("status", "", sol.status), ("iterations", "", sol.iterations)]
    rows += [("z", s, fmt(v)) for s, v in zip(mech.species, sol.x)]
    rows.append(("phi", "", fmt(objective(mech, sol.x))))
    rows += [("lambda", e, fmt(v)) for e, v in zip(problem.conservation.elements, sol.lam)]
    rows += [("mu", s, fmt(v)) for s, v in zip(mech.species, sol.mu)]
    if point.sens is not None:
        for k, name in enumerate(cfg.pin_names):
            rows += [(f"dz/d{name}", s, fmt(v)) for s, v in zip(mech.species, point.sens.dx_dr[:, k])]
    with open(cfg.out_dir / "point.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "name", "value"])
        w.writerows(rows)
    print(f"{sol.status}: {sol.iterations} iterations, stationarity {sol.kkt_residual:.2e}, "
          f"feasibility {sol.feasibility:.2e}, {elapsed * 1e3:.1f} ms")
    if not sol.ok:
        raise NumericalFailure(sol.status)
    return EXIT_OK


def write_sweep(result: SweepResult, path: Path) -> None:
    names = list(result.names)
    header = [f"i_{n}" for n in names] + names + list(result.species) + ["phi", "status", "iterations"]
    header += [f"d{s}/d{n}" for n in names for s in result.species]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        n = len(result.species)
        for p in result.points:
            z = p.x if p.x is not None else np.full(n, np.nan)
            tangent = p.tangent if p.tangent is not None else np.full((n, len(names)), np.nan)
            w.writerow(list(p.index) + [fmt(v) for v in p.r] + [fmt(v) for v in z]
                       + [fmt(p.phi), p.status, p.iterations]
                       + [fmt(v) for v in tangent.T.ravel()])


def cmd_sweep(args) -> int:
    cfg = build_config(args)
    if not 1 <= len(cfg.pins) <= 2:
        raise ConfigError("sweep takes one or two pins")
    r_anchor = [float(cfg.anchor[cfg.mechanism.index(n)]) for n in cfg.pin_names]
    problem = _problem(cfg, r_anchor)
    anchor = solve_anchor(problem, cfg.anchor, cfg.continuation)
    if not anchor.solution.ok:
        raise NumericalFailure(f"anchor solve: {anchor.solution.status}")
    result = sweep_grid(anchor, problem, [v for _, v in cfg.pins], cfg.continuation,
                        jobs=cfg.jobs, names=cfg.pin_names)
    write_sweep(result, cfg.out_dir / "sweep.csv")
    c = cfg.continuation
    summary = [
        f"grid points: {result.n_grid}",
        f"attempted: {len(result.points)}",
        f"corrected: {result.corrected}",
        f"total iterations: {result.total_iterations}",
        f"anchor iterations: {anchor.solution.iterations}",
        f"failures: {result.failures}",
        f"mode: {c.mode}",
        f"predictor: {c.predictor}",
        f"corrector: {c.corrector}",
        f"wall time [s]: {result.wall_time:.6f}",
        f"predictor time [s]: {result.predictor_time:.6f}",
        f"corrector time [s]: {result.corrector_time:.6f}",
    ]
    (cfg.out_dir / "summary.txt").write_text("\n".join(summary) + "\n")
    print("\n".join(summary))
    return EXIT_OK


def cmd_landscape(args) -> int:
    cfg = build_config(args)
    mech = cfg.mechanism
    try:
        fixed = {n: float(v) for n, v in map(parse_assignment, args.fix or [])}
        scan = {n: parse_grid(v) for n, v in map(parse_assignment, args.scan or [])}
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if not scan:
        raise ConfigError("landscape needs at least one --scan")
    problem = _problem(cfg, [])
    try:
        land = landscape_scan(mech, problem.conservation, fixed, scan, positivity=not args.raw)
    except (KeyError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    with open(cfg.out_dir / "landscape.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(land.names) + list(mech.species) + ["phi", "valid"])
        for coords, z, phi, ok in zip(land.coords, land.states, land.phi, land.valid):
            w.writerow([fmt(v) for v in coords] + [fmt(v) for v in z]
                       + ["" if np.isnan(phi) else fmt(phi), int(ok)])
    if len(land.names) == 1:
        axis = land.coords[:, 0]
        minima = interior_minima(land.phi)
        print(f"interior minima of phi at {land.names[0]} = "
              + ", ".join(f"{axis[i]:.6g}" for i in minima))
    return EXIT_OK


def _start_state(args, cfg: RunConfig) -> np.ndarray:
    if args.start:
        return read_point_csv(args.start, cfg.mechanism)
    if args.z:
        return parse_composition(args.z, cfg.mechanism)
    return cfg.anchor


def cmd_trajectory(args) -> int:
    cfg = build_config(args)
    z0 = _start_state(args, cfg)
    mech = cfg.mechanism
    path = cfg.out_dir / "trajectory.csv"
    if args.tf <= 0:
        traj = Trajectory(np.array([0.0]), z0[None, :], 0.0, 0.0, mech.species)
    else:
        try:
            traj = integrate(mech, z0, (0.0, args.tf), tol=args.tol)
        except IntegrationError as exc:
            raise NumericalFailure(str(exc)) from exc
    traj.to_csv(path)
    print(f"{len(traj.times)} rows written to {path}")
    return EXIT_OK


def cmd_equilibrium(args) -> int:
    cfg = build_config(args)
    z0 = _start_state(args, cfg)
    mech = cfg.mechanism
    cons = _problem(cfg, []).conservation
    try:
        eq = relax_to_equilibrium(mech, cons, z0)
    except IntegrationError as exc:
        raise NumericalFailure(str(exc)) from exc
    with open(cfg.out_dir / "equilibrium.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "name", "value"])
        w.writerows(("z", s, fmt(v)) for s, v in zip(mech.species, eq))
        w.writerow(("max_abs_source", "", fmt(np.max(np.abs(source_term(mech, eq))))))
    print(" ".join(f"{s}={v:.8g}" for s, v in zip(mech.species, eq)))
    return EXIT_OK


# ----------------------------------------------------------------------------
# argument parsing


def _global_flags() -> argparse.ArgumentParser:
    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("-m", "--mechanism", default=None, help="mechanism file (default: bundled H2 mechanism)")
    g.add_argument("-o", "--out-dir", default=".", help="output directory")
    g.add_argument("--anchor", default=None, help="anchor composition NAME=VALUE,...")
    g.add_argument("--corrector", choices=("ggn", "newton"), default="ggn")
    g.add_argument("--predictor", choices=("euler", "constant"), default="euler")
    g.add_argument("--mode", choices=("full", "adaptive", "linear"), default="full")
    g.add_argument("--eps-tol", type=float, default=1.1)
    g.add_argument("--h-init", type=float, default=0.4)
    g.add_argument("--k-desired", type=int, default=10)
    g.add_argument("--tol-abs", type=float, default=1e-10)
    g.add_argument("--tol-rel", type=float, default=1e-9)
    g.add_argument("--scale", action="store_true", help="scale the termination test by anchor magnitudes")
    g.add_argument("--jobs", type=int, default=1)
    return g


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags()
    parser = argparse.ArgumentParser(prog="simtrack", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", parents=[common], help="solve for one SIM point")
    p.add_argument("--pin", action="append", metavar="NAME=VALUE")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", parents=[common], help="continuation over a grid of pinned values")
    p.add_argument("--pin", action="append", metavar="NAME=GRID",
                   help="start:step:count or [v1,v2,...]")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("landscape", parents=[common], help="tabulate the objective over a scan")
    p.add_argument("--fix", action="append", metavar="NAME=VALUE")
    p.add_argument("--scan", action="append", metavar="NAME=GRID")
    p.add_argument("--raw", action="store_true",
                   help="evaluate cells whose completion has negative components")
    p.set_defaults(func=cmd_landscape)

    for name, func, helptext in (("trajectory", cmd_trajectory, "integrate the kinetics"),
                                 ("equilibrium", cmd_equilibrium, "relax to equilibrium")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--start", default=None, help="point.csv from a previous solve")
        p.add_argument("--z", default=None, help="start composition NAME=VALUE,...")
        if name == "trajectory":
            p.add_argument("--tf", type=float, default=1e-5, help="horizon in seconds")
            p.add_argument("--tol", type=float, default=1e-8)
        p.set_defaults(func=func)
    return parser


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("SIMTRACK_LOG", "error").upper()
    logging.basicConfig(level=getattr(logging, level, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, PathFailure) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
