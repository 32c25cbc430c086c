"""Predictor-corrector continuation of SIM points over progress-variable values."""

from __future__ import annotations

import itertools
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Literal, Sequence

import numpy as np
import scipy.optimize

from .kinetics import objective
from .nlp import (
    NlpProblem,
    KktSolution,
    SolverOptions,
    ggn_solve,
    newton_kkt_solve,
)
from .sensitivity import (
    SensitivityMatrix,
    SensitivityUnavailable,
    kkt_sensitivities,
    tangent_predict,
    tangent_predict_multipliers,
)

log = logging.getLogger(__name__)

PATH_FAILURE = "path_failure"
LINEAR = "linear"


@dataclass(frozen=True)
class CorrectorStats:
    iterations: int
    a0: float
    a1: float

    @classmethod
    def from_solution(cls, sol: KktSolution) -> "CorrectorStats":
        norms = sol.step_norms + [0.0, 0.0]
        return cls(sol.iterations, norms[0], norms[1])


@dataclass
class PathPoint:
    r: np.ndarray
    solution: KktSolution
    sens: SensitivityMatrix | None
    stats: CorrectorStats

    @property
    def x(self) -> np.ndarray:
        return self.solution.x


@dataclass
class StepSizeState:
    h: float = 0.4
    k_desired: int = 10
    model: Literal["linear", "quadratic"] = "linear"
    h_min: float = 1e-3
    h_max: float = 1.0
    growth: float = 2.0

    def __post_init__(self):
        if self.k_desired < 2:
            raise ValueError("k_desired must be at least 2")
        self.h = min(max(self.h, self.h_min), self.h_max)


@dataclass(frozen=True)
class ContinuationConfig:
    mode: Literal["full", "adaptive", "linear"] = "full"
    eps_tol: float = 1.1
    predictor: Literal["euler", "constant"] = "euler"
    corrector: Literal["ggn", "newton"] = "ggn"
    h_init: float = 0.4
    k_desired: int = 10
    h_min: float = 1e-3
    h_max: float = 1.0
    growth: float = 2.0
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if self.mode == "linear" and not self.eps_tol > 0:
            raise ValueError("eps_tol must be positive in linear mode")

    def step_state(self) -> StepSizeState:
        return StepSizeState(self.h_init, self.k_desired,
                             "quadratic" if self.corrector == "newton" else "linear",
                             self.h_min, self.h_max, self.growth)


class PathFailure(RuntimeError):
    def __init__(self, message: str, last_good: PathPoint, solution: KktSolution | None = None):
        super().__init__(message)
        self.last_good = last_good
        self.solution = solution


# ----------------------------------------------------------------------------
# building blocks


def correct(problem: NlpProblem, x0: np.ndarray, config: ContinuationConfig,
            lam0: np.ndarray | None = None, active0=None) -> KktSolution:
    if config.corrector == "newton":
        return newton_kkt_solve(problem, x0, lam0, config.solver, active0=active0)
    return ggn_solve(problem, x0, config.solver, active0=active0)


def make_point(problem: NlpProblem, sol: KktSolution, cond_max: float = 1e14) -> PathPoint:
    try:
        sens = kkt_sensitivities(problem, sol, cond_max)
    except SensitivityUnavailable as exc:
        log.info("sensitivities unavailable at r=%s: %s", problem.r, exc)
        sens = None
    return PathPoint(problem.r.copy(), sol, sens, CorrectorStats.from_solution(sol))


def euler_predict(prev: PathPoint, r_next, h: float = 1.0, predictor: str = "euler"):
    """Warm start (x0, lam0) for r_prev + h (r_next - r_prev).

    Falls back to the previous solution when sensitivities are missing or the
    constant predictor is requested. Pinned components always take their new
    values and negative components are clipped to zero.
    """
    r_next = np.asarray(r_next, dtype=float)
    r_h = prev.r + h * (r_next - prev.r)
    sol = prev.solution
    if predictor == "euler" and prev.sens is not None:
        x0 = tangent_predict(sol, prev.sens, r_h)
        lam0 = tangent_predict_multipliers(sol, prev.sens, r_h)
    else:
        x0 = sol.x.copy()
        lam0 = sol.lam.copy()
        if prev.sens is not None:
            x0[list(prev.sens.pins)] = r_h
    return np.maximum(x0, 0.0), lam0


def adapt_step(state: StepSizeState, stats: CorrectorStats) -> float:
    """Step fraction for the next predictor step from the last corrector run.

    The first increment ``a0`` measures the initial error of the predicted
    point, which is modelled as ``gamma h^2``. The contraction comes from the
    first two increments: ``rho = a1/a0`` (linear model) or ``delta = a1/a0^2``
    (quadratic model). The iteration-count model is anchored at the observed
    count ``m``, so shrinking the initial error by a factor ``rho`` saves one
    linear iteration. The new step is the largest one whose predicted count
    does not exceed ``k_desired``.
    """
    h, m, a0, a1 = state.h, stats.iterations, stats.a0, stats.a1
    if m < 2 or a0 <= 0.0 or a1 <= 0.0:
        state.h = min(state.growth * h, state.h_max)
        return state.h
    spare = state.k_desired - m
    delta = a1 / a0**2
    if state.model == "quadratic" and delta * a0 < 1.0:
        log_target = math.log(delta * a0) * 2.0 ** (-spare)
        ratio = math.exp(log_target) / (delta * a0)
    else:
        rho = min(a1 / a0, 1.0 - 1e-6)
        ratio = math.exp(-spare * math.log(rho))
    factor = math.sqrt(ratio)
    h_new = min(h * min(factor, state.growth), state.h_max)
    state.h = max(h_new, state.h_min)
    return state.h


def continue_to(prev: PathPoint, r_target, problem: NlpProblem, config: ContinuationConfig,
                state: StepSizeState | None = None) -> list[PathPoint]:
    """Predict-correct along the segment from ``prev.r`` to ``r_target``.

    ``problem`` supplies mechanism, conservation and pin layout; its pinned
    values are replaced. Raises PathFailure carrying the last good point.
    """
    r_target = np.asarray(r_target, dtype=float)
    if np.array_equal(r_target, prev.r):
        return [prev]
    if config.mode != "adaptive":
        x0, lam0 = euler_predict(prev, r_target, 1.0, config.predictor)
        sub = problem.with_values(r_target)
        sol = correct(sub, sub.substitute(x0), config, lam0, prev.solution.active)
        if not sol.ok:
            raise PathFailure(f"corrector {sol.status} at r={r_target}", prev, sol)
        return [make_point(sub, sol)]

    state = state or config.step_state()
    start = prev.r.copy()
    span = r_target - start
    length = float(np.linalg.norm(span))
    points: list[PathPoint] = []
    current = prev
    while True:
        done = float(np.linalg.norm(current.r - start))
        remaining = length - done
        if remaining <= 1e-12 * max(1.0, length):
            return points
        step = min(state.h * length, remaining)
        r_next = r_target.copy() if step == remaining else start + span * ((done + step) / length)
        x0, lam0 = euler_predict(current, r_next, 1.0, config.predictor)
        sub = problem.with_values(r_next)
        sol = correct(sub, sub.substitute(x0), config, lam0, current.solution.active)
        if not sol.ok:
            if state.h / 2 < state.h_min:
                raise PathFailure(f"step size below minimum near r={r_next}",
                                  current, sol)
            state.h /= 2
            continue
        point = make_point(sub, sol)
        points.append(point)
        adapt_step(state, point.stats)
        current = point


def linear_step_query(prev: PathPoint, r_new, eps_tol: float) -> np.ndarray | None:
    """Tangent approximation if ``r_new`` lies within ``eps_tol`` of ``prev.r``, else None."""
    r_new = np.asarray(r_new, dtype=float)
    dist = float(np.linalg.norm(r_new - prev.r))
    if dist == 0.0:
        return prev.x.copy()
    if prev.sens is None or not dist < eps_tol:
        return None
    return tangent_predict(prev.solution, prev.sens, r_new)


# ----------------------------------------------------------------------------
# grids


def parse_grid(spec: str) -> np.ndarray:
    """``start:step:count``, ``[v1,v2,...]`` or a scalar."""
    spec = spec.strip()
    if spec.startswith("["):
        if not spec.endswith("]"):
            raise ValueError(f"malformed list {spec!r}")
        return np.array([float(v) for v in spec[1:-1].split(",") if v.strip()])
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise ValueError(f"grid spec must be start:step:count, got {spec!r}")
        start, step, count = float(parts[0]), float(parts[1]), int(parts[2])
        if count < 1:
            raise ValueError("grid count must be positive")
        return start + step * np.arange(count)
    return np.array([float(spec)])


def grid_point_feasible(problem: NlpProblem, r: np.ndarray) -> bool:
    """Whether some z >= 0 satisfies the conservation rows with the given pins."""
    n = problem.n
    pins = list(problem.pins.indices)
    if np.any(np.asarray(r) < 0):
        return False
    bounds = [(0, None)] * n
    for j, v in zip(pins, r):
        bounds[j] = (float(v), float(v))
    res = scipy.optimize.linprog(np.zeros(n), A_eq=problem.conservation.matrix,
                                 b_eq=problem.conservation.totals, bounds=bounds, method="highs")
    return res.status == 0


@dataclass
class GridPoint:
    index: tuple[int, ...]
    r: np.ndarray
    x: np.ndarray | None
    phi: float
    status: str
    iterations: int
    tangent: np.ndarray | None
    source: int | None = None  # flat index of the warm-start point, -1 for the anchor


@dataclass
class SweepResult:
    names: tuple[str, ...]
    species: tuple[str, ...]
    shape: tuple[int, ...]
    points: list[GridPoint]
    n_grid: int
    total_iterations: int
    failures: int
    corrected: int
    wall_time: float
    predictor_time: float
    corrector_time: float
    config: ContinuationConfig

    def by_index(self) -> dict[tuple[int, ...], GridPoint]:
        return {p.index: p for p in self.points}


def _nearest(r: np.ndarray, candidates: list[tuple[np.ndarray, object]]):
    best, best_d = None, math.inf
    for cand_r, item in candidates:
        d = float(np.linalg.norm(r - cand_r))
        if d < best_d:
            best, best_d = item, d
    return best, best_d


def _sweep_sequence(anchor: PathPoint, problem: NlpProblem, config: ContinuationConfig,
                    todo: list[tuple[tuple[int, ...], np.ndarray]], seeds=None):
    """Solve grid points in greedy nearest-neighbour order from the solved set."""
    solved: list[tuple[np.ndarray, tuple]] = [(anchor.r, ("anchor", anchor))]
    if seeds:
        solved.extend((p.r, ("point", idx, p)) for idx, p in seeds)
    processed: list[np.ndarray] = [anchor.r] + [p.r for _, p in (seeds or [])]
    results: list[GridPoint] = []
    pred_time = corr_time = 0.0
    pending = list(todo)
    while pending:
        # next point: closest to anything processed, ties broken by grid order
        best_k, best_d = 0, math.inf
        for k, (_, r) in enumerate(pending):
            d = min(float(np.linalg.norm(r - q)) for q in processed)
            if d < best_d - 1e-12:
                best_k, best_d = k, d
        index, r = pending.pop(best_k)
        processed.append(r)
        src, _ = _nearest(r, solved)
        src_point = src[1] if src[0] == "anchor" else src[2]
        src_id = -1 if src[0] == "anchor" else src[1]

        if config.mode == "linear":
            t0 = time.perf_counter()
            z_lin = linear_step_query(src_point, r, config.eps_tol)
            pred_time += time.perf_counter() - t0
            if z_lin is not None:
                tangent = src_point.sens.dx_dr if src_point.sens is not None else None
                results.append(GridPoint(index, r, z_lin, objective(problem.mechanism, z_lin),
                                         LINEAR, 0, tangent, src_id))
                continue

        t0 = time.perf_counter()
        cfg = config if config.mode == "adaptive" else replace(config, mode="full")
        try:
            if config.mode == "adaptive":
                new = continue_to(src_point, r, problem, cfg)
                iters = sum(p.stats.iterations for p in new)
                point = new[-1]
                if point is src_point:
                    sub = problem.with_values(r)
                    sol = correct(sub, src_point.x, cfg, src_point.solution.lam,
                                  src_point.solution.active)
                    point = make_point(sub, sol)
                    iters = sol.iterations
            else:
                x0, lam0 = euler_predict(src_point, r, 1.0, config.predictor)
                t1 = time.perf_counter()
                pred_time += t1 - t0
                t0 = t1
                sub = problem.with_values(r)
                sol = correct(sub, sub.substitute(x0), cfg, lam0, src_point.solution.active)
                if not sol.ok:
                    raise PathFailure(sol.status, src_point, sol)
                point = make_point(sub, sol)
                iters = sol.iterations
        except PathFailure as exc:
            corr_time += time.perf_counter() - t0
            status = exc.solution.status if (config.mode != "adaptive" and exc.solution) else PATH_FAILURE
            iters = exc.solution.iterations if exc.solution is not None else 0
            results.append(GridPoint(index, r, None, math.nan, status, iters, None, src_id))
            continue
        corr_time += time.perf_counter() - t0
        tangent = point.sens.dx_dr if point.sens is not None else None
        results.append(GridPoint(index, r, point.x.copy(), objective(problem.mechanism, point.x),
                                 point.solution.status, iters, tangent, src_id))
        solved.append((r, ("point", index, point)))
    return results, pred_time, corr_time, solved


def _row_worker(args):
    anchor, problem, config, todo = args
    results, pt, ct, _ = _sweep_sequence(anchor, problem, config, todo)
    return results, pt, ct


def sweep_grid(anchor: PathPoint, problem: NlpProblem, axes: Sequence[Sequence[float]],
               config: ContinuationConfig = ContinuationConfig(), jobs: int = 1,
               names: Sequence[str] | None = None) -> SweepResult:
    """Solve the SIM problem on a tensor grid of pinned values.

    Grid points for which no non-negative composition satisfies conservation
    and the pins are skipped. With ``jobs == 1`` points are visited greedily,
    each warm-started from the nearest converged point. With ``jobs > 1`` the
    line of the first axis through the anchor is solved first and the lines
    along the remaining axes are then processed concurrently from it.
    """
    if not anchor.solution.ok:
        raise ValueError("anchor point did not converge")
    axes = [np.asarray(a, dtype=float) for a in axes]
    if len(axes) != len(problem.pins.indices):
        raise ValueError("one grid axis per progress variable required")
    shape = tuple(len(a) for a in axes)
    names = tuple(names) if names else tuple(problem.mechanism.species[i] for i in problem.pins.indices)
    t_start = time.perf_counter()
    todo = []
    for index in itertools.product(*(range(s) for s in shape)):
        r = np.array([axes[k][i] for k, i in enumerate(index)])
        if grid_point_feasible(problem, r):
            todo.append((index, r))

    if jobs <= 1 or len(shape) == 1:
        results, pred_t, corr_t, _ = _sweep_sequence(anchor, problem, config, todo)
    else:
        # spine along axis 0 through the column nearest the anchor
        col = tuple(int(np.argmin(np.abs(axes[k] - anchor.r[k]))) for k in range(1, len(shape)))
        spine = [(i, r) for i, r in todo if i[1:] == col]
        results, pred_t, corr_t, solved = _sweep_sequence(anchor, problem, config, spine)
        seeds = {item[1][1]: item[1][2] for item in solved if item[1][0] == "point"}
        tasks = []
        for row in range(shape[0]):
            rest = [(i, r) for i, r in todo if i[0] == row and i[1:] != col]
            seed = seeds.get((row,) + col)
            if not rest:
                continue
            row_anchor = seed if seed is not None else anchor
            tasks.append((row_anchor, problem, config, rest))
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for res, pt, ct in pool.map(_row_worker, tasks):
                results.extend(res)
                pred_t += pt
                corr_t += ct
        results.sort(key=lambda p: p.index)

    ok = [p for p in results if p.status not in (PATH_FAILURE,) and not p.status.startswith("failed")]
    total = sum(p.iterations for p in ok)
    failures = len(results) - len(ok)
    corrected = sum(1 for p in ok if p.status != LINEAR)
    results.sort(key=lambda p: p.index)
    return SweepResult(names, problem.mechanism.species, shape, results, int(np.prod(shape)),
                       total, failures, corrected, time.perf_counter() - t_start, pred_t, corr_t,
                       config)


def solve_anchor(problem: NlpProblem, x0: np.ndarray, config: ContinuationConfig = ContinuationConfig()) -> PathPoint:
    sol = correct(problem, problem.substitute(x0), config)
    return make_point(problem, sol)
