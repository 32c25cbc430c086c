"""Local constrained least-squares problem for SIM points and its correctors.

For pinned progress variables ``r`` the unknown state ``z`` solves

    min  1/2 ||s * J_S(z) S(z)||^2   s.t.  C z = b,  z[pins] = r,  z >= 0,

where ``s`` is a fixed objective scale chosen per problem family. Two correctors
are provided: a generalized Gauss-Newton method (``ggn_solve``) and Newton's
method on the KKT conditions with the exact Hessian (``newton_kkt_solve``).
Both share a filter line search with second-order correction, an active-set
treatment of the bounds and a least-squares feasibility restoration phase.
Pins are eliminated: pinned components are substituted, the remaining
components are the optimization variables.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
import scipy.linalg

from .kinetics import (
    NEGATIVE_SLACK,
    ConservationSystem,
    Mechanism,
    _kinetics,
    conservation_from_anchor,
)

log = logging.getLogger(__name__)

CONVERGED = "converged"
RESTORATION_USED = "restoration_used"
FAILED_SINGULAR = "failed_singular"
FAILED_MAXITER = "failed_maxiter"
FAILED_RESTORATION = "failed_restoration"
OK_STATUSES = (CONVERGED, RESTORATION_USED)


class SingularKKTError(np.linalg.LinAlgError):
    """KKT matrix singular or too ill-conditioned to factorize reliably."""


@dataclass(frozen=True)
class SolverOptions:
    tol_abs: float = 1e-10
    tol_rel: float = 1e-9
    tol_feas: float = 1e-9
    tol_stat: float = 1e-8
    max_iter: int = 200
    gamma_theta: float = 1e-5
    gamma_f: float = 1e-5
    backtrack: float = 0.5
    t_min: float = 1e-8
    armijo: float = 1e-4
    switch_delta: float = 1.0
    switch_s_theta: float = 1.1
    switch_s_f: float = 2.3
    mu_release: float = -1e-10
    cond_max: float = 1e14
    scaling: bool = False


@dataclass(frozen=True)
class ProgressVariableSpec:
    indices: tuple[int, ...]
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float).reshape(-1))
        if len(set(self.indices)) != len(self.indices):
            raise ValueError("duplicate pin")
        if len(self.indices) != self.values.size:
            raise ValueError("one value per pinned index required")
        if np.any(self.values < 0):
            raise ValueError("pinned values must be non-negative")

    @classmethod
    def from_names(cls, mech: Mechanism, pins: Mapping[str, float] | Sequence[tuple[str, float]]):
        items = list(pins.items()) if isinstance(pins, Mapping) else list(pins)
        names = [name for name, _ in items]
        if len(set(names)) != len(names):
            raise ValueError("duplicate pin")
        return cls(tuple(mech.index(name) for name in names), np.array([v for _, v in items]))

    def with_values(self, values) -> "ProgressVariableSpec":
        return ProgressVariableSpec(self.indices, np.asarray(values, dtype=float))


@dataclass(frozen=True, eq=False)
class NlpProblem:
    mechanism: Mechanism
    conservation: ConservationSystem
    pins: ProgressVariableSpec
    objective_scale: float = 1.0

    def __post_init__(self):
        n = self.mechanism.n_species
        if len(self.pins.indices) >= n - self.conservation.n_rows:
            raise ValueError("too many progress variables for the number of free species")

    @classmethod
    def build(cls, mech: Mechanism, pins, anchor: np.ndarray | None = None,
              objective_scale: float | None = None) -> "NlpProblem":
        anchor = mech.anchor if anchor is None else np.asarray(anchor, dtype=float)
        if anchor is None:
            raise ValueError("an anchor composition is required")
        cons = conservation_from_anchor(mech, anchor)
        spec = pins if isinstance(pins, ProgressVariableSpec) else ProgressVariableSpec.from_names(mech, pins)
        if objective_scale is None:
            objective_scale = default_objective_scale(mech, anchor)
        return cls(mech, cons, spec, objective_scale)

    @property
    def n(self) -> int:
        return self.mechanism.n_species

    @property
    def r(self) -> np.ndarray:
        return self.pins.values

    @property
    def free(self) -> np.ndarray:
        mask = np.ones(self.n, dtype=bool)
        mask[list(self.pins.indices)] = False
        return np.flatnonzero(mask)

    def with_values(self, r) -> "NlpProblem":
        return replace(self, pins=self.pins.with_values(r))

    def substitute(self, x: np.ndarray) -> np.ndarray:
        x = np.array(x, dtype=float)
        x[list(self.pins.indices)] = self.pins.values
        return x


def default_objective_scale(mech: Mechanism, z: np.ndarray) -> float:
    """Scale giving the Gauss-Newton Hessian of the objective unit 2-norm at ``z``."""
    norm = float(np.linalg.norm(objective_jacobian(mech, np.asarray(z, dtype=float)), 2))
    return 1.0 / norm if norm > 0 else 1.0


@dataclass
class Residuals:
    """Residual pair at x in the full variable space.

    F2 stacks conservation rows, pin rows and active bound rows, in that order.
    """

    x: np.ndarray
    F1: np.ndarray
    J1: np.ndarray
    F2: np.ndarray
    J2: np.ndarray
    n_conservation: int
    n_pins: int
    active: tuple[int, ...]
    source: np.ndarray
    jac: np.ndarray

    @property
    def objective(self) -> float:
        return 0.5 * float(self.F1 @ self.F1)


@dataclass(frozen=True)
class ActiveSetState:
    active: tuple[int, ...] = ()
    multipliers: tuple[float, ...] = ()


class FilterState:
    """Set of mutually non-dominated (constraint violation, objective) pairs."""

    def __init__(self, gamma_theta: float = 1e-5, gamma_f: float = 1e-5):
        self.gamma_theta = gamma_theta
        self.gamma_f = gamma_f
        self.entries: list[tuple[float, float]] = []

    def acceptable(self, theta: float, f: float) -> bool:
        return all(theta < tj or f < fj for tj, fj in self.entries)

    def add(self, theta: float, f: float) -> None:
        """Insert the margin-shifted pair for an iterate, dropping dominated entries."""
        entry = ((1 - self.gamma_theta) * theta, f - self.gamma_f * theta)
        if any(tj <= entry[0] and fj <= entry[1] for tj, fj in self.entries):
            return
        self.entries = [(tj, fj) for tj, fj in self.entries
                        if not (entry[0] <= tj and entry[1] <= fj)]
        self.entries.append(entry)

    def snapshot(self) -> tuple[tuple[float, float], ...]:
        return tuple(self.entries)


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    theta: float
    f: float
    step_norm: float
    step_length: float
    active: tuple[int, ...]
    flags: tuple[str, ...]
    filter_entries: tuple[tuple[float, float], ...]


@dataclass
class KktSolution:
    """Corrector result.

    ``lam`` holds the conservation-row multipliers and ``mu`` the bound
    multipliers (full length, zero off the active set), both for the scaled
    objective and the Lagrangian ``f - lam.(C x - b) - mu.x``.
    """

    x: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    active: tuple[int, ...]
    kkt_residual: float
    feasibility: float
    iterations: int
    status: str
    step_norms: list[float] = field(default_factory=list)
    log: list[IterationRecord] = field(default_factory=list)
    r: np.ndarray | None = None

    @property
    def ok(self) -> bool:
        return self.status in OK_STATUSES


# ----------------------------------------------------------------------------
# residual assembly


def _objective_parts(mech: Mechanism, x: np.ndarray):
    s, j, dj = _kinetics(mech, x, None)
    f1 = j @ s
    dj = _kinetics(mech, x, s)[2]
    return f1, dj + j @ j, s, j


def objective_jacobian(mech: Mechanism, x: np.ndarray) -> np.ndarray:
    """Jacobian of J_S(x) S(x) (works for complex x)."""
    s, j, _ = _kinetics(mech, x, None)
    return _kinetics(mech, x, s)[2] + j @ j


def constraint_rows(problem: NlpProblem, active: Sequence[int]) -> np.ndarray:
    n = problem.n
    pins = np.zeros((len(problem.pins.indices), n))
    pins[np.arange(len(problem.pins.indices)), list(problem.pins.indices)] = 1.0
    bounds = np.zeros((len(active), n))
    bounds[np.arange(len(active)), list(active)] = 1.0
    return np.vstack([problem.conservation.matrix, pins, bounds])


def constraint_values(problem: NlpProblem, x: np.ndarray, active: Sequence[int]) -> np.ndarray:
    return np.concatenate([
        problem.conservation.residual(x),
        x[list(problem.pins.indices)] - problem.r,
        x[list(active)],
    ])


def assemble(problem: NlpProblem, x: np.ndarray, active: ActiveSetState | Sequence[int] = ()) -> Residuals:
    act = tuple(active.active if isinstance(active, ActiveSetState) else active)
    x = np.asarray(x, dtype=float)
    f1, j1, s, j = _objective_parts(problem.mechanism, x)
    sc = problem.objective_scale
    return Residuals(
        x=x.copy(), F1=sc * f1, J1=sc * j1,
        F2=constraint_values(problem, x, act), J2=constraint_rows(problem, act),
        n_conservation=problem.conservation.n_rows, n_pins=len(problem.pins.indices),
        active=act, source=s, jac=j,
    )


def hessian_term(problem: NlpProblem, x: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Second-order term (D_x J1^T) w of the scaled objective, full space.

    Complex-step differentiation of the closed-form J1^T w; exact to rounding.
    """
    n = problem.n
    sc = problem.objective_scale
    out = np.empty((n, n))
    for k in range(n):
        step = 1e-30 * max(1.0, abs(x[k]))
        xc = x.astype(complex)
        xc[k] += 1j * step
        out[:, k] = (sc * objective_jacobian(problem.mechanism, xc)).T.dot(weights).imag / step
    return 0.5 * (out + out.T)


# ----------------------------------------------------------------------------
# linear algebra


def _equilibrate(K: np.ndarray) -> np.ndarray:
    d = np.ones(K.shape[0])
    for _ in range(3):
        rows = np.max(np.abs(K * d[:, None] * d[None, :]), axis=1)
        rows[rows == 0] = 1.0
        d /= np.sqrt(rows)
    return d


def solve_kkt(H: np.ndarray, g: np.ndarray, A: np.ndarray, c: np.ndarray,
              cond_max: float = 1e14) -> tuple[np.ndarray, np.ndarray]:
    """Solve [H A^T; A 0][d; -lam] = -[g; c] by a symmetric-indefinite factorization.

    Returns (d, lam). ``g`` and ``c`` may carry several right-hand-side columns.
    """
    n, m = H.shape[0], A.shape[0]
    K = np.zeros((n + m, n + m))
    K[:n, :n] = H
    K[:n, n:] = A.T
    K[n:, :n] = A
    rhs = -np.concatenate([np.asarray(g), np.asarray(c)], axis=0)
    d = _equilibrate(K)
    Ks = K * d[:, None] * d[None, :]
    cond = np.linalg.cond(Ks)
    if not np.isfinite(cond) or cond > cond_max:
        raise SingularKKTError(f"KKT matrix condition estimate {cond:.3e}")
    sol = scipy.linalg.solve(Ks, (rhs.T * d).T, assume_a="sym", check_finite=False)
    sol = (sol.T * d).T
    return sol[:n], -sol[n:]


def solve_clls(res: Residuals, free: Sequence[int] | None = None, cond_max: float = 1e14):
    """Increment and multipliers of the linearized least-squares subproblem.

    ``free`` restricts the variables (pins eliminated); pin rows are then
    dropped from the constraints. Returns (d, lam) with d over ``free``.
    """
    if free is None:
        J1, J2, F2 = res.J1, res.J2, res.F2
    else:
        free = np.asarray(free)
        keep = np.r_[np.arange(res.n_conservation),
                     res.n_conservation + res.n_pins + np.arange(len(res.active))]
        J1, J2, F2 = res.J1[:, free], res.J2[np.ix_(keep, free)], res.F2[keep]
    return solve_kkt(J1.T @ J1, J1.T @ res.F1, J2, F2, cond_max)


def soc_step(res: Residuals, constraint_trial: np.ndarray, free: Sequence[int] | None = None):
    """Minimum-norm correction for F2(x + d) + J2 dc = 0, or None if J2 is rank deficient.

    ``constraint_trial`` is F2 evaluated at the trial point in the same row
    layout as ``res.F2`` (or its reduced layout when ``free`` is given).
    """
    J2 = res.J2
    if free is not None:
        keep = np.r_[np.arange(res.n_conservation),
                     res.n_conservation + res.n_pins + np.arange(len(res.active))]
        J2 = J2[np.ix_(keep, np.asarray(free))]
    if J2.shape[0] == 0:
        return np.zeros(J2.shape[1])
    q, rr = np.linalg.qr(J2.T)
    diag = np.abs(np.diag(rr))
    if diag.min() <= 1e-12 * max(diag.max(), 1.0):
        return None
    y = scipy.linalg.solve_triangular(rr, -np.asarray(constraint_trial), trans="T")
    return q @ y


# ----------------------------------------------------------------------------
# correctors


def _reduced_rows(problem: NlpProblem, active: Sequence[int]) -> np.ndarray:
    free = problem.free
    A = constraint_rows(problem, active)
    keep = np.r_[np.arange(problem.conservation.n_rows),
                 problem.conservation.n_rows + len(problem.pins.indices) + np.arange(len(active))]
    return A[np.ix_(keep, free)]


def _reduced_constraints(problem: NlpProblem, x: np.ndarray, active: Sequence[int]) -> np.ndarray:
    return np.concatenate([problem.conservation.residual(x), x[list(active)]])


def _merit(problem: NlpProblem, x: np.ndarray, active: Sequence[int]):
    f1, j1, s, j = _objective_parts(problem.mechanism, x)
    f1 = problem.objective_scale * f1
    theta = float(np.abs(_reduced_constraints(problem, x, active)).sum())
    return theta, 0.5 * float(f1 @ f1)


def restore_feasibility(problem: NlpProblem, x: np.ndarray, filter: FilterState | None = None,
                        active: Sequence[int] = (), options: SolverOptions = SolverOptions(),
                        max_iter: int = 50):
    """Closest feasible point to ``x`` by Gauss-Newton on min 1/2||xb - x||^2 s.t. F2(xb) = 0.

    Bounds that the projection would violate are added to the active set.
    Returns (xb, active). Raises RuntimeError if it stalls.
    """
    x = np.asarray(x, dtype=float)
    act = list(active)
    n = problem.n
    xb = x.copy()
    eye = np.eye(n)
    for _ in range(max_iter):
        F2 = constraint_values(problem, xb, act)
        if np.max(np.abs(F2), initial=0.0) < options.tol_feas and np.all(xb >= -NEGATIVE_SLACK):
            xb[list(act)] = 0.0
            xb[list(problem.pins.indices)] = problem.r
            if filter is not None and not filter.acceptable(*_merit(problem, xb, act)):
                raise RuntimeError("restored point not acceptable to the filter")
            return xb, tuple(sorted(act))
        J2 = constraint_rows(problem, act)
        d, _ = solve_kkt(eye, xb - x, J2, F2, options.cond_max)
        xb = xb + d
        negative = [i for i in np.flatnonzero(xb < -NEGATIVE_SLACK) if i not in act
                    and i not in problem.pins.indices]
        act.extend(sorted(negative))
    raise RuntimeError("feasibility restoration stalled")


def ggn_solve(problem: NlpProblem, x0: np.ndarray, options: SolverOptions = SolverOptions(),
              active0: Sequence[int] | None = None) -> KktSolution:
    """Generalized Gauss-Newton corrector with filter line search."""
    return _solve(problem, x0, options, newton=False, active0=active0)


def newton_kkt_solve(problem: NlpProblem, x0: np.ndarray, lam0: np.ndarray | None = None,
                     options: SolverOptions = SolverOptions(),
                     active0: Sequence[int] | None = None) -> KktSolution:
    """Newton's method on the KKT conditions with the exact Lagrangian Hessian.

    The constraints are affine, so the Hessian reduces to
    J1^T J1 + (D_x J1^T) F1 and the multiplier estimate ``lam0`` does not
    enter the step; it is accepted for interface symmetry.
    """
    return _solve(problem, x0, options, newton=True, active0=active0)


def _positive_definite_on_nullspace(H: np.ndarray, A: np.ndarray) -> bool:
    Z = scipy.linalg.null_space(A) if A.shape[0] else np.eye(H.shape[0])
    if Z.shape[1] == 0:
        return True
    return bool(np.linalg.eigvalsh(Z.T @ H @ Z).min() > 0)


def _solve(problem: NlpProblem, x0, options: SolverOptions, newton: bool,
           active0: Sequence[int] | None) -> KktSolution:
    mech = problem.mechanism
    sc = problem.objective_scale
    free = problem.free
    pos = {int(i): k for k, i in enumerate(free)}
    n_cons = problem.conservation.n_rows

    x = problem.substitute(np.maximum(np.asarray(x0, dtype=float), 0.0))
    if active0 is None:
        active = sorted(int(i) for i in free if x[i] == 0.0)
    else:
        active = sorted(int(i) for i in active0 if i in pos)
        x[active] = 0.0

    # optional diagonal variable scaling of the termination test
    weights = None
    if options.scaling:
        weights = 1.0 / np.maximum(np.abs(x[free]), 1e-3 * max(1.0, float(np.max(np.abs(x)))))

    theta0, _ = _merit(problem, x, active)
    theta_max = 1e4 * max(1.0, theta0)
    theta_min = 1e-4 * max(1.0, theta0)
    filt = FilterState(options.gamma_theta, options.gamma_f)
    filt.entries.append((theta_max, -math.inf))

    records: list[IterationRecord] = []
    step_norms: list[float] = []
    status = FAILED_MAXITER
    used_restoration = False
    lam = np.zeros(n_cons)
    mu_rows = np.zeros(0)
    iterations = 0
    eps = np.finfo(float).eps

    while iterations < options.max_iter:
        f1, j1, s, j = _objective_parts(mech, x)
        F1, J1 = sc * f1, sc * j1[:, free]
        g = J1.T @ F1
        H = J1.T @ J1
        flags: list[str] = []
        if newton:
            Hn = (H + hessian_term(problem, x, F1)[np.ix_(free, free)])
        # active-set loop: release bounds with negative multipliers
        while True:
            A = _reduced_rows(problem, active)
            c = _reduced_constraints(problem, x, active)
            Hk = H
            if newton:
                if _positive_definite_on_nullspace(Hn, A):
                    Hk = Hn
                else:
                    flags.append("ggn_fallback")
            try:
                d, lam_rows = solve_kkt(Hk, g, A, c, options.cond_max)
            except SingularKKTError:
                status = FAILED_SINGULAR
                break
            mu_rows = lam_rows[n_cons:]
            if mu_rows.size and mu_rows.min() < options.mu_release:
                k = int(np.argmin(mu_rows))
                flags.append(f"release:{active[k]}")
                active.pop(k)
                continue
            lam = lam_rows[:n_cons]
            break
        if status == FAILED_SINGULAR:
            break
        iterations += 1

        theta, f = _merit(problem, x, active)
        d_norm = float(np.max(np.abs(d), initial=0.0))
        if weights is None:
            tol = max(options.tol_abs, options.tol_rel * float(np.max(np.abs(x))))
            conv_norm = d_norm
        else:
            tol = max(options.tol_abs, options.tol_rel)
            conv_norm = float(np.max(np.abs(d * weights), initial=0.0))
        if conv_norm < tol and theta < options.tol_feas:
            x[free] += d
            x[active] = 0.0
            step_norms.append(float(np.linalg.norm(d)))
            records.append(IterationRecord(iterations, theta, f, d_norm, 1.0, tuple(active),
                                           tuple(flags + ["converged"]), filt.snapshot()))
            status = RESTORATION_USED if used_restoration else CONVERGED
            break

        # fraction to the boundary
        inactive_free = [i for i in free if i not in active]
        t_max, blocking = 1.0, None
        for i in inactive_free:
            di = d[pos[i]]
            if di < 0 and x[i] + di < 0:
                ti = x[i] / -di
                if ti < t_max:
                    t_max, blocking = ti, i
        slope = float(g @ d)
        t = t_max
        soc_tried = False
        accepted = None
        while True:
            trial = x.copy()
            trial[free] += t * d
            new_active = list(active)
            if blocking is not None and t == t_max:
                trial[blocking] = 0.0
                new_active = sorted(active + [blocking])
            trial[new_active] = 0.0
            theta_t, f_t = _merit(problem, trial, active)
            verdict = _accept(filt, theta, f, theta_t, f_t, t * slope, t, theta_max,
                              theta_min, options)
            if verdict is None and abs(f_t - f) <= 10 * eps * abs(f) and theta_t <= theta:
                verdict = "roundoff"
            if verdict is not None:
                accepted = (trial, new_active, t, verdict)
                break
            if not soc_tried and t == t_max and theta > 0:
                soc_tried = True
                dc = soc_step(_pseudo_res(A, n_cons), _reduced_constraints(problem, trial, active))
                if dc is not None:
                    trial_soc = trial.copy()
                    trial_soc[free] += dc
                    if np.all(trial_soc >= -NEGATIVE_SLACK):
                        theta_s, f_s = _merit(problem, trial_soc, active)
                        verdict = _accept(filt, theta, f, theta_s, f_s, t * slope, t, theta_max,
                                          theta_min, options)
                        if verdict is not None:
                            accepted = (trial_soc, new_active, t, verdict + "+soc")
                            break
            t *= options.backtrack
            if t < options.t_min:
                break

        if accepted is None:
            try:
                x_new, act_new = restore_feasibility(problem, x, filt, active, options)
            except (RuntimeError, SingularKKTError):
                status = FAILED_RESTORATION
                records.append(IterationRecord(iterations, theta, f, d_norm, 0.0, tuple(active),
                                               tuple(flags + ["restoration_failed"]), filt.snapshot()))
                break
            if np.array_equal(x_new, x):
                status = FAILED_RESTORATION
                records.append(IterationRecord(iterations, theta, f, d_norm, 0.0, tuple(active),
                                               tuple(flags + ["restoration_stalled"]), filt.snapshot()))
                break
            used_restoration = True
            filt.add(theta, f)
            step_norms.append(float(np.linalg.norm(x_new - x)))
            theta_n, f_n = _merit(problem, x_new, act_new)
            records.append(IterationRecord(iterations, theta_n, f_n, d_norm, 0.0, tuple(act_new),
                                           tuple(flags + ["restoration"]), filt.snapshot()))
            x, active = x_new, list(act_new)
            continue

        trial, new_active, t, verdict = accepted
        snapshot = filt.snapshot()
        if verdict.startswith("filter"):
            filt.add(theta, f)
        theta_t, f_t = _merit(problem, trial, new_active)
        flags.append(verdict)
        if new_active != active:
            flags.append(f"activate:{blocking}")
        step_norms.append(float(np.linalg.norm((trial - x)[free])))
        records.append(IterationRecord(iterations, theta_t, f_t, d_norm, t, tuple(new_active),
                                       tuple(flags), snapshot))
        x, active = trial, new_active

    x = problem.substitute(x)
    x[active] = 0.0
    mu = np.zeros(problem.n)
    if status in OK_STATUSES:
        mu[active] = mu_rows
    stat, feas = kkt_residuals(problem, x, lam, mu, active)
    if status in OK_STATUSES:
        log.debug("corrector converged in %d iterations (stationarity %.2e)", iterations, stat)
    else:
        log.info("corrector stopped with %s after %d iterations", status, iterations)
    return KktSolution(x=x, lam=lam, mu=mu, active=tuple(active), kkt_residual=stat,
                       feasibility=feas, iterations=iterations, status=status,
                       step_norms=step_norms, log=records, r=problem.r.copy())


def _pseudo_res(A: np.ndarray, n_cons: int) -> Residuals:
    empty = np.zeros(0)
    return Residuals(x=empty, F1=empty, J1=np.zeros((0, A.shape[1])), F2=np.zeros(A.shape[0]),
                     J2=A, n_conservation=A.shape[0], n_pins=0, active=(), source=empty,
                     jac=np.zeros((0, 0)))


def _accept(filt: FilterState, theta, f, theta_t, f_t, model_decrease, t, theta_max,
            theta_min, options: SolverOptions) -> str | None:
    if theta_t > theta_max or not filt.acceptable(theta_t, f_t):
        return None
    switching = (model_decrease < 0 and theta <= theta_min and
                 (-model_decrease) ** options.switch_s_f * t ** (1 - options.switch_s_f)
                 > options.switch_delta * theta ** options.switch_s_theta)
    if switching:
        if f_t <= f + options.armijo * model_decrease:
            return "armijo"
        return None
    if theta_t <= (1 - options.gamma_theta) * theta or f_t <= f - options.gamma_f * theta:
        return "filter"
    return None


def kkt_residuals(problem: NlpProblem, x: np.ndarray, lam: np.ndarray, mu: np.ndarray,
                  active: Sequence[int]) -> tuple[float, float]:
    """(stationarity, feasibility) infinity norms over the free variables."""
    free = problem.free
    f1, j1, _, _ = _objective_parts(problem.mechanism, x)
    sc = problem.objective_scale
    grad = (sc * j1).T @ (sc * f1)
    resid = grad - problem.conservation.matrix.T @ lam - mu
    stat = float(np.max(np.abs(resid[free])))
    feas = float(np.max(np.abs(constraint_values(problem, x, active)), initial=0.0))
    return stat, feas


def stationarity_scale(problem: NlpProblem, x: np.ndarray) -> float:
    f1, j1, _, _ = _objective_parts(problem.mechanism, x)
    sc = problem.objective_scale
    return max(1.0, float(np.max(np.abs((sc * j1).T @ (sc * f1))[problem.free])))


# ----------------------------------------------------------------------------
# landscapes


def complete_state(conservation: ConservationSystem, fixed: Mapping[int, float]) -> np.ndarray:
    """Fill in the unfixed components from the conservation rows.

    The number of unfixed components must equal the number of conservation
    rows and the corresponding sub-matrix must be nonsingular.
    """
    n = conservation.matrix.shape[1]
    fixed_idx = sorted(fixed)
    rest = [i for i in range(n) if i not in fixed]
    if len(rest) != conservation.n_rows:
        raise ValueError(f"{len(rest)} unfixed components for {conservation.n_rows} conservation rows")
    z = np.zeros(n)
    z[fixed_idx] = [fixed[i] for i in fixed_idx]
    sub = conservation.matrix[:, rest]
    if np.linalg.matrix_rank(sub) < len(rest):
        raise ValueError("unfixed components are not determined by the conservation rows")
    z[rest] = np.linalg.solve(sub, conservation.totals - conservation.matrix[:, fixed_idx] @ z[fixed_idx])
    return z


@dataclass
class Landscape:
    names: tuple[str, ...]
    coords: np.ndarray  # (points, scanned coordinates)
    states: np.ndarray  # (points, n)
    phi: np.ndarray
    valid: np.ndarray
    shape: tuple[int, ...]


def landscape_scan(mech: Mechanism, conservation: ConservationSystem, fixed: Mapping[str, float],
                   scan: Mapping[str, Sequence[float]], positivity: bool = True) -> Landscape:
    """Tabulate ||J_S S||^2 over a grid of scanned coordinates.

    Remaining components are completed from the conservation rows. Cells whose
    completion has negative components are flagged invalid; their value is NaN
    unless ``positivity`` is False, in which case the rate law is evaluated as
    written (polynomial continuation into the negative orthant).
    """
    names = tuple(scan)
    axes = [np.asarray(scan[name], dtype=float) for name in names]
    shape = tuple(len(a) for a in axes)
    coords = np.array(list(itertools.product(*axes))).reshape(-1, len(names))
    fixed_idx = {mech.index(k): float(v) for k, v in fixed.items()}
    scan_idx = [mech.index(name) for name in names]
    states = np.empty((len(coords), mech.n_species))
    phi = np.full(len(coords), np.nan)
    valid = np.zeros(len(coords), dtype=bool)
    for k, point in enumerate(coords):
        spec = dict(fixed_idx)
        spec.update(zip(scan_idx, point))
        z = complete_state(conservation, spec)
        states[k] = z
        valid[k] = bool(np.all(z >= -NEGATIVE_SLACK))
        if valid[k] or not positivity:
            s, j, _ = _kinetics(mech, z)
            phi[k] = float(np.sum((j @ s) ** 2))
    return Landscape(names, coords, states, phi, valid, shape)


def interior_minima(values: np.ndarray) -> list[int]:
    """Indices of strict interior local minima of a 1-D sequence (NaN-aware)."""
    v = np.asarray(values)
    out = []
    for i in range(1, len(v) - 1):
        if np.isfinite(v[i - 1:i + 2]).all() and v[i] < v[i - 1] and v[i] < v[i + 1]:
            out.append(i)
    return out
