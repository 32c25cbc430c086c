"""First-order parameter sensitivities of converged KKT points."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nlp import (
    KktSolution,
    NlpProblem,
    SingularKKTError,
    _objective_parts,
    constraint_rows,
    hessian_term,
    solve_kkt,
)

COMPLEMENTARITY_THRESHOLD = 1e-10


class SensitivityUnavailable(RuntimeError):
    pass


@dataclass(frozen=True)
class SensitivityMatrix:
    """Derivatives of the solution with respect to the pinned values.

    ``dlam_dr`` covers the conservation rows followed by the pin rows;
    ``dmu_dr`` the active bounds in the order of ``active``.
    """

    dx_dr: np.ndarray
    dlam_dr: np.ndarray
    dmu_dr: np.ndarray
    active: tuple[int, ...]
    pins: tuple[int, ...]
    residual: float


def kkt_sensitivities(problem: NlpProblem, sol: KktSolution, cond_max: float = 1e14) -> SensitivityMatrix:
    if not sol.ok:
        raise SensitivityUnavailable(f"solution status is {sol.status}")
    active = tuple(sol.active)
    if active and np.min(sol.mu[list(active)]) <= COMPLEMENTARITY_THRESHOLD:
        raise SensitivityUnavailable("strict complementarity violated on an active bound")

    x = sol.x
    n = problem.n
    sc = problem.objective_scale
    f1, j1, _, _ = _objective_parts(problem.mechanism, x)
    F1, J1 = sc * f1, sc * j1
    hess = J1.T @ J1 + hessian_term(problem, x, F1)
    A = constraint_rows(problem, active)
    n_cons, n_r = problem.conservation.n_rows, len(problem.pins.indices)

    # d/dr of the pin rows x_j - r is -I; all other rows are independent of r
    dr_rows = np.zeros((A.shape[0], n_r))
    dr_rows[n_cons:n_cons + n_r] = -np.eye(n_r)
    g = np.zeros((n, n_r))

    try:
        dx, dlam = solve_kkt(hess, g, A, dr_rows, cond_max)
    except SingularKKTError as exc:
        raise SensitivityUnavailable(str(exc)) from exc

    lhs_top = hess @ dx - A.T @ dlam
    lhs_bot = A @ dx + dr_rows
    scale = max(1.0, float(np.abs(dr_rows).max()))
    residual = float(max(np.abs(lhs_top).max(), np.abs(lhs_bot).max())) / scale

    dx[list(problem.pins.indices)] = np.eye(n_r)
    dx[list(active)] = 0.0
    n_act = len(active)
    return SensitivityMatrix(dx, dlam[:n_cons + n_r], dlam[n_cons + n_r:n_cons + n_r + n_act],
                             active, tuple(problem.pins.indices), residual)


def tangent_predict(sol: KktSolution, sens: SensitivityMatrix, r_new) -> np.ndarray:
    """Linear extrapolation of the solution to new pinned values."""
    r_new = np.asarray(r_new, dtype=float)
    z = sol.x + sens.dx_dr @ (r_new - sol.r)
    z[list(sens.pins)] = r_new
    return z


def tangent_predict_multipliers(sol: KktSolution, sens: SensitivityMatrix, r_new) -> np.ndarray:
    n_cons = sol.lam.size
    return sol.lam + sens.dlam_dr[:n_cons] @ (np.asarray(r_new, dtype=float) - sol.r)
