"""Stiff integration of the kinetic ODE and relaxation to equilibrium."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp

from .kinetics import ConservationSystem, Mechanism, source_and_jacobian, source_term


class IntegrationError(RuntimeError):
    pass


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (len(times), n)
    t0: float
    tf: float
    species: tuple[str, ...] = ()

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def to_csv(self, path: str | Path) -> None:
        names = self.species or tuple(f"z{i}" for i in range(self.states.shape[1]))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t [s]"] + [f"{s} [mol/kg]" for s in names])
            for t, z in zip(self.times, self.states):
                w.writerow([repr(float(t))] + [f"{v:.17g}" for v in z])


def integrate(mech: Mechanism, z0, t_span, tol: float = 1e-8, t_eval=None) -> Trajectory:
    """Integrate dz/dt = S(z) with the L-stable Radau IIA method and the analytic Jacobian.

    Components that end up below zero by roundoff are clipped to zero; larger
    excursions are reported as errors.
    """
    z0 = np.asarray(z0, dtype=float)
    if np.any(z0 < 0):
        raise ValueError("initial state must be non-negative")
    t0, tf = (float(t) for t in t_span)
    if not (np.isfinite(t0) and np.isfinite(tf)) or tf <= t0:
        raise ValueError("t_span must be finite and increasing")

    atol = tol * 1e-2 * max(1.0, float(np.max(z0)))
    sol = solve_ivp(lambda t, z: source_term(mech, z), (t0, tf), z0, method="Radau",
                    jac=lambda t, z: source_and_jacobian(mech, z)[1],
                    rtol=tol, atol=atol, t_eval=t_eval, first_step=min(1e-10, tf - t0))
    if not sol.success:
        raise IntegrationError(sol.message)
    states = sol.y.T
    if np.min(states) < -10 * atol:
        raise IntegrationError(f"state left the non-negative orthant ({np.min(states):.3e})")
    states = np.where(states < 0, 0.0, states)
    times = sol.t
    keep = np.concatenate([[True], np.diff(times) > 0])
    return Trajectory(times[keep], states[keep], t0, tf, mech.species)


def _polish(mech: Mechanism, cons: ConservationSystem, z: np.ndarray, max_iter: int = 50) -> np.ndarray:
    """Damped Newton on S(z) = 0 within the affine conservation subspace."""

    def residual(y):
        s = source_term(mech, y)
        return np.concatenate([s, cons.matrix @ y - cons.totals])

    r = residual(z)
    for _ in range(max_iter):
        s, jac = source_and_jacobian(mech, z)
        A = np.vstack([jac, cons.matrix])
        step = np.linalg.lstsq(A, -r, rcond=None)[0]
        t = 1.0
        while True:
            trial = z + t * step
            if np.all(trial >= 0):
                r_trial = residual(trial)
                if np.linalg.norm(r_trial) <= np.linalg.norm(r) or t < 1e-6:
                    break
            t *= 0.5
            if t < 1e-12:
                return z
        z, r = trial, r_trial
        if np.max(np.abs(t * step)) <= 1e-15 * np.max(np.abs(z)):
            break
    return z


def relax_to_equilibrium(mech: Mechanism, cons: ConservationSystem, z0, t_max: float = 1.0,
                         tol: float = 1e-10) -> np.ndarray:
    """Equilibrium reached from ``z0`` under the kinetics, refined by Newton."""
    z = np.asarray(z0, dtype=float)
    if np.max(np.abs(cons.residual(z))) > 1e-8 * max(1.0, float(np.max(np.abs(cons.totals)))):
        raise ValueError("initial state violates the conservation relations")
    rate = max(float(np.max(np.abs(source_term(mech, z)))), 1e-300)
    t, horizon = 0.0, 1e-7
    while float(np.max(np.abs(source_term(mech, z)))) >= tol * rate:
        if t >= t_max:
            raise IntegrationError("no equilibrium within the time budget")
        z = integrate(mech, z, (t, t + horizon), tol=1e-9).final
        t += horizon
        horizon *= 4
        # hand over to Newton once the state is in the basin
        if float(np.max(np.abs(source_term(mech, z)))) < 1e-4 * rate:
            break
    z = _polish(mech, cons, z)
    if float(np.max(np.abs(source_term(mech, z)))) >= tol * rate:
        raise IntegrationError("equilibrium polish did not converge")
    return z
