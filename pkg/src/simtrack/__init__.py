"""Slow invariant manifold approximation by constrained least squares and continuation."""

from .kinetics import Mechanism, ConservationSystem, load_mechanism, parse_mechanism
from .nlp import NlpProblem, SolverOptions, KktSolution, ggn_solve, newton_kkt_solve
from .sensitivity import SensitivityMatrix, kkt_sensitivities
from .continuation import ContinuationConfig, PathPoint, continue_to, sweep_grid

__all__ = [
    "Mechanism", "ConservationSystem", "load_mechanism", "parse_mechanism",
    "NlpProblem", "SolverOptions", "KktSolution", "ggn_solve", "newton_kkt_solve",
    "SensitivityMatrix", "kkt_sensitivities",
    "ContinuationConfig", "PathPoint", "continue_to", "sweep_grid",
]
