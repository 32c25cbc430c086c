import numpy as np
import pytest

from simtrack.continuation import ContinuationConfig, solve_anchor
from simtrack.kinetics import load_mechanism
from simtrack.nlp import NlpProblem, ggn_solve
from simtrack.odeint import relax_to_equilibrium

# reference solution column for the H2O = 3 mol/kg instance (order O, H2, H, OH, H2O, N2)
REFERENCE_SOLUTION = np.array([0.34563763, 2.0281615, 1.5193606, 0.76437637, 3.0, 32.905130])


@pytest.fixture(scope="session")
def mech():
    return load_mechanism()


@pytest.fixture(scope="session")
def problem(mech):
    return NlpProblem.build(mech, {"H2O": 3.0})


@pytest.fixture(scope="session")
def golden(mech, problem):
    return ggn_solve(problem, mech.anchor)


@pytest.fixture(scope="session")
def anchor_point(mech, problem):
    return solve_anchor(problem, mech.anchor, ContinuationConfig())


@pytest.fixture(scope="session")
def equilibrium(mech, problem):
    return relax_to_equilibrium(mech, problem.conservation, mech.anchor)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_RESULTS: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS, key=lambda k: int(k.split()[0])):
        ok, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {key}: {detail}")
