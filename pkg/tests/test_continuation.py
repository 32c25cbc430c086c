import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from simtrack.continuation import (
    LINEAR,
    ContinuationConfig,
    CorrectorStats,
    PathFailure,
    StepSizeState,
    adapt_step,
    continue_to,
    euler_predict,
    grid_point_feasible,
    linear_step_query,
    parse_grid,
    solve_anchor,
    sweep_grid,
)
from simtrack.nlp import NlpProblem, SolverOptions, ggn_solve

SWEEP_1D = np.arange(4.0, -0.125, -0.25)
GRID_H2O = np.array([0.001] + [0.5 * k for k in range(1, 12)])
GRID_H2 = np.array([0.001] + [0.5 * k for k in range(1, 9)])


@pytest.fixture(scope="module")
def sweep_euler(anchor_point, problem):
    return sweep_grid(anchor_point, problem, [SWEEP_1D], ContinuationConfig())


@pytest.fixture(scope="module")
def problem2(mech):
    return NlpProblem.build(mech, {"H2O": 3.0, "H2": 2.0279732})


@pytest.fixture(scope="module")
def anchor2(mech, problem2):
    return solve_anchor(problem2, mech.anchor)


class TestGridSpec:
    def test_range(self):
        np.testing.assert_allclose(parse_grid("4.0:-0.25:17"), SWEEP_1D)

    def test_list(self):
        np.testing.assert_array_equal(parse_grid("[0.001, 0.5,1]"), [0.001, 0.5, 1.0])

    def test_scalar(self):
        np.testing.assert_array_equal(parse_grid("3"), [3.0])

    @pytest.mark.parametrize("bad", ["1:2", "1:0.5:0", "[1,2", "a:b:c"])
    def test_malformed(self, bad):
        with pytest.raises(ValueError):
            parse_grid(bad)


class TestEulerPredictor:
    def test_zero_step(self, anchor_point):
        x0, lam0 = euler_predict(anchor_point, [2.0], h=0.0)
        np.testing.assert_array_equal(x0, anchor_point.x)
        np.testing.assert_array_equal(lam0, anchor_point.solution.lam)

    @given(st.floats(0.0, 1.0))
    def test_same_parameter(self, anchor_point, h):
        x0, _ = euler_predict(anchor_point, anchor_point.r, h=h)
        np.testing.assert_array_equal(x0, anchor_point.x)

    def test_constant_fallback_sets_pins(self, anchor_point):
        x0, _ = euler_predict(anchor_point, [2.0], predictor="constant")
        assert x0[4] == 2.0
        np.testing.assert_array_equal(np.delete(x0, 4), np.delete(anchor_point.x, 4))

    def test_clipped_nonnegative(self, anchor_point):
        x0, _ = euler_predict(anchor_point, [0.0])
        assert np.all(x0 >= 0)

    def test_fewer_iterations_than_constant(self, anchor_point, problem, sweep_euler):
        const = sweep_grid(anchor_point, problem, [SWEEP_1D], ContinuationConfig(predictor="constant"))
        assert sweep_euler.total_iterations < const.total_iterations


class TestStepController:
    def test_fixed_point(self):
        for model in ("linear", "quadratic"):
            state = StepSizeState(h=0.3, k_desired=6, model=model)
            a0 = 1e-2
            a1 = 0.1 * a0 if model == "linear" else 10.0 * a0**2
            assert adapt_step(state, CorrectorStats(6, a0, a1)) == pytest.approx(0.3, rel=1e-12)

    def test_many_iterations_shrink(self):
        for model in ("linear", "quadratic"):
            state = StepSizeState(h=0.5, model=model)
            assert adapt_step(state, CorrectorStats(40, 1e-2, 5e-3)) < 0.5

    def test_few_iterations_grow_with_clamp(self):
        state = StepSizeState(h=0.3)
        assert adapt_step(state, CorrectorStats(3, 1e-3, 1e-5)) == pytest.approx(0.6)

    def test_single_iteration_grows(self):
        state = StepSizeState(h=0.7)
        assert adapt_step(state, CorrectorStats(1, 1e-12, 0.0)) == 1.0

    def test_bounds(self):
        state = StepSizeState(h=2e-3, h_min=1e-3)
        assert adapt_step(state, CorrectorStats(200, 1.0, 0.99)) == 1e-3
        with pytest.raises(ValueError):
            StepSizeState(k_desired=1)

    def test_jump_inserts_intermediate(self, anchor_point, problem):
        path = continue_to(anchor_point, [0.5], problem, ContinuationConfig(mode="adaptive"))
        assert path[-1].r[0] == 0.5
        inner = [p.r[0] for p in path[:-1]]
        assert inner and all(0.5 < r < 3.0 for r in inner)
        full = continue_to(anchor_point, [0.5], problem, ContinuationConfig())
        adaptive_total = sum(p.stats.iterations for p in path)
        assert adaptive_total <= 2 * full[0].stats.iterations


class TestContinueTo:
    def test_same_target(self, anchor_point, problem):
        assert continue_to(anchor_point, anchor_point.r, problem, ContinuationConfig()) == [anchor_point]

    def test_points_are_kkt(self, anchor_point, problem):
        for mode in ("full", "adaptive"):
            for p in continue_to(anchor_point, [1.5], problem, ContinuationConfig(mode=mode)):
                assert p.solution.ok
                assert p.solution.kkt_residual < 1e-8
                assert p.x[4] == p.r[0]

    def test_failure_carries_last_good(self, anchor_point, problem):
        cfg = ContinuationConfig(solver=SolverOptions(max_iter=1))
        with pytest.raises(PathFailure) as info:
            continue_to(anchor_point, [1.0], problem, cfg)
        assert info.value.last_good is anchor_point

    def test_newton_corrector(self, anchor_point, problem):
        p = continue_to(anchor_point, [2.5], problem, ContinuationConfig(corrector="newton"))[-1]
        ref = ggn_solve(problem.with_values([2.5]), anchor_point.x)
        assert np.abs(p.x - ref.x).max() < 1e-8


class TestLinearStep:
    def test_zero_distance(self, anchor_point):
        np.testing.assert_array_equal(linear_step_query(anchor_point, anchor_point.r, 1.1), anchor_point.x)

    def test_outside_radius(self, anchor_point):
        assert linear_step_query(anchor_point, [1.5], 1.1) is None

    def test_three_solves(self, anchor_point, problem):
        res = sweep_grid(anchor_point, problem, [SWEEP_1D], ContinuationConfig(mode="linear", eps_tol=1.1))
        corrected = sorted(p.r[0] for p in res.points if p.status != LINEAR)
        assert corrected == [0.5, 1.75]  # plus the anchor solve at 3.0
        assert res.failures == 0

    def test_error_grows_quadratically(self, anchor_point, problem):
        ratios = []
        for delta in (0.25, 0.5, 1.0):
            exact = ggn_solve(problem.with_values([3.0 - delta]), anchor_point.x).x
            err = np.linalg.norm(exact - linear_step_query(anchor_point, [3.0 - delta], 1.1))
            ratios.append(err / delta**2)
        assert max(ratios) / min(ratios) < 2.0


class TestSweep:
    def test_one_dimensional(self, sweep_euler):
        assert len(sweep_euler.points) == 17
        assert sweep_euler.failures == 0
        assert sweep_euler.total_iterations <= 150
        assert sweep_euler.total_iterations / 17 <= 9

    def test_path_is_lipschitz(self, sweep_euler):
        # increments bounded by the local tangents, so no jump to another branch
        pts = sorted((p for p in sweep_euler.points if p.r[0] > 0), key=lambda p: p.r[0])
        for a, b in zip(pts, pts[1:]):
            slope = max(np.linalg.norm(a.tangent), np.linalg.norm(b.tangent))
            assert np.linalg.norm(b.x - a.x) <= slope * abs(b.r[0] - a.r[0])

    def test_continuous_at_water_free_end(self, sweep_euler, problem):
        # H2 and OH vanish like a square root as H2O -> 0, so only continuity holds there
        end = next(p for p in sweep_euler.points if p.r[0] == 0.0)
        gaps = []
        for r in (1e-2, 1e-4, 1e-6):
            sol = ggn_solve(problem.with_values([r]), end.x)
            assert sol.ok
            gaps.append(np.linalg.norm(sol.x - end.x))
        assert gaps[0] > gaps[1] > gaps[2]
        assert gaps[2] < 1e-2

    def test_tangents_recorded(self, sweep_euler):
        for p in sweep_euler.points:
            assert p.tangent is not None and p.tangent[4, 0] == 1.0

    def test_degenerate_grid(self, anchor_point, problem):
        res = sweep_grid(anchor_point, problem, [[3.0]])
        assert len(res.points) == 1
        assert res.total_iterations <= 1

    def test_feasibility_filter(self, problem2):
        feasible = [(a, b) for a in GRID_H2O for b in GRID_H2
                    if grid_point_feasible(problem2, np.array([a, b]))]
        assert len(feasible) == 71
        # O balance caps water, H balance caps water plus molecular hydrogen
        totals = problem2.conservation.totals
        for a, b in feasible:
            assert a <= totals[1] and 2 * a + 2 * b <= totals[0]

    def test_two_dimensional(self, anchor2, problem2, equilibrium):
        euler = sweep_grid(anchor2, problem2, [GRID_H2O, GRID_H2], ContinuationConfig())
        const = sweep_grid(anchor2, problem2, [GRID_H2O, GRID_H2], ContinuationConfig(predictor="constant"))
        assert len(euler.points) == len(const.points) == 71
        assert euler.total_iterations < 0.97 * const.total_iterations
        for p in euler.points:
            if p.status not in ("converged", "restoration_used"):
                assert p.r[0] > equilibrium[4]

    def test_parallel_rows_match(self, anchor2, problem2):
        axes = [GRID_H2O[4:8], GRID_H2[2:6]]
        serial = sweep_grid(anchor2, problem2, axes, ContinuationConfig())
        parallel = sweep_grid(anchor2, problem2, axes, ContinuationConfig(), jobs=2)
        assert [p.index for p in serial.points] == [p.index for p in parallel.points]
        for a, b in zip(serial.points, parallel.points):
            assert np.abs(a.x - b.x).max() < 1e-8

    def test_axes_must_match_pins(self, anchor_point, problem):
        with pytest.raises(ValueError):
            sweep_grid(anchor_point, problem, [[1.0], [2.0]])
