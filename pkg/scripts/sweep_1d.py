"""17-point H2O sweep: full-step Euler vs constant warm starts, linear-step shortcut, adaptive jump."""

import argparse
from pathlib import Path

import numpy as np

from simtrack.cli import write_sweep
from simtrack.continuation import LINEAR, ContinuationConfig, continue_to, solve_anchor, sweep_grid
from simtrack.kinetics import load_mechanism
from simtrack.nlp import NlpProblem


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-o", "--out-dir", default="results/sweep_1d")
    args = ap.parse_args()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    mech = load_mechanism()
    problem = NlpProblem.build(mech, {"H2O": 3.0})
    anchor = solve_anchor(problem, mech.anchor)
    grid = [np.arange(4.0, -0.125, -0.25)]
    print(f"anchor solve: {anchor.solution.iterations} iterations")
    for pred in ("euler", "constant"):
        res = sweep_grid(anchor, problem, grid, ContinuationConfig(predictor=pred))
        write_sweep(res, out / f"sweep_{pred}.csv")
        print(f"{pred:9s} {len(res.points)} points, {res.total_iterations} iterations, "
              f"{res.failures} failures, {res.wall_time:.3f} s")

    res = sweep_grid(anchor, problem, grid, ContinuationConfig(mode="linear", eps_tol=1.1))
    solved = [float(p.r[0]) for p in res.points if p.status != LINEAR]
    print(f"linear step (eps_tol=1.1): corrected at {sorted(solved + [3.0], reverse=True)}, "
          f"{res.total_iterations + anchor.solution.iterations} iterations including the anchor")

    for mode in ("full", "adaptive"):
        path = continue_to(anchor, [0.5], problem, ContinuationConfig(mode=mode))
        steps = ", ".join(f"{p.r[0]:.3f} ({p.stats.iterations} it)" for p in path)
        print(f"jump 3.0 -> 0.5 [{mode}]: {steps}")


if __name__ == "__main__":
    main()
