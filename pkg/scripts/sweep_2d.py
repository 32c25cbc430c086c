"""Two-dimensional (H2O, H2) grid: iteration totals for Euler and constant warm starts."""

import argparse
from pathlib import Path

from simtrack.cli import write_sweep
from simtrack.continuation import ContinuationConfig, solve_anchor, sweep_grid
from simtrack.kinetics import load_mechanism
from simtrack.nlp import NlpProblem

H2O = [0.001] + [0.5 * k for k in range(1, 12)]
H2 = [0.001] + [0.5 * k for k in range(1, 9)]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-o", "--out-dir", default="results/sweep_2d")
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    mech = load_mechanism()
    problem = NlpProblem.build(mech, {"H2O": 3.0, "H2": float(mech.anchor[1])})
    anchor = solve_anchor(problem, mech.anchor)
    print(f"{'corrector':10s}{'predictor':10s}{'points':>8s}{'iterations':>12s}{'failures':>10s}{'time [s]':>10s}")
    for corrector in ("ggn", "newton"):
        for pred in ("euler", "constant"):
            cfg = ContinuationConfig(predictor=pred, corrector=corrector)
            res = sweep_grid(anchor, problem, [H2O, H2], cfg, jobs=args.jobs)
            write_sweep(res, out / f"sweep_{corrector}_{pred}.csv")
            print(f"{corrector:10s}{pred:10s}{len(res.points):8d}{res.total_iterations:12d}"
                  f"{res.failures:10d}{res.wall_time:10.2f}")
    print(f"{res.n_grid} grid points, {len(res.points)} with a non-negative composition")


if __name__ == "__main__":
    main()
