"""Objective along H2O at fixed O = 0.3 and H2 = 2 mol/kg, with its interior minima."""

import argparse
import csv
from pathlib import Path

import numpy as np

from simtrack.kinetics import conservation_from_anchor, load_mechanism
from simtrack.nlp import interior_minima, landscape_scan


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("-o", "--out-dir", default="results/landscape")
    args = ap.parse_args()
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    mech = load_mechanism()
    cons = conservation_from_anchor(mech, mech.anchor)
    scan = np.round(np.arange(0.5, 6.0 + 1e-9, 0.01), 10)
    land = landscape_scan(mech, cons, {"O": 0.3, "H2": 2.0}, {"H2O": scan}, positivity=False)
    with open(out / "landscape.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["H2O", *mech.species, "phi", "valid"])
        for x, z, phi, ok in zip(scan, land.states, land.phi, land.valid):
            w.writerow([f"{x:.17g}", *(f"{v:.17g}" for v in z), f"{phi:.17g}", int(ok)])
    for i in interior_minima(land.phi):
        z = land.states[i]
        print(f"minimum at H2O = {scan[i]:.2f}: phi = {land.phi[i]:.4e}, "
              f"non-negative completion: {bool(land.valid[i])}, min component {z.min():.3f}")
    print(f"non-negative completions up to H2O = {scan[land.valid].max():.2f}")


if __name__ == "__main__":
    main()
