import csv
import subprocess
import sys

import numpy as np
import pytest

from simtrack.cli import main

from conftest import REFERENCE_SOLUTION


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def point_vector(path):
    rows = [r for r in read_rows(path) if r["quantity"] == "z"]
    return np.array([float(r["value"]) for r in rows])


class TestSolve:
    def test_golden(self, tmp_path):
        assert main(["solve", "-m", "h2_ren2006.mech", "--pin", "H2O=3.0", "-o", str(tmp_path)]) == 0
        z = point_vector(tmp_path / "point.csv")
        assert z[4] == 3.0
        np.testing.assert_allclose(z, REFERENCE_SOLUTION, rtol=1e-2)

    def test_duplicate_pin(self, tmp_path, capsys):
        code = main(["solve", "--pin", "H2O=3.0", "--pin", "H2O=2.0", "-o", str(tmp_path)])
        assert code == 2
        assert "duplicate pin" in capsys.readouterr().err

    def test_unknown_species(self, tmp_path):
        assert main(["solve", "--pin", "XY=1", "-o", str(tmp_path)]) == 2

    def test_missing_mechanism(self, tmp_path):
        assert main(["solve", "-m", str(tmp_path / "none.mech"), "--pin", "H2O=3", "-o", str(tmp_path)]) == 2

    def test_newton_matches_ggn(self, tmp_path):
        main(["solve", "--pin", "H2O=3.0", "-o", str(tmp_path / "g")])
        main(["solve", "--pin", "H2O=3.0", "--corrector", "newton", "-o", str(tmp_path / "n")])
        a, b = point_vector(tmp_path / "g" / "point.csv"), point_vector(tmp_path / "n" / "point.csv")
        assert np.abs(a - b).max() < 1e-8

    def test_solver_failure_exit(self, tmp_path):
        code = main(["solve", "--pin", "H2O=0.5", "--anchor",
                     "O=0.5,H2=2.5,H=1.2,OH=0.9,H2O=3,N2=32.90513", "--tol-abs", "1e-300",
                     "--tol-rel", "1e-300", "-o", str(tmp_path)])
        assert code == 1


class TestSweep:
    def test_one_dimensional(self, tmp_path):
        assert main(["sweep", "--pin", "H2O=4.0:-0.25:17", "-o", str(tmp_path)]) == 0
        rows = read_rows(tmp_path / "sweep.csv")
        assert len(rows) == 17
        assert all(r["status"] == "converged" for r in rows)
        summary = (tmp_path / "summary.txt").read_text()
        assert "failures: 0" in summary

    def test_negative_values_filtered(self, tmp_path):
        assert main(["sweep", "--pin", "H2O=3.0:-0.25:17", "-o", str(tmp_path)]) == 0
        assert len(read_rows(tmp_path / "sweep.csv")) == 13

    def test_csv_round_trip_and_determinism(self, tmp_path):
        args = ["sweep", "--pin", "H2O=[2.5,2.75,3.25]"]
        main(args + ["-o", str(tmp_path / "a")])
        main(args + ["-o", str(tmp_path / "b")])
        text_a = (tmp_path / "a" / "sweep.csv").read_bytes()
        assert text_a == (tmp_path / "b" / "sweep.csv").read_bytes()
        rows = read_rows(tmp_path / "a" / "sweep.csv")
        for row in rows:
            for key in ("O", "H2", "H", "OH"):
                v = float(row[key])
                assert f"{v:.17g}" == row[key]

    def test_predictor_comparison(self, tmp_path):
        grid = ["--pin", "H2O=[0.001,0.5,1,1.5,2,2.5,3,3.5,4,4.5,5,5.5]",
                "--pin", "H2=[0.001,0.5,1,1.5,2,2.5,3,3.5,4]"]
        totals = {}
        for pred in ("euler", "constant"):
            out = tmp_path / pred
            assert main(["sweep", *grid, "--predictor", pred, "-o", str(out)]) == 0
            lines = dict(l.split(": ") for l in (out / "summary.txt").read_text().splitlines())
            totals[pred] = int(lines["total iterations"])
            assert int(lines["attempted"]) == len(read_rows(out / "sweep.csv"))
        assert totals["euler"] < totals["constant"]

    def test_three_pins_rejected(self, tmp_path):
        assert main(["sweep", "--pin", "H2O=1:1:2", "--pin", "H2=1:1:2", "--pin", "O=1:1:2",
                     "-o", str(tmp_path)]) == 2


class TestLandscape:
    def test_two_minima(self, tmp_path, capsys):
        code = main(["landscape", "--fix", "O=0.3", "--fix", "H2=2", "--scan", "H2O=0.5:0.01:551",
                     "--raw", "-o", str(tmp_path)])
        assert code == 0
        rows = read_rows(tmp_path / "landscape.csv")
        phi = np.array([float(r["phi"]) for r in rows])
        interior = [i for i in range(1, len(phi) - 1) if phi[i] < phi[i - 1] and phi[i] < phi[i + 1]]
        assert len(interior) == 2

    def test_invalid_cells_not_numeric(self, tmp_path):
        main(["landscape", "--fix", "O=0.3", "--fix", "H2=2", "--scan", "H2O=0.5:0.5:12",
              "-o", str(tmp_path)])
        rows = read_rows(tmp_path / "landscape.csv")
        invalid = [r for r in rows if r["valid"] == "0"]
        assert invalid and all(r["phi"] == "" for r in invalid)


class TestTrajectory:
    def test_zero_horizon(self, tmp_path):
        main(["solve", "--pin", "H2O=3.0", "-o", str(tmp_path)])
        assert main(["trajectory", "--start", str(tmp_path / "point.csv"), "--tf", "0",
                     "-o", str(tmp_path)]) == 0
        data = np.loadtxt(tmp_path / "trajectory.csv", delimiter=",", skiprows=1, ndmin=2)
        assert data.shape[0] == 1
        np.testing.assert_array_equal(data[0, 1:], point_vector(tmp_path / "point.csv"))

    def test_relaxes_and_conserves(self, tmp_path, problem, equilibrium):
        main(["solve", "--pin", "H2O=3.0", "-o", str(tmp_path)])
        main(["trajectory", "--start", str(tmp_path / "point.csv"), "--tf", "0.1", "-o", str(tmp_path)])
        data = np.loadtxt(tmp_path / "trajectory.csv", delimiter=",", skiprows=1)
        totals = data[:, 1:] @ problem.conservation.matrix.T
        assert np.abs(totals - totals[0]).max() / totals[0].min() < 1e-9
        assert np.abs(data[-1, 1:] - equilibrium).max() < 1e-6

    def test_equilibrium_command(self, tmp_path, equilibrium):
        assert main(["equilibrium", "-o", str(tmp_path)]) == 0
        z = point_vector(tmp_path / "equilibrium.csv")
        np.testing.assert_allclose(z, equilibrium, atol=1e-8)


def test_console_script(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "simtrack.cli", "solve", "--pin", "H2O=3.0",
                           "-o", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0
    assert proc.stdout.startswith("converged")


@pytest.mark.parametrize("level", ["info", "debug"])
def test_log_level(tmp_path, monkeypatch, level):
    monkeypatch.setenv("SIMTRACK_LOG", level)
    assert main(["solve", "--pin", "H2O=3.0", "-o", str(tmp_path)]) == 0
