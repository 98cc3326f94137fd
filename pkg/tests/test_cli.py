"""Oracle tests for the command-line interface: scenario parsing, CSV/JSON
output contracts, exit codes, and determinism.

Frozen literals are tagged:
  [DERIVED]  value checked against an independent closed form or a second
             code path inside this repository.
  [KNOWN]    standard closed form of the construction.
  [TRIVIAL]  immediate from the definition (format contracts, exit codes).
"""
from __future__ import annotations

import json
import math

import numpy as np
import pytest

from darboux import cli
from darboux.background import one_soliton_reference


def write_measure(path, payload):
    path.write_text(json.dumps(payload))
    return str(path)


ONE_ATOM = {"atoms": [[1.0, 2.0]], "ac_parts": []}
GAS = {"atoms": [], "ac_parts": [{"density": "semicircle_2s"}]}


class TestTransformCommand:
    def test_writes_csv_and_report(self, tmp_path):
        # [TRIVIAL] output contract: header, row count, LF endings
        mfile = write_measure(tmp_path / "m.json", ONE_ATOM)
        out = tmp_path / "run.csv"
        rc = cli.main([
            "transform", "--measure-file", mfile, "--grid", "-2:2:1",
            "--times", "0", "--nodes", "8", "--out", str(out),
        ])
        assert rc == 0
        raw = out.read_bytes()
        assert b"\r" not in raw
        lines = raw.decode().splitlines()
        assert lines[0] == "x,t,q"
        assert len(lines) == 1 + 5  # header + 5 grid points
        report = json.loads(out.with_suffix(".json").read_text())
        assert report["diagnostics"]["points"] == 5
        assert report["scenario"]["method"] == "direct"

    def test_q_column_matches_closed_form(self, tmp_path):
        # [DERIVED] CSV q equals the closed one-soliton profile
        mfile = write_measure(tmp_path / "m.json", ONE_ATOM)
        out = tmp_path / "run.csv"
        rc = cli.main([
            "transform", "--measure-file", mfile, "--grid", "-5:5:0.5",
            "--times", "0,0.5", "--out", str(out),
        ])
        assert rc == 0
        rows = [ln.split(",") for ln in out.read_text().splitlines()[1:]]
        for sx, st, sq in rows:
            x, t, q = float(sx), float(st), float(sq)
            ref = one_soliton_reference(1.0, 2.0, x, t)
            assert q == pytest.approx(ref, abs=1e-8)

    def test_deterministic_bytes(self, tmp_path):
        # [TRIVIAL] identical scenarios must produce identical bytes
        mfile = write_measure(tmp_path / "m.json", GAS)
        out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
        args = ["transform", "--measure-file", mfile, "--grid", "-3:3:0.5",
                "--times", "0,0.1", "--nodes", "24"]
        assert cli.main(args + ["--out", str(out1)]) == 0
        assert cli.main(args + ["--out", str(out2)]) == 0
        assert out1.read_bytes() == out2.read_bytes()
        r1 = json.loads(out1.with_suffix(".json").read_text())
        r2 = json.loads(out2.with_suffix(".json").read_text())
        assert r1 == r2

    def test_jost_columns(self, tmp_path):
        # [KNOWN] psi(x, i) of the kappa=1 soliton field decays ~ e^{-x}
        # to the right; columns appear only when requested
        mfile = write_measure(tmp_path / "m.json", ONE_ATOM)
        out = tmp_path / "run.csv"
        rc = cli.main([
            "transform", "--measure-file", mfile, "--grid", "0:6:1",
            "--times", "0", "--jost-k", "1j", "--out", str(out),
        ])
        assert rc == 0
        lines = out.read_text().splitlines()
        assert lines[0] == "x,t,q,psi_re,psi_im"
        rows = [ln.split(",") for ln in lines[1:]]
        psi0 = float(rows[0][3])
        psi6 = float(rows[6][3])
        # e^{-x} over six units: the ratio must sit below e^{-6} ~ 2.5e-3
        # with room for the O(1) soliton correction factor
        assert abs(psi6) < abs(psi0) * 1e-2
        assert all(float(r[4]) == 0.0 for r in rows)

    def test_per_point_diagnostics(self, tmp_path):
        # [TRIVIAL] the sidecar carries determinant and condition data for
        # every grid point; insertion keeps det(I + K) > 1, so the sign is
        # +1 and log det is positive
        mfile = write_measure(tmp_path / "m.json", ONE_ATOM)
        out = tmp_path / "run.csv"
        rc = cli.main([
            "transform", "--measure-file", mfile, "--grid", "-2:2:1",
            "--times", "0", "--out", str(out),
        ])
        assert rc == 0
        diag = json.loads(out.with_suffix(".json").read_text())["diagnostics"]
        assert len(diag["per_point"]) == diag["points"]
        for entry in diag["per_point"]:
            assert entry["det_sign"] == 1
            assert entry["logabsdet"] > 0.0
            assert 0.0 < entry["cond_estimate"] < 1e6

    def test_empty_measure_gives_zero_potential(self, tmp_path):
        # [TRIVIAL] the empty measure leaves the zero background untouched
        mfile = write_measure(tmp_path / "m.json", {"atoms": [], "ac_parts": []})
        out = tmp_path / "run.csv"
        rc = cli.main([
            "transform", "--measure-file", mfile, "--grid", "-2:2:1",
            "--times", "0", "--out", str(out),
        ])
        assert rc == 0
        rows = [ln.split(",") for ln in out.read_text().splitlines()[1:]]
        assert all(float(r[2]) == 0.0 for r in rows)

    def test_method_both_cross_checks(self, tmp_path):
        # [DERIVED] the sidecar carries the direct-vs-logdet discrepancy
        mfile = write_measure(tmp_path / "m.json", ONE_ATOM)
        out = tmp_path / "run.csv"
        rc = cli.main([
            "transform", "--measure-file", mfile, "--grid", "-2:2:0.5",
            "--times", "0", "--method", "both", "--out", str(out),
        ])
        assert rc == 0
        report = json.loads(out.with_suffix(".json").read_text())
        assert report["diagnostics"]["cross_check_max_diff"] < 1e-5

    def test_config_file_with_flag_override(self, tmp_path):
        # [TRIVIAL] flags win over the config file
        mfile = write_measure(tmp_path / "m.json", ONE_ATOM)
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({
            "measure_file": mfile, "grid": "-1:1:1", "times": [0.0],
            "n_nodes": 16, "out": str(tmp_path / "cfg_out.csv"),
        }))
        out = tmp_path / "flag_out.csv"
        rc = cli.main([
            "transform", "--config", str(cfg), "--nodes", "32",
            "--out", str(out),
        ])
        assert rc == 0
        report = json.loads(out.with_suffix(".json").read_text())
        assert report["scenario"]["n_nodes"] == 32

    def test_invalid_grid_is_exit_2(self, tmp_path):
        mfile = write_measure(tmp_path / "m.json", ONE_ATOM)
        rc = cli.main([
            "transform", "--measure-file", mfile, "--grid", "5:-5:0.5",
            "--times", "0", "--out", str(tmp_path / "x.csv"),
        ])
        assert rc == 2

    def test_unknown_density_is_exit_2(self, tmp_path):
        mfile = write_measure(
            tmp_path / "m.json",
            {"atoms": [], "ac_parts": [{"density": "lorentzian"}]},
        )
        rc = cli.main([
            "transform", "--measure-file", mfile, "--grid", "0:1:0.5",
            "--times", "0", "--out", str(tmp_path / "x.csv"),
        ])
        assert rc == 2

    def test_missing_measure_file_is_exit_2(self, tmp_path):
        rc = cli.main([
            "transform", "--measure-file", str(tmp_path / "nope.json"),
            "--grid", "0:1:0.5", "--times", "0",
            "--out", str(tmp_path / "x.csv"),
        ])
        assert rc == 2

    def test_inadmissible_needs_force(self, tmp_path):
        # [KNOWN] removing an atom the zero background does not contain is
        # inadmissible; --force runs it anyway and hits the singular line
        mfile = write_measure(
            tmp_path / "m.json", {"atoms": [[1.0, -2.0]], "ac_parts": []}
        )
        args = ["transform", "--measure-file", mfile, "--grid", "-1:1:0.25",
                "--times", "0", "--out", str(tmp_path / "x.csv")]
        assert cli.main(args) == 2

    def test_singular_system_is_exit_3(self, tmp_path, capsys):
        # [KNOWN] the forced removal's determinant 1 - e^{-2x} vanishes at
        # x = 0, which sits on this grid
        mfile = write_measure(
            tmp_path / "m.json", {"atoms": [[1.0, -2.0]], "ac_parts": []}
        )
        rc = cli.main([
            "transform", "--measure-file", mfile, "--grid", "-1:1:0.25",
            "--times", "0", "--force", "--out", str(tmp_path / "x.csv"),
        ])
        assert rc == 3
        err = capsys.readouterr().err
        assert "x=0" in err

    def test_refuses_overwrite_without_force(self, tmp_path):
        mfile = write_measure(tmp_path / "m.json", ONE_ATOM)
        out = tmp_path / "run.csv"
        out.write_text("already here")
        rc = cli.main([
            "transform", "--measure-file", mfile, "--grid", "0:1:1",
            "--times", "0", "--out", str(out),
        ])
        assert rc == 2
        assert out.read_text() == "already here"


class TestSolitonCommand:
    def test_matches_closed_form(self, tmp_path):
        # [DERIVED] convenience wrapper equals the closed profile
        out = tmp_path / "sol.csv"
        rc = cli.main([
            "soliton", "--kappa", "1.0", "--weight", "2.0",
            "--grid", "-5:5:1", "--times", "0,1", "--out", str(out),
        ])
        assert rc == 0
        rows = [ln.split(",") for ln in out.read_text().splitlines()[1:]]
        for sx, st, sq in rows:
            ref = one_soliton_reference(1.0, 2.0, float(sx), float(st))
            assert float(sq) == pytest.approx(ref, abs=1e-8)

    def test_multiple_kappas(self, tmp_path):
        out = tmp_path / "two.csv"
        rc = cli.main([
            "soliton", "--kappa", "1.0", "--weight", "2.0",
            "--kappa", "2.0", "--weight", "1.0",
            "--grid", "-2:2:1", "--times", "0", "--out", str(out),
        ])
        assert rc == 0
        assert len(out.read_text().splitlines()) == 1 + 5


class TestGasCommand:
    def test_matches_library_pipeline(self, tmp_path):
        # [DERIVED] the subcommand wires the same discretization the
        # library builds directly
        from darboux.background import ZeroBackground
        from darboux.measure import SpectralMeasure, make_ac_part
        from darboux.transform import apply

        out = tmp_path / "gas.csv"
        rc = cli.main([
            "gas", "--density", "semicircle_2s", "--nodes", "32",
            "--grid", "-1:1:1", "--times", "0", "--out", str(out),
        ])
        assert rc == 0
        field = apply(
            ZeroBackground(),
            SpectralMeasure(atoms=(), ac_parts=(make_ac_part("semicircle_2s"),)),
            n_nodes=32,
        )
        rows = [ln.split(",") for ln in out.read_text().splitlines()[1:]]
        for sx, st, sq in rows:
            ref = float(field.potential(float(sx), float(st)))
            assert float(sq) == pytest.approx(ref, abs=1e-10)


class TestVerifyCommand:
    def test_report_passes_on_healthy_library(self, tmp_path):
        # [DERIVED] every check in the battery must pass; the report lists
        # one entry per check with the shared JSON shape
        out = tmp_path / "report.json"
        rc = cli.main(["verify", "--nodes", "24", "--out", str(out)])
        assert rc == 0
        report = json.loads(out.read_text())
        assert report["pass"] is True
        assert len(report["checks"]) >= 5
        for entry in report["checks"]:
            assert {"check", "params", "residuals", "order", "pass"} <= set(entry)
            assert entry["pass"] is True


class TestParallelSweep:
    def test_thread_count_does_not_change_bytes(self, tmp_path, monkeypatch):
        # [TRIVIAL] determinism must hold at any worker count
        mfile = write_measure(tmp_path / "m.json", GAS)
        args = ["transform", "--measure-file", mfile, "--grid", "-2:2:0.25",
                "--times", "0", "--nodes", "24"]
        out1, out2 = tmp_path / "p1.csv", tmp_path / "p8.csv"
        monkeypatch.setenv("DARBOUX_THREADS", "1")
        assert cli.main(args + ["--out", str(out1)]) == 0
        monkeypatch.setenv("DARBOUX_THREADS", "8")
        assert cli.main(args + ["--out", str(out2)]) == 0
        assert out1.read_bytes() == out2.read_bytes()
