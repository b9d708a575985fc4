"""End-to-end tests of the command-line entry points.

All commands run in process through cli.main so exit codes, stderr, and the
emitted files can be asserted without subprocess overhead.
"""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from commute_control import ValidationError
from commute_control.cli import main


def base_config(**extra) -> dict:
    cfg = {
        "problem": {"ell": 0.25, "i0": 0.75},
        "grid_n": 257,
        "mc": {"n_paths": 400, "dt": 0.001, "seed": 5},
        "ode": {"tolerance": 0.0001},
        "value": {"i_points": 5},
    }
    cfg.update(extra)
    return cfg


def write_config(tmp_path: Path, cfg: dict, name: str = "run.json") -> str:
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def run(tmp_path: Path, command: str, cfg: dict, *flags, out: str = "out") -> tuple[int, Path]:
    path = write_config(tmp_path, cfg)
    out_dir = tmp_path / out
    rc = main([command, "--config", path, "--out", str(out_dir), *flags])
    return rc, out_dir


def read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    rows = [line.split(",") for line in lines[1:]]
    return header, rows


class TestConfigValidation:
    def test_unknown_top_level_key_is_rejected(self, tmp_path, capsys):
        cfg = base_config()
        cfg["grdi_n"] = 65
        rc, out_dir = run(tmp_path, "value", cfg)
        assert rc == 2
        err = capsys.readouterr().err
        assert "unknown keys" in err and "grdi_n" in err
        # validation precedes any output
        assert not out_dir.exists()

    def test_unknown_nested_key_names_its_path(self, tmp_path, capsys):
        cfg = base_config()
        cfg["problem"]["sigmaa"] = 2.0
        rc, _ = run(tmp_path, "value", cfg)
        assert rc == 2
        assert "config.problem" in capsys.readouterr().err

    def test_invalid_json_reports_the_line(self, tmp_path, capsys):
        p = tmp_path / "broken.json"
        p.write_text('{"problem": {"ell": 0.25,, }}')
        rc = main(["value", "--config", str(p), "--out", str(tmp_path / "out")])
        assert rc == 2
        assert "line 1" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path, capsys):
        rc = main(["value", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "out")])
        assert rc == 2
        assert "not found" in capsys.readouterr().err

    def test_wrong_field_type_names_the_field(self, tmp_path, capsys):
        cfg = base_config()
        cfg["mc"]["n_paths"] = "many"
        rc, _ = run(tmp_path, "value", cfg)
        assert rc == 2
        assert "config.mc.n_paths" in capsys.readouterr().err

    def test_reversed_interval_is_rejected(self, tmp_path, capsys):
        cfg = base_config()
        cfg["problem"]["ell"] = 0.8
        cfg["problem"]["i0"] = 0.2
        rc, _ = run(tmp_path, "value", cfg)
        assert rc == 2
        assert "ell < i0" in capsys.readouterr().err

    def test_interval_collapsing_under_snapping_is_rejected(self, tmp_path, capsys):
        cfg = base_config()
        cfg["problem"]["ell"] = 0.5
        cfg["problem"]["i0"] = 0.5008
        rc, _ = run(tmp_path, "value", cfg)
        assert rc == 2
        assert "8 grid" in capsys.readouterr().err

    def test_unknown_policy_kind(self, tmp_path, capsys):
        cfg = base_config(policies=[{"kind": "bangbang"}])
        rc, _ = run(tmp_path, "simulate", cfg)
        assert rc == 2
        assert "config.policies[0].kind" in capsys.readouterr().err

    def test_steep_policy_needs_a_rate(self, tmp_path):
        cfg = base_config(policies=[{"kind": "steep"}])
        rc, _ = run(tmp_path, "simulate", cfg)
        assert rc == 2

    def test_unknown_check_name(self, tmp_path, capsys):
        cfg = base_config(verify={"checks": ["dual_payoff", "spectral_gap"]})
        rc, _ = run(tmp_path, "verify", cfg)
        assert rc == 2
        assert "spectral_gap" in capsys.readouterr().err

    def test_no_output_directory_anywhere(self, tmp_path, capsys):
        path = write_config(tmp_path, base_config())
        rc = main(["value", "--config", path])
        assert rc == 2
        assert "output directory" in capsys.readouterr().err

    def test_table_coefficient_must_cover_the_interval(self, tmp_path, capsys):
        cfg = base_config()
        cfg["problem"]["sigma"] = {"family": "table", "x": [0.0, 0.7], "values": [1.0, 2.0]}
        rc, _ = run(tmp_path, "value", cfg)
        assert rc == 2
        assert "config.problem.sigma" in capsys.readouterr().err


class TestValueCommand:
    def test_report_and_curve(self, tmp_path):
        rc, out_dir = run(tmp_path, "value", base_config())
        assert rc == 0
        report = json.loads((out_dir / "value.json").read_text())

        at_top = report["value_at_i0"]
        assert at_top["route_gap"] <= 1e-6
        assert at_top["static_payoff_s0"] >= at_top["conjugate_route"] - 1e-9

        frontier = report["degenerate_frontier"]
        assert frontier["note"] == "no free interval"
        # flat reference: kappa + b c = 1/16 + 3/4 * 1/2 at the frontier
        assert frontier["kappa_plus_bc"] == pytest.approx(0.4375, abs=1e-9)
        assert frontier["value_limit"] == pytest.approx(1.9375, abs=1e-9)

        header, rows = read_csv(out_dir / "value_curve.csv")
        assert header == ["i", "value_conjugate", "value_grid_minimization", "payoff_static"]
        assert len(rows) == 5
        values = [[float(v) for v in row] for row in rows]
        assert all(len(r) == 4 for r in values)
        assert values[-1][0] == pytest.approx(0.75)

    def test_every_csv_column_is_in_the_schema(self, tmp_path):
        rc, out_dir = run(tmp_path, "value", base_config())
        assert rc == 0
        report = json.loads((out_dir / "value.json").read_text())
        header, _ = read_csv(out_dir / "value_curve.csv")
        described = report["schema"]["value_curve.csv"]
        for column in header:
            assert "units" in described[column]

    def test_byte_identical_reruns(self, tmp_path):
        rc1, dir1 = run(tmp_path, "value", base_config(), out="out1")
        rc2, dir2 = run(tmp_path, "value", base_config(), out="out2")
        assert rc1 == rc2 == 0
        assert (dir1 / "value_curve.csv").read_bytes() == (dir2 / "value_curve.csv").read_bytes()
        assert (dir1 / "value.json").read_bytes() == (dir2 / "value.json").read_bytes()

    def test_grid_override_is_reported(self, tmp_path):
        rc, out_dir = run(tmp_path, "value", base_config(), "--grid", "513")
        assert rc == 0
        report = json.loads((out_dir / "value.json").read_text())
        assert report["config"]["grid_n"] == 513

    def test_levels_snap_to_grid_nodes(self, tmp_path):
        cfg = base_config()
        cfg["problem"]["ell"] = 0.2503
        cfg["problem"]["i0"] = 0.7491
        rc, out_dir = run(tmp_path, "value", cfg)
        assert rc == 0
        report = json.loads((out_dir / "value.json").read_text())
        assert report["config"]["ell"] == pytest.approx(0.25, abs=1e-12)
        assert report["config"]["i0"] == pytest.approx(0.75, abs=1e-12)

    def test_json_only_output(self, tmp_path):
        cfg = base_config(output={"formats": ["json"]})
        rc, out_dir = run(tmp_path, "value", cfg)
        assert rc == 0
        assert (out_dir / "value.json").exists()
        assert not (out_dir / "value_curve.csv").exists()
        report = json.loads((out_dir / "value.json").read_text())
        assert report["files"] == ["value.json"]


class TestOptimalScaleCommand:
    def test_curve_files(self, tmp_path):
        rc, out_dir = run(tmp_path, "optimal-scale", base_config())
        assert rc == 0
        header, rows = read_csv(out_dir / "optimal_scale.csv")
        assert header == ["i", "s_hat_prime", "s_tilde", "value", "delta_residual"]
        report = json.loads((out_dir / "optimal_scale.json").read_text())
        assert report["tolerances"]["achieved"] is True
        assert report["levels"]["count"] == len(rows)
        values = [[float(v) for v in row] for row in rows]
        assert all(r[1] > 0.0 for r in values)
        assert values[-1][3] == pytest.approx(report["value_at_i0"], abs=1e-12)

    def test_unreachable_tolerance_fails_visibly(self, tmp_path, capsys):
        cfg = base_config(ode={"tolerance": 1e-12})
        rc, out_dir = run(tmp_path, "optimal-scale", cfg)
        assert rc == 1
        assert "not achieved" in capsys.readouterr().err
        # the report is still written so the gaps can be inspected
        report = json.loads((out_dir / "optimal_scale.json").read_text())
        assert report["tolerances"]["achieved"] is False

    def test_ode_failure_surfaces_the_level(self, tmp_path, capsys, monkeypatch):
        import commute_control.cli as cli_mod

        def explode(spec, max_step=None):
            raise ValidationError("optimal-scale integration failed near level i=0.42")

        monkeypatch.setattr(cli_mod, "optimal_scale", explode)
        rc, out_dir = run(tmp_path, "optimal-scale", base_config())
        assert rc == 1
        assert "level i=0.42" in capsys.readouterr().err
        assert not (out_dir / "optimal_scale.json").exists()


class TestSimulateCommand:
    def test_policy_costs_table(self, tmp_path):
        cfg = base_config(
            policies=[
                {"kind": "static"},
                {"kind": "reset-sstar"},
                {"kind": "dynamic-optimal"},
                {"kind": "steep", "steep_n": 6},
            ]
        )
        cfg["mc"]["n_paths"] = 200
        rc, out_dir = run(tmp_path, "simulate", cfg)
        assert rc == 0
        header, rows = read_csv(out_dir / "policy_costs.csv")
        assert header == ["policy", "steep_n", "mean", "stderr", "n_paths", "dt", "seed"]
        assert [r[0] for r in rows] == ["static", "reset-sstar", "dynamic-optimal", "steep-6"]
        assert all(float(r[2]) > 0.0 for r in rows)
        report = json.loads((out_dir / "simulate.json").read_text())
        assert [p["policy"] for p in report["policies"]] == [r[0] for r in rows]
        for p, row in zip(report["policies"], rows):
            assert p["mean"] == pytest.approx(float(row[2]), abs=0.0)

    def test_seed_override_changes_the_draw(self, tmp_path):
        cfg = base_config()
        rc1, dir1 = run(tmp_path, "simulate", cfg, "--seed", "1", out="out1")
        rc2, dir2 = run(tmp_path, "simulate", cfg, "--seed", "2", out="out2")
        rc3, dir3 = run(tmp_path, "simulate", cfg, "--seed", "1", out="out3")
        assert rc1 == rc2 == rc3 == 0
        b1 = (dir1 / "policy_costs.csv").read_bytes()
        b2 = (dir2 / "policy_costs.csv").read_bytes()
        b3 = (dir3 / "policy_costs.csv").read_bytes()
        assert b1 != b2
        assert b1 == b3

    def test_per_path_dump(self, tmp_path):
        cfg = base_config(policies=[{"kind": "static"}, {"kind": "reset-sstar"}])
        cfg["mc"]["n_paths"] = 50
        cfg["mc"]["dump_paths"] = True
        rc, out_dir = run(tmp_path, "simulate", cfg)
        assert rc == 0
        header, rows = read_csv(out_dir / "paths.csv")
        assert header == ["policy", "path", "cost", "commute_time", "hit_one_time", "min_before_t1"]
        assert len(rows) == 100
        for row in rows:
            assert float(row[2]) >= 0.0
            assert float(row[3]) >= float(row[4])

    def test_unstable_steep_rate_is_a_config_error(self, tmp_path, capsys):
        cfg = base_config(policies=[{"kind": "steep", "steep_n": 4000}])
        rc, out_dir = run(tmp_path, "simulate", cfg)
        assert rc == 2
        assert "need dt" in capsys.readouterr().err
        assert not (out_dir / "policy_costs.csv").exists()


class TestVerifyCommand:
    def test_reference_battery_passes(self, tmp_path):
        cfg = base_config()
        cfg["grid_n"] = 1025
        rc, out_dir = run(tmp_path, "verify", cfg)
        assert rc == 0
        report = json.loads((out_dir / "verify.json").read_text())
        assert report["all_pass"] is True
        assert report["failed"] == []
        names = [c["name"] for c in report["checks"]]
        assert names == [
            "commute_identity",
            "dual_payoff",
            "dual_value",
            "infimum_law",
            "delta_residual",
            "submartingale",
        ]
        for c in report["checks"]:
            assert c["passed"] is True
            assert c["gap"] <= c["tolerance"]

    def test_perturbed_scale_fails_the_residual_check_by_name(self, tmp_path, capsys):
        cfg = base_config(verify={"checks": ["delta_residual"], "perturb_scale": 0.3})
        rc, out_dir = run(tmp_path, "verify", cfg)
        assert rc == 1
        assert "check failed: delta_residual" in capsys.readouterr().err
        report = json.loads((out_dir / "verify.json").read_text())
        assert report["failed"] == ["delta_residual"]
        check = report["checks"][0]
        assert check["passed"] is False
        assert check["gap"] > check["tolerance"]
        assert check["detail"]["perturbed"] is True
        header, rows = read_csv(out_dir / "checks.csv")
        assert header == ["check", "gap", "tolerance", "passed"]
        assert rows[0][0] == "delta_residual"
        assert rows[0][3] == "false"

    def test_empty_check_list_passes_trivially(self, tmp_path):
        cfg = base_config(verify={"checks": []})
        rc, out_dir = run(tmp_path, "verify", cfg)
        assert rc == 0
        report = json.loads((out_dir / "verify.json").read_text())
        assert report["all_pass"] is True
        assert report["checks"] == []

    def test_check_subset_runs_in_config_order(self, tmp_path):
        cfg = base_config(verify={"checks": ["dual_value", "commute_identity"]})
        rc, out_dir = run(tmp_path, "verify", cfg)
        assert rc == 0
        report = json.loads((out_dir / "verify.json").read_text())
        assert [c["name"] for c in report["checks"]] == ["dual_value", "commute_identity"]
