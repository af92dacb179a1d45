"""End-to-end tests of the command line interface."""

from __future__ import annotations

import csv
import io
import json
import math

import numpy as np
import pytest
from click.testing import CliRunner

from gendid.cli import main

TOY_LONG = """unit,period,outcome,adoption_period
a,1,1.0,2
a,2,1.8,2
a,3,1.9,2
b,1,2.0,3
b,2,2.1,3
b,3,2.9,3
"""

FOUR_UNIT_LONG = """unit,period,outcome,adoption_period
a,1,1.00,2
a,2,1.45,2
a,3,1.55,2
a,4,1.62,2
b,1,2.00,3
b,2,2.12,3
b,3,2.62,3
b,4,2.71,3
c,1,0.50,never
c,2,0.61,never
c,3,0.70,never
c,4,0.82,never
d,1,1.50,
d,2,1.62,
d,3,1.71,
d,4,1.80,
"""


@pytest.fixture()
def runner():
    return CliRunner()


def rows_of(text: str) -> list[list[str]]:
    return list(csv.reader(io.StringIO(text)))


class TestVersionAndHelp:
    def test_version(self, runner):
        result = runner.invoke(main, ["--version"])
        assert result.exit_code == 0
        assert "gendid" in result.output

    def test_help_lists_subcommands(self, runner):
        result = runner.invoke(main, ["--help"])
        assert result.exit_code == 0
        for name in ("design", "weights", "estimate", "compare", "simulate"):
            assert name in result.output


class TestDesign:
    def test_summary_from_flags(self, runner):
        result = runner.invoke(
            main, ["design", "--adoption", "2,3", "--n-periods", "3"]
        )
        assert result.exit_code == 0
        assert "units: 2" in result.stdout
        assert "periods: 3" in result.stdout
        assert "comparisons: 3" in result.stdout
        assert "rank: 2" in result.stdout
        assert "type 2" in result.stdout and "type 6" in result.stdout

    def test_never_spelled_out(self, runner):
        result = runner.invoke(
            main, ["design", "--adoption", "2,never", "--n-periods", "3"]
        )
        assert result.exit_code == 0
        assert "adoption: 2,never" in result.stdout

    def test_export_a(self, runner, tmp_path):
        out = tmp_path / "a.csv"
        result = runner.invoke(
            main,
            ["design", "--adoption", "2,3", "--n-periods", "3", "--export-a", str(out)],
        )
        assert result.exit_code == 0
        rows = rows_of(out.read_text())
        assert rows[0] == [
            "k", "i", "i_prime", "j", "j_prime", "type",
            "Y_u01_1", "Y_u01_2", "Y_u01_3", "Y_u02_1", "Y_u02_2", "Y_u02_3",
        ]
        assert rows[1] == ["1", "1", "2", "1", "2", "2", "-1", "1", "0", "1", "-1", "0"]
        assert rows[3] == ["3", "1", "2", "2", "3", "5", "0", "-1", "1", "0", "1", "-1"]

    def test_export_a_stdout_deterministic(self, runner):
        args = ["design", "--adoption", "2,3", "--n-periods", "3", "--export-a", "-"]
        first = runner.invoke(main, args)
        second = runner.invoke(main, args)
        assert first.exit_code == second.exit_code == 0
        assert first.stdout == second.stdout

    def test_panel_from_stdin(self, runner):
        result = runner.invoke(main, ["design", "--panel", "-"], input=TOY_LONG)
        assert result.exit_code == 0
        assert "adoption: 2,3" in result.stdout

    def test_export_a_uses_panel_unit_labels(self, runner, tmp_path):
        panel = tmp_path / "panel.csv"
        panel.write_text(TOY_LONG)
        result = runner.invoke(
            main, ["design", "--panel", str(panel), "--export-a", "-"]
        )
        assert result.exit_code == 0
        header = next(r for r in rows_of(result.stdout) if r and r[0] == "k")
        assert "Y_a_1" in header and "Y_b_3" in header

    def test_dry_run(self, runner):
        result = runner.invoke(
            main, ["design", "--adoption", "2,3", "--n-periods", "3", "--dry-run"]
        )
        assert result.exit_code == 0
        assert "would analyze design" in result.stdout

    def test_missing_design_flags(self, runner):
        result = runner.invoke(main, ["design", "--adoption", "2,3"])
        assert result.exit_code == 2
        assert "configuration error" in result.stderr


class TestWeights:
    BASE = ["weights", "--adoption", "2,3", "--n-periods", "3", "--setting", "S5"]

    def test_golden_overall(self, runner, tmp_path):
        obs_path = tmp_path / "obs.csv"
        w_path = tmp_path / "w.csv"
        result = runner.invoke(
            main,
            self.BASE
            + ["--estimand", "single", "--out-weights", str(w_path),
               "--out-obs-weights", str(obs_path)],
        )
        assert result.exit_code == 0
        assert "feasibility: underdetermined" in result.stdout
        assert "scaled variance: 3" in result.stdout
        obs_rows = rows_of(obs_path.read_text())
        assert obs_rows[0] == ["unit", "period", "weight"]
        assert obs_rows[1] == ["u01", "1", "-0.5"]
        assert obs_rows[2] == ["u01", "2", "1"]
        assert obs_rows[6] == ["u02", "3", "0.5"]
        w_rows = rows_of(w_path.read_text())
        assert w_rows[0] == ["k", "i", "i_prime", "j", "j_prime", "type", "weight"]
        assert [float(r[6]) for r in w_rows[1:]] == pytest.approx(
            [0.5, 0.0, -0.5], abs=1e-12
        )

    def test_infeasible_exit_three(self, runner):
        result = runner.invoke(
            main,
            ["weights", "--adoption", "2,3", "--n-periods", "3",
             "--setting", "S4", "--estimand", "single:j=3"],
        )
        assert result.exit_code == 3
        assert "no unbiased weight vector" in result.stderr
        assert "constraint rank" in result.stderr

    def test_bad_rho_exit_two(self, runner):
        result = runner.invoke(
            main,
            self.BASE + ["--estimand", "single", "--cov", "exchangeable", "--rho", "2"],
        )
        assert result.exit_code == 2
        assert "configuration error" in result.stderr

    def test_custom_covariance_file(self, runner, tmp_path):
        m_path = tmp_path / "m.csv"
        np.savetxt(m_path, np.eye(6), delimiter=",")
        result = runner.invoke(
            main,
            self.BASE + ["--estimand", "single", "--cov", f"custom:{m_path}"],
        )
        assert result.exit_code == 0
        assert "scaled variance: 3" in result.stdout

    def test_custom_covariance_needs_path(self, runner):
        result = runner.invoke(
            main, self.BASE + ["--estimand", "single", "--cov", "custom"]
        )
        assert result.exit_code == 2

    def test_rel_var_file(self, runner, tmp_path):
        rel_path = tmp_path / "rel.csv"
        rel_path.write_text("1,1,1\n1,1,1\n")
        result = runner.invoke(
            main,
            self.BASE + ["--estimand", "single", "--rel-var", str(rel_path)],
        )
        assert result.exit_code == 0
        assert "scaled variance: 3" in result.stdout

    def test_dry_run(self, runner):
        result = runner.invoke(main, self.BASE + ["--dry-run"])
        assert result.exit_code == 0
        assert "would solve" in result.stdout


class TestEstimate:
    def test_json_payload(self, runner, tmp_path):
        panel = tmp_path / "panel.csv"
        panel.write_text(TOY_LONG)
        result = runner.invoke(
            main,
            ["estimate", "--panel", str(panel), "--setting", "S5",
             "--estimand", "single", "--perms", "99", "--seed", "7"],
        )
        assert result.exit_code == 0
        payload = json.loads(result.stdout)
        assert payload["point"] == pytest.approx(0.7, abs=1e-9)
        assert payload["setting"] == "S5"
        assert payload["transform"] == "identity"
        assert payload["ratio"] is None
        assert payload["n_perm"] == 99
        assert payload["seed"] == 7
        assert payload["sided"] == "two"
        assert 0.0 < payload["p_value"] <= 1.0
        feas = payload["feasibility"]
        assert feas["classification"] == "underdetermined"
        assert feas["rank_f"] == 1
        assert feas["n_weights"] == 3
        assert feas["free_dim"] == 1

    def test_deterministic_output(self, runner, tmp_path):
        panel = tmp_path / "panel.csv"
        panel.write_text(TOY_LONG)
        args = [
            "estimate", "--panel", str(panel), "--setting", "S5",
            "--estimand", "single", "--perms", "50", "--seed", "3",
        ]
        first = runner.invoke(main, args)
        second = runner.invoke(main, args)
        assert first.stdout == second.stdout

    def test_out_file(self, runner, tmp_path):
        panel = tmp_path / "panel.csv"
        panel.write_text(TOY_LONG)
        out = tmp_path / "res.json"
        result = runner.invoke(
            main,
            ["estimate", "--panel", str(panel), "--setting", "S5",
             "--estimand", "single", "--perms", "0", "--out", str(out)],
        )
        assert result.exit_code == 0
        payload = json.loads(out.read_text())
        assert payload["p_value"] is None
        assert payload["seed"] is None
        assert payload["point"] == pytest.approx(0.7, abs=1e-9)

    def test_log_transform_reports_ratio(self, runner, tmp_path):
        values = np.array([[1.0, 1.8, 1.9], [2.0, 2.1, 2.9]])
        lines = ["unit,period,outcome,adoption_period"]
        for i, (unit, adopt) in enumerate((("a", "2"), ("b", "3"))):
            for j in range(3):
                lines.append(f"{unit},{j + 1},{math.exp(values[i, j])},{adopt}")
        panel = tmp_path / "panel.csv"
        panel.write_text("\n".join(lines) + "\n")
        result = runner.invoke(
            main,
            ["estimate", "--panel", str(panel), "--transform", "log",
             "--setting", "S5", "--estimand", "single", "--perms", "0"],
        )
        assert result.exit_code == 0
        payload = json.loads(result.stdout)
        assert payload["transform"] == "log"
        assert payload["point"] == pytest.approx(0.7, abs=1e-9)
        assert payload["ratio"] == pytest.approx(math.exp(0.7), abs=1e-9)

    def test_needs_panel(self, runner):
        result = runner.invoke(
            main,
            ["estimate", "--adoption", "2,3", "--n-periods", "3",
             "--setting", "S5"],
        )
        assert result.exit_code == 2
        assert "needs --panel" in result.stderr

    def test_unbalanced_panel_exit_four(self, runner, tmp_path):
        panel = tmp_path / "panel.csv"
        panel.write_text(
            "unit,period,outcome,adoption_period\n"
            "a,1,1.0,2\na,2,1.5,2\na,3,1.6,2\n"
            "b,1,2.0,3\nb,2,2.1,3\n"
        )
        result = runner.invoke(
            main, ["estimate", "--panel", str(panel), "--setting", "S5"]
        )
        assert result.exit_code == 4
        assert "data error" in result.stderr

    def test_log_domain_violation_exit_four(self, runner, tmp_path):
        panel = tmp_path / "panel.csv"
        panel.write_text(
            "unit,period,outcome,adoption_period\n"
            "a,1,0.0,2\na,2,1.5,2\na,3,1.6,2\n"
            "b,1,2.0,3\nb,2,2.1,3\nb,3,2.2,3\n"
        )
        result = runner.invoke(
            main,
            ["estimate", "--panel", str(panel), "--transform", "log",
             "--setting", "S5"],
        )
        assert result.exit_code == 4

    def test_missing_file_exit_four(self, runner, tmp_path):
        result = runner.invoke(
            main,
            ["estimate", "--panel", str(tmp_path / "nope.csv"), "--setting", "S5"],
        )
        assert result.exit_code == 4

    def test_dry_run(self, runner, tmp_path):
        panel = tmp_path / "panel.csv"
        panel.write_text(TOY_LONG)
        result = runner.invoke(
            main,
            ["estimate", "--panel", str(panel), "--setting", "S3",
             "--estimand", "avg:a=1..2", "--dry-run"],
        )
        assert result.exit_code == 0
        assert "would estimate" in result.stdout


class TestCompare:
    def test_weights_only_summary(self, runner):
        result = runner.invoke(
            main,
            ["compare", "--adoption", "2,3,never,never", "--n-periods", "4"],
        )
        assert result.exit_code == 0
        rows = rows_of(result.stdout)
        assert rows[0] == ["method", "estimate", "p_value", "n_dropped"]
        methods = [r[0] for r in rows[1:]]
        assert methods == [
            "tw", "cs:simple", "cs:dynamic", "cs:group", "cs:calendar",
            "sa", "ch", "co:1", "co:2", "co:3", "np:equal",
        ]
        # weight-only run: estimate and p columns stay empty
        assert all(r[1] == "" and r[2] == "" for r in rows[1:])

    def test_panel_estimates_and_inference(self, runner, tmp_path):
        panel = tmp_path / "panel.csv"
        panel.write_text(FOUR_UNIT_LONG)
        args = [
            "compare", "--panel", str(panel), "--methods", "tw,ch",
            "--perms", "19", "--seed", "3",
        ]
        result = runner.invoke(main, args)
        assert result.exit_code == 0
        rows = rows_of(result.stdout)
        assert len(rows) == 3
        for row in rows[1:]:
            float(row[1])
            assert 0.0 < float(row[2]) <= 1.0
        again = runner.invoke(main, args)
        assert again.stdout == result.stdout

    def test_audit_exposes_vertical_bias(self, runner, tmp_path):
        audit = tmp_path / "audit.csv"
        result = runner.invoke(
            main,
            ["compare", "--adoption", "2,3,never", "--n-periods", "3",
             "--methods", "tw,np:equal", "--audit-setting", "S5",
             "--audit-out", str(audit)],
        )
        assert result.exit_code == 0
        rows = rows_of(audit.read_text())
        assert rows[0] == ["method", "setting", "component", "coefficient"]
        values = {(r[0], r[2]): float(r[3]) for r in rows[1:]}
        assert values[("tw", "overall")] == pytest.approx(1.0, abs=1e-9)
        assert values[("tw", "max_unit_loading")] == pytest.approx(0.0, abs=1e-9)
        assert values[("np:equal", "overall")] == pytest.approx(1.0, abs=1e-9)
        assert values[("np:equal", "max_unit_loading")] > 0.1

    def test_dump_weights(self, runner, tmp_path):
        dump = tmp_path / "dumps"
        result = runner.invoke(
            main,
            ["compare", "--adoption", "2,3", "--n-periods", "3",
             "--methods", "tw,co:3", "--dump-weights", str(dump)],
        )
        assert result.exit_code == 0
        files = sorted(p.name for p in dump.iterdir())
        assert files == ["co_3_obs_weights.csv", "tw_obs_weights.csv"]
        rows = rows_of((dump / "tw_obs_weights.csv").read_text())
        assert rows[0] == ["unit", "period", "weight"]
        assert rows[1] == ["u01", "1", "-0.5"]

    def test_mixed_effects_refused(self, runner):
        result = runner.invoke(
            main,
            ["compare", "--adoption", "2,3", "--n-periods", "3",
             "--methods", "me:nested"],
        )
        assert result.exit_code == 2
        assert "mixed-effects" in result.stderr

    def test_unknown_method(self, runner):
        result = runner.invoke(
            main,
            ["compare", "--adoption", "2,3", "--n-periods", "3", "--methods", "zz"],
        )
        assert result.exit_code == 2
        assert "unknown comparison method" in result.stderr

    def test_inference_needs_panel(self, runner):
        result = runner.invoke(
            main,
            ["compare", "--adoption", "2,3", "--n-periods", "3", "--perms", "9"],
        )
        assert result.exit_code == 2
        assert "inference needs --panel" in result.stderr

    def test_degenerate_design_exit_five(self, runner, tmp_path):
        panel = tmp_path / "panel.csv"
        panel.write_text(
            "unit,period,outcome,adoption_period\n"
            "a,1,1.0,2\na,2,1.5,2\n"
            "b,1,2.0,2\nb,2,2.4,2\n"
        )
        result = runner.invoke(
            main,
            ["compare", "--panel", str(panel), "--methods", "tw", "--perms", "9"],
        )
        assert result.exit_code == 5
        assert "numerical error" in result.stderr

    def test_dry_run(self, runner):
        result = runner.invoke(
            main,
            ["compare", "--adoption", "2,3", "--n-periods", "3",
             "--methods", "tw,ch", "--dry-run"],
        )
        assert result.exit_code == 0
        assert "would compare 2 method(s)" in result.stdout


@pytest.mark.filterwarnings("ignore::UserWarning")
class TestSimulate:
    def test_tiny_study(self, runner, tmp_path):
        out = tmp_path / "study.csv"
        args = [
            "simulate", "--scenario", "2", "--sims", "2", "--perms", "0",
            "--estimators", "gd-s5,tw", "--analytic", "--seed", "5",
            "--out", str(out),
        ]
        result = runner.invoke(main, args)
        assert result.exit_code == 0, result.stderr
        rows = rows_of(out.read_text())
        assert rows[0] == [
            "scenario", "estimator", "kind", "assumption", "truth",
            "mean_estimate", "bias", "sd_estimate", "power", "n_sims", "n_perm",
        ]
        assert [r[1] for r in rows[1:]] == ["gd-s5", "tw"]
        for row in rows[1:]:
            assert row[0] == "2"
            assert float(row[4]) == pytest.approx(-0.02)
            assert float(row[6]) == pytest.approx(
                float(row[5]) - float(row[4]), abs=1e-9
            )
            assert row[8] == ""  # no permutations, no power
            assert row[9] == "2" and row[10] == "0"

    def test_deterministic_bytes(self, runner, tmp_path):
        args = [
            "simulate", "--scenario", "1", "--sims", "2", "--perms", "5",
            "--estimators", "gd-s5", "--analytic", "--seed", "4",
        ]
        first = runner.invoke(main, args)
        second = runner.invoke(main, args)
        assert first.exit_code == 0, first.stderr
        assert first.stdout == second.stdout

    def test_scenario_ranges_dry_run(self, runner):
        result = runner.invoke(
            main, ["simulate", "--scenario", "1..3,7", "--dry-run"]
        )
        assert result.exit_code == 0
        assert "scenarios 1,2,3,7" in result.stdout

    def test_bad_scenario_range(self, runner):
        result = runner.invoke(main, ["simulate", "--scenario", "5..3", "--dry-run"])
        assert result.exit_code == 2
        assert "configuration error" in result.stderr

    def test_unknown_estimator(self, runner):
        result = runner.invoke(
            main,
            ["simulate", "--scenario", "1", "--sims", "1", "--perms", "0",
             "--estimators", "nope", "--analytic"],
        )
        assert result.exit_code == 2
        assert "unknown estimator" in result.stderr

    def test_config_file(self, runner, tmp_path):
        cfg = tmp_path / "study.ini"
        cfg.write_text(
            "[study]\n"
            "scenario = 2\n"
            "sims = 2\n"
            "perms = 0\n"
            "seed = 11\n"
            "analytic = true\n"
            "estimators = gd-s5,my-a1\n"
            "\n"
            "[scenario.2]\n"
            "sigma_nu = 0.0\n"
            "\n"
            "[estimand.my-a1]\n"
            "setting = S3\n"
            "expr = single:a=1\n"
        )
        result = runner.invoke(main, ["simulate", "--config", str(cfg)])
        assert result.exit_code == 0, result.stderr
        rows = rows_of(result.stdout)
        names = [r[1] for r in rows[1:]]
        assert names == ["gd-s5", "my-a1"]
        assert all(r[9] == "2" for r in rows[1:])

    def test_cli_overrides_config(self, runner, tmp_path):
        cfg = tmp_path / "study.ini"
        cfg.write_text("[study]\nscenario = 2\nsims = 2\nperms = 0\nanalytic = true\n")
        result = runner.invoke(
            main,
            ["simulate", "--config", str(cfg), "--sims", "3",
             "--estimators", "gd-s5"],
        )
        assert result.exit_code == 0, result.stderr
        rows = rows_of(result.stdout)
        assert all(r[9] == "3" for r in rows[1:])

    def test_unknown_config_section(self, runner, tmp_path):
        cfg = tmp_path / "study.ini"
        cfg.write_text("[bogus]\nx = 1\n")
        result = runner.invoke(main, ["simulate", "--config", str(cfg), "--dry-run"])
        assert result.exit_code == 2
        assert "unknown config section" in result.stderr

    def test_missing_config_exit_four(self, runner, tmp_path):
        result = runner.invoke(
            main,
            ["simulate", "--config", str(tmp_path / "nope.ini"), "--dry-run"],
        )
        assert result.exit_code == 4
