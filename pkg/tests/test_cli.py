"""Configuration loading and command line pipeline tests.

The command runners are exercised in process through ``cli.main`` so
exit codes and artifacts can be checked without shelling out.  Frozen
expectations:

* bounds with volume 4 pi, width 1 print a genus bound of exactly 4.
* the oracle trio agrees with the closed-form values to 1e-4 at all
  fifteen probes.
* reruns of the same configuration are byte-identical for every
  artifact, SVG plots included.
"""

import os
import re

import numpy as np
import pytest

from harmcube import cli
from harmcube.config import ConfigError, build_metric, load_config
from harmcube.grid import load_fields


def write_config(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


MINIMAL_VERIFY = """
[run]
command = verify

[grid]
n = 17

[levels]
theta_samples = 8
"""


class TestConfigLoading:
    def test_defaults(self, tmp_path):
        cfg = load_config(write_config(tmp_path, "[run]\ncommand = solve\n"))
        assert cfg.command == "solve"
        assert cfg.grid_n == 33
        assert cfg.theta_samples == 32
        assert cfg.variant == "cube"
        assert cfg.metric_name == "euclidean"
        assert cfg.plots is True
        assert cfg.solver.method == "cg"

    def test_missing_command(self, tmp_path):
        with pytest.raises(ConfigError, match="command is required"):
            load_config(write_config(tmp_path, "[grid]\nn = 9\n"))

    def test_unknown_command(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown command"):
            load_config(write_config(tmp_path, "[run]\ncommand = fly\n"))

    def test_unknown_section_reports_line(self, tmp_path):
        path = write_config(tmp_path,
                            "[run]\ncommand = solve\n\n[grids]\nn = 9\n")
        with pytest.raises(ConfigError, match=r":4: \[grids\]"):
            load_config(path)

    def test_unknown_key_reports_line(self, tmp_path):
        path = write_config(
            tmp_path, "[run]\ncommand = solve\n\n[grid]\nresolution = 9\n")
        with pytest.raises(ConfigError,
                           match=r":5: \[grid\] resolution"):
            load_config(path)

    def test_bad_value_type(self, tmp_path):
        path = write_config(tmp_path,
                            "[run]\ncommand = solve\n\n[grid]\nn = coarse\n")
        with pytest.raises(ConfigError, match="cannot parse 'coarse'"):
            load_config(path)

    def test_even_grid_rejected(self, tmp_path):
        path = write_config(tmp_path,
                            "[run]\ncommand = solve\n\n[grid]\nn = 16\n")
        with pytest.raises(ConfigError, match="odd"):
            load_config(path)

    def test_syntax_error_has_line(self, tmp_path):
        path = write_config(tmp_path, "command = solve\n")
        with pytest.raises(ConfigError, match="line"):
            load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(str(tmp_path / "nope.ini"))

    def test_override_applied(self, tmp_path):
        path = write_config(tmp_path, MINIMAL_VERIFY)
        cfg = load_config(path, overrides=["grid.n=33",
                                           "solver.method=direct"])
        assert cfg.grid_n == 33
        assert cfg.solver.method == "direct"

    def test_override_unknown_key(self, tmp_path):
        path = write_config(tmp_path, MINIMAL_VERIFY)
        with pytest.raises(ConfigError, match="unknown key"):
            load_config(path, overrides=["grid.m=9"])

    def test_override_needs_equals(self, tmp_path):
        path = write_config(tmp_path, MINIMAL_VERIFY)
        with pytest.raises(ConfigError, match="section.key=value"):
            load_config(path, overrides=["grid.n"])

    def test_override_needs_dot(self, tmp_path):
        path = write_config(tmp_path, MINIMAL_VERIFY)
        with pytest.raises(ConfigError, match="dotted"):
            load_config(path, overrides=["n=9"])

    def test_out_dir_precedence(self, tmp_path, monkeypatch):
        path = write_config(
            tmp_path, "[run]\ncommand = solve\nout_dir = from_file\n")
        monkeypatch.setenv("HARMCUBE_OUT_DIR", "from_env")
        assert load_config(path).out_dir == "from_file"
        assert load_config(path, out_dir="from_flag").out_dir == "from_flag"
        bare = write_config(tmp_path, "[run]\ncommand = solve\n",
                            name="bare.ini")
        assert load_config(bare).out_dir == "from_env"
        monkeypatch.delenv("HARMCUBE_OUT_DIR")
        assert load_config(bare).out_dir == "out"

    def test_converge_needs_three_sizes(self, tmp_path):
        path = write_config(
            tmp_path,
            "[run]\ncommand = converge\n\n[converge]\nsizes = 9, 17\n")
        with pytest.raises(ConfigError, match="three"):
            load_config(path)

    def test_bounds_requires_volume(self, tmp_path):
        path = write_config(tmp_path, "[run]\ncommand = bounds\n")
        with pytest.raises(ConfigError, match="volume"):
            load_config(path)


class TestMetricBuilding:
    def build(self, tmp_path, body):
        return build_metric(load_config(write_config(
            tmp_path, "[run]\ncommand = solve\n\n[metric]\n" + body)))

    def test_conformal(self, tmp_path):
        metric = self.build(tmp_path,
                            "name = conformal\nf = 0.1*sin(pi*x1)\n")
        assert metric.name == "conformal"
        g = metric.matrix(np.array([0.5, 0.5, 0.5]))
        assert g[0, 0] == pytest.approx(np.exp(0.2), rel=1e-12)

    def test_conformal_requires_f(self, tmp_path):
        with pytest.raises(ConfigError, match="f is required"):
            self.build(tmp_path, "name = conformal\n")

    def test_warped_default_profile(self, tmp_path):
        metric = self.build(tmp_path, "name = warped\n")
        g = metric.matrix(np.array([0.5, 0.0, 0.0]))
        assert g[2, 2] == pytest.approx(1.1 ** 2, rel=1e-12)

    def test_diagonal(self, tmp_path):
        metric = self.build(tmp_path,
                            "name = diagonal\nd1 = 1\nd2 = 1\nd3 = 4\n")
        g = metric.matrix(np.array([0.2, 0.3, 0.4]))
        assert g[2, 2] == pytest.approx(4.0)

    def test_diagonal_missing_entry(self, tmp_path):
        with pytest.raises(ConfigError, match="d3"):
            self.build(tmp_path, "name = diagonal\nd1 = 1\nd2 = 1\n")

    def test_entries_table(self, tmp_path):
        metric = self.build(
            tmp_path,
            "name = entries\ng11 = 1\ng22 = 1\ng33 = (1 + 0.2*x1)^2\n")
        g = metric.matrix(np.array([1.0, 0.0, 0.0]))
        assert g[2, 2] == pytest.approx(1.44, rel=1e-12)

    def test_entries_missing_diagonal(self, tmp_path):
        with pytest.raises(ConfigError, match="g33"):
            self.build(tmp_path, "name = entries\ng11 = 1\ng22 = 1\n")

    def test_bad_expression(self, tmp_path):
        with pytest.raises(ConfigError):
            self.build(tmp_path, "name = conformal\nf = sin(\n")


@pytest.fixture(scope="module")
def verify_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("verify")
    cfg = write_config(tmp, MINIMAL_VERIFY)
    out = str(tmp / "artifacts")
    status = cli.main(["--config", cfg, "--out", out, "--quiet"])
    return status, out


class TestVerifyCommand:
    def test_exit_status(self, verify_run):
        assert verify_run[0] == 0

    def test_artifact_set(self, verify_run):
        names = sorted(os.listdir(verify_run[1]))
        assert names == ["area_theta.svg", "chi_theta.svg",
                         "gb_residual_theta.svg", "inequality_report.csv",
                         "inequality_report.txt", "levels.csv",
                         "solution.gfc"]

    def test_levels_table(self, verify_run):
        lines = open(os.path.join(verify_run[1], "levels.csv"),
                     newline="").read().splitlines()
        assert lines[0] == ("theta,area,chi,boundary_length,"
                            "gb_residual,regular")
        rows = [line.split(",") for line in lines[1:]]
        assert len(rows) == 8
        thetas = [float(r[0]) for r in rows]
        assert thetas == pytest.approx([(k + 0.5) / 8 for k in range(8)])
        assert all(int(r[2]) == 1 for r in rows)
        assert all(r[5] == "1" for r in rows)

    def test_report_record(self, verify_run):
        lines = open(os.path.join(verify_run[1], "inequality_report.csv"),
                     newline="").read().splitlines()
        header = lines[0].split(",")
        values = dict(zip(header, lines[1].split(",")))
        assert values["passed"] == "1"
        assert abs(float(values["slack"])) <= 1e-6
        assert values["variant"] == "cube"

    def test_report_text_verdict(self, verify_run):
        text = open(os.path.join(verify_run[1],
                                 "inequality_report.txt")).read()
        assert "verdict: PASS" in text
        assert "hess_term" in text

    def test_solution_container_roundtrip(self, verify_run):
        grid, fields, header = load_fields(
            os.path.join(verify_run[1], "solution.gfc"))
        assert grid.n == 17
        assert header["metric_name"] == "euclidean"
        x3 = grid.points()[..., 2]
        assert np.max(np.abs(fields["u"] - x3)) <= 1e-9

    def test_svg_is_wellformed(self, verify_run):
        body = open(os.path.join(verify_run[1], "area_theta.svg")).read()
        assert body.lstrip().startswith("<?xml")
        assert "</svg>" in body

    def test_rerun_byte_identical(self, verify_run, tmp_path):
        cfg = write_config(tmp_path, MINIMAL_VERIFY)
        out = str(tmp_path / "again")
        assert cli.main(["--config", cfg, "--out", out, "--quiet"]) == 0
        for name in os.listdir(verify_run[1]):
            one = open(os.path.join(verify_run[1], name), "rb").read()
            two = open(os.path.join(out, name), "rb").read()
            assert one == two, f"{name} differs between reruns"

    def test_quiet_silences_progress(self, tmp_path, capsys):
        cfg = write_config(tmp_path, MINIMAL_VERIFY)
        cli.main(["--config", cfg, "--out", str(tmp_path / "o"), "--quiet"])
        assert capsys.readouterr().out == ""

    def test_euclidean_production_grid(self, tmp_path):
        cfg = write_config(tmp_path, MINIMAL_VERIFY)
        out = str(tmp_path / "artifacts")
        status = cli.main(["--config", cfg, "--out", out, "--quiet",
                           "--override", "grid.n=33"])
        assert status == 0
        lines = open(os.path.join(out, "inequality_report.csv"),
                     newline="").read().splitlines()
        values = dict(zip(lines[0].split(","), lines[1].split(",")))
        assert abs(float(values["slack"])) <= 1e-6


class TestSolveCommand:
    def test_no_inequality_artifacts(self, tmp_path):
        cfg = write_config(tmp_path, MINIMAL_VERIFY.replace(
            "command = verify", "command = solve"))
        out = str(tmp_path / "artifacts")
        assert cli.main(["--config", cfg, "--out", out, "--quiet"]) == 0
        names = os.listdir(out)
        assert "levels.csv" in names
        assert "inequality_report.txt" not in names

    def test_plots_disabled(self, tmp_path):
        cfg = write_config(tmp_path, MINIMAL_VERIFY.replace(
            "command = verify", "command = solve") + "\n[plots]\nenabled = no\n")
        out = str(tmp_path / "artifacts")
        assert cli.main(["--config", cfg, "--out", out, "--quiet"]) == 0
        assert not [n for n in os.listdir(out) if n.endswith(".svg")]

    def test_progress_lines(self, tmp_path, capsys):
        cfg = write_config(tmp_path, MINIMAL_VERIFY.replace(
            "command = verify", "command = solve"))
        cli.main(["--config", cfg, "--out", str(tmp_path / "o")])
        out = capsys.readouterr().out
        assert "solved euclidean on n = 17" in out
        assert "levels.csv" in out


ORACLE_CONFIG = "[run]\ncommand = oracle\n"


class TestOracleCommand:
    def test_trio_passes(self, tmp_path, capsys):
        cfg = write_config(tmp_path, ORACLE_CONFIG)
        out = str(tmp_path / "artifacts")
        assert cli.main(["--config", cfg, "--out", out]) == 0
        assert "PASS" in capsys.readouterr().out
        lines = open(os.path.join(out, "oracle_probes.csv"),
                     newline="").read().splitlines()
        assert lines[0].split(",")[0] == "case"
        rows = [line.split(",") for line in lines[1:]]
        assert len(rows) == 15
        assert {r[0] for r in rows} == {"even_quadratic",
                                        "vertical_linear", "bilinear"}
        assert max(float(r[7]) for r in rows) <= 1e-4

    def test_domain_filter(self, tmp_path):
        cfg = write_config(tmp_path,
                           ORACLE_CONFIG + "\n[oracle]\ndomain = half_ball\n")
        out = str(tmp_path / "artifacts")
        assert cli.main(["--config", cfg, "--out", out, "--quiet"]) == 0
        lines = open(os.path.join(out, "oracle_probes.csv"),
                     newline="").read().splitlines()
        assert len(lines) == 6
        assert all(line.split(",")[1] == "half_ball" for line in lines[1:])

    def test_empty_selection_is_config_error(self, tmp_path):
        cfg = write_config(
            tmp_path, ORACLE_CONFIG
            + "\n[oracle]\ncase = bilinear\ndomain = half_ball\n")
        assert cli.main(["--config", cfg, "--out",
                         str(tmp_path / "o")]) == 1

    def test_unreachable_tolerance_fails(self, tmp_path, capsys):
        cfg = write_config(tmp_path, ORACLE_CONFIG)
        status = cli.main(["--config", cfg, "--out", str(tmp_path / "o"),
                           "--override", "oracle.tol=1e-16"])
        assert status == 2
        assert "FAIL" in capsys.readouterr().out


class TestConvergeCommand:
    def test_orders_table(self, tmp_path, capsys):
        cfg = write_config(tmp_path, (
            "[run]\ncommand = converge\n\n"
            "[converge]\nsizes = 9, 17, 33\n"))
        out = str(tmp_path / "artifacts")
        assert cli.main(["--config", cfg, "--out", out]) == 0
        printed = capsys.readouterr().out
        assert "exact at solver roundoff" in printed
        lines = open(os.path.join(out, "orders.csv"),
                     newline="").read().splitlines()
        assert lines[0] == "expression,n,max_error,order,flag"
        rows = [line.split(",") for line in lines[1:]]
        assert len(rows) == 6
        mode = [r for r in rows if r[0].startswith("sin")]
        assert mode[-1][4] == "ok"
        assert float(mode[-1][3]) >= 1.8
        linear = [r for r in rows if r[0] == "x3"]
        assert all(r[4] == "exact" for r in linear)

    def test_slack_study(self, tmp_path, capsys):
        cfg = write_config(tmp_path, (
            "[run]\ncommand = converge\n\n"
            "[metric]\nname = conformal\nf = 0.05*sin(pi*x1)*sin(pi*x2)\n\n"
            "[converge]\nsizes = 9, 17, 33\nslack_sizes = 17, 33\n\n"
            "[levels]\ntheta_samples = 8\n"))
        out = str(tmp_path / "artifacts")
        assert cli.main(["--config", cfg, "--out", out]) == 0
        assert "monotone" in capsys.readouterr().out
        lines = open(os.path.join(out, "slack.csv"),
                     newline="").read().splitlines()
        assert lines[0] == "n,slack,error_estimate,passed"
        bars = [float(line.split(",")[2]) for line in lines[1:]]
        assert bars[1] < bars[0]


class TestBoundsCommand:
    def test_genus_four(self, tmp_path, capsys):
        cfg = write_config(tmp_path, (
            "[run]\ncommand = bounds\n\n"
            "[bounds]\nvolume = 12.566370614359172\nwidth = 1.0\n"))
        out = str(tmp_path / "artifacts")
        assert cli.main(["--config", cfg, "--out", out]) == 0
        printed = capsys.readouterr().out
        match = re.search(r"genus bound \(width\):\s+(\S+)", printed)
        assert match and float(match.group(1)) == 4.0
        assert open(os.path.join(out, "bounds.txt")).read().strip() \
            in printed

    def test_entropy_sandwich(self, tmp_path, capsys):
        cfg = write_config(tmp_path, (
            "[run]\ncommand = bounds\n\n"
            "[bounds]\nvolume = 18.849555921538759\neuler = 2\n"
            "bilipschitz = 1.0\n"))
        assert cli.main(["--config", cfg, "--out",
                         str(tmp_path / "o")]) == 0
        printed = capsys.readouterr().out
        lower = re.search(r"entropy lower:\s+(\S+)", printed)
        upper = re.search(r"entropy upper:\s+(\S+)", printed)
        assert float(lower.group(1)) == pytest.approx(1.0, abs=1e-12)
        assert float(upper.group(1)) == pytest.approx(4.5, abs=1e-12)

    def test_no_derivable_bound(self, tmp_path):
        cfg = write_config(tmp_path, (
            "[run]\ncommand = bounds\n\n[bounds]\nvolume = 1.0\n"))
        assert cli.main(["--config", cfg, "--out",
                         str(tmp_path / "o")]) == 1


class TestErrorPaths:
    def test_config_error_exit(self, tmp_path, capsys):
        cfg = write_config(tmp_path,
                           "[run]\ncommand = solve\n\n[grid]\nm = 9\n")
        assert cli.main(["--config", cfg]) == 1
        assert "unknown key" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path, capsys):
        assert cli.main(["--config", str(tmp_path / "nope.ini")]) == 1
        assert "cannot read" in capsys.readouterr().err

    def test_bad_flag_exits_one(self, capsys):
        # argument errors must not collide with the check-failed status
        assert cli.main(["--confg", "x.ini"]) == 1
        assert "argument error" in capsys.readouterr().err

    def test_solver_failure_has_context(self, tmp_path, capsys):
        cfg = write_config(tmp_path, (
            "[run]\ncommand = solve\n\n"
            "[metric]\nname = entries\ng11 = 0\ng22 = 1\ng33 = 1\n\n"
            "[grid]\nn = 9\n"))
        assert cli.main(["--config", cfg, "--out",
                         str(tmp_path / "o")]) == 1
        err = capsys.readouterr().err
        assert "solve failed" in err and "n = 9" in err

    def test_failed_run_leaves_no_partial_artifacts(self, tmp_path,
                                                    monkeypatch, capsys):
        # make the levels writer blow up mid-run and check staging
        from harmcube import report as rep

        def boom(path, levels):
            with rep.atomic_write(path, "w") as fh:
                fh.write("partial")
                raise RuntimeError("simulated writer crash")

        monkeypatch.setattr(cli.report, "write_levels_csv", boom)
        cfg = write_config(tmp_path, MINIMAL_VERIFY)
        out = tmp_path / "artifacts"
        assert cli.main(["--config", cfg, "--out", str(out)]) == 1
        assert "simulated writer crash" in capsys.readouterr().err
        leftovers = [n for n in os.listdir(out)
                     if "levels" in n or n.endswith(".tmp")]
        assert leftovers == []
