"""Command-line runner: subcommands, exit codes, and output files."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import pytest

from ssk.cli import cli_main

UNI_MINI = {
    "model": "unicycle",
    "T": 0.2,
    "dt": 0.001,
    "trajectories": 4,
    "seed": 11,
    "model_params": {"x0": [-1.0, 0.0, 0.0]},
}

ACC_MINI = {
    "model": "acc",
    "T": 0.05,
    "dt": 0.0005,
    "trajectories": 3,
    "seed": 12,
    "saturate_after": True,
}


@pytest.fixture
def uni_config(tmp_path):
    path = tmp_path / "uni.json"
    path.write_text(json.dumps(UNI_MINI))
    return path


@pytest.fixture
def acc_config(tmp_path):
    path = tmp_path / "acc.json"
    path.write_text(json.dumps(ACC_MINI))
    return path


class TestExitCodes:
    def test_missing_config_is_config_error(self, tmp_path, capsys):
        code = cli_main(["bounds", "--config", str(tmp_path / "nope.json")])
        assert code == 1
        assert "not found" in capsys.readouterr().err

    def test_unknown_key_is_config_error(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"model": "acc", "horizont": 2.0}))
        code = cli_main(["estimate", "--config", str(path), "--out", str(tmp_path)])
        assert code == 1
        assert "horizont" in capsys.readouterr().err

    def test_invalid_json_is_config_error(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        assert cli_main(["bounds", "--config", str(path)]) == 1

    def test_runtime_error_exit_code(self, uni_config):
        # unwritable output directory surfaces as a runtime failure
        code = cli_main(
            ["estimate", "--config", str(uni_config), "--out", "/proc/nope/out"]
        )
        assert code == 2

    def test_bad_set_syntax(self, uni_config):
        assert cli_main(["bounds", "--config", str(uni_config), "--set", "oops"]) == 1


class TestBoundsCommand:
    def test_prints_ratio_bound_for_disk(self, uni_config, capsys):
        code = cli_main(
            [
                "bounds",
                "--config",
                str(uni_config),
                "--set",
                "certificate.family=scbf",
                "--set",
                "model_params.x0=[0.0,1.5,0.0]",
            ]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "scbf" in out
        assert "0.75" in out  # h(xi)/c = 6.75/9

    def test_product_bound_printed(self, uni_config, capsys):
        code = cli_main(["bounds", "--config", str(uni_config)])
        assert code == 0
        out = capsys.readouterr().out
        assert "ho_scbf" in out


class TestEstimateCommand:
    def test_writes_report_json(self, uni_config, tmp_path, capsys):
        out = tmp_path / "est"
        code = cli_main(["estimate", "--config", str(uni_config), "--out", str(out)])
        assert code == 0
        report = json.loads((out / "safety_report.json").read_text())
        assert report["trajectories"] == 4
        assert 0.0 <= report["empirical_probability"] <= 1.0
        assert "empirical safety" in capsys.readouterr().out


class TestSimulateCommand:
    def test_writes_trajectories_and_manifest(self, uni_config, tmp_path):
        out = tmp_path / "sim"
        code = cli_main(["simulate", "--config", str(uni_config), "--out", str(out)])
        assert code == 0
        csvs = sorted(out.glob("trajectory_*.csv"))
        assert len(csvs) == 4
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 11
        assert manifest["config"]["model"] == "unicycle"
        assert manifest["version"].startswith("ssk-")
        header = csvs[0].read_text().splitlines()[0]
        assert header == "t,x_0,x_1,x_2,u_0,h,J"


class TestCompareCommand:
    def test_four_cells_and_table(self, acc_config, tmp_path, capsys):
        out = tmp_path / "cmp"
        code = cli_main(["compare", "--config", str(acc_config), "--out", str(out)])
        assert code == 0
        report = json.loads((out / "compare_report.json").read_text())
        cells = {(c["family"], c["bounded"]) for c in report["cells"]}
        assert cells == {
            ("srcbf", False),
            ("srcbf", True),
            ("scbf", False),
            ("scbf", True),
        }
        table = capsys.readouterr().out
        assert "unbounded control" in table and "bounded control" in table

    def test_byte_identical_reports(self, acc_config, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert cli_main(["compare", "--config", str(acc_config), "--out", str(out1)]) == 0
        assert cli_main(["compare", "--config", str(acc_config), "--out", str(out2)]) == 0
        b1 = (out1 / "compare_report.json").read_bytes()
        b2 = (out2 / "compare_report.json").read_bytes()
        assert b1 == b2


class TestSweepCommand:
    def test_writes_plot_ready_csv(self, uni_config, tmp_path):
        out = tmp_path / "sweep"
        code = cli_main(
            [
                "sweep",
                "--config",
                str(uni_config),
                "--out",
                str(out),
                "--sigmas",
                "0.0,0.1",
            ]
        )
        assert code == 0
        with open(out / "sweep.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["sigma", "family", "p", "lo", "hi"]
        assert len(rows) == 1 + 4  # 2 sigmas x 2 families

    def test_shipped_configs_load(self):
        # the in-repo example configs must satisfy the strict schema
        from ssk.harness import ScenarioConfig

        for name in ("acc.json", "unicycle.json"):
            data = json.loads((Path(__file__).parent.parent / "configs" / name).read_text())
            cfg = ScenarioConfig.from_dict(data)
            assert cfg.trajectories > 0
