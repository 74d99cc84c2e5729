import json
import os
import subprocess
import sys

import pandas as pd
import pytest

from pollwait import config as confmod
from pollwait.cli import SUBCOMMANDS, main
from pollwait.errors import ConfigInvalid

SIM = ["--set", "sim.n_places=30", "--set", "sim.voters_per_place=30"]


@pytest.fixture(scope="module")
def full_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data, out = root / "data", root / "out"
    cfg = root / "run.cfg"
    cfg.write_text(f"run.out_dir={out}\ndata.dir={data}\nrun.seed=5\nsim.n_places=30\nsim.voters_per_place=30\n")
    assert main(["all", "--config", str(cfg)]) == 0
    return root, cfg, data, out


def _error(capsys):
    err = capsys.readouterr().err.strip().splitlines()[-1]
    return json.loads(err)


def test_all_produces_declared_artifacts(full_run):
    _, _, data, out = full_run
    for name in ("table1.csv", "regions.csv", "attrition.csv", "radius_scan.csv", "density.csv", "hourly.csv",
                 "placebo.csv", "spells.csv", "survivors.csv", "histogram.csv", "cces.csv", "manifest.json"):
        assert (out / name).stat().st_size > 0, name
    assert (data / "pings.csv").exists()
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "all" and man["seed"] == 5
    for name in man["outputs"].split(","):
        assert (out / name).stat().st_size > 0, name
    assert any(n.startswith("figures/") and n.endswith(".png") for n in man["outputs"].split(","))
    assert "input.pings.csv.sha256" in man
    assert not any("threads" in k or "out_dir" in k for k in man)


def test_output_schemas(full_run):
    out = full_run[3]
    assert list(pd.read_csv(out / "radius_scan.csv").columns)[:4] == ["radius_m", "count_target", "mean_count_other", "diff"]
    assert list(pd.read_csv(out / "attrition.csv").columns) == ["stage", "devices_in", "devices_out"]
    assert list(pd.read_csv(out / "regions.csv").columns) == [
        "region", "n", "raw_mean", "sd", "adjusted_mean", "raw_disparity", "disparity_se", "adjusted_disparity",
    ]
    assert list(pd.read_csv(out / "spells.csv").columns) == [
        "device_id", "place_id", "day", "lower_min", "upper_min", "midpoint_min", "arrival_hour", "hull_ping",
    ]
    assert {"x", "density", "group"} <= set(pd.read_csv(out / "density.csv").columns)
    assert {"hour", "volume", "mean_wait", "group"} <= set(pd.read_csv(out / "hourly.csv").columns)
    placebo = pd.read_csv(out / "placebo.csv")
    assert len(placebo) == 15 and placebo["is_target"].sum() == 1


def test_single_subcommand_summary(full_run, capsys):
    _, cfg, _, out = full_run
    assert main(["filter", "-c", str(cfg)]) == 0
    line = capsys.readouterr().out.strip()
    assert line.startswith("filter: ok") and "likely_voters=" in line
    assert json.loads((out / "manifest.json").read_text())["command"] == "filter"


def test_auto_radius(full_run, capsys, tmp_path):
    _, cfg, _, _ = full_run
    assert main(["spells", "-c", str(cfg), "--out", str(tmp_path), "--set", "spells.radius_m=auto"]) == 0
    assert (tmp_path / "spells.csv").exists()


def test_missing_config_key_exit_1(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"run.out_dir={tmp_path}\n")
    assert main(["ingest", "--config", str(cfg)]) == 1
    rec = _error(capsys)
    assert rec["status"] == "error" and rec["error"] == "ConfigInvalid"
    assert "data.dir" in rec["message"]


def test_unknown_key_and_bad_values(tmp_path, capsys):
    assert main(["ingest", "--out", str(tmp_path), "--data", str(tmp_path), "--set", "filter.nope=1"]) == 1
    assert "filter.nope" in _error(capsys)["message"]
    assert main(["filter", "--out", str(tmp_path), "--data", str(tmp_path), "--set", "filter.max_upper_min=abc"]) == 1
    assert main(["ingest", "--out", str(tmp_path), "--data", str(tmp_path), "--set", "novalue"]) == 1


def test_missing_data_exit_1(tmp_path, capsys):
    assert main(["ingest", "--out", str(tmp_path / "o"), "--data", str(tmp_path / "none")]) == 1
    assert _error(capsys)["error"] == "FileNotFoundError"


def test_report_without_plot_data_exit_1(tmp_path, capsys):
    assert main(["report", "--out", str(tmp_path), "--data", str(tmp_path)]) == 1


def test_unknown_subcommand_usage_exit_2():
    r = subprocess.run([sys.executable, "-m", "pollwait.cli", "frobnicate"], capture_output=True, text=True)
    assert r.returncode == 2
    assert "usage" in r.stderr.lower()
    with pytest.raises(SystemExit) as ei:
        main(["frobnicate"])
    assert ei.value.code == 2


def test_subcommand_set():
    assert set(SUBCOMMANDS) == {"simulate", "ingest", "radius-scan", "spells", "filter", "regress", "regions",
                                "shrink", "density", "cces", "placebo", "report", "all"}


def test_config_precedence(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("spells.lambda=0.3\n# comment\nfilter.max_upper_min=60\n")
    cfg = confmod.load(p, {"spells.lambda": "0.7"})
    assert cfg["spells.lambda"] == "0.7"
    assert cfg["radius.gain_threshold"] == "0.02"
    assert confmod.filter_config(cfg).max_upper_min == 60.0
    p.write_text("no equals sign\n")
    with pytest.raises(ConfigInvalid):
        confmod.load(p)
    with pytest.raises(ConfigInvalid):
        confmod.load(tmp_path / "missing.cfg")


def test_simulate_subcommand(tmp_path, capsys):
    args = ["simulate", "--out", str(tmp_path / "o"), "--data", str(tmp_path / "d"), "--seed", "3"] + SIM
    assert main(args) == 0
    assert "simulated_pings=" in capsys.readouterr().out
    assert sorted(os.listdir(tmp_path / "d")) == sorted(
        ["pings.csv", "places.csv", "footprints.csv", "blockgroups.csv", "truth.csv", "devices.csv", "survey.csv",
         "scenario.txt"]
    )
