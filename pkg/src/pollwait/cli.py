"""Command-line entry point: ``pollwait <subcommand> --config run.cfg``."""

from __future__ import annotations

import argparse
import functools
import hashlib
import json
import os
import sys
from typing import Optional

import numpy as np
import pandas as pd
import scipy
from threadpoolctl import threadpool_limits

from . import __version__
from . import config as confmod
from . import pipeline as pp
from . import regress
from .errors import PollWaitError
from .filters import FilterConfig
from .radiusscan import select_radius
from .spells import export_frame

SUBCOMMANDS = (
    "simulate", "ingest", "radius-scan", "spells", "filter", "regress", "regions",
    "shrink", "density", "cces", "placebo", "report", "all",
)
HELP = {
    "simulate": "write a synthetic scenario into data.dir",
    "ingest": "load and validate the inputs",
    "radius-scan": "differential device counts over candidate radii",
    "spells": "dwell spells with lower and upper wait bounds",
    "filter": "likely-voter filter chain and attrition",
    "regress": "disparity ladder, hour windows, congestion and robustness tables",
    "regions": "per-state, per-county and per-district effects",
    "shrink": "empirical-Bayes adjusted region tables",
    "density": "wait-time densities, histogram and hourly profile",
    "cces": "survey comparison by state",
    "placebo": "the baseline fit on every non-target day",
    "report": "render figures from existing outputs",
    "all": "simulate if data.dir is empty, then every step and the report",
}
FLOAT_FMT = "%.10g"


class Runner:
    """Lazily computed pipeline state shared by the subcommands of one invocation."""

    def __init__(self, cfg: dict):
        self.cfg = cfg
        self.out_dir = cfg["run.out_dir"]
        self.data_dir = cfg["data.dir"]
        self.written: list[str] = []
        self.summary: dict[str, object] = {}
        os.makedirs(self.out_dir, exist_ok=True)

    # -- helpers
    def write(self, name: str, df: pd.DataFrame) -> None:
        path = os.path.join(self.out_dir, name)
        df.to_csv(path, index=False, float_format=FLOAT_FMT, lineterminator="\n")
        if name not in self.written:
            self.written.append(name)

    @functools.cached_property
    def fcfg(self) -> FilterConfig:
        return confmod.filter_config(self.cfg)

    @functools.cached_property
    def lam(self) -> float:
        return float(self.cfg["spells.lambda"])

    @functools.cached_property
    def inputs(self) -> pp.Inputs:
        return pp.load_inputs(self.cfg)

    @functools.cached_property
    def scan(self):
        excl = [d.strip() for d in self.cfg["radius.exclude_days"].split(",") if d.strip()]
        return pp.radius_scan(self.inputs, confmod.floats(self.cfg["radius.radii"]), excl)

    @functools.cached_property
    def radius(self) -> float:
        r = self.cfg["spells.radius_m"]
        if r == "auto":
            return float(select_radius(self.scan[0], float(self.cfg["radius.gain_threshold"])))
        return float(r)

    @functools.cached_property
    def core(self) -> pp.CoreResult:
        return pp.run_core(self.inputs, self.radius, self.fcfg, self.lam)

    @functools.cached_property
    def rows(self) -> pd.DataFrame:
        pp.require_rows(self.core.rows)
        return self.core.rows

    @functools.cached_property
    def region_tables(self) -> dict[str, pd.DataFrame]:
        min_n = int(self.cfg["regions.min_n"])
        out = {}
        for level, col in (("state", "state"), ("county", "county"), ("district", "district")):
            out[level] = pp.regions(self.rows, col, min_n)
        return out

    # -- subcommands
    def simulate(self):
        from .synth import simulate

        sc = confmod.scenario(self.cfg)
        sim = simulate(sc)
        sim.write(self.data_dir)
        self.summary.update(simulated_pings=len(sim.pings), simulated_devices=len(sim.devices))

    def ingest(self):
        inp = self.inputs
        rep = inp.pings.report
        self.write(
            "ingest.csv",
            pd.DataFrame(
                [
                    ("pings", rep.rows_in, rep.rows_loaded, rep.rows_skipped),
                    ("places", len(inp.places), len(inp.places), 0),
                    ("blockgroups", len(inp.blockgroups), len(inp.blockgroups), 0),
                ],
                columns=["file", "rows_in", "rows_loaded", "rows_skipped"],
            ),
        )
        self.summary.update(pings=rep.rows_loaded, places=len(inp.places))

    def radius_scan(self):
        curve, long = self.scan
        sel = select_radius(curve, float(self.cfg["radius.gain_threshold"]))
        df = curve.to_frame()
        df["selected"] = (df["radius_m"] == sel).astype(int)
        self.write("radius_scan.csv", df)
        self.write("daily_devices.csv", long)
        self.summary["selected_radius_m"] = sel

    def spells(self):
        self.write("spells.csv", export_frame(self.core.spells))
        self.summary["spells"] = len(self.core.spells)

    def filter(self):
        self.write("attrition.csv", self.core.attrition)
        self.write("survivors.csv", self.core.rows)
        self.summary["likely_voters"] = len(self.core.rows)

    def regress(self):
        rows = self.rows
        self.write("table1.csv", pp.ladder_frame(rows))
        b1 = regress.hour_restricted(rows)
        labels = [f"[{lo},{hi})" for lo, hi in regress.HOUR_WINDOWS]
        t = regress.results_table(b1)
        t.columns = ["term"] + labels
        self.write("hour_windows.csv", t)
        try:
            cong = regress.congestion_models(rows)
        except PollWaitError as e:
            self.summary["congestion_skipped"] = type(e).__name__
        else:
            self.write("tableB3.csv", regress.results_table(cong.controls))
            self.write("tableB4.csv", regress.results_table(cong.interaction))
            self.write("congestion_lines.csv", cong.lines)
        strict = pp.run_core(self.inputs, self.radius, FilterConfig(**{**_fields(self.fcfg), "strict_cross_place": True}),
                             self.lam, spells=self.core.spells)
        self.write("table1_strict.csv", pp.ladder_frame(strict.rows))
        self.write(
            "robustness.csv",
            pp.robustness(self.inputs, self.core, self.fcfg, confmod.floats(self.cfg["robust.lambdas"]),
                          confmod.floats(self.cfg["robust.radii"])),
        )
        col1 = regress.disparity_table(rows, "col1")
        self.summary.update(col1_frac_black=round(col1.coef["frac_black"], 4),
                            col1_se=round(col1.se["frac_black"], 4))

    def regions(self):
        min_n = int(self.cfg["regions.min_n"])
        for level in ("state", "county", "district"):
            eff = regress.region_effects(self.rows[self.rows[level].astype(str) != ""], level, min_n)
            self.write(f"region_effects_{level}.csv", eff)

    def shrink(self):
        for level, df in self.region_tables.items():
            self.write("regions.csv" if level == "state" else f"regions_{level}.csv", df)

    def density(self):
        d, h, hist, shares = pp.density_outputs(
            self.rows, self.inputs.calendar, float(self.cfg["density.half_width"]), float(self.cfg["density.bin_width"])
        )
        self.write("density.csv", d)
        self.write("hourly.csv", h)
        self.write("histogram.csv", hist)
        self.summary.update({k: round(v, 4) for k, v in shares.items()})

    def cces(self):
        if self.inputs.survey is None:
            raise PollWaitError(f"no survey.csv in {self.data_dir}")
        df, r = pp.cces_compare(self.region_tables["state"], self.inputs.survey)
        self.write("cces.csv", df)
        self.summary["cces_r"] = round(r, 4)

    def placebo(self):
        df = pp.placebo(self.inputs, self.core, self.fcfg)
        self.write("placebo.csv", df)
        self.summary["placebo_max_share"] = round(
            float(df.loc[df["is_target"] == 0, "survivors"].max() / max(1, df.loc[df["is_target"] == 1, "survivors"].iloc[0])), 4
        )

    def report(self):
        from .plotting import render_all

        paths = render_all(self.out_dir)
        if not paths:
            raise PollWaitError(f"no plot-data files in {self.out_dir}")
        for p in paths:
            rel = os.path.relpath(p, self.out_dir)
            if rel not in self.written:
                self.written.append(rel)
        self.summary["figures"] = len(paths)

    def all(self):
        if not os.path.exists(os.path.join(self.data_dir, "pings.csv")):
            self.simulate()
        for step in ("ingest", "radius_scan", "spells", "filter", "regress", "regions", "shrink",
                     "density", "cces", "placebo", "report"):
            if step == "cces" and self.inputs.survey is None:
                continue
            getattr(self, step)()

    def manifest(self, command: str) -> None:
        inputs = {}
        for name in sorted(os.listdir(self.data_dir)) if os.path.isdir(self.data_dir) else []:
            p = os.path.join(self.data_dir, name)
            if os.path.isfile(p):
                with open(p, "rb") as fh:
                    inputs[f"input.{name}.sha256"] = hashlib.sha256(fh.read()).hexdigest()
        info = {
            "command": command,
            "seed": int(self.cfg["run.seed"]),
            "outputs": ",".join(sorted(self.written)),
            "version.pollwait": __version__,
            "version.numpy": np.__version__,
            "version.pandas": pd.__version__,
            "version.scipy": scipy.__version__,
            **inputs,
            **{f"config.{k}": v for k, v in sorted(self.cfg.items())
               if k not in ("run.threads", "sim.threads", "run.out_dir", "data.dir")},
        }
        with open(os.path.join(self.out_dir, "manifest.json"), "w") as fh:
            json.dump(info, fh, indent=1, sort_keys=True)
            fh.write("\n")


def _fields(fcfg: FilterConfig) -> dict:
    return {f: getattr(fcfg, f) for f in fcfg.__dataclass_fields__}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pollwait", description="Polling-place wait times from ping data.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, metavar="subcommand")
    for name in SUBCOMMANDS:
        s = sub.add_parser(name, help=HELP[name])
        s.add_argument("--config", "-c", help="key=value config file")
        s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        s.add_argument("--seed", type=int)
        s.add_argument("--threads", type=int)
        s.add_argument("--out", help="run.out_dir")
        s.add_argument("--data", help="data.dir")
    return p


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = {}
        for item in args.set:
            k, eq, v = item.partition("=")
            if not eq:
                raise confmod.ConfigInvalid(f"--set expects KEY=VALUE, got {item!r}")
            overrides[k.strip()] = v.strip()
        for flag, key in ((args.seed, "run.seed"), (args.threads, "run.threads"),
                          (args.out, "run.out_dir"), (args.data, "data.dir")):
            if flag is not None:
                overrides[key] = str(flag)
        cfg = confmod.load(args.config, overrides)
        confmod.require(cfg, *confmod.REQUIRED)
        runner = Runner(cfg)
        with threadpool_limits(1):
            getattr(runner, args.command.replace("-", "_"))()
        runner.manifest(args.command)
    except (PollWaitError, OSError, ValueError, KeyError) as e:
        record = {"status": "error", "command": args.command, "error": type(e).__name__, "message": str(e)}
        print(json.dumps(record), file=sys.stderr)
        return 1
    parts = " ".join(f"{k}={v}" for k, v in runner.summary.items())
    print(f"{args.command}: ok {parts}".rstrip())
    return 0


if __name__ == "__main__":
    sys.exit(main())
