"""End-to-end analysis steps shared by the CLI and the acceptance tests."""

from __future__ import annotations

import datetime as dt
import os
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from . import density as dens
from . import regress
from .cces import InsufficientOverlap, correlate_regions, load_survey, survey_region_means
from .errors import ConfigInvalid, DegenerateField, EmptyInput, PollWaitError
from .filters import HourMasks, FilterConfig, apply_filters, placebo_sample
from .ingest import (
    PingTable,
    StudyCalendar,
    load_blockgroups,
    load_devices,
    load_pings,
    load_places,
)
from .radiusscan import DifferentialCurve, daily_counts, device_day_min_distance, select_radius
from .shrink import GroupEstimate, adjust_region_tables, eb_adjust
from .spells import PlaceIndex, extract_spells, wait_times


@dataclass
class Inputs:
    pings: PingTable
    places: list
    blockgroups: dict
    calendar: StudyCalendar
    devices: Optional[pd.DataFrame] = None
    survey: Optional[pd.DataFrame] = None

    def __post_init__(self):
        self.index = PlaceIndex(self.places, self.calendar)
        self._masks = None

    @property
    def masks(self) -> HourMasks:
        if self._masks is None:
            self._masks = HourMasks(self.pings, np.unique(self.index.offset))
        return self._masks

    @property
    def window_days(self) -> list[str]:
        c = self.calendar
        return [d.isoformat() for d in (*c.pre_window, c.target_day, *c.post_window)]


def _scenario_calendar(data_dir) -> Optional[StudyCalendar]:
    from .synth import ScenarioConfig

    path = os.path.join(data_dir, "scenario.txt")
    return ScenarioConfig.from_file(path).calendar() if os.path.exists(path) else None


def make_calendar(cfg: Mapping[str, str], places) -> StudyCalendar:
    try:
        target = dt.date.fromisoformat(cfg["calendar.target_day"])
    except ValueError:
        raise ConfigInvalid(f"bad calendar.target_day {cfg['calendar.target_day']!r}") from None
    hours: dict = {}
    if cfg["calendar.utc_offsets"]:
        offsets = {}
        for pair in cfg["calendar.utc_offsets"].split(","):
            st, _, off = pair.partition(":")
            try:
                offsets[st.strip()] = float(off)
            except ValueError:
                raise ConfigInvalid(f"bad calendar.utc_offsets entry {pair!r}") from None
    else:
        sc = _scenario_calendar(cfg["data.dir"])
        offsets = dict(sc.utc_offsets) if sc else {}
        if sc:
            hours = {"open_hours": dict(sc.open_hours), "close_hours": dict(sc.close_hours)}
    missing = sorted({p.state for p in places} - set(offsets))
    if offsets and missing:
        raise ConfigInvalid(f"calendar.utc_offsets lacks states {missing}")
    return StudyCalendar.around(
        target, int(cfg["calendar.pre_days"]), int(cfg["calendar.post_days"]), utc_offsets=offsets, **hours
    )


def load_inputs(cfg: Mapping[str, str]) -> Inputs:
    d = cfg["data.dir"]
    bgs = load_blockgroups(os.path.join(d, "blockgroups.csv"))
    places = load_places(os.path.join(d, "places.csv"), os.path.join(d, "footprints.csv"), bgs)
    pings = load_pings(os.path.join(d, "pings.csv"))
    cal = make_calendar(cfg, places)
    dev_path = os.path.join(d, "devices.csv")
    survey_path = os.path.join(d, "survey.csv")
    return Inputs(
        pings,
        places,
        bgs,
        cal,
        load_devices(dev_path) if os.path.exists(dev_path) else None,
        load_survey(survey_path) if os.path.exists(survey_path) else None,
    )


def from_simulation(sim) -> Inputs:
    from .ingest import LoadReport

    n = len(sim.pings)
    return Inputs(
        PingTable(sim.pings, LoadReport(n, n, 0)), sim.places, sim.blockgroups, sim.calendar, sim.devices, sim.survey
    )


# ---------------------------------------------------------------- voter rows


def build_voter_rows(survivors: pd.DataFrame, inputs: Inputs, lam: float = 0.5) -> pd.DataFrame:
    """Join surviving spells to place, block-group and device attributes."""
    pl = pd.DataFrame(
        {
            "place_id": [p.place_id for p in inputs.places],
            "state": [p.state for p in inputs.places],
            "county": [p.county for p in inputs.places],
            "district": [p.district or "" for p in inputs.places],
            "block_group": [p.block_group for p in inputs.places],
            regress.VOLUME: [np.nan if p.registered_voters is None else p.registered_voters for p in inputs.places],
        }
    )
    bg = pd.DataFrame(
        [
            (b.id, b.frac_white, b.frac_black, b.frac_asian, b.frac_hispanic, b.frac_other,
             b.frac_poverty, b.population, b.pop_density)
            for b in inputs.blockgroups.values()
        ],
        columns=["block_group", "frac_white", "frac_black", "frac_asian", "frac_hispanic", "frac_other",
                 "frac_poverty", "population_k", "pop_density_k"],
    )
    rows = survivors[["device_id", "place_id", "day", "arrival_hour", "lower_min", "upper_min"]].copy()
    rows["wait_min"] = wait_times(survivors, lam) if len(survivors) else np.zeros(0)
    rows["over30"] = (rows["wait_min"] > 30).astype(int)
    rows = rows.merge(pl, on="place_id", how="left").merge(bg, on="block_group", how="left")
    if inputs.devices is not None:
        rows = rows.merge(inputs.devices, on="device_id", how="left")
    else:
        rows["android"] = np.nan
    return rows.sort_values("device_id", kind="mergesort").reset_index(drop=True)


# ---------------------------------------------------------------- stages


def radius_scan(
    inputs: Inputs, radii: Sequence[float], exclude_days: Sequence[str] = ()
) -> tuple[DifferentialCurve, pd.DataFrame]:
    """Target-day device counts by radius against the mean over the other window days.

    ``exclude_days`` (ISO dates) are dropped from the comparison days, e.g. a public holiday.
    """
    cal = inputs.calendar
    others = [d.isoformat() for d in (*cal.pre_window, *cal.post_window)]
    unknown = sorted(set(exclude_days) - set(others))
    if unknown:
        raise ConfigInvalid(f"radius.exclude_days not in the comparison window: {unknown}")
    others = [d for d in others if d not in set(exclude_days)]
    if not others:
        raise ConfigInvalid("radius.exclude_days removes every comparison day")
    md = device_day_min_distance(inputs.pings, inputs.index, max(radii))
    counts = daily_counts(md, list(radii), inputs.window_days)
    tgt = counts.loc[cal.target_day.isoformat()]
    curve = DifferentialCurve(
        tuple(float(r) for r in radii),
        tuple(int(x) for x in tgt),
        tuple(float(x) for x in counts.loc[others].to_numpy(float).mean(axis=0)),
    )
    long = counts.reset_index(names="day").melt(id_vars="day", var_name="radius_m", value_name="devices")
    return curve, long.sort_values(["day", "radius_m"], kind="mergesort").reset_index(drop=True)


@dataclass
class CoreResult:
    radius_m: float
    spells: pd.DataFrame
    survivors: pd.DataFrame
    attrition: pd.DataFrame
    rows: pd.DataFrame
    extras: dict = field(default_factory=dict)


def window_spells(inputs: Inputs, radius_m: float) -> pd.DataFrame:
    sp = extract_spells(inputs.pings, inputs.index, radius_m)
    return sp[sp["day"].isin(inputs.window_days)].reset_index(drop=True)


def run_core(inputs: Inputs, radius_m: float, fcfg: FilterConfig, lam: float = 0.5, spells=None) -> CoreResult:
    sp = window_spells(inputs, radius_m) if spells is None else spells
    surv, rep = apply_filters(sp, inputs.masks, fcfg, inputs.calendar, inputs.index)
    return CoreResult(radius_m, sp, surv, rep.to_frame(), build_voter_rows(surv, inputs, lam))


def ladder(rows: pd.DataFrame, panel: str = "A") -> list[regress.FitResult]:
    return [regress.disparity_table(rows, f"col{k}", panel) for k in range(1, 7)]


def ladder_frame(rows: pd.DataFrame) -> pd.DataFrame:
    variants = [f"col{k}" for k in range(1, 7)]
    parts = []
    for panel in ("A", "B"):
        t = regress.results_table(ladder(rows, panel), regress.ladder_flags(variants))
        t.insert(0, "panel", panel)
        parts.append(t)
    return pd.concat(parts, ignore_index=True)


def _col1_row(label: str, kind: str, rows: pd.DataFrame) -> dict:
    try:
        r = regress.disparity_table(rows, "col1", "A")
        return {"panel": kind, "variant": label, "coef": r.coef["frac_black"], "se": r.se["frac_black"],
                "n": r.n, "depvar_mean": r.depvar_mean}
    except (PollWaitError, ValueError):
        return {"panel": kind, "variant": label, "coef": np.nan, "se": np.nan, "n": len(rows),
                "depvar_mean": np.nan}


def robustness(inputs: Inputs, core: CoreResult, fcfg: FilterConfig, lambdas, radii) -> pd.DataFrame:
    """Bound split, reasonable-values and radius variants of the col1 fit."""
    out = []
    for lam in lambdas:
        rows = build_voter_rows(core.survivors, inputs, lam)
        out.append(_col1_row(f"lambda={lam:g}", "bound_split", rows))
    for name in [f"RV{k}" for k in range(1, 11)]:
        rv = FilterConfig.reasonable_values(name, **_without(fcfg, "max_upper_min", "min_upper_floor"))
        surv, _ = apply_filters(core.spells, inputs.masks, rv, inputs.calendar, inputs.index)
        out.append(_col1_row(name, "reasonable_values", build_voter_rows(surv, inputs)))
    for r in radii:
        c = core if float(r) == core.radius_m else run_core(inputs, float(r), fcfg)
        out.append(_col1_row(f"radius={r:g}", "radius", c.rows))
    return pd.DataFrame(out)


def _without(fcfg: FilterConfig, *names) -> dict:
    d = {f: getattr(fcfg, f) for f in fcfg.__dataclass_fields__}
    for n in names:
        d.pop(n)
    return d


def placebo(inputs: Inputs, core: CoreResult, fcfg: FilterConfig) -> pd.DataFrame:
    """The col1 fit on every non-target day of the window, with the target day for reference."""
    cal = inputs.calendar
    out = []
    for day in (*cal.pre_window, cal.target_day, *cal.post_window):
        if day == cal.target_day:
            surv = core.survivors
        else:
            surv, _ = placebo_sample(day, core.spells, inputs.masks, fcfg, cal, inputs.index)
        rows = build_voter_rows(surv, inputs)
        r = _col1_row(day.isoformat(), "placebo", rows)
        out.append(
            {
                "day": day.isoformat(),
                "is_target": int(day == cal.target_day),
                "survivors": len(surv),
                "coef": r["coef"],
                "se": r["se"],
                "mean_wait": float(rows["wait_min"].mean()) if len(rows) else np.nan,
            }
        )
    return pd.DataFrame(out)


def daily_devices(inputs: Inputs, radius_m: float) -> pd.DataFrame:
    md = device_day_min_distance(inputs.pings, inputs.index, radius_m)
    counts = daily_counts(md, [radius_m], inputs.window_days)
    return pd.DataFrame({"day": counts.index, "devices": counts.iloc[:, 0].to_numpy(int)})


def regions(rows: pd.DataFrame, region: str, min_n: int) -> pd.DataFrame:
    eff = regress.region_effects(rows[rows[region].astype(str) != ""], region, min_n)
    return adjust_region_tables(eff, min_n)


DECILE_FIELDS = ("frac_black", "frac_hispanic", "frac_asian", "frac_other", "frac_white", "frac_poverty")


def density_outputs(rows: pd.DataFrame, calendar: StudyCalendar, half_width: float, bin_width: float):
    grid = np.round(np.arange(-half_width, 120 + half_width + 1e-9, 0.1), 10)
    parts = [dens.kde(rows["wait_min"], half_width, grid).assign(group="all")]
    for f in DECILE_FIELDS:
        try:
            lo, hi = dens.decile_split(rows, f)
        except DegenerateField:
            continue
        for tag, part in (("d1", lo), ("d10", hi)):
            parts.append(dens.kde(part["wait_min"], half_width, grid).assign(group=f"{f}_{tag}"))
    density = pd.concat(parts, ignore_index=True)
    hourly = [dens.hourly_profile(rows)]
    if calendar.open_hours:
        opens = rows["state"].map(lambda s: f"open_{calendar.open_hours.get(s, 0):02d}")
        hourly.append(dens.hourly_profile(rows.assign(open_group=opens), "open_group"))
    hourly = pd.concat(hourly, ignore_index=True)
    hist = dens.histogram(rows["wait_min"], bin_width)
    shares = {"share_over30": dens.share_over(rows)}
    try:
        lo, hi = dens.decile_split(rows, "frac_black")
        shares["share_over30_fb_d1"] = dens.share_over(lo)
        shares["share_over30_fb_d10"] = dens.share_over(hi)
    except DegenerateField:
        pass
    return density, hourly, hist, shares


def cces_compare(pipeline_regions: pd.DataFrame, survey: pd.DataFrame) -> tuple[pd.DataFrame, float]:
    """EB-adjusted survey state means against the pipeline's adjusted state means."""
    sm = survey_region_means(survey)
    ok = (sm["n"] >= 2) & (sm["sd"] > 0)
    eb = eb_adjust([GroupEstimate(r, m, s / np.sqrt(n), n) for r, m, s, n in
                    zip(sm["region"][ok], sm["mean"][ok], sm["sd"][ok], sm["n"][ok])])
    sm["survey_adjusted"] = sm["region"].map(eb.adjusted)
    pipe = dict(zip(pipeline_regions["region"], pipeline_regions["adjusted_mean"]))
    sm["pipeline_adjusted"] = sm["region"].map(pipe)
    try:
        r = correlate_regions(pipe, dict(zip(sm["region"], sm["survey_adjusted"])))
    except InsufficientOverlap:
        # e.g. every region shrunk onto the grand mean
        r = float("nan")
    out = sm.rename(columns={"mean": "survey_raw"})[
        ["region", "n", "survey_raw", "survey_adjusted", "pipeline_adjusted"]
    ]
    return out, r


def require_rows(rows: pd.DataFrame) -> None:
    if rows.empty:
        raise EmptyInput("no likely voters survived the filter chain")
